use std::io::Read;
use std::path::Path;

use crate::linalg::Matrix;
use crate::objectives::ObjectiveError;

/// Dense features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self, ObjectiveError> {
        if features.rows() != labels.len() {
            return Err(ObjectiveError::Dataset(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Reads a CSV with a header row, float feature columns and an integer
    /// label in the last column.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, ObjectiveError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self, ObjectiveError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(ObjectiveError::Dataset(
                "need at least one feature column and a label column".into(),
            ));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            if record.len() != width {
                return Err(ObjectiveError::Dataset(format!(
                    "line {line}: expected {width} fields, found {}",
                    record.len()
                )));
            }
            for (j, field) in record.iter().take(width - 1).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    ObjectiveError::Dataset(format!(
                        "line {line}, column {}: bad number {field:?}",
                        j + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(ObjectiveError::Dataset(format!(
                        "line {line}, column {}: non-finite value",
                        j + 1
                    )));
                }
                data.push(v);
            }
            let raw = record[width - 1].trim();
            let label: usize = raw.parse().map_err(|_| {
                ObjectiveError::Dataset(format!(
                    "line {line}: label {raw:?} is not a non-negative integer"
                ))
            })?;
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(ObjectiveError::Dataset("no data rows".into()));
        }
        let features = Matrix::from_row_major(labels.len(), width - 1, data)?;
        Self::new(features, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_features_and_label() {
        let text = "a,b,label\n1.0,2.5,0\n-3,4e-1,1\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.n_samples(), 2);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.labels, vec![0, 1]);
        assert_eq!(d.features.get(1, 1), 0.4);
        assert_eq!(d.n_classes(), 2);
    }

    #[test]
    fn reports_line_of_bad_field() {
        let text = "a,label\n1.0,0\nx,1\n";
        let err = Dataset::from_csv_reader(text.as_bytes())
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        let text = "a,label\n1.0,0.5\n";
        assert!(Dataset::from_csv_reader(text.as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("a,label\n".as_bytes()).is_err());
    }
}
