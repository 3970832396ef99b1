//! Layer-wise parameter containers.

use crate::linalg::Matrix;

/// Whether a block is optimized by the configured matrix method or by the
/// plain ZO-SGD fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Matrix,
    Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub value: Matrix,
}

/// An ordered collection of named real matrix blocks.
///
/// Vector blocks (biases, input/output scalings) are stored as column
/// matrices and flagged [`BlockKind::Vector`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSpace {
    blocks: Vec<Block>,
}

/// Indices of the blocks in each optimization partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamPartition {
    pub matrix_blocks: Vec<usize>,
    pub vector_blocks: Vec<usize>,
}

impl ParamSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// A space holding one matrix block named `"x"`.
    pub fn single(value: Matrix) -> Self {
        Self::new().with_matrix("x", value)
    }

    pub fn with_matrix(mut self, name: impl Into<String>, value: Matrix) -> Self {
        self.push(name, BlockKind::Matrix, value);
        self
    }

    pub fn with_vector(mut self, name: impl Into<String>, value: Matrix) -> Self {
        self.push(name, BlockKind::Vector, value);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, kind: BlockKind, value: Matrix) {
        self.blocks.push(Block {
            name: name.into(),
            kind,
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> &Block {
        &self.blocks[index]
    }

    pub fn value(&self, index: usize) -> &Matrix {
        &self.blocks[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.blocks[index].value
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.value)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| b.value.shape()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn partition(&self) -> ParamPartition {
        let (matrix_blocks, vector_blocks) =
            (0..self.blocks.len()).partition(|&i| self.blocks[i].kind == BlockKind::Matrix);
        ParamPartition {
            matrix_blocks,
            vector_blocks,
        }
    }

    /// Same layout, all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    kind: b.kind,
                    value: Matrix::zeros(b.value.rows(), b.value.cols()),
                })
                .collect(),
        }
    }

    /// Same layout with new block values.
    ///
    /// # Panics
    /// If the number of values or any shape differs.
    pub fn with_values(&self, values: Vec<Matrix>) -> Self {
        assert_eq!(values.len(), self.blocks.len(), "block count mismatch");
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(values)
                .map(|(b, v)| {
                    assert_eq!(
                        b.value.shape(),
                        v.shape(),
                        "block {} shape mismatch",
                        b.name
                    );
                    Block {
                        name: b.name.clone(),
                        kind: b.kind,
                        value: v,
                    }
                })
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamSpace) -> bool {
        self.shapes() == other.shapes()
    }

    /// `self += alpha · other`, block by block.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSpace) {
        assert!(self.same_layout(other), "parameter layout mismatch");
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.value.axpy(alpha, &b.value);
        }
    }

    pub fn sub(&self, other: &ParamSpace) -> ParamSpace {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn dot(&self, other: &ParamSpace) -> f64 {
        assert!(self.same_layout(other), "parameter layout mismatch");
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.value.dot(&b.value))
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamSpace) -> f64 {
        assert!(self.same_layout(other), "parameter layout mismatch");
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }

    /// Flattened view of every coordinate, block by block in row-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.value.to_row_major())
            .collect()
    }

    /// Reads coordinate `index` of the flattened view.
    pub fn flat_get(&self, index: usize) -> f64 {
        let (b, r, c) = self.locate(index);
        self.blocks[b].value.get(r, c)
    }

    pub fn flat_set(&mut self, index: usize, value: f64) {
        let (b, r, c) = self.locate(index);
        self.blocks[b].value.set(r, c, value);
    }

    fn locate(&self, mut index: usize) -> (usize, usize, usize) {
        for (b, block) in self.blocks.iter().enumerate() {
            let n = block.value.len();
            if index < n {
                let cols = block.value.cols();
                return (b, index / cols, index % cols);
            }
            index -= n;
        }
        panic!("flat index out of range");
    }
}
