//! Compressed-sparse-row adjacency structure.
//!
//! The full graph is square (`num_rows == num_cols == N`). Row blocks taken
//! for per-worker shards keep the full column space, so the same kernels run
//! on both: a pattern is `num_rows x num_cols` with `row_ptr` over rows and
//! `col_idx` in `[0, num_cols)`.

use crate::error::{Error, Result};

/// Adjacency pattern in canonical CSR form: `row_ptr` nondecreasing with
/// `row_ptr[0] = 0` and `row_ptr[num_rows] = num_edges`, and column indices
/// strictly increasing within each row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrGraph {
    num_rows: usize,
    num_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl CsrGraph {
    /// Square graph from a directed edge list. Edges are canonicalized
    /// (sorted within each row); duplicates are rejected.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        for &(src, dst) in edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({src}, {dst}) outside node range [0, {num_nodes})"
                )));
            }
        }
        let mut row_ptr = vec![0usize; num_nodes + 1];
        for &(src, _) in edges {
            row_ptr[src + 1] += 1;
        }
        for i in 0..num_nodes {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_idx = vec![0usize; edges.len()];
        let mut fill = row_ptr.clone();
        for &(src, dst) in edges {
            col_idx[fill[src]] = dst;
            fill[src] += 1;
        }
        for i in 0..num_nodes {
            col_idx[row_ptr[i]..row_ptr[i + 1]].sort_unstable();
        }
        for i in 0..num_nodes {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for w in row.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::Data(format!("duplicate edge ({i}, {})", w[0])));
                }
            }
        }
        Ok(Self { num_rows: num_nodes, num_cols: num_nodes, row_ptr, col_idx })
    }

    /// Assemble from raw canonical parts, validating every invariant.
    pub fn from_parts(
        num_rows: usize,
        num_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
    ) -> Result<Self> {
        if row_ptr.len() != num_rows + 1 || row_ptr[0] != 0 || row_ptr[num_rows] != col_idx.len() {
            return Err(Error::Format("row_ptr does not frame col_idx".into()));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("row_ptr not nondecreasing".into()));
        }
        if col_idx.iter().any(|&c| c >= num_cols) {
            return Err(Error::Format("col_idx out of range".into()));
        }
        for i in 0..num_rows {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("row {i} not strictly increasing")));
            }
        }
        Ok(Self { num_rows, num_cols, row_ptr, col_idx })
    }

    /// Node count of a square graph.
    ///
    /// Panics if called on a rectangular row block.
    pub fn num_nodes(&self) -> usize {
        assert_eq!(self.num_rows, self.num_cols, "num_nodes on a row block");
        self.num_rows
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn num_edges(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Column indices of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Edge positions `row_ptr[i]..row_ptr[i+1]` of row `i`.
    pub fn row_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Stored elements: one offset per row plus one index per edge.
    pub fn storage_elems(&self) -> usize {
        self.num_rows + self.col_idx.len()
    }

    /// Row block `[start, end)` keeping the full column space.
    pub fn row_block(&self, start: usize, end: usize) -> Self {
        let base = self.row_ptr[start];
        let row_ptr = self.row_ptr[start..=end].iter().map(|&p| p - base).collect();
        let col_idx = self.col_idx[base..self.row_ptr[end]].to_vec();
        Self { num_rows: end - start, num_cols: self.num_cols, row_ptr, col_idx }
    }

    /// Transposed pattern plus the edge permutation: entry `e` of `self`
    /// lands at position `perm[e]` of the transpose.
    ///
    /// The permutation is stable: within each transposed row the original row
    /// indices appear in ascending order, which also keeps the result
    /// canonical.
    pub fn transpose(&self) -> (Self, Vec<usize>) {
        let mut row_ptr = vec![0usize; self.num_cols + 1];
        for &c in &self.col_idx {
            row_ptr[c + 1] += 1;
        }
        for i in 0..self.num_cols {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_idx = vec![0usize; self.col_idx.len()];
        let mut perm = vec![0usize; self.col_idx.len()];
        let mut fill = row_ptr.clone();
        for i in 0..self.num_rows {
            for e in self.row_edges(i) {
                let c = self.col_idx[e];
                let pos = fill[c];
                col_idx[pos] = i;
                perm[e] = pos;
                fill[c] += 1;
            }
        }
        (
            Self { num_rows: self.num_cols, num_cols: self.num_rows, row_ptr, col_idx },
            perm,
        )
    }
}
