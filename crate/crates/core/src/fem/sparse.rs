//! Compressed-row symmetric stiffness storage with 3x3 node blocks.

/// CSR matrix over `3 * nodes` DOFs. The pattern is fixed at construction
/// from node adjacency; every row of node `i` stores the 3 columns of each
/// neighbour `j` (including `i`) in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Pattern from sorted node neighbour lists.
    pub(crate) fn from_node_adjacency(adjacency: &[Vec<usize>]) -> Self {
        let n = 3 * adjacency.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col = Vec::new();
        for nbrs in adjacency {
            for _ in 0..3 {
                for &j in nbrs {
                    col.extend_from_slice(&[3 * j, 3 * j + 1, 3 * j + 2]);
                }
                row_ptr.push(col.len());
            }
        }
        let val = vec![0.0; col.len()];
        CsrMatrix { n, row_ptr, col, val }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn clear(&mut self) {
        self.val.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.col[self.row_ptr[r]..self.row_ptr[r + 1]];
        match row.binary_search(&c) {
            Ok(p) => self.val[self.row_ptr[r] + p],
            Err(_) => 0.0,
        }
    }

    /// Position of `(r, c)` in `val`, if it is in the pattern.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let row = &self.col[self.row_ptr[r]..self.row_ptr[r + 1]];
        row.binary_search(&c).ok().map(|p| self.row_ptr[r] + p)
    }

    pub fn add_diagonal(&mut self, r: usize, v: f64) {
        let p = self.position(r, r).expect("diagonal is always in the pattern");
        self.val[p] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.val[p] * x[self.col[p]];
            }
            *yr = s;
        }
    }

    /// Zeros rows and columns of constrained DOFs and puts 1 on their diagonal.
    pub fn eliminate(&mut self, constrained: &[bool]) {
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[p];
                if constrained[r] || constrained[c] {
                    self.val[p] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_rc - A_cr|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[p];
                worst = worst.max((self.val[p] - self.get(c, r)).abs());
            }
        }
        worst
    }
}
