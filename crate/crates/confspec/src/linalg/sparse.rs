//! Compressed sparse row storage for the assembled quadratic forms.

/// Accumulator for finite-element assembly. Duplicate entries are summed
/// when the triplet list is compressed.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i as u32, j as u32, v));
    }

    pub fn into_csr(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let n = self.n;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0usize);
        let mut row = 0u32;
        for (i, j, v) in self.entries {
            while row < i {
                row_ptr.push(col_idx.len());
                row += 1;
            }
            if let (Some(&last_j), Some(last_v)) = (col_idx.last(), values.last_mut()) {
                if last_j == j && row_ptr.len() == (i as usize) + 1 {
                    *last_v += v;
                    continue;
                }
            }
            col_idx.push(j);
            values.push(v);
        }
        while row < n as u32 {
            row_ptr.push(col_idx.len());
            row += 1;
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }
}

/// Square sparse matrix in CSR form. Symmetry is the caller's contract;
/// both triangles are stored explicitly so `apply` is a plain row sweep.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x. Row-parallel above a size threshold; each entry is a
    /// fixed-order sum, so results do not depend on the thread count.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        let row = |i: usize| -> f64 {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            acc
        };
        if self.n >= 8192 {
            use rayon::prelude::*;
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn apply_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        y
    }

    /// Quadratic form x^T A x.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.values[k] * x[self.col_idx[k] as usize];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// Bilinear form x^T A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.values[k] * y[self.col_idx[k] as usize];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] as usize == j {
                return self.values[k];
            }
        }
        0.0
    }

    /// Restriction to the index set `keep` (rows and columns), preserving
    /// the order of `keep`. Used for Dirichlet problems on ball interiors.
    pub fn restrict(&self, keep: &[usize]) -> CsrMatrix {
        let mut remap = vec![u32::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new as u32;
        }
        let mut t = Triplets::with_capacity(keep.len(), self.nnz() / 2);
        for (new_i, &old_i) in keep.iter().enumerate() {
            for k in self.row_ptr[old_i]..self.row_ptr[old_i + 1] {
                let old_j = self.col_idx[k] as usize;
                if remap[old_j] != u32::MAX {
                    t.push(new_i, remap[old_j] as usize, self.values[k]);
                }
            }
        }
        t.into_csr()
    }

    /// diag(s) · A · diag(s) with the same sparsity. Used to form the
    /// mass-scaled operator D^{-1/2} K D^{-1/2} of the eigensolver.
    pub fn scaled_sym(&self, s: &[f64]) -> CsrMatrix {
        debug_assert_eq!(s.len(), self.n);
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] = self.values[k] * s[i] * s[self.col_idx[k] as usize];
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k] as usize)] = self.values[k];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let mut t = Triplets::new(3);
        t.push(0, 1, 1.0);
        t.push(0, 1, 2.0);
        t.push(2, 2, 5.0);
        let a = t.into_csr();
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(2, 2), 5.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn apply_matches_dense() {
        let mut t = Triplets::new(3);
        for i in 0..3 {
            t.push(i, i, 2.0);
        }
        t.push(0, 1, -1.0);
        t.push(1, 0, -1.0);
        t.push(1, 2, -1.0);
        t.push(2, 1, -1.0);
        let a = t.into_csr();
        let x = vec![1.0, 2.0, 3.0];
        let y = a.apply_alloc(&x);
        assert_eq!(y, vec![0.0, 0.0, 4.0]);
        // x . y with y as above
        assert_eq!(a.quad(&x), 12.0);
    }

    #[test]
    fn restrict_keeps_submatrix() {
        let mut t = Triplets::new(4);
        for i in 0..4 {
            t.push(i, i, i as f64 + 1.0);
        }
        t.push(0, 3, 7.0);
        t.push(3, 0, 7.0);
        let a = t.into_csr();
        let b = a.restrict(&[0, 3]);
        assert_eq!(b.n(), 2);
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(1, 1), 4.0);
        assert_eq!(b.get(0, 1), 7.0);
    }
}
