//! Row-compressed sparse matrices, built from triplets during assembly.

/// CSR matrix with summed duplicate entries.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &k in &order {
            let (r, c, v) = triplets[k];
            debug_assert!(r < n_rows && c < n_cols);
            if let (Some(&lc), true) = (col_idx.last(), row_ptr[r + 1] > 0) {
                if lc == c && col_idx.len() > row_ptr[r] && row_ptr[r + 1] == col_idx.len() {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] = col_idx.len();
        }
        // Rows without entries inherit the previous offset.
        for r in 1..=n_rows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            y[r] = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
        y
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().position(|&cc| cc == c).map_or(0.0, |p| vals[p])
    }

    pub fn has_empty_row(&self) -> bool {
        (0..self.n_rows).any(|r| {
            let (_, vals) = self.row(r);
            vals.iter().all(|v| *v == 0.0)
        })
    }

    /// Largest absolute entry difference against another matrix with the
    /// same dimensions (missing entries count as zero).
    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        assert_eq!(self.n_rows, other.n_rows);
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let a = ca.get(i).copied().unwrap_or(usize::MAX);
                let b = cb.get(j).copied().unwrap_or(usize::MAX);
                let d = if a == b {
                    let d = va[i] - vb[j];
                    i += 1;
                    j += 1;
                    d
                } else if a < b {
                    i += 1;
                    va[i - 1]
                } else {
                    j += 1;
                    -vb[j - 1]
                };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest |A - A^T| entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 1.0),
                (0, 0, 2.0),
                (2, 1, 4.0),
                (1, 2, -1.0),
                (2, 1, 1.0),
            ],
        );
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(2, 1), 5.0);
        assert_eq!(m.get(1, 2), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 3);
        assert!(!m.has_empty_row());
    }

    #[test]
    fn matvec_and_asymmetry() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]);
        assert_eq!(m.matvec(&[1.0, 2.0]), vec![4.0, 6.0]);
        assert_eq!(m.asymmetry(), 1.0);
        let empty = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]);
        assert!(empty.has_empty_row());
    }

    proptest::proptest! {
        #[test]
        fn matvec_matches_dense_accumulation(
            entries in proptest::collection::vec(
                (0usize..6, 0usize..6, -10.0f64..10.0), 0..40),
            x in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let m = CsrMatrix::from_triplets(6, 6, &entries);
            let mut dense = [[0.0f64; 6]; 6];
            for (r, c, v) in &entries {
                dense[*r][*c] += v;
            }
            let y = m.matvec(&x);
            for r in 0..6 {
                let expect: f64 = (0..6).map(|c| dense[r][c] * x[c]).sum();
                proptest::prop_assert!((y[r] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diff_handles_different_sparsity() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 0.5)]);
        assert_eq!(a.max_abs_diff(&b), 2.0);
    }
}
