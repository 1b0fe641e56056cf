//! Compressed sparse column matrices sized for interior-point KKT work.

/// A CSC matrix. `col_ptr` has `ncols + 1` entries; row indices within each
/// column are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Csc {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csc {
    /// Builds from triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut es: Vec<(usize, usize, f64)> = entries.into_iter().collect();
        es.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(es.len());
        let mut vals: Vec<f64> = Vec::with_capacity(es.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &es {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((c, r)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((c, r));
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            vals.push(v);
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Csc {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            vals,
        }
    }

    #[cfg(test)]
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// y += A x
    pub fn mul_acc(&self, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.vals[k] * xc;
            }
        }
    }

    /// y += A' x
    pub fn mul_t_acc(&self, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let mut acc = 0.0;
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                acc += self.vals[k] * x[self.row_idx[k]];
            }
            y[c] += acc;
        }
    }

    /// y += M x for a symmetric matrix stored as its upper triangle.
    #[cfg(test)]
    pub fn sym_upper_mul_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.vals[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_round_trip_and_matvec() {
        // [[1, 0, 2], [0, 3, 0]]
        let a = Csc::from_triplets(2, 3, vec![(0, 0, 1.0), (1, 1, 3.0), (0, 2, 2.0)]);
        assert_eq!(a.nnz(), 3);
        let mut y = vec![0.0; 2];
        a.mul_acc(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 3.0]);
        let mut z = vec![0.0; 3];
        a.mul_t_acc(&[1.0, 2.0], &mut z);
        assert_eq!(z, vec![1.0, 6.0, 2.0]);
    }

    #[test]
    fn duplicate_triplets_sum() {
        let a = Csc::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.5), (1, 1, 1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.vals[0], 3.5);
    }

    #[test]
    fn symmetric_upper_matvec_expands_both_sides() {
        // Full matrix [[2, 1], [1, 4]] stored as upper.
        let m = Csc::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 1, 4.0)]);
        let mut y = vec![0.0; 2];
        m.sym_upper_mul_acc(&[1.0, 2.0], &mut y);
        assert_eq!(y, vec![4.0, 9.0]);
    }
}
