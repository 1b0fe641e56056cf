//! Sparse LDL^T factorization of symmetric quasi-definite KKT matrices.
//!
//! The matrix is permuted once by a fill-reducing minimum-degree order, the
//! elimination tree and column counts are computed once, and each iteration
//! only refreshes numeric values and refactors. No pivoting: quasi-definite
//! matrices admit a signed LDL^T for any symmetric permutation, enforced here
//! by static regularization added to the diagonal up front plus dynamic
//! bumps whenever a pivot loses its expected sign. Solves finish with
//! iterative refinement against the unregularized matrix.

use super::order::min_degree_order;
use super::sparse::{norm_inf, Csc};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FactorError {
    #[error("pivot {0} is not finite")]
    BadPivot(usize),
}

/// A reusable factorization workspace for one KKT sparsity pattern.
pub struct QdKkt {
    n: usize,
    perm: Vec<usize>,
    /// Permuted upper-triangular pattern with current (unregularized) values.
    up: Csc,
    /// Caller entry k lands at `up.vals[pos[k]]`.
    pos: Vec<usize>,
    /// Position of each column's diagonal entry in `up.vals`.
    diag_pos: Vec<usize>,
    /// Expected pivot sign per permuted column (+1.0 or -1.0).
    sign: Vec<f64>,
    parent: Vec<isize>,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_vals: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    work_vals: Vec<f64>,
    // Numeric factorization scratch.
    y_vals: Vec<f64>,
    y_marker: Vec<bool>,
    y_idx: Vec<usize>,
    elim: Vec<usize>,
    l_next: Vec<usize>,
    // Solve scratch.
    sol: Vec<f64>,
    resid: Vec<f64>,
    corr: Vec<f64>,
}

impl QdKkt {
    /// `entries` are the upper-triangular coordinates (i <= j) of the KKT
    /// matrix, unique; `sign[i]` is the expected inertia sign of row/col `i`
    /// in the original indexing. Missing diagonal entries are added as
    /// structural zeros.
    pub fn new(n: usize, entries: &[(usize, usize)], sign: &[f64]) -> Self {
        assert_eq!(sign.len(), n);
        let strict: Vec<(usize, usize)> = entries
            .iter()
            .copied()
            .filter(|&(i, j)| i != j)
            .collect();
        let perm = min_degree_order(n, &strict);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Permuted coordinates, tagged with the caller's entry index.
        let mut tagged: Vec<(usize, usize, usize)> = Vec::with_capacity(entries.len() + n);
        let mut have_diag = vec![false; n];
        for (k, &(i, j)) in entries.iter().enumerate() {
            debug_assert!(i <= j && j < n);
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            if r == c {
                have_diag[r] = true;
            }
            tagged.push((r, c, k));
        }
        let missing = usize::MAX;
        for (d, have) in have_diag.iter().enumerate() {
            if !have {
                tagged.push((d, d, missing));
            }
        }
        tagged.sort_by_key(|&(r, c, _)| (c, r));
        for w in tagged.windows(2) {
            assert!(
                (w[0].0, w[0].1) != (w[1].0, w[1].1),
                "duplicate KKT entry ({}, {})",
                w[0].0,
                w[0].1
            );
        }

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(tagged.len());
        let mut pos = vec![0usize; entries.len()];
        let mut diag_pos = vec![usize::MAX; n];
        for (slot, &(r, c, tag)) in tagged.iter().enumerate() {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            if tag != missing {
                pos[tag] = slot;
            }
            if r == c {
                diag_pos[c] = slot;
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let nnz = row_idx.len();
        let up = Csc {
            nrows: n,
            ncols: n,
            col_ptr,
            row_idx,
            vals: vec![0.0; nnz],
        };

        let psign: Vec<f64> = perm.iter().map(|&p| sign[p]).collect();

        // Elimination tree via ancestor path compression, then exact column
        // counts of L with a marker sweep over the same row subtrees.
        let mut parent = vec![-1isize; n];
        let mut ancestor = vec![-1isize; n];
        for k in 0..n {
            for e in up.col_ptr[k]..up.col_ptr[k + 1] {
                let mut i = up.row_idx[e];
                while i != k && ancestor[i] >= 0 && ancestor[i] as usize != k {
                    let next = ancestor[i] as usize;
                    ancestor[i] = k as isize;
                    i = next;
                }
                if i != k && ancestor[i] < 0 {
                    ancestor[i] = k as isize;
                    parent[i] = k as isize;
                }
            }
        }
        let mut l_count = vec![0usize; n];
        let mut mark = vec![usize::MAX; n];
        for k in 0..n {
            mark[k] = k;
            for e in up.col_ptr[k]..up.col_ptr[k + 1] {
                let mut i = up.row_idx[e];
                while i != k && mark[i] != k {
                    mark[i] = k;
                    l_count[i] += 1;
                    i = if parent[i] < 0 { k } else { parent[i] as usize };
                }
            }
        }

        let mut l_colptr = vec![0usize; n + 1];
        for c in 0..n {
            l_colptr[c + 1] = l_colptr[c] + l_count[c];
        }
        let lnnz = l_colptr[n];

        QdKkt {
            n,
            perm,
            up,
            pos,
            diag_pos,
            sign: psign,
            parent,
            l_colptr,
            l_rowidx: vec![0; lnnz],
            l_vals: vec![0.0; lnnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            work_vals: vec![0.0; nnz],
            y_vals: vec![0.0; n],
            y_marker: vec![false; n],
            y_idx: vec![0; n],
            elim: vec![0; n],
            l_next: vec![0; n],
            sol: vec![0.0; n],
            resid: vec![0.0; n],
            corr: vec![0.0; n],
        }
    }

    /// Installs the numeric values for the caller's entry list.
    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.pos.len());
        self.up.vals.fill(0.0);
        for (k, &v) in values.iter().enumerate() {
            self.up.vals[self.pos[k]] = v;
        }
    }

    /// Numeric factorization with regularization. Returns the number of
    /// dynamically bumped pivots.
    pub fn factor(&mut self, static_reg: f64, dyn_reg: f64) -> Result<usize, FactorError> {
        let n = self.n;
        self.work_vals.copy_from_slice(&self.up.vals);
        for c in 0..n {
            self.work_vals[self.diag_pos[c]] += self.sign[c] * static_reg;
        }
        self.l_next.copy_from_slice(&self.l_colptr[..n]);
        let mut bumps = 0usize;
        for k in 0..n {
            // Gather column k and its elimination pattern.
            let mut nnz_y = 0usize;
            let mut dk = 0.0;
            for e in self.up.col_ptr[k]..self.up.col_ptr[k + 1] {
                let i = self.up.row_idx[e];
                let v = self.work_vals[e];
                if i == k {
                    dk = v;
                    continue;
                }
                self.y_vals[i] = v;
                let mut node = i;
                let mut elim_len = 0usize;
                while !self.y_marker[node] {
                    self.y_marker[node] = true;
                    self.elim[elim_len] = node;
                    elim_len += 1;
                    let p = self.parent[node];
                    if p < 0 || p as usize >= k {
                        break;
                    }
                    node = p as usize;
                }
                while elim_len > 0 {
                    elim_len -= 1;
                    self.y_idx[nnz_y] = self.elim[elim_len];
                    nnz_y += 1;
                }
            }
            // Process in reverse push order: descendants late, so each
            // column's y value is final when consumed.
            for t in (0..nnz_y).rev() {
                let c = self.y_idx[t];
                let yc = self.y_vals[c];
                let stop = self.l_next[c];
                for e in self.l_colptr[c]..stop {
                    self.y_vals[self.l_rowidx[e]] -= self.l_vals[e] * yc;
                }
                let l_kc = yc * self.dinv[c];
                self.l_rowidx[stop] = k;
                self.l_vals[stop] = l_kc;
                self.l_next[c] = stop + 1;
                dk -= yc * l_kc;
                self.y_vals[c] = 0.0;
                self.y_marker[c] = false;
            }
            if !dk.is_finite() {
                return Err(FactorError::BadPivot(k));
            }
            let s = self.sign[k];
            if s * dk < dyn_reg {
                // Wrong sign or dangerously small: bump to the signed floor.
                dk = s * dyn_reg.max(dk.abs());
                bumps += 1;
            }
            self.d[k] = dk;
            self.dinv[k] = 1.0 / dk;
        }
        Ok(bumps)
    }

    fn raw_solve(&self, b: &mut [f64]) {
        let n = self.n;
        for c in 0..n {
            let xc = b[c];
            if xc != 0.0 {
                for e in self.l_colptr[c]..self.l_colptr[c + 1] {
                    b[self.l_rowidx[e]] -= self.l_vals[e] * xc;
                }
            }
        }
        for c in 0..n {
            b[c] *= self.dinv[c];
        }
        for c in (0..n).rev() {
            let mut acc = b[c];
            for e in self.l_colptr[c]..self.l_colptr[c + 1] {
                acc -= self.l_vals[e] * b[self.l_rowidx[e]];
            }
            b[c] = acc;
        }
    }

    /// Solves `K x = rhs` (original indexing) with `refine_steps` rounds of
    /// iterative refinement against the unregularized values.
    pub fn solve(&mut self, rhs: &mut [f64], refine_steps: usize) {
        let n = self.n;
        for k in 0..n {
            self.sol[k] = rhs[self.perm[k]];
        }
        let mut x = std::mem::take(&mut self.sol);
        let b: Vec<f64> = x.clone();
        self.raw_solve(&mut x);
        for _ in 0..refine_steps {
            self.resid.copy_from_slice(&b);
            let mut r = std::mem::take(&mut self.resid);
            // r = b - K x using the unregularized (permuted) values.
            neg_sym_upper_mul_acc(&self.up, &x, &mut r);
            if norm_inf(&r) <= 1e-14 * (1.0 + norm_inf(&b)) {
                self.resid = r;
                break;
            }
            self.corr.copy_from_slice(&r);
            let mut c = std::mem::take(&mut self.corr);
            self.raw_solve(&mut c);
            for k in 0..n {
                x[k] += c[k];
            }
            self.corr = c;
            self.resid = r;
        }
        for k in 0..n {
            rhs[self.perm[k]] = x[k];
        }
        self.sol = x;
    }
}

/// y -= M x for symmetric M stored as its upper triangle.
fn neg_sym_upper_mul_acc(m: &Csc, x: &[f64], y: &mut [f64]) {
    for c in 0..m.ncols {
        for k in m.col_ptr[c]..m.col_ptr[c + 1] {
            let r = m.row_idx[k];
            let v = m.vals[k];
            y[r] -= v * x[c];
            if r != c {
                y[c] -= v * x[r];
            }
        }
    }
}
