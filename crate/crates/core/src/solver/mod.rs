//! A second-order cone solver: homogeneous self-dual interior-point method
//! with Nesterov–Todd scaling, Mehrotra predictor-corrector steps, and a
//! regularized sparse quasi-definite LDL^T kernel.
//!
//! Solves   minimize    c'x + offset
//!          subject to  A x = b,   x in Free^f x Nonneg^p x SOC(d1) x ...
//!
//! and reports either an optimal primal-dual pair, a certificate of primal
//! or dual infeasibility, or an honest failure status.

mod cones;
mod ipm;
mod ldl;
mod order;
mod sparse;

use crate::conic::{ConeSeg, ConicProblem};
use cones::Cones;
use sparse::{dot, norm_inf, Csc};

/// Solver tolerances and iteration controls.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Relative primal/dual feasibility tolerance (also used for
    /// infeasibility certificates).
    pub tol_feas: f64,
    pub max_iters: usize,
    /// Static diagonal regularization added to the KKT matrix, signed by
    /// the expected inertia.
    pub static_reg: f64,
    /// Floor for dynamically bumped pivots during factorization.
    pub dyn_reg: f64,
    /// Iterative-refinement rounds per KKT solve.
    pub refine_steps: usize,
    /// Per-iteration progress lines on stderr.
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iters: 100,
            static_reg: 1e-9,
            dyn_reg: 1e-13,
            refine_steps: 2,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    /// Converged to the requested tolerances; `x`, `y`, `s` are the optimum.
    Optimal,
    /// The equalities and cone constraints admit no point. `y`, `s` hold a
    /// Farkas certificate normalized to b'y = 1.
    PrimalInfeasible,
    /// The objective is unbounded below (dual has no feasible point). `x`
    /// holds an improving ray normalized to c'x = -1.
    DualInfeasible,
    /// Ran out of iterations; `x`, `y`, `s` hold the best iterate.
    IterationLimit,
    /// The linear algebra broke down before reaching a verdict.
    NumericalFailure,
}

/// Scaled residual norms of the returned point (meaningful for `Optimal`
/// and `IterationLimit`).
#[derive(Debug, Clone, Copy)]
pub struct Residuals {
    /// max |Ax - b| / (1 + max|b|)
    pub primal: f64,
    /// max |A'y + s - c| / (1 + max|c|)
    pub dual: f64,
    /// |c'x - b'y| / (1 + |c'x| + |b'y|)
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    /// c'x + offset; NaN for infeasibility certificates.
    pub objective: f64,
    pub iters: usize,
    pub residuals: Residuals,
}

/// Column kind, flattened from the cone segments.
#[derive(Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Free,
    Nonneg,
    Soc,
}

pub fn solve(prob: &ConicProblem, cfg: &SolverConfig) -> SolverResult {
    prob.check().expect("malformed conic problem");
    let n = prob.n_vars();
    let m = prob.n_rows();

    let mut kind = Vec::with_capacity(n);
    for seg in &prob.segments {
        let k = match seg {
            ConeSeg::Free(_) => ColKind::Free,
            ConeSeg::Nonneg(_) => ColKind::Nonneg,
            ConeSeg::SecondOrder(_) => ColKind::Soc,
        };
        kind.extend(std::iter::repeat(k).take(seg.dim()));
    }

    let mut row_nnz = vec![0usize; m];
    let mut col_nnz = vec![0usize; n];
    for &(r, c, _) in &prob.equalities.entries {
        row_nnz[r] += 1;
        col_nnz[c] += 1;
    }

    // --- presolve: structurally empty rows and free/nonneg columns --------
    let mut keep_row = vec![true; m];
    for r in 0..m {
        if row_nnz[r] == 0 {
            if prob.rhs[r] != 0.0 {
                // 0 = rhs is unsatisfiable; y = e_r / rhs is a certificate.
                let mut y = vec![0.0; m];
                y[r] = 1.0 / prob.rhs[r];
                return certificate_result(prob, SolverStatus::PrimalInfeasible, vec![0.0; n], y, vec![0.0; n]);
            }
            keep_row[r] = false;
        }
    }
    let mut keep_col = vec![true; n];
    let mut dropped_s = vec![0.0; n];
    for j in 0..n {
        if col_nnz[j] > 0 || kind[j] == ColKind::Soc {
            continue;
        }
        let cj = prob.objective[j];
        match kind[j] {
            ColKind::Free if cj != 0.0 => {
                // Moving along +-e_j changes the objective without touching
                // any constraint: unbounded ray.
                let mut x = vec![0.0; n];
                x[j] = -1.0 / cj;
                return certificate_result(prob, SolverStatus::DualInfeasible, x, vec![0.0; m], vec![0.0; n]);
            }
            ColKind::Nonneg if cj < 0.0 => {
                let mut x = vec![0.0; n];
                x[j] = -1.0 / cj;
                return certificate_result(prob, SolverStatus::DualInfeasible, x, vec![0.0; m], vec![0.0; n]);
            }
            _ => {
                // Fix x_j = 0; the dual slack absorbs the cost coefficient.
                keep_col[j] = false;
                dropped_s[j] = cj;
            }
        }
    }

    let row_map: Vec<Option<usize>> = scan_map(&keep_row);
    let col_map: Vec<Option<usize>> = scan_map(&keep_col);
    let kept_rows: Vec<usize> = (0..m).filter(|&r| keep_row[r]).collect();
    let kept_cols: Vec<usize> = (0..n).filter(|&c| keep_col[c]).collect();
    let nr = kept_rows.len();
    let nc = kept_cols.len();

    let mut segments = Vec::with_capacity(prob.segments.len());
    {
        let mut at = 0usize;
        for seg in &prob.segments {
            let kept = (at..at + seg.dim()).filter(|&c| keep_col[c]).count();
            at += seg.dim();
            if kept == 0 {
                continue;
            }
            segments.push(match seg {
                ConeSeg::Free(_) => ConeSeg::Free(kept),
                ConeSeg::Nonneg(_) => ConeSeg::Nonneg(kept),
                ConeSeg::SecondOrder(d) => ConeSeg::SecondOrder(*d),
            });
        }
    }

    let a = Csc::from_triplets(
        nr,
        nc,
        prob.equalities.entries.iter().map(|&(r, c, v)| (row_map[r].unwrap(), col_map[c].unwrap(), v)),
    );
    let b: Vec<f64> = kept_rows.iter().map(|&r| prob.rhs[r]).collect();
    let c: Vec<f64> = kept_cols.iter().map(|&j| prob.objective[j]).collect();
    let cones = Cones::new(&segments);

    let raw = ipm::run(&a, &b, &c, &cones, cfg);

    // --- expand back to the original index space --------------------------
    let is_cert = matches!(
        raw.status,
        SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible
    );
    let mut x = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; m];
    for (rj, &j) in kept_cols.iter().enumerate() {
        x[j] = raw.x[rj];
        s[j] = raw.s[rj];
    }
    if !is_cert {
        for j in 0..n {
            if !keep_col[j] {
                s[j] = dropped_s[j];
            }
        }
    }
    for (rr, &r) in kept_rows.iter().enumerate() {
        y[r] = raw.y[rr];
    }

    let objective = if is_cert {
        f64::NAN
    } else {
        dot(&prob.objective, &x) + prob.offset
    };
    SolverResult {
        status: raw.status,
        residuals: compute_residuals(prob, &x, &y, &s),
        x,
        y,
        s,
        objective,
        iters: raw.iters,
    }
}

fn scan_map(keep: &[bool]) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(keep.len());
    let mut at = 0usize;
    for &k in keep {
        if k {
            out.push(Some(at));
            at += 1;
        } else {
            out.push(None);
        }
    }
    out
}

fn certificate_result(
    prob: &ConicProblem,
    status: SolverStatus,
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
) -> SolverResult {
    SolverResult {
        status,
        residuals: compute_residuals(prob, &x, &y, &s),
        x,
        y,
        s,
        objective: f64::NAN,
        iters: 0,
    }
}

/// Residuals of an (x, y, s) triple against the original problem data.
fn compute_residuals(prob: &ConicProblem, x: &[f64], y: &[f64], s: &[f64]) -> Residuals {
    let n = prob.n_vars();
    let m = prob.n_rows();
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    for &(r, c, v) in &prob.equalities.entries {
        ax[r] += v * x[c];
        aty[c] += v * y[r];
    }
    let mut pr: f64 = 0.0;
    for r in 0..m {
        pr = pr.max((ax[r] - prob.rhs[r]).abs());
    }
    let mut dr: f64 = 0.0;
    for j in 0..n {
        dr = dr.max((aty[j] + s[j] - prob.objective[j]).abs());
    }
    let pobj = dot(&prob.objective, x);
    let dobj = dot(&prob.rhs, y);
    Residuals {
        primal: pr / (1.0 + norm_inf(&prob.rhs)),
        dual: dr / (1.0 + norm_inf(&prob.objective)),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
    }
}
