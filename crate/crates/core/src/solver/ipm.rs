//! Homogeneous self-dual interior-point iteration with Nesterov–Todd scaling
//! and a Mehrotra predictor-corrector step.
//!
//! The embedding tracks (x, y, s, tau, kappa) with residuals
//!   r_p = b*tau - A x,   r_d = c*tau - A'y - s,   r_g = kappa + c'x - b'y,
//! and drives x o s -> 0, tau*kappa -> 0. A solution with tau > 0 recovers
//! the optimum (x, y, s)/tau; tau -> 0 with kappa > 0 yields an infeasibility
//! certificate. Search directions come from two solves against one
//! quasi-definite KKT factorization per iteration:
//!   [ -H   A' ] [dx]   [rhs_x]          H = W^{-2} on cone columns,
//!   [  A   0  ] [dy] = [rhs_y]          0 on free columns.

use super::cones::{Cones, NtScaling};
use super::ldl::QdKkt;
use super::sparse::{dot, norm_inf, Csc};
use super::{SolverConfig, SolverStatus};

pub(crate) struct RawSolution {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub iters: usize,
}

/// One iteration's search direction.
struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

pub(crate) fn run(a: &Csc, b: &[f64], c: &[f64], cones: &Cones, cfg: &SolverConfig) -> RawSolution {
    let n = a.ncols;
    let m = a.nrows;
    debug_assert_eq!(b.len(), m);
    debug_assert_eq!(c.len(), n);
    debug_assert_eq!(cones.n(), n);

    // --- KKT skeleton: upper triangle of [[-H, A'], [A, reg]] ------------
    let mut entries: Vec<(usize, usize)> = Vec::new();
    let mut h_slots = 0usize;
    for r in cones.free_ranges().iter().chain(cones.nonneg_ranges()) {
        for i in r.clone() {
            entries.push((i, i));
            h_slots += 1;
        }
    }
    let mut max_soc = 0usize;
    for r in cones.soc_ranges() {
        let d = r.len();
        max_soc = max_soc.max(d);
        for ci in 0..d {
            for cj in ci..d {
                entries.push((r.start + ci, r.start + cj));
                h_slots += 1;
            }
        }
    }
    for col in 0..n {
        for k in a.col_ptr[col]..a.col_ptr[col + 1] {
            entries.push((col, n + a.row_idx[k]));
        }
    }
    for row in 0..m {
        entries.push((n + row, n + row));
    }
    let mut values = vec![0.0; entries.len()];
    {
        let mut k = h_slots;
        for col in 0..n {
            for e in a.col_ptr[col]..a.col_ptr[col + 1] {
                values[k] = a.vals[e];
                k += 1;
            }
        }
    }
    let mut sign = vec![-1.0; n];
    sign.extend(std::iter::repeat(1.0).take(m));
    let mut kkt = QdKkt::new(n + m, &entries, &sign);

    // --- state -----------------------------------------------------------
    let mut x = vec![0.0; n];
    let mut s = vec![0.0; n];
    cones.set_unit(&mut x);
    cones.set_unit(&mut s);
    let mut y = vec![0.0; m];
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;
    let degree = cones.degree();

    let norm_b = norm_inf(b);
    let norm_c = norm_inf(c);

    let mut scaling = NtScaling::identity(cones);
    let mut scratch_soc = vec![0.0; max_soc * max_soc];

    // Work vectors.
    let mut r_p = vec![0.0; m];
    let mut r_d = vec![0.0; n];
    let mut lam2 = vec![0.0; n];
    let mut d_c = vec![0.0; n];
    let mut w_hat = vec![0.0; n];
    let mut tmp_n = vec![0.0; n];
    let mut tmp_n2 = vec![0.0; n];
    let mut sol1 = vec![0.0; n + m];
    let mut sol2 = vec![0.0; n + m];
    let mut wdx = vec![0.0; n];
    let mut wds = vec![0.0; n];
    let mut corr = vec![0.0; n];

    let mut stall = 0usize;
    let mut iters = 0usize;

    for iter in 0..cfg.max_iters {
        iters = iter;

        // --- residuals and termination -----------------------------------
        r_p.iter_mut().zip(b).for_each(|(r, &bi)| *r = bi * tau);
        neg_mul_acc(a, &x, &mut r_p); // r_p = b*tau - A x
        r_d.iter_mut().zip(c).for_each(|(r, &ci)| *r = ci * tau);
        neg_mul_t_acc(a, &y, &mut r_d);
        r_d.iter_mut().zip(&s).for_each(|(r, &si)| *r -= si); // c*tau - A'y - s
        let cx = dot(c, &x);
        let by = dot(b, &y);
        let r_g = kappa + cx - by;
        let mu = (cones.cone_dot(&x, &s) + tau * kappa) / (degree + 1) as f64;

        let pobj = cx / tau;
        let dobj = by / tau;
        let pres = norm_inf(&r_p) / (tau * (1.0 + norm_b));
        let dres = norm_inf(&r_d) / (tau * (1.0 + norm_c));
        let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        if cfg.verbose {
            eprintln!(
                "it {iter:3}  pobj {pobj:+.8e}  dobj {dobj:+.8e}  gap {relgap:.3e}  \
                 pres {pres:.3e}  dres {dres:.3e}  mu {mu:.3e}  tau {tau:.3e}"
            );
        }

        if pres <= cfg.tol_feas && dres <= cfg.tol_feas && relgap <= cfg.tol_gap {
            scale_in_place(&mut x, 1.0 / tau);
            scale_in_place(&mut y, 1.0 / tau);
            scale_in_place(&mut s, 1.0 / tau);
            return finish(SolverStatus::Optimal, x, y, s, iter, cfg);
        }

        // --- infeasibility certificates -----------------------------------
        if by > 0.0 {
            let mut v = s.clone();
            a.mul_t_acc(&y, &mut v); // A'y + s
            if norm_inf(&v) * norm_b.max(1.0) / by <= cfg.tol_feas {
                scale_in_place(&mut y, 1.0 / by);
                scale_in_place(&mut s, 1.0 / by);
                x.iter_mut().for_each(|v| *v = 0.0);
                return finish(SolverStatus::PrimalInfeasible, x, y, s, iter, cfg);
            }
        }
        if cx < 0.0 {
            let mut v = vec![0.0; m];
            a.mul_acc(&x, &mut v);
            if norm_inf(&v) * norm_c.max(1.0) / (-cx) <= cfg.tol_feas && cones.in_cone(&x, 0.0) {
                scale_in_place(&mut x, -1.0 / cx);
                y.iter_mut().for_each(|v| *v = 0.0);
                s.iter_mut().for_each(|v| *v = 0.0);
                return finish(SolverStatus::DualInfeasible, x, y, s, iter, cfg);
            }
        }

        if mu <= 0.0 || !mu.is_finite() {
            return bail(x, y, s, tau, iter, cfg);
        }

        // --- NT scaling and factorization ---------------------------------
        if scaling.update(cones, &x, &s).is_err() {
            return bail(x, y, s, tau, iter, cfg);
        }
        refresh_h(&mut values[..h_slots], cones, &scaling, &mut scratch_soc);
        kkt.set_values(&values);
        let mut factored = false;
        let mut reg = cfg.static_reg;
        for _ in 0..3 {
            match kkt.factor(reg, cfg.dyn_reg) {
                Ok(_) => {
                    factored = true;
                    break;
                }
                Err(_) => reg *= 100.0,
            }
        }
        if !factored {
            return bail(x, y, s, tau, iter, cfg);
        }

        // --- constant solve: K [u2; v2] = [c; b] ---------------------------
        sol2[..n].copy_from_slice(c);
        sol2[n..].copy_from_slice(b);
        kkt.solve(&mut sol2, cfg.refine_steps);
        // c'u2 - b'v2 = -u2' H u2 identically; evaluate the quadratic form
        // -||W^{-1} u2||^2 so the sign survives regularization noise.
        scaling.mul_winv(cones, &sol2[..n], &mut tmp_n);
        let den = -cones.cone_dot(&tmp_n, &tmp_n) - kappa / tau;
        if !(den < 0.0) {
            if cfg.verbose {
                eprintln!("bail: tau-step denominator {den}");
            }
            return bail(x, y, s, tau, iter, cfg);
        }

        // --- affine (predictor) direction ----------------------------------
        cones.jordan_mul(scaling.lambda(), scaling.lambda(), &mut lam2);
        d_c.iter_mut().zip(&lam2).for_each(|(d, &l)| *d = -l);
        let d_tau = -tau * kappa;
        let aff = make_direction(
            DirectionInputs {
                a,
                b,
                c,
                cones,
                scaling: &scaling,
                kkt: &mut kkt,
                cfg,
                r_p: &r_p,
                r_d: &r_d,
                r_g,
                sigma: 0.0,
                d_c: &d_c,
                d_tau,
                tau,
                kappa,
                den,
                sol2: &sol2,
            },
            &mut sol1,
            &mut w_hat,
            &mut tmp_n,
            &mut tmp_n2,
        );

        let alpha_aff = max_step(cones, &x, &s, tau, kappa, &aff).min(1.0);
        let mu_aff = {
            let mut acc = 0.0;
            // (x + a dx)'(s + a ds) over cone coordinates plus tau/kappa term.
            for r in cones.nonneg_ranges().iter().chain(cones.soc_ranges()) {
                for i in r.clone() {
                    acc += (x[i] + alpha_aff * aff.dx[i]) * (s[i] + alpha_aff * aff.ds[i]);
                }
            }
            acc += (tau + alpha_aff * aff.dtau) * (kappa + alpha_aff * aff.dkappa);
            acc / (degree + 1) as f64
        };
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // --- combined (corrector) direction --------------------------------
        scaling.mul_winv(cones, &aff.dx, &mut wdx);
        scaling.mul_w(cones, &aff.ds, &mut wds);
        cones.jordan_mul(&wdx, &wds, &mut corr);
        let sm = sigma * mu;
        d_c.iter_mut()
            .zip(&lam2)
            .zip(&corr)
            .for_each(|((d, &l), &co)| *d = -l - co);
        // + sigma*mu*e: every nonnegative coordinate, SOC heads only.
        for r in cones.nonneg_ranges() {
            for i in r.clone() {
                d_c[i] += sm;
            }
        }
        for r in cones.soc_ranges() {
            d_c[r.start] += sm;
        }
        let d_tau = -tau * kappa + sm - aff.dtau * aff.dkappa;
        let dir = make_direction(
            DirectionInputs {
                a,
                b,
                c,
                cones,
                scaling: &scaling,
                kkt: &mut kkt,
                cfg,
                r_p: &r_p,
                r_d: &r_d,
                r_g,
                sigma,
                d_c: &d_c,
                d_tau,
                tau,
                kappa,
                den,
                sol2: &sol2,
            },
            &mut sol1,
            &mut w_hat,
            &mut tmp_n,
            &mut tmp_n2,
        );

        let alpha = (0.99 * max_step(cones, &x, &s, tau, kappa, &dir)).min(1.0);
        if alpha < 1e-7 {
            stall += 1;
            if stall >= 3 {
                return bail(x, y, s, tau, iter, cfg);
            }
        } else {
            stall = 0;
        }

        for i in 0..n {
            x[i] += alpha * dir.dx[i];
            s[i] += alpha * dir.ds[i];
        }
        for i in 0..m {
            y[i] += alpha * dir.dy[i];
        }
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
    }

    // Iteration limit: report the tau-scaled iterate as a best effort.
    if tau > 0.0 {
        scale_in_place(&mut x, 1.0 / tau);
        scale_in_place(&mut y, 1.0 / tau);
        scale_in_place(&mut s, 1.0 / tau);
    }
    finish(SolverStatus::IterationLimit, x, y, s, iters, cfg)
}

struct DirectionInputs<'a> {
    a: &'a Csc,
    b: &'a [f64],
    c: &'a [f64],
    cones: &'a Cones,
    scaling: &'a NtScaling,
    kkt: &'a mut QdKkt,
    cfg: &'a SolverConfig,
    r_p: &'a [f64],
    r_d: &'a [f64],
    r_g: f64,
    sigma: f64,
    d_c: &'a [f64],
    d_tau: f64,
    tau: f64,
    kappa: f64,
    den: f64,
    sol2: &'a [f64],
}

/// Solves for one direction given the complementarity targets (d_c, d_tau).
fn make_direction(
    inp: DirectionInputs<'_>,
    sol1: &mut [f64],
    w_hat: &mut [f64],
    tmp_n: &mut [f64],
    tmp_n2: &mut [f64],
) -> Direction {
    let n = inp.a.ncols;
    let m = inp.a.nrows;
    let one_minus_sigma = 1.0 - inp.sigma;

    // w_hat = W^{-1} (lambda \ d_c).
    inp.scaling.lambda_div(inp.cones, inp.d_c, tmp_n);
    inp.scaling.mul_winv(inp.cones, tmp_n, w_hat);

    // K [u1; v1] = [(1-sigma) r_d - w_hat; (1-sigma) r_p].
    for i in 0..n {
        sol1[i] = one_minus_sigma * inp.r_d[i] - w_hat[i];
    }
    for i in 0..m {
        sol1[n + i] = one_minus_sigma * inp.r_p[i];
    }
    inp.kkt.solve(sol1, inp.cfg.refine_steps);

    let num = -one_minus_sigma * inp.r_g - inp.d_tau / inp.tau - dot(inp.c, &sol1[..n])
        + dot(inp.b, &sol1[n..]);
    let dtau = num / inp.den;
    let dkappa = (inp.d_tau - inp.kappa * dtau) / inp.tau;

    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; m];
    for i in 0..n {
        dx[i] = sol1[i] + dtau * inp.sol2[i];
    }
    for i in 0..m {
        dy[i] = sol1[n + i] + dtau * inp.sol2[n + i];
    }

    // ds = w_hat - W^{-2} dx on cone coordinates, 0 on free coordinates.
    inp.scaling.mul_winv(inp.cones, &dx, tmp_n);
    inp.scaling.mul_winv(inp.cones, tmp_n, tmp_n2);
    let mut ds = vec![0.0; n];
    for r in inp.cones.nonneg_ranges().iter().chain(inp.cones.soc_ranges()) {
        for i in r.clone() {
            ds[i] = w_hat[i] - tmp_n2[i];
        }
    }

    Direction { dx, dy, ds, dtau, dkappa }
}

fn max_step(cones: &Cones, x: &[f64], s: &[f64], tau: f64, kappa: f64, d: &Direction) -> f64 {
    let mut a = cones.step_to_boundary(x, &d.dx);
    a = a.min(cones.step_to_boundary(s, &d.ds));
    if d.dtau < 0.0 {
        a = a.min(-tau / d.dtau);
    }
    if d.dkappa < 0.0 {
        a = a.min(-kappa / d.dkappa);
    }
    a
}

fn refresh_h(h: &mut [f64], cones: &Cones, scaling: &NtScaling, scratch: &mut [f64]) {
    let mut k = 0usize;
    for r in cones.free_ranges() {
        for _ in r.clone() {
            h[k] = 0.0;
            k += 1;
        }
    }
    for r in cones.nonneg_ranges() {
        for i in r.clone() {
            h[k] = -scaling.w2inv_nonneg(i);
            k += 1;
        }
    }
    for (bidx, r) in cones.soc_ranges().iter().enumerate() {
        let d = r.len();
        scaling.w2inv_soc_dense(bidx, &mut scratch[..d * d]);
        for ci in 0..d {
            for cj in ci..d {
                h[k] = -scratch[ci * d + cj];
                k += 1;
            }
        }
    }
    debug_assert_eq!(k, h.len());
}

fn finish(
    status: SolverStatus,
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    iter: usize,
    cfg: &SolverConfig,
) -> RawSolution {
    if cfg.verbose {
        eprintln!("status {status:?} after {} iterations", iter + 1);
    }
    RawSolution { status, x, y, s, iters: iter + 1 }
}

fn bail(
    mut x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    iter: usize,
    cfg: &SolverConfig,
) -> RawSolution {
    let mut y = y;
    let mut s = s;
    if tau > 0.0 {
        scale_in_place(&mut x, 1.0 / tau);
        scale_in_place(&mut y, 1.0 / tau);
        scale_in_place(&mut s, 1.0 / tau);
    }
    finish(SolverStatus::NumericalFailure, x, y, s, iter, cfg)
}

fn scale_in_place(v: &mut [f64], by: f64) {
    v.iter_mut().for_each(|x| *x *= by);
}

/// y -= A x.
fn neg_mul_acc(a: &Csc, x: &[f64], y: &mut [f64]) {
    for col in 0..a.ncols {
        let xv = x[col];
        if xv != 0.0 {
            for k in a.col_ptr[col]..a.col_ptr[col + 1] {
                y[a.row_idx[k]] -= a.vals[k] * xv;
            }
        }
    }
}

/// y -= A' x.
fn neg_mul_t_acc(a: &Csc, x: &[f64], y: &mut [f64]) {
    for col in 0..a.ncols {
        let mut acc = 0.0;
        for k in a.col_ptr[col]..a.col_ptr[col + 1] {
            acc += a.vals[k] * x[a.row_idx[k]];
        }
        y[col] -= acc;
    }
}
