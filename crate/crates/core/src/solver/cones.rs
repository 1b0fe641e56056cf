//! Cone geometry for the interior-point method: layout bookkeeping, the
//! Nesterov–Todd scaling point, Jordan-algebra products, and step-to-boundary
//! computations. All vector arguments are full-length (one slot per variable
//! column); free columns are ignored by every cone operation.

use crate::conic::ConeSeg;
use std::ops::Range;

/// Column ranges of each cone block within the variable vector.
#[derive(Debug, Clone)]
pub struct Cones {
    n: usize,
    free: Vec<Range<usize>>,
    nonneg: Vec<Range<usize>>,
    soc: Vec<Range<usize>>,
    degree: usize,
}

impl Cones {
    pub fn new(segments: &[ConeSeg]) -> Self {
        let mut free = Vec::new();
        let mut nonneg = Vec::new();
        let mut soc = Vec::new();
        let mut at = 0usize;
        let mut degree = 0usize;
        for seg in segments {
            let r = at..at + seg.dim();
            at += seg.dim();
            match seg {
                ConeSeg::Free(_) => free.push(r),
                ConeSeg::Nonneg(d) => {
                    degree += d;
                    nonneg.push(r);
                }
                ConeSeg::SecondOrder(_) => {
                    degree += 1;
                    soc.push(r);
                }
            }
        }
        Cones { n: at, free, nonneg, soc, degree }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Barrier degree: one per nonnegative coordinate, one per SOC block.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn free_ranges(&self) -> &[Range<usize>] {
        &self.free
    }

    pub fn nonneg_ranges(&self) -> &[Range<usize>] {
        &self.nonneg
    }

    pub fn soc_ranges(&self) -> &[Range<usize>] {
        &self.soc
    }

    /// Writes the interior unit element e into the cone coordinates of `v`
    /// (free coordinates untouched).
    pub fn set_unit(&self, v: &mut [f64]) {
        for r in &self.nonneg {
            for i in r.clone() {
                v[i] = 1.0;
            }
        }
        for r in &self.soc {
            v[r.start] = 1.0;
            for i in r.start + 1..r.end {
                v[i] = 0.0;
            }
        }
    }

    /// Inner product over cone coordinates only.
    pub fn cone_dot(&self, x: &[f64], s: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in self.nonneg.iter().chain(self.soc.iter()) {
            for i in r.clone() {
                acc += x[i] * s[i];
            }
        }
        acc
    }

    /// Membership test with slack `tol` (use 0.0 for strict-closure tests).
    pub fn in_cone(&self, x: &[f64], tol: f64) -> bool {
        for r in &self.nonneg {
            for i in r.clone() {
                if x[i] < -tol {
                    return false;
                }
            }
        }
        for r in &self.soc {
            let head = x[r.start];
            let tail = norm2(&x[r.start + 1..r.end]);
            if head < tail - tol {
                return false;
            }
        }
        true
    }

    /// Largest step `a >= 0` with `x + a*dx` still in the cone; `f64::INFINITY`
    /// when the ray never exits. `x` must be in the cone interior.
    pub fn step_to_boundary(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut step = f64::INFINITY;
        for r in &self.nonneg {
            for i in r.clone() {
                if dx[i] < 0.0 {
                    step = step.min(-x[i] / dx[i]);
                }
            }
        }
        for r in &self.soc {
            step = step.min(soc_step(&x[r.clone()], &dx[r.clone()]));
        }
        step
    }

    /// Jordan product `out = x o s`: elementwise on nonnegative coordinates,
    /// (x's, x0*s_t + s0*x_t) on each SOC block. Free coordinates are zeroed.
    pub fn jordan_mul(&self, x: &[f64], s: &[f64], out: &mut [f64]) {
        for r in &self.free {
            for i in r.clone() {
                out[i] = 0.0;
            }
        }
        for r in &self.nonneg {
            for i in r.clone() {
                out[i] = x[i] * s[i];
            }
        }
        for r in &self.soc {
            let xb = &x[r.clone()];
            let sb = &s[r.clone()];
            let head = dot(xb, sb);
            let x0 = xb[0];
            let s0 = sb[0];
            let ob = &mut out[r.clone()];
            for i in 1..ob.len() {
                ob[i] = x0 * sb[i] + s0 * xb[i];
            }
            ob[0] = head;
        }
    }
}

/// Largest boundary step inside one SOC block.
fn soc_step(x: &[f64], d: &[f64]) -> f64 {
    let x0 = x[0];
    let d0 = d[0];
    let xt = &x[1..];
    let dt = &d[1..];
    let a = d0 * d0 - dot(dt, dt);
    let b = 2.0 * (x0 * d0 - dot(xt, dt));
    let c = x0 * x0 - dot(xt, xt);
    // Roots of a t^2 + b t + c = 0; c > 0 at an interior point.
    if a == 0.0 {
        return if b < 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = (q / a, if q != 0.0 { c / q } else { 0.0 });
    let mut best = f64::INFINITY;
    for root in [r1, r2] {
        if root > 0.0 && root < best {
            best = root;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotInterior;

/// The Nesterov–Todd scaling at a strictly interior primal-dual pair.
///
/// `W` is block diagonal: `diag(sqrt(x_i/s_i))` on nonnegative coordinates and
/// `sqrt(eta) * (I + ...)` rank-one-corrected hyperbolic rotations on SOC
/// blocks, chosen so that `W^{-1} x = W s = lambda`.
#[derive(Debug, Clone)]
pub struct NtScaling {
    /// Scaled point lambda on cone coordinates (free slots are zero).
    lambda: Vec<f64>,
    /// Nonnegative coordinates: w_i = sqrt(x_i / s_i).
    nn_w: Vec<f64>,
    /// Per SOC block: eta = res_x / res_s.
    soc_eta: Vec<f64>,
    /// Per SOC block: normalized scaling point, wbar0^2 - ||wbar_t||^2 = 1.
    soc_wbar: Vec<Vec<f64>>,
}

impl NtScaling {
    pub fn identity(cones: &Cones) -> Self {
        let mut lambda = vec![0.0; cones.n()];
        cones.set_unit(&mut lambda);
        NtScaling {
            lambda,
            nn_w: vec![1.0; cones.n()],
            soc_eta: vec![1.0; cones.soc.len()],
            soc_wbar: cones
                .soc
                .iter()
                .map(|r| {
                    let mut w = vec![0.0; r.len()];
                    w[0] = 1.0;
                    w
                })
                .collect(),
        }
    }

    /// Recomputes the scaling at `(x, s)`. Fails if either point is not
    /// strictly inside its cone.
    pub fn update(&mut self, cones: &Cones, x: &[f64], s: &[f64]) -> Result<(), NotInterior> {
        for r in &cones.nonneg {
            for i in r.clone() {
                if x[i] <= 0.0 || s[i] <= 0.0 {
                    return Err(NotInterior);
                }
                self.nn_w[i] = (x[i] / s[i]).sqrt();
                self.lambda[i] = (x[i] * s[i]).sqrt();
            }
        }
        for (b, r) in cones.soc.iter().enumerate() {
            let xb = &x[r.clone()];
            let sb = &s[r.clone()];
            let res_x2 = xb[0] * xb[0] - dot(&xb[1..], &xb[1..]);
            let res_s2 = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
            if res_x2 <= 0.0 || res_s2 <= 0.0 || xb[0] <= 0.0 || sb[0] <= 0.0 {
                return Err(NotInterior);
            }
            let res_x = res_x2.sqrt();
            let res_s = res_s2.sqrt();
            let gamma = {
                let mut zdot = 0.0;
                for i in 0..xb.len() {
                    zdot += (xb[i] / res_x) * (sb[i] / res_s);
                }
                ((1.0 + zdot) * 0.5).sqrt()
            };
            let wbar = &mut self.soc_wbar[b];
            wbar[0] = (xb[0] / res_x + sb[0] / res_s) / (2.0 * gamma);
            for i in 1..wbar.len() {
                wbar[i] = (xb[i] / res_x - sb[i] / res_s) / (2.0 * gamma);
            }
            self.soc_eta[b] = res_x / res_s;

            // lambda = W s = W^{-1} x; average the two evaluations for
            // symmetry against rounding.
            let lb = &mut self.lambda[r.clone()];
            soc_apply_w(self.soc_eta[b], wbar, sb, lb, false);
            let mut alt = vec![0.0; lb.len()];
            soc_apply_w(self.soc_eta[b], wbar, xb, &mut alt, true);
            for i in 0..lb.len() {
                lb[i] = 0.5 * (lb[i] + alt[i]);
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// out = W v on cone coordinates (free slots zeroed).
    pub fn mul_w(&self, cones: &Cones, v: &[f64], out: &mut [f64]) {
        self.apply(cones, v, out, false)
    }

    /// out = W^{-1} v on cone coordinates (free slots zeroed).
    pub fn mul_winv(&self, cones: &Cones, v: &[f64], out: &mut [f64]) {
        self.apply(cones, v, out, true)
    }

    fn apply(&self, cones: &Cones, v: &[f64], out: &mut [f64], inverse: bool) {
        for r in &cones.free {
            for i in r.clone() {
                out[i] = 0.0;
            }
        }
        for r in &cones.nonneg {
            for i in r.clone() {
                out[i] = if inverse { v[i] / self.nn_w[i] } else { v[i] * self.nn_w[i] };
            }
        }
        for (b, r) in cones.soc.iter().enumerate() {
            let (vin, vout) = (&v[r.clone()], &mut out[r.clone()]);
            soc_apply_w(self.soc_eta[b], &self.soc_wbar[b], vin, vout, inverse);
        }
    }

    /// out = lambda \ d (Jordan division by the scaled point).
    pub fn lambda_div(&self, cones: &Cones, d: &[f64], out: &mut [f64]) {
        for r in &cones.free {
            for i in r.clone() {
                out[i] = 0.0;
            }
        }
        for r in &cones.nonneg {
            for i in r.clone() {
                out[i] = d[i] / self.lambda[i];
            }
        }
        for r in &cones.soc {
            let lb = &self.lambda[r.clone()];
            let db = &d[r.clone()];
            let l0 = lb[0];
            let lt2 = dot(&lb[1..], &lb[1..]);
            let u0 = (l0 * db[0] - dot(&lb[1..], &db[1..])) / (l0 * l0 - lt2);
            let ob = &mut out[r.clone()];
            ob[0] = u0;
            for i in 1..ob.len() {
                ob[i] = (db[i] - u0 * lb[i]) / l0;
            }
        }
    }

    /// Diagonal of W^{-2} on a nonnegative coordinate.
    pub fn w2inv_nonneg(&self, i: usize) -> f64 {
        1.0 / (self.nn_w[i] * self.nn_w[i])
    }

    /// Dense W^{-2} for SOC block `b` (row-major d x d):
    /// W^{-2} = (2 (J wbar)(J wbar)' - J) / eta with J = diag(1, -1, ..., -1).
    pub fn w2inv_soc_dense(&self, b: usize, out: &mut [f64]) {
        let wbar = &self.soc_wbar[b];
        let eta = self.soc_eta[b];
        let d = wbar.len();
        debug_assert_eq!(out.len(), d * d);
        for i in 0..d {
            let vi = if i == 0 { wbar[0] } else { -wbar[i] };
            for j in 0..d {
                let vj = if j == 0 { wbar[0] } else { -wbar[j] };
                let jay = if i != j {
                    0.0
                } else if i == 0 {
                    1.0
                } else {
                    -1.0
                };
                out[i * d + j] = (2.0 * vi * vj - jay) / eta;
            }
        }
    }
}

/// Applies the SOC scaling block (or its inverse) to one block vector:
/// W = sqrt(eta) [[w0, wt'], [wt, I + wt wt'/(1+w0)]], and W^{-1} is the same
/// form at (w0, -wt) with 1/sqrt(eta).
fn soc_apply_w(eta: f64, wbar: &[f64], v: &[f64], out: &mut [f64], inverse: bool) {
    let d = wbar.len();
    let scale = if inverse { 1.0 / eta.sqrt() } else { eta.sqrt() };
    let sgn = if inverse { -1.0 } else { 1.0 };
    let w0 = wbar[0];
    let mut wt_dot_vt = 0.0;
    for i in 1..d {
        wt_dot_vt += wbar[i] * v[i];
    }
    out[0] = scale * (w0 * v[0] + sgn * wt_dot_vt);
    let coef = sgn * v[0] + wt_dot_vt / (1.0 + w0);
    for i in 1..d {
        out[i] = scale * (v[i] + coef * wbar[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ConeSeg;

    fn layout() -> Cones {
        Cones::new(&[
            ConeSeg::Free(2),
            ConeSeg::Nonneg(3),
            ConeSeg::SecondOrder(3),
            ConeSeg::SecondOrder(4),
        ])
    }

    fn interior_pair(n: usize) -> (Vec<f64>, Vec<f64>) {
        // Deterministic strictly interior points for the layout above.
        let x: Vec<f64> = (0..n).map(|i| 0.3 + 0.01 * i as f64).collect();
        let s: Vec<f64> = (0..n).map(|i| 0.9 - 0.02 * i as f64).collect();
        let mut x = x;
        let mut s = s;
        // Make SOC heads dominate their tails.
        for (head, len) in [(5usize, 3usize), (8, 4)] {
            x[head] = 3.0;
            s[head] = 4.0;
            for k in 1..len {
                x[head + k] = 0.2 * k as f64;
                s[head + k] = -0.15 * k as f64;
            }
        }
        (x, s)
    }

    #[test]
    fn degree_counts_nonneg_coords_and_soc_blocks() {
        let c = layout();
        assert_eq!(c.degree(), 3 + 2);
        assert_eq!(c.n(), 12);
    }

    #[test]
    fn nt_scaling_maps_both_points_to_lambda() {
        let c = layout();
        let (x, s) = interior_pair(c.n());
        let mut sc = NtScaling::identity(&c);
        sc.update(&c, &x, &s).unwrap();
        let mut wx = vec![0.0; c.n()];
        let mut ws = vec![0.0; c.n()];
        sc.mul_winv(&c, &x, &mut wx);
        sc.mul_w(&c, &s, &mut ws);
        for i in 2..c.n() {
            assert!((wx[i] - sc.lambda()[i]).abs() < 1e-12, "winv x at {i}");
            assert!((ws[i] - sc.lambda()[i]).abs() < 1e-12, "w s at {i}");
        }
        // lambda' lambda = x' s over the cone coordinates.
        let lam = sc.lambda();
        let lhs: f64 = lam[2..].iter().map(|v| v * v).sum();
        assert!((lhs - c.cone_dot(&x, &s)).abs() < 1e-10);
    }

    #[test]
    fn w_round_trip_and_w2inv_consistency() {
        let c = layout();
        let (x, s) = interior_pair(c.n());
        let mut sc = NtScaling::identity(&c);
        sc.update(&c, &x, &s).unwrap();
        let v: Vec<f64> = (0..c.n()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut wv = vec![0.0; c.n()];
        let mut back = vec![0.0; c.n()];
        sc.mul_w(&c, &v, &mut wv);
        sc.mul_winv(&c, &wv, &mut back);
        for i in 2..c.n() {
            assert!((back[i] - v[i]).abs() < 1e-12, "round trip at {i}");
        }
        // Dense W^{-2} of the first SOC block equals W^{-1} applied twice.
        let r = c.soc_ranges()[0].clone();
        let d = r.len();
        let mut dense = vec![0.0; d * d];
        sc.w2inv_soc_dense(0, &mut dense);
        for col in 0..d {
            let mut e = vec![0.0; c.n()];
            e[r.start + col] = 1.0;
            let mut once = vec![0.0; c.n()];
            let mut twice = vec![0.0; c.n()];
            sc.mul_winv(&c, &e, &mut once);
            sc.mul_winv(&c, &once, &mut twice);
            for row in 0..d {
                assert!(
                    (dense[row * d + col] - twice[r.start + row]).abs() < 1e-12,
                    "w2inv at {row},{col}"
                );
            }
        }
    }

    #[test]
    fn jordan_division_inverts_jordan_product() {
        let c = layout();
        let (x, s) = interior_pair(c.n());
        let mut sc = NtScaling::identity(&c);
        sc.update(&c, &x, &s).unwrap();
        let d: Vec<f64> = (0..c.n()).map(|i| 0.5 - (i as f64 * 0.61).cos()).collect();
        let mut u = vec![0.0; c.n()];
        sc.lambda_div(&c, &d, &mut u);
        let mut recon = vec![0.0; c.n()];
        c.jordan_mul(sc.lambda(), &u, &mut recon);
        for i in 2..c.n() {
            assert!((recon[i] - d[i]).abs() < 1e-11, "at {i}: {} vs {}", recon[i], d[i]);
        }
    }

    #[test]
    fn identity_scaling_when_x_equals_s() {
        let c = Cones::new(&[ConeSeg::SecondOrder(3)]);
        let x = vec![2.0, 0.5, -0.3];
        let mut sc = NtScaling::identity(&c);
        sc.update(&c, &x, &x).unwrap();
        let v = vec![0.7, -0.2, 0.4];
        let mut out = vec![0.0; 3];
        sc.mul_w(&c, &v, &mut out);
        for i in 0..3 {
            assert!((out[i] - v[i]).abs() < 1e-14);
        }
        for i in 0..3 {
            assert!((sc.lambda()[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_steps() {
        let c = Cones::new(&[ConeSeg::Nonneg(2), ConeSeg::SecondOrder(2)]);
        // Nonneg: x = (1, 2), dx = (-2, -1) -> exits at 0.5.
        // SOC dim 2: x = (1, 0), dx = (-1, 0) -> head hits zero at 1.0.
        let x = vec![1.0, 2.0, 1.0, 0.0];
        let dx = vec![-2.0, -1.0, -1.0, 0.0];
        let a = c.step_to_boundary(&x, &dx);
        assert!((a - 0.5).abs() < 1e-14);
        // Ray that never exits.
        let dx2 = vec![1.0, 1.0, 1.0, 0.5];
        assert_eq!(c.step_to_boundary(&x, &dx2), f64::INFINITY);
        // SOC tail growth: x = (1,0), dx = (0,1) exits where 1 = |t| -> 1.
        let c2 = Cones::new(&[ConeSeg::SecondOrder(2)]);
        let a2 = c2.step_to_boundary(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((a2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn membership_checks() {
        let c = Cones::new(&[ConeSeg::Free(1), ConeSeg::Nonneg(1), ConeSeg::SecondOrder(3)]);
        assert!(c.in_cone(&[-5.0, 0.0, 1.0, 0.6, 0.8], 1e-9));
        assert!(!c.in_cone(&[0.0, -1e-6, 1.0, 0.0, 0.0], 1e-9));
        assert!(!c.in_cone(&[0.0, 0.0, 1.0, 1.0, 0.5], 1e-9));
    }
}
