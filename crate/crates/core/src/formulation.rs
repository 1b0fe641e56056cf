//! Dispatch formulations for radial feeders under forecast uncertainty.
//!
//! Three nested problems share one assembler over the same linearized feeder
//! physics:
//!
//! * **deterministic** — least-cost dispatch of the forecast loads;
//! * **chance-constrained (cc)** — zero-mean Gaussian bus errors, affine
//!   balancing recourse `g(e) = g + alpha * sum(e)` with `sum(alpha) = 1`,
//!   `alpha >= 0`, and per-constraint violation levels for generation and
//!   voltage limits;
//! * **distributionally robust (drcc)** — the chance-constrained problem with
//!   every error variance replaced by the upper end of its chi-square
//!   confidence interval, so the objective is the worst-case expected cost
//!   over the variance ambiguity set.
//!
//! All three lower to the canonical cone form of [`crate::conic`]; recovery
//! maps the raw solver vector back to named quantities and re-verifies every
//! constraint from scratch at 1e-6 before returning a solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConicProblem, ProblemBuilder, VarId};
use crate::net::{build_path_matrix, lindistflow_state, Generator, PathMatrix, ValidatedNetwork};
use crate::solver::{self, SolverConfig, SolverResult, SolverStatus};
use crate::stats::{normal_quantile, AmbiguityModel};

/// Which of the three formulations a problem was built as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispatchMode {
    Deterministic,
    ChanceConstrained,
    DistRobust,
}

/// Risk parameters of the stochastic formulations.
///
/// `eta_g` and `eta_v` are per-constraint violation levels for generation and
/// voltage limits; both must lie in (0, 1/2] so that the standard-normal
/// quantile `z = Phi^-1(1 - eta)` is nonnegative. `xi` is the confidence
/// parameter of the variance intervals consumed by the distributionally
/// robust mode (the intervals themselves are fitted in [`crate::stats`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub mode: DispatchMode,
    pub eta_g: f64,
    pub eta_v: f64,
    pub xi: f64,
}

impl RiskConfig {
    pub fn deterministic() -> Self {
        Self {
            mode: DispatchMode::Deterministic,
            eta_g: 0.5,
            eta_v: 0.5,
            xi: 0.05,
        }
    }

    /// Chance-constrained configuration with `eta_g = eta_v = eta`.
    pub fn chance_constrained(eta: f64) -> Self {
        Self {
            mode: DispatchMode::ChanceConstrained,
            eta_g: eta,
            eta_v: eta,
            xi: 0.05,
        }
    }

    /// Distributionally robust configuration with `eta_g = eta_v = eta` and
    /// ambiguity confidence `xi`.
    pub fn dist_robust(eta: f64, xi: f64) -> Self {
        Self {
            mode: DispatchMode::DistRobust,
            eta_g: eta,
            eta_v: eta,
            xi,
        }
    }

    /// Overrides the generation violation level (defaults track `eta_v`).
    pub fn with_eta_g(mut self, eta_g: f64) -> Self {
        self.eta_g = eta_g;
        self
    }

    fn quantile(eta: f64) -> f64 {
        assert!(
            eta > 0.0 && eta <= 0.5,
            "violation level must lie in (0, 1/2], got {eta}"
        );
        normal_quantile(1.0 - eta)
    }
}

/// Terminal classification of a dispatch solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispatchStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// A recovered and re-verified operating point.
///
/// Vectors follow the validated network's internal ordering: generators as
/// listed by [`ValidatedNetwork::generators`], flows indexed by the non-root
/// bus a line feeds (entry `j - 1` for line `j`), squared voltages per bus
/// with the root's fixed 1.0 at index 0. `objective` is the expected cost
/// recomputed from the recovered quantities, not the raw solver value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub g_p: Vec<f64>,
    pub g_q: Vec<f64>,
    /// Per-generator participation factors. A deterministic dispatch carries
    /// the convention that the first root generator absorbs all imbalance.
    pub alpha: Vec<f64>,
    pub f_p: Vec<f64>,
    pub f_q: Vec<f64>,
    pub u: Vec<f64>,
    pub objective: f64,
    pub status: DispatchStatus,
    pub iters: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("no optimal solution: {mapped:?} (solver status {solver:?})")]
    StatusNotOptimal {
        mapped: DispatchStatus,
        solver: SolverStatus,
    },
    #[error("recovered solution fails verification: {0}")]
    ResidualTooLarge(String),
}

impl FormulationError {
    /// The dispatch-level status this error corresponds to.
    pub fn status(&self) -> DispatchStatus {
        match self {
            FormulationError::StatusNotOptimal { mapped, .. } => *mapped,
            FormulationError::ResidualTooLarge(_) => DispatchStatus::NumericalFailure,
        }
    }
}

/// A lowered dispatch problem plus the data needed to verify its solutions.
#[derive(Debug, Clone)]
pub struct DispatchProblem {
    pub mode: DispatchMode,
    pub problem: ConicProblem,
    line_limits: bool,
    z_g: f64,
    z_v: f64,
    /// Per-bus error variances the problem was tightened with (all zero for
    /// the deterministic mode).
    var_p: Vec<f64>,
    var_q: Vec<f64>,
}

struct Unc {
    var_p: Vec<f64>,
    var_q: Vec<f64>,
    z_g: f64,
    z_v: f64,
}

/// Lowers the deterministic dispatch problem. Apparent-power line limits are
/// included only when `include_flow_limits` is set (default experiments leave
/// them off so all three modes constrain the same quantities).
pub fn build_deterministic(net: &ValidatedNetwork, include_flow_limits: bool) -> DispatchProblem {
    assemble(net, DispatchMode::Deterministic, None, include_flow_limits)
}

/// Lowers the chance-constrained dispatch problem for the given per-bus
/// error variances (`var_p[i]` / `var_q[i]` for bus `i`, root included).
pub fn build_cc(
    net: &ValidatedNetwork,
    var_p: &[f64],
    var_q: &[f64],
    config: &RiskConfig,
) -> DispatchProblem {
    assert_eq!(
        config.mode,
        DispatchMode::ChanceConstrained,
        "config mode must be ChanceConstrained"
    );
    check_variances(net, var_p, var_q);
    let unc = Unc {
        var_p: var_p.to_vec(),
        var_q: var_q.to_vec(),
        z_g: RiskConfig::quantile(config.eta_g),
        z_v: RiskConfig::quantile(config.eta_v),
    };
    assemble(net, config.mode, Some(unc), false)
}

/// Lowers the distributionally robust dispatch problem: structurally the
/// chance-constrained problem with every variance replaced by the upper end
/// of its confidence interval, making the objective the worst-case expected
/// cost over the ambiguity set.
pub fn build_drcc(
    net: &ValidatedNetwork,
    ambiguity: &AmbiguityModel,
    config: &RiskConfig,
) -> DispatchProblem {
    assert_eq!(
        config.mode,
        DispatchMode::DistRobust,
        "config mode must be DistRobust"
    );
    check_variances(net, &ambiguity.hi_p, &ambiguity.hi_q);
    let unc = Unc {
        var_p: ambiguity.hi_p.clone(),
        var_q: ambiguity.hi_q.clone(),
        z_g: RiskConfig::quantile(config.eta_g),
        z_v: RiskConfig::quantile(config.eta_v),
    };
    assemble(net, config.mode, Some(unc), false)
}

fn check_variances(net: &ValidatedNetwork, var_p: &[f64], var_q: &[f64]) {
    let n = net.n_buses();
    assert_eq!(var_p.len(), n, "need one active-error variance per bus");
    assert_eq!(var_q.len(), n, "need one reactive-error variance per bus");
    for v in var_p.iter().chain(var_q) {
        assert!(v.is_finite() && *v >= 0.0, "variances must be finite and >= 0");
    }
}

/// Expected generation cost of a dispatch under affine recourse:
/// `sum_k c2_k * (alpha_k^2 * total_var_p + g_k^2) + c1_k * g_k + c0_k`,
/// where `total_var_p` is the variance of the aggregate active-power error.
pub fn expected_cost(
    generators: &[Generator],
    g_p: &[f64],
    alpha: &[f64],
    total_var_p: f64,
) -> f64 {
    assert_eq!(g_p.len(), generators.len());
    assert_eq!(alpha.len(), generators.len());
    let mut total = 0.0;
    for (k, g) in generators.iter().enumerate() {
        total += g.cost.c2 * (alpha[k] * alpha[k] * total_var_p + g_p[k] * g_p[k])
            + g.cost.c1 * g_p[k]
            + g.cost.c0;
    }
    total
}

/// Variance of each squared bus voltage under independent zero-mean bus
/// errors and affine recourse, evaluated by per-line diagonal aggregation:
///
/// `Var(u_i) = 4 * sum_{k on path(i)} [ R_k^2 * sum_{j fed by k} (var_p[j] +
/// alpha_by_bus[j]^2 * T_p) + X_k^2 * sum_{j fed by k} (var_q[j] +
/// alpha_by_bus[j]^2 * T_q) ]`,
///
/// with `T_p = sum(var_p)`, `T_q = sum(var_q)` over all buses. Covariances
/// across lines and between local and recourse terms are deliberately not
/// included; the evaluation module measures the gap between this proxy and
/// empirical voltage variances instead of correcting it here.
///
/// `alpha_by_bus` is the per-bus padded recourse vector: entry `i` sums the
/// participation factors of all generators at bus `i` (zero where none sit).
/// The root entry is accepted but unused — the root voltage is fixed. The
/// returned vector has one entry per bus with 0.0 at the root.
pub fn voltage_variance(
    net: &ValidatedNetwork,
    paths: &PathMatrix,
    var_p: &[f64],
    var_q: &[f64],
    alpha_by_bus: &[f64],
) -> Vec<f64> {
    let n = net.n_buses();
    assert_eq!(var_p.len(), n, "need one active-error variance per bus");
    assert_eq!(var_q.len(), n, "need one reactive-error variance per bus");
    assert_eq!(alpha_by_bus.len(), n, "need one padded alpha per bus");
    let t_p: f64 = var_p.iter().sum();
    let t_q: f64 = var_q.iter().sum();
    let mut out = vec![0.0; n];
    for i in 1..n {
        let mut acc = 0.0;
        for &k in paths.path(i) {
            let r = net.line_r(k);
            let x = net.line_x(k);
            let mut inner_p = 0.0;
            let mut inner_q = 0.0;
            for &j in paths.subtree(k) {
                let a2 = alpha_by_bus[j] * alpha_by_bus[j];
                inner_p += var_p[j] + a2 * t_p;
                inner_q += var_q[j] + a2 * t_q;
            }
            acc += r * r * inner_p + x * x * inner_q;
        }
        out[i] = 4.0 * acc;
    }
    out
}

/// Per-bus accumulations that let the assembler write the voltage-variance
/// proxy as `C_i + sum_b W_ib * alpha_bus_b^2` without the cubic literal
/// sweep: `c[i]` collects the alpha-independent bus-error terms along the
/// root path, `g[i]` the per-line recourse weight `R^2*T_p + X^2*T_q`
/// accumulated along the same path. `W_ib = g[deepest common ancestor]`.
fn variance_components(net: &ValidatedNetwork, var_p: &[f64], var_q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = net.n_buses();
    let t_p: f64 = var_p.iter().sum();
    let t_q: f64 = var_q.iter().sum();
    // Subtree variance sums, children before parents.
    let mut sub_p = vec![0.0; n];
    let mut sub_q = vec![0.0; n];
    for j in (1..n).rev() {
        let mut sp = var_p[j];
        let mut sq = var_q[j];
        for &c in net.children(j) {
            sp += sub_p[c];
            sq += sub_q[c];
        }
        sub_p[j] = sp;
        sub_q[j] = sq;
    }
    let mut c = vec![0.0; n];
    let mut g = vec![0.0; n];
    for j in 1..n {
        let p = net.parent(j);
        let r = net.line_r(j);
        let x = net.line_x(j);
        c[j] = c[p] + r * r * sub_p[j] + x * x * sub_q[j];
        g[j] = g[p] + r * r * t_p + x * x * t_q;
    }
    (c, g)
}

/// Recourse coupling between bus `i`'s voltage and generation at bus `b`:
/// the accumulated recourse weight at their deepest common ancestor (the
/// lines shared by both root paths). Zero when `b` is the root.
fn shared_path_weight(paths: &PathMatrix, g: &[f64], i: usize, b: usize) -> f64 {
    if b == 0 {
        return 0.0;
    }
    let mut deepest = 0usize;
    for (&a, &c) in paths.path(i).iter().zip(paths.path(b)) {
        if a == c {
            deepest = a;
        } else {
            break;
        }
    }
    g[deepest]
}

fn assemble(
    net: &ValidatedNetwork,
    mode: DispatchMode,
    unc: Option<Unc>,
    line_limits: bool,
) -> DispatchProblem {
    let n = net.n_buses();
    let gens = net.generators();
    let ng = gens.len();
    let mut b = ProblemBuilder::new();

    let gp: Vec<VarId> = (0..ng).map(|k| b.free(format!("gp[{k}]"))).collect();
    let gq: Vec<VarId> = (0..ng).map(|k| b.free(format!("gq[{k}]"))).collect();
    let fp: Vec<VarId> = (1..n).map(|j| b.free(format!("fp[{j}]"))).collect();
    let fq: Vec<VarId> = (1..n).map(|j| b.free(format!("fq[{j}]"))).collect();
    let u: Vec<VarId> = (1..n).map(|i| b.free(format!("u[{i}]"))).collect();
    let alpha: Vec<VarId> = if unc.is_some() {
        (0..ng).map(|k| b.nonneg(format!("alpha[{k}]"))).collect()
    } else {
        Vec::new()
    };

    let (t_p, t_q) = match &unc {
        Some(uc) => (uc.var_p.iter().sum::<f64>(), uc.var_q.iter().sum::<f64>()),
        None => (0.0, 0.0),
    };

    // Nodal balance for both power components, root included: inflow plus
    // local generation covers the forecast load plus outflows to children.
    for i in 0..n {
        let mut rp: Vec<(VarId, f64)> = Vec::new();
        let mut rq: Vec<(VarId, f64)> = Vec::new();
        if i > 0 {
            rp.push((fp[i - 1], 1.0));
            rq.push((fq[i - 1], 1.0));
        }
        for &c in net.children(i) {
            rp.push((fp[c - 1], -1.0));
            rq.push((fq[c - 1], -1.0));
        }
        for (k, g) in gens.iter().enumerate() {
            if g.bus == i {
                rp.push((gp[k], 1.0));
                rq.push((gq[k], 1.0));
            }
        }
        b.eq(rp, net.bus(i).load_p);
        b.eq(rq, net.bus(i).load_q);
    }

    // Squared-voltage drop along each line; the root voltage is the fixed
    // constant 1, not a variable.
    for j in 1..n {
        let r = net.line_r(j);
        let x = net.line_x(j);
        let mut row = vec![
            (u[j - 1], -1.0),
            (fp[j - 1], -2.0 * r),
            (fq[j - 1], -2.0 * x),
        ];
        let p = net.parent(j);
        if p == 0 {
            b.eq(row, -1.0);
        } else {
            row.push((u[p - 1], 1.0));
            b.eq(row, 0.0);
        }
    }

    // Generation limits. Under uncertainty each limit is tightened by the
    // recourse spread z_g * alpha * sqrt(total variance): the dispatch must
    // leave room for the generator's share of the aggregate error.
    let gt_p = unc.as_ref().map_or(0.0, |uc| uc.z_g * t_p.sqrt());
    let gt_q = unc.as_ref().map_or(0.0, |uc| uc.z_g * t_q.sqrt());
    for (k, g) in gens.iter().enumerate() {
        let p_hi = b.nonneg(format!("gp_hi[{k}]"));
        let p_lo = b.nonneg(format!("gp_lo[{k}]"));
        let q_hi = b.nonneg(format!("gq_hi[{k}]"));
        let q_lo = b.nonneg(format!("gq_lo[{k}]"));
        let mut up = vec![(gp[k], 1.0), (p_hi, 1.0)];
        let mut dn = vec![(gp[k], 1.0), (p_lo, -1.0)];
        let mut qup = vec![(gq[k], 1.0), (q_hi, 1.0)];
        let mut qdn = vec![(gq[k], 1.0), (q_lo, -1.0)];
        if gt_p > 0.0 {
            up.push((alpha[k], gt_p));
            dn.push((alpha[k], -gt_p));
        }
        if gt_q > 0.0 {
            qup.push((alpha[k], gt_q));
            qdn.push((alpha[k], -gt_q));
        }
        b.eq(up, g.p_max);
        b.eq(dn, g.p_min);
        b.eq(qup, g.q_max);
        b.eq(qdn, -g.q_max);
    }

    // The recourse fully balances the aggregate error.
    if !alpha.is_empty() {
        b.eq(alpha.iter().map(|&a| (a, 1.0)).collect(), 1.0);
    }

    // Voltage limits. Under uncertainty a margin variable bounds half the
    // voltage standard-deviation proxy through one second-order cone per bus:
    // vh_i >= sqrt(C_i + sum_b W_ib * alpha_bus_b^2), and both limit rows
    // retreat by 2 * z_v * vh_i.
    if let Some(uc) = &unc {
        let paths = build_path_matrix(net);
        let (cvec, gpref) = variance_components(net, &uc.var_p, &uc.var_q);
        let mut gen_buses: Vec<usize> = gens.iter().map(|g| g.bus).filter(|&bb| bb != 0).collect();
        gen_buses.sort_unstable();
        gen_buses.dedup();
        for i in 1..n {
            let mut tail: Vec<(usize, f64)> = Vec::new();
            for &bb in &gen_buses {
                let w = shared_path_weight(&paths, &gpref, i, bb);
                if w > 0.0 {
                    tail.push((bb, w));
                }
            }
            let mut names = vec![format!("vh[{i}]"), format!("vc[{i}]")];
            names.extend(tail.iter().map(|(bb, _)| format!("va[{i},{bb}]")));
            let ids = b.soc(names);
            b.eq(vec![(ids[1], 1.0)], cvec[i].sqrt());
            for (t, (bb, w)) in tail.iter().enumerate() {
                let mut row = vec![(ids[2 + t], 1.0)];
                for (k, g) in gens.iter().enumerate() {
                    if g.bus == *bb {
                        row.push((alpha[k], -w.sqrt()));
                    }
                }
                b.eq(row, 0.0);
            }
            let u_hi = b.nonneg(format!("u_hi[{i}]"));
            let u_lo = b.nonneg(format!("u_lo[{i}]"));
            let zv2 = 2.0 * uc.z_v;
            let mut up = vec![(u[i - 1], 1.0), (u_hi, 1.0)];
            let mut dn = vec![(u[i - 1], 1.0), (u_lo, -1.0)];
            if zv2 > 0.0 {
                up.push((ids[0], zv2));
                dn.push((ids[0], -zv2));
            }
            b.eq(up, net.bus(i).u_max);
            b.eq(dn, net.bus(i).u_min);
        }
    } else {
        for i in 1..n {
            let u_hi = b.nonneg(format!("u_hi[{i}]"));
            let u_lo = b.nonneg(format!("u_lo[{i}]"));
            b.eq(vec![(u[i - 1], 1.0), (u_hi, 1.0)], net.bus(i).u_max);
            b.eq(vec![(u[i - 1], 1.0), (u_lo, -1.0)], net.bus(i).u_min);
        }
    }

    // Expected cost in epigraph form: one cone per quadratic term encodes
    // t_k >= g_k^2 + alpha_k^2 * T_p via head (t+1)/2 and tail
    // [(t-1)/2, sqrt(T_p)*alpha_k, g_k]; the objective picks up
    // c2*(head + tail0) = c2*t plus the linear and constant parts.
    let mut offset = 0.0;
    for (k, g) in gens.iter().enumerate() {
        offset += g.cost.c0;
        if g.cost.c1 != 0.0 {
            b.obj(gp[k], g.cost.c1);
        }
        if g.cost.c2 > 0.0 {
            let with_alpha = unc.is_some() && t_p > 0.0;
            let mut names = vec![format!("cost_hi[{k}]"), format!("cost_lo[{k}]")];
            if with_alpha {
                names.push(format!("cost_a[{k}]"));
            }
            names.push(format!("cost_g[{k}]"));
            let ids = b.soc(names);
            b.eq(vec![(ids[0], 1.0), (ids[1], -1.0)], 1.0);
            let gi = ids.len() - 1;
            b.eq(vec![(ids[gi], 1.0), (gp[k], -1.0)], 0.0);
            if with_alpha {
                b.eq(vec![(ids[2], 1.0), (alpha[k], -t_p.sqrt())], 0.0);
            }
            b.obj(ids[0], g.cost.c2);
            b.obj(ids[1], g.cost.c2);
        }
    }
    b.add_offset(offset);

    // Apparent-power ratings (deterministic mode only, behind the flag): a
    // cone with its head pinned to the rating caps each line's flow norm.
    if line_limits {
        for j in 1..n {
            let ids = b.soc(vec![
                format!("s_cap[{j}]"),
                format!("s_p[{j}]"),
                format!("s_q[{j}]"),
            ]);
            b.eq(vec![(ids[0], 1.0)], net.line_s_max(j));
            b.eq(vec![(ids[1], 1.0), (fp[j - 1], -1.0)], 0.0);
            b.eq(vec![(ids[2], 1.0), (fq[j - 1], -1.0)], 0.0);
        }
    }

    let (z_g, z_v, var_p, var_q) = match unc {
        Some(uc) => (uc.z_g, uc.z_v, uc.var_p, uc.var_q),
        None => (0.0, 0.0, vec![0.0; n], vec![0.0; n]),
    };
    DispatchProblem {
        mode,
        problem: b.finish(),
        line_limits,
        z_g,
        z_v,
        var_p,
        var_q,
    }
}

impl DispatchProblem {
    /// Solves the lowered problem and recovers a verified operating point.
    pub fn solve(
        &self,
        net: &ValidatedNetwork,
        cfg: &SolverConfig,
    ) -> Result<DispatchSolution, FormulationError> {
        let raw = solver::solve(&self.problem, cfg);
        self.recover(net, &raw)
    }

    /// Maps a raw solver result back to named quantities and re-verifies the
    /// physics, the tightened limits, and the objective from scratch.
    pub fn recover(
        &self,
        net: &ValidatedNetwork,
        raw: &SolverResult,
    ) -> Result<DispatchSolution, FormulationError> {
        match raw.status {
            SolverStatus::Optimal => {}
            SolverStatus::PrimalInfeasible => {
                return Err(FormulationError::StatusNotOptimal {
                    mapped: DispatchStatus::Infeasible,
                    solver: raw.status,
                })
            }
            other => {
                return Err(FormulationError::StatusNotOptimal {
                    mapped: DispatchStatus::NumericalFailure,
                    solver: other,
                })
            }
        }
        let get = |name: String| -> f64 {
            let col = self
                .problem
                .var(&name)
                .unwrap_or_else(|| panic!("missing variable {name}"));
            raw.x[col]
        };

        let n = net.n_buses();
        let gens = net.generators();
        let ng = gens.len();
        let g_p: Vec<f64> = (0..ng).map(|k| get(format!("gp[{k}]"))).collect();
        let g_q: Vec<f64> = (0..ng).map(|k| get(format!("gq[{k}]"))).collect();
        let f_p: Vec<f64> = (1..n).map(|j| get(format!("fp[{j}]"))).collect();
        let f_q: Vec<f64> = (1..n).map(|j| get(format!("fq[{j}]"))).collect();
        let mut u = vec![1.0; n];
        for i in 1..n {
            u[i] = get(format!("u[{i}]"));
        }
        let alpha: Vec<f64> = if self.mode == DispatchMode::Deterministic {
            // Convention: the root's first generator absorbs all imbalance.
            let root = gens
                .iter()
                .position(|g| g.bus == 0)
                .expect("validated network has a root generator");
            (0..ng).map(|k| if k == root { 1.0 } else { 0.0 }).collect()
        } else {
            (0..ng).map(|k| get(format!("alpha[{k}]"))).collect()
        };

        const TOL: f64 = 1e-6;
        let fail = |what: String| Err(FormulationError::ResidualTooLarge(what));

        // Re-derive flows and voltages from the generators alone and compare
        // against the extracted values: this validates every balance and
        // voltage row through an independent code path.
        let mut inj_p = vec![0.0; n - 1];
        let mut inj_q = vec![0.0; n - 1];
        for i in 1..n {
            inj_p[i - 1] = net.bus(i).load_p;
            inj_q[i - 1] = net.bus(i).load_q;
        }
        for (k, g) in gens.iter().enumerate() {
            if g.bus > 0 {
                inj_p[g.bus - 1] -= g_p[k];
                inj_q[g.bus - 1] -= g_q[k];
            }
        }
        let state = lindistflow_state(net, &inj_p, &inj_q);
        for j in 0..n - 1 {
            if (state.f_p[j] - f_p[j]).abs() > TOL || (state.f_q[j] - f_q[j]).abs() > TOL {
                return fail(format!("flow balance at line {}", j + 1));
            }
        }
        for i in 1..n {
            if (state.u[i] - u[i]).abs() > TOL {
                return fail(format!("voltage recursion at bus {i}"));
            }
        }
        // Root balance: root generation covers the root load plus outflows.
        let root_gp: f64 = gens
            .iter()
            .zip(&g_p)
            .filter(|(g, _)| g.bus == 0)
            .map(|(_, v)| v)
            .sum();
        let root_gq: f64 = gens
            .iter()
            .zip(&g_q)
            .filter(|(g, _)| g.bus == 0)
            .map(|(_, v)| v)
            .sum();
        let root_out_p: f64 = net.children(0).iter().map(|&c| f_p[c - 1]).sum();
        let root_out_q: f64 = net.children(0).iter().map(|&c| f_q[c - 1]).sum();
        if (root_gp - net.bus(0).load_p - root_out_p).abs() > TOL
            || (root_gq - net.bus(0).load_q - root_out_q).abs() > TOL
        {
            return fail("root power balance".into());
        }

        let stochastic = self.mode != DispatchMode::Deterministic;
        if stochastic {
            let sum: f64 = alpha.iter().sum();
            if (sum - 1.0).abs() > TOL {
                return fail(format!("participation factors sum to {sum}"));
            }
            if alpha.iter().any(|a| *a < -TOL) {
                return fail("negative participation factor".into());
            }
        }

        // Tightened generation limits.
        let t_p: f64 = self.var_p.iter().sum();
        let t_q: f64 = self.var_q.iter().sum();
        let (st_p, st_q) = (t_p.sqrt(), t_q.sqrt());
        for (k, g) in gens.iter().enumerate() {
            let margin_p = if stochastic { self.z_g * alpha[k] * st_p } else { 0.0 };
            let margin_q = if stochastic { self.z_g * alpha[k] * st_q } else { 0.0 };
            if g_p[k] + margin_p > g.p_max + TOL || g_p[k] - margin_p < g.p_min - TOL {
                return fail(format!("active limits of generator {k}"));
            }
            if g_q[k] + margin_q > g.q_max + TOL || g_q[k] - margin_q < -g.q_max - TOL {
                return fail(format!("reactive limits of generator {k}"));
            }
        }

        // Tightened voltage limits, recomputed through the literal variance
        // sweep rather than the assembler's accumulations.
        let mut alpha_by_bus = vec![0.0; n];
        for (k, g) in gens.iter().enumerate() {
            alpha_by_bus[g.bus] += alpha[k];
        }
        let paths = build_path_matrix(net);
        let var_u = voltage_variance(net, &paths, &self.var_p, &self.var_q, &alpha_by_bus);
        for i in 1..n {
            let margin = if stochastic { self.z_v * var_u[i].sqrt() } else { 0.0 };
            if u[i] + margin > net.bus(i).u_max + TOL || u[i] - margin < net.bus(i).u_min - TOL {
                return fail(format!("voltage limits at bus {i}"));
            }
        }

        if self.line_limits {
            for j in 1..n {
                if f_p[j - 1].hypot(f_q[j - 1]) > net.line_s_max(j) + TOL {
                    return fail(format!("apparent-power rating of line {j}"));
                }
            }
        }

        // Recompute the expected cost and cross-check the solver objective.
        let objective = expected_cost(gens, &g_p, &alpha, if stochastic { t_p } else { 0.0 });
        if (objective - raw.objective).abs() > 1e-6 * (1.0 + objective.abs()) {
            return fail(format!(
                "objective mismatch: recomputed {objective}, solver {}",
                raw.objective
            ));
        }

        Ok(DispatchSolution {
            g_p,
            g_q,
            alpha,
            f_p,
            f_q,
            u,
            objective,
            status: DispatchStatus::Optimal,
            iters: raw.iters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{validate_radial, Bus, Cost, Line, NetworkCase};
    use crate::stats::normal_cdf;

    fn bus(id: usize, p: f64, q: f64) -> Bus {
        Bus {
            id,
            u_min: 0.9025,
            u_max: 1.1025,
            load_p: p,
            load_q: q,
        }
    }

    fn line(from: usize, to: usize, r: f64, x: f64, s_max: f64) -> Line {
        Line {
            from,
            to,
            resistance: r,
            reactance: x,
            s_max,
        }
    }

    fn gen(bus: usize, p_max: f64, q_max: f64, c2: f64, c1: f64, c0: f64) -> Generator {
        Generator {
            bus,
            p_min: 0.0,
            p_max,
            q_max,
            cost: Cost { c2, c1, c0 },
        }
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn two_bus(root_gen: Generator) -> ValidatedNetwork {
        validate_radial(&NetworkCase {
            base_mva: 1.0,
            buses: vec![bus(0, 0.0, 0.0), bus(1, 1.0, 0.5)],
            lines: vec![line(0, 1, 0.01, 0.02, 10.0)],
            generators: vec![root_gen],
        })
        .unwrap()
    }

    /// Chain 0-1-2 with an expensive substation and a cheap generator at the
    /// far end; uncertainty makes the cheap generator's headroom valuable.
    fn chain_with_dg() -> ValidatedNetwork {
        validate_radial(&NetworkCase {
            base_mva: 1.0,
            buses: vec![bus(0, 0.0, 0.0), bus(1, 0.6, 0.2), bus(2, 0.8, 0.3)],
            lines: vec![line(0, 1, 0.01, 0.02, 10.0), line(1, 2, 0.015, 0.025, 10.0)],
            generators: vec![
                gen(0, 10.0, 10.0, 0.5, 50.0, 0.0),
                gen(2, 1.5, 1.0, 0.1, 10.0, 0.0),
            ],
        })
        .unwrap()
    }

    #[test]
    fn deterministic_two_bus_dispatches_root_to_load() {
        let net = two_bus(gen(0, 5.0, 5.0, 0.0, 10.0, 5.0));
        let sol = build_deterministic(&net, false).solve(&net, &cfg()).unwrap();
        assert!((sol.g_p[0] - 1.0).abs() < 1e-6);
        assert!((sol.g_q[0] - 0.5).abs() < 1e-6);
        assert!((sol.f_p[0] - 1.0).abs() < 1e-6);
        assert!((sol.objective - 15.0).abs() < 1e-6);
        // u1 = 1 - 2*(0.01*1 + 0.02*0.5) = 0.96
        assert!((sol.u[1] - 0.96).abs() < 1e-6);
        assert_eq!(sol.alpha, vec![1.0]);
        assert_eq!(sol.status, DispatchStatus::Optimal);
    }

    #[test]
    fn unreachable_voltage_floor_reports_infeasible() {
        let mut case = NetworkCase {
            base_mva: 1.0,
            buses: vec![bus(0, 0.0, 0.0), bus(1, 1.0, 0.5)],
            lines: vec![line(0, 1, 0.01, 0.02, 10.0)],
            generators: vec![gen(0, 5.0, 5.0, 0.0, 10.0, 0.0)],
        };
        // The load is fixed and there is no local support, so u1 = 0.96 is
        // forced; a floor above that is unsatisfiable.
        case.buses[1].u_min = 0.99;
        let net = validate_radial(&case).unwrap();
        let err = build_deterministic(&net, false).solve(&net, &cfg()).unwrap_err();
        assert_eq!(err.status(), DispatchStatus::Infeasible);
        assert!(matches!(
            err,
            FormulationError::StatusNotOptimal {
                mapped: DispatchStatus::Infeasible,
                ..
            }
        ));
    }

    #[test]
    fn flow_limit_flag_caps_apparent_power() {
        // Load (0.6, 0.8) gives |S| = 1.0 through the single line; an
        // active-power-only local generator can relieve it, but costs money,
        // so it only runs once the rating actually binds.
        let case = NetworkCase {
            base_mva: 1.0,
            buses: vec![bus(0, 0.0, 0.0), bus(1, 0.6, 0.8)],
            lines: vec![line(0, 1, 0.005, 0.005, 0.9)],
            generators: vec![
                gen(0, 5.0, 5.0, 0.0, 10.0, 0.0),
                gen(1, 1.0, 0.0, 0.0, 40.0, 0.0),
            ],
        };
        let net = validate_radial(&case).unwrap();
        let relaxed = build_deterministic(&net, false).solve(&net, &cfg()).unwrap();
        assert!(relaxed.g_p[1].abs() < 1e-6, "local unit idle when unconstrained");
        assert!(relaxed.f_p[0].hypot(relaxed.f_q[0]) > 0.99);

        let capped = build_deterministic(&net, true).solve(&net, &cfg()).unwrap();
        assert!(capped.f_p[0].hypot(capped.f_q[0]) <= 0.9 + 1e-6);
        assert!(capped.objective >= relaxed.objective - 1e-7);
        // sqrt(0.9^2 - 0.8^2) caps the active import at ~0.412.
        assert!(capped.g_p[1] > 0.18, "local unit must cover the shortfall");
    }

    #[test]
    fn cc_with_zero_variance_collapses_to_deterministic() {
        let net = chain_with_dg();
        let det = build_deterministic(&net, false).solve(&net, &cfg()).unwrap();
        let risk = RiskConfig::chance_constrained(0.05);
        let cc = build_cc(&net, &[0.0; 3], &[0.0; 3], &risk)
            .solve(&net, &cfg())
            .unwrap();
        let rel = (cc.objective - det.objective).abs() / (1.0 + det.objective.abs());
        assert!(rel < 1e-7, "objectives differ: {} vs {}", det.objective, cc.objective);
        for k in 0..2 {
            assert!((cc.g_p[k] - det.g_p[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn dr_with_point_interval_reproduces_cc_problem() {
        let net = chain_with_dg();
        let var_p = vec![0.0, 0.01, 0.02];
        let var_q = vec![0.0, 0.004, 0.006];
        let cc_risk = RiskConfig::chance_constrained(0.05);
        let cc = build_cc(&net, &var_p, &var_q, &cc_risk);
        let ambiguity = AmbiguityModel {
            n_samples: 100,
            xi: 0.05,
            sigma_hat2_p: var_p.clone(),
            sigma_hat2_q: var_q.clone(),
            lo_p: var_p.clone(),
            hi_p: var_p.clone(),
            lo_q: var_q.clone(),
            hi_q: var_q.clone(),
        };
        let dr = build_drcc(&net, &ambiguity, &RiskConfig::dist_robust(0.05, 0.05));
        assert_eq!(cc.problem.dump(), dr.problem.dump());
        let a = cc.solve(&net, &cfg()).unwrap();
        let b = dr.solve(&net, &cfg()).unwrap();
        let rel = (a.objective - b.objective).abs() / (1.0 + a.objective.abs());
        assert!(rel < 1e-7);
    }

    #[test]
    fn single_generator_takes_all_recourse() {
        let net = two_bus(gen(0, 5.0, 5.0, 0.2, 10.0, 0.0));
        let var_p = vec![0.0, 0.04];
        let var_q = vec![0.0, 0.01];
        let sol = build_cc(&net, &var_p, &var_q, &RiskConfig::chance_constrained(0.05))
            .solve(&net, &cfg())
            .unwrap();
        assert!((sol.alpha[0] - 1.0).abs() < 1e-7);
        assert!(sol.objective > 10.0 * 1.0 + 0.2 * 1.0 - 1e-6, "recourse cost included");
    }

    #[test]
    fn binding_upper_generation_limit_attains_exact_gaussian_level() {
        // Single generator: balance pins g = 1.0 and alpha = 1, so choosing
        // p_max = 1 + z * sqrt(T) makes the tightened upper limit an equality
        // and the exact violation probability of the raw limit equals eta_g.
        let eta_g = 0.07;
        let var_p = vec![0.0, 0.04];
        let t = 0.04f64;
        let z = normal_quantile(1.0 - eta_g);
        let p_max = 1.0 + z * t.sqrt();
        let net = two_bus(gen(0, p_max, 5.0, 0.0, 10.0, 0.0));
        let sol = build_cc(&net, &var_p, &[0.0, 0.0], &RiskConfig::chance_constrained(eta_g))
            .solve(&net, &cfg())
            .unwrap();
        let spread = sol.alpha[0] * t.sqrt();
        assert!(spread > 1e-9);
        assert!((sol.g_p[0] + z * spread - p_max).abs() < 1e-6, "limit must bind");
        let p_violation = 1.0 - normal_cdf((p_max - sol.g_p[0]) / spread);
        assert!(
            (p_violation - eta_g).abs() < 1e-4,
            "exact violation probability {p_violation} vs {eta_g}"
        );
    }

    #[test]
    fn voltage_variance_matches_hand_value() {
        // Single line R=0.01, X=0, error variance 0.04 at bus 1, recourse at
        // the root only: Var(u1) = 4 * 0.01^2 * 0.04 = 1.6e-5.
        let net = two_bus(gen(0, 5.0, 5.0, 0.0, 10.0, 0.0));
        let case = {
            let mut c = net.to_case();
            c.lines[0].resistance = 0.01;
            c.lines[0].reactance = 0.0;
            c
        };
        let net = validate_radial(&case).unwrap();
        let paths = build_path_matrix(&net);
        let var = voltage_variance(&net, &paths, &[0.0, 0.04], &[0.0, 0.0], &[1.0, 0.0]);
        assert!((var[1] - 1.6e-5).abs() < 1e-18, "got {}", var[1]);
        assert_eq!(var[0], 0.0);

        // With the recourse moved onto bus 1 itself, the line also carries
        // the recourse response: Var doubles (T_p equals the bus variance).
        let var = voltage_variance(&net, &paths, &[0.0, 0.04], &[0.0, 0.0], &[0.0, 1.0]);
        assert!((var[1] - 3.2e-5).abs() < 1e-18);

        // No uncertainty, no variance.
        let var = voltage_variance(&net, &paths, &[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(var[1], 0.0);
    }

    #[test]
    fn voltage_variance_grows_toward_the_leaves() {
        let net = chain_with_dg();
        let paths = build_path_matrix(&net);
        let var = voltage_variance(
            &net,
            &paths,
            &[0.0, 0.01, 0.02],
            &[0.0, 0.004, 0.006],
            &[0.5, 0.0, 0.5],
        );
        assert!(var[1] > 0.0);
        assert!(var[2] >= var[1], "downstream bus accumulates more path terms");
    }

    #[test]
    fn expected_cost_hand_value() {
        let gens = vec![gen(0, 5.0, 5.0, 2.0, 0.0, 0.0), gen(1, 5.0, 5.0, 2.0, 0.0, 0.0)];
        let value = expected_cost(&gens, &[1.0, 1.0], &[1.0, 0.0], 0.25);
        assert!((value - 4.5).abs() < 1e-12);
        // Zero variance collapses to the plain quadratic cost.
        let plain = expected_cost(&gens, &[1.0, 1.0], &[1.0, 0.0], 0.0);
        assert!((plain - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nested_formulations_order_their_costs() {
        let net = chain_with_dg();
        let var_p = vec![0.0, 0.0144, 0.0256];
        let var_q = vec![0.0, 0.0016, 0.0036];
        let det = build_deterministic(&net, false).solve(&net, &cfg()).unwrap();
        let cc = build_cc(&net, &var_p, &var_q, &RiskConfig::chance_constrained(0.05))
            .solve(&net, &cfg())
            .unwrap();
        let ambiguity = AmbiguityModel {
            n_samples: 100,
            xi: 0.05,
            sigma_hat2_p: var_p.clone(),
            sigma_hat2_q: var_q.clone(),
            lo_p: var_p.iter().map(|v| 0.77 * v).collect(),
            hi_p: var_p.iter().map(|v| 1.35 * v).collect(),
            lo_q: var_q.iter().map(|v| 0.77 * v).collect(),
            hi_q: var_q.iter().map(|v| 1.35 * v).collect(),
        };
        let dr = build_drcc(&net, &ambiguity, &RiskConfig::dist_robust(0.05, 0.05))
            .solve(&net, &cfg())
            .unwrap();
        assert!(det.objective <= cc.objective + 1e-7);
        assert!(cc.objective <= dr.objective + 1e-7);
    }

    #[test]
    fn co_located_generators_aggregate_their_recourse() {
        // Two identical generators at bus 2 split the recourse; the voltage
        // margin must couple to their *sum*, which the recovery re-checks
        // through the literal per-bus variance sweep.
        let case = NetworkCase {
            base_mva: 1.0,
            buses: vec![bus(0, 0.0, 0.0), bus(1, 0.4, 0.15), bus(2, 0.7, 0.25)],
            lines: vec![line(0, 1, 0.01, 0.02, 10.0), line(1, 2, 0.015, 0.025, 10.0)],
            generators: vec![
                gen(0, 10.0, 10.0, 0.0, 50.0, 0.0),
                gen(2, 1.0, 0.8, 0.2, 10.0, 0.0),
                gen(2, 1.0, 0.8, 0.2, 10.0, 0.0),
            ],
        };
        let net = validate_radial(&case).unwrap();
        let sol = build_cc(
            &net,
            &[0.0, 0.01, 0.02],
            &[0.0, 0.003, 0.005],
            &RiskConfig::chance_constrained(0.05),
        )
        .solve(&net, &cfg())
        .unwrap();
        let total: f64 = sol.alpha.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        // Identical units: the split is symmetric.
        assert!((sol.alpha[1] - sol.alpha[2]).abs() < 1e-5);
        assert!((sol.g_p[1] - sol.g_p[2]).abs() < 1e-5);
    }

    #[test]
    fn assembler_components_match_literal_variance() {
        // A feeder with two laterals; compare the assembler's C/W
        // accumulations against the literal sweep for several recourse
        // splits.
        let case = NetworkCase {
            base_mva: 1.0,
            buses: vec![
                bus(0, 0.0, 0.0),
                bus(1, 0.2, 0.1),
                bus(2, 0.3, 0.1),
                bus(3, 0.1, 0.05),
                bus(4, 0.25, 0.08),
                bus(5, 0.15, 0.06),
            ],
            lines: vec![
                line(0, 1, 0.010, 0.020, 10.0),
                line(1, 2, 0.012, 0.018, 10.0),
                line(1, 3, 0.008, 0.016, 10.0),
                line(2, 4, 0.014, 0.022, 10.0),
                line(3, 5, 0.009, 0.011, 10.0),
            ],
            generators: vec![
                gen(0, 10.0, 10.0, 0.0, 50.0, 0.0),
                gen(4, 2.0, 1.0, 0.1, 10.0, 0.0),
                gen(5, 2.0, 1.0, 0.1, 12.0, 0.0),
            ],
        };
        let net = validate_radial(&case).unwrap();
        let paths = build_path_matrix(&net);
        let var_p = vec![0.0, 0.01, 0.02, 0.005, 0.015, 0.008];
        let var_q = vec![0.0, 0.004, 0.006, 0.002, 0.005, 0.003];
        let (cvec, gpref) = variance_components(&net, &var_p, &var_q);
        for alpha_split in [[0.2, 0.5, 0.3], [1.0, 0.0, 0.0], [0.0, 0.4, 0.6]] {
            let mut alpha_by_bus = vec![0.0; 6];
            for (k, g) in net.generators().iter().enumerate() {
                alpha_by_bus[g.bus] += alpha_split[k];
            }
            let literal = voltage_variance(&net, &paths, &var_p, &var_q, &alpha_by_bus);
            for i in 1..6 {
                let mut acc = cvec[i];
                for b in 1..6 {
                    if alpha_by_bus[b] != 0.0 {
                        let w = shared_path_weight(&paths, &gpref, i, b);
                        acc += w * alpha_by_bus[b] * alpha_by_bus[b];
                    }
                }
                assert!(
                    (4.0 * acc - literal[i]).abs() < 1e-12,
                    "bus {i}: {acc} vs {}",
                    literal[i]
                );
            }
        }
    }

    #[test]
    fn stochastic_margins_tighten_the_voltage_band() {
        // Make the voltage ceiling the active constraint: a cheap generator
        // behind an export-heavy feeder pushes u up; uncertainty should force
        // it to back off relative to the deterministic dispatch.
        let case = NetworkCase {
            base_mva: 1.0,
            buses: vec![bus(0, 0.0, 0.0), {
                let mut b1 = bus(1, 1.0, 0.3);
                b1.u_max = 1.004;
                b1
            }],
            lines: vec![line(0, 1, 0.02, 0.01, 10.0)],
            generators: vec![
                {
                    // The substation absorbs export.
                    let mut g0 = gen(0, 10.0, 10.0, 0.0, 50.0, 0.0);
                    g0.p_min = -10.0;
                    g0
                },
                gen(1, 3.0, 1.0, 0.0, 5.0, 0.0),
            ],
        };
        let net = validate_radial(&case).unwrap();
        let det = build_deterministic(&net, false).solve(&net, &cfg()).unwrap();
        // Cheap local energy exports until the ceiling binds.
        assert!((det.u[1] - 1.004).abs() < 1e-6);
        let var_p = vec![0.0, 0.01];
        let sol = build_cc(&net, &var_p, &[0.0, 0.0], &RiskConfig::chance_constrained(0.05))
            .solve(&net, &cfg())
            .unwrap();
        assert!(
            sol.u[1] < det.u[1] - 1e-4,
            "voltage must retreat: {} vs {}",
            sol.u[1],
            det.u[1]
        );
        assert!(sol.g_p[1] < det.g_p[1] - 1e-4, "export backs off");
    }
}
