//! Monte-Carlo evaluation of dispatches and the experiment drivers.
//!
//! [`evaluate_dispatch`] replays a solved operating point against sampled
//! forecast errors: each sample perturbs the loads, the affine recourse
//! rebalances the generators, the closed-form feeder response yields flows
//! and voltages, and raw (untightened) limits are checked. The two
//! experiment drivers wrap this loop:
//!
//! * [`in_sample_experiment`] fits the stochastic formulations to a
//!   historical sample set and evaluates every dispatch against fresh draws
//!   from the *true* error distribution;
//! * [`out_of_sample_experiment`] evaluates against distributions whose
//!   variances are shifted from the fitted estimate toward (and up to) the
//!   upper edge of the widest fitted confidence interval, probing how each
//!   formulation degrades when the estimate is optimistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::{
    build_cc, build_deterministic, build_drcc, voltage_variance, DispatchMode, DispatchSolution,
    FormulationError, RiskConfig,
};
use crate::net::{build_path_matrix, FlowState, PathMatrix, ValidatedNetwork};
use crate::solver::SolverConfig;
use crate::stats::{
    draw_errors, rng::derive_seed, shifted_variance, AmbiguityModel, ErrorTreatment,
    ForecastErrorModel, SampleSet, StatsError,
};

/// Slack granted to a limit before a breach counts as a violation, absorbing
/// the accuracy floor of interior-point dispatches that bind a limit exactly.
const LIMIT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("participation factors sum to {0}, expected 1")]
    AlphaNotNormalized(f64),
    #[error("sample set covers {got} buses, network has {want}")]
    ShapeMismatch { got: usize, want: usize },
}

/// Aggregated outcome of replaying one dispatch against a sample set.
///
/// Violations are checked against the *raw* network limits, never the
/// tightened ones, and a sample counts toward `violation_prob` when any bus
/// leaves its voltage band. Generator-limit breaches are tallied per
/// generator but tracked separately from the headline probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub samples: usize,
    /// Per-bus count of samples with `u > u_max`.
    pub bus_upper: Vec<usize>,
    /// Per-bus count of samples with `u < u_min`.
    pub bus_lower: Vec<usize>,
    /// Per-generator count of samples breaching any of its limits.
    pub gen_limit: Vec<usize>,
    /// Fraction of samples in which at least one bus leaves its voltage band.
    pub violation_prob: f64,
    /// 95% normal-approximation confidence band for `violation_prob`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Average realized generation cost over the samples.
    pub mean_realized_cost: f64,
    /// Per-bus empirical variance of the squared voltage (1/N, about the
    /// empirical mean).
    pub realized_u_variance: Vec<f64>,
}

/// Feeder response from path aggregation: each line carries the sum of the
/// net injections in the subtree it feeds, and each squared voltage drops by
/// the accumulated `2(R f_p + X f_q)` along its root path. Matches
/// [`lindistflow_state`](crate::net::lindistflow_state), which computes the
/// same quantities by child-to-parent and parent-to-child recursions.
pub fn closed_form_state(
    net: &ValidatedNetwork,
    paths: &PathMatrix,
    inj_p: &[f64],
    inj_q: &[f64],
) -> FlowState {
    let n = net.n_buses();
    let mut f_p = vec![0.0; n - 1];
    let mut f_q = vec![0.0; n - 1];
    for j in 1..n {
        let mut sp = 0.0;
        let mut sq = 0.0;
        for &i in paths.subtree(j) {
            sp += inj_p[i - 1];
            sq += inj_q[i - 1];
        }
        f_p[j - 1] = sp;
        f_q[j - 1] = sq;
    }
    let mut u = vec![1.0; n];
    for i in 1..n {
        let mut drop = 0.0;
        for &k in paths.path(i) {
            drop += net.line_r(k) * f_p[k - 1] + net.line_x(k) * f_q[k - 1];
        }
        u[i] = 1.0 - 2.0 * drop;
    }
    FlowState { f_p, f_q, u }
}

struct SampleOutcome {
    any_violation: bool,
    bus_upper: Vec<bool>,
    bus_lower: Vec<bool>,
    gen_limit: Vec<bool>,
    cost: f64,
    u: Vec<f64>,
}

/// Replays `solution` against every sample in `errors` and aggregates raw
/// limit violations, realized costs, and empirical voltage variances.
///
/// Samples are processed in parallel but reduced in index order, so the
/// report is bit-identical regardless of thread count.
pub fn evaluate_dispatch(
    solution: &DispatchSolution,
    net: &ValidatedNetwork,
    errors: &SampleSet,
) -> Result<ViolationReport, EvalError> {
    let n = net.n_buses();
    if errors.n_buses() != n {
        return Err(EvalError::ShapeMismatch {
            got: errors.n_buses(),
            want: n,
        });
    }
    // Interior-point dispatches satisfy the participation budget to solver
    // accuracy, not exactly; the gate is for genuinely unnormalized input.
    let alpha_sum: f64 = solution.alpha.iter().sum();
    if (alpha_sum - 1.0).abs() > 1e-6 {
        return Err(EvalError::AlphaNotNormalized(alpha_sum));
    }
    let gens = net.generators();
    let paths = build_path_matrix(net);
    let n_samples = errors.n_samples();

    let outcomes: Vec<SampleOutcome> = (0..n_samples)
        .into_par_iter()
        .map(|t| {
            let e_p = errors.p_row(t);
            let e_q = errors.q_row(t);
            let tot_p: f64 = e_p.iter().sum();
            let tot_q: f64 = e_q.iter().sum();
            // Affine recourse: each generator picks up its share of the
            // aggregate error on both power components.
            let g_p: Vec<f64> = solution
                .g_p
                .iter()
                .zip(&solution.alpha)
                .map(|(g, a)| g + a * tot_p)
                .collect();
            let g_q: Vec<f64> = solution
                .g_q
                .iter()
                .zip(&solution.alpha)
                .map(|(g, a)| g + a * tot_q)
                .collect();
            let mut inj_p = vec![0.0; n - 1];
            let mut inj_q = vec![0.0; n - 1];
            for i in 1..n {
                inj_p[i - 1] = net.bus(i).load_p + e_p[i];
                inj_q[i - 1] = net.bus(i).load_q + e_q[i];
            }
            for (k, g) in gens.iter().enumerate() {
                if g.bus > 0 {
                    inj_p[g.bus - 1] -= g_p[k];
                    inj_q[g.bus - 1] -= g_q[k];
                }
            }
            let state = closed_form_state(net, &paths, &inj_p, &inj_q);
            // Dispatches that sit exactly on a limit carry solver-accuracy
            // roundoff; breaches below LIMIT_TOL measure that roundoff, not
            // risk, and are not counted.
            let mut bus_upper = vec![false; n];
            let mut bus_lower = vec![false; n];
            let mut any = false;
            for i in 1..n {
                bus_upper[i] = state.u[i] > net.bus(i).u_max + LIMIT_TOL;
                bus_lower[i] = state.u[i] < net.bus(i).u_min - LIMIT_TOL;
                any |= bus_upper[i] || bus_lower[i];
            }
            let gen_limit: Vec<bool> = gens
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    g_p[k] > g.p_max + LIMIT_TOL
                        || g_p[k] < g.p_min - LIMIT_TOL
                        || g_q[k].abs() > g.q_max + LIMIT_TOL
                })
                .collect();
            let cost = gens
                .iter()
                .zip(&g_p)
                .map(|(g, v)| g.cost.c2 * v * v + g.cost.c1 * v + g.cost.c0)
                .sum();
            SampleOutcome {
                any_violation: any,
                bus_upper,
                bus_lower,
                gen_limit,
                cost,
                u: state.u,
            }
        })
        .collect();

    let mut bus_upper = vec![0usize; n];
    let mut bus_lower = vec![0usize; n];
    let mut gen_limit = vec![0usize; gens.len()];
    let mut violations = 0usize;
    let mut cost_sum = 0.0;
    let mut u_sum = vec![0.0; n];
    for o in &outcomes {
        violations += o.any_violation as usize;
        cost_sum += o.cost;
        for i in 0..n {
            bus_upper[i] += o.bus_upper[i] as usize;
            bus_lower[i] += o.bus_lower[i] as usize;
            u_sum[i] += o.u[i];
        }
        for k in 0..gens.len() {
            gen_limit[k] += o.gen_limit[k] as usize;
        }
    }
    let inv = 1.0 / n_samples as f64;
    let u_mean: Vec<f64> = u_sum.iter().map(|s| s * inv).collect();
    let mut u_var = vec![0.0; n];
    for o in &outcomes {
        for i in 0..n {
            let d = o.u[i] - u_mean[i];
            u_var[i] += d * d;
        }
    }
    for v in &mut u_var {
        *v *= inv;
    }
    let p_hat = violations as f64 * inv;
    let half = 1.96 * (p_hat * (1.0 - p_hat) * inv).sqrt();
    Ok(ViolationReport {
        samples: n_samples,
        bus_upper,
        bus_lower,
        gen_limit,
        violation_prob: p_hat,
        ci_low: (p_hat - half).max(0.0),
        ci_high: (p_hat + half).min(1.0),
        mean_realized_cost: cost_sum * inv,
        realized_u_variance: u_var,
    })
}

/// Parameter grid shared by the experiment drivers. `samples` counts the
/// Monte-Carlo evaluation draws per distribution; `seed` feeds all of them
/// through fixed derivations so reruns are bit-identical. `eta_g` overrides
/// the generation violation level (defaults to each point's `eta_v`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub eta_v: Vec<f64>,
    pub xi: Vec<f64>,
    pub delta: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub eta_g: Option<f64>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            eta_v: vec![0.03, 0.05, 0.10],
            xi: vec![0.25, 0.05, 0.005],
            delta: vec![0.33, 0.66, 1.0],
            samples: 750,
            seed: 1,
            eta_g: None,
        }
    }
}

/// One evaluated (mode, grid point) combination. Deterministic and
/// chance-constrained rows repeat across `xi` values they do not depend on,
/// keeping the output rectangular for downstream tabulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub mode: DispatchMode,
    pub eta_v: f64,
    pub xi: f64,
    pub delta: f64,
    pub violation_prob: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Analytic expected cost (the dispatch objective).
    pub expected_cost: f64,
    /// Expected cost normalized to the chance-constrained dispatch at the
    /// same `eta_v`.
    pub relative_cost: f64,
    pub mean_realized_cost: f64,
    /// Largest per-bus ratio of empirical to analytic voltage variance —
    /// reported as a diagnostic of the variance proxy, never asserted.
    pub max_variance_ratio: f64,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dispatch(#[from] FormulationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Largest per-bus ratio of the empirical squared-voltage variance to the
/// analytic proxy evaluated at the sampling distribution's variances.
fn max_variance_ratio(
    net: &ValidatedNetwork,
    paths: &PathMatrix,
    var_p: &[f64],
    var_q: &[f64],
    solution: &DispatchSolution,
    report: &ViolationReport,
) -> f64 {
    let mut alpha_by_bus = vec![0.0; net.n_buses()];
    for (k, g) in net.generators().iter().enumerate() {
        alpha_by_bus[g.bus] += solution.alpha[k];
    }
    let analytic = voltage_variance(net, paths, var_p, var_q, &alpha_by_bus);
    let mut best = 0.0f64;
    for i in 1..net.n_buses() {
        if analytic[i] > 1e-300 {
            best = best.max(report.realized_u_variance[i] / analytic[i]);
        }
    }
    best
}

fn risk(mode: DispatchMode, eta_v: f64, xi: f64, eta_g: Option<f64>) -> RiskConfig {
    let base = match mode {
        DispatchMode::ChanceConstrained => RiskConfig::chance_constrained(eta_v),
        DispatchMode::DistRobust => RiskConfig::dist_robust(eta_v, xi),
        DispatchMode::Deterministic => RiskConfig::deterministic(),
    };
    match eta_g {
        Some(g) => base.with_eta_g(g),
        None => base,
    }
}

/// Fits the stochastic dispatches to `history`, solves every mode on the
/// grid, and evaluates all of them against `grid.samples` fresh draws from
/// the *true* error distribution `truth`. Relative costs are normalized to
/// the chance-constrained dispatch at the same `eta_v`; deterministic and
/// chance-constrained rows repeat across `xi`.
pub fn in_sample_experiment(
    net: &ValidatedNetwork,
    history: &SampleSet,
    truth: &ForecastErrorModel,
    treatment: ErrorTreatment,
    grid: &ExperimentGrid,
) -> Result<Vec<ExperimentRow>, ExperimentError> {
    assert!(!grid.eta_v.is_empty() && !grid.xi.is_empty(), "empty grid");
    let cfg = SolverConfig::default();
    let paths = build_path_matrix(net);
    let eval_errors = draw_errors(truth, treatment, grid.samples, derive_seed(grid.seed, 0));
    let eval_var_p = truth.var_p();
    let eval_var_q = truth.var_q(treatment);

    let det = build_deterministic(net, false).solve(net, &cfg)?;
    let det_report = evaluate_dispatch(&det, net, &eval_errors)?;
    let det_ratio = max_variance_ratio(net, &paths, &eval_var_p, &eval_var_q, &det, &det_report);

    // The variance estimate is xi-independent; fit once for it.
    let base_fit = AmbiguityModel::fit(history, grid.xi[0])?;

    let mut rows = Vec::new();
    for &eta_v in &grid.eta_v {
        let cc_cfg = risk(DispatchMode::ChanceConstrained, eta_v, grid.xi[0], grid.eta_g);
        let cc = build_cc(net, &base_fit.sigma_hat2_p, &base_fit.sigma_hat2_q, &cc_cfg)
            .solve(net, &cfg)?;
        let cc_report = evaluate_dispatch(&cc, net, &eval_errors)?;
        let cc_ratio = max_variance_ratio(net, &paths, &eval_var_p, &eval_var_q, &cc, &cc_report);
        for &xi in &grid.xi {
            let ambiguity = AmbiguityModel::fit(history, xi)?;
            let dr_cfg = risk(DispatchMode::DistRobust, eta_v, xi, grid.eta_g);
            let dr = build_drcc(net, &ambiguity, &dr_cfg).solve(net, &cfg)?;
            let dr_report = evaluate_dispatch(&dr, net, &eval_errors)?;
            let dr_ratio =
                max_variance_ratio(net, &paths, &eval_var_p, &eval_var_q, &dr, &dr_report);
            for (mode, sol, report, ratio) in [
                (DispatchMode::Deterministic, &det, &det_report, det_ratio),
                (DispatchMode::ChanceConstrained, &cc, &cc_report, cc_ratio),
                (DispatchMode::DistRobust, &dr, &dr_report, dr_ratio),
            ] {
                rows.push(ExperimentRow {
                    mode,
                    eta_v,
                    xi,
                    delta: 0.0,
                    violation_prob: report.violation_prob,
                    ci_low: report.ci_low,
                    ci_high: report.ci_high,
                    expected_cost: sol.objective,
                    relative_cost: sol.objective / cc.objective,
                    mean_realized_cost: report.mean_realized_cost,
                    max_variance_ratio: ratio,
                });
            }
        }
    }
    Ok(rows)
}

/// Solves the chance-constrained and distributionally robust dispatches on
/// the grid, then evaluates them against error distributions whose variances
/// are shifted a fraction `delta` of the way from the fitted estimate to the
/// upper edge of the *widest* fitted interval (the smallest `xi` in the
/// grid). All shifts reuse one seeded standard-normal tensor, so rows differ
/// across `delta` only through the scaling.
pub fn out_of_sample_experiment(
    net: &ValidatedNetwork,
    history: &SampleSet,
    treatment: ErrorTreatment,
    grid: &ExperimentGrid,
) -> Result<Vec<ExperimentRow>, ExperimentError> {
    assert!(
        !grid.eta_v.is_empty() && !grid.xi.is_empty() && !grid.delta.is_empty(),
        "empty grid"
    );
    let cfg = SolverConfig::default();
    let paths = build_path_matrix(net);
    let ref_xi = grid.xi.iter().cloned().fold(f64::INFINITY, f64::min);
    let ref_fit = AmbiguityModel::fit(history, ref_xi)?;
    let n = net.n_buses();

    // Estimated reactive-to-active ratio, only consulted when the treatment
    // couples the components.
    let tan_phi: Vec<f64> = (0..n)
        .map(|i| {
            if ref_fit.sigma_hat2_p[i] > 0.0 {
                (ref_fit.sigma_hat2_q[i] / ref_fit.sigma_hat2_p[i]).sqrt()
            } else {
                0.0
            }
        })
        .collect();

    struct Solved {
        mode: DispatchMode,
        eta_v: f64,
        xi: f64,
        solution: DispatchSolution,
    }
    let mut solved: Vec<Solved> = Vec::new();
    for &eta_v in &grid.eta_v {
        let cc_cfg = risk(DispatchMode::ChanceConstrained, eta_v, ref_xi, grid.eta_g);
        let cc = build_cc(net, &ref_fit.sigma_hat2_p, &ref_fit.sigma_hat2_q, &cc_cfg)
            .solve(net, &cfg)?;
        for &xi in &grid.xi {
            let ambiguity = AmbiguityModel::fit(history, xi)?;
            let dr_cfg = risk(DispatchMode::DistRobust, eta_v, xi, grid.eta_g);
            let dr = build_drcc(net, &ambiguity, &dr_cfg).solve(net, &cfg)?;
            solved.push(Solved {
                mode: DispatchMode::ChanceConstrained,
                eta_v,
                xi,
                solution: cc.clone(),
            });
            solved.push(Solved {
                mode: DispatchMode::DistRobust,
                eta_v,
                xi,
                solution: dr,
            });
        }
    }

    let mut rows = Vec::new();
    for &delta in &grid.delta {
        let var_p: Vec<f64> = (0..n)
            .map(|i| shifted_variance(ref_fit.sigma_hat2_p[i], ref_fit.hi_p[i], delta))
            .collect();
        let var_q: Vec<f64> = (0..n)
            .map(|i| shifted_variance(ref_fit.sigma_hat2_q[i], ref_fit.hi_q[i], delta))
            .collect();
        let model = ForecastErrorModel {
            sigma_p: var_p.iter().map(|v| v.sqrt()).collect(),
            sigma_q: var_q.iter().map(|v| v.sqrt()).collect(),
            tan_phi: tan_phi.clone(),
        };
        let errors = draw_errors(&model, treatment, grid.samples, derive_seed(grid.seed, 0));
        let eval_var_q = model.var_q(treatment);
        for s in &solved {
            let report = evaluate_dispatch(&s.solution, net, &errors)?;
            let ratio =
                max_variance_ratio(net, &paths, &var_p, &eval_var_q, &s.solution, &report);
            // Normalize to the paired chance-constrained dispatch.
            let cc_obj = solved
                .iter()
                .find(|o| {
                    o.mode == DispatchMode::ChanceConstrained && o.eta_v == s.eta_v && o.xi == s.xi
                })
                .expect("cc row exists for every grid point")
                .solution
                .objective;
            rows.push(ExperimentRow {
                mode: s.mode,
                eta_v: s.eta_v,
                xi: s.xi,
                delta,
                violation_prob: report.violation_prob,
                ci_low: report.ci_low,
                ci_high: report.ci_high,
                expected_cost: s.solution.objective,
                relative_cost: s.solution.objective / cc_obj,
                mean_realized_cost: report.mean_realized_cost,
                max_variance_ratio: ratio,
            });
        }
    }
    Ok(rows)
}
