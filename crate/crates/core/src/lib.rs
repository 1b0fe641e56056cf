//! Chance-constrained and distributionally robust optimal power flow (OPF)
//! for radial distribution feeders.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`net`] — network data model, radiality validation, path matrix, and a
//!    linearized power-flow evaluator for radial feeders.
//! 2. [`stats`] — forecast-error models, sample sets, chi-square variance
//!    ambiguity intervals, and seeded Gaussian sampling.
//! 3. [`conic`] — a canonical cone-program container (linear objective,
//!    sparse equalities, free/nonnegative/second-order cone variables).
//! 4. [`formulation`] — builders that lower deterministic, chance-constrained
//!    (cc), and distributionally robust (drcc) dispatch problems to the
//!    canonical form, plus solution recovery with independent re-verification.
//! 5. [`solver`] — an embedded primal-dual interior-point method for the
//!    canonical form (homogeneous self-dual embedding, Nesterov-Todd scaling,
//!    Mehrotra predictor-corrector, sparse quasi-definite LDL^T).
//! 6. [`eval`] — Monte-Carlo replay of solved dispatches against sampled
//!    forecast errors, and the in-sample / out-of-sample experiment drivers.
//! 7. [`io`] — case-file and sample-CSV formats, plus bundled feeder cases.

pub mod conic;
pub mod eval;
pub mod formulation;
pub mod io;
pub mod net;
pub mod solver;
pub mod stats;

pub use conic::{ConeSeg, ConicProblem};
pub use eval::{
    evaluate_dispatch, in_sample_experiment, out_of_sample_experiment, EvalError, ExperimentGrid,
    ExperimentRow, ViolationReport,
};
pub use formulation::{
    build_cc, build_deterministic, build_drcc, expected_cost, voltage_variance, DispatchMode,
    DispatchProblem, DispatchSolution, DispatchStatus, FormulationError, RiskConfig,
};
pub use net::{Bus, Generator, Line, NetworkCase, PathMatrix, ValidatedNetwork};
pub use solver::{SolverConfig, SolverResult, SolverStatus};
pub use stats::{AmbiguityModel, ErrorTreatment, ForecastErrorModel, SampleSet};
