//! Experiment configuration, the consensus-network generator and the
//! end-to-end pipeline behind the command-line tool.
//!
//! Stages run in a fixed order: validation, model-based synthesis,
//! exploration, data assembly, learning, cross-verification and
//! evaluation. Every failure is reported with the stage it came from.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bound::{bound_report, BoundReport, OperatorMode};
use crate::error::{Error, Result};
use crate::learner::{
    build_data_matrices, contiguous_windows, rank_check, rsrl, Availability, DataMatrices,
    IterationDiagnostics, LearnOutcome, LearnerConfig, LsMode, RankReport,
};
use crate::linalg::{ensure_shape, sorted_eigenvalues, spectral_abscissa};
use crate::model::{
    validate, LqrWeights, LtiSystem, RobustnessParams, StructurePattern, SynthesisProblem,
    ValidationReport,
};
use crate::sim::{
    evaluate_cost, iss_envelope, simulate, ExoModel, ExplorationSettings, ExplorationSignal,
    IssReport, SimConfig, Trajectory,
};
use crate::synthesis::{
    closed_loop_cost_matrix, default_initial_gain, structured_policy_iteration,
    verify_modified_are, IterationOptions, SynthesisResult, SynthesisWarning,
};

pub const SCHEMA_VERSION: u32 = 1;

/// A matrix in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    /// Row-major nested arrays.
    Rows(Vec<Vec<f64>>),
    ScaledIdentity { scaled_identity: f64 },
    Diagonal { diagonal: Vec<f64> },
}

impl MatrixSpec {
    pub fn build(&self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Rows(data) => matrix_from_rows(data, what)?,
            MatrixSpec::ScaledIdentity { scaled_identity } => {
                DMatrix::identity(rows, cols) * *scaled_identity
            }
            MatrixSpec::Diagonal { diagonal } => {
                if diagonal.len() != rows || rows != cols {
                    return Err(Error::ShapeMismatch(format!(
                        "{what}: diagonal of length {} for a {rows}x{cols} matrix",
                        diagonal.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(diagonal))
            }
        };
        ensure_shape(&m, rows, cols, what)?;
        Ok(m)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Rows(rows_of(m))
    }
}

pub fn matrix_from_rows(data: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = data.len();
    let c = data.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || data.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidConfig(format!("{what} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| data[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|row| row.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    Explicit { a: MatrixSpec, b: MatrixSpec },
    /// `B = Iₙ`; edges are 1-based `(i, j, α_ij)`.
    Consensus { n: usize, edges: Vec<(usize, usize, f64)> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PatternSpec {
    #[default]
    Full,
    /// 1-based `(row, col)` entries that must stay zero.
    Forbidden { entries: Vec<(usize, usize)> },
    Indicator { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub q: MatrixSpec,
    /// Defaults to the identity.
    #[serde(default)]
    pub r: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSpec {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExoSpec {
    #[default]
    None,
    /// `ζ = c sin(t) x`
    ScalarSinusoid { c: f64 },
    /// `ζ = sin(ωt + φ) G x`
    SinusoidalGain {
        gain: MatrixSpec,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub dt: f64,
    pub t_explore: f64,
    pub t_eval: f64,
    /// Integrator steps per recorded sample.
    pub substeps: usize,
    /// Defaults to all ones.
    pub x0: Option<Vec<f64>>,
    /// Apply `u = −K₀x + u₀` during exploration instead of `u = u₀`.
    pub explore_with_initial_gain: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_explore: 2.0,
            t_eval: 20.0,
            substeps: 1,
            x0: None,
            explore_with_initial_gain: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Window length; defaults to one step.
    pub window: Option<f64>,
    /// Window count; defaults to twice `n(n+1)/2 + |K| + nm`.
    pub samples: Option<usize>,
    pub availability: Availability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        let d = IterationOptions::default();
        Self {
            tol: d.tol,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub pattern: PatternSpec,
    pub weights: WeightsSpec,
    #[serde(default)]
    pub robustness: RobustnessSpec,
    #[serde(default)]
    pub exo: ExoSpec,
    #[serde(default)]
    pub exploration: ExplorationSettings,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub synthesis: SynthesisSpec,
    /// Defaults to zero when `A + βI` is Hurwitz, otherwise a computed
    /// stabilizing gain.
    #[serde(default)]
    pub initial_gain: Option<MatrixSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// The six-agent consensus benchmark shipped with the crate.
pub const PAPER_6AGENT_CONFIG: &str = include_str!("../configs/paper-6agent.json");

pub fn paper_6agent_config() -> ExperimentConfig {
    ExperimentConfig::from_json(PAPER_6AGENT_CONFIG).expect("bundled config parses")
}

/// Laplacian consensus dynamics: `A_ij = A_ji = α_ij` per undirected edge,
/// `A_ii = −Σ_j α_ij`, and `B = Iₙ`. Edges are 1-based.
pub fn make_consensus_system(n: usize, edges: &[(usize, usize, f64)]) -> Result<LtiSystem> {
    if n == 0 {
        return Err(Error::InvalidEdge("network needs at least one agent".into()));
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for &(i, j, w) in edges {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::InvalidEdge(format!("({i}, {j}) outside 1..={n}")));
        }
        if i == j {
            return Err(Error::InvalidEdge(format!("self-loop at agent {i}")));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidEdge(format!("({i}, {j}) has weight {w}, need > 0")));
        }
        let (i, j) = (i - 1, j - 1);
        if a[(i, j)] != 0.0 {
            return Err(Error::InvalidEdge(format!("({}, {}) listed twice", i + 1, j + 1)));
        }
        a[(i, j)] = w;
        a[(j, i)] = w;
        a[(i, i)] -= w;
        a[(j, j)] -= w;
    }
    LtiSystem::new(a, DMatrix::identity(n, n))
}

/// A config resolved into numerical objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub problem: SynthesisProblem,
    pub exo: ExoModel,
    pub exploration: ExplorationSignal,
    pub x0: DVector<f64>,
    pub simulation: SimulationSpec,
    pub data: DataSpec,
    pub learner: LearnerConfig,
    pub synthesis: IterationOptions,
    initial_gain: Option<DMatrix<f64>>,
}

impl Experiment {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let system = match &config.system {
            SystemSpec::Explicit { a, b } => {
                let a = match a {
                    MatrixSpec::Rows(rows) => matrix_from_rows(rows, "A")?,
                    _ => {
                        return Err(Error::InvalidConfig(
                            "A must be given as explicit rows".into(),
                        ))
                    }
                };
                let n = a.nrows();
                let b = match b {
                    MatrixSpec::Rows(rows) => matrix_from_rows(rows, "B")?,
                    other => other.build(n, n, "B")?,
                };
                LtiSystem::new(a, b)?
            }
            SystemSpec::Consensus { n, edges } => make_consensus_system(*n, edges)?,
        };
        let (n, m) = (system.states(), system.inputs());
        let pattern = match &config.pattern {
            PatternSpec::Full => StructurePattern::full(m, n),
            PatternSpec::Forbidden { entries } => {
                let zero_based = entries
                    .iter()
                    .map(|&(i, j)| {
                        if i == 0 || j == 0 {
                            Err(Error::InvalidPattern(format!(
                                "entries are 1-based, got ({i}, {j})"
                            )))
                        } else {
                            Ok((i - 1, j - 1))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                StructurePattern::with_forbidden(m, n, &zero_based)?
            }
            PatternSpec::Indicator { matrix } => {
                StructurePattern::from_indicator(&matrix_from_rows(matrix, "pattern indicator")?)?
            }
        };
        let q = config.weights.q.build(n, n, "Q")?;
        let r = match &config.weights.r {
            Some(spec) => spec.build(m, m, "R")?,
            None => DMatrix::identity(m, m),
        };
        let weights = LqrWeights::new(q, r)?;
        let rob = config.robustness;
        let robustness = RobustnessParams::new(rob.alpha, rob.beta, rob.d)?;
        let problem = SynthesisProblem::new(system, pattern, weights, robustness)?;

        let exo = match &config.exo {
            ExoSpec::None => ExoModel::None,
            ExoSpec::ScalarSinusoid { c } => {
                if m != n {
                    return Err(Error::InvalidConfig(
                        "scalar-sinusoid exogenous input needs as many inputs as states".into(),
                    ));
                }
                ExoModel::scalar_sinusoid(*c, rob.alpha)?
            }
            ExoSpec::SinusoidalGain { gain, omega, phase } => {
                ExoModel::sinusoidal_gain(gain.build(m, n, "exogenous gain")?, *omega, *phase, rob.alpha)?
            }
        };
        let exploration = ExplorationSignal::seeded(m, &config.exploration, config.seed)?;
        let x0 = match &config.simulation.x0 {
            Some(v) if v.len() == n => DVector::from_column_slice(v),
            Some(v) => {
                return Err(Error::ShapeMismatch(format!(
                    "x0 has length {}, system has {n} states",
                    v.len()
                )))
            }
            None => DVector::from_element(n, 1.0),
        };
        let initial_gain = config
            .initial_gain
            .as_ref()
            .map(|spec| spec.build(m, n, "initial gain"))
            .transpose()?;
        if !(config.learner.tol > 0.0) {
            return Err(Error::InvalidConfig("learner tol must be positive".into()));
        }
        Ok(Self {
            name: config.name.clone(),
            seed: config.seed,
            problem,
            exo,
            exploration,
            x0,
            simulation: config.simulation.clone(),
            data: config.data.clone(),
            learner: config.learner,
            synthesis: IterationOptions {
                tol: config.synthesis.tol,
                max_iters: config.synthesis.max_iters,
            },
            initial_gain,
        })
    }

    pub fn initial_gain(&self) -> Result<DMatrix<f64>> {
        match &self.initial_gain {
            Some(k) => Ok(k.clone()),
            None => default_initial_gain(&self.problem),
        }
    }

    pub fn with_mode(mut self, mode: LsMode) -> Self {
        self.learner.mode = mode;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Validation,
    Synthesis,
    Exploration,
    Data,
    Learning,
    Evaluation,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Validation => "validation",
            Stage::Synthesis => "synthesis",
            Stage::Exploration => "exploration",
            Stage::Data => "data",
            Stage::Learning => "learning",
            Stage::Evaluation => "evaluation",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Eigenvalue as `[re, im]`.
pub type EigenPair = [f64; 2];

pub fn spectrum(m: &DMatrix<f64>) -> Result<Vec<EigenPair>> {
    Ok(sorted_eigenvalues(m)?
        .into_iter()
        .map(|z| [z.re, z.im])
        .collect())
}

/// True iff every forbidden entry of `k` is exactly zero.
pub fn pattern_exact(k: &DMatrix<f64>, pattern: &StructurePattern) -> bool {
    pattern
        .forbidden_entries()
        .into_iter()
        .all(|(i, j)| k[(i, j)] == 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub warnings: Vec<SynthesisWarning>,
    pub pattern_exact: bool,
    pub closed_loop_eigenvalues: Vec<EigenPair>,
    pub closed_loop_abscissa: f64,
}

impl GainReport {
    pub fn from_result(
        res: &SynthesisResult,
        system: &LtiSystem,
        pattern: &StructurePattern,
    ) -> Result<Self> {
        let acl = system.closed_loop(&res.k)?;
        Ok(Self {
            p: rows_of(&res.p),
            k: rows_of(&res.k),
            l: rows_of(&res.l),
            iterations: res.iterations,
            residual: res.residual,
            history: res.history.clone(),
            warnings: res.warnings.clone(),
            pattern_exact: pattern_exact(&res.k, pattern),
            closed_loop_eigenvalues: spectrum(&acl)?,
            closed_loop_abscissa: spectral_abscissa(&acl)?,
        })
    }
}

/// Model-based structured solution plus the unstructured references.
#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub validation: ValidationReport,
    pub initial_gain: DMatrix<f64>,
    pub structured: SynthesisResult,
    /// Unconstrained solution at the configured `β`.
    pub dense_shifted: SynthesisResult,
    /// Unconstrained LQR optimum (`β = 0`).
    pub dense_optimal: SynthesisResult,
}

fn relaxed(problem: &SynthesisProblem, beta: f64) -> Result<SynthesisProblem> {
    let n = problem.states();
    let m = problem.inputs();
    let rob = problem.robustness;
    SynthesisProblem::new(
        problem.system.clone(),
        StructurePattern::full(m, n),
        problem.weights.clone(),
        RobustnessParams::new(rob.alpha, beta, rob.d)?,
    )
}

pub fn synthesize(exp: &Experiment) -> std::result::Result<SynthesisOutcome, StageError> {
    let validation = validate(&exp.problem);
    if !validation.passed() {
        return Err(StageError {
            stage: Stage::Validation,
            source: Error::InvalidProblem(validation.failures().join("; ")),
        });
    }
    let initial_gain = exp.initial_gain().at(Stage::Synthesis)?;
    let structured = structured_policy_iteration(&exp.problem, Some(&initial_gain), exp.synthesis)
        .at(Stage::Synthesis)?;
    // The structured gain stabilizes A − BK with margin β, so it is a valid
    // start for both unstructured references.
    let beta = exp.problem.robustness.beta;
    let dense_shifted = structured_policy_iteration(
        &relaxed(&exp.problem, beta).at(Stage::Synthesis)?,
        Some(&structured.k),
        exp.synthesis,
    )
    .at(Stage::Synthesis)?;
    let dense_optimal = structured_policy_iteration(
        &relaxed(&exp.problem, 0.0).at(Stage::Synthesis)?,
        Some(&structured.k),
        exp.synthesis,
    )
    .at(Stage::Synthesis)?;
    Ok(SynthesisOutcome {
        validation,
        initial_gain,
        structured,
        dense_shifted,
        dense_optimal,
    })
}

/// Suboptimality certificate of the structured gain: constants from the
/// plant itself, measured gap between the structured gain's true cost and
/// the unconstrained LQR optimum at `x₀`.
pub fn certificate(exp: &Experiment, synth: &SynthesisOutcome) -> Result<BoundReport> {
    let problem = &exp.problem;
    let (q, r) = (problem.weights.q(), problem.weights.r());
    let cost = closed_loop_cost_matrix(&problem.system, &synth.structured.k, q, r)?;
    bound_report(
        problem.system.a(),
        problem.system.b(),
        r,
        &synth.structured.l,
        &exp.x0,
        Some((&cost, &synth.dense_optimal.p)),
        &OperatorMode::Literal,
    )
}

/// Exploration run used as learning data, with running integrals.
pub fn explore(exp: &Experiment, initial_gain: &DMatrix<f64>) -> Result<Trajectory> {
    let gain = exp
        .simulation
        .explore_with_initial_gain
        .then_some(initial_gain);
    simulate(
        &exp.problem.system,
        gain,
        &exp.exploration,
        &exp.exo,
        &exp.x0,
        &SimConfig::new(exp.simulation.t_explore, exp.simulation.dt)
            .with_substeps(exp.simulation.substeps)
            .with_integrals(),
    )
}

#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub data: DataMatrices,
    pub rank: RankReport,
    pub learned: LearnOutcome,
}

pub fn required_samples(exp: &Experiment) -> usize {
    let n = exp.problem.states();
    let m = exp.problem.inputs();
    2 * (n * (n + 1) / 2 + exp.problem.pattern.nnz() + n * m)
}

pub fn learn_from_trajectory(
    exp: &Experiment,
    trajectory: &Trajectory,
    initial_gain: &DMatrix<f64>,
) -> std::result::Result<LearningOutcome, StageError> {
    let window = exp.data.window.unwrap_or(trajectory.dt);
    let count = exp.data.samples.unwrap_or_else(|| required_samples(exp));
    let times =
        contiguous_windows(trajectory, window, count, &exp.data.availability).at(Stage::Data)?;
    let data =
        build_data_matrices(trajectory, window, &times, &exp.data.availability).at(Stage::Data)?;
    let rank = rank_check(&data, &exp.problem.pattern);
    let learned = rsrl(
        &exp.problem.learning_task(),
        &data,
        initial_gain,
        &exp.learner,
    )
    .at(Stage::Learning)?;
    Ok(LearningOutcome {
        data,
        rank,
        learned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnedReport {
    pub mode: LsMode,
    pub window: f64,
    pub samples: usize,
    pub rank: RankReport,
    pub result: GainReport,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Modified Riccati residual of the learned `P` against the true plant.
    pub riccati_residual: f64,
    /// `‖K_learned − K_model‖_F / ‖K_model‖_F`
    pub gain_relative_error: f64,
    /// `‖P_learned − P_model‖_F / ‖P_model‖_F`
    pub value_relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSummary {
    /// `x₀ᵀXx₀` for the model-based structured gain on the nominal plant.
    pub structured_model: f64,
    /// Same for the learned gain.
    pub structured_learned: f64,
    /// Trapezoidal cost of the simulated nominal closed loop with the
    /// learned gain.
    pub structured_learned_quadrature: f64,
    pub quadrature_relative_difference: f64,
    /// Unconstrained LQR optimum `x₀ᵀP̄x₀`.
    pub dense_optimal: f64,
    /// True cost of the unconstrained gain at the configured `β`.
    pub dense_shifted: f64,
    /// `(structured_model − dense_optimal) / dense_optimal`
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub states: usize,
    pub inputs: usize,
    pub pattern_nnz: usize,
    pub validation: ValidationReport,
    pub open_loop_eigenvalues: Vec<EigenPair>,
    pub initial_gain: Vec<Vec<f64>>,
    pub model_based: GainReport,
    pub dense_optimal: GainReport,
    pub dense_shifted: GainReport,
    pub learned: LearnedReport,
    pub costs: CostSummary,
    /// Certificate for the structured gain against the LQR optimum; absent
    /// when the operator is singular.
    pub bound: Option<BoundReport>,
    /// Envelope check on the perturbed closed loop with the learned gain.
    pub iss: IssReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub synthesis_ms: f64,
    pub exploration_ms: f64,
    pub learning_ms: f64,
    pub evaluation_ms: f64,
    pub total_ms: f64,
}

/// Everything a run produces. Wall-clock timing is kept out of the report
/// so repeated runs give identical `report.json` files.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub exploration: Trajectory,
    pub closed_loop: Trajectory,
    pub timing: StageTiming,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn quadratic(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(p * x))
}

pub fn run_experiment(config: &ExperimentConfig) -> std::result::Result<ExperimentRun, StageError> {
    let exp = Experiment::from_config(config).at(Stage::Config)?;
    run(&exp)
}

pub fn run(exp: &Experiment) -> std::result::Result<ExperimentRun, StageError> {
    let clock = Instant::now();
    let problem = &exp.problem;
    let system = &problem.system;
    let pattern = &problem.pattern;
    let (q, r) = (problem.weights.q(), problem.weights.r());

    let synth = synthesize(exp)?;
    let t_synth = clock.elapsed();

    let exploration = explore(exp, &synth.initial_gain).at(Stage::Exploration)?;
    let t_explore = clock.elapsed();

    let learning = learn_from_trajectory(exp, &exploration, &synth.initial_gain)?;
    let t_learn = clock.elapsed();

    let learned = &learning.learned.result;
    let model = &synth.structured;
    let learned_report = LearnedReport {
        mode: exp.learner.mode,
        window: learning.data.window,
        samples: learning.data.rows(),
        rank: learning.rank,
        result: GainReport::from_result(learned, system, pattern).at(Stage::Evaluation)?,
        diagnostics: learning.learned.diagnostics.clone(),
        riccati_residual: verify_modified_are(problem, &learned.p).at(Stage::Evaluation)?,
        gain_relative_error: relative(&learned.k, &model.k),
        value_relative_error: relative(&learned.p, &model.p),
    };

    let x0 = &exp.x0;
    let cost_of = |k: &DMatrix<f64>| -> Result<f64> {
        Ok(quadratic(&closed_loop_cost_matrix(system, k, q, r)?, x0))
    };
    let eval_cfg =
        SimConfig::new(exp.simulation.t_eval, exp.simulation.dt).with_substeps(exp.simulation.substeps);
    let silent = ExplorationSignal::silent(problem.inputs());
    let nominal = simulate(system, Some(&learned.k), &silent, &ExoModel::None, x0, &eval_cfg)
        .at(Stage::Evaluation)?;
    let learned_cost_matrix =
        closed_loop_cost_matrix(system, &learned.k, q, r).at(Stage::Evaluation)?;
    let quad = evaluate_cost(&nominal, q, r, Some(&learned_cost_matrix)).at(Stage::Evaluation)?;
    let structured_model = cost_of(&model.k).at(Stage::Evaluation)?;
    let dense_optimal = quadratic(&synth.dense_optimal.p, x0);
    let costs = CostSummary {
        structured_model,
        structured_learned: quad.analytic.unwrap_or(f64::NAN),
        structured_learned_quadrature: quad.quadrature,
        quadrature_relative_difference: quad.relative_difference.unwrap_or(f64::NAN),
        dense_optimal,
        dense_shifted: cost_of(&synth.dense_shifted.k).at(Stage::Evaluation)?,
        relative_gap: (structured_model - dense_optimal) / dense_optimal,
    };

    let bound = match certificate(exp, &synth) {
        Ok(b) => Some(b),
        Err(Error::OperatorSingular) => None,
        Err(e) => return Err(StageError { stage: Stage::Evaluation, source: e }),
    };

    let closed_loop = simulate(system, Some(&learned.k), &silent, &exp.exo, x0, &eval_cfg)
        .at(Stage::Evaluation)?;
    let acl = system.closed_loop(&learned.k).at(Stage::Evaluation)?;
    let iss = iss_envelope(&acl, system.b(), &closed_loop).at(Stage::Evaluation)?;
    let t_eval = clock.elapsed();

    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        name: exp.name.clone(),
        seed: exp.seed,
        states: problem.states(),
        inputs: problem.inputs(),
        pattern_nnz: pattern.nnz(),
        validation: synth.validation.clone(),
        open_loop_eigenvalues: spectrum(system.a()).at(Stage::Evaluation)?,
        initial_gain: rows_of(&synth.initial_gain),
        model_based: GainReport::from_result(model, system, pattern).at(Stage::Evaluation)?,
        dense_optimal: GainReport::from_result(&synth.dense_optimal, system, &StructurePattern::full(problem.inputs(), problem.states()))
            .at(Stage::Evaluation)?,
        dense_shifted: GainReport::from_result(&synth.dense_shifted, system, &StructurePattern::full(problem.inputs(), problem.states()))
            .at(Stage::Evaluation)?,
        learned: learned_report,
        costs,
        bound,
        iss,
    };
    Ok(ExperimentRun {
        report,
        exploration,
        closed_loop,
        timing: StageTiming {
            synthesis_ms: ms(t_synth),
            exploration_ms: ms(t_explore - t_synth),
            learning_ms: ms(t_learn - t_explore),
            evaluation_ms: ms(t_eval - t_learn),
            total_ms: ms(t_eval),
        },
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    trajectory.write_csv(BufWriter::new(File::create(path)?))
}

/// `source,iteration,delta_p,residual`; the model-based rows leave the
/// residual column empty.
pub fn write_history<W: Write>(writer: W, model: &[f64], learned: &[IterationDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "iteration", "delta_p", "residual"])?;
    for (k, d) in model.iter().enumerate() {
        w.write_record(["model".to_string(), (k + 1).to_string(), crate::sim::format_sig15(*d), String::new()])?;
    }
    for d in learned {
        w.write_record([
            "learned".to_string(),
            d.iteration.to_string(),
            d.delta_p.map(crate::sim::format_sig15).unwrap_or_default(),
            crate::sim::format_sig15(d.ls_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `trajectory.csv` (exploration data),
/// `closed_loop.csv`, `history.csv` and `timing.json` into `dir`.
pub fn write_outputs(run: &ExperimentRun, dir: &Path) -> std::result::Result<(), StageError> {
    let go = || -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &run.report)?;
        write_trajectory(&dir.join("trajectory.csv"), &run.exploration)?;
        write_trajectory(&dir.join("closed_loop.csv"), &run.closed_loop)?;
        write_history(
            BufWriter::new(File::create(dir.join("history.csv"))?),
            &run.report.model_based.history,
            &run.report.learned.diagnostics,
        )?;
        write_json(&dir.join("timing.json"), &run.timing)?;
        Ok(())
    };
    go().at(Stage::Output)
}
