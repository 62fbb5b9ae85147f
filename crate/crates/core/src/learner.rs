//! Data-driven structured policy iteration.
//!
//! Along any trajectory of `ẋ = Ax + B(u + ζ)` and for the current gain
//! `K_k`, the value matrix `P_k` of the shifted closed loop satisfies, over
//! every window `[t, t+T]`,
//!
//! ```text
//! xᵀP_kx |ₜᵗ⁺ᵀ + 2β∫xᵀP_kx − 2∫(u + K_kx)ᵀR G_k x − 2∫ζᵀ(BᵀP_k)x = −∫xᵀ(Q + K_kᵀRK_k)x
//! ```
//!
//! with `G_k = R⁻¹BᵀP_k`. Stacking windows gives a linear regression in
//! `(P_k, G_k, BᵀP_k)` that never touches `A`. Here `u` is the input that
//! was actually applied (probing plus any feedback active during the run).

use std::str::FromStr;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, duplication_matrix, ensure_shape, kron, kron_vec, least_squares, numerical_rank,
    spd_inverse, symmetrize, unvec, vec, SymVec,
};
use crate::model::{q_floor, LearningTask, StructurePattern};
use crate::sim::Trajectory;
use crate::synthesis::{
    complement_part, gain_map, min_eigenvalue, project_structure, SynthesisResult, SynthesisWarning,
};

/// Regression blocks, one row per data window.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    /// `(x⊗x)(tᵢ+T) − (x⊗x)(tᵢ)`, `l × n²`
    pub s_xx: DMatrix<f64>,
    /// `∫ x⊗x`, `l × n²`
    pub t_xx: DMatrix<f64>,
    /// `∫ x⊗u` over the applied input, `l × nm`
    pub t_xu0: DMatrix<f64>,
    /// `∫ x⊗ζ`, `l × nm`
    pub t_xzeta: DMatrix<f64>,
    pub window: f64,
    pub sample_times: Vec<f64>,
}

impl DataMatrices {
    pub fn rows(&self) -> usize {
        self.s_xx.nrows()
    }

    pub fn states(&self) -> usize {
        (self.s_xx.ncols() as f64).sqrt().round() as usize
    }

    pub fn inputs(&self) -> usize {
        self.t_xu0.ncols().checked_div(self.states()).unwrap_or(0)
    }
}

/// When exogenous-input measurements exist.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Availability {
    #[default]
    Always,
    /// Closed intervals `[start, end]` with measurements.
    Windows { intervals: Vec<[f64; 2]> },
}

impl Availability {
    pub fn covers(&self, start: f64, end: f64) -> bool {
        const SLACK: f64 = 1e-9;
        match self {
            Availability::Always => true,
            Availability::Windows { intervals } => intervals
                .iter()
                .any(|[a, b]| start >= a - SLACK && end <= b + SLACK),
        }
    }
}

fn node_index(trajectory: &Trajectory, t: f64) -> Result<usize> {
    let rel = (t - trajectory.start_time()) / trajectory.dt;
    let k = rel.round();
    if k < 0.0 || k as usize >= trajectory.len() {
        return Err(Error::WindowOutOfRange { start: t, end: t });
    }
    if (rel - k).abs() > 1e-6 {
        return Err(Error::InvalidConfig(format!(
            "sample time {t} is not on the trajectory grid (dt = {})",
            trajectory.dt
        )));
    }
    Ok(k as usize)
}

fn window_steps(trajectory: &Trajectory, window: f64) -> Result<usize> {
    let ratio = window / trajectory.dt;
    let steps = ratio.round();
    if !(window > 0.0) || steps < 1.0 || (ratio - steps).abs() > 1e-6 {
        return Err(Error::InvalidConfig(format!(
            "window {window} must be a positive multiple of dt = {}",
            trajectory.dt
        )));
    }
    Ok(steps as usize)
}

/// The first `count` windows of length `window`, advancing one node at a
/// time from the start of the trajectory and skipping windows that are not
/// fully inside the availability set.
pub fn contiguous_windows(
    trajectory: &Trajectory,
    window: f64,
    count: usize,
    availability: &Availability,
) -> Result<Vec<f64>> {
    let steps = window_steps(trajectory, window)?;
    let t0 = trajectory.start_time();
    let dt = trajectory.dt;
    let mut times = Vec::with_capacity(count);
    let mut k = 0;
    while times.len() < count {
        let start = t0 + k as f64 * dt;
        let end = t0 + (k + steps) as f64 * dt;
        if k + steps >= trajectory.len() {
            return Err(Error::WindowOutOfRange { start, end });
        }
        if availability.covers(start, end) {
            times.push(start);
        }
        k += 1;
    }
    Ok(times)
}

/// Assembles the regression blocks. Uses the simulator's running
/// integrals when present, nodewise trapezoid otherwise.
pub fn build_data_matrices(
    trajectory: &Trajectory,
    window: f64,
    sample_times: &[f64],
    availability: &Availability,
) -> Result<DataMatrices> {
    let n = trajectory.states();
    let m = trajectory.inputs();
    let steps = window_steps(trajectory, window)?;
    let l = sample_times.len();
    let mut s_xx = DMatrix::zeros(l, n * n);
    let mut t_xx = DMatrix::zeros(l, n * n);
    let mut t_xu0 = DMatrix::zeros(l, n * m);
    let mut t_xzeta = DMatrix::zeros(l, n * m);

    for (row, &t) in sample_times.iter().enumerate() {
        let end_t = t + window;
        let start = node_index(trajectory, t).map_err(|e| match e {
            Error::WindowOutOfRange { .. } => Error::WindowOutOfRange { start: t, end: end_t },
            other => other,
        })?;
        let end = start + steps;
        if end >= trajectory.len() {
            return Err(Error::WindowOutOfRange { start: t, end: end_t });
        }
        if !availability.covers(t, end_t) {
            return Err(Error::AvailabilityViolated { start: t, end: end_t });
        }
        let (xa, xb) = (&trajectory.samples[start].x, &trajectory.samples[end].x);
        let ds = kron_vec(xb, xb) - kron_vec(xa, xa);
        s_xx.row_mut(row).tr_copy_from(&ds);

        let (ixx, ixu, ixz) = match &trajectory.integrals {
            Some(ints) => (
                &ints[end].xx - &ints[start].xx,
                &ints[end].xu - &ints[start].xu,
                &ints[end].xzeta - &ints[start].xzeta,
            ),
            None => trapezoid(trajectory, start, end),
        };
        t_xx.row_mut(row).tr_copy_from(&ixx);
        t_xu0.row_mut(row).tr_copy_from(&ixu);
        t_xzeta.row_mut(row).tr_copy_from(&ixz);
    }
    Ok(DataMatrices {
        s_xx,
        t_xx,
        t_xu0,
        t_xzeta,
        window,
        sample_times: sample_times.to_vec(),
    })
}

fn trapezoid(
    trajectory: &Trajectory,
    start: usize,
    end: usize,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = trajectory.states();
    let m = trajectory.inputs();
    let h = 0.5 * trajectory.dt;
    let mut xx = DVector::zeros(n * n);
    let mut xu = DVector::zeros(n * m);
    let mut xz = DVector::zeros(n * m);
    for pair in trajectory.samples[start..=end].windows(2) {
        for s in pair {
            xx += kron_vec(&s.x, &s.x) * h;
            xu += kron_vec(&s.x, &s.applied_input()) * h;
            xz += kron_vec(&s.x, &s.zeta) * h;
        }
    }
    (xx, xu, xz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankReport {
    pub observed: usize,
    /// `n(n+1)/2 + |K| + nm`
    pub required: usize,
    pub samples: usize,
    pub pass: bool,
}

/// Numerical rank of `[T_xx T_xu0 T_xζ]` against the textbook sample
/// requirement. Informational: the policy step checks its own
/// identifiability condition.
pub fn rank_check(data: &DataMatrices, pattern: &StructurePattern) -> RankReport {
    let n = data.states();
    let m = data.inputs();
    let required = SymVec::packed_len(n) + pattern.nnz() + n * m;
    let mut stacked = DMatrix::zeros(data.rows(), data.t_xx.ncols() + 2 * n * m);
    stacked.columns_mut(0, n * n).copy_from(&data.t_xx);
    stacked.columns_mut(n * n, n * m).copy_from(&data.t_xu0);
    stacked
        .columns_mut(n * n + n * m, n * m)
        .copy_from(&data.t_xzeta);
    let observed = numerical_rank(&stacked);
    RankReport {
        observed,
        required,
        samples: data.rows(),
        pass: observed >= required,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LsMode {
    /// Unknowns `vec P` (n²), `vec G` (nm) and `vec(BᵀP)` (nm).
    PaperFaithful,
    /// `vec(BᵀP)` eliminated through the known `B`; unknowns `P` and `G`.
    #[default]
    Reduced,
}

impl FromStr for LsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-faithful" => Ok(LsMode::PaperFaithful),
            "reduced" => Ok(LsMode::Reduced),
            other => Err(Error::InvalidConfig(format!(
                "unknown least-squares mode {other:?} (expected paper-faithful or reduced)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Stop once `‖P_k − P_{k−1}‖_F < tol`.
    pub tol: f64,
    pub max_iters: usize,
    pub mode: LsMode,
    /// In reduced mode, parametrize `P` by its `n(n+1)/2` free entries.
    /// The paper-faithful mode always uses the full `vec P`.
    pub symmetric_p: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 100,
            mode: LsMode::Reduced,
            symmetric_p: true,
        }
    }
}

/// Relative asymmetry of the raw learned `P` tolerated before the data is
/// declared inconsistent.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LsStep {
    pub p: DMatrix<f64>,
    pub next_gain: DMatrix<f64>,
    /// Unstructured `G_k = K_{k+1} + F_k` as solved for.
    pub dense_gain: DMatrix<f64>,
    /// The `BᵀP` block in paper-faithful mode.
    pub bp: Option<DMatrix<f64>>,
    pub residual: f64,
    pub rank: usize,
    pub required: usize,
}

/// Regression matrix and target for gain `K_k`, with the column layout of
/// `mode`.
pub fn regression(
    task: &LearningTask,
    data: &DataMatrices,
    gain: &DMatrix<f64>,
    mode: LsMode,
    symmetric_p: bool,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = task.states();
    let m = task.inputs();
    if data.states() != n || data.inputs() != m {
        return Err(Error::ShapeMismatch(format!(
            "data is for n = {}, m = {}, task has n = {n}, m = {m}",
            data.states(),
            data.inputs()
        )));
    }
    ensure_shape(gain, m, n, "gain")?;
    let r = task.weights.r();
    let q = task.weights.q();
    let beta = task.robustness.beta;
    let eye_n = DMatrix::<f64>::identity(n, n);

    let mut p_cols = &data.s_xx + &data.t_xx * (2.0 * beta);
    let g_cols = &data.t_xx * kron(&eye_n, &(gain.transpose() * r)) * -2.0
        - &data.t_xu0 * kron(&eye_n, r) * 2.0;
    let q_bar = q + gain.transpose() * r * gain;
    let phi = -(&data.t_xx * vec(&q_bar));

    let theta = match mode {
        LsMode::PaperFaithful => {
            let bp_cols = &data.t_xzeta * -2.0;
            hstack(&[&p_cols, &g_cols, &bp_cols])
        }
        LsMode::Reduced => {
            p_cols -= &data.t_xzeta * kron(&eye_n, &task.b.transpose()) * 2.0;
            if symmetric_p {
                p_cols *= duplication_matrix(n);
            }
            hstack(&[&p_cols, &g_cols])
        }
    };
    Ok((theta, phi))
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Rank the regression needs for a unique `(P, G)`.
pub fn identifiable_rank(n: usize, m: usize, mode: LsMode) -> usize {
    match mode {
        LsMode::PaperFaithful => SymVec::packed_len(n) + 2 * n * m,
        LsMode::Reduced => SymVec::packed_len(n) + n * m,
    }
}

/// One least-squares policy evaluation and structured improvement.
pub fn ls_policy_step(
    task: &LearningTask,
    data: &DataMatrices,
    gain: &DMatrix<f64>,
    mode: LsMode,
    symmetric_p: bool,
) -> Result<LsStep> {
    let n = task.states();
    let m = task.inputs();
    let (theta, phi) = regression(task, data, gain, mode, symmetric_p)?;
    let ls = least_squares(&theta, &phi)?;
    let required = identifiable_rank(n, m, mode);
    if ls.rank < required {
        return Err(Error::RankDeficient {
            rank: ls.rank,
            required,
        });
    }
    let sol = &ls.solution;
    let packed = mode == LsMode::Reduced && symmetric_p;
    let p_len = if packed { SymVec::packed_len(n) } else { n * n };
    let p = if packed {
        SymVec::from_packed(n, sol.rows(0, p_len).iter().copied().collect())?.unpack()
    } else {
        let raw = unvec(&sol.rows(0, p_len).into_owned(), n, n);
        let rel = asymmetry(&raw) / raw.norm().max(f64::MIN_POSITIVE);
        if rel > ASYMMETRY_TOLERANCE {
            return Err(Error::AsymmetricP { asymmetry: rel });
        }
        symmetrize(&raw)
    };
    let dense_gain = unvec(&sol.rows(p_len, n * m).into_owned(), m, n);
    let bp = (mode == LsMode::PaperFaithful)
        .then(|| unvec(&sol.rows(p_len + n * m, n * m).into_owned(), m, n));

    let f = complement_part(&(gain_map(&task.b, task.weights.r())? * &p), &task.pattern)?;
    let next_gain = project_structure(&(&dense_gain - f), &task.pattern)?;
    Ok(LsStep {
        p,
        next_gain,
        dense_gain,
        bp,
        residual: ls.residual,
        rank: ls.rank,
        required,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// `‖P_k − P_{k−1}‖_F`, absent for the first evaluation.
    pub delta_p: Option<f64>,
    pub ls_residual: f64,
    pub rank: usize,
    pub p_min_eigenvalue: f64,
    /// `‖G_k − R⁻¹BᵀP_k‖_F`, zero in exact arithmetic.
    pub gain_consistency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    /// `residual` holds the final least-squares residual norm.
    pub result: SynthesisResult,
    pub diagnostics: Vec<IterationDiagnostics>,
}

pub fn rsrl(
    task: &LearningTask,
    data: &DataMatrices,
    initial_gain: &DMatrix<f64>,
    config: &LearnerConfig,
) -> Result<LearnOutcome> {
    if !(config.tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learner tolerance must be positive, got {}",
            config.tol
        )));
    }
    let map = gain_map(&task.b, task.weights.r())?;
    spd_inverse(task.weights.r(), "R")?;

    let mut warnings = Vec::new();
    let rob = task.robustness;
    if rob.robustness_requested() {
        let floor = q_floor(rob.alpha, rob.d, task.weights.r())?;
        let q_min = min_eigenvalue(task.weights.q())?;
        if q_min < floor {
            warnings.push(SynthesisWarning::FloorViolated {
                floor,
                q_min_eigenvalue: q_min,
            });
        }
    }
    for row in task.pattern.empty_rows() {
        warnings.push(SynthesisWarning::DegeneratePatternRow { row });
    }

    let mut gain = initial_gain.clone();
    let mut previous: Option<DMatrix<f64>> = None;
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    for iteration in 0..config.max_iters {
        let step = ls_policy_step(task, data, &gain, config.mode, config.symmetric_p)?;
        let p_min = min_eigenvalue(&step.p)?;
        if p_min <= 0.0 {
            return Err(Error::LearnedValueIndefinite {
                iteration,
                min_eigenvalue: p_min,
            });
        }
        let delta = previous.as_ref().map(|prev| (&step.p - prev).norm());
        diagnostics.push(IterationDiagnostics {
            iteration,
            delta_p: delta,
            ls_residual: step.residual,
            rank: step.rank,
            p_min_eigenvalue: p_min,
            gain_consistency: (&step.dense_gain - &map * &step.p).norm(),
        });
        debug!(
            "rsrl iteration {iteration}: |dP| = {:?}, LS residual {:.3e}",
            delta, step.residual
        );
        gain = step.next_gain;
        if let Some(d) = delta {
            history.push(d);
            if d < config.tol {
                let l = complement_part(&(&map * &step.p), &task.pattern)?;
                if rob.robustness_requested() {
                    let l_norm = crate::linalg::norm2(&l);
                    if l_norm > rob.d {
                        warnings.push(SynthesisWarning::GainCapExceeded { l_norm, d: rob.d });
                    }
                }
                return Ok(LearnOutcome {
                    result: SynthesisResult {
                        p: step.p,
                        k: gain,
                        l,
                        iterations: iteration + 1,
                        residual: step.residual,
                        history,
                        warnings,
                    },
                    diagnostics,
                });
            }
        }
        previous = Some(step.p);
    }
    Err(Error::NoConvergence {
        iterations: config.max_iters,
        last_step: history.last().copied().unwrap_or(f64::NAN),
        residual: diagnostics.last().map_or(f64::NAN, |d| d.ls_residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LqrWeights, LtiSystem, RobustnessParams};
    use crate::sim::{simulate, ExoModel, ExplorationSettings, ExplorationSignal, Sample, SimConfig};
    use nalgebra::dmatrix;

    fn synthetic(xs: impl Fn(f64) -> f64, dt: f64, steps: usize) -> Trajectory {
        let samples = (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                Sample {
                    t,
                    x: DVector::from_vec(vec![xs(t)]),
                    u0: DVector::zeros(1),
                    zeta: DVector::zeros(1),
                    u_fb: DVector::zeros(1),
                }
            })
            .collect();
        Trajectory {
            dt,
            samples,
            integrals: None,
        }
    }

    #[test]
    fn constant_state_windows() {
        let traj = synthetic(|_| 2.0, 0.1, 20);
        let d = build_data_matrices(&traj, 0.5, &[0.0, 0.3, 1.0], &Availability::Always).unwrap();
        assert!(d.s_xx.iter().all(|&v| v == 0.0));
        for v in d.t_xx.iter() {
            assert!((v - 0.5 * 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_window() {
        let traj = synthetic(|t| (-t).exp(), 0.01, 200);
        let d = build_data_matrices(&traj, 1.0, &[0.0], &Availability::Always).unwrap();
        let e2 = (-2f64).exp();
        assert!((d.s_xx[(0, 0)] - (e2 - 1.0)).abs() < 1e-12);
        assert!((d.t_xx[(0, 0)] - (1.0 - e2) / 2.0).abs() < 1e-4);
    }

    #[test]
    fn window_errors() {
        let traj = synthetic(|_| 1.0, 0.1, 10);
        assert!(matches!(
            build_data_matrices(&traj, 0.5, &[0.7], &Availability::Always),
            Err(Error::WindowOutOfRange { .. })
        ));
        assert!(matches!(
            build_data_matrices(&traj, 0.25, &[0.0], &Availability::Always),
            Err(Error::InvalidConfig(_))
        ));
        let avail = Availability::Windows {
            intervals: vec![[0.0, 0.3], [0.5, 1.0]],
        };
        assert!(matches!(
            build_data_matrices(&traj, 0.2, &[0.2], &avail),
            Err(Error::AvailabilityViolated { .. })
        ));
        assert!(build_data_matrices(&traj, 0.2, &[0.1, 0.5], &avail).is_ok());
        let picked = contiguous_windows(&traj, 0.2, 4, &avail).unwrap();
        let expect = [0.0, 0.1, 0.5, 0.6];
        for (a, b) in picked.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(contiguous_windows(&traj, 0.2, 20, &Availability::Always).is_err());
    }

    fn scalar_task() -> LearningTask {
        LearningTask::new(
            dmatrix![1.0],
            StructurePattern::full(1, 1),
            LqrWeights::new(dmatrix![1.0], dmatrix![1.0]).unwrap(),
            RobustnessParams::nominal(),
        )
        .unwrap()
    }

    fn scalar_data(exo: &ExoModel) -> DataMatrices {
        let sys = LtiSystem::new(dmatrix![-1.0], dmatrix![1.0]).unwrap();
        let expl = ExplorationSignal::seeded(1, &ExplorationSettings::default(), 5).unwrap();
        let traj = simulate(
            &sys,
            None,
            &expl,
            exo,
            &DVector::from_vec(vec![1.0]),
            &SimConfig::new(1.0, 0.01).with_integrals(),
        )
        .unwrap();
        let times = contiguous_windows(&traj, 0.01, 40, &Availability::Always).unwrap();
        build_data_matrices(&traj, 0.01, &times, &Availability::Always).unwrap()
    }

    #[test]
    fn scalar_first_step() {
        let data = scalar_data(&ExoModel::None);
        let step = ls_policy_step(&scalar_task(), &data, &dmatrix![0.0], LsMode::Reduced, true).unwrap();
        assert!((step.p[(0, 0)] - 0.5).abs() < 1e-4);
        assert!((step.next_gain[(0, 0)] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn zero_exo_block_is_unidentifiable_in_faithful_mode() {
        let data = scalar_data(&ExoModel::None);
        assert!(data.t_xzeta.iter().all(|&v| v == 0.0));
        let err = ls_policy_step(&scalar_task(), &data, &dmatrix![0.0], LsMode::PaperFaithful, true)
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn scalar_learning_converges_to_riccati_root() {
        let data = scalar_data(&ExoModel::None);
        let out = rsrl(&scalar_task(), &data, &dmatrix![0.0], &LearnerConfig::default()).unwrap();
        let root = 2f64.sqrt() - 1.0;
        assert!((out.result.k[(0, 0)] - root).abs() < 1e-4);
        assert!(out.result.iterations <= 10);
    }

    #[test]
    fn rank_report_counts() {
        let data = scalar_data(&ExoModel::None);
        let rep = rank_check(&data, &StructurePattern::full(1, 1));
        assert_eq!(rep.required, 3);
        assert_eq!(rep.samples, 40);
        // T_xζ is identically zero here
        assert_eq!(rep.observed, 2);
        assert!(!rep.pass);
    }

    #[test]
    fn duplicated_rows_do_not_add_rank() {
        let data = scalar_data(&ExoModel::scalar_sinusoid(0.3, 0.5).unwrap());
        let base = rank_check(&data, &StructurePattern::full(1, 1));
        let twice = DataMatrices {
            s_xx: stack_twice(&data.s_xx),
            t_xx: stack_twice(&data.t_xx),
            t_xu0: stack_twice(&data.t_xu0),
            t_xzeta: stack_twice(&data.t_xzeta),
            window: data.window,
            sample_times: [data.sample_times.clone(), data.sample_times.clone()].concat(),
        };
        assert_eq!(rank_check(&twice, &StructurePattern::full(1, 1)).observed, base.observed);
    }

    fn stack_twice(m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(2 * m.nrows(), m.ncols());
        out.rows_mut(0, m.nrows()).copy_from(m);
        out.rows_mut(m.nrows(), m.nrows()).copy_from(m);
        out
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("reduced".parse::<LsMode>().unwrap(), LsMode::Reduced);
        assert_eq!("paper-faithful".parse::<LsMode>().unwrap(), LsMode::PaperFaithful);
        assert!("qr".parse::<LsMode>().is_err());
    }
}
