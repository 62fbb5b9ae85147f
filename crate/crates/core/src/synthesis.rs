//! Model-based structured robust LQR.
//!
//! The structured gain is `K = φ(P) ∘ I_K` with `φ(P) = R⁻¹BᵀP`, and `P`
//! solves the β-shifted modified Riccati equation
//!
//! ```text
//! (A+βI)ᵀP + P(A+βI) − PBR⁻¹BᵀP + Q + LᵀRL = 0,   L = φ(P) ∘ I^c_K
//! ```
//!
//! which is reached by a modified Kleinman iteration: a Lyapunov solve for
//! the current gain followed by a projected gain update.

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_shape, norm2, solve_lyapunov, spd_inverse, spectral_abscissa, symmetric_extremes,
};
use crate::model::{validate, LtiSystem, StructurePattern, SynthesisProblem};

/// `M ∘ I_K`: forbidden entries are exactly zero.
pub fn project_structure(m: &DMatrix<f64>, pattern: &StructurePattern) -> Result<DMatrix<f64>> {
    check_pattern_shape(m, pattern)?;
    let mut out = m.clone();
    for (i, j) in pattern.forbidden_entries() {
        out[(i, j)] = 0.0;
    }
    Ok(out)
}

/// `F(M) = M ∘ I^c_K`: the part of `M` living on forbidden entries.
pub fn complement_part(m: &DMatrix<f64>, pattern: &StructurePattern) -> Result<DMatrix<f64>> {
    check_pattern_shape(m, pattern)?;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j) in pattern.forbidden_entries() {
        out[(i, j)] = m[(i, j)];
    }
    Ok(out)
}

fn check_pattern_shape(m: &DMatrix<f64>, pattern: &StructurePattern) -> Result<()> {
    if m.shape() != pattern.shape() {
        return Err(Error::ShapeMismatch(format!(
            "matrix {:?} vs pattern {:?}",
            m.shape(),
            pattern.shape()
        )));
    }
    Ok(())
}

/// `R⁻¹Bᵀ`, the map from `P` to the unconstrained gain.
pub fn gain_map(b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spd_inverse(r, "R")? * b.transpose())
}

/// Warning-level findings attached to a synthesis or learning result.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthesisWarning {
    /// `λ_min(Q)` is below the robust-stability floor.
    FloorViolated { floor: f64, q_min_eigenvalue: f64 },
    /// The realized `‖L‖₂` exceeds the configured cap `d`.
    GainCapExceeded { l_norm: f64, d: f64 },
    /// A pattern row has no permitted entry.
    DegeneratePatternRow { row: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// `‖P_k − P_{k−1}‖_F` for `k = 1, 2, ...`
    pub history: Vec<f64>,
    pub warnings: Vec<SynthesisWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub p: DMatrix<f64>,
    pub next_gain: DMatrix<f64>,
}

/// Policy evaluation for `gain` followed by the structured policy update.
pub fn kleinman_step(problem: &SynthesisProblem, gain: &DMatrix<f64>) -> Result<PolicyStep> {
    kleinman_step_at(problem, gain, 0)
}

fn kleinman_step_at(
    problem: &SynthesisProblem,
    gain: &DMatrix<f64>,
    iteration: usize,
) -> Result<PolicyStep> {
    let n = problem.states();
    let r = problem.weights.r();
    let shifted = shifted_closed_loop(problem, gain)?;
    let rhs = problem.weights.q() + gain.transpose() * r * gain;
    let p = solve_lyapunov(&shifted, &rhs).map_err(|e| match e {
        Error::NotHurwitz { abscissa } => Error::NotStabilizing {
            iteration,
            abscissa,
        },
        other => other,
    })?;
    debug_assert_eq!(p.nrows(), n);
    let phi = gain_map(problem.system.b(), r)? * &p;
    let next_gain = project_structure(&phi, &problem.pattern)?;
    Ok(PolicyStep { p, next_gain })
}

fn shifted_closed_loop(problem: &SynthesisProblem, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = problem.states();
    let mut m = problem.system.closed_loop(gain)?;
    for i in 0..n {
        m[(i, i)] += problem.robustness.beta;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    /// Stop once `‖P_k − P_{k−1}‖_F < tol`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 100,
        }
    }
}

/// Frobenius norm of the β-shifted modified Riccati residual at `P`, with
/// `L = F(R⁻¹BᵀP)`.
pub fn verify_modified_are(problem: &SynthesisProblem, p: &DMatrix<f64>) -> Result<f64> {
    let n = problem.states();
    ensure_shape(p, n, n, "P")?;
    let b = problem.system.b();
    let r = problem.weights.r();
    let map = gain_map(b, r)?;
    let l = complement_part(&(&map * p), &problem.pattern)?;
    let mut shifted = problem.system.a().clone();
    for i in 0..n {
        shifted[(i, i)] += problem.robustness.beta;
    }
    let res = shifted.transpose() * p + p * &shifted - p * b * &map * p
        + problem.weights.q()
        + l.transpose() * r * &l;
    Ok(res.norm())
}

const ZERO_GAIN_MARGIN: f64 = 1e-8;

/// Initial gain for the iteration: zero when `A + βI` is Hurwitz with some
/// room to spare, otherwise an eigenvalue-shifting gain from
/// [`stabilizing_gain`]. A Laplacian-like `A` has an eigenvalue at zero that
/// roundoff can push just left of the axis; that must not count as stable.
pub fn default_initial_gain(problem: &SynthesisProblem) -> Result<DMatrix<f64>> {
    let n = problem.states();
    let beta = problem.robustness.beta;
    let shifted = problem.system.a() + DMatrix::<f64>::identity(n, n) * beta;
    if spectral_abscissa(&shifted)? < -ZERO_GAIN_MARGIN * (1.0 + shifted.norm()) {
        return Ok(DMatrix::zeros(problem.inputs(), n));
    }
    stabilizing_gain(&problem.system, beta + 1.0)
}

/// Bass's eigenvalue-shift construction: for `λ` above both `margin` and
/// `−min Re eig(A)`, solve `(A+λI)Z + Z(A+λI)ᵀ = 2BBᵀ` and return
/// `K = BᵀZ⁻¹`. Every eigenvalue of `A − BK` then has real part `−λ`.
/// Needs `(A, B)` controllable.
pub fn stabilizing_gain(system: &LtiSystem, margin: f64) -> Result<DMatrix<f64>> {
    let a = system.a();
    let b = system.b();
    let n = system.states();
    let min_re = crate::linalg::eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min);
    let lambda = margin.max(-min_re + margin.max(1.0));
    let shifted = a + DMatrix::<f64>::identity(n, n) * lambda;
    // Mᵀ Z + Z M + S = 0 with M = −(A+λI)ᵀ, S = 2BBᵀ
    let m = -shifted.transpose();
    let z = solve_lyapunov(&m, &(b * b.transpose() * 2.0))?;
    let z_inv = z.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
        Error::NoInitialGain(
            "(A, B) is not controllable; supply a stabilizing initial gain".into(),
        )
    })?;
    Ok(b.transpose() * z_inv)
}

/// Runs the modified Kleinman iteration to convergence.
pub fn structured_policy_iteration(
    problem: &SynthesisProblem,
    initial_gain: Option<&DMatrix<f64>>,
    options: IterationOptions,
) -> Result<SynthesisResult> {
    let report = validate(problem);
    if !report.passed() {
        return Err(Error::InvalidProblem(report.failures().join("; ")));
    }
    let mut warnings = Vec::new();
    if !report.q_floor_satisfied {
        warn!(
            "Q is below the robust-stability floor ({:.4} < {:.4})",
            report.q_min_eigenvalue, report.q_floor
        );
        warnings.push(SynthesisWarning::FloorViolated {
            floor: report.q_floor,
            q_min_eigenvalue: report.q_min_eigenvalue,
        });
    }
    for &row in &report.degenerate_pattern_rows {
        warnings.push(SynthesisWarning::DegeneratePatternRow { row });
    }

    let mut gain = match initial_gain {
        Some(k) => {
            ensure_shape(k, problem.inputs(), problem.states(), "initial gain")?;
            k.clone()
        }
        None => default_initial_gain(problem)?,
    };
    let abscissa = spectral_abscissa(&shifted_closed_loop(problem, &gain)?)?;
    if abscissa >= 0.0 {
        return Err(Error::NotStabilizing {
            iteration: 0,
            abscissa,
        });
    }

    let mut history = Vec::new();
    let mut previous: Option<DMatrix<f64>> = None;
    for iteration in 0..options.max_iters {
        let step = kleinman_step_at(problem, &gain, iteration)?;
        gain = step.next_gain;
        if let Some(prev) = previous.as_ref() {
            let delta = (&step.p - prev).norm();
            history.push(delta);
            debug!("policy iteration {iteration}: |dP| = {delta:.3e}");
            if delta < options.tol {
                return finish(problem, step.p, gain, iteration + 1, history, warnings);
            }
        }
        previous = Some(step.p);
    }
    let last_p = previous.expect("max_iters > 0 when the loop ran");
    Err(Error::NoConvergence {
        iterations: options.max_iters,
        last_step: history.last().copied().unwrap_or(f64::NAN),
        residual: verify_modified_are(problem, &last_p)?,
    })
}

fn finish(
    problem: &SynthesisProblem,
    p: DMatrix<f64>,
    k: DMatrix<f64>,
    iterations: usize,
    history: Vec<f64>,
    mut warnings: Vec<SynthesisWarning>,
) -> Result<SynthesisResult> {
    let map = gain_map(problem.system.b(), problem.weights.r())?;
    let l = complement_part(&(&map * &p), &problem.pattern)?;
    let residual = verify_modified_are(problem, &p)?;
    let rob = problem.robustness;
    if rob.robustness_requested() {
        let l_norm = norm2(&l);
        if l_norm > rob.d {
            warn!("realized |L| = {l_norm:.4} exceeds the gain cap d = {}", rob.d);
            warnings.push(SynthesisWarning::GainCapExceeded { l_norm, d: rob.d });
        }
    }
    Ok(SynthesisResult {
        p,
        k,
        l,
        iterations,
        residual,
        history,
        warnings,
    })
}

/// Infinite-horizon cost matrix of `u = −Kx` on the unperturbed plant:
/// `(A−BK)ᵀX + X(A−BK) + Q + KᵀRK = 0`, so `J(x₀) = x₀ᵀXx₀`.
pub fn closed_loop_cost_matrix(
    system: &LtiSystem,
    gain: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let acl = system.closed_loop(gain)?;
    solve_lyapunov(&acl, &(q + gain.transpose() * r * gain))
}

/// Closed-loop Lyapunov derivative `xᵀ((A−BK)ᵀP + P(A−BK))x + 2xᵀPBζ`.
pub fn lyapunov_derivative(
    system: &LtiSystem,
    gain: &DMatrix<f64>,
    p: &DMatrix<f64>,
    x: &nalgebra::DVector<f64>,
    zeta: &nalgebra::DVector<f64>,
) -> Result<f64> {
    let acl = system.closed_loop(gain)?;
    let xdot = &acl * x + system.b() * zeta;
    Ok(2.0 * x.dot(&(p * xdot)))
}

/// `λ_min(P)`, used by the robust decrease rate `−2βλ_min(P)‖x‖²`.
pub fn min_eigenvalue(p: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_extremes(p)?.0)
}
