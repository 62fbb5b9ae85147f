//! Suboptimality certificate for a structured solution against the
//! unconstrained LQR optimum: `|J − J̄| ≤ (l/2g) ‖x₀ᵀ ⊗ x₀ᵀ‖` whenever
//! `√(l g ε) < l/2`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{ensure_shape, kron, norm2, singular_values};
use crate::synthesis::gain_map;

/// Which matrix `M` the operator `V W = MᵀW + WM` is built from.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorMode {
    /// `M = A − BR⁻¹Bᵀ`.
    Literal,
    /// `M = A − BR⁻¹BᵀP̄`, the closed loop of the unconstrained optimum.
    ClosedLoop(DMatrix<f64>),
}

/// `Iₙ ⊗ Mᵀ + Mᵀ ⊗ Iₙ`, the matrix of `V` acting on column-major `vec(W)`.
pub fn operator_v_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    mode: &OperatorMode,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    ensure_shape(a, n, n, "A")?;
    ensure_shape(b, n, b.ncols(), "B")?;
    let brb = b * gain_map(b, r)?;
    let m = match mode {
        OperatorMode::Literal => a - brb,
        OperatorMode::ClosedLoop(p_bar) => {
            ensure_shape(p_bar, n, n, "P̄")?;
            a - brb * p_bar
        }
    };
    let mt = m.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    Ok(kron(&eye, &mt) + kron(&mt, &eye))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// `‖BR⁻¹Bᵀ‖₂`
    pub g: f64,
    /// `‖V⁻¹‖₂⁻¹ = σ_min(V)`
    pub l_v: f64,
}

pub fn bound_constants(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    mode: &OperatorMode,
) -> Result<BoundConstants> {
    let v = operator_v_matrix(a, b, r, mode)?;
    let sv = singular_values(&v);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= smax * v.nrows() as f64 * f64::EPSILON {
        return Err(Error::OperatorSingular);
    }
    let g = norm2(&(b * gain_map(b, r)?));
    Ok(BoundConstants { g, l_v: smin })
}

/// `(l_V / 2g) ‖x₀‖²`; note `‖x₀ᵀ ⊗ x₀ᵀ‖₂ = ‖x₀‖²`.
pub fn suboptimality_bound(x0: &DVector<f64>, g: f64, l_v: f64) -> f64 {
    l_v / (2.0 * g) * x0.norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Applicability {
    /// `‖LᵀRL‖₂ / l_V`
    pub epsilon: f64,
    pub applicable: bool,
}

/// Strict test `√(l_V g ε) < l_V / 2`.
pub fn applicability(l_v: f64, g: f64, l: &DMatrix<f64>, r: &DMatrix<f64>) -> Applicability {
    let epsilon = norm2(&(l.transpose() * r * l)) / l_v;
    Applicability {
        epsilon,
        applicable: (l_v * g * epsilon).sqrt() < l_v / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub g: f64,
    pub l_v: f64,
    pub epsilon: f64,
    pub applicable: bool,
    pub bound: f64,
    pub measured_gap: Option<f64>,
}

/// Bound for the structured solution `(P, L)` against the dense `P̄`, both
/// evaluated at `x₀`.
pub fn bound_report(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    l: &DMatrix<f64>,
    x0: &DVector<f64>,
    values: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    mode: &OperatorMode,
) -> Result<BoundReport> {
    let c = bound_constants(a, b, r, mode)?;
    let app = applicability(c.l_v, c.g, l, r);
    let measured_gap = values.map(|(p, p_bar)| (x0.dot(&(p * x0)) - x0.dot(&(p_bar * x0))).abs());
    Ok(BoundReport {
        g: c.g,
        l_v: c.l_v,
        epsilon: app.epsilon,
        applicable: app.applicable,
        bound: suboptimality_bound(x0, c.g, c.l_v),
        measured_gap,
    })
}
