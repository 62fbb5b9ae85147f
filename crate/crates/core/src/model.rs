//! Systems, structure patterns, weights and robustness parameters, and the
//! standing-assumption checks run before any synthesis.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, ensure_finite, ensure_shape, ensure_square, numerical_rank, symmetric_extremes,
    symmetric_sqrt,
};

/// `ẋ = A x + B (u + ζ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        ensure_square(&a, "state matrix A")?;
        if b.nrows() != a.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::ShapeMismatch("B must have at least one column".into()));
        }
        ensure_finite(&a, "state matrix A")?;
        ensure_finite(&b, "input matrix B")?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B K`.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_shape(gain, self.inputs(), self.states(), "gain K")?;
        Ok(&self.a - &self.b * gain)
    }
}

/// Binary indicator of the permitted gain entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructurePattern {
    rows: usize,
    cols: usize,
    // row-major
    allowed: Vec<bool>,
}

impl StructurePattern {
    /// Every entry permitted.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn from_indicator(indicator: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = indicator.shape();
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = indicator[(i, j)];
                if v == 1.0 {
                    allowed.push(true);
                } else if v == 0.0 {
                    allowed.push(false);
                } else {
                    return Err(Error::InvalidPattern(format!(
                        "indicator entry ({i}, {j}) = {v} is not 0 or 1"
                    )));
                }
            }
        }
        Self::checked(rows, cols, allowed)
    }

    /// Full pattern with the listed zero-based `(row, col)` entries forbidden.
    pub fn with_forbidden(rows: usize, cols: usize, forbidden: &[(usize, usize)]) -> Result<Self> {
        let mut allowed = vec![true; rows * cols];
        for &(i, j) in forbidden {
            if i >= rows || j >= cols {
                return Err(Error::InvalidPattern(format!(
                    "forbidden entry ({i}, {j}) outside {rows}x{cols}"
                )));
            }
            allowed[i * cols + j] = false;
        }
        Self::checked(rows, cols, allowed)
    }

    fn checked(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if !allowed.iter().any(|&a| a) {
            return Err(Error::InvalidPattern(
                "pattern permits no gain entry (|K| = 0)".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            allowed,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    /// `|K|`, the number of permitted entries.
    pub fn nnz(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    /// `I_K` as a 0/1 matrix.
    pub fn indicator(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            if self.is_allowed(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `I^c_K = 1 - I_K`.
    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            if self.is_allowed(i, j) {
                0.0
            } else {
                1.0
            }
        })
    }

    /// Rows with no permitted entry; that actuator gets an identically zero gain.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .filter(|&i| (0..self.cols).all(|j| !self.is_allowed(i, j)))
            .collect()
    }

    pub fn forbidden_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !self.is_allowed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// LQR weights `Q ≻ 0`, `R ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LqrWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_spd(&q, "Q")?;
        check_spd(&r, "R")?;
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    ensure_square(m, what)?;
    ensure_finite(m, what)?;
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} (asymmetric by {asym:.3e})"
        )));
    }
    let (lo, _) = symmetric_extremes(m)?;
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} (minimum eigenvalue {lo:.3e})"
        )));
    }
    Ok(())
}

/// Exogenous-input bound `α`, stability margin `β` and gain cap `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessParams {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
}

impl RobustnessParams {
    pub fn new(alpha: f64, beta: f64, d: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("d", d)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidRobustness(format!(
                    "{name} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(Self { alpha, beta, d })
    }

    /// No exogenous input, no margin.
    pub fn nominal() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            d: 0.0,
        }
    }

    pub fn robustness_requested(&self) -> bool {
        self.alpha > 0.0
    }
}

impl Default for RobustnessParams {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Minimum `Q` scale guaranteeing robust stability:
/// `α² λ_max(R)² / λ_min(R) + 2 α d`.
pub fn q_floor(alpha: f64, d: f64, r: &DMatrix<f64>) -> Result<f64> {
    check_spd(r, "R")?;
    let (lo, hi) = symmetric_extremes(r)?;
    Ok(alpha * alpha * hi * hi / lo + 2.0 * alpha * d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub system: LtiSystem,
    pub pattern: StructurePattern,
    pub weights: LqrWeights,
    pub robustness: RobustnessParams,
}

impl SynthesisProblem {
    pub fn new(
        system: LtiSystem,
        pattern: StructurePattern,
        weights: LqrWeights,
        robustness: RobustnessParams,
    ) -> Result<Self> {
        let (n, m) = (system.states(), system.inputs());
        if pattern.shape() != (m, n) {
            return Err(Error::ShapeMismatch(format!(
                "pattern is {:?}, gain must be {m}x{n}",
                pattern.shape()
            )));
        }
        ensure_shape(weights.q(), n, n, "Q")?;
        ensure_shape(weights.r(), m, m, "R")?;
        Ok(Self {
            system,
            pattern,
            weights,
            robustness,
        })
    }

    pub fn states(&self) -> usize {
        self.system.states()
    }

    pub fn inputs(&self) -> usize {
        self.system.inputs()
    }

    /// Everything the data-driven learner may see: the plant's `A` is dropped.
    pub fn learning_task(&self) -> LearningTask {
        LearningTask {
            b: self.system.b().clone(),
            pattern: self.pattern.clone(),
            weights: self.weights.clone(),
            robustness: self.robustness,
        }
    }
}

/// A learning problem with unknown state matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningTask {
    pub b: DMatrix<f64>,
    pub pattern: StructurePattern,
    pub weights: LqrWeights,
    pub robustness: RobustnessParams,
}

impl LearningTask {
    pub fn new(
        b: DMatrix<f64>,
        pattern: StructurePattern,
        weights: LqrWeights,
        robustness: RobustnessParams,
    ) -> Result<Self> {
        let (n, m) = b.shape();
        ensure_finite(&b, "input matrix B")?;
        if pattern.shape() != (m, n) {
            return Err(Error::ShapeMismatch(format!(
                "pattern is {:?}, gain must be {m}x{n}",
                pattern.shape()
            )));
        }
        ensure_shape(weights.q(), n, n, "Q")?;
        ensure_shape(weights.r(), m, m, "R")?;
        Ok(Self {
            b,
            pattern,
            weights,
            robustness,
        })
    }

    pub fn states(&self) -> usize {
        self.b.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// One PBH test at an eigenvalue with nonnegative real part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PbhCheck {
    pub re: f64,
    pub im: f64,
    pub rank: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub stabilizable: bool,
    pub pbh_checks: Vec<PbhCheck>,
    pub observable: bool,
    pub observability_rank: usize,
    pub q_positive_definite: bool,
    pub r_positive_definite: bool,
    pub robustness_requested: bool,
    pub q_floor: f64,
    pub q_min_eigenvalue: f64,
    pub q_floor_satisfied: bool,
    pub pattern_nonempty: bool,
    pub pattern_nnz: usize,
    pub degenerate_pattern_rows: Vec<usize>,
}

impl ValidationReport {
    /// Hard checks only; the `Q`-floor and degenerate rows are warnings.
    pub fn passed(&self) -> bool {
        self.stabilizable
            && self.observable
            && self.q_positive_definite
            && self.r_positive_definite
            && self.pattern_nonempty
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.stabilizable {
            out.push("(A, B) not stabilizable");
        }
        if !self.observable {
            out.push("(A, Q^1/2) not observable");
        }
        if !self.q_positive_definite {
            out.push("Q not positive definite");
        }
        if !self.r_positive_definite {
            out.push("R not positive definite");
        }
        if !self.pattern_nonempty {
            out.push("structure pattern is empty");
        }
        out
    }
}

/// Eigenvalues with real part above this are treated as possibly unstable
/// in the PBH test.
const PBH_REAL_PART_CUTOFF: f64 = -1e-9;

pub fn validate(problem: &SynthesisProblem) -> ValidationReport {
    let a = problem.system.a();
    let b = problem.system.b();
    let n = problem.states();

    let mut pbh_checks = Vec::new();
    let mut stabilizable = true;
    if let Ok(ev) = eigenvalues(a) {
        for lambda in ev.iter().filter(|z| z.re >= PBH_REAL_PART_CUTOFF) {
            // rank of the complex [A - λI, B] via its real embedding
            let rank = complex_pbh_rank(a, b, lambda.re, lambda.im);
            let pass = rank == n;
            stabilizable &= pass;
            pbh_checks.push(PbhCheck {
                re: lambda.re,
                im: lambda.im,
                rank,
                pass,
            });
        }
    } else {
        stabilizable = false;
    }

    let q = problem.weights.q();
    let r = problem.weights.r();
    let (q_min, _) = symmetric_extremes(q).unwrap_or((f64::NAN, f64::NAN));
    let (r_min, _) = symmetric_extremes(r).unwrap_or((f64::NAN, f64::NAN));

    let observability_rank = symmetric_sqrt(q)
        .map(|c| observability_rank(a, &c))
        .unwrap_or(0);

    let rob = problem.robustness;
    let floor = q_floor(rob.alpha, rob.d, r).unwrap_or(f64::INFINITY);
    let requested = rob.robustness_requested();

    ValidationReport {
        stabilizable,
        pbh_checks,
        observable: observability_rank == n,
        observability_rank,
        q_positive_definite: q_min > 0.0,
        r_positive_definite: r_min > 0.0,
        robustness_requested: requested,
        q_floor: floor,
        q_min_eigenvalue: q_min,
        q_floor_satisfied: !requested || q_min >= floor,
        pattern_nonempty: problem.pattern.nnz() >= 1,
        pattern_nnz: problem.pattern.nnz(),
        degenerate_pattern_rows: problem.pattern.empty_rows(),
    }
}

fn complex_pbh_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, re: f64, im: f64) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut real = DMatrix::zeros(n, n + m);
    real.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        real[(i, i)] -= re;
    }
    real.view_mut((0, n), (n, m)).copy_from(b);
    if im == 0.0 {
        return numerical_rank(&real);
    }
    // M = X + iY with Y = -im·[I 0]; rank_C(M) = rank_R([[X, -Y], [Y, X]]) / 2
    let mut imag = DMatrix::zeros(n, n + m);
    for i in 0..n {
        imag[(i, i)] = -im;
    }
    let mut emb = DMatrix::zeros(2 * n, 2 * (n + m));
    emb.view_mut((0, 0), (n, n + m)).copy_from(&real);
    emb.view_mut((0, n + m), (n, n + m)).copy_from(&(-&imag));
    emb.view_mut((n, 0), (n, n + m)).copy_from(&imag);
    emb.view_mut((n, n + m), (n, n + m)).copy_from(&real);
    numerical_rank(&emb) / 2
}

/// Rank of `[C; C A; ...; C A^{n-1}]`.
pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let p = c.nrows();
    let mut obs = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        obs.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    numerical_rank(&obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn scalar_problem(a: f64, b: f64) -> SynthesisProblem {
        SynthesisProblem::new(
            LtiSystem::new(dmatrix![a], dmatrix![b]).unwrap(),
            StructurePattern::full(1, 1),
            LqrWeights::new(dmatrix![1.0], dmatrix![1.0]).unwrap(),
            RobustnessParams::nominal(),
        )
        .unwrap()
    }

    #[test]
    fn single_integrator_is_stabilizable() {
        let report = validate(&scalar_problem(0.0, 1.0));
        assert!(report.stabilizable);
        assert!(report.passed());
    }

    #[test]
    fn uncontrollable_unstable_mode_fails() {
        let report = validate(&scalar_problem(1.0, 0.0));
        assert!(!report.stabilizable);
        assert!(!report.passed());
        assert_eq!(report.pbh_checks.len(), 1);
        assert_eq!(report.pbh_checks[0].rank, 0);
    }

    #[test]
    fn complex_unstable_mode_pbh() {
        // oscillator with no input is not stabilizable; with input it is
        let a = dmatrix![0.1, 1.0; -1.0, 0.1];
        let sys = LtiSystem::new(a.clone(), dmatrix![0.0; 1.0]).unwrap();
        let p = SynthesisProblem::new(
            sys,
            StructurePattern::full(1, 2),
            LqrWeights::new(DMatrix::identity(2, 2), dmatrix![1.0]).unwrap(),
            RobustnessParams::nominal(),
        )
        .unwrap();
        let rep = validate(&p);
        assert!(rep.stabilizable);
        assert_eq!(rep.pbh_checks.len(), 2);
        let sys = LtiSystem::new(a, dmatrix![0.0; 0.0]).unwrap();
        let p = SynthesisProblem { system: sys, ..p };
        assert!(!validate(&p).stabilizable);
    }

    #[test]
    fn q_floor_examples() {
        let r6 = DMatrix::<f64>::identity(6, 6);
        assert_eq!(q_floor(0.0, 0.0, &dmatrix![3.0]).unwrap(), 0.0);
        assert!((q_floor(0.5, 2.4, &r6).unwrap() - 2.65).abs() < 1e-12);
        let r2 = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert!((q_floor(1.0, 1.0, &r2).unwrap() - 4.0).abs() < 1e-12);
        assert!(q_floor(1.0, 1.0, &dmatrix![-1.0]).is_err());
    }

    #[test]
    fn pattern_basics() {
        let p = StructurePattern::from_indicator(&dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
        assert_eq!(p.nnz(), 2);
        assert_eq!(p.complement(), dmatrix![0.0, 1.0; 1.0, 0.0]);
        assert!(StructurePattern::from_indicator(&dmatrix![0.0, 0.0]).is_err());
        assert!(StructurePattern::from_indicator(&dmatrix![0.5, 1.0]).is_err());
        let p = StructurePattern::with_forbidden(2, 2, &[(1, 0), (1, 1)]).unwrap();
        assert_eq!(p.empty_rows(), vec![1]);
    }

    #[test]
    fn weights_reject_indefinite_and_asymmetric() {
        assert!(LqrWeights::new(dmatrix![1.0, 0.0; 0.0, -1.0], dmatrix![1.0]).is_err());
        assert!(LqrWeights::new(dmatrix![1.0, 0.1; 0.0, 1.0], dmatrix![1.0]).is_err());
        assert!(RobustnessParams::new(-0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn floor_flag_only_when_robustness_requested() {
        let mut p = scalar_problem(-1.0, 1.0);
        p.robustness = RobustnessParams::new(1.0, 0.5, 1.0).unwrap();
        let rep = validate(&p);
        assert!(rep.robustness_requested);
        assert!((rep.q_floor - 3.0).abs() < 1e-12);
        assert!(!rep.q_floor_satisfied);
        assert!(rep.passed());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn q_floor_invariant_under_orthogonal_similarity(
            eig in proptest::collection::vec(0.1f64..10.0, 3),
            angles in proptest::collection::vec(-3.0f64..3.0, 3),
            alpha in 0.0f64..2.0,
            d in 0.0f64..5.0,
        ) {
            let r = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig));
            let rot = |i: usize, j: usize, t: f64| {
                let mut g = DMatrix::<f64>::identity(3, 3);
                g[(i, i)] = t.cos();
                g[(j, j)] = t.cos();
                g[(i, j)] = -t.sin();
                g[(j, i)] = t.sin();
                g
            };
            let u = rot(0, 1, angles[0]) * rot(1, 2, angles[1]) * rot(0, 2, angles[2]);
            let r2 = &u * &r * u.transpose();
            let r2 = crate::linalg::symmetrize(&r2);
            let a = q_floor(alpha, d, &r).unwrap();
            let b = q_floor(alpha, d, &r2).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
