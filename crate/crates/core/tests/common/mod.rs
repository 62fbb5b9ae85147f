//! Independent oracles and problem generators shared by the integration
//! tests. Nothing here calls into the policy-iteration code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rsrl_core::{LqrWeights, LtiSystem, RobustnessParams, StructurePattern, SynthesisProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Stabilizing CARE solution `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` from the matrix
/// sign function of the Hamiltonian (scaled Newton iteration).
pub fn care_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let g = b * r.clone().try_inverse().expect("R invertible") * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    for _ in 0..100 {
        let zi = z.clone().try_inverse().expect("Hamiltonian has no imaginary-axis eigenvalues");
        let det = z.determinant().abs();
        let c = det.powf(-1.0 / (2 * n) as f64);
        let next = (&z * c + zi / c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-15 {
            break;
        }
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(z.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(z.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .expect("sign-function least squares");
    (&p + p.transpose()) * 0.5
}

/// `e^{tS}` for symmetric `S` by eigendecomposition.
pub fn expm_symmetric(s: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (l * t).exp())) * v.transpose()
}

/// Random `(A, B, Q, R, pattern)` with `m = n`, `B` near identity and a
/// pattern that always keeps one entry per row. The structured iteration
/// is well behaved on this family.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, beta: f64) -> SynthesisProblem {
    let a = gaussian(rng, n, n) / (n as f64).sqrt();
    let b = DMatrix::identity(n, n) + gaussian(rng, n, n) * 0.2;
    let q_scale = rng.random_range(1.0..5.0);
    let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(1.0..2.0))) * q_scale;
    let r = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)));
    let pattern = random_pattern(rng, n, n);
    SynthesisProblem::new(
        LtiSystem::new(a, b).unwrap(),
        pattern,
        LqrWeights::new(q, r).unwrap(),
        RobustnessParams::new(0.0, beta, 0.0).unwrap(),
    )
    .unwrap()
}

/// Entries allowed with probability 1/2, plus `(i, i mod cols)` always.
pub fn random_pattern(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> StructurePattern {
    let ind = DMatrix::from_fn(rows, cols, |i, j| {
        if j == i % cols || rng.random_bool(0.5) {
            1.0
        } else {
            0.0
        }
    });
    StructurePattern::from_indicator(&ind).unwrap()
}

/// Same problem with the all-ones pattern.
pub fn densified(problem: &SynthesisProblem) -> SynthesisProblem {
    SynthesisProblem::new(
        problem.system.clone(),
        StructurePattern::full(problem.inputs(), problem.states()),
        problem.weights.clone(),
        problem.robustness,
    )
    .unwrap()
}

pub fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = gaussian(rng, n, n);
    let shift = rsrl_core::linalg::spectral_abscissa(&m).unwrap() + rng.random_range(0.1..2.0);
    m - DMatrix::identity(n, n) * shift
}

pub fn paper_a() -> DMatrix<f64> {
    nalgebra::dmatrix![
        -5.0, 2.0, 3.0, 0.0, 0.0, 0.0;
        2.0, -6.0, 0.0, 0.0, 1.0, 3.0;
        3.0, 0.0, -5.0, 2.0, 0.0, 0.0;
        0.0, 0.0, 2.0, -2.0, 0.0, 0.0;
        0.0, 1.0, 0.0, 0.0, -4.0, 3.0;
        0.0, 3.0, 0.0, 0.0, 3.0, -6.0
    ]
}

pub fn paper_x0() -> DVector<f64> {
    DVector::from_vec(vec![0.3, 0.5, 0.4, 0.8, 0.9, 0.6])
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &v / v.norm()
}
