mod common;

use common::{care_oracle, densified, paper_a, random_problem, rel, rng, unit_vector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rsrl_core::bench::{matrix_from_rows, paper_6agent_config, Experiment};
use rsrl_core::model::q_floor;
use rsrl_core::synthesis::{
    complement_part, default_initial_gain, gain_map, kleinman_step, lyapunov_derivative,
    min_eigenvalue, structured_policy_iteration, verify_modified_are, IterationOptions,
};
use rsrl_core::{LqrWeights, LtiSystem, RobustnessParams, StructurePattern, SynthesisProblem};

fn benchmark() -> SynthesisProblem {
    Experiment::from_config(&paper_6agent_config()).unwrap().problem
}

fn benchmark_k0() -> DMatrix<f64> {
    DMatrix::identity(6, 6) * 3.0
}

#[test]
fn dense_pattern_matches_care_oracle() {
    let mut r = rng(3);
    for trial in 0..20 {
        let n = 2 + trial % 5;
        let problem = densified(&random_problem(&mut r, n, 0.0));
        let res = structured_policy_iteration(&problem, None, IterationOptions::default()).unwrap();
        let oracle = care_oracle(
            problem.system.a(),
            problem.system.b(),
            problem.weights.q(),
            problem.weights.r(),
        );
        let err = rel(&res.p, &oracle);
        assert!(err < 1e-6, "trial {trial}: relative error {err:e}");
        assert_eq!(res.l, DMatrix::zeros(n, n));
    }
}

#[test]
fn iterates_keep_the_pattern_and_satisfy_both_identities() {
    let problem = benchmark();
    let (a, b) = (problem.system.a(), problem.system.b());
    let (q, r) = (problem.weights.q(), problem.weights.r());
    let beta = problem.robustness.beta;
    let map = gain_map(b, r).unwrap();
    let mut k = benchmark_k0();
    for iteration in 0..8 {
        let step = kleinman_step(&problem, &k).unwrap();
        let p = &step.p;
        let acl = a - b * &k;
        let first = acl.transpose() * p + p * &acl + k.transpose() * r * &k + q + p * (2.0 * beta);
        // completing the square with F = R⁻¹BᵀP − K
        let f = &map * p - &k;
        let second = a.transpose() * p + p * a - p * b * &map * p + f.transpose() * r * &f + q + p * (2.0 * beta);
        assert!(first.norm() < 1e-8, "iteration {iteration}: {:e}", first.norm());
        assert!(second.norm() < 1e-8, "iteration {iteration}: {:e}", second.norm());
        for (i, j) in problem.pattern.forbidden_entries() {
            assert_eq!(step.next_gain[(i, j)], 0.0);
        }
        k = step.next_gain;
    }
}

#[test]
fn benchmark_synthesis() {
    let problem = benchmark();
    let res = structured_policy_iteration(&problem, Some(&benchmark_k0()), IterationOptions::default()).unwrap();
    let tol = 1e-8 * (1.0 + problem.weights.q().norm());
    assert!(res.residual <= tol);
    assert!((verify_modified_are(&problem, &res.p).unwrap() - res.residual).abs() < 1e-15);
    for (i, j) in problem.pattern.forbidden_entries() {
        assert_eq!(res.k[(i, j)], 0.0);
    }
    let acl = problem.system.closed_loop(&res.k).unwrap();
    assert!(rsrl_core::linalg::spectral_abscissa(&acl).unwrap() < 0.0);
    // K + L = R⁻¹BᵀP
    let map = gain_map(problem.system.b(), problem.weights.r()).unwrap();
    assert!((&res.k + &res.l - &map * &res.p).norm() < 1e-12);
    assert!(res.warnings.is_empty(), "{:?}", res.warnings);
    // converged fixed point: F is exactly the complement part
    let f = complement_part(&(&map * &res.p), &problem.pattern).unwrap();
    assert_eq!(f, res.l);
    assert!(res.history.windows(2).skip(1).all(|w| w[1] < w[0]));
}

#[test]
fn printed_structured_gain_respects_the_pattern() {
    let fixture: serde_json::Value =
        serde_json::from_str(include_str!("../fixtures/paper-6agent-gains.json")).unwrap();
    let rows: Vec<Vec<f64>> = serde_json::from_value(fixture["structured_gain"].clone()).unwrap();
    let printed = matrix_from_rows(&rows, "printed gain").unwrap();
    let problem = benchmark();
    assert_eq!(complement_part(&printed, &problem.pattern).unwrap(), DMatrix::zeros(6, 6));
}

#[test]
fn lyapunov_decrease_for_nominal_closed_loop() {
    let mut r = rng(77);
    let mut problems: Vec<SynthesisProblem> = (0..5).map(|t| random_problem(&mut r, 2 + t, 0.0)).collect();
    let mut nominal = benchmark();
    nominal.robustness = RobustnessParams::nominal();
    problems.push(nominal);
    for problem in &problems {
        let k0 = default_initial_gain(problem).unwrap();
        let res = structured_policy_iteration(problem, Some(&k0), IterationOptions::default()).unwrap();
        let n = problem.states();
        let zero = DVector::zeros(problem.inputs());
        for _ in 0..1000 {
            let x = unit_vector(&mut r, n) * r.random_range(0.1..10.0);
            let dv = lyapunov_derivative(&problem.system, &res.k, &res.p, &x, &zero).unwrap();
            let bound = -x.dot(&(problem.weights.q() * &x)) + 1e-9;
            assert!(dv <= bound, "{dv} > {bound}");
        }
    }
}

#[test]
fn robust_decrease_above_the_floor() {
    let mut r = rng(78);
    let mut problems = vec![benchmark()];
    for t in 0..4 {
        let n = 2 + t;
        let base = random_problem(&mut r, n, 0.5);
        let (alpha, d) = (0.3, 1.0);
        let floor = q_floor(alpha, d, base.weights.r()).unwrap();
        let q = DMatrix::identity(n, n) * (floor + r.random_range(1.0..3.0)) + base.weights.q();
        problems.push(
            SynthesisProblem::new(
                base.system.clone(),
                base.pattern.clone(),
                LqrWeights::new(q, base.weights.r().clone()).unwrap(),
                RobustnessParams::new(alpha, 0.5, d).unwrap(),
            )
            .unwrap(),
        );
    }
    for (idx, problem) in problems.iter().enumerate() {
        let k0 = if idx == 0 { benchmark_k0() } else { default_initial_gain(problem).unwrap() };
        let res = structured_policy_iteration(problem, Some(&k0), IterationOptions::default()).unwrap();
        let (n, m) = (problem.states(), problem.inputs());
        let rob = problem.robustness;
        let p_min = min_eigenvalue(&res.p).unwrap();
        for _ in 0..1000 {
            let x = unit_vector(&mut r, n) * r.random_range(0.1..10.0);
            let rate = -2.0 * rob.beta * p_min * x.norm_squared() + 1e-8;
            for _ in 0..50 {
                let zeta = unit_vector(&mut r, m) * (rob.alpha * x.norm() * r.random_range(0.0..=1.0));
                let dv = lyapunov_derivative(&problem.system, &res.k, &res.p, &x, &zeta).unwrap();
                assert!(dv <= rate, "problem {idx}: {dv} > {rate}");
            }
        }
    }
}

#[test]
fn nonstabilizing_initial_gain_is_refused() {
    let problem = benchmark();
    let err = structured_policy_iteration(&problem, Some(&DMatrix::zeros(6, 6)), IterationOptions::default())
        .unwrap_err();
    assert!(matches!(err, rsrl_core::Error::NotStabilizing { iteration: 0, .. }));
}

#[test]
fn default_gain_for_shifted_consensus() {
    // A + I is unstable, so the default start must come from the stabilizing pre-step
    let problem = benchmark();
    let k0 = default_initial_gain(&problem).unwrap();
    let res = structured_policy_iteration(&problem, Some(&k0), IterationOptions::default()).unwrap();
    let reference = structured_policy_iteration(&problem, Some(&benchmark_k0()), IterationOptions::default()).unwrap();
    assert!(rel(&res.k, &reference.k) < 1e-8);
}

#[test]
fn full_pattern_step_is_classical_kleinman() {
    let problem = SynthesisProblem::new(
        LtiSystem::new(paper_a(), DMatrix::identity(6, 6)).unwrap(),
        StructurePattern::full(6, 6),
        LqrWeights::new(DMatrix::identity(6, 6) * 2.0, DMatrix::identity(6, 6)).unwrap(),
        RobustnessParams::nominal(),
    )
    .unwrap();
    let k = DMatrix::identity(6, 6);
    let step = kleinman_step(&problem, &k).unwrap();
    let acl = paper_a() - &k;
    let p = rsrl_core::linalg::solve_lyapunov(&acl, &(DMatrix::identity(6, 6) * 2.0 + k.transpose() * &k)).unwrap();
    assert!((&step.p - &p).norm() < 1e-12);
    assert!((&step.next_gain - &p).norm() < 1e-12);
}
