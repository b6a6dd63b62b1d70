use fracsing::singular::{solve_pure_singular, ContinuationSettings, SingularProblem};
use fracsing::{make_grid, Grading, GreenOperator, GridFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn operator(n: usize) -> GreenOperator {
    GreenOperator::assemble(&make_grid(n, Grading::Chebyshev).unwrap(), 0.25).unwrap()
}

fn random_forcing(rng: &mut ChaCha8Rng, n: usize) -> GridFunction {
    let a: f64 = rng.random_range(0.0..3.0);
    let b: f64 = rng.random_range(-1.0..1.0);
    let c: f64 = rng.random_range(1.0..6.0);
    GridFunction::new(
        (0..n)
            .map(|i| a * (1.0 + (c * i as f64 / n as f64 + b).sin()))
            .collect(),
    )
}

#[test]
fn pure_singular_homogeneity() {
    let op = operator(128);
    let q = 1.0 / 3.0;
    let w1 = solve_pure_singular(&op, q, 1.0).unwrap();
    for c in [0.5, 3.0, 10.0] {
        let wc = solve_pure_singular(&op, q, c).unwrap();
        let scaled = w1.scale(c.powf(1.0 / (1.0 + q)));
        assert!(
            wc.sup_distance(&scaled) <= 1e-8 * wc.sup_norm().max(1.0),
            "c = {c}"
        );
    }
}

#[test]
fn eps_iterates_increase_as_eps_halves() {
    let op = operator(128);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let settings = ContinuationSettings::default();
    for _ in 0..4 {
        let g = random_forcing(&mut rng, op.len());
        let res = SingularProblem::new(&op, &g, 1.0, 1.0 / 3.0)
            .continuation(None, &settings)
            .unwrap();
        assert!(res.levels.len() >= 2);
        for w in res.levels.windows(2) {
            assert!(w[0].le_violation(&w[1]) <= 1e-7 * w[1].sup_norm().max(1.0));
        }
        assert!(res.levels.last().unwrap().le_within(&res.z, 1e-7));
    }
}

#[test]
fn gradient_matches_central_differences() {
    let op = operator(64);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_forcing(&mut rng, op.len());
    let problem = SingularProblem::new(&op, &g, 1.3, 1.0 / 3.0).with_shift(0.7);
    for _ in 0..5 {
        let z = GridFunction::new((0..op.len()).map(|_| rng.random_range(0.1..2.0)).collect());
        let dir = GridFunction::new((0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        for eps in [1e-3, 0.5] {
            let grad = problem.gradient(&z, eps);
            let analytic: f64 = grad
                .values()
                .iter()
                .zip(dir.values())
                .map(|(a, b)| a * b)
                .sum();
            let h = 1e-5;
            let fd = (problem.energy(&(&z + &dir.scale(h)), eps)
                - problem.energy(&(&z - &dir.scale(h)), eps))
                / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3),
                "{fd} vs {analytic}"
            );
        }
    }
}

#[test]
fn solution_grows_with_forcing() {
    let op = operator(64);
    let settings = ContinuationSettings::default();
    let lo = GridFunction::constant(op.len(), 0.5);
    let hi = GridFunction::constant(op.len(), 1.5);
    let zl = SingularProblem::new(&op, &lo, 1.0, 0.5)
        .continuation(None, &settings)
        .unwrap()
        .z;
    let zh = SingularProblem::new(&op, &hi, 1.0, 0.5)
        .continuation(None, &settings)
        .unwrap()
        .z;
    assert!(zl.le_within(&zh, 0.0));
}
