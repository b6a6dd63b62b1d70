//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::time::Instant;

use fracsing::barriers::{build_barriers, build_h, first_pair, lambda_window, Window};
use fracsing::branch::{
    default_lambda_grid, log_grid, lower_bound_check, trace_branch, uniqueness_scan,
};
use fracsing::export::branch_csv;
use fracsing::multiplicity::{minimal_fixed_point, strong_increasing_gap, three_solutions};
use fracsing::semipositone::{
    continue_theta, solve_i0, solve_i0_scaled, sublinear_energy, sublinear_gradient,
    sublinear_start, verify_lambda, SemipositoneSpec,
};
use fracsing::singular::{solve_pure_singular, ContinuationSettings, SingularProblem};
use fracsing::tmap::apply_t;
use fracsing::{make_grid, Grading, GreenOperator, GridFunction, ProblemSpec, SolverContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn operator(n: usize, s: f64) -> GreenOperator {
    GreenOperator::assemble(&make_grid(n, Grading::Chebyshev).unwrap(), s).unwrap()
}

fn default_spec() -> ProblemSpec {
    ProblemSpec::default()
}

/// The exemplar with alpha = 10 and sigma = (2, 60), whose window is nonempty.
fn wide_spec() -> ProblemSpec {
    ProblemSpec {
        alpha: 10.0,
        sigma1: 2.0,
        sigma2: 60.0,
        ..ProblemSpec::default()
    }
}

fn window_of(spec: &ProblemSpec) -> Result<(SolverContext, fracsing::TruncationH, Window), String> {
    let ctx = SolverContext::new(spec).map_err(|e| e.to_string())?;
    let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2).map_err(|e| e.to_string())?;
    let w = lambda_window(&ctx, &h).map_err(|e| e.to_string())?;
    Ok((ctx, h, w))
}

fn window_samples(w: &Window, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| w.lambda1 + (w.lambda2 - w.lambda1) * (k as f64 + 0.5) / count as f64)
        .collect()
}

fn torsion() -> Outcome {
    let start = Instant::now();
    let errors: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| operator(n, 0.25).torsion_error())
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    check(
        errors[2] < 1e-3 && monotone && secs < 30.0,
        format!("errors {errors:?} for N = 128, 256, 512; {secs:.2} s"),
    )
}

fn scaling_laws() -> Outcome {
    let op = operator(256, 0.25);
    let q = 1.0 / 3.0;
    let w1 = solve_pure_singular(&op, q, 1.0).map_err(|e| e.to_string())?;
    let mut singular_err: f64 = 0.0;
    for c in [0.25, 3.0, 20.0] {
        let wc = solve_pure_singular(&op, q, c).map_err(|e| e.to_string())?;
        singular_err = singular_err.max(wc.sup_distance(&w1.scale(c.powf(1.0 / (1.0 + q)))));
    }
    let p = 0.5;
    let v1 = solve_i0(&op, p).map_err(|e| e.to_string())?;
    let mut sublinear_err: f64 = 0.0;
    for c in [0.25, 3.0, 20.0] {
        let vc = solve_i0_scaled(&op, p, c, None, 1e-12).map_err(|e| e.to_string())?;
        sublinear_err = sublinear_err.max(vc.sup_distance(&v1.scale(c.powf(1.0 / (1.0 - p)))));
    }
    check(
        singular_err < 1e-8 && sublinear_err < 1e-8,
        format!("singular homogeneity error {singular_err:.2e}, sublinear {sublinear_err:.2e}"),
    )
}

fn eps_monotonicity() -> Outcome {
    let spec = default_spec();
    let op = operator(256, spec.s);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let settings = ContinuationSettings {
        eps_min: spec.eps_min,
        ..ContinuationSettings::default()
    };
    let mut worst: f64 = 0.0;
    let mut levels = 0;
    for _ in 0..10 {
        let amp: f64 = rng.random_range(0.0..5.0);
        let freq: f64 = rng.random_range(0.5..6.0);
        let phase: f64 = rng.random_range(0.0..6.3);
        let g = GridFunction::from_fn(op.grid().nodes(), |x| {
            amp * (1.0 + (freq * x + phase).sin())
        });
        let c: f64 = rng.random_range(0.2..3.0);
        let res = SingularProblem::new(&op, &g, c, spec.q)
            .continuation(None, &settings)
            .map_err(|e| e.to_string())?;
        for w in res.levels.windows(2) {
            worst = worst.max(w[0].le_violation(&w[1]));
        }
        if let Some(last) = res.levels.last() {
            worst = worst.max(last.le_violation(&res.z));
        }
        levels += res.levels.len();
    }
    check(
        worst <= spec.tol_order,
        format!("largest decrease between eps levels {worst:.2e} over {levels} levels"),
    )
}

fn monotone_map() -> Outcome {
    let spec = default_spec().with_lambda(0.5);
    let ctx = SolverContext::new(&spec).map_err(|e| e.to_string())?;
    let w = ctx.profile().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..20 {
        let amp: f64 = rng.random_range(0.05..10.0);
        let u1 = GridFunction::new(
            w.values()
                .iter()
                .map(|v| amp * v * rng.random_range(0.3..1.0))
                .collect(),
        );
        let bump: f64 = rng.random_range(0.01..3.0);
        let u2 = GridFunction::new(
            u1.values()
                .iter()
                .map(|v| v + bump * rng.random_range(0.0..1.0))
                .collect(),
        );
        let t1 = apply_t(&ctx, &u1).map_err(|e| e.to_string())?.z;
        let t2 = apply_t(&ctx, &u2).map_err(|e| e.to_string())?.z;
        worst = worst.max(t1.le_violation(&t2));
        min_gap = min_gap.min(strong_increasing_gap(&ctx, &u1, &u2).map_err(|e| e.to_string())?);
    }
    check(
        worst <= spec.tol_order && min_gap > 0.0,
        format!("largest order violation {worst:.2e}; smallest cone gap {min_gap:.3e}"),
    )
}

fn barrier_certificates() -> Outcome {
    let (_, _, dw) = window_of(&default_spec())?;
    let spec = wide_spec();
    let (_, h, w) = window_of(&spec)?;
    if w.empty {
        return Err("window empty on the alpha = 10 configuration".into());
    }
    let mut worst: f64 = 0.0;
    for lambda in window_samples(&w, 5) {
        let ctx = SolverContext::new(&spec.with_lambda(lambda)).map_err(|e| e.to_string())?;
        let b = build_barriers(&ctx, &h, &w).map_err(|e| e.to_string())?;
        let r = b.report(&ctx);
        let scale = b.theta1.sup_norm();
        let defect = [
            r.zeta1_defect,
            r.theta1_defect,
            r.zeta2_defect,
            r.theta2_defect,
        ]
        .into_iter()
        .fold(0.0, f64::max)
            / scale;
        worst = worst.max(defect);
        let sup_ok = (b.theta2.sup_norm() - spec.sigma1).abs() <= 1e-12 * spec.sigma1
            && b.zeta2.sup_norm() >= b.a
            && b.a > spec.sigma1;
        if !(r.ordered && r.separated && sup_ok && defect <= spec.tol_order) {
            return Err(format!("lambda {lambda}: {r:?}"));
        }
    }
    Ok(format!(
        "default window empty (lambda1 {:.4} > lambda2 {:.4}); alpha = 10, sigma = (2, 60): window [{:.4}, {:.4}], 5 lambdas, largest relative defect {worst:.1e}",
        dw.lambda1, dw.lambda2, w.lambda1, w.lambda2
    ))
}

fn two_solutions() -> Outcome {
    let spec = wide_spec();
    let (_, _, w) = window_of(&spec)?;
    let mut found = 0;
    let mut slowest: f64 = 0.0;
    for lambda in window_samples(&w, 5) {
        let ctx = SolverContext::new(&spec.with_lambda(lambda)).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let set = three_solutions(&ctx, Some(1)).map_err(|e| format!("lambda {lambda}: {e}"))?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let (s1, s2) = (set.u1.sup_norm(), set.u2.sup_norm());
        if !(s1 <= spec.sigma1 && spec.sigma1 < set.barriers.a && set.barriers.a <= s2) {
            return Err(format!(
                "lambda {lambda}: sup u1 {s1}, a {}, sup u2 {s2}",
                set.barriers.a
            ));
        }
        if set.residuals.iter().any(|r| !(*r <= 1e-6)) {
            return Err(format!("lambda {lambda}: residuals {:?}", set.residuals));
        }
        if let Some(u3) = &set.u3 {
            let sep = u3.sup_distance(&set.u1).min(u3.sup_distance(&set.u2));
            if sep < 10.0 * spec.tol_residual {
                return Err(format!(
                    "lambda {lambda}: third solution not separated ({sep:e})"
                ));
            }
            found += 1;
        }
    }
    check(
        slowest < 300.0,
        format!("5 lambdas certified; third solution found at {found}/5; slowest {slowest:.1} s"),
    )
}

fn lower_bound() -> Outcome {
    let spec = default_spec();
    let mut worst = f64::INFINITY;
    for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let ctx = SolverContext::new(&spec.with_lambda(lambda)).map_err(|e| e.to_string())?;
        let p = first_pair(&ctx).map_err(|e| e.to_string())?;
        let u = minimal_fixed_point(&ctx, &p.zeta1, &p.theta1)
            .map_err(|e| e.to_string())?
            .result;
        worst = worst.min(lower_bound_check(&ctx, &u).map_err(|e| e.to_string())?);
    }
    check(
        worst >= -spec.tol_order,
        format!("smallest margin {worst:.3e}"),
    )
}

fn uniqueness() -> Outcome {
    let spec = default_spec();
    let (ctx, _, w) = window_of(&spec)?;
    let grid = default_lambda_grid(&w);
    let r = uniqueness_scan(&ctx, &grid).map_err(|e| e.to_string())?;
    let Some(star) = r.lambda_star else {
        return Err(format!(
            "no threshold (decay condition {})",
            r.decay_condition
        ));
    };
    let max_gap = r.entries.iter().map(|e| e.gap).fold(0.0, f64::max);
    let (exponent, source) = match (r.gap_exponent, r.constant_exponent) {
        (Some(e), _) => (e, "min/max gap"),
        (None, Some(e)) => (e, "uniqueness constant (gap below resolution everywhere)"),
        (None, None) => return Err("no decay exponent could be fitted".into()),
    };
    check(
        exponent < 0.0,
        format!(
            "lambda* = {star:.4e} over [{:.0e}, {:.0e}]; largest gap {max_gap:.1e}; decay exponent {exponent:.3} from {source}",
            grid[0],
            grid[grid.len() - 1]
        ),
    )
}

fn semipositone() -> Outcome {
    let spec = default_spec();
    let op = operator(256, spec.s);
    let p = 0.5;
    let a = solve_i0_scaled(&op, p, 1.0, Some(&sublinear_start(&op, p, 1.0, 0.5)), 1e-11)
        .map_err(|e| e.to_string())?;
    let b = solve_i0_scaled(&op, p, 1.0, Some(&sublinear_start(&op, p, 1.0, 2.0)), 1e-11)
        .map_err(|e| e.to_string())?;
    let agree = a.sup_distance(&b);
    let lam = verify_lambda(&op, &a, p).map_err(|e| e.to_string())?;
    let sp = SemipositoneSpec::for_q(spec.q);
    let branch = continue_theta(&op, &sp, &a).map_err(|e| e.to_string())?;
    let certified = branch
        .points
        .iter()
        .filter(|pt| pt.residual <= sp.tol && pt.cone_inf > 0.0)
        .count();
    let ratios: Vec<f64> = branch
        .points
        .iter()
        .filter(|pt| pt.theta > 0.0)
        .map(|pt| pt.v.sup_distance(&a) / pt.theta)
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    check(
        agree < 1e-8 && lam.value > 0.0 && lam.sign_constant && certified >= 10 && hi.is_finite() && hi < 10.0 * lo,
        format!(
            "starts agree to {agree:.1e}; linearized eigenvalue {:.4}; {certified} certified points up to theta {:.3}; |v - v0|/theta in [{lo:.3}, {hi:.3}]",
            lam.value,
            branch.points.last().unwrap().theta
        ),
    )
}

fn gradients() -> Outcome {
    let op = operator(128, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = GridFunction::from_fn(op.grid().nodes(), |x| 1.0 + x * x);
    let problem = SingularProblem::new(&op, &g, 0.8, 1.0 / 3.0).with_shift(0.3);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let z = GridFunction::new((0..op.len()).map(|_| rng.random_range(0.1..3.0)).collect());
        let d = GridFunction::new((0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let h = 1e-4;
        let eps = if k % 2 == 0 { 1e-2 } else { 0.5 };
        let analytic: f64 = problem
            .gradient(&z, eps)
            .values()
            .iter()
            .zip(d.values())
            .map(|(a, b)| a * b)
            .sum();
        let fd = (problem.energy(&(&z + &d.scale(h)), eps)
            - problem.energy(&(&z - &d.scale(h)), eps))
            / (2.0 * h);
        worst = worst.max((fd - analytic).abs() / analytic.abs());
        let analytic: f64 = sublinear_gradient(&op, 0.5, 1.0, &z)
            .values()
            .iter()
            .zip(d.values())
            .map(|(a, b)| a * b)
            .sum();
        let fd = (sublinear_energy(&op, 0.5, 1.0, &(&z + &d.scale(h)))
            - sublinear_energy(&op, 0.5, 1.0, &(&z - &d.scale(h))))
            / (2.0 * h);
        worst = worst.max((fd - analytic).abs() / analytic.abs());
    }
    check(
        worst < 1e-6,
        format!("largest relative mismatch {worst:.2e} over 20 directional checks"),
    )
}

fn determinism() -> Outcome {
    let spec = wide_spec();
    let run = || -> Result<String, String> {
        let ctx = SolverContext::new(&spec).map_err(|e| e.to_string())?;
        let grid = log_grid(0.05, 2.0, 10);
        let b = trace_branch(&ctx, &grid, Some(7)).map_err(|e| e.to_string())?;
        Ok(branch_csv(&b))
    };
    let (a, b) = (run()?, run()?);
    check(
        a == b,
        format!(
            "{} CSV bytes, {} rows, identical: {}",
            a.len(),
            a.lines().count() - 1,
            a == b
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("torsion oracle", torsion),
        ("scaling laws", scaling_laws),
        ("eps-monotonicity", eps_monotonicity),
        ("monotone map", monotone_map),
        ("barrier certificates", barrier_certificates),
        ("two-solution guarantee", two_solutions),
        ("lower bound", lower_bound),
        ("large-lambda uniqueness", uniqueness),
        ("semipositone", semipositone),
        ("gradient checks", gradients),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "criterion {:>2} PASS  {name}: {detail} [{secs:.1} s]",
                k + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {:>2} FAIL  {name}: {detail} [{secs:.1} s]",
                    k + 1
                );
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
