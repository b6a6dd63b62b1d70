//! Command-line driver: operator checks, the lambda window, single solves,
//! the three-solution driver, bifurcation branches, the uniqueness scan and
//! the semipositone continuation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fracsing::branch::{
    default_lambda_grid, log_grid, lower_bound_check, outer_interval, trace_branch, uniqueness_scan,
};
use fracsing::export::{
    audit_branch_json, branch_csv, branch_json, embedded_spec, eps_trace_csv, fmt_f64,
    profiles_csv, semipositone_csv, solution_set_json, uniqueness_csv, write_text,
};
use fracsing::operator::default_cache_dir;
use fracsing::semipositone::{
    continue_theta, si_barrier, solve_i0, verify_lambda, SemipositoneSpec,
};
use fracsing::{
    apply_t, build_h, cone_inf, lambda_window, make_grid, minimal_fixed_point, principal_eigenpair,
    three_solutions, Error, GreenOperator, ProblemSpec, Result, SolverContext,
};

#[derive(Parser, Debug)]
#[command(
    name = "fracsing",
    version,
    about = "Singular fractional Dirichlet problems on (-1, 1)"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat `key = value` problem file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of grid nodes.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Fractional order in (0, 1/2).
    #[arg(long, global = true)]
    s: Option<f64>,
    /// Singularity exponent in (0, 1).
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Exemplar parameter.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Seed for the perturbed deflation starts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Assemble the kernel without reading or writing the cache.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct LambdaRange {
    /// Smallest lambda of a log-spaced grid (default grid when absent).
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long, default_value_t = 40)]
    points: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relative error of K(1) against the closed-form torsion function.
    TorsionCheck {
        /// Grid sizes to check.
        #[arg(long, value_delimiter = ',', default_values_t = vec![128usize, 256, 512])]
        sizes: Vec<usize>,
    },
    /// Principal eigenpair of the discrete operator.
    Eigen,
    /// The admissible lambda window and the constants behind it.
    Window,
    /// Minimal fixed point of the outer order interval at one lambda.
    Solve {
        #[arg(long)]
        lambda: f64,
        /// Also write the eps-continuation trace of the final T application here.
        #[arg(long)]
        eps_trace: Option<PathBuf>,
    },
    /// Two barrier-certified solutions and a deflated search for a third.
    ThreeSolutions {
        #[arg(long)]
        lambda: f64,
        /// Include nodal values in the JSON output.
        #[arg(long)]
        include_solutions: bool,
    },
    /// Solutions over a lambda grid.
    Branch {
        #[command(flatten)]
        range: LambdaRange,
        /// Include nodal values in the JSON output (needed by `audit`).
        #[arg(long)]
        include_solutions: bool,
    },
    /// Minimal and maximal fixed points over a lambda grid.
    UniquenessScan {
        #[command(flatten)]
        range: LambdaRange,
    },
    /// Sublinear solution, its linearized eigenvalue and the theta branch.
    Semipositone {
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        /// Defaults to (1 + q) / 2.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        theta_max: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Recomputes residuals of a branch exported as JSON with solutions.
    Audit {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn load_spec(g: &Global) -> Result<ProblemSpec> {
    let spec = match &g.config {
        Some(path) => ProblemSpec::from_config_file(path)?,
        None => ProblemSpec::default(),
    };
    with_overrides(g, spec)
}

/// Applies the command-line problem flags on top of `spec`.
fn with_overrides(g: &Global, mut spec: ProblemSpec) -> Result<ProblemSpec> {
    if let Some(n) = g.n {
        spec.n = n;
    }
    if let Some(s) = g.s {
        spec.s = s;
    }
    if let Some(q) = g.q {
        spec.q = q;
    }
    if let Some(alpha) = g.alpha {
        spec.alpha = alpha;
    }
    spec.validate()?;
    Ok(spec)
}

fn cache_dir(g: &Global) -> Option<PathBuf> {
    (!g.no_cache).then(default_cache_dir)
}

fn context(g: &Global, spec: &ProblemSpec) -> Result<SolverContext> {
    SolverContext::build(spec, cache_dir(g).as_deref())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn lambda_grid(range: &LambdaRange, default: Vec<f64>) -> Result<Vec<f64>> {
    match (range.lambda_min, range.lambda_max) {
        (None, None) => Ok(default),
        (Some(lo), Some(hi)) if lo > 0.0 && hi > lo && range.points >= 2 => {
            Ok(log_grid(lo, hi, range.points))
        }
        (Some(lo), Some(_)) if lo > 0.0 && range.points == 1 => Ok(vec![lo]),
        _ => Err(Error::config(
            "--lambda-min and --lambda-max must be given together with 0 < min < max",
        )),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let out = g.out.as_deref();
    // an unreadable config file is a configuration problem too
    let spec = load_spec(g).map_err(|e| {
        if e.is_config() {
            e
        } else {
            Error::config(e.to_string())
        }
    })?;
    match &cli.command {
        Command::TorsionCheck { sizes } => torsion_check(g, &spec, sizes),
        Command::Eigen => {
            let ctx = context(g, &spec)?;
            let nodes = ctx.op().grid().nodes();
            match g.format {
                Format::Csv => {
                    eprintln!("principal eigenvalue {}", fmt_f64(ctx.lambda1()));
                    emit(out, &profiles_csv(nodes, &[("phi", ctx.phi())]))
                }
                Format::Json => emit(
                    out,
                    &json_text(&json!({
                        "n": spec.n,
                        "s": spec.s,
                        "lambda1": ctx.lambda1(),
                        "nodes": nodes,
                        "phi": ctx.phi().values(),
                    })),
                ),
            }
        }
        Command::Window => {
            let ctx = context(g, &spec)?;
            let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2)?;
            let w = lambda_window(&ctx, &h)?;
            match g.format {
                Format::Csv => {
                    let mut t = String::new();
                    for (k, v) in [
                        ("lambda1", fmt_f64(w.lambda1)),
                        ("lambda2", fmt_f64(w.lambda2)),
                        ("a_star", fmt_f64(w.a_star)),
                        ("h(a_star)", fmt_f64(w.h_a_star)),
                        ("M2", fmt_f64(w.m2)),
                        ("M3", fmt_f64(w.m3)),
                        ("C1", fmt_f64(w.c1)),
                        ("|w|_inf", fmt_f64(w.w_sup)),
                        ("binding", w.binding.clone()),
                        ("empty", w.empty.to_string()),
                    ] {
                        let _ = writeln!(t, "{k:<10} {v}");
                    }
                    emit(out, &t)
                }
                Format::Json => emit(
                    out,
                    &json_text(&serde_json::to_value(&w).expect("window serializes")),
                ),
            }
        }
        Command::Solve { lambda, eps_trace } => {
            let ctx = context(g, &spec.with_lambda(*lambda))?;
            let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2)?;
            let w = lambda_window(&ctx, &h)?;
            let (lower, upper) = outer_interval(&ctx, &h, &w)?;
            let run = minimal_fixed_point(&ctx, &lower, &upper)?;
            let u = &run.result;
            if let Some(path) = eps_trace {
                let t = apply_t(&ctx, u)?;
                write_text(path, &eps_trace_csv(&t.eps_trace))?;
            }
            let margin = lower_bound_check(&ctx, u)?;
            let cone = cone_inf(u, ctx.phi())?;
            match g.format {
                Format::Csv => {
                    eprintln!(
                        "lambda {} sup {} residual {} cone_inf {} lower-bound margin {}",
                        fmt_f64(*lambda),
                        fmt_f64(u.sup_norm()),
                        fmt_f64(run.residual),
                        fmt_f64(cone),
                        fmt_f64(margin)
                    );
                    emit(out, &profiles_csv(ctx.op().grid().nodes(), &[("u", u)]))
                }
                Format::Json => emit(
                    out,
                    &json_text(&json!({
                        "lambda": lambda,
                        "sup_norm": u.sup_norm(),
                        "residual": run.residual,
                        "cone_inf": cone,
                        "lower_bound_margin": margin,
                        "iterations": run.iterates_sup.len() - 1,
                        "nodes": ctx.op().grid().nodes(),
                        "values": u.values(),
                    })),
                ),
            }
        }
        Command::ThreeSolutions {
            lambda,
            include_solutions,
        } => {
            let ctx = context(g, &spec.with_lambda(*lambda))?;
            let set = three_solutions(&ctx, g.seed)?;
            let value = solution_set_json(&set, *include_solutions);
            match g.format {
                Format::Json => emit(out, &json_text(&value)),
                Format::Csv => {
                    let mut t = String::from("lambda,kind,sup_norm,residual\n");
                    for ((kind, u), r) in set.solutions().into_iter().zip(&set.residuals) {
                        let _ = writeln!(
                            t,
                            "{},{},{},{}",
                            fmt_f64(set.lambda),
                            kind.as_str(),
                            fmt_f64(u.sup_norm()),
                            fmt_f64(*r)
                        );
                    }
                    emit(out, &t)
                }
            }
        }
        Command::Branch {
            range,
            include_solutions,
        } => {
            let ctx = context(g, &spec)?;
            let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2)?;
            let w = lambda_window(&ctx, &h)?;
            let grid = lambda_grid(range, default_lambda_grid(&w))?;
            let branch = trace_branch(&ctx, &grid, g.seed)?;
            match g.format {
                Format::Csv => emit(out, &branch_csv(&branch)),
                Format::Json => emit(
                    out,
                    &json_text(&branch_json(&branch, ctx.spec(), *include_solutions)),
                ),
            }
        }
        Command::UniquenessScan { range } => {
            let ctx = context(g, &spec)?;
            let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2)?;
            let w = lambda_window(&ctx, &h)?;
            let grid = lambda_grid(range, default_lambda_grid(&w))?;
            let report = uniqueness_scan(&ctx, &grid)?;
            match g.format {
                Format::Csv => {
                    eprintln!(
                        "lambda* {} (decay condition {}); gap exponent {}; uniqueness-constant exponent {}",
                        report.lambda_star.map_or("none".into(), fmt_f64),
                        report.decay_condition,
                        report.gap_exponent.map_or("none".into(), fmt_f64),
                        report.constant_exponent.map_or("none".into(), fmt_f64)
                    );
                    emit(out, &uniqueness_csv(&report))
                }
                Format::Json => emit(
                    out,
                    &json_text(&serde_json::to_value(&report).expect("report serializes")),
                ),
            }
        }
        Command::Semipositone {
            p,
            gamma,
            theta_max,
            steps,
        } => {
            let mut sp = SemipositoneSpec::for_q(spec.q);
            sp.p = *p;
            if let Some(v) = gamma {
                sp.gamma = *v;
            }
            if let Some(v) = theta_max {
                sp.theta_max = *v;
            }
            if let Some(v) = steps {
                sp.steps = *v;
            }
            sp.validate(spec.q)?;
            let grid = make_grid(spec.n, spec.grading)?;
            let op = GreenOperator::assemble_cached(&grid, spec.s, cache_dir(g).as_deref())?;
            let v0 = solve_i0(&op, sp.p)?;
            let lam = verify_lambda(&op, &v0, sp.p)?;
            let branch = continue_theta(&op, &sp, &v0)?;
            let last = branch.points.last().expect("branch holds v0");
            let eta = si_barrier(&op, spec.q, &sp, &last.v, last.theta, 0.0);
            match g.format {
                Format::Csv => {
                    eprintln!(
                        "v0 sup {}; linearized eigenvalue {}; {} branch points{}",
                        fmt_f64(v0.sup_norm()),
                        fmt_f64(lam.value),
                        branch.points.len(),
                        branch
                            .stop_reason
                            .as_deref()
                            .map_or(String::new(), |r| format!("; stopped: {r}"))
                    );
                    emit(out, &semipositone_csv(&branch))
                }
                Format::Json => {
                    let points: Vec<_> = branch
                        .points
                        .iter()
                        .map(|pt| {
                            json!({
                                "theta": pt.theta,
                                "sup_norm": pt.v.sup_norm(),
                                "residual": pt.residual,
                                "cone_inf": pt.cone_inf,
                            })
                        })
                        .collect();
                    emit(
                        out,
                        &json_text(&json!({
                            "spec": sp,
                            "v0_sup_norm": v0.sup_norm(),
                            "linearized_eigenvalue": lam.value,
                            "eigenfunction_sign_constant": lam.sign_constant,
                            "boundary_strip": eta,
                            "stop_reason": branch.stop_reason,
                            "points": points,
                        })),
                    )
                }
            }
        }
        Command::Audit { input } => {
            let text = std::fs::read_to_string(input).map_err(|e| Error::Io {
                path: input.clone(),
                source: e,
            })?;
            // without --config the problem embedded in the export is audited
            let spec = match (&g.config, embedded_spec(&text)?) {
                (None, Some(embedded)) => with_overrides(g, embedded)?,
                _ => spec,
            };
            let ctx = context(g, &spec)?;
            let report = audit_branch_json(&ctx, &text)?;
            emit(
                out,
                &json_text(&serde_json::to_value(&report).expect("report serializes")),
            )?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "audit rejected {} of {} checked rows (largest residual {:e})",
                    report.rejected.len(),
                    report.checked,
                    report.max_residual
                )))
            }
        }
    }
}

fn torsion_check(g: &Global, spec: &ProblemSpec, sizes: &[usize]) -> Result<()> {
    let sizes: Vec<usize> = match g.n {
        Some(n) => vec![n],
        None => sizes.to_vec(),
    };
    let mut rows = Vec::new();
    for &n in &sizes {
        let grid = make_grid(n, spec.grading)?;
        let op = GreenOperator::assemble_cached(&grid, spec.s, cache_dir(g).as_deref())?;
        let lambda1 = principal_eigenpair(&op)?.value;
        rows.push((n, op.torsion_error(), lambda1));
    }
    let monotone = rows.windows(2).all(|w| w[1].1 < w[0].1);
    match g.format {
        Format::Csv => {
            let mut t = String::from("n,torsion_error,lambda1\n");
            for (n, e, l) in &rows {
                let _ = writeln!(t, "{n},{},{}", fmt_f64(*e), fmt_f64(*l));
            }
            eprintln!("error decreasing with n: {monotone}");
            emit(g.out.as_deref(), &t)
        }
        Format::Json => {
            let entries: Vec<_> = rows
                .iter()
                .map(|(n, e, l)| json!({"n": n, "torsion_error": e, "lambda1": l}))
                .collect();
            emit(
                g.out.as_deref(),
                &json_text(&json!({"s": spec.s, "monotone": monotone, "entries": entries})),
            )
        }
    }
}
