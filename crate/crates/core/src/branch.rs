//! Bifurcation diagrams over lambda, the lower bound by the pure singular
//! profile and the large-lambda uniqueness scan.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::barriers::{build_barriers, build_h, first_pair, lambda_window, TruncationH, Window};
use crate::context::SolverContext;
use crate::error::{Error, Result};
use crate::gridfn::{cone_inf, GridFunction};
use crate::multiplicity::{
    maximal_fixed_point, minimal_fixed_point, search_from_starts, three_solutions, SolutionKind,
};
use crate::tmap::residual_p;

/// Number of points of the default lambda grid.
pub const DEFAULT_GRID_POINTS: usize = 40;

const POWER_MAX_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowFlag {
    Ok,
    Failed,
}

impl RowFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RowFlag::Ok => "ok",
            RowFlag::Failed => "failed",
        }
    }
}

/// One solution (or failure) at one lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub lambda: f64,
    pub kind: SolutionKind,
    pub sup_norm: f64,
    pub residual: f64,
    pub cone_inf: f64,
    pub flag: RowFlag,
    pub message: Option<String>,
    pub solution: Option<GridFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationBranch {
    /// Sorted by lambda, then sup norm.
    pub rows: Vec<BranchRow>,
    pub window: Window,
    /// Smallest sampled lambda from which on every lambda has a single solution.
    pub empirical_lambda_star: Option<f64>,
}

/// 40 log-spaced points over [0.01 lambda1, 100 lambda2] for a nonempty
/// window, otherwise over [1e-2, 1e3].
pub fn default_lambda_grid(window: &Window) -> Vec<f64> {
    let (lo, hi) = if window.empty {
        (1e-2, 1e3)
    } else {
        (0.01 * window.lambda1, 100.0 * window.lambda2)
    };
    log_grid(lo, hi, DEFAULT_GRID_POINTS)
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect();
    // pin the endpoints against rounding in exp(ln(x))
    grid[0] = lo;
    grid[count - 1] = hi;
    grid
}

fn window_for(ctx: &SolverContext) -> Result<(TruncationH, Window)> {
    let spec = ctx.spec();
    let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2)?;
    let window = lambda_window(ctx, &h)?;
    Ok((h, window))
}

/// The interval [zeta1, theta1]; inside the window theta1 is enlarged so the
/// interval contains the second subsolution.
pub fn outer_interval(
    ctx: &SolverContext,
    h: &TruncationH,
    window: &Window,
) -> Result<(GridFunction, GridFunction)> {
    if window.contains(ctx.lambda()) {
        let b = build_barriers(ctx, h, window)?;
        Ok((b.zeta1, b.theta1))
    } else {
        let p = first_pair(ctx)?;
        Ok((p.zeta1, p.theta1))
    }
}

fn make_row(ctx: &SolverContext, kind: SolutionKind, u: GridFunction) -> BranchRow {
    let residual = residual_p(ctx, &u).unwrap_or(f64::NAN);
    let tol = ctx.spec().tol_residual;
    let cone = cone_inf(&u, ctx.phi()).unwrap_or(f64::NAN);
    let ok = residual <= tol && cone > 0.0;
    BranchRow {
        lambda: ctx.lambda(),
        kind,
        sup_norm: u.sup_norm(),
        residual,
        cone_inf: cone,
        flag: if ok { RowFlag::Ok } else { RowFlag::Failed },
        message: (!ok).then(|| "certification failed".to_string()),
        solution: Some(u),
    }
}

fn failure_row(lambda: f64, err: &Error) -> BranchRow {
    BranchRow {
        lambda,
        kind: SolutionKind::Minimal,
        sup_norm: f64::NAN,
        residual: f64::NAN,
        cone_inf: f64::NAN,
        flag: RowFlag::Failed,
        message: Some(err.to_string()),
        solution: None,
    }
}

/// Adds `u` unless it is within 10 tol of an already kept solution.
fn push_distinct(
    ctx: &SolverContext,
    rows: &mut Vec<BranchRow>,
    kind: SolutionKind,
    u: GridFunction,
) {
    let sep = 10.0 * ctx.spec().tol_residual;
    let duplicate = rows
        .iter()
        .filter_map(|r| r.solution.as_ref())
        .any(|v| v.sup_distance(&u) < sep);
    if !duplicate {
        rows.push(make_row(ctx, kind, u));
    }
}

fn solve_one(
    ctx: &SolverContext,
    h: &TruncationH,
    window: &Window,
    seed: Option<u64>,
) -> Vec<BranchRow> {
    let lambda = ctx.lambda();
    let mut rows = Vec::new();
    let (lower, upper) = match outer_interval(ctx, h, window) {
        Ok(p) => p,
        Err(e) => return vec![failure_row(lambda, &e)],
    };
    let (lo, hi) = rayon::join(
        || minimal_fixed_point(ctx, &lower, &upper),
        || maximal_fixed_point(ctx, &lower, &upper),
    );
    match lo {
        Ok(run) => push_distinct(ctx, &mut rows, SolutionKind::Minimal, run.result),
        Err(e) => rows.push(failure_row(lambda, &e)),
    }
    match hi {
        Ok(run) => push_distinct(ctx, &mut rows, SolutionKind::Maximal, run.result),
        Err(e) => {
            let mut row = failure_row(lambda, &e);
            row.kind = SolutionKind::Maximal;
            rows.push(row);
        }
    }
    if window.contains(lambda) {
        match three_solutions(ctx, seed) {
            Ok(set) => {
                push_distinct(ctx, &mut rows, SolutionKind::Maximal, set.u1);
                push_distinct(ctx, &mut rows, SolutionKind::Minimal, set.u2);
                if let Some(u3) = set.u3 {
                    push_distinct(ctx, &mut rows, SolutionKind::Deflated, u3);
                }
            }
            Err(e) => rows.push(failure_row(lambda, &e)),
        }
    }
    rows
}

/// Solves at every lambda of an increasing grid and aggregates the rows.
///
/// Each lambda gets the minimal and maximal fixed points of [zeta1, theta1]
/// (plus the window construction inside [lambda1, lambda2]); a deflated
/// search seeded with the previous lambda's solutions then looks for further
/// branches. Failures become flagged rows.
pub fn trace_branch(
    ctx: &SolverContext,
    lambdas: &[f64],
    seed: Option<u64>,
) -> Result<BifurcationBranch> {
    if lambdas.is_empty() {
        return Err(Error::config("empty lambda grid"));
    }
    if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite()))
        || lambdas.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::config(
            "lambda grid must be positive and strictly increasing",
        ));
    }
    let (h, window) = window_for(ctx)?;
    let contexts: Vec<Result<SolverContext>> =
        lambdas.iter().map(|&l| ctx.with_lambda(l)).collect();
    let mut per_lambda: Vec<Vec<BranchRow>> = contexts
        .par_iter()
        .zip(lambdas.par_iter())
        .map(|(c, &l)| match c {
            Ok(c) => solve_one(c, &h, &window, seed),
            Err(e) => vec![failure_row(l, e)],
        })
        .collect();

    // pseudo-continuation: reuse the previous lambda's solutions as starts
    for k in 1..per_lambda.len() {
        let Ok(c) = &contexts[k] else { continue };
        let prev: Vec<GridFunction> = per_lambda[k - 1]
            .iter()
            .filter(|r| r.flag == RowFlag::Ok)
            .filter_map(|r| r.solution.clone())
            .collect();
        let known: Vec<GridFunction> = per_lambda[k]
            .iter()
            .filter(|r| r.flag == RowFlag::Ok)
            .filter_map(|r| r.solution.clone())
            .collect();
        // an S-shaped curve has at most three solutions at one lambda
        if known.is_empty() || known.len() >= 3 || prev.len() <= known.len() {
            continue;
        }
        let starts: Vec<GridFunction> = prev.into_iter().filter(|p| p.min() > 0.0).collect();
        if let Some(u) = search_from_starts(c, &known, &starts, seed) {
            push_distinct(c, &mut per_lambda[k], SolutionKind::Deflated, u);
        }
    }

    let mut rows: Vec<BranchRow> = per_lambda.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then(a.sup_norm.total_cmp(&b.sup_norm))
    });
    let empirical_lambda_star = single_solution_threshold(lambdas, &rows);
    Ok(BifurcationBranch {
        rows,
        window,
        empirical_lambda_star,
    })
}

fn single_solution_threshold(lambdas: &[f64], rows: &[BranchRow]) -> Option<f64> {
    let unique: Vec<bool> = lambdas
        .iter()
        .map(|&l| {
            let at: Vec<&BranchRow> = rows.iter().filter(|r| r.lambda == l).collect();
            at.len() == 1 && at[0].flag == RowFlag::Ok
        })
        .collect();
    threshold(lambdas, &unique)
}

/// First lambda from which on all flags hold.
fn threshold(lambdas: &[f64], flags: &[bool]) -> Option<f64> {
    let first_bad_from_end = flags.iter().rposition(|&u| !u);
    match first_bad_from_end {
        None => lambdas.first().copied(),
        Some(k) if k + 1 < lambdas.len() => Some(lambdas[k + 1]),
        Some(_) => None,
    }
}

/// (lambda f(0))^(1/(1+q)).
pub fn lower_bound_amplitude(lambda: f64, f_zero: f64, q: f64) -> f64 {
    (lambda * f_zero).powf(1.0 / (1.0 + q))
}

/// min over nodes of u - Theta_lambda w; nonnegative up to tolerance for solutions.
pub fn lower_bound_check(ctx: &SolverContext, u: &GridFunction) -> Result<f64> {
    if u.len() != ctx.len() {
        return Err(Error::GridMismatch {
            expected: ctx.len(),
            got: u.len(),
        });
    }
    let theta = lower_bound_amplitude(ctx.lambda(), ctx.nl().f(0.0), ctx.q());
    Ok((u - &ctx.profile().scale(theta)).min())
}

/// Largest eigenvalue of K diag(lambda f0'(u)+), bounding the linear growth
/// of the difference of two ordered solutions near u.
pub fn uniqueness_constant(ctx: &SolverContext, u: &GridFunction) -> Result<f64> {
    if u.len() != ctx.len() {
        return Err(Error::GridMismatch {
            expected: ctx.len(),
            got: u.len(),
        });
    }
    let lambda = ctx.lambda();
    let op = ctx.op();
    // K diag(c) = S diag(mass c) is similar to the symmetric r S r with r = sqrt(mass c)
    let root: Vec<f64> = u
        .values()
        .iter()
        .zip(op.mass())
        .map(|(&t, &m)| (m * (lambda * ctx.nl().df0(t)).max(0.0)).sqrt())
        .collect();
    if root.iter().all(|r| *r == 0.0) {
        return Ok(0.0);
    }
    let sym = op.symmetric_kernel();
    let r = DVector::from_vec(root);
    // power iteration; the operator is positive semidefinite
    let mut y = DVector::from_element(r.len(), 1.0 / (r.len() as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let by = r.component_mul(&(sym * r.component_mul(&y)));
        let next = y.dot(&by);
        let norm = by.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        y = by / norm;
        let done = (next - value).abs() <= 1e-12 * next.abs();
        value = next;
        if done {
            return Ok(value);
        }
    }
    Err(Error::Convergence {
        what: "uniqueness constant power iteration",
        iterations: POWER_MAX_ITERS,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanEntry {
    pub lambda: f64,
    pub min_sup: f64,
    pub max_sup: f64,
    /// Sup distance between the minimal and maximal fixed points of [zeta1, theta1].
    pub gap: f64,
    pub unique: bool,
    pub residual_min: f64,
    pub residual_max: f64,
    /// See [`uniqueness_constant`], evaluated at the minimal solution.
    pub uniqueness_constant: f64,
    pub lower_bound_margin: f64,
    pub error: Option<String>,
}

impl UniquenessReport {
    /// Lambdas at which the minimal and maximal fixed points differ.
    pub fn nonunique(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| !e.unique)
            .map(|e| e.lambda)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub entries: Vec<ScanEntry>,
    /// Whether f(u)/u^q was verified to decrease beyond the threshold.
    pub decay_condition: bool,
    pub alpha_f5: Option<f64>,
    /// Present only when the decay condition holds.
    pub lambda_star: Option<f64>,
    /// Fitted log-log slope of the min/max gap over lambdas with a resolvable gap.
    pub gap_exponent: Option<f64>,
    /// Fitted log-log slope of the uniqueness constant over the upper half of the scan.
    pub constant_exponent: Option<f64>,
    pub note: String,
}

fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn scan_one(ctx: &SolverContext, h: &TruncationH, window: &Window) -> ScanEntry {
    let lambda = ctx.lambda();
    let fail = |e: Error| ScanEntry {
        lambda,
        min_sup: f64::NAN,
        max_sup: f64::NAN,
        gap: f64::NAN,
        unique: false,
        residual_min: f64::NAN,
        residual_max: f64::NAN,
        uniqueness_constant: f64::NAN,
        lower_bound_margin: f64::NAN,
        error: Some(e.to_string()),
    };
    let (lower, upper) = match outer_interval(ctx, h, window) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let (lo, hi) = rayon::join(
        || minimal_fixed_point(ctx, &lower, &upper),
        || maximal_fixed_point(ctx, &lower, &upper),
    );
    let (lo, hi) = match (lo, hi) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let gap = lo.result.sup_distance(&hi.result);
    let constant = uniqueness_constant(ctx, &lo.result).unwrap_or(f64::NAN);
    let margin = lower_bound_check(ctx, &lo.result).unwrap_or(f64::NAN);
    ScanEntry {
        lambda,
        min_sup: lo.result.sup_norm(),
        max_sup: hi.result.sup_norm(),
        gap,
        unique: gap < 10.0 * ctx.spec().tol_residual,
        residual_min: lo.residual,
        residual_max: hi.residual,
        uniqueness_constant: constant,
        lower_bound_margin: margin,
        error: None,
    }
}

/// Minimal and maximal fixed points of [zeta1, theta1] over a lambda list.
///
/// The threshold is asserted only if f(u)/u^q is verified (by sampling) to
/// decrease beyond alpha_f5.
pub fn uniqueness_scan(ctx: &SolverContext, lambdas: &[f64]) -> Result<UniquenessReport> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] <= w[0]) || lambdas[0] <= 0.0 {
        return Err(Error::config(
            "lambda list must be positive and strictly increasing",
        ));
    }
    let alpha_f5 = ctx.spec().alpha_f5();
    let (h, window) = window_for(ctx)?;
    let decay_condition = alpha_f5.is_some_and(|a| ctx.nl().satisfies_decay_beyond(a));
    let entries: Vec<ScanEntry> = lambdas
        .par_iter()
        .map(|&l| match ctx.with_lambda(l) {
            Ok(c) => scan_one(&c, &h, &window),
            Err(e) => ScanEntry {
                lambda: l,
                min_sup: f64::NAN,
                max_sup: f64::NAN,
                gap: f64::NAN,
                unique: false,
                residual_min: f64::NAN,
                residual_max: f64::NAN,
                uniqueness_constant: f64::NAN,
                lower_bound_margin: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let flags: Vec<bool> = entries.iter().map(|e| e.unique).collect();
    let raw_star = threshold(lambdas, &flags);
    let resolvable = 10.0 * ctx.spec().tol_residual;
    let gap_points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| e.gap >= resolvable)
        .map(|e| (e.lambda, e.gap))
        .collect();
    let half = entries.len() / 2;
    let constant_points: Vec<(f64, f64)> = entries[half..]
        .iter()
        .map(|e| (e.lambda, e.uniqueness_constant))
        .collect();
    let note = if decay_condition {
        "threshold is an estimate at this resolution and lambda sampling".to_string()
    } else {
        "decay condition on f(u)/u^q not verified; no threshold asserted".to_string()
    };
    Ok(UniquenessReport {
        entries,
        decay_condition,
        alpha_f5,
        lambda_star: if decay_condition { raw_star } else { None },
        gap_exponent: fit_slope(&gap_points),
        constant_exponent: fit_slope(&constant_points),
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rules() {
        let l = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(threshold(&l, &[false, true, false, true]), Some(4.0));
        assert_eq!(threshold(&l, &[true, true, true, true]), Some(1.0));
        assert_eq!(threshold(&l, &[true, true, true, false]), None);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = (1..10)
            .map(|k| (k as f64, 3.0 * (k as f64).powf(-0.5)))
            .collect();
        assert!((fit_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert!(fit_slope(&pts[..2]).is_none());
    }

    #[test]
    fn lower_bound_amplitude_formula() {
        assert!((lower_bound_amplitude(16.0, 1.0, 1.0 / 3.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn grids() {
        let g = log_grid(1e-2, 1e3, 40);
        assert_eq!(g.len(), 40);
        assert_eq!((g[0], g[39]), (1e-2, 1e3));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
