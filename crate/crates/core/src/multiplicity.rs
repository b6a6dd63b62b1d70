//! Fixed points of the monotone map T: minimal and maximal fixed points of
//! order intervals, the three-solution driver and a deflated Newton search.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::barriers::{build_barriers, build_h, lambda_window, BarrierSet, Window};
use crate::context::SolverContext;
use crate::error::{Error, Result};
use crate::gridfn::{cone_inf, GridFunction};
use crate::tmap::{apply_t, apply_t_from, residual_p};

const MAX_ITERS: usize = 500;
const STAGNATION_FLOOR: f64 = 1e3;
const STAGNATION_STEPS: usize = 10;
const STAGNATION_PROGRESS: f64 = 1e-14;
/// Picard iterations before Newton acceleration is tried when convergence is slow.
const ACCELERATE_AFTER: usize = 20;
const SLOW_RATE: f64 = 0.5;
const MAX_POLISH: usize = 50;
const MAX_DEFLATED: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// From the subsolution; iterates increase.
    Upward,
    /// From the supersolution; iterates decrease.
    Downward,
}

/// Record of one monotone iteration u <- T(u).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointRun {
    pub start: GridFunction,
    pub iterates_sup: Vec<f64>,
    pub result: GridFunction,
    pub direction: Direction,
    /// residual_p of the result.
    pub residual: f64,
    pub interval: (GridFunction, GridFunction),
    /// Whether Newton acceleration finished the run.
    pub accelerated: bool,
}

fn order_tol(ctx: &SolverContext, u: &GridFunction) -> f64 {
    ctx.spec().tol_order * u.sup_norm().max(1.0)
}

/// Newton's method on u - K(lambda f(u)/u^q) started near a fixed point.
///
/// Returns None if it fails to reach `tol` while staying positive.
pub fn newton_polish(ctx: &SolverContext, u0: &GridFunction, tol: f64) -> Option<GridFunction> {
    let n = ctx.len();
    let lambda = ctx.lambda();
    let kmat = ctx.op().kernel_matrix();
    let mut u = u0.clone();
    let mut res = residual_vec(ctx, &u)?;
    let mut norm = res.sup_norm();
    for _ in 0..MAX_POLISH {
        if norm <= tol {
            return Some(u);
        }
        let d = newton_direction(ctx, kmat, &u, &res, lambda, n)?;
        let mut t = 1.0f64;
        for i in 0..n {
            if d[i] < 0.0 {
                t = t.min(0.9 * u[i] / -d[i]);
            }
        }
        let mut accepted = false;
        while t > 1e-10 {
            let trial = GridFunction::new((0..n).map(|i| u[i] + t * d[i]).collect());
            if let Some(r) = residual_vec(ctx, &trial) {
                let rn = r.sup_norm();
                if rn < norm {
                    u = trial;
                    res = r;
                    norm = rn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    (norm <= tol).then_some(u)
}

fn residual_vec(ctx: &SolverContext, u: &GridFunction) -> Option<GridFunction> {
    if u.min() <= 0.0 || !u.is_finite() {
        return None;
    }
    let lambda = ctx.lambda();
    let rhs = ctx.op().apply(&u.map(|t| lambda * ctx.nl().f0(t)));
    Some(u - &rhs)
}

/// Solves (I - K diag(lambda f0'(u))) d = -r.
fn newton_direction(
    ctx: &SolverContext,
    kmat: &DMatrix<f64>,
    u: &GridFunction,
    r: &GridFunction,
    lambda: f64,
    n: usize,
) -> Option<DVector<f64>> {
    let slope: Vec<f64> = u
        .values()
        .iter()
        .map(|&t| lambda * ctx.nl().df0(t))
        .collect();
    let jac = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - kmat[(i, j)] * slope[j]
    });
    let rhs = -DVector::from_column_slice(r.values());
    jac.lu().solve(&rhs)
}

fn monotone_run(
    ctx: &SolverContext,
    lower: &GridFunction,
    upper: &GridFunction,
    direction: Direction,
) -> Result<FixedPointRun> {
    if lower.len() != ctx.len() || upper.len() != ctx.len() {
        return Err(Error::GridMismatch {
            expected: ctx.len(),
            got: lower.len().min(upper.len()),
        });
    }
    let tol_order = order_tol(ctx, upper);
    if !lower.le_within(upper, tol_order) {
        return Err(Error::domain("order interval endpoints are not ordered"));
    }
    let start = match direction {
        Direction::Upward => lower.clone(),
        Direction::Downward => upper.clone(),
    };
    let tol = ctx.spec().tol_residual;
    let mut u = start.clone();
    let mut sups = vec![u.sup_norm()];
    let mut prev_step = f64::INFINITY;
    let mut stagnant = 0;
    let mut accelerated = false;
    let mut warm: Option<GridFunction> = None;
    for it in 0..MAX_ITERS {
        let t = apply_t_from(ctx, &u, warm.as_ref())?;
        let next = t.z;
        if it == 0 {
            // sub/supersolution certificate of the starting endpoint
            let ok = match direction {
                Direction::Upward => start.le_within(&next, tol_order),
                Direction::Downward => next.le_within(&start, tol_order),
            };
            if !ok {
                return Err(Error::Barrier {
                    inequality: match direction {
                        Direction::Upward => "T(y1) >= y1".into(),
                        Direction::Downward => "T(y2) <= y2".into(),
                    },
                    margin: -start.sup_distance(&next),
                });
            }
        }
        let violation = match direction {
            Direction::Upward => u.le_violation(&next),
            Direction::Downward => next.le_violation(&u),
        };
        if violation > tol_order {
            return Err(Error::Barrier {
                inequality: format!("monotone iterates at step {it} (grid too coarse?)"),
                margin: -violation,
            });
        }
        let step = next.sup_distance(&u);
        sups.push(next.sup_norm());
        u = next;
        warm = Some(u.clone());
        if step < 0.1 * tol {
            break;
        }
        // a growing step is a climb, not stagnation, unless it sits at the rounding floor
        let at_floor = step <= STAGNATION_FLOOR * tol * u.sup_norm().max(1.0);
        if at_floor && step > prev_step * (1.0 - STAGNATION_PROGRESS) {
            stagnant += 1;
            if stagnant >= STAGNATION_STEPS {
                break;
            }
        } else {
            stagnant = 0;
        }
        let rate = step / prev_step;
        prev_step = step;
        if it >= ACCELERATE_AFTER && rate > SLOW_RATE && it % ACCELERATE_AFTER == 0 {
            if let Some(p) = newton_polish(ctx, &u, 0.1 * tol) {
                let consistent = match direction {
                    Direction::Upward => {
                        u.le_within(&p, tol_order) && p.le_within(upper, tol_order)
                    }
                    Direction::Downward => {
                        p.le_within(&u, tol_order) && lower.le_within(&p, tol_order)
                    }
                };
                if consistent {
                    u = p;
                    sups.push(u.sup_norm());
                    accelerated = true;
                    break;
                }
            }
        }
        if it + 1 == MAX_ITERS {
            return Err(Error::Convergence {
                what: "monotone fixed-point iteration",
                iterations: MAX_ITERS,
                residual: step,
            });
        }
    }
    let mut residual = residual_p(ctx, &u)?;
    if residual > tol {
        if let Some(p) = newton_polish(ctx, &u, 0.1 * tol) {
            if p.sup_distance(&u) < 1e3 * tol {
                u = p;
                residual = residual_p(ctx, &u)?;
                accelerated = true;
            }
        }
    }
    if residual > tol {
        return Err(Error::Convergence {
            what: "fixed point certification",
            iterations: sups.len(),
            residual,
        });
    }
    Ok(FixedPointRun {
        start,
        iterates_sup: sups,
        result: u,
        direction,
        residual,
        interval: (lower.clone(), upper.clone()),
        accelerated,
    })
}

/// Increasing iteration from the lower endpoint of [y1, y2].
pub fn minimal_fixed_point(
    ctx: &SolverContext,
    y1: &GridFunction,
    y2: &GridFunction,
) -> Result<FixedPointRun> {
    monotone_run(ctx, y1, y2, Direction::Upward)
}

/// Decreasing iteration from the upper endpoint of [y1, y2].
pub fn maximal_fixed_point(
    ctx: &SolverContext,
    y1: &GridFunction,
    y2: &GridFunction,
) -> Result<FixedPointRun> {
    monotone_run(ctx, y1, y2, Direction::Downward)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionKind {
    Minimal,
    Maximal,
    Deflated,
}

impl SolutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolutionKind::Minimal => "minimal",
            SolutionKind::Maximal => "maximal",
            SolutionKind::Deflated => "deflated",
        }
    }
}

/// Certified solutions at one lambda inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSet {
    pub lambda: f64,
    /// Maximal fixed point of [zeta1, theta2].
    pub u1: GridFunction,
    /// Minimal fixed point of [zeta2, theta1].
    pub u2: GridFunction,
    pub u3: Option<GridFunction>,
    /// residual_p of u1, u2 and (if present) u3.
    pub residuals: Vec<f64>,
    /// Pairwise sup distances (u1,u2), (u1,u3), (u2,u3).
    pub separations: Vec<f64>,
    pub window: Window,
    pub barriers: BarrierSet,
}

impl SolutionSet {
    /// (kind, solution) pairs in a fixed order.
    pub fn solutions(&self) -> Vec<(SolutionKind, &GridFunction)> {
        let mut out = vec![
            (SolutionKind::Maximal, &self.u1),
            (SolutionKind::Minimal, &self.u2),
        ];
        if let Some(u3) = &self.u3 {
            out.push((SolutionKind::Deflated, u3));
        }
        out
    }
}

/// Computes u1, u2 from the barrier intervals and searches for a third solution.
pub fn three_solutions(ctx: &SolverContext, seed: Option<u64>) -> Result<SolutionSet> {
    let spec = ctx.spec();
    let h = build_h(ctx.nl(), spec.sigma1, spec.sigma2)?;
    let window = lambda_window(ctx, &h)?;
    let barriers = build_barriers(ctx, &h, &window)?;
    let (run1, run2) = rayon::join(
        || maximal_fixed_point(ctx, &barriers.zeta1, &barriers.theta2),
        || minimal_fixed_point(ctx, &barriers.zeta2, &barriers.theta1),
    );
    let (u1, u2) = (run1?.result, run2?.result);
    let mut extra = Vec::new();
    let cap = barriers.zeta2.min_with(&barriers.theta2);
    for scale in [0.9, 1.1] {
        extra.push(cap.scale(scale));
    }
    let u3 = deflated_search(ctx, &[u1.clone(), u2.clone()], &extra, seed);
    let mut residuals = vec![residual_p(ctx, &u1)?, residual_p(ctx, &u2)?];
    let mut separations = vec![u1.sup_distance(&u2)];
    if let Some(u3) = &u3 {
        residuals.push(residual_p(ctx, u3)?);
        separations.push(u1.sup_distance(u3));
        separations.push(u2.sup_distance(u3));
    }
    Ok(SolutionSet {
        lambda: ctx.lambda(),
        u1,
        u2,
        u3,
        residuals,
        separations,
        window,
        barriers,
    })
}

/// Starting points for the deflated search between two known solutions.
pub fn deflation_starts(u1: &GridFunction, u2: &GridFunction) -> Vec<GridFunction> {
    let mut starts = Vec::new();
    for t in [0.25, 0.5, 0.75] {
        starts.push(u1.zip_map(u2, |a, b| t * a + (1.0 - t) * b));
    }
    for t in [0.25, 0.5, 0.75] {
        starts.push(u1.zip_map(u2, |a, b| {
            a.max(1e-300).powf(t) * b.max(1e-300).powf(1.0 - t)
        }));
    }
    // both profiles rescaled to sup norms spread geometrically between the two
    let (s1, s2) = (u1.sup_norm(), u2.sup_norm());
    if s1 > 0.0 && s2 > 0.0 {
        for k in 1..=8 {
            let level = s1 * (s2 / s1).powf(k as f64 / 9.0);
            starts.push(u1.scale(level / s1));
            starts.push(u2.scale(level / s2));
        }
    }
    starts
}

/// Newton search on the deflated residual from several starts; returns the
/// first (by start index) certified solution separated from all `known` ones.
pub fn deflated_search(
    ctx: &SolverContext,
    known: &[GridFunction],
    extra_starts: &[GridFunction],
    seed: Option<u64>,
) -> Option<GridFunction> {
    let mut starts = Vec::new();
    for (i, a) in known.iter().enumerate() {
        for b in &known[i + 1..] {
            starts.extend(deflation_starts(a, b));
        }
    }
    starts.extend(extra_starts.iter().cloned());
    search_from_starts(ctx, known, &starts, seed)
}

/// Deflated Newton from the given starts (plus seeded perturbed copies);
/// returns the first success by start index.
pub fn search_from_starts(
    ctx: &SolverContext,
    known: &[GridFunction],
    starts: &[GridFunction],
    seed: Option<u64>,
) -> Option<GridFunction> {
    let mut starts = starts.to_vec();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = starts.clone();
        for s in &base {
            let noisy: Vec<f64> = s
                .values()
                .iter()
                .map(|v| v * (1.0 + 0.2 * (rng.random::<f64>() - 0.5)))
                .collect();
            starts.push(GridFunction::new(noisy));
        }
    }
    // chunks of one start per worker keep the result independent of the thread count
    let chunk = rayon::current_num_threads().max(1);
    for batch in starts.chunks(chunk) {
        let found: Vec<Option<GridFunction>> = batch
            .par_iter()
            .map(|s| deflated_newton(ctx, s, known))
            .collect();
        if let Some(u) = found.into_iter().flatten().next() {
            return Some(u);
        }
    }
    None
}

/// Newton on m(u) R(u), m(u) = prod_k (1/|u - u_k|^2 + 1) with the mass-weighted L2 norm.
fn deflated_newton(
    ctx: &SolverContext,
    start: &GridFunction,
    known: &[GridFunction],
) -> Option<GridFunction> {
    let n = ctx.len();
    let tol = ctx.spec().tol_residual;
    let lambda = ctx.lambda();
    let mass = ctx.op().mass();
    let kmat = ctx.op().kernel_matrix();
    if start.len() != n || start.min() <= 0.0 {
        return None;
    }
    let deflation = |u: &GridFunction| -> (f64, Vec<f64>) {
        // log m and its gradient
        let mut log_m = 0.0;
        let mut grad = vec![0.0; n];
        for k in known {
            let diff = u - k;
            let d2: f64 = (0..n).map(|i| mass[i] * diff[i] * diff[i]).sum();
            let mk = 1.0 / d2 + 1.0;
            log_m += mk.ln();
            for i in 0..n {
                grad[i] += -2.0 * mass[i] * diff[i] / (d2 * d2) / mk;
            }
        }
        (log_m, grad)
    };
    let mut u = start.clone();
    let mut r = residual_vec(ctx, &u)?;
    let mut merit = deflation(&u).0.exp() * r.sup_norm();
    for _ in 0..MAX_DEFLATED {
        if r.sup_norm() <= 0.1 * tol {
            break;
        }
        let d = newton_direction(ctx, kmat, &u, &r, lambda, n)?;
        let (_, grad_log_m) = deflation(&u);
        let proj: f64 = (0..n).map(|i| grad_log_m[i] * d[i]).sum();
        let tau = if (1.0 - proj).abs() > 1e-12 {
            1.0 / (1.0 - proj)
        } else {
            1.0
        };
        let mut t = tau;
        for i in 0..n {
            if t * d[i] < 0.0 {
                t = t.signum() * t.abs().min(0.9 * u[i] / (t.signum() * d[i]).abs());
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial = GridFunction::new((0..n).map(|i| u[i] + t * d[i]).collect());
            if let Some(rt) = residual_vec(ctx, &trial) {
                let m = deflation(&trial).0.exp() * rt.sup_norm();
                if m < merit {
                    u = trial;
                    r = rt;
                    merit = m;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    let u = if r.sup_norm() <= 0.1 * tol {
        u
    } else {
        newton_polish(ctx, &u, 0.1 * tol)?
    };
    let residual = residual_p(ctx, &u).ok()?;
    let separated = known.iter().all(|k| k.sup_distance(&u) >= 10.0 * tol);
    let in_cone = cone_inf(&u, ctx.phi()).is_ok_and(|c| c > 0.0);
    (residual <= tol && separated && in_cone).then_some(u)
}

/// cone_inf(T(u2) - T(u1), phi) for u1 <= u2, u1 != u2.
pub fn strong_increasing_gap(
    ctx: &SolverContext,
    u1: &GridFunction,
    u2: &GridFunction,
) -> Result<f64> {
    let tol = order_tol(ctx, u2);
    if !u1.le_within(u2, tol) {
        return Err(Error::domain("strong increase needs u1 <= u2"));
    }
    if u1.sup_distance(u2) == 0.0 {
        return Err(Error::domain("strong increase needs distinct u1 and u2"));
    }
    let (t1, t2) = rayon::join(|| apply_t(ctx, u1), || apply_t(ctx, u2));
    let diff = &t2?.z - &t1?.z;
    cone_inf(&diff, ctx.phi())
}
