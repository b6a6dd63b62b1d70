//! Ordered sub- and supersolutions and the admissible lambda window.
//!
//! Two pairs bracket the solutions: zeta1 = m phi below theta1 = M w, and
//! zeta2 = lambda K(h(a chi_R)) above theta2 = sigma1 w / |w|_inf with
//! sup zeta2 >= a > sigma1 = sup theta2. The truncation h is a nondecreasing
//! minorant of f(u)/u^q that is constant near 0.

use serde::Serialize;

use crate::context::SolverContext;
use crate::error::{Error, Result};
use crate::gridfn::GridFunction;
use crate::nonlinearity::{log_samples, Nonlinearity};
use crate::operator::{constants, OperatorConstants};

const TABLE_POINTS: usize = 2001;
const A_GRID_POINTS: usize = 4000;
/// Relative slack for closed-form lambda inequalities evaluated at their boundary.
const BOUNDARY_SLACK: f64 = 1e-12;

/// Nondecreasing minorant of f(u)/u^q built from a running minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationH {
    /// Upper end of the truncation range, taken equal to sigma1.
    pub sigma: f64,
    /// min of f(t)/t^q over (0, sigma].
    pub fstar: f64,
    /// Where that minimum is attained.
    pub t_star: f64,
    /// Sample points of [t_star, sigma] with the running minimum from the right.
    table: Vec<(f64, f64)>,
    nl: Nonlinearity,
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

impl TruncationH {
    pub fn eval(&self, u: f64) -> f64 {
        if u <= self.t_star {
            return self.fstar;
        }
        if u >= self.sigma {
            return self.nl.f0(u);
        }
        let k = self.table.partition_point(|&(t, _)| t < u);
        let rm = self.table.get(k).map_or(self.nl.f0(self.sigma), |e| e.1);
        rm.min(self.nl.f0(u))
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        u.map(|v| self.eval(v))
    }
}

/// Builds h for sigma = sigma1 and checks monotonicity and domination on samples.
pub fn build_h(nl: &Nonlinearity, sigma1: f64, sigma2: f64) -> Result<TruncationH> {
    let f0 = |t: f64| nl.f0(t);
    let coarse = log_samples(1e-8 * sigma1, sigma1, 4000);
    let (k, _) = coarse.iter().enumerate().map(|(k, &t)| (k, f0(t))).fold(
        (0, f64::INFINITY),
        |best, cur| if cur.1 < best.1 { cur } else { best },
    );
    let t_star = if k + 1 == coarse.len() {
        sigma1
    } else {
        let lo = coarse[k.saturating_sub(1)];
        let hi = coarse[k + 1];
        golden_min(f0, lo, hi).min(sigma1)
    };
    let fstar = f0(t_star).min(f0(coarse[k]));
    let mut table: Vec<(f64, f64)> = (0..TABLE_POINTS)
        .map(|j| {
            let t = t_star + (sigma1 - t_star) * j as f64 / (TABLE_POINTS - 1) as f64;
            (t, f0(t))
        })
        .collect();
    for j in (0..TABLE_POINTS - 1).rev() {
        table[j].1 = table[j].1.min(table[j + 1].1);
    }
    let h = TruncationH {
        sigma: sigma1,
        fstar,
        t_star,
        table,
        nl: *nl,
    };
    let samples: Vec<f64> = (1..=10_000)
        .map(|j| sigma2 * j as f64 / 10_000.0)
        .chain(log_samples(1e-8, sigma2, 2000))
        .collect();
    for &u in &samples {
        if h.eval(u) > f0(u) * (1.0 + 1e-14) {
            return Err(Error::Barrier {
                inequality: format!("h(u) <= f(u)/u^q at u = {u}"),
                margin: f0(u) - h.eval(u),
            });
        }
    }
    let mut sorted = samples;
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        if h.eval(w[1]) < h.eval(w[0]) * (1.0 - 1e-12) {
            return Err(Error::Barrier {
                inequality: format!("h nondecreasing on (0, sigma2] at u = {}", w[1]),
                margin: h.eval(w[1]) - h.eval(w[0]),
            });
        }
    }
    Ok(h)
}

/// Largest violation of z <= K(lambda f(z)/z^q) (nonpositive for a subsolution).
pub fn subsolution_defect(ctx: &SolverContext, z: &GridFunction) -> f64 {
    let rhs = right_side(ctx, z);
    z.le_violation(&rhs)
}

/// Largest violation of z >= K(lambda f(z)/z^q) (nonpositive for a supersolution).
pub fn supersolution_defect(ctx: &SolverContext, z: &GridFunction) -> f64 {
    let rhs = right_side(ctx, z);
    rhs.le_violation(z)
}

fn right_side(ctx: &SolverContext, z: &GridFunction) -> GridFunction {
    let lambda = ctx.lambda();
    ctx.op().apply(&z.map(|t| lambda * ctx.nl().f0(t)))
}

fn order_tol(ctx: &SolverContext, z: &GridFunction) -> f64 {
    ctx.spec().tol_order * z.sup_norm().max(1.0)
}

/// First ordered pair zeta1 = m phi <= theta1 = M w.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstPair {
    pub zeta1: GridFunction,
    pub theta1: GridFunction,
    pub m_lambda: f64,
    pub big_m_lambda: f64,
}

/// Smallest M >= 1 with M^(q+1) >= lambda f(M |w|_inf), by doubling and bisection.
fn upper_amplitude(ctx: &SolverContext) -> Result<f64> {
    let q = ctx.q();
    let lambda = ctx.lambda();
    let w_sup = ctx.profile().sup_norm();
    let ok = |m: f64| m.powf(q + 1.0) >= lambda * ctx.nl().f(m * w_sup);
    if ok(1.0) {
        return Ok(1.0);
    }
    let mut hi = 2.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > 2f64.powi(60) {
            return Err(Error::Barrier {
                inequality: "M^(q+1) >= lambda f(M |w|)".into(),
                margin: hi,
            });
        }
    }
    let mut lo = 0.5 * hi;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Largest dyadic m <= 1 with lambda1 m phi <= lambda f(m phi)/(m phi)^q and
/// m phi below every function in `caps`.
fn lower_amplitude(ctx: &SolverContext, caps: &[&GridFunction]) -> Result<f64> {
    let phi = ctx.phi();
    let lambda = ctx.lambda();
    let lam1 = ctx.lambda1();
    let ok = |m: f64| {
        phi.values()
            .iter()
            .all(|&p| lam1 * m * p <= lambda * ctx.nl().f0(m * p))
            && caps.iter().all(|c| phi.scale(m).le_within(c, 0.0))
    };
    let mut m = 1.0;
    while !ok(m) {
        m *= 0.5;
        if m < 1e-12 {
            return Err(Error::Barrier {
                inequality: "lambda1 m phi <= lambda f(m phi)/(m phi)^q".into(),
                margin: m,
            });
        }
    }
    Ok(m)
}

/// Builds zeta1 and theta1 and checks their one-sided residuals.
pub fn first_pair(ctx: &SolverContext) -> Result<FirstPair> {
    let big_m = upper_amplitude(ctx)?;
    let theta1 = ctx.profile().scale(big_m);
    let m = lower_amplitude(ctx, &[&theta1])?;
    let pair = FirstPair {
        zeta1: ctx.phi().scale(m),
        theta1,
        m_lambda: m,
        big_m_lambda: big_m,
    };
    check_sub(ctx, &pair.zeta1, "zeta1")?;
    check_super(ctx, &pair.theta1, "theta1")?;
    Ok(pair)
}

fn check_sub(ctx: &SolverContext, z: &GridFunction, name: &str) -> Result<()> {
    let d = subsolution_defect(ctx, z);
    if d > order_tol(ctx, z) {
        return Err(Error::Barrier {
            inequality: format!("{name} <= K(lambda f({name})/{name}^q)"),
            margin: -d,
        });
    }
    Ok(())
}

fn check_super(ctx: &SolverContext, z: &GridFunction, name: &str) -> Result<()> {
    let d = supersolution_defect(ctx, z);
    if d > order_tol(ctx, z) {
        return Err(Error::Barrier {
            inequality: format!("{name} >= K(lambda f({name})/{name}^q)"),
            margin: -d,
        });
    }
    Ok(())
}

/// sigma1^(q+1) / (f(sigma1) |w|^(q+1)): the largest lambda for which
/// sigma1 w/|w| is a supersolution.
pub fn supersolution_bound(ctx: &SolverContext) -> f64 {
    let spec = ctx.spec();
    let w_sup = ctx.profile().sup_norm();
    spec.sigma1.powf(spec.q + 1.0) / (ctx.nl().f(spec.sigma1) * w_sup.powf(spec.q + 1.0))
}

/// theta2 = sigma1 w/|w|_inf, rejected when lambda exceeds [`supersolution_bound`].
pub fn second_supersolution(ctx: &SolverContext) -> Result<GridFunction> {
    let bound = supersolution_bound(ctx);
    if ctx.lambda() > bound * (1.0 + BOUNDARY_SLACK) {
        return Err(Error::Barrier {
            inequality: "lambda <= sigma1^(q+1) / (f(sigma1) |w|^(q+1))".into(),
            margin: bound - ctx.lambda(),
        });
    }
    let w = ctx.profile();
    let theta2 = w.scale(ctx.spec().sigma1 / w.sup_norm());
    check_super(ctx, &theta2, "theta2")?;
    Ok(theta2)
}

/// zeta2 = lambda K(h(a chi_R)), with the three pointwise claims verified.
pub fn second_subsolution(
    ctx: &SolverContext,
    h: &TruncationH,
    radius: f64,
    a: f64,
) -> Result<GridFunction> {
    let spec = ctx.spec();
    if !(a > spec.sigma1 && a <= spec.sigma2) {
        return Err(Error::domain(format!(
            "a = {a} must lie in (sigma1, sigma2] = ({}, {}]",
            spec.sigma1, spec.sigma2
        )));
    }
    let consts = constants(ctx.op(), radius)?;
    let lambda = ctx.lambda();
    let ha = h.eval(a);
    let lower = consts.m2 * a / ha;
    let upper = consts.m3 * spec.sigma2 / ha;
    if lambda < lower * (1.0 - BOUNDARY_SLACK) {
        return Err(Error::Barrier {
            inequality: "lambda >= M2 a / h(a)".into(),
            margin: lambda - lower,
        });
    }
    if lambda > upper * (1.0 + BOUNDARY_SLACK) {
        return Err(Error::Barrier {
            inequality: "lambda <= M3 sigma2 / h(a)".into(),
            margin: upper - lambda,
        });
    }
    let v = ctx.op().indicator(radius).scale(a);
    let v1 = ctx.op().apply(&h.apply(&v)).scale(lambda);
    let nodes = ctx.op().grid().nodes();
    let inner_min = nodes
        .iter()
        .zip(v1.values())
        .filter(|(x, _)| x.abs() <= radius)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let slack = BOUNDARY_SLACK * a.max(spec.sigma2);
    if inner_min < a - slack {
        return Err(Error::Barrier {
            inequality: "v1 >= a on [-R, R]".into(),
            margin: inner_min - a,
        });
    }
    if v1.max() > spec.sigma2 + slack {
        return Err(Error::Barrier {
            inequality: "v1 <= sigma2".into(),
            margin: spec.sigma2 - v1.max(),
        });
    }
    if v1.min() <= 0.0 {
        return Err(Error::Barrier {
            inequality: "v1 > 0".into(),
            margin: v1.min(),
        });
    }
    check_sub(ctx, &v1, "zeta2")?;
    Ok(v1)
}

/// The lambda window and the constants it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub lambda1: f64,
    pub lambda2: f64,
    pub a_star: f64,
    pub h_a_star: f64,
    pub m2: f64,
    pub m3: f64,
    pub c1: f64,
    pub w_sup: f64,
    /// Which upper bound is active: `supersolution` or `subsolution-cap`.
    pub binding: String,
    pub empty: bool,
}

impl Window {
    pub fn contains(&self, lambda: f64) -> bool {
        !self.empty
            && lambda >= self.lambda1 * (1.0 - BOUNDARY_SLACK)
            && lambda <= self.lambda2 * (1.0 + BOUNDARY_SLACK)
    }
}

fn window_at(
    consts: &OperatorConstants,
    sup_bound: f64,
    sigma2: f64,
    h: &TruncationH,
    a: f64,
) -> (f64, f64, bool) {
    let ha = h.eval(a);
    let l1 = consts.m2 * a / ha;
    let cap = consts.m3 * sigma2 / ha;
    (l1, sup_bound.min(cap), sup_bound <= cap)
}

/// Computes [lambda1, lambda2] with a chosen on a dense grid of (sigma1, sigma2]
/// to maximize lambda2/lambda1.
pub fn lambda_window(ctx: &SolverContext, h: &TruncationH) -> Result<Window> {
    let spec = ctx.spec();
    let consts = constants(ctx.op(), spec.radius)?;
    let sup_bound = supersolution_bound(ctx);
    let (s1, s2) = (spec.sigma1, spec.sigma2);
    let mut best: Option<(f64, f64)> = None;
    for j in 1..=A_GRID_POINTS {
        let a = s1 + (s2 - s1) * j as f64 / A_GRID_POINTS as f64;
        let (l1, l2, _) = window_at(&consts, sup_bound, s2, h, a);
        let ratio = l2 / l1;
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((a, ratio));
        }
    }
    let (a_star, _) = best.expect("nonempty a grid");
    let (lambda1, lambda2, sup_binds) = window_at(&consts, sup_bound, s2, h, a_star);
    Ok(Window {
        lambda1,
        lambda2,
        a_star,
        h_a_star: h.eval(a_star),
        m2: consts.m2,
        m3: consts.m3,
        c1: consts.c1,
        w_sup: ctx.profile().sup_norm(),
        binding: if sup_binds {
            "supersolution"
        } else {
            "subsolution-cap"
        }
        .to_string(),
        empty: lambda1 > lambda2,
    })
}

/// All four barriers at a lambda inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSet {
    pub zeta1: GridFunction,
    pub theta1: GridFunction,
    pub zeta2: GridFunction,
    pub theta2: GridFunction,
    pub m_lambda: f64,
    pub big_m_lambda: f64,
    pub a: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub w_sup: f64,
}

/// One-sided residual defects and order checks of a barrier set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierReport {
    pub zeta1_defect: f64,
    pub theta1_defect: f64,
    pub zeta2_defect: f64,
    pub theta2_defect: f64,
    pub ordered: bool,
    pub separated: bool,
}

impl BarrierSet {
    /// Re-evaluates all residual defects and the order lattice.
    pub fn report(&self, ctx: &SolverContext) -> BarrierReport {
        let ordered = self.zeta1.le_within(&self.zeta2, 0.0)
            && self.zeta1.le_within(&self.theta2, 0.0)
            && self.zeta2.le_within(&self.theta1, 0.0)
            && self.theta2.le_within(&self.theta1, 0.0);
        let separated = self.zeta2.max() >= self.a && self.a > self.theta2.max();
        BarrierReport {
            zeta1_defect: subsolution_defect(ctx, &self.zeta1),
            theta1_defect: supersolution_defect(ctx, &self.theta1),
            zeta2_defect: subsolution_defect(ctx, &self.zeta2),
            theta2_defect: supersolution_defect(ctx, &self.theta2),
            ordered,
            separated,
        }
    }
}

/// Builds zeta1 <= {zeta2, theta2} <= theta1 at the context's lambda.
pub fn build_barriers(ctx: &SolverContext, h: &TruncationH, window: &Window) -> Result<BarrierSet> {
    let lambda = ctx.lambda();
    if window.empty {
        return Err(Error::domain("the lambda window is empty"));
    }
    if !window.contains(lambda) {
        return Err(Error::domain(format!(
            "lambda = {lambda} lies outside the window [{}, {}]",
            window.lambda1, window.lambda2
        )));
    }
    let zeta2 = second_subsolution(ctx, h, ctx.spec().radius, window.a_star)?;
    let theta2 = second_supersolution(ctx)?;
    let mut big_m = upper_amplitude(ctx)?;
    let w = ctx.profile();
    // enlarge M until theta1 dominates the second pair, keeping it a supersolution
    let q = ctx.q();
    let w_sup = w.sup_norm();
    while !(zeta2.le_within(&w.scale(big_m), 0.0) && theta2.le_within(&w.scale(big_m), 0.0))
        || big_m.powf(q + 1.0) < lambda * ctx.nl().f(big_m * w_sup)
    {
        big_m *= 1.25;
        if big_m > 2f64.powi(60) {
            return Err(Error::Barrier {
                inequality: "theta1 >= zeta2 and theta1 >= theta2".into(),
                margin: big_m,
            });
        }
    }
    let theta1 = w.scale(big_m);
    let m = lower_amplitude(ctx, &[&theta1, &zeta2, &theta2])?;
    let zeta1 = ctx.phi().scale(m);
    check_sub(ctx, &zeta1, "zeta1")?;
    check_super(ctx, &theta1, "theta1")?;
    Ok(BarrierSet {
        zeta1,
        theta1,
        zeta2,
        theta2,
        m_lambda: m,
        big_m_lambda: big_m,
        a: window.a_star,
        lambda1: window.lambda1,
        lambda2: window.lambda2,
        w_sup,
    })
}
