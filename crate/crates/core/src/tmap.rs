//! The solution map T and the integral residual of the full problem.
//!
//! T(u) = z solves z = K(lambda f(0) z^(-q) + ft(u) + k (u+ - z)), where ft is
//! the shifted part of the nonlinearity and k makes ft(t) + k t increasing, so
//! T is monotone. Fixed points of T are exactly the positive solutions of
//! u = K(lambda f(u)/u^q).

use crate::context::SolverContext;
use crate::error::{Error, Result};
use crate::gridfn::{cone_inf, GridFunction};
use crate::singular::{EpsLevel, SingularProblem};

/// Output of one application of T.
#[derive(Debug, Clone, PartialEq)]
pub struct TResult {
    pub z: GridFunction,
    /// (eps, sup norm, energy) per continuation level; empty for warm-started solves.
    pub eps_trace: Vec<EpsLevel>,
    /// Sup norm of the integral residual of the equation solved by z.
    pub residual: f64,
    /// cone_inf(z, phi).
    pub cone_lower: f64,
    /// Certified lower barrier: z >= m_lower * phi.
    pub m_lower: f64,
    /// Certified upper barrier: z <= m_upper * w.
    pub m_upper: f64,
}

/// Forcing ft(u) + k u+ of the shifted singular problem.
pub fn shifted_forcing(ctx: &SolverContext, u: &GridFunction) -> GridFunction {
    let k = ctx.k_shift();
    u.map(|t| ctx.nl().ftilde(t) + k * t.max(0.0))
}

fn check_len(ctx: &SolverContext, u: &GridFunction) -> Result<()> {
    if u.len() != ctx.len() {
        return Err(Error::GridMismatch {
            expected: ctx.len(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Applies T with the full eps-continuation.
pub fn apply_t(ctx: &SolverContext, u: &GridFunction) -> Result<TResult> {
    apply_t_from(ctx, u, None)
}

/// Applies T; with `start` given, Newton is run directly at eps = 0 from it
/// and the continuation is used only as a fallback.
pub fn apply_t_from(
    ctx: &SolverContext,
    u: &GridFunction,
    start: Option<&GridFunction>,
) -> Result<TResult> {
    check_len(ctx, u)?;
    if !u.is_finite() {
        return Err(Error::domain("T applied to a non-finite grid function"));
    }
    let g = shifted_forcing(ctx, u);
    let problem =
        SingularProblem::new(ctx.op(), &g, ctx.c_sing(), ctx.q()).with_shift(ctx.k_shift());
    let settings = ctx.settings();
    let warm = start
        .filter(|s| s.len() == ctx.len() && s.min() > 0.0)
        .and_then(|s| problem.minimize(s, 0.0, settings.tol, 3).ok())
        .filter(|sol| sol.grad_norm <= settings.tol);
    let (z, eps_trace, residual) = match warm {
        Some(sol) => (sol.z, Vec::new(), sol.grad_norm),
        None => {
            let res = problem.continuation(None, settings)?;
            (res.z, res.trace, res.residual)
        }
    };
    if residual > ctx.spec().tol_residual {
        return Err(Error::Convergence {
            what: "map T (refine the grid or lower eps_min)",
            iterations: eps_trace.len(),
            residual,
        });
    }
    let (m_lower, m_upper) = barrier_constants(ctx, &g)?;
    let tol = ctx.spec().tol_order;
    let lower = ctx.phi().scale(m_lower);
    let upper = ctx.profile().scale(m_upper);
    let below = lower.le_violation(&z);
    if below > tol * z.sup_norm().max(1.0) {
        return Err(Error::Barrier {
            inequality: "m phi <= T(u)".into(),
            margin: -below,
        });
    }
    let above = z.le_violation(&upper);
    if above > tol * upper.sup_norm().max(1.0) {
        return Err(Error::Barrier {
            inequality: "T(u) <= M w".into(),
            margin: -above,
        });
    }
    Ok(TResult {
        cone_lower: cone_inf(&z, ctx.phi())?,
        z,
        eps_trace,
        residual,
        m_lower,
        m_upper,
    })
}

/// Barrier constants (m, M) for the forcing g of the shifted problem.
///
/// m is the largest dyadic value with m (lambda1 + k) phi <= c / (m phi + 1)^q,
/// making m phi a subsolution for every eps <= 1. M is the smallest value found
/// by doubling and bisection with
/// M w^(-q) - c M^(-q) w^(-q) + k M w >= g at every node, making M w a supersolution.
pub fn barrier_constants(ctx: &SolverContext, g: &GridFunction) -> Result<(f64, f64)> {
    let c = ctx.c_sing();
    let q = ctx.q();
    let k = ctx.k_shift();
    let phi = ctx.phi();
    let lam1 = ctx.lambda1();
    let sub_ok = |m: f64| {
        phi.values()
            .iter()
            .all(|&p| m * (lam1 + k) * p <= c / (m * p + 1.0).powf(q))
    };
    let mut m = 1.0;
    while !sub_ok(m) {
        m *= 0.5;
        if m < 1e-12 {
            return Err(Error::Barrier {
                inequality: "lower barrier m phi".into(),
                margin: m,
            });
        }
    }
    let w = ctx.profile();
    let super_ok = |big: f64| {
        (0..w.len()).all(|i| {
            let wq = w[i].powf(-q);
            big * wq - c * big.powf(-q) * wq + k * big * w[i] >= g[i]
        })
    };
    let mut hi = 1.0;
    while !super_ok(hi) {
        hi *= 2.0;
        if hi > 2f64.powi(60) {
            return Err(Error::Barrier {
                inequality: "upper barrier M w".into(),
                margin: hi,
            });
        }
    }
    let mut lo = 0.5 * hi;
    if !super_ok(lo) {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if super_ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = lo;
    }
    Ok((m, hi))
}

/// Sup norm of u - K(lambda f(u)/u^q); requires u > 0.
pub fn residual_p(ctx: &SolverContext, u: &GridFunction) -> Result<f64> {
    check_len(ctx, u)?;
    if let Some(i) = u.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::domain(format!(
            "residual needs a positive function, node {i} has {}",
            u[i]
        )));
    }
    let lambda = ctx.lambda();
    let rhs = u.map(|t| lambda * ctx.nl().f0(t));
    Ok(u.sup_distance(&ctx.op().apply(&rhs)))
}
