//! Singular problems with a fixed forcing.
//!
//! For a forcing g >= 0, a singular coefficient c > 0 and a shift k >= 0 the
//! discrete problem is
//!   A z + k D z - c D (z + eps)^(-q) = D g,   z > 0,
//! with A the stiffness form and D the mass weights. It is the Euler-Lagrange
//! equation of the strictly convex energy
//!   E(z) = 1/2 z^T A z + k/2 sum D z^2 - c/(1-q) sum D (z+eps)^(1-q) - sum D g z,
//! minimized here by Newton's method with an Armijo line search. The singular
//! limit eps = 0 is reached by halving eps from eps0 and finishing with a
//! Newton solve at eps = 0 itself.

use nalgebra::{Cholesky, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridfn::GridFunction;
use crate::operator::{dot, GreenOperator};

/// Inner tolerance used by the entry points that take none.
pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 200;
const FRACTION_TO_BOUNDARY: f64 = 0.95;
const ARMIJO: f64 = 1e-4;

/// Schedule of the eps-continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSettings {
    pub eps0: f64,
    pub ratio: f64,
    pub eps_min: f64,
    /// Sup-norm tolerance on the integral residual of each solve.
    pub tol: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            eps0: 1.0,
            ratio: 0.5,
            eps_min: 1e-8,
            tol: DEFAULT_TOL,
        }
    }
}

/// Data of one singular problem with fixed forcing.
#[derive(Debug, Clone, Copy)]
pub struct SingularProblem<'a> {
    pub op: &'a GreenOperator,
    pub forcing: &'a GridFunction,
    pub c_sing: f64,
    pub q: f64,
    pub shift: f64,
}

/// Minimizer of the regularized energy at one eps.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolve {
    pub z: GridFunction,
    pub eps: f64,
    pub energy: f64,
    pub newton_iters: usize,
    /// Sup norm of the integral residual z - K(c (z+eps)^(-q) + g - k z),
    /// i.e. of the gradient preconditioned by K.
    pub grad_norm: f64,
    /// Energy after each accepted step, starting with the initial guess.
    pub energy_trace: Vec<f64>,
}

/// One level of the eps-continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsLevel {
    pub eps: f64,
    pub sup_norm: f64,
    pub energy: f64,
}

/// Output of a full continuation down to eps = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationResult {
    pub z: GridFunction,
    pub trace: Vec<EpsLevel>,
    /// Solutions at each positive eps, in the order visited.
    pub levels: Vec<GridFunction>,
    pub residual: f64,
}

impl<'a> SingularProblem<'a> {
    pub fn new(op: &'a GreenOperator, forcing: &'a GridFunction, c_sing: f64, q: f64) -> Self {
        SingularProblem {
            op,
            forcing,
            c_sing,
            q,
            shift: 0.0,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.forcing.len() != self.op.len() {
            return Err(Error::GridMismatch {
                expected: self.op.len(),
                got: self.forcing.len(),
            });
        }
        if !(self.c_sing > 0.0 && self.c_sing.is_finite()) {
            return Err(Error::domain(format!(
                "singular coefficient must be positive, got {}",
                self.c_sing
            )));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::domain(format!(
                "q must lie in (0, 1), got {}",
                self.q
            )));
        }
        if self
            .forcing
            .values()
            .iter()
            .any(|g| !(*g >= 0.0 && g.is_finite()))
        {
            return Err(Error::domain("forcing must be nonnegative and finite"));
        }
        Ok(())
    }

    fn energy_with(&self, z: &GridFunction, az: &[f64], eps: f64) -> f64 {
        let mass = self.op.mass();
        let mut e = 0.5 * dot(z.values(), az);
        for i in 0..z.len() {
            let zi = z[i];
            e += mass[i]
                * (0.5 * self.shift * zi * zi
                    - self.c_sing / (1.0 - self.q) * (zi + eps).powf(1.0 - self.q)
                    - self.forcing[i] * zi);
        }
        e
    }

    /// Discrete energy at a point with z + eps > 0.
    pub fn energy(&self, z: &GridFunction, eps: f64) -> f64 {
        let az = self.op.apply_stiffness(z);
        self.energy_with(z, az.values(), eps)
    }

    /// Euclidean gradient of [`SingularProblem::energy`].
    pub fn gradient(&self, z: &GridFunction, eps: f64) -> GridFunction {
        let az = self.op.apply_stiffness(z);
        self.gradient_with(z, az.values(), eps)
    }

    fn gradient_with(&self, z: &GridFunction, az: &[f64], eps: f64) -> GridFunction {
        let mass = self.op.mass();
        GridFunction::new(
            (0..z.len())
                .map(|i| {
                    az[i]
                        + mass[i]
                            * (self.shift * z[i]
                                - self.c_sing * (z[i] + eps).powf(-self.q)
                                - self.forcing[i])
                })
                .collect(),
        )
    }

    /// z - K(c (z+eps)^(-q) + g - k z), sup norm.
    pub fn residual(&self, z: &GridFunction, eps: f64) -> f64 {
        let rhs = GridFunction::new(
            (0..z.len())
                .map(|i| {
                    self.c_sing * (z[i] + eps).powf(-self.q) + self.forcing[i] - self.shift * z[i]
                })
                .collect(),
        );
        z.sup_distance(&self.op.apply(&rhs))
    }

    /// A positive starting point: K applied to the forcing plus the singular term at z = 1.
    pub fn default_start(&self) -> GridFunction {
        let rhs = self.forcing.map(|g| g + self.c_sing);
        self.op.apply(&rhs)
    }

    /// Newton's method on the energy at fixed eps.
    ///
    /// `extra_steps` further iterations are taken after the tolerance is met
    /// as long as they keep reducing the residual.
    pub fn minimize(
        &self,
        z0: &GridFunction,
        eps: f64,
        tol: f64,
        extra_steps: usize,
    ) -> Result<RegularizedSolve> {
        self.validate()?;
        if !(eps >= 0.0) {
            return Err(Error::domain(format!("eps must be nonnegative, got {eps}")));
        }
        if z0.len() != self.op.len() {
            return Err(Error::GridMismatch {
                expected: self.op.len(),
                got: z0.len(),
            });
        }
        let first = self.newton(z0, eps, tol, extra_steps, 1.0);
        match first {
            Ok(sol) => Ok(sol),
            Err(Error::Convergence { .. })
            | Err(Error::LinearAlgebra(_))
            | Err(Error::Domain(_)) => {
                // damped restart from a safe positive point
                let start = self.default_start().max_with(z0);
                self.newton(&start, eps, tol, extra_steps, 0.5)
            }
            Err(e) => Err(e),
        }
    }

    fn newton(
        &self,
        z0: &GridFunction,
        eps: f64,
        tol: f64,
        extra_steps: usize,
        damping: f64,
    ) -> Result<RegularizedSolve> {
        let n = self.op.len();
        let mass = self.op.mass();
        let a = self.op.stiffness();
        if z0.min() <= 0.0 || !z0.is_finite() {
            return Err(Error::domain("Newton start must be positive"));
        }
        let mut z = z0.clone();
        let mut az = (a * DVector::from_column_slice(z.values()))
            .as_slice()
            .to_vec();
        let mut energy = self.energy_with(&z, &az, eps);
        let mut energy_trace = vec![energy];
        let mut residual = self.residual(&z, eps);
        let mut extra = 0;
        let mut best: Option<(GridFunction, f64, f64)> = None;
        for it in 0..MAX_NEWTON {
            // relative to the solution size: rounding limits the absolute residual
            if residual <= tol * z.sup_norm().max(1.0) {
                let improved = best.as_ref().is_none_or(|b| residual < 0.25 * b.2);
                if best.as_ref().is_none_or(|b| residual < b.2) {
                    best = Some((z.clone(), energy, residual));
                }
                if extra >= extra_steps || !improved {
                    let (z, energy, residual) = best.unwrap();
                    return Ok(RegularizedSolve {
                        z,
                        eps,
                        energy,
                        newton_iters: it,
                        grad_norm: residual,
                        energy_trace,
                    });
                }
                extra += 1;
            }
            let grad = self.gradient_with(&z, &az, eps);
            let mut hess = a.clone();
            for i in 0..n {
                hess[(i, i)] += mass[i]
                    * (self.shift + self.c_sing * self.q * (z[i] + eps).powf(-self.q - 1.0));
            }
            let chol = Cholesky::new(hess).ok_or_else(|| {
                Error::LinearAlgebra("energy Hessian is not positive definite".into())
            })?;
            let d = -chol.solve(&DVector::from_column_slice(grad.values()));
            let slope = dot(grad.values(), d.as_slice());
            let mut t: f64 = damping;
            for i in 0..n {
                if d[i] < 0.0 {
                    t = t.min(FRACTION_TO_BOUNDARY * z[i] / -d[i]);
                }
            }
            let tiny_slope = slope.abs() <= 1e-15 * (1.0 + energy.abs());
            let mut accepted = false;
            while t > 1e-16 {
                let trial = GridFunction::new((0..n).map(|i| z[i] + t * d[i]).collect());
                let a_trial = (a * DVector::from_column_slice(trial.values()))
                    .as_slice()
                    .to_vec();
                let e_trial = self.energy_with(&trial, &a_trial, eps);
                if e_trial <= energy + ARMIJO * t * slope || (tiny_slope && e_trial.is_finite()) {
                    z = trial;
                    az = a_trial;
                    energy = e_trial.min(energy);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if let Some((z, energy, residual)) = best {
                    return Ok(RegularizedSolve {
                        z,
                        eps,
                        energy,
                        newton_iters: it,
                        grad_norm: residual,
                        energy_trace,
                    });
                }
                return Err(Error::Convergence {
                    what: "energy line search",
                    iterations: it,
                    residual,
                });
            }
            energy_trace.push(energy);
            residual = self.residual(&z, eps);
        }
        if let Some((z, energy, residual)) = best {
            return Ok(RegularizedSolve {
                z,
                eps,
                energy,
                newton_iters: MAX_NEWTON,
                grad_norm: residual,
                energy_trace,
            });
        }
        Err(Error::Convergence {
            what: "energy Newton iteration",
            iterations: MAX_NEWTON,
            residual,
        })
    }

    /// Halves eps from `eps0` down to `eps_min` warm-starting each solve, then
    /// solves at eps = 0. Levels stop early once successive solutions differ
    /// by less than tol/10.
    pub fn continuation(
        &self,
        z0: Option<&GridFunction>,
        settings: &ContinuationSettings,
    ) -> Result<ContinuationResult> {
        self.validate()?;
        let mut z = match z0 {
            Some(z0) => z0.clone(),
            None => self.default_start(),
        };
        let mut eps = settings.eps0;
        let mut trace = Vec::new();
        let mut levels: Vec<GridFunction> = Vec::new();
        while eps >= settings.eps_min {
            let sol = self.minimize(&z, eps, settings.tol, 0)?;
            trace.push(EpsLevel {
                eps,
                sup_norm: sol.z.sup_norm(),
                energy: sol.energy,
            });
            let done = levels
                .last()
                .is_some_and(|prev| prev.sup_distance(&sol.z) < 0.1 * settings.tol);
            z = sol.z.clone();
            levels.push(sol.z);
            if done {
                break;
            }
            eps *= settings.ratio;
        }
        let last = self
            .minimize(&z, 0.0, settings.tol, 3)
            .map_err(|e| match e {
                Error::Convergence {
                    iterations,
                    residual,
                    ..
                } => Error::Convergence {
                    what: "singular solve at eps = 0 (refine the grid or loosen tol)",
                    iterations,
                    residual,
                },
                other => other,
            })?;
        trace.push(EpsLevel {
            eps: 0.0,
            sup_norm: last.z.sup_norm(),
            energy: last.energy,
        });
        Ok(ContinuationResult {
            residual: last.grad_norm,
            z: last.z,
            trace,
            levels,
        })
    }
}

/// Minimizes the regularized energy (without shift) at one eps from `z0`.
pub fn solve_regularized(
    op: &GreenOperator,
    g: &GridFunction,
    c_sing: f64,
    q: f64,
    eps: f64,
    z0: &GridFunction,
) -> Result<RegularizedSolve> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    SingularProblem::new(op, g, c_sing, q).minimize(z0, eps, DEFAULT_TOL, 0)
}

/// Solves w = c K(w^(-q)), w > 0.
pub fn solve_pure_singular(op: &GreenOperator, q: f64, c: f64) -> Result<GridFunction> {
    solve_pure_singular_with(op, q, c, &ContinuationSettings::default())
}

pub fn solve_pure_singular_with(
    op: &GreenOperator,
    q: f64,
    c: f64,
    settings: &ContinuationSettings,
) -> Result<GridFunction> {
    let zero = GridFunction::zeros(op.len());
    let res = SingularProblem::new(op, &zero, c, q).continuation(None, settings)?;
    if res.residual > settings.tol {
        return Err(Error::Convergence {
            what: "pure singular solve",
            iterations: res.trace.len(),
            residual: res.residual,
        });
    }
    Ok(res.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Grading};
    use crate::special::gamma;

    fn op(n: usize) -> GreenOperator {
        GreenOperator::assemble(&make_grid(n, Grading::Chebyshev).unwrap(), 0.25).unwrap()
    }

    #[test]
    fn large_eps_freezes_the_singular_term() {
        let op = op(32);
        let g = GridFunction::zeros(32);
        let torsion = op.torsion();
        let mut prev = f64::INFINITY;
        for eps in [1e2, 1e4, 1e6] {
            let z0 = torsion.clone();
            let sol = solve_regularized(&op, &g, 1.0, 0.5, eps, &z0).unwrap();
            let oracle = torsion.scale(eps.powf(-0.5));
            let rel = sol.z.sup_distance(&oracle) / oracle.sup_norm();
            assert!(rel < prev);
            prev = rel;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn energy_decreases_and_gradient_vanishes() {
        let op = op(48);
        let g = GridFunction::from_fn(op.grid().nodes(), |x| 1.0 + x);
        let start = GridFunction::constant(48, 5.0);
        let sol = solve_regularized(&op, &g, 2.0, 1.0 / 3.0, 0.1, &start).unwrap();
        for w in sol.energy_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(sol.grad_norm <= DEFAULT_TOL);
        assert!(sol.z.min() > 0.0);
        // a different start reaches the same minimizer
        let other = solve_regularized(&op, &g, 2.0, 1.0 / 3.0, 0.1, &op.torsion()).unwrap();
        assert!(other.z.sup_distance(&sol.z) < 1e-10);
    }

    #[test]
    fn pure_singular_profile_and_small_q_limit() {
        let op = op(64);
        let w = solve_pure_singular(&op, 1.0 / 3.0, 1.0).unwrap();
        assert!(w.min() > 0.0);
        let w_small_q = solve_pure_singular(&op, 1e-3, 1.0).unwrap();
        let torsion =
            GridFunction::from_fn(op.grid().nodes(), |x| (1.0 - x * x).powf(0.25) / gamma(1.5));
        assert!(w_small_q.sup_distance(&torsion) < 1e-2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let op = op(16);
        let g = GridFunction::constant(16, -1.0);
        let z0 = GridFunction::constant(16, 1.0);
        assert!(solve_regularized(&op, &g, 1.0, 0.5, 0.1, &z0).is_err());
        let g = GridFunction::zeros(16);
        assert!(solve_regularized(&op, &g, 0.0, 0.5, 0.1, &z0).is_err());
        assert!(solve_regularized(&op, &g, 1.0, 0.5, 0.0, &z0).is_err());
        assert!(solve_regularized(&op, &GridFunction::zeros(8), 1.0, 0.5, 0.1, &z0).is_err());
    }
}
