//! The sublinear problem v = K(v^p) and its infinite semipositone perturbation
//! v = K(v^p - theta v^(-gamma)), continued in theta from theta = 0.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridfn::{cone_inf, GridFunction};
use crate::operator::{dot, linearized_eigenvalue, principal_eigenpair, GreenOperator};
use crate::special::gamma;

const MAX_NEWTON: usize = 200;
const MAX_RESTARTS: usize = 3;
const FRACTION_TO_BOUNDARY: f64 = 0.95;
const ARMIJO: f64 = 1e-4;
/// Default certification tolerance for the sublinear and semipositone solves.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Parameters of the semipositone family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemipositoneSpec {
    /// Sublinear exponent, in (0, 1).
    pub p: f64,
    /// Exponent of the singular negative term, in (q, 1).
    pub gamma: f64,
    pub theta_max: f64,
    pub steps: usize,
    /// The branch stops once cone_inf(v, phi) drops below this fraction of its value at theta = 0.
    pub cone_floor_ratio: f64,
    pub tol: f64,
}

impl SemipositoneSpec {
    /// Defaults p = 1/2 and gamma = (1+q)/2 for singularity exponent q.
    pub fn for_q(q: f64) -> Self {
        SemipositoneSpec {
            p: 0.5,
            gamma: 0.5 * (1.0 + q),
            theta_max: 0.1,
            steps: 20,
            cone_floor_ratio: 1e-3,
            tol: DEFAULT_TOL,
        }
    }

    pub fn validate(&self, q: f64) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::config(format!(
                "p must lie in (0, 1), got {}",
                self.p
            )));
        }
        if !(self.gamma > q && self.gamma < 1.0) {
            return Err(Error::config(format!(
                "gamma must lie in (q, 1) = ({q}, 1), got {}",
                self.gamma
            )));
        }
        if !(self.theta_max > 0.0 && self.theta_max.is_finite()) {
            return Err(Error::config("theta_max must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol must be positive"));
        }
        Ok(())
    }
}

/// Energy E(v) = 1/2 v^T A v - c/(p+1) sum D |v|^(p+1) whose critical points solve v = c K(v^p).
pub fn sublinear_energy(op: &GreenOperator, p: f64, c: f64, v: &GridFunction) -> f64 {
    let av = op.apply_stiffness(v);
    sublinear_energy_with(op, p, c, v, av.values())
}

fn sublinear_energy_with(op: &GreenOperator, p: f64, c: f64, v: &GridFunction, av: &[f64]) -> f64 {
    let pot: f64 = op
        .mass()
        .iter()
        .zip(v.values())
        .map(|(m, t)| m * t.abs().powf(p + 1.0))
        .sum();
    0.5 * dot(v.values(), av) - c / (p + 1.0) * pot
}

/// Gradient A v - c D |v|^(p-1) v of [`sublinear_energy`].
pub fn sublinear_gradient(op: &GreenOperator, p: f64, c: f64, v: &GridFunction) -> GridFunction {
    let av = op.apply_stiffness(v);
    sublinear_gradient_with(op, p, c, v, av.values())
}

fn sublinear_gradient_with(
    op: &GreenOperator,
    p: f64,
    c: f64,
    v: &GridFunction,
    av: &[f64],
) -> GridFunction {
    let mass = op.mass();
    GridFunction::new(
        (0..v.len())
            .map(|i| av[i] - c * mass[i] * v[i].abs().powf(p - 1.0) * v[i])
            .collect(),
    )
}

fn sublinear_residual(op: &GreenOperator, p: f64, c: f64, v: &GridFunction) -> f64 {
    let rhs = op.apply(&v.map(|t| c * t.max(0.0).powf(p)));
    v.sup_distance(&rhs)
}

/// Scaled torsion start c^(1/(1-p)) Gamma(1+2s)^(-1/(1-p)) (1-x^2)^s-shaped, times `factor`.
pub fn sublinear_start(op: &GreenOperator, p: f64, c: f64, factor: f64) -> GridFunction {
    let t = op.torsion();
    let amp = (c * gamma(1.0 + 2.0 * op.s())).powf(1.0 / (1.0 - p));
    t.scale(factor * amp)
}

/// Solves v = K(v^p), v > 0.
pub fn solve_i0(op: &GreenOperator, p: f64) -> Result<GridFunction> {
    solve_i0_scaled(op, p, 1.0, None, DEFAULT_TOL)
}

/// Solves v = c K(v^p) by minimizing the energy, from `start` or the scaled torsion.
pub fn solve_i0_scaled(
    op: &GreenOperator,
    p: f64,
    c: f64,
    start: Option<&GridFunction>,
    tol: f64,
) -> Result<GridFunction> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
    }
    if !(c > 0.0) {
        return Err(Error::domain(format!("scale must be positive, got {c}")));
    }
    let mut v0 = match start {
        Some(s) => s.clone(),
        None => sublinear_start(op, p, c, 1.0),
    };
    if v0.len() != op.len() || v0.min() <= 0.0 {
        return Err(Error::domain(
            "start must be a positive grid function of matching size",
        ));
    }
    let mut last_err = None;
    for _ in 0..=MAX_RESTARTS {
        match minimize_sublinear(op, p, c, &v0, tol) {
            Ok(v) if v.sup_norm() > 1e-6 * v0.sup_norm() => return Ok(v),
            Ok(_) => {
                last_err = Some(Error::Convergence {
                    what: "sublinear solve (collapsed to zero)",
                    iterations: 0,
                    residual: f64::NAN,
                })
            }
            Err(e) => last_err = Some(e),
        }
        v0 = v0.scale(4.0);
    }
    Err(last_err.unwrap())
}

fn minimize_sublinear(
    op: &GreenOperator,
    p: f64,
    c: f64,
    v0: &GridFunction,
    tol: f64,
) -> Result<GridFunction> {
    let n = op.len();
    let a = op.stiffness();
    let mass = op.mass();
    let mut v = v0.clone();
    let mut av = (a * DVector::from_column_slice(v.values()))
        .as_slice()
        .to_vec();
    let mut energy = sublinear_energy_with(op, p, c, &v, &av);
    let mut residual = sublinear_residual(op, p, c, &v);
    let mut extra = 0;
    for it in 0..MAX_NEWTON {
        if residual <= tol {
            // a few further steps push the residual to rounding level
            if extra >= 3 {
                return Ok(v);
            }
            extra += 1;
        }
        let grad = sublinear_gradient_with(op, p, c, &v, &av);
        let mut hess = a.clone();
        for i in 0..n {
            hess[(i, i)] -= c * p * mass[i] * v[i].powf(p - 1.0);
        }
        let newton =
            Cholesky::new(hess).map(|ch| -ch.solve(&DVector::from_column_slice(grad.values())));
        let gradient_step = || {
            let rhs = op.apply(&v.map(|t| c * t.powf(p)));
            DVector::from_iterator(n, (0..n).map(|i| rhs[i] - v[i]))
        };
        let d = match newton {
            Some(d) if dot(grad.values(), d.as_slice()) < 0.0 => d,
            _ => gradient_step(),
        };
        let slope = dot(grad.values(), d.as_slice());
        let mut t: f64 = 1.0;
        for i in 0..n {
            if d[i] < 0.0 {
                t = t.min(FRACTION_TO_BOUNDARY * v[i] / -d[i]);
            }
        }
        let tiny = slope.abs() <= 1e-15 * (1.0 + energy.abs());
        let mut accepted = false;
        while t > 1e-16 {
            let trial = GridFunction::new((0..n).map(|i| v[i] + t * d[i]).collect());
            let a_trial = (a * DVector::from_column_slice(trial.values()))
                .as_slice()
                .to_vec();
            let e_trial = sublinear_energy_with(op, p, c, &trial, &a_trial);
            if e_trial <= energy + ARMIJO * t * slope || (tiny && e_trial.is_finite()) {
                v = trial;
                av = a_trial;
                energy = e_trial.min(energy);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let new_residual = sublinear_residual(op, p, c, &v);
        if !accepted || (residual <= tol && new_residual >= residual) {
            if residual <= tol {
                return Ok(v);
            }
            return Err(Error::Convergence {
                what: "sublinear energy line search",
                iterations: it,
                residual,
            });
        }
        residual = new_residual;
    }
    if residual <= tol {
        return Ok(v);
    }
    Err(Error::Convergence {
        what: "sublinear Newton iteration",
        iterations: MAX_NEWTON,
        residual,
    })
}

/// Principal eigenvalue of the linearization at v0 and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaReport {
    pub value: f64,
    pub eigenfunction: GridFunction,
    /// True when the eigenfunction has no sign change.
    pub sign_constant: bool,
    /// cone_inf(eigenfunction, phi).
    pub cone_inf: f64,
}

/// Computes the linearized eigenvalue at v0 and rejects a nonpositive value.
pub fn verify_lambda(op: &GreenOperator, v0: &GridFunction, p: f64) -> Result<LambdaReport> {
    let pair = linearized_eigenvalue(op, v0, p)?;
    let phi = principal_eigenpair(op)?.vector;
    let psi = pair.vector;
    let sign_constant = psi.min() > 0.0;
    let report = LambdaReport {
        value: pair.value,
        sign_constant,
        cone_inf: cone_inf(&psi, &phi)?,
        eigenfunction: psi,
    };
    if !(report.value > 0.0) {
        return Err(Error::Barrier {
            inequality: "linearized eigenvalue > 0 (discretization inconsistent)".into(),
            margin: report.value,
        });
    }
    Ok(report)
}

/// One certified point of the theta branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub theta: f64,
    pub v: GridFunction,
    pub residual: f64,
    pub cone_inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Why the continuation stopped before theta_max, if it did.
    pub stop_reason: Option<String>,
}

fn semipositone_residual(
    op: &GreenOperator,
    sp: &SemipositoneSpec,
    theta: f64,
    v: &GridFunction,
) -> Option<GridFunction> {
    if v.min() <= 0.0 || !v.is_finite() {
        return None;
    }
    let rhs = op.apply(&v.map(|t| t.powf(sp.p) - theta * t.powf(-sp.gamma)));
    Some(v - &rhs)
}

fn semipositone_jacobian(
    op: &GreenOperator,
    sp: &SemipositoneSpec,
    theta: f64,
    v: &GridFunction,
) -> DMatrix<f64> {
    let n = op.len();
    let k = op.kernel_matrix();
    let slope: Vec<f64> = v
        .values()
        .iter()
        .map(|&t| sp.p * t.powf(sp.p - 1.0) + theta * sp.gamma * t.powf(-sp.gamma - 1.0))
        .collect();
    DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 } else { 0.0 } - k[(i, j)] * slope[j],
    )
}

/// Newton corrector for v = K(v^p - theta v^(-gamma)) from `start`.
pub fn solve_theta(
    op: &GreenOperator,
    sp: &SemipositoneSpec,
    theta: f64,
    start: &GridFunction,
) -> Result<GridFunction> {
    let n = op.len();
    let mut v = start.clone();
    let mut r = semipositone_residual(op, sp, theta, &v)
        .ok_or_else(|| Error::domain("corrector start must be positive"))?;
    let mut norm = r.sup_norm();
    let mut extra = 0;
    for it in 0..MAX_NEWTON {
        if norm <= sp.tol {
            if extra >= 2 {
                return Ok(v);
            }
            extra += 1;
        }
        let jac = semipositone_jacobian(op, sp, theta, &v);
        let d = jac
            .lu()
            .solve(&-DVector::from_column_slice(r.values()))
            .ok_or_else(|| Error::LinearAlgebra("singular corrector Jacobian".into()))?;
        let mut t: f64 = 1.0;
        for i in 0..n {
            if d[i] < 0.0 {
                t = t.min(FRACTION_TO_BOUNDARY * v[i] / -d[i]);
            }
        }
        let mut accepted = false;
        while t > 1e-12 {
            let trial = GridFunction::new((0..n).map(|i| v[i] + t * d[i]).collect());
            if let Some(rt) = semipositone_residual(op, sp, theta, &trial) {
                let rn = rt.sup_norm();
                if rn < norm {
                    v = trial;
                    r = rt;
                    norm = rn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if norm <= sp.tol {
                return Ok(v);
            }
            return Err(Error::Convergence {
                what: "semipositone corrector",
                iterations: it,
                residual: norm,
            });
        }
    }
    if norm <= sp.tol {
        return Ok(v);
    }
    Err(Error::Convergence {
        what: "semipositone corrector",
        iterations: MAX_NEWTON,
        residual: norm,
    })
}

/// Predictor-corrector continuation in theta from the sublinear solution v0.
pub fn continue_theta(
    op: &GreenOperator,
    sp: &SemipositoneSpec,
    v0: &GridFunction,
) -> Result<Branch> {
    if !(sp.p > 0.0
        && sp.p < 1.0
        && sp.gamma > 0.0
        && sp.gamma < 1.0
        && sp.theta_max > 0.0
        && sp.steps > 0)
    {
        return Err(Error::config("invalid semipositone parameters"));
    }
    let phi = principal_eigenpair(op)?.vector;
    let base_res = semipositone_residual(op, sp, 0.0, v0)
        .ok_or_else(|| Error::domain("v0 must be positive"))?
        .sup_norm();
    let cone0 = cone_inf(v0, &phi)?;
    if base_res > sp.tol || !(cone0 > 0.0) {
        return Err(Error::domain(format!(
            "v0 is not a certified positive solution (residual {base_res:e})"
        )));
    }
    let floor = sp.cone_floor_ratio * cone0;
    let mut points = vec![BranchPoint {
        theta: 0.0,
        v: v0.clone(),
        residual: base_res,
        cone_inf: cone0,
    }];
    let nominal = sp.theta_max / sp.steps as f64;
    let min_step = nominal * 2f64.powi(-12);
    let mut step = nominal;
    let mut stop_reason = None;
    while points.last().unwrap().theta < sp.theta_max * (1.0 - 1e-12) {
        let last = points.last().unwrap();
        let theta = (last.theta + step).min(sp.theta_max);
        let dtheta = theta - last.theta;
        // tangent: J dv/dtheta = -K(v^(-gamma))
        let jac = semipositone_jacobian(op, sp, last.theta, &last.v);
        let forcing = op.apply(&last.v.map(|t| t.powf(-sp.gamma)));
        let tangent = jac
            .lu()
            .solve(&-DVector::from_column_slice(forcing.values()));
        let predicted = match tangent {
            Some(tv) => {
                let pred =
                    GridFunction::new((0..op.len()).map(|i| last.v[i] + dtheta * tv[i]).collect());
                if pred.min() > 0.0 {
                    pred
                } else {
                    last.v.clone()
                }
            }
            None => last.v.clone(),
        };
        match solve_theta(op, sp, theta, &predicted) {
            Ok(v) => {
                let c = cone_inf(&v, &phi)?;
                let residual = semipositone_residual(op, sp, theta, &v)
                    .map_or(f64::INFINITY, |r| r.sup_norm());
                if c < floor {
                    stop_reason = Some(format!(
                        "left the cone at theta = {theta:e} (cone_inf {c:e})"
                    ));
                    break;
                }
                points.push(BranchPoint {
                    theta,
                    v,
                    residual,
                    cone_inf: c,
                });
                step = (2.0 * step).min(nominal);
            }
            Err(e) => {
                step *= 0.5;
                if step < min_step {
                    if points.len() == 1 {
                        return Err(e);
                    }
                    stop_reason = Some(format!(
                        "corrector failed beyond theta = {:e}: {e}",
                        points.last().unwrap().theta
                    ));
                    break;
                }
            }
        }
    }
    Ok(Branch {
        points,
        stop_reason,
    })
}

/// Largest boundary strip width eta such that
/// v^p - theta v^(-gamma) + k v / delta^(s(q+1)) <= 0 at every node with delta < eta.
///
/// Returns None when the inequality already fails at the node closest to the boundary.
pub fn si_barrier(
    op: &GreenOperator,
    q: f64,
    sp: &SemipositoneSpec,
    v: &GridFunction,
    theta: f64,
    k: f64,
) -> Option<f64> {
    let s = op.s();
    let delta = op.grid().delta();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| delta[i].total_cmp(&delta[j]));
    let holds = |i: usize| {
        let t = v[i];
        t.powf(sp.p) - theta * t.powf(-sp.gamma) + k * t / delta[i].powf(s * (q + 1.0)) <= 0.0
    };
    match order.iter().find(|&&i| !holds(i)) {
        Some(&i) if delta[i] <= delta[order[0]] => None,
        Some(&i) => Some(delta[i]),
        None => Some(1.0),
    }
}
