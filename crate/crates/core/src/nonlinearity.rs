//! The source nonlinearity f and the quantities derived from it.
//!
//! For a singularity exponent q and parameter lambda the solvers use
//! f0(t) = f(t)/t^q and the shifted part ft(t) = lambda (f(t) - f(0)) / t^q,
//! which vanishes at 0. Both f and ft are extended to t <= 0 by their value at 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form families of nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NonlinearityKind {
    /// exp(alpha t / (alpha + t)).
    Exemplar { alpha: f64 },
    /// f identically equal to `value`; the frozen problem.
    Constant { value: f64 },
    /// 1 + coef * t^exponent.
    Power { coef: f64, exponent: f64 },
}

impl fmt::Display for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlinearityKind::Exemplar { alpha } => write!(f, "exemplar:{alpha}"),
            NonlinearityKind::Constant { value } => write!(f, "constant:{value}"),
            NonlinearityKind::Power { coef, exponent } => write!(f, "power:{coef}:{exponent}"),
        }
    }
}

impl FromStr for NonlinearityKind {
    type Err = Error;

    /// Parses `exemplar:<alpha>`, `constant:<value>` or `power:<coef>:<exponent>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::config(format!("nonlinearity `{s}` is missing a parameter")))?
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad number in nonlinearity `{s}`")))
        };
        let kind = match parts[0].to_ascii_lowercase().as_str() {
            "exemplar" => NonlinearityKind::Exemplar { alpha: num(1)? },
            "constant" => NonlinearityKind::Constant { value: num(1)? },
            "power" => NonlinearityKind::Power {
                coef: num(1)?,
                exponent: num(2)?,
            },
            other => return Err(Error::config(format!("unknown nonlinearity `{other}`"))),
        };
        Ok(kind)
    }
}

/// Values returned by [`Nonlinearity::eval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityValues {
    pub f: f64,
    pub df: f64,
    pub f0: f64,
    pub ftilde: f64,
}

/// A validated nonlinearity bound to an exponent q and a parameter lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    q: f64,
    lambda: f64,
}

/// Log-spaced sample of (0, infinity) used by the validators.
pub(crate) fn log_samples(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

impl Nonlinearity {
    /// Builds and validates f(0) > 0, monotonicity of f and sub-(q+1) growth by sampling.
    pub fn new(kind: NonlinearityKind, q: f64, lambda: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::config(format!("q must lie in (0,1), got {q}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        match kind {
            NonlinearityKind::Exemplar { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::config(format!(
                    "alpha must be positive, got {alpha}"
                )))
            }
            NonlinearityKind::Power { coef, exponent } if !(coef >= 0.0 && exponent > 0.0) => {
                return Err(Error::config(
                    "power nonlinearity needs coef >= 0 and exponent > 0",
                ))
            }
            _ => {}
        }
        let nl = Nonlinearity { kind, q, lambda };
        nl.validate()?;
        Ok(nl)
    }

    pub fn exemplar(alpha: f64, q: f64, lambda: f64) -> Result<Self> {
        Self::new(NonlinearityKind::Exemplar { alpha }, q, lambda)
    }

    pub fn kind(&self) -> NonlinearityKind {
        self.kind
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same nonlinearity with a different lambda.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.kind, self.q, lambda)
    }

    fn validate(&self) -> Result<()> {
        let f_zero = self.f(0.0);
        if !(f_zero > 0.0 && f_zero.is_finite()) {
            return Err(Error::config(format!(
                "f(0) must be positive, got {f_zero}"
            )));
        }
        let ts = log_samples(1e-8, 1e8, 2001);
        let mut prev = f_zero;
        for &t in &ts {
            let v = self.f(t);
            if !v.is_finite() || v < prev * (1.0 - 1e-14) {
                return Err(Error::config(format!(
                    "f is not nondecreasing on the sample (t = {t})"
                )));
            }
            prev = v;
        }
        let growth = |t: f64| self.f(t) / t.powf(self.q + 1.0);
        if !(growth(1e8) < growth(1e4) && growth(1e8) < 1.0) {
            return Err(Error::config(
                "f(t)/t^(q+1) does not decay at large t on the sample",
            ));
        }
        Ok(())
    }

    /// f(t), extended by f(0) for t <= 0.
    pub fn f(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self.kind {
            NonlinearityKind::Exemplar { alpha } => (alpha * t / (alpha + t)).exp(),
            NonlinearityKind::Constant { value } => value,
            NonlinearityKind::Power { coef, exponent } => 1.0 + coef * t.powf(exponent),
        }
    }

    /// f(t) - f(0), computed without cancellation.
    fn f_increment(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self.kind {
            NonlinearityKind::Exemplar { alpha } => (alpha * t / (alpha + t)).exp_m1(),
            NonlinearityKind::Constant { .. } => 0.0,
            NonlinearityKind::Power { coef, exponent } => coef * t.powf(exponent),
        }
    }

    /// f'(t); zero for t < 0.
    pub fn df(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self.kind {
            NonlinearityKind::Exemplar { alpha } => {
                let d = alpha + t;
                self.f(t) * alpha * alpha / (d * d)
            }
            NonlinearityKind::Constant { .. } => 0.0,
            NonlinearityKind::Power { coef, exponent } => {
                if t == 0.0 {
                    if exponent > 1.0 {
                        0.0
                    } else if exponent == 1.0 {
                        coef
                    } else {
                        f64::INFINITY
                    }
                } else {
                    coef * exponent * t.powf(exponent - 1.0)
                }
            }
        }
    }

    /// f(t)/t^q for t > 0.
    pub fn f0(&self, t: f64) -> f64 {
        self.f(t) / t.powf(self.q)
    }

    /// d/dt of f(t)/t^q for t > 0.
    pub fn df0(&self, t: f64) -> f64 {
        let tq = t.powf(self.q);
        self.df(t) / tq - self.q * self.f(t) / (tq * t)
    }

    /// lambda (f(t) - f(0)) / t^q, zero for t <= 0.
    pub fn ftilde(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.lambda * self.f_increment(t) / t.powf(self.q)
    }

    /// Derivative of `ftilde` for t > 0.
    pub fn dftilde(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let tq = t.powf(self.q);
        self.lambda * (self.df(t) / tq - self.q * self.f_increment(t) / (tq * t))
    }

    pub fn eval(&self, t: f64) -> NonlinearityValues {
        NonlinearityValues {
            f: self.f(t),
            df: self.df(t),
            f0: if t > 0.0 { self.f0(t) } else { f64::INFINITY },
            ftilde: self.ftilde(t),
        }
    }

    /// A shift k such that ft(t) + k t is increasing on a log sample of (0, 1e6].
    ///
    /// Computed as max(0, -min sampled ft') + 1 and then checked on the sample.
    pub fn k_shift(&self) -> Result<f64> {
        let ts = log_samples(1e-8, 1e6, 4001);
        let min_slope = ts
            .iter()
            .map(|&t| self.dftilde(t))
            .fold(f64::INFINITY, f64::min);
        let k = (-min_slope).max(0.0) + 1.0;
        let mut prev = self.ftilde(ts[0]) + k * ts[0];
        for &t in &ts[1..] {
            let v = self.ftilde(t) + k * t;
            if v <= prev {
                return Err(Error::config(format!(
                    "ft(t) + {k} t fails to increase at t = {t}"
                )));
            }
            prev = v;
        }
        Ok(k)
    }

    /// f(t)/t^q nondecreasing on [lo, hi] (sampled).
    pub fn f0_nondecreasing_on(&self, lo: f64, hi: f64) -> bool {
        let ts = log_samples(lo, hi, 1001);
        ts.windows(2)
            .all(|w| self.f0(w[1]) >= self.f0(w[0]) * (1.0 - 1e-13))
    }

    /// f(t)/t^q nonincreasing beyond `threshold` (sampled up to 1e8).
    pub fn satisfies_decay_beyond(&self, threshold: f64) -> bool {
        if !(threshold > 0.0) {
            return false;
        }
        let ts = log_samples(threshold, threshold.max(1.0) * 1e8, 2001);
        ts.windows(2)
            .all(|w| self.f0(w[1]) <= self.f0(w[0]) * (1.0 + 1e-13))
    }
}

/// Endpoints of the interval on which exp(alpha t/(alpha+t)) / t^q increases.
///
/// They are the roots of q t^2 + (2 q alpha - alpha^2) t + q alpha^2 = 0,
/// real exactly when alpha > 4q.
pub fn exemplar_monotonicity_interval(alpha: f64, q: f64) -> Option<(f64, f64)> {
    let b = alpha * alpha - 2.0 * q * alpha;
    let disc = alpha.powi(3) * (alpha - 4.0 * q);
    if !(disc > 0.0) {
        return None;
    }
    let root = disc.sqrt();
    let upper = (b + root) / (2.0 * q);
    // product of the roots is alpha^2
    Some((alpha * alpha / upper, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exemplar() -> Nonlinearity {
        Nonlinearity::exemplar(2.0, 1.0 / 3.0, 1.0).unwrap()
    }

    #[test]
    fn values_at_zero_and_negative() {
        let nl = exemplar();
        let v = nl.eval(0.0);
        assert_eq!(v.f, 1.0);
        assert_eq!(v.ftilde, 0.0);
        assert_eq!(nl.f(-1.0), 1.0);
        assert_eq!(nl.ftilde(-1.0), 0.0);
        let v = nl.eval(0.3);
        assert!(v.f.is_finite() && v.df.is_finite() && v.f0.is_finite() && v.ftilde.is_finite());
    }

    #[test]
    fn monotonicity_interval_of_exemplar() {
        let (lo, hi) = exemplar_monotonicity_interval(2.0, 1.0 / 3.0).unwrap();
        assert_relative_eq!(lo, 4.0 - 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(hi, 4.0 + 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        let nl = exemplar();
        assert!(nl.df0(0.5 * (lo + hi)) > 0.0);
        assert!(nl.df0(0.9 * lo) < 0.0);
        assert!(nl.df0(1.1 * hi) < 0.0);
        assert!(nl.f0_nondecreasing_on(0.6, 7.0));
        assert!(!nl.f0_nondecreasing_on(0.3, 7.0));
        assert!(nl.satisfies_decay_beyond(hi));
        assert!(exemplar_monotonicity_interval(1.0, 0.5).is_none());
    }

    #[test]
    fn exemplar_is_bounded_and_increasing() {
        let nl = exemplar();
        for t in log_samples(1e-6, 1e9, 500) {
            assert!(nl.f(t) <= 2f64.exp());
            assert!(nl.df(t) > 0.0);
            assert!(nl.ftilde(t) >= 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let nl = exemplar();
        for t in [0.01, 0.3, 1.0, 5.0, 40.0] {
            let h = 1e-6 * t;
            let fd = |g: &dyn Fn(f64) -> f64| (g(t + h) - g(t - h)) / (2.0 * h);
            assert_relative_eq!(nl.df(t), fd(&|x| nl.f(x)), max_relative = 1e-7);
            assert_relative_eq!(nl.df0(t), fd(&|x| nl.f0(x)), max_relative = 1e-6);
            assert_relative_eq!(nl.dftilde(t), fd(&|x| nl.ftilde(x)), max_relative = 1e-6);
        }
    }

    #[test]
    fn shift_makes_ftilde_increasing() {
        let nl = Nonlinearity::exemplar(2.0, 1.0 / 3.0, 3.0).unwrap();
        let k = nl.k_shift().unwrap();
        assert!(k >= 1.0);
        let frozen =
            Nonlinearity::new(NonlinearityKind::Constant { value: 1.0 }, 0.5, 1.0).unwrap();
        assert_eq!(frozen.k_shift().unwrap(), 1.0);
    }

    #[test]
    fn validator_rejects_bad_families() {
        let q = 1.0 / 3.0;
        assert!(Nonlinearity::new(NonlinearityKind::Constant { value: 0.0 }, q, 1.0).is_err());
        // superlinear growth beyond t^(q+1)
        assert!(Nonlinearity::new(
            NonlinearityKind::Power {
                coef: 1.0,
                exponent: 2.0
            },
            q,
            1.0
        )
        .is_err());
        let p = Nonlinearity::new(
            NonlinearityKind::Power {
                coef: 1.0,
                exponent: 1.0,
            },
            q,
            1.0,
        )
        .unwrap();
        assert!(!p.satisfies_decay_beyond(10.0));
        assert!(Nonlinearity::exemplar(2.0, 1.5, 1.0).is_err());
        assert!(Nonlinearity::exemplar(2.0, 0.3, -1.0).is_err());
    }

    #[test]
    fn kind_round_trips_through_text() {
        for k in [
            NonlinearityKind::Exemplar { alpha: 2.5 },
            NonlinearityKind::Constant { value: 1.0 },
            NonlinearityKind::Power {
                coef: 0.5,
                exponent: 0.75,
            },
        ] {
            assert_eq!(k.to_string().parse::<NonlinearityKind>().unwrap(), k);
        }
        assert!("cubic:1".parse::<NonlinearityKind>().is_err());
    }

    proptest! {
        #[test]
        fn ftilde_nonnegative_and_monotone(alpha in 1.5f64..20.0, t in 1e-6f64..1e3, dt in 1e-6f64..10.0) {
            let nl = Nonlinearity::exemplar(alpha, 1.0 / 3.0, 1.0).unwrap();
            prop_assert!(nl.ftilde(t) >= 0.0);
            prop_assert!(nl.f(t + dt) >= nl.f(t));
        }
    }
}
