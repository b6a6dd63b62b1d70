//! Problem instances and their flat `key = value` configuration format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grading;
use crate::nonlinearity::{exemplar_monotonicity_interval, Nonlinearity, NonlinearityKind};

/// Full description of one instance of the singular problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Fractional order, in (0, 1/2).
    pub s: f64,
    /// Singularity exponent, in (0, 1).
    pub q: f64,
    pub lambda: f64,
    /// Parameter of the exemplar nonlinearity.
    pub alpha: f64,
    /// Interval on which f(u)/u^q is required to be nondecreasing.
    pub sigma1: f64,
    pub sigma2: f64,
    /// Threshold beyond which f(u)/u^q decreases; derived from the exemplar when absent.
    pub alpha_f5: Option<f64>,
    /// Nonlinearity override; the exemplar with `alpha` when absent.
    pub nonlinearity: Option<NonlinearityKind>,
    /// Interior grid nodes.
    pub n: usize,
    pub grading: Grading,
    /// Radius of the ball carrying the indicator forcing.
    pub radius: f64,
    pub tol_residual: f64,
    pub tol_order: f64,
    pub eps_min: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            s: 0.25,
            q: 1.0 / 3.0,
            lambda: 1.0,
            alpha: 2.0,
            sigma1: 0.6,
            sigma2: 7.0,
            alpha_f5: None,
            nonlinearity: None,
            n: 256,
            grading: Grading::Chebyshev,
            radius: 0.5,
            tol_residual: 1e-8,
            tol_order: 1e-7,
            eps_min: 1e-8,
        }
    }
}

const KEYS: &[&str] = &[
    "s",
    "q",
    "lambda",
    "alpha",
    "sigma1",
    "sigma2",
    "alpha_f5",
    "nonlinearity",
    "N",
    "grading",
    "radius",
    "tol_residual",
    "tol_order",
    "eps_min",
];

impl ProblemSpec {
    pub fn nonlinearity_kind(&self) -> NonlinearityKind {
        self.nonlinearity
            .unwrap_or(NonlinearityKind::Exemplar { alpha: self.alpha })
    }

    /// The validated nonlinearity at this spec's lambda.
    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        Nonlinearity::new(self.nonlinearity_kind(), self.q, self.lambda)
    }

    /// Decay threshold for f(u)/u^q: the configured value, or the exemplar's
    /// upper monotonicity endpoint.
    pub fn alpha_f5(&self) -> Option<f64> {
        self.alpha_f5.or_else(|| match self.nonlinearity_kind() {
            NonlinearityKind::Exemplar { alpha } => {
                exemplar_monotonicity_interval(alpha, self.q).map(|(_, hi)| hi)
            }
            _ => None,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        ProblemSpec {
            lambda,
            ..self.clone()
        }
    }

    /// Checks every parameter range and samples f(u)/u^q on (sigma1, sigma2).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.s > 0.0 && self.s < 0.5) {
            return bad(format!("s must lie in (0, 1/2), got {}", self.s));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q must lie in (0, 1), got {}", self.q));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.nonlinearity.is_none() && !(self.alpha > 4.0 * self.q) {
            return bad(format!(
                "alpha must exceed 4q = {}, got {}",
                4.0 * self.q,
                self.alpha
            ));
        }
        if !(self.sigma1 > 0.0 && self.sigma1 < self.sigma2 && self.sigma2.is_finite()) {
            return bad(format!(
                "need 0 < sigma1 < sigma2, got ({}, {})",
                self.sigma1, self.sigma2
            ));
        }
        if !(self.radius > 0.0 && self.radius < 1.0) {
            return bad(format!("radius must lie in (0, 1), got {}", self.radius));
        }
        for (name, v) in [
            ("tol_residual", self.tol_residual),
            ("tol_order", self.tol_order),
            ("eps_min", self.eps_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.n < crate::grid::MIN_NODES {
            return bad(format!(
                "N must be at least {}, got {}",
                crate::grid::MIN_NODES,
                self.n
            ));
        }
        let nl = self.nonlinearity()?;
        // a constant f is admitted as the frozen reference case; the barrier
        // construction rejects it on its own
        let frozen = matches!(nl.kind(), NonlinearityKind::Constant { .. });
        if !frozen && !nl.f0_nondecreasing_on(self.sigma1, self.sigma2) {
            return bad(format!(
                "f(u)/u^q is not nondecreasing on ({}, {})",
                self.sigma1, self.sigma2
            ));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut spec = ProblemSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected key = value", lineno + 1))
            })?;
            spec.set(key.trim(), value.trim())
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    /// Sets one configuration key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::config(format!("`{key}`: `{value}` is not a number")))
        };
        match key {
            "s" => self.s = num()?,
            "q" => self.q = num()?,
            "lambda" => self.lambda = num()?,
            "alpha" => self.alpha = num()?,
            "sigma1" => self.sigma1 = num()?,
            "sigma2" => self.sigma2 = num()?,
            "alpha_f5" => self.alpha_f5 = Some(num()?),
            "nonlinearity" => self.nonlinearity = Some(value.parse()?),
            "N" | "n" => {
                self.n = value
                    .parse()
                    .map_err(|_| Error::config(format!("`N`: `{value}` is not a count")))?
            }
            "grading" => self.grading = value.parse()?,
            "radius" => self.radius = num()?,
            "tol_residual" => self.tol_residual = num()?,
            "tol_order" => self.tol_order = num()?,
            "eps_min" => self.eps_min = num()?,
            _ => {
                return Err(Error::config(format!(
                    "unknown key `{key}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Serializes to the `key = value` format, floats in shortest round-trip form.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("s", format!("{:?}", self.s));
        line("q", format!("{:?}", self.q));
        line("lambda", format!("{:?}", self.lambda));
        line("alpha", format!("{:?}", self.alpha));
        line("sigma1", format!("{:?}", self.sigma1));
        line("sigma2", format!("{:?}", self.sigma2));
        if let Some(a) = self.alpha_f5 {
            line("alpha_f5", format!("{a:?}"));
        }
        if let Some(k) = self.nonlinearity {
            line("nonlinearity", k.to_string());
        }
        line("N", self.n.to_string());
        line("grading", self.grading.to_string());
        line("radius", format!("{:?}", self.radius));
        line("tol_residual", format!("{:?}", self.tol_residual));
        line("tol_order", format!("{:?}", self.tol_order));
        line("eps_min", format!("{:?}", self.eps_min));
        out
    }
}
