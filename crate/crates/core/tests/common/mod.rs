#![allow(dead_code)]

use fracsing::{ProblemSpec, SolverContext};

/// Default exemplar (alpha = 2, sigma = (0.6, 7)) at the given resolution.
pub fn default_spec(n: usize) -> ProblemSpec {
    ProblemSpec {
        n,
        ..ProblemSpec::default()
    }
}

/// Exemplar alpha = 10 with sigma = (2, 60), whose lambda window is nonempty.
pub fn wide_spec(n: usize) -> ProblemSpec {
    ProblemSpec {
        n,
        alpha: 10.0,
        sigma1: 2.0,
        sigma2: 60.0,
        ..ProblemSpec::default()
    }
}

pub fn ctx(spec: &ProblemSpec, lambda: f64) -> SolverContext {
    SolverContext::new(&spec.with_lambda(lambda)).expect("context")
}
