//! Shared, immutable solver state for one problem instance.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::make_grid;
use crate::gridfn::GridFunction;
use crate::nonlinearity::Nonlinearity;
use crate::operator::{principal_eigenpair, EigenPair, GreenOperator};
use crate::problem::ProblemSpec;
use crate::singular::{solve_pure_singular_with, ContinuationSettings};

/// Operator, principal eigenpair, pure singular profile and nonlinearity for a spec.
///
/// The lambda-independent parts are reference counted, so [`SolverContext::with_lambda`]
/// is cheap and contexts can be shared across threads.
#[derive(Debug, Clone)]
pub struct SolverContext {
    op: Arc<GreenOperator>,
    spec: ProblemSpec,
    nl: Nonlinearity,
    k_shift: f64,
    eigen: Arc<EigenPair>,
    profile: Arc<GridFunction>,
    settings: ContinuationSettings,
}

impl SolverContext {
    /// Assembles everything from scratch.
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        Self::build(spec, None)
    }

    /// Like [`SolverContext::new`] but reuses a kernel cache directory when given.
    pub fn build(spec: &ProblemSpec, cache_dir: Option<&Path>) -> Result<Self> {
        spec.validate()?;
        let grid = make_grid(spec.n, spec.grading)?;
        let op = GreenOperator::assemble_cached(&grid, spec.s, cache_dir)?;
        Self::with_operator(Arc::new(op), spec)
    }

    /// Builds on an already assembled operator, which must match the spec's grid.
    pub fn with_operator(op: Arc<GreenOperator>, spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        if op.len() != spec.n || op.s() != spec.s {
            return Err(Error::config(format!(
                "operator (N = {}, s = {}) does not match spec (N = {}, s = {})",
                op.len(),
                op.s(),
                spec.n,
                spec.s
            )));
        }
        let settings = settings_for(spec);
        let eigen = Arc::new(principal_eigenpair(&op)?);
        let profile = Arc::new(solve_pure_singular_with(&op, spec.q, 1.0, &settings)?);
        let nl = spec.nonlinearity()?;
        let k_shift = nl.k_shift()?;
        Ok(SolverContext {
            op,
            spec: spec.clone(),
            nl,
            k_shift,
            eigen,
            profile,
            settings,
        })
    }

    /// Same instance at a different lambda.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let spec = self.spec.with_lambda(lambda);
        let nl = self.nl.with_lambda(lambda)?;
        Ok(SolverContext {
            spec,
            nl,
            k_shift: nl.k_shift()?,
            ..self.clone()
        })
    }

    pub fn op(&self) -> &GreenOperator {
        &self.op
    }

    pub fn op_arc(&self) -> Arc<GreenOperator> {
        Arc::clone(&self.op)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn nl(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    pub fn q(&self) -> f64 {
        self.spec.q
    }

    /// Shift making ft(t) + k t increasing.
    pub fn k_shift(&self) -> f64 {
        self.k_shift
    }

    /// lambda f(0), the coefficient of the singular term.
    pub fn c_sing(&self) -> f64 {
        self.spec.lambda * self.nl.f(0.0)
    }

    pub fn eigen(&self) -> &EigenPair {
        &self.eigen
    }

    /// Principal eigenfunction, sup norm 1.
    pub fn phi(&self) -> &GridFunction {
        &self.eigen.vector
    }

    /// Principal eigenvalue.
    pub fn lambda1(&self) -> f64 {
        self.eigen.value
    }

    /// Solution of w = K(w^(-q)).
    pub fn profile(&self) -> &GridFunction {
        &self.profile
    }

    pub fn settings(&self) -> &ContinuationSettings {
        &self.settings
    }

    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op.is_empty()
    }
}

/// Continuation schedule for a spec; inner solves are 100 times tighter than
/// the certification tolerance so fixed-point differences are meaningful.
pub fn settings_for(spec: &ProblemSpec) -> ContinuationSettings {
    ContinuationSettings {
        eps0: 1.0,
        ratio: 0.5,
        eps_min: spec.eps_min,
        tol: 1e-2 * spec.tol_residual,
    }
}
