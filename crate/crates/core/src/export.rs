//! CSV and JSON serialization of solver outputs and the audit of exported
//! branches. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::branch::{BifurcationBranch, BranchRow, RowFlag, UniquenessReport};
use crate::context::SolverContext;
use crate::error::{Error, Result};
use crate::gridfn::GridFunction;
use crate::multiplicity::SolutionSet;
use crate::problem::ProblemSpec;
use crate::semipositone::Branch;
use crate::singular::EpsLevel;
use crate::tmap::residual_p;

pub const BRANCH_CSV_HEADER: &str = "lambda,kind,sup_norm,residual,cone_inf,flag";

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn branch_csv(branch: &BifurcationBranch) -> String {
    let mut out = String::from(BRANCH_CSV_HEADER);
    out.push('\n');
    for r in &branch.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.lambda),
            r.kind.as_str(),
            fmt_f64(r.sup_norm),
            fmt_f64(r.residual),
            fmt_f64(r.cone_inf),
            r.flag.as_str()
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRecord {
    pub lambda: f64,
    pub kind: String,
    pub sup_norm: Option<f64>,
    pub residual: Option<f64>,
    pub cone_inf: Option<f64>,
    pub flag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn row_record(r: &BranchRow, include_solutions: bool) -> RowRecord {
    RowRecord {
        lambda: r.lambda,
        kind: r.kind.as_str().to_string(),
        sup_norm: finite(r.sup_norm),
        residual: finite(r.residual),
        cone_inf: finite(r.cone_inf),
        flag: r.flag.as_str().to_string(),
        message: r.message.clone(),
        values: if include_solutions {
            r.solution.as_ref().map(|u| u.values().to_vec())
        } else {
            None
        },
    }
}

/// JSON export of a branch. The problem is embedded in `key = value` form so
/// an audit can rebuild it.
pub fn branch_json(
    branch: &BifurcationBranch,
    spec: &ProblemSpec,
    include_solutions: bool,
) -> Value {
    let rows: Vec<RowRecord> = branch
        .rows
        .iter()
        .map(|r| row_record(r, include_solutions))
        .collect();
    json!({
        "problem": spec.to_config_string(),
        "window": branch.window,
        "empirical_lambda_star": branch.empirical_lambda_star,
        "rows": rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub rows: usize,
    pub checked: usize,
    pub max_residual: f64,
    /// Rows flagged ok whose recomputed residual exceeds the tolerance.
    pub rejected: Vec<usize>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.rejected.is_empty()
    }
}

/// The problem embedded by [`branch_json`], if the document carries one.
pub fn embedded_spec(text: &str) -> Result<Option<ProblemSpec>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    match doc.get("problem") {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(cfg)) => ProblemSpec::from_config_str(cfg).map(Some),
        Some(_) => Err(Error::Format("`problem` must be a string".into())),
    }
}

/// Re-validates residual_P of every ok row that carries solution values.
///
/// `ctx` must use the grid of the exported run; its lambda is replaced per row.
pub fn audit_branch_json(ctx: &SolverContext, text: &str) -> Result<AuditReport> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let rows: Vec<RowRecord> =
        serde_json::from_value(doc.get("rows").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Format(format!("rows: {e}")))?;
    let tol = ctx.spec().tol_residual;
    let mut report = AuditReport {
        rows: rows.len(),
        checked: 0,
        max_residual: 0.0,
        rejected: Vec::new(),
    };
    for (i, row) in rows.iter().enumerate() {
        if row.flag != RowFlag::Ok.as_str() {
            continue;
        }
        let Some(values) = &row.values else { continue };
        let c = ctx.with_lambda(row.lambda)?;
        let u = GridFunction::new(values.clone());
        let residual = residual_p(&c, &u)?;
        report.checked += 1;
        report.max_residual = report.max_residual.max(residual);
        if !(residual <= tol) {
            report.rejected.push(i);
        }
    }
    Ok(report)
}

pub fn eps_trace_csv(trace: &[EpsLevel]) -> String {
    let mut out = String::from("eps,sup_norm,energy\n");
    for l in trace {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(l.eps),
            fmt_f64(l.sup_norm),
            fmt_f64(l.energy)
        );
    }
    out
}

pub fn semipositone_csv(branch: &Branch) -> String {
    let mut out = String::from("theta,sup_norm,residual,cone_inf\n");
    for p in &branch.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p.theta),
            fmt_f64(p.v.sup_norm()),
            fmt_f64(p.residual),
            fmt_f64(p.cone_inf)
        );
    }
    out
}

pub fn uniqueness_csv(report: &UniquenessReport) -> String {
    let mut out =
        String::from("lambda,min_sup,max_sup,gap,unique,uniqueness_constant,lower_bound_margin\n");
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(e.lambda),
            fmt_f64(e.min_sup),
            fmt_f64(e.max_sup),
            fmt_f64(e.gap),
            e.unique,
            fmt_f64(e.uniqueness_constant),
            fmt_f64(e.lower_bound_margin)
        );
    }
    out
}

pub fn solution_set_json(set: &SolutionSet, include_solutions: bool) -> Value {
    let solutions: Vec<Value> = set
        .solutions()
        .into_iter()
        .zip(&set.residuals)
        .map(|((kind, u), res)| {
            let mut v = json!({
                "kind": kind.as_str(),
                "sup_norm": u.sup_norm(),
                "residual": res,
            });
            if include_solutions {
                v["values"] = json!(u.values());
            }
            v
        })
        .collect();
    json!({
        "lambda": set.lambda,
        "window": set.window,
        "a": set.barriers.a,
        "third_solution_found": set.u3.is_some(),
        "separations": set.separations,
        "solutions": solutions,
    })
}

/// Columns x, then one column per named grid function.
pub fn profiles_csv(nodes: &[f64], columns: &[(&str, &GridFunction)]) -> String {
    let mut out = String::from("x");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, x) in nodes.iter().enumerate() {
        out.push_str(&fmt_f64(*x));
        for (_, u) in columns {
            out.push(',');
            out.push_str(&fmt_f64(u[i]));
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -0.0, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn eps_trace_layout() {
        let csv = eps_trace_csv(&[EpsLevel {
            eps: 0.5,
            sup_norm: 1.25,
            energy: -2.0,
        }]);
        assert_eq!(csv, "eps,sup_norm,energy\n0.5,1.25,-2.0\n");
    }
}
