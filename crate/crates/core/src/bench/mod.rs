//! Predicted sharp constants, convergence studies and their reports.

mod corpus;

pub use corpus::{corpus, corpus_function, CorpusFunction, Factor, Term, Weight, ORACLE_ORDER};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::{
    local_poly, partition_for_budget, spec_from_closed_form, spec_from_km, LocalBlockSpec, SharedWeight,
};
use crate::blocks::{admissibility_stat_budgets, fmt_num, BlockPartition};
use crate::error::{Error, Result};
use crate::exec::{kahan_sum, Exec};
use crate::kfun::{cache_entries, cached, k_auto, KOptions};
use crate::norms::{partition_error, Exponent, QuadratureRule};
use crate::poly::{Evaluable, SmoothFunction};
use crate::proj::ProjectionOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartitionKind {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "adaptive-km")]
    AdaptiveKM,
    #[serde(rename = "adaptive-cf")]
    AdaptiveClosedForm,
}

impl PartitionKind {
    pub fn name(self) -> &'static str {
        match self {
            PartitionKind::Uniform => "uniform",
            PartitionKind::AdaptiveKM => "adaptive-km",
            PartitionKind::AdaptiveClosedForm => "adaptive-cf",
        }
    }
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PartitionKind::Uniform),
            "adaptive-km" => Ok(PartitionKind::AdaptiveKM),
            "adaptive-cf" => Ok(PartitionKind::AdaptiveClosedForm),
            other => Err(Error::Parse(format!("unknown partition kind {other:?} (uniform, adaptive-km, adaptive-cf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub kind: PartitionKind,
    /// cell budget
    pub budget: usize,
    pub n: usize,
    /// cells actually used
    pub cells: usize,
    pub error: f64,
    /// `N^{m/d} * error`
    pub scaled: f64,
    pub predicted: f64,
}

impl ConvergenceRecord {
    pub fn ratio(&self) -> f64 {
        self.scaled / self.predicted
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    pub k: KOptions,
    /// diameter cap for the modified error function
    pub max_diam: f64,
    pub exec: Exec,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { k: KOptions::default(), max_diam: 8.0, exec: Exec::Parallel }
    }
}

/// `||K(pi_x) Omega(x)||_{L_tau(R0)}` by tensor Gauss quadrature of `(K Omega)^tau`.
pub fn predicted_constant(
    f: &CorpusFunction,
    op: &ProjectionOperator,
    p: Exponent,
    weight: Option<&Weight>,
    opts: &KOptions,
    exec: Exec,
) -> Result<f64> {
    let d = f.dim();
    if op.dim() != d {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: d });
    }
    let m = op.m()?;
    let tau = p.tau(m, d);
    let dom = &f.domain;
    let key = format!(
        "predicted|{}|{:?}|{:?}|{op}|p={p}|w={}|q={}|grid={}",
        f.name,
        dom.lo(),
        dom.hi(),
        weight.map_or("none".to_string(), Weight::label),
        opts.settings.quad_order,
        opts.settings.grid_points
    );
    cached(key, || {
        let rule = QuadratureRule::gauss_legendre(dom, opts.settings.quad_order);
        let vals = exec.map_range(rule.len(), |i| -> Result<f64> {
            let x = rule.point(i);
            let k = k_auto(op, &local_poly(f, x, m)?, p, opts)?.value;
            let w = weight.map_or(1.0, |w| w.eval(x));
            Ok((k * w).abs().powf(tau))
        });
        let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok(kahan_sum(vals.iter().zip(rule.weights()).map(|(v, w)| v * w)).powf(1.0 / tau))
    })
}

/// Largest `n` with `n^d <= budget`.
pub fn uniform_index(budget: usize, d: usize) -> usize {
    let mut n = (budget as f64).powf(1.0 / d as f64).round() as usize;
    while n > 0 && n.checked_pow(d as u32).map_or(true, |v| v > budget) {
        n -= 1;
    }
    while (n + 1).checked_pow(d as u32).is_some_and(|v| v <= budget) {
        n += 1;
    }
    n
}

/// Local block spec for an adaptive study.
pub fn study_spec(
    f: &CorpusFunction,
    op: &ProjectionOperator,
    p: Exponent,
    kind: PartitionKind,
    weight: Option<&Weight>,
    opts: &StudyOptions,
) -> Result<LocalBlockSpec> {
    let shared: Arc<dyn SmoothFunction + Send + Sync> = Arc::new(f.clone());
    let w: Option<SharedWeight> = weight.map(|w| Arc::new(w.clone()) as SharedWeight);
    match kind {
        PartitionKind::Uniform => Err(Error::InvalidArgument("uniform studies have no block spec".into())),
        PartitionKind::AdaptiveKM => spec_from_km(shared, op, p, opts.max_diam, &f.domain, w, &opts.k),
        PartitionKind::AdaptiveClosedForm => {
            spec_from_closed_form(shared, op, p, &f.domain, w, &opts.k).map_err(|e| match e {
                Error::Precondition(msg) => Error::Precondition(format!(
                    "{}: closed-form adaptive study rejected ({msg}); rerun with kind adaptive-km",
                    f.name
                )),
                other => other,
            })
        }
    }
}

/// Records of one study plus the admissibility statistic of its partitions.
#[derive(Debug, Clone)]
pub struct Study {
    pub records: Vec<ConvergenceRecord>,
    pub admissibility: f64,
}

/// For each budget: build the partition, measure the error and compare with
/// the predicted constant. Uses the function's own weight when it has one.
pub fn run_study(
    f: &CorpusFunction,
    op: &ProjectionOperator,
    p: Exponent,
    budgets: &[usize],
    kind: PartitionKind,
    opts: &StudyOptions,
) -> Result<Study> {
    run_study_weighted(f, op, p, budgets, kind, f.weight.as_ref(), opts)
}

pub fn run_study_weighted(
    f: &CorpusFunction,
    op: &ProjectionOperator,
    p: Exponent,
    budgets: &[usize],
    kind: PartitionKind,
    weight: Option<&Weight>,
    opts: &StudyOptions,
) -> Result<Study> {
    if budgets.is_empty() {
        return Err(Error::InvalidArgument("no budgets given".into()));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("budgets must be strictly increasing".into()));
    }
    let d = f.dim();
    let m = op.m()?;
    let predicted = predicted_constant(f, op, p, weight, &opts.k, opts.exec)?;
    let spec = match kind {
        PartitionKind::Uniform => None,
        _ => Some(study_spec(f, op, p, kind, weight, opts)?),
    };
    let mut records = Vec::with_capacity(budgets.len());
    let mut parts: Vec<(usize, BlockPartition)> = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let (n, part) = match &spec {
            None => {
                let n = uniform_index(budget, d);
                if n == 0 {
                    return Err(Error::BudgetTooSmall { budget, min: 1 });
                }
                (n, crate::adapt::uniform_partition(&f.domain, n)?)
            }
            Some(s) => {
                let ap = partition_for_budget(s, budget, opts.exec)?;
                (ap.n, ap.partition)
            }
        };
        let wref = weight.map(|w| w as &dyn Evaluable);
        let error = partition_error(f, op, &part, p, wref, &opts.k.settings, opts.exec)?;
        let scaled = (budget as f64).powf(f64::from(m) / d as f64) * error;
        records.push(ConvergenceRecord { kind, budget, n, cells: part.len(), error, scaled, predicted });
        parts.push((budget, part));
    }
    let refs: Vec<(usize, &BlockPartition)> = parts.iter().map(|(b, p)| (*b, p)).collect();
    let admissibility = admissibility_stat_budgets(&refs)?;
    Ok(Study { records, admissibility })
}

/// Least-squares slope of `ln(error)` against `ln(N)`.
pub fn log_log_slope(records: &[ConvergenceRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        records.iter().filter(|r| r.error > 0.0).map(|r| ((r.budget as f64).ln(), r.error.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Lower bound for every kind, upper bound for closed-form adaptive runs,
/// and uniform-vs-adaptive dominance at shared budgets.
pub fn property_gates(records: &[ConvergenceRecord]) -> Vec<Gate> {
    let mut gates = Vec::new();
    let last_of = |kind: PartitionKind| records.iter().filter(|r| r.kind == kind).max_by_key(|r| r.budget);
    for kind in [PartitionKind::Uniform, PartitionKind::AdaptiveKM, PartitionKind::AdaptiveClosedForm] {
        let Some(r) = last_of(kind) else { continue };
        gates.push(Gate {
            name: format!("lower-bound/{kind}"),
            pass: r.scaled >= 0.95 * r.predicted,
            detail: format!("N={} ratio={:.6}", r.budget, r.ratio()),
        });
        if kind == PartitionKind::AdaptiveClosedForm {
            gates.push(Gate {
                name: format!("upper-bound/{kind}"),
                pass: r.scaled <= 1.15 * r.predicted,
                detail: format!("N={} ratio={:.6}", r.budget, r.ratio()),
            });
        }
    }
    for u in records.iter().filter(|r| r.kind == PartitionKind::Uniform) {
        for a in records.iter().filter(|r| r.kind != PartitionKind::Uniform && r.budget == u.budget) {
            gates.push(Gate {
                name: format!("dominance/{}@{}", a.kind, u.budget),
                pass: u.scaled >= a.scaled,
                detail: format!("uniform={:.6} adaptive={:.6}", u.scaled, a.scaled),
            });
        }
    }
    gates
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub summary: String,
}

/// CSV rows grouped by kind (uniform, adaptive-km, adaptive-cf) and sorted by
/// budget, plus a plain-text summary.
pub fn report(records: &[ConvergenceRecord], admissibility: &[(PartitionKind, f64)]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.budget.cmp(&b.budget)));

    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["kind", "N", "n", "error", "scaled", "predicted", "ratio"]).map_err(io)?;
    for r in &sorted {
        w.write_record([
            r.kind.name().to_string(),
            r.budget.to_string(),
            r.n.to_string(),
            fmt_num(r.error),
            fmt_num(r.scaled),
            fmt_num(r.predicted),
            fmt_num(r.ratio()),
        ])
        .map_err(io)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        .map_err(|e| Error::Io(e.to_string()))?;

    let mut summary = String::new();
    let mut kinds: Vec<PartitionKind> = sorted.iter().map(|r| r.kind).collect();
    kinds.dedup();
    for kind in kinds {
        let rows: Vec<ConvergenceRecord> = sorted.iter().filter(|r| r.kind == kind).cloned().collect();
        let last = rows.last().expect("non-empty group");
        summary.push_str(&format!(
            "{kind}: N={} n={} cells={} scaled={:.6} predicted={:.6} final ratio={:.6}",
            last.budget,
            last.n,
            last.cells,
            last.scaled,
            last.predicted,
            last.ratio()
        ));
        if let Some(s) = log_log_slope(&rows) {
            summary.push_str(&format!(" slope={s:.4}"));
        }
        if let Some((_, a)) = admissibility.iter().find(|(k, _)| *k == kind) {
            summary.push_str(&format!(" admissibility={a:.4}"));
        }
        summary.push('\n');
    }
    summary.push_str(&format!("cached constants: {}\n", cache_entries().len()));
    Ok(Report { csv, summary })
}
