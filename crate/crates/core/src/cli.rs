//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::{build_adaptive, partition_for_budget, uniform_partition};
use crate::bench::{
    corpus_function, property_gates, report, run_study_weighted, study_spec, uniform_index, CorpusFunction,
    PartitionKind, StudyOptions, Weight,
};
use crate::blocks::{admissibility_stat_budgets, fmt_num};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kfun::{
    c_even, c_odd, k_auto, k_closed_form, k_modified, k_numeric, k_star, load_cache, save_cache, signature,
    HomogeneousPoly, KOptions,
};
use crate::norms::{Exponent, NormSettings};
use crate::poly::Polynomial;
use crate::proj::ProjectionOperator;

pub const CACHE_ENV: &str = "BLOCKADAPT_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "blockadapt", version, about = "Sharp interpolation error constants and adaptive block partitions")]
pub struct Cli {
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// run every loop on the calling thread
    #[arg(long, global = true)]
    pub sequential: bool,
    /// JSON experiment config; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form constants C(p) or C(p, s) of an operator
    Constants(ConstantsArgs),
    /// K(pi) for one homogeneous polynomial
    Kfun(KfunArgs),
    /// Build one partition and write it as CSV
    Partition(PartitionArgs),
    /// Convergence study against the predicted constant
    Converge(ConvergeArgs),
    /// Reproduction degree, hypotheses and Lebesgue constant of an operator
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// operator descriptor, e.g. lagrange:equispaced:k=1:d=2
    #[arg(long)]
    pub op: Option<String>,
    /// dimension when the descriptor omits d=
    #[arg(long)]
    pub d: Option<usize>,
    /// exponent p (a number >= 1 or inf)
    #[arg(long)]
    pub p: Option<Exponent>,
    #[arg(long)]
    pub quad_order: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct KfunArgs {
    #[command(flatten)]
    pub common: Common,
    /// homogeneous polynomial, e.g. "X1^2 + 4*X2^2"
    #[arg(long)]
    pub poly: String,
    /// auto, numeric or closed-form
    #[arg(long, default_value = "auto")]
    pub method: String,
    /// diameter cap M; switches to the modified error function
    #[arg(long = "max-diam")]
    pub max_diam: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub common: Common,
    /// corpus function name
    #[arg(long = "fn")]
    pub function: Option<String>,
    /// uniform, adaptive-km or adaptive-cf
    #[arg(long)]
    pub kind: Option<String>,
    /// cell budget N
    #[arg(long, conflicts_with = "n")]
    pub budget: Option<usize>,
    /// construction index n
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "max-diam")]
    pub max_diam: Option<f64>,
    #[arg(long)]
    pub weight: Option<String>,
    /// blocks CSV destination (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "fn")]
    pub function: Option<String>,
    /// comma-separated partition kinds
    #[arg(long)]
    pub kind: Option<String>,
    /// comma-separated increasing cell budgets
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long = "max-diam")]
    pub max_diam: Option<f64>,
    #[arg(long)]
    pub weight: Option<String>,
    /// report CSV destination (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// report without checking the property gates
    #[arg(long)]
    pub no_gates: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
}

/// Flag values merged over the config file.
struct Resolved {
    cfg: ExperimentConfig,
    exec: Exec,
}

impl Resolved {
    fn settings(&self, c: &Common) -> NormSettings {
        let def = NormSettings::default();
        NormSettings {
            quad_order: c.quad_order.or(self.cfg.quad_order).unwrap_or(def.quad_order),
            grid_points: c.grid_points.or(self.cfg.grid_points).unwrap_or(def.grid_points),
        }
    }

    fn k_options(&self, c: &Common) -> KOptions {
        KOptions { settings: self.settings(c), ..KOptions::default() }
    }

    fn p(&self, c: &Common) -> Result<Exponent> {
        c.p.or(self.cfg.p).ok_or_else(|| Error::InvalidArgument("missing --p".into()))
    }

    fn operator(&self, c: &Common, default_d: Option<usize>) -> Result<ProjectionOperator> {
        let src =
            c.op.clone()
                .or_else(|| self.cfg.operator.clone())
                .ok_or_else(|| Error::InvalidArgument("missing --op".into()))?;
        ProjectionOperator::parse(&src, c.d.or(default_d))
    }

    fn function(&self, name: &Option<String>) -> Result<CorpusFunction> {
        let name = name
            .clone()
            .or_else(|| self.cfg.function.clone())
            .ok_or_else(|| Error::InvalidArgument("missing --fn".into()))?;
        let f = corpus_function(&name)?;
        match &self.cfg.domain {
            Some(dom) => f.on_domain(dom.block()?),
            None => Ok(f),
        }
    }

    fn weight(&self, flag: &Option<String>, f: &CorpusFunction) -> Result<Option<Weight>> {
        match flag.clone().or_else(|| self.cfg.weight.clone()) {
            Some(w) if w == "none" => Ok(None),
            Some(w) => Weight::by_name(&w, f.domain.dim()).map(Some),
            None => Ok(f.weight.clone()),
        }
    }

    fn kinds(&self, flag: &Option<String>) -> Result<Vec<PartitionKind>> {
        let src = flag
            .clone()
            .or_else(|| self.cfg.kind.clone())
            .ok_or_else(|| Error::InvalidArgument("missing --kind".into()))?;
        let mut kinds = src.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<PartitionKind>>>()?;
        kinds.sort();
        kinds.dedup();
        Ok(kinds)
    }

    fn output(&self, flag: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.cfg.output.as_ref().map(PathBuf::from))
    }

    fn study_options(&self, c: &Common, max_diam: Option<f64>) -> StudyOptions {
        StudyOptions { k: self.k_options(c), max_diam: max_diam.or(self.cfg.max_diam).unwrap_or(8.0), exec: self.exec }
    }
}

/// Parses `argv` and runs the chosen subcommand. Returns the process exit
/// code: 0 on success, 2 on bad input, 1 on runtime failure.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        #[cfg(feature = "parallel")]
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let r = Resolved { cfg, exec };

    let cache = std::env::var_os(CACHE_ENV).map(|d| Path::new(&d).join("constants.json"));
    if let Some(path) = &cache {
        load_cache(path)?;
    }
    let code = match &cli.command {
        Command::Constants(a) => constants(&r, a, out)?,
        Command::Kfun(a) => kfun(&r, a, out)?,
        Command::Partition(a) => partition(&r, a, out, err)?,
        Command::Converge(a) => converge(&r, a, out, err)?,
        Command::Verify(a) => verify(&r, a, out)?,
    };
    if let Some(path) = &cache {
        save_cache(path)?;
    }
    Ok(code)
}

fn emit(dest: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match dest {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => out.write_all(text.as_bytes()).map_err(Error::from),
    }
}

fn constants(r: &Resolved, a: &ConstantsArgs, out: &mut dyn Write) -> Result<i32> {
    let op = r.operator(&a.common, None)?;
    let p = r.p(&a.common)?;
    let opts = r.k_options(&a.common);
    let m = op.m()?;
    let mut text = String::from("constant,value\n");
    if m % 2 == 1 {
        text.push_str(&format!("C({p}),{}\n", fmt_num(c_odd(&op, p, &opts)?)));
    } else {
        for s in 0..=op.dim() {
            text.push_str(&format!("\"C({p},{s})\",{}\n", fmt_num(c_even(&op, p, s, &opts)?)));
        }
    }
    emit(None, &text, out)?;
    Ok(0)
}

fn kfun(r: &Resolved, a: &KfunArgs, out: &mut dyn Write) -> Result<i32> {
    let op = r.operator(&a.common, None)?;
    let p = r.p(&a.common)?;
    let opts = r.k_options(&a.common);
    let poly = Polynomial::parse(op.dim(), &a.poly)?;
    let pi = HomogeneousPoly::new(poly, op.m()?)?;
    let res = match (a.max_diam, a.method.as_str()) {
        (Some(m), _) => k_modified(&op, &pi, p, m, &opts)?,
        (None, "auto") => k_auto(&op, &pi, p, &opts)?,
        (None, "numeric") => k_numeric(&op, &pi, p, &opts)?,
        (None, "closed-form") => k_closed_form(&op, &pi, p, &opts)?,
        (None, other) => return Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
    };
    let scales =
        res.scales.as_ref().map_or(String::new(), |s| s.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(";"));
    let text = format!(
        "value,method,scales,signature,k_star,degenerate\n{},{},{},{},{},{}\n",
        fmt_num(res.value),
        res.method.name(),
        scales,
        signature(&pi),
        fmt_num(k_star(&pi)),
        res.degenerate
    );
    emit(None, &text, out)?;
    Ok(0)
}

fn partition(r: &Resolved, a: &PartitionArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let f = r.function(&a.function)?;
    let op = r.operator(&a.common, Some(f.domain.dim()))?;
    let p = r.p(&a.common)?;
    let kinds = r.kinds(&a.kind)?;
    let [kind] = kinds.as_slice() else {
        return Err(Error::InvalidArgument("partition takes exactly one --kind".into()));
    };
    let budget = a.budget.or_else(|| r.cfg.budgets.as_ref().and_then(|b| b.last().copied()));
    let opts = r.study_options(&a.common, a.max_diam);
    let weight = r.weight(&a.weight, &f)?;
    let d = f.domain.dim();

    let (n, part, part1, part2) = match kind {
        PartitionKind::Uniform => {
            let n = match (a.n, budget) {
                (Some(n), _) => n,
                (None, Some(b)) => uniform_index(b, d),
                (None, None) => return Err(Error::InvalidArgument("give --budget or --n".into())),
            };
            let part = uniform_partition(&f.domain, n)?;
            let ids: Vec<usize> = (0..part.len()).collect();
            (n, part, ids, Vec::new())
        }
        _ => {
            let spec = study_spec(&f, &op, p, *kind, weight.as_ref(), &opts)?;
            let ap = match (a.n, budget) {
                (Some(n), _) => build_adaptive(&spec, n, r.exec)?,
                (None, Some(b)) => partition_for_budget(&spec, b, r.exec)?,
                (None, None) => return Err(Error::InvalidArgument("give --budget or --n".into())),
            };
            (ap.n, ap.partition, ap.part1, ap.part2)
        }
    };
    let mut blocks = Vec::new();
    part.write_csv(&mut blocks)?;
    let blocks = String::from_utf8(blocks).map_err(|e| Error::Io(e.to_string()))?;
    let max_of = |ids: &[usize]| ids.iter().map(|&i| part.cells()[i].diam()).fold(0.0, f64::max);
    let adm = admissibility_stat_budgets(&[(budget.unwrap_or(part.len()).max(part.len()), &part)])?;
    let stats = format!(
        "n,cells,part1,part2,max_diam_part1,max_diam_part2,admissibility\n{n},{},{},{},{},{},{}\n",
        part.len(),
        part1.len(),
        part2.len(),
        fmt_num(max_of(&part1)),
        fmt_num(max_of(&part2)),
        fmt_num(adm)
    );
    match r.output(&a.out) {
        Some(path) => {
            emit(Some(&path), &blocks, out)?;
            emit(None, &stats, out)?;
        }
        None => {
            emit(None, &blocks, out)?;
            err.write_all(stats.as_bytes())?;
        }
    }
    Ok(0)
}

fn converge(r: &Resolved, a: &ConvergeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let f = r.function(&a.function)?;
    let op = r.operator(&a.common, Some(f.domain.dim()))?;
    let p = r.p(&a.common)?;
    let kinds = r.kinds(&a.kind)?;
    let budgets = a
        .budgets
        .clone()
        .or_else(|| r.cfg.budgets.clone())
        .ok_or_else(|| Error::InvalidArgument("missing --budgets".into()))?;
    let opts = r.study_options(&a.common, a.max_diam);
    let weight = r.weight(&a.weight, &f)?;

    let mut records = Vec::new();
    let mut adm = Vec::new();
    for kind in kinds {
        let st = run_study_weighted(&f, &op, p, &budgets, kind, weight.as_ref(), &opts)?;
        records.extend(st.records);
        adm.push((kind, st.admissibility));
    }
    let rep = report(&records, &adm)?;
    let mut summary = rep.summary.clone();
    let mut pass = true;
    if !a.no_gates {
        for g in property_gates(&records) {
            pass &= g.pass;
            summary.push_str(&format!("gate {}: {} ({})\n", g.name, if g.pass { "pass" } else { "FAIL" }, g.detail));
        }
    }
    match r.output(&a.out) {
        Some(path) => {
            emit(Some(&path), &rep.csv, out)?;
            emit(None, &summary, out)?;
        }
        None => {
            emit(None, &rep.csv, out)?;
            err.write_all(summary.as_bytes())?;
        }
    }
    Ok(if pass { 0 } else { 1 })
}

fn verify(r: &Resolved, a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let op = r.operator(&a.common, None)?;
    let h = op.check_hypotheses();
    let mut text = String::from("property,value\n");
    text.push_str(&format!("operator,{}\n", op.descriptor()));
    match op.detect_k() {
        Ok(k) => text.push_str(&format!("k,{k}\nm,{}\n", k + 1)),
        Err(e) => text.push_str(&format!("k,\"{e}\"\n")),
    }
    text.push_str(&format!(
        "H_pm,{}\nH_sigma,{}\nH_star,{}\nH_star_star,{}\n",
        h.h_pm, h.h_sigma, h.h_star, h.h_star_star
    ));
    text.push_str(&format!("lebesgue_estimate,{}\n", fmt_num(op.operator_norm_estimate())));
    emit(None, &text, out)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("blockadapt").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn constants_bilinear() {
        let (code, out, _) = call(&["constants", "--op", "lagrange:equispaced:k=1:d=2", "--p", "inf"]);
        assert_eq!(code, 0);
        let vals: Vec<f64> = out.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(vals.len(), 3);
        for (v, e) in vals.iter().zip([0.5, 0.25, 0.5]) {
            assert!((v - e).abs() < 1e-4, "{out}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(call(&["verify", "--bogus"]).0, 2);
        assert_eq!(call(&["kfun", "--op", "nope:k=1:d=2", "--p", "inf", "--poly", "X1^2"]).0, 2);
        assert_eq!(call(&["--help"]).0, 0);
    }

    #[test]
    fn verify_l2() {
        let (code, out, _) = call(&["verify", "--op", "l2:Pk:k=1:d=2"]);
        assert_eq!(code, 0);
        assert!(out.contains("H_star,false"), "{out}");
    }
}
