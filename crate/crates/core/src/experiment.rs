//! Plan runner: for every (method, seed, sweep value) cell, generate the
//! bundle, train, score the test splits, and record detection metrics plus
//! the held-out HSIC between inlier and outlier features.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_gaussian_bundle, BundleConfig, DatasetBundle};
use crate::encoder::{train, EncoderParams, Objective, TrainConfig};
use crate::error::{Error, Result};
use crate::independence::hsic_biased;
use crate::kernels::KernelSpec;
use crate::metrics::{evaluate, label_scores, MetricsReport};
use crate::numerics::derive_seed;
use crate::scoring::{class_means, class_means_centered, score_features, ScoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Sigma,
    DistortN,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Sigma => "sigma",
            SweepParam::DistortN => "distort_n",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "sigma" => Ok(SweepParam::Sigma),
            "distort_n" => Ok(SweepParam::DistortN),
            other => Err(Error::Format(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub objective: Objective,
    pub score: ScoreKind,
    /// Defaults to `objective+score`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Score with globally centered class means (extension, off by default).
    #[serde(default)]
    pub cor_centered: bool,
}

impl MethodSpec {
    pub fn new(objective: Objective, score: ScoreKind) -> Self {
        Self {
            objective,
            score,
            name: None,
            kernel: None,
            lambda: None,
            cor_centered: false,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = Some(kernel);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}+{}", self.objective, self.score))
    }
}

/// Dependence weight used for HOOD with bounded kernels (RBF, IMQ) in the
/// reference comparison. The HSIC estimate is at most `1/N` and shrinks to
/// about `1e-4` once outlier features contract, so the unit weight leaves the
/// term inert over a 50-epoch desk-scale run.
pub const HOOD_REFERENCE_LAMBDA: f64 = 100.0;

/// Weight for HOOD with the unbounded linear kernel, whose HSIC values sit
/// two to three orders of magnitude above the bounded kernels.
pub const HOOD_LINEAR_LAMBDA: f64 = 0.1;

/// Outlier-exposure weight from the original outlier-exposure recipe.
pub const OE_REFERENCE_LAMBDA: f64 = 0.5;

/// HOOD (scored with COR and MSP) against the outlier-exposure, MMD and
/// plain cross-entropy baselines.
pub fn reference_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::new(Objective::Hood, ScoreKind::Cor).with_lambda(HOOD_REFERENCE_LAMBDA),
        MethodSpec::new(Objective::Hood, ScoreKind::Msp).with_lambda(HOOD_REFERENCE_LAMBDA),
        MethodSpec::new(Objective::OeUniform, ScoreKind::Msp).with_lambda(OE_REFERENCE_LAMBDA),
        MethodSpec::new(Objective::Mmd, ScoreKind::Msp).with_lambda(1.0),
        MethodSpec::new(Objective::CeOnly, ScoreKind::Msp),
    ]
}

/// HOOD+COR with the linear and IMQ kernels.
pub fn kernel_ablation_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::new(Objective::Hood, ScoreKind::Cor)
            .named("hood_linear+cor")
            .with_kernel(KernelSpec::linear())
            .with_lambda(HOOD_LINEAR_LAMBDA),
        MethodSpec::new(Objective::Hood, ScoreKind::Cor)
            .named("hood_imq+cor")
            .with_kernel(KernelSpec::imq(1.0))
            .with_lambda(HOOD_REFERENCE_LAMBDA),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub bundle: BundleConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub threads: usize,
}

impl ExperimentPlan {
    pub fn new(bundle: BundleConfig, train: TrainConfig, methods: Vec<MethodSpec>, seeds: Vec<u64>) -> Self {
        Self {
            bundle,
            train,
            methods,
            seeds,
            sweep: None,
            threads: 0,
        }
    }

    /// Default bundle and training config with [`reference_methods`] over
    /// seeds `0..5`.
    pub fn reference() -> Self {
        Self::new(BundleConfig::default(), TrainConfig::default(), reference_methods(), (0..5).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::contract("plan needs at least one method"));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("plan needs at least one seed"));
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::contract(format!("duplicate method name `{}`", w[0])));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate seed in plan"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::contract("sweep needs at least one value"));
            }
            if sweep.values.windows(2).any(|w| w[0] >= w[1]) || sweep.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("sweep values must be finite and strictly increasing"));
            }
            if sweep.param == SweepParam::DistortN {
                if self.bundle.fake_ood.is_none() {
                    return Err(Error::contract("distort_n sweep requires bundle.fake_ood"));
                }
                if sweep.values.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::contract("distort_n values must be non-negative integers"));
                }
            }
        }
        for v in self.sweep_points() {
            let bundle = self.bundle_config(0, v)?;
            bundle.validate()?;
            for m in &self.methods {
                self.train_config(m, 0, v).validate()?;
            }
        }
        Ok(())
    }

    fn sweep_points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    /// Bundle for one seed; every method sees the same bundle.
    fn bundle_config(&self, seed: u64, sweep_value: Option<f64>) -> Result<BundleConfig> {
        let mut cfg = self.bundle.clone();
        cfg.seed = derive_seed(self.bundle.seed, &[seed]);
        if let (Some(s), Some(v)) = (&self.sweep, sweep_value) {
            if s.param == SweepParam::DistortN {
                let fake = cfg
                    .fake_ood
                    .as_mut()
                    .ok_or_else(|| Error::contract("distort_n sweep requires bundle.fake_ood"))?;
                fake.strength_n = v as usize;
            }
        }
        Ok(cfg)
    }

    fn train_config(&self, method: &MethodSpec, seed: u64, sweep_value: Option<f64>) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.objective = method.objective;
        cfg.seed = derive_seed(self.train.seed, &[seed]);
        if let Some(k) = method.kernel {
            cfg.kernel = k;
        }
        if let Some(l) = method.lambda {
            cfg.lambda = l;
        }
        if let (Some(s), Some(v)) = (&self.sweep, sweep_value) {
            match s.param {
                SweepParam::Lambda => cfg.lambda = v,
                SweepParam::Sigma => cfg.kernel.sigma = v,
                SweepParam::DistortN => {}
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub sweep_param: Option<SweepParam>,
    pub sweep_value: Option<f64>,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub final_hsic: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

const HEADER: [&str; 8] = ["method", "seed", "sweep_param", "sweep_value", "fpr95", "auroc", "aupr", "final_hsic"];

impl ResultTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.seed.to_string(),
                r.sweep_param.map(|p| p.name().to_string()).unwrap_or_default(),
                r.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
                r.fpr95.to_string(),
                r.auroc.to_string(),
                r.aupr.to_string(),
                r.final_hsic.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parses CSV written by [`ResultTable::to_csv`]; `#` lines are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        if r.headers()?.iter().ne(HEADER) {
            return Err(Error::Format("unexpected result table header".into()));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Format(format!("bad {what} `{s}`")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(ResultRow {
                method: rec[0].to_string(),
                seed: rec[1].parse().map_err(|_| Error::Format(format!("bad seed `{}`", &rec[1])))?,
                sweep_param: if rec[2].is_empty() { None } else { Some(SweepParam::parse(&rec[2])?) },
                sweep_value: if rec[3].is_empty() { None } else { Some(num(&rec[3], "sweep_value")?) },
                fpr95: num(&rec[4], "fpr95")?,
                auroc: num(&rec[5], "auroc")?,
                aupr: num(&rec[6], "aupr")?,
                final_hsic: num(&rec[7], "final_hsic")?,
            });
        }
        Ok(Self { rows })
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Mean AUROC of one method over all its rows.
    pub fn mean_auroc(&self, method: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(method).map(|r| r.auroc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Everything a single trained cell produces.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub params: EncoderParams,
    pub report: MetricsReport,
    pub final_hsic: f64,
    pub scores_in: Vec<f64>,
    pub scores_out: Vec<f64>,
}

/// Scores both test splits of `bundle` with `params`.
pub fn score_bundle(
    params: &EncoderParams,
    bundle: &DatasetBundle,
    kind: ScoreKind,
    cor_centered: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bundle.test_in.rows() == 0 || bundle.test_out.rows() == 0 {
        return Err(Error::contract("test split is empty"));
    }
    let z_train = params.forward(&bundle.train_in)?;
    let means = if cor_centered {
        class_means_centered(&z_train, &bundle.train_labels, bundle.classes)?
    } else {
        class_means(&z_train, &bundle.train_labels, bundle.classes)?
    };
    let s_in = score_features(kind, &params.forward(&bundle.test_in)?, params, &means)?;
    let s_out = score_features(kind, &params.forward(&bundle.test_out)?, params, &means)?;
    if s_in.iter().chain(&s_out).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("detection scores".into()));
    }
    Ok((s_in, s_out))
}

/// HSIC between the features of the first `n` held-out inliers and outliers,
/// `n` being the smaller split size.
pub fn held_out_hsic(params: &EncoderParams, bundle: &DatasetBundle, spec: &KernelSpec) -> Result<f64> {
    let n = bundle.test_in.rows().min(bundle.test_out.rows());
    let z_in = params.forward(&bundle.test_in.slice_rows(0, n))?;
    let z_out = params.forward(&bundle.test_out.slice_rows(0, n))?;
    Ok(hsic_biased(&z_in, &z_out, spec)?.value)
}

fn evaluate_params(params: EncoderParams, bundle: &DatasetBundle, method: &MethodSpec, kernel: &KernelSpec) -> Result<CellOutput> {
    let (scores_in, scores_out) = score_bundle(&params, bundle, method.score, method.cor_centered)?;
    let report = evaluate(&label_scores(&scores_in, &scores_out))?;
    let final_hsic = held_out_hsic(&params, bundle, kernel)?;
    Ok(CellOutput {
        params,
        report,
        final_hsic,
        scores_in,
        scores_out,
    })
}

/// Runs every method for one seed and sweep point. Methods that share a
/// training configuration reuse one trained encoder.
fn run_seed_point(plan: &ExperimentPlan, seed: u64, sweep_value: Option<f64>) -> Result<Vec<(usize, CellOutput)>> {
    let bundle = make_gaussian_bundle(&plan.bundle_config(seed, sweep_value)?)
        .map_err(|e| e.with_context(format!("bundle for seed {seed}")))?;
    let mut trained: Vec<(TrainConfig, EncoderParams)> = Vec::new();
    let mut out = Vec::with_capacity(plan.methods.len());
    for (mi, method) in plan.methods.iter().enumerate() {
        let ctx = |e: Error| e.with_context(format!("method {}, seed {seed}", method.label()));
        let cfg = plan.train_config(method, seed, sweep_value);
        let params = match trained.iter().find(|(c, _)| *c == cfg) {
            Some((_, p)) => p.clone(),
            None => {
                let p = train(&cfg, &bundle).map_err(ctx)?.params;
                trained.push((cfg.clone(), p.clone()));
                p
            }
        };
        out.push((mi, evaluate_params(params, &bundle, method, &cfg.kernel).map_err(ctx)?));
    }
    Ok(out)
}

/// Method index, seed, sweep value and the cell's output.
pub type PlanCell = (usize, u64, Option<f64>, CellOutput);

/// Runs the whole plan. Cells are spread over worker threads and merged by
/// key, so the table does not depend on the thread count.
pub fn run_plan_detailed(plan: &ExperimentPlan) -> Result<Vec<PlanCell>> {
    plan.validate()?;
    let jobs: Vec<(u64, Option<f64>)> = plan
        .sweep_points()
        .into_iter()
        .flat_map(|v| plan.seeds.iter().map(move |&s| (s, v)))
        .collect();
    let threads = match plan.threads {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        t => t,
    }
    .min(jobs.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: BTreeMap<usize, Result<Vec<(usize, CellOutput)>>> = BTreeMap::new();
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let j = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        let Some(&(seed, v)) = jobs.get(j) else { break };
                        done.push((j, run_seed_point(plan, seed, v)));
                    }
                    done
                })
            })
            .collect();
        for w in workers {
            results.extend(w.join().expect("experiment worker panicked"));
        }
    });
    let mut cells = Vec::new();
    for (j, r) in results {
        let (seed, v) = jobs[j];
        for (mi, cell) in r? {
            cells.push((mi, seed, v, cell));
        }
    }
    // Sweep point, then method, then seed order.
    let point_index = |v: Option<f64>| plan.sweep_points().iter().position(|p| *p == v).unwrap_or(0);
    let seed_index = |s: u64| plan.seeds.iter().position(|&p| p == s).unwrap_or(0);
    cells.sort_by_key(|(mi, s, v, _)| (point_index(*v), *mi, seed_index(*s)));
    Ok(cells)
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<ResultTable> {
    let param = plan.sweep.as_ref().map(|s| s.param);
    let rows = run_plan_detailed(plan)?
        .into_iter()
        .map(|(mi, seed, v, cell)| ResultRow {
            method: plan.methods[mi].label(),
            seed,
            sweep_param: param,
            sweep_value: v,
            fpr95: cell.report.fpr95,
            auroc: cell.report.auroc,
            aupr: cell.report.aupr,
            final_hsic: cell.final_hsic,
        })
        .collect();
    Ok(ResultTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep_param: Option<SweepParam>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep_value: Option<f64>,
    pub seeds: usize,
    pub fpr95: Stat,
    pub auroc: Stat,
    pub aupr: Stat,
    pub final_hsic: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Aggregates rows across seeds per (method, sweep value), in first-seen order.
pub fn sweep_summary(table: &ResultTable) -> Result<Summary> {
    let Some(first) = table.rows.first() else {
        return Err(Error::contract("cannot summarize an empty table"));
    };
    let param = first.sweep_param;
    type Group<'a> = ((String, Option<f64>), Vec<&'a ResultRow>);
    let mut groups: Vec<Group> = Vec::new();
    for r in &table.rows {
        if r.sweep_param != param || r.sweep_value.is_some() != param.is_some() {
            return Err(Error::contract("table mixes rows from different plans"));
        }
        let key = (r.method.clone(), r.sweep_value);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => {
                if rows.iter().any(|x| x.seed == r.seed) {
                    return Err(Error::contract(format!("duplicate row for method {} seed {}", r.method, r.seed)));
                }
                rows.push(r);
            }
            None => groups.push((key, vec![r])),
        }
    }
    let rows = groups
        .into_iter()
        .map(|((method, sweep_value), rows)| {
            let stat = |f: fn(&ResultRow) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                method,
                sweep_param: param,
                sweep_value,
                seeds: rows.len(),
                fpr95: stat(|r| r.fpr95),
                auroc: stat(|r| r.auroc),
                aupr: stat(|r| r.aupr),
                final_hsic: stat(|r| r.final_hsic),
            }
        })
        .collect();
    Ok(Summary { rows })
}

pub fn write_results(dir: &Path, table: &ResultTable, header: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), format!("{header}{}", table.to_csv()?))?;
    std::fs::write(dir.join("summary.toml"), format!("{header}{}", sweep_summary(table)?.to_toml()?))?;
    Ok(())
}
