//! `hood`: generate bundles, train encoders, evaluate detectors, run sweeps.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 non-finite numerics.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hood_core::data::{make_gaussian_bundle, DatasetBundle};
use hood_core::encoder::{train, Checkpoint};
use hood_core::experiment::{run_plan, score_bundle, sweep_summary, write_results};
use hood_core::metrics::{evaluate, label_scores};
use hood_core::scoring::ScoreKind;

use config::CliConfig;

#[derive(Parser)]
#[command(name = "hood", version, about = "HSIC-regularized OOD detection on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config with [bundle], [train], [eval] and [plan] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lambda=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Cor,
    Msp,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Cor => ScoreKind::Cor,
            ScoreArg::Msp => ScoreKind::Msp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle from the [bundle] section.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder on a bundle with the [train] section.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log; defaults to the checkpoint path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a bundle's test splits with a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Overrides `eval.score`.
        #[arg(long, value_enum)]
        score: Option<ScoreArg>,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Per-sample scores; defaults to the metrics path with `.scores.csv`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Run the [plan] section and write results.csv and summary.toml.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<hood_core::Error> for Failure {
    fn from(e: hood_core::Error) -> Self {
        match e.root() {
            hood_core::Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn load_config(args: &ConfigArgs) -> Outcome<CliConfig> {
    config::load(args.config.as_deref(), &args.overrides).map_err(Failure::Config)
}

fn config_check(section: &str, r: hood_core::Result<()>) -> Outcome<()> {
    r.map_err(|e| Failure::Config(format!("invalid [{section}] config: {e}")))
}

fn write(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_bundle(path: &Path) -> Outcome<DatasetBundle> {
    DatasetBundle::load(path).map_err(|e| Failure::Data(format!("bundle {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_data(args: &ConfigArgs, out: &Path) -> Outcome<()> {
    let cfg = load_config(args)?;
    config_check("bundle", cfg.bundle.validate())?;
    let bundle = make_gaussian_bundle(&cfg.bundle)?;
    write(out, &format!("{}{}", cfg.header(), bundle.to_text()?))?;
    println!(
        "bundle: {} classes, dim {}, train_in {}, train_out {}, test_in {}, test_out {}",
        bundle.classes,
        bundle.dim(),
        bundle.train_in.rows(),
        bundle.train_out.rows(),
        bundle.test_in.rows(),
        bundle.test_out.rows()
    );
    Ok(())
}

fn train_cmd(args: &ConfigArgs, bundle_path: &Path, out: &Path, log: Option<&Path>) -> Outcome<()> {
    let cfg = load_config(args)?;
    config_check("train", cfg.train.validate())?;
    let bundle = load_bundle(bundle_path)?;
    if bundle.dim() != cfg.bundle.dim || bundle.classes != cfg.bundle.classes {
        return Err(Failure::Data(format!(
            "bundle has dim {} and {} classes, config expects dim {} and {} classes",
            bundle.dim(),
            bundle.classes,
            cfg.bundle.dim,
            cfg.bundle.classes
        )));
    }
    let outcome = train(&cfg.train, &bundle)?;
    let header = cfg.header();
    let ck = Checkpoint::new(cfg.train.clone(), outcome.params);
    write(out, &format!("{header}{}", ck.to_toml()?))?;
    let mut text = format!("{header}epoch,lr,total,cls,dep\n");
    for e in &outcome.history {
        writeln!(text, "{},{},{},{},{}", e.epoch, e.lr, e.loss.total, e.loss.cls, e.loss.dep).expect("string write");
    }
    let log = log.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".log.csv"));
    write(&log, &text)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs: total {:.6}, cls {:.6}, dep {:.6}",
            outcome.history.len(),
            last.loss.total,
            last.loss.cls,
            last.loss.dep
        );
    } else {
        println!("zero epochs: checkpoint holds the initialization");
    }
    Ok(())
}

fn eval_cmd(
    args: &ConfigArgs,
    checkpoint: &Path,
    bundle_path: &Path,
    score: Option<ScoreArg>,
    out: &Path,
    scores: Option<&Path>,
) -> Outcome<()> {
    let mut cfg = load_config(args)?;
    if let Some(s) = score {
        cfg.eval.score = s.into();
    }
    let ck = Checkpoint::load(checkpoint).map_err(|e| Failure::Data(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let bundle = load_bundle(bundle_path)?;
    if ck.params.input_dim() != bundle.dim() || ck.params.classes() != bundle.classes {
        return Err(Failure::Data(format!(
            "checkpoint expects dim {} and {} classes, bundle has dim {} and {} classes",
            ck.params.input_dim(),
            ck.params.classes(),
            bundle.dim(),
            bundle.classes
        )));
    }
    let kind = cfg.eval.score;
    let (s_in, s_out) = score_bundle(&ck.params, &bundle, kind, cfg.eval.cor_centered)?;
    let report = evaluate(&label_scores(&s_in, &s_out))?;
    let header = cfg.header();
    let metrics = format!(
        "{header}score,fpr95,auroc,aupr,n_in,n_out\n{kind},{},{},{},{},{}\n",
        report.fpr95, report.auroc, report.aupr, report.n_in, report.n_out
    );
    write(out, &metrics)?;
    let mut per_sample = format!("{header}split,index,score\n");
    for (split, values) in [("test_in", &s_in), ("test_out", &s_out)] {
        for (i, s) in values.iter().enumerate() {
            writeln!(per_sample, "{split},{i},{s}").expect("string write");
        }
    }
    let scores = scores.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".scores.csv"));
    write(&scores, &per_sample)?;
    println!(
        "{kind}: fpr95 {:.4}, auroc {:.4}, aupr {:.4} ({} in, {} out)",
        report.fpr95, report.auroc, report.aupr, report.n_in, report.n_out
    );
    Ok(())
}

fn sweep_cmd(args: &ConfigArgs, out: &Path) -> Outcome<()> {
    let cfg = load_config(args)?;
    let plan = cfg.experiment_plan();
    config_check("plan", plan.validate())?;
    let table = run_plan(&plan)?;
    write_results(out, &table, &cfg.header())?;
    for row in sweep_summary(&table)?.rows {
        let point = match (row.sweep_param, row.sweep_value) {
            (Some(p), Some(v)) => format!(" {}={v}", p.name()),
            _ => String::new(),
        };
        println!(
            "{}{point}: auroc {:.4} +/- {:.4}, fpr95 {:.4}, hsic {:.3e} ({} seeds)",
            row.method, row.auroc.mean, row.auroc.std, row.fpr95.mean, row.final_hsic.mean, row.seeds
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { cfg, out } => gen_data(cfg, out),
        Command::Train { cfg, bundle, out, log } => train_cmd(cfg, bundle, out, log.as_deref()),
        Command::Eval {
            cfg,
            checkpoint,
            bundle,
            score,
            out,
            scores,
        } => eval_cmd(cfg, checkpoint, bundle, *score, out, scores.as_deref()),
        Command::Sweep { cfg, out } => sweep_cmd(cfg, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
