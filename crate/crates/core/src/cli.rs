//! The `sine` command: synth, prepare, train, evaluate, analyze, sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::category::{categorize_pairs, write_histograms, Multiplicity};
use crate::config::{load_config, parse_override, RunConfig};
use crate::data::{
    apply_n_core, build_sequences, label_feedback, load_interactions, read_dataset, write_dataset, SequenceDataset,
};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::metrics::{evaluate, write_report, EvalReport, Split};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelConfig};
use crate::objective::{train, write_train_log, TrainConfig};
use crate::synth::{export_ground_truth, generate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sine", version, about = "Sub-interest sequential recommendation with passive-negative feedback")]
struct Cli {
    /// TOML configuration file with [data], [model], [train], [synth], [eval] and [analysis] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set model.dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic interaction log with planted sub-interests.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        users: Option<usize>,
    },
    /// Label, N-core filter and split an interaction log into sequences.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a prepared dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a checkpoint on the validation or test targets.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Include one row per user in the report.
        #[arg(long)]
        per_user: bool,
    },
    /// Category-case histograms of positive/negative pairs in a raw log.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        /// Count only the nearest negative per positive.
        #[arg(long)]
        nearest: bool,
    },
    /// Train and evaluate once per value of one hyper-parameter.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// `1..10`, `1,2,4` or, for lambda, `0.6:0.3:0.1,0.4:0.4:0.2`.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Sine,
    Sasrec,
    SasrecN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    #[value(name = "K", alias = "k")]
    K,
    Lambda,
    Beta1,
}

#[derive(Debug, Clone, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelChoice::Sine)]
    model: ModelChoice,
    /// Passive-negative share of first-term negatives for sasrec-n (default 0.5).
    #[arg(long)]
    neg_mix: Option<f64>,
    /// Number of sub-interests.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablate_af: bool,
    #[arg(long)]
    ablate_nf: bool,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(k) = self.k {
            cfg.model.n_interests = k;
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.model.init_seed = s;
        }
        cfg.model.ablate_adaptive_fusion |= self.ablate_af;
        cfg.model.ablate_negative_feedback |= self.ablate_nf;
        match self.model {
            ModelChoice::Sine => {
                if let Some(m) = self.neg_mix {
                    cfg.train.neg_mix = m;
                }
            }
            ModelChoice::Sasrec => {
                cfg.model = cfg.model.sasrec();
                cfg.train.neg_mix = 0.0;
            }
            ModelChoice::SasrecN => {
                cfg.model = cfg.model.sasrec();
                cfg.train.neg_mix = self.neg_mix.unwrap_or(if cfg.train.neg_mix > 0.0 { cfg.train.neg_mix } else { 0.5 });
            }
        }
        cfg.validate()
    }
}

/// Runs the command line `argv` (program name first) and returns the
/// process exit status.
pub fn run_command<S: AsRef<str>>(argv: &[S]) -> i32 {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let overrides = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    load_config(cli.config.as_deref(), &overrides)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    let mut cfg = base_config(cli)?;
    match &cli.command {
        Command::Synth { out, seed, users } => {
            if let Some(s) = seed {
                cfg.synth.seed = *s;
            }
            if let Some(u) = users {
                cfg.synth.n_users = *u;
            }
            cfg.validate()?;
            run_synth(&cfg, out, argv)
        }
        Command::Prepare { input, out } => run_prepare(&cfg, input, out, argv),
        Command::Train { dataset, out, model } => {
            model.apply(&mut cfg)?;
            let ds = read_dataset(dataset)?;
            let (summary, _, _) = run_train(&cfg, &ds, dataset, out, argv)?;
            println!("{}", summary.trim_end());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            out,
            split,
            per_user,
        } => run_evaluate(&cfg, checkpoint, dataset, out, *split, *per_user, argv),
        Command::Analyze {
            input,
            out,
            window,
            nearest,
        } => {
            if let Some(w) = window {
                cfg.analysis.window = *w;
            }
            if *nearest {
                cfg.analysis.multiplicity = Multiplicity::Nearest;
            }
            run_analyze(&cfg, input, out, argv)
        }
        Command::Sweep {
            dataset,
            out,
            param,
            values,
            workers,
            model,
        } => {
            model.apply(&mut cfg)?;
            run_sweep(&cfg, dataset, out, *param, values, *workers, argv)
        }
    }
}

fn run_synth(cfg: &RunConfig, out: &Path, argv: &[String]) -> Result<()> {
    create_dir(out)?;
    let (log, truth) = generate(&cfg.synth)?;
    log.write_csv(&out.join("interactions.csv"))?;
    export_ground_truth(&truth, &out.join("ground_truth.json"))?;
    let mut m = RunManifest::new("synth", argv, cfg);
    m.add_output("interactions.csv");
    m.add_output("ground_truth.json");
    m.write(&out.join("manifest.json"))?;
    println!(
        "synth: {} interactions, {} users, {} items -> {}",
        log.len(),
        log.user_count(),
        log.item_count(),
        out.display()
    );
    Ok(())
}

/// Ingest, label, drop discarded views, N-core filter and split.
pub fn prepare_dataset(cfg: &RunConfig, input: &Path) -> Result<SequenceDataset> {
    let raw = load_interactions(input, &cfg.data.schema)?;
    let labeled = label_feedback(&raw, cfg.data.pos_ratio, cfg.data.neg_seconds).without_discarded();
    let core = apply_n_core(&labeled, cfg.data.n_core)?;
    let (ds, drops) = build_sequences(&core, cfg.model.max_len)?;
    info!(
        "prepare: {} raw, {} labelled, {} after {}-core, {} users kept, {} dropped",
        raw.len(),
        labeled.len(),
        core.len(),
        cfg.data.n_core,
        ds.sequences.len(),
        drops.total()
    );
    Ok(ds)
}

fn run_prepare(cfg: &RunConfig, input: &Path, out: &Path, argv: &[String]) -> Result<()> {
    create_dir(out)?;
    let ds = prepare_dataset(cfg, input)?;
    write_dataset(&ds, &out.join("dataset.tsv"))?;
    let mut m = RunManifest::new("prepare", argv, cfg);
    m.add_input(input)?;
    m.add_output("dataset.tsv");
    m.write(&out.join("manifest.json"))?;
    println!(
        "prepare: {} users, {} items -> {}",
        ds.sequences.len(),
        ds.n_items(),
        out.join("dataset.tsv").display()
    );
    Ok(())
}

/// Trains, writes checkpoint, log and reports into `out`; returns a
/// one-line summary and the validation and test reports.
fn run_train(
    cfg: &RunConfig,
    ds: &SequenceDataset,
    dataset_path: &Path,
    out: &Path,
    argv: &[String],
) -> Result<(String, EvalReport, EvalReport)> {
    create_dir(out)?;
    let outcome = train(ds, &cfg.model, &cfg.train, &cfg.eval)?;
    let ckpt = Checkpoint::new(cfg.model.clone(), ds.item_vocab.ids().to_vec(), outcome.params.clone());
    write_checkpoint(&ckpt, &out.join("checkpoint.json"))?;
    write_train_log(&outcome.log, &out.join("train_log.tsv"))?;
    let val = evaluate(ds, &outcome.params, &cfg.model, Split::Val, &cfg.eval)?;
    let test = evaluate(ds, &outcome.params, &cfg.model, Split::Test, &cfg.eval)?;
    write_report(&val, &out.join("val_report.tsv"), false)?;
    write_report(&test, &out.join("test_report.tsv"), false)?;
    let mut m = RunManifest::new("train", argv, cfg);
    m.add_input(dataset_path)?;
    for f in ["checkpoint.json", "train_log.tsv", "val_report.tsv", "test_report.tsv"] {
        m.add_output(f);
    }
    m.write(&out.join("manifest.json"))?;
    Ok((summary_line(out, outcome.best_epoch, &val, &test), val, test))
}

fn summary_line(out: &Path, best_epoch: Option<usize>, val: &EvalReport, test: &EvalReport) -> String {
    format!(
        "train: best epoch {} val gauc {:.4} | test auc {:.4} gauc {:.4} ndcg@{} {:.4} -> {}\n",
        best_epoch.map_or("-".to_string(), |e| e.to_string()),
        val.gauc,
        test.auc,
        test.gauc,
        test.ndcg_k,
        test.ndcg,
        out.display()
    )
}

fn run_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    split: SplitArg,
    per_user: bool,
    argv: &[String],
) -> Result<()> {
    create_dir(out)?;
    let ckpt = read_checkpoint(checkpoint)?;
    let ds = read_dataset(dataset)?;
    if ckpt.item_ids != ds.item_vocab.ids() {
        return Err(Error::Vocabulary("checkpoint vocabulary differs from the dataset's".into()));
    }
    let split = match split {
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let report = evaluate(&ds, &ckpt.params, &ckpt.config, split, &cfg.eval)?;
    write_report(&report, &out.join("eval_report.tsv"), per_user)?;
    let mut snapshot = cfg.clone();
    snapshot.model = ckpt.config.clone();
    let mut m = RunManifest::new("evaluate", argv, &snapshot);
    m.add_input(checkpoint)?;
    m.add_input(dataset)?;
    m.add_output("eval_report.tsv");
    m.write(&out.join("manifest.json"))?;
    println!(
        "evaluate: {} users auc {:.4} gauc {:.4} ndcg@{} {:.4}",
        report.users, report.auc, report.gauc, report.ndcg_k, report.ndcg
    );
    Ok(())
}

fn run_analyze(cfg: &RunConfig, input: &Path, out: &Path, argv: &[String]) -> Result<()> {
    create_dir(out)?;
    let raw = load_interactions(input, &cfg.data.schema)?;
    let labeled = label_feedback(&raw, cfg.data.pos_ratio, cfg.data.neg_seconds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let analysis = categorize_pairs(&labeled, &cfg.analysis, &mut rng)?;
    write_histograms(&analysis, &out.join("histograms.tsv"))?;
    let mut m = RunManifest::new("analyze", argv, cfg);
    m.add_input(input)?;
    m.add_output("histograms.tsv");
    m.write(&out.join("manifest.json"))?;
    println!(
        "analyze: case-4 fraction observed {:.4} random {:.4}",
        analysis.observed.fraction(4),
        analysis.random.fraction(4)
    );
    Ok(())
}

/// Parses sweep values: an inclusive integer range `a..b` or a comma list.
fn parse_values(param: SweepParam, values: &str) -> Result<Vec<String>> {
    let bad = || Error::config("values", format!("cannot parse {values:?}"));
    let list: Vec<String> = if let Some((a, b)) = values.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).map(|v| v.to_string()).collect()
    } else {
        values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
    };
    if list.is_empty() {
        return Err(bad());
    }
    for v in &list {
        let ok = match param {
            SweepParam::K => v.parse::<usize>().is_ok(),
            SweepParam::Beta1 => v.parse::<f64>().is_ok(),
            SweepParam::Lambda => {
                let parts: Vec<&str> = v.split(':').collect();
                parts.len() == 3 && parts.iter().all(|p| p.parse::<f64>().is_ok())
            }
        };
        if !ok {
            return Err(bad());
        }
    }
    Ok(list)
}

fn sweep_config(base: &RunConfig, param: SweepParam, value: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::K => cfg.model.n_interests = value.parse().map_err(|_| Error::config("values", value))?,
        SweepParam::Beta1 => cfg.model.beta1 = value.parse().map_err(|_| Error::config("values", value))?,
        SweepParam::Lambda => {
            let l: Vec<f64> = value.split(':').filter_map(|p| p.parse().ok()).collect();
            cfg.train.lambda1 = l[0];
            cfg.train.lambda2 = l[1];
            cfg.train.lambda3 = l[2];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_sweep(
    base: &RunConfig,
    dataset: &Path,
    out: &Path,
    param: SweepParam,
    values: &str,
    workers: usize,
    argv: &[String],
) -> Result<()> {
    let values = parse_values(param, values)?;
    let configs = values
        .iter()
        .map(|v| sweep_config(base, param, v))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let ds = read_dataset(dataset)?;
    let name = match param {
        SweepParam::K => "K",
        SweepParam::Lambda => "lambda",
        SweepParam::Beta1 => "beta1",
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Contract(e.to_string()))?;
    let results: Vec<Result<(EvalReport, EvalReport)>> = pool.install(|| {
        values
            .par_iter()
            .zip(configs.par_iter())
            .map(|(v, cfg)| {
                let dir = out.join(format!("{name}={v}"));
                let (_, val, test) = run_train(cfg, &ds, dataset, &dir, argv)?;
                Ok((val, test))
            })
            .collect()
    });
    let mut table = format!("{name}\tval_gauc\ttest_auc\ttest_gauc\ttest_ndcg@{}\n", base.eval.ndcg_k);
    for (v, r) in values.iter().zip(results) {
        let (val, test) = r?;
        let _ = writeln!(table, "{v}\t{}\t{}\t{}\t{}", val.gauc, test.auc, test.gauc, test.ndcg);
    }
    fs::write(out.join("summary.tsv"), &table).map_err(|e| Error::io(out, e))?;
    let mut m = RunManifest::new("sweep", argv, base);
    m.add_input(dataset)?;
    m.add_output("summary.tsv");
    for v in &values {
        m.add_output(format!("{name}={v}/manifest.json"));
    }
    m.write(&out.join("manifest.json"))?;
    print!("{table}");
    Ok(())
}

/// Model and training configuration after applying `--model` style
/// choices; exposed for callers that drive training directly.
pub fn resolve_model(base: &RunConfig, choice: &str, neg_mix: Option<f64>) -> Result<(ModelConfig, TrainConfig)> {
    let model = match choice {
        "sine" => ModelChoice::Sine,
        "sasrec" => ModelChoice::Sasrec,
        "sasrec-n" => ModelChoice::SasrecN,
        other => return Err(Error::config("model", format!("unknown model {other:?}"))),
    };
    let args = ModelArgs {
        model,
        neg_mix,
        k: None,
        epochs: None,
        seed: None,
        ablate_af: false,
        ablate_nf: false,
    };
    let mut cfg = base.clone();
    args.apply(&mut cfg)?;
    Ok((cfg.model, cfg.train))
}
