//! `tsmamba` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.
//! Randomness comes only from `--seed`; without it the config's `seed`
//! applies, which itself defaults to 0.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsmamba::artifacts::{self, TrainInfo};
use tsmamba::checkpoint::{self, Checkpoint};
use tsmamba::config::RunConfig;
use tsmamba::dataset::{self, SplitSpec};
use tsmamba::{bench, synth, train, Error, Result};

#[derive(Parser)]
#[command(name = "tsmamba", version, about = "Residual-based anomaly classifier: data, training, evaluation, benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic texture dataset as root/<class>/*.png.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// 2 or 5.
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Phase 1: fit the autoencoder on the target class.
    TrainAe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Phase 2: train the classifier on residuals of a frozen autoencoder.
    TrainClf {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Confusion matrix and KPIs on the validation split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        clf: PathBuf,
        /// KPI CSV; the text report goes next to it with a .txt extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time scan and attention over powers of two and fit scaling slopes.
    Bench {
        #[arg(long, default_value_t = 256)]
        n_min: usize,
        #[arg(long, default_value_t = 8192)]
        n_max: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Records CSV; slopes go to a .summary.txt file beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print checkpoint metadata and parameter counts.
    Info { ckpt: PathBuf },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_split(cfg: &RunConfig, data: &Path) -> Result<(dataset::Dataset, dataset::Split)> {
    let ds = dataset::load_dataset(data, cfg.image_size, cfg.channels)?;
    let split = dataset::split(
        &ds,
        SplitSpec {
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
        },
    )?;
    Ok((ds, split))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    checkpoint::write_atomic(path, text.as_bytes())
}

fn last(v: &[f64]) -> f64 {
    v.last().copied().unwrap_or(f64::NAN)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, n, classes, size, seed } => {
            let names = synth::gen_synthetic(&out, seed, n, classes, size)?;
            println!("wrote {n} images per class for {} to {}", names.join(", "), out.display());
        }
        Command::TrainAe { config, data, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let (ds, split) = load_split(&cfg, &data)?;
            let p1 = train::train_phase1(&cfg, &ds, &split)?;
            let info = TrainInfo {
                epoch: cfg.epochs_ae,
                loss: last(&p1.loss.train),
                class_names: ds.class_names.clone(),
            };
            artifacts::ae_checkpoint(&p1.model, &cfg, &info).save(&out)?;
            let curve = sibling(&out, ".loss.csv");
            write_text(&curve, &p1.loss.to_csv())?;
            println!(
                "autoencoder: {} params, final loss {:.6} train / {:.6} val; wrote {} and {}",
                p1.model.params().count(),
                info.loss,
                last(&p1.loss.val),
                out.display(),
                curve.display()
            );
        }
        Command::TrainClf { config, data, ae, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let (ae_model, _) = artifacts::load_ae(&Checkpoint::load(&ae)?)?;
            let (ds, split) = load_split(&cfg, &data)?;
            let p2 = train::train_phase2(&cfg, &ae_model, &ds, &split)?;
            let info = TrainInfo {
                epoch: cfg.epochs_clf,
                loss: last(&p2.loss.train),
                class_names: ds.class_names.clone(),
            };
            artifacts::clf_checkpoint(&p2.model, &cfg, &info).save(&out)?;
            let loss = sibling(&out, ".loss.csv");
            let acc = sibling(&out, ".acc.csv");
            write_text(&loss, &p2.loss.to_csv())?;
            write_text(&acc, &p2.accuracy.to_csv())?;
            println!(
                "classifier: {} params, val accuracy {:.4}; wrote {}, {} and {}",
                p2.model.params().count(),
                last(&p2.accuracy.val),
                out.display(),
                loss.display(),
                acc.display()
            );
        }
        Command::Eval { config, data, ae, clf, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let (ae_model, _) = artifacts::load_ae(&Checkpoint::load(&ae)?)?;
            let (clf_model, _) = artifacts::load_clf(&Checkpoint::load(&clf)?)?;
            let (ds, split) = load_split(&cfg, &data)?;
            let ev = train::evaluate(&ae_model, &clf_model, &ds, &split.val, &cfg.target_class)?;
            let text = ev.to_text();
            write_text(&out, &ev.report.to_csv())?;
            write_text(&sibling(&out, ".txt"), &text)?;
            print!("{text}");
        }
        Command::Bench { n_min, n_max, d, repeats, out, seed } => {
            if repeats < 5 {
                return Err(Error::Config("repeats must be at least 5".into()));
            }
            let lengths = bench::geometric(n_min, n_max)?;
            let result = bench::scaling_run(&lengths, d, repeats, seed)?;
            write_text(&out, &result.to_csv())?;
            let summary = sibling(&out, ".summary.txt");
            write_text(&summary, &result.summary())?;
            print!("{}", result.summary());
        }
        Command::Info { ckpt } => {
            let c = Checkpoint::load(&ckpt)?;
            println!("format: RMBK1 version {}", checkpoint::VERSION);
            for (k, v) in &c.metadata {
                if k == "config" || k == "classes" {
                    continue;
                }
                println!("{k}: {v}");
            }
            println!("classes: {}", c.meta("classes").unwrap_or("").replace('\n', ", "));
            println!("tensors: {}", c.tensors.len());
            println!("param_count: {}", c.param_count());
            let store = artifacts::store_of(&c);
            for (group, n) in store.breakdown(2) {
                println!("  {group:<24} {n:>12}");
            }
            if let Some(cfg) = c.meta("config") {
                println!("config:");
                for line in cfg.lines() {
                    println!("  {line}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
