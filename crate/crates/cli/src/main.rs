//! `tripnet`: generate synthetic data, train, evaluate and localize.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error, 4 runtime
//! failure. Diagnostics go to stderr; `RUST_LOG` controls log verbosity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tripnet::config::Config;
use tripnet::data::{save_dataset, Vocab};
use tripnet::eval::{chance_baseline, evaluate, localize, ModelAgent};
use tripnet::ndcore::ParamSet;
use tripnet::policy::SelectMode;
use tripnet::trainer::{train, TrainOutput, VOCAB_FILE};
use tripnet::{Error, Result};

const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Parser)]
#[command(name = "tripnet", version, about = "Reinforcement-learning temporal localization of language queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed; for `generate` this is the synthetic data seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file; defaults to the one next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset to a directory.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints, vocabulary and a log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one query in one video and print the search trace.
    Localize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        video: String,
        #[arg(long)]
        query: String,
        /// Directory for the trace file; the trace is printed otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common, seed_key: &str) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        cfg.set(seed_key, &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(dir: &Path, cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    write(&dir.join(CONFIG_SNAPSHOT), &cfg.to_text())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_agent(m: &ModelArgs, mode: SelectMode) -> Result<ModelAgent> {
    let params = ParamSet::load(&m.checkpoint)?;
    let vocab_path = match &m.vocab {
        Some(p) => p.clone(),
        None => m
            .checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(VOCAB_FILE),
    };
    ModelAgent::new(params, Vocab::load(&vocab_path)?, mode)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = resolve(&common, "synthetic.seed")?;
            let ds = tripnet::data::generate_synthetic(&cfg.synthetic)?;
            create_out(&out, &cfg)?;
            save_dataset(&ds, &out)?;
            println!("wrote {} videos to {}", ds.videos.len(), out.display());
        }
        Command::Train { common, out } => {
            let cfg = resolve(&common, "seed")?;
            let data = cfg.prepare()?;
            create_out(&out, &cfg)?;
            let result = train(
                &cfg.train_config(),
                &data.train,
                &data.vocab(),
                Some(&TrainOutput { dir: out.clone() }),
            )?;
            let tail = result.log.len().min(500);
            let mean = result.log[result.log.len() - tail..].iter().map(|r| r.iou).sum::<f64>() / tail as f64;
            println!(
                "trained {} episodes (window {} frames); mean IoU over the last {tail}: {mean:.4}",
                result.log.len(),
                result.window
            );
            if let Some(p) = result.checkpoints.last() {
                println!("{}", p.display());
            }
        }
        Command::Eval {
            common,
            model,
            split,
            out,
        } => {
            let cfg = resolve(&common, "seed")?;
            let mode = if cfg.greedy { SelectMode::Greedy } else { SelectMode::Sample };
            let agent = load_agent(&model, mode)?;
            let data = cfg.prepare()?;
            let window = cfg.resolve_window(&data.train)?;
            let target = data.get(&split)?;
            let report = evaluate(&agent, target, cfg.env_config(window), &cfg.alphas, cfg.seed)?;
            let chance = chance_baseline(target, window, &cfg.alphas, cfg.chance_samples, cfg.seed)?;
            let mut text = format!("split                 {split}\nwindow (frames)       {window}\n");
            text.push_str(&report.to_text());
            for (a, acc) in &chance.accuracy {
                text.push_str(&format!("chance IoU@{a:<4}       {acc:.4}\n"));
            }
            create_out(&out, &cfg)?;
            write(&out.join("report.txt"), &text)?;
            write(&out.join("records.tsv"), &report.records_to_text())?;
            print!("{text}");
        }
        Command::Localize {
            common,
            model,
            video,
            query,
            out,
        } => {
            let cfg = resolve(&common, "seed")?;
            let agent = load_agent(&model, SelectMode::Greedy)?;
            let data = cfg.prepare()?;
            let window = cfg.resolve_window(&data.train)?;
            let all = [&data.train, &data.val, &data.test];
            let v = all
                .iter()
                .find_map(|d| d.videos.get(&video))
                .ok_or_else(|| Error::Data(format!("unknown video {video:?}")))?;
            let reference = all
                .iter()
                .flat_map(|d| d.annotations.iter())
                .find(|a| a.video_id == video && a.text == query)
                .map(|a| a.gt);
            let loc = localize(&agent, v, &query, reference, cfg.env_config(window))?;
            println!(
                "window frames [{}, {}) seconds [{:.3}, {:.3}){}",
                loc.window.start(),
                loc.window.end(),
                loc.start_secs,
                loc.end_secs,
                if loc.forced { " (step cap reached)" } else { "" }
            );
            match out {
                Some(dir) => {
                    create_out(&dir, &cfg)?;
                    let p = dir.join("trace.txt");
                    write(&p, &loc.trace.to_text())?;
                    println!("{}", p.display());
                }
                None => print!("{}", loc.trace.to_text()),
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Checkpoint(_) | Error::Io { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tripnet: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
