use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use spml_core::data::{self, Split, SynthConfig};
use spml_core::harness::{self, ExperimentConfig, PseudoMode};
use spml_core::model::MlpParams;
use spml_core::pseudo::{self, CooccurrenceTable, NeighborIndex, Similarity};
use spml_core::Error;

#[derive(Parser)]
#[command(name = "spml", version, about = "Single-positive multi-label learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifests + feature files).
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute pseudo-labels for a training split and write them as JSONL.
    Pseudo {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "instance")]
        mode: PseudoMode,
        #[arg(long, default_value_t = 15)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long, default_value = "cosine")]
        similarity: String,
        /// Fully labelled manifest for `class_cooc` statistics.
        #[arg(long)]
        cooc: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        cooc_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one seed; writes `model.spmc` and `trace.json` into `--out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a multi-label test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured seed and aggregate.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over K and τ for one recipe.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10,15,20")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
        tau: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_similarity(s: &str) -> spml_core::Result<Similarity> {
    match s {
        "cosine" => Ok(Similarity::Cosine),
        "euclidean" => Ok(Similarity::Euclidean),
        other => Err(Error::Config(format!("unknown similarity {other:?}"))),
    }
}

fn write_text(path: &Path, text: &str) -> spml_core::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_synth(path: &Path) -> spml_core::Result<SynthConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: SynthConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> spml_core::Result<()> {
    match cli.command {
        Command::GenSynth { config, out } => {
            let cfg = load_synth(&config)?;
            let dataset = data::generate(&cfg)?;
            fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            for p in dataset.save(&out)? {
                println!("{}", p.display());
            }
        }
        Command::Pseudo {
            train,
            mode,
            k,
            tau,
            similarity,
            cooc,
            cooc_threshold,
            out,
        } => {
            let split = Split::load(&train)?;
            let labels = split.manifest.single_labels();
            let sets = match mode {
                PseudoMode::Instance => {
                    let index = NeighborIndex::build(&split.features, parse_similarity(&similarity)?)?;
                    pseudo::instance_pseudo_labels(&index, &labels, k, tau)?
                }
                PseudoMode::ClassCooc => {
                    let path = cooc.ok_or_else(|| {
                        Error::Config("class_cooc needs --cooc <manifest>".into())
                    })?;
                    let reference = data::load_manifest(&path)?;
                    let table = CooccurrenceTable::from_label_sets(
                        &reference.label_sets(),
                        split.num_classes(),
                    )?;
                    let per_class = pseudo::class_pseudo_labels(&table, cooc_threshold);
                    pseudo::assign_class_pseudo_labels(&per_class, &labels)?
                }
                PseudoMode::Ideal => {
                    let truth = split.manifest.true_label_sets().ok_or_else(|| {
                        Error::Config("ideal mode needs true_labels in the manifest".into())
                    })?;
                    pseudo::ideal_pseudo_labels(&truth, &labels)?
                }
                PseudoMode::None => Vec::new(),
            };
            pseudo::write_jsonl(&out, &sets)?;
            let mean = sets.iter().map(|s| s.len()).sum::<usize>() as f64 / sets.len().max(1) as f64;
            info!("wrote {} sets, mean size {mean:.3}", sets.len());
        }
        Command::Train { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dataset = cfg.data.load()?;
            let outcome = harness::train(&cfg, &dataset, seed)?;
            fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            outcome.params.write_checkpoint(&out.join("model.spmc"))?;
            let trace = serde_json::to_string_pretty(&outcome.run).expect("trace serialisation");
            write_text(&out.join("trace.json"), &trace)?;
            print!("{}", outcome.run.test.to_table(cfg.loss.kind.display_name()));
        }
        Command::Eval {
            checkpoint,
            test,
            out,
        } => {
            let params = MlpParams::read_checkpoint(&checkpoint)?;
            let split = Split::load(&test)?;
            let report = harness::evaluate(&params, &split)?;
            match out {
                Some(path) => write_text(&path, &report.to_json())?,
                None => println!("{}", report.to_json()),
            }
            eprint!("{}", report.to_table("model"));
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = harness::run_config(&cfg)?;
            match out {
                Some(path) => {
                    write_text(&path, &report.to_json())?;
                    print!("{}", report.to_table());
                }
                None => {
                    println!("{}", report.to_json());
                    eprint!("{}", report.to_table());
                }
            }
        }
        Command::Sweep { config, k, tau, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dataset = cfg.data.load()?;
            let report = harness::sweep(&cfg, &dataset, &k, &tau)?;
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&report).expect("sweep serialisation");
                write_text(&path, &json)?;
            }
            for metric in 0..5 {
                println!("{}", report.to_table(metric));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli).context("spml failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.downcast_ref::<Error>().map_or(1, Error::exit_code);
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
