use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use eit3d_core::dataset::{read_dataset, read_volumes};
use eit3d_core::metrics::format_table;
use eit3d_net::Preset;

use crate::commands::*;
use crate::config::RunConfig;
use crate::slices::{cmd_export_slices, Axis};
use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "eit3d", version, about = "3D electrical impedance tomography lab")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Maximum number of worker threads (1 gives single-threaded runs).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate phantom/measurement pairs and write a dataset file.
    GenDataset(GenArgs),
    /// Train the network and write a checkpoint plus a loss-history CSV.
    Train(TrainArgs),
    /// Reconstruct volumes from measurement frames.
    Reconstruct(ReconstructArgs),
    /// Score methods on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Export volume slices as 8-bit PGM images and CSV tables.
    ExportSlices(SliceArgs),
    /// Time single-frame network inference.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Phantom counts per category (2obj-, 2obj+-, 3obj-, 3obj+-).
    #[arg(long, value_name = "A,B,C,D", value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mesh cells across the tank diameter.
    #[arg(long, value_name = "N")]
    pub mesh_resolution: Option<usize>,
    /// Print the plan without simulating anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input dataset file.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Output checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Loss-history CSV (defaults to the checkpoint path with a .csv extension).
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    /// Architecture preset: full or desk.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Training seed (initialization, shuffling, noise and dropout).
    #[arg(long)]
    pub seed: Option<u64>,
    /// SNR in dB of the noise added to every training frame.
    #[arg(long, value_name = "DB")]
    pub train_snr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// tn-net or one-step.
    #[arg(long)]
    pub method: Method,
    /// Take frames from this dataset file.
    #[arg(long, value_name = "FILE", conflicts_with = "frames")]
    pub dataset: Option<PathBuf>,
    /// Dataset record indices (default: the test split).
    #[arg(long, value_delimiter = ',', requires = "dataset")]
    pub indices: Option<Vec<usize>>,
    /// Take frames from a CSV file, one normalized frame per line.
    #[arg(long, value_name = "FILE")]
    pub frames: Option<PathBuf>,
    /// Network checkpoint (tn-net).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Regularization weight (one-step); default is the trace-ratio choice.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output volume file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset whose test split is scored.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Comma-separated methods: tn-net, one-step, oracle.
    #[arg(long, value_delimiter = ',', default_value = "tn-net,one-step")]
    pub methods: Vec<Method>,
    /// Network checkpoint (tn-net).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Regularization weight (one-step).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// SNR in dB of the test noise.
    #[arg(long, value_name = "DB")]
    pub snr: Option<f64>,
    /// Seed of the test noise.
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Write the full report (with per-sample rows) as JSON.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    /// Volume file.
    #[arg(long, value_name = "FILE")]
    pub volumes: PathBuf,
    /// Which volume of the file.
    #[arg(long, default_value_t = 0)]
    pub volume_index: usize,
    /// Slicing axis: x, y or z.
    #[arg(long, default_value = "z")]
    pub axis: Axis,
    /// Comma-separated slice indices along the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub indices: Vec<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Architecture preset used when no checkpoint is given.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Time this checkpoint instead of a freshly initialized network.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Number of timed frames.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, flag_name: &str, key: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| UsageError(format!("missing --{flag_name} (or paths.{key} in the config)")).into())
}

fn output(flag: Option<PathBuf>, cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| UsageError(format!("missing --{name} (or paths.output in the config)")).into())
}

impl Cli {
    pub fn load_config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| UsageError(format!("{e:#}")).into()),
            None => Ok(RunConfig::default()),
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = cli.load_config()?;
    match cli.command {
        Command::GenDataset(a) => {
            if let Some(c) = a.counts {
                cfg.counts = c
                    .try_into()
                    .map_err(|c: Vec<usize>| UsageError(format!("--counts needs 4 values, got {}", c.len())))?;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(r) = a.mesh_resolution {
                cfg.simulation.mesh_resolution = r;
            }
            let out = if a.dry_run {
                PathBuf::new()
            } else {
                required(a.out, &cfg.paths.dataset, "out", "dataset")?
            };
            let summary = cmd_gen_dataset(&cfg, &out, a.dry_run)?;
            println!("{summary}");
        }
        Command::Train(a) => {
            if let Some(p) = a.preset {
                cfg.preset = p;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(l) = a.learning_rate {
                cfg.train.learning_rate = l;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            if let Some(s) = a.train_snr {
                cfg.train.train_noise_snr_db = s;
            }
            let dataset = required(a.dataset, &cfg.paths.dataset, "dataset", "dataset")?;
            let out = required(a.out, &cfg.paths.checkpoint, "out", "checkpoint")?;
            let history = a.history.or(cfg.paths.history.clone()).unwrap_or_else(|| history_path_for(&out));
            let summary = cmd_train(&cfg, &dataset, &out, &history, |r| {
                eprintln!("epoch {:>4}  train {:.6e}  validation {:.6e}", r.epoch, r.train_loss, r.validation_loss);
            })?;
            println!("{summary}");
            println!("checkpoint {}, history {}", out.display(), history.display());
        }
        Command::Reconstruct(a) => {
            if a.lambda.is_some() {
                cfg.lambda = a.lambda;
            }
            let out = output(a.out, &cfg, "out")?;
            let ds = match &a.dataset {
                Some(p) => Some(read_dataset(p).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            let frames: Vec<Vec<f32>> = match (&ds, &a.frames) {
                (Some(ds), _) => {
                    let idx = a.indices.clone().unwrap_or_else(|| ds.meta.splits.test.clone());
                    idx.iter()
                        .map(|&i| {
                            ds.frames.get(i).cloned().ok_or_else(|| {
                                anyhow::Error::from(UsageError(format!("record {i} out of range ({} records)", ds.len())))
                            })
                        })
                        .collect::<Result<_>>()?
                }
                (None, Some(p)) => read_frames_csv(p)?,
                (None, None) => return Err(UsageError("give --dataset or --frames".into()).into()),
            };
            let summary = match a.method {
                Method::TnNet => {
                    let ck = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint", "checkpoint")?;
                    let net = load_network(&ck)?;
                    let s = cmd_reconstruct(&net, &frames, &out)?;
                    for (i, t) in s.per_frame_seconds.iter().enumerate() {
                        println!("frame {i}: {:.4} s", t);
                    }
                    s
                }
                Method::OneStep => {
                    let protocol;
                    let point = match &ds {
                        Some(ds) => LinearizationPoint::of_dataset(ds),
                        None => {
                            protocol = cfg.build_protocol()?;
                            LinearizationPoint { settings: &cfg.simulation, protocol: &protocol, reference: None }
                        }
                    };
                    let solver = build_one_step(&point, cfg.lambda)?;
                    cmd_reconstruct(&solver, &frames, &out)?
                }
                Method::Oracle => return Err(UsageError("reconstruct supports tn-net and one-step".into()).into()),
            };
            println!("{} volumes written to {} ({:.4} s per frame)", summary.frames, out.display(), summary.mean_seconds());
        }
        Command::Evaluate(a) => {
            if a.lambda.is_some() {
                cfg.lambda = a.lambda;
            }
            if let Some(s) = a.snr {
                cfg.eval_noise_snr_db = s;
            }
            if let Some(s) = a.eval_seed {
                cfg.eval_seed = s;
            }
            cfg.validate()?;
            let dataset = required(a.dataset, &cfg.paths.dataset, "dataset", "dataset")?;
            let checkpoint = a.checkpoint.or(cfg.paths.checkpoint.clone());
            if a.methods.contains(&Method::TnNet) && checkpoint.is_none() {
                return Err(UsageError("tn-net needs --checkpoint".into()).into());
            }
            let ds = read_dataset(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let reports = cmd_evaluate(&cfg, &ds, &a.methods, checkpoint.as_deref())?;
            print!("{}", format_table(&reports));
            if let Some(p) = a.json {
                std::fs::write(&p, serde_json::to_string_pretty(&reports)?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::ExportSlices(a) => {
            let out_dir = output(a.out_dir, &cfg, "out-dir")?;
            let vols = read_volumes(&a.volumes).with_context(|| format!("reading {}", a.volumes.display()))?;
            let vol = vols.get(a.volume_index).ok_or_else(|| {
                UsageError(format!("volume index {} out of range ({} volumes)", a.volume_index, vols.len()))
            })?;
            let written = cmd_export_slices(vol, a.axis, &a.indices, &out_dir)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Bench(a) => {
            let preset = a.preset.unwrap_or(cfg.preset);
            let report = cmd_bench(preset, a.checkpoint.as_deref().or(cfg.paths.checkpoint.as_deref()), a.frames, a.seed)?;
            println!("{report}");
        }
    }
    Ok(())
}

/// Exit status for an error returned by [`run`].
pub fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        crate::EXIT_USAGE
    } else {
        crate::EXIT_FAILURE
    }
}
