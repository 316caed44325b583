use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::Rng;
use eit3d_core::dataset::{
    generate_dataset, read_dataset, reference_frame, write_dataset, write_volumes, CategoryCounts, Dataset, ForwardModel,
    SimulationSettings,
};
use eit3d_core::forward::ConductivityField;
use eit3d_core::inverse::{build_laplace_regularizer, compute_jacobian, default_lambda, OneStepSolver};
use eit3d_core::metrics::{evaluate_method, evaluate_oracle, EvalReport, Reconstructor};
use eit3d_core::phantom::Category;
use eit3d_core::protocol::Protocol;
use eit3d_core::seed::{derive_seed, rng};
use eit3d_core::voxel::VoxelVolume;
use eit3d_net::{
    load_checkpoint, save_checkpoint, train_model, Architecture, Checkpoint, EpochRecord, NetError, Preset, TnNet,
    TnNetReconstructor, TrainData,
};

use crate::config::RunConfig;

#[derive(Clone, Debug)]
pub struct GenSummary {
    pub path: Option<PathBuf>,
    pub counts: CategoryCounts,
    pub seconds: f64,
}

impl GenSummary {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, n) in Category::ALL.iter().zip(self.counts) {
            writeln!(f, "  {:<8} {n}", c.label())?;
        }
        writeln!(f, "  {:<8} {}", "total", self.total())?;
        match &self.path {
            Some(p) => write!(f, "wrote {} in {:.1} s", p.display(), self.seconds),
            None => write!(f, "dry run, nothing written"),
        }
    }
}

/// Simulates the configured phantom counts and writes the dataset file.
/// With `dry_run` only the plan is reported.
pub fn cmd_gen_dataset(cfg: &RunConfig, out: &Path, dry_run: bool) -> Result<GenSummary> {
    cfg.validate()?;
    let protocol = cfg.build_protocol()?;
    if dry_run {
        return Ok(GenSummary { path: None, counts: cfg.counts, seconds: 0.0 });
    }
    let start = Instant::now();
    let model = ForwardModel::build(&cfg.simulation)?;
    let ds = generate_dataset(cfg.counts, &model.stack(&protocol, &cfg.simulation), cfg.seed)?;
    write_dataset(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(GenSummary { path: Some(out.to_path_buf()), counts: ds.category_counts(), seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub seconds: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} epochs in {:.1} s; best epoch {} (validation loss {:.6e})",
            self.epochs, self.seconds, self.best_epoch, self.best_validation_loss
        )
    }
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,validation_loss";

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(w, "{},{:e},{:e}", r.epoch, r.train_loss, r.validation_loss)?;
    }
    w.flush()?;
    Ok(())
}

/// Default loss-history path next to a checkpoint.
pub fn history_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("csv")
}

/// Trains the configured preset on the dataset's train split and saves the
/// best-validation snapshot. The history CSV is rewritten after every
/// epoch, so a diverged run leaves its partial history behind.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    out_checkpoint: &Path,
    history: &Path,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let arch = Architecture::preset(cfg.preset);
    if ds.frame_len() != arch.input_len {
        bail!("dataset frames have {} entries but the network expects {}", ds.frame_len(), arch.input_len);
    }
    let start = Instant::now();
    let mut seen: Vec<EpochRecord> = Vec::new();
    let mut io_error = None;
    let result = train_model(&TrainData::from_dataset(&ds), &arch, &cfg.train, |r| {
        seen.push(*r);
        if io_error.is_none() {
            io_error = write_history(history, &seen).err();
        }
        progress(r);
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let model = match result {
        Ok(m) => m,
        Err(NetError::Diverged { epoch, reason, history: partial }) => {
            write_history(history, &partial)?;
            bail!("training diverged at epoch {epoch}: {reason}; partial history in {}", history.display());
        }
        Err(e) => return Err(e.into()),
    };
    let summary = TrainSummary {
        epochs: model.history.len(),
        best_epoch: model.best_epoch,
        best_validation_loss: model.history[model.best_epoch - 1].validation_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    save_checkpoint(&Checkpoint::from(model), out_checkpoint)
        .with_context(|| format!("writing {}", out_checkpoint.display()))?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    TnNet,
    OneStep,
    Oracle,
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tn-net" => Ok(Method::TnNet),
            "one-step" => Ok(Method::OneStep),
            "oracle" => Ok(Method::Oracle),
            other => bail!("unknown method {other:?}, expected tn-net, one-step or oracle"),
        }
    }
}

/// Simulation context a baseline solver is linearized around.
pub struct LinearizationPoint<'a> {
    pub settings: &'a SimulationSettings,
    pub protocol: &'a Protocol,
    /// Homogeneous frame; simulated when absent.
    pub reference: Option<&'a [f64]>,
}

impl<'a> LinearizationPoint<'a> {
    pub fn of_dataset(ds: &'a Dataset) -> Self {
        Self { settings: &ds.meta.settings, protocol: &ds.meta.protocol, reference: Some(&ds.meta.reference_frame) }
    }
}

/// Normalized voxel Jacobian with the Laplacian prior at `lambda` (or the
/// default weight).
pub fn build_one_step(point: &LinearizationPoint<'_>, lambda: Option<f64>) -> Result<OneStepSolver> {
    let s = point.settings;
    let model = ForwardModel::build(s)?;
    let reference = match point.reference {
        Some(r) => r.to_vec(),
        None => reference_frame(&model.stack(point.protocol, s))?.values,
    };
    let sigma = ConductivityField::homogeneous(model.mesh.tet_count(), s.background_sigma);
    let j = compute_jacobian(&model.mesh, &sigma, &model.electrodes, point.protocol, s.amplitude, &model.vmap)?
        .normalized(&reference, s.contrast_scale)?;
    let reg = build_laplace_regularizer(&model.vmap);
    let lambda = lambda.unwrap_or_else(|| default_lambda(&j, &reg));
    Ok(OneStepSolver::new(&j, &reg, lambda)?)
}

pub fn load_network(checkpoint: &Path) -> Result<TnNetReconstructor> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok(TnNetReconstructor::new(ck.net))
}

/// Reads frames from a CSV file: one frame per line, comma separated.
pub fn read_frames_csv(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut frames = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let frame = line
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: not a list of numbers", path.display(), n + 1))?;
        frames.push(frame);
    }
    Ok(frames)
}

#[derive(Clone, Debug)]
pub struct ReconstructSummary {
    pub frames: usize,
    pub per_frame_seconds: Vec<f64>,
}

impl ReconstructSummary {
    pub fn mean_seconds(&self) -> f64 {
        self.per_frame_seconds.iter().sum::<f64>() / self.frames.max(1) as f64
    }
}

/// Reconstructs every frame and writes the volumes in the volume file
/// format.
pub fn cmd_reconstruct(method: &dyn Reconstructor, frames: &[Vec<f32>], out: &Path) -> Result<ReconstructSummary> {
    let mut volumes: Vec<VoxelVolume> = Vec::with_capacity(frames.len());
    let mut times = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let t = Instant::now();
        let v = method.reconstruct(f).map_err(|e| anyhow::anyhow!("frame {i}: {e}"))?;
        times.push(t.elapsed().as_secs_f64());
        volumes.push(v);
    }
    write_volumes(&volumes, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(ReconstructSummary { frames: frames.len(), per_frame_seconds: times })
}

/// Scores each method on the dataset's test split with seeded noise.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    ds: &Dataset,
    methods: &[Method],
    checkpoint: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    let test = &ds.meta.splits.test;
    if test.is_empty() {
        bail!("the dataset has an empty test split");
    }
    let (snr, seed) = (cfg.eval_noise_snr_db, cfg.eval_seed);
    let mut reports = Vec::with_capacity(methods.len());
    for m in methods {
        let report = match m {
            Method::Oracle => evaluate_oracle(ds, test, snr, seed)?,
            Method::OneStep => {
                let solver = build_one_step(&LinearizationPoint::of_dataset(ds), cfg.lambda)?;
                evaluate_method(&solver, ds, test, snr, seed)?
            }
            Method::TnNet => {
                let Some(path) = checkpoint else { bail!("tn-net needs a checkpoint") };
                evaluate_method(&load_network(path)?, ds, test, snr, seed)?
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    /// Preset name, or the checkpoint path when one was given.
    pub label: String,
    pub frames: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tn-net ({}) over {} frames: mean {:.2} ms, min {:.2} ms, max {:.2} ms per frame",
            self.label, self.frames, self.mean_ms, self.min_ms, self.max_ms
        )
    }
}

/// Times single-frame inference. Without a checkpoint the network is freshly
/// initialized from `seed`; the cost does not depend on the weights.
pub fn cmd_bench(preset: Preset, checkpoint: Option<&Path>, frames: usize, seed: u64) -> Result<BenchReport> {
    if frames == 0 {
        bail!("bench needs at least one frame");
    }
    let (net, label) = match checkpoint {
        Some(p) => (load_network(p)?, p.display().to_string()),
        None => {
            let net = TnNet::<f32>::init(&Architecture::preset(preset), &mut rng(seed))?;
            (TnNetReconstructor::new(net), format!("{preset:?}").to_lowercase())
        }
    };
    let len = net.net.architecture().input_len;
    let mut r = rng(derive_seed(seed, 1));
    let inputs: Vec<Vec<f32>> =
        (0..frames).map(|_| (0..len).map(|_| r.random_range(-0.05f32..0.05)).collect()).collect();
    net.reconstruct_frame(&inputs[0])?;
    let mut ms = Vec::with_capacity(frames);
    for x in &inputs {
        let t = Instant::now();
        std::hint::black_box(net.reconstruct_frame(x)?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchReport {
        label,
        frames,
        mean_ms: ms.iter().sum::<f64>() / frames as f64,
        min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: ms.iter().copied().fold(0.0, f64::max),
    })
}
