//! Volume quality metrics and timed evaluation of reconstruction methods.

use crate::dataset::{add_awgn_f32, Dataset};
use crate::seed;
use crate::voxel::{VoxelVolume, GRID_X, GRID_Y, GRID_Z};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

pub const DATA_RANGE: f64 = 2.0;
pub const SSIM_WINDOW: usize = 7;
/// Reported PSNR of identical volumes.
pub const PSNR_CAP_DB: f64 = 200.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0} vs {1} values")]
    Shape(usize, usize),
    #[error("volume {dims:?} is smaller than the {window}³ window")]
    TooSmall { dims: [usize; 3], window: usize },
    #[error("data range must be positive, got {0}")]
    DataRange(f64),
    #[error("no samples to evaluate")]
    Empty,
}

fn check(a: &[f32], b: &[f32]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Shape(a.len(), b.len()));
    }
    Ok(())
}

pub fn rmse_values(a: &[f32], b: &[f32]) -> Result<f64, MetricsError> {
    check(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok((s / a.len() as f64).sqrt())
}

pub fn rmse(a: &VoxelVolume, b: &VoxelVolume) -> Result<f64, MetricsError> {
    rmse_values(&a.data, &b.data)
}

/// `20 log10(data_range / rmse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_rmse(rmse: f64, data_range: f64) -> Result<f64, MetricsError> {
    if !(data_range > 0.0) {
        return Err(MetricsError::DataRange(data_range));
    }
    if rmse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (data_range / rmse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(a: &VoxelVolume, b: &VoxelVolume, data_range: f64) -> Result<f64, MetricsError> {
    psnr_from_rmse(rmse(a, b)?, data_range)
}

/// Sums over every `w`-long window along one axis ("valid" positions only).
/// `dims` is x-fastest; returns the reduced array and its new dims.
fn box_sum(src: &[f64], dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - w;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let [ox, oy, oz] = out_dims;
    let mut out = vec![0.0; ox * oy * oz];
    for k in 0..oz {
        for j in 0..oy {
            for i in 0..ox {
                let base = i + dims[0] * (j + dims[1] * k);
                let mut s = 0.0;
                for t in 0..w {
                    s += src[base + t * stride];
                }
                out[i + ox * (j + oy * k)] = s;
            }
        }
    }
    (out, out_dims)
}

fn window_sums(v: &[f64], dims: [usize; 3], w: usize) -> Vec<f64> {
    let (a, d) = box_sum(v, dims, 0, w);
    let (b, d) = box_sum(&a, d, 1, w);
    box_sum(&b, d, 2, w).0
}

/// Mean SSIM over all window positions that fit inside the volume, with
/// uniform `window³` weights and population (÷N) moments.
pub fn ssim3d_values(
    a: &[f32],
    b: &[f32],
    dims: [usize; 3],
    window: usize,
    data_range: f64,
) -> Result<f64, MetricsError> {
    check(a, b)?;
    if a.len() != dims.iter().product::<usize>() {
        return Err(MetricsError::Shape(a.len(), dims.iter().product()));
    }
    if !(data_range > 0.0) {
        return Err(MetricsError::DataRange(data_range));
    }
    if window == 0 || dims.iter().any(|&d| d < window) {
        return Err(MetricsError::TooSmall { dims, window });
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let n = (window * window * window) as f64;
    let sx = window_sums(&x, dims, window);
    let sy = window_sums(&y, dims, window);
    let sxx = window_sums(&xx, dims, window);
    let syy = window_sums(&yy, dims, window);
    let sxy = window_sums(&xy, dims, window);
    let mut total = 0.0;
    for k in 0..sx.len() {
        let (mx, my) = (sx[k] / n, sy[k] / n);
        let vx = sxx[k] / n - mx * mx;
        let vy = syy[k] / n - my * my;
        let cxy = sxy[k] / n - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / sx.len() as f64)
}

pub fn ssim3d(a: &VoxelVolume, b: &VoxelVolume) -> Result<f64, MetricsError> {
    ssim3d_values(&a.data, &b.data, [GRID_X, GRID_Y, GRID_Z], SSIM_WINDOW, DATA_RANGE)
}

pub type ReconstructError = Box<dyn std::error::Error + Send + Sync>;

/// Anything that turns a normalized frame into a volume.
pub trait Reconstructor {
    fn label(&self) -> String;

    fn reconstruct(&self, frame: &[f32]) -> Result<VoxelVolume, ReconstructError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub inference_time: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mean_rmse: f64,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    pub mean_inference_time: f64,
    pub noise_snr_db: f64,
    pub seed: u64,
    pub failures: usize,
    pub samples: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn from_samples(method: String, noise_snr_db: f64, seed: u64, samples: Vec<SampleRecord>) -> Self {
        let ok: Vec<&SampleRecord> = samples.iter().filter(|s| s.error.is_none()).collect();
        let n = ok.len().max(1) as f64;
        let mean = |f: fn(&SampleRecord) -> f64| ok.iter().map(|s| f(s)).sum::<f64>() / n;
        Self {
            method,
            mean_rmse: mean(|s| s.rmse),
            mean_ssim: mean(|s| s.ssim),
            mean_psnr: mean(|s| s.psnr),
            mean_inference_time: mean(|s| s.inference_time),
            noise_snr_db,
            seed,
            failures: samples.len() - ok.len(),
            samples,
        }
    }
}

/// Text table with one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>12} {:>8} {:>10} {:>16}",
        "Method", "RMSE", "SSIM", "PSNR", "Inference Time"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>12.4e} {:>8.4} {:>7.3} dB {:>14.4} s",
            r.method, r.mean_rmse, r.mean_ssim, r.mean_psnr, r.mean_inference_time
        );
        if r.failures > 0 {
            let _ = writeln!(s, "  ({} failed samples excluded)", r.failures);
        }
    }
    s
}

/// Evaluates `method` on `indices` of `ds`. Frame `i` receives noise seeded
/// by `derive_seed(seed, i)`, so every method sees identical inputs.
pub fn evaluate_method(
    method: &dyn Reconstructor,
    ds: &Dataset,
    indices: &[usize],
    noise_snr_db: f64,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    evaluate(method.label(), ds, indices, noise_snr_db, seed, |frame| method.reconstruct(frame), false)
}

/// Oracle row: returns each sample's ground truth, timed like a method.
pub fn evaluate_oracle(ds: &Dataset, indices: &[usize], noise_snr_db: f64, seed: u64) -> Result<EvalReport, MetricsError> {
    evaluate("oracle".into(), ds, indices, noise_snr_db, seed, |_| Ok(VoxelVolume::zeros()), true)
}

fn evaluate(
    label: String,
    ds: &Dataset,
    indices: &[usize],
    noise_snr_db: f64,
    seed: u64,
    run: impl Fn(&[f32]) -> Result<VoxelVolume, ReconstructError>,
    truth_as_output: bool,
) -> Result<EvalReport, MetricsError> {
    if indices.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut samples = Vec::with_capacity(indices.len());
    for &i in indices {
        let truth = &ds.volumes[i];
        let frame = match add_awgn_f32(&ds.frames[i], noise_snr_db, seed::derive_seed(seed, i as u64)) {
            Ok(f) => f,
            Err(e) => {
                samples.push(failed(i, e.to_string()));
                continue;
            }
        };
        let start = Instant::now();
        let out = if truth_as_output {
            Ok(truth.clone())
        } else {
            run(&frame)
        };
        let elapsed = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        match out {
            Ok(vol) => {
                let r = rmse(&vol, truth)?;
                samples.push(SampleRecord {
                    index: i,
                    rmse: r,
                    ssim: ssim3d(&vol, truth)?,
                    psnr: psnr_from_rmse(r, DATA_RANGE)?,
                    inference_time: elapsed,
                    error: None,
                });
            }
            Err(e) => samples.push(failed(i, e.to_string())),
        }
    }
    Ok(EvalReport::from_samples(label, noise_snr_db, seed, samples))
}

/// Failed samples carry zeros so the report stays valid JSON; `error`
/// marks them and the means skip them.
fn failed(index: usize, error: String) -> SampleRecord {
    SampleRecord {
        index,
        rmse: 0.0,
        ssim: 0.0,
        psnr: 0.0,
        inference_time: 0.0,
        error: Some(error),
    }
}
