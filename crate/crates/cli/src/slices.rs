//! Grayscale slice export. Values map linearly from `[-1, 1]` to
//! `[0, 255]` (`round((v + 1) / 2 · 255)`, clamped), so -1 is black, 0 is
//! mid-gray 128 and +1 is white.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eit3d_core::voxel::{VoxelVolume, GRID_X, GRID_Y, GRID_Z};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => bail!("unknown axis {other:?}, expected x, y or z"),
        }
    }
}

impl Axis {
    pub fn extent(self) -> usize {
        match self {
            Axis::X => GRID_X,
            Axis::Y => GRID_Y,
            Axis::Z => GRID_Z,
        }
    }

    fn name(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

/// Plane `index` along `axis` as `(rows, cols, values)` in row-major order.
/// A z slice has rows `j` and columns `i`; x and y slices have rows `k`
/// (top of the image is the top of the tank).
pub fn slice(vol: &VoxelVolume, axis: Axis, index: usize) -> Result<(usize, usize, Vec<f32>)> {
    if index >= axis.extent() {
        bail!("slice index {index} out of range for axis {} (0..{})", axis.name(), axis.extent());
    }
    let (rows, cols) = match axis {
        Axis::Z => (GRID_Y, GRID_X),
        Axis::Y => (GRID_Z, GRID_X),
        Axis::X => (GRID_Z, GRID_Y),
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(match axis {
                Axis::Z => vol.get(c, r, index),
                Axis::Y => vol.get(c, index, GRID_Z - 1 - r),
                Axis::X => vol.get(index, c, GRID_Z - 1 - r),
            });
        }
    }
    Ok((rows, cols, out))
}

pub fn gray_level(v: f32) -> u8 {
    ((v as f64 + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Binary 8-bit portable graymap.
pub fn encode_pgm(rows: usize, cols: usize, values: &[f32]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| gray_level(v)));
    out
}

/// One line per image row; values printed with the shortest exact
/// representation.
pub fn encode_csv(cols: usize, values: &[f32]) -> String {
    let mut s = String::new();
    for row in values.chunks(cols) {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes `slice_<axis><index>.pgm` and `.csv` for each requested index and
/// returns the written paths.
pub fn cmd_export_slices(vol: &VoxelVolume, axis: Axis, indices: &[usize], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if indices.is_empty() {
        bail!("no slice indices given");
    }
    let planes = indices.iter().map(|&i| slice(vol, axis, i)).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::with_capacity(2 * indices.len());
    for (&i, (rows, cols, values)) in indices.iter().zip(planes) {
        let stem = out_dir.join(format!("slice_{}{i:03}", axis.name()));
        let pgm = stem.with_extension("pgm");
        let csv = stem.with_extension("csv");
        std::fs::write(&pgm, encode_pgm(rows, cols, &values)).with_context(|| format!("writing {}", pgm.display()))?;
        std::fs::write(&csv, encode_csv(cols, &values)).with_context(|| format!("writing {}", csv.display()))?;
        written.extend([pgm, csv]);
    }
    Ok(written)
}
