use serde::{Deserialize, Serialize};

use crate::layers::{transposed_extent, ConvGeometry};
use crate::NetError;

/// Target grid `(depth, height, width)`: 40 slices of 32×32.
pub const OUTPUT_GRID: [usize; 3] = [40, 32, 32];

/// Layer widths and fixed hyperparameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_len: usize,
    pub fc_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub latent_channels: usize,
    pub latent_extent: usize,
    /// Output channels of each transposed convolution; the last must be 1.
    pub deconv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub output_grid: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(NetError::Architecture(format!("unknown preset {other:?}, expected full or desk"))),
        }
    }
}

impl Architecture {
    pub fn full() -> Self {
        Self::with_widths(vec![256, 512, 1024], 16, vec![128, 64, 32, 1])
    }

    /// Width-reduced variant for CPU training.
    pub fn desk() -> Self {
        Self::with_widths(vec![64, 128, 512], 8, vec![32, 16, 8, 1])
    }

    /// Minimal widths for smoke runs and tests.
    pub fn tiny() -> Self {
        Self::with_widths(vec![32, 128], 2, vec![8, 8, 4, 1])
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::full(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn with_widths(fc_sizes: Vec<usize>, latent_channels: usize, deconv_channels: Vec<usize>) -> Self {
        Self {
            input_len: 208,
            fc_sizes,
            dropout_rate: 0.2,
            latent_channels,
            latent_extent: 4,
            deconv_channels,
            kernel: 4,
            stride: 2,
            padding: 1,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            output_grid: OUTPUT_GRID,
        }
    }

    pub fn latent_len(&self) -> usize {
        self.latent_channels * self.latent_extent.pow(3)
    }

    /// Geometry of every transposed convolution in order.
    pub fn conv_geometries(&self) -> Vec<ConvGeometry> {
        let mut c_in = self.latent_channels;
        let mut e = self.latent_extent;
        let mut out = Vec::new();
        for &c_out in &self.deconv_channels {
            match ConvGeometry::new(c_in, c_out, self.kernel, self.stride, self.padding, [e; 3]) {
                Some(g) => {
                    e = g.output[0];
                    c_in = c_out;
                    out.push(g);
                }
                None => break,
            }
        }
        out
    }

    /// Extent of the cubic volume before resampling.
    pub fn final_extent(&self) -> Option<usize> {
        self.deconv_channels.iter().try_fold(self.latent_extent, |e, _| {
            transposed_extent(e, self.kernel, self.stride, self.padding).filter(|&o| o > 0)
        })
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Architecture(m));
        if self.input_len == 0 || self.fc_sizes.is_empty() || self.fc_sizes.contains(&0) {
            return bad("fully connected sizes must be positive and non-empty".into());
        }
        if self.fc_sizes.last() != Some(&self.latent_len()) {
            return bad(format!(
                "last fully connected size {:?} does not reshape into {}x{}^3",
                self.fc_sizes.last(),
                self.latent_channels,
                self.latent_extent
            ));
        }
        if self.deconv_channels.is_empty() || self.deconv_channels.contains(&0) {
            return bad("transposed convolution channels must be positive and non-empty".into());
        }
        if self.deconv_channels.last() != Some(&1) {
            return bad("the last transposed convolution must produce one channel".into());
        }
        if self.final_extent().is_none() || self.conv_geometries().len() != self.deconv_channels.len() {
            return bad("transposed convolution chain collapses to an empty volume".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.leaky_slope > 0.0) || !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("leaky slope, batch-norm epsilon and momentum must be positive".into());
        }
        if self.output_grid.contains(&0) {
            return bad("output grid extents must be positive".into());
        }
        Ok(())
    }
}
