//! Physical description of the cylindrical sensor tank.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("tank radius and height must be positive (radius {radius}, height {height})")]
    NonPositiveExtent { radius: f64, height: f64 },
    #[error("ring heights must satisfy 0 < z0 < z1 < height, got {0:?}")]
    RingOrder([f64; 2]),
    #[error("electrode band of ring {ring} leaves the tank or overlaps the other ring")]
    RingBand { ring: usize },
    #[error("electrode dimensions must be positive")]
    ElectrodeSize,
    #[error("{count} electrodes of width {width} m do not fit on a ring of circumference {circumference} m")]
    RingOverfull {
        count: usize,
        width: f64,
        circumference: f64,
    },
    #[error("need at least 4 electrodes per ring, got {0}")]
    TooFewElectrodes(usize),
}

/// Tank of radius `radius` standing on `z = 0`, with two rings of square-ish
/// electrodes centred at `ring_heights`. Electrode `k` of ring `q` has global
/// index `q * electrodes_per_ring + k` and is centred at azimuth
/// `2πk / electrodes_per_ring`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankGeometry {
    pub radius: f64,
    pub height: f64,
    pub ring_heights: [f64; 2],
    pub electrodes_per_ring: usize,
    pub electrode_width: f64,
    pub electrode_height: f64,
}

impl Default for TankGeometry {
    fn default() -> Self {
        Self {
            radius: 0.10,
            height: 0.30,
            ring_heights: [0.10, 0.20],
            electrodes_per_ring: 16,
            electrode_width: 0.02,
            electrode_height: 0.02,
        }
    }
}

impl TankGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0 && self.height > 0.0) {
            return Err(GeometryError::NonPositiveExtent {
                radius: self.radius,
                height: self.height,
            });
        }
        let [z0, z1] = self.ring_heights;
        if !(0.0 < z0 && z0 < z1 && z1 < self.height) {
            return Err(GeometryError::RingOrder(self.ring_heights));
        }
        if !(self.electrode_width > 0.0 && self.electrode_height > 0.0) {
            return Err(GeometryError::ElectrodeSize);
        }
        if self.electrodes_per_ring < 4 {
            return Err(GeometryError::TooFewElectrodes(self.electrodes_per_ring));
        }
        let circumference = 2.0 * PI * self.radius;
        if self.electrodes_per_ring as f64 * self.electrode_width >= circumference {
            return Err(GeometryError::RingOverfull {
                count: self.electrodes_per_ring,
                width: self.electrode_width,
                circumference,
            });
        }
        let half = 0.5 * self.electrode_height;
        if z0 - half <= 0.0 || z0 + half >= z1 - half {
            return Err(GeometryError::RingBand { ring: 0 });
        }
        if z1 + half >= self.height {
            return Err(GeometryError::RingBand { ring: 1 });
        }
        Ok(())
    }

    pub fn electrode_count(&self) -> usize {
        2 * self.electrodes_per_ring
    }

    /// Azimuth of the electrode centre.
    pub fn electrode_angle(&self, electrode: usize) -> f64 {
        let k = electrode % self.electrodes_per_ring;
        2.0 * PI * k as f64 / self.electrodes_per_ring as f64
    }

    pub fn electrode_z(&self, electrode: usize) -> f64 {
        self.ring_heights[electrode / self.electrodes_per_ring]
    }

    /// Half of the angle subtended by one electrode.
    pub fn electrode_half_angle(&self) -> f64 {
        0.5 * self.electrode_width / self.radius
    }

    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.height
    }
}

/// Wrap an angle difference into `(-π, π]`.
pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}
