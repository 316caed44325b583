//! Stimulation/measurement protocols.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("need at least 4 electrodes per ring, got {0}")]
    TooFewElectrodes(usize),
    #[error("need at least one ring")]
    NoRings,
    #[error("row {row}: measurement pair touches the injection pair")]
    MeasurementTouchesInjection { row: usize },
    #[error("row {row}: injection electrodes must differ")]
    DegenerateInjection { row: usize },
    #[error("row {row}: electrode index {index} out of range for {count} electrodes")]
    OutOfRange {
        row: usize,
        index: usize,
        count: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One line of a protocol, 0-based electrode indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub inject_pos: usize,
    pub inject_neg: usize,
    pub meas_pos: usize,
    pub meas_neg: usize,
}

impl ProtocolRow {
    pub fn injection(&self) -> (usize, usize) {
        (self.inject_pos, self.inject_neg)
    }

    pub fn measurement(&self) -> (usize, usize) {
        (self.meas_pos, self.meas_neg)
    }

    /// Drive and measurement pairs exchanged.
    pub fn reciprocal(&self) -> ProtocolRow {
        ProtocolRow {
            inject_pos: self.meas_pos,
            inject_neg: self.meas_neg,
            meas_pos: self.inject_pos,
            meas_neg: self.inject_neg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub id: String,
    pub rows: Vec<ProtocolRow>,
}

impl Protocol {
    pub fn new(id: impl Into<String>, rows: Vec<ProtocolRow>) -> Result<Self, ProtocolError> {
        for (i, r) in rows.iter().enumerate() {
            if r.inject_pos == r.inject_neg {
                return Err(ProtocolError::DegenerateInjection { row: i });
            }
            let inj = [r.inject_pos, r.inject_neg];
            if inj.contains(&r.meas_pos) || inj.contains(&r.meas_neg) {
                return Err(ProtocolError::MeasurementTouchesInjection { row: i });
            }
        }
        Ok(Self {
            id: id.into(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct injection pairs in order of first use.
    pub fn injections(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.injection()) {
                out.push(r.injection());
            }
        }
        out
    }

    /// Distinct measurement pairs in order of first use.
    pub fn measurements(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.measurement()) {
                out.push(r.measurement());
            }
        }
        out
    }

    pub fn check_electrode_count(&self, count: usize) -> Result<(), ProtocolError> {
        for (i, r) in self.rows.iter().enumerate() {
            for index in [r.inject_pos, r.inject_neg, r.meas_pos, r.meas_neg] {
                if index >= count {
                    return Err(ProtocolError::OutOfRange {
                        row: i,
                        index,
                        count,
                    });
                }
            }
        }
        Ok(())
    }

    /// One quadruple of 1-based electrode indices per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                r.inject_pos + 1,
                r.inject_neg + 1,
                r.meas_pos + 1,
                r.meas_neg + 1
            );
        }
        s
    }

    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_text(id: impl Into<String>, text: &str) -> Result<Self, ProtocolError> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
            let nums = nums.map_err(|e| ProtocolError::Parse {
                line: ln + 1,
                message: e.to_string(),
            })?;
            if nums.len() != 4 || nums.contains(&0) {
                return Err(ProtocolError::Parse {
                    line: ln + 1,
                    message: "expected four 1-based electrode indices".into(),
                });
            }
            rows.push(ProtocolRow {
                inject_pos: nums[0] - 1,
                inject_neg: nums[1] - 1,
                meas_pos: nums[2] - 1,
                meas_neg: nums[3] - 1,
            });
        }
        Protocol::new(id, rows)
    }
}

/// Adjacent protocol over stacked rings. Each ring contributes the
/// non-overlapping adjacent injection pairs `(2k, 2k+1)`; injections
/// alternate between rings. For every injection all adjacent pairs of the
/// same ring that avoid both injecting electrodes are measured, in
/// increasing order of their first electrode.
pub fn generate_adjacent_protocol(
    electrodes_per_ring: usize,
    rings: usize,
) -> Result<Protocol, ProtocolError> {
    if electrodes_per_ring < 4 {
        return Err(ProtocolError::TooFewElectrodes(electrodes_per_ring));
    }
    if rings == 0 {
        return Err(ProtocolError::NoRings);
    }
    let e = electrodes_per_ring;
    let mut rows = Vec::new();
    for k in 0..e / 2 {
        for ring in 0..rings {
            let base = ring * e;
            let a = 2 * k;
            let (ip, ineg) = (base + a, base + (a + 1) % e);
            for m in 0..e {
                let (mp, mn) = (base + m, base + (m + 1) % e);
                if [ip, ineg].contains(&mp) || [ip, ineg].contains(&mn) {
                    continue;
                }
                rows.push(ProtocolRow {
                    inject_pos: ip,
                    inject_neg: ineg,
                    meas_pos: mp,
                    meas_neg: mn,
                });
            }
        }
    }
    Protocol::new(format!("adjacent-{e}x{rings}"), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_208_rows() {
        let p = generate_adjacent_protocol(16, 2).unwrap();
        assert_eq!(p.len(), 208);
        assert_eq!(p.injections().len(), 16);
    }

    #[test]
    fn thirteen_measurements_per_injection() {
        // Brute force: of the 16 adjacent pairs on a ring, those sharing an
        // electrode with the adjacent injection pair (a, a+1) are
        // (a-1, a), (a, a+1) and (a+1, a+2).
        let e = 16;
        let p = generate_adjacent_protocol(e, 2).unwrap();
        for inj in p.injections() {
            let count = p.rows.iter().filter(|r| r.injection() == inj).count();
            let expected = (0..e)
                .filter(|&m| {
                    let pair = [m, (m + 1) % e];
                    let a = inj.0 % e;
                    !pair.contains(&a) && !pair.contains(&((a + 1) % e))
                })
                .count();
            assert_eq!(expected, 13);
            assert_eq!(count, expected);
        }
    }

    #[test]
    fn measurement_never_touches_injection() {
        let p = generate_adjacent_protocol(16, 2).unwrap();
        for r in &p.rows {
            let inj = [r.inject_pos, r.inject_neg];
            assert!(!inj.contains(&r.meas_pos) && !inj.contains(&r.meas_neg));
        }
    }

    #[test]
    fn injections_alternate_rings() {
        let p = generate_adjacent_protocol(16, 2).unwrap();
        for (i, inj) in p.injections().iter().enumerate() {
            assert_eq!(inj.0 / 16, i % 2);
        }
    }

    #[test]
    fn text_round_trip() {
        let p = generate_adjacent_protocol(8, 2).unwrap();
        let q = Protocol::from_text(p.id.clone(), &p.to_text()).unwrap();
        assert_eq!(p, q);
        assert!(p.to_text().starts_with("1 2 3 4\n"));
    }

    #[test]
    fn rejects_bad_rows() {
        assert_eq!(
            Protocol::from_text("x", "1 2 2 3\n"),
            Err(ProtocolError::MeasurementTouchesInjection { row: 0 })
        );
        assert!(matches!(
            Protocol::from_text("x", "0 2 3 4\n"),
            Err(ProtocolError::Parse { line: 1, .. })
        ));
        assert_eq!(
            generate_adjacent_protocol(3, 2),
            Err(ProtocolError::TooFewElectrodes(3))
        );
    }
}
