//! Measurement/volume training pairs: normalization, noise, generation and
//! the binary dataset and volume file formats.
//!
//! Dataset file layout (all integers little-endian):
//!
//! ```text
//! "EIT3DSET"  u32 version  u64 json_len  json_len bytes of JSON metadata
//! per record: frame_len × f32   40960 × f32   u32 CRC-32 of the two arrays
//! ```
//!
//! Volume file layout: `"EIT3DVOL"  u32 version  u64 count`, then per volume
//! 40960 × f32 and a CRC-32. Volumes run x fastest, then y, then z.

use crate::forward::{
    assemble_cem_system, ConductivityField, ElectrodeModel, ForwardError, MeasurementFrame,
    DEFAULT_AMPLITUDE, DEFAULT_BACKGROUND_SIGMA, DEFAULT_CONTACT_IMPEDANCE,
};
use crate::geometry::TankGeometry;
use crate::mesh::{build_tank_mesh, Mesh, MeshError};
use crate::phantom::{
    embed_in_mesh, rasterize_phantom, sample_phantom, Category, Phantom, PhantomConfig, PhantomError,
    DEFAULT_CONTRAST_SCALE,
};
use crate::protocol::Protocol;
use crate::seed;
use crate::voxel::{build_voxel_map, VoxelMap, VoxelVolume, VOXEL_COUNT};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DATASET_MAGIC: &[u8; 8] = b"EIT3DSET";
pub const DATASET_VERSION: u32 = 1;
pub const VOLUME_MAGIC: &[u8; 8] = b"EIT3DVOL";
pub const VOLUME_VERSION: u32 = 1;

/// Seed-tree branches below the master seed.
pub const PHANTOM_STREAM: u64 = 1;
pub const SPLIT_STREAM: u64 = 2;

/// Attempts per dataset item before generation gives up.
pub const ITEM_RETRIES: u64 = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reference entry {row} is zero")]
    ZeroReference { row: usize },
    #[error("frame length {got} does not match reference length {expected}")]
    Length { expected: usize, got: usize },
    #[error("frames come from different protocols ({0} vs {1})")]
    ProtocolMismatch(String, String),
    #[error("signal power is zero; SNR is undefined")]
    ZeroSignal,
    #[error("SNR must be finite, got {0}")]
    Snr(f64),
    #[error("item {index}: no usable phantom after {attempts} attempts: {last}")]
    Generation { index: usize, attempts: u64, last: String },
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("bad magic bytes; not a {0} file")]
    Magic(&'static str),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file is truncated ({0})")]
    Truncated(&'static str),
    #[error("record {record}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { record: usize, stored: u32, computed: u32 },
    #[error("unexpected data after the last record")]
    TrailingData,
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Relative voltage change `(v − v_ref) / |v_ref|` per protocol row.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFrame {
    pub values: Vec<f64>,
}

pub fn normalize_frame(v: &MeasurementFrame, v_ref: &MeasurementFrame) -> Result<NormalizedFrame, DatasetError> {
    if v.protocol_id != v_ref.protocol_id {
        return Err(DatasetError::ProtocolMismatch(
            v.protocol_id.clone(),
            v_ref.protocol_id.clone(),
        ));
    }
    normalize_values(&v.values, &v_ref.values).map(|values| NormalizedFrame { values })
}

pub fn normalize_values(v: &[f64], v_ref: &[f64]) -> Result<Vec<f64>, DatasetError> {
    if v.len() != v_ref.len() {
        return Err(DatasetError::Length {
            expected: v_ref.len(),
            got: v.len(),
        });
    }
    if let Some(row) = v_ref.iter().position(|r| *r == 0.0) {
        return Err(DatasetError::ZeroReference { row });
    }
    Ok(v.iter().zip(v_ref).map(|(a, r)| (a - r) / r.abs()).collect())
}

/// Adds white Gaussian noise of variance `mean(x²) / 10^(snr_db/10)`.
pub fn add_awgn(x: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>, DatasetError> {
    if !snr_db.is_finite() {
        return Err(DatasetError::Snr(snr_db));
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if !(power > 0.0) {
        return Err(DatasetError::ZeroSignal);
    }
    let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = seed::rng(seed);
    Ok(x.iter()
        .map(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + sd * n
        })
        .collect())
}

/// Noise on a stored single-precision frame. The arithmetic runs in double
/// precision and the result is rounded once.
pub fn add_awgn_f32(x: &[f32], snr_db: f64, seed: u64) -> Result<Vec<f32>, DatasetError> {
    let wide: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    Ok(add_awgn(&wide, snr_db, seed)?.into_iter().map(|v| v as f32).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// 80/10/10 split of a seeded shuffle; validation and test each take
    /// `⌊n/10⌋` items and training the rest. Each list is sorted.
    pub fn shuffled(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed));
        let tenth = n / 10;
        let mut validation = idx[..tenth].to_vec();
        let mut test = idx[tenth..2 * tenth].to_vec();
        let mut train = idx[2 * tenth..].to_vec();
        validation.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        Self {
            train,
            validation,
            test,
        }
    }

    /// Disjoint and covering `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Where a pair came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub category: Category,
    pub seed: u64,
    /// Number of rejected draws before this one.
    pub rejected: u64,
    pub phantom: Phantom,
}

/// Forward-model settings shared by every pair of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub geometry: TankGeometry,
    pub mesh_resolution: usize,
    pub background_sigma: f64,
    pub contrast_scale: f64,
    pub contact_impedance: f64,
    pub amplitude: f64,
    pub phantom: PhantomConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            geometry: TankGeometry::default(),
            mesh_resolution: 16,
            background_sigma: DEFAULT_BACKGROUND_SIGMA,
            contrast_scale: DEFAULT_CONTRAST_SCALE,
            contact_impedance: DEFAULT_CONTACT_IMPEDANCE,
            amplitude: DEFAULT_AMPLITUDE,
            phantom: PhantomConfig::default(),
        }
    }
}

/// Mesh, voxel map and electrodes built from simulation settings.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub mesh: Mesh,
    pub vmap: VoxelMap,
    pub electrodes: ElectrodeModel,
}

impl ForwardModel {
    pub fn build(settings: &SimulationSettings) -> Result<Self, DatasetError> {
        let mesh = build_tank_mesh(&settings.geometry, settings.mesh_resolution)?;
        let vmap = build_voxel_map(&mesh, &settings.geometry);
        let electrodes = ElectrodeModel::uniform(mesh.electrode_count(), settings.contact_impedance);
        Ok(Self {
            mesh,
            vmap,
            electrodes,
        })
    }

    pub fn stack<'a>(&'a self, protocol: &'a Protocol, settings: &'a SimulationSettings) -> ForwardStack<'a> {
        ForwardStack {
            mesh: &self.mesh,
            vmap: &self.vmap,
            electrodes: &self.electrodes,
            protocol,
            settings,
        }
    }
}

/// Per-category phantom counts in the order `2obj-, 2obj+-, 3obj-, 3obj+-`.
pub type CategoryCounts = [usize; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub settings: SimulationSettings,
    pub protocol: Protocol,
    pub master_seed: u64,
    pub counts: CategoryCounts,
    pub reference_frame: Vec<f64>,
    pub splits: Splits,
    pub provenance: Vec<Provenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Clean normalized frames.
    pub frames: Vec<Vec<f32>>,
    pub volumes: Vec<VoxelVolume>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.meta.protocol.len()
    }

    pub fn category_counts(&self) -> CategoryCounts {
        let mut c = [0; 4];
        for p in &self.meta.provenance {
            c[Category::ALL.iter().position(|k| *k == p.category).unwrap()] += 1;
        }
        c
    }
}

/// Everything `generate_dataset` needs besides the counts and the seed.
pub struct ForwardStack<'a> {
    pub mesh: &'a Mesh,
    pub vmap: &'a VoxelMap,
    pub electrodes: &'a ElectrodeModel,
    pub protocol: &'a Protocol,
    pub settings: &'a SimulationSettings,
}

/// Category of item `index` when items are laid out category by category.
pub fn category_of(counts: &CategoryCounts, index: usize) -> Option<Category> {
    let mut end = 0;
    for (k, &c) in counts.iter().enumerate() {
        end += c;
        if index < end {
            return Some(Category::ALL[k]);
        }
    }
    None
}

struct Item {
    frame: Vec<f32>,
    volume: VoxelVolume,
    provenance: Provenance,
}

fn generate_item(
    stack: &ForwardStack<'_>,
    reference: &[f64],
    category: Category,
    index: usize,
    master_seed: u64,
) -> Result<Item, DatasetError> {
    let s = stack.settings;
    let mut last = String::new();
    for attempt in 0..ITEM_RETRIES {
        let item_seed = seed::derive_path(master_seed, &[PHANTOM_STREAM, index as u64, attempt]);
        let result = (|| -> Result<Option<Item>, DatasetError> {
            let phantom = sample_phantom(category, item_seed, &s.geometry, &s.phantom)?;
            let sigma = embed_in_mesh(&phantom, stack.mesh, s.background_sigma, s.contrast_scale)?;
            if !every_object_resolved(&phantom, stack.mesh, &sigma, s.background_sigma) {
                return Ok(None);
            }
            let volume = rasterize_phantom(&phantom, stack.vmap);
            let frame = assemble_cem_system(stack.mesh, &sigma, stack.electrodes)?
                .factorize()?
                .simulate(stack.protocol, s.amplitude)?;
            let normalized = normalize_values(&frame.values, reference)?;
            Ok(Some(Item {
                frame: normalized.iter().map(|&v| v as f32).collect(),
                volume,
                provenance: Provenance {
                    category,
                    seed: item_seed,
                    rejected: attempt,
                    phantom,
                },
            }))
        })();
        match result {
            Ok(Some(item)) => return Ok(item),
            Ok(None) => last = "an object covers no element centroid".into(),
            Err(e) => last = e.to_string(),
        }
    }
    Err(DatasetError::Generation {
        index,
        attempts: ITEM_RETRIES,
        last,
    })
}

/// Whether each object changed the conductivity of at least one element;
/// objects smaller than the mesh would otherwise leave no trace in the
/// frame while still appearing in the target volume.
fn every_object_resolved(phantom: &Phantom, mesh: &Mesh, sigma: &ConductivityField, background: f64) -> bool {
    let mut hit = vec![false; phantom.objects.len()];
    for (t, s) in sigma.per_element.iter().enumerate() {
        if *s == background {
            continue;
        }
        let c = mesh.tet_centroid(t);
        if let Some(k) = phantom.objects.iter().rposition(|o| o.contains(c)) {
            hit[k] = true;
        }
    }
    hit.into_iter().all(|h| h)
}

/// Homogeneous frame of the forward stack.
pub fn reference_frame(stack: &ForwardStack<'_>) -> Result<MeasurementFrame, DatasetError> {
    let s = stack.settings;
    let sigma = ConductivityField::homogeneous(stack.mesh.tet_count(), s.background_sigma);
    Ok(assemble_cem_system(stack.mesh, &sigma, stack.electrodes)?
        .factorize()?
        .simulate(stack.protocol, s.amplitude)?)
}

/// Simulates `counts` phantoms per category. Items are independent and
/// seeded by position, so the result does not depend on the thread count.
pub fn generate_dataset(
    counts: CategoryCounts,
    stack: &ForwardStack<'_>,
    master_seed: u64,
) -> Result<Dataset, DatasetError> {
    let reference = reference_frame(stack)?;
    let total: usize = counts.iter().sum();
    let items: Vec<Item> = (0..total)
        .into_par_iter()
        .map(|i| {
            let cat = category_of(&counts, i).expect("index below total");
            generate_item(stack, &reference.values, cat, i, master_seed)
        })
        .collect::<Result<_, _>>()?;
    let mut frames = Vec::with_capacity(total);
    let mut volumes = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for it in items {
        frames.push(it.frame);
        volumes.push(it.volume);
        provenance.push(it.provenance);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            settings: stack.settings.clone(),
            protocol: stack.protocol.clone(),
            master_seed,
            counts,
            reference_frame: reference.values,
            splits: Splits::shuffled(total, seed::derive_seed(master_seed, SPLIT_STREAM)),
            provenance,
        },
        frames,
        volumes,
    })
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DatasetError::Truncated(what),
        _ => DatasetError::Io(e),
    })
}

fn read_header(r: &mut impl Read, magic: &[u8; 8], name: &'static str, version: u32) -> Result<(), DatasetError> {
    let mut m = [0u8; 8];
    read_exact_or(r, &mut m, "magic")?;
    if &m != magic {
        return Err(DatasetError::Magic(name));
    }
    let mut v = [0u8; 4];
    read_exact_or(r, &mut v, "version")?;
    let found = u32::from_le_bytes(v);
    if found != version {
        return Err(DatasetError::Version {
            found,
            expected: version,
        });
    }
    Ok(())
}

fn ensure_end(r: &mut impl Read) -> Result<(), DatasetError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(DatasetError::TrailingData),
    }
}

pub fn write_dataset_to(ds: &Dataset, mut w: impl Write) -> Result<(), DatasetError> {
    let json = serde_json::to_vec(&ds.meta).map_err(|e| DatasetError::Metadata(e.to_string()))?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut rec = Vec::with_capacity(4 * (ds.frame_len() + VOXEL_COUNT));
    for (f, v) in ds.frames.iter().zip(&ds.volumes) {
        rec.clear();
        put_f32s(&mut rec, f);
        put_f32s(&mut rec, &v.data);
        w.write_all(&rec)?;
        w.write_all(&crc32fast::hash(&rec).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from(mut r: impl Read) -> Result<Dataset, DatasetError> {
    read_header(&mut r, DATASET_MAGIC, "dataset", DATASET_VERSION)?;
    let mut len = [0u8; 8];
    read_exact_or(&mut r, &mut len, "metadata length")?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    read_exact_or(&mut r, &mut json, "metadata")?;
    let meta: DatasetMeta =
        serde_json::from_slice(&json).map_err(|e| DatasetError::Metadata(e.to_string()))?;
    let n = meta.provenance.len();
    if !meta.splits.is_partition_of(n) {
        return Err(DatasetError::Metadata("splits do not partition the records".into()));
    }
    let frame_len = meta.protocol.len();
    let mut rec = vec![0u8; 4 * (frame_len + VOXEL_COUNT)];
    let mut frames = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    for record in 0..n {
        read_exact_or(&mut r, &mut rec, "record payload")?;
        let mut crc = [0u8; 4];
        read_exact_or(&mut r, &mut crc, "record checksum")?;
        let stored = u32::from_le_bytes(crc);
        let computed = crc32fast::hash(&rec);
        if stored != computed {
            return Err(DatasetError::Checksum {
                record,
                stored,
                computed,
            });
        }
        frames.push(get_f32s(&rec[..4 * frame_len]));
        volumes.push(VoxelVolume {
            data: get_f32s(&rec[4 * frame_len..]),
        });
    }
    ensure_end(&mut r)?;
    Ok(Dataset {
        meta,
        frames,
        volumes,
    })
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path)?;
    write_dataset_to(ds, io::BufWriter::new(f))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let f = std::fs::File::open(path)?;
    read_dataset_from(io::BufReader::new(f))
}

pub fn write_volumes_to(volumes: &[VoxelVolume], mut w: impl Write) -> Result<(), DatasetError> {
    w.write_all(VOLUME_MAGIC)?;
    w.write_all(&VOLUME_VERSION.to_le_bytes())?;
    w.write_all(&(volumes.len() as u64).to_le_bytes())?;
    let mut rec = Vec::with_capacity(4 * VOXEL_COUNT);
    for v in volumes {
        rec.clear();
        put_f32s(&mut rec, &v.data);
        w.write_all(&rec)?;
        w.write_all(&crc32fast::hash(&rec).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_volumes_from(mut r: impl Read) -> Result<Vec<VoxelVolume>, DatasetError> {
    read_header(&mut r, VOLUME_MAGIC, "volume", VOLUME_VERSION)?;
    let mut n = [0u8; 8];
    read_exact_or(&mut r, &mut n, "volume count")?;
    let n = u64::from_le_bytes(n) as usize;
    let mut rec = vec![0u8; 4 * VOXEL_COUNT];
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for record in 0..n {
        read_exact_or(&mut r, &mut rec, "volume payload")?;
        let mut crc = [0u8; 4];
        read_exact_or(&mut r, &mut crc, "volume checksum")?;
        let stored = u32::from_le_bytes(crc);
        let computed = crc32fast::hash(&rec);
        if stored != computed {
            return Err(DatasetError::Checksum {
                record,
                stored,
                computed,
            });
        }
        out.push(VoxelVolume { data: get_f32s(&rec) });
    }
    ensure_end(&mut r)?;
    Ok(out)
}

pub fn write_volumes(volumes: &[VoxelVolume], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path)?;
    write_volumes_to(volumes, io::BufWriter::new(f))
}

pub fn read_volumes(path: impl AsRef<Path>) -> Result<Vec<VoxelVolume>, DatasetError> {
    let f = std::fs::File::open(path)?;
    read_volumes_from(io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(values: Vec<f64>) -> MeasurementFrame {
        MeasurementFrame {
            values,
            protocol_id: "p".into(),
        }
    }

    #[test]
    fn normalization_identities() {
        let r = frame(vec![1.0, -2.0, 0.5]);
        assert_eq!(normalize_frame(&r, &r).unwrap().values, vec![0.0; 3]);
        let pos = frame(vec![1.0, 2.0, 0.5]);
        let twice = frame(vec![2.0, 4.0, 1.0]);
        assert_eq!(normalize_frame(&twice, &pos).unwrap().values, vec![1.0; 3]);
        assert!(matches!(
            normalize_frame(&r, &frame(vec![1.0, 0.0, 1.0])),
            Err(DatasetError::ZeroReference { row: 1 })
        ));
    }

    #[test]
    fn awgn_realized_snr() {
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for s in 0..5 {
            let y = add_awgn(&x, 35.0, s).unwrap();
            let noise: f64 = x.iter().zip(&y).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / n as f64;
            let snr = 10.0 * (1.0 / noise).log10();
            assert!((snr - 35.0).abs() < 0.3, "{snr}");
        }
    }

    #[test]
    fn awgn_edge_cases() {
        let x = vec![0.3, -0.1, 0.7];
        let y = add_awgn(&x, 300.0, 1).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(add_awgn(&x, 30.0, 9).unwrap(), add_awgn(&x, 30.0, 9).unwrap());
        assert_ne!(add_awgn(&x, 30.0, 9).unwrap(), add_awgn(&x, 30.0, 10).unwrap());
        assert!(matches!(add_awgn(&[0.0; 4], 30.0, 1), Err(DatasetError::ZeroSignal)));
        assert!(matches!(add_awgn(&x, f64::NAN, 1), Err(DatasetError::Snr(_))));
    }

    #[test]
    fn split_sizes() {
        let s = Splits::shuffled(40, 7);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (32, 4, 4));
        assert!(s.is_partition_of(40));
        assert_eq!(s, Splits::shuffled(40, 7));
        let e = Splits::shuffled(0, 7);
        assert!(e.is_partition_of(0));
    }

    #[test]
    fn categories_are_laid_out_in_order() {
        let c = [1, 0, 2, 1];
        let got: Vec<_> = (0..5).map(|i| category_of(&c, i)).collect();
        assert_eq!(
            got,
            vec![
                Some(Category::TwoNegative),
                Some(Category::ThreeNegative),
                Some(Category::ThreeNegative),
                Some(Category::ThreeMixed),
                None
            ]
        );
        assert_eq!([4352usize, 4520, 7201, 5062].iter().sum::<usize>(), 21_135);
    }

    #[test]
    fn volume_file_round_trip_and_corruption() {
        let mut v = VoxelVolume::zeros();
        v.data[5] = 0.25;
        v.data[VOXEL_COUNT - 1] = -1.0;
        let mut buf = Vec::new();
        write_volumes_to(&[v.clone(), VoxelVolume::filled(0.5)], &mut buf).unwrap();
        let back = read_volumes_from(&buf[..]).unwrap();
        assert_eq!(back[0], v);
        buf[20 + 4 * 5] ^= 1;
        assert!(matches!(read_volumes_from(&buf[..]), Err(DatasetError::Checksum { record: 0, .. })));
        buf[20 + 4 * 5] ^= 1;
        assert!(matches!(
            read_volumes_from(&buf[..buf.len() - 3]),
            Err(DatasetError::Truncated(_))
        ));
    }
}
