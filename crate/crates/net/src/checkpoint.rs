//! Checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "TNNETCKP" | u32 version | u64 n | n bytes JSON {architecture, meta}
//! per trainable tensor in canonical order, then per running statistic:
//!     u64 count | count × f32
//! u32 CRC-32 of everything above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::model::TnNet;
use crate::train::{EpochRecord, TrainConfig, TrainedModel};
use crate::NetError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TNNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub best_epoch: Option<usize>,
    pub train_config: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: TnNet<f32>,
    pub meta: CheckpointMeta,
}

impl From<TrainedModel> for Checkpoint {
    fn from(m: TrainedModel) -> Self {
        Self {
            net: m.net,
            meta: CheckpointMeta { best_epoch: Some(m.best_epoch), train_config: Some(m.config), history: m.history },
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>, NetError> {
    let header = Header { architecture: ck.net.architecture().clone(), meta: ck.meta.clone() };
    let json = serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ck.net.params().into_iter().chain(ck.net.buffers()) {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NetError> {
        if self.buf.len() - self.pos < n {
            return Err(NetError::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NetError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic bytes; not a checkpoint".into()));
    }
    if bytes.len() < 16 {
        return Err(NetError::Checkpoint("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(NetError::Checkpoint(format!(
            "checksum mismatch (stored {stored:08x}, computed {computed:08x}); file truncated or corrupted"
        )));
    }
    let mut cur = Cursor { buf: body, pos: 12 };
    let n = cur.u64("header length")? as usize;
    let header: Header =
        serde_json::from_slice(cur.take(n, "header")?).map_err(|e| NetError::Checkpoint(format!("header: {e}")))?;
    let mut net = TnNet::<f32>::zeros(&header.architecture)?;
    let names: Vec<String> = net
        .param_info()
        .into_iter()
        .map(|p| p.name)
        .chain((0..net.bn.len()).flat_map(|i| [format!("bn{i}.running_mean"), format!("bn{i}.running_var")]))
        .collect();
    let (trainable, buffers) = split_params(&mut net);
    for (k, slot) in trainable.into_iter().chain(buffers).enumerate() {
        let count = cur.u64("tensor length")? as usize;
        if count != slot.len() {
            return Err(NetError::Shape {
                what: format!("checkpoint tensor {}", names[k]),
                expected: vec![slot.len()],
                actual: vec![count],
            });
        }
        let raw = cur.take(4 * count, "tensor data")?;
        for (v, c) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
    }
    if cur.pos != body.len() {
        return Err(NetError::Checkpoint("unexpected data after the last tensor".into()));
    }
    if net.bn.iter().any(|b| b.running_var.iter().any(|&v| !(v >= 0.0))) {
        return Err(NetError::Checkpoint("negative running variance".into()));
    }
    Ok(Checkpoint { net, meta: header.meta })
}

fn split_params(net: &mut TnNet<f32>) -> (Vec<&mut [f32]>, Vec<&mut [f32]>) {
    let mut trainable: Vec<&mut [f32]> = Vec::new();
    let mut buffers: Vec<&mut [f32]> = Vec::new();
    for l in &mut net.fc {
        trainable.push(&mut l.weight);
        trainable.push(&mut l.bias);
    }
    let mut bns = net.bn.iter_mut();
    for d in &mut net.deconv {
        trainable.push(&mut d.weight);
        if let Some(b) = &mut d.bias {
            trainable.push(b);
        }
        if let Some(bn) = bns.next() {
            trainable.push(&mut bn.gamma);
            trainable.push(&mut bn.beta);
            buffers.push(&mut bn.running_mean);
            buffers.push(&mut bn.running_var);
        }
    }
    (trainable, buffers)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), NetError> {
    let bytes = encode_checkpoint(ck)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
