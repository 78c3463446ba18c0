//! Binary checkpoints.
//!
//! Layout: `MAGIC`, format version (u32 LE), header length (u64 LE), JSON
//! header, payload, SHA-256 of everything before it. The payload is one block
//! per header entry: element count (u64 LE) followed by that many f64 LE.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{EpochRecord, TrainerState};
use crate::meta::OptimizerState;
use crate::model::{ParamSet, Partition, PromptModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MPROMPT\0";
const DIGEST_LEN: usize = 32;

/// Trainer state plus what is needed to resume it: the run seed drives the
/// per-epoch episode streams together with `state.epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec_hash: String,
    pub seed: u64,
    pub state: TrainerState,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec_hash: String,
    seed: u64,
    epoch: usize,
    bad_epochs: usize,
    finished: bool,
    optimizer_step: u64,
    history_epochs: Vec<usize>,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    group: Group,
    name: String,
    partition: Option<Partition>,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Params,
    Best,
    AdamM,
    AdamV,
    /// `best_val`, then train loss, val accuracy and val loss per history entry.
    Scalars,
}

/// Hash of everything that fixes parameter shapes and meaning.
pub fn spec_hash(model: &PromptModel) -> Result<String> {
    let text = serde_json::to_string(&(model.spec(), model.template()))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

fn param_blocks(group: Group, params: &ParamSet, blocks: &mut Vec<Block>, data: &mut Vec<Vec<f64>>) {
    for e in params.entries() {
        blocks.push(Block {
            group,
            name: e.name.clone(),
            partition: Some(e.partition),
            shape: e.value.shape().to_vec(),
        });
        data.push(e.value.data().to_vec());
    }
}

fn flat_block(group: Group, name: &str, values: &[f64], blocks: &mut Vec<Block>, data: &mut Vec<Vec<f64>>) {
    blocks.push(Block {
        group,
        name: name.into(),
        partition: None,
        shape: vec![values.len()],
    });
    data.push(values.to_vec());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let s = &ck.state;
    let mut blocks = Vec::new();
    let mut data = Vec::new();
    param_blocks(Group::Params, &s.params, &mut blocks, &mut data);
    param_blocks(Group::Best, &s.best_params, &mut blocks, &mut data);
    flat_block(Group::AdamM, "m", &s.optimizer.m, &mut blocks, &mut data);
    flat_block(Group::AdamV, "v", &s.optimizer.v, &mut blocks, &mut data);
    let mut scalars = vec![s.best_val];
    for h in &s.history {
        scalars.extend([h.train_loss, h.val_accuracy, h.val_loss]);
    }
    flat_block(Group::Scalars, "scalars", &scalars, &mut blocks, &mut data);

    let header = Header {
        version: CHECKPOINT_VERSION,
        spec_hash: ck.spec_hash.clone(),
        seed: ck.seed,
        epoch: s.epoch,
        bad_epochs: s.bad_epochs,
        finished: s.finished,
        optimizer_step: s.optimizer.step,
        history_epochs: s.history.iter().map(|h| h.epoch).collect(),
        blocks,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for values in &data {
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn integrity(detail: impl Into<String>) -> Error {
    Error::CheckpointIntegrity(detail.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| integrity("unexpected end of payload"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| integrity("block too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let prefix = MAGIC.len() + 4 + 8;
    if bytes.len() < prefix + DIGEST_LEN {
        return Err(integrity(format!("file is {} bytes, too short for a checkpoint", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(integrity("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(integrity("checksum mismatch"));
    }

    let mut r = Reader { bytes: body, pos: 12 };
    let header_len = usize::try_from(r.u64()?).map_err(|_| integrity("header length overflow"))?;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| integrity(format!("bad header: {e}")))?;
    if header.version != version {
        return Err(integrity("header version disagrees with file version"));
    }

    let mut params = ParamSet::new();
    let mut best = ParamSet::new();
    let mut m = None;
    let mut v = None;
    let mut scalars = None;
    for block in &header.blocks {
        let count = r.u64()? as usize;
        let expected: usize = block.shape.iter().product();
        if count != expected {
            return Err(integrity(format!(
                "block `{}` holds {count} values, shape {:?} needs {expected}",
                block.name, block.shape
            )));
        }
        let values = r.f64s(count)?;
        match block.group {
            Group::Params | Group::Best => {
                let partition = block
                    .partition
                    .ok_or_else(|| integrity(format!("parameter `{}` has no partition", block.name)))?;
                let t = Tensor::new(block.shape.clone(), values).map_err(|e| integrity(e.to_string()))?;
                let set = if block.group == Group::Params { &mut params } else { &mut best };
                set.push(block.name.clone(), partition, t);
            }
            Group::AdamM => m = Some(values),
            Group::AdamV => v = Some(values),
            Group::Scalars => scalars = Some(values),
        }
    }
    if r.pos != body.len() {
        return Err(integrity("trailing bytes after payload"));
    }
    let (Some(m), Some(v), Some(scalars)) = (m, v, scalars) else {
        return Err(integrity("missing optimizer or scalar block"));
    };
    if !params.is_compatible(&best) || m.len() != params.numel() || v.len() != params.numel() {
        return Err(integrity("parameter and optimizer blocks disagree in size"));
    }
    if scalars.len() != 1 + 3 * header.history_epochs.len() {
        return Err(integrity("scalar block does not match the history length"));
    }
    let history = header
        .history_epochs
        .iter()
        .zip(scalars[1..].chunks_exact(3))
        .map(|(&epoch, s)| EpochRecord {
            epoch,
            train_loss: s[0],
            val_accuracy: s[1],
            val_loss: s[2],
        })
        .collect();
    Ok(Checkpoint {
        spec_hash: header.spec_hash,
        seed: header.seed,
        state: TrainerState {
            epoch: header.epoch,
            params,
            best_params: best,
            best_val: scalars[0],
            bad_epochs: header.bad_epochs,
            optimizer: OptimizerState {
                step: header.optimizer_step,
                m,
                v,
            },
            history,
            finished: header.finished,
        },
    })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads and verifies a checkpoint without checking its spec hash.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Reads a checkpoint and rejects it unless it was written for `model`.
pub fn load_checkpoint(path: &Path, model: &PromptModel) -> Result<Checkpoint> {
    let ck = read_checkpoint(path)?;
    let expected = spec_hash(model)?;
    if ck.spec_hash != expected {
        return Err(Error::SpecMismatch {
            found: ck.spec_hash,
            expected,
        });
    }
    model.check_params(&ck.state.params)?;
    Ok(ck)
}
