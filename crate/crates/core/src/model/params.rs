use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backbone (θ) or prompt (φ) side of the parameter split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Backbone,
    Prompt,
}

/// Which partitions receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionMask {
    pub backbone: bool,
    pub prompt: bool,
}

impl PartitionMask {
    pub const PROMPT_ONLY: Self = PartitionMask {
        backbone: false,
        prompt: true,
    };
    pub const ALL: Self = PartitionMask {
        backbone: true,
        prompt: true,
    };
    pub const NONE: Self = PartitionMask {
        backbone: false,
        prompt: false,
    };

    pub fn includes(&self, p: Partition) -> bool {
        match p {
            Partition::Backbone => self.backbone,
            Partition::Prompt => self.prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor,
}

/// Ordered, named parameter tensors. The flat view concatenates them in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, partition: Partition, value: Tensor) -> usize {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(NamedTensor {
            name,
            partition,
            value,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.entries[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn partition_numel(&self, p: Partition) -> usize {
        self.entries
            .iter()
            .filter(|e| e.partition == p)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for e in &self.entries {
            out.extend_from_slice(e.value.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::dim(
                "set_flat",
                format!("{} values for {} parameters", flat.len(), self.numel()),
            ));
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.value.numel();
            e.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Per-entry flags of the flat view: true where `mask` includes the partition.
    pub fn flat_mask(&self, mask: PartitionMask) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.numel());
        for e in &self.entries {
            out.extend(std::iter::repeat_n(mask.includes(e.partition), e.value.numel()));
        }
        out
    }

    /// Same names, partitions and shapes.
    pub fn is_compatible(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.partition == b.partition && a.value.shape() == b.value.shape()
            })
    }

    /// Registers every tensor on `tape`; leaves of masked-in partitions require grad.
    pub fn to_vars(&self, tape: &mut Tape, mask: PartitionMask) -> Result<Vec<Var>> {
        self.entries
            .iter()
            .map(|e| tape.leaf(e.value.clone(), mask.includes(e.partition)))
            .collect()
    }

    /// Copy whose values are read from `vars` on `tape`.
    pub fn from_vars(&self, tape: &Tape, vars: &[Var]) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .zip(vars)
                .map(|(e, &v)| NamedTensor {
                    name: e.name.clone(),
                    partition: e.partition,
                    value: tape.value(v).clone(),
                })
                .collect(),
        }
    }
}
