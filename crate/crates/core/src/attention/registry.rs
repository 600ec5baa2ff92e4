use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::kernels::{
    geometry_preserving_attention, select_masked_kv, self_attention, texture_aligning_attention,
    Ablation, AttentionTensors, KeyValues,
};
use crate::error::{Error, Result};

/// One image's latent trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Src,
    Tar,
    Geo,
    Out,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Src => "src",
            Stream::Tar => "tar",
            Stream::Geo => "geo",
            Stream::Out => "out",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Inversion,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId(pub usize);

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Backend-side description of one self-attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayer {
    pub id: LayerId,
    /// Token grid `(rows, cols)`; tokens are ordered row-major.
    pub grid: (usize, usize),
}

/// Identifies one captured K/V record.
///
/// `level` is the noise level the call evaluates at and `iteration` the
/// fixed-point iteration within that inversion step (always 0 during
/// generation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KvKey {
    pub phase: Phase,
    pub stream: Stream,
    pub level: usize,
    pub iteration: usize,
    pub layer: LayerId,
}

impl fmt::Display for KvKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}/{}/level {}/iter {}/layer {}",
            self.phase, self.stream, self.level, self.iteration, self.layer
        )
    }
}

/// Lockstep position shared by all streams: `(phase, level, iteration)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub phase: Phase,
    pub level: usize,
    pub iteration: usize,
}

impl Slot {
    pub fn key(&self, stream: Stream, layer: LayerId) -> KvKey {
        KvKey {
            phase: self.phase,
            stream,
            level: self.level,
            iteration: self.iteration,
            layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Standard,
    TextureAligning,
    GeometryPreserving,
}

/// Kernel selection for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMode {
    pub kind: AttentionKind,
    /// Ignored for [`AttentionKind::Standard`].
    pub ablation: Ablation,
}

impl AttentionMode {
    pub const STANDARD: AttentionMode = AttentionMode {
        kind: AttentionKind::Standard,
        ablation: Ablation::SelfOnly,
    };

    pub fn texture_aligning(ablation: Ablation) -> Self {
        Self {
            kind: AttentionKind::TextureAligning,
            ablation,
        }
    }

    pub fn geometry_preserving(ablation: Ablation) -> Self {
        Self {
            kind: AttentionKind::GeometryPreserving,
            ablation,
        }
    }

    /// The stream whose K/V this mode reads, if any.
    pub fn reads(&self) -> Option<Stream> {
        match (self.kind, self.ablation) {
            (AttentionKind::Standard, _) | (_, Ablation::SelfOnly) => None,
            (AttentionKind::TextureAligning, _) => Some(Stream::Tar),
            (AttentionKind::GeometryPreserving, _) => Some(Stream::Src),
        }
    }
}

/// Per-run store of captured keys/values.
///
/// Records are write-once. Once every stream has finished a slot the runner
/// retires it, dropping the payloads while remembering the keys so a late
/// double write is still caught.
#[derive(Debug, Default)]
pub struct KvRegistry {
    records: HashMap<KvKey, KeyValues>,
    written: HashSet<KvKey>,
    dispatches: BTreeMap<Stream, usize>,
}

impl KvRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: KvKey, kv: KeyValues) -> Result<()> {
        if !self.written.insert(key) {
            return Err(Error::DuplicateRecord(key));
        }
        self.records.insert(key, kv);
        Ok(())
    }

    pub fn get(&self, key: &KvKey) -> Result<&KeyValues> {
        self.records.get(key).ok_or(Error::MissingRecord(*key))
    }

    pub fn contains(&self, key: &KvKey) -> bool {
        self.records.contains_key(key)
    }

    /// Drops every payload belonging to `slot`.
    pub fn retire(&mut self, slot: Slot) {
        self.records.retain(|k, _| {
            !(k.phase == slot.phase && k.level == slot.level && k.iteration == slot.iteration)
        });
    }

    /// Live (not yet retired) records.
    pub fn live_records(&self) -> usize {
        self.records.len()
    }

    /// Every key ever written, including retired ones.
    pub fn written(&self) -> usize {
        self.written.len()
    }

    pub fn dispatches(&self, stream: Stream) -> usize {
        self.dispatches.get(&stream).copied().unwrap_or(0)
    }

    pub fn dispatch_census(&self) -> &BTreeMap<Stream, usize> {
        &self.dispatches
    }

    fn count_dispatch(&mut self, stream: Stream) {
        *self.dispatches.entry(stream).or_insert(0) += 1;
    }
}

/// Captures this stream's K/V, then runs the kernel chosen by `mode`.
///
/// Cross-stream modes read the other stream's record at the same slot and
/// layer; geometry-preserving attention keeps only the rows selected by
/// `token_mask`. When `capture` is false the call leaves no record behind.
#[allow(clippy::too_many_arguments)]
pub fn run_hooked(
    tensors: &AttentionTensors,
    registry: &mut KvRegistry,
    mode: AttentionMode,
    stream: Stream,
    slot: Slot,
    layer: LayerId,
    token_mask: Option<&[bool]>,
    capture: bool,
) -> Result<Array2<f64>> {
    registry.count_dispatch(stream);
    if capture {
        registry.insert(slot.key(stream, layer), tensors.kv())?;
    }
    let Some(other) = mode.reads() else {
        return self_attention(tensors);
    };
    let other_kv = registry.get(&slot.key(other, layer))?;
    match mode.kind {
        AttentionKind::TextureAligning => {
            texture_aligning_attention(tensors, other_kv, mode.ablation)
        }
        AttentionKind::GeometryPreserving => {
            let mask = token_mask.ok_or_else(|| {
                Error::param(format!(
                    "geometry-preserving attention on layer {layer} needs a token mask"
                ))
            })?;
            let selected = select_masked_kv(other_kv, mask)?;
            geometry_preserving_attention(tensors, &selected, mode.ablation)
        }
        AttentionKind::Standard => unreachable!("standard attention reads no other stream"),
    }
}

/// Per-layer flattened token masks, resized once per run.
#[derive(Debug, Clone, Default)]
pub struct LayerMasks {
    masks: BTreeMap<LayerId, Vec<bool>>,
}

impl LayerMasks {
    pub fn from_mask(
        mask: &crate::imagemask::BinaryMask,
        layers: &[AttentionLayer],
    ) -> Result<Self> {
        let mut masks = BTreeMap::new();
        for layer in layers {
            let (h, w) = layer.grid;
            masks.insert(layer.id, mask.resize_to(h, w)?.flat());
        }
        Ok(Self { masks })
    }

    pub fn get(&self, layer: LayerId) -> Option<&[bool]> {
        self.masks.get(&layer).map(Vec::as_slice)
    }
}

/// The callback a backend invokes for every self-attention layer.
pub trait AttentionRouter {
    fn attend(&mut self, layer: LayerId, tensors: &AttentionTensors) -> Result<Array2<f64>>;
}

/// Plain self-attention everywhere, no capture.
#[derive(Debug, Default, Clone, Copy)]
pub struct StandardRouter;

impl AttentionRouter for StandardRouter {
    fn attend(&mut self, _layer: LayerId, tensors: &AttentionTensors) -> Result<Array2<f64>> {
        self_attention(tensors)
    }
}

/// Routes one stream's attention calls through [`run_hooked`].
pub struct HookedRouter<'a> {
    pub registry: &'a mut KvRegistry,
    pub stream: Stream,
    pub slot: Slot,
    pub mode: AttentionMode,
    pub token_masks: Option<&'a LayerMasks>,
    pub capture: bool,
    /// Layers that run `mode`; the rest run standard attention. `None` means all.
    pub custom_layers: Option<&'a BTreeSet<LayerId>>,
}

impl AttentionRouter for HookedRouter<'_> {
    fn attend(&mut self, layer: LayerId, tensors: &AttentionTensors) -> Result<Array2<f64>> {
        let mask = self.token_masks.and_then(|m| m.get(layer));
        let mode = match self.custom_layers {
            Some(layers) if !layers.contains(&layer) => AttentionMode::STANDARD,
            _ => self.mode,
        };
        run_hooked(
            tensors,
            self.registry,
            mode,
            self.stream,
            self.slot,
            layer,
            mask,
            self.capture,
        )
    }
}
