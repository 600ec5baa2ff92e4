//! Attention kernels and the per-layer hook through which a backend routes
//! every self-attention call.
//!
//! Three kernels share one softmax routine:
//!
//! * [`self_attention`]: `Softmax(QKᵀ/√d)V` over a stream's own tokens.
//! * [`texture_aligning_attention`]: geometry queries over geometry and target
//!   keys/values, used while inverting the geometry image.
//! * [`geometry_preserving_attention`]: output queries over output keys/values
//!   and the source keys/values that fall inside the source mask, used during
//!   generation.
//!
//! Cross-stream keys/values travel through a [`KvRegistry`] keyed by
//! `(phase, stream, level, iteration, layer)`.

mod kernels;
mod registry;

pub use kernels::{
    geometry_preserving_attention, select_masked_kv, self_attention, texture_aligning_attention,
    Ablation, AttentionTensors, KeyValues,
};
pub use registry::{
    run_hooked, AttentionKind, AttentionLayer, AttentionMode, AttentionRouter, HookedRouter, KvKey,
    KvRegistry, LayerId, LayerMasks, Phase, Slot, StandardRouter, Stream,
};
