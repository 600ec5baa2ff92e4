use std::collections::BTreeSet;

use ndarray::Array3;

use super::ddim::{check_finite, ddim_denoise_step, ddim_invert_step, InversionStep};
use super::{DenoiserBackend, InpaintCond, Latent, NoiseSchedule};
use crate::attention::{
    Ablation, AttentionMode, HookedRouter, KvRegistry, LayerId, LayerMasks, Phase, Slot,
    StandardRouter, Stream,
};
use crate::error::{Error, Result};

/// A clean latent plus the inpainting conditioning it is inverted under.
#[derive(Debug, Clone)]
pub struct StreamInput {
    pub latent: Latent,
    pub cond: InpaintCond,
}

#[derive(Debug, Clone)]
pub struct InversionOptions {
    /// Fixed-point iterations per inversion step (≥ 1).
    pub iters: usize,
    /// Key/value sets used by the geometry stream's texture-aligning attention.
    pub texture_ablation: Ablation,
    /// When false the target stream leaves no K/V records behind.
    pub capture_target_kv: bool,
    pub keep_trajectories: bool,
    /// Layers where the geometry stream uses texture-aligning attention; `None` means all.
    pub custom_layers: Option<BTreeSet<LayerId>>,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            iters: 5,
            texture_ablation: Ablation::Both,
            capture_target_kv: true,
            keep_trajectories: false,
            custom_layers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub src: Latent,
    pub tar: Latent,
    pub geo: Latent,
    /// Per-level latents `[src, tar, geo]`, level 0 first, when requested.
    pub trajectories: Option<Vec<[Array3<f64>; 3]>>,
}

fn check_backend_shape(
    backend: &dyn DenoiserBackend,
    latent: &Latent,
    stream: Stream,
) -> Result<()> {
    if latent.shape() != backend.latent_shape() {
        return Err(Error::shape(format!(
            "{stream} latent {:?} does not match backend latent shape {:?}",
            latent.shape(),
            backend.latent_shape()
        )));
    }
    Ok(())
}

/// Inverts the source, target and geometry streams in lockstep.
///
/// Within every `(level, iteration)` slot the order is source, target,
/// geometry: the geometry stream's texture-aligning attention reads the
/// target's keys/values captured at the same slot and layer.
pub fn invert_streams(
    src: &StreamInput,
    tar: &StreamInput,
    geo: &StreamInput,
    sched: &NoiseSchedule,
    backend: &dyn DenoiserBackend,
    registry: &mut KvRegistry,
    opts: &InversionOptions,
) -> Result<InversionResult> {
    if opts.iters == 0 {
        return Err(Error::param("inversion needs at least one iteration"));
    }
    let inputs = [(Stream::Src, src), (Stream::Tar, tar), (Stream::Geo, geo)];
    for (stream, input) in &inputs {
        if input.latent.level != 0 {
            return Err(Error::param(format!(
                "{stream} latent must start clean, found level {}",
                input.latent.level
            )));
        }
        check_backend_shape(backend, &input.latent, *stream)?;
    }
    let modes = [
        (AttentionMode::STANDARD, true),
        (AttentionMode::STANDARD, opts.capture_target_kv),
        (AttentionMode::texture_aligning(opts.texture_ablation), true),
    ];

    let mut current: [Array3<f64>; 3] = inputs.map(|(_, input)| input.latent.data.clone());
    let mut trajectories = opts.keep_trajectories.then(|| vec![current.clone()]);
    for to in 1..=sched.steps() {
        let step = InversionStep::new(sched, to - 1, to)?;
        let t = sched.timestep_at(to);
        let mut iterate: [Array3<f64>; 3] = current.each_ref().map(|z| step.initial(z));
        if !step.is_identity() {
            for iteration in 0..opts.iters {
                let slot = Slot {
                    phase: Phase::Inversion,
                    level: to,
                    iteration,
                };
                for (i, ((stream, input), (mode, capture))) in inputs.iter().zip(modes).enumerate()
                {
                    let mut router = HookedRouter {
                        registry: &mut *registry,
                        stream: *stream,
                        slot,
                        mode,
                        token_masks: None,
                        capture,
                        custom_layers: opts.custom_layers.as_ref(),
                    };
                    let eps = backend.predict_noise(&iterate[i], t, &input.cond, &mut router)?;
                    iterate[i] = step.apply(&current[i], &eps)?;
                }
                registry.retire(slot);
            }
        } else {
            iterate = current.clone();
        }
        current = iterate;
        if let Some(tr) = trajectories.as_mut() {
            tr.push(current.clone());
        }
    }
    let steps = sched.steps();
    let [src, tar, geo] = current.map(|z| Latent::new(z, steps));
    Ok(InversionResult {
        src,
        tar,
        geo,
        trajectories,
    })
}

/// Inputs of the generation stage.
#[derive(Debug, Clone, Copy)]
pub struct Generation<'a> {
    /// Blended noisy latent at level `T`.
    pub out: &'a Latent,
    pub out_cond: &'a InpaintCond,
    /// Inverted source latent at level `T`.
    pub src: &'a Latent,
    pub src_cond: &'a InpaintCond,
    /// Source mask resized to each attention layer's token grid.
    pub src_token_masks: &'a LayerMasks,
    pub ablation: Ablation,
    pub keep_trajectory: bool,
    /// Layers where the output stream uses geometry-preserving attention; `None` means all.
    pub custom_layers: Option<&'a BTreeSet<LayerId>>,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub out: Latent,
    pub src: Latent,
    /// Output-stream latents from level `T` down to 0, when requested.
    pub trajectory: Option<Vec<Array3<f64>>>,
}

/// Denoises the source and output streams in lockstep.
///
/// The source stream runs plain self-attention and has its keys/values
/// captured; the output stream then runs geometry-preserving attention
/// against the mask-selected source keys/values of the same level and layer.
pub fn generate(
    g: Generation<'_>,
    sched: &NoiseSchedule,
    backend: &dyn DenoiserBackend,
    registry: &mut KvRegistry,
) -> Result<GenerationResult> {
    let steps = sched.steps();
    for (stream, z) in [(Stream::Out, g.out), (Stream::Src, g.src)] {
        if z.level != steps {
            return Err(Error::param(format!(
                "{stream} latent must start at level {steps}, found {}",
                z.level
            )));
        }
        check_backend_shape(backend, z, stream)?;
    }
    let mut out = g.out.clone();
    let mut src = g.src.clone();
    let mut trajectory = g.keep_trajectory.then(|| vec![out.data.clone()]);
    for from in (1..=steps).rev() {
        let t = sched.timestep_at(from);
        let slot = Slot {
            phase: Phase::Generation,
            level: from,
            iteration: 0,
        };
        let eps_src = backend.predict_noise(
            &src.data,
            t,
            g.src_cond,
            &mut HookedRouter {
                registry: &mut *registry,
                stream: Stream::Src,
                slot,
                mode: AttentionMode::STANDARD,
                token_masks: None,
                capture: true,
                custom_layers: None,
            },
        )?;
        let eps_out = backend.predict_noise(
            &out.data,
            t,
            g.out_cond,
            &mut HookedRouter {
                registry: &mut *registry,
                stream: Stream::Out,
                slot,
                mode: AttentionMode::geometry_preserving(g.ablation),
                token_masks: Some(g.src_token_masks),
                capture: true,
                custom_layers: g.custom_layers,
            },
        )?;
        registry.retire(slot);
        src = ddim_denoise_step(&src, &eps_src, sched, from, from - 1)?;
        out = ddim_denoise_step(&out, &eps_out, sched, from, from - 1)?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(out.data.clone());
        }
    }
    Ok(GenerationResult {
        out,
        src,
        trajectory,
    })
}

/// Plain DDIM sampling of one stream with standard attention.
pub fn sample(
    z_t: &Latent,
    cond: &InpaintCond,
    sched: &NoiseSchedule,
    backend: &dyn DenoiserBackend,
) -> Result<Latent> {
    check_backend_shape(backend, z_t, Stream::Out)?;
    let mut z = z_t.clone();
    for from in (1..=z_t.level.min(sched.steps())).rev() {
        let eps =
            backend.predict_noise(&z.data, sched.timestep_at(from), cond, &mut StandardRouter)?;
        z = ddim_denoise_step(&z, &eps, sched, from, from - 1)?;
    }
    check_finite(&z.data, "sampling")?;
    Ok(z)
}

/// Fixed-point DDIM inversion of one stream with standard attention.
pub fn invert(
    z0: &Latent,
    cond: &InpaintCond,
    sched: &NoiseSchedule,
    backend: &dyn DenoiserBackend,
    iters: usize,
) -> Result<Latent> {
    check_backend_shape(backend, z0, Stream::Tar)?;
    let mut z = z0.clone();
    for to in z0.level + 1..=sched.steps() {
        z = ddim_invert_step(
            &z,
            sched,
            to - 1,
            to,
            backend,
            cond,
            &mut StandardRouter,
            iters,
        )?;
    }
    Ok(z)
}
