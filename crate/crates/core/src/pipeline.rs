//! End-to-end orchestration: editing, inversion, blending, generation.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::attention::{Ablation, KvRegistry, LayerId, LayerMasks, Stream};
use crate::backends::{
    BackendKind, LatentCodec, SdAdapterSpec, ToyDenoiser, ToyDenoiserConfig, ToyLatentCodec,
};
use crate::diffusion::{
    generate, invert_streams, DenoiserBackend, Generation, InpaintCond, InversionOptions, Latent,
    NoiseSchedule, StreamInput,
};
use crate::editing::{build_edit, ColorMode};
use crate::error::{Error, Result, Stage, StageExt};
use crate::imagemask::{AffineTransform, BinaryMask, Image};

/// Key/value sets used by texture-aligning attention during inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaAblation {
    #[default]
    Both,
    TargetOnly,
    GeoOnly,
}

impl From<TaAblation> for Ablation {
    fn from(a: TaAblation) -> Self {
        match a {
            TaAblation::Both => Ablation::Both,
            TaAblation::TargetOnly => Ablation::OtherOnly,
            TaAblation::GeoOnly => Ablation::SelfOnly,
        }
    }
}

/// Key/value sets used by geometry-preserving attention during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpAblation {
    #[default]
    Both,
    SrcOnly,
    SelfOnly,
}

impl From<GpAblation> for Ablation {
    fn from(a: GpAblation) -> Self {
        match a {
            GpAblation::Both => Ablation::Both,
            GpAblation::SrcOnly => Ablation::OtherOnly,
            GpAblation::SelfOnly => Ablation::SelfOnly,
        }
    }
}

/// Every run parameter, serialized as flat JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Color-shift strength in `[0, 1]`.
    pub a: f64,
    pub color_mode: ColorMode,
    /// Number of diffusion steps `T`.
    #[serde(alias = "T")]
    pub steps: usize,
    /// Fixed-point iterations per inversion step.
    pub invert_iters: usize,
    /// Width of the boundary ring used for color statistics.
    pub ring_radius: usize,
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
    /// Degrees, counterclockwise as displayed.
    pub rotate: f64,
    pub ta_ablation: TaAblation,
    pub gp_ablation: GpAblation,
    pub seed: u64,
    pub backend: BackendKind,
    pub num_train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub codec_block: usize,
    pub toy_token_stride: usize,
    /// Re-composite the decoded output over the target outside the geometry mask.
    pub paste_back: bool,
    /// Keep every intermediate latent in the run artifacts.
    pub debug_latents: bool,
    /// When false the target stream's keys/values are never recorded.
    pub capture_target_kv: bool,
    /// Attention layer ids that get the custom kernels; `None` replaces every layer.
    pub custom_attention_layers: Option<Vec<usize>>,
    /// Invert source and target under the geometry stream's conditioning
    /// (geometry mask, masked target latent) instead of their own.
    pub shared_inversion_cond: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            color_mode: ColorMode::Shift,
            steps: 25,
            invert_iters: 5,
            ring_radius: 8,
            shift_x: 0.0,
            shift_y: 0.0,
            scale: 1.0,
            rotate: 0.0,
            ta_ablation: TaAblation::Both,
            gp_ablation: GpAblation::Both,
            seed: 0,
            backend: BackendKind::Toy,
            num_train_steps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
            codec_block: 8,
            toy_token_stride: 1,
            paste_back: false,
            debug_latents: false,
            capture_target_kv: true,
            custom_attention_layers: None,
            shared_inversion_cond: false,
        }
    }
}

impl PipelineConfig {
    pub fn transform(&self) -> AffineTransform {
        AffineTransform {
            shift_x: self.shift_x,
            shift_y: self.shift_y,
            scale: self.scale,
            rotation_deg: self.rotate,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(
            self.num_train_steps,
            self.steps,
            self.beta_start,
            self.beta_end,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::param(format!("a must be in [0, 1], got {}", self.a)));
        }
        if self.invert_iters == 0 {
            return Err(Error::param("invert_iters must be ≥ 1"));
        }
        if self.ring_radius == 0 {
            return Err(Error::param("ring_radius must be ≥ 1"));
        }
        if self.codec_block == 0 || self.toy_token_stride == 0 {
            return Err(Error::param("codec_block and toy_token_stride must be ≥ 1"));
        }
        self.transform().validate()?;
        self.schedule()?;
        Ok(())
    }
}

/// Wall time spent in each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub edit: Duration,
    pub encode: Duration,
    pub inversion: Duration,
    pub blending: Duration,
    pub generation: Duration,
    pub decode: Duration,
}

impl StageTimings {
    pub fn as_millis(&self) -> BTreeMap<&'static str, f64> {
        [
            ("edit", self.edit),
            ("encode", self.encode),
            ("inversion", self.inversion),
            ("blending", self.blending),
            ("generation", self.generation),
            ("decode", self.decode),
        ]
        .into_iter()
        .map(|(k, d)| (k, d.as_secs_f64() * 1e3))
        .collect()
    }
}

/// Intermediate latents, kept only when `debug_latents` is set.
#[derive(Debug, Clone)]
pub struct DebugLatents {
    /// `[src, tar, geo]` per inversion level, clean first.
    pub inversion: Vec<[Array3<f64>; 3]>,
    pub blended: Array3<f64>,
    /// Output stream from level `T` down to clean.
    pub generation: Vec<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub output_image: Image,
    pub pasted_image: Image,
    pub geometry_image: Image,
    pub geometry_mask: BinaryMask,
    pub latents: Option<DebugLatents>,
    pub config: PipelineConfig,
    pub timings: StageTimings,
    /// Attention dispatches per stream over the whole run.
    pub dispatch_census: BTreeMap<Stream, usize>,
}

/// `z_geo ⊙ m + z_tar ⊙ (1 − m)`, broadcast over channels.
///
/// Implemented as a select so every entry is bit-equal to one of its inputs.
pub fn blend_latents(z_geo: &Latent, z_tar: &Latent, mask: &BinaryMask) -> Result<Latent> {
    if z_geo.shape() != z_tar.shape() {
        return Err(Error::shape(format!(
            "blend latents differ: {:?} vs {:?}",
            z_geo.shape(),
            z_tar.shape()
        )));
    }
    let (h, w, _) = z_geo.shape();
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::shape(format!(
            "blend mask {}×{} vs latent {h}×{w}",
            mask.height(),
            mask.width()
        )));
    }
    let mut data = z_tar.data.clone();
    Zip::indexed(&mut data)
        .and(&z_geo.data)
        .for_each(|(y, x, _), out, &g| {
            if mask.get(y, x) {
                *out = g;
            }
        });
    Ok(Latent::new(data, z_geo.level))
}

fn custom_layer_set(
    config: &PipelineConfig,
    backend: &dyn DenoiserBackend,
) -> Result<Option<BTreeSet<LayerId>>> {
    let Some(ids) = &config.custom_attention_layers else {
        return Ok(None);
    };
    let known: BTreeSet<LayerId> = backend.attention_layers().iter().map(|l| l.id).collect();
    let set: BTreeSet<LayerId> = ids.iter().map(|&i| LayerId(i)).collect();
    if let Some(unknown) = set.difference(&known).next() {
        return Err(Error::param(format!(
            "custom attention layer {unknown} does not exist, backend has {} layers",
            known.len()
        )));
    }
    Ok(Some(set))
}

fn check_inputs(src: &Image, src_mask: &BinaryMask, tar: &Image) -> Result<()> {
    src.check_mask(src_mask, "source mask")?;
    if (src.height(), src.width()) != (tar.height(), tar.width()) {
        return Err(Error::shape(format!(
            "source is {}×{} but target is {}×{}",
            src.height(),
            src.width(),
            tar.height(),
            tar.width()
        )));
    }
    Ok(())
}

/// Builds the codec and backend a config selects, sized for `height×width` images.
pub fn build_toy_backend(
    config: &PipelineConfig,
    height: usize,
    width: usize,
) -> Result<(ToyLatentCodec, ToyDenoiser)> {
    match config.backend {
        BackendKind::Toy => {}
        BackendKind::SdAdapter => {
            SdAdapterSpec::default().connect()?;
        }
    }
    let codec = ToyLatentCodec::new(config.codec_block, config.seed)?;
    let shape = codec.latent_shape(height, width)?;
    let den_cfg = ToyDenoiserConfig::new(shape)
        .with_token_stride(config.toy_token_stride)
        .with_num_train_steps(config.num_train_steps);
    let denoiser = ToyDenoiser::new(den_cfg, config.seed)?;
    Ok((codec, denoiser))
}

/// Runs the full pipeline with the backend selected by `config`.
pub fn harmonize(
    src: &Image,
    src_mask: &BinaryMask,
    tar: &Image,
    config: &PipelineConfig,
) -> Result<RunArtifacts> {
    config.validate()?;
    check_inputs(src, src_mask, tar)?;
    let (codec, backend) = build_toy_backend(config, src.height(), src.width())?;
    harmonize_with(src, src_mask, tar, config, &codec, &backend)
}

/// Runs the full pipeline with an explicit codec and backend.
///
/// Errors raised after validation carry the stage they occurred in.
pub fn harmonize_with(
    src: &Image,
    src_mask: &BinaryMask,
    tar: &Image,
    config: &PipelineConfig,
    codec: &dyn LatentCodec,
    backend: &dyn DenoiserBackend,
) -> Result<RunArtifacts> {
    config.validate()?;
    check_inputs(src, src_mask, tar)?;
    let sched = config.schedule()?;
    let latent_shape = codec.latent_shape(src.height(), src.width())?;
    let (h, w, _) = latent_shape;
    if latent_shape != backend.latent_shape() {
        return Err(Error::shape(format!(
            "codec latent {:?} does not match backend {:?}",
            latent_shape,
            backend.latent_shape()
        )));
    }
    let custom_layers = custom_layer_set(config, backend)?;
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let edit = build_edit(
        src,
        src_mask,
        tar,
        &config.transform(),
        config.a,
        config.color_mode,
        config.ring_radius,
    )
    .in_stage(Stage::Edit)?;
    timings.edit = clock.elapsed();

    let clock = Instant::now();
    let encoded = (|| -> Result<_> {
        let z_src = codec.encode(src)?;
        let z_tar = codec.encode(tar)?;
        let z_geo = codec.encode(&edit.geometry_image)?;
        let m_src = src_mask.resize_to(h, w)?;
        let m_geo = edit.geometry_mask.resize_to(h, w)?;
        Ok((z_src, z_tar, z_geo, m_src, m_geo))
    })()
    .in_stage(Stage::Encode)?;
    let (z_src, z_tar, z_geo, m_src, m_geo) = encoded;
    timings.encode = clock.elapsed();

    let clock = Instant::now();
    let mut registry = KvRegistry::new();
    let (inversion, src_cond, out_cond) = (|| -> Result<_> {
        let out_cond = InpaintCond::masked(&z_tar.data, &m_geo)?;
        let (src_cond, tar_cond) = if config.shared_inversion_cond {
            (out_cond.clone(), out_cond.clone())
        } else {
            (
                InpaintCond::masked(&z_src.data, &m_src)?,
                InpaintCond::unmasked(&z_tar.data),
            )
        };
        let src_in = StreamInput {
            cond: src_cond.clone(),
            latent: z_src,
        };
        let tar_in = StreamInput {
            cond: tar_cond,
            latent: z_tar,
        };
        let geo_in = StreamInput {
            cond: out_cond.clone(),
            latent: z_geo,
        };
        let opts = InversionOptions {
            iters: config.invert_iters,
            texture_ablation: config.ta_ablation.into(),
            capture_target_kv: config.capture_target_kv,
            keep_trajectories: config.debug_latents,
            custom_layers: custom_layers.clone(),
        };
        let inv = invert_streams(
            &src_in,
            &tar_in,
            &geo_in,
            &sched,
            backend,
            &mut registry,
            &opts,
        )?;
        Ok((inv, src_cond, out_cond))
    })()
    .in_stage(Stage::Inversion)?;
    timings.inversion = clock.elapsed();

    let clock = Instant::now();
    let blended =
        blend_latents(&inversion.geo, &inversion.tar, &m_geo).in_stage(Stage::Blending)?;
    timings.blending = clock.elapsed();

    let clock = Instant::now();
    let generated = (|| -> Result<_> {
        let token_masks = LayerMasks::from_mask(src_mask, &backend.attention_layers())?;
        generate(
            Generation {
                out: &blended,
                out_cond: &out_cond,
                src: &inversion.src,
                src_cond: &src_cond,
                src_token_masks: &token_masks,
                ablation: config.gp_ablation.into(),
                keep_trajectory: config.debug_latents,
                custom_layers: custom_layers.as_ref(),
            },
            &sched,
            backend,
            &mut registry,
        )
    })()
    .in_stage(Stage::Generation)?;
    timings.generation = clock.elapsed();

    let clock = Instant::now();
    let decoded = codec.decode(&generated.out).in_stage(Stage::Decode)?;
    let output_image = if config.paste_back {
        Image::composite(&decoded, tar, &edit.geometry_mask).in_stage(Stage::Decode)?
    } else {
        decoded
    };
    timings.decode = clock.elapsed();

    let latents = config.debug_latents.then(|| DebugLatents {
        inversion: inversion.trajectories.clone().unwrap_or_default(),
        blended: blended.data.clone(),
        generation: generated.trajectory.clone().unwrap_or_default(),
    });
    Ok(RunArtifacts {
        output_image,
        pasted_image: edit.pasted_image,
        geometry_image: edit.geometry_image,
        geometry_mask: edit.geometry_mask,
        latents,
        config: config.clone(),
        timings,
        dispatch_census: registry.dispatch_census().clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Color,
    Ta,
    Gp,
    All,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(Self::Color),
            "ta" => Ok(Self::Ta),
            "gp" => Ok(Self::Gp),
            "all" => Ok(Self::All),
            other => Err(Error::param(format!("unknown ablation axis {other:?}"))),
        }
    }
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCondition {
    pub name: String,
    pub axis: AblationAxis,
    pub config: PipelineConfig,
}

/// The ablation grid, each condition varying one axis of `base`.
///
/// Color: no shift, `a = 0.5`, `a = 1.0`, histogram matching. Texture-aligning
/// attention: target only, geometry only, both. Geometry-preserving
/// attention: self only, source only, both.
pub fn ablation_conditions(base: &PipelineConfig, axis: AblationAxis) -> Vec<AblationCondition> {
    let mut out = Vec::new();
    let mut push = |name: &str, axis: AblationAxis, config: PipelineConfig| {
        out.push(AblationCondition {
            name: name.to_string(),
            axis,
            config,
        })
    };
    if matches!(axis, AblationAxis::Color | AblationAxis::All) {
        for (name, a) in [
            ("color_a0.0", 0.0),
            ("color_a0.5", 0.5),
            ("color_a1.0", 1.0),
        ] {
            push(
                name,
                AblationAxis::Color,
                PipelineConfig {
                    a,
                    color_mode: ColorMode::Shift,
                    ..base.clone()
                },
            );
        }
        push(
            "color_histogram",
            AblationAxis::Color,
            PipelineConfig {
                color_mode: ColorMode::Histogram,
                ..base.clone()
            },
        );
    }
    if matches!(axis, AblationAxis::Ta | AblationAxis::All) {
        for (name, ta) in [
            ("ta_target_only", TaAblation::TargetOnly),
            ("ta_geo_only", TaAblation::GeoOnly),
            ("ta_both", TaAblation::Both),
        ] {
            push(
                name,
                AblationAxis::Ta,
                PipelineConfig {
                    ta_ablation: ta,
                    ..base.clone()
                },
            );
        }
    }
    if matches!(axis, AblationAxis::Gp | AblationAxis::All) {
        for (name, gp) in [
            ("gp_self_only", GpAblation::SelfOnly),
            ("gp_src_only", GpAblation::SrcOnly),
            ("gp_both", GpAblation::Both),
        ] {
            push(
                name,
                AblationAxis::Gp,
                PipelineConfig {
                    gp_ablation: gp,
                    ..base.clone()
                },
            );
        }
    }
    out
}

pub fn run_ablation_suite(
    src: &Image,
    src_mask: &BinaryMask,
    tar: &Image,
    base: &PipelineConfig,
    axis: AblationAxis,
) -> Result<Vec<(AblationCondition, RunArtifacts)>> {
    ablation_conditions(base, axis)
        .into_iter()
        .map(|cond| {
            let run = harmonize(src, src_mask, tar, &cond.config)?;
            Ok((cond, run))
        })
        .collect()
}
