use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use harmonize_core::backends::BackendKind;
use harmonize_core::pipeline::PipelineConfig;
use serde_json::{Map, Value};

pub const BACKEND_ENV: &str = "HARMONIZE_BACKEND";

/// Flags that override keys of the JSON config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with flat keys mirroring the pipeline config
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Color-shift strength a in [0, 1] (key: a)
    #[arg(long = "color-shift")]
    pub a: Option<f64>,

    /// none, shift or histogram
    #[arg(long)]
    pub color_mode: Option<String>,

    /// Number of DDIM steps T
    #[arg(long)]
    pub steps: Option<usize>,

    /// Fixed-point iterations per inversion step
    #[arg(long)]
    pub invert_iters: Option<usize>,

    /// Boundary ring width in pixels for color statistics
    #[arg(long)]
    pub ring_radius: Option<usize>,

    /// Horizontal shift in pixels
    #[arg(long, allow_hyphen_values = true)]
    pub shift_x: Option<f64>,

    /// Vertical shift in pixels
    #[arg(long, allow_hyphen_values = true)]
    pub shift_y: Option<f64>,

    /// Isotropic scale about the mask center
    #[arg(long)]
    pub scale: Option<f64>,

    /// Rotation in degrees, counterclockwise
    #[arg(long, allow_hyphen_values = true)]
    pub rotate: Option<f64>,

    /// both, target_only or geo_only
    #[arg(long)]
    pub ta_ablation: Option<String>,

    /// both, src_only or self_only
    #[arg(long)]
    pub gp_ablation: Option<String>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// toy or sd-adapter (defaults to $HARMONIZE_BACKEND, then toy)
    #[arg(long)]
    pub backend: Option<String>,

    #[arg(long)]
    pub num_train_steps: Option<usize>,

    #[arg(long)]
    pub beta_start: Option<f64>,

    #[arg(long)]
    pub beta_end: Option<f64>,

    /// Toy codec block size (latent downsampling factor)
    #[arg(long)]
    pub codec_block: Option<usize>,

    /// Toy denoiser pooling between latent grid and attention tokens
    #[arg(long)]
    pub toy_token_stride: Option<usize>,

    /// Composite the output over the target outside the geometry mask
    #[arg(long)]
    pub paste_back: Option<bool>,

    #[arg(long)]
    pub debug_latents: Option<bool>,

    #[arg(long)]
    pub capture_target_kv: Option<bool>,

    /// Comma-separated attention layer ids that get the custom kernels (default all)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub custom_attention_layers: Option<Vec<usize>>,

    /// Invert source and target under the geometry stream's conditioning
    #[arg(long)]
    pub shared_inversion_cond: Option<bool>,
}

fn read_config_file(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?
    {
        Value::Object(map) => Ok(map),
        _ => bail!("config {} must be a JSON object", path.display()),
    }
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let mut set = |key: &'static str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((key, v));
            }
        };
        set("a", self.a.map(Value::from));
        set("color_mode", self.color_mode.clone().map(Value::from));
        set("steps", self.steps.map(Value::from));
        set("invert_iters", self.invert_iters.map(Value::from));
        set("ring_radius", self.ring_radius.map(Value::from));
        set("shift_x", self.shift_x.map(Value::from));
        set("shift_y", self.shift_y.map(Value::from));
        set("scale", self.scale.map(Value::from));
        set("rotate", self.rotate.map(Value::from));
        set("ta_ablation", self.ta_ablation.clone().map(Value::from));
        set("gp_ablation", self.gp_ablation.clone().map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("backend", self.backend.clone().map(Value::from));
        set("num_train_steps", self.num_train_steps.map(Value::from));
        set("beta_start", self.beta_start.map(Value::from));
        set("beta_end", self.beta_end.map(Value::from));
        set("codec_block", self.codec_block.map(Value::from));
        set("toy_token_stride", self.toy_token_stride.map(Value::from));
        set("paste_back", self.paste_back.map(Value::from));
        set("debug_latents", self.debug_latents.map(Value::from));
        set("capture_target_kv", self.capture_target_kv.map(Value::from));
        set(
            "custom_attention_layers",
            self.custom_attention_layers.clone().map(Value::from),
        );
        set(
            "shared_inversion_cond",
            self.shared_inversion_cond.map(Value::from),
        );
        out
    }

    /// Defaults, then the environment backend, then the config file, then flags.
    pub fn resolve(&self, env_backend: Option<&str>) -> anyhow::Result<PipelineConfig> {
        let mut map = Map::new();
        if let Some(name) = env_backend {
            let kind: BackendKind = name
                .parse()
                .with_context(|| format!("{BACKEND_ENV}={name}"))?;
            map.insert("backend".into(), serde_json::to_value(kind)?);
        }
        if let Some(path) = &self.config {
            map.extend(read_config_file(path)?);
        }
        for (key, value) in self.overrides() {
            map.insert(key.into(), value);
        }
        let config: PipelineConfig =
            serde_json::from_value(Value::Object(map)).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }
}
