//! Acceptance suite: one pass/fail line per criterion.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::ensure;
use harmonize_core::attention::{
    geometry_preserving_attention, select_masked_kv, self_attention, texture_aligning_attention,
    Ablation, AttentionTensors, KeyValues, KvRegistry, LayerMasks, Stream,
};
use harmonize_core::backends::{ToyDenoiser, ToyDenoiserConfig, ToyLatentCodec};
use harmonize_core::diffusion::{
    ddim_denoise_step, ddim_invert_step_with_eps, generate, invert, sample, DenoiserBackend,
    Generation, InpaintCond, Latent, NoiseSchedule,
};
use harmonize_core::editing::{color_shift_unclamped, ColorMode, ColorStats};
use harmonize_core::pipeline::{blend_latents, harmonize, GpAblation, PipelineConfig};
use harmonize_core::{BinaryMask, Image};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

type Outcome = anyhow::Result<String>;
type Criterion = (&'static str, fn() -> Outcome);

fn gaussian2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn gaussian3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), std: f64) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) * std)
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p))
}

fn max_abs<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Stacks the key/value blocks into one matrix, forms the full score matrix
/// and normalizes it row by row.
fn materialized_attention(
    q: &Array2<f64>,
    blocks: &[(&Array2<f64>, &Array2<f64>)],
    heads: usize,
) -> Array2<f64> {
    let width = q.ncols();
    let d = width / heads;
    let total: usize = blocks.iter().map(|(k, _)| k.nrows()).sum();
    let mut k_all = Array2::<f64>::zeros((total, width));
    let mut v_all = Array2::<f64>::zeros((total, width));
    let mut row = 0;
    for (k, v) in blocks {
        for r in 0..k.nrows() {
            k_all.row_mut(row).assign(&k.row(r));
            v_all.row_mut(row).assign(&v.row(r));
            row += 1;
        }
    }
    let mut out = Array2::zeros((q.nrows(), width));
    for h in 0..heads {
        let cols = ndarray::s![.., h * d..(h + 1) * d];
        let qh = q.slice(cols);
        let kh = k_all.slice(cols);
        let vh = v_all.slice(cols);
        let mut scores = qh.dot(&kh.t()) / (d as f64).sqrt();
        for mut r in scores.rows_mut() {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            r.mapv_inplace(|s| (s - m).exp());
            let z = r.sum();
            r.mapv_inplace(|s| s / z);
        }
        out.slice_mut(cols).assign(&scores.dot(&vh));
    }
    out
}

fn attention_instance(rng: &mut ChaCha8Rng) -> anyhow::Result<(AttentionTensors, KeyValues)> {
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let head_dim = rng.gen_range(1..=16 / heads);
    let width = heads * head_dim;
    let (n, m) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
    let own = AttentionTensors::new(
        gaussian2(rng, n, width),
        gaussian2(rng, n, width),
        gaussian2(rng, n, width),
        heads,
    )?;
    let other = KeyValues::new(gaussian2(rng, m, width), gaussian2(rng, m, width))?;
    Ok((own, other))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for _ in 0..200 {
        let (own, other) = attention_instance(&mut rng)?;
        let h = own.heads();
        let sa = self_attention(&own)?;
        worst[0] = worst[0].max(max_abs(
            &sa,
            &materialized_attention(own.q(), &[(own.k(), own.v())], h),
        ));
        let ta = texture_aligning_attention(&own, &other, Ablation::Both)?;
        let ta_ref =
            materialized_attention(own.q(), &[(own.k(), own.v()), (&other.k, &other.v)], h);
        worst[1] = worst[1].max(max_abs(&ta, &ta_ref));
        let gp = geometry_preserving_attention(&own, &other, Ablation::Both)?;
        let gp_ref =
            materialized_attention(own.q(), &[(&other.k, &other.v), (own.k(), own.v())], h);
        worst[2] = worst[2].max(max_abs(&gp, &gp_ref));
    }
    let elapsed = start.elapsed();
    ensure!(
        worst.iter().all(|w| *w <= 1e-6),
        "max |Δ| self/ta/gp = {worst:?}"
    );
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "200 instances per kernel, max |Δ| self {:.1e} ta {:.1e} gp {:.1e}, {:.2?}",
        worst[0], worst[1], worst[2], elapsed
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (own, other) = attention_instance(&mut rng)?;
        let base = self_attention(&own)?;
        let width = own.q().ncols();
        ensure!(
            texture_aligning_attention(&own, &KeyValues::empty(width), Ablation::Both)? == base,
            "ta empty"
        );
        let none = vec![false; other.tokens()];
        let selected = select_masked_kv(&other, &none)?;
        ensure!(
            geometry_preserving_attention(&own, &selected, Ablation::Both)? == base,
            "gp empty"
        );
        ensure!(
            texture_aligning_attention(&own, &other, Ablation::SelfOnly)? == base,
            "ta geo_only"
        );
    }

    let shape = (8, 8, 4);
    let backend = ToyDenoiser::new(ToyDenoiserConfig::new(shape), 7)?;
    let sched = NoiseSchedule::stable_diffusion(25)?;
    let z_t = Latent::new(gaussian3(&mut rng, shape, 1.0), 25);
    let src = Latent::new(gaussian3(&mut rng, shape, 1.0), 25);
    let cond = InpaintCond::masked(
        &gaussian3(&mut rng, shape, 0.5),
        &random_mask(&mut rng, 8, 8, 0.3),
    )?;
    let src_cond = InpaintCond::unmasked(&src.data);
    let token_masks = LayerMasks::from_mask(
        &BinaryMask::rect(8, 8, 2, 2, 6, 6),
        &backend.attention_layers(),
    )?;
    let mut registry = KvRegistry::new();
    let generated = generate(
        Generation {
            out: &z_t,
            out_cond: &cond,
            src: &src,
            src_cond: &src_cond,
            src_token_masks: &token_masks,
            ablation: Ablation::SelfOnly,
            keep_trajectory: false,
            custom_layers: None,
        },
        &sched,
        &backend,
        &mut registry,
    )?;
    let plain = sample(&z_t, &cond, &sched, &backend)?;
    ensure!(
        generated.out.data == plain.data,
        "gp self_only generation differs from plain sampling"
    );
    Ok(
        "ta/gp empty sets, ta geo_only (50 cases) and gp self_only generation (T=25) bit-exact"
            .into(),
    )
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> anyhow::Result<Image> {
    Ok(Image::new(Array3::from_shape_fn((h, w, 3), |_| {
        rng.gen::<f64>()
    }))?)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_pair: f64 = 0.0;
    let mut worst_linear: f64 = 0.0;
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(4..24), rng.gen_range(4..24));
        let img = random_image(&mut rng, h, w)?;
        let mask = random_mask(&mut rng, h, w, 0.5);
        let c_src = ColorStats {
            mean_rgb: rng.gen(),
        };
        let c_tar = ColorStats {
            mean_rgb: rng.gen(),
        };
        let a = rng.gen::<f64>();

        let identity = color_shift_unclamped(&img, &mask, c_src, c_tar, 0.0)?;
        ensure!(
            identity
                .iter()
                .zip(img.pixels())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "a = 0 is not the identity"
        );

        let shifted = color_shift_unclamped(&img, &mask, c_src, c_tar, a)?;
        let inside: Vec<(usize, usize)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| mask.get(y, x))
            .collect();
        for pair in inside.windows(2).take(64) {
            let ((y0, x0), (y1, x1)) = (pair[0], pair[1]);
            for c in 0..3 {
                let before = img.pixels()[[y0, x0, c]] - img.pixels()[[y1, x1, c]];
                let after = shifted[[y0, x0, c]] - shifted[[y1, x1, c]];
                worst_pair = worst_pair.max((before - after).abs());
            }
        }

        let unit = color_shift_unclamped(&img, &mask, c_src, c_tar, 1.0)?;
        for ((idx, s), u) in shifted.indexed_iter().zip(unit.iter()) {
            let p = img.pixels()[idx];
            worst_linear = worst_linear.max(((s - p) - a * (u - p)).abs());
        }
    }
    ensure!(
        worst_pair <= 1e-12,
        "pairwise differences drift by {worst_pair:e}"
    );
    ensure!(
        worst_linear <= 1e-6,
        "shift is not linear in a: {worst_linear:e}"
    );
    Ok(format!(
        "a = 0 bit-exact, pairwise drift {worst_pair:.1e}, linearity {worst_linear:.1e} over 50 cases"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let shape = (
            rng.gen_range(1..10),
            rng.gen_range(1..10),
            rng.gen_range(1..6),
        );
        let g = Latent::new(gaussian3(&mut rng, shape, 1.0), 25);
        let t = Latent::new(gaussian3(&mut rng, shape, 1.0), 25);
        let mask = match case {
            0 => BinaryMask::ones(shape.0, shape.1),
            1 => BinaryMask::zeros(shape.0, shape.1),
            _ => random_mask(&mut rng, shape.0, shape.1, 0.5),
        };
        let b = blend_latents(&g, &t, &mask)?;
        for ((y, x, c), v) in b.data.indexed_iter() {
            let want = if mask.get(y, x) {
                g.data[[y, x, c]]
            } else {
                t.data[[y, x, c]]
            };
            ensure!(
                v.to_bits() == want.to_bits(),
                "case {case} differs at {y},{x},{c}"
            );
        }
    }
    Ok("50 triples bit-exact, including all-ones and all-zeros masks".into())
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let sched = NoiseSchedule::stable_diffusion(25)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = (64, 64, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z0 = Latent::clean(gaussian3(&mut rng, shape, 1.0));
        let eps = gaussian3(&mut rng, shape, 1.0);
        let mut z = z0.clone();
        for to in 1..=25 {
            z = ddim_invert_step_with_eps(&z, &eps, &sched, to - 1, to)?;
        }
        for from in (1..=25).rev() {
            z = ddim_denoise_step(&z, &eps, &sched, from, from - 1)?;
        }
        worst = worst.max(max_abs(&z.data, &z0.data));
    }
    ensure!(worst < 1e-5, "fixed-eps round trip error {worst:e}");

    let backend = ToyDenoiser::new(ToyDenoiserConfig::new(shape).with_token_stride(4), 5)?;
    let mut mse = [0.0f64; 2];
    for seed in 0..20u64 {
        let mut seed_rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let z0 = Latent::clean(gaussian3(&mut seed_rng, shape, 0.5));
        let cond = InpaintCond::unmasked(&z0.data);
        for (slot, iters) in [1, 5].into_iter().enumerate() {
            let back = sample(
                &invert(&z0, &cond, &sched, &backend, iters)?,
                &cond,
                &sched,
                &backend,
            )?;
            let err: f64 = back
                .data
                .iter()
                .zip(&z0.data)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            mse[slot] += err / z0.data.len() as f64 / 20.0;
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        mse[1] <= mse[0],
        "iters=5 MSE {:e} exceeds iters=1 MSE {:e}",
        mse[1],
        mse[0]
    );
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "fixed-eps error {worst:.1e}; toy MSE iters=1 {:.3e} vs iters=5 {:.3e} (20 seeds, 64×64); {:.1?}",
        mse[0], mse[1], elapsed
    ))
}

/// Textured source with a dark crack-like stroke, and a different target texture.
fn scene(size: usize) -> anyhow::Result<(Image, BinaryMask, Image)> {
    let n = size as f64;
    let in_crack = |y: usize, x: usize| {
        let (fy, fx) = (y as f64 / n, x as f64 / n);
        (fy - 0.5 - 0.15 * (fx * 9.0).sin()).abs() < 0.06 && (0.2..0.8).contains(&fx)
    };
    let src = Image::from_fn(size, size, |y, x| {
        let grain = ((x * 7 + y * 3) % 11) as f64 / 40.0;
        if in_crack(y, x) {
            [0.15 + grain * 0.3, 0.12, 0.1]
        } else {
            [0.7 + grain * 0.5, 0.6, 0.45 + grain]
        }
    })?;
    let mask = BinaryMask::from_fn(size, size, in_crack).dilate(2);
    let tar = Image::from_fn(size, size, |y, x| {
        let stripe = ((x / 6 + y / 9) % 2) as f64;
        [0.35 + 0.2 * stripe, 0.5 + 0.1 * stripe, 0.62]
    })?;
    Ok((src, mask, tar))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (src, mask, tar) = scene(256)?;
    let config = PipelineConfig {
        steps: 25,
        invert_iters: 5,
        toy_token_stride: 2,
        shift_y: 12.0,
        ..PipelineConfig::default()
    };
    let run = harmonize(&src, &mask, &tar, &config)?;
    let elapsed = start.elapsed();
    let inversion = 25 * 5 * 2;
    let generation = 25 * 2;
    let expected = [
        (Stream::Src, inversion + generation),
        (Stream::Tar, inversion),
        (Stream::Geo, inversion),
        (Stream::Out, generation),
    ];
    for (stream, count) in expected {
        let got = run.dispatch_census.get(&stream).copied().unwrap_or(0);
        ensure!(got == count, "{stream}: {got} dispatches, expected {count}");
    }
    let total: usize = run.dispatch_census.values().sum();
    ensure!(
        total == 3 * inversion + 2 * generation,
        "total census {total}"
    );
    let out = &run.output_image;
    ensure!(
        (out.height(), out.width()) == (tar.height(), tar.width()),
        "output size differs from target"
    );
    ensure!(
        out.pixels().iter().all(|v| v.is_finite()),
        "non-finite output"
    );
    ensure!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    Ok(format!(
        "T=25, iters=5, 2 layers: census {total} dispatches as predicted, {elapsed:.1?}"
    ))
}

fn write_scene(dir: &Path, size: usize) -> anyhow::Result<()> {
    let (src, mask, tar) = scene(size)?;
    src.save_png(dir.join("src.png"))?;
    mask.save_png(dir.join("mask.png"))?;
    tar.save_png(dir.join("tar.png"))?;
    Ok(())
}

fn run_cli(dir: &Path, args: &[&str]) -> anyhow::Result<()> {
    let output = Command::new(env!("CARGO_BIN_EXE_harmonize"))
        .current_dir(dir)
        .env_remove("HARMONIZE_BACKEND")
        .args(args)
        .output()?;
    ensure!(
        output.status.success(),
        "harmonize {args:?} exited with {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    Ok(())
}

fn without_timings(mut manifest: Value) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.remove("timings_ms");
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    strip(&mut manifest);
    manifest
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir()?;
    write_scene(dir.path(), 64)?;
    let args = [
        "harmonize",
        "--src",
        "src.png",
        "--mask",
        "mask.png",
        "--tar",
        "tar.png",
        "--out",
        "out.png",
        "--seed",
        "3",
        "--shift-x",
        "5",
    ];
    let files = ["out.png", "out.pasted.png", "out.manifest.json"];
    run_cli(dir.path(), &args)?;
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)))
        .collect::<Result<_, _>>()?;
    for f in files {
        std::fs::remove_file(dir.path().join(f))?;
    }
    run_cli(dir.path(), &args)?;
    for (name, bytes) in files.iter().zip(&first).take(2) {
        ensure!(
            std::fs::read(dir.path().join(name))? == *bytes,
            "{name} differs between runs"
        );
    }
    let a = without_timings(serde_json::from_slice(&first[2])?);
    let b = without_timings(read_json(&dir.path().join(files[2]))?);
    ensure!(a == b, "manifests differ beyond timings");
    Ok("byte-identical PNGs, manifests equal apart from timings_ms".into())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir()?;
    write_scene(dir.path(), 64)?;
    run_cli(
        dir.path(),
        &[
            "ablate",
            "--axis",
            "all",
            "--src",
            "src.png",
            "--mask",
            "mask.png",
            "--tar",
            "tar.png",
            "--out-dir",
            "ab",
            "--steps",
            "4",
            "--invert-iters",
            "2",
        ],
    )?;
    let expected: BTreeSet<&str> = [
        "color_a0.0",
        "color_a0.5",
        "color_a1.0",
        "color_histogram",
        "ta_target_only",
        "ta_geo_only",
        "ta_both",
        "gp_self_only",
        "gp_src_only",
        "gp_both",
    ]
    .into();
    let pngs: BTreeSet<String> = std::fs::read_dir(dir.path().join("ab"))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter_map(|n| n.strip_suffix(".png").map(str::to_string))
        .collect();
    ensure!(
        pngs.iter().map(String::as_str).collect::<BTreeSet<_>>() == expected,
        "outputs {pngs:?}"
    );
    let manifest = read_json(&dir.path().join("ab/manifest.json"))?;
    let conditions = manifest["conditions"]
        .as_array()
        .cloned()
        .unwrap_or_default();
    ensure!(
        conditions.len() == 10,
        "{} manifest entries",
        conditions.len()
    );
    let mut per_axis = std::collections::BTreeMap::new();
    for c in &conditions {
        let name = c["name"].as_str().unwrap_or_default();
        let axis = c["axis"].as_str().unwrap_or_default();
        ensure!(
            expected.contains(name) && name.starts_with(axis),
            "entry {name} tagged {axis}"
        );
        *per_axis.entry(axis.to_string()).or_insert(0) += 1;
    }
    ensure!(
        per_axis.values().copied().collect::<Vec<_>>() == [4, 3, 3],
        "axis counts {per_axis:?}"
    );
    Ok("10 condition outputs (color 4, ta 3, gp 3), each tagged in the manifest".into())
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let codec = ToyLatentCodec::new(8, 9)?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let img = random_image(&mut rng, 128, 128)?;
        let back = codec.decode(&codec.encode(&img)?)?;
        worst = worst.max(max_abs(back.pixels(), img.pixels()));
    }
    ensure!(worst < 1e-5, "codec round trip error {worst:e}");
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let p = rng.gen();
        let mask = random_mask(&mut rng, h, w, p);
        ensure!(
            mask.resize_to(h, w)? == mask,
            "resize at equal size changed the mask"
        );
        let (th, tw) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let r = mask.resize_to(th, tw)?;
        ensure!(
            (r.height(), r.width()) == (th, tw),
            "resize produced the wrong size"
        );
        ensure!(r.resize_to(th, tw)? == r, "resize is not idempotent");
    }
    Ok(format!(
        "codec error {worst:.1e} over 50 128×128 images; mask resize binary and idempotent"
    ))
}

fn criterion_10() -> Outcome {
    let (src, _, tar) = scene(64)?;
    // a 3×3 pixel region is under half of every 8×8 latent cell it touches
    let mask = BinaryMask::rect(64, 64, 30, 30, 33, 33);
    let config = PipelineConfig {
        color_mode: ColorMode::None,
        gp_ablation: GpAblation::SelfOnly,
        steps: 25,
        invert_iters: 5,
        ..PipelineConfig::default()
    };
    let run = harmonize(&src, &mask, &tar, &config)?;
    ensure!(
        run.geometry_mask.resize_to(8, 8)?.is_empty(),
        "latent geometry mask is not empty"
    );

    let codec = ToyLatentCodec::new(config.codec_block, config.seed)?;
    let z_tar = codec.encode(&tar)?;
    let backend = ToyDenoiser::new(ToyDenoiserConfig::new(z_tar.shape()), config.seed)?;
    let sched = NoiseSchedule::stable_diffusion(config.steps)?;
    let cond = InpaintCond::unmasked(&z_tar.data);
    let z_t = invert(&z_tar, &cond, &sched, &backend, config.invert_iters)?;
    let round_trip = codec.decode(&sample(&z_t, &cond, &sched, &backend)?)?;
    let tolerance = max_abs(round_trip.pixels(), tar.pixels());
    let diff = max_abs(run.output_image.pixels(), round_trip.pixels());
    ensure!(
        diff <= tolerance,
        "output differs from the round trip by {diff:e} > {tolerance:e}"
    );
    Ok(format!(
        "|Δ| to target round trip {diff:.1e} within its measured tolerance {tolerance:.1e}"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("attention oracle equivalence", criterion_1),
        ("bit-exact reductions", criterion_2),
        ("color shift exactness", criterion_3),
        ("latent blend exactness", criterion_4),
        ("DDIM inverse and fixed-point refinement", criterion_5),
        ("lockstep ordering", criterion_6),
        ("CLI determinism", criterion_7),
        ("ablation enumeration", criterion_8),
        ("codec and mask resize", criterion_9),
        ("degenerate pipeline", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(e) => {
                failures += 1;
                println!("[FAIL] {:>2} {name}: {e:#}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
