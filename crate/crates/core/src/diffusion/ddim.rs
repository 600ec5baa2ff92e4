use ndarray::{Array3, Zip};

use super::{DenoiserBackend, InpaintCond, Latent, NoiseSchedule};
use crate::attention::AttentionRouter;
use crate::error::{Error, Result};

pub(crate) fn check_finite(data: &Array3<f64>, what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_shape(z: &Array3<f64>, eps: &Array3<f64>) -> Result<()> {
    if z.dim() == eps.dim() {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "latent {:?} vs noise {:?}",
            z.dim(),
            eps.dim()
        )))
    }
}

/// Deterministic DDIM update from level `from` down to level `to`.
pub fn ddim_denoise_step(
    z: &Latent,
    eps: &Array3<f64>,
    sched: &NoiseSchedule,
    from: usize,
    to: usize,
) -> Result<Latent> {
    check_shape(&z.data, eps)?;
    if to > from || from > sched.steps() {
        return Err(Error::param(format!(
            "denoise step must go down: {from} → {to}"
        )));
    }
    let (ab_from, ab_to) = (sched.alpha_bar_at(from), sched.alpha_bar_at(to));
    if ab_from == ab_to {
        return Ok(Latent::new(z.data.clone(), to));
    }
    let (sf, nf) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (st, nt) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let data = Zip::from(&z.data).and(eps).map_collect(|&z, &e| {
        let x0 = (z - nf * e) / sf;
        st * x0 + nt * e
    });
    check_finite(&data, &format!("denoise step {from} → {to}"))?;
    Ok(Latent::new(data, to))
}

/// Coefficients of one inversion step, `z_to = scale·z_from + noise·ε`.
///
/// For a fixed `ε` this is the exact algebraic inverse of
/// [`ddim_denoise_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionStep {
    pub from: usize,
    pub to: usize,
    pub scale: f64,
    pub noise: f64,
}

impl InversionStep {
    pub fn new(sched: &NoiseSchedule, from: usize, to: usize) -> Result<Self> {
        if to < from || to > sched.steps() {
            return Err(Error::param(format!(
                "inversion step must go up: {from} → {to}"
            )));
        }
        let (ab_from, ab_to) = (sched.alpha_bar_at(from), sched.alpha_bar_at(to));
        let scale = (ab_to / ab_from).sqrt();
        let noise = (1.0 - ab_to).sqrt() - scale * (1.0 - ab_from).sqrt();
        Ok(Self {
            from,
            to,
            scale,
            noise,
        })
    }

    /// True when both levels share `ᾱ`, making the step a no-op.
    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.noise == 0.0
    }

    /// Starting point of the fixed-point iteration: a pure rescale.
    pub fn initial(&self, z_from: &Array3<f64>) -> Array3<f64> {
        z_from.mapv(|v| self.scale * v)
    }

    pub fn apply(&self, z_from: &Array3<f64>, eps: &Array3<f64>) -> Result<Array3<f64>> {
        check_shape(z_from, eps)?;
        let data = Zip::from(z_from)
            .and(eps)
            .map_collect(|&z, &e| self.scale * z + self.noise * e);
        check_finite(
            &data,
            &format!("inversion step {} → {}", self.from, self.to),
        )?;
        Ok(data)
    }
}

/// One inversion step with a noise estimate that does not depend on the iterate.
pub fn ddim_invert_step_with_eps(
    z_prev: &Latent,
    eps: &Array3<f64>,
    sched: &NoiseSchedule,
    from: usize,
    to: usize,
) -> Result<Latent> {
    let step = InversionStep::new(sched, from, to)?;
    if step.is_identity() {
        return Ok(Latent::new(z_prev.data.clone(), to));
    }
    Ok(Latent::new(step.apply(&z_prev.data, eps)?, to))
}

/// Fixed-point inversion step: re-evaluate the noise predictor at the current
/// estimate of the noisier latent `iters` times.
#[allow(clippy::too_many_arguments)]
pub fn ddim_invert_step(
    z_prev: &Latent,
    sched: &NoiseSchedule,
    from: usize,
    to: usize,
    backend: &dyn DenoiserBackend,
    cond: &InpaintCond,
    router: &mut dyn AttentionRouter,
    iters: usize,
) -> Result<Latent> {
    if iters == 0 {
        return Err(Error::param("inversion needs at least one iteration"));
    }
    let step = InversionStep::new(sched, from, to)?;
    if step.is_identity() {
        return Ok(Latent::new(z_prev.data.clone(), to));
    }
    let t = sched.timestep_at(to);
    let mut z = step.initial(&z_prev.data);
    for _ in 0..iters {
        let eps = backend.predict_noise(&z, t, cond, router)?;
        z = step.apply(&z_prev.data, &eps)?;
    }
    Ok(Latent::new(z, to))
}
