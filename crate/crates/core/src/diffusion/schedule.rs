use crate::error::{Error, Result};

/// Linear-beta noise schedule with `T` evenly spaced sampling timesteps.
///
/// Sampling positions are called *levels*: level 0 is the clean latent
/// (`ᾱ = 1`), level `j ≥ 1` evaluates at `timesteps_ascending[j − 1]`. Level
/// `T` is the noisiest.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_train_steps: usize,
    alpha_bar: Vec<f64>,
    /// Descending training-step indices, one per sampling step.
    timesteps: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(
        num_train_steps: usize,
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    ) -> Result<Self> {
        if steps == 0 || steps > num_train_steps {
            return Err(Error::param(format!(
                "need 1 ≤ T ≤ num_train_steps, got T={steps}, num_train_steps={num_train_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = (num_train_steps.max(2) - 1) as f64;
        let mut alpha_bar = Vec::with_capacity(num_train_steps);
        let mut prod = 1.0;
        for i in 0..num_train_steps {
            let beta = if beta_start == beta_end {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / span
            };
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        let ratio = num_train_steps / steps;
        let timesteps = (0..steps).rev().map(|k| k * ratio).collect();
        Ok(Self {
            num_train_steps,
            alpha_bar,
            timesteps,
        })
    }

    /// Defaults used with the public SD-inpainting checkpoints.
    pub fn stable_diffusion(steps: usize) -> Result<Self> {
        Self::new(1000, steps, 0.00085, 0.012)
    }

    pub fn num_train_steps(&self) -> usize {
        self.num_train_steps
    }

    /// Number of sampling steps `T`.
    pub fn steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Sampled training-step indices, noisiest first.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Training-step index evaluated at `level` (1..=T).
    pub fn timestep_at(&self, level: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&level),
            "level {level} out of 1..={}",
            self.steps()
        );
        self.timesteps[self.steps() - level]
    }

    /// `ᾱ` at a level; 1 at the clean level.
    pub fn alpha_bar_at(&self, level: usize) -> f64 {
        if level == 0 {
            1.0
        } else {
            self.alpha_bar[self.timestep_at(level)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_five_steps() {
        let s = NoiseSchedule::stable_diffusion(25).unwrap();
        assert_eq!(s.timesteps().len(), 25);
        assert_eq!(s.timesteps()[0], 960);
        assert_eq!(*s.timesteps().last().unwrap(), 0);
        assert!(s.timesteps().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn full_schedule_uses_every_step() {
        let s = NoiseSchedule::new(50, 50, 0.001, 0.02).unwrap();
        let all: Vec<usize> = (0..50).rev().collect();
        assert_eq!(s.timesteps(), all.as_slice());
    }

    #[test]
    fn constant_beta_closed_form() {
        let b = 0.01;
        let s = NoiseSchedule::new(100, 10, b, b).unwrap();
        for (k, ab) in s.alpha_bar().iter().enumerate() {
            let expected = (1.0f64 - b).powi(k as i32 + 1);
            assert!((ab - expected).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = NoiseSchedule::stable_diffusion(25).unwrap();
        assert!(s.alpha_bar().windows(2).all(|w| w[0] > w[1]));
        assert!(s.alpha_bar()[0] > 0.999);
        assert_eq!(s.alpha_bar_at(0), 1.0);
        assert!(s.alpha_bar_at(25) < s.alpha_bar_at(24));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::new(10, 0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::new(10, 11, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::new(10, 5, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::new(10, 5, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::new(10, 5, 0.1, 1.0).is_err());
    }
}
