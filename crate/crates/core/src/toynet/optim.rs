//! Adam, the tri-stage learning-rate schedule and the training state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Sample, ToyNet};
use super::ToyNetError;
use crate::losses::{LossBreakdown, LossWeights};
use crate::nn::Parameterized;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub peak: f64,
    /// Warmup, hold and decay fractions of the run.
    pub phases: (f64, f64, f64),
    pub floor_factor: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            peak: 5e-4,
            phases: (0.1, 0.4, 0.5),
            floor_factor: 0.01,
        }
    }
}

/// Linear warmup from `peak * floor_factor` to `peak`, a hold at `peak`,
/// then exponential decay back to `peak * floor_factor` at `total_steps`.
pub fn tri_stage_lr(step: u64, total_steps: u64, sp: ScheduleParams) -> f64 {
    let total = total_steps.max(1) as f64;
    let s = (step as f64).min(total);
    let floor = sp.peak * sp.floor_factor;
    let warm = sp.phases.0 * total;
    let hold = sp.phases.1 * total;
    let decay = total - warm - hold;
    if s < warm {
        floor + (sp.peak - floor) * s / warm
    } else if s <= warm + hold || decay <= 0.0 {
        sp.peak
    } else {
        let frac = ((s - warm - hold) / decay).min(1.0);
        sp.peak * (sp.floor_factor.ln() * frac).exp()
    }
}

/// Parameters, optimizer moments, step counter and the data-order RNG.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ToyNet,
    pub adam: Adam,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub loss_weights: LossWeights,
}

impl TrainState {
    pub fn new(model: ToyNet, seed: u64) -> Self {
        let n = model.params.num_params();
        Self {
            model,
            adam: Adam::new(n),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            loss_weights: LossWeights::default(),
        }
    }

    /// Computes the batch loss and applies one Adam update at rate `lr`.
    /// A non-finite loss leaves the parameters untouched.
    pub fn train_step(&mut self, batch: &[&Sample], lr: f64) -> Result<LossBreakdown, ToyNetError> {
        let (loss, grad) = self.model.loss_and_grad(batch, self.loss_weights)?;
        if !loss.is_finite() {
            return Err(ToyNetError::NonFiniteLoss { step: self.step });
        }
        let mut theta = self.model.params.flatten();
        self.adam.step(&mut theta, &grad.flatten(), lr);
        self.model.params.unflatten(&theta);
        self.step += 1;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_closed_form() {
        let mut adam = Adam::new(1);
        let mut p = [0.0];
        adam.step(&mut p, &[1.0], 1e-3);
        // m_hat = 1, v_hat = 1
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((adam.m[0] - 0.1).abs() < 1e-15);
        assert!((adam.v[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_only_decays_moments() {
        let mut adam = Adam::new(2);
        let mut p = [1.0, -2.0];
        adam.step(&mut p, &[0.5, -0.25], 1e-2);
        let after_first = p;
        let (m, v) = (adam.m.clone(), adam.v.clone());
        adam.step(&mut p, &[0.0, 0.0], 0.0);
        assert_eq!(p, after_first);
        for i in 0..2 {
            assert_eq!(adam.m[i], 0.9 * m[i]);
            assert_eq!(adam.v[i], 0.999 * v[i]);
        }
    }

    #[test]
    fn adam_is_sign_following() {
        let mut adam = Adam::new(3);
        let mut p = [0.0; 3];
        for _ in 0..10 {
            adam.step(&mut p, &[2.0, -7.0, 0.0], 1e-2);
        }
        assert!(p[0] < 0.0 && p[1] > 0.0 && p[2] == 0.0);
        assert!((p[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn schedule_endpoints_and_phases() {
        let sp = ScheduleParams::default();
        let total = 1000;
        assert!((tri_stage_lr(0, total, sp) - 5e-6).abs() < 1e-18);
        assert_eq!(tri_stage_lr(300, total, sp), 5e-4);
        assert_eq!(tri_stage_lr(100, total, sp), 5e-4);
        assert_eq!(tri_stage_lr(500, total, sp), 5e-4);
        assert!((tri_stage_lr(total, total, sp) - 5e-6).abs() < 1e-12);
        assert!((tri_stage_lr(50, total, sp) - (5e-6 + (5e-4 - 5e-6) * 0.5)).abs() < 1e-18);
        // halfway through the decay the rate is the geometric mean
        assert!((tri_stage_lr(750, total, sp) - 5e-5).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_monotone_within_phases() {
        let sp = ScheduleParams::default();
        let total = 777;
        let lrs: Vec<f64> = (0..=total).map(|s| tri_stage_lr(s, total, sp)).collect();
        let warm_end = (0.1 * total as f64) as usize;
        let hold_end = (0.5 * total as f64) as usize;
        assert!(lrs[..=warm_end].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[hold_end + 1..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| (5e-6 - 1e-18..=5e-4).contains(&l)));
    }
}
