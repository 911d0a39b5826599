use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::TrainConfig;

/// Learning rate at `step` (0-based).
///
/// Linear warmup from 0 reaches `lr_max` at step `warmup_epochs *
/// steps_per_epoch`; a cosine then decays to `lr_max / 100`, landing on the
/// floor at the last step.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.total_epochs * steps_per_epoch;
    if step < warm {
        return cfg.lr_max * step as f64 / warm as f64;
    }
    let lr_min = cfg.lr_max / 100.0;
    let period = total.saturating_sub(1).saturating_sub(warm);
    if period == 0 {
        return cfg.lr_max;
    }
    let t = (step - warm).min(period) as f64 / period as f64;
    lr_min + 0.5 * (cfg.lr_max - lr_min) * (1.0 + (PI * t).cos())
}

/// Moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// `w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.numel() != g.len() {
                return Err(Error::mismatch("adamw", p.shape(), &[g.len()]));
            }
        }
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let eps = T::of(self.eps);
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * self.weight_decay);
        let one = T::one();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize) -> TrainConfig {
        TrainConfig {
            total_epochs: total,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg(20);
        let spe = 7;
        assert_eq!(lr_schedule(0, spe, &c), 0.0);
        assert_eq!(lr_schedule(5 * spe, spe, &c), 0.0034);
        let last = 20 * spe - 1;
        assert!((lr_schedule(last, spe, &c) - 3.4e-5).abs() < 1e-18);
        // continuity at the boundary
        let before = lr_schedule(5 * spe - 1, spe, &c);
        assert!((0.0034 - before) <= 0.0034 / 35.0 + 1e-15);
    }

    #[test]
    fn schedule_is_monotone_in_each_phase() {
        let c = cfg(12);
        let spe = 3;
        let lrs: Vec<f64> = (0..36).map(|s| lr_schedule(s, spe, &c)).collect();
        assert!(lrs[..=15].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[15..].windows(2).all(|w| w[0] > w[1]));
        assert!(lrs.iter().all(|&l| (0.0..=0.0034).contains(&l)));
    }

    #[test]
    fn no_warmup_starts_at_max() {
        let c = TrainConfig { warmup_epochs: 0, total_epochs: 3, ..TrainConfig::default() };
        assert_eq!(lr_schedule(0, 2, &c), 0.0034);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![Tensor::from_vec(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..3 {
            opt.step(&mut p, &[vec![0.0; 3]], 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_value() {
        let mut p = vec![Tensor::from_vec(vec![1], vec![1.0f64]).unwrap()];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut p, &[vec![1.0]], 0.1).unwrap();
        let expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0].data()[0] - expect).abs() < 1e-15);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_is_exact() {
        let w0 = [0.7f32, -1.3, 2.0];
        let mut p = vec![Tensor::from_vec(vec![3], w0.to_vec()).unwrap()];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8, 0.01);
        opt.step(&mut p, &[vec![0.0; 3]], 0.5).unwrap();
        let k = (1.0f64 - 0.5 * 0.01) as f32;
        for (a, b) in p[0].data().iter().zip(w0) {
            assert_eq!(*a, b * k);
        }
    }

    #[test]
    fn shape_checks() {
        let mut p = vec![Tensor::from_vec(vec![2], vec![1.0f64, 2.0]).unwrap()];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8, 0.0);
        assert!(opt.step(&mut p, &[vec![0.0; 3]], 0.1).is_err());
        assert!(opt.step(&mut p, &[], 0.1).is_err());
        assert_eq!(opt.steps_taken(), 0);
    }
}
