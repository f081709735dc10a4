//! SGD with momentum and weight decay; learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn joint_loss_noisepu(pu: f64, noise: f64, alpha: f64) -> f64 {
    pu + alpha * noise
}

pub fn joint_loss_regcon(cce: f64, smooth: f64, contrastive: f64, alpha: f64, beta: f64) -> f64 {
    cce + alpha * smooth + beta * contrastive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub velocity: Vec<f64>,
    pub step: u64,
    pub lr: f64,
}

impl OptState {
    pub fn new(n: usize) -> Self {
        OptState { velocity: vec![0.0; n], step: 0, lr: 0.0 }
    }
}

/// `v := momentum * v + (g + weight_decay * w); w := w - lr * v`
pub fn sgd_step(
    values: &mut [f64],
    grads: &[f64],
    opt: &mut OptState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config("optimizer.lr", "must be > 0"));
    }
    if values.len() != grads.len() || values.len() != opt.velocity.len() {
        return Err(Error::Shape {
            expected: format!("{} gradients and buffers", values.len()),
            found: format!("{} / {}", grads.len(), opt.velocity.len()),
        });
    }
    for ((w, g), v) in values.iter_mut().zip(grads).zip(opt.velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *w);
        *w -= lr * *v;
    }
    opt.step += 1;
    opt.lr = lr;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Step { step_size: usize, gamma: f64 },
    CosineWarmRestarts { t0: usize, t_mult: usize, lr_min: f64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Step { step_size, gamma } => {
                if step_size == 0 {
                    return Err(Error::config("scheduler.step_size", "must be >= 1"));
                }
                if !(gamma > 0.0) {
                    return Err(Error::config("scheduler.gamma", "must be > 0"));
                }
            }
            LrSchedule::CosineWarmRestarts { t0, t_mult, lr_min } => {
                if t0 == 0 || t_mult == 0 {
                    return Err(Error::config("scheduler.t0", "t0 and t_mult must be >= 1"));
                }
                if !(lr_min >= 0.0) {
                    return Err(Error::config("scheduler.lr_min", "must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Step { step_size, gamma } => base * gamma.powi((epoch / step_size) as i32),
            LrSchedule::CosineWarmRestarts { t0, t_mult, lr_min } => {
                let mut t_cur = epoch;
                let mut t_i = t0;
                while t_cur >= t_i {
                    t_cur -= t_i;
                    t_i *= t_mult;
                }
                cosine_lr(base, lr_min, t_cur as f64, t_i as f64)
            }
        }
    }
}

pub fn cosine_lr(base: f64, lr_min: f64, t_cur: f64, t_i: f64) -> f64 {
    lr_min + (base - lr_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut w = [1.0];
        let mut opt = OptState::new(1);
        sgd_step(&mut w, &[0.5], &mut opt, 0.1, 0.0, 0.0).unwrap();
        assert!((w[0] - 0.95).abs() < 1e-15);
        assert_eq!(opt.step, 1);
        assert!(sgd_step(&mut w, &[0.5], &mut opt, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn momentum_accumulates_geometrically() {
        let mut w = [0.0];
        let mut opt = OptState::new(1);
        sgd_step(&mut w, &[1.0], &mut opt, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut w, &[1.0], &mut opt, 0.1, 0.9, 0.0).unwrap();
        // v1 = 1, v2 = 1.9; w = -0.1 * (1 + 1.9).
        assert!((opt.velocity[0] - 1.9).abs() < 1e-15);
        assert!((w[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_recurrence() {
        // f(w) = 0.5 * a * (w - c)^2
        let (a, c, lr, m, wd) = (3.0, 2.0, 0.05, 0.9, 0.01);
        let mut w = [-1.0];
        let mut opt = OptState::new(1);
        let (mut ws, mut vs) = (-1.0f64, 0.0f64);
        for _ in 0..100 {
            let g = a * (w[0] - c);
            sgd_step(&mut w, &[g], &mut opt, lr, m, wd).unwrap();
            let gs = a * (ws - c);
            vs = m * vs + gs + wd * ws;
            ws -= lr * vs;
            assert!((w[0] - ws).abs() < 1e-12);
        }
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step { step_size: 5, gamma: 0.5 };
        for e in 0..5 {
            assert_eq!(s.lr(8.9e-4, e), 8.9e-4);
        }
        assert_eq!(s.lr(8.9e-4, 5), 8.9e-4 / 2.0);
        assert_eq!(s.lr(8.9e-4, 10), 8.9e-4 / 4.0);
    }

    #[test]
    fn cosine_endpoints_and_restarts() {
        assert!((cosine_lr(0.002, 1e-5, 0.0, 10.0) - 0.002).abs() < 1e-12);
        assert!((cosine_lr(0.002, 1e-5, 10.0, 10.0) - 1e-5).abs() < 1e-12);
        let s = LrSchedule::CosineWarmRestarts { t0: 10, t_mult: 2, lr_min: 1e-5 };
        assert_eq!(s.lr(0.002, 0), 0.002);
        assert_eq!(s.lr(0.002, 10), 0.002);
        assert_eq!(s.lr(0.002, 30), 0.002);
        assert_eq!(s.lr(0.002, 70), 0.002);
        assert!((s.lr(0.002, 20) - cosine_lr(0.002, 1e-5, 10.0, 20.0)).abs() < 1e-18);
        assert!(s.lr(0.002, 9) < s.lr(0.002, 8));
    }

    #[test]
    fn joint_losses_are_linear() {
        assert_eq!(joint_loss_noisepu(0.3, 0.5, 0.0), 0.3);
        assert!((joint_loss_noisepu(0.3, 0.5, 1.0) - 0.8).abs() < 1e-15);
        assert_eq!(joint_loss_regcon(0.4, 0.3, 0.2, 0.0, 0.0), 0.4);
        assert!((joint_loss_regcon(0.4, 0.3, 0.2, 1.0, 1.0) - 0.9).abs() < 1e-15);
        let f = |a: f64| joint_loss_regcon(0.4, 0.3, 0.2, a, 0.5);
        let (x0, x1, x2) = (f(0.0), f(1.0), f(2.0));
        assert!(((x2 - x1) - (x1 - x0)).abs() < 1e-12);
    }
}
