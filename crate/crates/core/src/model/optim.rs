//! SGD with heavy-ball momentum and a multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    /// Steps at which the rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
}

impl LrSchedule {
    /// Milestones at 2/3 and 5/6 of `total_steps`, decay 0.1.
    pub fn scaled(base_lr: f64, total_steps: usize) -> Self {
        LrSchedule {
            base_lr,
            decay: 0.1,
            milestones: vec![total_steps * 2 / 3, total_steps * 5 / 6],
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        self.base_lr * self.decay.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("learning rate must be positive and decay in (0, 1]".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("milestones must be non-decreasing".into()));
        }
        Ok(())
    }
}

/// `v <- mu v + g; w <- w - lr v`.
pub fn momentum_update(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64) {
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi + gi;
        *wi -= lr * *vi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub velocity: Params,
    pub step: usize,
    pub momentum: f64,
    pub schedule: LrSchedule,
}

impl OptimState {
    pub fn new(cfg: &ModelConfig, schedule: LrSchedule) -> Self {
        OptimState {
            velocity: Params::zeros(cfg),
            step: 0,
            momentum: 0.9,
            schedule,
        }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr_at(self.step)
    }

    /// Applies one update and advances the step counter.
    pub fn apply(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        if self.velocity.len() != params.len() || grads.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match the parameters"));
        }
        let lr = self.lr();
        for ((w, v), g) in params
            .groups_mut()
            .into_iter()
            .zip(self.velocity.groups_mut())
            .zip(grads.groups())
        {
            momentum_update(w, v, g, lr, self.momentum);
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_momentum_steps_on_a_quadratic() {
        let (mut w, mut v) = ([1.0], [0.0]);
        for expected in [0.9, 0.72] {
            let g = [w[0]];
            momentum_update(&mut w, &mut v, &g, 0.1, 0.9);
            assert!((w[0] - expected).abs() < 1e-15);
        }
        assert!((v[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn multi_step_schedule() {
        let s = LrSchedule {
            base_lr: 0.001,
            decay: 0.1,
            milestones: vec![100_000, 200_000],
        };
        assert_eq!(s.lr_at(0), 0.001);
        assert!((s.lr_at(150_000) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(250_000) - 0.001 * 0.01).abs() < 1e-18);
        assert_eq!(LrSchedule::scaled(0.01, 300).milestones, vec![200, 250]);
    }

    #[test]
    fn apply_matches_the_scalar_rule() {
        let cfg = ModelConfig::tiny();
        let mut params = Params::zeros(&cfg);
        params.fill(1.0);
        let mut grads = Params::zeros(&cfg);
        grads.fill(0.5);
        let mut opt = OptimState::new(&cfg, LrSchedule::scaled(0.1, 100));
        opt.apply(&mut params, &grads).unwrap();
        opt.apply(&mut params, &grads).unwrap();
        // v1 = 0.5, w1 = 0.95; v2 = 0.95, w2 = 0.855
        assert!(params.groups().iter().all(|g| g.iter().all(|&w| (w - 0.855).abs() < 1e-14)));
        assert_eq!(opt.step, 2);
    }
}
