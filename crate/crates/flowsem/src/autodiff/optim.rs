//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state over a fixed list of parameter arrays, addressed by
/// index. Decay is applied per parameter group: matrices decay, while
/// biases, norms, embeddings and positional tables are exempt (the caller
/// marks each parameter).
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, param_sizes: &[usize]) -> Self {
        AdamW {
            cfg,
            step: 0,
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Advances the shared step counter; call once before updating the
    /// parameter arrays of one optimization step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One AdamW update for parameter array `idx`:
    /// `w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)`.
    pub fn update(&mut self, idx: usize, param: &mut [f32], grad: &[f32], decay: bool) {
        assert_eq!(param.len(), grad.len(), "adamw: grad length");
        assert!(self.step > 0, "adamw: begin_step before update");
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let m = &mut self.m[idx];
        let v = &mut self.v[idx];
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let wd = if decay { weight_decay } else { 0.0 };
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * param[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_noop() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[3]);
        let mut w = vec![1.0f32, -2.0, 0.5];
        let before = w.clone();
        opt.begin_step();
        opt.update(0, &mut w, &[0.0, 0.0, 0.0], true);
        assert_eq!(w, before);
    }

    #[test]
    fn one_step_on_square_descends() {
        // f(w) = w^2, grad = 2w, from w = 1.
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[1]);
        let mut w = vec![1.0f32];
        opt.begin_step();
        let g = 2.0 * w[0];
        opt.update(0, &mut w, &[g], false);
        assert!(w[0].abs() < 1.0);
    }

    #[test]
    fn first_step_is_signed_lr_in_small_eps_limit() {
        let cfg = AdamWConfig {
            lr: 0.01,
            eps: 1e-12,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[2]);
        let mut w = vec![0.0f32, 0.0];
        opt.begin_step();
        opt.update(0, &mut w, &[0.37, -5.0], false);
        // m_hat = g, v_hat = g^2 after bias correction, so the step is
        // -lr * g / |g| = -lr * sign(g).
        assert!((w[0] + 0.01).abs() < 1e-6, "{}", w[0]);
        assert!((w[1] - 0.01).abs() < 1e-6, "{}", w[1]);
    }

    #[test]
    fn decay_flag_controls_shrinkage() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[1, 1]);
        let mut a = vec![1.0f32];
        let mut b = vec![1.0f32];
        opt.begin_step();
        opt.update(0, &mut a, &[0.0], true);
        opt.update(1, &mut b, &[0.0], false);
        assert!((a[0] - 0.95).abs() < 1e-6);
        assert_eq!(b[0], 1.0);
    }
}
