use std::f64::consts::PI;

use dcr_tensor::{ParamStore, Scalar};

use super::config::{OptimizerConfig, OptimizerKind, TrainConfig};

/// Linear warmup over `warmup` epochs to `base`, then half-cosine decay to
/// zero at epoch `total`. Epochs are 1-based.
pub fn lr_schedule(base: f64, warmup: usize, total: usize, epoch: usize) -> f64 {
    let e = epoch.clamp(1, total.max(1));
    if warmup > 0 && e <= warmup {
        return base * e as f64 / warmup as f64;
    }
    if total <= warmup {
        return base;
    }
    base * 0.5 * (1.0 + (PI * (e - warmup) as f64 / (total - warmup) as f64).cos())
}

/// Training-phase learning rate for epoch `epoch`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    lr_schedule(config.lr, config.warmup_epochs, config.train_epochs, epoch)
}

/// Pre-training learning rate; the warmup shrinks when the phase is short.
pub fn pretrain_lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let warmup = config.warmup_epochs.min(config.pretrain_epochs.saturating_sub(1));
    lr_schedule(config.pretrain_lr, warmup, config.pretrain_epochs, epoch)
}

/// AdamW with decoupled weight decay, or SGD with momentum and L2 decay.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.grad.len()]).collect();
        Optimizer {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let lr_t = T::lit(lr);
        let wd = T::lit(c.weight_decay);
        match c.kind {
            OptimizerKind::Adamw => {
                let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
                let one = T::one();
                let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
                let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
                let eps = T::lit(c.eps);
                for (i, p) in store.iter_mut().enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                        let g = p.grad[j];
                        m[j] = b1 * m[j] + (one - b1) * g;
                        v[j] = b2 * v[j] + (one - b2) * g * g;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *w = *w - lr_t * wd * *w;
                        *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu = T::lit(c.momentum);
                let first_step = self.step == 1;
                for (i, p) in store.iter_mut().enumerate() {
                    let buf = &mut self.first[i];
                    for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                        let g = p.grad[j] + wd * *w;
                        buf[j] = if first_step { g } else { mu * buf[j] + g };
                        *w = *w - lr_t * buf[j];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcr_tensor::Tensor;

    #[test]
    fn schedule_landmarks() {
        let (b, w, e) = (0.01, 5, 45);
        assert_eq!(lr_schedule(b, w, e, w), b);
        assert_eq!(lr_schedule(b, w, e, 1), b / 5.0);
        assert!((lr_schedule(b, w, e, 25) - b / 2.0).abs() < 1e-15);
        assert!(lr_schedule(b, w, e, e).abs() < 1e-15);
        let just_after = lr_schedule(b, w, e, w + 1);
        assert!(just_after < b && b - just_after < b * 0.01);
    }

    fn quadratic_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::vector(vec![1.0, -2.0]));
        // f(x) = 0.5 * |x|^2 has gradient x.
        s.get_mut(id).grad = vec![1.0, -2.0];
        s
    }

    #[test]
    fn adamw_first_step_by_hand() {
        let mut s = quadratic_store();
        let mut opt = Optimizer::new(OptimizerConfig::adamw(), &s);
        opt.step(&mut s, 0.1);
        let got = s.value(s.find("x").unwrap()).data().to_vec();
        for (x0, x) in [1.0f64, -2.0].iter().zip(got) {
            let decayed = x0 - 0.1 * 0.01 * x0;
            // m_hat = g, v_hat = g^2, so the Adam step is lr * g / (|g| + eps).
            let expect = decayed - 0.1 * x0 / (x0.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-10, "{x} vs {expect}");
        }
    }

    #[test]
    fn sgd_two_steps_by_hand() {
        let mut s = quadratic_store();
        let mut opt = Optimizer::new(OptimizerConfig::sgd_momentum(), &s);
        opt.step(&mut s, 0.1);
        let x1: Vec<f64> = [1.0f64, -2.0].iter().map(|x| x - 0.1 * (x + 1e-4 * x)).collect();
        let got = s.value(s.find("x").unwrap()).data().to_vec();
        for (a, b) in got.iter().zip(&x1) {
            assert!((a - b).abs() < 1e-12);
        }
        let id = s.find("x").unwrap();
        s.get_mut(id).grad = x1.clone();
        opt.step(&mut s, 0.1);
        for (j, x0) in [1.0f64, -2.0].iter().enumerate() {
            let b1 = x0 + 1e-4 * x0;
            let b2 = 0.9 * b1 + x1[j] + 1e-4 * x1[j];
            let expect = x1[j] - 0.1 * b2;
            assert!((s.value(id).data()[j] - expect).abs() < 1e-10);
        }
    }
}
