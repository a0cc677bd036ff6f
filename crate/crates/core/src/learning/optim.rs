//! AdamW with decoupled weight decay.

use crate::encoder::{EncoderConfig, EncoderParams, OptimizerSnapshot};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &EncoderParams<T>) -> Self {
        let m: Vec<Vec<T>> = params.tensors().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        AdamW { config, step: 0, v: m.clone(), m }
    }

    /// Applies one update. Tensors are visited in declaration order, the same
    /// order used by [`EncoderParams::tensors`].
    pub fn update(&mut self, params: &mut EncoderParams<T>, grads: &EncoderParams<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let decay = T::one() - T::lit(c.lr * c.weight_decay);
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        let grads = grads.tensors();
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        params.visit_mut(|_, p| {
            let g = grads[idx].1;
            let (m, v) = (&mut m_all[idx], &mut v_all[idx]);
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        let conv = |xs: &Vec<Vec<T>>| xs.iter().map(|t| t.iter().map(|x| x.as_f32()).collect()).collect();
        OptimizerSnapshot { step: self.step, m: conv(&self.m), v: conv(&self.v) }
    }

    /// Restores moments saved by [`AdamW::snapshot`]; fails when the tensor
    /// layout does not match `config`.
    pub fn restore(config: AdamWConfig, model: &EncoderConfig, snap: &OptimizerSnapshot) -> Result<Self, String> {
        let shapes: Vec<usize> = EncoderParams::<T>::zeros(model).tensors().iter().map(|(_, t)| t.len()).collect();
        let fits = |xs: &Vec<Vec<f32>>| xs.len() == shapes.len() && xs.iter().zip(&shapes).all(|(x, &n)| x.len() == n);
        if !fits(&snap.m) || !fits(&snap.v) {
            return Err("optimizer state does not match the model layout".into());
        }
        let conv = |xs: &Vec<Vec<f32>>| xs.iter().map(|t| t.iter().map(|&x| T::of_f32(x)).collect()).collect();
        Ok(AdamW { config, step: snap.step, m: conv(&snap.m), v: conv(&snap.v) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let cfg = EncoderConfig { hidden: 8, heads: 2, gcn_out: 4, proj_dims: (4, 6, 3), num_intents: 2, ..Default::default() };
        let mut params = EncoderParams::<f64>::init(&cfg);
        let before = params.clone();
        let mut grads = EncoderParams::<f64>::zeros(&cfg);
        grads.visit_mut(|_, g| g.iter_mut().enumerate().for_each(|(k, x)| *x = if k % 2 == 0 { 0.5 } else { -2.0 }));
        let adam = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(adam, &params);
        opt.update(&mut params, &grads);
        for ((_, a), (_, b)) in before.tensors().iter().zip(params.tensors()) {
            for (k, (x, y)) in a.iter().zip(b).enumerate() {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                assert!((y - x - sign * 1e-3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decay_shrinks_weights_without_gradient() {
        let cfg = EncoderConfig { hidden: 8, heads: 2, gcn_out: 4, proj_dims: (4, 6, 3), num_intents: 2, ..Default::default() };
        let mut params = EncoderParams::<f64>::init(&cfg);
        let w0 = params.gcn.weight[[0, 0]];
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.1, ..Default::default() }, &params);
        opt.update(&mut params, &EncoderParams::zeros(&cfg));
        assert!((params.gcn.weight[[0, 0]] - w0 * (1.0 - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = EncoderConfig { hidden: 8, heads: 2, gcn_out: 4, proj_dims: (4, 6, 3), num_intents: 2, ..Default::default() };
        let mut params = EncoderParams::<f32>::init(&cfg);
        let grads = params.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), &params);
        opt.update(&mut params, &grads);
        let back = AdamW::<f32>::restore(opt.config, &cfg, &opt.snapshot()).unwrap();
        assert_eq!(back.step, 1);
        assert_eq!(back.m, opt.m);
        assert_eq!(back.v, opt.v);
    }
}
