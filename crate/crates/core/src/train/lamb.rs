use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Float;

/// Adam moments per parameter tensor, with a per-tensor trust ratio.
#[derive(Clone, Debug)]
pub struct Lamb {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fixes φ = 1, which turns the update into bias-corrected Adam(W).
    pub force_unit_trust: bool,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Lamb {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            force_unit_trust: false,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Lamb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of parameter `index` (empty before the first step).
    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        match (self.m.get(index), self.v.get(index)) {
            (Some(m), Some(v)) => (m, v),
            _ => (&[], &[]),
        }
    }

    /// One update of every trainable parameter from its accumulated gradient
    /// (missing gradients count as zero). Decay-exempt parameters use λ = 0.
    pub fn step<T: Float>(&mut self, params: &mut ParamStore<T>, lr: f64, weight_decay: f64) -> Result<()> {
        for (_, p) in params.iter() {
            if let Some(g) = &p.grad {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        if self.m.len() != params.len() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let decay = if p.weight_decay_exempt { 0.0 } else { weight_decay };
            let g: Vec<f64> = match &p.grad {
                Some(g) => g.data().iter().map(|x| x.as_f64()).collect(),
                None => vec![0.0; m.len()],
            };
            let w = p.value.data_mut();
            let mut r = vec![0.0; w.len()];
            let (mut wn, mut rn) = (0.0f64, 0.0f64);
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let wi = w[i].as_f64();
                r[i] = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps) + decay * wi;
                wn += wi * wi;
                rn += r[i] * r[i];
            }
            let (wn, rn) = (wn.sqrt(), rn.sqrt());
            let phi = if self.force_unit_trust || wn == 0.0 || rn == 0.0 {
                1.0
            } else {
                wn / rn
            };
            for (wi, ri) in w.iter_mut().zip(&r) {
                *wi = T::of(wi.as_f64() - lr * phi * ri);
            }
        }
        Ok(())
    }
}
