use num_complex::Complex64;

/// RMSProp without momentum: `v ← ρv + (1−ρ)g²`, `p ← p − η·g/(√v + ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

/// Squared-gradient averages for one parameter group. Complex parameters
/// keep separate averages for the real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    cache: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize) -> Self {
        Self {
            cache: vec![0.0; len],
        }
    }

    pub fn from_cache(cache: Vec<f64>) -> Self {
        Self { cache }
    }

    pub fn cache(&self) -> &[f64] {
        &self.cache
    }

    /// Step to subtract for slot `k` with gradient `g`.
    pub fn delta(&mut self, cfg: &RmsPropConfig, k: usize, g: f64, lr: f64) -> f64 {
        let v = &mut self.cache[k];
        *v = cfg.decay * *v + (1.0 - cfg.decay) * g * g;
        lr * g / (v.sqrt() + cfg.eps)
    }

    pub fn step_real(&mut self, cfg: &RmsPropConfig, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(self.cache.len(), params.len());
        for (k, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            *p -= self.delta(cfg, k, g, lr);
        }
    }

    /// `grads` are `∂L/∂w*`.
    pub fn step_complex(
        &mut self,
        cfg: &RmsPropConfig,
        params: &mut [Complex64],
        grads: &[Complex64],
        lr: f64,
    ) {
        debug_assert_eq!(self.cache.len(), 2 * params.len());
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let re = self.delta(cfg, 2 * k, g.re, lr);
            let im = self.delta(cfg, 2 * k + 1, g.im, lr);
            *p -= Complex64::new(re, im);
        }
    }
}
