use crate::error::{Error, Result};

/// Smoothness and contraction constants used to check the step-size
/// conditions of the convergence guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds {
    /// Quantization coefficient δ ∈ (0, 1).
    pub delta: f64,
    /// Smoothness constant L > 0.
    pub lsmooth: f64,
}

impl TheoryBounds {
    /// Exclusive upper bound on β₁: `δ / (24 − 12δ)`.
    pub fn max_beta1(&self) -> f64 {
        self.delta / (24.0 - 12.0 * self.delta)
    }

    /// Inclusive upper bound on η: `min{1/(2L), (β₁/L)·√(δ/8)}`.
    pub fn max_lr(&self, beta1: f64) -> f64 {
        (1.0 / (2.0 * self.lsmooth)).min(beta1 / self.lsmooth * (self.delta / 8.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    /// When set, `beta1` and `lr` must satisfy [`TheoryBounds`].
    pub strict: Option<TheoryBounds>,
}

impl OptimizerConfig {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Self {
            lr,
            beta1,
            strict: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.beta1 > 0.0 && self.beta1 <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta1 must be in (0, 1], got {}", self.beta1)));
        }
        let Some(bounds) = self.strict else {
            return Ok(());
        };
        if !(bounds.delta > 0.0 && bounds.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must be in (0, 1), got {}", bounds.delta)));
        }
        if !(bounds.lsmooth > 0.0) || !bounds.lsmooth.is_finite() {
            return Err(Error::InvalidConfig(format!("L must be > 0, got {}", bounds.lsmooth)));
        }
        let max_beta1 = bounds.max_beta1();
        if self.beta1 >= max_beta1 {
            return Err(Error::InvalidConfig(format!(
                "beta1={} outside (0, {max_beta1:.6}) for delta={}",
                self.beta1, bounds.delta
            )));
        }
        let max_lr = bounds.max_lr(self.beta1);
        if self.lr > max_lr {
            return Err(Error::InvalidConfig(format!(
                "lr={} exceeds {max_lr:.6e} for beta1={}, delta={}, L={}",
                self.lr, self.beta1, bounds.delta, bounds.lsmooth
            )));
        }
        Ok(())
    }
}

/// Momentum buffer for one stage's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub m: Vec<f64>,
    pub beta1: f64,
    pub lr: f64,
}

impl MomentumState {
    pub fn new(len: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; len],
            beta1: cfg.beta1,
            lr: cfg.lr,
        }
    }

    /// `m ← (1−β₁)m + β₁ĝ`, then `x ← x − ηm`.
    pub fn update(&mut self, grad: &[f64], params: &mut [f64]) -> Result<()> {
        if grad.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "momentum of length {} got gradient {} and parameters {}",
                self.m.len(),
                grad.len(),
                params.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at index {i}")));
        }
        for ((m, &g), x) in self.m.iter_mut().zip(grad).zip(params.iter_mut()) {
            *m = (1.0 - self.beta1) * *m + self.beta1 * g;
            *x -= self.lr * *m;
        }
        Ok(())
    }
}

pub fn momentum_update(state: &mut MomentumState, grad: &[f64], params: &mut [f64]) -> Result<()> {
    state.update(grad, params)
}
