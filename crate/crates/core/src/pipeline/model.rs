use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ActivationTensor, Shape};

/// Sizes of the two-stage network and of one training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub batch: usize,
    pub seq: usize,
    pub d_in: usize,
    /// Width of the activation at the stage cut (C).
    pub channels: usize,
    pub d_out: usize,
}

impl ModelDims {
    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }

    pub fn cut_shape(&self) -> Shape {
        Shape::new(self.batch, self.seq, self.channels)
    }

    pub fn param_count(&self) -> usize {
        self.stage_a_len() + self.stage_b_len()
    }

    pub fn stage_a_len(&self) -> usize {
        self.d_in * self.channels + self.channels
    }

    pub fn stage_b_len(&self) -> usize {
        self.channels * self.d_out + self.d_out
    }

    pub fn validate(&self) -> Result<()> {
        if [self.batch, self.seq, self.d_in, self.channels, self.d_out].contains(&0) {
            return Err(Error::Shape(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Tanh,
    /// Linear-only variant, used to check the affine part in isolation.
    Identity,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the output `y = f(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Identity => 1.0,
        }
    }
}

/// First stage: `act = scale ⊙ f(x·W₁ + b₁)`. Parameters are stored flat,
/// `W₁` (d_in × C, row-major) followed by `b₁` (C). `channel_scale` is a
/// fixed, untrained per-channel gain used to plant outlier channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StageA {
    pub d_in: usize,
    pub channels: usize,
    pub params: Vec<f64>,
    pub channel_scale: Vec<f64>,
    pub nonlinearity: Nonlinearity,
}

/// What stage A keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct StageACache {
    pub inputs: Vec<f64>,
    /// `f(x·W₁ + b₁)` before the channel gain.
    pub hidden: Vec<f64>,
}

impl StageA {
    pub fn zeros(d_in: usize, channels: usize) -> Self {
        Self {
            d_in,
            channels,
            params: vec![0.0; d_in * channels + channels],
            channel_scale: vec![1.0; channels],
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    pub fn random<R: Rng>(d_in: usize, channels: usize, rng: &mut R) -> Self {
        let mut stage = Self::zeros(d_in, channels);
        let w = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).unwrap();
        let b = Normal::new(0.0, 0.1).unwrap();
        let split = d_in * channels;
        for v in &mut stage.params[..split] {
            *v = w.sample(rng);
        }
        for v in &mut stage.params[split..] {
            *v = b.sample(rng);
        }
        stage
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.d_in * self.channels]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.d_in * self.channels..]
    }

    /// Pre-nonlinearity values `x·W₁ + b₁`, one row of C per token.
    pub fn pre_activation(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() % self.d_in != 0 {
            return Err(Error::Shape(format!(
                "{} input values is not a multiple of d_in={}",
                inputs.len(),
                self.d_in
            )));
        }
        let (w, b) = (self.weights(), self.bias());
        let mut out = Vec::with_capacity(inputs.len() / self.d_in * self.channels);
        for x in inputs.chunks_exact(self.d_in) {
            let start = out.len();
            out.extend_from_slice(b);
            let row = &mut out[start..];
            for (i, &xi) in x.iter().enumerate() {
                let wi = &w[i * self.channels..(i + 1) * self.channels];
                for (o, &wij) in row.iter_mut().zip(wi) {
                    *o += xi * wij;
                }
            }
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        inputs: &[f64],
        shape: Shape,
    ) -> Result<(ActivationTensor<f64>, StageACache)> {
        if shape.channels != self.channels || inputs.len() != shape.tokens() * self.d_in {
            return Err(Error::Shape(format!(
                "stage A expects {} tokens of {} inputs producing {} channels, got {} values for {shape}",
                shape.tokens(),
                self.d_in,
                self.channels,
                inputs.len()
            )));
        }
        let hidden: Vec<f64> = self
            .pre_activation(inputs)?
            .into_iter()
            .map(|v| self.nonlinearity.apply(v))
            .collect();
        let act: Vec<f64> = hidden
            .chunks_exact(self.channels)
            .flat_map(|row| row.iter().zip(&self.channel_scale).map(|(h, s)| h * s))
            .collect();
        let act = ActivationTensor::new(shape, act)?;
        if !act.is_finite() {
            return Err(Error::Divergence("stage A produced non-finite activations".into()));
        }
        Ok((
            act,
            StageACache {
                inputs: inputs.to_vec(),
                hidden,
            },
        ))
    }

    /// Parameter gradient given `∂L/∂act`.
    pub fn backward(&self, cache: &StageACache, grad_act: &ActivationTensor<f64>) -> Result<Vec<f64>> {
        if grad_act.data().len() != cache.hidden.len() {
            return Err(Error::Shape(format!(
                "activation gradient has {} values, cache has {}",
                grad_act.data().len(),
                cache.hidden.len()
            )));
        }
        let c = self.channels;
        let mut grad = vec![0.0; self.params.len()];
        let (gw, gb) = grad.split_at_mut(self.d_in * c);
        let mut dpre = vec![0.0; c];
        for ((x, h), ga) in cache
            .inputs
            .chunks_exact(self.d_in)
            .zip(cache.hidden.chunks_exact(c))
            .zip(grad_act.data().chunks_exact(c))
        {
            for k in 0..c {
                dpre[k] = ga[k] * self.channel_scale[k] * self.nonlinearity.derivative_from_output(h[k]);
                gb[k] += dpre[k];
            }
            for (i, &xi) in x.iter().enumerate() {
                for (g, &d) in gw[i * c..(i + 1) * c].iter_mut().zip(&dpre) {
                    *g += xi * d;
                }
            }
        }
        Ok(grad)
    }
}

/// Second stage: linear head `pred = act·W₂ + b₂` with loss
/// `½ · mean((pred − y)²)`. Parameters are `W₂` (C × d_out) then `b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageB {
    pub channels: usize,
    pub d_out: usize,
    pub params: Vec<f64>,
}

/// Loss and gradients produced by stage B for one batch.
#[derive(Debug, Clone)]
pub struct StageBOutput {
    pub loss: f64,
    pub grad_act: ActivationTensor<f64>,
    pub grad_params: Vec<f64>,
}

impl StageB {
    pub fn zeros(channels: usize, d_out: usize) -> Self {
        Self {
            channels,
            d_out,
            params: vec![0.0; channels * d_out + d_out],
        }
    }

    /// Weights drawn with standard deviation `gain / √(Σ scale²)` so the
    /// output variance does not depend on how many channels are amplified.
    pub fn random<R: Rng>(channels: usize, d_out: usize, channel_scale: &[f64], gain: f64, rng: &mut R) -> Self {
        let mut stage = Self::zeros(channels, d_out);
        let energy: f64 = channel_scale.iter().map(|s| s * s).sum();
        let w = Normal::new(0.0, gain / energy.sqrt()).unwrap();
        let split = channels * d_out;
        for v in &mut stage.params[..split] {
            *v = w.sample(rng);
        }
        stage
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.channels * self.d_out]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.channels * self.d_out..]
    }

    pub fn predict(&self, act: &ActivationTensor<f64>) -> Result<Vec<f64>> {
        if act.shape().channels != self.channels {
            return Err(Error::Shape(format!(
                "stage B expects {} channels, got {}",
                self.channels,
                act.shape().channels
            )));
        }
        let (w, b) = (self.weights(), self.bias());
        let mut out = Vec::with_capacity(act.shape().tokens() * self.d_out);
        for a in act.tokens() {
            for o in 0..self.d_out {
                let mut acc = b[o];
                for (k, &ak) in a.iter().enumerate() {
                    acc += ak * w[k * self.d_out + o];
                }
                out.push(acc);
            }
        }
        Ok(out)
    }

    pub fn loss(&self, act: &ActivationTensor<f64>, targets: &[f64]) -> Result<f64> {
        let pred = self.predict(act)?;
        check_targets(&pred, targets)?;
        let n = pred.len() as f64;
        Ok(0.5 * pred.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n)
    }

    pub fn loss_and_grad(&self, act: &ActivationTensor<f64>, targets: &[f64]) -> Result<StageBOutput> {
        let pred = self.predict(act)?;
        check_targets(&pred, targets)?;
        let n = pred.len() as f64;
        let residual: Vec<f64> = pred.iter().zip(targets).map(|(p, y)| p - y).collect();
        let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("stage B loss is {loss}")));
        }

        let c = self.channels;
        let w = self.weights();
        let mut grad_params = vec![0.0; self.params.len()];
        let mut grad_act = Vec::with_capacity(act.data().len());
        let (gw, gb) = grad_params.split_at_mut(c * self.d_out);
        for (a, r) in act.tokens().zip(residual.chunks_exact(self.d_out)) {
            let dpred: Vec<f64> = r.iter().map(|v| v / n).collect();
            for (o, &d) in dpred.iter().enumerate() {
                gb[o] += d;
            }
            for k in 0..c {
                let wk = &w[k * self.d_out..(k + 1) * self.d_out];
                let gk = &mut gw[k * self.d_out..(k + 1) * self.d_out];
                let mut da = 0.0;
                for o in 0..self.d_out {
                    gk[o] += a[k] * dpred[o];
                    da += dpred[o] * wk[o];
                }
                grad_act.push(da);
            }
        }
        Ok(StageBOutput {
            loss,
            grad_act: ActivationTensor::new(act.shape(), grad_act)?,
            grad_params,
        })
    }
}

fn check_targets(pred: &[f64], targets: &[f64]) -> Result<()> {
    if pred.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            pred.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Both stages of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub dims: ModelDims,
    pub stage_a: StageA,
    pub stage_b: StageB,
}

impl PipelineModel {
    pub fn random<R: Rng>(dims: ModelDims, channel_scale: &[f64], rng: &mut R) -> Result<Self> {
        dims.validate()?;
        if channel_scale.len() != dims.channels {
            return Err(Error::Shape(format!(
                "{} channel gains for {} channels",
                channel_scale.len(),
                dims.channels
            )));
        }
        let mut stage_a = StageA::random(dims.d_in, dims.channels, rng);
        stage_a.channel_scale = channel_scale.to_vec();
        let stage_b = StageB::random(dims.channels, dims.d_out, channel_scale, 1.0, rng);
        Ok(Self {
            dims,
            stage_a,
            stage_b,
        })
    }

    /// Loss of the uncompressed network on arbitrary many tokens.
    pub fn loss(&self, inputs: &[f64], targets: &[f64]) -> Result<f64> {
        let tokens = inputs.len() / self.dims.d_in;
        let shape = Shape::new(1, tokens, self.dims.channels);
        let (act, _) = self.stage_a.forward(inputs, shape)?;
        self.stage_b.loss(&act, targets)
    }

    /// Concatenated parameters `[stage A, stage B]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.stage_a.params.clone();
        v.extend_from_slice(&self.stage_b.params);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let split = self.stage_a.params.len();
        if flat.len() != split + self.stage_b.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                flat.len(),
                split + self.stage_b.params.len()
            )));
        }
        self.stage_a.params.copy_from_slice(&flat[..split]);
        self.stage_b.params.copy_from_slice(&flat[split..]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_activation() {
        let stage = StageA::zeros(3, 4);
        let (act, _) = stage.forward(&[1.0, -2.0, 0.5, 0.3, 0.2, 0.1], Shape::new(1, 2, 4)).unwrap();
        assert!(act.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_variant_scales_with_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut stage = StageA::random(3, 4, &mut rng);
        stage.nonlinearity = Nonlinearity::Identity;
        let split = 12;
        for v in &mut stage.params[split..] {
            *v = 0.0;
        }
        let x = [0.3, -1.1, 0.7];
        let pre = stage.pre_activation(&x).unwrap();
        for v in &mut stage.params[..split] {
            *v *= 2.0;
        }
        let doubled = stage.pre_activation(&x).unwrap();
        for (a, b) in pre.iter().zip(&doubled) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = StageB::random(4, 2, &[1.0; 4], 1.0, &mut rng);
        let act = ActivationTensor::new(Shape::new(1, 3, 4), (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let targets = head.predict(&act).unwrap();
        let out = head.loss_and_grad(&act, &targets).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_act.data().iter().all(|&g| g == 0.0));
        assert!(out.grad_params.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_scales_quadratically_with_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = StageB::random(4, 2, &[1.0; 4], 1.0, &mut rng);
        let act = ActivationTensor::new(Shape::new(1, 2, 4), vec![0.5; 8]).unwrap();
        let pred = head.predict(&act).unwrap();
        let residual = [0.3, -0.2, 0.1, 0.4];
        let t1: Vec<f64> = pred.iter().zip(&residual).map(|(p, r)| p - r).collect();
        let t3: Vec<f64> = pred.iter().zip(&residual).map(|(p, r)| p - 3.0 * r).collect();
        let l1 = head.loss(&act, &t1).unwrap();
        let l3 = head.loss(&act, &t3).unwrap();
        assert!((l3 - 9.0 * l1).abs() < 1e-12);
        assert!(l1 >= 0.0);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let stage = StageA::zeros(3, 4);
        assert!(stage.forward(&[1.0; 5], Shape::new(1, 2, 4)).is_err());
        let head = StageB::zeros(4, 2);
        let act = ActivationTensor::new(Shape::new(1, 1, 4), vec![0.0; 4]).unwrap();
        assert!(head.loss_and_grad(&act, &[0.0; 3]).is_err());
    }
}
