//! MLP baseline: a window of the current and past input samples through
//! tanh hidden layers, each with additive conditioning `tanh(W h + V c + b)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::nncore::{causal_conv_backward, causal_conv_forward, tanh_backward, tanh_forward, ConvKernel, Tensor2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Window length: the current sample plus `input_size - 1` past samples.
    pub input_size: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    #[serde(default = "one")]
    pub conditioning_dim: usize,
}

fn one() -> usize {
    1
}

impl Default for MlpConfig {
    /// Window matched to the standard WaveNet receptive field, 8 x 16 hidden.
    fn default() -> Self {
        Self {
            input_size: 2047,
            hidden_layers: 8,
            hidden_units: 16,
            conditioning_dim: 1,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_layers == 0 || self.hidden_units == 0 || self.conditioning_dim == 0 {
            return Err(Error::Config("MLP sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        self.input_size - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    /// Hidden layer weights; layer 0 is a causal convolution spanning the whole window.
    pub weights: Vec<ConvKernel>,
    pub cond: Vec<ConvKernel>,
    pub output: ConvKernel,
}

pub struct MlpCache {
    input: Tensor2,
    cond: Tensor2,
    hidden: Vec<Tensor2>,
}

impl Mlp {
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_units;
        let weights = (0..config.hidden_layers)
            .map(|j| {
                if j == 0 {
                    ConvKernel::zeros(h, 1, config.input_size, 1, true)
                } else {
                    ConvKernel::pointwise(h, h, true)
                }
            })
            .collect();
        let cond = (0..config.hidden_layers)
            .map(|_| ConvKernel::pointwise(h, config.conditioning_dim, false))
            .collect();
        Ok(Self {
            weights,
            cond,
            output: ConvKernel::pointwise(1, h, true),
            config,
        })
    }

    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in net.kernels_mut() {
            k.init_uniform(&mut rng);
        }
        Ok(net)
    }

    /// Serialization order: per hidden layer W (taps, bias) then V; finally the output layer.
    pub fn kernels(&self) -> Vec<&ConvKernel> {
        let mut out = Vec::new();
        for (w, v) in self.weights.iter().zip(&self.cond) {
            out.push(w);
            out.push(v);
        }
        out.push(&self.output);
        out
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut ConvKernel> {
        let mut out = Vec::new();
        for (w, v) in self.weights.iter_mut().zip(self.cond.iter_mut()) {
            out.push(w);
            out.push(v);
        }
        out.push(&mut self.output);
        out
    }

    /// One prediction from a window ordered oldest sample first.
    pub fn forward_window(&self, window: &[f64], control: &[f64]) -> Result<f64> {
        if window.len() != self.config.input_size {
            return Err(Error::Shape(format!(
                "window of {} samples, model expects {}",
                window.len(),
                self.config.input_size
            )));
        }
        if control.len() != self.config.conditioning_dim {
            return Err(Error::Shape("conditioning vector length".into()));
        }
        let mut h: Vec<f64> = window.to_vec();
        for (w, v) in self.weights.iter().zip(&self.cond) {
            let next = (0..w.out_channels)
                .map(|o| {
                    let mut acc = w.bias.as_ref().map_or(0.0, |b| b[o]);
                    for i in 0..w.in_channels {
                        for t in 0..w.width {
                            // window-wide first layer: in_channels 1, width = window
                            let src = if w.width > 1 { h[t] } else { h[i] };
                            acc += w.tap(o, i, t) * src;
                        }
                    }
                    for (d, &c) in control.iter().enumerate() {
                        acc += v.tap(o, d, 0) * c;
                    }
                    acc.tanh()
                })
                .collect();
            h = next;
        }
        let b = self.output.bias.as_ref().map_or(0.0, |b| b[0]);
        Ok(b + h.iter().enumerate().map(|(i, v)| self.output.tap(0, i, 0) * v).sum::<f64>())
    }

    fn check_inputs(&self, x: &Tensor2, c: &Tensor2) -> Result<()> {
        if x.channels() != 1 || c.channels() != self.config.conditioning_dim || x.len() != c.len() {
            return Err(Error::Shape(format!(
                "input {:?} and conditioning {:?} do not fit the MLP",
                x.shape(),
                c.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor2, c: &Tensor2, keep: bool) -> Result<(Tensor2, Option<MlpCache>)> {
        self.check_inputs(x, c)?;
        let mut hidden = Vec::new();
        let mut h = x.clone();
        for (w, v) in self.weights.iter().zip(&self.cond) {
            let mut pre = causal_conv_forward(w, &h)?;
            pre.add_assign(&causal_conv_forward(v, c)?)?;
            let next = tanh_forward(&pre);
            if keep {
                hidden.push(next.clone());
            }
            h = next;
        }
        let y = causal_conv_forward(&self.output, &h)?;
        let cache = keep.then(|| MlpCache {
            input: x.clone(),
            cond: c.clone(),
            hidden,
        });
        Ok((y, cache))
    }
}

impl Network for Mlp {
    type Cache = MlpCache;

    fn num_params(&self) -> usize {
        self.kernels().iter().map(|k| k.num_params()).sum()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for k in self.kernels() {
            k.flatten_into(&mut out);
        }
        out
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for a model with {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut rest = flat;
        for k in self.kernels_mut() {
            rest = k.unflatten_from(rest)?;
        }
        Ok(())
    }

    fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    fn conditioning_dim(&self) -> usize {
        self.config.conditioning_dim
    }

    fn forward(&self, x: &Tensor2, c: &Tensor2) -> Result<Tensor2> {
        Ok(self.run(x, c, false)?.0)
    }

    fn forward_train(&self, x: &Tensor2, c: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        let (y, cache) = self.run(x, c, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    fn backward(&self, cache: &MlpCache, upstream: &Tensor2) -> Result<Vec<f64>> {
        let last = cache.hidden.last().ok_or_else(|| Error::Shape("empty cache".into()))?;
        let (mut d_h, g_out) = causal_conv_backward(&self.output, last, upstream)?;
        let mut layer_grads = Vec::with_capacity(self.weights.len());
        for j in (0..self.weights.len()).rev() {
            let d_pre = tanh_backward(&cache.hidden[j], &d_h)?;
            let input = if j == 0 { &cache.input } else { &cache.hidden[j - 1] };
            let (d_in, g_w) = causal_conv_backward(&self.weights[j], input, &d_pre)?;
            let (_, g_v) = causal_conv_backward(&self.cond[j], &cache.cond, &d_pre)?;
            layer_grads.push((g_w, g_v));
            d_h = d_in;
        }
        let mut grads = Vec::with_capacity(self.num_params());
        for (g_w, g_v) in layer_grads.iter().rev() {
            g_w.flatten_into(&mut grads);
            g_v.flatten_into(&mut grads);
        }
        g_out.flatten_into(&mut grads);
        Ok(grads)
    }
}
