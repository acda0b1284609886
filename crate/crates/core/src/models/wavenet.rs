//! Conditioned feedforward WaveNet.
//!
//! ```text
//! x_0     = input_proj * x
//! z_k     = tanh(W_f,k * x_k + V_f,k * c) . sigmoid(W_g,k * x_k + V_g,k * c)
//! x_{k+1} = x_k + W_res,k * z_k
//! S       = concat(z_0 .. z_{L-1})         (or the sum, see SkipMode)
//! y       = W_out * tanh(Wp2 * (tanh(Wp1_f * S) . sigmoid(Wp1_g * S)))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::nncore::{
    causal_conv_backward, causal_conv_forward, gated_activation_backward, gated_activation_forward,
    tanh_backward, tanh_forward, ConvKernel, Tensor2,
};

/// How the per-layer outputs `z_k` are combined before post-processing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// Channel concatenation, `L * C` post-processing inputs.
    #[default]
    Concat,
    /// Element-wise sum, `C` post-processing inputs.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveNetConfig {
    pub num_layers: usize,
    pub channels: usize,
    pub filter_width: usize,
    pub dilations: Vec<usize>,
    pub postproc_channels: usize,
    #[serde(default = "one")]
    pub conditioning_dim: usize,
    #[serde(default)]
    pub skip_mode: SkipMode,
}

fn one() -> usize {
    1
}

impl WaveNetConfig {
    /// Ten width-3 layers dilated 1, 2, 4, .., 512 with `channels` channels throughout.
    pub fn standard(channels: usize) -> Self {
        Self {
            num_layers: 10,
            channels,
            filter_width: 3,
            dilations: (0..10).map(|k| 1 << k).collect(),
            postproc_channels: channels,
            conditioning_dim: 1,
            skip_mode: SkipMode::Concat,
        }
    }

    pub fn wavenet1() -> Self {
        Self::standard(2)
    }

    pub fn wavenet2() -> Self {
        Self::standard(16)
    }

    /// Width-3 stack with the given dilations and channel count.
    pub fn with_dilations(channels: usize, dilations: Vec<usize>) -> Self {
        Self {
            num_layers: dilations.len(),
            channels,
            filter_width: 3,
            dilations,
            postproc_channels: channels,
            conditioning_dim: 1,
            skip_mode: SkipMode::Concat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.dilations.len() != self.num_layers {
            return Err(Error::Config(format!(
                "{} layers but {} dilations",
                self.num_layers,
                self.dilations.len()
            )));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be at least 1".into()));
        }
        if self.channels == 0 || self.filter_width == 0 || self.postproc_channels == 0 || self.conditioning_dim == 0 {
            return Err(Error::Config("channel counts and filter width must be positive".into()));
        }
        Ok(())
    }

    /// Past samples that can influence the current output.
    pub fn receptive_field(&self) -> usize {
        (self.filter_width - 1) * self.dilations.iter().sum::<usize>()
    }

    pub fn skip_channels(&self) -> usize {
        match self.skip_mode {
            SkipMode::Concat => self.num_layers * self.channels,
            SkipMode::Sum => self.channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub filter: ConvKernel,
    pub gate: ConvKernel,
    pub cond_filter: ConvKernel,
    pub cond_gate: ConvKernel,
    pub residual: ConvKernel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveNet {
    pub config: WaveNetConfig,
    pub input_proj: ConvKernel,
    pub layers: Vec<LayerParams>,
    pub post_filter: ConvKernel,
    pub post_gate: ConvKernel,
    pub post_hidden: ConvKernel,
    pub output: ConvKernel,
}

struct LayerCache {
    x_in: Tensor2,
    filter_pre: Tensor2,
    gate_pre: Tensor2,
    z: Tensor2,
}

pub struct WaveNetCache {
    input: Tensor2,
    cond: Tensor2,
    layers: Vec<LayerCache>,
    skip: Tensor2,
    post_filter_pre: Tensor2,
    post_gate_pre: Tensor2,
    p1: Tensor2,
    p2: Tensor2,
}

impl WaveNetCache {
    /// Gated outputs `z_k` of the convolutional layers.
    pub fn layer_outputs(&self) -> Vec<&Tensor2> {
        self.layers.iter().map(|l| &l.z).collect()
    }

    /// Residual-stream input of each layer, `x_k`.
    pub fn layer_inputs(&self) -> Vec<&Tensor2> {
        self.layers.iter().map(|l| &l.x_in).collect()
    }
}

impl WaveNet {
    /// All-zero parameters.
    pub fn zeros(config: WaveNetConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let p = config.postproc_channels;
        let cd = config.conditioning_dim;
        let layers = config
            .dilations
            .iter()
            .map(|&d| LayerParams {
                filter: ConvKernel::zeros(c, c, config.filter_width, d, true),
                gate: ConvKernel::zeros(c, c, config.filter_width, d, true),
                cond_filter: ConvKernel::pointwise(c, cd, false),
                cond_gate: ConvKernel::pointwise(c, cd, false),
                residual: ConvKernel::pointwise(c, c, true),
            })
            .collect();
        let skip = config.skip_channels();
        Ok(Self {
            input_proj: ConvKernel::pointwise(c, 1, true),
            layers,
            post_filter: ConvKernel::pointwise(p, skip, true),
            post_gate: ConvKernel::pointwise(p, skip, true),
            post_hidden: ConvKernel::pointwise(p, p, true),
            output: ConvKernel::pointwise(1, p, true),
            config,
        })
    }

    /// Seeded uniform initialization of every kernel, zero biases.
    pub fn init(config: WaveNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in net.kernels_mut() {
            k.init_uniform(&mut rng);
        }
        Ok(net)
    }

    /// Kernels in serialization order.
    pub fn kernels(&self) -> Vec<&ConvKernel> {
        let mut out = vec![&self.input_proj];
        for l in &self.layers {
            out.extend([&l.filter, &l.gate, &l.cond_filter, &l.cond_gate, &l.residual]);
        }
        out.extend([&self.post_filter, &self.post_gate, &self.post_hidden, &self.output]);
        out
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut ConvKernel> {
        let mut out = vec![&mut self.input_proj];
        for l in &mut self.layers {
            out.extend([
                &mut l.filter,
                &mut l.gate,
                &mut l.cond_filter,
                &mut l.cond_gate,
                &mut l.residual,
            ]);
        }
        out.extend([
            &mut self.post_filter,
            &mut self.post_gate,
            &mut self.post_hidden,
            &mut self.output,
        ]);
        out
    }

    fn check_inputs(&self, x: &Tensor2, c: &Tensor2) -> Result<()> {
        if x.channels() != 1 {
            return Err(Error::Shape(format!("input has {} channels, expected 1", x.channels())));
        }
        if c.channels() != self.config.conditioning_dim {
            return Err(Error::Shape(format!(
                "conditioning has {} channels, expected {}",
                c.channels(),
                self.config.conditioning_dim
            )));
        }
        if x.len() != c.len() {
            return Err(Error::Shape(format!(
                "input length {} but conditioning length {}",
                x.len(),
                c.len()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor2, c: &Tensor2, keep: bool) -> Result<(Tensor2, Option<WaveNetCache>)> {
        self.check_inputs(x, c)?;
        let mut state = causal_conv_forward(&self.input_proj, x)?;
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut zs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut filter_pre = causal_conv_forward(&layer.filter, &state)?;
            filter_pre.add_assign(&causal_conv_forward(&layer.cond_filter, c)?)?;
            let mut gate_pre = causal_conv_forward(&layer.gate, &state)?;
            gate_pre.add_assign(&causal_conv_forward(&layer.cond_gate, c)?)?;
            let z = gated_activation_forward(&filter_pre, &gate_pre)?;
            let mut next = state.clone();
            next.add_assign(&causal_conv_forward(&layer.residual, &z)?)?;
            if keep {
                caches.push(LayerCache {
                    x_in: state,
                    filter_pre,
                    gate_pre,
                    z: z.clone(),
                });
            }
            zs.push(z);
            state = next;
        }
        let skip = match self.config.skip_mode {
            SkipMode::Concat => Tensor2::concat_channels(&zs.iter().collect::<Vec<_>>())?,
            SkipMode::Sum => {
                let mut acc = zs[0].clone();
                for z in &zs[1..] {
                    acc.add_assign(z)?;
                }
                acc
            }
        };
        drop(zs);
        let post_filter_pre = causal_conv_forward(&self.post_filter, &skip)?;
        let post_gate_pre = causal_conv_forward(&self.post_gate, &skip)?;
        let p1 = gated_activation_forward(&post_filter_pre, &post_gate_pre)?;
        let p2 = tanh_forward(&causal_conv_forward(&self.post_hidden, &p1)?);
        let y = causal_conv_forward(&self.output, &p2)?;
        let cache = keep.then(|| WaveNetCache {
            input: x.clone(),
            cond: c.clone(),
            layers: caches,
            skip,
            post_filter_pre,
            post_gate_pre,
            p1,
            p2,
        });
        Ok((y, cache))
    }

    /// Prediction plus every intermediate the backward pass needs.
    pub fn forward_with_cache(&self, x: &Tensor2, c: &Tensor2) -> Result<(Tensor2, WaveNetCache)> {
        let (y, cache) = self.run(x, c, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    /// Flat parameter gradient for `upstream = dLoss/dy`.
    pub fn backward_from_cache(&self, cache: &WaveNetCache, upstream: &Tensor2) -> Result<Vec<f64>> {
        let (d_p2, g_out) = causal_conv_backward(&self.output, &cache.p2, upstream)?;
        let d_hidden_pre = tanh_backward(&cache.p2, &d_p2)?;
        let (d_p1, g_hidden) = causal_conv_backward(&self.post_hidden, &cache.p1, &d_hidden_pre)?;
        let (d_pf, d_pg) = gated_activation_backward(&cache.post_filter_pre, &cache.post_gate_pre, &d_p1)?;
        let (mut d_skip, g_pf) = causal_conv_backward(&self.post_filter, &cache.skip, &d_pf)?;
        let (d_skip_g, g_pg) = causal_conv_backward(&self.post_gate, &cache.skip, &d_pg)?;
        d_skip.add_assign(&d_skip_g)?;

        let n_layers = self.layers.len();
        let d_z_skip: Vec<Tensor2> = match self.config.skip_mode {
            SkipMode::Concat => d_skip.split_channels(self.config.channels),
            SkipMode::Sum => vec![d_skip; n_layers],
        };

        let len = upstream.len();
        let mut d_state = Tensor2::zeros(self.config.channels, len);
        let mut layer_grads = Vec::with_capacity(n_layers);
        for (k, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            // x_{k+1} = x_k + W_res z_k
            let (d_z_res, g_res) = causal_conv_backward(&layer.residual, &lc.z, &d_state)?;
            let mut d_z = d_z_skip[k].clone();
            d_z.add_assign(&d_z_res)?;
            let (d_f, d_g) = gated_activation_backward(&lc.filter_pre, &lc.gate_pre, &d_z)?;
            let (d_x_f, g_f) = causal_conv_backward(&layer.filter, &lc.x_in, &d_f)?;
            let (d_x_g, g_g) = causal_conv_backward(&layer.gate, &lc.x_in, &d_g)?;
            let (_, g_cf) = causal_conv_backward(&layer.cond_filter, &cache.cond, &d_f)?;
            let (_, g_cg) = causal_conv_backward(&layer.cond_gate, &cache.cond, &d_g)?;
            d_state.add_assign(&d_x_f)?;
            d_state.add_assign(&d_x_g)?;
            layer_grads.push([g_f, g_g, g_cf, g_cg, g_res]);
        }
        let mut grads = Vec::with_capacity(self.num_params());
        let (_, g_proj) = causal_conv_backward(&self.input_proj, &cache.input, &d_state)?;
        g_proj.flatten_into(&mut grads);
        for gs in layer_grads.iter().rev() {
            for g in gs {
                g.flatten_into(&mut grads);
            }
        }
        for g in [g_pf, g_pg, g_hidden, g_out] {
            g.flatten_into(&mut grads);
        }
        Ok(grads)
    }
}

impl Network for WaveNet {
    type Cache = WaveNetCache;

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

    fn forward_train(&self, x: &Tensor2, c: &Tensor2) -> Result<(Tensor2, Self::Cache)> {
        self.forward_with_cache(x, c)
    }

    fn backward(&self, cache: &Self::Cache, upstream: &Tensor2) -> Result<Vec<f64>> {
        self.backward_from_cache(cache, upstream)
    }
}
