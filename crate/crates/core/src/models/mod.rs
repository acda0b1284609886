//! Trainable models and the model file format.

mod io;
mod mlp;
mod wavenet;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, ModelMeta, MODEL_MAGIC, MODEL_VERSION};
pub use mlp::{Mlp, MlpCache, MlpConfig};
pub use wavenet::{LayerParams, SkipMode, WaveNet, WaveNetCache, WaveNetConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Tensor2;

/// A differentiable sequence model `y = f(x, c)` with a flat parameter vector.
///
/// `params`, `set_params` and the gradient returned by `backward` all share one
/// deterministic ordering, the one used by the model file.
pub trait Network: Send + Sync {
    type Cache: Send;

    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]) -> Result<()>;
    fn receptive_field(&self) -> usize;
    fn conditioning_dim(&self) -> usize;

    /// `x` is `1 x T`, `c` is `conditioning_dim x T`; returns `1 x T`.
    fn forward(&self, x: &Tensor2, c: &Tensor2) -> Result<Tensor2>;
    fn forward_train(&self, x: &Tensor2, c: &Tensor2) -> Result<(Tensor2, Self::Cache)>;
    /// Flat parameter gradient given `dLoss/dy`.
    fn backward(&self, cache: &Self::Cache, upstream: &Tensor2) -> Result<Vec<f64>>;

    /// Whole-signal inference under a constant control vector.
    ///
    /// Runs in overlapping blocks so memory stays bounded; every block carries
    /// one receptive field of left context, which makes the result identical
    /// to a single forward pass over the whole signal.
    fn predict(&self, x: &[f64], control: &[f64]) -> Result<Vec<f64>> {
        const BLOCK: usize = 1 << 14;
        if control.len() != self.conditioning_dim() {
            return Err(Error::Shape(format!(
                "{} control values for a model conditioned on {}",
                control.len(),
                self.conditioning_dim()
            )));
        }
        let context = self.receptive_field();
        let mut out = Vec::with_capacity(x.len());
        let mut start = 0;
        while start < x.len() {
            let end = (start + BLOCK).min(x.len());
            let from = start.saturating_sub(context);
            let y = self.forward(
                &Tensor2::row(&x[from..end]),
                &Tensor2::constant(control, end - from),
            )?;
            out.extend_from_slice(&y.data()[start - from..]);
            start = end;
        }
        Ok(out)
    }
}

/// Architecture and hyperparameters, as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", content = "config", rename_all = "lowercase")]
pub enum ArchConfig {
    Wavenet(WaveNetConfig),
    Mlp(MlpConfig),
}

impl ArchConfig {
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "wavenet1" => Some(ArchConfig::Wavenet(WaveNetConfig::wavenet1())),
            "wavenet2" => Some(ArchConfig::Wavenet(WaveNetConfig::wavenet2())),
            "mlp" => Some(ArchConfig::Mlp(MlpConfig::default())),
            _ => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Model> {
        Ok(match self {
            ArchConfig::Wavenet(c) => Model::WaveNet(WaveNet::init(c.clone(), seed)?),
            ArchConfig::Mlp(c) => Model::Mlp(Mlp::init(c.clone(), seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    WaveNet(WaveNet),
    Mlp(Mlp),
}

pub enum ModelCache {
    WaveNet(WaveNetCache),
    Mlp(MlpCache),
}

impl Model {
    pub fn arch(&self) -> ArchConfig {
        match self {
            Model::WaveNet(n) => ArchConfig::Wavenet(n.config.clone()),
            Model::Mlp(n) => ArchConfig::Mlp(n.config.clone()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::WaveNet(_) => "wavenet",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        Ok(match arch {
            ArchConfig::Wavenet(c) => Model::WaveNet(WaveNet::zeros(c.clone())?),
            ArchConfig::Mlp(c) => Model::Mlp(Mlp::zeros(c.clone())?),
        })
    }
}

macro_rules! dispatch {
    ($self:expr, $n:ident => $body:expr) => {
        match $self {
            Model::WaveNet($n) => $body,
            Model::Mlp($n) => $body,
        }
    };
}

impl Network for Model {
    type Cache = ModelCache;

    fn num_params(&self) -> usize {
        dispatch!(self, n => n.num_params())
    }

    fn params(&self) -> Vec<f64> {
        dispatch!(self, n => n.params())
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        dispatch!(self, n => n.set_params(flat))
    }

    fn receptive_field(&self) -> usize {
        dispatch!(self, n => n.receptive_field())
    }

    fn conditioning_dim(&self) -> usize {
        dispatch!(self, n => n.conditioning_dim())
    }

    fn forward(&self, x: &Tensor2, c: &Tensor2) -> Result<Tensor2> {
        dispatch!(self, n => n.forward(x, c))
    }

    fn forward_train(&self, x: &Tensor2, c: &Tensor2) -> Result<(Tensor2, ModelCache)> {
        match self {
            Model::WaveNet(n) => n.forward_train(x, c).map(|(y, k)| (y, ModelCache::WaveNet(k))),
            Model::Mlp(n) => n.forward_train(x, c).map(|(y, k)| (y, ModelCache::Mlp(k))),
        }
    }

    fn backward(&self, cache: &ModelCache, upstream: &Tensor2) -> Result<Vec<f64>> {
        match (self, cache) {
            (Model::WaveNet(n), ModelCache::WaveNet(k)) => n.backward(k, upstream),
            (Model::Mlp(n), ModelCache::Mlp(k)) => n.backward(k, upstream),
            _ => Err(Error::Shape("cache from a different architecture".into())),
        }
    }
}

/// Total scalar parameter count.
pub fn count_parameters<N: Network + ?Sized>(net: &N) -> usize {
    net.num_params()
}
