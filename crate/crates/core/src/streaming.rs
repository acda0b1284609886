//! Sample-by-sample inference with per-layer dilation ring buffers, and the
//! real-time-factor benchmark.
//!
//! Each dilated layer keeps the last `(width - 1) * dilation` values of its
//! residual-stream input `x_k`, so a new output costs one column of every
//! convolution instead of a pass over the receptive field.

use std::time::Instant;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Mlp, Model, Network, SkipMode, WaveNet};
use crate::nncore::ConvKernel;
use crate::signal::AudioBuffer;

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float type")
}

/// Fixed-capacity history of `channels`-wide frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring<T> {
    data: Vec<T>,
    channels: usize,
    capacity: usize,
    /// Slot the next frame is written to.
    pos: usize,
}

impl<T: Float> Ring<T> {
    fn new(capacity: usize, channels: usize) -> Self {
        Self {
            data: vec![T::zero(); capacity * channels],
            channels,
            capacity,
            pos: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Frame written `ago` steps back, `1 <= ago <= capacity`.
    #[inline]
    fn frame(&self, ago: usize) -> &[T] {
        let slot = (self.pos + self.capacity - ago) % self.capacity;
        &self.data[slot * self.channels..(slot + 1) * self.channels]
    }

    #[inline]
    fn push(&mut self, frame: &[T]) {
        if self.capacity == 0 {
            return;
        }
        let c = self.channels;
        self.data[self.pos * c..(self.pos + 1) * c].copy_from_slice(frame);
        self.pos = (self.pos + 1) % self.capacity;
    }
}

/// Dense weights `[out][in]` plus optional bias.
#[derive(Debug, Clone)]
struct Dense<T> {
    out: usize,
    inp: usize,
    w: Vec<T>,
    b: Vec<T>,
}

impl<T: Float> Dense<T> {
    /// Tap `t` of a convolution kernel as a dense matrix.
    fn from_tap(k: &ConvKernel, t: usize, with_bias: bool) -> Self {
        let mut w = Vec::with_capacity(k.out_channels * k.in_channels);
        for o in 0..k.out_channels {
            for i in 0..k.in_channels {
                w.push(cast(k.tap(o, i, t)));
            }
        }
        let b = match (&k.bias, with_bias) {
            (Some(b), true) => b.iter().map(|&v| cast(v)).collect(),
            _ => vec![T::zero(); k.out_channels],
        };
        Self {
            out: k.out_channels,
            inp: k.in_channels,
            w,
            b,
        }
    }

    /// `dst[o] += sum_i w[o][i] src[i]`
    #[inline]
    fn accumulate(&self, src: &[T], dst: &mut [T]) {
        for (o, d) in dst.iter_mut().enumerate().take(self.out) {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            *d = row.iter().zip(src).fold(*d, |acc, (&w, &x)| acc + w * x);
        }
    }

    #[inline]
    fn apply(&self, src: &[T], dst: &mut [T]) {
        dst[..self.out].copy_from_slice(&self.b);
        self.accumulate(src, dst);
    }
}

#[derive(Debug, Clone)]
struct StreamLayer<T> {
    dilation: usize,
    /// Per tap, oldest first; the bias rides on the last tap.
    filter: Vec<Dense<T>>,
    gate: Vec<Dense<T>>,
    cond_filter: Dense<T>,
    cond_gate: Dense<T>,
    residual: Dense<T>,
}

#[derive(Debug, Clone)]
struct WaveNetWeights<T> {
    channels: usize,
    width: usize,
    skip_mode: SkipMode,
    proj: Dense<T>,
    layers: Vec<StreamLayer<T>>,
    post_filter: Dense<T>,
    post_gate: Dense<T>,
    post_hidden: Dense<T>,
    output: Dense<T>,
}

impl<T: Float> WaveNetWeights<T> {
    fn new(net: &WaveNet) -> Self {
        let w = net.config.filter_width;
        let taps = |k: &ConvKernel| (0..w).map(|t| Dense::from_tap(k, t, t == w - 1)).collect();
        Self {
            channels: net.config.channels,
            width: w,
            skip_mode: net.config.skip_mode,
            proj: Dense::from_tap(&net.input_proj, 0, true),
            layers: net
                .layers
                .iter()
                .map(|l| StreamLayer {
                    dilation: l.filter.dilation,
                    filter: taps(&l.filter),
                    gate: taps(&l.gate),
                    cond_filter: Dense::from_tap(&l.cond_filter, 0, false),
                    cond_gate: Dense::from_tap(&l.cond_gate, 0, false),
                    residual: Dense::from_tap(&l.residual, 0, true),
                })
                .collect(),
            post_filter: Dense::from_tap(&net.post_filter, 0, true),
            post_gate: Dense::from_tap(&net.post_gate, 0, true),
            post_hidden: Dense::from_tap(&net.post_hidden, 0, true),
            output: Dense::from_tap(&net.output, 0, true),
        }
    }
}

#[derive(Debug, Clone)]
struct MlpWeights<T> {
    input_size: usize,
    /// First layer over the window, oldest sample first.
    first: Dense<T>,
    hidden: Vec<Dense<T>>,
    cond: Vec<Dense<T>>,
    output: Dense<T>,
}

impl<T: Float> MlpWeights<T> {
    fn new(net: &Mlp) -> Self {
        let k = &net.weights[0];
        let mut w = Vec::with_capacity(k.taps.len());
        for o in 0..k.out_channels {
            for t in 0..k.width {
                w.push(cast(k.tap(o, 0, t)));
            }
        }
        let first = Dense {
            out: k.out_channels,
            inp: k.width,
            w,
            b: k.bias.as_ref().expect("MLP layers carry biases").iter().map(|&v| cast(v)).collect(),
        };
        Self {
            input_size: net.config.input_size,
            first,
            hidden: net.weights[1..].iter().map(|k| Dense::from_tap(k, 0, true)).collect(),
            cond: net.cond.iter().map(|k| Dense::from_tap(k, 0, false)).collect(),
            output: Dense::from_tap(&net.output, 0, true),
        }
    }
}

#[derive(Debug, Clone)]
enum Weights<T> {
    WaveNet(WaveNetWeights<T>),
    Mlp(MlpWeights<T>),
}

/// Model weights converted for streaming in precision `T`. Immutable and
/// shareable across any number of [`StreamState`]s.
#[derive(Debug, Clone)]
pub struct StreamModel<T> {
    weights: Weights<T>,
    conditioning_dim: usize,
}

/// Per-stream history and scratch space.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState<T> {
    rings: Vec<Ring<T>>,
    x: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    z: Vec<T>,
    skip: Vec<T>,
    p1: Vec<T>,
    p2: Vec<T>,
    window: Vec<T>,
}

impl<T: Float> StreamState<T> {
    pub fn rings(&self) -> &[Ring<T>] {
        &self.rings
    }
}

#[inline]
fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Float + Send + Sync> StreamModel<T> {
    pub fn new(model: &Model) -> Self {
        let weights = match model {
            Model::WaveNet(n) => Weights::WaveNet(WaveNetWeights::new(n)),
            Model::Mlp(n) => Weights::Mlp(MlpWeights::new(n)),
        };
        Self {
            weights,
            conditioning_dim: model.conditioning_dim(),
        }
    }

    pub fn from_wavenet(net: &WaveNet) -> Self {
        Self {
            weights: Weights::WaveNet(WaveNetWeights::new(net)),
            conditioning_dim: net.config.conditioning_dim,
        }
    }

    /// Fresh state, equivalent to an infinite run of silence.
    pub fn init_state(&self) -> StreamState<T> {
        let zeros = |n| vec![T::zero(); n];
        match &self.weights {
            Weights::WaveNet(w) => {
                let c = w.channels;
                StreamState {
                    rings: w
                        .layers
                        .iter()
                        .map(|l| Ring::new((w.width - 1) * l.dilation, c))
                        .collect(),
                    x: zeros(c),
                    f: zeros(c),
                    g: zeros(c),
                    z: zeros(c),
                    skip: zeros(w.post_filter.inp),
                    p1: zeros(w.post_filter.out),
                    p2: zeros(w.post_hidden.out),
                    window: Vec::new(),
                }
            }
            Weights::Mlp(w) => {
                let h = w.first.out;
                StreamState {
                    rings: vec![Ring::new(w.input_size - 1, 1)],
                    x: zeros(h),
                    f: zeros(h),
                    g: Vec::new(),
                    z: Vec::new(),
                    skip: Vec::new(),
                    p1: Vec::new(),
                    p2: Vec::new(),
                    window: zeros(w.input_size),
                }
            }
        }
    }

    /// Advances the stream by one sample and returns the prediction for it.
    pub fn step(&self, state: &mut StreamState<T>, x: T, cond: &[T]) -> Result<T> {
        if !x.is_finite() || cond.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerics("non-finite streaming input".into()));
        }
        if cond.len() != self.conditioning_dim {
            return Err(Error::Shape(format!(
                "{} conditioning values, model expects {}",
                cond.len(),
                self.conditioning_dim
            )));
        }
        Ok(match &self.weights {
            Weights::WaveNet(w) => step_wavenet(w, state, x, cond),
            Weights::Mlp(w) => step_mlp(w, state, x, cond),
        })
    }

    /// Runs a block under a constant control; identical to repeated [`Self::step`].
    pub fn process_block(&self, state: &mut StreamState<T>, block: &AudioBuffer, control: f64) -> Result<AudioBuffer> {
        if block.samples.iter().any(|s| !s.is_finite()) || !control.is_finite() {
            return Err(Error::Numerics("non-finite streaming input".into()));
        }
        let cond = vec![cast::<T>(control); self.conditioning_dim];
        let mut out = Vec::with_capacity(block.len());
        for &s in &block.samples {
            let y = self.step(state, cast(s), &cond)?;
            out.push(y.to_f64().expect("float converts to f64"));
        }
        Ok(AudioBuffer {
            samples: out,
            sample_rate_hz: block.sample_rate_hz,
        })
    }
}

fn step_wavenet<T: Float>(w: &WaveNetWeights<T>, st: &mut StreamState<T>, x: T, cond: &[T]) -> T {
    let StreamState {
        rings,
        x: cur,
        f,
        g,
        z,
        skip,
        p1,
        p2,
        ..
    } = st;
    let c = w.channels;
    for o in 0..c {
        cur[o] = w.proj.b[o] + w.proj.w[o] * x;
    }
    if w.skip_mode == SkipMode::Sum {
        skip.fill(T::zero());
    }
    let n_layers = w.layers.len();
    for (k, (layer, ring)) in w.layers.iter().zip(rings.iter_mut()).enumerate() {
        f.fill(T::zero());
        g.fill(T::zero());
        for t in 0..w.width {
            let ago = (w.width - 1 - t) * layer.dilation;
            let src: &[T] = if ago == 0 { cur } else { ring.frame(ago) };
            layer.filter[t].accumulate(src, f);
            layer.gate[t].accumulate(src, g);
        }
        let last = &layer.filter[w.width - 1];
        let last_g = &layer.gate[w.width - 1];
        for o in 0..c {
            f[o] = f[o] + last.b[o];
            g[o] = g[o] + last_g.b[o];
        }
        layer.cond_filter.accumulate(cond, f);
        layer.cond_gate.accumulate(cond, g);
        for o in 0..c {
            z[o] = f[o].tanh() * sigmoid(g[o]);
        }
        match w.skip_mode {
            SkipMode::Concat => skip[k * c..(k + 1) * c].copy_from_slice(z),
            SkipMode::Sum => skip.iter_mut().zip(z.iter()).for_each(|(s, &v)| *s = *s + v),
        }
        ring.push(cur);
        if k + 1 < n_layers {
            // x_{k+1} = x_k + W_res z_k
            let res = &layer.residual;
            for o in 0..c {
                cur[o] = cur[o] + res.b[o];
            }
            res.accumulate(z, cur);
        }
    }
    // p2 doubles as scratch for the gate half
    w.post_filter.apply(skip, p1);
    w.post_gate.apply(skip, p2);
    for (a, &gv) in p1.iter_mut().zip(p2.iter()) {
        *a = a.tanh() * sigmoid(gv);
    }
    w.post_hidden.apply(p1, p2);
    p2.iter_mut().for_each(|v| *v = v.tanh());
    let mut y = [T::zero()];
    w.output.apply(p2, &mut y);
    y[0]
}

fn step_mlp<T: Float>(w: &MlpWeights<T>, st: &mut StreamState<T>, x: T, cond: &[T]) -> T {
    let ring = &mut st.rings[0];
    let n = w.input_size;
    for (j, slot) in st.window.iter_mut().enumerate().take(n - 1) {
        *slot = ring.frame(n - 1 - j)[0];
    }
    st.window[n - 1] = x;
    ring.push(&[x]);

    let h = &mut st.x;
    let tmp = &mut st.f;
    w.first.apply(&st.window, h);
    w.cond[0].accumulate(cond, h);
    h.iter_mut().for_each(|v| *v = v.tanh());
    for (layer, v) in w.hidden.iter().zip(&w.cond[1..]) {
        layer.apply(h, tmp);
        v.accumulate(cond, tmp);
        for (a, &b) in h.iter_mut().zip(tmp.iter()) {
            *a = b.tanh();
        }
    }
    let mut y = [T::zero()];
    w.output.apply(h, &mut y);
    y[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Batch,
    Streaming,
}

/// Throughput measurement; serializes to the bench JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub mode: BenchMode,
    pub audio_s: f64,
    pub wall_s: f64,
    pub rt_factor: f64,
    pub cpu_description: String,
}

pub fn cpu_description() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Median wall time over `runs` timed runs after one warm-up, on seeded noise.
///
/// Batch mode runs the double-precision block forward; streaming mode runs
/// single-precision sample-by-sample inference.
pub fn benchmark(
    model: &Model,
    name: &str,
    mode: BenchMode,
    duration_s: f64,
    sample_rate_hz: u32,
    runs: usize,
) -> Result<BenchReport> {
    if !(duration_s > 0.0) || runs == 0 || sample_rate_hz == 0 {
        return Err(Error::Domain("benchmark needs a positive duration, rate and run count".into()));
    }
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = AudioBuffer {
        samples: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
        sample_rate_hz,
    };
    let control = vec![0.5; model.conditioning_dim()];
    let stream = StreamModel::<f32>::new(model);
    let run_once = || -> Result<f64> {
        let start = Instant::now();
        match mode {
            BenchMode::Batch => {
                std::hint::black_box(model.predict(&noise.samples, &control)?);
            }
            BenchMode::Streaming => {
                let mut state = stream.init_state();
                std::hint::black_box(stream.process_block(&mut state, &noise, 0.5)?);
            }
        }
        Ok(start.elapsed().as_secs_f64())
    };
    run_once()?;
    let mut times = (0..runs).map(|_| run_once()).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    let wall_s = times[times.len() / 2].max(1e-9);
    let audio_s = noise.duration_s();
    Ok(BenchReport {
        model: name.to_string(),
        mode,
        audio_s,
        wall_s,
        rt_factor: audio_s / wall_s,
        cpu_description: cpu_description(),
    })
}
