//! Differentiable layer primitives: dilated causal convolution, gated
//! activation and a finite-difference gradient checker.
//!
//! Signals are `[channel][time]` tensors. Convolutions are causal with zero
//! left-padding, so output length always equals input length.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            data: vec![0.0; channels * length],
        }
    }

    pub fn from_vec(channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * length {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{length} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            data,
        })
    }

    /// Single-channel tensor holding `samples`.
    pub fn row(samples: &[f64]) -> Self {
        Self {
            channels: 1,
            length: samples.len(),
            data: samples.to_vec(),
        }
    }

    /// `values.len()` channels, each constant over `length` steps.
    pub fn constant(values: &[f64], length: usize) -> Self {
        let mut t = Self::zeros(values.len(), length);
        for (c, &v) in values.iter().enumerate() {
            t.channel_mut(c).fill(v);
        }
        t
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        check_same_shape(self, other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Stacks tensors of equal length along the channel axis.
    pub fn concat_channels(parts: &[&Tensor2]) -> Result<Tensor2> {
        let length = parts.first().map_or(0, |t| t.length);
        if parts.iter().any(|t| t.length != length) {
            return Err(Error::Shape("concatenated tensors differ in length".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.data.len()).sum());
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor2 {
            channels: parts.iter().map(|t| t.channels).sum(),
            length,
            data,
        })
    }

    /// Inverse of [`Tensor2::concat_channels`] for `parts` blocks of `channels` each.
    pub fn split_channels(&self, channels: usize) -> Vec<Tensor2> {
        self.data
            .chunks(channels * self.length)
            .map(|d| Tensor2 {
                channels,
                length: self.length,
                data: d.to_vec(),
            })
            .collect()
    }

    pub fn dot(&self, other: &Tensor2) -> f64 {
        dot(&self.data, &other.data)
    }
}

fn check_same_shape(a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Dot product with four independent accumulators so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dilated causal convolution kernel.
///
/// Taps are stored `[out][in][tap]`; tap 0 is the oldest input
/// (offset `-(width-1)*dilation`) and the last tap is the current sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub width: usize,
    pub dilation: usize,
    pub taps: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize, width: usize, dilation: usize, with_bias: bool) -> Self {
        Self {
            out_channels,
            in_channels,
            width,
            dilation,
            taps: vec![0.0; out_channels * in_channels * width],
            bias: with_bias.then(|| vec![0.0; out_channels]),
        }
    }

    /// 1x1 convolution, i.e. a per-sample dense layer.
    pub fn pointwise(out_channels: usize, in_channels: usize, with_bias: bool) -> Self {
        Self::zeros(out_channels, in_channels, 1, 1, with_bias)
    }

    #[inline]
    pub fn tap_index(&self, o: usize, i: usize, t: usize) -> usize {
        (o * self.in_channels + i) * self.width + t
    }

    pub fn tap(&self, o: usize, i: usize, t: usize) -> f64 {
        self.taps[self.tap_index(o, i, t)]
    }

    /// How far back tap `t` reads.
    #[inline]
    pub fn offset(&self, t: usize) -> usize {
        (self.width - 1 - t) * self.dilation
    }

    /// Past samples visible to one output sample.
    pub fn memory(&self) -> usize {
        (self.width - 1) * self.dilation
    }

    pub fn num_params(&self) -> usize {
        self.taps.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Uniform taps in `±sqrt(1 / (in_channels * width))`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = (1.0 / (self.in_channels * self.width) as f64).sqrt();
        self.taps.iter_mut().for_each(|t| *t = rng.random_range(-bound..=bound));
        if let Some(b) = &mut self.bias {
            b.fill(0.0);
        }
    }

    /// Appends taps then bias, the serialization order.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.taps);
        if let Some(b) = &self.bias {
            out.extend_from_slice(b);
        }
    }

    /// Reads taps then bias from the front of `src`; returns the rest.
    pub fn unflatten_from<'a>(&mut self, src: &'a [f64]) -> Result<&'a [f64]> {
        let n = self.num_params();
        if src.len() < n {
            return Err(Error::Shape(format!("{} values left, kernel needs {n}", src.len())));
        }
        let (taps, rest) = src.split_at(self.taps.len());
        self.taps.copy_from_slice(taps);
        let rest = match &mut self.bias {
            Some(b) => {
                let (bias, rest) = rest.split_at(b.len());
                b.copy_from_slice(bias);
                rest
            }
            None => rest,
        };
        Ok(rest)
    }
}

/// Kernel gradients, mirroring the kernel's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub taps: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl KernelGrad {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.taps);
        if let Some(b) = &self.bias {
            out.extend_from_slice(b);
        }
    }
}

pub fn causal_conv_forward(kernel: &ConvKernel, input: &Tensor2) -> Result<Tensor2> {
    if input.channels != kernel.in_channels {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, got {}",
            kernel.in_channels, input.channels
        )));
    }
    let len = input.length;
    let mut out = Tensor2::zeros(kernel.out_channels, len);
    if let Some(b) = &kernel.bias {
        for o in 0..kernel.out_channels {
            out.channel_mut(o).fill(b[o]);
        }
    }
    for o in 0..kernel.out_channels {
        let dst = out.channel_mut(o);
        for i in 0..kernel.in_channels {
            let src = input.channel(i);
            for t in 0..kernel.width {
                let off = kernel.offset(t);
                if off >= len {
                    continue;
                }
                axpy(&mut dst[off..], kernel.tap(o, i, t), &src[..len - off]);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`causal_conv_forward`]: returns (input gradient, kernel gradient).
pub fn causal_conv_backward(
    kernel: &ConvKernel,
    input: &Tensor2,
    upstream: &Tensor2,
) -> Result<(Tensor2, KernelGrad)> {
    if input.channels != kernel.in_channels {
        return Err(Error::Shape("input channels do not match kernel".into()));
    }
    if upstream.shape() != (kernel.out_channels, input.length) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?}, forward output is {:?}",
            upstream.shape(),
            (kernel.out_channels, input.length)
        )));
    }
    let len = input.length;
    let mut d_input = Tensor2::zeros(kernel.in_channels, len);
    let mut d_taps = vec![0.0; kernel.taps.len()];
    for o in 0..kernel.out_channels {
        let g = upstream.channel(o);
        for i in 0..kernel.in_channels {
            let src = input.channel(i);
            for t in 0..kernel.width {
                let off = kernel.offset(t);
                if off >= len {
                    continue;
                }
                let idx = kernel.tap_index(o, i, t);
                d_taps[idx] = dot(&g[off..], &src[..len - off]);
                axpy(&mut d_input.channel_mut(i)[..len - off], kernel.taps[idx], &g[off..]);
            }
        }
    }
    let d_bias = kernel
        .bias
        .as_ref()
        .map(|_| (0..kernel.out_channels).map(|o| upstream.channel(o).iter().sum()).collect());
    Ok((
        d_input,
        KernelGrad {
            taps: d_taps,
            bias: d_bias,
        },
    ))
}

/// `tanh(filter) * sigmoid(gate)`, element-wise.
pub fn gated_activation_forward(filter_pre: &Tensor2, gate_pre: &Tensor2) -> Result<Tensor2> {
    check_same_shape(filter_pre, gate_pre)?;
    let data = filter_pre
        .data
        .iter()
        .zip(&gate_pre.data)
        .map(|(&f, &g)| f.tanh() * sigmoid(g))
        .collect();
    Ok(Tensor2 {
        channels: filter_pre.channels,
        length: filter_pre.length,
        data,
    })
}

/// Returns (filter gradient, gate gradient).
pub fn gated_activation_backward(
    filter_pre: &Tensor2,
    gate_pre: &Tensor2,
    upstream: &Tensor2,
) -> Result<(Tensor2, Tensor2)> {
    check_same_shape(filter_pre, gate_pre)?;
    check_same_shape(filter_pre, upstream)?;
    let mut d_filter = Tensor2::zeros(filter_pre.channels, filter_pre.length);
    let mut d_gate = d_filter.clone();
    for (k, ((&f, &g), &u)) in filter_pre
        .data
        .iter()
        .zip(&gate_pre.data)
        .zip(&upstream.data)
        .enumerate()
    {
        let th = f.tanh();
        let sg = sigmoid(g);
        d_filter.data[k] = u * (1.0 - th * th) * sg;
        d_gate.data[k] = u * th * sg * (1.0 - sg);
    }
    Ok((d_filter, d_gate))
}

/// Element-wise tanh.
pub fn tanh_forward(pre: &Tensor2) -> Tensor2 {
    Tensor2 {
        channels: pre.channels,
        length: pre.length,
        data: pre.data.iter().map(|v| v.tanh()).collect(),
    }
}

/// Backward of tanh given its forward *output*.
pub fn tanh_backward(out: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    check_same_shape(out, upstream)?;
    Ok(Tensor2 {
        channels: out.channels,
        length: out.length,
        data: out
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(y, u)| u * (1.0 - y * y))
            .collect(),
    })
}

/// Compares analytic gradients against central differences of `loss`.
///
/// Returns the worst relative error, using `max(|a|, |b|, 1e-12)` as the
/// denominator.
pub fn finite_difference_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("finite-difference step {h}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut eval = |p: &[f64]| -> Result<f64> {
        let v = loss(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerics(format!("loss evaluated to {v}")))
        }
    };
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        probe[k] = params[k] + h;
        let up = eval(&probe)?;
        probe[k] = params[k] - h;
        let down = eval(&probe)?;
        probe[k] = params[k];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, t: usize) -> Tensor2 {
        Tensor2::from_vec(c, t, (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, o: usize, i: usize, w: usize, d: usize) -> ConvKernel {
        let mut k = ConvKernel::zeros(o, i, w, d, true);
        k.taps.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        k.bias.as_mut().unwrap().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        k
    }

    #[test]
    fn identity_kernel() {
        let mut k = ConvKernel::pointwise(1, 1, true);
        k.taps[0] = 1.0;
        let x = Tensor2::row(&[0.1, -0.4, 2.0]);
        assert_eq!(causal_conv_forward(&k, &x).unwrap(), x);
        let (dx, _) = causal_conv_backward(&k, &x, &x).unwrap();
        assert_eq!(dx, x);
    }

    #[test]
    fn width_two_kernel_is_pre_emphasis() {
        let mut k = ConvKernel::zeros(1, 1, 2, 1, true);
        k.taps.copy_from_slice(&[-0.95, 1.0]);
        let x = [1.0, -1.0, 1.0, 0.3, 0.0];
        let y = causal_conv_forward(&k, &Tensor2::row(&x)).unwrap();
        assert_eq!(y.data(), crate::signal::pre_emphasis_slice(&x).as_slice());
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut k = ConvKernel::zeros(2, 1, 3, 4, true);
        k.bias = Some(vec![0.5, -2.0]);
        k.taps.fill(0.7);
        let y = causal_conv_forward(&k, &Tensor2::zeros(1, 20)).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 0.5));
        assert!(y.channel(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let k = ConvKernel::zeros(2, 3, 3, 1, true);
        assert!(matches!(causal_conv_forward(&k, &Tensor2::zeros(2, 5)), Err(Error::Shape(_))));
        let x = Tensor2::zeros(3, 5);
        assert!(matches!(
            causal_conv_backward(&k, &x, &Tensor2::zeros(2, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernel = random_kernel(&mut rng, 3, 2, 3, 2);
        let input = random_tensor(&mut rng, 2, 17);
        let weights = random_tensor(&mut rng, 3, 17);
        // loss = <weights, conv(input)>
        let (d_in, kg) = causal_conv_backward(&kernel, &input, &weights).unwrap();

        let mut analytic = Vec::new();
        kg.flatten_into(&mut analytic);
        let mut params = Vec::new();
        kernel.flatten_into(&mut params);
        let err = finite_difference_check(
            |p| {
                let mut k = kernel.clone();
                k.unflatten_from(p)?;
                Ok(causal_conv_forward(&k, &input)?.dot(&weights))
            },
            &params,
            &analytic,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "kernel grad rel err {err}");

        let err = finite_difference_check(
            |p| {
                let x = Tensor2::from_vec(2, 17, p.to_vec())?;
                Ok(causal_conv_forward(&kernel, &x)?.dot(&weights))
            },
            input.data(),
            d_in.data(),
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "input grad rel err {err}");
    }

    #[test]
    fn conv_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (w, d) in [(1, 1), (2, 1), (3, 4), (3, 16)] {
            let mut kernel = random_kernel(&mut rng, 4, 3, w, d);
            kernel.bias = None; // the linear part only
            let v = random_tensor(&mut rng, 3, 40);
            let u = random_tensor(&mut rng, 4, 40);
            let lhs = causal_conv_forward(&kernel, &v).unwrap().dot(&u);
            let rhs = causal_conv_backward(&kernel, &v, &u).unwrap().0.dot(&v);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kernel = random_kernel(&mut rng, 2, 2, 3, 1);
        let x = random_tensor(&mut rng, 2, 10);
        let (dx, kg) = causal_conv_backward(&kernel, &x, &Tensor2::zeros(2, 10)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(kg.taps.iter().all(|&v| v == 0.0));
        assert!(kg.bias.unwrap().iter().all(|&v| v == 0.0));

        let f = random_tensor(&mut rng, 2, 10);
        let (df, dg) = gated_activation_backward(&f, &x, &Tensor2::zeros(2, 10)).unwrap();
        assert!(df.data().iter().chain(dg.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn conv_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kernel = random_kernel(&mut rng, 2, 2, 3, 3);
        let x = random_tensor(&mut rng, 2, 30);
        let base = causal_conv_forward(&kernel, &x).unwrap();
        for n in [0, 7, 29] {
            let mut y = x.clone();
            y.channel_mut(1)[n] += 1.0;
            let out = causal_conv_forward(&kernel, &y).unwrap();
            for c in 0..2 {
                assert_eq!(&out.channel(c)[..n], &base.channel(c)[..n]);
            }
        }
    }

    #[test]
    fn first_output_sees_only_first_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kernel = random_kernel(&mut rng, 1, 1, 3, 1);
        let mut x = random_tensor(&mut rng, 1, 8);
        let y0 = causal_conv_forward(&kernel, &x).unwrap().channel(0)[0];
        let expect = kernel.bias.as_ref().unwrap()[0] + kernel.tap(0, 0, 2) * x.channel(0)[0];
        assert_eq!(y0, expect);
        x.channel_mut(0)[1..].fill(5.0);
        assert_eq!(causal_conv_forward(&kernel, &x).unwrap().channel(0)[0], y0);
    }

    #[test]
    fn gated_activation_examples() {
        let z = |f: f64, g: f64| {
            gated_activation_forward(&Tensor2::row(&[f]), &Tensor2::row(&[g])).unwrap().data()[0]
        };
        assert_eq!(z(0.0, 0.0), 0.0);
        assert!((z(1.0, 0.0) - 0.380797).abs() < 1e-6);
        for a in [-2.0, 0.3, 1.7] {
            assert!((z(a, 20.0) - f64::tanh(a)).abs() < 1e-8);
        }
        let (df, dg) =
            gated_activation_backward(&Tensor2::row(&[0.0]), &Tensor2::row(&[0.0]), &Tensor2::row(&[1.0])).unwrap();
        assert_eq!(df.data()[0], 0.5);
        assert_eq!(dg.data()[0], 0.0);
        assert!(gated_activation_forward(&Tensor2::zeros(1, 2), &Tensor2::zeros(2, 1)).is_err());
    }

    #[test]
    fn gated_activation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_tensor(&mut rng, 2, 12);
        let g = random_tensor(&mut rng, 2, 12);
        let u = random_tensor(&mut rng, 2, 12);
        let (df, dg) = gated_activation_backward(&f, &g, &u).unwrap();
        let mut params = f.data().to_vec();
        params.extend_from_slice(g.data());
        let mut analytic = df.data().to_vec();
        analytic.extend_from_slice(dg.data());
        let err = finite_difference_check(
            |p| {
                let f = Tensor2::from_vec(2, 12, p[..24].to_vec())?;
                let g = Tensor2::from_vec(2, 12, p[24..].to_vec())?;
                Ok(gated_activation_forward(&f, &g)?.dot(&u))
            },
            &params,
            &analytic,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let make = |seed| {
            let mut k = ConvKernel::zeros(16, 16, 3, 1, true);
            k.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
            k
        };
        assert_eq!(make(3), make(3));
        assert_ne!(make(3), make(4));
        let k = make(3);
        let bound = (1.0f64 / 48.0).sqrt();
        assert!(k.taps.iter().all(|t| t.abs() <= bound));
        assert!(bound - 0.1443 < 1e-4);
        assert!(k.bias.unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn finite_difference_check_on_linear_model() {
        let x = [0.5, -1.5, 2.0, 0.25];
        let w = [0.1, 0.2, -0.3, 0.4];
        let err = finite_difference_check(|p| Ok(p.iter().zip(&x).map(|(a, b)| a * b).sum()), &w, &x, 1e-3)
            .unwrap();
        assert!(err <= 1e-10, "{err}");
        assert!(matches!(
            finite_difference_check(|_| Ok(0.0), &w, &x, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            finite_difference_check(|_| Ok(f64::NAN), &w, &x, 1e-3),
            Err(Error::Numerics(_))
        ));
    }
}
