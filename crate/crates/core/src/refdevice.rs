//! Synthetic reference "tube stage" and transient-length analysis.
//!
//! The stage is a gain control, a DC blocker, a tanh saturator whose operating
//! point drifts with a slow bias memory, and a one-pole output lowpass:
//!
//! ```text
//! u[n] = g(control) x[n]
//! v[n] = u[n] - u[n-1] + hp v[n-1]
//! w[n] = tanh(v[n] - depth b[n-1])
//! b[n] = bias b[n-1] + (1 - bias) w[n]
//! y[n] = (1 - lp) w[n] + lp y[n-1]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{db_to_linear, sine, AudioBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeStageConfig {
    /// DC-blocker pole.
    pub hp_coeff: f64,
    /// Bias-memory pole.
    pub bias_coeff: f64,
    /// Output lowpass pole.
    pub lp_coeff: f64,
    pub bias_depth: f64,
    /// Gain at control 0.
    pub min_gain_db: f64,
    /// Gain at control 1.
    pub max_gain_db: f64,
}

impl Default for TubeStageConfig {
    fn default() -> Self {
        Self {
            hp_coeff: 0.9995,
            bias_coeff: 0.9995,
            lp_coeff: 0.6,
            bias_depth: 0.5,
            min_gain_db: -6.0,
            max_gain_db: 30.0,
        }
    }
}

impl TubeStageConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.hp_coeff) || !open_unit(self.bias_coeff) {
            return Err(Error::Domain("hp_coeff and bias_coeff must lie in (0, 1)".into()));
        }
        if !(self.lp_coeff >= 0.0 && self.lp_coeff < 1.0) {
            return Err(Error::Domain("lp_coeff must lie in [0, 1)".into()));
        }
        if !(self.bias_depth >= 0.0) || !self.bias_depth.is_finite() {
            return Err(Error::Domain("bias_depth must be finite and non-negative".into()));
        }
        if !self.min_gain_db.is_finite() || !self.max_gain_db.is_finite() {
            return Err(Error::Domain("gain range must be finite".into()));
        }
        Ok(())
    }

    /// Linear input gain for a control value in `[0, 1]`, interpolated in dB.
    pub fn gain(&self, control: f64) -> f64 {
        db_to_linear(self.min_gain_db + control * (self.max_gain_db - self.min_gain_db))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TubeStageState {
    pub u_prev: f64,
    pub v_prev: f64,
    pub b_prev: f64,
    pub y_prev: f64,
}

pub fn check_control(control: f64) -> Result<()> {
    if (0.0..=1.0).contains(&control) {
        Ok(())
    } else {
        Err(Error::Domain(format!("control {control} outside [0, 1]")))
    }
}

/// Runs `x` through the stage, advancing `state` so consecutive calls are seamless.
pub fn process(
    config: &TubeStageConfig,
    state: &mut TubeStageState,
    x: &AudioBuffer,
    control: f64,
) -> Result<AudioBuffer> {
    check_control(control)?;
    config.validate()?;
    let g = config.gain(control);
    let TubeStageConfig {
        hp_coeff,
        bias_coeff,
        lp_coeff,
        bias_depth,
        ..
    } = *config;
    let mut out = Vec::with_capacity(x.len());
    for &s in &x.samples {
        let u = g * s;
        let v = u - state.u_prev + hp_coeff * state.v_prev;
        let w = (v - bias_depth * state.b_prev).tanh();
        let b = bias_coeff * state.b_prev + (1.0 - bias_coeff) * w;
        let y = (1.0 - lp_coeff) * w + lp_coeff * state.y_prev;
        *state = TubeStageState {
            u_prev: u,
            v_prev: v,
            b_prev: b,
            y_prev: y,
        };
        out.push(y);
    }
    Ok(AudioBuffer {
        samples: out,
        sample_rate_hz: x.sample_rate_hz,
    })
}

/// Convenience wrapper: fresh zero state.
pub fn process_fresh(config: &TubeStageConfig, x: &AudioBuffer, control: f64) -> Result<AudioBuffer> {
    process(config, &mut TubeStageState::default(), x, control)
}

/// Estimates how many samples a device needs to settle after a pure-tone probe starts.
///
/// The last full probe period of `output` serves as the steady-state template
/// and is tiled backwards over the signal; the transient is what remains after
/// subtracting it. Returns the first index after which the transient stays
/// below `threshold` times its peak.
pub fn analyze_transient(
    output: &AudioBuffer,
    probe_freq_hz: f64,
    threshold: f64,
    sample_rate_hz: u32,
) -> Result<usize> {
    let fs = sample_rate_hz as f64;
    let n = output.len();
    if sample_rate_hz == 0 || !(probe_freq_hz > 0.0 && probe_freq_hz < fs / 2.0) {
        return Err(Error::Domain(format!("probe frequency {probe_freq_hz} Hz")));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} must lie in (0, 1)")));
    }
    if (n as f64) < 2.0 * fs {
        return Err(Error::Domain("transient analysis needs at least 2 s of output".into()));
    }
    let period = fs / probe_freq_hz;
    if (n as f64) < 20.0 * period {
        return Err(Error::Domain("output must span at least 20 probe periods".into()));
    }

    let y = &output.samples;
    let last = (n - 1) as f64;
    // Map every index into the final period by whole-period shifts; fractional
    // periods are handled by linear interpolation.
    let template = |i: usize| -> f64 {
        let shifts = ((last - i as f64) / period).floor();
        let t = i as f64 + shifts * period;
        let k = t.floor() as usize;
        let frac = t - k as f64;
        if k + 1 >= n || frac == 0.0 {
            y[k.min(n - 1)]
        } else {
            (1.0 - frac) * y[k] + frac * y[k + 1]
        }
    };
    let transient: Vec<f64> = (0..n).map(|i| y[i] - template(i)).collect();

    let tail_start = n - (10.0 * period).round() as usize;
    let tail_err: f64 = transient[tail_start..].iter().map(|t| t * t).sum();
    let tail_energy: f64 = y[tail_start..].iter().map(|t| t * t).sum();
    if tail_err > 0.05 * tail_energy {
        return Err(Error::SteadyState(format!(
            "template mismatch is {:.1}% of the output energy over the last 10 periods",
            100.0 * tail_err / tail_energy.max(f64::MIN_POSITIVE)
        )));
    }

    let peak = transient.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let out_peak = output.peak();
    if peak <= 1e-9 * out_peak || peak == 0.0 {
        return Ok(0);
    }
    let limit = threshold * peak;
    Ok(transient
        .iter()
        .rposition(|t| t.abs() >= limit)
        .map_or(0, |i| i + 1))
}

/// Drives a fresh device with a sine probe and measures the transient length.
pub fn probe_transient(
    config: &TubeStageConfig,
    probe_freq_hz: f64,
    amplitude: f64,
    control: f64,
    threshold: f64,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<usize> {
    let probe = sine(probe_freq_hz, amplitude, duration_s, sample_rate_hz)?;
    let out = process_fresh(config, &probe, control)?;
    analyze_transient(&out, probe_freq_hz, threshold, sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_in_zero_out() {
        let x = AudioBuffer::silence(1000, 44100);
        let y = process_fresh(&TubeStageConfig::default(), &x, 0.7).unwrap();
        assert!(y.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn output_is_bounded() {
        let x = sine(110.0, 50.0, 0.5, 44100).unwrap();
        let y = process_fresh(&TubeStageConfig::default(), &x, 1.0).unwrap();
        assert!(y.samples.iter().all(|s| s.abs() < 1.0));
    }

    #[test]
    fn rejects_bad_control_and_config() {
        let x = AudioBuffer::silence(10, 44100);
        let cfg = TubeStageConfig::default();
        assert!(matches!(process_fresh(&cfg, &x, 1.01), Err(Error::Domain(_))));
        assert!(matches!(process_fresh(&cfg, &x, -0.1), Err(Error::Domain(_))));
        let bad = TubeStageConfig {
            bias_coeff: 1.0,
            ..cfg
        };
        assert!(process_fresh(&bad, &x, 0.5).is_err());
    }

    #[test]
    fn control_maps_linearly_in_db() {
        let cfg = TubeStageConfig::default();
        assert!((cfg.gain(0.0) - db_to_linear(-6.0)).abs() < 1e-12);
        assert!((cfg.gain(1.0) - db_to_linear(30.0)).abs() < 1e-12);
        assert!((cfg.gain(0.5) - db_to_linear(12.0)).abs() < 1e-12);
    }

    #[test]
    fn chunked_processing_is_seamless() {
        let x = sine(50.0, 0.25, 0.3, 44100).unwrap();
        let cfg = TubeStageConfig::default();
        let whole = process_fresh(&cfg, &x, 1.0).unwrap();
        let mut state = TubeStageState::default();
        let (a, b) = x.samples.split_at(5000);
        let mut y = process(&cfg, &mut state, &AudioBuffer::new(a.to_vec(), 44100).unwrap(), 1.0).unwrap();
        let y2 = process(&cfg, &mut state, &AudioBuffer::new(b.to_vec(), 44100).unwrap(), 1.0).unwrap();
        y.samples.extend(y2.samples);
        assert_eq!(whole.samples, y.samples);
    }

    #[test]
    fn memoryless_device_has_no_transient() {
        let x = sine(50.0, 0.8, 2.0, 44100).unwrap();
        let y = AudioBuffer::new(x.samples.iter().map(|s| s.tanh()).collect(), 44100).unwrap();
        assert_eq!(analyze_transient(&y, 50.0, 0.01, 44100).unwrap(), 0);
    }

    #[test]
    fn analyzer_preconditions() {
        let short = sine(50.0, 0.25, 1.0, 44100).unwrap();
        assert!(matches!(analyze_transient(&short, 50.0, 0.01, 44100), Err(Error::Domain(_))));
        let x = sine(50.0, 0.25, 2.0, 44100).unwrap();
        assert!(analyze_transient(&x, 50.0, 0.0, 44100).is_err());
    }

    #[test]
    fn aperiodic_output_is_rejected() {
        // A chirp never settles to the probe's period.
        let fs = 44100.0;
        let y: Vec<f64> = (0..88200)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * (50.0 * t + 40.0 * t * t)).sin()
            })
            .collect();
        let y = AudioBuffer::new(y, 44100).unwrap();
        assert!(matches!(analyze_transient(&y, 50.0, 0.01, 44100), Err(Error::SteadyState(_))));
    }
}
