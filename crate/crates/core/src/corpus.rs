//! Synthetic clean instrument audio.
//!
//! Plucked-string phrases (Karplus-Strong) in bass and guitar registers, used
//! as a stand-in corpus when no recorded DI material is at hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::{normalize_peak, AudioBuffer};

fn pluck(out: &mut [f64], f0: f64, fs: f64, amp: f64, decay: f64, rng: &mut ChaCha8Rng) {
    let period = (fs / f0).max(2.0);
    let len = period.floor() as usize;
    let frac = period - len as f64;
    let mut line: Vec<f64> = (0..len + 1).map(|_| rng.random_range(-1.0..1.0)).collect();
    // one-pole lowpass on the excitation: softer attack, like a finger pluck
    let brightness = rng.random_range(0.2..0.7);
    for i in 1..line.len() {
        line[i] = (1.0 - brightness) * line[i] + brightness * line[i - 1];
    }
    let mean = line.iter().sum::<f64>() / line.len() as f64;
    line.iter_mut().for_each(|v| *v -= mean);

    let n = line.len();
    let mut idx = 0usize;
    for o in out.iter_mut() {
        let a = line[idx];
        let b = line[(idx + 1) % n];
        let c = line[(idx + 2) % n];
        // fractional delay via linear interpolation between the two averaging taps
        let v = decay * (0.5 * (a + b) * (1.0 - frac) + 0.5 * (b + c) * frac);
        *o += amp * a;
        line[idx] = v;
        idx = (idx + 1) % n;
    }
}

/// Generates `seconds` of plucked-string phrases, peak-normalized to `peak_dbfs`.
pub fn plucked_phrases(seconds: f64, sample_rate_hz: u32, peak_dbfs: f64, seed: u64) -> AudioBuffer {
    let fs = sample_rate_hz as f64;
    let total = (seconds * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; total];
    let bass = rng.random_bool(0.5);
    let (lo_midi, hi_midi) = if bass { (28.0, 55.0) } else { (40.0, 76.0) };

    let mut pos = 0usize;
    while pos < total {
        let dur = (rng.random_range(0.12..0.9) * fs) as usize;
        if rng.random_bool(0.1) {
            pos += dur / 2;
            continue;
        }
        let voices = if !bass && rng.random_bool(0.3) { 3 } else { 1 };
        let root: f64 = rng.random_range(lo_midi..hi_midi);
        let ring = ((rng.random_range(0.6..2.5)) * fs) as usize;
        let end = (pos + ring).min(total);
        for v in 0..voices {
            let midi = root.round() + [0.0, 7.0, 12.0][v];
            let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            let amp = rng.random_range(0.3..1.0) / voices as f64;
            let decay = rng.random_range(0.990..0.9995);
            let strum = v * (rng.random_range(0.005..0.02) * fs) as usize;
            if pos + strum < end {
                pluck(&mut out[pos + strum..end], f0, fs, amp, decay, &mut rng);
            }
        }
        pos += dur;
    }
    normalize_peak(
        &AudioBuffer {
            samples: out,
            sample_rate_hz,
        },
        peak_dbfs,
    )
}
