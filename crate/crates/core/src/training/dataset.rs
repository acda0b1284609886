use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainingExample;
use crate::error::{Error, Result};
use crate::refdevice::{process_fresh, TubeStageConfig};
use crate::signal::{apply_gain_db, db_to_linear, read_wav, segment, write_wav, WavFormat};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const DEVICE_FILE: &str = "device.json";

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset directory.
    pub input_path: String,
    pub target_path: String,
    pub control: f64,
    pub input_gain_db: f64,
    pub sample_rate: u32,
    /// Clean source file name; the unit of the train/validation split.
    pub source: String,
    pub source_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub segment_ms: f64,
    pub gain_range_db: (f64, f64),
    pub seed: u64,
    /// Clean segments whose peak lies below this level are skipped.
    pub min_peak_dbfs: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            segment_ms: 100.0,
            gain_range_db: (-15.0, 15.0),
            seed: 0,
            min_peak_dbfs: -60.0,
        }
    }
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `*.wav` files directly inside `dir`, sorted by name.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Segments a clean corpus, applies random input gain and control settings,
/// renders targets through the reference device and writes the dataset.
///
/// Every segment starts the device from a zero state. Silent and near-silent
/// segments are skipped: their ESR is undefined or dominated by the model's
/// output offset.
pub fn build_dataset(
    corpus_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    device: &TubeStageConfig,
    options: &DatasetOptions,
) -> Result<Vec<ManifestEntry>> {
    device.validate()?;
    let (lo, hi) = options.gain_range_db;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("gain range {lo}:{hi} dB")));
    }
    let files = list_wavs(&corpus_dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no WAV files in {}",
            corpus_dir.as_ref().display()
        )));
    }
    let out_dir = out_dir.as_ref();
    let seg_dir = out_dir.join("segments");
    fs::create_dir_all(&seg_dir).map_err(|e| Error::io(&seg_dir, e))?;

    let floor = db_to_linear(options.min_peak_dbfs);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut entries = Vec::new();
    let mut rate = None;
    for file in &files {
        let audio = read_wav(file)?;
        match rate {
            None => rate = Some(audio.sample_rate_hz),
            Some(r) if r != audio.sample_rate_hz => {
                return Err(Error::Dataset(format!(
                    "{} is at {} Hz, corpus is at {r} Hz",
                    file.display(),
                    audio.sample_rate_hz
                )))
            }
            _ => {}
        }
        let source = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let source_hash = file_sha256(file)?;
        for seg in segment(&audio, options.segment_ms)? {
            let gain_db = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let control: f64 = rng.random_range(0.0..=1.0);
            if seg.peak() == 0.0 || seg.peak() < floor {
                continue;
            }
            // round to the stored precision first so the target is the device's
            // response to exactly the input that is written out
            let mut input = apply_gain_db(&seg, gain_db)?;
            input.samples.iter_mut().for_each(|s| *s = *s as f32 as f64);
            let target = process_fresh(device, &input, control)?;
            let idx = entries.len();
            let input_path = format!("segments/{idx:06}_in.wav");
            let target_path = format!("segments/{idx:06}_target.wav");
            write_wav(&input, out_dir.join(&input_path), WavFormat::Float32)?;
            write_wav(&target, out_dir.join(&target_path), WavFormat::Float32)?;
            entries.push(ManifestEntry {
                input_path,
                target_path,
                control,
                input_gain_db: gain_db,
                sample_rate: audio.sample_rate_hz,
                source: source.clone(),
                source_hash: source_hash.clone(),
            });
        }
    }

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut manifest = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for entry in &entries {
        let line = serde_json::to_string(entry).expect("manifest entries serialize");
        writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    let device_path = out_dir.join(DEVICE_FILE);
    let device_json = serde_json::to_string_pretty(device).expect("device config serializes");
    fs::write(&device_path, device_json).map_err(|e| Error::io(&device_path, e))?;
    Ok(entries)
}

pub fn read_manifest(dataset_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = dataset_dir.as_ref().join(MANIFEST_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Loads every segment named in the manifest, along with the device config
/// stored next to it (if any).
pub fn load_dataset(
    dataset_dir: impl AsRef<Path>,
) -> Result<(Vec<(ManifestEntry, TrainingExample)>, Option<TubeStageConfig>)> {
    let dir = dataset_dir.as_ref();
    let entries = read_manifest(dir)?;
    if entries.is_empty() {
        return Err(Error::Dataset(format!("{} lists no segments", MANIFEST_FILE)));
    }
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let input = read_wav(dir.join(&entry.input_path))?;
        let target = read_wav(dir.join(&entry.target_path))?;
        if input.sample_rate_hz != entry.sample_rate || target.sample_rate_hz != entry.sample_rate {
            return Err(Error::Dataset(format!("{}: sample rate mismatch", entry.input_path)));
        }
        if input.len() != target.len() {
            return Err(Error::Dataset(format!("{}: input/target lengths differ", entry.input_path)));
        }
        let example = TrainingExample {
            input,
            control: entry.control,
            input_gain_db: entry.input_gain_db,
            target,
        };
        out.push((entry, example));
    }
    let device_path = dir.join(DEVICE_FILE);
    let device = if device_path.exists() {
        let text = fs::read_to_string(&device_path).map_err(|e| Error::io(&device_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{DEVICE_FILE}: {e}")))?)
    } else {
        None
    };
    Ok((out, device))
}

/// Splits by source file so no file contributes to both sides.
///
/// Returns (train, validation) index lists into `entries`.
pub fn split_by_source(entries: &[ManifestEntry], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {val_fraction} must lie in (0, 1)")));
    }
    let mut sources: Vec<&str> = entries
        .iter()
        .map(|e| e.source.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if sources.len() < 2 {
        return Err(Error::Config(
            "need at least two source files to split training and validation data".into(),
        ));
    }
    sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((sources.len() as f64 * val_fraction).round() as usize).clamp(1, sources.len() - 1);
    let val: BTreeSet<&str> = sources[..n_val].iter().copied().collect();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, e) in entries.iter().enumerate() {
        if val.contains(e.source.as_str()) {
            valid.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, valid))
}
