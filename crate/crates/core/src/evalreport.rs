//! ESR evaluation grid over input level x control setting on held-out audio.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Model, Network};
use crate::refdevice::{check_control, process_fresh, TubeStageConfig};
use crate::signal::{normalize_peak, pre_emphasis_slice, read_wav, AudioBuffer};
use crate::training::{file_sha256, list_wavs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputLevel {
    Low,
    High,
}

impl InputLevel {
    /// Peak level the test file is normalized to.
    pub fn peak_dbfs(self) -> f64 {
        match self {
            InputLevel::Low => -12.0,
            InputLevel::High => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCondition {
    pub input_level: InputLevel,
    pub control: f64,
}

impl EvalCondition {
    /// Low/high input level at medium (0.5) and full (1.0) control.
    pub fn standard_grid() -> Vec<EvalCondition> {
        let mut out = Vec::new();
        for control in [0.5, 1.0] {
            for input_level in [InputLevel::Low, InputLevel::High] {
                out.push(EvalCondition { input_level, control });
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let level = match self.input_level {
            InputLevel::Low => "low",
            InputLevel::High => "high",
        };
        format!("{level}/{:.0}%", 100.0 * self.control)
    }
}

/// Anything that maps an input signal and a control value to a prediction.
pub trait Predictor: Sync {
    fn predict_audio(&self, input: &AudioBuffer, control: f64) -> Result<AudioBuffer>;
}

impl Predictor for Model {
    fn predict_audio(&self, input: &AudioBuffer, control: f64) -> Result<AudioBuffer> {
        let y = self.predict(&input.samples, &vec![control; self.conditioning_dim()])?;
        AudioBuffer::new(y, input.sample_rate_hz)
    }
}

/// The reference device itself, as a perfect model.
pub struct DeviceOracle(pub TubeStageConfig);

impl Predictor for DeviceOracle {
    fn predict_audio(&self, input: &AudioBuffer, control: f64) -> Result<AudioBuffer> {
        process_fresh(&self.0, input, control)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFile {
    pub name: String,
    pub sha256: String,
    pub audio: AudioBuffer,
}

pub fn load_test_corpus(dir: impl AsRef<Path>) -> Result<Vec<TestFile>> {
    list_wavs(dir)?
        .into_iter()
        .map(|path| {
            Ok(TestFile {
                name: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                sha256: file_sha256(&path)?,
                audio: read_wav(&path)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsrReport {
    pub models: Vec<String>,
    pub conditions: Vec<EvalCondition>,
    /// `[model][condition]`, plain ESR.
    pub esr: Vec<Vec<f64>>,
    /// Same grid with pre-emphasis applied to target and prediction.
    pub esr_preemph: Vec<Vec<f64>>,
    pub test_set_hash: String,
    pub num_files: usize,
    pub num_samples: usize,
}

#[derive(Default, Clone, Copy)]
struct Energies {
    err: f64,
    target: f64,
    err_pe: f64,
    target_pe: f64,
}

fn file_energies(
    model: &dyn Predictor,
    device: &TubeStageConfig,
    file: &TestFile,
    cond: &EvalCondition,
) -> Result<Energies> {
    let x = normalize_peak(&file.audio, cond.input_level.peak_dbfs());
    let y = process_fresh(device, &x, cond.control)?;
    let y_hat = model.predict_audio(&x, cond.control)?;
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!("{}: prediction length differs", file.name)));
    }
    let sq = |a: &[f64], b: &[f64]| -> (f64, f64) {
        let err = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (err, a.iter().map(|v| v * v).sum())
    };
    let (err, target) = sq(&y.samples, &y_hat.samples);
    let (err_pe, target_pe) = sq(&pre_emphasis_slice(&y.samples), &pre_emphasis_slice(&y_hat.samples));
    Ok(Energies {
        err,
        target,
        err_pe,
        target_pe,
    })
}

/// Hash identifying the test set: SHA-256 over sorted `name:sha256` lines.
pub fn test_set_hash(files: &[TestFile]) -> String {
    let mut lines: Vec<String> = files.iter().map(|f| format!("{}:{}\n", f.name, f.sha256)).collect();
    lines.sort();
    Sha256::digest(lines.concat().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// ESR of every model under every condition.
///
/// Targets come from `device` at the condition's control, with fresh state per
/// file. Per-file results are aggregated as an energy-weighted mean, which
/// equals the ESR pooled over the whole test set.
pub fn evaluate(
    models: &[(&str, &dyn Predictor)],
    device: &TubeStageConfig,
    corpus: &[TestFile],
    conditions: &[EvalCondition],
    training_hashes: &HashSet<String>,
) -> Result<EsrReport> {
    if corpus.is_empty() {
        return Err(Error::Dataset("test corpus is empty".into()));
    }
    if models.is_empty() || conditions.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    if let Some(f) = corpus.iter().find(|f| training_hashes.contains(&f.sha256)) {
        return Err(Error::Leakage(f.name.clone()));
    }
    for c in conditions {
        check_control(c.control)?;
    }
    let mut files: Vec<&TestFile> = corpus.iter().filter(|f| f.audio.peak() > 0.0).collect();
    files.sort_by(|a, b| a.name.cmp(&b.name));
    if files.is_empty() {
        return Err(Error::Dataset("every test file is silent".into()));
    }

    let mut esr = Vec::with_capacity(models.len());
    let mut esr_preemph = Vec::with_capacity(models.len());
    for (_, model) in models {
        let mut row = Vec::with_capacity(conditions.len());
        let mut row_pe = Vec::with_capacity(conditions.len());
        for cond in conditions {
            let per_file = files
                .par_iter()
                .map(|f| file_energies(*model, device, f, cond))
                .collect::<Result<Vec<_>>>()?;
            let total = per_file.iter().fold(Energies::default(), |a, e| Energies {
                err: a.err + e.err,
                target: a.target + e.target,
                err_pe: a.err_pe + e.err_pe,
                target_pe: a.target_pe + e.target_pe,
            });
            if total.target == 0.0 || total.target_pe == 0.0 {
                return Err(Error::SilentTarget);
            }
            row.push(total.err / total.target);
            row_pe.push(total.err_pe / total.target_pe);
        }
        esr.push(row);
        esr_preemph.push(row_pe);
    }
    Ok(EsrReport {
        models: models.iter().map(|(n, _)| n.to_string()).collect(),
        conditions: conditions.to_vec(),
        esr,
        esr_preemph,
        test_set_hash: test_set_hash(corpus),
        num_files: files.len(),
        num_samples: files.iter().map(|f| f.audio.len()).sum(),
    })
}

/// Formatted table plus its JSON mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub json: String,
    /// `[model][condition]`: lowest value in its column (ties all marked).
    pub highlighted: Vec<Vec<bool>>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    report: &'a EsrReport,
    highlighted: &'a [Vec<bool>],
}

/// Models as rows, conditions as columns, ESR in percent; `*` marks the
/// smallest error in each column.
pub fn report_to_table(report: &EsrReport) -> Result<RenderedReport> {
    if report.models.is_empty() || report.conditions.is_empty() {
        return Err(Error::Config("empty report".into()));
    }
    let n_cond = report.conditions.len();
    let highlighted: Vec<Vec<bool>> = report
        .esr
        .iter()
        .map(|row| {
            (0..n_cond)
                .map(|c| {
                    let best = report.esr.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                    row[c] == best
                })
                .collect()
        })
        .collect();

    let labels: Vec<String> = report.conditions.iter().map(EvalCondition::label).collect();
    let name_w = report.models.iter().map(String::len).max().unwrap_or(0).max(5);
    let col_w = labels.iter().map(String::len).max().unwrap_or(0).max(10);
    let mut text = String::new();
    let _ = write!(text, "{:<name_w$}", "model");
    for l in &labels {
        let _ = write!(text, "  {l:>col_w$}");
    }
    text.push('\n');
    for (m, name) in report.models.iter().enumerate() {
        let _ = write!(text, "{name:<name_w$}");
        for c in 0..n_cond {
            let mark = if highlighted[m][c] { "*" } else { " " };
            let cell = format!("{:.4}%{mark}", 100.0 * report.esr[m][c]);
            let _ = write!(text, "  {cell:>col_w$}");
        }
        text.push('\n');
    }
    let json = serde_json::to_string_pretty(&JsonReport {
        report,
        highlighted: &highlighted,
    })
    .map_err(|e| Error::Config(format!("report encoding: {e}")))?;
    Ok(RenderedReport {
        text,
        json,
        highlighted,
    })
}
