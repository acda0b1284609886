use std::collections::HashSet;

use tubenet::evalreport::{
    evaluate, load_test_corpus, report_to_table, test_set_hash, DeviceOracle, EsrReport, EvalCondition, InputLevel,
    Predictor, TestFile,
};
use tubenet::models::Model;
use tubenet::refdevice::{process_fresh, TubeStageConfig};
use tubenet::signal::{normalize_peak, write_wav, AudioBuffer, WavFormat};
use tubenet::training::esr_slices;
use tubenet::{Error, WaveNet, WaveNetConfig};

struct Silence;

impl Predictor for Silence {
    fn predict_audio(&self, input: &AudioBuffer, _control: f64) -> tubenet::Result<AudioBuffer> {
        Ok(AudioBuffer::silence(input.len(), input.sample_rate_hz))
    }
}

fn corpus() -> Vec<TestFile> {
    (0..4)
        .map(|i| TestFile {
            name: format!("f{i}.wav"),
            sha256: format!("{i:064x}"),
            audio: tubenet::corpus::plucked_phrases(0.3 + 0.1 * i as f64, 44100, -6.0, 50 + i),
        })
        .collect()
}

fn no_hashes() -> HashSet<String> {
    HashSet::new()
}

#[test]
fn device_against_itself_scores_zero() {
    let dev = TubeStageConfig::default();
    let oracle = DeviceOracle(dev);
    let r = evaluate(&[("device", &oracle)], &dev, &corpus(), &EvalCondition::standard_grid(), &no_hashes()).unwrap();
    assert!(r.esr[0].iter().chain(&r.esr_preemph[0]).all(|&e| e == 0.0));
    assert_eq!(r.conditions.len(), 4);
    assert_eq!(r.num_files, 4);
}

#[test]
fn silent_model_scores_one() {
    let dev = TubeStageConfig::default();
    let r = evaluate(&[("zero", &Silence)], &dev, &corpus(), &EvalCondition::standard_grid(), &no_hashes()).unwrap();
    for (&e, &p) in r.esr[0].iter().zip(&r.esr_preemph[0]) {
        assert!((e - 1.0).abs() < 1e-15 && (p - 1.0).abs() < 1e-15);
    }
}

#[test]
fn leakage_and_empty_corpus_are_errors() {
    let dev = TubeStageConfig::default();
    let files = corpus();
    let leaked: HashSet<String> = [files[2].sha256.clone()].into();
    let grid = EvalCondition::standard_grid();
    assert!(matches!(evaluate(&[("z", &Silence)], &dev, &files, &grid, &leaked), Err(Error::Leakage(n)) if n == "f2.wav"));
    assert!(matches!(evaluate(&[("z", &Silence)], &dev, &[], &grid, &no_hashes()), Err(Error::Dataset(_))));
}

fn small_model() -> Model {
    Model::WaveNet(WaveNet::init(WaveNetConfig::with_dilations(4, vec![1, 2, 4, 8]), 3).unwrap())
}

#[test]
fn file_order_does_not_matter() {
    let dev = TubeStageConfig::default();
    let model = small_model();
    let files = corpus();
    let mut reversed = files.clone();
    reversed.reverse();
    let grid = EvalCondition::standard_grid();
    let a = evaluate(&[("m", &model)], &dev, &files, &grid, &no_hashes()).unwrap();
    let b = evaluate(&[("m", &model)], &dev, &reversed, &grid, &no_hashes()).unwrap();
    assert_eq!(a, b);
    assert_eq!(test_set_hash(&files), test_set_hash(&reversed));
}

#[test]
fn aggregate_equals_pooled_esr() {
    let dev = TubeStageConfig::default();
    let model = small_model();
    let files = corpus();
    let cond = EvalCondition {
        input_level: InputLevel::High,
        control: 0.5,
    };
    let r = evaluate(&[("m", &model)], &dev, &files, &[cond], &no_hashes()).unwrap();
    let (mut ys, mut yhats) = (Vec::new(), Vec::new());
    for f in &files {
        let x = normalize_peak(&f.audio, 0.0);
        ys.extend(process_fresh(&dev, &x, 0.5).unwrap().samples);
        yhats.extend(model.predict_audio(&x, 0.5).unwrap().samples);
    }
    let pooled = esr_slices(&ys, &yhats).unwrap();
    assert!((r.esr[0][0] - pooled).abs() <= 1e-10, "{} vs {pooled}", r.esr[0][0]);
}

#[test]
fn silent_test_files_are_skipped() {
    let dev = TubeStageConfig::default();
    let mut files = corpus();
    files.push(TestFile {
        name: "quiet.wav".into(),
        sha256: "q".into(),
        audio: AudioBuffer::silence(1000, 44100),
    });
    let r = evaluate(&[("z", &Silence)], &dev, &files, &EvalCondition::standard_grid(), &no_hashes()).unwrap();
    assert_eq!(r.num_files, 4);
}

#[test]
fn corpus_loads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    for f in corpus() {
        write_wav(&f.audio, dir.path().join(&f.name), WavFormat::Float32).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let loaded = load_test_corpus(dir.path()).unwrap();
    assert_eq!(loaded.len(), 4);
    assert_eq!(loaded[0].name, "f0.wav");
    assert_eq!(loaded[0].sha256.len(), 64);
}

fn report(esr: Vec<Vec<f64>>, models: &[&str], conditions: Vec<EvalCondition>) -> EsrReport {
    EsrReport {
        models: models.iter().map(|s| s.to_string()).collect(),
        conditions,
        esr_preemph: esr.clone(),
        esr,
        test_set_hash: "h".into(),
        num_files: 1,
        num_samples: 10,
    }
}

#[test]
fn single_cell_table_is_marked() {
    let cond = EvalCondition {
        input_level: InputLevel::Low,
        control: 0.5,
    };
    let t = report_to_table(&report(vec![vec![0.125]], &["only"], vec![cond])).unwrap();
    assert_eq!(t.highlighted, vec![vec![true]]);
    assert!(t.text.contains("12.5000%*"));
    assert!(t.text.contains("low/50%"));
}

#[test]
fn ties_are_all_marked_and_json_matches_text() {
    let grid = EvalCondition::standard_grid();
    let esr = vec![vec![0.1, 0.2, 0.3, 0.05], vec![0.1, 0.15, 0.4, 0.06], vec![0.2, 0.15, 0.35, 0.07]];
    let t = report_to_table(&report(esr.clone(), &["a", "b", "c"], grid)).unwrap();
    assert_eq!(
        t.highlighted,
        vec![
            vec![true, false, true, true],
            vec![true, true, false, false],
            vec![false, true, false, false]
        ]
    );
    let json: serde_json::Value = serde_json::from_str(&t.json).unwrap();
    for (m, row) in esr.iter().enumerate() {
        let line = t.text.lines().nth(m + 1).unwrap();
        for (c, &v) in row.iter().enumerate() {
            assert_eq!(json["esr"][m][c].as_f64().unwrap(), v);
            assert!(line.contains(&format!("{:.4}%", 100.0 * v)));
        }
    }
    for key in ["models", "conditions", "esr", "esr_preemph", "test_set_hash", "highlighted"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!(report_to_table(&report(vec![], &[], vec![])).is_err());
}
