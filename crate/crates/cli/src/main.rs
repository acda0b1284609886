use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tubenet::corpus::plucked_phrases;
use tubenet::evalreport::{evaluate, load_test_corpus, report_to_table, EvalCondition, Predictor};
use tubenet::models::{load_model, save_model, ArchConfig, ModelMeta};
use tubenet::refdevice::{probe_transient, TubeStageConfig};
use tubenet::signal::{read_wav, write_wav, AudioBuffer, WavFormat, DEFAULT_SAMPLE_RATE};
use tubenet::streaming::{benchmark, BenchMode, StreamModel};
use tubenet::training::{
    build_dataset, load_dataset, split_by_source, train, AdamConfig, DatasetOptions, LossConfig, Reduction, TrainRunConfig,
};
use tubenet::{Error, Model, Network, Result};

#[derive(Parser, Debug)]
#[command(name = "tubenet", version, about = "Neural models of a tube amplifier stage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a training set from clean audio through the reference device.
    GenerateData(GenerateDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Run a trained model over a WAV file.
    Process(ProcessArgs),
    /// Measure how long the reference device takes to settle on a sine probe.
    AnalyzeTransient(TransientArgs),
    /// ESR grid of one or more models on held-out audio.
    Eval(EvalArgs),
    /// Throughput in multiples of real time.
    Bench(BenchArgs),
    /// Write synthetic plucked-string phrases to use as clean audio.
    MakeCorpus(MakeCorpusArgs),
}

#[derive(clap::Args, Debug)]
struct GenerateDataArgs {
    /// Directory of clean mono WAV files.
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Device parameters: a JSON file, inline JSON, or `default`.
    #[arg(long)]
    device_config: Option<String>,
    #[arg(long, default_value_t = 100.0)]
    segment_ms: f64,
    /// Random input gain range in dB, `lo:hi`.
    #[arg(long, default_value = "-15:15", allow_hyphen_values = true, value_parser = parse_range)]
    gain_db: (f64, f64),
    /// Clean segments peaking below this level are skipped.
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    min_peak_dbfs: f64,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `generate-data`.
    #[arg(long)]
    data: PathBuf,
    /// `wavenet1`, `wavenet2`, `mlp`, or `custom:<json or path>`.
    #[arg(long)]
    arch: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    lr: f64,
    /// Train on plain ESR instead of pre-emphasized ESR.
    #[arg(long)]
    no_preemph: bool,
    /// Average per-segment ESRs (`mean`) or divide total error by total energy (`pooled`).
    #[arg(long, default_value = "pooled", value_parser = ["mean", "pooled"])]
    reduction: String,
    /// Share of source files held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Epoch log (JSON lines); defaults to the model path with `.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Batch,
    Streaming,
}

impl From<Mode> for BenchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Batch => BenchMode::Batch,
            Mode::Streaming => BenchMode::Streaming,
        }
    }
}

#[derive(clap::Args, Debug)]
struct ProcessArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_control)]
    control: f64,
    #[arg(long, value_enum, default_value_t = Mode::Batch)]
    mode: Mode,
    /// Block size for streaming mode.
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    block: u64,
}

#[derive(clap::Args, Debug)]
struct TransientArgs {
    /// Device parameters: a JSON file, inline JSON, or `default`.
    #[arg(long)]
    device_config: String,
    #[arg(long)]
    freq: f64,
    #[arg(long)]
    amp: f64,
    #[arg(long, value_parser = parse_control)]
    control: f64,
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
    /// Probe duration.
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
    sample_rate: u32,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Model files, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    model: Vec<PathBuf>,
    /// Directory of held-out clean WAV files.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the device stored in the model files.
    #[arg(long)]
    device_config: Option<String>,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    /// A model file or a preset name (`wavenet1`, `wavenet2`, `mlp`).
    #[arg(long)]
    model: String,
    /// Both modes are measured when omitted.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, default_value_t = 30.0, value_parser = parse_positive)]
    seconds: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
}

#[derive(clap::Args, Debug)]
struct MakeCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    files: u64,
    #[arg(long, default_value_t = 10.0, value_parser = parse_positive)]
    seconds: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    peak_dbfs: f64,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    if !(lo <= hi) {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn parse_control(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

/// Inline JSON, or the contents of a JSON file.
fn read_json_arg(arg: &str) -> Result<String> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::Config(format!("{arg}: {e}")))
    }
}

fn parse_device(arg: &str) -> Result<TubeStageConfig> {
    if arg == "default" {
        return Ok(TubeStageConfig::default());
    }
    let cfg: TubeStageConfig =
        serde_json::from_str(&read_json_arg(arg)?).map_err(|e| Error::Config(format!("device config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_arch(arg: &str) -> Result<ArchConfig> {
    if let Some(preset) = ArchConfig::preset(arg) {
        return Ok(preset);
    }
    let json = arg
        .strip_prefix("custom:")
        .ok_or_else(|| Error::Config(format!("unknown architecture `{arg}`")))?;
    serde_json::from_str(&read_json_arg(json)?).map_err(|e| Error::Config(format!("architecture: {e}")))
}

fn generate_data(args: GenerateDataArgs) -> Result<()> {
    let device = match &args.device_config {
        Some(d) => parse_device(d)?,
        None => TubeStageConfig::default(),
    };
    let opts = DatasetOptions {
        segment_ms: args.segment_ms,
        gain_range_db: args.gain_db,
        seed: args.seed,
        min_peak_dbfs: args.min_peak_dbfs,
    };
    let entries = build_dataset(&args.clean, &args.out, &device, &opts)?;
    println!("{} segments written to {}", entries.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let arch = parse_arch(&args.arch)?;
    let (data, device) = load_dataset(&args.data)?;
    let sample_rate_hz = data[0].0.sample_rate;
    if data.iter().any(|(e, _)| e.sample_rate != sample_rate_hz) {
        return Err(Error::Dataset("segments have mixed sample rates".into()));
    }
    let entries: Vec<_> = data.iter().map(|(e, _)| e.clone()).collect();
    let (train_idx, val_idx) = split_by_source(&entries, args.val_fraction, args.seed)?;
    let train_set: Vec<_> = train_idx.iter().map(|&i| data[i].1.clone()).collect();
    let val_set: Vec<_> = val_idx.iter().map(|&i| data[i].1.clone()).collect();

    let mut model = arch.build(args.seed)?;
    let run = TrainRunConfig {
        batch_size: args.batch as usize,
        max_epochs: args.epochs as usize,
        patience: args.patience,
        seed: args.seed,
        loss: LossConfig {
            pre_emphasis: !args.no_preemph,
            reduction: if args.reduction == "mean" { Reduction::Mean } else { Reduction::Pooled },
        },
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        ..TrainRunConfig::default()
    };
    let log = args.log.clone().unwrap_or_else(|| args.out.with_extension("log.jsonl"));
    eprintln!(
        "{} parameters, {} training / {} validation segments",
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let report = train(&mut model, &train_set, &val_set, &run, Some(&log), |e| {
        eprintln!(
            "epoch {:>4}  train {:.6}  val {:.6}  {:.0}s",
            e.epoch, e.train_loss, e.val_loss, e.wall_seconds
        )
    })?;
    let training_sources: BTreeSet<String> = entries.iter().map(|e| e.source_hash.clone()).collect();
    let meta = ModelMeta {
        sample_rate_hz,
        device,
        training_sources: training_sources.into_iter().collect(),
        ..ModelMeta::default()
    };
    save_model(&model, &meta, &args.out)?;
    println!(
        "best epoch {} (validation loss {:.6}); model written to {}",
        report.best_epoch,
        report.best_val_loss,
        args.out.display()
    );
    Ok(())
}

fn process_cmd(args: ProcessArgs) -> Result<()> {
    let (model, meta) = load_model(&args.model)?;
    let input = read_wav(&args.input)?;
    if input.sample_rate_hz != meta.sample_rate_hz {
        return Err(Error::Format(format!(
            "{} is at {} Hz, the model was trained at {} Hz",
            args.input.display(),
            input.sample_rate_hz,
            meta.sample_rate_hz
        )));
    }
    let output = match args.mode {
        Mode::Batch => model.predict_audio(&input, args.control)?,
        Mode::Streaming => {
            let stream = StreamModel::<f32>::new(&model);
            let mut state = stream.init_state();
            let mut samples = Vec::with_capacity(input.len());
            for chunk in input.samples.chunks(args.block as usize) {
                let block = AudioBuffer::new(chunk.to_vec(), input.sample_rate_hz)?;
                samples.extend(stream.process_block(&mut state, &block, args.control)?.samples);
            }
            AudioBuffer::new(samples, input.sample_rate_hz)?
        }
    };
    write_wav(&output, &args.out, WavFormat::Float32)
}

fn analyze_transient_cmd(args: TransientArgs) -> Result<()> {
    let device = parse_device(&args.device_config)?;
    let n = probe_transient(
        &device,
        args.freq,
        args.amp,
        args.control,
        args.threshold,
        args.seconds,
        args.sample_rate,
    )?;
    println!(
        "transient length: {n} samples ({:.1} ms)",
        1000.0 * n as f64 / args.sample_rate as f64
    );
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let mut models = Vec::new();
    let mut training_hashes = HashSet::new();
    let mut stored_device = None;
    for path in &args.model {
        let (model, meta) = load_model(path)?;
        training_hashes.extend(meta.training_sources.iter().cloned());
        if let Some(d) = meta.device {
            if stored_device.is_some_and(|s| s != d) {
                return Err(Error::Config("models were trained on different devices; pass --device-config".into()));
            }
            stored_device = Some(d);
        }
        models.push((model_name(path), model));
    }
    let device = match &args.device_config {
        Some(d) => parse_device(d)?,
        None => stored_device.unwrap_or_default(),
    };
    let corpus = load_test_corpus(&args.test)?;
    let predictors: Vec<(&str, &dyn Predictor)> =
        models.iter().map(|(n, m)| (n.as_str(), m as &dyn Predictor)).collect();
    let report = evaluate(
        &predictors,
        &device,
        &corpus,
        &EvalCondition::standard_grid(),
        &training_hashes,
    )?;
    let rendered = report_to_table(&report)?;
    std::fs::write(&args.out, &rendered.json).map_err(|e| Error::Config(format!("{}: {e}", args.out.display())))?;
    print!("{}", rendered.text);
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let (model, name): (Model, String) = match ArchConfig::preset(&args.model) {
        Some(arch) => (arch.build(0)?, args.model.clone()),
        None => {
            let path = PathBuf::from(&args.model);
            (load_model(&path)?.0, model_name(&path))
        }
    };
    let modes = match args.mode {
        Some(m) => vec![m],
        None => vec![Mode::Batch, Mode::Streaming],
    };
    for mode in modes {
        let report = benchmark(
            &model,
            &name,
            mode.into(),
            args.seconds,
            DEFAULT_SAMPLE_RATE,
            args.runs as usize,
        )?;
        println!("{}", serde_json::to_string(&report).expect("bench report serializes"));
    }
    Ok(())
}

fn make_corpus(args: MakeCorpusArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Config(format!("{}: {e}", args.out.display())))?;
    for i in 0..args.files {
        let audio = plucked_phrases(
            args.seconds,
            DEFAULT_SAMPLE_RATE,
            args.peak_dbfs,
            args.seed.wrapping_mul(1_000_003).wrapping_add(i),
        );
        write_wav(&audio, args.out.join(format!("phrase_{i:03}.wav")), WavFormat::Float32)?;
    }
    println!("{} files written to {}", args.files, args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => generate_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Process(a) => process_cmd(a),
        Command::AnalyzeTransient(a) => analyze_transient_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::MakeCorpus(a) => make_corpus(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
