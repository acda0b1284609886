use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubenet::signal::{apply_gain_db, pre_emphasis_slice, read_wav, segment, write_wav, AudioBuffer, WavFormat};
use tubenet::Error;

fn write_raw<S: hound::Sample + Copy>(path: &std::path::Path, channels: u16, bits: u16, fmt: hound::SampleFormat, rate: u32, data: &[S]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in data {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn reads_pcm16_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    write_raw(&path, 1, 16, hound::SampleFormat::Int, 44100, &[32767i16, 0, -32768]);
    let b = read_wav(&path).unwrap();
    assert_eq!(b.sample_rate_hz, 44100);
    assert!((b.samples[0] - 0.99997).abs() < 1e-5);
    assert_eq!(b.samples[1..], [0.0, -1.0]);
}

#[test]
fn reads_float_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    write_raw(&path, 1, 32, hound::SampleFormat::Float, 48000, &[0.5f32]);
    assert_eq!(read_wav(&path).unwrap(), AudioBuffer::new(vec![0.5], 48000).unwrap());
}

#[test]
fn rejects_stereo_24_bit_and_truncated_files() {
    let dir = tempfile::tempdir().unwrap();
    let stereo = dir.path().join("stereo.wav");
    write_raw(&stereo, 2, 16, hound::SampleFormat::Int, 44100, &[1i16, 2, 3, 4]);
    assert!(matches!(read_wav(&stereo), Err(Error::ChannelCount(2))));

    let deep = dir.path().join("deep.wav");
    write_raw(&deep, 1, 24, hound::SampleFormat::Int, 44100, &[1i32, -5]);
    assert!(matches!(read_wav(&deep), Err(Error::Format(_))));

    let good = dir.path().join("good.wav");
    write_wav(&AudioBuffer::new(vec![0.1; 1000], 44100).unwrap(), &good, WavFormat::Float32).unwrap();
    let bytes = std::fs::read(&good).unwrap();
    let cut = dir.path().join("cut.wav");
    std::fs::write(&cut, &bytes[..bytes.len() - 1001]).unwrap();
    let r = read_wav(&cut);
    assert!(matches!(r, Err(Error::CorruptFile(_))), "{r:?}");
    std::fs::write(&cut, &bytes[..20]).unwrap();
    let r = read_wav(&cut);
    assert!(matches!(r, Err(Error::CorruptFile(_))), "{r:?}");

    assert!(matches!(read_wav(dir.path().join("missing.wav")), Err(Error::Io { .. })));
}

#[test]
fn float32_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..44100).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
    let b = AudioBuffer::new(samples, 44100).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.wav");
    write_wav(&b, &path, WavFormat::Float32).unwrap();
    assert_eq!(read_wav(&path).unwrap(), b);
}

#[test]
fn pcm16_clips_and_quantizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.wav");
    write_wav(&AudioBuffer::new(vec![1.5, 0.25, -3.0], 44100).unwrap(), &path, WavFormat::Pcm16).unwrap();
    let raw: Vec<i16> = hound::WavReader::open(&path)
        .unwrap()
        .samples::<i16>()
        .map(|s| s.unwrap())
        .collect();
    assert_eq!(raw[0], 32767);
    assert_eq!(raw[2], -32768);
    let back = read_wav(&path).unwrap();
    assert!((back.samples[1] - 0.25).abs() <= 1.0 / 32768.0);
}

#[test]
fn write_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = AudioBuffer::new(vec![], 44100).unwrap();
    assert!(matches!(write_wav(&empty, dir.path().join("e.wav"), WavFormat::Pcm16), Err(Error::Domain(_))));
    let one = AudioBuffer::new(vec![0.0], 44100).unwrap();
    assert!(matches!(
        write_wav(&one, dir.path().join("no/such/dir.wav"), WavFormat::Pcm16),
        Err(Error::Io { .. })
    ));
}

proptest! {
    // integration tests have no source file to persist regressions next to
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pcm16_round_trip_within_one_step(samples in prop::collection::vec(-1.0f64..1.0, 1..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let b = AudioBuffer::new(samples, 22050).unwrap();
        write_wav(&b, &path, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.sample_rate_hz, 22050);
        for (a, r) in b.samples.iter().zip(&back.samples) {
            prop_assert!((a - r).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn pre_emphasis_is_linear(
        pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..300),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let lhs = pre_emphasis_slice(&mixed);
        let (px, py) = (pre_emphasis_slice(&x), pre_emphasis_slice(&y));
        prop_assert_eq!(lhs.len(), x.len());
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * px[i] + b * py[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn gain_is_invertible(samples in prop::collection::vec(-1.0f64..1.0, 1..100), g in -40.0f64..40.0) {
        let b = AudioBuffer::new(samples, 44100).unwrap();
        let back = apply_gain_db(&apply_gain_db(&b, g).unwrap(), -g).unwrap();
        for (x, y) in b.samples.iter().zip(&back.samples) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn segments_tile_the_prefix(len in 0usize..20_000, ms in 1.0f64..150.0) {
        let b = AudioBuffer::new((0..len).map(|i| (i as f64 * 0.37).sin()).collect(), 44100).unwrap();
        let segs = segment(&b, ms).unwrap();
        let seg_len = (ms * 44.1).round() as usize;
        prop_assert_eq!(segs.len(), len / seg_len);
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
        prop_assert!(segs.iter().all(|s| s.len() == seg_len));
        prop_assert_eq!(&joined[..], &b.samples[..segs.len() * seg_len]);
    }
}
