//! Deterministic synthetic spoken-digit corpus and WAV file I/O.
//!
//! Every digit word is rendered as a fixed dual-tone signature (a word
//! specific frequency pair under a raised-cosine envelope) plus low-level
//! seeded noise, so the corpus is hermetic and bit-reproducible while the
//! eleven words stay acoustically separable.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{derive_seed, Error, Result};

/// Corpus sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;

/// The digit vocabulary, with the two alternative pronunciations of 0 first.
pub const VOCABULARY: [&str; 11] = [
    "zero", "oh", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Index of a word in [`VOCABULARY`], if present.
pub fn word_index(word: &str) -> Option<usize> {
    VOCABULARY.iter().position(|w| *w == word)
}

/// Dual-tone signature per word: well separated pairs, all inside the
/// low-pass defense passband so filtering never erases a word.
fn word_tones(word_idx: usize) -> (f64, f64) {
    let i = word_idx as f64;
    (1800.0 + 130.0 * i, 6600.0 - 270.0 * i)
}

/// Mono waveform with samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A single utterance: audio plus its digit-word transcript.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub audio: Waveform,
    pub transcript: Vec<String>,
}

/// Train/test split of synthetic utterances, reproducible from `seed`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub seed: u64,
}

// Synthesis timing (seconds). Words 150-220 ms, inter-word gaps 80-150 ms,
// edge silences 80-120 ms: one word stays above 0.3 s total, seven words
// stay below 3.5 s, and every gap can host the 7-state silence model.
const WORD_DUR: (f64, f64) = (0.15, 0.22);
const GAP_DUR: (f64, f64) = (0.08, 0.15);
const EDGE_DUR: (f64, f64) = (0.08, 0.12);
const RAMP_SECS: f64 = 0.02;
const PEAK_AMPLITUDE: f64 = 0.9;
const NOISE_AMPLITUDE: f64 = 0.015;
/// Per-word gain range; word levels vary the way conversational speech does.
const WORD_GAIN: (f64, f64) = (0.25, 1.0);

/// Renders a transcript as audio, deterministic in `(transcript, seed)`.
pub fn synth_digit_utterance(transcript: &[String], seed: u64, sample_rate: u32) -> Result<Waveform> {
    if transcript.is_empty() {
        return Err(Error::InvalidArgument("empty transcript".into()));
    }
    if sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!(
            "sample rate must be {SAMPLE_RATE} Hz, got {sample_rate}"
        )));
    }
    let word_indices: Vec<usize> = transcript
        .iter()
        .map(|w| word_index(w).ok_or_else(|| Error::InvalidArgument(format!("unknown word '{w}'"))))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let mut samples: Vec<f64> = Vec::new();

    let lead = rng.gen_range(EDGE_DUR.0..EDGE_DUR.1);
    samples.resize((lead * fs).round() as usize, 0.0);

    for (pos, &w) in word_indices.iter().enumerate() {
        if pos > 0 {
            let gap = rng.gen_range(GAP_DUR.0..GAP_DUR.1);
            let gap_len = (gap * fs).round() as usize;
            samples.resize(samples.len() + gap_len, 0.0);
        }
        let dur = rng.gen_range(WORD_DUR.0..WORD_DUR.1);
        let n = (dur * fs).round() as usize;
        let (f1, f2) = word_tones(w);
        let phase1 = rng.gen_range(0.0..std::f64::consts::TAU);
        let phase2 = rng.gen_range(0.0..std::f64::consts::TAU);
        let gain = rng.gen_range(WORD_GAIN.0..WORD_GAIN.1);
        let ramp = (RAMP_SECS * fs).round() as usize;
        // Tones glide about 8% across the word so each time slice of a word
        // is spectrally distinct, the way formant transitions are.
        let mut ph1 = phase1;
        let mut ph2 = phase2;
        for t in 0..n {
            let glide = 0.96 + 0.08 * t as f64 / n as f64;
            ph1 += std::f64::consts::TAU * f1 * glide / fs;
            ph2 += std::f64::consts::TAU * f2 * glide / fs;
            let env = gain * envelope(t, n, ramp);
            samples.push(env * (0.5 * ph1.sin() + 0.5 * ph2.sin()));
        }
    }

    let trail = rng.gen_range(EDGE_DUR.0..EDGE_DUR.1);
    samples.resize(samples.len() + (trail * fs).round() as usize, 0.0);

    // Peak-normalize to 0.9, leaving headroom for adversarial perturbations,
    // then inject the noise floor.
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = PEAK_AMPLITUDE / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }
    for s in &mut samples {
        *s += rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
    }

    Ok(Waveform::new(samples, sample_rate))
}

/// Raised-cosine attack/release envelope.
fn envelope(t: usize, n: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(n / 2).max(1);
    if t < ramp {
        0.5 - 0.5 * (std::f64::consts::PI * t as f64 / ramp as f64).cos()
    } else if t + ramp >= n {
        let k = n - 1 - t;
        0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

/// Builds a seeded corpus with disjoint train/test splits.
///
/// Transcript lengths are uniform over 1..=7 words; every utterance derives
/// its own seed by hashing the corpus seed with the utterance index.
pub fn build_corpus(n_train: usize, n_test: usize, seed: u64) -> Result<Corpus> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument(
            "corpus needs at least one train and one test utterance".into(),
        ));
    }
    let make = |prefix: &str, count: usize, offset: u64| -> Result<Vec<Utterance>> {
        (0..count)
            .map(|i| {
                let utt_seed = derive_seed(seed, offset + i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);
                let len = rng.gen_range(1..=7usize);
                let transcript: Vec<String> = (0..len)
                    .map(|_| VOCABULARY[rng.gen_range(0..VOCABULARY.len())].to_string())
                    .collect();
                let audio_seed = rng.gen::<u64>();
                let audio = synth_digit_utterance(&transcript, audio_seed, SAMPLE_RATE)?;
                Ok(Utterance {
                    id: format!("{prefix}{i:05}"),
                    audio,
                    transcript,
                })
            })
            .collect()
    };
    let train = make("tr", n_train, 0)?;
    let test = make("te", n_test, n_train as u64)?;
    Ok(Corpus { train, test, seed })
}

// --- WAV I/O: RIFF, 16-bit signed PCM, mono ---

const PCM_SCALE: f64 = 32767.0;

/// Writes a waveform as a 16-bit PCM mono WAV file.
pub fn write_wav<P: AsRef<Path>>(path: P, wav: &Waveform) -> Result<()> {
    let mut data = Vec::with_capacity(44 + wav.len() * 2);
    let byte_rate = wav.sample_rate * 2;
    let data_len = (wav.len() * 2) as u32;

    data.extend_from_slice(b"RIFF");
    data.extend_from_slice(&(36 + data_len).to_le_bytes());
    data.extend_from_slice(b"WAVE");
    data.extend_from_slice(b"fmt ");
    data.extend_from_slice(&16u32.to_le_bytes());
    data.extend_from_slice(&1u16.to_le_bytes()); // PCM
    data.extend_from_slice(&1u16.to_le_bytes()); // mono
    data.extend_from_slice(&wav.sample_rate.to_le_bytes());
    data.extend_from_slice(&byte_rate.to_le_bytes());
    data.extend_from_slice(&2u16.to_le_bytes()); // block align
    data.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    data.extend_from_slice(b"data");
    data.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wav.samples {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        data.extend_from_slice(&q.to_le_bytes());
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&data)?;
    Ok(())
}

/// Reads a 16-bit PCM mono WAV file.
pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<Waveform> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(Error::Format("truncated chunk".into()));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("fmt chunk too short".into()));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }
    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::Format(format!("unsupported format tag {format}, want PCM")));
    }
    if channels != 1 {
        return Err(Error::Format(format!("expected mono, got {channels} channels")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("expected 16-bit samples, got {bits}")));
    }
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Format("odd data chunk length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE)
        .collect();
    Ok(Waveform::new(samples, sample_rate))
}

// --- Corpus persistence: WAVs plus a line-delimited manifest per split ---

fn write_split(dir: &Path, name: &str, utts: &[Utterance]) -> Result<()> {
    let wav_dir = dir.join(name);
    fs::create_dir_all(&wav_dir)?;
    let mut manifest = String::new();
    for u in utts {
        let rel = format!("{name}/{}.wav", u.id);
        write_wav(dir.join(&rel), &u.audio)?;
        manifest.push_str(&format!("{}\t{}\t{}\n", u.id, rel, u.transcript.join(" ")));
    }
    fs::write(dir.join(format!("{name}.tsv")), manifest)?;
    Ok(())
}

fn read_split(dir: &Path, name: &str) -> Result<Vec<Utterance>> {
    let manifest = fs::read_to_string(dir.join(format!("{name}.tsv")))?;
    manifest
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut fields = line.split('\t');
            let (id, rel, words) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(Error::Format(format!("bad manifest line: {line}"))),
            };
            let audio = read_wav(dir.join(rel))?;
            Ok(Utterance {
                id: id.to_string(),
                audio,
                transcript: words.split_whitespace().map(str::to_string).collect(),
            })
        })
        .collect()
}

impl Corpus {
    /// Writes the corpus (WAVs and manifests) under `dir`.
    pub fn save_to_dir<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_split(dir, "train", &self.train)?;
        write_split(dir, "test", &self.test)?;
        fs::write(dir.join("meta.txt"), format!("seed\t{}\n", self.seed))?;
        Ok(())
    }

    /// Loads a corpus previously written by [`Corpus::save_to_dir`].
    pub fn load_from_dir<P: AsRef<Path>>(dir: P) -> Result<Corpus> {
        let dir = dir.as_ref();
        let seed = fs::read_to_string(dir.join("meta.txt"))
            .ok()
            .and_then(|s| s.split_whitespace().nth(1).and_then(|v| v.parse().ok()))
            .unwrap_or(0);
        Ok(Corpus {
            train: read_split(dir, "train")?,
            test: read_split(dir, "test")?,
            seed,
        })
    }

    /// Checks the id-disjointness invariant.
    pub fn splits_disjoint(&self) -> bool {
        let train_ids: HashSet<&str> = self.train.iter().map(|u| u.id.as_str()).collect();
        self.test.iter().all(|u| !train_ids.contains(u.id.as_str()))
    }
}
