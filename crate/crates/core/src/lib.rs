//! Desk-scale toolkit for studying low-level audio defenses against targeted
//! adversarial attacks on a hybrid NN-HMM digit recognizer.
//!
//! The pipeline: a deterministic synthetic spoken-digit corpus ([`corpus`]),
//! optional pre-processing with a slow-feature transform ([`sfa`]) and/or an
//! FIR low-pass filter ([`dsp`]), an MFCC front-end with an exact backward
//! pass ([`frontend`]), an MLP acoustic model ([`acoustic`]) coupled to a
//! 95-state word-loop HMM ([`hmm`]), targeted PGD attacks ([`attack`]),
//! WER / rank-sum evaluation ([`metrics`]), and experiment orchestration
//! ([`harness`]).

pub mod acoustic;
pub mod attack;
pub mod corpus;
pub mod dsp;
pub mod frontend;
pub mod harness;
pub mod hmm;
pub mod metrics;
pub mod sfa;

pub use acoustic::{AdamState, MlpModel};
pub use attack::{pgd_attack, sample_target, AttackConfig, AttackResult};
pub use corpus::{build_corpus, read_wav, synth_digit_utterance, write_wav, Corpus, Utterance, Waveform};
pub use dsp::{apply_fir, design_lowpass, FirFilter};
pub use frontend::{FeatureSequence, Frontend, FrontendConfig};
pub use harness::{emit_report, run_experiment, run_variant, ExperimentConfig, ExperimentReport};
pub use hmm::{
    forced_align, train_recognizer, uniform_align, viterbi_decode, AlignmentResult, HmmGraph,
    Preprocessing, Recognizer,
};
pub use metrics::{wer, wilcoxon_w, RankSumResult, WerBreakdown};
pub use sfa::{quadratic_expand, sfa_transform, slowest_projection, time_embed, SfaTransform};

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("infeasible alignment: {0}")]
    InfeasibleAlignment(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Derives a child seed from a base seed and a stream index.
///
/// SplitMix64 finalizer; used everywhere a single experiment seed has to fan
/// out into independent deterministic substreams (per-utterance synthesis,
/// per-attack target sampling, ...).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
