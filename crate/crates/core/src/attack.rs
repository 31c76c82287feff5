//! Targeted adversarial attack: sample a malicious digit transcript, force
//! align it onto the clean signal, then run sign-step projected gradient
//! descent on the waveform against the frame-wise cross-entropy of the
//! aligned target states.
//!
//! The attacker differentiates the MFCC front-end and the network only; the
//! defense pre-processing is not part of the gradient chain (non-adaptive
//! attacker).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustic;
use crate::corpus::VOCABULARY;
use crate::hmm::{forced_align, viterbi_decode_scored, AlignmentResult, Recognizer};
use crate::{Error, Result, Waveform};

/// Attack budget and schedule.
#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    /// L-infinity budget in normalized sample units.
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// Default schedule: step = epsilon / 10, 200 iterations.
    pub fn for_epsilon(epsilon: f64, seed: u64) -> Self {
        Self { epsilon, step_size: epsilon / 10.0, iterations: 200, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        if self.epsilon > 0.0 && self.step_size <= 0.0 {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("need at least one iteration".into()));
        }
        Ok(())
    }
}

/// Outcome of one attack.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Waveform,
    pub delta: Vec<f64>,
    pub target_transcript: Vec<String>,
    pub aligned_states: AlignmentResult,
    /// Decode of the adversarial audio without defense pre-processing.
    pub achieved_transcript: Vec<String>,
    /// Cross-entropy against the aligned target states at each iterate.
    pub loss_trace: Vec<f64>,
}

/// Samples a malicious transcript: length uniform in 1..=5, words uniform
/// over the vocabulary, resampled while equal to the true transcript.
pub fn sample_target<R: Rng>(rng: &mut R, true_transcript: &[String]) -> Vec<String> {
    loop {
        let len = rng.gen_range(1..=5usize);
        let target: Vec<String> = (0..len)
            .map(|_| VOCABULARY[rng.gen_range(0..VOCABULARY.len())].to_string())
            .collect();
        if target != true_transcript {
            return target;
        }
    }
}

/// Runs targeted PGD against `recognizer` on `x`.
///
/// The target alignment is computed once on the clean signal and held fixed;
/// each iteration takes a signed gradient step on the perturbation and
/// projects back into the epsilon ball. The final adversarial signal is
/// clipped to [-1, 1].
pub fn pgd_attack(
    recognizer: &Recognizer,
    x: &Waveform,
    target: &[String],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty waveform".into()));
    }
    let frontend = recognizer.frontend();
    let clean_logp = recognizer.log_probs(x)?;
    let aligned = forced_align(&recognizer.graph, &clean_logp, target)?;
    let labels = &aligned.frame_states;

    if cfg.epsilon == 0.0 {
        let (achieved, _) = viterbi_decode_scored(
            &recognizer.graph,
            &clean_logp,
            recognizer.options.word_insertion_penalty,
        )?;
        return Ok(AttackResult {
            adversarial: x.clone(),
            delta: vec![0.0; x.len()],
            target_transcript: target.to_vec(),
            aligned_states: aligned,
            achieved_transcript: achieved,
            loss_trace: Vec::new(),
        });
    }

    // Madry-style random start inside the ball.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut delta: Vec<f64> =
        (0..x.len()).map(|_| rng.gen_range(-cfg.epsilon..cfg.epsilon)).collect();
    let mut perturbed = x.clone();
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        for (p, (&orig, &d)) in
            perturbed.samples.iter_mut().zip(x.samples.iter().zip(delta.iter()))
        {
            *p = orig + d;
        }
        let feats = frontend.features(&perturbed)?;
        let (loss, g_feats) = acoustic::loss_and_input_grad(&recognizer.model, &feats.frames, labels)?;
        loss_trace.push(loss);
        let g_wav = frontend.backward(&perturbed, &g_feats)?;
        for (d, g) in delta.iter_mut().zip(&g_wav) {
            let step = if *g > 0.0 {
                cfg.step_size
            } else if *g < 0.0 {
                -cfg.step_size
            } else {
                0.0
            };
            *d = (*d - step).clamp(-cfg.epsilon, cfg.epsilon);
        }
    }

    let adversarial = Waveform::new(
        x.samples
            .iter()
            .zip(&delta)
            .map(|(&s, &d)| (s + d).clamp(-1.0, 1.0))
            .collect(),
        x.sample_rate,
    );
    let adv_logp = recognizer.log_probs(&adversarial)?;
    let (achieved, _) = viterbi_decode_scored(
        &recognizer.graph,
        &adv_logp,
        recognizer.options.word_insertion_penalty,
    )?;
    Ok(AttackResult {
        adversarial,
        delta,
        target_transcript: target.to_vec(),
        aligned_states: aligned,
        achieved_transcript: achieved,
        loss_trace,
    })
}
