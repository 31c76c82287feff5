//! HMM half of the hybrid recognizer: a 95-state left-to-right word-loop
//! graph over the digit lexicon, Viterbi decoding, forced alignment, the
//! uniform bootstrap alignment, and the full training schedule (3
//! cross-entropy epochs followed by 5 realign-retrain iterations).

use std::io::{Read, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{self, AdamState, MlpModel};
use crate::corpus::{Corpus, Utterance, SAMPLE_RATE, VOCABULARY};
use crate::dsp::{apply_fir, design_lowpass, FirFilter};
use crate::frontend::{Frontend, FrontendConfig};
use crate::sfa::sfa_transform;
use crate::{derive_seed, Error, Result, Waveform};

/// Word-loop graph: `words x states_per_word` emitting word states plus an
/// optional left-to-right silence model, silence usable at utterance
/// boundaries and between words.
#[derive(Debug, Clone)]
pub struct HmmGraph {
    words: Vec<String>,
    states_per_word: usize,
    silence_states: usize,
    self_loop: f64,
    /// Outgoing arcs per state, sorted by target.
    arcs_out: Vec<Vec<(usize, f64)>>,
    /// Incoming arcs per state, sorted by source.
    arcs_in: Vec<Vec<(usize, f64)>>,
    /// Initial log-probabilities (finite only at entry states).
    initial: Vec<f64>,
}

impl HmmGraph {
    /// The standard recognizer graph: 11 digit words x 8 states plus 7
    /// silence states = 95 emitting states, self-loops 0.5.
    pub fn build() -> HmmGraph {
        Self::custom(&VOCABULARY, 8, 7, 0.5).expect("standard graph is valid")
    }

    /// Arbitrary-size word-loop graph with the same topology; used for
    /// small oracle-checked instances.
    pub fn custom<S: AsRef<str>>(
        words: &[S],
        states_per_word: usize,
        silence_states: usize,
        self_loop: f64,
    ) -> Result<HmmGraph> {
        if words.is_empty() || states_per_word == 0 {
            return Err(Error::InvalidArgument("need at least one word and one state".into()));
        }
        if !(self_loop > 0.0 && self_loop < 1.0) {
            return Err(Error::InvalidArgument("self-loop probability must be in (0,1)".into()));
        }
        let w = words.len();
        let n = w * states_per_word + silence_states;
        let fwd = 1.0 - self_loop;
        let word_start = |wi: usize| wi * states_per_word;
        let sil_start = w * states_per_word;

        let mut arcs_out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for wi in 0..w {
            for j in 0..states_per_word {
                let s = word_start(wi) + j;
                arcs_out[s].push((s, self_loop.ln()));
                if j + 1 < states_per_word {
                    arcs_out[s].push((s + 1, fwd.ln()));
                } else {
                    // Word exit: optional silence, then the word loop.
                    if silence_states > 0 {
                        arcs_out[s].push((sil_start, (fwd * 0.5).ln()));
                        for wj in 0..w {
                            arcs_out[s].push((word_start(wj), (fwd * 0.5 / w as f64).ln()));
                        }
                    } else {
                        for wj in 0..w {
                            arcs_out[s].push((word_start(wj), (fwd / w as f64).ln()));
                        }
                    }
                }
            }
        }
        for k in 0..silence_states {
            let s = sil_start + k;
            arcs_out[s].push((s, self_loop.ln()));
            if k + 1 < silence_states {
                arcs_out[s].push((s + 1, fwd.ln()));
            } else {
                for wj in 0..w {
                    arcs_out[s].push((word_start(wj), (fwd / w as f64).ln()));
                }
            }
        }
        for arcs in &mut arcs_out {
            arcs.sort_by_key(|&(to, _)| to);
        }

        let mut arcs_in: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (from, arcs) in arcs_out.iter().enumerate() {
            for &(to, lp) in arcs {
                arcs_in[to].push((from, lp));
            }
        }
        for arcs in &mut arcs_in {
            arcs.sort_by_key(|&(from, _)| from);
        }

        let entries = w + usize::from(silence_states > 0);
        let mut initial = vec![f64::NEG_INFINITY; n];
        for wi in 0..w {
            initial[word_start(wi)] = (1.0 / entries as f64).ln();
        }
        if silence_states > 0 {
            initial[sil_start] = (1.0 / entries as f64).ln();
        }

        Ok(HmmGraph {
            words: words.iter().map(|s| s.as_ref().to_string()).collect(),
            states_per_word,
            silence_states,
            self_loop,
            arcs_out,
            arcs_in,
            initial,
        })
    }

    pub fn n_states(&self) -> usize {
        self.arcs_out.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn states_per_word(&self) -> usize {
        self.states_per_word
    }

    pub fn word_start(&self, word: usize) -> usize {
        word * self.states_per_word
    }

    pub fn word_final(&self, word: usize) -> usize {
        word * self.states_per_word + self.states_per_word - 1
    }

    /// Which word a state belongs to; `None` for silence states.
    pub fn word_of_state(&self, state: usize) -> Option<usize> {
        if state < self.words.len() * self.states_per_word {
            Some(state / self.states_per_word)
        } else {
            None
        }
    }

    fn word_started(&self, state: usize) -> Option<usize> {
        self.word_of_state(state).filter(|&w| state == self.word_start(w))
    }

    /// States a path may terminate in.
    pub fn final_states(&self) -> Vec<usize> {
        let mut f: Vec<usize> = (0..self.words.len()).map(|w| self.word_final(w)).collect();
        if self.silence_states > 0 {
            f.push(self.n_states() - 1);
        }
        f
    }

    pub fn initial_log_probs(&self) -> &[f64] {
        &self.initial
    }

    pub fn arcs_out(&self, state: usize) -> &[(usize, f64)] {
        &self.arcs_out[state]
    }

    /// Log-probability of the arc `from -> to`, if it exists.
    pub fn arc_log_prob(&self, from: usize, to: usize) -> Option<f64> {
        self.arcs_out[from]
            .binary_search_by_key(&to, |&(t, _)| t)
            .ok()
            .map(|i| self.arcs_out[from][i].1)
    }

    /// True when every consecutive state pair follows a graph arc.
    pub fn is_legal_path(&self, states: &[usize]) -> bool {
        states.windows(2).all(|w| self.arc_log_prob(w[0], w[1]).is_some())
    }

    /// Word index for a vocabulary word.
    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    /// Minimum frames needed to traverse a transcript (silence skipped).
    pub fn min_frames(&self, transcript_len: usize) -> usize {
        transcript_len * self.states_per_word
    }

    /// Human-readable structure summary stored inside checkpoints.
    pub fn description_text(&self) -> String {
        format!(
            "words: {}\nstates_per_word: {}\nsilence_states: {}\nself_loop: {}\n",
            self.words.join(" "),
            self.states_per_word,
            self.silence_states,
            self.self_loop
        )
    }
}

/// Frame-level state path for a fixed transcript, with its path log-score.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub frame_states: Vec<usize>,
    pub log_score: f64,
}

fn check_log_probs(graph: &HmmGraph, log_probs: &Array2<f64>) -> Result<()> {
    if log_probs.nrows() == 0 {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    if log_probs.ncols() != graph.n_states() {
        return Err(Error::InvalidArgument(format!(
            "log-prob width {} != {} states",
            log_probs.ncols(),
            graph.n_states()
        )));
    }
    Ok(())
}

fn words_of_path(graph: &HmmGraph, states: &[usize]) -> Vec<String> {
    let mut words = Vec::new();
    for (t, &s) in states.iter().enumerate() {
        if let Some(w) = graph.word_started(s) {
            if t == 0 || states[t - 1] != s {
                words.push(graph.words[w].clone());
            }
        }
    }
    words
}

/// Max-product decode over the word loop; returns the best word sequence.
/// Ties break toward the lower state index.
pub fn viterbi_decode(graph: &HmmGraph, log_probs: &Array2<f64>) -> Result<Vec<String>> {
    viterbi_decode_scored(graph, log_probs, 0.0).map(|(words, _)| words)
}

/// Decode returning the best path score; `word_penalty` is subtracted on
/// every word entry.
pub fn viterbi_decode_scored(
    graph: &HmmGraph,
    log_probs: &Array2<f64>,
    word_penalty: f64,
) -> Result<(Vec<String>, f64)> {
    check_log_probs(graph, log_probs)?;
    let n = graph.n_states();
    let t_len = log_probs.nrows();
    let entry_penalty = |state: usize| -> f64 {
        if graph.word_started(state).is_some() {
            -word_penalty
        } else {
            0.0
        }
    };

    let mut delta: Vec<f64> = (0..n)
        .map(|s| graph.initial[s] + entry_penalty(s) + log_probs[[0, s]])
        .collect();
    let mut psi = vec![vec![0usize; n]; t_len];
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 1..t_len {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_from = 0usize;
            for &(from, arc_lp) in &graph.arcs_in[s] {
                // Entering a word (from anywhere but its own self-loop)
                // costs the insertion penalty.
                let pen = if from != s { entry_penalty(s) } else { 0.0 };
                let score = delta[from] + arc_lp + pen;
                if score > best {
                    best = score;
                    best_from = from;
                }
            }
            psi[t][s] = best_from;
            next[s] = best + log_probs[[t, s]];
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best_state = usize::MAX;
    let mut best_score = f64::NEG_INFINITY;
    for s in graph.final_states() {
        if delta[s] > best_score {
            best_score = delta[s];
            best_state = s;
        }
    }
    if best_state == usize::MAX {
        return Err(Error::InvalidArgument("no reachable final state".into()));
    }
    let mut states = vec![0usize; t_len];
    states[t_len - 1] = best_state;
    for t in (0..t_len - 1).rev() {
        states[t] = psi[t + 1][states[t + 1]];
    }
    Ok((words_of_path(graph, &states), best_score))
}

/// Best path constrained to exactly the transcript's word sequence, silence
/// optional at the boundaries and between words.
pub fn forced_align(
    graph: &HmmGraph,
    log_probs: &Array2<f64>,
    transcript: &[String],
) -> Result<AlignmentResult> {
    check_log_probs(graph, log_probs)?;
    if transcript.is_empty() {
        return Err(Error::InvalidArgument("empty transcript".into()));
    }
    let word_ids: Vec<usize> = transcript
        .iter()
        .map(|w| {
            graph
                .word_index(w)
                .ok_or_else(|| Error::InvalidArgument(format!("word '{w}' not in lexicon")))
        })
        .collect::<Result<_>>()?;
    let t_len = log_probs.nrows();
    let min = graph.min_frames(word_ids.len());
    if t_len < min {
        return Err(Error::InfeasibleAlignment(format!(
            "{t_len} frames cannot host {} words needing {min}",
            word_ids.len()
        )));
    }

    // Linear chain of blocks: optional silence around and between words.
    #[derive(Clone, Copy)]
    struct Node {
        state: usize,
        /// start of the block this node belongs to, as a chain index
        block_first: usize,
    }
    let spw = graph.states_per_word;
    let sil = graph.silence_states;
    let sil_start_state = graph.words.len() * spw;
    let mut nodes: Vec<Node> = Vec::new();
    let silence_block = |nodes: &mut Vec<Node>| -> Option<(usize, usize)> {
        if sil == 0 {
            return None;
        }
        let first = nodes.len();
        for k in 0..sil {
            nodes.push(Node { state: sil_start_state + k, block_first: first });
        }
        Some((first, nodes.len() - 1))
    };

    // Interleave: [sil] w1 [sil] w2 ... wn [sil]
    let mut word_blocks: Vec<(usize, usize)> = Vec::new();
    let mut sil_blocks: Vec<Option<(usize, usize)>> = Vec::new();
    sil_blocks.push(silence_block(&mut nodes));
    for &w in &word_ids {
        let first = nodes.len();
        for j in 0..spw {
            nodes.push(Node { state: graph.word_start(w) + j, block_first: first });
        }
        word_blocks.push((first, nodes.len() - 1));
        sil_blocks.push(silence_block(&mut nodes));
    }

    let len = nodes.len();
    // Incoming arcs per chain node: (chain index, log prob).
    let mut inc: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len];
    let arc = |from: usize, to: usize| -> f64 {
        graph
            .arc_log_prob(from, to)
            .expect("chain arcs exist in the word-loop graph")
    };
    for (i, node) in nodes.iter().enumerate() {
        inc[i].push((i, arc(node.state, node.state)));
    }
    for i in 0..len {
        if i + 1 < len && nodes[i + 1].block_first == nodes[i].block_first {
            inc[i + 1].push((i, arc(nodes[i].state, nodes[i + 1].state)));
        }
    }
    for (k, &(_, wlast)) in word_blocks.iter().enumerate() {
        // word k exits into the following optional silence and into word k+1
        if let Some((sfirst, slast)) = sil_blocks[k + 1] {
            inc[sfirst].push((wlast, arc(nodes[wlast].state, nodes[sfirst].state)));
            if k + 1 < word_blocks.len() {
                let (nfirst, _) = word_blocks[k + 1];
                inc[nfirst].push((slast, arc(nodes[slast].state, nodes[nfirst].state)));
            }
        }
        if k + 1 < word_blocks.len() {
            let (nfirst, _) = word_blocks[k + 1];
            inc[nfirst].push((wlast, arc(nodes[wlast].state, nodes[nfirst].state)));
        }
    }
    // Leading silence exits into the first word.
    if let Some((_, slast)) = sil_blocks[0] {
        let (w0, _) = word_blocks[0];
        inc[w0].push((slast, arc(nodes[slast].state, nodes[w0].state)));
    }

    // Entry points: leading silence start and/or the first word start.
    let mut initial = vec![f64::NEG_INFINITY; len];
    let (w0first, _) = word_blocks[0];
    initial[w0first] = graph.initial[nodes[w0first].state];
    if let Some((sfirst, _)) = sil_blocks[0] {
        initial[sfirst] = graph.initial[nodes[sfirst].state];
    }
    // Accepting nodes: last word final, trailing silence final.
    let mut finals = vec![word_blocks[word_blocks.len() - 1].1];
    if let Some((_, slast)) = sil_blocks[word_blocks.len()] {
        finals.push(slast);
    }

    let mut delta: Vec<f64> = (0..len)
        .map(|i| initial[i] + log_probs[[0, nodes[i].state]])
        .collect();
    let mut psi = vec![vec![0usize; len]; t_len];
    let mut next = vec![f64::NEG_INFINITY; len];
    for t in 1..t_len {
        for i in 0..len {
            let mut best = f64::NEG_INFINITY;
            let mut best_from = 0usize;
            for &(from, lp) in &inc[i] {
                let score = delta[from] + lp;
                if score > best {
                    best = score;
                    best_from = from;
                }
            }
            psi[t][i] = best_from;
            next[i] = best + log_probs[[t, nodes[i].state]];
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best_node = usize::MAX;
    let mut best_score = f64::NEG_INFINITY;
    for &i in &finals {
        if delta[i] > best_score {
            best_score = delta[i];
            best_node = i;
        }
    }
    if best_node == usize::MAX || best_score == f64::NEG_INFINITY {
        return Err(Error::InfeasibleAlignment("no path through the transcript".into()));
    }
    let mut chain = vec![0usize; t_len];
    chain[t_len - 1] = best_node;
    for t in (0..t_len - 1).rev() {
        chain[t] = psi[t + 1][chain[t + 1]];
    }
    let frame_states: Vec<usize> = chain.iter().map(|&i| nodes[i].state).collect();
    Ok(AlignmentResult { frame_states, log_score: best_score })
}

/// Bootstrap alignment: splits `t_frames` equally over the transcript's
/// word states in order, giving the remainder to the later states.
pub fn uniform_align(graph: &HmmGraph, transcript: &[String], t_frames: usize) -> Result<Vec<usize>> {
    if transcript.is_empty() {
        return Err(Error::InvalidArgument("empty transcript".into()));
    }
    let mut states = Vec::new();
    for w in transcript {
        let wi = graph
            .word_index(w)
            .ok_or_else(|| Error::InvalidArgument(format!("word '{w}' not in lexicon")))?;
        for j in 0..graph.states_per_word {
            states.push(graph.word_start(wi) + j);
        }
    }
    let n = states.len();
    if t_frames < n {
        return Err(Error::InfeasibleAlignment(format!(
            "{t_frames} frames cannot host {n} states"
        )));
    }
    let base = t_frames / n;
    let rem = t_frames % n;
    let mut out = Vec::with_capacity(t_frames);
    for (k, &s) in states.iter().enumerate() {
        let count = base + usize::from(k >= n - rem);
        out.extend(std::iter::repeat(s).take(count));
    }
    Ok(out)
}

/// Pre-processing pipeline applied before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    Baseline,
    BasSfa,
    Sfa,
    Lpf,
    SfaLpf,
}

impl Preprocessing {
    pub const ALL: [Preprocessing; 5] = [
        Preprocessing::Baseline,
        Preprocessing::BasSfa,
        Preprocessing::Sfa,
        Preprocessing::Lpf,
        Preprocessing::SfaLpf,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Preprocessing::Baseline => "baseline",
            Preprocessing::BasSfa => "bas_sfa",
            Preprocessing::Sfa => "sfa",
            Preprocessing::Lpf => "lpf",
            Preprocessing::SfaLpf => "sfa_lpf",
        }
    }

    pub fn parse(s: &str) -> Result<Preprocessing> {
        Self::ALL
            .iter()
            .find(|p| p.tag() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))
    }

    fn needs_filter(&self) -> bool {
        matches!(self, Preprocessing::Lpf | Preprocessing::SfaLpf)
    }
}

/// Knobs left open by the training recipe.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// In the combined pipeline, apply the low-pass filter before the slow
    /// feature transform.
    pub combo_lpf_first: bool,
    /// Penalty subtracted per decoded word entry.
    pub word_insertion_penalty: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { combo_lpf_first: true, word_insertion_penalty: 0.0 }
    }
}

/// Trained recognizer: acoustic model, graph, and the pre-processing it was
/// trained under.
#[derive(Clone)]
pub struct Recognizer {
    pub model: MlpModel,
    pub graph: HmmGraph,
    pub preprocessing: Preprocessing,
    pub options: TrainOptions,
    filter: Option<FirFilter>,
    frontend: Frontend,
}

impl Recognizer {
    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    /// The defense transform this recognizer was trained under, applied at
    /// inference time. Identity for the baseline.
    pub fn preprocess(&self, x: &Waveform) -> Result<Waveform> {
        transform_audio(
            self.preprocessing,
            x,
            self.filter.as_ref(),
            self.options.combo_lpf_first,
        )
    }

    /// Log-probabilities of the raw (non-defended) audio.
    pub fn log_probs(&self, x: &Waveform) -> Result<Array2<f64>> {
        let feats = self.frontend.features(x)?;
        self.model.forward(&feats.frames)
    }

    /// Decodes a waveform, optionally applying the defense pre-processing
    /// first.
    pub fn decode(&self, x: &Waveform, apply_defense: bool) -> Result<Vec<String>> {
        let audio;
        let input = if apply_defense {
            audio = self.preprocess(x)?;
            &audio
        } else {
            x
        };
        let lp = self.log_probs(input)?;
        viterbi_decode_scored(&self.graph, &lp, self.options.word_insertion_penalty)
            .map(|(words, _)| words)
    }

    /// Checkpoint: preprocessing tag + graph description text + model and
    /// optimizer state.
    pub fn save<W: Write>(&self, w: &mut W, adam: &AdamState) -> Result<()> {
        w.write_all(b"SGRCK1")?;
        let tag = self.preprocessing.tag().as_bytes();
        w.write_all(&(tag.len() as u32).to_le_bytes())?;
        w.write_all(tag)?;
        w.write_all(&[u8::from(self.options.combo_lpf_first)])?;
        w.write_all(&self.options.word_insertion_penalty.to_le_bytes())?;
        let desc = self.graph.description_text();
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc.as_bytes())?;
        acoustic::write_checkpoint(w, &self.model, adam)
    }

    pub fn load<R: Read>(r: &mut R) -> Result<(Recognizer, AdamState)> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != b"SGRCK1" {
            return Err(Error::Format("bad recognizer checkpoint magic".into()));
        }
        let mut len4 = [0u8; 4];
        r.read_exact(&mut len4)?;
        let mut tag = vec![0u8; u32::from_le_bytes(len4) as usize];
        r.read_exact(&mut tag)?;
        let tag = String::from_utf8(tag).map_err(|_| Error::Format("bad tag".into()))?;
        let preprocessing = Preprocessing::parse(&tag)?;
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        let mut f8 = [0u8; 8];
        r.read_exact(&mut f8)?;
        let options = TrainOptions {
            combo_lpf_first: byte[0] != 0,
            word_insertion_penalty: f64::from_le_bytes(f8),
        };
        r.read_exact(&mut len4)?;
        let mut desc = vec![0u8; u32::from_le_bytes(len4) as usize];
        r.read_exact(&mut desc)?;
        let (model, adam) = acoustic::read_checkpoint(r)?;
        let recognizer = Recognizer {
            model,
            graph: HmmGraph::build(),
            preprocessing,
            options,
            filter: if preprocessing.needs_filter() {
                Some(design_lowpass(SAMPLE_RATE, 7000.0, 7500.0, 60.0)?)
            } else {
                None
            },
            frontend: Frontend::new(FrontendConfig::default(), SAMPLE_RATE)?,
        };
        Ok((recognizer, adam))
    }
}

fn transform_audio(
    pre: Preprocessing,
    x: &Waveform,
    filter: Option<&FirFilter>,
    lpf_first: bool,
) -> Result<Waveform> {
    match pre {
        Preprocessing::Baseline => Ok(x.clone()),
        Preprocessing::Sfa | Preprocessing::BasSfa => sfa_transform(x),
        Preprocessing::Lpf => apply_fir(filter.expect("filter designed for lpf"), x),
        Preprocessing::SfaLpf => {
            let filter = filter.expect("filter designed for sfa_lpf");
            if lpf_first {
                sfa_transform(&apply_fir(filter, x)?)
            } else {
                apply_fir(filter, &sfa_transform(x)?)
            }
        }
    }
}

/// Waveform views used to train a variant: the original, its transform, or
/// both for the augmented variant.
fn training_views(
    pre: Preprocessing,
    x: &Waveform,
    filter: Option<&FirFilter>,
    lpf_first: bool,
) -> Result<Vec<Waveform>> {
    match pre {
        Preprocessing::Baseline => Ok(vec![x.clone()]),
        Preprocessing::BasSfa => Ok(vec![x.clone(), sfa_transform(x)?]),
        _ => Ok(vec![transform_audio(pre, x, filter, lpf_first)?]),
    }
}

/// Training result plus per-iteration alignment telemetry.
pub struct TrainOutcome {
    pub recognizer: Recognizer,
    pub adam: AdamState,
    /// Total forced-alignment log-score of the training set at each of the
    /// five realignment iterations.
    pub align_log_scores: Vec<f64>,
    pub skipped_utterances: usize,
}

/// Trains a recognizer: 3 cross-entropy epochs on the uniform bootstrap
/// alignment, then 5 iterations of realign-and-retrain. Deterministic in
/// `seed`.
pub fn train_recognizer(corpus: &Corpus, pre: Preprocessing, seed: u64) -> Result<Recognizer> {
    train_recognizer_opts(corpus, pre, seed, TrainOptions::default()).map(|o| o.recognizer)
}

pub fn train_recognizer_opts(
    corpus: &Corpus,
    pre: Preprocessing,
    seed: u64,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    if corpus.train.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    let graph = HmmGraph::build();
    let frontend = Frontend::new(FrontendConfig::default(), SAMPLE_RATE)?;
    let filter = if pre.needs_filter() {
        Some(design_lowpass(SAMPLE_RATE, 7000.0, 7500.0, 60.0)?)
    } else {
        None
    };

    // Feature extraction, parallel across utterances, collected in order.
    let extracted: Vec<Vec<(Array2<f64>, Vec<String>)>> = corpus
        .train
        .par_iter()
        .map(|utt: &Utterance| -> Vec<(Array2<f64>, Vec<String>)> {
            let views = match training_views(pre, &utt.audio, filter.as_ref(), options.combo_lpf_first) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("skipping {}: {e}", utt.id);
                    return Vec::new();
                }
            };
            views
                .into_iter()
                .filter_map(|w| {
                    let feats = match frontend.features(&w) {
                        Ok(f) => f.frames,
                        Err(e) => {
                            log::warn!("skipping {}: {e}", utt.id);
                            return None;
                        }
                    };
                    if feats.nrows() < graph.min_frames(utt.transcript.len()) {
                        log::warn!("skipping {}: too short to align", utt.id);
                        return None;
                    }
                    Some((feats, utt.transcript.clone()))
                })
                .collect()
        })
        .collect();
    let skipped = extracted.iter().filter(|v| v.is_empty()).count();
    let items: Vec<(Array2<f64>, Vec<String>)> = extracted.into_iter().flatten().collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument("no alignable training utterances".into()));
    }

    let mut labels: Vec<Vec<usize>> = items
        .iter()
        .map(|(feats, transcript)| uniform_align(&graph, transcript, feats.nrows()))
        .collect::<Result<_>>()?;

    let mut model = MlpModel::new(seed);
    let mut adam = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5175));

    for _ in 0..3 {
        train_epoch(&mut model, &mut adam, &items, &labels, &mut rng)?;
    }

    let mut align_log_scores = Vec::with_capacity(5);
    for _ in 0..5 {
        let aligned: Vec<AlignmentResult> = items
            .par_iter()
            .map(|(feats, transcript)| {
                let lp = model.forward(feats)?;
                forced_align(&graph, &lp, transcript)
            })
            .collect::<Result<_>>()?;
        align_log_scores.push(aligned.iter().map(|a| a.log_score).sum());
        labels = aligned.into_iter().map(|a| a.frame_states).collect();
        train_epoch(&mut model, &mut adam, &items, &labels, &mut rng)?;
    }

    Ok(TrainOutcome {
        recognizer: Recognizer { model, graph, preprocessing: pre, options, filter, frontend },
        adam,
        align_log_scores,
        skipped_utterances: skipped,
    })
}

const BATCH_SIZE: usize = 256;

fn train_epoch(
    model: &mut MlpModel,
    adam: &mut AdamState,
    items: &[(Array2<f64>, Vec<String>)],
    labels: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut index: Vec<(u32, u32)> = items
        .iter()
        .enumerate()
        .flat_map(|(i, (feats, _))| (0..feats.nrows() as u32).map(move |t| (i as u32, t)))
        .collect();
    index.shuffle(rng);
    let dim = acoustic::INPUT_DIM;
    let mut batch = Array2::zeros((BATCH_SIZE, dim));
    let mut batch_labels = Vec::with_capacity(BATCH_SIZE);
    for chunk in index.chunks(BATCH_SIZE) {
        batch_labels.clear();
        for (row, &(i, t)) in chunk.iter().enumerate() {
            let feats = &items[i as usize].0;
            for d in 0..dim {
                batch[[row, d]] = feats[[t as usize, d]];
            }
            batch_labels.push(labels[i as usize][t as usize]);
        }
        if chunk.len() == BATCH_SIZE {
            acoustic::train_step(model, adam, &batch, &batch_labels)?;
        } else {
            let partial = batch.slice(ndarray::s![..chunk.len(), ..]).to_owned();
            acoustic::train_step(model, adam, &partial, &batch_labels)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn lp_uniform(t: usize, n: usize) -> Array2<f64> {
        Array2::from_elem((t, n), (1.0 / n as f64).ln())
    }

    fn lp_random(t: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lp = Array2::from_shape_fn((t, n), |_| rng.gen_range(-6.0..0.0));
        for mut row in lp.rows_mut() {
            let lse = row.iter().map(|&v: &f64| v.exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        lp
    }

    #[test]
    fn standard_graph_has_95_states_and_11_words() {
        let g = HmmGraph::build();
        assert_eq!(g.n_states(), 95);
        assert_eq!(g.words().len(), 11);
        assert!(g.words().iter().any(|w| w == "oh"));
        assert!(g.words().iter().any(|w| w == "zero"));
    }

    #[test]
    fn outgoing_log_probs_normalize() {
        let g = HmmGraph::build();
        for s in 0..g.n_states() {
            let lse = g.arcs_out(s).iter().map(|&(_, lp)| lp.exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-9, "state {s}: logsumexp {lse}");
        }
    }

    #[test]
    fn one_hot_rows_force_single_word() {
        let g = HmmGraph::build();
        let word = 6; // "five"
        let t = 16;
        let mut lp = Array2::from_elem((t, 95), -30.0);
        for (frame, row) in (0..t).map(|f| (f, f * 8 / t)) {
            lp[[frame, g.word_start(word) + row]] = 0.0;
        }
        let words = viterbi_decode(&g, &lp).unwrap();
        assert_eq!(words, vec!["five".to_string()]);
    }

    #[test]
    fn uniform_emissions_decode_deterministically() {
        let g = HmmGraph::build();
        let lp = lp_uniform(20, 95);
        let a = viterbi_decode(&g, &lp).unwrap();
        let b = viterbi_decode(&g, &lp).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for w in &a {
            assert!(g.word_index(w).is_some());
        }
    }

    /// Exhaustive path enumeration over the word-loop graph.
    fn enumerate_paths(g: &HmmGraph, t_len: usize) -> Vec<(Vec<usize>, f64)> {
        let finals = g.final_states();
        let mut done: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut stack: Vec<(Vec<usize>, f64)> = (0..g.n_states())
            .filter(|&s| g.initial_log_probs()[s] > f64::NEG_INFINITY)
            .map(|s| (vec![s], g.initial_log_probs()[s]))
            .collect();
        while let Some((path, score)) = stack.pop() {
            if path.len() == t_len {
                if finals.contains(path.last().unwrap()) {
                    done.push((path, score));
                }
                continue;
            }
            let last = *path.last().unwrap();
            for &(to, lp) in g.arcs_out(last) {
                let mut p = path.clone();
                p.push(to);
                stack.push((p, score + lp));
            }
        }
        done
    }

    fn path_score(path: &[usize], trans_score: f64, lp: &Array2<f64>) -> f64 {
        trans_score + path.iter().enumerate().map(|(t, &s)| lp[[t, s]]).sum::<f64>()
    }

    #[test]
    fn viterbi_matches_brute_force_on_tiny_graphs() {
        for seed in 0..12u64 {
            let g = HmmGraph::custom(&["a", "b"], 2, 0, 0.5).unwrap();
            let t_len = 4;
            let lp = lp_random(t_len, g.n_states(), seed);
            let paths = enumerate_paths(&g, t_len);
            assert!(!paths.is_empty() && paths.len() <= 200, "{} paths", paths.len());
            let (best_path, best_score) = paths
                .iter()
                .map(|(p, ts)| (p, path_score(p, *ts, &lp)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(p, s)| (p.clone(), s))
                .unwrap();
            let (words, score) = viterbi_decode_scored(&g, &lp, 0.0).unwrap();
            assert!((score - best_score).abs() < 1e-9);
            assert_eq!(words, words_of_path(&g, &best_path));
        }
    }

    #[test]
    fn forced_align_matches_brute_force_on_tiny_graphs() {
        for seed in 20..30u64 {
            let g = HmmGraph::custom(&["a", "b"], 2, 1, 0.5).unwrap();
            let t_len = 5;
            let lp = lp_random(t_len, g.n_states(), seed);
            let transcript = vec!["b".to_string(), "a".to_string()];
            let oracle = enumerate_paths(&g, t_len)
                .into_iter()
                .filter(|(p, _)| {
                    words_of_path(&g, p) == transcript
                })
                .map(|(p, ts)| path_score(&p, ts, &lp))
                .fold(f64::NEG_INFINITY, f64::max);
            let aligned = forced_align(&g, &lp, &transcript).unwrap();
            assert!(
                (aligned.log_score - oracle).abs() < 1e-9,
                "seed {seed}: {} vs oracle {oracle}",
                aligned.log_score
            );
            assert!(g.is_legal_path(&aligned.frame_states));
        }
    }

    #[test]
    fn forced_one_hot_staircase() {
        let g = HmmGraph::build();
        let word = 2; // "one"
        let t = 8;
        let mut lp = Array2::from_elem((t, 95), -40.0);
        for f in 0..t {
            lp[[f, g.word_start(word) + f]] = 0.0;
        }
        let aligned = forced_align(&g, &lp, &["one".to_string()]).unwrap();
        let expect: Vec<usize> = (0..t).map(|f| g.word_start(word) + f).collect();
        assert_eq!(aligned.frame_states, expect);
    }

    #[test]
    fn forced_align_infeasible_transcript() {
        let g = HmmGraph::build();
        let lp = lp_uniform(10, 95);
        let transcript = vec!["one".to_string(), "two".to_string()];
        assert!(matches!(
            forced_align(&g, &lp, &transcript),
            Err(Error::InfeasibleAlignment(_))
        ));
    }

    #[test]
    fn forced_score_never_exceeds_decode_score() {
        let g = HmmGraph::build();
        for seed in 0..5u64 {
            let lp = lp_random(24, 95, 40 + seed);
            let (_, decode_score) = viterbi_decode_scored(&g, &lp, 0.0).unwrap();
            let aligned = forced_align(&g, &lp, &["seven".to_string()]).unwrap();
            assert!(aligned.log_score <= decode_score + 1e-12);
        }
    }

    #[test]
    fn decoded_paths_are_transition_legal() {
        let g = HmmGraph::build();
        let lp = lp_random(30, 95, 77);
        let aligned = forced_align(&g, &lp, &["three".to_string(), "six".to_string()]).unwrap();
        assert!(g.is_legal_path(&aligned.frame_states));
        // Every transcript word appears exactly once, in order.
        assert_eq!(
            words_of_path(&g, &aligned.frame_states),
            vec!["three".to_string(), "six".to_string()]
        );
    }

    #[test]
    fn uniform_align_even_split() {
        let g = HmmGraph::build();
        let states = uniform_align(&g, &["five".to_string()], 16).unwrap();
        assert_eq!(states.len(), 16);
        for j in 0..8 {
            assert_eq!(states[2 * j], g.word_start(6) + j);
            assert_eq!(states[2 * j + 1], g.word_start(6) + j);
        }
    }

    #[test]
    fn uniform_align_remainder_to_later_states() {
        let g = HmmGraph::build();
        let states = uniform_align(&g, &["five".to_string()], 17).unwrap();
        assert_eq!(states.len(), 17);
        let counts: Vec<usize> =
            (0..8).map(|j| states.iter().filter(|&&s| s == g.word_start(6) + j).count()).collect();
        assert_eq!(counts, vec![2, 2, 2, 2, 2, 2, 2, 3]);
        // Monotone
        for w in states.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn uniform_align_infeasible() {
        let g = HmmGraph::build();
        assert!(matches!(
            uniform_align(&g, &["five".to_string()], 7),
            Err(Error::InfeasibleAlignment(_))
        ));
    }

    #[test]
    fn preprocessing_tags_round_trip() {
        for p in Preprocessing::ALL {
            assert_eq!(Preprocessing::parse(p.tag()).unwrap(), p);
        }
        assert!(Preprocessing::parse("nope").is_err());
    }

    #[test]
    fn repeated_word_is_emitted_twice() {
        let g = HmmGraph::build();
        let word = 6;
        let t = 16;
        let mut lp = Array2::from_elem((t, 95), -40.0);
        for f in 0..8 {
            lp[[f, g.word_start(word) + f]] = 0.0;
            lp[[8 + f, g.word_start(word) + f]] = 0.0;
        }
        let words = viterbi_decode(&g, &lp).unwrap();
        assert_eq!(words, vec!["five".to_string(), "five".to_string()]);
    }
}
