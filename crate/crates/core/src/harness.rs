//! Experiment orchestration: trains the model variants over several seeded
//! runs, generates targeted adversarial test sets across a grid of
//! perturbation budgets, and emits table and sweep reports.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_attack, sample_target, AttackConfig};
use crate::corpus::{build_corpus, Corpus};
use crate::hmm::{train_recognizer_opts, Preprocessing, Recognizer, TrainOptions};
use crate::metrics::{wer, wilcoxon_w_with_critical};
use crate::{derive_seed, Error, Result};

/// Full experiment description. The defaults are the desk-scale setup: an
/// 800/100 corpus, five runs, adversarial tables at epsilon 0.5 and a sweep
/// over 0.00..0.10.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub corpus_seed: u64,
    pub variants: Vec<Preprocessing>,
    pub runs: usize,
    pub base_seed: u64,
    pub epsilon_table: f64,
    pub epsilon_sweep: Vec<f64>,
    pub attack_iterations: usize,
    /// Explicit PGD step; when absent, epsilon / 10.
    pub attack_step: Option<f64>,
    pub n_adversarial: usize,
    pub apply_defense_at_inference: bool,
    /// Attack each variant's own model; when false, adversarial audio is
    /// generated once per run against the baseline model.
    pub attack_per_model: bool,
    pub wilcoxon_critical: f64,
    pub combo_lpf_first: bool,
    pub word_insertion_penalty: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_train: 800,
            n_test: 100,
            corpus_seed: 1,
            variants: Preprocessing::ALL.to_vec(),
            runs: 5,
            base_seed: 1,
            epsilon_table: 0.5,
            epsilon_sweep: (0..=10).map(|i| i as f64 / 100.0).collect(),
            attack_iterations: 200,
            attack_step: None,
            n_adversarial: 100,
            apply_defense_at_inference: true,
            attack_per_model: true,
            wilcoxon_critical: 17.0,
            combo_lpf_first: true,
            word_insertion_penalty: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("need at least one variant".into()));
        }
        if self.epsilon_table < 0.0 || self.epsilon_sweep.iter().any(|&e| e < 0.0) {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        Ok(())
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            combo_lpf_first: self.combo_lpf_first,
            word_insertion_penalty: self.word_insertion_penalty,
        }
    }

    /// Epsilon grid covered by the report: 0, the sweep, and the table point.
    pub fn epsilon_grid(&self) -> Vec<f64> {
        let mut grid = vec![0.0];
        grid.extend_from_slice(&self.epsilon_sweep);
        grid.push(self.epsilon_table);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        grid
    }

    fn attack_config(&self, epsilon: f64, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon,
            step_size: self.attack_step.unwrap_or(epsilon / 10.0),
            iterations: self.attack_iterations,
            seed,
        }
    }

    /// Stable hash of the canonical TOML serialization.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Evaluation side: against the true transcript or the attack target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Clean,
    Adversarial,
}

impl Condition {
    pub fn tag(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Adversarial => "adversarial",
        }
    }
}

/// One machine-readable report row: pooled WER of a run at one grid point.
#[derive(Debug, Clone)]
pub struct ReportCell {
    pub variant: Preprocessing,
    pub condition: Condition,
    pub epsilon: f64,
    pub run: usize,
    pub wer: f64,
}

/// Aggregated cell: mean and standard deviation over runs, with the
/// rank-sum W against the baseline where defined.
#[derive(Debug, Clone)]
pub struct SummaryCell {
    pub variant: Preprocessing,
    pub condition: Condition,
    pub epsilon: f64,
    pub mean: f64,
    pub std: f64,
    pub w_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<ReportCell>,
    pub summary: Vec<SummaryCell>,
}

/// Pooled word-error aggregation over utterances.
#[derive(Debug, Clone, Copy, Default)]
pub struct WerPool {
    pub errors: usize,
    pub reference_words: usize,
}

impl WerPool {
    pub fn add<S: AsRef<str>>(&mut self, reference: &[S], hypothesis: &[S]) -> Result<()> {
        let b = wer(reference, hypothesis)?;
        self.errors += b.substitutions + b.deletions + b.insertions;
        self.reference_words += b.reference_length;
        Ok(())
    }

    pub fn wer(&self) -> f64 {
        100.0 * self.errors as f64 / self.reference_words as f64
    }
}

/// Stand-alone outcome of one variant at one seed.
pub struct VariantOutcome {
    pub recognizer: Recognizer,
    pub clean_wer: f64,
    pub adversarial_wer: f64,
}

/// Trains one variant, evaluates the clean test set, and attacks
/// `n_adversarial` test utterances at the table epsilon.
pub fn run_variant(
    variant: Preprocessing,
    corpus: &Corpus,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<VariantOutcome> {
    let outcome = train_recognizer_opts(corpus, variant, seed, cfg.train_options())?;
    let recognizer = outcome.recognizer;
    let apply_defense = cfg.apply_defense_at_inference;

    let clean_results: Vec<(usize, Vec<String>)> = corpus
        .test
        .par_iter()
        .enumerate()
        .map(|(i, utt)| Ok((i, recognizer.decode(&utt.audio, apply_defense)?)))
        .collect::<Result<_>>()?;
    let mut clean = WerPool::default();
    for (i, decoded) in &clean_results {
        clean.add(&corpus.test[*i].transcript, decoded)?;
    }

    let targets = sample_targets(corpus, &recognizer, seed)?;
    let n = cfg.n_adversarial.min(corpus.test.len());
    let adv_results: Vec<(Vec<String>, Vec<String>)> = corpus.test[..n]
        .par_iter()
        .zip(&targets[..n])
        .enumerate()
        .map(|(i, (utt, target))| {
            let attack_cfg = cfg.attack_config(cfg.epsilon_table, derive_seed(seed, i as u64));
            let result = pgd_attack(&recognizer, &utt.audio, target, &attack_cfg)?;
            let decoded = recognizer.decode(&result.adversarial, apply_defense)?;
            Ok((target.clone(), decoded))
        })
        .collect::<Result<_>>()?;
    let mut adv = WerPool::default();
    for (target, decoded) in &adv_results {
        adv.add(target, decoded)?;
    }

    Ok(VariantOutcome { recognizer, clean_wer: clean.wer(), adversarial_wer: adv.wer() })
}

/// Per-utterance targets for a run, deterministic and feasible for the
/// utterance's frame count (so forced alignment always succeeds).
fn sample_targets(corpus: &Corpus, recognizer: &Recognizer, seed: u64) -> Result<Vec<Vec<String>>> {
    let frontend_cfg = *recognizer.frontend().config();
    corpus
        .test
        .iter()
        .enumerate()
        .map(|(i, utt)| {
            let frames = frontend_cfg.frame_count(utt.audio.len()).ok_or_else(|| {
                Error::InvalidArgument(format!("utterance {} too short", utt.id))
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA77A ^ i as u64));
            for _ in 0..200 {
                let target = sample_target(&mut rng, &utt.transcript);
                if recognizer.graph.min_frames(target.len()) <= frames {
                    return Ok(target);
                }
            }
            Err(Error::InfeasibleAlignment(format!("no feasible target for {}", utt.id)))
        })
        .collect()
}

/// Runs the full grid: variants x runs x epsilon points, two conditions
/// per cell. Rows at epsilon = 0 decode the original test audio.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let corpus = build_corpus(cfg.n_train, cfg.n_test, cfg.corpus_seed)?;
    let grid = cfg.epsilon_grid();
    let n = cfg.n_adversarial.min(corpus.test.len());
    let seeds: Vec<u64> = (0..cfg.runs).map(|r| derive_seed(cfg.base_seed, r as u64)).collect();
    if !cfg.attack_per_model && !cfg.variants.contains(&Preprocessing::Baseline) {
        return Err(Error::InvalidArgument(
            "attack_per_model = false requires the baseline variant".into(),
        ));
    }

    let mut cells: Vec<ReportCell> = Vec::new();
    for (run, &run_seed) in seeds.iter().enumerate() {
        let recognizers: Vec<(Preprocessing, Recognizer)> = cfg
            .variants
            .par_iter()
            .map(|&v| {
                train_recognizer_opts(&corpus, v, run_seed, cfg.train_options())
                    .map(|o| (v, o.recognizer))
            })
            .collect::<Result<_>>()?;
        let baseline_idx = cfg.variants.iter().position(|&v| v == Preprocessing::Baseline);
        let targets = sample_targets(&corpus, &recognizers[0].1, run_seed)?;

        for &epsilon in &grid {
            for (vi, (variant, recognizer)) in recognizers.iter().enumerate() {
                let attacker = if cfg.attack_per_model {
                    recognizer
                } else {
                    &recognizers[baseline_idx.expect("validated above")].1
                };
                let decoded: Vec<Vec<String>> = if epsilon == 0.0 {
                    corpus.test[..n]
                        .par_iter()
                        .map(|utt| recognizer.decode(&utt.audio, cfg.apply_defense_at_inference))
                        .collect::<Result<_>>()?
                } else {
                    corpus.test[..n]
                        .par_iter()
                        .zip(&targets[..n])
                        .enumerate()
                        .map(|(i, (utt, target))| {
                            let attack_cfg =
                                cfg.attack_config(epsilon, derive_seed(run_seed, i as u64));
                            let result = pgd_attack(attacker, &utt.audio, target, &attack_cfg)?;
                            recognizer.decode(&result.adversarial, cfg.apply_defense_at_inference)
                        })
                        .collect::<Result<_>>()?
                };
                let mut clean_pool = WerPool::default();
                let mut adv_pool = WerPool::default();
                for (i, hyp) in decoded.iter().enumerate() {
                    clean_pool.add(&corpus.test[i].transcript, hyp)?;
                    adv_pool.add(&targets[i], hyp)?;
                }
                cells.push(ReportCell {
                    variant: *variant,
                    condition: Condition::Clean,
                    epsilon,
                    run,
                    wer: clean_pool.wer(),
                });
                cells.push(ReportCell {
                    variant: *variant,
                    condition: Condition::Adversarial,
                    epsilon,
                    run,
                    wer: adv_pool.wer(),
                });
                let _ = vi;
            }
        }
    }

    let summary = summarize(cfg, &cells)?;
    Ok(ExperimentReport { config: cfg.clone(), seeds, cells, summary })
}

fn summarize(cfg: &ExperimentConfig, cells: &[ReportCell]) -> Result<Vec<SummaryCell>> {
    let grid = cfg.epsilon_grid();
    let has_baseline = cfg.variants.contains(&Preprocessing::Baseline);
    let mut summary = Vec::new();
    let values = |variant: Preprocessing, condition: Condition, epsilon: f64| -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = cells
            .iter()
            .filter(|c| c.variant == variant && c.condition == condition && c.epsilon == epsilon)
            .map(|c| (c.run, c.wer))
            .collect();
        v.sort_by_key(|&(run, _)| run);
        v.into_iter().map(|(_, w)| w).collect()
    };
    for &variant in &cfg.variants {
        for condition in [Condition::Clean, Condition::Adversarial] {
            for &epsilon in &grid {
                let vals = values(variant, condition, epsilon);
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let std = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (vals.len() - 1) as f64)
                        .sqrt()
                } else {
                    0.0
                };
                let w_vs_baseline = if has_baseline && variant != Preprocessing::Baseline {
                    let base = values(Preprocessing::Baseline, condition, epsilon);
                    Some(wilcoxon_w_with_critical(&vals, &base, cfg.wilcoxon_critical)?.w)
                } else {
                    None
                };
                summary.push(SummaryCell { variant, condition, epsilon, mean, std, w_vs_baseline });
            }
        }
    }
    Ok(summary)
}

/// Writes the three report artifacts into `dir`:
/// `report.txt` (human-readable tables), `cells.csv` (one row per
/// variant/condition/epsilon/run), and `sweep.csv` (per-point mean and
/// standard deviation).
pub fn emit_report<P: AsRef<Path>>(report: &ExperimentReport, dir: P) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut cells_csv = String::from("variant,condition,epsilon,run,wer\n");
    for c in &report.cells {
        cells_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.variant.tag(),
            c.condition.tag(),
            c.epsilon,
            c.run,
            c.wer
        ));
    }
    fs::write(dir.join("cells.csv"), cells_csv)?;

    let mut sweep_csv = String::from("variant,condition,epsilon,mean_wer,std_wer\n");
    for s in &report.summary {
        sweep_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.variant.tag(),
            s.condition.tag(),
            s.epsilon,
            s.mean,
            s.std
        ));
    }
    fs::write(dir.join("sweep.csv"), sweep_csv)?;

    fs::write(dir.join("report.txt"), render_tables(report))?;
    Ok(())
}

fn render_tables(report: &ExperimentReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    out.push_str(&format!(
        "config_hash: {:016x}\nseeds: {}\ncorpus: {} train / {} test (seed {})\n\
         adversarial samples per run: {}\ndefense at inference: {}\n\n",
        cfg.hash(),
        report.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
        cfg.n_train,
        cfg.n_test,
        cfg.corpus_seed,
        cfg.n_adversarial,
        cfg.apply_defense_at_inference,
    ));
    let fmt_w = |w: Option<f64>| w.map_or("-".to_string(), |v| format!("{v:.1}"));
    let find = |variant, condition, epsilon| {
        report
            .summary
            .iter()
            .find(|s| s.variant == variant && s.condition == condition && s.epsilon == epsilon)
    };
    out.push_str(&format!(
        "Average WER over {} runs (adversarial at epsilon = {}):\n",
        cfg.runs, cfg.epsilon_table
    ));
    out.push_str(&format!(
        "{:<10} | {:>9} {:>9} {:>6} | {:>9} {:>9} {:>6}\n",
        "model", "clean WER", "std dev", "W", "adv WER", "std dev", "W"
    ));
    for &variant in &cfg.variants {
        let clean = find(variant, Condition::Clean, 0.0);
        let adv = find(variant, Condition::Adversarial, cfg.epsilon_table);
        if let (Some(c), Some(a)) = (clean, adv) {
            out.push_str(&format!(
                "{:<10} | {:>8.2}% {:>9.4} {:>6} | {:>8.2}% {:>9.4} {:>6}\n",
                variant.tag(),
                c.mean,
                c.std,
                fmt_w(c.w_vs_baseline),
                a.mean,
                a.std,
                fmt_w(a.w_vs_baseline),
            ));
        }
    }
    out.push_str("\nSweep (mean WER per epsilon):\n");
    out.push_str(&format!("{:<10} {:<12} {:>8} {:>10} {:>10}\n", "model", "condition", "eps", "mean", "std"));
    for s in &report.summary {
        out.push_str(&format!(
            "{:<10} {:<12} {:>8} {:>10.3} {:>10.4}\n",
            s.variant.tag(),
            s.condition.tag(),
            s.epsilon,
            s.mean,
            s.std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_toml_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.runs, 5);
        assert_eq!(cfg.epsilon_table, 0.5);
        assert_eq!(cfg.epsilon_sweep.len(), 11);
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.n_train, cfg.n_train);
        assert_eq!(back.variants, cfg.variants);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "n_train = 40\nn_test = 10\nvariants = [\"baseline\", \"lpf\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.n_train, 40);
        assert_eq!(cfg.variants, vec![Preprocessing::Baseline, Preprocessing::Lpf]);
        assert_eq!(cfg.runs, 5);
    }

    #[test]
    fn bad_toml_rejected() {
        assert!(ExperimentConfig::from_toml("runs = 0").is_err());
        assert!(ExperimentConfig::from_toml("nonsense_field = 3").is_err());
    }

    #[test]
    fn epsilon_grid_is_sorted_and_deduped() {
        let mut cfg = ExperimentConfig::default();
        cfg.epsilon_sweep = vec![0.0, 0.05, 0.1];
        cfg.epsilon_table = 0.05;
        assert_eq!(cfg.epsilon_grid(), vec![0.0, 0.05, 0.1]);
    }

    #[test]
    fn wer_pool_aggregates() {
        let mut pool = WerPool::default();
        pool.add(&["one", "two"], &["one", "two"]).unwrap();
        pool.add(&["three"], &["four"]).unwrap();
        assert_eq!(pool.errors, 1);
        assert_eq!(pool.reference_words, 3);
        assert!((pool.wer() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn config_hash_changes_with_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.n_adversarial = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
