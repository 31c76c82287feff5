//! Quick pipeline probe: trains a small baseline, times one attack, and
//! prints clean/adversarial WER. Development aid, not part of the suites.

use std::time::Instant;

use slowguard_core::harness::WerPool;
use slowguard_core::hmm::Preprocessing;
use slowguard_core::{build_corpus, derive_seed, pgd_attack, sample_target, AttackConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(120);
    let n_test: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let variant = args
        .get(3)
        .map(|s| Preprocessing::parse(s).unwrap())
        .unwrap_or(Preprocessing::Baseline);
    let n_attacks: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10);
    let epsilon: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.5);

    let t0 = Instant::now();
    let corpus = build_corpus(n_train, n_test, 11).unwrap();
    println!("corpus {n_train}/{n_test}: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let outcome =
        slowguard_core::hmm::train_recognizer_opts(&corpus, variant, 1, Default::default())
            .unwrap();
    let rec = outcome.recognizer;
    println!(
        "train {}: {:.1}s  align scores {:?}",
        variant.tag(),
        t0.elapsed().as_secs_f64(),
        outcome.align_log_scores.iter().map(|s| *s as i64).collect::<Vec<_>>()
    );

    let apply_defense = variant != Preprocessing::Baseline;
    let t0 = Instant::now();
    let mut pool = WerPool::default();
    for utt in &corpus.test {
        let hyp = rec.decode(&utt.audio, apply_defense).unwrap();
        pool.add(&utt.transcript, &hyp).unwrap();
    }
    println!("clean WER {:.2}%  ({:.1}s)", pool.wer(), t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let mut adv_pool = WerPool::default();
    let mut succeeded = 0usize;
    for (i, utt) in corpus.test.iter().take(n_attacks).enumerate() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(7, i as u64));
        let mut cfg = AttackConfig::for_epsilon(epsilon, derive_seed(7, 1000 + i as u64));
        if let Some(iters) = std::env::args().nth(6).and_then(|s| s.parse().ok()) {
            cfg.iterations = iters;
        }
        if let Some(step) = std::env::args().nth(7).and_then(|s| s.parse().ok()) {
            cfg.step_size = step;
        }
        let result = loop {
            let target = sample_target(&mut rng, &utt.transcript);
            match pgd_attack(&rec, &utt.audio, &target, &cfg) {
                Ok(r) => break r,
                Err(slowguard_core::Error::InfeasibleAlignment(_)) => continue,
                Err(e) => panic!("{e}"),
            }
        };
        let target = result.target_transcript.clone();
        let decoded = rec.decode(&result.adversarial, apply_defense).unwrap();
        let b = slowguard_core::wer(&target, &decoded).unwrap();
        if b.wer <= 25.0 {
            succeeded += 1;
        }
        adv_pool.add(&target, &decoded).unwrap();
        {
            let tr = &result.loss_trace;
            let pick = |k: usize| tr.get(k).copied().unwrap_or(f64::NAN);
            println!(
                "  attack {i}: trace [{:.0} {:.0} {:.0} {:.0} {:.0} {:.1}] decode {:?} target {:?}",
                pick(0), pick(tr.len()/8), pick(tr.len()/4), pick(tr.len()/2), pick(3*tr.len()/4),
                tr.last().copied().unwrap_or(f64::NAN),
                decoded, target
            );
        }
    }
    println!(
        "adversarial target-WER {:.2}% ({} attacks, {} at <=25%, {:.2}s/attack)",
        adv_pool.wer(),
        n_attacks,
        succeeded,
        t0.elapsed().as_secs_f64() / n_attacks as f64
    );
}
