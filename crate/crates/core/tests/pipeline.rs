mod common;

use common::*;
use dxtext::amplification::{subsample_batch, AmplifierConfig};
use dxtext::pipeline::{run_amplifiers, run_protocol, CorpusSource};
use dxtext::samplers::streams;
use dxtext::{MechanismConfig, Message, ProtocolConfig, RngStream, WordId};
use rand::Rng;

fn msg(user: u64, slot: u32, w: u32) -> Message {
    Message {
        user: Some(user),
        slot,
        payload: WordId(w),
    }
}

#[test]
fn subsample_then_threshold_hand_trace() {
    let batch: Vec<Message> = [0, 0, 0, 1, 1, 2, 2, 2, 2, 3]
        .iter()
        .enumerate()
        .map(|(i, &w)| msg(i as u64, 0, w))
        .collect();
    let root = RngStream::new(11, 0);

    // replay the coin flips of the sub-sampling stage
    let mut coins = root.fork2(streams::AMPLIFY, 0);
    let kept: Vec<Message> = batch
        .iter()
        .copied()
        .filter(|_| coins.random::<f64>() < 0.5)
        .collect();
    let mut per_word = [0usize; 4];
    for m in &kept {
        per_word[m.payload.index()] += 1;
    }
    let want: Vec<Message> = kept
        .into_iter()
        .filter(|m| per_word[m.payload.index()] >= 2)
        .collect();

    let got = run_amplifiers(
        &root,
        batch,
        &[
            AmplifierConfig::Subsample { q: 0.5 },
            AmplifierConfig::Kthreshold { k: 2 },
        ],
    )
    .unwrap();
    assert_eq!(got, want);
}

#[test]
fn subsample_q_tiny_empties_small_batches() {
    let batch: Vec<Message> = (0..10).map(|i| msg(i, 0, 0)).collect();
    let mut rng = RngStream::new(12, 0);
    let trials = 100_000;
    let empty = (0..trials)
        .filter(|_| {
            subsample_batch(&mut rng, batch.clone(), 0.01)
                .unwrap()
                .is_empty()
        })
        .count();
    let want = 0.99f64.powi(10);
    assert!((empty as f64 / trials as f64 - want).abs() < 0.01);
}

fn zipf_config(eps: f64, seed: u64, amplifiers: Vec<AmplifierConfig>) -> ProtocolConfig {
    ProtocolConfig {
        n_users: 500,
        m_per_user: 4,
        mechanism: MechanismConfig::Baseline { epsilon: eps },
        amplifiers,
        seed,
        corpus: CorpusSource::Zipf { s: 1.1 },
    }
}

#[test]
fn subsample_scales_mass() {
    let mut rng = RngStream::new(13, 0);
    let store = random_store(&mut rng, 50, 5, 1.0);
    let q = 0.3;
    let r = run_protocol(
        &store,
        &zipf_config(2.0, 1, vec![AmplifierConfig::Subsample { q }]),
    )
    .unwrap();
    let n = r.true_total as f64;
    let sd = (n * q * (1.0 - q)).sqrt();
    assert!((r.total as f64 - q * n).abs() < 3.0 * sd);
    let amp = r.metadata.amplified_epsilon.unwrap();
    assert!((amp.value - 0.6).abs() < 1e-12 && amp.approximate);
}

#[test]
fn utility_tv_matches_l1_when_totals_match() {
    let mut rng = RngStream::new(14, 0);
    let store = random_store(&mut rng, 50, 5, 1.0);
    let r = run_protocol(&store, &zipf_config(1.0, 2, vec![AmplifierConfig::Shuffle])).unwrap();
    assert_eq!(r.total, r.true_total);
    assert!((r.utility_tv - r.utility_l1 / (2.0 * r.total as f64)).abs() < 1e-15);
    assert_eq!(r.total, r.histogram.iter().map(|c| c.count).sum::<u64>());
}

#[test]
fn l1_falls_with_epsilon() {
    let mut rng = RngStream::new(15, 0);
    let store = random_store(&mut rng, 50, 5, 1.0);
    let mut wins = 0;
    for seed in 0..20 {
        let lo = run_protocol(&store, &zipf_config(0.5, seed, vec![])).unwrap();
        let hi = run_protocol(&store, &zipf_config(4.0, seed, vec![])).unwrap();
        if hi.utility_l1 < lo.utility_l1 {
            wins += 1;
        }
    }
    assert!(sign_test_p(20, wins) < 0.05, "{wins}/20");
}

#[test]
fn shuffle_delinks_users() {
    // mutual information between original position and output position
    let n = 4;
    let trials = 200_000;
    let mut rng = RngStream::new(16, 0);
    let mut joint = [[0u64; 4]; 4];
    for _ in 0..trials {
        let batch: Vec<Message> = (0..n).map(|i| msg(i, 0, i as u32)).collect();
        let out = dxtext::amplification::shuffle_batch(&mut rng, batch);
        assert!(out.iter().all(|m| m.user.is_none()));
        for (pos, m) in out.iter().enumerate() {
            joint[m.payload.index()][pos] += 1;
        }
    }
    let total = (trials * n) as f64;
    let mut mi = 0.0;
    for row in &joint {
        for &c in row {
            let p = c as f64 / total;
            if p > 0.0 {
                mi += p * (p / (0.25 * 0.25)).ln();
            }
        }
    }
    assert!(mi < 0.01, "MI {mi}");
}
