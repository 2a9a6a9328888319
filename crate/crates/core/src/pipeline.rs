//! Localize-Amplify-Curate protocol simulation.
//!
//! `n_users` users each submit `m_per_user` words. Every word passes
//! through the configured randomizer (the local phase), the resulting
//! messages through the amplifier chain in order, and the survivors are
//! aggregated by the curator into a word-frequency histogram. Utility is
//! measured against the histogram of the same users' unperturbed words.
//!
//! Randomness is split into named streams: corpus draws and local
//! randomization fork one stream per user, each amplifier stage gets its
//! own. Reports are therefore identical for any thread count.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplification::{amplified_epsilon, AmplifiedEpsilon, AmplifierConfig, Message};
use crate::analysis::sample_categorical;
use crate::embedding::{EmbeddingStore, WordId};
use crate::error::{Error, Result};
use crate::randomizers::{MechanismConfig, Randomizer, WordMechanism};
use crate::samplers::{streams, RngStream};
use crate::SCHEMA_VERSION;

fn default_zipf_s() -> f64 {
    1.1
}

/// Where user words come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Each word drawn i.i.d. from a Zipf law over word ids (id 0 is the
    /// most frequent).
    Zipf {
        #[serde(default = "default_zipf_s")]
        s: f64,
    },
    /// Whitespace-separated tokens; submission `(i, j)` takes token
    /// `(i * m + j) mod len`.
    File { path: PathBuf },
    /// Inline tokens, consumed like `File`.
    Words { words: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_users: usize,
    pub m_per_user: usize,
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub amplifiers: Vec<AmplifierConfig>,
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusSource,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.m_per_user == 0 {
            return Err(Error::param("n_users and m_per_user must be positive"));
        }
        self.mechanism.validate()?;
        for a in &self.amplifiers {
            a.validate()?;
        }
        if let CorpusSource::Zipf { s } = self.corpus {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param(format!(
                    "Zipf exponent must be non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WordCount {
    pub word: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageCount {
    pub stage: String,
    pub messages: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub schema_version: u32,
    pub config: ProtocolConfig,
    pub stages: Vec<StageCount>,
    /// Fraction of local-phase messages equal to their input word.
    pub unchanged_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplified_epsilon: Option<AmplifiedEpsilon>,
}

/// Curator output. Histograms list non-zero counts in word-id order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CuratorReport {
    pub histogram: Vec<WordCount>,
    pub true_histogram: Vec<WordCount>,
    pub total: u64,
    pub true_total: u64,
    pub utility_l1: f64,
    pub utility_tv: f64,
    pub metadata: ReportMetadata,
    #[serde(skip)]
    counts: Vec<u64>,
    #[serde(skip)]
    true_counts: Vec<u64>,
}

impl CuratorReport {
    pub fn count(&self, w: WordId) -> u64 {
        self.counts[w.index()]
    }

    pub fn true_count(&self, w: WordId) -> u64 {
        self.true_counts[w.index()]
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Normalized Zipf weights `1 / rank^s` over `n` ranks.
pub fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Each user's unperturbed words.
pub fn resolve_corpus(
    store: &EmbeddingStore,
    config: &ProtocolConfig,
    rng: &RngStream,
) -> Result<Vec<Vec<WordId>>> {
    let (n, m) = (config.n_users, config.m_per_user);
    let tokens: Vec<WordId> = match &config.corpus {
        CorpusSource::Zipf { s } => {
            let weights = zipf_weights(store.len(), *s);
            return Ok((0..n)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng.fork2(streams::CORPUS, i as u64);
                    (0..m)
                        .map(|_| sample_categorical(&mut r, &weights))
                        .collect()
                })
                .collect());
        }
        CorpusSource::File { path } => fs::read_to_string(path)?
            .split_whitespace()
            .map(|t| store.lookup(t))
            .collect::<Result<_>>()?,
        CorpusSource::Words { words } => words
            .iter()
            .map(|t| store.lookup(t))
            .collect::<Result<_>>()?,
    };
    if tokens.is_empty() {
        return Err(Error::param("corpus has no tokens"));
    }
    Ok((0..n)
        .map(|i| (0..m).map(|j| tokens[(i * m + j) % tokens.len()]).collect())
        .collect())
}

/// Randomizes every user's words with a per-user stream.
pub fn run_local_phase<M: WordMechanism + ?Sized>(
    rng: &RngStream,
    mechanism: &M,
    corpus: &[Vec<WordId>],
) -> Result<Vec<Message>> {
    let per_user: Vec<Vec<Message>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, words)| {
            let mut r = rng.fork2(streams::LOCAL, i as u64);
            words
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    Ok(Message {
                        user: Some(i as u64),
                        slot: j as u32,
                        payload: mechanism.perturb(&mut r, w)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

/// Applies amplifier stages left to right.
pub fn run_amplifiers(
    rng: &RngStream,
    messages: Vec<Message>,
    amplifiers: &[AmplifierConfig],
) -> Result<Vec<Message>> {
    amplifiers
        .iter()
        .enumerate()
        .try_fold(messages, |batch, (k, stage)| {
            stage.validate()?;
            stage.apply(&mut rng.fork2(streams::AMPLIFY, k as u64), batch)
        })
}

/// Exact payload histogram indexed by word id.
pub fn run_curator(messages: &[Message], vocab_size: usize) -> Vec<u64> {
    let mut h = vec![0u64; vocab_size];
    for m in messages {
        h[m.payload.index()] += 1;
    }
    debug_assert_eq!(h.iter().sum::<u64>(), messages.len() as u64);
    h
}

fn word_counts(store: &EmbeddingStore, counts: &[u64]) -> Vec<WordCount> {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| WordCount {
            word: store.word(WordId(i as u32)).to_owned(),
            count: c,
        })
        .collect()
}

fn stage_name(a: &AmplifierConfig) -> String {
    match a {
        AmplifierConfig::Shuffle => "shuffle".into(),
        AmplifierConfig::Subsample { q } => format!("subsample(q={q})"),
        AmplifierConfig::Kthreshold { k } => format!("kthreshold(k={k})"),
    }
}

pub fn run_protocol(store: &EmbeddingStore, config: &ProtocolConfig) -> Result<CuratorReport> {
    run_protocol_with_messages(store, config).map(|(report, _)| report)
}

/// Like [`run_protocol`], also returning the amplified messages the
/// curator saw.
pub fn run_protocol_with_messages(
    store: &EmbeddingStore,
    config: &ProtocolConfig,
) -> Result<(CuratorReport, Vec<Message>)> {
    config.validate()?;
    let randomizer = Randomizer::new(store, &config.mechanism)?;
    let mut resolved = config.clone();
    resolved.mechanism = randomizer.config().clone();
    execute(store, &resolved, &randomizer)
}

/// Runs the protocol with an explicit local mechanism. `config.mechanism`
/// is only used for the report and epsilon accounting.
pub fn run_protocol_with<M: WordMechanism + ?Sized>(
    store: &EmbeddingStore,
    config: &ProtocolConfig,
    mechanism: &M,
) -> Result<CuratorReport> {
    execute(store, config, mechanism).map(|(report, _)| report)
}

fn execute<M: WordMechanism + ?Sized>(
    store: &EmbeddingStore,
    config: &ProtocolConfig,
    mechanism: &M,
) -> Result<(CuratorReport, Vec<Message>)> {
    config.validate()?;
    let root = RngStream::new(config.seed, 0);
    let corpus = resolve_corpus(store, config, &root)?;
    let local = run_local_phase(&root, mechanism, &corpus)?;

    let inputs: Vec<WordId> = corpus.iter().flatten().copied().collect();
    let unchanged = inputs
        .iter()
        .zip(&local)
        .filter(|(w, m)| **w == m.payload)
        .count();
    let unchanged_fraction = unchanged as f64 / inputs.len() as f64;

    let mut stages = vec![StageCount {
        stage: "local".into(),
        messages: local.len(),
    }];
    let mut batch = local;
    for (k, stage) in config.amplifiers.iter().enumerate() {
        batch = stage.apply(&mut root.fork2(streams::AMPLIFY, k as u64), batch)?;
        stages.push(StageCount {
            stage: stage_name(stage),
            messages: batch.len(),
        });
    }

    let counts = run_curator(&batch, store.len());
    let mut true_counts = vec![0u64; store.len()];
    for w in &inputs {
        true_counts[w.index()] += 1;
    }
    let total: u64 = counts.iter().sum();
    let true_total: u64 = true_counts.iter().sum();
    let utility_l1: f64 = counts
        .iter()
        .zip(&true_counts)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    let utility_tv = if total == 0 {
        1.0
    } else if total == true_total {
        utility_l1 / (2.0 * total as f64)
    } else {
        0.5 * counts
            .iter()
            .zip(&true_counts)
            .map(|(&a, &b)| (a as f64 / total as f64 - b as f64 / true_total as f64).abs())
            .sum::<f64>()
    };

    let mut amplified = None;
    for a in &config.amplifiers {
        if let AmplifierConfig::Subsample { q } = a {
            let base = amplified.map_or(config.mechanism.epsilon(), |e: AmplifiedEpsilon| e.value);
            amplified = Some(amplified_epsilon(base, *q)?);
        }
    }

    let report = CuratorReport {
        histogram: word_counts(store, &counts),
        true_histogram: word_counts(store, &true_counts),
        total,
        true_total,
        utility_l1,
        utility_tv,
        metadata: ReportMetadata {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            stages,
            unchanged_fraction,
            amplified_epsilon: amplified,
        },
        counts,
        true_counts,
    };
    Ok((report, batch))
}
