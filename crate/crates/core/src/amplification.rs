//! Post-randomization amplifiers.
//!
//! Stages operate on message structure only and never look inside a
//! payload beyond equality. Batches are exchanged as JSON lines:
//! `{"user": int|null, "slot": int, "word": string}`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, WordId};
use crate::error::{Error, Result};
use crate::samplers::fisher_yates;

/// One randomized submission. `user` is `None` once provenance has been
/// erased by the shuffler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub user: Option<u64>,
    pub slot: u32,
    pub payload: WordId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmplifierConfig {
    Shuffle,
    /// Keep each message independently with probability `q`.
    Subsample {
        q: f64,
    },
    /// Drop messages whose payload occurs fewer than `k` times.
    Kthreshold {
        k: usize,
    },
}

impl AmplifierConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AmplifierConfig::Shuffle => Ok(()),
            AmplifierConfig::Subsample { q } => check_q(q),
            AmplifierConfig::Kthreshold { k: 0 } => Err(Error::param("k-threshold needs k >= 1")),
            AmplifierConfig::Kthreshold { .. } => Ok(()),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, rng: &mut R, batch: Vec<Message>) -> Result<Vec<Message>> {
        match *self {
            AmplifierConfig::Shuffle => Ok(shuffle_batch(rng, batch)),
            AmplifierConfig::Subsample { q } => subsample_batch(rng, batch, q),
            AmplifierConfig::Kthreshold { k } => kthreshold_batch(batch, k),
        }
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "sampling fraction q must be in (0, 1], got {q}"
        )))
    }
}

/// Uniformly permutes the batch and clears every `user` field.
pub fn shuffle_batch<R: Rng + ?Sized>(rng: &mut R, mut batch: Vec<Message>) -> Vec<Message> {
    fisher_yates(rng, &mut batch);
    for m in &mut batch {
        m.user = None;
    }
    batch
}

/// Poisson sub-sampling at rate `q`; order of survivors is preserved.
pub fn subsample_batch<R: Rng + ?Sized>(
    rng: &mut R,
    batch: Vec<Message>,
    q: f64,
) -> Result<Vec<Message>> {
    check_q(q)?;
    if q == 1.0 {
        return Ok(batch);
    }
    Ok(batch
        .into_iter()
        .filter(|_| rng.random::<f64>() < q)
        .collect())
}

pub fn kthreshold_batch(batch: Vec<Message>, k: usize) -> Result<Vec<Message>> {
    if k == 0 {
        return Err(Error::param("k-threshold needs k >= 1"));
    }
    let mut counts: HashMap<WordId, usize> = HashMap::new();
    for m in &batch {
        *counts.entry(m.payload).or_default() += 1;
    }
    Ok(batch
        .into_iter()
        .filter(|m| counts[&m.payload] >= k)
        .collect())
}

/// Keeps `bit` with probability `e^eps / (1 + e^eps)`, flips it otherwise.
pub fn randomized_response<R: Rng + ?Sized>(rng: &mut R, bit: bool, epsilon: f64) -> Result<bool> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::param(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    // e^eps / (1 + e^eps) without overflow
    let keep = 1.0 / (1.0 + (-epsilon).exp());
    Ok(if rng.random::<f64>() < keep {
        bit
    } else {
        !bit
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmplifiedEpsilon {
    pub value: f64,
    /// Always true: `q * epsilon` is the first-order approximation, not a
    /// tight bound.
    pub approximate: bool,
}

/// Privacy parameter after Poisson sub-sampling at rate `q`, approximated
/// as `q * epsilon`.
pub fn amplified_epsilon(epsilon: f64, q: f64) -> Result<AmplifiedEpsilon> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    check_q(q)?;
    Ok(AmplifiedEpsilon {
        value: q * epsilon,
        approximate: true,
    })
}

#[derive(Serialize, Deserialize)]
struct MessageRecord<'a> {
    user: Option<u64>,
    slot: u32,
    #[serde(borrow)]
    word: std::borrow::Cow<'a, str>,
}

pub fn write_jsonl<W: Write>(store: &EmbeddingStore, batch: &[Message], mut out: W) -> Result<()> {
    for m in batch {
        let rec = MessageRecord {
            user: m.user,
            slot: m.slot,
            word: store.word(m.payload).into(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(store: &EmbeddingStore, reader: R) -> Result<Vec<Message>> {
    let mut batch = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MessageRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        batch.push(Message {
            user: rec.user,
            slot: rec.slot,
            payload: store.lookup(&rec.word)?,
        });
    }
    Ok(batch)
}
