//! Precomputed transition matrices `Pr[M(w) = w']`.
//!
//! TSV layout: `#`-prefixed metadata lines, then one
//! `row_word<TAB>column_word<TAB>probability` line per non-zero entry.
//! Probabilities are written in shortest round-trip form.

use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;

use super::WordMechanism;
use crate::embedding::{EmbeddingStore, WordId};
use crate::error::{Error, Result};
use crate::samplers::{streams, RngStream};

const ROW_SUM_TOLERANCE: f64 = 1e-9;
const TSV_MAGIC: &str = "# dxtext transition-matrix v1";

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
    sample_count: Option<u64>,
    store_fingerprint: Option<u64>,
}

impl TransitionMatrix {
    /// Square row-stochastic matrix. `sample_count` is the number of
    /// draws per row when the rows are empirical, `None` when exact.
    pub fn from_rows(rows: Vec<Vec<f64>>, sample_count: Option<u64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::param("transition matrix has no rows"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::param(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::param(format!("row {i} sums to {sum}")));
            }
        }
        if sample_count == Some(0) {
            return Err(Error::param("sample count must be positive"));
        }
        Ok(TransitionMatrix {
            rows,
            sample_count,
            store_fingerprint: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, w: WordId) -> &[f64] {
        &self.rows[w.index()]
    }

    #[inline]
    pub fn prob(&self, w: WordId, out: WordId) -> f64 {
        self.rows[w.index()][out.index()]
    }

    pub fn column(&self, out: WordId) -> Vec<f64> {
        self.rows.iter().map(|r| r[out.index()]).collect()
    }

    pub fn sample_count(&self) -> Option<u64> {
        self.sample_count
    }

    /// True when the matrix is dimensioned for `store` and, if it was built
    /// from one, built from this store.
    pub fn fits(&self, store: &EmbeddingStore) -> bool {
        self.len() == store.len()
            && self
                .store_fingerprint
                .is_none_or(|f| f == store.fingerprint())
    }

    pub fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        if self.fits(store) {
            Ok(())
        } else {
            Err(Error::StoreMismatch("transition matrix"))
        }
    }

    pub fn bind_to(mut self, store: &EmbeddingStore) -> Result<Self> {
        if self.len() != store.len() {
            return Err(Error::StoreMismatch("transition matrix"));
        }
        self.store_fingerprint = Some(store.fingerprint());
        Ok(self)
    }

    /// Writes the TSV form. `config` is echoed as a metadata line.
    pub fn write_tsv<W: Write>(
        &self,
        store: &EmbeddingStore,
        mut out: W,
        config: Option<&serde_json::Value>,
    ) -> Result<()> {
        self.check_store(store)?;
        writeln!(out, "{TSV_MAGIC}")?;
        match self.sample_count {
            Some(n) => writeln!(out, "# samples_per_word {n}")?,
            None => writeln!(out, "# samples_per_word exact")?,
        }
        if let Some(c) = config {
            writeln!(out, "# config {}", serde_json::to_string(c)?)?;
        }
        for w in store.ids() {
            for u in store.ids() {
                let p = self.prob(w, u);
                if p > 0.0 {
                    writeln!(out, "{}\t{}\t{}", store.word(w), store.word(u), p)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(store: &EmbeddingStore, reader: R) -> Result<Self> {
        let n = store.len();
        let mut rows = vec![vec![0.0; n]; n];
        let mut sample_count = None;
        let mut saw_magic = false;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if let Some(meta) = line.strip_prefix('#') {
                if line == TSV_MAGIC {
                    saw_magic = true;
                } else if let Some(v) = meta.trim().strip_prefix("samples_per_word ") {
                    sample_count = match v.trim() {
                        "exact" => None,
                        s => Some(s.parse().map_err(|_| Error::Malformed {
                            line: lineno,
                            message: format!("bad sample count {s:?}"),
                        })?),
                    };
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Malformed {
                    line: lineno,
                    message: "expected row, column, probability".into(),
                });
            }
            let w = store.lookup(fields[0])?;
            let u = store.lookup(fields[1])?;
            let p: f64 = fields[2].parse().map_err(|_| Error::Malformed {
                line: lineno,
                message: format!("bad probability {:?}", fields[2]),
            })?;
            rows[w.index()][u.index()] = p;
        }
        if !saw_magic {
            return Err(Error::Malformed {
                line: 1,
                message: "missing transition-matrix header".into(),
            });
        }
        TransitionMatrix::from_rows(rows, sample_count)?.bind_to(store)
    }
}

/// Empirical transition matrix: row `w` holds the output frequencies of
/// `samples_per_word` independent runs of `mechanism` on `w`. Row `w` uses
/// its own stream forked from `rng`, so the result does not depend on the
/// number of threads.
pub fn build_transition_matrix<M: WordMechanism + ?Sized>(
    store: &EmbeddingStore,
    rng: &RngStream,
    mechanism: &M,
    samples_per_word: u64,
) -> Result<TransitionMatrix> {
    if samples_per_word == 0 {
        return Err(Error::param("samples_per_word must be at least 1"));
    }
    let n = store.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = WordId(i as u32);
            let mut r = rng.fork2(streams::MATRIX, i as u64);
            let mut counts = vec![0u64; n];
            for _ in 0..samples_per_word {
                counts[mechanism.perturb(&mut r, w)?.index()] += 1;
            }
            Ok(counts
                .into_iter()
                .map(|c| c as f64 / samples_per_word as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    TransitionMatrix::from_rows(rows, Some(samples_per_word))?.bind_to(store)
}

/// Categorical draw from row `w`.
pub fn sample_from_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    matrix: &TransitionMatrix,
    w: WordId,
) -> Result<WordId> {
    if w.index() >= matrix.len() {
        return Err(Error::InvalidWordId(w.0));
    }
    let row = matrix.row(w);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return Ok(WordId(j as u32));
            }
        }
    }
    Ok(WordId(last as u32))
}

/// Runs a mechanism by sampling a precomputed matrix.
#[derive(Clone, Copy, Debug)]
pub struct MatrixMechanism<'a>(pub &'a TransitionMatrix);

impl WordMechanism for MatrixMechanism<'_> {
    fn perturb(&self, rng: &mut RngStream, w: WordId) -> Result<WordId> {
        sample_from_matrix(rng, self.0, w)
    }
}
