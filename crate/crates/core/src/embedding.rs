//! Word-embedding metric space.
//!
//! An [`EmbeddingStore`] maps a fixed vocabulary onto `d`-dimensional real
//! vectors and answers distance and nearest-neighbour queries under the raw
//! Euclidean metric. Search is brute force and exact; every tie is broken
//! toward the lowest [`WordId`].
//!
//! Two on-disk formats are understood:
//!
//! - text: an optional `"<count> <dim>"` header line followed by one
//!   `word c_1 ... c_d` record per line;
//! - binary cache: `DXEMBED\0` magic, a little-endian `u32` version, `u64`
//!   word count, `u32` dimension, then every word as `u32` byte length plus
//!   UTF-8 bytes, then all components as little-endian `f64` in row order.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a vocabulary word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordId(pub u32);

impl WordId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for WordId {
    fn from(i: usize) -> Self {
        WordId(i as u32)
    }
}

/// Result of a k-nearest-neighbour query, sorted by `(distance, id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pub origin: WordId,
    pub entries: Vec<(WordId, f64)>,
}

impl NeighborList {
    pub fn ids(&self) -> impl Iterator<Item = WordId> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Reject files whose dimension differs from this.
    pub expected_dim: Option<usize>,
    /// Scale every vector to unit length. Off by default; the mechanisms
    /// are defined over raw Euclidean distance.
    pub normalize: bool,
}

const CACHE_MAGIC: &[u8; 8] = b"DXEMBED\0";
const CACHE_VERSION: u32 = 1;

/// Immutable vocabulary with its embedding vectors.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    words: Vec<String>,
    index: HashMap<String, WordId>,
    vectors: Vec<f64>,
    dim: usize,
    fingerprint: u64,
}

/// Loads an embedding file (text or binary cache, detected by magic bytes).
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingStore> {
    EmbeddingStore::load(
        path,
        LoadOptions {
            expected_dim,
            normalize: false,
        },
    )
}

impl EmbeddingStore {
    /// Builds a store from `(word, vector)` rows. Row order defines the ids.
    pub fn from_rows<S: Into<String>>(
        rows: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut builder = Builder::new(None);
        for (i, (word, v)) in rows.into_iter().enumerate() {
            builder.push(i + 1, word.into(), v)?;
        }
        builder.finish(false)
    }

    pub fn load(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(CACHE_MAGIC) {
            let store = Self::read_cache(&mut &bytes[..])?;
            if let Some(d) = opts.expected_dim {
                if d != store.dim {
                    return Err(Error::DimensionMismatch {
                        line: 0,
                        expected: d,
                        found: store.dim,
                    });
                }
            }
            return store.finish_options(opts.normalize);
        }
        Self::parse_text(BufReader::new(&bytes[..]), opts)
    }

    /// Parses the whitespace-separated text format.
    pub fn parse_text<R: BufRead>(reader: R, opts: LoadOptions) -> Result<Self> {
        let mut builder = Builder::new(opts.expected_dim);
        let mut header: Option<(usize, usize)> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let mut tokens = line.split_whitespace();
            let Some(word) = tokens.next() else {
                continue;
            };
            let rest: Vec<&str> = tokens.collect();
            if lineno == 1 && rest.len() == 1 {
                if let (Ok(count), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    if builder.expected_dim.is_some_and(|d| d != dim) {
                        return Err(Error::DimensionMismatch {
                            line: 1,
                            expected: builder.expected_dim.unwrap_or(dim),
                            found: dim,
                        });
                    }
                    builder.expected_dim = Some(dim);
                    header = Some((count, dim));
                    continue;
                }
            }
            let mut v = Vec::with_capacity(rest.len());
            for tok in rest {
                let x: f64 = tok.parse().map_err(|_| Error::Malformed {
                    line: lineno,
                    message: format!("non-numeric component {tok:?}"),
                })?;
                v.push(x);
            }
            builder.push(lineno, word.to_owned(), v)?;
        }
        if let Some((count, _)) = header {
            if count != builder.words.len() {
                return Err(Error::Malformed {
                    line: 1,
                    message: format!(
                        "header declares {count} words, file has {}",
                        builder.words.len()
                    ),
                });
            }
        }
        builder.finish(opts.normalize)
    }

    fn finish_options(self, normalize: bool) -> Result<Self> {
        if !normalize {
            return Ok(self);
        }
        let rows: Vec<(String, Vec<f64>)> = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                (
                    w.clone(),
                    self.vectors[i * self.dim..(i + 1) * self.dim].to_vec(),
                )
            })
            .collect();
        let mut builder = Builder::new(Some(self.dim));
        for (i, (w, v)) in rows.into_iter().enumerate() {
            builder.push(i + 1, w, v)?;
        }
        builder.finish(true)
    }

    /// Writes the text format with a `"<count> <dim>"` header.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(out, "{word}")?;
            for x in self.row(i) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        for w in &self.words {
            out.write_all(&(w.len() as u32).to_le_bytes())?;
            out.write_all(w.as_bytes())?;
        }
        for x in &self.vectors {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(input: &mut R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| Error::BadCache(format!("truncated: {e}")))?;
            Ok(buf)
        }
        let magic: [u8; 8] = take(input)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::BadCache("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(input)?);
        if version != CACHE_VERSION {
            return Err(Error::BadCache(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(take(input)?) as usize;
        let dim = u32::from_le_bytes(take(input)?) as usize;
        let mut words = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(input)?) as usize;
            let mut buf = vec![0u8; len];
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::BadCache(format!("truncated: {e}")))?;
            words.push(
                String::from_utf8(buf).map_err(|_| Error::BadCache("word is not UTF-8".into()))?,
            );
        }
        let mut builder = Builder::new(Some(dim));
        for (i, w) in words.into_iter().enumerate() {
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f64::from_le_bytes(take(input)?));
            }
            builder.push(i + 1, w, v)?;
        }
        builder.finish(false)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Always false; a store holds at least one word.
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = WordId> {
        (0..self.len() as u32).map(WordId)
    }

    /// Content hash of words and vectors, used to pair derived artifacts
    /// (profiles, matrices) with the store they were computed from.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn check(&self, w: WordId) -> Result<WordId> {
        if w.index() < self.len() {
            Ok(w)
        } else {
            Err(Error::InvalidWordId(w.0))
        }
    }

    pub fn word(&self, w: WordId) -> &str {
        &self.words[w.index()]
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn lookup(&self, word: &str) -> Result<WordId> {
        self.id(word)
            .ok_or_else(|| Error::UnknownWord(word.to_owned()))
    }

    #[inline]
    pub fn vector(&self, w: WordId) -> &[f64] {
        self.row(w.index())
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, w: WordId, u: WordId) -> Result<f64> {
        self.check(w)?;
        self.check(u)?;
        Ok(self.dist(w, u))
    }

    /// Distance between two ids already known to be valid.
    #[inline]
    pub fn dist(&self, w: WordId, u: WordId) -> f64 {
        sq_dist(self.vector(w), self.vector(u)).sqrt()
    }

    #[inline]
    pub fn dist_to_point(&self, w: WordId, point: &[f64]) -> f64 {
        sq_dist(self.vector(w), point).sqrt()
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::param(format!(
                "point has {} components, store dimension is {}",
                point.len(),
                self.dim
            )));
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("point has a non-finite component"));
        }
        Ok(())
    }

    /// Vocabulary word closest to `point`.
    pub fn nearest_word(&self, point: &[f64]) -> Result<WordId> {
        self.check_point(point)?;
        Ok(self.nearest_unchecked(point))
    }

    pub(crate) fn nearest_unchecked(&self, point: &[f64]) -> WordId {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, row) in self.vectors.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(row, point);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        WordId(best as u32)
    }

    /// Closest word to `point` restricted to `candidates`. Ties go to the
    /// lowest id regardless of candidate order.
    pub fn nearest_among(&self, point: &[f64], candidates: &[WordId]) -> Option<WordId> {
        let mut best: Option<(f64, WordId)> = None;
        for &c in candidates {
            let d = sq_dist(self.vector(c), point);
            match best {
                Some((bd, bid)) if d > bd || (d == bd && c >= bid) => {}
                _ => best = Some((d, c)),
            }
        }
        best.map(|(_, id)| id)
    }

    /// The `k` words closest to `w`, sorted by distance then id.
    pub fn k_nearest(&self, w: WordId, k: usize, include_self: bool) -> Result<NeighborList> {
        self.check(w)?;
        let available = if include_self {
            self.len()
        } else {
            self.len() - 1
        };
        if k == 0 || k > available {
            return Err(Error::param(format!("k = {k} outside [1, {available}]")));
        }
        let mut all: Vec<(WordId, f64)> = self
            .ids()
            .filter(|&u| include_self || u != w)
            .map(|u| (u, self.dist(w, u)))
            .collect();
        let cmp = |a: &(WordId, f64), b: &(WordId, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        Ok(NeighborList {
            origin: w,
            entries: all,
        })
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for w in self.ids() {
            for u in self.ids().skip(w.index() + 1) {
                best = best.max(self.dist(w, u));
            }
        }
        best
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Builder {
    expected_dim: Option<usize>,
    words: Vec<String>,
    index: HashMap<String, WordId>,
    vectors: Vec<f64>,
}

impl Builder {
    fn new(expected_dim: Option<usize>) -> Self {
        Builder {
            expected_dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        }
    }

    fn push(&mut self, line: usize, word: String, v: Vec<f64>) -> Result<()> {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::Malformed {
                line,
                message: format!("invalid word {word:?}"),
            });
        }
        let dim = *self.expected_dim.get_or_insert(v.len());
        if v.len() != dim || dim == 0 {
            return Err(Error::DimensionMismatch {
                line,
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { line });
        }
        if self.index.contains_key(&word) {
            return Err(Error::DuplicateWord { line, word });
        }
        self.index
            .insert(word.clone(), WordId(self.words.len() as u32));
        self.words.push(word);
        self.vectors.extend(v);
        Ok(())
    }

    fn finish(mut self, normalize: bool) -> Result<EmbeddingStore> {
        if self.words.is_empty() {
            return Err(Error::EmptyFile);
        }
        if self.words.len() > u32::MAX as usize {
            return Err(Error::param("vocabulary too large"));
        }
        let dim = self.expected_dim.unwrap_or(0);
        if normalize {
            for row in self.vectors.chunks_exact_mut(dim) {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
        let fingerprint = fingerprint(&self.words, &self.vectors);
        Ok(EmbeddingStore {
            words: self.words,
            index: self.index,
            vectors: self.vectors,
            dim,
            fingerprint,
        })
    }
}

// FNV-1a, stable across platforms and compiler versions.
fn fingerprint(words: &[String], vectors: &[f64]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for w in words {
        eat(w.as_bytes());
        eat(&[0xff]);
    }
    for x in vectors {
        eat(&x.to_bits().to_le_bytes());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EmbeddingStore {
        EmbeddingStore::parse_text("a 0 0\nb 3 4\nc 0 1\n".as_bytes(), LoadOptions::default())
            .unwrap()
    }

    #[test]
    fn parses_three_word_file() {
        let s = toy();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.lookup("b").unwrap(), WordId(1));
        assert_eq!(s.vector(WordId(1)), &[3.0, 4.0]);
    }

    #[test]
    fn rejects_duplicate_word() {
        let err = EmbeddingStore::parse_text("a 0 0\na 1 1\n".as_bytes(), LoadOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateWord { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_short_row() {
        let err = EmbeddingStore::parse_text("a 0 0\nb 1.0\n".as_bytes(), LoadOptions::default())
            .unwrap_err();
        assert!(
            matches!(
                err,
                Error::DimensionMismatch {
                    line: 2,
                    expected: 2,
                    found: 1
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn rejects_bad_tokens_and_empty_input() {
        let opts = LoadOptions::default();
        assert!(matches!(
            EmbeddingStore::parse_text("a 0 x\n".as_bytes(), opts),
            Err(Error::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            EmbeddingStore::parse_text("a 0 NaN\n".as_bytes(), opts),
            Err(Error::NonFinite { line: 1 })
        ));
        assert!(matches!(
            EmbeddingStore::parse_text("a 0 inf\n".as_bytes(), opts),
            Err(Error::NonFinite { line: 1 })
        ));
        assert!(matches!(
            EmbeddingStore::parse_text("".as_bytes(), opts),
            Err(Error::EmptyFile)
        ));
        assert!(matches!(
            EmbeddingStore::parse_text("\n\n".as_bytes(), opts),
            Err(Error::EmptyFile)
        ));
    }

    #[test]
    fn header_is_validated() {
        let opts = LoadOptions::default();
        let s = EmbeddingStore::parse_text("2 2\na 0 0\nb 1 1\n".as_bytes(), opts).unwrap();
        assert_eq!(s.len(), 2);
        assert!(EmbeddingStore::parse_text("3 2\na 0 0\nb 1 1\n".as_bytes(), opts).is_err());
        assert!(EmbeddingStore::parse_text("2 3\na 0 0\nb 1 1\n".as_bytes(), opts).is_err());
        let want3 = LoadOptions {
            expected_dim: Some(3),
            normalize: false,
        };
        assert!(matches!(
            EmbeddingStore::parse_text("a 0 0\n".as_bytes(), want3),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distances() {
        let s = toy();
        let (a, b, c) = (WordId(0), WordId(1), WordId(2));
        assert_eq!(s.distance(a, b).unwrap(), 5.0);
        assert_eq!(s.distance(b, a).unwrap(), 5.0);
        assert_eq!(s.distance(a, a).unwrap(), 0.0);
        assert_eq!(s.distance(a, c).unwrap(), 1.0);
        assert!(matches!(
            s.distance(a, WordId(3)),
            Err(Error::InvalidWordId(3))
        ));
    }

    #[test]
    fn nearest_word_cases() {
        let s = toy();
        assert_eq!(s.nearest_word(&[3.0, 4.0]).unwrap(), WordId(1));
        // equidistant between a and c
        assert_eq!(s.nearest_word(&[0.0, 0.5]).unwrap(), WordId(0));
        // brute force: |(2.9,3.9)-b|^2 = 0.02, -a = 23.62, -c = 16.82
        assert_eq!(s.nearest_word(&[2.9, 3.9]).unwrap(), WordId(1));
        assert!(s.nearest_word(&[1.0]).is_err());
        assert!(s.nearest_word(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn nearest_among_breaks_ties_low() {
        let s = toy();
        let (a, c) = (WordId(0), WordId(2));
        assert_eq!(s.nearest_among(&[0.0, 0.5], &[c, a]), Some(a));
        assert_eq!(s.nearest_among(&[0.0, 0.5], &[]), None);
    }

    #[test]
    fn k_nearest_cases() {
        let s = toy();
        let b = WordId(1);
        // d(b,a) = 5, d(b,c) = sqrt(18)
        let one = s.k_nearest(b, 1, false).unwrap();
        assert_eq!(one.entries, vec![(WordId(2), 18f64.sqrt())]);
        let all = s.k_nearest(b, 2, false).unwrap();
        assert_eq!(all.ids().collect::<Vec<_>>(), vec![WordId(2), WordId(0)]);
        let with_self = s.k_nearest(b, 3, true).unwrap();
        assert_eq!(with_self.entries[0], (b, 0.0));
        assert!(s.k_nearest(b, 0, false).is_err());
        assert!(s.k_nearest(b, 3, false).is_err());
    }

    #[test]
    fn cache_round_trip_is_byte_stable() {
        let s = toy();
        let mut buf = Vec::new();
        s.write_cache(&mut buf).unwrap();
        let back = EmbeddingStore::read_cache(&mut &buf[..]).unwrap();
        assert_eq!(back.words(), s.words());
        assert_eq!(back.fingerprint(), s.fingerprint());
        let mut again = Vec::new();
        back.write_cache(&mut again).unwrap();
        assert_eq!(buf, again);
        buf[8] = 9;
        assert!(matches!(
            EmbeddingStore::read_cache(&mut &buf[..]),
            Err(Error::BadCache(_))
        ));
    }

    #[test]
    fn normalize_flag() {
        let opts = LoadOptions {
            expected_dim: None,
            normalize: true,
        };
        let s = EmbeddingStore::parse_text("a 0 0\nb 3 4\n".as_bytes(), opts).unwrap();
        assert_eq!(s.vector(WordId(0)), &[0.0, 0.0]);
        assert_eq!(s.vector(WordId(1)), &[0.6, 0.8]);
    }
}
