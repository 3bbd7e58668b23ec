//! Words over the alphabet `{1, …, m}`, curtailment, common prefixes and
//! exhaustive enumeration of a level.
//!
//! Symbols are stored zero-based; [`Word::symbols`] and the dotted text form
//! use the one-based labels.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Word {
    alphabet: usize,
    indices: Vec<u16>,
}

impl Word {
    /// A word from one-based symbols.
    pub fn new(alphabet: usize, symbols: &[usize]) -> Result<Self> {
        check_alphabet(alphabet)?;
        let mut indices = Vec::with_capacity(symbols.len());
        for (pos, &s) in symbols.iter().enumerate() {
            if s == 0 || s > alphabet {
                return Err(Error::OutOfRange { index: pos, len: alphabet });
            }
            indices.push((s - 1) as u16);
        }
        Ok(Self { alphabet, indices })
    }

    /// A word from zero-based symbol indices.
    pub fn from_indices(alphabet: usize, indices: Vec<u16>) -> Result<Self> {
        check_alphabet(alphabet)?;
        if let Some(pos) = indices.iter().position(|&i| usize::from(i) >= alphabet) {
            return Err(Error::OutOfRange { index: pos, len: alphabet });
        }
        Ok(Self { alphabet, indices })
    }

    pub fn empty(alphabet: usize) -> Self {
        Self {
            alphabet,
            indices: Vec::new(),
        }
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn symbols(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|&i| usize::from(i) + 1)
    }

    /// The first `k` symbols.
    pub fn curtail(&self, k: usize) -> Result<Word> {
        if k > self.len() {
            return Err(Error::OutOfRange { index: k, len: self.len() });
        }
        Ok(Self {
            alphabet: self.alphabet,
            indices: self.indices[..k].to_vec(),
        })
    }

    /// The longest word that is a curtailment of both.
    pub fn common_prefix(&self, other: &Word) -> Result<Word> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch {
                expected: self.alphabet,
                found: other.alphabet,
            });
        }
        let k = common_prefix_len(&self.indices, &other.indices);
        self.curtail(k)
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        self.len() <= other.len() && other.indices[..self.len()] == self.indices[..]
    }

    pub fn concat(&self, other: &Word) -> Result<Word> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch {
                expected: self.alphabet,
                found: other.alphabet,
            });
        }
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        Ok(Self {
            alphabet: self.alphabet,
            indices,
        })
    }

    pub fn to_dotted(&self) -> String {
        self.to_string()
    }

    pub fn parse_dotted(alphabet: usize, text: &str) -> Result<Word> {
        if text.is_empty() {
            return Ok(Self::empty(alphabet));
        }
        let symbols = text
            .split('.')
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad symbol {t:?} in word {text:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(alphabet, &symbols)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.symbols().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

fn check_alphabet(m: usize) -> Result<()> {
    if !(2..=usize::from(u16::MAX)).contains(&m) {
        return Err(Error::InvalidArgument(format!("alphabet size must be at least 2, got {m}")));
    }
    Ok(())
}

pub fn common_prefix_len(a: &[u16], b: &[u16]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// `2^{-|a ∧ b|}` for realized prefixes that differ somewhere.
pub fn metric_distance(a: &Word, b: &Word) -> Result<f64> {
    let k = common_prefix_len(a.indices(), b.indices());
    if k == a.len().min(b.len()) {
        return Err(Error::Indistinguishable { len: k });
    }
    Ok((-(k as f64)).exp2())
}

/// All `m^k` words of length `k` in lexicographic order, addressable by rank.
#[derive(Clone, Debug)]
pub struct LevelEnumeration {
    alphabet: usize,
    level: usize,
    count: u64,
}

impl LevelEnumeration {
    pub fn new(alphabet: usize, level: usize, cap: u64) -> Result<Self> {
        check_alphabet(alphabet)?;
        let count_f = (alphabet as f64).powi(level as i32);
        if count_f > cap as f64 {
            return Err(Error::CapExceeded { count: count_f, cap });
        }
        let count = (alphabet as u64).pow(level as u32);
        if count > cap {
            return Err(Error::CapExceeded { count: count_f, cap });
        }
        Ok(Self {
            alphabet,
            level,
            count,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn unrank(&self, mut rank: u64) -> Word {
        debug_assert!(rank < self.count);
        let m = self.alphabet as u64;
        let mut indices = vec![0u16; self.level];
        for slot in indices.iter_mut().rev() {
            *slot = (rank % m) as u16;
            rank /= m;
        }
        Word {
            alphabet: self.alphabet,
            indices,
        }
    }

    pub fn rank(&self, w: &Word) -> Result<u64> {
        if w.alphabet != self.alphabet {
            return Err(Error::AlphabetMismatch {
                expected: self.alphabet,
                found: w.alphabet,
            });
        }
        if w.len() != self.level {
            return Err(Error::OutOfRange {
                index: w.len(),
                len: self.level,
            });
        }
        Ok(w
            .indices
            .iter()
            .fold(0u64, |acc, &i| acc * self.alphabet as u64 + u64::from(i)))
    }

    pub fn iter(&self) -> LevelIter {
        self.range(0..self.count)
    }

    pub fn range(&self, range: Range<u64>) -> LevelIter {
        let end = range.end.min(self.count);
        let start = range.start.min(end);
        LevelIter {
            alphabet: self.alphabet,
            current: (start < end).then(|| self.unrank(start).indices),
            remaining: end - start,
        }
    }

    /// Splits the rank space into `parts` contiguous, disjoint ranges.
    pub fn partitions(&self, parts: usize) -> Vec<Range<u64>> {
        let parts = parts.max(1) as u64;
        let base = self.count / parts;
        let extra = self.count % parts;
        let mut out = Vec::with_capacity(parts as usize);
        let mut start = 0;
        for p in 0..parts {
            let len = base + u64::from(p < extra);
            out.push(start..start + len);
            start += len;
        }
        out
    }
}

pub fn enumerate_level(alphabet: usize, level: usize, cap: u64) -> Result<LevelIter> {
    Ok(LevelEnumeration::new(alphabet, level, cap)?.iter())
}

/// Odometer over a contiguous rank range.
#[derive(Clone, Debug)]
pub struct LevelIter {
    alphabet: usize,
    current: Option<Vec<u16>>,
    remaining: u64,
}

impl Iterator for LevelIter {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        if self.remaining == 0 {
            return None;
        }
        let cur = self.current.as_mut()?;
        let out = Word {
            alphabet: self.alphabet,
            indices: cur.clone(),
        };
        self.remaining -= 1;
        for slot in cur.iter_mut().rev() {
            if usize::from(*slot) + 1 < self.alphabet {
                *slot += 1;
                break;
            }
            *slot = 0;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

impl ExactSizeIterator for LevelIter {}
