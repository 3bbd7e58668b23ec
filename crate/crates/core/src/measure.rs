//! Cylinder weights on code space: Bernoulli product measures and stationary
//! Markov measures, which are the Gibbs measures of potentials depending on
//! the first two symbols, `f(i) = ln W[i1][i2]`.
//!
//! All weights are returned as natural logarithms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::code_space::{LevelEnumeration, Word};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BernoulliSpec {
    p: Vec<f64>,
    #[serde(skip)]
    log_p: Vec<f64>,
}

impl BernoulliSpec {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidMeasure("need at least two probabilities".into()));
        }
        if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!("probabilities must be strictly positive: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("probabilities sum to {sum}, not 1")));
        }
        let log_p = p.iter().map(|x| x.ln()).collect();
        Ok(Self { p, log_p })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }
}

/// Stationary Markov measure with transitions `P[i][j] = W[i][j] h[j] / (λ h[i])`
/// and start distribution `π[i] = ν[i] h[i]`, where `λ` is the Perron root of
/// `W` with right and left Perron vectors `h`, `ν` normalized by `ν·h = 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovGibbsSpec {
    m: usize,
    weights: Vec<f64>,
    perron_root: f64,
    right: Vec<f64>,
    left: Vec<f64>,
    stationary: Vec<f64>,
    transition: Vec<f64>,
    #[serde(skip)]
    log_stationary: Vec<f64>,
    #[serde(skip)]
    log_transition: Vec<f64>,
}

impl MarkovGibbsSpec {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m < 2 {
            return Err(Error::InvalidMeasure("weight matrix must be at least 2×2".into()));
        }
        let mut weights = Vec::with_capacity(m * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::InvalidMeasure("weight matrix must be square".into()));
            }
            weights.extend_from_slice(row);
        }
        if weights.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidMeasure("weight matrix entries must be strictly positive".into()));
        }
        let (perron_root, right) = perron(m, &weights, false);
        let (_, mut left) = perron(m, &weights, true);
        let dot: f64 = left.iter().zip(&right).map(|(a, b)| a * b).sum();
        for x in &mut left {
            *x /= dot;
        }
        let mut stationary: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a * b).collect();
        let total: f64 = stationary.iter().sum();
        for x in &mut stationary {
            *x /= total;
        }
        let mut transition = vec![0.0; m * m];
        for i in 0..m {
            let row = &mut transition[i * m..(i + 1) * m];
            for j in 0..m {
                row[j] = weights[i * m + j] * right[j] / (perron_root * right[i]);
            }
            let s: f64 = row.iter().sum();
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        Ok(Self {
            m,
            log_stationary: stationary.iter().map(|x| x.ln()).collect(),
            log_transition: transition.iter().map(|x| x.ln()).collect(),
            weights,
            perron_root,
            right,
            left,
            stationary,
            transition,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.m
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.m + j]
    }

    pub fn perron_root(&self) -> f64 {
        self.perron_root
    }

    /// Pressure of the potential `ln W[i1][i2]`.
    pub fn potential_pressure(&self) -> f64 {
        self.perron_root.ln()
    }

    pub fn right_eigenvector(&self) -> &[f64] {
        &self.right
    }

    pub fn left_eigenvector(&self) -> &[f64] {
        &self.left
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.transition[i * self.m + j]
    }

    /// Constant `a` of the Gibbs inequality
    /// `a⁻¹ ≤ μ(C_{i|k}) / exp(-k P(f) + Σ_{j<k} f(σʲ i)) ≤ a`.
    ///
    /// The ratio equals `ν[i1] h[ik] λ / W[ik][i(k+1)]`; `a` bounds it over all
    /// index triples.
    pub fn gibbs_constant(&self) -> f64 {
        let mut worst = 0.0_f64;
        for x in 0..self.m {
            for y in 0..self.m {
                for z in 0..self.m {
                    let r = self.left[x] * self.right[y] * self.perron_root / self.weight(y, z);
                    worst = worst.max(r.ln().abs());
                }
            }
        }
        worst.exp()
    }

    /// Smallest `b ≥ 1` with `b⁻¹ μ(C_i) μ(C_j) ≤ μ(C_ij) ≤ b μ(C_i) μ(C_j)`.
    ///
    /// For non-empty words the ratio is exactly `W[a][c] / (λ h[a] ν[c])`
    /// with `a` the last symbol of `i` and `c` the first of `j`, so the
    /// extreme entries of that matrix give the constant.
    pub fn quasimultiplicativity_constant(&self) -> f64 {
        let mut worst = 0.0_f64;
        for a in 0..self.m {
            for c in 0..self.m {
                let r = self.weight(a, c) / (self.perron_root * self.right[a] * self.left[c]);
                worst = worst.max(r.ln().abs());
            }
        }
        worst.exp().max(1.0)
    }

    fn log_step(&self, prev: Option<u16>, next: u16) -> f64 {
        match prev {
            None => self.log_stationary[usize::from(next)],
            Some(p) => self.log_transition[usize::from(p) * self.m + usize::from(next)],
        }
    }

    fn probabilities(&self, prev: Option<u16>) -> &[f64] {
        match prev {
            None => &self.stationary,
            Some(p) => {
                let p = usize::from(p);
                &self.transition[p * self.m..(p + 1) * self.m]
            }
        }
    }
}

/// Perron root and positive eigenvector (sum-normalized) of a positive
/// matrix by power iteration.
fn perron(m: usize, w: &[f64], transpose: bool) -> (f64, Vec<f64>) {
    let at = |i: usize, j: usize| if transpose { w[j * m + i] } else { w[i * m + j] };
    let mut v = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        for i in 0..m {
            next[i] = (0..m).map(|j| at(i, j) * v[j]).sum();
        }
        let s: f64 = next.iter().sum();
        lambda = s / v.iter().sum::<f64>();
        let mut change = 0.0_f64;
        for i in 0..m {
            let x = next[i] / s;
            change = change.max(((x - v[i]) / x).abs());
            v[i] = x;
        }
        if change < 1e-15 {
            break;
        }
    }
    (lambda, v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolicMeasure {
    Bernoulli(BernoulliSpec),
    Markov(MarkovGibbsSpec),
}

impl SymbolicMeasure {
    pub fn bernoulli(p: Vec<f64>) -> Result<Self> {
        Ok(Self::Bernoulli(BernoulliSpec::new(p)?))
    }

    pub fn markov(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::Markov(MarkovGibbsSpec::new(rows)?))
    }

    pub fn alphabet(&self) -> usize {
        match self {
            Self::Bernoulli(b) => b.p.len(),
            Self::Markov(g) => g.m,
        }
    }

    pub fn is_bernoulli(&self) -> bool {
        matches!(self, Self::Bernoulli(_))
    }

    /// `ln μ(C_{w j}) - ln μ(C_w)` where `prev` is the last symbol of `w`.
    #[inline]
    pub fn log_step(&self, prev: Option<u16>, next: u16) -> f64 {
        match self {
            Self::Bernoulli(b) => b.log_p[usize::from(next)],
            Self::Markov(g) => g.log_step(prev, next),
        }
    }

    /// Conditional law of the next symbol given the previous one.
    #[inline]
    pub fn next_probabilities(&self, prev: Option<u16>) -> &[f64] {
        match self {
            Self::Bernoulli(b) => &b.p,
            Self::Markov(g) => g.probabilities(prev),
        }
    }

    pub fn log_weight_of(&self, indices: &[u16]) -> f64 {
        let mut prev = None;
        let mut acc = 0.0;
        for &i in indices {
            acc += self.log_step(prev, i);
            prev = Some(i);
        }
        acc
    }

    /// `ln μ(C_w)`.
    pub fn cylinder_weight(&self, w: &Word) -> Result<f64> {
        if w.alphabet() != self.alphabet() {
            return Err(Error::AlphabetMismatch {
                expected: self.alphabet(),
                found: w.alphabet(),
            });
        }
        Ok(self.log_weight_of(w.indices()))
    }

    /// Every level-`k` cylinder with its log weight.
    pub fn level_weights(&self, k: usize, cap: u64) -> Result<impl Iterator<Item = (Word, f64)> + '_> {
        let e = LevelEnumeration::new(self.alphabet(), k, cap)?;
        Ok(e.iter().map(move |w| {
            let lw = self.log_weight_of(w.indices());
            (w, lw)
        }))
    }

    /// Quasi-multiplicativity constant `b`; exactly 1 for Bernoulli measures.
    pub fn quasimultiplicativity_constant(&self) -> f64 {
        match self {
            Self::Bernoulli(_) => 1.0,
            Self::Markov(g) => g.quasimultiplicativity_constant(),
        }
    }

    /// `(c_-, c_+)` with `c_-^k ≤ μ(C_i) ≤ c_+^k` for every word of length `k ≥ 1`.
    pub fn decay_bounds(&self) -> (f64, f64) {
        match self {
            Self::Bernoulli(b) => (
                b.p.iter().copied().fold(f64::INFINITY, f64::min),
                b.p.iter().copied().fold(0.0, f64::max),
            ),
            Self::Markov(g) => {
                let all = g.stationary.iter().chain(&g.transition).copied();
                let lo = all.clone().fold(f64::INFINITY, f64::min);
                let hi = all.fold(0.0, f64::max);
                (lo, hi)
            }
        }
    }

    /// Draws the next symbol, optionally conditioned to differ from `exclude`.
    pub fn draw<R: Rng + ?Sized>(&self, prev: Option<u16>, exclude: Option<u16>, rng: &mut R) -> u16 {
        let p = self.next_probabilities(prev);
        let removed = exclude.map_or(0.0, |e| p[usize::from(e)]);
        let u: f64 = rng.gen::<f64>() * (1.0 - removed);
        let mut acc = 0.0;
        let mut last = 0u16;
        for (i, &pi) in p.iter().enumerate() {
            let i = i as u16;
            if Some(i) == exclude {
                continue;
            }
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    pub fn sample_stream(&self, seed: u64) -> SymbolStream<'_> {
        SymbolStream {
            measure: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
            realized: Vec::new(),
        }
    }
}

/// A lazily realized infinite sequence distributed according to a measure.
#[derive(Clone, Debug)]
pub struct SymbolStream<'a> {
    measure: &'a SymbolicMeasure,
    rng: ChaCha8Rng,
    realized: Vec<u16>,
}

impl<'a> SymbolStream<'a> {
    /// The first `k` symbols, realizing more as needed.
    pub fn prefix(&mut self, k: usize) -> &[u16] {
        while self.realized.len() < k {
            let prev = self.realized.last().copied();
            let s = self.measure.draw(prev, None, &mut self.rng);
            self.realized.push(s);
        }
        &self.realized[..k]
    }

    pub fn word(&mut self, k: usize) -> Word {
        let m = self.measure.alphabet();
        let idx = self.prefix(k).to_vec();
        Word::from_indices(m, idx).expect("stream symbols are within the alphabet")
    }

    pub fn realized_len(&self) -> usize {
        self.realized.len()
    }
}
