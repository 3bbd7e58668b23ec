//! Attractor points `x^ω(i)` of affine systems and sampled point clouds.
//!
//! A point is the truncated series
//! `ω_{i1} + T_{i1} ω_{i1 i2} + T_{i1} T_{i2} ω_{i1 i2 i3} + ⋯`.
//! Per-map models use `ω_{i1..ik} = ω_{ik}`; the per-node model gives every
//! tree node its own translation, generated on demand from the master seed
//! and a hash of the node's word.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{alpha_bounds, log_phi, mul_into, mul_vec_into, Matrix, MAX_PRODUCT_DIM};
use crate::measure::SymbolicMeasure;
use crate::rng::{chacha, derive_seed, CounterRng, WordHasher};

/// Target for `α_+^K · diam(B)` when choosing the default depth.
pub const DEFAULT_TRUNCATION_TARGET: f64 = 1e-9;

/// Linear parts of an affine system together with a ball `B(0, ρ)` that each
/// map sends into itself for every admissible translation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineIfs {
    dim: usize,
    maps: Vec<Matrix>,
    alpha_plus: f64,
    bounding_radius: f64,
}

impl AffineIfs {
    /// `omega_max` bounds `|ω|` over the translation domain; `ρ` is fitted as
    /// `1.01 · omega_max / (1 - α_+)`.
    pub fn new(maps: Vec<Matrix>, omega_max: f64) -> Result<Self> {
        let (_, alpha_plus) = alpha_bounds(&maps)?;
        let rho = (1.01 * omega_max / (1.0 - alpha_plus)).max(1e-12);
        Self::with_radius(maps, rho, omega_max)
    }

    pub fn with_radius(maps: Vec<Matrix>, bounding_radius: f64, omega_max: f64) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 maps, got {}", maps.len())));
        }
        let dim = maps[0].dim();
        if dim > MAX_PRODUCT_DIM {
            return Err(Error::InvalidArgument(format!(
                "ambient dimension {dim} exceeds the supported maximum {MAX_PRODUCT_DIM}"
            )));
        }
        let (_, alpha_plus) = alpha_bounds(&maps)?;
        if !(omega_max >= 0.0 && omega_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid translation bound {omega_max}")));
        }
        if !(bounding_radius > 0.0) || alpha_plus * bounding_radius + omega_max > bounding_radius {
            return Err(Error::InvalidArgument(format!(
                "bounding radius {bounding_radius} too small: need α_+·ρ + ω_max ≤ ρ with α_+ = {alpha_plus}, ω_max = {omega_max}"
            )));
        }
        Ok(Self {
            dim,
            maps,
            alpha_plus,
            bounding_radius,
        })
    }

    /// Fits the bounding ball to a translation model.
    pub fn for_model(maps: Vec<Matrix>, model: &TranslationModel) -> Result<Self> {
        Self::new(maps, model.omega_max()?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn maps(&self) -> &[Matrix] {
        &self.maps
    }

    pub fn alphabet(&self) -> usize {
        self.maps.len()
    }

    pub fn alpha_plus(&self) -> f64 {
        self.alpha_plus
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// `α_+^K · diam(B)`.
    pub fn truncation_error(&self, depth: usize) -> f64 {
        self.alpha_plus.powi(depth as i32) * 2.0 * self.bounding_radius
    }

    /// Smallest `K` with `α_+^K · diam(B) < target`.
    pub fn depth_for(&self, target: f64) -> usize {
        let need = (target / (2.0 * self.bounding_radius)).ln() / self.alpha_plus.ln();
        let mut k = need.ceil().max(1.0) as usize;
        while self.truncation_error(k) >= target {
            k += 1;
        }
        k
    }

    pub fn default_depth(&self) -> usize {
        self.depth_for(DEFAULT_TRUNCATION_TARGET)
    }
}

/// Distribution of per-node translations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// Uniform on the axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Uniform on the ball `B(0, radius)`.
    Ball { radius: f64 },
}

impl Domain {
    fn validate(&self, dim: Option<usize>) -> Result<()> {
        match self {
            Domain::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(Error::InvalidArgument("box corners must have equal positive length".into()));
                }
                if let Some(n) = dim {
                    if lo.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            found: lo.len(),
                        });
                    }
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::InvalidArgument("box needs lo < hi in every coordinate".into()));
                }
            }
            Domain::Ball { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    fn sup_norm(&self) -> f64 {
        match self {
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            Domain::Ball { radius } => *radius,
        }
    }

    fn draw_into(&self, mut next: impl FnMut() -> f64, out: &mut [f64]) {
        match self {
            Domain::Box { lo, hi } => {
                for ((x, a), b) in out.iter_mut().zip(lo).zip(hi) {
                    *x = a + (b - a) * next();
                }
            }
            Domain::Ball { radius } => loop {
                let mut r2 = 0.0;
                for x in out.iter_mut() {
                    *x = 2.0 * next() - 1.0;
                    r2 += *x * *x;
                }
                if r2 <= 1.0 {
                    for x in out.iter_mut() {
                        *x *= radius;
                    }
                    return;
                }
            },
        }
    }
}

/// How translations are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranslationModel {
    /// Given `ω_1..ω_m`.
    FixedPerMap { vectors: Vec<Vec<f64>> },
    /// `ω_1..ω_m` uniform on `B(0, radius)`.
    RandomPerMap { radius: f64, seed: u64 },
    /// Independent draws from `domain` at every node.
    RandomPerNode { domain: Domain, seed: u64 },
}

impl TranslationModel {
    pub fn is_randomized(&self) -> bool {
        !matches!(self, Self::FixedPerMap { .. })
    }

    pub fn is_per_node(&self) -> bool {
        matches!(self, Self::RandomPerNode { .. })
    }

    /// Same family with a different seed; fixed models are returned unchanged.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Self::FixedPerMap { .. } => self.clone(),
            Self::RandomPerMap { radius, .. } => Self::RandomPerMap { radius: *radius, seed },
            Self::RandomPerNode { domain, .. } => Self::RandomPerNode {
                domain: domain.clone(),
                seed,
            },
        }
    }

    /// Upper bound on `|ω|` over every possible draw.
    pub fn omega_max(&self) -> Result<f64> {
        match self {
            Self::FixedPerMap { vectors } => Ok(vectors
                .iter()
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max)),
            Self::RandomPerMap { radius, .. } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidArgument(format!("translation radius must be positive, got {radius}")));
                }
                Ok(*radius)
            }
            Self::RandomPerNode { domain, .. } => {
                domain.validate(None)?;
                Ok(domain.sup_norm())
            }
        }
    }

    /// Draws whatever the model leaves random at the per-map level.
    pub fn realize(&self, ifs: &AffineIfs) -> Result<Translations> {
        let n = ifs.dim();
        let m = ifs.alphabet();
        match self {
            Self::FixedPerMap { vectors } => {
                if vectors.len() != m {
                    return Err(Error::AlphabetMismatch {
                        expected: m,
                        found: vectors.len(),
                    });
                }
                let mut flat = Vec::with_capacity(m * n);
                for v in vectors {
                    if v.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            found: v.len(),
                        });
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidArgument("translation entries must be finite".into()));
                    }
                    flat.extend_from_slice(v);
                }
                Ok(Translations::PerMap { dim: n, flat })
            }
            Self::RandomPerMap { radius, seed } => {
                let domain = Domain::Ball { radius: *radius };
                domain.validate(Some(n))?;
                let mut rng = chacha(*seed, 0);
                let mut flat = vec![0.0; m * n];
                for v in flat.chunks_exact_mut(n) {
                    domain.draw_into(|| rng.gen::<f64>(), v);
                }
                Ok(Translations::PerMap { dim: n, flat })
            }
            Self::RandomPerNode { domain, seed } => {
                domain.validate(Some(n))?;
                Ok(Translations::PerNode {
                    dim: n,
                    domain: domain.clone(),
                    seed: *seed,
                })
            }
        }
    }
}

/// A realized translation family.
#[derive(Clone, Debug, PartialEq)]
pub enum Translations {
    PerMap { dim: usize, flat: Vec<f64> },
    PerNode { dim: usize, domain: Domain, seed: u64 },
}

impl Translations {
    pub fn per_map(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            Self::PerMap { dim, flat } => Some(flat.chunks_exact(*dim).map(<[f64]>::to_vec).collect()),
            Self::PerNode { .. } => None,
        }
    }

    /// `ω` of the node whose word hashes to `node` and ends in `last`.
    #[inline]
    fn omega_into(&self, last: u16, node: &WordHasher, out: &mut [f64]) {
        match self {
            Self::PerMap { dim, flat } => {
                let i = usize::from(last) * dim;
                out.copy_from_slice(&flat[i..i + dim]);
            }
            Self::PerNode { domain, seed, .. } => {
                let mut rng = CounterRng::new(*seed, node.finish());
                domain.draw_into(|| rng.next_f64(), out);
            }
        }
    }

    fn needs_hash(&self) -> bool {
        matches!(self, Self::PerNode { .. })
    }

    /// `Σ_t T_{w1}⋯T_{w(t-1)} ω_{u w1..wt}` over the symbols `w` following a
    /// node whose hash state is `start`.
    fn partial_sum_into(&self, ifs: &AffineIfs, start: WordHasher, symbols: &[u16], out: &mut [f64]) {
        let n = ifs.dim;
        let nn = n * n;
        let hash = self.needs_hash();
        let mut node = start;
        let mut m = [0.0; 16];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        let mut tmp = [0.0; 16];
        let mut omega = [0.0; MAX_PRODUCT_DIM];
        let mut step = [0.0; MAX_PRODUCT_DIM];
        out[..n].fill(0.0);
        for &sym in symbols {
            if hash {
                node.push(sym);
            }
            self.omega_into(sym, &node, &mut omega[..n]);
            mul_vec_into(n, &m[..nn], &omega[..n], &mut step[..n]);
            for (x, d) in out.iter_mut().zip(&step[..n]) {
                *x += d;
            }
            mul_into(n, &m[..nn], ifs.maps[usize::from(sym)].as_slice(), &mut tmp[..nn]);
            m[..nn].copy_from_slice(&tmp[..nn]);
        }
    }
}

/// Partial sum of the point series through depth `|w|`.
pub fn point_at(ifs: &AffineIfs, translations: &Translations, word: &[u16]) -> Result<Vec<f64>> {
    if word.is_empty() {
        return Err(Error::InvalidArgument("point_at needs a nonempty word".into()));
    }
    if let Some(&bad) = word.iter().find(|&&s| usize::from(s) >= ifs.alphabet()) {
        return Err(Error::OutOfRange {
            index: usize::from(bad),
            len: ifs.alphabet(),
        });
    }
    let mut out = vec![0.0; ifs.dim];
    translations.partial_sum_into(ifs, WordHasher::new(), word, &mut out);
    Ok(out)
}

/// Where a cloud came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub ifs: String,
    pub measure: String,
    pub translations: String,
    pub depth: usize,
    pub seeds: Vec<(String, u64)>,
}

/// Points stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub provenance: Provenance,
    pub truncation_error: f64,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len(),
            });
        }
        Ok(Self {
            dim,
            coords,
            provenance: Provenance::default(),
            truncation_error: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Coordinate-wise `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for j in 0..self.dim {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        Some((lo, hi))
    }
}

/// Short stable fingerprint of a serializable value.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).unwrap_or_default();
    let mut h = WordHasher::new();
    for b in text.bytes() {
        h.push(u16::from(b));
    }
    let (a, b) = h.finish();
    format!("{:016x}{:08x}", a, b >> 32)
}

/// `n` points `x^ω(i|K)` with `i` drawn from `mu`; point `r` uses the symbol
/// stream seeded by `derive_seed(seed, r)`.
pub fn sample_cloud(
    ifs: &AffineIfs,
    translations: &Translations,
    mu: &SymbolicMeasure,
    n: usize,
    depth: usize,
    seed: u64,
) -> Result<PointCloud> {
    if n == 0 || depth == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1 and depth ≥ 1".into()));
    }
    if mu.alphabet() != ifs.alphabet() {
        return Err(Error::AlphabetMismatch {
            expected: ifs.alphabet(),
            found: mu.alphabet(),
        });
    }
    let dim = ifs.dim;
    let mut coords = vec![0.0; n * dim];
    coords.par_chunks_mut(dim).enumerate().for_each(|(r, out)| {
        let mut stream = mu.sample_stream(derive_seed(seed, r as u64));
        translations.partial_sum_into(ifs, WordHasher::new(), stream.prefix(depth), out);
    });
    Ok(PointCloud {
        dim,
        coords,
        provenance: Provenance {
            ifs: fingerprint(ifs),
            measure: fingerprint(mu),
            translations: match translations {
                Translations::PerMap { flat, .. } => fingerprint(flat),
                Translations::PerNode { domain, seed, .. } => fingerprint(&(domain, seed)),
            },
            depth,
            seeds: vec![("sampling".into(), seed)],
        },
        truncation_error: ifs.truncation_error(depth),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub s: f64,
    /// Symbol pairs per prefix length.
    pub n_pairs: usize,
    /// Fresh translation draws per pair.
    pub n_draws: usize,
    pub depth: usize,
    pub max_prefix: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelRow {
    pub prefix_len: usize,
    /// Mean over pairs of `E|x(i) - x(j)|^{-s}`.
    pub mean_kernel: f64,
    /// Mean over pairs of `1 / φ^s(T_{i∧j})`.
    pub mean_bound: f64,
    /// Mean over pairs of `E|x(i) - x(j)|^{-s} · φ^s(T_{i∧j})`.
    pub ratio: f64,
    pub pairs: usize,
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelStats {
    pub s: f64,
    pub rows: Vec<KernelRow>,
    /// `max ratio / median ratio` across rows.
    pub spread: f64,
}

/// Distance below which a pair counts as a numerical collision.
pub const DEGENERATE_DISTANCE: f64 = 1e-14;

/// Empirical check of `E|x^ω(i) - x^ω(j)|^{-s} ≤ c / φ^s(T_{i∧j})` with the
/// expectation taken over fresh translation draws from `family`.
pub fn pairwise_kernel_stats(
    ifs: &AffineIfs,
    family: &TranslationModel,
    mu: &SymbolicMeasure,
    settings: &KernelSettings,
) -> Result<KernelStats> {
    let s = settings.s;
    let n = ifs.dim as f64;
    if !(s > 0.0 && s < n) || s.fract() == 0.0 {
        return Err(Error::InvalidArgument(format!("kernel exponent must be non-integral in (0, {n}), got {s}")));
    }
    if !family.is_randomized() {
        return Err(Error::HypothesisViolated(
            "kernel expectation needs a randomized translation model".into(),
        ));
    }
    if settings.depth <= settings.max_prefix + 1 || settings.n_pairs == 0 || settings.n_draws == 0 {
        return Err(Error::InvalidArgument(
            "kernel test needs depth > max_prefix + 1 and positive pair and draw counts".into(),
        ));
    }
    let m = ifs.alphabet();
    let dim = ifs.dim;
    let log_dets: Vec<f64> = ifs.maps.iter().map(Matrix::log_abs_det).collect();
    let draws: Vec<Translations> = (0..settings.n_draws)
        .map(|d| family.reseeded(derive_seed(settings.seed, d as u64)).realize(ifs))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(settings.max_prefix + 1);
    for ell in 0..=settings.max_prefix {
        let per_pair: Vec<Option<(f64, f64, usize)>> = (0..settings.n_pairs)
            .into_par_iter()
            .map(|p| {
                let mut rng = chacha(derive_seed(settings.seed, 1 << 32 | ell as u64), p as u64);
                let (a, b) = pair_with_prefix(mu, m, ell, settings.depth, &mut rng);
                let mut prefix = crate::matrix::ScaledProduct::identity(dim);
                let mut node = WordHasher::new();
                for &sym in &a[..ell] {
                    prefix.mul_right(&ifs.maps[usize::from(sym)], log_dets[usize::from(sym)]);
                    node.push(sym);
                }
                let mut lsv = [0.0; MAX_PRODUCT_DIM];
                prefix.log_singular_values_into(&mut lsv[..dim]);
                let log_phi_u = log_phi(&lsv[..dim], s);
                let mut ta = [0.0; MAX_PRODUCT_DIM];
                let mut tb = [0.0; MAX_PRODUCT_DIM];
                let mut diff = [0.0; MAX_PRODUCT_DIM];
                let mut delta = [0.0; MAX_PRODUCT_DIM];
                let mut sum = 0.0;
                let mut degenerate = 0;
                for tr in &draws {
                    let start = if tr.needs_hash() { node } else { WordHasher::new() };
                    tr.partial_sum_into(ifs, start, &a[ell..], &mut ta[..dim]);
                    tr.partial_sum_into(ifs, start, &b[ell..], &mut tb[..dim]);
                    for j in 0..dim {
                        diff[j] = ta[j] - tb[j];
                    }
                    prefix.apply_into(&diff[..dim], &mut delta[..dim]);
                    let dist = delta[..dim].iter().map(|x| x * x).sum::<f64>().sqrt();
                    if dist < DEGENERATE_DISTANCE {
                        degenerate += 1;
                    } else {
                        // |Δ|^{-s} · φ^s(T_u) formed in logs
                        sum += (-s * dist.ln() + log_phi_u).exp();
                    }
                }
                let good = settings.n_draws - degenerate;
                (good > 0).then(|| (sum / good as f64, (-log_phi_u).exp(), degenerate))
            })
            .collect();
        let mut kernel = 0.0;
        let mut bound = 0.0;
        let mut ratio = 0.0;
        let mut pairs = 0;
        let mut degenerate = 0;
        for (r, b, d) in per_pair.into_iter().flatten() {
            ratio += r;
            kernel += r * b;
            bound += b;
            pairs += 1;
            degenerate += d;
        }
        degenerate += (settings.n_pairs - pairs) * settings.n_draws;
        let np = pairs.max(1) as f64;
        rows.push(KernelRow {
            prefix_len: ell,
            mean_kernel: kernel / np,
            mean_bound: bound / np,
            ratio: ratio / np,
            pairs,
            degenerate,
        });
    }
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median = if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    let spread = ratios.last().copied().unwrap_or(f64::NAN) / median;
    Ok(KernelStats { s, rows, spread })
}

/// Two `mu`-distributed words of length `depth` agreeing in exactly the
/// first `ell` symbols.
fn pair_with_prefix<R: Rng>(mu: &SymbolicMeasure, m: usize, ell: usize, depth: usize, rng: &mut R) -> (Vec<u16>, Vec<u16>) {
    debug_assert!(m >= 2);
    let mut a = Vec::with_capacity(depth);
    for _ in 0..ell {
        let prev = a.last().copied();
        a.push(mu.draw(prev, None, rng));
    }
    let mut b = a.clone();
    let prev = a.last().copied();
    let x = mu.draw(prev, None, rng);
    let y = mu.draw(prev, Some(x), rng);
    a.push(x);
    b.push(y);
    for w in [&mut a, &mut b] {
        while w.len() < depth {
            let prev = w.last().copied();
            w.push(mu.draw(prev, None, rng));
        }
    }
    (a, b)
}
