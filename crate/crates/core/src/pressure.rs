//! Subadditive pressure `P(s, q)` of a family of linear contractions with a
//! symbolic measure, and the dimension values `d_q` defined by
//! `P(d_q, q) = 0`.
//!
//! At level `k` the pressure is
//!
//! ```text
//! P_k(s, q) = (1/k) ln Σ_{|i|=k} φ^s(T_i)^{1-q} μ(C_i)^q / (q - 1)    (q ≠ 1)
//! P_k(s, 1) = (1/k) Σ_{|i|=k} μ(C_i) ln(μ(C_i) / φ^s(T_i))
//! ```
//!
//! Exhaustive sums walk the level in lexicographic chunks. Each chunk is
//! reduced sequentially and chunk results are combined by a fixed pairwise
//! tree, so values are bit-identical for any thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::code_space::{LevelEnumeration, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::matrix::{alpha_bounds, log_phi, Matrix, ScaledProduct, MAX_PRODUCT_DIM};
use crate::measure::SymbolicMeasure;
use crate::rng::derive_seed;

/// Target number of chunks per level; independent of the thread count.
const CHUNK_TARGET: u64 = 64;
/// Batches used for Monte Carlo standard errors.
const MC_BATCHES: usize = 50;
/// Entries (words × (N + 1) floats) a solver may keep in memory.
pub const DEFAULT_TABLE_CAP: u64 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PressureQuery {
    pub s: f64,
    pub q: f64,
}

impl PressureQuery {
    pub fn new(s: f64, q: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) || !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidArgument(format!("need s ≥ 0 and q ≥ 0, got s = {s}, q = {q}")));
        }
        Ok(Self { s, q })
    }
}

/// The maps `T_1..T_m` together with the measure on code space.
#[derive(Clone, Debug)]
pub struct PressureSystem {
    maps: Vec<Matrix>,
    log_dets: Vec<f64>,
    measure: SymbolicMeasure,
    dim: usize,
    alpha_minus: f64,
    alpha_plus: f64,
    cap: u64,
}

impl PressureSystem {
    pub fn new(maps: Vec<Matrix>, measure: SymbolicMeasure) -> Result<Self> {
        let (alpha_minus, alpha_plus) = alpha_bounds(&maps)?;
        if maps.len() != measure.alphabet() {
            return Err(Error::AlphabetMismatch {
                expected: maps.len(),
                found: measure.alphabet(),
            });
        }
        let dim = maps[0].dim();
        if dim > MAX_PRODUCT_DIM {
            return Err(Error::InvalidArgument(format!(
                "ambient dimension {dim} exceeds the supported maximum {MAX_PRODUCT_DIM}"
            )));
        }
        Ok(Self {
            log_dets: maps.iter().map(Matrix::log_abs_det).collect(),
            maps,
            measure,
            dim,
            alpha_minus,
            alpha_plus,
            cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn maps(&self) -> &[Matrix] {
        &self.maps
    }

    pub fn measure(&self) -> &SymbolicMeasure {
        &self.measure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet(&self) -> usize {
        self.maps.len()
    }

    pub fn alpha_bounds(&self) -> (f64, f64) {
        (self.alpha_minus, self.alpha_plus)
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn is_exhaustive(&self, k: usize) -> bool {
        LevelEnumeration::new(self.alphabet(), k, self.cap).is_ok()
    }

    fn plan(&self, k: usize) -> Result<ChunkPlan> {
        if k == 0 {
            return Err(Error::InvalidArgument("pressure level must be at least 1".into()));
        }
        let full = LevelEnumeration::new(self.alphabet(), k, self.cap)?;
        let m = self.alphabet() as u64;
        let mut depth = 0;
        let mut chunks = 1u64;
        while depth < k && chunks < CHUNK_TARGET {
            depth += 1;
            chunks *= m;
        }
        Ok(ChunkPlan {
            level: k,
            prefix: LevelEnumeration::new(self.alphabet(), depth, u64::MAX)?,
            words: full.count(),
        })
    }

    /// Log singular values and log weights of every word in one chunk, in
    /// lexicographic order, with stride `N + 1`.
    fn build_chunk(&self, plan: &ChunkPlan, chunk: u64) -> Vec<f64> {
        let prefix = plan.prefix.unrank(chunk);
        let mut product = ScaledProduct::identity(self.dim);
        let mut log_mu = 0.0;
        let mut prev = None;
        for &sym in prefix.indices() {
            let i = usize::from(sym);
            product.mul_right(&self.maps[i], self.log_dets[i]);
            log_mu += self.measure.log_step(prev, sym);
            prev = Some(sym);
        }
        let rest = plan.level - prefix.len();
        let stride = self.dim + 1;
        let mut out = Vec::with_capacity(self.alphabet().pow(rest as u32) * stride);
        self.descend(product, log_mu, prev, rest, &mut out);
        out
    }

    fn descend(&self, product: ScaledProduct, log_mu: f64, prev: Option<u16>, rest: usize, out: &mut Vec<f64>) {
        if rest == 0 {
            let n = self.dim;
            let base = out.len();
            out.resize(base + n + 1, 0.0);
            product.log_singular_values_into(&mut out[base..base + n]);
            out[base + n] = log_mu;
            return;
        }
        for sym in 0..self.alphabet() as u16 {
            let i = usize::from(sym);
            let mut p = product;
            p.mul_right(&self.maps[i], self.log_dets[i]);
            self.descend(p, log_mu + self.measure.log_step(prev, sym), Some(sym), rest - 1, out);
        }
    }

    /// Exhaustive level-`k` pressure.
    pub fn pressure_level(&self, query: PressureQuery, k: usize) -> Result<f64> {
        let plan = self.plan(k)?;
        let stride = self.dim + 1;
        let parts: Vec<f64> = (0..plan.prefix.count())
            .into_par_iter()
            .map(|c| fold_chunk(&self.build_chunk(&plan, c), stride, query))
            .collect();
        Ok(finish(&parts, query, k))
    }

    /// Materializes a level for repeated evaluation at different `(s, q)`.
    pub fn level_table(&self, k: usize) -> Result<LevelTable> {
        let plan = self.plan(k)?;
        let chunks = (0..plan.prefix.count())
            .into_par_iter()
            .map(|c| self.build_chunk(&plan, c))
            .collect();
        Ok(LevelTable {
            level: k,
            stride: self.dim + 1,
            chunks,
        })
    }

    /// Additive correction making the level sequence superadditive for
    /// quasi-multiplicative measures; zero for Bernoulli measures.
    pub fn superadditivity_correction(&self, q: f64, k: usize) -> f64 {
        let log_b = self.measure.quasimultiplicativity_constant().ln();
        if log_b == 0.0 {
            return 0.0;
        }
        let factor = if q == 1.0 { 1.0 } else { q / (q - 1.0).abs() };
        factor * log_b / k as f64
    }

    /// Monte Carlo estimate of the level-`k` pressure from the integral
    /// form, sampling streams from the measure.
    pub fn pressure_level_mc(&self, query: PressureQuery, k: usize, n_samples: usize, seed: u64) -> Result<McEstimate> {
        if k == 0 {
            return Err(Error::InvalidArgument("pressure level must be at least 1".into()));
        }
        if n_samples < 100 {
            return Err(Error::InvalidArgument(format!("need at least 100 samples, got {n_samples}")));
        }
        let batches = MC_BATCHES;
        let base = n_samples / batches;
        let extra = n_samples % batches;
        let mut bounds = Vec::with_capacity(batches);
        let mut start = 0;
        for b in 0..batches {
            let len = base + usize::from(b < extra);
            bounds.push((start, start + len));
            start += len;
        }
        let n = self.dim;
        let log_y = |i: usize| -> f64 {
            let mut stream = self.measure.sample_stream(derive_seed(seed, i as u64));
            let mut product = ScaledProduct::identity(n);
            let mut log_mu = 0.0;
            let mut prev = None;
            for &sym in stream.prefix(k) {
                let j = usize::from(sym);
                product.mul_right(&self.maps[j], self.log_dets[j]);
                log_mu += self.measure.log_step(prev, sym);
                prev = Some(sym);
            }
            let mut lsv = [0.0; MAX_PRODUCT_DIM];
            product.log_singular_values_into(&mut lsv[..n]);
            log_mu - log_phi(&lsv[..n], query.s)
        };
        let q = query.q;
        let kf = k as f64;
        if q == 1.0 {
            let means: Vec<f64> = bounds
                .par_iter()
                .map(|&(a, b)| (a..b).map(|i| log_y(i) / kf).sum::<f64>() / (b - a) as f64)
                .collect();
            let (mean, sd) = mean_sd(&means);
            Ok(McEstimate {
                level: k,
                value: mean,
                stderr: sd / (batches as f64).sqrt(),
                samples: n_samples,
            })
        } else {
            // log of each batch mean of Y^{q-1}
            let logs: Vec<f64> = bounds
                .par_iter()
                .map(|&(a, b)| {
                    let t: Vec<f64> = (a..b).map(|i| (q - 1.0) * log_y(i)).collect();
                    log_sum_exp(&t) - ((b - a) as f64).ln()
                })
                .collect();
            let overall = log_sum_exp(&logs) - (batches as f64).ln();
            let rel: Vec<f64> = logs.iter().map(|l| (l - overall).exp()).collect();
            let (_, sd) = mean_sd(&rel);
            let scale = kf * (q - 1.0);
            Ok(McEstimate {
                level: k,
                value: overall / scale,
                stderr: sd / (batches as f64).sqrt() / scale.abs(),
                samples: n_samples,
            })
        }
    }

    /// Level values `P_1..P_kmax` (exhaustive within the cap, Monte Carlo
    /// beyond), the Fekete lower bound and a `1/k` extrapolation.
    pub fn pressure(&self, query: PressureQuery, settings: &PressureSettings) -> Result<PressureResult> {
        if settings.k_max == 0 {
            return Err(Error::InvalidArgument("k_max must be at least 1".into()));
        }
        let mut levels = Vec::with_capacity(settings.k_max);
        for k in 1..=settings.k_max {
            let correction = self.superadditivity_correction(query.q, k);
            if self.is_exhaustive(k) {
                let value = self.pressure_level(query, k)?;
                levels.push(LevelValue {
                    level: k,
                    value,
                    corrected: value - correction,
                    method: LevelMethod::Exhaustive,
                    stderr: None,
                });
            } else if settings.mc_samples >= 100 {
                let est = self.pressure_level_mc(query, k, settings.mc_samples, derive_seed(settings.seed, k as u64))?;
                levels.push(LevelValue {
                    level: k,
                    value: est.value,
                    corrected: est.value - correction,
                    method: LevelMethod::MonteCarlo,
                    stderr: Some(est.stderr),
                });
            } else {
                break;
            }
        }
        let exhaustive: Vec<&LevelValue> = levels.iter().filter(|l| l.method == LevelMethod::Exhaustive).collect();
        if exhaustive.is_empty() {
            return Err(Error::CapExceeded {
                count: self.alphabet() as f64,
                cap: self.cap,
            });
        }
        let fekete_bound = exhaustive.iter().map(|l| l.corrected).fold(f64::NEG_INFINITY, f64::max);
        let pts: Vec<(usize, f64)> = exhaustive.iter().map(|l| (l.level, l.value)).collect();
        // the limit is at least the Fekete bound, so a fit below it is known to be wrong
        let extrapolated = extrapolate_in_inverse_level(&pts).max(fekete_bound);
        let mut mc_estimates = Vec::new();
        if settings.mc_samples >= 100 {
            for &depth in &settings.mc_depths {
                mc_estimates.push(self.pressure_level_mc(
                    query,
                    depth,
                    settings.mc_samples,
                    derive_seed(settings.seed, 1_000_000 + depth as u64),
                )?);
            }
        }
        Ok(PressureResult {
            s: query.s,
            q: query.q,
            levels,
            fekete_bound,
            bound_side: BoundSide::LowerBoundsLimit,
            extrapolated,
            mc_estimates,
        })
    }

    /// Root of the level-`k` pressure in `s` by bisection.
    pub fn solve_dq(&self, q: f64, settings: &SolveSettings) -> Result<DimensionValue> {
        DqSolver::new(self, settings)?.solve(q, settings.tol)
    }

    /// `d_q` over an ascending grid, sharing level tables across grid points.
    pub fn dq_curve(&self, q_grid: &[f64], settings: &SolveSettings) -> Result<DqCurve> {
        if q_grid.is_empty() {
            return Err(Error::InvalidArgument("q grid is empty".into()));
        }
        if q_grid.iter().any(|&q| !(q >= 0.0 && q.is_finite())) || q_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("q grid must be ascending, finite and nonnegative".into()));
        }
        let solver = DqSolver::new(self, settings)?;
        let values = q_grid
            .iter()
            .map(|&q| solver.solve(q, settings.tol))
            .collect::<Result<Vec<_>>>()?;
        let left_limit = solver.left_limit_at_one(&values, q_grid, settings.tol)?;
        Ok(DqCurve { values, left_limit })
    }
}

#[derive(Clone, Debug)]
struct ChunkPlan {
    level: usize,
    prefix: LevelEnumeration,
    #[allow(dead_code)]
    words: u64,
}

/// All words of one level with their log singular values and log weights.
#[derive(Clone, Debug)]
pub struct LevelTable {
    level: usize,
    stride: usize,
    chunks: Vec<Vec<f64>>,
}

impl LevelTable {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn words(&self) -> usize {
        self.chunks.iter().map(|c| c.len() / self.stride).sum()
    }

    pub fn evaluate(&self, query: PressureQuery) -> f64 {
        let parts: Vec<f64> = self
            .chunks
            .par_iter()
            .map(|c| fold_chunk(c, self.stride, query))
            .collect();
        finish(&parts, query, self.level)
    }
}

fn fold_chunk(entries: &[f64], stride: usize, query: PressureQuery) -> f64 {
    let n = stride - 1;
    let PressureQuery { s, q } = query;
    if q == 1.0 {
        // Neumaier-compensated Σ μ (ln μ - ln φ^s)
        let mut sum = 0.0;
        let mut comp = 0.0;
        for e in entries.chunks_exact(stride) {
            let lm = e[n];
            let term = lm.exp() * (lm - log_phi(&e[..n], s));
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        sum + comp
    } else {
        let term = |e: &[f64]| (1.0 - q) * log_phi(&e[..n], s) + q * e[n];
        let mx = entries.chunks_exact(stride).map(term).fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        let acc: f64 = entries.chunks_exact(stride).map(|e| (term(e) - mx).exp()).sum();
        mx + acc.ln()
    }
}

fn finish(parts: &[f64], query: PressureQuery, k: usize) -> f64 {
    let kf = k as f64;
    if query.q == 1.0 {
        tree_reduce(parts, &|a, b| a + b) / kf
    } else {
        tree_reduce(parts, &log_add) / (kf * (query.q - 1.0))
    }
}

fn tree_reduce(xs: &[f64], op: &dyn Fn(f64, f64) -> f64) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            op(tree_reduce(a, op), tree_reduce(b, op))
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Least-squares intercept of `P_k ≈ a + c / k` over the upper half of the
/// levels supplied.
pub fn extrapolate_in_inverse_level(points: &[(usize, f64)]) -> f64 {
    let k_max = points.iter().map(|p| p.0).max().unwrap_or(1);
    let window: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| 2 * p.0 >= k_max)
        .map(|&(k, v)| (1.0 / k as f64, v))
        .collect();
    if window.len() < 2 {
        return window.last().map_or(f64::NAN, |p| p.1);
    }
    let n = window.len() as f64;
    let mx = window.iter().map(|p| p.0).sum::<f64>() / n;
    let my = window.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = window.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = window.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    my - slope * mx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub level: usize,
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMethod {
    Exhaustive,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    /// The Fekete supremum bounds the limit from below.
    LowerBoundsLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelValue {
    pub level: usize,
    pub value: f64,
    /// `value` minus the superadditivity correction.
    pub corrected: f64,
    pub method: LevelMethod,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PressureResult {
    pub s: f64,
    pub q: f64,
    pub levels: Vec<LevelValue>,
    pub fekete_bound: f64,
    pub bound_side: BoundSide,
    /// Heuristic `1/k` fit, never below `fekete_bound`.
    pub extrapolated: f64,
    pub mc_estimates: Vec<McEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct PressureSettings {
    pub k_max: usize,
    pub mc_depths: Vec<usize>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for PressureSettings {
    fn default() -> Self {
        Self {
            k_max: 12,
            mc_depths: vec![40, 60, 80],
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveSettings {
    pub tol: f64,
    /// Working level `k`.
    pub level: usize,
    /// Give up if no sign change is found below this `s`.
    pub s_cap: f64,
    pub table_cap: u64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            level: 12,
            s_cap: 1e3,
            table_cap: DEFAULT_TABLE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionValue {
    pub q: f64,
    /// Root of the working-level pressure.
    pub d_q: f64,
    pub lo: f64,
    pub hi: f64,
    pub residual_bound: f64,
    /// `hi` when the corrected working-level pressure is positive there, so
    /// that `d_q ≤ hi` holds for the limiting pressure.
    pub certified_upper: Option<f64>,
    /// Root of the `1/k`-extrapolated pressure (heuristic).
    pub extrapolated: Option<f64>,
    pub level: usize,
}

impl DimensionValue {
    pub fn best(&self) -> f64 {
        self.extrapolated.unwrap_or(self.d_q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeftLimit {
    pub nearest_q: Option<f64>,
    pub nearest_d: Option<f64>,
    /// Quadratic extrapolation to `q = 1` from `q = 1 - δ, 1 - 2δ, 1 - 4δ`.
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DqCurve {
    pub values: Vec<DimensionValue>,
    pub left_limit: LeftLimit,
}

impl DqCurve {
    pub fn at(&self, q: f64) -> Option<&DimensionValue> {
        self.values.iter().find(|v| v.q == q)
    }
}

/// Step used for the one-sided limit at `q = 1`.
const LEFT_LIMIT_STEP: f64 = 5e-4;

enum LevelSource {
    Table(LevelTable),
    Stream(usize),
}

struct DqSolver<'a> {
    system: &'a PressureSystem,
    level: usize,
    s_cap: f64,
    sources: Vec<LevelSource>,
}

impl<'a> DqSolver<'a> {
    fn new(system: &'a PressureSystem, settings: &SolveSettings) -> Result<Self> {
        if !(settings.tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let k = settings.level;
        system.plan(k)?;
        let first = if k >= 2 { k.saturating_sub(3).max(1) } else { k };
        let mut sources = Vec::new();
        for j in first..=k {
            let entries = (system.alphabet() as f64).powi(j as i32) * (system.dim + 1) as f64;
            if entries <= settings.table_cap as f64 {
                sources.push(LevelSource::Table(system.level_table(j)?));
            } else {
                sources.push(LevelSource::Stream(j));
            }
        }
        Ok(Self {
            system,
            level: k,
            s_cap: settings.s_cap,
            sources,
        })
    }

    fn eval(&self, source: &LevelSource, s: f64, q: f64) -> f64 {
        let query = PressureQuery { s, q };
        match source {
            LevelSource::Table(t) => t.evaluate(query),
            LevelSource::Stream(k) => self
                .system
                .pressure_level(query, *k)
                .expect("level validated at construction"),
        }
    }

    fn working(&self, s: f64, q: f64) -> f64 {
        self.eval(self.sources.last().expect("at least one level"), s, q)
    }

    fn extrapolated(&self, s: f64, q: f64) -> f64 {
        let pts: Vec<(usize, f64)> = self
            .sources
            .iter()
            .map(|src| {
                let k = match src {
                    LevelSource::Table(t) => t.level,
                    LevelSource::Stream(k) => *k,
                };
                (k, self.eval(src, s, q))
            })
            .collect();
        // all levels in the window lie in the upper half
        extrapolate_in_inverse_level(&pts)
    }

    fn solve(&self, q: f64, tol: f64) -> Result<DimensionValue> {
        let (_, alpha_plus) = self.system.alpha_bounds();
        let lip = (1.0 / alpha_plus).ln();
        let p0 = self.working(0.0, q);
        if !(p0 < 0.0) {
            return Err(Error::BracketFailure { q, s_cap: 0.0 });
        }
        let mut hi = -p0 / lip * (1.0 + 1e-9) + 1e-12;
        while !(self.working(hi, q) > 0.0) {
            hi *= 2.0;
            if hi > self.s_cap {
                return Err(Error::BracketFailure { q, s_cap: self.s_cap });
            }
        }
        let (lo, hi) = bisect(|s| self.working(s, q), 0.0, hi, tol);
        let d = 0.5 * (lo + hi);
        let residual_bound = self.working(d, q).abs() / lip;
        let corrected_hi = self.working(hi, q) - self.system.superadditivity_correction(q, self.level);
        let extrapolated = if self.sources.len() >= 2 {
            self.solve_extrapolated(q, d, tol)
        } else {
            None
        };
        Ok(DimensionValue {
            q,
            d_q: d,
            lo,
            hi,
            residual_bound,
            certified_upper: (corrected_hi > 0.0).then_some(hi),
            extrapolated,
            level: self.level,
        })
    }

    fn solve_extrapolated(&self, q: f64, guess: f64, tol: f64) -> Option<f64> {
        let f = |s: f64| self.extrapolated(s, q);
        let mut step = (1e-3 * (1.0 + guess)).max(10.0 * tol);
        let mut lo = (guess - step).max(0.0);
        let mut hi = guess + step;
        for _ in 0..40 {
            let (flo, fhi) = (f(lo), f(hi));
            if flo <= 0.0 && fhi > 0.0 {
                let (a, b) = bisect(f, lo, hi, tol);
                return Some(0.5 * (a + b));
            }
            step *= 2.0;
            if flo > 0.0 {
                if lo == 0.0 {
                    return None;
                }
                lo = (lo - step).max(0.0);
            }
            if fhi <= 0.0 {
                hi += step;
                if hi > self.s_cap {
                    return None;
                }
            }
        }
        None
    }

    fn left_limit_at_one(&self, values: &[DimensionValue], grid: &[f64], tol: f64) -> Result<LeftLimit> {
        let nearest = grid.iter().zip(values).rev().find(|(q, _)| **q < 1.0);
        let h = LEFT_LIMIT_STEP;
        let mut ys = [0.0; 3];
        for (y, mult) in ys.iter_mut().zip([1.0, 2.0, 4.0]) {
            *y = self.solve(1.0 - mult * h, tol / 10.0)?.best();
        }
        // Lagrange weights for nodes 1-h, 1-2h, 1-4h evaluated at 1.
        let estimate = (8.0 / 3.0) * ys[0] - 2.0 * ys[1] + (1.0 / 3.0) * ys[2];
        Ok(LeftLimit {
            nearest_q: nearest.map(|(q, _)| *q),
            nearest_d: nearest.map(|(_, v)| v.best()),
            estimate,
        })
    }
}

/// Shrinks `[lo, hi]` with `f(lo) ≤ 0 < f(hi)` to width at most `tol`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn similarity_system(ratios: &[f64], p: &[f64], dim: usize) -> PressureSystem {
        let maps = ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                if dim == 2 {
                    Matrix::rotation(0.3 * i as f64).scaled(r)
                } else {
                    Matrix::identity(dim).scaled(r)
                }
            })
            .collect();
        PressureSystem::new(maps, SymbolicMeasure::bernoulli(p.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn multiplicative_levels_are_constant() {
        let sys = similarity_system(&[0.5, 1.0 / 3.0], &[0.6, 0.4], 2);
        for &(s, q) in &[(0.7, 0.0), (1.3, 0.5), (0.4, 2.0), (1.0, 1.0)] {
            let query = PressureQuery::new(s, q).unwrap();
            let p1 = sys.pressure_level(query, 1).unwrap();
            let closed = if q == 1.0 {
                0.6 * (0.6_f64.ln() - s * 0.5_f64.ln()) + 0.4 * (0.4_f64.ln() - s * (1.0_f64 / 3.0).ln())
            } else {
                (0.6_f64.powf(q) * 0.5_f64.powf(s * (1.0 - q)) + 0.4_f64.powf(q) * (1.0_f64 / 3.0).powf(s * (1.0 - q)))
                    .ln()
                    / (q - 1.0)
            };
            assert!((p1 - closed).abs() < 1e-13, "{p1} {closed}");
            for k in 2..=10 {
                let pk = sys.pressure_level(query, k).unwrap();
                assert!((pk - p1).abs() < 1e-12, "k={k} {pk} {p1}");
            }
        }
    }

    #[test]
    fn affinity_zero_case() {
        let sys = similarity_system(&[0.5, 0.5], &[0.5, 0.5], 2);
        let p = sys.pressure_level(PressureQuery::new(1.0, 0.0).unwrap(), 1).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn entropy_branch_uniform_example() {
        let sys = similarity_system(&[0.5, 0.5], &[0.5, 0.5], 2);
        let p = sys.pressure_level(PressureQuery::new(1.0, 1.0).unwrap(), 1).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn table_and_streaming_agree_bitwise() {
        let maps = vec![
            Matrix::rotation(0.4).compose(&Matrix::diag(&[0.6, 0.3])).unwrap(),
            Matrix::diag(&[0.5, 0.45]),
        ];
        let sys = PressureSystem::new(maps, SymbolicMeasure::bernoulli(vec![0.3, 0.7]).unwrap()).unwrap();
        let t = sys.level_table(9).unwrap();
        assert_eq!(t.words(), 512);
        for &(s, q) in &[(0.5, 0.0), (1.2, 1.0), (1.7, 2.5)] {
            let query = PressureQuery::new(s, q).unwrap();
            assert_eq!(t.evaluate(query).to_bits(), sys.pressure_level(query, 9).unwrap().to_bits());
        }
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let maps = vec![
            Matrix::rotation(1.1).compose(&Matrix::diag(&[0.7, 0.2])).unwrap(),
            Matrix::diag(&[0.5, 0.45]),
            Matrix::diag(&[0.3, 0.25]),
        ];
        let sys = PressureSystem::new(maps, SymbolicMeasure::bernoulli(vec![0.2, 0.3, 0.5]).unwrap()).unwrap();
        let query = PressureQuery::new(1.3, 0.7).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sys.pressure_level(query, 8).unwrap())
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
    }

    #[test]
    fn solve_closed_form_similarities() {
        let settings = SolveSettings {
            tol: 1e-10,
            level: 4,
            ..SolveSettings::default()
        };
        let sys = similarity_system(&[0.5, 0.5], &[0.5, 0.5], 2);
        for q in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let d = sys.solve_dq(q, &settings).unwrap();
            assert!((d.d_q - 1.0).abs() < 1e-9, "{d:?}");
            assert!(d.lo <= d.d_q && d.d_q <= d.hi && d.hi - d.lo <= 2.0 * settings.tol);
            assert!(d.certified_upper.is_some());
        }
        let sys = similarity_system(&[1.0 / 3.0, 1.0 / 3.0], &[0.5, 0.5], 1);
        let d = sys.solve_dq(1.0, &settings).unwrap();
        assert!((d.d_q - 2.0_f64.ln() / 3.0_f64.ln()).abs() < 1e-9);
        assert!((d.d_q - 0.63093).abs() < 1e-5);
        let sys = similarity_system(&[0.5, 0.5], &[0.7, 0.3], 1);
        let d = sys.solve_dq(1.0, &settings).unwrap();
        let expected = (0.7 * 0.7_f64.ln() + 0.3 * 0.3_f64.ln()) / 0.5_f64.ln();
        assert!((d.d_q - expected).abs() < 1e-9);
        assert!((d.d_q - 0.88129).abs() < 1e-5);
    }

    #[test]
    fn curve_decreases_for_unequal_weights() {
        let sys = similarity_system(&[0.5, 0.5], &[0.8, 0.2], 1);
        let settings = SolveSettings {
            tol: 1e-9,
            level: 3,
            ..SolveSettings::default()
        };
        let grid = [0.0, 0.5, 0.9, 1.0, 1.5, 2.0, 4.0];
        let curve = sys.dq_curve(&grid, &settings).unwrap();
        for w in curve.values.windows(2) {
            assert!(w[1].d_q < w[0].d_q);
        }
        assert!((curve.values[0].d_q - 1.0).abs() < 1e-8);
        assert!((curve.left_limit.estimate - curve.at(1.0).unwrap().d_q).abs() < 2e-8);
        assert_eq!(curve.left_limit.nearest_q, Some(0.9));
    }

    #[test]
    fn matched_weights_give_constant_curve() {
        // p_i = r_i^d with r = (1/2, 1/4): d solves 2^-d + 4^-d = 1.
        let d = ((5.0_f64.sqrt() - 1.0) / 2.0).ln() / 0.5_f64.ln();
        let p = [0.5_f64.powf(d), 0.25_f64.powf(d)];
        let sys = similarity_system(&[0.5, 0.25], &p, 1);
        let settings = SolveSettings {
            tol: 1e-10,
            level: 3,
            ..SolveSettings::default()
        };
        let curve = sys.dq_curve(&[0.0, 0.5, 1.0, 2.0], &settings).unwrap();
        for v in &curve.values {
            assert!((v.d_q - d).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_grids_rejected() {
        let sys = similarity_system(&[0.5, 0.5], &[0.5, 0.5], 1);
        let settings = SolveSettings::default();
        assert!(sys.dq_curve(&[], &settings).is_err());
        assert!(sys.dq_curve(&[1.0, 0.5], &settings).is_err());
        assert!(PressureQuery::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let sys = similarity_system(&[0.5, 0.5], &[0.5, 0.5], 1).with_cap(1000);
        assert!(matches!(
            sys.pressure_level(PressureQuery::new(1.0, 1.0).unwrap(), 10),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn non_contraction_rejected() {
        let maps = vec![Matrix::diag(&[1.1, 0.5]), Matrix::diag(&[0.5, 0.5])];
        let mu = SymbolicMeasure::bernoulli(vec![0.5, 0.5]).unwrap();
        assert!(matches!(PressureSystem::new(maps, mu), Err(Error::NotAContraction { .. })));
    }
}
