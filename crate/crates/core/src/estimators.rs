//! Finite-resolution dimension estimators over point clouds.
//!
//! * mesh moments: `log Σ_C ν(C)^q / (q - 1)` (or `Σ ν(C) log ν(C)` at
//!   `q = 1`) against `log r` over dyadic mesh cubes, averaged over grid
//!   offsets;
//! * ball integrals: `log ∫ ν(B(x, r))^{q-1} dν / (q - 1)` (or
//!   `∫ log ν(B(x, r)) dν`) by Monte Carlo over query points;
//! * local dimensions: per-query slopes of `log ν(B(x, r))`.
//!
//! Balls are closed and include the query point. Slopes come from ordinary
//! least squares over the declared scaling window.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{chacha, unit_f64, mix64};
use crate::sampler::PointCloud;

/// Grid offsets averaged by the mesh estimator; the first is always zero.
pub const GRID_OFFSETS: usize = 8;
/// Minimum number of radii in a scaling window.
pub const MIN_WINDOW: usize = 4;
const OFFSET_SEED: u64 = 0x6d65_7368;

/// Radii `r = 2^-l` for `l = l_min..=l_max`, with a scaling window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSchedule {
    pub l_min: i32,
    pub l_max: i32,
    /// Explicit window `[lo, hi]` in levels; overrides the trims.
    #[serde(default)]
    pub window: Option<(i32, i32)>,
    /// Largest radii dropped from the window.
    #[serde(default = "default_trim")]
    pub trim_large: usize,
    /// Smallest radii dropped from the window.
    #[serde(default = "default_trim")]
    pub trim_small: usize,
}

fn default_trim() -> usize {
    2
}

impl RadiusSchedule {
    pub fn new(l_min: i32, l_max: i32) -> Result<Self> {
        if l_max <= l_min {
            return Err(Error::InvalidArgument(format!("need l_min < l_max, got {l_min}..{l_max}")));
        }
        Ok(Self {
            l_min,
            l_max,
            window: None,
            trim_large: 2,
            trim_small: 2,
        })
    }

    pub fn with_window(mut self, lo: i32, hi: i32) -> Self {
        self.window = Some((lo, hi));
        self
    }

    pub fn with_trim(mut self, large: usize, small: usize) -> Self {
        self.trim_large = large;
        self.trim_small = small;
        self
    }

    pub fn levels(&self) -> impl Iterator<Item = i32> + Clone {
        self.l_min..=self.l_max
    }

    /// Descending radii.
    pub fn radii(&self) -> Vec<f64> {
        self.levels().map(radius_of).collect()
    }

    pub fn smallest_radius(&self) -> f64 {
        radius_of(self.l_max)
    }

    /// Levels inside the scaling window.
    pub fn window_levels(&self) -> Result<Vec<i32>> {
        let all: Vec<i32> = self.levels().collect();
        let chosen: Vec<i32> = match self.window {
            Some((lo, hi)) => all.into_iter().filter(|l| (lo..=hi).contains(l)).collect(),
            None => {
                let end = all.len().saturating_sub(self.trim_small);
                all.get(self.trim_large.min(end)..end).unwrap_or(&[]).to_vec()
            }
        };
        if chosen.len() < MIN_WINDOW {
            return Err(Error::WindowTooNarrow {
                available: chosen.len(),
                required: MIN_WINDOW,
            });
        }
        Ok(chosen)
    }

    /// Rejects radii too close to the cloud's truncation error.
    pub fn check(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let r = self.smallest_radius();
        if r < 10.0 * cloud.truncation_error {
            return Err(Error::InvalidArgument(format!(
                "smallest radius {r:e} is below 10 × truncation error {:e}",
                cloud.truncation_error
            )));
        }
        self.window_levels().map(|_| ())
    }

    /// Chooses levels from the cloud: the largest radius is at most the cloud
    /// extent, the smallest keeps a mean mesh occupancy of at least
    /// `min_occupancy` points per occupied cell and stays above ten times the
    /// truncation error.
    pub fn auto(cloud: &PointCloud, min_occupancy: f64) -> Result<Self> {
        let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
        let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        if !(extent > 0.0) {
            return Err(Error::InvalidArgument("cloud has zero extent; give an explicit schedule".into()));
        }
        let l_min = (-extent.log2()).ceil() as i32;
        let floor = 10.0 * cloud.truncation_error;
        let n = cloud.len() as f64;
        let mut l_max = l_min;
        loop {
            let next = l_max + 1;
            if radius_of(next) < floor || next - l_min > 60 {
                break;
            }
            let occupied = occupied_cells(cloud, &lo, radius_of(next), &vec![0.0; cloud.dim]);
            if n / (occupied as f64) < min_occupancy {
                break;
            }
            l_max = next;
        }
        let s = Self::new(l_min, l_max.max(l_min + 1))?;
        s.window_levels()?;
        Ok(s)
    }
}

pub fn radius_of(level: i32) -> f64 {
    (-f64::from(level)).exp2()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadiusPoint {
    pub level: i32,
    pub r: f64,
    /// `log Σ ν^q` (mesh), `log ∫ ν(B)^{q-1}` (balls), or the entropy-type
    /// sum at `q = 1`.
    pub log_moment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionEstimate {
    pub q: f64,
    pub value: f64,
    pub points: Vec<RadiusPoint>,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square regression residual.
    pub residual: f64,
    pub window: (i32, i32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    LineFit {
        slope,
        intercept,
        residual: (rss / n).sqrt(),
    }
}

fn validate_q(q: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { q >= 0.0 } else { q > 0.0 };
    if !(ok && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid moment order q = {q}")));
    }
    Ok(())
}

fn estimate_from(q: f64, points: Vec<RadiusPoint>, window: &[i32]) -> DimensionEstimate {
    let chosen: Vec<&RadiusPoint> = points.iter().filter(|p| window.contains(&p.level)).collect();
    let xs: Vec<f64> = chosen.iter().map(|p| p.r.ln()).collect();
    let ys: Vec<f64> = chosen
        .iter()
        .map(|p| if q == 1.0 { p.log_moment } else { p.log_moment / (q - 1.0) })
        .collect();
    let fit = fit_line(&xs, &ys);
    DimensionEstimate {
        q,
        value: fit.slope,
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        residual: fit.residual,
        window: (window[0], *window.last().expect("window is nonempty")),
    }
}

/// Offsets as fractions of a cell, fixed for all clouds.
fn grid_offsets(dim: usize) -> Vec<Vec<f64>> {
    (0..GRID_OFFSETS)
        .map(|k| {
            (0..dim)
                .map(|j| {
                    if k == 0 {
                        0.0
                    } else {
                        unit_f64(mix64(OFFSET_SEED ^ mix64((k * 16 + j) as u64)))
                    }
                })
                .collect()
        })
        .collect()
}

const KEY_BIAS: i64 = 1 << 31;

/// Packs integer cell coordinates, last coordinate least significant.
#[inline]
fn pack(cells: &[i64]) -> u128 {
    cells
        .iter()
        .fold(0u128, |acc, &c| (acc << 32) | u128::from((c + KEY_BIAS) as u32))
}

fn cell_keys(cloud: &PointCloud, origin: &[f64], side: f64, offset: &[f64]) -> Vec<u128> {
    let dim = cloud.dim;
    cloud
        .coords
        .par_chunks_exact(dim)
        .map(|p| {
            let mut c = [0i64; 4];
            for j in 0..dim {
                c[j] = ((p[j] - origin[j]) / side + offset[j]).floor() as i64;
            }
            pack(&c[..dim])
        })
        .collect()
}

fn occupied_cells(cloud: &PointCloud, origin: &[f64], side: f64, offset: &[f64]) -> usize {
    let mut keys = cell_keys(cloud, origin, side, offset);
    keys.par_sort_unstable();
    keys.dedup();
    keys.len()
}

fn check_resolution(cloud: &PointCloud, schedule: &RadiusSchedule) -> Result<Vec<f64>> {
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    if extent / schedule.smallest_radius() > 2.0e9 || cloud.dim > 4 {
        return Err(Error::InvalidArgument("schedule too fine for the cloud extent".into()));
    }
    Ok(lo)
}

/// Sorted cell occupancy counts for one grid.
fn mesh_counts(cloud: &PointCloud, origin: &[f64], side: f64, offset: &[f64]) -> Vec<u64> {
    let mut keys = cell_keys(cloud, origin, side, offset);
    keys.par_sort_unstable();
    let mut counts = Vec::new();
    let mut i = 0;
    while i < keys.len() {
        let mut j = i + 1;
        while j < keys.len() && keys[j] == keys[i] {
            j += 1;
        }
        counts.push((j - i) as u64);
        i = j;
    }
    counts
}

fn mesh_log_moment(counts: &[u64], n: f64, q: f64) -> f64 {
    if q == 1.0 {
        counts
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    } else {
        let logs: Vec<f64> = counts.iter().map(|&c| q * (c as f64 / n).ln()).collect();
        log_sum_exp(&logs)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Mesh-cube moment estimates for several `q` sharing one binning pass.
pub fn mesh_moments_multi(cloud: &PointCloud, qs: &[f64], schedule: &RadiusSchedule) -> Result<Vec<DimensionEstimate>> {
    schedule.check(cloud)?;
    for &q in qs {
        validate_q(q, true)?;
    }
    let window = schedule.window_levels()?;
    let origin = check_resolution(cloud, schedule)?;
    let offsets = grid_offsets(cloud.dim);
    let n = cloud.len() as f64;
    let mut per_q: Vec<Vec<RadiusPoint>> = vec![Vec::new(); qs.len()];
    for level in schedule.levels() {
        let r = radius_of(level);
        let mut sums = vec![0.0; qs.len()];
        for off in &offsets {
            let counts = mesh_counts(cloud, &origin, r, off);
            for (s, &q) in sums.iter_mut().zip(qs) {
                *s += mesh_log_moment(&counts, n, q);
            }
        }
        for (pts, s) in per_q.iter_mut().zip(&sums) {
            pts.push(RadiusPoint {
                level,
                r,
                log_moment: s / offsets.len() as f64,
            });
        }
    }
    Ok(qs
        .iter()
        .zip(per_q)
        .map(|(&q, pts)| estimate_from(q, pts, &window))
        .collect())
}

pub fn mesh_moments(cloud: &PointCloud, q: f64, schedule: &RadiusSchedule) -> Result<DimensionEstimate> {
    Ok(mesh_moments_multi(cloud, &[q], schedule)?.remove(0))
}

/// Points bucketed into cubes of a fixed side, stored contiguously by cell.
struct CellList {
    dim: usize,
    side: f64,
    origin: Vec<f64>,
    keys: Vec<u128>,
    starts: Vec<usize>,
    coords: Vec<f64>,
}

impl CellList {
    fn build(cloud: &PointCloud, origin: &[f64], side: f64) -> Self {
        let dim = cloud.dim;
        let zero = vec![0.0; dim];
        let raw = cell_keys(cloud, origin, side, &zero);
        let mut order: Vec<u32> = (0..raw.len() as u32).collect();
        order.sort_unstable_by_key(|&i| (raw[i as usize], i));
        let mut keys = Vec::new();
        let mut starts = Vec::new();
        let mut coords = Vec::with_capacity(cloud.coords.len());
        for (pos, &i) in order.iter().enumerate() {
            let k = raw[i as usize];
            if keys.last() != Some(&k) {
                keys.push(k);
                starts.push(pos);
            }
            coords.extend_from_slice(cloud.point(i as usize));
        }
        starts.push(order.len());
        Self {
            dim,
            side,
            origin: origin.to_vec(),
            keys,
            starts,
            coords,
        }
    }

    fn cell_of(&self, x: &[f64]) -> [i64; 4] {
        let mut c = [0i64; 4];
        for j in 0..self.dim {
            c[j] = ((x[j] - self.origin[j]) / self.side).floor() as i64;
        }
        c
    }

    /// Number of points `y` with `|x - y| ≤ r`, where `r = reach · side`.
    fn count_within(&self, x: &[f64], r: f64, reach: i64) -> u64 {
        let dim = self.dim;
        let center = self.cell_of(x);
        let r2 = r * r;
        let mut total = 0u64;
        // iterate over all leading-coordinate combinations; the last
        // coordinate is a contiguous key range
        let lead = dim - 1;
        let span = (2 * reach + 1) as usize;
        let combos = span.pow(lead as u32);
        let mut c = [0i64; 4];
        for combo in 0..combos {
            let mut rem = combo;
            for j in 0..lead {
                c[j] = center[j] - reach + (rem % span) as i64;
                rem /= span;
            }
            // skip slabs that cannot reach the ball
            let mut gap2 = 0.0;
            for j in 0..lead {
                gap2 += axis_gap(x[j], self.origin[j] + c[j] as f64 * self.side, self.side).powi(2);
            }
            if gap2 > r2 {
                continue;
            }
            c[lead] = center[lead] - reach;
            let lo_key = pack(&c[..dim]);
            c[lead] = center[lead] + reach;
            let hi_key = pack(&c[..dim]);
            let start = self.keys.partition_point(|&k| k < lo_key);
            let end = self.keys.partition_point(|&k| k <= hi_key);
            for cell in start..end {
                let a = self.starts[cell];
                let b = self.starts[cell + 1];
                let last = unpack_last(self.keys[cell]);
                let mut far2 = 0.0;
                let mut near2 = gap2;
                for j in 0..dim {
                    let cj = if j == lead { last } else { c[j] };
                    let lo = self.origin[j] + cj as f64 * self.side;
                    far2 += axis_far(x[j], lo, self.side).powi(2);
                    if j == lead {
                        near2 += axis_gap(x[j], lo, self.side).powi(2);
                    }
                }
                if near2 > r2 {
                    continue;
                }
                if far2 <= r2 {
                    total += (b - a) as u64;
                    continue;
                }
                for p in self.coords[a * dim..b * dim].chunks_exact(dim) {
                    let d2: f64 = p.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum();
                    if d2 <= r2 {
                        total += 1;
                    }
                }
            }
        }
        total
    }
}

#[inline]
fn unpack_last(key: u128) -> i64 {
    i64::from(key as u32) - KEY_BIAS
}

#[inline]
fn axis_gap(x: f64, lo: f64, side: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > lo + side {
        x - lo - side
    } else {
        0.0
    }
}

#[inline]
fn axis_far(x: f64, lo: f64, side: f64) -> f64 {
    (x - lo).abs().max((lo + side - x).abs())
}

/// Cells per radius in each direction for the ball index.
fn reach_for(dim: usize) -> i64 {
    match dim {
        1 | 2 => 3,
        3 => 2,
        _ => 1,
    }
}

/// Query point indices drawn without replacement.
pub fn select_queries(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!("query count {count} must be in 1..={n}")));
    }
    let mut rng = chacha(seed, 0);
    let mut idx = sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `ln ν(B(x_i, r))` for each query `i` (rows) and schedule radius (columns).
pub fn ball_log_masses(cloud: &PointCloud, schedule: &RadiusSchedule, queries: &[usize]) -> Result<Vec<Vec<f64>>> {
    let origin = check_resolution(cloud, schedule)?;
    if let Some(&bad) = queries.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::OutOfRange {
            index: bad,
            len: cloud.len(),
        });
    }
    let reach = reach_for(cloud.dim);
    let ln_n = (cloud.len() as f64).ln();
    let mut out = vec![Vec::with_capacity(schedule.radii().len()); queries.len()];
    for r in schedule.radii() {
        let list = CellList::build(cloud, &origin, r / reach as f64);
        let col: Vec<f64> = queries
            .par_iter()
            .map(|&i| (list.count_within(cloud.point(i), r, reach) as f64).ln() - ln_n)
            .collect();
        for (row, v) in out.iter_mut().zip(col) {
            row.push(v);
        }
    }
    Ok(out)
}

fn ball_estimate(q: f64, masses: &[Vec<f64>], schedule: &RadiusSchedule, window: &[i32]) -> DimensionEstimate {
    let nq = masses.len() as f64;
    let points = schedule
        .levels()
        .enumerate()
        .map(|(col, level)| {
            let log_moment = if q == 1.0 {
                masses.iter().map(|row| row[col]).sum::<f64>() / nq
            } else {
                let t: Vec<f64> = masses.iter().map(|row| (q - 1.0) * row[col]).collect();
                log_sum_exp(&t) - nq.ln()
            };
            RadiusPoint {
                level,
                r: radius_of(level),
                log_moment,
            }
        })
        .collect();
    estimate_from(q, points, window)
}

/// Ball-integral estimates for several `q` from one set of ball counts.
pub fn ball_integral_moments_multi(
    cloud: &PointCloud,
    qs: &[f64],
    schedule: &RadiusSchedule,
    query_count: usize,
    seed: u64,
) -> Result<Vec<DimensionEstimate>> {
    schedule.check(cloud)?;
    for &q in qs {
        validate_q(q, false)?;
    }
    let window = schedule.window_levels()?;
    let queries = select_queries(cloud.len(), query_count, seed)?;
    let masses = ball_log_masses(cloud, schedule, &queries)?;
    Ok(qs.iter().map(|&q| ball_estimate(q, &masses, schedule, &window)).collect())
}

pub fn ball_integral_moments(
    cloud: &PointCloud,
    q: f64,
    schedule: &RadiusSchedule,
    query_count: usize,
    seed: u64,
) -> Result<DimensionEstimate> {
    Ok(ball_integral_moments_multi(cloud, &[q], schedule, query_count, seed)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalDimensionSample {
    pub index: usize,
    pub log_masses: Vec<f64>,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    /// Samples outside the binned range.
    pub outside: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalDimensionSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub iqr: f64,
    pub reference: Option<f64>,
    /// Fraction of slopes within ±0.1 of `reference`.
    pub fraction_near_reference: Option<f64>,
    pub histogram: Histogram,
    pub window: (i32, i32),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalDimensions {
    pub samples: Vec<LocalDimensionSample>,
    pub summary: LocalDimensionSummary,
}

pub fn local_dimensions(
    cloud: &PointCloud,
    schedule: &RadiusSchedule,
    query_count: usize,
    seed: u64,
    reference: Option<f64>,
) -> Result<LocalDimensions> {
    schedule.check(cloud)?;
    let window = schedule.window_levels()?;
    let queries = select_queries(cloud.len(), query_count, seed)?;
    let masses = ball_log_masses(cloud, schedule, &queries)?;
    Ok(local_from_masses(cloud.dim, schedule, &window, &queries, masses, reference))
}

fn local_from_masses(
    dim: usize,
    schedule: &RadiusSchedule,
    window: &[i32],
    queries: &[usize],
    masses: Vec<Vec<f64>>,
    reference: Option<f64>,
) -> LocalDimensions {
    let cols: Vec<usize> = schedule
        .levels()
        .enumerate()
        .filter(|(_, l)| window.contains(l))
        .map(|(c, _)| c)
        .collect();
    let xs: Vec<f64> = cols.iter().map(|&c| radius_of(schedule.l_min + c as i32).ln()).collect();
    let samples: Vec<LocalDimensionSample> = queries
        .iter()
        .zip(masses)
        .map(|(&index, row)| {
            let ys: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
            LocalDimensionSample {
                index,
                slope: fit_line(&xs, &ys).slope,
                log_masses: row,
            }
        })
        .collect();
    let summary = summarize(dim, samples.iter().map(|s| s.slope).collect(), reference, window);
    LocalDimensions { samples, summary }
}

fn summarize(dim: usize, mut slopes: Vec<f64>, reference: Option<f64>, window: &[i32]) -> LocalDimensionSummary {
    let count = slopes.len();
    let mean = slopes.iter().sum::<f64>() / count as f64;
    slopes.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let h = p * (count - 1) as f64;
        let i = h.floor() as usize;
        let j = (i + 1).min(count - 1);
        slopes[i] + (h - i as f64) * (slopes[j] - slopes[i])
    };
    let width = 0.05;
    let bins = ((dim as f64 + 0.5) / width).round() as usize;
    let mut counts = vec![0u64; bins];
    let mut outside = 0;
    for &s in &slopes {
        let b = (s / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            counts[b as usize] += 1;
        } else {
            outside += 1;
        }
    }
    LocalDimensionSummary {
        count,
        mean,
        median: quantile(0.5),
        iqr: quantile(0.75) - quantile(0.25),
        reference,
        fraction_near_reference: reference
            .map(|r| slopes.iter().filter(|&&s| (s - r).abs() <= 0.1).count() as f64 / count as f64),
        histogram: Histogram {
            lo: 0.0,
            width,
            counts,
            outside,
        },
        window: (window[0], *window.last().expect("window is nonempty")),
    }
}

pub const BRACKET_QS: [f64; 7] = [0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2];
pub const BRACKET_SLACK: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketReport {
    pub qs: Vec<f64>,
    pub mesh: Vec<f64>,
    pub local_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub slack: f64,
    /// `D^{1.05} - slack ≤ local mean ≤ D^{0.95} + slack`; diagnostic only.
    pub ordered: bool,
}

pub fn q_bracket_check(cloud: &PointCloud, schedule: &RadiusSchedule, query_count: usize, seed: u64) -> Result<BracketReport> {
    let mesh: Vec<f64> = mesh_moments_multi(cloud, &BRACKET_QS, schedule)?
        .iter()
        .map(|e| e.value)
        .collect();
    let local = local_dimensions(cloud, schedule, query_count.min(cloud.len()), seed, None)?;
    let at = |q: f64| mesh[BRACKET_QS.iter().position(|&x| x == q).expect("q in bracket grid")];
    let (lower, upper) = (at(1.05), at(0.95));
    let m = local.summary.mean;
    Ok(BracketReport {
        qs: BRACKET_QS.to_vec(),
        mesh,
        local_mean: m,
        lower,
        upper,
        slack: BRACKET_SLACK,
        ordered: lower - BRACKET_SLACK <= m && m <= upper + BRACKET_SLACK,
    })
}
