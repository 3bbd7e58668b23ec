//! Command implementations. Each writes its artifacts into the output
//! directory and returns whether its checks passed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use affinedim::cloud_io;
use affinedim::estimators::{
    ball_integral_moments_multi, local_dimensions, mesh_moments_multi, q_bracket_check, BracketReport,
    DimensionEstimate, LocalDimensionSummary, RadiusSchedule,
};
use affinedim::matrix::Matrix;
use affinedim::measure::SymbolicMeasure;
use affinedim::pressure::{DimensionValue, DqCurve, LeftLimit, PressureQuery, PressureSettings, PressureSystem, SolveSettings};
use affinedim::sampler::{pairwise_kernel_stats, sample_cloud, AffineIfs, KernelSettings, KernelStats, PointCloud, TranslationModel};
use affinedim::Error;
use serde::Serialize;

use crate::config::{seeds, CloudFormat, MeasureConfig, RunConfig};
use crate::error::CliError;

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    fn write_resolved(&self) -> Result<(), CliError> {
        self.write_json("resolved_config.json", &self.config)
    }
}

fn system(cfg: &RunConfig) -> Result<PressureSystem, CliError> {
    let sys = PressureSystem::new(cfg.maps()?, cfg.measure()?)?;
    Ok(sys.with_cap(cfg.pressure.cap))
}

fn check_grid(name: &str, grid: &[f64]) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage(format!("{name} is empty")));
    }
    if let Some(x) = grid.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(CliError::Usage(format!("{name} contains invalid value {x}")));
    }
    Ok(())
}

pub fn cmd_pressure(ctx: &mut Context) -> Result<bool, CliError> {
    let cfg = &ctx.config;
    check_grid("pressure.q_grid", &cfg.pressure.q_grid)?;
    check_grid("pressure.s_grid", &cfg.pressure.s_grid)?;
    let sys = system(cfg)?;
    let settings = PressureSettings {
        k_max: cfg.pressure.k_max,
        mc_depths: cfg.pressure.mc_depths.clone(),
        mc_samples: cfg.pressure.mc_samples,
        seed: cfg.seed(seeds::MONTE_CARLO),
    };
    let mut tsv = String::from("q\ts\tk\tmethod\tP_k\tcorrected\tstderr\tfekete\textrapolated\n");
    let mut mc = String::from("q\ts\tk\tP_k\tstderr\tsamples\n");
    for &q in &cfg.pressure.q_grid {
        for &s in &cfg.pressure.s_grid {
            let query = PressureQuery::new(s, q)?;
            let res = sys.pressure(query, &settings)?;
            for l in &res.levels {
                let method = match l.method {
                    affinedim::pressure::LevelMethod::Exhaustive => "exhaustive",
                    affinedim::pressure::LevelMethod::MonteCarlo => "monte_carlo",
                };
                let stderr = l.stderr.map_or_else(|| "NA".to_string(), |e| e.to_string());
                writeln!(
                    tsv,
                    "{q}\t{s}\t{}\t{method}\t{}\t{}\t{stderr}\t{}\t{}",
                    l.level, l.value, l.corrected, res.fekete_bound, res.extrapolated
                )
                .unwrap();
            }
            for e in &res.mc_estimates {
                writeln!(mc, "{q}\t{s}\t{}\t{}\t{}\t{}", e.level, e.value, e.stderr, e.samples).unwrap();
            }
        }
    }
    ctx.write_text("pressure.tsv", &tsv)?;
    if !cfg.pressure.mc_depths.is_empty() && cfg.pressure.mc_samples > 0 {
        ctx.write_text("pressure_mc.tsv", &mc)?;
    }
    ctx.write_resolved()?;
    Ok(true)
}

#[derive(Clone, Debug, Serialize)]
pub struct Theory {
    pub level: usize,
    pub tol: f64,
    pub dim: usize,
    pub affinity_dimension: Option<f64>,
    pub d1: f64,
    pub d1_working_level: f64,
    pub d1_interval: (f64, f64),
    pub left_limit: LeftLimit,
    pub min_d1_n: f64,
    pub min_left_limit_n: f64,
    pub curve: Vec<DimensionValue>,
}

fn solve_settings(cfg: &RunConfig) -> SolveSettings {
    SolveSettings {
        tol: cfg.dq.tol,
        level: cfg.dq_level(),
        s_cap: cfg.dq.s_cap,
        ..SolveSettings::default()
    }
}

/// `d_q` on `grid ∪ extra`, with `d_1` and the left limit at 1.
pub fn theory(cfg: &RunConfig, grid: &[f64]) -> Result<Theory, CliError> {
    let sys = system(cfg)?;
    let mut g: Vec<f64> = grid.iter().copied().chain([1.0]).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    let settings = solve_settings(cfg);
    let curve: DqCurve = sys.dq_curve(&g, &settings)?;
    let d1 = curve.at(1.0).expect("grid contains 1");
    let n = sys.dim() as f64;
    Ok(Theory {
        level: settings.level,
        tol: settings.tol,
        dim: sys.dim(),
        affinity_dimension: curve.at(0.0).map(DimensionValue::best),
        d1: d1.best(),
        d1_working_level: d1.d_q,
        d1_interval: (d1.lo, d1.hi),
        min_d1_n: d1.best().min(n),
        min_left_limit_n: curve.left_limit.estimate.min(n),
        left_limit: curve.left_limit.clone(),
        curve: curve.values,
    })
}

pub fn cmd_dq(ctx: &mut Context) -> Result<bool, CliError> {
    check_grid("dq.q_grid", &ctx.config.dq.q_grid)?;
    let mut grid = ctx.config.dq.q_grid.clone();
    grid.push(0.0);
    let th = theory(&ctx.config, &grid)?;
    ctx.config.dq.level = Some(th.level);
    let mut tsv = String::from("q\td_q\tlo\thi\tresidual_bound\tcertified_upper\textrapolated\n");
    for v in &th.curve {
        let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |x| x.to_string());
        writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            v.q,
            v.d_q,
            v.lo,
            v.hi,
            v.residual_bound,
            opt(v.certified_upper),
            opt(v.extrapolated)
        )
        .unwrap();
    }
    ctx.write_text("dq.tsv", &tsv)?;
    ctx.write_json("dq.json", &th)?;
    ctx.write_resolved()?;
    Ok(true)
}

struct Sampled {
    ifs: AffineIfs,
    model: TranslationModel,
    measure: SymbolicMeasure,
    cloud: PointCloud,
}

fn sample(ctx: &mut Context) -> Result<Sampled, CliError> {
    let cfg = &ctx.config;
    if cfg.sampling.n == 0 {
        return Err(CliError::Usage("sampling.n must be positive".into()));
    }
    let maps = cfg.maps()?;
    let model = cfg.translation_model();
    let ifs = AffineIfs::for_model(maps, &model)?;
    let measure = cfg.measure()?;
    let tr = model.realize(&ifs)?;
    let depth = cfg.sampling.depth.unwrap_or_else(|| ifs.default_depth());
    let seed = cfg.seed(seeds::SAMPLING);
    let mut cloud = sample_cloud(&ifs, &tr, &measure, cfg.sampling.n, depth, seed)?;
    cloud
        .provenance
        .seeds
        .insert(0, ("translations".into(), cfg.seed(seeds::TRANSLATIONS)));
    cloud.provenance.seeds.insert(0, ("master".into(), cfg.seed));
    ctx.config.sampling.depth = Some(depth);
    Ok(Sampled {
        ifs,
        model,
        measure,
        cloud,
    })
}

pub fn cmd_sample(ctx: &mut Context) -> Result<bool, CliError> {
    let s = sample(ctx)?;
    let name = match ctx.config.sampling.format {
        CloudFormat::Binary => "cloud.afpc",
        CloudFormat::Csv => "cloud.csv",
    };
    let path = ctx.path(name);
    match ctx.config.sampling.format {
        CloudFormat::Binary => cloud_io::write_binary(&s.cloud, &path)?,
        CloudFormat::Csv => cloud_io::write_csv(&s.cloud, &path)?,
    }
    cloud_io::write_sidecar(&s.cloud, &cloud_io::sidecar_path(&path))?;
    if ctx.config.sampling.svg && s.cloud.dim == 2 {
        let svg = cloud_io::render_svg(&s.cloud, ctx.config.sampling.svg_points)?;
        ctx.write_text("cloud.svg", &svg)?;
    }
    ctx.write_resolved()?;
    Ok(true)
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimates {
    pub n: usize,
    pub dim: usize,
    pub truncation_error: f64,
    pub schedule: RadiusSchedule,
    pub query_count: usize,
    pub query_seed: u64,
    pub mesh: Vec<EstimateSummary>,
    pub ball: Vec<EstimateSummary>,
    pub local: LocalDimensionSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateSummary {
    pub q: f64,
    pub value: f64,
    pub intercept: f64,
    pub residual: f64,
    pub window: (i32, i32),
}

impl From<&DimensionEstimate> for EstimateSummary {
    fn from(e: &DimensionEstimate) -> Self {
        Self {
            q: e.q,
            value: e.value,
            intercept: e.intercept,
            residual: e.residual,
            window: e.window,
        }
    }
}

struct EstimateRun {
    summary: Estimates,
    mesh: Vec<DimensionEstimate>,
    ball: Vec<DimensionEstimate>,
}

fn estimate(ctx: &mut Context, cloud: &PointCloud, qs: &[f64], reference: Option<f64>) -> Result<EstimateRun, CliError> {
    let cfg = &ctx.config.estimator;
    let schedule = match &cfg.schedule {
        Some(s) => s.clone(),
        None => RadiusSchedule::auto(cloud, cfg.min_occupancy)?,
    };
    let queries = cfg.query_count.min(cloud.len());
    let query_seed = ctx.config.seed(seeds::QUERIES);
    let mesh = mesh_moments_multi(cloud, qs, &schedule)?;
    let ball_qs: Vec<f64> = qs.iter().copied().filter(|&q| q > 0.0).collect();
    let ball = if ball_qs.is_empty() {
        Vec::new()
    } else {
        ball_integral_moments_multi(cloud, &ball_qs, &schedule, queries, query_seed)?
    };
    let local = local_dimensions(cloud, &schedule, queries, query_seed, reference)?;
    ctx.config.estimator.schedule = Some(schedule.clone());
    Ok(EstimateRun {
        summary: Estimates {
            n: cloud.len(),
            dim: cloud.dim,
            truncation_error: cloud.truncation_error,
            schedule,
            query_count: queries,
            query_seed,
            mesh: mesh.iter().map(Into::into).collect(),
            ball: ball.iter().map(Into::into).collect(),
            local: local.summary,
        },
        mesh,
        ball,
    })
}

fn estimate_tsv(run: &EstimateRun) -> String {
    let mut tsv = String::from("estimator\tq\tl\tr\tlog_moment\n");
    for (name, list) in [("mesh", &run.mesh), ("ball", &run.ball)] {
        for e in list {
            for p in &e.points {
                writeln!(tsv, "{name}\t{}\t{}\t{}\t{}", e.q, p.level, p.r, p.log_moment).unwrap();
            }
        }
    }
    tsv
}

#[derive(Serialize)]
struct EstimateReport {
    cloud: affinedim::sampler::Provenance,
    estimates: Estimates,
    q_bracket: BracketReport,
}

pub fn cmd_estimate(ctx: &mut Context) -> Result<bool, CliError> {
    let input = ctx
        .config
        .input
        .clone()
        .ok_or_else(|| CliError::Usage("estimate needs `input`: path to a csv or AFPC1 cloud".into()))?;
    let cloud = cloud_io::read_cloud(Path::new(&input))?;
    let qs = ctx.config.estimator.q_values.clone();
    check_grid("estimator.q_values", &qs)?;
    let run = estimate(ctx, &cloud, &qs, None)?;
    let schedule = run.summary.schedule.clone();
    let bracket = q_bracket_check(&cloud, &schedule, run.summary.query_count, run.summary.query_seed)?;
    ctx.write_text("estimate.tsv", &estimate_tsv(&run))?;
    ctx.write_json(
        "estimate.json",
        &EstimateReport {
            cloud: cloud.provenance.clone(),
            estimates: run.summary,
            q_bracket: bracket,
        },
    )?;
    ctx.write_resolved()?;
    Ok(true)
}

#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Criterion {
    fn within(name: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance,
            pass: (value - target).abs() <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub translations: u64,
    pub sampling: u64,
    pub queries: u64,
    pub kernel: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    SelfAffine,
    AlmostSelfAffine,
}

#[derive(Clone, Debug, Serialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    /// Rows of the weight matrix coincide, so the measure is Bernoulli.
    pub bernoulli_equivalent: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub command: String,
    pub pipeline: Pipeline,
    /// Empty for randomized translations.
    pub label: Option<String>,
    pub theory: Theory,
    pub bracket: Option<Bracket>,
    pub empirical: Estimates,
    pub kernel: Option<KernelStats>,
    pub criteria: Vec<Criterion>,
    pub seeds: Seeds,
    pub sampling_depth: usize,
    pub pass: bool,
}

const NON_GENERIC: &str = "non-generic: theorem gives no guarantee for fixed translations";

/// Norm bound required by the pipeline matching the translation model.
fn check_hypotheses(maps: &[Matrix], model: &TranslationModel) -> Result<Pipeline, CliError> {
    let (pipeline, bound) = if model.is_per_node() {
        (Pipeline::AlmostSelfAffine, 1.0)
    } else {
        (Pipeline::SelfAffine, 0.5)
    };
    for (i, t) in maps.iter().enumerate() {
        let norm = t.norm()?;
        if !(norm < bound) {
            let msg = match pipeline {
                Pipeline::SelfAffine => format!(
                    "‖T_{}‖ = {norm} but the self-affine pipeline assumes ‖T_i‖ < 1/2 for all i; use random_per_node translations, which only need ‖T_i‖ < 1",
                    i + 1
                ),
                Pipeline::AlmostSelfAffine => format!(
                    "‖T_{}‖ = {norm} but the almost self-affine pipeline assumes ‖T_i‖ < 1",
                    i + 1
                ),
            };
            return Err(CliError::Math(Error::HypothesisViolated(msg)));
        }
    }
    Ok(pipeline)
}

/// Default kernel exponent: `0.9 · min(d_1, N)` moved off integers.
pub fn kernel_exponent(min_d1_n: f64) -> f64 {
    let s = 0.9 * min_d1_n;
    if (s - s.round()).abs() < 0.01 {
        s.round() - 0.01
    } else {
        s
    }
}

fn run_kernel(ctx: &mut Context, s: &Sampled, min_d1_n: f64) -> Result<Option<KernelStats>, CliError> {
    let kc = ctx.config.kernel.clone();
    if !kc.enabled || !s.model.is_randomized() {
        return Ok(None);
    }
    let exponent = kc.s.unwrap_or_else(|| kernel_exponent(min_d1_n));
    let depth = kc.depth.unwrap_or(kc.max_prefix + 31);
    let settings = KernelSettings {
        s: exponent,
        n_pairs: kc.n_pairs,
        n_draws: kc.n_draws,
        depth,
        max_prefix: kc.max_prefix,
        seed: ctx.config.seed(seeds::KERNEL),
    };
    let stats = pairwise_kernel_stats(&s.ifs, &s.model, &s.measure, &settings)?;
    ctx.config.kernel.s = Some(exponent);
    ctx.config.kernel.depth = Some(depth);
    Ok(Some(stats))
}

fn seeds_of(cfg: &RunConfig) -> Seeds {
    Seeds {
        master: cfg.seed,
        translations: cfg.seed(seeds::TRANSLATIONS),
        sampling: cfg.seed(seeds::SAMPLING),
        queries: cfg.seed(seeds::QUERIES),
        kernel: cfg.seed(seeds::KERNEL),
    }
}

fn finish_report(ctx: &Context, name: &str, report: &VerificationReport, run: &EstimateRun) -> Result<(), CliError> {
    ctx.write_json(name, report)?;
    ctx.write_text("estimate.tsv", &estimate_tsv(run))?;
    let mut tsv = String::from("prefix_len\tmean_kernel\tmean_bound\tratio\tpairs\tdegenerate\n");
    if let Some(k) = &report.kernel {
        for r in &k.rows {
            writeln!(
                tsv,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.prefix_len, r.mean_kernel, r.mean_bound, r.ratio, r.pairs, r.degenerate
            )
            .unwrap();
        }
        ctx.write_text("kernel.tsv", &tsv)?;
    }
    ctx.write_resolved()
}

pub fn cmd_verify(ctx: &mut Context) -> Result<bool, CliError> {
    let maps = ctx.config.maps()?;
    let model = ctx.config.translation_model();
    let pipeline = check_hypotheses(&maps, &model)?;
    let th = theory(&ctx.config, &ctx.config.dq.q_grid.clone())?;
    ctx.config.dq.level = Some(th.level);
    let s = sample(ctx)?;
    let run = estimate(ctx, &s.cloud, &[1.0], Some(th.min_d1_n))?;
    let kernel = run_kernel(ctx, &s, th.min_d1_n)?;
    let tol = ctx.config.verify.tolerance;
    let mut criteria = vec![
        Criterion::within("information_dimension", run.mesh[0].value, th.min_d1_n, tol),
        Criterion::within("local_dimension_mean", run.summary.local.mean, th.min_d1_n, tol),
    ];
    if let Some(k) = &kernel {
        criteria.push(Criterion {
            name: "kernel_ratio_spread".into(),
            value: k.spread,
            target: 1.0,
            tolerance: ctx.config.kernel.spread_limit,
            pass: k.spread < ctx.config.kernel.spread_limit,
        });
    }
    let pass = criteria.iter().all(|c| c.pass);
    let report = VerificationReport {
        command: "verify".into(),
        pipeline,
        label: (!model.is_randomized()).then(|| NON_GENERIC.to_string()),
        theory: th,
        bracket: None,
        empirical: run.summary.clone(),
        kernel,
        criteria,
        seeds: seeds_of(&ctx.config),
        sampling_depth: ctx.config.sampling.depth.expect("set by sampling"),
        pass,
    };
    finish_report(ctx, "report.json", &report, &run)?;
    Ok(pass)
}

pub fn cmd_gibbs_bracket(ctx: &mut Context) -> Result<bool, CliError> {
    let MeasureConfig::Markov { weights } = &ctx.config.measure else {
        return Err(CliError::Usage("gibbs-bracket needs a markov measure".into()));
    };
    let bernoulli_equivalent = weights.windows(2).all(|w| w[0] == w[1]);
    let maps = ctx.config.maps()?;
    let model = ctx.config.translation_model();
    let pipeline = check_hypotheses(&maps, &model)?;
    let th = theory(&ctx.config, &[1.0])?;
    ctx.config.dq.level = Some(th.level);
    let bracket = Bracket {
        lower: th.min_d1_n,
        upper: th.min_left_limit_n,
        width: th.min_left_limit_n - th.min_d1_n,
        bernoulli_equivalent,
    };
    let s = sample(ctx)?;
    let run = estimate(ctx, &s.cloud, &[1.0], None)?;
    let slack = ctx.config.verify.bracket_slack;
    let mean = run.summary.local.mean;
    let lo = bracket.lower.min(bracket.upper);
    let hi = bracket.lower.max(bracket.upper);
    let mut criteria = vec![Criterion {
        name: "local_mean_in_bracket".into(),
        value: mean,
        target: 0.5 * (lo + hi),
        tolerance: 0.5 * (hi - lo) + slack,
        pass: lo - slack <= mean && mean <= hi + slack,
    }];
    if bernoulli_equivalent {
        criteria.push(Criterion {
            name: "bracket_width".into(),
            value: bracket.width,
            target: 0.0,
            tolerance: 2.0 * th.tol,
            pass: bracket.width.abs() <= 2.0 * th.tol,
        });
    }
    let pass = criteria.iter().all(|c| c.pass);
    let report = VerificationReport {
        command: "gibbs-bracket".into(),
        pipeline,
        label: (!model.is_randomized()).then(|| NON_GENERIC.to_string()),
        theory: th,
        bracket: Some(bracket),
        empirical: run.summary.clone(),
        kernel: None,
        criteria,
        seeds: seeds_of(&ctx.config),
        sampling_depth: ctx.config.sampling.depth.expect("set by sampling"),
        pass,
    };
    finish_report(ctx, "gibbs_report.json", &report, &run)?;
    Ok(pass)
}
