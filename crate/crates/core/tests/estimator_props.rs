use affinedim::estimators::{
    ball_integral_moments_multi, local_dimensions, mesh_moments_multi, q_bracket_check, RadiusSchedule,
};
use affinedim::matrix::Matrix;
use affinedim::measure::SymbolicMeasure;
use affinedim::rng::chacha;
use affinedim::sampler::{sample_cloud, AffineIfs, PointCloud, TranslationModel};
use rand::Rng;

fn cantor(n: usize, p: &[f64], seed: u64) -> PointCloud {
    let model = TranslationModel::FixedPerMap {
        vectors: vec![vec![0.0], vec![2.0 / 3.0]],
    };
    let ifs = AffineIfs::for_model(vec![Matrix::identity(1).scaled(1.0 / 3.0); 2], &model).unwrap();
    let tr = model.realize(&ifs).unwrap();
    let mu = SymbolicMeasure::bernoulli(p.to_vec()).unwrap();
    sample_cloud(&ifs, &tr, &mu, n, ifs.default_depth(), seed).unwrap()
}

fn square(n: usize, seed: u64) -> PointCloud {
    let mut rng = chacha(seed, 0);
    PointCloud::new(2, (0..2 * n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// `d_q` of the two-map Cantor measure with ratio 1/3.
fn cantor_dq(p: &[f64], q: f64) -> f64 {
    let log3 = 3f64.ln();
    if q == 1.0 {
        -p.iter().map(|p| p * p.ln()).sum::<f64>() / log3
    } else {
        p.iter().map(|p| p.powf(q)).sum::<f64>().ln() / ((1.0 - q) * log3)
    }
}

#[test]
fn weighted_cantor_decreasing_in_q_and_consistent() {
    let p = [0.7, 0.3];
    let cloud = cantor(1_000_000, &p, 3);
    let s = RadiusSchedule::new(0, 22).unwrap();
    let qs = [0.5, 1.0, 2.0, 3.0];
    let mesh = mesh_moments_multi(&cloud, &qs, &s).unwrap();
    let ball = ball_integral_moments_multi(&cloud, &qs, &s, 2000, 5).unwrap();
    for w in mesh.windows(2) {
        assert!(w[1].value < w[0].value, "{} then {}", w[0].value, w[1].value);
    }
    for (i, (m, b)) in mesh.iter().zip(&ball).enumerate() {
        assert!((m.value - cantor_dq(&p, qs[i])).abs() < 0.05, "q = {}: {}", qs[i], m.value);
        assert!((m.value - b.value).abs() <= 0.05, "q = {}: mesh {} ball {}", qs[i], m.value, b.value);
        assert!(m.value >= 0.0 && m.value <= 1.1 && b.value >= 0.0 && b.value <= 1.1);
    }
    let bracket = q_bracket_check(&cloud, &s, 1000, 2).unwrap();
    for w in bracket.mesh.windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn scaling_leaves_slopes_unchanged() {
    let cloud = cantor(300_000, &[0.5, 0.5], 8);
    let lambda = 2.5;
    let scaled = PointCloud::new(1, cloud.coords.iter().map(|x| lambda * x).collect()).unwrap();
    let qs = [0.5, 1.0, 2.0];
    let a = mesh_moments_multi(&cloud, &qs, &RadiusSchedule::new(0, 18).unwrap()).unwrap();
    let b = mesh_moments_multi(&scaled, &qs, &RadiusSchedule::new(-1, 17).unwrap()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.value - y.value).abs() < 0.01, "{} vs {}", x.value, y.value);
    }
}

#[test]
fn square_bracket_and_local_dimensions() {
    let cloud = square(1_000_000, 4);
    let s = RadiusSchedule::new(2, 10).unwrap();
    let report = q_bracket_check(&cloud, &s, 2000, 1).unwrap();
    for v in &report.mesh {
        assert!((v - 2.0).abs() < 0.05, "{v}");
    }
    assert!(report.ordered);
    assert!((report.local_mean - 2.0).abs() < 0.05);
    let local = local_dimensions(&cloud, &s, 2000, 1, Some(2.0)).unwrap();
    assert!(local.summary.fraction_near_reference.unwrap() > 0.5);
    assert!((local.summary.median - 2.0).abs() < 0.05);
}

#[test]
fn cantor_local_mean() {
    let cloud = cantor(1_000_000, &[0.5, 0.5], 12);
    let local = local_dimensions(&cloud, &RadiusSchedule::new(0, 22).unwrap(), 2000, 3, None).unwrap();
    let target = 2f64.ln() / 3f64.ln();
    assert!((local.summary.mean - target).abs() < 0.05, "{}", local.summary.mean);
}

#[test]
fn local_iqr_shrinks_with_cloud_size() {
    let iqr: Vec<f64> = [10_000, 100_000, 1_000_000]
        .iter()
        .map(|&n| {
            let cloud = square(n, 10);
            // same radii at every size, so only the sampling noise changes
            let s = RadiusSchedule::new(1, 6).unwrap().with_trim(0, 0);
            local_dimensions(&cloud, &s, 1000, 2, None).unwrap().summary.iqr
        })
        .collect();
    assert!(iqr[0] > iqr[1] && iqr[1] > iqr[2], "{iqr:?}");
}

#[test]
fn point_mass_gives_zeros() {
    let cloud = PointCloud::new(2, [0.3, -0.2].repeat(5000)).unwrap();
    let s = RadiusSchedule::new(0, 8).unwrap();
    let report = q_bracket_check(&cloud, &s, 100, 0).unwrap();
    assert!(report.mesh.iter().all(|v| v.abs() < 1e-12));
    assert!(report.local_mean.abs() < 1e-12);
}
