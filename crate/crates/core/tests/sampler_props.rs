use affinedim::matrix::Matrix;
use affinedim::measure::SymbolicMeasure;
use affinedim::rng::derive_seed;
use affinedim::sampler::{point_at, sample_cloud, AffineIfs, Domain, TranslationModel};
use proptest::prelude::*;

fn maps() -> Vec<Matrix> {
    vec![
        Matrix::from_rows(&[vec![0.45, 0.1], vec![-0.05, 0.3]]).unwrap(),
        Matrix::rotation(1.1).scaled(0.4),
        Matrix::diag(&[0.2, 0.35]),
    ]
}

fn model(kind: u8, seed: u64) -> TranslationModel {
    match kind {
        0 => TranslationModel::FixedPerMap {
            vectors: vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![-0.3, 1.0]],
        },
        1 => TranslationModel::RandomPerMap { radius: 1.5, seed },
        _ => TranslationModel::RandomPerNode {
            domain: Domain::Box {
                lo: vec![-1.0, -0.5],
                hi: vec![0.5, 1.0],
            },
            seed,
        },
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_and_containment(
        kind in 0u8..3,
        seed in any::<u64>(),
        word in prop::collection::vec(0u16..3, 1..30),
        tail in prop::collection::vec(0u16..3, 1..10),
    ) {
        let model = model(kind, seed);
        let ifs = AffineIfs::for_model(maps(), &model).unwrap();
        let tr = model.realize(&ifs).unwrap();
        let a = point_at(&ifs, &tr, &word).unwrap();
        let mut ext = word.clone();
        ext.extend(&tail);
        let b = point_at(&ifs, &tr, &ext).unwrap();
        let bound = ifs.alpha_plus().powi(word.len() as i32) * 2.0 * ifs.bounding_radius();
        prop_assert!(dist(&a, &b) <= bound * (1.0 + 1e-12));
        prop_assert!(dist(&b, &[0.0, 0.0]) <= ifs.bounding_radius());
    }
}

#[test]
fn empirical_measure_is_self_affine() {
    let model = model(0, 0);
    let ifs = AffineIfs::for_model(maps(), &model).unwrap();
    let tr = model.realize(&ifs).unwrap();
    let p = [0.5, 0.3, 0.2];
    let mu = SymbolicMeasure::bernoulli(p.to_vec()).unwrap();
    let n = 1_000_000;
    let cloud = sample_cloud(&ifs, &tr, &mu, n, ifs.default_depth(), 11).unwrap();
    let TranslationModel::FixedPerMap { vectors } = &model else { unreachable!() };
    let boxes = [([0.0, 0.0], [0.6, 0.5]), ([-0.4, 0.3], [0.3, 1.2]), ([0.2, -0.2], [1.3, 0.4])];
    for (lo, hi) in boxes {
        let inside = |x: &[f64]| x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1];
        let direct = cloud.points().filter(|x| inside(x)).count() as f64 / n as f64;
        let pulled: f64 = (0..3)
            .map(|i| {
                let hits = cloud
                    .points()
                    .filter(|x| {
                        let y = ifs.maps()[i].apply(x);
                        inside(&[y[0] + vectors[i][0], y[1] + vectors[i][1]])
                    })
                    .count();
                p[i] * hits as f64 / n as f64
            })
            .sum();
        let sigma = (2.0 * direct * (1.0 - direct) / n as f64).sqrt();
        assert!(direct > 0.01, "test box misses the attractor");
        assert!((direct - pulled).abs() <= 4.0 * sigma, "{direct} vs {pulled} (σ = {sigma})");
    }
}

#[test]
fn sampled_points_match_point_at() {
    let mu = SymbolicMeasure::bernoulli(vec![0.2, 0.5, 0.3]).unwrap();
    for kind in 0..3 {
        let model = model(kind, 21);
        let ifs = AffineIfs::for_model(maps(), &model).unwrap();
        let tr = model.realize(&ifs).unwrap();
        let cloud = sample_cloud(&ifs, &tr, &mu, 50, 35, 4).unwrap();
        for r in 0..50 {
            let word = mu.sample_stream(derive_seed(4, r as u64)).prefix(35).to_vec();
            let want = point_at(&ifs, &tr, &word).unwrap();
            assert!(dist(cloud.point(r), &want) < 1e-14);
        }
    }
}

#[test]
fn clouds_do_not_depend_on_thread_count() {
    let mu = SymbolicMeasure::markov(&[vec![1.0, 2.0, 1.0], vec![1.0, 1.0, 3.0], vec![2.0, 1.0, 1.0]]).unwrap();
    for kind in 0..3 {
        let model = model(kind, 5);
        let ifs = AffineIfs::for_model(maps(), &model).unwrap();
        let tr = model.realize(&ifs).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_cloud(&ifs, &tr, &mu, 20_000, 40, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
