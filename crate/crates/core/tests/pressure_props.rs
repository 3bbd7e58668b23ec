use affinedim::matrix::Matrix;
use affinedim::measure::SymbolicMeasure;
use affinedim::pressure::{PressureQuery, PressureSettings, PressureSystem, SolveSettings};
use proptest::prelude::*;

fn contraction(entries: [f64; 4], norm: f64) -> Option<Matrix> {
    let m = Matrix::from_rows(&[vec![entries[0], entries[1]], vec![entries[2], entries[3]]]).ok()?;
    let sv = m.singular_values().ok()?;
    (sv.smallest() > 0.05 * sv.largest()).then(|| m.scaled(norm / sv.largest()))
}

fn entries() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lipschitz_and_q_monotone(
        a in entries(), b in entries(),
        na in 0.2..0.95f64, nb in 0.2..0.95f64,
        p in 0.1..0.9f64, s in 0.0..4.0f64, h in 0.0..1.0f64,
    ) {
        let (Some(ta), Some(tb)) = (contraction(a, na), contraction(b, nb)) else { return Ok(()) };
        let sys = PressureSystem::new(vec![ta, tb], SymbolicMeasure::bernoulli(vec![p, 1.0 - p]).unwrap()).unwrap();
        let (am, ap) = sys.alpha_bounds();
        let mut prev = f64::NEG_INFINITY;
        for q in [0.0, 0.5, 0.9, 1.0, 1.1, 2.0] {
            let lo = sys.pressure_level(PressureQuery::new(s, q).unwrap(), 7).unwrap();
            let hi = sys.pressure_level(PressureQuery::new(s + h, q).unwrap(), 7).unwrap();
            prop_assert!(hi - lo >= h * (1.0 / ap).ln() - 1e-10);
            prop_assert!(hi - lo <= h * (1.0 / am).ln() + 1e-10);
            prop_assert!(lo >= prev - 1e-10);
            prev = lo;
        }
    }

    #[test]
    fn fekete_bound_below_extrapolation(
        a in entries(), b in entries(), p in 0.1..0.9f64, s in 0.2..2.5f64, q in 0.0..3.0f64,
    ) {
        let (Some(ta), Some(tb)) = (contraction(a, 0.6), contraction(b, 0.45)) else { return Ok(()) };
        let sys = PressureSystem::new(vec![ta, tb], SymbolicMeasure::bernoulli(vec![p, 1.0 - p]).unwrap()).unwrap();
        let settings = PressureSettings { k_max: 10, mc_depths: vec![], mc_samples: 0, seed: 0 };
        let r = sys.pressure(PressureQuery::new(s, q).unwrap(), &settings).unwrap();
        prop_assert!(r.fekete_bound <= r.extrapolated + 1e-9, "{} > {}", r.fekete_bound, r.extrapolated);
    }
}

fn similarity_markov(r: f64, weights: &[Vec<f64>]) -> PressureSystem {
    let maps = (0..weights.len()).map(|i| Matrix::rotation(i as f64).scaled(r)).collect();
    PressureSystem::new(maps, SymbolicMeasure::markov(weights).unwrap()).unwrap()
}

/// Transition matrix of the Markov measure with the given weights, computed
/// from a power-iterated right Perron vector.
fn transitions(w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = w.len();
    let mut h = vec![1.0; m];
    let mut lambda = 1.0;
    for _ in 0..5000 {
        let next: Vec<f64> = (0..m).map(|i| (0..m).map(|j| w[i][j] * h[j]).sum()).collect();
        lambda = next.iter().copied().fold(0.0, f64::max);
        h = next.iter().map(|x| x / lambda).collect();
    }
    (0..m).map(|i| (0..m).map(|j| w[i][j] * h[j] / (lambda * h[i])).collect()).collect()
}

fn spectral_radius(a: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let mut v = vec![1.0; m];
    let mut lambda = 1.0;
    for _ in 0..5000 {
        let next: Vec<f64> = (0..m).map(|i| (0..m).map(|j| a[i][j] * v[j]).sum()).collect();
        lambda = next.iter().copied().fold(0.0, f64::max);
        v = next.iter().map(|x| x / lambda).collect();
    }
    lambda
}

fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let m = p.len();
    let mut pi = vec![1.0 / m as f64; m];
    for _ in 0..5000 {
        pi = (0..m).map(|j| (0..m).map(|i| pi[i] * p[i][j]).sum()).collect();
    }
    pi
}

/// Root of the level-`k` pressure: `Σ_{|w|=k} μ(w)^q = π^q (P^q)^{k-1} 1`.
fn level_root(p: &[Vec<f64>], r: f64, q: f64, k: usize) -> f64 {
    let m = p.len();
    let mut v: Vec<f64> = stationary(p).iter().map(|x| x.powf(q)).collect();
    for _ in 1..k {
        v = (0..m).map(|j| (0..m).map(|i| v[i] * p[i][j].powf(q)).sum()).collect();
    }
    v.iter().sum::<f64>().ln() / (k as f64 * (q - 1.0) * r.ln())
}

#[test]
fn markov_closed_form_on_similarities() {
    let r: f64 = 0.3;
    let level = 12;
    let settings = SolveSettings {
        tol: 1e-11,
        level,
        ..SolveSettings::default()
    };
    for (w, converged) in [
        (vec![vec![2.0, 1.0], vec![1.0, 1.0]], true),
        // slowly mixing: the level-12 values are still far from the limit
        (vec![vec![1.0, 3.0, 0.5], vec![2.0, 0.2, 1.0], vec![0.7, 0.7, 4.0]], false),
    ] {
        let p = transitions(&w);
        let sys = similarity_markov(r, &w);
        for q in [0.0, 0.5, 2.0, 3.0] {
            let pq: Vec<Vec<f64>> = p.iter().map(|row| row.iter().map(|x| x.powf(q)).collect()).collect();
            let limit = spectral_radius(&pq).ln() / ((q - 1.0) * r.ln());
            let v = sys.solve_dq(q, &settings).unwrap();
            let at_level = level_root(&p, r, q, level);
            assert!((v.d_q - at_level).abs() < 1e-9, "q = {q}: {} vs {at_level}", v.d_q);
            let err = (v.best() - limit).abs();
            if converged {
                assert!(err < 1e-7, "q = {q}: {} vs {limit}", v.best());
            } else {
                assert!(err < 0.1 * (v.d_q - limit).abs() + 1e-9, "q = {q}: extrapolation did not help");
            }
        }
        let curve = sys.dq_curve(&[0.5, 1.0], &settings).unwrap();
        let d1 = curve.at(1.0).unwrap().best();
        let m = w.len();
        let pi = stationary(&p);
        let h_ks = -(0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| pi[i] * p[i][j] * p[i][j].ln())
            .sum::<f64>();
        let want = h_ks / -r.ln();
        assert!((d1 - want).abs() < 1e-8, "{d1} vs {want}");
        if converged {
            assert!((curve.left_limit.estimate - want).abs() < 1e-7);
        }
    }
}

#[test]
fn monte_carlo_agrees_with_exhaustive() {
    let maps = vec![
        Matrix::from_rows(&[vec![0.5, 0.2], vec![0.0, 0.3]]).unwrap(),
        Matrix::from_rows(&[vec![0.3, -0.1], vec![0.25, 0.4]]).unwrap(),
    ];
    let sys = PressureSystem::new(maps, SymbolicMeasure::markov(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap()).unwrap();
    for (s, q) in [(0.7, 0.5), (1.2, 1.0), (1.5, 2.0)] {
        let query = PressureQuery::new(s, q).unwrap();
        let exact = sys.pressure_level(query, 10).unwrap();
        let mc = sys.pressure_level_mc(query, 10, 40_000, 17).unwrap();
        assert!(mc.stderr > 0.0);
        assert!((mc.value - exact).abs() < 4.0 * mc.stderr, "{} vs {exact} ± {}", mc.value, mc.stderr);
    }
}

#[test]
fn corrected_levels_bound_markov_limit() {
    let w = vec![vec![2.0, 1.0], vec![1.0, 1.0]];
    let r: f64 = 0.3;
    let p = transitions(&w);
    let sys = similarity_markov(r, &w);
    let settings = PressureSettings {
        k_max: 12,
        mc_depths: vec![],
        mc_samples: 0,
        seed: 0,
    };
    for (s, q) in [(0.3, 0.0), (0.5, 0.5), (0.8, 2.0)] {
        let pq: Vec<Vec<f64>> = p.iter().map(|row| row.iter().map(|x| x.powf(q)).collect()).collect();
        let limit = (spectral_radius(&pq).ln() + (1.0 - q) * s * r.ln()) / (q - 1.0);
        let res = sys.pressure(PressureQuery::new(s, q).unwrap(), &settings).unwrap();
        assert!(res.fekete_bound <= limit + 1e-12, "{} > {limit}", res.fekete_bound);
        assert!((res.extrapolated - limit).abs() < 1e-6);
    }
}

#[test]
fn oscillating_levels_keep_extrapolation_above_fekete() {
    let a = contraction([0.385_293_020_311_47, -0.471_451_216_672_03, 0.546_730_945_012_121, 0.0], 0.6).unwrap();
    let b = contraction([0.0, 0.703_415_524_057_8, 0.493_869_932_697_805, 0.0], 0.45).unwrap();
    let p = 0.793_568_702_801_473_5;
    let sys = PressureSystem::new(vec![a, b], SymbolicMeasure::bernoulli(vec![p, 1.0 - p]).unwrap()).unwrap();
    let settings = PressureSettings { k_max: 10, mc_depths: vec![], mc_samples: 0, seed: 0 };
    let r = sys.pressure(PressureQuery::new(0.2, 2.596_960_355_916_632).unwrap(), &settings).unwrap();
    // P_8 exceeds its neighbours, so a plain 1/k fit lands below it
    let p8 = r.levels[7].value;
    assert!(p8 > r.levels[8].value && p8 > r.levels[9].value);
    assert!(r.fekete_bound <= r.extrapolated);
}
