use affinedim::code_space::DEFAULT_ENUMERATION_CAP;
use affinedim::measure::SymbolicMeasure;

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn measures() -> Vec<SymbolicMeasure> {
    vec![
        SymbolicMeasure::bernoulli(vec![0.2, 0.3, 0.5]).unwrap(),
        SymbolicMeasure::markov(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap(),
        SymbolicMeasure::markov(&[vec![1.0, 3.0, 0.5], vec![2.0, 0.2, 1.0], vec![0.7, 0.7, 4.0]]).unwrap(),
    ]
}

#[test]
fn cylinder_weights_are_consistent() {
    for mu in measures() {
        let m = mu.alphabet() as u16;
        for k in 0..=6 {
            for (w, lw) in mu.level_weights(k, DEFAULT_ENUMERATION_CAP).unwrap() {
                let children: Vec<f64> = (0..m)
                    .map(|j| {
                        let mut idx = w.indices().to_vec();
                        idx.push(j);
                        mu.log_weight_of(&idx)
                    })
                    .collect();
                assert!((log_sum_exp(&children) - lw).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bernoulli_is_multiplicative() {
    let mu = SymbolicMeasure::bernoulli(vec![0.15, 0.85]).unwrap();
    for (a, la) in mu.level_weights(4, DEFAULT_ENUMERATION_CAP).unwrap() {
        for (b, lb) in mu.level_weights(3, DEFAULT_ENUMERATION_CAP).unwrap() {
            let joined = a.concat(&b).unwrap();
            assert!((mu.cylinder_weight(&joined).unwrap() - la - lb).abs() < 1e-13);
        }
    }
    assert_eq!(mu.quasimultiplicativity_constant(), 1.0);
}

/// Largest `|log μ(ij) - log μ(i) - log μ(j)|` over nonempty words up to `len`.
fn worst_log_gap(mu: &SymbolicMeasure, len: usize) -> f64 {
    let words: Vec<_> = (1..=len)
        .flat_map(|k| mu.level_weights(k, DEFAULT_ENUMERATION_CAP).unwrap().collect::<Vec<_>>())
        .collect();
    let mut worst: f64 = 0.0;
    for (a, la) in &words {
        for (b, lb) in &words {
            let joined = a.concat(b).unwrap();
            worst = worst.max((mu.cylinder_weight(&joined).unwrap() - la - lb).abs());
        }
    }
    worst
}

#[test]
fn quasi_multiplicativity_constant_is_sharp() {
    for mu in measures().into_iter().skip(1) {
        let len = if mu.alphabet() == 2 { 6 } else { 4 };
        let log_b = mu.quasimultiplicativity_constant().ln();
        let worst = worst_log_gap(&mu, len);
        assert!(worst <= log_b + 1e-12, "{worst} > {log_b}");
        assert!(worst >= log_b - 1e-12, "b not attained: {worst} < {log_b}");
    }
}

#[test]
fn uniform_decay_bounds() {
    for mu in measures() {
        let (lo, hi) = mu.decay_bounds();
        assert!(0.0 < lo && lo <= hi && hi < 1.0);
        for k in 1..=7 {
            let kf = k as f64;
            for (_, lw) in mu.level_weights(k, DEFAULT_ENUMERATION_CAP).unwrap() {
                assert!(lw >= kf * lo.ln() - 1e-12 && lw <= kf * hi.ln() + 1e-12);
            }
        }
    }
}
