use ptec_core::tuning::{
    default_space, expected_improvement, run_search, sample_config, ParamSpec, Phase, Scale, SearchConfig, SearchSpace,
};
use ptec_core::Method;

fn locate(space: &SearchSpace, f: impl Fn(f64) -> f64, seed: u64) -> f64 {
    let cfg = SearchConfig { seed, ..Default::default() };
    let r = run_search(&mut |c, _| Ok(f(c["x"])), space, &cfg, None).unwrap();
    assert_eq!(r.history.iter().filter(|t| t.phase == Phase::Random).count(), 25);
    assert_eq!(r.history.iter().filter(|t| t.phase == Phase::Bayes).count(), 15);
    r.best.config["x"]
}

#[test]
fn finds_one_dimensional_optima() {
    let (lo, hi) = (-5.0, 10.0);
    let space = SearchSpace::new(vec![ParamSpec::real("x", lo, hi, Scale::Linear)]).unwrap();
    let objectives: [(f64, Box<dyn Fn(f64) -> f64>); 3] = [
        (2.3, Box::new(|x| -(x - 2.3) * (x - 2.3))),
        (-3.1, Box::new(|x| (-(x + 3.1).powi(2) / 2.0).exp())),
        (7.7, Box::new(|x| -(x - 7.7).abs())),
    ];
    for (opt, f) in &objectives {
        for seed in 0..3 {
            let x = locate(&space, f, seed);
            assert!((x - opt).abs() <= 0.05 * (hi - lo), "seed {seed}: found {x}, optimum {opt}");
        }
    }
}

#[test]
fn log_scale_optimum() {
    let space = SearchSpace::new(vec![ParamSpec::real("x", 1e-6, 1e-1, Scale::Log)]).unwrap();
    for seed in 0..3 {
        let x = locate(&space, |x| -(x.log10() + 3.5).powi(2), seed);
        assert!((x.log10() + 3.5).abs() <= 0.05 * 5.0, "seed {seed}: {x:e}");
    }
}

#[test]
fn decades_are_equally_likely() {
    let space = SearchSpace::new(vec![ParamSpec::real("lr", 1e-9, 1.0, Scale::Log)]).unwrap();
    let n = 90_000;
    let mut hist = [0usize; 9];
    for seed in 0..n {
        let v = sample_config(&space, seed as u64)["lr"];
        let decade = ((v.log10() + 9.0).floor() as usize).min(8);
        hist[decade] += 1;
    }
    let expected = n as f64 / 9.0;
    for (d, &c) in hist.iter().enumerate() {
        assert!(((c as f64 - expected) / expected).abs() <= 0.03, "decade {d}: {c}");
    }
}

#[test]
fn integer_parameters_stay_integral() {
    let space = SearchSpace::new(vec![ParamSpec::integer("k", 1, 150)]).unwrap();
    let mut seen = [false; 151];
    for seed in 0..20_000 {
        let k = sample_config(&space, seed)["k"];
        assert_eq!(k.fract(), 0.0);
        assert!((1.0..=150.0).contains(&k));
        seen[k as usize] = true;
    }
    assert!(seen[1] && seen[150], "bounds are reachable");
}

#[test]
fn expected_improvement_matches_quadrature() {
    for (mu, sigma, best) in [(0.0, 1.0, 0.5), (1.2, 0.3, 1.0), (-2.0, 2.5, 0.0), (0.7, 0.01, 0.9)] {
        let steps = 200_000;
        let (a, b) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
        let h = (b - a) / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let y = a + (i as f64 + 0.5) * h;
            let pdf = (-(y - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            acc += (y - best).max(0.0) * pdf * h;
        }
        let ei = expected_improvement(mu, sigma, best);
        assert!((ei - acc).abs() < 1e-6 * (1.0 + acc), "{mu} {sigma} {best}: {ei} vs {acc}");
    }
}

#[test]
fn every_tunable_method_has_a_space() {
    for m in Method::ALL {
        match default_space(m) {
            Ok(space) => {
                for seed in 0..50 {
                    assert!(space.contains(&sample_config(&space, seed)), "{m:?}");
                }
            }
            Err(_) => assert_eq!(m, Method::Gzip),
        }
    }
}
