use ptec_core::metrics::{
    apply_threshold, cohens_kappa, macro_f1, mann_whitney_u, roc_and_auroc, select_threshold, threshold_candidates,
};
use ptec_core::seed::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_task(seed: u64, n: usize, l: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let mut rng = rng_for(seed, "task");
    let mut scores = Vec::new();
    let mut gold = Vec::new();
    for _ in 0..n {
        let g: Vec<usize> = (0..l).filter(|_| rng.random::<f64>() < 0.3).collect();
        // Informative but noisy scores, quantized to create ties.
        let row = (0..l)
            .map(|j| {
                let base = if g.contains(&j) { 0.6 } else { 0.3 };
                ((base + rng.random_range(-0.3..0.3f64)).clamp(0.0, 1.0) * 20.0).round() / 20.0
            })
            .collect();
        scores.push(row);
        gold.push(g);
    }
    (scores, gold)
}

#[test]
fn selected_threshold_beats_every_observed_score() {
    for seed in 0..20 {
        let (scores, gold) = random_task(seed, 40, 5);
        if gold.iter().all(Vec::is_empty) {
            continue;
        }
        let best = select_threshold(&scores, &gold).unwrap();
        let mut observed: Vec<f64> = scores.iter().flatten().copied().collect();
        observed.extend(threshold_candidates(&scores));
        for tau in observed {
            let f = macro_f1(&apply_threshold(&scores, tau), &gold, 5).unwrap();
            assert!(f <= best.macro_f1 + 1e-15, "seed {seed}: tau {tau} gives {f} > {}", best.macro_f1);
        }
    }
}

fn brute_auroc(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> f64 {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (row, g) in scores.iter().zip(gold) {
        for (j, &s) in row.iter().enumerate() {
            if g.contains(&j) {
                pos.push(s)
            } else {
                neg.push(s)
            }
        }
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn auroc_matches_pair_counting() {
    for seed in 0..10 {
        let (scores, gold) = random_task(seed, 30, 4);
        let r = roc_and_auroc(&scores, &gold).unwrap();
        assert!((r.auroc - brute_auroc(&scores, &gold)).abs() < 1e-12);
    }
}

#[test]
fn random_scores_give_chance_auroc() {
    let mut rng = rng_for(42, "auroc");
    let scores: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.random::<f64>()]).collect();
    let gold: Vec<Vec<usize>> = (0..10_000).map(|_| if rng.random::<bool>() { vec![0] } else { vec![] }).collect();
    let a = roc_and_auroc(&scores, &gold).unwrap().auroc;
    assert!((0.45..=0.55).contains(&a), "{a}");
}

#[test]
fn auroc_invariant_under_monotone_maps() {
    let (scores, gold) = random_task(3, 50, 6);
    let base = roc_and_auroc(&scores, &gold).unwrap().auroc;
    let maps: [fn(f64) -> f64; 3] = [|s| s * s, f64::sqrt, |s| (s.exp() - 1.0) / (1f64.exp() - 1.0)];
    for f in maps {
        let t: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|&s| f(s)).collect()).collect();
        assert_eq!(roc_and_auroc(&t, &gold).unwrap().auroc.to_bits(), base.to_bits());
    }
}

#[test]
fn macro_f1_invariant_under_reordering() {
    let (scores, gold) = random_task(5, 30, 5);
    let pred = apply_threshold(&scores, 0.45);
    let base = macro_f1(&pred, &gold, 5).unwrap();
    let mut rng = rng_for(5, "perm");
    let mut order: Vec<usize> = (0..30).collect();
    order.shuffle(&mut rng);
    let mut relabel: Vec<usize> = (0..5).collect();
    relabel.shuffle(&mut rng);
    let map = |sets: &[Vec<usize>]| -> Vec<Vec<usize>> {
        order.iter().map(|&i| sets[i].iter().map(|&l| relabel[l]).collect()).collect()
    };
    let f = macro_f1(&map(&pred), &map(&gold), 5).unwrap();
    assert!((f - base).abs() < 1e-12);
}

/// Two-sided p by enumerating every assignment of the pooled values.
fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let u_of = |mask: u32| -> f64 {
        let mut u = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 1 {
                for j in 0..n {
                    if mask >> j & 1 == 0 {
                        u += if pooled[i] > pooled[j] {
                            1.0
                        } else if pooled[i] == pooled[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
        u
    };
    let observed = u_of((1u32 << a.len()) - 1);
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == a.len() {
            total += 1;
            if (u_of(mask) - mu).abs() >= (observed - mu).abs() - 1e-9 {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

#[test]
fn exact_p_matches_enumeration() {
    let mut rng = rng_for(7, "mw");
    for na in 1..=6 {
        for nb in 1..=6 {
            for _ in 0..3 {
                // Small integer values so that ties occur.
                let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..6) as f64).collect();
                let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..6) as f64).collect();
                let mw = mann_whitney_u(&a, &b).unwrap();
                assert!(mw.exact);
                let p = enumerate_p(&a, &b);
                assert!((mw.p - p).abs() < 1e-9, "{a:?} {b:?}: {} vs {p}", mw.p);
            }
        }
    }
}

#[test]
fn u_statistics_are_complementary() {
    let mut rng = rng_for(8, "mw-sum");
    for _ in 0..50 {
        let na = rng.random_range(1..40);
        let nb = rng.random_range(1..40);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..10) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..10) as f64).collect();
        let (ab, ba) = (mann_whitney_u(&a, &b).unwrap(), mann_whitney_u(&b, &a).unwrap());
        assert_eq!(ab.u + ba.u, (na * nb) as f64);
        assert!((ab.p - ba.p).abs() < 1e-12);
    }
}

#[test]
fn kappa_properties() {
    let mut rng = rng_for(9, "kappa");
    let a: Vec<Vec<bool>> = (0..30).map(|_| (0..4).map(|_| rng.random::<bool>()).collect()).collect();
    let b: Vec<Vec<bool>> = (0..30).map(|_| (0..4).map(|_| rng.random::<f64>() < 0.4).collect()).collect();
    assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
    assert!((cohens_kappa(&a, &b).unwrap() - cohens_kappa(&b, &a).unwrap()).abs() < 1e-15);

    // 2x2 table: both yes 20, a-only 5, b-only 10, both no 15.
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (n, va, vb) in [(20, true, true), (5, true, false), (10, false, true), (15, false, false)] {
        for _ in 0..n {
            x.push(vec![va]);
            y.push(vec![vb]);
        }
    }
    let po = 35.0 / 50.0;
    let pe = (25.0 / 50.0) * (30.0 / 50.0) + (25.0 / 50.0) * (20.0 / 50.0);
    assert!((cohens_kappa(&x, &y).unwrap() - (po - pe) / (1.0 - pe)).abs() < 1e-12);
}
