//! Label-sequence loss against a direct evaluation, and order properties of
//! the PTEC and T2T objectives.

use ptec_core::backbone::tokenizer::tokenize;
use ptec_core::backbone::{Backbone, BackboneConfig};
use ptec_core::data::{class_weights, synth_generate, Sample, SynthConfig, Taxonomy};
use ptec_core::methods::{
    nte_loss, ptec_sample_loss, t2t_target, ClassificationHead, LabelSegment, Method, MethodConfig, Trained,
};
use ptec_core::seed::rng_for;
use ptec_core::{Graph, LanguageModel, Tensor};
use rand::Rng;

/// Σ over examples of (1/|y_i|)·Σ_j −log p_ij, divided by the segment count.
fn oracle(batch: &[(Vec<Vec<f64>>, Vec<(usize, Vec<u32>)>)]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (rows, segs) in batch {
        for (start, targets) in segs {
            let mut s = 0.0;
            for (j, &t) in targets.iter().enumerate() {
                let row = &rows[start + j];
                let mut max = f64::NEG_INFINITY;
                for &v in row {
                    if v > max {
                        max = v;
                    }
                }
                let mut z = 0.0;
                for &v in row {
                    z += (v - max).exp();
                }
                s += -(row[t as usize] - max - z.ln());
            }
            total += s / targets.len() as f64;
            n += 1;
        }
    }
    total / n as f64
}

fn random_batch(seed: u64, single_token: bool) -> Vec<(Vec<Vec<f64>>, Vec<(usize, Vec<u32>)>)> {
    let mut rng = rng_for(seed, "nte-batch");
    let vocab = 11;
    let mut batch = Vec::new();
    for _ in 0..rng.random_range(1..=5) {
        let mut segs = Vec::new();
        let mut pos = 0;
        for _ in 0..rng.random_range(1..=4) {
            let len = if single_token { 1 } else { rng.random_range(1..=6) };
            let targets: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
            segs.push((pos, targets));
            pos += len;
        }
        let rows: Vec<Vec<f64>> = (0..pos + rng.random_range(0..3))
            .map(|_| (0..vocab).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        batch.push((rows, segs));
    }
    batch
}

fn nte_of(batch: &[(Vec<Vec<f64>>, Vec<(usize, Vec<u32>)>)]) -> f64 {
    let mut g = Graph::new();
    let items: Vec<_> = batch
        .iter()
        .map(|(rows, segs)| {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let v = g.constant(Tensor::matrix(rows.len(), rows[0].len(), flat).unwrap());
            let segs = segs
                .iter()
                .map(|(start, targets)| LabelSegment {
                    start: *start,
                    targets: targets.clone(),
                    weight: 1.0,
                })
                .collect();
            (v, segs)
        })
        .collect();
    let loss = nte_loss(&mut g, &items).unwrap();
    g.value(loss).item()
}

#[test]
fn nte_matches_double_loop() {
    for seed in 0..100 {
        let batch = random_batch(seed, false);
        let (a, b) = (nte_of(&batch), oracle(&batch));
        assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn nte_single_token_is_mean_cross_entropy() {
    for seed in 0..100 {
        let batch = random_batch(seed, true);
        let mut ce = 0.0;
        let mut n = 0;
        for (rows, segs) in &batch {
            for (start, t) in segs {
                let row = &rows[*start];
                let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                ce += lse - row[t[0] as usize];
                n += 1;
            }
        }
        let a = nte_of(&batch);
        assert!((a - ce / n as f64).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn long_labels_do_not_dominate() {
    // Token-mean CE would weigh the 9-token segment 9x; NTE weighs both alike.
    let mut g = Graph::new();
    let mut logits = vec![0.0; 10 * 3];
    logits[0] = 5.0;
    let x = g.constant(Tensor::matrix(10, 3, logits).unwrap());
    let segs = vec![
        LabelSegment { start: 0, targets: vec![0], weight: 1.0 },
        LabelSegment { start: 1, targets: vec![2; 9], weight: 1.0 },
    ];
    let l = nte_loss(&mut g, &[(x, segs)]).unwrap();
    let short = (1.0 + 2.0 * (-5f64).exp()).ln();
    let long = 3f64.ln();
    assert!((g.value(l).item() - (short + long) / 2.0).abs() < 1e-12);
}

fn tiny() -> Backbone {
    Backbone::init(BackboneConfig {
        layers: 1,
        d_model: 16,
        heads: 2,
        d_ff: 32,
        max_seq: 128,
        seed: 2,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn ptec_loss_ignores_label_order() {
    let model = tiny();
    let head = ClassificationHead::init(16, 12, 5);
    let (w, b) = (head.w.clone(), head.b.clone());
    let mut rng = rng_for(9, "order");
    let weights: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..6.0)).collect();
    let sp = Tensor::new(vec![3, 16], (0..48).map(|_| rng.random_range(-0.1..0.1)).collect()).unwrap();
    for i in 0..100 {
        let n = rng.random_range(1..=4);
        let mut labels: Vec<usize> = rand::seq::index::sample(&mut rng, 12, n).into_vec();
        let text = format!("sample {i} with {} labels", labels.len());
        let ids = tokenize(text.as_bytes());
        let mut reference: Option<u64> = None;
        for perm in permutations(&mut labels) {
            let mut g = Graph::new();
            let p = g.constant(sp.clone());
            let e = model.pooled_embedding(&mut g, Some(p), &ids).unwrap();
            let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
            let l = ptec_sample_loss(&mut g, e, wv, bv, &perm, &weights).unwrap();
            let bits = g.value(l).item().to_bits();
            assert_eq!(*reference.get_or_insert(bits), bits, "sample {i}, order {perm:?}");
        }
    }
}

fn permutations(items: &mut [usize]) -> Vec<Vec<usize>> {
    fn go(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == a.len() {
            out.push(a.clone());
            return;
        }
        for i in k..a.len() {
            a.swap(k, i);
            go(k + 1, a, out);
            a.swap(k, i);
        }
    }
    let mut out = Vec::new();
    go(0, &mut items.to_vec(), &mut out);
    out
}

#[test]
fn t2t_target_depends_on_order() {
    let tax = Taxonomy::new(vec!["alpha".into(), "beta".into(), "gamma".into()]).unwrap();
    let a = t2t_target(&[0, 2], &[0, 1, 2], &tax, 1.0).unwrap();
    let b = t2t_target(&[0, 2], &[2, 1, 0], &tax, 1.0).unwrap();
    assert_ne!(a.tokens, b.tokens);
    // The gold list order itself is irrelevant: only the frequency order counts.
    let c = t2t_target(&[2, 0], &[0, 1, 2], &tax, 1.0).unwrap();
    assert_eq!(a, c);
}

fn synth_train() -> (Taxonomy, Vec<Sample>) {
    synth_generate(&SynthConfig {
        labels: 4,
        samples_per_label: 12,
        seed: 1,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn ch_equals_ptec_without_prompt() {
    let model = tiny();
    let (tax, samples) = synth_train();
    let train: Vec<&Sample> = samples.iter().collect();
    let cfg = MethodConfig {
        sp_len: 0,
        epochs: 2,
        batch_size: 8,
        ch_lr: 1e-2,
        ..Default::default()
    };
    let ch = Trained::fit(Method::Ch, &model, &tax, &train, &cfg, None, &mut |_| Ok(())).unwrap();
    let pt = Trained::fit(Method::Ptec, &model, &tax, &train, &cfg, None, &mut |_| Ok(())).unwrap();
    let (a, b) = (ch.checkpoint.unwrap(), pt.checkpoint.unwrap());
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert!(pt.trained.soft_prompt().is_none());
}

#[test]
fn zeroing_a_head_column_changes_only_that_score() {
    let model = tiny();
    let (tax, samples) = synth_train();
    let train: Vec<&Sample> = samples.iter().collect();
    let cfg = MethodConfig { sp_len: 2, epochs: 1, ..Default::default() };
    let fitted = Trained::fit(Method::Ptec, &model, &tax, &train, &cfg, None, &mut |_| Ok(())).unwrap();
    let ptec = fitted.trained.ptec().unwrap();
    let mut g = Graph::new();
    let p = g.constant(ptec.soft_prompt.clone().unwrap());
    let ids = tokenize(b"name: probe\n");
    let e = model.pooled_embedding(&mut g, Some(p), &ids).unwrap();
    let e = g.value(e).clone();
    let before = ptec.head.scores(&e).unwrap();
    for j in 0..tax.len() {
        let mut head = ptec.head.clone();
        let l = head.labels();
        for r in 0..head.w.rows() {
            head.w.data_mut()[r * l + j] = 0.0;
        }
        let after = head.scores(&e).unwrap();
        for k in 0..l {
            if k == j {
                let expected = 1.0 / (1.0 + (-head.b.data()[j]).exp());
                assert!((after[k] - expected).abs() < 1e-12);
            } else {
                assert_eq!(after[k].to_bits(), before[k].to_bits());
            }
        }
    }
}

#[test]
fn class_weights_follow_inverse_frequency() {
    let (tax, samples) = synth_train();
    let train: Vec<&Sample> = samples.iter().collect();
    let w = class_weights(&train, tax.len()).unwrap();
    assert!(w.iter().all(|&x| x >= 1.0));
    assert!(w.iter().any(|&x| x == 1.0));
}
