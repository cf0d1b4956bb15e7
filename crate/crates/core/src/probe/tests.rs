// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;

const K: usize = 4;
const DIM: usize = 16;

/// Gaussian clusters around well-separated centres, `per` points each.
fn clusters(per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let centres: Vec<Vec<f64>> = (0..K).map(|_| (0..DIM).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in 0..per * K {
        let c = i % K;
        x.push(centres[c].iter().map(|m| m + noise.sample(&mut rng)).collect());
        y.push(format!("label{c}"));
    }
    (x, y)
}

fn accuracy(p: &Probe<f64>, x: &[Vec<f64>], y: &[String]) -> f64 {
    let hits = x.iter().zip(y).filter(|(a, l)| probe_predict(p, a).unwrap() == l.as_str()).count();
    hits as f64 / y.len() as f64
}

fn fit(iterations: usize) -> ProbeConfig {
    ProbeConfig {
        l1_weight: 0.01,
        l2_weight: 0.01,
        iterations,
        seed: 1,
        standardize: true,
    }
}

#[test]
fn separable_clusters_are_learned() {
    let (x, y) = clusters(40, 0.5, 3);
    let (tr, te) = stratified_split(&y, 0.7, 5).unwrap();
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<String>) {
        (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i].clone()).collect())
    };
    let (xtr, ytr) = pick(&tr);
    let (xte, yte) = pick(&te);
    let p = train_probe(&xtr, &ytr, &fit(200)).unwrap();
    let acc = accuracy(&p, &xte, &yte);
    assert!(acc >= 0.95, "held-out accuracy {acc}");
    let probs = p.probabilities(&xte[0]).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn shuffled_labels_stay_near_chance() {
    let (x, mut y) = clusters(100, 0.5, 4);
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let (tr, te) = stratified_split(&y, 0.5, 5).unwrap();
    let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
    let ytr: Vec<String> = tr.iter().map(|&i| y[i].clone()).collect();
    let xte: Vec<Vec<f64>> = te.iter().map(|&i| x[i].clone()).collect();
    let yte: Vec<String> = te.iter().map(|&i| y[i].clone()).collect();
    let p = train_probe(&xtr, &ytr, &fit(200)).unwrap();
    let acc = accuracy(&p, &xte, &yte);
    assert!((acc - 1.0 / K as f64).abs() <= 0.08, "accuracy {acc} on shuffled labels");
}

#[test]
fn zero_input_predicts_the_largest_bias() {
    let (x, y) = clusters(20, 0.5, 6);
    let cfg = ProbeConfig { standardize: false, ..fit(50) };
    let p = train_probe(&x, &y, &cfg).unwrap();
    let best = crate::linalg::argmax(&p.bias);
    assert_eq!(probe_predict(&p, &[0.0; DIM]).unwrap(), p.labels[best]);
}

#[test]
fn strong_l1_zeroes_weights() {
    let (x, y) = clusters(20, 0.5, 7);
    let cfg = ProbeConfig { l1_weight: 1e6, ..fit(20) };
    let p = train_probe(&x, &y, &cfg).unwrap();
    assert!(p.weights.iter().all(|&w| w == 0.0));
}

#[test]
fn training_is_seeded_and_labels_sorted() {
    let (x, y) = clusters(10, 1.0, 8);
    let a = train_probe(&x, &y, &fit(10)).unwrap();
    let b = train_probe(&x, &y, &fit(10)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.labels, vec!["label0", "label1", "label2", "label3"]);
    assert_eq!(a.n_labels(), K);
}

#[test]
fn bad_inputs_are_rejected() {
    let (x, y) = clusters(5, 1.0, 1);
    assert!(train_probe(&x, &y[..3], &fit(5)).is_err());
    assert!(train_probe::<f64>(&[], &[], &fit(5)).is_err());
    let same = vec!["a".to_string(); x.len()];
    assert!(train_probe(&x, &same, &fit(5)).is_err());
    let mut bad = x.clone();
    bad[0][0] = f64::NAN;
    assert!(train_probe(&bad, &y, &fit(5)).is_err());
    assert!(train_probe(&x, &y, &fit(0)).is_err());
    assert!(train_probe(&x, &y, &ProbeConfig { l1_weight: -1.0, ..fit(5) }).is_err());
    let p = train_probe(&x, &y, &fit(5)).unwrap();
    assert!(p.probabilities(&[1.0]).is_err());
}

#[test]
fn stratified_split_keeps_every_label_on_both_sides() {
    let labels: Vec<String> = (0..30).map(|i| format!("l{}", i % 3)).collect();
    let (tr, te) = stratified_split(&labels, 0.8, 2).unwrap();
    assert_eq!(tr.len() + te.len(), 30);
    assert_eq!(tr.len(), 24);
    for l in ["l0", "l1", "l2"] {
        assert!(tr.iter().any(|&i| labels[i] == l));
        assert!(te.iter().any(|&i| labels[i] == l));
    }
    assert_eq!((tr.clone(), te.clone()), stratified_split(&labels, 0.8, 2).unwrap());
    assert!(stratified_split(&labels, 1.5, 0).is_err());
}

#[test]
fn classification_report_counts() {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let r = classification_report(&s(&["a", "a", "b", "c"]), &s(&["a", "b", "b", "b"])).unwrap();
    assert_eq!((r.n, r.correct), (4, 2));
    assert_eq!(r.per_label[0], ("a".to_string(), 0.5, 1.0, 1));
    assert_eq!(r.per_label[1], ("b".to_string(), 1.0, 1.0 / 3.0, 3));
    assert_eq!(r.per_label[2], ("c".to_string(), 0.0, 0.0, 0));
    assert!(classification_report(&s(&["a"]), &s(&[])).is_err());
}

#[test]
fn probes_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = clusters(5, 1.0, 2);
    let p = train_probe(&x, &y, &fit(5)).unwrap();
    let path = dir.path().join("p.probe");
    save_probe(&p, &path).unwrap();
    let back: Probe<f64> = load_probe(&path).unwrap();
    assert_eq!(back, p);
}
