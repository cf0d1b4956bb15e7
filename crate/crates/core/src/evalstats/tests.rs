// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::worldgen::{build_world, make_eval_items, Regime};

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

/// Integer binomial coefficient, exact for the small n used here.
fn choose(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

/// Exact two-sided sign test with integer arithmetic.
fn sign_test_oracle(a: u64, b: u64) -> f64 {
    let n = a + b;
    let tail: u64 = (a.max(b)..=n).map(|k| choose(n, k)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// Straightforward corpus BLEU over whitespace tokens, counting n-grams as
/// joined strings.
fn bleu_oracle(cands: &[&str], refs: &[&str]) -> f64 {
    let mut m = [0usize; 4];
    let mut t = [0usize; 4];
    let (mut cl, mut rl) = (0, 0);
    for (c, r) in cands.iter().zip(refs) {
        let c: Vec<&str> = c.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        cl += c.len();
        rl += r.len();
        for n in 1..=4 {
            let grams = |v: &[&str]| -> BTreeMap<String, usize> {
                let mut g = BTreeMap::new();
                for i in 0..(v.len() + 1).saturating_sub(n) {
                    *g.entry(v[i..i + n].join(" ")).or_insert(0) += 1;
                }
                g
            };
            let (cg, rg) = (grams(&c), grams(&r));
            t[n - 1] += cg.values().sum::<usize>();
            m[n - 1] += cg.iter().map(|(g, k)| (*k).min(*rg.get(g).unwrap_or(&0))).sum::<usize>();
        }
    }
    if cl == 0 {
        return 0.0;
    }
    let lp: f64 = (0..4)
        .map(|i| if m[i] == 0 { 1.0 / (t[i] + 1) as f64 } else { m[i] as f64 / t[i] as f64 }.ln())
        .sum::<f64>()
        / 4.0;
    let bp = if cl > rl { 1.0 } else { (1.0 - rl as f64 / cl as f64).exp() };
    100.0 * bp * lp.exp()
}

#[test]
fn substring_scoring_fixtures() {
    let cases = [
        ("The official currency is the New Zealand Dollar.", "dollar", true),
        ("Braiseroast", "roast", true),
        ("I cannot say.", "Peru", false),
        ("JAPAN", "japan", true),
        ("", "sushi", false),
        ("they like sushi", "sushi", true),
        ("sush i", "sushi", false),
        ("perusal", "Peru", true),
        ("samba", "opera", false),
        ("lasagna", "lasagnas", false),
        ("Ünïcode Straße", "straße", true),
    ];
    for (out, ans, want) in cases {
        assert_eq!(contains_answer(out, ans).unwrap(), want, "{out:?} / {ans:?}");
    }
    assert!(contains_answer("x", " ").is_err());
    assert!(contains_word("Braiseroast", "roast").is_ok_and(|b| !b));
    assert!(contains_word("a roast, then", "Roast").unwrap());
    assert!(contains_word("roast", "roast").unwrap());
    assert!(contains_word("roasted roast", "roast").unwrap());
}

#[test]
fn mcnemar_matches_integer_oracle() {
    let a: Vec<bool> = (0..20).map(|i| i < 15).collect();
    let b: Vec<bool> = a.iter().map(|x| !x).collect();
    let r = mcnemar(&a, &b, 1).unwrap();
    let oracle = sign_test_oracle(15, 5);
    assert!((oracle - 0.041_389_465_332_031_25).abs() < 1e-15);
    assert!((r.p_raw - oracle).abs() < 1e-12);
    assert!(r.exact && r.significant);
    assert_eq!((r.b10, r.b01, r.direction), (15, 5, 1));
    let six = mcnemar(&a, &b, 6).unwrap();
    assert!((six.p_adjusted - 6.0 * oracle).abs() < 1e-12);
    assert!(!six.significant);
    let rev = mcnemar(&b, &a, 1).unwrap();
    assert_eq!(rev.direction, -1);
    assert!((rev.p_raw - r.p_raw).abs() < 1e-15);
}

#[test]
fn mcnemar_uses_corrected_chi_square_for_large_counts() {
    // b10 = 30, b01 = 10: χ² = (|30 - 10| - 1)² / 40 = 9.025, p = erfc(√(χ²/2)).
    let mut a = vec![true; 30];
    a.extend(vec![false; 10]);
    a.extend(vec![true; 7]);
    let mut b = vec![false; 30];
    b.extend(vec![true; 10]);
    b.extend(vec![true; 7]);
    let r = mcnemar(&a, &b, 1).unwrap();
    assert!(!r.exact);
    assert!((r.statistic - 9.025).abs() < 1e-12);
    assert!((r.p_raw - 0.002_663_119_259_138_554).abs() < 1e-9, "{}", r.p_raw);
}

#[test]
fn mcnemar_degenerate_and_bad_input() {
    let a = vec![true, false, true];
    let r = mcnemar(&a, &a, 3).unwrap();
    assert!(r.degenerate && !r.significant);
    assert_eq!((r.p_raw, r.direction), (1.0, 0));
    assert!(mcnemar(&a, &a[..2], 1).is_err());
    assert!(mcnemar(&a, &a, 0).is_err());
}

#[test]
fn binomial_helpers() {
    assert_eq!(binomial_upper_tail(0, 5, 0.3), 1.0);
    assert_eq!(binomial_upper_tail(6, 5, 0.3), 0.0);
    assert!((binomial_upper_tail(3, 3, 0.5) - 0.125).abs() < 1e-15);
    assert!((exact_binomial_two_sided(3, 3) - 1.0).abs() < 1e-15);
    // Smallest k with P(X > k) ≤ 0.05 for X ~ Bin(96, 1/8) is 18.
    assert!((chance_ceiling(96, 0.125, 0.05) - 18.0 / 96.0).abs() < 1e-15);
    assert_eq!(chance_ceiling(0, 0.5, 0.05), 1.0);
}

#[test]
fn bleu_fixtures() {
    let one = |c: &str, r: &str| sentence_bleu(c, r).unwrap();
    assert_eq!(one("the cat sat on the mat", "the cat sat on the mat"), 100.0);
    assert_eq!(one("", "the cat"), 0.0);
    // Reference values computed with NLTK corpus_bleu and sacrebleu (tokenize=none).
    assert!((one("the cat sat on the mat", "the cat sat on a mat") - 53.728_496_591_177_1).abs() < 1e-6);
    assert!((one("the cat sat on the mat", "the cat sat on the mat today again") - 71.653_131_057_378_93).abs() < 1e-6);
    let corpus = bleu(&s(&["a b c d e f", "the cat sat on the mat"]), &s(&["a b c d e f", "the cat sat on a mat"])).unwrap();
    assert!((corpus - 77.815_812_713_066_1).abs() < 1e-6);
    assert!(bleu(&s(&["a"]), &s(&["a", "b"])).is_err());
    assert!(bleu(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn bleu_agrees_with_oracle(
        pairs in proptest::collection::vec(
            (proptest::collection::vec("[a-d]", 0..12), proptest::collection::vec("[a-d]", 1..12)),
            1..5,
        )
    ) {
        let c: Vec<String> = pairs.iter().map(|(c, _)| c.join(" ")).collect();
        let r: Vec<String> = pairs.iter().map(|(_, r)| r.join(" ")).collect();
        let got = bleu(&c, &r).unwrap();
        let cr: Vec<&str> = c.iter().map(String::as_str).collect();
        let rr: Vec<&str> = r.iter().map(String::as_str).collect();
        let want = bleu_oracle(&cr, &rr);
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
        prop_assert!((0.0..=100.0).contains(&got));
    }

    #[test]
    fn sign_test_matches_oracle(a in 0u64..26, b in 0u64..26) {
        prop_assume!(a + b > 0);
        let got = exact_binomial_two_sided(a as usize, b as usize);
        prop_assert!((got - sign_test_oracle(a, b)).abs() < 1e-10);
    }

    #[test]
    fn bonferroni_is_capped_and_monotone(p in 0.0f64..=1.0, n in 1usize..50) {
        let adj = bonferroni(p, n);
        prop_assert!(adj >= p && adj <= 1.0);
        prop_assert!(bonferroni(p, n + 1) >= adj);
        prop_assert_eq!(bonferroni(p, 1), p);
    }
}

fn trial(method: Method, item: &str, src: usize, tl: TargetLayer, out: &str) -> TrialResult {
    TrialResult::scored(method, "country", item, src, tl, out.into(), "Peru").unwrap()
}

#[test]
fn score_run_ensembles_target_layers() {
    let m = Method::PatchscopeSingle;
    let trials = vec![
        trial(m, "a", 1, TargetLayer::Layer(1), "Peru"),
        trial(m, "a", 1, TargetLayer::Layer(2), "no"),
        trial(m, "b", 1, TargetLayer::Layer(1), "no"),
        trial(m, "b", 1, TargetLayer::Layer(2), "no"),
        trial(m, "a", 2, TargetLayer::Layer(1), "no"),
        trial(m, "a", 2, TargetLayer::Layer(2), "no"),
        trial(m, "b", 2, TargetLayer::Layer(1), "no"),
        trial(m, "b", 2, TargetLayer::Layer(2), "peru!"),
    ];
    let r = score_run(&trials, Ensemble::AnyTargetLayer).unwrap();
    assert_eq!(r.per_layer[&1], 0.5);
    assert_eq!(r.per_layer[&2], 0.5);
    assert_eq!(r.average, 0.5);
    assert_eq!(r.per_layer_correct[&2], vec![false, true]);
    assert!(score_run(&trials, Ensemble::SingleOutput).is_err());
    assert!(score_run(&trials[..7], Ensemble::AnyTargetLayer).is_err());
    let mut dup = trials.clone();
    dup.push(trials[0].clone());
    assert!(score_run(&dup, Ensemble::AnyTargetLayer).is_err());
    assert!(score_run(&[], Ensemble::SingleOutput).is_err());
    assert_eq!(rescore(&trials).unwrap(), trials.iter().map(|t| t.correct).collect::<Vec<_>>());
}

#[test]
fn swap_label_scores_both_label_sets() {
    let r = swap_label_eval(&s(&["Peru", "sushi", "x"]), &s(&["peru", "pizza", "y"]), &s(&["chile", "sushi", "x"])).unwrap();
    assert_eq!(r.n, 3);
    assert!((r.original_accuracy - 1.0 / 3.0).abs() < 1e-15);
    assert!((r.shuffled_accuracy - 2.0 / 3.0).abs() < 1e-15);
    assert!(swap_label_eval(&s(&["a"]), &s(&[]), &s(&["a"])).is_err());
}

#[test]
fn sensitivity_suite_reports_deltas_against_s0() {
    let (w, ps) = build_world(1, Regime::Plain, 4, 4).unwrap();
    let items = make_eval_items(&ps, "country").unwrap();
    // Echoes the prompt: S-variants never name the answer, A-variants name a wrong label.
    let mut answer_unless_distracted = |it: &crate::worldgen::EvalItem| -> crate::Result<String> {
        Ok(if it.x_prompt.contains(" must be ") || it.x_prompt.starts_with("I think ") { "nope".into() } else { it.answer.clone() })
    };
    let rep = sensitivity_suite(&items, &w.attribute_schemas, 3, &mut answer_unless_distracted).unwrap();
    for r in &rep.rows {
        if r.variant == "S0" {
            assert_eq!(r.delta, 0.0);
        }
        assert_eq!(r.n, 4);
    }
    assert_eq!(rep.mean_accuracy("S"), 1.0);
    assert_eq!(rep.mean_accuracy("A"), 0.0);
    for t in rep.trials.iter().filter(|t| t.variant.starts_with('A')) {
        let d = t.distractor.as_ref().unwrap();
        let item = items.iter().find(|i| i.item_id == t.item_id).unwrap();
        assert_ne!(d, &item.answer);
        assert!(t.prompt.contains(d.as_str()));
    }
    let again = sensitivity_suite(&items, &w.attribute_schemas, 3, &mut answer_unless_distracted).unwrap();
    assert_eq!(rep, again);
}
