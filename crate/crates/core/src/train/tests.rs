// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{example_grad, example_loss};
use super::*;
use crate::model::{ModelConfig, Role};

fn small(seed: u64) -> ModelHandle<f64> {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        ff_mult: 2,
        context_len: 32,
        vocab_size: 11,
        seed,
    };
    let mut m = ModelHandle::new(cfg, Role::Target, "g").unwrap();
    // Move off the init so biases and gains carry signal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in m.params.data.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    m
}

fn check_gradient(m: &ModelHandle<f64>, ex: &Example<f64>, answer_only: bool) {
    let mut grad = m.params.zeros_like();
    let (loss, _) = example_grad(m, ex, answer_only, 1.0, &mut grad);
    let (loss2, _) = example_loss(m, ex, answer_only);
    assert!((loss - loss2).abs() < 1e-10, "{loss} vs {loss2}");
    let h = 1e-5;
    for e in &m.params.layout.entries {
        let r = e.range();
        for idx in [r.start, r.start + r.len() / 2, r.end - 1] {
            let mut plus = m.clone();
            plus.params.data[idx] += h;
            let mut minus = m.clone();
            minus.params.data[idx] -= h;
            let fd = (example_loss(&plus, ex, answer_only).0 - example_loss(&minus, ex, answer_only).0) / (2.0 * h);
            let tol = 1e-6 + 1e-4 * fd.abs().max(grad[idx].abs());
            assert!((fd - grad[idx]).abs() < tol, "{} [{idx}]: analytic {} numeric {fd}", e.key(), grad[idx]);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let m = small(1);
    let ex = Example::language_model(&[3, 5, 2, 9, 10, 4, 0]);
    check_gradient(&m, &ex, false);
}

#[test]
fn gradients_match_finite_differences_with_patch_and_answer_mask() {
    let m = small(2);
    let src = small(3);
    let acts = src.capture_layer(&[4, 6, 8], 1).unwrap();
    let mut ex = Example::prompt_answer(&[1, 1, 1, 7], &[5, 2, 0]);
    ex.patches = vec![PatchSpec::matrix(acts, 1, 0)];
    check_gradient(&m, &ex, true);
}

#[test]
fn prompt_answer_masks_prompt_positions() {
    let ex: Example<f32> = Example::prompt_answer(&[4, 5, 6], &[7, 0]);
    assert_eq!(ex.tokens, vec![4, 5, 6, 7]);
    assert_eq!(ex.targets, vec![5, 6, 7, 0]);
    assert_eq!(ex.answer_mask, vec![false, false, true, true]);
}

#[test]
fn schedule_warms_up_then_decays_linearly() {
    let cfg = TrainConfig {
        learning_rate: 1.0,
        warmup_steps: 4,
        final_lr_frac: 0.1,
        ..TrainConfig::scratch(1, 0)
    };
    let lrs: Vec<f64> = (0..14).map(|s| cfg.lr_at(s, 14)).collect();
    assert_eq!(&lrs[..4], &[0.25, 0.5, 0.75, 1.0]);
    assert_eq!(lrs[4], 1.0);
    for w in lrs[4..].windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!((cfg.lr_at(14, 14) - 0.1).abs() < 1e-12);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::scratch(0, 0).validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::scratch(1, 0) }.validate().is_err());
    assert!(TrainConfig { learning_rate: f64::NAN, ..TrainConfig::scratch(1, 0) }.validate().is_err());
    assert!(TrainConfig { final_lr_frac: 1.5, ..TrainConfig::scratch(1, 0) }.validate().is_err());
    assert!(TrainConfig { checkpoint_every: Some(2), ..TrainConfig::scratch(1, 0) }.validate().is_err());
}

fn toy() -> (Tokenizer, Vec<String>) {
    let corpus: Vec<String> = ["the red fox runs", "the blue owl sleeps", "a red owl runs", "a blue fox sleeps"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    (Tokenizer::build(corpus.iter().map(String::as_str)), corpus)
}

fn toy_model(tok: &Tokenizer, seed: u64) -> ModelHandle<f32> {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        ff_mult: 2,
        context_len: 32,
        vocab_size: tok.vocab_size(),
        seed,
    };
    ModelHandle::new(cfg, Role::Target, "toy").unwrap()
}

#[test]
fn training_lowers_loss_and_is_reproducible() {
    let (tok, corpus) = toy();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 2,
        ..TrainConfig::scratch(40, 7)
    };
    let examples = lm_examples::<f32>(&corpus, &tok, 32);
    let before = evaluate_loss(&toy_model(&tok, 1), &examples, LossMask::FullSequence);
    let (a, ra) = train_lm(toy_model(&tok, 1), &corpus, &tok, &cfg, None).unwrap();
    let (b, rb) = train_lm(toy_model(&tok, 1), &corpus, &tok, &cfg, None).unwrap();
    let after = evaluate_loss(&a, &examples, LossMask::FullSequence);
    assert!(after < 0.5 * before, "{before} -> {after}");
    assert_eq!(ra.steps, 80);
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(ra, rb);
    let (c, _) = train_lm(toy_model(&tok, 1), &corpus, &tok, &TrainConfig { seed: 8, ..cfg }, None).unwrap();
    assert_ne!(a.checksum(), c.checksum());
    assert!(a.provenance.contains("train_lm"));
}

#[test]
fn long_documents_split_at_the_context_window() {
    let text = (0..50).map(|i| if i % 2 == 0 { "x" } else { "y" }).collect::<Vec<_>>().join(" ");
    let tok = Tokenizer::build([text.as_str()]);
    let ex = lm_examples::<f32>(&[text], &tok, 20);
    assert_eq!(ex.iter().map(|e| e.tokens.len()).collect::<Vec<_>>(), vec![20, 20, 10]);
    assert_eq!(*ex[2].targets.last().unwrap(), EOT_ID);
}

#[test]
fn oversized_examples_are_rejected() {
    let (tok, _) = toy();
    let mut m = toy_model(&tok, 1);
    let ex = Example::<f32>::language_model(&[2; 40]);
    assert!(train_examples(&mut m, &[ex], &TrainConfig::scratch(1, 0), None).is_err());
    assert!(train_examples(&mut m, &[], &TrainConfig::scratch(1, 0), None).is_err());
}

#[test]
fn affine_fit_recovers_a_known_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = [[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]];
    let b = [0.25, -3.0];
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = (0..2).map(|r| (0..3).map(|c| m[r][c] * x[c]).sum::<f64>() + b[r]).collect();
            (x, y)
        })
        .collect();
    let fit = fit_affine(&pairs).unwrap();
    for (r, row) in m.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            assert!((fit.map.matrix[r * 3 + c] - want).abs() < 1e-5);
        }
        assert!((fit.map.bias[r] - b[r]).abs() < 1e-5);
    }
    assert!(fit.residual_mse < 1e-10);
    assert!(fit_affine(&pairs[..3]).is_err());
    let id = AffineMap::<f64>::identity(3);
    assert_eq!(id.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    assert!(id.apply(&[1.0]).is_err());
}

#[test]
fn decoder_examples_inject_context_rows() {
    use crate::worldgen::{DecoderDataset, DecoderRecord};
    let (tok, _) = toy();
    let target = toy_model(&tok, 2);
    let data = DecoderDataset {
        records: vec![DecoderRecord {
            entity: "fox".into(),
            task: "colour".into(),
            context_text: "the red fox runs".into(),
            question_text: "the fox".into(),
            answer_text: "red".into(),
        }],
    };
    let lit = decoder_examples(&target, &tok, &data, 1, DecoderMode::Lit).unwrap();
    let n_ctx = tok.encode("the red fox runs").len();
    assert_eq!(&lit[0].tokens[..n_ctx], &vec![crate::tokenizer::PLACEHOLDER_ID; n_ctx][..]);
    assert_eq!(lit[0].patches[0].target_positions, (0..n_ctx).collect::<Vec<_>>());
    assert_eq!(lit[0].patches[0].target_layer, 1);
    let single = decoder_examples(&target, &tok, &data, 2, DecoderMode::InverterSingle).unwrap();
    assert_eq!(single[0].patches[0].target_positions, vec![0]);
    let mut answer = tok.encode("the red fox runs");
    answer.push(EOT_ID);
    assert_eq!(&single[0].targets[single[0].targets.len() - answer.len()..], &answer[..]);
    assert!(decoder_examples(&target, &tok, &data, 3, DecoderMode::Lit).is_err());
}

#[test]
fn long_inverter_labels_are_cut_to_the_window() {
    use crate::worldgen::{DecoderDataset, DecoderRecord};
    let text = (0..30).map(|i| ["the", "red", "fox", "runs"][i % 4]).collect::<Vec<_>>().join(" ");
    let (tok, _) = toy();
    let target = toy_model(&tok, 3);
    let data = DecoderDataset {
        records: vec![DecoderRecord {
            entity: "fox".into(),
            task: "colour".into(),
            context_text: text,
            question_text: String::new(),
            answer_text: String::new(),
        }],
    };
    let ex = decoder_examples(&target, &tok, &data, 1, DecoderMode::InverterMulti).unwrap();
    assert_eq!(ex[0].tokens.len(), target.config.context_len);
    assert_eq!(ex[0].answer_mask.iter().filter(|&&m| m).count(), 32 + 1 - 30);
    let single = decoder_examples(&target, &tok, &data, 1, DecoderMode::InverterSingle).unwrap();
    assert_eq!(single[0].tokens.len(), 31);
}
