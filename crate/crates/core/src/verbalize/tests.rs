// SPDX-License-Identifier: MIT OR Apache-2.0

use super::*;
use crate::model::{ModelConfig, Role};
use crate::tokenizer::EOT_ID;

fn setup() -> (Tokenizer, ModelHandle<f32>, ModelHandle<f32>, EvalItem) {
    let tok = Tokenizer::build(["My name is Ada Vance. Ada Vance is from Peru. What country is Ada Vance from?"]);
    let cfg = ModelConfig {
        n_layers: 3,
        d_model: 16,
        n_heads: 2,
        ff_mult: 2,
        context_len: 64,
        vocab_size: tok.vocab_size(),
        seed: 1,
    };
    let target = ModelHandle::new(cfg, Role::Target, "t").unwrap();
    let verbalizer = ModelHandle::new(ModelConfig { seed: 2, ..cfg }, Role::Verbalizer, "v").unwrap();
    let item = EvalItem {
        item_id: "country-0000".into(),
        task: "country".into(),
        subject: "Ada Vance".into(),
        x_input: "My name is Ada Vance".into(),
        x_prompt: "What country is Ada Vance from?".into(),
        answer: "Peru".into(),
    };
    (tok, target, verbalizer, item)
}

#[test]
fn zero_shot_prompt_joins_input_and_question() {
    assert_eq!(zero_shot_prompt("My name is Ada", "Where?"), "My name is Ada. Where?");
    assert_eq!(zero_shot_prompt("Hello!", "Where?"), "Hello! Where?");
    assert_eq!(zero_shot_prompt("  ", "Where?"), "Where?");
}

#[test]
fn placeholder_prompt_has_one_slot() {
    let (tok, _, _, item) = setup();
    let (ids, pos) = single_placeholder_prompt(&tok, &item).unwrap();
    assert_eq!(ids[pos], PLACEHOLDER_ID);
    assert_eq!(ids.iter().filter(|&&t| t == PLACEHOLDER_ID).count(), 1);
    let bad = EvalItem { x_prompt: "What country?".into(), ..item };
    assert!(single_placeholder_prompt(&tok, &bad).is_err());
}

#[test]
fn patchscope_matches_a_manual_patched_generation() {
    let (tok, target, verb, item) = setup();
    let outs = patchscope_single(&target, &verb, &tok, &item, 2).unwrap();
    assert_eq!(outs.len(), 3);
    let v = target.capture_last(&tok.encode(&item.x_input), 2).unwrap();
    let (prompt, pos) = single_placeholder_prompt(&tok, &item).unwrap();
    for (i, o) in outs.iter().enumerate() {
        assert_eq!(o.target_layer, TargetLayer::Layer(i + 1));
        assert_eq!((o.method, o.source_layer), (Method::PatchscopeSingle, 2));
        let ids = verb.generate(&prompt, MAX_NEW_TOKENS, &[PatchSpec::vector(v.clone(), i + 1, pos)]).unwrap();
        assert_eq!(o.text, tok.decode(&ids));
    }
    assert!(patchscope_single(&target, &verb, &tok, &item, 4).is_err());
}

#[test]
fn lit_injects_every_input_row() {
    let (tok, target, verb, item) = setup();
    let out = lit_verbalize(&target, &verb, &tok, &item, 1).unwrap();
    let acts = target.capture_layer(&tok.encode(&item.x_input), 1).unwrap();
    let prompt = placeholder_prompt(acts.len(), &tok.encode(&item.x_prompt));
    let ids = verb.generate(&prompt, MAX_NEW_TOKENS, &[PatchSpec::matrix(acts, 1, 0)]).unwrap();
    assert_eq!(out.text, tok.decode(&ids));
    assert_eq!(out.target_layer, TargetLayer::Single);
}

#[test]
fn zero_shot_reads_only_text() {
    let (tok, target, _, item) = setup();
    let out = zero_shot(&target, &tok, &item).unwrap();
    let ids = target.generate(&tok.encode(&zero_shot_prompt(&item.x_input, &item.x_prompt)), MAX_NEW_TOKENS, &[]).unwrap();
    assert_eq!(out.text, tok.decode(&ids));
    assert!(!ids.contains(&EOT_ID));
    assert_eq!((out.method, out.source_layer), (Method::ZeroShot, 0));
    let t = out.to_trial().unwrap();
    assert_eq!(t.correct, out.text.to_lowercase().contains("peru"));
}

#[test]
fn identity_map_reproduces_same_width_methods() {
    let (tok, target, verb, item) = setup();
    let id = AffineMap::identity(16);
    let single = cross_model_verbalize(&target, &verb, &tok, &item, 2, &id, CrossMode::Single).unwrap();
    let direct = patchscope_single(&target, &verb, &tok, &item, 2).unwrap();
    let texts = |v: &[VerbalizationOutput]| v.iter().map(|o| o.text.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&single), texts(&direct));
    let multi = cross_model_verbalize(&target, &verb, &tok, &item, 2, &id, CrossMode::Multi).unwrap();
    assert_eq!(multi[0].text, lit_verbalize(&target, &verb, &tok, &item, 2).unwrap().text);
    assert!(cross_model_verbalize(&target, &verb, &tok, &item, 2, &AffineMap::identity(8), CrossMode::Multi).is_err());
}

#[test]
fn width_mismatch_is_an_error() {
    let (tok, target, _, item) = setup();
    let narrow = ModelHandle::<f32>::new(
        ModelConfig { d_model: 8, ..target.config },
        Role::Verbalizer,
        "n",
    )
    .unwrap();
    assert!(patchscope_single(&target, &narrow, &tok, &item, 1).is_err());
    assert!(lit_verbalize(&target, &narrow, &tok, &item, 1).is_err());
    let empty = EvalItem { x_input: " ".into(), ..item };
    assert!(zero_shot(&target, &tok, &empty).is_ok());
    assert!(lit_verbalize(&target, &target, &tok, &empty, 1).is_err());
}
