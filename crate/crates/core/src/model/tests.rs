use super::*;
use crate::gradcheck::{central_gradient, relative_error, FD_STEP};
use proptest::prelude::*;

pub(crate) fn tiny_model(soft: usize) -> (PromptModel, Vocab) {
    let mut vocab = Vocab::new();
    for w in ["the", "topic", "is", "w1", "w2", "w3", "a0", "a1", "a2"] {
        vocab.insert(w);
    }
    let text = if soft > 0 {
        format!("[CLS] {{x}} {{soft:{soft}}} the topic is [MASK] [SEP]")
    } else {
        "[CLS] {x} the topic is [MASK] [SEP]".to_string()
    };
    let template = PromptTemplate::parse(&text, &vocab).unwrap();
    let spec = ModelSpec {
        vocab_size: vocab.len(),
        soft_tokens: soft,
        backbone: BackboneSpec {
            embed_dim: 4,
            hidden_dim: 5,
            depth: 2,
            max_len: 16,
            embed_init: 0.7,
            seed: 3,
        },
        prompt: PromptSpec {
            lstm_hidden: 3,
            lstm_layers: 2,
            mlp_hidden: 3,
            soft_init: 0.7,
        },
    };
    (PromptModel::new(spec, template).unwrap(), vocab)
}

fn verbalizer(vocab: &Vocab) -> Verbalizer {
    Verbalizer::new(
        vec![vec![vocab.id("a0").unwrap()], vec![vocab.id("a1").unwrap(), vocab.id("a2").unwrap()]],
        vocab.len(),
    )
    .unwrap()
}

fn frozen() -> PartitionMask {
    PartitionMask {
        backbone: false,
        prompt: false,
    }
}

#[test]
fn logits_shape_and_row_determinism() {
    let (model, vocab) = tiny_model(2);
    let params = model.init_params(1);
    let a = vocab.encode("w1 w2");
    let b = vocab.encode("w3");
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape, frozen()).unwrap();
    let l = model.logits(&mut tape, &vars, &[&a, &b, &a]).unwrap();
    let t = tape.value(l).clone();
    assert_eq!(t.shape(), &[3, vocab.len()]);
    let v = vocab.len();
    assert_eq!(&t.data()[..v], &t.data()[2 * v..]);
    assert_ne!(&t.data()[..v], &t.data()[v..2 * v]);

    let l2 = model.logits(&mut tape, &vars, &[&b, &a, &a]).unwrap();
    let t2 = tape.value(l2);
    assert_eq!(&t2.data()[..v], &t.data()[v..2 * v]);
    assert_eq!(&t2.data()[v..2 * v], &t.data()[..v]);
}

#[test]
fn forward_is_pure_across_calls() {
    let (model, vocab) = tiny_model(3);
    let params = model.init_params(5);
    let x = vocab.encode("w1 w3 w2");
    let run = || {
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape, frozen()).unwrap();
        let l = model.logits(&mut tape, &vars, &[&x]).unwrap();
        tape.value(l).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn uniform_logits_give_equal_label_means() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::row(vec![0.0; 4])).unwrap();
    let v = Verbalizer::new(vec![vec![1], vec![2, 3]], 4).unwrap();
    let p = label_probs(&mut tape, logits, &v).unwrap();
    for &x in tape.value(p).data() {
        assert!((x - 0.25).abs() < 1e-15);
    }
}

#[test]
fn dominant_logit_drives_label_prob_to_one() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::row(vec![60.0, 0.0, 0.0, 0.0])).unwrap();
    let v = Verbalizer::new(vec![vec![0], vec![1]], 4).unwrap();
    let p = label_probs(&mut tape, logits, &v).unwrap();
    assert!((tape.value(p).data()[0] - 1.0).abs() < 1e-20_f64.max(1e-15));
}

#[test]
fn hand_softmax_over_four_tokens() {
    let z: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|x| x.ln() - 10f64.ln()).collect();
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::row(z)).unwrap();
    let v = Verbalizer::new(vec![vec![1, 3], vec![0]], 4).unwrap();
    let p = label_probs(&mut tape, logits, &v).unwrap();
    assert!((tape.value(p).data()[0] - 0.3).abs() < 1e-15);
    assert!((tape.value(p).data()[1] - 0.1).abs() < 1e-15);
}

#[test]
fn label_nll_reference_values() {
    let mut tape = Tape::new();
    let uniform = tape.constant(Tensor::matrix(2, 3, vec![0.2; 6]).unwrap()).unwrap();
    let l = label_nll(&mut tape, uniform, &[0, 2]).unwrap();
    assert!((tape.scalar(l) - 3f64.ln()).abs() < 1e-15);

    let skew = tape.constant(Tensor::row(vec![0.3, 0.1])).unwrap();
    let l = label_nll(&mut tape, skew, &[0]).unwrap();
    assert!((tape.scalar(l) + 0.75f64.ln()).abs() < 1e-15);
    assert!((tape.scalar(l) - 0.2877).abs() < 1e-4);

    let sure = tape.constant(Tensor::row(vec![0.9, 1e-300])).unwrap();
    let l = label_nll(&mut tape, sure, &[0]).unwrap();
    assert!(tape.scalar(l).abs() < 1e-15);

    assert!(matches!(label_nll(&mut tape, sure, &[5]), Err(Error::Contract(_))));
}

#[test]
fn single_soft_token_depends_only_on_itself() {
    let (model, _) = tiny_model(1);
    let params = model.init_params(2);
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape, PartitionMask::ALL).unwrap();
    let enc = model.encode_soft_prompts(&mut tape, &vars).unwrap().unwrap();
    assert_eq!(tape.value(enc).shape(), &[1, 4]);
}

fn encoded(model: &PromptModel, params: &ParamSet) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape, frozen()).unwrap();
    let enc = model.encode_soft_prompts(&mut tape, &vars).unwrap().unwrap();
    tape.value(enc).data().to_vec()
}

#[test]
fn soft_prompt_encoder_mixes_positions() {
    let (model, _) = tiny_model(3);
    let params = model.init_params(4);
    let raw = params.index_of("soft.raw").unwrap();
    let d = 4;
    for j in 0..3 {
        // finite-difference Jacobian block d enc_i / d raw_j for i != j
        let mut hi = params.clone();
        let mut lo = params.clone();
        for k in 0..d {
            hi.get_mut(raw).data_mut()[j * d + k] += FD_STEP;
            lo.get_mut(raw).data_mut()[j * d + k] -= FD_STEP;
        }
        let (eh, el) = (encoded(&model, &hi), encoded(&model, &lo));
        for i in (0..3).filter(|&i| i != j) {
            let block: f64 = (0..d)
                .map(|k| ((eh[i * d + k] - el[i * d + k]) / (2.0 * FD_STEP)).abs())
                .sum();
            assert!(block > 1e-6, "encoded {i} does not depend on raw {j}");
        }
    }
}

#[test]
fn zero_encoder_passes_raw_embeddings_through() {
    let (model, _) = tiny_model(3);
    let mut params = model.init_params(4);
    for i in 0..params.len() {
        let e = &params.entries()[i];
        if e.partition == Partition::Prompt && e.name != "soft.raw" {
            let shape = e.value.shape().to_vec();
            *params.get_mut(i) = Tensor::zeros(&shape);
        }
    }
    let raw = params.entries()[params.index_of("soft.raw").unwrap()].value.data().to_vec();
    assert_eq!(encoded(&model, &params), raw);
}

fn loss_value(model: &PromptModel, params: &ParamSet, texts: &[&[usize]], labels: &[usize], v: &Verbalizer) -> f64 {
    model.evaluate(params, texts, labels, v).unwrap().loss
}

#[test]
fn task_loss_gradient_matches_finite_differences() {
    let (model, vocab) = tiny_model(2);
    let verb = verbalizer(&vocab);
    let x1 = vocab.encode("w1 w2");
    let x2 = vocab.encode("w3 w1 w1");
    let texts: Vec<&[usize]> = vec![&x1, &x2];
    let labels = [0, 1];
    for seed in 0..3 {
        let params = model.init_params(seed);
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape, PartitionMask::ALL).unwrap();
        let loss = model.task_loss(&mut tape, &vars, &texts, &labels, &verb).unwrap();
        let grads = tape.grad(loss, &vars, false).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|&g| tape.value(g).data().to_vec()).collect();
        let flat = params.flat();
        let numeric = central_gradient(
            |x| {
                let mut p = params.clone();
                p.set_flat(x)?;
                Ok(loss_value(&model, &p, &texts, &labels, &verb))
            },
            &flat,
            FD_STEP,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn frozen_backbone_gets_no_gradient() {
    let (model, vocab) = tiny_model(2);
    let verb = verbalizer(&vocab);
    let params = model.init_params(9);
    let x = vocab.encode("w1 w2");
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape, PartitionMask::PROMPT_ONLY).unwrap();
    let loss = model.task_loss(&mut tape, &vars, &[&x], &[1], &verb).unwrap();
    let grads = tape.grad(loss, &vars, false).unwrap();
    let mut prompt_norm = 0.0;
    for (e, g) in params.entries().iter().zip(grads) {
        let m = tape.value(g).max_abs();
        match e.partition {
            Partition::Backbone => assert_eq!(m, 0.0, "{}", e.name),
            Partition::Prompt => prompt_norm += m,
        }
    }
    assert!(prompt_norm > 0.0);
}

#[test]
fn prediction_ties_pick_lowest_label() {
    let t = Tensor::matrix(2, 3, vec![0.2, 0.5, 0.5, 0.1, 0.1, 0.1]).unwrap();
    assert_eq!(predict(&t), vec![1, 0]);
}

#[test]
fn template_soft_count_must_match_spec() {
    let (model, vocab) = tiny_model(2);
    let t = PromptTemplate::parse("{x} {soft:3} [MASK]", &vocab).unwrap();
    assert!(model.with_template(t).is_err());
    let t = PromptTemplate::parse("{soft:2} {x} is [MASK]", &vocab).unwrap();
    assert!(model.with_template(t).is_ok());
}

#[test]
fn same_seed_gives_identical_backbone() {
    let (model, _) = tiny_model(2);
    let a = model.init_params(1);
    let b = model.init_params(2);
    for (x, y) in a.entries().iter().zip(b.entries()) {
        if x.partition == Partition::Backbone {
            assert_eq!(x.value, y.value);
        }
    }
    assert_ne!(a, b);
}

proptest! {
    #[test]
    fn label_probs_shift_invariant(z in prop::collection::vec(-5.0f64..5.0, 5), c in -20.0f64..20.0) {
        let v = Verbalizer::new(vec![vec![0, 2], vec![4]], 5).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(z.clone())).unwrap();
        let b = tape.constant(Tensor::row(z.iter().map(|x| x + c).collect())).unwrap();
        let pa = label_probs(&mut tape, a, &v).unwrap();
        let pb = label_probs(&mut tape, b, &v).unwrap();
        for (x, y) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
