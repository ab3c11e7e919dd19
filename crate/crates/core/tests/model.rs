mod common;

use graphfuse::autodiff::{ParameterStore, Tape, Tensor};
use graphfuse::graph::GraphConfig;
use graphfuse::model::{load_checkpoint, save_checkpoint, Ablation, Example, FusionModel, Vocab};
use graphfuse::rng::SeedStream;
use graphfuse::synthetic;
use graphfuse::train::{self, adamw_step, AdamWState, TrainConfig};
use rand::seq::SliceRandom;

fn toy(seed: u64, dialect_head: bool) -> (FusionModel<f32>, Vec<Example>, Vec<Example>) {
    let set = synthetic::dialect_markers(120, 40, seed);
    let mut cfg = synthetic::toy_model_config(16);
    cfg.dialect_head = dialect_head;
    let model = FusionModel::<f32>::new(cfg, Some(Vocab::build(&set.train)), seed).unwrap();
    let g = GraphConfig::default();
    let tr = model.prepare_all(&set.train, &g, None).unwrap();
    let te = model.prepare_all(&set.test, &g, None).unwrap();
    (model, tr, te)
}

fn fast(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs,
        seed: 1,
        ..Default::default()
    }
}

#[test]
fn pooled_graph_embedding_ignores_node_order() {
    let model = FusionModel::<f32>::new(synthetic::toy_model_config(16), Some(Vocab::from_words(["x"]).unwrap()), 3).unwrap();
    let set = synthetic::separable(10, 0, 3);
    let mut rng = SeedStream::new(3).rng("test/perm");
    for s in &set.train {
        let g = graphfuse::graph::graph_for_text(&s.text, &GraphConfig::default()).unwrap();
        let pooled = |g: &graphfuse::graph::WordGraph| {
            let ex = Example::from_parts(s, graphfuse::model::TextInput::Ids(vec![1]), g);
            let mut tape = Tape::new();
            let z = model.encode_graph(&mut tape, &ex).unwrap();
            tape.value(z).data().to_vec()
        };
        let base = pooled(&g);
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
            perm.shuffle(&mut rng);
            for (a, b) in base.iter().zip(pooled(&g.permuted(&perm))) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn reversal_is_identity_forward_and_negated_backward() {
    for lambda in [0.0f64, 0.5, 1.0, 2.0] {
        let mut store = ParameterStore::new();
        let x = store.add("x", Tensor::new(&[2, 2], vec![0.3, -1.25, 2.0, 7.5]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let y = tape.grad_reverse(xv, lambda).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(xv).data());
        let u = tape.constant(Tensor::new(&[2, 2], vec![1.0, -2.0, 0.125, 3.0]).unwrap());
        let p = tape.mul(y, u).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss, &mut store).unwrap();
        let expected: Vec<f64> = [1.0, -2.0, 0.125, 3.0].iter().map(|u| -lambda * u).collect();
        assert_eq!(store.grad(x).unwrap().data(), expected.as_slice());
    }
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::scalar(1.0));
    assert!(tape.grad_reverse(c, -1.0).is_err());
}

#[test]
fn zero_reversal_zero_weight_reproduces_plain_training() {
    let (mut plain, tr, _) = toy(5, true);
    let mut adv = plain.clone();
    let a = train::train(&mut plain, &tr, &[], &fast(3)).unwrap();
    let cfg = TrainConfig {
        adversarial: true,
        lambda_adv: 0.0,
        adv_loss_weight: 0.0,
        ..fast(3)
    };
    let b = train::train(&mut adv, &tr, &[], &cfg).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.task_loss.to_bits(), y.task_loss.to_bits());
        assert_eq!(x.task_acc, y.task_acc);
        assert!(x.dialect_loss.is_none() && y.dialect_loss.is_some());
    }
    // only the dialect head may differ, through weight decay
    let head = plain.dialect_head_params();
    for ((id, p), (_, q)) in plain.params.iter().zip(adv.params.iter()) {
        if !head.contains(&id) {
            assert_eq!(p.value().data(), q.value().data(), "{}", p.name);
        }
    }
}

#[test]
fn plain_training_leaves_the_dialect_head_untouched() {
    let (mut model, tr, _) = toy(6, true);
    let before = model.params.clone();
    train::train(&mut model, &tr, &[], &fast(1)).unwrap();
    for id in model.dialect_head_params() {
        assert_eq!(model.params.value(id).data(), before.value(id).data());
    }
}

#[test]
fn adversarial_training_needs_a_dialect_head() {
    let (mut model, tr, _) = toy(7, false);
    let err = train::train_adversarial(&mut model, &tr, &[], &fast(1)).unwrap_err();
    assert!(matches!(err, graphfuse::Error::Config(_)), "{err}");
}

#[test]
fn training_is_deterministic_and_keeps_the_partial_batch() {
    let (m0, tr, val) = toy(8, false);
    let (mut a, mut b) = (m0.clone(), m0);
    let cfg = TrainConfig { batch_size: 50, ..fast(2) };
    let ra = train::train(&mut a, &tr, &val, &cfg).unwrap();
    let rb = train::train(&mut b, &tr, &val, &cfg).unwrap();
    assert_eq!(ra.history, rb.history);
    // 120 samples in batches of 50 is three steps per epoch
    assert_eq!(ra.steps, 6);
    let best = ra.best.unwrap();
    assert_eq!(best.val_acc, ra.history[best.epoch - 1].val_acc.unwrap());
    assert!(ra.history.iter().all(|h| h.val_acc.unwrap() <= best.val_acc));
}

#[test]
fn evaluation_does_not_depend_on_sample_order() {
    let (mut model, tr, te) = toy(9, false);
    train::train(&mut model, &tr, &[], &fast(2)).unwrap();
    let a = train::evaluate(&model, &te).unwrap();
    let mut shuffled = te.clone();
    shuffled.shuffle(&mut SeedStream::new(1).rng("test/order"));
    let b = train::evaluate(&model, &shuffled).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_samples, te.len());
    let per: usize = a.per_dialect_confusion.values().map(|c| c.total()).sum();
    assert_eq!(per, te.len());
}

#[test]
fn adamw_follows_the_unrolled_oracle() {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        weight_decay: 0.1,
        ..Default::default()
    };
    let mut store = ParameterStore::<f64>::new();
    let id = store.add("w", Tensor::new(&[1], vec![-2.0]).unwrap()).unwrap();
    let mut state = AdamWState::new(&store);
    let mut oracle = common::AdamOracle::new(&cfg);
    let mut theta = -2.0;
    for t in 0..100 {
        // a gradient sequence that changes sign
        let g = ((t as f64) * 0.37).sin() + 0.2 * theta;
        store.get_mut(id).grad = Some(Tensor::new(&[1], vec![g]).unwrap());
        adamw_step(&mut store, &mut state, &cfg).unwrap();
        theta = oracle.step(theta, g);
        let got = store.value(id).data()[0];
        assert!(((got - theta) / theta).abs() < 1e-10, "step {t}: {got} vs {theta}");
    }
}

#[test]
fn checkpoint_file_round_trip_keeps_predictions_bit_identical() {
    let (mut model, tr, te) = toy(10, true);
    train::train(&mut model, &tr, &[], &fast(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let echo = serde_json::json!({"note": "round trip"});
    save_checkpoint(&model, &echo, &path).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.header.config, echo);
    assert_eq!(ck.header.model, model.config);
    for e in &te {
        let (a, b) = (model.forward_task(e).unwrap(), ck.model.forward_task(e).unwrap());
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(model.forward_dialect(e).unwrap(), ck.model.forward_dialect(e).unwrap());
    }
}

#[test]
fn ablations_ignore_the_missing_modality() {
    let set = synthetic::xor_fusion(16, 0, 2);
    let emb = set.embeddings.as_ref();
    let g = GraphConfig::default();
    let text_only = FusionModel::<f64>::new(synthetic::xor_model_config(Ablation::TextOnly), None, 2).unwrap();
    let graph_only = FusionModel::<f64>::new(synthetic::xor_model_config(Ablation::GraphOnly), None, 2).unwrap();
    let a = text_only.prepare(&set.train[0], &g, emb).unwrap();
    let b = text_only.prepare(&set.train[1], &g, emb).unwrap();
    // same text vector, different graphs
    let pair = set
        .train
        .iter()
        .skip(1)
        .find(|s| emb.unwrap().get(&s.id).unwrap() == emb.unwrap().get(&set.train[0].id).unwrap() && s.text != set.train[0].text)
        .unwrap();
    let c = text_only.prepare(pair, &g, emb).unwrap();
    assert_eq!(text_only.embed(&a).unwrap(), text_only.embed(&c).unwrap());
    // graph-only sees the same graph through different text vectors
    let mut swapped = b.clone();
    swapped.text = a.text.clone();
    assert_eq!(graph_only.embed(&b).unwrap(), graph_only.embed(&swapped).unwrap());
}
