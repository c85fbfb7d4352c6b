mod common;

use std::path::PathBuf;

use glhg_core::corpus::PAD;
use glhg_core::metrics::perplexity;
use glhg_core::model::Network;
use glhg_core::numerics::{ParamGrads, ParamStore, Tape, Tensor, Var};
use glhg_core::training::{
    example_loss, load_dataset, load_labels, nll_loss, AdamW, Checkpoint, Dataset, Reduction,
    TrainConfig, Trainer,
};
use rand::Rng;

fn config() -> TrainConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/gradcheck.toml");
    TrainConfig::load(&path).unwrap()
}

fn dataset(config: &TrainConfig) -> Dataset {
    let labels = load_labels(config).unwrap();
    load_dataset(config, labels, None).unwrap()
}

#[test]
fn nll_matches_direct_summation() {
    let mut rng = common::rng(31);
    for _ in 0..20 {
        let (z, v) = (rng.random_range(1..8), rng.random_range(2..30));
        let logits = common::random_tensor(&mut rng, z, v, 6.0);
        let mut targets: Vec<usize> = (0..z).map(|_| rng.random_range(1..v)).collect();
        if z > 1 {
            targets[rng.random_range(0..z)] = PAD;
        }
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == PAD {
                continue;
            }
            let row = logits.row(r);
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + row.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
            total += lse - row[t];
            count += 1;
        }
        for (reduction, expected) in [
            (Reduction::Sum, total),
            (Reduction::Mean, total / count as f64),
        ] {
            let mut tape = Tape::new();
            let l = tape.input(logits.clone());
            let loss = nll_loss(&mut tape, l, &targets, reduction).unwrap();
            let got = tape.value(loss).item().unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }
}

#[test]
fn adamw_first_step_closed_form() {
    let cases = [
        (0.7, 0.3, 0.0),
        (-1.2, -4.0, 0.0),
        (0.25, 1e-3, 0.01),
        (2.0, -0.05, 0.1),
    ];
    for (theta, g, wd) in cases {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(theta), true).unwrap();
        store.get_mut(id).grad = Tensor::scalar(g);
        let (base, warmup) = (3e-3, 100);
        let mut opt = AdamW::new(&store, base, 0.9, 0.99, wd, warmup);
        let lr = opt.step(&mut store).unwrap();
        // m̂ = g and v̂ = g² after one step from zero moments
        let lr_expected = base / warmup as f64;
        let expected = theta * (1.0 - lr_expected * wd) - lr_expected * g / (g.abs() + 1e-8);
        assert_eq!(lr, lr_expected);
        let got = store.value(id).item().unwrap();
        assert!(
            (got - expected).abs() <= 1e-15 * expected.abs().max(1.0),
            "{got} vs {expected}"
        );
        assert_eq!(store.get(id).grad.item().unwrap(), 0.0);
    }
}

fn grads_of(
    net: &Network,
    store: &ParamStore,
    ex: &glhg_core::model::Prepared,
    pick: impl Fn(&glhg_core::training::LossParts) -> Var,
    l1: f64,
    l2: f64,
) -> (ParamGrads, Tape) {
    let mut tape = Tape::new();
    let parts = example_loss(net, &mut tape, store, ex, l1, l2, Reduction::Mean).unwrap();
    let target = pick(&parts);
    (tape.gradients(target, store).unwrap(), tape)
}

#[test]
fn joint_gradient_is_weighted_sum_of_parts() {
    let config = config();
    let data = dataset(&config);
    let (net, store) =
        Network::new(config.model_config(data.vocab.len(), data.labels.len()), 3).unwrap();
    let ex = net.prepare(&data.examples[4], &data.vocab).unwrap();
    let (l1, l2) = (0.3, 0.7);
    let (total, _) = grads_of(&net, &store, &ex, |p| p.total, l1, l2);
    let (g1, _) = grads_of(&net, &store, &ex, |p| p.l1, l1, l2);
    let (g2, _) = grads_of(&net, &store, &ex, |p| p.l2, l1, l2);
    let mut worst: f64 = 0.0;
    for (id, _) in store.iter() {
        let (t, a, b) = (
            total.dense(&store, id),
            g1.dense(&store, id),
            g2.dense(&store, id),
        );
        for k in 0..t.len() {
            worst = worst.max((t.data()[k] - (l1 * a.data()[k] + l2 * b.data()[k])).abs());
        }
    }
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn zero_weights_cut_gradient_paths() {
    let config = config();
    let data = dataset(&config);
    let (net, store) =
        Network::new(config.model_config(data.vocab.len(), data.labels.len()), 3).unwrap();
    let ex = net.prepare(&data.examples[0], &data.vocab).unwrap();

    let (g, _) = grads_of(&net, &store, &ex, |p| p.total, 0.5, 0.0);
    for (id, p) in store.iter() {
        if p.name.starts_with("cls.") {
            assert!(
                g.dense(&store, id).data().iter().all(|&x| x == 0.0),
                "{}",
                p.name
            );
        }
    }
    let (g, _) = grads_of(&net, &store, &ex, |p| p.total, 0.0, 1.0);
    let bias = store.id_of("dec.out_bias").unwrap();
    assert!(g.dense(&store, bias).data().iter().all(|&x| x == 0.0));
}

#[test]
fn perplexity_agrees_with_summed_nll() {
    let mut rng = common::rng(8);
    let logits = common::random_tensor(&mut rng, 5, 11, 3.0);
    let targets = [3, 9, 1, 4, 2];
    let mut tape = Tape::new();
    let l = tape.input(logits);
    let sum = nll_loss(&mut tape, l, &targets, Reduction::Sum).unwrap();
    let mean = nll_loss(&mut tape, l, &targets, Reduction::Mean).unwrap();
    let ppl = perplexity(tape.value(sum).item().unwrap(), targets.len()).unwrap();
    assert!((ppl - tape.value(mean).item().unwrap().exp()).abs() < 1e-9);
}

fn short_run(steps: u64) -> (Trainer, Vec<f64>, Dataset) {
    let mut config = config();
    config.max_steps = steps;
    config.epochs = 100;
    let data = dataset(&config);
    let mut trainer = Trainer::new(config, &data.vocab, data.labels.len(), &data.examples).unwrap();
    let mut losses = Vec::new();
    trainer
        .fit(
            &mut |log| {
                losses.push(log.loss);
                Ok(())
            },
            &mut |_| Ok(()),
        )
        .unwrap();
    (trainer, losses, data)
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let (a, la, data) = short_run(10);
    let (b, lb, _) = short_run(10);
    assert_eq!(la.len(), 10);
    assert_eq!(
        la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.checkpoint(&data.labels, &data.vocab).to_bytes(),
        b.checkpoint(&data.labels, &data.vocab).to_bytes()
    );
}

#[test]
fn checkpoint_round_trip_preserves_forward_pass() {
    let (trainer, _, data) = short_run(3);
    let bytes = trainer.checkpoint(&data.labels, &data.vocab).to_bytes();
    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(restored.to_bytes(), bytes);
    let (net, store, opt) = restored.restore().unwrap();
    assert_eq!(opt, trainer.opt);
    for ex in trainer.examples.iter().take(3) {
        let run = |n: &Network, s: &ParamStore| {
            let mut tape = Tape::new();
            let out = n.forward(&mut tape, s, ex).unwrap();
            (
                tape.value(out.logits).clone(),
                tape.value(out.class_logits).clone(),
            )
        };
        assert_eq!(run(&trainer.net, &trainer.store), run(&net, &store));
    }
}
