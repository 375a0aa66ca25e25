//! Training-loop contracts: convergence on a convex probe, gradient-log
//! replay, cost counters and metric identities.

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sampimp_core::data::{make_windows, prepare, synth_series, SynthProfile, TimeSeriesDataset};
use sampimp_core::importance::{importance_scores, select_top_p, subset_size};
use sampimp_core::numerics::{
    backward_per_sample, grad_norm, init_model, LstmTopology, ModelState, Topology,
};
use sampimp_core::training::{
    mean_loss, metrics, retrain_subset, train_tracked, train_tracked_observed, TrainConfig,
};

fn probe_data() -> TimeSeriesDataset {
    // y = 0.8·x exactly, so the optimum of the 1-parameter probe is w = 0.8
    let values: Vec<f64> = (0..40).map(|t| 0.9 * 0.8f64.powi(t % 8)).collect();
    let mut d = make_windows(&values, 1).unwrap();
    for (x, y) in d.x.iter().zip(d.y.iter_mut()) {
        *y = 0.8 * x.values()[0];
    }
    d
}

#[test]
fn convex_probe_loss_decreases_for_any_batch_size() {
    let d = probe_data();
    for batch_size in [1, d.len()] {
        let cfg = TrainConfig {
            epochs: 20,
            batch_size,
            topology: Topology::Linear { input: 1 },
            seed: 4,
            ..TrainConfig::default()
        };
        let init = init_model(cfg.topology, cfg.seed).unwrap();
        let run = train_tracked(&cfg, &d).unwrap();
        let before = mean_loss(&init, &d).unwrap();
        let after = mean_loss(&run.model, &d).unwrap();
        assert!(after < before, "batch {batch_size}: {before} -> {after}");
        assert!(run.epoch_losses.last() < run.epoch_losses.first());
    }
}

#[test]
fn gradient_log_replays_from_parameter_trace() {
    let series = synth_series(5, 600, &SynthProfile::default()).unwrap();
    let data = prepare(&series, 0.8, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        topology: Topology::Lstm(LstmTopology::new(1, 8, 1)),
        seed: 9,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let visits: Vec<(usize, usize)> = (0..10)
        .map(|_| {
            let e = *(0..cfg.epochs)
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .unwrap();
            let s = *(0..data.train.len())
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .unwrap();
            (e, s)
        })
        .collect();

    let mut trace: Vec<(usize, usize, ModelState)> = Vec::new();
    let run = train_tracked_observed(&cfg, &data.train, |ev| {
        for &(e, s) in &visits {
            if ev.epoch == e && ev.samples.contains(&s) {
                trace.push((e, s, ev.model.clone()));
            }
        }
    })
    .unwrap();
    assert_eq!(trace.len(), 10);
    for (e, s, params) in trace {
        let g = backward_per_sample(&params, &data.train.x[s], data.train.y[s]).unwrap();
        assert_eq!(
            grad_norm(&g).to_bits(),
            run.log.get(e, s).to_bits(),
            "epoch {e} sample {s}"
        );
    }
}

#[test]
fn visit_counts_are_exact() {
    let values: Vec<f64> = (0..57).map(|t| (t as f64 * 0.2).sin()).collect();
    let d = make_windows(&values, 1).unwrap();
    let n = d.len();
    for epochs in [1, 3] {
        let cfg = TrainConfig {
            epochs,
            batch_size: 5,
            topology: Topology::Lstm(LstmTopology::new(1, 2, 1)),
            ..TrainConfig::default()
        };
        let full = train_tracked(&cfg, &d).unwrap();
        assert_eq!(full.ledger.sample_visits, (epochs * n) as u64);
        assert_eq!(
            full.ledger.param_update_count,
            (epochs * n.div_ceil(5)) as u64
        );
        let ranking = importance_scores(&full.log).unwrap();
        for p in [5.0, 33.0, 50.0, 99.0, 100.0] {
            let sel = select_top_p(&ranking, p).unwrap();
            let sub = retrain_subset(&cfg, &d, &sel).unwrap();
            assert_eq!(
                sub.ledger.sample_visits,
                (epochs * subset_size(p, n)) as u64
            );
            let ratio = sub.ledger.sample_visits as f64 / full.ledger.sample_visits as f64;
            assert_eq!(ratio, sel.k as f64 / n as f64);
            assert!(sub.ledger.estimated_flops <= full.ledger.estimated_flops);
        }
    }
}

proptest! {
    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-50f64..50.0, -50f64..50.0), 1..40)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = metrics(&p, &t).unwrap();
        prop_assert!(m.mae >= 0.0);
        prop_assert!(m.rmse + 1e-12 >= m.mae);
    }

    #[test]
    fn constant_error_gives_equal_metrics(truth in prop::collection::vec(-10f64..10.0, 1..30), c in -5f64..5.0) {
        let preds: Vec<f64> = truth.iter().map(|t| t + c).collect();
        let m = metrics(&preds, &truth).unwrap();
        prop_assert!((m.mae - c.abs()).abs() < 1e-9);
        prop_assert!((m.rmse - c.abs()).abs() < 1e-9);
    }
}
