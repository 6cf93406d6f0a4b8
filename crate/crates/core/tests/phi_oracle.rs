//! Server-pipeline oracles.
//!
//! The central one: with compensation and momentum disabled, the
//! overlapped schedule is federated averaging running exactly one round
//! behind. A brute-force replay reconstructs every weight trajectory from
//! nothing but the config, the logged per-client iteration counts, and
//! raw loops, then demands agreement within 1e-12 per round.

use rand::Rng;

use flsim_core::aggregation::{self, ClientUpdate, CompensationScope, NagMode, ServerState};
use flsim_core::config::{
    ComputeConfig, DatasetConfig, DatasetSource, ExperimentConfig, NetworkConfig, OptimizerConfig,
    PartitionConfig, Seeds, Strategy,
};
use flsim_core::data::{self, ClientShard, Dataset};
use flsim_core::model::{self, Batch, LossKind, ModelSpec};
use flsim_core::param::ParamVector;
use flsim_core::rng;
use flsim_core::sim::{self, payload_bytes};

// ── random instances ────────────────────────────────────────────────────

fn instance(seed: u64) -> ExperimentConfig {
    let mut s = rng::stream(&[0x0f0f_5eed, seed]);
    let class_count = s.gen_range(2..5usize);
    let input_dim = s.gen_range(2..6usize);
    let model = match seed % 3 {
        0 => ModelSpec::linear_regression(input_dim, class_count).unwrap(),
        1 => ModelSpec::logistic_regression(input_dim, class_count).unwrap(),
        _ => ModelSpec::mlp(input_dim, s.gen_range(3..6), class_count, LossKind::CrossEntropy)
            .unwrap(),
    };
    let payload = payload_bytes(&model);
    // Round-trip times from well under one iteration to far past the cap,
    // so every stopping rule in the event core gets exercised.
    let round_trip = [0.3, 1.0, 2.7, 5.5, 9.0][(seed as usize) % 5];
    let jitter = if seed.is_multiple_of(2) { 0.0 } else { 0.3 };
    ExperimentConfig {
        strategy: Strategy::Overlap,
        model,
        dataset: DatasetConfig {
            source: DatasetSource::Generate {
                n_samples: s.gen_range(80..200),
                input_dim,
                class_count,
                cluster_spread: 1.0,
            },
            batch_size: s.gen_range(4..16),
            holdout_fraction: 0.15,
        },
        partition: PartitionConfig {
            n_clients: s.gen_range(2..9),
            label_alpha: 2.0,
            size_alpha: 20.0,
        },
        optimizer: OptimizerConfig {
            eta: 0.05 + 0.25 * s.gen::<f64>(),
            eta_decay: [0.0, 0.0, 0.05, 0.1][(seed as usize) % 4],
            lambda: 0.0,
            beta: 0.0,
            nag_mode: NagMode::ScaledCorrection,
            compensation: CompensationScope::Aggregate,
            e_max: s.gen_range(1..7),
            fraction_c: 1.0,
        },
        network: NetworkConfig {
            latency: 0.0,
            bandwidth: 2.0 * payload / round_trip,
            jitter_frac: jitter,
        },
        compute: ComputeConfig { t_train: 1.0, per_client: None },
        rounds: if seed == 0 { 50 } else { s.gen_range(6..13) },
        seeds: Seeds {
            data: seed * 11 + 1,
            partition: seed * 11 + 2,
            init: seed * 11 + 3,
            sampling: seed * 11 + 4,
            jitter: seed * 11 + 5,
        },
    }
}

/// Rebuilds the training split and shards exactly as the simulator does.
fn rebuild_data(cfg: &ExperimentConfig) -> (Dataset, Vec<ClientShard>) {
    let full = match &cfg.dataset.source {
        DatasetSource::Generate { n_samples, input_dim, class_count, cluster_spread } => {
            data::generate_classification(
                cfg.seeds.data,
                *n_samples,
                *input_dim,
                *class_count,
                *cluster_spread,
            )
            .unwrap()
        }
        DatasetSource::Idx { .. } => unreachable!("instances are generated"),
    };
    let (train, _eval) =
        data::split_holdout(&full, cfg.dataset.holdout_fraction, cfg.seeds.data).unwrap();
    let shards = data::partition_noniid(
        &train,
        cfg.partition.n_clients,
        cfg.partition.label_alpha,
        cfg.partition.size_alpha,
        cfg.seeds.partition,
    )
    .unwrap();
    (train, shards)
}

/// Replays the run as literal one-round-delayed federated averaging,
/// using only logged iteration counts and raw arithmetic for the server
/// side. `g[r]` is the model spliced in at round `r`; the bubble makes
/// `g[0] = g[1] = w0`, and the simulator's round-`r` row reports
/// `g[r+1]`.
fn replay_delayed_fedavg(cfg: &ExperimentConfig, out: &sim::RunOutput) -> Vec<Vec<f64>> {
    let (train, shards) = rebuild_data(cfg);
    let w0 = model::init_params(&cfg.model, cfg.seeds.init).unwrap();
    let rounds = cfg.rounds as usize;
    let mut g: Vec<Vec<f64>> = vec![w0.as_slice().to_vec(), w0.as_slice().to_vec()];
    for r in 1..rounds {
        let eta = cfg.eta_at(r as u64 - 1);
        let basis = g[r - 1].clone();
        let mut mean_grad = vec![0.0f64; basis.len()];
        let mut total_p = 0.0f64;
        for (k, shard) in shards.iter().enumerate() {
            let iters = out.log.rounds[r - 1].per_client_e[k];
            let plan = sim::round_batches(
                &shard.indices,
                cfg.dataset.batch_size,
                cfg.seeds.sampling,
                k,
                (r - 1) as u64,
            )
            .unwrap();
            let mut w = ParamVector::new(basis.clone()).unwrap();
            for i in 0..iters as usize {
                let batch = train.batch_of(&plan[i % plan.len()], cfg.model.loss).unwrap();
                w = model::local_sgd_step(&cfg.model, &w, &batch, eta).unwrap();
            }
            let p = shard.p_k;
            total_p += p;
            for ((m, b), l) in mean_grad.iter_mut().zip(&basis).zip(w.as_slice()) {
                *m += p * (b - l) / eta;
            }
        }
        let next: Vec<f64> =
            g[r].iter().zip(&mean_grad).map(|(w, m)| w - eta * (m / total_p)).collect();
        g.push(next);
    }
    g
}

#[test]
fn overlap_with_compensation_off_equals_delayed_fedavg_within_1e12() {
    let mut instances = 0;
    for seed in 0..24u64 {
        let cfg = instance(seed);
        let out = sim::run_traced(&cfg).unwrap();
        let replay = replay_delayed_fedavg(&cfg, &out);
        assert_eq!(out.round_models.len(), cfg.rounds as usize);
        for (r, model_r) in out.round_models.iter().enumerate() {
            let oracle = &replay[r + 1];
            let worst = model_r
                .as_slice()
                .iter()
                .zip(oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(
                worst < 1e-12,
                "instance {seed}, round {r}: trajectories diverge by {worst:.3e}"
            );
        }
        instances += 1;
    }
    assert!(instances >= 20);
    println!("delayed-averaging oracle matched on {instances} instances");
}

// ── compensation gap ────────────────────────────────────────────────────

#[test]
fn compensation_gap_shrinks_when_the_server_step_halves() {
    let mut wins = 0;
    for trial in 0..50u64 {
        let mut s = rng::stream(&[0x9a9_0ab, trial]);
        let d = s.gen_range(2..5usize);
        let k = s.gen_range(2..4usize);
        let spec = ModelSpec::logistic_regression(d, k).unwrap();
        let n = 30usize;
        let inputs: Vec<f64> = (0..n * d).map(|_| s.gen_range(-2.0..2.0)).collect();
        let classes: Vec<usize> = (0..n).map(|_| s.gen_range(0..k)).collect();
        let batch = Batch::classification(inputs, d, classes).unwrap();
        let w_basis =
            ParamVector::new((0..spec.param_count()).map(|_| s.gen_range(-1.0..1.0)).collect())
                .unwrap();
        let grad = model::gradient(&spec, &w_basis, &batch).unwrap();
        let gap_at = |eta: f64| {
            let w_t = w_basis.sub(&grad.scale(eta).unwrap()).unwrap();
            aggregation::approximation_gap(&spec, &w_t, &w_basis, &batch, 1.0).unwrap()
        };
        if gap_at(0.1) < gap_at(0.2) {
            wins += 1;
        }
    }
    assert!(wins >= 45, "gap shrank under a halved step in only {wins} of 50 trials");
    println!("gap shrank in {wins} of 50 trials");
}

// ── learning-rate hiding ────────────────────────────────────────────────

/// A server that never learns the clients' true rate can restore with an
/// assumed rate of 1.0 and fold the truth into its own knobs: divide both
/// lambda and its own step by the true rate. The resulting weight
/// trajectory is identical.
#[test]
fn assumed_rate_one_with_rescaled_knobs_reproduces_the_true_update() {
    for scope in [CompensationScope::Aggregate, CompensationScope::PerClient] {
        for (i, &eta_c) in [0.001, 0.01, 0.1, 1.0].iter().enumerate() {
            let mut s = rng::stream(&[0x17b_cafe, scope as u64, i as u64]);
            let dim = 6usize;
            let eta_server = 0.05;
            let lambda = 0.3;
            let beta = 0.6;
            let w0 = ParamVector::new((0..dim).map(|_| s.gen_range(-1.0..1.0)).collect()).unwrap();

            let mut truth = ServerState::new(
                w0.clone(),
                eta_server,
                lambda,
                beta,
                NagMode::ScaledCorrection,
                scope,
            )
            .unwrap();
            truth.eta_restore = eta_c;

            let mut hidden = ServerState::new(
                w0.clone(),
                eta_server / eta_c,
                lambda / eta_c,
                beta,
                NagMode::ScaledCorrection,
                scope,
            )
            .unwrap();
            hidden.eta_restore = 1.0;

            for round in 0..3u64 {
                // Both servers consume the same wire bytes: weights that
                // clients trained from the shared stale basis at eta_c.
                let basis = truth.w_prev.clone();
                let updates: Vec<ClientUpdate> = (0..4)
                    .map(|k| {
                        let applied =
                            ParamVector::new((0..dim).map(|_| s.gen_range(-1.0..1.0)).collect())
                                .unwrap();
                        let w_up = basis.sub(&applied.scale(eta_c).unwrap()).unwrap();
                        ClientUpdate::new(k, w_up, 0.25, 1).unwrap()
                    })
                    .collect();
                truth = aggregation::phi(&truth, &updates).unwrap();
                hidden = aggregation::phi(&hidden, &updates).unwrap();
                for (a, b) in truth.w_t.as_slice().iter().zip(hidden.w_t.as_slice()) {
                    assert!(
                        (a - b).abs() < 1e-12 * a.abs().max(1.0),
                        "eta_c {eta_c}, round {round}: {a} vs {b}"
                    );
                }
            }
        }
    }
}
