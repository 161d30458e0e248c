//! The acceptance gate. Each test exercises one externally checkable
//! behavior of the crate end to end, enforces its bounds with constants
//! pinned right here, and prints a single pass line on success.

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use hagcn::data::{generate_synthetic, Dataset, SyntheticSpec};
use hagcn::export::MetricsRow;
use hagcn::gradsuite;
use hagcn::graph::{
    adjacency_from_graph, clipped_power, matrix_power, pad_graph, walk_reach_oracle, Graph,
    PaddedGraph,
};
use hagcn::layers::{glorot_uniform, ha_forward, ClippedPowers, GateVariant, HaConvLayer};
use hagcn::model::TrainingConfig;
use hagcn::pipelines::{
    graph_prediction, reconstruction_auc, sample_graphs, train_graph_regressor,
    train_node_classifier, train_vae, DEFAULT_ENCODER_ARCH,
};
use hagcn::rng::seeded_rng;
use hagcn::tensor::{ParamSet, Tape, Tensor};

const RANDOM_GRAPH_TRIALS: usize = 200;
const CLIPPED_POWER_TIME_LIMIT: Duration = Duration::from_secs(10);

#[test]
fn clipped_powers_match_walk_enumeration_on_random_graphs() {
    let start = Instant::now();
    let mut rng = seeded_rng(401);
    for trial in 0..RANDOM_GRAPH_TRIALS {
        let n = rng.gen_range(1..=8);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.5) {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::undirected(n, &edges).unwrap();
        let a = adjacency_from_graph(&graph);
        for k in 1..=4 {
            let clipped = clipped_power(&a, k).unwrap();
            for center in 0..n {
                let column: BTreeSet<usize> =
                    (0..n).filter(|&i| clipped.get(i, center) == 1.0).collect();
                let oracle = walk_reach_oracle(&graph, center, k).unwrap();
                assert_eq!(
                    column, oracle,
                    "trial {trial}: n {n}, k {k}, center {center}"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < CLIPPED_POWER_TIME_LIMIT, "took {elapsed:?}");
    println!(
        "pass: clipped powers match walk enumeration on {RANDOM_GRAPH_TRIALS} random graphs \
         (n <= 8, k <= 4) in {elapsed:.2?}"
    );
}

#[test]
fn adjacency_powers_count_walks_exactly_on_all_small_graphs() {
    fn count_walks(succ: &[Vec<usize>], from: usize, to: usize, steps: usize) -> u64 {
        if steps == 0 {
            return u64::from(from == to);
        }
        succ[from]
            .iter()
            .map(|&next| count_walks(succ, next, to, steps - 1))
            .sum()
    }
    let mut graphs = 0u64;
    for n in 1..=6 {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        for mask in 0u32..1 << pairs.len() {
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask >> bit & 1 == 1)
                .map(|(_, &pair)| pair)
                .collect();
            let graph = Graph::undirected(n, &edges).unwrap();
            let succ: Vec<Vec<usize>> = (0..n).map(|i| graph.successors(i).to_vec()).collect();
            let a = adjacency_from_graph(&graph);
            for k in 1..=3 {
                let power = matrix_power(&a, k).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(
                            power.get(i, j),
                            count_walks(&succ, i, j, k),
                            "n {n}, edge mask {mask:b}, k {k}, entry ({i},{j})"
                        );
                    }
                }
            }
            graphs += 1;
        }
    }
    assert_eq!(graphs, 33_867);
    println!(
        "pass: adjacency powers equal brute-force walk counts on all {graphs} graphs \
         with up to 6 nodes, k <= 3"
    );
}

const GRADIENT_EPSILON: f64 = 1e-6;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_TIME_LIMIT: Duration = Duration::from_secs(60);

#[test]
fn gradient_suite_stays_within_tolerance() {
    let start = Instant::now();
    let reports = gradsuite::run_all().unwrap();
    let elapsed = start.elapsed();
    for report in &reports {
        assert_eq!(report.epsilon, GRADIENT_EPSILON, "{}", report.name);
        assert_eq!(report.tolerance, GRADIENT_TOLERANCE, "{}", report.name);
        assert!(report.passed, "{}", report.summary_line());
        assert!(
            report.max_rel_error < GRADIENT_TOLERANCE,
            "{}",
            report.summary_line()
        );
    }
    for required in [
        "op.relu",
        "op.softmax_rows",
        "loss.cross_entropy",
        "loss.bce",
        "layer.gconv_k1",
        "layer.gconv_k2",
        "layer.gconv_k3",
        "layer.ha_orders123",
        "layer.gate_prod",
        "layer.gate_lin",
        "model.classifier",
        "model.vae_loss",
    ] {
        assert!(
            reports.iter().any(|r| r.name == required),
            "no scenario named {required}"
        );
    }
    assert!(elapsed < GRADIENT_TIME_LIMIT, "took {elapsed:?}");
    println!(
        "pass: all {} finite-difference checks stay below {GRADIENT_TOLERANCE:.0e} relative \
         error at epsilon {GRADIENT_EPSILON:.0e} in {elapsed:.2?}",
        reports.len()
    );
}

#[test]
fn ha_forward_output_is_one_block_per_order_wide() {
    let mut rng = seeded_rng(402);
    for n in 2..=6 {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let graph = Graph::undirected(n, &edges).unwrap();
        let a = adjacency_from_graph(&graph);
        for m in 1..=4 {
            for k_max in 1..=3 {
                let orders: Vec<usize> = (1..=k_max).collect();
                let powers = ClippedPowers::compute(&a, &orders).unwrap();
                for adaptive in [None, Some(GateVariant::Lin)] {
                    let mut params = ParamSet::new();
                    let layer =
                        HaConvLayer::new(&mut params, "conv", &orders, n, m, adaptive, &mut rng)
                            .unwrap();
                    let mut tape = Tape::new();
                    let x = tape.constant(glorot_uniform(&mut rng, n, m));
                    let out = ha_forward(&mut tape, &params, &layer, &powers, x, None).unwrap();
                    assert_eq!(
                        tape.value(out).shape(),
                        (n, m * k_max),
                        "n {n}, m {m}, K {k_max}, adaptive {}",
                        adaptive.is_some()
                    );
                }
            }
        }
    }
    println!(
        "pass: high-order conv output is m*K wide over the whole (n, m, K) grid \
         {{2..6}} x {{1..4}} x {{1..3}}"
    );
}

#[test]
fn zero_gate_weights_halve_the_ungated_output_exactly() {
    let orders = [1usize, 2];
    let (n, m) = (5, 3);
    let graph = Graph::undirected(n, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
    let powers = ClippedPowers::compute(&adjacency_from_graph(&graph), &orders).unwrap();
    let x = glorot_uniform(&mut seeded_rng(403), n, m);
    for gate in [GateVariant::Prod, GateVariant::Lin] {
        let mut gated_params = ParamSet::new();
        let gated = HaConvLayer::new(
            &mut gated_params,
            "conv",
            &orders,
            n,
            m,
            Some(gate),
            &mut seeded_rng(404),
        )
        .unwrap();
        let mut plain_params = ParamSet::new();
        let plain = HaConvLayer::new(
            &mut plain_params,
            "conv",
            &orders,
            n,
            m,
            None,
            &mut seeded_rng(405),
        )
        .unwrap();
        let mut rng = seeded_rng(406);
        for k in orders {
            let w = glorot_uniform(&mut rng, n, n);
            let halved = Tensor::from_vec(n, n, w.data().iter().map(|v| 0.5 * v).collect());
            let set = |params: &mut ParamSet, name: &str, value: Tensor| {
                let id = params.by_name(name).unwrap();
                params.get_mut(id).value = value;
            };
            set(&mut gated_params, &format!("conv.w{k}"), w);
            set(&mut gated_params, &format!("conv.b{k}"), Tensor::zeros(n, m));
            let q = gated_params.by_name(&format!("conv.q{k}")).unwrap();
            let q_shape = gated_params.get(q).value.shape();
            set(
                &mut gated_params,
                &format!("conv.q{k}"),
                Tensor::zeros(q_shape.0, q_shape.1),
            );
            set(&mut plain_params, &format!("conv.w{k}"), halved.unwrap());
            set(&mut plain_params, &format!("conv.b{k}"), Tensor::zeros(n, m));
        }
        let forward = |params: &ParamSet, layer: &HaConvLayer| -> Tensor {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let out = ha_forward(&mut tape, params, layer, &powers, xv, None).unwrap();
            tape.value(out).clone()
        };
        let gated_out = forward(&gated_params, &gated);
        let plain_out = forward(&plain_params, &plain);
        assert_eq!(gated_out.shape(), plain_out.shape());
        for (a, b) in gated_out.data().iter().zip(plain_out.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "gate {gate:?}");
        }
    }
    println!(
        "pass: an all-zero gate weight reproduces the ungated convolution with W halved, \
         bit for bit, for both gate forms"
    );
}

const CLASSIFIER_ARCH: &str = "gcn_{1,2}-fc8-gcn_{1,2}-fc1-softmax";
const CLASSIFIER_EPOCHS: usize = 200;
const CLASSIFIER_TEST_FLOOR: f64 = 0.9;
const CLASSIFIER_TIME_LIMIT: Duration = Duration::from_secs(30);

#[test]
fn two_clique_classifier_separates_the_cliques() {
    let start = Instant::now();
    let Dataset::Node(node) =
        generate_synthetic(&SyntheticSpec::TwoClique { clique_size: 10 }, 0).unwrap()
    else {
        unreachable!()
    };
    let config = TrainingConfig {
        epochs: CLASSIFIER_EPOCHS,
        ..TrainingConfig::default()
    };
    let first = train_node_classifier(&node, CLASSIFIER_ARCH, GateVariant::Lin, &config).unwrap();
    let last = first.history.last().unwrap();
    assert_eq!(last.train, 1.0, "training accuracy");
    assert!(last.test >= CLASSIFIER_TEST_FLOOR, "test accuracy {}", last.test);

    let second = train_node_classifier(&node, CLASSIFIER_ARCH, GateVariant::Lin, &config).unwrap();
    assert_identical_histories(&first.history, &second.history);
    assert_identical_values(&first.losses, &second.losses);

    let elapsed = start.elapsed();
    assert!(elapsed < CLASSIFIER_TIME_LIMIT, "took {elapsed:?}");
    println!(
        "pass: two-clique classifier hits train accuracy 1.0 and test accuracy {:.2} >= \
         {CLASSIFIER_TEST_FLOOR} within {CLASSIFIER_EPOCHS} epochs, identically on reruns, \
         in {elapsed:.2?} for both runs",
        last.test
    );
}

const REGRESSION_ARCH: &str = "gcn_{1,2}-fc1";
const REGRESSION_EPOCHS: usize = 300;
const REGRESSION_BASELINE_FRACTION: f64 = 0.5;

#[test]
fn edge_count_regressor_beats_half_the_mean_baseline() {
    let Dataset::Graphs(collection) = generate_synthetic(
        &SyntheticSpec::EdgeCount {
            count: 200,
            n_max: 8,
        },
        0,
    )
    .unwrap() else {
        unreachable!()
    };
    let config = TrainingConfig {
        epochs: REGRESSION_EPOCHS,
        ..TrainingConfig::default()
    };
    let result =
        train_graph_regressor(&collection, REGRESSION_ARCH, GateVariant::Lin, &config).unwrap();
    assert!(result.baseline_rmse.is_finite() && result.baseline_rmse > 0.0);
    let train_rmse = result.history.last().unwrap().train;
    assert!(
        train_rmse < REGRESSION_BASELINE_FRACTION * result.baseline_rmse,
        "train RMSE {train_rmse} vs constant-mean baseline {}",
        result.baseline_rmse
    );
    println!(
        "pass: edge-count train RMSE {train_rmse:.3} beats {REGRESSION_BASELINE_FRACTION} x \
         the constant-mean baseline {:.3} within {REGRESSION_EPOCHS} epochs on 200 graphs",
        result.baseline_rmse
    );
}

#[test]
fn masked_entries_never_influence_results() {
    let Dataset::Node(node) =
        generate_synthetic(&SyntheticSpec::TwoClique { clique_size: 6 }, 1).unwrap()
    else {
        unreachable!()
    };
    let config = TrainingConfig {
        epochs: 25,
        ..TrainingConfig::default()
    };
    let arch = "gcn_{1,2}-fc1-softmax";
    let clean = train_node_classifier(&node, arch, GateVariant::Lin, &config).unwrap();
    let mut scrambled = node.clone();
    for &i in clean.masks.val.iter().chain(&clean.masks.test) {
        scrambled.labels[i] = 1 - scrambled.labels[i];
    }
    let altered = train_node_classifier(&scrambled, arch, GateVariant::Lin, &config).unwrap();
    assert_identical_values(&clean.losses, &altered.losses);

    let Dataset::Graphs(collection) = generate_synthetic(
        &SyntheticSpec::EdgeCount {
            count: 12,
            n_max: 8,
        },
        2,
    )
    .unwrap() else {
        unreachable!()
    };
    let config = TrainingConfig {
        epochs: 8,
        ..TrainingConfig::default()
    };
    let result =
        train_graph_regressor(&collection, "adp_gcn_{1,2}-fc1", GateVariant::Lin, &config).unwrap();
    let sample = collection
        .graphs
        .iter()
        .find(|s| s.graph.num_nodes() < collection.n_max)
        .expect("the generator emits graphs below the padded size");
    let clean_pad = pad_graph(&sample.graph, &sample.features, collection.n_max).unwrap();
    let mut junk_features = clean_pad.features.clone();
    for i in sample.graph.num_nodes()..collection.n_max {
        for j in 0..junk_features.cols() {
            junk_features.set(i, j, 1e6);
        }
    }
    let junk_pad = PaddedGraph {
        adjacency: clean_pad.adjacency.clone(),
        features: junk_features,
        valid_count: clean_pad.valid_count,
        mask: clean_pad.mask.clone(),
    };
    let powers = result.model.powers_for(&clean_pad.adjacency).unwrap();
    let clean_pred = graph_prediction(&result.model, &clean_pad, &powers).unwrap();
    let junk_pred = graph_prediction(&result.model, &junk_pad, &powers).unwrap();
    assert_eq!(clean_pred.to_bits(), junk_pred.to_bits());
    println!(
        "pass: flipping held-out labels leaves the training-loss sequence bit-identical, and \
         overwriting pad-row features leaves graph predictions bit-identical"
    );
}

const VAE_EPOCHS: usize = 15;
const VAE_AUC_FLOOR: f64 = 0.8;
const VAE_SAMPLE_COUNT: usize = 64;

#[test]
fn community_vae_reconstructs_held_out_graphs() {
    let Dataset::Graphs(collection) =
        generate_synthetic(&SyntheticSpec::Communities { count: 200 }, 0).unwrap()
    else {
        unreachable!()
    };
    let config = TrainingConfig {
        epochs: VAE_EPOCHS,
        ..TrainingConfig::default()
    };
    let result = train_vae(&collection, DEFAULT_ENCODER_ARCH, GateVariant::Lin, &config).unwrap();

    assert!(!result.kl_values.is_empty());
    assert!(
        result.kl_values.iter().all(|&kl| kl >= 0.0),
        "smallest KL {}",
        result.kl_values.iter().copied().fold(f64::INFINITY, f64::min)
    );

    let mut held_out = Vec::new();
    for &i in &result.splits.test {
        let sample = &collection.graphs[i];
        held_out.push(pad_graph(&sample.graph, &sample.features, collection.n_max).unwrap());
    }
    assert!(!held_out.is_empty());
    let auc = reconstruction_auc(&result.model, &held_out).unwrap();
    assert!(auc > VAE_AUC_FLOOR, "held-out reconstruction AUC {auc}");

    let samples = sample_graphs(&result.model, VAE_SAMPLE_COUNT, 11, 0.5).unwrap();
    assert_eq!(samples.len(), VAE_SAMPLE_COUNT);
    for graph in &samples {
        let n = graph.num_nodes();
        assert!(n >= 1 && n <= result.model.n_max());
        for (u, v) in graph.edges() {
            assert!(u != v && u < n && v < n, "edge ({u},{v}) in a {n}-node graph");
        }
    }
    println!(
        "pass: community generator reaches held-out reconstruction AUC {auc:.3} > \
         {VAE_AUC_FLOOR}, keeps KL nonnegative at every step, and decodes \
         {VAE_SAMPLE_COUNT} well-formed samples"
    );
}

#[test]
fn cli_runs_are_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_hagcn"))
            .current_dir(dir.path())
            .args(args)
            .output()
            .expect("binary launches");
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["gen-data", "--kind", "two-clique", "--out", "t.json"]);
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"arch": "gcn_{1,2}-fc4-fc1-softmax", "data": "t.json", "epochs": 80, "dropout_rate": 0.1, "seed": 5}"#,
    )
    .unwrap();
    for out in ["a", "b"] {
        run(&["train-node", "--config", "cfg.json", "--out", out]);
    }
    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));
    assert!(!read("a/metrics.csv").is_empty());
    assert_eq!(read("a/checkpoint.json"), read("b/checkpoint.json"));
    println!(
        "pass: two command-line runs with the same config and seed write byte-identical \
         metrics files"
    );
}

fn assert_identical_histories(a: &[MetricsRow], b: &[MetricsRow]) {
    assert_eq!(a.len(), b.len());
    for (epoch, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.epoch, y.epoch);
        for (l, r) in [(x.train, y.train), (x.val, y.val), (x.test, y.test)] {
            assert_eq!(l.to_bits(), r.to_bits(), "epoch {epoch}");
        }
    }
}

fn assert_identical_values(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "step {i}");
    }
}
