use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradient_check;
use crate::encoders::{
    feature_encode_batch, graph_encode_batch, tape_params_from_flat, Fusion,
};

fn graph_cfg() -> GraphEncoderConfig {
    GraphEncoderConfig {
        layers: 1,
        embed_dim: 8,
        heads: 2,
        max_node_count: 8,
        ..GraphEncoderConfig::default()
    }
}

// Keep the hidden layer comfortably wide: with zero-initialised biases a
// very narrow relu layer can zero out an unlucky sample entirely, which
// the training entry point rejects as a bad sample.
fn feature_cfg() -> FeatureEncoderConfig {
    FeatureEncoderConfig {
        input_dim: 6,
        hidden_dims: vec![10],
        embed_dim: 8,
        fusion: Fusion::Early,
        views: 1,
    }
}

fn tiny_graph(rng: &mut ChaCha8Rng) -> NodeGraph {
    let n = rng.gen_range(3..6);
    let positions: Vec<[f64; 2]> =
        (0..n).map(|_| [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)]).collect();
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if rng.gen_bool(0.5) {
        edges.push((n - 1, 0));
    }
    NodeGraph::new(positions, &edges)
}

fn make_dataset(count: usize, seed: u64) -> Vec<PairedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PairedSample {
            features: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            graph: tiny_graph(&mut rng),
        })
        .collect()
}

fn quiet_cfg() -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() }
}

// ── config ──────────────────────────────────────────────────────────────

#[test]
fn config_rejects_bad_values() {
    let ok = TrainConfig::default();
    ok.check().unwrap();
    for breaker in [
        &mut |c: &mut TrainConfig| c.learning_rate = -1.0,
        &mut |c: &mut TrainConfig| c.adam_beta1 = 1.0,
        &mut |c: &mut TrainConfig| c.adam_beta2 = -0.1,
        &mut |c: &mut TrainConfig| c.adam_eps = 0.0,
        &mut |c: &mut TrainConfig| c.omega2 = -0.5,
        &mut |c: &mut TrainConfig| c.bce_epsilon = 0.5,
        &mut |c: &mut TrainConfig| c.bce_epsilon = 0.0,
        &mut |c: &mut TrainConfig| c.scale = 0.0,
        &mut |c: &mut TrainConfig| c.batch_size = 0,
    ] as [&mut dyn FnMut(&mut TrainConfig); 9]
    {
        let mut cfg = TrainConfig::default();
        breaker(&mut cfg);
        assert!(matches!(cfg.check(), Err(TrainError::BadConfig(_))), "{cfg:?}");
    }
}

// ── similarity matrix ───────────────────────────────────────────────────

#[test]
fn similarity_identical_unit_vectors_all_ones() {
    let e = Tensor::<f64>::from_f64_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
    let alpha = similarity_matrix(&e, &e).unwrap();
    for &v in alpha.as_slice() {
        assert!((v - 1.0f64).abs() <= 1e-15);
    }
}

#[test]
fn similarity_orthonormal_rows_identity() {
    let e = Tensor::<f64>::from_f64_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]);
    let alpha = similarity_matrix(&e, &e).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((alpha.get(i, j) - want).abs() <= 1e-15);
        }
    }
}

#[test]
fn similarity_matches_per_pair_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rand_rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..3).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    };
    let a = rand_rows(&mut rng);
    let b = rand_rows(&mut rng);
    let alpha =
        similarity_matrix(&Tensor::<f64>::from_f64_rows(&a), &Tensor::<f64>::from_f64_rows(&b)).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
            let na: f64 = a[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((alpha.get(i, j) - dot / (na * nb)).abs() <= 1e-12);
            assert!(alpha.get(i, j).abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn similarity_zero_norm_is_rejected() {
    let good = Tensor::<f64>::from_f64_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let bad = Tensor::<f64>::from_f64_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
    assert!(matches!(
        similarity_matrix(&good, &bad),
        Err(TrainError::ZeroNorm { side: "graph", row: 1 })
    ));
}

// ── contrastive loss ────────────────────────────────────────────────────

#[test]
fn contrastive_single_pair_is_zero() {
    let alpha = Tensor::<f64>::from_f64_rows(&[vec![0.37]]);
    assert_eq!(contrastive_loss(&alpha), 0.0);
}

#[test]
fn contrastive_uniform_matrix_is_log_n() {
    for n in [2usize, 3, 5] {
        let alpha = Tensor::from_vec(n, n, vec![0.7f64; n * n]);
        assert!((contrastive_loss(&alpha) - (n as f64).ln()).abs() <= 1e-12);
    }
}

#[test]
fn contrastive_strong_diagonal_closed_form() {
    let alpha = Tensor::<f64>::from_f64_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]);
    let loss = contrastive_loss(&alpha);
    let e10 = 10f64.exp();
    let expected = -(e10 / (e10 + 1.0)).ln();
    assert!((loss - expected).abs() <= 1e-12);
    assert!((loss - 4.54e-5).abs() <= 1e-8);
}

#[test]
fn contrastive_is_transpose_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.gen_range(2..6);
        let alpha =
            Tensor::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let lhs = contrastive_loss(&alpha);
        let rhs = contrastive_loss(&alpha.transpose());
        assert!((lhs - rhs).abs() <= 1e-12);
    }
}

#[test]
fn row_term_ignores_per_row_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4;
    let alpha = Tensor::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let mut shifted = alpha.clone();
    for r in 0..n {
        let c = rng.gen_range(-3.0..3.0);
        for j in 0..n {
            shifted.set(r, j, shifted.get(r, j) + c);
        }
    }
    assert!((row_nll(&alpha) - row_nll(&shifted)).abs() <= 1e-10);
    // A global constant shift leaves the full loss unchanged as well.
    let global = alpha.map(|x| x + 1.7);
    assert!((contrastive_loss(&alpha) - contrastive_loss(&global)).abs() <= 1e-10);
}

// ── chamfer credit loss ─────────────────────────────────────────────────

/// Independent re-derivation: softmax without max subtraction, nearest
/// distances taken directly instead of through correspondence indices.
fn chamfer_oracle(graphs: &[&NodeGraph], alpha: &Tensor<f64>) -> f64 {
    let n = graphs.len();
    let mut total = 0.0;
    for b in 0..n {
        let exps: Vec<f64> = (0..n).map(|i| alpha.get(i, b).exp()).collect();
        let z: f64 = exps.iter().sum();
        let gb = graphs[b];
        for (i, &e) in exps.iter().enumerate() {
            let mut dsum = 0.0;
            for &p in &gb.positions {
                let best = graphs[i]
                    .positions
                    .iter()
                    .map(|&q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                dsum += best;
            }
            total += e / z * dsum / gb.node_count() as f64;
        }
    }
    total / n as f64
}

#[test]
fn chamfer_identical_graphs_is_zero() {
    let g = NodeGraph::new(vec![[0.0, 0.0], [1.0, 1.0]], &[(0, 1)]);
    let alpha = Tensor::from_vec(3, 3, vec![0.2f64; 9]);
    let loss = chamfer_credit_loss(&[&g, &g, &g], &alpha).unwrap();
    assert!(loss.abs() <= 1e-15);
}

#[test]
fn chamfer_single_element_is_zero() {
    let g = NodeGraph::new(vec![[3.0, -1.0], [4.0, 2.0]], &[(0, 1)]);
    let alpha = Tensor::<f64>::from_f64_rows(&[vec![0.9]]);
    assert!(chamfer_credit_loss(&[&g], &alpha).unwrap().abs() <= 1e-15);
}

#[test]
fn chamfer_translate_with_uniform_weights() {
    let g0 = NodeGraph::new(vec![[0.0, 0.0], [0.0, 1.0]], &[(0, 1)]);
    let g1 = NodeGraph::new(vec![[1.0, 0.0], [1.0, 1.0]], &[(0, 1)]);
    let alpha = Tensor::from_vec(2, 2, vec![0.0f64; 4]);
    let graphs = [&g0, &g1];
    let loss = chamfer_credit_loss(&graphs, &alpha).unwrap();
    // Uniform weights put 0.5 on the zero-distance self match and 0.5
    // on the unit translate, for both ground-truth roles.
    assert!((loss - 0.5).abs() <= 1e-12);
    assert!((loss - chamfer_oracle(&graphs, &alpha)).abs() <= 1e-9);
}

#[test]
fn chamfer_matches_brute_force_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let graphs: Vec<NodeGraph> = (0..3).map(|_| tiny_graph(&mut rng)).collect();
        let refs: Vec<&NodeGraph> = graphs.iter().collect();
        let alpha = Tensor::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = chamfer_credit_loss(&refs, &alpha).unwrap();
        assert!((got - chamfer_oracle(&refs, &alpha)).abs() <= 1e-9);
    }
}

#[test]
fn chamfer_rejects_empty_graph() {
    let g = NodeGraph::new(vec![[0.0, 0.0]], &[]);
    let empty = NodeGraph::empty();
    let alpha = Tensor::from_vec(2, 2, vec![0.0f64; 4]);
    assert!(chamfer_credit_loss(&[&g, &empty], &alpha).is_err());
}

// ── edge loss ───────────────────────────────────────────────────────────

/// Independent pair enumeration with its own nearest-neighbor search.
fn edge_oracle(graphs: &[&NodeGraph], alpha: &Tensor<f64>, eps: f64) -> f64 {
    let n = graphs.len();
    let nearest = |p: [f64; 2], g: &NodeGraph| -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &q) in g.positions.iter().enumerate() {
            let d = (p[0] - q[0]).hypot(p[1] - q[1]);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    };
    let mut total = 0.0;
    for b in 0..n {
        let gb = graphs[b];
        let vb = gb.node_count();
        if vb < 2 {
            continue;
        }
        let exps: Vec<f64> = (0..n).map(|i| alpha.get(i, b).exp()).collect();
        let z: f64 = exps.iter().sum();
        let maps: Vec<Vec<usize>> = graphs
            .iter()
            .map(|gi| gb.positions.iter().map(|&p| nearest(p, gi)).collect())
            .collect();
        let mut sum_b = 0.0;
        for v in 0..vb {
            for w in 0..vb {
                if v == w {
                    continue;
                }
                let truth = gb.adjacency.get(v, w) != 0;
                let mut p_raw = 0.0;
                let mut any = false;
                for i in 0..n {
                    if graphs[i].adjacency.get(maps[i][v], maps[i][w]) != 0 {
                        any = true;
                        p_raw += exps[i] / z;
                    }
                }
                if !any && !truth {
                    continue;
                }
                let p = (p_raw + eps).clamp(eps, 1.0 - eps);
                sum_b += if truth { -p.ln() } else { -(1.0 - p).ln() };
            }
        }
        total += sum_b / (vb * (vb - 1)) as f64;
    }
    total / n as f64
}

#[test]
fn edge_loss_vanishes_as_epsilon_shrinks() {
    // All weight on the correct graph with identity correspondence: every
    // kept pair is a true edge predicted at 1 - eps.
    let g = NodeGraph::new(vec![[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]], &[(0, 1), (1, 2)]);
    let alpha = Tensor::<f64>::from_f64_rows(&[vec![20.0, 0.0], vec![0.0, 20.0]]);
    let g2 = NodeGraph::new(vec![[0.0, 30.0], [2.0, 30.0], [4.0, 30.0]], &[(0, 1), (1, 2)]);
    let graphs = [&g, &g2];
    let coarse = edge_loss(&graphs, &alpha, 1e-2).unwrap();
    let fine = edge_loss(&graphs, &alpha, 1e-6).unwrap();
    assert!(coarse > fine);
    assert!(fine < 1e-4, "loss should approach zero with epsilon, got {fine}");
}

#[test]
fn edge_loss_on_edgeless_batch_is_zero() {
    let g = NodeGraph::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[]);
    let alpha = Tensor::from_vec(2, 2, vec![0.3f64; 4]);
    assert_eq!(edge_loss(&[&g, &g], &alpha, 1e-6).unwrap(), 0.0);
}

#[test]
fn edge_loss_matches_hand_enumeration() {
    let g0 = NodeGraph::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[(0, 1), (1, 2)]);
    let g1 = NodeGraph::new(vec![[0.1, 0.0], [1.1, 0.0], [2.1, 0.0]], &[(0, 1), (2, 1)]);
    let alpha = Tensor::from_vec(2, 2, vec![0.0f64; 4]);
    let graphs = [&g0, &g1];
    let eps = 1e-3;
    let got = edge_loss(&graphs, &alpha, eps).unwrap();
    assert!((got - edge_oracle(&graphs, &alpha, eps)).abs() <= 1e-9);

    // Worked by hand for b = 0 (uniform weights 1/2, identity maps):
    // (0,1): truth 1, votes both -> p = 1 - eps
    // (1,2): truth 1, vote only g0 -> p = 0.5 + eps
    // (2,1): truth 0, vote only g1 -> p = 0.5 + eps
    // all other pairs skipped; and symmetrically for b = 1.
    let p_half = 0.5 + eps;
    let b0 = (-(1.0 - eps).ln() - p_half.ln() - (1.0 - p_half).ln()) / 6.0;
    assert!((got - b0).abs() <= 1e-9, "{got} vs {b0}");
}

#[test]
fn edge_loss_random_batches_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let graphs: Vec<NodeGraph> = (0..3).map(|_| tiny_graph(&mut rng)).collect();
        let refs: Vec<&NodeGraph> = graphs.iter().collect();
        let alpha = Tensor::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = edge_loss(&refs, &alpha, 1e-6).unwrap();
        assert!((got - edge_oracle(&refs, &alpha, 1e-6)).abs() <= 1e-9);
    }
}

#[test]
fn edge_loss_rejects_bad_epsilon() {
    let g = NodeGraph::new(vec![[0.0, 0.0], [1.0, 0.0]], &[(0, 1)]);
    let alpha = Tensor::<f64>::from_f64_rows(&[vec![0.0]]);
    assert!(matches!(edge_loss(&[&g], &alpha, 0.5), Err(TrainError::BadConfig(_))));
    assert!(matches!(edge_loss(&[&g], &alpha, -0.1), Err(TrainError::BadConfig(_))));
}

// ── total loss ──────────────────────────────────────────────────────────

#[test]
fn tape_terms_match_value_level_ops() {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 17).unwrap();
    let dataset = make_dataset(3, 19);
    let refs: Vec<&PairedSample> = dataset.iter().collect();
    let cfg = TrainConfig::default();
    let breakdown = total_loss(&params, &refs, &cfg).unwrap();

    let features: Vec<Vec<f64>> = dataset.iter().map(|s| s.features.clone()).collect();
    let graphs: Vec<&NodeGraph> = dataset.iter().map(|s| &s.graph).collect();
    let img = Tensor::<f64>::from_f64_rows(&feature_encode_batch(&params, &features).unwrap());
    let gph = Tensor::<f64>::from_f64_rows(&graph_encode_batch(&params, &graphs).unwrap());
    let alpha = similarity_matrix(&img, &gph).unwrap();

    let c = contrastive_loss(&alpha);
    let ch = chamfer_credit_loss(&graphs, &alpha).unwrap();
    let e = edge_loss(&graphs, &alpha, cfg.bce_epsilon).unwrap();
    assert!((breakdown.contrastive - c).abs() <= 1e-9, "{} vs {c}", breakdown.contrastive);
    assert!((breakdown.chamfer - ch).abs() <= 1e-9);
    assert!((breakdown.edge - e).abs() <= 1e-9);
    let want_total =
        cfg.omega1 * breakdown.contrastive + cfg.omega2 * breakdown.chamfer + cfg.omega3 * breakdown.edge;
    assert!((breakdown.total - want_total).abs() <= 1e-9);
}

#[test]
fn scale_multiplier_matches_scaled_alpha() {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 23).unwrap();
    let dataset = make_dataset(3, 29);
    let refs: Vec<&PairedSample> = dataset.iter().collect();
    let cfg = TrainConfig { scale: 2.0, ..TrainConfig::default() };
    let breakdown = total_loss(&params, &refs, &cfg).unwrap();

    let features: Vec<Vec<f64>> = dataset.iter().map(|s| s.features.clone()).collect();
    let graphs: Vec<&NodeGraph> = dataset.iter().map(|s| &s.graph).collect();
    let img = Tensor::<f64>::from_f64_rows(&feature_encode_batch(&params, &features).unwrap());
    let gph = Tensor::<f64>::from_f64_rows(&graph_encode_batch(&params, &graphs).unwrap());
    let alpha2 = similarity_matrix(&img, &gph).unwrap().map(|x| 2.0 * x);
    assert!((breakdown.contrastive - contrastive_loss(&alpha2)).abs() <= 1e-9);
    assert!(
        (breakdown.chamfer - chamfer_credit_loss(&graphs, &alpha2).unwrap()).abs() <= 1e-9
    );
}

#[test]
fn omega_gate_reduces_to_contrastive_exactly() {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 31).unwrap();
    let dataset = make_dataset(3, 37);
    let refs: Vec<&PairedSample> = dataset.iter().collect();
    let cfg = TrainConfig { omega2: 0.0, omega3: 0.0, ..TrainConfig::default() };
    let breakdown = total_loss(&params, &refs, &cfg).unwrap();
    assert_eq!(breakdown.total, breakdown.contrastive);
    assert!(breakdown.chamfer > 0.0, "unweighted terms still reported");
}

#[test]
fn single_sample_breakdown() {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 41).unwrap();
    let sample = PairedSample {
        features: vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.4],
        graph: NodeGraph::new(vec![[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]], &[(0, 1), (1, 2)]),
    };
    let breakdown = total_loss(&params, &[&sample], &TrainConfig::default()).unwrap();
    assert!(breakdown.contrastive.abs() <= 1e-12);
    assert!(breakdown.chamfer.abs() <= 1e-15);
    // Identity correspondence: each true edge costs -ln(1 - eps).
    assert!(breakdown.edge > 0.0 && breakdown.edge < 1e-5, "{}", breakdown.edge);
}

#[test]
fn batch_permutation_leaves_losses_unchanged() {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 43).unwrap();
    let dataset = make_dataset(4, 47);
    let refs: Vec<&PairedSample> = dataset.iter().collect();
    let permuted: Vec<&PairedSample> = [2usize, 0, 3, 1].iter().map(|&i| refs[i]).collect();
    let cfg = TrainConfig::default();
    let a = total_loss(&params, &refs, &cfg).unwrap();
    let b = total_loss(&params, &permuted, &cfg).unwrap();
    assert!((a.contrastive - b.contrastive).abs() <= 1e-9);
    assert!((a.chamfer - b.chamfer).abs() <= 1e-9);
    assert!((a.edge - b.edge).abs() <= 1e-9);
}

#[test]
fn empty_batch_is_rejected() {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 53).unwrap();
    assert!(matches!(
        total_loss(&params, &[], &TrainConfig::default()),
        Err(TrainError::EmptyBatch)
    ));
}

// ── gradients ───────────────────────────────────────────────────────────

fn check_loss_gradient(omegas: (f64, f64, f64), seed: u64) -> f64 {
    let params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), seed).unwrap();
    let dataset = make_dataset(3, seed + 100);
    let refs: Vec<&PairedSample> = dataset.iter().collect();
    let cfg = TrainConfig {
        omega1: omegas.0,
        omega2: omegas.1,
        omega3: omegas.2,
        // A coarse epsilon keeps predicted probabilities away from the
        // clamp corners under finite-difference perturbation.
        bce_epsilon: 1e-3,
        ..TrainConfig::default()
    };
    let inputs: Vec<Tensor<f64>> = params.tensor_list().into_iter().cloned().collect();
    let gcfg = params.graph_cfg.clone();
    let fcfg = params.feature_cfg.clone();
    gradient_check(
        |tape, vars| {
            let pv = tape_params_from_flat(vars, &gcfg, &fcfg);
            Ok(total_loss_tape(tape, &pv, &gcfg, &fcfg, &refs, &cfg).unwrap().total)
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}

#[test]
fn contrastive_gradient_check() {
    let worst = check_loss_gradient((1.0, 0.0, 0.0), 61);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn chamfer_gradient_check() {
    let worst = check_loss_gradient((0.0, 1.0, 0.0), 67);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn edge_gradient_check() {
    let worst = check_loss_gradient((0.0, 0.0, 1.0), 71);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn full_loss_gradient_check() {
    let worst = check_loss_gradient((1.0, 1.0, 0.1), 73);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

// ── optimizer ───────────────────────────────────────────────────────────

#[test]
fn adam_first_step_matches_closed_form() {
    let mut params: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), 79).unwrap();
    let before = params.node_proj.get(0, 0);
    let cfg = TrainConfig { learning_rate: 1e-2, ..TrainConfig::default() };
    let mut adam = Adam::new(&params);
    let mut grads: Vec<Tensor<f64>> =
        params.tensor_list().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    grads[0].set(0, 0, 0.5);
    adam.step(&mut params, &grads, &cfg);
    // After one bias-corrected step, m_hat = g and v_hat = g^2, so the
    // update is -lr * g / (|g| + eps) = -lr * sign(g) up to eps.
    let got = params.node_proj.get(0, 0) - before;
    assert!((got + cfg.learning_rate).abs() <= 1e-8, "step was {got}");
    // Untouched entries stay put.
    assert_eq!(params.node_proj.get(0, 1), {
        let reference: ModelParams<f64> = ModelParams::init(graph_cfg(), feature_cfg(), 79).unwrap();
        reference.node_proj.get(0, 1)
    });
}

// ── training loop ───────────────────────────────────────────────────────

#[test]
fn zero_learning_rate_freezes_parameters() {
    let dataset = make_dataset(6, 83);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let initial: ModelParams<f64> =
        ModelParams::init(graph_cfg(), feature_cfg(), cfg.seed).unwrap();
    let (trained, history) = train::<f64>(&dataset, graph_cfg(), feature_cfg(), &cfg).unwrap();
    assert_eq!(trained, initial);
    assert_eq!(history.len(), 3);
    // Full-batch epochs see identical data through identical params. The
    // shuffle still reorders the stacking between epochs, so the sums can
    // move by reassociation noise in the last bit.
    let close = |x: &LossBreakdown, y: &LossBreakdown| {
        let ok = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        ok(x.contrastive, y.contrastive)
            && ok(x.chamfer, y.chamfer)
            && ok(x.edge, y.edge)
            && ok(x.total, y.total)
    };
    assert!(close(&history[0], &history[1]), "{:?} vs {:?}", history[0], history[1]);
    assert!(close(&history[1], &history[2]), "{:?} vs {:?}", history[1], history[2]);
}

#[test]
fn short_run_decreases_loss() {
    let dataset = make_dataset(12, 89);
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 6,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let (_, history) = train::<f32>(&dataset, graph_cfg(), feature_cfg(), &cfg).unwrap();
    let first = history.first().unwrap().total;
    let last = history.last().unwrap().total;
    assert!(last < first, "loss should drop: {first} -> {last}");
}

#[test]
fn same_seed_reproduces_history_bitwise() {
    let dataset = make_dataset(8, 97);
    let cfg = TrainConfig { epochs: 4, batch_size: 4, seed: 7, ..TrainConfig::default() };
    let (pa, ha) = train::<f64>(&dataset, graph_cfg(), feature_cfg(), &cfg).unwrap();
    let (pb, hb) = train::<f64>(&dataset, graph_cfg(), feature_cfg(), &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(pa, pb);
}

#[test]
fn divergent_run_reports_epoch_and_batch() {
    let dataset = make_dataset(8, 101);
    let cfg = TrainConfig {
        learning_rate: 1e200,
        epochs: 4,
        batch_size: 4,
        ..TrainConfig::default()
    };
    match train::<f64>(&dataset, graph_cfg(), feature_cfg(), &cfg) {
        Err(TrainError::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn dataset_shape_errors_are_reported() {
    let dataset = make_dataset(4, 103);
    let cfg = TrainConfig { batch_size: 8, ..TrainConfig::default() };
    assert!(matches!(
        train::<f64>(&dataset, graph_cfg(), feature_cfg(), &cfg),
        Err(TrainError::BatchTooLarge { batch_size: 8, dataset: 4 })
    ));
    assert!(matches!(
        train::<f64>(&[], graph_cfg(), feature_cfg(), &TrainConfig::default()),
        Err(TrainError::EmptyDataset)
    ));

    let mut broken = make_dataset(4, 107);
    broken[1].features.pop();
    let cfg = TrainConfig { batch_size: 2, ..TrainConfig::default() };
    assert!(matches!(
        train::<f64>(&broken, graph_cfg(), feature_cfg(), &cfg),
        Err(TrainError::BadSample { index: 1, .. })
    ));
}

#[test]
fn history_csv_layout() {
    let history = vec![
        LossBreakdown { contrastive: 1.5, chamfer: 0.25, edge: 0.125, total: 1.7625 },
        LossBreakdown { contrastive: 1.0, chamfer: 0.2, edge: 0.1, total: 1.21 },
    ];
    let csv = history_csv(&history);
    assert_eq!(
        csv,
        "epoch,contrastive,chamfer,edge,total\n0,1.5,0.25,0.125,1.7625\n1,1,0.2,0.1,1.21\n"
    );
}

#[test]
fn quiet_cfg_is_valid() {
    quiet_cfg().check().unwrap();
}
