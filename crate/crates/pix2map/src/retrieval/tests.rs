use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoders::{graph_encode, Fusion, FeatureEncoderConfig, GraphEncoderConfig};
use crate::lanegraph::dist;

fn graph_cfg() -> GraphEncoderConfig {
    GraphEncoderConfig {
        layers: 1,
        embed_dim: 8,
        heads: 2,
        max_node_count: 8,
        ..GraphEncoderConfig::default()
    }
}

fn feature_cfg() -> FeatureEncoderConfig {
    FeatureEncoderConfig {
        input_dim: 6,
        hidden_dims: vec![10],
        embed_dim: 8,
        fusion: Fusion::Early,
        views: 1,
    }
}

fn params(seed: u64) -> ModelParams<f64> {
    ModelParams::init(graph_cfg(), feature_cfg(), seed).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng) -> NodeGraph {
    let n = rng.gen_range(3..6);
    let positions: Vec<Point> =
        (0..n).map(|_| [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)]).collect();
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if rng.gen_bool(0.5) {
        edges.push((n - 1, 0));
    }
    NodeGraph::new(positions, &edges)
}

fn random_features(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `count` graphs, even indices paired with features.
fn fixture(count: usize, seed: u64) -> (Vec<NodeGraph>, Vec<Option<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs: Vec<NodeGraph> = (0..count).map(|_| random_graph(&mut rng)).collect();
    let features = (0..count)
        .map(|i| (i % 2 == 0).then(|| random_features(&mut rng)))
        .collect();
    (graphs, features)
}

fn build(count: usize, seed: u64, p: &ModelParams<f64>) -> RetrievalLibrary<f64> {
    let (graphs, features) = fixture(count, seed);
    let inputs: Vec<LibraryInput> = graphs
        .iter()
        .zip(&features)
        .enumerate()
        .map(|(i, (graph, features))| LibraryInput {
            id: Box::leak(format!("g-{i:02}").into_boxed_str()),
            graph,
            features: features.as_deref(),
            pose: None,
        })
        .collect();
    build_library(&inputs, p).unwrap()
}

// ── building ────────────────────────────────────────────────────────────

#[test]
fn build_populates_entries_with_embeddings() {
    let p = params(11);
    let lib = build(10, 5, &p);
    assert_eq!(lib.len(), 10);
    assert_eq!(lib.dim(), 8);
    assert_eq!(lib.paired_count(), 5);
    for (i, e) in lib.entries().iter().enumerate() {
        assert_eq!(e.graph_embedding.len(), 8);
        assert_eq!(e.feature_embedding.is_some(), i % 2 == 0);
        // The stored embedding is exactly the encoder's output.
        assert_eq!(e.graph_embedding, graph_encode(&p, &e.graph).unwrap());
    }
}

#[test]
fn build_is_deterministic() {
    let p = params(11);
    let a = build(6, 5, &p);
    let b = build(6, 5, &p);
    assert_eq!(a, b);
}

#[test]
fn duplicate_and_bad_ids_are_rejected() {
    let p = params(11);
    let (graphs, _) = fixture(2, 5);
    let dup: Vec<LibraryInput> = graphs
        .iter()
        .map(|graph| LibraryInput { id: "same", graph, features: None, pose: None })
        .collect();
    assert!(matches!(build_library(&dup, &p), Err(RetrievalError::DuplicateId(_))));

    let weird = [LibraryInput { id: "../escape", graph: &graphs[0], features: None, pose: None }];
    assert!(matches!(build_library(&weird, &p), Err(RetrievalError::BadId(_))));

    assert!(matches!(build_library(&[], &p), Err(RetrievalError::EmptyLibrary)));
}

#[test]
fn entry_errors_carry_the_id() {
    let p = params(11);
    let (graphs, _) = fixture(1, 5);
    let bad_features = [LibraryInput {
        id: "short-features",
        graph: &graphs[0],
        features: Some(&[1.0, 2.0]),
        pose: None,
    }];
    match build_library(&bad_features, &p) {
        Err(RetrievalError::EntryInvalid { id, .. }) => assert_eq!(id, "short-features"),
        other => panic!("expected EntryInvalid, got {other:?}"),
    }

    let big = NodeGraph::new(
        (0..9).map(|i| [i as f64, 0.0]).collect(),
        &(0..8).map(|i| (i, i + 1)).collect::<Vec<_>>(),
    );
    let too_big = [LibraryInput { id: "too-big", graph: &big, features: None, pose: None }];
    match build_library(&too_big, &p) {
        Err(RetrievalError::EntryInvalid { id, message }) => {
            assert_eq!(id, "too-big");
            assert!(message.contains("at most"), "{message}");
        }
        other => panic!("expected EntryInvalid, got {other:?}"),
    }
}

#[test]
fn zero_feature_vector_is_rejected_at_build() {
    // Zero-initialised biases map an all-zero input to an all-zero
    // embedding, which cosine scoring cannot use.
    let p = params(11);
    let (graphs, _) = fixture(1, 5);
    let zeros = vec![0.0; 6];
    let inputs =
        [LibraryInput { id: "dead", graph: &graphs[0], features: Some(&zeros), pose: None }];
    match build_library(&inputs, &p) {
        Err(RetrievalError::EntryInvalid { id, message }) => {
            assert_eq!(id, "dead");
            assert!(message.contains("norm"), "{message}");
        }
        other => panic!("expected EntryInvalid, got {other:?}"),
    }
}

// ── augmentation ────────────────────────────────────────────────────────

#[test]
fn augment_with_nothing_is_identity() {
    let p = params(11);
    let lib = build(4, 5, &p);
    let same = augment_library(&lib, &[], &p).unwrap();
    assert_eq!(lib, same);
}

#[test]
fn augment_appends_unpaired_and_preserves_old_scores() {
    let p = params(11);
    let lib = build(6, 5, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let extra: Vec<(String, NodeGraph)> =
        (0..4).map(|i| (format!("x-{i}"), random_graph(&mut rng))).collect();
    let bigger = augment_library(&lib, &extra, &p).unwrap();

    assert_eq!(bigger.len(), 10);
    assert_eq!(bigger.paired_count(), lib.paired_count(), "new entries are unpaired");
    for (old, new) in lib.entries().iter().zip(bigger.entries()) {
        assert_eq!(old, new, "old entries must be copied bit-for-bit");
    }

    // A fixed query's scores on the old ids are unchanged; new ids only
    // interleave.
    let query = random_features(&mut rng);
    let before = pix2map(&query, &lib, lib.len(), &p).unwrap();
    let after = pix2map(&query, &bigger, bigger.len(), &p).unwrap();
    let old_hits: Vec<&RankedHit> =
        after.hits.iter().filter(|h| !h.id.starts_with("x-")).collect();
    assert_eq!(old_hits.len(), before.hits.len());
    for (a, b) in before.hits.iter().zip(old_hits) {
        assert_eq!(a, b);
    }

    // Colliding ids are structural errors.
    let collision = vec![("g-00".to_string(), random_graph(&mut rng))];
    assert!(matches!(
        augment_library(&lib, &collision, &p),
        Err(RetrievalError::DuplicateId(_))
    ));
}

// ── ranking ─────────────────────────────────────────────────────────────

#[test]
fn full_ranking_is_a_sorted_permutation() {
    let p = params(11);
    let lib = build(9, 5, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let query = random_features(&mut rng);
    let result = pix2map(&query, &lib, lib.len(), &p).unwrap();

    let mut ids: Vec<&str> = result.hits.iter().map(|h| h.id.as_str()).collect();
    ids.sort_unstable();
    let mut want: Vec<&str> = lib.entries().iter().map(|e| e.id.as_str()).collect();
    want.sort_unstable();
    assert_eq!(ids, want, "k = |lib| must rank every id exactly once");

    for pair in result.hits.windows(2) {
        assert!(pair[0].score >= pair[1].score);
    }
    for h in &result.hits {
        assert!((-1.0..=1.0).contains(&h.score));
    }

    // Oversized k is capped.
    let capped = pix2map(&query, &lib, 50, &p).unwrap();
    assert_eq!(capped, result);
    let top3 = pix2map(&query, &lib, 3, &p).unwrap();
    assert_eq!(top3.hits.as_slice(), &result.hits[..3]);
}

#[test]
fn ranking_matches_a_brute_force_oracle() {
    let p = params(17);
    let lib = build(12, 23, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let query = random_features(&mut rng);
        let got = pix2map(&query, &lib, lib.len(), &p).unwrap();

        // Independent scoring: raw cosine per entry, selection sort by
        // (score desc, id asc).
        let q = feature_encode(&p, &query).unwrap();
        let mut oracle: Vec<(String, f64)> = lib
            .entries()
            .iter()
            .map(|e| {
                let dot: f64 = q.iter().zip(&e.graph_embedding).map(|(a, b)| a * b).sum();
                let nq: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ne: f64 = e.graph_embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
                (e.id.clone(), dot / (nq * ne))
            })
            .collect();
        let mut sorted: Vec<(String, f64)> = Vec::new();
        while !oracle.is_empty() {
            let mut best = 0;
            for i in 1..oracle.len() {
                let better = oracle[i].1 > oracle[best].1
                    || (oracle[i].1 == oracle[best].1 && oracle[i].0 < oracle[best].0);
                if better {
                    best = i;
                }
            }
            sorted.push(oracle.remove(best));
        }
        for (hit, (id, score)) in got.hits.iter().zip(&sorted) {
            assert_eq!(&hit.id, id);
            assert!((hit.score - score).abs() <= 1e-12);
        }
    }
}

#[test]
fn exact_ties_break_by_id() {
    let p = params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = random_graph(&mut rng);
    let other = random_graph(&mut rng);
    // Two bit-identical graphs under different ids, plus a distinct one.
    let inputs = [
        LibraryInput { id: "twin-b", graph: &g, features: None, pose: None },
        LibraryInput { id: "other", graph: &other, features: None, pose: None },
        LibraryInput { id: "twin-a", graph: &g, features: None, pose: None },
    ];
    let lib = build_library(&inputs, &p).unwrap();
    let query = random_features(&mut rng);
    let result = pix2map(&query, &lib, 3, &p).unwrap();
    let pos_a = result.hits.iter().position(|h| h.id == "twin-a").unwrap();
    let pos_b = result.hits.iter().position(|h| h.id == "twin-b").unwrap();
    assert_eq!(result.hits[pos_a].score, result.hits[pos_b].score);
    assert_eq!(pos_b, pos_a + 1, "equal scores must order by id");
}

#[test]
fn scores_ignore_embedding_scale() {
    let p = params(11);
    let lib = build(6, 5, &p);
    let scaled = RetrievalLibrary::from_entries(
        lib.entries()
            .iter()
            .map(|e| {
                let mut e = e.clone();
                for v in &mut e.graph_embedding {
                    *v *= 7.3;
                }
                e
            })
            .collect(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let query = random_features(&mut rng);
    let a = pix2map(&query, &lib, 6, &p).unwrap();
    let b = pix2map(&query, &scaled, 6, &p).unwrap();
    for (x, y) in a.hits.iter().zip(&b.hits) {
        assert_eq!(x.id, y.id);
        assert!((x.score - y.score).abs() <= 1e-9);
    }
}

#[test]
fn degenerate_queries_are_rejected() {
    let p = params(11);
    let lib = build(4, 5, &p);
    assert!(matches!(
        pix2map(&[0.5; 6], &lib, 0, &p),
        Err(RetrievalError::BadK)
    ));
    // All-zero input hits the zero-bias dead path exactly.
    assert!(matches!(
        pix2map(&[0.0; 6], &lib, 2, &p),
        Err(RetrievalError::ZeroNormQuery)
    ));
}

// ── map2pix and the unimodal baseline ───────────────────────────────────

#[test]
fn map2pix_singleton_returns_that_entry() {
    let p = params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_graph(&mut rng);
    let f = random_features(&mut rng);
    let inputs = [LibraryInput { id: "only", graph: &g, features: Some(&f), pose: None }];
    let lib = build_library(&inputs, &p).unwrap();
    let result = map2pix(&g, &lib, 1, &p).unwrap();
    assert_eq!(result.hits.len(), 1);
    assert_eq!(result.hits[0].id, "only");
}

#[test]
fn map2pix_needs_feature_embeddings() {
    let p = params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let graphs: Vec<NodeGraph> = (0..3).map(|_| random_graph(&mut rng)).collect();
    let inputs: Vec<LibraryInput> = graphs
        .iter()
        .enumerate()
        .map(|(i, graph)| LibraryInput {
            id: Box::leak(format!("u-{i}").into_boxed_str()),
            graph,
            features: None,
            pose: None,
        })
        .collect();
    let lib = build_library(&inputs, &p).unwrap();
    assert!(matches!(
        map2pix(&graphs[0], &lib, 1, &p),
        Err(RetrievalError::MissingFeatureEmbeddings)
    ));
    assert!(matches!(
        unimodal_retrieve(&[0.5; 6], &lib, &p),
        Err(RetrievalError::MissingFeatureEmbeddings)
    ));
}

#[test]
fn map2pix_ranks_only_paired_entries() {
    let p = params(11);
    let lib = build(6, 5, &p); // 3 paired, 3 unpaired
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_graph(&mut rng);
    let result = map2pix(&g, &lib, 6, &p).unwrap();
    assert_eq!(result.hits.len(), 3, "unpaired entries cannot be scored");
}

#[test]
fn unimodal_returns_the_stored_pair_for_its_own_features() {
    let p = params(11);
    let (graphs, features) = fixture(6, 5);
    let inputs: Vec<LibraryInput> = graphs
        .iter()
        .zip(&features)
        .enumerate()
        .map(|(i, (graph, features))| LibraryInput {
            id: Box::leak(format!("g-{i:02}").into_boxed_str()),
            graph,
            features: features.as_deref(),
            pose: None,
        })
        .collect();
    let lib = build_library(&inputs, &p).unwrap();
    // Entry 2 is paired; querying with its exact features must return
    // its own graph (cosine 1 with itself).
    let (id, graph) = unimodal_retrieve(features[2].as_deref().unwrap(), &lib, &p).unwrap();
    assert_eq!(id, "g-02");
    assert_eq!(graph, graphs[2]);

    // A singleton paired library answers every query with its graph.
    let single = [LibraryInput {
        id: "solo",
        graph: &graphs[1],
        features: features[0].as_deref(),
        pose: None,
    }];
    let single = build_library(&single, &p).unwrap();
    let (id, graph) = unimodal_retrieve(&[0.3, -0.2, 0.9, 0.1, -0.5, 0.4], &single, &p).unwrap();
    assert_eq!(id, "solo");
    assert_eq!(graph, graphs[1]);
}

// ── localization ────────────────────────────────────────────────────────

/// A lattice of identical two-node "dominoes": every window centered on
/// a lattice site sees exactly its own domino at the same ego-frame
/// offset, so within each heading all cells must score identically.
fn domino_lattice() -> NodeGraph {
    let mut positions = Vec::new();
    let mut edges = Vec::new();
    for iy in 0..4 {
        for ix in 0..4 {
            let i = positions.len();
            positions.push([ix as f64 * 10.0, iy as f64 * 10.0]);
            positions.push([ix as f64 * 10.0, iy as f64 * 10.0 + 2.0]);
            edges.push((i, i + 1));
        }
    }
    NodeGraph::new(positions, &edges)
}

#[test]
fn uniform_map_scores_evenly_per_heading() {
    let p = params(11);
    let map = domino_lattice();
    let features = [0.4, -0.3, 0.8, 0.2, -0.6, 0.5];
    let h = localize(&features, &map, 10.0, 4.0, &p).unwrap();
    assert_eq!((h.nx, h.ny), (4, 4));
    assert_eq!(h.cells.len(), 4 * 4 * 4, "every cell and heading is scored");
    for &heading in &LOCALIZE_HEADINGS {
        // Poses store normalized headings, e.g. the sweep's pi lands at -pi.
        let heading = crate::lanegraph::normalize_angle(heading);
        let scores: Vec<f64> = h
            .cells
            .iter()
            .filter(|c| c.heading.to_bits() == heading.to_bits())
            .map(|c| c.score)
            .collect();
        assert_eq!(scores.len(), 16);
        // Identical ego-frame windows encode to identical bits.
        for &s in &scores {
            assert!((s - scores[0]).abs() <= 1e-12, "spread at heading {heading}");
        }
    }
}

#[test]
fn oversized_stride_gives_a_single_cell() {
    let p = params(11);
    let map = domino_lattice();
    let h = localize(&[0.4, -0.3, 0.8, 0.2, -0.6, 0.5], &map, 1000.0, 4.0, &p).unwrap();
    assert_eq!((h.nx, h.ny), (1, 1));
    assert_eq!(h.cells.len(), 4, "one position, four headings");
    assert_eq!(h.cells[0].x, 0.0);
    assert_eq!(h.cells[0].y, 0.0);
}

#[test]
fn localize_rejects_degenerate_grids() {
    let p = params(11);
    let map = domino_lattice();
    let features = [0.4, -0.3, 0.8, 0.2, -0.6, 0.5];
    assert!(matches!(
        localize(&features, &map, -1.0, 4.0, &p),
        Err(RetrievalError::BadStride(_))
    ));
    assert!(matches!(
        localize(&features, &NodeGraph::empty(), 5.0, 4.0, &p),
        Err(RetrievalError::EmptyGrid)
    ));
    // Windows so small no grid pose sees a node: the grid corner sits at
    // the bounds minimum (0, 0), which is not itself a node.
    let offset = NodeGraph::new(vec![[5.0, 0.0], [0.0, 5.0]], &[(0, 1)]);
    assert!(matches!(
        localize(&features, &offset, 10.0, 1.0, &p),
        Err(RetrievalError::EmptyGrid)
    ));
}

#[test]
fn zero_signal_windows_are_skipped() {
    // Isolated nodes sitting exactly on window centers embed to zero (the
    // encoder input row is all zeros), so no cell can be scored.
    let p = params(11);
    let mut positions = Vec::new();
    for iy in 0..3 {
        for ix in 0..3 {
            positions.push([ix as f64 * 10.0, iy as f64 * 10.0]);
        }
    }
    let lone = NodeGraph::new(positions, &[]);
    assert!(matches!(
        localize(&[0.4, -0.3, 0.8, 0.2, -0.6, 0.5], &lone, 10.0, 4.0, &p),
        Err(RetrievalError::EmptyGrid)
    ));
}

#[test]
fn heatmap_renders_csv_and_pgm() {
    let p = params(11);
    let map = domino_lattice();
    let h = localize(&[0.4, -0.3, 0.8, 0.2, -0.6, 0.5], &map, 10.0, 4.0, &p).unwrap();

    let csv = heatmap_csv(&h);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,y,heading,score");
    assert_eq!(lines.len(), 1 + h.cells.len());
    assert_eq!(lines[1].split(',').count(), 4);

    let pgm = heatmap_pgm(&h);
    let header = format!("P5\n{} {}\n255\n", h.nx, h.ny);
    assert!(pgm.starts_with(header.as_bytes()));
    assert_eq!(pgm.len(), header.len() + h.nx * h.ny);
    // Uniform scores render mid-gray everywhere.
    assert!(pgm[header.len()..].iter().all(|&b| b == 128));
}

// ── persistence ─────────────────────────────────────────────────────────

#[test]
fn library_round_trips_through_disk() {
    let gp32: ModelParams<f32> = ModelParams::init(graph_cfg(), feature_cfg(), 11).unwrap();
    let (graphs, features) = fixture(5, 5);
    let inputs: Vec<LibraryInput> = graphs
        .iter()
        .zip(&features)
        .enumerate()
        .map(|(i, (graph, features))| LibraryInput {
            id: Box::leak(format!("g-{i:02}").into_boxed_str()),
            graph,
            features: features.as_deref(),
            pose: (i == 0).then(|| EgoPose::new(3.0, 4.0, 0.5)),
        })
        .collect();
    let lib = build_library(&inputs, &gp32).unwrap();

    let dir = tempfile::tempdir().unwrap();
    save_library(&lib, dir.path()).unwrap();
    let loaded: RetrievalLibrary<f32> = load_library(dir.path()).unwrap();

    assert_eq!(loaded.len(), lib.len());
    assert_eq!(loaded.dim(), lib.dim());
    for (a, b) in lib.entries().iter().zip(loaded.entries()) {
        assert_eq!(a.id, b.id);
        // f32 embeddings survive the f32 file format exactly.
        assert_eq!(a.graph_embedding, b.graph_embedding);
        assert_eq!(a.feature_embedding, b.feature_embedding);
        assert_eq!(a.pose.is_some(), b.pose.is_some());
        for (pa, pb) in a.graph.positions.iter().zip(&b.graph.positions) {
            assert!(dist(*pa, *pb) <= 1e-5, "graph JSON keeps nine significant digits");
        }
        assert_eq!(a.graph.adjacency, b.graph.adjacency);
    }
    // The same directory loads in f64 verification mode too.
    let wide: RetrievalLibrary<f64> = load_library(dir.path()).unwrap();
    assert_eq!(wide.len(), lib.len());

    // Saving twice produces identical bytes.
    let dir2 = tempfile::tempdir().unwrap();
    save_library(&lib, dir2.path()).unwrap();
    for rel in ["manifest.json", "graph_embeddings.bin", "feature_embeddings.bin"] {
        assert_eq!(
            std::fs::read(dir.path().join(rel)).unwrap(),
            std::fs::read(dir2.path().join(rel)).unwrap(),
            "{rel} differs between identical saves"
        );
    }
}

#[test]
fn corrupt_library_files_are_reported() {
    let p = params(11);
    let lib = build(3, 5, &p);
    let dir = tempfile::tempdir().unwrap();
    save_library(&lib, dir.path()).unwrap();

    let emb = dir.path().join("graph_embeddings.bin");
    let bytes = std::fs::read(&emb).unwrap();
    std::fs::write(&emb, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        load_library::<f64>(dir.path()),
        Err(RetrievalError::BadLibraryFile { .. })
    ));
    std::fs::write(&emb, &bytes).unwrap();

    std::fs::write(dir.path().join("manifest.json"), b"{ not json").unwrap();
    assert!(matches!(
        load_library::<f64>(dir.path()),
        Err(RetrievalError::BadLibraryFile { .. })
    ));
}

#[test]
fn from_entries_enforces_invariants() {
    let p = params(11);
    let lib = build(3, 5, &p);

    let mut zero = lib.entries().to_vec();
    for v in &mut zero[1].graph_embedding {
        *v = 0.0;
    }
    match RetrievalLibrary::from_entries(zero) {
        Err(RetrievalError::EntryInvalid { id, .. }) => assert_eq!(id, "g-01"),
        other => panic!("expected EntryInvalid, got {other:?}"),
    }

    let mut short = lib.entries().to_vec();
    short[2].graph_embedding.pop();
    assert!(matches!(
        RetrievalLibrary::from_entries(short),
        Err(RetrievalError::EntryInvalid { .. })
    ));
}
