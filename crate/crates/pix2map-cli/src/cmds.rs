//! One function per subcommand. Each returns the JSON to print on
//! stdout; commands with file outputs also record a run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use pix2map::autodiff::{gradient_check, Tensor};
use pix2map::encoders::{
    tape_params_from_flat, FeatureEncoderConfig, Fusion, GraphEncoderConfig, ModelParams,
};
use pix2map::lanegraph::{
    read_graph, read_segment_graph, resample_graph, write_graph, write_segment_graph, EgoPose,
    NodeGraph, DEFAULT_HALF_EXTENT, DEFAULT_SPACING,
};
use pix2map::metrics::{evaluate_pair, MetricReport, DEFAULT_MMD_SIGMA};
use pix2map::retrieval::{
    augment_library, build_library, heatmap_csv, heatmap_pgm, load_library, save_library,
    LibraryInput, RankedHit, RetrievalLibrary,
};
use pix2map::synthdata::{
    entry_id, gen_city, load_dataset, make_splits, read_features_file, save_dataset, DatasetSplit,
    SplitCounts, SynthConfig,
};
use pix2map::training::{history_csv, total_loss, total_loss_tape, PairedSample, TrainConfig};
use pix2map::Scalar;

use crate::kvfile::KvFile;
use crate::manifest::RunManifest;
use crate::{dom, Args, CliError, CliResult, CmdOutput};

const GRADCHECK_THRESHOLD: f64 = 1e-4;

fn scalar_name(f64_mode: bool) -> &'static str {
    if f64_mode {
        "f64"
    } else {
        "f32"
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    pix2map::fsutil::write_atomic(path, text.as_bytes())
        .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    pix2map::fsutil::write_atomic(path, bytes)
        .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))
}

/// Resolves a split name to its samples and poses.
fn split_of<'a>(
    ds: &'a DatasetSplit,
    name: &str,
) -> CliResult<(&'a [PairedSample], &'a [EgoPose])> {
    match name {
        "train" => Ok((&ds.train, &ds.train_poses)),
        "update" => Ok((&ds.map_update, &ds.map_update_poses)),
        "expand" => Ok((&ds.map_expand, &ds.map_expand_poses)),
        other => Err(CliError::Domain(format!(
            "unknown split `{other}`; expected train, update, or expand"
        ))),
    }
}

/// Reads every `*.json` graph in a directory, id = file stem, sorted by
/// id for deterministic ordering.
fn read_graph_dir(dir: &Path) -> CliResult<Vec<(String, NodeGraph)>> {
    let listing = std::fs::read_dir(dir)
        .map_err(|e| CliError::Domain(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<(String, PathBuf)> = Vec::new();
    for entry in listing {
        let path = entry
            .map_err(|e| CliError::Domain(format!("cannot read {}: {e}", dir.display())))?
            .path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            paths.push((id, path));
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Domain(format!(
            "{} contains no .json graph files",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|(id, path)| Ok((id, read_graph(&path).map_err(dom)?)))
        .collect()
}

/// Query rows: either a dataset directory (picking one split) or a raw
/// feature file.
fn load_query_rows(path: &Path, split: Option<&str>) -> CliResult<Vec<Vec<f64>>> {
    if path.is_dir() {
        let ds = load_dataset(path).map_err(dom)?;
        let (samples, _) = split_of(&ds, split.unwrap_or("train"))?;
        Ok(samples.iter().map(|s| s.features.clone()).collect())
    } else {
        if split.is_some() {
            return Err(CliError::Usage(
                "--split only applies when --features is a dataset directory".into(),
            ));
        }
        read_features_file(path).map_err(dom)
    }
}

// ── gen ─────────────────────────────────────────────────────────────────

pub fn gen(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let config_path = args.require("config");
    let kv = KvFile::parse(Path::new(config_path))?;
    let d = SynthConfig::default();
    let mut cfg = SynthConfig {
        seed: kv.u64("seed", d.seed)?,
        grid_rows: kv.usize("grid_rows", d.grid_rows)?,
        grid_cols: kv.usize("grid_cols", d.grid_cols)?,
        block_size: kv.f64("block_size", d.block_size)?,
        lane_jitter: kv.f64("lane_jitter", d.lane_jitter)?,
        curve_fraction: kv.f64("curve_fraction", d.curve_fraction)?,
        feature_dim: kv.usize("feature_dim", d.feature_dim)?,
        feature_noise: kv.f64("feature_noise", d.feature_noise)?,
        projection_seed: kv.u64("projection_seed", d.projection_seed)?,
        spacing: kv.f64("spacing", d.spacing)?,
        half_extent: kv.f64("half_extent", d.half_extent)?,
    };
    let counts = SplitCounts {
        train: kv.usize("train", 64)?,
        map_update: kv.usize("map_update", 16)?,
        map_expand: kv.usize("map_expand", 16)?,
    };
    kv.finish()?;
    if let Some(seed) = args.u64_value("seed")? {
        cfg.seed = seed;
    }
    if let Some(spacing) = args.f64_value("spacing")? {
        cfg.spacing = spacing;
    }

    let out = PathBuf::from(args.require("out"));
    let city = gen_city(&cfg).map_err(dom)?;
    let split = make_splits(&city, &cfg, &counts).map_err(dom)?;
    save_dataset(&split, &out).map_err(dom)?;
    write_graph(&city.map, &out.join("city_map.json")).map_err(dom)?;
    write_segment_graph(&city.segments, &out.join("city_segments.json")).map_err(dom)?;

    let mut m = RunManifest::new("gen", started);
    m.config = Some(config_path.to_string());
    m.seed = Some(cfg.seed);
    m.outputs = ["split.json", "features.bin", "graphs", "city_map.json", "city_segments.json"]
        .iter()
        .map(|name| out.join(name).display().to_string())
        .collect();
    m.write(&out, true)?;

    Ok(CmdOutput::ok(json!({
        "out": out.display().to_string(),
        "seed": cfg.seed,
        "train": split.train.len(),
        "map_update": split.map_update.len(),
        "map_expand": split.map_expand.len(),
        "feature_dim": cfg.feature_dim,
        "city_nodes": city.map.node_count(),
        "city_edges": city.map.edge_count(),
    })))
}

// ── preprocess ──────────────────────────────────────────────────────────

pub fn preprocess(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let input = args.positional(0);
    let spacing = args.f64_value("spacing")?.unwrap_or(DEFAULT_SPACING);
    let segments = read_segment_graph(Path::new(input)).map_err(dom)?;
    let graph = resample_graph(&segments, spacing).map_err(dom)?;
    let out = PathBuf::from(args.require("out"));
    write_graph(&graph, &out).map_err(dom)?;

    let mut m = RunManifest::new("preprocess", started);
    m.inputs.push(input.to_string());
    m.outputs.push(out.display().to_string());
    m.write(&out, false)?;

    Ok(CmdOutput::ok(json!({
        "out": out.display().to_string(),
        "spacing": spacing,
        "segments": segments.segments.len(),
        "nodes": graph.node_count(),
        "edges": graph.edge_count(),
    })))
}

// ── train ───────────────────────────────────────────────────────────────

fn parse_train_config(
    kv: &KvFile,
    input_dim: usize,
) -> CliResult<(GraphEncoderConfig, FeatureEncoderConfig, TrainConfig)> {
    let g0 = GraphEncoderConfig::default();
    let g = GraphEncoderConfig {
        layers: kv.usize("layers", g0.layers)?,
        embed_dim: kv.usize("embed_dim", g0.embed_dim)?,
        heads: kv.usize("heads", g0.heads)?,
        use_attention_mask: kv.bool("use_attention_mask", g0.use_attention_mask)?,
        use_adjacency_input: kv.bool("use_adjacency_input", g0.use_adjacency_input)?,
        use_positional_encoding: kv.bool("positional", g0.use_positional_encoding)?,
        mask_self_loops: kv.bool("mask_self_loops", g0.mask_self_loops)?,
        mask_symmetrize: kv.bool("mask_symmetrize", g0.mask_symmetrize)?,
        max_node_count: kv.usize("max_node_count", g0.max_node_count)?,
        half_extent: kv.f64("half_extent", g0.half_extent)?,
    };
    if let Some(want) = kv.maybe_usize("input_dim")? {
        if want != input_dim {
            return Err(CliError::Domain(format!(
                "config says input_dim = {want} but the dataset's features have dimension {input_dim}"
            )));
        }
    }
    let fusion = match kv.string("fusion", "early").as_str() {
        "early" => Fusion::Early,
        "late" => Fusion::Late,
        other => {
            return Err(CliError::Domain(format!(
                "fusion expects `early` or `late`, got `{other}`"
            )))
        }
    };
    let f = FeatureEncoderConfig {
        input_dim,
        hidden_dims: kv.usize_list("hidden_dims", &[128])?,
        embed_dim: g.embed_dim,
        fusion,
        views: kv.usize("views", 1)?,
    };
    let t0 = TrainConfig::default;
    let t = TrainConfig {
        batch_size: kv.usize("batch_size", t0().batch_size)?,
        epochs: kv.usize("epochs", t0().epochs)?,
        learning_rate: kv.f64("learning_rate", t0().learning_rate)?,
        adam_beta1: kv.f64("adam_beta1", t0().adam_beta1)?,
        adam_beta2: kv.f64("adam_beta2", t0().adam_beta2)?,
        adam_eps: kv.f64("adam_eps", t0().adam_eps)?,
        omega1: kv.f64("omega1", t0().omega1)?,
        omega2: kv.f64("omega2", t0().omega2)?,
        omega3: kv.f64("omega3", t0().omega3)?,
        bce_epsilon: kv.f64("bce_epsilon", t0().bce_epsilon)?,
        scale: kv.f64("scale", t0().scale)?,
        seed: kv.u64("seed", t0().seed)?,
    };
    Ok((g, f, t))
}

pub fn train(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    if args.switch("f64") {
        train_impl::<f64>(args, started)
    } else {
        train_impl::<f32>(args, started)
    }
}

fn train_impl<S: Scalar>(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let dataset_dir = args.positional(0);
    let ds = load_dataset(Path::new(dataset_dir)).map_err(dom)?;
    let input_dim = ds
        .train
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| CliError::Domain("the dataset's train split is empty".into()))?;

    let config_path = args.require("config");
    let kv = KvFile::parse(Path::new(config_path))?;
    let (gcfg, fcfg, mut tcfg) = parse_train_config(&kv, input_dim)?;
    kv.finish()?;
    if let Some(seed) = args.u64_value("seed")? {
        tcfg.seed = seed;
    }

    eprintln!(
        "training on {} pairs for {} epochs (batch {}, {})",
        ds.train.len(),
        tcfg.epochs,
        tcfg.batch_size,
        scalar_name(args.switch("f64"))
    );
    let (params, history) =
        pix2map::training::train::<S>(&ds.train, gcfg, fcfg, &tcfg).map_err(dom)?;
    let out = PathBuf::from(args.require("out"));
    params.save(&out).map_err(dom)?;
    if let Some(history_path) = args.value("history") {
        write_text(Path::new(history_path), &history_csv(&history))?;
    }

    let mut m = RunManifest::new("train", started);
    m.config = Some(config_path.to_string());
    m.seed = Some(tcfg.seed);
    m.inputs.push(dataset_dir.to_string());
    m.outputs.push(out.display().to_string());
    if let Some(history_path) = args.value("history") {
        m.outputs.push(history_path.to_string());
    }
    m.write(&out, false)?;

    let last = history.last().expect("at least one epoch ran");
    Ok(CmdOutput::ok(json!({
        "out": out.display().to_string(),
        "scalar": scalar_name(args.switch("f64")),
        "seed": tcfg.seed,
        "epochs": history.len(),
        "final": {
            "contrastive": last.contrastive,
            "chamfer": last.chamfer,
            "edge": last.edge,
            "total": last.total,
        },
    })))
}

// ── embed ───────────────────────────────────────────────────────────────

pub fn embed(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    if args.switch("f64") {
        embed_impl::<f64>(args, started)
    } else {
        embed_impl::<f32>(args, started)
    }
}

fn embed_impl<S: Scalar>(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let input = Path::new(args.positional(0));
    let params: ModelParams<S> =
        ModelParams::load(Path::new(args.require("params"))).map_err(dom)?;
    let out = PathBuf::from(args.require("out"));

    let (library, mode) = if input.join("split.json").is_file() {
        let ds = load_dataset(input).map_err(dom)?;
        let split = args.value("split").unwrap_or("train");
        let (samples, poses) = split_of(&ds, split)?;
        let ids: Vec<String> = (0..samples.len()).map(|i| entry_id(split, i)).collect();
        let inputs: Vec<LibraryInput> = samples
            .iter()
            .zip(poses)
            .enumerate()
            .map(|(i, (s, pose))| LibraryInput {
                id: &ids[i],
                graph: &s.graph,
                features: Some(&s.features),
                pose: Some(*pose),
            })
            .collect();
        (build_library(&inputs, &params).map_err(dom)?, "dataset")
    } else {
        if args.value("split").is_some() {
            return Err(CliError::Usage(
                "--split only applies when INPUT is a dataset directory".into(),
            ));
        }
        let graphs = read_graph_dir(input)?;
        let inputs: Vec<LibraryInput> = graphs
            .iter()
            .map(|(id, graph)| LibraryInput { id, graph, features: None, pose: None })
            .collect();
        (build_library(&inputs, &params).map_err(dom)?, "graphs")
    };
    save_library(&library, &out).map_err(dom)?;

    let mut m = RunManifest::new("embed", started);
    m.inputs = vec![input.display().to_string(), args.require("params").to_string()];
    m.outputs.push(out.display().to_string());
    m.write(&out, true)?;

    Ok(CmdOutput::ok(json!({
        "out": out.display().to_string(),
        "mode": mode,
        "scalar": scalar_name(args.switch("f64")),
        "entries": library.len(),
        "paired": library.paired_count(),
        "dim": library.dim(),
    })))
}

// ── augment ─────────────────────────────────────────────────────────────

pub fn augment(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    if args.switch("f64") {
        augment_impl::<f64>(args, started)
    } else {
        augment_impl::<f32>(args, started)
    }
}

fn augment_impl<S: Scalar>(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let lib_dir = Path::new(args.positional(0));
    let out = PathBuf::from(args.require("out"));
    if out == lib_dir {
        return Err(CliError::Domain(
            "output must be a different directory from the input library".into(),
        ));
    }
    let params: ModelParams<S> =
        ModelParams::load(Path::new(args.require("params"))).map_err(dom)?;
    let library: RetrievalLibrary<S> = load_library(lib_dir).map_err(dom)?;
    let graphs = read_graph_dir(Path::new(args.require("graphs")))?;
    let bigger = augment_library(&library, &graphs, &params).map_err(dom)?;
    save_library(&bigger, &out).map_err(dom)?;

    let mut m = RunManifest::new("augment", started);
    m.inputs = vec![
        lib_dir.display().to_string(),
        args.require("graphs").to_string(),
        args.require("params").to_string(),
    ];
    m.outputs.push(out.display().to_string());
    m.write(&out, true)?;

    Ok(CmdOutput::ok(json!({
        "out": out.display().to_string(),
        "scalar": scalar_name(args.switch("f64")),
        "entries": bigger.len(),
        "added": graphs.len(),
    })))
}

// ── retrieve ────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
pub struct QueryResult {
    pub index: usize,
    pub hits: Vec<RankedHit>,
}

#[derive(Serialize, Deserialize)]
pub struct RetrieveOutput {
    pub k: usize,
    pub queries: Vec<QueryResult>,
}

pub fn retrieve(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    if args.switch("f64") {
        retrieve_impl::<f64>(args, started)
    } else {
        retrieve_impl::<f32>(args, started)
    }
}

fn retrieve_impl<S: Scalar>(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let k = args
        .usize_value("k")?
        .expect("required flag is present");
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let params: ModelParams<S> =
        ModelParams::load(Path::new(args.require("params"))).map_err(dom)?;
    let library: RetrievalLibrary<S> =
        load_library(Path::new(args.require("library"))).map_err(dom)?;
    let rows = load_query_rows(Path::new(args.require("features")), args.value("split"))?;
    if k > library.len() {
        eprintln!(
            "warning: k = {k} exceeds the library size {}; returning {} hits per query",
            library.len(),
            library.len()
        );
    }

    let indices: Vec<usize> = match args.usize_value("index")? {
        Some(i) => {
            if i >= rows.len() {
                return Err(CliError::Domain(format!(
                    "--index {i} out of range; the query source has {} rows",
                    rows.len()
                )));
            }
            vec![i]
        }
        None => (0..rows.len()).collect(),
    };
    let queries: Vec<QueryResult> = indices
        .into_iter()
        .map(|i| {
            pix2map::retrieval::pix2map(&rows[i], &library, k, &params)
                .map(|r| QueryResult { index: i, hits: r.hits })
                .map_err(|e| CliError::Domain(format!("query {i}: {e}")))
        })
        .collect::<CliResult<_>>()?;

    let output = RetrieveOutput { k: k.min(library.len()), queries };
    let value = serde_json::to_value(&output).expect("results serialize");
    if let Some(out) = args.value("out") {
        let out = Path::new(out);
        let mut text = serde_json::to_string_pretty(&value).expect("results serialize");
        text.push('\n');
        write_text(out, &text)?;
        let mut m = RunManifest::new("retrieve", started);
        m.inputs = vec![
            args.require("params").to_string(),
            args.require("library").to_string(),
            args.require("features").to_string(),
        ];
        m.outputs.push(out.display().to_string());
        m.write(out, false)?;
    }
    Ok(CmdOutput::ok(value))
}

// ── evaluate ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct PairRow {
    index: usize,
    id: String,
    #[serde(flatten)]
    report: MetricReport,
}

pub fn evaluate(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let retr_path = args.require("retrievals");
    let text = std::fs::read_to_string(retr_path)
        .map_err(|e| CliError::Domain(format!("cannot read {retr_path}: {e}")))?;
    let retr: RetrieveOutput = serde_json::from_str(&text)
        .map_err(|e| CliError::Domain(format!("{retr_path}: not a retrieve result file: {e}")))?;

    // Scalar type does not matter here: only ids and graphs are used.
    let library: RetrievalLibrary<f32> =
        load_library(Path::new(args.require("library"))).map_err(dom)?;
    let ds = load_dataset(Path::new(args.require("truths"))).map_err(dom)?;
    let split = args.value("split").unwrap_or("train");
    let (samples, _) = split_of(&ds, split)?;

    let mut pairs = Vec::new();
    let mut reports = Vec::new();
    for q in &retr.queries {
        let truth = samples.get(q.index).ok_or_else(|| {
            CliError::Domain(format!(
                "query index {} out of range; the {split} split has {} samples",
                q.index,
                samples.len()
            ))
        })?;
        let hit = q
            .hits
            .first()
            .ok_or_else(|| CliError::Domain(format!("query {} has no hits", q.index)))?;
        let entry = library
            .entries()
            .iter()
            .find(|e| e.id == hit.id)
            .ok_or_else(|| {
                CliError::Domain(format!("retrieved id `{}` is not in the library", hit.id))
            })?;
        let report = evaluate_pair(&entry.graph, &truth.graph, DEFAULT_MMD_SIGMA)
            .map_err(|e| CliError::Domain(format!("query {}: {e}", q.index)))?;
        pairs.push(PairRow { index: q.index, id: hit.id.clone(), report });
        reports.push(report);
    }
    let aggregate = MetricReport::mean(&reports)
        .ok_or_else(|| CliError::Domain("the retrieval file has no queries".into()))?;

    let value = json!({
        "split": split,
        "pairs": serde_json::to_value(&pairs).expect("reports serialize"),
        "aggregate": serde_json::to_value(aggregate).expect("reports serialize"),
    });
    if let Some(out) = args.value("out") {
        let out = Path::new(out);
        let mut text = serde_json::to_string_pretty(&value).expect("reports serialize");
        text.push('\n');
        write_text(out, &text)?;
        let mut m = RunManifest::new("evaluate", started);
        m.inputs = vec![
            retr_path.to_string(),
            args.require("library").to_string(),
            args.require("truths").to_string(),
        ];
        m.outputs.push(out.display().to_string());
        m.write(out, false)?;
    }
    Ok(CmdOutput::ok(value))
}

// ── localize ────────────────────────────────────────────────────────────

pub fn localize(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    if args.switch("f64") {
        localize_impl::<f64>(args, started)
    } else {
        localize_impl::<f32>(args, started)
    }
}

fn localize_impl<S: Scalar>(args: &Args, started: Instant) -> CliResult<CmdOutput> {
    let stride = args
        .f64_value("stride")?
        .expect("required flag is present");
    let half_extent = args.f64_value("half-extent")?.unwrap_or(DEFAULT_HALF_EXTENT);
    let index = args.usize_value("index")?.unwrap_or(0);

    let params: ModelParams<S> =
        ModelParams::load(Path::new(args.require("params"))).map_err(dom)?;
    let map = read_graph(Path::new(args.require("map"))).map_err(dom)?;
    let rows = load_query_rows(Path::new(args.require("features")), args.value("split"))?;
    if index >= rows.len() {
        return Err(CliError::Domain(format!(
            "--index {index} out of range; the query source has {} rows",
            rows.len()
        )));
    }

    let heatmap =
        pix2map::retrieval::localize(&rows[index], &map, stride, half_extent, &params)
            .map_err(dom)?;
    let best = heatmap
        .cells
        .iter()
        .reduce(|best, c| if c.score > best.score { c } else { best })
        .expect("localize returns at least one cell");

    let mut m = RunManifest::new("localize", started);
    m.inputs = vec![
        args.require("params").to_string(),
        args.require("map").to_string(),
        args.require("features").to_string(),
    ];
    if let Some(out) = args.value("out") {
        write_text(Path::new(out), &heatmap_csv(&heatmap))?;
        m.outputs.push(out.to_string());
    }
    if let Some(pgm) = args.value("pgm") {
        write_bytes(Path::new(pgm), &heatmap_pgm(&heatmap))?;
        m.outputs.push(pgm.to_string());
    }
    if let Some(out) = args.value("out") {
        m.write(Path::new(out), false)?;
    }

    Ok(CmdOutput::ok(json!({
        "scalar": scalar_name(args.switch("f64")),
        "index": index,
        "stride": stride,
        "half_extent": half_extent,
        "nx": heatmap.nx,
        "ny": heatmap.ny,
        "cells": heatmap.cells.len(),
        "best": {
            "x": best.x,
            "y": best.y,
            "heading": best.heading,
            "score": best.score,
        },
        "out": args.value("out"),
        "pgm": args.value("pgm"),
    })))
}

// ── gradcheck ───────────────────────────────────────────────────────────

fn gradcheck_graph(rng: &mut ChaCha8Rng) -> NodeGraph {
    let n = rng.gen_range(3..6);
    let positions: Vec<[f64; 2]> =
        (0..n).map(|_| [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)]).collect();
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if rng.gen_bool(0.5) {
        edges.push((n - 1, 0));
    }
    NodeGraph::new(positions, &edges)
}

pub fn gradcheck(args: &Args) -> CliResult<CmdOutput> {
    let seed = args.u64_value("seed")?.unwrap_or(0);
    let batches = args.usize_value("batches")?.unwrap_or(5);
    let step = args.f64_value("step")?.unwrap_or(1e-5);
    if batches == 0 {
        return Err(CliError::Usage("--batches must be at least 1".into()));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(CliError::Usage("--step must be a positive number".into()));
    }

    let gcfg = GraphEncoderConfig {
        layers: 2,
        embed_dim: 8,
        heads: 2,
        max_node_count: 8,
        ..GraphEncoderConfig::default()
    };
    let fcfg = FeatureEncoderConfig {
        input_dim: 12,
        hidden_dims: vec![10],
        embed_dim: 8,
        fusion: Fusion::Early,
        views: 1,
    };
    // One named check per loss term plus the weighted total.
    let targets: [(&str, (f64, f64, f64)); 4] = [
        ("contrastive", (1.0, 0.0, 0.0)),
        ("chamfer", (0.0, 1.0, 0.0)),
        ("edge", (0.0, 0.0, 1.0)),
        ("total", (1.0, 1.0, 0.1)),
    ];
    let mut worst = [0.0f64; 4];

    for b in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
        let size = rng.gen_range(2..=4);
        let dataset: Vec<PairedSample> = (0..size)
            .map(|_| PairedSample {
                graph: gradcheck_graph(&mut rng),
                features: (0..fcfg.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let refs: Vec<&PairedSample> = dataset.iter().collect();
        let params: ModelParams<f64> =
            ModelParams::init(gcfg.clone(), fcfg.clone(), seed.wrapping_add(1000 + b as u64))
                .map_err(dom)?;
        let inputs: Vec<Tensor<f64>> = params.tensor_list().into_iter().cloned().collect();

        for (t, (_, omegas)) in targets.iter().enumerate() {
            let cfg = TrainConfig {
                omega1: omegas.0,
                omega2: omegas.1,
                omega3: omegas.2,
                // Keep predicted probabilities away from the clamp
                // corners under finite-difference perturbation.
                bce_epsilon: 1e-3,
                ..TrainConfig::default()
            };
            // Pre-flight on the value level so the tape closure below
            // cannot fail for structural reasons.
            total_loss(&params, &refs, &cfg).map_err(dom)?;
            let err = gradient_check(
                |tape, vars| {
                    let pv = tape_params_from_flat(vars, &gcfg, &fcfg);
                    Ok(total_loss_tape(tape, &pv, &gcfg, &fcfg, &refs, &cfg)
                        .expect("pre-validated batch")
                        .total)
                },
                &inputs,
                step,
            )
            .map_err(dom)?;
            worst[t] = worst[t].max(err);
        }
    }

    let max = worst.iter().fold(0.0f64, |a, &b| a.max(b));
    let pass = max <= GRADCHECK_THRESHOLD;
    if !pass {
        eprintln!("error: worst relative gradient error {max:e} exceeds {GRADCHECK_THRESHOLD:e}");
    }
    Ok(CmdOutput {
        json: json!({
            "batches": batches,
            "seed": seed,
            "step": step,
            "threshold": GRADCHECK_THRESHOLD,
            "contrastive": worst[0],
            "chamfer": worst[1],
            "edge": worst[2],
            "total": worst[3],
            "max": max,
            "pass": pass,
        }),
        ok: pass,
    })
}
