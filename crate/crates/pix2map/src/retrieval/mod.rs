//! The embedding library and everything that queries it: image-to-map
//! and map-to-image retrieval, the unimodal nearest-neighbor baseline,
//! library augmentation with unpaired graphs, and grid localization
//! heatmaps.
//!
//! Search is exhaustive and exact — desk-scale libraries score in
//! milliseconds and exactness keeps every ranking reproducible. Scores
//! are cosine similarities computed in `f64` regardless of the model
//! scalar, ties broken by id, so a ranking is a pure function of the
//! library contents.
//!
//! A library persists to a directory: `manifest.json` (ids, pairing
//! flags, poses), one binary embedding file per side (little-endian
//! `f32`, row-major, count and width in the header), and one canonical
//! graph JSON per entry under `graphs/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{
    build_attention_mask, feature_encode, feature_encode_batch, graph_encode_batch,
    node_input_features, Embedding, EncoderError, ModelParams,
};
use crate::lanegraph::{
    extract_window, fmt_sig, read_graph, write_graph, EgoPose, GraphError, NodeGraph, Point,
};
use crate::Scalar;

/// Graphs per encoding batch; attention cost is quadratic in the stacked
/// node count, so the stack is kept modest.
const ENCODE_CHUNK: usize = 32;

/// Default heading sweep of [`localize`]: the four cardinal directions
/// (normalized to `[-pi, pi)`).
pub const LOCALIZE_HEADINGS: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
    -std::f64::consts::FRAC_PI_2,
];

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("library is empty")]
    EmptyLibrary,
    #[error("k must be >= 1")]
    BadK,
    #[error("duplicate library id {0:?}")]
    DuplicateId(String),
    #[error("bad library id {0:?}: ids are 1-64 chars of [A-Za-z0-9_-]")]
    BadId(String),
    #[error("entry {id:?}: {message}")]
    EntryInvalid { id: String, message: String },
    #[error("no entry carries a feature embedding; this query needs a paired library")]
    MissingFeatureEmbeddings,
    #[error("query embedding has zero norm; the encoder mapped the input to zero")]
    ZeroNormQuery,
    #[error("stride must be positive and finite, got {0}")]
    BadStride(f64),
    #[error("no grid window contains any map node; shrink the stride or grow the window")]
    EmptyGrid,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad library file: {message}")]
    BadLibraryFile { path: String, message: String },
}

pub type RetResult<T> = Result<T, RetrievalError>;

/// One library row: a map graph, its embedding, and — when the graph
/// came with sensor data — the paired feature embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry<S> {
    pub id: String,
    pub graph: NodeGraph,
    pub graph_embedding: Embedding<S>,
    /// `None` marks an unpaired entry (graph without sensor data).
    pub feature_embedding: Option<Embedding<S>>,
    pub pose: Option<EgoPose>,
}

/// An immutable embedding index. Construction validates ids, embedding
/// widths, and norms; afterwards any number of queries may run
/// concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalLibrary<S> {
    entries: Vec<LibraryEntry<S>>,
    dim: usize,
}

fn check_id(id: &str) -> RetResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(RetrievalError::BadId(id.to_string()))
    }
}

fn norm_f64<S: Scalar>(v: &[S]) -> f64 {
    v.iter().map(|&x| x.to_f64()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity in f64, clamped into `[-1, 1]` so rounding can't
/// push a score past the bound. Callers have verified nonzero norms.
fn cosine<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x.to_f64() * y.to_f64()).sum();
    (dot / (norm_f64(a) * norm_f64(b))).clamp(-1.0, 1.0)
}

impl<S: Scalar> RetrievalLibrary<S> {
    /// Builds a library from pre-embedded entries, enforcing the type
    /// invariants: valid unique ids, a single embedding width, finite
    /// nonzero embeddings.
    pub fn from_entries(entries: Vec<LibraryEntry<S>>) -> RetResult<Self> {
        if entries.is_empty() {
            return Err(RetrievalError::EmptyLibrary);
        }
        let dim = entries[0].graph_embedding.len();
        let mut seen: Vec<&str> = Vec::with_capacity(entries.len());
        for e in &entries {
            check_id(&e.id)?;
            if seen.contains(&e.id.as_str()) {
                return Err(RetrievalError::DuplicateId(e.id.clone()));
            }
            seen.push(&e.id);
            let invalid = |message: String| RetrievalError::EntryInvalid {
                id: e.id.clone(),
                message,
            };
            let vectors = std::iter::once(("graph", &e.graph_embedding))
                .chain(e.feature_embedding.iter().map(|f| ("feature", f)));
            for (side, v) in vectors {
                if v.len() != dim {
                    return Err(invalid(format!(
                        "{side} embedding has length {}, library width is {dim}",
                        v.len()
                    )));
                }
                let n = norm_f64(v);
                if !n.is_finite() || !(n > 0.0) {
                    return Err(invalid(format!("{side} embedding norm is {n}")));
                }
            }
        }
        Ok(Self { entries, dim })
    }

    pub fn entries(&self) -> &[LibraryEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding width d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entries carrying a feature embedding.
    pub fn paired_count(&self) -> usize {
        self.entries.iter().filter(|e| e.feature_embedding.is_some()).count()
    }
}

/// One graph (with optional paired sensor features and pose) headed into
/// a library build.
#[derive(Debug, Clone, Copy)]
pub struct LibraryInput<'a> {
    pub id: &'a str,
    pub graph: &'a NodeGraph,
    pub features: Option<&'a [f64]>,
    pub pose: Option<EgoPose>,
}

fn encode_graphs_chunked<S: Scalar>(
    params: &ModelParams<S>,
    graphs: &[&NodeGraph],
) -> Result<Vec<Embedding<S>>, EncoderError> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(ENCODE_CHUNK) {
        out.extend(graph_encode_batch(params, chunk)?);
    }
    Ok(out)
}

/// Cheap shape-level validation (no attention math) so batch encoding
/// failures can name the offending entry.
fn precheck_graph<S: Scalar>(id: &str, g: &NodeGraph, params: &ModelParams<S>) -> RetResult<()> {
    node_input_features(g, &params.graph_cfg)
        .and_then(|_| build_attention_mask(g, &params.graph_cfg))
        .map(|_| ())
        .map_err(|e| RetrievalError::EntryInvalid { id: id.to_string(), message: e.to_string() })
}

/// Embeds every input once and freezes the result into a library.
/// Encoding failures carry the offending entry's id.
pub fn build_library<S: Scalar>(
    inputs: &[LibraryInput<'_>],
    params: &ModelParams<S>,
) -> RetResult<RetrievalLibrary<S>> {
    if inputs.is_empty() {
        return Err(RetrievalError::EmptyLibrary);
    }
    // Validate per entry first so batch failures can name the culprit.
    for input in inputs {
        check_id(input.id)?;
        if let Some(f) = input.features {
            if f.len() != params.feature_cfg.input_dim {
                return Err(RetrievalError::EntryInvalid {
                    id: input.id.to_string(),
                    message: format!(
                        "feature vector has length {}, encoder expects {}",
                        f.len(),
                        params.feature_cfg.input_dim
                    ),
                });
            }
        }
        precheck_graph(input.id, input.graph, params)?;
    }
    let graphs: Vec<&NodeGraph> = inputs.iter().map(|i| i.graph).collect();
    let graph_embeddings = encode_graphs_chunked(params, &graphs)?;

    let paired: Vec<Vec<f64>> =
        inputs.iter().filter_map(|i| i.features.map(<[f64]>::to_vec)).collect();
    let mut feature_embeddings = if paired.is_empty() {
        Vec::new()
    } else {
        feature_encode_batch(params, &paired)?
    }
    .into_iter();

    let entries = inputs
        .iter()
        .zip(graph_embeddings)
        .map(|(input, graph_embedding)| LibraryEntry {
            id: input.id.to_string(),
            graph: input.graph.clone(),
            graph_embedding,
            feature_embedding: input.features.map(|_| {
                feature_embeddings.next().expect("one feature embedding per paired input")
            }),
            pose: input.pose,
        })
        .collect();
    RetrievalLibrary::from_entries(entries)
}

/// Returns a new library extending `lib` with unpaired graphs (no
/// feature embeddings). Existing entries are copied bit-for-bit, so
/// augmentation can only interleave new ids into a fixed query's
/// ranking, never reorder the old ones.
pub fn augment_library<S: Scalar>(
    lib: &RetrievalLibrary<S>,
    graphs: &[(String, NodeGraph)],
    params: &ModelParams<S>,
) -> RetResult<RetrievalLibrary<S>> {
    for (id, g) in graphs {
        check_id(id)?;
        precheck_graph(id, g, params)?;
    }
    let refs: Vec<&NodeGraph> = graphs.iter().map(|(_, g)| g).collect();
    let embeddings = if refs.is_empty() {
        Vec::new()
    } else {
        encode_graphs_chunked(params, &refs)?
    };
    let mut entries = lib.entries.clone();
    entries.extend(graphs.iter().zip(embeddings).map(|((id, graph), graph_embedding)| {
        LibraryEntry {
            id: id.clone(),
            graph: graph.clone(),
            graph_embedding,
            feature_embedding: None,
            pose: None,
        }
    }));
    RetrievalLibrary::from_entries(entries)
}

/// One scored library id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub id: String,
    /// Cosine similarity in `[-1, 1]`.
    pub score: f64,
}

/// A ranking: scores non-increasing, exact ties ordered by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub hits: Vec<RankedHit>,
}

fn rank(mut scored: Vec<RankedHit>, k: usize) -> RankedResult {
    scored.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).expect("scores are finite").then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    RankedResult { hits: scored }
}

/// Image-to-map retrieval: encodes the feature vector and returns the
/// top-k library graphs by cosine similarity (k is silently capped at
/// the library size).
pub fn pix2map<S: Scalar>(
    features: &[f64],
    lib: &RetrievalLibrary<S>,
    k: usize,
    params: &ModelParams<S>,
) -> RetResult<RankedResult> {
    if lib.is_empty() {
        return Err(RetrievalError::EmptyLibrary);
    }
    if k == 0 {
        return Err(RetrievalError::BadK);
    }
    let query = feature_encode(params, features)?;
    if !(norm_f64(&query) > 0.0) {
        return Err(RetrievalError::ZeroNormQuery);
    }
    let scored = lib
        .entries
        .iter()
        .map(|e| RankedHit { id: e.id.clone(), score: cosine(&query, &e.graph_embedding) })
        .collect();
    Ok(rank(scored, k))
}

/// Map-to-image retrieval: encodes the graph and ranks the *paired*
/// entries by cosine similarity against their feature embeddings.
pub fn map2pix<S: Scalar>(
    g: &NodeGraph,
    lib: &RetrievalLibrary<S>,
    k: usize,
    params: &ModelParams<S>,
) -> RetResult<RankedResult> {
    if lib.is_empty() {
        return Err(RetrievalError::EmptyLibrary);
    }
    if k == 0 {
        return Err(RetrievalError::BadK);
    }
    if lib.paired_count() == 0 {
        return Err(RetrievalError::MissingFeatureEmbeddings);
    }
    let graphs = [g];
    let query = encode_graphs_chunked(params, &graphs)?.remove(0);
    if !(norm_f64(&query) > 0.0) {
        return Err(RetrievalError::ZeroNormQuery);
    }
    let scored = lib
        .entries
        .iter()
        .filter_map(|e| {
            e.feature_embedding
                .as_ref()
                .map(|f| RankedHit { id: e.id.clone(), score: cosine(&query, f) })
        })
        .collect();
    Ok(rank(scored, k))
}

/// The classical unimodal baseline: nearest stored *feature* embedding
/// to the query features; returns that entry's paired graph.
pub fn unimodal_retrieve<S: Scalar>(
    features: &[f64],
    lib: &RetrievalLibrary<S>,
    params: &ModelParams<S>,
) -> RetResult<(String, NodeGraph)> {
    if lib.is_empty() {
        return Err(RetrievalError::EmptyLibrary);
    }
    if lib.paired_count() == 0 {
        return Err(RetrievalError::MissingFeatureEmbeddings);
    }
    let query = feature_encode(params, features)?;
    if !(norm_f64(&query) > 0.0) {
        return Err(RetrievalError::ZeroNormQuery);
    }
    let scored: Vec<RankedHit> = lib
        .entries
        .iter()
        .filter_map(|e| {
            e.feature_embedding
                .as_ref()
                .map(|f| RankedHit { id: e.id.clone(), score: cosine(&query, f) })
        })
        .collect();
    let best = rank(scored, 1).hits.remove(0);
    let entry = lib
        .entries
        .iter()
        .find(|e| e.id == best.id)
        .expect("ranked id came from the library");
    Ok((best.id, entry.graph.clone()))
}

/// One scored candidate pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Raw cosine similarity (not normalized into a distribution).
    pub score: f64,
}

/// Scores over a position grid x heading sweep. `cells` holds only poses
/// whose window contained at least one node and embedded with nonzero
/// norm, in row-major grid order (y, then x, then heading).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Grid cell (0, 0) position — the map minimum corner.
    pub origin: Point,
    pub stride: f64,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<HeatmapCell>,
}

/// Grid localization with a custom heading sweep; see [`localize`].
pub fn localize_with<S: Scalar>(
    features: &[f64],
    map: &NodeGraph,
    stride: f64,
    half_extent: f64,
    headings: &[f64],
    params: &ModelParams<S>,
) -> RetResult<Heatmap> {
    if !(stride > 0.0) || !stride.is_finite() {
        return Err(RetrievalError::BadStride(stride));
    }
    let (min, max) = map.bounds().ok_or(RetrievalError::EmptyGrid)?;
    let query = feature_encode(params, features)?;
    if !(norm_f64(&query) > 0.0) {
        return Err(RetrievalError::ZeroNormQuery);
    }
    let nx = ((max[0] - min[0]) / stride).floor() as usize + 1;
    let ny = ((max[1] - min[1]) / stride).floor() as usize + 1;

    let mut poses = Vec::new();
    let mut windows = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            for &heading in headings {
                let pose =
                    EgoPose::new(min[0] + ix as f64 * stride, min[1] + iy as f64 * stride, heading);
                let window = extract_window(map, &pose, half_extent)?;
                if window.node_count() == 0 {
                    continue;
                }
                poses.push(pose);
                windows.push(window);
            }
        }
    }
    if windows.is_empty() {
        return Err(RetrievalError::EmptyGrid);
    }

    let refs: Vec<&NodeGraph> = windows.iter().collect();
    let embeddings = encode_graphs_chunked(params, &refs)?;
    // A window can embed to exactly zero (e.g. a lone node sitting on the
    // ego origin feeds the encoder an all-zero row); cosine carries no
    // signal there, so such cells are skipped like empty windows.
    let cells: Vec<HeatmapCell> = poses
        .iter()
        .zip(&embeddings)
        .filter(|(_, emb)| norm_f64(emb) > 0.0)
        .map(|(pose, emb)| HeatmapCell {
            x: pose.position[0],
            y: pose.position[1],
            heading: pose.heading,
            score: cosine(&query, emb),
        })
        .collect();
    if cells.is_empty() {
        return Err(RetrievalError::EmptyGrid);
    }
    Ok(Heatmap { origin: min, stride, nx, ny, cells })
}

/// Slides candidate poses over the map — positions at `stride` spacing
/// from the map's minimum corner, headings over the four cardinal
/// directions — scores each window's embedding against the encoded
/// query features, and returns the raw cosine scores.
pub fn localize<S: Scalar>(
    features: &[f64],
    map: &NodeGraph,
    stride: f64,
    half_extent: f64,
    params: &ModelParams<S>,
) -> RetResult<Heatmap> {
    localize_with(features, map, stride, half_extent, &LOCALIZE_HEADINGS, params)
}

/// Renders `x,y,heading,score` rows (nine significant digits, stable
/// bytes for fixed inputs).
pub fn heatmap_csv(h: &Heatmap) -> String {
    let mut s = String::from("x,y,heading,score\n");
    for c in &h.cells {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig(c.x, 9),
            fmt_sig(c.y, 9),
            fmt_sig(c.heading, 9),
            fmt_sig(c.score, 9)
        ));
    }
    s
}

/// Renders the heatmap as a binary PGM raster for quick viewing: one
/// pixel per grid cell (best score across headings), top row = highest
/// y, scores min-max normalized to 0..255; cells without a score map to
/// black.
pub fn heatmap_pgm(h: &Heatmap) -> Vec<u8> {
    let mut best = vec![f64::NEG_INFINITY; h.nx * h.ny];
    for c in &h.cells {
        let ix = ((c.x - h.origin[0]) / h.stride).round() as usize;
        let iy = ((c.y - h.origin[1]) / h.stride).round() as usize;
        let at = iy * h.nx + ix;
        if c.score > best[at] {
            best[at] = c.score;
        }
    }
    let scored: Vec<f64> = best.iter().copied().filter(|s| s.is_finite()).collect();
    let lo = scored.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scored.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let to_byte = |s: f64| -> u8 {
        if !s.is_finite() {
            0
        } else if hi > lo {
            (255.0 * (s - lo) / (hi - lo)).round() as u8
        } else {
            128
        }
    };
    let mut out = format!("P5\n{} {}\n255\n", h.nx, h.ny).into_bytes();
    for iy in (0..h.ny).rev() {
        for ix in 0..h.nx {
            out.push(to_byte(best[iy * h.nx + ix]));
        }
    }
    out
}

// ── persistence ────────────────────────────────────────────────────────

const EMBED_MAGIC: &[u8; 4] = b"P2ME";
const EMBED_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    paired: bool,
    pose: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct LibraryManifest {
    dim: usize,
    entries: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RetrievalError + '_ {
    move |source| RetrievalError::Io { path: path.display().to_string(), source }
}

fn bad_file(path: &Path, message: impl Into<String>) -> RetrievalError {
    RetrievalError::BadLibraryFile { path: path.display().to_string(), message: message.into() }
}

/// Embeddings are persisted as little-endian `f32` regardless of the
/// model scalar; `f64` libraries round on save.
fn write_embeddings<S: Scalar>(path: &Path, rows: &[&[S]], dim: usize) -> RetResult<()> {
    let mut bytes = Vec::with_capacity(16 + 4 * rows.len() * dim);
    bytes.extend_from_slice(EMBED_MAGIC);
    bytes.extend_from_slice(&EMBED_VERSION.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(rows.len()).expect("desk-scale library").to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(dim).expect("desk-scale width").to_le_bytes());
    for row in rows {
        for &v in *row {
            bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    crate::fsutil::write_atomic(path, &bytes).map_err(io_err(path))
}

fn read_embeddings<S: Scalar>(
    path: &Path,
    expect_rows: usize,
    expect_dim: usize,
) -> RetResult<Vec<Embedding<S>>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 {
        return Err(bad_file(path, format!("only {} bytes, header needs 16", bytes.len())));
    }
    if &bytes[0..4] != EMBED_MAGIC {
        return Err(bad_file(path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != EMBED_VERSION {
        return Err(bad_file(path, format!("unsupported version {}", word(4))));
    }
    let (rows, dim) = (word(8) as usize, word(12) as usize);
    if rows != expect_rows || dim != expect_dim {
        return Err(bad_file(
            path,
            format!("header says {rows} x {dim}, manifest says {expect_rows} x {expect_dim}"),
        ));
    }
    if bytes.len() != 16 + 4 * rows * dim {
        return Err(bad_file(
            path,
            format!("{} bytes, expected {}", bytes.len(), 16 + 4 * rows * dim),
        ));
    }
    let mut at = 16;
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let row: Embedding<S> = (0..dim)
            .map(|_| {
                let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
                at += 4;
                S::from_f64(f64::from(v))
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Writes `manifest.json`, `graph_embeddings.bin`,
/// `feature_embeddings.bin` (paired rows in entry order), and
/// `graphs/<id>.json` per entry. All writes are atomic.
pub fn save_library<S: Scalar>(lib: &RetrievalLibrary<S>, dir: &Path) -> RetResult<()> {
    let manifest = LibraryManifest {
        dim: lib.dim(),
        entries: lib
            .entries()
            .iter()
            .map(|e| ManifestEntry {
                id: e.id.clone(),
                paired: e.feature_embedding.is_some(),
                pose: e.pose.map(|p| [p.position[0], p.position[1], p.heading]),
            })
            .collect(),
    };

    let graph_rows: Vec<&[S]> = lib.entries().iter().map(|e| e.graph_embedding.as_slice()).collect();
    write_embeddings(&dir.join("graph_embeddings.bin"), &graph_rows, lib.dim())?;
    let feature_rows: Vec<&[S]> = lib
        .entries()
        .iter()
        .filter_map(|e| e.feature_embedding.as_deref())
        .collect();
    write_embeddings(&dir.join("feature_embeddings.bin"), &feature_rows, lib.dim())?;

    for e in lib.entries() {
        write_graph(&e.graph, &dir.join("graphs").join(format!("{}.json", e.id)))?;
    }

    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join("manifest.json");
    crate::fsutil::write_atomic(&path, text.as_bytes()).map_err(io_err(&path))
}

/// Loads a directory written by [`save_library`].
pub fn load_library<S: Scalar>(dir: &Path) -> RetResult<RetrievalLibrary<S>> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: LibraryManifest =
        serde_json::from_str(&text).map_err(|e| bad_file(&manifest_path, e.to_string()))?;

    let graph_embeddings = read_embeddings::<S>(
        &dir.join("graph_embeddings.bin"),
        manifest.entries.len(),
        manifest.dim,
    )?;
    let paired = manifest.entries.iter().filter(|e| e.paired).count();
    let mut feature_embeddings =
        read_embeddings::<S>(&dir.join("feature_embeddings.bin"), paired, manifest.dim)?
            .into_iter();

    let mut entries = Vec::with_capacity(manifest.entries.len());
    for (meta, graph_embedding) in manifest.entries.iter().zip(graph_embeddings) {
        let graph = read_graph(&dir.join("graphs").join(format!("{}.json", meta.id)))?;
        entries.push(LibraryEntry {
            id: meta.id.clone(),
            graph,
            graph_embedding,
            feature_embedding: if meta.paired {
                Some(feature_embeddings.next().expect("row count validated against manifest"))
            } else {
                None
            },
            pose: meta.pose.map(|[x, y, heading]| EgoPose { position: [x, y], heading }),
        });
    }
    RetrievalLibrary::from_entries(entries)
}

#[cfg(test)]
mod tests;
