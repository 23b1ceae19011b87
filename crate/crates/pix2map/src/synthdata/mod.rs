//! Deterministic synthetic cities and the paired samples used to train
//! and evaluate the retrieval pipeline at desk scale.
//!
//! A city is a block grid of two-way streets — each travel direction is
//! its own lane segment — plus a configurable fraction of blocks carrying
//! quarter-arc diagonal connectors. Interior polyline points wiggle by a
//! seeded perpendicular jitter so distinct streets are geometrically
//! distinguishable; segment endpoints stay bit-exact on the lattice so
//! resampling merges junctions into single nodes. At every intersection
//! each incoming segment connects to every outgoing one (U-turns
//! included), which keeps all intersection nodes at out-degree >= 2.
//!
//! The sensor stand-in for a pose is a fixed seeded Gaussian projection
//! of a 16x16 occupancy raster of the map window at that pose, plus
//! optional per-pose Gaussian noise. The projection is what ties the two
//! modalities together: windows with different geometry get different
//! rasters and therefore different feature vectors, so the pairing is
//! learnable without any image pipeline.
//!
//! On disk a dataset is a directory: `split.json` (ids, poses, regions),
//! `features.bin` (little-endian f64 rows in split order), and one
//! canonical graph JSON per sample under `graphs/`.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lanegraph::{
    extract_window, read_graph, resample_graph, write_graph, EgoPose, GraphError, LaneSegment,
    NodeGraph, Point, SegmentGraph, DEFAULT_HALF_EXTENT, DEFAULT_SPACING,
};
use crate::training::PairedSample;

/// Side length of the square occupancy raster feeding the feature
/// projection.
pub const RASTER_SIDE: usize = 16;

/// Interior sample count of a quarter-arc connector polyline (endpoints
/// excluded).
const ARC_INTERIOR: usize = 5;

/// Pose draws per requested sample before `make_splits` gives up.
const MAX_POSE_ATTEMPTS: usize = 64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("window at ({x:.1}, {y:.1}) contains {nodes} nodes, need at least 2")]
    SparseWindow { x: f64, y: f64, nodes: usize },
    #[error("could not draw a valid {split} pose in {attempts} attempts; grow the city or shrink the window")]
    PoseSampling { split: &'static str, attempts: usize },
    #[error("city extent {width:.1} x {height:.1} m cannot fit two disjoint regions of window size {window:.1} m")]
    RegionTooSmall { width: f64, height: f64, window: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad dataset file: {message}")]
    BadDatasetFile { path: String, message: String },
}

pub type SynthResult<T> = Result<T, SynthError>;

/// Everything that determines a synthetic city and its paired samples.
/// `(seed, projection_seed)` fix every generated byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Drives street jitter, arc placement, pose sampling, feature noise.
    pub seed: u64,
    /// Blocks along y.
    pub grid_rows: usize,
    /// Blocks along x.
    pub grid_cols: usize,
    /// Block edge length in meters.
    pub block_size: f64,
    /// Max perpendicular displacement of interior polyline points, meters.
    pub lane_jitter: f64,
    /// Fraction of blocks that get a quarter-arc diagonal connector.
    pub curve_fraction: f64,
    /// Length of the generated feature vectors.
    pub feature_dim: usize,
    /// Standard deviation of the additive feature noise.
    pub feature_noise: f64,
    /// Seeds the fixed raster-to-feature projection matrix; changing it
    /// re-randomizes the sensor model while keeping the geometry.
    pub projection_seed: u64,
    /// Node spacing of the resampled city map, meters.
    pub spacing: f64,
    /// Half side length of a sample window, meters.
    pub half_extent: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_rows: 6,
            grid_cols: 6,
            block_size: 60.0,
            lane_jitter: 1.2,
            curve_fraction: 0.35,
            feature_dim: 128,
            feature_noise: 0.01,
            projection_seed: 7,
            spacing: DEFAULT_SPACING,
            half_extent: DEFAULT_HALF_EXTENT,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> SynthResult<()> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad(format!("grid must be non-empty, got {}x{}", self.grid_rows, self.grid_cols));
        }
        if !(self.block_size > 0.0) || !self.block_size.is_finite() {
            return bad(format!("block_size must be positive, got {}", self.block_size));
        }
        if !(self.lane_jitter >= 0.0) || !self.lane_jitter.is_finite() {
            return bad(format!("lane_jitter must be >= 0, got {}", self.lane_jitter));
        }
        if self.lane_jitter >= self.block_size / 4.0 {
            return bad(format!(
                "lane_jitter {} too large for block_size {}; keep it under a quarter block",
                self.lane_jitter, self.block_size
            ));
        }
        if !(0.0..=1.0).contains(&self.curve_fraction) {
            return bad(format!("curve_fraction must lie in [0, 1], got {}", self.curve_fraction));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if !(self.feature_noise >= 0.0) || !self.feature_noise.is_finite() {
            return bad(format!("feature_noise must be >= 0, got {}", self.feature_noise));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if !(self.half_extent > 0.0) || !self.half_extent.is_finite() {
            return bad(format!("half_extent must be positive, got {}", self.half_extent));
        }
        Ok(())
    }
}

/// A generated city: raw lane segments, the resampled node map, and the
/// axis-aligned extent of the street lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub segments: SegmentGraph,
    /// `segments` resampled at `cfg.spacing` with junctions merged.
    pub map: NodeGraph,
    pub min: Point,
    pub max: Point,
}

/// Lattice corner; the single source of corner coordinates so equal
/// corners share exact float bits (segment joining keys on them).
fn corner(col: usize, row: usize, block: f64) -> Point {
    [col as f64 * block, row as f64 * block]
}

fn draw_jitter(rng: &mut ChaCha8Rng, jitter: f64) -> f64 {
    if jitter > 0.0 {
        rng.gen_range(-jitter..jitter)
    } else {
        0.0
    }
}

/// Straight street from `a` to `b`: endpoints exact, three interior
/// points displaced perpendicular to the axis.
fn street_polyline(a: Point, b: Point, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len = (dx * dx + dy * dy).sqrt();
    let perp = [-dy / len, dx / len];
    let mut pts = Vec::with_capacity(5);
    pts.push(a);
    for t in [0.25, 0.5, 0.75] {
        let off = draw_jitter(rng, jitter);
        pts.push([a[0] + t * dx + off * perp[0], a[1] + t * dy + off * perp[1]]);
    }
    pts.push(b);
    pts
}

/// Quarter arc from `start` to `end` around `center`: endpoints exact,
/// interior points at evenly spaced angles with radial jitter.
fn arc_polyline(
    center: Point,
    radius: f64,
    theta: (f64, f64),
    start: Point,
    end: Point,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let steps = ARC_INTERIOR + 1;
    let mut pts = Vec::with_capacity(ARC_INTERIOR + 2);
    pts.push(start);
    for k in 1..steps {
        let t = k as f64 / steps as f64;
        let angle = theta.0 + t * (theta.1 - theta.0);
        let r = radius + draw_jitter(rng, jitter);
        pts.push([center[0] + r * angle.cos(), center[1] + r * angle.sin()]);
    }
    pts.push(end);
    pts
}

/// Generates the street lattice: two directed segments per street (one
/// per travel direction), quarter-arc connectors on a seeded fraction of
/// blocks, and complete incoming-to-outgoing successor wiring at every
/// intersection. Deterministic per config.
pub fn gen_city(cfg: &SynthConfig) -> SynthResult<City> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Stream 5 keeps city geometry decoupled from the pose streams used
    // by make_splits on the same seed.
    rng.set_stream(5);
    let b = cfg.block_size;
    let j = cfg.lane_jitter;
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);

    let mut segments: Vec<LaneSegment> = Vec::new();
    let two_way = |a: Point, z: Point, rng: &mut ChaCha8Rng, segments: &mut Vec<LaneSegment>| {
        segments.push(LaneSegment::new(street_polyline(a, z, j, rng)));
        segments.push(LaneSegment::new(street_polyline(z, a, j, rng)));
    };
    for r in 0..=rows {
        for c in 0..cols {
            two_way(corner(c, r, b), corner(c + 1, r, b), &mut rng, &mut segments);
        }
    }
    for c in 0..=cols {
        for r in 0..rows {
            two_way(corner(c, r, b), corner(c, r + 1, b), &mut rng, &mut segments);
        }
    }
    use std::f64::consts::{FRAC_PI_2, PI};
    for r in 0..rows {
        for c in 0..cols {
            if !rng.gen_bool(cfg.curve_fraction) {
                continue;
            }
            let sw = corner(c, r, b);
            let ne = corner(c + 1, r + 1, b);
            // The arc bows through the block around one of the two
            // off-diagonal corners.
            let (center, th) = if rng.gen_bool(0.5) {
                (corner(c + 1, r, b), (PI, FRAC_PI_2))
            } else {
                (corner(c, r + 1, b), (-FRAC_PI_2, 0.0))
            };
            segments.push(LaneSegment::new(arc_polyline(center, b, th, sw, ne, j, &mut rng)));
            segments
                .push(LaneSegment::new(arc_polyline(center, b, (th.1, th.0), ne, sw, j, &mut rng)));
        }
    }

    // Complete in->out wiring per intersection. Corner coordinates are
    // bit-exact, so the endpoint bits are a safe join key; per-key lists
    // fill in segment index order, keeping the wiring deterministic.
    let key = |p: Point| (p[0].to_bits(), p[1].to_bits());
    let mut outgoing: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for (i, seg) in segments.iter().enumerate() {
        outgoing.entry(key(seg.polyline[0])).or_default().push(i);
    }
    let mut successors = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        let last = *seg.polyline.last().expect("street polylines are never empty");
        if let Some(outs) = outgoing.get(&key(last)) {
            successors.extend(outs.iter().map(|&o| (i, o)));
        }
    }

    let segments = SegmentGraph::new(segments, successors);
    let map = resample_graph(&segments, cfg.spacing)?;
    Ok(City { segments, map, min: corner(0, 0, b), max: corner(cols, rows, b) })
}

/// Binary occupancy of graph nodes over `[-half_extent, half_extent]^2`,
/// row-major with rows indexed by y from the bottom: cell
/// `(row, col) = raster[row * RASTER_SIDE + col]`.
pub fn occupancy_raster(g: &NodeGraph, half_extent: f64) -> Vec<f64> {
    let mut raster = vec![0.0; RASTER_SIDE * RASTER_SIDE];
    let cell = 2.0 * half_extent / RASTER_SIDE as f64;
    for p in &g.positions {
        if p[0].abs() > half_extent || p[1].abs() > half_extent {
            continue;
        }
        let col = (((p[0] + half_extent) / cell) as usize).min(RASTER_SIDE - 1);
        let row = (((p[1] + half_extent) / cell) as usize).min(RASTER_SIDE - 1);
        raster[row * RASTER_SIDE + col] = 1.0;
    }
    raster
}

/// The fixed raster-to-feature map: a `feature_dim x RASTER_SIDE^2`
/// Gaussian matrix drawn once from `projection_seed`, scaled by
/// `1/sqrt(cells)` so feature magnitudes stay O(1).
struct FeatureProjector {
    weights: Vec<f64>,
    dim: usize,
}

impl FeatureProjector {
    fn new(cfg: &SynthConfig) -> Self {
        let cells = RASTER_SIDE * RASTER_SIDE;
        let scale = 1.0 / (cells as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.projection_seed);
        let weights = (0..cfg.feature_dim * cells)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { weights, dim: cfg.feature_dim }
    }

    fn project(&self, raster: &[f64]) -> Vec<f64> {
        let cells = RASTER_SIDE * RASTER_SIDE;
        (0..self.dim)
            .map(|r| {
                self.weights[r * cells..(r + 1) * cells]
                    .iter()
                    .zip(raster)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }
}

/// Applies the fixed seeded projection to a raster; the noise-free core
/// of [`gen_paired_sample`], exposed for inspection and tests.
pub fn project_features(raster: &[f64], cfg: &SynthConfig) -> SynthResult<Vec<f64>> {
    cfg.check()?;
    let cells = RASTER_SIDE * RASTER_SIDE;
    if raster.len() != cells {
        return Err(SynthError::BadConfig(format!(
            "raster has {} cells, expected {}",
            raster.len(),
            cells
        )));
    }
    Ok(FeatureProjector::new(cfg).project(raster))
}

/// Per-pose noise stream: FNV-1a over the seed and the exact pose bits,
/// so a pose always gets the same noise and nearby poses get independent
/// noise.
fn pose_noise_seed(seed: u64, pose: &EgoPose) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for word in [seed, pose.position[0].to_bits(), pose.position[1].to_bits(), pose.heading.to_bits()]
    {
        for byte in word.to_le_bytes() {
            h = (h ^ u64::from(byte)).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn sample_with(
    city: &City,
    pose: &EgoPose,
    cfg: &SynthConfig,
    projector: &FeatureProjector,
) -> SynthResult<PairedSample> {
    let window = extract_window(&city.map, pose, cfg.half_extent)?;
    if window.node_count() < 2 {
        return Err(SynthError::SparseWindow {
            x: pose.position[0],
            y: pose.position[1],
            nodes: window.node_count(),
        });
    }
    let mut features = projector.project(&occupancy_raster(&window, cfg.half_extent));
    if cfg.feature_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(pose_noise_seed(cfg.seed, pose));
        for f in &mut features {
            *f += cfg.feature_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(PairedSample { features, graph: window })
}

/// Extracts the map window at `pose` and projects its occupancy raster
/// into a feature vector (plus seeded per-pose noise). Errors when the
/// window holds fewer than two nodes.
pub fn gen_paired_sample(
    city: &City,
    pose: &EgoPose,
    cfg: &SynthConfig,
) -> SynthResult<PairedSample> {
    cfg.check()?;
    sample_with(city, pose, cfg, &FeatureProjector::new(cfg))
}

/// Requested split sizes; `make_splits` delivers them exactly or errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub map_update: usize,
    pub map_expand: usize,
}

/// A generated dataset: training pairs plus the two held-out regimes —
/// map-update poses share the training region, map-expand poses come
/// from the disjoint half of the city.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PairedSample>,
    pub map_update: Vec<PairedSample>,
    pub map_expand: Vec<PairedSample>,
    pub train_poses: Vec<EgoPose>,
    pub map_update_poses: Vec<EgoPose>,
    pub map_expand_poses: Vec<EgoPose>,
    /// Left half of the city (vertical bisection): train + map-update.
    pub train_region: (Point, Point),
    /// Right half: map-expand.
    pub expand_region: (Point, Point),
}

/// Draws poses (cardinal headings, uniform positions) and generates the
/// three splits. Train and map-update share the left half of the city on
/// independent pose streams; map-expand draws strictly right of the
/// bisection line.
pub fn make_splits(
    city: &City,
    cfg: &SynthConfig,
    counts: &SplitCounts,
) -> SynthResult<DatasetSplit> {
    cfg.check()?;
    let (min, max) = (city.min, city.max);
    let mid = 0.5 * (min[0] + max[0]);
    let window = 2.0 * cfg.half_extent;
    if mid - min[0] < window || max[0] - mid < window || max[1] - min[1] < window {
        return Err(SynthError::RegionTooSmall {
            width: max[0] - min[0],
            height: max[1] - min[1],
            window,
        });
    }
    let train_region = (min, [mid, max[1]]);
    let expand_region = ([mid, min[1]], max);
    let projector = FeatureProjector::new(cfg);

    use std::f64::consts::{FRAC_PI_2, PI};
    let headings = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];
    let draw = |region: (Point, Point),
                    count: usize,
                    stream: u64,
                    name: &'static str,
                    strict_min_x: bool|
     -> SynthResult<(Vec<PairedSample>, Vec<EgoPose>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let mut samples = Vec::with_capacity(count);
        let mut poses = Vec::with_capacity(count);
        'next: for _ in 0..count {
            for _ in 0..MAX_POSE_ATTEMPTS {
                let x = rng.gen_range(region.0[0]..region.1[0]);
                if strict_min_x && x <= region.0[0] {
                    continue;
                }
                let y = rng.gen_range(region.0[1]..region.1[1]);
                let pose = EgoPose::new(x, y, headings[rng.gen_range(0..4)]);
                match sample_with(city, &pose, cfg, &projector) {
                    Ok(s) => {
                        samples.push(s);
                        poses.push(pose);
                        continue 'next;
                    }
                    Err(SynthError::SparseWindow { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            return Err(SynthError::PoseSampling { split: name, attempts: MAX_POSE_ATTEMPTS });
        }
        Ok((samples, poses))
    };

    let (train, train_poses) = draw(train_region, counts.train, 10, "train", false)?;
    let (map_update, map_update_poses) = draw(train_region, counts.map_update, 11, "map_update", false)?;
    // Strict: a pose exactly on the bisection line would sit inside the
    // training region's bounding box.
    let (map_expand, map_expand_poses) = draw(expand_region, counts.map_expand, 12, "map_expand", true)?;

    Ok(DatasetSplit {
        train,
        map_update,
        map_expand,
        train_poses,
        map_update_poses,
        map_expand_poses,
        train_region,
        expand_region,
    })
}

// ── persistence ────────────────────────────────────────────────────────

const FEATURES_MAGIC: &[u8; 4] = b"P2MF";
const FEATURES_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    id: String,
    pose: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    feature_dim: usize,
    train: Vec<EntryMeta>,
    map_update: Vec<EntryMeta>,
    map_expand: Vec<EntryMeta>,
    train_region: [Point; 2],
    expand_region: [Point; 2],
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.display().to_string(), source }
}

/// Canonical id of one sample within a saved dataset: split name plus a
/// zero-padded index, e.g. `train-007`. Split names are `train`,
/// `update`, and `expand`.
pub fn entry_id(split: &str, index: usize) -> String {
    format!("{split}-{index:03}")
}

fn entry_metas(name: &str, poses: &[EgoPose]) -> Vec<EntryMeta> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| EntryMeta {
            id: entry_id(name, i),
            pose: [p.position[0], p.position[1], p.heading],
        })
        .collect()
}

/// Serializes feature rows into the `P2MF` binary layout used by
/// `features.bin`: magic, version, row count, dimension, then f64
/// little-endian row data.
pub fn features_to_bytes(rows: &[Vec<f64>]) -> Vec<u8> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut bytes = Vec::with_capacity(16 + 8 * rows.len() * dim);
    bytes.extend_from_slice(FEATURES_MAGIC);
    bytes.extend_from_slice(&FEATURES_VERSION.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(rows.len()).expect("desk-scale dataset").to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(dim).expect("desk-scale feature dim").to_le_bytes());
    for row in rows {
        assert_eq!(row.len(), dim, "all feature rows must share one dimension");
        for f in row {
            bytes.extend_from_slice(&f.to_le_bytes());
        }
    }
    bytes
}

/// Writes feature rows as a standalone `P2MF` file (atomic).
pub fn write_features_file(rows: &[Vec<f64>], path: &Path) -> SynthResult<()> {
    crate::fsutil::write_atomic(path, &features_to_bytes(rows)).map_err(io_err(path))
}

/// Reads a standalone `P2MF` feature file, taking row count and
/// dimension from its header.
pub fn read_features_file(path: &Path) -> SynthResult<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 {
        return Err(bad_file(path, format!("only {} bytes, header needs 16", bytes.len())));
    }
    if &bytes[0..4] != FEATURES_MAGIC {
        return Err(bad_file(path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != FEATURES_VERSION {
        return Err(bad_file(path, format!("unsupported version {}", word(4))));
    }
    let (rows, dim) = (word(8) as usize, word(12) as usize);
    let want = 16 + 8 * rows * dim;
    if bytes.len() != want {
        return Err(bad_file(path, format!("{} bytes, expected {want}", bytes.len())));
    }
    let mut out = Vec::with_capacity(rows);
    let mut at = 16;
    for _ in 0..rows {
        let row: Vec<f64> = (0..dim)
            .map(|_| {
                let v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
                at += 8;
                v
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Writes `split.json`, `features.bin` (rows in train, map-update,
/// map-expand order), and `graphs/<id>.json` per sample. All writes are
/// atomic; generated content is byte-deterministic.
pub fn save_dataset(split: &DatasetSplit, dir: &Path) -> SynthResult<()> {
    let all: Vec<(&str, &[PairedSample], &[EgoPose])> = vec![
        ("train", &split.train, &split.train_poses),
        ("update", &split.map_update, &split.map_update_poses),
        ("expand", &split.map_expand, &split.map_expand_poses),
    ];
    let dim = all
        .iter()
        .flat_map(|(_, samples, _)| samples.iter())
        .map(|s| s.features.len())
        .next()
        .unwrap_or(0);

    let rows: Vec<Vec<f64>> = all
        .iter()
        .flat_map(|(name, samples, poses)| {
            assert_eq!(samples.len(), poses.len(), "{name} samples and poses must align");
            samples.iter().map(|s| s.features.clone())
        })
        .collect();
    write_features_file(&rows, &dir.join("features.bin"))?;

    for (name, samples, _) in &all {
        for (i, s) in samples.iter().enumerate() {
            let path = dir.join("graphs").join(format!("{}.json", entry_id(name, i)));
            write_graph(&s.graph, &path)?;
        }
    }

    let manifest = SplitManifest {
        feature_dim: dim,
        train: entry_metas("train", &split.train_poses),
        map_update: entry_metas("update", &split.map_update_poses),
        map_expand: entry_metas("expand", &split.map_expand_poses),
        train_region: [split.train_region.0, split.train_region.1],
        expand_region: [split.expand_region.0, split.expand_region.1],
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let manifest_path = dir.join("split.json");
    crate::fsutil::write_atomic(&manifest_path, text.as_bytes()).map_err(io_err(&manifest_path))
}

fn bad_file(path: &Path, message: impl Into<String>) -> SynthError {
    SynthError::BadDatasetFile { path: path.display().to_string(), message: message.into() }
}

fn read_features(path: &Path, expect_rows: usize, expect_dim: usize) -> SynthResult<Vec<Vec<f64>>> {
    let out = read_features_file(path)?;
    let dim = out.first().map_or(expect_dim, Vec::len);
    if out.len() != expect_rows || dim != expect_dim {
        return Err(bad_file(
            path,
            format!(
                "header says {} x {dim}, split.json says {expect_rows} x {expect_dim}",
                out.len()
            ),
        ));
    }
    Ok(out)
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> SynthResult<DatasetSplit> {
    let manifest_path = dir.join("split.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: SplitManifest = serde_json::from_str(&text)
        .map_err(|e| bad_file(&manifest_path, e.to_string()))?;

    let total = manifest.train.len() + manifest.map_update.len() + manifest.map_expand.len();
    let mut features =
        read_features(&dir.join("features.bin"), total, manifest.feature_dim)?.into_iter();

    let mut load_split = |entries: &[EntryMeta]| -> SynthResult<(Vec<PairedSample>, Vec<EgoPose>)> {
        let mut samples = Vec::with_capacity(entries.len());
        let mut poses = Vec::with_capacity(entries.len());
        for e in entries {
            let graph = read_graph(&dir.join("graphs").join(format!("{}.json", e.id)))?;
            let row = features.next().expect("row count was validated against the manifest");
            samples.push(PairedSample { features: row, graph });
            // Heading was normalized at generation; reconstruct the exact
            // stored value rather than re-normalizing.
            poses.push(EgoPose { position: [e.pose[0], e.pose[1]], heading: e.pose[2] });
        }
        Ok((samples, poses))
    };

    let (train, train_poses) = load_split(&manifest.train)?;
    let (map_update, map_update_poses) = load_split(&manifest.map_update)?;
    let (map_expand, map_expand_poses) = load_split(&manifest.map_expand)?;
    Ok(DatasetSplit {
        train,
        map_update,
        map_expand,
        train_poses,
        map_update_poses,
        map_expand_poses,
        train_region: (manifest.train_region[0], manifest.train_region[1]),
        expand_region: (manifest.expand_region[0], manifest.expand_region[1]),
    })
}
