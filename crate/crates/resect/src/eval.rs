//! Surface-deviation metrics and episode scoring.
//!
//! The bidirectional Chamfer distance is the mean of the two directed
//! mean-nearest-neighbor terms, so two parallel patches offset by d read
//! ≈ d mm. Two implementations ship side by side: a brute-force O(|A||B|)
//! oracle and a kd-tree accelerated version used everywhere else; both
//! compute the same squared-distance expressions so they agree to the last
//! bit, and the test suite holds them to 1e-9.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PLANE_ORDER;
use crate::parallel;
use crate::sim::{planned_patch, EpisodeResult, EpisodeStatus, PatchSpec, ProsthesisModel};

pub const DEFAULT_DELTA_MM: f64 = 1.5;
pub const DEFAULT_SAMPLES: usize = 2048;
pub const DEFAULT_RUNS: usize = 7;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("chamfer distance requires non-empty patches")]
    EmptyPatch,
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error("episode {episode} has non-positive shortest path {l}")]
    BadShortestPath { episode: u64, l: f64 },
    #[error("plane {0} missing from the model")]
    UnknownPlane(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub delta_mm: f64,
    pub samples: usize,
    pub runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            delta_mm: DEFAULT_DELTA_MM,
            samples: DEFAULT_SAMPLES,
            runs: DEFAULT_RUNS,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.delta_mm > 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "delta must be > 0, got {}",
                self.delta_mm
            )));
        }
        if self.samples < 16 {
            return Err(EvalError::InvalidConfig(format!(
                "samples must be >= 16, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

/// 3D kd-tree over a point set, index-based, median split per axis.
struct KdTree<'a> {
    pts: &'a [Vector3<f64>],
    // (point index, left child, right child) per node; usize::MAX = none.
    nodes: Vec<(usize, usize, usize)>,
    root: usize,
}

const NIL: usize = usize::MAX;

impl<'a> KdTree<'a> {
    fn build(pts: &'a [Vector3<f64>]) -> Self {
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        let mut nodes = Vec::with_capacity(pts.len());
        let root = Self::build_rec(pts, &mut idx, 0, &mut nodes);
        Self { pts, nodes, root }
    }

    fn build_rec(
        pts: &[Vector3<f64>],
        idx: &mut [usize],
        depth: usize,
        nodes: &mut Vec<(usize, usize, usize)>,
    ) -> usize {
        if idx.is_empty() {
            return NIL;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            pts[a][axis].partial_cmp(&pts[b][axis]).unwrap()
        });
        let point = idx[mid];
        let node = nodes.len();
        nodes.push((point, NIL, NIL));
        let (lo, hi) = idx.split_at_mut(mid);
        let left = Self::build_rec(pts, lo, depth + 1, nodes);
        let right = Self::build_rec(pts, &mut hi[1..], depth + 1, nodes);
        nodes[node].1 = left;
        nodes[node].2 = right;
        node
    }

    /// Squared distance to the nearest stored point.
    fn nearest_sq(&self, q: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        self.search(self.root, q, 0, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Vector3<f64>, depth: usize, best: &mut f64) {
        if node == NIL {
            return;
        }
        let (pi, left, right) = self.nodes[node];
        let d = (self.pts[pi] - q).norm_squared();
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let diff = q[axis] - self.pts[pi][axis];
        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
        self.search(near, q, depth + 1, best);
        if diff * diff < *best {
            self.search(far, q, depth + 1, best);
        }
    }
}

fn directed_mean_brute(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            let min_sq = to
                .iter()
                .map(|b| (a - b).norm_squared())
                .fold(f64::INFINITY, f64::min);
            min_sq.sqrt()
        })
        .sum();
    total / from.len() as f64
}

fn directed_mean_kd(from: &[Vector3<f64>], tree: &KdTree) -> f64 {
    let total: f64 = from.iter().map(|a| tree.nearest_sq(a).sqrt()).sum();
    total / from.len() as f64
}

/// Brute-force O(|A||B|) oracle for the bidirectional Chamfer distance.
pub fn chamfer_brute_force(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyPatch);
    }
    Ok(0.5 * (directed_mean_brute(a, b) + directed_mean_brute(b, a)))
}

/// kd-tree accelerated bidirectional Chamfer distance, mm.
pub fn chamfer_bidirectional(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyPatch);
    }
    let tree_b = KdTree::build(b);
    let tree_a = KdTree::build(a);
    Ok(0.5 * (directed_mean_kd(a, &tree_b) + directed_mean_kd(b, &tree_a)))
}

pub fn points_to_vectors(points: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect()
}

/// Episode success: every plane cut and the six-plane mean deviation inside
/// the tolerance (inclusive).
pub fn episode_success(chamfers: &[Option<f64>], delta_mm: f64) -> bool {
    if chamfers.iter().any(Option::is_none) {
        return false;
    }
    let n = chamfers.len() as f64;
    let mean: f64 = chamfers.iter().map(|c| c.unwrap()).sum::<f64>() / n;
    mean <= delta_mm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneScore {
    pub plane_id: u32,
    pub name: String,
    pub cut: bool,
    pub chamfer_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub episode_id: u64,
    pub aborted: bool,
    pub planes: Vec<PlaneScore>,
    /// Mean deviation over cut planes; `None` when nothing was cut.
    pub mean_chamfer_mm: Option<f64>,
    pub success: bool,
    pub path_mm: f64,
    pub shortest_mm: f64,
    pub spl_term: f64,
}

/// Scores one episode against the plan: regenerates each planned patch from
/// the seed and sample count recorded in the result header, measures Chamfer
/// deviation per cut plane, and computes S and the SPL term.
pub fn score_episode(
    result: &EpisodeResult,
    model: &ProsthesisModel,
    cfg: &EvalConfig,
) -> Result<EpisodeScore, EvalError> {
    cfg.validate()?;
    if !(result.shortest_path_mm > 0.0) {
        return Err(EvalError::BadShortestPath {
            episode: result.episode_id,
            l: result.shortest_path_mm,
        });
    }
    let patch = PatchSpec {
        samples: result.patch_samples,
        seed: result.patch_seed,
    };
    let aborted = matches!(result.status, EpisodeStatus::Aborted { .. });
    let mut planes = Vec::with_capacity(model.ordered_planes().len());
    for plane in model.ordered_planes() {
        let executed = result.patches.iter().find(|p| p.plane_id == plane.id);
        let chamfer = match executed {
            Some(p) => {
                let planned = planned_patch(plane, &patch);
                let got = points_to_vectors(&p.points);
                Some(chamfer_bidirectional(&got, &planned)?)
            }
            None => None,
        };
        planes.push(PlaneScore {
            plane_id: plane.id,
            name: plane.name.clone(),
            cut: executed.is_some(),
            chamfer_mm: chamfer,
        });
    }
    let chamfers: Vec<Option<f64>> = planes.iter().map(|p| p.chamfer_mm).collect();
    let cut_values: Vec<f64> = chamfers.iter().flatten().copied().collect();
    let mean_chamfer = (!cut_values.is_empty())
        .then(|| cut_values.iter().sum::<f64>() / cut_values.len() as f64);
    let success = !aborted && episode_success(&chamfers, cfg.delta_mm);
    let l = result.shortest_path_mm;
    let p = result.path_length_mm;
    let spl_term = if success { l / p.max(l) } else { 0.0 };
    Ok(EpisodeScore {
        episode_id: result.episode_id,
        aborted,
        planes,
        mean_chamfer_mm: mean_chamfer,
        success,
        path_mm: p,
        shortest_mm: l,
        spl_term,
    })
}

/// Scores a batch, in parallel when the `parallel` feature is active.
pub fn score_episodes(
    results: &[EpisodeResult],
    model: &ProsthesisModel,
    cfg: &EvalConfig,
) -> Result<Vec<EpisodeScore>, EvalError> {
    parallel::map_slice(results, |r| score_episode(r, model, cfg))
        .into_iter()
        .collect()
}

/// Mean and sample standard deviation (n−1); SD is 0 for n ≤ 1.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// SPL over non-aborted episodes: mean ± sample SD of S·l/max(p,l).
pub fn spl(scores: &[EpisodeScore]) -> (f64, f64) {
    let terms: Vec<f64> = scores
        .iter()
        .filter(|s| !s.aborted)
        .map(|s| s.spl_term)
        .collect();
    mean_sd(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneAggregate {
    pub plane_id: u32,
    pub name: String,
    pub successes: usize,
    pub runs: usize,
    pub rate: f64,
}

impl PlaneAggregate {
    /// Table cell format: `1.00 (7/7)`.
    pub fn cell(&self) -> String {
        format!("{:.2} ({}/{})", self.rate, self.successes, self.runs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delta_mm: f64,
    /// Per-plane success (plane cut and its own deviation ≤ δ), in the
    /// fixed reporting order.
    pub per_plane: Vec<PlaneAggregate>,
    /// Episode-level success (all six cut, six-plane mean ≤ δ).
    pub episode_successes: usize,
    pub episode_runs: usize,
    pub aborted: usize,
    pub spl_mean: f64,
    pub spl_sd: f64,
    pub episodes: Vec<EpisodeScore>,
}

impl EvalReport {
    pub fn episode_sr_cell(&self) -> String {
        let rate = if self.episode_runs == 0 {
            0.0
        } else {
            self.episode_successes as f64 / self.episode_runs as f64
        };
        format!("{rate:.2} ({}/{})", self.episode_successes, self.episode_runs)
    }

    pub fn spl_cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.spl_mean, self.spl_sd)
    }

    /// One header row of plane columns in the fixed order, then one value
    /// row: per-plane SR cells, the episode SR, and SPL.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = self.per_plane.iter().map(|p| p.name.clone()).collect();
        header.push("episode_sr".into());
        header.push("spl".into());
        let mut row: Vec<String> = self.per_plane.iter().map(|p| p.cell()).collect();
        row.push(self.episode_sr_cell());
        row.push(self.spl_cell());
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Aggregates per-plane and episode-level success over non-aborted runs.
pub fn aggregate(scores: &[EpisodeScore], delta_mm: f64) -> EvalReport {
    let counted: Vec<&EpisodeScore> = scores.iter().filter(|s| !s.aborted).collect();
    let aborted = scores.len() - counted.len();
    let runs = counted.len();
    let mut per_plane = Vec::with_capacity(PLANE_ORDER.len());
    for name in PLANE_ORDER {
        let mut successes = 0;
        let mut plane_id = 0;
        for s in &counted {
            if let Some(p) = s.planes.iter().find(|p| p.name == *name) {
                plane_id = p.plane_id;
                if p.cut && p.chamfer_mm.is_some_and(|c| c <= delta_mm) {
                    successes += 1;
                }
            }
        }
        per_plane.push(PlaneAggregate {
            plane_id,
            name: (*name).to_string(),
            successes,
            runs,
            rate: if runs == 0 {
                0.0
            } else {
                successes as f64 / runs as f64
            },
        });
    }
    let episode_successes = counted.iter().filter(|s| s.success).count();
    let (spl_mean, spl_sd) = spl(scores);
    EvalReport {
        delta_mm,
        per_plane,
        episode_successes,
        episode_runs: runs,
        aborted,
        spl_mean,
        spl_sd,
        episodes: scores.to_vec(),
    }
}
