//! Grid-search maximum-likelihood localization, argmax readout of the pose
//! maps, and the evaluation metrics.

use gqnloc_nn::graph::log_softmax_row;
use gqnloc_nn::Parallelism;
use gqnloc_world::{yaw_difference, CameraPose, Image};

use crate::bins::{bin_index, xy_flat, xy_unflat, Axis, Head, PITCH_AXIS, XY_AXIS, YAW_AXIS, Z_AXIS};
use crate::data::ContextBatch;
use crate::discriminative::PoseProbMaps;
use crate::error::Result;
use crate::generative::GenerativeModel;

/// Searched pose dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SearchDim {
    Xy,
    Yaw,
}

impl SearchDim {
    pub fn name(self) -> &'static str {
        match self {
            SearchDim::Xy => "xy",
            SearchDim::Yaw => "yaw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xy" => Some(SearchDim::Xy),
            "yaw" => Some(SearchDim::Yaw),
            _ => None,
        }
    }

    pub fn head(self) -> Head {
        match self {
            SearchDim::Xy => Head::Xy,
            SearchDim::Yaw => Head::Yaw,
        }
    }

    pub fn cells(self) -> usize {
        self.head().size()
    }

    /// Pose at cell `i` with every other dimension fixed to `gt`.
    pub fn cell_pose(self, i: usize, gt: &CameraPose) -> CameraPose {
        match self {
            SearchDim::Xy => {
                let (ix, iy) = xy_unflat(i);
                CameraPose { x: XY_AXIS.center(ix), y: XY_AXIS.center(iy), ..*gt }
            }
            SearchDim::Yaw => CameraPose { yaw: YAW_AXIS.center(i), ..*gt },
        }
    }

    pub fn candidates(self, gt: &CameraPose) -> Vec<CameraPose> {
        (0..self.cells()).map(|i| self.cell_pose(i, gt)).collect()
    }

    /// Cell containing `p` along this dimension.
    pub fn cell_of(self, p: &CameraPose) -> usize {
        bin_index(p).get(self.head())
    }

    /// Squared error in normalized units: Euclidean for xy, wrapped degrees
    /// over 180 for yaw.
    pub fn squared_error(self, est: &CameraPose, gt: &CameraPose) -> f64 {
        match self {
            SearchDim::Xy => (est.x - gt.x).powi(2) + (est.y - gt.y).powi(2),
            SearchDim::Yaw => (yaw_difference(est.yaw, gt.yaw) / 180.0).powi(2),
        }
    }
}

/// The grid edges a searched dimension shares with its probability head.
pub fn grid_axis(dim: SearchDim) -> Axis {
    match dim {
        SearchDim::Xy => XY_AXIS,
        SearchDim::Yaw => YAW_AXIS,
    }
}

/// Lowest index among the maxima; NaN never wins.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] || (v[best].is_nan() && !x.is_nan()) {
            best = i;
        }
    }
    best
}

/// Scores of every cell of a searched dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub dim: SearchDim,
    pub scores: Vec<f64>,
    pub fixed: CameraPose,
}

impl ScoreMap {
    /// Softmax over the grid, in log space. This treats the ELBO as an
    /// unnormalized log-likelihood under a uniform pose prior.
    pub fn log_probs(&self) -> Vec<f64> {
        let mut v = self.scores.clone();
        log_softmax_row(&mut v);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub dim: SearchDim,
    pub index: usize,
    pub estimate: CameraPose,
    pub gt: CameraPose,
    pub squared_error: f64,
    pub warnings: Vec<String>,
}

/// Argmax over a score vector aligned with `dim`'s grid.
pub fn localize_from_scores(dim: SearchDim, scores: &[f64], gt: &CameraPose) -> LocalizationResult {
    let index = argmax_lowest(scores);
    let estimate = dim.cell_pose(index, gt);
    LocalizationResult { dim, index, estimate, gt: *gt, squared_error: dim.squared_error(&estimate, gt), warnings: Vec::new() }
}

#[derive(Clone, Debug)]
pub struct SearchSettings {
    pub sigma: f64,
    /// ELBO samples per candidate.
    pub k: usize,
    pub seed: u64,
    /// Candidates per graph.
    pub chunk: usize,
    pub parallelism: Parallelism,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { sigma: 0.3, k: 1, seed: 0, chunk: 100, parallelism: Parallelism::global() }
    }
}

/// Maximum-likelihood search over one dimension with the rest fixed to the
/// ground truth.
pub fn grid_search_generative(
    model: &GenerativeModel<f32>,
    target: &Image,
    ctx: &ContextBatch<f32>,
    dim: SearchDim,
    gt: &CameraPose,
    s: &SearchSettings,
) -> Result<(LocalizationResult, ScoreMap)> {
    let candidates = dim.candidates(gt);
    let scores = model.score_poses(target, ctx, &candidates, s.sigma, s.k, s.seed, s.chunk, s.parallelism)?;
    let mut res = localize_from_scores(dim, &scores, gt);
    if !model.trained {
        res.warnings.push("scores come from an untrained model".into());
    }
    Ok((res, ScoreMap { dim, scores, fixed: *gt }))
}

/// Per-head argmax cell centers.
pub fn argmax_discriminative(maps: &PoseProbMaps) -> CameraPose {
    let (ix, iy) = xy_unflat(argmax_lowest(&maps.xy));
    CameraPose {
        x: XY_AXIS.center(ix),
        y: XY_AXIS.center(iy),
        z: Z_AXIS.center(argmax_lowest(&maps.z)),
        yaw: YAW_AXIS.center(argmax_lowest(&maps.yaw)),
        pitch: PITCH_AXIS.center(argmax_lowest(&maps.pitch)),
    }
}

pub fn discriminative_result(maps: &PoseProbMaps, dim: SearchDim, gt: &CameraPose) -> LocalizationResult {
    localize_from_scores(dim, maps.head(dim.head()), gt)
}

pub fn metric_mse(results: &[LocalizationResult]) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    results.iter().map(|r| r.squared_error).sum::<f64>() / results.len() as f64
}

/// Log-probability of the cell containing the ground truth.
pub fn metric_logprob_gt(log_probs: &[f64], dim: SearchDim, gt: &CameraPose) -> f64 {
    log_probs[dim.cell_of(gt)]
}

/// Cells of the union of 3x3 neighbourhoods around each context pose, clipped
/// to the grid, in increasing order.
pub fn vicinity_cells(context: &[CameraPose]) -> Vec<usize> {
    let n = XY_AXIS.n as i64;
    let mut cells = std::collections::BTreeSet::new();
    for p in context {
        let (cx, cy) = (XY_AXIS.index(p.x) as i64, XY_AXIS.index(p.y) as i64);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if (0..n).contains(&x) && (0..n).contains(&y) {
                    cells.insert(xy_flat(x as usize, y as usize));
                }
            }
        }
    }
    cells.into_iter().collect()
}

/// Log of the probability mass near the context poses.
pub fn context_vicinity_mass(xy_log_probs: &[f64], context: &[CameraPose]) -> f64 {
    let cells = vicinity_cells(context);
    let m = cells.iter().map(|&c| xy_log_probs[c]).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + cells.iter().map(|&c| (xy_log_probs[c] - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_is_lowest() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_lowest(&[f64::NAN, 0.0]), 1);
        assert_eq!(argmax_lowest(&[2.0; 5]), 0);
    }

    #[test]
    fn corner_vicinity_is_clipped() {
        let p = CameraPose { x: -1.0, y: -1.0, ..CameraPose::default() };
        assert_eq!(vicinity_cells(&[p]), vec![0, 1, 100, 101]);
    }
}
