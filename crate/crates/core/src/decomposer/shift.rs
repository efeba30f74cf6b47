use log::debug;

use super::config::{FilterMode, ScheduleConfig};
use super::context::PartModel;
use super::state::{DecompositionState, LatentPart};
use crate::error::{Error, Result};
use crate::geom::{
    component_members, connected_components, distance, pairwise_distances, reflect_points, resample_to, DistanceMatrix, Point,
    PointCloud, SymmetryPlane,
};
use crate::partvae::canonicalize_part;

/// Assigns each row (target point) to its nearest column (part); ties go to the lower column.
pub fn nn_segment(q: &DistanceMatrix) -> Vec<Vec<usize>> {
    let mut segments = vec![Vec::new(); q.cols()];
    for i in 0..q.rows() {
        segments[q.row_min(i).0].push(i);
    }
    segments
}

/// Mean over rows of the row minimum.
pub fn coverage(q: &DistanceMatrix) -> f64 {
    (0..q.rows()).map(|i| q.row_min(i).1).sum::<f64>() / q.rows() as f64
}

/// The outcome of the swap search.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapPlan {
    /// Part whose columns are removed.
    pub part: usize,
    /// Least-covered target points; they become the part's new cloud.
    pub points: Vec<usize>,
    pub before: f64,
    /// Coverage with the part's columns removed and `points` treated as covered.
    pub after: f64,
}

/// `candidates` lists each swappable part with the matrix columns it owns.
pub fn plan_swap(q: &DistanceMatrix, candidates: &[(usize, Vec<usize>)], swap_frac: f64) -> Option<SwapPlan> {
    let n = q.rows();
    if n == 0 || candidates.is_empty() {
        return None;
    }
    let count = ((swap_frac * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let minima: Vec<f64> = (0..n).map(|i| q.row_min(i).1).collect();
    order.sort_by(|&a, &b| minima[b].total_cmp(&minima[a]).then(a.cmp(&b)));
    let mut worst = order[..count].to_vec();
    worst.sort_unstable();
    let mut is_worst = vec![false; n];
    for &i in &worst {
        is_worst[i] = true;
    }
    let before = minima.iter().sum::<f64>() / n as f64;
    let mut best: Option<(usize, f64)> = None;
    for (part, cols) in candidates {
        if cols.len() >= q.cols() {
            continue;
        }
        let mut total = 0.0;
        for i in (0..n).filter(|&i| !is_worst[i]) {
            let m = (0..q.cols())
                .filter(|j| !cols.contains(j))
                .map(|j| q.get(i, j))
                .fold(f64::INFINITY, f64::min);
            total += m;
        }
        let after = total / n as f64;
        if best.is_none_or(|(_, b)| after < b) {
            best = Some((*part, after));
        }
    }
    let (part, after) = best?;
    (after < before).then_some(SwapPlan {
        part,
        points: worst,
        before,
        after,
    })
}

/// Drops the `p` fraction of best-covered points of each segment (or of the whole target in
/// [`FilterMode::Global`]). `dist[i]` is point `i`'s distance to its assigned part. A segment
/// never empties: at least its farthest point survives.
pub fn filter_covered(segments: &[Vec<usize>], dist: &[f64], p: f64, mode: FilterMode) -> Vec<Vec<usize>> {
    let by_dist = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
    match mode {
        FilterMode::PerSegment => segments
            .iter()
            .map(|s| {
                if s.is_empty() {
                    return Vec::new();
                }
                let drop = ((p * s.len() as f64) + 1e-9).floor() as usize;
                let keep = s.len().saturating_sub(drop).max(1);
                let mut sorted = s.clone();
                sorted.sort_by(by_dist);
                let mut kept = sorted[s.len() - keep..].to_vec();
                kept.sort_unstable();
                kept
            })
            .collect(),
        FilterMode::Global => {
            let mut all: Vec<usize> = segments.iter().flatten().copied().collect();
            all.sort_by(by_dist);
            let drop = ((p * all.len() as f64) + 1e-9).floor() as usize;
            let mut dropped = vec![false; dist.len()];
            for &i in &all[..drop] {
                dropped[i] = true;
            }
            segments
                .iter()
                .map(|s| {
                    let kept: Vec<usize> = s.iter().copied().filter(|&i| !dropped[i]).collect();
                    match (kept.is_empty(), s.iter().max_by(|a, b| by_dist(a, b))) {
                        (true, Some(&far)) => vec![far],
                        _ => kept,
                    }
                })
                .collect()
        }
    }
}

/// Indices of the ε-graph component of `segment` whose centroid is farthest, on average, from
/// the points of the other segments. With no other points the largest component wins.
pub fn farthest_component(segment: &PointCloud, others: Option<&PointCloud>, tau_cc: f64) -> Vec<usize> {
    let members = component_members(&connected_components(segment, tau_cc));
    if members.len() == 1 {
        return members.into_iter().next().expect("one component");
    }
    let score = |idx: &Vec<usize>| -> f64 {
        match others {
            None => idx.len() as f64,
            Some(o) => {
                let c = segment.select(idx).expect("component is non-empty").centroid();
                o.points().iter().map(|&p| distance(p, c)).sum::<f64>() / o.len() as f64
            }
        }
    };
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, m) in members.iter().enumerate() {
        let s = score(m);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    members.into_iter().nth(best).expect("index in range")
}

/// Pose-normalizes a component, encodes it, and returns the inverse normalization as the pose.
pub fn reencode(model: &mut PartModel, component: &PointCloud) -> Result<LatentPart> {
    let n = model.arch().points;
    let entry = canonicalize_part("component", component, n, "reencode")?;
    let (mu, _) = model.codec().encode(&entry.cloud)?;
    Ok(LatentPart {
        code: mu,
        pose: entry.pose,
    })
}

fn min_cross_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    a.points()
        .iter()
        .flat_map(|&p| b.points().iter().map(move |&q| distance(p, q)))
        .fold(f64::INFINITY, f64::min)
}

/// Replaces each part whose cloud touches its own mirror with one self-symmetric part encoding
/// their union. Returns the merged part indices.
pub fn merge_symmetric(model: &mut PartModel, state: &mut DecompositionState, cfg: &ScheduleConfig) -> Result<Vec<usize>> {
    if state.symmetry.is_none() {
        return Ok(Vec::new());
    }
    let owners = state.owners();
    let mut merged_now = Vec::new();
    for (col, owner) in owners.iter().enumerate() {
        if !owner.mirror {
            continue;
        }
        let i = owner.part;
        let (own, mirror) = (&state.decoded[i], &state.decoded[col]);
        if min_cross_distance(own, mirror) >= cfg.tau_cc {
            continue;
        }
        let union = PointCloud::pooled([own, mirror])?;
        let union = resample_to(&union, model.arch().points);
        match reencode(model, &union) {
            Ok(part) => {
                state.parts[i] = part;
                state.merged[i] = true;
                merged_now.push(i);
            }
            Err(e) => debug!("{}: symmetric merge of part {i} skipped: {e}", state.target_id),
        }
    }
    if !merged_now.is_empty() {
        state.refresh(model)?;
    }
    Ok(merged_now)
}

/// What a shift did, for logging and tests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShiftReport {
    pub merged: Vec<usize>,
    pub swap: Option<SwapPlan>,
    /// Pre-filter nearest-part segments, per posed cloud.
    pub segments: Vec<Vec<usize>>,
    /// Post-filter segments, per part, as points (mirror-assigned points are reflected back).
    pub filtered: Vec<Vec<Point>>,
    /// The component each part was re-encoded from, if any.
    pub components: Vec<Option<PointCloud>>,
    /// Parts that kept their previous variables (empty segment or degenerate component).
    pub kept: Vec<usize>,
}

/// Merge, swap, segment, filter, pick the farthest component and re-encode, for every part.
pub fn phase2_shift(
    model: &mut PartModel,
    target: &PointCloud,
    state: &mut DecompositionState,
    cfg: &ScheduleConfig,
) -> Result<ShiftReport> {
    let mut report = ShiftReport {
        merged: if cfg.symmetry { merge_symmetric(model, state, cfg)? } else { Vec::new() },
        ..ShiftReport::default()
    };
    let owners = state.owners();
    let k = state.parts.len();
    let mut clouds = state.decoded.clone();
    let mut q = pairwise_distances(target, &clouds)?;

    let candidates: Vec<(usize, Vec<usize>)> = (0..k)
        .map(|i| (i, (0..owners.len()).filter(|&c| owners[c].part == i).collect()))
        .collect();
    if let Some(plan) = plan_swap(&q, &candidates, cfg.swap_frac) {
        let worst = target.select(&plan.points)?;
        for &col in &candidates[plan.part].1 {
            clouds[col] = match (owners[col].mirror, &state.symmetry) {
                (true, Some(plane)) => reflect_points(&worst, plane),
                _ => worst.clone(),
            };
        }
        q = pairwise_distances(target, &clouds)?;
        report.swap = Some(plan);
    }

    let segments = nn_segment(&q);
    let dist: Vec<f64> = (0..q.rows()).map(|i| q.row_min(i).1).collect();
    let filtered_idx = filter_covered(&segments, &dist, cfg.p_filter, cfg.filter_mode);
    report.segments = segments;

    // Gather each part's points; points owned by a mirror are reflected into the part's frame.
    let mut per_part: Vec<Vec<Point>> = vec![Vec::new(); k];
    for (col, idx) in filtered_idx.iter().enumerate() {
        let owner = owners[col];
        let plane: Option<&SymmetryPlane> = if owner.mirror { state.symmetry.as_ref() } else { None };
        for &i in idx {
            let p = target.points()[i];
            per_part[owner.part].push(plane.map_or(p, |pl| pl.reflect(p)));
        }
    }

    let mut new_parts = state.parts.clone();
    for i in 0..k {
        if per_part[i].is_empty() {
            report.kept.push(i);
            report.components.push(None);
            continue;
        }
        let segment = PointCloud::new(per_part[i].clone())?;
        let others: Vec<Point> = (0..k).filter(|&j| j != i).flat_map(|j| per_part[j].iter().copied()).collect();
        let others = if others.is_empty() { None } else { Some(PointCloud::new(others)?) };
        let comp_idx = farthest_component(&segment, others.as_ref(), cfg.tau_cc);
        let component = segment.select(&comp_idx)?;
        match reencode(model, &component) {
            Ok(part) => new_parts[i] = part,
            Err(Error::Degenerate(msg)) => {
                debug!("{}: part {i} keeps its variables: {msg}", state.target_id);
                report.kept.push(i);
            }
            Err(e) => return Err(e),
        }
        report.components.push(Some(component));
    }
    report.filtered = per_part;
    state.parts = new_parts;
    state.refresh(model)?;
    Ok(report)
}
