//! Heterogeneous traffic graph extraction and ground-truth occupancy
//! labeling by path projection.

use serde::{Deserialize, Serialize};

use crate::lane::{LaneletNetwork, ReferencePath, RouteContext};
use crate::sim::{Frame, ScenarioTrace, VehicleState};
use crate::{Error, Result};

pub const VEHICLE_FEATURES: usize = 4;
pub const LANELET_FEATURES: usize = 3;
pub const V2L_FEATURES: usize = 3;
pub const L2L_FEATURES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum L2lRelation {
    Successor,
    Predecessor,
    AdjacentLeft,
    AdjacentRight,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct V2lEdge {
    pub vehicle: usize,
    pub lanelet: usize,
    /// [normalized arclength position, lateral offset m, heading difference rad]
    pub features: [f64; V2L_FEATURES],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L2lEdge {
    pub source: usize,
    pub target: usize,
    /// [relation one-hot x4, source length m]
    pub features: [f64; L2L_FEATURES],
}

/// Heterogeneous snapshot of one trace frame. Lanelet nodes are ordered by
/// ascending lanelet id; vehicle nodes keep the frame order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrafficGraph {
    pub vehicle_ids: Vec<u64>,
    /// [speed, accel, length, width] per vehicle node.
    pub vehicle_features: Vec<[f64; VEHICLE_FEATURES]>,
    pub lanelet_ids: Vec<u64>,
    /// [length, mean curvature, width] per lanelet node.
    pub lanelet_features: Vec<[f64; LANELET_FEATURES]>,
    pub v2l: Vec<V2lEdge>,
    pub l2l: Vec<L2lEdge>,
}

impl TrafficGraph {
    pub fn lanelet_index(&self, id: u64) -> Option<usize> {
        self.lanelet_ids.binary_search(&id).ok()
    }
}

/// Builds the heterogeneous graph for one frame: one v2l edge per vehicle
/// and occupied lanelet, l2l edges mirroring the network topology.
pub fn extract_graph(network: &LaneletNetwork, frame: &Frame) -> Result<TrafficGraph> {
    let lanelet_ids: Vec<u64> = network.iter().map(|l| l.id).collect();
    let lanelet_features = network
        .iter()
        .map(|l| [l.length(), l.mean_curvature(), l.width])
        .collect();

    fn edge(source: usize, target: usize, relation: L2lRelation, source_len: f64) -> L2lEdge {
        let mut features = [0.0; L2L_FEATURES];
        features[relation as usize] = 1.0;
        features[4] = source_len;
        L2lEdge { source, target, features }
    }

    let mut l2l = Vec::new();
    for (idx, l) in network.iter().enumerate() {
        let src_len = l.length();
        for &succ in &l.successors {
            let succ_idx = lanelet_ids.binary_search(&succ).expect("validated topology");
            l2l.push(edge(idx, succ_idx, L2lRelation::Successor, src_len));
            // mirrored predecessor edge (succ -> this)
            let succ_len = network.get(succ).unwrap().length();
            l2l.push(edge(succ_idx, idx, L2lRelation::Predecessor, succ_len));
        }
        if let Some(left) = l.adj_left {
            let li = lanelet_ids.binary_search(&left).expect("validated topology");
            l2l.push(edge(idx, li, L2lRelation::AdjacentLeft, src_len));
        }
        if let Some(right) = l.adj_right {
            let ri = lanelet_ids.binary_search(&right).expect("validated topology");
            l2l.push(edge(idx, ri, L2lRelation::AdjacentRight, src_len));
        }
    }

    let mut vehicle_ids = Vec::with_capacity(frame.vehicles.len());
    let mut vehicle_features = Vec::with_capacity(frame.vehicles.len());
    let mut v2l = Vec::with_capacity(frame.vehicles.len());
    for (vi, v) in frame.vehicles.iter().enumerate() {
        let lanelet = network
            .get(v.lanelet)
            .ok_or_else(|| Error::Data(format!("vehicle {} on unknown lanelet {}", v.id, v.lanelet)))?;
        vehicle_ids.push(v.id);
        vehicle_features.push([v.speed, v.accel, v.length, v.width]);
        let centerline = ReferencePath::from_points(lanelet.centerline.clone());
        let center = centerline.point_at(v.s.clamp(0.0, centerline.total_length()))?;
        let (s_proj, lateral) = centerline.project(center);
        let position = (s_proj / lanelet.length()).clamp(0.0, 1.0);
        // Longitudinal-only simulation: vehicle heading equals the
        // centerline tangent, so the difference is zero by construction.
        let heading_diff = 0.0;
        let li = lanelet_ids.binary_search(&v.lanelet).unwrap();
        v2l.push(V2lEdge { vehicle: vi, lanelet: li, features: [position, lateral, heading_diff] });
    }

    let graph = TrafficGraph { vehicle_ids, vehicle_features, lanelet_ids, lanelet_features, v2l, l2l };
    for e in &graph.v2l {
        debug_assert!(e.features.iter().all(|f| f.is_finite()));
    }
    Ok(graph)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimestepLabel {
    pub t: f64,
    /// Merged, disjoint occupied intervals on the reference path, meters.
    pub occupied: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupancyLabels {
    pub horizon: f64,
    pub zeta: f64,
    pub steps: Vec<TimestepLabel>,
}

/// Future path occupancy over `t0 .. t0 + horizon`, `t_steps` timesteps of
/// width `horizon / t_steps` each. A vehicle occupies the path when its
/// projected center lies laterally within half the lanelet width; its
/// footprint is the interval `[s - len/2, s + len/2]` clipped to the path.
/// The ego vehicle never contributes.
pub fn ground_truth_occupancy(
    trace: &ScenarioTrace,
    context: &RouteContext,
    t0: f64,
    horizon: f64,
    t_steps: usize,
    ego_id: Option<u64>,
) -> Result<OccupancyLabels> {
    assert!(t_steps >= 1);
    let dt_label = horizon / t_steps as f64;
    let stride_f = dt_label / trace.dt;
    let stride = stride_f.round() as usize;
    if stride == 0 || (stride_f - stride as f64).abs() > 1e-6 {
        return Err(Error::Range(format!(
            "label step {dt_label} does not align with trace dt {}",
            trace.dt
        )));
    }
    let i0_f = t0 / trace.dt;
    let i0 = i0_f.round() as usize;
    if (i0_f - i0 as f64).abs() > 1e-6 {
        return Err(Error::Range(format!("t0 {t0} does not align with trace dt {}", trace.dt)));
    }
    let last_needed = i0 + stride * (t_steps - 1);
    if last_needed >= trace.frames.len() {
        return Err(Error::Range(format!(
            "horizon needs frame {last_needed}, trace has {}",
            trace.frames.len()
        )));
    }

    let zeta = context.zeta();
    let mut steps = Vec::with_capacity(t_steps);
    for k in 0..t_steps {
        let frame = &trace.frames[i0 + stride * k];
        let mut intervals = Vec::new();
        for v in &frame.vehicles {
            if Some(v.id) == ego_id {
                continue;
            }
            if let Some(iv) = vehicle_footprint_on_path(&trace.network, context, v, zeta) {
                intervals.push(iv);
            }
        }
        steps.push(TimestepLabel { t: k as f64 * dt_label, occupied: merge_intervals(intervals) });
    }
    Ok(OccupancyLabels { horizon, zeta, steps })
}

/// Projects one vehicle onto the reference path; `None` when it does not
/// overlap the path surface.
pub fn vehicle_footprint_on_path(
    network: &LaneletNetwork,
    context: &RouteContext,
    v: &VehicleState,
    zeta: f64,
) -> Option<[f64; 2]> {
    let lanelet = network.get(v.lanelet)?;
    let centerline = ReferencePath::from_points(lanelet.centerline.clone());
    let center = centerline.point_at(v.s.clamp(0.0, centerline.total_length())).ok()?;
    let (s_c, lateral, distance) = context.path.project_with_distance(center);
    // Projection clamps at path endpoints; a vehicle far beyond the route
    // must not alias onto the boundary. Gate on the longitudinal excess.
    let excess2 = (distance * distance - lateral * lateral).max(0.0);
    if excess2 > (v.length / 2.0).powi(2) {
        return None;
    }
    let half_width = path_width_at(network, context, s_c) / 2.0;
    if lateral.abs() > half_width {
        return None;
    }
    let lo = (s_c - v.length / 2.0).max(0.0);
    let hi = (s_c + v.length / 2.0).min(zeta);
    if hi - lo <= 0.0 {
        return None;
    }
    Some([lo, hi])
}

/// Width of the lanelet under the reference path at path arclength `s`.
fn path_width_at(network: &LaneletNetwork, context: &RouteContext, s: f64) -> f64 {
    let mut pos = 0.0;
    for (row, id) in context.context.iter().zip(&context.route) {
        let hi = pos + (row.s_end - row.s_start);
        if s <= hi || id == context.route.last().unwrap() {
            return network.get(*id).map(|l| l.width).unwrap_or(3.5);
        }
        pos = hi;
    }
    3.5
}

pub fn merge_intervals(mut intervals: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    intervals.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut merged: Vec<[f64; 2]> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Splits `[0, zeta]` into occupied segments (topological order) and their
/// complement. Union covers the path exactly; interiors are disjoint.
pub fn complement_segments(occupied: &[[f64; 2]], zeta: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let merged = merge_intervals(occupied.to_vec());
    let mut negative = Vec::with_capacity(merged.len() + 1);
    let mut cursor = 0.0;
    for iv in &merged {
        if iv[0] > cursor {
            negative.push([cursor, iv[0]]);
        }
        cursor = iv[1];
    }
    if cursor < zeta {
        negative.push([cursor, zeta]);
    }
    (merged, negative)
}

/// One training example.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sample {
    pub graph: TrafficGraph,
    pub context: RouteContext,
    pub labels: OccupancyLabels,
}
