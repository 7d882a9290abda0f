//! Graph encoder: message passing over the heterogeneous traffic graph
//! followed by an attention readout over the ego route, producing a latent
//! vector conditioned on the ego vehicle's intended path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::graph::TrafficGraph;
use crate::lane::RouteContext;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub latent: usize,
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden: 256, latent: 32, layers: 4 }
    }
}

/// Input widths, fixed by the graph extraction feature layout.
const X_VEHICLE: usize = crate::graph::VEHICLE_FEATURES;
const X_LANELET: usize = crate::graph::LANELET_FEATURES;
const X_V2L: usize = crate::graph::V2L_FEATURES;
const X_L2L: usize = crate::graph::L2L_FEATURES;
const X_CONTEXT: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// H x 3 lanelet feature embedding.
    pub theta_l_w: Tensor,
    pub theta_l_b: Tensor,
    /// H x 10 vehicle-to-lanelet message map, input [x_vehicle, x_lanelet, x_edge].
    pub theta_v2l_w: Tensor,
    pub theta_v2l_b: Tensor,
    /// Per layer: H x (2H + 5) lanelet-to-lanelet message map.
    pub theta_l2l_w: Vec<Tensor>,
    pub theta_l2l_b: Vec<Tensor>,
    /// 1 x 4 route attention score over context rows.
    pub theta_c_w: Tensor,
    pub theta_c_b: Tensor,
    /// Z x H latent projection.
    pub theta_z_w: Tensor,
    pub theta_z_b: Tensor,
}

pub(crate) fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f);
        let h = config.hidden;
        let mut theta_l2l_w = Vec::with_capacity(config.layers);
        let mut theta_l2l_b = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            theta_l2l_w.push(xavier(&mut rng, h, 2 * h + X_L2L));
            theta_l2l_b.push(Tensor::zeros(&[h]));
        }
        EncoderParams {
            config,
            theta_l_w: xavier(&mut rng, h, X_LANELET),
            theta_l_b: Tensor::zeros(&[h]),
            theta_v2l_w: xavier(&mut rng, h, X_VEHICLE + X_LANELET + X_V2L),
            theta_v2l_b: Tensor::zeros(&[h]),
            theta_l2l_w,
            theta_l2l_b,
            theta_c_w: xavier(&mut rng, 1, X_CONTEXT),
            theta_c_b: Tensor::zeros(&[1]),
            theta_z_w: xavier(&mut rng, config.latent, h),
            theta_z_b: Tensor::zeros(&[config.latent]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("enc.theta_l_w".to_string(), &self.theta_l_w),
            ("enc.theta_l_b".to_string(), &self.theta_l_b),
            ("enc.theta_v2l_w".to_string(), &self.theta_v2l_w),
            ("enc.theta_v2l_b".to_string(), &self.theta_v2l_b),
            ("enc.theta_c_w".to_string(), &self.theta_c_w),
            ("enc.theta_c_b".to_string(), &self.theta_c_b),
            ("enc.theta_z_w".to_string(), &self.theta_z_w),
            ("enc.theta_z_b".to_string(), &self.theta_z_b),
        ];
        for (i, (w, b)) in self.theta_l2l_w.iter().zip(&self.theta_l2l_b).enumerate() {
            out.push((format!("enc.theta_l2l_w.{i}"), w));
            out.push((format!("enc.theta_l2l_b.{i}"), b));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("enc.theta_l_w".to_string(), &mut self.theta_l_w),
            ("enc.theta_l_b".to_string(), &mut self.theta_l_b),
            ("enc.theta_v2l_w".to_string(), &mut self.theta_v2l_w),
            ("enc.theta_v2l_b".to_string(), &mut self.theta_v2l_b),
            ("enc.theta_c_w".to_string(), &mut self.theta_c_w),
            ("enc.theta_c_b".to_string(), &mut self.theta_c_b),
            ("enc.theta_z_w".to_string(), &mut self.theta_z_w),
            ("enc.theta_z_b".to_string(), &mut self.theta_z_b),
        ];
        for (i, (w, b)) in self.theta_l2l_w.iter_mut().zip(self.theta_l2l_b.iter_mut()).enumerate()
        {
            out.push((format!("enc.theta_l2l_w.{i}"), w));
            out.push((format!("enc.theta_l2l_b.{i}"), b));
        }
        out
    }
}

/// Tape handles for the encoder parameters.
pub struct EncoderVars {
    pub config: EncoderConfig,
    pub theta_l_w: Var,
    pub theta_l_b: Var,
    pub theta_v2l_w: Var,
    pub theta_v2l_b: Var,
    pub theta_l2l_w: Vec<Var>,
    pub theta_l2l_b: Vec<Var>,
    pub theta_c_w: Var,
    pub theta_c_b: Var,
    pub theta_z_w: Var,
    pub theta_z_b: Var,
}

impl EncoderVars {
    pub fn register(tape: &mut Tape, p: &EncoderParams) -> Self {
        EncoderVars {
            config: p.config,
            theta_l_w: tape.leaf(p.theta_l_w.clone()),
            theta_l_b: tape.leaf(p.theta_l_b.clone()),
            theta_v2l_w: tape.leaf(p.theta_v2l_w.clone()),
            theta_v2l_b: tape.leaf(p.theta_v2l_b.clone()),
            theta_l2l_w: p.theta_l2l_w.iter().map(|t| tape.leaf(t.clone())).collect(),
            theta_l2l_b: p.theta_l2l_b.iter().map(|t| tape.leaf(t.clone())).collect(),
            theta_c_w: tape.leaf(p.theta_c_w.clone()),
            theta_c_b: tape.leaf(p.theta_c_b.clone()),
            theta_z_w: tape.leaf(p.theta_z_w.clone()),
            theta_z_b: tape.leaf(p.theta_z_b.clone()),
        }
    }

    /// Same order as [`EncoderParams::named`].
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = vec![
            ("enc.theta_l_w".to_string(), self.theta_l_w),
            ("enc.theta_l_b".to_string(), self.theta_l_b),
            ("enc.theta_v2l_w".to_string(), self.theta_v2l_w),
            ("enc.theta_v2l_b".to_string(), self.theta_v2l_b),
            ("enc.theta_c_w".to_string(), self.theta_c_w),
            ("enc.theta_c_b".to_string(), self.theta_c_b),
            ("enc.theta_z_w".to_string(), self.theta_z_w),
            ("enc.theta_z_b".to_string(), self.theta_z_b),
        ];
        for (i, (w, b)) in self.theta_l2l_w.iter().zip(&self.theta_l2l_b).enumerate() {
            out.push((format!("enc.theta_l2l_w.{i}"), *w));
            out.push((format!("enc.theta_l2l_b.{i}"), *b));
        }
        out
    }
}

pub struct EncoderOutput {
    /// Latent route descriptor, length Z.
    pub z: Var,
    /// Route attention weights, one per context row, sums to 1.
    pub attention: Var,
}

/// Runs the encoder on the tape. Fails when a route lanelet is missing from
/// the graph.
pub fn encode(
    tape: &mut Tape,
    vars: &EncoderVars,
    graph: &TrafficGraph,
    context: &RouteContext,
) -> Result<EncoderOutput> {
    let h = vars.config.hidden;
    let n_lanelets = graph.lanelet_ids.len();

    let lanelet_x: Vec<Var> =
        graph.lanelet_features.iter().map(|f| tape.vector(f.to_vec())).collect();
    let vehicle_x: Vec<Var> =
        graph.vehicle_features.iter().map(|f| tape.vector(f.to_vec())).collect();

    // initial state: embedded lanelet features plus max-aggregated messages
    // from vehicles on the lanelet
    let mut state: Vec<Var> = Vec::with_capacity(n_lanelets);
    let mut incoming_v2l: Vec<Vec<Var>> = vec![Vec::new(); n_lanelets];
    for e in &graph.v2l {
        let edge_x = tape.vector(e.features.to_vec());
        let input = tape.concat(&[vehicle_x[e.vehicle], lanelet_x[e.lanelet], edge_x]);
        let msg = tape.affine(vars.theta_v2l_w, input, vars.theta_v2l_b);
        incoming_v2l[e.lanelet].push(msg);
    }
    for (j, x) in lanelet_x.iter().enumerate() {
        let own = tape.affine(vars.theta_l_w, *x, vars.theta_l_b);
        let pre = match aggregate_max(tape, &incoming_v2l[j]) {
            Some(agg) => tape.add(own, agg),
            None => own,
        };
        state.push(tape.tanh(pre));
    }

    // message-passing layers over lanelet adjacency with residual update
    for layer in 0..vars.config.layers {
        let w = vars.theta_l2l_w[layer];
        let b = vars.theta_l2l_b[layer];
        let mut incoming: Vec<Vec<Var>> = vec![Vec::new(); n_lanelets];
        for e in &graph.l2l {
            let edge_x = tape.vector(e.features.to_vec());
            let input = tape.concat(&[state[e.source], state[e.target], edge_x]);
            let msg = tape.affine(w, input, b);
            incoming[e.target].push(msg);
        }
        let mut next = Vec::with_capacity(n_lanelets);
        for (j, s) in state.iter().enumerate() {
            let pre = match aggregate_max(tape, &incoming[j]) {
                Some(agg) => tape.add(*s, agg),
                None => *s,
            };
            next.push(tape.tanh(pre));
        }
        state = next;
    }

    // attention readout over the route's context rows
    let mut scores = Vec::with_capacity(context.context.len());
    let mut route_state = Vec::with_capacity(context.context.len());
    for (row, id) in context.context.iter().zip(&context.route) {
        let idx = graph
            .lanelet_index(*id)
            .ok_or_else(|| Error::Data(format!("route lanelet {id} missing from graph")))?;
        let row_x = tape.vector(row.as_array().to_vec());
        let score = tape.affine(vars.theta_c_w, row_x, vars.theta_c_b);
        scores.push(score);
        route_state.push(state[idx]);
    }
    let score_vec = tape.concat(&scores);
    let attention = tape.softmax(score_vec);
    let mut pooled: Option<Var> = None;
    for (j, s) in route_state.iter().enumerate() {
        let a_j = tape.slice(attention, j, 1);
        let a_b = tape.broadcast(a_j, h);
        let term = tape.mul(a_b, *s);
        pooled = Some(match pooled {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    let pooled = pooled.ok_or_else(|| Error::Data("empty route context".to_string()))?;
    let z_pre = tape.affine(vars.theta_z_w, pooled, vars.theta_z_b);
    let z = tape.tanh(z_pre);
    Ok(EncoderOutput { z, attention })
}

fn aggregate_max(tape: &mut Tape, msgs: &[Var]) -> Option<Var> {
    let mut it = msgs.iter();
    let first = *it.next()?;
    Some(it.fold(first, |acc, m| tape.vmax(acc, *m)))
}

/// Convenience wrapper: fresh tape, returns latent values and attention.
pub fn encode_values(
    params: &EncoderParams,
    graph: &TrafficGraph,
    context: &RouteContext,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, params);
    let out = encode(&mut tape, &vars, graph, context)?;
    tape.numeric_error()?;
    Ok((tape.value(out.z).data().to_vec(), tape.value(out.attention).data().to_vec()))
}
