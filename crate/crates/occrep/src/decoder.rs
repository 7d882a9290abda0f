//! Occupancy decoder: an LSTM conditioned on the latent route descriptor
//! emits a fixed set of virtual vehicles, each a bounded 6-parameter tuple
//! [length, existence base, existence shift, initial position, diffusion,
//! drift]. Their footprints combine into a dense occupancy field over the
//! ego path and prediction horizon.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{LstmVars, Tape, Tensor, Var};
use crate::encoder::xavier;
use crate::erf::erf;
use crate::Result;

pub const ETA_PARAMS: usize = 6;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub latent: usize,
    pub n_vehicles: usize,
    /// Prediction horizon seconds.
    pub horizon: f64,
    /// Temporal mask steepness.
    pub tau_r: f64,
    /// Temporal mask margin.
    pub tau_c: f64,
    /// Physical time is clamped below by this before entering the position
    /// distribution, keeping the variance positive at t = 0.
    pub t_clamp: f64,
    pub length_bounds: [f64; 2],
    pub exist_base_bounds: [f64; 2],
    pub exist_shift_bounds: [f64; 2],
    /// Initial-position bounds relative to the path: [lo - margin, zeta + margin].
    pub pos_margin: f64,
    pub diffusion_bounds: [f64; 2],
    pub drift_bounds: [f64; 2],
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: 256,
            latent: 32,
            n_vehicles: 12,
            horizon: 2.4,
            tau_r: 6.0,
            tau_c: 0.7,
            t_clamp: 1e-3,
            length_bounds: [2.0, 12.0],
            exist_base_bounds: [0.0, 1.0],
            exist_shift_bounds: [0.0, 1.0],
            pos_margin: 10.0,
            diffusion_bounds: [0.05, 10.0],
            drift_bounds: [-5.0, 25.0],
        }
    }
}

impl DecoderConfig {
    /// [lo, hi] per eta component for a path of length `zeta`.
    pub fn bounds(&self, zeta: f64) -> [[f64; 2]; ETA_PARAMS] {
        [
            self.length_bounds,
            self.exist_base_bounds,
            self.exist_shift_bounds,
            [-self.pos_margin, zeta + self.pos_margin],
            self.diffusion_bounds,
            self.drift_bounds,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    pub init_h_w: Tensor,
    pub init_h_b: Tensor,
    pub init_c_w: Tensor,
    pub init_c_b: Tensor,
    pub lstm_w_ih: Tensor,
    pub lstm_w_hh: Tensor,
    pub lstm_bias: Tensor,
    pub theta_q_w: Tensor,
    pub theta_q_b: Tensor,
}

impl DecoderParams {
    pub fn init(config: DecoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6465_636f);
        let h = config.hidden;
        let z = config.latent;
        DecoderParams {
            config,
            init_h_w: xavier(&mut rng, h, z),
            init_h_b: Tensor::zeros(&[h]),
            init_c_w: xavier(&mut rng, h, z),
            init_c_b: Tensor::zeros(&[h]),
            lstm_w_ih: xavier(&mut rng, 4 * h, 1),
            lstm_w_hh: xavier(&mut rng, 4 * h, h),
            lstm_bias: Tensor::zeros(&[4 * h]),
            theta_q_w: xavier(&mut rng, ETA_PARAMS, h),
            theta_q_b: Tensor::zeros(&[ETA_PARAMS]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("dec.init_h_w".to_string(), &self.init_h_w),
            ("dec.init_h_b".to_string(), &self.init_h_b),
            ("dec.init_c_w".to_string(), &self.init_c_w),
            ("dec.init_c_b".to_string(), &self.init_c_b),
            ("dec.lstm_w_ih".to_string(), &self.lstm_w_ih),
            ("dec.lstm_w_hh".to_string(), &self.lstm_w_hh),
            ("dec.lstm_bias".to_string(), &self.lstm_bias),
            ("dec.theta_q_w".to_string(), &self.theta_q_w),
            ("dec.theta_q_b".to_string(), &self.theta_q_b),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("dec.init_h_w".to_string(), &mut self.init_h_w),
            ("dec.init_h_b".to_string(), &mut self.init_h_b),
            ("dec.init_c_w".to_string(), &mut self.init_c_w),
            ("dec.init_c_b".to_string(), &mut self.init_c_b),
            ("dec.lstm_w_ih".to_string(), &mut self.lstm_w_ih),
            ("dec.lstm_w_hh".to_string(), &mut self.lstm_w_hh),
            ("dec.lstm_bias".to_string(), &mut self.lstm_bias),
            ("dec.theta_q_w".to_string(), &mut self.theta_q_w),
            ("dec.theta_q_b".to_string(), &mut self.theta_q_b),
        ]
    }
}

pub struct DecoderVars {
    pub config: DecoderConfig,
    pub init_h_w: Var,
    pub init_h_b: Var,
    pub init_c_w: Var,
    pub init_c_b: Var,
    pub lstm: LstmVars,
    pub theta_q_w: Var,
    pub theta_q_b: Var,
}

impl DecoderVars {
    pub fn register(tape: &mut Tape, p: &DecoderParams) -> Self {
        DecoderVars {
            config: p.config,
            init_h_w: tape.leaf(p.init_h_w.clone()),
            init_h_b: tape.leaf(p.init_h_b.clone()),
            init_c_w: tape.leaf(p.init_c_w.clone()),
            init_c_b: tape.leaf(p.init_c_b.clone()),
            lstm: LstmVars {
                w_ih: tape.leaf(p.lstm_w_ih.clone()),
                w_hh: tape.leaf(p.lstm_w_hh.clone()),
                bias: tape.leaf(p.lstm_bias.clone()),
            },
            theta_q_w: tape.leaf(p.theta_q_w.clone()),
            theta_q_b: tape.leaf(p.theta_q_b.clone()),
        }
    }

    pub fn named(&self) -> Vec<(String, Var)> {
        vec![
            ("dec.init_h_w".to_string(), self.init_h_w),
            ("dec.init_h_b".to_string(), self.init_h_b),
            ("dec.init_c_w".to_string(), self.init_c_w),
            ("dec.init_c_b".to_string(), self.init_c_b),
            ("dec.lstm_w_ih".to_string(), self.lstm.w_ih),
            ("dec.lstm_w_hh".to_string(), self.lstm.w_hh),
            ("dec.lstm_bias".to_string(), self.lstm.bias),
            ("dec.theta_q_w".to_string(), self.theta_q_w),
            ("dec.theta_q_b".to_string(), self.theta_q_b),
        ]
    }
}

/// One decoded virtual vehicle. Fields are the bounded eta parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VirtualVehicle {
    pub length: f64,
    pub exist_base: f64,
    pub exist_shift: f64,
    pub pos0: f64,
    pub diffusion: f64,
    pub drift: f64,
}

/// Dense probabilistic occupancy over `[0, zeta] x [0, horizon]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupancyField {
    pub vehicles: Vec<VirtualVehicle>,
    pub zeta: f64,
    pub horizon: f64,
    pub tau_r: f64,
    pub tau_c: f64,
    pub t_clamp: f64,
}

impl OccupancyField {
    /// Gaussian position density of one vehicle: mean pos0 + drift*t,
    /// variance 2*diffusion*t.
    pub fn position_pdf(&self, q: &VirtualVehicle, s: f64, t: f64) -> f64 {
        let t = t.max(self.t_clamp);
        let mean = q.pos0 + q.drift * t;
        let var = 2.0 * q.diffusion * t;
        (-(s - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    pub fn position_cdf(&self, q: &VirtualVehicle, s: f64, t: f64) -> f64 {
        let t = t.max(self.t_clamp);
        let mean = q.pos0 + q.drift * t;
        0.5 * (1.0 + erf((s - mean) / (2.0 * (q.diffusion * t).sqrt())))
    }

    /// Existence probability at physical time t: baseline scaled by a
    /// product of two shifted sigmoids in normalized time.
    pub fn existence(&self, q: &VirtualVehicle, t: f64) -> f64 {
        let tn = t / self.horizon;
        let shift = q.exist_shift * (1.0 + self.tau_c);
        let m_l = crate::diff::sigmoid(self.tau_r * (tn - shift + self.tau_c));
        let m_r = crate::diff::sigmoid(self.tau_r * (1.0 - tn + shift + self.tau_c));
        q.exist_base * m_l * m_r
    }

    /// Probability that vehicle q covers path position s at time t.
    pub fn footprint(&self, q: &VirtualVehicle, s: f64, t: f64) -> f64 {
        let span = self.position_cdf(q, s + q.length / 2.0, t)
            - self.position_cdf(q, s - q.length / 2.0, t);
        self.existence(q, t) * span
    }

    /// Occupancy probability: union over independent vehicles,
    /// 1 - prod(1 - o_q).
    pub fn occupancy(&self, s: f64, t: f64) -> f64 {
        let mut free = 1.0;
        for q in &self.vehicles {
            free *= 1.0 - self.footprint(q, s, t);
        }
        1.0 - free
    }
}

/// Decoded eta parameters as tape variables, one entry per virtual vehicle.
pub struct DecodedVars {
    /// [length, exist_base, exist_shift, pos0, diffusion, drift]
    pub vehicles: Vec<[Var; ETA_PARAMS]>,
}

/// Unrolls the LSTM for `n_vehicles` steps on the tape. Inputs are zero;
/// all conditioning enters through the initial state derived from z.
pub fn decode_tape(tape: &mut Tape, vars: &DecoderVars, z: Var, zeta: f64) -> DecodedVars {
    let cfg = vars.config;
    let bounds = cfg.bounds(zeta);
    let h0_pre = tape.affine(vars.init_h_w, z, vars.init_h_b);
    let c0_pre = tape.affine(vars.init_c_w, z, vars.init_c_b);
    let mut h = tape.tanh(h0_pre);
    let mut c = tape.tanh(c0_pre);
    let x = tape.vector(vec![0.0]);
    let mut vehicles = Vec::with_capacity(cfg.n_vehicles);
    for _ in 0..cfg.n_vehicles {
        let (h_next, c_next) = crate::diff::lstm_cell(tape, x, h, c, vars.lstm);
        h = h_next;
        c = c_next;
        let raw = tape.affine(vars.theta_q_w, h, vars.theta_q_b);
        let squashed = tape.sigmoid(raw);
        let mut eta = [Var::default(); ETA_PARAMS];
        for (i, e) in eta.iter_mut().enumerate() {
            let [lo, hi] = bounds[i];
            let u = tape.slice(squashed, i, 1);
            let scale = tape.scalar(hi - lo);
            let offset = tape.scalar(lo);
            let scaled = tape.mul(u, scale);
            let bounded = tape.add(scaled, offset);
            *e = tape.reshape(bounded, &[]);
        }
        vehicles.push(eta);
    }
    DecodedVars { vehicles }
}

/// Value-level decode on a scratch tape.
pub fn decode(params: &DecoderParams, z: &[f64], zeta: f64) -> Result<OccupancyField> {
    let mut tape = Tape::new();
    let vars = DecoderVars::register(&mut tape, params);
    let zv = tape.vector(z.to_vec());
    let decoded = decode_tape(&mut tape, &vars, zv, zeta);
    tape.numeric_error()?;
    let vehicles = decoded
        .vehicles
        .iter()
        .map(|eta| VirtualVehicle {
            length: tape.value(eta[0]).item(),
            exist_base: tape.value(eta[1]).item(),
            exist_shift: tape.value(eta[2]).item(),
            pos0: tape.value(eta[3]).item(),
            diffusion: tape.value(eta[4]).item(),
            drift: tape.value(eta[5]).item(),
        })
        .collect();
    Ok(OccupancyField {
        vehicles,
        zeta,
        horizon: params.config.horizon,
        tau_r: params.config.tau_r,
        tau_c: params.config.tau_c,
        t_clamp: params.config.t_clamp,
    })
}

/// Tape-level footprint of one vehicle over a fixed set of path positions at
/// physical time `t`: existence(t) * (CDF(s + len/2) - CDF(s - len/2)).
pub fn footprint_tape(
    tape: &mut Tape,
    cfg: &DecoderConfig,
    eta: &[Var; ETA_PARAMS],
    points: &[f64],
    t: f64,
) -> Var {
    let n = points.len();
    let t_c = t.max(cfg.t_clamp);

    // existence mask in normalized time
    let tn = t / cfg.horizon;
    let shift_scale = tape.scalar(1.0 + cfg.tau_c);
    let shift = tape.mul(eta[2], shift_scale);
    let tn_v = tape.scalar(tn + cfg.tau_c);
    let l_arg0 = tape.sub(tn_v, shift);
    let rate = tape.scalar(cfg.tau_r);
    let l_arg = tape.mul(l_arg0, rate);
    let m_l = tape.sigmoid(l_arg);
    let r_base = tape.scalar(1.0 - tn + cfg.tau_c);
    let r_arg0 = tape.add(r_base, shift);
    let r_arg = tape.mul(r_arg0, rate);
    let m_r = tape.sigmoid(r_arg);
    let mask = tape.mul(m_l, m_r);
    let exist = tape.mul(eta[1], mask);

    // CDF difference across the vehicle footprint at every sample point
    let s_vec = tape.vector(points.to_vec());
    let half = tape.scalar(0.5);
    let half_len = tape.mul(eta[0], half);
    let t_v = tape.scalar(t_c);
    let drift_t = tape.mul(eta[5], t_v);
    let mean = tape.add(eta[3], drift_t);
    let var_in = tape.mul(eta[4], t_v);
    let sd = tape.sqrt(var_in);
    let two = tape.scalar(2.0);
    let denom = tape.mul(sd, two);

    let mean_b = tape.broadcast(mean, n);
    let centered = tape.sub(s_vec, mean_b);
    let hi_in = tape.add(centered, half_len);
    let lo_in = tape.sub(centered, half_len);
    let denom_b = tape.broadcast(denom, n);
    let hi_arg = tape.div(hi_in, denom_b);
    let lo_arg = tape.div(lo_in, denom_b);
    let erf_hi = tape.erf(hi_arg);
    let erf_lo = tape.erf(lo_arg);
    let diff = tape.sub(erf_hi, erf_lo);
    let half_b = tape.broadcast(half, n);
    let span = tape.mul(diff, half_b);

    let exist_b = tape.broadcast(exist, n);
    tape.mul(exist_b, span)
}

/// Tape-level occupancy union over all vehicles at fixed sample points.
pub fn occupancy_tape(
    tape: &mut Tape,
    cfg: &DecoderConfig,
    decoded: &DecodedVars,
    points: &[f64],
    t: f64,
) -> Var {
    let n = points.len();
    let one = tape.vector(vec![1.0; n]);
    let mut free = one;
    for eta in &decoded.vehicles {
        let fp = footprint_tape(tape, cfg, eta, points, t);
        let left = tape.sub(one, fp);
        free = tape.mul(free, left);
    }
    tape.sub(one, free)
}
