//! Segment-wise binary cross entropy between a predicted occupancy field
//! and ground-truth path intervals. Each occupied and free segment is
//! integrated with a trapezoid rule and normalized by its own length, then
//! timesteps are combined with a discounted sum.

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::graph::{complement_segments, OccupancyLabels};
use crate::Result;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    /// Trapezoid sample count per segment (R - 1 panels).
    pub r_samples: usize,
    /// Per-timestep discount factor.
    pub discount: f64,
    /// Predictions are squeezed into [clamp, 1 - clamp] by the affine map
    /// p = clamp + (1 - 2 clamp) o, which bounds the log terms without
    /// killing the gradient the way a hard clamp would.
    pub clamp: f64,
    /// Segments shorter than this are dropped.
    pub min_segment: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { r_samples: 40, discount: 0.99, clamp: 1e-6, min_segment: 1e-9 }
    }
}

/// Precomputed sample locations and weights for one timestep. Weights fold
/// in the trapezoid coefficients, the per-segment normalization, the
/// timestep width, and the discount, so the loss is a plain weighted sum of
/// pointwise log terms.
#[derive(Clone, Debug)]
pub struct TimestepQuad {
    pub t: f64,
    pub points: Vec<f64>,
    /// Weight of -log(o) at each point; zero on free-segment points.
    pub w_pos: Vec<f64>,
    /// Weight of -log(1 - o) at each point; zero on occupied-segment points.
    pub w_neg: Vec<f64>,
}

/// Expands labels into per-timestep quadratures.
pub fn build_quadrature(labels: &OccupancyLabels, cfg: &LossConfig) -> Vec<TimestepQuad> {
    assert!(cfg.r_samples >= 2);
    let t_steps = labels.steps.len();
    let dt = labels.horizon / t_steps as f64;
    let mut out = Vec::with_capacity(t_steps);
    for (k, step) in labels.steps.iter().enumerate() {
        let scale = cfg.discount.powi(k as i32) * dt;
        let (pos, neg) = complement_segments(&step.occupied, labels.zeta);
        let mut points = Vec::new();
        let mut w_pos = Vec::new();
        let mut w_neg = Vec::new();
        let mut push_segment = |seg: &[f64; 2], positive: bool| {
            if seg[1] - seg[0] < cfg.min_segment {
                return;
            }
            let r = cfg.r_samples;
            let h = (seg[1] - seg[0]) / (r - 1) as f64;
            for i in 0..r {
                let trap = if i == 0 || i == r - 1 { 0.5 } else { 1.0 };
                // (1/|seg|) * trap * h = trap / (r - 1): independent of length
                let w = scale * trap / (r - 1) as f64;
                points.push(seg[0] + i as f64 * h);
                w_pos.push(if positive { w } else { 0.0 });
                w_neg.push(if positive { 0.0 } else { w });
            }
        };
        for seg in &pos {
            push_segment(seg, true);
        }
        for seg in &neg {
            push_segment(seg, false);
        }
        out.push(TimestepQuad { t: step.t, points, w_pos, w_neg });
    }
    out
}

/// Loss of a value-level occupancy function over the quadrature.
pub fn total_loss_eval(quad: &[TimestepQuad], cfg: &LossConfig, mut o: impl FnMut(f64, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for q in quad {
        for ((s, wp), wn) in q.points.iter().zip(&q.w_pos).zip(&q.w_neg) {
            let p = cfg.clamp + (1.0 - 2.0 * cfg.clamp) * o(*s, q.t);
            total += wp * -p.ln() + wn * -(1.0 - p).ln();
        }
    }
    total
}

/// Loss on the tape. `occupancy` must return the predicted probability at
/// every point of the given slice for one time value.
pub fn total_loss_tape(
    tape: &mut Tape,
    quad: &[TimestepQuad],
    cfg: &LossConfig,
    mut occupancy: impl FnMut(&mut Tape, &[f64], f64) -> Var,
) -> Result<Var> {
    let mut total = tape.scalar(0.0);
    for q in quad {
        if q.points.is_empty() {
            continue;
        }
        let o = occupancy(tape, &q.points, q.t);
        let gain = tape.scalar(1.0 - 2.0 * cfg.clamp);
        let floor = tape.scalar(cfg.clamp);
        let scaled = tape.mul(o, gain);
        let oc = tape.add(scaled, floor);
        let log_o = tape.log(oc);
        let ones = tape.vector(vec![1.0; q.points.len()]);
        let inv = tape.sub(ones, oc);
        let log_inv = tape.log(inv);
        let wp = tape.vector(q.w_pos.clone());
        let wn = tape.vector(q.w_neg.clone());
        let tp = tape.mul(wp, log_o);
        let tn = tape.mul(wn, log_inv);
        let both = tape.add(tp, tn);
        let sum = tape.sum(both);
        let neg = tape.neg(sum);
        total = tape.add(total, neg);
    }
    tape.numeric_error()?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{decode, occupancy_tape, decode_tape, DecoderConfig, DecoderParams, DecoderVars};
    use crate::graph::TimestepLabel;

    fn labels_one_step(occupied: Vec<[f64; 2]>, zeta: f64) -> OccupancyLabels {
        OccupancyLabels {
            horizon: 1.0,
            zeta,
            steps: vec![TimestepLabel { t: 0.0, occupied }],
        }
    }

    #[test]
    fn constant_half_prediction_gives_log2_per_unit_time() {
        // one occupied segment covering the whole path, one timestep of
        // width 1.0, discount^0 = 1: loss = -ln(0.5) = ln 2
        let labels = labels_one_step(vec![[0.0, 45.0]], 45.0);
        let cfg = LossConfig::default();
        let quad = build_quadrature(&labels, &cfg);
        let loss = total_loss_eval(&quad, &cfg, |_, _| 0.5);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn weights_are_independent_of_segment_length() {
        // two occupied segments of very different lengths, constant wrong
        // prediction: each contributes the same normalized integral
        let short = labels_one_step(vec![[0.0, 0.5]], 45.0);
        let long = labels_one_step(vec![[0.0, 40.0]], 45.0);
        let cfg = LossConfig::default();
        let f = |_: f64, _: f64| 0.2f64;
        let qs = build_quadrature(&short, &cfg);
        let ql = build_quadrature(&long, &cfg);
        let pos = |quad: &[TimestepQuad]| {
            quad[0]
                .points
                .iter()
                .zip(&quad[0].w_pos)
                .map(|(s, w)| w * -f(*s, 0.0).ln())
                .sum::<f64>()
        };
        assert!((pos(&qs) - pos(&ql)).abs() < 1e-12);
    }

    #[test]
    fn discount_applies_per_timestep() {
        let zeta = 10.0;
        let t_steps = 3;
        let labels = OccupancyLabels {
            horizon: 3.0,
            zeta,
            steps: (0..t_steps)
                .map(|k| TimestepLabel { t: k as f64, occupied: vec![[0.0, zeta]] })
                .collect(),
        };
        let cfg = LossConfig { discount: 0.5, ..Default::default() };
        let quad = build_quadrature(&labels, &cfg);
        let loss = total_loss_eval(&quad, &cfg, |_, _| 0.5);
        // dt = 1, sum of 0.5^k * ln 2 for k = 0..3
        let want = (1.0 + 0.5 + 0.25) * std::f64::consts::LN_2;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn good_predictions_beat_bad_ones() {
        let labels = labels_one_step(vec![[10.0, 20.0]], 45.0);
        let cfg = LossConfig::default();
        let quad = build_quadrature(&labels, &cfg);
        let sharp =
            |s: f64, _: f64| -> f64 { if (10.0..=20.0).contains(&s) { 0.95 } else { 0.05 } };
        let flipped =
            |s: f64, _: f64| -> f64 { if (10.0..=20.0).contains(&s) { 0.05 } else { 0.95 } };
        let good = total_loss_eval(&quad, &cfg, sharp);
        let bad = total_loss_eval(&quad, &cfg, flipped);
        assert!(good < bad);
        // segment endpoints land on the 10/20 boundary where the sharp
        // predictor is wrong for the free side, so the floor is not ln(1/0.95)
        assert!(good < 0.3);
    }

    #[test]
    fn empty_occupancy_uses_only_negative_term() {
        let labels = labels_one_step(vec![], 45.0);
        let cfg = LossConfig::default();
        let quad = build_quadrature(&labels, &cfg);
        assert!(quad[0].w_pos.iter().all(|w| *w == 0.0));
        let loss = total_loss_eval(&quad, &cfg, |_, _| 0.1);
        let p = cfg.clamp + (1.0 - 2.0 * cfg.clamp) * 0.1;
        assert!((loss - -((1.0 - p).ln())).abs() < 1e-12);
    }

    #[test]
    fn tape_loss_matches_value_loss_for_decoder_field() {
        let dcfg = DecoderConfig { hidden: 8, latent: 4, n_vehicles: 3, ..Default::default() };
        let params = DecoderParams::init(dcfg, 31);
        let z = vec![0.4, -0.1, 0.6, -0.9];
        let field = decode(&params, &z, 45.0).unwrap();

        let labels = OccupancyLabels {
            horizon: 2.4,
            zeta: 45.0,
            steps: (0..6)
                .map(|k| TimestepLabel {
                    t: k as f64 * 0.4,
                    occupied: vec![[5.0 + k as f64, 12.0 + k as f64], [30.0, 36.0]],
                })
                .collect(),
        };
        let cfg = LossConfig { r_samples: 7, ..Default::default() };
        let quad = build_quadrature(&labels, &cfg);
        let want = total_loss_eval(&quad, &cfg, |s, t| field.occupancy(s, t));

        let mut tape = Tape::new();
        let vars = DecoderVars::register(&mut tape, &params);
        let zv = tape.vector(z.clone());
        let decoded = decode_tape(&mut tape, &vars, zv, 45.0);
        let loss = total_loss_tape(&mut tape, &quad, &cfg, |tape, pts, t| {
            occupancy_tape(tape, &dcfg, &decoded, pts, t)
        })
        .unwrap();
        let got = tape.value(loss).item();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn quadrature_refinement_converges() {
        let dcfg = DecoderConfig { hidden: 8, latent: 4, n_vehicles: 3, ..Default::default() };
        let params = DecoderParams::init(dcfg, 12);
        let field = decode(&params, &[0.2, 0.5, -0.3, 0.8], 45.0).unwrap();
        let labels = OccupancyLabels {
            horizon: 2.4,
            zeta: 45.0,
            steps: (0..6)
                .map(|k| TimestepLabel { t: k as f64 * 0.4, occupied: vec![[8.0, 21.0]] })
                .collect(),
        };
        let coarse_cfg = LossConfig { r_samples: 40, ..Default::default() };
        let fine_cfg = LossConfig { r_samples: 800, ..Default::default() };
        let coarse = total_loss_eval(&build_quadrature(&labels, &coarse_cfg), &coarse_cfg, |s, t| {
            field.occupancy(s, t)
        });
        let fine = total_loss_eval(&build_quadrature(&labels, &fine_cfg), &fine_cfg, |s, t| {
            field.occupancy(s, t)
        });
        assert!((coarse - fine).abs() / fine.abs() < 1e-3, "{coarse} vs {fine}");
    }
}
