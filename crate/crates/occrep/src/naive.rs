//! Baseline decoder: a plain MLP that maps the latent vector plus a
//! normalized query point (s / zeta, t / horizon) straight to an occupancy
//! probability, with no structural prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::encoder::xavier;
use crate::Result;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NaiveConfig {
    pub latent: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub horizon: f64,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        NaiveConfig { latent: 32, hidden1: 256, hidden2: 128, horizon: 2.4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NaiveParams {
    pub config: NaiveConfig,
    /// First layer split by input block: latent, position, time.
    pub w1_z: Tensor,
    pub w1_s: Tensor,
    pub w1_t: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl NaiveParams {
    pub fn init(config: NaiveConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e61_6976);
        let h1 = config.hidden1;
        let h2 = config.hidden2;
        let fan_in = config.latent + 2;
        let a1 = (6.0 / (fan_in + h1) as f64).sqrt();
        let mut col = |rows: usize| {
            Tensor::vector((0..rows).map(|_| rng.gen_range(-a1..a1)).collect())
        };
        let w1_s = col(h1);
        let w1_t = col(h1);
        NaiveParams {
            config,
            w1_z: xavier(&mut rng, h1, config.latent),
            w1_s,
            w1_t,
            b1: Tensor::zeros(&[h1]),
            w2: xavier(&mut rng, h2, h1),
            b2: Tensor::zeros(&[h2]),
            w3: xavier(&mut rng, 1, h2),
            b3: Tensor::zeros(&[1]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("naive.w1_z".to_string(), &self.w1_z),
            ("naive.w1_s".to_string(), &self.w1_s),
            ("naive.w1_t".to_string(), &self.w1_t),
            ("naive.b1".to_string(), &self.b1),
            ("naive.w2".to_string(), &self.w2),
            ("naive.b2".to_string(), &self.b2),
            ("naive.w3".to_string(), &self.w3),
            ("naive.b3".to_string(), &self.b3),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("naive.w1_z".to_string(), &mut self.w1_z),
            ("naive.w1_s".to_string(), &mut self.w1_s),
            ("naive.w1_t".to_string(), &mut self.w1_t),
            ("naive.b1".to_string(), &mut self.b1),
            ("naive.w2".to_string(), &mut self.w2),
            ("naive.b2".to_string(), &mut self.b2),
            ("naive.w3".to_string(), &mut self.w3),
            ("naive.b3".to_string(), &mut self.b3),
        ]
    }
}

pub struct NaiveVars {
    pub config: NaiveConfig,
    pub w1_z: Var,
    pub w1_s: Var,
    pub w1_t: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

impl NaiveVars {
    pub fn register(tape: &mut Tape, p: &NaiveParams) -> Self {
        NaiveVars {
            config: p.config,
            w1_z: tape.leaf(p.w1_z.clone()),
            w1_s: tape.leaf(p.w1_s.clone()),
            w1_t: tape.leaf(p.w1_t.clone()),
            b1: tape.leaf(p.b1.clone()),
            w2: tape.leaf(p.w2.clone()),
            b2: tape.leaf(p.b2.clone()),
            w3: tape.leaf(p.w3.clone()),
            b3: tape.leaf(p.b3.clone()),
        }
    }

    pub fn named(&self) -> Vec<(String, Var)> {
        vec![
            ("naive.w1_z".to_string(), self.w1_z),
            ("naive.w1_s".to_string(), self.w1_s),
            ("naive.w1_t".to_string(), self.w1_t),
            ("naive.b1".to_string(), self.b1),
            ("naive.w2".to_string(), self.w2),
            ("naive.b2".to_string(), self.b2),
            ("naive.w3".to_string(), self.w3),
            ("naive.b3".to_string(), self.b3),
        ]
    }
}

/// Occupancy at every `points[i]` for one time slice, on the tape. The
/// z- and t-dependent part of the first layer is shared across points; only
/// the position column varies per row.
pub fn occupancy_tape(
    tape: &mut Tape,
    vars: &NaiveVars,
    z: Var,
    points: &[f64],
    t: f64,
    zeta: f64,
) -> Var {
    let n = points.len();
    let tn = t / vars.config.horizon;
    let zpart = tape.matmul(vars.w1_z, z);
    let tn_s = tape.scalar(tn);
    let tpart = tape.mul(vars.w1_t, tn_s);
    let zt = tape.add(zpart, tpart);
    let base = tape.add(zt, vars.b1);
    let ones = tape.vector(vec![1.0; n]);
    let base_rows = tape.outer(ones, base);
    let s_norm = tape.vector(points.iter().map(|s| s / zeta).collect());
    let s_rows = tape.outer(s_norm, vars.w1_s);
    let pre1 = tape.add(base_rows, s_rows);
    let h1 = tape.tanh(pre1);
    let w2t = tape.transpose(vars.w2);
    let mm2 = tape.matmul(h1, w2t);
    let pre2 = tape.add_row_broadcast(mm2, vars.b2);
    let h2 = tape.tanh(pre2);
    let w3t = tape.transpose(vars.w3);
    let mm3 = tape.matmul(h2, w3t);
    let pre3 = tape.add_row_broadcast(mm3, vars.b3);
    let flat = tape.reshape(pre3, &[n]);
    tape.sigmoid(flat)
}

/// Value-level occupancy for a grid of query points.
pub fn occupancy_values(
    params: &NaiveParams,
    z: &[f64],
    points: &[f64],
    t: f64,
    zeta: f64,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = NaiveVars::register(&mut tape, params);
    let zv = tape.vector(z.to_vec());
    let o = occupancy_tape(&mut tape, &vars, zv, points, t, zeta);
    tape.numeric_error()?;
    Ok(tape.value(o).data().to_vec())
}

/// Scalar reference evaluation used to cross-check the batched tape path.
pub fn occupancy_scalar(params: &NaiveParams, z: &[f64], s: f64, t: f64, zeta: f64) -> f64 {
    let cfg = params.config;
    let sn = s / zeta;
    let tn = t / cfg.horizon;
    let h1: Vec<f64> = (0..cfg.hidden1)
        .map(|i| {
            let mut acc = params.b1.data()[i];
            for (j, zj) in z.iter().enumerate() {
                acc += params.w1_z.data()[i * cfg.latent + j] * zj;
            }
            acc += params.w1_s.data()[i] * sn + params.w1_t.data()[i] * tn;
            acc.tanh()
        })
        .collect();
    let h2: Vec<f64> = (0..cfg.hidden2)
        .map(|i| {
            let mut acc = params.b2.data()[i];
            for (j, hj) in h1.iter().enumerate() {
                acc += params.w2.data()[i * cfg.hidden1 + j] * hj;
            }
            acc.tanh()
        })
        .collect();
    let mut out = params.b3.data()[0];
    for (j, hj) in h2.iter().enumerate() {
        out += params.w3.data()[j] * hj;
    }
    crate::diff::sigmoid(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NaiveConfig {
        NaiveConfig { latent: 4, hidden1: 8, hidden2: 6, horizon: 2.4 }
    }

    #[test]
    fn batched_matches_scalar_reference() {
        let params = NaiveParams::init(small(), 21);
        let z = vec![0.2, -0.5, 0.9, 0.0];
        let points: Vec<f64> = (0..=9).map(|i| i as f64 * 5.0).collect();
        for t in [0.0, 1.1, 2.4] {
            let got = occupancy_values(&params, &z, &points, t, 45.0).unwrap();
            for (s, g) in points.iter().zip(&got) {
                let want = occupancy_scalar(&params, &z, *s, t, 45.0);
                assert!((g - want).abs() < 1e-12, "s={s} t={t}");
            }
        }
    }

    #[test]
    fn outputs_are_probabilities() {
        let params = NaiveParams::init(small(), 4);
        let z = vec![1.0, -1.0, 0.5, -0.5];
        let points: Vec<f64> = (0..45).map(|i| i as f64).collect();
        let o = occupancy_values(&params, &z, &points, 0.8, 45.0).unwrap();
        assert!(o.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::diff::check_gradient_multi;
        let cfg = small();
        let params = NaiveParams::init(cfg, 8);
        let tensors: Vec<Tensor> =
            params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let z = vec![0.3, 0.1, -0.7, 0.4];
        let points = [2.0, 17.0, 40.0];
        let err = check_gradient_multi(
            |tape, vars| {
                let nv = NaiveVars {
                    config: cfg,
                    w1_z: vars[0],
                    w1_s: vars[1],
                    w1_t: vars[2],
                    b1: vars[3],
                    w2: vars[4],
                    b2: vars[5],
                    w3: vars[6],
                    b3: vars[7],
                };
                let zv = tape.vector(z.clone());
                let o = occupancy_tape(tape, &nv, zv, &points, 0.9, 45.0);
                tape.sum(o)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "naive gradient error {err}");
    }
}
