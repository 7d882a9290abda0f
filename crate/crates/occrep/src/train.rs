//! Model assembly, Adam optimization, binary checkpoints, and the training
//! and evaluation loops over simulated scenario traces.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderConfig, DecoderParams};
use crate::diff::{Tape, Tensor, Var};
use crate::encoder::{encode, EncoderConfig, EncoderParams, EncoderVars};
use crate::graph::{extract_graph, ground_truth_occupancy, Sample};
use crate::lane::plan_route;
use crate::loss::{build_quadrature, total_loss_eval, total_loss_tape, LossConfig, TimestepQuad};
use crate::naive::{NaiveConfig, NaiveParams, NaiveVars};
use crate::sim::ScenarioTrace;
use crate::{Error, Result};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[&Tensor]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                pd[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Head {
    /// Structured decoder: virtual vehicles with closed-form footprints.
    Field(DecoderParams),
    /// Pointwise MLP baseline.
    Direct(NaiveParams),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderParams,
    pub head: Head,
}

impl Model {
    pub fn init_field(enc: EncoderConfig, dec: DecoderConfig, seed: u64) -> Self {
        Model { encoder: EncoderParams::init(enc, seed), head: Head::Field(DecoderParams::init(dec, seed)) }
    }

    pub fn init_direct(enc: EncoderConfig, naive: NaiveConfig, seed: u64) -> Self {
        Model {
            encoder: EncoderParams::init(enc, seed),
            head: Head::Direct(NaiveParams::init(naive, seed)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.head {
            Head::Field(_) => "field",
            Head::Direct(_) => "direct",
        }
    }

    pub fn horizon(&self) -> f64 {
        match &self.head {
            Head::Field(d) => d.config.horizon,
            Head::Direct(n) => n.config.horizon,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named();
        match &self.head {
            Head::Field(d) => out.extend(d.named()),
            Head::Direct(n) => out.extend(n.named()),
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut();
        match &mut self.head {
            Head::Field(d) => out.extend(d.named_mut()),
            Head::Direct(n) => out.extend(n.named_mut()),
        }
        out
    }

    /// Builds the full loss graph for one sample on a fresh tape. Returns
    /// the loss variable plus the named parameter leaves for gradient
    /// extraction.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        sample: &Sample,
        quad: &[TimestepQuad],
        loss_cfg: &LossConfig,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        let enc_vars = EncoderVars::register(tape, &self.encoder);
        let out = encode(tape, &enc_vars, &sample.graph, &sample.context)?;
        let zeta = sample.context.zeta();
        let mut names = enc_vars.named();
        let loss = match &self.head {
            Head::Field(dp) => {
                let dv = crate::decoder::DecoderVars::register(tape, dp);
                names.extend(dv.named());
                let decoded = crate::decoder::decode_tape(tape, &dv, out.z, zeta);
                total_loss_tape(tape, quad, loss_cfg, |tape, pts, t| {
                    crate::decoder::occupancy_tape(tape, &dp.config, &decoded, pts, t)
                })?
            }
            Head::Direct(np) => {
                let nv = NaiveVars::register(tape, np);
                names.extend(nv.named());
                total_loss_tape(tape, quad, loss_cfg, |tape, pts, t| {
                    crate::naive::occupancy_tape(tape, &nv, out.z, pts, t, zeta)
                })?
            }
        };
        Ok((loss, names))
    }

    /// Value-level occupancy predictor for one sample.
    pub fn predictor(&self, sample: &Sample) -> Result<Box<dyn Fn(f64, f64) -> f64>> {
        let (z, _) = crate::encoder::encode_values(&self.encoder, &sample.graph, &sample.context)?;
        let zeta = sample.context.zeta();
        match &self.head {
            Head::Field(dp) => {
                let field = crate::decoder::decode(dp, &z, zeta)?;
                Ok(Box::new(move |s, t| field.occupancy(s, t)))
            }
            Head::Direct(np) => {
                let np = np.clone();
                Ok(Box::new(move |s, t| crate::naive::occupancy_scalar(&np, &z, s, t, zeta)))
            }
        }
    }
}

const MAGIC: &[u8; 4] = b"OCRP";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// Writes named tensors: magic, version, record count, then per record
/// [u16 name length, name, u8 dtype, u8 rank, u32 dims, payload], all
/// little endian.
pub fn save_records(path: &Path, records: &[(String, &Tensor)]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(records.len() as u32).to_le_bytes())?;
        for (name, t) in records {
            let nb = name.as_bytes();
            f.write_all(&(nb.len() as u16).to_le_bytes())?;
            f.write_all(nb)?;
            f.write_all(&[DTYPE_F64, t.shape().len() as u8])?;
            for d in t.shape() {
                f.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let mut u32b = [0u8; 4];
    f.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    f.read_exact(&mut u32b)?;
    let count = u32::from_le_bytes(u32b);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let mut u16b = [0u8; 2];
        f.read_exact(&mut u16b)?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data("checkpoint record name is not utf-8".to_string()))?;
        let mut hdr = [0u8; 2];
        f.read_exact(&mut hdr)?;
        let (dtype, rank) = (hdr[0], hdr[1] as usize);
        if rank > 2 {
            return Err(Error::Data(format!("record {name}: rank {rank} > 2")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            f.read_exact(&mut u32b)?;
            shape.push(u32::from_le_bytes(u32b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match dtype {
            DTYPE_F64 => {
                let mut b = [0u8; 8];
                for _ in 0..n {
                    f.read_exact(&mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
            }
            DTYPE_F32 => {
                let mut b = [0u8; 4];
                for _ in 0..n {
                    f.read_exact(&mut b)?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
            }
            other => return Err(Error::Data(format!("record {name}: unknown dtype {other}"))),
        }
        let tensor = match rank {
            0 => Tensor::scalar(data[0]),
            1 => Tensor::vector(data),
            _ => Tensor::matrix(shape[0], shape[1], data),
        };
        out.insert(name, tensor);
    }
    Ok(out)
}

fn scalar_record(records: &BTreeMap<String, Tensor>, name: &str) -> Result<f64> {
    records
        .get(name)
        .map(|t| t.data()[0])
        .ok_or_else(|| Error::Data(format!("checkpoint missing record {name}")))
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let ec = model.encoder.config;
    let mut meta: Vec<(String, Tensor)> = vec![
        ("config.enc.hidden".into(), Tensor::scalar(ec.hidden as f64)),
        ("config.enc.latent".into(), Tensor::scalar(ec.latent as f64)),
        ("config.enc.layers".into(), Tensor::scalar(ec.layers as f64)),
    ];
    match &model.head {
        Head::Field(d) => {
            let c = d.config;
            meta.push(("config.kind".into(), Tensor::scalar(0.0)));
            meta.push(("config.dec.hidden".into(), Tensor::scalar(c.hidden as f64)));
            meta.push(("config.dec.latent".into(), Tensor::scalar(c.latent as f64)));
            meta.push(("config.dec.n_vehicles".into(), Tensor::scalar(c.n_vehicles as f64)));
            meta.push(("config.dec.horizon".into(), Tensor::scalar(c.horizon)));
            meta.push(("config.dec.tau_r".into(), Tensor::scalar(c.tau_r)));
            meta.push(("config.dec.tau_c".into(), Tensor::scalar(c.tau_c)));
            meta.push(("config.dec.t_clamp".into(), Tensor::scalar(c.t_clamp)));
            meta.push(("config.dec.pos_margin".into(), Tensor::scalar(c.pos_margin)));
            meta.push((
                "config.dec.length_bounds".into(),
                Tensor::vector(c.length_bounds.to_vec()),
            ));
            meta.push((
                "config.dec.diffusion_bounds".into(),
                Tensor::vector(c.diffusion_bounds.to_vec()),
            ));
            meta.push(("config.dec.drift_bounds".into(), Tensor::vector(c.drift_bounds.to_vec())));
        }
        Head::Direct(n) => {
            let c = n.config;
            meta.push(("config.kind".into(), Tensor::scalar(1.0)));
            meta.push(("config.naive.latent".into(), Tensor::scalar(c.latent as f64)));
            meta.push(("config.naive.hidden1".into(), Tensor::scalar(c.hidden1 as f64)));
            meta.push(("config.naive.hidden2".into(), Tensor::scalar(c.hidden2 as f64)));
            meta.push(("config.naive.horizon".into(), Tensor::scalar(c.horizon)));
        }
    }
    let mut records: Vec<(String, &Tensor)> =
        meta.iter().map(|(n, t)| (n.clone(), t)).collect();
    records.extend(model.named());
    save_records(path, &records)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let records = load_records(path)?;
    let enc_cfg = EncoderConfig {
        hidden: scalar_record(&records, "config.enc.hidden")? as usize,
        latent: scalar_record(&records, "config.enc.latent")? as usize,
        layers: scalar_record(&records, "config.enc.layers")? as usize,
    };
    let kind = scalar_record(&records, "config.kind")?;
    let mut model = if kind == 0.0 {
        let get2 = |name: &str| -> Result<[f64; 2]> {
            let t = records
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint missing record {name}")))?;
            Ok([t.data()[0], t.data()[1]])
        };
        let dec_cfg = DecoderConfig {
            hidden: scalar_record(&records, "config.dec.hidden")? as usize,
            latent: scalar_record(&records, "config.dec.latent")? as usize,
            n_vehicles: scalar_record(&records, "config.dec.n_vehicles")? as usize,
            horizon: scalar_record(&records, "config.dec.horizon")?,
            tau_r: scalar_record(&records, "config.dec.tau_r")?,
            tau_c: scalar_record(&records, "config.dec.tau_c")?,
            t_clamp: scalar_record(&records, "config.dec.t_clamp")?,
            pos_margin: scalar_record(&records, "config.dec.pos_margin")?,
            length_bounds: get2("config.dec.length_bounds")?,
            exist_base_bounds: [0.0, 1.0],
            exist_shift_bounds: [0.0, 1.0],
            diffusion_bounds: get2("config.dec.diffusion_bounds")?,
            drift_bounds: get2("config.dec.drift_bounds")?,
        };
        Model::init_field(enc_cfg, dec_cfg, 0)
    } else {
        let naive_cfg = NaiveConfig {
            latent: scalar_record(&records, "config.naive.latent")? as usize,
            hidden1: scalar_record(&records, "config.naive.hidden1")? as usize,
            hidden2: scalar_record(&records, "config.naive.hidden2")? as usize,
            horizon: scalar_record(&records, "config.naive.horizon")?,
        };
        Model::init_direct(enc_cfg, naive_cfg, 0)
    };
    for (name, tensor) in model.named_mut() {
        let rec = records
            .get(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint missing parameter {name}")))?;
        if rec.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                rec.shape(),
                tensor.shape()
            )));
        }
        *tensor = rec.clone();
    }
    Ok(model)
}

/// A training anchor: a frame in a scenario and the vehicle acting as ego.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Anchor {
    pub scenario: usize,
    pub frame: usize,
    pub ego: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Ego path length meters.
    pub zeta: f64,
    pub horizon: f64,
    /// Label timesteps per sample during training.
    pub t_steps: usize,
    pub loss: LossConfig,
    pub max_anchors_per_scenario: usize,
    /// Fraction of scenarios used for training; the rest are held out.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            zeta: 45.0,
            horizon: 2.4,
            t_steps: 60,
            loss: LossConfig::default(),
            max_anchors_per_scenario: 8,
            train_fraction: 0.9,
        }
    }
}

/// Picks anchors spread over each scenario: frames that leave a full
/// prediction horizon of trace, egos present at the frame with a plannable
/// route of length zeta.
pub fn find_anchors(
    traces: &[ScenarioTrace],
    cfg: &TrainConfig,
    scenarios: &[usize],
) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    for &si in scenarios {
        let trace = &traces[si];
        let horizon_frames = (cfg.horizon / trace.dt).round() as usize;
        if trace.frames.len() <= horizon_frames {
            continue;
        }
        let last_start = trace.frames.len() - 1 - horizon_frames;
        let step = (last_start / cfg.max_anchors_per_scenario).max(1);
        let mut found = 0;
        let mut fi = 0;
        while fi <= last_start && found < cfg.max_anchors_per_scenario {
            let frame = &trace.frames[fi];
            let mut picked = None;
            for v in &frame.vehicles {
                if plan_route(&trace.network, v.lanelet, v.s, cfg.zeta, cfg.seed).is_ok() {
                    picked = Some(v.id);
                    break;
                }
            }
            if let Some(ego) = picked {
                anchors.push(Anchor { scenario: si, frame: fi, ego });
                found += 1;
            }
            fi += step;
        }
    }
    anchors
}

/// Materializes one sample: routes are re-planned with `ctx_seed`, so the
/// same anchor yields different ego paths across epochs.
pub fn make_sample(
    traces: &[ScenarioTrace],
    anchor: &Anchor,
    cfg: &TrainConfig,
    t_steps: usize,
    ctx_seed: u64,
) -> Result<Sample> {
    let trace = &traces[anchor.scenario];
    let frame = &trace.frames[anchor.frame];
    let ego = frame
        .vehicles
        .iter()
        .find(|v| v.id == anchor.ego)
        .ok_or_else(|| Error::Data(format!("ego {} not in frame {}", anchor.ego, anchor.frame)))?;
    let context = plan_route(&trace.network, ego.lanelet, ego.s, cfg.zeta, ctx_seed)?;
    let graph = extract_graph(&trace.network, frame)?;
    let t0 = anchor.frame as f64 * trace.dt;
    let labels = ground_truth_occupancy(trace, &context, t0, cfg.horizon, t_steps, Some(ego.id))?;
    Ok(Sample { graph, context, labels })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub train_anchors: usize,
}

/// Deterministic minibatch training with Adam.
pub fn train(model: &mut Model, traces: &[ScenarioTrace], cfg: &TrainConfig) -> Result<TrainReport> {
    let (train_sc, _) = split_scenarios(traces.len(), cfg);
    let anchors = find_anchors(traces, cfg, &train_sc);
    if anchors.is_empty() {
        return Err(Error::Data("no usable training anchors".to_string()));
    }
    let shapes: Vec<&Tensor> = model.named().into_iter().map(|(_, t)| t).collect();
    let mut adam = Adam::new(cfg.lr, &shapes);
    drop(shapes);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let ctx_seed = cfg.seed.wrapping_mul(1000).wrapping_add(epoch as u64);
        let mut order: Vec<usize> = (0..anchors.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            let mut used = 0usize;
            for &ai in batch {
                let sample = match make_sample(traces, &anchors[ai], cfg, cfg.t_steps, ctx_seed) {
                    Ok(s) => s,
                    // context resampling can push the route off the map
                    Err(Error::Route(_)) => continue,
                    Err(e) => return Err(e),
                };
                let quad = build_quadrature(&sample.labels, &cfg.loss);
                let mut tape = Tape::new();
                let (loss, names) = model.loss_on_tape(&mut tape, &sample, &quad, &cfg.loss)?;
                let grads = tape.backward(loss)?;
                batch_loss += tape.value(loss).item();
                used += 1;
                let gs: Vec<Tensor> = names.iter().map(|(_, v)| grads.get(*v).clone()).collect();
                match &mut grad_acc {
                    None => grad_acc = Some(gs),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&gs) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = grad_acc else { continue };
            let inv = 1.0 / used as f64;
            for g in &mut grads {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }
            let mut params: Vec<&mut Tensor> =
                model.named_mut().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut params, &grads);
            steps += 1;
            epoch_loss += batch_loss;
            epoch_count += used;
        }
        epoch_losses.push(if epoch_count > 0 { epoch_loss / epoch_count as f64 } else { f64::NAN });
    }
    Ok(TrainReport { epoch_losses, steps, train_anchors: anchors.len() })
}

/// Scenario-level split: seeded shuffle, first `train_fraction` for
/// training, remainder held out.
pub fn split_scenarios(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut ix: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7370_6c69);
    ix.shuffle(&mut rng);
    // always keep at least one scenario on each side when possible
    let cut = if n < 2 {
        n
    } else {
        (((n as f64) * cfg.train_fraction).round() as usize).clamp(1, n - 1)
    };
    let test = ix.split_off(cut);
    (ix, test)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_loss: f64,
    pub samples: usize,
    /// Mean loss contribution per label timestep index.
    pub per_timestep: Vec<f64>,
    /// (mean predicted probability, empirical occupancy rate) per decile of
    /// predicted probability.
    pub calibration: Vec<[f64; 2]>,
}

/// Evaluates the model on held-out anchors with a fixed quadrature.
pub fn evaluate(
    model: &Model,
    traces: &[ScenarioTrace],
    cfg: &TrainConfig,
    eval_t_steps: usize,
    eval_loss: &LossConfig,
) -> Result<EvalReport> {
    let (_, test_sc) = split_scenarios(traces.len(), cfg);
    let anchors = find_anchors(traces, cfg, &test_sc);
    if anchors.is_empty() {
        return Err(Error::Data("no usable evaluation anchors".to_string()));
    }
    let ctx_seed = cfg.seed ^ 0x6576_616c;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut per_timestep = vec![0.0; eval_t_steps];
    let mut bins = vec![(0.0f64, 0.0f64, 0usize); 10];
    for anchor in &anchors {
        let sample = match make_sample(traces, anchor, cfg, eval_t_steps, ctx_seed) {
            Ok(s) => s,
            Err(Error::Route(_)) => continue,
            Err(e) => return Err(e),
        };
        let quad = build_quadrature(&sample.labels, eval_loss);
        let predict = model.predictor(&sample)?;
        total += total_loss_eval(&quad, eval_loss, |s, t| predict(s, t));
        for (k, q) in quad.iter().enumerate() {
            per_timestep[k] += total_loss_eval(
                std::slice::from_ref(q),
                eval_loss,
                |s, t| predict(s, t),
            );
        }
        // calibration: sample points against the binary label
        for q in &quad {
            for ((s, wp), wn) in q.points.iter().zip(&q.w_pos).zip(&q.w_neg) {
                let truth = if *wp > 0.0 {
                    1.0
                } else if *wn > 0.0 {
                    0.0
                } else {
                    continue;
                };
                let p = predict(*s, q.t).clamp(0.0, 1.0);
                let b = ((p * 10.0) as usize).min(9);
                bins[b].0 += p;
                bins[b].1 += truth;
                bins[b].2 += 1;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("all evaluation anchors were unroutable".to_string()));
    }
    for v in &mut per_timestep {
        *v /= count as f64;
    }
    let calibration = bins
        .iter()
        .filter(|(_, _, n)| *n > 0)
        .map(|(p, o, n)| [p / *n as f64, o / *n as f64])
        .collect();
    Ok(EvalReport { mean_loss: total / count as f64, samples: count, per_timestep, calibration })
}
