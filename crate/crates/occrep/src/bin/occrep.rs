use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use occrep::decoder::DecoderConfig;
use occrep::encoder::EncoderConfig;
use occrep::env::{rollout, EnvConfig, Environment, Policy};
use occrep::graph::Sample;
use occrep::lane::plan_route;
use occrep::loss::LossConfig;
use occrep::naive::NaiveConfig;
use occrep::sim::{generate_network, simulate, NetworkTemplate, ScenarioTrace, SpawnConfig};
use occrep::train::{
    evaluate, load_model, make_sample, save_model, train, Model, TrainConfig,
};
use occrep::{Error, Result};

#[derive(Parser)]
#[command(name = "occrep", version, about = "Occupancy representation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulated scenario traces
    Gen(GenArgs),
    /// Extract one training sample from a trace as JSON
    Extract(ExtractArgs),
    /// Train a model on a directory of traces
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out scenarios
    Eval(EvalArgs),
    /// Decode a checkpoint into an occupancy map (CSV + SVG)
    Predict(PredictArgs),
    /// Run a scripted policy in the replay environment
    Rollout(RolloutArgs),
    /// Run the gradient and oracle check suite
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// straight | curve | merge | intersection | grid
    #[arg(long, default_value = "straight")]
    template: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Seconds of traffic per scenario
    #[arg(long, default_value_t = 12.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.04)]
    dt: f64,
    /// Vehicle spawn rate per entry lanelet, 1/s
    #[arg(long, default_value_t = 0.3)]
    rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Ego vehicle id; defaults to the first routable vehicle
    #[arg(long)]
    ego: Option<u64>,
    #[arg(long, default_value_t = 45.0)]
    zeta: f64,
    #[arg(long, default_value_t = 2.4)]
    horizon: f64,
    #[arg(long, default_value_t = 60)]
    t_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of .jsonl traces
    #[arg(long)]
    data: PathBuf,
    /// field | direct
    #[arg(long, default_value = "field")]
    model: String,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    latent: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 12)]
    n_vehicles: usize,
    /// Label timesteps per training sample
    #[arg(long, default_value_t = 60)]
    t_steps: usize,
    /// Trapezoid samples per segment
    #[arg(long, default_value_t = 40)]
    r_samples: usize,
    #[arg(long, default_value_t = 8)]
    anchors_per_scenario: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    t_steps: usize,
    #[arg(long, default_value_t = 40)]
    r_samples: usize,
    #[arg(long, default_value_t = 8)]
    anchors_per_scenario: usize,
    #[arg(long)]
    json: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    ego: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 45.0)]
    zeta: f64,
    /// Grid as SxT, e.g. 200x60
    #[arg(long, default_value = "200x60")]
    grid: String,
    /// Output prefix; writes PREFIX.csv and PREFIX.svg
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// idle | constant:A | script:FILE (one acceleration per line)
    #[arg(long, default_value = "idle")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    max_steps: usize,
    #[arg(long)]
    json: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    version: String,
    threads: usize,
    wall_clock_secs: f64,
}

fn write_manifest(next_to: &Path, manifest: &RunManifest) -> Result<()> {
    let name = match next_to.file_name() {
        Some(n) => format!("{}.manifest.json", n.to_string_lossy()),
        None => "manifest.json".to_string(),
    };
    let path = next_to.with_file_name(name);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(manifest)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

fn threads() -> usize {
    std::env::var("OCCREP_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(1)
}

fn manifest(
    subcommand: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
    started: Instant,
) -> RunManifest {
    RunManifest {
        subcommand: subcommand.to_string(),
        config,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: threads(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
}

fn load_traces(dir: &Path) -> Result<Vec<ScenarioTrace>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "jsonl").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .jsonl traces in {}", dir.display())));
    }
    paths.iter().map(|p| ScenarioTrace::load_jsonl(p)).collect()
}

fn pick_ego(trace: &ScenarioTrace, frame: usize, ego: Option<u64>, zeta: f64, seed: u64) -> Result<u64> {
    let f = trace
        .frames
        .get(frame)
        .ok_or_else(|| Error::Usage(format!("frame {frame} out of range")))?;
    if let Some(id) = ego {
        if !f.vehicles.iter().any(|v| v.id == id) {
            return Err(Error::Data(format!("vehicle {id} not present in frame {frame}")));
        }
        return Ok(id);
    }
    f.vehicles
        .iter()
        .find(|v| plan_route(&trace.network, v.lanelet, v.s, zeta, seed).is_ok())
        .map(|v| v.id)
        .ok_or_else(|| Error::Data(format!("no routable ego in frame {frame}")))
}

fn sample_from_trace(
    trace: &ScenarioTrace,
    frame: usize,
    ego: Option<u64>,
    zeta: f64,
    horizon: f64,
    t_steps: usize,
    seed: u64,
) -> Result<Sample> {
    let ego = pick_ego(trace, frame, ego, zeta, seed)?;
    let cfg = TrainConfig { zeta, horizon, ..Default::default() };
    let anchor = occrep::train::Anchor { scenario: 0, frame, ego };
    make_sample(std::slice::from_ref(trace), &anchor, &cfg, t_steps, seed)
}

fn run_gen(a: &GenArgs) -> Result<()> {
    let started = Instant::now();
    let template: NetworkTemplate =
        a.template.parse().map_err(|_| Error::Usage(format!("unknown template {}", a.template)))?;
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i as u64);
        let net = generate_network(seed, template);
        let spawn = SpawnConfig { rate: a.rate, ..Default::default() };
        let trace = simulate(&net, seed, a.duration, a.dt, &spawn);
        let path = a.out.join(format!("trace_{i:04}.jsonl"));
        trace.save_jsonl(&path)?;
        outputs.push(path);
    }
    println!("wrote {} traces to {}", a.count, a.out.display());
    let out_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &a.out.join("traces"),
        &manifest(
            "gen",
            serde_json::json!({
                "template": a.template, "count": a.count, "duration": a.duration,
                "dt": a.dt, "rate": a.rate,
            }),
            a.seed,
            &[],
            &out_refs,
            started,
        ),
    )
}

fn run_extract(a: &ExtractArgs) -> Result<()> {
    let started = Instant::now();
    let trace = ScenarioTrace::load_jsonl(&a.trace)?;
    let sample = sample_from_trace(&trace, a.frame, a.ego, a.zeta, a.horizon, a.t_steps, a.seed)?;
    let tmp = a.out.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&sample)?)?;
    std::fs::rename(&tmp, &a.out)?;
    println!(
        "sample: {} vehicles, {} lanelets, {} label steps -> {}",
        sample.graph.vehicle_ids.len(),
        sample.graph.lanelet_ids.len(),
        sample.labels.steps.len(),
        a.out.display()
    );
    write_manifest(
        &a.out,
        &manifest(
            "extract",
            serde_json::json!({
                "frame": a.frame, "ego": a.ego, "zeta": a.zeta,
                "horizon": a.horizon, "t_steps": a.t_steps,
            }),
            a.seed,
            &[&a.trace],
            &[&a.out],
            started,
        ),
    )
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        t_steps: a.t_steps,
        loss: LossConfig { r_samples: a.r_samples, ..Default::default() },
        max_anchors_per_scenario: a.anchors_per_scenario,
        ..Default::default()
    }
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let traces = load_traces(&a.data)?;
    let enc = EncoderConfig { hidden: a.hidden, latent: a.latent, layers: a.layers };
    let mut model = match a.model.as_str() {
        "field" => Model::init_field(
            enc,
            DecoderConfig {
                hidden: a.hidden,
                latent: a.latent,
                n_vehicles: a.n_vehicles,
                ..Default::default()
            },
            a.seed,
        ),
        "direct" => Model::init_direct(
            enc,
            NaiveConfig { latent: a.latent, hidden1: a.hidden, hidden2: a.hidden / 2, horizon: 2.4 },
            a.seed,
        ),
        other => return Err(Error::Usage(format!("unknown model kind {other}"))),
    };
    let cfg = train_config(a);
    let report = train(&mut model, &traces, &cfg)?;
    save_model(&a.out, &model)?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {i}: mean loss {l:.6}");
    }
    println!("saved {} model ({} steps) -> {}", model.kind(), report.steps, a.out.display());
    write_manifest(
        &a.out,
        &manifest(
            "train",
            serde_json::json!({
                "model": a.model, "epochs": a.epochs, "batch_size": a.batch_size,
                "lr": a.lr, "hidden": a.hidden, "latent": a.latent, "layers": a.layers,
                "n_vehicles": a.n_vehicles, "t_steps": a.t_steps, "r_samples": a.r_samples,
                "anchors_per_scenario": a.anchors_per_scenario,
                "epoch_losses": report.epoch_losses, "train_anchors": report.train_anchors,
            }),
            a.seed,
            &[&a.data],
            &[&a.out],
            started,
        ),
    )
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&a.ckpt)?;
    let traces = load_traces(&a.data)?;
    let cfg = TrainConfig {
        seed: a.seed,
        max_anchors_per_scenario: a.anchors_per_scenario,
        ..Default::default()
    };
    let eval_loss = LossConfig { r_samples: a.r_samples, ..Default::default() };
    let report = evaluate(&model, &traces, &cfg, a.t_steps, &eval_loss)?;
    println!("test loss {:.6} over {} samples", report.mean_loss, report.samples);
    let tmp = a.json.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&report)?)?;
    std::fs::rename(&tmp, &a.json)?;
    write_manifest(
        &a.json,
        &manifest(
            "eval",
            serde_json::json!({
                "t_steps": a.t_steps, "r_samples": a.r_samples,
                "anchors_per_scenario": a.anchors_per_scenario,
                "mean_loss": report.mean_loss, "samples": report.samples,
            }),
            a.seed,
            &[&a.ckpt, &a.data],
            &[&a.json],
            started,
        ),
    )
}

fn parse_grid(grid: &str) -> Result<(usize, usize)> {
    let (s, t) = grid
        .split_once('x')
        .ok_or_else(|| Error::Usage(format!("grid {grid} is not SxT")))?;
    let ns: usize = s.parse().map_err(|_| Error::Usage(format!("bad grid {grid}")))?;
    let nt: usize = t.parse().map_err(|_| Error::Usage(format!("bad grid {grid}")))?;
    if ns == 0 || nt == 0 {
        return Err(Error::Usage("grid dimensions must be nonzero".to_string()));
    }
    Ok((ns, nt))
}

fn svg_slices(
    points: &[f64],
    slices: &[(f64, Vec<f64>)],
    zeta: f64,
) -> String {
    let (w, h, ml, mb) = (640.0, 360.0, 50.0, 30.0);
    let plot_w = w - ml - 20.0;
    let plot_h = h - mb - 20.0;
    let sx = |s: f64| ml + s / zeta * plot_w;
    let sy = |o: f64| 20.0 + (1.0 - o) * plot_h;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"{ml}\" y=\"20\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#888\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">s [m]</text>\n",
        ml + plot_w / 2.0,
        h - 6.0
    ));
    out.push_str(&format!(
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">occupancy</text>\n",
        20.0 + plot_h / 2.0,
        20.0 + plot_h / 2.0
    ));
    for (i, (t, vals)) in slices.iter().enumerate() {
        let hue = 240.0 - 240.0 * i as f64 / slices.len().max(1) as f64;
        let pts: Vec<String> = points
            .iter()
            .zip(vals)
            .map(|(s, o)| format!("{:.2},{:.2}", sx(*s), sy(o.clamp(0.0, 1.0))))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"hsl({hue:.0},70%,45%)\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"hsl({hue:.0},70%,45%)\">t={t:.2}s</text>\n",
            w - 70.0,
            30.0 + 14.0 * i as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn run_predict(a: &PredictArgs) -> Result<()> {
    let started = Instant::now();
    let (ns, nt) = parse_grid(&a.grid)?;
    let model = load_model(&a.ckpt)?;
    let trace = ScenarioTrace::load_jsonl(&a.trace)?;
    let horizon = model.horizon();
    // labels are not needed to predict; a single step keeps extraction cheap
    let sample = sample_from_trace(&trace, a.frame, a.ego, a.zeta, horizon, 1, a.seed)?;
    let predict = model.predictor(&sample)?;
    let zeta = sample.context.zeta();
    let points: Vec<f64> =
        (0..ns).map(|i| i as f64 / (ns - 1).max(1) as f64 * zeta).collect();
    let times: Vec<f64> =
        (0..nt).map(|k| k as f64 / nt as f64 * horizon).collect();

    let csv_path = a.out.with_extension("csv");
    let mut csv = String::from("s,t,o\n");
    let mut slices = Vec::new();
    for t in &times {
        let vals: Vec<f64> = points.iter().map(|s| predict(*s, *t)).collect();
        for (s, o) in points.iter().zip(&vals) {
            csv.push_str(&format!("{s},{t},{o}\n"));
        }
        slices.push((*t, vals));
    }
    std::fs::write(&csv_path, csv)?;

    // a handful of evenly spaced slices keeps the figure readable
    let keep = 6.min(slices.len());
    let step = (slices.len() / keep).max(1);
    let selected: Vec<(f64, Vec<f64>)> =
        slices.iter().step_by(step).take(keep).cloned().collect();
    let svg_path = a.out.with_extension("svg");
    std::fs::write(&svg_path, svg_slices(&points, &selected, zeta))?;
    println!(
        "wrote {} ({} rows) and {}",
        csv_path.display(),
        ns * nt,
        svg_path.display()
    );
    write_manifest(
        &csv_path,
        &manifest(
            "predict",
            serde_json::json!({
                "frame": a.frame, "ego": a.ego, "zeta": a.zeta, "grid": a.grid,
            }),
            a.seed,
            &[&a.ckpt, &a.trace],
            &[&csv_path, &svg_path],
            started,
        ),
    )
}

fn parse_policy(spec: &str) -> Result<Policy> {
    if spec == "idle" {
        return Ok(Policy::Idle);
    }
    if let Some(a) = spec.strip_prefix("constant:") {
        let a: f64 = a.parse().map_err(|_| Error::Usage(format!("bad policy {spec}")))?;
        return Ok(Policy::Constant(a));
    }
    if let Some(file) = spec.strip_prefix("script:") {
        let text = std::fs::read_to_string(file)?;
        let actions: std::result::Result<Vec<f64>, _> =
            text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.trim().parse()).collect();
        return Ok(Policy::Script(
            actions.map_err(|_| Error::Data(format!("bad action in {file}")))?,
        ));
    }
    Err(Error::Usage(format!("unknown policy {spec}")))
}

fn run_rollout(a: &RolloutArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_model(&a.ckpt)?;
    let trace = ScenarioTrace::load_jsonl(&a.trace)?;
    let policy = parse_policy(&a.policy)?;
    let cfg = EnvConfig { max_steps: a.max_steps, ..Default::default() };
    let mut env = Environment::new(&trace, &model, cfg, a.seed)?;
    let log = rollout(&mut env, &policy)?;
    println!(
        "episode: {} steps, total reward {:.4}, reason {:?}",
        log.steps.len(),
        log.total_reward,
        log.reason
    );
    let tmp = a.json.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&log)?)?;
    std::fs::rename(&tmp, &a.json)?;
    write_manifest(
        &a.json,
        &manifest(
            "rollout",
            serde_json::json!({
                "policy": a.policy, "max_steps": a.max_steps,
                "steps": log.steps.len(), "total_reward": log.total_reward,
            }),
            a.seed,
            &[&a.ckpt, &a.trace],
            &[&a.json],
            started,
        ),
    )
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = occrep::gradcheck::run_all()?;
    let mut failed = false;
    for r in &results {
        println!(
            "{:<20} max rel err {:>12.3e}  tol {:>8.0e}  {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
        failed |= !r.pass;
    }
    if let Some(path) = &a.json {
        std::fs::write(path, serde_json::to_vec_pretty(&results)?)?;
    }
    if failed {
        return Err(Error::Numeric("gradient check failure".to_string()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Extract(a) => run_extract(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
        Command::Rollout(a) => run_rollout(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes, everything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
