//! Replay-based longitudinal control environment. Other vehicles follow a
//! recorded trace; the ego integrates acceleration commands along a fixed
//! route and observes its latent route descriptor plus its own speed.

use serde::{Deserialize, Serialize};

use crate::decoder::OccupancyField;
use crate::graph::{extract_graph, vehicle_footprint_on_path};
use crate::lane::{plan_route, route_window, RouteContext};
use crate::sim::ScenarioTrace;
use crate::train::Model;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Weights for [progress, collision, overspeed, occupancy conflict].
    /// Collision, overspeed, and conflict components are nonnegative
    /// magnitudes; penalties come from negative weights.
    pub w: [f64; 4],
    /// Discount used inside the occupancy-conflict integral.
    pub delta_r: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w: [1.0, -100.0, -0.5, -1.0], delta_r: 0.95 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Acceleration command magnitude cap, m/s^2.
    pub a_cap: f64,
    pub v_limit: f64,
    pub max_steps: usize,
    pub goal_bonus: f64,
    /// Route length planned for the episode; must be at least the encoding
    /// window length.
    pub route_length: f64,
    /// Encoding / prediction window length along the route.
    pub zeta: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    /// Timesteps for the occupancy-conflict integral.
    pub t_steps: usize,
    /// Trapezoid samples across the ego window.
    pub r_samples: usize,
    pub weights: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            a_cap: 4.0,
            v_limit: 13.9,
            max_steps: 400,
            goal_bonus: 10.0,
            route_length: 90.0,
            zeta: 45.0,
            ego_length: 4.5,
            ego_width: 2.0,
            t_steps: 60,
            r_samples: 40,
            weights: RewardWeights::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    Goal,
    Collision,
    Timeout,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepOutcome {
    /// [z_ego..., v_ego]
    pub observation: Vec<f64>,
    pub reward: f64,
    /// [progress, collision, overspeed, conflict], before weighting.
    pub components: [f64; 4],
    pub done: bool,
    pub reason: Option<DoneReason>,
}

pub struct Environment<'a> {
    trace: &'a ScenarioTrace,
    model: &'a Model,
    cfg: EnvConfig,
    route: RouteContext,
    /// Ego arclength on the route path.
    s: f64,
    v: f64,
    step_idx: usize,
    done: Option<DoneReason>,
}

impl<'a> Environment<'a> {
    /// Starts an episode at the beginning of a route planned from an entry
    /// lanelet. `seed` drives the route's successor choices.
    pub fn new(
        trace: &'a ScenarioTrace,
        model: &'a Model,
        cfg: EnvConfig,
        seed: u64,
    ) -> Result<Self> {
        let entries = trace.network.entry_lanelets();
        let start = entries
            .first()
            .copied()
            .or_else(|| trace.network.iter().next().map(|l| l.id))
            .ok_or_else(|| Error::Data("empty network".to_string()))?;
        let route = plan_route(&trace.network, start, 0.0, cfg.route_length, seed)?;
        Ok(Environment { trace, model, cfg, route, s: 0.0, v: 0.0, step_idx: 0, done: None })
    }

    pub fn ego(&self) -> (f64, f64) {
        (self.s, self.v)
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Observation at the current state without advancing time.
    pub fn observe(&self) -> Result<Vec<f64>> {
        let (z, _field) = self.encode_window()?;
        let mut obs = z;
        obs.push(self.v);
        Ok(obs)
    }

    fn frame_index(&self) -> usize {
        self.step_idx.min(self.trace.frames.len() - 1)
    }

    /// Re-anchors the prediction window at the ego position and runs the
    /// model: latent vector plus, for the structured head, a decoded field.
    fn encode_window(&self) -> Result<(Vec<f64>, Option<OccupancyField>)> {
        // past the route end (goal step) the window is pinned to the last
        // stretch of the route
        let s0 = self.s.clamp(0.0, (self.route.zeta() - 1e-6).max(0.0));
        let window = route_window(&self.route, s0, self.cfg.zeta)?;
        let frame = &self.trace.frames[self.frame_index()];
        let graph = extract_graph(&self.trace.network, frame)?;
        let (z, _) = crate::encoder::encode_values(&self.model.encoder, &graph, &window)?;
        let field = match &self.model.head {
            crate::train::Head::Field(dp) => Some(crate::decoder::decode(dp, &z, window.zeta())?),
            crate::train::Head::Direct(_) => None,
        };
        Ok((z, field))
    }

    /// Advances one trace frame under the given acceleration command.
    pub fn step(&mut self, accel: f64) -> Result<StepOutcome> {
        if self.done.is_some() {
            return Err(Error::Usage("step on a finished episode".to_string()));
        }
        if !accel.is_finite() || accel.abs() > self.cfg.a_cap {
            return Err(Error::Usage(format!(
                "acceleration {accel} exceeds cap {}",
                self.cfg.a_cap
            )));
        }
        let dt = self.trace.dt;
        let s_before = self.s;
        self.v = (self.v + accel * dt).max(0.0);
        self.s += self.v * dt;
        self.step_idx += 1;

        let progress = self.s - s_before;
        let mut reason = None;

        // collision against replayed vehicles, same projection rule as the
        // ground-truth labeler
        let ego_lo = self.s - self.cfg.ego_length / 2.0;
        let ego_hi = self.s + self.cfg.ego_length / 2.0;
        let frame = &self.trace.frames[self.frame_index()];
        let mut collision = 0.0;
        for v in &frame.vehicles {
            if let Some([lo, hi]) = vehicle_footprint_on_path(
                &self.trace.network,
                &self.route,
                v,
                self.route.zeta(),
            ) {
                if lo < ego_hi && hi > ego_lo {
                    collision = 1.0;
                    reason = Some(DoneReason::Collision);
                    break;
                }
            }
        }

        let overspeed = (self.v - self.cfg.v_limit).max(0.0);

        let (z, field) = self.encode_window()?;
        let conflict = match &field {
            Some(f) => reward_occupancy(
                f,
                self.v,
                self.cfg.ego_length,
                self.cfg.weights.delta_r,
                self.cfg.t_steps,
                self.cfg.r_samples,
                0.0,
            ),
            None => 0.0,
        };

        let mut reward = self.cfg.weights.w[0] * progress
            + self.cfg.weights.w[1] * collision
            + self.cfg.weights.w[2] * overspeed
            + self.cfg.weights.w[3] * conflict;

        if reason.is_none() && self.s >= self.route.zeta() {
            reason = Some(DoneReason::Goal);
            reward += self.cfg.goal_bonus;
        }
        if reason.is_none()
            && (self.step_idx >= self.cfg.max_steps
                || self.step_idx >= self.trace.frames.len() - 1)
        {
            reason = Some(DoneReason::Timeout);
        }
        self.done = reason;

        let mut observation = z;
        observation.push(self.v);
        Ok(StepOutcome {
            observation,
            reward,
            components: [progress, collision, overspeed, conflict],
            done: reason.is_some(),
            reason,
        })
    }
}

/// Expected occupancy conflict along the extrapolated ego motion
/// s~(t) = s0 + v_ego * t: a discounted sum over timesteps of the trapezoid
/// integral of the field across the ego footprint window, clipped to the
/// path.
pub fn reward_occupancy(
    field: &OccupancyField,
    v_ego: f64,
    lambda_ego: f64,
    delta_r: f64,
    t_steps: usize,
    r_samples: usize,
    s0: f64,
) -> f64 {
    reward_occupancy_fn(
        |s, t| field.occupancy(s, t),
        field.zeta,
        field.horizon,
        v_ego,
        lambda_ego,
        delta_r,
        t_steps,
        r_samples,
        s0,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn reward_occupancy_fn(
    o: impl Fn(f64, f64) -> f64,
    zeta: f64,
    horizon: f64,
    v_ego: f64,
    lambda_ego: f64,
    delta_r: f64,
    t_steps: usize,
    r_samples: usize,
    s0: f64,
) -> f64 {
    assert!(t_steps >= 1 && r_samples >= 2);
    let dt = horizon / t_steps as f64;
    let mut total = 0.0;
    for k in 0..t_steps {
        let t = k as f64 * dt;
        let center = s0 + v_ego * t;
        let lo = (center - lambda_ego / 2.0).max(0.0);
        let hi = (center + lambda_ego / 2.0).min(zeta);
        if hi <= lo {
            continue;
        }
        let h = (hi - lo) / (r_samples - 1) as f64;
        let mut acc = 0.5 * (o(lo, t) + o(hi, t));
        for i in 1..r_samples - 1 {
            acc += o(lo + i as f64 * h, t);
        }
        total += delta_r.powi(k as i32) * dt * acc * h;
    }
    total
}

/// Fixed action source for scripted rollouts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Policy {
    Idle,
    Constant(f64),
    Script(Vec<f64>),
}

impl Policy {
    pub fn action(&self, step: usize) -> f64 {
        match self {
            Policy::Idle => 0.0,
            Policy::Constant(a) => *a,
            Policy::Script(actions) => actions.get(step).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: f64,
    pub s: f64,
    pub v: f64,
    pub reward: f64,
    pub components: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub total_reward: f64,
    pub reason: DoneReason,
}

/// Runs a policy to termination.
pub fn rollout(env: &mut Environment, policy: &Policy) -> Result<EpisodeLog> {
    let mut steps = Vec::new();
    let mut total = 0.0;
    let mut i = 0;
    loop {
        let a = policy.action(i).clamp(-env.cfg.a_cap, env.cfg.a_cap);
        let out = env.step(a)?;
        let (s, v) = env.ego();
        total += out.reward;
        steps.push(StepRecord {
            step: i,
            action: a,
            s,
            v,
            reward: out.reward,
            components: out.components,
        });
        i += 1;
        if out.done {
            return Ok(EpisodeLog { steps, total_reward: total, reason: out.reason.unwrap() });
        }
    }
}
