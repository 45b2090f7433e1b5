//! Baseline minds: null, random, greedy and scriptor replay.
//!
//! They all speak [`Mind`] and so run unchanged in-process or behind
//! `openworld agent <kind>` over stdio.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::ForceMap;
use crate::error::{Error, Result};
use crate::problems::{distance, sample_ball};
use crate::protocol::{AgentMsg, HarnessMsg, Mind, PROTOCOL_VERSION};
use crate::rng::Stream;
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Null,
    Random,
    Greedy,
}

impl AgentKind {
    pub fn build(self) -> Box<dyn Mind> {
        match self {
            AgentKind::Null => Box::new(NullAgent::default()),
            AgentKind::Random => Box::new(RandomAgent::default()),
            AgentKind::Greedy => Box::new(GreedyAgent::default()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Null => "null",
            AgentKind::Random => "random",
            AgentKind::Greedy => "greedy",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(AgentKind::Null),
            "random" => Ok(AgentKind::Random),
            "greedy" => Ok(AgentKind::Greedy),
            other => Err(Error::Config(format!("unknown baseline agent `{other}`"))),
        }
    }
}

/// Body layout learned from the harness `hello`.
#[derive(Clone, Debug, Default)]
struct Embodiment {
    members: Vec<u64>,
    dim: usize,
    f_max: f64,
}

impl Embodiment {
    fn from_hello(msg: &HarnessMsg) -> Option<(Self, u64)> {
        match msg {
            HarnessMsg::Hello {
                members, dim, f_max, seed, ..
            } => Some((
                Self {
                    members: members.clone(),
                    dim: *dim,
                    f_max: *f_max,
                },
                *seed,
            )),
            _ => None,
        }
    }

    /// The same force on every member.
    fn uniform(&self, force: &Vector) -> ForceMap {
        self.members.iter().map(|&id| (id, force.clone())).collect()
    }
}

fn hello(name: &str) -> AgentMsg {
    AgentMsg::Hello {
        protocol: PROTOCOL_VERSION,
        name: name.to_string(),
    }
}

/// Does nothing, ever.
#[derive(Debug, Default)]
pub struct NullAgent {
    reported: bool,
}

pub fn null_action(_grid: &[f64]) -> ForceMap {
    ForceMap::new()
}

impl Mind for NullAgent {
    fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>> {
        Ok(match msg {
            HarnessMsg::Hello { .. } => vec![hello("null")],
            HarnessMsg::Observation { tick, grid, .. } => {
                let mut out = Vec::new();
                if !std::mem::replace(&mut self.reported, true) {
                    out.push(AgentMsg::Resources { m: 1, c: 0 });
                }
                out.push(AgentMsg::action(*tick, &null_action(grid)));
                out
            }
            _ => Vec::new(),
        })
    }
}

/// Independent uniform force in the `f_max` ball for every member, every tick.
#[derive(Debug, Default)]
pub struct RandomAgent {
    body: Embodiment,
    rng: Option<Stream>,
    reported: bool,
}

impl RandomAgent {
    pub fn with_seed(members: Vec<u64>, dim: usize, f_max: f64, seed: u64) -> Self {
        Self {
            body: Embodiment { members, dim, f_max },
            rng: Some(Stream::new(seed).split("agent")),
            reported: false,
        }
    }

    pub fn next_action(&mut self) -> ForceMap {
        let rng = self.rng.as_mut().expect("random agent not initialised");
        self.body
            .members
            .iter()
            .map(|&id| (id, sample_ball(rng, self.body.dim, self.body.f_max)))
            .collect()
    }
}

impl Mind for RandomAgent {
    fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>> {
        Ok(match msg {
            HarnessMsg::Hello { .. } => {
                let (body, seed) = Embodiment::from_hello(msg).expect("hello");
                *self = Self::with_seed(body.members, body.dim, body.f_max, seed);
                vec![hello("random")]
            }
            HarnessMsg::Observation { tick, .. } => {
                let mut out = Vec::new();
                if !std::mem::replace(&mut self.reported, true) {
                    out.push(AgentMsg::Resources { m: 1, c: 0 });
                }
                out.push(AgentMsg::action(*tick, &self.next_action()));
                out
            }
            _ => Vec::new(),
        })
    }
}

/// Exponentially weighted ridge regression. The ridge term keeps the
/// solution bounded when the inputs stop varying.
#[derive(Clone, Debug)]
struct Ewls {
    gram: Vec<Vec<f64>>,
    cross: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    forgetting: f64,
    ridge: f64,
}

impl Ewls {
    fn new(outputs: usize, features: usize, forgetting: f64, ridge: f64) -> Self {
        Self {
            gram: vec![vec![0.0; features]; features],
            cross: vec![vec![0.0; outputs]; features],
            weights: vec![vec![0.0; features]; outputs],
            forgetting,
            ridge,
        }
    }

    fn reset(&mut self) {
        *self = Self::new(self.weights.len(), self.gram.len(), self.forgetting, self.ridge);
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Forgets once, then absorbs a batch of observations. Returns the mean
    /// squared a-priori error over the batch.
    fn update(&mut self, rows: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let lambda = self.forgetting;
        self.gram.iter_mut().flatten().for_each(|g| *g *= lambda);
        self.cross.iter_mut().flatten().for_each(|c| *c *= lambda);
        let mut sq = 0.0;
        let mut n = 0usize;
        for (x, y) in rows {
            sq += self.predict(x).iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum::<f64>();
            n += y.len();
            for (i, xi) in x.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    self.gram[i][j] += xi * xj;
                }
                for (c, yc) in self.cross[i].iter_mut().zip(y) {
                    *c += xi * yc;
                }
            }
        }
        self.solve();
        sq / n.max(1) as f64
    }

    /// Gauss-Jordan elimination on `(gram + ridge I) W^T = cross`.
    fn solve(&mut self) {
        let p = self.gram.len();
        let outputs = self.weights.len();
        let mut a: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = self.gram[i].clone();
                row[i] += self.ridge;
                row.extend_from_slice(&self.cross[i]);
                row
            })
            .collect();
        for col in 0..p {
            let pivot = (col..p)
                .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
                .expect("nonempty");
            a.swap(col, pivot);
            let d = a[col][col];
            for v in a[col].iter_mut() {
                *v /= d;
            }
            for r in 0..p {
                if r != col {
                    let f = a[r][col];
                    if f != 0.0 {
                        for k in 0..p + outputs {
                            a[r][k] -= f * a[col][k];
                        }
                    }
                }
            }
        }
        for (o, w) in self.weights.iter_mut().enumerate() {
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = a[i][p + o];
            }
        }
    }

    fn size(&self) -> u64 {
        let p = self.gram.len();
        let o = self.weights.len();
        (p * p + 2 * p * o) as u64
    }
}

/// One-step lookahead over axis-aligned pushes, guided by an online linear
/// model of how the observation changes per unit of motion.
///
/// Moving the window by `d` along an axis shifts its contents the other way,
/// so each cell changes by roughly `-d` times the grid's slope there. The
/// model learns one gain per axis on that slope; the slope itself comes from
/// the current grid, which keeps the model local. A sustained spike in prediction error is
/// read as a change of the world's laws and wipes the model.
#[derive(Debug, Default)]
pub struct GreedyAgent {
    body: Embodiment,
    resolution: usize,
    rng: Option<Stream>,
    model: Option<Ewls>,
    target: Option<Vec<f64>>,
    prev_grid: Option<Vec<f64>>,
    prev_motion: Vec<f64>,
    velocity: Vec<f64>,
    err_fast: f64,
    err_slow: f64,
    spike_run: u32,
    updates: u64,
    resets: u64,
    last_error: f64,
}

const EXPLORE: f64 = 0.1;
const FORGETTING: f64 = 0.995;
const RIDGE: f64 = 0.01;
const SPIKE_FACTOR: f64 = 3.0;
const SPIKE_TICKS: u32 = 8;

/// Central difference of `grid` along `axis` (0 = columns, 1 = rows), with
/// edge cells repeated past the border.
fn slope(grid: &[f64], resolution: usize, axis: usize) -> Vec<f64> {
    let r = resolution;
    let at = |row: usize, col: usize, ch: usize| grid[(row * r + col) * 2 + ch];
    let mut out = vec![0.0; grid.len()];
    if axis > 1 || r < 2 {
        return out;
    }
    for row in 0..r {
        for col in 0..r {
            for ch in 0..2 {
                let (lo, hi) = if axis == 0 {
                    (at(row, col.saturating_sub(1), ch), at(row, (col + 1).min(r - 1), ch))
                } else {
                    (at(row.saturating_sub(1), col, ch), at((row + 1).min(r - 1), col, ch))
                };
                out[(row * r + col) * 2 + ch] = (hi - lo) / 2.0;
            }
        }
    }
    out
}

impl GreedyAgent {
    pub fn last_prediction_error(&self) -> f64 {
        self.last_error
    }

    pub fn model_resets(&self) -> u64 {
        self.resets
    }

    /// Current gains: per axis for the push, then per axis for the velocity.
    pub fn model_gains(&self) -> Vec<f64> {
        self.model.as_ref().map_or_else(Vec::new, |m| m.weights.iter().flatten().copied().collect())
    }

    /// The push itself followed by the dead-reckoned velocity after it.
    fn motion(&self, push: &[f64]) -> Vec<f64> {
        let cap = self.body.f_max;
        let mut m: Vec<f64> = push.iter().map(|p| p * cap).collect();
        m.extend(self.velocity.iter().zip(push).map(|(v, p)| (v + p * cap).clamp(-cap, cap)));
        m
    }

    /// One regression row per cell: the slope on each axis times each
    /// motion component along it.
    fn rows(&self, grid: &[f64], motion: &[f64]) -> Vec<Vec<f64>> {
        let dim = self.body.dim;
        let slopes: Vec<Vec<f64>> = (0..dim).map(|a| slope(grid, self.resolution, a)).collect();
        (0..grid.len())
            .map(|c| motion.iter().enumerate().map(|(k, m)| m * slopes[k % dim][c]).collect())
            .collect()
    }

    fn learn(&mut self, grid: &[f64]) {
        let Some(prev) = self.prev_grid.as_ref() else {
            return;
        };
        let rows: Vec<(Vec<f64>, Vec<f64>)> = self
            .rows(prev, &self.prev_motion)
            .into_iter()
            .zip(grid.iter().zip(prev))
            .map(|(x, (g, p))| (x, vec![g - p]))
            .collect();
        let model = self.model.as_mut().expect("model exists once a grid was seen");
        let err = model.update(&rows);
        self.updates += 1;
        self.last_error = err;
        if self.updates == 1 {
            self.err_fast = err;
            self.err_slow = err;
        } else {
            self.err_fast += 0.3 * (err - self.err_fast);
            self.err_slow += 0.02 * (err - self.err_slow);
        }
        if self.updates > 20 && self.err_fast > SPIKE_FACTOR * self.err_slow + 1e-3 {
            self.spike_run += 1;
        } else {
            self.spike_run = 0;
        }
        if self.spike_run >= SPIKE_TICKS {
            model.reset();
            self.resets += 1;
            self.spike_run = 0;
            self.err_slow = self.err_fast;
        }
    }

    fn choose(&mut self, grid: &[f64]) -> Vec<f64> {
        let dim = self.body.dim;
        let zero = vec![0.0; dim];
        let Some(target) = self.target.as_ref() else {
            return zero;
        };
        let here = distance(grid, target).unwrap_or(0.0);
        if here == 0.0 {
            return zero;
        }
        let model = self.model.as_ref().expect("model");
        let predicted = |push: &[f64]| {
            let rows = self.rows(grid, &self.motion(push));
            let next: Vec<f64> = grid.iter().zip(&rows).map(|(g, x)| g + model.predict(x)[0]).collect();
            distance(&next, target).unwrap_or(f64::INFINITY)
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for axis in 0..dim {
            for sign in [1.0, -1.0] {
                let mut push = zero.clone();
                push[axis] = sign;
                let d = predicted(&push);
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, push));
                }
            }
        }
        let rng = self.rng.as_mut().expect("seeded");
        if rng.next_f64() < EXPLORE {
            let k = rng.below(2 * dim as u64) as usize;
            let mut push = zero;
            push[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            return push;
        }
        match best {
            Some((d, push)) if d < here => push,
            _ => zero,
        }
    }
}

impl Mind for GreedyAgent {
    fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>> {
        match msg {
            HarnessMsg::Hello { resolution, .. } => {
                let (body, seed) = Embodiment::from_hello(msg).expect("hello");
                let dim = body.dim;
                *self = Self {
                    body,
                    resolution: *resolution,
                    rng: Some(Stream::new(seed).split("agent")),
                    model: Some(Ewls::new(1, 2 * dim, FORGETTING, RIDGE)),
                    prev_motion: vec![0.0; 2 * dim],
                    velocity: vec![0.0; dim],
                    ..Self::default()
                };
                Ok(vec![hello("greedy")])
            }
            HarnessMsg::Problem { target, .. } => {
                self.target = Some(target.clone());
                Ok(Vec::new())
            }
            HarnessMsg::Score { .. } => {
                self.target = None;
                Ok(Vec::new())
            }
            HarnessMsg::Observation { tick, grid, .. } => {
                self.learn(grid);
                let push = self.choose(grid);
                let force = &Vector::from_slice(&push) * self.body.f_max;
                let forces = if push.iter().all(|&p| p == 0.0) {
                    ForceMap::new()
                } else {
                    self.body.uniform(&force)
                };
                self.prev_motion = self.motion(&push);
                self.velocity = self.prev_motion[self.body.dim..].to_vec();
                self.prev_grid = Some(grid.clone());
                let m = self.model.as_ref().map_or(0, Ewls::size);
                Ok(vec![
                    AgentMsg::Resources { m, c: self.updates },
                    AgentMsg::action(*tick, &forces),
                ])
            }
            HarnessMsg::Bye { .. } => Ok(Vec::new()),
        }
    }
}

/// Replays the scriptor's hidden action series verbatim. Harness-internal only.
#[derive(Debug, Default)]
pub struct OracleAgent {
    queue: VecDeque<ForceMap>,
}

impl OracleAgent {
    /// The remaining actions of the current script.
    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

impl Mind for OracleAgent {
    fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>> {
        Ok(match msg {
            HarnessMsg::Hello { .. } => vec![hello("oracle")],
            HarnessMsg::Observation { tick, .. } => {
                let forces = self.queue.pop_front().unwrap_or_default();
                vec![AgentMsg::action(*tick, &forces)]
            }
            HarnessMsg::Score { .. } => {
                self.queue.clear();
                Vec::new()
            }
            _ => Vec::new(),
        })
    }

    fn reveal_script(&mut self, script: &[ForceMap]) {
        self.queue = script.iter().cloned().collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interface::BodyMode;

    fn hello_msg(seed: u64) -> HarnessMsg {
        HarnessMsg::Hello {
            protocol: PROTOCOL_VERSION,
            agent_id: 0,
            seed,
            dim: 2,
            resolution: 2,
            f_max: 0.5,
            members: vec![3],
            body_mode: BodyMode::Fixed,
        }
    }

    fn obs(tick: u64, grid: Vec<f64>) -> HarnessMsg {
        HarnessMsg::Observation {
            tick,
            resolution: 2,
            grid,
            integrity: 1.0,
        }
    }

    fn action_of(replies: &[AgentMsg]) -> BTreeMap<u64, Vec<f64>> {
        match replies.last() {
            Some(AgentMsg::Action { forces, .. }) => forces.clone(),
            other => panic!("expected action, got {other:?}"),
        }
    }

    use std::collections::BTreeMap;

    #[test]
    fn null_agent_never_pushes() {
        let mut a = NullAgent::default();
        a.on_message(&hello_msg(1)).unwrap();
        for t in 0..10 {
            let r = a.on_message(&obs(t, vec![t as f64; 8])).unwrap();
            assert!(action_of(&r).is_empty());
        }
    }

    #[test]
    fn random_agent_is_seeded_and_bounded() {
        let mut a = RandomAgent::default();
        let mut b = RandomAgent::default();
        a.on_message(&hello_msg(7)).unwrap();
        b.on_message(&hello_msg(7)).unwrap();
        let mut sum = [0.0; 2];
        for t in 0..1000 {
            let ra = action_of(&a.on_message(&obs(t, vec![0.0; 8])).unwrap());
            let rb = action_of(&b.on_message(&obs(t, vec![0.0; 8])).unwrap());
            assert_eq!(ra, rb);
            let f = &ra[&3];
            assert!(Vector::from_slice(f).norm() <= 0.5);
            sum[0] += f[0];
            sum[1] += f[1];
        }
        for s in sum {
            assert!((s / 1000.0).abs() < 0.05 * 0.5);
        }
    }

    #[test]
    fn greedy_rests_on_target() {
        let mut a = GreedyAgent::default();
        a.on_message(&hello_msg(2)).unwrap();
        let grid = vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0];
        a.on_message(&HarnessMsg::Problem {
            id: 0,
            issued_tick: 0,
            resolution: 2,
            target: grid.clone(),
            epsilon: 0.1,
            timeout: 10,
        })
        .unwrap();
        for t in 0..5 {
            let r = a.on_message(&obs(t, grid.clone())).unwrap();
            assert!(action_of(&r).is_empty());
        }
    }

    #[test]
    fn regression_recovers_a_linear_map() {
        let mut m = Ewls::new(2, 3, 1.0, 1e-9);
        let mut rng = Stream::new(5);
        for _ in 0..50 {
            let rows: Vec<_> = (0..4)
                .map(|_| {
                    let x = vec![1.0, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
                    let y = vec![0.5 + 2.0 * x[1], -x[2]];
                    (x, y)
                })
                .collect();
            m.update(&rows);
        }
        let p = m.predict(&[1.0, 0.5, 0.25]);
        assert!((p[0] - 1.5).abs() < 1e-5 && (p[1] + 0.25).abs() < 1e-5);
    }

    #[test]
    fn oracle_replays_then_idles() {
        let mut o = OracleAgent::default();
        let mut f = ForceMap::new();
        f.insert(3, Vector::from_slice(&[0.1, 0.2]));
        o.reveal_script(&[f.clone(), f.clone()]);
        assert_eq!(o.pending(), 2);
        for t in 0..3 {
            let r = o.on_message(&obs(t, vec![0.0; 8])).unwrap();
            let a = action_of(&r);
            assert_eq!(a.is_empty(), t == 2);
        }
    }
}
