//! Reachable `(current, target)` problems, solve detection and scoring.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ForceMap, StepParams};
use crate::error::{config, contract, Result};
use crate::interface::{act, project, Action, Body};
use crate::rng::Stream;
use crate::vector::Vector;
use crate::worldgen::World;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub scriptor_len: u64,
    pub epsilon: f64,
    pub timeout: u64,
    /// Minimum number of problems per regime; sets the regime length.
    pub problems_per_regime: u64,
    pub null_rollouts: usize,
    /// Per-component velocity jitter on non-body entities for rollouts after the first.
    pub rollout_jitter: f64,
    pub max_regenerations: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            scriptor_len: 8,
            epsilon: 0.3,
            timeout: 16,
            problems_per_regime: 48,
            null_rollouts: 8,
            rollout_jitter: 0.02,
            max_regenerations: 8,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return config("problems.epsilon must be > 0");
        }
        if self.timeout == 0 {
            return config("problems.timeout must be > 0");
        }
        if self.problems_per_regime == 0 {
            return config("problems.problems_per_regime must be >= 1");
        }
        if self.null_rollouts == 0 {
            return config("problems.null_rollouts must be >= 1");
        }
        if !(self.rollout_jitter >= 0.0) {
            return config("problems.rollout_jitter must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyCalib {
    pub p_null: f64,
    pub o_ref: f64,
    pub d_ref: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: u64,
    pub issued_tick: u64,
    pub resolution: usize,
    pub target: Vec<f64>,
    pub epsilon: f64,
    pub timeout: u64,
    pub calib: DifficultyCalib,
}

/// A problem together with the hidden action series that reaches its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedProblem {
    pub problem: Problem,
    pub script: Vec<ForceMap>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub problem_id: u64,
    pub solved: bool,
    pub o: u64,
    pub d: u64,
    pub m: u64,
    pub c: u64,
    pub s: f64,
    pub s_norm: f64,
}

/// Everything a problem needs to know about the world it lives in.
#[derive(Clone, Copy, Debug)]
pub struct ProblemContext<'a> {
    pub bodies: &'a [Body],
    /// Index into `bodies` of the body the problem is posed to.
    pub owner: usize,
    pub resolution: usize,
    pub f_max: f64,
    pub params: &'a StepParams,
}

impl ProblemContext<'_> {
    fn body(&self) -> &Body {
        &self.bodies[self.owner]
    }
}

/// Uniform sample from the ball of radius `radius`.
pub fn sample_ball(rng: &mut Stream, dim: usize, radius: f64) -> Vector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let v = Vector::from_slice(&v);
        if v.norm() <= 1.0 {
            return &v * radius;
        }
    }
}

/// Root-mean-square cell difference over both channels.
pub fn distance(current: &[f64], target: &[f64]) -> Result<f64> {
    if current.len() != target.len() || current.is_empty() {
        return contract(format!("grid shapes differ: {} vs {}", current.len(), target.len()));
    }
    let sq: f64 = current.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / current.len() as f64).sqrt())
}

/// Solve test; senses without counting an observation.
pub fn check_solved(world: &World, body: &Body, problem: &Problem) -> Result<bool> {
    let obs = project(world, body, problem.resolution);
    Ok(distance(&obs.grid, &problem.target)? <= problem.epsilon)
}

/// Estimates how often `problem` solves itself with every mind idle.
///
/// Rollout 0 is the exact passive future of `world`; the others perturb
/// non-body velocities. If the exact rollout solves, passivity is certain and
/// `p_null` is 1.
pub fn null_baseline(
    world: &World,
    problem: &Problem,
    ctx: &ProblemContext<'_>,
    cfg: &ProblemConfig,
    rng: &mut Stream,
) -> Result<DifficultyCalib> {
    let k = cfg.null_rollouts;
    if k == 0 {
        return config("null_baseline needs at least one rollout");
    }
    let mut solved = 0usize;
    let mut exact_solved = false;
    for rollout in 0..k {
        let mut clone = world.clone();
        if rollout > 0 && cfg.rollout_jitter > 0.0 {
            for e in clone.entities.iter_mut() {
                if ctx.bodies.iter().any(|b| b.contains(e.id)) {
                    continue;
                }
                for axis in 0..e.velocity.dim() {
                    e.velocity[axis] += rng.uniform(-cfg.rollout_jitter, cfg.rollout_jitter);
                }
            }
        }
        let mut hit = false;
        for _ in 0..problem.timeout {
            step(&mut clone, &ForceMap::new(), ctx.params)?;
            if check_solved(&clone, ctx.body(), problem)? {
                hit = true;
                break;
            }
        }
        if hit {
            solved += 1;
            exact_solved |= rollout == 0;
        }
    }
    let p_null = if exact_solved { 1.0 } else { solved as f64 / k as f64 };
    let reference = cfg.scriptor_len.max(1) as f64;
    Ok(DifficultyCalib {
        p_null,
        o_ref: reference,
        d_ref: reference,
    })
}

/// Issues a problem whose target is the owner's view after a hidden random
/// action series. Works on clones; `world` is never modified.
pub fn generate_problem(
    world: &World,
    id: u64,
    ctx: &ProblemContext<'_>,
    cfg: &ProblemConfig,
    rng: &mut Stream,
) -> Result<ScriptedProblem> {
    let body = ctx.body();
    let current = project(world, body, ctx.resolution);
    let mut attempt = 0;
    let (target, script) = loop {
        let mut clone = world.clone();
        let mut script = Vec::with_capacity(cfg.scriptor_len as usize);
        for _ in 0..cfg.scriptor_len {
            let mut action = Action::zero();
            for &m in &body.member_ids {
                action.forces.insert(m, sample_ball(rng, world.dim(), ctx.f_max));
            }
            let forces = act(&clone, body, &action, ctx.f_max)?;
            step(&mut clone, &forces, ctx.params)?;
            script.push(forces);
        }
        let target = project(&clone, body, ctx.resolution).grid;
        attempt += 1;
        if distance(&current.grid, &target)? > cfg.epsilon || attempt > cfg.max_regenerations {
            break (target, script);
        }
    };
    let mut problem = Problem {
        id,
        issued_tick: world.tick,
        resolution: ctx.resolution,
        target,
        epsilon: cfg.epsilon,
        timeout: cfg.timeout,
        calib: DifficultyCalib {
            p_null: 0.0,
            o_ref: 1.0,
            d_ref: 1.0,
        },
    };
    problem.calib = null_baseline(world, &problem, ctx, cfg, rng)?;
    Ok(ScriptedProblem { problem, script })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    pub s_max: f64,
    pub lambda_m: f64,
    pub lambda_c: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            s_max: 1.0,
            lambda_m: 0.0,
            lambda_c: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreInputs {
    pub solved: bool,
    pub o: u64,
    pub d: u64,
    pub m: u64,
    pub c: u64,
}

/// Raw and resource-normalized score of one closed problem.
pub fn score(inputs: &ScoreInputs, calib: &DifficultyCalib, params: &ScoreParams) -> Result<(f64, f64)> {
    if !(calib.o_ref > 0.0 && calib.d_ref > 0.0) {
        return config("o_ref and d_ref must be > 0");
    }
    if !(params.lambda_m >= 0.0 && params.lambda_c >= 0.0 && params.s_max > 0.0) {
        return config("score lambdas must be >= 0 and s_max > 0");
    }
    if !inputs.solved {
        return Ok((0.0, 0.0));
    }
    let effort = inputs.o as f64 / calib.o_ref + inputs.d as f64 / calib.d_ref;
    let s = params.s_max * (1.0 - calib.p_null.clamp(0.0, 1.0)) * (-effort / 2.0).exp();
    let damp = 1.0 + params.lambda_m * (inputs.m as f64).ln_1p() + params.lambda_c * (inputs.c as f64).ln_1p();
    Ok((s, s / damp))
}
