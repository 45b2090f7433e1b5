//! Episode orchestration and the two evaluation stages.
//!
//! One tick of an episode:
//!
//! 1. every idle agent is issued a fresh problem,
//! 2. agents sense and act in id order,
//! 3. the world steps once under the combined forces,
//! 4. open problems are checked for solve or timeout and scored on closure,
//! 5. each agent's cumulative score is sampled.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, OracleAgent};
use crate::dynamics::{snapshot_hash, step, ForceMap, StepParams};
use crate::error::{config, contract, Error, Result};
use crate::interface::{act, import_bodies, sense, update_integrity, Body, BodyMode, StressConfig};
use crate::metrics::{adaptation_report, AdaptationReport, MetricParams, ScoreStream};
use crate::problems::{
    check_solved, generate_problem, score, ProblemConfig, ProblemContext, ScoreInputs, ScoreParams, ScriptedProblem,
    SolveRecord,
};
use crate::protocol::{action_from_forces, AgentMsg, HarnessMsg, Mind, ProcessMind, PROTOCOL_VERSION};
use crate::report;
use crate::rng::{derive_seed, Stream};
use crate::trace::{wire_forces, EventKind, Trace, TraceHeader, CHECKPOINT_EVERY};
use crate::worldgen::{generate_world, GenSpec, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyConfig {
    /// Entities per body when bodies are picked automatically.
    pub size: usize,
    pub mode: BodyMode,
    pub window_halfwidth: f64,
    pub resolution: usize,
    pub f_max: f64,
    pub stress: StressConfig,
    /// Explicit member ids per agent; empty picks bodies automatically.
    pub members: Vec<Vec<u64>>,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            size: 1,
            mode: BodyMode::Fixed,
            window_halfwidth: 4.0,
            resolution: 4,
            f_max: 0.3,
            stress: StressConfig::default(),
            members: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Regimes per episode; each lasts `problems_per_regime * timeout` ticks.
    pub n_regimes: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { n_regimes: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub gen: GenSpec,
    pub step: StepParams,
    pub body: BodyConfig,
    pub problems: ProblemConfig,
    pub schedule: ScheduleConfig,
    pub scoring: ScoreParams,
    pub metrics: MetricParams,
    /// Master seed for agent-side randomness.
    pub agent_seed: u64,
    /// Wall-clock reply budget per tick for subprocess agents.
    pub tick_budget_ms: u64,
    /// Parameter retries behind this run, echoed into reports.
    pub retries: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            gen: GenSpec::default(),
            step: StepParams::default(),
            body: BodyConfig::default(),
            problems: ProblemConfig::default(),
            schedule: ScheduleConfig::default(),
            scoring: ScoreParams::default(),
            metrics: MetricParams::default(),
            agent_seed: 0,
            tick_budget_ms: 50,
            retries: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.step.validate()?;
        self.problems.validate()?;
        self.metrics.weights.validate()?;
        if self.schedule.n_regimes == 0 {
            return config("schedule.n_regimes must be >= 1");
        }
        if self.body.size == 0 {
            return config("body.size must be >= 1");
        }
        if self.body.resolution == 0 {
            return config("body.resolution must be >= 1");
        }
        if !(self.body.f_max >= 0.0) {
            return config("body.f_max must be >= 0");
        }
        if !(self.body.window_halfwidth > 0.0) {
            return config("body.window_halfwidth must be > 0");
        }
        if self.gen.drift.regime_times.iter().any(|&t| t == 0 || t >= self.episode_len()) {
            return config("gen.drift.regime_times must lie strictly inside the episode");
        }
        Ok(())
    }

    pub fn regime_len(&self) -> u64 {
        self.problems.problems_per_regime * self.problems.timeout
    }

    pub fn episode_len(&self) -> u64 {
        self.regime_len() * self.schedule.n_regimes
    }

    /// The generation spec with the regime schedule filled in, unless the
    /// config lists regime times explicitly.
    pub fn resolved_gen(&self) -> GenSpec {
        let mut gen = self.gen.clone();
        if gen.drift.regime_times.is_empty() {
            gen.drift.regime_times = (1..self.schedule.n_regimes).map(|k| k * self.regime_len()).collect();
        }
        gen.drift.regime_times.sort_unstable();
        gen.drift.regime_times.dedup();
        gen
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.gen.seed = seed;
        cfg
    }
}

/// One seat at the table.
pub struct Participant {
    pub label: String,
    mind: Option<Box<dyn Mind>>,
    privileged: bool,
}

impl Participant {
    pub fn builtin(kind: AgentKind) -> Self {
        Self {
            label: kind.name().into(),
            mind: Some(kind.build()),
            privileged: false,
        }
    }

    pub fn command(command: &str, tick_budget: Duration) -> Result<Self> {
        Ok(Self {
            label: command.into(),
            mind: Some(Box::new(ProcessMind::spawn(command, tick_budget)?)),
            privileged: false,
        })
    }

    /// `builtin:<kind>` runs in-process, anything else is spawned.
    pub fn from_spec(spec: &str, tick_budget: Duration) -> Result<Self> {
        match spec.strip_prefix("builtin:") {
            Some(kind) => Ok(Self::builtin(kind.parse()?)),
            None => Self::command(spec, tick_budget),
        }
    }

    pub fn custom(label: impl Into<String>, mind: Box<dyn Mind>) -> Self {
        Self {
            label: label.into(),
            mind: Some(mind),
            privileged: false,
        }
    }

    /// Replays each problem's hidden script. Never allowed in evaluations.
    pub fn oracle() -> Self {
        Self {
            label: "oracle".into(),
            mind: Some(Box::new(OracleAgent::default())),
            privileged: true,
        }
    }

    /// A body without a mind: its entities stay in the world as passive matter.
    pub fn vacant() -> Self {
        Self {
            label: "vacant".into(),
            mind: None,
            privileged: false,
        }
    }

    pub fn is_vacant(&self) -> bool {
        self.mind.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutcome {
    pub agent_id: u32,
    pub label: String,
    pub body: Vec<u64>,
    pub stream: ScoreStream,
    pub records: Vec<SolveRecord>,
    pub senses: u64,
    pub timeouts: u64,
    pub m: u64,
    pub c: u64,
    pub violation: Option<String>,
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub agents: Vec<AgentOutcome>,
    pub trace: Trace,
    pub drift_marks: Vec<u64>,
    pub final_world: World,
    /// Set when the episode stopped early on a protocol violation.
    pub aborted: Option<String>,
}

impl EpisodeOutcome {
    pub fn final_hash(&self) -> String {
        snapshot_hash(&self.final_world)
    }

    pub fn live_trace(&self) -> String {
        self.trace.live().to_ndjson()
    }

    pub fn disclosure_trace(&self) -> String {
        self.trace.to_ndjson()
    }

    pub fn reports(&self, params: &MetricParams, retries: u32) -> Result<Vec<AdaptationReport>> {
        self.agents
            .iter()
            .filter(|a| a.label != "vacant")
            .map(|a| adaptation_report(&a.stream, params, a.agent_id, retries))
            .collect()
    }
}

struct OpenProblem {
    scripted: ScriptedProblem,
    o: u64,
}

struct Seat {
    id: u32,
    label: String,
    mind: Option<Box<dyn Mind>>,
    privileged: bool,
    body: Body,
    rng: Stream,
    open: Option<OpenProblem>,
    next_problem: u64,
    m: u64,
    c: u64,
    total: f64,
    samples: Vec<(u64, f64)>,
    records: Vec<SolveRecord>,
    senses: u64,
    acts: u64,
    timeouts: u64,
    violation: Option<String>,
}

fn check_disjoint(bodies: &[Vec<u64>], n_entities: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, b) in bodies.iter().enumerate() {
        if b.is_empty() {
            return config(format!("body {i} is empty"));
        }
        for &id in b {
            if id as usize >= n_entities {
                return config(format!("body {i} names entity {id}, which does not exist"));
            }
            if !seen.insert(id) {
                return config(format!("entity {id} belongs to more than one body"));
            }
        }
    }
    Ok(())
}

fn handshake(seat: &mut Seat, hello: &HarnessMsg) -> Result<()> {
    let Some(mind) = seat.mind.as_mut() else {
        return Ok(());
    };
    let replies = mind.on_message(hello).map_err(|e| match e {
        Error::AgentTimeout => Error::Protocol(format!("agent {} did not answer hello", seat.id)),
        other => other,
    })?;
    match replies.as_slice() {
        [AgentMsg::Hello { protocol, .. }] if *protocol == PROTOCOL_VERSION => Ok(()),
        [AgentMsg::Hello { protocol, .. }] => Err(Error::Protocol(format!(
            "agent {} speaks protocol {protocol}, expected {PROTOCOL_VERSION}",
            seat.id
        ))),
        other => Err(Error::Protocol(format!("agent {} answered hello with {other:?}", seat.id))),
    }
}

/// What one agent sent back for one observation.
enum Reply {
    Forces(ForceMap, bool),
    Violation(String),
}

fn exchange(seat: &mut Seat, world: &World, obs: &HarnessMsg, f_max: f64) -> Result<Reply> {
    let mind = seat.mind.as_mut().expect("occupied seat");
    let replies = match mind.on_message(obs) {
        Ok(r) => r,
        Err(Error::AgentTimeout) => {
            seat.timeouts += 1;
            return Ok(Reply::Forces(ForceMap::new(), true));
        }
        Err(Error::Protocol(msg)) => return Ok(Reply::Violation(msg)),
        Err(e) => return Err(e),
    };
    let mut action = None;
    for reply in replies {
        match reply {
            AgentMsg::Resources { m, c } => {
                if m < seat.m || c < seat.c {
                    return Ok(Reply::Violation(format!(
                        "resources went backwards: (m, c) = ({}, {}) -> ({m}, {c})",
                        seat.m, seat.c
                    )));
                }
                seat.m = m;
                seat.c = c;
            }
            AgentMsg::Action { tick, forces } if action.is_none() => {
                if tick != world.tick {
                    return Ok(Reply::Violation(format!("action for tick {tick} during tick {}", world.tick)));
                }
                action = Some(action_from_forces(&forces));
            }
            other => return Ok(Reply::Violation(format!("unexpected reply {other:?}"))),
        }
    }
    let Some(action) = action else {
        return Ok(Reply::Violation("no action for observation".into()));
    };
    match act(world, &seat.body, &action, f_max) {
        Ok(forces) => Ok(Reply::Forces(forces, false)),
        Err(Error::Contract(msg)) => Ok(Reply::Violation(msg)),
        Err(e) => Err(e),
    }
}

fn close(seat: &mut Seat, trace: &mut Trace, tick: u64, solved: bool, reason: &str, scoring: &ScoreParams) -> Result<SolveRecord> {
    let open = seat.open.take().expect("open problem");
    let p = &open.scripted.problem;
    let d = tick - p.issued_tick;
    let (s, s_norm) = if reason == "violation" {
        (0.0, 0.0)
    } else {
        score(
            &ScoreInputs {
                solved,
                o: open.o,
                d,
                m: seat.m,
                c: seat.c,
            },
            &p.calib,
            scoring,
        )?
    };
    let record = SolveRecord {
        problem_id: p.id,
        solved,
        o: open.o,
        d,
        m: seat.m,
        c: seat.c,
        s,
        s_norm,
    };
    trace.push(
        tick,
        EventKind::ProblemClosed {
            agent: seat.id,
            problem_id: p.id,
            solved,
            o: open.o,
            d,
            reason: reason.into(),
        },
    );
    trace.push(tick, EventKind::Score { agent: seat.id, record });
    seat.total += s_norm;
    seat.records.push(record);
    Ok(record)
}

fn score_msg(r: &SolveRecord) -> HarnessMsg {
    HarnessMsg::Score {
        problem_id: r.problem_id,
        solved: r.solved,
        o: r.o,
        d: r.d,
        m: r.m,
        c: r.c,
        s: r.s,
        s_norm: r.s_norm,
    }
}

/// Runs one episode with the given participants in seat order.
pub fn run_episode(cfg: &EpisodeConfig, participants: Vec<Participant>) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    if participants.iter().all(Participant::is_vacant) {
        return config("an episode needs at least one agent");
    }
    let gen = cfg.resolved_gen();
    let mut world = generate_world(&gen)?;
    let bodies = if cfg.body.members.is_empty() {
        import_bodies(&world, participants.len(), cfg.body.size)?
    } else {
        if cfg.body.members.len() != participants.len() {
            return config(format!(
                "{} bodies configured for {} agents",
                cfg.body.members.len(),
                participants.len()
            ));
        }
        cfg.body.members.clone()
    };
    check_disjoint(&bodies, world.entities.len())?;

    let problem_root = Stream::new(gen.seed).split("problems");
    let mut seats = participants
        .into_iter()
        .zip(&bodies)
        .enumerate()
        .map(|(i, (p, members))| {
            Ok(Seat {
                id: i as u32,
                label: p.label,
                mind: p.mind,
                privileged: p.privileged,
                body: Body::new(members.iter().copied(), cfg.body.mode, cfg.body.window_halfwidth)?,
                rng: problem_root.split_index(i as u64),
                open: None,
                next_problem: 0,
                m: 0,
                c: 0,
                total: 0.0,
                samples: vec![(0, 0.0)],
                records: Vec::new(),
                senses: 0,
                acts: 0,
                timeouts: 0,
                violation: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace = Trace::new(TraceHeader::new(cfg.step, cfg.body.f_max));
    trace.push(
        0,
        EventKind::WorldInit {
            hash: snapshot_hash(&world),
            n_entities: world.entities.len(),
            n_levels: world.n_levels(),
            dim: world.dim(),
            bodies: bodies.clone(),
            body_mode: cfg.body.mode,
            resolution: cfg.body.resolution,
            world: Some(Box::new(world.clone())),
        },
    );

    for seat in seats.iter_mut() {
        let hello = HarnessMsg::Hello {
            protocol: PROTOCOL_VERSION,
            agent_id: seat.id,
            seed: derive_seed(cfg.agent_seed, seat.id as u64),
            dim: world.dim(),
            resolution: cfg.body.resolution,
            f_max: cfg.body.f_max,
            members: seat.body.member_ids.clone(),
            body_mode: cfg.body.mode,
        };
        handshake(seat, &hello)?;
    }

    let all_bodies: Vec<Body> = seats.iter().map(|s| s.body.clone()).collect();
    let episode_len = cfg.episode_len();
    let mut drift_marks = Vec::new();
    let mut aborted = None;

    while world.tick < episode_len && aborted.is_none() {
        let tick = world.tick;
        for i in 0..seats.len() {
            if seats[i].mind.is_none() || seats[i].open.is_some() {
                continue;
            }
            let ctx = ProblemContext {
                bodies: &all_bodies,
                owner: i,
                resolution: cfg.body.resolution,
                f_max: cfg.body.f_max,
                params: &cfg.step,
            };
            let seat = &mut seats[i];
            let scripted = generate_problem(&world, seat.next_problem, &ctx, &cfg.problems, &mut seat.rng)?;
            seat.next_problem += 1;
            let p = &scripted.problem;
            trace.push(
                tick,
                EventKind::ProblemIssued {
                    agent: seat.id,
                    problem_id: p.id,
                    target: p.target.clone(),
                    epsilon: p.epsilon,
                    timeout: p.timeout,
                    p_null: p.calib.p_null,
                    script: Some(scripted.script.iter().map(wire_forces).collect()),
                },
            );
            let msg = HarnessMsg::Problem {
                id: p.id,
                issued_tick: p.issued_tick,
                resolution: p.resolution,
                target: p.target.clone(),
                epsilon: p.epsilon,
                timeout: p.timeout,
            };
            let mind = seat.mind.as_mut().expect("occupied");
            if seat.privileged {
                mind.reveal_script(&scripted.script);
            }
            mind.on_message(&msg)?;
            seat.open = Some(OpenProblem { scripted, o: 0 });
        }

        let mut combined = ForceMap::new();
        for seat in seats.iter_mut() {
            if seat.mind.is_none() {
                continue;
            }
            let obs = sense(&world, &seat.body, cfg.body.resolution, Some(&mut seat.senses));
            if let Some(open) = seat.open.as_mut() {
                open.o += 1;
            }
            trace.push(
                tick,
                EventKind::Sense {
                    agent: seat.id,
                    grid: obs.grid.clone(),
                },
            );
            let msg = HarnessMsg::Observation {
                tick,
                resolution: obs.resolution,
                grid: obs.grid,
                integrity: seat.body.integrity,
            };
            let (forces, substituted) = match exchange(seat, &world, &msg, cfg.body.f_max)? {
                Reply::Forces(f, sub) => (f, sub),
                Reply::Violation(reason) => {
                    seat.violation = Some(reason.clone());
                    aborted = Some(format!("agent {} violated the protocol: {reason}", seat.id));
                    (ForceMap::new(), true)
                }
            };
            trace.push(
                tick,
                EventKind::Act {
                    agent: seat.id,
                    forces: wire_forces(&forces),
                    substituted,
                },
            );
            seat.acts += 1;
            for (id, f) in forces {
                combined.insert(id, f);
            }
        }
        if let Some(s) = seats
            .iter()
            .find(|s| s.mind.is_some() && (s.senses != tick + 1 || s.acts != tick + 1))
        {
            return contract(format!(
                "fairness: agent {} sensed {} and acted {} times in {} ticks",
                s.id,
                s.senses,
                s.acts,
                tick + 1
            ));
        }

        let report = step(&mut world, &combined, &cfg.step)?;
        if let Some(drift) = report.drift {
            drift_marks.push(drift.tick);
            trace.push(
                drift.tick,
                EventKind::Drift {
                    levels: drift.levels,
                    laws: Some(world.laws.clone()),
                },
            );
        }
        let checkpoint = world.tick % CHECKPOINT_EVERY == 0 || world.tick == episode_len;
        trace.push(
            world.tick,
            EventKind::Step {
                hash: checkpoint.then(|| snapshot_hash(&world)),
                world: checkpoint.then(|| Box::new(world.clone())),
            },
        );

        for seat in seats.iter_mut() {
            if seat.mind.is_none() {
                continue;
            }
            if seat.body.mode == BodyMode::Destructible {
                update_integrity(&world, &mut seat.body, &cfg.step, &cfg.body.stress)?;
            }
            let Some(open) = seat.open.as_ref() else { continue };
            let p = &open.scripted.problem;
            let record = if seat.violation.is_some() {
                Some(close(seat, &mut trace, world.tick, false, "violation", &cfg.scoring)?)
            } else if check_solved(&world, &seat.body, p)? {
                Some(close(seat, &mut trace, world.tick, true, "solved", &cfg.scoring)?)
            } else if world.tick - p.issued_tick >= p.timeout {
                Some(close(seat, &mut trace, world.tick, false, "timeout", &cfg.scoring)?)
            } else {
                None
            };
            if let (Some(r), None) = (record, seat.violation.as_ref()) {
                seat.mind.as_mut().expect("occupied").on_message(&score_msg(&r))?;
            }
            seat.samples.push((world.tick, seat.total));
        }
    }

    for seat in seats.iter_mut() {
        if seat.open.is_some() {
            close(seat, &mut trace, world.tick, false, "episode_end", &cfg.scoring)?;
            if let Some(last) = seat.samples.last_mut() {
                last.1 = seat.total;
            }
        }
        if let Some(mind) = seat.mind.as_mut() {
            let reason = aborted.clone().unwrap_or_else(|| "episode complete".into());
            let _ = mind.on_message(&HarnessMsg::Bye { reason });
        }
    }
    trace.push(
        world.tick,
        EventKind::EpisodeEnd {
            hash: snapshot_hash(&world),
            episode_len,
            drift_marks: drift_marks.clone(),
            reason: aborted.clone().unwrap_or_else(|| "complete".into()),
            timeouts: seats.iter().map(|s| s.timeouts).collect(),
        },
    );

    let agents = seats
        .into_iter()
        .map(|s| AgentOutcome {
            agent_id: s.id,
            label: s.label,
            body: s.body.member_ids,
            stream: ScoreStream {
                samples: s.samples,
                drift_marks: drift_marks.clone(),
                episode_len,
            },
            records: s.records,
            senses: s.senses,
            timeouts: s.timeouts,
            m: s.m,
            c: s.c,
            violation: s.violation,
        })
        .collect();
    Ok(EpisodeOutcome {
        seed: gen.seed,
        agents,
        trace,
        drift_marks,
        final_world: world,
        aborted,
    })
}

fn reject_privileged(participants: &[Participant]) -> Result<()> {
    if let Some(p) = participants.iter().find(|p| p.privileged) {
        return contract(format!("`{}` sees hidden scripts and cannot take part in an evaluation", p.label));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct WorldResult {
    pub seed: u64,
    pub report: AdaptationReport,
    pub total_score: f64,
    pub solved: usize,
    pub problems: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub i: f64,
}

#[derive(Clone, Debug)]
pub struct Stage1Result {
    pub worlds: Vec<WorldResult>,
    pub aggregate: Aggregate,
    pub outcomes: Vec<EpisodeOutcome>,
}

/// Seeds for a stage-1 run: `derive_seed(master, k)` for `k < n_worlds`.
pub fn stage1_seeds(master: u64, n_worlds: usize) -> Vec<u64> {
    (0..n_worlds as u64).map(|k| derive_seed(master, k)).collect()
}

/// Solo evaluation: one episode per derived world seed, run in parallel.
pub fn run_stage1<F>(cfg: &EpisodeConfig, agent: F, n_worlds: usize) -> Result<Stage1Result>
where
    F: Fn() -> Result<Participant> + Sync,
{
    if n_worlds == 0 {
        return config("stage 1 needs at least one world");
    }
    cfg.validate()?;
    let seeds = stage1_seeds(cfg.gen.seed, n_worlds);
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let participant = agent()?;
            reject_privileged(std::slice::from_ref(&participant))?;
            run_episode(&cfg.with_seed(seed), vec![participant])
        })
        .collect::<Result<Vec<_>>>()?;
    let worlds = outcomes
        .iter()
        .map(|o| {
            let a = &o.agents[0];
            Ok(WorldResult {
                seed: o.seed,
                report: adaptation_report(&a.stream, &cfg.metrics, a.agent_id, cfg.retries)?,
                total_score: a.stream.total(),
                solved: a.records.iter().filter(|r| r.solved).count(),
                problems: a.records.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = worlds.len() as f64;
    let mean = |f: fn(&AdaptationReport) -> f64| worlds.iter().map(|w| f(&w.report)).sum::<f64>() / n;
    let aggregate = Aggregate {
        alpha: mean(|r| r.alpha),
        beta: mean(|r| r.beta),
        gamma: mean(|r| r.gamma),
        i: mean(|r| r.i),
    };
    Ok(Stage1Result {
        worlds,
        aggregate,
        outcomes,
    })
}

#[derive(Clone, Debug)]
pub struct Stage2Result {
    pub reports: Vec<AdaptationReport>,
    pub ranking: Vec<AdaptationReport>,
    pub outcome: EpisodeOutcome,
}

/// Shared-world evaluation: all agents in one episode, ranked by `I`.
pub fn run_stage2(cfg: &EpisodeConfig, participants: Vec<Participant>) -> Result<Stage2Result> {
    reject_privileged(&participants)?;
    if participants.iter().filter(|p| !p.is_vacant()).count() < 2 {
        return config("stage 2 needs at least two agents");
    }
    let outcome = run_episode(cfg, participants)?;
    let reports = outcome.reports(&cfg.metrics, cfg.retries)?;
    let ranking = crate::metrics::relative_rank(&reports);
    Ok(Stage2Result {
        reports,
        ranking,
        outcome,
    })
}

/// Refuses to reuse a non-empty output directory unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Files written for one episode.
pub fn write_episode(dir: &Path, outcome: &EpisodeOutcome, reports: &[AdaptationReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put("trace.live.jsonl".into(), outcome.live_trace().into_bytes())?;
    put("trace.disclosure.jsonl".into(), outcome.disclosure_trace().into_bytes())?;
    for a in &outcome.agents {
        if a.label == "vacant" {
            continue;
        }
        put(format!("scores-{}.csv", a.agent_id), report::score_csv(&a.stream)?.into_bytes())?;
    }
    let labels: Vec<(u32, String)> = outcome.agents.iter().map(|a| (a.agent_id, a.label.clone())).collect();
    put("report.csv".into(), report::report_csv(reports, &labels)?.into_bytes())?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quick() -> EpisodeConfig {
        let mut cfg = EpisodeConfig::default();
        cfg.gen.n_entities = 12;
        cfg.problems.problems_per_regime = 2;
        cfg.problems.timeout = 16;
        cfg.problems.scriptor_len = 4;
        cfg.problems.null_rollouts = 2;
        cfg.metrics.window = 4;
        cfg.metrics.pre_win = 8;
        cfg.metrics.post_win = 8;
        cfg
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = EpisodeConfig::default();
        assert_eq!(EpisodeConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(EpisodeConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn schedule_fills_regime_times() {
        let cfg = quick();
        assert_eq!(cfg.regime_len(), 32);
        assert_eq!(cfg.resolved_gen().drift.regime_times, vec![32, 64]);
    }

    #[test]
    fn null_episode_scores_nothing_and_senses_every_tick() {
        let cfg = quick();
        let out = run_episode(&cfg, vec![Participant::builtin(AgentKind::Null)]).unwrap();
        let a = &out.agents[0];
        assert_eq!(a.stream.total(), 0.0);
        assert_eq!(a.senses, cfg.episode_len());
        assert_eq!(out.trace.sense_count(0), a.senses);
        assert_eq!(out.drift_marks, vec![32, 64]);
        assert_eq!(a.stream.samples.len() as u64, cfg.episode_len() + 1);
    }

    #[test]
    fn recorded_o_matches_sense_events() {
        let out = run_episode(&quick(), vec![Participant::builtin(AgentKind::Greedy)]).unwrap();
        let a = &out.agents[0];
        let mut o_from_trace = 0;
        let mut open = false;
        for e in &out.trace.events {
            match e.event {
                EventKind::ProblemIssued { .. } => open = true,
                EventKind::Sense { .. } if open => o_from_trace += 1,
                EventKind::ProblemClosed { .. } => open = false,
                _ => {}
            }
        }
        assert_eq!(a.records.iter().map(|r| r.o).sum::<u64>(), o_from_trace);
    }

    #[test]
    fn live_trace_rebuilds_the_score_streams() {
        let out = run_episode(&quick(), vec![Participant::builtin(AgentKind::Greedy)]).unwrap();
        let live = Trace::parse(&out.live_trace()).unwrap();
        let rebuilt = report::streams_from_trace(&live).unwrap();
        assert_eq!(rebuilt, vec![(0, out.agents[0].stream.clone())]);
    }

    #[test]
    fn overlapping_bodies_are_rejected() {
        let mut cfg = quick();
        cfg.body.members = vec![vec![0, 1], vec![1, 2]];
        let err = run_episode(
            &cfg,
            vec![Participant::builtin(AgentKind::Null), Participant::builtin(AgentKind::Null)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn oracle_is_kept_out_of_evaluations() {
        let err = run_stage2(&quick(), vec![Participant::oracle(), Participant::builtin(AgentKind::Null)]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(run_stage1(&quick(), || Ok(Participant::oracle()), 1).is_err());
    }

    #[test]
    fn two_null_agents_tie_and_lower_id_wins() {
        let r = run_stage2(
            &quick(),
            vec![Participant::builtin(AgentKind::Null), Participant::builtin(AgentKind::Null)],
        )
        .unwrap();
        assert_eq!(r.ranking[0].i, r.ranking[1].i);
        assert_eq!(r.ranking[0].agent_id, 0);
    }

    struct Liar;
    impl Mind for Liar {
        fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>> {
            Ok(match msg {
                HarnessMsg::Hello { .. } => vec![AgentMsg::Hello {
                    protocol: PROTOCOL_VERSION,
                    name: "liar".into(),
                }],
                HarnessMsg::Observation { tick, .. } => vec![AgentMsg::Action {
                    tick: tick + 3,
                    forces: Default::default(),
                }],
                _ => vec![],
            })
        }
    }

    #[test]
    fn protocol_violation_aborts_with_zero_score() {
        let out = run_episode(&quick(), vec![Participant::custom("liar", Box::new(Liar))]).unwrap();
        assert!(out.aborted.is_some());
        let a = &out.agents[0];
        assert!(a.violation.is_some());
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].s, 0.0);
    }

    #[test]
    fn occupied_out_dir_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), b"1").unwrap();
        assert!(matches!(prepare_out_dir(dir.path(), false), Err(Error::OutputExists(_))));
        prepare_out_dir(dir.path(), true).unwrap();
    }
}
