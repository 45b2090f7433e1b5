//! Episode traces: the live (redacted) stream and the post-hoc disclosure.
//!
//! Both are NDJSON: a header line, then one event per line. The two files are
//! index-aligned; the live one is the disclosure with every secret payload
//! stripped and `redacted` set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dynamics::{snapshot_hash, step, ForceMap, StepParams};
use crate::error::{Error, Result};
use crate::interface::BodyMode;
use crate::problems::SolveRecord;
use crate::rng::STREAM_ALGORITHM;
use crate::vector::Vector;
use crate::worldgen::{CausationLaw, World};

pub const TRACE_FORMAT: &str = "openworld-trace";
pub const TRACE_VERSION: u32 = 1;
/// Ticks between snapshot hashes.
pub const CHECKPOINT_EVERY: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub stream_algorithm: String,
    pub step: StepParams,
    pub f_max: f64,
    pub disclosure: bool,
}

impl TraceHeader {
    pub fn new(step: StepParams, f_max: f64) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            stream_algorithm: STREAM_ALGORITHM.into(),
            step,
            f_max,
            disclosure: true,
        }
    }
}

pub type WireForces = BTreeMap<u64, Vec<f64>>;

pub fn wire_forces(forces: &ForceMap) -> WireForces {
    forces.iter().map(|(&id, f)| (id, f.as_slice().to_vec())).collect()
}

fn force_map(forces: &WireForces) -> ForceMap {
    forces.iter().map(|(&id, f)| (id, Vector::from_slice(f))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    WorldInit {
        hash: String,
        n_entities: usize,
        n_levels: usize,
        dim: usize,
        bodies: Vec<Vec<u64>>,
        body_mode: BodyMode,
        resolution: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        world: Option<Box<World>>,
    },
    Sense {
        agent: u32,
        grid: Vec<f64>,
    },
    Act {
        agent: u32,
        forces: WireForces,
        substituted: bool,
    },
    Step {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hash: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        world: Option<Box<World>>,
    },
    Drift {
        levels: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        laws: Option<Vec<CausationLaw>>,
    },
    ProblemIssued {
        agent: u32,
        problem_id: u64,
        target: Vec<f64>,
        epsilon: f64,
        timeout: u64,
        p_null: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<Vec<WireForces>>,
    },
    ProblemClosed {
        agent: u32,
        problem_id: u64,
        solved: bool,
        o: u64,
        d: u64,
        reason: String,
    },
    Score {
        agent: u32,
        record: SolveRecord,
    },
    EpisodeEnd {
        hash: String,
        episode_len: u64,
        drift_marks: Vec<u64>,
        reason: String,
        timeouts: Vec<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub tick: u64,
    pub redacted: bool,
    pub event: EventKind,
}

impl TraceEvent {
    /// The live view of this event.
    pub fn redact(&self) -> TraceEvent {
        let mut event = self.event.clone();
        let redacted = match &mut event {
            EventKind::WorldInit { world, .. } | EventKind::Step { world, .. } => world.take().is_some(),
            EventKind::Drift { laws, .. } => laws.take().is_some(),
            EventKind::ProblemIssued { script, .. } => script.take().is_some(),
            _ => false,
        };
        TraceEvent {
            tick: self.tick,
            redacted: self.redacted || redacted,
            event,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header: Some(header),
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, tick: u64, event: EventKind) {
        self.events.push(TraceEvent {
            tick,
            redacted: false,
            event,
        });
    }

    pub fn live(&self) -> Trace {
        Trace {
            header: self.header.clone().map(|h| TraceHeader { disclosure: false, ..h }),
            events: self.events.iter().map(TraceEvent::redact).collect(),
        }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&serde_json::to_string(h).expect("header serializes"));
            out.push('\n');
        }
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Malformed("empty trace".into()))?;
        let header: TraceHeader =
            serde_json::from_str(first).map_err(|e| Error::Malformed(format!("line 1: bad trace header: {e}")))?;
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(Error::Malformed(format!(
                "line 1: unsupported trace format {} v{}",
                header.format, header.version
            )));
        }
        let events = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Malformed(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<TraceEvent>>>()?;
        Ok(Trace {
            header: Some(header),
            events,
        })
    }

    /// Number of `sense` events for `agent`.
    pub fn sense_count(&self, agent: u32) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e.event, EventKind::Sense { agent: a, .. } if a == agent))
            .count() as u64
    }

    pub fn drift_marks(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|e| matches!(e.event, EventKind::Drift { .. }).then_some(e.tick))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok { ticks: u64, checkpoints: usize },
    Fail { tick: u64, reason: String },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok { .. })
    }
}

fn fail(tick: u64, reason: impl Into<String>) -> Verdict {
    Verdict::Fail {
        tick,
        reason: reason.into(),
    }
}

/// Re-simulates a disclosure trace from its initial world, applying the
/// recorded actions, and checks every recorded snapshot and hash.
pub fn replay(trace: &Trace) -> Verdict {
    let Some(header) = &trace.header else {
        return fail(0, "missing header");
    };
    if !header.disclosure {
        return fail(0, "live traces carry no world state; replay needs the disclosure trace");
    }
    let mut events = trace.events.iter();
    let mut world = match events.next().map(|e| &e.event) {
        Some(EventKind::WorldInit {
            hash, world: Some(w), ..
        }) => {
            let w = (**w).clone();
            if &snapshot_hash(&w) != hash {
                return fail(w.tick, "initial world does not match its recorded hash");
            }
            w
        }
        _ => return fail(0, "first record is not a disclosed world_init"),
    };
    let mut pending = ForceMap::new();
    let mut checkpoints = 0;
    for e in events {
        match &e.event {
            EventKind::Act { forces, .. } => {
                if e.tick != world.tick {
                    return fail(e.tick, format!("act recorded for tick {} while world is at {}", e.tick, world.tick));
                }
                for (id, f) in force_map(forces) {
                    pending
                        .entry(id)
                        .and_modify(|acc| *acc = &*acc + &f)
                        .or_insert(f);
                }
            }
            EventKind::Step { hash, world: recorded } => {
                if let Err(err) = step(&mut world, &std::mem::take(&mut pending), &header.step) {
                    return fail(world.tick, format!("step rejected: {err}"));
                }
                if e.tick != world.tick {
                    return fail(e.tick, format!("step record for tick {} but world reached {}", e.tick, world.tick));
                }
                if let Some(recorded) = recorded {
                    if **recorded != world {
                        return fail(e.tick, "world state diverges from recorded snapshot");
                    }
                }
                if let Some(hash) = hash {
                    checkpoints += 1;
                    if &snapshot_hash(&world) != hash {
                        return fail(e.tick, "snapshot hash mismatch");
                    }
                }
            }
            EventKind::EpisodeEnd { hash, .. } => {
                if &snapshot_hash(&world) != hash {
                    return fail(e.tick, "final snapshot hash mismatch");
                }
                return Verdict::Ok {
                    ticks: world.tick,
                    checkpoints,
                };
            }
            _ => {}
        }
    }
    fail(world.tick, "trace truncated: no episode_end record")
}

/// JSON keys that only a disclosure trace may contain.
pub const SECRET_KEYS: [&str; 6] = ["\"world\"", "\"laws\"", "\"script\"", "\"coeff\"", "\"grammar\"", "\"seed\""];

/// Law coefficients appearing anywhere in a disclosure trace, as they are
/// printed in JSON.
pub fn disclosed_coefficients(disclosure: &Trace) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut add = |laws: &[CausationLaw]| {
        for law in laws {
            for c in law.coefficients() {
                if c != 0.0 {
                    out.insert(serde_json::to_string(&c).expect("f64 serializes"));
                }
            }
        }
    };
    for e in &disclosure.events {
        match &e.event {
            EventKind::WorldInit { world: Some(w), .. } | EventKind::Step { world: Some(w), .. } => add(&w.laws),
            EventKind::Drift { laws: Some(l), .. } => add(l),
            _ => {}
        }
    }
    out
}

/// Scans live trace text for secret keys and for any coefficient value.
/// Returns one finding per offending line.
pub fn audit_live(live_text: &str, coefficients: &BTreeSet<String>) -> Vec<String> {
    let mut findings = Vec::new();
    for (i, line) in live_text.lines().enumerate() {
        if let Some(k) = SECRET_KEYS.iter().find(|k| line.contains(*k)) {
            findings.push(format!("line {}: key {k}", i + 1));
        }
        if let Some(c) = coefficients.iter().find(|c| line.contains(c.as_str())) {
            findings.push(format!("line {}: coefficient {c}", i + 1));
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{snapshot_hash, StepParams};
    use crate::worldgen::{generate_world, GenSpec};

    fn small_trace(ticks: u64) -> Trace {
        let spec = GenSpec {
            seed: 4,
            n_entities: 6,
            ..GenSpec::default()
        };
        let params = StepParams::default();
        let mut world = generate_world(&spec).unwrap();
        let mut t = Trace::new(TraceHeader::new(params, 0.3));
        t.push(
            0,
            EventKind::WorldInit {
                hash: snapshot_hash(&world),
                n_entities: 6,
                n_levels: world.n_levels(),
                dim: 2,
                bodies: vec![vec![0]],
                body_mode: BodyMode::Fixed,
                resolution: 2,
                world: Some(Box::new(world.clone())),
            },
        );
        for _ in 0..ticks {
            let mut f = ForceMap::new();
            f.insert(0, Vector::from_slice(&[0.1, 0.0]));
            t.push(
                world.tick,
                EventKind::Act {
                    agent: 0,
                    forces: wire_forces(&f),
                    substituted: false,
                },
            );
            step(&mut world, &f, &params).unwrap();
            let cp = world.tick % 5 == 0;
            t.push(
                world.tick,
                EventKind::Step {
                    hash: cp.then(|| snapshot_hash(&world)),
                    world: cp.then(|| Box::new(world.clone())),
                },
            );
        }
        t.push(
            world.tick,
            EventKind::EpisodeEnd {
                hash: snapshot_hash(&world),
                episode_len: world.tick,
                drift_marks: vec![],
                reason: "complete".into(),
                timeouts: vec![0],
            },
        );
        t
    }

    #[test]
    fn untampered_trace_replays() {
        let t = small_trace(12);
        let parsed = Trace::parse(&t.to_ndjson()).unwrap();
        assert_eq!(parsed, t);
        assert_eq!(replay(&parsed), Verdict::Ok { ticks: 12, checkpoints: 2 });
    }

    #[test]
    fn truncation_and_live_traces_fail() {
        let mut t = small_trace(6);
        assert!(!replay(&t.live()).is_ok());
        t.events.pop();
        match replay(&t) {
            Verdict::Fail { reason, .. } => assert!(reason.contains("truncated")),
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn tampered_checkpoint_fails_at_its_tick() {
        let mut t = small_trace(12);
        for e in t.events.iter_mut() {
            if let EventKind::Step { world: Some(w), .. } = &mut e.event {
                if w.tick == 10 {
                    let v = &mut w.entities[2].velocity[0];
                    *v = f64::from_bits(v.to_bits() ^ 1);
                }
            }
        }
        assert!(matches!(replay(&t), Verdict::Fail { tick: 10, .. }));
    }

    #[test]
    fn live_view_drops_world_state() {
        let t = small_trace(10);
        let live = t.live();
        assert_eq!(live.events.len(), t.events.len());
        let text = live.to_ndjson();
        let coeffs = disclosed_coefficients(&t);
        assert!(audit_live(&text, &coeffs).is_empty());
        assert!(!audit_live(&t.to_ndjson(), &coeffs).is_empty());
    }
}
