//! Newline-delimited JSON protocol between the harness and a mind.
//!
//! One message per line, tagged by `type`. Unknown fields are rejected, so a
//! message cannot smuggle anything past the documented schema.
//!
//! ```text
//! harness -> agent   hello | problem | observation | score | bye
//! agent -> harness   hello | resources | action | bye
//! ```
//!
//! After `hello` the agent answers with its own `hello`. After each
//! `observation` it sends zero or more `resources` messages and exactly one
//! `action` carrying the observation's tick. `problem`, `score` and `bye`
//! take no reply.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dynamics::ForceMap;
use crate::error::{Error, Result};
use crate::interface::{Action, BodyMode};
use crate::vector::Vector;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HarnessMsg {
    Hello {
        protocol: u32,
        agent_id: u32,
        seed: u64,
        dim: usize,
        resolution: usize,
        f_max: f64,
        members: Vec<u64>,
        body_mode: BodyMode,
    },
    Problem {
        id: u64,
        issued_tick: u64,
        resolution: usize,
        target: Vec<f64>,
        epsilon: f64,
        timeout: u64,
    },
    Observation {
        tick: u64,
        resolution: usize,
        grid: Vec<f64>,
        integrity: f64,
    },
    Score {
        problem_id: u64,
        solved: bool,
        o: u64,
        d: u64,
        m: u64,
        c: u64,
        s: f64,
        s_norm: f64,
    },
    Bye {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentMsg {
    Hello { protocol: u32, name: String },
    Resources { m: u64, c: u64 },
    Action {
        tick: u64,
        #[serde(deserialize_with = "id_keyed")]
        forces: BTreeMap<u64, Vec<f64>>,
    },
    Bye { reason: String },
}

impl AgentMsg {
    pub fn action(tick: u64, forces: &ForceMap) -> Self {
        AgentMsg::Action {
            tick,
            forces: forces.iter().map(|(&id, f)| (id, f.as_slice().to_vec())).collect(),
        }
    }
}

// Tagged enums buffer their content, which turns integer map keys into strings.
fn id_keyed<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<BTreeMap<u64, Vec<f64>>, D::Error> {
    let raw = BTreeMap::<String, Vec<f64>>::deserialize(de)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u64>()
                .map(|id| (id, v))
                .map_err(|_| serde::de::Error::custom(format!("force key `{k}` is not an entity id")))
        })
        .collect()
}

pub fn parse_harness(line: &str) -> Result<HarnessMsg> {
    serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad harness message: {e}")))
}

pub fn parse_agent(line: &str) -> Result<AgentMsg> {
    serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad agent message: {e}")))
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

/// Converts the force payload of an `action` message.
pub fn action_from_forces(forces: &BTreeMap<u64, Vec<f64>>) -> Action {
    Action {
        forces: forces.iter().map(|(&id, f)| (id, Vector::from_slice(f))).collect(),
    }
}

/// A mind as seen by the harness: one call per harness message, returning
/// that message's replies.
pub trait Mind: Send {
    fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>>;

    /// Hands over the hidden action series of a freshly issued problem. Only
    /// privileged harness-internal agents receive this.
    fn reveal_script(&mut self, _script: &[ForceMap]) {}
}

/// Runs `mind` over a line stream until `bye` or end of input.
pub fn serve<R: BufRead, W: Write>(mind: &mut dyn Mind, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = parse_harness(&line)?;
        for reply in mind.on_message(&msg)? {
            writeln!(output, "{}", encode(&reply))?;
        }
        output.flush()?;
        if matches!(msg, HarnessMsg::Bye { .. }) {
            break;
        }
    }
    Ok(())
}

/// Serves `mind` on the process's stdin/stdout.
pub fn serve_stdio(mind: &mut dyn Mind) -> Result<()> {
    let stdin = std::io::stdin();
    serve(mind, stdin.lock(), std::io::stdout().lock())
}

/// A mind living in a child process.
pub struct ProcessMind {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    tick_budget: Duration,
    handshake_budget: Duration,
}

impl ProcessMind {
    pub fn spawn(command: &str, tick_budget: Duration) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty agent command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Config(format!("cannot spawn agent `{command}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            stdin: child.stdin.take(),
            child,
            lines,
            tick_budget,
            handshake_budget: Duration::from_secs(10),
        })
    }

    fn send(&mut self, msg: &HarnessMsg) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Protocol("agent stdin closed".into()))?;
        writeln!(stdin, "{}", encode(msg)).map_err(|e| Error::Protocol(format!("agent pipe: {e}")))?;
        stdin.flush().map_err(|e| Error::Protocol(format!("agent pipe: {e}")))
    }

    fn recv(&self, budget: Duration) -> Result<AgentMsg> {
        match self.lines.recv_timeout(budget) {
            Ok(line) => parse_agent(&line),
            Err(RecvTimeoutError::Timeout) => Err(Error::AgentTimeout),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("agent closed its output".into())),
        }
    }
}

impl Mind for ProcessMind {
    fn on_message(&mut self, msg: &HarnessMsg) -> Result<Vec<AgentMsg>> {
        self.send(msg)?;
        match msg {
            HarnessMsg::Hello { .. } => Ok(vec![self.recv(self.handshake_budget)?]),
            HarnessMsg::Observation { tick, .. } => {
                let mut replies = Vec::new();
                loop {
                    match self.recv(self.tick_budget)? {
                        // a late answer to an earlier tick
                        AgentMsg::Action { tick: t, .. } if t < *tick => continue,
                        reply @ AgentMsg::Action { .. } => {
                            replies.push(reply);
                            return Ok(replies);
                        }
                        reply => replies.push(reply),
                    }
                }
            }
            HarnessMsg::Bye { .. } => {
                self.stdin = None;
                Ok(Vec::new())
            }
            _ => Ok(Vec::new()),
        }
    }
}

impl Drop for ProcessMind {
    fn drop(&mut self) {
        self.stdin = None;
        let deadline = std::time::Instant::now() + Duration::from_millis(500);
        while std::time::Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_round_trip() {
        let msg = HarnessMsg::Observation {
            tick: 4,
            resolution: 2,
            grid: vec![0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
            integrity: 1.0,
        };
        assert_eq!(parse_harness(&encode(&msg)).unwrap(), msg);
        let mut forces = ForceMap::new();
        forces.insert(3, Vector::from_slice(&[0.1, -0.2]));
        let reply = AgentMsg::action(4, &forces);
        assert_eq!(parse_agent(&encode(&reply)).unwrap(), reply);
        assert_eq!(action_from_forces(match &reply {
            AgentMsg::Action { forces, .. } => forces,
            _ => unreachable!(),
        })
        .forces, forces);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let smuggled = r#"{"type":"observation","tick":1,"resolution":1,"grid":[0.0,0.0],"integrity":1.0,"coefficients":[0.1]}"#;
        assert!(matches!(parse_harness(smuggled), Err(Error::Protocol(_))));
        let agent = r#"{"type":"resources","m":1,"c":2,"laws":[]}"#;
        assert!(parse_agent(agent).is_err());
        assert!(parse_agent(r#"{"type":"teleport","x":1}"#).is_err());
        assert!(parse_agent(r#"{"type":"resources","m":1,"c":2}"#).is_ok());
    }
}
