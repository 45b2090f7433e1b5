//! Writing your own mind. The same type runs in-process here and could be
//! served over stdin/stdout with `openworld::protocol::serve_stdio`.
//!
//! ```text
//! cargo run --example protocol_agent            # in-process episode
//! cargo run --example protocol_agent -- serve   # speak the wire protocol
//! ```

use std::collections::BTreeMap;

use openworld::harness::{run_episode, EpisodeConfig, Participant};
use openworld::protocol::{serve_stdio, AgentMsg, HarnessMsg, Mind, PROTOCOL_VERSION};

/// Circles clockwise: pushes along one axis for a few ticks, then turns.
#[derive(Default)]
struct Circler {
    members: Vec<u64>,
    f_max: f64,
}

impl Mind for Circler {
    fn on_message(&mut self, msg: &HarnessMsg) -> openworld::Result<Vec<AgentMsg>> {
        Ok(match msg {
            HarnessMsg::Hello { members, f_max, .. } => {
                self.members = members.clone();
                self.f_max = *f_max;
                vec![AgentMsg::Hello {
                    protocol: PROTOCOL_VERSION,
                    name: "circler".into(),
                }]
            }
            HarnessMsg::Observation { tick, .. } => {
                let f = self.f_max;
                let push = [[f, 0.0], [0.0, -f], [-f, 0.0], [0.0, f]][(*tick / 5 % 4) as usize];
                let forces: BTreeMap<u64, Vec<f64>> = self.members.iter().map(|&id| (id, push.to_vec())).collect();
                vec![AgentMsg::Resources { m: 4, c: *tick }, AgentMsg::Action { tick: *tick, forces }]
            }
            _ => Vec::new(),
        })
    }
}

fn main() -> openworld::Result<()> {
    if std::env::args().nth(1).as_deref() == Some("serve") {
        return serve_stdio(&mut Circler::default());
    }
    let mut cfg = EpisodeConfig::default();
    cfg.problems.problems_per_regime = 8;
    let outcome = run_episode(&cfg, vec![Participant::custom("circler", Box::new(Circler::default()))])?;
    let a = &outcome.agents[0];
    let solved = a.records.iter().filter(|r| r.solved).count();
    println!("circler solved {solved}/{} problems, reported M={} C={}", a.records.len(), a.m, a.c);
    let report = &outcome.reports(&cfg.metrics, 0)?[0];
    println!("I = {:.4} (a lower bound on what this mind understands)", report.i);
    Ok(())
}
