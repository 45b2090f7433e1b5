//! Two agents share one world; each gets its own body and problem stream,
//! and the run ends in a relative ranking.

use openworld::agents::AgentKind;
use openworld::harness::{run_stage2, EpisodeConfig, Participant};

fn main() -> openworld::Result<()> {
    let cfg = EpisodeConfig::default().with_seed(5);
    let result = run_stage2(
        &cfg,
        vec![Participant::builtin(AgentKind::Null), Participant::builtin(AgentKind::Greedy)],
    )?;
    for a in &result.outcome.agents {
        let solved = a.records.iter().filter(|r| r.solved).count();
        println!("agent {} ({}) body {:?}: solved {solved}/{}", a.agent_id, a.label, a.body, a.records.len());
    }
    for (rank, r) in result.ranking.iter().enumerate() {
        let label = &result.outcome.agents[r.agent_id as usize].label;
        println!("#{} {label}: I {:.4}", rank + 1, r.i);
    }
    Ok(())
}
