//! Solo evaluation of the three baselines over the same derived worlds.
//!
//! ```text
//! cargo run --release --example stage1_evaluation -- 20
//! ```

use openworld::agents::AgentKind;
use openworld::harness::{run_stage1, EpisodeConfig, Participant};

fn main() -> openworld::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = EpisodeConfig::default();
    let mut results = Vec::new();
    for kind in [AgentKind::Null, AgentKind::Random, AgentKind::Greedy] {
        let r = run_stage1(&cfg, || Ok(Participant::builtin(kind)), n)?;
        let solved: usize = r.worlds.iter().map(|w| w.solved).sum();
        let issued: usize = r.worlds.iter().map(|w| w.problems).sum();
        let a = r.aggregate;
        println!(
            "{kind:>6}: mean I {:.4} (alpha {:.2}, beta {:.5}, gamma {:.3}), solved {solved}/{issued}",
            a.i, a.alpha, a.beta, a.gamma
        );
        results.push(r);
    }
    let wins = results[2]
        .worlds
        .iter()
        .zip(&results[1].worlds)
        .filter(|(g, r)| g.report.i > r.report.i)
        .count();
    println!("greedy beats random in {wins} of {n} worlds");
    Ok(())
}
