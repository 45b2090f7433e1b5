//! Developer-side audit of a finished run: replay the disclosure trace, show
//! that tampering is caught, and confirm the live trace leaks no coefficients.

use openworld::agents::AgentKind;
use openworld::harness::{run_episode, EpisodeConfig, Participant};
use openworld::trace::{audit_live, disclosed_coefficients, replay, EventKind, Trace};

fn main() -> openworld::Result<()> {
    let mut cfg = EpisodeConfig::default();
    cfg.problems.problems_per_regime = 8;
    let outcome = run_episode(&cfg, vec![Participant::builtin(AgentKind::Greedy)])?;

    let disclosure = Trace::parse(&outcome.disclosure_trace())?;
    println!("untouched trace: {:?}", replay(&disclosure));

    let mut tampered = disclosure.clone();
    let checkpoint = tampered
        .events
        .iter_mut()
        .find_map(|e| match &mut e.event {
            EventKind::Step { world: Some(w), .. } => Some(w),
            _ => None,
        })
        .expect("trace has a checkpoint");
    let v = &mut checkpoint.entities[0].velocity[0];
    *v = f64::from_bits(v.to_bits() ^ 1);
    println!("one flipped bit: {:?}", replay(&tampered));

    let coefficients = disclosed_coefficients(&disclosure);
    let leaks = audit_live(&outcome.live_trace(), &coefficients);
    println!("{} coefficients disclosed, {} found in the live trace", coefficients.len(), leaks.len());
    Ok(())
}
