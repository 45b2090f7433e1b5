//! Extracts alpha, beta and gamma from the packaged golden score streams.
//!
//! The `plateau` streams rise to different plateaus at different speeds; the
//! `drop` streams share a regime and then lose 20% or 80% of their rate at a
//! drift mark.

use std::path::Path;

use openworld::metrics::{adaptation_report, MetricParams};
use openworld::report::parse_score_csv;

fn main() -> openworld::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let params = MetricParams::default();
    for name in ["plateau-agent1", "plateau-agent2", "plateau-agent3", "drop-agent1", "drop-agent2"] {
        let text = std::fs::read_to_string(data.join(format!("{name}.csv")))?;
        let stream = parse_score_csv(&text)?;
        let r = adaptation_report(&stream, &params, 0, 0)?;
        println!(
            "{name}: alpha {:7.3}  beta {:.4}  gamma {:.3}  I {:.4}",
            r.alpha, r.beta, r.gamma, r.i
        );
    }
    Ok(())
}
