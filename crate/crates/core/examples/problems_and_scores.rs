//! Issues problems, replays their hidden scripts and scores the solves.

use openworld::dynamics::{step, StepParams};
use openworld::interface::{import_bodies, Body, BodyMode};
use openworld::problems::{
    check_solved, generate_problem, score, ProblemConfig, ProblemContext, ScoreInputs, ScoreParams,
};
use openworld::rng::Stream;
use openworld::worldgen::{generate_world, GenSpec};

fn main() -> openworld::Result<()> {
    let mut world = generate_world(&GenSpec {
        seed: 11,
        ..GenSpec::default()
    })?;
    let bodies = vec![Body::new(import_bodies(&world, 1, 1)?.remove(0), BodyMode::Fixed, 4.0)?];
    let params = StepParams::default();
    let cfg = ProblemConfig::default();
    let ctx = ProblemContext {
        bodies: &bodies,
        owner: 0,
        resolution: 4,
        f_max: 0.3,
        params: &params,
    };
    let mut rng = Stream::new(11).split("problems");

    for id in 0..5 {
        let scripted = generate_problem(&world, id, &ctx, &cfg, &mut rng)?;
        let p = &scripted.problem;
        let mut solved_at = None;
        for (k, forces) in scripted.script.iter().enumerate() {
            step(&mut world, forces, &params)?;
            if check_solved(&world, &bodies[0], p)? {
                solved_at = Some(k as u64 + 1);
                break;
            }
        }
        match solved_at {
            Some(d) => {
                let inputs = ScoreInputs {
                    solved: true,
                    o: d,
                    d,
                    m: 0,
                    c: 0,
                };
                let (s, _) = score(&inputs, &p.calib, &ScoreParams::default())?;
                println!("problem {id}: p_null {:.3}, replay solved after {d} ticks, S = {s:.4}", p.calib.p_null);
            }
            None => println!("problem {id}: p_null {:.3}, replay missed the target", p.calib.p_null),
        }
    }
    Ok(())
}
