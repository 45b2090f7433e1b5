//! A body senses its neighbourhood as a count grid and pushes itself around.

use openworld::dynamics::{step, StepParams};
use openworld::interface::{act, import_bodies, sense, window_counts, Action, Body, BodyMode};
use openworld::vector::Vector;
use openworld::worldgen::{generate_world, GenSpec};

fn print_grid(grid: &[f64], resolution: usize) {
    for row in (0..resolution).rev() {
        let cells: Vec<String> = (0..resolution)
            .map(|col| {
                let i = (row * resolution + col) * 2;
                format!("{:.0}+/{:.0}-", grid[i], grid[i + 1])
            })
            .collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> openworld::Result<()> {
    let mut world = generate_world(&GenSpec {
        seed: 3,
        ..GenSpec::default()
    })?;
    let members = import_bodies(&world, 1, 2)?.remove(0);
    let body = Body::new(members.clone(), BodyMode::Fixed, 4.0)?;
    let params = StepParams::default();
    let resolution = 4;
    let mut observations = 0;

    for tick in 0..3 {
        let obs = sense(&world, &body, resolution, Some(&mut observations));
        let (pos, neg) = window_counts(&world, &body);
        println!("tick {tick}: window holds {pos} positive and {neg} negative entities");
        print_grid(&obs.grid, resolution);

        // Push every member to the right; the motor clamps the magnitude to f_max.
        let mut action = Action::zero();
        for &id in &members {
            action.forces.insert(id, Vector::from_slice(&[1.0, 0.0]));
        }
        let forces = act(&world, &body, &action, 0.3)?;
        step(&mut world, &forces, &params)?;
    }
    println!("{observations} observations counted");
    Ok(())
}
