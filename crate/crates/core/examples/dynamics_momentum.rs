//! Steps a world whose only law is a polarity-coupled inverse-square term and
//! tracks total momentum, which equal-and-opposite pair forces conserve.

use openworld::dynamics::{step, total_momentum, ForceMap, StepParams};
use openworld::worldgen::{generate_world, BasisTerm, GenSpec, PolarityCoupling};

fn main() -> openworld::Result<()> {
    let mut spec = GenSpec {
        seed: 7,
        n_entities: 6,
        n_levels: 1,
        ..GenSpec::default()
    };
    spec.grammar.basis = vec![BasisTerm::InvSquare];
    spec.grammar.max_terms = 1;
    spec.grammar.coeff_range = (-0.01, -0.005);
    spec.grammar.polarity_coupling = PolarityCoupling::Always;
    spec.drift.drift_levels.clear();

    let mut world = generate_world(&spec)?;
    let params = StepParams::default();
    let p0 = total_momentum(&world);
    let mut worst: f64 = 0.0;
    let mut prev = p0.clone();
    for _ in 0..1000 {
        step(&mut world, &ForceMap::new(), &params)?;
        let p = total_momentum(&world);
        worst = worst.max((&p - &prev).norm());
        prev = p;
    }
    println!("initial momentum {:?}", p0.as_slice());
    println!("final momentum   {:?}", prev.as_slice());
    println!("largest per-step change {worst:.3e}");
    Ok(())
}
