//! Mind-body interface: the body, the resolution-limited sensor and the
//! force-bounded motor. This is the only channel between an agent and a world.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::{law_accelerations, ForceMap, StepParams};
use crate::error::{config, contract, Result};
use crate::vector::Vector;
use crate::worldgen::World;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyMode {
    #[default]
    Fixed,
    Destructible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub member_ids: Vec<u64>,
    pub mode: BodyMode,
    pub integrity: f64,
    pub window_halfwidth: f64,
}

impl Body {
    pub fn new(member_ids: impl IntoIterator<Item = u64>, mode: BodyMode, window_halfwidth: f64) -> Result<Self> {
        let ids: BTreeSet<u64> = member_ids.into_iter().collect();
        if ids.is_empty() {
            return config("body must have at least one member");
        }
        if !(window_halfwidth > 0.0) {
            return config("body.window_halfwidth must be > 0");
        }
        Ok(Self {
            member_ids: ids.into_iter().collect(),
            mode,
            integrity: 1.0,
            window_halfwidth,
        })
    }

    pub fn contains(&self, id: u64) -> bool {
        self.member_ids.binary_search(&id).is_ok()
    }

    /// Mean member position, unwrapped around the first member.
    pub fn centroid(&self, world: &World) -> Vector {
        world
            .torus()
            .weighted_mean(self.member_ids.iter().map(|&id| (&world.entities[id as usize].position, 1.0)))
    }
}

/// Picks disjoint bodies of `size` entities each: agent `k` anchors on the
/// lowest unused id and takes its nearest unused neighbours.
pub fn import_bodies(world: &World, n_agents: usize, size: usize) -> Result<Vec<Vec<u64>>> {
    if size == 0 || n_agents * size > world.entities.len() {
        return config(format!(
            "cannot carve {n_agents} bodies of {size} entities from {} entities",
            world.entities.len()
        ));
    }
    let torus = world.torus();
    let mut used = BTreeSet::new();
    let mut bodies = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let anchor = (0..world.entities.len() as u64).find(|id| !used.contains(id)).expect("enough entities");
        let origin = &world.entities[anchor as usize].position;
        let mut rest: Vec<(f64, u64)> = world
            .entities
            .iter()
            .filter(|e| e.id != anchor && !used.contains(&e.id))
            .map(|e| (torus.delta(origin, &e.position).norm(), e.id))
            .collect();
        rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut members = vec![anchor];
        members.extend(rest.into_iter().take(size - 1).map(|(_, id)| id));
        members.sort_unstable();
        used.extend(members.iter().copied());
        bodies.push(members);
    }
    Ok(bodies)
}

/// Egocentric polarity-density grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u64,
    pub resolution: usize,
    /// Row-major `R x R x 2`: index `(row * R + col) * 2 + channel`.
    pub grid: Vec<f64>,
    pub window_center: Vector,
}

impl Observation {
    pub fn cell(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.grid[(row * self.resolution + col) * 2 + channel]
    }

    pub fn channel_sum(&self, channel: usize) -> f64 {
        self.grid.iter().skip(channel).step_by(2).sum()
    }
}

/// Cell index along one axis. Points on an interior boundary go to the lower cell.
fn cell_index(offset: f64, halfwidth: f64, resolution: usize) -> usize {
    let cell = 2.0 * halfwidth / resolution as f64;
    let k = ((offset + halfwidth) / cell).ceil() as i64 - 1;
    k.clamp(0, resolution as i64 - 1) as usize
}

/// Count of `(positive, negative)` entities inside the body's window.
pub fn window_counts(world: &World, body: &Body) -> (usize, usize) {
    let torus = world.torus();
    let center = body.centroid(world);
    let w = body.window_halfwidth;
    let mut counts = (0, 0);
    for e in &world.entities {
        let off = torus.delta(&center, &e.position);
        if off.as_slice().iter().all(|x| x.abs() <= w) {
            if e.polarity > 0 {
                counts.0 += 1;
            } else {
                counts.1 += 1;
            }
        }
    }
    counts
}

/// Sensor projection without touching any accounting.
pub fn project(world: &World, body: &Body, resolution: usize) -> Observation {
    assert!(resolution >= 1, "resolution must be >= 1");
    let torus = world.torus();
    let center = body.centroid(world);
    let w = body.window_halfwidth;
    let mut grid = vec![0.0; resolution * resolution * 2];
    for e in &world.entities {
        let off = torus.delta(&center, &e.position);
        if off.as_slice().iter().any(|x| x.abs() > w) {
            continue;
        }
        let row = cell_index(off[1], w, resolution);
        let col = cell_index(off[0], w, resolution);
        let channel = usize::from(e.polarity < 0);
        grid[(row * resolution + col) * 2 + channel] += 1.0;
    }
    let obs = Observation {
        tick: world.tick,
        resolution,
        grid,
        window_center: center,
    };
    debug_assert_eq!(
        (obs.channel_sum(0) as usize, obs.channel_sum(1) as usize),
        window_counts(world, body)
    );
    obs
}

/// Senses on behalf of the mind; counts one observation against the active problem.
pub fn sense(world: &World, body: &Body, resolution: usize, observations: Option<&mut u64>) -> Observation {
    if let Some(o) = observations {
        *o += 1;
    }
    project(world, body, resolution)
}

/// Forces requested by a mind for its own body members.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub forces: ForceMap,
}

impl Action {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Validates a mind's action and clamps each force to `f_max`.
pub fn act(world: &World, body: &Body, action: &Action, f_max: f64) -> Result<ForceMap> {
    let mut out = ForceMap::new();
    for (&id, f) in &action.forces {
        if !body.contains(id) {
            return contract(format!("entity {id} is not a body member"));
        }
        if f.dim() != world.dim() || !f.is_finite() {
            return contract(format!("force on member {id} must be a finite {}-vector", world.dim()));
        }
        out.insert(id, f.clamp_norm(f_max));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressConfig {
    pub threshold: f64,
    pub d_hit: f64,
}

impl Default for StressConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            d_hit: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrityStatus {
    pub integrity: f64,
    pub stressed: bool,
    pub destroyed: bool,
}

/// Mean magnitude of the law force on body members.
pub fn body_stress(world: &World, body: &Body, params: &StepParams) -> f64 {
    let acc = law_accelerations(world, params);
    let total: f64 = body
        .member_ids
        .iter()
        .map(|&id| acc[id as usize].norm() * world.entities[id as usize].inertia)
        .sum();
    total / body.member_ids.len() as f64
}

/// Charges one tick of stress against a destructible body.
pub fn update_integrity(world: &World, body: &mut Body, params: &StepParams, stress: &StressConfig) -> Result<IntegrityStatus> {
    if body.mode != BodyMode::Destructible {
        return contract("update_integrity called on a fixed body");
    }
    let stressed = body_stress(world, body, params) > stress.threshold;
    if stressed {
        body.integrity -= stress.d_hit;
        if body.integrity <= 1e-9 {
            body.integrity = 0.0;
        }
    }
    Ok(IntegrityStatus {
        integrity: body.integrity,
        stressed,
        destroyed: body.integrity == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{snapshot, step};
    use crate::worldgen::{generate_world, GenSpec};

    fn world(n: usize) -> World {
        let mut spec = GenSpec {
            n_entities: n,
            seed: 5,
            ..GenSpec::default()
        };
        spec.grammar.coeff_range = (0.0, 0.0);
        generate_world(&spec).unwrap()
    }

    fn place(w: &mut World, id: usize, p: [f64; 2], polarity: i8) {
        w.entities[id].position = Vector::from_slice(&p);
        w.entities[id].polarity = polarity;
    }

    #[test]
    fn counts_land_in_one_cell() {
        let mut w = world(6);
        place(&mut w, 0, [0.0, 0.0], 1);
        for (id, p) in [(1, [0.3, 0.3]), (2, [0.5, 0.6]), (3, [0.7, 0.2])] {
            place(&mut w, id, p, 1);
        }
        place(&mut w, 4, [7.0, 7.0], -1);
        place(&mut w, 5, [-7.0, 7.0], -1);
        let body = Body::new([0], BodyMode::Fixed, 2.0).unwrap();
        let obs = project(&w, &body, 4);
        // window [-2, 2], cells of width 1; body itself sits on the (1|2) boundary -> lower cell 1
        assert_eq!(obs.cell(2, 2, 0), 3.0);
        assert_eq!(obs.cell(1, 1, 0), 1.0);
        assert_eq!(obs.channel_sum(0), 4.0);
        assert_eq!(obs.channel_sum(1), 0.0);
    }

    #[test]
    fn empty_window_is_all_zero() {
        let mut w = world(3);
        place(&mut w, 0, [-3.0, 0.0], 1);
        place(&mut w, 1, [3.0, 0.0], -1);
        place(&mut w, 2, [6.0, 6.0], -1);
        // centroid sits at the origin, between two members outside the window
        let body = Body::new([0, 1], BodyMode::Fixed, 1.0).unwrap();
        let obs = project(&w, &body, 3);
        assert!(obs.grid.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn boundary_points_take_lower_cell_and_are_stable() {
        let mut w = world(3);
        place(&mut w, 0, [0.0, 0.0], 1);
        place(&mut w, 1, [1.0, -1.0], -1);
        place(&mut w, 2, [-1.0, 1.0], 1);
        let body = Body::new([0], BodyMode::Fixed, 2.0).unwrap();
        let a = project(&w, &body, 4);
        let b = project(&w, &body, 4);
        assert_eq!(a, b);
        // x = 1 is the boundary between cols 2 and 3 -> col 2; y = -1 between rows 0 and 1 -> row 0
        assert_eq!(a.cell(0, 2, 1), 1.0);
        assert_eq!(a.cell(2, 0, 0), 1.0);
    }

    #[test]
    fn sense_counts_exactly_once() {
        let w = world(8);
        let body = Body::new([0], BodyMode::Fixed, 3.0).unwrap();
        let mut o = 0;
        sense(&w, &body, 4, Some(&mut o));
        sense(&w, &body, 4, Some(&mut o));
        sense(&w, &body, 4, None);
        assert_eq!(o, 2);
    }

    #[test]
    fn act_clamps_and_rejects_strangers() {
        let w = world(4);
        let body = Body::new([0, 1], BodyMode::Fixed, 3.0).unwrap();
        let mut action = Action::zero();
        action.forces.insert(1, Vector::from_slice(&[0.6, 0.8]));
        let out = act(&w, &body, &action, 0.5).unwrap();
        assert!((out[&1].norm() - 0.5).abs() < 1e-12);
        assert!((out[&1][0] / out[&1][1] - 0.75).abs() < 1e-12);

        let before = snapshot(&w);
        action.forces.insert(3, Vector::from_slice(&[0.1, 0.0]));
        assert!(matches!(act(&w, &body, &action, 0.5), Err(crate::Error::Contract(_))));
        assert_eq!(snapshot(&w), before);
    }

    #[test]
    fn zero_action_matches_passive_step() {
        let mut spec = GenSpec { seed: 9, ..GenSpec::default() };
        spec.grammar.coeff_range = (-0.01, 0.01);
        let w = generate_world(&spec).unwrap();
        let body = Body::new([0], BodyMode::Fixed, 3.0).unwrap();
        let forces = act(&w, &body, &Action::zero(), 0.5).unwrap();
        let (mut a, mut b) = (w.clone(), w);
        step(&mut a, &forces, &StepParams::default()).unwrap();
        step(&mut b, &ForceMap::new(), &StepParams::default()).unwrap();
        assert_eq!(snapshot(&a), snapshot(&b));
    }

    #[test]
    fn fixed_body_refuses_integrity_updates() {
        let w = world(4);
        let mut body = Body::new([0], BodyMode::Fixed, 3.0).unwrap();
        assert!(update_integrity(&w, &mut body, &StepParams::default(), &StressConfig::default()).is_err());
        assert_eq!(body.integrity, 1.0);
    }

    #[test]
    fn unstressed_body_keeps_integrity() {
        let mut w = world(6);
        let mut body = Body::new([0], BodyMode::Destructible, 3.0).unwrap();
        for _ in 0..30 {
            let s = update_integrity(&w, &mut body, &StepParams::default(), &StressConfig::default()).unwrap();
            assert!(!s.destroyed);
            step(&mut w, &ForceMap::new(), &StepParams::default()).unwrap();
        }
        assert_eq!(body.integrity, 1.0);
    }

    #[test]
    fn bodies_are_disjoint_and_sized() {
        let w = generate_world(&GenSpec::default()).unwrap();
        let bodies = import_bodies(&w, 3, 4).unwrap();
        let all: BTreeSet<u64> = bodies.iter().flatten().copied().collect();
        assert_eq!(all.len(), 12);
        assert!(bodies.iter().all(|b| b.len() == 4));
        assert!(import_bodies(&w, 20, 4).is_err());
    }
}
