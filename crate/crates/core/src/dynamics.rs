//! Pairwise causation dynamics and the semi-implicit Euler stepper.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, contract, Result};
use crate::vector::{Torus, Vector};
use crate::worldgen::{apply_drift, BasisTerm, CausationLaw, DriftEvent, MemberState, World};

/// External forces for one tick, keyed by basic-entity id.
pub type ForceMap = BTreeMap<u64, Vector>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepParams {
    pub h: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub eps_r: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            h: 1.0,
            a_max: 0.5,
            v_max: 0.3,
            eps_r: 0.5,
        }
    }
}

impl StepParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return config("step.h must be > 0");
        }
        if !(self.a_max > 0.0) {
            return config("step.a_max must be > 0");
        }
        if !(self.v_max > 0.0) {
            return config("step.v_max must be > 0");
        }
        if !(self.eps_r > 0.0) {
            return config("step.eps_r must be > 0");
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fixed-size scratch vector for the pair kernel; worlds have at most 3 axes.
type Raw = [f64; 3];

/// Force on `a` from `b`, before division by inertia. Swapping the
/// arguments negates the result exactly.
fn pair_force(law: &CausationLaw, a: &MemberState<'_>, b: &MemberState<'_>, width: f64, eps_r: f64) -> Raw {
    let dim = a.position.dim();
    let mut sep = [0.0; 3];
    let mut d2 = 0.0;
    for k in 0..dim {
        let d = a.position[k] - b.position[k];
        let d = d - width * (d / width).round();
        sep[k] = d;
        d2 += d * d;
    }
    let dist = d2.sqrt();
    let r = dist.max(eps_r);
    let mut unit = [0.0; 3];
    if dist > 0.0 {
        let inv = 1.0 / dist;
        for k in 0..dim {
            unit[k] = sep[k] * inv;
        }
    } else {
        unit[0] = if a.id > b.id { 1.0 } else { -1.0 };
    }
    let pp = sign(a.charge) * sign(b.charge);
    let mut radial = 0.0;
    let mut damping = 0.0;
    for t in &law.terms {
        let k = if t.polarity_coupled { t.coeff * pp } else { t.coeff };
        match t.term {
            BasisTerm::Damping => damping += k,
            term => radial += k * term.radial(r),
        }
    }
    let mut force = [0.0; 3];
    for k in 0..dim {
        force[k] = unit[k] * radial;
        if damping != 0.0 {
            force[k] += (a.velocity[k] - b.velocity[k]) * -damping;
        }
    }
    force
}

/// Divides by inertia and clamps the magnitude to `a_max`.
fn to_acceleration(force: &Raw, dim: usize, inertia: f64, a_max: f64) -> Raw {
    let inv = 1.0 / inertia;
    let mut acc = [0.0; 3];
    let mut n2 = 0.0;
    for k in 0..dim {
        acc[k] = force[k] * inv;
        n2 += acc[k] * acc[k];
    }
    let n = n2.sqrt();
    if n > a_max && n > 0.0 {
        let s = a_max / n;
        for a in acc.iter_mut().take(dim) {
            *a *= s;
        }
    }
    acc
}

fn neg(v: &Raw) -> Raw {
    [-v[0], -v[1], -v[2]]
}

/// Acceleration exerted on `a` by `b` under `law`.
///
/// Positive radial sums push `a` away from `b`. Coincident members are
/// separated along the first axis, oriented by id so the pair stays
/// antisymmetric.
pub fn eval_law(law: &CausationLaw, a: &MemberState<'_>, b: &MemberState<'_>, torus: &Torus, params: &StepParams) -> Vector {
    let dim = a.position.dim();
    let f = pair_force(law, a, b, torus.width(), params.eps_r);
    Vector::from_slice(&to_acceleration(&f, dim, a.inertia, params.a_max)[..dim])
}

/// Law-induced acceleration on every basic entity, summed over levels.
///
/// Composite accelerations reach descendants in proportion to inertia share,
/// which gives every descendant the composite's acceleration.
pub fn law_accelerations(world: &World, params: &StepParams) -> Vec<Vector> {
    let width = world.torus().width();
    let dim = world.dim();
    let mut acc = vec![[0.0; 3]; world.entities.len()];
    for level in 0..world.n_levels() {
        let law = &world.laws[level];
        if law.terms.is_empty() {
            continue;
        }
        let members = world.members(level);
        let mut level_acc = vec![[0.0; 3]; members.len()];
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let f = pair_force(law, &members[i], &members[j], width, params.eps_r);
                let on_i = to_acceleration(&f, dim, members[i].inertia, params.a_max);
                let on_j = to_acceleration(&neg(&f), dim, members[j].inertia, params.a_max);
                for k in 0..dim {
                    level_acc[i][k] += on_i[k];
                    level_acc[j][k] += on_j[k];
                }
            }
        }
        if level == 0 {
            for (a, la) in acc.iter_mut().zip(&level_acc) {
                for k in 0..dim {
                    a[k] += la[k];
                }
            }
        } else {
            for (leaves, la) in world.leaves(level).iter().zip(&level_acc) {
                for &id in leaves {
                    for k in 0..dim {
                        acc[id as usize][k] += la[k];
                    }
                }
            }
        }
    }
    acc.iter().map(|a| Vector::from_slice(&a[..dim])).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub drift: Option<DriftEvent>,
    /// Law force (inertia times law acceleration) on each entity before clamping.
    pub law_forces: Vec<Vector>,
}

pub fn check_forces(world: &World, external: &ForceMap) -> Result<()> {
    for (id, f) in external {
        if world.entity(*id).is_none() {
            return contract(format!("force map references unknown entity {id}"));
        }
        if f.dim() != world.dim() || !f.is_finite() {
            return contract(format!("force on entity {id} has wrong dimension or is not finite"));
        }
    }
    Ok(())
}

/// Advances `world` by one tick. On error the world is left untouched.
pub fn step(world: &mut World, external: &ForceMap, params: &StepParams) -> Result<StepReport> {
    check_forces(world, external)?;
    let drift = apply_drift(world);
    let law_acc = law_accelerations(world, params);
    let torus = world.torus();
    let h = params.h;
    let mut law_forces = Vec::with_capacity(law_acc.len());
    for (e, la) in world.entities.iter_mut().zip(law_acc) {
        law_forces.push(&la * e.inertia);
        let mut a = la;
        if let Some(f) = external.get(&e.id) {
            a += &(f * (1.0 / e.inertia));
        }
        let a = a.clamp_norm(params.a_max);
        e.velocity = (&e.velocity + &(&a * h)).clamp_components(params.v_max);
        e.position = torus.wrap(&(&e.position + &(&e.velocity * h)));
    }
    world.recompute_aggregates();
    world.tick += 1;
    Ok(StepReport { drift, law_forces })
}

/// Canonical serialization: field order is fixed by the type definitions and
/// every collection is id-ordered.
pub fn snapshot(world: &World) -> Vec<u8> {
    serde_json::to_vec(world).expect("world serialization")
}

pub fn restore(bytes: &[u8]) -> Result<World> {
    let world: World = serde_json::from_slice(bytes)?;
    world.spec.validate()?;
    if world.entities.iter().enumerate().any(|(i, e)| e.id != i as u64) {
        return contract("restored world has non-sequential entity ids");
    }
    if world.laws.len() != world.spec.n_levels || world.composites.len() + 1 != world.spec.n_levels {
        return contract("restored world has inconsistent level count");
    }
    Ok(world)
}

pub fn snapshot_hash(world: &World) -> String {
    hash_bytes(&snapshot(world))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Total momentum `sum(inertia * velocity)` over basic entities.
pub fn total_momentum(world: &World) -> Vector {
    let mut p = Vector::zeros(world.dim());
    for e in &world.entities {
        p += &(&e.velocity * e.inertia);
    }
    p
}
