//! World generation: differentiation into positive and negative entities,
//! causation sampling per hierarchy level, and grid-bucket composites.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::Stream;
use crate::vector::{Torus, Vector};

/// One admissible term of a causation law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisTerm {
    InvSquare,
    Inverse,
    Constant,
    Linear,
    Square,
    /// Relative-velocity damping; not a radial term.
    Damping,
}

impl BasisTerm {
    pub const ALL: [BasisTerm; 6] = [
        BasisTerm::InvSquare,
        BasisTerm::Inverse,
        BasisTerm::Constant,
        BasisTerm::Linear,
        BasisTerm::Square,
        BasisTerm::Damping,
    ];

    /// Radial profile `f(r)`; zero for the damping term.
    pub fn radial(self, r: f64) -> f64 {
        match self {
            BasisTerm::InvSquare => 1.0 / (r * r),
            BasisTerm::Inverse => 1.0 / r,
            BasisTerm::Constant => 1.0,
            BasisTerm::Linear => r,
            BasisTerm::Square => r * r,
            BasisTerm::Damping => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityCoupling {
    Always,
    Never,
    /// Each term flips a fair coin.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausationGrammar {
    pub basis: Vec<BasisTerm>,
    pub max_terms: usize,
    pub coeff_range: (f64, f64),
    pub polarity_coupling: PolarityCoupling,
}

impl Default for CausationGrammar {
    fn default() -> Self {
        Self {
            basis: BasisTerm::ALL.to_vec(),
            max_terms: 3,
            coeff_range: (-0.002, 0.002),
            polarity_coupling: PolarityCoupling::Sampled,
        }
    }
}

impl CausationGrammar {
    pub fn validate(&self) -> Result<()> {
        if self.basis.is_empty() {
            return config("grammar.basis must be nonempty");
        }
        let distinct: BTreeSet<_> = self.basis.iter().collect();
        if distinct.len() != self.basis.len() {
            return config("grammar.basis must not repeat terms");
        }
        if self.max_terms < 1 {
            return config("grammar.max_terms must be >= 1");
        }
        let (lo, hi) = self.coeff_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return config("grammar.coeff_range must be finite and nonempty");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSchedule {
    pub regime_times: Vec<u64>,
    pub smooth_rate: f64,
    pub drift_levels: BTreeSet<usize>,
}

impl Default for DriftSchedule {
    fn default() -> Self {
        Self {
            regime_times: Vec::new(),
            smooth_rate: 0.0,
            drift_levels: BTreeSet::from([1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub dim: usize,
    pub n_entities: usize,
    pub polarity_ratio: f64,
    pub n_levels: usize,
    pub grammar: CausationGrammar,
    pub drift: DriftSchedule,
    pub arena_extent: f64,
    /// Entity inertias are drawn uniformly from this closed interval.
    pub inertia_range: (f64, f64),
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 2,
            n_entities: 32,
            polarity_ratio: 0.5,
            n_levels: 2,
            grammar: CausationGrammar::default(),
            drift: DriftSchedule::default(),
            arena_extent: 8.0,
            inertia_range: (1.0, 1.0),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return config("dim must be 2 or 3");
        }
        if self.n_entities < 2 {
            return config("n_entities must be >= 2");
        }
        if !(self.polarity_ratio > 0.0 && self.polarity_ratio < 1.0) {
            return config("polarity_ratio must lie strictly between 0 and 1");
        }
        if self.n_levels < 1 {
            return config("n_levels must be >= 1");
        }
        if !(self.arena_extent > 0.0 && self.arena_extent.is_finite()) {
            return config("arena_extent must be > 0");
        }
        let (lo, hi) = self.inertia_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return config("inertia_range must be a positive interval");
        }
        self.grammar.validate()?;
        if self.drift.drift_levels.contains(&0) {
            return config("drift.drift_levels must exclude level 0");
        }
        if let Some(&l) = self.drift.drift_levels.iter().find(|&&l| l >= self.n_levels) {
            return config(format!("drift level {l} exceeds n_levels - 1"));
        }
        if self.drift.regime_times.windows(2).any(|w| w[0] >= w[1]) {
            return config("drift.regime_times must be strictly increasing");
        }
        if !(self.drift.smooth_rate >= 0.0 && self.drift.smooth_rate.is_finite()) {
            return config("drift.smooth_rate must be >= 0");
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.polarity_ratio * self.n_entities as f64).floor() as usize
    }

    pub fn torus(&self) -> Torus {
        Torus::new(self.arena_extent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u64,
    pub polarity: i8,
    pub position: Vector,
    pub velocity: Vector,
    pub inertia: f64,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composite {
    pub id: u64,
    pub level: usize,
    pub children: Vec<u64>,
    /// Net polarity of all descendant entities.
    pub charge: f64,
    pub agg_position: Vector,
    pub agg_velocity: Vector,
    pub agg_inertia: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawTerm {
    pub term: BasisTerm,
    pub coeff: f64,
    pub polarity_coupled: bool,
}

/// Points a drifting law at the schedule entry that governs it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftHandle {
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausationLaw {
    pub level: usize,
    pub terms: Vec<LawTerm>,
    pub drift_handle: Option<DriftHandle>,
}

impl CausationLaw {
    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.coeff).collect()
    }

    /// Law with every coefficient zero; no dynamics.
    pub fn inert(level: usize) -> Self {
        Self {
            level,
            terms: Vec::new(),
            drift_handle: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldStreams {
    pub generation: Stream,
    pub drift: Stream,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub tick: u64,
    pub levels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: GenSpec,
    pub entities: Vec<Entity>,
    /// `composites[l - 1]` holds the composites of level `l`.
    pub composites: Vec<Vec<Composite>>,
    pub laws: Vec<CausationLaw>,
    pub tick: u64,
    pub streams: WorldStreams,
}

/// Read-only view of a member of some level, used for law evaluation.
#[derive(Clone, Copy, Debug)]
pub struct MemberState<'a> {
    pub id: u64,
    pub charge: f64,
    pub position: &'a Vector,
    pub velocity: &'a Vector,
    pub inertia: f64,
}

impl World {
    pub fn torus(&self) -> Torus {
        self.spec.torus()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn entity(&self, id: u64) -> Option<&Entity> {
        self.entities.get(id as usize).filter(|e| e.id == id)
    }

    pub fn n_levels(&self) -> usize {
        self.spec.n_levels
    }

    /// All members of `level` in id order.
    pub fn members(&self, level: usize) -> Vec<MemberState<'_>> {
        if level == 0 {
            self.entities
                .iter()
                .map(|e| MemberState {
                    id: e.id,
                    charge: f64::from(e.polarity),
                    position: &e.position,
                    velocity: &e.velocity,
                    inertia: e.inertia,
                })
                .collect()
        } else {
            self.composites[level - 1]
                .iter()
                .map(|c| MemberState {
                    id: c.id,
                    charge: c.charge,
                    position: &c.agg_position,
                    velocity: &c.agg_velocity,
                    inertia: c.agg_inertia,
                })
                .collect()
        }
    }

    fn member(&self, level: usize, id: u64) -> MemberState<'_> {
        if level == 0 {
            let e = &self.entities[id as usize];
            MemberState {
                id: e.id,
                charge: f64::from(e.polarity),
                position: &e.position,
                velocity: &e.velocity,
                inertia: e.inertia,
            }
        } else {
            let layer = &self.composites[level - 1];
            let c = &layer[(id - layer[0].id) as usize];
            MemberState {
                id: c.id,
                charge: c.charge,
                position: &c.agg_position,
                velocity: &c.agg_velocity,
                inertia: c.agg_inertia,
            }
        }
    }

    /// Basic-entity ids under each composite of `level` (level >= 1).
    pub fn leaves(&self, level: usize) -> Vec<Vec<u64>> {
        let mut below: Vec<Vec<u64>> = Vec::new();
        for l in 1..=level {
            let layer = &self.composites[l - 1];
            let next: Vec<Vec<u64>> = layer
                .iter()
                .map(|c| {
                    if l == 1 {
                        c.children.clone()
                    } else {
                        let base = self.composites[l - 2][0].id;
                        c.children
                            .iter()
                            .flat_map(|&ch| below[(ch - base) as usize].iter().copied())
                            .collect()
                    }
                })
                .collect();
            below = next;
        }
        below
    }

    /// Recomputes every composite aggregate from its children, bottom-up.
    pub fn recompute_aggregates(&mut self) {
        let torus = self.torus();
        for level in 1..=self.composites.len() {
            let updated: Vec<(f64, Vector, Vector, f64)> = self.composites[level - 1]
                .iter()
                .map(|c| {
                    let kids: Vec<MemberState<'_>> =
                        c.children.iter().map(|&id| self.member(level - 1, id)).collect();
                    aggregate(&torus, &kids)
                })
                .collect();
            for (c, (charge, pos, vel, inertia)) in self.composites[level - 1].iter_mut().zip(updated) {
                c.charge = charge;
                c.agg_position = pos;
                c.agg_velocity = vel;
                c.agg_inertia = inertia;
            }
        }
    }

    pub fn polarity_counts(&self) -> (usize, usize) {
        let pos = self.entities.iter().filter(|e| e.polarity > 0).count();
        (pos, self.entities.len() - pos)
    }

    /// Canonical bytes of one law, for drift and redaction audits.
    pub fn law_bytes(&self, level: usize) -> Vec<u8> {
        serde_json::to_vec(&self.laws[level]).expect("law serialization")
    }
}

fn aggregate(torus: &Torus, kids: &[MemberState<'_>]) -> (f64, Vector, Vector, f64) {
    let total: f64 = kids.iter().map(|k| k.inertia).sum();
    let charge = kids.iter().map(|k| k.charge).sum();
    let pos = torus.weighted_mean(kids.iter().map(|k| (k.position, k.inertia)));
    let mut vel = Vector::zeros(kids[0].velocity.dim());
    for k in kids {
        vel += &(k.velocity * k.inertia);
    }
    (charge, pos, &vel * (1.0 / total), total)
}

/// Samples one causation law from `grammar`.
pub fn sample_law(
    grammar: &CausationGrammar,
    level: usize,
    drift_levels: &BTreeSet<usize>,
    rng: &mut Stream,
) -> Result<CausationLaw> {
    grammar.validate()?;
    let cap = grammar.max_terms.min(grammar.basis.len());
    let n_terms = 1 + rng.below(cap as u64) as usize;
    let mut picked = rng.choose_distinct(grammar.basis.len(), n_terms);
    picked.sort_unstable();
    let (lo, hi) = grammar.coeff_range;
    let terms = picked
        .into_iter()
        .map(|i| {
            let coeff = rng.uniform(lo, hi);
            let polarity_coupled = match grammar.polarity_coupling {
                PolarityCoupling::Always => true,
                PolarityCoupling::Never => false,
                PolarityCoupling::Sampled => rng.below(2) == 1,
            };
            LawTerm {
                term: grammar.basis[i],
                coeff,
                polarity_coupled,
            }
        })
        .collect();
    let drift_handle = (level != 0 && drift_levels.contains(&level)).then_some(DriftHandle { level });
    Ok(CausationLaw {
        level,
        terms,
        drift_handle,
    })
}

pub fn generate_world(spec: &GenSpec) -> Result<World> {
    spec.validate()?;
    let root = Stream::new(spec.seed);
    let mut gen = root.split("generation");
    let drift = root.split("drift");
    let torus = spec.torus();

    let n = spec.n_entities;
    let positive: BTreeSet<usize> = gen.choose_distinct(n, spec.positive_count()).into_iter().collect();
    let (ilo, ihi) = spec.inertia_range;
    let entities = (0..n)
        .map(|i| {
            let coords: Vec<f64> = (0..spec.dim)
                .map(|_| torus.wrap_coord(gen.uniform(-spec.arena_extent, spec.arena_extent)))
                .collect();
            Entity {
                id: i as u64,
                polarity: if positive.contains(&i) { 1 } else { -1 },
                position: Vector::from_slice(&coords),
                velocity: Vector::zeros(spec.dim),
                inertia: gen.uniform(ilo, ihi),
                level: 0,
            }
        })
        .collect();

    let laws = (0..spec.n_levels)
        .map(|level| sample_law(&spec.grammar, level, &spec.drift.drift_levels, &mut gen))
        .collect::<Result<Vec<_>>>()?;

    let mut world = World {
        spec: spec.clone(),
        entities,
        composites: Vec::new(),
        laws,
        tick: 0,
        streams: WorldStreams { generation: gen, drift },
    };
    build_hierarchy(&mut world);
    Ok(world)
}

/// Partitions each level's members into composites by grid bucket.
///
/// Level `l` uses buckets of width `arena_extent / 2^(L - l)`; buckets are
/// visited in lexicographic order, so ids and membership depend only on
/// positions and the spec.
pub fn build_hierarchy(world: &mut World) {
    let spec = world.spec.clone();
    let torus = spec.torus();
    world.composites.clear();
    let mut next_id = world.entities.len() as u64;
    for level in 1..spec.n_levels {
        let width = spec.arena_extent / 2f64.powi((spec.n_levels - level) as i32);
        let n_buckets = (torus.width() / width).ceil() as i64;
        let mut buckets: BTreeMap<Vec<i64>, Vec<u64>> = BTreeMap::new();
        for m in world.members(level - 1) {
            let key = m
                .position
                .as_slice()
                .iter()
                .map(|&x| (((x + spec.arena_extent) / width).floor() as i64).clamp(0, n_buckets - 1))
                .collect();
            buckets.entry(key).or_default().push(m.id);
        }
        let layer = buckets
            .into_values()
            .map(|children| {
                let id = next_id;
                next_id += 1;
                Composite {
                    id,
                    level,
                    children,
                    charge: 0.0,
                    agg_position: Vector::zeros(spec.dim),
                    agg_velocity: Vector::zeros(spec.dim),
                    agg_inertia: 0.0,
                }
            })
            .collect();
        world.composites.push(layer);
        world.recompute_aggregates();
    }
}

/// Applies scheduled resampling and smooth coefficient drift for the current tick.
pub fn apply_drift(world: &mut World) -> Option<DriftEvent> {
    let spec = &world.spec;
    let rng = &mut world.streams.drift;
    let mut event = None;
    if spec.drift.regime_times.binary_search(&world.tick).is_ok() {
        let mut levels = Vec::new();
        for law in world.laws.iter_mut() {
            if let Some(handle) = law.drift_handle {
                *law = sample_law(&spec.grammar, handle.level, &spec.drift.drift_levels, rng)
                    .expect("grammar validated at generation");
                levels.push(handle.level);
            }
        }
        event = Some(DriftEvent {
            tick: world.tick,
            levels,
        });
    }
    let step = spec.drift.smooth_rate;
    if step > 0.0 {
        let (lo, hi) = spec.grammar.coeff_range;
        for law in world.laws.iter_mut().filter(|l| l.drift_handle.is_some()) {
            for t in law.terms.iter_mut() {
                t.coeff = (t.coeff + rng.uniform(-step, step)).clamp(lo, hi);
            }
        }
    }
    event
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> GenSpec {
        GenSpec {
            seed,
            n_entities: 10,
            ..GenSpec::default()
        }
    }

    #[test]
    fn polarity_split_follows_ratio() {
        let w = generate_world(&spec(7)).unwrap();
        assert_eq!(w.polarity_counts(), (5, 5));
        let w = generate_world(&GenSpec {
            polarity_ratio: 0.3,
            ..spec(7)
        })
        .unwrap();
        assert_eq!(w.polarity_counts(), (3, 7));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&spec(11)).unwrap();
        let b = generate_world(&spec(11)).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn invalid_specs_name_the_invariant() {
        let cases: Vec<(GenSpec, &str)> = vec![
            (GenSpec { n_entities: 1, ..spec(0) }, "n_entities"),
            (GenSpec { polarity_ratio: 1.0, ..spec(0) }, "polarity_ratio"),
            (GenSpec { n_levels: 0, ..spec(0) }, "n_levels"),
            (GenSpec { arena_extent: 0.0, ..spec(0) }, "arena_extent"),
        ];
        for (s, needle) in cases {
            let err = generate_world(&s).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
        let mut s = spec(0);
        s.drift.drift_levels.insert(0);
        assert!(generate_world(&s).unwrap_err().to_string().contains("level 0"));
    }

    #[test]
    fn singleton_basis_forces_the_term() {
        let grammar = CausationGrammar {
            basis: vec![BasisTerm::InvSquare],
            max_terms: 1,
            ..CausationGrammar::default()
        };
        let mut rng = Stream::new(1);
        let law = sample_law(&grammar, 0, &BTreeSet::new(), &mut rng).unwrap();
        assert_eq!(law.terms.len(), 1);
        assert_eq!(law.terms[0].term, BasisTerm::InvSquare);
        assert!(law.drift_handle.is_none());
    }

    #[test]
    fn empty_basis_is_rejected() {
        let grammar = CausationGrammar {
            basis: vec![],
            ..CausationGrammar::default()
        };
        assert!(sample_law(&grammar, 0, &BTreeSet::new(), &mut Stream::new(0)).is_err());
    }

    #[test]
    fn drift_handle_only_on_drift_levels() {
        let levels = BTreeSet::from([1, 2]);
        let mut rng = Stream::new(4);
        let g = CausationGrammar::default();
        assert!(sample_law(&g, 0, &levels, &mut rng).unwrap().drift_handle.is_none());
        assert_eq!(
            sample_law(&g, 2, &levels, &mut rng).unwrap().drift_handle,
            Some(DriftHandle { level: 2 })
        );
    }

    #[test]
    fn coefficient_mean_is_centered() {
        let grammar = CausationGrammar {
            coeff_range: (-1.0, 1.0),
            ..CausationGrammar::default()
        };
        let mut rng = Stream::new(99);
        let mut coeffs = Vec::new();
        for _ in 0..1000 {
            let law = sample_law(&grammar, 0, &BTreeSet::new(), &mut rng).unwrap();
            for t in &law.terms {
                assert!((-1.0..=1.0).contains(&t.coeff));
                coeffs.push(t.coeff);
            }
        }
        let mean = coeffs.iter().sum::<f64>() / coeffs.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn colocated_entities_share_one_composite() {
        let mut w = generate_world(&GenSpec {
            n_entities: 4,
            n_levels: 2,
            ..spec(3)
        })
        .unwrap();
        for e in w.entities.iter_mut() {
            e.position = Vector::from_slice(&[1.25, -0.5]);
        }
        build_hierarchy(&mut w);
        assert_eq!(w.composites[0].len(), 1);
        assert_eq!(w.composites[0][0].children, vec![0, 1, 2, 3]);
    }

    #[test]
    fn equal_inertia_aggregate_is_arithmetic_mean() {
        let mut w = generate_world(&GenSpec {
            n_entities: 3,
            ..spec(5)
        })
        .unwrap();
        let pts = [[0.5, 0.5], [1.0, 1.5], [1.5, 0.25]];
        for (e, p) in w.entities.iter_mut().zip(pts) {
            e.position = Vector::from_slice(&p);
        }
        build_hierarchy(&mut w);
        let c = &w.composites[0][0];
        assert_eq!(c.children.len(), 3);
        assert!((c.agg_position[0] - 1.0).abs() < 1e-12);
        assert!((c.agg_position[1] - 0.75).abs() < 1e-12);
        assert_eq!(c.agg_inertia, 3.0);
    }

    #[test]
    fn deeper_hierarchy_nests_partitions() {
        let w = generate_world(&GenSpec {
            n_entities: 60,
            n_levels: 4,
            ..spec(21)
        })
        .unwrap();
        for level in 1..4 {
            let below = if level == 1 {
                w.entities.len()
            } else {
                w.composites[level - 2].len()
            };
            let mut seen: Vec<u64> = w.composites[level - 1].iter().flat_map(|c| c.children.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen.len(), below);
            seen.dedup();
            assert_eq!(seen.len(), below);
        }
        assert!(w.composites[2].len() <= w.composites[1].len());
        let leaves = w.leaves(3);
        assert_eq!(leaves.iter().map(Vec::len).sum::<usize>(), 60);
    }

    #[test]
    fn no_drift_without_schedule() {
        let mut w = generate_world(&spec(8)).unwrap();
        let laws = w.laws.clone();
        for t in 0..50 {
            w.tick = t;
            assert!(apply_drift(&mut w).is_none());
        }
        assert_eq!(w.laws, laws);
    }

    #[test]
    fn smooth_drift_stays_in_range_and_spares_level_zero() {
        let mut s = spec(8);
        s.drift.smooth_rate = 0.01;
        let mut w = generate_world(&s).unwrap();
        let base = w.law_bytes(0);
        let first = w.laws[1].clone();
        for t in 0..200 {
            w.tick = t;
            apply_drift(&mut w);
            assert_eq!(w.law_bytes(0), base);
        }
        assert_ne!(w.laws[1], first);
        let (lo, hi) = s.grammar.coeff_range;
        assert!(w.laws[1].terms.iter().all(|t| (lo..=hi).contains(&t.coeff)));
    }
}
