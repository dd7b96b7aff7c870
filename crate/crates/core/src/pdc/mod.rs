//! Probabilistic derivation and composition.
//!
//! Every propagation stage draws `N` candidate depth maps from a
//! [`HypothesisGenerator`], keeps the one most consistent with the previous
//! stage and the partial measurement, and reports the per-pixel spread of
//! the candidates as an uncertainty map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{run_stage, StageSchedule, StageState};
use crate::raster::{DepthMap, Grid, ImageFrame, Rect, UncertaintyMap};

mod generators;

pub use generators::{
    builtin_generators, ConstantFill, GeneratorSpec, GuidedInterpolator, NoisyOracle,
};

/// Candidate depth maps of one stage.
#[derive(Clone, Debug)]
pub struct DistributionSet {
    candidates: Vec<DepthMap>,
    stage_index: usize,
}

impl DistributionSet {
    pub fn new(candidates: Vec<DepthMap>, stage_index: usize) -> Result<Self> {
        let first = candidates.first().ok_or(Error::EmptyDistribution)?;
        let dims = first.dims();
        for (k, c) in candidates.iter().enumerate() {
            c.ensure_dims(dims)?;
            if c.valid_count() != c.width() * c.height() {
                return Err(Error::InvalidValue(format!(
                    "candidate {k} of stage {stage_index} has holes"
                )));
            }
        }
        Ok(Self {
            candidates,
            stage_index,
        })
    }

    pub fn candidates(&self) -> &[DepthMap] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn stage_index(&self) -> usize {
        self.stage_index
    }

    pub fn dims(&self) -> (usize, usize) {
        self.candidates[0].dims()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionNorm {
    /// Sum of absolute differences over the mask.
    #[default]
    L1,
    /// Euclidean norm over the mask.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdcConfig {
    /// Weight of the partial-depth term.
    pub lambda: f64,
    pub samples_per_stage: usize,
    pub norm: SelectionNorm,
}

impl Default for PdcConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            samples_per_stage: 5,
            norm: SelectionNorm::L1,
        }
    }
}

impl PdcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "pdc.lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.samples_per_stage == 0 {
            return Err(Error::Config("pdc.samples_per_stage must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a generator sees at one stage. All maps are cropped to `rect`.
#[derive(Clone, Copy, Debug)]
pub struct StageInput<'a> {
    pub stage_index: usize,
    /// Stage crop in full-frame coordinates.
    pub rect: Rect,
    pub image: &'a ImageFrame,
    /// Scale-adjusted mix of refined and coarse depth.
    pub mixed: &'a DepthMap,
}

/// Source of depth hypotheses for a stage.
///
/// Implementations must return a map without holes at the stage size and
/// must be deterministic given `(input, sample_index, seed)`.
pub trait HypothesisGenerator: Send + Sync {
    fn name(&self) -> &'static str;

    fn generate(&self, input: &StageInput<'_>, sample_index: usize, seed: u64) -> Result<DepthMap>;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `sample` at stage `stage` under run seed `master`.
pub fn derive_seed(master: u64, stage: usize, sample: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stage as u64) ^ sample as u64)
}

/// Per-pixel population standard deviation over the candidates.
pub fn uncertainty(p: &DistributionSet) -> UncertaintyMap {
    let (w, h) = p.dims();
    let n = p.len() as f64;
    let grid = Grid::from_fn(w, h, |x, y| {
        let mean = p.candidates.iter().map(|c| c.get(x, y)).sum::<f64>() / n;
        let var = p
            .candidates
            .iter()
            .map(|c| {
                let d = c.get(x, y) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        var.sqrt()
    });
    UncertaintyMap::from_grid(grid).expect("standard deviation is finite and non-negative")
}

fn masked_norm(candidate: &DepthMap, reference: &DepthMap, norm: SelectionNorm) -> f64 {
    let diffs = candidate
        .values()
        .iter()
        .zip(reference.values())
        .filter(|(_, &r)| r > 0.0)
        .map(|(&c, &r)| c - r);
    match norm {
        SelectionNorm::L1 => diffs.map(f64::abs).sum(),
        SelectionNorm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    }
}

/// Selection objective of one candidate: fidelity to the previous stage on
/// its valid pixels plus `lambda` times fidelity to the partial depth.
pub fn objective(candidate: &DepthMap, refined_prev: &DepthMap, partial: &DepthMap, cfg: &PdcConfig) -> f64 {
    let prev = masked_norm(candidate, refined_prev, cfg.norm);
    if cfg.lambda == 0.0 {
        return prev;
    }
    prev + cfg.lambda * masked_norm(candidate, partial, cfg.norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub objectives: Vec<f64>,
}

/// Index of the minimizing candidate; ties go to the lowest index.
pub fn select_candidate(p: &DistributionSet, refined_prev: &DepthMap, partial: &DepthMap, cfg: &PdcConfig) -> Result<Selection> {
    if p.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    refined_prev.ensure_dims(p.dims())?;
    partial.ensure_dims(p.dims())?;
    let objectives: Vec<f64> = p
        .candidates
        .iter()
        .map(|c| objective(c, refined_prev, partial, cfg))
        .collect();
    let mut index = 0;
    for (k, &v) in objectives.iter().enumerate().skip(1) {
        if v < objectives[index] {
            index = k;
        }
    }
    Ok(Selection { index, objectives })
}

/// The candidate minimizing [`objective`].
pub fn derive_stage(p: &DistributionSet, refined_prev: &DepthMap, partial: &DepthMap, cfg: &PdcConfig) -> Result<DepthMap> {
    let sel = select_candidate(p, refined_prev, partial, cfg)?;
    Ok(p.candidates[sel.index].clone())
}

/// Full-frame inputs of a composition run.
#[derive(Clone, Copy, Debug)]
pub struct ComposeInputs<'a> {
    pub image: &'a ImageFrame,
    /// Partial depth embedded in the full frame.
    pub partial: &'a DepthMap,
    /// Coarse depth over the full frame, rescaled per stage. Without it the
    /// generator sees only the refined region.
    pub coarse: Option<&'a DepthMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_index: usize,
    pub rect: Rect,
    pub seeds: Vec<u64>,
    pub selected: usize,
    pub objectives: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Composition {
    pub depth: DepthMap,
    pub uncertainty: UncertaintyMap,
    pub stages: Vec<StageRecord>,
}

/// Propagate the partial depth through every stage of `schedule`.
pub fn compose_full(
    inputs: ComposeInputs<'_>,
    schedule: &StageSchedule,
    generator: &dyn HypothesisGenerator,
    cfg: &PdcConfig,
    seed: u64,
) -> Result<Composition> {
    cfg.validate()?;
    let frame = schedule.frame();
    inputs.image.ensure_dims(frame)?;
    inputs.partial.ensure_dims(frame)?;
    if let Some(c) = inputs.coarse {
        c.ensure_dims(frame)?;
    }
    let first = schedule.partial_rect();
    let partial = inputs.partial;
    if partial.valid_count() == 0 {
        return Err(Error::EmptyMask);
    }
    for y in 0..partial.height() {
        for x in 0..partial.width() {
            if partial.is_valid(x, y) && !first.contains(x, y) {
                return Err(Error::InvalidValue(format!(
                    "partial depth at ({x}, {y}) lies outside the first stage rect {first}"
                )));
            }
        }
    }

    let mut refined = partial.crop(first)?;
    let mut records = Vec::with_capacity(schedule.count());
    let mut last_uncertainty = None;
    for (i, pair) in schedule.stages().windows(2).enumerate() {
        let stage_index = i + 1;
        let (prev_rect, rect) = (pair[0], pair[1]);
        let at = prev_rect.relative_to(&rect)?;
        let refined_prev = refined.pad_into(rect.size(), at)?;
        let mixed = match inputs.coarse {
            Some(coarse) => run_stage(&StageState::new(refined_prev.clone(), coarse.crop(rect)?)?)?,
            None => refined_prev.clone(),
        };
        let image = inputs.image.crop(rect)?;
        let stage_input = StageInput {
            stage_index,
            rect,
            image: &image,
            mixed: &mixed,
        };
        let seeds: Vec<u64> = (0..cfg.samples_per_stage)
            .map(|k| derive_seed(seed, stage_index, k))
            .collect();
        let candidates = seeds
            .par_iter()
            .enumerate()
            .map(|(k, &s)| generator.generate(&stage_input, k, s))
            .collect::<Result<Vec<_>>>()?;
        let set = DistributionSet::new(candidates, stage_index)?;
        let partial_stage = partial.crop(rect)?;
        let sel = select_candidate(&set, &refined_prev, &partial_stage, cfg)?;
        last_uncertainty = Some(uncertainty(&set));
        refined = set.candidates[sel.index].clone();
        records.push(StageRecord {
            stage_index,
            rect,
            seeds,
            selected: sel.index,
            objectives: sel.objectives,
        });
    }
    Ok(Composition {
        depth: refined,
        uncertainty: last_uncertainty.expect("a schedule has at least one stage"),
        stages: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::build_schedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
        DepthMap::from_fn(w, h, |_, _| rng.random_range(1.0..20.0)).unwrap()
    }

    fn sparse_map(rng: &mut ChaCha8Rng, w: usize, h: usize, keep: f64) -> DepthMap {
        DepthMap::from_fn(w, h, |_, _| {
            if rng.random_bool(keep) {
                rng.random_range(1.0..20.0)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn uncertainty_examples() {
        let a = DepthMap::constant(3, 2, 4.0).unwrap();
        let same = DistributionSet::new(vec![a.clone(), a.clone(), a.clone()], 1).unwrap();
        assert!(uncertainty(&same).values().iter().all(|&v| v == 0.0));
        let single = DistributionSet::new(vec![a.clone()], 1).unwrap();
        assert!(uncertainty(&single).values().iter().all(|&v| v == 0.0));
        let two = DistributionSet::new(vec![DepthMap::constant(3, 2, 2.0).unwrap(), a], 1).unwrap();
        assert!(uncertainty(&two).values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uncertainty_is_permutation_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let maps: Vec<DepthMap> = (0..5).map(|_| random_map(&mut rng, 6, 5)).collect();
        let base = uncertainty(&DistributionSet::new(maps.clone(), 0).unwrap());
        let mut rev = maps.clone();
        rev.reverse();
        let perm = uncertainty(&DistributionSet::new(rev, 0).unwrap());
        let shifted: Vec<DepthMap> = maps.iter().map(|m| m.map(|v| v + 7.5).unwrap()).collect();
        let shift = uncertainty(&DistributionSet::new(shifted, 0).unwrap());
        for ((a, b), c) in base.values().iter().zip(perm.values()).zip(shift.values()) {
            assert!((a - b).abs() < 1e-12);
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn distribution_set_contract() {
        assert!(matches!(DistributionSet::new(vec![], 0), Err(Error::EmptyDistribution)));
        let holes = DepthMap::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(DistributionSet::new(vec![holes], 0).is_err());
        let a = DepthMap::constant(2, 2, 1.0).unwrap();
        let b = DepthMap::constant(3, 2, 1.0).unwrap();
        assert!(DistributionSet::new(vec![a, b], 0).is_err());
    }

    #[test]
    fn single_candidate_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_map(&mut rng, 4, 4);
        let p = DistributionSet::new(vec![c.clone()], 1).unwrap();
        let prev = sparse_map(&mut rng, 4, 4, 0.5);
        let part = sparse_map(&mut rng, 4, 4, 0.5);
        assert_eq!(derive_stage(&p, &prev, &part, &PdcConfig::default()).unwrap(), c);
    }

    #[test]
    fn exact_match_candidate_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_map(&mut rng, 8, 8);
        let prev = DepthMap::from_fn(8, 8, |x, y| if x < 4 { truth.get(x, y) } else { 0.0 }).unwrap();
        let part = DepthMap::from_fn(8, 8, |x, y| if y > 5 { truth.get(x, y) } else { 0.0 }).unwrap();
        let mut cands: Vec<DepthMap> = (0..4).map(|_| random_map(&mut rng, 8, 8)).collect();
        cands.insert(2, truth.clone());
        let p = DistributionSet::new(cands, 1).unwrap();
        let sel = select_candidate(&p, &prev, &part, &PdcConfig::default()).unwrap();
        assert_eq!(sel.index, 2);
        assert_eq!(sel.objectives[2], 0.0);
    }

    #[test]
    fn selection_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cands: Vec<DepthMap> = (0..5).map(|_| random_map(&mut rng, 8, 8)).collect();
            let prev = sparse_map(&mut rng, 8, 8, 0.4);
            let part = sparse_map(&mut rng, 8, 8, 0.2);
            let cfg = PdcConfig::default();
            let mut best = (f64::INFINITY, 0);
            for (k, c) in cands.iter().enumerate() {
                let mut obj = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        if prev.get(x, y) > 0.0 {
                            obj += (c.get(x, y) - prev.get(x, y)).abs();
                        }
                        if part.get(x, y) > 0.0 {
                            obj += (c.get(x, y) - part.get(x, y)).abs();
                        }
                    }
                }
                if obj < best.0 {
                    best = (obj, k);
                }
            }
            let p = DistributionSet::new(cands.clone(), 1).unwrap();
            assert_eq!(derive_stage(&p, &prev, &part, &cfg).unwrap(), cands[best.1]);
        }
    }

    #[test]
    fn lambda_extremes() {
        // Candidate 0 matches the previous stage, candidate 1 the partial.
        let prev = DepthMap::new(4, 1, vec![5.0, 5.0, 0.0, 0.0]).unwrap();
        let part = DepthMap::new(4, 1, vec![0.0, 0.0, 9.0, 9.0]).unwrap();
        let c0 = DepthMap::new(4, 1, vec![5.0, 5.0, 6.0, 6.0]).unwrap();
        let c1 = DepthMap::new(4, 1, vec![4.0, 4.0, 9.0, 9.0]).unwrap();
        let p = DistributionSet::new(vec![c0.clone(), c1.clone()], 1).unwrap();
        let zero = PdcConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let huge = PdcConfig {
            lambda: 1e12,
            ..Default::default()
        };
        assert_eq!(derive_stage(&p, &prev, &part, &zero).unwrap(), c0);
        assert_eq!(derive_stage(&p, &prev, &part, &huge).unwrap(), c1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = DepthMap::constant(2, 2, 3.0).unwrap();
        let p = DistributionSet::new(vec![c.clone(), c.clone(), c], 1).unwrap();
        let prev = DepthMap::constant(2, 2, 1.0).unwrap();
        let sel = select_candidate(&p, &prev, &DepthMap::zeros(2, 2), &PdcConfig::default()).unwrap();
        assert_eq!(sel.index, 0);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = derive_seed(7, 1, 0);
        assert_eq!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(7, 1, 1));
        assert_ne!(a, derive_seed(7, 2, 0));
        assert_ne!(a, derive_seed(8, 1, 0));
    }

    #[test]
    fn compose_rejects_partial_outside_first_rect() {
        let img = ImageFrame::constant(10, 10, 0.5).unwrap();
        let part = DepthMap::from_fn(10, 10, |x, _| if x == 0 { 1.0 } else { 0.0 }).unwrap();
        let sched = build_schedule((10, 10), Rect::new(3, 3, 4, 4).unwrap(), 2).unwrap();
        let gen = ConstantFill;
        let inputs = ComposeInputs {
            image: &img,
            partial: &part,
            coarse: None,
        };
        assert!(compose_full(inputs, &sched, &gen, &PdcConfig::default(), 0).is_err());
        let empty = DepthMap::zeros(10, 10);
        let inputs = ComposeInputs {
            partial: &empty,
            ..inputs
        };
        assert!(matches!(
            compose_full(inputs, &sched, &gen, &PdcConfig::default(), 0),
            Err(Error::EmptyMask)
        ));
    }
}
