//! Grand coupling through shared move draws, coalescence and hitting-time
//! measurement, monotonicity checks, and the drift-to-maximum potential.

use crate::dynamics::{step_in_place, BiasField, MoveDraw};
use crate::numeric::{rat_usize, Rat};
use crate::region::{Downset, EnumerationTooLarge, Region};
use crate::rng::DrawStream;
use num_traits::{One, Zero};
use rayon::prelude::*;

/// Two copies of the chain fed identical draws. Once equal they stay equal:
/// the step is a deterministic function of (state, draw).
#[derive(Clone, Debug)]
pub struct CoupledPair {
    pub a: Downset,
    pub b: Downset,
}

impl CoupledPair {
    pub fn coalesced(&self) -> bool {
        self.a == self.b
    }
}

pub fn coupled_step(region: &Region, bias: &BiasField, pair: &mut CoupledPair, draw: &MoveDraw) {
    step_in_place(region, bias, &mut pair.a, draw);
    step_in_place(region, bias, &mut pair.b, draw);
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    /// First step at which the event happened; None on timeout.
    pub time: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TimeStats {
    pub runs: usize,
    pub timeouts: usize,
    pub mean: f64,
    pub median: f64,
    pub max: u64,
}

pub fn summarize(outcomes: &[SeedOutcome]) -> TimeStats {
    let mut times: Vec<u64> = outcomes.iter().filter_map(|o| o.time).collect();
    times.sort_unstable();
    let timeouts = outcomes.len() - times.len();
    let mean = if times.is_empty() {
        f64::NAN
    } else {
        times.iter().map(|&t| t as f64).sum::<f64>() / times.len() as f64
    };
    let median = if times.is_empty() {
        f64::NAN
    } else {
        times[times.len() / 2] as f64
    };
    TimeStats {
        runs: outcomes.len(),
        timeouts,
        mean,
        median,
        max: times.last().copied().unwrap_or(0),
    }
}

/// Coalescence time of the shared-draw coupling per seed.
///
/// The default worst start is the extreme pair (empty, full): monotonicity
/// sandwiches every other pair between them.
pub fn coupling_time(
    region: &Region,
    bias: &BiasField,
    start: (Downset, Downset),
    seeds: &[u64],
    max_steps: u64,
) -> Vec<SeedOutcome> {
    seeds
        .par_iter()
        .map(|&seed| SeedOutcome {
            seed,
            time: coupling_time_single(region, bias, start.clone(), seed, max_steps),
        })
        .collect()
}

pub fn coupling_time_single(
    region: &Region,
    bias: &BiasField,
    start: (Downset, Downset),
    seed: u64,
    max_steps: u64,
) -> Option<u64> {
    let mut pair = CoupledPair {
        a: start.0,
        b: start.1,
    };
    if pair.coalesced() {
        return Some(0);
    }
    let mut stream = DrawStream::new(seed);
    let alpha = region.span();
    for t in 1..=max_steps {
        let draw = stream.next_draw(alpha);
        coupled_step(region, bias, &mut pair, &draw);
        if pair.coalesced() {
            return Some(t);
        }
    }
    None
}

/// First time the chain started empty reaches the full downset, per seed.
pub fn hitting_time_to_full(
    region: &Region,
    bias: &BiasField,
    seeds: &[u64],
    max_steps: u64,
) -> Vec<SeedOutcome> {
    seeds
        .par_iter()
        .map(|&seed| SeedOutcome {
            seed,
            time: hitting_time_single(region, bias, seed, max_steps),
        })
        .collect()
}

pub fn hitting_time_single(
    region: &Region,
    bias: &BiasField,
    seed: u64,
    max_steps: u64,
) -> Option<u64> {
    let mut s = region.empty();
    if region.is_full(&s) {
        return Some(0);
    }
    let mut stream = DrawStream::new(seed);
    let alpha = region.span();
    for t in 1..=max_steps {
        let draw = stream.next_draw(alpha);
        step_in_place(region, bias, &mut s, &draw);
        if region.is_full(&s) {
            return Some(t);
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct MaxDrift {
    /// Probability the next state is strictly larger.
    pub p_up: Rat,
    /// Probability the next state is strictly smaller.
    pub p_down: Rat,
    pub gap: Rat,
}

/// Exact one-step up/down move mass: adds carry `1/(2 alpha)` per valley,
/// removals `1/(2 alpha lambda_v)` per peak.
pub fn drift_toward_max(region: &Region, bias: &BiasField, s: &Downset) -> MaxDrift {
    let per_choice = Rat::one() / rat_usize(2 * region.span());
    let mut p_up = Rat::zero();
    let mut p_down = Rat::zero();
    for ray in 0..region.span() {
        if region.can_add(s, ray).is_some() {
            p_up += &per_choice;
        }
        if region.can_remove(s, ray).is_some() {
            let h = s.counts()[ray] as usize - 1;
            p_down += &per_choice / bias.lambda_at(ray, h);
        }
    }
    let gap = &p_up - &p_down;
    MaxDrift { p_up, p_down, gap }
}

/// Drift classes of the hitting-time potential: the boundary class collects
/// states whose peak count is exactly `dim` times the valley count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftClass {
    C1,
    C2,
}

pub fn classify_drift(region: &Region, s: &Downset) -> DriftClass {
    if region.is_full(s) {
        return DriftClass::C1;
    }
    let p = region.peaks(s).len();
    let v = region.valleys(s).len();
    if p == region.dim() * v {
        DriftClass::C2
    } else {
        debug_assert!(p < region.dim() * v, "peak/valley inequality violated");
        DriftClass::C1
    }
}

/// `H(full, s) + [s in C2] / (2 dim)`.
pub fn potential_value(region: &Region, s: &Downset) -> Rat {
    let h = rat_usize(region.volume()) - Rat::from_integer(s.volume().into());
    match classify_drift(region, s) {
        DriftClass::C2 => h + Rat::one() / rat_usize(2 * region.dim()),
        DriftClass::C1 => h,
    }
}

#[derive(Clone, Debug)]
pub struct PotentialDriftReport {
    pub states: usize,
    /// Target additive drift bound `-1/(4 alpha dim)`.
    pub bound: Rat,
    /// Largest exact drift observed over non-full states.
    pub max_drift: Rat,
    pub violations: Vec<(Vec<u32>, Rat)>,
}

impl PotentialDriftReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exact expected change of the potential for every non-full state.
pub fn potential_drift_check(
    region: &Region,
    bias: &BiasField,
    cap: usize,
) -> Result<PotentialDriftReport, EnumerationTooLarge> {
    let states = region.enumerate_downsets(cap)?;
    let per_choice = Rat::one() / rat_usize(2 * region.span());
    let bound = -(Rat::one() / rat_usize(4 * region.span() * region.dim()));
    let mut max_drift: Option<Rat> = None;
    let mut violations = Vec::new();
    for s in &states {
        if region.is_full(s) {
            continue;
        }
        let here = potential_value(region, s);
        let mut drift = Rat::zero();
        for ray in 0..region.span() {
            if region.can_add(s, ray).is_some() {
                let next = region.add(s, ray);
                drift += (potential_value(region, &next) - &here) * &per_choice;
            }
            if region.can_remove(s, ray).is_some() {
                let h = s.counts()[ray] as usize - 1;
                let next = region.remove(s, ray);
                let p = &per_choice / bias.lambda_at(ray, h);
                drift += (potential_value(region, &next) - &here) * p;
            }
        }
        if drift > bound {
            violations.push((s.counts().to_vec(), drift.clone()));
        }
        max_drift = Some(match max_drift.take() {
            Some(m) => m.max(drift),
            None => drift,
        });
    }
    Ok(PotentialDriftReport {
        states: states.len(),
        bound,
        max_drift: max_drift.unwrap_or_else(Rat::zero),
        violations,
    })
}

/// Decision-threshold grid for exhaustive monotonicity tests: each removal
/// threshold with both sides of the comparison, plus interior anchors.
pub fn p_grid(region: &Region, bias: &BiasField) -> Vec<f64> {
    let mut grid = vec![1e-12, 0.5, 1.0 - 1e-12];
    for ray in 0..region.span() {
        for h in 0..region.ray_len(ray) {
            let q = bias.inv_at(ray, h);
            grid.push(q);
            grid.push(q.next_up());
            grid.push((q - f64::EPSILON).max(1e-300));
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.retain(|&p| p > 0.0 && p < 1.0);
    grid
}

#[derive(Clone, Debug)]
pub struct MonotoneReport {
    pub ordered_pairs: usize,
    pub draws_per_pair: usize,
    pub violations: usize,
}

/// Exhaustive monotone-coupling check: for every ordered pair `a <= b`, every
/// ray, both directions, and every grid p, one coupled step preserves order.
pub fn monotone_grid_check(
    region: &Region,
    bias: &BiasField,
    cap: usize,
) -> Result<MonotoneReport, EnumerationTooLarge> {
    let states = region.enumerate_downsets(cap)?;
    let grid = p_grid(region, bias);
    let mut ordered_pairs = 0usize;
    let mut violations = 0usize;
    for a in &states {
        for b in &states {
            if !region.subset(a, b) {
                continue;
            }
            ordered_pairs += 1;
            for ray in 0..region.span() as u32 {
                for up in [true, false] {
                    for &p in &grid {
                        let draw = MoveDraw { ray, up, p };
                        let mut pair = CoupledPair {
                            a: a.clone(),
                            b: b.clone(),
                        };
                        coupled_step(region, bias, &mut pair, &draw);
                        if !region.subset(&pair.a, &pair.b) {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(MonotoneReport {
        ordered_pairs,
        draws_per_pair: 2 * region.span() * grid.len(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{rat, rat_int};
    use crate::rng::{draw_at, replica_seed};

    #[test]
    fn unison_after_coalescence() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(2)).unwrap();
        let mut pair = CoupledPair {
            a: r.empty(),
            b: r.empty(),
        };
        let mut stream = DrawStream::new(5);
        for _ in 0..500 {
            let draw = stream.next_draw(r.span());
            coupled_step(&r, &b, &mut pair, &draw);
            assert!(pair.coalesced());
        }
    }

    #[test]
    fn single_cell_couples_in_one_step() {
        // With one ray and lambda = 1 every draw coalesces the extreme pair.
        let r = Region::rectangle(&[1]).unwrap();
        let b = BiasField::uniform(&r, rat_int(1)).unwrap();
        let seeds: Vec<u64> = (0..50).map(|k| replica_seed(7, k)).collect();
        for o in coupling_time(&r, &b, (r.empty(), r.full()), &seeds, 100) {
            assert_eq!(o.time, Some(1));
        }
    }

    #[test]
    fn equal_start_has_zero_coupling_time() {
        let r = Region::rectangle(&[2, 2]).unwrap();
        let b = BiasField::uniform(&r, rat_int(2)).unwrap();
        let out = coupling_time(&r, &b, (r.full(), r.full()), &[1, 2, 3], 10);
        assert!(out.iter().all(|o| o.time == Some(0)));
    }

    #[test]
    fn hitting_time_single_cell_geometric() {
        let r = Region::rectangle(&[1]).unwrap();
        let b = BiasField::uniform(&r, rat_int(10)).unwrap();
        let seeds: Vec<u64> = (0..4000).map(|k| replica_seed(11, k)).collect();
        let stats = summarize(&hitting_time_to_full(&r, &b, &seeds, 10_000));
        assert_eq!(stats.timeouts, 0);
        assert!((stats.mean - 2.0).abs() < 0.12, "mean {}", stats.mean);
    }

    #[test]
    fn hitting_time_cubic_trend_on_squares() {
        // At lambda = dim = 2 the hitting time to the full square scales like
        // h^(2d-1) = h^3 up to constants; each measured mean must sit within
        // a factor 4 of the one-parameter cubic fitted to all of them.
        let sizes = [4u32, 6, 8];
        let mut means = Vec::new();
        for (i, &h) in sizes.iter().enumerate() {
            let r = Region::rectangle(&[h, h]).unwrap();
            let b = BiasField::uniform(&r, rat_int(2)).unwrap();
            let seeds: Vec<u64> = (0..100).map(|k| replica_seed(40 + i as u64, k)).collect();
            let stats = summarize(&hitting_time_to_full(&r, &b, &seeds, 10_000_000));
            assert_eq!(stats.timeouts, 0);
            means.push(stats.mean);
        }
        let c = means
            .iter()
            .zip(&sizes)
            .map(|(m, &h)| m / (h as f64).powi(3))
            .sum::<f64>()
            / sizes.len() as f64;
        for (m, &h) in means.iter().zip(&sizes) {
            let fit = c * (h as f64).powi(3);
            assert!(*m <= 4.0 * fit && *m >= fit / 4.0, "mean {m} vs fit {fit}");
        }
    }

    #[test]
    fn fluctuating_hit_dominated_by_uniform_floor() {
        // Sharing draws, the chain with lambda_x >= lambda_min reaches the full
        // state no later than the uniform lambda_min chain, seed by seed.
        let r = Region::rectangle(&[4, 4]).unwrap();
        let floor = rat(3, 2);
        let uniform = BiasField::uniform(&r, floor.clone()).unwrap();
        let fluct = BiasField::per_site(&r, |p| if p[0] >= 3 { rat_int(4) } else { floor.clone() })
            .unwrap();
        for k in 0..40 {
            let seed = replica_seed(123, k);
            let tu = hitting_time_single(&r, &uniform, seed, 500_000).unwrap();
            let tf = hitting_time_single(&r, &fluct, seed, 500_000).unwrap();
            assert!(tf <= tu, "seed {seed}: fluct {tf} > uniform {tu}");
        }
    }

    #[test]
    fn sandwich_dominates_interior_pairs() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(2)).unwrap();
        let states = r.enumerate_downsets(100).unwrap();
        for k in 0..30u64 {
            let seed = replica_seed(77, k);
            let outer = coupling_time_single(&r, &b, (r.empty(), r.full()), seed, 100_000)
                .expect("outer pair coalesces");
            // Any nested pair driven by the same seed coalesces no later.
            let i = (replica_seed(seed, 1) % states.len() as u64) as usize;
            let j = (replica_seed(seed, 2) % states.len() as u64) as usize;
            let (lo, hi) = if r.subset(&states[i], &states[j]) {
                (states[i].clone(), states[j].clone())
            } else if r.subset(&states[j], &states[i]) {
                (states[j].clone(), states[i].clone())
            } else {
                continue;
            };
            let inner = coupling_time_single(&r, &b, (lo, hi), seed, 100_000).unwrap();
            assert!(inner <= outer);
        }
    }

    #[test]
    fn drift_toward_max_examples() {
        let r = Region::rectangle(&[2, 2]).unwrap();
        let b = BiasField::uniform(&r, rat_int(2)).unwrap();
        let at_empty = drift_toward_max(&r, &b, &r.empty());
        assert_eq!(at_empty.p_up, rat(1, 6));
        assert_eq!(at_empty.p_down, rat_int(0));
        assert_eq!(at_empty.gap, rat(1, 6));

        let at_full = drift_toward_max(&r, &b, &r.full());
        assert_eq!(at_full.p_up, rat_int(0));
        assert!(at_full.p_down > rat_int(0));
    }

    #[test]
    fn drift_gap_nonnegative_at_lambda_d() {
        for (dims, lam) in [(vec![3u32, 3], 2i64), (vec![2, 2, 2], 3)] {
            let r = Region::rectangle(&dims).unwrap();
            let b = BiasField::uniform(&r, rat_int(lam)).unwrap();
            for s in r.enumerate_downsets(10_000).unwrap() {
                if region_full(&r, &s) {
                    continue;
                }
                let d = drift_toward_max(&r, &b, &s);
                assert!(d.gap >= rat_int(0), "state {:?}", s.counts());
            }
        }
    }

    fn region_full(r: &Region, s: &Downset) -> bool {
        r.is_full(s)
    }

    #[test]
    fn c2_states_have_single_valley() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let mut seen_c2 = 0;
        for s in r.enumerate_downsets(1000).unwrap() {
            if classify_drift(&r, &s) == DriftClass::C2 {
                seen_c2 += 1;
                assert_eq!(r.valleys(&s).len(), 1);
                assert_eq!(r.peaks(&s).len(), r.dim());
            }
        }
        assert!(seen_c2 > 0);
    }

    #[test]
    fn potential_drift_3x3() {
        // At lambda = dim = 2 exactly one state beats the target bound: the
        // full staircase (3,2,1), whose four entries into the boundary class
        // (two adds plus two removals) outweigh its valley drift, for an
        // exact expected change of +1/80. The check reports it rather than
        // asserting the bound. Any slack (lambda = 3) clears the violation.
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b2 = BiasField::uniform(&r, rat_int(2)).unwrap();
        let report = potential_drift_check(&r, &b2, 1000).unwrap();
        assert_eq!(report.states, 20);
        assert_eq!(report.bound, -rat(1, 40));
        assert_eq!(report.violations, vec![(vec![2, 1, 1, 1, 1], rat(1, 80))]);
        assert_eq!(report.max_drift, rat(1, 80));

        let b3 = BiasField::uniform(&r, rat_int(3)).unwrap();
        let report = potential_drift_check(&r, &b3, 1000).unwrap();
        assert!(report.ok(), "violations: {:?}", report.violations);
        assert!(report.max_drift <= report.bound);
    }

    #[test]
    fn monotone_exhaustive_small() {
        let r = Region::rectangle(&[2, 3]).unwrap();
        for bias in [
            BiasField::uniform(&r, rat(7, 4)).unwrap(),
            BiasField::per_site(&r, |p| rat_int(1 + (p[0] + 2 * p[1]) % 3)).unwrap(),
        ] {
            let report = monotone_grid_check(&r, &bias, 1000).unwrap();
            assert_eq!(report.violations, 0);
        }
    }

    #[test]
    fn monotone_randomized_quick() {
        let r = Region::rectangle(&[4, 4]).unwrap();
        let b = BiasField::uniform(&r, rat(3, 2)).unwrap();
        let mut pair = CoupledPair {
            a: r.empty(),
            b: r.full(),
        };
        for t in 0..50_000u64 {
            let draw = draw_at(99, t, r.span());
            coupled_step(&r, &b, &mut pair, &draw);
            assert!(r.subset(&pair.a, &pair.b));
        }
    }
}
