//! Distance metrics on downsets and exact one-step drift for adjacent pairs.
//!
//! The exponential metric weights a cube `x` by `mu^(||x0|| - ||x||)` with
//! `mu = sqrt(lambda_min)`, summed over the symmetric difference. All drift
//! inequalities are evaluated exactly in the quadratic field Q(sqrt(lambda)),
//! falling back to directed-rounded rational enclosures only for the
//! contraction margin in dimension 3 and up (where sqrt(d^2-4) enters).

use crate::dynamics::BiasField;
use crate::numeric::{rat_sign, rat_to_f64, rat_usize, sqrt_bounds, Quad, Rat};
use crate::region::{Downset, EnumerationTooLarge, Region};
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("pair differs in {0} cubes; drift is defined for adjacent pairs only")]
    NotAdjacent(u64),
    #[error("psi is undefined on (0,1); got {0}")]
    Domain(f64),
}

/// Hamming distance `|a xor b|`; with prefix counts this is a coordinate sum.
pub fn hamming(a: &Downset, b: &Downset) -> u64 {
    a.counts()
        .iter()
        .zip(b.counts().iter())
        .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
        .sum()
}

/// Exponential metric on a region, with exact and floating evaluation paths.
#[derive(Clone, Debug)]
pub struct ExpMetric {
    lambda: Rat,
    mu: f64,
    ln_mu: f64,
    x0_norm: i64,
    dim: i64,
    base_norm: Vec<i64>,
}

impl ExpMetric {
    pub fn new(region: &Region, lambda: Rat) -> Self {
        assert!(lambda >= Rat::one(), "metric base must be >= 1");
        let mu = rat_to_f64(&lambda).sqrt();
        ExpMetric {
            mu,
            ln_mu: mu.ln(),
            x0_norm: region.x0_norm(),
            dim: region.dim() as i64,
            base_norm: (0..region.span()).map(|r| region.cube_norm(r, 0)).collect(),
            lambda,
        }
    }

    /// Metric matched to a bias field: `mu = sqrt(lambda_min)`.
    pub fn for_bias(region: &Region, bias: &BiasField) -> Self {
        Self::new(region, bias.lambda_l().clone())
    }

    pub fn lambda(&self) -> &Rat {
        &self.lambda
    }

    fn exponent(&self, ray: usize, h: u32) -> u32 {
        (self.x0_norm - (self.base_norm[ray] + self.dim * h as i64)) as u32
    }

    pub fn weight_exact(&self, ray: usize, h: u32) -> Quad {
        Quad::sqrt_pow(&self.lambda, self.exponent(ray, h))
    }

    pub fn weight_f64(&self, ray: usize, h: u32) -> f64 {
        self.mu.powi(self.exponent(ray, h) as i32)
    }

    pub fn phi_exact(&self, a: &Downset, b: &Downset) -> Quad {
        let mut acc = Quad::from_rat(Rat::zero());
        for (ray, (&ca, &cb)) in a.counts().iter().zip(b.counts().iter()).enumerate() {
            let (lo, hi) = (ca.min(cb), ca.max(cb));
            for h in lo..hi {
                acc = acc.add(&self.weight_exact(ray, h));
            }
        }
        acc
    }

    pub fn phi_f64(&self, a: &Downset, b: &Downset) -> f64 {
        let mut acc = 0.0;
        for (ray, (&ca, &cb)) in a.counts().iter().zip(b.counts().iter()).enumerate() {
            let (lo, hi) = (ca.min(cb), ca.max(cb));
            for h in lo..hi {
                acc += self.weight_f64(ray, h);
            }
        }
        acc
    }

    /// `ln(phi)` by log-sum-exp, usable when the direct sum would overflow.
    /// Returns negative infinity for equal downsets.
    pub fn phi_ln(&self, a: &Downset, b: &Downset) -> f64 {
        let mut exps: Vec<f64> = Vec::new();
        for (ray, (&ca, &cb)) in a.counts().iter().zip(b.counts().iter()).enumerate() {
            let (lo, hi) = (ca.min(cb), ca.max(cb));
            for h in lo..hi {
                exps.push(self.exponent(ray, h) as f64 * self.ln_mu);
            }
        }
        match exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) {
            m if m == f64::NEG_INFINITY => f64::NEG_INFINITY,
            m => m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln(),
        }
    }

    /// Exact upper bound on any metric value: volume times the top weight.
    pub fn value_bound_exact(&self, region: &Region) -> Quad {
        Quad::sqrt_pow(&self.lambda, region.norm_range()).scale(&rat_usize(region.volume()))
    }

    /// The coarser volume-times-`mu^stretch` bound; not always an upper bound
    /// (wide regions with strong bias exceed it), kept for reporting.
    pub fn stretch_bound_f64(&self, region: &Region) -> f64 {
        region.volume() as f64 * self.mu.powi(region.stretch() as i32)
    }
}

/// Contraction margin of the two-dimensional drift estimate: `sqrt(l) - 1`.
pub fn chi_2d(lambda: f64) -> f64 {
    lambda.sqrt() - 1.0
}

/// Contraction margin of the general-dimension drift estimate.
///
/// The one-step drift of an adjacent pair is at most
/// `phi * (d/sqrt(l) - 1 - 1/l) / (2 alpha)`; the quadratic in `1/sqrt(l)`
/// factors over the roots `(d +- sqrt(d^2-4))/2`, and the margin below is the
/// distance from `1/sqrt(l)` to the smaller root, which is what the bound
/// `-phi chi^2 / (2 alpha)` needs. In two dimensions both roots are 1 and
/// this is `1 - 1/sqrt(l)`.
pub fn chi_uniform(d: usize, lambda: f64) -> f64 {
    let d = d as f64;
    (d - (d * d - 4.0).sqrt()) / 2.0 - 1.0 / lambda.sqrt()
}

/// Certified form of [`chi_uniform`] squared, for exact drift assertions.
pub enum ChiSq {
    /// Dimension 2: exact element of Q(sqrt(lambda)).
    Exact(Quad),
    /// Dimension >= 3: rational upper bound on chi^2 with chi certified >= 0.
    Upper(Rat),
    /// The margin is certified negative: no contraction guarantee.
    NotContracting,
}

pub fn chi_sq_uniform(d: usize, lambda: &Rat, prec_bits: u32) -> ChiSq {
    assert!(d >= 2);
    if d == 2 {
        // chi = 1 - 1/sqrt(l); chi^2 = 1 + 1/l - (2/l) sqrt(l), exactly.
        let a = Rat::one() + Rat::one() / lambda;
        let b = -(Rat::from_integer(2.into()) / lambda);
        return ChiSq::Exact(Quad::new(a, b, lambda.clone()));
    }
    let disc = rat_usize(d * d - 4);
    let (s_lo, s_hi) = sqrt_bounds(&disc, prec_bits);
    let (t_lo, t_hi) = sqrt_bounds(lambda, prec_bits);
    let half = Rat::new(1.into(), 2.into());
    let root_lo = (rat_usize(d) - s_hi) * &half;
    let root_hi = (rat_usize(d) - s_lo) * &half;
    let inv_lo = Rat::one() / t_hi;
    let inv_hi = Rat::one() / t_lo;
    let chi_lo = root_lo - inv_hi;
    let chi_hi = root_hi - inv_lo;
    if rat_sign(&chi_hi) < 0 {
        return ChiSq::NotContracting;
    }
    if rat_sign(&chi_lo) < 0 {
        // Straddles zero at this precision: not usable as a certificate.
        return ChiSq::NotContracting;
    }
    ChiSq::Upper(&chi_hi * &chi_hi)
}

/// The fluctuating-bias contraction margin `1 + 1/l_max - d/sqrt(l_min)`,
/// exact in Q(sqrt(l_min)); nonnegative sign means the hypothesis holds.
pub fn chi_fluctuating(d: usize, lambda_min: &Rat, lambda_max: &Rat) -> Quad {
    let a = Rat::one() + Rat::one() / lambda_max;
    let b = -(rat_usize(d) / lambda_min);
    Quad::new(a, b, lambda_min.clone())
}

/// Log-distance used by the hitting-time argument: `ln(phi)` away from zero,
/// pinned to `-2 ln 2` at zero. Values in `(0,1)` are outside the domain.
pub fn psi(phi: f64) -> Result<f64, MetricError> {
    if phi == 0.0 {
        Ok(-2.0 * std::f64::consts::LN_2)
    } else if phi >= 1.0 {
        Ok(phi.ln())
    } else {
        Err(MetricError::Domain(phi))
    }
}

/// A coupled outcome of one `(ray, direction)` choice that increases distance.
#[derive(Clone, Debug)]
pub struct BadMove {
    pub ray: usize,
    pub up: bool,
    /// Probability of the increasing outcome, conditional on the choice.
    pub prob: Rat,
    pub delta: Quad,
}

pub enum DriftBound {
    /// Uniform bias with margin >= 0: `-phi chi^2 / (2 alpha)`.
    Uniform(Quad),
    /// Fluctuating bias satisfying the margin condition: `-phi chi / (2 alpha)`.
    Fluctuating(Quad),
    /// No contraction hypothesis applies.
    None,
}

pub struct DriftReport {
    pub phi: Quad,
    /// Exact expected one-step change of the metric under the shared-draw
    /// coupling, over all `2 alpha` choices and the shared uniform p.
    pub drift: Quad,
    pub bound: DriftBound,
    /// Whether `drift <= bound` (absent when no bound applies).
    pub pass: Option<bool>,
    pub bad_moves: Vec<BadMove>,
    /// Number of distinct `(ray, direction)` choices that can increase phi.
    pub bad_choice_count: usize,
}

/// Exact expected metric change for a pair differing in a single cube.
///
/// Every `(ray, direction)` choice is enumerated; downward moves integrate
/// over the shared `p` against the exact rational thresholds `1/lambda_v` of
/// the cubes the two copies would remove.
pub fn exact_pair_drift(
    region: &Region,
    bias: &BiasField,
    a: &Downset,
    b: &Downset,
) -> Result<DriftReport, MetricError> {
    let dist = hamming(a, b);
    if dist != 1 {
        return Err(MetricError::NotAdjacent(dist));
    }
    let metric = ExpMetric::for_bias(region, bias);
    let phi = metric.phi_exact(a, b);
    let alpha = region.span();
    let per_choice = Rat::one() / rat_usize(2 * alpha);

    let mut drift = Quad::from_rat(Rat::zero());
    let mut bad_moves = Vec::new();
    let mut bad_choices = 0usize;

    for ray in 0..alpha {
        // Upward move: deterministic given the choice.
        {
            let a2 = if region.can_add(a, ray).is_some() {
                region.add(a, ray)
            } else {
                a.clone()
            };
            let b2 = if region.can_add(b, ray).is_some() {
                region.add(b, ray)
            } else {
                b.clone()
            };
            let delta = metric.phi_exact(&a2, &b2).sub(&phi);
            if delta.sign() > 0 {
                bad_choices += 1;
                bad_moves.push(BadMove {
                    ray,
                    up: true,
                    prob: Rat::one(),
                    delta: delta.clone(),
                });
            }
            drift = drift.add(&delta.scale(&per_choice));
        }
        // Downward move: integrate over the shared p.
        {
            let qa = region.can_remove(a, ray).map(|_| {
                let h = a.counts()[ray] as usize - 1;
                Rat::one() / bias.lambda_at(ray, h)
            });
            let qb = region.can_remove(b, ray).map(|_| {
                let h = b.counts()[ray] as usize - 1;
                Rat::one() / bias.lambda_at(ray, h)
            });
            let mut saw_bad = false;
            let mut segment = |act_a: bool, act_b: bool, prob: Rat| {
                if prob.is_zero() || !(act_a || act_b) {
                    return Quad::from_rat(Rat::zero());
                }
                let a2 = if act_a {
                    region.remove(a, ray)
                } else {
                    a.clone()
                };
                let b2 = if act_b {
                    region.remove(b, ray)
                } else {
                    b.clone()
                };
                let delta = metric.phi_exact(&a2, &b2).sub(&phi);
                if delta.sign() > 0 {
                    saw_bad = true;
                    bad_moves.push(BadMove {
                        ray,
                        up: false,
                        prob: prob.clone(),
                        delta: delta.clone(),
                    });
                }
                delta.scale(&prob)
            };
            let contrib = match (&qa, &qb) {
                (Some(qa), Some(qb)) => {
                    let both = qa.min(qb).clone();
                    let only_a = (qa - qb).max(Rat::zero());
                    let only_b = (qb - qa).max(Rat::zero());
                    let mut c = segment(true, true, both);
                    c = c.add(&segment(true, false, only_a));
                    c.add(&segment(false, true, only_b))
                }
                (Some(qa), None) => segment(true, false, qa.clone()),
                (None, Some(qb)) => segment(false, true, qb.clone()),
                (None, None) => Quad::from_rat(Rat::zero()),
            };
            if saw_bad {
                bad_choices += 1;
            }
            drift = drift.add(&contrib.scale(&per_choice));
        }
    }

    let two_alpha = rat_usize(2 * alpha);
    let (bound, pass) = if let Some(lambda) = bias.uniform_value() {
        match chi_sq_uniform(region.dim(), lambda, 128) {
            ChiSq::Exact(chi_sq) => {
                let bound = phi.mul(&chi_sq).scale(&(-Rat::one() / &two_alpha));
                let pass = drift.le(&bound);
                (DriftBound::Uniform(bound), Some(pass))
            }
            ChiSq::Upper(chi_sq_hi) => {
                let bound = phi.scale(&(-chi_sq_hi / &two_alpha));
                let pass = drift.le(&bound);
                (DriftBound::Uniform(bound), Some(pass))
            }
            ChiSq::NotContracting => (DriftBound::None, None),
        }
    } else {
        let chi = chi_fluctuating(region.dim(), bias.lambda_l(), bias.lambda_u());
        if chi.sign() >= 0 {
            let bound = phi.mul(&chi).scale(&(-Rat::one() / &two_alpha));
            let pass = drift.le(&bound);
            (DriftBound::Fluctuating(bound), Some(pass))
        } else {
            (DriftBound::None, None)
        }
    };

    Ok(DriftReport {
        phi,
        drift,
        bound,
        pass,
        bad_moves,
        bad_choice_count: bad_choices,
    })
}

/// All adjacent pairs `(s, s + cube)` of an enumerated region.
pub fn adjacent_pairs(
    region: &Region,
    cap: usize,
) -> Result<Vec<(Downset, Downset)>, EnumerationTooLarge> {
    let states = region.enumerate_downsets(cap)?;
    let mut pairs = Vec::new();
    for s in &states {
        for ray in 0..region.span() {
            if region.can_add(s, ray).is_some() {
                pairs.push((s.clone(), region.add(s, ray)));
            }
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug)]
pub struct VarianceReport {
    pub pairs_checked: usize,
    /// Smallest observed `P[|phi' - phi| >= eta phi]` over checked pairs.
    pub min_probability: Rat,
    pub violations: usize,
    pub ok: bool,
}

/// Exact check of the jump-probability hypothesis: for states `x != y`,
/// `P[|phi' - phi| >= eta * phi] >= kappa` under one coupled step.
///
/// All pairs are checked when their number is at most `pair_cap`; above that
/// a deterministic stride sample is used.
pub fn variance_condition_check(
    region: &Region,
    bias: &BiasField,
    eta: &Rat,
    kappa: &Rat,
    state_cap: usize,
    pair_cap: usize,
) -> Result<VarianceReport, EnumerationTooLarge> {
    let states = region.enumerate_downsets(state_cap)?;
    let metric = ExpMetric::for_bias(region, bias);
    let n = states.len();
    let total_pairs = n * (n - 1) / 2;
    let stride = (total_pairs / pair_cap.max(1)).max(1);

    let mut pairs_checked = 0usize;
    let mut violations = 0usize;
    let mut min_probability: Option<Rat> = None;
    let mut pair_index = 0usize;

    for i in 0..n {
        for j in (i + 1)..n {
            pair_index += 1;
            if !(pair_index - 1).is_multiple_of(stride) {
                continue;
            }
            pairs_checked += 1;
            let (a, b) = (&states[i], &states[j]);
            let phi = metric.phi_exact(a, b);
            let threshold = phi.scale(eta);
            let mut hit = Rat::zero();
            let per_choice = Rat::one() / rat_usize(2 * region.span());
            for ray in 0..region.span() {
                // Up move.
                {
                    let a2 = if region.can_add(a, ray).is_some() {
                        region.add(a, ray)
                    } else {
                        a.clone()
                    };
                    let b2 = if region.can_add(b, ray).is_some() {
                        region.add(b, ray)
                    } else {
                        b.clone()
                    };
                    let delta = metric.phi_exact(&a2, &b2).sub(&phi);
                    if !threshold.sub(&delta.abs()).le(&Quad::from_rat(Rat::zero())) {
                        // |delta| < threshold: no contribution.
                    } else {
                        hit += &per_choice;
                    }
                }
                // Down move over p segments.
                let qa = region.can_remove(a, ray).map(|_| {
                    let h = a.counts()[ray] as usize - 1;
                    Rat::one() / bias.lambda_at(ray, h)
                });
                let qb = region.can_remove(b, ray).map(|_| {
                    let h = b.counts()[ray] as usize - 1;
                    Rat::one() / bias.lambda_at(ray, h)
                });
                let segment = |act_a: bool, act_b: bool, prob: Rat| {
                    if prob.is_zero() || !(act_a || act_b) {
                        return Rat::zero();
                    }
                    let a2 = if act_a {
                        region.remove(a, ray)
                    } else {
                        a.clone()
                    };
                    let b2 = if act_b {
                        region.remove(b, ray)
                    } else {
                        b.clone()
                    };
                    let delta = metric.phi_exact(&a2, &b2).sub(&phi);
                    if threshold.sub(&delta.abs()).le(&Quad::from_rat(Rat::zero())) {
                        prob
                    } else {
                        Rat::zero()
                    }
                };
                let seg_hit = match (&qa, &qb) {
                    (Some(qa), Some(qb)) => {
                        let both = qa.min(qb).clone();
                        let only_a = (qa - qb).max(Rat::zero());
                        let only_b = (qb - qa).max(Rat::zero());
                        segment(true, true, both)
                            + segment(true, false, only_a)
                            + segment(false, true, only_b)
                    }
                    (Some(qa), None) => segment(true, false, qa.clone()),
                    (None, Some(qb)) => segment(false, true, qb.clone()),
                    (None, None) => Rat::zero(),
                };
                hit += seg_hit * &per_choice;
            }
            if &hit < kappa {
                violations += 1;
            }
            min_probability = Some(match min_probability.take() {
                Some(cur) => cur.min(hit),
                None => hit,
            });
        }
    }
    Ok(VarianceReport {
        pairs_checked,
        min_probability: min_probability.unwrap_or_else(Rat::zero),
        violations,
        ok: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{rat, rat_int};

    fn region_2x2() -> Region {
        Region::rectangle(&[2, 2]).unwrap()
    }

    fn state(region: &Region, cubes: &[&[i64]]) -> Downset {
        let mut counts = vec![0u32; region.span()];
        for c in cubes {
            let (r, h) = region.locate(&c.to_vec()).unwrap();
            counts[r as usize] = counts[r as usize].max(h + 1);
        }
        region.downset_from_counts(counts).expect("valid downset")
    }

    #[test]
    fn hamming_examples() {
        let r = region_2x2();
        assert_eq!(hamming(&r.empty(), &r.empty()), 0);
        assert_eq!(hamming(&r.empty(), &r.full()), 4);
        let a = state(&r, &[&[1, 1]]);
        let b = state(&r, &[&[1, 1], &[2, 1]]);
        assert_eq!(hamming(&a, &b), 1);
    }

    #[test]
    fn exp_metric_examples() {
        let r = region_2x2();
        let m = ExpMetric::new(&r, rat_int(4));
        assert!(m.phi_exact(&r.empty(), &r.empty()).is_zero());
        let single = state(&r, &[&[1, 1]]);
        let phi = m.phi_exact(&r.empty(), &single);
        assert_eq!(phi.a, rat_int(4));
        let full = m.phi_exact(&r.empty(), &r.full());
        assert_eq!(full.a, rat_int(9)); // 4 + 2 + 2 + 1
        assert!((m.phi_f64(&r.empty(), &r.full()) - 9.0).abs() < 1e-12);
        assert!((m.phi_ln(&r.empty(), &r.full()) - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn float_paths_track_exact_values() {
        // The f64 and log-domain evaluations agree with the exact metric to
        // relative 1e-9, the tolerance simulation-mode comparisons use.
        let r = Region::rectangle(&[4, 4]).unwrap();
        for lam in [rat_int(2), rat(7, 3), rat_int(9)] {
            let m = ExpMetric::new(&r, lam);
            let states = r.enumerate_downsets(100).unwrap();
            for (i, a) in states.iter().enumerate().step_by(7) {
                for b in states.iter().skip(i + 1).step_by(5) {
                    let exact = m.phi_exact(a, b).to_f64();
                    let plain = m.phi_f64(a, b);
                    let logd = m.phi_ln(a, b).exp();
                    assert!((plain - exact).abs() <= 1e-9 * exact.max(1.0));
                    assert!((logd - exact).abs() <= 1e-9 * exact.max(1.0));
                }
            }
        }
    }

    #[test]
    fn metric_at_lambda_one_is_hamming() {
        let r = Region::rectangle(&[3, 2]).unwrap();
        let m = ExpMetric::new(&r, rat_int(1));
        let states = r.enumerate_downsets(100).unwrap();
        for a in &states {
            for b in &states {
                assert_eq!(m.phi_exact(a, b).a, rat_int(hamming(a, b) as i64));
            }
        }
    }

    #[test]
    fn metric_gap_and_exact_bound() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let m = ExpMetric::new(&r, rat_int(4));
        let bound = m.value_bound_exact(&r);
        for a in r.enumerate_downsets(100).unwrap() {
            for b in r.enumerate_downsets(100).unwrap() {
                let phi = m.phi_exact(&a, &b);
                if a == b {
                    assert!(phi.is_zero());
                } else {
                    assert!(Quad::from_rat(Rat::one()).le(&phi));
                    assert!(phi.le(&bound));
                }
            }
        }
    }

    #[test]
    fn stretch_bound_is_not_always_an_upper_bound() {
        // On a 6x6 square with lambda = 4 the full-vs-empty distance exceeds
        // volume * mu^stretch; the exact bound uses the true exponent range.
        let r = Region::rectangle(&[6, 6]).unwrap();
        let m = ExpMetric::new(&r, rat_int(4));
        let phi = m.phi_f64(&r.empty(), &r.full());
        assert!(phi > m.stretch_bound_f64(&r));
        let exact = m.value_bound_exact(&r);
        assert!(m.phi_exact(&r.empty(), &r.full()).le(&exact));
    }

    #[test]
    fn metric_triangle_and_symmetry() {
        let r = Region::rectangle(&[3, 2]).unwrap();
        let m = ExpMetric::new(&r, rat_int(2));
        let states = r.enumerate_downsets(100).unwrap();
        for a in &states {
            for b in &states {
                let ab = m.phi_exact(a, b);
                assert_eq!(ab.cmp_quad(&m.phi_exact(b, a)), std::cmp::Ordering::Equal);
                for c in &states {
                    let detour = m.phi_exact(a, c).add(&m.phi_exact(c, b));
                    assert!(ab.le(&detour));
                }
            }
        }
    }

    #[test]
    fn metric_path_decomposition() {
        // Adding the difference cubes one at a time sums to the distance.
        let r = Region::rectangle(&[3, 3]).unwrap();
        let m = ExpMetric::new(&r, rat_int(4));
        let a = state(&r, &[&[1, 1]]);
        let b = state(&r, &[&[1, 1], &[2, 1], &[1, 2], &[2, 2]]);
        let mut total = Quad::from_rat(Rat::zero());
        let mut cur = a.clone();
        while cur != b {
            let ray = (0..r.span())
                .find(|&ray| cur.counts()[ray] < b.counts()[ray] && r.can_add(&cur, ray).is_some())
                .unwrap();
            let next = r.add(&cur, ray);
            total = total.add(&m.phi_exact(&cur, &next));
            cur = next;
        }
        assert_eq!(
            total.cmp_quad(&m.phi_exact(&a, &b)),
            std::cmp::Ordering::Equal
        );
    }

    #[test]
    fn chi_values() {
        assert!((chi_uniform(2, 4.0) - 0.5).abs() < 1e-12);
        assert!(chi_uniform(2, 1.0).abs() < 1e-12);
        assert!(chi_2d(1.0).abs() < 1e-12);
        assert!((chi_2d(4.0) - 1.0).abs() < 1e-12);
        // In d = 3 the margin is positive only for lambda past the root.
        assert!(chi_uniform(3, 9.0) > 0.0);
        assert!(chi_uniform(3, 2.0) < 0.0);
        match chi_sq_uniform(3, &rat_int(9), 128) {
            ChiSq::Upper(hi) => {
                let f = rat_to_f64(&hi);
                let chi = chi_uniform(3, 9.0);
                assert!((f - chi * chi).abs() < 1e-12);
            }
            _ => panic!("expected certified upper bound"),
        }
        assert!(matches!(
            chi_sq_uniform(3, &rat_int(2), 128),
            ChiSq::NotContracting
        ));
    }

    #[test]
    fn psi_examples() {
        assert!((psi(0.0).unwrap() + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(psi(1.0).unwrap(), 0.0);
        assert!(psi(0.5).is_err());
    }

    #[test]
    fn drift_requires_adjacency() {
        let r = region_2x2();
        let b = BiasField::uniform(&r, rat_int(2)).unwrap();
        assert!(matches!(
            exact_pair_drift(&r, &b, &r.empty(), &r.full()),
            Err(MetricError::NotAdjacent(4))
        ));
    }

    #[test]
    fn drift_zero_at_lambda_one_on_symmetric_pair() {
        // Pair with two distance-decreasing and two distance-increasing moves:
        // at lambda = 1 the expected Hamming change is exactly zero.
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(1)).unwrap();
        let lower = state(&r, &[&[1, 1], &[2, 1], &[3, 1], &[1, 2], &[1, 3]]);
        let upper = state(&r, &[&[1, 1], &[2, 1], &[3, 1], &[1, 2], &[1, 3], &[2, 2]]);
        let report = exact_pair_drift(&r, &b, &lower, &upper).unwrap();
        assert_eq!(report.drift.sign(), 0);
        assert_eq!(report.bad_choice_count, 2);
    }

    #[test]
    fn drift_bound_holds_on_3x3_lambda_4() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(4)).unwrap();
        let mut worst_seen = false;
        for (lo, hi) in adjacent_pairs(&r, 1000).unwrap() {
            let report = exact_pair_drift(&r, &b, &lo, &hi).unwrap();
            assert_eq!(
                report.pass,
                Some(true),
                "pair {:?} -> {:?}",
                lo.counts(),
                hi.counts()
            );
            assert!(report.bad_choice_count <= r.dim());
            // chi = 1/2: the asserted bound is -phi/8 per ray-pair mass 2 alpha.
            let explicit = report.phi.scale(&(-rat(1, 8) / rat_usize(r.span())));
            assert!(report.drift.le(&explicit));
            if report.drift.cmp_quad(&explicit) == std::cmp::Ordering::Equal {
                worst_seen = true;
            }
        }
        // Some pair attains the bound exactly (two bad adds, clean good moves).
        assert!(worst_seen);
    }

    #[test]
    fn drift_bound_holds_at_irrational_mu() {
        // lambda = 2 keeps mu = sqrt(2) irrational, so the whole sweep runs
        // through genuine quadratic-field sign evaluations; the margin is
        // chi = 1 - 1/sqrt(2).
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(2)).unwrap();
        let mut saw_irrational = false;
        for (lo, hi) in adjacent_pairs(&r, 1000).unwrap() {
            let report = exact_pair_drift(&r, &b, &lo, &hi).unwrap();
            saw_irrational |= !report.drift.b.is_zero();
            assert_eq!(report.pass, Some(true), "pair {:?}", lo.counts());
        }
        assert!(saw_irrational);
    }

    #[test]
    fn drift_bound_holds_on_mixed_box_d3() {
        // Non-cubic 3D box; lambda = 16 sits past the dimension-3 root, so
        // the certified interval margin applies on every adjacent pair.
        let r = Region::rectangle(&[2, 3, 4]).unwrap();
        let b = BiasField::uniform(&r, rat_int(16)).unwrap();
        assert!(chi_uniform(3, 16.0) > 0.0);
        for (lo, hi) in adjacent_pairs(&r, 10_000).unwrap() {
            let report = exact_pair_drift(&r, &b, &lo, &hi).unwrap();
            assert_eq!(report.pass, Some(true), "pair {:?}", lo.counts());
            assert!(report.bad_choice_count <= 3);
        }
    }

    #[test]
    fn drift_fluctuating_bound_applies() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        // lambda in [9, 16]: 2/3 - 1 - 1/16 < 0, margin positive.
        let b = BiasField::per_site(&r, |p| {
            if (p[0] + p[1]) % 2 == 0 {
                rat_int(9)
            } else {
                rat_int(16)
            }
        })
        .unwrap();
        let chi = chi_fluctuating(2, &rat_int(9), &rat_int(16));
        assert!(chi.sign() > 0);
        for (lo, hi) in adjacent_pairs(&r, 1000).unwrap() {
            let report = exact_pair_drift(&r, &b, &lo, &hi).unwrap();
            match report.bound {
                DriftBound::Fluctuating(_) => assert_eq!(report.pass, Some(true)),
                _ => panic!("expected fluctuating bound"),
            }
        }
    }

    #[test]
    fn drift_matches_monte_carlo() {
        use crate::coupling::{coupled_step, CoupledPair};
        use crate::rng::draw_at;
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(4)).unwrap();
        let m = ExpMetric::for_bias(&r, &b);
        let lower = state(&r, &[&[1, 1], &[2, 1], &[3, 1], &[1, 2], &[1, 3]]);
        let upper = state(&r, &[&[1, 1], &[2, 1], &[3, 1], &[1, 2], &[1, 3], &[2, 2]]);
        let exact = exact_pair_drift(&r, &b, &lower, &upper)
            .unwrap()
            .drift
            .to_f64();
        let phi0 = m.phi_f64(&lower, &upper);
        let trials = 400_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for t in 0..trials {
            let mut pair = CoupledPair {
                a: lower.clone(),
                b: upper.clone(),
            };
            let draw = draw_at(0xfeed, t, r.span());
            coupled_step(&r, &b, &mut pair, &draw);
            let d = m.phi_f64(&pair.a, &pair.b) - phi0;
            sum += d;
            sumsq += d * d;
        }
        let mean = sum / trials as f64;
        let var = (sumsq / trials as f64 - mean * mean).max(0.0);
        let se = (var / trials as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 4.0 * se + 1e-12,
            "mc {mean} exact {exact} se {se}"
        );
    }

    #[test]
    fn variance_condition_3x3_lambda_1() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = BiasField::uniform(&r, rat_int(1)).unwrap();
        let eta = Rat::one() / rat_usize(2 * r.span());
        let kappa = eta.clone();
        let report = variance_condition_check(&r, &b, &eta, &kappa, 1000, 100_000).unwrap();
        assert!(report.ok, "min probability {}", report.min_probability);
    }
}
