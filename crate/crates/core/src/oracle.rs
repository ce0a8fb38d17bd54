//! Ground truth on enumerable instances: stationary weights, exact transition
//! structure, total-variation mixing, cut conductance, and the q-binomial
//! partition function.

use crate::dynamics::{transition_probability, BiasField};
use crate::numeric::{rat_to_f64, rat_usize, Rat};
use crate::region::{Downset, EnumerationTooLarge, Region};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    TooLarge(#[from] EnumerationTooLarge),
    #[error("cut has zero stationary mass")]
    EmptyCut,
}

/// Fully enumerated chain: states in canonical order, exact stationary law,
/// and the sparse off-diagonal transition structure (self-loops implicit).
pub struct ExactModel<'a> {
    pub region: &'a Region,
    pub bias: &'a BiasField,
    pub states: Vec<Downset>,
    pub index: HashMap<Downset, usize>,
    /// Unnormalized weights: product of biases over included cubes.
    pub weights: Vec<Rat>,
    pub z: Rat,
    pub pi: Vec<Rat>,
    edges: Vec<Vec<(u32, Rat)>>,
}

impl<'a> ExactModel<'a> {
    pub fn build(region: &'a Region, bias: &'a BiasField, cap: usize) -> Result<Self, OracleError> {
        let states = region.enumerate_downsets(cap)?;
        let index: HashMap<Downset, usize> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();

        // Weights by peeling one removable cube: the parent is again a state.
        let mut order: Vec<usize> = (0..states.len()).collect();
        order.sort_by_key(|&i| states[i].volume());
        let mut weights: Vec<Rat> = vec![Rat::zero(); states.len()];
        for &i in &order {
            let s = &states[i];
            if s.volume() == 0 {
                weights[i] = Rat::one();
                continue;
            }
            let ray = (0..region.span())
                .find(|&r| region.can_remove(s, r).is_some())
                .expect("nonempty downset has a peak");
            let h = s.counts()[ray] as usize - 1;
            let parent = region.remove(s, ray);
            let pi = index[&parent];
            weights[i] = &weights[pi] * bias.lambda_at(ray, h);
        }

        let z: Rat = weights.iter().fold(Rat::zero(), |acc, w| acc + w);
        let pi: Vec<Rat> = weights.iter().map(|w| w / &z).collect();

        let per_choice = Rat::one() / rat_usize(2 * region.span());
        let edges: Vec<Vec<(u32, Rat)>> = states
            .iter()
            .map(|s| {
                let mut out = Vec::new();
                for ray in 0..region.span() {
                    if region.can_add(s, ray).is_some() {
                        let j = index[&region.add(s, ray)];
                        out.push((j as u32, per_choice.clone()));
                    }
                    if region.can_remove(s, ray).is_some() {
                        let h = s.counts()[ray] as usize - 1;
                        let j = index[&region.remove(s, ray)];
                        out.push((j as u32, &per_choice / bias.lambda_at(ray, h)));
                    }
                }
                out
            })
            .collect();

        Ok(ExactModel {
            region,
            bias,
            states,
            index,
            weights,
            z,
            pi,
            edges,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn out_edges(&self, i: usize) -> &[(u32, Rat)] {
        &self.edges[i]
    }

    pub fn self_loop(&self, i: usize) -> Rat {
        Rat::one()
            - self.edges[i]
                .iter()
                .fold(Rat::zero(), |acc, (_, p)| acc + p)
    }

    /// Full transition probability including the implicit self-loop.
    pub fn transition(&self, i: usize, j: usize) -> Rat {
        if i == j {
            return self.self_loop(i);
        }
        self.edges[i]
            .iter()
            .filter(|(t, _)| *t as usize == j)
            .fold(Rat::zero(), |acc, (_, p)| acc + p)
    }

    /// Exact stationarity and reversibility residuals; both must be zero.
    pub fn stationary_check(&self) -> StationaryReport {
        let n = self.len();
        let mut inflow: Vec<Rat> = (0..n).map(|i| &self.pi[i] * self.self_loop(i)).collect();
        for i in 0..n {
            for (j, p) in &self.edges[i] {
                inflow[*j as usize] += &self.pi[i] * p;
            }
        }
        let pi_residual = (0..n)
            .map(|j| (&inflow[j] - &self.pi[j]).abs())
            .fold(Rat::zero(), |a, b| a.max(b));

        let mut db_residual = Rat::zero();
        for i in 0..n {
            for (j, p) in &self.edges[i] {
                let back = self.transition(*j as usize, i);
                let r = (&self.pi[i] * p - &self.pi[*j as usize] * back).abs();
                db_residual = db_residual.max(r);
            }
        }
        StationaryReport {
            ok: pi_residual.is_zero() && db_residual.is_zero(),
            pi_residual,
            db_residual,
        }
    }

    fn push_exact(&self, d: &[Rat]) -> Vec<Rat> {
        let n = self.len();
        let mut out: Vec<Rat> = (0..n).map(|i| &d[i] * self.self_loop(i)).collect();
        for (i, mass) in d.iter().enumerate() {
            if mass.is_zero() {
                continue;
            }
            for (j, p) in &self.edges[i] {
                out[*j as usize] += mass * p;
            }
        }
        out
    }

    pub fn tv_exact(&self, d: &[Rat]) -> Rat {
        let two = Rat::from_integer(2.into());
        d.iter()
            .zip(self.pi.iter())
            .fold(Rat::zero(), |acc, (a, b)| acc + (a - b).abs())
            / two
    }

    /// Exact TV-to-stationarity curve from one start, for `0..=t_max`.
    /// The curve is checked to be non-increasing, which exact arithmetic
    /// makes a hard assertion rather than a tolerance.
    pub fn tv_curve_exact(&self, start: usize, t_max: u64) -> Vec<Rat> {
        let mut d: Vec<Rat> = vec![Rat::zero(); self.len()];
        d[start] = Rat::one();
        let mut curve = vec![self.tv_exact(&d)];
        for _ in 1..=t_max {
            d = self.push_exact(&d);
            let tv = self.tv_exact(&d);
            assert!(
                tv <= *curve.last().expect("nonempty"),
                "total variation increased along the curve"
            );
            curve.push(tv);
        }
        curve
    }

    /// Mixing time via exact rational iteration from every start.
    pub fn tv_mixing_time_exact(&self, eps: &Rat, budget: u64) -> MixingResult {
        if eps >= &Rat::one() {
            return MixingResult {
                tau: Some(0),
                tv_at_end: 0.0,
                steps_run: 0,
            };
        }
        let n = self.len();
        let mut dists: Vec<Vec<Rat>> = (0..n)
            .map(|i| {
                let mut d = vec![Rat::zero(); n];
                d[i] = Rat::one();
                d
            })
            .collect();
        let worst = |dists: &[Vec<Rat>]| -> Rat {
            dists
                .iter()
                .map(|d| self.tv_exact(d))
                .fold(Rat::zero(), |a, b| a.max(b))
        };
        let mut tv = worst(&dists);
        if &tv <= eps {
            return MixingResult {
                tau: Some(0),
                tv_at_end: rat_to_f64(&tv),
                steps_run: 0,
            };
        }
        for t in 1..=budget {
            dists = dists.into_par_iter().map(|d| self.push_exact(&d)).collect();
            let next = worst(&dists);
            assert!(next <= tv, "total variation increased at step {t}");
            tv = next;
            if &tv <= eps {
                return MixingResult {
                    tau: Some(t),
                    tv_at_end: rat_to_f64(&tv),
                    steps_run: t,
                };
            }
        }
        MixingResult {
            tau: None,
            tv_at_end: rat_to_f64(&tv),
            steps_run: budget,
        }
    }

    fn edges_f64(&self) -> Vec<Vec<(u32, f64)>> {
        self.edges
            .iter()
            .map(|row| row.iter().map(|(j, p)| (*j, rat_to_f64(p))).collect())
            .collect()
    }

    /// Floating-point mixing time from a chosen start set. Used where the
    /// rational iteration is infeasible; round-off stays far below the
    /// tolerances involved (the push is a convex combination).
    pub fn tv_mixing_time_f64(&self, eps: f64, starts: StartSet, budget: u64) -> MixingResult {
        if eps >= 1.0 {
            return MixingResult {
                tau: Some(0),
                tv_at_end: 0.0,
                steps_run: 0,
            };
        }
        let n = self.len();
        let edges = self.edges_f64();
        let self_loop: Vec<f64> = (0..n).map(|i| rat_to_f64(&self.self_loop(i))).collect();
        let pi: Vec<f64> = self.pi.iter().map(rat_to_f64).collect();
        let start_rows: Vec<usize> = match starts {
            StartSet::All => (0..n).collect(),
            StartSet::Extremes => {
                let empty = self.index[&self.region.empty()];
                let full = self.index[&self.region.full()];
                if empty == full {
                    vec![empty]
                } else {
                    vec![empty, full]
                }
            }
            StartSet::One(i) => vec![i],
        };
        let mut rows: Vec<Vec<f64>> = start_rows
            .iter()
            .map(|&i| {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d
            })
            .collect();
        let tv_of = |d: &[f64]| -> f64 {
            0.5 * d
                .iter()
                .zip(pi.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        };
        let mut tv = rows.iter().map(|d| tv_of(d)).fold(0.0, f64::max);
        if tv <= eps {
            return MixingResult {
                tau: Some(0),
                tv_at_end: tv,
                steps_run: 0,
            };
        }
        for t in 1..=budget {
            rows = rows
                .into_par_iter()
                .map(|d| {
                    let mut out: Vec<f64> = (0..n).map(|i| d[i] * self_loop[i]).collect();
                    for i in 0..n {
                        let mass = d[i];
                        if mass == 0.0 {
                            continue;
                        }
                        for (j, p) in &edges[i] {
                            out[*j as usize] += mass * p;
                        }
                    }
                    out
                })
                .collect();
            tv = rows.iter().map(|d| tv_of(d)).fold(0.0, f64::max);
            if tv <= eps {
                return MixingResult {
                    tau: Some(t),
                    tv_at_end: tv,
                    steps_run: t,
                };
            }
        }
        MixingResult {
            tau: None,
            tv_at_end: tv,
            steps_run: budget,
        }
    }

    /// Worst-over-starts TV curve for `0..=t_max`, floating-point engine.
    pub fn tv_worst_curve_f64(&self, starts: StartSet, t_max: u64) -> Vec<f64> {
        let n = self.len();
        let edges = self.edges_f64();
        let self_loop: Vec<f64> = (0..n).map(|i| rat_to_f64(&self.self_loop(i))).collect();
        let pi: Vec<f64> = self.pi.iter().map(rat_to_f64).collect();
        let start_rows: Vec<usize> = match starts {
            StartSet::All => (0..n).collect(),
            StartSet::Extremes => {
                let empty = self.index[&self.region.empty()];
                let full = self.index[&self.region.full()];
                if empty == full {
                    vec![empty]
                } else {
                    vec![empty, full]
                }
            }
            StartSet::One(i) => vec![i],
        };
        let mut rows: Vec<Vec<f64>> = start_rows
            .iter()
            .map(|&i| {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d
            })
            .collect();
        let tv_of = |d: &[f64]| -> f64 {
            0.5 * d
                .iter()
                .zip(pi.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        };
        let mut curve = vec![rows.iter().map(|d| tv_of(d)).fold(0.0, f64::max)];
        for _ in 1..=t_max {
            rows = rows
                .into_par_iter()
                .map(|d| {
                    let mut out: Vec<f64> = (0..n).map(|i| d[i] * self_loop[i]).collect();
                    for i in 0..n {
                        let mass = d[i];
                        if mass == 0.0 {
                            continue;
                        }
                        for (j, p) in &edges[i] {
                            out[*j as usize] += mass * p;
                        }
                    }
                    out
                })
                .collect();
            curve.push(rows.iter().map(|d| tv_of(d)).fold(0.0, f64::max));
        }
        curve
    }

    /// Exact conductance of the cut `in_s`, plus the mixing-time lower bound
    /// `(4 phi)^-1 - 1/2` when the cut is usable (`pi(S) <= 1/2`).
    pub fn conductance_of_cut(&self, in_s: &[bool]) -> Result<Conductance, OracleError> {
        assert_eq!(in_s.len(), self.len());
        let pi_s: Rat = (0..self.len())
            .filter(|&i| in_s[i])
            .fold(Rat::zero(), |acc, i| acc + &self.pi[i]);
        if pi_s.is_zero() {
            return Err(OracleError::EmptyCut);
        }
        let mut escape = Rat::zero();
        for i in 0..self.len() {
            if !in_s[i] {
                continue;
            }
            for (j, p) in &self.edges[i] {
                if !in_s[*j as usize] {
                    escape += &self.pi[i] * p;
                }
            }
        }
        let phi_s = &escape / &pi_s;
        let usable = pi_s <= Rat::new(1.into(), 2.into());
        let mixing_lower_bound = if usable && !phi_s.is_zero() {
            Some(Rat::one() / (Rat::from_integer(4.into()) * &phi_s) - Rat::new(1.into(), 2.into()))
        } else {
            None
        };
        Ok(Conductance {
            pi_s,
            phi_s,
            usable,
            mixing_lower_bound,
        })
    }

    /// Volume histogram: number of states per cube count.
    pub fn volume_histogram(&self) -> Vec<usize> {
        let n = self.region.volume();
        let mut h = vec![0usize; n + 1];
        for s in &self.states {
            h[s.volume() as usize] += 1;
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct StationaryReport {
    pub pi_residual: Rat,
    pub db_residual: Rat,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug)]
pub enum StartSet {
    All,
    Extremes,
    One(usize),
}

#[derive(Clone, Debug)]
pub struct MixingResult {
    pub tau: Option<u64>,
    pub tv_at_end: f64,
    pub steps_run: u64,
}

#[derive(Clone, Debug)]
pub struct Conductance {
    pub pi_s: Rat,
    pub phi_s: Rat,
    pub usable: bool,
    pub mixing_lower_bound: Option<Rat>,
}

/// Integer-coefficient polynomial in `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct QPoly {
    coeffs: Vec<BigInt>,
}

impl QPoly {
    pub fn one() -> Self {
        QPoly {
            coeffs: vec![BigInt::one()],
        }
    }

    pub fn coeffs(&self) -> &[BigInt] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn add_shifted(&self, other: &QPoly, shift: usize) -> QPoly {
        let len = self.coeffs.len().max(other.coeffs.len() + shift);
        let mut out = vec![BigInt::zero(); len];
        for (i, c) in self.coeffs.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in other.coeffs.iter().enumerate() {
            out[i + shift] += c;
        }
        QPoly { coeffs: out }
    }

    pub fn eval(&self, q: &Rat) -> Rat {
        let mut acc = Rat::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * q + Rat::from_integer(c.clone());
        }
        acc
    }

    pub fn eval_usize(&self, q: usize) -> BigInt {
        let q = BigInt::from(q);
        let mut acc = BigInt::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * &q + c;
        }
        acc
    }
}

/// Gaussian binomial coefficient as an exact polynomial, via the q-Pascal
/// recurrence. Evaluation at `q = 1` gives the ordinary binomial, so the
/// degenerate factors of the product form never appear.
pub fn gaussian_binomial(m: usize, r: usize) -> QPoly {
    assert!(r <= m);
    let r = r.min(m - r);
    // row[k] holds [mm choose k]_q while mm sweeps upward.
    let mut row: Vec<QPoly> = vec![QPoly::one()];
    for mm in 1..=m {
        let upto = r.min(mm);
        let mut next: Vec<QPoly> = Vec::with_capacity(upto + 1);
        next.push(QPoly::one());
        for k in 1..=upto {
            if k == mm {
                next.push(QPoly::one());
            } else {
                // [mm k] = [mm-1 k] + q^(mm-k) [mm-1 k-1]
                next.push(row[k].add_shifted(&row[k - 1], mm - k));
            }
        }
        row = next;
    }
    row[r].clone()
}

/// Long-run visit-frequency comparison against the exact stationary law.
///
/// `sample_stride` spaces the recorded states far past the mixing time so
/// the multinomial error model is honest.
pub fn empirical_frequency_check(
    model: &ExactModel,
    seed: u64,
    steps: u64,
    sample_stride: u64,
    z_score: f64,
) -> FrequencyReport {
    use crate::rng::DrawStream;
    let region = model.region;
    let mut s = region.empty();
    let mut stream = DrawStream::new(seed);
    let alpha = region.span();
    let mut counts = vec![0u64; model.len()];
    let mut samples = 0u64;
    for t in 1..=steps {
        let draw = stream.next_draw(alpha);
        crate::dynamics::step_in_place(region, model.bias, &mut s, &draw);
        if t % sample_stride == 0 {
            counts[model.index[&s]] += 1;
            samples += 1;
        }
    }
    let mut worst_z = 0.0f64;
    let mut ok = true;
    for (i, &c) in counts.iter().enumerate() {
        let p = rat_to_f64(&model.pi[i]);
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        let z = ((c as f64 / samples as f64) - p).abs() / se;
        worst_z = worst_z.max(z);
        if z > z_score {
            ok = false;
        }
    }
    FrequencyReport {
        samples,
        worst_z,
        ok,
    }
}

#[derive(Clone, Debug)]
pub struct FrequencyReport {
    pub samples: u64,
    pub worst_z: f64,
    pub ok: bool,
}

/// Consistency between the sparse model edges and the standalone
/// [`transition_probability`]: used in tests as a dual route.
pub fn check_edges_against_pointwise(model: &ExactModel) -> bool {
    for i in 0..model.len() {
        for (j, p) in model.out_edges(i) {
            let q = transition_probability(
                model.region,
                model.bias,
                &model.states[i],
                &model.states[*j as usize],
            );
            if &q != p {
                return false;
            }
        }
        let stay =
            transition_probability(model.region, model.bias, &model.states[i], &model.states[i]);
        if stay != model.self_loop(i) {
            return false;
        }
    }
    true
}

pub fn binomial(m: usize, r: usize) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..r {
        acc = acc * BigInt::from(m - i) / BigInt::from(i + 1);
    }
    acc
}

/// Convenience: state count of an h x w rectangle is binom(h‌+w, h).
pub fn expected_rectangle_states(h: usize, w: usize) -> usize {
    binomial(h + w, h).to_usize().expect("fits usize")
}
