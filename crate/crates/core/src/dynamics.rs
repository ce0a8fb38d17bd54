//! The biased single-cube Markov chain on downsets.
//!
//! One step: draw a ray uniformly, a direction bit, and a uniform `p`. Going
//! up adds the next cube on the ray when the closure allows it; going down
//! removes the ray's top cube when nothing rests on it, accepted only if
//! `p <= 1/lambda_v` for the removed cube `v`. Everything else holds still.
//! The stationary law is proportional to the product of the biases of the
//! included cubes.

use crate::numeric::{rat_to_f64, Rat};
use crate::region::{Downset, Point, Region};
use crate::rng::DrawStream;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("bias at {at:?} is {value} < 1")]
    BelowOne { at: Point, value: String },
    #[error("bias field does not cover {at:?}")]
    Missing { at: Point },
}

/// Per-cube bias `lambda_x >= 1`, compiled against a region.
///
/// Exact values are rationals (any `f64` converts exactly); the simulation
/// path reads precomputed `1/lambda` thresholds as `f64`.
#[derive(Clone, Debug)]
pub struct BiasField {
    lambda: Vec<Vec<Rat>>,
    inv_f64: Vec<Vec<f64>>,
    lambda_min: Rat,
    lambda_max: Rat,
    uniform: Option<Rat>,
}

impl BiasField {
    pub fn uniform(region: &Region, lambda: Rat) -> Result<Self, BiasError> {
        let mut field = Self::per_site(region, |_| lambda.clone())?;
        field.uniform = Some(lambda);
        Ok(field)
    }

    pub fn per_site(region: &Region, f: impl Fn(&Point) -> Rat) -> Result<Self, BiasError> {
        let mut lambda = Vec::with_capacity(region.span());
        let mut inv_f64 = Vec::with_capacity(region.span());
        let mut lo: Option<Rat> = None;
        let mut hi: Option<Rat> = None;
        for ray in 0..region.span() {
            let mut lam_ray = Vec::with_capacity(region.ray_len(ray));
            let mut inv_ray = Vec::with_capacity(region.ray_len(ray));
            for h in 0..region.ray_len(ray) {
                let cube = region.cube(ray, h);
                let v = f(cube);
                if v < Rat::one() {
                    return Err(BiasError::BelowOne {
                        at: cube.clone(),
                        value: crate::numeric::rat_to_string(&v),
                    });
                }
                inv_ray.push(rat_to_f64(&(Rat::one() / &v)));
                lo = Some(match lo {
                    Some(cur) => cur.min(v.clone()),
                    None => v.clone(),
                });
                hi = Some(match hi {
                    Some(cur) => cur.max(v.clone()),
                    None => v.clone(),
                });
                lam_ray.push(v);
            }
            lambda.push(lam_ray);
            inv_f64.push(inv_ray);
        }
        Ok(BiasField {
            lambda,
            inv_f64,
            lambda_min: lo.expect("nonempty region"),
            lambda_max: hi.expect("nonempty region"),
            uniform: None,
        })
    }

    pub fn lambda_at(&self, ray: usize, height: usize) -> &Rat {
        &self.lambda[ray][height]
    }

    pub fn inv_at(&self, ray: usize, height: usize) -> f64 {
        self.inv_f64[ray][height]
    }

    /// Minimum bias over the region.
    pub fn lambda_l(&self) -> &Rat {
        &self.lambda_min
    }

    /// Maximum bias over the region.
    pub fn lambda_u(&self) -> &Rat {
        &self.lambda_max
    }

    pub fn uniform_value(&self) -> Option<&Rat> {
        self.uniform.as_ref().or({
            if self.lambda_min == self.lambda_max {
                Some(&self.lambda_min)
            } else {
                None
            }
        })
    }
}

/// Shared randomness for one step: ray index, direction bit, uniform p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveDraw {
    pub ray: u32,
    pub up: bool,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Added,
    Removed,
    Held,
}

/// One chain step, in place. Deterministic in `(state, draw, bias)`.
pub fn step_in_place(
    region: &Region,
    bias: &BiasField,
    s: &mut Downset,
    draw: &MoveDraw,
) -> StepOutcome {
    let ray = draw.ray as usize;
    if draw.up {
        if region.can_add(s, ray).is_some() {
            region.add_in_place(s, ray);
            return StepOutcome::Added;
        }
    } else if region.can_remove(s, ray).is_some() {
        let h = s.counts()[ray] as usize - 1;
        if draw.p <= bias.inv_at(ray, h) {
            region.remove_in_place(s, ray);
            return StepOutcome::Removed;
        }
    }
    StepOutcome::Held
}

pub fn step(region: &Region, bias: &BiasField, s: &Downset, draw: &MoveDraw) -> Downset {
    let mut t = s.clone();
    step_in_place(region, bias, &mut t, draw);
    t
}

/// Exact one-step transition probability between two downsets.
///
/// Adds carry `1/(2 span)`, removals `1/(2 span lambda_v)`, the self-loop is
/// the leftover mass, and everything differing in more than one cube is 0.
pub fn transition_probability(
    region: &Region,
    bias: &BiasField,
    from: &Downset,
    to: &Downset,
) -> Rat {
    let two_alpha = Rat::from_integer((2 * region.span()).into());
    let per_choice = Rat::one() / &two_alpha;
    let mut diff_ray = None;
    let mut diff_total = 0i64;
    for (ray, (&a, &b)) in from.counts().iter().zip(to.counts().iter()).enumerate() {
        if a != b {
            diff_total += (a as i64 - b as i64).abs();
            diff_ray = Some(ray);
        }
    }
    match (diff_total, diff_ray) {
        (0, _) => {
            // Self-loop: 1 minus all outgoing move mass.
            let mut out = Rat::from_integer(0.into());
            for ray in 0..region.span() {
                if region.can_add(from, ray).is_some() {
                    out += &per_choice;
                }
                if region.can_remove(from, ray).is_some() {
                    let h = from.counts()[ray] as usize - 1;
                    out += &per_choice / bias.lambda_at(ray, h);
                }
            }
            Rat::one() - out
        }
        (1, Some(ray)) => {
            if to.counts()[ray] == from.counts()[ray] + 1 {
                if region.can_add(from, ray).is_some() {
                    per_choice
                } else {
                    Rat::from_integer(0.into())
                }
            } else if region.can_remove(from, ray).is_some() {
                let h = from.counts()[ray] as usize - 1;
                per_choice / bias.lambda_at(ray, h)
            } else {
                Rat::from_integer(0.into())
            }
        }
        _ => Rat::from_integer(0.into()),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum StartSpec {
    Empty,
    Full,
    Counts(Vec<u32>),
}

impl StartSpec {
    pub fn build(&self, region: &Region) -> Option<Downset> {
        match self {
            StartSpec::Empty => Some(region.empty()),
            StartSpec::Full => Some(region.full()),
            StartSpec::Counts(c) => region.downset_from_counts(c.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub start: StartSpec,
    pub seed: u64,
    pub steps: u64,
    /// Observer sampling stride; 0 disables sampling except at start/end.
    pub stride: u64,
}

/// Extra per-sample metric recorded alongside the built-in columns.
pub trait Observer: Send {
    fn name(&self) -> String;
    fn sample(&mut self, t: u64, region: &Region, s: &Downset) -> f64;
}

pub struct FnObserver<F: FnMut(u64, &Region, &Downset) -> f64 + Send> {
    pub label: String,
    pub f: F,
}

impl<F: FnMut(u64, &Region, &Downset) -> f64 + Send> Observer for FnObserver<F> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn sample(&mut self, t: u64, region: &Region, s: &Downset) -> f64 {
        (self.f)(t, region, s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObsRow {
    pub t: u64,
    pub volume: u64,
    pub peaks: usize,
    pub valleys: usize,
    pub extras: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: u64,
    pub final_state: Downset,
    pub columns: Vec<String>,
    pub rows: Vec<ObsRow>,
}

/// Run the chain for a step budget with deterministic draws from the seed.
pub fn run(
    region: &Region,
    bias: &BiasField,
    cfg: &ChainConfig,
    observers: &mut [Box<dyn Observer>],
) -> RunSummary {
    let mut s = cfg
        .start
        .build(region)
        .expect("start state is valid for region");
    let mut stream = DrawStream::new(cfg.seed);
    let alpha = region.span();
    let mut rows = Vec::new();
    let mut record = |t: u64, s: &Downset, observers: &mut [Box<dyn Observer>]| {
        rows.push(ObsRow {
            t,
            volume: s.volume(),
            peaks: region.peaks(s).len(),
            valleys: region.valleys(s).len(),
            extras: observers
                .iter_mut()
                .map(|o| o.sample(t, region, s))
                .collect(),
        });
    };
    record(0, &s, observers);
    for t in 1..=cfg.steps {
        let draw = stream.next_draw(alpha);
        step_in_place(region, bias, &mut s, &draw);
        if cfg.stride > 0 && t % cfg.stride == 0 && t != cfg.steps {
            record(t, &s, observers);
        }
    }
    if cfg.steps > 0 {
        record(cfg.steps, &s, observers);
    }
    RunSummary {
        seed: cfg.seed,
        steps: cfg.steps,
        final_state: s,
        columns: observers.iter().map(|o| o.name()).collect(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{rat, rat_int};

    fn uniform(region: &Region, num: i64, den: i64) -> BiasField {
        BiasField::uniform(region, rat(num, den)).unwrap()
    }

    #[test]
    fn bias_below_one_rejected() {
        let r = Region::rectangle(&[2, 2]).unwrap();
        assert!(BiasField::uniform(&r, rat(1, 2)).is_err());
        assert!(BiasField::uniform(&r, rat_int(1)).is_ok());
    }

    #[test]
    fn step_examples_single_cell() {
        let r = Region::rectangle(&[1]).unwrap();
        let b = uniform(&r, 2, 1);
        let empty = r.empty();
        let full = r.full();

        let up = MoveDraw {
            ray: 0,
            up: true,
            p: 0.9,
        };
        assert_eq!(step(&r, &b, &empty, &up), full);

        let down_ok = MoveDraw {
            ray: 0,
            up: false,
            p: 0.4,
        };
        assert_eq!(step(&r, &b, &full, &down_ok), empty);

        let down_rejected = MoveDraw {
            ray: 0,
            up: false,
            p: 0.6,
        };
        assert_eq!(step(&r, &b, &full, &down_rejected), full);
    }

    #[test]
    fn transition_probability_examples() {
        let r = Region::rectangle(&[1]).unwrap();
        let b = uniform(&r, 3, 1);
        let empty = r.empty();
        let full = r.full();
        assert_eq!(transition_probability(&r, &b, &full, &empty), rat(1, 6));
        assert_eq!(transition_probability(&r, &b, &empty, &full), rat(1, 2));
        // The ratio of the two is the bias.
        let up = transition_probability(&r, &b, &empty, &full);
        let down = transition_probability(&r, &b, &full, &empty);
        assert_eq!(up / down, rat_int(3));
    }

    #[test]
    fn transition_zero_for_distant_states() {
        let r = Region::rectangle(&[2, 2]).unwrap();
        let b = uniform(&r, 2, 1);
        assert_eq!(
            transition_probability(&r, &b, &r.empty(), &r.full()),
            rat_int(0)
        );
    }

    #[test]
    fn laziness_on_enumerated_states() {
        // P(sigma, sigma) >= 1/2 for every state, dimension >= 2.
        for (dims, lam) in [(vec![3u32, 3], rat_int(1)), (vec![2, 2, 2], rat(7, 2))] {
            let r = Region::rectangle(&dims).unwrap();
            let b = BiasField::uniform(&r, lam).unwrap();
            for s in r.enumerate_downsets(10_000).unwrap() {
                let stay = transition_probability(&r, &b, &s, &s);
                assert!(stay >= rat(1, 2), "laziness fails at {:?}", s.counts());
            }
        }
    }

    #[test]
    fn run_zero_budget_is_identity() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = uniform(&r, 4, 1);
        let cfg = ChainConfig {
            start: StartSpec::Empty,
            seed: 9,
            steps: 0,
            stride: 1,
        };
        let out = run(&r, &b, &cfg, &mut []);
        assert_eq!(out.final_state, r.empty());
        assert_eq!(out.rows.len(), 1);
    }

    #[test]
    fn run_is_deterministic() {
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = uniform(&r, 2, 1);
        let cfg = ChainConfig {
            start: StartSpec::Empty,
            seed: 1234,
            steps: 500,
            stride: 50,
        };
        let a = run(&r, &b, &cfg, &mut []);
        let c = run(&r, &b, &cfg, &mut []);
        assert_eq!(a.final_state, c.final_state);
        let va: Vec<u64> = a.rows.iter().map(|x| x.volume).collect();
        let vc: Vec<u64> = c.rows.iter().map(|x| x.volume).collect();
        assert_eq!(va, vc);
    }

    #[test]
    fn observers_record_extra_columns() {
        use crate::metrics::ExpMetric;
        let r = Region::rectangle(&[3, 3]).unwrap();
        let b = uniform(&r, 4, 1);
        let metric = ExpMetric::for_bias(&r, &b);
        let full = r.full();
        let mut observers: Vec<Box<dyn Observer>> = vec![Box::new(FnObserver {
            label: "phi_to_full".into(),
            f: move |_t, _region: &Region, s: &Downset| metric.phi_f64(s, &full),
        })];
        let cfg = ChainConfig {
            start: StartSpec::Empty,
            seed: 3,
            steps: 400,
            stride: 100,
        };
        let out = run(&r, &b, &cfg, &mut observers);
        assert_eq!(out.columns, vec!["phi_to_full".to_string()]);
        assert!(out.rows.iter().all(|row| row.extras.len() == 1));
        // Distance to the full state starts at its maximum and is finite.
        assert!(out.rows[0].extras[0] > out.rows.last().unwrap().extras[0]);
    }

    #[test]
    fn long_runs_end_full_at_stationary_rate() {
        // 4x4 at lambda = 10: after 10^5 steps the chain is at stationarity,
        // where the full state carries pi(F) = 10^16/Z ~ 0.89 of the mass.
        // The empirical final=F frequency over 100 seeds must match that
        // within binomial error (not the certainty a naive reading of
        // "strong bias" would suggest: near-full states keep ~11%).
        use crate::oracle::ExactModel;
        let r = Region::rectangle(&[4, 4]).unwrap();
        let b = uniform(&r, 10, 1);
        let model = ExactModel::build(&r, &b, 1000).unwrap();
        let pi_full = crate::numeric::rat_to_f64(&model.pi[model.index[&r.full()]]);
        assert!(pi_full > 0.85 && pi_full < 0.93);
        let seeds = 100u64;
        let mut hits = 0u32;
        for k in 0..seeds {
            let cfg = ChainConfig {
                start: StartSpec::Empty,
                seed: crate::rng::replica_seed(2024, k),
                steps: 100_000,
                stride: 0,
            };
            if r.is_full(&run(&r, &b, &cfg, &mut []).final_state) {
                hits += 1;
            }
        }
        let freq = hits as f64 / seeds as f64;
        let sigma = (pi_full * (1.0 - pi_full) / seeds as f64).sqrt();
        assert!(
            (freq - pi_full).abs() <= 3.0 * sigma,
            "freq {freq} vs pi(F) {pi_full}"
        );
    }

    #[test]
    fn connectivity_peel_to_empty() {
        // Constructive connectivity: repeatedly removing a maximal-norm peak
        // reaches the empty downset from anywhere.
        let r = Region::rectangle(&[3, 2]).unwrap();
        for s in r.enumerate_downsets(1000).unwrap() {
            let mut cur = s.clone();
            let mut guard = 0;
            while cur.volume() > 0 {
                let peak_ray = (0..r.span())
                    .filter(|&ray| r.can_remove(&cur, ray).is_some())
                    .max_by_key(|&ray| {
                        crate::region::l1(r.cube(ray, cur.counts()[ray] as usize - 1))
                    })
                    .expect("nonempty downset has a removable maximal cube");
                cur = r.remove(&cur, peak_ray);
                guard += 1;
                assert!(guard <= r.volume());
            }
        }
    }
}
