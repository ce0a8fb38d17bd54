//! The fluctuating-bias bottleneck construction on an n x n square.
//!
//! Cubes on or below the anti-diagonal `x + y = n + M` carry bias `1 + eps`
//! with `eps = 1/(4n)` and `M = n - floor(sqrt(n))`; the remaining corner
//! cubes carry a large bias `xi`. States split by the maximum height of
//! their staircase walk into a low class, the cut at height `M`, and a high
//! class (exactly the states containing at least one `xi`-cube). Tuning `xi`
//! so the high class carries `e` times the low class's stationary mass makes
//! the cut an exponentially thin bottleneck as `n` grows.

use crate::dynamics::BiasField;
use crate::numeric::{euler_bounds, exp_bounds, rat_to_f64, rat_usize, Rat};
use crate::oracle::{Conductance, ExactModel, MixingResult, OracleError, StartSet};
use crate::region::{Downset, EnumerationTooLarge, Region};
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlowError {
    #[error("side must be at least 4, got {0}")]
    TooSmall(u32),
    #[error(
        "no sign change over the xi bracket: sign(g(lo)) = {sign_lo}, sign(g(hi)) = {sign_hi}"
    )]
    BracketFailure {
        sign_lo: i8,
        sign_hi: i8,
        g_lo: f64,
        g_hi: f64,
    },
    #[error(transparent)]
    TooLarge(#[from] EnumerationTooLarge),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkClass {
    Low,
    Cut,
    High,
}

#[derive(Clone, Debug)]
pub struct SlowInstance {
    pub n: u32,
    /// Height threshold `M = n - floor(sqrt(n))`.
    pub m: i64,
    pub eps: Rat,
    pub xi: Rat,
    pub region: Region,
}

fn floor_sqrt(n: u32) -> u32 {
    let mut r = (n as f64).sqrt() as u32;
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    while r * r > n {
        r -= 1;
    }
    r
}

/// Rational upper bound on the high bracket endpoint `4 e^(5/2)`.
pub fn xi_bracket_high() -> Rat {
    let (_, hi) = exp_bounds(&Rat::new(5.into(), 2.into()), 40);
    hi * Rat::from_integer(4.into())
}

/// Build the instance with `xi` preset to the bracket midpoint.
pub fn build_slow_instance(n: u32) -> Result<SlowInstance, SlowError> {
    if n < 4 {
        return Err(SlowError::TooSmall(n));
    }
    let eps = Rat::one() / rat_usize(4 * n as usize);
    // Floor rounding: the threshold must strictly grow with n wherever
    // possible, or the cut class gains relative mass at the stall.
    let m = n as i64 - floor_sqrt(n) as i64;
    let lo = Rat::one() + &eps;
    let xi = (lo + xi_bracket_high()) / Rat::from_integer(2.into());
    let region = Region::rectangle(&[n, n]).expect("square region");
    Ok(SlowInstance {
        n,
        m,
        eps,
        xi,
        region,
    })
}

impl SlowInstance {
    pub fn with_xi(&self, xi: Rat) -> SlowInstance {
        SlowInstance { xi, ..self.clone() }
    }

    /// Is the cube at `(x, y)` in the high-bias corner?
    pub fn is_xi_cube(&self, x: i64, y: i64) -> bool {
        x + y > self.n as i64 + self.m
    }

    pub fn xi_cube_count(&self) -> usize {
        self.region
            .points()
            .filter(|p| self.is_xi_cube(p[0], p[1]))
            .count()
    }

    pub fn bias(&self) -> BiasField {
        let low = Rat::one() + &self.eps;
        let xi = self.xi.clone();
        let nm = self.n as i64 + self.m;
        BiasField::per_site(&self.region, move |p| {
            if p[0] + p[1] > nm {
                xi.clone()
            } else {
                low.clone()
            }
        })
        .expect("all biases exceed 1")
    }

    /// Column heights of a downset, leftmost column first.
    pub fn column_heights(&self, s: &Downset) -> Vec<u32> {
        let n = self.n as i64;
        (1..=n)
            .map(|x| {
                (1..=n)
                    .take_while(|&y| {
                        let (ray, h) = self.region.locate(&vec![x, y]).expect("in region");
                        s.counts()[ray as usize] > h
                    })
                    .count() as u32
            })
            .collect()
    }

    /// The staircase walk read from the top-left corner: +1 steps right,
    /// -1 steps down, `2n` steps total ending at height zero.
    pub fn walk_of(&self, s: &Downset) -> Vec<i8> {
        let heights = self.column_heights(s);
        let n = self.n as usize;
        let mut walk = Vec::with_capacity(2 * n);
        let mut prev = n as u32;
        for &h in heights.iter().take(n) {
            for _ in h..prev {
                walk.push(-1);
            }
            walk.push(1);
            prev = h;
        }
        for _ in 0..prev {
            walk.push(-1);
        }
        walk
    }

    pub fn max_height(&self, s: &Downset) -> i64 {
        let mut acc = 0i64;
        let mut best = 0i64;
        for &step in &self.walk_of(s) {
            acc += step as i64;
            best = best.max(acc);
        }
        best
    }

    pub fn classify(&self, s: &Downset) -> WalkClass {
        let h = self.max_height(s);
        if h < self.m {
            WalkClass::Low
        } else if h == self.m {
            WalkClass::Cut
        } else {
            WalkClass::High
        }
    }
}

/// Per-class unnormalized stationary mass, with the high class kept as a
/// polynomial in `xi` (its states are exactly those holding `xi`-cubes, so
/// the low/cut masses are `xi`-free).
#[derive(Clone, Debug)]
pub struct ClassWeights {
    pub low: Rat,
    pub cut: Rat,
    /// `high_coeffs[j]` multiplies `xi^j`; the j = 0 slot stays zero.
    pub high_coeffs: Vec<Rat>,
    pub sizes: (usize, usize, usize),
}

impl ClassWeights {
    pub fn high_at(&self, xi: &Rat) -> Rat {
        let mut acc = Rat::zero();
        for c in self.high_coeffs.iter().rev() {
            acc = acc * xi + c;
        }
        acc
    }

    pub fn z_at(&self, xi: &Rat) -> Rat {
        &self.low + &self.cut + self.high_at(xi)
    }

    /// Certified sign of `Z pi(high) - e * Z pi(low)` at a rational `xi`;
    /// zero means undetermined within the Euler enclosure.
    pub fn g_sign(&self, xi: &Rat, euler_terms: usize) -> i8 {
        let p = self.high_at(xi);
        let (e_lo, e_hi) = euler_bounds(euler_terms);
        if p > e_hi * &self.low {
            1
        } else if p < e_lo * &self.low {
            -1
        } else {
            0
        }
    }

    pub fn g_approx(&self, xi: &Rat) -> f64 {
        rat_to_f64(&self.high_at(xi)) - std::f64::consts::E * rat_to_f64(&self.low)
    }
}

/// Enumerate the instance's states and accumulate per-class weights.
///
/// A state's weight is `(1+eps)^(low cubes) * xi^(xi-cubes)`; power tables
/// keep this to one big-rational multiply per state.
pub fn class_weights(inst: &SlowInstance, cap: usize) -> Result<ClassWeights, EnumerationTooLarge> {
    let region = &inst.region;
    let states = region.enumerate_downsets(cap)?;
    let n2 = region.volume();
    let one_eps = Rat::one() + &inst.eps;
    let mut pow_eps = Vec::with_capacity(n2 + 1);
    pow_eps.push(Rat::one());
    for k in 1..=n2 {
        let next = &pow_eps[k - 1] * &one_eps;
        pow_eps.push(next);
    }
    let max_xi = inst.xi_cube_count();

    // Per (ray, height): cube diagonal x + y; xi-cubes sit past n + m.
    let nm = inst.n as i64 + inst.m;
    let diag0: Vec<i64> = (0..region.span())
        .map(|r| {
            let p = region.cube(r, 0);
            p[0] + p[1]
        })
        .collect();

    let mut low = Rat::zero();
    let mut cut = Rat::zero();
    let mut high_coeffs = vec![Rat::zero(); max_xi + 1];
    let mut sizes = (0usize, 0usize, 0usize);

    for s in &states {
        let mut xi_cubes = 0usize;
        // The empty walk never rises above the corners, so diagonal n is the
        // height-zero baseline.
        let mut max_diag = inst.n as i64;
        let mut vol = 0usize;
        for (ray, &c) in s.counts().iter().enumerate() {
            if c == 0 {
                continue;
            }
            vol += c as usize;
            let top_diag = diag0[ray] + 2 * (c as i64 - 1);
            max_diag = max_diag.max(top_diag);
            // Heights with diagonal > n + m form a suffix of the ray prefix.
            // Floor division: rays can start past the cut line.
            let first_xi = ((nm - diag0[ray]).div_euclid(2) + 1).max(0);
            if (c as i64) > first_xi {
                xi_cubes += (c as i64 - first_xi) as usize;
            }
        }
        let height = (max_diag - inst.n as i64).max(0);
        let class = if height < inst.m {
            WalkClass::Low
        } else if height == inst.m {
            WalkClass::Cut
        } else {
            WalkClass::High
        };
        match class {
            WalkClass::Low => {
                debug_assert_eq!(xi_cubes, 0);
                sizes.0 += 1;
                low += &pow_eps[vol];
            }
            WalkClass::Cut => {
                debug_assert_eq!(xi_cubes, 0);
                sizes.1 += 1;
                cut += &pow_eps[vol];
            }
            WalkClass::High => {
                debug_assert!(xi_cubes >= 1);
                sizes.2 += 1;
                high_coeffs[xi_cubes] += &pow_eps[vol - xi_cubes];
            }
        }
    }
    Ok(ClassWeights {
        low,
        cut,
        high_coeffs,
        sizes,
    })
}

const EULER_TERMS: usize = 60;

/// Bisect `xi` in `[1 + eps, 4 e^2.5]` until the high class carries `e`
/// times the low class's mass, to relative tolerance 1e-9 on `xi`.
pub fn tune_xi(inst: &SlowInstance, weights: &ClassWeights) -> Result<Rat, SlowError> {
    tune_xi_with_tol(inst, weights, &Rat::new(1.into(), 1_000_000_000i64.into()))
}

pub fn tune_xi_with_tol(
    inst: &SlowInstance,
    weights: &ClassWeights,
    rel_tol: &Rat,
) -> Result<Rat, SlowError> {
    let mut lo = Rat::one() + &inst.eps;
    let mut hi = xi_bracket_high();
    let sign_lo = weights.g_sign(&lo, EULER_TERMS);
    let sign_hi = weights.g_sign(&hi, EULER_TERMS);
    if sign_lo >= 0 || sign_hi <= 0 {
        return Err(SlowError::BracketFailure {
            sign_lo,
            sign_hi,
            g_lo: weights.g_approx(&lo),
            g_hi: weights.g_approx(&hi),
        });
    }
    let half = Rat::new(1.into(), 2.into());
    loop {
        let mid = (&lo + &hi) * &half;
        match weights.g_sign(&mid, EULER_TERMS) {
            0 => return Ok(mid),
            1 => hi = mid,
            _ => lo = mid,
        }
        if (&hi - &lo) <= rel_tol * &lo {
            return Ok((&lo + &hi) * half);
        }
    }
}

/// `|pi(high) - e pi(low)| / pi(low) <= tol`, certified via an Euler enclosure.
pub fn tuning_residual_within(weights: &ClassWeights, xi: &Rat, tol: &Rat) -> bool {
    let ratio = weights.high_at(xi) / &weights.low;
    let (e_lo, e_hi) = euler_bounds(EULER_TERMS);
    &ratio - e_hi <= *tol && e_lo - &ratio <= *tol
}

/// Simulation-mode evidence for sizes beyond exact enumeration: long runs
/// from both extreme states whose volume distributions fail to merge. This
/// is evidence of the bottleneck, not a certificate, and reports label it so.
#[derive(Clone, Debug)]
pub struct SlowSimReport {
    pub n: u32,
    pub xi: Rat,
    pub steps: u64,
    pub replicas: u64,
    pub mean_volume_from_empty: f64,
    pub mean_volume_from_full: f64,
    /// Overlap coefficient of the two final-volume histograms in [0, 1];
    /// near zero means the two starts remain in separate regimes.
    pub volume_overlap: f64,
}

pub fn simulation_report(
    n: u32,
    xi: Option<Rat>,
    steps: u64,
    replicas: u64,
    master_seed: u64,
) -> Result<SlowSimReport, SlowError> {
    use crate::dynamics::{run, ChainConfig, StartSpec};
    use crate::rng::replica_seed;
    use rayon::prelude::*;

    let base = build_slow_instance(n)?;
    let inst = match xi {
        Some(xi) => base.with_xi(xi),
        None => base,
    };
    let bias = inst.bias();
    let finals: Vec<(u64, u64)> = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let volume_of = |start: StartSpec, seed: u64| {
                let cfg = ChainConfig {
                    start,
                    seed,
                    steps,
                    stride: 0,
                };
                run(&inst.region, &bias, &cfg, &mut []).final_state.volume()
            };
            (
                volume_of(StartSpec::Empty, replica_seed(master_seed, 2 * k)),
                volume_of(StartSpec::Full, replica_seed(master_seed, 2 * k + 1)),
            )
        })
        .collect();
    let cells = inst.region.volume() + 1;
    let mut hist_lo = vec![0u64; cells];
    let mut hist_hi = vec![0u64; cells];
    for &(lo, hi) in &finals {
        hist_lo[lo as usize] += 1;
        hist_hi[hi as usize] += 1;
    }
    let overlap: f64 = hist_lo
        .iter()
        .zip(&hist_hi)
        .map(|(&a, &b)| a.min(b) as f64 / replicas as f64)
        .sum();
    Ok(SlowSimReport {
        n,
        xi: inst.xi.clone(),
        steps,
        replicas,
        mean_volume_from_empty: finals.iter().map(|f| f.0 as f64).sum::<f64>() / replicas as f64,
        mean_volume_from_full: finals.iter().map(|f| f.1 as f64).sum::<f64>() / replicas as f64,
        volume_overlap: overlap,
    })
}

#[derive(Clone, Debug)]
pub struct SlowReport {
    pub n: u32,
    pub m: i64,
    pub eps: Rat,
    pub xi: Rat,
    pub tuned: bool,
    pub bracket_failure: Option<(i8, i8)>,
    pub sizes: (usize, usize, usize),
    pub pi_low: Rat,
    pub pi_cut: Rat,
    pub pi_high: Rat,
    pub conductance: Conductance,
    pub low_to_high_edges: usize,
    pub mixing: Option<MixingResult>,
    /// Whether the mixing computation iterated all starts (versus extremes
    /// only, which lower-bounds the worst start).
    pub all_starts: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SlowOptions {
    pub cap: usize,
    /// Run the TV iteration (skippable for weight-only series sweeps).
    pub compute_mixing: bool,
    pub tv_eps: f64,
    pub tv_budget: u64,
    /// Iterate all starts when the state count is at most this; otherwise
    /// only from the extreme states, reported as a lower bound.
    pub all_starts_cap: usize,
}

impl Default for SlowOptions {
    fn default() -> Self {
        SlowOptions {
            cap: crate::region::DEFAULT_ENUM_CAP,
            compute_mixing: true,
            tv_eps: 0.25,
            tv_budget: 400_000,
            all_starts_cap: 1_000,
        }
    }
}

/// Tune the instance, build the exact model, and certify the bottleneck.
pub fn bottleneck_report(n: u32, opts: &SlowOptions) -> Result<SlowReport, SlowError> {
    let base = build_slow_instance(n)?;
    let weights = class_weights(&base, opts.cap)?;
    let (xi, tuned, bracket_failure) = match tune_xi(&base, &weights) {
        Ok(xi) => (xi, true, None),
        Err(SlowError::BracketFailure {
            sign_lo, sign_hi, ..
        }) => (base.xi.clone(), false, Some((sign_lo, sign_hi))),
        Err(other) => return Err(other),
    };
    let inst = base.with_xi(xi.clone());
    let bias = inst.bias();
    let model = ExactModel::build(&inst.region, &bias, opts.cap)?;

    // Class masses both ways: from the model and from the weight polynomials.
    let z = weights.z_at(&xi);
    let pi_low = &weights.low / &z;
    let pi_cut = &weights.cut / &z;
    let pi_high = weights.high_at(&xi) / &z;
    debug_assert_eq!(model.z, z);

    let classes: Vec<WalkClass> = model.states.iter().map(|s| inst.classify(s)).collect();
    debug_assert_eq!(
        classes
            .iter()
            .zip(&model.pi)
            .filter(|(c, _)| **c == WalkClass::Low)
            .fold(Rat::zero(), |acc, (_, p)| acc + p),
        pi_low,
        "class masses disagree between the weight polynomials and the model"
    );
    let in_low: Vec<bool> = classes.iter().map(|c| *c == WalkClass::Low).collect();
    let conductance = model.conductance_of_cut(&in_low)?;

    // A single move changes the walk's maximum height by at most one, so no
    // transition may jump the cut.
    let mut low_to_high_edges = 0usize;
    for i in 0..model.len() {
        if classes[i] != WalkClass::Low {
            continue;
        }
        for (j, _) in model.out_edges(i) {
            if classes[*j as usize] == WalkClass::High {
                low_to_high_edges += 1;
            }
        }
    }

    let all_starts = model.len() <= opts.all_starts_cap;
    let mixing = if opts.compute_mixing {
        let starts = if all_starts {
            StartSet::All
        } else {
            StartSet::Extremes
        };
        Some(model.tv_mixing_time_f64(opts.tv_eps, starts, opts.tv_budget))
    } else {
        None
    };

    Ok(SlowReport {
        n,
        m: inst.m,
        eps: inst.eps.clone(),
        xi,
        tuned,
        bracket_failure,
        sizes: weights.sizes,
        pi_low,
        pi_cut,
        pi_high,
        conductance,
        low_to_high_edges,
        mixing,
        all_starts,
    })
}
