//! Nice lattice regions, their diagonal rays, and downsets (order ideals).
//!
//! A region is a finite set of integer points in Z^d, each naming a unit cube.
//! Points are partitioned into *rays*: maximal runs along the all-ones vector.
//! A region is *nice* when every ray meets it in a contiguous run; only nice
//! regions are representable here (construction rejects the rest).
//!
//! A downset is stored as one prefix count per ray: the number of lowest cubes
//! of the ray it contains. With per-(ray, axis) neighbor links precomputed on
//! the region, the order-ideal closure test for a single move is O(d).

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

pub type Point = Vec<i64>;

pub const DEFAULT_ENUM_CAP: usize = 5_000_000;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("region must contain at least one point")]
    Empty,
    #[error("invalid dimensions: {0}")]
    BadDimensions(String),
    #[error("points have mixed dimensions")]
    MixedDimensions,
    #[error("niceness violation: ray through {witness:?} has a gap at {gap:?}")]
    NicenessViolation { witness: Point, gap: Point },
}

#[derive(Debug, Error)]
#[error("state space exceeds cap {cap} (discovered {discovered}{})",
        .exact.as_ref().map(|c| format!(", exact count {c}")).unwrap_or_default())]
pub struct EnumerationTooLarge {
    pub cap: usize,
    pub discovered: usize,
    /// Exact count when the ray-graph dynamic program applies (2D nice regions).
    pub exact: Option<BigUint>,
}

/// Axis link: for ray heights `lo..=hi`, the cube shifted by one unit along
/// the axis lies in the region, on ray `ray`, at height `h + delta`.
#[derive(Clone, Copy, Debug)]
struct Link {
    ray: u32,
    delta: i64,
    lo: u32,
    hi: u32,
}

#[derive(Clone, Debug)]
pub struct Region {
    dim: usize,
    rays: Vec<Vec<Point>>,
    cube_index: HashMap<Point, (u32, u32)>,
    down: Vec<Vec<Option<Link>>>,
    up: Vec<Vec<Option<Link>>>,
    x0: Point,
    x0_norm: i64,
    min_norm: i64,
    volume: usize,
}

/// A downset of some region, as per-ray prefix counts. Pure value type: all
/// structural queries go through the owning [`Region`].
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Downset {
    counts: Box<[u32]>,
}

impl Downset {
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn volume(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    fn count(&self, ray: usize) -> u32 {
        self.counts[ray]
    }
}

/// Per-ray boundary marker: the topmost cube of the ray, or the floor when the
/// ray carries no cubes. Every downset has exactly one marker per ray.
#[derive(Clone, Debug, PartialEq)]
pub enum Marker {
    Floor,
    Cube(Point),
}

pub fn l1(p: &[i64]) -> i64 {
    p.iter().sum()
}

impl Region {
    /// Hyper-rectangle with 1-based coordinates `1..=dims[i]`.
    pub fn rectangle(dims: &[u32]) -> Result<Region, RegionError> {
        if dims.is_empty() {
            return Err(RegionError::BadDimensions("no dimensions given".into()));
        }
        if dims.contains(&0) {
            return Err(RegionError::BadDimensions(format!(
                "{dims:?} has a zero entry"
            )));
        }
        let mut points = Vec::with_capacity(dims.iter().product::<u32>() as usize);
        let mut cur: Point = vec![1; dims.len()];
        loop {
            points.push(cur.clone());
            let mut axis = 0;
            loop {
                if axis == dims.len() {
                    return Region::from_points(points);
                }
                if cur[axis] < dims[axis] as i64 {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = 1;
                axis += 1;
            }
        }
    }

    /// Build a region from an explicit point set, checking niceness.
    pub fn from_points(points: Vec<Point>) -> Result<Region, RegionError> {
        if points.is_empty() {
            return Err(RegionError::Empty);
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(RegionError::MixedDimensions);
        }

        // Group points by infinite ray: the representative is p - min(p) * u*.
        let mut groups: HashMap<Point, Vec<(i64, Point)>> = HashMap::new();
        for p in points {
            let m = *p.iter().min().expect("nonempty point");
            let base: Point = p.iter().map(|&c| c - m).collect();
            groups.entry(base).or_default().push((m, p));
        }
        let mut bases: Vec<Point> = groups.keys().cloned().collect();
        bases.sort();

        let mut rays = Vec::with_capacity(bases.len());
        for base in &bases {
            let mut members = groups.remove(base).expect("present");
            members.sort();
            members.dedup();
            for w in members.windows(2) {
                if w[1].0 != w[0].0 + 1 {
                    let gap: Point = w[0].1.iter().map(|&c| c + 1).collect();
                    return Err(RegionError::NicenessViolation {
                        witness: w[0].1.clone(),
                        gap,
                    });
                }
            }
            rays.push(members.into_iter().map(|(_, p)| p).collect::<Vec<Point>>());
        }

        let mut cube_index = HashMap::new();
        for (r, ray) in rays.iter().enumerate() {
            for (h, p) in ray.iter().enumerate() {
                cube_index.insert(p.clone(), (r as u32, h as u32));
            }
        }

        let volume = cube_index.len();
        let x0 = rays
            .iter()
            .flatten()
            .max_by(|a, b| l1(a).cmp(&l1(b)).then_with(|| a.cmp(b)))
            .expect("nonempty region")
            .clone();
        let x0_norm = l1(&x0);
        let min_norm = rays
            .iter()
            .flatten()
            .map(|p| l1(p))
            .min()
            .expect("nonempty");

        let down = Self::build_links(&rays, &cube_index, dim, -1)?;
        let up = Self::build_links(&rays, &cube_index, dim, 1)?;

        Ok(Region {
            dim,
            rays,
            cube_index,
            down,
            up,
            x0,
            x0_norm,
            min_norm,
            volume,
        })
    }

    fn build_links(
        rays: &[Vec<Point>],
        cube_index: &HashMap<Point, (u32, u32)>,
        dim: usize,
        dir: i64,
    ) -> Result<Vec<Vec<Option<Link>>>, RegionError> {
        let mut all = Vec::with_capacity(rays.len());
        for ray in rays {
            let mut per_axis = Vec::with_capacity(dim);
            for axis in 0..dim {
                let mut link: Option<Link> = None;
                for (h, p) in ray.iter().enumerate() {
                    let mut q = p.clone();
                    q[axis] += dir;
                    if let Some(&(tr, th)) = cube_index.get(&q) {
                        match link.as_mut() {
                            None => {
                                link = Some(Link {
                                    ray: tr,
                                    delta: th as i64 - h as i64,
                                    lo: h as u32,
                                    hi: h as u32,
                                });
                            }
                            Some(l) => {
                                // Contiguity along the shifted ray is exactly
                                // the niceness of the neighboring run.
                                debug_assert_eq!(l.ray, tr);
                                debug_assert_eq!(l.delta, th as i64 - h as i64);
                                debug_assert_eq!(l.hi + 1, h as u32);
                                l.hi = h as u32;
                            }
                        }
                    }
                }
                per_axis.push(link);
            }
            all.push(per_axis);
        }
        Ok(all)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Number of rays; equals the boundary size of every downset.
    pub fn span(&self) -> usize {
        self.rays.len()
    }

    /// Maximum ray length.
    pub fn stretch(&self) -> usize {
        self.rays.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn x0(&self) -> &Point {
        &self.x0
    }

    pub fn x0_norm(&self) -> i64 {
        self.x0_norm
    }

    pub fn min_norm(&self) -> i64 {
        self.min_norm
    }

    /// Largest weight exponent of the exponential metric on this region.
    pub fn norm_range(&self) -> u32 {
        (self.x0_norm - self.min_norm) as u32
    }

    pub fn ray_len(&self, ray: usize) -> usize {
        self.rays[ray].len()
    }

    pub fn cube(&self, ray: usize, height: usize) -> &Point {
        &self.rays[ray][height]
    }

    pub fn cube_norm(&self, ray: usize, height: usize) -> i64 {
        l1(&self.rays[ray][0]) + (self.dim as i64) * height as i64
    }

    pub fn locate(&self, p: &Point) -> Option<(u32, u32)> {
        self.cube_index.get(p).copied()
    }

    pub fn contains(&self, s: &Downset, p: &Point) -> bool {
        match self.locate(p) {
            Some((r, h)) => s.count(r as usize) > h,
            None => false,
        }
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.rays.iter().flatten()
    }

    pub fn empty(&self) -> Downset {
        Downset {
            counts: vec![0; self.span()].into_boxed_slice(),
        }
    }

    pub fn full(&self) -> Downset {
        Downset {
            counts: self
                .rays
                .iter()
                .map(|r| r.len() as u32)
                .collect::<Vec<_>>()
                .into_boxed_slice(),
        }
    }

    pub fn is_full(&self, s: &Downset) -> bool {
        s.counts
            .iter()
            .zip(&self.rays)
            .all(|(&c, r)| c as usize == r.len())
    }

    /// Validate a raw counts vector as a downset of this region.
    pub fn downset_from_counts(&self, counts: Vec<u32>) -> Option<Downset> {
        if counts.len() != self.span() {
            return None;
        }
        for (r, &c) in counts.iter().enumerate() {
            if c as usize > self.ray_len(r) {
                return None;
            }
            // Closure: the binding constraint per axis sits at the highest
            // included cube inside the link window.
            if c > 0 {
                for link in self.down[r].iter().flatten() {
                    let h = (c - 1).min(link.hi);
                    if h >= link.lo {
                        let need = h as i64 + link.delta + 1;
                        if (counts[link.ray as usize] as i64) < need {
                            return None;
                        }
                    }
                }
            }
        }
        Some(Downset {
            counts: counts.into_boxed_slice(),
        })
    }

    /// The next cube up on `ray` if adding it keeps the order-ideal closure.
    pub fn can_add(&self, s: &Downset, ray: usize) -> Option<&Point> {
        let h = s.count(ray) as usize;
        if h >= self.ray_len(ray) {
            return None;
        }
        for link in self.down[ray].iter().flatten() {
            if (link.lo..=link.hi).contains(&(h as u32)) {
                let need = h as i64 + link.delta + 1;
                if (s.count(link.ray as usize) as i64) < need {
                    return None;
                }
            }
        }
        Some(self.cube(ray, h))
    }

    /// The topmost cube of `ray` if removing it keeps the closure.
    pub fn can_remove(&self, s: &Downset, ray: usize) -> Option<&Point> {
        let c = s.count(ray);
        if c == 0 {
            return None;
        }
        let h = c - 1;
        for link in self.up[ray].iter().flatten() {
            if (link.lo..=link.hi).contains(&h) {
                let neighbor_height = h as i64 + link.delta;
                if s.count(link.ray as usize) as i64 > neighbor_height {
                    return None;
                }
            }
        }
        Some(self.cube(ray, h as usize))
    }

    pub fn add(&self, s: &Downset, ray: usize) -> Downset {
        debug_assert!(self.can_add(s, ray).is_some());
        let mut c = s.counts.to_vec();
        c[ray] += 1;
        Downset {
            counts: c.into_boxed_slice(),
        }
    }

    pub fn remove(&self, s: &Downset, ray: usize) -> Downset {
        debug_assert!(self.can_remove(s, ray).is_some());
        let mut c = s.counts.to_vec();
        c[ray] -= 1;
        Downset {
            counts: c.into_boxed_slice(),
        }
    }

    pub fn add_in_place(&self, s: &mut Downset, ray: usize) {
        s.counts[ray] += 1;
    }

    pub fn remove_in_place(&self, s: &mut Downset, ray: usize) {
        s.counts[ray] -= 1;
    }

    /// Cubes removable from `s` without breaking the closure.
    pub fn peaks(&self, s: &Downset) -> Vec<&Point> {
        (0..self.span())
            .filter_map(|r| self.can_remove(s, r))
            .collect()
    }

    /// Cubes addable to `s` without breaking the closure.
    pub fn valleys(&self, s: &Downset) -> Vec<&Point> {
        (0..self.span())
            .filter_map(|r| self.can_add(s, r))
            .collect()
    }

    /// One marker per ray: the topmost included cube, or the floor.
    pub fn boundary(&self, s: &Downset) -> Vec<Marker> {
        (0..self.span())
            .map(|r| match s.count(r) {
                0 => Marker::Floor,
                c => Marker::Cube(self.cube(r, c as usize - 1).clone()),
            })
            .collect()
    }

    /// Is `a` contained in `b`? With prefix counts this is pointwise.
    pub fn subset(&self, a: &Downset, b: &Downset) -> bool {
        a.counts.iter().zip(b.counts.iter()).all(|(x, y)| x <= y)
    }

    /// All downsets, in lexicographic counts order. Aborts past `cap`.
    pub fn enumerate_downsets(&self, cap: usize) -> Result<Vec<Downset>, EnumerationTooLarge> {
        if let Some(count) = self.count_downsets() {
            if count > BigUint::from(cap) {
                return Err(EnumerationTooLarge {
                    cap,
                    discovered: 0,
                    exact: Some(count),
                });
            }
        }
        let mut seen: HashMap<Downset, ()> = HashMap::new();
        let mut queue = VecDeque::new();
        let start = self.empty();
        seen.insert(start.clone(), ());
        queue.push_back(start);
        while let Some(s) = queue.pop_front() {
            for r in 0..self.span() {
                if self.can_add(&s, r).is_some() {
                    let t = self.add(&s, r);
                    if !seen.contains_key(&t) {
                        if seen.len() >= cap {
                            return Err(EnumerationTooLarge {
                                cap,
                                discovered: seen.len() + 1,
                                exact: self.count_downsets(),
                            });
                        }
                        seen.insert(t.clone(), ());
                        queue.push_back(t);
                    }
                }
            }
        }
        let mut states: Vec<Downset> = seen.into_keys().collect();
        states.sort_by(|a, b| a.counts.cmp(&b.counts));
        Ok(states)
    }

    /// Exact downset count by dynamic programming over the ray graph, when
    /// that graph is a path (always the case for nice 2D regions, where the
    /// two axis links of a ray point to its two neighboring diagonals).
    pub fn count_downsets(&self) -> Option<BigUint> {
        let order = self.ray_path_order()?;
        let compat = |q: usize, cq: u32, r: usize, cr: u32| -> bool {
            self.pair_ok(r, cr, q, cq) && self.pair_ok(q, cq, r, cr)
        };
        let mut f: Vec<BigUint> = (0..=self.ray_len(order[0]))
            .map(|_| BigUint::one())
            .collect();
        for w in order.windows(2) {
            let (q, r) = (w[0], w[1]);
            let mut g: Vec<BigUint> = vec![BigUint::zero(); self.ray_len(r) + 1];
            for (cr, slot) in g.iter_mut().enumerate() {
                for (cq, fq) in f.iter().enumerate() {
                    if compat(q, cq as u32, r, cr as u32) {
                        *slot += fq;
                    }
                }
            }
            f = g;
        }
        Some(f.into_iter().sum())
    }

    /// Constraints that ray `r` at count `cr` imposes on ray `q` at count `cq`.
    fn pair_ok(&self, r: usize, cr: u32, q: usize, cq: u32) -> bool {
        if cr == 0 {
            return true;
        }
        for link in self.down[r].iter().flatten() {
            if link.ray as usize != q {
                continue;
            }
            let h = (cr - 1).min(link.hi);
            if h >= link.lo {
                let need = h as i64 + link.delta + 1;
                if (cq as i64) < need {
                    return false;
                }
            }
        }
        true
    }

    fn ray_path_order(&self) -> Option<Vec<usize>> {
        let n = self.span();
        if n == 1 {
            return Some(vec![0]);
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..n {
            for link in self.down[r].iter().flatten() {
                let t = link.ray as usize;
                if t != r && !adj[r].contains(&t) {
                    adj[r].push(t);
                    adj[t].push(r);
                }
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        if adj.iter().any(|a| a.len() > 2) {
            return None;
        }
        let start = (0..n).find(|&r| adj[r].len() <= 1)?;
        let mut order = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        while order.len() < n {
            let next = adj[cur].iter().copied().find(|&t| t != prev)?;
            order.push(next);
            prev = cur;
            cur = next;
        }
        Some(order)
    }

    /// Exhaustive peak/valley inequality check: does every downset except the
    /// full one satisfy `|peaks| <= (dim - 1) * |valleys| + 1`? The inequality
    /// is a property of boxes; other nice regions can have states with a
    /// single valley facing many peaks, and those land in the violation list
    /// rather than aborting the scan.
    pub fn lemma_peak_valley_check(
        &self,
        cap: usize,
    ) -> Result<PeakValleyReport, EnumerationTooLarge> {
        let states = self.enumerate_downsets(cap)?;
        let d = self.dim as i64;
        let mut max_excess = i64::MIN;
        let mut violations = Vec::new();
        let mut checked = 0usize;
        for s in &states {
            if self.is_full(s) {
                continue;
            }
            checked += 1;
            let p = self.peaks(s).len() as i64;
            let v = self.valleys(s).len() as i64;
            let excess = p - (d - 1) * v;
            max_excess = max_excess.max(excess);
            if excess > 1 {
                violations.push(s.clone());
            }
        }
        Ok(PeakValleyReport {
            states: states.len(),
            checked,
            max_excess,
            violations,
        })
    }

    /// Stable 64-bit identity over the canonical point set.
    pub fn hash_id(&self) -> u64 {
        let mut points: Vec<&Point> = self.points().collect();
        points.sort();
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: i64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        eat(self.dim as i64);
        for p in points {
            for &c in p {
                eat(c);
            }
            eat(i64::MIN); // separator
        }
        h
    }

    pub fn to_spec(&self) -> RegionSpec {
        let mut points: Vec<Point> = self.points().cloned().collect();
        points.sort();
        RegionSpec {
            dim: self.dim,
            dims: None,
            points: Some(points),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PeakValleyReport {
    pub states: usize,
    pub checked: usize,
    /// Max of `|peaks| - (dim-1)*|valleys|` over non-full downsets; the lemma
    /// says this never exceeds 1.
    pub max_excess: i64,
    pub violations: Vec<Downset>,
}

impl PeakValleyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Serialized region description: a rectangle (`dims`) or explicit `points`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionSpec {
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Point>>,
}

impl RegionSpec {
    pub fn build(&self) -> Result<Region, RegionError> {
        match (&self.dims, &self.points) {
            (Some(dims), _) => {
                if dims.len() != self.dim {
                    return Err(RegionError::BadDimensions(format!(
                        "dim {} but {} entries",
                        self.dim,
                        dims.len()
                    )));
                }
                Region::rectangle(dims)
            }
            (None, Some(points)) => {
                let region = Region::from_points(points.clone())?;
                if region.dim() != self.dim {
                    return Err(RegionError::BadDimensions(
                        "dim mismatch with points".into(),
                    ));
                }
                Ok(region)
            }
            (None, None) => Err(RegionError::Empty),
        }
    }
}

/// Downset wire format: counts in canonical ray order plus the region id.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DownsetJson {
    pub region: String,
    pub counts: Vec<u32>,
}

impl DownsetJson {
    pub fn encode(region: &Region, s: &Downset) -> Self {
        DownsetJson {
            region: format!("{:016x}", region.hash_id()),
            counts: s.counts().to_vec(),
        }
    }

    pub fn decode(&self, region: &Region) -> Option<Downset> {
        if self.region != format!("{:016x}", region.hash_id()) {
            return None;
        }
        region.downset_from_counts(self.counts.clone())
    }
}
