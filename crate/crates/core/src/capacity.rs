//! Two-user uplink and downlink capacity regions and OMA rate regions for a
//! single pinched waveguide.

use crate::beamforming::{centered_array, elementwise_maximize, SearchSettings};
use crate::channel::single_waveguide_gain;
use crate::geometry::Scenario;
use crate::numerics::linspace;
use crate::par::{self, Execution};
use crate::{Error, Result};

/// A rate pair in bits/s/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePair {
    pub r1: f64,
    pub r2: f64,
}

impl RatePair {
    pub fn new(r1: f64, r2: f64) -> Self {
        Self { r1, r2 }
    }
}

fn cross(o: RatePair, a: RatePair, b: RatePair) -> f64 {
    (a.r1 - o.r1) * (b.r2 - o.r2) - (a.r2 - o.r2) * (b.r1 - o.r1)
}

fn dist(a: RatePair, b: RatePair) -> f64 {
    (a.r1 - b.r1).hypot(a.r2 - b.r2)
}

fn segment_distance(p: RatePair, a: RatePair, b: RatePair) -> f64 {
    let (dx, dy) = (b.r1 - a.r1, b.r2 - a.r2);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p.r1 - a.r1) * dx + (p.r2 - a.r2) * dy) / len2).clamp(0.0, 1.0);
    dist(p, RatePair::new(a.r1 + t * dx, a.r2 + t * dy))
}

/// Counter-clockwise convex hull of the downward closure of `points`,
/// starting at the origin. Collinear vertices are dropped.
pub fn convex_hull(points: &[RatePair]) -> Vec<RatePair> {
    let mut pts = vec![RatePair::new(0.0, 0.0)];
    for p in points {
        let p = RatePair::new(p.r1.max(0.0), p.r2.max(0.0));
        pts.extend([p, RatePair::new(p.r1, 0.0), RatePair::new(0.0, p.r2)]);
    }
    pts.sort_by(|a, b| a.r1.total_cmp(&b.r1).then(a.r2.total_cmp(&b.r2)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<RatePair> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<RatePair> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Achievable points and the hull of their downward closure.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRegion {
    pub points: Vec<RatePair>,
    pub hull: Vec<RatePair>,
}

impl RateRegion {
    pub fn from_points(points: Vec<RatePair>) -> Self {
        let hull = convex_hull(&points);
        Self { points, hull }
    }

    pub fn union(regions: &[&RateRegion]) -> Self {
        Self::from_points(regions.iter().flat_map(|r| r.hull.iter().copied()).collect())
    }

    /// True when `p` lies inside the hull or within `slack` of it.
    pub fn contains(&self, p: RatePair, slack: f64) -> bool {
        match self.hull.len() {
            0 => false,
            1 => dist(p, self.hull[0]) <= slack,
            2 => segment_distance(p, self.hull[0], self.hull[1]) <= slack,
            n => (0..n).all(|i| {
                let (a, b) = (self.hull[i], self.hull[(i + 1) % n]);
                cross(a, b, p) / dist(a, b) >= -slack
            }),
        }
    }

    /// True when every hull vertex of `other` lies inside this region.
    pub fn contains_region(&self, other: &RateRegion, slack: f64) -> bool {
        other.hull.iter().all(|&p| self.contains(p, slack))
    }

    /// Largest radial factor by which a hull vertex of `self` sits outside
    /// `other`, e.g. 0.01 when a vertex is 1% beyond it; zero if none is.
    pub fn excess_over(&self, other: &RateRegion) -> f64 {
        self.hull
            .iter()
            .filter(|p| p.r1 > 0.0 || p.r2 > 0.0)
            .map(|&p| {
                if other.contains(p, 0.0) {
                    return 0.0;
                }
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if other.contains(RatePair::new(p.r1 * mid, p.r2 * mid), 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                1.0 / lo.max(f64::MIN_POSITIVE) - 1.0
            })
            .fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        let n = self.hull.len();
        if n < 3 {
            return 0.0;
        }
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (self.hull[i], self.hull[(i + 1) % n]);
                a.r1 * b.r2 - b.r1 * a.r2
            })
            .sum::<f64>()
    }
}

/// SIC decoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodingOrder {
    /// User 2 is decoded first, user 1 last.
    TwoThenOne,
    /// User 1 is decoded first, user 2 last.
    OneThenTwo,
}

impl DecodingOrder {
    /// User indices (0-based) in decoding order.
    pub fn sequence(self) -> [usize; 2] {
        match self {
            Self::TwoThenOne => [1, 0],
            Self::OneThenTwo => [0, 1],
        }
    }
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Per-user transmit powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPowers {
    pub p1: f64,
    pub p2: f64,
}

impl UserPowers {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        if !(p1 >= 0.0 && p2 >= 0.0 && p1.is_finite() && p2.is_finite()) {
            return Err(Error::InvalidParameter(format!("powers ({p1}, {p2})")));
        }
        Ok(Self { p1, p2 })
    }

    fn get(self, k: usize) -> f64 {
        if k == 0 {
            self.p1
        } else {
            self.p2
        }
    }
}

/// SIC rates `(R1, R2)` for gains `g` under `order`.
pub fn sic_rates(g: [f64; 2], p: UserPowers, noise: f64, order: DecodingOrder) -> RatePair {
    let [first, last] = order.sequence();
    let mut r = [0.0; 2];
    r[first] = log2_1p(p.get(first) * g[first] / (p.get(last) * g[last] + noise));
    r[last] = log2_1p(p.get(last) * g[last] / noise);
    RatePair::new(r[0], r[1])
}

/// Vertices of the uplink pentagon for effective gains `g`, counter-clockwise from the origin.
pub fn pentagon_vertices(g: [f64; 2], p: UserPowers, noise: f64) -> [RatePair; 5] {
    let c1 = log2_1p(p.p1 * g[0] / noise);
    let c2 = log2_1p(p.p2 * g[1] / noise);
    [
        RatePair::new(0.0, 0.0),
        RatePair::new(c1, 0.0),
        sic_rates(g, p, noise, DecodingOrder::TwoThenOne),
        sic_rates(g, p, noise, DecodingOrder::OneThenTwo),
        RatePair::new(0.0, c2),
    ]
}

/// Uplink effective gains `|h_k(x)|^2` on waveguide 0 with the `1/sqrt(M)` normalization.
pub fn uplink_gains(s: &Scenario, x: &[f64]) -> Result<[f64; 2]> {
    if s.users.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: s.users.len(),
        });
    }
    let w = s.waveguides.first().ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?;
    let rho = vec![1.0 / x.len().max(1) as f64; x.len()];
    let mut g = [0.0; 2];
    for (k, gk) in g.iter_mut().enumerate() {
        *gk = single_waveguide_gain(x, &rho, w, &s.users[k], &s.constants)?.norm_sqr();
    }
    Ok(g)
}

/// Capacity pentagon for PA positions `x`.
pub fn uplink_pentagon(s: &Scenario, x: &[f64], p: UserPowers) -> Result<RateRegion> {
    let g = uplink_gains(s, x)?;
    Ok(RateRegion::from_points(pentagon_vertices(g, p, s.constants.noise_power).to_vec()))
}

/// FDMA rates with bandwidth fraction `b` for user 1.
pub fn fdma_rates(g: [f64; 2], p: UserPowers, noise: f64, b: f64) -> RatePair {
    let rate = |frac: f64, snr: f64| if frac <= 0.0 { 0.0 } else { frac * log2_1p(snr / frac) };
    RatePair::new(rate(b, p.p1 * g[0] / noise), rate(1.0 - b, p.p2 * g[1] / noise))
}

/// Sweep resolutions for region construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSettings {
    /// Rate-profile factors.
    pub alpha_points: usize,
    /// Single-PA position grid.
    pub grid_res: usize,
    /// Bandwidth fractions for FDMA.
    pub bandwidth_points: usize,
    /// Downlink power splits.
    pub split_points: usize,
    pub search: SearchSettings,
    pub exec: Execution,
}

impl Default for RegionSettings {
    fn default() -> Self {
        Self {
            alpha_points: 41,
            grid_res: 1001,
            bandwidth_points: 101,
            split_points: 101,
            search: SearchSettings::default(),
            exec: Execution::Parallel,
        }
    }
}

fn user_span(s: &Scenario) -> Result<(f64, f64)> {
    if s.users.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: s.users.len(),
        });
    }
    Ok((s.users[0].x, s.users[1].x))
}

/// Single-PA positions on a uniform grid between the two users.
pub fn single_pinch_grid(s: &Scenario, grid_res: usize) -> Result<Vec<Vec<f64>>> {
    let (a, b) = user_span(s)?;
    let w = s.waveguides.first().ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?;
    Ok(linspace(a, b, grid_res.max(1))
        .into_iter()
        .map(|x| vec![x.clamp(0.0, w.length)])
        .collect())
}

/// Hull of the uplink pentagons over a single-PA grid between the users.
pub fn single_pinch_capacity(s: &Scenario, p: UserPowers, grid_res: usize) -> Result<RateRegion> {
    let cands = single_pinch_grid(s, grid_res)?;
    Ok(regions_from_candidates(s, &cands, p, &RegionSettings::default())?.capacity)
}

/// Rate-profile objective: the largest `R` with `R_first >= alpha R` and `R_last >= (1 - alpha) R`.
fn profile_value(r: RatePair, order: DecodingOrder, alpha: f64) -> f64 {
    let [first, last] = order.sequence();
    let rates = [r.r1, r.r2];
    if alpha >= 1.0 {
        rates[first]
    } else if alpha <= 0.0 {
        rates[last]
    } else {
        (rates[first] / alpha).min(rates[last] / (1.0 - alpha))
    }
}

/// One point of the rate-profile boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub alpha: f64,
    pub order: DecodingOrder,
    pub x: Vec<f64>,
    pub rates: RatePair,
    /// Achieved profile sum rate `R`.
    pub value: f64,
}

/// Best rate pair for each profile factor and decoding order, by element-wise search over `m` PAs.
pub fn rate_profile_boundary(
    s: &Scenario,
    alphas: &[f64],
    order: DecodingOrder,
    m: usize,
    p: UserPowers,
    settings: &RegionSettings,
) -> Result<Vec<ProfilePoint>> {
    let (a, b) = user_span(s)?;
    let w = s.waveguides.first().ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?.clone();
    let noise = s.constants.noise_power;
    let starts: Vec<Vec<f64>> = linspace(a.min(b), a.max(b), 101)
        .into_iter()
        .chain([a, b])
        .map(|c| centered_array(c, m, &w))
        .collect::<Result<_>>()?;
    let results = par::map_slice(settings.exec, alphas, |&alpha| -> Result<ProfilePoint> {
        let rates = |x: &[f64]| uplink_gains(s, x).map(|g| sic_rates(g, p, noise, order));
        let f = |x: &[f64]| rates(x).map_or(f64::NEG_INFINITY, |r| profile_value(r, order, alpha));
        let mut best: Option<(f64, Vec<f64>)> = None;
        // Searches from both user clusters and the best scanned center.
        let mut seeds = vec![starts[starts.len() - 2].clone(), starts[starts.len() - 1].clone()];
        let scanned = starts
            .iter()
            .max_by(|u, v| f(u).total_cmp(&f(v)))
            .expect("non-empty")
            .clone();
        seeds.push(scanned);
        for x0 in seeds {
            let out = elementwise_maximize(&f, x0, &w, &settings.search)?;
            if best.as_ref().map_or(true, |(v, _)| out.value > *v) {
                best = Some((out.value, out.x[0].clone()));
            }
        }
        let (value, x) = best.expect("three seeds");
        Ok(ProfilePoint {
            alpha,
            order,
            rates: rates(&x)?,
            x,
            value,
        })
    });
    results.into_iter().collect()
}

/// Rate regions sharing one set of candidate configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub capacity: RateRegion,
    pub fdma: RateRegion,
    pub tdma: RateRegion,
    pub candidates: Vec<Vec<f64>>,
}

/// Capacity, FDMA and TDMA regions over the given PA configurations.
///
/// Sharing the candidates makes TDMA within FDMA within capacity hold by
/// construction: each FDMA point lies in its configuration's pentagon and
/// the TDMA corners are FDMA points with the whole band on one user.
pub fn regions_from_candidates(
    s: &Scenario,
    candidates: &[Vec<f64>],
    p: UserPowers,
    settings: &RegionSettings,
) -> Result<RegionSet> {
    let noise = s.constants.noise_power;
    let gains: Vec<[f64; 2]> = par::map_slice(settings.exec, candidates, |x| uplink_gains(s, x))
        .into_iter()
        .collect::<Result<_>>()?;
    let cap: Vec<RatePair> = gains.iter().flat_map(|&g| pentagon_vertices(g, p, noise)).collect();
    let bands = linspace(0.0, 1.0, settings.bandwidth_points.max(2));
    let fdma: Vec<RatePair> = par::map_slice(settings.exec, &gains, |&g| {
        bands.iter().map(|&b| fdma_rates(g, p, noise, b)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let c1 = gains.iter().map(|g| log2_1p(p.p1 * g[0] / noise)).fold(0.0, f64::max);
    let c2 = gains.iter().map(|g| log2_1p(p.p2 * g[1] / noise)).fold(0.0, f64::max);
    Ok(RegionSet {
        capacity: RateRegion::from_points(cap),
        fdma: RateRegion::from_points(fdma),
        tdma: RateRegion::from_points(vec![RatePair::new(c1, 0.0), RatePair::new(0.0, c2)]),
        candidates: candidates.to_vec(),
    })
}

/// Candidate configurations for `m` PAs: rate-profile optima for both
/// decoding orders, per-user optima and, for one PA, the position grid.
pub fn uplink_candidates(s: &Scenario, m: usize, p: UserPowers, settings: &RegionSettings) -> Result<Vec<Vec<f64>>> {
    let mut cands = Vec::new();
    if m == 1 {
        cands.extend(single_pinch_grid(s, settings.grid_res)?);
    }
    let alphas = linspace(0.0, 1.0, settings.alpha_points.max(2));
    for order in [DecodingOrder::TwoThenOne, DecodingOrder::OneThenTwo] {
        for pt in rate_profile_boundary(s, &alphas, order, m, p, settings)? {
            cands.push(pt.x);
        }
    }
    Ok(cands)
}

/// Uplink capacity, FDMA and TDMA regions with `m` PAs.
pub fn uplink_regions(s: &Scenario, m: usize, p: UserPowers, settings: &RegionSettings) -> Result<RegionSet> {
    let cands = uplink_candidates(s, m, p, settings)?;
    regions_from_candidates(s, &cands, p, settings)
}

/// Orthogonal multiple access scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmaMode {
    Tdma,
    Fdma,
}

pub fn oma_regions(s: &Scenario, m: usize, mode: OmaMode, p: UserPowers, settings: &RegionSettings) -> Result<RateRegion> {
    let set = uplink_regions(s, m, p, settings)?;
    Ok(match mode {
        OmaMode::Tdma => set.tdma,
        OmaMode::Fdma => set.fdma,
    })
}

/// Regions of a conventional antenna fixed at `x_fixed` above the waveguide axis.
pub fn fixed_antenna_regions(s: &Scenario, x_fixed: f64, p: UserPowers, settings: &RegionSettings) -> Result<RegionSet> {
    regions_from_candidates(s, &[vec![x_fixed]], p, settings)
}

/// Downlink regions with total power `p_total`, the union of the dual
/// uplink regions over power splits, all evaluated on `candidates`.
pub fn downlink_regions(
    s: &Scenario,
    candidates: &[Vec<f64>],
    p_total: f64,
    splits: &[f64],
    settings: &RegionSettings,
) -> Result<RegionSet> {
    let mut cap = Vec::new();
    let mut fdma = Vec::new();
    let mut tdma = Vec::new();
    for &beta in splits {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("power split {beta}")));
        }
        let p = UserPowers::new(beta * p_total, (1.0 - beta) * p_total)?;
        let set = regions_from_candidates(s, candidates, p, settings)?;
        cap.extend(set.capacity.hull);
        fdma.extend(set.fdma.hull);
        tdma.extend(set.tdma.hull);
    }
    Ok(RegionSet {
        capacity: RateRegion::from_points(cap),
        fdma: RateRegion::from_points(fdma),
        tdma: RateRegion::from_points(tdma),
        candidates: candidates.to_vec(),
    })
}

/// Downlink regions for `m` PAs using the uplink candidates at an equal split.
pub fn downlink_region(s: &Scenario, m: usize, p_total: f64, settings: &RegionSettings) -> Result<RegionSet> {
    let cands = uplink_candidates(s, m, UserPowers::new(0.5 * p_total, 0.5 * p_total)?, settings)?;
    let splits = linspace(0.0, 1.0, settings.split_points.max(1));
    downlink_regions(s, &cands, p_total, &splits, settings)
}
