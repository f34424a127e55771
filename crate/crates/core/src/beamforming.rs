//! Pinching beamforming: element-wise position search, the closed-form
//! power approximation and scaling law, sub- and fully-connected joint
//! designs, and the waveguide switching, division and multiplexing protocols.

use std::cell::RefCell;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{is_feasible, project_feasible, ActivationMode};
use crate::channel::{effective_row, single_waveguide_gain, PinchConfig};
use crate::geometry::{lateral_offset, RfConstants, Scenario, UserPosition, Waveguide};
use crate::numerics::{golden_max, grid_max, GridScan};
use crate::par::{self, Execution};
use crate::{Complex64, Error, Result};

type C = Complex64;

/// Element-wise search controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    /// Grid points per antenna and pass.
    pub grid_points: usize,
    /// Coarse-to-fine passes.
    pub passes: usize,
    /// Window shrink factor between passes.
    pub zoom: f64,
    /// Permutation of the flattened antenna indices; ascending if `None`.
    pub order: Option<Vec<usize>>,
    /// Stop when a sweep improves the objective by less than this fraction.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            grid_points: 400,
            passes: 2,
            zoom: 10.0,
            order: None,
            tolerance: 1e-9,
            max_sweeps: 50,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 || self.passes < 1 || !(self.tolerance > 0.0) || !(self.zoom > 1.0) {
            return Err(Error::InvalidParameter(format!("search settings {self:?}")));
        }
        Ok(())
    }

    fn scan(&self) -> GridScan {
        GridScan {
            points: self.grid_points,
            passes: self.passes,
            zoom: self.zoom,
        }
    }
}

/// Result of a coordinate search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Positions per waveguide.
    pub x: Vec<Vec<f64>>,
    pub value: f64,
    /// Objective before the first sweep and after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn window(x: &[f64], m: usize, w: &Waveguide) -> (f64, f64) {
    let lo = if m > 0 { x[m - 1] + w.min_spacing } else { 0.0 };
    let hi = if m + 1 < x.len() { x[m + 1] - w.min_spacing } else { w.length };
    (lo, hi)
}

fn line_search<G: Fn(f64) -> f64>(phi: &G, cur: f64, lo: f64, hi: f64, s: &SearchSettings) -> f64 {
    let scan = s.scan();
    let step = (hi - lo) / (s.grid_points - 1) as f64;
    let mut best = (cur, phi(cur));
    for (a, b) in [(lo, hi), ((cur - step).max(lo), (cur + step).min(hi))] {
        if b <= a {
            continue;
        }
        let (t, v) = grid_max(phi, a, b, scan);
        if v > best.1 || (v == best.1 && t < best.0) {
            best = (t, v);
        }
    }
    let fine = step / s.zoom.powi(s.passes as i32 - 1);
    let (a, b) = ((best.0 - fine).max(lo), (best.0 + fine).min(hi));
    if b > a {
        let (t, v) = golden_max(phi, a, b, (b - a) * 1e-9);
        if v > best.1 {
            best = (t, v);
        }
    }
    best.0
}

/// Coordinate ascent over PA positions on several waveguides.
///
/// `coord(x, n, m)` returns the objective as a function of antenna `m` on
/// waveguide `n` with all other positions held at `x`. A move is kept only
/// if it strictly increases `value`, so the trace is non-decreasing.
pub fn coordinate_search<V, F, G>(
    x0: Vec<Vec<f64>>,
    waveguides: &[Waveguide],
    settings: &SearchSettings,
    value: V,
    coord: F,
) -> Result<SearchOutcome>
where
    V: Fn(&[Vec<f64>]) -> f64,
    F: Fn(&[Vec<f64>], usize, usize) -> G,
    G: Fn(f64) -> f64,
{
    settings.validate()?;
    if x0.len() != waveguides.len() {
        return Err(Error::DimensionMismatch {
            expected: waveguides.len(),
            got: x0.len(),
        });
    }
    let mut x = Vec::with_capacity(x0.len());
    for (xn, w) in x0.iter().zip(waveguides) {
        x.push(project_feasible(xn, w, ActivationMode::Continuous)?);
    }
    let coords: Vec<(usize, usize)> = x
        .iter()
        .enumerate()
        .flat_map(|(n, xn)| (0..xn.len()).map(move |m| (n, m)))
        .collect();
    let order: Vec<usize> = match &settings.order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..coords.len()).collect::<Vec<_>>() {
                return Err(Error::InvalidParameter("sweep order is not a permutation".into()));
            }
            o.clone()
        }
        None => (0..coords.len()).collect(),
    };
    let mut best = value(&x);
    let mut trace = vec![best];
    let mut converged = false;
    for _ in 0..settings.max_sweeps {
        let start = best;
        for &i in &order {
            let (n, m) = coords[i];
            let (lo, hi) = window(&x[n], m, &waveguides[n]);
            if hi <= lo {
                continue;
            }
            let cur = x[n][m];
            let t = {
                let phi = coord(&x, n, m);
                line_search(&phi, cur, lo, hi, settings)
            };
            if t == cur {
                continue;
            }
            x[n][m] = t;
            let v = value(&x);
            if v > best {
                best = v;
            } else {
                x[n][m] = cur;
            }
        }
        trace.push(best);
        if best - start <= settings.tolerance * start.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(SearchOutcome {
        x,
        value: best,
        trace,
        converged,
    })
}

/// Coordinate ascent for an arbitrary objective on one waveguide.
pub fn elementwise_maximize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: Vec<f64>,
    w: &Waveguide,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    let scratch = RefCell::new(x0.clone());
    coordinate_search(
        vec![x0],
        std::slice::from_ref(w),
        settings,
        |x| f(&x[0]),
        |x, _, m| {
            scratch.borrow_mut().clone_from(&x[0]);
            let s = &scratch;
            move |t: f64| {
                let mut y = s.borrow_mut();
                y[m] = t;
                f(&y)
            }
        },
    )
}

fn user_at(s: &Scenario, k: usize) -> Result<&UserPosition> {
    s.users.get(k).ok_or(Error::DimensionMismatch {
        expected: s.users.len(),
        got: k + 1,
    })
}

fn waveguide_at(s: &Scenario, n: usize) -> Result<&Waveguide> {
    s.waveguides.get(n).ok_or(Error::DimensionMismatch {
        expected: s.waveguides.len(),
        got: n + 1,
    })
}

/// Received power `|h^H g|^2 P_t` from PAs at `x` on waveguide 0.
pub fn receive_power(x: &[f64], rho: &[f64], s: &Scenario, user: usize) -> Result<f64> {
    receive_power_on(s, 0, x, rho, user)
}

/// Received power from PAs at `x` on waveguide `n`.
pub fn receive_power_on(s: &Scenario, n: usize, x: &[f64], rho: &[f64], user: usize) -> Result<f64> {
    let g = single_waveguide_gain(x, rho, waveguide_at(s, n)?, user_at(s, user)?, &s.constants)?;
    Ok(g.norm_sqr() * s.constants.tx_power)
}

fn equal_rho(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Per-antenna contributions `eta sqrt(P) / r e^{-j psi}` for fast coordinate updates.
struct SingleLink<'a> {
    w: &'a Waveguide,
    u: &'a UserPosition,
    c: &'a RfConstants,
    amp: f64,
    zeta: f64,
}

impl<'a> SingleLink<'a> {
    fn new(w: &'a Waveguide, u: &'a UserPosition, c: &'a RfConstants, m: usize) -> Self {
        Self {
            w,
            u,
            c,
            amp: c.eta / (m as f64).sqrt(),
            zeta: lateral_offset(w, u),
        }
    }

    fn phase(&self, x: f64) -> f64 {
        let r = (x - self.u.x).hypot(self.zeta);
        self.c.wavenumber() * (r + self.c.n_eff * x)
    }

    fn term(&self, x: f64) -> C {
        let r = (x - self.u.x).hypot(self.zeta).max(crate::geometry::MIN_DISTANCE);
        C::from_polar(self.amp / r, -self.phase(x))
    }

    fn gain(&self, x: &[f64]) -> f64 {
        x.iter().map(|&t| self.term(t)).sum::<C>().norm_sqr() * self.c.tx_power
    }

    fn uniform(&self, m: usize) -> Result<Vec<f64>> {
        centered_array(self.u.x, m, self.w)
    }
}

/// `m` PAs at minimum spacing centered on `center`, shifted into range.
pub fn centered_array(center: f64, m: usize, w: &Waveguide) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..m)
        .map(|i| center + (i as f64 - (m as f64 - 1.0) / 2.0) * w.min_spacing)
        .collect();
    project_feasible(&raw, w, ActivationMode::Continuous)
}

/// Smallest/largest `x` beyond `from` whose total phase is congruent to `reference`.
fn aligned_position(link: &SingleLink, from: f64, reference: f64, forward: bool) -> f64 {
    let psi = |x: f64| link.phase(x);
    let k = (psi(from) - reference) / TAU;
    let target = reference + TAU * if forward { k.ceil() } else { k.floor() };
    let lambda = link.c.wavelength;
    let (mut a, mut b) = if forward { (from, from + lambda) } else { (from - lambda, from) };
    for _ in 0..100_000 {
        if forward && psi(b) < target {
            b += lambda;
        } else if !forward && psi(a) > target {
            a -= lambda;
        } else {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if psi(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    if forward {
        b
    } else {
        a
    }
}

/// Phase-aligned array grown outward from the user's projection.
///
/// Each antenna sits at the first position at least the minimum spacing
/// beyond its inner neighbour whose total phase matches the central
/// antenna. Returns the better of this and the plain uniform array.
pub fn position_refinement(s: &Scenario, user: usize, m: usize) -> Result<Vec<f64>> {
    position_refinement_on(s, 0, user, m)
}

pub fn position_refinement_on(s: &Scenario, n: usize, user: usize, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let w = waveguide_at(s, n)?;
    let u = user_at(s, user)?;
    let link = SingleLink::new(w, u, &s.constants, m);
    let uniform = link.uniform(m)?;
    let d = w.min_spacing;
    let r = (m - 1) / 2;
    let mut x = vec![0.0; m];
    x[r] = if m % 2 == 1 { u.x } else { u.x - 0.5 * d };
    let reference = link.phase(x[r]);
    for i in r + 1..m {
        x[i] = aligned_position(&link, x[i - 1] + d, reference, true);
    }
    for i in (0..r).rev() {
        x[i] = aligned_position(&link, x[i + 1] - d, reference, false);
    }
    if !is_feasible(&x, w, ActivationMode::Continuous).feasible {
        x = project_feasible(&x, w, ActivationMode::Continuous)?;
    }
    Ok(if link.gain(&x) >= link.gain(&uniform) { x } else { uniform })
}

/// Element-wise search for one user on waveguide 0, equal power split.
pub fn elementwise_search(
    s: &Scenario,
    user: usize,
    m: usize,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    elementwise_search_on(s, 0, user, m, settings)
}

pub fn elementwise_search_on(
    s: &Scenario,
    n: usize,
    user: usize,
    m: usize,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    let w = waveguide_at(s, n)?;
    let u = user_at(s, user)?;
    if m > 0 && (m - 1) as f64 * w.min_spacing > w.length * (1.0 + 1e-12) {
        return Err(Error::Infeasible {
            count: m,
            min_spacing: w.min_spacing,
            length: w.length,
        });
    }
    let link = SingleLink::new(w, u, &s.constants, m);
    let refined = position_refinement_on(s, n, user, m)?;
    let uniform = link.uniform(m)?;
    let x0 = if link.gain(&refined) >= link.gain(&uniform) { refined } else { uniform };
    let link = &link;
    coordinate_search(
        vec![x0],
        std::slice::from_ref(w),
        settings,
        |x| link.gain(&x[0]),
        |x, _, j| {
            let rest: C = x[0]
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &t)| link.term(t))
                .sum();
            move |t: f64| (rest + link.term(t)).norm_sqr() * link.c.tx_power
        },
    )
}

/// `ln^2(sqrt(1 + x^2) + x) / x`.
pub fn f_ub(x: f64) -> f64 {
    x.asinh().powi(2) / x
}

/// Closed-form approximation of the maximum received power.
pub fn max_power_approx(m: usize, min_spacing: f64, zeta: f64, eta: f64, p_t: f64) -> f64 {
    2.0 * eta * eta * p_t / (zeta * min_spacing) * f_ub(m as f64 * min_spacing / (2.0 * zeta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimalCount {
    /// `6.64 zeta / min_spacing` rounded to the nearest even integer.
    pub formula: usize,
    /// Even `M` maximizing [`max_power_approx`].
    pub enumerated: usize,
}

pub fn optimal_num_pas(zeta: f64, min_spacing: f64) -> Result<OptimalCount> {
    if !(zeta > 0.0 && min_spacing > 0.0) {
        return Err(Error::InvalidParameter("zeta and spacing must be positive".into()));
    }
    let v = 6.64 * zeta / min_spacing;
    let formula = (2.0 * (v / 2.0).round()).max(2.0) as usize;
    let top = 2 * (v.ceil() as usize).max(1);
    let enumerated = (1..=top / 2)
        .map(|h| 2 * h)
        .map(|m| (m, max_power_approx(m, min_spacing, zeta, 1.0, 1.0)))
        .fold((2, f64::NEG_INFINITY), |b, (m, p)| if p > b.1 { (m, p) } else { b })
        .0;
    Ok(OptimalCount { formula, enumerated })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub m: usize,
    pub p_opt: f64,
    pub p_approx: f64,
    /// `p_opt M / ln^2 M`.
    pub ratio: f64,
}

/// Single-user scenario with the user centered over a waveguide long enough for `m_max` PAs.
pub fn scaling_scenario(constants: RfConstants, zeta: f64, min_spacing: f64, m_max: usize) -> Result<Scenario> {
    let span = (m_max as f64 * 2.0 + 4.0) * min_spacing + 4.0 * zeta + 100.0 * constants.wavelength;
    let w = Waveguide::new(0.0, zeta, span, min_spacing)?;
    Scenario::new(constants, vec![w], vec![UserPosition::new(0.5 * span, 0.0, 0.0)])
}

/// Optimized and approximate maximum power over a list of PA counts.
pub fn scaling_law_curve(
    ms: &[usize],
    zeta: f64,
    min_spacing: f64,
    constants: RfConstants,
    exec: Execution,
) -> Result<Vec<ScalingPoint>> {
    par::map_slice(exec, ms, |&m| {
        let s = scaling_scenario(constants, zeta, min_spacing, m)?;
        let x = position_refinement(&s, 0, m)?;
        let p_opt = receive_power(&x, &equal_rho(m), &s, 0)?;
        let ln = (m as f64).ln();
        Ok(ScalingPoint {
            m,
            p_opt,
            p_approx: max_power_approx(m, min_spacing, zeta, constants.eta, constants.tx_power),
            ratio: if m > 1 { p_opt * m as f64 / (ln * ln) } else { f64::NAN },
        })
    })
    .into_iter()
    .collect()
}

/// Grid of received power over two PA positions on `[lo, hi]`; `NaN` where infeasible.
pub fn landscape_m2(s: &Scenario, user: usize, lo: f64, hi: f64, res: usize) -> Result<Vec<Vec<f64>>> {
    let w = waveguide_at(s, 0)?;
    let u = user_at(s, user)?;
    let link = SingleLink::new(w, u, &s.constants, 2);
    let grid = crate::numerics::linspace(lo, hi, res);
    Ok(grid
        .iter()
        .map(|&a| {
            grid.iter()
                .map(|&b| {
                    if b - a >= w.min_spacing {
                        link.gain(&[a, b])
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect())
}

/// Maximum-ratio transmission `sqrt(P_t) h^H / |h|` for a row `h`.
pub fn mrt(h_eff: &[C], p_t: f64) -> Result<Vec<C>> {
    let norm = h_eff.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroChannel);
    }
    Ok(h_eff.iter().map(|v| v.conj() * (p_t.sqrt() / norm)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubConnected {
    pub x: Vec<Vec<f64>>,
    pub w: Vec<C>,
    pub received_power: f64,
}

/// Per-waveguide position search followed by MRT across waveguides.
pub fn subconnected_optimize(
    s: &Scenario,
    user: usize,
    m: usize,
    settings: &SearchSettings,
) -> Result<SubConnected> {
    let x: Vec<Vec<f64>> = (0..s.waveguides.len())
        .map(|n| elementwise_search_on(s, n, user, m, settings).map(|o| o.x[0].clone()))
        .collect::<Result<_>>()?;
    let cfg = PinchConfig::equal_power(x.clone());
    let h = effective_row(s, &cfg, user)?;
    let w = mrt(&h, s.constants.tx_power)?;
    let received_power = h.iter().map(|v| v.norm_sqr()).sum::<f64>() * s.constants.tx_power;
    Ok(SubConnected { x, w, received_power })
}

/// Sum of per-waveguide closed-form approximations.
pub fn subconnected_approx(s: &Scenario, user: usize, m: usize) -> Result<f64> {
    let u = user_at(s, user)?;
    let c = &s.constants;
    Ok(s.waveguides
        .iter()
        .map(|w| max_power_approx(m, w.min_spacing, lateral_offset(w, u), c.eta, c.tx_power))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullyConnected {
    pub x: Vec<Vec<f64>>,
    /// `N x N_RF`, every entry of modulus `1 / sqrt(N)`.
    pub w_rf: DMatrix<C>,
    pub w_bb: Vec<C>,
    pub received_power: f64,
}

fn unit_phase(v: C, n: usize) -> C {
    let scale = 1.0 / (n as f64).sqrt();
    if v.norm() == 0.0 {
        C::new(scale, 0.0)
    } else {
        v / v.norm() * scale
    }
}

fn hybrid_power(h: &DVector<C>, w_rf: &DMatrix<C>, w_bb: &DVector<C>) -> f64 {
    (h.transpose() * w_rf * w_bb)[(0, 0)].norm_sqr()
}

/// Scales `w_bb` so both the radiated and the baseband power stay within `p_t`.
fn normalize_hybrid(w_rf: &DMatrix<C>, w_bb: &mut DVector<C>, p_t: f64) {
    let radiated = (w_rf * &*w_bb).norm_squared();
    let base = w_bb.norm_squared();
    let worst = radiated.max(base);
    if worst > 0.0 {
        *w_bb *= C::from((p_t / worst).sqrt());
    }
}

/// Alternating phase projection and least squares for `min |w_opt - W_RF w_BB|`.
fn hybrid_fit(w_opt: &DVector<C>, mut w_rf: DMatrix<C>, iters: usize) -> (DMatrix<C>, DVector<C>) {
    let n = w_rf.nrows();
    let ls = |w_rf: &DMatrix<C>| -> DVector<C> {
        w_rf.clone()
            .svd(true, true)
            .solve(w_opt, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(w_rf.ncols()))
    };
    let mut w_bb = ls(&w_rf);
    let mut last = f64::INFINITY;
    for _ in 0..iters {
        for j in 0..w_rf.ncols() {
            let mut resid = w_opt - &w_rf * &w_bb;
            resid += w_rf.column(j) * w_bb[j];
            for i in 0..n {
                w_rf[(i, j)] = unit_phase(resid[i] * w_bb[j].conj(), n);
            }
        }
        w_bb = ls(&w_rf);
        let err = (w_opt - &w_rf * &w_bb).norm();
        if (last - err).abs() <= 1e-13 * (1.0 + err) {
            break;
        }
        last = err;
    }
    (w_rf, w_bb)
}

/// Hybrid design approximating MRT with `n_rf` chains on the sub-connected positions.
///
/// Solutions for `1..=n_rf` chains are built in turn, each warm-started from
/// the previous one, so the received power is non-decreasing in `n_rf`.
pub fn fullyconnected_optimize(
    s: &Scenario,
    user: usize,
    m: usize,
    n_rf: usize,
    settings: &SearchSettings,
) -> Result<FullyConnected> {
    if n_rf == 0 {
        return Err(Error::InvalidParameter("need at least one RF chain".into()));
    }
    let sub = subconnected_optimize(s, user, m, settings)?;
    let cfg = PinchConfig::equal_power(sub.x.clone());
    let h = DVector::from_vec(effective_row(s, &cfg, user)?);
    let n = h.len();
    let p_t = s.constants.tx_power;
    let w_opt = DVector::from_vec(mrt(h.as_slice(), p_t)?);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best: Option<(DMatrix<C>, DVector<C>, f64)> = None;
    for chains in 1..=n_rf {
        let col = |rng: &mut ChaCha8Rng| {
            DVector::from_fn(n, |_, _| unit_phase(C::from_polar(1.0, rng.gen::<f64>() * TAU), n))
        };
        let init = match &best {
            None => DMatrix::from_fn(n, 1, |i, _| unit_phase(w_opt[i], n)),
            Some((prev, _, _)) => {
                let extra = col(&mut rng);
                DMatrix::from_fn(n, chains, |i, j| if j < chains - 1 { prev[(i, j)] } else { extra[i] })
            }
        };
        let (mut w_rf, mut w_bb) = hybrid_fit(&w_opt, init.clone(), 200);
        normalize_hybrid(&w_rf, &mut w_bb, p_t);
        let mut power = hybrid_power(&h, &w_rf, &w_bb);
        if chains >= n {
            // A scaled DFT block is unitary, so it carries w_opt exactly.
            let dft = DMatrix::from_fn(n, chains, |i, j| {
                if j < n {
                    C::from_polar(1.0 / (n as f64).sqrt(), -TAU * (i * j) as f64 / n as f64)
                } else {
                    init[(i, j)]
                }
            });
            let mut bb = DVector::zeros(chains);
            bb.rows_mut(0, n).copy_from(&(dft.columns(0, n).adjoint() * &w_opt));
            normalize_hybrid(&dft, &mut bb, p_t);
            let p = hybrid_power(&h, &dft, &bb);
            if p > power {
                (w_rf, w_bb, power) = (dft, bb, p);
            }
        }
        let candidate = match best.take() {
            Some((prev_rf, prev_bb, prev_p)) if prev_p >= power => {
                // Embed the previous design with an idle extra chain.
                let mut bb = DVector::zeros(chains);
                bb.rows_mut(0, chains - 1).copy_from(&prev_bb);
                (init, bb, prev_p.max(hybrid_power(&h, &prev_rf, &prev_bb)))
            }
            _ => (w_rf, w_bb, power),
        };
        best = Some(candidate);
    }
    let (w_rf, w_bb, _) = best.expect("n_rf >= 1");
    let received_power = hybrid_power(&h, &w_rf, &w_bb);
    Ok(FullyConnected {
        x: sub.x,
        w_rf,
        w_bb: w_bb.iter().copied().collect(),
        received_power,
    })
}

/// Multi-user protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Time-shared single-user service.
    Switching,
    /// One user per waveguide.
    Division,
    /// All users on every waveguide.
    Multiplexing,
}

/// Linear precoder used with waveguide multiplexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precoder {
    Mrt,
    Zf,
    Mmse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiUserOutcome {
    pub x: Vec<Vec<f64>>,
    /// Column `k` is user `k`'s transmit vector (N entries). For division
    /// this is diagonal with `sqrt(nu_k)` entries.
    pub w: DMatrix<C>,
    pub wsr: f64,
    /// Objective after each outer iteration.
    pub trace: Vec<f64>,
    /// Winning precoder for multiplexing.
    pub precoder: Option<Precoder>,
    /// Precoders skipped for this instance.
    pub skipped: Vec<Precoder>,
}

fn check_weights(s: &Scenario, weights: &[f64]) -> Result<()> {
    if weights.len() != s.users.len() {
        return Err(Error::DimensionMismatch {
            expected: s.users.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    Ok(())
}

/// `K x N` matrix of effective rows `h_k^H G`.
pub fn effective_matrix(s: &Scenario, x: &[Vec<f64>]) -> Result<DMatrix<C>> {
    let cfg = PinchConfig::equal_power(x.to_vec());
    let rows: Vec<Vec<C>> = (0..s.users.len())
        .map(|k| effective_row(s, &cfg, k))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(s.users.len(), x.len(), |k, n| rows[k][n]))
}

/// Waveguide-switching weighted sum rate with per-user MRT.
pub fn ws_objective(s: &Scenario, x: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let h = effective_matrix(s, x)?;
    let k = s.users.len() as f64;
    let c = &s.constants;
    Ok((0..h.nrows())
        .map(|i| {
            let g = h.row(i).iter().map(|v| v.norm_sqr()).sum::<f64>();
            weights[i] / k * (1.0 + c.tx_power * g / c.noise_power).log2()
        })
        .sum())
}

/// Waveguide-division weighted sum rate for powers `nu`.
pub fn wd_objective(s: &Scenario, x: &[Vec<f64>], nu: &[f64], weights: &[f64]) -> Result<f64> {
    let h = effective_matrix(s, x)?;
    Ok(wd_rate(&h, nu, weights, s.constants.noise_power))
}

fn wd_rate(h: &DMatrix<C>, nu: &[f64], weights: &[f64], noise: f64) -> f64 {
    (0..h.nrows())
        .map(|k| {
            let signal = h[(k, k)].norm_sqr() * nu[k];
            let interference: f64 = (0..h.ncols())
                .filter(|&i| i != k)
                .map(|i| h[(k, i)].norm_sqr() * nu[i])
                .sum();
            weights[k] * (1.0 + signal / (interference + noise)).log2()
        })
        .sum()
}

/// Waveguide-multiplexing weighted sum rate for precoder columns `w`.
pub fn wm_objective(s: &Scenario, x: &[Vec<f64>], w: &DMatrix<C>, weights: &[f64]) -> Result<f64> {
    let h = effective_matrix(s, x)?;
    Ok(wm_rate(&h, w, weights, s.constants.noise_power))
}

fn wm_rate(h: &DMatrix<C>, w: &DMatrix<C>, weights: &[f64], noise: f64) -> f64 {
    let hw = h * w;
    (0..h.nrows())
        .map(|k| {
            let signal = hw[(k, k)].norm_sqr();
            let interference: f64 = (0..hw.ncols()).filter(|&i| i != k).map(|i| hw[(k, i)].norm_sqr()).sum();
            weights[k] * (1.0 + signal / (interference + noise)).log2()
        })
        .sum()
}

/// Heuristic precoder on the effective channel, scaled to total power `p_t`.
pub fn precoder(h: &DMatrix<C>, kind: Precoder, p_t: f64, noise: f64) -> Option<DMatrix<C>> {
    let hh = h.adjoint();
    let w = match kind {
        Precoder::Mrt => hh,
        Precoder::Zf => {
            if h.nrows() > h.ncols() {
                return None;
            }
            let gram = h * &hh;
            &hh * gram.try_inverse()?
        }
        Precoder::Mmse => {
            let k = h.nrows() as f64;
            let reg = DMatrix::<C>::identity(h.nrows(), h.nrows()) * C::from(k * noise / p_t);
            &hh * (h * &hh + reg).try_inverse()?
        }
    };
    let f = w.norm();
    if !(f > 0.0 && f.is_finite()) {
        return None;
    }
    Some(w * C::from(p_t.sqrt() / f))
}

fn initial_positions(s: &Scenario, m: usize, centers: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    centers
        .iter()
        .map(|&c| s.waveguides.iter().map(|w| centered_array(c, m, w)).collect())
        .collect()
}

fn user_centers(s: &Scenario) -> Vec<f64> {
    let mut c: Vec<f64> = s.users.iter().map(|u| u.x).collect();
    c.push(c.iter().sum::<f64>() / c.len().max(1) as f64);
    c
}

fn search_joint<V: Fn(&[Vec<f64>]) -> f64>(
    s: &Scenario,
    x0: Vec<Vec<f64>>,
    settings: &SearchSettings,
    value: V,
) -> Result<SearchOutcome> {
    let scratch = RefCell::new(x0.clone());
    let value = &value;
    coordinate_search(x0, &s.waveguides, settings, value, |x, n, m| {
        scratch.borrow_mut().clone_from_slice(x);
        let s = &scratch;
        move |t: f64| {
            let mut y = s.borrow_mut();
            y[n][m] = t;
            value(&y)
        }
    })
}

fn best_start<V: Fn(&[Vec<f64>]) -> f64>(starts: Vec<Vec<Vec<f64>>>, value: V) -> Vec<Vec<f64>> {
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for x in starts {
        let v = value(&x);
        if best.as_ref().map_or(true, |(b, _)| v > *b) {
            best = Some((v, x));
        }
    }
    best.expect("at least one start").1
}

/// Waveguide switching: shared positions, per-user MRT, 1/K time shares.
pub fn ws_wsr(s: &Scenario, m: usize, weights: &[f64], settings: &SearchSettings) -> Result<MultiUserOutcome> {
    check_weights(s, weights)?;
    let value = |x: &[Vec<f64>]| ws_objective(s, x, weights).unwrap_or(f64::NEG_INFINITY);
    let x0 = best_start(initial_positions(s, m, &user_centers(s))?, value);
    let out = search_joint(s, x0, settings, value)?;
    let h = effective_matrix(s, &out.x)?;
    let p_t = s.constants.tx_power;
    let cols: Vec<Vec<C>> = (0..h.nrows())
        .map(|k| mrt(&h.row(k).iter().copied().collect::<Vec<_>>(), p_t))
        .collect::<Result<_>>()?;
    let w = DMatrix::from_fn(h.ncols(), h.nrows(), |n, k| cols[k][n]);
    Ok(MultiUserOutcome {
        x: out.x,
        w,
        wsr: out.value,
        trace: out.trace,
        precoder: None,
        skipped: Vec::new(),
    })
}

/// Power split keeping user `k` at `t` and scaling the others to fill `p_t - t`.
fn reshape_powers(nu: &[f64], k: usize, t: f64, p_t: f64) -> Vec<f64> {
    let others: f64 = nu.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum();
    let n = nu.len();
    nu.iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == k {
                t
            } else if others > 0.0 {
                v * (p_t - t) / others
            } else {
                (p_t - t) / (n - 1) as f64
            }
        })
        .collect()
}

/// One pass of per-user power updates. Each update maximizes along the
/// curve that moves user `k`'s power and rescales the rest, locating the
/// stationary point by bisection on the numerical derivative.
fn wd_power_step(h: &DMatrix<C>, nu: &mut Vec<f64>, weights: &[f64], noise: f64, p_t: f64) {
    let k_users = nu.len();
    if k_users == 1 {
        nu[0] = p_t;
        return;
    }
    for k in 0..k_users {
        let g = |t: f64| wd_rate(h, &reshape_powers(nu, k, t, p_t), weights, noise);
        let grid = crate::numerics::linspace(0.0, p_t, 65);
        let (i_best, _) = grid
            .iter()
            .enumerate()
            .map(|(i, &t)| (i, g(t)))
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        let (mut a, mut b) = (grid[i_best.saturating_sub(1)], grid[(i_best + 1).min(64)]);
        let slope = |t: f64| {
            let e = 1e-7 * p_t;
            g((t + e).min(p_t)) - g((t - e).max(0.0))
        };
        let mut t = grid[i_best];
        if slope(a) > 0.0 && slope(b) < 0.0 {
            while b - a > 1e-8 * p_t {
                let mid = 0.5 * (a + b);
                if slope(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            t = 0.5 * (a + b);
        }
        let candidate = reshape_powers(nu, k, t, p_t);
        if wd_rate(h, &candidate, weights, noise) > wd_rate(h, nu, weights, noise) {
            *nu = candidate;
        }
    }
}

/// Waveguide division: user `k` on waveguide `k`, alternating power and position updates.
pub fn wd_wsr(s: &Scenario, m: usize, weights: &[f64], settings: &SearchSettings) -> Result<MultiUserOutcome> {
    check_weights(s, weights)?;
    let k_users = s.users.len();
    if k_users != s.waveguides.len() {
        return Err(Error::Unsupported(format!(
            "waveguide division needs one waveguide per user, got K={} N={}",
            k_users,
            s.waveguides.len()
        )));
    }
    let (p_t, noise) = (s.constants.tx_power, s.constants.noise_power);
    let mut x: Vec<Vec<f64>> = (0..k_users)
        .map(|n| elementwise_search_on(s, n, n, m, settings).map(|o| o.x[0].clone()))
        .collect::<Result<_>>()?;
    let mut nu = vec![p_t / k_users as f64; k_users];
    let mut h = effective_matrix(s, &x)?;
    let mut best = wd_rate(&h, &nu, weights, noise);
    let mut trace = vec![best];
    for _ in 0..20 {
        let start = best;
        wd_power_step(&h, &mut nu, weights, noise, p_t);
        let nu_fixed = nu.clone();
        let out = search_joint(s, x.clone(), settings, |x| {
            wd_objective(s, x, &nu_fixed, weights).unwrap_or(f64::NEG_INFINITY)
        })?;
        x = out.x;
        h = effective_matrix(s, &x)?;
        best = wd_rate(&h, &nu, weights, noise);
        trace.push(best);
        if best - start <= settings.tolerance * start.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let w = DMatrix::from_fn(k_users, k_users, |n, k| if n == k { C::from(nu[k].sqrt()) } else { C::from(0.0) });
    Ok(MultiUserOutcome {
        x,
        w,
        wsr: best,
        trace,
        precoder: None,
        skipped: Vec::new(),
    })
}

/// Waveguide multiplexing: position search around MRT, ZF and MMSE, best reported.
pub fn wm_wsr(s: &Scenario, m: usize, weights: &[f64], settings: &SearchSettings) -> Result<MultiUserOutcome> {
    check_weights(s, weights)?;
    let (p_t, noise) = (s.constants.tx_power, s.constants.noise_power);
    let starts = initial_positions(s, m, &user_centers(s))?;
    let mut best: Option<MultiUserOutcome> = None;
    let mut skipped = Vec::new();
    for kind in [Precoder::Mrt, Precoder::Zf, Precoder::Mmse] {
        if kind == Precoder::Zf && s.users.len() > s.waveguides.len() {
            skipped.push(kind);
            continue;
        }
        let value = |x: &[Vec<f64>]| {
            let Ok(h) = effective_matrix(s, x) else { return f64::NEG_INFINITY };
            match precoder(&h, kind, p_t, noise) {
                Some(w) => wm_rate(&h, &w, weights, noise),
                None => f64::NEG_INFINITY,
            }
        };
        let x0 = best_start(starts.clone(), value);
        if value(&x0) == f64::NEG_INFINITY {
            skipped.push(kind);
            continue;
        }
        let out = search_joint(s, x0, settings, value)?;
        let h = effective_matrix(s, &out.x)?;
        let Some(w) = precoder(&h, kind, p_t, noise) else {
            skipped.push(kind);
            continue;
        };
        if best.as_ref().map_or(true, |b| out.value > b.wsr) {
            best = Some(MultiUserOutcome {
                x: out.x,
                w,
                wsr: out.value,
                trace: out.trace,
                precoder: Some(kind),
                skipped: Vec::new(),
            });
        }
    }
    let mut out = best.ok_or(Error::ZeroChannel)?;
    out.skipped = skipped;
    Ok(out)
}
