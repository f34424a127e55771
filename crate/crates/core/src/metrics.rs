//! Stochastic-geometry metrics for a single-pinch PASS versus a fixed antenna.
//!
//! Users are uniform on a rectangle centered at the origin. The waveguide runs
//! along `x` at height `z_G`; the PA sits at the user's projection, so the
//! PASS link distance is `sqrt(y^2 + z_G^2)`. The fixed antenna sits above the
//! origin. Here `eta` is the power gain `(lambda / 4 pi)^2`.

use rand::Rng;

use crate::mc::{self, McSettings, MeanEstimate, Proportion};
use crate::numerics::{adaptive_simpson, integrate_2d};
use crate::{Error, Result};

const ERGODIC_TOL: f64 = 1e-9;
const AREA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceRegion {
    /// Side along the waveguide, m.
    pub dx: f64,
    /// Side across the waveguide, m.
    pub dy: f64,
}

impl ServiceRegion {
    pub fn new(dx: f64, dy: f64) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "region sides must be positive, got {dx} x {dy}"
            )));
        }
        Ok(Self { dx, dy })
    }

    pub fn square(d: f64) -> Result<Self> {
        Self::new(d, d)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        (
            (rng.gen::<f64>() - 0.5) * self.dx,
            (rng.gen::<f64>() - 0.5) * self.dy,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockageModel {
    /// LoS survives with probability `exp(-beta r)`.
    pub beta: f64,
}

impl BlockageModel {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { beta })
    }

    fn los_probability(&self, r: f64) -> f64 {
        (-self.beta * r).exp()
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn check_gain(snr: f64, eta: f64) -> Result<()> {
    if snr >= 0.0 && snr.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "need snr >= 0 and eta > 0, got {snr}, {eta}"
        )))
    }
}

/// Average rate of PASS over `y ~ U[-D/2, D/2]`.
pub fn ergodic_rate_pass(d: f64, z_g: f64, snr: f64, eta: f64) -> Result<f64> {
    check_positive("D", d)?;
    check_positive("z_G", z_g)?;
    check_gain(snr, eta)?;
    let g = snr * eta;
    let f = |y: f64| (g / (y * y + z_g * z_g)).ln_1p() / std::f64::consts::LN_2;
    Ok(adaptive_simpson(&f, -0.5 * d, 0.5 * d, ERGODIC_TOL * d) / d)
}

/// Average rate of a fixed antenna over the `D x D` square.
pub fn ergodic_rate_fixed(d: f64, z_g: f64, snr: f64, eta: f64) -> Result<f64> {
    check_positive("D", d)?;
    check_positive("z_G", z_g)?;
    check_gain(snr, eta)?;
    let g = snr * eta;
    let f = |x: f64, y: f64| (g / (x * x + y * y + z_g * z_g)).ln_1p() / std::f64::consts::LN_2;
    let h = 0.5 * d;
    // Even in both coordinates: integrate one quadrant.
    let quarter = integrate_2d(&f, (0.0, h), (0.0, h), AREA_TOL * h * h);
    Ok(quarter / (h * h))
}

/// Monte Carlo counterpart of [`ergodic_rate_pass`].
pub fn ergodic_rate_pass_mc(d: f64, z_g: f64, snr: f64, eta: f64, mc: &McSettings) -> MeanEstimate {
    mc::mean(mc, |rng| {
        let y = (rng.gen::<f64>() - 0.5) * d;
        (1.0 + snr * eta / (y * y + z_g * z_g)).log2()
    })
}

/// Monte Carlo counterpart of [`ergodic_rate_fixed`].
pub fn ergodic_rate_fixed_mc(d: f64, z_g: f64, snr: f64, eta: f64, mc: &McSettings) -> MeanEstimate {
    mc::mean(mc, |rng| {
        let x = (rng.gen::<f64>() - 0.5) * d;
        let y = (rng.gen::<f64>() - 0.5) * d;
        (1.0 + snr * eta / (x * x + y * y + z_g * z_g)).log2()
    })
}

/// High-SNR lower bound on `R_PASS - R_CON` as a function of `D / z_G`.
pub fn high_snr_gap_bound(d: f64, z_g: f64) -> Result<f64> {
    check_positive("D", d)?;
    check_positive("z_G", z_g)?;
    let u = 0.5 * d / z_g;
    let ln2 = std::f64::consts::LN_2;
    if u < 0.05 {
        let u2 = u * u;
        return Ok(u2 * (1.0 / 6.0 - u2 / 15.0 + u2 * u2 / 28.0) / ln2);
    }
    Ok((1.0 - 2.0 * u.atan() / u + (u * u).ln_1p() / (u * u)) / ln2)
}

/// Closed-form PASS coverage `Pr(snr eta / (y^2 + z_G^2) > gamma0)`.
pub fn coverage_pass(region: &ServiceRegion, z_g: f64, snr: f64, eta: f64, gamma0: f64) -> Result<f64> {
    check_positive("z_G", z_g)?;
    check_positive("gamma0", gamma0)?;
    check_gain(snr, eta)?;
    let reach = snr * eta / gamma0 - z_g * z_g;
    if reach <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * reach.sqrt()).min(region.dy) / region.dy)
}

/// Estimate with a Wilson 99% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McProbability {
    pub estimate: f64,
    pub ci: (f64, f64),
    pub trials: u64,
}

impl From<Proportion> for McProbability {
    fn from(p: Proportion) -> Self {
        Self {
            estimate: p.estimate(),
            ci: p.wilson99(),
            trials: p.trials,
        }
    }
}

/// Monte Carlo PASS coverage.
pub fn coverage_pass_mc(
    region: &ServiceRegion,
    z_g: f64,
    snr: f64,
    eta: f64,
    gamma0: f64,
    mc: &McSettings,
) -> McProbability {
    mc::count(mc, |rng| {
        let (_, y) = region.sample(rng);
        snr * eta / (y * y + z_g * z_g) > gamma0
    })
    .into()
}

/// Fixed-antenna coverage. No closed form is known, so this is Monte Carlo only.
pub fn coverage_fixed(
    region: &ServiceRegion,
    z_g: f64,
    snr: f64,
    eta: f64,
    gamma0: f64,
    mc: &McSettings,
) -> Result<McProbability> {
    check_positive("z_G", z_g)?;
    check_positive("gamma0", gamma0)?;
    check_gain(snr, eta)?;
    Ok(mc::count(mc, |rng| {
        let (x, y) = region.sample(rng);
        snr * eta / (x * x + y * y + z_g * z_g) > gamma0
    })
    .into())
}

/// SNR-limited reach: outage-free iff the link distance is below `tau1`.
pub fn outage_radius(snr: f64, eta: f64, r_target: f64) -> f64 {
    (eta * snr / (2f64.powf(r_target) - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassOutage {
    pub exact: f64,
    /// `1 - f_b(-D_y/2, D_y/2)`.
    pub high_snr: f64,
    pub tau1: f64,
}

fn los_average(blockage: &BlockageModel, z_g: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let f = |y: f64| blockage.los_probability((y * y + z_g * z_g).sqrt());
    adaptive_simpson(&f, a, b, 1e-12 * (b - a).max(1.0))
}

/// PASS outage under LoS blockage.
pub fn outage_pass(
    region: &ServiceRegion,
    z_g: f64,
    snr: f64,
    eta: f64,
    blockage: &BlockageModel,
    r_target: f64,
) -> Result<PassOutage> {
    check_positive("z_G", z_g)?;
    check_positive("R_target", r_target)?;
    check_gain(snr, eta)?;
    let h = 0.5 * region.dy;
    let tau1 = outage_radius(snr, eta, r_target);
    // Both terms are even in y.
    let f_b = 2.0 * los_average(blockage, z_g, 0.0, h) / region.dy;
    let y0 = if tau1 > z_g {
        (tau1 * tau1 - z_g * z_g).sqrt().min(h)
    } else {
        0.0
    };
    let beyond = 2.0 * los_average(blockage, z_g, y0, h) / region.dy;
    Ok(PassOutage {
        exact: ((1.0 - f_b) + beyond).clamp(0.0, 1.0),
        high_snr: 1.0 - f_b,
        tau1,
    })
}

/// Simulates uniform users and Bernoulli LoS for PASS.
pub fn outage_pass_mc(
    region: &ServiceRegion,
    z_g: f64,
    snr: f64,
    eta: f64,
    blockage: &BlockageModel,
    r_target: f64,
    mc: &McSettings,
) -> McProbability {
    let tau1 = outage_radius(snr, eta, r_target);
    mc::count(mc, |rng| {
        let (_, y) = region.sample(rng);
        let r = (y * y + z_g * z_g).sqrt();
        let los = rng.gen::<f64>() < blockage.los_probability(r);
        !los || r >= tau1
    })
    .into()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedOutage {
    pub high_snr: f64,
    pub finite_snr: McProbability,
}

/// High-SNR fixed-antenna outage by quadrature.
pub fn outage_fixed_high_snr(region: &ServiceRegion, z_g: f64, blockage: &BlockageModel) -> Result<f64> {
    check_positive("z_G", z_g)?;
    let (hx, hy) = (0.5 * region.dx, 0.5 * region.dy);
    let f = |x: f64, y: f64| 1.0 - blockage.los_probability((x * x + y * y + z_g * z_g).sqrt());
    Ok(integrate_2d(&f, (0.0, hx), (0.0, hy), AREA_TOL * hx * hy) / (hx * hy))
}

/// Fixed-antenna outage: high-SNR quadrature plus finite-SNR Monte Carlo.
pub fn outage_fixed(
    region: &ServiceRegion,
    z_g: f64,
    snr: f64,
    eta: f64,
    blockage: &BlockageModel,
    r_target: f64,
    mc: &McSettings,
) -> Result<FixedOutage> {
    check_positive("R_target", r_target)?;
    check_gain(snr, eta)?;
    let high_snr = outage_fixed_high_snr(region, z_g, blockage)?;
    let tau1 = outage_radius(snr, eta, r_target);
    let finite_snr = mc::count(mc, |rng| {
        let (x, y) = region.sample(rng);
        let r = (x * x + y * y + z_g * z_g).sqrt();
        let los = rng.gen::<f64>() < blockage.los_probability(r);
        !los || r >= tau1
    })
    .into();
    Ok(FixedOutage {
        high_snr,
        finite_snr,
    })
}

/// High-SNR outage gap `Delta_b = P_CON - P_PASS`.
pub fn outage_gap(region: &ServiceRegion, z_g: f64, blockage: &BlockageModel) -> Result<f64> {
    check_positive("z_G", z_g)?;
    let h = 0.5 * region.dy;
    let pass = 1.0 - 2.0 * los_average(blockage, z_g, 0.0, h) / region.dy;
    Ok(outage_fixed_high_snr(region, z_g, blockage)? - pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const ETA: f64 = 6.332_573_977_646_111e-7; // (0.01 / 4 pi)^2

    #[test]
    fn ergodic_limits_and_symmetry() {
        assert!(ergodic_rate_pass(10.0, 3.0, 0.0, ETA).unwrap().abs() < 1e-15);
        let g = 1e7 * ETA;
        let f = |y: f64| (1.0 + g / (y * y + 9.0)).log2();
        let half = adaptive_simpson(&f, 0.0, 5.0, 1e-12);
        assert_relative_eq!(
            ergodic_rate_pass(10.0, 3.0, 1e7, ETA).unwrap(),
            2.0 * half / 10.0,
            epsilon = 1e-9
        );
        let point = (1.0 + g / 9.0).log2();
        assert_relative_eq!(ergodic_rate_fixed(1e-4, 3.0, 1e7, ETA).unwrap(), point, epsilon = 1e-8);
    }

    #[test]
    fn ergodic_matches_monte_carlo() {
        let mc = McSettings::new(1_000_000, 17);
        for (d, z, snr) in [(10.0, 3.0, 1e8), (4.0, 1.0, 1e6)] {
            let q = ergodic_rate_pass(d, z, snr, ETA).unwrap();
            let e = ergodic_rate_pass_mc(d, z, snr, ETA, &mc);
            assert!((q - e.mean).abs() < 3.0 * e.std_error, "{q} vs {e:?}");
            let q = ergodic_rate_fixed(d, z, snr, ETA).unwrap();
            let e = ergodic_rate_fixed_mc(d, z, snr, ETA, &mc);
            assert!((q - e.mean).abs() < 3.0 * e.std_error, "{q} vs {e:?}");
        }
    }

    #[test]
    fn gap_bound_series_and_closed_form() {
        for t in [1e-3, 1e-2, 0.09, 0.1, 0.11] {
            let u: f64 = t / 2.0;
            let direct = (1.0 - 2.0 * u.atan() / u + (u * u).ln_1p() / (u * u)) / std::f64::consts::LN_2;
            let b = high_snr_gap_bound(t, 1.0).unwrap();
            assert!(b > 0.0);
            if t >= 0.05 {
                assert_relative_eq!(b, direct, max_relative = 1e-6);
            }
        }
        assert!(high_snr_gap_bound(1e-6, 1.0).unwrap() < 1e-12);
        // D / z_G = 2: atan(1) = pi / 4.
        let expect = (1.0 - std::f64::consts::FRAC_PI_2 + 2f64.ln()) / std::f64::consts::LN_2;
        assert_relative_eq!(high_snr_gap_bound(6.0, 3.0).unwrap(), expect, epsilon = 1e-14);
        assert!(high_snr_gap_bound(20.0, 3.0).unwrap() >= high_snr_gap_bound(10.0, 3.0).unwrap());
    }

    #[test]
    fn gap_bound_against_rate_difference() {
        let (d, z) = (6.0, 3.0);
        let snr = 1e6 / ETA;
        let diff = ergodic_rate_pass(d, z, snr, ETA).unwrap() - ergodic_rate_fixed(d, z, snr, ETA).unwrap();
        let bound = high_snr_gap_bound(d, z).unwrap();
        assert!(diff >= bound - 1e-3, "{diff} < {bound}");
    }

    #[test]
    fn coverage_cases() {
        let r = ServiceRegion::new(10.0, 10.0).unwrap();
        assert_relative_eq!(coverage_pass(&r, 3.0, 1e8, ETA, 1e-12).unwrap(), 1.0);
        // snr eta / gamma0 < z^2.
        assert_eq!(coverage_pass(&r, 3.0, 1.0, ETA, 1.0).unwrap(), 0.0);
        let snr = 1e8;
        let gamma0 = snr * ETA / 13.0; // reach 2 m
        assert_relative_eq!(coverage_pass(&r, 3.0, snr, ETA, gamma0).unwrap(), 0.4, epsilon = 1e-12);
        let mc = McSettings::new(1_000_000, 3);
        let est = coverage_pass_mc(&r, 3.0, snr, ETA, gamma0, &mc);
        assert!(est.ci.0 <= 0.4 && 0.4 <= est.ci.1, "{est:?}");
        let fixed = coverage_fixed(&r, 3.0, snr, ETA, gamma0, &mc).unwrap();
        assert!(fixed.estimate < 0.4);
    }

    #[test]
    fn outage_limits() {
        let r = ServiceRegion::new(10.0, 10.0).unwrap();
        let clear = BlockageModel::new(0.0).unwrap();
        let o = outage_pass(&r, 3.0, 1e12, ETA, &clear, 1.0).unwrap();
        assert!(o.tau1 > (25.0f64 + 9.0).sqrt());
        assert!(o.exact.abs() < 1e-15);
        let heavy = BlockageModel::new(50.0).unwrap();
        assert!(outage_pass(&r, 3.0, 1e12, ETA, &heavy, 1.0).unwrap().exact > 1.0 - 1e-12);
        assert!(outage_fixed_high_snr(&r, 3.0, &clear).unwrap().abs() < 1e-12);
    }

    #[test]
    fn outage_matches_monte_carlo() {
        let r = ServiceRegion::new(20.0, 10.0).unwrap();
        let b = BlockageModel::new(0.05).unwrap();
        let snr = 1e8;
        let o = outage_pass(&r, 3.0, snr, ETA, &b, 2.0).unwrap();
        let mc = outage_pass_mc(&r, 3.0, snr, ETA, &b, 2.0, &McSettings::new(1_000_000, 5));
        let se = (o.exact * (1.0 - o.exact) / mc.trials as f64).sqrt();
        assert!(o.exact > 0.3 && o.exact < 0.9, "{o:?}");
        assert!((o.exact - mc.estimate).abs() < 3.0 * se, "{o:?} vs {mc:?}");
    }

    #[test]
    fn outage_gap_positive_and_growing() {
        let b = BlockageModel::new(0.1).unwrap();
        let mut last = 0.0;
        for dx in [5.0, 10.0, 20.0, 30.0] {
            let g = outage_gap(&ServiceRegion::new(dx, 10.0).unwrap(), 3.0, &b).unwrap();
            assert!(g > last, "{dx}: {g}");
            last = g;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pass_beats_fixed_at_high_snr(z in 0.5..5.0f64, ratio in 1.0..10.0f64, snr_db in 40.0..80.0f64) {
            let d = z * ratio;
            let snr = 10f64.powf(snr_db / 10.0) / ETA;
            prop_assert!(ergodic_rate_pass(d, z, snr, ETA).unwrap() >= ergodic_rate_fixed(d, z, snr, ETA).unwrap());
        }

        #[test]
        fn outage_is_monotone(snr_db in 50.0..90.0f64, beta in 0.0..0.5f64, rt in 0.5..4.0f64) {
            let r = ServiceRegion::new(10.0, 10.0).unwrap();
            let snr = 10f64.powf(snr_db / 10.0);
            let at = |snr: f64, beta: f64, rt: f64| {
                outage_pass(&r, 3.0, snr, ETA, &BlockageModel::new(beta).unwrap(), rt).unwrap().exact
            };
            let base = at(snr, beta, rt);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(at(snr * 2.0, beta, rt) <= base + 1e-12);
            prop_assert!(at(snr, beta + 0.1, rt) >= base - 1e-12);
            prop_assert!(at(snr, beta, rt + 0.5) >= base - 1e-12);
        }
    }
}
