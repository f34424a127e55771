//! OFDM over a pinched dielectric waveguide: single-mode band limits,
//! tabulated dispersion, cyclic-prefix sizing and subcarrier-sum pinching
//! beamforming.

use std::f64::consts::PI;
use std::io::Read;
use std::sync::Arc;

use crate::beamforming::{centered_array, elementwise_maximize, elementwise_search, SearchOutcome, SearchSettings};
use crate::channel::single_waveguide_gain;
use crate::geometry::{RfConstants, Scenario};
use crate::par::{self, Execution};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Normalized frequency at which the first higher-order mode appears.
pub const SINGLE_MODE_V: f64 = 2.405;

fn index_contrast(n_o: f64, n_c: f64) -> Result<f64> {
    if !(n_o > n_c && n_c >= 1.0) {
        return Err(Error::InvalidParameter(format!("need n_core > n_clad >= 1, got {n_o}, {n_c}")));
    }
    Ok((n_o * n_o - n_c * n_c).sqrt())
}

/// Highest single-mode frequency of a cylindrical dielectric guide, Hz.
pub fn single_mode_max_frequency(r_o: f64, n_o: f64, n_c: f64) -> Result<f64> {
    if !(r_o > 0.0) {
        return Err(Error::InvalidParameter(format!("core radius {r_o}")));
    }
    Ok(0.3828 * SPEED_OF_LIGHT / (r_o * index_contrast(n_o, n_c)?))
}

/// TE10 cutoff of a metallic rectangular guide of width `a`, Hz.
pub fn rectangular_cutoff(a: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * a)
}

/// Tabulated effective index of the dominant mode.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveguideDispersion {
    pub core_radius: f64,
    pub n_core: f64,
    pub n_clad: f64,
    /// `(V, n_eff)` pairs with strictly increasing `V`.
    table: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl WaveguideDispersion {
    pub fn new(core_radius: f64, n_core: f64, n_clad: f64, table: Vec<(f64, f64)>) -> Result<Self> {
        index_contrast(n_core, n_clad)?;
        if !(core_radius > 0.0) {
            return Err(Error::InvalidParameter(format!("core radius {core_radius}")));
        }
        if table.is_empty() {
            return Err(Error::InvalidParameter("empty dispersion table".into()));
        }
        for w in table.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(Error::InvalidParameter(
                    "dispersion table must be increasing in V and non-decreasing in n_eff".into(),
                ));
            }
        }
        let tol = 1e-12;
        if table.iter().any(|&(_, n)| n < n_clad - tol || n > n_core + tol) {
            return Err(Error::InvalidParameter("n_eff outside [n_clad, n_core]".into()));
        }
        let slopes = pchip_slopes(&table);
        Ok(Self {
            core_radius,
            n_core,
            n_clad,
            table,
            slopes,
        })
    }

    /// Dominant-mode curve from the weak-guidance approximation
    /// `b(V) = (1.1428 - 0.996 / V)^2` on `V` in `[1, 2.405]`.
    pub fn weak_guidance(core_radius: f64, n_core: f64, n_clad: f64) -> Result<Self> {
        let table = crate::numerics::linspace(1.0, SINGLE_MODE_V, 41)
            .into_iter()
            .map(|v| {
                let b = (1.1428 - 0.996 / v).powi(2).clamp(0.0, 1.0);
                (v, (n_clad * n_clad + b * (n_core * n_core - n_clad * n_clad)).sqrt())
            })
            .collect();
        Self::new(core_radius, n_core, n_clad, table)
    }

    /// Linear curve from `n_lo` at `f_lo` to `n_hi` at `f_hi`.
    pub fn linear(core_radius: f64, n_core: f64, n_clad: f64, f: (f64, f64), n: (f64, f64)) -> Result<Self> {
        let v = |f| normalized_frequency(f, core_radius, n_core, n_clad);
        let (v0, v1) = (v(f.0)?, v(f.1)?);
        let table = if v1 > v0 { vec![(v0, n.0), (v1, n.1)] } else { vec![(v0, n.0)] };
        Self::new(core_radius, n_core, n_clad, table)
    }

    /// Reads a two-column `V,n_eff` CSV; a non-numeric first row is treated as a header.
    pub fn from_csv<R: Read>(core_radius: f64, n_core: f64, n_clad: f64, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut table = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Config(format!("dispersion row {}: expected 2 columns", i + 1)));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(v), Ok(n)) => table.push((v, n)),
                _ if i == 0 => continue,
                _ => return Err(Error::Config(format!("dispersion row {}: not a number", i + 1))),
            }
        }
        Self::new(core_radius, n_core, n_clad, table)
    }

    pub fn table(&self) -> &[(f64, f64)] {
        &self.table
    }

    /// Frequency span covered by the table, Hz.
    pub fn band(&self) -> Result<(f64, f64)> {
        let scale = SPEED_OF_LIGHT / (2.0 * PI * self.core_radius * index_contrast(self.n_core, self.n_clad)?);
        Ok((self.table[0].0 * scale, self.table[self.table.len() - 1].0 * scale))
    }

    /// Effective index at `f` by monotone cubic interpolation, clamped to `[n_clad, n_core]`.
    pub fn n_eff_at(&self, f: f64) -> Result<f64> {
        let v = normalized_frequency(f, self.core_radius, self.n_core, self.n_clad)?;
        let (v0, v1) = (self.table[0].0, self.table[self.table.len() - 1].0);
        let tol = 1e-12 * v1.abs();
        if !(v >= v0 - tol && v <= v1 + tol) {
            return Err(Error::OutOfBand(f));
        }
        if self.table.len() == 1 {
            return Ok(self.table[0].1);
        }
        let v = v.clamp(v0, v1);
        let i = self.table.partition_point(|&(t, _)| t <= v).clamp(1, self.table.len() - 1) - 1;
        let ((xa, ya), (xb, yb)) = (self.table[i], self.table[i + 1]);
        let h = xb - xa;
        let t = (v - xa) / h;
        let (t2, t3) = (t * t, t * t * t);
        let n = (2.0 * t3 - 3.0 * t2 + 1.0) * ya
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * yb
            + (t3 - t2) * h * self.slopes[i + 1];
        Ok(n.clamp(self.n_clad, self.n_core))
    }
}

/// Fritsch-Carlson derivative estimates for a monotone cubic Hermite interpolant.
fn pchip_slopes(table: &[(f64, f64)]) -> Vec<f64> {
    let n = table.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = table.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let d: Vec<f64> = table.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    if n == 2 {
        return vec![d[0]; 2];
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if d[k - 1] * d[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    m[0] = end(h[0], h[1], d[0], d[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    m
}

/// `V = 2 pi f r_o sqrt(n_o^2 - n_c^2) / c`.
pub fn normalized_frequency(f: f64, r_o: f64, n_o: f64, n_c: f64) -> Result<f64> {
    Ok(2.0 * PI * f * r_o * index_contrast(n_o, n_c)? / SPEED_OF_LIGHT)
}

/// OFDM subcarrier layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmGrid {
    pub frequencies: Vec<f64>,
    pub cp_length: usize,
    pub sample_rate: f64,
}

impl OfdmGrid {
    pub fn new(frequencies: Vec<f64>, cp_length: usize, sample_rate: f64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidParameter("need at least one subcarrier".into()));
        }
        if frequencies.iter().any(|f| !(*f > 0.0 && f.is_finite())) || !(sample_rate > 0.0) {
            return Err(Error::InvalidParameter("frequencies and sample rate must be positive".into()));
        }
        Ok(Self {
            frequencies,
            cp_length,
            sample_rate,
        })
    }

    /// `q` subcarriers centered on `f_c`, spaced `bandwidth / q`, sampled at `bandwidth`.
    pub fn uniform(f_c: f64, bandwidth: f64, q: usize) -> Result<Self> {
        let df = bandwidth / q.max(1) as f64;
        let freqs = (0..q).map(|i| f_c + (i as f64 - (q as f64 - 1.0) / 2.0) * df).collect();
        Self::new(freqs, 0, bandwidth)
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Midpoint of the occupied band.
    pub fn center(&self) -> f64 {
        let lo = self.frequencies.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.frequencies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }

    /// Checks every subcarrier against the single-mode limit and an optional lower cutoff.
    pub fn check_band(&self, d: &WaveguideDispersion, lower_cutoff: Option<f64>) -> Result<()> {
        let f_max = single_mode_max_frequency(d.core_radius, d.n_core, d.n_clad)?;
        let f_min = lower_cutoff.unwrap_or(0.0);
        match self.frequencies.iter().find(|&&f| f > f_max || f <= f_min) {
            Some(&f) => Err(Error::OutOfBand(f)),
            None => Ok(()),
        }
    }
}

/// Delay spreads feeding the cyclic prefix, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySpread {
    pub multipath: f64,
    pub spatial: f64,
    pub dispersion: f64,
}

impl DelaySpread {
    pub fn total(&self) -> f64 {
        self.multipath + self.spatial + self.dispersion
    }

    /// CP samples covering the total spread.
    pub fn cp_samples(&self, sample_rate: f64) -> usize {
        let n = sample_rate * self.total();
        (n - 1e-9).ceil().max(0.0) as usize
    }
}

/// Delay components for PAs at `x` on waveguide 0 serving `user`.
///
/// The dispersion term uses the farthest PA position as the in-guide path.
pub fn delay_spread(
    grid: &OfdmGrid,
    d: &WaveguideDispersion,
    x: &[f64],
    s: &Scenario,
    user: usize,
    multipath: f64,
) -> Result<DelaySpread> {
    let w = s.waveguides.first().ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?;
    let u = s.users.get(user).ok_or(Error::DimensionMismatch {
        expected: s.users.len(),
        got: user + 1,
    })?;
    let r: Vec<f64> = x
        .iter()
        .map(|&xm| crate::geometry::pa_user_distance(xm, w, u))
        .collect::<Result<_>>()?;
    let spread = |v: &[f64]| {
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let spatial = if r.is_empty() { 0.0 } else { spread(&r) / SPEED_OF_LIGHT };
    let x_max = x.iter().copied().fold(0.0, f64::max);
    let n_c = d.n_eff_at(grid.center())?;
    let mut dn: f64 = 0.0;
    for &f in &grid.frequencies {
        dn = dn.max((d.n_eff_at(f)? - n_c).abs());
    }
    Ok(DelaySpread {
        multipath: multipath.max(0.0),
        spatial,
        dispersion: x_max * dn / SPEED_OF_LIGHT,
    })
}

/// Cyclic-prefix length in samples.
pub fn cp_length(
    grid: &OfdmGrid,
    d: &WaveguideDispersion,
    x: &[f64],
    s: &Scenario,
    user: usize,
    multipath: f64,
) -> Result<usize> {
    Ok(delay_spread(grid, d, x, s, user, multipath)?.cp_samples(grid.sample_rate))
}

/// Per-PA radiated power fractions as a function of frequency.
#[derive(Clone, Default)]
pub enum PowerModel {
    /// `1/M` at every frequency.
    #[default]
    Flat,
    /// User-supplied `(f, M) -> fractions`.
    Custom(Arc<dyn Fn(f64, usize) -> Vec<f64> + Send + Sync>),
}

impl std::fmt::Debug for PowerModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Flat => write!(f, "Flat"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl PowerModel {
    pub fn fractions(&self, f: f64, m: usize) -> Vec<f64> {
        match self {
            Self::Flat => vec![1.0 / m.max(1) as f64; m],
            Self::Custom(g) => g(f, m),
        }
    }
}

/// Channel constants of one subcarrier: wavelength `c/f`, `eta = c / (4 pi f)` and `n_eff(f)`.
pub fn subcarrier_constants(f: f64, d: &WaveguideDispersion, base: &RfConstants) -> Result<RfConstants> {
    RfConstants::new(SPEED_OF_LIGHT / f, d.n_eff_at(f)?, base.noise_power, base.tx_power)
}

/// Precomputed per-subcarrier state for repeated rate evaluations.
#[derive(Debug, Clone)]
pub struct OfdmLink<'a> {
    s: &'a Scenario,
    user: usize,
    carriers: Vec<RfConstants>,
    cp_length: usize,
    power: PowerModel,
    freqs: Vec<f64>,
}

impl<'a> OfdmLink<'a> {
    pub fn new(grid: &OfdmGrid, d: &WaveguideDispersion, s: &'a Scenario, user: usize, power: PowerModel) -> Result<Self> {
        if user >= s.users.len() || s.waveguides.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: s.users.len(),
                got: user + 1,
            });
        }
        let carriers = grid
            .frequencies
            .iter()
            .map(|&f| subcarrier_constants(f, d, &s.constants))
            .collect::<Result<_>>()?;
        Ok(Self {
            s,
            user,
            carriers,
            cp_length: grid.cp_length,
            power,
            freqs: grid.frequencies.clone(),
        })
    }

    /// Spectral efficiency of subcarrier `q`.
    pub fn subcarrier_rate(&self, x: &[f64], q: usize) -> Result<f64> {
        let c = &self.carriers[q];
        let rho = self.power.fractions(self.freqs[q], x.len());
        let g = single_waveguide_gain(x, &rho, &self.s.waveguides[0], &self.s.users[self.user], c)?;
        Ok((g.norm_sqr() * c.tx_power / c.noise_power).ln_1p() / std::f64::consts::LN_2)
    }

    /// `(1 / (L_CP + Q)) sum_q log2(1 + P_t |h^H g|^2 / sigma^2)`.
    pub fn rate(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for q in 0..self.carriers.len() {
            sum += self.subcarrier_rate(x, q)?;
        }
        Ok(sum / (self.cp_length + self.carriers.len()) as f64)
    }

    /// Same as [`OfdmLink::rate`] with subcarriers evaluated by `exec`, summed in order.
    pub fn rate_with(&self, x: &[f64], exec: Execution) -> Result<f64> {
        let parts = par::map_range(exec, self.carriers.len(), |q| self.subcarrier_rate(x, q));
        let mut sum = 0.0;
        for p in parts {
            sum += p?;
        }
        Ok(sum / (self.cp_length + self.carriers.len()) as f64)
    }
}

/// OFDM rate with frequency-flat power radiation.
pub fn ofdm_rate(x: &[f64], grid: &OfdmGrid, d: &WaveguideDispersion, s: &Scenario, user: usize) -> Result<f64> {
    OfdmLink::new(grid, d, s, user, PowerModel::Flat)?.rate(x)
}

/// Narrowband optimum at the band center.
pub fn narrowband_positions(
    grid: &OfdmGrid,
    d: &WaveguideDispersion,
    s: &Scenario,
    user: usize,
    m: usize,
    settings: &SearchSettings,
) -> Result<Vec<f64>> {
    let mut sc = s.clone();
    sc.constants = subcarrier_constants(grid.center(), d, &s.constants)?;
    Ok(elementwise_search(&sc, user, m, settings)?.x.remove(0))
}

/// Element-wise search on the subcarrier-sum rate, started from the better
/// of the center-frequency optimum and a uniform array at the user.
pub fn wideband_optimize(
    grid: &OfdmGrid,
    d: &WaveguideDispersion,
    s: &Scenario,
    user: usize,
    m: usize,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    let link = OfdmLink::new(grid, d, s, user, PowerModel::Flat)?;
    let w = &s.waveguides[0];
    let f = |x: &[f64]| link.rate(x).unwrap_or(f64::NEG_INFINITY);
    let nb = narrowband_positions(grid, d, s, user, m, settings)?;
    let uni = centered_array(s.users[user].x, m, w)?;
    let x0 = if f(&nb) >= f(&uni) { nb } else { uni };
    elementwise_maximize(&f, x0, w, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{UserPosition, Waveguide};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario(x_r: f64) -> Scenario {
        Scenario::new(
            RfConstants::new(SPEED_OF_LIGHT / 28e9, 1.2, 1e-11, 1.0).unwrap(),
            vec![Waveguide::new(0.0, 3.0, 10.0, 0.0054).unwrap()],
            vec![UserPosition::new(x_r, 0.5, 0.0)],
        )
        .unwrap()
    }

    fn dispersive(fc: f64, bw: f64, dn: f64) -> WaveguideDispersion {
        WaveguideDispersion::linear(1e-3, 1.4, 1.0, (fc - bw, fc + bw), (1.2, 1.2 + dn)).unwrap()
    }

    #[test]
    fn band_limit() {
        let f = single_mode_max_frequency(2e-3, 1.4, 1.0).unwrap();
        assert!((f - 58e9).abs() < 1e9, "{f}");
        assert_relative_eq!(single_mode_max_frequency(4e-3, 1.4, 1.0).unwrap(), f / 2.0, max_relative = 1e-14);
        let weak = single_mode_max_frequency(2e-3, 1.0 + 1e-9, 1.0).unwrap();
        assert!(weak > 1e14);
        let v = normalized_frequency(f, 2e-3, 1.4, 1.0).unwrap();
        assert!((v - SINGLE_MODE_V).abs() < 1e-3);
        assert!(single_mode_max_frequency(2e-3, 1.0, 1.4).is_err());
        assert_relative_eq!(rectangular_cutoff(0.01), SPEED_OF_LIGHT / 0.02);
    }

    #[test]
    fn table_interpolation() {
        let d = WaveguideDispersion::weak_guidance(2e-3, 1.4, 1.0).unwrap();
        let (lo, hi) = d.band().unwrap();
        assert_relative_eq!(d.n_eff_at(lo).unwrap(), d.table()[0].1, max_relative = 1e-12);
        assert_relative_eq!(d.n_eff_at(hi).unwrap(), d.table().last().unwrap().1, max_relative = 1e-12);
        assert!(matches!(d.n_eff_at(hi * 1.01), Err(Error::OutOfBand(_))));
        let lin = WaveguideDispersion::new(2e-3, 1.4, 1.0, vec![(1.0, 1.1), (2.0, 1.3)]).unwrap();
        let scale = SPEED_OF_LIGHT / (2.0 * PI * 2e-3 * (1.96f64 - 1.0).sqrt());
        assert_relative_eq!(lin.n_eff_at(1.5 * scale).unwrap(), 1.2, max_relative = 1e-12);
        let mut last = 0.0;
        for f in crate::numerics::linspace(lo, hi, 500) {
            let n = d.n_eff_at(f).unwrap();
            assert!((1.0..=1.4).contains(&n) && n >= last - 1e-15);
            last = n;
        }
        assert!(WaveguideDispersion::new(2e-3, 1.4, 1.0, vec![(1.0, 1.3), (2.0, 1.1)]).is_err());
        assert!(WaveguideDispersion::new(2e-3, 1.4, 1.0, vec![(1.0, 1.5)]).is_err());
    }

    proptest! {
        #[test]
        fn pchip_stays_in_range(steps in prop::collection::vec((0.01..1.0f64, 0.0..0.05f64), 2..12), t in 0.0..1.0f64) {
            let mut v = 1.0;
            let mut n = 1.0;
            let mut table = vec![(v, n)];
            for (dv, dn) in steps {
                v += dv;
                n = (n + dn).min(1.4);
                table.push((v, n));
            }
            let d = WaveguideDispersion::new(1e-3, 1.4, 1.0, table.clone()).unwrap();
            let (lo, hi) = d.band().unwrap();
            let f = lo + t * (hi - lo);
            let x = d.n_eff_at(f).unwrap();
            prop_assert!((1.0..=1.4).contains(&x));
            let vq = normalized_frequency(f, 1e-3, 1.4, 1.0).unwrap();
            let i = table.partition_point(|p| p.0 <= vq).clamp(1, table.len() - 1) - 1;
            prop_assert!(x >= table[i].1 - 1e-12 && x <= table[i + 1].1 + 1e-12);
        }

        #[test]
        fn cp_monotone(a in 0.0..1e-7f64, b in 0.0..1e-7f64, c in 0.0..1e-7f64, e in 0.0..1e-8f64) {
            let base = DelaySpread { multipath: a, spatial: b, dispersion: c };
            for more in [
                DelaySpread { multipath: a + e, ..base },
                DelaySpread { spatial: b + e, ..base },
                DelaySpread { dispersion: c + e, ..base },
            ] {
                prop_assert!(more.cp_samples(1e9) >= base.cp_samples(1e9));
            }
        }
    }

    #[test]
    fn csv_table() {
        let text = "V,n_eff\n1.0,1.1\n2.0,1.3\n";
        let d = WaveguideDispersion::from_csv(2e-3, 1.4, 1.0, text.as_bytes()).unwrap();
        assert_eq!(d.table(), &[(1.0, 1.1), (2.0, 1.3)]);
        assert!(WaveguideDispersion::from_csv(2e-3, 1.4, 1.0, "1,1.1\nx,2\n".as_bytes()).is_err());
    }

    #[test]
    fn cp_examples() {
        let fc = 28e9;
        let flat = WaveguideDispersion::linear(1e-3, 1.4, 1.0, (fc - 1e9, fc + 1e9), (1.2, 1.2)).unwrap();
        let grid = OfdmGrid::uniform(fc, 1e9, 16).unwrap();
        let s = scenario(5.0);
        assert_eq!(cp_length(&grid, &flat, &[5.0], &s, 0, 0.0).unwrap(), 0);

        // Distances sqrt(9.25) and sqrt(9.25) + 3.
        let far = ((3.0 + 9.25f64.sqrt()).powi(2) - 9.25).sqrt();
        let ds = delay_spread(&grid, &flat, &[5.0, 5.0 + far], &s, 0, 0.0).unwrap();
        assert_relative_eq!(ds.spatial, 3.0 / SPEED_OF_LIGHT, max_relative = 1e-9);
        assert_eq!(ds.cp_samples(1e9), 11);
        assert_eq!(ds.cp_samples(1e8), 2);

        // Extreme subcarriers sit 0.05 above and below the center index.
        let (f0, f1) = (grid.frequencies[0], grid.frequencies[15]);
        let disp = WaveguideDispersion::linear(1e-3, 1.4, 1.0, (f0, f1), (1.2, 1.3)).unwrap();
        let ds = delay_spread(&grid, &disp, &[10.0], &s, 0, 0.0).unwrap();
        assert!((ds.dispersion - 1.67e-9).abs() < 0.02e-9, "{}", ds.dispersion);
    }

    #[test]
    fn rate_reductions() {
        let s = scenario(5.0);
        let fc = SPEED_OF_LIGHT / s.constants.wavelength;
        let d = WaveguideDispersion::linear(1e-3, 1.4, 1.0, (fc - 1e9, fc + 1e9), (1.2, 1.2)).unwrap();
        let x = [4.9, 5.0, 5.2];
        let narrow = crate::beamforming::receive_power(&x, &[1.0 / 3.0; 3], &s, 0).unwrap();
        let single = (1.0 + narrow / s.constants.noise_power).log2();
        let one = OfdmGrid::new(vec![fc], 0, 1e9).unwrap();
        assert_relative_eq!(ofdm_rate(&x, &one, &d, &s, 0).unwrap(), single, max_relative = 1e-12);
        let rep = OfdmGrid::new(vec![fc; 4], 0, 1e9).unwrap();
        let link = OfdmLink::new(&rep, &d, &s, 0, PowerModel::Flat).unwrap();
        assert_relative_eq!(link.rate(&x).unwrap() * 4.0, 4.0 * single, max_relative = 1e-12);

        let disp = dispersive(fc, 1e9, 0.05);
        let grid = OfdmGrid::new(
            {
                let mut rng = ChaCha8Rng::seed_from_u64(8);
                (0..16).map(|_| fc + rng.gen_range(-1e9..1e9)).collect()
            },
            3,
            2e9,
        )
        .unwrap();
        let link = OfdmLink::new(&grid, &disp, &s, 0, PowerModel::Flat).unwrap();
        let mut oracle = 0.0;
        for &f in &grid.frequencies {
            let lam = SPEED_OF_LIGHT / f;
            let (eta, k0, n) = (lam / (4.0 * PI), 2.0 * PI / lam, disp.n_eff_at(f).unwrap());
            let mut g = crate::Complex64::new(0.0, 0.0);
            for &xm in &x {
                let r = ((xm - 5.0f64).powi(2) + 0.25 + 9.0).sqrt();
                g += crate::Complex64::from_polar(eta / (3f64.sqrt() * r), -k0 * (r + n * xm));
            }
            oracle += (1.0 + g.norm_sqr() / 1e-11).log2();
        }
        assert_relative_eq!(link.rate(&x).unwrap(), oracle / 19.0, max_relative = 1e-12);
        assert_eq!(link.rate(&x).unwrap(), link.rate_with(&x, Execution::Parallel).unwrap());
    }

    #[test]
    fn single_subcarrier_matches_narrowband() {
        let s = scenario(5.0);
        let fc = SPEED_OF_LIGHT / s.constants.wavelength;
        let d = WaveguideDispersion::linear(1e-3, 1.4, 1.0, (fc - 1e9, fc + 1e9), (1.2, 1.2)).unwrap();
        let grid = OfdmGrid::new(vec![fc], 0, 1e9).unwrap();
        let set = SearchSettings::default();
        let wb = wideband_optimize(&grid, &d, &s, 0, 4, &set).unwrap();
        let nb = elementwise_search(&s, 0, 4, &set).unwrap();
        let rate = (1.0 + nb.value / s.constants.noise_power).log2();
        assert!((wb.value - rate).abs() <= 1e-6 * rate, "{} vs {rate}", wb.value);
    }

    #[test]
    fn wideband_beats_center_frequency_design() {
        let set = SearchSettings::default();
        for (i, x_r) in [3.0, 5.0, 7.5].into_iter().enumerate() {
            let s = scenario(x_r);
            let fc = 28e9;
            let d = dispersive(fc, 2e9, 0.05);
            let grid = OfdmGrid::uniform(fc, 4e9, 16).unwrap();
            let nb = narrowband_positions(&grid, &d, &s, 0, 4, &set).unwrap();
            let r_nb = ofdm_rate(&nb, &grid, &d, &s, 0).unwrap();
            let wb = wideband_optimize(&grid, &d, &s, 0, 4, &set).unwrap();
            assert!(wb.value >= r_nb, "instance {i}");
            assert!(wb.trace.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn two_pa_grid_oracle() {
        let s = Scenario::new(
            RfConstants::new(SPEED_OF_LIGHT / 28e9, 1.2, 1e-11, 1.0).unwrap(),
            vec![Waveguide::new(0.0, 1.0, 1.0, 0.0054).unwrap()],
            vec![UserPosition::new(0.5, 0.0, 0.0)],
        )
        .unwrap();
        let fc = 28e9;
        let d = dispersive(fc, 1e9, 0.05);
        let grid = OfdmGrid::uniform(fc, 2e9, 8).unwrap();
        let link = OfdmLink::new(&grid, &d, &s, 0, PowerModel::Flat).unwrap();
        let g = crate::numerics::linspace(0.0, 1.0, 400);
        let mut top: f64 = 0.0;
        for &a in &g {
            for &b in &g {
                if b - a >= 0.0054 {
                    top = top.max(link.rate(&[a, b]).unwrap());
                }
            }
        }
        let out = wideband_optimize(&grid, &d, &s, 0, 2, &SearchSettings::default()).unwrap();
        assert!(out.value >= 0.99 * top, "{} vs {top}", out.value);
    }

    #[test]
    fn band_check() {
        let d = WaveguideDispersion::weak_guidance(2e-3, 1.4, 1.0).unwrap();
        let ok = OfdmGrid::uniform(40e9, 1e9, 8).unwrap();
        assert!(ok.check_band(&d, Some(30e9)).is_ok());
        assert!(ok.check_band(&d, Some(45e9)).is_err());
        let bad = OfdmGrid::uniform(60e9, 1e9, 8).unwrap();
        assert!(matches!(bad.check_band(&d, None), Err(Error::OutOfBand(_))));
    }
}
