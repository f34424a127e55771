//! Free-space and in-waveguide channels.
//!
//! The free-space response of a PA at distance `r` is
//! `a = (eta / r) exp(-j 2 pi r / lambda)`. The stored channel vector is
//! `h = conj(a)` so the effective gain `h^H g` reproduces
//! `sum_m (eta sqrt(P_m) / r_m) exp(-j 2 pi (r_m + n_eff x_m) / lambda)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{
    checked_distance, lateral_offset, RfConstants, Scenario, UserPosition, Waveguide,
};
use crate::{Error, Result};

/// Positions and radiated-power fractions on one waveguide.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WaveguideConfig {
    pub positions: Vec<f64>,
    pub powers: Vec<f64>,
}

impl WaveguideConfig {
    pub fn new(positions: Vec<f64>, powers: Vec<f64>) -> Self {
        Self { positions, powers }
    }

    /// Equal split `1/M` over the given positions.
    pub fn equal_power(positions: Vec<f64>) -> Self {
        let m = positions.len().max(1) as f64;
        let powers = vec![1.0 / m; positions.len()];
        Self { positions, powers }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Decision variable of every optimizer: one [`WaveguideConfig`] per waveguide.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PinchConfig {
    pub waveguides: Vec<WaveguideConfig>,
}

impl PinchConfig {
    pub fn new(waveguides: Vec<WaveguideConfig>) -> Self {
        Self { waveguides }
    }

    pub fn equal_power(positions: Vec<Vec<f64>>) -> Self {
        Self {
            waveguides: positions
                .into_iter()
                .map(WaveguideConfig::equal_power)
                .collect(),
        }
    }

    /// Total number of PAs across waveguides.
    pub fn total(&self) -> usize {
        self.waveguides.iter().map(|w| w.len()).sum()
    }

    /// Checks ordering, spacing, range and power budgets against `s`.
    pub fn validate(&self, s: &Scenario) -> Result<()> {
        if self.waveguides.len() != s.waveguides.len() {
            return Err(Error::DimensionMismatch {
                expected: s.waveguides.len(),
                got: self.waveguides.len(),
            });
        }
        for (cfg, w) in self.waveguides.iter().zip(&s.waveguides) {
            if cfg.positions.len() != cfg.powers.len() {
                return Err(Error::DimensionMismatch {
                    expected: cfg.positions.len(),
                    got: cfg.powers.len(),
                });
            }
            let tol = 1e-12 * w.length.max(1.0);
            for (i, &x) in cfg.positions.iter().enumerate() {
                if !(x >= -tol && x <= w.length + tol) {
                    return Err(Error::InvalidParameter(format!(
                        "position {x} outside [0, {}]",
                        w.length
                    )));
                }
                if i > 0 && x - cfg.positions[i - 1] < w.min_spacing - tol {
                    return Err(Error::InvalidParameter(format!(
                        "spacing {} below {}",
                        x - cfg.positions[i - 1],
                        w.min_spacing
                    )));
                }
            }
            if cfg.powers.iter().any(|p| !(0.0..=1.0).contains(p))
                || cfg.powers.iter().sum::<f64>() > 1.0 + 1e-12
            {
                return Err(Error::InvalidParameter(
                    "power fractions out of range".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Free-space response `(eta / r) exp(-j 2 pi r / lambda)` of a PA at `x`.
pub fn free_space_response(
    x: f64,
    w: &Waveguide,
    u: &UserPosition,
    c: &RfConstants,
) -> Result<Complex64> {
    let r = checked_distance(x - u.x, lateral_offset(w, u))?;
    Ok(Complex64::from_polar(c.eta / r, -c.wavenumber() * r))
}

/// Stacked channel vector of user `k` (length = total PAs).
pub fn los_channel(s: &Scenario, cfg: &PinchConfig, k: usize) -> Result<Vec<Complex64>> {
    let u = user(s, k)?;
    let mut h = Vec::with_capacity(cfg.total());
    for (wc, w) in cfg.waveguides.iter().zip(&s.waveguides) {
        for &x in &wc.positions {
            h.push(free_space_response(x, w, u, &s.constants)?.conj());
        }
    }
    Ok(h)
}

/// In-waveguide vector `sqrt(P_m) exp(-j 2 pi n_eff x_m / lambda)`.
pub fn waveguide_vector(x: &[f64], powers: &[f64], c: &RfConstants) -> Vec<Complex64> {
    let k = c.wavenumber() * c.n_eff;
    x.iter()
        .zip(powers)
        .map(|(&xm, &p)| Complex64::from_polar(p.sqrt(), -k * xm))
        .collect()
}

/// One non-line-of-sight path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlosPath {
    pub amplitude: f64,
    pub phase: f64,
}

/// Draws `count` paths with Rayleigh amplitudes of scale `sigma` and uniform phases.
pub fn random_nlos_paths<R: Rng>(rng: &mut R, count: usize, sigma: f64) -> Vec<NlosPath> {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..count)
        .map(|_| {
            let (a, b): (f64, f64) = (normal.sample(rng), normal.sample(rng));
            NlosPath {
                amplitude: a.hypot(b),
                phase: rng.gen::<f64>() * std::f64::consts::TAU,
            }
        })
        .collect()
}

/// Per-PA multipath gain: LoS response plus the sum of NLoS terms.
///
/// `paths` holds one list per PA in stacked order.
pub fn multipath_gain(
    s: &Scenario,
    cfg: &PinchConfig,
    paths: &[Vec<NlosPath>],
    k: usize,
) -> Result<Vec<Complex64>> {
    let u = user(s, k)?;
    if paths.len() != cfg.total() {
        return Err(Error::DimensionMismatch {
            expected: cfg.total(),
            got: paths.len(),
        });
    }
    let mut out = Vec::with_capacity(cfg.total());
    let mut idx = 0;
    for (wc, w) in cfg.waveguides.iter().zip(&s.waveguides) {
        for &x in &wc.positions {
            let los = free_space_response(x, w, u, &s.constants)?;
            let nlos: Complex64 = paths[idx]
                .iter()
                .map(|p| Complex64::from_polar(p.amplitude, p.phase))
                .sum();
            out.push(los + nlos);
            idx += 1;
        }
    }
    Ok(out)
}

/// Block-diagonal in-waveguide matrix G with one column per waveguide.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockDiag {
    pub blocks: Vec<Vec<Complex64>>,
}

impl BlockDiag {
    pub fn rows(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn cols(&self) -> usize {
        self.blocks.len()
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![Complex64::new(0.0, 0.0); self.cols()]; self.rows()];
        let mut row = 0;
        for (n, b) in self.blocks.iter().enumerate() {
            for v in b {
                out[row][n] = *v;
                row += 1;
            }
        }
        out
    }

    /// Row vector `h^H G` of length N.
    pub fn project(&self, h: &[Complex64]) -> Result<Vec<Complex64>> {
        if h.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                got: h.len(),
            });
        }
        let mut out = Vec::with_capacity(self.cols());
        let mut off = 0;
        for b in &self.blocks {
            out.push(
                h[off..off + b.len()]
                    .iter()
                    .zip(b)
                    .map(|(hm, gm)| hm.conj() * gm)
                    .sum(),
            );
            off += b.len();
        }
        Ok(out)
    }
}

/// Channel of one user for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub h: Vec<Complex64>,
    pub g: BlockDiag,
}

impl ChannelState {
    pub fn evaluate(s: &Scenario, cfg: &PinchConfig, k: usize) -> Result<Self> {
        let h = los_channel(s, cfg, k)?;
        let g = BlockDiag {
            blocks: cfg
                .waveguides
                .iter()
                .map(|w| waveguide_vector(&w.positions, &w.powers, &s.constants))
                .collect(),
        };
        Ok(Self { h, g })
    }

    /// Effective row channel `h^H G` (length N).
    pub fn effective(&self) -> Vec<Complex64> {
        self.g.project(&self.h).expect("consistent by construction")
    }
}

/// `h^H G w`.
pub fn effective_gain(h: &[Complex64], g: &BlockDiag, w: &[Complex64]) -> Result<Complex64> {
    if w.len() != g.cols() {
        return Err(Error::DimensionMismatch {
            expected: g.cols(),
            got: w.len(),
        });
    }
    let row = g.project(h)?;
    Ok(row.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// `h^H g` for one waveguide, evaluated without allocation.
pub fn single_waveguide_gain(
    x: &[f64],
    powers: &[f64],
    w: &Waveguide,
    u: &UserPosition,
    c: &RfConstants,
) -> Result<Complex64> {
    let zeta = lateral_offset(w, u);
    let k0 = c.wavenumber();
    let mut acc = Complex64::new(0.0, 0.0);
    for (&xm, &p) in x.iter().zip(powers) {
        let r = checked_distance(xm - u.x, zeta)?;
        acc += Complex64::from_polar(c.eta * p.sqrt() / r, -k0 * (r + c.n_eff * xm));
    }
    Ok(acc)
}

/// Effective row `h^H G` of user `k` for configuration `cfg` (length N).
pub fn effective_row(s: &Scenario, cfg: &PinchConfig, k: usize) -> Result<Vec<Complex64>> {
    let u = user(s, k)?;
    cfg.waveguides
        .iter()
        .zip(&s.waveguides)
        .map(|(wc, w)| single_waveguide_gain(&wc.positions, &wc.powers, w, u, &s.constants))
        .collect()
}

fn user(s: &Scenario, k: usize) -> Result<&UserPosition> {
    s.users.get(k).ok_or(Error::DimensionMismatch {
        expected: s.users.len(),
        got: k + 1,
    })
}
