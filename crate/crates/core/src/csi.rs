//! Channel estimation and beam training.
//!
//! Uplink pilots are received through the pinching antennas, so the base
//! station only sees `Y = G^H h s^T + Z` with N rows instead of the full
//! port-level channel `h`. Port channels are stacked waveguide-major
//! (`n * M + m`) as in [`crate::channel::los_channel`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{single_waveguide_gain, waveguide_vector, BlockDiag};
use crate::geometry::{RfConstants, Scenario, UserPosition};
use crate::numerics::{golden_max, linspace};
use crate::{Error, Result};

/// Relative singular value threshold used for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Circularly symmetric complex Gaussian sample with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C {
    let s = (0.5 * var).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C::new(s * re, s * im)
}

/// Dense `G^H` (N x total ports).
pub fn gh_dense(g: &BlockDiag) -> DMatrix<C> {
    let mut out = DMatrix::zeros(g.cols(), g.rows());
    let mut off = 0;
    for (n, b) in g.blocks.iter().enumerate() {
        for (m, v) in b.iter().enumerate() {
            out[(n, off + m)] = v.conj();
        }
        off += b.len();
    }
    out
}

/// Number of singular values above `RANK_TOL * sigma_max`.
pub fn numerical_rank(a: &DMatrix<C>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > RANK_TOL * top).count()
}

/// Equivalent pilot matrix with its rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub matrix: DMatrix<C>,
    pub rank: usize,
}

/// `s kron G^H`, so that `vec(Y) = (s kron G^H) h` with column stacking.
pub fn equivalent_pilot_matrix(pilots: &[C], g: &BlockDiag) -> Result<PilotMatrix> {
    if pilots.is_empty() {
        return Err(Error::InvalidParameter("empty pilot sequence".into()));
    }
    let gh = gh_dense(g);
    let n = gh.nrows();
    let mut matrix = DMatrix::zeros(n * pilots.len(), gh.ncols());
    for (t, s) in pilots.iter().enumerate() {
        let block = &gh * *s;
        matrix.rows_mut(t * n, n).copy_from(&block);
    }
    let rank = numerical_rank(&matrix);
    Ok(PilotMatrix { matrix, rank })
}

/// Received pilots `Y = G^H h s^T + Z` (N x T).
pub fn receive_pilots<R: Rng + ?Sized>(
    g: &BlockDiag,
    h: &[C],
    pilots: &[C],
    noise: f64,
    rng: &mut R,
) -> Result<DMatrix<C>> {
    if h.len() != g.rows() {
        return Err(Error::DimensionMismatch {
            expected: g.rows(),
            got: h.len(),
        });
    }
    let z = gh_dense(g) * DVector::from_column_slice(h);
    let mut y = DMatrix::from_fn(g.cols(), pilots.len(), |n, t| z[n] * pilots[t]);
    if noise > 0.0 {
        y.iter_mut().for_each(|v| *v += complex_normal(rng, noise));
    }
    Ok(y)
}

/// Column-stacked `vec(Y)`.
pub fn vectorize(y: &DMatrix<C>) -> DVector<C> {
    DVector::from_column_slice(y.as_slice())
}

/// Candidate ports of every waveguide, one row per waveguide.
pub type Ports = [Vec<f64>];

fn ports_per_waveguide(ports: &Ports) -> Result<usize> {
    let m = ports.first().map(Vec::len).unwrap_or(0);
    if m == 0 {
        return Err(Error::InvalidParameter("no candidate ports".into()));
    }
    for p in ports {
        if p.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: p.len(),
            });
        }
    }
    Ok(m)
}

/// Port-level channel of user `k` over all candidate ports.
pub fn port_channel(s: &Scenario, ports: &Ports, k: usize) -> Result<Vec<C>> {
    let cfg = crate::channel::PinchConfig::equal_power(ports.to_vec());
    crate::channel::los_channel(s, &cfg, k)
}

/// Sequential least-squares estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialEstimate {
    pub h: Vec<C>,
    /// `||Y_m - G_m^H h_m s^T||^2` per slot.
    pub residuals: Vec<f64>,
    /// Pilot blocks used (one per port index).
    pub slots: usize,
}

fn pilot_energy(pilots: &[C]) -> Result<f64> {
    let e: f64 = pilots.iter().map(|s| s.norm_sqr()).sum();
    if e <= 0.0 {
        return Err(Error::InvalidParameter("pilot sequence has zero energy".into()));
    }
    Ok(e)
}

/// Activates port `m` on every waveguide in block `m` and inverts the
/// diagonal `G_m^H`.
pub fn ls_sequential<R: Rng + ?Sized>(
    ports: &Ports,
    c: &RfConstants,
    pilots: &[C],
    h: &[C],
    noise: f64,
    rng: &mut R,
) -> Result<SequentialEstimate> {
    let m_ports = ports_per_waveguide(ports)?;
    let n = ports.len();
    if h.len() != n * m_ports {
        return Err(Error::DimensionMismatch {
            expected: n * m_ports,
            got: h.len(),
        });
    }
    let energy = pilot_energy(pilots)?;
    let mut est = vec![C::new(0.0, 0.0); h.len()];
    let mut residuals = Vec::with_capacity(m_ports);
    for m in 0..m_ports {
        let g = BlockDiag {
            blocks: ports
                .iter()
                .map(|p| waveguide_vector(&[p[m]], &[1.0], c))
                .collect(),
        };
        let hm: Vec<C> = (0..n).map(|i| h[i * m_ports + m]).collect();
        let y = receive_pilots(&g, &hm, pilots, noise, rng)?;
        let mut res = 0.0;
        for i in 0..n {
            let gc = g.blocks[i][0].conj();
            if gc.norm() == 0.0 {
                return Err(Error::SingularMatrix(0.0));
            }
            let corr: C = (0..pilots.len()).map(|t| y[(i, t)] * pilots[t].conj()).sum();
            let e = corr / (gc * energy);
            est[i * m_ports + m] = e;
            res += (0..pilots.len())
                .map(|t| (y[(i, t)] - gc * e * pilots[t]).norm_sqr())
                .sum::<f64>();
        }
        residuals.push(res);
    }
    Ok(SequentialEstimate {
        h: est,
        residuals,
        slots: m_ports,
    })
}

/// Expected total squared error `sum_m sigma^2 tr((G_m G_m^H)^-1) / ||s||^2`.
pub fn ls_sequential_mse(ports: &Ports, pilots: &[C], noise: f64) -> Result<f64> {
    let m_ports = ports_per_waveguide(ports)?;
    let energy = pilot_energy(pilots)?;
    // Unit-power activation gives |g| = 1 for every port.
    Ok(noise * (ports.len() * m_ports) as f64 / energy)
}

/// Normalized mean squared error in dB.
pub fn nmse_db(estimate: &[C], truth: &[C]) -> f64 {
    let err: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let norm: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    10.0 * (err / norm).log10()
}

/// Two least-squares solutions with equal residual.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceDemo {
    pub minimum_norm: DVector<C>,
    pub shifted: DVector<C>,
    pub residual_minimum_norm: f64,
    pub residual_shifted: f64,
}

/// Shows that plain LS on a rank-deficient `A` has no unique solution.
pub fn least_squares_ambiguity(a: &DMatrix<C>, y: &DVector<C>) -> Result<NullSpaceDemo> {
    let rank = numerical_rank(a);
    if rank >= a.ncols() {
        return Err(Error::InvalidParameter("matrix has full column rank".into()));
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    let minimum_norm = svd
        .solve(y, RANK_TOL * top)
        .map_err(|e| Error::InvalidParameter(e.into()))?;
    let v_t = svd.v_t.as_ref().expect("computed");
    // Rows of V^H beyond the rank span the null space.
    let full = a.clone().svd(false, true);
    let v_full = full.v_t.as_ref().expect("computed");
    let null_row = if v_full.nrows() > rank {
        v_full.row(rank).adjoint()
    } else {
        // Thin SVD: complete the basis by projecting out the row space.
        let mut e = DVector::zeros(a.ncols());
        let mut best = DVector::zeros(a.ncols());
        let mut best_norm = 0.0;
        for i in 0..a.ncols() {
            e.fill(C::new(0.0, 0.0));
            e[i] = C::new(1.0, 0.0);
            let mut r = e.clone();
            for j in 0..rank {
                let v = v_t.row(j).adjoint();
                let p = v.dotc(&r);
                r -= v * p;
            }
            if r.norm() > best_norm {
                best_norm = r.norm();
                best = r;
            }
        }
        best / C::new(best_norm, 0.0)
    };
    let shifted = &minimum_norm + null_row * C::new(1.0, 0.0);
    let residual_minimum_norm = (y - a * &minimum_norm).norm();
    let residual_shifted = (y - a * &shifted).norm();
    Ok(NullSpaceDemo {
        minimum_norm,
        shifted,
        residual_minimum_norm,
        residual_shifted,
    })
}

/// Sparsifying dictionary with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub psi: DMatrix<C>,
}

impl Dictionary {
    /// Normalizes the columns of `psi`.
    pub fn from_matrix(mut psi: DMatrix<C>) -> Result<Self> {
        for mut col in psi.column_iter_mut() {
            let n = col.norm();
            if n == 0.0 {
                return Err(Error::InvalidParameter("zero dictionary atom".into()));
            }
            col /= C::new(n, 0.0);
        }
        Ok(Self { psi })
    }

    /// Block dictionary of planar atoms `exp(-j k0 x sin(theta))`, `per_waveguide`
    /// angles per waveguide with `sin(theta)` uniform on `[-1, 1)`.
    pub fn planar(ports: &Ports, c: &RfConstants, per_waveguide: usize) -> Result<Self> {
        let m = ports_per_waveguide(ports)?;
        if per_waveguide == 0 {
            return Err(Error::InvalidParameter("dictionary needs atoms".into()));
        }
        let n = ports.len();
        let k0 = c.wavenumber();
        let mut psi = DMatrix::zeros(n * m, n * per_waveguide);
        for (i, p) in ports.iter().enumerate() {
            for l in 0..per_waveguide {
                let st = -1.0 + 2.0 * l as f64 / per_waveguide as f64;
                for (j, &x) in p.iter().enumerate() {
                    psi[(i * m + j, i * per_waveguide + l)] = C::from_polar(1.0, -k0 * x * st);
                }
            }
        }
        Self::from_matrix(psi)
    }

    /// Unitary DFT basis of size `n`.
    pub fn dft(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("empty DFT".into()));
        }
        let psi = DMatrix::from_fn(n, n, |r, l| {
            C::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * (r * l) as f64 / n as f64,
            )
        });
        Self::from_matrix(psi)
    }

    pub fn atoms(&self) -> usize {
        self.psi.ncols()
    }

    /// Mutual coherence `max |psi_i^H psi_j|`, `i != j`.
    pub fn coherence(&self) -> f64 {
        let g = self.psi.adjoint() * &self.psi;
        let mut best = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if i != j {
                    best = best.max(g[(i, j)].norm());
                }
            }
        }
        best
    }
}

/// Random activation patterns: every port is active with probability 1/2
/// (at least one per waveguide), sharing the power equally.
pub fn random_patterns<R: Rng + ?Sized>(
    ports: &Ports,
    c: &RfConstants,
    slots: usize,
    rng: &mut R,
) -> Result<Vec<BlockDiag>> {
    let m = ports_per_waveguide(ports)?;
    let mut out = Vec::with_capacity(slots);
    for _ in 0..slots {
        let mut blocks = Vec::with_capacity(ports.len());
        for p in ports {
            let mut active: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.5)).collect();
            if !active.iter().any(|&a| a) {
                active[rng.gen_range(0..m)] = true;
            }
            let count = active.iter().filter(|&&a| a).count() as f64;
            let powers: Vec<f64> = active
                .iter()
                .map(|&a| if a { 1.0 / count } else { 0.0 })
                .collect();
            blocks.push(waveguide_vector(p, &powers, c));
        }
        out.push(BlockDiag { blocks });
    }
    Ok(out)
}

/// Stacked sensing matrix with row `t * N + n` equal to `s_t` times row
/// `n` of `G_t^H`.
pub fn sensing_matrix(patterns: &[BlockDiag], pilots: &[C]) -> Result<DMatrix<C>> {
    if patterns.len() != pilots.len() {
        return Err(Error::DimensionMismatch {
            expected: patterns.len(),
            got: pilots.len(),
        });
    }
    let first = patterns
        .first()
        .ok_or_else(|| Error::InvalidParameter("no activation patterns".into()))?;
    let (n, cols) = (first.cols(), first.rows());
    let mut a = DMatrix::zeros(n * patterns.len(), cols);
    for (t, (g, s)) in patterns.iter().zip(pilots).enumerate() {
        if g.cols() != n || g.rows() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: g.rows(),
            });
        }
        a.rows_mut(t * n, n).copy_from(&(gh_dense(g) * *s));
    }
    Ok(a)
}

/// Noisy measurements `A h + z`.
pub fn measure<R: Rng + ?Sized>(a: &DMatrix<C>, h: &[C], noise: f64, rng: &mut R) -> DVector<C> {
    let mut y = a * DVector::from_column_slice(h);
    if noise > 0.0 {
        y.iter_mut().for_each(|v| *v += complex_normal(rng, noise));
    }
    y
}

/// OMP termination rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmpStop {
    /// Stop after this many atoms.
    Sparsity(usize),
    /// Stop once the residual norm is at most this value.
    Residual(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub support: Vec<usize>,
    pub coefficients: Vec<C>,
    pub residual: f64,
    /// Residual norm after each iteration, starting with `||y||`.
    pub residual_trace: Vec<f64>,
    /// Reconstructed port-level channel `Psi x`.
    pub h: Vec<C>,
}

/// Orthogonal matching pursuit on `y = A Psi x`.
pub fn omp_recover(
    y: &DVector<C>,
    a: &DMatrix<C>,
    dict: &Dictionary,
    stop: OmpStop,
) -> Result<OmpResult> {
    if a.nrows() != y.len() || a.ncols() != dict.psi.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: dict.psi.nrows(),
        });
    }
    let b = a * &dict.psi;
    let norms: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    let max_atoms = match stop {
        OmpStop::Sparsity(k) => k.min(b.nrows()).min(b.ncols()),
        OmpStop::Residual(_) => b.nrows().min(b.ncols()),
    };
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = DVector::zeros(0);
    let mut r = y.clone();
    let mut trace = vec![r.norm()];
    while support.len() < max_atoms {
        if let OmpStop::Residual(eps) = stop {
            if r.norm() <= eps {
                break;
            }
        }
        let mut best = None;
        let mut best_val = -1.0;
        for (l, col) in b.column_iter().enumerate() {
            if norms[l] == 0.0 || support.contains(&l) {
                continue;
            }
            let v = col.dotc(&r).norm() / norms[l];
            if v > best_val {
                best_val = v;
                best = Some(l);
            }
        }
        let Some(l) = best else { break };
        support.push(l);
        let bs = DMatrix::from_columns(&support.iter().map(|&i| b.column(i)).collect::<Vec<_>>());
        let svd = bs.clone().svd(true, true);
        let top = svd.singular_values.max();
        coeffs = svd
            .solve(y, RANK_TOL * top)
            .map_err(|e| Error::InvalidParameter(e.into()))?;
        r = y - &bs * &coeffs;
        trace.push(r.norm());
    }
    let mut x = DVector::zeros(dict.atoms());
    for (i, &l) in support.iter().enumerate() {
        x[l] = coeffs[i];
    }
    let h = (&dict.psi * x).iter().cloned().collect();
    Ok(OmpResult {
        support,
        coefficients: coeffs.iter().cloned().collect(),
        residual: r.norm(),
        residual_trace: trace,
        h,
    })
}

/// Search box and grid sizes for parameter sensing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSearch {
    pub x: (f64, f64),
    pub zeta: (f64, f64),
    pub coarse: (usize, usize),
    /// Alternating golden refinement rounds.
    pub rounds: usize,
    pub tol: f64,
    /// Fit a complex path gain instead of assuming the free-space one.
    pub fit_gain: bool,
}

impl ParamSearch {
    pub fn new(x: (f64, f64), zeta: (f64, f64)) -> Self {
        Self {
            x,
            zeta,
            coarse: (200, 60),
            rounds: 6,
            tol: 1e-9,
            fit_gain: true,
        }
    }
}

/// Line-of-sight channel reconstructed from sensed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensedChannel {
    pub x_r: f64,
    pub zeta: f64,
    pub gain: C,
    pub residual: f64,
    pub eta: f64,
    pub wavenumber: f64,
}

/// Port-level LoS response `(eta / r) exp(j k0 r)` of a user at `(x_r, zeta)`.
pub fn los_model(ports: &[f64], x_r: f64, zeta: f64, eta: f64, k0: f64) -> Vec<C> {
    ports
        .iter()
        .map(|&x| {
            let r = ((x - x_r).powi(2) + zeta * zeta).sqrt();
            C::from_polar(eta / r, k0 * r)
        })
        .collect()
}

impl SensedChannel {
    /// Channel at any position `x` on the waveguide.
    pub fn channel_at(&self, x: f64) -> C {
        self.gain * los_model(&[x], self.x_r, self.zeta, self.eta, self.wavenumber)[0]
    }
}

/// Estimates `(x_R, zeta)` on one waveguide from `y = A h(x_R, zeta) + z`.
pub fn parameter_sense(
    y: &DVector<C>,
    a: &DMatrix<C>,
    ports: &[f64],
    c: &RfConstants,
    search: &ParamSearch,
) -> Result<SensedChannel> {
    if a.ncols() != ports.len() || a.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: ports.len(),
            got: a.ncols(),
        });
    }
    if search.zeta.0 <= 0.0 || search.zeta.1 < search.zeta.0 || search.x.1 < search.x.0 {
        return Err(Error::InvalidParameter("invalid parameter search box".into()));
    }
    let (eta, k0) = (c.eta, c.wavenumber());
    let fit = |x_r: f64, zeta: f64| -> (f64, C) {
        let v = a * DVector::from_vec(los_model(ports, x_r, zeta, eta, k0));
        if search.fit_gain {
            let vv = v.norm_squared();
            if vv == 0.0 {
                return (f64::NEG_INFINITY, C::new(0.0, 0.0));
            }
            let p = v.dotc(y);
            (p.norm_sqr() / vv, p / vv)
        } else {
            (-(y - v).norm_squared(), C::new(1.0, 0.0))
        }
    };
    let obj = |x_r: f64, zeta: f64| fit(x_r, zeta).0;

    let grid = |xs: &[f64], zs: &[f64]| {
        let mut best = (xs[0], zs[0], f64::NEG_INFINITY);
        for &x in xs {
            for &z in zs {
                let v = obj(x, z);
                if v > best.2 {
                    best = (x, z, v);
                }
            }
        }
        best
    };
    let (nx, nz) = (search.coarse.0.max(2), search.coarse.1.max(2));
    let xs = linspace(search.x.0, search.x.1, nx);
    let zs = linspace(search.zeta.0, search.zeta.1, nz);
    let (x0, z0, _) = grid(&xs, &zs);
    let dx = (search.x.1 - search.x.0) / (nx - 1) as f64;
    let dz = (search.zeta.1 - search.zeta.0) / (nz - 1) as f64;
    let clamp_x = |v: f64| v.clamp(search.x.0, search.x.1);
    let clamp_z = |v: f64| v.clamp(search.zeta.0, search.zeta.1);
    let xs = linspace(clamp_x(x0 - dx), clamp_x(x0 + dx), 41);
    let zs = linspace(clamp_z(z0 - dz), clamp_z(z0 + dz), 41);
    let (mut x, mut z, _) = grid(&xs, &zs);
    let (hx, hz) = (dx / 20.0, dz / 20.0);
    for _ in 0..search.rounds {
        x = golden_max(&|v| obj(v, z), clamp_x(x - hx), clamp_x(x + hx), search.tol).0;
        z = golden_max(&|v| obj(x, v), clamp_z(z - hz), clamp_z(z + hz), search.tol).0;
    }
    let (_, gain) = fit(x, z);
    let v = a * DVector::from_vec(los_model(ports, x, z, eta, k0));
    let residual = (y - v * gain).norm();
    Ok(SensedChannel {
        x_r: x,
        zeta: z,
        gain,
        residual,
        eta,
        wavenumber: k0,
    })
}

/// Sequential single-port sensing matrix over a subset of ports.
pub fn port_selection_matrix(ports: &[f64], active: &[usize], c: &RfConstants) -> Result<DMatrix<C>> {
    let mut a = DMatrix::zeros(active.len(), ports.len());
    for (row, &m) in active.iter().enumerate() {
        let x = *ports.get(m).ok_or(Error::DimensionMismatch {
            expected: ports.len(),
            got: m + 1,
        })?;
        a[(row, m)] = waveguide_vector(&[x], &[1.0], c)[0].conj();
    }
    Ok(a)
}

/// Pinching-position and beam codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub positions: Vec<Vec<f64>>,
    pub w: Vec<C>,
}

fn codeword_amplitude(s: &Scenario, k: usize, cw: &Codeword) -> Result<C> {
    let u = s.users.get(k).ok_or(Error::DimensionMismatch {
        expected: s.users.len(),
        got: k + 1,
    })?;
    amplitude_at(s, u, cw)
}

fn amplitude_at(s: &Scenario, u: &UserPosition, cw: &Codeword) -> Result<C> {
    if cw.positions.len() != s.waveguides.len() || cw.w.len() != s.waveguides.len() {
        return Err(Error::DimensionMismatch {
            expected: s.waveguides.len(),
            got: cw.positions.len(),
        });
    }
    let mut acc = C::new(0.0, 0.0);
    for ((x, w), wv) in cw.positions.iter().zip(&s.waveguides).zip(&cw.w) {
        if x.is_empty() {
            continue;
        }
        let p = vec![1.0 / x.len() as f64; x.len()];
        acc += single_waveguide_gain(x, &p, w, u, &s.constants)? * wv;
    }
    Ok(acc)
}

/// Noiseless beamforming gain `|h^H G(X) w|^2` of user `k`.
pub fn codeword_gain(s: &Scenario, k: usize, cw: &Codeword) -> Result<f64> {
    Ok(codeword_amplitude(s, k, cw)?.norm_sqr())
}

fn measure_codeword<R: Rng + ?Sized>(
    s: &Scenario,
    k: usize,
    cw: &Codeword,
    noise: f64,
    repeats: usize,
    rng: &mut R,
) -> Result<f64> {
    let a = codeword_amplitude(s, k, cw)?;
    if noise <= 0.0 {
        return Ok(a.norm_sqr());
    }
    let reps = repeats.max(1);
    let total: f64 = (0..reps)
        .map(|_| (a + complex_normal(rng, noise)).norm_sqr())
        .sum();
    Ok(total / reps as f64)
}

/// Training result over an explicit codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub position_index: usize,
    pub beam_index: usize,
    pub measured: f64,
    /// Noiseless gain of the selected pair.
    pub gain: f64,
    pub measurements: usize,
}

/// Exhaustive search over position codebook `f` and beam codebook `w`.
///
/// Each pair is measured `repeats` times and averaged. Ties go to the lowest
/// `(i, j)`.
pub fn beam_train_exhaustive<R: Rng + ?Sized>(
    s: &Scenario,
    k: usize,
    f: &[Vec<Vec<f64>>],
    w: &[Vec<C>],
    noise: f64,
    repeats: usize,
    rng: &mut R,
) -> Result<TrainingOutcome> {
    if f.is_empty() || w.is_empty() {
        return Err(Error::InvalidParameter("empty codebook".into()));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, x) in f.iter().enumerate() {
        for (j, b) in w.iter().enumerate() {
            let cw = Codeword {
                positions: x.clone(),
                w: b.clone(),
            };
            let v = measure_codeword(s, k, &cw, noise, repeats, rng)?;
            if best.map_or(true, |(_, _, bv)| v > bv) {
                best = Some((i, j, v));
            }
        }
    }
    let (i, j, measured) = best.expect("non-empty codebook");
    let gain = codeword_gain(
        s,
        k,
        &Codeword {
            positions: f[i].clone(),
            w: w[j].clone(),
        },
    )?;
    Ok(TrainingOutcome {
        position_index: i,
        beam_index: j,
        measured,
        gain,
        measurements: f.len() * w.len() * repeats.max(1),
    })
}

/// Rectangular served area split into cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServedArea {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub cells: (usize, usize),
    /// Height assumed for users when building codewords.
    pub height: f64,
    pub power: f64,
}

impl ServedArea {
    fn validate(&self) -> Result<()> {
        if self.cells.0 == 0 || self.cells.1 == 0 {
            return Err(Error::InvalidParameter("served area needs cells".into()));
        }
        if !(self.x.1 > self.x.0 && self.y.1 > self.y.0) {
            return Err(Error::InvalidParameter("served area is empty".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::InvalidParameter("codeword power must be positive".into()));
        }
        Ok(())
    }

    fn step(&self) -> (f64, f64) {
        (
            (self.x.1 - self.x.0) / self.cells.0 as f64,
            (self.y.1 - self.y.0) / self.cells.1 as f64,
        )
    }

    /// Center of the index span `[lo, hi)` along x.
    fn x_center(&self, lo: usize, hi: usize) -> f64 {
        self.x.0 + 0.5 * (lo + hi) as f64 * self.step().0
    }

    fn y_center(&self, lo: usize, hi: usize) -> f64 {
        self.y.0 + 0.5 * (lo + hi) as f64 * self.step().1
    }
}

/// One PA per waveguide at `x`, with MRT towards an assumed user at `(x, y)`.
pub fn location_codeword(s: &Scenario, area: &ServedArea, x: f64, y: f64) -> Result<Codeword> {
    let target = UserPosition::new(x, y, area.height);
    let positions: Vec<Vec<f64>> = s
        .waveguides
        .iter()
        .map(|w| vec![x.clamp(0.0, w.length)])
        .collect();
    let row: Vec<C> = positions
        .iter()
        .zip(&s.waveguides)
        .map(|(p, w)| single_waveguide_gain(p, &[1.0], w, &target, &s.constants))
        .collect::<Result<_>>()?;
    let norm = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroChannel);
    }
    let scale = area.power.sqrt() / norm;
    Ok(Codeword {
        positions,
        w: row.iter().map(|v| v.conj() * scale).collect(),
    })
}

/// Training result over a served area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaOutcome {
    pub cell: (usize, usize),
    /// Location the selected codeword points at.
    pub location: (f64, f64),
    pub codeword: Codeword,
    pub measured: f64,
    pub gain: f64,
    pub measurements: usize,
}

/// Exhaustive search over all cell-center codewords.
pub fn area_exhaustive<R: Rng + ?Sized>(
    s: &Scenario,
    k: usize,
    area: &ServedArea,
    noise: f64,
    repeats: usize,
    rng: &mut R,
) -> Result<AreaOutcome> {
    area.validate()?;
    let mut best: Option<(usize, usize, f64, Codeword)> = None;
    for i in 0..area.cells.0 {
        let x = area.x_center(i, i + 1);
        for j in 0..area.cells.1 {
            let y = area.y_center(j, j + 1);
            let cw = location_codeword(s, area, x, y)?;
            let v = measure_codeword(s, k, &cw, noise, repeats, rng)?;
            if best.as_ref().map_or(true, |b| v > b.2) {
                best = Some((i, j, v, cw));
            }
        }
    }
    let (i, j, measured, codeword) = best.expect("non-empty area");
    Ok(AreaOutcome {
        cell: (i, j),
        location: (area.x_center(i, i + 1), area.y_center(j, j + 1)),
        gain: codeword_gain(s, k, &codeword)?,
        codeword,
        measured,
        measurements: area.cells.0 * area.cells.1 * repeats.max(1),
    })
}

/// Three-stage search: binary halving along x, then along y, then an
/// exhaustive `fine x fine` scan inside the selected cell.
pub fn beam_train_hierarchical<R: Rng + ?Sized>(
    s: &Scenario,
    k: usize,
    area: &ServedArea,
    fine: usize,
    noise: f64,
    rng: &mut R,
) -> Result<AreaOutcome> {
    area.validate()?;
    if fine == 0 {
        return Err(Error::InvalidParameter("fine grid needs points".into()));
    }
    let mut count = 0;
    let y_mid = area.y_center(0, area.cells.1);
    let (mut lo, mut hi) = (0, area.cells.0);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let a = location_codeword(s, area, area.x_center(lo, mid), y_mid)?;
        let b = location_codeword(s, area, area.x_center(mid, hi), y_mid)?;
        let ga = measure_codeword(s, k, &a, noise, 1, rng)?;
        let gb = measure_codeword(s, k, &b, noise, 1, rng)?;
        count += 2;
        if gb > ga {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    let x_cell = area.x_center(i, i + 1);
    let (mut lo, mut hi) = (0, area.cells.1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let a = location_codeword(s, area, x_cell, area.y_center(lo, mid))?;
        let b = location_codeword(s, area, x_cell, area.y_center(mid, hi))?;
        let ga = measure_codeword(s, k, &a, noise, 1, rng)?;
        let gb = measure_codeword(s, k, &b, noise, 1, rng)?;
        count += 2;
        if gb > ga {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let j = lo;
    let (sx, sy) = area.step();
    let (x0, y0) = (area.x.0 + i as f64 * sx, area.y.0 + j as f64 * sy);
    let mut best: Option<(f64, f64, f64, Codeword)> = None;
    for a in 0..fine {
        let x = x0 + (a as f64 + 0.5) * sx / fine as f64;
        for b in 0..fine {
            let y = y0 + (b as f64 + 0.5) * sy / fine as f64;
            let cw = location_codeword(s, area, x, y)?;
            let v = measure_codeword(s, k, &cw, noise, 1, rng)?;
            count += 1;
            if best.as_ref().map_or(true, |bb| v > bb.2) {
                best = Some((x, y, v, cw));
            }
        }
    }
    let (x, y, measured, codeword) = best.expect("non-empty fine grid");
    Ok(AreaOutcome {
        cell: (i, j),
        location: (x, y),
        gain: codeword_gain(s, k, &codeword)?,
        codeword,
        measured,
        measurements: count,
    })
}

/// Measurements used by the hierarchical search.
pub fn hierarchical_measurements(cells: (usize, usize), fine: usize) -> usize {
    let levels = |n: usize| {
        let mut n = n;
        let mut l = 0;
        while n > 1 {
            n -= n / 2;
            l += 1;
        }
        l
    };
    2 * levels(cells.0) + 2 * levels(cells.1) + fine * fine
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::discrete_grid;
    use crate::geometry::Waveguide;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constants() -> RfConstants {
        RfConstants::new(0.01, 1.4, 1e-12, 1.0).unwrap()
    }

    fn scenario(n: usize, users: Vec<UserPosition>) -> Scenario {
        let ys: Vec<f64> = if n == 1 {
            vec![0.0]
        } else {
            (0..n)
                .map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
                .collect()
        };
        let wgs = ys
            .iter()
            .map(|&y| Waveguide::new(y, 3.0, 10.0, 0.005).unwrap())
            .collect();
        Scenario::new(constants(), wgs, users).unwrap()
    }

    fn ports(s: &Scenario, m: usize) -> Vec<Vec<f64>> {
        s.waveguides
            .iter()
            .map(|w| discrete_grid(w, m).unwrap())
            .collect()
    }

    fn unit_pilots(t: usize) -> Vec<C> {
        (0..t)
            .map(|i| C::from_polar(1.0, 0.7 * i as f64 * i as f64))
            .collect()
    }

    #[test]
    fn pilot_matrix_has_rank_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=4 {
            let s = scenario(n, vec![UserPosition::new(3.0, 0.5, 0.0)]);
            let p = ports(&s, 6);
            for _ in 0..5 {
                let g = BlockDiag {
                    blocks: p
                        .iter()
                        .map(|x| {
                            let pw: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
                            let t: f64 = pw.iter().sum();
                            let pw: Vec<f64> = pw.iter().map(|v| v / t).collect();
                            waveguide_vector(x, &pw, &s.constants)
                        })
                        .collect(),
                };
                let pm = equivalent_pilot_matrix(&unit_pilots(8), &g).unwrap();
                assert_eq!(pm.matrix.shape(), (8 * n, 6 * n));
                assert_eq!(pm.rank, n);
                let h = port_channel(&s, &p, 0).unwrap();
                let y = receive_pilots(&g, &h, &unit_pilots(8), 0.0, &mut rng).unwrap();
                let lhs = vectorize(&y);
                let rhs = &pm.matrix * DVector::from_vec(h);
                assert!((&lhs - &rhs).norm() < 1e-12 * rhs.norm().max(1e-30));
            }
        }
    }

    #[test]
    fn plain_ls_is_not_unique() {
        let s = scenario(2, vec![UserPosition::new(3.0, 0.5, 0.0)]);
        let p = ports(&s, 4);
        let cfg = crate::channel::PinchConfig::equal_power(p.clone());
        let g = BlockDiag {
            blocks: cfg
                .waveguides
                .iter()
                .map(|w| waveguide_vector(&w.positions, &w.powers, &s.constants))
                .collect(),
        };
        let pm = equivalent_pilot_matrix(&unit_pilots(4), &g).unwrap();
        let h = port_channel(&s, &p, 0).unwrap();
        let y = &pm.matrix * DVector::from_vec(h);
        let demo = least_squares_ambiguity(&pm.matrix, &y).unwrap();
        assert!((&demo.minimum_norm - &demo.shifted).norm() > 0.5);
        assert!((demo.residual_minimum_norm - demo.residual_shifted).abs() < 1e-12);
    }

    #[test]
    fn sequential_ls_is_exact_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = scenario(3, vec![UserPosition::new(4.0, 1.0, 0.0)]);
        let p = ports(&s, 16);
        let h = port_channel(&s, &p, 0).unwrap();
        let est = ls_sequential(&p, &s.constants, &unit_pilots(4), &h, 0.0, &mut rng).unwrap();
        assert_eq!(est.slots, 16);
        assert!(nmse_db(&est.h, &h) < -120.0);
        assert!(est.residuals.iter().all(|&r| r < 1e-24));
    }

    #[test]
    fn sequential_ls_error_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = scenario(2, vec![UserPosition::new(4.0, 1.0, 0.0)]);
        let p = ports(&s, 4);
        let h = port_channel(&s, &p, 0).unwrap();
        let pilots = unit_pilots(3);
        let noise = 1e-9;
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let est = ls_sequential(&p, &s.constants, &pilots, &h, noise, &mut rng).unwrap();
            total += est
                .h
                .iter()
                .zip(&h)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        }
        let mc = total / trials as f64;
        let formula = ls_sequential_mse(&p, &pilots, noise).unwrap();
        assert_relative_eq!(mc, formula, max_relative = 0.05);
    }

    fn sparse_trial(seed: u64, k: usize, t: usize) -> (bool, OmpResult) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = scenario(2, vec![UserPosition::new(1.0, 0.0, 0.0)]);
        let p = ports(&s, 16);
        let dict = Dictionary::dft(32).unwrap();
        let mut support: Vec<usize> = Vec::new();
        while support.len() < k {
            let l = rng.gen_range(0..32);
            if !support.contains(&l) {
                support.push(l);
            }
        }
        let mut x = DVector::zeros(32);
        for &l in &support {
            x[l] = C::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(0.0..6.28));
        }
        let h: Vec<C> = (&dict.psi * x).iter().cloned().collect();
        let patterns = random_patterns(&p, &s.constants, t, &mut rng).unwrap();
        let a = sensing_matrix(&patterns, &vec![C::new(1.0, 0.0); t]).unwrap();
        let y = measure(&a, &h, 0.0, &mut rng);
        let out = omp_recover(&y, &a, &dict, OmpStop::Sparsity(k)).unwrap();
        let mut found = out.support.clone();
        found.sort();
        support.sort();
        (found == support, out)
    }

    #[test]
    fn omp_recovers_sparse_support() {
        let hits = (0..100).filter(|&i| sparse_trial(100 + i, 3, 6).0).count();
        assert!(hits >= 95, "{hits}");
        let (_, out) = sparse_trial(7, 3, 6);
        for w in out.residual_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn omp_single_atom_and_residual_rule() {
        let (ok, out) = sparse_trial(11, 1, 4);
        assert!(ok);
        assert_eq!(out.support.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = scenario(1, vec![UserPosition::new(4.0, 0.5, 0.0)]);
        let p = ports(&s, 32);
        let dict = Dictionary::planar(&p, &s.constants, 128).unwrap();
        assert!(dict.coherence() < 1.0);
        let h = port_channel(&s, &p, 0).unwrap();
        let patterns = random_patterns(&p, &s.constants, 24, &mut rng).unwrap();
        let a = sensing_matrix(&patterns, &vec![C::new(1.0, 0.0); 24]).unwrap();
        let noise = 1e-12;
        let y = measure(&a, &h, noise, &mut rng);
        let eps = (noise * y.len() as f64).sqrt() * 1.5;
        let out = omp_recover(&y, &a, &dict, OmpStop::Residual(eps)).unwrap();
        assert!(out.residual <= eps || out.support.len() == 24);
    }

    fn segment(start: f64, count: usize, pitch: f64) -> Vec<f64> {
        (0..count).map(|i| start + pitch * i as f64).collect()
    }

    #[test]
    fn parameter_sense_recovers_position() {
        let c = constants();
        let p = segment(3.84, 64, 0.005);
        let a = port_selection_matrix(&p, &(0..64).collect::<Vec<_>>(), &c).unwrap();
        for (x_r, zeta) in [(4.0, 3.0), (4.0123457, 3.2109876), (3.9071, 2.7333)] {
            let h = los_model(&p, x_r, zeta, c.eta, c.wavenumber());
            let y = &a * DVector::from_vec(h.clone());
            let search = ParamSearch::new((3.5, 4.5), (2.0, 4.0));
            let out = parameter_sense(&y, &a, &p, &c, &search).unwrap();
            assert!((out.x_r - x_r).abs() < 1e-4, "{} vs {x_r}", out.x_r);
            let err: f64 = p
                .iter()
                .zip(&h)
                .map(|(&x, hv)| (out.channel_at(x) - hv).norm_sqr())
                .sum();
            let norm: f64 = h.iter().map(|v| v.norm_sqr()).sum();
            assert!(err / norm < 1e-6, "{}", err / norm);
        }
    }

    #[test]
    fn parameter_sense_improves_with_more_ports() {
        let c = constants();
        let p = segment(3.84, 64, 0.005);
        let zeta = 3.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut search = ParamSearch::new((3.8, 4.2), (2.5, 3.5));
        search.coarse = (80, 11);
        search.rounds = 3;
        let mut rmse = Vec::new();
        for count in [4usize, 16, 64] {
            let active: Vec<usize> = (0..count).map(|i| i * 64 / count).collect();
            let a = port_selection_matrix(&p, &active, &c).unwrap();
            let mut err = 0.0;
            let trials = 40;
            for _ in 0..trials {
                let x_r = rng.gen_range(3.9..4.1);
                let h = los_model(&p, x_r, zeta, c.eta, c.wavenumber());
                let noise = (c.eta / zeta).powi(2) / 100.0;
                let y = measure(&a, &h, noise, &mut rng);
                let out = parameter_sense(&y, &a, &p, &c, &search).unwrap();
                err += (out.x_r - x_r).powi(2);
            }
            rmse.push((err / trials as f64).sqrt());
        }
        assert!(rmse[0] > rmse[1] && rmse[1] > rmse[2], "{rmse:?}");
    }

    #[test]
    fn exhaustive_noiseless_picks_true_best() {
        let s = scenario(2, vec![UserPosition::new(6.3, 0.7, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<Vec<Vec<f64>>> = (0..20)
            .map(|i| vec![vec![0.5 * i as f64]; 2])
            .collect();
        let w: Vec<Vec<C>> = (0..8)
            .map(|j| {
                let ph = j as f64 * std::f64::consts::PI / 4.0;
                vec![C::new(0.5f64.sqrt(), 0.0), C::from_polar(0.5f64.sqrt(), ph)]
            })
            .collect();
        let out = beam_train_exhaustive(&s, 0, &f, &w, 0.0, 1, &mut rng).unwrap();
        assert_eq!(out.measurements, 160);
        let mut best = 0.0;
        for x in &f {
            for b in &w {
                let g = codeword_gain(&s, 0, &Codeword { positions: x.clone(), w: b.clone() }).unwrap();
                best = f64::max(best, g);
            }
        }
        assert_eq!(out.gain, best);
        assert_eq!(out.measured, best);
    }

    #[test]
    fn exhaustive_accuracy_grows_with_repeats() {
        let s = scenario(1, vec![UserPosition::new(5.1, 0.3, 0.0)]);
        let f: Vec<Vec<Vec<f64>>> = (0..8).map(|i| vec![vec![4.0 + 0.3 * i as f64]]).collect();
        let w = vec![vec![C::new(1.0, 0.0)]];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = beam_train_exhaustive(&s, 0, &f, &w, 0.0, 1, &mut rng).unwrap();
        let noise = truth.gain / 10.0;
        let mut acc = [0usize; 2];
        for (slot, reps) in [1usize, 3].iter().enumerate() {
            for _ in 0..400 {
                let out = beam_train_exhaustive(&s, 0, &f, &w, noise, *reps, &mut rng).unwrap();
                if out.position_index == truth.position_index {
                    acc[slot] += 1;
                }
            }
        }
        assert!(acc[1] + 20 >= acc[0], "{acc:?}");
    }

    fn area(cells: usize) -> ServedArea {
        ServedArea {
            x: (0.0, 10.0),
            y: (-2.0, 2.0),
            cells: (cells, cells),
            height: 0.0,
            power: 1.0,
        }
    }

    #[test]
    fn hierarchical_matches_exhaustive_on_single_waveguide() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let u = UserPosition::new(rng.gen_range(0.5..9.5), rng.gen_range(-1.5..1.5), 0.0);
            let s = scenario(1, vec![u]);
            let a = area(16);
            let ex = area_exhaustive(&s, 0, &a, 0.0, 1, &mut rng).unwrap();
            let hi = beam_train_hierarchical(&s, 0, &a, 4, 0.0, &mut rng).unwrap();
            assert_eq!(hi.cell.0, ex.cell.0);
            assert!(hi.gain >= 0.99 * ex.gain);
            assert_eq!(hi.measurements, hierarchical_measurements((16, 16), 4));
        }
    }

    #[test]
    fn hierarchical_budget_and_degenerate_area() {
        assert_eq!(hierarchical_measurements((64, 64), 8), 88);
        assert_eq!(hierarchical_measurements((1, 1), 1), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = scenario(2, vec![UserPosition::new(5.0, 0.2, 0.0)]);
        let a = area(1);
        let ex = area_exhaustive(&s, 0, &a, 0.0, 1, &mut rng).unwrap();
        let hi = beam_train_hierarchical(&s, 0, &a, 1, 0.0, &mut rng).unwrap();
        assert_eq!(ex.measurements, 1);
        assert_eq!(hi.measurements, 1);
        assert_eq!(hi.gain, ex.gain);
    }

    #[test]
    fn hierarchical_full_grid_single_waveguide() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..3 {
            let u = UserPosition::new(rng.gen_range(0.5..9.5), rng.gen_range(-1.5..1.5), 0.0);
            let s = scenario(1, vec![u]);
            let a = area(64);
            let ex = area_exhaustive(&s, 0, &a, 0.0, 1, &mut rng).unwrap();
            let hi = beam_train_hierarchical(&s, 0, &a, 8, 0.0, &mut rng).unwrap();
            assert!(hi.measurements * 20 <= ex.measurements);
            assert!(hi.gain >= 0.99 * ex.gain);
        }
    }
}
