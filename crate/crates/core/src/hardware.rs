//! Power radiation hardware: directional-coupler splits, cascaded radiation
//! and the three-port scattering model with imperfect matching.

use std::path::Path;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::{Error, Result};

pub type Mat3 = Matrix3<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Condition-number guard for the 3x3 inverse.
pub const MAX_CONDITION: f64 = 1e12;

/// Default waveguide attenuation, dB/m.
pub const DEFAULT_LOSS_DB_PER_M: f64 = 0.01;

/// Coupled-mode parameters of one PA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerSpec {
    /// Mode coefficient Omega_0, 1/m.
    pub omega0: f64,
    /// Decay constant gamma_0, 1/m.
    pub gamma0: f64,
    pub n_clad: f64,
    /// Waveguide-to-PA spacing S_m, m.
    pub spacing: f64,
    /// Coupling length L_m, m.
    pub length: f64,
}

/// `kappa = Omega_0 exp(-sqrt(gamma_0^2 - 4 pi^2 n_clad^2 / lambda^2) S)`.
pub fn coupling_coefficient(spec: &CouplerSpec, wavelength: f64) -> Result<f64> {
    let k = 2.0 * std::f64::consts::PI * spec.n_clad / wavelength;
    let arg = spec.gamma0 * spec.gamma0 - k * k;
    if arg < 0.0 {
        return Err(Error::ImaginaryExponent);
    }
    if spec.omega0 <= 0.0 || spec.spacing < 0.0 {
        return Err(Error::InvalidParameter(format!("coupler {spec:?}")));
    }
    Ok(spec.omega0 * (-arg.sqrt() * spec.spacing).exp())
}

/// Power left in the waveguide and coupled into the PA: `(cos^2, sin^2)` of `kappa L`.
pub fn coupler_split(kappa: f64, length: f64) -> (f64, f64) {
    let (s, c) = (kappa * length).sin_cos();
    (c * c, s * s)
}

/// Radiated fractions of a cascade and the power left in the guide.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub powers: Vec<f64>,
    pub residual: f64,
}

/// `P_m = delta_m^2 prod_{i<m} (1 - delta_i^2)`.
pub fn cascade_radiation(delta: &[f64]) -> Result<Cascade> {
    if delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::InvalidParameter("delta outside [0, 1]".into()));
    }
    let mut remaining = 1.0;
    let mut powers = Vec::with_capacity(delta.len());
    for d in delta {
        let d2 = d * d;
        powers.push(d2 * remaining);
        remaining *= 1.0 - d2;
    }
    Ok(Cascade {
        powers,
        residual: remaining,
    })
}

/// Coupling ratios giving `P_eq = 1/M` at every PA.
pub fn equal_power_deltas(m: usize) -> Vec<f64> {
    equal_power_deltas_with(m, 1.0 / m as f64)
}

/// Coupling ratios `delta_m = sqrt(P_eq / (1 - (m - 1) P_eq))` for a chosen `P_eq`.
pub fn equal_power_deltas_with(m: usize, p_eq: f64) -> Vec<f64> {
    (0..m)
        .map(|i| (p_eq / (1.0 - i as f64 * p_eq)).clamp(0.0, 1.0).sqrt())
        .collect()
}

/// Geometric profile `P_m = delta^2 (1 - delta^2)^(m-1)`.
pub fn proportional_power(delta: f64, m: usize) -> Vec<f64> {
    let d2 = delta * delta;
    (0..m).map(|i| d2 * (1.0 - d2).powi(i as i32)).collect()
}

/// Complex propagation coefficient `alpha + j beta` of the guided mode.
pub fn propagation_coefficient(loss_db_per_m: f64, n_eff: f64, wavelength: f64) -> Complex64 {
    let alpha = loss_db_per_m * std::f64::consts::LN_10 / 20.0;
    Complex64::new(alpha, 2.0 * std::f64::consts::PI * n_eff / wavelength)
}

/// Three-port PA description with terminations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringSpec {
    pub s: Mat3,
    pub gamma_s: Complex64,
    pub gamma_l: Complex64,
    pub gamma_r: Complex64,
    /// Propagation coefficient gamma_G, 1/m.
    pub gamma_g: Complex64,
    pub l1: f64,
    pub l2: f64,
}

impl ScatteringSpec {
    /// Matched terminations around `s`.
    pub fn matched(s: Mat3, gamma_g: Complex64, l1: f64, l2: f64) -> Self {
        Self {
            s,
            gamma_s: ZERO,
            gamma_l: ZERO,
            gamma_r: ZERO,
            gamma_g,
            l1,
            l2,
        }
    }

    /// Reflection matrix `diag(G_S e^{-2 g L1}, G_L e^{-2 g L2}, G_R)`.
    pub fn reflection(&self) -> Mat3 {
        Mat3::from_diagonal(&nalgebra::Vector3::new(
            self.gamma_s * (-2.0 * self.gamma_g * self.l1).exp(),
            self.gamma_l * (-2.0 * self.gamma_g * self.l2).exp(),
            self.gamma_r,
        ))
    }
}

/// Matched lossless coupler: port 1 in, port 2 through, port 3 radiating.
pub fn ideal_coupler(kappa: f64, length: f64) -> Mat3 {
    let (s, c) = (kappa * length).sin_cos();
    let t = Complex64::new(c, 0.0);
    let r = Complex64::new(0.0, -s);
    Mat3::new(ZERO, t, r, t, ZERO, ZERO, r, ZERO, ZERO)
}

/// Inverse through the adjugate, refusing ill-conditioned inputs.
pub fn inverse3(a: &Mat3) -> Result<Mat3> {
    let det = a.determinant();
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
        a[(r0, c0)] * a[(r1, c1)] - a[(r0, c1)] * a[(r1, c0)]
    };
    let adj = Mat3::new(
        cof(1, 2, 1, 2),
        -cof(0, 2, 1, 2),
        cof(0, 1, 1, 2),
        -cof(1, 2, 0, 2),
        cof(0, 2, 0, 2),
        -cof(0, 1, 0, 2),
        cof(1, 2, 0, 1),
        -cof(0, 2, 0, 1),
        cof(0, 1, 0, 1),
    );
    if det.norm() == 0.0 || !det.is_finite() {
        return Err(Error::SingularMatrix(f64::INFINITY));
    }
    let inv = adj / det;
    let cond = frobenius(a) * frobenius(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::SingularMatrix(cond));
    }
    Ok(inv)
}

fn frobenius(a: &Mat3) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Radiated-to-source voltage ratio `T` with `y_rad = T s`.
pub fn multiport_transfer(spec: &ScatteringSpec) -> Result<Complex64> {
    let eye = Mat3::identity();
    let inv = inverse3(&(eye - spec.reflection() * spec.s))?;
    let col = inv.column(0).into_owned();
    let num = ((eye + spec.s) * col)[2];
    let round_trip = (-2.0 * spec.gamma_g * spec.l1).exp();
    let den = ((eye + spec.s * round_trip) * col)[0];
    if den.norm() == 0.0 {
        return Err(Error::SingularMatrix(f64::INFINITY));
    }
    Ok((-spec.gamma_g * spec.l1).exp() * num / den)
}

/// Energy-conservation check on a scattering matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringCheck {
    pub pass: bool,
    pub sigma_max: f64,
}

pub fn validate_scattering(s: &Mat3) -> ScatteringCheck {
    let sigma_max = s
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    ScatteringCheck {
        pass: sigma_max <= 1.0 + 1e-12,
        sigma_max,
    }
}

/// Reads a 3x3 complex matrix stored as rows of `re,im` pairs.
///
/// Accepts three rows of six numbers or nine rows of two numbers.
pub fn parse_scattering_csv(text: &str) -> Result<Mat3> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut values = Vec::with_capacity(18);
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        for field in rec.iter().filter(|f| !f.is_empty()) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Config(format!("line {}: bad number '{field}'", line + 1)))?;
            values.push(v);
        }
    }
    if values.len() != 18 {
        return Err(Error::Config(format!(
            "expected 18 numbers (9 re,im pairs), found {}",
            values.len()
        )));
    }
    Ok(Mat3::from_fn(|r, c| {
        let i = 2 * (3 * r + c);
        Complex64::new(values[i], values[i + 1])
    }))
}

pub fn load_scattering_csv(path: impl AsRef<Path>) -> Result<Mat3> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_scattering_csv(&text)
}

/// Writes a matrix in the format read by [`parse_scattering_csv`].
pub fn format_scattering_csv(s: &Mat3) -> String {
    let mut out = String::new();
    for r in 0..3 {
        let row: Vec<String> = (0..3)
            .map(|c| format!("{:?},{:?}", s[(r, c)].re, s[(r, c)].im))
            .collect();
        out += &row.join(",");
        out.push('\n');
    }
    out
}

/// Chain element: scattering matrix plus its radiation-load reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainElement {
    pub s: Mat3,
    pub gamma_r: Complex64,
}

/// Radiated voltage of every PA in a chain fed with unit amplitude at `x = 0`.
///
/// Blocks are cascaded without re-reflection: each PA sees a matched
/// downstream guide and a matched upstream source.
pub fn chain_radiation(
    elements: &[ChainElement],
    positions: &[f64],
    gamma_g: Complex64,
) -> Result<Vec<Complex64>> {
    if elements.len() != positions.len() {
        return Err(Error::DimensionMismatch {
            expected: positions.len(),
            got: elements.len(),
        });
    }
    let eye = Mat3::identity();
    let mut incident = ONE;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(elements.len());
    for (e, &x) in elements.iter().zip(positions) {
        incident *= (-gamma_g * (x - prev)).exp();
        prev = x;
        let refl = Mat3::from_diagonal(&nalgebra::Vector3::new(ZERO, ZERO, e.gamma_r));
        let inv = inverse3(&(eye - refl * e.s))?;
        let v_plus = inv.column(0).into_owned();
        let v_minus = e.s * v_plus;
        out.push(incident * (v_plus[2] + v_minus[2]));
        incident *= v_minus[1];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn coupling_examples() {
        let mut spec = CouplerSpec {
            omega0: 100.0,
            gamma0: 500.0,
            n_clad: 0.0,
            spacing: 0.0,
            length: 0.01,
        };
        assert_eq!(coupling_coefficient(&spec, 0.01).unwrap(), 100.0);
        spec.spacing = 0.002;
        let k1 = coupling_coefficient(&spec, 0.01).unwrap();
        assert_relative_eq!(k1, 100.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(k1, 36.79, epsilon = 5e-3);
        spec.spacing = 0.004;
        let k2 = coupling_coefficient(&spec, 0.01).unwrap();
        assert_relative_eq!(k2 / 100.0, (k1 / 100.0).powi(2), epsilon = 1e-15);
        spec.n_clad = 1.0;
        spec.gamma0 = 100.0;
        assert_eq!(
            coupling_coefficient(&spec, 0.01),
            Err(Error::ImaginaryExponent)
        );
    }

    #[test]
    fn split_examples() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert_relative_eq!(coupler_split(1.0, half_pi).1, 1.0, epsilon = 1e-15);
        assert_eq!(coupler_split(1.0, 0.0).1, 0.0);
        assert_relative_eq!(coupler_split(1.0, half_pi / 2.0).1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cascade_examples() {
        assert_eq!(
            cascade_radiation(&[1.0, 0.7, 0.2]).unwrap().powers,
            vec![1.0, 0.0, 0.0]
        );
        let h = 0.5f64.sqrt();
        let p = cascade_radiation(&[h, h, h]).unwrap();
        for (a, b) in p.powers.iter().zip([0.5, 0.25, 0.125]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_relative_eq!(p.residual, 0.125, epsilon = 1e-15);
        let p = cascade_radiation(&equal_power_deltas(5)).unwrap();
        for v in p.powers {
            assert_relative_eq!(v, 0.2, epsilon = 1e-15);
        }
        assert!(cascade_radiation(&[1.2]).is_err());
    }

    #[test]
    fn equal_power_examples() {
        assert_eq!(equal_power_deltas(1), vec![1.0]);
        let d = equal_power_deltas(2);
        assert_relative_eq!(d[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(d[1], 1.0, epsilon = 1e-15);
        for v in cascade_radiation(&equal_power_deltas(4)).unwrap().powers {
            assert_relative_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn proportional_examples() {
        let p = proportional_power(0.5f64.sqrt(), 3);
        for (a, b) in p.iter().zip([0.5, 0.25, 0.125]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(proportional_power(1.0, 3), vec![1.0, 0.0, 0.0]);
        let d = 0.3f64.sqrt();
        let p = proportional_power(d, 4);
        let q = cascade_radiation(&[d; 4]).unwrap().powers;
        for (a, b) in p.iter().zip(q) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn multiport_examples() {
        let kl = 0.7f64;
        let gamma = c(0.0, 2.0 * std::f64::consts::PI * 1.4 / 0.01);
        let spec = ScatteringSpec::matched(ideal_coupler(1.0, kl), gamma, 0.37, 0.2);
        let t = multiport_transfer(&spec).unwrap();
        assert_relative_eq!(t.norm(), kl.sin(), epsilon = 1e-12);
        let zero = ScatteringSpec::matched(Mat3::zeros(), gamma, 0.3, 0.1);
        assert_eq!(multiport_transfer(&zero).unwrap(), ZERO);
    }

    #[test]
    fn singular_system_is_reported() {
        // Full reflection at the radiation port against a unit self-loop.
        let mut s = Mat3::zeros();
        s[(2, 2)] = ONE;
        s[(2, 0)] = c(0.1, 0.0);
        let spec = ScatteringSpec {
            s,
            gamma_s: ZERO,
            gamma_l: ZERO,
            gamma_r: ONE,
            gamma_g: ZERO,
            l1: 0.0,
            l2: 0.0,
        };
        assert!(matches!(
            multiport_transfer(&spec),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn validate_examples() {
        assert!(validate_scattering(&Mat3::identity()).pass);
        assert!(!validate_scattering(&(Mat3::identity() * c(1.1, 0.0))).pass);
        let a = Mat3::new(
            c(0.3, 0.1),
            c(-1.2, 0.4),
            c(0.5, 0.0),
            c(0.9, -0.7),
            c(0.2, 0.2),
            c(-0.3, 1.1),
            c(0.0, 0.6),
            c(1.4, -0.2),
            c(-0.8, 0.5),
        );
        let q = a.qr().q();
        let check = validate_scattering(&q);
        assert!(check.pass);
        assert_relative_eq!(check.sigma_max, 1.0, epsilon = 1e-12);
        assert!(validate_scattering(&ideal_coupler(3.0, 0.2)).pass);
    }

    #[test]
    fn csv_round_trip() {
        let s = ideal_coupler(2.0, 0.3);
        let back = parse_scattering_csv(&format_scattering_csv(&s)).unwrap();
        assert_eq!(back, s);
        let nine: String = (0..9).map(|i| format!("{i}.0,-{i}.5\n")).collect();
        let m = parse_scattering_csv(&nine).unwrap();
        assert_eq!(m[(2, 2)], c(8.0, -8.5));
        assert!(parse_scattering_csv("1,2,3\n").is_err());
    }

    #[test]
    fn chain_of_ideal_couplers_matches_cascade() {
        let deltas = equal_power_deltas(4);
        let elems: Vec<ChainElement> = deltas
            .iter()
            .map(|d| ChainElement {
                s: ideal_coupler(d.asin(), 1.0),
                gamma_r: ZERO,
            })
            .collect();
        let y = chain_radiation(&elems, &[0.5, 1.0, 1.5, 2.0], c(0.0, 3.0)).unwrap();
        let p = cascade_radiation(&deltas).unwrap().powers;
        for (yi, pi) in y.iter().zip(p) {
            assert_relative_eq!(yi.norm_sqr(), pi, epsilon = 1e-12);
        }
    }

    #[test]
    fn lossy_guide_attenuates() {
        let g = propagation_coefficient(DEFAULT_LOSS_DB_PER_M, 1.4, 0.01);
        let amp = (-g * 100.0).exp().norm();
        assert_relative_eq!(20.0 * amp.log10(), -1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn split_conserves_energy(k in 0.0..1e3f64, l in 0.0..1.0f64) {
            let (g, p) = coupler_split(k, l);
            prop_assert!((g + p - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn cascade_conserves_energy(d in proptest::collection::vec(0.0..=1.0f64, 1..32)) {
            let c = cascade_radiation(&d).unwrap();
            let total: f64 = c.powers.iter().sum::<f64>() + c.residual;
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(c.powers.iter().sum::<f64>() <= 1.0 + 1e-12);
        }

        #[test]
        fn kappa_decreases_with_spacing(s1 in 0.0..0.01f64, ds in 1e-5..0.01f64) {
            let spec = CouplerSpec { omega0: 50.0, gamma0: 900.0, n_clad: 1.0, spacing: s1, length: 0.01 };
            let far = CouplerSpec { spacing: s1 + ds, ..spec };
            prop_assert!(coupling_coefficient(&far, 0.01).unwrap() < coupling_coefficient(&spec, 0.01).unwrap());
        }
    }
}
