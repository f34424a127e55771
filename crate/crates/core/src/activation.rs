//! Feasible PA placements for discrete, continuous and semi-continuous activation.

use crate::geometry::Waveguide;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationMode {
    /// Fixed grid of `M_total` candidate ports.
    Discrete(usize),
    /// Free positions on `[0, x_max]` with minimum spacing.
    Continuous,
    /// PA `m` sits at `m * pitch + u_m` with `0 <= u_m <= u_max`.
    SemiContinuous(f64),
}

impl ActivationMode {
    /// Parses the config key `activation = "discrete" | "continuous" | "semicontinuous"`.
    pub fn from_key(key: &str, grid_points: usize, u_max: f64) -> Result<Self> {
        match key.trim().to_ascii_lowercase().as_str() {
            "discrete" => Ok(Self::Discrete(grid_points)),
            "continuous" => Ok(Self::Continuous),
            "semicontinuous" | "semi-continuous" => Ok(Self::SemiContinuous(u_max)),
            other => Err(Error::Config(format!("unknown activation mode '{other}'"))),
        }
    }
}

/// First violated constraint, by antenna index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Unsorted(usize),
    Range(usize),
    Spacing(usize),
    OffGrid(usize),
    Offset(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub violation: Option<Violation>,
}

impl Feasibility {
    fn ok() -> Self {
        Self {
            feasible: true,
            violation: None,
        }
    }

    fn fail(v: Violation) -> Self {
        Self {
            feasible: false,
            violation: Some(v),
        }
    }
}

/// Candidate ports `m x_max / (M_total - 1)`.
pub fn discrete_grid(w: &Waveguide, m_total: usize) -> Result<Vec<f64>> {
    if m_total < 2 {
        return Err(Error::InvalidParameter("discrete grid needs at least 2 ports".into()));
    }
    let pitch = w.length / (m_total - 1) as f64;
    if pitch < w.min_spacing * (1.0 - 1e-12) {
        return Err(Error::PitchViolation {
            pitch,
            min_spacing: w.min_spacing,
        });
    }
    Ok((0..m_total)
        .map(|m| m as f64 * w.length / (m_total - 1) as f64)
        .collect())
}

fn tolerance(w: &Waveguide) -> f64 {
    1e-9 * w.length.max(1.0)
}

fn semi_pitch(w: &Waveguide, m: usize) -> f64 {
    if m > 1 {
        w.length / (m - 1) as f64
    } else {
        0.0
    }
}

/// Checks range, spacing and mode-specific constraints.
pub fn is_feasible(x: &[f64], w: &Waveguide, mode: ActivationMode) -> Feasibility {
    let tol = tolerance(w);
    for i in 1..x.len() {
        if x[i] < x[i - 1] {
            return Feasibility::fail(Violation::Unsorted(i));
        }
    }
    match mode {
        ActivationMode::SemiContinuous(u_max) => {
            let pitch = semi_pitch(w, x.len());
            for (i, &xi) in x.iter().enumerate() {
                let u = xi - i as f64 * pitch;
                if u < -tol || u > u_max + tol {
                    return Feasibility::fail(Violation::Offset(i));
                }
            }
        }
        _ => {
            for (i, &xi) in x.iter().enumerate() {
                if xi < -tol || xi > w.length + tol {
                    return Feasibility::fail(Violation::Range(i));
                }
            }
        }
    }
    for i in 1..x.len() {
        if x[i] - x[i - 1] < w.min_spacing - tol {
            return Feasibility::fail(Violation::Spacing(i));
        }
    }
    if let ActivationMode::Discrete(m_total) = mode {
        let Ok(grid) = discrete_grid(w, m_total) else {
            return Feasibility::fail(Violation::OffGrid(0));
        };
        let pitch = grid[1] - grid[0];
        for (i, &xi) in x.iter().enumerate() {
            let k = (xi / pitch).round();
            if (xi - k * pitch).abs() > tol {
                return Feasibility::fail(Violation::OffGrid(i));
            }
        }
    }
    Feasibility::ok()
}

/// Euclidean projection of a sorted `x_raw` onto the feasible set of `mode`.
pub fn project_feasible(x_raw: &[f64], w: &Waveguide, mode: ActivationMode) -> Result<Vec<f64>> {
    let m = x_raw.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    if is_feasible(x_raw, w, mode).feasible {
        return Ok(x_raw.to_vec());
    }
    let d = w.min_spacing;
    match mode {
        ActivationMode::Continuous => {
            if (m - 1) as f64 * d > w.length * (1.0 + 1e-12) {
                return Err(Error::Infeasible {
                    count: m,
                    min_spacing: d,
                    length: w.length,
                });
            }
            project_gapped(x_raw, &vec![0.0; m], &vec![w.length; m], d)
        }
        ActivationMode::SemiContinuous(u_max) => {
            let pitch = semi_pitch(w, m);
            let lo: Vec<f64> = (0..m).map(|i| i as f64 * pitch).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + u_max).collect();
            project_gapped(x_raw, &lo, &hi, d)
        }
        ActivationMode::Discrete(m_total) => project_discrete(x_raw, &discrete_grid(w, m_total)?),
    }
}

/// Solves `min |x - r|^2` s.t. `lo_i <= x_i <= hi_i`, `x_{i+1} - x_i >= gap`.
///
/// With `z_i = x_i - i gap` this is isotonic regression with box bounds,
/// solved by pool-adjacent-violators where each block takes its clamped mean.
pub fn project_gapped(r: &[f64], lo: &[f64], hi: &[f64], gap: f64) -> Result<Vec<f64>> {
    let m = r.len();
    let shift = |i: usize| i as f64 * gap;
    let z: Vec<f64> = (0..m).map(|i| r[i] - shift(i)).collect();
    let mut lz: Vec<f64> = (0..m).map(|i| lo[i] - shift(i)).collect();
    let mut hz: Vec<f64> = (0..m).map(|i| hi[i] - shift(i)).collect();
    for i in 1..m {
        lz[i] = lz[i].max(lz[i - 1]);
    }
    for i in (0..m - 1).rev() {
        hz[i] = hz[i].min(hz[i + 1]);
    }
    if (0..m).any(|i| lz[i] > hz[i] + 1e-12 * (1.0 + hz[i].abs())) {
        return Err(Error::Infeasible {
            count: m,
            min_spacing: gap,
            length: hi[m - 1] - lo[0],
        });
    }
    let iso = bounded_pava(&z, &lz, &hz);
    Ok((0..m).map(|i| iso[i] + shift(i)).collect())
}

struct Block {
    sum: f64,
    len: usize,
    lo: f64,
    hi: f64,
}

impl Block {
    fn value(&self) -> f64 {
        (self.sum / self.len as f64).max(self.lo).min(self.hi)
    }
}

fn bounded_pava(y: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<Block> = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        blocks.push(Block {
            sum: y[i],
            len: 1,
            lo: lo[i],
            hi: hi[i],
        });
        while blocks.len() > 1 && blocks[blocks.len() - 2].value() > blocks[blocks.len() - 1].value() {
            let b = blocks.pop().unwrap();
            let a = blocks.last_mut().unwrap();
            a.sum += b.sum;
            a.len += b.len;
            a.lo = a.lo.max(b.lo);
            a.hi = a.hi.min(b.hi);
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for b in blocks {
        let v = b.value();
        out.extend(std::iter::repeat(v).take(b.len));
    }
    out
}

/// Unweighted isotonic (non-decreasing) regression.
pub fn pava(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    bounded_pava(y, &vec![f64::NEG_INFINITY; n], &vec![f64::INFINITY; n])
}

/// Nearest assignment of sorted positions to strictly increasing grid ports.
fn project_discrete(x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let (m, g) = (x.len(), grid.len());
    if m > g {
        return Err(Error::Infeasible {
            count: m,
            min_spacing: grid[1] - grid[0],
            length: grid[g - 1],
        });
    }
    // cost[i][j]: best cost placing antennas 0..=i with antenna i on port j.
    let inf = f64::INFINITY;
    let mut cost = vec![vec![inf; g]; m];
    let mut from = vec![vec![usize::MAX; g]; m];
    for j in 0..g {
        cost[0][j] = (x[0] - grid[j]).powi(2);
    }
    for i in 1..m {
        let (mut best, mut arg) = (inf, usize::MAX);
        for j in 0..g {
            if j >= 1 && cost[i - 1][j - 1] < best {
                best = cost[i - 1][j - 1];
                arg = j - 1;
            }
            if best < inf {
                cost[i][j] = best + (x[i] - grid[j]).powi(2);
                from[i][j] = arg;
            }
        }
    }
    let mut j = (0..g)
        .filter(|&j| cost[m - 1][j] < inf)
        .min_by(|&a, &b| cost[m - 1][a].total_cmp(&cost[m - 1][b]))
        .expect("m <= g guarantees a path");
    let mut out = vec![0.0; m];
    for i in (0..m).rev() {
        out[i] = grid[j];
        if i > 0 {
            j = from[i][j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn wg(length: f64, d: f64) -> Waveguide {
        Waveguide::new(0.0, 3.0, length, d).unwrap()
    }

    #[test]
    fn grid_examples() {
        let w = wg(10.0, 0.5);
        assert_eq!(
            discrete_grid(&w, 11).unwrap(),
            (0..11).map(|i| i as f64).collect::<Vec<_>>()
        );
        assert_eq!(discrete_grid(&w, 2).unwrap(), vec![0.0, 10.0]);
        let g = discrete_grid(&wg(7.5, 0.5), 6).unwrap();
        assert_relative_eq!(g[1] - g[0], 1.5, epsilon = 1e-15);
        assert_relative_eq!(g[5], 7.5, epsilon = 1e-15);
        assert!(matches!(
            discrete_grid(&wg(1.0, 0.5), 4),
            Err(Error::PitchViolation { .. })
        ));
    }

    #[test]
    fn feasibility_examples() {
        let w = wg(10.0, 0.2);
        assert!(is_feasible(&[0.0, 0.2], &w, ActivationMode::Continuous).feasible);
        let f = is_feasible(&[0.0, 0.198], &w, ActivationMode::Continuous);
        assert_eq!(f.violation, Some(Violation::Spacing(1)));
        let u_max = 0.5;
        let w2 = wg(4.0, 0.5);
        // pitch 1.0 >= 0.5 + 0.5; worst case: u = u_max followed by u = 0.
        let x: Vec<f64> = [u_max, 0.0, u_max, 0.0, u_max]
            .iter()
            .enumerate()
            .map(|(i, u)| i as f64 + u)
            .collect();
        assert!(is_feasible(&x, &w2, ActivationMode::SemiContinuous(u_max)).feasible);
        let rising: Vec<f64> = (0..5).map(|i| i as f64 + u_max * i as f64 / 4.0).collect();
        assert!(is_feasible(&rising, &w2, ActivationMode::SemiContinuous(u_max)).feasible);
        let bad = [0.0, 1.7, 2.0, 3.0, 4.0];
        assert_eq!(
            is_feasible(&bad, &w2, ActivationMode::SemiContinuous(u_max)).violation,
            Some(Violation::Offset(1))
        );
        assert_eq!(
            is_feasible(&[1.0, 2.5], &wg(10.0, 0.5), ActivationMode::Discrete(11)).violation,
            Some(Violation::OffGrid(1))
        );
    }

    #[test]
    fn projection_examples() {
        let w = wg(10.0, 1.0);
        let x = [1.0, 3.0, 7.0];
        assert_eq!(project_feasible(&x, &w, ActivationMode::Continuous).unwrap(), x);
        let p = project_feasible(&[5.0, 5.0], &w, ActivationMode::Continuous).unwrap();
        assert_relative_eq!(p[0], 4.5, epsilon = 1e-15);
        assert_relative_eq!(p[1], 5.5, epsilon = 1e-15);
        let too_many = vec![5.0; 12];
        assert!(matches!(
            project_feasible(&too_many, &w, ActivationMode::Continuous),
            Err(Error::Infeasible { .. })
        ));
    }

    /// Dense active-set enumeration for three antennas.
    fn qp_oracle(r: &[f64], lo: &[f64], hi: &[f64], gap: f64) -> Vec<f64> {
        let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for i in 0..3 {
            let mut a = vec![0.0; 3];
            a[i] = 1.0;
            rows.push((a.clone(), lo[i], true));
            rows.push((a, hi[i], false));
        }
        for i in 0..2 {
            let mut a = vec![0.0; 3];
            a[i] = -1.0;
            a[i + 1] = 1.0;
            rows.push((a, gap, true));
        }
        let feasible = |x: &[f64]| {
            rows.iter().all(|(a, b, ge)| {
                let v: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
                if *ge {
                    v >= b - 1e-10
                } else {
                    v <= b + 1e-10
                }
            })
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << rows.len()) {
            let act: Vec<_> = (0..rows.len()).filter(|i| mask >> i & 1 == 1).collect();
            if act.len() > 3 {
                continue;
            }
            let x = if act.is_empty() {
                r.to_vec()
            } else {
                let a = DMatrix::from_fn(act.len(), 3, |i, j| rows[act[i]].0[j]);
                let b = DVector::from_fn(act.len(), |i, _| rows[act[i]].1);
                let rv = DVector::from_row_slice(r);
                let aat = &a * a.transpose();
                let Some(inv) = aat.try_inverse() else { continue };
                let x = &rv - a.transpose() * (inv * (&a * &rv - b));
                x.iter().cloned().collect()
            };
            if feasible(&x) {
                let obj: f64 = x.iter().zip(r).map(|(p, q)| (p - q).powi(2)).sum();
                if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                    best = Some((obj, x));
                }
            }
        }
        best.unwrap().1
    }

    proptest! {
        #[test]
        fn continuous_matches_qp(a in -2.0..12.0f64, b in -2.0..12.0f64, c in -2.0..12.0f64, d in 0.1..3.0f64) {
            let mut r = vec![a, b, c];
            r.sort_by(f64::total_cmp);
            let w = wg(10.0, d);
            let p = project_feasible(&r, &w, ActivationMode::Continuous).unwrap();
            let q = qp_oracle(&r, &[0.0; 3], &[10.0; 3], d);
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-6, "{p:?} vs {q:?}");
            }
        }

        #[test]
        fn semicontinuous_matches_qp(a in -1.0..6.0f64, b in -1.0..6.0f64, c in -1.0..6.0f64, u in 0.0..1.5f64) {
            let mut r = vec![a, b, c];
            r.sort_by(f64::total_cmp);
            let w = wg(4.0, 0.5);
            let p = project_feasible(&r, &w, ActivationMode::SemiContinuous(u)).unwrap();
            let lo = [0.0, 2.0, 4.0];
            let hi = [u, 2.0 + u, 4.0 + u];
            let q = qp_oracle(&r, &lo, &hi, 0.5);
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-6, "{p:?} vs {q:?}");
            }
        }

        #[test]
        fn projection_is_idempotent_and_feasible(mut r in proptest::collection::vec(-1.0..11.0f64, 1..12)) {
            r.sort_by(f64::total_cmp);
            let w = wg(10.0, 0.7);
            for mode in [ActivationMode::Continuous, ActivationMode::Discrete(15), ActivationMode::SemiContinuous(0.3)] {
                let mode = match mode {
                    ActivationMode::SemiContinuous(u) if r.len() > 1 && 10.0 / (r.len() - 1) as f64 + u < 0.7 => continue,
                    m => m,
                };
                let p = project_feasible(&r, &w, mode).unwrap();
                prop_assert!(is_feasible(&p, &w, mode).feasible, "{mode:?} {p:?}");
                let q = project_feasible(&p, &w, mode).unwrap();
                prop_assert_eq!(p, q);
            }
        }

        #[test]
        fn grid_is_feasible(len in 1.0..50.0f64, m in 2usize..60) {
            let w = Waveguide::new(0.0, 1.0, len, len / (m - 1) as f64).unwrap();
            let g = discrete_grid(&w, m).unwrap();
            prop_assert!(is_feasible(&g, &w, ActivationMode::Discrete(m)).feasible);
        }
    }

    #[test]
    fn discrete_projection_picks_nearest_ports() {
        let w = wg(10.0, 1.0);
        let p = project_feasible(&[2.2, 2.4, 7.9], &w, ActivationMode::Discrete(11)).unwrap();
        assert_eq!(p, vec![2.0, 3.0, 8.0]);
    }

    #[test]
    fn mode_keys() {
        assert_eq!(
            ActivationMode::from_key("Continuous", 0, 0.0).unwrap(),
            ActivationMode::Continuous
        );
        assert!(ActivationMode::from_key("other", 0, 0.0).is_err());
    }
}
