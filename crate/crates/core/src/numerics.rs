//! Quadrature and one-dimensional search.

use crate::par::{self, Execution};

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Pre-split so narrow features are not skipped by the first estimate.
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (flo, fhi, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi);
            simpson_step(f, lo, hi, flo, fm, fhi, whole, tol / PANELS as f64, 50)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor 32-point Gauss-Legendre over a rectangle with dyadic refinement.
///
/// The rectangle is split into `2^k x 2^k` cells for increasing `k` until two
/// successive estimates differ by at most `tol`.
pub fn integrate_2d<F>(f: &F, x: (f64, f64), y: (f64, f64), tol: f64) -> f64
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    let (nodes, weights) = gauss_legendre(32);
    let estimate = |level: u32| -> f64 {
        let cells = 1usize << level;
        let hx = (x.1 - x.0) / cells as f64;
        let hy = (y.1 - y.0) / cells as f64;
        let rows = par::map_range(Execution::Parallel, cells, |i| {
            let x0 = x.0 + i as f64 * hx;
            let mut row = 0.0;
            for j in 0..cells {
                let y0 = y.0 + j as f64 * hy;
                let mut cell = 0.0;
                for (xi, wi) in nodes.iter().zip(&weights) {
                    let px = x0 + 0.5 * hx * (xi + 1.0);
                    let mut col = 0.0;
                    for (yj, wj) in nodes.iter().zip(&weights) {
                        col += wj * f(px, y0 + 0.5 * hy * (yj + 1.0));
                    }
                    cell += wi * col;
                }
                row += cell * 0.25 * hx * hy;
            }
            row
        });
        rows.iter().sum()
    };
    let mut prev = estimate(0);
    for level in 1..=7 {
        let next = estimate(level);
        if (next - prev).abs() <= tol {
            return next;
        }
        prev = next;
    }
    prev
}

/// Golden-section maximization of a unimodal `f` on `[a, b]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    // The cap stops the loop once the bracket reaches float resolution.
    for _ in 0..400 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Coarse-to-fine grid scan settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScan {
    pub points: usize,
    pub passes: usize,
    pub zoom: f64,
}

impl Default for GridScan {
    fn default() -> Self {
        Self {
            points: 400,
            passes: 2,
            zoom: 10.0,
        }
    }
}

/// Evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Maximizes `f` on `[lo, hi]` by repeated grid scans, each pass zooming in
/// around the incumbent. Ties keep the smaller abscissa.
pub fn grid_max<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, scan: GridScan) -> (f64, f64) {
    let mut best = (lo, f64::NEG_INFINITY);
    let (mut a, mut b) = (lo, hi);
    for pass in 0..scan.passes.max(1) {
        for x in linspace(a, b, scan.points.max(2)) {
            let v = f(x);
            if v > best.1 || (v == best.1 && x < best.0) {
                best = (x, v);
            }
        }
        if pass + 1 < scan.passes {
            let half = 0.5 * (b - a) / scan.zoom;
            a = (best.0 - half).max(lo);
            b = (best.0 + half).min(hi);
        }
    }
    best
}
