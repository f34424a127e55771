//! Experiment runners. Each returns one CSV table.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Result};
use passkit::beamforming::{scaling_law_curve, wd_wsr, wm_wsr, ws_wsr, MultiUserOutcome, SearchSettings};
use passkit::capacity::{fixed_antenna_regions, uplink_regions, RateRegion, RegionSettings, UserPowers};
use passkit::csi::{self, Dictionary, OmpStop, ParamSearch, ServedArea};
use passkit::geometry::{lateral_offset, Scenario, UserPosition};
use passkit::mc::{McSettings, Z_99};
use passkit::metrics::{
    ergodic_rate_fixed, ergodic_rate_fixed_mc, ergodic_rate_pass, ergodic_rate_pass_mc, outage_fixed, outage_gap,
    outage_pass, BlockageModel, ServiceRegion,
};
use passkit::par::{self, Execution};
use passkit::wideband::{cp_length, narrowband_positions, ofdm_rate, wideband_optimize, OfdmGrid, WaveguideDispersion};
use passkit::{Complex64, SPEED_OF_LIGHT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::{num, Table};
use crate::spec::{ExperimentId, ExperimentSpec};

/// Mixes a base seed with two counters.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

/// Tolerances recorded in every manifest.
pub fn tolerances() -> BTreeMap<String, f64> {
    let s = SearchSettings::default();
    BTreeMap::from([
        ("search_grid_points".to_string(), s.grid_points as f64),
        ("search_passes".to_string(), s.passes as f64),
        ("search_zoom".to_string(), s.zoom),
        ("search_tolerance".to_string(), s.tolerance),
        ("search_max_sweeps".to_string(), s.max_sweeps as f64),
        ("mc_interval_z".to_string(), Z_99),
        ("rank_tolerance".to_string(), csi::RANK_TOL),
        ("region_slack".to_string(), 1e-9),
    ])
}

pub fn run(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    match spec.id {
        ExperimentId::ScalingLaw => scaling_law(spec, exec),
        ExperimentId::Ergodic => ergodic(spec, exec),
        ExperimentId::Outage => outage(spec, exec),
        ExperimentId::CapacitySp | ExperimentId::CapacityMp => capacity(spec, exec),
        ExperimentId::MuWsr => mu_wsr(spec),
        ExperimentId::Wideband => wideband(spec, exec),
        ExperimentId::CsiNmse => csi_nmse(spec, exec),
        ExperimentId::BeamTrain => beam_train(spec, exec),
    }
}

fn as_counts(values: &[f64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(anyhow!("expected a positive integer, got {v}"))
            }
        })
        .collect()
}

fn scaling_law(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let s = &spec.scenario;
    let (w, u) = (&s.waveguides[0], &s.users[0]);
    let ms = as_counts(spec.axis_values())?;
    let pts = scaling_law_curve(&ms, lateral_offset(w, u), w.min_spacing, s.constants, exec)?;
    let mut t = Table::new(&["M", "P_opt", "P_approx", "ratio"]);
    for p in pts {
        t.push([p.m.to_string(), num(p.p_opt), num(p.p_approx), num(p.ratio)]);
    }
    Ok(t)
}

/// Power gain used by the stochastic-geometry metrics.
fn metric_eta(s: &Scenario) -> f64 {
    s.constants.eta * s.constants.eta
}

fn ergodic(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let s = &spec.scenario;
    let (d, z) = (s.waveguides[0].length, s.waveguides[0].z);
    let eta = metric_eta(s);
    let samples = spec.count("samples")? as u64;
    let rows = par::map_range(exec, spec.axis_values().len(), |i| -> Result<Vec<Vec<String>>> {
        let p = spec.axis_values()[i];
        let snr = dbm_to_watts(p) / s.constants.noise_power;
        let mc = |k| McSettings::new(samples, derive_seed(spec.seed, i as u64, k)).with_exec(Execution::Sequential);
        let pass = ergodic_rate_pass(d, z, snr, eta)?;
        let fixed = ergodic_rate_fixed(d, z, snr, eta)?;
        let pass_mc = ergodic_rate_pass_mc(d, z, snr, eta, &mc(0));
        let fixed_mc = ergodic_rate_fixed_mc(d, z, snr, eta, &mc(1));
        let (pl, ph) = pass_mc.interval(Z_99);
        let (fl, fh) = fixed_mc.interval(Z_99);
        Ok(vec![
            vec![num(p), "pass".into(), num(pass), num(pass), num(pass)],
            vec![num(p), "fixed".into(), num(fixed), num(fixed), num(fixed)],
            vec![num(p), "pass-mc".into(), num(pass_mc.mean), num(pl), num(ph)],
            vec![num(p), "fixed-mc".into(), num(fixed_mc.mean), num(fl), num(fh)],
        ])
    });
    let mut t = Table::new(&["p_dbm", "series", "value", "ci_lo", "ci_hi"]);
    for r in rows {
        t.rows.extend(r?);
    }
    Ok(t)
}

fn outage(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let s = &spec.scenario;
    let z = s.waveguides[0].z;
    let eta = metric_eta(s);
    let blockage = BlockageModel::new(spec.param("beta"))?;
    let snr = dbm_to_watts(spec.param("p_dbm")) / s.constants.noise_power;
    let r_target = spec.param("r_target");
    let samples = spec.count("samples")? as u64;
    let rows = par::map_range(exec, spec.axis_values().len(), |i| -> Result<Vec<String>> {
        let d_x = spec.axis_values()[i];
        let region = ServiceRegion::new(d_x, spec.param("d_y"))?;
        let mc = McSettings::new(samples, derive_seed(spec.seed, i as u64, 0)).with_exec(Execution::Sequential);
        let pass = outage_pass(&region, z, snr, eta, &blockage, r_target)?;
        let fixed = outage_fixed(&region, z, snr, eta, &blockage, r_target, &mc)?;
        let gap = outage_gap(&region, z, &blockage)?;
        Ok(vec![
            num(d_x),
            num(pass.exact),
            num(pass.high_snr),
            num(fixed.finite_snr.estimate),
            num(fixed.finite_snr.ci.0),
            num(fixed.finite_snr.ci.1),
            num(fixed.high_snr),
            num(gap),
        ])
    });
    let mut t = Table::new(&[
        "d_x",
        "p_pass",
        "p_pass_high_snr",
        "p_fixed",
        "p_fixed_ci_lo",
        "p_fixed_ci_hi",
        "p_fixed_high_snr",
        "delta_b",
    ]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}

fn push_region(t: &mut Table, region: &RateRegion, tag: &str) {
    for p in &region.hull {
        t.push([num(p.r1), num(p.r2), tag.to_string()]);
    }
}

fn capacity(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let s = &spec.scenario;
    if s.users.len() != 2 {
        bail!("capacity regions need exactly two users, scenario has {}", s.users.len());
    }
    let m = spec.count("m")?;
    let settings = RegionSettings {
        alpha_points: spec.count("alpha_points")?,
        grid_res: spec.count("grid_res")?,
        exec,
        ..RegionSettings::default()
    };
    let p = UserPowers::new(s.constants.tx_power, s.constants.tx_power)?;
    let set = uplink_regions(s, m, p, &settings)?;
    let x_fixed = (0.5 * (s.users[0].x + s.users[1].x)).clamp(0.0, s.waveguides[0].length);
    let fixed = fixed_antenna_regions(s, x_fixed, p, &settings)?;
    let mut t = Table::new(&["R1", "R2", "tag"]);
    push_region(&mut t, &set.capacity, "capacity");
    push_region(&mut t, &set.tdma, "tdma");
    push_region(&mut t, &set.fdma, "fdma");
    push_region(&mut t, &fixed.capacity, "fixed-antenna");
    Ok(t)
}

pub fn protocol_row(name: &str, out: &MultiUserOutcome) -> Vec<String> {
    let precoder = out.precoder.map(|p| format!("{p:?}").to_lowercase()).unwrap_or_else(|| "-".into());
    vec![name.to_string(), num(out.wsr), precoder, (out.trace.len().saturating_sub(1)).to_string()]
}

fn mu_wsr(spec: &ExperimentSpec) -> Result<Table> {
    let s = &spec.scenario;
    let m = spec.count("m")?;
    let weights = vec![1.0; s.users.len()];
    let settings = SearchSettings::default();
    let mut t = Table::new(&["protocol", "wsr", "precoder", "iterations"]);
    t.push(protocol_row("ws", &ws_wsr(s, m, &weights, &settings)?));
    t.push(protocol_row("wd", &wd_wsr(s, m, &weights, &settings)?));
    t.push(protocol_row("wm", &wm_wsr(s, m, &weights, &settings)?));
    Ok(t)
}

fn wideband(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let s = &spec.scenario;
    let c = &s.constants;
    let fc = SPEED_OF_LIGHT / c.wavelength;
    let (q, m, dn) = (spec.count("q")?, spec.count("m")?, spec.param("dn"));
    let settings = SearchSettings::default();
    let rows = par::map_range(exec, spec.axis_values().len(), |i| -> Result<Vec<String>> {
        let bw_ghz = spec.axis_values()[i];
        let bw = bw_ghz * 1e9;
        let grid = OfdmGrid::uniform(fc, bw, q)?;
        let d = WaveguideDispersion::linear(1e-3, c.n_eff + 0.2, 1.0, (fc - bw, fc + bw), (c.n_eff, c.n_eff + dn))?;
        let nb = narrowband_positions(&grid, &d, s, 0, m, &settings)?;
        let r_nb = ofdm_rate(&nb, &grid, &d, s, 0)?;
        let wb = wideband_optimize(&grid, &d, s, 0, m, &settings)?;
        let cp = cp_length(&grid, &d, &wb.x[0], s, 0, 0.0)?;
        Ok(vec![num(bw_ghz), num(r_nb), num(wb.value), num(wb.value - r_nb), cp.to_string()])
    });
    let mut t = Table::new(&["bandwidth_ghz", "rate_narrowband", "rate_wideband", "margin", "cp_samples"]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}

/// Channel estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimateMethod {
    Seq,
    Omp,
    Param,
}

/// Beam training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMethod {
    Exhaustive,
    Hierarchical,
}

impl EstimateMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Seq => "seq",
            Self::Omp => "omp",
            Self::Param => "param",
        }
    }
}

impl TrainMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exhaustive => "exhaustive",
            Self::Hierarchical => "hierarchical",
        }
    }
}

/// Sizes shared by estimation trials.
#[derive(Debug, Clone, Copy)]
pub struct EstimateSetup {
    pub ports: usize,
    pub pilots: usize,
    pub omp_slots: usize,
}

fn ports_near(s: &Scenario, center: f64, count: usize) -> Vec<Vec<f64>> {
    s.waveguides
        .iter()
        .map(|w| {
            let span = (count.saturating_sub(1)) as f64 * w.min_spacing;
            let start = (center - 0.5 * span).clamp(0.0, (w.length - span).max(0.0));
            (0..count).map(|i| start + w.min_spacing * i as f64).collect()
        })
        .collect()
}

/// One estimation trial; returns `(overhead, nmse_db)`.
pub fn estimate_trial(
    base: &Scenario,
    method: EstimateMethod,
    snr_db: f64,
    setup: EstimateSetup,
    seed: u64,
) -> Result<(usize, f64)> {
    if setup.ports < 2 || setup.pilots == 0 || setup.omp_slots == 0 {
        bail!("estimation needs at least 2 ports, 1 pilot and 1 slot");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = base.clone();
    s.users.truncate(1);
    let u0 = base.users[0];
    let w0 = &base.waveguides[0];
    s.users[0] = UserPosition::new(
        (u0.x + rng.gen_range(-0.25..0.25)).clamp(0.0, w0.length),
        u0.y,
        u0.z,
    );
    let c = s.constants;
    let ports = ports_near(&s, u0.x, setup.ports);
    let h = csi::port_channel(&s, &ports, 0)?;
    let power = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / h.len() as f64;
    let noise = power / 10f64.powf(snr_db / 10.0);
    match method {
        EstimateMethod::Seq => {
            let pilots: Vec<Complex64> = (0..setup.pilots)
                .map(|t| Complex64::from_polar(1.0, std::f64::consts::PI * (t * t) as f64 / setup.pilots as f64))
                .collect();
            let est = csi::ls_sequential(&ports, &c, &pilots, &h, noise, &mut rng)?;
            Ok((est.slots * setup.pilots, csi::nmse_db(&est.h, &h)))
        }
        EstimateMethod::Omp => {
            let dict = Dictionary::planar(&ports, &c, 4 * setup.ports * ports.len())?;
            let patterns = csi::random_patterns(&ports, &c, setup.omp_slots, &mut rng)?;
            let a = csi::sensing_matrix(&patterns, &vec![Complex64::new(1.0, 0.0); setup.omp_slots])?;
            let y = csi::measure(&a, &h, noise, &mut rng);
            let eps = if noise > 0.0 {
                (noise * y.len() as f64).sqrt()
            } else {
                1e-9 * y.norm()
            };
            let out = csi::omp_recover(&y, &a, &dict, OmpStop::Residual(eps))?;
            Ok((setup.omp_slots, csi::nmse_db(&out.h, &h)))
        }
        EstimateMethod::Param => {
            let p0 = &ports[0];
            let h0 = &h[..p0.len()];
            let all: Vec<usize> = (0..p0.len()).collect();
            let a = csi::port_selection_matrix(p0, &all, &c)?;
            let y = csi::measure(&a, h0, noise, &mut rng);
            let z = w0.z.abs().max(0.1);
            let search = ParamSearch::new((p0[0] - 0.3, p0[p0.len() - 1] + 0.3), (0.5 * z, 2.0 * z + 2.0));
            let out = csi::parameter_sense(&y, &a, p0, &c, &search)?;
            let est: Vec<Complex64> = p0.iter().map(|&x| out.channel_at(x)).collect();
            Ok((p0.len(), csi::nmse_db(&est, h0)))
        }
    }
}

/// Sizes shared by training trials.
#[derive(Debug, Clone, Copy)]
pub struct TrainSetup {
    pub cells: usize,
    pub fine: usize,
    pub half_width: f64,
}

/// One training trial; returns `(overhead, top1)` where `top1` is 1 when the
/// noisy search selects a codeword as good as its noiseless run. Codewords
/// with equal gain count as the same choice.
pub fn train_trial(
    base: &Scenario,
    method: TrainMethod,
    snr_db: f64,
    setup: TrainSetup,
    seed: u64,
) -> Result<(usize, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = &base.waveguides[0];
    let area = ServedArea {
        x: (0.0, w0.length),
        y: (w0.y - setup.half_width, w0.y + setup.half_width),
        cells: (setup.cells, setup.cells),
        height: base.users[0].z,
        power: base.constants.tx_power,
    };
    let mut s = base.clone();
    s.users = vec![UserPosition::new(
        rng.gen_range(0.05..0.95) * w0.length,
        w0.y + rng.gen_range(-0.8..0.8) * setup.half_width,
        base.users[0].z,
    )];
    let search = |noise: f64, rng: &mut ChaCha8Rng| match method {
        TrainMethod::Exhaustive => csi::area_exhaustive(&s, 0, &area, noise, 1, rng),
        TrainMethod::Hierarchical => csi::beam_train_hierarchical(&s, 0, &area, setup.fine, noise, rng),
    };
    let reference = search(0.0, &mut rng)?;
    let noise = reference.gain / 10f64.powf(snr_db / 10.0);
    let out = search(noise, &mut rng)?;
    let top1 = (out.gain >= reference.gain * (1.0 - 1e-9)) as u8;
    Ok((out.measurements, top1))
}

fn estimate_setup(spec: &ExperimentSpec) -> Result<EstimateSetup> {
    Ok(EstimateSetup {
        ports: spec.count("ports")?,
        pilots: spec.count("pilots")?,
        omp_slots: spec.count("omp_slots")?,
    })
}

fn csi_nmse(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let setup = estimate_setup(spec)?;
    let trials = spec.count("trials")?;
    let methods = [EstimateMethod::Seq, EstimateMethod::Omp, EstimateMethod::Param];
    let jobs: Vec<(usize, usize, EstimateMethod)> = (0..spec.axis_values().len())
        .flat_map(|i| (0..trials).flat_map(move |t| methods.map(|m| (i, t, m))))
        .collect();
    let rows = par::map_slice(exec, &jobs, |&(i, t, method)| -> Result<Vec<String>> {
        let snr = spec.axis_values()[i];
        let seed = derive_seed(spec.seed, i as u64, t as u64);
        let (overhead, nmse) = estimate_trial(&spec.scenario, method, snr, setup, seed)?;
        Ok(vec![num(snr), seed.to_string(), method.name().into(), overhead.to_string(), num(nmse)])
    });
    let mut t = Table::new(&["snr_db", "seed", "method", "overhead", "nmse_db"]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}

fn train_setup(spec: &ExperimentSpec) -> Result<TrainSetup> {
    Ok(TrainSetup {
        cells: spec.count("cells")?,
        fine: spec.count("fine")?,
        half_width: spec.param("half_width"),
    })
}

fn beam_train(spec: &ExperimentSpec, exec: Execution) -> Result<Table> {
    let setup = train_setup(spec)?;
    let trials = spec.count("trials")?;
    let methods = [TrainMethod::Exhaustive, TrainMethod::Hierarchical];
    let jobs: Vec<(usize, usize, TrainMethod)> = (0..spec.axis_values().len())
        .flat_map(|i| (0..trials).flat_map(move |t| methods.map(|m| (i, t, m))))
        .collect();
    let rows = par::map_slice(exec, &jobs, |&(i, t, method)| -> Result<Vec<String>> {
        let snr = spec.axis_values()[i];
        let seed = derive_seed(spec.seed, i as u64, t as u64);
        let (overhead, top1) = train_trial(&spec.scenario, method, snr, setup, seed)?;
        Ok(vec![num(snr), seed.to_string(), method.name().into(), overhead.to_string(), top1.to_string()])
    });
    let mut t = Table::new(&["snr_db", "seed", "method", "overhead", "top1"]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}
