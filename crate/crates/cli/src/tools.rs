//! Stand-alone optimizer, CSI and metric subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::ValueEnum;
use passkit::beamforming::{
    elementwise_search, elementwise_search_on, fullyconnected_optimize, max_power_approx, subconnected_approx,
    subconnected_optimize, wd_wsr, wm_wsr, ws_wsr, SearchSettings,
};
use passkit::geometry::{lateral_offset, Scenario};
use passkit::mc::McSettings;
use passkit::metrics::{
    coverage_fixed, coverage_pass, ergodic_rate_fixed, ergodic_rate_pass, outage_fixed, outage_pass, BlockageModel,
    ServiceRegion,
};
use passkit::par::{self, Execution};
use serde::Serialize;

use crate::experiments::{
    dbm_to_watts, derive_seed, estimate_trial, train_trial, EstimateMethod, EstimateSetup, TrainMethod, TrainSetup,
};
use crate::output::{num, write_json, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Sub,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Ws,
    Wd,
    Wm,
}

#[derive(Debug, Serialize)]
struct SingleSummary {
    user: usize,
    m: usize,
    positions: Vec<f64>,
    received_power: f64,
    approximation: f64,
    converged: bool,
    sweeps: usize,
}

fn trace_table(rows: impl IntoIterator<Item = (String, usize, f64)>) -> Table {
    let mut t = Table::new(&["stage", "iteration", "objective"]);
    for (stage, i, v) in rows {
        t.push([stage, i.to_string(), num(v)]);
    }
    t
}

fn user_index(s: &Scenario, user: usize) -> Result<()> {
    if user >= s.users.len() {
        bail!("user {user} not in scenario ({} users)", s.users.len());
    }
    Ok(())
}

/// Returns the written files.
pub fn optimize_single(s: &Scenario, m: usize, user: usize, out: &Path) -> Result<Vec<PathBuf>> {
    user_index(s, user)?;
    let settings = SearchSettings::default();
    let r = elementwise_search(s, user, m, &settings)?;
    let w = &s.waveguides[0];
    let c = &s.constants;
    let summary = SingleSummary {
        user,
        m,
        positions: r.x[0].clone(),
        received_power: r.value,
        approximation: max_power_approx(m, w.min_spacing, lateral_offset(w, &s.users[user]), c.eta, c.tx_power),
        converged: r.converged,
        sweeps: r.trace.len().saturating_sub(1),
    };
    let trace = trace_table(r.trace.iter().enumerate().map(|(i, &v)| ("search".to_string(), i, v)));
    write_pair(out, "optimize-single", &summary, &trace)
}

#[derive(Debug, Serialize)]
struct MisoSummary {
    arch: &'static str,
    user: usize,
    m: usize,
    n_rf: Option<usize>,
    positions: Vec<Vec<f64>>,
    received_power: f64,
    approximation: f64,
}

pub fn optimize_su_miso(
    s: &Scenario,
    arch: Arch,
    m: usize,
    n_rf: usize,
    user: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    user_index(s, user)?;
    let settings = SearchSettings::default();
    let approximation = subconnected_approx(s, user, m)?;
    let (summary, trace) = match arch {
        Arch::Sub => {
            let r = subconnected_optimize(s, user, m, &settings)?;
            let mut rows = Vec::new();
            for n in 0..s.waveguides.len() {
                let o = elementwise_search_on(s, n, user, m, &settings)?;
                rows.extend(o.trace.iter().enumerate().map(|(i, &v)| (format!("waveguide-{n}"), i, v)));
            }
            let summary = MisoSummary {
                arch: "sub",
                user,
                m,
                n_rf: None,
                positions: r.x,
                received_power: r.received_power,
                approximation,
            };
            (summary, trace_table(rows))
        }
        Arch::Full => {
            if n_rf == 0 {
                bail!("--n-rf must be at least 1");
            }
            let mut rows = Vec::new();
            let mut last = None;
            for k in 1..=n_rf {
                let r = fullyconnected_optimize(s, user, m, k, &settings)?;
                rows.push((format!("n_rf-{k}"), 0, r.received_power));
                last = Some(r);
            }
            let r = last.expect("n_rf >= 1");
            let summary = MisoSummary {
                arch: "full",
                user,
                m,
                n_rf: Some(n_rf),
                positions: r.x,
                received_power: r.received_power,
                approximation,
            };
            (summary, trace_table(rows))
        }
    };
    let name = match arch {
        Arch::Sub => "optimize-su-miso-sub",
        Arch::Full => "optimize-su-miso-full",
    };
    write_pair(out, name, &summary, &trace)
}

#[derive(Debug, Serialize)]
struct MuSummary {
    protocol: &'static str,
    m: usize,
    wsr: f64,
    positions: Vec<Vec<f64>>,
    precoder: Option<String>,
    skipped: Vec<String>,
    iterations: usize,
}

pub fn optimize_mu(s: &Scenario, protocol: ProtocolArg, m: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let weights = vec![1.0; s.users.len()];
    let settings = SearchSettings::default();
    let (name, r) = match protocol {
        ProtocolArg::Ws => ("ws", ws_wsr(s, m, &weights, &settings)?),
        ProtocolArg::Wd => ("wd", wd_wsr(s, m, &weights, &settings)?),
        ProtocolArg::Wm => ("wm", wm_wsr(s, m, &weights, &settings)?),
    };
    let lower = |p: passkit::beamforming::Precoder| format!("{p:?}").to_lowercase();
    let summary = MuSummary {
        protocol: name,
        m,
        wsr: r.wsr,
        positions: r.x.clone(),
        precoder: r.precoder.map(lower),
        skipped: r.skipped.iter().map(|&p| lower(p)).collect(),
        iterations: r.trace.len().saturating_sub(1),
    };
    let trace = trace_table(r.trace.iter().enumerate().map(|(i, &v)| ("outer".to_string(), i, v)));
    write_pair(out, &format!("optimize-mu-{name}"), &summary, &trace)
}

fn write_pair<T: Serialize>(out: &Path, stem: &str, summary: &T, trace: &Table) -> Result<Vec<PathBuf>> {
    let json = out.join(format!("{stem}.json"));
    let csv = out.join(format!("{stem}-trace.csv"));
    write_json(summary, &json)?;
    trace.write(&csv)?;
    Ok(vec![json, csv])
}

pub fn csi_estimate(
    s: &Scenario,
    method: EstimateMethod,
    snr_db: f64,
    trials: usize,
    setup: EstimateSetup,
    seed: u64,
    exec: Execution,
) -> Result<Table> {
    let rows = par::map_range(exec, trials, |t| -> Result<Vec<String>> {
        let seed = derive_seed(seed, 0, t as u64);
        let (overhead, nmse) = estimate_trial(s, method, snr_db, setup, seed)?;
        Ok(vec![seed.to_string(), method.name().into(), overhead.to_string(), num(nmse)])
    });
    let mut t = Table::new(&["seed", "method", "overhead", "nmse_db"]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}

pub fn csi_train(
    s: &Scenario,
    method: TrainMethod,
    snr_db: f64,
    trials: usize,
    setup: TrainSetup,
    seed: u64,
    exec: Execution,
) -> Result<Table> {
    let rows = par::map_range(exec, trials, |t| -> Result<Vec<String>> {
        let seed = derive_seed(seed, 0, t as u64);
        let (overhead, top1) = train_trial(s, method, snr_db, setup, seed)?;
        Ok(vec![seed.to_string(), method.name().into(), overhead.to_string(), top1.to_string()])
    });
    let mut t = Table::new(&["seed", "method", "overhead", "top1"]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    ErgodicPass,
    ErgodicFixed,
    CoveragePass,
    CoverageFixed,
    OutagePass,
    OutageFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricAxis {
    /// Transmit power, dBm.
    PDbm,
    /// Region length along the waveguide, m.
    D,
    /// Waveguide height, m.
    ZG,
}

/// Fixed values of the metric parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPoint {
    pub p_dbm: f64,
    pub d: f64,
    pub d_y: f64,
    pub z_g: f64,
    pub gamma0: f64,
    pub beta: f64,
    pub r_target: f64,
    pub samples: u64,
}

impl MetricPoint {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            p_dbm: 30.0,
            d: s.waveguides[0].length,
            d_y: 10.0,
            z_g: s.waveguides[0].z,
            gamma0: 1.0,
            beta: 0.1,
            r_target: 1.0,
            samples: 20_000,
        }
    }
}

/// One CSV row `param, value, ci_lo, ci_hi` per axis value.
pub fn metric_sweep(
    s: &Scenario,
    metric: Metric,
    axis: MetricAxis,
    values: &[f64],
    base: MetricPoint,
    seed: u64,
    exec: Execution,
) -> Result<Table> {
    let eta = s.constants.eta * s.constants.eta;
    let noise = s.constants.noise_power;
    let rows = par::map_range(exec, values.len(), |i| -> Result<Vec<String>> {
        let v = values[i];
        let mut p = base;
        match axis {
            MetricAxis::PDbm => p.p_dbm = v,
            MetricAxis::D => p.d = v,
            MetricAxis::ZG => p.z_g = v,
        }
        let snr = dbm_to_watts(p.p_dbm) / noise;
        let mc = McSettings::new(p.samples, derive_seed(seed, i as u64, 0)).with_exec(Execution::Sequential);
        let region = ServiceRegion::new(p.d, p.d_y)?;
        let blockage = BlockageModel::new(p.beta)?;
        let (value, lo, hi) = match metric {
            Metric::ErgodicPass => {
                let r = ergodic_rate_pass(p.d, p.z_g, snr, eta)?;
                (r, r, r)
            }
            Metric::ErgodicFixed => {
                let r = ergodic_rate_fixed(p.d, p.z_g, snr, eta)?;
                (r, r, r)
            }
            Metric::CoveragePass => {
                let r = coverage_pass(&region, p.z_g, snr, eta, p.gamma0)?;
                (r, r, r)
            }
            Metric::CoverageFixed => {
                let r = coverage_fixed(&region, p.z_g, snr, eta, p.gamma0, &mc)?;
                (r.estimate, r.ci.0, r.ci.1)
            }
            Metric::OutagePass => {
                let r = outage_pass(&region, p.z_g, snr, eta, &blockage, p.r_target)?.exact;
                (r, r, r)
            }
            Metric::OutageFixed => {
                let r = outage_fixed(&region, p.z_g, snr, eta, &blockage, p.r_target, &mc)?.finite_snr;
                (r.estimate, r.ci.0, r.ci.1)
            }
        };
        Ok(vec![num(v), num(value), num(lo), num(hi)])
    });
    let mut t = Table::new(&["param", "value", "ci_lo", "ci_hi"]);
    for r in rows {
        t.rows.push(r?);
    }
    Ok(t)
}
