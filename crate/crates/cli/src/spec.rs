//! Experiment identifiers, parameters and sweep axes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use clap::ValueEnum;
use passkit::geometry::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentId {
    ScalingLaw,
    Ergodic,
    Outage,
    CapacitySp,
    CapacityMp,
    MuWsr,
    Wideband,
    CsiNmse,
    BeamTrain,
}

pub const ALL: [ExperimentId; 9] = [
    ExperimentId::ScalingLaw,
    ExperimentId::Ergodic,
    ExperimentId::Outage,
    ExperimentId::CapacitySp,
    ExperimentId::CapacityMp,
    ExperimentId::MuWsr,
    ExperimentId::Wideband,
    ExperimentId::CsiNmse,
    ExperimentId::BeamTrain,
];

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            Self::ScalingLaw => "scaling-law",
            Self::Ergodic => "ergodic",
            Self::Outage => "outage",
            Self::CapacitySp => "capacity-sp",
            Self::CapacityMp => "capacity-mp",
            Self::MuWsr => "mu-wsr",
            Self::Wideband => "wideband",
            Self::CsiNmse => "csi-nmse",
            Self::BeamTrain => "beam-train",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::ScalingLaw => "maximum received power and its approximation versus PA count",
            Self::Ergodic => "ergodic rate of PASS and a fixed antenna versus transmit power",
            Self::Outage => "outage probabilities and high-SNR gap versus region length",
            Self::CapacitySp => "uplink capacity, FDMA and TDMA regions with one PA",
            Self::CapacityMp => "uplink capacity, FDMA and TDMA regions with several PAs",
            Self::MuWsr => "weighted sum rate of switching, division and multiplexing",
            Self::Wideband => "OFDM rate of wideband and narrowband PA placement versus bandwidth",
            Self::CsiNmse => "channel estimation NMSE per trial versus SNR",
            Self::BeamTrain => "beam training top-1 accuracy and overhead versus SNR",
        }
    }

    /// Bundled scenario used when none is given.
    pub fn default_scenario(self) -> &'static str {
        match self {
            Self::CapacitySp | Self::CapacityMp => include_str!("../scenarios/two_user.toml"),
            Self::MuWsr => include_str!("../scenarios/multi_user.toml"),
            _ => include_str!("../scenarios/single_user.toml"),
        }
    }

    /// Sweep axis name and default values, if the experiment has one.
    pub fn axis(self) -> Option<(&'static str, Vec<f64>)> {
        let range = |lo: f64, step: f64, hi: f64| sweep_range(lo, step, hi).expect("valid default");
        match self {
            Self::ScalingLaw => Some(("m", range(2.0, 2.0, 32.0))),
            Self::Ergodic => Some(("p_dbm", range(0.0, 5.0, 40.0))),
            Self::Outage => Some(("d_x", vec![5.0, 10.0, 20.0, 30.0])),
            Self::Wideband => Some(("bandwidth_ghz", vec![0.5, 1.0, 2.0])),
            Self::CsiNmse | Self::BeamTrain => Some(("snr_db", vec![0.0, 10.0, 20.0])),
            Self::CapacitySp | Self::CapacityMp | Self::MuWsr => None,
        }
    }

    /// Scalar parameters with defaults.
    pub fn params(self) -> Vec<(&'static str, f64)> {
        match self {
            Self::ScalingLaw => vec![],
            Self::Ergodic => vec![("samples", 20_000.0)],
            Self::Outage => vec![
                ("d_y", 10.0),
                ("beta", 0.1),
                ("r_target", 1.0),
                ("p_dbm", 40.0),
                ("samples", 20_000.0),
            ],
            Self::CapacitySp => vec![("m", 1.0), ("alpha_points", 11.0), ("grid_res", 401.0)],
            Self::CapacityMp => vec![("m", 3.0), ("alpha_points", 11.0), ("grid_res", 401.0)],
            Self::MuWsr => vec![("m", 1.0)],
            Self::Wideband => vec![("q", 16.0), ("dn", 0.05), ("m", 2.0)],
            Self::CsiNmse => vec![("trials", 10.0), ("ports", 16.0), ("pilots", 4.0), ("omp_slots", 12.0)],
            Self::BeamTrain => vec![("trials", 10.0), ("cells", 16.0), ("fine", 4.0), ("half_width", 2.0)],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL.iter()
            .copied()
            .find(|id| id.name() == s)
            .ok_or_else(|| anyhow!("unknown experiment '{s}'; see list-experiments"))
    }
}

/// `lo:step:hi` inclusive of `hi` up to rounding.
pub fn sweep_range(lo: f64, step: f64, hi: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || hi < lo {
        bail!("invalid sweep range {lo}:{step}:{hi}");
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

/// Parses `lo:step:hi` or a comma-separated list.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| anyhow!("'{s}' is not a number"))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            bail!("expected lo:step:hi, got '{text}'");
        }
        return sweep_range(num(parts[0])?, num(parts[1])?, num(parts[2])?);
    }
    text.split(',').map(num).collect()
}

fn split_assignment(text: &str) -> Result<(&str, &str)> {
    text.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| anyhow!("expected key=value, got '{text}'"))
}

/// Resolved experiment request.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub scenario_path: Option<PathBuf>,
    pub scenario: Scenario,
    pub activation: Option<String>,
    pub axis: Option<(String, Vec<f64>)>,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn new(
        id: ExperimentId,
        scenario_path: Option<PathBuf>,
        sweep: Option<&str>,
        sets: &[String],
        seed: u64,
        out: PathBuf,
    ) -> Result<Self> {
        let (scenario, activation) = match &scenario_path {
            Some(p) => {
                if !p.exists() {
                    bail!("scenario file {} does not exist", p.display());
                }
                Scenario::load(p).map_err(|e| anyhow!("{}: {e}", p.display()))?
            }
            None => Scenario::from_toml_str(id.default_scenario())?,
        };
        if let Some(key) = &activation {
            passkit::activation::ActivationMode::from_key(key, 2, 0.0)?;
        }
        let axis = match (id.axis(), sweep) {
            (None, Some(_)) => bail!("experiment {id} has no sweep axis"),
            (None, None) => None,
            (Some((name, default)), None) => Some((name.to_string(), default)),
            (Some((name, _)), Some(text)) => {
                let (key, values) = split_assignment(text)?;
                if key != name {
                    bail!("experiment {id} sweeps '{name}', not '{key}'");
                }
                let values = parse_values(values)?;
                if values.is_empty() {
                    bail!("empty sweep");
                }
                Some((name.to_string(), values))
            }
        };
        let mut params: BTreeMap<String, f64> = id
            .params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for s in sets {
            let (key, value) = split_assignment(s)?;
            let slot = params
                .get_mut(key)
                .ok_or_else(|| anyhow!("experiment {id} has no parameter '{key}'"))?;
            *slot = value
                .parse()
                .map_err(|_| anyhow!("parameter '{key}': '{value}' is not a number"))?;
        }
        Ok(Self {
            id,
            scenario_path,
            scenario,
            activation,
            axis,
            params,
            seed,
            out,
        })
    }

    pub fn param(&self, key: &str) -> f64 {
        self.params[key]
    }

    /// Non-negative integer parameter.
    pub fn count(&self, key: &str) -> Result<usize> {
        let v = self.param(key);
        if !(v >= 0.0) || v.fract() != 0.0 {
            bail!("parameter '{key}' must be a non-negative integer, got {v}");
        }
        Ok(v as usize)
    }

    pub fn axis_values(&self) -> &[f64] {
        self.axis.as_ref().map(|(_, v)| v.as_slice()).unwrap_or(&[])
    }
}
