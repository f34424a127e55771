//! Acceptance checks on experiment CSVs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use passkit::capacity::{RatePair, RateRegion};

pub const CHECKS: [(&str, &str); 3] = [
    ("theorem1-5pct", "scaling-law CSV: |P_opt - P_approx| / P_opt <= 5% on every row"),
    ("delta-b-positive", "outage CSV: every delta_b > 0"),
    ("nesting", "region CSV: TDMA within FDMA within capacity (slack 1e-9)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    ApproxTightness,
    DeltaBPositive,
    Nesting,
}

impl FromStr for Check {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem1-5pct" => Ok(Self::ApproxTightness),
            "delta-b-positive" => Ok(Self::DeltaBPositive),
            "nesting" => Ok(Self::Nesting),
            other => Err(anyhow!(
                "unknown check '{other}'; expected one of {}",
                CHECKS.map(|c| c.0).join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.check, self.detail)
    }
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("CSV has no column '{name}'"))
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[i]
                    .parse()
                    .map_err(|_| anyhow!("row {}: column '{name}' is not a number", r + 2))
            })
            .collect()
    }
}

pub fn verify(path: &Path, check: Check) -> Result<Report> {
    let csv = Csv::read(path)?;
    if csv.rows.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    match check {
        Check::ApproxTightness => {
            let opt = csv.numbers("P_opt")?;
            let approx = csv.numbers("P_approx")?;
            let worst = opt
                .iter()
                .zip(&approx)
                .map(|(o, a)| (o - a).abs() / o)
                .fold(0.0, f64::max);
            Ok(Report {
                check: "theorem1-5pct".into(),
                pass: worst <= 0.05,
                detail: format!("max relative error {worst:.6} (limit 0.05, margin {:.6})", 0.05 - worst),
            })
        }
        Check::DeltaBPositive => {
            let gaps = csv.numbers("delta_b")?;
            let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok(Report {
                check: "delta-b-positive".into(),
                pass: min > 0.0,
                detail: format!("min delta_b {min:.6e} over {} rows", gaps.len()),
            })
        }
        Check::Nesting => {
            let r1 = csv.numbers("R1")?;
            let r2 = csv.numbers("R2")?;
            let tags = csv.column("tag")?;
            let region = |tag: &str| {
                RateRegion::from_points(
                    csv.rows
                        .iter()
                        .enumerate()
                        .filter(|(_, row)| row[tags] == tag)
                        .map(|(i, _)| RatePair::new(r1[i], r2[i]))
                        .collect(),
                )
            };
            let (cap, fdma, tdma) = (region("capacity"), region("fdma"), region("tdma"));
            if cap.hull.is_empty() || fdma.hull.is_empty() || tdma.hull.is_empty() {
                bail!("region CSV needs capacity, fdma and tdma rows");
            }
            let slack = 1e-9;
            let pass = cap.contains_region(&fdma, slack) && fdma.contains_region(&tdma, slack);
            Ok(Report {
                check: "nesting".into(),
                pass,
                detail: format!(
                    "fdma beyond capacity by {:.3e}, tdma beyond fdma by {:.3e} (relative)",
                    fdma.excess_over(&cap),
                    tdma.excess_over(&fdma)
                ),
            })
        }
    }
}
