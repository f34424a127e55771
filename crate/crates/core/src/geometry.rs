//! Scenario definition: RF constants, waveguides and users.
//!
//! Waveguides run parallel to the x-axis from a feed point at `x = 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distances below this are treated as coincident.
pub const MIN_DISTANCE: f64 = 1e-9;

/// Carrier and link-budget constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfConstants {
    /// Free-space wavelength, m.
    pub wavelength: f64,
    /// Effective refractive index of the guided mode.
    pub n_eff: f64,
    /// Free-space amplitude gain at 1 m.
    pub eta: f64,
    /// Noise power, W.
    pub noise_power: f64,
    /// Transmit power, W.
    pub tx_power: f64,
}

impl RfConstants {
    /// Builds constants with the free-space default `eta = wavelength / (4 pi)`.
    pub fn new(wavelength: f64, n_eff: f64, noise_power: f64, tx_power: f64) -> Result<Self> {
        let c = Self {
            wavelength,
            n_eff,
            eta: wavelength / (4.0 * std::f64::consts::PI),
            noise_power,
            tx_power,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        self.eta = eta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.wavelength > 0.0
            && self.n_eff >= 1.0
            && self.eta > 0.0
            && self.noise_power > 0.0
            && self.tx_power > 0.0
            && [self.wavelength, self.n_eff, self.eta, self.noise_power, self.tx_power]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("rf constants {self:?}")))
        }
    }

    /// Free-space wavenumber 2 pi / lambda.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }
}

/// A straight waveguide fed at `[0, y, z]` and running along +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waveguide {
    pub y: f64,
    pub z: f64,
    /// Usable length x_max, m.
    pub length: f64,
    /// Minimum spacing between neighbouring PAs, m.
    pub min_spacing: f64,
}

impl Waveguide {
    pub fn new(y: f64, z: f64, length: f64, min_spacing: f64) -> Result<Self> {
        let w = Self {
            y,
            z,
            length,
            min_spacing,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.y, self.z, self.length, self.min_spacing]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.length > 0.0 && self.min_spacing > 0.0 && self.min_spacing <= self.length
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("waveguide {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UserPosition {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub constants: RfConstants,
    pub waveguides: Vec<Waveguide>,
    pub users: Vec<UserPosition>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsFile {
    wavelength: f64,
    n_eff: f64,
    eta: Option<f64>,
    noise_power: f64,
    tx_power: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    activation: Option<String>,
    constants: ConstantsFile,
    #[serde(default)]
    waveguide: Vec<Waveguide>,
    #[serde(default)]
    user: Vec<UserPosition>,
}

impl Scenario {
    pub fn new(
        constants: RfConstants,
        waveguides: Vec<Waveguide>,
        users: Vec<UserPosition>,
    ) -> Result<Self> {
        let s = Self {
            constants,
            waveguides,
            users,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if self.waveguides.is_empty() || self.users.is_empty() {
            return Err(Error::InvalidParameter(
                "scenario needs at least one waveguide and one user".into(),
            ));
        }
        for w in &self.waveguides {
            w.validate()?;
        }
        for (i, a) in self.waveguides.iter().enumerate() {
            for b in &self.waveguides[i + 1..] {
                if a.y == b.y && a.z == b.z {
                    return Err(Error::InvalidParameter(format!(
                        "waveguides share feed coordinates (y={}, z={})",
                        a.y, a.z
                    )));
                }
            }
        }
        if self
            .users
            .iter()
            .any(|u| !(u.x.is_finite() && u.y.is_finite() && u.z.is_finite()))
        {
            return Err(Error::InvalidParameter("non-finite user coordinate".into()));
        }
        Ok(())
    }

    /// Parses the TOML scenario format with `[constants]`, `[[waveguide]]`
    /// and `[[user]]` tables. Also returns the optional `activation` key.
    pub fn from_toml_str(text: &str) -> Result<(Self, Option<String>)> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let c = &file.constants;
        let mut constants = RfConstants::new(c.wavelength, c.n_eff, c.noise_power, c.tx_power)
            .map_err(|e| Error::Config(format!("[constants]: {e}")))?;
        if let Some(eta) = c.eta {
            constants = constants
                .with_eta(eta)
                .map_err(|e| Error::Config(format!("[constants].eta: {e}")))?;
        }
        let s = Self::new(constants, file.waveguide, file.user)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok((s, file.activation))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    /// Serializes back to the TOML scenario format.
    pub fn to_toml_string(&self) -> String {
        let c = &self.constants;
        let mut out = format!(
            "[constants]\nwavelength = {:?}\nn_eff = {:?}\neta = {:?}\nnoise_power = {:?}\ntx_power = {:?}\n",
            c.wavelength, c.n_eff, c.eta, c.noise_power, c.tx_power
        );
        for w in &self.waveguides {
            out += &format!(
                "\n[[waveguide]]\ny = {:?}\nz = {:?}\nlength = {:?}\nmin_spacing = {:?}\n",
                w.y, w.z, w.length, w.min_spacing
            );
        }
        for u in &self.users {
            out += &format!("\n[[user]]\nx = {:?}\ny = {:?}\nz = {:?}\n", u.x, u.y, u.z);
        }
        out
    }
}

/// Distance from the waveguide axis to the user, zeta.
pub fn lateral_offset(w: &Waveguide, u: &UserPosition) -> f64 {
    (w.y - u.y).hypot(w.z - u.z)
}

/// Distance from a PA at `x` on `w` to the user.
pub fn pa_user_distance(x: f64, w: &Waveguide, u: &UserPosition) -> Result<f64> {
    checked_distance(x - u.x, lateral_offset(w, u))
}

pub(crate) fn checked_distance(dx: f64, zeta: f64) -> Result<f64> {
    let r = dx.hypot(zeta);
    if r < MIN_DISTANCE {
        Err(Error::DegenerateDistance(r))
    } else {
        Ok(r)
    }
}
