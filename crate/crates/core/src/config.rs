//! Strict TOML run configuration.
//!
//! Every section rejects unknown keys and errors name the offending key as
//! `[section].key`. Missing keys take the defaults of [`SimConfig::default`];
//! the normalized echo written next to every run lists all of them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, Physics};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::operators::DriftTerms;
use crate::spectral::EigenMethod;

/// Shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    /// Horizontal extent `L`.
    pub length: f64,
    /// Depth `h`.
    pub depth: f64,
    /// Grid intervals in x.
    pub nx: usize,
    /// Grid intervals in z.
    pub nz: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection { length: 1.0, depth: 1.0, nx: 32, nz: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    Zero,
    Fixed,
    Modulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForcingSection {
    pub kind: ForcingKind,
    /// Amplitude of the smooth random profile.
    pub amplitude: f64,
    /// Number of trigonometric profiles per direction.
    pub order: usize,
    pub seed: u64,
    /// Piecewise-linear time modulation, used by `modulated`.
    pub times: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Default for ForcingSection {
    fn default() -> Self {
        ForcingSection { kind: ForcingKind::Zero, amplitude: 0.0, order: 2, seed: 0, times: vec![], scales: vec![] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Zero,
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub amplitude: f64,
    pub order: usize,
    pub seed: u64,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection { kind: InitialKind::Smooth, amplitude: 0.1, order: 3, seed: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenRoute {
    Separable,
    Dense,
}

impl From<EigenRoute> for EigenMethod {
    fn from(r: EigenRoute) -> Self {
        match r {
            EigenRoute::Separable => EigenMethod::Separable,
            EigenRoute::Dense => EigenMethod::Dense,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    /// Galerkin order `n`.
    pub modes: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Root seed of the noise streams.
    pub seed: u64,
    pub eigen: EigenRoute,
    pub advection: bool,
    pub buoyancy: bool,
    pub coriolis: bool,
    /// Stop level `M` of the running monitor; `0` disables it.
    pub blowup_m: f64,
    /// Localization level `n` of `int |u|_(2)^2`; `0` disables it.
    pub localization: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            modes: 48,
            dt: 1e-3,
            t_end: 1.0,
            seed: 0,
            eigen: EigenRoute::Separable,
            advection: true,
            buoyancy: true,
            coriolis: true,
            blowup_m: 0.0,
            localization: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Snapshot cadence in steps; `0` keeps only the final state.
    pub cadence: usize,
    /// Trajectories of an ensemble run.
    pub trajectories: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), cadence: 100, trajectories: 8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub domain: DomainSection,
    pub physics: Physics,
    pub noise: NoiseSpec,
    pub forcing: ForcingSection,
    pub initial: InitialSection,
    pub numerics: NumericsSection,
    pub output: OutputSection,
}

fn key_path(path: &serde_path_to_error::Path) -> String {
    let parts: Vec<String> = path.iter().map(|s| s.to_string()).collect();
    match parts.as_slice() {
        [] => "<root>".into(),
        [one] => format!("[{one}]"),
        [section, rest @ ..] => format!("[{section}].{}", rest.join(".")),
    }
}

fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl SimConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| bad("<document>", e.message().to_string()))?;
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().message().to_string();
            bad(&key_path(e.path()), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn shipped_default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.length > 0.0 && d.length.is_finite()) {
            return Err(bad("[domain].length", "must be positive"));
        }
        if !(d.depth > 0.0 && d.depth.is_finite()) {
            return Err(bad("[domain].depth", "must be positive"));
        }
        if d.nx < 4 {
            return Err(bad("[domain].nx", "must be at least 4"));
        }
        if d.nz < 4 {
            return Err(bad("[domain].nz", "must be at least 4"));
        }
        self.physics.validate().map_err(|e| bad("[physics]", e.to_string()))?;
        self.noise.validate().map_err(|e| bad("[noise]", e.to_string()))?;
        let f = &self.forcing;
        if !f.amplitude.is_finite() {
            return Err(bad("[forcing].amplitude", "must be finite"));
        }
        if f.kind != ForcingKind::Zero && f.order == 0 {
            return Err(bad("[forcing].order", "must be positive"));
        }
        if f.kind == ForcingKind::Modulated {
            if f.times.len() < 2 || f.times.len() != f.scales.len() {
                return Err(bad("[forcing].times", "needs at least two entries matching [forcing].scales"));
            }
            if f.times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad("[forcing].times", "must increase"));
            }
        }
        let i = &self.initial;
        if !i.amplitude.is_finite() {
            return Err(bad("[initial].amplitude", "must be finite"));
        }
        if i.kind == InitialKind::Smooth && i.order == 0 {
            return Err(bad("[initial].order", "must be positive"));
        }
        let n = &self.numerics;
        if n.modes == 0 {
            return Err(bad("[numerics].modes", "must be positive"));
        }
        let total = 2 * (d.nx - 1) * d.nz - 1 + (d.nx + 1) * (d.nz + 1);
        if n.modes > total {
            return Err(bad("[numerics].modes", format!("exceeds the {total} grid modes")));
        }
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return Err(bad("[numerics].dt", "must be positive"));
        }
        if !(n.t_end > 0.0 && n.t_end.is_finite()) {
            return Err(bad("[numerics].t_end", "must be positive"));
        }
        let steps = n.t_end / n.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return Err(bad("[numerics].dt", "must divide [numerics].t_end"));
        }
        if !(n.blowup_m >= 0.0) {
            return Err(bad("[numerics].blowup_m", "must be non-negative"));
        }
        if !(n.localization >= 0.0) {
            return Err(bad("[numerics].localization", "must be non-negative"));
        }
        if self.output.dir.is_empty() {
            return Err(bad("[output].dir", "must not be empty"));
        }
        if self.output.trajectories == 0 {
            return Err(bad("[output].trajectories", "must be positive"));
        }
        Ok(())
    }

    /// Normalized echo with every key spelled out.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the normalized echo, hex encoded.
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(self.echo().as_bytes())
    }

    pub fn steps(&self) -> usize {
        (self.numerics.t_end / self.numerics.dt).round() as usize
    }

    pub fn domain_spec(&self) -> DomainSpec {
        let d = &self.domain;
        DomainSpec::new(d.length, d.depth, d.nx, d.nz).with_physics(self.physics)
    }

    pub fn terms(&self) -> DriftTerms {
        let n = &self.numerics;
        DriftTerms { advection: n.advection, buoyancy: n.buoyancy, coriolis: n.coriolis }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_matches_builtin_defaults() {
        assert_eq!(SimConfig::shipped_default(), SimConfig::default());
        let c = SimConfig::default();
        assert_eq!((c.domain.nx, c.domain.nz, c.numerics.modes, c.noise.modes), (32, 32, 48, 16));
        assert_eq!((c.numerics.dt, c.numerics.t_end, c.noise.gamma), (1e-3, 1.0, 2.0));
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let e = SimConfig::from_toml("[physics]\nsalinity = 35.0\n").unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "[physics].salinity"),
            other => panic!("{other}"),
        }
        let e = SimConfig::from_toml("[ocean]\nx = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "[ocean]"), "{e}");
    }

    #[test]
    fn type_and_range_errors_name_their_path() {
        let e = SimConfig::from_toml("[numerics]\ndt = \"fast\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "[numerics].dt"), "{e}");
        let e = SimConfig::from_toml("[numerics]\ndt = -1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "[numerics].dt"), "{e}");
        let e = SimConfig::from_toml("[domain]\nnx = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "[domain].nx"), "{e}");
    }

    #[test]
    fn echo_round_trips() {
        let c = SimConfig::from_toml("[numerics]\ndt = 0.01\nt_end = 0.5\n").unwrap();
        let back = SimConfig::from_toml(&c.echo()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        assert_eq!(c.steps(), 50);
    }
}
