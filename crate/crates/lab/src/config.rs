//! Flat `key = value` run configuration.
//!
//! A config file is a list of `key = value` lines; `#` and `;` start
//! comments. A `preset = NAME` line (anywhere in the file) selects the base
//! configuration and every other line overrides one knob of it. Unknown and
//! repeated keys are errors, reported with their line number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chemotaxis_core::diagnostics::WeightedExponents;
use chemotaxis_core::{
    DiagnosticsConfig, Grid, InitialData, Params, ProblemSpec, Profile, Regularization, StepPolicy,
};
use thiserror::Error;

use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}` (known keys: {known})")]
    UnknownKey {
        line: usize,
        key: String,
        known: String,
    },
    #[error("line {line}: key `{key}` given more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("unknown preset `{name}`; available presets: {available}")]
    UnknownPreset { name: String, available: String },
    #[error("configuration does not describe a valid problem: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Shape of one initial field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    Constant,
    Cosine,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    pub base: f64,
    pub amplitude: f64,
    /// Bump center as fractions of the side lengths.
    pub center: [f64; 3],
    pub width: f64,
}

impl ProfileConfig {
    pub fn constant(c: f64) -> Self {
        ProfileConfig {
            kind: ProfileKind::Constant,
            base: c,
            amplitude: 0.0,
            center: [0.5; 3],
            width: 0.1,
        }
    }

    pub fn cosine(base: f64, amplitude: f64) -> Self {
        ProfileConfig {
            kind: ProfileKind::Cosine,
            amplitude,
            ..Self::constant(base)
        }
    }

    pub fn gaussian(base: f64, amplitude: f64, center: [f64; 3], width: f64) -> Self {
        ProfileConfig {
            kind: ProfileKind::Gaussian,
            base,
            amplitude,
            center,
            width,
        }
    }

    fn to_profile(self) -> Profile {
        match self.kind {
            ProfileKind::Constant => Profile::Constant(self.base),
            ProfileKind::Cosine => Profile::Cosine {
                base: self.base,
                amplitude: self.amplitude,
            },
            ProfileKind::Gaussian => Profile::Gaussian {
                base: self.base,
                amplitude: self.amplitude,
                center: self.center,
                width: self.width,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegKind {
    Identity,
    Logarithmic,
    Rational,
}

/// Every knob of a run. [`RunConfig::resolve`] turns it into a validated
/// [`ProblemSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub chi1: f64,
    pub chi2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub regularization: RegKind,
    pub eps: f64,
    pub u: ProfileConfig,
    pub v: ProfileConfig,
    pub w: ProfileConfig,
    pub perturbation: f64,
    pub seed: u64,
    pub t_end: f64,
    pub record_stride: usize,
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub positivity_retries: u32,
    pub fixed_dt: Option<f64>,
    pub n_label: usize,
    pub weighted: Option<(f64, f64)>,
    pub output_dir: Option<PathBuf>,
    /// Require `conv_u`, `conv_v`, `conv_w` to drop below `10⁻³` by `t_end`.
    pub expect_convergence: bool,
    /// Require `sup compound_2d ≤ 3 × median` over the final half.
    pub expect_bounded: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            cells: vec![32, 32],
            lengths: vec![1.0, 1.0],
            chi1: 1.0,
            chi2: 1.0,
            alpha: 1.0,
            beta: 1.0,
            regularization: RegKind::Identity,
            eps: 0.1,
            u: ProfileConfig::constant(1.0),
            v: ProfileConfig::constant(1.0),
            w: ProfileConfig::constant(0.5),
            perturbation: 0.0,
            seed: 0,
            t_end: 1.0,
            record_stride: 100,
            cfl_safety: 0.9,
            dt_max: f64::INFINITY,
            positivity_retries: 40,
            fixed_dt: None,
            n_label: 2,
            weighted: None,
            output_dir: None,
            expect_convergence: false,
            expect_bounded: false,
        }
    }
}

const PROFILE_KEYS: [&str; 5] = ["profile", "base", "amplitude", "center", "width"];

/// Keys accepted in config files, in the order [`RunConfig::to_ini`] writes them.
pub fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = [
        "preset",
        "cells",
        "lengths",
        "chi1",
        "chi2",
        "alpha",
        "beta",
        "regularization",
        "eps",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for species in ["u", "v", "w"] {
        keys.extend(PROFILE_KEYS.iter().map(|k| format!("{species}_{k}")));
    }
    keys.extend(
        [
            "perturbation",
            "seed",
            "t_end",
            "record_stride",
            "cfl_safety",
            "dt_max",
            "positivity_retries",
            "fixed_dt",
            "n_label",
            "weighted",
            "output_dir",
            "expect_convergence",
            "expect_bounded",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    keys
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x.is_nan() {
        return Err("NaN is not allowed".into());
    }
    Ok(x)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| format!("`{}` is not a valid list entry", p.trim()))
        })
        .collect()
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn is_none(s: &str) -> bool {
    s.eq_ignore_ascii_case("none")
}

fn fmt_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    /// Reads a config file from disk.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses config text; see the module docs for the format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim().to_string();
            if entries.iter().any(|(_, k, _)| *k == key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            entries.push((line, key, value.trim().to_string()));
        }
        let mut config = match entries.iter().find(|(_, k, _)| k == "preset") {
            Some((_, _, name)) => presets::preset(name)?,
            None => RunConfig::default(),
        };
        for (line, key, value) in &entries {
            if key != "preset" {
                config.set(*line, key, value)?;
            }
        }
        Ok(config)
    }

    /// Sets one knob from its textual value; `line` is used in error messages.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let bad = |message: String| ConfigError::Value {
            line,
            key: key.to_string(),
            message,
        };
        let num = |s: &str| parse_f64(s).map_err(bad);
        match key {
            "preset" => self.preset = Some(value.to_string()),
            "cells" => self.cells = parse_list(value).map_err(bad)?,
            "lengths" => {
                self.lengths = parse_list::<f64>(value).map_err(bad)?;
            }
            "chi1" => self.chi1 = num(value)?,
            "chi2" => self.chi2 = num(value)?,
            "alpha" => self.alpha = num(value)?,
            "beta" => self.beta = num(value)?,
            "regularization" => {
                self.regularization = match value {
                    "identity" => RegKind::Identity,
                    "logarithmic" => RegKind::Logarithmic,
                    "rational" => RegKind::Rational,
                    _ => {
                        return Err(bad(format!(
                            "expected identity, logarithmic or rational, got `{value}`"
                        )))
                    }
                }
            }
            "eps" => self.eps = num(value)?,
            "perturbation" => self.perturbation = num(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| bad(format!("`{value}` is not a seed")))?
            }
            "t_end" => self.t_end = num(value)?,
            "record_stride" => {
                self.record_stride = value
                    .parse()
                    .map_err(|_| bad(format!("`{value}` is not a positive integer")))?
            }
            "cfl_safety" => self.cfl_safety = num(value)?,
            "dt_max" => self.dt_max = num(value)?,
            "positivity_retries" => {
                self.positivity_retries = value
                    .parse()
                    .map_err(|_| bad(format!("`{value}` is not an integer")))?
            }
            "fixed_dt" => {
                self.fixed_dt = if is_none(value) {
                    None
                } else {
                    Some(num(value)?)
                }
            }
            "n_label" => {
                self.n_label = value
                    .parse()
                    .map_err(|_| bad(format!("`{value}` is not an integer")))?
            }
            "weighted" => {
                self.weighted = if is_none(value) {
                    None
                } else {
                    match parse_list::<f64>(value).map_err(bad)?.as_slice() {
                        [p, r] => Some((*p, *r)),
                        _ => return Err(bad("expected `p, r` or `none`".into())),
                    }
                }
            }
            "output_dir" => {
                self.output_dir = if is_none(value) {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "expect_convergence" => self.expect_convergence = parse_bool(value).map_err(bad)?,
            "expect_bounded" => self.expect_bounded = parse_bool(value).map_err(bad)?,
            _ => {
                let profile = key
                    .split_once('_')
                    .filter(|(s, k)| ["u", "v", "w"].contains(s) && PROFILE_KEYS.contains(k));
                let Some((species, field)) = profile else {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                        known: known_keys().join(", "),
                    });
                };
                let target = match species {
                    "u" => &mut self.u,
                    "v" => &mut self.v,
                    _ => &mut self.w,
                };
                match field {
                    "profile" => {
                        target.kind = match value {
                            "constant" => ProfileKind::Constant,
                            "cosine" => ProfileKind::Cosine,
                            "gaussian" => ProfileKind::Gaussian,
                            _ => {
                                return Err(bad(format!(
                                    "expected constant, cosine or gaussian, got `{value}`"
                                )))
                            }
                        }
                    }
                    "base" => target.base = num(value)?,
                    "amplitude" => target.amplitude = num(value)?,
                    "width" => target.width = num(value)?,
                    _ => {
                        let c: Vec<f64> = parse_list(value).map_err(bad)?;
                        if c.is_empty() || c.len() > 3 {
                            return Err(bad("expected one to three fractions".into()));
                        }
                        target.center[..c.len()].copy_from_slice(&c);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn regularization(&self) -> Result<Regularization> {
        let reg = match self.regularization {
            RegKind::Identity => Ok(Regularization::Identity),
            RegKind::Logarithmic => Regularization::logarithmic(self.eps),
            RegKind::Rational => Regularization::rational(self.eps),
        };
        reg.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Builds and validates the problem this config describes.
    pub fn resolve(&self) -> Result<ProblemSpec> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let grid = Grid::new(&self.lengths, &self.cells).map_err(|e| invalid(&e))?;
        let params =
            Params::new(self.chi1, self.chi2, self.alpha, self.beta).map_err(|e| invalid(&e))?;
        if self.record_stride == 0 {
            return Err(ConfigError::Invalid(
                "record_stride must be at least 1".into(),
            ));
        }
        let spec = ProblemSpec {
            grid,
            params,
            reg: self.regularization()?,
            initial: InitialData {
                u: self.u.to_profile(),
                v: self.v.to_profile(),
                w: self.w.to_profile(),
                perturbation: self.perturbation,
                seed: self.seed,
            },
            t_end: self.t_end,
            output_stride: self.record_stride,
            policy: StepPolicy {
                cfl_safety: self.cfl_safety,
                dt_max: self.dt_max,
                positivity_retries: self.positivity_retries,
                fixed_dt: self.fixed_dt,
            },
            diagnostics: DiagnosticsConfig {
                n_label: self.n_label,
                weighted: self.weighted.map(|(p, r)| WeightedExponents { p, r }),
            },
        };
        spec.validate().map_err(|e| invalid(&e))?;
        spec.policy.validate().map_err(|e| invalid(&e))?;
        Ok(spec)
    }

    /// Writes every knob back in config syntax; parsing the result gives
    /// back an equal config.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(p) = &self.preset {
            put("preset", p.clone());
        }
        put("cells", fmt_list(&self.cells));
        put("lengths", fmt_list(&self.lengths));
        put("chi1", self.chi1.to_string());
        put("chi2", self.chi2.to_string());
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        let reg = match self.regularization {
            RegKind::Identity => "identity",
            RegKind::Logarithmic => "logarithmic",
            RegKind::Rational => "rational",
        };
        put("regularization", reg.into());
        put("eps", self.eps.to_string());
        for (name, p) in [("u", &self.u), ("v", &self.v), ("w", &self.w)] {
            let kind = match p.kind {
                ProfileKind::Constant => "constant",
                ProfileKind::Cosine => "cosine",
                ProfileKind::Gaussian => "gaussian",
            };
            put(&format!("{name}_profile"), kind.into());
            put(&format!("{name}_base"), p.base.to_string());
            put(&format!("{name}_amplitude"), p.amplitude.to_string());
            put(&format!("{name}_center"), fmt_list(&p.center));
            put(&format!("{name}_width"), p.width.to_string());
        }
        put("perturbation", self.perturbation.to_string());
        put("seed", self.seed.to_string());
        put("t_end", self.t_end.to_string());
        put("record_stride", self.record_stride.to_string());
        put("cfl_safety", self.cfl_safety.to_string());
        put("dt_max", self.dt_max.to_string());
        put("positivity_retries", self.positivity_retries.to_string());
        put(
            "fixed_dt",
            self.fixed_dt.map_or("none".into(), |d| d.to_string()),
        );
        put("n_label", self.n_label.to_string());
        put(
            "weighted",
            self.weighted
                .map_or("none".into(), |(p, r)| format!("{p}, {r}")),
        );
        put(
            "output_dir",
            self.output_dir
                .as_ref()
                .map_or("none".into(), |d| d.display().to_string()),
        );
        put("expect_convergence", self.expect_convergence.to_string());
        put("expect_bounded", self.expect_bounded.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_a_preset() {
        let text =
            "# comment\npreset = homogeneous-ode\n\nt_end = 0.5 ; trailing comment\nchi1 = 2\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.preset.as_deref(), Some("homogeneous-ode"));
        assert_eq!(c.t_end, 0.5);
        assert_eq!(c.chi1, 2.0);
        assert_eq!(c.u.kind, ProfileKind::Constant);
    }

    #[test]
    fn errors_carry_line_and_key() {
        let err = RunConfig::parse("t_end = 1\nchii = 3\n").unwrap_err();
        assert!(
            matches!(&err, ConfigError::UnknownKey { line: 2, key, .. } if key == "chii"),
            "{err}"
        );
        let err = RunConfig::parse("t_end = 1\nt_end = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }));
        let err = RunConfig::parse("cells 32\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
        let err = RunConfig::parse("\n\nalpha = lots\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Value { line: 3, key, .. } if key == "alpha"));
        assert!(err.to_string().contains("line 3"));
        let err = RunConfig::parse("u_colour = red\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
        let err = RunConfig::parse("preset = nope\n").unwrap_err();
        assert!(err.to_string().contains("homogeneous-ode"), "{err}");
    }

    #[test]
    fn ini_round_trip() {
        let mut c = RunConfig::default();
        c.weighted = Some((2.0, 0.5));
        c.fixed_dt = Some(1e-4);
        c.w = ProfileConfig::gaussian(0.2, 0.8, [0.3, 0.6, 0.5], 0.15);
        c.output_dir = Some(PathBuf::from("out/run"));
        c.expect_bounded = true;
        c.regularization = RegKind::Rational;
        assert_eq!(RunConfig::parse(&c.to_ini()).unwrap(), c);
        for name in presets::names() {
            let p = presets::preset(name).unwrap();
            assert_eq!(RunConfig::parse(&p.to_ini()).unwrap(), p, "{name}");
        }
    }

    #[test]
    fn resolve_validates() {
        assert!(RunConfig::default().resolve().is_ok());
        let mut c = RunConfig::default();
        c.cells = vec![2, 32];
        assert!(matches!(c.resolve(), Err(ConfigError::Invalid(_))));
        let mut c = RunConfig::default();
        c.lengths = vec![1.0];
        assert!(c.resolve().is_err());
        let mut c = RunConfig::default();
        c.regularization = RegKind::Logarithmic;
        c.eps = 1.0;
        assert!(c.resolve().is_err());
        let mut c = RunConfig::default();
        c.weighted = Some((2.0, 1.5));
        assert!(c.resolve().is_err());
        let mut c = RunConfig::default();
        c.cfl_safety = 0.0;
        assert!(c.resolve().is_err());
    }
}
