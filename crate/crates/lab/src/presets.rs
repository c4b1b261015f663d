//! Named, fully specified configurations.

use crate::config::{ConfigError, ProfileConfig, RegKind, Result, RunConfig};

/// `(name, one-line description)` of every preset.
pub const PRESETS: [(&str, &str); 9] = [
    (
        "homogeneous-ode",
        "constant data; w follows c·exp(−λt) exactly",
    ),
    (
        "heat-decoupled-1d",
        "no coupling, no consumption; one cosine mode decays like exp(−π²t)",
    ),
    (
        "2d-coupled",
        "two off-center bumps, full coupling; long run to equilibrium",
    ),
    (
        "2d-beyond-threshold",
        "χ₁ = χ₂ = 4 with max w₀ = 1, past the classical smallness threshold",
    ),
    (
        "consumption-budget",
        "strong consumption with seeded noise; tracks ∫∫(αF(u)+βF(v))w",
    ),
    (
        "weighted-lp-tail",
        "signal already below δ; weighted L^p functional from the start",
    ),
    (
        "eps-sweep-3d",
        "smooth 3D data with the logarithmic family, for ε-sweeps",
    ),
    ("smooth-1d", "smooth coupled 1D data for refinement studies"),
    (
        "2d-smooth",
        "smooth coupled 2D data compatible with zero flux, for refinement studies",
    ),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

fn bumps(cells: usize) -> RunConfig {
    RunConfig {
        cells: vec![cells, cells],
        lengths: vec![1.0, 1.0],
        u: ProfileConfig::gaussian(0.5, 1.0, [0.3, 0.35, 0.5], 0.15),
        v: ProfileConfig::gaussian(0.5, 1.0, [0.7, 0.6, 0.5], 0.15),
        w: ProfileConfig::gaussian(0.5, 0.5, [0.5, 0.5, 0.5], 0.3),
        ..RunConfig::default()
    }
}

fn smooth(cells: Vec<usize>) -> RunConfig {
    let dim = cells.len();
    RunConfig {
        lengths: vec![1.0; dim],
        cells,
        chi1: 1.0,
        chi2: 1.0,
        alpha: 1.0,
        beta: 1.0,
        u: ProfileConfig::cosine(1.0, 0.6),
        v: ProfileConfig::cosine(1.0, -0.5),
        w: ProfileConfig::cosine(0.6, 0.4),
        t_end: 0.05,
        record_stride: 10,
        n_label: if dim >= 2 { dim } else { 2 },
        ..RunConfig::default()
    }
}

/// The named preset, or an error listing the available names.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut c = match name {
        "homogeneous-ode" => RunConfig {
            cells: vec![8, 8],
            u: ProfileConfig::constant(1.0),
            v: ProfileConfig::constant(1.0),
            w: ProfileConfig::constant(1.0),
            fixed_dt: Some(1e-4),
            t_end: 2.0,
            record_stride: 500,
            ..RunConfig::default()
        },
        "heat-decoupled-1d" => RunConfig {
            cells: vec![128],
            lengths: vec![1.0],
            chi1: 0.0,
            chi2: 0.0,
            alpha: 0.0,
            beta: 0.0,
            u: ProfileConfig::cosine(1.0, 1.0),
            v: ProfileConfig::constant(1.0),
            w: ProfileConfig::constant(1.0),
            t_end: 0.2,
            record_stride: 200,
            ..RunConfig::default()
        },
        "2d-coupled" => RunConfig {
            t_end: 6.0,
            record_stride: 250,
            weighted: Some((2.0, 0.5)),
            expect_convergence: true,
            expect_bounded: true,
            ..bumps(32)
        },
        "2d-beyond-threshold" => RunConfig {
            // An odd cell count puts a cell center on the bump, so max w₀ = 1.
            chi1: 4.0,
            chi2: 4.0,
            t_end: 6.0,
            record_stride: 250,
            weighted: Some((2.0, 0.5)),
            expect_convergence: true,
            expect_bounded: true,
            ..bumps(33)
        },
        "consumption-budget" => RunConfig {
            alpha: 3.0,
            beta: 2.0,
            perturbation: 0.05,
            seed: 20240917,
            t_end: 3.0,
            record_stride: 100,
            w: ProfileConfig::gaussian(0.4, 1.6, [0.45, 0.55, 0.5], 0.25),
            ..bumps(24)
        },
        "weighted-lp-tail" => RunConfig {
            w: ProfileConfig::gaussian(0.002, 0.01, [0.5, 0.5, 0.5], 0.2),
            t_end: 1.0,
            record_stride: 50,
            weighted: Some((2.0, 0.5)),
            ..bumps(24)
        },
        "eps-sweep-3d" => RunConfig {
            regularization: RegKind::Logarithmic,
            eps: 0.1,
            u: ProfileConfig::cosine(1.5, 1.2),
            v: ProfileConfig::cosine(1.5, -1.2),
            t_end: 0.1,
            ..smooth(vec![12, 12, 12])
        },
        "smooth-1d" => smooth(vec![32]),
        "2d-smooth" => smooth(vec![16, 16]),
        _ => {
            return Err(ConfigError::UnknownPreset {
                name: name.to_string(),
                available: names().collect::<Vec<_>>().join(", "),
            })
        }
    };
    c.preset = Some(name.to_string());
    Ok(c)
}
