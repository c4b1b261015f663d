//! The three experiment drivers: single runs, ε-sweeps and grid refinement.
//!
//! Drivers return in-memory reports carrying a [`Manifest`]; writing them to
//! disk is a separate step so tests can inspect results without files.

use std::path::Path;
use std::time::{Duration, Instant};

use chemotaxis_core::diagnostics::{CosineBump, DiagnosticsError};
use chemotaxis_core::model::threshold_product;
use chemotaxis_core::solver::{SolverError, StepStats};
use chemotaxis_core::{
    DiagnosticsRecord, IdentityTracker, ProblemSpec, Regularization, Simulation, State,
    WeakFormAccumulator,
};
use rayon::prelude::*;

use crate::config::{RegKind, RunConfig};
use crate::output::{
    fmt_real, write_records, write_table, Manifest, REFINEMENT_VERSION, SWEEP_VERSION,
};
use crate::verdicts::{evaluate, Evidence, Verdict};
use crate::LabError;

/// Largest cell count the finest refinement level may have by default.
pub const DEFAULT_CELL_BUDGET: usize = 1 << 20;
/// Required log-log slope of the ε-sweep errors.
pub const EPS_ORDER_MIN: f64 = 0.7;
/// Accepted band for observed spatial orders.
pub const SPACE_ORDER: (f64, f64) = (1.6, 2.4);
/// Minimum factor by which each weak-form residual shrinks per refinement.
pub const WEAK_SHRINK_MIN: f64 = 1.5;

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn config_section(config: &RunConfig) -> Vec<(String, String)> {
    config
        .to_ini()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| kv(k, v))
        .collect()
}

fn problem_section(spec: &ProblemSpec, w0_max: f64) -> Vec<(String, String)> {
    let p = &spec.params;
    let dim = spec.grid.dim();
    let (product, bound) = threshold_product(p, w0_max, dim.max(2));
    vec![
        kv("dimension", dim),
        kv("cells", format!("{:?}", spec.grid.cells())),
        kv("h_min", fmt_real(spec.grid.h_min())),
        kv("regularization", format!("{:?}", spec.reg)),
        kv("threshold_product", fmt_real(product)),
        kv("threshold_bound", fmt_real(bound)),
        kv("within_threshold", product <= bound),
        kv("within_theorem_hypothesis", p.within_theorem_hypothesis()),
    ]
}

/// One finished (or aborted) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: ProblemSpec,
    pub records: Vec<DiagnosticsRecord>,
    pub stats: StepStats,
    pub final_state: State,
    /// Why the run stopped before `t_end`, if it did.
    pub failure: Option<SolverError>,
    pub wall_time: Duration,
    pub manifest: Manifest,
}

/// Runs `config` to its end time and evaluates every check on the result.
///
/// A solver abort is not an error here: the records produced so far are kept
/// and the manifest carries a failed `run_completed` verdict.
pub fn run(config: &RunConfig) -> Result<RunOutcome, LabError> {
    let spec = config.resolve()?;
    let mut sim = Simulation::new(&spec)?;
    let start = Instant::now();
    let mut records = Vec::new();
    let failure = sim
        .advance(spec.t_end, |_, r| records.push(r.clone()))
        .err();
    let wall_time = start.elapsed();

    let ev = Evidence {
        spec: &spec,
        ctx: &sim.ctx,
        records: &records,
        stats: &sim.stats,
        expect_convergence: config.expect_convergence,
        expect_bounded: config.expect_bounded,
    };
    let mut verdicts = vec![Verdict::check(
        "run_completed",
        sim.state.t,
        spec.t_end,
        failure.is_none(),
        &failure
            .as_ref()
            .map_or_else(|| "reached t_end".to_string(), |e| e.to_string()),
    )];
    verdicts.extend(evaluate(&ev));

    let s = &sim.stats;
    let mut manifest = Manifest::default();
    let mut summary = vec![kv("preset", config.preset.as_deref().unwrap_or("-"))];
    summary.extend(problem_section(&spec, sim.ctx.w0_max));
    summary.extend([
        kv("t_reached", fmt_real(sim.state.t)),
        kv("steps", s.steps),
        kv("retries", s.retries),
        kv("dt_min", fmt_real(s.dt_min)),
        kv("dt_max", fmt_real(s.dt_max)),
        kv("records", records.len()),
        kv("wall_time_s", format!("{:.3}", wall_time.as_secs_f64())),
    ]);
    manifest.section("run", summary);
    manifest.section("config", config_section(config));
    if let Some(last) = records.last() {
        let cols = DiagnosticsRecord::COLUMNS.iter().zip(last.values());
        manifest.section(
            "final",
            cols.map(|(k, v)| kv(k, v.map(fmt_real).unwrap_or_default()))
                .collect(),
        );
    }
    manifest.verdicts = verdicts;

    Ok(RunOutcome {
        spec,
        records,
        stats: sim.stats,
        final_state: sim.state,
        failure,
        wall_time,
        manifest,
    })
}

/// Writes `records.csv` and `manifest.txt` into `dir`.
pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<(), LabError> {
    create_dir(dir)?;
    write_records(&dir.join("records.csv"), &outcome.records)?;
    outcome.manifest.write(&dir.join("manifest.txt"))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), LabError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        LabError::Output(crate::output::OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

/// Max-norm distance of one ε-member from the unregularized run at `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMember {
    pub eps: f64,
    pub errors: [f64; 3],
}

impl SweepMember {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Step shared by every member and the reference.
    pub frozen_dt: f64,
    pub members: Vec<SweepMember>,
    /// Least-squares slope of `ln max_error` against `ln ε`.
    pub order: f64,
    pub manifest: Manifest,
}

pub const SWEEP_COLUMNS: [&str; 5] = ["eps", "err_u", "err_v", "err_w", "err_max"];

/// Slope of the least-squares line through `(x, y)`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    num / den
}

fn final_state(spec: &ProblemSpec) -> Result<State, SolverError> {
    let mut sim = Simulation::new(spec)?;
    sim.advance(spec.t_end, |_, _| {})?;
    Ok(sim.state)
}

/// Runs the regularized family of `config` at each `ε` (strictly decreasing,
/// inside `(0, 1)`) and compares with the unregularized system.
///
/// Every run uses the same fixed step: the smallest step the adaptive rule
/// proposed along the unregularized trajectory, so the comparison isolates
/// the effect of `ε` from time-stepping error.
pub fn eps_sweep(config: &RunConfig, eps_list: &[f64]) -> Result<SweepReport, LabError> {
    if config.regularization == RegKind::Identity {
        return Err(LabError::Request(
            "ε-sweep needs a regularized family (logarithmic or rational)".into(),
        ));
    }
    if eps_list.len() < 2 {
        return Err(LabError::Request(
            "ε-sweep needs at least two values of ε".into(),
        ));
    }
    if let Some(bad) = eps_list.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(LabError::Request(format!(
            "ε must lie in (0, 1), got {bad}"
        )));
    }
    if eps_list.windows(2).any(|p| p[1] >= p[0]) {
        return Err(LabError::Request(
            "ε values must be strictly decreasing".into(),
        ));
    }

    let mut reference_cfg = config.clone();
    reference_cfg.regularization = RegKind::Identity;
    let adaptive = reference_cfg.resolve()?;
    let mut probe = Simulation::new(&adaptive)?;
    probe.advance(adaptive.t_end, |_, _| {})?;
    let frozen_dt = probe.stats.dt_proposed_min;

    let base = config.resolve()?;
    let mut specs = vec![ProblemSpec {
        reg: Regularization::Identity,
        ..base.clone()
    }];
    for &eps in eps_list {
        specs.push(ProblemSpec {
            reg: base
                .reg
                .with_epsilon(eps)
                .map_err(|e| LabError::Request(e.to_string()))?,
            ..base.clone()
        });
    }
    for s in &mut specs {
        s.policy.fixed_dt = Some(frozen_dt);
    }
    let finals: Vec<State> = specs
        .par_iter()
        .map(final_state)
        .collect::<Result<_, _>>()?;
    let reference = &finals[0];
    let members = eps_list
        .iter()
        .zip(&finals[1..])
        .map(|(&eps, s)| {
            Ok(SweepMember {
                eps,
                errors: [
                    s.u.max_abs_diff(&reference.u)?,
                    s.v.max_abs_diff(&reference.v)?,
                    s.w.max_abs_diff(&reference.w)?,
                ],
            })
        })
        .collect::<Result<Vec<_>, chemotaxis_core::grid::GridError>>()
        .map_err(|e| LabError::Solver(e.into()))?;

    let points: Vec<(f64, f64)> = members
        .iter()
        .map(|m| (m.eps.ln(), m.max_error().ln()))
        .collect();
    let order = fit_slope(&points);
    let worst_ratio = members
        .windows(2)
        .flat_map(|p| (0..3).map(move |k| p[1].errors[k] / p[0].errors[k]))
        .fold(0.0, f64::max);

    let mut manifest = Manifest::default();
    let mut summary = vec![kv("preset", config.preset.as_deref().unwrap_or("-"))];
    summary.extend(problem_section(&base, probe.ctx.w0_max));
    summary.extend([
        kv("frozen_dt", fmt_real(frozen_dt)),
        kv("members", members.len()),
        kv("order", fmt_real(order)),
    ]);
    manifest.section("sweep", summary);
    manifest.section("config", config_section(config));
    manifest.verdicts = vec![
        Verdict::check(
            "eps_errors_decrease",
            worst_ratio,
            1.0,
            worst_ratio < 1.0,
            "largest ratio of consecutive errors, any component",
        ),
        Verdict::check(
            "eps_order",
            order,
            EPS_ORDER_MIN,
            order >= EPS_ORDER_MIN,
            "log-log slope of the max error against ε",
        ),
    ];
    Ok(SweepReport {
        frozen_dt,
        members,
        order,
        manifest,
    })
}

pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<(), LabError> {
    create_dir(dir)?;
    let rows: Vec<Vec<Option<f64>>> = report
        .members
        .iter()
        .map(|m| {
            vec![
                Some(m.eps),
                Some(m.errors[0]),
                Some(m.errors[1]),
                Some(m.errors[2]),
                Some(m.max_error()),
            ]
        })
        .collect();
    write_table(&dir.join("sweep.csv"), SWEEP_VERSION, &SWEEP_COLUMNS, &rows)?;
    report.manifest.write(&dir.join("manifest.txt"))?;
    Ok(())
}

/// One grid of a refinement study.
#[derive(Debug, Clone)]
pub struct LevelReport {
    pub cells: Vec<usize>,
    pub h: f64,
    pub steps: usize,
    /// `max (ΔE/Δt + D)` over every step.
    pub identity_residual: f64,
    /// `max |ΔE/Δt + D_exact|` over every step.
    pub identity_defect: f64,
    /// Weak-form residuals of the u, v and w equations against a cosine
    /// test function vanishing at `t_end`.
    pub weak: [f64; 3],
    pub final_state: State,
}

/// Runs `config` on a grid with `cells` and tracks the entropy identity and
/// the weak form at every step.
pub fn run_level(config: &RunConfig, cells: &[usize]) -> Result<LevelReport, LabError> {
    let mut cfg = config.clone();
    cfg.cells = cells.to_vec();
    let spec = cfg.resolve()?;
    let mut sim = Simulation::new(&spec)?;
    let dim = spec.grid.dim();
    let bump = CosineBump::new(spec.grid.lengths(), &vec![1; dim], spec.t_end);
    let mut tracker = IdentityTracker::new(spec.params, spec.reg, sim.ctx.guard);
    let mut weak = WeakFormAccumulator::new(spec.params, spec.reg, &bump);
    let mut first_err: Option<DiagnosticsError> = None;
    sim.advance_stepwise(spec.t_end, |s, _| {
        if first_err.is_none() {
            if let Err(e) = tracker.push(s).and_then(|_| weak.push(s)) {
                first_err = Some(e);
            }
        }
    })?;
    if let Some(e) = first_err {
        return Err(e.into());
    }
    let (ru, rv, rw) = weak.finish()?;
    Ok(LevelReport {
        cells: cells.to_vec(),
        h: spec.grid.h_min(),
        steps: sim.stats.steps,
        identity_residual: tracker.residual,
        identity_defect: tracker.defect,
        weak: [ru.abs(), rv.abs(), rw.abs()],
        final_state: sim.state,
    })
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub levels: Vec<LevelReport>,
    /// `‖U_k − R U_{k+1}‖_∞` (max over species) between consecutive levels,
    /// with `R` the block average onto the coarser grid.
    pub differences: Vec<f64>,
    /// `log₂(d_k / d_{k+1})`.
    pub orders: Vec<f64>,
    pub manifest: Manifest,
}

pub const REFINEMENT_COLUMNS: [&str; 11] = [
    "level",
    "cells",
    "h",
    "steps",
    "identity_residual",
    "identity_defect",
    "weak_u",
    "weak_v",
    "weak_w",
    "self_difference",
    "observed_order",
];

/// Runs `levels ≥ 3` grids, each twice as fine as the last along every
/// axis, starting from `config.cells`. The finest grid may hold at most
/// `cell_budget` cells.
pub fn refinement_study(
    config: &RunConfig,
    levels: usize,
    cell_budget: usize,
) -> Result<RefinementReport, LabError> {
    if levels < 3 {
        return Err(LabError::Request(format!(
            "a refinement study needs at least 3 levels, got {levels}"
        )));
    }
    let grids: Vec<Vec<usize>> = (0..levels)
        .map(|k| config.cells.iter().map(|&n| n << k).collect())
        .collect();
    let finest: usize = grids[levels - 1].iter().product();
    if finest > cell_budget {
        return Err(LabError::Request(format!(
            "finest grid {:?} has {finest} cells, over the budget of {cell_budget}",
            grids[levels - 1]
        )));
    }
    let reports: Vec<LevelReport> = grids
        .par_iter()
        .map(|cells| run_level(config, cells))
        .collect::<Result<_, _>>()?;

    let mut differences = Vec::new();
    for pair in reports.windows(2) {
        let (coarse, fine) = (&pair[0].final_state, &pair[1].final_state);
        let mut d: f64 = 0.0;
        for (c, f) in [
            (&coarse.u, &fine.u),
            (&coarse.v, &fine.v),
            (&coarse.w, &fine.w),
        ] {
            let r = f
                .restrict_to(c.grid())
                .map_err(|e| LabError::Solver(e.into()))?;
            d = d.max(c.max_abs_diff(&r).map_err(|e| LabError::Solver(e.into()))?);
        }
        differences.push(d);
    }
    let orders: Vec<f64> = differences
        .windows(2)
        .map(|p| (p[0] / p[1]).log2())
        .collect();

    let (lo, hi) = SPACE_ORDER;
    let worst_order = orders
        .iter()
        .copied()
        .max_by(|a, b| (a - 2.0).abs().total_cmp(&(b - 2.0).abs()))
        .unwrap_or(f64::NAN);
    let defect_ratio = reports
        .windows(2)
        .map(|p| p[1].identity_defect / p[0].identity_defect)
        .fold(0.0, f64::max);
    let weak_shrink = reports
        .windows(2)
        .flat_map(|p| (0..3).map(move |k| p[0].weak[k] / p[1].weak[k]))
        .fold(f64::INFINITY, f64::min);

    let mut manifest = Manifest::default();
    let w0_max = reports[0].final_state.w.max().max(0.0);
    let base = config.resolve()?;
    let mut summary = vec![
        kv("preset", config.preset.as_deref().unwrap_or("-")),
        kv("levels", levels),
    ];
    summary.extend(
        problem_section(&base, w0_max)
            .into_iter()
            .filter(|(k, _)| !k.starts_with("threshold") && k != "within_threshold"),
    );
    manifest.section("refinement", summary);
    manifest.section("config", config_section(config));
    manifest.verdicts = vec![
        Verdict::check(
            "spatial_order",
            worst_order,
            2.0,
            orders.iter().all(|&p| p >= lo && p <= hi),
            "observed order farthest from 2; band [1.6, 2.4]",
        ),
        Verdict::check(
            "identity_defect_decreases",
            defect_ratio,
            1.0,
            defect_ratio < 1.0,
            "largest ratio of consecutive entropy-identity defects",
        ),
        Verdict::check(
            "weak_form_shrinks",
            weak_shrink,
            WEAK_SHRINK_MIN,
            weak_shrink >= WEAK_SHRINK_MIN,
            "smallest per-level shrink factor of the u, v, w weak residuals",
        ),
    ];
    Ok(RefinementReport {
        levels: reports,
        differences,
        orders,
        manifest,
    })
}

pub fn write_refinement(report: &RefinementReport, dir: &Path) -> Result<(), LabError> {
    create_dir(dir)?;
    let rows: Vec<Vec<Option<f64>>> = report
        .levels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            vec![
                Some(k as f64),
                Some(l.cells[0] as f64),
                Some(l.h),
                Some(l.steps as f64),
                Some(l.identity_residual),
                Some(l.identity_defect),
                Some(l.weak[0]),
                Some(l.weak[1]),
                Some(l.weak[2]),
                report.differences.get(k).copied(),
                k.checked_sub(1).and_then(|j| report.orders.get(j)).copied(),
            ]
        })
        .collect();
    write_table(
        &dir.join("refinement.csv"),
        REFINEMENT_VERSION,
        &REFINEMENT_COLUMNS,
        &rows,
    )?;
    report.manifest.write(&dir.join("manifest.txt"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn slope_of_an_exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.1f64, 0.05, 0.025]
            .iter()
            .map(|e| (e.ln(), (3.0 * e * e).ln()))
            .collect();
        assert!((fit_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_requests_are_validated() {
        let c = preset("eps-sweep-3d").unwrap();
        for bad in [&[0.1][..], &[0.1, 0.2], &[1.5, 0.1], &[0.1, 0.0]] {
            assert!(
                matches!(eps_sweep(&c, bad), Err(LabError::Request(_))),
                "{bad:?}"
            );
        }
        let plain = RunConfig {
            regularization: RegKind::Identity,
            ..c
        };
        assert!(matches!(
            eps_sweep(&plain, &[0.1, 0.05]),
            Err(LabError::Request(_))
        ));
    }

    #[test]
    fn refinement_requests_are_validated() {
        let c = preset("smooth-1d").unwrap();
        assert!(matches!(
            refinement_study(&c, 2, DEFAULT_CELL_BUDGET),
            Err(LabError::Request(_))
        ));
        assert!(matches!(
            refinement_study(&c, 3, 100),
            Err(LabError::Request(_))
        ));
    }

    #[test]
    fn homogeneous_run_passes_its_checks() {
        let mut c = preset("homogeneous-ode").unwrap();
        c.t_end = 0.2;
        c.record_stride = 100;
        let out = run(&c).unwrap();
        assert!(out.failure.is_none());
        assert!(out.manifest.passed(), "{}", out.manifest.render());
        assert_eq!(out.stats.steps, 2000);
    }

    #[test]
    fn solver_abort_becomes_a_failed_verdict() {
        let mut c = preset("2d-coupled").unwrap();
        c.fixed_dt = Some(0.5);
        c.positivity_retries = 1;
        c.t_end = 1.0;
        let out = run(&c).unwrap();
        assert!(out.failure.is_some());
        assert!(!out.manifest.passed());
        assert_eq!(out.records.len(), 1);
    }
}
