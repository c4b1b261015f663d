//! Pass/fail checks evaluated on a finished run.
//!
//! Each check compares one measured number with one limit. Checks whose
//! preconditions do not hold for a run (an ODE check on non-constant data,
//! say) are reported as skipped rather than silently dropped.

use std::f64::consts::PI;

use chemotaxis_core::diagnostics::{delta_of, smallness_time};
use chemotaxis_core::solver::StepStats;
use chemotaxis_core::{DiagnosticsContext, DiagnosticsRecord, ProblemSpec, Profile};

use crate::output::fmt_real;

pub const MASS_TOL: f64 = 1e-12;
pub const W_P_TOL: f64 = 1e-10;
pub const ODE_TOL: f64 = 1e-3;
pub const BUDGET_SLACK: f64 = 1e-3;
pub const HESSIAN_SLACK: f64 = 0.05;
/// Records whose Hessian-log right-hand side is below this fraction of the
/// run's largest value are at round-off level and not compared.
pub const HESSIAN_FLOOR: f64 = 1e-12;
pub const CONVERGENCE_TOL: f64 = 1e-3;
pub const BOUNDED_FACTOR: f64 = 3.0;
pub const WEIGHTED_TOL_PER_STEP: f64 = 1e-8;
pub const HEAT_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    pub fn word(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        match w {
            "PASS" => Some(Status::Pass),
            "FAIL" => Some(Status::Fail),
            "SKIP" => Some(Status::Skipped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub limit: f64,
    pub detail: String,
}

impl Verdict {
    pub fn check(name: &str, measured: f64, limit: f64, ok: bool, detail: &str) -> Self {
        Verdict {
            name: name.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured,
            limit,
            detail: detail.to_string(),
        }
    }

    /// Pass iff `measured ≤ limit` (NaN fails).
    pub fn at_most(name: &str, measured: f64, limit: f64, detail: &str) -> Self {
        Self::check(name, measured, limit, measured <= limit, detail)
    }

    pub fn skipped(name: &str, reason: &str) -> Self {
        Verdict {
            name: name.to_string(),
            status: Status::Skipped,
            measured: f64::NAN,
            limit: f64::NAN,
            detail: reason.to_string(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// `name = STATUS | measured=… | limit=… | detail`.
    pub fn line(&self) -> String {
        let mut s = format!("{} = {}", self.name, self.status.word());
        if self.status != Status::Skipped {
            s.push_str(&format!(
                " | measured={} | limit={}",
                fmt_real(self.measured),
                fmt_real(self.limit)
            ));
        }
        if !self.detail.is_empty() {
            s.push_str(" | ");
            s.push_str(&self.detail);
        }
        s
    }
}

/// Everything a finished (or aborted) run exposes to the checks.
pub struct Evidence<'a> {
    pub spec: &'a ProblemSpec,
    pub ctx: &'a DiagnosticsContext,
    pub records: &'a [DiagnosticsRecord],
    pub stats: &'a StepStats,
    pub expect_convergence: bool,
    pub expect_bounded: bool,
}

pub fn mass_conservation(ev: &Evidence) -> Verdict {
    let (mu, mv) = (ev.ctx.mass_u0, ev.ctx.mass_v0);
    let from_records = ev
        .records
        .iter()
        .map(|r| ((r.mass_u - mu).abs() / mu).max((r.mass_v - mv).abs() / mv))
        .fold(0.0, f64::max);
    let drift = from_records
        .max(ev.stats.mass_drift_u)
        .max(ev.stats.mass_drift_v);
    Verdict::at_most(
        "mass_conservation",
        drift,
        MASS_TOL,
        "max relative drift of ∫u, ∫v over all steps",
    )
}

pub fn w_sup_monotone(ev: &Evidence) -> Verdict {
    let inc = if ev.stats.steps == 0 {
        0.0
    } else {
        ev.stats.w_inf_increase
    };
    Verdict::at_most(
        "w_sup_nonincreasing",
        inc,
        0.0,
        "largest one-step increase of max w",
    )
}

pub fn w_lp_monotone(ev: &Evidence) -> Verdict {
    let inc = if ev.stats.steps == 0 {
        0.0
    } else {
        ev.stats
            .w_p_increase
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    Verdict::at_most(
        "w_lp_nonincreasing",
        inc,
        W_P_TOL,
        "largest one-step relative increase of ‖w‖_p, p = 1, 2, 4",
    )
}

pub fn nonnegativity(ev: &Evidence) -> Verdict {
    let m = ev
        .records
        .iter()
        .map(|r| r.min_u.min(r.min_v).min(r.min_w))
        .fold(f64::INFINITY, f64::min)
        .min(ev.stats.min_u.min(ev.stats.min_v).min(ev.stats.min_w));
    Verdict::check(
        "nonnegativity",
        m,
        0.0,
        m >= 0.0,
        "smallest cell value of u, v, w",
    )
}

pub fn consumption_bound(ev: &Evidence) -> Verdict {
    let most = ev
        .records
        .iter()
        .map(|r| r.cumulative_consumption)
        .fold(0.0, f64::max);
    let limit = ev.ctx.mass_w0 * (1.0 + BUDGET_SLACK);
    Verdict::at_most(
        "consumption_bound",
        most,
        limit,
        "cumulative consumption vs ∫w₀·(1+10⁻³)",
    )
}

pub fn consumption_balance(ev: &Evidence) -> Verdict {
    let Some(last) = ev.records.last() else {
        return Verdict::skipped("consumption_balance", "no records");
    };
    let gap = (last.cumulative_consumption + last.w_l1 - ev.ctx.mass_w0).abs() / ev.ctx.mass_w0;
    Verdict::at_most(
        "consumption_balance",
        gap,
        BUDGET_SLACK,
        "|consumed + ∫w(t) − ∫w₀| / ∫w₀ at the last record",
    )
}

pub fn hessian_log(ev: &Evidence) -> Verdict {
    let top = ev
        .records
        .iter()
        .map(|r| r.hessian_log_rhs)
        .fold(0.0, f64::max);
    let ratios: Vec<f64> = ev
        .records
        .iter()
        .filter(|r| top > 0.0 && r.hessian_log_rhs > HESSIAN_FLOOR * top)
        .map(|r| r.hessian_log_lhs / r.hessian_log_rhs)
        .collect();
    if ratios.is_empty() {
        return Verdict::skipped(
            "hessian_log_inequality",
            "w is spatially constant at every record",
        );
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    Verdict::at_most(
        "hessian_log_inequality",
        worst,
        1.0 + HESSIAN_SLACK,
        &format!("max lhs/rhs over {} records", ratios.len()),
    )
}

/// Consumption rate `λ = αF(a) + βF(b)` of constant data.
fn homogeneous_rate(spec: &ProblemSpec, a: f64, b: f64) -> f64 {
    spec.params.alpha * spec.reg.f_unchecked(a) + spec.params.beta * spec.reg.f_unchecked(b)
}

pub fn homogeneous_ode(ev: &Evidence) -> Vec<Verdict> {
    if !ev.spec.initial.is_homogeneous() {
        return vec![
            Verdict::skipped("homogeneous_ode", "initial data are not constant"),
            Verdict::skipped("homogeneous_budget", "initial data are not constant"),
        ];
    }
    let (a, b) = (ev.ctx.means.u, ev.ctx.means.v);
    let c = ev.ctx.w0_max;
    let lambda = homogeneous_rate(ev.spec, a, b);
    let mut worst: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for r in ev.records {
        let exact = c * (-lambda * r.t).exp();
        worst = worst.max((r.w_linf - exact).abs() / exact);
        drift = drift.max(r.conv_u / a).max(r.conv_v / b);
    }
    let mut out = vec![Verdict::check(
        "homogeneous_ode",
        worst,
        ODE_TOL,
        worst <= ODE_TOL && drift <= MASS_TOL,
        &format!(
            "max relative error of w vs c·exp(−λt), λ = {lambda}; u, v relative drift {drift:e}"
        ),
    )];
    if let Some(last) = ev.records.last() {
        let measure = ev.spec.grid.measure();
        let exact = measure * c * (1.0 - (-lambda * last.t).exp());
        let err = (last.cumulative_consumption - exact).abs() / (measure * c);
        out.push(Verdict::at_most(
            "homogeneous_budget",
            err,
            BUDGET_SLACK,
            "consumed vs |Ω|c(1 − exp(−λt)), relative to ∫w₀",
        ));
    }
    out
}

pub fn heat_mode(ev: &Evidence) -> Verdict {
    let p = &ev.spec.params;
    let uncoupled = p.chi1 == 0.0 && p.chi2 == 0.0 && p.alpha == 0.0 && p.beta == 0.0;
    let cosine =
        matches!(ev.spec.initial.u, Profile::Cosine { .. }) && ev.spec.initial.perturbation == 0.0;
    if !(uncoupled && cosine) {
        return Verdict::skipped(
            "heat_mode_decay",
            "needs an uncoupled run with a single cosine mode in u",
        );
    }
    let rate: f64 = ev
        .spec
        .grid
        .lengths()
        .iter()
        .map(|l| (PI / l).powi(2))
        .sum();
    let Some(first) = ev.records.first() else {
        return Verdict::skipped("heat_mode_decay", "no records");
    };
    let worst = ev
        .records
        .iter()
        .skip(1)
        .map(|r| {
            let predicted = first.conv_u * (-rate * r.t).exp();
            (r.conv_u - predicted).abs() / predicted
        })
        .fold(0.0, f64::max);
    Verdict::at_most(
        "heat_mode_decay",
        worst,
        HEAT_TOL,
        &format!("max relative error of ‖u − ū‖_∞ vs exp(−{rate:.6}·t) decay"),
    )
}

pub fn convergence(ev: &Evidence) -> Verdict {
    if !ev.expect_convergence {
        return Verdict::skipped("convergence", "not requested for this run");
    }
    let reached = ev.records.iter().find(|r| {
        r.conv_u < CONVERGENCE_TOL && r.conv_v < CONVERGENCE_TOL && r.conv_w < CONVERGENCE_TOL
    });
    let last = ev
        .records
        .last()
        .map_or(f64::INFINITY, |r| r.conv_u.max(r.conv_v).max(r.conv_w));
    match reached {
        Some(r) => Verdict::check(
            "convergence",
            last,
            CONVERGENCE_TOL,
            last < CONVERGENCE_TOL,
            &format!("all three distances below 10⁻³ from t = {}", r.t),
        ),
        None => Verdict::check(
            "convergence",
            last,
            CONVERGENCE_TOL,
            false,
            "never below 10⁻³",
        ),
    }
}

pub fn boundedness(ev: &Evidence) -> Verdict {
    if !ev.expect_bounded {
        return Verdict::skipped("bounded_compound", "not requested for this run");
    }
    let Some(last) = ev.records.last() else {
        return Verdict::skipped("bounded_compound", "no records");
    };
    let half = 0.5 * last.t;
    let mut tail: Vec<f64> = ev
        .records
        .iter()
        .filter(|r| r.t >= half)
        .map(|r| r.compound_2d)
        .collect();
    tail.sort_by(f64::total_cmp);
    let median = if tail.len() % 2 == 1 {
        tail[tail.len() / 2]
    } else {
        0.5 * (tail[tail.len() / 2 - 1] + tail[tail.len() / 2])
    };
    let sup = ev.records.iter().map(|r| r.compound_2d).fold(0.0, f64::max);
    Verdict::at_most(
        "bounded_compound",
        sup,
        BOUNDED_FACTOR * median,
        &format!("sup of ∫u²+v²+|∇w|⁴ vs 3 × final-half median {median}"),
    )
}

pub fn weighted_tail(ev: &Evidence) -> Vec<Verdict> {
    let Some(w) = ev.spec.diagnostics.weighted else {
        return vec![Verdict::skipped(
            "weighted_lp_tail",
            "no weighted exponents configured",
        )];
    };
    let report = match delta_of(w.p, w.r, &ev.spec.params) {
        Ok(r) => r,
        Err(e) => {
            return vec![Verdict::check(
                "weighted_lp_coefficients",
                f64::NAN,
                0.0,
                false,
                &e.to_string(),
            )]
        }
    };
    let mut out = vec![Verdict::check(
        "weighted_lp_coefficients",
        report.a1.min(report.a2),
        0.0,
        report.a1 > 0.0 && report.a2 > 0.0,
        &format!("min(A1, A2) with delta = {}", report.delta),
    )];
    let series: Vec<(f64, f64)> = ev.records.iter().map(|r| (r.t, r.w_linf)).collect();
    let t0 = smallness_time(&series, report.delta);
    if !t0.is_finite() {
        out.push(Verdict::skipped(
            "weighted_lp_tail",
            "max w never fell below delta",
        ));
        return out;
    }
    let tail: Vec<f64> = ev
        .records
        .iter()
        .filter(|r| r.t >= t0)
        .filter_map(|r| r.weighted_lp_y)
        .collect();
    if tail.len() < 2 {
        out.push(Verdict::skipped(
            "weighted_lp_tail",
            "fewer than two records after the smallness time",
        ));
        return out;
    }
    let stride = ev.spec.output_stride.min(ev.stats.steps.max(1)) as f64;
    let rise = tail
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(f64::NEG_INFINITY, f64::max)
        / stride;
    out.push(Verdict::at_most(
        "weighted_lp_tail",
        rise,
        WEIGHTED_TOL_PER_STEP,
        &format!(
            "largest per-step rise of y over {} records from t0 = {t0}",
            tail.len()
        ),
    ));
    out
}

/// Every check, in manifest order.
pub fn evaluate(ev: &Evidence) -> Vec<Verdict> {
    let mut v = vec![
        mass_conservation(ev),
        w_sup_monotone(ev),
        w_lp_monotone(ev),
        nonnegativity(ev),
        consumption_bound(ev),
        consumption_balance(ev),
        hessian_log(ev),
    ];
    v.extend(homogeneous_ode(ev));
    v.push(heat_mode(ev));
    v.push(convergence(ev));
    v.push(boundedness(ev));
    v.extend(weighted_tail(ev));
    v
}
