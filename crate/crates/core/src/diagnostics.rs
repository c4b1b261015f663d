//! Functionals, identities and inequalities evaluated on snapshots.
//!
//! Every quantity here is a pure function of one or more [`State`]s. The
//! [`DiagnosticsContext`] freezes the data that must not drift along a run:
//! the initial means, the initial masses and the division guards.
//!
//! Divisions by `u`, `v` or `w` use the floor `η = 10⁻¹² · max(initial field)`
//! (see [`Guard`]); `0 · ln 0` is taken as `0`.

use thiserror::Error;

use crate::grid::{grad_centered, hessian_entries, integrate, lp_norm, Field, GridError};
use crate::model::{Means, Params, ProblemSpec, State};
use crate::regularization::Regularization;
use crate::solver::w_norms_of;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {needed} snapshots, got {got}")]
    TooFewSnapshots { needed: usize, got: usize },
    #[error("snapshot times must increase strictly (t = {0} repeated or out of order)")]
    TimeOrder(f64),
    #[error("weighted functional requires max w < delta ({max_w} >= {delta})")]
    NotSmall { max_w: f64, delta: f64 },
    #[error("weighted L^p exponents need p > 1 and 0 < r < p - 1 (p = {p}, r = {r})")]
    WeightedExponents { p: f64, r: f64 },
    #[error("dimension label must be in 2..=5, got {0}")]
    DimensionLabel(usize),
    #[error("test function does not vanish at the final time (|phi| = {0})")]
    TestFunctionSupport(f64),
    #[error("window length must be positive, got {0}")]
    Window(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// Exponents `(p, r)` of the weighted functional `∫(u^p + v^p)(2δ − w)^{−r}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedExponents {
    pub p: f64,
    pub r: f64,
}

/// Per-run knobs for the diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsConfig {
    /// Dimension label `n` used in the exponents `(n+2)/n` and `n/(n−1)`.
    pub n_label: usize,
    pub weighted: Option<WeightedExponents>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            n_label: 2,
            weighted: None,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self, _dim: usize) -> Result<()> {
        if !(2..=5).contains(&self.n_label) {
            return Err(DiagnosticsError::DimensionLabel(self.n_label));
        }
        if let Some(WeightedExponents { p, r }) = self.weighted {
            check_exponents(p, r)?;
        }
        Ok(())
    }
}

fn check_exponents(p: f64, r: f64) -> Result<()> {
    if p > 1.0 && r > 0.0 && r < p - 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(DiagnosticsError::WeightedExponents { p, r })
    }
}

/// Floors used in place of `u`, `v`, `w` in denominators and logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guard {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl Guard {
    pub const RELATIVE: f64 = 1e-12;

    pub fn from_initial(state: &State) -> Self {
        Guard {
            u: Self::RELATIVE * state.u.max(),
            v: Self::RELATIVE * state.v.max(),
            w: Self::RELATIVE * state.w.max(),
        }
    }
}

#[inline]
fn x_ln_x(x: f64) -> f64 {
    if x < 1e-300 {
        0.0
    } else {
        x * x.ln()
    }
}

fn grad_sq(f: &Field) -> Result<Vec<f64>> {
    let grads = grad_centered(f)?;
    let mut out = vec![0.0; f.values().len()];
    for g in &grads {
        for (o, d) in out.iter_mut().zip(g.values()) {
            *o += d * d;
        }
    }
    Ok(out)
}

fn sum_times_volume(state: &State, values: impl Iterator<Item = f64>) -> f64 {
    values.sum::<f64>() * state.grid().cell_volume()
}

/// `E = ∫ αχ₂ u ln u + βχ₁ v ln v + (χ₁χ₂/2) |∇w|²/w`.
pub fn entropy(state: &State, params: &Params, guard: &Guard) -> Result<f64> {
    let gw2 = grad_sq(&state.w)?;
    let (u, v, w) = (state.u.values(), state.v.values(), state.w.values());
    let cw = 0.5 * params.chi1 * params.chi2;
    Ok(sum_times_volume(
        state,
        (0..u.len()).map(|i| {
            params.alpha * params.chi2 * x_ln_x(u[i])
                + params.beta * params.chi1 * x_ln_x(v[i])
                + cw * gw2[i] / w[i].max(guard.w)
        }),
    ))
}

/// The four nonnegative integrals that make up the dissipation:
/// `∫|∇u|²/u`, `∫|∇v|²/v`, `∫ w|D² ln w|²` and `∫(αF(u)+βF(v))|∇w|²/w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationParts {
    pub fisher_u: f64,
    pub fisher_v: f64,
    pub hessian_log: f64,
    pub consumption: f64,
}

pub fn dissipation_parts(
    state: &State,
    params: &Params,
    reg: &Regularization,
    guard: &Guard,
) -> Result<DissipationParts> {
    let gu2 = grad_sq(&state.u)?;
    let gv2 = grad_sq(&state.v)?;
    let gw2 = grad_sq(&state.w)?;
    let (u, v, w) = (state.u.values(), state.v.values(), state.w.values());
    let vol = state.grid().cell_volume();
    let hess = weighted_hessian_log(&state.w, guard.w)?;
    let mut parts = DissipationParts {
        fisher_u: 0.0,
        fisher_v: 0.0,
        hessian_log: 0.0,
        consumption: 0.0,
    };
    for i in 0..u.len() {
        parts.fisher_u += gu2[i] / u[i].max(guard.u);
        parts.fisher_v += gv2[i] / v[i].max(guard.v);
        parts.hessian_log += hess[i];
        let rate = params.alpha * reg.f_unchecked(u[i]) + params.beta * reg.f_unchecked(v[i]);
        parts.consumption += rate * gw2[i] / w[i].max(guard.w);
    }
    parts.fisher_u *= vol;
    parts.fisher_v *= vol;
    parts.hessian_log *= vol;
    parts.consumption *= vol;
    Ok(parts)
}

/// Cellwise `w |D² ln w|²` with `ln` taken of `max(w, η)`.
fn weighted_hessian_log(w: &Field, eta: f64) -> Result<Vec<f64>> {
    let log_w = w.map(|x| x.max(eta).ln());
    let h2 = hessian_entries(&log_w)?.frobenius_sq();
    Ok(w.values()
        .iter()
        .zip(h2.values())
        .map(|(x, h)| x * h)
        .collect())
}

fn combine(p: &DissipationParts, params: &Params, exact: bool) -> f64 {
    let k = if exact { 1.0 } else { 0.5 };
    let c = params.chi1 * params.chi2;
    k * params.alpha * params.chi2 * p.fisher_u
        + k * params.beta * params.chi1 * p.fisher_v
        + k * c * p.hessian_log
        + 0.5 * c * p.consumption
}

/// `D = (αχ₂/2)∫|∇u|²/u + (βχ₁/2)∫|∇v|²/v + (χ₁χ₂/2)∫w|D²ln w|²
///      + (χ₁χ₂/2)∫(αF(u)+βF(v))|∇w|²/w`.
pub fn dissipation(
    state: &State,
    params: &Params,
    reg: &Regularization,
    guard: &Guard,
) -> Result<f64> {
    Ok(combine(
        &dissipation_parts(state, params, reg, guard)?,
        params,
        false,
    ))
}

/// The dissipation with the coefficients of the exact evolution identity,
/// `αχ₂∫|∇u|²/u + βχ₁∫|∇v|²/v + χ₁χ₂∫w|D²ln w|² + (χ₁χ₂/2)∫(αF(u)+βF(v))|∇w|²/w`.
/// On a rectangle the boundary term of that identity vanishes, so
/// `dE/dt + D_exact = 0` for the continuum solution.
pub fn dissipation_exact(
    state: &State,
    params: &Params,
    reg: &Regularization,
    guard: &Guard,
) -> Result<f64> {
    Ok(combine(
        &dissipation_parts(state, params, reg, guard)?,
        params,
        true,
    ))
}

fn check_window(window: &[State]) -> Result<()> {
    if window.len() < 2 {
        return Err(DiagnosticsError::TooFewSnapshots {
            needed: 2,
            got: window.len(),
        });
    }
    for pair in window.windows(2) {
        if !(pair[1].t > pair[0].t) {
            return Err(DiagnosticsError::TimeOrder(pair[1].t));
        }
    }
    Ok(())
}

/// Streaming evaluation of the entropy identity along a trajectory: the
/// signed residual `ΔE/Δt + D` and the defect `|ΔE/Δt + D_exact|`, both
/// maximized over consecutive snapshot pairs.
#[derive(Debug, Clone)]
pub struct IdentityTracker {
    params: Params,
    reg: Regularization,
    guard: Guard,
    prev: Option<(f64, f64, f64, f64)>,
    pairs: usize,
    /// `max_k [ (E_{k+1} − E_k)/Δt + D_k ]`.
    pub residual: f64,
    /// `max_k |(E_{k+1} − E_k)/Δt + D_exact,k|`.
    pub defect: f64,
}

impl IdentityTracker {
    pub fn new(params: Params, reg: Regularization, guard: Guard) -> Self {
        IdentityTracker {
            params,
            reg,
            guard,
            prev: None,
            pairs: 0,
            residual: f64::NEG_INFINITY,
            defect: 0.0,
        }
    }

    pub fn push(&mut self, s: &State) -> Result<()> {
        let e = entropy(s, &self.params, &self.guard)?;
        let parts = dissipation_parts(s, &self.params, &self.reg, &self.guard)?;
        let (d, d_exact) = (
            combine(&parts, &self.params, false),
            combine(&parts, &self.params, true),
        );
        if let Some((t0, e0, d0, dx0)) = self.prev {
            let dt = s.t - t0;
            if !(dt > 0.0) {
                return Err(DiagnosticsError::TimeOrder(s.t));
            }
            let rate = (e - e0) / dt;
            self.residual = self.residual.max(rate + d0);
            self.defect = self.defect.max((rate + dx0).abs());
            self.pairs += 1;
        }
        self.prev = Some((s.t, e, d, d_exact));
        Ok(())
    }

    /// Number of snapshot pairs seen so far.
    pub fn pairs(&self) -> usize {
        self.pairs
    }
}

fn track(
    window: &[State],
    params: &Params,
    reg: &Regularization,
    guard: &Guard,
) -> Result<IdentityTracker> {
    check_window(window)?;
    let mut tracker = IdentityTracker::new(*params, *reg, *guard);
    for s in window {
        tracker.push(s)?;
    }
    Ok(tracker)
}

/// `max_k [ (E(t_{k+1}) − E(t_k)) / (t_{k+1} − t_k) + D(t_k) ]` over consecutive
/// snapshots. On convex domains this is `≤ 0` in the continuum limit.
pub fn identity_residual(
    window: &[State],
    params: &Params,
    reg: &Regularization,
    guard: &Guard,
) -> Result<f64> {
    Ok(track(window, params, reg, guard)?.residual)
}

/// `max_k |ΔE/Δt + D_exact(t_k)|`: the defect of the exact evolution
/// identity, which tends to zero under refinement on rectangles.
pub fn identity_defect(
    window: &[State],
    params: &Params,
    reg: &Regularization,
    guard: &Guard,
) -> Result<f64> {
    Ok(track(window, params, reg, guard)?.defect)
}

/// `(2 + √n)²`.
pub fn hessian_log_constant(n: usize) -> f64 {
    let c = 2.0 + (n as f64).sqrt();
    c * c
}

/// `(∫|∇w|⁴/w³, (2+√n)² ∫w|D² ln w|²)` with `n` the grid dimension.
pub fn hessian_log_check(state: &State, guard: &Guard) -> Result<(f64, f64)> {
    let gw2 = grad_sq(&state.w)?;
    let w = state.w.values();
    let lhs = sum_times_volume(
        state,
        (0..w.len()).map(|i| {
            let d = w[i].max(guard.w);
            gw2[i] * gw2[i] / (d * d * d)
        }),
    );
    let hess = weighted_hessian_log(&state.w, guard.w)?;
    let rhs = sum_times_volume(state, hess.into_iter());
    Ok((lhs, hessian_log_constant(state.grid().dim()) * rhs))
}

/// `∫ u² + v² + |∇w|⁴`.
pub fn compound_2d(state: &State) -> Result<f64> {
    let gw2 = grad_sq(&state.w)?;
    let (u, v) = (state.u.values(), state.v.values());
    Ok(sum_times_volume(
        state,
        (0..u.len()).map(|i| u[i] * u[i] + v[i] * v[i] + gw2[i] * gw2[i]),
    ))
}

/// Trapezoid-in-time integral of `∫(αF(u) + βF(v))w` over the snapshots.
pub fn consumption_budget(
    snapshots: &[State],
    params: &Params,
    reg: &Regularization,
) -> Result<f64> {
    check_window(snapshots)?;
    let mut total = 0.0;
    let mut r0 = crate::solver::consumption_rate(&snapshots[0], params, reg);
    for pair in snapshots.windows(2) {
        let r1 = crate::solver::consumption_rate(&pair[1], params, reg);
        total += 0.5 * (pair[1].t - pair[0].t) * (r0 + r1);
        r0 = r1;
    }
    Ok(total)
}

/// `(‖u − ū₀‖_∞, ‖v − v̄₀‖_∞, ‖w‖_∞)`.
pub fn convergence_metrics(state: &State, means: &Means) -> (f64, f64, f64) {
    let dist = |f: &Field, m: f64| {
        f.values()
            .iter()
            .fold(0.0f64, |acc, x| acc.max((x - m).abs()))
    };
    (
        dist(&state.u, means.u),
        dist(&state.v, means.v),
        state
            .w
            .values()
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs())),
    )
}

/// `(‖u − ū₀‖_{L^q}, ‖v − v̄₀‖_{L^q})` with `q = n/(n−1)`.
pub fn dist_mean_lq(state: &State, means: &Means, n: usize) -> Result<(f64, f64)> {
    if !(2..=5).contains(&n) {
        return Err(DiagnosticsError::DimensionLabel(n));
    }
    let q = n as f64 / (n as f64 - 1.0);
    Ok((
        lp_norm(&state.u.map(|x| x - means.u), q)?,
        lp_norm(&state.v.map(|x| x - means.v), q)?,
    ))
}

/// Threshold `δ` for the weighted `L^p` argument and the two coefficients
/// `A₁`, `A₂` whose positivity makes the functional nonincreasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaReport {
    pub delta: f64,
    pub a1: f64,
    pub a2: f64,
}

/// `δ = min{1, 1/χ₁, 1/χ₂} · min{(p−1−r)r/(2p³), (r+1)/(2p)}` and
/// `A_i = p(2δ)^{−r} { p − 1 − p/(4r) · (4r² + (p−1)²(2δχ_i)²) / (r + 1 − 2δpχ_i) }`.
pub fn delta_of(p: f64, r: f64, params: &Params) -> Result<DeltaReport> {
    check_exponents(p, r)?;
    let chi_factor = 1.0f64.min(1.0 / params.chi1).min(1.0 / params.chi2);
    let delta = chi_factor * ((p - 1.0 - r) * r / (2.0 * p * p * p)).min((r + 1.0) / (2.0 * p));
    let a = |chi: f64| {
        let two_delta_chi = 2.0 * delta * chi;
        let frac = (4.0 * r * r + (p - 1.0).powi(2) * two_delta_chi * two_delta_chi)
            / (r + 1.0 - p * two_delta_chi);
        p * (2.0 * delta).powf(-r) * (p - 1.0 - p / (4.0 * r) * frac)
    };
    Ok(DeltaReport {
        delta,
        a1: a(params.chi1),
        a2: a(params.chi2),
    })
}

/// Weighted functional settings once `δ` is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedLpSpec {
    pub p: f64,
    pub r: f64,
    pub delta: f64,
    /// First time at which `max w < δ` was observed, once known.
    pub activation_time: Option<f64>,
}

impl WeightedLpSpec {
    pub fn new(p: f64, r: f64, params: &Params) -> Result<Self> {
        let report = delta_of(p, r, params)?;
        Ok(WeightedLpSpec {
            p,
            r,
            delta: report.delta,
            activation_time: None,
        })
    }
}

/// `y = ∫(u^p + v^p)(2δ − w)^{−r}`; only defined once `max w < δ`.
pub fn weighted_lp_value(state: &State, spec: &WeightedLpSpec) -> Result<f64> {
    let max_w = state.w.max();
    if !(max_w < spec.delta) {
        return Err(DiagnosticsError::NotSmall {
            max_w,
            delta: spec.delta,
        });
    }
    let (u, v, w) = (state.u.values(), state.v.values(), state.w.values());
    let two_delta = 2.0 * spec.delta;
    Ok(sum_times_volume(
        state,
        (0..u.len())
            .map(|i| (u[i].powf(spec.p) + v[i].powf(spec.p)) * (two_delta - w[i]).powf(-spec.r)),
    ))
}

/// The weighted functional along a trajectory tail.
pub fn weighted_lp(tail: &[State], spec: &WeightedLpSpec) -> Result<Vec<f64>> {
    tail.iter().map(|s| weighted_lp_value(s, spec)).collect()
}

/// Earliest record time from which `max w ≤ δ` holds at every later record;
/// `+∞` if the last record still exceeds `δ`.
pub fn smallness_time(times_and_max_w: &[(f64, f64)], delta: f64) -> f64 {
    let mut t0 = f64::INFINITY;
    for &(t, m) in times_and_max_w.iter().rev() {
        if m <= delta {
            t0 = t;
        } else {
            break;
        }
    }
    t0
}

/// Space-time test function for the weak formulation.
pub trait TestFunction {
    fn value(&self, x: [f64; 3], t: f64) -> f64;
    fn time_derivative(&self, x: [f64; 3], t: f64) -> f64;
    fn gradient(&self, x: [f64; 3], t: f64) -> [f64; 3];
}

/// `φ(x, t) = η(t) Π_a cos(k_a π x_a / L_a)` with `η(t) = (1 − t/T)⁴` on
/// `[0, T]` and zero afterwards. The cosine factor has zero normal
/// derivative on the rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineBump {
    pub lengths: [f64; 3],
    pub modes: [u32; 3],
    pub support_end: f64,
    pub amplitude: f64,
}

impl CosineBump {
    pub fn new(lengths: &[f64], modes: &[u32], support_end: f64) -> Self {
        let mut l = [1.0; 3];
        let mut k = [0; 3];
        l[..lengths.len()].copy_from_slice(lengths);
        k[..modes.len()].copy_from_slice(modes);
        CosineBump {
            lengths: l,
            modes: k,
            support_end,
            amplitude: 1.0,
        }
    }

    fn envelope(&self, t: f64) -> (f64, f64) {
        if t >= self.support_end {
            return (0.0, 0.0);
        }
        let s = 1.0 - t / self.support_end;
        (
            self.amplitude * s.powi(4),
            -4.0 * self.amplitude * s.powi(3) / self.support_end,
        )
    }

    fn factor(&self, a: usize, x: f64) -> (f64, f64) {
        let k = std::f64::consts::PI * self.modes[a] as f64 / self.lengths[a];
        ((k * x).cos(), -k * (k * x).sin())
    }
}

impl TestFunction for CosineBump {
    fn value(&self, x: [f64; 3], t: f64) -> f64 {
        let (e, _) = self.envelope(t);
        e * (0..3).map(|a| self.factor(a, x[a]).0).product::<f64>()
    }

    fn time_derivative(&self, x: [f64; 3], t: f64) -> f64 {
        let (_, de) = self.envelope(t);
        de * (0..3).map(|a| self.factor(a, x[a]).0).product::<f64>()
    }

    fn gradient(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let (e, _) = self.envelope(t);
        let f: Vec<(f64, f64)> = (0..3).map(|a| self.factor(a, x[a])).collect();
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            *ga = e
                * (0..3)
                    .map(|b| if b == a { f[b].1 } else { f[b].0 })
                    .product::<f64>();
        }
        g
    }
}

/// Residuals of the three weak identities for the trajectory `snapshots`
/// (the first snapshot is the initial datum):
///
/// ```text
/// R_u = −∫∫u φ_t − ∫u₀φ(·,0) + ∫∫∇u·∇φ − χ₁∫∫u F′(u) ∇w·∇φ
/// R_v = −∫∫v φ_t − ∫v₀φ(·,0) + ∫∫∇v·∇φ − χ₂∫∫v F′(v) ∇w·∇φ
/// R_w = −∫∫w φ_t − ∫w₀φ(·,0) + ∫∫∇w·∇φ + ∫∫(αF(u) + βF(v)) w φ
/// ```
///
/// Time integrals use the trapezoid rule over the snapshots.
pub fn weak_form_residual(
    snapshots: &[State],
    params: &Params,
    reg: &Regularization,
    test: &dyn TestFunction,
) -> Result<(f64, f64, f64)> {
    check_window(snapshots)?;
    let mut acc = WeakFormAccumulator::new(*params, *reg, test);
    for s in snapshots {
        acc.push(s)?;
    }
    acc.finish()
}

/// Streaming form of [`weak_form_residual`]: push the snapshots in time
/// order, starting with the initial datum, then call [`finish`](Self::finish).
pub struct WeakFormAccumulator<'a> {
    params: Params,
    reg: Regularization,
    test: &'a dyn TestFunction,
    centers: Vec<[f64; 3]>,
    res: [f64; 3],
    prev: Option<(f64, [f64; 3])>,
    pushed: usize,
}

impl<'a> WeakFormAccumulator<'a> {
    pub fn new(params: Params, reg: Regularization, test: &'a dyn TestFunction) -> Self {
        WeakFormAccumulator {
            params,
            reg,
            test,
            centers: Vec::new(),
            res: [0.0; 3],
            prev: None,
            pushed: 0,
        }
    }

    /// Space integrand of each identity at one snapshot.
    fn integrand(&self, s: &State) -> Result<[f64; 3]> {
        let (params, reg, test) = (&self.params, &self.reg, self.test);
        let gu = grad_centered(&s.u)?;
        let gv = grad_centered(&s.v)?;
        let gw = grad_centered(&s.w)?;
        let (u, v, w) = (s.u.values(), s.v.values(), s.w.values());
        let dim = s.grid().dim();
        let mut acc = [0.0; 3];
        for (i, &x) in self.centers.iter().enumerate() {
            let phi = test.value(x, s.t);
            let phi_t = test.time_derivative(x, s.t);
            let gphi = test.gradient(x, s.t);
            let (mut du, mut dv, mut dw) = (0.0, 0.0, 0.0);
            for a in 0..dim {
                du += gu[a].values()[i] * gphi[a];
                dv += gv[a].values()[i] * gphi[a];
                dw += gw[a].values()[i] * gphi[a];
            }
            acc[0] += -u[i] * phi_t + du - params.chi1 * u[i] * reg.f_prime_unchecked(u[i]) * dw;
            acc[1] += -v[i] * phi_t + dv - params.chi2 * v[i] * reg.f_prime_unchecked(v[i]) * dw;
            let rate = params.alpha * reg.f_unchecked(u[i]) + params.beta * reg.f_unchecked(v[i]);
            acc[2] += -w[i] * phi_t + dw + rate * w[i] * phi;
        }
        let vol = s.grid().cell_volume();
        Ok(acc.map(|a| a * vol))
    }

    pub fn push(&mut self, s: &State) -> Result<()> {
        if self.prev.is_none() {
            let grid = *s.grid();
            self.centers = (0..grid.num_cells()).map(|i| grid.center(i)).collect();
            let vol = grid.cell_volume();
            for (k, f) in [&s.u, &s.v, &s.w].into_iter().enumerate() {
                let initial: f64 = f
                    .values()
                    .iter()
                    .zip(&self.centers)
                    .map(|(val, &x)| val * self.test.value(x, s.t))
                    .sum();
                self.res[k] -= initial * vol;
            }
        }
        let cur = self.integrand(s)?;
        if let Some((t0, prev)) = self.prev {
            let dt = s.t - t0;
            if !(dt > 0.0) {
                return Err(DiagnosticsError::TimeOrder(s.t));
            }
            for k in 0..3 {
                self.res[k] += 0.5 * dt * (prev[k] + cur[k]);
            }
        }
        self.prev = Some((s.t, cur));
        self.pushed += 1;
        Ok(())
    }

    /// The three residuals; the test function must vanish at the last
    /// pushed time.
    pub fn finish(&self) -> Result<(f64, f64, f64)> {
        let Some((t_last, _)) = self.prev else {
            return Err(DiagnosticsError::TooFewSnapshots { needed: 2, got: 0 });
        };
        if self.pushed < 2 {
            return Err(DiagnosticsError::TooFewSnapshots {
                needed: 2,
                got: self.pushed,
            });
        }
        let tail = self
            .centers
            .iter()
            .fold(0.0f64, |m, &x| m.max(self.test.value(x, t_last).abs()));
        if tail > 1e-12 {
            return Err(DiagnosticsError::TestFunctionSupport(tail));
        }
        Ok((self.res[0], self.res[1], self.res[2]))
    }
}

/// Space-time integrals over one window `[start, start + length]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowTotals {
    pub start: f64,
    pub fisher_u: f64,
    pub fisher_v: f64,
    pub hessian_w: f64,
    pub grad_w4: f64,
    pub u_power: f64,
    pub v_power: f64,
    pub w_t_sq: f64,
}

#[derive(Debug, Clone)]
struct Integrands {
    t: f64,
    values: [f64; 6],
    w: Field,
}

/// Streaming accumulator for [`WindowTotals`]. Each snapshot pair
/// `[t_k, t_{k+1}]` contributes to the window containing `t_k`.
#[derive(Debug, Clone)]
pub struct SpacetimeAccumulator {
    length: f64,
    exponent: f64,
    guard: Guard,
    prev: Option<Integrands>,
    windows: Vec<WindowTotals>,
}

impl SpacetimeAccumulator {
    pub fn new(length: f64, n_label: usize, guard: Guard) -> Result<Self> {
        if !(length > 0.0) {
            return Err(DiagnosticsError::Window(length));
        }
        if !(2..=5).contains(&n_label) {
            return Err(DiagnosticsError::DimensionLabel(n_label));
        }
        Ok(SpacetimeAccumulator {
            length,
            exponent: (n_label as f64 + 2.0) / n_label as f64,
            guard,
            prev: None,
            windows: Vec::new(),
        })
    }

    fn integrands(&self, s: &State) -> Result<Integrands> {
        let gu2 = grad_sq(&s.u)?;
        let gv2 = grad_sq(&s.v)?;
        let gw2 = grad_sq(&s.w)?;
        let hw = hessian_entries(&s.w)?.frobenius_sq();
        let (u, v) = (s.u.values(), s.v.values());
        let mut acc = [0.0; 6];
        for i in 0..u.len() {
            acc[0] += gu2[i] / u[i].max(self.guard.u);
            acc[1] += gv2[i] / v[i].max(self.guard.v);
            acc[2] += hw.values()[i];
            acc[3] += gw2[i] * gw2[i];
            acc[4] += u[i].powf(self.exponent);
            acc[5] += v[i].powf(self.exponent);
        }
        let vol = s.grid().cell_volume();
        Ok(Integrands {
            t: s.t,
            values: acc.map(|a| a * vol),
            w: s.w.clone(),
        })
    }

    pub fn push(&mut self, s: &State) -> Result<()> {
        let cur = self.integrands(s)?;
        if let Some(prev) = self.prev.take() {
            let dt = cur.t - prev.t;
            if !(dt > 0.0) {
                return Err(DiagnosticsError::TimeOrder(cur.t));
            }
            let index = (prev.t / self.length).floor() as usize;
            while self.windows.len() <= index {
                let start = self.windows.len() as f64 * self.length;
                self.windows.push(WindowTotals {
                    start,
                    ..Default::default()
                });
            }
            let win = &mut self.windows[index];
            let trap = |k: usize| 0.5 * dt * (prev.values[k] + cur.values[k]);
            win.fisher_u += trap(0);
            win.fisher_v += trap(1);
            win.hessian_w += trap(2);
            win.grad_w4 += trap(3);
            win.u_power += trap(4);
            win.v_power += trap(5);
            let dw2: f64 = cur
                .w
                .values()
                .iter()
                .zip(prev.w.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            win.w_t_sq += dw2 * s.grid().cell_volume() / dt;
        }
        self.prev = Some(cur);
        Ok(())
    }

    /// Windows fully covered by the snapshots pushed so far.
    pub fn complete(&self) -> Vec<WindowTotals> {
        let Some(last) = &self.prev else {
            return Vec::new();
        };
        let tol = 1e-9 * self.length;
        self.windows
            .iter()
            .copied()
            .filter(|w| w.start + self.length <= last.t + tol)
            .collect()
    }
}

/// Unit-window space-time integrals over stored snapshots.
pub fn spacetime_windows(
    snapshots: &[State],
    n_label: usize,
    guard: &Guard,
    length: f64,
) -> Result<Vec<WindowTotals>> {
    let mut acc = SpacetimeAccumulator::new(length, n_label, *guard)?;
    for s in snapshots {
        acc.push(s)?;
    }
    Ok(acc.complete())
}

/// One row of the diagnostic time series.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt_used: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub w_l1: f64,
    pub w_l2: f64,
    pub w_l4: f64,
    pub w_linf: f64,
    pub entropy: f64,
    pub dissipation: f64,
    /// `(E(t) − E(t − dt))/dt + D(t − dt)` over the step that produced this
    /// record; zero on the initial record.
    pub identity_residual: f64,
    pub hessian_log_lhs: f64,
    pub hessian_log_rhs: f64,
    pub compound_2d: f64,
    pub conv_u: f64,
    pub conv_v: f64,
    pub conv_w: f64,
    pub dist_mean_u: f64,
    pub dist_mean_v: f64,
    /// Present only while `max w < δ`.
    pub weighted_lp_y: Option<f64>,
    pub cumulative_consumption: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub min_w: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 24] = [
        "t",
        "dt_used",
        "mass_u",
        "mass_v",
        "w_l1",
        "w_l2",
        "w_l4",
        "w_linf",
        "entropy",
        "dissipation",
        "identity_residual",
        "hessian_log_lhs",
        "hessian_log_rhs",
        "compound_2d",
        "conv_u",
        "conv_v",
        "conv_w",
        "dist_mean_u",
        "dist_mean_v",
        "weighted_lp_y",
        "cumulative_consumption",
        "min_u",
        "min_v",
        "min_w",
    ];

    /// Values in [`Self::COLUMNS`] order; `None` only for `weighted_lp_y`.
    pub fn values(&self) -> [Option<f64>; 24] {
        [
            Some(self.t),
            Some(self.dt_used),
            Some(self.mass_u),
            Some(self.mass_v),
            Some(self.w_l1),
            Some(self.w_l2),
            Some(self.w_l4),
            Some(self.w_linf),
            Some(self.entropy),
            Some(self.dissipation),
            Some(self.identity_residual),
            Some(self.hessian_log_lhs),
            Some(self.hessian_log_rhs),
            Some(self.compound_2d),
            Some(self.conv_u),
            Some(self.conv_v),
            Some(self.conv_w),
            Some(self.dist_mean_u),
            Some(self.dist_mean_v),
            self.weighted_lp_y,
            Some(self.cumulative_consumption),
            Some(self.min_u),
            Some(self.min_v),
            Some(self.min_w),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().flatten().all(|v| v.is_finite())
    }
}

/// Frozen per-run data needed to turn a state into a [`DiagnosticsRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsContext {
    pub params: Params,
    pub reg: Regularization,
    pub means: Means,
    pub guard: Guard,
    pub mass_u0: f64,
    pub mass_v0: f64,
    pub mass_w0: f64,
    pub w0_max: f64,
    pub n_label: usize,
    pub weighted: Option<WeightedLpSpec>,
}

impl DiagnosticsContext {
    pub fn new(spec: &ProblemSpec, initial: &State, means: Means) -> Self {
        let weighted = spec
            .diagnostics
            .weighted
            .and_then(|e| WeightedLpSpec::new(e.p, e.r, &spec.params).ok());
        DiagnosticsContext {
            params: spec.params,
            reg: spec.reg,
            means,
            guard: Guard::from_initial(initial),
            mass_u0: integrate(&initial.u),
            mass_v0: integrate(&initial.v),
            mass_w0: integrate(&initial.w),
            w0_max: initial.w.max(),
            n_label: spec.diagnostics.n_label,
            weighted,
        }
    }

    pub fn entropy_and_dissipation(&self, s: &State) -> (f64, f64) {
        let e = entropy(s, &self.params, &self.guard).expect("state grid already validated");
        let d = dissipation(s, &self.params, &self.reg, &self.guard)
            .expect("state grid already validated");
        (e, d)
    }

    pub fn record(
        &self,
        s: &State,
        dt_used: f64,
        identity_residual: f64,
        consumed: f64,
    ) -> DiagnosticsRecord {
        let (entropy, dissipation) = self.entropy_and_dissipation(s);
        let norms = w_norms_of(&s.w).expect("p values are valid");
        let (lhs, rhs) = hessian_log_check(s, &self.guard).expect("grid validated");
        let (conv_u, conv_v, conv_w) = convergence_metrics(s, &self.means);
        let (dist_u, dist_v) =
            dist_mean_lq(s, &self.means, self.n_label).expect("n_label validated");
        DiagnosticsRecord {
            t: s.t,
            dt_used,
            mass_u: integrate(&s.u),
            mass_v: integrate(&s.v),
            w_l1: norms[0],
            w_l2: norms[1],
            w_l4: norms[2],
            w_linf: norms[3],
            entropy,
            dissipation,
            identity_residual,
            hessian_log_lhs: lhs,
            hessian_log_rhs: rhs,
            compound_2d: compound_2d(s).expect("grid validated"),
            conv_u,
            conv_v,
            conv_w,
            dist_mean_u: dist_u,
            dist_mean_v: dist_v,
            weighted_lp_y: self.weighted.and_then(|w| weighted_lp_value(s, &w).ok()),
            cumulative_consumption: consumed,
            min_u: s.u.min(),
            min_v: s.v.min(),
            min_w: s.w.min(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::solver::step;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(
        grid: Grid,
        t: f64,
        u: impl Fn([f64; 3]) -> f64,
        v: impl Fn([f64; 3]) -> f64,
        w: impl Fn([f64; 3]) -> f64,
    ) -> State {
        State {
            t,
            u: Field::from_fn(grid, u),
            v: Field::from_fn(grid, v),
            w: Field::from_fn(grid, w),
        }
    }

    fn homogeneous(grid: Grid, a: f64, b: f64, c: f64) -> State {
        state(grid, 0.0, |_| a, |_| b, |_| c)
    }

    fn params() -> Params {
        Params::new(1.3, 0.7, 0.9, 1.6).unwrap()
    }

    /// Smooth positive field: a base level plus a few random plane waves.
    fn random_smooth(rng: &mut ChaCha8Rng, lengths: [f64; 2]) -> impl Fn([f64; 3]) -> f64 {
        let base = rng.gen_range(1.5..3.0);
        let waves: Vec<[f64; 4]> = (0..4)
            .map(|_| {
                [
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.0..3.0) / lengths[0],
                    rng.gen_range(0.0..3.0) / lengths[1],
                    rng.gen_range(0.0..6.0),
                ]
            })
            .collect();
        move |x: [f64; 3]| {
            base + waves
                .iter()
                .map(|w| w[0] * (std::f64::consts::PI * (w[1] * x[0] + w[2] * x[1]) + w[3]).cos())
                .sum::<f64>()
        }
    }

    /// Straight-loop 2D quadrature written against plain arrays, with the
    /// zero-flux mirror closure expressed as index clamping.
    struct Oracle {
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
    }

    impl Oracle {
        fn new(grid: &Grid) -> Self {
            let (c, h) = (grid.cells(), grid.spacing());
            Oracle {
                nx: c[0],
                ny: c[1],
                hx: h[0],
                hy: h[1],
            }
        }
        fn at(&self, f: &[f64], i: isize, j: isize) -> f64 {
            let i = i.clamp(0, self.nx as isize - 1) as usize;
            let j = j.clamp(0, self.ny as isize - 1) as usize;
            f[i * self.ny + j]
        }
        fn dx(&self, f: &[f64]) -> Vec<f64> {
            self.map(|i, j| (self.at(f, i + 1, j) - self.at(f, i - 1, j)) / (2.0 * self.hx))
        }
        fn dy(&self, f: &[f64]) -> Vec<f64> {
            self.map(|i, j| (self.at(f, i, j + 1) - self.at(f, i, j - 1)) / (2.0 * self.hy))
        }
        fn dxx(&self, f: &[f64]) -> Vec<f64> {
            self.map(|i, j| {
                (self.at(f, i + 1, j) - 2.0 * self.at(f, i, j) + self.at(f, i - 1, j))
                    / (self.hx * self.hx)
            })
        }
        fn dyy(&self, f: &[f64]) -> Vec<f64> {
            self.map(|i, j| {
                (self.at(f, i, j + 1) - 2.0 * self.at(f, i, j) + self.at(f, i, j - 1))
                    / (self.hy * self.hy)
            })
        }
        fn map(&self, g: impl Fn(isize, isize) -> f64) -> Vec<f64> {
            let mut out = Vec::with_capacity(self.nx * self.ny);
            for i in 0..self.nx as isize {
                for j in 0..self.ny as isize {
                    out.push(g(i, j));
                }
            }
            out
        }
        fn sum(&self, f: impl Fn(usize) -> f64) -> f64 {
            let mut s = 0.0;
            for k in 0..self.nx * self.ny {
                s += f(k);
            }
            s * self.hx * self.hy
        }
        fn grad2(&self, f: &[f64]) -> Vec<f64> {
            let (gx, gy) = (self.dx(f), self.dy(f));
            gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect()
        }
        fn w_hess_log(&self, w: &[f64]) -> Vec<f64> {
            let l: Vec<f64> = w.iter().map(|x| x.ln()).collect();
            let (lxx, lyy, lxy) = (self.dxx(&l), self.dyy(&l), self.dy(&self.dx(&l)));
            (0..w.len())
                .map(|k| w[k] * (lxx[k] * lxx[k] + lyy[k] * lyy[k] + 2.0 * lxy[k] * lxy[k]))
                .collect()
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn entropy_examples() {
        let grid = Grid::unit(2, 8).unwrap();
        let p = params();
        let s = homogeneous(grid, 1.0, 1.0, 0.37);
        let g = Guard::from_initial(&s);
        assert_eq!(entropy(&s, &p, &g).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let s = homogeneous(grid, e, 1.0, 0.37);
        let value = entropy(&s, &p, &g).unwrap();
        assert!(close(value, p.alpha * p.chi2 * e, 1e-14), "{value}");
        // 0 · ln 0 is 0, not NaN.
        let s = homogeneous(grid, 0.0, 1.0, 0.5);
        assert_eq!(entropy(&s, &p, &g).unwrap(), 0.0);
    }

    #[test]
    fn functionals_match_straight_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = params();
        let reg = Regularization::rational(0.3).unwrap();
        for (lengths, cells) in [
            ([1.0, 1.0], [12, 12]),
            ([1.3, 0.7], [17, 9]),
            ([2.0, 0.5], [5, 23]),
        ] {
            let grid = Grid::new(&lengths, &cells).unwrap();
            let s = state(
                grid,
                0.0,
                random_smooth(&mut rng, lengths),
                random_smooth(&mut rng, lengths),
                random_smooth(&mut rng, lengths),
            );
            let guard = Guard::from_initial(&s);
            let o = Oracle::new(&grid);
            let (u, v, w) = (s.u.values(), s.v.values(), s.w.values());
            let (gu, gv, gw) = (o.grad2(u), o.grad2(v), o.grad2(w));
            let hl = o.w_hess_log(w);

            let e = o.sum(|k| {
                p.alpha * p.chi2 * u[k] * u[k].ln()
                    + p.beta * p.chi1 * v[k] * v[k].ln()
                    + 0.5 * p.chi1 * p.chi2 * gw[k] / w[k]
            });
            assert!(close(entropy(&s, &p, &guard).unwrap(), e, 1e-12));

            let fisher_u = o.sum(|k| gu[k] / u[k]);
            let fisher_v = o.sum(|k| gv[k] / v[k]);
            let hess = o.sum(|k| hl[k]);
            let cons = o.sum(|k| {
                (p.alpha * u[k] / (1.0 + 0.3 * u[k]) + p.beta * v[k] / (1.0 + 0.3 * v[k])) * gw[k]
                    / w[k]
            });
            let c = p.chi1 * p.chi2;
            let d = 0.5 * p.alpha * p.chi2 * fisher_u
                + 0.5 * p.beta * p.chi1 * fisher_v
                + 0.5 * c * hess
                + 0.5 * c * cons;
            let d_exact = p.alpha * p.chi2 * fisher_u
                + p.beta * p.chi1 * fisher_v
                + c * hess
                + 0.5 * c * cons;
            assert!(close(dissipation(&s, &p, &reg, &guard).unwrap(), d, 1e-12));
            assert!(close(
                dissipation_exact(&s, &p, &reg, &guard).unwrap(),
                d_exact,
                1e-12
            ));

            let (lhs, rhs) = hessian_log_check(&s, &guard).unwrap();
            assert!(close(lhs, o.sum(|k| gw[k] * gw[k] / w[k].powi(3)), 1e-12));
            assert!(close(rhs, (2.0 + 2f64.sqrt()).powi(2) * hess, 1e-12));

            let comp = o.sum(|k| u[k] * u[k] + v[k] * v[k] + gw[k] * gw[k]);
            assert!(close(compound_2d(&s).unwrap(), comp, 1e-12));

            let means = Means { u: 2.0, v: 2.2 };
            for n in [2usize, 3, 5] {
                let q = n as f64 / (n as f64 - 1.0);
                let du = o.sum(|k| (u[k] - 2.0).abs().powf(q)).powf(1.0 / q);
                let dv = o.sum(|k| (v[k] - 2.2).abs().powf(q)).powf(1.0 / q);
                let (a, b) = dist_mean_lq(&s, &means, n).unwrap();
                assert!(close(a, du, 1e-12) && close(b, dv, 1e-12), "n = {n}");
            }

            let spec = WeightedLpSpec {
                p: 2.0,
                r: 0.5,
                delta: 10.0,
                activation_time: None,
            };
            let y = o.sum(|k| (u[k].powi(2) + v[k].powi(2)) * (20.0 - w[k]).powf(-0.5));
            assert!(close(weighted_lp_value(&s, &spec).unwrap(), y, 1e-12));
        }
    }

    #[test]
    fn single_cosine_mode_dissipation_is_the_u_fisher_term() {
        let grid = Grid::unit(2, 20).unwrap();
        let p = params();
        let s = state(
            grid,
            0.0,
            |x| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).cos(),
            |_| 1.4,
            |_| 0.8,
        );
        let o = Oracle::new(&grid);
        let u = s.u.values();
        let gu = o.grad2(u);
        let expected = 0.5 * p.alpha * p.chi2 * o.sum(|k| gu[k] / u[k]);
        let guard = Guard::from_initial(&s);
        let d = dissipation(&s, &p, &Regularization::Identity, &guard).unwrap();
        assert!(close(d, expected, 1e-12), "{d} vs {expected}");
        assert!(d > 0.0);
    }

    proptest! {
        #[test]
        fn dissipation_is_nonnegative(seed in any::<u64>(), nx in 3usize..10, ny in 3usize..10, eps in 0.01f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = Grid::new(&[1.0, 1.0], &[nx, ny]).unwrap();
            let mut cell = |scale: f64| -> Field {
                let vals: Vec<f64> = (0..grid.num_cells()).map(|_| scale * rng.gen::<f64>()).collect();
                Field::from_values(grid, vals).unwrap()
            };
            let s = State { t: 0.0, u: cell(5.0), v: cell(2.0), w: cell(1.0) };
            let guard = Guard::from_initial(&s);
            let reg = Regularization::logarithmic(eps).unwrap();
            let p = params();
            prop_assert!(dissipation(&s, &p, &reg, &guard).unwrap() >= 0.0);
            prop_assert!(dissipation_exact(&s, &p, &reg, &guard).unwrap() >= 0.0);
        }
    }

    /// Exactly homogeneous trajectory produced by the stepper itself.
    fn homogeneous_run(
        grid: Grid,
        a: f64,
        b: f64,
        c: f64,
        dt: f64,
        steps: usize,
        p: &Params,
    ) -> Vec<State> {
        let mut out = vec![homogeneous(grid, a, b, c)];
        for _ in 0..steps {
            let next = step(out.last().unwrap(), p, &Regularization::Identity, dt).unwrap();
            out.push(next);
        }
        out
    }

    #[test]
    fn homogeneous_trajectory_identity_residual_is_zero() {
        let p = params();
        let run = homogeneous_run(Grid::unit(2, 6).unwrap(), 1.0, 1.0, 0.6, 1e-3, 20, &p);
        let guard = Guard::from_initial(&run[0]);
        assert_eq!(
            identity_residual(&run, &p, &Regularization::Identity, &guard).unwrap(),
            0.0
        );
        assert_eq!(
            identity_defect(&run, &p, &Regularization::Identity, &guard).unwrap(),
            0.0
        );
        assert!(matches!(
            identity_residual(&run[..1], &p, &Regularization::Identity, &guard),
            Err(DiagnosticsError::TooFewSnapshots { .. })
        ));
        let reversed: Vec<State> = run.iter().rev().cloned().collect();
        assert!(matches!(
            identity_residual(&reversed, &p, &Regularization::Identity, &guard),
            Err(DiagnosticsError::TimeOrder(_))
        ));
    }

    #[test]
    fn hessian_log_examples() {
        let grid = Grid::unit(2, 16).unwrap();
        let s = homogeneous(grid, 1.0, 1.0, 0.4);
        assert_eq!(
            hessian_log_check(&s, &Guard::from_initial(&s)).unwrap(),
            (0.0, 0.0)
        );
        assert!((hessian_log_constant(2) - 11.656_854_249_492_38).abs() < 1e-12);
        assert_eq!(hessian_log_constant(1), 9.0);

        let grid = Grid::unit(2, 48).unwrap();
        let bump = state(
            grid,
            0.0,
            |_| 1.0,
            |_| 1.0,
            |x| 0.1 + (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp(),
        );
        let (lhs, rhs) = hessian_log_check(&bump, &Guard::from_initial(&bump)).unwrap();
        assert!(lhs > 0.0 && lhs < 0.5 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn compound_of_unit_fields() {
        let s = homogeneous(Grid::unit(2, 5).unwrap(), 1.0, 1.0, 0.3);
        assert!((compound_2d(&s).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_consumption_budget_tends_to_initial_w() {
        let p = Params::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let grid = Grid::new(&[2.0], &[4]).unwrap();
        let (c, lambda) = (0.8, 0.5 * 1.2 + 0.5 * 0.6);
        let dt = 1e-3;
        let snaps: Vec<State> = (0..=30_000)
            .map(|k| {
                let t = k as f64 * dt;
                State {
                    t,
                    ..homogeneous(grid, 1.2, 0.6, c * (-lambda * t).exp())
                }
            })
            .collect();
        let budget = consumption_budget(&snaps, &p, &Regularization::Identity).unwrap();
        // ∫₀^T λ c e^{−λt} dt · |Ω|, trapezoid error O(dt²).
        let exact = 2.0 * c * (1.0 - (-lambda * 30.0f64).exp());
        assert!((budget - exact).abs() < 1e-6, "{budget} vs {exact}");
        assert!((budget - 2.0 * c).abs() < 1e-6);

        let tiny: Vec<State> = snaps
            .iter()
            .take(100)
            .map(|s| State {
                w: s.w.map(|x| 1e-9 * x),
                ..s.clone()
            })
            .collect();
        let scaled = consumption_budget(&tiny, &p, &Regularization::Identity).unwrap();
        let full = consumption_budget(&snaps[..100], &p, &Regularization::Identity).unwrap();
        assert!(close(scaled, 1e-9 * full, 1e-12));
    }

    #[test]
    fn metrics_of_homogeneous_state() {
        let s = homogeneous(Grid::unit(3, 3).unwrap(), 1.5, 0.5, 0.25);
        let means = Means { u: 1.5, v: 0.5 };
        assert_eq!(convergence_metrics(&s, &means), (0.0, 0.0, 0.25));
        assert_eq!(dist_mean_lq(&s, &means, 3).unwrap(), (0.0, 0.0));
        assert_eq!(
            dist_mean_lq(&s, &means, 6),
            Err(DiagnosticsError::DimensionLabel(6))
        );
        assert_eq!(
            dist_mean_lq(&s, &means, 1),
            Err(DiagnosticsError::DimensionLabel(1))
        );
    }

    #[test]
    fn delta_reference_values() {
        let p = Params::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let report = delta_of(2.0, 0.5, &p).unwrap();
        assert_eq!(report.delta, 0.015625);
        // Hand evaluation with 2δ = 1/32, χ = 1:
        // 2·32^{1/2}·{1 − (1 + (1/32)²)/(1.5 − 1/16)}.
        let hand = 2.0 * 32f64.sqrt() * (1.0 - (1.0 + 1.0 / 1024.0) / (1.5 - 1.0 / 16.0));
        assert!((report.a1 - hand).abs() < 1e-12);
        assert!((report.a1 - 3.4356).abs() < 1e-3);
        assert_eq!(report.a1, report.a2);

        // Large χ shrinks δ by 1/χ.
        let strong = Params::new(4.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(delta_of(2.0, 0.5, &strong).unwrap().delta, 0.015625 / 4.0);

        for (pp, r) in [(2.0, 0.0), (2.0, 1.0), (2.0, 1.5), (1.0, 0.1), (3.0, -0.2)] {
            assert!(matches!(
                delta_of(pp, r, &p),
                Err(DiagnosticsError::WeightedExponents { .. })
            ));
        }
    }

    proptest! {
        #[test]
        fn delta_coefficients_are_positive(
            p in 1.05f64..8.0,
            frac in 0.01f64..0.99,
            chi1 in 0.01f64..20.0,
            chi2 in 0.01f64..20.0,
        ) {
            let r = frac * (p - 1.0);
            let params = Params::new(chi1, chi2, 1.0, 1.0).unwrap();
            let report = delta_of(p, r, &params).unwrap();
            prop_assert!(report.delta > 0.0);
            prop_assert!(report.a1 > 0.0, "A1 = {}", report.a1);
            prop_assert!(report.a2 > 0.0, "A2 = {}", report.a2);
        }
    }

    #[test]
    fn weighted_functional_examples() {
        let p = Params::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let spec = WeightedLpSpec::new(2.0, 0.5, &p).unwrap();
        let grid = Grid::new(&[1.0, 3.0], &[4, 5]).unwrap();
        let tail: Vec<State> = (0..5)
            .map(|k| State {
                t: k as f64,
                ..homogeneous(grid, 1.5, 0.5, 0.0)
            })
            .collect();
        let expected = (2.0 * spec.delta).powf(-0.5) * (1.5f64.powi(2) + 0.25) * 3.0;
        for y in weighted_lp(&tail, &spec).unwrap() {
            assert!(close(y, expected, 1e-14));
        }
        let big = homogeneous(grid, 1.0, 1.0, spec.delta);
        assert!(matches!(
            weighted_lp_value(&big, &spec),
            Err(DiagnosticsError::NotSmall { .. })
        ));
    }

    #[test]
    fn smallness_time_examples() {
        let series = [(0.0, 0.9), (1.0, 0.5), (2.0, 0.3), (3.0, 0.1), (4.0, 0.05)];
        assert_eq!(smallness_time(&series, 1.0), 0.0);
        assert_eq!(smallness_time(&series, 0.3), 2.0);
        assert_eq!(smallness_time(&series, 0.01), f64::INFINITY);
        // A late excursion above δ resets the detection.
        let bumpy = [(0.0, 0.2), (1.0, 0.4), (2.0, 0.1)];
        assert_eq!(smallness_time(&bumpy, 0.3), 2.0);
        let mut last = 0.0;
        for delta in [1.0, 0.6, 0.4, 0.2, 0.06, 0.05] {
            let t0 = smallness_time(&series, delta);
            assert!(t0 >= last);
            last = t0;
        }
    }

    #[test]
    fn weak_form_trivial_cases() {
        let p = params();
        let grid = Grid::unit(2, 6).unwrap();
        let run = homogeneous_run(grid, 1.0, 2.0, 0.5, 1e-2, 10, &p);
        let mut zero = CosineBump::new(&[1.0, 1.0], &[1, 2], 0.05);
        zero.amplitude = 0.0;
        assert_eq!(
            weak_form_residual(&run, &p, &Regularization::Identity, &zero).unwrap(),
            (0.0, 0.0, 0.0)
        );

        let long = CosineBump::new(&[1.0, 1.0], &[1, 0], 1.0);
        assert!(matches!(
            weak_form_residual(&run, &p, &Regularization::Identity, &long),
            Err(DiagnosticsError::TestFunctionSupport(_))
        ));
    }

    #[test]
    fn weak_form_homogeneous_reduces_to_ode_defect() {
        let p = Params::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let grid = Grid::unit(2, 4).unwrap();
        let bump = CosineBump::new(&[1.0, 1.0], &[0, 0], 0.5);
        let mut w_res = Vec::new();
        for steps in [50usize, 100, 200] {
            let dt = 0.5 / steps as f64;
            let run = homogeneous_run(grid, 1.0, 2.0, 0.5, dt, steps, &p);
            let (ru, rv, rw) =
                weak_form_residual(&run, &p, &Regularization::Identity, &bump).unwrap();
            // Only the trapezoid error of ∫η′ = −η(0) survives for u and v:
            // a|Ω|·dt²/12·(η″(T) − η″(0)) = a·dt²·4 for T = 1/2.
            assert!((ru - 4.0 * dt * dt).abs() < 1e-3 * dt * dt, "{ru}");
            assert!((rv - 8.0 * dt * dt).abs() < 1e-3 * dt * dt, "{rv}");
            // Scalar ODE reduction: |Ω| [−∫w η′ − w₀η(0) + ∫λ w η], same quadrature.
            let lambda = 0.5 * 1.0 + 0.5 * 2.0;
            let eta = |t: f64| bump.value([0.0; 3], t);
            let eta_t = |t: f64| bump.time_derivative([0.0; 3], t);
            let w = |s: &State| s.w.values()[0];
            let mut scalar = -w(&run[0]) * eta(0.0);
            for pair in run.windows(2) {
                let g = |s: &State| -w(s) * eta_t(s.t) + lambda * w(s) * eta(s.t);
                scalar += 0.5 * dt * (g(&pair[0]) + g(&pair[1]));
            }
            assert!(close(rw, scalar, 1e-9), "{rw} vs {scalar}");
            w_res.push(rw.abs());
        }
        assert!(w_res.windows(2).all(|p| p[1] < p[0]), "{w_res:?}");
    }

    #[test]
    fn spacetime_homogeneous_windows() {
        let p = params();
        let grid = Grid::new(&[2.0, 1.0], &[4, 3]).unwrap();
        let run = homogeneous_run(grid, 1.5, 0.5, 0.7, 0.05, 50, &p);
        let guard = Guard::from_initial(&run[0]);
        let wins = spacetime_windows(&run, 2, &guard, 1.0).unwrap();
        assert_eq!(wins.len(), 2);
        for (k, w) in wins.iter().enumerate() {
            assert!((w.start - k as f64).abs() < 1e-12);
            assert_eq!(
                (w.fisher_u, w.fisher_v, w.hessian_w, w.grad_w4),
                (0.0, 0.0, 0.0, 0.0)
            );
            assert!(
                close(w.u_power, 2.0 * 1.5f64.powi(2), 1e-12),
                "{}",
                w.u_power
            );
            assert!(close(w.v_power, 2.0 * 0.25, 1e-12));
            assert!(w.w_t_sq > 0.0);
        }
        assert!(matches!(
            SpacetimeAccumulator::new(0.0, 2, guard),
            Err(DiagnosticsError::Window(_))
        ));
        assert!(matches!(
            SpacetimeAccumulator::new(1.0, 7, guard),
            Err(DiagnosticsError::DimensionLabel(7))
        ));
    }

    #[test]
    fn spacetime_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new(&[1.0, 1.0], &[7, 6]).unwrap();
        let snaps: Vec<State> = (0..5)
            .map(|k| State {
                t: 0.25 * k as f64,
                ..state(
                    grid,
                    0.0,
                    random_smooth(&mut rng, [1.0, 1.0]),
                    random_smooth(&mut rng, [1.0, 1.0]),
                    random_smooth(&mut rng, [1.0, 1.0]),
                )
            })
            .collect();
        let guard = Guard::from_initial(&snaps[0]);
        let wins = spacetime_windows(&snaps, 3, &guard, 1.0).unwrap();
        assert_eq!(wins.len(), 1);
        let o = Oracle::new(&grid);
        let per = |s: &State| {
            let (u, w) = (s.u.values(), s.w.values());
            let gu = o.grad2(u);
            let (wxx, wyy, wxy) = (o.dxx(w), o.dyy(w), o.dy(&o.dx(w)));
            let gw = o.grad2(w);
            (
                o.sum(|k| gu[k] / u[k]),
                o.sum(|k| wxx[k] * wxx[k] + wyy[k] * wyy[k] + 2.0 * wxy[k] * wxy[k]),
                o.sum(|k| gw[k] * gw[k]),
                o.sum(|k| u[k].powf(5.0 / 3.0)),
            )
        };
        let mut expect = [0.0; 5];
        for pair in snaps.windows(2) {
            let (a, b) = (per(&pair[0]), per(&pair[1]));
            let dt = pair[1].t - pair[0].t;
            expect[0] += 0.5 * dt * (a.0 + b.0);
            expect[1] += 0.5 * dt * (a.1 + b.1);
            expect[2] += 0.5 * dt * (a.2 + b.2);
            expect[3] += 0.5 * dt * (a.3 + b.3);
            let (w0, w1) = (pair[0].w.values(), pair[1].w.values());
            expect[4] += o.sum(|k| (w1[k] - w0[k]).powi(2)) / dt;
        }
        let w = wins[0];
        let got = [w.fisher_u, w.hessian_w, w.grad_w4, w.u_power, w.w_t_sq];
        for (g, e) in got.iter().zip(&expect) {
            assert!(close(*g, *e, 1e-12), "{g} vs {e}");
        }
    }

    #[test]
    fn record_columns_line_up() {
        let grid = Grid::unit(2, 4).unwrap();
        let spec = ProblemSpec {
            grid,
            params: params(),
            reg: Regularization::Identity,
            initial: crate::model::InitialData::constant(1.0, 1.0, 0.5),
            t_end: 1.0,
            output_stride: 1,
            policy: crate::solver::StepPolicy::default(),
            diagnostics: DiagnosticsConfig {
                n_label: 2,
                weighted: Some(WeightedExponents { p: 2.0, r: 0.5 }),
            },
        };
        let s = homogeneous(grid, 1.0, 1.0, 0.5);
        let ctx = DiagnosticsContext::new(&spec, &s, Means { u: 1.0, v: 1.0 });
        let rec = ctx.record(&s, 0.0, 0.0, 0.0);
        let values = rec.values();
        assert_eq!(values.len(), DiagnosticsRecord::COLUMNS.len());
        let missing: Vec<&str> = DiagnosticsRecord::COLUMNS
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.is_none())
            .map(|(c, _)| *c)
            .collect();
        assert_eq!(missing, ["weighted_lp_y"]);
        assert_eq!(values[7], Some(0.5));
        assert!(rec.is_finite());
        assert_eq!((rec.entropy, rec.dissipation), (0.0, 0.0));
    }
}
