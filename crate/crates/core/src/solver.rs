//! Conservative forward-Euler stepping.
//!
//! The chemotactic transport of `u` and `v` is written as the divergence of
//! face fluxes that vanish on the boundary, so the discrete masses telescope
//! and are conserved to round-off. The time step is capped so that the
//! `w` update is a nonnegative combination of neighbouring values with total
//! weight at most one; `max w` and every `‖w‖_p` are then nonincreasing.
//! Negative cells are never clipped: a step that produces one is rejected
//! and retried with half the step size.

use thiserror::Error;

use crate::diagnostics::{DiagnosticsContext, DiagnosticsRecord};
use crate::grid::{flux_divergence, integrate, laplacian, lp_norm, FaceField, Field, GridError};
use crate::model::{make_initial, Means, ModelError, Params, ProblemSpec, State};
use crate::regularization::Regularization;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("step produced {species} = {value} at cell {index} (t = {t}, dt = {dt})")]
    Positivity {
        species: &'static str,
        index: usize,
        value: f64,
        t: f64,
        dt: f64,
    },
    #[error("positivity retries exhausted at t = {t}: last attempt dt = {dt}; {last}")]
    RetriesExhausted { t: f64, dt: f64, last: String },
    #[error("time step must be positive and finite, got {0}")]
    Step(f64),
    #[error("target time {until} does not lie after the current time {t}")]
    Until { t: f64, until: f64 },
    #[error("invalid step policy: {0}")]
    Policy(String),
    #[error("refinement factor must be at least 2, got {0}")]
    Refinement(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Step-size selection knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub positivity_retries: u32,
    /// Use this step everywhere instead of the adaptive bound.
    pub fixed_dt: Option<f64>,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            cfl_safety: 0.9,
            dt_max: f64::INFINITY,
            positivity_retries: 40,
            fixed_dt: None,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(SolverError::Policy(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.dt_max > 0.0) {
            return Err(SolverError::Policy(format!(
                "dt_max must be positive, got {}",
                self.dt_max
            )));
        }
        if self.positivity_retries < 1 {
            return Err(SolverError::Policy(
                "positivity_retries must be at least 1".into(),
            ));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(SolverError::Policy(format!(
                    "fixed_dt must be positive, got {dt}"
                )));
            }
        }
        Ok(())
    }
}

/// Largest `|w_{k+1} − w_k| / h` over interior faces.
fn max_face_gradient(w: &Field) -> f64 {
    let grid = *w.grid();
    let mut vmax: f64 = 0.0;
    for axis in 0..grid.dim() {
        let g = face_gradient(w, axis);
        vmax = vmax.max(g.max_abs());
    }
    vmax
}

fn face_gradient(w: &Field, axis: usize) -> FaceField {
    let grid = w.grid();
    let inv_h = 1.0 / grid.spacing()[axis];
    let v = w.values();
    FaceField::from_interior(grid, axis, |lo, hi| (v[hi] - v[lo]) * inv_h)
}

/// Adaptive explicit step:
/// `safety · min(h²/(2d), h/(V + tiny), dt_max, 1/(Σ 2/h_a² + λ_max))`
/// with `V = max χ_i |∂w/∂n|` over faces and
/// `λ_max = α F(max u) + β F(max v)`. The last term keeps the `w` update a
/// contraction.
pub fn stable_dt(state: &State, params: &Params, reg: &Regularization, policy: &StepPolicy) -> f64 {
    if let Some(dt) = policy.fixed_dt {
        return dt;
    }
    let grid = state.grid();
    let h = grid.h_min();
    let diffusive = h * h / (2.0 * grid.dim() as f64);
    let speed = params.chi_max() * max_face_gradient(&state.w);
    let advective = h / (speed + 1e-300);
    let lambda = params.alpha * reg.f_unchecked(state.u.max().max(0.0))
        + params.beta * reg.f_unchecked(state.v.max().max(0.0));
    let stencil: f64 = grid.spacing().iter().map(|h| 2.0 / (h * h)).sum();
    let contraction = 1.0 / (stencil + lambda);
    policy.cfl_safety * diffusive.min(advective).min(policy.dt_max).min(contraction)
}

/// One forward-Euler step of the (regularized) system.
pub fn step(state: &State, params: &Params, reg: &Regularization, dt: f64) -> Result<State> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SolverError::Step(dt));
    }
    let grid = *state.grid();
    let lap_u = laplacian(&state.u)?;
    let lap_v = laplacian(&state.v)?;
    let lap_w = laplacian(&state.w)?;

    let grads: Vec<FaceField> = (0..grid.dim())
        .map(|a| face_gradient(&state.w, a))
        .collect();
    let transport = |f: &Field| -> Result<Field> {
        let mobility: Vec<f64> = f
            .values()
            .iter()
            .map(|&s| s * reg.f_prime_unchecked(s))
            .collect();
        let fluxes: Vec<FaceField> = grads
            .iter()
            .map(|g| {
                let axis = g.axis();
                let mut flux = FaceField::from_interior(&grid, axis, |lo, hi| {
                    0.5 * (mobility[lo] + mobility[hi])
                });
                for (q, gw) in flux.values_mut().iter_mut().zip(g.values()) {
                    *q *= gw;
                }
                flux
            })
            .collect();
        Ok(flux_divergence(&grid, &fluxes)?)
    };
    let div_u = transport(&state.u)?;
    let div_v = transport(&state.v)?;

    let t = state.t + dt;
    let check = |species: &'static str, values: Vec<f64>| -> Result<Field> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x >= 0.0))
        {
            return Err(SolverError::Positivity {
                species,
                index,
                value,
                t: state.t,
                dt,
            });
        }
        Ok(Field::from_values(grid, values)?)
    };

    let u: Vec<f64> = (0..grid.num_cells())
        .map(|i| state.u.values()[i] + dt * (lap_u.values()[i] - params.chi1 * div_u.values()[i]))
        .collect();
    let v: Vec<f64> = (0..grid.num_cells())
        .map(|i| state.v.values()[i] + dt * (lap_v.values()[i] - params.chi2 * div_v.values()[i]))
        .collect();
    let w: Vec<f64> = (0..grid.num_cells())
        .map(|i| {
            let uu = state.u.values()[i];
            let vv = state.v.values()[i];
            let ww = state.w.values()[i];
            let rate = params.alpha * reg.f_unchecked(uu) + params.beta * reg.f_unchecked(vv);
            ww + dt * (lap_w.values()[i] - rate * ww)
        })
        .collect();

    Ok(State {
        t,
        u: check("u", u)?,
        v: check("v", v)?,
        w: check("w", w)?,
    })
}

/// `∫ (α F(u) + β F(v)) w`, the instantaneous consumption rate.
pub fn consumption_rate(state: &State, params: &Params, reg: &Regularization) -> f64 {
    let (u, v, w) = (state.u.values(), state.v.values(), state.w.values());
    let sum: f64 = (0..u.len())
        .map(|i| {
            (params.alpha * reg.f_unchecked(u[i]) + params.beta * reg.f_unchecked(v[i])) * w[i]
        })
        .sum();
    sum * state.grid().cell_volume()
}

/// Per-step invariant bookkeeping collected while advancing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub steps: usize,
    pub retries: usize,
    /// Largest `|∫u − ∫u₀| / ∫u₀` seen after any accepted step.
    pub mass_drift_u: f64,
    pub mass_drift_v: f64,
    /// Largest single-step increase of `max w` (≤ 0 when monotone).
    pub w_inf_increase: f64,
    /// Largest single-step relative increase of `‖w‖_p`, p = 1, 2, 4.
    pub w_p_increase: [f64; 3],
    pub min_u: f64,
    pub min_v: f64,
    pub min_w: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Smallest step proposed by the step-size rule, before the final step
    /// is shortened or a rejected step halved.
    pub dt_proposed_min: f64,
}

impl Default for StepStats {
    fn default() -> Self {
        StepStats {
            steps: 0,
            retries: 0,
            mass_drift_u: 0.0,
            mass_drift_v: 0.0,
            w_inf_increase: f64::NEG_INFINITY,
            w_p_increase: [f64::NEG_INFINITY; 3],
            min_u: f64::INFINITY,
            min_v: f64::INFINITY,
            min_w: f64::INFINITY,
            dt_min: f64::INFINITY,
            dt_max: 0.0,
            dt_proposed_min: f64::INFINITY,
        }
    }
}

pub const MONITORED_P: [f64; 3] = [1.0, 2.0, 4.0];

/// A trajectory in progress: current state, the frozen initial data it
/// started from and the running step statistics.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub spec: ProblemSpec,
    pub ctx: DiagnosticsContext,
    pub state: State,
    /// `∫₀ᵗ ∫ (αF(u) + βF(v)) w`, trapezoid over accepted steps.
    pub consumed: f64,
    pub stats: StepStats,
}

impl Simulation {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        let (state, means) = make_initial(spec)?;
        Ok(Self::from_state(spec, state, means))
    }

    /// Starts from an arbitrary valid state, treating it as the initial datum.
    pub fn from_state(spec: &ProblemSpec, state: State, means: Means) -> Self {
        let ctx = DiagnosticsContext::new(spec, &state, means);
        Simulation {
            spec: spec.clone(),
            ctx,
            state,
            consumed: 0.0,
            stats: StepStats::default(),
        }
    }

    pub fn record(&self, dt_used: f64, residual: f64) -> DiagnosticsRecord {
        self.ctx
            .record(&self.state, dt_used, residual, self.consumed)
    }

    /// Advances to `until`, emitting a record at the starting time, every
    /// `output_stride` accepted steps, and at `until` exactly. `observe` sees
    /// every recorded state with its record.
    pub fn advance(
        &mut self,
        until: f64,
        mut observe: impl FnMut(&State, &DiagnosticsRecord),
    ) -> Result<Vec<DiagnosticsRecord>> {
        self.advance_stepwise(until, |s, rec| {
            if let Some(rec) = rec {
                observe(s, rec);
            }
        })
    }

    /// Like [`advance`](Self::advance), but `observe` is called with the
    /// starting state and after every accepted step; the record is present
    /// only on recording steps.
    pub fn advance_stepwise(
        &mut self,
        until: f64,
        mut observe: impl FnMut(&State, Option<&DiagnosticsRecord>),
    ) -> Result<Vec<DiagnosticsRecord>> {
        if !(until > self.state.t) {
            return Err(SolverError::Until {
                t: self.state.t,
                until,
            });
        }
        let spec = &self.spec;
        let (params, reg, policy) = (spec.params, spec.reg, spec.policy);
        policy.validate()?;
        let mut records = Vec::new();
        let first = self.record(0.0, 0.0);
        observe(&self.state, Some(&first));
        records.push(first);

        let mass_u0 = self.ctx.mass_u0;
        let mass_v0 = self.ctx.mass_v0;
        let mut w_norms = w_norms_of(&self.state.w)?;
        let mut rate = consumption_rate(&self.state, &params, &reg);
        let mut since_record = 0usize;

        while self.state.t < until {
            let remaining = until - self.state.t;
            let mut dt = stable_dt(&self.state, &params, &reg, &policy);
            self.stats.dt_proposed_min = self.stats.dt_proposed_min.min(dt);
            let mut last_step = false;
            // Absorb a round-off sliver into the final step rather than
            // taking an extra step of ~1e-13.
            if dt * (1.0 + 1e-6) >= remaining {
                dt = remaining;
                last_step = true;
            }
            let mut attempt = 0;
            let next = loop {
                match step(&self.state, &params, &reg, dt) {
                    Ok(s) => break s,
                    Err(e @ SolverError::Positivity { .. }) => {
                        attempt += 1;
                        if attempt > policy.positivity_retries as usize {
                            return Err(SolverError::RetriesExhausted {
                                t: self.state.t,
                                dt,
                                last: e.to_string(),
                            });
                        }
                        self.stats.retries += 1;
                        dt *= 0.5;
                        last_step = false;
                    }
                    Err(e) => return Err(e),
                }
            };
            let mut next = next;
            if last_step {
                next.t = until;
            }

            let new_norms = w_norms_of(&next.w)?;
            let st = &mut self.stats;
            st.steps += 1;
            st.dt_min = st.dt_min.min(dt);
            st.dt_max = st.dt_max.max(dt);
            st.mass_drift_u = st
                .mass_drift_u
                .max((integrate(&next.u) - mass_u0).abs() / mass_u0);
            st.mass_drift_v = st
                .mass_drift_v
                .max((integrate(&next.v) - mass_v0).abs() / mass_v0);
            st.w_inf_increase = st.w_inf_increase.max(new_norms[3] - w_norms[3]);
            for k in 0..3 {
                let rel = if w_norms[k] > 0.0 {
                    (new_norms[k] - w_norms[k]) / w_norms[k]
                } else {
                    new_norms[k]
                };
                st.w_p_increase[k] = st.w_p_increase[k].max(rel);
            }
            st.min_u = st.min_u.min(next.u.min());
            st.min_v = st.min_v.min(next.v.min());
            st.min_w = st.min_w.min(next.w.min());
            w_norms = new_norms;

            let record = last_step || since_record + 1 >= spec.output_stride;
            let residual = if record {
                let (e0, d0) = self.ctx.entropy_and_dissipation(&self.state);
                let (e1, _) = self.ctx.entropy_and_dissipation(&next);
                (e1 - e0) / dt + d0
            } else {
                0.0
            };

            let new_rate = consumption_rate(&next, &params, &reg);
            self.consumed += 0.5 * dt * (rate + new_rate);
            rate = new_rate;
            self.state = next;
            since_record += 1;

            if record {
                let rec = self.record(dt, residual);
                observe(&self.state, Some(&rec));
                records.push(rec);
                since_record = 0;
            } else {
                observe(&self.state, None);
            }
        }
        Ok(records)
    }
}

/// `‖w‖_1, ‖w‖_2, ‖w‖_4, ‖w‖_∞`.
pub fn w_norms_of(w: &Field) -> Result<[f64; 4]> {
    Ok([
        lp_norm(w, 1.0)?,
        lp_norm(w, 2.0)?,
        lp_norm(w, 4.0)?,
        lp_norm(w, f64::INFINITY)?,
    ])
}

/// Advances `state` (taken as the initial datum) to `until`.
pub fn advance(
    state: State,
    spec: &ProblemSpec,
    until: f64,
) -> Result<(State, Vec<DiagnosticsRecord>)> {
    state.validate()?;
    let measure = state.grid().measure();
    let means = Means {
        u: integrate(&state.u) / measure,
        v: integrate(&state.v) / measure,
    };
    let mut sim = Simulation::from_state(spec, state, means);
    let records = sim.advance(until, |_, _| {})?;
    Ok((sim.state, records))
}

/// High-resolution companion run: the same scheme with every step divided by
/// `refinement` and, optionally, the mesh halved.
pub fn reference_solve(
    spec: &ProblemSpec,
    until: f64,
    refinement: usize,
    halve_mesh: bool,
) -> Result<State> {
    if refinement < 2 {
        return Err(SolverError::Refinement(refinement));
    }
    let mut fine = spec.clone();
    let r = refinement as f64;
    fine.policy.cfl_safety /= r;
    if fine.policy.dt_max.is_finite() {
        fine.policy.dt_max /= r;
    }
    fine.policy.fixed_dt = spec.policy.fixed_dt.map(|dt| dt / r);
    if halve_mesh {
        fine.grid = spec.grid.refined();
    }
    fine.output_stride = usize::MAX;
    let mut sim = Simulation::new(&fine)?;
    sim.advance(until, |_, _| {})?;
    Ok(sim.state)
}
