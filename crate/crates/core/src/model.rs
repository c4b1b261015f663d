//! Parameters, states and initial data for the coupled system
//!
//! ```text
//! u_t = Δu − χ₁ ∇·(u F′(u) ∇w)
//! v_t = Δv − χ₂ ∇·(v F′(v) ∇w)
//! w_t = Δw − (α F(u) + β F(v)) w
//! ```
//!
//! with zero-flux boundaries on a rectangle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diagnostics::DiagnosticsConfig;
use crate::grid::{integrate, Field, Grid, GridError};
use crate::regularization::{Regularization, RegularizationError};
use crate::solver::StepPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} must be finite and nonnegative, got {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("{species} has a negative value {value} at cell {index}")]
    Negative {
        species: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{species} is identically zero")]
    Vanishing { species: &'static str },
    #[error("time must be finite and nonnegative, got {0}")]
    Time(f64),
    #[error("u, v and w must share one grid")]
    GridMismatch,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Regularization(#[from] RegularizationError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Chemotactic sensitivities and consumption rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub chi1: f64,
    pub chi2: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Params {
    pub fn new(chi1: f64, chi2: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Params {
            chi1,
            chi2,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    /// All four must be finite and nonnegative. Zero sensitivities or rates
    /// are accepted (decoupled and consumption-free runs) but fall outside
    /// [`Params::within_theorem_hypothesis`].
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("chi1", self.chi1),
            ("chi2", self.chi2),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::Parameter { name, value });
            }
        }
        Ok(())
    }

    /// Strict positivity of every parameter, the setting of the global
    /// boundedness and convergence results.
    pub fn within_theorem_hypothesis(&self) -> bool {
        self.chi1 > 0.0 && self.chi2 > 0.0 && self.alpha > 0.0 && self.beta > 0.0
    }

    pub fn chi_max(&self) -> f64 {
        self.chi1.max(self.chi2)
    }
}

/// `(max{χ₁,χ₂}·‖w₀‖_∞, π√(2/n))`: the product and the classical smallness
/// threshold it is compared against.
pub fn threshold_product(params: &Params, w0_max: f64, n: usize) -> (f64, f64) {
    (
        params.chi_max() * w0_max,
        std::f64::consts::PI * (2.0 / n as f64).sqrt(),
    )
}

/// One species' initial profile. Analytic profiles are clipped at zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `base + amplitude · Π_a cos(π x_a / L_a)`.
    Cosine {
        base: f64,
        amplitude: f64,
    },
    /// `base + amplitude · exp(−|x − c|² / (2 width²))`, `center` given as
    /// fractions of the side lengths.
    Gaussian {
        base: f64,
        amplitude: f64,
        center: [f64; 3],
        width: f64,
    },
    /// Explicit cell values, taken as given (no clipping).
    Values(Vec<f64>),
}

impl Profile {
    pub fn sample(&self, grid: &Grid) -> Result<Field> {
        let lengths = grid.lengths().to_vec();
        let field = match self {
            Profile::Constant(c) => Field::constant(*grid, c.max(0.0)),
            Profile::Cosine { base, amplitude } => Field::from_fn(*grid, |x| {
                let mode: f64 = lengths
                    .iter()
                    .enumerate()
                    .map(|(a, l)| (std::f64::consts::PI * x[a] / l).cos())
                    .product();
                (base + amplitude * mode).max(0.0)
            }),
            Profile::Gaussian {
                base,
                amplitude,
                center,
                width,
            } => {
                if !(*width > 0.0) {
                    return Err(ModelError::Invalid(format!(
                        "gaussian width must be positive, got {width}"
                    )));
                }
                Field::from_fn(*grid, |x| {
                    let r2: f64 = lengths
                        .iter()
                        .enumerate()
                        .map(|(a, l)| (x[a] - center[a] * l).powi(2))
                        .sum();
                    (base + amplitude * (-r2 / (2.0 * width * width)).exp()).max(0.0)
                })
            }
            Profile::Values(v) => Field::from_values(*grid, v.clone())?,
        };
        if !field.is_finite() {
            return Err(ModelError::Invalid("initial profile is not finite".into()));
        }
        Ok(field)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Profile::Constant(_))
    }
}

/// Recipe for `(u₀, v₀, w₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u: Profile,
    pub v: Profile,
    pub w: Profile,
    /// Relative amplitude of seeded multiplicative noise `1 + a·U(−1, 1)`.
    pub perturbation: f64,
    pub seed: u64,
}

impl InitialData {
    pub fn constant(a: f64, b: f64, c: f64) -> Self {
        InitialData {
            u: Profile::Constant(a),
            v: Profile::Constant(b),
            w: Profile::Constant(c),
            perturbation: 0.0,
            seed: 0,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.perturbation == 0.0
            && self.u.is_constant()
            && self.v.is_constant()
            && self.w.is_constant()
    }
}

/// Snapshot of the three unknowns at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub w: Field,
}

impl State {
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// Nonnegativity, finiteness and a shared grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(ModelError::Time(self.t));
        }
        if self.u.grid() != self.v.grid() || self.u.grid() != self.w.grid() {
            return Err(ModelError::GridMismatch);
        }
        for (species, f) in [("u", &self.u), ("v", &self.v), ("w", &self.w)] {
            for (index, &value) in f.values().iter().enumerate() {
                if !value.is_finite() {
                    return Err(GridError::NonFinite { index, value }.into());
                }
                if value < 0.0 {
                    return Err(ModelError::Negative {
                        species,
                        index,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Spatial means of the initial populations, `ū₀` and `v̄₀`. Frozen at t = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Means {
    pub u: f64,
    pub v: f64,
}

/// Everything needed to pose and run one initial-boundary value problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub params: Params,
    pub reg: Regularization,
    pub initial: InitialData,
    pub t_end: f64,
    /// Emit a record every this many accepted steps.
    pub output_stride: usize,
    pub policy: StepPolicy,
    pub diagnostics: DiagnosticsConfig,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.reg.validate()?;
        // The Hessian-based diagnostics need three cells per axis.
        self.grid.require_cells(3)?;
        self.policy
            .validate()
            .map_err(|e| ModelError::Invalid(e.to_string()))?;
        self.diagnostics
            .validate(self.grid.dim())
            .map_err(|e| ModelError::Invalid(e.to_string()))?;
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(ModelError::Invalid(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.output_stride == 0 {
            return Err(ModelError::Invalid(
                "output_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Samples and validates the initial state and freezes the initial means.
pub fn make_initial(spec: &ProblemSpec) -> Result<(State, Means)> {
    spec.validate()?;
    let grid = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.initial.seed);
    let mut sample = |profile: &Profile| -> Result<Field> {
        let f = profile.sample(&grid)?;
        let a = spec.initial.perturbation;
        if a == 0.0 {
            return Ok(f);
        }
        let noisy = f
            .values()
            .iter()
            .map(|v| v * (1.0 + a * rng.gen_range(-1.0..1.0)))
            .collect();
        Ok(Field::from_values(grid, noisy)?)
    };
    let state = State {
        t: 0.0,
        u: sample(&spec.initial.u)?,
        v: sample(&spec.initial.v)?,
        w: sample(&spec.initial.w)?,
    };
    state.validate()?;
    for (species, f) in [("u", &state.u), ("v", &state.v), ("w", &state.w)] {
        if f.values().iter().all(|&x| x == 0.0) {
            return Err(ModelError::Vanishing { species });
        }
    }
    let measure = grid.measure();
    let means = Means {
        u: integrate(&state.u) / measure,
        v: integrate(&state.v) / measure,
    };
    Ok((state, means))
}
