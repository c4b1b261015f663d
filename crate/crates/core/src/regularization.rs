//! The saturating family `F_ε` that regularizes the chemotactic flux and the
//! consumption term, together with its derivatives.
//!
//! `Identity` is the unregularized system (`F(s) = s`).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizationError {
    #[error("regularization parameter must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("argument must be nonnegative, got {0}")]
    Negative(f64),
    #[error("ratio bounds need s > 0, got {0}")]
    NonPositive(f64),
    #[error("ratio bounds are undefined for the identity variant")]
    Identity,
}

/// Which member of the family to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    Identity,
    /// `F_ε(s) = ln(1 + εs) / ε`.
    Logarithmic(f64),
    /// `F_ε(s) = s / (1 + εs)`.
    Rational(f64),
}

impl Regularization {
    pub fn logarithmic(eps: f64) -> Result<Self, RegularizationError> {
        check_eps(eps).map(Regularization::Logarithmic)
    }

    pub fn rational(eps: f64) -> Result<Self, RegularizationError> {
        check_eps(eps).map(Regularization::Rational)
    }

    /// Checks the ε range of an already-built value.
    pub fn validate(&self) -> Result<(), RegularizationError> {
        match *self {
            Regularization::Identity => Ok(()),
            Regularization::Logarithmic(e) | Regularization::Rational(e) => {
                check_eps(e).map(|_| ())
            }
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Regularization::Identity => None,
            Regularization::Logarithmic(e) | Regularization::Rational(e) => Some(e),
        }
    }

    /// Same variant with a different ε; `Identity` stays `Identity`.
    pub fn with_epsilon(&self, eps: f64) -> Result<Self, RegularizationError> {
        match self {
            Regularization::Identity => Ok(Regularization::Identity),
            Regularization::Logarithmic(_) => Self::logarithmic(eps),
            Regularization::Rational(_) => Self::rational(eps),
        }
    }

    /// `F_ε(s)`.
    pub fn f(&self, s: f64) -> Result<f64, RegularizationError> {
        check_arg(s)?;
        Ok(self.f_unchecked(s))
    }

    /// `F′_ε(s)`.
    pub fn f_prime(&self, s: f64) -> Result<f64, RegularizationError> {
        check_arg(s)?;
        Ok(self.f_prime_unchecked(s))
    }

    /// `F″_ε(s)`.
    pub fn f_second(&self, s: f64) -> Result<f64, RegularizationError> {
        check_arg(s)?;
        Ok(match *self {
            Regularization::Identity => 0.0,
            Regularization::Logarithmic(e) => {
                let d = 1.0 + e * s;
                -e / (d * d)
            }
            Regularization::Rational(e) => {
                let d = 1.0 + e * s;
                -2.0 * e / (d * d * d)
            }
        })
    }

    /// `(s·F′(s)²/F(s), s³·(F′(s)F″(s))²/F(s))` for `s > 0`.
    pub fn ratio_bounds(&self, s: f64) -> Result<(f64, f64), RegularizationError> {
        if matches!(self, Regularization::Identity) {
            return Err(RegularizationError::Identity);
        }
        if s.is_nan() || s <= 0.0 {
            return Err(RegularizationError::NonPositive(s));
        }
        let f = self.f_unchecked(s);
        let fp = self.f_prime_unchecked(s);
        let fpp = self.f_second(s)?;
        let first = s * fp * fp / f;
        let prod = fp * fpp;
        let second = s * s * s * prod * prod / f;
        Ok((first, second))
    }

    /// `F_ε(s)` without the sign check; callers guarantee `s >= 0`.
    #[inline]
    pub fn f_unchecked(&self, s: f64) -> f64 {
        match *self {
            Regularization::Identity => s,
            Regularization::Logarithmic(e) => (e * s).ln_1p() / e,
            Regularization::Rational(e) => s / (1.0 + e * s),
        }
    }

    #[inline]
    pub fn f_prime_unchecked(&self, s: f64) -> f64 {
        match *self {
            Regularization::Identity => 1.0,
            Regularization::Logarithmic(e) => 1.0 / (1.0 + e * s),
            Regularization::Rational(e) => {
                let d = 1.0 + e * s;
                1.0 / (d * d)
            }
        }
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularization::Identity => write!(f, "identity"),
            Regularization::Logarithmic(e) => write!(f, "logarithmic(eps={e})"),
            Regularization::Rational(e) => write!(f, "rational(eps={e})"),
        }
    }
}

fn check_eps(eps: f64) -> Result<f64, RegularizationError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(eps)
    } else {
        Err(RegularizationError::Epsilon(eps))
    }
}

fn check_arg(s: f64) -> Result<(), RegularizationError> {
    if s >= 0.0 {
        Ok(())
    } else {
        Err(RegularizationError::Negative(s))
    }
}
