//! Geometric graph-filter schedules `γ_k = γ₀·γ^k` with the convolution
//! exponent β and push threshold `r_max`.

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_R_MAX: f64 = 1e-7;

/// Which family a schedule (or timeline) came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterKind {
    /// `γ_k = α(1-α)^k`, personalized PageRank weights.
    LowPass,
    /// `γ_k = α(α-1)^k`, alternating sign.
    HighPass,
    /// Column-wise concatenation of several timelines.
    Concat,
    Custom,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::LowPass => "ppr",
            FilterKind::HighPass => "highpass",
            FilterKind::Concat => "concat",
            FilterKind::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSchedule {
    gamma0: f64,
    gamma: f64,
    beta: f64,
    r_max: f64,
    kind: FilterKind,
}

impl FilterSchedule {
    pub fn new(gamma0: f64, gamma: f64, beta: f64, r_max: f64) -> Result<Self> {
        Self::with_kind(gamma0, gamma, beta, r_max, FilterKind::Custom)
    }

    pub(crate) fn with_kind(gamma0: f64, gamma: f64, beta: f64, r_max: f64, kind: FilterKind) -> Result<Self> {
        if !(gamma0.is_finite() && gamma0 != 0.0) {
            return Err(Error::InvalidSchedule(format!("gamma0 must be nonzero, got {gamma0}")));
        }
        if !(gamma.abs() > 0.0 && gamma.abs() < 1.0) {
            return Err(Error::InvalidSchedule(format!("|gamma| must lie in (0, 1), got {gamma}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidSchedule(format!("beta must lie in [0, 1], got {beta}")));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::InvalidSchedule(format!("r_max must be positive, got {r_max}")));
        }
        Ok(FilterSchedule {
            gamma0,
            gamma,
            beta,
            r_max,
            kind,
        })
    }

    /// Personalized PageRank weights `α(1-α)^k`.
    pub fn ppr(alpha: f64, beta: f64, r_max: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Self::with_kind(alpha, 1.0 - alpha, beta, r_max, FilterKind::LowPass)
    }

    /// High-pass weights `α(α-1)^k`.
    pub fn highpass(alpha: f64, beta: f64, r_max: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Self::with_kind(alpha, alpha - 1.0, beta, r_max, FilterKind::HighPass)
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn with_r_max(self, r_max: f64) -> Result<Self> {
        Self::with_kind(self.gamma0, self.gamma, self.beta, r_max, self.kind)
    }

    pub fn weight_at(&self, k: u32) -> f64 {
        self.gamma0 * self.gamma.powi(k as i32)
    }

    /// `Σ_k |γ_k| = |γ₀| / (1 - |γ|)`.
    pub fn absolute_mass(&self) -> f64 {
        self.gamma0.abs() / (1.0 - self.gamma.abs())
    }

    /// Residual threshold `r_max·d^(1-β)` above which a node is pushed.
    pub fn threshold(&self, degree: f64) -> f64 {
        self.r_max * degree.powf(1.0 - self.beta)
    }

    /// Per-node error guarantee `r_max·d^(1-β)·|γ₀|/(1-|γ|)` on converged
    /// estimates. Reduces to `r_max·d^(1-β)` for PPR weights.
    pub fn error_bound(&self, degree: f64) -> f64 {
        self.threshold(degree) * self.absolute_mass()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSchedule(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
