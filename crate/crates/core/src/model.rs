//! Particle-system specifications and their structural validation.
//!
//! Indices follow the mathematical convention and are 1-based throughout
//! this module: `a(k, l)` is the covariance entry `a_{kl}`, `r(l, k)` the
//! interaction coefficient `r_{lk}` by which spacing `l` enters the drift of
//! particle `k`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::expr::Expression;
use crate::linalg;
use crate::measure::{self, Integral, MeasureError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} entry ({row}, {col}) is not available")]
    IndexUnavailable {
        what: &'static str,
        row: usize,
        col: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("spacing measure {k}: {which} integral diverges ({cause})")]
    DivergentIntegral {
        k: usize,
        which: Integral,
        cause: MeasureError,
    },
}

/// Domain of the spacing variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Support {
    FullLine,
    PositiveHalfLine,
}

impl Support {
    pub fn contains(self, z: f64) -> bool {
        match self {
            Support::FullLine => z.is_finite(),
            Support::PositiveHalfLine => z > 0.0 && z.is_finite(),
        }
    }
}

/// The interaction potential `U` together with its derivative.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Potential {
    /// `U(z) = (β/4 − 1/2) log z − (μ/2) z` on `(0, ∞)`.
    BetaTasep {
        beta: f64,
        mu: f64,
    },
    /// `U(z) = −(μ z + e^{−z}) / 2` on the real line.
    #[cfg_attr(feature = "serde", serde(rename = "oy"))]
    OConnellYor {
        mu: f64,
    },
    Custom {
        expr: Expression,
        support: Support,
    },
}

impl Potential {
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Potential::BetaTasep { beta, mu } => (beta / 4.0 - 0.5) * libm::log(z) - 0.5 * mu * z,
            Potential::OConnellYor { mu } => -0.5 * (mu * z + libm::exp(-z)),
            Potential::Custom { ref expr, .. } => expr.eval(z),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Potential::BetaTasep { beta, mu } => (beta / 4.0 - 0.5) / z - 0.5 * mu,
            Potential::OConnellYor { mu } => 0.5 * (libm::exp(-z) - mu),
            Potential::Custom { ref expr, .. } => expr.eval_derivative(z),
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Potential::BetaTasep { .. } => Support::PositiveHalfLine,
            Potential::OConnellYor { .. } => Support::FullLine,
            Potential::Custom { support, .. } => *support,
        }
    }

    /// Largest deviation `|U'(z) − (U(z+h) − U(z−h))/2h|` over `points`
    /// (skipping points whose stencil leaves the support).
    pub fn derivative_mismatch(&self, points: &[f64], h: f64) -> f64 {
        let support = self.support();
        points
            .iter()
            .filter(|&&z| support.contains(z - h) && support.contains(z + h))
            .map(|&z| {
                let fd = (self.value(z + h) - self.value(z - h)) / (2.0 * h);
                libm::fabs(self.derivative(z) - fd)
            })
            .fold(0.0, f64::max)
    }
}

/// Noise covariance `a_{kl}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", content = "data", rename_all = "snake_case")
)]
pub enum Covariance {
    /// `2A` is the identity: `a_{kl} = δ_{kl} / 2`.
    IdentityHalf,
    /// Row-major square matrix; rows are `k = 1, 2, ...`.
    Dense(Vec<Vec<f64>>),
}

impl Covariance {
    pub fn entry(&self, k: usize, l: usize) -> Result<f64, ModelError> {
        let unavailable = ModelError::IndexUnavailable {
            what: "covariance",
            row: k,
            col: l,
        };
        if k == 0 || l == 0 {
            return Err(unavailable);
        }
        match self {
            Covariance::IdentityHalf => Ok(if k == l { 0.5 } else { 0.0 }),
            Covariance::Dense(rows) => rows
                .get(k - 1)
                .and_then(|row| row.get(l - 1))
                .copied()
                .ok_or(unavailable),
        }
    }
}

/// Interaction coefficients `r_{lk}` for `k ≤ l ≤ k + d − 1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", content = "data", rename_all = "snake_case")
)]
pub enum Interaction {
    /// `r_{lk} = 1` if `l = k`, else `0`.
    Delta,
    /// `data[k − 1][j] = r_{(k+j) k}` for `j = 0, ..., d − 1`.
    Banded(Vec<Vec<f64>>),
}

/// Drift constants `μ_k`, constant from index `k0` on.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Drifts {
    pub values: Vec<f64>,
    pub k0: usize,
}

impl Drifts {
    pub fn constant(mu: f64) -> Self {
        Self {
            values: alloc::vec![mu],
            k0: 1,
        }
    }

    pub fn mu(&self, k: usize) -> f64 {
        let idx = k.min(self.k0).max(1) - 1;
        self.values[idx]
    }
}

/// A truncated particle system: `K` particles, interaction range `d`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub particles: usize,
    #[cfg_attr(feature = "serde", serde(rename = "d"))]
    pub range: usize,
    pub covariance: Covariance,
    pub interaction: Interaction,
    pub drifts: Drifts,
    pub potential: Potential,
}

impl ModelSpec {
    /// Checks the shape constraints that do not involve the skew-symmetry
    /// algebra: positive sizes, a well-formed drift sequence.
    pub fn check_structure(&self) -> Result<(), ModelError> {
        if self.particles == 0 {
            return Err(ModelError::Invalid("K must be positive".into()));
        }
        if self.range == 0 {
            return Err(ModelError::Invalid("d must be positive".into()));
        }
        let Drifts { values, k0 } = &self.drifts;
        if *k0 == 0 || values.len() < *k0 {
            return Err(ModelError::Invalid(format!(
                "drifts need at least k0 = {k0} values, got {}",
                values.len()
            )));
        }
        if values[*k0 - 1..].iter().any(|&m| m != values[*k0 - 1]) {
            return Err(ModelError::Invalid(format!(
                "drifts must be constant from k0 = {k0} on"
            )));
        }
        if values.iter().any(|m| !m.is_finite()) {
            return Err(ModelError::Invalid("drifts must be finite".into()));
        }
        if let Interaction::Banded(rows) = &self.interaction {
            if rows.iter().any(|row| row.len() > self.range) {
                return Err(ModelError::Invalid(format!(
                    "banded interaction rows may hold at most d = {} entries",
                    self.range
                )));
            }
        }
        Ok(())
    }

    /// The same system truncated at a different number of particles.
    pub fn with_particles(&self, particles: usize) -> Self {
        Self {
            particles,
            ..self.clone()
        }
    }

    /// Index of the last covariance row/column the validators touch.
    pub fn window(&self) -> usize {
        self.particles + self.range
    }

    pub fn a(&self, k: usize, l: usize) -> Result<f64, ModelError> {
        self.covariance.entry(k, l)
    }

    /// `r_{lk}`, zero outside the band `k ≤ l ≤ k + d − 1`.
    pub fn r(&self, l: usize, k: usize) -> Result<f64, ModelError> {
        if k == 0 {
            return Err(ModelError::IndexUnavailable {
                what: "interaction",
                row: l,
                col: k,
            });
        }
        if l < k || l >= k + self.range {
            return Ok(0.0);
        }
        match &self.interaction {
            Interaction::Delta => Ok(if l == k { 1.0 } else { 0.0 }),
            Interaction::Banded(rows) => rows
                .get(k - 1)
                .and_then(|row| row.get(l - k))
                .copied()
                .ok_or(ModelError::IndexUnavailable {
                    what: "interaction",
                    row: l,
                    col: k,
                }),
        }
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.drifts.mu(k)
    }

    /// A 64-bit FNV-1a fingerprint of everything the simulator reads:
    /// sizes, the `(K+d)²` covariance window, the interaction band, drifts
    /// and potential parameters. Entries that cannot be evaluated hash as NaN.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.write_u64(self.particles as u64);
        h.write_u64(self.range as u64);
        let n = self.window();
        for k in 1..=n {
            for l in 1..=n {
                h.write_f64(self.a(k, l).unwrap_or(f64::NAN));
            }
            for l in k..k + self.range {
                h.write_f64(self.r(l, k).unwrap_or(f64::NAN));
            }
            h.write_f64(self.mu(k));
        }
        match &self.potential {
            Potential::BetaTasep { beta, mu } => {
                h.write_u64(1);
                h.write_f64(*beta);
                h.write_f64(*mu);
            }
            Potential::OConnellYor { mu } => {
                h.write_u64(2);
                h.write_f64(*mu);
            }
            Potential::Custom { expr, support } => {
                h.write_u64(3);
                h.write_bytes(expr.source().as_bytes());
                h.write_u64(*support as u64);
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }
}

/// Which structural or measure condition a [`ValidationEntry`] checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Condition {
    /// `ã_{kl} = (r_{lk} − r_{l(k+1)}) / 2` for `l > k`.
    SkewSymmetry,
    /// `a_{1k} − a_{1(k+1)} = r_{k1} / 2`.
    FirstRow,
    /// `ã_{kk} = 1`.
    UnitSpacingVariance,
    /// `r_{kk} = 1`.
    UnitInteraction,
    /// `a_{kl} = a_{lk}`.
    Symmetry,
    /// Cholesky of the `K × K` window succeeds; `k` is the failing pivot.
    PositiveDefinite,
    /// `Z_k` finite and positive.
    PartitionFunction,
    SecondMoment,
    /// `∫ exp(2U − 2ν_k z) U'² dz` finite.
    FisherInformation,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::SkewSymmetry => "skew_symmetry",
            Condition::FirstRow => "first_row",
            Condition::UnitSpacingVariance => "unit_spacing_variance",
            Condition::UnitInteraction => "unit_interaction",
            Condition::Symmetry => "symmetry",
            Condition::PositiveDefinite => "positive_definite",
            Condition::PartitionFunction => "partition_function",
            Condition::SecondMoment => "second_moment",
            Condition::FisherInformation => "fisher_information",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationEntry {
    pub condition: Condition,
    pub k: usize,
    pub l: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
    pub tolerance: f64,
    pub pass: bool,
}

impl ValidationReport {
    fn new(tolerance: f64) -> Self {
        Self {
            entries: Vec::new(),
            tolerance,
            pass: true,
        }
    }

    fn check(&mut self, condition: Condition, k: usize, l: usize, lhs: f64, rhs: f64) {
        let abs_error = libm::fabs(lhs - rhs);
        let pass = abs_error <= self.tolerance;
        self.pass &= pass;
        self.entries.push(ValidationEntry {
            condition,
            k,
            l,
            lhs,
            rhs,
            abs_error,
            pass,
        });
    }

    fn record(&mut self, entry: ValidationEntry) {
        self.pass &= entry.pass;
        self.entries.push(entry);
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Checks the skew-symmetry relations between covariance and interaction,
/// their normalizations, symmetry of the covariance window, and positive
/// definiteness of the `K × K` covariance block.
pub fn validate_skew_symmetry(spec: &ModelSpec, tol: f64) -> Result<ValidationReport, ModelError> {
    spec.check_structure()?;
    if !(tol > 0.0) {
        return Err(ModelError::Invalid("tolerance must be positive".into()));
    }
    let mut report = ValidationReport::new(tol);
    let n = spec.window();
    let last = n - 1;

    for k in 1..=n {
        for l in k + 1..=n {
            report.check(Condition::Symmetry, k, l, spec.a(k, l)?, spec.a(l, k)?);
        }
    }
    for k in 1..=last {
        for l in k + 1..=last {
            let lhs = linalg::a_tilde(spec, k, l)?;
            let rhs = 0.5 * (spec.r(l, k)? - spec.r(l, k + 1)?);
            report.check(Condition::SkewSymmetry, k, l, lhs, rhs);
        }
    }
    for k in 1..=last {
        let lhs = spec.a(1, k)? - spec.a(1, k + 1)?;
        report.check(Condition::FirstRow, 1, k, lhs, 0.5 * spec.r(k, 1)?);
        report.check(
            Condition::UnitSpacingVariance,
            k,
            k,
            linalg::a_tilde(spec, k, k)?,
            1.0,
        );
        report.check(Condition::UnitInteraction, k, k, spec.r(k, k)?, 1.0);
    }

    let (pivot, pass) = match linalg::cholesky(spec) {
        Ok(_) => (0, true),
        Err(linalg::LinalgError::NotPositiveDefinite { pivot }) => (pivot, false),
        Err(linalg::LinalgError::Model(e)) => return Err(e),
        Err(e) => return Err(ModelError::Invalid(format!("{e}"))),
    };
    report.record(ValidationEntry {
        condition: Condition::PositiveDefinite,
        k: pivot,
        l: pivot,
        lhs: if pass { 1.0 } else { 0.0 },
        rhs: 1.0,
        abs_error: if pass { 0.0 } else { 1.0 },
        pass,
    });
    Ok(report)
}

/// Verifies numerically that every spacing measure `exp(2U − 2ν_k z)` is
/// normalizable with finite second moment and Fisher information, for all
/// indices covered by `nu`. Entries report the computed values (`lhs`); a
/// diverging integral is an error naming the index and the integral.
pub fn validate_measure_conditions(
    spec: &ModelSpec,
    nu: &linalg::NuVector,
) -> Result<ValidationReport, ModelError> {
    let needed = spec.window() - 1;
    if nu.len() < needed {
        return Err(ModelError::Invalid(format!(
            "nu covers {} indices, need {needed}",
            nu.len()
        )));
    }
    let mut report = ValidationReport::new(0.0);
    let mut cache: Vec<(u64, measure::SpacingMeasure)> = Vec::new();
    for k in 1..=nu.len() {
        let nu_k = nu.get(k);
        let m = match cache.iter().find(|(bits, _)| *bits == nu_k.to_bits()) {
            Some((_, m)) => m.clone(),
            None => {
                let m = measure::build_measure(&spec.potential, nu_k).map_err(|cause| {
                    ModelError::DivergentIntegral {
                        k,
                        which: cause.integral().unwrap_or(Integral::Mass),
                        cause,
                    }
                })?;
                cache.push((nu_k.to_bits(), m.clone()));
                m
            }
        };
        let finite = |v: f64| ValidationEntry {
            condition: Condition::PartitionFunction,
            k,
            l: k,
            lhs: v,
            rhs: 0.0,
            abs_error: 0.0,
            pass: v.is_finite(),
        };
        let mut z = finite(m.partition);
        z.pass &= m.partition > 0.0;
        report.record(z);
        report.record(ValidationEntry {
            condition: Condition::SecondMoment,
            ..finite(m.second_moment)
        });
        report.record(ValidationEntry {
            condition: Condition::FisherInformation,
            ..finite(m.score_square_integral)
        });
    }
    Ok(report)
}
