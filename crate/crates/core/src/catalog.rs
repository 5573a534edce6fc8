//! Ready-made models: the β-analogue of Brownian TASEP, the O'Connell–Yor
//! system, and a free (non-interacting) baseline.
//!
//! All three use `2A = I`, `d = 1` and `r_{lk} = δ_{lk}`, so each particle
//! feels only the spacing directly behind it.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::expr::Expression;
use crate::model::{Covariance, Drifts, Interaction, ModelSpec, Potential, Support};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("parameter {name} = {value} is out of range ({requirement})")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("K must be at least 1")]
    NoParticles,
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

fn nearest_neighbour(particles: usize, mu_k: f64, potential: Potential) -> ModelSpec {
    ModelSpec {
        particles,
        range: 1,
        covariance: Covariance::IdentityHalf,
        interaction: Interaction::Delta,
        drifts: Drifts::constant(mu_k),
        potential,
    }
}

fn check_particles(particles: usize) -> Result<(), CatalogError> {
    if particles == 0 {
        Err(CatalogError::NoParticles)
    } else {
        Ok(())
    }
}

/// β-TASEP edge dynamics: drift `(β/4 − 1/2)/(X_k − X_{k+1}) + ...` with
/// `μ_k = μ/2`, so that spacings are Gamma(β/2, rate μ).
///
/// `β ≤ 4` is rejected: the spacing law then has infinite Fisher
/// information.
pub fn preset_beta_tasep(beta: f64, mu: f64, particles: usize) -> Result<ModelSpec, CatalogError> {
    if !(beta > 4.0) || !beta.is_finite() {
        return Err(CatalogError::ParameterOutOfRange {
            name: "beta",
            value: beta,
            requirement: "beta > 4",
        });
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(CatalogError::ParameterOutOfRange {
            name: "mu",
            value: mu,
            requirement: "mu > 0",
        });
    }
    check_particles(particles)?;
    Ok(nearest_neighbour(
        particles,
        0.5 * mu,
        Potential::BetaTasep { beta, mu },
    ))
}

/// O'Connell–Yor (Brownian queues in tandem): drift `e^{−(X_k − X_{k+1})}/2`,
/// spacings with density `Γ(μ)⁻¹ e^{−μz − e^{−z}}`.
pub fn preset_oconnell_yor(mu: f64, particles: usize) -> Result<ModelSpec, CatalogError> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(CatalogError::ParameterOutOfRange {
            name: "mu",
            value: mu,
            requirement: "mu > 0",
        });
    }
    check_particles(particles)?;
    Ok(nearest_neighbour(
        particles,
        0.5 * mu,
        Potential::OConnellYor { mu },
    ))
}

/// Independent Brownian motions with variance `t/2`. `U ≡ 0` is not
/// normalizable, so this preset is for simulation and generator checks only.
pub fn preset_free(particles: usize) -> ModelSpec {
    nearest_neighbour(
        particles.max(1),
        0.0,
        Potential::Custom {
            expr: Expression::parse("0").expect("constant expression"),
            support: Support::FullLine,
        },
    )
}

/// Closed-form spacing statistics of a preset.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpectedSpacing {
    pub partition: f64,
    pub mean: f64,
    pub variance: f64,
}

/// A preset together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "name", rename_all = "snake_case"))]
pub enum Preset {
    BetaTasep {
        beta: f64,
        mu: f64,
    },
    #[cfg_attr(feature = "serde", serde(rename = "oy"))]
    OConnellYor {
        mu: f64,
    },
    Free,
}

/// Static description of a preset for listings.
#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Parameter names with default values.
    pub parameters: &'static [(&'static str, f64)],
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "beta_tasep",
        summary: "beta-analogue of Brownian TASEP; Gamma(beta/2, mu) spacings; beta > 4",
        parameters: &[("beta", 6.0), ("mu", 1.0)],
    },
    PresetInfo {
        name: "oy",
        summary: "O'Connell-Yor Brownian queues in tandem; log-Gamma spacings; mu > 0",
        parameters: &[("mu", 2.0)],
    },
    PresetInfo {
        name: "free",
        summary: "independent Brownian motions (not normalizable; simulation only)",
        parameters: &[],
    },
];

impl Preset {
    /// Looks up `name` and fills parameters from `params`, falling back to
    /// the defaults in [`PRESETS`].
    pub fn from_name(name: &str, params: &[(&str, f64)]) -> Result<Self, CatalogError> {
        let info = PRESETS
            .iter()
            .find(|p| p.name == name || (name == "oconnell_yor" && p.name == "oy"))
            .ok_or_else(|| CatalogError::UnknownPreset(name.into()))?;
        let get = |key: &str| {
            params
                .iter()
                .rev()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .or_else(|| {
                    info.parameters
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, v)| *v)
                })
                .unwrap_or(f64::NAN)
        };
        Ok(match info.name {
            "beta_tasep" => Preset::BetaTasep {
                beta: get("beta"),
                mu: get("mu"),
            },
            "oy" => Preset::OConnellYor { mu: get("mu") },
            _ => Preset::Free,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::BetaTasep { .. } => "beta_tasep",
            Preset::OConnellYor { .. } => "oy",
            Preset::Free => "free",
        }
    }

    pub fn build(&self, particles: usize) -> Result<ModelSpec, CatalogError> {
        match *self {
            Preset::BetaTasep { beta, mu } => preset_beta_tasep(beta, mu, particles),
            Preset::OConnellYor { mu } => preset_oconnell_yor(mu, particles),
            Preset::Free => {
                check_particles(particles)?;
                Ok(preset_free(particles))
            }
        }
    }

    /// Closed-form partition function and spacing moments, when the law is
    /// normalizable.
    pub fn expected_spacing(&self) -> Option<ExpectedSpacing> {
        match *self {
            Preset::BetaTasep { beta, mu } => {
                let shape = 0.5 * beta;
                Some(ExpectedSpacing {
                    partition: libm::tgamma(shape) / libm::pow(mu, shape),
                    mean: shape / mu,
                    variance: shape / (mu * mu),
                })
            }
            Preset::OConnellYor { mu } => Some(ExpectedSpacing {
                partition: libm::tgamma(mu),
                mean: -digamma(mu),
                variance: trigamma(mu),
            }),
            Preset::Free => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::BetaTasep { beta, mu } => write!(f, "beta_tasep(beta={beta}, mu={mu})"),
            Preset::OConnellYor { mu } => write!(f, "oy(mu={mu})"),
            Preset::Free => f.write_str("free"),
        }
    }
}

/// Names of all presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// `ψ(x)` for `x > 0`: recurrence up to 20, then the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    let series = x2
        * (1.0 / 12.0
            - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 * (1.0 / 132.0)))));
    acc + libm::log(x) - 0.5 / x - series
}

/// `ψ'(x)` for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    let series = 1.0 / x
        + 0.5 * x2
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0))));
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{validate_skew_symmetry, DEFAULT_TOLERANCE};
    use crate::testkit;
    use rand::Rng;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    const PI2_6: f64 = 1.644_934_066_848_226_4;

    #[test]
    fn polygamma_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        assert!((digamma(2.0) - (1.0 - EULER_GAMMA)).abs() < 1e-14);
        assert!((digamma(0.5) - (-EULER_GAMMA - 2.0 * core::f64::consts::LN_2)).abs() < 1e-13);
        assert!((trigamma(1.0) - PI2_6).abs() < 1e-13);
        assert!((trigamma(2.0) - (PI2_6 - 1.0)).abs() < 1e-13);
        assert!((trigamma(0.5) - 3.0 * PI2_6).abs() < 1e-12);
    }

    #[test]
    fn gamma_parameter_gate() {
        for beta in [4.0, 3.5, 3.0, f64::NAN] {
            assert!(matches!(
                preset_beta_tasep(beta, 1.0, 3),
                Err(CatalogError::ParameterOutOfRange { name: "beta", .. })
            ));
        }
        assert!(preset_beta_tasep(4.5, 1.0, 3).is_ok());
        assert!(preset_beta_tasep(6.0, 0.0, 3).is_err());
        assert!(preset_oconnell_yor(0.0, 3).is_err());
        assert_eq!(preset_oconnell_yor(1.0, 0), Err(CatalogError::NoParticles));
    }

    #[test]
    fn presets_validate_and_have_zero_nu() {
        for spec in [
            preset_beta_tasep(6.0, 1.0, 6).unwrap(),
            preset_oconnell_yor(2.0, 6).unwrap(),
            preset_free(6),
        ] {
            assert!(
                validate_skew_symmetry(&spec, DEFAULT_TOLERANCE)
                    .unwrap()
                    .pass
            );
            let nu = linalg::solve_nu(&spec, spec.window() - 1).unwrap();
            assert!(nu.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn potential_matches_the_stated_drifts() {
        let mut rng = testkit::rng(2);
        let bt = preset_beta_tasep(6.0, 1.0, 2).unwrap();
        let oy = preset_oconnell_yor(2.0, 2).unwrap();
        for _ in 0..200 {
            let z: f64 = rng.random_range(0.01..20.0);
            let d_bt = bt.mu(1) + bt.potential.derivative(z);
            assert!((d_bt - 1.0 / z).abs() <= 1e-14 * (1.0 / z).max(1.0));
            let y: f64 = rng.random_range(-5.0..5.0);
            let d_oy = oy.mu(1) + oy.potential.derivative(y);
            assert!((d_oy - 0.5 * (-y).exp()).abs() <= 1e-14 * (0.5 * (-y).exp()).max(1.0));
        }
    }

    #[test]
    fn expected_statistics() {
        let e = Preset::BetaTasep { beta: 8.0, mu: 2.0 }
            .expected_spacing()
            .unwrap();
        assert!((e.partition - 0.375).abs() < 1e-14);
        let e = Preset::OConnellYor { mu: 3.0 }.expected_spacing().unwrap();
        assert!((e.partition - 2.0).abs() < 1e-13);
        let e = Preset::OConnellYor { mu: 1.0 }.expected_spacing().unwrap();
        assert!((e.mean - EULER_GAMMA).abs() < 1e-14);
        assert!(Preset::Free.expected_spacing().is_none());
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(
            Preset::from_name("oy", &[("mu", 3.0)]).unwrap(),
            Preset::OConnellYor { mu: 3.0 }
        );
        assert_eq!(
            Preset::from_name("beta_tasep", &[("mu", 2.0)]).unwrap(),
            Preset::BetaTasep { beta: 6.0, mu: 2.0 }
        );
        assert!(Preset::from_name("nope", &[]).is_err());
        assert_eq!(preset_names(), ["beta_tasep", "oy", "free"]);
    }
}
