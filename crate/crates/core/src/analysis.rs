//! Monte Carlo verification: stationarity of the spacing laws, the
//! Gaussian law of the pinned particle, equality in law of projected and
//! directly simulated systems, and martingale residuals of the generator.
//!
//! Every test returns a [`TestReport`]; failures are verdicts, not errors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{self, Matrix, NuVector};
use crate::measure::{MeasureError, MeasureSet};
use crate::model::{ModelError, ModelSpec};
use crate::rng::derive_seed;
use crate::sde::{
    DriftModel, InitialCondition, PathEnsemble, PathObserver, SimConfig, SimError, Simulator,
};
use crate::stats::{self, Moments};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

/// Number of standard errors allowed by the z-tests.
pub const Z_CRITICAL: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TestEntry {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    /// Allowed `|observed − expected|`, or the critical value of a statistic
    /// whose expected value is 0.
    pub tolerance: f64,
    pub pass: bool,
}

impl TestEntry {
    pub fn within(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected,
            tolerance,
            pass: libm::fabs(observed - expected) <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostic {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TestReport {
    pub id: String,
    pub entries: Vec<TestEntry>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub diagnostics: Vec<Diagnostic>,
    pub pass: bool,
}

impl TestReport {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            entries: Vec::new(),
            sample_sizes: Vec::new(),
            seeds: Vec::new(),
            diagnostics: Vec::new(),
            pass: true,
        }
    }

    pub fn push(&mut self, entry: TestEntry) {
        self.pass &= entry.pass;
        self.entries.push(entry);
    }

    pub fn diagnostic(&mut self, name: impl Into<String>, value: f64) {
        self.diagnostics.push(Diagnostic {
            name: name.into(),
            value,
        });
    }

    pub fn failures(&self) -> impl Iterator<Item = &TestEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&TestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn mean_test(&mut self, name: &str, m: &Moments, expected: f64) {
        self.push(TestEntry::within(
            format!("{name}.mean"),
            m.mean,
            expected,
            Z_CRITICAL * m.mean_se(),
        ));
    }

    fn variance_test(&mut self, name: &str, m: &Moments, expected: f64) {
        self.push(TestEntry::within(
            format!("{name}.variance"),
            m.variance,
            expected,
            Z_CRITICAL * m.variance_se(),
        ));
    }

    fn ks_test(&mut self, name: &str, statistic: f64, critical: f64) {
        self.push(TestEntry {
            name: format!("{name}.ks"),
            observed: statistic,
            expected: 0.0,
            tolerance: critical,
            pass: statistic <= critical,
        });
    }
}

/// A coordinate of the spacing state `(x_1, y_1, ..., y_{K−1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StateVar {
    X1,
    /// `y_k = x_k − x_{k+1}`, 1-based.
    Y(usize),
}

impl StateVar {
    /// Position in the state vector.
    pub fn slot(self) -> usize {
        match self {
            StateVar::X1 => 0,
            StateVar::Y(k) => k,
        }
    }

    fn label(self) -> String {
        match self {
            StateVar::X1 => "x_1".into(),
            StateVar::Y(k) => format!("y_{k}"),
        }
    }
}

/// Test functions with closed-form derivatives: a single coordinate or a
/// product of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum TestFunction {
    Coordinate { var: StateVar },
    Quadratic { a: StateVar, b: StateVar },
}

impl TestFunction {
    pub fn x1() -> Self {
        TestFunction::Coordinate { var: StateVar::X1 }
    }

    pub fn y(k: usize) -> Self {
        TestFunction::Coordinate {
            var: StateVar::Y(k),
        }
    }

    pub fn x1_squared() -> Self {
        TestFunction::Quadratic {
            a: StateVar::X1,
            b: StateVar::X1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Coordinate { var } => var.label(),
            TestFunction::Quadratic { a, b } if a == b => format!("{}^2", a.label()),
            TestFunction::Quadratic { a, b } => format!("{}*{}", a.label(), b.label()),
        }
    }

    /// Largest state slot the function reads.
    pub fn max_slot(&self) -> usize {
        match *self {
            TestFunction::Coordinate { var } => var.slot(),
            TestFunction::Quadratic { a, b } => a.slot().max(b.slot()),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, TestFunction::Coordinate { .. })
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        match *self {
            TestFunction::Coordinate { var } => s[var.slot()],
            TestFunction::Quadratic { a, b } => s[a.slot()] * s[b.slot()],
        }
    }

    pub fn gradient(&self, s: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; s.len()];
        match *self {
            TestFunction::Coordinate { var } => g[var.slot()] = 1.0,
            TestFunction::Quadratic { a, b } => {
                g[a.slot()] += s[b.slot()];
                g[b.slot()] += s[a.slot()];
            }
        }
        g
    }

    pub fn hessian(&self, n: usize) -> Matrix {
        let mut h = Matrix::zeros(n, n);
        if let TestFunction::Quadratic { a, b } = *self {
            h[(a.slot(), b.slot())] += 1.0;
            h[(b.slot(), a.slot())] += 1.0;
        }
        h
    }
}

/// `(x_1, x_1 − x_2, ..., x_{K−1} − x_K)`.
pub fn state_of(x: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(x.len());
    state_into(x, &mut s);
    s
}

fn state_into(x: &[f64], s: &mut Vec<f64>) {
    s.clear();
    s.push(x[0]);
    s.extend(x.windows(2).map(|w| w[0] - w[1]));
}

/// Positions from a spacing state.
pub fn positions_of(s: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len());
    x.push(s[0]);
    for k in 1..s.len() {
        let prev = x[k - 1];
        x.push(prev - s[k]);
    }
    x
}

/// `L_K f = ½ tr(Θ ∇²f) + b · ∇f` on the spacing state, where `Θ` is the
/// covariance of the differenced noise and `b` the drift of
/// `(x_1, y_1, ..., y_{K−1})`.
#[derive(Debug, Clone)]
pub struct Generator {
    theta: Matrix,
    drift: DriftModel,
}

impl Generator {
    pub fn new(spec: &ModelSpec, nu: &NuVector) -> Result<Self, AnalysisError> {
        Ok(Self {
            theta: linalg::theta(spec, spec.particles)?,
            drift: DriftModel::new(spec, nu)?,
        })
    }

    pub fn theta(&self) -> &Matrix {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.rows()
    }

    /// Drift of the spacing state at `s`.
    pub fn state_drift(&self, s: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        let n = self.dim();
        let x = positions_of(s);
        let mut scores = vec![0.0; n - 1];
        let mut b = vec![0.0; n];
        self.drift.drift_into(&x, &mut scores, &mut b)?;
        let mut out = Vec::with_capacity(n);
        out.push(b[0]);
        out.extend(b.windows(2).map(|w| w[0] - w[1]));
        Ok(out)
    }

    /// Second-order part `½ tr(Θ ∇²f)`.
    pub fn diffusion_part(&self, f: &TestFunction) -> f64 {
        if f.is_linear() {
            return 0.0;
        }
        let n = self.dim();
        let h = f.hessian(n);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.theta[(i, j)] * h[(i, j)];
            }
        }
        0.5 * acc
    }

    pub fn apply(&self, f: &TestFunction, s: &[f64]) -> Result<f64, AnalysisError> {
        self.check(f, s)?;
        let b = self.state_drift(s)?;
        let g = f.gradient(s);
        let first: f64 = b.iter().zip(&g).map(|(b, g)| b * g).sum();
        Ok(first + self.diffusion_part(f))
    }

    /// `(L_K f)` at positions `x` given the precomputed diffusion part,
    /// without allocating. `scores` and `b` are scratch of length `K − 1`
    /// and `K`; `s` must hold the state of `x`.
    fn apply_at_positions(
        &self,
        f: &TestFunction,
        diffusion: f64,
        x: &[f64],
        s: &[f64],
        scores: &mut [f64],
        b: &mut [f64],
    ) -> Result<f64, SimError> {
        self.drift.drift_into(x, scores, b)?;
        let slot_drift = |slot: usize| {
            if slot == 0 {
                b[0]
            } else {
                b[slot - 1] - b[slot]
            }
        };
        let first = match *f {
            TestFunction::Coordinate { var } => slot_drift(var.slot()),
            TestFunction::Quadratic { a, b: c } => {
                slot_drift(a.slot()) * s[c.slot()] + slot_drift(c.slot()) * s[a.slot()]
            }
        };
        Ok(first + diffusion)
    }

    fn check(&self, f: &TestFunction, s: &[f64]) -> Result<(), AnalysisError> {
        if s.len() != self.dim() {
            return Err(AnalysisError::Invalid(format!(
                "state has length {}, expected K = {}",
                s.len(),
                self.dim()
            )));
        }
        if f.max_slot() >= s.len() {
            return Err(AnalysisError::Invalid(format!(
                "{} is not a coordinate of a {}-particle state",
                f.label(),
                s.len()
            )));
        }
        Ok(())
    }
}

/// `(L_K f)(point)` for a state `point = (x_1, y_1, ..., y_{K−1})`.
pub fn generator_apply(
    spec: &ModelSpec,
    nu: &NuVector,
    f: &TestFunction,
    point: &[f64],
) -> Result<f64, AnalysisError> {
    Generator::new(spec, nu)?.apply(f, point)
}

fn spacing_measures(spec: &ModelSpec, nu: &NuVector) -> Result<MeasureSet, AnalysisError> {
    Ok(MeasureSet::for_spec(spec, nu)?)
}

/// Mean of `X_1(t)` under the quasi-stationary start, per unit time:
/// `μ_1 + Σ_{l=1}^{d} r_{l1} ν_l`.
pub fn pinned_drift(spec: &ModelSpec, nu: &NuVector) -> Result<f64, AnalysisError> {
    let mut v = spec.mu(1);
    for l in 1..=spec.range {
        v += spec.r(l, 1)? * nu.get(l);
    }
    Ok(v)
}

/// Checks an ensemble started from the quasi-stationary law: at every
/// record time `t > 0`, each spacing's mean, variance and distribution
/// against its spacing measure, and `X_1(t)` against `N(pinned drift · t,
/// a_11 t)`. At `t = 0`, `X_1` must vanish identically.
pub fn test_quasi_stationarity(
    ensemble: &PathEnsemble,
    spec: &ModelSpec,
    nu: &NuVector,
) -> Result<TestReport, AnalysisError> {
    let measures = spacing_measures(spec, nu)?;
    let drift1 = pinned_drift(spec, nu)?;
    let a11 = spec.a(1, 1)?;
    let n = ensemble.len();
    let mut report = TestReport::new("quasi_stationarity");
    report.sample_sizes.push(n);
    report.seeds.push(ensemble.config.seed);
    report.diagnostic("failed_paths", ensemble.failures.len() as f64);
    report.diagnostic("rejected_steps", ensemble.stats.rejections as f64);
    let critical = stats::ks_critical_one_sample(n);

    for (r, &t) in ensemble.times.iter().enumerate() {
        let x1 = ensemble.coordinate(r, 1);
        if t == 0.0 {
            let worst = x1.iter().fold(0.0f64, |m, &v| m.max(libm::fabs(v)));
            report.push(TestEntry::within("t=0.x_1.pinned", worst, 0.0, 0.0));
            continue;
        }
        for m in measures.iter() {
            let k = m.index;
            let name = format!("t={t}.y_{k}");
            let sample = ensemble.spacing(r, k);
            let mom = Moments::of(&sample);
            report.mean_test(&name, &mom, m.mean);
            report.variance_test(&name, &mom, m.variance);
            let sorted = stats::sorted(&sample);
            let cdf = m.quadrature_cdf_sorted(&sorted);
            report.ks_test(&name, stats::ks_statistic_sorted(&cdf), critical);
        }
        let mom = Moments::of(&x1);
        let name = format!("t={t}.x_1");
        report.mean_test(&name, &mom, drift1 * t);
        report.variance_test(&name, &mom, a11 * t);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConsistencyOptions {
    /// Simulate the direct `J`-particle system without its `ν` boundary
    /// terms (a negative control).
    pub zero_boundary: bool,
    /// Exchange the seeds of the two ensembles.
    pub swap_seeds: bool,
}

/// Compares the first `j` coordinates of the `K`-particle system `spec`
/// with the directly simulated `j`-particle system, both from their
/// quasi-stationary laws and with independent seeds: two-sample KS tests
/// on `X_1` and on `Y_1, ..., Y_{j−1}` at every record time `t > 0`.
pub fn test_consistency(
    spec: &ModelSpec,
    nu: &NuVector,
    j: usize,
    cfg: &SimConfig,
    options: ConsistencyOptions,
) -> Result<TestReport, AnalysisError> {
    if j == 0 || j >= spec.particles {
        return Err(AnalysisError::Invalid(format!(
            "need 1 <= J < K, got J = {j}, K = {}",
            spec.particles
        )));
    }
    let (mut seed_full, mut seed_direct) = (cfg.seed, derive_seed(cfg.seed, 1));
    if options.swap_seeds {
        core::mem::swap(&mut seed_full, &mut seed_direct);
    }
    let full_cfg = SimConfig {
        seed: seed_full,
        ..cfg.clone()
    };
    let direct_cfg = SimConfig {
        seed: seed_direct,
        ..cfg.clone()
    };
    let init = InitialCondition::QuasiStationary;
    let projected = Simulator::new(spec, nu, &full_cfg)?.run(&init)?.project(j);
    let mut direct = Simulator::new(&spec.with_particles(j), nu, &direct_cfg)?;
    if options.zero_boundary {
        direct = direct.without_boundary();
    }
    let direct = direct.run(&init)?;

    let mut report = TestReport::new(if options.zero_boundary {
        "consistency_zero_boundary"
    } else {
        "consistency"
    });
    report.sample_sizes.extend([projected.len(), direct.len()]);
    report.seeds.extend([seed_full, seed_direct]);
    report.diagnostic("K", spec.particles as f64);
    report.diagnostic("J", j as f64);
    let critical = stats::ks_critical_two_sample(projected.len(), direct.len());

    for (r, &t) in projected.times.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let d = stats::ks_two_sample(&projected.coordinate(r, 1), &direct.coordinate(r, 1));
        report.ks_test(&format!("t={t}.x_1"), d, critical);
        for k in 1..j {
            let d = stats::ks_two_sample(&projected.spacing(r, k), &direct.spacing(r, k));
            report.ks_test(&format!("t={t}.y_{k}"), d, critical);
        }
    }
    Ok(report)
}

/// Per-path `f(s_T) − f(s_0) − ∫_0^T (L_K f)(s_u) du` (trapezoidal on the
/// grid), together with the increment `f(s_T) − f(s_0)`.
struct Residual<'a> {
    generator: &'a Generator,
    f: TestFunction,
    diffusion: f64,
    dt: f64,
    state: Vec<f64>,
    scores: Vec<f64>,
    b: Vec<f64>,
    first: f64,
    last: f64,
    prev_lf: f64,
    integral: f64,
    ok: bool,
}

impl PathObserver for Residual<'_> {
    type Output = Option<(f64, f64)>;

    fn observe(&mut self, step: usize, x: &[f64]) {
        if !self.ok {
            return;
        }
        state_into(x, &mut self.state);
        let fx = self.f.eval(&self.state);
        let lf = match self.generator.apply_at_positions(
            &self.f,
            self.diffusion,
            x,
            &self.state,
            &mut self.scores,
            &mut self.b,
        ) {
            Ok(v) => v,
            Err(_) => {
                self.ok = false;
                return;
            }
        };
        if step == 0 {
            self.first = fx;
        } else {
            self.integral += 0.5 * self.dt * (self.prev_lf + lf);
        }
        self.prev_lf = lf;
        self.last = fx;
    }

    fn finish(self) -> Self::Output {
        let increment = self.last - self.first;
        self.ok.then_some((increment - self.integral, increment))
    }
}

fn residual_moments(
    spec: &ModelSpec,
    nu: &NuVector,
    f: &TestFunction,
    cfg: &SimConfig,
    init: &InitialCondition,
) -> Result<(Moments, Moments, usize), AnalysisError> {
    let generator = Generator::new(spec, nu)?;
    if f.max_slot() >= generator.dim() {
        return Err(AnalysisError::Invalid(format!(
            "{} is not a coordinate of a {}-particle state",
            f.label(),
            generator.dim()
        )));
    }
    let mut sim = Simulator::new(spec, nu, cfg)?;
    let diffusion = generator.diffusion_part(f);
    let k = spec.particles;
    let outcome = sim.run_with(init, |_| Residual {
        generator: &generator,
        f: *f,
        diffusion,
        dt: cfg.dt,
        state: Vec::with_capacity(k),
        scores: vec![0.0; k - 1],
        b: vec![0.0; k],
        first: 0.0,
        last: 0.0,
        prev_lf: 0.0,
        integral: 0.0,
        ok: true,
    })?;
    let (res, inc): (Vec<f64>, Vec<f64>) = outcome.outputs.into_iter().flatten().unzip();
    Ok((Moments::of(&res), Moments::of(&inc), outcome.failures.len()))
}

/// Tests that the Monte Carlo mean of `M^f_T = f(s_T) − f(s_0) −
/// ∫ L_K f` vanishes within `3` standard errors plus a discretization
/// allowance. The allowance is `2 |R(dt) − R(dt/2)|`, the Richardson
/// estimate of the first-order bias of `R(dt)`; the halved run uses a
/// derived seed.
pub fn test_martingale_residual(
    spec: &ModelSpec,
    nu: &NuVector,
    f: &TestFunction,
    cfg: &SimConfig,
    init: &InitialCondition,
) -> Result<TestReport, AnalysisError> {
    let (res, inc, failed) = residual_moments(spec, nu, f, cfg, init)?;
    let fine = SimConfig {
        dt: 0.5 * cfg.dt,
        seed: derive_seed(cfg.seed, 2),
        ..cfg.clone()
    };
    let (res_fine, _, failed_fine) = residual_moments(spec, nu, f, &fine, init)?;
    let allowance = 2.0 * libm::fabs(res.mean - res_fine.mean);

    let mut report = TestReport::new(format!("martingale_residual[{}]", f.label()));
    report.sample_sizes.extend([res.n, res_fine.n]);
    report.seeds.extend([cfg.seed, fine.seed]);
    report.push(TestEntry::within(
        "residual.mean",
        res.mean,
        0.0,
        Z_CRITICAL * res.mean_se() + allowance,
    ));
    report.diagnostic("residual.se", res.mean_se());
    report.diagnostic("discretization_allowance", allowance);
    report.diagnostic("residual_half_dt.mean", res_fine.mean);
    report.diagnostic("residual_half_dt.se", res_fine.mean_se());
    report.diagnostic("increment.mean", inc.mean);
    report.diagnostic("increment.se", inc.mean_se());
    report.diagnostic("failed_paths", (failed + failed_fine) as f64);
    Ok(report)
}

/// Checks `(L_K f)(point)` against the one-step Monte Carlo estimate
/// `(E f(s_h) − f(s)) / h` over `paths` Euler steps of size `h`. For
/// quadratic `f` the Euler step carries the bias `h b_a b_b`, which is
/// added to the tolerance.
pub fn test_generator_one_step(
    spec: &ModelSpec,
    nu: &NuVector,
    f: &TestFunction,
    point: &[f64],
    h: f64,
    paths: usize,
    seed: u64,
) -> Result<TestReport, AnalysisError> {
    let generator = Generator::new(spec, nu)?;
    let lf = generator.apply(f, point)?;
    let b = generator.state_drift(point)?;
    let f0 = f.eval(point);
    let cfg = SimConfig::new(h, h, paths, seed);
    let init = InitialCondition::Fixed(positions_of(point));

    struct Last(Vec<f64>);
    impl PathObserver for Last {
        type Output = Vec<f64>;
        fn observe(&mut self, _: usize, x: &[f64]) {
            self.0.clear();
            self.0.extend_from_slice(x);
        }
        fn finish(self) -> Vec<f64> {
            self.0
        }
    }
    let outcome = Simulator::new(spec, nu, &cfg)?.run_with(&init, |_| Last(Vec::new()))?;
    let quotients: Vec<f64> = outcome
        .outputs
        .iter()
        .map(|x| (f.eval(&state_of(x)) - f0) / h)
        .collect();
    let m = Moments::of(&quotients);
    let bias = match *f {
        TestFunction::Coordinate { .. } => 0.0,
        TestFunction::Quadratic { a, b: c } => h * libm::fabs(b[a.slot()] * b[c.slot()]),
    };

    let mut report = TestReport::new(format!("generator[{}]", f.label()));
    report.sample_sizes.push(m.n);
    report.seeds.push(seed);
    report.push(TestEntry::within(
        "one_step_quotient",
        m.mean,
        lf,
        Z_CRITICAL * m.mean_se() + bias + 1e-12,
    ));
    report.diagnostic("generator", lf);
    report.diagnostic("diffusion_part", generator.diffusion_part(f));
    report.diagnostic("h", h);
    Ok(report)
}

impl core::fmt::Display for TestReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(
            f,
            "{}: {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<5} {:<28} observed {:>14.6e}  expected {:>14.6e}  tol {:>11.3e}",
                if e.pass { "ok" } else { "FAIL" },
                e.name,
                e.observed,
                e.expected,
                e.tolerance
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::model::{Covariance, Drifts};
    use crate::testkit;
    use rand::Rng;

    fn nu_for(spec: &ModelSpec) -> NuVector {
        linalg::solve_nu(spec, spec.window() - 1).unwrap()
    }

    #[test]
    fn generator_examples() {
        let oy = catalog::preset_oconnell_yor(2.0, 2).unwrap();
        let v = generator_apply(&oy, &nu_for(&oy), &TestFunction::x1(), &[0.0, 0.0]).unwrap();
        // μ/2 + U'(0) = 1 − 1/2
        assert!((v - 0.5).abs() < 1e-15);

        let free = catalog::preset_free(3);
        let v = generator_apply(
            &free,
            &nu_for(&free),
            &TestFunction::x1_squared(),
            &[0.0; 3],
        )
        .unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_accessors_match_finite_differences() {
        let fs = [
            TestFunction::x1(),
            TestFunction::y(2),
            TestFunction::x1_squared(),
            TestFunction::Quadratic {
                a: StateVar::X1,
                b: StateVar::Y(1),
            },
            TestFunction::Quadratic {
                a: StateVar::Y(2),
                b: StateVar::Y(2),
            },
        ];
        let s = [0.3, -1.2, 2.5];
        let h = 1e-4;
        for f in fs {
            let g = f.gradient(&s);
            let hess = f.hessian(3);
            for i in 0..3 {
                let mut p = s;
                let mut m = s;
                p[i] += h;
                m[i] -= h;
                let fd = (f.eval(&p) - f.eval(&m)) / (2.0 * h);
                assert!((g[i] - fd).abs() < 1e-6);
                for j in 0..3 {
                    let gp = f.gradient(&p)[j];
                    let gm = f.gradient(&m)[j];
                    assert!((hess[(i, j)] - (gp - gm) / (2.0 * h)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn linear_functions_have_no_diffusion_part() {
        let mut rng = testkit::rng(14);
        let spec = testkit::random_valid_spec(&mut rng, 4, 2);
        let g = Generator::new(&spec, &nu_for(&spec)).unwrap();
        for f in [TestFunction::x1(), TestFunction::y(1), TestFunction::y(3)] {
            assert_eq!(g.diffusion_part(&f), 0.0);
        }
    }

    /// The second-order part written out term by term:
    /// `½ a_11 ∂²_{x_1} + Σ_k (a_{1k} − a_{1(k+1)}) ∂_{x_1}∂_{y_k} + ½ Σ ã_{kl} ∂_{y_k}∂_{y_l}`,
    /// and the first-order part from the particle drifts.
    fn generator_by_terms(spec: &ModelSpec, nu: &NuVector, f: &TestFunction, s: &[f64]) -> f64 {
        let n = spec.particles;
        let hess = f.hessian(n);
        let grad = f.gradient(s);
        let a = |k, l| spec.a(k, l).unwrap();
        let mut v = 0.5 * a(1, 1) * hess[(0, 0)];
        for k in 1..n {
            v += (a(1, k) - a(1, k + 1)) * hess[(0, k)];
            for l in 1..n {
                v += 0.5 * linalg::a_tilde(spec, k, l).unwrap() * hess[(k, l)];
            }
        }
        let x = positions_of(s);
        let d = crate::sde::drift(spec, nu, &x).unwrap();
        v += d[0] * grad[0];
        for k in 1..n {
            v += (d[k - 1] - d[k]) * grad[k];
        }
        v
    }

    #[test]
    fn generator_matches_term_by_term_form() {
        let mut rng = testkit::rng(15);
        for _ in 0..20 {
            let spec = testkit::random_valid_spec(&mut rng, 5, 2);
            let nu = nu_for(&spec);
            let g = Generator::new(&spec, &nu).unwrap();
            let s: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            for f in [
                TestFunction::x1(),
                TestFunction::y(3),
                TestFunction::x1_squared(),
                TestFunction::Quadratic {
                    a: StateVar::Y(1),
                    b: StateVar::Y(2),
                },
                TestFunction::Quadratic {
                    a: StateVar::X1,
                    b: StateVar::Y(4),
                },
            ] {
                let a = g.apply(&f, &s).unwrap();
                let b = generator_by_terms(&spec, &nu, &f, &s);
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{f:?}: {a} vs {b}");
                let (mut scores, mut drift) = (vec![0.0; 4], vec![0.0; 5]);
                let x = positions_of(&s);
                let c = g
                    .apply_at_positions(
                        &f,
                        g.diffusion_part(&f),
                        &x,
                        &state_of(&x),
                        &mut scores,
                        &mut drift,
                    )
                    .unwrap();
                assert!((c - b).abs() < 1e-12 * (1.0 + b.abs()), "{f:?}: {c} vs {b}");
            }
        }
    }

    #[test]
    fn spacing_drift_one_step_oracle() {
        let spec = catalog::preset_oconnell_yor(2.0, 3).unwrap();
        let nu = nu_for(&spec);
        for f in [TestFunction::y(1), TestFunction::y(2)] {
            let r = test_generator_one_step(&spec, &nu, &f, &[0.0, 0.4, -0.3], 1e-4, 200_000, 3)
                .unwrap();
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn bad_test_function_is_rejected() {
        let spec = catalog::preset_oconnell_yor(2.0, 2).unwrap();
        let nu = nu_for(&spec);
        assert!(generator_apply(&spec, &nu, &TestFunction::y(2), &[0.0, 0.0]).is_err());
        assert!(generator_apply(&spec, &nu, &TestFunction::x1(), &[0.0]).is_err());
    }

    #[test]
    fn pinned_drift_includes_boundary_terms() {
        let mut spec = catalog::preset_oconnell_yor(2.0, 3).unwrap();
        spec.drifts = Drifts {
            values: vec![2.0, 1.0],
            k0: 2,
        };
        assert!((pinned_drift(&spec, &nu_for(&spec)).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn small_quasi_stationarity_run() {
        let spec = catalog::preset_beta_tasep(6.0, 1.0, 3).unwrap();
        let nu = nu_for(&spec);
        let cfg = SimConfig::new(2e-3, 0.5, 4000, 77);
        let e = crate::sde::simulate(&spec, &nu, &InitialCondition::QuasiStationary, &cfg).unwrap();
        let r = test_quasi_stationarity(&e, &spec, &nu).unwrap();
        assert!(r.pass, "{r}");
        assert!(r.entry("t=0.x_1.pinned").unwrap().pass);
    }

    #[test]
    fn free_quadratic_residual() {
        let spec = catalog::preset_free(1);
        let nu = nu_for(&spec);
        let cfg = SimConfig::new(0.01, 1.0, 20_000, 1);
        let r = test_martingale_residual(
            &spec,
            &nu,
            &TestFunction::x1_squared(),
            &cfg,
            &InitialCondition::Fixed(vec![0.0]),
        )
        .unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn consistency_requires_j_below_k() {
        let spec = catalog::preset_oconnell_yor(2.0, 3).unwrap();
        let nu = nu_for(&spec);
        let cfg = SimConfig::new(0.1, 1.0, 10, 0);
        assert!(test_consistency(&spec, &nu, 3, &cfg, Default::default()).is_err());
        assert!(test_consistency(&spec, &nu, 0, &cfg, Default::default()).is_err());
    }

    #[test]
    fn correlated_generator_theta() {
        let mut spec = catalog::preset_free(2);
        spec.covariance = Covariance::Dense(vec![
            vec![1.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.5],
            vec![0.0, 0.5, 1.0],
        ]);
        let g = Generator::new(&spec, &NuVector::zeros(2)).unwrap();
        // Var(X_1 − X_2) = 1 + 1 − 2·0.5
        assert!((g.theta()[(1, 1)] - 1.0).abs() < 1e-15);
        assert!((g.theta()[(0, 1)] - 0.5).abs() < 1e-15);
    }
}
