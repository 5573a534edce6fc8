//! Euler–Maruyama simulation of the finite system `X_1, ..., X_K`.
//!
//! Particle `k` moves with drift
//! `μ_k + Σ_{l=k}^{K−1} U'(X_l − X_{l+1}) r_{lk} + Σ_{l=K}^{k+d−1} ν_l r_{lk}`
//! and Brownian noise of covariance `A^{(K)}`, realized through a single
//! Cholesky factor. A proposed step that leaves the potential's support (or,
//! on the half-line, brings a spacing below `floor_eps`) is redrawn with the
//! step halved; the remainder of the grid interval is then covered at the
//! reduced size.
//!
//! Path `p` draws from the stream [`rng::path_rng`]`(seed, p)`, so an
//! ensemble is bitwise reproducible and independent of the thread count.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{self, CholeskyFactor, LinalgError, NuVector};
use crate::measure::{self, MeasureError, MeasureSet};
use crate::model::{ModelError, ModelSpec, Potential, Support};
use crate::rng::{path_rng, PathRng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("initial law: {0}")]
    Measure(#[from] MeasureError),
    #[error("spacing {k} = {spacing} lies outside the potential's support")]
    SupportViolation { k: usize, spacing: f64 },
    #[error("path {path} stuck at t = {time} after the maximal number of step halvings")]
    StepStuck { path: u64, time: f64 },
    #[error("{failed} of {total} paths failed, above the allowed fraction")]
    FailureRateExceeded { failed: usize, total: usize },
}

/// Largest tolerated fraction of failed paths.
pub const MAX_FAILURE_RATE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Requested record times; each is snapped to the nearest grid point.
    pub record_times: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_floor_eps"))]
    pub floor_eps: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_max_halvings"))]
    pub max_halvings: u32,
}

fn default_floor_eps() -> f64 {
    1e-8
}

fn default_max_halvings() -> u32 {
    30
}

impl SimConfig {
    /// Records at `0` and at the horizon.
    pub fn new(dt: f64, horizon: f64, paths: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            paths,
            seed,
            record_times: vec![0.0, horizon],
            floor_eps: default_floor_eps(),
            max_halvings: default_max_halvings(),
        }
    }

    pub fn with_record_times(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }

    /// Number of grid steps, `round(T / dt)`.
    pub fn steps(&self) -> usize {
        libm::round(self.horizon / self.dt) as usize
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.dt > self.horizon * (1.0 + 1e-12) {
            return bad(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.horizon
            ));
        }
        if self.paths == 0 {
            return bad("at least one path is required".into());
        }
        if !(self.floor_eps >= 0.0) {
            return bad("floor_eps must be non-negative".into());
        }
        for w in self.record_times.windows(2) {
            if !(w[0] <= w[1]) {
                return bad("record times must be sorted".into());
            }
        }
        for &t in &self.record_times {
            if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
                return bad(format!("record time {t} outside [0, {}]", self.horizon));
            }
        }
        Ok(())
    }

    /// Grid indices of the record times, nearest grid point, duplicates
    /// merged.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.steps();
        let mut steps: Vec<usize> = self
            .record_times
            .iter()
            .map(|&t| (libm::round(t / self.dt) as usize).min(n))
            .collect();
        steps.dedup();
        steps
    }
}

/// Source of the initial positions.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `X_1 = 0` and independent spacings from the spacing measures.
    QuasiStationary,
    /// The same positions for every path.
    Fixed(Vec<f64>),
    /// One position vector per path.
    PerPath(Vec<Vec<f64>>),
    /// Another source with every coordinate shifted by a constant.
    Shifted(Box<InitialCondition>, f64),
}

impl InitialCondition {
    fn needs_measures(&self) -> bool {
        match self {
            InitialCondition::QuasiStationary => true,
            InitialCondition::Shifted(inner, _) => inner.needs_measures(),
            _ => false,
        }
    }

    fn fill(&self, path: u64, measures: Option<&MeasureSet>, rng: &mut PathRng, out: &mut [f64]) {
        match self {
            InitialCondition::QuasiStationary => {
                measure::sample_initial_condition(measures.expect("measures built"), rng, out)
            }
            InitialCondition::Fixed(x) => out.copy_from_slice(x),
            InitialCondition::PerPath(xs) => out.copy_from_slice(&xs[path as usize]),
            InitialCondition::Shifted(inner, c) => {
                inner.fill(path, measures, rng, out);
                for v in out.iter_mut() {
                    *v += c;
                }
            }
        }
    }

    fn check(&self, particles: usize, paths: usize) -> Result<(), SimError> {
        let len = |x: &Vec<f64>| {
            if x.len() == particles {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!(
                    "initial positions have length {}, expected K = {particles}",
                    x.len()
                )))
            }
        };
        match self {
            InitialCondition::QuasiStationary => Ok(()),
            InitialCondition::Fixed(x) => len(x),
            InitialCondition::PerPath(xs) => {
                if xs.len() < paths {
                    return Err(SimError::InvalidConfig(format!(
                        "{} initial position vectors for {paths} paths",
                        xs.len()
                    )));
                }
                xs.iter().try_for_each(len)
            }
            InitialCondition::Shifted(inner, c) => {
                if !c.is_finite() {
                    return Err(SimError::InvalidConfig("shift must be finite".into()));
                }
                inner.check(particles, paths)
            }
        }
    }
}

/// The drift field of the `K`-particle system, with the interaction band
/// and the boundary constants `Σ_{l=K}^{k+d−1} ν_l r_{lk}` precomputed.
#[derive(Debug, Clone)]
pub struct DriftModel {
    potential: Potential,
    support: Support,
    /// `μ_k` plus the boundary term.
    constant: Vec<f64>,
    /// `(l − 1, r_{lk})` for the spacings `l < K` entering particle `k`.
    band: Vec<Vec<(usize, f64)>>,
    boundary: Vec<f64>,
}

impl DriftModel {
    pub fn new(spec: &ModelSpec, nu: &NuVector) -> Result<Self, SimError> {
        let k_max = spec.particles;
        let d = spec.range;
        let needed = k_max + d - 1;
        if nu.len() < needed {
            return Err(SimError::InvalidConfig(format!(
                "nu covers {} indices, the boundary drift needs {needed}",
                nu.len()
            )));
        }
        let mut constant = Vec::with_capacity(k_max);
        let mut band = Vec::with_capacity(k_max);
        let mut boundary = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let mut row = Vec::new();
            for l in k..(k + d).min(k_max) {
                let r = spec.r(l, k)?;
                if r != 0.0 {
                    row.push((l - 1, r));
                }
            }
            let mut b = 0.0;
            for l in k_max.max(k)..k + d {
                b += nu.get(l) * spec.r(l, k)?;
            }
            band.push(row);
            boundary.push(b);
            constant.push(spec.mu(k) + b);
        }
        Ok(Self {
            potential: spec.potential.clone(),
            support: spec.potential.support(),
            constant,
            band,
            boundary,
        })
    }

    /// The same field with every `ν` boundary term removed.
    pub fn without_boundary(mut self) -> Self {
        for (c, b) in self.constant.iter_mut().zip(self.boundary.iter_mut()) {
            *c -= *b;
            *b = 0.0;
        }
        self
    }

    pub fn particles(&self) -> usize {
        self.constant.len()
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// `Σ_{l=K}^{k+d−1} ν_l r_{lk}` for `k = 1..K`.
    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    /// Writes `U'(y_l)` for the spacings of `x` into `scores`.
    pub fn scores(&self, x: &[f64], scores: &mut [f64]) -> Result<(), SimError> {
        for (l, s) in scores.iter_mut().enumerate() {
            let y = x[l] - x[l + 1];
            if !self.support.contains(y) {
                return Err(SimError::SupportViolation {
                    k: l + 1,
                    spacing: y,
                });
            }
            *s = self.potential.derivative(y);
        }
        Ok(())
    }

    /// Drift given precomputed spacing scores.
    pub fn drift_from_scores(&self, scores: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut v = self.constant[k];
            for &(l, r) in &self.band[k] {
                v += r * scores[l];
            }
            *o = v;
        }
    }

    pub fn drift_into(
        &self,
        x: &[f64],
        scores: &mut [f64],
        out: &mut [f64],
    ) -> Result<(), SimError> {
        self.scores(x, scores)?;
        self.drift_from_scores(scores, out);
        Ok(())
    }
}

/// The drift vector of `spec` at `x`.
pub fn drift(spec: &ModelSpec, nu: &NuVector, x: &[f64]) -> Result<Vec<f64>, SimError> {
    if x.len() != spec.particles {
        return Err(SimError::InvalidConfig(format!(
            "state has length {}, expected K = {}",
            x.len(),
            spec.particles
        )));
    }
    let model = DriftModel::new(spec, nu)?;
    let mut scores = vec![0.0; x.len().saturating_sub(1)];
    let mut out = vec![0.0; x.len()];
    model.drift_into(x, &mut scores, &mut out)?;
    Ok(out)
}

/// Receives a path's state at every grid step `0..=steps`.
pub trait PathObserver {
    type Output;
    fn observe(&mut self, step: usize, x: &[f64]);
    fn finish(self) -> Self::Output;
}

/// Why a path was dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathFailure {
    pub path: u64,
    pub time: f64,
}

/// Step-control counters, summed over the ensemble.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepStats {
    /// Rejected proposals.
    pub rejections: u64,
    /// Grid intervals that needed at least one halving.
    pub halved_steps: u64,
}

impl StepStats {
    fn add(&mut self, o: StepStats) {
        self.rejections += o.rejections;
        self.halved_steps += o.halved_steps;
    }
}

/// Outputs of the surviving paths, in path order.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub paths: Vec<u64>,
    pub outputs: Vec<T>,
    pub failures: Vec<PathFailure>,
    pub stats: StepStats,
}

/// A configured simulation: drift field, noise factor and time grid.
#[derive(Debug, Clone)]
pub struct Simulator {
    drift: DriftModel,
    noise: CholeskyFactor,
    measures: Option<MeasureSet>,
    spec: ModelSpec,
    nu: NuVector,
    cfg: SimConfig,
}

impl Simulator {
    pub fn new(spec: &ModelSpec, nu: &NuVector, cfg: &SimConfig) -> Result<Self, SimError> {
        spec.check_structure()?;
        cfg.check()?;
        Ok(Self {
            drift: DriftModel::new(spec, nu)?,
            noise: linalg::cholesky(spec)?,
            measures: None,
            spec: spec.clone(),
            nu: nu.clone(),
            cfg: cfg.clone(),
        })
    }

    /// Drops the `ν` boundary terms from the drift.
    pub fn without_boundary(mut self) -> Self {
        self.drift = self.drift.without_boundary();
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn drift_model(&self) -> &DriftModel {
        &self.drift
    }

    fn prepare(&mut self, init: &InitialCondition) -> Result<(), SimError> {
        init.check(self.spec.particles, self.cfg.paths)?;
        if init.needs_measures() && self.measures.is_none() {
            self.measures = Some(MeasureSet::for_spec(&self.spec, &self.nu)?);
        }
        if !init.needs_measures() {
            // Deterministic starts must lie in the support.
            let mut probe = vec![0.0; self.spec.particles];
            let mut rng = path_rng(self.cfg.seed, 0);
            let count = match init {
                InitialCondition::PerPath(_) => self.cfg.paths,
                _ => 1,
            };
            let mut scores = vec![0.0; self.spec.particles.saturating_sub(1)];
            for p in 0..count {
                init.fill(p as u64, None, &mut rng, &mut probe);
                self.drift.scores(&probe, &mut scores)?;
            }
        }
        Ok(())
    }

    fn accept(&self, x: &[f64]) -> bool {
        match self.drift.support {
            Support::FullLine => x.windows(2).all(|w| (w[0] - w[1]).is_finite()),
            Support::PositiveHalfLine => x.windows(2).all(|w| {
                let y = w[0] - w[1];
                y.is_finite() && y >= self.cfg.floor_eps
            }),
        }
    }

    fn run_path<O: PathObserver>(
        &self,
        path: u64,
        init: &InitialCondition,
        mut observer: O,
    ) -> (Result<O::Output, PathFailure>, StepStats) {
        let k = self.spec.particles;
        let mut rng = path_rng(self.cfg.seed, path);
        let mut x = vec![0.0; k];
        init.fill(path, self.measures.as_ref(), &mut rng, &mut x);
        // The drift sees only spacings, so integrate in the frame of X_1(0);
        // a constant shift of the start then changes nothing but `origin`.
        let origin = x[0];
        for v in x.iter_mut() {
            *v -= origin;
        }
        let mut shown = vec![0.0; k];
        let show = |x: &[f64], shown: &mut [f64]| {
            for (s, v) in shown.iter_mut().zip(x) {
                *s = v + origin;
            }
        };
        let mut proposal = vec![0.0; k];
        let mut xi = vec![0.0; k];
        let mut noise = vec![0.0; k];
        let mut b = vec![0.0; k];
        let mut scores = vec![0.0; k.saturating_sub(1)];
        let mut stats = StepStats::default();
        let dt = self.cfg.dt;
        let steps = self.cfg.steps();

        show(&x, &mut shown);
        observer.observe(0, &shown);
        for step in 0..steps {
            let mut remaining = dt;
            let mut h = dt;
            let mut halvings = 0u32;
            let mut halved = false;
            while remaining > 0.0 {
                h = h.min(remaining);
                if self.drift.drift_into(&x, &mut scores, &mut b).is_err() {
                    let time = step as f64 * dt + (dt - remaining);
                    return (Err(PathFailure { path, time }), stats);
                }
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                self.noise.apply(&xi, &mut noise);
                let sq = libm::sqrt(h);
                for i in 0..k {
                    proposal[i] = x[i] + b[i] * h + sq * noise[i];
                }
                if self.accept(&proposal) {
                    core::mem::swap(&mut x, &mut proposal);
                    remaining -= h;
                    halvings = 0;
                    if remaining <= dt * 1e-12 {
                        remaining = 0.0;
                    }
                } else {
                    stats.rejections += 1;
                    halved = true;
                    halvings += 1;
                    if halvings > self.cfg.max_halvings {
                        let time = step as f64 * dt + (dt - remaining);
                        return (Err(PathFailure { path, time }), stats);
                    }
                    h *= 0.5;
                }
            }
            if halved {
                stats.halved_steps += 1;
            }
            show(&x, &mut shown);
            observer.observe(step + 1, &shown);
        }
        (Ok(observer.finish()), stats)
    }

    /// Runs every path through an observer built by `make(path)`.
    pub fn run_with<O, F>(
        &mut self,
        init: &InitialCondition,
        make: F,
    ) -> Result<RunOutcome<O::Output>, SimError>
    where
        O: PathObserver,
        O::Output: Send,
        F: Fn(u64) -> O + Sync,
    {
        self.prepare(init)?;
        let this = &*self;
        let one = |p: u64| this.run_path(p, init, make(p));
        let n = self.cfg.paths as u64;

        #[cfg(feature = "parallel")]
        let results: Vec<_> = {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<_> = (0..n).map(one).collect();

        let mut outcome = RunOutcome {
            paths: Vec::with_capacity(results.len()),
            outputs: Vec::with_capacity(results.len()),
            failures: Vec::new(),
            stats: StepStats::default(),
        };
        for (p, (res, stats)) in results.into_iter().enumerate() {
            outcome.stats.add(stats);
            match res {
                Ok(o) => {
                    outcome.paths.push(p as u64);
                    outcome.outputs.push(o);
                }
                Err(f) => outcome.failures.push(f),
            }
        }
        let failed = outcome.failures.len();
        if failed as f64 > MAX_FAILURE_RATE * n as f64 {
            return Err(SimError::FailureRateExceeded {
                failed,
                total: n as usize,
            });
        }
        Ok(outcome)
    }

    /// Runs the ensemble, keeping positions at the record times.
    pub fn run(&mut self, init: &InitialCondition) -> Result<PathEnsemble, SimError> {
        let record_steps = self.cfg.record_steps();
        let k = self.spec.particles;
        let outcome = self.run_with(init, |_| Snapshots {
            steps: &record_steps,
            next: 0,
            data: Vec::with_capacity(record_steps.len() * k),
        })?;
        let n = outcome.outputs.len();
        let mut data = vec![Vec::with_capacity(n * k); record_steps.len()];
        for snap in &outcome.outputs {
            for (r, rec) in data.iter_mut().enumerate() {
                rec.extend_from_slice(&snap[r * k..(r + 1) * k]);
            }
        }
        Ok(PathEnsemble {
            particles: k,
            times: record_steps
                .iter()
                .map(|&s| s as f64 * self.cfg.dt)
                .collect(),
            data,
            paths: outcome.paths,
            failures: outcome.failures,
            stats: outcome.stats,
            spec_fingerprint: self.spec.fingerprint(),
            config: self.cfg.clone(),
        })
    }
}

struct Snapshots<'a> {
    steps: &'a [usize],
    next: usize,
    data: Vec<f64>,
}

impl PathObserver for Snapshots<'_> {
    type Output = Vec<f64>;

    fn observe(&mut self, step: usize, x: &[f64]) {
        if self.steps.get(self.next) == Some(&step) {
            self.data.extend_from_slice(x);
            self.next += 1;
        }
    }

    fn finish(self) -> Vec<f64> {
        self.data
    }
}

/// Positions of the surviving paths at the (snapped) record times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub particles: usize,
    pub times: Vec<f64>,
    /// `data[r]` holds `paths.len() × K` positions, row-major by path.
    pub data: Vec<Vec<f64>>,
    pub paths: Vec<u64>,
    pub failures: Vec<PathFailure>,
    pub stats: StepStats,
    pub spec_fingerprint: u64,
    pub config: SimConfig,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn state(&self, record: usize, row: usize) -> &[f64] {
        let k = self.particles;
        &self.data[record][row * k..(row + 1) * k]
    }

    /// `X_k` (1-based) across paths at a record.
    pub fn coordinate(&self, record: usize, k: usize) -> Vec<f64> {
        self.data[record]
            .chunks_exact(self.particles)
            .map(|x| x[k - 1])
            .collect()
    }

    /// `Y_k = X_k − X_{k+1}` (1-based) across paths at a record.
    pub fn spacing(&self, record: usize, k: usize) -> Vec<f64> {
        self.data[record]
            .chunks_exact(self.particles)
            .map(|x| x[k - 1] - x[k])
            .collect()
    }

    /// Restriction to the first `j` coordinates.
    pub fn project(&self, j: usize) -> PathEnsemble {
        let k = self.particles;
        PathEnsemble {
            particles: j,
            data: self
                .data
                .iter()
                .map(|rec| {
                    rec.chunks_exact(k)
                        .flat_map(|x| x[..j].iter().copied())
                        .collect()
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Simulates `cfg.paths` paths of `spec` from `init`.
pub fn simulate(
    spec: &ModelSpec,
    nu: &NuVector,
    init: &InitialCondition,
    cfg: &SimConfig,
) -> Result<PathEnsemble, SimError> {
    Simulator::new(spec, nu, cfg)?.run(init)
}
