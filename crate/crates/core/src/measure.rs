//! Spacing Gibbs measures `Z_k⁻¹ exp(2U(z) − 2ν_k z) dz`.
//!
//! [`build_measure`] locates the mass by tail expansion, computes the
//! partition function, moments and Fisher information by adaptive Simpson
//! quadrature, and tabulates the CDF on an adaptively bisected grid whose
//! piecewise-linear interpolant is accurate to `1e−6` at cell midpoints.
//! Sampling inverts that table.

use alloc::vec::Vec;
use core::fmt;

use rand::distr::Open01;
use rand::Rng;
use thiserror::Error;

use crate::linalg::NuVector;
use crate::model::{ModelSpec, Potential, Support};
use crate::quad::{self, Layout, QuadError};

/// Which integral a measure error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Integral {
    Mass,
    Mean,
    Variance,
    Fisher,
    Score,
    ScoreSquare,
}

impl fmt::Display for Integral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integral::Mass => "mass",
            Integral::Mean => "mean",
            Integral::Variance => "variance",
            Integral::Fisher => "fisher",
            Integral::Score => "score",
            Integral::ScoreSquare => "score_square",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("{which} integral diverges in a tail")]
    DivergentIntegral { which: Integral },
    #[error("{which} integral has a non-integrable singularity at the support endpoint")]
    NonIntegrableSingularity { which: Integral },
    #[error("log-density is not finite anywhere on the search grid")]
    NoFiniteDensity,
    #[error("nu must be finite")]
    InvalidNu,
    #[error("CDF table failed to reach the interpolation tolerance")]
    Tabulation,
}

impl MeasureError {
    pub fn integral(&self) -> Option<Integral> {
        match self {
            MeasureError::DivergentIntegral { which }
            | MeasureError::NonIntegrableSingularity { which } => Some(*which),
            _ => None,
        }
    }
}

/// Relative tail mass below which the window is truncated.
pub const TAIL_THRESHOLD: f64 = 1e-12;
/// Target max error of the interpolated CDF.
pub const CDF_TOLERANCE: f64 = 1e-6;
const MIN_CELLS: usize = 8192;
const MAX_CELLS: usize = 1 << 22;

/// Tabulated CDF: strictly increasing nodes `(z_i, F_i)` with `F_0 = 0` and
/// `F_last = 1`, plus a guide table for constant expected-time inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    z: Vec<f64>,
    u: Vec<f64>,
    guide: Vec<u32>,
}

impl QuantileTable {
    fn new(z: Vec<f64>, u: Vec<f64>) -> Self {
        let slots = u.len().max(1);
        let mut guide = Vec::with_capacity(slots);
        let mut cell = 0usize;
        for j in 0..slots {
            let target = j as f64 / slots as f64;
            while cell + 2 < u.len() && u[cell + 1] <= target {
                cell += 1;
            }
            guide.push(cell as u32);
        }
        Self { z, u, guide }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.u.iter().copied().zip(self.z.iter().copied())
    }

    pub fn inverse(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let slot = ((u * self.guide.len() as f64) as usize).min(self.guide.len() - 1);
        let mut i = self.guide[slot] as usize;
        let last = self.u.len() - 2;
        while i < last && self.u[i + 1] <= u {
            i += 1;
        }
        let (u0, u1) = (self.u[i], self.u[i + 1]);
        let t = (u - u0) / (u1 - u0);
        self.z[i] + t * (self.z[i + 1] - self.z[i])
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z <= self.z[0] {
            return 0.0;
        }
        if z >= self.z[self.z.len() - 1] {
            return 1.0;
        }
        let i = self.z.partition_point(|&node| node <= z) - 1;
        let t = (z - self.z[i]) / (self.z[i + 1] - self.z[i]);
        self.u[i] + t * (self.u[i + 1] - self.u[i])
    }
}

/// One spacing law with its quadrature-derived statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacingMeasure {
    /// Spacing index `k` (0 when built standalone).
    pub index: usize,
    pub nu: f64,
    pub potential: Potential,
    /// `max_z (2U(z) − 2νz)` on the search grid; all integrals below are
    /// computed for the kernel rescaled by `exp(−log_peak)`.
    pub log_peak: f64,
    /// `Z = ∫ exp(2U − 2νz) dz`.
    pub partition: f64,
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
    /// `∫ Z⁻¹ exp(2U − 2νz) (2U' − 2ν)² dz`.
    pub fisher: f64,
    /// `E[U'(Y)]`.
    pub mean_score: f64,
    /// `E[U'(Y)²]`.
    pub mean_score_square: f64,
    /// `∫ exp(2U − 2νz) U'² dz`, the unnormalized form of the Fisher
    /// finiteness condition.
    pub score_square_integral: f64,
    /// `[z_lo, z_hi]` holding all but a `1e−12` fraction of the mass.
    pub window: (f64, f64),
    /// `|grid mass / quadrature mass − 1|`.
    pub normalization_error: f64,
    /// Max midpoint error of the interpolated CDF.
    pub interpolation_error: f64,
    scaled_partition: f64,
    table: QuantileTable,
}

impl SpacingMeasure {
    fn log_kernel(&self, z: f64) -> f64 {
        2.0 * self.potential.value(z) - 2.0 * self.nu * z
    }

    fn scaled_kernel(&self, z: f64) -> f64 {
        scaled_kernel(&self.potential, self.nu, self.log_peak, z)
    }

    pub fn support(&self) -> Support {
        self.potential.support()
    }

    pub fn density(&self, z: f64) -> f64 {
        if !self.support().contains(z) {
            return 0.0;
        }
        libm::exp(self.log_kernel(z) - self.log_peak) / self.scaled_partition
    }

    /// Tabulated CDF (piecewise linear between grid nodes).
    pub fn cdf(&self, z: f64) -> f64 {
        self.table.cdf(z)
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        self.table.inverse(u)
    }

    pub fn table(&self) -> &QuantileTable {
        &self.table
    }

    /// Draws one spacing by inverting the tabulated CDF at `u ~ U(0, 1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.inverse_cdf(u)
    }

    /// Fisher information recomputed from the score moments,
    /// `4 (E[U'²] − 2ν E[U'] + ν²)`: the expanded form of
    /// `4 ∫ Z⁻¹ g (U' − ν)²` built from separately integrated pieces.
    pub fn fisher_from_score_moments(&self) -> f64 {
        4.0 * (self.mean_score_square - 2.0 * self.nu * self.mean_score + self.nu * self.nu)
    }

    /// CDF at each point of `sorted` (ascending), integrated directly from
    /// the density between consecutive points, independently of the table.
    pub fn quadrature_cdf_sorted(&self, sorted: &[f64]) -> Vec<f64> {
        let f = |z: f64| self.scaled_kernel(z);
        let mut out = Vec::with_capacity(sorted.len());
        let (lo, _) = self.window;
        let mut acc = 0.0;
        let mut prev = lo;
        for &x in sorted {
            if x > prev {
                acc += self.mass_between(&f, prev, x);
                prev = x;
            }
            out.push((acc / self.scaled_partition).min(1.0));
        }
        out
    }

    fn mass_between<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        if a == 0.0 && self.support() == Support::PositiveHalfLine {
            return graded_from_zero(f, b, self.scaled_partition);
        }
        quad::adaptive_simpson(f, a, b, 1e-12, 1e-15 * self.scaled_partition)
            .map(|p| p.value)
            .unwrap_or(0.0)
    }
}

fn scaled_kernel(potential: &Potential, nu: f64, log_peak: f64, z: f64) -> f64 {
    if !potential.support().contains(z) {
        return 0.0;
    }
    let h = 2.0 * potential.value(z) - 2.0 * nu * z;
    if h == f64::NEG_INFINITY {
        0.0
    } else {
        libm::exp(h - log_peak)
    }
}

/// `∫_0^b f` via graded pieces `[b/2^{j+1}, b/2^j]`.
fn graded_from_zero<F: Fn(f64) -> f64>(f: &F, b: f64, scale: f64) -> f64 {
    let mut acc = 0.0;
    let mut right = b;
    for _ in 0..1100 {
        let piece = quad::adaptive_simpson(f, 0.5 * right, right, 1e-12, 1e-15 * scale)
            .map(|p| p.value)
            .unwrap_or(0.0);
        acc += piece;
        right *= 0.5;
        if piece.abs() <= 1e-16 * scale.max(acc.abs()) && right < 1e-3 * b {
            break;
        }
    }
    acc
}

/// Mode of the log-kernel over a geometric search grid, and a width scale.
fn locate(potential: &Potential, nu: f64) -> Result<(f64, f64, f64), MeasureError> {
    let h = |z: f64| 2.0 * potential.value(z) - 2.0 * nu * z;
    let support = potential.support();
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |z: f64| {
        let v = h(z);
        if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
            best = Some((z, v));
        }
    };
    for j in -160..=124 {
        let z = libm::exp2(j as f64 / 4.0);
        consider(z);
        if support == Support::FullLine {
            consider(-z);
        }
    }
    if support == Support::FullLine {
        consider(0.0);
    }
    let (mut center, peak) = best.ok_or(MeasureError::NoFiniteDensity)?;

    // Polish the mode by golden-section search between grid neighbours.
    let (mut a, mut b) = match support {
        Support::FullLine => (
            center - center.abs().max(1e-12),
            center + center.abs().max(1e-12),
        ),
        Support::PositiveHalfLine => (center * 0.8, center * 1.25),
    };
    let phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    for _ in 0..80 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if h(x1) >= h(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let polished = 0.5 * (a + b);
    let peak = if h(polished).is_finite() && h(polished) > peak {
        center = polished;
        h(polished)
    } else {
        peak
    };

    // Width: smallest 2^j at which the log-kernel has dropped by 2 on either side.
    let mut width = libm::exp2(-30.0);
    while width < 1e15 {
        let right = h(center + width);
        let left = match support {
            Support::FullLine => h(center - width),
            Support::PositiveHalfLine => f64::NEG_INFINITY,
        };
        if !(right > peak - 2.0) || (support == Support::FullLine && !(left > peak - 2.0)) {
            break;
        }
        width *= 2.0;
    }

    // Boundary maximum on the half-line: center the split at the mass scale.
    if support == Support::PositiveHalfLine && center < 1e-6 {
        center = width.max(1e-300);
    }
    Ok((center, width, peak))
}

fn map_quad(which: Integral) -> impl Fn(QuadError) -> MeasureError {
    move |e| match e {
        QuadError::Divergent => MeasureError::DivergentIntegral { which },
        QuadError::Singular => MeasureError::NonIntegrableSingularity { which },
    }
}

/// Builds the spacing measure `Z⁻¹ exp(2U(z) − 2νz)` on the potential's
/// support.
pub fn build_measure(potential: &Potential, nu: f64) -> Result<SpacingMeasure, MeasureError> {
    if !nu.is_finite() {
        return Err(MeasureError::InvalidNu);
    }
    let support = potential.support();
    let (center, width, log_peak) = locate(potential, nu)?;
    let layout = Layout {
        support,
        center,
        width,
    };
    let g = |z: f64| scaled_kernel(potential, nu, log_peak, z);
    let mass = quad::integrate(&g, &layout, TAIL_THRESHOLD).map_err(map_quad(Integral::Mass))?;
    let zs = mass.value;
    if !(zs > 0.0) {
        return Err(MeasureError::NoFiniteDensity);
    }
    let integrate = |which: Integral, m: &dyn Fn(f64) -> f64| -> Result<f64, MeasureError> {
        let f = |z: f64| {
            let gz = g(z);
            if gz == 0.0 {
                0.0
            } else {
                gz * m(z)
            }
        };
        quad::integrate(&f, &layout, TAIL_THRESHOLD)
            .map(|r| r.value / zs)
            .map_err(map_quad(which))
    };

    let mean = integrate(Integral::Mean, &|z| z)?;
    let variance = integrate(Integral::Variance, &|z| (z - mean) * (z - mean))?;
    let second_moment = variance + mean * mean;
    let fisher = integrate(Integral::Fisher, &|z| {
        let s = 2.0 * potential.derivative(z) - 2.0 * nu;
        s * s
    })?;
    let mean_score_square = integrate(Integral::ScoreSquare, &|z| {
        let s = potential.derivative(z);
        s * s
    })?;
    let mean_score = integrate(Integral::Score, &|z| potential.derivative(z))?;

    let partition = libm::exp(log_peak) * zs;
    let (lo, hi) = trim_window(&g, support, mass.lo, mass.hi, zs);
    let (table, normalization_error, interpolation_error) = tabulate(&g, support, lo, hi, zs)?;

    Ok(SpacingMeasure {
        index: 0,
        nu,
        potential: potential.clone(),
        log_peak,
        partition,
        mean,
        variance,
        second_moment,
        fisher,
        mean_score,
        mean_score_square,
        score_square_integral: partition * mean_score_square,
        window: (lo, hi),
        normalization_error,
        interpolation_error,
        scaled_partition: zs,
        table,
    })
}

/// Mass of the halves of `[a, b]` by Simpson's rule.
fn half_masses<F: Fn(f64) -> f64>(g: &F, a: f64, b: f64) -> (f64, f64) {
    let q = 0.25 * (b - a);
    let f = [g(a), g(a + q), g(a + 2.0 * q), g(a + 3.0 * q), g(b)];
    (
        q / 3.0 * (f[0] + 4.0 * f[1] + f[2]),
        q / 3.0 * (f[2] + 4.0 * f[3] + f[4]),
    )
}

/// Relative tail mass cut from each end of the tabulation window.
const TABLE_TAIL: f64 = 1e-14;

/// Shrinks the quadrature window to the `TABLE_TAIL` quantiles on a coarse
/// grid, so table nodes are not spent where the CDF rounds to 0 or 1.
fn trim_window<F: Fn(f64) -> f64>(
    g: &F,
    support: Support,
    lo: f64,
    hi: f64,
    zs: f64,
) -> (f64, f64) {
    const CELLS: usize = 4096;
    let h = (hi - lo) / CELLS as f64;
    let edge = |i: usize| if i == CELLS { hi } else { lo + h * i as f64 };
    let masses: Vec<f64> = (0..CELLS)
        .map(|i| {
            if i == 0 && support == Support::PositiveHalfLine && lo == 0.0 {
                graded_from_zero(g, edge(1), zs)
            } else {
                let (l, r) = half_masses(g, edge(i), edge(i + 1));
                l + r
            }
        })
        .collect();
    let cut = TABLE_TAIL * zs;
    let mut first = 0;
    let mut acc = 0.0;
    while first + 1 < CELLS && acc + masses[first] <= cut {
        acc += masses[first];
        first += 1;
    }
    let mut last = CELLS;
    let mut acc = 0.0;
    while last > first + 1 && acc + masses[last - 1] <= cut {
        acc += masses[last - 1];
        last -= 1;
    }
    (edge(first), edge(last))
}

/// Builds the CDF table on `[lo, hi]`. Starts from `MIN_CELLS` uniform
/// cells (with the first cell replaced by geometrically shrinking cells
/// toward a half-line endpoint at 0) and bisects any cell whose midpoint
/// interpolation error `|m_left − m_cell/2| / Z` exceeds `CDF_TOLERANCE`.
/// Returns the table, the normalization error against `zs` and the final
/// max midpoint error.
fn tabulate<F: Fn(f64) -> f64>(
    g: &F,
    support: Support,
    lo: f64,
    hi: f64,
    zs: f64,
) -> Result<(QuantileTable, f64, f64), MeasureError> {
    let h = (hi - lo) / MIN_CELLS as f64;
    let mut edges: Vec<f64> = (0..=MIN_CELLS)
        .map(|i| {
            if i == MIN_CELLS {
                hi
            } else {
                lo + h * i as f64
            }
        })
        .collect();
    // Mass of [0, edges[0]] on the half-line, kept as one unsplit cell.
    let mut head = 0.0;
    if support == Support::PositiveHalfLine && lo == 0.0 {
        let mut inner = Vec::new();
        let mut a = 0.5 * h;
        loop {
            head = graded_from_zero(g, a, zs);
            if head <= 0.1 * CDF_TOLERANCE * zs || inner.len() > 1000 {
                break;
            }
            inner.push(a);
            a *= 0.5;
        }
        inner.push(a);
        inner.reverse();
        edges.splice(0..1, inner);
    }

    // Depth-first bisection keeps the cells in order.
    let mut z = Vec::with_capacity(edges.len() + 2);
    let mut mass = Vec::with_capacity(edges.len() + 2);
    let mut worst = 0.0f64;
    let tol = CDF_TOLERANCE * zs;
    if head > 0.0 {
        z.push(0.0);
        mass.push(0.0);
        worst = worst.max(0.5 * head / zs);
    }
    z.push(edges[0]);
    mass.push(head);
    let mut stack: Vec<(f64, f64, u32)> = Vec::new();
    for pair in edges.windows(2) {
        stack.push((pair[0], pair[1], 0));
        while let Some((a, b, depth)) = stack.pop() {
            let (left, right) = half_masses(g, a, b);
            let err = libm::fabs(left - right) * 0.5;
            if err > tol && depth < 40 {
                let m = 0.5 * (a + b);
                stack.push((m, b, depth + 1));
                stack.push((a, m, depth + 1));
                continue;
            }
            worst = worst.max(err / zs);
            z.push(b);
            mass.push(left + right);
            if z.len() > MAX_CELLS {
                return Err(MeasureError::Tabulation);
            }
        }
    }

    let total: f64 = mass.iter().sum();
    let norm_err = libm::fabs(total / zs - 1.0);
    if !(worst < CDF_TOLERANCE) || !(norm_err < 1e-8) {
        return Err(MeasureError::Tabulation);
    }
    let mut nodes_z = Vec::with_capacity(z.len());
    let mut nodes_u = Vec::with_capacity(z.len());
    let mut acc = 0.0;
    for (i, (&zi, &mi)) in z.iter().zip(&mass).enumerate() {
        acc += mi;
        let f = if i + 1 == z.len() {
            1.0
        } else {
            (acc / total).min(1.0)
        };
        match nodes_u.last() {
            Some(&prev) if f <= prev => {
                if prev == 0.0 {
                    // Leading zero-mass cells: move the left node up.
                    *nodes_z.last_mut().expect("non-empty") = zi;
                }
            }
            _ => {
                nodes_z.push(zi);
                nodes_u.push(f);
            }
        }
    }
    if nodes_u.len() < 2 || nodes_u[0] != 0.0 {
        return Err(MeasureError::Tabulation);
    }
    Ok((QuantileTable::new(nodes_z, nodes_u), norm_err, worst))
}

/// Measures for spacing indices `1..=count`, sharing work between indices
/// whose `ν_k` coincide.
#[derive(Debug, Clone)]
pub struct MeasureSet {
    measures: Vec<SpacingMeasure>,
}

impl MeasureSet {
    pub fn build(potential: &Potential, nu: &NuVector, count: usize) -> Result<Self, MeasureError> {
        let mut measures: Vec<SpacingMeasure> = Vec::with_capacity(count);
        for k in 1..=count {
            let nu_k = nu.get(k);
            let mut m = match measures.iter().find(|m| m.nu.to_bits() == nu_k.to_bits()) {
                Some(m) => m.clone(),
                None => build_measure(potential, nu_k)?,
            };
            m.index = k;
            measures.push(m);
        }
        Ok(Self { measures })
    }

    /// Measures for the `K − 1` spacings of `spec`.
    pub fn for_spec(spec: &ModelSpec, nu: &NuVector) -> Result<Self, MeasureError> {
        Self::build(&spec.potential, nu, spec.particles.saturating_sub(1))
    }

    pub fn get(&self, k: usize) -> &SpacingMeasure {
        &self.measures[k - 1]
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SpacingMeasure> {
        self.measures.iter()
    }
}

/// `X_1 = 0`, `X_{k+1} = X_k − Y_k` with independent `Y_k` drawn from the
/// `k`-th spacing measure. Writes `K = measures.len() + 1` positions.
pub fn sample_initial_condition<R: Rng + ?Sized>(
    measures: &MeasureSet,
    rng: &mut R,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), measures.len() + 1);
    out[0] = 0.0;
    for (k, m) in measures.iter().enumerate() {
        out[k + 1] = out[k] - m.sample(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::expr::Expression;
    use crate::testkit;
    use alloc::vec;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn oconnell_yor_partition_and_moments() {
        // exp(−2z − e^{−z}): Z = Γ(2) = 1, mean −ψ(2) = γ − 1, var ψ'(2) = π²/6 − 1.
        let m = build_measure(&Potential::OConnellYor { mu: 2.0 }, 0.0).unwrap();
        assert!(rel(m.partition, 1.0) < 1e-8, "{}", m.partition);
        assert!((m.mean - (EULER_GAMMA - 1.0)).abs() < 1e-8, "{}", m.mean);
        assert!((m.variance - 0.644_934_066_848_226_4).abs() < 1e-8);
    }

    #[test]
    fn beta_tasep_partition() {
        // z^{β/2−1} e^{−μz}, β = 6, μ = 1: Z = Γ(3) = 2, Gamma(3, 1) moments.
        let m = build_measure(&Potential::BetaTasep { beta: 6.0, mu: 1.0 }, 0.0).unwrap();
        assert!(rel(m.partition, 2.0) < 1e-8, "{}", m.partition);
        assert!((m.mean - 3.0).abs() < 1e-8);
        assert!((m.variance - 3.0).abs() < 1e-8);
        assert_eq!(m.window.0, 0.0);
    }

    #[test]
    fn gaussian_partition() {
        let p = Potential::Custom {
            expr: Expression::parse("-z^2/2").unwrap(),
            support: Support::FullLine,
        };
        let m = build_measure(&p, 0.0).unwrap();
        assert!((m.partition - 1.772_453_850_905_516).abs() < 1e-8);
        assert!(m.mean.abs() < 1e-10);
        assert!((m.variance - 0.5).abs() < 1e-9);
        // Fisher information of N(0, 1/2) is 2.
        assert!((m.fisher - 2.0).abs() < 1e-8);
    }

    #[test]
    fn nonzero_nu_tilts_the_law() {
        // β = 6 preset with ν = 0.5: z² e^{−2z}, i.e. Gamma(3, 2).
        let m = build_measure(&Potential::BetaTasep { beta: 6.0, mu: 1.0 }, 0.5).unwrap();
        assert!(rel(m.partition, 2.0 / 8.0) < 1e-8);
        assert!((m.mean - 1.5).abs() < 1e-8);
    }

    #[test]
    fn fisher_forms_agree() {
        let cases = [
            (Potential::BetaTasep { beta: 6.0, mu: 1.0 }, 0.0),
            (Potential::BetaTasep { beta: 4.5, mu: 2.0 }, 0.0),
            (Potential::OConnellYor { mu: 1.0 }, 0.0),
            (Potential::OConnellYor { mu: 2.0 }, 1.0),
        ];
        for (p, nu) in cases {
            let m = build_measure(&p, nu).unwrap();
            let alt = m.fisher_from_score_moments();
            assert!(
                (m.fisher - alt).abs() <= 1e-8 * m.fisher.max(1.0),
                "{p:?}: {} vs {alt}",
                m.fisher
            );
            // E[U'] = ν by integration by parts.
            assert!((m.mean_score - nu).abs() < 1e-8, "{p:?}: {}", m.mean_score);
        }
        // Gamma(3, 1): Fisher information of the log-density (2/z − 1)² is 1.
        let m = build_measure(&Potential::BetaTasep { beta: 6.0, mu: 1.0 }, 0.0).unwrap();
        assert!((m.fisher - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fisher_divergence_at_the_origin() {
        for beta in [3.0, 3.5, 4.0] {
            let err = build_measure(&Potential::BetaTasep { beta, mu: 1.0 }, 0.0).unwrap_err();
            assert_eq!(
                err,
                MeasureError::NonIntegrableSingularity {
                    which: Integral::Fisher
                },
                "beta {beta}"
            );
        }
        assert!(build_measure(&Potential::BetaTasep { beta: 4.5, mu: 1.0 }, 0.0).is_ok());
    }

    #[test]
    fn flat_potential_diverges() {
        let p = Potential::Custom {
            expr: Expression::parse("0").unwrap(),
            support: Support::FullLine,
        };
        assert_eq!(
            build_measure(&p, 0.0).unwrap_err(),
            MeasureError::DivergentIntegral {
                which: Integral::Mass
            }
        );
    }

    #[test]
    fn table_invariants() {
        for p in [
            Potential::BetaTasep { beta: 6.0, mu: 1.0 },
            Potential::OConnellYor { mu: 1.0 },
            Potential::BetaTasep { beta: 3.0, mu: 1.0 }.clone(),
        ] {
            let Ok(m) = build_measure(&p, 0.0) else {
                continue;
            };
            assert!(m.table().len() >= 4096);
            assert!(m.normalization_error < 1e-8);
            assert!(m.interpolation_error < CDF_TOLERANCE);
            let nodes: Vec<_> = m.table().nodes().collect();
            for w in nodes.windows(2) {
                assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
            }
            assert!(m.variance >= 0.0);
        }
    }

    #[test]
    fn singular_but_integrable_density_tabulates() {
        // β = 3: density z^{1/2} e^{−z} is bounded, but take β = 1.5 with a
        // custom half-line potential: z^{−1/4} e^{−z} has an integrable pole.
        let p = Potential::Custom {
            expr: Expression::parse("-0.125 * log(z) - 0.5 * z").unwrap(),
            support: Support::PositiveHalfLine,
        };
        let m = build_measure(&p, 0.0);
        // The Fisher integral diverges (z^{−9/4} at 0) ...
        assert!(matches!(
            m,
            Err(MeasureError::NonIntegrableSingularity {
                which: Integral::Fisher
            })
        ));
        // ... but the mass integral and table are fine.
        let g = |z: f64| libm::pow(z, -0.25) * libm::exp(-z);
        let layout = Layout {
            support: Support::PositiveHalfLine,
            center: 1.0,
            width: 1.0,
        };
        let v = quad::integrate(&g, &layout, 1e-12).unwrap();
        // Γ(3/4)
        assert!((v.value - 1.225_416_702_465_177_6).abs() < 1e-8);
        let (table, norm, _) =
            tabulate(&g, Support::PositiveHalfLine, v.lo, v.hi, v.value).unwrap();
        assert!(norm < 1e-8);
        assert!(table.inverse(1e-9) > 0.0);
    }

    #[test]
    fn sampler_is_deterministic_and_in_support() {
        let m = build_measure(&Potential::BetaTasep { beta: 6.0, mu: 1.0 }, 0.0).unwrap();
        let mut a = testkit::rng(1);
        let mut b = testkit::rng(1);
        for _ in 0..1000 {
            let x = m.sample(&mut a);
            assert_eq!(x.to_bits(), m.sample(&mut b).to_bits());
            assert!(x > 0.0);
        }
    }

    #[test]
    fn table_cdf_matches_quadrature_cdf() {
        let m = build_measure(&Potential::OConnellYor { mu: 2.0 }, 0.0).unwrap();
        let pts: Vec<f64> = (0..200).map(|i| -3.0 + 0.05 * i as f64).collect();
        let q = m.quadrature_cdf_sorted(&pts);
        for (x, qx) in pts.iter().zip(q) {
            assert!((m.cdf(*x) - qx).abs() < 2e-6, "{x}");
        }
        // exp(−2z − e^{−z}) has CDF (1 + e^{−z}) exp(−e^{−z}).
        for &x in &[-1.0f64, 0.0, 0.7, 2.0] {
            let w: f64 = (-x).exp();
            assert!((m.cdf(x) - (1.0 + w) * (-w).exp()).abs() < 2e-6);
        }
    }

    #[test]
    fn inverse_is_monotone_on_the_unit_interval() {
        let m = build_measure(&Potential::OConnellYor { mu: 1.0 }, 0.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 1..10_000 {
            let z = m.inverse_cdf(i as f64 / 10_000.0);
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn initial_condition_is_pinned_and_ordered() {
        let spec = catalog::preset_beta_tasep(6.0, 1.0, 3).unwrap();
        let nu = crate::linalg::solve_nu(&spec, spec.window() - 1).unwrap();
        let ms = MeasureSet::for_spec(&spec, &nu).unwrap();
        let mut rng = testkit::rng(4);
        let mut x = vec![0.0; 3];
        for _ in 0..1000 {
            sample_initial_condition(&ms, &mut rng, &mut x);
            assert_eq!(x[0], 0.0);
            assert!(x[0] > x[1] && x[1] > x[2]);
        }
        let single = MeasureSet::for_spec(&spec.with_particles(1), &nu).unwrap();
        let mut x = vec![1.0];
        sample_initial_condition(&single, &mut rng, &mut x);
        assert_eq!(x, vec![0.0]);
    }
}
