//! Sample moments, z-scores and Kolmogorov–Smirnov statistics.

use alloc::vec::Vec;

/// Asymptotic Kolmogorov distribution quantile at the 1% level.
pub const KS_C_01: f64 = 1.628;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Fourth central moment (biased).
    pub m4: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                variance: f64::NAN,
                m4: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut s2, mut s4) = (0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            let d2 = d * d;
            s2 += d2;
            s4 += d2 * d2;
        }
        let variance = if n > 1 { s2 / (nf - 1.0) } else { 0.0 };
        Self {
            n,
            mean,
            variance,
            m4: s4 / nf,
        }
    }

    pub fn mean_se(&self) -> f64 {
        libm::sqrt(self.variance / self.n as f64)
    }

    /// Standard error of the sample variance, `√((m4 − s⁴)/n)`.
    pub fn variance_se(&self) -> f64 {
        let s4 = self.variance * self.variance;
        libm::sqrt(((self.m4 - s4).max(0.0)) / self.n as f64)
    }
}

/// `sup |F_n − F|` for a sample sorted ascending and CDF values at it.
pub fn ks_statistic_sorted(cdf_at_sorted: &[f64]) -> f64 {
    let n = cdf_at_sorted.len() as f64;
    cdf_at_sorted
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// One-sample KS statistic against `cdf`.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let sorted = sorted(sample);
    let f: Vec<f64> = sorted.iter().map(|&x| cdf(x)).collect();
    ks_statistic_sorted(&f)
}

/// Two-sample KS statistic `sup |F_n − G_m|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max(libm::fabs(i as f64 / n - j as f64 / m));
    }
    d
}

pub fn ks_critical_one_sample(n: usize) -> f64 {
    KS_C_01 / libm::sqrt(n as f64)
}

pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_C_01 * libm::sqrt((n + m) / (n * m))
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}
