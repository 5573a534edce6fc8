//! Adaptive Simpson quadrature over unbounded or half-bounded domains.
//!
//! The domain is split into pieces around a center point: doubling pieces
//! outward into each infinite tail, and geometrically graded pieces toward a
//! finite endpoint at 0. Expansion stops once the newest piece, together with
//! a geometric extrapolation of what lies beyond it, falls below a relative
//! threshold of the accumulated integral.

use crate::model::Support;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum QuadError {
    /// A tail expansion ran past the maximal half-width without the tail
    /// contributions becoming negligible.
    Divergent,
    /// Graded refinement toward the finite endpoint does not converge.
    Singular,
}

const MAX_DEPTH: u32 = 48;
/// Half-width beyond which a tail is declared divergent.
const MAX_HALF_WIDTH: f64 = (1u64 << 60) as f64;
/// Graded levels toward 0 before declaring the endpoint singular.
const MAX_GRADED_LEVELS: usize = 1100;
/// Consecutive non-decreasing graded pieces that prove divergence.
const GROWTH_LEVELS: usize = 60;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Piece {
    pub value: f64,
    pub converged: bool,
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson on `[a, b]` with tolerance `max(floor, rel · ∫|f|)`,
/// where `∫|f|` is a coarse five-point estimate. Non-finite evaluations are
/// reported as `None`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel: f64,
    floor: f64,
) -> Option<Piece> {
    if a == b {
        return Some(Piece {
            value: 0.0,
            converged: true,
        });
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    for v in [fa, fm, fb, flm, frm] {
        if !v.is_finite() {
            return None;
        }
    }
    let h = b - a;
    let coarse_abs = simpson(fa.abs(), flm.abs(), fm.abs(), 0.5 * h)
        + simpson(fm.abs(), frm.abs(), fb.abs(), 0.5 * h);
    let tol = floor.max(rel * coarse_abs);
    let whole = simpson(fa, fm, fb, h);
    let mut converged = true;
    let value = recurse(
        f,
        [a, m, b],
        [fa, fm, fb],
        [flm, frm],
        whole,
        tol,
        0,
        &mut converged,
    )?;
    Some(Piece { value, converged })
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    [a, m, b]: [f64; 3],
    [fa, fm, fb]: [f64; 3],
    [flm, frm]: [f64; 2],
    whole: f64,
    tol: f64,
    depth: u32,
    converged: &mut bool,
) -> Option<f64> {
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if libm::fabs(delta) <= 15.0 * tol || m <= a || m >= b {
        return Some(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        *converged = false;
        return Some(left + right + delta / 15.0);
    }
    let (ll, lr) = (0.5 * (a + m), 0.5 * (m + b));
    let (l1, l2) = (0.5 * (a + ll), 0.5 * (ll + m));
    let (r1, r2) = (0.5 * (m + lr), 0.5 * (lr + b));
    let (fl1, fl2, fr1, fr2) = (f(l1), f(l2), f(r1), f(r2));
    if !(fl1.is_finite() && fl2.is_finite() && fr1.is_finite() && fr2.is_finite()) {
        return None;
    }
    let lv = recurse(
        f,
        [a, ll, m],
        [fa, flm, fm],
        [fl1, fl2],
        left,
        0.5 * tol,
        depth + 1,
        converged,
    )?;
    let rv = recurse(
        f,
        [m, lr, b],
        [fm, frm, fb],
        [fr1, fr2],
        right,
        0.5 * tol,
        depth + 1,
        converged,
    )?;
    Some(lv + rv)
}

/// Where to split the domain and how wide the first tail pieces are.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub support: Support,
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Integral {
    pub value: f64,
    /// Leftmost and rightmost breakpoints reached (0 for a graded endpoint).
    pub lo: f64,
    pub hi: f64,
}

/// Relative accuracy for each piece.
const PIECE_REL: f64 = 1e-12;

struct Tracker {
    threshold: f64,
    prev: Option<f64>,
}

impl Tracker {
    fn new(threshold: f64) -> Self {
        Self {
            threshold,
            prev: None,
        }
    }

    /// Returns the extrapolated remainder if expansion may stop.
    fn should_stop(&mut self, piece: f64, scale: f64) -> Option<f64> {
        let p = piece.abs();
        let prev = self.prev.replace(p);
        let budget = self.threshold * scale;
        if scale == 0.0 || p > budget {
            return None;
        }
        match prev {
            Some(q) if p == 0.0 || (q > 0.0 && p < q) => {
                let r = if q > 0.0 { p / q } else { 0.0 };
                let rest = piece * r / (1.0 - r);
                (rest.abs() <= budget).then_some(rest)
            }
            _ => None,
        }
    }
}

/// `∫ f` over the support, split per `layout`. `threshold` is the relative
/// size below which a tail piece and its extrapolated remainder are dropped.
pub(crate) fn integrate<F: Fn(f64) -> f64>(
    f: &F,
    layout: &Layout,
    threshold: f64,
) -> Result<Integral, QuadError> {
    let c = layout.center;
    let w = layout.width;
    // `scale` accumulates |piece| and sets every relative budget, so
    // integrands of either sign are handled alike.
    let mut total = 0.0;
    let mut scale = 0.0;

    // Central pieces first so the stopping rule has a reference mass.
    let right0 = piece(f, c, c + w, scale, QuadError::Divergent)?;
    total += right0;
    scale += right0.abs();
    let left0 = match layout.support {
        Support::FullLine => piece(f, c - w, c, scale, QuadError::Divergent)?,
        Support::PositiveHalfLine => piece(f, 0.5 * c, c, scale, QuadError::Singular)?,
    };
    total += left0;
    scale += left0.abs();

    // Right tail: [c + w·2^j, c + w·2^{j+1}].
    let mut tracker = Tracker::new(threshold);
    tracker.prev = Some(right0.abs());
    let mut width = w;
    let hi = loop {
        if width > MAX_HALF_WIDTH {
            return Err(QuadError::Divergent);
        }
        let p = piece(f, c + width, c + 2.0 * width, scale, QuadError::Divergent)?;
        total += p;
        scale += p.abs();
        width *= 2.0;
        if let Some(rest) = tracker.should_stop(p, scale) {
            total += rest;
            break c + width;
        }
    };

    let lo = match layout.support {
        Support::FullLine => {
            let mut tracker = Tracker::new(threshold);
            tracker.prev = Some(left0.abs());
            let mut width = w;
            loop {
                if width > MAX_HALF_WIDTH {
                    return Err(QuadError::Divergent);
                }
                let p = piece(f, c - 2.0 * width, c - width, scale, QuadError::Divergent)?;
                total += p;
                scale += p.abs();
                width *= 2.0;
                if let Some(rest) = tracker.should_stop(p, scale) {
                    total += rest;
                    break c - width;
                }
            }
        }
        Support::PositiveHalfLine => {
            // Graded pieces [c/2^{j+1}, c/2^j] toward the endpoint.
            let mut tracker = Tracker::new(threshold);
            tracker.prev = Some(left0.abs());
            let mut right = 0.5 * c;
            let mut growth = 0usize;
            let mut last = left0.abs();
            let mut level = 1usize;
            loop {
                if level > MAX_GRADED_LEVELS || growth >= GROWTH_LEVELS {
                    return Err(QuadError::Singular);
                }
                let p = piece(f, 0.5 * right, right, scale, QuadError::Singular)?;
                total += p;
                scale += p.abs();
                right *= 0.5;
                level += 1;
                growth = if p.abs() >= last && p != 0.0 {
                    growth + 1
                } else {
                    0
                };
                last = p.abs();
                if let Some(rest) = tracker.should_stop(p, scale) {
                    total += rest;
                    break 0.0;
                }
            }
        }
    };

    if !total.is_finite() {
        return Err(match layout.support {
            Support::FullLine => QuadError::Divergent,
            Support::PositiveHalfLine => QuadError::Singular,
        });
    }
    Ok(Integral {
        value: total,
        lo,
        hi,
    })
}

fn piece<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    scale: f64,
    on_failure: QuadError,
) -> Result<f64, QuadError> {
    let floor = PIECE_REL * scale;
    match adaptive_simpson(f, a, b, PIECE_REL, floor) {
        Some(p) if p.converged => Ok(p.value),
        Some(p) => {
            // Unconverged pieces are tolerated only when they cannot matter.
            if p.value.abs() <= 1e-8 * scale {
                Ok(p.value)
            } else {
                Err(on_failure)
            }
        }
        None => Err(on_failure),
    }
}
