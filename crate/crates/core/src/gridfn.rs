//! Functions sampled on geometric grids over (0, T], plus the quadrature
//! used to integrate them and arbitrary closures near singular endpoints.

use std::sync::OnceLock;

use thiserror::Error;

/// Default number of grid points.
pub const DEFAULT_POINTS: usize = 512;
/// Default ratio t_min / T.
pub const DEFAULT_FLOOR: f64 = 1e-8;
/// Default relative tolerance for raw quadrature.
pub const QUAD_TOL: f64 = 1e-8;
/// Slack allowed when checking a decreasing tag.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Exponents closer than this to a critical value are treated as critical,
/// so the log factor decides convergence.
pub const BORDERLINE_EXPONENT: f64 = 1e-2;
/// Largest |gamma| accepted from the three-point tail fit.
pub const TAIL_LOG_LIMIT: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid bounds must be positive (t_min = {t_min}, t_max = {t_max})")]
    NonPositiveBound { t_min: f64, t_max: f64 },
    #[error("empty range: t_min = {t_min} is not below t_max = {t_max}")]
    DegenerateRange { t_min: f64, t_max: f64 },
    #[error("a grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("{values} values for a grid of {points} points")]
    LengthMismatch { values: usize, points: usize },
    #[error("values violate the decreasing tag at index {0}")]
    NotDecreasing(usize),
    #[error("values violate the increasing tag at index {0}")]
    NotIncreasing(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge (value {value:e}, error estimate {err:e})")]
    NonConvergent { value: f64, err: f64 },
    #[error("bad integration domain: {0}")]
    DomainError(String),
}

/// Geometric grid t_min = t_0 < t_1 < ... < t_{m-1} = T.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGrid {
    points: Vec<f64>,
    log_step: f64,
}

pub fn make_log_grid(t_min: f64, t_max: f64, count: usize) -> Result<LogGrid, GridError> {
    if !(t_min > 0.0) || !(t_max > 0.0) || !t_min.is_finite() || !t_max.is_finite() {
        return Err(GridError::NonPositiveBound { t_min, t_max });
    }
    if t_min >= t_max {
        return Err(GridError::DegenerateRange { t_min, t_max });
    }
    if count < 2 {
        return Err(GridError::TooFewPoints(count));
    }
    let log_step = (t_max / t_min).ln() / (count - 1) as f64;
    let mut points: Vec<f64> = (0..count).map(|i| t_min * (log_step * i as f64).exp()).collect();
    points[0] = t_min;
    points[count - 1] = t_max;
    Ok(LogGrid { points, log_step })
}

impl LogGrid {
    /// 512 points on [1e-8 T, T].
    pub fn default_for(t_max: f64) -> Result<LogGrid, GridError> {
        make_log_grid(DEFAULT_FLOOR * t_max, t_max, DEFAULT_POINTS)
    }

    pub fn t_min(&self) -> f64 {
        self.points[0]
    }

    pub fn t_max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn log_step(&self) -> f64 {
        self.log_step
    }

    pub fn ratio(&self) -> f64 {
        self.log_step.exp()
    }

    /// Cell index i with points[i] <= t < points[i+1] and the fractional
    /// position inside the cell on the log scale. Clamped to the grid.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.points.len();
        if t <= self.points[0] {
            return (0, 0.0);
        }
        if t >= self.points[m - 1] {
            return (m - 2, 1.0);
        }
        let x = (t / self.points[0]).ln() / self.log_step;
        let mut i = (x.floor() as usize).min(m - 2);
        // floating point can put us one cell off near a node
        while i > 0 && self.points[i] > t {
            i -= 1;
        }
        while i + 1 < m - 1 && self.points[i + 1] <= t {
            i += 1;
        }
        let s = ((t / self.points[i]).ln() / self.log_step).clamp(0.0, 1.0);
        (i, s)
    }

    /// Index of the grid point nearest to t on the log scale.
    pub fn nearest_index(&self, t: f64) -> usize {
        let (i, s) = self.locate(t);
        if s > 0.5 {
            i + 1
        } else {
            i
        }
    }

    /// The same grid with every point below `t_floor` dropped.
    pub fn restrict_from(&self, t_floor: f64) -> Result<LogGrid, GridError> {
        let start = self
            .points
            .iter()
            .position(|&p| p >= t_floor * (1.0 - 1e-12))
            .unwrap_or(self.points.len());
        let points = self.points[start..].to_vec();
        if points.len() < 2 {
            return Err(GridError::TooFewPoints(points.len()));
        }
        Ok(LogGrid {
            points,
            log_step: self.log_step,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    None,
}

/// How a sampled function continues past t_max.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    ZeroBeyondT,
    ConstantBeyondT,
    /// Power-law continuation through the last two samples.
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: LogGrid,
    values: Vec<f64>,
    monotonicity: Monotonicity,
    extension: Extension,
}

impl SampledFunction {
    pub fn new(
        grid: LogGrid,
        values: Vec<f64>,
        monotonicity: Monotonicity,
        extension: Extension,
    ) -> Result<Self, GridError> {
        if values.len() != grid.count() {
            return Err(GridError::LengthMismatch {
                values: values.len(),
                points: grid.count(),
            });
        }
        match monotonicity {
            Monotonicity::Decreasing => {
                for i in 0..values.len() - 1 {
                    let (a, b) = (values[i], values[i + 1]);
                    if !(a >= b || b - a <= MONOTONE_TOL * a.abs()) {
                        return Err(GridError::NotDecreasing(i));
                    }
                }
            }
            Monotonicity::Increasing => {
                for i in 0..values.len() - 1 {
                    let (a, b) = (values[i], values[i + 1]);
                    if !(b >= a || a - b <= MONOTONE_TOL * b.abs()) {
                        return Err(GridError::NotIncreasing(i));
                    }
                }
            }
            Monotonicity::None => {}
        }
        Ok(SampledFunction {
            grid,
            values,
            monotonicity,
            extension,
        })
    }

    /// Sample `f` at every grid point.
    pub fn from_fn<F: Fn(f64) -> f64 + Sync + Send>(
        grid: &LogGrid,
        f: F,
        monotonicity: Monotonicity,
        extension: Extension,
    ) -> Result<Self, GridError> {
        let values = crate::par::map_slice(grid.points(), |&t| f(t));
        SampledFunction::new(grid.clone(), values, monotonicity, extension)
    }

    /// Build without checking the monotonicity tag against the values.
    pub(crate) fn trusted(
        grid: LogGrid,
        values: Vec<f64>,
        monotonicity: Monotonicity,
        extension: Extension,
    ) -> Self {
        debug_assert_eq!(grid.count(), values.len());
        SampledFunction {
            grid,
            values,
            monotonicity,
            extension,
        }
    }

    pub fn grid(&self) -> &LogGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn points(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Pointwise transform; the caller states the resulting monotonicity.
    pub fn map<F: Fn(f64, f64) -> f64>(&self, f: F, monotonicity: Monotonicity) -> Self {
        let values = self
            .grid
            .points()
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| f(t, v))
            .collect();
        SampledFunction::trusted(self.grid.clone(), values, monotonicity, self.extension)
    }

    /// Same function restricted to grid points at or above `t_floor`.
    pub fn restrict_from(&self, t_floor: f64) -> Result<Self, GridError> {
        let grid = self.grid.restrict_from(t_floor)?;
        let skip = self.grid.count() - grid.count();
        Ok(SampledFunction::trusted(
            grid,
            self.values[skip..].to_vec(),
            self.monotonicity,
            self.extension,
        ))
    }

    /// Evaluate anywhere in (0, inf). Between nodes the interpolation is a
    /// power law when both neighbours are positive and linear otherwise;
    /// below t_min the first cell's power law is continued; above t_max the
    /// extension tag applies.
    pub fn eval(&self, t: f64) -> f64 {
        let pts = self.grid.points();
        let m = pts.len();
        if t > self.grid.t_max() {
            return match self.extension {
                Extension::ZeroBeyondT => 0.0,
                Extension::ConstantBeyondT => self.values[m - 1],
                Extension::Analytic => power_through(
                    pts[m - 2],
                    self.values[m - 2],
                    pts[m - 1],
                    self.values[m - 1],
                    t,
                ),
            };
        }
        if t < pts[0] {
            return power_through(pts[0], self.values[0], pts[1], self.values[1], t);
        }
        let (i, s) = self.grid.locate(t);
        let (a, b) = (self.values[i], self.values[i + 1]);
        if s == 0.0 {
            return a;
        }
        if s == 1.0 {
            return b;
        }
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            ((1.0 - s) * a.ln() + s * b.ln()).exp()
        } else if a.is_infinite() || b.is_infinite() {
            f64::INFINITY
        } else {
            let frac = (t - pts[i]) / (pts[i + 1] - pts[i]);
            a + frac * (b - a)
        }
    }

    /// Exact integral of the interpolant over cell i.
    pub fn cell_integral(&self, i: usize) -> f64 {
        let pts = self.grid.points();
        cell_integral(pts[i], pts[i + 1], self.values[i], self.values[i + 1])
    }

    /// Integral of the interpolant over [t_min, T].
    pub fn grid_integral(&self) -> f64 {
        (0..self.grid.count() - 1).map(|i| self.cell_integral(i)).sum()
    }

    /// Integral over (0, T], using the fitted tail model below t_min.
    pub fn integral_from_zero(&self) -> Result<f64, QuadError> {
        let tail = self.tail_below()?;
        Ok(tail + self.grid_integral())
    }

    /// Integral of the function over (0, t_min).
    pub fn tail_below(&self) -> Result<f64, QuadError> {
        let t0 = self.grid.t_min();
        if self.values[0] == 0.0 {
            return Ok(0.0);
        }
        match TailModel::fit(self) {
            Some(model) => {
                let v = model.integral_below(t0);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(QuadError::NonConvergent {
                        value: f64::INFINITY,
                        err: f64::INFINITY,
                    })
                }
            }
            None if self.values[0].is_finite() => Ok(self.values[0] * t0),
            None => Err(QuadError::NonConvergent {
                value: f64::INFINITY,
                err: f64::INFINITY,
            }),
        }
    }

    /// Limit at 0+ extrapolated from the tail model.
    pub fn limit_at_zero(&self) -> f64 {
        match TailModel::fit(self) {
            Some(model) => model.limit_at_zero(),
            None => self.values[0],
        }
    }
}

fn power_through(t1: f64, f1: f64, t2: f64, f2: f64, t: f64) -> f64 {
    if f1 > 0.0 && f2 > 0.0 && f1.is_finite() && f2.is_finite() {
        let p = (f2 / f1).ln() / (t2 / t1).ln();
        f1 * (t / t1).powf(p)
    } else if t < t1 {
        f1
    } else {
        f2
    }
}

/// Integral over [a, b] of the power law through (a, fa) and (b, fb), or of
/// the chord when either value is not positive.
pub fn cell_integral(a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    if fa.is_infinite() || fb.is_infinite() {
        return if fa.max(fb) > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
    }
    if fa > 0.0 && fb > 0.0 {
        let r = (b / a).ln();
        let p1 = (fb / fa).ln() / r + 1.0;
        let x = p1 * r;
        if x.abs() < 1e-12 {
            fa * a * r
        } else {
            fa * a * x.exp_m1() / p1
        }
    } else {
        0.5 * (fa + fb) * (b - a)
    }
}

/// f(t) ~ C t^p L(t)^gamma near 0 with L(t) = 1 + ln(T/t), fitted through
/// three samples in the first decades of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub ln_c: f64,
    pub p: f64,
    pub gamma: f64,
    pub t_ref: f64,
}

impl TailModel {
    pub fn fit(f: &SampledFunction) -> Option<TailModel> {
        let grid = f.grid();
        let pts = grid.points();
        let vals = f.values();
        let t_ref = grid.t_max();
        let decades = (grid.t_max() / grid.t_min()).log10();
        let span = (decades / 2.0).min(2.0);
        let i0 = 0;
        let i1 = grid.nearest_index(grid.t_min() * 10f64.powf(span / 2.0));
        let i2 = grid.nearest_index(grid.t_min() * 10f64.powf(span));
        let ok = |i: usize| vals[i] > 0.0 && vals[i].is_finite();
        let row = |i: usize| {
            let x = pts[i].ln();
            let y = (1.0 + (t_ref / pts[i]).ln()).ln();
            (x, y, vals[i].ln())
        };
        if i0 < i1 && i1 < i2 && ok(i0) && ok(i1) && ok(i2) {
            let (x0, y0, z0) = row(i0);
            let (x1, y1, z1) = row(i1);
            let (x2, y2, z2) = row(i2);
            // solve [1 x y][c p g]^T = z by elimination against row 0
            let (a1, b1, r1) = (x1 - x0, y1 - y0, z1 - z0);
            let (a2, b2, r2) = (x2 - x0, y2 - y0, z2 - z0);
            let det = a1 * b2 - a2 * b1;
            let scale = (a1.abs() + b1.abs()) * (a2.abs() + b2.abs());
            if det.abs() > 1e-12 * scale {
                let p = (r1 * b2 - r2 * b1) / det;
                let gamma = (a1 * r2 - a2 * r1) / det;
                let ln_c = z0 - p * x0 - gamma * y0;
                // p and gamma trade off against each other on mixtures of
                // powers; distrust fits with a large log exponent or whose
                // limit exponent sits across a critical value from the
                // local slope
                let local = (vals[i1] / vals[i0]).ln() / (pts[i1] / pts[i0]).ln();
                let flips = [-1.0, 0.0].iter().any(|&c| {
                    (p - c) * (local - c) < 0.0
                        && (p - c).abs() > BORDERLINE_EXPONENT
                        && (local - c).abs() > BORDERLINE_EXPONENT
                });
                if gamma.abs() <= TAIL_LOG_LIMIT && !flips {
                    return Some(TailModel {
                    ln_c,
                    p,
                    gamma,
                    t_ref,
                    });
                }
            }
        }
        let j = if i1 > i0 { i1 } else { 1 };
        if ok(0) && ok(j) {
            let p = (vals[j] / vals[0]).ln() / (pts[j] / pts[0]).ln();
            return Some(TailModel {
                ln_c: vals[0].ln() - p * pts[0].ln(),
                p,
                gamma: 0.0,
                t_ref,
            });
        }
        None
    }

    pub fn eval(&self, t: f64) -> f64 {
        let l = 1.0 + (self.t_ref / t).ln();
        (self.ln_c + self.p * t.ln() + self.gamma * l.ln()).exp()
    }

    /// Integral of the model over (0, t0); +inf when it diverges.
    pub fn integral_below(&self, t0: f64) -> f64 {
        let p1 = self.p + 1.0;
        if p1 < -BORDERLINE_EXPONENT {
            return f64::INFINITY;
        }
        if p1.abs() <= BORDERLINE_EXPONENT {
            if self.gamma < -1.0 {
                let l0 = 1.0 + (self.t_ref / t0).ln();
                // integrand C t^-1 L^gamma, exponent p snapped to -1
                let c = (self.ln_c + t0.ln() * (self.p + 1.0)).exp();
                return c * l0.powf(self.gamma + 1.0) / (-self.gamma - 1.0);
            }
            return f64::INFINITY;
        }
        let ln_t = self.t_ref.ln();
        let g = |s: f64| (self.ln_c + p1 * s + self.gamma * (1.0 + ln_t - s).ln()).exp();
        match integrate_log_scale(&g, f64::NEG_INFINITY, t0.ln(), QUAD_TOL) {
            Ok(q) => q.value,
            Err(_) => f64::INFINITY,
        }
    }

    pub fn limit_at_zero(&self) -> f64 {
        if self.p < -BORDERLINE_EXPONENT {
            f64::INFINITY
        } else if self.p > BORDERLINE_EXPONENT {
            0.0
        } else if self.gamma > BORDERLINE_EXPONENT {
            f64::INFINITY
        } else if self.gamma < -BORDERLINE_EXPONENT {
            0.0
        } else {
            self.ln_c.exp()
        }
    }
}

/// Result of a quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub err_estimate: f64,
}

fn gauss_legendre_16() -> &'static ([f64; 16], [f64; 16]) {
    static RULE: OnceLock<([f64; 16], [f64; 16])> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 16;
        let mut x = [0.0; N];
        let mut w = [0.0; N];
        for i in 0..N / 2 {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..N {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                dp = N as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = -z;
            x[N - 1 - i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
            w[N - 1 - i] = w[i];
        }
        (x, w)
    })
}

fn gl16<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
    let (x, w) = gauss_legendre_16();
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for k in 0..16 {
        s += w[k] * f(c + h * x[k]);
    }
    s * h
}

const MAX_DEPTH: u32 = 60;
const MAX_SPLITS: usize = 20_000;

/// Adaptive bisection with a 16-point Gauss rule. Returns (value, err, converged).
fn adaptive<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, abs_tol: f64) -> (f64, f64, bool) {
    let whole = gl16(f, a, b);
    if !whole.is_finite() {
        return (whole, f64::INFINITY, false);
    }
    let width = b - a;
    let mut stack = vec![(a, b, whole, 0u32)];
    let (mut value, mut err, mut ok) = (0.0, 0.0, true);
    let mut splits = 0usize;
    while let Some((lo, hi, coarse, depth)) = stack.pop() {
        if splits >= MAX_SPLITS {
            ok = false;
            value += coarse;
            err += coarse.abs();
            continue;
        }
        splits += 1;
        let mid = 0.5 * (lo + hi);
        let left = gl16(f, lo, mid);
        let right = gl16(f, mid, hi);
        let fine = left + right;
        if !fine.is_finite() {
            return (fine, f64::INFINITY, false);
        }
        let diff = (fine - coarse).abs();
        // never ask for more than rounding allows on this piece
        let local_tol = (abs_tol * (hi - lo) / width)
            .max(1e-300)
            .max(64.0 * f64::EPSILON * (left.abs() + right.abs()));
        if diff <= local_tol || depth >= MAX_DEPTH || mid <= lo || mid >= hi {
            if diff > local_tol {
                ok = false;
            }
            value += fine;
            err += diff;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    (value, err, ok)
}

fn rough_scale<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
    let h = (b - a) / 8.0;
    (0..8)
        .map(|i| gl16(f, a + h * i as f64, a + h * (i + 1) as f64).abs())
        .sum()
}

fn finite_adaptive<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Quadrature, QuadError> {
    let scale = rough_scale(f, a, b);
    if !scale.is_finite() {
        return Err(QuadError::NonConvergent {
            value: scale,
            err: f64::INFINITY,
        });
    }
    let (value, err, ok) = adaptive(f, a, b, 0.5 * tol * scale);
    if !ok && err > tol * value.abs() + 1e-300 {
        return Err(QuadError::NonConvergent { value, err });
    }
    Ok(Quadrature {
        value,
        err_estimate: err,
    })
}

/// Panels of doubling length moving away from `anchor` in `dir` (+1 or -1),
/// optionally clipped at `stop`. Returns (sum, err, reached_stop).
fn panels<F: Fn(f64) -> f64 + ?Sized>(
    g: &F,
    anchor: f64,
    dir: f64,
    stop: Option<f64>,
    tol: f64,
) -> Result<(f64, f64, bool), QuadError> {
    let mut sum = 0.0f64;
    let mut err = 0.0f64;
    let mut small_run = 0;
    let mut len = 1.0;
    let mut start = anchor;
    for j in 0..64 {
        let mut end = start + dir * len;
        let mut clipped = false;
        if let Some(s) = stop {
            if (dir > 0.0 && end >= s) || (dir < 0.0 && end <= s) {
                end = s;
                clipped = true;
            }
        }
        let (lo, hi) = if dir > 0.0 { (start, end) } else { (end, start) };
        if hi > lo {
            let scale = rough_scale(g, lo, hi).max(sum.abs());
            let (v, e, ok) = adaptive(g, lo, hi, 0.25 * tol * scale);
            if !v.is_finite() || (!ok && e > tol * scale + 1e-300) {
                return Err(QuadError::NonConvergent {
                    value: sum + v,
                    err: err + e,
                });
            }
            sum += v;
            err += e;
            if clipped {
                return Ok((sum, err, true));
            }
            if j >= 3 && v.abs() <= 0.01 * tol * sum.abs() {
                small_run += 1;
                if small_run >= 2 {
                    return Ok((sum, err + v.abs(), false));
                }
            } else if sum == 0.0 && v == 0.0 && j >= 3 {
                small_run += 1;
                if small_run >= 4 {
                    return Ok((sum, err, false));
                }
            } else {
                small_run = 0;
            }
        } else if clipped {
            return Ok((sum, err, true));
        }
        start = end;
        len *= 2.0;
    }
    Err(QuadError::NonConvergent {
        value: sum,
        err: f64::INFINITY,
    })
}

/// Integral of g(s) ds over [s_lo, s_hi], either bound may be infinite.
/// Meant for integrands written on the log scale, g(s) = e^s f(e^s).
pub fn integrate_log_scale<F: Fn(f64) -> f64 + ?Sized>(
    g: &F,
    s_lo: f64,
    s_hi: f64,
    tol: f64,
) -> Result<Quadrature, QuadError> {
    if s_lo.is_nan() || s_hi.is_nan() || !(s_lo < s_hi) {
        return Err(QuadError::DomainError(format!(
            "need s_lo < s_hi, got [{s_lo}, {s_hi}]"
        )));
    }
    match (s_lo.is_finite(), s_hi.is_finite()) {
        (true, true) => finite_adaptive(g, s_lo, s_hi, tol),
        (false, true) => {
            let (v, e, _) = panels(g, s_hi, -1.0, None, tol)?;
            Ok(Quadrature {
                value: v,
                err_estimate: e,
            })
        }
        (true, false) => {
            let (v, e, _) = panels(g, s_lo, 1.0, None, tol)?;
            Ok(Quadrature {
                value: v,
                err_estimate: e,
            })
        }
        (false, false) => {
            let left = panels(g, 0.0, -1.0, None, tol)?;
            let right = panels(g, 0.0, 1.0, None, tol)?;
            Ok(Quadrature {
                value: left.0 + right.0,
                err_estimate: left.1 + right.1,
            })
        }
    }
}

/// Integral of f over (a, b). With `singular_at_a` the interval is mapped to
/// the log scale tau = a + e^s and cut into panels that shrink geometrically
/// toward a; whatever lies below the floating-point floor is extrapolated as
/// a power law. `b` may be +inf.
pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    singular_at_a: bool,
    tol: f64,
) -> Result<Quadrature, QuadError> {
    if a.is_nan() || b.is_nan() || !(a < b) || !a.is_finite() {
        return Err(QuadError::DomainError(format!("need a < b, got ({a}, {b})")));
    }
    if singular_at_a && a < 0.0 {
        return Err(QuadError::DomainError(format!(
            "singular endpoint must be >= 0, got {a}"
        )));
    }
    if b.is_infinite() {
        let mid = a + 1.0;
        let head = integrate(f, a, mid, singular_at_a, tol)?;
        let g = |s: f64| {
            let x = s.exp();
            if x.is_infinite() {
                // still not decayed when e^s overflows
                return f64::NAN;
            }
            let v = f(a + x);
            if v == 0.0 {
                0.0
            } else {
                x * v
            }
        };
        let tail = integrate_log_scale(&g, 0.0, f64::INFINITY, tol)?;
        return Ok(Quadrature {
            value: head.value + tail.value,
            err_estimate: head.err_estimate + tail.err_estimate,
        });
    }
    if !singular_at_a {
        return finite_adaptive(f, a, b, tol);
    }
    let g = |s: f64| {
        let x = s.exp();
        let tau = a + x;
        if x == 0.0 || tau == a {
            0.0
        } else {
            x * f(tau)
        }
    };
    let s_hi = (b - a).ln();
    // below this the offset no longer changes a + e^s
    let floor = if a > 0.0 {
        (a * f64::EPSILON).ln() + 20.0
    } else {
        -700.0
    };
    if s_hi <= floor {
        return Err(QuadError::DomainError(format!(
            "interval ({a}, {b}) below floating-point resolution"
        )));
    }
    let (value, err, hit_floor) = panels(&g, s_hi, -1.0, Some(floor), tol)?;
    if !hit_floor {
        return Ok(Quadrature {
            value,
            err_estimate: err,
        });
    }
    let x0 = floor.exp();
    let exponent = |x1: f64, x2: f64| {
        let (f1, f2) = (f(a + x1), f(a + x2));
        (f2 / f1).ln() / (x2 / x1).ln()
    };
    let f0 = f(a + x0);
    let p_near = exponent(x0, x0 * 8f64.exp());
    let p_far = exponent(x0 * 8f64.exp(), x0 * 16f64.exp());
    if !(p_near > -1.0) || !f0.is_finite() {
        return Err(QuadError::NonConvergent {
            value: f64::INFINITY,
            err: f64::INFINITY,
        });
    }
    let tail = x0 * f0 / (p_near + 1.0);
    let tail_alt = if p_far > -1.0 {
        x0 * f0 / (p_far + 1.0)
    } else {
        f64::INFINITY
    };
    let err = err + (tail - tail_alt).abs();
    let value = value + tail;
    if err > tol * value.abs() + 1e-300 {
        return Err(QuadError::NonConvergent { value, err });
    }
    Ok(Quadrature {
        value,
        err_estimate: err,
    })
}

/// t -> int_0^t f (from_zero) or t -> int_t^T f.
pub fn running_integral(f: &SampledFunction, from_zero: bool) -> Result<SampledFunction, QuadError> {
    let m = f.grid().count();
    let cells: Vec<f64> = (0..m - 1).map(|i| f.cell_integral(i)).collect();
    let nonneg = f.values().iter().all(|&v| v >= 0.0);
    let mut out = vec![0.0; m];
    if from_zero {
        out[0] = f.tail_below()?;
        for i in 0..m - 1 {
            out[i + 1] = out[i] + cells[i];
        }
        let extension = match f.extension() {
            Extension::ZeroBeyondT => Extension::ConstantBeyondT,
            _ => Extension::Analytic,
        };
        let mono = if nonneg {
            Monotonicity::Increasing
        } else {
            Monotonicity::None
        };
        Ok(SampledFunction::trusted(f.grid().clone(), out, mono, extension))
    } else {
        for i in (0..m - 1).rev() {
            out[i] = out[i + 1] + cells[i];
        }
        let mono = if nonneg {
            Monotonicity::Decreasing
        } else {
            Monotonicity::None
        };
        Ok(SampledFunction::trusted(
            f.grid().clone(),
            out,
            mono,
            Extension::ZeroBeyondT,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupWindow {
    /// sup over (0, t]
    UpTo,
    /// sup over [t, T]
    From,
}

/// Pointwise sup of the samples over the given window.
pub fn running_sup(f: &SampledFunction, window: SupWindow) -> SampledFunction {
    let v = f.values();
    let m = v.len();
    let mut out = vec![0.0; m];
    match window {
        SupWindow::UpTo => {
            let mut acc = f64::NEG_INFINITY;
            for i in 0..m {
                acc = acc.max(v[i]);
                out[i] = acc;
            }
            SampledFunction::trusted(
                f.grid().clone(),
                out,
                Monotonicity::Increasing,
                Extension::ConstantBeyondT,
            )
        }
        SupWindow::From => {
            let mut acc = f64::NEG_INFINITY;
            for i in (0..m).rev() {
                acc = acc.max(v[i]);
                out[i] = acc;
            }
            SampledFunction::trusted(
                f.grid().clone(),
                out,
                Monotonicity::Decreasing,
                Extension::ZeroBeyondT,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finiteness {
    Finite,
    Infinite,
    Inconclusive,
}

/// Classify a quantity from its values on a sequence of refinements
/// (coarse first). Infinite when the finest value is +inf, when the values
/// run past 1e12 times the coarsest one, or when they keep growing without
/// the increments shrinking.
pub fn classify_refinement(values: &[f64]) -> Finiteness {
    let Some(&finest) = values.last() else {
        return Finiteness::Inconclusive;
    };
    if finest.is_nan() {
        return Finiteness::Inconclusive;
    }
    if finest == f64::INFINITY {
        return Finiteness::Infinite;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Finiteness::Inconclusive;
    }
    if values.len() == 1 {
        return Finiteness::Finite;
    }
    let reference = values[0].abs().max(1e-300);
    if finest.abs() > 1e12 * reference {
        return Finiteness::Infinite;
    }
    let grows_fast = values
        .windows(2)
        .all(|w| w[0] > 0.0 && w[1] > 10.0 * w[0]);
    if grows_fast {
        return Finiteness::Infinite;
    }
    let n = values.len();
    let last_inc = (values[n - 1] - values[n - 2]).abs();
    if last_inc <= 1e-9 * finest.abs().max(1e-300) {
        return Finiteness::Finite;
    }
    if n < 3 {
        return Finiteness::Inconclusive;
    }
    let prev_inc = (values[n - 2] - values[n - 3]).abs();
    if prev_inc == 0.0 {
        return Finiteness::Inconclusive;
    }
    let r = last_inc / prev_inc;
    if r <= 0.9 {
        Finiteness::Finite
    } else if r >= 0.99 && values[n - 1] > values[n - 2] {
        Finiteness::Infinite
    } else {
        Finiteness::Inconclusive
    }
}

/// The floors t_min used for nested-grid refinement studies.
pub fn nested_floors(grid: &LogGrid) -> [f64; 3] {
    let t0 = grid.t_min();
    [t0 * 1e4, t0 * 1e2, t0]
}
