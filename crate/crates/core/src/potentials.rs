//! Potentials u = G * f on a box in R^n, finite differences, moduli of
//! smoothness, the envelope ||Omega(t, .)||_{E'} and Calderon norms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridfn::{
    integrate, make_log_grid, running_integral, Extension, GridError, LogGrid, Monotonicity, QuadError,
    SampledFunction,
};
use crate::kernels::{unit_ball_volume, KernelError, KernelSpec};
use crate::lorentz::{associate_norm, embedding_criterion, LorentzError, LorentzSpace};
use crate::optimal::{x0_norm, OptimalError, OptimalNormSpec};
use crate::par::{map_range, map_slice};
use crate::rearrange::{MeasurableSample, RearrangeError, RearrangedStep};

/// Smallest number of points per axis.
pub const MIN_RESOLUTION: usize = 16;
/// Largest number of points per axis in dimension 2 and 3.
pub const MAX_RESOLUTION_MULTI: usize = 64;
/// Largest share of the kernel mass the singular cell may carry.
pub const SINGULAR_CELL_LIMIT: f64 = 0.1;
/// Seed of the reference f family.
pub const F_FAMILY_SEED: u64 = 0x5EED;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("the singular cell holds {share:.3} of the kernel mass (limit 0.1); refine the grid")]
    ResolutionTooCoarse { share: f64 },
    #[error("difference of step {step} and order {k} leaves no point inside the box")]
    DomainExceeded { step: f64, k: u32 },
    #[error("the space does not receive the cone: Psi_q(T) is infinite")]
    NotEmbedded,
    #[error("Calderon space is trivial: ||t^(k/n)||_X = inf")]
    TrivialSpace,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
    #[error(transparent)]
    Optimal(#[from] OptimalError),
    #[error(transparent)]
    Rearrange(#[from] RearrangeError),
}

/// Samples on the tensor grid x_i = -L + i dx, dx = 2L/(res-1), over
/// [-L, L]^n; the first axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    n: usize,
    box_halfwidth: f64,
    resolution: usize,
    values: Vec<f64>,
}

impl FieldSample {
    pub fn new(n: usize, box_halfwidth: f64, resolution: usize, values: Vec<f64>) -> Result<Self, PotentialError> {
        if !(1..=3).contains(&n) {
            return Err(PotentialError::InvalidParameter(format!("dimension {n} not in 1..=3")));
        }
        if resolution < MIN_RESOLUTION {
            return Err(PotentialError::InvalidParameter(format!(
                "resolution {resolution} below {MIN_RESOLUTION}"
            )));
        }
        if !(box_halfwidth > 0.0 && box_halfwidth.is_finite()) {
            return Err(PotentialError::InvalidParameter(format!("box half-width {box_halfwidth}")));
        }
        if values.len() != resolution.pow(n as u32) {
            return Err(PotentialError::InvalidParameter(format!(
                "{} values for {}^{n} points",
                values.len(),
                resolution
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PotentialError::InvalidParameter(format!("value {i} is not finite")));
        }
        Ok(FieldSample {
            n,
            box_halfwidth,
            resolution,
            values,
        })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync + Send>(
        n: usize,
        box_halfwidth: f64,
        resolution: usize,
        f: F,
    ) -> Result<Self, PotentialError> {
        let total = resolution.checked_pow(n as u32).unwrap_or(usize::MAX);
        let dx = 2.0 * box_halfwidth / (resolution as f64 - 1.0);
        let values = map_range(total, |idx| {
            let mut x = [0.0; 3];
            let mut r = idx;
            for xa in x.iter_mut().take(n) {
                *xa = -box_halfwidth + (r % resolution) as f64 * dx;
                r /= resolution;
            }
            f(&x[..n])
        });
        FieldSample::new(n, box_halfwidth, resolution, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_halfwidth(&self) -> f64 {
        self.box_halfwidth
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.box_halfwidth / (self.resolution as f64 - 1.0)
    }

    /// Measure of one grid cell.
    pub fn cell_measure(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    /// ||u||_C: the largest |value| on the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for o in out.iter_mut().take(self.n) {
            *o = idx % self.resolution;
            idx /= self.resolution;
        }
        out
    }

    fn flat_index(&self, m: &[i64]) -> Option<usize> {
        let r = self.resolution as i64;
        let mut idx = 0i64;
        for a in (0..self.n).rev() {
            if m[a] < 0 || m[a] >= r {
                return None;
            }
            idx = idx * r + m[a];
        }
        Some(idx as usize)
    }

    /// Coordinates of grid point `idx`.
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let m = self.multi_index(idx);
        let dx = self.spacing();
        (0..self.n).map(|a| -self.box_halfwidth + m[a] as f64 * dx).collect()
    }

    /// Value at a point of the box: cubic Lagrange in one dimension,
    /// multilinear otherwise; exact at nodes.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let dx = self.spacing();
        let r = self.resolution;
        if self.n == 1 {
            let s = ((x[0] + self.box_halfwidth) / dx).clamp(0.0, (r - 1) as f64);
            let near = s.round();
            if (s - near).abs() < 1e-9 {
                return self.values[near as usize];
            }
            let i = s.floor() as usize;
            let start = i.saturating_sub(1).min(r - 4);
            // weights sum to 1, so interpolate offsets from one node to
            // keep constants exact
            let base = self.values[start];
            let mut acc = base;
            for a in 1..4 {
                let mut w = 1.0;
                for b in 0..4 {
                    if a != b {
                        w *= (s - (start + b) as f64) / (a as f64 - b as f64);
                    }
                }
                acc += w * (self.values[start + a] - base);
            }
            return acc;
        }
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.n {
            let s = ((x[a] + self.box_halfwidth) / dx).clamp(0.0, (r - 1) as f64);
            let i = (s.floor() as usize).min(r - 2);
            base[a] = i as i64;
            frac[a] = s - i as f64;
        }
        let origin = self.values[self.flat_index(&base[..self.n]).expect("inside")];
        let mut acc = origin;
        for corner in 1..(1usize << self.n) {
            let mut w = 1.0;
            let mut m = base;
            for a in 0..self.n {
                if corner >> a & 1 == 1 {
                    m[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * (self.values[self.flat_index(&m[..self.n]).expect("inside")] - origin);
            }
        }
        acc
    }

    pub fn scaled(&self, c: f64) -> FieldSample {
        FieldSample {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &FieldSample) -> Result<FieldSample, PotentialError> {
        if (self.n, self.resolution) != (other.n, other.resolution) || self.box_halfwidth != other.box_halfwidth {
            return Err(PotentialError::InvalidParameter("fields live on different grids".into()));
        }
        Ok(FieldSample {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Decreasing rearrangement of |f| over the box.
    pub fn rearranged(&self) -> Result<RearrangedStep, PotentialError> {
        let abs: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        let measure = self.cell_measure() * self.values.len() as f64;
        let s = MeasurableSample::new(measure, &abs)?;
        Ok(RearrangedStep::from_sample(&s))
    }
}

/// Integral of G over the cell centred at 0: exact radial integral in one
/// dimension, the ball of equal volume otherwise.
fn singular_cell(kernel: &KernelSpec, n: usize, dx: f64) -> Result<f64, PotentialError> {
    let f = |z: f64| kernel.eval(z).unwrap_or(f64::NAN) * z.powi(n as i32 - 1);
    let r = if n == 1 {
        0.5 * dx
    } else {
        dx / unit_ball_volume(n).powf(1.0 / n as f64)
    };
    Ok(n as f64 * unit_ball_volume(n) * integrate(&f, 0.0, r, true, 1e-10)?.value)
}

/// u = G * f by product integration: f is constant on each cell, and the
/// kernel is integrated exactly over cells (n = 1) or sampled at cell
/// centres with the singular cell integrated radially (n = 2, 3).
pub fn convolve(kernel: &KernelSpec, f: &FieldSample) -> Result<FieldSample, PotentialError> {
    let n = f.n;
    if kernel.n() != n {
        return Err(PotentialError::InvalidParameter(format!(
            "kernel dimension {} against field dimension {n}",
            kernel.n()
        )));
    }
    let r = f.resolution;
    if n > 1 && r > MAX_RESOLUTION_MULTI {
        return Err(PotentialError::InvalidParameter(format!(
            "resolution {r} above {MAX_RESOLUTION_MULTI} in dimension {n}"
        )));
    }
    let dx = f.spacing();
    let centre = singular_cell(kernel, n, dx)?;
    let mass = n as f64 * unit_ball_volume(n) * kernel.radial_mass()?;
    let share = centre / mass;
    if share > SINGULAR_CELL_LIMIT {
        return Err(PotentialError::ResolutionTooCoarse { share });
    }
    // weights by |offset| along each axis
    let total = r.pow(n as u32);
    let weights: Vec<Result<f64, PotentialError>> = map_range(total, |idx| {
        let mut m = [0usize; 3];
        let mut rest = idx;
        for o in m.iter_mut().take(n) {
            *o = rest % r;
            rest /= r;
        }
        if m[..n].iter().all(|&d| d == 0) {
            return Ok(centre);
        }
        if n == 1 {
            let j = m[0] as f64;
            let phi = |z: f64| kernel.eval(z).unwrap_or(f64::NAN);
            return Ok(integrate(&phi, (j - 0.5) * dx, (j + 0.5) * dx, false, 1e-10)?.value);
        }
        let z = dx * m[..n].iter().map(|&d| (d * d) as f64).sum::<f64>().sqrt();
        Ok(kernel.eval(z)? * dx.powi(n as i32))
    });
    let weights = weights.into_iter().collect::<Result<Vec<_>, _>>()?;
    let support: Vec<usize> = (0..total).filter(|&j| f.values[j] != 0.0).collect();
    let values = map_range(total, |i| {
        let mi = f.multi_index(i);
        let mut acc = 0.0;
        for &j in &support {
            let mj = f.multi_index(j);
            let mut w_idx = 0;
            for a in (0..n).rev() {
                w_idx = w_idx * r + mi[a].abs_diff(mj[a]);
            }
            acc += weights[w_idx] * f.values[j];
        }
        acc
    });
    FieldSample::new(n, f.box_halfwidth, r, values)
}

/// A difference field: values on the points where every shifted argument
/// stays in the box, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Restricted {
    pub field: FieldSample,
    pub valid: Vec<bool>,
}

impl Restricted {
    pub fn sup_norm(&self) -> f64 {
        self.field
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .fold(0.0, |m, (v, _)| m.max(v.abs()))
    }

    /// One more first difference with the same step.
    pub fn difference(&self, steps: &[i64]) -> Result<Restricted, PotentialError> {
        let f = &self.field;
        let mut values = vec![0.0; f.values.len()];
        let mut valid = vec![false; f.values.len()];
        for i in 0..f.values.len() {
            if !self.valid[i] {
                continue;
            }
            let m = f.multi_index(i);
            let shifted: Vec<i64> = (0..f.n).map(|a| m[a] as i64 + steps[a]).collect();
            if let Some(j) = f.flat_index(&shifted) {
                if self.valid[j] {
                    values[i] = f.values[j] - f.values[i];
                    valid[i] = true;
                }
            }
        }
        if !valid.iter().any(|&v| v) {
            return Err(PotentialError::DomainExceeded {
                step: step_length(f, steps),
                k: 1,
            });
        }
        Ok(Restricted {
            field: FieldSample { values, ..f.clone() },
            valid,
        })
    }
}

fn step_length(f: &FieldSample, steps: &[i64]) -> f64 {
    f.spacing() * steps.iter().map(|&s| (s * s) as f64).sum::<f64>().sqrt()
}

fn binomial(k: u32, j: u32) -> f64 {
    (1..=j).fold(1.0, |acc, i| acc * (k - j + i) as f64 / i as f64)
}

/// Delta_h^k u(x) = sum_j C(k,j) (-1)^(k-j) u(x + j h) for h = steps * dx.
pub fn finite_difference(u: &FieldSample, steps: &[i64], k: u32) -> Result<Restricted, PotentialError> {
    if steps.len() != u.n {
        return Err(PotentialError::InvalidParameter(format!(
            "step has {} components in dimension {}",
            steps.len(),
            u.n
        )));
    }
    let coef: Vec<f64> = (0..=k)
        .map(|j| binomial(k, j) * if (k - j) % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let len = u.values.len();
    let per_point: Vec<Option<f64>> = map_range(len, |i| {
        let m = u.multi_index(i);
        let mut acc = 0.0;
        for (j, c) in coef.iter().enumerate() {
            let shifted: Vec<i64> = (0..u.n).map(|a| m[a] as i64 + j as i64 * steps[a]).collect();
            acc += c * u.values[u.flat_index(&shifted)?];
        }
        Some(acc)
    });
    if per_point.iter().all(|v| v.is_none()) {
        return Err(PotentialError::DomainExceeded {
            step: step_length(u, steps),
            k,
        });
    }
    let valid = per_point.iter().map(|v| v.is_some()).collect();
    let values = per_point.into_iter().map(|v| v.unwrap_or(0.0)).collect();
    Ok(Restricted {
        field: FieldSample { values, ..u.clone() },
        valid,
    })
}

/// `count` fixed unit directions: golden-angle on the circle, a
/// Fibonacci lattice on the sphere.
pub fn directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    (0..count)
        .map(|i| match n {
            1 => vec![1.0],
            2 => {
                let a = std::f64::consts::PI * (i as f64 * golden).fract();
                vec![a.cos(), a.sin()]
            }
            _ => {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
                let rho = (1.0 - z * z).sqrt();
                let a = 2.0 * std::f64::consts::PI * (i as f64 * golden).fract();
                vec![rho * a.cos(), rho * a.sin(), z]
            }
        })
        .collect()
}

/// Number of step magnitudes per direction in dimension 2 and 3.
const MAGNITUDES_MULTI: usize = 4;

/// The step vectors tried for omega_k(u; t): in one dimension +-t j/J
/// for j = 1..=J (J = `dirs`), otherwise `dirs` fixed unit directions
/// times t j/4.
fn trial_steps(n: usize, t: f64, dirs: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return (1..=dirs)
            .flat_map(|j| {
                let h = t * j as f64 / dirs as f64;
                [vec![h], vec![-h]]
            })
            .collect();
    }
    let mut out = Vec::new();
    for d in directions(n, dirs) {
        for j in 1..=MAGNITUDES_MULTI {
            let s = t * j as f64 / MAGNITUDES_MULTI as f64;
            out.push(d.iter().map(|c| c * s).collect());
        }
    }
    out
}

/// sup over grid points x with |x|_inf <= L - band of |Delta_h^k u(x)|,
/// off-grid values interpolated.
fn sup_difference(u: &FieldSample, h: &[f64], k: u32, band: f64) -> f64 {
    let lim = u.box_halfwidth - band;
    let coef: Vec<f64> = (0..=k)
        .map(|j| binomial(k, j) * if (k - j) % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let len = u.values.len();
    let mut best: f64 = 0.0;
    let mut y = vec![0.0; u.n];
    for i in 0..len {
        let x = u.coords(i);
        if x.iter().any(|c| c.abs() > lim + 1e-12) {
            continue;
        }
        let mut acc = 0.0;
        for (j, c) in coef.iter().enumerate() {
            for a in 0..u.n {
                y[a] = x[a] + j as f64 * h[a];
            }
            acc += c * u.interpolate(&y);
        }
        best = best.max(acc.abs());
    }
    best
}

/// omega_k(u; t) = sup_{|h| <= t} ||Delta_h^k u||, the sup over h taken
/// on the trial steps and the sup over x on grid points at distance k t
/// or more from the boundary.
pub fn modulus_of_smoothness(u: &FieldSample, k: u32, t: f64, dirs: usize) -> Result<f64, PotentialError> {
    modulus_with_band(u, k, t, dirs, k as f64 * t)
}

fn modulus_with_band(u: &FieldSample, k: u32, t: f64, dirs: usize, band: f64) -> Result<f64, PotentialError> {
    if !(t > 0.0) || dirs == 0 || k == 0 {
        return Err(PotentialError::InvalidParameter(format!(
            "need t > 0, k >= 1 and at least one direction (t = {t}, k = {k})"
        )));
    }
    if band >= u.box_halfwidth {
        return Err(PotentialError::DomainExceeded { step: t, k });
    }
    let steps = trial_steps(u.n, t, dirs);
    let sups = map_slice(&steps, |h| sup_difference(u, h, k, band));
    Ok(sups.into_iter().fold(0.0, f64::max))
}

/// omega_k(u; s) at increasing s, with a common boundary band k max(s)
/// and a running max so the curve is nondecreasing.
pub fn modulus_curve(u: &FieldSample, k: u32, ts: &[f64], dirs: usize) -> Result<Vec<f64>, PotentialError> {
    let top = ts.iter().copied().fold(0.0, f64::max);
    let band = k as f64 * top;
    let raw = ts
        .iter()
        .map(|&t| modulus_with_band(u, k, t, dirs, band))
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc: f64 = 0.0;
    Ok(raw
        .into_iter()
        .map(|v| {
            acc = acc.max(v);
            acc
        })
        .collect())
}

/// omega_k(u; t^(1/n)) on the points of a log grid over (0, T].
pub fn modulus_on_grid(u: &FieldSample, k: u32, grid: &LogGrid, dirs: usize) -> Result<SampledFunction, PotentialError> {
    let inv_n = 1.0 / u.n as f64;
    let hs: Vec<f64> = grid.points().iter().map(|t| t.powf(inv_n)).collect();
    let vals = modulus_curve(u, k, &hs, dirs)?;
    Ok(SampledFunction::new(
        grid.clone(),
        vals,
        Monotonicity::Increasing,
        Extension::ConstantBeyondT,
    )?)
}

/// Raw envelope values ||Omega(t, .)||_{E'(0,T)} at the grid points; the
/// upper and lower bounds are these values up to the constants c1, c2.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeBounds {
    pub upper: SampledFunction,
    pub lower: SampledFunction,
}

/// t -> ||Omega(t, .)||_{E'(0,T)} with Omega(t, tau) = phi(tau)/(1+(tau/t)^(k/n)).
pub fn omega_norm(space: &LorentzSpace, phi: &SampledFunction, k: u32, n: usize, t: f64) -> Result<f64, PotentialError> {
    let phi = space.on_grid(phi);
    let e = k as f64 / n as f64;
    let om = phi
        .map(|tau, f| f / (1.0 + (tau / t).powf(e)), Monotonicity::Decreasing)
        .with_extension(Extension::ZeroBeyondT);
    Ok(associate_norm(space, &om)?)
}

pub fn envelope_bounds(
    space: &LorentzSpace,
    phi: &SampledFunction,
    k: u32,
    n: usize,
    t_grid: &LogGrid,
) -> Result<EnvelopeBounds, PotentialError> {
    if k == 0 || n == 0 {
        return Err(PotentialError::InvalidParameter(format!("k = {k}, n = {n}")));
    }
    if !embedding_criterion(space, phi)?.embeds {
        return Err(PotentialError::NotEmbedded);
    }
    let vals = map_slice(t_grid.points(), |&t| omega_norm(space, phi, k, n, t))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let upper = SampledFunction::new(t_grid.clone(), vals, Monotonicity::Increasing, Extension::ConstantBeyondT)?;
    Ok(EnvelopeBounds {
        lower: upper.clone(),
        upper,
    })
}

/// D(t) = int_0^T Omega(t, tau) f*(tau) dtau for a step rearrangement.
pub struct ConeDenominator {
    phi: SampledFunction,
    e: f64,
}

impl ConeDenominator {
    pub fn new(kernel: &KernelSpec, k: u32, t_max: f64) -> Result<Self, PotentialError> {
        let grid = make_log_grid(1e-12 * t_max, t_max, 1200)?;
        Ok(ConeDenominator {
            phi: kernel.phi_sampled(&grid)?,
            e: k as f64 / kernel.n() as f64,
        })
    }

    pub fn eval(&self, fstar: &RearrangedStep, t: f64) -> Result<f64, PotentialError> {
        let e = self.e;
        let om = self.phi.map(|tau, f| f / (1.0 + (tau / t).powf(e)), Monotonicity::Decreasing);
        let cum = running_integral(&om, true)?;
        let t_max = self.phi.grid().t_max();
        let cell = fstar.cell_measure();
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (j, &level) in fstar.sorted().iter().enumerate() {
            let b = ((j + 1) as f64 * cell).min(t_max);
            let at_b = cum.eval(b);
            acc += level * (at_b - prev);
            prev = at_b;
            if b >= t_max || level == 0.0 {
                break;
            }
        }
        Ok(acc)
    }
}

/// Per-member ratio max_t omega_k(G*f; t^(1/n)) / D(t) and the family max.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverReport {
    pub ratios: Vec<f64>,
    pub worst_t: Vec<f64>,
    pub c1: f64,
}

pub fn upper_cone_check(
    space: &LorentzSpace,
    kernel: &KernelSpec,
    k: u32,
    family: &[FieldSample],
    t_grid: &LogGrid,
    dirs: usize,
) -> Result<CoverReport, PotentialError> {
    let den = ConeDenominator::new(kernel, k, space.t_max())?;
    let mut ratios = Vec::with_capacity(family.len());
    let mut worst_t = Vec::with_capacity(family.len());
    for f in family {
        let u = convolve(kernel, f)?;
        let omega = modulus_on_grid(&u, k, t_grid, dirs)?;
        let fstar = f.rearranged()?;
        let mut best = (0.0, t_grid.t_min());
        for (&t, &w) in t_grid.points().iter().zip(omega.values()) {
            let d = den.eval(&fstar, t)?;
            let r = if d > 0.0 { w / d } else { 0.0 };
            if r > best.0 {
                best = (r, t);
            }
        }
        ratios.push(best.0);
        worst_t.push(best.1);
    }
    let c1 = ratios.iter().copied().fold(0.0, f64::max);
    Ok(CoverReport { ratios, worst_t, c1 })
}

/// The lattice norm applied to omega_k(u; t^(1/n)).
#[derive(Debug, Clone, PartialEq)]
pub enum CalderonTarget {
    /// The optimal space X0.
    Optimal(OptimalNormSpec),
    /// (int_0^T (omega / t^(alpha/n - 1/q))^q dt/t)^(1/q).
    Besov { alpha: f64, q: f64, n: usize },
}

impl CalderonTarget {
    pub fn norm(&self, omega: &SampledFunction) -> Result<f64, PotentialError> {
        match self {
            CalderonTarget::Optimal(spec) => Ok(x0_norm(spec, omega)),
            CalderonTarget::Besov { alpha, q, n } => {
                let s = alpha / *n as f64 - 1.0 / q;
                let h = omega.map(|t, w| (w / t.powf(s)).powf(*q) / t, Monotonicity::None);
                if h.values().iter().all(|&v| v == 0.0) {
                    return Ok(0.0);
                }
                match h.integral_from_zero() {
                    Ok(v) => Ok(v.powf(1.0 / q)),
                    Err(QuadError::NonConvergent { .. }) => Ok(f64::INFINITY),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalderonNorm {
    pub sup_norm: f64,
    pub modulus_part: f64,
    pub total: f64,
}

/// ||u||_C + ||omega_k(u; t^(1/n))||_X over the points of `t_grid`
/// (which ends at T). Refuses a trivial space, i.e. ||t^(k/n)||_X = inf.
pub fn calderon_norm(
    u: &FieldSample,
    target: &CalderonTarget,
    k: u32,
    t_grid: &LogGrid,
    dirs: usize,
) -> Result<CalderonNorm, PotentialError> {
    let e = k as f64 / u.n as f64;
    let probe = SampledFunction::from_fn(t_grid, |t| t.powf(e), Monotonicity::Increasing, Extension::Analytic)?;
    if !target.norm(&probe)?.is_finite() {
        return Err(PotentialError::TrivialSpace);
    }
    let sup_norm = u.sup_norm();
    let omega = modulus_on_grid(u, k, t_grid, dirs)?;
    let modulus_part = target.norm(&omega)?;
    Ok(CalderonNorm {
        sup_norm,
        modulus_part,
        total: sup_norm + modulus_part,
    })
}

/// The reference f family in one dimension: 5 smooth bumps and 5
/// staircases with seeded parameters, supported in [-L/2, L/2].
pub fn f_family(box_halfwidth: f64, resolution: usize, seed: u64) -> Result<Vec<FieldSample>, PotentialError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * box_halfwidth;
    let mut out = Vec::with_capacity(10);
    for _ in 0..5 {
        let c: f64 = rng.gen_range(-0.5 * half..0.5 * half);
        let r: f64 = rng.gen_range(0.1 * half..0.5 * half);
        let a: f64 = rng.gen_range(0.5..2.0);
        out.push(FieldSample::from_fn(1, box_halfwidth, resolution, move |x| {
            let s = (x[0] - c) / r;
            if s.abs() < 1.0 {
                a * (-1.0 / (1.0 - s * s)).exp() * std::f64::consts::E
            } else {
                0.0
            }
        })?);
    }
    for _ in 0..5 {
        let steps = rng.gen_range(2..=5);
        let mut cuts: Vec<f64> = (0..=steps).map(|_| rng.gen_range(-half..half)).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let levels: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.2..2.0)).collect();
        out.push(FieldSample::from_fn(1, box_halfwidth, resolution, move |x| {
            (0..steps)
                .find(|&i| x[0] >= cuts[i] && x[0] < cuts[i + 1])
                .map(|i| levels[i])
                .unwrap_or(0.0)
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{psi_q, WeightSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn line(l: f64, res: usize, f: impl Fn(f64) -> f64 + Sync + Send) -> FieldSample {
        FieldSample::from_fn(1, l, res, move |x| f(x[0])).unwrap()
    }

    #[test]
    fn field_validation() {
        assert!(FieldSample::new(1, 1.0, 8, vec![0.0; 8]).is_err());
        assert!(FieldSample::new(1, 1.0, 16, vec![f64::NAN; 16]).is_err());
        assert!(FieldSample::new(4, 1.0, 16, vec![0.0; 16]).is_err());
        assert!(FieldSample::new(2, 1.0, 16, vec![0.0; 256]).is_ok());
    }

    #[test]
    fn differences_of_polynomials() {
        let u = line(2.0, 65, |x| x);
        let dx = u.spacing();
        let d = finite_difference(&u, &[3], 1).unwrap();
        for (v, &ok) in d.field.values().iter().zip(&d.valid) {
            if ok {
                assert!((v - 3.0 * dx).abs() < 1e-12);
            }
        }
        let u = line(2.0, 65, |x| x * x);
        let d = finite_difference(&u, &[2], 2).unwrap();
        let h = 2.0 * dx;
        for (v, &ok) in d.field.values().iter().zip(&d.valid) {
            if ok {
                assert!((v - 2.0 * h * h).abs() < 1e-12);
            }
        }
        for k in 1..5u32 {
            let u = line(1.0, 64, |x| (0..k).map(|p| (p as f64 + 1.0) * x.powi(p as i32)).sum());
            let d = finite_difference(&u, &[1], k).unwrap();
            assert!(d.sup_norm() < 1e-12, "k = {k}: {}", d.sup_norm());
        }
        assert!(matches!(
            finite_difference(&line(1.0, 16, |x| x), &[8], 2),
            Err(PotentialError::DomainExceeded { .. })
        ));
    }

    #[test]
    fn iterated_difference_identity() {
        let u = line(3.0, 200, |x| (2.0 * x).sin() + x * x * x);
        for k in 1..4u32 {
            let a = finite_difference(&u, &[5], k + 1).unwrap();
            let b = finite_difference(&u, &[5], k).unwrap().difference(&[5]).unwrap();
            assert_eq!(a.valid, b.valid);
            for (x, y) in a.field.values().iter().zip(b.field.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn modulus_of_sine() {
        let u = line(3.0 * PI, 4096, f64::sin);
        for t in [0.01, 0.3, 1.0, 2.0, 3.0] {
            let w = modulus_of_smoothness(&u, 1, t, 8).unwrap();
            assert!((w - 2.0 * (t / 2.0).sin()).abs() < 1e-3, "t = {t}: {w}");
        }
        let c = line(1.0, 32, |_| 4.0);
        assert_eq!(modulus_of_smoothness(&c, 2, 0.1, 4).unwrap(), 0.0);
    }

    #[test]
    fn modulus_curve_is_nondecreasing_and_bounded() {
        let u = line(2.0, 256, |x| (5.0 * x).sin() * (-x * x).exp());
        let ts: Vec<f64> = (1..20).map(|i| 0.02 * i as f64).collect();
        let w = modulus_curve(&u, 2, &ts, 6).unwrap();
        assert!(w.windows(2).all(|p| p[1] >= p[0]));
        assert!(w.iter().all(|&v| v <= 4.0 * u.sup_norm() + 1e-12));
    }

    #[test]
    fn modulus_in_two_dimensions() {
        let u = FieldSample::from_fn(2, 1.0, 48, |x| x[0] + 2.0 * x[1]).unwrap();
        let w = modulus_of_smoothness(&u, 1, 0.2, 32).unwrap();
        // sup over unit directions of |h . (1, 2)| = |h| sqrt 5, from below
        assert!(w <= 0.2 * 5f64.sqrt() + 1e-12 && w > 0.95 * 0.2 * 5f64.sqrt());
        let z = modulus_of_smoothness(&u, 2, 0.2, 32).unwrap();
        assert!(z < 1e-12);
    }

    #[test]
    fn convolution_is_positive_and_matches_kernel_under_refinement() {
        // G is singular at 0, so compare away from the origin
        let kernel = KernelSpec::bessel_alpha(1, 0.75).unwrap();
        let mut errs = Vec::new();
        for width in [0.2, 0.1, 0.05] {
            let f = line(3.0, 601, move |x| if x.abs() <= width / 2.0 { 1.0 / width } else { 0.0 });
            let u = convolve(&kernel, &f).unwrap();
            assert!(u.values().iter().all(|&v| v >= 0.0));
            let err = u
                .values()
                .iter()
                .enumerate()
                .filter(|(i, _)| u.coords(*i)[0].abs() >= 0.25)
                .map(|(i, &v)| (v - kernel.eval(u.coords(i)[0].abs()).unwrap()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn sup_bounded_by_hardy_littlewood() {
        // ||G*f||_C <= int_0^inf phi f*
        let kernel = KernelSpec::bessel_alpha(1, 0.75).unwrap();
        for f in f_family(2.0, 256, 7).unwrap() {
            let u = convolve(&kernel, &f).unwrap();
            let fs = f.rearranged().unwrap();
            let cell = fs.cell_measure();
            let bound: f64 = fs
                .sorted()
                .iter()
                .enumerate()
                .map(|(j, &l)| {
                    let ph = |tau: f64| kernel.phi(tau).unwrap();
                    l * integrate(&ph, j as f64 * cell, (j + 1) as f64 * cell, j == 0, 1e-9).unwrap().value
                })
                .sum();
            assert!(u.sup_norm() <= bound * (1.0 + 1e-6), "{} vs {bound}", u.sup_norm());
        }
    }

    #[test]
    fn coarse_grid_is_refused() {
        let kernel = KernelSpec::bessel_alpha(1, 0.75).unwrap();
        let f = line(50.0, 64, |x| if x.abs() < 1.0 { 1.0 } else { 0.0 });
        assert!(matches!(convolve(&kernel, &f), Err(PotentialError::ResolutionTooCoarse { .. })));
    }

    #[test]
    fn envelope_examples() {
        let grid = make_log_grid(1e-8, 1.0, 512).unwrap();
        let space = LorentzSpace::new(2.0, WeightSpec::uniform(1.0).unwrap(), &grid).unwrap();
        let alpha = 0.8;
        let phi = SampledFunction::from_fn(&grid, |t| t.powf(alpha - 1.0), Monotonicity::Decreasing, Extension::Analytic)
            .unwrap();
        let tg = make_log_grid(1e-6, 1.0, 41).unwrap();
        let env = envelope_bounds(&space, &phi, 1, 1, &tg).unwrap();
        let v = env.upper.values();
        assert!(v.windows(2).all(|p| p[1] >= p[0]));
        let full = associate_norm(&space, &phi.clone().with_extension(Extension::ZeroBeyondT)).unwrap();
        assert!(v[v.len() - 1] <= full && v[v.len() - 1] >= full / 2.0);
        // slope on (1e-6, 1e-2)
        let pts: Vec<(f64, f64)> = tg
            .points()
            .iter()
            .zip(v)
            .filter(|(&t, _)| t <= 1e-2 * (1.0 + 1e-9))
            .map(|(&t, &y)| (t.ln(), y.ln()))
            .collect();
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / m, sy / m);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - (alpha - 0.5)).abs() < 0.05, "slope {slope}");

        let q1 = LorentzSpace::new(1.0, WeightSpec::uniform(1.0).unwrap(), &grid).unwrap();
        assert!(matches!(envelope_bounds(&q1, &phi, 1, 1, &tg), Err(PotentialError::NotEmbedded)));
    }

    #[test]
    fn calderon_norm_of_constant_and_gate() {
        let grid = make_log_grid(1e-8, 1.0, 256).unwrap();
        let space = LorentzSpace::new(2.0, WeightSpec::uniform(1.0).unwrap(), &grid).unwrap();
        let phi = SampledFunction::from_fn(&grid, |t| t.powf(-0.25), Monotonicity::Decreasing, Extension::Analytic)
            .unwrap();
        let spec = OptimalNormSpec::from_psi(psi_q(&space, &phi).unwrap(), 2.0).unwrap();
        let tg = make_log_grid(1e-3, 1.0, 16).unwrap();
        let u = line(3.0, 64, |_| 2.5);
        let c = calderon_norm(&u, &CalderonTarget::Optimal(spec), 1, &tg, 4).unwrap();
        assert_eq!(c.total, 2.5);
        let besov = CalderonTarget::Besov { alpha: 0.75, q: 2.0, n: 1 };
        assert_eq!(calderon_norm(&u, &besov, 1, &tg, 4).unwrap().total, 2.5);
        // smoothness index beyond k: t^(k/n) is not in the space
        let trivial = CalderonTarget::Besov { alpha: 1.8, q: 2.0, n: 1 };
        assert!(matches!(calderon_norm(&u, &trivial, 1, &tg, 4), Err(PotentialError::TrivialSpace)));
    }

    #[test]
    fn cone_ratio_is_scale_free() {
        let grid = make_log_grid(1e-8, 1.0, 128).unwrap();
        let space = LorentzSpace::new(2.0, WeightSpec::uniform(1.0).unwrap(), &grid).unwrap();
        let kernel = KernelSpec::bessel_alpha(1, 0.75).unwrap();
        let tg = make_log_grid(0.05, 1.0, 8).unwrap();
        let f = f_family(2.0, 256, F_FAMILY_SEED).unwrap().remove(5);
        let a = upper_cone_check(&space, &kernel, 1, &[f.clone()], &tg, 4).unwrap();
        let b = upper_cone_check(&space, &kernel, 1, &[f.scaled(3.0)], &tg, 4).unwrap();
        assert!((a.c1 - b.c1).abs() < 1e-9 * a.c1);
        assert!(a.c1 > 0.0 && a.c1.is_finite());
    }

    #[test]
    fn denominator_of_indicator() {
        // f* = chi_(0,a): D(t) = int_0^a Omega(t, tau) dtau
        let kernel = KernelSpec::bessel_alpha(1, 0.75).unwrap();
        let den = ConeDenominator::new(&kernel, 1, 1.0).unwrap();
        let a = 0.25;
        let s = MeasurableSample::new(1.0, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let fs = RearrangedStep::from_sample(&s);
        for t in [1e-3, 0.1, 1.0] {
            let got = den.eval(&fs, t).unwrap();
            let om = |tau: f64| kernel.phi(tau).unwrap() / (1.0 + tau / t);
            let want = integrate(&om, 0.0, a, true, 1e-10).unwrap().value;
            assert!((got - want).abs() < 1e-4 * want, "t = {t}: {got} vs {want}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn subadditive_and_dilation(a in prop::collection::vec(-1.0f64..1.0, 6), t in 0.05f64..0.3) {
            let b = a.clone();
            let u = line(4.0, 256, move |x| a[0] * (x * (1.0 + a[1])).sin() + a[2] * (-x * x).exp());
            let v = line(4.0, 256, move |x| b[3] * (2.0 * x).cos() + b[4] * x / (1.0 + x * x) + b[5]);
            let s = u.add(&v).unwrap();
            let k = 2;
            let band = k as f64 * 3.0 * t;
            let m = |f: &FieldSample, r: f64| modulus_with_band(f, k, r, 12, band).unwrap();
            prop_assert!(m(&s, t) <= m(&u, t) + m(&v, t) + 1e-12);
            for lam in [0.5, 2.0, 3.0] {
                let bound = (1.0f64 + lam).powi(k as i32) * m(&u, t);
                prop_assert!(m(&u, lam * t) <= bound * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}
