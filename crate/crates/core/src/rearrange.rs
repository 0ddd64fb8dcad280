//! Decreasing rearrangement f* and the maximal function f**.
//!
//! Inputs are equal-measure cells: a list of values of |f| plus the total
//! measure of the domain. Rearranging is then a sort.

use thiserror::Error;

use crate::gridfn::{
    make_log_grid, running_integral, Extension, GridError, LogGrid, Monotonicity, QuadError,
    SampledFunction, DEFAULT_FLOOR, DEFAULT_POINTS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RearrangeError {
    #[error("sample has no cells")]
    EmptySample,
    #[error("domain measure must be positive and finite, got {0}")]
    BadMeasure(f64),
    #[error("sample value at cell {0} is not finite")]
    NonFinite(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurableSample {
    domain_measure: f64,
    samples: Vec<f64>,
}

impl MeasurableSample {
    /// Stores |value| for every cell.
    pub fn new(domain_measure: f64, samples: &[f64]) -> Result<Self, RearrangeError> {
        if samples.is_empty() {
            return Err(RearrangeError::EmptySample);
        }
        if !(domain_measure > 0.0) || !domain_measure.is_finite() {
            return Err(RearrangeError::BadMeasure(domain_measure));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(RearrangeError::NonFinite(i));
        }
        Ok(MeasurableSample {
            domain_measure,
            samples: samples.iter().map(|v| v.abs()).collect(),
        })
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain_measure
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn cell_measure(&self) -> f64 {
        self.domain_measure / self.samples.len() as f64
    }

    /// Measure of {|f| > level}.
    pub fn distribution(&self, level: f64) -> f64 {
        self.samples.iter().filter(|&&v| v > level).count() as f64 * self.cell_measure()
    }

    /// Integral of |f| over the domain.
    pub fn mass(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.cell_measure()
    }
}

/// f* as an exact step function: `sorted[j]` on [j c, (j+1) c), zero past
/// the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RearrangedStep {
    cell: f64,
    sorted: Vec<f64>,
}

impl RearrangedStep {
    pub fn from_sample(f: &MeasurableSample) -> Self {
        let mut sorted = f.samples.clone();
        crate::par::sort_desc(&mut sorted);
        RearrangedStep {
            cell: f.cell_measure(),
            sorted,
        }
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn cell_measure(&self) -> f64 {
        self.cell
    }

    pub fn domain_measure(&self) -> f64 {
        self.cell * self.sorted.len() as f64
    }

    /// Right-continuous value at s >= 0.
    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 {
            return self.sorted[0];
        }
        let j = (s / self.cell).floor();
        if j >= self.sorted.len() as f64 {
            0.0
        } else {
            self.sorted[j as usize]
        }
    }

    /// Value at s in (0, M], reading s = M as the last cell.
    pub fn eval_closed(&self, s: f64) -> f64 {
        if s >= self.domain_measure() {
            self.sorted[self.sorted.len() - 1]
        } else {
            self.eval(s)
        }
    }

    /// int_0^t f*.
    pub fn integral_up_to(&self, t: f64) -> f64 {
        let full = (t / self.cell).floor().max(0.0) as usize;
        let full = full.min(self.sorted.len());
        let mut s: f64 = self.sorted[..full].iter().sum::<f64>() * self.cell;
        if full < self.sorted.len() {
            s += self.sorted[full] * (t - full as f64 * self.cell).max(0.0);
        }
        s
    }

    /// f**(t) = t^-1 int_0^t f*, exactly.
    pub fn maximal(&self, t: f64) -> f64 {
        self.integral_up_to(t) / t
    }

    /// Measure of {f* > level}.
    pub fn distribution(&self, level: f64) -> f64 {
        self.sorted.iter().take_while(|&&v| v > level).count() as f64 * self.cell
    }

    /// Sample onto a grid over (0, M]; the extension beyond M is zero.
    pub fn to_sampled(&self, grid: &LogGrid) -> SampledFunction {
        let values = grid.points().iter().map(|&t| self.eval_closed(t)).collect();
        SampledFunction::new(grid.clone(), values, Monotonicity::Decreasing, Extension::ZeroBeyondT)
            .expect("sorted values are decreasing")
    }
}

/// f* of the sample on the default grid [1e-8 M, M].
pub fn decreasing_rearrangement(f: &MeasurableSample) -> Result<SampledFunction, RearrangeError> {
    let m = f.domain_measure();
    let grid = make_log_grid(DEFAULT_FLOOR * m, m, DEFAULT_POINTS)?;
    Ok(RearrangedStep::from_sample(f).to_sampled(&grid))
}

/// f** = t^-1 int_0^t f* for a decreasing sampled f*.
///
/// The contribution below the grid floor is never taken smaller than
/// f*(t_min) t_min, which keeps f* <= f** exact on the grid.
pub fn maximal_function(fstar: &SampledFunction) -> Result<SampledFunction, RearrangeError> {
    if fstar.monotonicity() != Monotonicity::Decreasing {
        // re-validate, the tag may simply be missing
        SampledFunction::new(
            fstar.grid().clone(),
            fstar.values().to_vec(),
            Monotonicity::Decreasing,
            fstar.extension(),
        )?;
    }
    let integral = running_integral(fstar, true)?;
    let t0 = fstar.grid().t_min();
    let floor = fstar.values()[0] * t0;
    let shift = (floor - integral.values()[0]).max(0.0);
    let values: Vec<f64> = integral
        .points()
        .iter()
        .zip(integral.values())
        .map(|(&t, &i)| (i + shift) / t)
        .collect();
    Ok(SampledFunction::new(
        fstar.grid().clone(),
        values,
        Monotonicity::Decreasing,
        Extension::Analytic,
    )?)
}
