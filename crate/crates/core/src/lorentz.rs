//! Weighted Lorentz spaces Lambda_q(v) and Marcinkiewicz norms: the weight
//! v, its primitive V, the dual weight w = V^-q' v, associate norms and
//! the embedding functional Psi_q.

use thiserror::Error;

use crate::gridfn::{
    classify_refinement, integrate_log_scale, nested_floors, running_integral,
    running_sup, Extension, Finiteness, GridError, LogGrid, Monotonicity, QuadError,
    SampledFunction, SupWindow, TailModel, QUAD_TOL,
};
use crate::kernels::{KernelError, SlowlyVaryingSpec};
use crate::rearrange::{maximal_function, RearrangeError};

/// Threshold on the increase ratio of V(t)/t for the q = 1 norm condition.
pub const ALMOST_DECREASING_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LorentzError {
    #[error("Lambda_q(v) is trivial: {0}")]
    TrivialSpace(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("finiteness undecided under refinement, values {values:?}")]
    Inconclusive { values: Vec<f64> },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Rearrange(#[from] RearrangeError),
}

/// How v continues past T.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Continuation {
    /// v(t) = v(T) (t/T)^a
    PowerExtend,
    /// v(t) = v(T)
    Constant,
}

/// v(t) = t^a lambda(t) on (0, T], continued past T by `beyond_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    power_exponent: f64,
    sv: SlowlyVaryingSpec,
    beyond_t: Continuation,
    t_max: f64,
}

impl WeightSpec {
    pub fn new(
        power_exponent: f64,
        sv: SlowlyVaryingSpec,
        beyond_t: Continuation,
        t_max: f64,
    ) -> Result<Self, LorentzError> {
        if !power_exponent.is_finite() {
            return Err(LorentzError::InvalidParameter(format!(
                "weight exponent must be finite, got {power_exponent}"
            )));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(LorentzError::InvalidParameter(format!(
                "T must be positive and finite, got {t_max}"
            )));
        }
        Ok(WeightSpec {
            power_exponent,
            sv: sv.with_reference(t_max),
            beyond_t,
            t_max,
        })
    }

    /// v = 1.
    pub fn uniform(t_max: f64) -> Result<Self, LorentzError> {
        WeightSpec::power(0.0, t_max)
    }

    /// v(t) = t^a.
    pub fn power(a: f64, t_max: f64) -> Result<Self, LorentzError> {
        WeightSpec::new(
            a,
            SlowlyVaryingSpec::constant(t_max),
            Continuation::PowerExtend,
            t_max,
        )
    }

    /// v(t) = t^(q/p - 1) b(t)^q.
    pub fn lorentz_karamata(
        q: f64,
        p: f64,
        b: &SlowlyVaryingSpec,
        t_max: f64,
    ) -> Result<Self, LorentzError> {
        if !(p > 0.0) || !(q >= 1.0) {
            return Err(LorentzError::InvalidParameter(format!(
                "need p > 0 and q >= 1, got p = {p}, q = {q}"
            )));
        }
        WeightSpec::new(q / p - 1.0, b.powered(q), Continuation::PowerExtend, t_max)
    }

    pub fn with_continuation(mut self, beyond_t: Continuation) -> Self {
        self.beyond_t = beyond_t;
        self
    }

    pub fn power_exponent(&self) -> f64 {
        self.power_exponent
    }

    pub fn sv(&self) -> &SlowlyVaryingSpec {
        &self.sv
    }

    pub fn continuation(&self) -> Continuation {
        self.beyond_t
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    fn ln_v_inside(&self, t: f64) -> f64 {
        self.power_exponent * t.ln() + self.sv.ln_eval(t)
    }

    /// v(t) for t in (0, inf).
    pub fn v(&self, t: f64) -> f64 {
        let big_t = self.t_max;
        if t <= big_t {
            return self.ln_v_inside(t).exp();
        }
        let at_t = self.ln_v_inside(big_t).exp();
        match self.beyond_t {
            Continuation::PowerExtend => at_t * (t / big_t).powf(self.power_exponent),
            Continuation::Constant => at_t,
        }
    }

    /// V(t) = int_0^t v.
    pub fn cap_v(&self, t: f64) -> Result<f64, LorentzError> {
        let big_t = self.t_max;
        if t <= big_t {
            return self.cap_v_inside(t);
        }
        Ok(self.cap_v_inside(big_t)? + self.beyond_integral(t))
    }

    /// V(inf), +inf for both continuations unless v decays fast enough.
    pub fn cap_v_infinity(&self) -> Result<f64, LorentzError> {
        let a = self.power_exponent;
        match self.beyond_t {
            Continuation::PowerExtend if a < -1.0 => {
                let big_t = self.t_max;
                let extra = self.v(big_t) * big_t / (-a - 1.0);
                Ok(self.cap_v_inside(big_t)? + extra)
            }
            _ => Ok(f64::INFINITY),
        }
    }

    /// int_T^t v for t > T.
    pub(crate) fn beyond_integral(&self, t: f64) -> f64 {
        let big_t = self.t_max;
        let vt = self.v(big_t);
        let a = self.power_exponent;
        match self.beyond_t {
            Continuation::Constant => vt * (t - big_t),
            Continuation::PowerExtend => {
                let a1 = a + 1.0;
                if a1.abs() < 1e-12 {
                    vt * big_t * (t / big_t).ln()
                } else {
                    vt * big_t * ((t / big_t).powf(a1) - 1.0) / a1
                }
            }
        }
    }

    fn cap_v_inside(&self, t: f64) -> Result<f64, LorentzError> {
        let a1 = self.power_exponent + 1.0;
        let (b, c) = self.sv.exponents();
        if a1 < -1e-12 {
            return Err(LorentzError::TrivialSpace(format!(
                "v ~ t^{} is not integrable at 0",
                self.power_exponent
            )));
        }
        if self.sv.is_constant() {
            if a1.abs() <= 1e-12 {
                return Err(LorentzError::TrivialSpace("v ~ 1/t".into()));
            }
            return Ok(t.powf(a1) / a1);
        }
        if a1.abs() <= 1e-12 {
            let diverges = b > -1.0 || (b == -1.0 && c >= -1.0);
            if diverges {
                return Err(LorentzError::TrivialSpace(format!(
                    "v ~ l^{b} / t is not integrable at 0"
                )));
            }
            if c == 0.0 {
                let l = 1.0 + (self.t_max / t).ln();
                return Ok(l.powf(b + 1.0) / (-b - 1.0));
            }
        }
        let g = |s: f64| (a1 * s + self.sv.ln_eval_log(s)).exp();
        Ok(integrate_log_scale(&g, f64::NEG_INFINITY, t.ln(), QUAD_TOL)?.value)
    }
}

/// int_a^b f(t) dt for 0 < a < b, computed on the log scale.
fn log_quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let g = |s: f64| {
        let t = s.exp();
        let v = f(t);
        if v == 0.0 {
            0.0
        } else {
            t * v
        }
    };
    Ok(integrate_log_scale(&g, a.ln(), b.ln(), QUAD_TOL)?.value)
}

/// Integral of f over (0, T] of the grid: cellwise quadrature of the
/// closure plus the tail model of its samples below t_min.
fn grid_quad<F: Fn(f64) -> f64 + Sync + Send>(grid: &LogGrid, f: F) -> Result<f64, LorentzError> {
    let pts = grid.points();
    let cells = crate::par::map_range(pts.len() - 1, |i| log_quad(&f, pts[i], pts[i + 1]));
    let mut total = 0.0;
    for c in cells {
        total += c?;
    }
    let samples = SampledFunction::from_fn(grid, &f, Monotonicity::None, Extension::ZeroBeyondT)?;
    match samples.tail_below() {
        Ok(head) => Ok(total + head),
        Err(_) => Ok(f64::INFINITY),
    }
}

/// V sampled on the grid.
pub fn cumulative_weight(weight: &WeightSpec, grid: &LogGrid) -> Result<SampledFunction, LorentzError> {
    let pts = grid.points();
    let closed_form = weight.sv.is_constant();
    let values = if closed_form {
        let v: Result<Vec<f64>, _> = pts.iter().map(|&t| weight.cap_v(t)).collect();
        v?
    } else {
        let head = weight.cap_v(pts[0])?;
        let cells = crate::par::map_range(pts.len() - 1, |i| {
            log_quad(|t| weight.v(t), pts[i], pts[i + 1])
        });
        let mut out = Vec::with_capacity(pts.len());
        out.push(head);
        for c in cells {
            let last = out[out.len() - 1];
            out.push(last + c?);
        }
        out
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LorentzError::TrivialSpace("V(t) = inf".into()));
    }
    Ok(SampledFunction::new(
        grid.clone(),
        values,
        Monotonicity::Increasing,
        Extension::Analytic,
    )?)
}

/// Lambda_q(v) over a grid on (0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzSpace {
    q: f64,
    weight: WeightSpec,
    cap_v: SampledFunction,
    w: Option<SampledFunction>,
}

impl LorentzSpace {
    pub fn new(q: f64, weight: WeightSpec, grid: &LogGrid) -> Result<Self, LorentzError> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(LorentzError::InvalidParameter(format!(
                "q must lie in [1, inf), got {q}"
            )));
        }
        if (grid.t_max() - weight.t_max).abs() > 1e-12 * weight.t_max {
            return Err(LorentzError::InvalidParameter(format!(
                "grid ends at {} but the weight is set up for T = {}",
                grid.t_max(),
                weight.t_max
            )));
        }
        let cap_v = cumulative_weight(&weight, grid)?;
        let w = if q > 1.0 {
            let qp = q / (q - 1.0);
            let vals = grid
                .points()
                .iter()
                .zip(cap_v.values())
                .map(|(&t, &big)| big.powf(-qp) * weight.v(t))
                .collect();
            Some(SampledFunction::new(
                grid.clone(),
                vals,
                Monotonicity::None,
                Extension::Analytic,
            )?)
        } else {
            None
        };
        Ok(LorentzSpace {
            q,
            weight,
            cap_v,
            w,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// q' = q/(q-1), +inf for q = 1.
    pub fn q_prime(&self) -> f64 {
        if self.q == 1.0 {
            f64::INFINITY
        } else {
            self.q / (self.q - 1.0)
        }
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn grid(&self) -> &LogGrid {
        self.cap_v.grid()
    }

    pub fn t_max(&self) -> f64 {
        self.weight.t_max
    }

    /// V sampled on the grid.
    pub fn cap_v(&self) -> &SampledFunction {
        &self.cap_v
    }

    /// w = V^-q' v sampled on the grid (q > 1 only).
    pub fn w(&self) -> Option<&SampledFunction> {
        self.w.as_ref()
    }

    /// w(t) at any t > 0 (q > 1).
    pub fn w_at(&self, t: f64) -> Result<f64, LorentzError> {
        let qp = self.q_prime();
        Ok(self.weight.cap_v(t)?.powf(-qp) * self.weight.v(t))
    }

    /// V(t) from the samples inside the grid and in closed form past T.
    pub fn cap_v_at(&self, t: f64) -> f64 {
        if t <= self.t_max() {
            self.cap_v.eval(t)
        } else {
            self.cap_v.last() + self.weight.beyond_integral(t)
        }
    }

    /// int_T^inf w = (V(T)^(1-q') - V(inf)^(1-q')) / (q' - 1).
    pub fn w_tail(&self) -> Result<f64, LorentzError> {
        let qp = self.q_prime();
        if qp.is_infinite() {
            return Err(LorentzError::InvalidParameter("w needs q > 1".into()));
        }
        let at_t = self.weight.cap_v(self.t_max())?;
        let at_inf = self.weight.cap_v_infinity()?;
        let far = if at_inf.is_infinite() {
            0.0
        } else {
            at_inf.powf(1.0 - qp)
        };
        Ok((at_t.powf(1.0 - qp) - far) / (qp - 1.0))
    }

    /// Same space on the grid restricted to [t_floor, T].
    pub fn restrict_from(&self, t_floor: f64) -> Result<Self, LorentzError> {
        Ok(LorentzSpace {
            q: self.q,
            weight: self.weight.clone(),
            cap_v: self.cap_v.restrict_from(t_floor)?,
            w: match &self.w {
                Some(w) => Some(w.restrict_from(t_floor)?),
                None => None,
            },
        })
    }

    /// `f` on this space's grid, resampling if it lives on another one.
    pub fn on_grid(&self, f: &SampledFunction) -> SampledFunction {
        if f.grid() == self.grid() {
            return f.clone();
        }
        let vals = self.grid().points().iter().map(|&t| f.eval(t)).collect();
        SampledFunction::new(self.grid().clone(), vals, f.monotonicity(), f.extension())
            .unwrap_or_else(|_| {
                let vals = self.grid().points().iter().map(|&t| f.eval(t)).collect();
                SampledFunction::new(self.grid().clone(), vals, Monotonicity::None, f.extension())
                    .expect("lengths match")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConditions {
    pub ok: bool,
    pub c: f64,
}

/// For q > 1: c = sup_t t^q int_t^inf tau^-q v / V(t). For q = 1: the
/// largest increase of V(t)/t over ordered grid pairs.
pub fn check_norm_conditions(space: &LorentzSpace) -> Result<NormConditions, LorentzError> {
    let pts = space.grid().points();
    let cap_v = space.cap_v().values();
    let q = space.q;
    if q == 1.0 {
        let mut low = f64::INFINITY;
        let mut c: f64 = 1.0;
        for (&t, &big) in pts.iter().zip(cap_v) {
            let r = big / t;
            low = low.min(r);
            c = c.max(r / low);
        }
        return Ok(NormConditions {
            ok: c < ALMOST_DECREASING_LIMIT,
            c,
        });
    }
    let weight = &space.weight;
    let big_t = space.t_max();
    let a = weight.power_exponent;
    let vt = weight.v(big_t);
    let beyond = match weight.beyond_t {
        Continuation::Constant => vt * big_t.powf(1.0 - q) / (q - 1.0),
        Continuation::PowerExtend => {
            if a < q - 1.0 {
                vt * big_t.powf(1.0 - q) / (q - a - 1.0)
            } else {
                f64::INFINITY
            }
        }
    };
    let cells = crate::par::map_range(pts.len() - 1, |i| {
        log_quad(|t| t.powf(-q) * weight.v(t), pts[i], pts[i + 1])
    });
    let mut tail = vec![0.0; pts.len()];
    tail[pts.len() - 1] = beyond;
    for i in (0..pts.len() - 1).rev() {
        tail[i] = tail[i + 1] + cells[i].clone()?;
    }
    let c = pts
        .iter()
        .zip(cap_v)
        .zip(&tail)
        .map(|((&t, &big), &i)| t.powf(q) * i / big)
        .fold(0.0, f64::max);
    Ok(NormConditions {
        ok: c.is_finite(),
        c,
    })
}

/// (int_0^inf f*^q v)^(1/q); past T the extension tag of `fstar` applies.
pub fn lorentz_norm(space: &LorentzSpace, fstar: &SampledFunction) -> Result<f64, LorentzError> {
    let q = space.q;
    let weight = &space.weight;
    let fstar = space.on_grid(fstar);
    let body = grid_quad(space.grid(), |t| {
        let f = fstar.eval(t);
        if f == 0.0 {
            0.0
        } else {
            f.powf(q) * weight.v(t)
        }
    })?;
    let big_t = space.t_max();
    let beyond = match fstar.extension() {
        Extension::ZeroBeyondT => 0.0,
        _ if fstar.last() == 0.0 => 0.0,
        Extension::ConstantBeyondT => {
            if weight.cap_v_infinity()?.is_infinite() {
                f64::INFINITY
            } else {
                fstar.last().powf(q) * (weight.cap_v_infinity()? - weight.cap_v(big_t)?)
            }
        }
        Extension::Analytic => {
            // f* continues as f(T) (t/T)^p through the last two samples
            let pts = fstar.points();
            let m = pts.len();
            let (f1, f2) = (fstar.values()[m - 2], fstar.last());
            let p = if f1 > 0.0 && f2 > 0.0 {
                (f2 / f1).ln() / (pts[m - 1] / pts[m - 2]).ln()
            } else {
                0.0
            };
            let a = match weight.continuation() {
                Continuation::PowerExtend => weight.power_exponent(),
                Continuation::Constant => 0.0,
            };
            let e = p * q + a + 1.0;
            if e >= 0.0 {
                f64::INFINITY
            } else {
                f2.powf(q) * weight.v(big_t) * big_t / -e
            }
        }
    };
    Ok((body + beyond).powf(1.0 / q))
}

/// sup_t f**(t) v(t) over the grid of `fstar`.
pub fn marcinkiewicz_norm<V: Fn(f64) -> f64>(
    v: V,
    fstar: &SampledFunction,
) -> Result<f64, LorentzError> {
    if fstar.values().iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let fss = maximal_function(fstar)?;
    Ok(fss
        .points()
        .iter()
        .zip(fss.values())
        .map(|(&t, &f)| f * v(t))
        .fold(0.0, f64::max))
}

/// Associate norm of a decreasing g* (zero beyond T unless tagged
/// otherwise): sup V^-1 int_0^t g* for q = 1 and
/// (int_0^inf (int_0^t g*)^q' w)^(1/q') for q > 1.
pub fn associate_norm(space: &LorentzSpace, gstar: &SampledFunction) -> Result<f64, LorentzError> {
    let gstar = space.on_grid(gstar).with_extension(Extension::ZeroBeyondT);
    let cum = match running_integral(&gstar, true) {
        Ok(c) => c,
        Err(_) => return Ok(f64::INFINITY),
    };
    let cap_v = space.cap_v();
    let total = cum.last();
    if space.q == 1.0 {
        let vals: Vec<f64> = cum
            .values()
            .iter()
            .zip(cap_v.values())
            .map(|(&g, &big)| g / big)
            .collect();
        let ratio = SampledFunction::new(
            space.grid().clone(),
            vals,
            Monotonicity::None,
            Extension::ZeroBeyondT,
        )?;
        let at_zero = if cum.values()[0] > 0.0 {
            ratio.limit_at_zero()
        } else {
            0.0
        };
        let inside = ratio.values().iter().copied().fold(at_zero, f64::max);
        let beyond = total / cap_v.last();
        return Ok(inside.max(beyond));
    }
    let qp = space.q_prime();
    let w = space.w().expect("q > 1 has w");
    let vals: Vec<f64> = cum
        .values()
        .iter()
        .zip(w.values())
        .map(|(&g, &wt)| g.powf(qp) * wt)
        .collect();
    let h = SampledFunction::new(space.grid().clone(), vals, Monotonicity::None, Extension::ZeroBeyondT)?;
    let body = match h.integral_from_zero() {
        Ok(v) => v,
        Err(_) => return Ok(f64::INFINITY),
    };
    let beyond = total.powf(qp) * space.w_tail()?;
    Ok((body + beyond).powf(1.0 / qp))
}

/// W(t) = V(t)^-1 int_0^t phi.
pub fn w_function(space: &LorentzSpace, phi: &SampledFunction) -> Result<SampledFunction, LorentzError> {
    let phi = space.on_grid(phi);
    let cum = running_integral(&phi, true)?;
    let vals = cum
        .values()
        .iter()
        .zip(space.cap_v().values())
        .map(|(&i, &big)| i / big)
        .collect();
    Ok(SampledFunction::new(
        space.grid().clone(),
        vals,
        Monotonicity::None,
        Extension::Analytic,
    )?)
}

/// Psi_1(t) = sup_(0,t] W and Psi_q(t) = (int_0^t W^q' v)^(1/q') for q > 1.
/// A divergent integral at 0 gives Psi_q = +inf everywhere.
pub fn psi_q(space: &LorentzSpace, phi: &SampledFunction) -> Result<SampledFunction, LorentzError> {
    let w = match w_function(space, phi) {
        Ok(w) => w,
        Err(LorentzError::Quad(QuadError::NonConvergent { .. })) => {
            return Ok(all_infinite(space.grid())?)
        }
        Err(e) => return Err(e),
    };
    psi_q_from_w(space, &w)
}

fn all_infinite(grid: &LogGrid) -> Result<SampledFunction, GridError> {
    SampledFunction::new(
        grid.clone(),
        vec![f64::INFINITY; grid.count()],
        Monotonicity::Increasing,
        Extension::ConstantBeyondT,
    )
}

/// Psi_q built from a given W, e.g. the equivalent form
/// V(t)^-1 t^(alpha/n) lambda(t) used when alpha = k.
pub fn psi_q_from_w(space: &LorentzSpace, w: &SampledFunction) -> Result<SampledFunction, LorentzError> {
    let grid = space.grid().clone();
    let all_inf = || all_infinite(&grid);
    let w = space.on_grid(w);
    if space.q == 1.0 {
        let at_zero = w.limit_at_zero();
        let sup = running_sup(&w, SupWindow::UpTo);
        let vals = sup.values().iter().map(|&s| s.max(at_zero)).collect();
        return Ok(SampledFunction::new(
            grid,
            vals,
            Monotonicity::Increasing,
            Extension::ConstantBeyondT,
        )?);
    }
    let qp = space.q_prime();
    let h = integrand_psi(space, &w, qp);
    let cum = match running_integral(&h, true) {
        Ok(c) => c,
        Err(QuadError::NonConvergent { .. }) => return Ok(all_inf()?),
        Err(e) => return Err(e.into()),
    };
    let vals = cum.values().iter().map(|&c| c.powf(1.0 / qp)).collect();
    Ok(SampledFunction::new(
        grid,
        vals,
        Monotonicity::Increasing,
        Extension::ConstantBeyondT,
    )?)
}

fn integrand_psi(space: &LorentzSpace, w: &SampledFunction, qp: f64) -> SampledFunction {
    let weight = &space.weight;
    w.map(|t, wt| wt.powf(qp) * weight.v(t), Monotonicity::None)
}

/// Psi_q(T) for q = 1, Psi_q(T)^q' for q > 1 (the quantity whose
/// finiteness is classified).
fn psi_power_at_t(space: &LorentzSpace, phi: &SampledFunction) -> Result<f64, LorentzError> {
    let w = match w_function(space, phi) {
        Ok(w) => w,
        Err(LorentzError::Quad(QuadError::NonConvergent { .. })) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    if space.q == 1.0 {
        let at_zero = match TailModel::fit(&w) {
            Some(m) => m.limit_at_zero(),
            None => w.values()[0],
        };
        return Ok(w.values().iter().copied().fold(at_zero, f64::max));
    }
    let h = integrand_psi(space, &w, space.q_prime());
    Ok(h.integral_from_zero().unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub embeds: bool,
    pub psi_at_t: f64,
    /// Psi_q(T) (q = 1) or Psi_q(T)^q' on the nested floors, coarse first.
    pub refinement: Vec<f64>,
}

/// Finiteness of Psi_q(T), judged from the nested floors of the grid.
pub fn embedding_criterion(space: &LorentzSpace, phi: &SampledFunction) -> Result<Embedding, LorentzError> {
    let phi = space.on_grid(phi);
    let mut refinement = Vec::with_capacity(3);
    for floor in nested_floors(space.grid()) {
        let sub = space.restrict_from(floor)?;
        let phi_sub = phi.restrict_from(floor)?;
        refinement.push(psi_power_at_t(&sub, &phi_sub)?);
    }
    let root = if space.q == 1.0 {
        1.0
    } else {
        1.0 / space.q_prime()
    };
    let finest = refinement[refinement.len() - 1];
    match classify_refinement(&refinement) {
        Finiteness::Finite => Ok(Embedding {
            embeds: true,
            psi_at_t: finest.powf(root),
            refinement,
        }),
        Finiteness::Infinite => Ok(Embedding {
            embeds: false,
            psi_at_t: f64::INFINITY,
            refinement,
        }),
        Finiteness::Inconclusive => Err(LorentzError::Inconclusive { values: refinement }),
    }
}
