//! Radial kernels Phi, their volume reparametrization phi, the cone kernel
//! Omega, slowly varying factors and the derivative conditions on Phi.

use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::gridfn::{
    integrate, integrate_log_scale, make_log_grid, Extension, GridError, LogGrid, Monotonicity,
    QuadError, SampledFunction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("numerical derivative unstable at z = {z:e} (relative disagreement {disagreement:e})")]
    DerivativeUnstable { z: f64, disagreement: f64 },
}

/// Volume of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    if n == 1 {
        return 2.0;
    }
    let h = n as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselK {
    pub value: f64,
    /// Set when the argument is so large that the value underflows to 0.
    pub underflow: bool,
}

/// Arguments above this underflow to zero.
pub const BESSEL_UNDERFLOW_ARG: f64 = 700.0;

/// K_nu(rho) from
/// K_nu(rho) = 1/2 (rho/2)^nu int_0^inf xi^(-nu-1) exp(-xi - rho^2/(4 xi)) dxi,
/// integrated in s = ln xi around the peak of the integrand.
pub fn bessel_k_checked(nu: f64, rho: f64) -> Result<BesselK, KernelError> {
    if !(rho > 0.0) || !nu.is_finite() {
        return Err(KernelError::InvalidParameter(format!(
            "bessel K needs rho > 0 and finite nu, got nu = {nu}, rho = {rho}"
        )));
    }
    if rho > BESSEL_UNDERFLOW_ARG {
        return Ok(BesselK {
            value: 0.0,
            underflow: true,
        });
    }
    // rho^2/4 e^-s kept in log form so tiny rho does not underflow
    let ln_q = 2.0 * (rho / 2.0).ln();
    let h = |s: f64| -nu * s - s.exp() - (ln_q - s).exp();
    // h'(s) = -nu - e^s + q e^-s = 0, root written without cancellation
    let root = (nu * nu + rho * rho).sqrt();
    let peak = if nu > 0.0 {
        2.0 * rho.ln() - (2.0 * (nu + root)).ln()
    } else {
        ((root - nu) / 2.0).ln()
    };
    let top = h(peak);
    let g = |u: f64| (h(peak + u) - top).exp();
    let left = integrate_log_scale(&g, f64::NEG_INFINITY, 0.0, 1e-13)?;
    let right = integrate_log_scale(&g, 0.0, f64::INFINITY, 1e-13)?;
    let ln_k = 0.5f64.ln() + nu * (rho / 2.0).ln() + top + (left.value + right.value).ln();
    let value = ln_k.exp();
    Ok(BesselK {
        value,
        underflow: value == 0.0,
    })
}

/// K_nu(rho), zero past the underflow threshold.
pub fn bessel_k(nu: f64, rho: f64) -> Result<f64, KernelError> {
    bessel_k_checked(nu, rho).map(|k| k.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvKind {
    /// l(t) = 1 + ln(T/t)
    Log,
    /// 1 + ln(l(t))
    LogLog,
}

/// lambda(t) = prod l_kind(t)^exponent, with l_log(t) = 1 + ln(T/t) = ln(eT/t)
/// and l_loglog(t) = 1 + ln(l_log(t)). Both factors are >= 1 on (0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct SlowlyVaryingSpec {
    factors: Vec<(SvKind, f64)>,
    t_ref: f64,
}

impl SlowlyVaryingSpec {
    pub fn new(factors: Vec<(SvKind, f64)>, t_ref: f64) -> Result<Self, KernelError> {
        if !(t_ref > 0.0) || !t_ref.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "reference point must be positive, got {t_ref}"
            )));
        }
        if factors.iter().any(|(_, e)| !e.is_finite()) {
            return Err(KernelError::InvalidParameter(
                "slowly varying exponents must be finite".into(),
            ));
        }
        Ok(SlowlyVaryingSpec { factors, t_ref })
    }

    pub fn constant(t_ref: f64) -> Self {
        SlowlyVaryingSpec {
            factors: Vec::new(),
            t_ref,
        }
    }

    /// (1 + ln(T/t))^b
    pub fn log_power(b: f64, t_ref: f64) -> Result<Self, KernelError> {
        SlowlyVaryingSpec::new(vec![(SvKind::Log, b)], t_ref)
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    pub fn factors(&self) -> &[(SvKind, f64)] {
        &self.factors
    }

    pub fn is_constant(&self) -> bool {
        self.factors.iter().all(|&(_, e)| e == 0.0)
    }

    /// Total exponents (log, loglog).
    pub fn exponents(&self) -> (f64, f64) {
        let mut b = 0.0;
        let mut c = 0.0;
        for &(kind, e) in &self.factors {
            match kind {
                SvKind::Log => b += e,
                SvKind::LogLog => c += e,
            }
        }
        (b, c)
    }

    /// The same factors raised to the power q.
    pub fn powered(&self, q: f64) -> Self {
        SlowlyVaryingSpec {
            factors: self.factors.iter().map(|&(k, e)| (k, e * q)).collect(),
            t_ref: self.t_ref,
        }
    }

    pub fn with_reference(&self, t_ref: f64) -> Self {
        SlowlyVaryingSpec {
            factors: self.factors.clone(),
            t_ref,
        }
    }

    /// ln lambda(t), valid for t up to e T (where l_log reaches 0).
    pub fn ln_eval(&self, t: f64) -> f64 {
        self.ln_eval_log(t.ln())
    }

    /// ln lambda(e^s).
    pub fn ln_eval_log(&self, s: f64) -> f64 {
        if self.is_constant() {
            return 0.0;
        }
        let l = 1.0 + self.t_ref.ln() - s;
        let (b, c) = self.exponents();
        let mut out = 0.0;
        if b != 0.0 {
            out += b * l.ln();
        }
        if c != 0.0 {
            out += c * (1.0 + l.ln()).ln();
        }
        out
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.ln_eval(t).exp()
    }

    /// Largest grid point t such that t^gamma lambda is nondecreasing and
    /// t^-gamma lambda nonincreasing on the grid up to t. Log powers are
    /// only monotone in this sense near 0, so the window can be shorter
    /// than (0, T].
    pub fn monotone_window(&self, gamma: f64, grid: &LogGrid) -> f64 {
        let pts = grid.points();
        let up = |t: f64| gamma * t.ln() + self.ln_eval(t);
        let down = |t: f64| -gamma * t.ln() + self.ln_eval(t);
        let mut last = pts[0];
        for w in pts.windows(2) {
            if up(w[1]) < up(w[0]) - 1e-12 || down(w[1]) > down(w[0]) + 1e-12 {
                break;
            }
            last = w[1];
        }
        last
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelVariant {
    /// Phi(z) = z^-nu K_nu(z)
    BesselMcDonald { nu: f64 },
    /// Phi(z) = z^(alpha-n) Lambda(z) on (0, z1], then
    /// Phi(z1) (z/z1)^(alpha-n) exp(-rate (z - z1)).
    PowerSlowlyVarying {
        alpha: f64,
        lambda: SlowlyVaryingSpec,
        z1: f64,
        tail_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    variant: KernelVariant,
    n: usize,
}

impl KernelSpec {
    /// Bessel-McDonald kernel of order nu in (0, n/2).
    pub fn bessel(n: usize, nu: f64) -> Result<Self, KernelError> {
        check_dim(n)?;
        if !(nu > 0.0 && nu < n as f64 / 2.0) {
            return Err(KernelError::InvalidParameter(format!(
                "nu must lie in (0, {}), got {nu}",
                n as f64 / 2.0
            )));
        }
        Ok(KernelSpec {
            variant: KernelVariant::BesselMcDonald { nu },
            n,
        })
    }

    /// Classical Bessel potential of order alpha: nu = (n - alpha)/2.
    pub fn bessel_alpha(n: usize, alpha: f64) -> Result<Self, KernelError> {
        KernelSpec::bessel(n, (n as f64 - alpha) / 2.0)
    }

    /// Power kernel with slowly varying factor; `lambda_factors` are
    /// measured against z1.
    pub fn power_sv(
        n: usize,
        alpha: f64,
        lambda_factors: Vec<(SvKind, f64)>,
        z1: f64,
        tail_rate: f64,
    ) -> Result<Self, KernelError> {
        check_dim(n)?;
        if !(alpha > 0.0 && alpha < n as f64) {
            return Err(KernelError::InvalidParameter(format!(
                "alpha must lie in (0, {n}), got {alpha}"
            )));
        }
        if !(z1 > 0.0) || !(tail_rate > 0.0) {
            return Err(KernelError::InvalidParameter(
                "z1 and the tail rate must be positive".into(),
            ));
        }
        let lambda = SlowlyVaryingSpec::new(lambda_factors, z1)?;
        Ok(KernelSpec {
            variant: KernelVariant::PowerSlowlyVarying {
                alpha,
                lambda,
                z1,
                tail_rate,
            },
            n,
        })
    }

    pub fn variant(&self) -> &KernelVariant {
        &self.variant
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn unit_ball_volume(&self) -> f64 {
        unit_ball_volume(self.n)
    }

    /// The smoothness index alpha: n - 2 nu for Bessel kernels.
    pub fn alpha(&self) -> f64 {
        match &self.variant {
            KernelVariant::BesselMcDonald { nu } => self.n as f64 - 2.0 * nu,
            KernelVariant::PowerSlowlyVarying { alpha, .. } => *alpha,
        }
    }

    /// T = V_n z1^n, the volume matching z1 (None for Bessel kernels).
    pub fn consistent_t(&self) -> Option<f64> {
        match &self.variant {
            KernelVariant::PowerSlowlyVarying { z1, .. } => {
                Some(self.unit_ball_volume() * z1.powi(self.n as i32))
            }
            KernelVariant::BesselMcDonald { .. } => None,
        }
    }

    /// Phi(z) for z > 0.
    pub fn eval(&self, z: f64) -> Result<f64, KernelError> {
        match &self.variant {
            KernelVariant::BesselMcDonald { nu } => {
                let k = bessel_k(*nu, z)?;
                Ok(z.powf(-nu) * k)
            }
            KernelVariant::PowerSlowlyVarying {
                alpha,
                lambda,
                z1,
                tail_rate,
            } => {
                let a = alpha - self.n as f64;
                if z <= *z1 {
                    Ok((a * z.ln() + lambda.ln_eval(z)).exp())
                } else {
                    let at_z1 = (a * z1.ln() + lambda.ln_eval(*z1)).exp();
                    Ok(at_z1 * (z / z1).powf(a) * (-tail_rate * (z - z1)).exp())
                }
            }
        }
    }

    /// phi(tau) = Phi((tau / V_n)^(1/n)).
    pub fn phi(&self, tau: f64) -> Result<f64, KernelError> {
        self.eval((tau / self.unit_ball_volume()).powf(1.0 / self.n as f64))
    }

    /// int_0^inf Phi(z) z^(n-1) dz.
    pub fn radial_mass(&self) -> Result<f64, KernelError> {
        let n = self.n as i32;
        let f = |z: f64| self.eval(z).unwrap_or(f64::NAN) * z.powi(n - 1);
        Ok(integrate(&f, 0.0, f64::INFINITY, true, 1e-9)?.value)
    }

    /// Ratio of Phi to its small-argument model (normalized to 1 at 0+)
    /// for Bessel kernels: y^(2 nu) Phi(y) / (2^(nu-1) Gamma(nu)).
    pub fn small_argument_ratio(&self, y: f64) -> Result<f64, KernelError> {
        match &self.variant {
            KernelVariant::BesselMcDonald { nu } => {
                let c = 2f64.powf(nu - 1.0) * gamma(*nu);
                Ok(self.eval(y)? * y.powf(2.0 * nu) / c)
            }
            KernelVariant::PowerSlowlyVarying { alpha, .. } => {
                Ok(self.eval(y)? * y.powf(self.n as f64 - alpha))
            }
        }
    }

    /// Phi(y) / (y^(-nu-1/2) e^-y) for Bessel kernels.
    pub fn large_argument_ratio(&self, y: f64) -> Result<f64, KernelError> {
        match &self.variant {
            KernelVariant::BesselMcDonald { nu } => {
                let k = bessel_k(*nu, y)?;
                // Phi y^(nu+1/2) e^y = K_nu(y) sqrt(y) e^y
                Ok(k * y.sqrt() * y.exp())
            }
            KernelVariant::PowerSlowlyVarying { .. } => Err(KernelError::InvalidParameter(
                "large-argument ratio is defined for Bessel kernels only".into(),
            )),
        }
    }

    /// Largest point y1 of a log grid on [1e-8, 20] such that the
    /// small-argument ratio stays in [1/4, 4] on every grid point up to y1.
    pub fn auto_y1(&self) -> Result<f64, KernelError> {
        let grid = make_log_grid(1e-8, 20.0, 400)?;
        let ratios = crate::par::map_slice(grid.points(), |&y| self.small_argument_ratio(y));
        let mut y1 = grid.t_min();
        for (&y, r) in grid.points().iter().zip(ratios) {
            let r = r?;
            if !(0.25..=4.0).contains(&r) {
                break;
            }
            y1 = y;
        }
        Ok(y1)
    }

    /// phi sampled on a grid over (0, T].
    pub fn phi_sampled(&self, grid: &LogGrid) -> Result<SampledFunction, KernelError> {
        let vals = crate::par::map_slice(grid.points(), |&t| self.phi(t));
        let values = vals.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(SampledFunction::new(
            grid.clone(),
            values,
            Monotonicity::Decreasing,
            Extension::Analytic,
        )?)
    }
}

fn check_dim(n: usize) -> Result<(), KernelError> {
    if (1..=3).contains(&n) {
        Ok(())
    } else {
        Err(KernelError::InvalidParameter(format!(
            "dimension must be 1, 2 or 3, got {n}"
        )))
    }
}

/// phi sampled on a grid; free-function form of [`KernelSpec::phi_sampled`].
pub fn phi_from_kernel(kernel: &KernelSpec, grid: &LogGrid) -> Result<SampledFunction, KernelError> {
    kernel.phi_sampled(grid)
}

/// Omega(t, tau) = phi(tau) / (1 + (tau/t)^(k/n)).
pub fn omega_kernel(phi: &SampledFunction, k: u32, n: usize, t: f64, tau: f64) -> f64 {
    omega_from_value(phi.eval(tau), k, n, t, tau)
}

/// Omega with phi(tau) already evaluated.
pub fn omega_from_value(phi_tau: f64, k: u32, n: usize, t: f64, tau: f64) -> f64 {
    phi_tau / (1.0 + (tau / t).powf(k as f64 / n as f64))
}

/// One term coef z^a l^b m^c of a derivative expansion, with l = l_log
/// and m = l_loglog; the exponential tail factor is implicit.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    coef: f64,
    a: f64,
    b: f64,
    c: f64,
}

/// d/dz of a sum of terms. `rate` > 0 means every term carries
/// exp(-rate (z - z1)).
fn diff(terms: &[Term], rate: f64) -> Vec<Term> {
    let mut out = Vec::new();
    for t in terms {
        if t.a != 0.0 {
            out.push(Term {
                coef: t.coef * t.a,
                a: t.a - 1.0,
                ..*t
            });
        }
        // dl/dz = -1/z
        if t.b != 0.0 {
            out.push(Term {
                coef: -t.coef * t.b,
                a: t.a - 1.0,
                b: t.b - 1.0,
                c: t.c,
            });
        }
        // dm/dz = -1/(z l)
        if t.c != 0.0 {
            out.push(Term {
                coef: -t.coef * t.c,
                a: t.a - 1.0,
                b: t.b - 1.0,
                c: t.c - 1.0,
            });
        }
        if rate != 0.0 {
            out.push(Term {
                coef: -t.coef * rate,
                ..*t
            });
        }
    }
    merge(out)
}

fn merge(mut terms: Vec<Term>) -> Vec<Term> {
    let mut out: Vec<Term> = Vec::new();
    terms.retain(|t| t.coef != 0.0);
    for t in terms {
        if let Some(u) = out
            .iter_mut()
            .find(|u| u.a == t.a && u.b == t.b && u.c == t.c)
        {
            u.coef += t.coef;
        } else {
            out.push(t);
        }
    }
    out
}

fn z_inverse(terms: &[Term]) -> Vec<Term> {
    terms
        .iter()
        .map(|t| Term {
            a: t.a - 1.0,
            ..*t
        })
        .collect()
}

/// Value of sum(terms) divided by the base term z^a0 l^b0 m^c0.
fn ratio_to_base(terms: &[Term], base: Term, z: f64, l: f64, m: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let mut ln = (t.a - base.a) * z.ln();
            if t.b != base.b {
                ln += (t.b - base.b) * l.ln();
            }
            if t.c != base.c {
                ln += (t.c - base.c) * m.ln();
            }
            t.coef * ln.exp()
        })
        .sum()
}

/// Constants in the derivative conditions on Phi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    /// sup over (0, z1] of max_j z^(2j) |Phi_j| / Phi
    pub a1: f64,
    /// sup over (z1, z_max] of max_j z^(2j) |Phi_j| / (z^k Phi)
    pub a2: f64,
    /// inf over (0, z1] of (-1)^k z^k Phi^(k) / Phi
    pub delta1: f64,
    pub holds_g115: bool,
    pub holds_g116: bool,
    pub holds_g117: bool,
}

const DERIV_POINTS: usize = 160;

/// Evaluate the three derivative conditions with Phi_j = (z^-1 d/dz)^j Phi.
/// Power kernels are differentiated symbolically, Bessel kernels by
/// Richardson-extrapolated central differences.
pub fn check_derivative_conditions(
    kernel: &KernelSpec,
    k: u32,
    z1: f64,
) -> Result<DerivativeReport, KernelError> {
    if k == 0 {
        return Err(KernelError::InvalidParameter("k must be at least 1".into()));
    }
    if !(z1 > 0.0) {
        return Err(KernelError::InvalidParameter("z1 must be positive".into()));
    }
    let inner = make_log_grid(1e-8 * z1, z1, DERIV_POINTS)?;
    let z_max = (20.0f64).max(10.0 * z1);
    let outer: Vec<f64> = make_log_grid(z1, z_max, DERIV_POINTS)?.points()[1..].to_vec();
    let (inner_rows, outer_rows) = match kernel.variant() {
        KernelVariant::PowerSlowlyVarying {
            alpha,
            lambda,
            z1: kz1,
            tail_rate,
        } => {
            let a0 = alpha - kernel.n() as f64;
            let (b0, c0) = lambda.exponents();
            let base = Term {
                coef: 1.0,
                a: a0,
                b: b0,
                c: c0,
            };
            let inner_rows = symbolic_rows(base, 0.0, k, inner.points(), *kz1, z1);
            let outer_base = Term {
                coef: 1.0,
                a: a0,
                b: 0.0,
                c: 0.0,
            };
            let outer_rows = symbolic_rows(outer_base, *tail_rate, k, &outer, *kz1, z1);
            (inner_rows, outer_rows)
        }
        KernelVariant::BesselMcDonald { .. } => {
            let inner_rows: Result<Vec<_>, _> =
                crate::par::map_slice(inner.points(), |&z| numeric_row(kernel, k, z))
                    .into_iter()
                    .collect();
            let outer_rows: Result<Vec<_>, _> =
                crate::par::map_slice(&outer, |&z| numeric_row(kernel, k, z))
                    .into_iter()
                    .collect();
            (inner_rows?, outer_rows?)
        }
    };
    let mut a1 = 0.0f64;
    let mut delta1 = f64::INFINITY;
    for (z, row) in inner.points().iter().zip(&inner_rows) {
        for (j, r) in row.iter_ratios.iter().enumerate() {
            let j = j as i32 + 1;
            a1 = a1.max(z.powi(2 * j) * r.abs());
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        delta1 = delta1.min(sign * z.powi(k as i32) * row.plain_ratio);
    }
    let mut a2 = 0.0f64;
    for (z, row) in outer.iter().zip(&outer_rows) {
        if row.underflow {
            continue;
        }
        for (j, r) in row.iter_ratios.iter().enumerate() {
            let j = j as i32 + 1;
            a2 = a2.max(z.powi(2 * j - k as i32) * r.abs());
        }
    }
    Ok(DerivativeReport {
        a1,
        a2,
        delta1,
        holds_g115: a1.is_finite(),
        holds_g116: a2.is_finite(),
        holds_g117: delta1 > 0.0 && delta1.is_finite(),
    })
}

/// Derivatives at one point, as ratios to Phi(z).
struct DerivRow {
    /// Phi_j / Phi for j = 1..k
    iter_ratios: Vec<f64>,
    /// Phi^(k) / Phi
    plain_ratio: f64,
    underflow: bool,
}

fn symbolic_rows(base: Term, rate: f64, k: u32, zs: &[f64], kz1: f64, _z1: f64) -> Vec<DerivRow> {
    let mut iterated = Vec::new();
    let mut cur = vec![base];
    for _ in 0..k {
        cur = z_inverse(&diff(&cur, rate));
        iterated.push(cur.clone());
    }
    let mut plain = vec![base];
    for _ in 0..k {
        plain = diff(&plain, rate);
    }
    zs.iter()
        .map(|&z| {
            let l = 1.0 + (kz1 / z).ln();
            let m = 1.0 + l.ln();
            DerivRow {
                iter_ratios: iterated
                    .iter()
                    .map(|terms| ratio_to_base(terms, base, z, l, m))
                    .collect(),
                plain_ratio: ratio_to_base(&plain, base, z, l, m),
                underflow: false,
            }
        })
        .collect()
}

/// f'(z) by central differences with h = 1e-4 z and two Richardson levels.
fn richardson<F: Fn(f64) -> Result<f64, KernelError>>(f: &F, z: f64) -> Result<f64, KernelError> {
    let h = 1e-4 * z;
    let d = |h: f64| -> Result<f64, KernelError> { Ok((f(z + h)? - f(z - h)?) / (2.0 * h)) };
    let (d0, d1, d2) = (d(h)?, d(h / 2.0)?, d(h / 4.0)?);
    let r10 = (4.0 * d1 - d0) / 3.0;
    let r11 = (4.0 * d2 - d1) / 3.0;
    let r2 = (16.0 * r11 - r10) / 15.0;
    let disagreement = (r2 - r11).abs() / r2.abs().max(1e-300);
    if disagreement > 1e-3 {
        return Err(KernelError::DerivativeUnstable { z, disagreement });
    }
    Ok(r2)
}

fn numeric_iterated(kernel: &KernelSpec, j: u32, z: f64) -> Result<f64, KernelError> {
    if j == 0 {
        return kernel.eval(z);
    }
    let inner = |x: f64| numeric_iterated(kernel, j - 1, x);
    Ok(richardson(&inner, z)? / z)
}

fn numeric_plain(kernel: &KernelSpec, j: u32, z: f64) -> Result<f64, KernelError> {
    if j == 0 {
        return kernel.eval(z);
    }
    let inner = |x: f64| numeric_plain(kernel, j - 1, x);
    richardson(&inner, z)
}

fn numeric_row(kernel: &KernelSpec, k: u32, z: f64) -> Result<DerivRow, KernelError> {
    let phi = kernel.eval(z)?;
    if phi == 0.0 {
        return Ok(DerivRow {
            iter_ratios: vec![0.0; k as usize],
            plain_ratio: 0.0,
            underflow: true,
        });
    }
    let iter_ratios = (1..=k)
        .map(|j| numeric_iterated(kernel, j, z).map(|d| d / phi))
        .collect::<Result<Vec<_>, _>>()?;
    let plain_ratio = numeric_plain(kernel, k, z)? / phi;
    Ok(DerivRow {
        iter_ratios,
        plain_ratio,
        underflow: false,
    })
}

/// Ratios behind the standard slowly varying estimates, sampled on `grid`:
/// r59(t) = int_0^t tau^(g-1) lambda / (t^g lambda(t)),
/// r510(t) = int_t^T tau^(-g-1) lambda / (t^-g lambda(t)),
/// r511(t) = lambda(t) / int_t^T tau^-1 lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowlyVaryingRatios {
    pub r59: SampledFunction,
    pub r510: SampledFunction,
    pub r511: SampledFunction,
}

pub fn slowly_varying_ratios(
    lambda: &SlowlyVaryingSpec,
    gamma_exp: f64,
    grid: &LogGrid,
) -> Result<SlowlyVaryingRatios, KernelError> {
    if !(gamma_exp > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "gamma must be positive, got {gamma_exp}"
        )));
    }
    let pts = grid.points();
    let m = pts.len();
    let tol = 1e-11;
    // integrands on the log scale s = ln tau
    let up = |s: f64| (gamma_exp * s + lambda.ln_eval_log(s)).exp();
    let down = |s: f64| (-gamma_exp * s + lambda.ln_eval_log(s)).exp();
    let flat = |s: f64| lambda.ln_eval_log(s).exp();
    let cells = |g: &(dyn Fn(f64) -> f64 + Sync)| -> Result<Vec<f64>, KernelError> {
        crate::par::map_range(m - 1, |i| {
            integrate_log_scale(g, pts[i].ln(), pts[i + 1].ln(), tol).map(|q| q.value)
        })
        .into_iter()
        .map(|r| r.map_err(KernelError::from))
        .collect()
    };
    let up_cells = cells(&up)?;
    let down_cells = cells(&down)?;
    let flat_cells = cells(&flat)?;

    let mut cum_up = vec![0.0; m];
    cum_up[0] = integrate_log_scale(&up, f64::NEG_INFINITY, pts[0].ln(), tol)?.value;
    for i in 0..m - 1 {
        cum_up[i + 1] = cum_up[i] + up_cells[i];
    }
    let mut tail_down = vec![0.0; m];
    let mut tail_flat = vec![0.0; m];
    for i in (0..m - 1).rev() {
        tail_down[i] = tail_down[i + 1] + down_cells[i];
        tail_flat[i] = tail_flat[i + 1] + flat_cells[i];
    }
    let r59 = (0..m)
        .map(|i| cum_up[i] / up(pts[i].ln()))
        .collect::<Vec<_>>();
    let r510 = (0..m)
        .map(|i| tail_down[i] / down(pts[i].ln()))
        .collect::<Vec<_>>();
    let r511 = (0..m)
        .map(|i| {
            if tail_flat[i] == 0.0 {
                f64::INFINITY
            } else {
                flat(pts[i].ln()) / tail_flat[i]
            }
        })
        .collect::<Vec<_>>();
    let mk = |v: Vec<f64>| {
        SampledFunction::new(grid.clone(), v, Monotonicity::None, Extension::ZeroBeyondT)
    };
    Ok(SlowlyVaryingRatios {
        r59: mk(r59)?,
        r510: mk(r510)?,
        r511: mk(r511)?,
    })
}
