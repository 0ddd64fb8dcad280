//! The optimal target space X0 of a Calderon embedding: conditions (A)
//! and (B), the X0 norm, the associated norms rho, the dyadic level
//! sequences nu_m / delta_m and Hardy-type constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridfn::{
    cell_integral, classify_refinement, make_log_grid, nested_floors, running_integral,
    running_sup, Extension, Finiteness, GridError, LogGrid, Monotonicity, QuadError,
    SampledFunction, SupWindow,
};
use crate::lorentz::{psi_q, LorentzError, LorentzSpace};
use crate::par::map_slice;

/// Exponents tried by the epsilon-witness search: 2^-j for j = 0..=20.
pub const WITNESS_STEPS: u32 = 20;
/// Relative slack in the witness monotonicity test.
pub const WITNESS_TOL: f64 = 1e-10;
/// Levels 2^m with m >= -DELTA_WINDOW_BELOW are kept in the delta sequence.
pub const DELTA_WINDOW_BELOW: i32 = 5;
/// Seed of the reference g family.
pub const G_FAMILY_SEED: u64 = 0x5EED;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimalError {
    #[error("no T1 with Psi_q(T1) = Psi_q(T)/2: {0}")]
    NoSolution(String),
    #[error("grid floor reached at level m = {level} before the requested range")]
    Exhausted { level: i32 },
    #[error("no epsilon in 2^-j, j <= 20, passes the monotonicity test")]
    WitnessMissing,
    #[error("Psi_q(T) is infinite, the space does not receive the cone")]
    NotEmbedded,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimalCase {
    /// q = 1 and Psi_1(0+) > 0: X0 = L_inf.
    LInftyCase,
    WeightedCase,
}

/// The norm of the optimal space: case tag, Psi_q samples and T1.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalNormSpec {
    pub case: OptimalCase,
    pub psi: SampledFunction,
    /// None in the L_inf case.
    pub t1: Option<f64>,
    pub q: f64,
}

impl OptimalNormSpec {
    pub fn from_psi(psi: SampledFunction, q: f64) -> Result<Self, OptimalError> {
        if !(q >= 1.0) {
            return Err(OptimalError::InvalidParameter(format!("q = {q}")));
        }
        let at_t = psi.last();
        if !at_t.is_finite() {
            return Err(OptimalError::NotEmbedded);
        }
        let at_zero = psi.limit_at_zero().max(0.0);
        if q == 1.0 && at_zero > 0.0 {
            return Ok(OptimalNormSpec {
                case: OptimalCase::LInftyCase,
                psi,
                t1: None,
                q,
            });
        }
        let t1 = find_t1(&psi)?;
        Ok(OptimalNormSpec {
            case: OptimalCase::WeightedCase,
            psi,
            t1: Some(t1),
            q,
        })
    }

    /// Psi_q from the kernel profile phi, then the norm data built from it.
    pub fn build(space: &LorentzSpace, phi: &SampledFunction) -> Result<Self, OptimalError> {
        let psi = psi_q(space, phi)?;
        OptimalNormSpec::from_psi(psi, space.q())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionWitness {
    pub which: ConditionKind,
    /// d1 or d2 on the finest floor, +inf when judged divergent.
    pub d: f64,
    /// d on the nested floors, coarse first.
    pub d_refinement: Vec<f64>,
    pub finiteness: Finiteness,
    pub epsilon: f64,
    pub holds: bool,
    /// Where the sup is attained when d diverges, or where the
    /// monotonicity test first breaks when no epsilon is found.
    pub failure_locus: Option<f64>,
}

/// Which of (A), (B) backs the two-sided estimate rho_0 ~ rho~_0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceStatus {
    ConditionA,
    ConditionB,
    NeitherConditionHolds,
}

pub fn equivalence_status(a: &ConditionWitness, b: &ConditionWitness) -> EquivalenceStatus {
    if a.holds {
        EquivalenceStatus::ConditionA
    } else if b.holds {
        EquivalenceStatus::ConditionB
    } else {
        EquivalenceStatus::NeitherConditionHolds
    }
}

fn kn(k: u32, n: usize) -> f64 {
    k as f64 / n as f64
}

fn check_kn(k: u32, n: usize) -> Result<(), OptimalError> {
    if k == 0 || n == 0 {
        return Err(OptimalError::InvalidParameter(format!(
            "need k >= 1 and n >= 1, got k = {k}, n = {n}"
        )));
    }
    Ok(())
}

/// W~(t) = V(t)^-1 t^(1-k/n) phi(t) and its tail aggregate U_q:
/// U_1(t) = sup_[t,T] W~, U_q(t) = (int_t^T W~^q' v)^(1/q').
pub fn w_tilde_and_uq(
    space: &LorentzSpace,
    phi: &SampledFunction,
    k: u32,
    n: usize,
) -> Result<(SampledFunction, SampledFunction), OptimalError> {
    check_kn(k, n)?;
    let phi = space.on_grid(phi);
    let e = 1.0 - kn(k, n);
    let vals: Vec<f64> = phi
        .points()
        .iter()
        .zip(phi.values())
        .zip(space.cap_v().values())
        .map(|((&t, &f), &big)| t.powf(e) * f / big)
        .collect();
    let wt = SampledFunction::trusted(space.grid().clone(), vals, Monotonicity::None, Extension::Analytic);
    if space.q() == 1.0 {
        let u = running_sup(&wt, SupWindow::From).with_extension(Extension::ConstantBeyondT);
        return Ok((wt, u));
    }
    let qp = space.q_prime();
    let weight = space.weight();
    let h = wt.map(|t, x| x.powf(qp) * weight.v(t), Monotonicity::None);
    let tail = running_integral(&h, false)?;
    let u = tail.map(|_, x| x.max(0.0).powf(1.0 / qp), Monotonicity::Decreasing);
    Ok((wt, u))
}

/// Largest eps in {2^-j} with t^eps h(t) nonincreasing on the samples,
/// 0 when none passes. The second value is the first t where the test
/// breaks for the smallest eps tried.
pub fn epsilon_witness(points: &[f64], values: &[f64]) -> (f64, Option<f64>) {
    let breaks_at = |eps: f64| -> Option<f64> {
        let mut prev = f64::INFINITY;
        for (&t, &h) in points.iter().zip(values) {
            if !h.is_finite() {
                return Some(t);
            }
            let cur = t.powf(eps) * h;
            if cur > prev * (1.0 + WITNESS_TOL) + 1e-300 {
                return Some(t);
            }
            prev = cur;
        }
        None
    };
    let mut last_break = None;
    for j in 0..=WITNESS_STEPS {
        let eps = 0.5f64.powi(j as i32);
        match breaks_at(eps) {
            None => return (eps, None),
            Some(t) => last_break = Some(t),
        }
    }
    (0.0, last_break)
}

fn finest_or_infinite(values: &[f64]) -> (f64, Finiteness) {
    let f = classify_refinement(values);
    let finest = *values.last().expect("three floors");
    match f {
        Finiteness::Infinite => (f64::INFINITY, f),
        _ => (finest, f),
    }
}

/// sup over the grid of num/den and its location.
fn sup_ratio(points: &[f64], num: &[f64], den: &[f64]) -> (f64, f64) {
    let mut best = (0.0, points[0]);
    for ((&t, &a), &b) in points.iter().zip(num).zip(den) {
        let r = if b > 0.0 {
            a / b
        } else if a > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if r > best.0 {
            best = (r, t);
        }
    }
    best
}

fn d1_on(phi: &SampledFunction, e: f64) -> Result<(f64, f64), OptimalError> {
    let tail_int = running_integral(&phi.map(|t, f| t.powf(-e) * f, Monotonicity::None), false)?;
    let head = match running_integral(phi, true) {
        Ok(h) => h,
        Err(QuadError::NonConvergent { .. }) => return Ok((0.0, phi.grid().t_min())),
        Err(err) => return Err(err.into()),
    };
    let den: Vec<f64> = phi
        .points()
        .iter()
        .zip(head.values())
        .map(|(&t, &c)| t.powf(-e) * c)
        .collect();
    Ok(sup_ratio(phi.points(), tail_int.values(), &den))
}

fn d2_on(phi: &SampledFunction, e: f64) -> Result<(f64, f64), OptimalError> {
    let inner = phi.map(|t, f| t.powf(-e) * f, Monotonicity::None);
    let head = match running_integral(&inner, true) {
        Ok(h) => h,
        Err(QuadError::NonConvergent { .. }) => return Ok((f64::INFINITY, phi.grid().t_min())),
        Err(err) => return Err(err.into()),
    };
    let den: Vec<f64> = phi
        .points()
        .iter()
        .zip(phi.values())
        .map(|(&t, &f)| t.powf(1.0 - e) * f)
        .collect();
    Ok(sup_ratio(phi.points(), head.values(), &den))
}

fn refine<F>(phi: &SampledFunction, d_on: F) -> Result<(Vec<f64>, f64), OptimalError>
where
    F: Fn(&SampledFunction) -> Result<(f64, f64), OptimalError>,
{
    let mut values = Vec::with_capacity(3);
    let mut locus = phi.grid().t_min();
    for floor in nested_floors(phi.grid()) {
        let (d, at) = d_on(&phi.restrict_from(floor)?)?;
        values.push(d);
        locus = at;
    }
    Ok((values, locus))
}

/// Condition (A): d1 = sup int_t^T tau^-k/n phi / (t^-k/n int_0^t phi)
/// finite, plus an eps with t^eps / V(t) nonincreasing.
pub fn check_condition_a(
    phi: &SampledFunction,
    cap_v: &SampledFunction,
    k: u32,
    n: usize,
) -> Result<ConditionWitness, OptimalError> {
    check_kn(k, n)?;
    let e = kn(k, n);
    let (d_refinement, locus) = refine(phi, |p| d1_on(p, e))?;
    let (d, finiteness) = finest_or_infinite(&d_refinement);
    let inv_v: Vec<f64> = cap_v.values().iter().map(|&v| 1.0 / v).collect();
    let (epsilon, eps_break) = epsilon_witness(cap_v.points(), &inv_v);
    let finite = finiteness == Finiteness::Finite;
    Ok(ConditionWitness {
        which: ConditionKind::A,
        d,
        d_refinement,
        finiteness,
        epsilon,
        holds: finite && epsilon > 0.0,
        failure_locus: if !finite {
            Some(locus)
        } else if epsilon == 0.0 {
            eps_break
        } else {
            None
        },
    })
}

/// Condition (B): d2 = sup int_0^t tau^-k/n phi / (t^(1-k/n) phi(t))
/// finite, plus an eps with t^eps U_q(t) nonincreasing.
pub fn check_condition_b(
    phi: &SampledFunction,
    u_q: &SampledFunction,
    k: u32,
    n: usize,
) -> Result<ConditionWitness, OptimalError> {
    check_kn(k, n)?;
    let e = kn(k, n);
    let (d_refinement, locus) = refine(phi, |p| d2_on(p, e))?;
    let (d, finiteness) = finest_or_infinite(&d_refinement);
    let (epsilon, eps_break) = epsilon_witness(u_q.points(), u_q.values());
    let finite = finiteness == Finiteness::Finite;
    Ok(ConditionWitness {
        which: ConditionKind::B,
        d,
        d_refinement,
        finiteness,
        epsilon,
        holds: finite && epsilon > 0.0,
        failure_locus: if !finite {
            Some(locus)
        } else if epsilon == 0.0 {
            eps_break
        } else {
            None
        },
    })
}

/// T1 in (0, T) with Psi_q(T1) = Psi_q(T)/2, by bisection in log t on the
/// interpolated samples (continued below t_min by the first cell's power).
pub fn find_t1(psi: &SampledFunction) -> Result<f64, OptimalError> {
    let top = psi.last();
    if !top.is_finite() || top <= 0.0 {
        return Err(OptimalError::NoSolution(format!("Psi_q(T) = {top}")));
    }
    let target = 0.5 * top;
    let at_zero = psi.limit_at_zero().max(0.0);
    if at_zero >= target * (1.0 - 1e-9) {
        return Err(OptimalError::NoSolution(format!(
            "Psi_q(0+) = {at_zero} is not below Psi_q(T)/2 = {target}"
        )));
    }
    let t_max = psi.grid().t_max();
    let mut lo = psi.grid().t_min();
    while psi.eval(lo) > target {
        lo *= 1e-3;
        if lo < 1e-300 {
            return Err(OptimalError::NoSolution("no crossing above 1e-300".into()));
        }
    }
    let mut hi = t_max;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if psi.eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let t1 = (lo * hi).sqrt();
    if (psi.eval(t1) - target).abs() > 1e-6 * top {
        return Err(OptimalError::NoSolution(format!(
            "Psi_q jumps across Psi_q(T)/2 near t = {t1:e}"
        )));
    }
    Ok(t1)
}

/// Norm of f in the optimal space X0. Infinite values are legal.
pub fn x0_norm(spec: &OptimalNormSpec, f: &SampledFunction) -> f64 {
    let psi = &spec.psi;
    let absf = f.map(|_, x| x.abs(), Monotonicity::None);
    let absf = if absf.grid() == psi.grid() {
        absf
    } else {
        let vals = psi.points().iter().map(|&t| absf.eval(t)).collect();
        SampledFunction::trusted(psi.grid().clone(), vals, Monotonicity::None, f.extension())
    };
    let at_zero = {
        let l = absf.limit_at_zero();
        if l.is_nan() {
            absf.values()[0]
        } else {
            l.max(0.0)
        }
    };
    let sup_all = absf.values().iter().copied().fold(at_zero, f64::max);
    match spec.case {
        OptimalCase::LInftyCase => sup_all,
        OptimalCase::WeightedCase => {
            let t1 = spec.t1.expect("weighted case carries T1");
            let ring = absf
                .points()
                .iter()
                .zip(absf.values())
                .filter(|(&t, _)| t >= t1)
                .map(|(_, &x)| x)
                .fold(absf.eval(t1), f64::max);
            let second = ring / psi.last();
            x0_ring_part(psi, &absf, at_zero, spec.q) + second
        }
    }
}

/// (int_0^T (sup_(0,t)|f| / Psi)^q dPsi/Psi)^(1/q), the Stieltjes
/// integral taken cell by cell with Psi a power law on each cell.
fn x0_ring_part(psi: &SampledFunction, absf: &SampledFunction, at_zero: f64, q: f64) -> f64 {
    let pts = psi.points();
    let ps = psi.values();
    let m = pts.len();
    let mut acc = at_zero;
    let sup: Vec<f64> = absf
        .values()
        .iter()
        .map(|&x| {
            acc = acc.max(x);
            acc
        })
        .collect();
    if !sup[m - 1].is_finite() {
        return f64::INFINITY;
    }
    if sup[m - 1] == 0.0 {
        return 0.0;
    }
    // h = (M / Psi)^q / Psi
    let h: Vec<f64> = sup
        .iter()
        .zip(ps)
        .map(|(&s, &p)| {
            if s == 0.0 {
                0.0
            } else if p > 0.0 {
                (s / p).powf(q) / p
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..m - 1 {
        let (a, b) = (ps[i], ps[i + 1]);
        if !(b > a) {
            continue;
        }
        if a <= 0.0 {
            if h[i + 1] == 0.0 {
                continue;
            }
            return f64::INFINITY;
        }
        let p = (b / a).ln() / (pts[i + 1] / pts[i]).ln();
        let ga = h[i] * p * a / pts[i];
        let gb = h[i + 1] * p * b / pts[i + 1];
        total += cell_integral(pts[i], pts[i + 1], ga, gb);
    }
    // the part below t_min, from the tail of h * dPsi/dt
    if h[0] > 0.0 {
        let log_step = psi.grid().log_step();
        let dens: Vec<f64> = (0..m)
            .map(|i| {
                let (l, r) = (i.saturating_sub(1), (i + 1).min(m - 1));
                let slope = if ps[l] > 0.0 && ps[r] > 0.0 {
                    (ps[r] / ps[l]).ln() / (log_step * (r - l) as f64)
                } else {
                    0.0
                };
                h[i] * slope * ps[i] / pts[i]
            })
            .collect();
        let g = SampledFunction::trusted(psi.grid().clone(), dens, Monotonicity::None, Extension::Analytic);
        match g.tail_below() {
            Ok(t) if t.is_finite() => total += t.max(0.0),
            _ => return f64::INFINITY,
        }
    }
    total.powf(1.0 / q)
}

/// Phi_k(xi, t) = int_0^xi phi + xi^(k/n) int_xi^t tau^-k/n phi, with the
/// integrals taken from the samples.
pub fn phi_k(phi: &SampledFunction, k: u32, n: usize, xi: f64, t: f64) -> Result<f64, OptimalError> {
    check_kn(k, n)?;
    if !(xi > 0.0 && xi <= t && t <= phi.grid().t_max() * (1.0 + 1e-12)) {
        return Err(OptimalError::InvalidParameter(format!(
            "need 0 < xi <= t <= T, got xi = {xi}, t = {t}"
        )));
    }
    let e = kn(k, n);
    let head = running_integral(phi, true)?;
    let inner = phi.map(|s, f| s.powf(-e) * f, Monotonicity::None);
    let tail = running_integral(&inner, false)?;
    let first = head.eval(xi);
    let second = if t == xi {
        0.0
    } else {
        crate::gridfn::integrate(&|s: f64| s.powf(-e) * phi.eval(s), xi, t, false, 1e-10)
            .map(|r| r.value)
            .unwrap_or_else(|_| tail.eval(xi) - tail.eval(t))
    };
    Ok(first + xi.powf(e) * second)
}

/// rho_0 (optimal associate norm), rho~_0, rho_1, rho_2 (q > 1 only) and
/// the hat variant rho^_0 built from int_0^t (int_tau^T g) phi(tau) dtau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociatedNorms {
    pub rho0: f64,
    pub rho_tilde0: f64,
    pub rho1: f64,
    pub rho2: Option<f64>,
    pub rho_hat0: f64,
}

/// Integral over (0, t_j] of the samples, tail from the model on the full grid.
fn prefix_integrals(f: &SampledFunction) -> Result<Vec<f64>, QuadError> {
    Ok(running_integral(f, true)?.values().to_vec())
}

/// The q-dependent functional applied to the running quantity X(t):
/// q = 1: sup X/V; q > 1: (int_0^T X^q' w + beyond)^(1/q').
fn outer(space: &LorentzSpace, x: &[f64], beyond: f64) -> Result<f64, OptimalError> {
    let grid = space.grid();
    if space.q() == 1.0 {
        let ratio: Vec<f64> = x.iter().zip(space.cap_v().values()).map(|(&a, &v)| a / v).collect();
        let r = SampledFunction::trusted(grid.clone(), ratio, Monotonicity::None, Extension::ConstantBeyondT);
        let at_zero = r.limit_at_zero();
        let at_zero = if at_zero.is_finite() { at_zero.max(0.0) } else { 0.0 };
        return Ok(r.values().iter().copied().fold(at_zero, f64::max));
    }
    let qp = space.q_prime();
    let w = space.w().expect("q > 1");
    let vals: Vec<f64> = x.iter().zip(w.values()).map(|(&a, &b)| a.max(0.0).powf(qp) * b).collect();
    if vals.iter().all(|&v| v == 0.0) && beyond == 0.0 {
        return Ok(0.0);
    }
    let h = SampledFunction::trusted(grid.clone(), vals, Monotonicity::None, Extension::ZeroBeyondT);
    let body = match h.integral_from_zero() {
        Ok(b) => b,
        Err(QuadError::NonConvergent { .. }) => return Ok(f64::INFINITY),
        Err(e) => return Err(e.into()),
    };
    Ok((body + beyond).powf(1.0 / qp))
}

/// Psi_0(g, tau) = int_0^T Omega(xi, tau) g(xi) dxi on the grid, with
/// Omega(xi, tau) = phi(tau) / (1 + (tau/xi)^(k/n)). O(grid^2).
pub fn psi0(
    phi: &SampledFunction,
    g: &SampledFunction,
    k: u32,
    n: usize,
) -> Result<SampledFunction, OptimalError> {
    let e = kn(k, n);
    let grid = g.grid().clone();
    let pts = grid.points().to_vec();
    let rows: Vec<Result<f64, QuadError>> = map_slice(&pts, |&tau| {
        let vals: Vec<f64> = pts
            .iter()
            .zip(g.values())
            .map(|(&xi, &gx)| gx / (1.0 + (tau / xi).powf(e)))
            .collect();
        let f = SampledFunction::trusted(grid.clone(), vals, Monotonicity::None, Extension::ZeroBeyondT);
        Ok(f.integral_from_zero()? * phi.eval(tau))
    });
    let vals = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SampledFunction::trusted(grid, vals, Monotonicity::None, Extension::Analytic))
}

pub fn associated_norms(
    space: &LorentzSpace,
    phi: &SampledFunction,
    k: u32,
    n: usize,
    g: &SampledFunction,
) -> Result<AssociatedNorms, OptimalError> {
    check_kn(k, n)?;
    let phi = space.on_grid(phi);
    let g = space.on_grid(g);
    if g.values().iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(OptimalError::InvalidParameter("g must be finite and nonnegative".into()));
    }
    let grid = space.grid().clone();
    let pts = grid.points();
    let m = pts.len();
    let e = kn(k, n);
    let q_one = space.q() == 1.0;
    let qp = space.q_prime();
    let w_tail = if q_one { 0.0 } else { space.w_tail()? };

    let big_phi = running_integral(&phi, true)?;
    let g_tail = running_integral(&g, false)?;

    // rho_0
    let p0 = psi0(&phi, &g, k, n)?;
    let s0 = match prefix_integrals(&p0) {
        Ok(s) => s,
        Err(QuadError::NonConvergent { .. }) => vec![f64::INFINITY; m],
        Err(err) => return Err(err.into()),
    };
    let beyond0 = if q_one { 0.0 } else { s0[m - 1].powf(qp) * w_tail };
    let rho0 = outer(space, &s0, beyond0)?;

    // rho~_0
    let prod: Vec<f64> = big_phi.values().iter().zip(g_tail.values()).map(|(&a, &b)| a * b).collect();
    let rho_tilde0 = outer(space, &prod, 0.0)?;

    // rho^_0
    let gphi = SampledFunction::trusted(
        grid.clone(),
        g_tail.values().iter().zip(phi.values()).map(|(&a, &b)| a * b).collect(),
        Monotonicity::None,
        Extension::ZeroBeyondT,
    );
    let hat = match prefix_integrals(&gphi) {
        Ok(s) => s,
        Err(QuadError::NonConvergent { .. }) => vec![f64::INFINITY; m],
        Err(err) => return Err(err.into()),
    };
    let rho_hat0 = outer(space, &hat, 0.0)?;

    // rho_1: I(t) = int_0^t Phi_k(xi, t) g(xi) dxi
    let inner = phi.map(|s, f| s.powf(-e) * f, Monotonicity::None);
    let a_tail = running_integral(&inner, false)?;
    let (cv, av) = (big_phi.values(), a_tail.values());
    let gv = g.values();
    let tails = {
        let fit = |vals: Vec<f64>| -> f64 {
            let f = SampledFunction::trusted(grid.clone(), vals, Monotonicity::None, Extension::ZeroBeyondT);
            f.tail_below().unwrap_or(f64::INFINITY)
        };
        (
            fit((0..m).map(|i| cv[i] * gv[i]).collect()),
            fit((0..m).map(|i| pts[i].powf(e) * av[i] * gv[i]).collect()),
            fit((0..m).map(|i| pts[i].powf(e) * gv[i]).collect()),
        )
    };
    let idx: Vec<usize> = (0..m).collect();
    let big_i: Vec<f64> = map_slice(&idx, |&j| {
        let val = |i: usize| (cv[i] + pts[i].powf(e) * (av[i] - av[j])) * gv[i];
        let mut s = tails.0 + tails.1 - av[j] * tails.2;
        if !s.is_finite() {
            return f64::INFINITY;
        }
        s = s.max(0.0);
        for i in 0..j {
            s += cell_integral(pts[i], pts[i + 1], val(i), val(i + 1));
        }
        s
    });
    let rho1 = outer(space, &big_i, 0.0)?;
    let rho2 = if q_one {
        None
    } else {
        Some(big_i[m - 1] * w_tail.powf(1.0 / qp))
    };
    Ok(AssociatedNorms {
        rho0,
        rho_tilde0,
        rho1,
        rho2,
        rho_hat0,
    })
}

/// The two sufficient conditions for the space built from Psi_0 to be a
/// function space: c0 = ||phi||_{E'} finite and int_0^T Omega(t, tau) dtau
/// positive for every grid t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgzConditions {
    pub c0: f64,
    pub omega_positive: bool,
}

pub fn bgz_conditions(
    space: &LorentzSpace,
    phi: &SampledFunction,
    k: u32,
    n: usize,
) -> Result<BgzConditions, OptimalError> {
    check_kn(k, n)?;
    let phi = space.on_grid(phi);
    let c0 = match crate::lorentz::associate_norm(space, &phi.clone().with_extension(Extension::ZeroBeyondT)) {
        Ok(c) => c,
        Err(LorentzError::Quad(QuadError::NonConvergent { .. })) => f64::INFINITY,
        Err(err) => return Err(err.into()),
    };
    let e = kn(k, n);
    let pts = phi.points().to_vec();
    let positive = map_slice(&pts, |&t| {
        let vals = pts
            .iter()
            .zip(phi.values())
            .map(|(&tau, &f)| f / (1.0 + (tau / t).powf(e)))
            .collect();
        let f = SampledFunction::trusted(phi.grid().clone(), vals, Monotonicity::None, Extension::ZeroBeyondT);
        f.integral_from_zero().map(|v| v > 0.0).unwrap_or(true)
    });
    Ok(BgzConditions {
        c0,
        omega_positive: positive.into_iter().all(|b| b),
    })
}

/// Largest t in [t_min, T] with u(t) >= level, u nonincreasing; None when
/// u(t_min) is already below the level.
fn level_point(u: &SampledFunction, level: f64) -> Option<f64> {
    let ok = |t: f64| u.eval(t) >= level * (1.0 - 1e-12);
    let (t_min, t_max) = (u.grid().t_min(), u.grid().t_max());
    if !ok(t_min) {
        return None;
    }
    if ok(t_max) {
        return Some(t_max);
    }
    // start from the last node still at or above the level
    let pts = u.points();
    let vals = u.values();
    let last = vals
        .iter()
        .rposition(|&v| v >= level * (1.0 - 1e-12))
        .unwrap_or(0);
    let (mut lo, mut hi) = (pts[last], pts[(last + 1).min(pts.len() - 1)]);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
    }
    Some(lo)
}

/// nu_m = sup{t : U_1(t) = 2^m} for m = 0..count after rescaling U_1(T) = 1.
pub fn discretize_nu(u1: &SampledFunction, count: usize) -> Result<Vec<f64>, OptimalError> {
    let top = u1.last();
    if !(top > 0.0 && top.is_finite()) {
        return Err(OptimalError::InvalidParameter(format!("U_1(T) = {top}")));
    }
    let env = running_sup(&u1.map(|_, x| x / top, Monotonicity::None), SupWindow::From);
    let mut out = Vec::with_capacity(count);
    for m in 0..count as i32 {
        match level_point(&env, 2f64.powi(m)) {
            Some(t) => out.push(t),
            None => return Err(OptimalError::Exhausted { level: m }),
        }
    }
    Ok(out)
}

/// delta_m = sup{tau : U_q(tau) = 2^m} for m in [first, first + len).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSequence {
    pub first: i32,
    pub deltas: Vec<f64>,
}

impl DeltaSequence {
    pub fn get(&self, m: i32) -> Option<f64> {
        let i = m - self.first;
        if i < 0 {
            return None;
        }
        self.deltas.get(i as usize).copied()
    }

    pub fn last_level(&self) -> i32 {
        self.first + self.deltas.len() as i32 - 1
    }
}

/// The window runs from m = -5 up to the last level whose delta stays
/// above 10 t_min.
pub fn discretize_delta(u_q: &SampledFunction) -> Result<DeltaSequence, OptimalError> {
    let env = running_sup(u_q, SupWindow::From);
    let floor = 10.0 * u_q.grid().t_min();
    let first = -DELTA_WINDOW_BELOW;
    let mut deltas = Vec::new();
    let mut m = first;
    loop {
        match level_point(&env, 2f64.powi(m)) {
            Some(t) if t > floor => deltas.push(t),
            _ => break,
        }
        m += 1;
    }
    if m <= 0 {
        return Err(OptimalError::Exhausted { level: m });
    }
    Ok(DeltaSequence { first, deltas })
}

/// s_{m+1} < s_m <= 2^(1/eps) s_{m+1} along the sequence.
pub fn dyadic_ratio_law(seq: &[f64], eps: f64) -> bool {
    let cap = 2f64.powf(1.0 / eps) * (1.0 + 1e-9);
    seq.windows(2).all(|w| w[1] < w[0] && w[0] <= cap * w[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardyReport {
    pub b_delta: f64,
    pub epsilon: f64,
    /// (q/q')^(1/q') / (eps - delta q)
    pub bound: f64,
    pub within_bound: bool,
    /// B_delta q^(1/q) q'^(1/q')
    pub c3_bound: f64,
    /// q / (eps - delta q)
    pub c3_ceiling: f64,
}

/// B_delta = sup_{0<t<T0} (int_t^T0 tau^(delta q') w)^(1/q')
/// (int_0^t tau^(-(delta+1) q) w^(-q/q'))^(1/q), with eps the largest
/// exponent for which V(t) t^-eps is nondecreasing on (0, T0).
/// `t0 = None` means T0 = inf.
pub fn hardy_constants(space: &LorentzSpace, delta: f64, t0: Option<f64>) -> Result<HardyReport, OptimalError> {
    let q = space.q();
    if q <= 1.0 {
        return Err(OptimalError::InvalidParameter("Hardy constants need q > 1".into()));
    }
    if !(delta >= 0.0) {
        return Err(OptimalError::InvalidParameter(format!("delta = {delta}")));
    }
    let qp = space.q_prime();
    let grid = space.grid();
    let t_min = grid.t_min();
    let t_top = match t0 {
        Some(t) if t > t_min => t,
        Some(t) => return Err(OptimalError::InvalidParameter(format!("T0 = {t}"))),
        None => 1e4 * space.t_max(),
    };
    let count = ((t_top / t_min).ln() / grid.log_step()).round() as usize + 1;
    let eg: LogGrid = make_log_grid(t_min, t_top, count.max(2))?;
    let pts = eg.points();
    let weight = space.weight();
    let big_v: Vec<f64> = pts.iter().map(|&t| space.cap_v_at(t)).collect();
    let inv_v: Vec<f64> = big_v.iter().map(|&v| 1.0 / v).collect();
    let (epsilon, _) = epsilon_witness(pts, &inv_v);
    if epsilon == 0.0 {
        return Err(OptimalError::WitnessMissing);
    }
    if delta >= epsilon / q {
        return Err(OptimalError::InvalidParameter(format!(
            "delta = {delta} must be below eps/q = {}",
            epsilon / q
        )));
    }
    let w: Vec<f64> = pts.iter().zip(&big_v).map(|(&t, &v)| v.powf(-qp) * weight.v(t)).collect();
    let f1: Vec<f64> = pts.iter().zip(&w).map(|(&t, &x)| t.powf(delta * qp) * x).collect();
    let f2: Vec<f64> = pts
        .iter()
        .zip(&w)
        .map(|(&t, &x)| t.powf(-(delta + 1.0) * q) * x.powf(1.0 - q))
        .collect();
    let m = pts.len();
    let mut i1 = vec![0.0; m];
    if t0.is_none() {
        // power tail of f1 past the last node
        let p = (f1[m - 1] / f1[m - 2]).ln() / (pts[m - 1] / pts[m - 2]).ln();
        i1[m - 1] = if p < -1.0 {
            f1[m - 1] * pts[m - 1] / -(p + 1.0)
        } else {
            f64::INFINITY
        };
    }
    for i in (0..m - 1).rev() {
        i1[i] = i1[i + 1] + cell_integral(pts[i], pts[i + 1], f1[i], f1[i + 1]);
    }
    let f2s = SampledFunction::trusted(eg.clone(), f2, Monotonicity::None, Extension::Analytic);
    let i2 = match running_integral(&f2s, true) {
        Ok(r) => r.values().to_vec(),
        Err(QuadError::NonConvergent { .. }) => vec![f64::INFINITY; m],
        Err(err) => return Err(err.into()),
    };
    let upto = if t0.is_some() { m - 1 } else { m };
    let b_delta = (0..upto)
        .map(|i| i1[i].powf(1.0 / qp) * i2[i].powf(1.0 / q))
        .fold(0.0, f64::max);
    let gap = epsilon - delta * q;
    let bound = (q / qp).powf(1.0 / qp) / gap;
    Ok(HardyReport {
        b_delta,
        epsilon,
        bound,
        within_bound: b_delta <= bound * (1.0 + 1e-9),
        c3_bound: b_delta * q.powf(1.0 / q) * qp.powf(1.0 / qp),
        c3_ceiling: q / gap,
    })
}

/// Both sides of (sum_m (beta_m (sum_{j>=m} alpha_j^r)^(1/r))^p)^(1/p)
/// <= c (sum_m (beta_m alpha_m)^p)^(1/p); p or r may be +inf.
pub fn sequence_inequality(alpha: &[f64], beta: &[f64], p: f64, r: f64) -> (f64, f64) {
    assert_eq!(alpha.len(), beta.len());
    let len = alpha.len();
    let mut tails = vec![0.0; len];
    let mut acc: f64 = 0.0;
    for j in (0..len).rev() {
        acc = if r.is_infinite() {
            acc.max(alpha[j])
        } else {
            acc + alpha[j].powf(r)
        };
        tails[j] = if r.is_infinite() { acc } else { acc.powf(1.0 / r) };
    }
    let norm = |xs: Vec<f64>| -> f64 {
        if p.is_infinite() {
            xs.into_iter().fold(0.0, f64::max)
        } else {
            xs.into_iter().map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p)
        }
    };
    let lhs = norm(beta.iter().zip(&tails).map(|(&b, &t)| b * t).collect());
    let rhs = norm(beta.iter().zip(alpha).map(|(&b, &a)| b * a).collect());
    (lhs, rhs)
}

/// Constant of the sequence inequality for p = inf, r = 1 and
/// beta_{m+1}/beta_m >= b: sum_j b^-j = b/(b-1).
pub fn sequence_constant(b: f64) -> f64 {
    b / (b - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember {
    pub name: String,
    pub g: SampledFunction,
}

/// The reference family of 50 nonnegative g on (0, T):
/// 10 indicators of (0, a), 10 of (a, 4a), 15 powers t^s with
/// s in (-1/2, 2) and 15 seeded decreasing staircases.
pub fn g_family(grid: &LogGrid, seed: u64) -> Vec<FamilyMember> {
    let t_max = grid.t_max();
    let decades = (t_max / grid.t_min()).log10();
    let mut out = Vec::with_capacity(50);
    let member = |name: String, f: &dyn Fn(f64) -> f64| FamilyMember {
        name,
        g: SampledFunction::trusted(
            grid.clone(),
            grid.points().iter().map(|&t| f(t)).collect(),
            Monotonicity::None,
            Extension::ZeroBeyondT,
        ),
    };
    for j in 0..10 {
        let a = t_max * 10f64.powf(-0.07 * decades * j as f64);
        out.push(member(format!("ind_0_{a:.3e}"), &|t| if t <= a { 1.0 } else { 0.0 }));
    }
    for j in 0..10 {
        let a = t_max * 10f64.powf(-0.07 * decades * (j as f64 + 0.5)) / 4.0;
        out.push(member(format!("ind_{a:.3e}_4a"), &|t| {
            if t >= a && t <= 4.0 * a {
                1.0
            } else {
                0.0
            }
        }));
    }
    for j in 0..15 {
        let s = -0.45 + 2.4 * j as f64 / 14.0;
        out.push(member(format!("pow_{s:.4}"), &|t| (t / t_max).powf(s)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..15 {
        let steps = rng.gen_range(2..=8);
        let mut cuts: Vec<f64> = (0..steps)
            .map(|_| t_max * 10f64.powf(-rng.gen_range(0.0..0.8 * decades)))
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut levels: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.1..10.0)).collect();
        levels.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        out.push(member(format!("stair_{j}"), &|t| {
            cuts.iter()
                .zip(&levels)
                .find(|(&c, _)| t <= c)
                .map(|(_, &l)| l)
                .unwrap_or(0.0)
        }));
    }
    out
}

/// rho_0 / rho~_0 over a family.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceSummary {
    pub norms: Vec<AssociatedNorms>,
    pub ratios: Vec<f64>,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl EquivalenceSummary {
    /// max / min ratio across the family.
    pub fn spread(&self) -> f64 {
        self.ratio_max / self.ratio_min
    }
}

pub fn equivalence_experiment(
    space: &LorentzSpace,
    phi: &SampledFunction,
    k: u32,
    n: usize,
    family: &[FamilyMember],
) -> Result<EquivalenceSummary, OptimalError> {
    let norms = family
        .iter()
        .map(|m| associated_norms(space, phi, k, n, &m.g))
        .collect::<Result<Vec<_>, _>>()?;
    let ratios: Vec<f64> = norms.iter().map(|r| r.rho0 / r.rho_tilde0).collect();
    let finite = ratios.iter().copied().filter(|r| r.is_finite());
    let ratio_min = finite.clone().fold(f64::INFINITY, f64::min);
    let ratio_max = if ratios.iter().any(|r| !r.is_finite()) {
        f64::NAN
    } else {
        finite.fold(0.0, f64::max)
    };
    Ok(EquivalenceSummary {
        norms,
        ratios,
        ratio_min,
        ratio_max,
    })
}
