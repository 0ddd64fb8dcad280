use calderon_lab::gridfn::{make_log_grid, Extension, LogGrid, Monotonicity, SampledFunction};
use calderon_lab::kernels::{KernelSpec, SlowlyVaryingSpec, SvKind};
use calderon_lab::lorentz::{embedding_criterion, psi_q, Embedding, LorentzSpace, WeightSpec};
use calderon_lab::optimal::{
    check_condition_a, check_condition_b, equivalence_experiment, equivalence_status, g_family, hardy_constants,
    w_tilde_and_uq, ConditionWitness, EquivalenceStatus, OptimalCase, OptimalNormSpec,
};
use calderon_lab::par::map_slice;
use calderon_lab::potentials::{
    calderon_norm, convolve, envelope_bounds, f_family, modulus_on_grid, upper_cone_check, CalderonTarget,
};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, KernelKind, Scenario, WeightKind};
use crate::report::{num, nums, Outcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("scenario {scenario} failed while {context}: {message}")]
pub struct ScenarioFailed {
    pub scenario: &'static str,
    pub context: String,
    pub message: String,
}

type Res<T> = Result<T, ScenarioFailed>;

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
}

impl Ctx<'_> {
    fn wrap<T, E: std::fmt::Display>(&self, context: &str, r: Result<T, E>) -> Res<T> {
        r.map_err(|e| ScenarioFailed {
            scenario: self.cfg.scenario.name(),
            context: context.to_string(),
            message: e.to_string(),
        })
    }

    fn grid(&self) -> Res<LogGrid> {
        let c = self.cfg;
        self.wrap("building the grid", make_log_grid(c.t_min, c.t_max, c.grid_points))
    }

    /// The modulus / envelope abscissae, ending at T.
    fn t_grid(&self) -> Res<LogGrid> {
        let c = self.cfg;
        self.wrap(
            "building the t grid",
            make_log_grid(c.tgrid_floor * c.t_max, c.t_max, c.tgrid_points),
        )
    }

    fn space(&self, grid: &LogGrid) -> Res<LorentzSpace> {
        let c = self.cfg;
        let weight = match &c.weight {
            WeightKind::Uniform => WeightSpec::uniform(c.t_max),
            WeightKind::Power { a } => WeightSpec::power(*a, c.t_max),
            WeightKind::LorentzKaramata { p, beta } => {
                let b = self.wrap("building b", SlowlyVaryingSpec::log_power(*beta, c.t_max))?;
                WeightSpec::lorentz_karamata(c.q, *p, &b, c.t_max)
            }
        };
        let weight = self.wrap("building the weight", weight)?;
        self.wrap("building the Lorentz space", LorentzSpace::new(c.q, weight, grid))
    }

    fn kernel(&self) -> Res<Option<KernelSpec>> {
        let c = self.cfg;
        let k = match &c.kernel {
            KernelKind::Power => return Ok(None),
            KernelKind::Bessel => KernelSpec::bessel_alpha(c.n, c.alpha),
            KernelKind::PowerSv { lambda, z1, tail_rate } => {
                let factors = if *lambda == 0.0 {
                    Vec::new()
                } else {
                    vec![(SvKind::Log, *lambda)]
                };
                KernelSpec::power_sv(c.n, c.alpha, factors, *z1, *tail_rate)
            }
        };
        self.wrap("building the kernel", k).map(Some)
    }

    fn phi(&self, grid: &LogGrid) -> Res<SampledFunction> {
        let c = self.cfg;
        match self.kernel()? {
            Some(kernel) => self.wrap("sampling phi", kernel.phi_sampled(grid)),
            None => {
                let e = c.alpha / c.n as f64 - 1.0;
                let mono = if e < 0.0 {
                    Monotonicity::Decreasing
                } else if e > 0.0 {
                    Monotonicity::Increasing
                } else {
                    Monotonicity::None
                };
                self.wrap(
                    "sampling phi",
                    SampledFunction::from_fn(grid, |t| t.powf(e), mono, Extension::Analytic),
                )
            }
        }
    }
}

pub fn run_scenario(cfg: &ExperimentConfig) -> Res<Outcome> {
    let ctx = Ctx { cfg };
    match cfg.scenario {
        Scenario::EmbeddingCheck => embedding_check(&ctx),
        Scenario::OptimalNorm => optimal_norm(&ctx),
        Scenario::EquivalenceSweep => equivalence_sweep(&ctx),
        Scenario::Envelope => envelope(&ctx),
        Scenario::BesovCase => besov_case(&ctx),
        Scenario::LorentzKaramataCase => lorentz_karamata_case(&ctx),
        Scenario::CoveringSample => covering_sample(&ctx),
    }
}

fn record_embedding(ctx: &Ctx, out: &mut Outcome, e: &Embedding) {
    let value = Value::from(e.embeds);
    match ctx.cfg.expect_embeds {
        Some(want) => out.checked(
            "embeds",
            value,
            e.embeds == want,
            format!("expected {want}, refinement {:?}", e.refinement),
        ),
        None => out.scalar("embeds", value),
    }
    out.scalar("psi_q_at_T", num(e.psi_at_t));
    out.table("psi_q_refinement", nums(&e.refinement));
}

fn embedding_check(ctx: &Ctx) -> Res<Outcome> {
    let grid = ctx.grid()?;
    let space = ctx.space(&grid)?;
    let phi = ctx.phi(&grid)?;
    let e = ctx.wrap("judging the embedding", embedding_criterion(&space, &phi))?;
    let mut out = Outcome::default();
    record_embedding(ctx, &mut out, &e);
    if e.embeds {
        let psi = ctx.wrap("computing Psi_q", psi_q(&space, &phi))?;
        out.series("psi_q", psi.points(), psi.values());
    }
    Ok(out)
}

fn witness_json(w: &ConditionWitness) -> Value {
    json!({
        "d": num(w.d),
        "d_refinement": nums(&w.d_refinement),
        "finiteness": format!("{:?}", w.finiteness),
        "epsilon": num(w.epsilon),
        "holds": w.holds,
        "failure_locus": w.failure_locus.map(num),
    })
}

fn status_name(s: EquivalenceStatus) -> &'static str {
    match s {
        EquivalenceStatus::ConditionA => "A",
        EquivalenceStatus::ConditionB => "B",
        EquivalenceStatus::NeitherConditionHolds => "neither",
    }
}

/// Conditions (A) and (B), recorded into `out`; returns the status.
fn conditions(ctx: &Ctx, out: &mut Outcome, space: &LorentzSpace, phi: &SampledFunction) -> Res<EquivalenceStatus> {
    let c = ctx.cfg;
    let (wt, uq) = ctx.wrap("computing W~ and U_q", w_tilde_and_uq(space, phi, c.k, c.n))?;
    let a = ctx.wrap("checking condition A", check_condition_a(phi, space.cap_v(), c.k, c.n))?;
    let b = ctx.wrap("checking condition B", check_condition_b(phi, &uq, c.k, c.n))?;
    let status = equivalence_status(&a, &b);
    let name = status_name(status);
    match &c.expect_condition {
        Some(want) => out.checked(
            "condition",
            Value::from(name),
            name == want,
            format!("expected {want}, d1 = {}, d2 = {}", a.d, b.d),
        ),
        None => out.scalar("condition", Value::from(name)),
    }
    out.scalar("d1", num(a.d));
    out.scalar("d2", num(b.d));
    out.table("condition_a", witness_json(&a));
    out.table("condition_b", witness_json(&b));
    out.series("w_tilde", wt.points(), wt.values());
    out.series("u_q", uq.points(), uq.values());
    Ok(status)
}

fn optimal_norm(ctx: &Ctx) -> Res<Outcome> {
    let c = ctx.cfg;
    let grid = ctx.grid()?;
    let space = ctx.space(&grid)?;
    let phi = ctx.phi(&grid)?;
    let mut out = Outcome::default();
    let e = ctx.wrap("judging the embedding", embedding_criterion(&space, &phi))?;
    record_embedding(ctx, &mut out, &e);
    if e.embeds {
        let spec = ctx.wrap("building the optimal norm", OptimalNormSpec::build(&space, &phi))?;
        out.scalar(
            "case",
            Value::from(match spec.case {
                OptimalCase::LInftyCase => "l_infinity",
                OptimalCase::WeightedCase => "weighted",
            }),
        );
        if let Some(t1) = spec.t1 {
            let top = spec.psi.last();
            let miss = (spec.psi.eval(t1) - 0.5 * top).abs() / top;
            out.checked("t1", num(t1), miss <= 1e-6, format!("|Psi(T1) - Psi(T)/2| / Psi(T) = {miss:e}"));
        }
        out.series("psi_q", spec.psi.points(), spec.psi.values());
    }
    conditions(ctx, &mut out, &space, &phi)?;
    let h = ctx.wrap("computing Hardy constants", hardy_constants(&space, 0.0, Some(c.t_max)))?;
    out.checked(
        "hardy_b0",
        num(h.b_delta),
        h.within_bound,
        format!("bound (q/q')^(1/q')/eps = {}", h.bound),
    );
    out.scalar("hardy_bound", num(h.bound));
    out.scalar("hardy_epsilon", num(h.epsilon));
    let c3_ok = h.c3_bound <= h.c3_ceiling * (1.0 + 1e-9);
    out.checked(
        "hardy_c3",
        num(h.c3_bound),
        c3_ok,
        format!("ceiling q/eps = {}", h.c3_ceiling),
    );
    Ok(out)
}

fn equivalence_sweep(ctx: &Ctx) -> Res<Outcome> {
    let c = ctx.cfg;
    let grid = ctx.grid()?;
    let space = ctx.space(&grid)?;
    let phi = ctx.phi(&grid)?;
    let mut out = Outcome::default();
    conditions(ctx, &mut out, &space, &phi)?;
    let family = g_family(&grid, c.seed);
    let sum = ctx.wrap(
        "evaluating the g family",
        equivalence_experiment(&space, &phi, c.k, c.n, &family),
    )?;
    let rows: Vec<Value> = family
        .iter()
        .zip(&sum.norms)
        .zip(&sum.ratios)
        .map(|((m, r), &ratio)| {
            json!({
                "g": m.name,
                "rho0": num(r.rho0),
                "rho_tilde0": num(r.rho_tilde0),
                "rho1": num(r.rho1),
                "rho2": r.rho2.map(num),
                "rho_hat0": num(r.rho_hat0),
                "ratio": num(ratio),
            })
        })
        .collect();
    out.table("family", Value::Array(rows));
    // only rho_0 >= rho~_0 / 2 holds for every weight
    out.checked(
        "ratio_min",
        num(sum.ratio_min),
        sum.ratio_min >= 0.5,
        "rho0 / rho~0 >= 1/2",
    );
    out.checked(
        "ratio_max",
        num(sum.ratio_max),
        sum.ratio_max.is_finite(),
        "C = max rho0 / rho~0 must be finite",
    );
    out.scalar("spread", num(sum.spread()));
    Ok(out)
}

fn envelope(ctx: &Ctx) -> Res<Outcome> {
    let c = ctx.cfg;
    let grid = ctx.grid()?;
    let space = ctx.space(&grid)?;
    let phi = ctx.phi(&grid)?;
    let tg = ctx.t_grid()?;
    let env = ctx.wrap("evaluating the envelope", envelope_bounds(&space, &phi, c.k, c.n, &tg))?;
    let vals = env.upper.values();
    let mut out = Outcome::default();
    let monotone = vals.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    out.assert("envelope_nondecreasing", monotone, "t -> ||Omega(t, .)|| must not decrease");
    out.scalar("envelope_at_T", num(env.upper.last()));
    let pts = tg.points();
    let slope = (vals[1] / vals[0]).ln() / (pts[1] / pts[0]).ln();
    out.scalar("envelope_slope_at_floor", num(slope));
    out.series("envelope", pts, vals);
    Ok(out)
}

struct Fields {
    kernel: KernelSpec,
    space: LorentzSpace,
    phi: SampledFunction,
    family: Vec<calderon_lab::potentials::FieldSample>,
    tg: LogGrid,
}

fn fields(ctx: &Ctx) -> Res<Fields> {
    let c = ctx.cfg;
    let grid = ctx.grid()?;
    let space = ctx.space(&grid)?;
    let kernel = ctx.kernel()?.expect("field scenarios carry a kernel");
    let phi = ctx.wrap("sampling phi", kernel.phi_sampled(&grid))?;
    let mut family = ctx.wrap("building the f family", f_family(c.halfwidth, c.resolution, c.seed))?;
    family.truncate(c.field_count);
    Ok(Fields {
        kernel,
        space,
        phi,
        family,
        tg: ctx.t_grid()?,
    })
}

fn besov_case(ctx: &Ctx) -> Res<Outcome> {
    let c = ctx.cfg;
    let f = fields(ctx)?;
    let spec = ctx.wrap("building the optimal norm", OptimalNormSpec::build(&f.space, &f.phi))?;
    let optimal = CalderonTarget::Optimal(spec);
    let besov = CalderonTarget::Besov {
        alpha: c.alpha,
        q: c.q,
        n: c.n,
    };
    let per_field = map_slice(&f.family, |field| {
        let u = convolve(&f.kernel, field)?;
        let a = calderon_norm(&u, &optimal, c.k, &f.tg, c.directions)?;
        let b = calderon_norm(&u, &besov, c.k, &f.tg, c.directions)?;
        Ok((a, b))
    });
    let per_field = ctx.wrap("evaluating the Calderon norms", per_field.into_iter().collect::<Result<Vec<_>, calderon_lab::potentials::PotentialError>>())?;
    let mut worst: f64 = 1.0;
    let mut rows = Vec::new();
    for (i, (a, b)) in per_field.iter().enumerate() {
        let r = a.total / b.total;
        let factor = if r >= 1.0 { r } else { 1.0 / r };
        worst = if factor.is_nan() { f64::NAN } else { worst.max(factor) };
        rows.push(json!({
            "field": i,
            "sup_norm": num(a.sup_norm),
            "optimal_modulus_part": num(a.modulus_part),
            "besov_modulus_part": num(b.modulus_part),
            "optimal_total": num(a.total),
            "besov_total": num(b.total),
            "factor": num(factor),
        }));
    }
    out_fields(ctx, &f, rows, |out| {
        out.checked(
            "factor",
            num(worst),
            worst <= c.factor_limit,
            format!("max over fields of max(r, 1/r), limit {}", c.factor_limit),
        );
    })
}

fn out_fields(ctx: &Ctx, f: &Fields, rows: Vec<Value>, finish: impl FnOnce(&mut Outcome)) -> Res<Outcome> {
    let c = ctx.cfg;
    let mut out = Outcome::default();
    out.table("fields", Value::Array(rows));
    let u0 = ctx.wrap("convolving field 0", convolve(&f.kernel, &f.family[0]))?;
    let om = ctx.wrap("modulus of field 0", modulus_on_grid(&u0, c.k, &f.tg, c.directions))?;
    out.series("modulus_field0", om.points(), om.values());
    finish(&mut out);
    Ok(out)
}

fn covering_sample(ctx: &Ctx) -> Res<Outcome> {
    let c = ctx.cfg;
    let f = fields(ctx)?;
    let rep = ctx.wrap(
        "running the cone check",
        upper_cone_check(&f.space, &f.kernel, c.k, &f.family, &f.tg, c.directions),
    )?;
    let rows: Vec<Value> = rep
        .ratios
        .iter()
        .zip(&rep.worst_t)
        .enumerate()
        .map(|(i, (&r, &t))| json!({"field": i, "ratio": num(r), "worst_t": num(t)}))
        .collect();
    out_fields(ctx, &f, rows, |out| {
        out.checked(
            "c1",
            num(rep.c1),
            rep.c1.is_finite() && rep.c1 > 0.0,
            "empirical c1 must be finite and positive",
        );
    })
}

fn lorentz_karamata_case(ctx: &Ctx) -> Res<Outcome> {
    let c = ctx.cfg;
    let grid = ctx.grid()?;
    let space = ctx.space(&grid)?;
    let phi = ctx.phi(&grid)?;
    let e = ctx.wrap("judging the embedding", embedding_criterion(&space, &phi))?;
    let mut out = Outcome::default();
    record_embedding(ctx, &mut out, &e);
    if let WeightKind::LorentzKaramata { p, beta } = c.weight {
        out.scalar("alpha_minus_n_over_p", num(c.alpha - c.n as f64 / p));
        out.scalar("beta_q_prime", num(beta * space.q_prime()));
    }
    let cap_v = space.cap_v();
    out.series("cap_v", cap_v.points(), cap_v.values());
    if e.embeds {
        let psi = ctx.wrap("computing Psi_q", psi_q(&space, &phi))?;
        out.series("psi_q", psi.points(), psi.values());
    }
    Ok(out)
}
