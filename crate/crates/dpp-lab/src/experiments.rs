//! The ten experiment kinds.

use std::time::Instant;

use dpp_core::barriers::{annular_constants, annulus_samples, ball_samples, build_annular_barrier, build_global_barrier, verify_annular_barrier, verify_global_barrier};
use dpp_core::czdecomp::{cz_audit, cz_decompose, random_hypothesis_instance};
use dpp_core::envelope::{abp_ratio_audit, concave_envelope, default_contact_tol, EnvelopeMethod};
use dpp_core::lattice::{ExtendedDomain, GridFunction, Point};
use dpp_core::measures::DirectionNet;
use dpp_core::operators::{Control, OperatorContext, OperatorParams};
use dpp_core::regularity::*;
use dpp_core::solver::{solve_dpp, DppProblem, OperatorKind, SolveOptions};
use num_rational::Ratio;
use serde_json::{json, Value};

use crate::config::{parse_ratio, BoundaryConfig, ExperimentConfig, ExperimentKind, FamilyConfig, OperatorChoice, Shape};
use crate::encode;
use crate::output::{num, nums, Cell, Series};
use crate::LabError;

/// Everything an experiment produces.
pub struct Outcome {
    pub checks: Vec<(String, bool)>,
    pub results: Value,
    pub series: Series,
    /// Extra artifacts, e.g. indicator bitmaps.
    pub files: Vec<(String, Vec<u8>)>,
    /// Named wall times in milliseconds, kept out of the report.
    pub timings: Vec<(String, f64)>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

struct Timer(Vec<(String, f64)>);

impl Timer {
    fn time<T>(&mut self, name: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((name.into(), start.elapsed().as_secs_f64() * 1e3));
        out
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    match cfg.kind {
        ExperimentKind::Solve => solve(cfg),
        ExperimentKind::BarrierCheck => barrier_check(cfg),
        ExperimentKind::AbpCheck => abp_check(cfg),
        ExperimentKind::CzDemo => cz_demo(cfg),
        ExperimentKind::Levelsets | ExperimentKind::DeGiorgi | ExperimentKind::Holder => regularity(cfg),
        ExperimentKind::Harnack => match cfg.problem.family {
            Some(FamilyConfig::AxisAtoms) => counterexample(cfg),
            _ => regularity(cfg),
        },
        ExperimentKind::Counterexample => counterexample(cfg),
        ExperimentKind::Convergence => convergence(cfg),
    }
}

fn family_spec(cfg: &ExperimentConfig, dim: usize) -> Result<FamilySpec, LabError> {
    Ok(match cfg.problem.family.clone().unwrap_or(FamilyConfig::Uniform { radius: 1.0 }) {
        FamilyConfig::Uniform { radius } => FamilySpec::Uniform { radius },
        FamilyConfig::Ellipsoids { count, cell } => FamilySpec::RandomEllipsoids { count, cell },
        FamilyConfig::AtomPair { offset } => {
            if offset.len() != dim {
                return Err(LabError::field("problem.family.offset", format!("length {} ≠ dimension {dim}", offset.len())));
            }
            FamilySpec::AtomPair { offset }
        }
        FamilyConfig::AxisAtoms => FamilySpec::AxisAtoms,
    })
}

fn boundary_spec(b: &BoundaryConfig) -> BoundarySpec {
    match b.clone() {
        BoundaryConfig::Constant { value } => BoundarySpec::Constant(value),
        BoundaryConfig::Spike { center, height, width, base } => BoundarySpec::Spike { center, height, width, base },
        BoundaryConfig::Linear { base, slope } => BoundarySpec::Linear { base, slope },
        BoundaryConfig::Quadratic { base, coef } => BoundarySpec::Quadratic { base, coef },
    }
}

struct Defaults {
    eps: f64,
    domain: DomainSpec,
    source: f64,
    boundary: BoundarySpec,
    tol: f64,
}

fn instance(cfg: &ExperimentConfig, d: impl FnOnce(usize, f64, f64) -> Defaults) -> Result<InstanceSpec, LabError> {
    let p = &cfg.problem;
    let dim = p.dim.unwrap_or(1);
    let beta = cfg.beta();
    let lambda = p.lambda.unwrap_or(1.0);
    let d = d(dim, lambda, beta);
    let eps = p.eps.unwrap_or(d.eps);
    let h = p.h.unwrap_or(eps / 4.0);
    if h > eps {
        return Err(LabError::field("problem.h", format!("h = {h} exceeds ε = {eps}")));
    }
    let domain = match &p.domain {
        Some(dc) => match dc.shape {
            Shape::Ball => DomainSpec::Ball(dc.size),
            Shape::Cube => DomainSpec::Cube(dc.size),
        },
        None => d.domain,
    };
    let boundary = p.boundary.as_ref().map_or(d.boundary, boundary_spec);
    let check_len = |v: &Point, name: &str| {
        if v.len() == dim {
            Ok(())
        } else {
            Err(LabError::field(name, format!("length {} ≠ dimension {dim}", v.len())))
        }
    };
    match &boundary {
        BoundarySpec::Spike { center, .. } => check_len(center, "problem.boundary.center")?,
        BoundarySpec::Linear { slope, .. } => check_len(slope, "problem.boundary.slope")?,
        _ => {}
    }
    Ok(InstanceSpec {
        dim,
        beta,
        lambda,
        eps,
        h,
        family: family_spec(cfg, dim)?,
        domain,
        source: p.source.unwrap_or(d.source),
        boundary,
        seed: cfg.seed.unwrap_or(0),
        tol: cfg.tolerances.solver.unwrap_or(d.tol),
    })
}

fn solve_defaults(_: usize, _: f64, _: f64) -> Defaults {
    Defaults {
        eps: 0.1,
        domain: DomainSpec::Ball(1.0),
        source: 0.0,
        boundary: BoundarySpec::Quadratic { base: 0.0, coef: 1.0 },
        tol: 1e-10,
    }
}

fn regularity_defaults(dim: usize, lambda: f64, beta: f64) -> Defaults {
    let n = dim as f64;
    Defaults {
        eps: build_global_barrier(dim, lambda.max(1.0), beta).eps0 / 5.0,
        domain: if dim == 1 { DomainSpec::Ball(7.0) } else { DomainSpec::Cube(10.0 * n.sqrt()) },
        source: 0.005,
        boundary: BoundarySpec::Constant(1.0),
        tol: 1e-11,
    }
}

fn node_series(u: &GridFunction, nodes: &[usize]) -> Series {
    let lat = u.lattice();
    let mut s = Series::new((1..=lat.dim()).map(|k| format!("x{k}")).chain(["u".to_string()]));
    for &i in nodes {
        let mut row: Vec<Cell> = lat.coords(i).into_iter().map(Cell::from).collect();
        row.push(u.value(i).into());
        s.push(row);
    }
    s
}

fn solve(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let spec = instance(cfg, solve_defaults)?;
    let mut timer = Timer(Vec::new());
    let (problem, u, report, direct) = match cfg.problem.operator {
        OperatorChoice::Linear => {
            let inst = timer.time("solve", || solve_instance(&spec))?;
            timer.0.push(("solver_wall_time".into(), inst.report.wall_time_ms));
            (inst.problem, inst.u, inst.report, inst.direct_seed)
        }
        choice => {
            let params = OperatorParams::new(spec.beta, spec.eps, spec.lambda)?;
            let ctx = OperatorContext::new(params, spec.dim, spec.h)?;
            let control = match choice {
                OperatorChoice::SupPair => Control::SupPair(DirectionNet::new(spec.dim, spec.lambda.max(1.0), spec.lambda.max(1.0) / 4.0)?),
                _ => Control::TugOfWar,
            };
            let domain = ExtendedDomain::new(spec.domain.region(spec.dim), spec.eps * spec.lambda.max(1.0), spec.h)?;
            let g = spec.boundary.clone();
            let f = spec.source;
            let problem = DppProblem::new(domain, ctx, OperatorKind::Controlled(control), move |_| f, move |x| g.eval(x))?;
            let (u, report) = timer.time("solve", || solve_dpp(&problem, &SolveOptions::new(spec.tol)))?;
            timer.0.push(("solver_wall_time".into(), report.wall_time_ms));
            (problem, u, report, false)
        }
    };
    let lat = problem.lattice();
    let interior = problem.domain().interior();
    let (gmin, gmax) = problem
        .domain()
        .boundary()
        .map(|i| spec.boundary.eval(&lat.coords(i)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (umin, umax) = interior.iter().map(|&i| u.value(i)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let slack = 1e-9 * (1.0 + gmin.abs().max(gmax.abs()));
    let mut checks = vec![("converged".to_string(), report.converged)];
    let max_principle = (spec.source == 0.0).then_some(umin >= gmin - slack && umax <= gmax + slack);
    if let Some(ok) = max_principle {
        checks.push(("maximum-principle".into(), ok));
    }
    let results = json!({
        "solver": encode::solve_report(&report),
        "direct_seed": direct,
        "nodes": lat.len(),
        "interior_nodes": interior.len(),
        "spacing": num(lat.spacing()),
        "eps": num(spec.eps),
        "beta": num(spec.beta),
        "lambda": num(spec.lambda),
        "interior_min": num(umin),
        "interior_max": num(umax),
        "boundary_min": num(gmin),
        "boundary_max": num(gmax),
        "maximum_principle": max_principle,
    });
    Ok(Outcome {
        checks,
        results,
        series: node_series(&u, interior),
        files: Vec::new(),
        timings: timer.0,
    })
}

fn net_resolution(dim: usize, lambda: f64) -> f64 {
    lambda
        * match dim {
            1 => 0.01,
            2 => 0.1,
            _ => 0.25,
        }
}

fn stencil_ratio(dim: usize) -> f64 {
    match dim {
        1 => 20.0,
        2 => 10.0,
        _ => 6.0,
    }
}

fn barrier_check(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let seed = cfg.seed.expect("validated");
    let beta = cfg.beta();
    let lambda = cfg.problem.lambda.unwrap_or(1.0);
    if lambda < 1.0 {
        return Err(LabError::field("problem.lambda", "barriers need Λ ≥ 1"));
    }
    let dims = cfg.experiment.dims.clone().unwrap_or_else(|| cfg.problem.dim.map_or(vec![1, 2], |d| vec![d]));
    let samples = cfg.experiment.samples.unwrap_or(1000);
    let mut timer = Timer(Vec::new());
    let mut checks = Vec::new();
    let mut per_dim = Vec::new();
    let mut series = Series::new(["dim", "r", "psi_big", "psi_small", "annular_profile"]);
    for &dim in &dims {
        if !(1..=3).contains(&dim) {
            return Err(LabError::field("experiment.dims", format!("{dim} outside 1..=3")));
        }
        let n = dim as f64;
        let b = build_global_barrier(dim, lambda, beta);
        let at_inner = b.profile(1.5 * n.sqrt());
        let at_outer = b.profile(2.0 * n.sqrt());
        let inner_ok = (at_inner - 2.0).abs() <= 1e-9;
        let outer_ok = at_outer.abs() <= 1e-12 * b.b.max(1.0);
        let r_max = 2.0 * n.sqrt() + lambda * b.eps0;
        let radii: Vec<f64> = (0..10_000).map(|k| 0.25 + (r_max - 0.25) * k as f64 / 9_999.0).collect();
        let max_psi = radii.iter().map(|&r| b.psi_small_radial(r)).fold(f64::NEG_INFINITY, f64::max);
        checks.push((format!("global-boundary-values-n{dim}"), inner_ok && outer_ok));
        checks.push((format!("global-psi-sign-n{dim}"), max_psi <= 0.0));
        let net = DirectionNet::new(dim, lambda, net_resolution(dim, lambda))?;
        let pts = ball_samples(dim, 2.0 * n.sqrt(), samples, seed);
        let mut global_runs = Vec::new();
        for (label, eps) in [("eps0", b.eps0), ("eps0_half", b.eps0 / 2.0)] {
            let ctx = OperatorContext::new(OperatorParams::new(beta, eps, lambda)?, dim, eps / stencil_ratio(dim))?;
            let rep = timer.time(format!("global-n{dim}-{label}"), || verify_global_barrier(&b, &ctx, &net, &pts))?;
            checks.push((format!("global-supersolution-n{dim}-{label}"), rep.pass));
            global_runs.push(json!({ "eps": num(eps), "label": label, "report": encode::barrier_report(&rep) }));
        }
        let (sigma, kappa, eps0a) = annular_constants(dim, lambda, beta);
        let mut annular_runs = Vec::new();
        let mut profile_barrier = None;
        for (label, eps) in [("eps0", eps0a), ("eps0_half", eps0a / 2.0)] {
            let r = (kappa * eps + 1.0) / 2.0;
            let ab = build_annular_barrier(vec![0.0; dim], r, eps, lambda, beta, 1.0)?;
            let inner = ab.profile(r - lambda * eps);
            let bc_ok = (inner - 1.0).abs() <= 1e-9 && ab.profile(4.0).abs() <= 1e-12;
            let ctx = OperatorContext::new(OperatorParams::new(beta, eps, lambda)?, dim, eps / stencil_ratio(dim))?;
            let pts = annulus_samples(&ab, samples, seed ^ 0x5a5a);
            let rep = timer.time(format!("annular-n{dim}-{label}"), || verify_annular_barrier(&ab, &ctx, &net, &pts))?;
            checks.push((format!("annular-boundary-values-n{dim}-{label}"), bc_ok));
            checks.push((format!("annular-supersolution-n{dim}-{label}"), rep.pass));
            annular_runs.push(json!({
                "label": label,
                "barrier": encode::annular_barrier(&ab),
                "profile_inner": num(inner),
                "profile_at_4": num(ab.profile(4.0)),
                "report": encode::barrier_report(&rep),
            }));
            profile_barrier.get_or_insert(ab);
        }
        let ab = profile_barrier.expect("two runs");
        for k in 0..=200 {
            let r = r_max * k as f64 / 200.0;
            let annular = (r >= ab.r - lambda * ab.eps).then(|| ab.profile(r));
            series.push(vec![dim.into(), r.into(), b.profile(r).into(), b.psi_small_radial(r).into(), annular.into()]);
        }
        per_dim.push(json!({
            "dim": dim,
            "global": {
                "barrier": encode::global_barrier(&b),
                "psi_at_inner": num(at_inner),
                "psi_at_outer": num(at_outer),
                "max_psi_small_outside_quarter": num(max_psi),
                "radii_checked": radii.len(),
                "runs": global_runs,
            },
            "annular": { "sigma": num(sigma), "kappa": num(kappa), "eps0": num(eps0a), "runs": annular_runs },
        }));
    }
    Ok(Outcome {
        checks,
        results: json!({ "beta": num(beta), "lambda": num(lambda), "samples": samples, "dims": per_dim }),
        series,
        files: Vec::new(),
        timings: timer.0,
    })
}

fn abp_check(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    if cfg.problem.domain.is_some() || cfg.problem.boundary.is_some() {
        return Err(LabError::field("problem.domain", "abp-check fixes Ω = B_{2√N} and g = 0"));
    }
    let spec = instance(cfg, |dim, _, _| Defaults {
        eps: 0.1,
        domain: DomainSpec::Ball(2.0 * (dim as f64).sqrt()),
        source: 1.0,
        boundary: BoundarySpec::Constant(0.0),
        tol: 1e-10,
    })?;
    if spec.source < 0.0 {
        return Err(LabError::field("problem.source", "f must be nonnegative for a subsolution"));
    }
    let mut timer = Timer(Vec::new());
    let inst = timer.time("solve", || solve_instance(&spec))?;
    let method = match cfg.experiment.method.as_deref() {
        Some("lp") => EnvelopeMethod::Lp,
        _ => EnvelopeMethod::Hull,
    };
    let ctx = inst.problem.context();
    let atoms: Vec<Point> = inst
        .family
        .catalog()
        .iter()
        .chain(std::iter::once(ctx.ball()))
        .flat_map(|q| q.pairs().iter().map(|p| p.offset.clone()))
        .collect();
    let lam = inst.family.lambda().max(1.0);
    let net = DirectionNet::new(spec.dim, lam, lam / 2.0)?.with_points(atoms);
    let source = spec.source;
    let f = (spec.dim, move |_: &[f64]| source);
    let tol_contact = default_contact_tol(spec.tol, spec.eps);
    let (audit, res) = timer.time("abp", || abp_ratio_audit(&inst.u, &f, ctx, &net, method, tol_contact, 1e-8))?;
    let mut checks = vec![
        ("converged".to_string(), inst.report.converged),
        ("abp-ratio-finite".to_string(), audit.degenerate || audit.ratio.is_some_and(f64::is_finite)),
    ];
    let agreement = if cfg.experiment.compare_methods.unwrap_or(true) {
        let radius = res.envelope.radius();
        let hull = timer.time("hull", || concave_envelope(&inst.u, radius, EnvelopeMethod::Hull))?;
        let lp = timer.time("lp", || concave_envelope(&inst.u, radius, EnvelopeMethod::Lp))?;
        let diff = hull.values().iter().zip(lp.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let tol = cfg.tolerances.envelope_agreement.unwrap_or(1e-8);
        checks.push(("hull-lp-agreement".into(), diff <= tol));
        Some(json!({ "max_difference": num(diff), "tol": num(tol) }))
    } else {
        None
    };
    let lat = res.envelope.lattice();
    let mut series = Series::new((1..=spec.dim).map(|k| format!("x{k}")).chain(["u", "gamma", "contact"].map(String::from)));
    for i in 0..lat.len() {
        if res.envelope.in_ball()[i] {
            let mut row: Vec<Cell> = lat.coords(i).into_iter().map(Cell::from).collect();
            row.extend([inst.u.value(i).into(), res.envelope.values()[i].into(), res.contact[i].into()]);
            series.push(row);
        }
    }
    Ok(Outcome {
        checks,
        results: json!({
            "solver": encode::solve_report(&inst.report),
            "eps": num(spec.eps),
            "h": num(spec.h),
            "method": if method == EnvelopeMethod::Hull { "hull" } else { "lp" },
            "tol_contact": num(tol_contact),
            "audit": encode::abp_audit(&audit),
            "method_agreement": agreement,
        }),
        series,
        files: Vec::new(),
        timings: timer.0,
    })
}

fn cz_demo(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let seed = cfg.seed.expect("validated");
    let e = &cfg.experiment;
    let dim = cfg.problem.dim.unwrap_or(2);
    let l = e.levels.unwrap_or(4);
    let l_max = e.l_max.unwrap_or(l + 2);
    let d1 = parse_ratio("experiment.delta1", e.delta1.as_deref().unwrap_or("1/4"))?;
    let d2 = parse_ratio("experiment.delta2", e.delta2.as_deref().unwrap_or("1/16"))?;
    let trials = e.trials.unwrap_or(100);
    if l == 0 || l > l_max || l_max as usize * dim > dpp_core::czdecomp::MAX_CELL_BITS as usize {
        return Err(LabError::field("experiment.levels", format!("need 1 ≤ L ≤ l_max with N·l_max ≤ {}", dpp_core::czdecomp::MAX_CELL_BITS)));
    }
    let mut timer = Timer(Vec::new());
    let mut series = Series::new(["trial", "measure_a", "measure_b", "bound", "selected", "residual", "holds", "audit"]);
    let mut failures = 0usize;
    let mut audit_failures = 0usize;
    let mut first = Value::Null;
    let mut files = Vec::new();
    timer.time("trials", || -> Result<(), LabError> {
        for t in 0..trials {
            let (a, b) = random_hypothesis_instance(dim, l, l_max, d1, seed.wrapping_add(t as u64))?;
            let res = cz_decompose(&a, &b, d1, d2, l)?;
            let audit_ok = cz_audit(&a, &b, &res).is_ok();
            failures += usize::from(!res.conclusion_holds);
            audit_failures += usize::from(!audit_ok);
            let f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
            series.push(vec![t.into(), f(res.measure_a).into(), f(res.measure_b).into(), f(res.bound).into(), res.selected.len().into(), res.residual.len().into(), res.conclusion_holds.into(), audit_ok.into()]);
            if t == 0 {
                let mut ab = Vec::new();
                a.write_bitmap(&mut ab)?;
                let mut bb = Vec::new();
                b.write_bitmap(&mut bb)?;
                files.push(("a.bitmap".to_string(), ab));
                files.push(("b.bitmap".to_string(), bb));
                first = json!({
                    "measure_a": encode::ratio(res.measure_a),
                    "measure_b": encode::ratio(res.measure_b),
                    "a_in_selected": encode::ratio(res.a_in_selected),
                    "a_in_residual": encode::ratio(res.a_in_residual),
                    "bound": encode::ratio(res.bound),
                    "selected": res.selected.iter().map(|s| json!({
                        "level": s.cube.level(),
                        "index": s.cube.index(),
                        "reason": match &s.reason {
                            dpp_core::czdecomp::SelectionReason::FinalGeneration => "final-generation".to_string(),
                            dpp_core::czdecomp::SelectionReason::Predecessor { child } => format!("predecessor of level {} cube {:?}", child.level(), child.index()),
                        },
                    })).collect::<Vec<_>>(),
                    "residual_cubes": res.residual.len(),
                    "conclusion_holds": res.conclusion_holds,
                });
            }
        }
        Ok(())
    })?;
    Ok(Outcome {
        checks: vec![("conclusion".into(), failures == 0), ("audit".into(), audit_failures == 0)],
        results: json!({
            "dim": dim,
            "levels": l,
            "l_max": l_max,
            "delta1": encode::ratio(d1),
            "delta2": encode::ratio(d2),
            "trials": trials,
            "conclusion_failures": failures,
            "audit_failures": audit_failures,
            "first_trial": first,
        }),
        series,
        files,
        timings: timer.0,
    })
}

fn pipeline_options(cfg: &ExperimentConfig) -> PipelineOptions {
    let e = &cfg.experiment;
    let mut o = PipelineOptions::default();
    if let Some(v) = e.mu {
        o.mu = v;
    }
    if let Some(v) = e.rho {
        o.rho_floor = v;
    }
    if let Some(v) = e.ladder_k {
        o.ladder_k = v;
    }
    if let Some(v) = &e.thresholds {
        o.decay_thresholds = v.clone();
        o.spreading_ks = v.clone();
    }
    if let Some(v) = e.theta {
        o.theta = v;
    }
    if let Some(v) = e.radius {
        o.oscillation_radius = v;
    }
    if let Some(v) = e.max_nodes {
        o.holder_nodes = v;
    }
    o
}

fn regularity(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let spec = instance(cfg, regularity_defaults)?;
    let opts = pipeline_options(cfg);
    let mut timer = Timer(Vec::new());
    let inst = timer.time("solve", || solve_instance(&spec))?;
    let rep = timer.time("pipeline", || regularity_pipeline(&inst, &opts))?;
    let mut results = json!({
        "instance": {
            "dim": spec.dim,
            "beta": num(spec.beta),
            "lambda": num(spec.lambda),
            "eps": num(spec.eps),
            "h": num(spec.h),
            "source": num(spec.source),
            "nodes": inst.u.values().len(),
            "direct_seed": inst.direct_seed,
            "solver": encode::solve_report(&inst.report),
        },
        "pipeline": encode::pipeline(&rep),
    });
    let sections = results.as_object_mut().expect("object");
    let named = |c: &str| rep.checks().iter().find(|x| x.0 == c).map(|x| (c.to_string(), x.1)).expect("known check");
    let mut checks = vec![("converged".to_string(), inst.report.converged)];
    let mut series;
    match cfg.kind {
        ExperimentKind::Levelsets => {
            sections.insert("measure_estimate".into(), encode::measure_estimate(&rep.measure));
            sections.insert("spreading".into(), encode::spreading(&rep.spreading));
            sections.insert("superlevel".into(), encode::superlevel(&rep.ladder));
            sections.insert("superlevel_calibrated".into(), rep.ladder_calibrated.as_ref().map_or(Value::Null, encode::superlevel));
            sections.insert("profile".into(), encode::profile(&rep.profile));
            sections.insert("decay".into(), encode::decay(&rep.decay));
            checks.extend(["measure-estimate", "spreading", "superlevel-ladder", "decay"].map(named));
            series = Series::new(["t", "measure", "decay_bound", "slack"]);
            for (&t, &m) in rep.profile.thresholds.iter().zip(&rep.profile.measures) {
                let bound = rep.decay.rows.iter().find(|r| r.t == t).map(|r| r.bound);
                series.push(vec![t.into(), m.into(), bound.into(), rep.profile.slack.into()]);
            }
        }
        ExperimentKind::DeGiorgi => {
            sections.insert("de_giorgi_scale".into(), num(rep.de_giorgi_scale));
            sections.insert("de_giorgi".into(), encode::de_giorgi(&rep.de_giorgi));
            sections.insert("oscillation".into(), encode::oscillation(&rep.oscillation));
            checks.extend(["de-giorgi", "oscillation"].map(named));
            series = Series::new(["quantity", "value"]);
            for (name, v) in [
                ("inf_q3", rep.de_giorgi.inf_q3),
                ("ln_eta", rep.de_giorgi.ln_eta),
                ("margin", rep.de_giorgi.margin),
                ("sup_br", rep.oscillation.sup_br),
                ("oscillation_rhs", rep.oscillation.rhs),
                ("observed_eta", rep.oscillation.observed_eta.unwrap_or(f64::NAN)),
            ] {
                series.push(vec![name.into(), v.into()]);
            }
        }
        ExperimentKind::Holder => {
            sections.insert("holder".into(), encode::holder(&rep.holder));
            checks.push(named("holder-audit"));
            let refine = cfg.experiment.refine.unwrap_or(2);
            if refine > 1 {
                let mut fine = spec.clone();
                fine.h = spec.h / refine as f64;
                let inst2 = timer.time("solve-refined", || solve_instance(&fine))?;
                let rep2 = timer.time("pipeline-refined", || regularity_pipeline(&inst2, &opts))?;
                let tol = cfg.tolerances.holder_stability.unwrap_or(0.1);
                let (g1, g2) = (rep.holder.gamma_est, rep2.holder.gamma_est);
                let stable = matches!((g1, g2), (Some(a), Some(b)) if (a - b).abs() <= tol);
                checks.push(("holder-audit-refined".into(), rep2.holder.audit_pass));
                checks.push(("gamma-stability".into(), stable));
                sections.insert(
                    "refined".into(),
                    json!({ "h": num(fine.h), "holder": encode::holder(&rep2.holder), "gamma_difference": g1.zip(g2).map(|(a, b)| num((a - b).abs())), "tol": num(tol) }),
                );
            }
            series = Series::new(["r", "modulus"]);
            for &(r, w) in &rep.holder.modulus {
                series.push(vec![r.into(), w.into()]);
            }
        }
        _ => {
            sections.insert("harnack".into(), encode::harnack(&rep.harnack));
            sections.insert("trace".into(), rep.trace.as_ref().map_or(Value::Null, encode::trace));
            checks.push(named("harnack"));
            series = Series::new(["k", "radius", "x1", "value", "required", "above"]);
            if let Some(t) = &rep.trace {
                for (s, r) in t.chain.iter().zip(&t.radii) {
                    series.push(vec![s.k.into(), (*r).into(), s.x[0].into(), s.value.into(), s.required.into(), s.above.into()]);
                }
            }
        }
    }
    timer.0.push(("solver_wall_time".into(), inst.report.wall_time_ms));
    Ok(Outcome {
        checks,
        results,
        series,
        files: Vec::new(),
        timings: timer.0,
    })
}

fn counterexample(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let p = &cfg.problem;
    let dim = p.dim.unwrap_or(2);
    if dim < 2 {
        return Err(LabError::field("problem.dim", "the axis construction needs N ≥ 2"));
    }
    let alpha = p.alpha.or(p.beta.map(|b| 1.0 - b)).unwrap_or(0.8);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::field("problem.alpha", format!("{alpha} outside (0, 1)")));
    }
    let eps = p.eps.unwrap_or(0.1);
    let h = p.h.unwrap_or(eps / 2.0);
    let a_values = cfg.experiment.a_values.clone().unwrap_or_else(|| vec![10.0, 100.0, 1000.0]);
    let mut timer = Timer(Vec::new());
    let consts = timer.time("constants", || RegularityConstants::new(&ConstantsInput::new(dim, 1.0, 1.0 - alpha)))?;
    let mut checks = Vec::new();
    let mut runs = Vec::new();
    let mut series = Series::new(["a", "k", "a_k", "closed_form", "recurrence_residual"]);
    for &a in &a_values {
        let ce = timer.time(format!("build-a{a}"), || build_counterexample(dim, alpha, eps, h, a))?;
        let s = &ce.spec;
        let (e1, e2) = s.root_identity_errors();
        let k_top = (2.0 / eps).floor() as usize;
        let rec = (1..=k_top).map(|k| s.recurrence_residual(k)).fold(0.0, f64::max);
        let gap = (0..=k_top).map(|k| (s.sequence[k] - s.closed_form(k)).abs() / s.sequence[k].abs().max(1.0)).fold(0.0, f64::max);
        let inputs = s.harnack_inputs();
        let quotient = inputs.sup_b1 / inputs.inf_b1;
        let h_rep = harnack_from_values(&consts, eps, consts.rho.value, inputs, false)?;
        let tag = format!("a{a}");
        checks.push((format!("dpp-residual-{tag}"), ce.residual_pass));
        checks.push((format!("root-identities-{tag}"), e1 <= 1e-12 && e2 <= 1e-12));
        checks.push((format!("recurrence-{tag}"), rec <= 1e-12));
        checks.push((format!("inf-b1-is-one-{tag}"), inputs.inf_b1 == 1.0));
        checks.push((format!("classical-quotient-at-least-a-{tag}"), quotient >= a));
        checks.push((format!("corrected-harnack-{tag}"), h_rep.pass));
        for k in 0..=k_top {
            let r = if k >= 1 { Some(s.recurrence_residual(k)) } else { None };
            series.push(vec![a.into(), k.into(), s.sequence[k].into(), s.closed_form(k).into(), r.into()]);
        }
        runs.push(json!({
            "a": num(a),
            "phi": num(s.phi),
            "phi_bar": num(s.phi_bar),
            "root_identity_errors": [num(e1), num(e2)],
            "max_recurrence_residual": num(rec),
            "closed_form_gap": num(gap),
            "max_dpp_residual": num(ce.max_residual),
            "max_abs_dpp_residual": num(ce.max_abs_residual),
            "nodes": ce.u.values().len(),
            "classical_quotient": num(quotient),
            "harnack": encode::harnack(&h_rep),
            "sequence_head": nums(&s.sequence[..s.sequence.len().min(k_top + 1)]),
        }));
    }
    Ok(Outcome {
        checks,
        results: json!({
            "dim": dim,
            "alpha": num(alpha),
            "eps": num(eps),
            "h": num(h),
            "constants": encode::constants(&consts),
            "runs": runs,
        }),
        series,
        files: Vec::new(),
        timings: timer.0,
    })
}

fn convergence(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let e = &cfg.experiment;
    let name = e.case.as_deref().unwrap_or("poisson-1d");
    let case = ConvergenceCase::from_name(name, cfg.problem.lambda.unwrap_or(2.0)).map_err(|_| {
        LabError::field("experiment.case", format!("no closed form registered for `{name}`; known: {}", ConvergenceCase::NAMES.join(", ")))
    })?;
    let (ladder, ratio) = match case {
        ConvergenceCase::Poisson1d => (vec![0.2, 0.1, 0.05], 0.1),
        _ => (vec![0.2, 0.1], 0.25),
    };
    let ladder = e.eps_ladder.clone().unwrap_or(ladder);
    let ratio = e.h_ratio.unwrap_or(ratio);
    let tol = cfg.tolerances.solver.unwrap_or(1e-10);
    let mut timer = Timer(Vec::new());
    let study = timer.time("study", || pde_convergence_study(case, &ladder, ratio, tol))?;
    let mut checks = vec![("errors-decrease".to_string(), study.monotone)];
    if let Some(limit) = cfg.tolerances.max_final_error {
        checks.push(("final-error".into(), study.rows.last().is_some_and(|r| r.error <= limit)));
    }
    let mut series = Series::new(["eps", "h", "sup_error", "iterations", "certificate", "harnack_quotient", "limit_quotient"]);
    for r in &study.rows {
        series.push(vec![r.eps.into(), r.h.into(), r.error.into(), r.iterations.into(), r.certificate.into(), r.harnack_quotient.into(), r.limit_quotient.into()]);
    }
    Ok(Outcome {
        checks,
        results: json!({
            "case": case.name(),
            "beta": num(study.beta),
            "limit_matrix": study.limit_matrix.iter().map(|row| nums(row)).collect::<Vec<_>>(),
            "order": study.order.map(num),
            "monotone": study.monotone,
            "rows": study.rows.iter().map(|r| json!({
                "eps": num(r.eps),
                "h": num(r.h),
                "error": num(r.error),
                "iterations": r.iterations,
                "certificate": num(r.certificate),
                "harnack_quotient": r.harnack_quotient.map(num),
                "limit_quotient": r.limit_quotient.map(num),
            })).collect::<Vec<_>>(),
        }),
        series,
        files: Vec::new(),
        timings: timer.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn controlled_solve_keeps_linear_data() {
        for op in ["sup-pair", "tug-of-war"] {
            let c = cfg(&format!(
                "schema = 1\nkind = \"solve\"\n[problem]\ndim = 1\neps = 0.2\nh = 0.04\noperator = \"{op}\"\nboundary = {{ kind = \"linear\", base = 0.0, slope = [1.0] }}\n[tolerances]\nsolver = 1e-13\n"
            ));
            let out = run(&c).unwrap();
            assert!(out.pass(), "{op}: {:?}", out.checks);
            for row in &out.series.rows {
                let (Cell::Float(x), Cell::Float(u)) = (&row[0], &row[1]) else { panic!() };
                assert!((x - u).abs() < 1e-8, "{op}: u({x}) = {u}");
            }
        }
    }

    #[test]
    fn convergence_rejects_unknown_case() {
        let c = cfg("schema = 1\nkind = \"convergence\"\n[experiment]\ncase = \"heat\"\n");
        let err = run(&c).err().unwrap().to_string();
        assert!(err.contains("experiment.case") && err.contains("poisson-1d"), "{err}");
    }

    #[test]
    fn counterexample_needs_two_dimensions() {
        let c = cfg("schema = 1\nkind = \"counterexample\"\n[problem]\ndim = 1\n");
        assert!(matches!(run(&c), Err(LabError::Field { .. })));
    }
}
