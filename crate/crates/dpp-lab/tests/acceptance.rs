//! Acceptance suite: one line per criterion, tolerances pinned below.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dpp_core::barriers::abc_inequality;
use dpp_core::czdecomp::{cz_decompose, random_hypothesis_instance, IndicatorGrid, SelectionReason};
use dpp_core::envelope::{concave_envelope, EnvelopeMethod};
use dpp_core::lattice::{GridFunction, Lattice, Point};
use dpp_core::measures::{uniform_ball_quadrature, DirectionNet, MeasureFamily};
use dpp_core::operators::{apply_l, apply_l_minus, apply_l_plus, apply_pucci_plus, MatrixNet, OperatorContext, OperatorParams};
use dpp_core::regularity::*;
use dpp_lab::{experiments, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AFFINE_TOL: f64 = 1e-10;
const DELTA_FORM_REL_TOL: f64 = 1e-12;
const MOMENT_REL_TOL: f64 = 0.01;
const POISSON_FINAL_ERROR: f64 = 0.05;
const ABC_SAMPLES: usize = 1_000_000;
const CZ_INSTANCES: u64 = 1000;
const CZ_ORACLE_INSTANCES: u64 = 100;
const ENVELOPE_AGREEMENT: f64 = 1e-8;
const TENT_TOL: f64 = 1e-8;
const COUNTEREXAMPLE_TOL: f64 = 1e-12;
const GAMMA_STABILITY: f64 = 0.1;

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn ctx(dim: usize, beta: f64, eps: f64, lambda: f64, h: f64) -> OperatorContext {
    OperatorContext::new(OperatorParams::new(beta, eps, lambda).unwrap(), dim, h).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).unwrap()
}

fn failed_checks(o: &experiments::Outcome) -> Vec<String> {
    o.checks.iter().filter(|c| !c.1).map(|c| c.0.clone()).collect()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lambda = 1.5;
    let mut worst_affine = 0.0f64;
    for dim in [1usize, 2] {
        let (eps, h) = (0.2, 0.04);
        let fam = MeasureFamily::random_ellipsoid_field(dim, 3, 0.3, 5, lambda, eps, h).unwrap();
        let net = DirectionNet::new(dim, lambda, 0.3).unwrap();
        let mnet = MatrixNet::diagonal_ladder(dim, lambda, 3).unwrap();
        for _ in 0..100 {
            let c = ctx(dim, rng.gen_range(0.05..1.0), eps, lambda, h);
            let coef: Vec<f64> = (0..=dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let u = (dim, move |p: &[f64]| coef[0] + p.iter().zip(&coef[1..]).map(|(x, a)| x * a).sum::<f64>());
            let x: Point = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let l = apply_l(&c, &fam, &u, &x).unwrap();
            for v in [
                l.direct,
                l.delta_form,
                apply_l_plus(&c, &net, &u, &x).unwrap().value,
                apply_l_minus(&c, &net, &u, &x).unwrap().value,
                apply_pucci_plus(&c, &mnet, &u, &x).unwrap().value,
            ] {
                worst_affine = worst_affine.max(v.abs());
            }
        }
    }

    let (eps, h) = (0.2, 0.02);
    let c = ctx(2, 0.3, eps, lambda, h);
    let fam = MeasureFamily::random_ellipsoid_field(2, 4, 0.25, 9, lambda, eps, h).unwrap();
    let atoms: Vec<Point> = fam.catalog().iter().flat_map(|q| q.pairs().iter().map(|p| p.offset.clone())).collect();
    let net = DirectionNet::new(2, lambda, 0.5).unwrap().with_points(atoms);
    let lat = Lattice::covering(&[-1.0, -1.0], &[1.0, 1.0], h).unwrap();
    let mut worst_rel = 0.0f64;
    let mut sandwich_failures = 0;
    for _ in 0..50 {
        let u = GridFunction::new(lat.clone(), (0..lat.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)];
        let l = apply_l(&c, &fam, &u, &x).unwrap();
        worst_rel = worst_rel.max((l.direct - l.delta_form).abs() / l.scale.max(f64::MIN_POSITIVE));
        let lo = apply_l_minus(&c, &net, &u, &x).unwrap().value;
        let hi = apply_l_plus(&c, &net, &u, &x).unwrap().value;
        let slack = 1e-12 * l.scale;
        if lo > l.delta_form + slack || hi < l.delta_form - slack {
            sandwich_failures += 1;
        }
    }
    verdict(
        worst_affine <= AFFINE_TOL && worst_rel <= DELTA_FORM_REL_TOL && sandwich_failures == 0,
        format!("max affine |L| = {worst_affine:.2e}, δ-form vs direct rel = {worst_rel:.2e}, sandwich failures = {sandwich_failures}/50"),
    )
}

fn criterion_2() -> Verdict {
    let mut worst = 0.0f64;
    for dim in 1..=3usize {
        let n = dim as f64;
        let q = uniform_ball_quadrature(dim, 1.0, 1.0 / 20.0).unwrap();
        let axis = q.integrate_pairs(|z| z[0] * z[0]);
        let radial = q.integrate_pairs(|z| z.iter().map(|c| c * c).sum());
        worst = worst.max((axis * (n + 2.0) - 1.0).abs()).max((radial * (n + 2.0) / n - 1.0).abs());
    }
    verdict(worst <= MOMENT_REL_TOL, format!("max relative moment error over N = 1..3 at h/ε = 1/20: {worst:.4}"))
}

/// Dense solve of the 1-D mean-value DPP with trapezoid weights, f = 1, g = 0.
fn poisson_oracle(eps: f64, m: usize) -> f64 {
    let h = eps / m as f64;
    let n = ((1.0 + eps) / h).round() as i64;
    let xs: Vec<f64> = (-n..=n).map(|k| k as f64 * h).collect();
    let size = xs.len();
    let mut w = vec![1.0; 2 * m + 1];
    w[0] = 0.5;
    w[2 * m] = 0.5;
    let total: f64 = w.iter().sum();
    let mut a = DMatrix::<f64>::identity(size, size);
    let mut b = DVector::<f64>::zeros(size);
    for i in 0..size {
        if xs[i].abs() < 1.0 - 1e-12 {
            for (k, wk) in w.iter().enumerate() {
                a[(i, i + k - m)] -= wk / total;
            }
            b[i] = eps * eps;
        }
    }
    let u = a.lu().solve(&b).expect("nonsingular");
    xs.iter().zip(u.iter()).filter(|(x, _)| x.abs() <= 0.5).map(|(x, v)| (v - 3.0 * (1.0 - x * x)).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mp_failures = 0;
    for k in 0..20u64 {
        let dim = 1 + (k % 2) as usize;
        let lambda = 1.5;
        let family = match k % 3 {
            0 => FamilySpec::Uniform { radius: 1.0 },
            1 => FamilySpec::AtomPair { offset: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() },
            _ => FamilySpec::RandomEllipsoids { count: 3, cell: 0.5 },
        };
        let boundary = if k % 2 == 0 {
            BoundarySpec::Linear { base: rng.gen_range(-1.0..1.0), slope: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect() }
        } else {
            BoundarySpec::Spike { center: (0..dim).map(|_| rng.gen_range(-1.2..1.2)).collect(), height: rng.gen_range(0.5..3.0), width: 0.5, base: rng.gen_range(-1.0..1.0) }
        };
        let eps = if dim == 1 { 0.2 } else { 0.25 };
        let tol = 1e-10;
        let spec = InstanceSpec {
            dim,
            beta: rng.gen_range(0.2..1.0),
            lambda,
            eps,
            h: eps / if dim == 1 { 10.0 } else { 4.0 },
            family,
            domain: DomainSpec::Ball(1.0),
            source: 0.0,
            boundary,
            seed: k,
            tol,
        };
        let inst = solve_instance(&spec).unwrap();
        let lat = inst.problem.lattice();
        let g: Vec<f64> = inst.problem.domain().boundary().map(|i| spec.boundary.eval(&lat.coords(i))).collect();
        let (gmin, gmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let ok = inst.report.converged && inst.problem.domain().interior().iter().all(|&i| (gmin - tol..=gmax + tol).contains(&inst.u.value(i)));
        mp_failures += usize::from(!ok);
    }
    let study = pde_convergence_study(ConvergenceCase::Poisson1d, &[0.2, 0.1, 0.05], 0.1, 1e-12).unwrap();
    let errors: Vec<f64> = study.rows.iter().map(|r| r.error).collect();
    let last = *errors.last().unwrap();
    let oracle = poisson_oracle(0.05, 10);
    let oracle_agrees = (oracle - last).abs() <= 1e-3;
    verdict(
        mp_failures == 0 && study.monotone && oracle_agrees && last <= POISSON_FINAL_ERROR,
        format!(
            "maximum-principle failures {mp_failures}/20; Poisson errors {errors:.4?} (monotone = {}), final ≤ {POISSON_FINAL_ERROR} required; \
             independent dense solve at ε = 0.05 gives {oracle:.4}",
            study.monotone
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0usize;
    for _ in 0..ABC_SAMPLES {
        let a = 10f64.powf(rng.gen_range(-3.0..3.0));
        let b = 10f64.powf(rng.gen_range(-3.0..3.0));
        let c = rng.gen_range(-0.999..0.999) * (a + b);
        let sigma = 10f64.powf(rng.gen_range(-2.0..1.5));
        failures += usize::from(!abc_inequality(a, b, c, sigma).unwrap().holds);
    }
    verdict(failures == 0, format!("{failures} failures on {ABC_SAMPLES} admissible tuples"))
}

fn criterion_5() -> Verdict {
    let out = experiments::run(&config("barrier-check.toml")).unwrap();
    let failed = failed_checks(&out);
    verdict(failed.is_empty() && out.checks.len() == 16, format!("{} barrier checks over N ∈ {{1, 2}} and ε ∈ {{ε₀, ε₀/2}}, failed: {failed:?}", out.checks.len()))
}

type Cube = (u32, Vec<u64>);

/// Recursive selection from direct cell counts.
fn cz_oracle(a: &IndicatorGrid, d1: Ratio<u64>, d2: Ratio<u64>, l: u32) -> (Vec<(Cube, bool)>, Vec<Cube>) {
    let n = a.dim();
    let l_max = a.l_max();
    let count = |(level, idx): &Cube| -> u64 {
        let shift = l_max - level;
        let side = 1u64 << shift;
        let mut total = 0;
        let mut cell = vec![0u64; n];
        for local in 0..side.pow(n as u32) {
            let mut rest = local;
            for k in 0..n {
                cell[k] = idx[k] * side + rest % side;
                rest /= side;
            }
            total += u64::from(a.get(&cell).unwrap());
        }
        total
    };
    let dense = |q: &Cube, d: Ratio<u64>| -> bool {
        let cells = 1u64 << ((l_max - q.0) as usize * n);
        Ratio::new(count(q), cells) > d
    };
    let children = |(level, idx): &Cube| -> Vec<Cube> {
        (0..1u64 << n).map(|bits| (level + 1, (0..n).map(|k| 2 * idx[k] + ((bits >> k) & 1)).collect())).collect()
    };
    let mut selected = Vec::new();
    let mut residual = Vec::new();
    let mut stack = vec![(0u32, vec![0u64; n])];
    while let Some(q) = stack.pop() {
        let kids = children(&q);
        if kids.iter().any(|c| dense(c, d1)) {
            selected.push((q, false));
            continue;
        }
        for c in kids {
            if c.0 < l {
                stack.push(c);
            } else if dense(&c, d2) {
                selected.push((c, true));
            } else {
                residual.push(c);
            }
        }
    }
    selected.sort();
    residual.sort();
    (selected, residual)
}

fn criterion_6() -> Verdict {
    let mut conclusion_failures = 0;
    for seed in 0..CZ_INSTANCES {
        let dim = 1 + (seed % 2) as usize;
        let l = 1 + (seed % 6) as u32;
        let l_max = l + (seed / 6 % 3) as u32;
        let d1 = Ratio::new(1 + seed % 3, 4);
        let d2 = Ratio::new(1, 2 + seed % 13);
        let (a, b) = random_hypothesis_instance(dim, l, l_max, d1, seed).unwrap();
        let res = cz_decompose(&a, &b, d1, d2, l).unwrap();
        let exact = a.measure() <= d1 * b.measure() + d2;
        if !(exact && res.conclusion_holds && res.measure_a == a.measure()) {
            conclusion_failures += 1;
        }
    }
    let mut mismatches = 0;
    for seed in 0..CZ_ORACLE_INSTANCES {
        let dim = 1 + (seed % 2) as usize;
        let l = 1 + (seed % 3) as u32;
        let l_max = l + 1;
        let d1 = Ratio::new(1 + seed % 3, 4);
        let d2 = Ratio::new(1, 2 + seed % 7);
        let (a, b) = random_hypothesis_instance(dim, l, l_max, d1, 5000 + seed).unwrap();
        let res = cz_decompose(&a, &b, d1, d2, l).unwrap();
        let mut got: Vec<(Cube, bool)> = res
            .selected
            .iter()
            .map(|s| ((s.cube.level(), s.cube.index().to_vec()), s.reason == SelectionReason::FinalGeneration))
            .collect();
        got.sort();
        let mut got_res: Vec<Cube> = res.residual.iter().map(|c| (c.level(), c.index().to_vec())).collect();
        got_res.sort();
        if (got, got_res) != cz_oracle(&a, d1, d2, l) {
            mismatches += 1;
        }
    }
    verdict(
        conclusion_failures == 0 && mismatches == 0,
        format!("conclusion failures {conclusion_failures}/{CZ_INSTANCES}; oracle mismatches {mismatches}/{CZ_ORACLE_INSTANCES}"),
    )
}

fn random_grid(lat: &Lattice, rng: &mut ChaCha8Rng) -> GridFunction {
    GridFunction::new(lat.clone(), (0..lat.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agreement = 0.0f64;
    for k in 0..20 {
        let dim = 1 + k % 2;
        let h = if dim == 1 { 0.05 } else { 0.2 };
        let lat = Lattice::covering(&vec![-1.2; dim], &vec![1.2; dim], h).unwrap();
        let u = random_grid(&lat, &mut rng);
        let a = concave_envelope(&u, 1.1, EnvelopeMethod::Hull).unwrap();
        let b = concave_envelope(&u, 1.1, EnvelopeMethod::Lp).unwrap();
        agreement = agreement.max(max_gap(a.values(), b.values()));
    }

    let lat = Lattice::covering(&[-2.5], &[2.5], 0.05).unwrap();
    let spike = GridFunction::from_fn(lat.clone(), |p| if p[0].abs() < 1e-9 { 1.0 } else { 0.0 }).unwrap();
    let mut tent = 0.0f64;
    for method in [EnvelopeMethod::Hull, EnvelopeMethod::Lp] {
        let env = concave_envelope(&spike, 2.22, method).unwrap();
        for (i, p) in lat.nodes() {
            let expect = if p[0].abs() < 2.22 { 1.0 - p[0].abs() / 2.2 } else { 0.0 };
            tent = tent.max((env.values()[i] - expect).abs());
        }
    }

    let mut idempotence = 0.0f64;
    let mut monotonicity_violations = 0;
    let mut worst_violation = 0.0f64;
    for k in 0..20 {
        let dim = 1 + k % 2;
        let h = if dim == 1 { 0.05 } else { 0.2 };
        let lat = Lattice::covering(&vec![-1.2; dim], &vec![1.2; dim], h).unwrap();
        let u = random_grid(&lat, &mut rng);
        let bumped: Vec<f64> = u.values().iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
        let v = GridFunction::new(lat.clone(), bumped).unwrap();
        let gu = concave_envelope(&u, 1.1, EnvelopeMethod::Hull).unwrap();
        let gv = concave_envelope(&v, 1.1, EnvelopeMethod::Hull).unwrap();
        let again = concave_envelope(&gu.to_grid(), 1.1, EnvelopeMethod::Hull).unwrap();
        idempotence = idempotence.max(max_gap(again.values(), gu.values()));
        for (a, b) in gu.values().iter().zip(gv.values()) {
            worst_violation = worst_violation.max(a - b);
            monotonicity_violations += usize::from(a - b > ENVELOPE_AGREEMENT);
        }
    }
    verdict(
        agreement <= ENVELOPE_AGREEMENT && tent <= TENT_TOL && idempotence <= ENVELOPE_AGREEMENT && monotonicity_violations == 0,
        format!("hull vs LP {agreement:.2e} on 20 instances; tent error {tent:.2e}; idempotence {idempotence:.2e}; monotonicity violations {monotonicity_violations} (largest Γu − Γv {worst_violation:.1e})"),
    )
}

fn criterion_8() -> Verdict {
    let out = experiments::run(&config("counterexample.toml")).unwrap();
    let failed = failed_checks(&out);
    let alpha: f64 = 0.8;
    let disc = (1.0 - alpha * alpha).sqrt();
    let (phi, phi_bar) = ((1.0 + disc) / alpha, (1.0 - disc) / alpha);
    let spec = CounterexampleSpec::new(alpha, 0.1, 10.0, 40).unwrap();
    let roots_ok = (spec.phi - phi).abs() <= COUNTEREXAMPLE_TOL && (spec.phi_bar - phi_bar).abs() <= COUNTEREXAMPLE_TOL && (phi - 2.0).abs() <= COUNTEREXAMPLE_TOL;
    let runs = out.results["runs"].as_array().unwrap();
    let sci = |key: &str| runs.iter().map(|r| format!("{:.3e}", r[key].as_f64().unwrap())).collect::<Vec<_>>().join(", ");
    let (quotients, residuals) = (sci("classical_quotient"), sci("max_dpp_residual"));
    // C̃ = (2^{1+2λ}C)^{2λ/γ}·max(C·2^{2+2λ}, (2κ)^{2λ}) from the reported inputs.
    let k = &out.results["constants"];
    let lam = k["lambda_exp"]["value"].as_f64().unwrap();
    let gamma = k["gamma"]["value"].as_f64().unwrap();
    let ln_c = k["harnack_c"]["ln"].as_f64().unwrap();
    let kappa = k["kappa"]["value"].as_f64().unwrap();
    let ln2 = std::f64::consts::LN_2;
    let ln_formula = 2.0 * lam / gamma * ((1.0 + 2.0 * lam) * ln2 + ln_c) + (ln_c + (2.0 + 2.0 * lam) * ln2).max(2.0 * lam * (2.0 * kappa).ln());
    let paper_c = runs.iter().all(|r| {
        let ln = r["harnack"]["c_tilde"]["ln"].as_f64().unwrap();
        (ln - ln_formula).abs() <= 1e-12 * ln_formula.abs()
    });
    verdict(
        failed.is_empty() && out.checks.len() == 18 && roots_ok && paper_c,
        format!("a ∈ {{10, 100, 1000}}: quotients [{quotients}], max relative residuals [{residuals}], roots (φ, φ̄) = ({phi}, {phi_bar}), ln C̃ = {ln_formula:.6e} matches formula = {paper_c}, failed: {failed:?}"),
    )
}

fn regularity_instances() -> Vec<(FamilySpec, f64, f64, BoundarySpec)> {
    vec![
        (FamilySpec::Uniform { radius: 1.0 }, 1.0, 0.5, BoundarySpec::Constant(1.0)),
        (FamilySpec::Uniform { radius: 1.0 }, 1.0, 1.0, BoundarySpec::Spike { center: vec![7.0], height: 4.0, width: 1.5, base: 1.0 }),
        (FamilySpec::RandomEllipsoids { count: 8, cell: 1.0 }, 1.0, 0.5, BoundarySpec::Linear { base: 1.0, slope: vec![0.05] }),
        (FamilySpec::AtomPair { offset: vec![1.0] }, 1.0, 0.5, BoundarySpec::Quadratic { base: 1.0, coef: 0.02 }),
        (FamilySpec::Uniform { radius: 2.0 }, 2.0, 0.5, BoundarySpec::Constant(1.0)),
        (FamilySpec::AtomPair { offset: vec![1.5] }, 1.5, 0.6, BoundarySpec::Spike { center: vec![7.0], height: 3.0, width: 1.0, base: 1.0 }),
        (FamilySpec::Uniform { radius: 1.0 }, 1.0, 0.8, BoundarySpec::Quadratic { base: 0.5, coef: 0.05 }),
        (FamilySpec::AtomPair { offset: vec![0.5] }, 1.0, 0.3, BoundarySpec::Constant(2.0)),
        (FamilySpec::RandomEllipsoids { count: 4, cell: 0.5 }, 1.0, 0.7, BoundarySpec::Spike { center: vec![-7.0], height: 2.0, width: 1.0, base: 1.0 }),
        (FamilySpec::Uniform { radius: 1.5 }, 1.5, 0.4, BoundarySpec::Linear { base: 2.0, slope: vec![-0.1] }),
    ]
}

fn criterion_9() -> Verdict {
    const REQUIRED: [&str; 6] = ["measure-estimate", "superlevel-ladder", "decay", "de-giorgi", "holder-audit", "harnack"];
    let opts = PipelineOptions::default();
    let mut failures = Vec::new();
    let mut gammas = Vec::new();
    for (k, (family, lambda, beta, boundary)) in regularity_instances().into_iter().enumerate() {
        let mut reports = Vec::new();
        for refine in [1, 2] {
            let spec = standard_instance(family.clone(), lambda, beta, 0.005, boundary.clone(), 100 + k as u64, refine);
            let inst = solve_instance(&spec).unwrap();
            let rep = regularity_pipeline(&inst, &opts).unwrap();
            for (name, pass) in rep.checks() {
                if REQUIRED.contains(&name) && !pass {
                    failures.push(format!("#{k} refine {refine}: {name}"));
                }
            }
            if opts.ladder_k > 5 {
                failures.push("ladder k > 5".into());
            }
            reports.push(rep);
        }
        match (reports[0].holder.gamma_est, reports[1].holder.gamma_est) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 && (a - b).abs() <= GAMMA_STABILITY => gammas.push((a, b)),
            other => failures.push(format!("#{k}: γ estimates {other:?}")),
        }
    }
    let shift = gammas.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict(failures.is_empty(), format!("10 instances × 2 resolutions, max γ shift {shift:.3}, failures: {failures:?}"))
}

fn criterion_10() -> Verdict {
    let mut names: Vec<PathBuf> = std::fs::read_dir(configs_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for path in &names {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let cfg = ExperimentConfig::load(path).unwrap();
        let (a, b) = (dir.path().join(format!("{stem}-1")), dir.path().join(format!("{stem}-2")));
        dpp_lab::run_config(&cfg, &a).unwrap();
        dpp_lab::run_config(&cfg, &b).unwrap();
        for file in ["report.json", "series.csv", "a.bitmap", "b.bitmap"] {
            let (x, y) = (std::fs::read(a.join(file)).ok(), std::fs::read(b.join(file)).ok());
            if x != y {
                differing.push(format!("{stem}/{file}"));
            }
        }
    }
    verdict(differing.is_empty() && names.len() == 10, format!("{} configs run twice, differing artifacts: {differing:?}", names.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        (1, "operator identities", Duration::from_secs(10), criterion_1),
        (2, "quadrature moments", Duration::from_secs(10), criterion_2),
        (3, "solver", Duration::from_secs(120), criterion_3),
        (4, "barrier inequality", Duration::from_secs(30), criterion_4),
        (5, "barriers", Duration::from_secs(120), criterion_5),
        (6, "Calderón–Zygmund", Duration::from_secs(60), criterion_6),
        (7, "envelope", Duration::from_secs(120), criterion_7),
        (8, "counterexample", Duration::from_secs(60), criterion_8),
        (9, "regularity pipeline", Duration::from_secs(900), criterion_9),
        (10, "reproducibility", Duration::from_secs(900), criterion_10),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed < limit;
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
