//! Level-set estimates, oscillation, Hölder and Harnack checks on solved DPP
//! instances, together with the axis counterexample and the ε → 0 study.
//!
//! Formula constants are astronomically large, so most of them are carried
//! as natural logarithms next to their (possibly overflowing) values.

use std::f64::consts::{LN_10, LN_2};

use num_rational::Ratio;
use rayon::prelude::*;
use thiserror::Error;

use crate::barriers::{annular_constants, build_global_barrier, BarrierError};
use crate::czdecomp::{cz_decompose, CzError, IndicatorGrid};
use crate::envelope::unit_ball_volume;
use crate::lattice::{dist, norm, ExtendedDomain, Field, GridFunction, LatticeError, Point, Region};
use crate::measures::{axis_atom_index, DirectionNet, MeasureError, MeasureFamily};
use crate::operators::{apply_l_minus, apply_l_plus, limit_matrix, OperatorContext, OperatorError, OperatorParams};
use crate::solver::{solve_dpp, DppProblem, Initial, OperatorKind, SolveOptions, SolveReport, SolverError};

#[derive(Debug, Error)]
pub enum RegularityError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("empty level-set profile")]
    EmptyProfile,
    #[error("no closed-form solution registered for `{0}`")]
    NoClosedForm(String),
    #[error("a_{k} = {value} is not representable before the sequence leaves the domain")]
    Overflow { k: usize, value: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Cz(#[from] CzError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

fn precondition<T>(msg: impl Into<String>) -> Result<T, RegularityError> {
    Err(RegularityError::Precondition(msg.into()))
}

/// Where a constant comes from. Ordered from strongest to weakest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    PaperFormula,
    Calibrated,
    Estimated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::PaperFormula => "paper-formula",
            Provenance::Calibrated => "calibrated",
            Provenance::Estimated => "estimated",
        }
    }
}

/// A constant with its provenance and natural logarithm. `ln` stays finite
/// when `value` over- or underflows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tagged {
    pub value: f64,
    pub ln: f64,
    pub provenance: Provenance,
}

impl Tagged {
    pub fn new(value: f64, provenance: Provenance) -> Self {
        Self {
            value,
            ln: value.ln(),
            provenance,
        }
    }

    pub fn from_ln(ln: f64, provenance: Provenance) -> Self {
        Self {
            value: ln.exp(),
            ln,
            provenance,
        }
    }

    pub fn paper(value: f64) -> Self {
        Self::new(value, Provenance::PaperFormula)
    }

    pub fn calibrated(value: f64) -> Self {
        Self::new(value, Provenance::Calibrated)
    }

    pub fn estimated(value: f64) -> Self {
        Self::new(value, Provenance::Estimated)
    }

    pub fn log10(&self) -> f64 {
        self.ln / LN_10
    }
}

fn weakest(tags: &[Provenance]) -> Provenance {
    tags.iter().copied().max().unwrap_or(Provenance::PaperFormula)
}

/// `ln(eˣ + eʸ)`.
fn ln_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Log-density of the sum of `n` independent U(0,1) variables at x.
pub fn irwin_hall_ln_pdf(n: u32, x: f64) -> f64 {
    let x = x.min(n as f64 - x);
    if n == 0 || x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if n == 1 {
        return 0.0;
    }
    let p = (n - 1) as f64;
    let lead = p * x.ln();
    let s: f64 = (0..=x.floor() as u32)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (ln_binomial(n, k) + p * (x - k as f64).ln() - lead).exp()
        })
        .sum();
    lead + s.ln() - ln_factorial(n - 1)
}

/// `ln f^{*n}(r)` for `f = χ_{B₁}/|B₁|` at radius r. Exact in one dimension;
/// a radial midpoint recursion otherwise.
pub fn ball_convolution_ln(dim: usize, n: u32, r: f64) -> (f64, Provenance) {
    if dim == 1 {
        // S = 2·IH_n − n, so f_S(s) = ½·p_IH((s + n)/2).
        return (-LN_2 + irwin_hall_ln_pdf(n, (r + n as f64) / 2.0), Provenance::PaperFormula);
    }
    const PER_UNIT: usize = 32;
    const NS: usize = 32;
    const NT: usize = 32;
    let dr = 1.0 / PER_UNIT as f64;
    let m = n as usize * PER_UNIT + 2;
    let vol = unit_ball_volume(dim);
    let nd = dim as f64;
    let s_nodes: Vec<(f64, f64)> = (0..NS)
        .map(|i| {
            let (lo, hi) = (i as f64 / NS as f64, (i + 1) as f64 / NS as f64);
            ((lo + hi) / 2.0, hi.powf(nd) - lo.powf(nd))
        })
        .collect();
    let mut t_nodes: Vec<(f64, f64)> = (0..NT)
        .map(|j| {
            let t = std::f64::consts::PI * (j as f64 + 0.5) / NT as f64;
            (t.cos(), t.sin().powi(dim as i32 - 2))
        })
        .collect();
    let tw: f64 = t_nodes.iter().map(|t| t.1).sum();
    t_nodes.iter_mut().for_each(|t| t.1 /= tw);
    let interp = |g: &[f64], x: f64| {
        let t = x / dr;
        let j = t.floor() as usize;
        if j + 1 >= g.len() {
            return 0.0;
        }
        let w = t - j as f64;
        g[j] * (1.0 - w) + g[j + 1] * w
    };
    let mut g: Vec<f64> = (0..m)
        .map(|j| match j.cmp(&PER_UNIT) {
            std::cmp::Ordering::Less => 1.0 / vol,
            std::cmp::Ordering::Equal => 0.5 / vol,
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect();
    for k in 1..n as usize {
        let support = (k + 1) * PER_UNIT + 1;
        g = (0..m)
            .into_par_iter()
            .map(|j| {
                if j > support {
                    return 0.0;
                }
                let rj = j as f64 * dr;
                s_nodes
                    .iter()
                    .map(|&(s, ws)| ws * t_nodes.iter().map(|&(c, wt)| wt * interp(&g, (rj * rj + s * s - 2.0 * rj * s * c).max(0.0).sqrt())).sum::<f64>())
                    .sum()
            })
            .collect();
    }
    (interp(&g, r).ln(), Provenance::Estimated)
}

/// Smallest integer n with `2√N < nε₀`; errors unless also `nε₀ < (9/2)√N + ε₀`.
pub fn spreading_n(dim: usize, eps0: f64) -> Result<u32, RegularityError> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(RegularityError::Parameter(format!("ε₀ = {eps0} must lie in (0, 1)")));
    }
    let root = (dim as f64).sqrt();
    let n = (2.0 * root / eps0).floor() + 1.0;
    if !(n * eps0 > 2.0 * root && n * eps0 < 4.5 * root + eps0) {
        return Err(RegularityError::Parameter(format!("no admissible n for ε₀ = {eps0}")));
    }
    Ok(n as u32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpreadingConstant {
    pub eps0: f64,
    pub n: u32,
    /// `f^{*n}(2√N e₁/ε₀)`.
    pub conv: Tagged,
    pub c: Tagged,
}

/// `c = ε₀ᴺ/(Cβⁿ)·(1 + ε₀²ρ·S)` with `S = 1/(1−β)`, or the partial sum `n`
/// when β = 1.
pub fn spreading_constant(dim: usize, eps0: f64, beta: f64, rho: f64) -> Result<SpreadingConstant, RegularityError> {
    let n = spreading_n(dim, eps0)?;
    let (ln_conv, prov) = ball_convolution_ln(dim, n, 2.0 * (dim as f64).sqrt() / eps0);
    let geometric = if beta < 1.0 { 1.0 / (1.0 - beta) } else { n as f64 };
    let ln_c = dim as f64 * eps0.ln() - ln_conv - n as f64 * beta.ln() + (eps0 * eps0 * rho * geometric).ln_1p();
    Ok(SpreadingConstant {
        eps0,
        n,
        conv: Tagged::from_ln(ln_conv, prov),
        c: Tagged::from_ln(ln_c, prov),
    })
}

/// Free inputs of the constant chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantsInput {
    pub dim: usize,
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub mu: f64,
    /// Hölder exponent and constant feeding the Harnack chain.
    pub gamma: Tagged,
    pub holder_c: Tagged,
}

impl ConstantsInput {
    pub fn new(dim: usize, lambda: f64, beta: f64) -> Self {
        Self {
            dim,
            lambda,
            beta,
            rho: 0.01,
            mu: 0.5,
            gamma: Tagged::calibrated(0.5),
            holder_c: Tagged::calibrated(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityConstants {
    pub dim: usize,
    pub lambda: f64,
    pub beta: f64,
    pub eps0: Tagged,
    pub rho: Tagged,
    /// Neighbourhood constant C with `|B_{ε/4}|(1 − 4ᴺ/(Cβ)) = |B_{ε/4}|/2`.
    pub nbhd_c: Tagged,
    pub psi_big0: Tagged,
    pub psi_small0: Tagged,
    pub big_m: Tagged,
    pub mu: Tagged,
    pub spreading_n: u32,
    pub c: Tagged,
    pub a: Tagged,
    pub d: Tagged,
    /// Annular σ, κ and λ = 2σ.
    pub sigma: Tagged,
    pub kappa: Tagged,
    pub lambda_exp: Tagged,
    pub gamma: Tagged,
    pub holder_c: Tagged,
    /// `max(1, C_decay, 9A, C_Hölder)`.
    pub harnack_c: Tagged,
    pub delta: Tagged,
    pub c_tilde: Tagged,
}

fn validate_input(i: &ConstantsInput) -> Result<(), RegularityError> {
    let bad = |m: String| Err(RegularityError::Parameter(m));
    if !(1..=3).contains(&i.dim) {
        return bad(format!("dimension {} outside 1..=3", i.dim));
    }
    if !(i.beta > 0.0 && i.beta <= 1.0) {
        return bad(format!("β = {} outside (0, 1]", i.beta));
    }
    if !(i.lambda >= 1.0) {
        return bad(format!("Λ = {} below 1", i.lambda));
    }
    if !(i.rho > 0.0) || !(i.mu > 0.0 && i.mu < 1.0) {
        return bad(format!("ρ = {}, μ = {} out of range", i.rho, i.mu));
    }
    if !(i.gamma.value > 0.0 && i.gamma.value <= 1.0) || !(i.holder_c.value > 0.0) {
        return bad(format!("γ = {}, C = {} out of range", i.gamma.value, i.holder_c.value));
    }
    Ok(())
}

impl RegularityConstants {
    pub fn new(input: &ConstantsInput) -> Result<Self, RegularityError> {
        validate_input(input)?;
        let ConstantsInput {
            dim, lambda, beta, rho, mu, ..
        } = *input;
        let nd = dim as f64;
        let paper = Provenance::PaperFormula;
        let barrier = build_global_barrier(dim, lambda, beta);
        let eps0 = barrier.eps0;
        let nbhd = 2.0 * 4f64.powi(dim as i32) / beta;
        // Ψ(0) = A − B with B/A = (1+4N)^{−σ}; ψ(0) = σAΛ².
        let ln_psi_big0 = barrier.log_a + (-(1.0 + 4.0 * nd).powf(-barrier.sigma)).ln_1p();
        let ln_psi_small0 = barrier.sigma.ln() + barrier.log_a + 2.0 * lambda.ln();
        let ln_m = ln_add(ln_psi_big0, nbhd.ln() + ln_add(ln_psi_small0, rho.ln()) + 2.0 * eps0.ln());
        let spread = spreading_constant(dim, eps0, beta, rho)?;
        let (sigma, kappa, _) = annular_constants(dim, lambda, beta);
        let mut out = Self {
            dim,
            lambda,
            beta,
            eps0: Tagged::paper(eps0),
            rho: Tagged::calibrated(rho),
            nbhd_c: Tagged::calibrated(nbhd),
            psi_big0: Tagged::from_ln(ln_psi_big0, paper),
            psi_small0: Tagged::from_ln(ln_psi_small0, paper),
            big_m: Tagged::from_ln(ln_m, Provenance::Calibrated),
            mu: Tagged::calibrated(mu),
            spreading_n: spread.n,
            c: Tagged {
                provenance: weakest(&[spread.c.provenance, Provenance::Calibrated]),
                ..spread.c
            },
            a: Tagged::paper(1.0),
            d: Tagged::paper(1.0),
            sigma: Tagged::paper(sigma),
            kappa: Tagged::paper(kappa),
            lambda_exp: Tagged::paper(2.0 * sigma),
            gamma: input.gamma,
            holder_c: input.holder_c,
            harnack_c: Tagged::paper(1.0),
            delta: Tagged::paper(1.0),
            c_tilde: Tagged::paper(1.0),
        };
        out.derive();
        Ok(out)
    }

    /// Recomputes a, d, C, δ and C̃ from the stored inputs.
    fn derive(&mut self) {
        let mu = self.mu.value;
        self.a = Tagged::new(1.0 / (1.0 / mu).ln(), self.mu.provenance);
        let ln_d = self.big_m.ln.max(ln_add(self.c.ln - (1.0 - mu).ln(), -mu.ln()));
        self.d = Tagged::from_ln(ln_d, weakest(&[self.big_m.provenance, self.c.provenance, self.mu.provenance]));

        let sigma = self.sigma.value;
        let nd = self.dim as f64;
        // C_decay = 2^{2σ}/(3^{−2σ} − 4^{−2σ}) in log form.
        let ln_decay = 2.0 * sigma * (2f64.ln() + 3f64.ln()) - (-(0.75f64).powf(2.0 * sigma)).ln_1p();
        let ln_shift = (9.0 * (nd + 2.0) / (self.beta * nd)).ln();
        let ln_holder = self.holder_c.ln;
        let ln_c = ln_decay.max(ln_shift).max(ln_holder).max(0.0);
        let prov = if ln_holder >= ln_c { self.holder_c.provenance } else { Provenance::PaperFormula };
        self.harnack_c = Tagged::from_ln(ln_c, prov);

        let lam = self.lambda_exp.value;
        let gamma = self.gamma.value;
        let ln_base = (1.0 + 2.0 * lam) * LN_2 + ln_c;
        let chain = weakest(&[prov, self.gamma.provenance]);
        self.delta = Tagged::from_ln(-ln_base / gamma, chain);
        let ln_tail = (ln_c + (2.0 + 2.0 * lam) * LN_2).max(2.0 * lam * (2.0 * self.kappa.value).ln());
        self.c_tilde = Tagged::from_ln(2.0 * lam / gamma * ln_base + ln_tail, chain);
    }

    /// Replaces M and c (e.g. with measured values) and re-derives d.
    pub fn with_measure_constants(&self, big_m: Tagged, c: Tagged) -> Self {
        let mut out = self.clone();
        out.big_m = big_m;
        out.c = c;
        out.derive();
        out
    }

    /// Replaces the Hölder pair and re-derives the Harnack chain.
    pub fn with_holder(&self, gamma: Tagged, holder_c: Tagged) -> Self {
        let mut out = self.clone();
        out.gamma = gamma;
        out.holder_c = holder_c;
        out.derive();
        out
    }

    /// `ln η(θ) = −a(ln(d/θ))²`.
    pub fn ln_eta(&self, theta: f64) -> f64 {
        -self.a.value * (self.d.ln - theta.ln()).powi(2)
    }

    pub fn eta(&self, theta: f64) -> f64 {
        self.ln_eta(theta).exp()
    }
}

// ---------------------------------------------------------------------------
// Instances

#[derive(Clone, Debug, PartialEq)]
pub enum FamilySpec {
    Uniform { radius: f64 },
    RandomEllipsoids { count: usize, cell: f64 },
    AtomPair { offset: Point },
    AxisAtoms,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    Ball(f64),
    Cube(f64),
}

impl DomainSpec {
    pub fn region(&self, dim: usize) -> Region {
        match *self {
            DomainSpec::Ball(r) => Region::centered_ball(dim, r),
            DomainSpec::Cube(s) => Region::centered_cube(dim, s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundarySpec {
    Constant(f64),
    /// `base + height·(1 − |x − center|/width)⁺`.
    Spike { center: Point, height: f64, width: f64, base: f64 },
    Linear { base: f64, slope: Point },
    Quadratic { base: f64, coef: f64 },
}

impl BoundarySpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BoundarySpec::Constant(v) => *v,
            BoundarySpec::Spike {
                center,
                height,
                width,
                base,
            } => base + height * (1.0 - dist(x, center) / width).max(0.0),
            BoundarySpec::Linear { base, slope } => base + x.iter().zip(slope).map(|(a, b)| a * b).sum::<f64>(),
            BoundarySpec::Quadratic { base, coef } => base + coef * norm(x).powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSpec {
    pub dim: usize,
    pub beta: f64,
    pub lambda: f64,
    pub eps: f64,
    pub h: f64,
    pub family: FamilySpec,
    pub domain: DomainSpec,
    /// Constant source f.
    pub source: f64,
    pub boundary: BoundarySpec,
    pub seed: u64,
    pub tol: f64,
}

pub struct SolvedInstance {
    pub spec: InstanceSpec,
    pub family: MeasureFamily,
    pub problem: DppProblem,
    pub u: GridFunction,
    pub report: SolveReport,
    /// Whether the banded direct solve seeded the iteration.
    pub direct_seed: bool,
}

/// Largest banded-elimination cost `n·w²` attempted before falling back to
/// plain iteration.
pub const DIRECT_SOLVE_BUDGET: f64 = 2e9;

pub fn build_family(spec: &InstanceSpec) -> Result<MeasureFamily, RegularityError> {
    let InstanceSpec {
        dim, lambda, eps, h, ..
    } = *spec;
    Ok(match &spec.family {
        FamilySpec::Uniform { radius } => MeasureFamily::uniform_ball(dim, *radius, lambda, eps, h)?,
        FamilySpec::RandomEllipsoids { count, cell } => MeasureFamily::random_ellipsoid_field(dim, *count, *cell, spec.seed, lambda, eps, h)?,
        FamilySpec::AtomPair { offset } => MeasureFamily::atom_pair(offset.clone(), lambda)?,
        FamilySpec::AxisAtoms => {
            let r = match spec.domain {
                DomainSpec::Ball(r) => r,
                DomainSpec::Cube(s) => s * (dim as f64).sqrt() / 2.0,
            };
            MeasureFamily::axis_atoms(dim, eps, h, r)?
        }
    })
}

/// Builds and solves the instance, seeding the iteration with the direct
/// solution when the band is small enough.
pub fn solve_instance(spec: &InstanceSpec) -> Result<SolvedInstance, RegularityError> {
    if spec.family == FamilySpec::AxisAtoms && spec.dim < 2 {
        return Err(RegularityError::Parameter("axis atoms need N ≥ 2".into()));
    }
    let family = build_family(spec)?;
    let params = OperatorParams::new(spec.beta, spec.eps, spec.lambda)?;
    let ctx = OperatorContext::new(params, spec.dim, spec.h)?;
    let reach = spec.eps * spec.lambda.max(1.0);
    let domain = ExtendedDomain::new(spec.domain.region(spec.dim), reach, spec.h)?;
    let boundary = spec.boundary.clone();
    let source = spec.source;
    let mut problem = DppProblem::new(domain, ctx, OperatorKind::Linear(family.clone()), move |_| source, move |x| boundary.eval(x))?;
    if spec.family == FamilySpec::AxisAtoms {
        let eps = spec.eps;
        problem = problem.with_negligible(move |x| axis_atom_index(x, eps).is_some());
    }
    let seed = problem.direct_linear_values(DIRECT_SOLVE_BUDGET);
    let direct_seed = seed.is_some();
    let opts = SolveOptions::new(spec.tol).initial(seed.map_or(Initial::BoundaryMean, Initial::Values));
    let (u, report) = solve_dpp(&problem, &opts)?;
    Ok(SolvedInstance {
        spec: spec.clone(),
        family,
        problem,
        u,
        report,
        direct_seed,
    })
}

/// Extremes of `L_ε^±u` over the interior nodes of `region`, with a net
/// that contains every atom of the family and of the ball quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorBounds {
    pub max_l_minus: f64,
    pub min_l_plus: f64,
    pub nodes: usize,
}

impl OperatorBounds {
    /// Bounds known a priori, e.g. for explicit test functions.
    pub fn exact(max_l_minus: f64, min_l_plus: f64) -> Self {
        Self {
            max_l_minus,
            min_l_plus,
            nodes: 0,
        }
    }

    /// Rescales to `s·u` for `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            max_l_minus: s * self.max_l_minus,
            min_l_plus: s * self.min_l_plus,
            nodes: self.nodes,
        }
    }
}

pub fn operator_bounds(inst: &SolvedInstance, region: &Region) -> Result<OperatorBounds, RegularityError> {
    let ctx = inst.problem.context();
    let atoms = inst
        .family
        .catalog()
        .iter()
        .chain(std::iter::once(ctx.ball()))
        .flat_map(|q| q.pairs().iter().map(|p| p.offset.clone()))
        .collect::<Vec<_>>();
    let lam = inst.family.lambda().max(1.0);
    let net = DirectionNet::new(inst.spec.dim, lam, lam / 2.0)?.with_points(atoms);
    let lat = inst.problem.lattice();
    let nodes: Vec<usize> = inst
        .problem
        .domain()
        .interior()
        .iter()
        .copied()
        .filter(|&i| region.contains(&lat.coords(i)))
        .collect();
    let vals = nodes
        .par_iter()
        .map(|&i| {
            let x = lat.coords(i);
            Ok((apply_l_minus(ctx, &net, &inst.u, &x)?.value, apply_l_plus(ctx, &net, &inst.u, &x)?.value))
        })
        .collect::<Result<Vec<_>, OperatorError>>()?;
    Ok(OperatorBounds {
        max_l_minus: vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max),
        min_l_plus: vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min),
        nodes: nodes.len(),
    })
}

/// `s·u` on the same lattice.
pub fn scale_grid(u: &GridFunction, s: f64) -> GridFunction {
    GridFunction::new(u.lattice().clone(), u.values().iter().map(|v| s * v).collect()).expect("same lattice")
}

// ---------------------------------------------------------------------------
// Level sets

fn region_values(u: &GridFunction, region: &Region) -> Vec<f64> {
    u.lattice()
        .nodes()
        .filter(|(_, p)| region.contains(p))
        .map(|(i, _)| u.value(i))
        .collect()
}

fn inf_over(u: &GridFunction, region: &Region) -> Option<f64> {
    region_values(u, region).into_iter().reduce(f64::min)
}

fn sup_over(u: &GridFunction, region: &Region) -> Option<f64> {
    region_values(u, region).into_iter().reduce(f64::max)
}

/// Cell volume times the number of nodes whose cell meets `∂region`.
fn boundary_slack(u: &GridFunction, region: &Region) -> f64 {
    let lat = u.lattice();
    let h = lat.spacing();
    let reach = (lat.dim() as f64).sqrt() * h / 2.0;
    let near = lat
        .nodes()
        .filter(|(_, p)| {
            if region.contains(p) {
                region.depth(p) < reach
            } else {
                region.distance(p) < reach
            }
        })
        .count();
    near as f64 * h.powi(lat.dim() as i32)
}

/// Cell-count measure of `{u > t} ∩ region`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetMeasure {
    pub threshold: f64,
    pub count: u64,
    pub total: u64,
    /// `count/total` exactly.
    pub fraction: Ratio<u64>,
    /// `count·hᴺ`.
    pub measure: f64,
    /// Volume of the cells meeting the region boundary.
    pub slack: f64,
}

pub fn level_set_measure(u: &GridFunction, t: f64, region: &Region) -> LevelSetMeasure {
    let vals = region_values(u, region);
    let count = vals.iter().filter(|&&v| v > t).count() as u64;
    let total = vals.len() as u64;
    let cell = u.lattice().spacing().powi(u.lattice().dim() as i32);
    LevelSetMeasure {
        threshold: t,
        count,
        total,
        fraction: Ratio::new(count, total.max(1)),
        measure: count as f64 * cell,
        slack: boundary_slack(u, region),
    }
}

pub fn unit_cube(dim: usize) -> Region {
    Region::centered_cube(dim, 1.0)
}

/// `|{u > t} ∩ Q₁|` on an increasing threshold ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetProfile {
    pub thresholds: Vec<f64>,
    pub measures: Vec<f64>,
    pub slack: f64,
}

pub fn level_set_profile(u: &GridFunction, thresholds: &[f64]) -> LevelSetProfile {
    let q1 = unit_cube(u.lattice().dim());
    let mut vals = region_values(u, &q1);
    vals.sort_by(f64::total_cmp);
    let cell = u.lattice().spacing().powi(u.lattice().dim() as i32);
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    let measures = ts
        .iter()
        .map(|&t| (vals.len() - vals.partition_point(|&v| v <= t)) as f64 * cell)
        .collect();
    LevelSetProfile {
        thresholds: ts,
        measures,
        slack: boundary_slack(u, &q1),
    }
}

/// Geometric threshold ladder `1, q, q², …, q^k`.
pub fn geometric_ladder(q: f64, k: u32) -> Vec<f64> {
    (0..=k).map(|j| q.powi(j as i32)).collect()
}

fn check_nonnegative(u: &GridFunction) -> Result<(), RegularityError> {
    match u.values().iter().position(|&v| v < -1e-12) {
        Some(i) => precondition(format!("u = {} < 0 at node {i}", u.value(i))),
        None => Ok(()),
    }
}

fn check_l_minus(bounds: &OperatorBounds, limit: f64) -> Result<(), RegularityError> {
    if bounds.max_l_minus > limit {
        return precondition(format!("L⁻u reaches {} > {limit}", bounds.max_l_minus));
    }
    Ok(())
}

fn check_l_plus(bounds: &OperatorBounds, limit: f64) -> Result<(), RegularityError> {
    if bounds.min_l_plus < limit {
        return precondition(format!("L⁺u reaches {} < {limit}", bounds.min_l_plus));
    }
    Ok(())
}

fn inf_q3(u: &GridFunction) -> Result<f64, RegularityError> {
    inf_over(u, &Region::centered_cube(u.lattice().dim(), 3.0)).ok_or_else(|| RegularityError::Precondition("no nodes in Q₃".into()))
}

/// Smallest node value t in the region with `|{u > t} ∩ region| ≤ mass`.
fn empirical_threshold(u: &GridFunction, region: &Region, mass: f64) -> f64 {
    let mut vals = region_values(u, region);
    vals.sort_by(|a, b| b.total_cmp(a));
    let cell = u.lattice().spacing().powi(u.lattice().dim() as i32);
    let allowed = (mass / cell).floor() as usize;
    match vals.get(allowed) {
        Some(&t) => t,
        None => vals.last().copied().unwrap_or(0.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureEstimateReport {
    pub big_m: Tagged,
    pub mu: f64,
    pub inf_q3: f64,
    pub measure: LevelSetMeasure,
    /// Smallest node value t with `|{u > t} ∩ Q₁| ≤ μ`.
    pub empirical_m: f64,
    pub pass: bool,
}

/// `|{u > M} ∩ Q₁| ≤ μ`. `bounds` must cover `B_{2√N}`.
pub fn measure_estimate_check(u: &GridFunction, consts: &RegularityConstants, eps: f64, bounds: &OperatorBounds) -> Result<MeasureEstimateReport, RegularityError> {
    check_nonnegative(u)?;
    check_l_minus(bounds, consts.rho.value)?;
    if eps > consts.eps0.value {
        return precondition(format!("ε = {eps} exceeds ε₀ = {}", consts.eps0.value));
    }
    let inf_q3 = inf_q3(u)?;
    if inf_q3 > 1.0 + 1e-12 {
        return precondition(format!("inf over Q₃ is {inf_q3} > 1"));
    }
    let q1 = unit_cube(u.lattice().dim());
    let measure = level_set_measure(u, consts.big_m.value, &q1);
    let mu = consts.mu.value;
    Ok(MeasureEstimateReport {
        big_m: consts.big_m,
        mu,
        inf_q3,
        pass: measure.measure <= mu + measure.slack,
        empirical_m: empirical_threshold(u, &q1, mu),
        measure,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadingRow {
    pub k: f64,
    pub measure: f64,
    pub c_over_k: f64,
    /// `|{u > K} ∩ Q₁| > c/K` up to slack.
    pub triggered: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadingReport {
    pub constant: SpreadingConstant,
    pub min_q1: f64,
    pub slack: f64,
    pub rows: Vec<SpreadingRow>,
    /// `max_K K·|{u > K} ∩ Q₁|` when `min_{Q₁} u < 1`: the least c the
    /// contrapositive allows on this ladder.
    pub empirical_c: Option<f64>,
    pub pass: bool,
}

/// Whenever the superlevel mass exceeds c/K, u must exceed 1 on Q₁.
/// `bounds` must cover `Q_{10√N}`.
pub fn spreading_check(u: &GridFunction, eps: f64, eps0: f64, beta: f64, rho: f64, ks: &[f64], bounds: &OperatorBounds) -> Result<SpreadingReport, RegularityError> {
    check_nonnegative(u)?;
    check_l_minus(bounds, rho)?;
    if !(eps >= eps0 / 2.0 * (1.0 - 1e-12) && eps <= eps0 * (1.0 + 1e-12)) {
        return precondition(format!("ε = {eps} outside [ε₀/2, ε₀] for ε₀ = {eps0}"));
    }
    let constant = spreading_constant(u.lattice().dim(), eps0, beta, rho)?;
    let q1 = unit_cube(u.lattice().dim());
    let min_q1 = inf_over(u, &q1).ok_or_else(|| RegularityError::Precondition("no nodes in Q₁".into()))?;
    let profile = level_set_profile(u, ks);
    let slack = profile.slack;
    let rows: Vec<SpreadingRow> = profile
        .thresholds
        .iter()
        .zip(&profile.measures)
        .map(|(&k, &m)| {
            let c_over_k = (constant.c.ln - k.ln()).exp();
            let triggered = m + slack > c_over_k;
            SpreadingRow {
                k,
                measure: m,
                c_over_k,
                triggered,
                holds: !triggered || min_q1 > 1.0 - slack,
            }
        })
        .collect();
    let empirical_c = (min_q1 < 1.0).then(|| rows.iter().map(|r| r.k * r.measure).fold(0.0, f64::max));
    Ok(SpreadingReport {
        constant,
        min_q1,
        slack,
        pass: rows.iter().all(|r| r.holds),
        rows,
        empirical_c,
    })
}

/// Largest L ≥ 0 with `2^L ε < ε₀`, so that `ε₀ ≤ 2^{L+1} ε`.
pub fn stopping_generation(eps0: f64, eps: f64) -> u32 {
    let mut l = 0;
    while 2f64.powi(l as i32 + 1) * eps < eps0 {
        l += 1;
    }
    l
}

/// δ rounded down to a dyadic rational with denominator 2²⁰.
pub fn ratio_floor(x: f64) -> Option<Ratio<u64>> {
    const DEN: u64 = 1 << 20;
    if !(x > 0.0 && x < 1.0) {
        return None;
    }
    let num = (x * DEN as f64).floor() as u64;
    (num > 0).then(|| Ratio::new(num, DEN))
}

/// `{u > t}` on the dyadic cells of Q₁ at level `l_max`, sampled at cell
/// centres.
pub fn indicator_on_q1(u: &GridFunction, t: f64, l_max: u32) -> Result<IndicatorGrid, RegularityError> {
    let dim = u.lattice().dim();
    let side = 0.5f64.powi(l_max as i32);
    let mut p = vec![0.0; dim];
    Ok(IndicatorGrid::from_fn(dim, l_max, |idx| {
        for (x, &k) in p.iter_mut().zip(idx) {
            *x = -0.5 + (k as f64 + 0.5) * side;
        }
        u.eval(&p).is_ok_and(|v| v > t)
    })?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum CzOutcome {
    Conclusion {
        holds: bool,
        selected: usize,
        residual: usize,
        measure_a: f64,
        bound: f64,
    },
    HypothesisViolated(String),
    Skipped(String),
}

fn run_cz(a: &IndicatorGrid, b: &IndicatorGrid, d1: f64, d2: f64, l: u32) -> Result<CzOutcome, RegularityError> {
    let (Some(r1), Some(r2)) = (ratio_floor(d1), ratio_floor(d2)) else {
        return Ok(CzOutcome::Skipped(format!("thresholds δ₁ = {d1}, δ₂ = {d2} not in (0, 1)")));
    };
    if l == 0 {
        return Ok(CzOutcome::Skipped("stopping generation L = 0".into()));
    }
    let to_f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
    match cz_decompose(a, b, r1, r2, l) {
        Ok(res) => Ok(CzOutcome::Conclusion {
            holds: res.conclusion_holds,
            selected: res.selected.len(),
            residual: res.residual.len(),
            measure_a: to_f(res.measure_a),
            bound: to_f(res.bound),
        }),
        Err(e @ (CzError::Hypothesis { .. } | CzError::MeasureTooLarge { .. } | CzError::NotSubset(_))) => Ok(CzOutcome::HypothesisViolated(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderRow {
    pub k: u32,
    pub threshold: f64,
    pub measure: f64,
    pub bound: f64,
    pub pass: bool,
    pub cz: CzOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperlevelReport {
    pub k_base: f64,
    pub generations: u32,
    pub l_max: u32,
    /// `max_ℓ 1/(2^{2ℓ}K^{k−1})` over the ladder.
    pub max_rescale: f64,
    pub slack: f64,
    pub rows: Vec<LadderRow>,
    pub pass: bool,
}

/// `|{u > K^k} ∩ Q₁| ≤ c/((1−μ)K) + μ^k` for `k = 1..=k_max`, with the
/// stopped decomposition of `{u > K^k}` inside `{u > K^{k−1}}` alongside.
/// `bounds` must cover `Q_{10√N}`.
pub fn superlevel_iteration(
    u: &GridFunction,
    consts: &RegularityConstants,
    k_base: f64,
    k_max: u32,
    eps: f64,
    bounds: &OperatorBounds,
) -> Result<SuperlevelReport, RegularityError> {
    check_nonnegative(u)?;
    check_l_minus(bounds, consts.rho.value)?;
    if k_base.ln() < consts.big_m.ln - 1e-12 {
        return precondition(format!("K = {k_base} below M = {}", consts.big_m.value));
    }
    if eps > consts.eps0.value {
        return precondition(format!("ε = {eps} exceeds ε₀ = {}", consts.eps0.value));
    }
    if inf_q3(u)? > 1.0 + 1e-12 {
        return precondition("inf over Q₃ exceeds 1");
    }
    let dim = u.lattice().dim();
    let generations = stopping_generation(consts.eps0.value, eps);
    let fine = (1.0 / u.lattice().spacing()).log2().ceil().max(1.0) as u32;
    let l_max = fine.max(generations).min(crate::czdecomp::MAX_CELL_BITS / dim as u32);
    let mu = consts.mu.value;
    let ln_k = k_base.ln();
    let c_over_k = (consts.c.ln - ln_k).exp();
    let thresholds: Vec<f64> = (1..=k_max).map(|k| (k as f64 * ln_k).exp()).collect();
    let profile = level_set_profile(u, &thresholds);
    let mut rows = Vec::new();
    let mut max_rescale: f64 = 0.0;
    for (k, (&t, &m)) in (1..=k_max).zip(profile.thresholds.iter().zip(&profile.measures)) {
        let bound = (consts.c.ln - (1.0 - mu).ln() - ln_k).exp() + mu.powi(k as i32);
        for l in 0..=generations {
            max_rescale = max_rescale.max((-(2.0 * l as f64) * LN_2 - (k - 1) as f64 * ln_k).exp());
        }
        let below = ((k - 1) as f64 * ln_k).exp();
        let cz = if generations > l_max {
            CzOutcome::Skipped(format!("L = {generations} exceeds the grid depth {l_max}"))
        } else {
            let a = indicator_on_q1(u, t, l_max)?;
            let b = indicator_on_q1(u, below, l_max)?;
            run_cz(&a, &b, mu, c_over_k, generations)?
        };
        rows.push(LadderRow {
            k,
            threshold: t,
            measure: m,
            bound,
            pass: m <= bound + profile.slack,
            cz,
        });
    }
    Ok(SuperlevelReport {
        k_base,
        generations,
        l_max,
        max_rescale,
        slack: profile.slack,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayBoundRow {
    pub t: f64,
    pub measure: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Least-squares fit of `ln m = ln d − √(ln t)/√a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub a: f64,
    pub d: f64,
    pub points: usize,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFitReport {
    pub a: Tagged,
    pub d: Tagged,
    pub slack: f64,
    pub rows: Vec<DecayBoundRow>,
    pub fit: Option<DecayFit>,
    pub pass: bool,
}

/// `|{u > t} ∩ Q₁| ≤ d·exp(−√(ln t / a))` for every ladder threshold t ≥ 1.
pub fn decay_fit(profile: &LevelSetProfile, consts: &RegularityConstants) -> Result<DecayFitReport, RegularityError> {
    if profile.thresholds.is_empty() {
        return Err(RegularityError::EmptyProfile);
    }
    let a = consts.a.value;
    let rows: Vec<DecayBoundRow> = profile
        .thresholds
        .iter()
        .zip(&profile.measures)
        .filter(|(&t, _)| t >= 1.0)
        .map(|(&t, &m)| {
            let bound = (consts.d.ln - (t.ln() / a).sqrt()).exp();
            DecayBoundRow {
                t,
                measure: m,
                bound,
                pass: m <= bound + profile.slack,
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.t > 1.0 && r.measure > 0.0).map(|r| (r.t.ln().sqrt(), r.measure.ln())).unzip();
    let fit = linear_fit(&xs, &ys).filter(|f| f.0 < 0.0).map(|(slope, icept, r2)| DecayFit {
        a: 1.0 / (slope * slope),
        d: icept.exp(),
        points: xs.len(),
        r2,
    });
    Ok(DecayFitReport {
        a: consts.a,
        d: consts.d,
        slack: profile.slack,
        pass: rows.iter().all(|r| r.pass),
        rows,
        fit,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeGiorgiReport {
    pub theta: f64,
    pub eta: f64,
    pub ln_eta: f64,
    pub max_l_minus: f64,
    pub mass_above_one: LevelSetMeasure,
    pub inf_q3: f64,
    /// `inf_{Q₃} u − η`.
    pub margin: f64,
    pub pass: bool,
}

/// With η = η(θ) computed first: `L⁻u ≤ ηρ` on `Q_{10√N}` and
/// `|Q₁ ∩ {u > 1}| ≥ θ` imply `inf_{Q₃} u ≥ η`.
pub fn de_giorgi_check(u: &GridFunction, consts: &RegularityConstants, theta: f64, eps: f64, bounds: &OperatorBounds) -> Result<DeGiorgiReport, RegularityError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(RegularityError::Parameter(format!("θ = {theta} outside (0, 1]")));
    }
    check_nonnegative(u)?;
    if eps >= consts.eps0.value {
        return precondition(format!("ε = {eps} not below ε₀ = {}", consts.eps0.value));
    }
    let ln_eta = consts.ln_eta(theta);
    let eta = ln_eta.exp();
    check_l_minus(bounds, eta * consts.rho.value)?;
    let mass_above_one = level_set_measure(u, 1.0, &unit_cube(u.lattice().dim()));
    if mass_above_one.measure + mass_above_one.slack < theta {
        return precondition(format!("|Q₁ ∩ {{u > 1}}| = {} below θ = {theta}", mass_above_one.measure));
    }
    let inf_q3 = inf_q3(u)?;
    Ok(DeGiorgiReport {
        theta,
        eta,
        ln_eta,
        max_l_minus: bounds.max_l_minus,
        mass_above_one,
        inf_q3,
        margin: inf_q3 - eta,
        pass: inf_q3 >= eta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseBranch {
    /// `4R²ρ < ρ̃η(M − m)`: the rescaled function meets the hypothesis.
    Contraction,
    /// `4R²ρ ≥ ρ̃η(M − m)`: the bound follows from `sup u ≤ M`.
    Trivial,
}

pub fn oscillation_branch(big_m: f64, small_m: f64, r: f64, rho: f64, rho_tilde: f64, eta: f64) -> CaseBranch {
    if 4.0 * r * r * rho >= rho_tilde * eta * (big_m - small_m) {
        CaseBranch::Trivial
    } else {
        CaseBranch::Contraction
    }
}

/// Right-hand side `(1−η)M + ηm + CR²ρ` with `C = 4/ρ̃`.
pub fn oscillation_rhs(big_m: f64, small_m: f64, r: f64, rho: f64, rho_tilde: f64, eta: f64) -> f64 {
    (1.0 - eta) * big_m + eta * small_m + 4.0 / rho_tilde * r * r * rho
}

#[derive(Clone, Debug, PartialEq)]
pub struct OscillationReport {
    pub radius: f64,
    /// k = 10N.
    pub k_factor: f64,
    pub theta: f64,
    pub big_m: f64,
    pub small_m: f64,
    pub eta: f64,
    pub c_const: f64,
    pub rho: f64,
    pub sup_br: f64,
    pub rhs: f64,
    pub margin: f64,
    /// `(M − sup_{B_R} u)/(M − m)`, the reduction actually seen.
    pub observed_eta: Option<f64>,
    pub branch: CaseBranch,
    pub pass: bool,
}

/// Oscillation form on `B_R(0)`: M is the sup over `B_{kR}` and m the
/// θ-quantile of u over `B_R`. `bounds` must cover `B_{kR}`.
pub fn de_giorgi_oscillation(u: &GridFunction, consts: &RegularityConstants, radius: f64, theta: f64, eps: f64, bounds: &OperatorBounds) -> Result<OscillationReport, RegularityError> {
    if !(theta > 0.0 && theta <= 1.0) || !(radius > 0.0) {
        return Err(RegularityError::Parameter(format!("θ = {theta}, R = {radius}")));
    }
    let dim = u.lattice().dim();
    let rho = consts.rho.value;
    check_l_plus(bounds, -rho)?;
    if eps >= consts.eps0.value * radius {
        return precondition(format!("ε = {eps} not below ε₀R = {}", consts.eps0.value * radius));
    }
    let k_factor = 10.0 * dim as f64;
    let lat = u.lattice();
    let covered = lat
        .origin()
        .iter()
        .zip(lat.extents())
        .all(|(&o, &n)| o <= -k_factor * radius && o + (n - 1) as f64 * lat.spacing() >= k_factor * radius);
    if !covered {
        return precondition(format!("lattice does not cover B_{}", k_factor * radius));
    }
    let origin = vec![0.0; dim];
    let big_m = sup_over(u, &Region::ball(origin.clone(), k_factor * radius)).unwrap_or(f64::NEG_INFINITY);
    let mut vals = region_values(u, &Region::ball(origin, radius));
    if vals.is_empty() {
        return precondition("no nodes in B_R");
    }
    vals.sort_by(f64::total_cmp);
    let idx = ((theta * vals.len() as f64).ceil() as usize).clamp(1, vals.len()) - 1;
    let small_m = vals[idx];
    let sup_br = *vals.last().expect("nonempty");
    let eta = consts.eta(theta);
    let rhs = oscillation_rhs(big_m, small_m, radius, rho, rho, eta);
    Ok(OscillationReport {
        radius,
        k_factor,
        theta,
        big_m,
        small_m,
        eta,
        c_const: 4.0 / rho,
        rho,
        sup_br,
        rhs,
        margin: rhs - sup_br,
        observed_eta: (big_m > small_m).then(|| (big_m - sup_br) / (big_m - small_m)),
        branch: oscillation_branch(big_m, small_m, radius, rho, rho, eta),
        pass: sup_br <= rhs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderReport {
    pub radius: f64,
    pub eps: f64,
    pub rho: f64,
    /// `sup_{B_R}|u|`.
    pub sup_abs: f64,
    pub nodes: usize,
    pub pairs: usize,
    /// `(r, max |u(x) − u(z)|)` over sampled pairs with `2ε ≤ |x − z| ≤ r`.
    pub modulus: Vec<(f64, f64)>,
    /// Log-log slope of the modulus; `None` when u is constant on the sample.
    pub gamma_est: Option<f64>,
    /// Exponent used for C: `gamma_est` or 1.
    pub gamma: f64,
    pub c_est: f64,
    pub c_by_gamma: Vec<(f64, f64)>,
    /// Largest `|u(x) − u(z)|` over the bound, on every sampled pair.
    pub worst_ratio: f64,
    pub audit_pass: bool,
}

/// Fits γ from the modulus of continuity on a node subsample of `B_{R/2}`,
/// sets C to the least constant that makes the bound hold on every sampled
/// pair, and audits the pair set against it.
pub fn holder_estimate(
    u: &GridFunction,
    center: &[f64],
    radius: f64,
    eps: f64,
    rho: f64,
    bounds: &OperatorBounds,
    max_nodes: usize,
) -> Result<HolderReport, RegularityError> {
    check_l_plus(bounds, -rho)?;
    check_l_minus(bounds, rho)?;
    if max_nodes < 2 {
        return Err(RegularityError::Parameter("need at least two sample nodes".into()));
    }
    let lat = u.lattice();
    let half: Vec<(Point, f64)> = lat.nodes().filter(|(_, p)| dist(p, center) < radius / 2.0).map(|(i, p)| (p, u.value(i))).collect();
    let stride = half.len().div_ceil(max_nodes).max(1);
    let sample: Vec<&(Point, f64)> = half.iter().step_by(stride).collect();
    let sup_abs = region_values(u, &Region::ball(center.to_vec(), radius)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut pairs = Vec::with_capacity(sample.len() * sample.len() / 2);
    for (i, a) in sample.iter().enumerate() {
        for b in &sample[i + 1..] {
            pairs.push((dist(&a.0, &b.0), (a.1 - b.1).abs()));
        }
    }
    let scale = sup_abs + radius * radius * rho;
    let c_for = |g: f64| {
        if scale == 0.0 {
            return 0.0;
        }
        pairs.iter().map(|&(d, du)| du * radius.powf(g) / (scale * (d.powf(g) + eps.powf(g)))).fold(0.0, f64::max)
    };

    let far: Vec<&(f64, f64)> = pairs.iter().filter(|p| p.0 >= 2.0 * eps).collect();
    let mut modulus = Vec::new();
    if let (Some(lo), Some(hi)) = (far.iter().map(|p| p.0).reduce(f64::min), far.iter().map(|p| p.0).reduce(f64::max)) {
        const BINS: usize = 12;
        for j in 0..BINS {
            let r = if hi > lo { lo * (hi / lo).powf(j as f64 / (BINS - 1) as f64) } else { hi };
            let w = far.iter().filter(|p| p.0 <= r * (1.0 + 1e-12)).map(|p| p.1).fold(0.0, f64::max);
            modulus.push((r, w));
        }
        modulus.dedup_by(|a, b| a.0 == b.0);
    }
    let floor = 1e-12 * (1.0 + sup_abs);
    let (xs, ys): (Vec<f64>, Vec<f64>) = modulus.iter().filter(|m| m.1 > floor).map(|m| (m.0.ln(), m.1.ln())).unzip();
    let gamma_est = linear_fit(&xs, &ys).map(|f| f.0.clamp(0.01, 1.0));
    let gamma = gamma_est.unwrap_or(1.0);
    let c_est = c_for(gamma);
    let worst_ratio = pairs
        .iter()
        .map(|&(d, du)| {
            let bound = c_est / radius.powf(gamma) * scale * (d.powf(gamma) + eps.powf(gamma));
            if bound > 0.0 {
                du / bound
            } else if du > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    Ok(HolderReport {
        radius,
        eps,
        rho,
        sup_abs,
        nodes: sample.len(),
        pairs: pairs.len(),
        modulus,
        gamma_est,
        gamma,
        c_est,
        c_by_gamma: (1..=10).map(|j| j as f64 / 10.0).map(|g| (g, c_for(g))).collect(),
        worst_ratio,
        audit_pass: worst_ratio <= 1.0 + 1e-9,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarnackInputs {
    pub sup_b1: f64,
    pub inf_b1: f64,
    pub sup_b3: f64,
}

impl HarnackInputs {
    pub fn from_grid(u: &GridFunction) -> Result<Self, RegularityError> {
        let dim = u.lattice().dim();
        let lat = u.lattice();
        let covered = lat.origin().iter().zip(lat.extents()).all(|(&o, &n)| o <= -3.0 && o + (n - 1) as f64 * lat.spacing() >= 3.0);
        if !covered {
            return precondition("lattice does not cover B₃");
        }
        let b1 = Region::centered_ball(dim, 1.0);
        let b3 = Region::centered_ball(dim, 3.0);
        let inf_b3 = inf_over(u, &b3).unwrap_or(0.0);
        if inf_b3 < 0.0 {
            return precondition(format!("u takes the negative value {inf_b3} in B₃"));
        }
        Ok(Self {
            sup_b1: sup_over(u, &b1).unwrap_or(0.0),
            inf_b1: inf_over(u, &b1).unwrap_or(0.0),
            sup_b3: sup_over(u, &b3).unwrap_or(0.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarnackReport {
    pub inputs: HarnackInputs,
    pub rho: f64,
    pub eps: f64,
    pub lambda_exp: f64,
    pub c_tilde: Tagged,
    /// `ε^{2λ} sup_{B₃} u`.
    pub eps_term: f64,
    pub ln_rhs: f64,
    pub rhs: f64,
    /// `sup_{B₁}u / inf_{B₁}u`.
    pub classical_quotient: f64,
    /// Whether `|L_ε^± u| ≤ ρ` was verified on the instance.
    pub hypotheses_checked: bool,
    pub pass: bool,
}

/// `sup_{B₁}u ≤ C̃(inf_{B₁}u + ρ + ε^{2λ} sup_{B₃}u)`, compared in log space.
pub fn harnack_from_values(consts: &RegularityConstants, eps: f64, rho: f64, inputs: HarnackInputs, hypotheses_checked: bool) -> Result<HarnackReport, RegularityError> {
    let eps0 = 0.99 / consts.kappa.value;
    if !(eps > 0.0 && eps < eps0) {
        return precondition(format!("ε = {eps} not in (0, ε₀ = {eps0})"));
    }
    let lam = consts.lambda_exp.value;
    let ln_eps_term = 2.0 * lam * eps.ln() + inputs.sup_b3.ln();
    let ln_inner = ln_add(ln_add(inputs.inf_b1.ln(), rho.ln()), ln_eps_term);
    let ln_rhs = consts.c_tilde.ln + ln_inner;
    Ok(HarnackReport {
        inputs,
        rho,
        eps,
        lambda_exp: lam,
        c_tilde: consts.c_tilde,
        eps_term: ln_eps_term.exp(),
        ln_rhs,
        rhs: ln_rhs.exp(),
        classical_quotient: inputs.sup_b1 / inputs.inf_b1,
        hypotheses_checked,
        pass: inputs.sup_b1 <= 0.0 || inputs.sup_b1.ln() <= ln_rhs,
    })
}

/// Harnack report for a grid function; `bounds` must cover `B₇`.
pub fn harnack_report(u: &GridFunction, consts: &RegularityConstants, eps: f64, bounds: Option<&OperatorBounds>) -> Result<HarnackReport, RegularityError> {
    let rho = consts.rho.value;
    if let Some(b) = bounds {
        check_l_plus(b, -rho)?;
        check_l_minus(b, rho)?;
    }
    harnack_from_values(consts, eps, rho, HarnackInputs::from_grid(u)?, bounds.is_some())
}

/// `(C, γ, λ, κ)` of the two-condition Harnack lemma.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApujaConstants {
    pub c: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl ApujaConstants {
    pub fn from_constants(consts: &RegularityConstants) -> Self {
        Self {
            c: consts.harnack_c.value,
            gamma: consts.gamma.value,
            lambda: consts.lambda_exp.value,
            kappa: consts.kappa.value,
        }
    }

    /// `ln δ` with `δ = (2^{1+2λ}C)^{−1/γ}`.
    pub fn ln_delta(&self) -> f64 {
        -((1.0 + 2.0 * self.lambda) * LN_2 + self.c.ln()) / self.gamma
    }

    /// `ln M_k` with `M_k = 4C(2^{−k}δ)^{−2λ}`.
    pub fn ln_m(&self, k: u32) -> f64 {
        (4.0 * self.c).ln() - 2.0 * self.lambda * (self.ln_delta() - k as f64 * LN_2)
    }

    /// k₀ with `2^{−(k₀+1)} ≤ κε/(2δ) < 2^{−k₀}`, if it is at least 1.
    pub fn k0(&self, eps: f64) -> Option<u32> {
        let ln_t = (self.kappa * eps / 2.0).ln() - self.ln_delta();
        let mut k = (-ln_t / LN_2).floor() as i64;
        while ln_t < -((k + 1) as f64) * LN_2 {
            k += 1;
        }
        while ln_t >= -(k as f64) * LN_2 {
            k -= 1;
        }
        u32::try_from(k).ok().filter(|&k| k >= 1)
    }

    /// `ln C̃` of the lemma statement.
    pub fn ln_c_tilde(&self) -> f64 {
        let ln_base = (1.0 + 2.0 * self.lambda) * LN_2 + self.c.ln();
        2.0 * self.lambda / self.gamma * ln_base + (self.c.ln() + (2.0 + 2.0 * self.lambda) * LN_2).max(2.0 * self.lambda * (2.0 * self.kappa).ln())
    }

    /// `ln max{M₁, (2κ/δ)^{2λ}}`, the constant the proof argues with.
    pub fn ln_c_tilde_proof(&self) -> f64 {
        self.ln_m(1).max(2.0 * self.lambda * ((2.0 * self.kappa).ln() - self.ln_delta()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    pub k: u32,
    pub x: Point,
    pub value: f64,
    /// `M_k·S`.
    pub required: f64,
    pub above: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApujaTrace {
    pub constants: ApujaConstants,
    pub delta: f64,
    pub k0: u32,
    pub radii: Vec<f64>,
    pub ln_levels: Vec<f64>,
    /// `ln ε^{2λ}` against `ln[(δ/2κ)^{2λ} M₁/M_{k₀}]`.
    pub identity_lhs_ln: f64,
    pub identity_rhs_ln: f64,
    pub identity_holds: bool,
    /// `S = sup_{B₃}u/M_{k₀} + inf_{B₁}u + ρ`.
    pub level: f64,
    pub chain: Vec<ChainStep>,
    pub first_drop: Option<u32>,
    pub max_norm: f64,
    pub stays_in_b2: bool,
    /// Every step stayed above its level, which the proof rules out.
    pub contradiction: bool,
    pub ln_c_tilde: f64,
    pub harnack_holds: bool,
}

/// Greedy point chase `x_{k+1} = argmax_{B_{R_k}(x_k)} u` from `x₁ = 0`.
pub fn apuja_iteration_trace(u: &GridFunction, k: &ApujaConstants, eps: f64, rho: f64) -> Result<ApujaTrace, RegularityError> {
    if !(k.c >= 1.0 && k.gamma > 0.0 && k.lambda > 0.0 && k.kappa > 0.0) {
        return Err(RegularityError::Parameter(format!("{k:?}")));
    }
    let inputs = HarnackInputs::from_grid(u)?;
    let dim = u.lattice().dim();
    if inf_over(u, &Region::centered_ball(dim, 3.0)).is_none_or(|m| m <= 0.0) {
        return precondition("u is not positive on B₃");
    }
    let Some(k0) = k.k0(eps) else {
        return precondition(format!("κε/(2δ) ≥ 1/2 at ε = {eps}: no admissible k₀"));
    };
    let ln_delta = k.ln_delta();
    let radii: Vec<f64> = (1..=k0).map(|j| 2f64.powi(1 - j as i32)).collect();
    let ln_levels: Vec<f64> = (1..=k0).map(|j| k.ln_m(j)).collect();
    let identity_lhs_ln = 2.0 * k.lambda * eps.ln();
    let identity_rhs_ln = 2.0 * k.lambda * (ln_delta - (2.0 * k.kappa).ln()) + k.ln_m(1) - k.ln_m(k0);
    let level = (inputs.sup_b3.ln() - k.ln_m(k0)).exp() + inputs.inf_b1 + rho;
    let lat = u.lattice();
    let mut x = vec![0.0; dim];
    let mut chain = Vec::new();
    for (j, &r) in (1..=k0).zip(&radii) {
        let best = lat
            .nodes()
            .filter(|(_, p)| dist(p, &x) < r)
            .map(|(i, p)| (u.value(i), p))
            .reduce(|a, b| if b.0 > a.0 { b } else { a });
        let Some((value, p)) = best else { break };
        let required = (ln_levels[j as usize - 1] + level.ln()).exp();
        chain.push(ChainStep {
            k: j,
            x: p.clone(),
            value,
            required,
            above: value > required,
        });
        x = p;
    }
    let max_norm = chain.iter().map(|s| norm(&s.x)).fold(0.0, f64::max);
    let ln_c_tilde = k.ln_c_tilde();
    let ln_rhs = ln_c_tilde + ln_add(ln_add(inputs.inf_b1.ln(), rho.ln()), identity_lhs_ln + inputs.sup_b3.ln());
    Ok(ApujaTrace {
        constants: *k,
        delta: ln_delta.exp(),
        k0,
        radii,
        ln_levels,
        identity_lhs_ln,
        identity_rhs_ln,
        identity_holds: identity_lhs_ln >= identity_rhs_ln - 1e-9 * identity_rhs_ln.abs().max(1.0),
        level,
        first_drop: chain.iter().find(|s| !s.above).map(|s| s.k),
        contradiction: chain.len() == k0 as usize && chain.iter().all(|s| s.above),
        stays_in_b2: max_norm < 2.0,
        max_norm,
        chain,
        ln_c_tilde,
        harnack_holds: inputs.sup_b1 <= 0.0 || inputs.sup_b1.ln() <= ln_rhs,
    })
}

// ---------------------------------------------------------------------------
// Counterexample on the axis atoms

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleSpec {
    pub alpha: f64,
    pub eps: f64,
    pub a: f64,
    pub phi: f64,
    pub phi_bar: f64,
    /// `a₀ = 1, a₁ = a, a_{k+1} = (2/α)(a_k − 1 + α) − a_{k−1}`.
    pub sequence: Vec<f64>,
}

impl CounterexampleSpec {
    pub fn new(alpha: f64, eps: f64, a: f64, k_max: usize) -> Result<Self, RegularityError> {
        if !(alpha > 0.0 && alpha < 1.0) || !(eps > 0.0 && eps < 1.0) || !(a > 0.0) {
            return Err(RegularityError::Parameter(format!("α = {alpha}, ε = {eps}, a = {a}")));
        }
        let root = (1.0 - alpha * alpha).sqrt();
        let mut sequence = vec![1.0, a];
        while sequence.len() <= k_max {
            let n = sequence.len();
            sequence.push(2.0 / alpha * (sequence[n - 1] - 1.0 + alpha) - sequence[n - 2]);
        }
        sequence.truncate(k_max + 1);
        Ok(Self {
            alpha,
            eps,
            a,
            phi: (1.0 + root) / alpha,
            phi_bar: (1.0 - root) / alpha,
            sequence,
        })
    }

    /// `(|φφ̄ − 1|, |φ + φ̄ − 2/α|)`.
    pub fn root_identity_errors(&self) -> (f64, f64) {
        ((self.phi * self.phi_bar - 1.0).abs(), (self.phi + self.phi_bar - 2.0 / self.alpha).abs())
    }

    /// `1 + (a − 1)(φᵏ − φ̄ᵏ)/(φ − φ̄)`, the closed form matching `a₁ = a`.
    pub fn closed_form(&self, k: usize) -> f64 {
        let k = k as i32;
        1.0 + (self.a - 1.0) * (self.phi.powi(k) - self.phi_bar.powi(k)) / (self.phi - self.phi_bar)
    }

    /// `|a_k − (1 − α + α(a_{k−1} + a_{k+1})/2)| / max(1, a_{k+1})`.
    pub fn recurrence_residual(&self, k: usize) -> f64 {
        let s = &self.sequence;
        let rhs = 1.0 - self.alpha + self.alpha * (s[k - 1] + s[k + 1]) / 2.0;
        (s[k] - rhs).abs() / s[k + 1].abs().max(1.0)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match axis_atom_index(x, self.eps) {
            Some(k) => self.sequence.get(k as usize).copied().unwrap_or(f64::NAN),
            None => 1.0,
        }
    }

    fn axis_values(&self, r: f64) -> impl Iterator<Item = f64> + '_ {
        self.sequence.iter().enumerate().skip(1).take_while(move |(k, _)| (*k as f64) * self.eps < r).map(|(_, v)| *v)
    }

    pub fn sup_ball(&self, r: f64) -> f64 {
        self.axis_values(r).fold(1.0, f64::max)
    }

    pub fn inf_ball(&self, r: f64) -> f64 {
        self.axis_values(r).fold(1.0, f64::min)
    }

    pub fn harnack_inputs(&self) -> HarnackInputs {
        HarnackInputs {
            sup_b1: self.sup_ball(1.0),
            inf_b1: self.inf_ball(1.0),
            sup_b3: self.sup_ball(3.0),
        }
    }
}

pub struct Counterexample {
    pub spec: CounterexampleSpec,
    pub family: MeasureFamily,
    pub problem: DppProblem,
    pub u: GridFunction,
    /// `max |Tu − u|/max(1, a_{k+1})` over the nodes of `B₂`.
    pub max_residual: f64,
    pub max_abs_residual: f64,
    pub residual_pass: bool,
}

/// Explicit solution of the DPP in `B₂` for the axis-atom family: 1 off the
/// axis, `a_k` at `(kε, 0, …, 0)`.
pub fn build_counterexample(dim: usize, alpha: f64, eps: f64, h: f64, a: f64) -> Result<Counterexample, RegularityError> {
    if dim < 2 {
        return Err(RegularityError::Parameter("the axis construction needs N ≥ 2".into()));
    }
    let ratio = eps / h;
    if !(h > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(RegularityError::Parameter(format!("ε/h = {ratio} must be an integer")));
    }
    let k_max = (3.5 / eps).ceil() as usize + 2;
    let spec = CounterexampleSpec::new(alpha, eps, a, k_max)?;
    if let Some(k) = spec.sequence.iter().position(|v| !v.is_finite()) {
        return Err(RegularityError::Overflow { k, value: spec.sequence[k] });
    }
    let family = MeasureFamily::axis_atoms(dim, eps, h, 2.0)?;
    let params = OperatorParams::new(1.0 - alpha, eps, 1.0)?;
    let ctx = OperatorContext::new(params, dim, h)?;
    let domain = ExtendedDomain::new(Region::centered_ball(dim, 2.0), eps, h)?;
    let g = spec.clone();
    let problem = DppProblem::new(domain, ctx, OperatorKind::Linear(family.clone()), |_| 0.0, move |x| g.value(x))?
        .with_negligible(move |x| axis_atom_index(x, eps).is_some());
    let lat = problem.lattice().clone();
    let u = GridFunction::from_fn(lat.clone(), |x| spec.value(x))?;
    let res = problem.residuals(u.values());
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for (&i, r) in problem.domain().interior().iter().zip(&res) {
        let scale = match axis_atom_index(&lat.coords(i), eps) {
            Some(k) => spec.sequence[k as usize + 1].abs().max(1.0),
            None => 1.0,
        };
        max_rel = max_rel.max(r.abs() / scale);
        max_abs = max_abs.max(r.abs());
    }
    Ok(Counterexample {
        spec,
        family,
        problem,
        u,
        max_residual: max_rel,
        max_abs_residual: max_abs,
        residual_pass: max_rel <= 1e-12,
    })
}

// ---------------------------------------------------------------------------
// ε → 0 convergence

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConvergenceCase {
    /// α = 0, N = 1, f ≡ 1, g = 0 on (−1, 1): `v = 3(1 − x²)`.
    Poisson1d,
    /// N = 2, uniform family, f ≡ 0, `g = v = x₁² − x₂²`.
    HarmonicQuadratic,
    /// N = 2, atoms at `±Λe₁`, f ≡ 1: `v = (1 − x₁²)/(2A₁₁)`.
    AnisotropicAtoms { lambda: f64 },
}

impl ConvergenceCase {
    pub const NAMES: [&'static str; 3] = ["poisson-1d", "harmonic-quadratic", "anisotropic-atoms"];

    pub fn from_name(name: &str, lambda: f64) -> Result<Self, RegularityError> {
        match name {
            "poisson-1d" => Ok(Self::Poisson1d),
            "harmonic-quadratic" => Ok(Self::HarmonicQuadratic),
            "anisotropic-atoms" => Ok(Self::AnisotropicAtoms { lambda }),
            other => Err(RegularityError::NoClosedForm(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Poisson1d => Self::NAMES[0],
            Self::HarmonicQuadratic => Self::NAMES[1],
            Self::AnisotropicAtoms { .. } => Self::NAMES[2],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Poisson1d => 1,
            _ => 2,
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            Self::Poisson1d => 1.0,
            _ => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub h: f64,
    /// `max_{B_{1/2}} |u_ε − v|`.
    pub error: f64,
    pub iterations: usize,
    pub certificate: f64,
    /// `sup_{B_{1/2}}u / inf_{B_{1/2}}u` when the infimum is positive.
    pub harnack_quotient: Option<f64>,
    /// The same quotient for v.
    pub limit_quotient: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub case: ConvergenceCase,
    pub beta: f64,
    pub limit_matrix: Vec<Vec<f64>>,
    pub rows: Vec<ConvergenceRow>,
    /// Slope of `ln error` against `ln ε`.
    pub order: Option<f64>,
    pub monotone: bool,
}

/// Solves with the banded direct solution as seed when it fits the budget.
pub fn solve_seeded(problem: &DppProblem, tol: f64) -> Result<(GridFunction, SolveReport), RegularityError> {
    let init = problem.direct_linear_values(DIRECT_SOLVE_BUDGET).map_or(Initial::BoundaryMean, Initial::Values);
    Ok(solve_dpp(problem, &SolveOptions::new(tol).initial(init))?)
}

pub fn pde_convergence_study(case: ConvergenceCase, eps_ladder: &[f64], h_ratio: f64, tol: f64) -> Result<ConvergenceStudy, RegularityError> {
    if eps_ladder.is_empty() || !(h_ratio > 0.0 && h_ratio <= 1.0) {
        return Err(RegularityError::Parameter(format!("ε ladder of {} entries, h/ε = {h_ratio}", eps_ladder.len())));
    }
    let dim = case.dim();
    let beta = case.beta();
    let mut rows = Vec::new();
    let mut matrix = Vec::new();
    for &eps in eps_ladder {
        let h = eps * h_ratio;
        let (lambda, family) = match case {
            ConvergenceCase::AnisotropicAtoms { lambda } => {
                let mut e = vec![0.0; dim];
                e[0] = lambda;
                (lambda, MeasureFamily::atom_pair(e, lambda)?)
            }
            _ => (1.0, MeasureFamily::uniform_ball(dim, 1.0, 1.0, eps, h)?),
        };
        let params = OperatorParams::new(beta, eps, lambda)?;
        let a = limit_matrix(&family, &params, &vec![0.0; dim]).matrix;
        matrix = (0..dim).map(|i| (0..dim).map(|j| a[(i, j)]).collect()).collect();
        let a11 = a[(0, 0)];
        let v = move |x: &[f64]| match case {
            ConvergenceCase::Poisson1d => 3.0 * (1.0 - x[0] * x[0]),
            ConvergenceCase::HarmonicQuadratic => x[0] * x[0] - x[1] * x[1],
            ConvergenceCase::AnisotropicAtoms { .. } => (1.0 - x[0] * x[0]) / (2.0 * a11),
        };
        let (f, g): (f64, Box<dyn Fn(&[f64]) -> f64 + Send + Sync>) = match case {
            ConvergenceCase::Poisson1d => (1.0, Box::new(|_| 0.0)),
            ConvergenceCase::HarmonicQuadratic => (0.0, Box::new(v)),
            ConvergenceCase::AnisotropicAtoms { .. } => (1.0, Box::new(v)),
        };
        let ctx = OperatorContext::new(params, dim, h)?;
        let domain = ExtendedDomain::new(Region::centered_ball(dim, 1.0), eps * lambda, h)?;
        let problem = DppProblem::new(domain, ctx, OperatorKind::Linear(family), move |_| f, g)?;
        let (u, rep) = solve_seeded(&problem, tol)?;
        let lat = u.lattice();
        let half = Region::centered_ball(dim, 0.5);
        let inside: Vec<(f64, f64)> = lat.nodes().filter(|(_, p)| half.contains(p)).map(|(i, p)| (u.value(i), v(&p))).collect();
        let error = inside.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let quotient = |vals: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            (lo > 0.0).then(|| hi / lo)
        };
        rows.push(ConvergenceRow {
            eps,
            h,
            error,
            iterations: rep.iterations,
            certificate: rep.certificate,
            harnack_quotient: quotient(&mut inside.iter().map(|p| p.0)),
            limit_quotient: quotient(&mut inside.iter().map(|p| p.1)),
        });
    }
    let positive: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.error > 0.0).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = positive.iter().map(|r| (r.eps.ln(), r.error.ln())).unzip();
    Ok(ConvergenceStudy {
        case,
        beta,
        limit_matrix: matrix,
        order: linear_fit(&xs, &ys).map(|f| f.0),
        monotone: rows.windows(2).all(|w| w[1].error < w[0].error),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Pipeline over a solved instance

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOptions {
    pub mu: f64,
    /// Lower bound for ρ; the measured operator extremes raise it.
    pub rho_floor: f64,
    pub ladder_k: u32,
    pub decay_thresholds: Vec<f64>,
    pub spreading_ks: Vec<f64>,
    /// Target mass of `{v > 1}` in Q₁ for the De Giorgi rescaling.
    pub theta: f64,
    pub oscillation_radius: f64,
    pub holder_radius: f64,
    pub holder_nodes: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            mu: 0.5,
            rho_floor: 0.01,
            ladder_k: 5,
            decay_thresholds: geometric_ladder(2.0, 12),
            spreading_ks: geometric_ladder(2.0, 12),
            theta: 0.5,
            oscillation_radius: 0.5,
            holder_radius: 1.0,
            holder_nodes: 141,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub constants: RegularityConstants,
    /// Factor making `inf_{Q₃} u = 1`.
    pub scale: f64,
    pub eps: f64,
    pub bounds: OperatorBounds,
    pub measure: MeasureEstimateReport,
    pub spreading: SpreadingReport,
    pub ladder: SuperlevelReport,
    /// Ladder with M and c replaced by their measured counterparts.
    pub ladder_calibrated: Option<SuperlevelReport>,
    pub profile: LevelSetProfile,
    pub decay: DecayFitReport,
    /// Factor applied to the normalized u before the De Giorgi check.
    pub de_giorgi_scale: f64,
    pub de_giorgi: DeGiorgiReport,
    pub oscillation: OscillationReport,
    pub holder: HolderReport,
    pub harnack: HarnackReport,
    pub trace: Option<ApujaTrace>,
    pub pass: bool,
}

impl PipelineReport {
    pub fn checks(&self) -> [(&'static str, bool); 8] {
        [
            ("measure-estimate", self.measure.pass),
            ("spreading", self.spreading.pass),
            ("superlevel-ladder", self.ladder.pass),
            ("decay", self.decay.pass),
            ("de-giorgi", self.de_giorgi.pass),
            ("oscillation", self.oscillation.pass),
            ("holder-audit", self.holder.audit_pass && self.holder.gamma_est.is_some_and(|g| g > 0.0)),
            ("harnack", self.harnack.pass),
        ]
    }
}

/// Runs every statement check on a certified solution. The domain must
/// contain `Q_{10√N}` and `B₇`; operator bounds are taken over all interior
/// nodes.
pub fn regularity_pipeline(inst: &SolvedInstance, opts: &PipelineOptions) -> Result<PipelineReport, RegularityError> {
    if !inst.report.converged {
        return precondition("solver did not certify the solution");
    }
    let dim = inst.spec.dim;
    let eps = inst.spec.eps;
    let omega = inst.spec.domain.region(dim);
    let big = 10.0 * (dim as f64).sqrt() / 2.0;
    let corner = vec![big * (1.0 - 1e-9); dim];
    let mut axis = vec![0.0; dim];
    axis[0] = 7.0 * (1.0 - 1e-9);
    if !omega.contains(&corner) || !omega.contains(&axis) {
        return precondition("domain does not contain Q_{10√N} and B₇");
    }
    let raw = operator_bounds(inst, &omega)?;
    let inf3 = inf_q3(&inst.u)?;
    if !(inf3 > 0.0) {
        return precondition(format!("inf over Q₃ is {inf3}, not positive"));
    }
    let scale = 1.0 / inf3;
    let u = scale_grid(&inst.u, scale);
    let bounds = raw.scaled(scale);
    let rho = opts.rho_floor.max(bounds.max_l_minus.abs()).max(bounds.min_l_plus.abs()) * (1.0 + 1e-9);
    let lambda = inst.family.lambda().max(1.0);
    let mut input = ConstantsInput::new(dim, lambda, inst.spec.beta);
    input.rho = rho;
    input.mu = opts.mu;
    let consts = RegularityConstants::new(&input)?;

    let measure = measure_estimate_check(&u, &consts, eps, &bounds)?;
    let spreading = spreading_check(&u, eps, eps, inst.spec.beta, rho, &opts.spreading_ks, &bounds)?;
    let ladder = superlevel_iteration(&u, &consts, consts.big_m.value, opts.ladder_k, eps, &bounds)?;
    let cal_m = measure.empirical_m.max(1.0) * 2.0;
    let cal_c = spreading.empirical_c.unwrap_or(0.0).max(1e-3);
    let cal = consts.with_measure_constants(Tagged::estimated(cal_m), Tagged::estimated(cal_c));
    let ladder_calibrated = superlevel_iteration(&u, &cal, cal_m, opts.ladder_k, eps, &bounds).ok();
    let profile = level_set_profile(&u, &opts.decay_thresholds);
    let decay = decay_fit(&profile, &consts)?;

    let q1 = unit_cube(dim);
    let t = empirical_threshold(&u, &q1, opts.theta) * (1.0 - 1e-9);
    if !(t > 0.0) {
        return precondition("u vanishes on too much of Q₁ for the De Giorgi rescaling");
    }
    let de_giorgi_scale = 1.0 / t;
    let v = scale_grid(&u, de_giorgi_scale);
    let above = level_set_measure(&v, 1.0, &q1);
    let theta = (above.measure + above.slack).min(1.0);
    let de_giorgi = de_giorgi_check(&v, &consts, theta, eps, &bounds.scaled(de_giorgi_scale))?;

    let oscillation = de_giorgi_oscillation(&u, &consts, opts.oscillation_radius, opts.theta, eps, &bounds)?;
    let origin = vec![0.0; dim];
    let holder = holder_estimate(&u, &origin, opts.holder_radius, eps, rho, &bounds, opts.holder_nodes)?;
    let hconsts = match holder.gamma_est {
        Some(g) => consts.with_holder(Tagged::estimated(g), Tagged::estimated(holder.c_est.max(1e-300))),
        None => consts.clone(),
    };
    let harnack = harnack_report(&u, &hconsts, eps, Some(&bounds))?;
    let trace_consts = ApujaConstants {
        c: 1.0,
        gamma: holder.gamma,
        lambda: 1.0,
        kappa: 1.0,
    };
    let trace = apuja_iteration_trace(&u, &trace_consts, eps, rho).ok();
    let mut out = PipelineReport {
        constants: hconsts,
        scale,
        eps,
        bounds,
        measure,
        spreading,
        ladder,
        ladder_calibrated,
        profile,
        decay,
        de_giorgi_scale,
        de_giorgi,
        oscillation,
        holder,
        harnack,
        trace,
        pass: false,
    };
    out.pass = out.checks().iter().all(|c| c.1);
    Ok(out)
}

/// N = 1 instance on `B₇` at `ε = ε₀/5`, `h = ε/4`, with the direct solve
/// as seed.
pub fn standard_instance(family: FamilySpec, lambda: f64, beta: f64, source: f64, boundary: BoundarySpec, seed: u64, refine: u32) -> InstanceSpec {
    let eps = build_global_barrier(1, lambda.max(1.0), beta).eps0 / 5.0;
    InstanceSpec {
        dim: 1,
        beta,
        lambda,
        eps,
        h: eps / (4 * refine.max(1)) as f64,
        family,
        domain: DomainSpec::Ball(7.0),
        source,
        boundary,
        seed,
        tol: 1e-11,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn consts() -> RegularityConstants {
        RegularityConstants::new(&ConstantsInput::new(1, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn constants_round_trip() {
        let c = consts();
        assert_relative_eq!(c.a.value, 1.0 / (1.0 / c.mu.value).ln(), max_relative = 1e-12);
        let lam = c.lambda_exp.value;
        let ln_delta = -((1.0 + 2.0 * lam) * LN_2 + c.harnack_c.ln) / c.gamma.value;
        assert_relative_eq!(c.delta.ln, ln_delta, max_relative = 1e-12);
        let k = ApujaConstants::from_constants(&c);
        assert_relative_eq!(k.ln_delta(), c.delta.ln, max_relative = 1e-12);
        assert_relative_eq!(k.ln_c_tilde(), c.c_tilde.ln, max_relative = 1e-12);
        let theta = 0.3;
        assert_relative_eq!(c.ln_eta(theta), -c.a.value * (c.d.ln - theta.ln()).powi(2), max_relative = 1e-12);
        assert_eq!(c.lambda_exp.value, 4.0);
        assert_eq!(c.sigma.provenance, Provenance::PaperFormula);
        assert_eq!(c.mu.provenance, Provenance::Calibrated);
    }

    #[test]
    fn recalibration_rederives_d() {
        let c = consts().with_measure_constants(Tagged::estimated(3.0), Tagged::estimated(0.2));
        let mu: f64 = 0.5;
        assert_relative_eq!(c.d.value, 3.0f64.max(0.2 / (1.0 - mu) + 1.0 / mu), max_relative = 1e-12);
        assert_eq!(c.d.provenance, Provenance::Estimated);
    }

    #[test]
    fn spreading_count_for_plane_half() {
        assert_eq!(spreading_n(2, 0.5).unwrap(), 6);
    }

    fn irwin_hall_brute(n: u32, x: f64) -> f64 {
        // Density of a sum of n uniforms by repeated numerical convolution.
        let m = 4000usize;
        let dx = 1.0 / m as f64;
        let mut p = vec![1.0; m];
        for _ in 1..n {
            let mut q = vec![0.0; p.len() + m - 1];
            for (i, a) in p.iter().enumerate() {
                for j in 0..m {
                    q[i + j] += a * dx;
                }
            }
            p = q;
        }
        let idx = (x / dx).floor() as usize;
        p.get(idx).copied().unwrap_or(0.0)
    }

    #[test]
    fn irwin_hall_matches_numerical_convolution() {
        for (n, x) in [(2, 0.7), (3, 1.4), (3, 2.2), (4, 1.1)] {
            let exact = irwin_hall_ln_pdf(n, x).exp();
            assert!((exact - irwin_hall_brute(n, x)).abs() < 5e-3, "n={n} x={x}");
        }
        assert_relative_eq!(irwin_hall_ln_pdf(2, 1.0).exp(), 1.0, max_relative = 1e-12);
    }

    fn grid_1d(f: impl Fn(f64) -> f64) -> GridFunction {
        let lat = crate::lattice::Lattice::new(vec![-4.0], 0.01, vec![801]).unwrap();
        GridFunction::from_fn(lat, |x| f(x[0])).unwrap()
    }

    #[test]
    fn level_sets_of_simple_functions() {
        let q1 = unit_cube(1);
        let zero = grid_1d(|_| 0.0);
        assert_eq!(level_set_measure(&zero, 0.0, &q1).measure, 0.0);
        let lin = grid_1d(|x| x);
        let m = level_set_measure(&lin, 0.0, &q1);
        assert!((m.measure - 0.5).abs() <= m.slack + 1e-12, "{m:?}");
    }

    proptest! {
        #[test]
        fn level_sets_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0, t1 in -3.0f64..3.0, dt in 0.0f64..2.0) {
            let u = grid_1d(|x| a * x + b * x * x);
            let p = level_set_profile(&u, &[t1, t1 + dt]);
            prop_assert!(p.measures[1] <= p.measures[0]);
            prop_assert!(p.measures[0] <= 1.0);
        }
    }

    #[test]
    fn golden_ratio_root_for_four_fifths() {
        let s = CounterexampleSpec::new(0.8, 0.1, 10.0, 20).unwrap();
        assert_relative_eq!(s.phi, 2.0, max_relative = 1e-15);
        assert_relative_eq!(s.phi_bar, 0.5, max_relative = 1e-15);
        let (e1, e2) = s.root_identity_errors();
        assert!(e1 <= 1e-12 && e2 <= 1e-12);
        for k in 0..15 {
            assert_relative_eq!(s.sequence[k], s.closed_form(k), max_relative = 1e-12);
        }
        assert!((1..19).all(|k| s.recurrence_residual(k) <= 1e-12));
    }

    #[test]
    fn counterexample_residual_and_quotient() {
        let ce = build_counterexample(2, 0.8, 0.25, 0.125, 10.0).unwrap();
        assert!(ce.residual_pass, "{}", ce.max_residual);
        let h = ce.spec.harnack_inputs();
        assert_eq!(h.inf_b1, 1.0);
        assert!(h.sup_b1 >= 10.0);
        let b1 = Region::centered_ball(2, 1.0);
        assert_eq!(inf_over(&ce.u, &b1), Some(h.inf_b1));
        assert_eq!(sup_over(&ce.u, &b1), Some(h.sup_b1));
        assert!(matches!(build_counterexample(2, 0.8, 0.25, 0.1, 10.0), Err(RegularityError::Parameter(_))));
    }

    #[test]
    fn oscillation_branches() {
        assert_eq!(oscillation_branch(1.0, 0.0, 1.0, 1.0, 1.0, 0.5), CaseBranch::Trivial);
        assert_eq!(oscillation_branch(10.0, 0.0, 0.1, 0.01, 1.0, 0.5), CaseBranch::Contraction);
        assert_relative_eq!(oscillation_rhs(2.0, 0.0, 1.0, 0.0, 1.0, 0.25), 1.5);
    }

    #[test]
    fn trace_identity_and_k0() {
        let k = ApujaConstants {
            c: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            kappa: 1.0,
        };
        assert_relative_eq!(k.ln_delta().exp(), 0.125, max_relative = 1e-12);
        let k0 = k.k0(0.01).unwrap();
        let t = 0.01 / (2.0 * 0.125);
        assert!(2f64.powi(-(k0 as i32 + 1)) <= t && t < 2f64.powi(-(k0 as i32)));
        assert!(k.k0(0.5).is_none());
    }

    #[test]
    fn holder_on_lipschitz_function() {
        let u = grid_1d(|x| 1.0 + x.abs());
        let rep = holder_estimate(&u, &[0.0], 1.0, 0.01, 0.01, &OperatorBounds::exact(0.0, 0.0), 141).unwrap();
        assert!(rep.audit_pass);
        let g = rep.gamma_est.unwrap();
        assert!((g - 1.0).abs() < 0.1, "{g}");
    }

    #[test]
    fn unknown_convergence_case() {
        assert!(matches!(ConvergenceCase::from_name("heat", 1.0), Err(RegularityError::NoClosedForm(_))));
    }

    #[test]
    fn pipeline_on_uniform_instance() {
        let spec = standard_instance(FamilySpec::Uniform { radius: 1.0 }, 1.0, 0.5, 0.005, BoundarySpec::Constant(1.0), 1, 1);
        let inst = solve_instance(&spec).unwrap();
        assert!(inst.direct_seed);
        let rep = regularity_pipeline(&inst, &PipelineOptions::default()).unwrap();
        for (name, ok) in rep.checks() {
            assert!(ok, "{name} failed");
        }
    }
}
