//! Fixed-point solver for the boundary-value DPP
//! `u = α·(control or ν-average) + β·⨍_{B_ε}u + ε²f` in Ω, `u = g` outside.
//!
//! Steps `x ± εz` are rounded to the nearest lattice node once, so every
//! catalog entry compiles to a translation-invariant stencil of flat index
//! offsets.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{ExtendedDomain, GridFunction, Lattice, LatticeError, NodeClass, Point};
use crate::measures::{MeasureFamily, Quadrature, QuadratureKind};
use crate::operators::{Control, OperatorContext};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("{what} is not finite at node {node}")]
    NonFinite { what: &'static str, node: usize },
    #[error("a step of length {reach} leaves the extended lattice")]
    Unreachable { reach: f64 },
    #[error("dimension mismatch: problem is {problem}-dimensional, {what} is {got}-dimensional")]
    Dimension { problem: usize, what: &'static str, got: usize },
    #[error("grid functions do not live on the problem lattice")]
    Mismatch,
    #[error("no interior nodes")]
    EmptyInterior,
    #[error("empty control set")]
    EmptyControl,
    #[error("not converged after {} iterations, certificate {}", .0.iterations, .0.certificate)]
    NotConverged(Box<SolveReport>),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// α-term of the DPP.
#[derive(Clone, Debug)]
pub enum OperatorKind {
    Linear(MeasureFamily),
    Controlled(Control),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    #[default]
    Jacobi,
    GaussSeidel,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum Initial {
    /// g outside Ω and the mean of g over the boundary nodes inside.
    #[default]
    BoundaryMean,
    Constant(f64),
    /// Interior values taken from a full vector on the lattice.
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to `10·n₀²`.
    pub max_iter: Option<usize>,
    pub scheme: Scheme,
    pub initial: Initial,
}

impl SolveOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_iter: None,
            scheme: Scheme::default(),
            initial: Initial::default(),
        }
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn initial(mut self, initial: Initial) -> Self {
        self.initial = initial;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `max |u − Tu|` over interior nodes of the returned iterate.
    pub certificate: f64,
    /// Sup norm of the last update.
    pub update_norm: f64,
    pub tol: f64,
    pub scheme: Scheme,
    pub converged: bool,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug)]
struct PairStencil {
    offsets: Vec<(isize, u64)>,
    denominator: u64,
    kind: QuadratureKind,
}

#[derive(Clone, Debug)]
enum CompiledControl {
    Linear { catalog: Vec<PairStencil>, choice: Vec<u32> },
    SupPair(Vec<isize>),
    TugOfWar(Vec<isize>),
    Isaacs(Vec<Vec<isize>>),
}

pub struct DppProblem {
    domain: ExtendedDomain,
    ctx: OperatorContext,
    kind: OperatorKind,
    source: Vec<f64>,
    boundary: Vec<f64>,
    negligible: Option<Vec<bool>>,
    ball: PairStencil,
    control: CompiledControl,
    step_moment: f64,
}

fn round_offset(lattice: &Lattice, z: &[f64], eps: f64) -> Vec<i64> {
    z.iter().map(|c| (eps * c / lattice.spacing()).round() as i64).collect()
}

impl DppProblem {
    pub fn new(
        domain: ExtendedDomain,
        ctx: OperatorContext,
        kind: OperatorKind,
        source: impl Fn(&[f64]) -> f64,
        boundary: impl Fn(&[f64]) -> f64,
    ) -> Result<Self, SolverError> {
        let lattice = domain.lattice().clone();
        let dim = lattice.dim();
        if ctx.dim() != dim {
            return Err(SolverError::Dimension {
                problem: dim,
                what: "operator context",
                got: ctx.dim(),
            });
        }
        if domain.interior().is_empty() {
            return Err(SolverError::EmptyInterior);
        }
        let eps = ctx.params().eps();
        let mut max_delta = vec![0i64; dim];
        let mut track = |d: &[i64]| {
            for (m, k) in max_delta.iter_mut().zip(d) {
                *m = (*m).max(k.abs());
            }
        };
        let mut compile_quad = |q: &Quadrature| -> PairStencil {
            let offsets = q
                .pairs()
                .iter()
                .map(|p| {
                    let d = round_offset(&lattice, &p.offset, eps);
                    track(&d);
                    (lattice.flat_offset(&d), p.mass)
                })
                .collect();
            PairStencil {
                offsets,
                denominator: q.denominator(),
                kind: q.kind(),
            }
        };
        let ball = compile_quad(ctx.ball());
        let mut p = vec![0.0; dim];
        let control = match &kind {
            OperatorKind::Linear(family) => {
                if family.catalog().iter().any(|q| q.dim() != dim) {
                    return Err(SolverError::Dimension {
                        problem: dim,
                        what: "measure family",
                        got: family.catalog()[0].dim(),
                    });
                }
                let catalog = family.catalog().iter().map(&mut compile_quad).collect();
                let choice = domain
                    .interior()
                    .iter()
                    .map(|&i| {
                        lattice.coords_into(i, &mut p);
                        family.select(&p) as u32
                    })
                    .collect();
                CompiledControl::Linear { catalog, choice }
            }
            OperatorKind::Controlled(c) => {
                let mut compile_set = |pts: &[Point]| -> Vec<isize> {
                    let mut v: Vec<isize> = pts
                        .iter()
                        .map(|z| {
                            let d = round_offset(&lattice, z, eps);
                            track(&d);
                            lattice.flat_offset(&d).abs()
                        })
                        .collect();
                    v.sort_unstable();
                    v.dedup();
                    v
                };
                match c {
                    Control::SupPair(net) => {
                        if net.is_empty() {
                            return Err(SolverError::EmptyControl);
                        }
                        CompiledControl::SupPair(compile_set(net.points()))
                    }
                    Control::TugOfWar => CompiledControl::TugOfWar(ball.offsets.iter().map(|o| o.0).collect()),
                    Control::Isaacs(catalog) => {
                        if catalog.is_empty() || catalog.iter().any(|s| s.is_empty()) {
                            return Err(SolverError::EmptyControl);
                        }
                        CompiledControl::Isaacs(catalog.iter().map(|s| compile_set(s)).collect())
                    }
                }
            }
        };
        // Every interior node plus every stencil offset must stay on the lattice.
        let mut lo = vec![i64::MAX; dim];
        let mut hi = vec![i64::MIN; dim];
        for &i in domain.interior() {
            for (a, k) in lattice.multi_index(i).into_iter().enumerate() {
                lo[a] = lo[a].min(k);
                hi[a] = hi[a].max(k);
            }
        }
        for a in 0..dim {
            if lo[a] - max_delta[a] < 0 || hi[a] + max_delta[a] >= lattice.extents()[a] as i64 {
                return Err(SolverError::Unreachable {
                    reach: max_delta[a] as f64 * lattice.spacing(),
                });
            }
        }
        let h = lattice.spacing();
        let step_moment = (0..dim)
            .map(|a| {
                ctx.ball()
                    .pairs()
                    .iter()
                    .map(|pr| {
                        let k = (eps * pr.offset[a] / h).round() * h / eps;
                        pr.mass as f64 * k * k
                    })
                    .sum::<f64>()
                    / ctx.ball().denominator() as f64
            })
            .fold(f64::INFINITY, f64::min);

        let mut src = vec![0.0; lattice.len()];
        let mut bnd = vec![0.0; lattice.len()];
        for i in 0..lattice.len() {
            lattice.coords_into(i, &mut p);
            if domain.class(i) == NodeClass::Interior {
                src[i] = source(&p);
                if !src[i].is_finite() {
                    return Err(SolverError::NonFinite { what: "source", node: i });
                }
            } else {
                bnd[i] = boundary(&p);
                if !bnd[i].is_finite() {
                    return Err(SolverError::NonFinite {
                        what: "boundary data",
                        node: i,
                    });
                }
            }
        }
        Ok(Self {
            domain,
            ctx,
            kind,
            source: src,
            boundary: bnd,
            negligible: None,
            ball,
            control,
            step_moment,
        })
    }

    /// Marks a Lebesgue-null set of nodes. Quadratures that discretize an
    /// absolutely continuous measure skip these nodes and renormalize;
    /// atomic quadratures and controls still see them.
    pub fn with_negligible(mut self, null: impl Fn(&[f64]) -> bool) -> Self {
        let lattice = self.domain.lattice();
        let mask: Vec<bool> = lattice.nodes().map(|(_, p)| null(&p)).collect();
        self.negligible = mask.iter().any(|&b| b).then_some(mask);
        self
    }

    pub fn domain(&self) -> &ExtendedDomain {
        &self.domain
    }

    pub fn lattice(&self) -> &Lattice {
        self.domain.lattice()
    }

    pub fn context(&self) -> &OperatorContext {
        &self.ctx
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    /// Chain length `n₀ = diam(Ω)/(ε/2)`.
    pub fn chain_length(&self) -> Result<f64, SolverError> {
        let diam = self.domain.inner().diameter().ok_or(LatticeError::Unbounded)?;
        Ok(diam / (self.ctx.params().eps() / 2.0))
    }

    pub fn default_max_iter(&self) -> Result<usize, SolverError> {
        let n0 = self.chain_length()?;
        Ok((10.0 * n0 * n0).ceil() as usize)
    }

    fn pair_mean(&self, s: &PairStencil, u: &[f64], i: usize) -> f64 {
        let mask = match (&self.negligible, s.kind) {
            (Some(m), QuadratureKind::Discretized) => m,
            _ => {
                let mut acc = 0.0;
                for &(o, m) in &s.offsets {
                    let a = u[(i as isize + o) as usize];
                    let b = u[(i as isize - o) as usize];
                    acc += m as f64 * (a + b);
                }
                return acc / (2.0 * s.denominator as f64);
            }
        };
        let (mut acc, mut mass) = (0.0, 0.0);
        for &(o, m) in &s.offsets {
            for j in [(i as isize + o) as usize, (i as isize - o) as usize] {
                if !mask[j] {
                    acc += m as f64 * u[j];
                    mass += m as f64;
                }
            }
        }
        if mass > 0.0 {
            acc / mass
        } else {
            u[i]
        }
    }

    fn control_term(&self, u: &[f64], i: usize, slot: usize) -> f64 {
        let pair = |o: isize| (u[(i as isize + o) as usize] + u[(i as isize - o) as usize]) / 2.0;
        match &self.control {
            CompiledControl::Linear { catalog, choice } => self.pair_mean(&catalog[choice[slot] as usize], u, i),
            CompiledControl::SupPair(offs) => offs.iter().map(|&o| pair(o)).fold(f64::NEG_INFINITY, f64::max),
            CompiledControl::TugOfWar(offs) => {
                let (mut hi, mut lo) = (u[i], u[i]);
                for &o in offs {
                    for j in [(i as isize + o) as usize, (i as isize - o) as usize] {
                        hi = hi.max(u[j]);
                        lo = lo.min(u[j]);
                    }
                }
                (hi + lo) / 2.0
            }
            CompiledControl::Isaacs(sets) => sets
                .iter()
                .map(|s| s.iter().map(|&o| pair(o)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `Tu` at the interior node with position `slot` in `domain().interior()`.
    pub fn apply_t(&self, u: &[f64], slot: usize) -> f64 {
        let i = self.domain.interior()[slot];
        let p = self.ctx.params();
        let eps = p.eps();
        p.alpha() * self.control_term(u, i, slot) + p.beta() * self.pair_mean(&self.ball, u, i) + eps * eps * self.source[i]
    }

    /// `Tu − u` at every interior node, in interior order.
    pub fn residuals(&self, u: &[f64]) -> Vec<f64> {
        let interior = self.domain.interior();
        (0..interior.len())
            .into_par_iter()
            .map(|s| self.apply_t(u, s) - u[interior[s]])
            .collect()
    }

    /// `max |u − Tu|` over interior nodes.
    pub fn certificate(&self, u: &[f64]) -> f64 {
        self.residuals(u).iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    fn pair_weights(&self, s: &PairStencil, i: usize, scale: f64, row: &mut Vec<(usize, f64)>) {
        let masked = match (&self.negligible, s.kind) {
            (Some(m), QuadratureKind::Discretized) => Some(m),
            _ => None,
        };
        let node = |o: isize, sign: isize| (i as isize + sign * o) as usize;
        let mass: f64 = match masked {
            None => 2.0 * s.denominator as f64,
            Some(m) => s
                .offsets
                .iter()
                .flat_map(|&(o, w)| [(node(o, 1), w), (node(o, -1), w)])
                .filter(|&(j, _)| !m[j])
                .map(|(_, w)| w as f64)
                .sum(),
        };
        if mass == 0.0 {
            row.push((i, scale));
            return;
        }
        for &(o, w) in &s.offsets {
            for j in [node(o, 1), node(o, -1)] {
                if masked.is_none_or(|m| !m[j]) {
                    row.push((j, scale * w as f64 / mass));
                }
            }
        }
    }

    /// Weights of `Tu` at an interior slot as `(node, weight)` with repeated
    /// nodes merged, or `None` for controlled kinds.
    pub fn linear_row(&self, slot: usize) -> Option<Vec<(usize, f64)>> {
        let CompiledControl::Linear { catalog, choice } = &self.control else {
            return None;
        };
        let i = self.domain.interior()[slot];
        let p = self.ctx.params();
        let mut row = Vec::new();
        self.pair_weights(&catalog[choice[slot] as usize], i, p.alpha(), &mut row);
        self.pair_weights(&self.ball, i, p.beta(), &mut row);
        row.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (j, w) in row {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += w,
                _ => merged.push((j, w)),
            }
        }
        Some(merged)
    }

    /// Solves `u = Tu` directly for linear kinds by banded elimination over
    /// the interior unknowns and returns a full lattice vector, suitable as
    /// [`Initial::Values`]. Returns `None` for controlled kinds or when the
    /// band cost `n·w²` exceeds `max_work`.
    pub fn direct_linear_values(&self, max_work: f64) -> Option<Vec<f64>> {
        let interior = self.domain.interior();
        let n = interior.len();
        let mut slot_of = vec![usize::MAX; self.lattice().len()];
        for (s, &i) in interior.iter().enumerate() {
            slot_of[i] = s;
        }
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|s| self.linear_row(s)).collect::<Option<_>>()?;
        let mut w = 0usize;
        for (s, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                if slot_of[j] != usize::MAX {
                    w = w.max(s.abs_diff(slot_of[j]));
                }
            }
        }
        if n as f64 * (w as f64 + 1.0).powi(2) > max_work {
            return None;
        }
        // Band storage: entry (r, c) at r * width + (c + w − r).
        let width = 2 * w + 1;
        let mut band = vec![0.0; n * width];
        let mut rhs = vec![0.0; n];
        let eps = self.ctx.params().eps();
        for (s, row) in rows.iter().enumerate() {
            let i = interior[s];
            band[s * width + w] += 1.0;
            rhs[s] = eps * eps * self.source[i];
            for &(j, wt) in row {
                match slot_of[j] {
                    usize::MAX => rhs[s] += wt * self.boundary[j],
                    c => band[s * width + (c + w - s)] -= wt,
                }
            }
        }
        // The matrix is a diagonally dominant M-matrix, so no pivoting.
        for k in 0..n {
            let pivot = band[k * width + w];
            if pivot.abs() < 1e-300 {
                return None;
            }
            for r in k + 1..(k + w + 1).min(n) {
                let f = band[r * width + (k + w - r)] / pivot;
                if f == 0.0 {
                    continue;
                }
                for c in k..(k + w + 1).min(n) {
                    band[r * width + (c + w - r)] -= f * band[k * width + (c + w - k)];
                }
                rhs[r] -= f * rhs[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut acc = rhs[k];
            for c in k + 1..(k + w + 1).min(n) {
                acc -= band[k * width + (c + w - k)] * x[c];
            }
            x[k] = acc / band[k * width + w];
        }
        let mut u = self.boundary.clone();
        for (s, &i) in interior.iter().enumerate() {
            u[i] = x[s];
        }
        Some(u)
    }

    fn initial_values(&self, init: &Initial) -> Result<Vec<f64>, SolverError> {
        let mut u = self.boundary.clone();
        let fill = match init {
            Initial::BoundaryMean => {
                let (s, n) = self
                    .domain
                    .boundary()
                    .fold((0.0, 0usize), |(s, n), i| (s + self.boundary[i], n + 1));
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            }
            Initial::Constant(c) => *c,
            Initial::Values(v) => {
                if v.len() != u.len() {
                    return Err(SolverError::Mismatch);
                }
                for &i in self.domain.interior() {
                    u[i] = v[i];
                }
                return Ok(u);
            }
        };
        for &i in self.domain.interior() {
            u[i] = fill;
        }
        Ok(u)
    }

    fn jacobi_sweep(&self, u: &[f64], next: &mut [f64]) -> f64 {
        let interior = self.domain.interior();
        let fresh: Vec<f64> = (0..interior.len()).into_par_iter().map(|s| self.apply_t(u, s)).collect();
        let mut change: f64 = 0.0;
        for (s, v) in fresh.into_iter().enumerate() {
            let i = interior[s];
            change = change.max((v - u[i]).abs());
            next[i] = v;
        }
        change
    }

    fn gauss_seidel_sweep(&self, u: &mut [f64]) -> f64 {
        let mut change: f64 = 0.0;
        for (s, &i) in self.domain.interior().iter().enumerate() {
            let v = self.apply_t(u, s);
            change = change.max((v - u[i]).abs());
            u[i] = v;
        }
        change
    }
}

/// Picard iteration `u ← Tu` until the fixed-point residual certificate is at
/// most `tol`.
pub fn solve_dpp(problem: &DppProblem, options: &SolveOptions) -> Result<(GridFunction, SolveReport), SolverError> {
    if !(options.tol > 0.0) {
        return Err(SolverError::Tolerance(options.tol));
    }
    let start = Instant::now();
    let max_iter = match options.max_iter {
        Some(m) => m,
        None => problem.default_max_iter()?,
    };
    let mut u = problem.initial_values(&options.initial)?;
    let mut report = SolveReport {
        iterations: 0,
        certificate: f64::INFINITY,
        update_norm: f64::INFINITY,
        tol: options.tol,
        scheme: options.scheme,
        converged: false,
        wall_time_ms: 0.0,
    };
    match options.scheme {
        Scheme::Jacobi => {
            let mut next = u.clone();
            while report.iterations < max_iter {
                let change = problem.jacobi_sweep(&u, &mut next);
                if change <= options.tol {
                    report.certificate = change;
                    report.converged = true;
                    break;
                }
                std::mem::swap(&mut u, &mut next);
                report.iterations += 1;
                report.update_norm = change;
            }
        }
        Scheme::GaussSeidel => {
            while report.iterations < max_iter {
                let change = problem.gauss_seidel_sweep(&mut u);
                report.iterations += 1;
                report.update_norm = change;
                if change <= options.tol {
                    let cert = problem.certificate(&u);
                    if cert <= options.tol {
                        report.certificate = cert;
                        report.converged = true;
                        break;
                    }
                }
            }
        }
    }
    if !report.converged {
        report.certificate = problem.certificate(&u);
        report.converged = report.certificate <= options.tol;
    }
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    if !report.converged {
        return Err(SolverError::NotConverged(Box::new(report)));
    }
    Ok((GridFunction::new(problem.lattice().clone(), u)?, report))
}

/// `|{y ∈ B₁ : y₁ > 1/2}| / |B₁|`.
pub fn cap_fraction(dim: usize) -> f64 {
    // Slices at height t = sin θ have volume ∝ cos^{N−1} θ, so the
    // integrand in θ is cos^N θ.
    let w = |theta: f64| theta.cos().powi(dim as i32);
    let simpson = |a: f64, b: f64| {
        let n = 2_000;
        let h = (b - a) / n as f64;
        let mut s = w(a) + w(b);
        for k in 1..n {
            s += w(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    simpson(0.5f64.asin(), half_pi) / simpson(-half_pi, half_pi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    /// `sup (u − v)` over Ω.
    pub sup_gap: f64,
    /// `sup |u − v|` over Ω.
    pub abs_gap: f64,
    pub chain_length: f64,
    pub cap_fraction: f64,
    /// `log₁₀ (βA)^{−n₀}`.
    pub log10_amplification: f64,
    pub pass: bool,
}

/// Compares two certified solutions of the same problem against the bound
/// `tol·(βA)^{−n₀}` obtained by chaining steps that move the first coordinate
/// by at least ε/2.
pub fn uniqueness_monitor(problem: &DppProblem, u: &GridFunction, v: &GridFunction, tol: f64) -> Result<UniquenessReport, SolverError> {
    let lat = problem.lattice();
    if u.lattice() != lat || v.lattice() != lat {
        return Err(SolverError::Mismatch);
    }
    let (mut sup_gap, mut abs_gap) = (f64::NEG_INFINITY, 0.0f64);
    for &i in problem.domain().interior() {
        let d = u.value(i) - v.value(i);
        sup_gap = sup_gap.max(d);
        abs_gap = abs_gap.max(d.abs());
    }
    let n0 = problem.chain_length()?;
    let a = cap_fraction(lat.dim());
    let log10_amplification = -n0 * (problem.context().params().beta() * a).log10();
    let log_bound = tol.log10() + log10_amplification;
    Ok(UniquenessReport {
        sup_gap,
        abs_gap,
        chain_length: n0,
        cap_fraction: a,
        log10_amplification,
        pass: abs_gap == 0.0 || abs_gap.log10() <= log_bound,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    /// `min (Tu − u)` for the subsolution.
    pub sub_residual: f64,
    /// `max (Tv − v)` for the supersolution.
    pub super_residual: f64,
    pub chain_length: f64,
    /// Allowed excess of u over v inside Ω.
    pub slack: f64,
    /// `max (u − v)` over Ω, clipped below at zero.
    pub max_violation: f64,
    pub pass: bool,
}

/// Checks `u ≤ v + slack` in Ω for a subsolution u and a supersolution v with
/// residual tolerance `tol` and `u ≤ v` off Ω.
///
/// The slack is `2·tol·E[τ]` where `E[τ] ≤ R²/(β ε² m)` bounds the exit time
/// of the symmetric walk: R is the half-width of the lattice along the first
/// axis and `m` the smallest diagonal second moment of the rounded ball
/// stencil.
pub fn comparison_check(problem: &DppProblem, sub: &GridFunction, sup: &GridFunction, tol: f64) -> Result<ComparisonReport, SolverError> {
    let lat = problem.lattice();
    if sub.lattice() != lat || sup.lattice() != lat {
        return Err(SolverError::Mismatch);
    }
    let sub_residual = problem.residuals(sub.values()).into_iter().fold(f64::INFINITY, f64::min);
    let super_residual = problem.residuals(sup.values()).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if sub_residual < -tol {
        return Err(SolverError::Precondition(format!("subsolution residual {sub_residual} below −{tol}")));
    }
    if super_residual > tol {
        return Err(SolverError::Precondition(format!("supersolution residual {super_residual} above {tol}")));
    }
    for i in 0..lat.len() {
        if problem.domain().class(i) != NodeClass::Interior && sub.value(i) > sup.value(i) {
            return Err(SolverError::Precondition(format!("u > v at exterior node {i}")));
        }
    }
    let p = problem.context().params();
    let half_width = (lat.extents()[0] - 1) as f64 * lat.spacing() / 2.0;
    let exit_time = half_width * half_width / (p.beta() * p.eps() * p.eps() * problem.step_moment);
    let slack = 2.0 * tol * exit_time;
    let max_violation = problem
        .domain()
        .interior()
        .iter()
        .map(|&i| sub.value(i) - sup.value(i))
        .fold(0.0f64, f64::max);
    Ok(ComparisonReport {
        sub_residual,
        super_residual,
        chain_length: problem.chain_length()?,
        slack,
        max_violation,
        pass: max_violation <= slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Region;
    use crate::measures::DirectionNet;
    use crate::operators::{apply_l, OperatorParams};

    fn problem_1d(beta: f64, eps: f64, h: f64, kind: OperatorKind, f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64) -> DppProblem {
        let params = OperatorParams::new(beta, eps, 1.0).unwrap();
        let ctx = OperatorContext::new(params, 1, h).unwrap();
        let dom = ExtendedDomain::new(Region::centered_ball(1, 1.0), eps, h).unwrap();
        DppProblem::new(dom, ctx, kind, f, g).unwrap()
    }

    #[test]
    fn cap_fraction_values() {
        assert!((cap_fraction(1) - 0.25).abs() < 1e-12);
        let n2 = (std::f64::consts::PI / 3.0 - 3f64.sqrt() / 4.0) / std::f64::consts::PI;
        assert!((cap_fraction(2) - n2).abs() < 1e-9);
        assert!((cap_fraction(3) - 5.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn affine_data_is_reproduced() {
        let (eps, h) = (0.2, 0.05);
        let params = OperatorParams::new(0.5, eps, 1.5).unwrap();
        let ctx = OperatorContext::new(params, 2, h).unwrap();
        let dom = ExtendedDomain::new(Region::centered_ball(2, 0.6), 1.5 * eps, h).unwrap();
        let fam = MeasureFamily::random_ellipsoid_field(2, 3, 0.2, 4, 1.5, eps, h).unwrap();
        let g = |p: &[f64]| 1.0 + 2.0 * p[0] - 0.5 * p[1];
        let pb = DppProblem::new(dom, ctx, OperatorKind::Linear(fam), |_| 0.0, g).unwrap();
        let (u, rep) = solve_dpp(&pb, &SolveOptions::new(1e-12)).unwrap();
        assert!(rep.certificate <= 1e-12);
        let lat = pb.lattice();
        for &i in pb.domain().interior() {
            assert!((u.value(i) - g(&lat.coords(i))).abs() <= 1e-10);
        }
    }

    #[test]
    fn jacobi_is_deterministic_and_matches_gauss_seidel() {
        let net = DirectionNet::new(1, 1.0, 0.25).unwrap();
        let pb = problem_1d(0.5, 0.2, 0.02, OperatorKind::Controlled(Control::SupPair(net)), |p| p[0].cos(), |p| p[0] * p[0]);
        let opts = SolveOptions::new(1e-11);
        let (a, ra) = solve_dpp(&pb, &opts).unwrap();
        let (b, _) = solve_dpp(&pb, &opts).unwrap();
        assert_eq!(a.values(), b.values());
        let (c, rc) = solve_dpp(&pb, &opts.clone().scheme(Scheme::GaussSeidel)).unwrap();
        assert!(rc.iterations < ra.iterations);
        let gap = a.values().iter().zip(c.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let rep = uniqueness_monitor(&pb, &a, &c, 2e-11).unwrap();
        assert!(rep.pass && (rep.abs_gap - gap).abs() < 1e-15);
        assert_eq!(uniqueness_monitor(&pb, &a, &a, 1e-11).unwrap().abs_gap, 0.0);
    }

    #[test]
    fn jacobi_sweep_equals_sequential_sweep() {
        let fam = MeasureFamily::uniform_ball(1, 1.0, 1.0, 0.2, 0.02).unwrap();
        let pb = problem_1d(0.3, 0.2, 0.02, OperatorKind::Linear(fam), |p| p[0], |p| p[0].sin());
        let u: Vec<f64> = (0..pb.lattice().len()).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let mut par = u.clone();
        pb.jacobi_sweep(&u, &mut par);
        let mut seq = u.clone();
        for (s, &i) in pb.domain().interior().iter().enumerate() {
            seq[i] = pb.apply_t(&u, s);
        }
        assert_eq!(par, seq);
    }

    #[test]
    fn residual_matches_operator() {
        let (eps, h) = (0.2, 0.02);
        let fam = MeasureFamily::uniform_ball(1, 1.0, 1.0, eps, h).unwrap();
        let f = |p: &[f64]| 1.0 + p[0];
        let pb = problem_1d(0.4, eps, h, OperatorKind::Linear(fam.clone()), f, |_| 0.0);
        let (u, rep) = solve_dpp(&pb, &SolveOptions::new(1e-10)).unwrap();
        let lat = pb.lattice();
        for &i in pb.domain().interior().iter().step_by(7) {
            let x = lat.coords(i);
            let l = apply_l(pb.context(), &fam, &u, &x).unwrap();
            assert!((l.direct + f(&x)).abs() * eps * eps <= rep.tol * (1.0 + 1e-9));
        }
    }

    #[test]
    fn maximum_principle_and_monotone_sandwich() {
        let fam = MeasureFamily::uniform_ball(1, 1.0, 1.0, 0.2, 0.02).unwrap();
        let g = |p: &[f64]| if p[0] > 0.0 { 2.0 } else { -1.0 };
        let pb = problem_1d(0.5, 0.2, 0.02, OperatorKind::Linear(fam), |_| 0.0, g);
        let tol = 1e-10;
        let (mid, _) = solve_dpp(&pb, &SolveOptions::new(tol)).unwrap();
        let (top, _) = solve_dpp(&pb, &SolveOptions::new(tol).initial(Initial::Constant(2.0))).unwrap();
        let (bot, _) = solve_dpp(&pb, &SolveOptions::new(tol).initial(Initial::Constant(-1.0))).unwrap();
        for &i in pb.domain().interior() {
            assert!(mid.value(i) >= -1.0 - tol && mid.value(i) <= 2.0 + tol);
            assert!(bot.value(i) <= top.value(i) + 2.0 * tol);
        }
        let gap = uniqueness_monitor(&pb, &top, &bot, 2.0 * tol).unwrap();
        assert!(gap.pass);
    }

    #[test]
    fn source_linearity() {
        let (eps, h) = (0.25, 0.05);
        let params = OperatorParams::new(0.5, eps, 1.0).unwrap();
        let ctx = OperatorContext::new(params, 2, h).unwrap();
        let dom = ExtendedDomain::new(Region::centered_ball(2, 0.7), eps, h).unwrap();
        let fam = MeasureFamily::uniform_ball(2, 1.0, 1.0, eps, h).unwrap();
        let f = |p: &[f64]| 1.0 + p[0] * p[1];
        let g = |p: &[f64]| p[0] + p[1] * p[1];
        let build = |f2: &dyn Fn(&[f64]) -> f64, g2: &dyn Fn(&[f64]) -> f64| {
            DppProblem::new(dom.clone(), ctx.clone(), OperatorKind::Linear(fam.clone()), f2, g2).unwrap()
        };
        let tol = 1e-12;
        let (u1, _) = solve_dpp(&build(&f, &g), &SolveOptions::new(tol)).unwrap();
        let (u2, _) = solve_dpp(&build(&|p| 2.0 * f(p), &g), &SolveOptions::new(tol)).unwrap();
        let (w, _) = solve_dpp(&build(&f, &|_| 0.0), &SolveOptions::new(tol)).unwrap();
        for &i in dom.interior() {
            assert!((u2.value(i) - u1.value(i) - w.value(i)).abs() < 1e-8);
        }
    }

    #[test]
    fn comparison_of_shifted_solutions() {
        let fam = MeasureFamily::uniform_ball(1, 1.0, 1.0, 0.2, 0.02).unwrap();
        let pb = problem_1d(0.5, 0.2, 0.02, OperatorKind::Linear(fam), |_| 1.0, |_| 0.0);
        let tol = 1e-10;
        let (u, _) = solve_dpp(&pb, &SolveOptions::new(tol)).unwrap();
        let shifted = GridFunction::new(u.lattice().clone(), u.values().iter().map(|x| x + 0.5).collect()).unwrap();
        let r = comparison_check(&pb, &u, &shifted, tol).unwrap();
        assert!(r.pass && r.max_violation == 0.0);
        assert!(comparison_check(&pb, &shifted, &u, tol).is_err());
        // Perturb by ±ε²·s inside: sub/super residuals stay within tolerance.
        let s = 1e-3;
        let e2 = 0.04;
        let tol2 = 2.0 * s * e2 + tol;
        let bump = |sign: f64| {
            let vals = u
                .values()
                .iter()
                .enumerate()
                .map(|(i, x)| if pb.domain().class(i) == NodeClass::Interior { x + sign * s * e2 } else { *x })
                .collect();
            GridFunction::new(u.lattice().clone(), vals).unwrap()
        };
        let r = comparison_check(&pb, &bump(-1.0), &bump(1.0), tol2).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn errors_are_reported() {
        let fam = MeasureFamily::uniform_ball(1, 1.0, 1.0, 0.2, 0.02).unwrap();
        let pb = problem_1d(0.5, 0.2, 0.02, OperatorKind::Linear(fam.clone()), |_| 1.0, |_| 0.0);
        assert!(matches!(solve_dpp(&pb, &SolveOptions::new(0.0)), Err(SolverError::Tolerance(_))));
        match solve_dpp(&pb, &SolveOptions::new(1e-12).max_iter(3)) {
            Err(SolverError::NotConverged(r)) => assert!(!r.converged && r.iterations == 3),
            other => panic!("{other:?}"),
        }
        let params = OperatorParams::new(0.5, 0.2, 1.0).unwrap();
        let ctx = OperatorContext::new(params, 1, 0.02).unwrap();
        let short = ExtendedDomain::new(Region::centered_ball(1, 1.0), 0.05, 0.02).unwrap();
        assert!(matches!(
            DppProblem::new(short, ctx, OperatorKind::Linear(fam), |_| 0.0, |_| 0.0),
            Err(SolverError::Unreachable { .. })
        ));
    }

    #[test]
    fn axis_counterexample_recurrence() {
        let (eps, h, alpha) = (0.25, 0.05, 0.9);
        let params = OperatorParams::new(1.0 - alpha, eps, 1.0).unwrap();
        let ctx = OperatorContext::new(params, 2, h).unwrap();
        let dom = ExtendedDomain::new(Region::centered_ball(2, 2.0), eps, h).unwrap();
        let fam = MeasureFamily::axis_atoms(2, eps, h, 2.0).unwrap();
        // Off-axis data 1; on the axis outside Ω the recurrence continued from a₁ = 2.
        let a1 = 2.0;
        let mut a = vec![1.0, a1];
        for k in 1..20 {
            let next = (2.0 / alpha) * (a[k] - 1.0 + alpha) - a[k - 1];
            a.push(next);
        }
        let on_axis = move |p: &[f64]| crate::measures::axis_atom_index(p, eps);
        let aa = a.clone();
        let g = move |p: &[f64]| on_axis(p).map_or(1.0, |k| aa[k as usize]);
        let pb = DppProblem::new(dom, ctx, OperatorKind::Linear(fam), |_| 0.0, g)
            .unwrap()
            .with_negligible(move |p| on_axis(p).is_some());
        let (u, _) = solve_dpp(&pb, &SolveOptions::new(1e-12).scheme(Scheme::GaussSeidel)).unwrap();
        let lat = pb.lattice();
        for &i in pb.domain().interior() {
            let x = lat.coords(i);
            let expect = on_axis(&x).map_or(1.0, |k| a[k as usize]);
            assert!((u.value(i) - expect).abs() < 1e-9 * expect.abs().max(1.0), "{x:?}");
        }
        for k in 1..8 {
            let lhs = a[k];
            let rhs = 1.0 - alpha + alpha * (a[k - 1] + a[k + 1]) / 2.0;
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
    #[test]
    fn direct_solve_matches_iteration() {
        let fam = MeasureFamily::uniform_ball(1, 1.0, 1.0, 0.2, 0.02).unwrap();
        let pb = problem_1d(0.4, 0.2, 0.02, OperatorKind::Linear(fam), |p| 1.0 + p[0], |p| p[0].sin());
        let direct = pb.direct_linear_values(1e9).unwrap();
        let (u, _) = solve_dpp(&pb, &SolveOptions::new(1e-12)).unwrap();
        for &i in pb.domain().interior() {
            assert!((direct[i] - u.value(i)).abs() < 1e-9);
        }
        let (v, rep) = solve_dpp(&pb, &SolveOptions::new(1e-12).initial(Initial::Values(direct))).unwrap();
        assert!(rep.iterations <= 3 && rep.certificate <= 1e-12);
        assert!(v.values().iter().zip(u.values()).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(pb.direct_linear_values(1.0).is_none());
        let rows: f64 = pb.linear_row(0).unwrap().iter().map(|e| e.1).sum();
        assert!((rows - 1.0).abs() < 1e-12);
    }
}
