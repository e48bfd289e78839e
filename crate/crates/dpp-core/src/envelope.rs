//! Concave envelope Γ of u⁺ over a ball, contact set, ε-cube cover and the
//! ε-ABP right-hand side.

use std::collections::BTreeSet;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rayon::prelude::*;
use thiserror::Error;

use crate::hull::{upper_hull_2d, upper_hull_3d};
use crate::lattice::{norm, CubeGrid, CubeIndex, Field, GridFunction, Lattice, LatticeError, Point};
use crate::measures::DirectionNet;
use crate::operators::{apply_l_plus, OperatorContext, OperatorError};

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("no lattice nodes inside the envelope ball")]
    EmptyRegion,
    #[error("the hull method needs N ≤ 2, got N = {0}")]
    HullDimension(usize),
    #[error("linear program failed at node {node}: {message}")]
    Lp { node: usize, message: String },
    #[error("node {0} is not a contact node")]
    NotContact(usize),
    #[error("cube {0:?} has no sample of f")]
    EmptyCube(Vec<i64>),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EnvelopeMethod {
    #[default]
    Hull,
    Lp,
}

/// Γ on the nodes of a lattice, zero outside the open ball of radius
/// `radius`, with one supergradient per ball node.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    lattice: Lattice,
    radius: f64,
    method: EnvelopeMethod,
    in_ball: Vec<bool>,
    gamma: Vec<f64>,
    slopes: Vec<Option<Point>>,
}

impl Envelope {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn method(&self) -> EnvelopeMethod {
        self.method
    }

    pub fn in_ball(&self) -> &[bool] {
        &self.in_ball
    }

    pub fn values(&self) -> &[f64] {
        &self.gamma
    }

    pub fn supergradient(&self, idx: usize) -> Option<&Point> {
        self.slopes[idx].as_ref()
    }

    pub fn to_grid(&self) -> GridFunction {
        GridFunction::new(self.lattice.clone(), self.gamma.clone()).expect("finite envelope")
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn unit_hash(i: usize, salt: u64) -> f64 {
    (splitmix(i as u64 ^ salt.wrapping_mul(0xA24B_AED4_963E_E407)) >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// Ball nodes that can touch the envelope: positive values and the extreme
/// shell of the node set (nodes with a lattice neighbour outside the ball).
fn candidates(lattice: &Lattice, in_ball: &[bool], pos: &[f64]) -> Vec<usize> {
    let dim = lattice.dim();
    (0..lattice.len())
        .filter(|&i| {
            if !in_ball[i] {
                return false;
            }
            if pos[i] > 0.0 {
                return true;
            }
            let m = lattice.multi_index(i);
            (0..dim).any(|a| {
                [-1i64, 1].iter().any(|&s| {
                    let mut k = m.clone();
                    k[a] += s;
                    lattice.index_of(&k).is_none_or(|j| !in_ball[j])
                })
            })
        })
        .collect()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    false
}

pub fn concave_envelope(u: &GridFunction, radius: f64, method: EnvelopeMethod) -> Result<Envelope, EnvelopeError> {
    let lattice = u.lattice().clone();
    let dim = lattice.dim();
    let coords: Vec<Point> = (0..lattice.len()).map(|i| lattice.coords(i)).collect();
    let in_ball: Vec<bool> = coords.iter().map(|p| norm(p) < radius).collect();
    if !in_ball.iter().any(|&b| b) {
        return Err(EnvelopeError::EmptyRegion);
    }
    let pos: Vec<f64> = u.values().iter().map(|v| v.max(0.0)).collect();
    let cand = candidates(&lattice, &in_ball, &pos);
    let mut gamma = vec![0.0; lattice.len()];
    let mut slopes: Vec<Option<Point>> = vec![None; lattice.len()];
    match method {
        EnvelopeMethod::Hull => match dim {
            1 => hull_1d(&coords, &in_ball, &pos, &cand, &mut gamma, &mut slopes),
            2 => hull_2d(&lattice, &coords, &in_ball, &pos, &cand, &mut gamma, &mut slopes),
            n => return Err(EnvelopeError::HullDimension(n)),
        },
        EnvelopeMethod::Lp => {
            let nodes: Vec<usize> = (0..lattice.len()).filter(|&i| in_ball[i]).collect();
            let solved = nodes
                .par_iter()
                .map(|&i| lp_at(&coords, &pos, &cand, i))
                .collect::<Result<Vec<_>, _>>()?;
            for (&i, (g, xi)) in nodes.iter().zip(solved) {
                gamma[i] = g;
                slopes[i] = Some(xi);
            }
        }
    }
    Ok(Envelope {
        lattice,
        radius,
        method,
        in_ball,
        gamma,
        slopes,
    })
}

fn hull_1d(coords: &[Point], in_ball: &[bool], pos: &[f64], cand: &[usize], gamma: &mut [f64], slopes: &mut [Option<Point>]) {
    let pts: Vec<[f64; 2]> = cand.iter().map(|&i| [coords[i][0], pos[i]]).collect();
    let chain: Vec<[f64; 2]> = upper_hull_2d(&pts).into_iter().map(|k| pts[k]).collect();
    for i in (0..coords.len()).filter(|&i| in_ball[i]) {
        let x = coords[i][0];
        if chain.len() == 1 {
            gamma[i] = chain[0][1];
            slopes[i] = Some(vec![0.0]);
            continue;
        }
        // First segment whose right end is at or beyond x; at a vertex this
        // is the segment to the right, which has the smaller slope.
        let mut s = chain.partition_point(|p| p[0] <= x).clamp(1, chain.len() - 1);
        if chain[s - 1][0] > x {
            s = 1;
        }
        let (a, b) = (chain[s - 1], chain[s]);
        let slope = (b[1] - a[1]) / (b[0] - a[0]);
        gamma[i] = if x == a[0] { a[1] } else { a[1] + slope * (x - a[0]) };
        slopes[i] = Some(vec![slope]);
    }
}

fn hull_2d(
    lattice: &Lattice,
    coords: &[Point],
    in_ball: &[bool],
    pos: &[f64],
    cand: &[usize],
    gamma: &mut [f64],
    slopes: &mut [Option<Point>],
) {
    let h = lattice.spacing();
    let scale = 1.0 + pos.iter().fold(0.0f64, |m, v| m.max(*v));
    // Deterministic perturbation into general position.
    let pts: Vec<[f64; 3]> = cand
        .iter()
        .map(|&i| {
            [
                coords[i][0] + 1e-11 * h * unit_hash(i, 1),
                coords[i][1] + 1e-11 * h * unit_hash(i, 2),
                pos[i] + 1e-13 * scale * unit_hash(i, 3),
            ]
        })
        .collect();
    // Facets spanning collinear shell nodes have near-zero projected area
    // after the perturbation; they carry no nodes and their planes are
    // ill-conditioned.
    let tris: Vec<[usize; 3]> = upper_hull_3d(&pts)
        .unwrap_or_default()
        .into_iter()
        .filter(|t| {
            let [a, b, c] = [pts[t[0]], pts[t[1]], pts[t[2]]];
            ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs() > 1e-6 * h * h
        })
        .collect();
    let planes: Vec<[f64; 3]> = tris
        .iter()
        .map(|t| {
            let [a, b, c] = [pts[t[0]], pts[t[1]], pts[t[2]]];
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            let (gx, gy) = (-n[0] / n[2], -n[1] / n[2]);
            [gx, gy, a[2] - gx * a[0] - gy * a[1]]
        })
        .collect();
    let eval = |pl: &[f64; 3], p: &[f64]| pl[0] * p[0] + pl[1] * p[1] + pl[2];
    let mut best: Vec<f64> = vec![f64::INFINITY; coords.len()];
    let mut owner: Vec<Option<usize>> = vec![None; coords.len()];
    let origin = lattice.origin();
    let ext = lattice.extents();
    for (f, t) in tris.iter().enumerate() {
        let [a, b, c] = [pts[t[0]], pts[t[1]], pts[t[2]]];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let tol = 1e-9 * det.abs();
        let lo_x = a[0].min(b[0]).min(c[0]);
        let hi_x = a[0].max(b[0]).max(c[0]);
        let lo_y = a[1].min(b[1]).min(c[1]);
        let hi_y = a[1].max(b[1]).max(c[1]);
        let k0 = (((lo_x - origin[0]) / h).floor().max(0.0)) as usize;
        let k1 = ((((hi_x - origin[0]) / h).ceil()) as usize).min(ext[0] - 1);
        let l0 = (((lo_y - origin[1]) / h).floor().max(0.0)) as usize;
        let l1 = ((((hi_y - origin[1]) / h).ceil()) as usize).min(ext[1] - 1);
        for k in k0..=k1 {
            for l in l0..=l1 {
                let i = lattice.index_of(&[k as i64, l as i64]).expect("in range");
                if !in_ball[i] {
                    continue;
                }
                let p = &coords[i];
                let w1 = (p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1]);
                let w2 = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
                let inside = w1 >= -tol && w2 >= -tol && det - w1 - w2 >= -tol;
                if !inside {
                    continue;
                }
                let val = eval(&planes[f], p);
                let better = match owner[i] {
                    None => true,
                    Some(g) => {
                        let slope = [planes[f][0], planes[f][1]];
                        let old = [planes[g][0], planes[g][1]];
                        val < best[i] - 1e-12 * scale || (val <= best[i] + 1e-12 * scale && lex_less(&slope, &old))
                    }
                };
                if better {
                    best[i] = best[i].min(val);
                    owner[i] = Some(f);
                }
            }
        }
    }
    for i in (0..coords.len()).filter(|&i| in_ball[i]) {
        let f = owner[i].or_else(|| {
            (0..planes.len()).min_by(|&x, &y| eval(&planes[x], &coords[i]).total_cmp(&eval(&planes[y], &coords[i])))
        });
        match f {
            Some(f) => {
                gamma[i] = eval(&planes[f], &coords[i]).min(best[i]);
                slopes[i] = Some(vec![planes[f][0], planes[f][1]]);
            }
            None => {
                gamma[i] = 0.0;
                slopes[i] = Some(vec![0.0, 0.0]);
            }
        }
    }
}

/// `min ξ·x₀ + c` subject to `ξ·y + c ≥ u⁺(y)` at the candidate nodes.
fn lp_at(coords: &[Point], pos: &[f64], cand: &[usize], node: usize) -> Result<(f64, Point), EnvelopeError> {
    let x0 = &coords[node];
    let dim = x0.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let xi: Vec<_> = (0..dim).map(|a| lp.add_var(x0[a], (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let c = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    for &j in cand {
        let mut row: Vec<(minilp::Variable, f64)> = xi.iter().zip(&coords[j]).map(|(&v, &y)| (v, y)).collect();
        row.push((c, 1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, pos[j]);
    }
    let sol = lp.solve().map_err(|e| EnvelopeError::Lp {
        node,
        message: e.to_string(),
    })?;
    let slope: Point = xi.iter().map(|&v| sol[v]).collect();
    let value = slope.iter().zip(x0).map(|(a, b)| a * b).sum::<f64>() + sol[c];
    Ok((value, slope))
}

/// Nodes with `|x| ≤ contact_radius` and `Γ(x) − u(x) ≤ tol`.
pub fn contact_set(u: &GridFunction, env: &Envelope, contact_radius: f64, tol: f64) -> Vec<bool> {
    let lat = env.lattice();
    (0..lat.len())
        .map(|i| env.in_ball[i] && norm(&lat.coords(i)) <= contact_radius && env.gamma[i] - u.value(i) <= tol)
        .collect()
}

/// Default contact tolerance `10·tol_solver + ε²`.
pub fn default_contact_tol(tol_solver: f64, eps: f64) -> f64 {
    10.0 * tol_solver + eps * eps
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeResult {
    pub envelope: Envelope,
    pub contact: Vec<bool>,
    pub cover: BTreeSet<CubeIndex>,
    pub cube_grid: CubeGrid,
    pub tol_contact: f64,
}

impl EnvelopeResult {
    pub fn contact_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.contact.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i)
    }
}

/// Envelope over `B_{2√N+Λε}`, contact set in `B̄_{2√N}` and its ε-cube cover.
pub fn envelope_pipeline(u: &GridFunction, eps: f64, lambda: f64, method: EnvelopeMethod, tol_contact: f64) -> Result<EnvelopeResult, EnvelopeError> {
    let dim = u.lattice().dim();
    let inner = 2.0 * (dim as f64).sqrt();
    let envelope = concave_envelope(u, inner + lambda * eps, method)?;
    let contact = contact_set(u, &envelope, inner, tol_contact);
    let cube_grid = CubeGrid::for_epsilon(dim, eps)?;
    let lat = envelope.lattice();
    let pts: Vec<Point> = (0..lat.len()).filter(|&i| contact[i]).map(|i| lat.coords(i)).collect();
    let cover = cube_grid.cover(pts.iter().map(|p| p.as_slice()));
    Ok(EnvelopeResult {
        envelope,
        contact,
        cover,
        cube_grid,
        tol_contact,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeAudit {
    /// `min (Γ − u⁺)` over ball nodes.
    pub min_gap: f64,
    /// Largest midpoint-concavity violation along axis and diagonal lines.
    pub max_concavity_violation: f64,
    /// Largest `Γ(z) − Γ(x) − ⟨ξ, z − x⟩` over contact nodes x and sampled z.
    pub max_supergradient_violation: f64,
    /// Largest `|Γ|` outside the ball.
    pub outside_max: f64,
}

pub fn envelope_audit(u: &GridFunction, env: &Envelope, contact: &[bool], samples: usize) -> EnvelopeAudit {
    let lat = env.lattice();
    let dim = lat.dim();
    let g = &env.gamma;
    let ball: Vec<usize> = (0..lat.len()).filter(|&i| env.in_ball[i]).collect();
    let min_gap = ball.iter().map(|&i| g[i] - u.value(i).max(0.0)).fold(f64::INFINITY, f64::min);
    let mut dirs: Vec<Vec<i64>> = Vec::new();
    for a in 0..dim {
        let mut d = vec![0; dim];
        d[a] = 1;
        dirs.push(d);
        for b in a + 1..dim {
            for s in [-1, 1] {
                let mut d = vec![0; dim];
                d[a] = 1;
                d[b] = s;
                dirs.push(d);
            }
        }
    }
    let mut conc: f64 = 0.0;
    for &i in &ball {
        let m = lat.multi_index(i);
        for d in &dirs {
            let fwd: Vec<i64> = m.iter().zip(d).map(|(a, b)| a + b).collect();
            let bwd: Vec<i64> = m.iter().zip(d).map(|(a, b)| a - b).collect();
            if let (Some(p), Some(q)) = (lat.index_of(&fwd), lat.index_of(&bwd)) {
                if env.in_ball[p] && env.in_ball[q] {
                    conc = conc.max((g[p] + g[q]) / 2.0 - g[i]);
                }
            }
        }
    }
    let stride = (ball.len() / samples.max(1)).max(1);
    let zs: Vec<usize> = ball.iter().copied().step_by(stride).collect();
    let mut sg: f64 = 0.0;
    for i in (0..lat.len()).filter(|&i| contact[i]) {
        if let Some(xi) = env.supergradient(i) {
            let x = lat.coords(i);
            for &z in &zs {
                let pz = lat.coords(z);
                let lin: f64 = xi.iter().zip(pz.iter().zip(&x)).map(|(a, (p, q))| a * (p - q)).sum();
                sg = sg.max(g[z] - g[i] - lin);
            }
        }
    }
    let outside_max = (0..lat.len()).filter(|&i| !env.in_ball[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
    EnvelopeAudit {
        min_gap,
        max_concavity_violation: conc,
        max_supergradient_violation: sg,
        outside_max,
    }
}

/// `(Σ_Q (sup_Q f⁺)ᴺ |Q|)^{1/N}` over the cover. `sup_Q f⁺` is taken over
/// the lattice nodes in the closed cube together with its centre and
/// corners.
pub fn abp_rhs<F: Field + ?Sized>(f: &F, cover: &BTreeSet<CubeIndex>, grid: &CubeGrid, lattice: Option<&Lattice>) -> Result<f64, EnvelopeError> {
    let dim = f.dim();
    let side = grid.side();
    let mut total = 0.0;
    for q in cover {
        let center = grid.center(q);
        let mut samples: Vec<Point> = vec![center.clone()];
        for mask in 0..(1usize << dim) {
            samples.push((0..dim).map(|a| center[a] + if mask >> a & 1 == 1 { side / 2.0 } else { -side / 2.0 }).collect());
        }
        if let Some(lat) = lattice {
            let h = lat.spacing();
            let o = lat.origin();
            let lo: Vec<i64> = (0..dim).map(|a| ((center[a] - side / 2.0 - o[a]) / h - 1e-9).ceil() as i64).collect();
            let hi: Vec<i64> = (0..dim).map(|a| ((center[a] + side / 2.0 - o[a]) / h + 1e-9).floor() as i64).collect();
            let mut k = lo.clone();
            if lo.iter().zip(&hi).all(|(a, b)| a <= b) {
                loop {
                    if let Some(i) = lat.index_of(&k) {
                        samples.push(lat.coords(i));
                    }
                    let mut a = dim;
                    loop {
                        if a == 0 {
                            break;
                        }
                        a -= 1;
                        if k[a] < hi[a] {
                            k[a] += 1;
                            break;
                        }
                        k[a] = lo[a];
                    }
                    if k == lo {
                        break;
                    }
                }
            }
        }
        let mut sup: Option<f64> = None;
        for p in &samples {
            if let Ok(v) = f.eval(p) {
                sup = Some(sup.map_or(v.max(0.0), |s: f64| s.max(v.max(0.0))));
            }
        }
        let s = sup.ok_or_else(|| EnvelopeError::EmptyCube(q.0.clone()))?;
        total += s.powi(dim as i32) * grid.volume();
    }
    Ok(total.powf(1.0 / dim as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbpAudit {
    pub sup_u: f64,
    pub rhs: f64,
    /// `sup u / rhs`, absent when both vanish.
    pub ratio: Option<f64>,
    pub degenerate: bool,
    pub contact_nodes: usize,
    pub cover_cubes: usize,
    pub min_residual: f64,
}

/// Checks the subsolution preconditions and reports `sup_{B_{2√N}} u` against
/// the ε-ABP sum. `residual_tol` bounds the allowed negative part of
/// `L_ε⁺u + f` and the positive part of u outside `B_{2√N}`.
pub fn abp_ratio_audit<F: Field + ?Sized>(
    u: &GridFunction,
    f: &F,
    ctx: &OperatorContext,
    net: &DirectionNet,
    method: EnvelopeMethod,
    tol_contact: f64,
    residual_tol: f64,
) -> Result<(AbpAudit, EnvelopeResult), EnvelopeError> {
    let lat = u.lattice();
    let dim = lat.dim();
    let inner = 2.0 * (dim as f64).sqrt();
    let p = ctx.params();
    let reach = inner + p.lambda() * p.eps();
    let mut sup_u = f64::NEG_INFINITY;
    let mut inner_nodes = Vec::new();
    for i in 0..lat.len() {
        let x = lat.coords(i);
        let r = norm(&x);
        if r < inner {
            sup_u = sup_u.max(u.value(i));
            inner_nodes.push(i);
        } else if r < reach && u.value(i) > residual_tol {
            return Err(EnvelopeError::Precondition(format!("u = {} > 0 at |x| = {r}", u.value(i))));
        }
    }
    let min_residual = inner_nodes
        .par_iter()
        .map(|&i| {
            let x = lat.coords(i);
            Ok(apply_l_plus(ctx, net, u, &x)?.value + f.eval(&x)?)
        })
        .collect::<Result<Vec<f64>, EnvelopeError>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_residual < -residual_tol {
        return Err(EnvelopeError::Precondition(format!("L⁺u + f = {min_residual} below −{residual_tol}")));
    }
    let res = envelope_pipeline(u, p.eps(), p.lambda(), method, tol_contact)?;
    let rhs = abp_rhs(f, &res.cover, &res.cube_grid, Some(lat))?;
    let degenerate = sup_u <= 0.0 && rhs == 0.0;
    let audit = AbpAudit {
        sup_u,
        rhs,
        ratio: (!degenerate && rhs > 0.0).then(|| sup_u / rhs),
        degenerate,
        contact_nodes: res.contact.iter().filter(|&&c| c).count(),
        cover_cubes: res.cover.len(),
        min_residual,
    };
    Ok((audit, res))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodReport {
    /// Lattice measure of `{y ∈ B_{ε/4}(x₀) : Γ(y) − u(y) ≤ C f(x₀) ε²}`.
    pub measure: f64,
    /// Lattice measure of `B_{ε/4}(x₀)`.
    pub ball_measure: f64,
    pub ratio: f64,
    /// `|B_{ε/4}|(1 − 4ᴺ/(Cβ))`, exact ball volume.
    pub predicted: f64,
    /// `|B_{ε/4}|` minus its lattice measure.
    pub lattice_slack: f64,
    pub pass: bool,
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    use std::f64::consts::PI;
    match dim {
        0 => 1.0,
        1 => 2.0,
        n => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Measure of the sublevel set of `Γ − u` near a contact node.
pub fn contact_neighborhood_estimate(
    u: &GridFunction,
    res: &EnvelopeResult,
    x0: usize,
    c_const: f64,
    f_x0: f64,
    eps: f64,
    beta: f64,
) -> Result<NeighborhoodReport, EnvelopeError> {
    if !res.contact.get(x0).copied().unwrap_or(false) {
        return Err(EnvelopeError::NotContact(x0));
    }
    let lat = u.lattice();
    let dim = lat.dim();
    let hn = lat.spacing().powi(dim as i32);
    let center = lat.coords(x0);
    let cut = c_const * f_x0 * eps * eps;
    let (mut count, mut total) = (0usize, 0usize);
    for (i, p) in lat.nodes() {
        if crate::lattice::dist(&p, &center) < eps / 4.0 {
            total += 1;
            if res.envelope.gamma[i] - u.value(i) <= cut {
                count += 1;
            }
        }
    }
    let exact = unit_ball_volume(dim) * (eps / 4.0).powi(dim as i32);
    let predicted = exact * (1.0 - 4f64.powi(dim as i32) / (c_const * beta));
    let measure = count as f64 * hn;
    let lattice_slack = exact - total as f64 * hn;
    Ok(NeighborhoodReport {
        measure,
        ball_measure: total as f64 * hn,
        ratio: measure / eps.powi(dim as i32),
        predicted,
        lattice_slack,
        pass: measure >= predicted - lattice_slack.abs(),
    })
}

/// Corollary-style variant over the dilated cube `3√N·Q`, relative to |Q|.
pub fn cube_neighborhood_ratio(u: &GridFunction, res: &EnvelopeResult, cube: &CubeIndex, c_const: f64, sup_f: f64, eps: f64) -> f64 {
    let lat = u.lattice();
    let dim = lat.dim();
    let grid = &res.cube_grid;
    let center = grid.center(cube);
    let half = 1.5 * (dim as f64).sqrt() * grid.side();
    let cut = c_const * sup_f * eps * eps;
    let count = lat
        .nodes()
        .filter(|(i, p)| p.iter().zip(&center).all(|(a, b)| (a - b).abs() <= half) && res.envelope.gamma[*i] - u.value(*i) <= cut)
        .count();
    count as f64 * lat.spacing().powi(dim as i32) / grid.volume()
}
