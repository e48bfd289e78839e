//! Radial barriers for `L_ε⁻`: the scalar inequality behind them, the global
//! barrier `Ψ = A(1+|x|²)^{−σ} − B`, the annular barrier around a ball, and
//! the infimum decay check that the annular barrier yields.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{dist, norm, GridFunction, Point};
use crate::measures::DirectionNet;
use crate::operators::{apply_l_minus, OperatorContext, OperatorError};

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("inequality needs a, b > 0, σ > 0 and |c| < a + b")]
    Inadmissible,
    #[error("ε = {eps} exceeds ε₀ = {eps0}")]
    EpsilonTooLarge { eps: f64, eps0: f64 },
    #[error("radius {r} must lie in (κε, 1) = ({min}, 1)")]
    Radius { r: f64, min: f64 },
    #[error("sample {0:?} is outside the annulus")]
    SampleOutside(Point),
    #[error("infimum must be nonnegative, got {0}")]
    NegativeInfimum(f64),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbcValue {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `(a+b+c)^{−σ} + (a+b−c)^{−σ} − 2a^{−σ}` against
/// `2σa^{−σ−1}[−b + ((σ+1)/2)(1 − (σ+2)b/a)c²/a]`.
pub fn abc_inequality(a: f64, b: f64, c: f64, sigma: f64) -> Result<AbcValue, BarrierError> {
    if !(a > 0.0 && b > 0.0 && sigma > 0.0 && c.abs() < a + b) {
        return Err(BarrierError::Inadmissible);
    }
    let p = |t: f64| t.powf(-sigma);
    let (plus, minus, mid) = (p(a + b + c), p(a + b - c), p(a));
    let lhs = plus + minus - 2.0 * mid;
    let rhs = 2.0 * sigma * a.powf(-sigma - 1.0) * (-b + (sigma + 1.0) / 2.0 * (1.0 - (sigma + 2.0) * b / a) * c * c / a);
    let scale = plus + minus + 2.0 * mid + rhs.abs();
    Ok(AbcValue {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12 * scale,
    })
}

/// Smallest σ on the ladder 1, 2, 4, … with `Λ² − β(σ+1)/(k(N+2)) ≤ 0`.
fn doubling_sigma(dim: usize, lambda: f64, beta: f64, k: f64) -> f64 {
    let mut sigma = 1.0;
    while lambda * lambda - beta * (sigma + 1.0) / (k * (dim as f64 + 2.0)) > 0.0 {
        sigma *= 2.0;
    }
    sigma
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalBarrier {
    pub dim: usize,
    pub lambda: f64,
    pub beta: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    /// `ln A`, finite even when A overflows.
    pub log_a: f64,
    pub eps0: f64,
}

pub fn build_global_barrier(dim: usize, lambda: f64, beta: f64) -> GlobalBarrier {
    let sigma = doubling_sigma(dim, lambda, beta, 17.0);
    let n = dim as f64;
    let ratio = ((1.0 + 2.25 * n) / (1.0 + 4.0 * n)).powf(sigma);
    let log_a = 2f64.ln() + sigma * (1.0 + 2.25 * n).ln() - (-ratio).ln_1p();
    let log_b = log_a - sigma * (1.0 + 4.0 * n).ln();
    GlobalBarrier {
        dim,
        lambda,
        beta,
        sigma,
        a: log_a.exp(),
        b: log_b.exp(),
        log_a,
        eps0: 1.0 / (lambda * (2.0 * (sigma + 2.0)).sqrt()),
    }
}

impl GlobalBarrier {
    /// `A·q^{−p}` evaluated in log space.
    fn a_pow(&self, q: f64, p: f64) -> f64 {
        (self.log_a - p * q.ln()).exp()
    }

    pub fn psi_big(&self, x: &[f64]) -> f64 {
        self.profile(norm(x))
    }

    /// Radial profile `Ψ(r)`.
    pub fn profile(&self, r: f64) -> f64 {
        self.a_pow(1.0 + r * r, self.sigma) - self.b
    }

    /// `ψ(r) = Aσ(1+r²)^{−σ−1}[Λ² − β((σ+1)/(N+2))·r²/(1+r²)]`.
    pub fn psi_small_radial(&self, r: f64) -> f64 {
        let q = 1.0 + r * r;
        self.sigma * self.a_pow(q, self.sigma + 1.0) * (self.lambda * self.lambda - self.beta * (self.sigma + 1.0) / (self.dim as f64 + 2.0) * r * r / q)
    }

    pub fn psi_small(&self, x: &[f64]) -> f64 {
        self.psi_small_radial(norm(x))
    }

    /// Size of the bracketed terms at radius r, used to normalize margins.
    fn scale(&self, r: f64) -> f64 {
        let q = 1.0 + r * r;
        self.sigma * self.a_pow(q, self.sigma + 1.0) * (self.lambda * self.lambda + self.sigma + 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierReport {
    pub samples: usize,
    /// Smallest `L_ε⁻Ψ + ψ` over the samples.
    pub min_margin: f64,
    /// Smallest margin divided by the local size of the barrier terms.
    pub min_relative_margin: f64,
    pub worst_point: Point,
    /// Declared tolerance, relative to the same local size.
    pub tol_barrier: f64,
    /// Smallest `L_ε⁻Ψ` over the samples.
    pub min_l_minus: f64,
    pub net_resolution: f64,
    pub moment_error: f64,
    pub pass: bool,
}

/// Relative error of the ball quadrature's diagonal second moments against
/// `1/(N+2)`.
fn moment_error(ctx: &OperatorContext) -> f64 {
    let n = ctx.dim();
    let m = ctx.ball().second_moments();
    (0..n).map(|a| (m[(a, a)] * (n as f64 + 2.0) - 1.0).abs()).fold(0.0, f64::max)
}

/// Deterministic uniform samples from `B_radius` in ℝᴺ, the origin first.
pub fn ball_samples(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; dim]];
    while out.len() < count {
        let p: Point = (0..dim).map(|_| rng.gen_range(-radius..radius)).collect();
        if norm(&p) < radius {
            out.push(p);
        }
    }
    out
}

struct Sampled {
    margin: f64,
    relative: f64,
    l_minus: f64,
}

fn aggregate(samples: &[Point], values: Vec<Sampled>, tol: f64, net: &DirectionNet, moment: f64) -> BarrierReport {
    let mut worst = 0;
    for (k, v) in values.iter().enumerate() {
        if v.relative < values[worst].relative {
            worst = k;
        }
    }
    let min_margin = values.iter().map(|v| v.margin).fold(f64::INFINITY, f64::min);
    let min_l_minus = values.iter().map(|v| v.l_minus).fold(f64::INFINITY, f64::min);
    let min_relative_margin = values[worst].relative;
    BarrierReport {
        samples: samples.len(),
        min_margin,
        min_relative_margin,
        worst_point: samples[worst].clone(),
        tol_barrier: tol,
        min_l_minus,
        net_resolution: net.resolution(),
        moment_error: moment,
        pass: min_relative_margin >= -tol,
    }
}

/// Evaluates `L_ε⁻Ψ + ψ` at each sample with Ψ in closed form. The net
/// lies in the closed ball, so its infimum can only overestimate; the
/// tolerance covers the ball quadrature's moment error and roundoff.
pub fn verify_global_barrier(b: &GlobalBarrier, ctx: &OperatorContext, net: &DirectionNet, samples: &[Point]) -> Result<BarrierReport, BarrierError> {
    let eps = ctx.params().eps();
    if eps > b.eps0 * (1.0 + 1e-12) {
        return Err(BarrierError::EpsilonTooLarge { eps, eps0: b.eps0 });
    }
    let field = (b.dim, |p: &[f64]| b.psi_big(p));
    let values = samples
        .par_iter()
        .map(|x| {
            let l = apply_l_minus(ctx, net, &field, x)?.value;
            let margin = l + b.psi_small(x);
            Ok(Sampled {
                margin,
                relative: margin / b.scale(norm(x)),
                l_minus: l,
            })
        })
        .collect::<Result<Vec<_>, OperatorError>>()?;
    let moment = moment_error(ctx);
    let tol = ctx.params().beta() * (b.sigma + 2.0) * moment + 1e-9;
    Ok(aggregate(samples, values, tol, net, moment))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnularBarrier {
    pub dim: usize,
    pub center: Point,
    pub r: f64,
    pub eps: f64,
    pub lambda: f64,
    pub beta: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub eps0: f64,
    pub u_inf: f64,
    /// Coefficient of `|x−z|^{−2σ}`.
    pub a: f64,
}

/// σ with `Λ² − β(σ+1)/(N+2) ≤ 0`, the proof's `κ = Λ√(2(σ+2))` and
/// `ε₀ = 0.99/κ`.
pub fn annular_constants(dim: usize, lambda: f64, beta: f64) -> (f64, f64, f64) {
    let sigma = doubling_sigma(dim, lambda, beta, 1.0);
    let kappa = lambda * (2.0 * (sigma + 2.0)).sqrt();
    (sigma, kappa, 0.99 / kappa)
}

pub fn build_annular_barrier(center: Point, r: f64, eps: f64, lambda: f64, beta: f64, u_inf: f64) -> Result<AnnularBarrier, BarrierError> {
    let dim = center.len();
    let (sigma, kappa, eps0) = annular_constants(dim, lambda, beta);
    if eps > eps0 {
        return Err(BarrierError::EpsilonTooLarge { eps, eps0 });
    }
    if !(r > kappa * eps && r < 1.0) {
        return Err(BarrierError::Radius { r, min: kappa * eps });
    }
    if !(u_inf >= 0.0) {
        return Err(BarrierError::NegativeInfimum(u_inf));
    }
    let s2 = 2.0 * sigma;
    let a = u_inf / ((r - lambda * eps).powf(-s2) - 4f64.powf(-s2));
    Ok(AnnularBarrier {
        dim,
        center,
        r,
        eps,
        lambda,
        beta,
        sigma,
        kappa,
        eps0,
        u_inf,
        a,
    })
}

/// `1 − (σ+2)Λ²ε²/r²`, which is ½ at `r = κε`.
pub fn annular_factor(sigma: f64, lambda: f64, eps: f64, r: f64) -> f64 {
    1.0 - (sigma + 2.0) * lambda * lambda * eps * eps / (r * r)
}

impl AnnularBarrier {
    pub fn profile(&self, rho: f64) -> f64 {
        let s2 = 2.0 * self.sigma;
        self.a * (rho.powf(-s2) - 4f64.powf(-s2))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.profile(dist(x, &self.center))
    }

    /// `ψ = Aσ|x−z|^{−2σ−2}[Λ² − β(σ+1)/(N+2)]`.
    pub fn psi_small(&self, x: &[f64]) -> f64 {
        let d = dist(x, &self.center);
        self.a * self.sigma * d.powf(-2.0 * self.sigma - 2.0) * (self.lambda * self.lambda - self.beta * (self.sigma + 1.0) / (self.dim as f64 + 2.0))
    }

    fn scale(&self, d: f64) -> f64 {
        self.a * self.sigma * d.powf(-2.0 * self.sigma - 2.0) * (self.lambda * self.lambda + self.sigma + 1.0)
    }
}

/// Samples in the annulus `r < |x − z| < 4`, with a ring just outside r.
pub fn annulus_samples(b: &AnnularBarrier, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dim = b.dim;
    let ring = count / 4;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut dir: Point = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&dir);
        if !(n > 1e-3 && n <= 1.0) {
            continue;
        }
        dir.iter_mut().for_each(|c| *c /= n);
        let rho = if out.len() < ring {
            b.r * (1.0 + 1e-3 + 0.05 * rng.gen::<f64>())
        } else {
            rng.gen_range(b.r..4.0)
        };
        if rho <= b.r {
            continue;
        }
        out.push(b.center.iter().zip(&dir).map(|(z, d)| z + rho * d).collect());
    }
    out
}

pub fn verify_annular_barrier(b: &AnnularBarrier, ctx: &OperatorContext, net: &DirectionNet, samples: &[Point]) -> Result<BarrierReport, BarrierError> {
    for x in samples {
        let d = dist(x, &b.center);
        if !(d > b.r && d < 4.0) {
            return Err(BarrierError::SampleOutside(x.clone()));
        }
    }
    let field = (b.dim, |p: &[f64]| b.value(p));
    let values = samples
        .par_iter()
        .map(|x| {
            let l = apply_l_minus(ctx, net, &field, x)?.value;
            let margin = l + b.psi_small(x);
            Ok(Sampled {
                margin,
                relative: margin / b.scale(dist(x, &b.center)),
                l_minus: l,
            })
        })
        .collect::<Result<Vec<_>, OperatorError>>()?;
    let moment = moment_error(ctx);
    let tol = ctx.params().beta() * (b.sigma + 2.0) * moment + 1e-9;
    Ok(aggregate(samples, values, tol, net, moment))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayRow {
    pub r: f64,
    pub inf_ball: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub sigma: f64,
    pub kappa: f64,
    pub c_const: f64,
    /// Shift constant with `1 − Aβ·N/(N+2) = 0`.
    pub shift_a: f64,
    pub rho: f64,
    pub inf_unit_ball: f64,
    pub rows: Vec<DecayRow>,
    pub pass: bool,
}

/// `C = (3^{−2σ} − 4^{−2σ})^{−1}·2^{2σ}`.
pub fn decay_constant(sigma: f64) -> f64 {
    let s2 = 2.0 * sigma;
    2f64.powf(s2) / (3f64.powf(-s2) - 4f64.powf(-s2))
}

fn inf_over_ball(u: &GridFunction, center: &[f64], r: f64) -> Option<f64> {
    u.lattice()
        .nodes()
        .filter(|(_, p)| dist(p, center) < r)
        .map(|(i, _)| u.value(i))
        .reduce(f64::min)
}

/// Checks `inf_{B_r(z)} u ≤ C(r^{−2σ} inf_{B₁} u) + 9Aρ` on a ladder of radii.
/// `rho` is an upper bound for `L_ε⁻u` in `B₇` established by the caller.
pub fn infimum_decay_check(u: &GridFunction, z: &[f64], radii: &[f64], eps: f64, lambda: f64, beta: f64, rho: f64) -> Result<DecayReport, BarrierError> {
    let dim = z.len();
    if let Some(i) = u.values().iter().position(|&v| v < 0.0) {
        return Err(BarrierError::Precondition(format!("u < 0 at node {i}")));
    }
    let (sigma, kappa, _) = annular_constants(dim, lambda, beta);
    let c_const = decay_constant(sigma);
    let shift_a = (dim as f64 + 2.0) / (beta * dim as f64);
    let origin = vec![0.0; dim];
    let inf_unit_ball = inf_over_ball(u, &origin, 1.0).ok_or_else(|| BarrierError::Precondition("no nodes in B₁".into()))?;
    let mut rows = Vec::new();
    for &r in radii {
        if !(r > kappa * eps && r < 1.0) {
            return Err(BarrierError::Radius { r, min: kappa * eps });
        }
        let inf_ball = inf_over_ball(u, z, r).ok_or_else(|| BarrierError::Precondition(format!("no nodes in B_{r}")))?;
        let bound = c_const * r.powf(-2.0 * sigma) * inf_unit_ball + 9.0 * shift_a * rho.max(0.0);
        rows.push(DecayRow {
            r,
            inf_ball,
            bound,
            pass: inf_ball <= bound,
        });
    }
    Ok(DecayReport {
        sigma,
        kappa,
        c_const,
        shift_a,
        rho,
        inf_unit_ball,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::operators::OperatorParams;
    use proptest::prelude::*;

    #[test]
    fn abc_examples() {
        let v = abc_inequality(2.0, 0.1, 0.5, 1.0).unwrap();
        let lhs = 1.0 / 2.6 + 1.0 / 1.6 - 1.0;
        assert!((v.lhs - lhs).abs() < 1e-15 && (v.lhs - 0.009615).abs() < 1e-6);
        assert!((v.rhs - 0.003125).abs() < 1e-15);
        assert!(v.holds);
        let d = abc_inequality(1.0, 1e-15, 0.0, 3.0).unwrap();
        assert!(d.lhs.abs() < 1e-13 && d.rhs.abs() < 1e-13 && d.holds);
        assert!(abc_inequality(1.0, 1.0, 2.5, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn abc_holds(la in -6.0f64..6.0, lb in -6.0f64..6.0, t in -0.999f64..0.999, sigma in 0.01f64..10.0) {
            let (a, b) = (10f64.powf(la), 10f64.powf(lb));
            let v = abc_inequality(a, b, t * (a + b), sigma).unwrap();
            prop_assert!(v.holds, "{a} {b} {t} {sigma}: {v:?}");
        }
    }

    #[test]
    fn global_barrier_constants() {
        let b = build_global_barrier(1, 1.0, 1.0);
        assert_eq!(b.sigma, 64.0);
        assert!((b.eps0 - 1.0 / 132f64.sqrt()).abs() < 1e-15);
        for dim in [1usize, 2, 3] {
            let b = build_global_barrier(dim, 1.5, 0.5);
            let n = dim as f64;
            assert!((b.profile(1.5 * n.sqrt()) - 2.0).abs() < 1e-9, "{b:?}");
            assert!(b.profile(2.0 * n.sqrt()).abs() <= 1e-9);
            let peak = b.psi_small_radial(0.0);
            if peak.is_finite() {
                assert!((peak - b.a * b.sigma * 2.25).abs() <= 1e-9 * peak);
            }
            for k in 0..10_000 {
                let r = 0.25 + 10.0 * k as f64 / 10_000.0;
                assert!(b.psi_small_radial(r) <= 0.0);
            }
        }
    }

    #[test]
    fn global_barrier_verifies_in_one_dimension() {
        let b = build_global_barrier(1, 1.0, 1.0);
        let net = DirectionNet::new(1, 1.0, 0.01).unwrap();
        let samples = ball_samples(1, 2.0, 200, 3);
        for eps in [b.eps0, b.eps0 / 2.0] {
            let ctx = OperatorContext::new(OperatorParams::new(1.0, eps, 1.0).unwrap(), 1, eps / 20.0).unwrap();
            let rep = verify_global_barrier(&b, &ctx, &net, &samples).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
        let ctx = OperatorContext::new(OperatorParams::new(1.0, 0.2, 1.0).unwrap(), 1, 0.01).unwrap();
        assert!(matches!(verify_global_barrier(&b, &ctx, &net, &samples), Err(BarrierError::EpsilonTooLarge { .. })));
    }

    #[test]
    fn annular_barrier_boundary_values() {
        let (sigma, kappa, eps0) = annular_constants(1, 1.0, 1.0);
        assert_eq!(sigma, 2.0);
        assert!((kappa - 8f64.sqrt()).abs() < 1e-15);
        let eps = eps0 / 2.0;
        let b = build_annular_barrier(vec![0.5], 0.6, eps, 1.0, 1.0, 3.0).unwrap();
        assert!((b.profile(0.6 - eps) - 3.0).abs() < 1e-12);
        assert_eq!(b.profile(4.0), 0.0);
        let mut prev = f64::INFINITY;
        for k in 0..1000 {
            let v = b.profile(0.6 - eps + (4.0 - 0.6 + eps) * k as f64 / 999.0);
            assert!(v < prev);
            prev = v;
        }
        assert!((annular_factor(sigma, 1.0, eps, kappa * eps) - 0.5).abs() < 1e-15);
        assert!((annular_factor(sigma, 1.0, eps, 2.0 * kappa * eps) - 0.875).abs() < 1e-15);
        assert!(matches!(build_annular_barrier(vec![0.0], kappa * eps * 0.9, eps, 1.0, 1.0, 1.0), Err(BarrierError::Radius { .. })));
    }

    #[test]
    fn annular_barrier_verifies() {
        for (dim, lambda, beta) in [(1usize, 1.0, 1.0), (2, 1.2, 0.6)] {
            let (_, kappa, eps0) = annular_constants(dim, lambda, beta);
            let eps = eps0 / 2.0;
            let mut z = vec![0.0; dim];
            z[0] = 0.3;
            let b = build_annular_barrier(z, (kappa * eps * 1.5).min(0.9), eps, lambda, beta, 1.0).unwrap();
            let ctx = OperatorContext::new(OperatorParams::new(beta, eps, lambda).unwrap(), dim, eps / 10.0).unwrap();
            let net = DirectionNet::new(dim, lambda, 0.1).unwrap();
            let rep = verify_annular_barrier(&b, &ctx, &net, &annulus_samples(&b, 100, 1)).unwrap();
            assert!(rep.pass, "{rep:?}");
            assert!(rep.min_l_minus >= -rep.tol_barrier);
        }
    }

    #[test]
    fn decay_for_constant_function() {
        let lat = Lattice::covering(&[-1.5, -1.5], &[1.5, 1.5], 0.05).unwrap();
        let u = GridFunction::from_fn(lat, |_| 2.0).unwrap();
        let (_, kappa, eps0) = annular_constants(2, 1.0, 1.0);
        let eps = eps0 / 2.0;
        let rep = infimum_decay_check(&u, &[0.2, 0.0], &[kappa * eps + 0.05, 0.7, 0.9], eps, 1.0, 1.0, 0.0).unwrap();
        assert!(rep.pass);
        assert!(rep.rows.iter().all(|r| r.bound / r.inf_ball >= 1.0));
        assert_eq!(rep.sigma, 4.0);
        assert!((rep.c_const / (256.0 / (1.0 / 6561.0 - 1.0 / 65536.0)) - 1.0).abs() < 1e-12);
    }
}
