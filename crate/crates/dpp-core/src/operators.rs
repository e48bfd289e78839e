//! Second differences, the DPP operator `L_ε`, the extremal operators
//! `L_ε^±`, the Pucci-type `P_ε^+`, controlled averages and the limit matrix.
//!
//! Every operator divides by ε² only after the convex combination has been
//! summed.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::lattice::{Field, LatticeError, Point};
use crate::measures::{uniform_ball_quadrature, DirectionNet, MeasureError, MeasureFamily, Quadrature};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("β must lie in (0, 1], got {0}")]
    Beta(f64),
    #[error("ε must be positive, got {0}")]
    Epsilon(f64),
    #[error("Λ must be ≥ 1, got {0}")]
    Lambda(f64),
    #[error("direction net is empty")]
    EmptyNet,
    #[error("control catalog is empty")]
    EmptyCatalog,
    #[error("matrix {index} of the Pucci net is outside I ≤ A ≤ ΛI")]
    MatrixOutOfRange { index: usize },
    #[error(transparent)]
    Field(#[from] LatticeError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `α = 1 − β`, step ε and ellipticity bound Λ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorParams {
    alpha: f64,
    beta: f64,
    eps: f64,
    lambda: f64,
}

impl OperatorParams {
    pub fn new(beta: f64, eps: f64, lambda: f64) -> Result<Self, OperatorError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(OperatorError::Beta(beta));
        }
        if !(eps > 0.0) {
            return Err(OperatorError::Epsilon(eps));
        }
        if !(lambda >= 1.0) {
            return Err(OperatorError::Lambda(lambda));
        }
        Ok(Self {
            alpha: 1.0 - beta,
            beta,
            eps,
            lambda,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_eps(self, eps: f64) -> Result<Self, OperatorError> {
        Self::new(self.beta, eps, self.lambda)
    }
}

/// Parameters plus the ball quadrature used for every β-mean.
#[derive(Clone, Debug)]
pub struct OperatorContext {
    params: OperatorParams,
    ball: Quadrature,
    dim: usize,
}

impl OperatorContext {
    pub fn new(params: OperatorParams, dim: usize, spacing: f64) -> Result<Self, OperatorError> {
        let ball = uniform_ball_quadrature(dim, params.eps, spacing)?;
        Ok(Self { params, ball, dim })
    }

    pub fn params(&self) -> &OperatorParams {
        &self.params
    }

    pub fn ball(&self) -> &Quadrature {
        &self.ball
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn shifted(x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(z) {
        *o = a + scale * b;
    }
}

/// `δu(x, y) = u(x+y) + u(x−y) − 2u(x)`.
pub fn delta_u<F: Field + ?Sized>(u: &F, x: &[f64], y: &[f64]) -> Result<f64, LatticeError> {
    let mut p = vec![0.0; x.len()];
    shifted(x, y, 1.0, &mut p);
    let plus = u.eval(&p)?;
    shifted(x, y, -1.0, &mut p);
    let minus = u.eval(&p)?;
    Ok(plus + minus - 2.0 * u.eval(x)?)
}

/// Sums of `(u(x+εz) + u(x−εz))/2` and of `δu(x, εz)` over a quadrature,
/// weighted by mass and divided by the denominator.
struct PairSums {
    average: f64,
    second_difference: f64,
    magnitude: f64,
}

fn pair_sums<F: Field + ?Sized>(u: &F, x: &[f64], q: &Quadrature, eps: f64, ux: f64) -> Result<PairSums, LatticeError> {
    let mut p = vec![0.0; x.len()];
    let (mut avg, mut del, mut mag) = (0.0, 0.0, 0.0);
    for pair in q.pairs() {
        shifted(x, &pair.offset, eps, &mut p);
        let plus = u.eval(&p)?;
        shifted(x, &pair.offset, -eps, &mut p);
        let minus = u.eval(&p)?;
        let m = pair.mass as f64;
        avg += m * (plus + minus) / 2.0;
        del += m * (plus + minus - 2.0 * ux);
        mag += m * (plus.abs() + minus.abs() + 2.0 * ux.abs());
    }
    let d = q.denominator() as f64;
    Ok(PairSums {
        average: avg / d,
        second_difference: del / d,
        magnitude: mag / d,
    })
}

/// `L_ε u(x)` in the direct form and in the symmetric second-difference form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LValue {
    pub direct: f64,
    pub delta_form: f64,
    /// Size of the summands before cancellation, divided by ε².
    pub scale: f64,
}

pub fn apply_l<F: Field + ?Sized>(ctx: &OperatorContext, family: &MeasureFamily, u: &F, x: &[f64]) -> Result<LValue, OperatorError> {
    let OperatorParams {
        alpha, beta, eps, ..
    } = ctx.params;
    let ux = u.eval(x)?;
    let nu = pair_sums(u, x, family.quadrature_at(x), eps, ux)?;
    let ball = pair_sums(u, x, &ctx.ball, eps, ux)?;
    let e2 = eps * eps;
    let direct = (alpha * nu.average + beta * ball.average - ux) / e2;
    let delta_form = (alpha * nu.second_difference + beta * ball.second_difference) / (2.0 * e2);
    Ok(LValue {
        direct,
        delta_form,
        scale: (alpha * nu.magnitude + beta * ball.magnitude) / e2,
    })
}

/// Value of an extremal operator with the direction (or matrix) that attains
/// it and the net resolution it is exact up to.
#[derive(Clone, Debug, PartialEq)]
pub struct Extremal {
    pub value: f64,
    pub arg: Point,
    pub resolution: f64,
}

fn ball_delta_mean<F: Field + ?Sized>(ctx: &OperatorContext, u: &F, x: &[f64], ux: f64) -> Result<f64, LatticeError> {
    Ok(pair_sums(u, x, &ctx.ball, ctx.params.eps, ux)?.second_difference)
}

fn extremal<F: Field + ?Sized>(ctx: &OperatorContext, net: &DirectionNet, u: &F, x: &[f64], upper: bool) -> Result<Extremal, OperatorError> {
    if net.is_empty() {
        return Err(OperatorError::EmptyNet);
    }
    let OperatorParams {
        alpha, beta, eps, ..
    } = ctx.params;
    let ux = u.eval(x)?;
    let mut best = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut arg = net.points()[0].clone();
    let mut p = vec![0.0; x.len()];
    for z in net.points() {
        shifted(x, z, eps, &mut p);
        let plus = u.eval(&p)?;
        shifted(x, z, -eps, &mut p);
        let minus = u.eval(&p)?;
        let d = plus + minus - 2.0 * ux;
        if (upper && d > best) || (!upper && d < best) {
            best = d;
            arg = z.clone();
        }
    }
    let mean = ball_delta_mean(ctx, u, x, ux)?;
    Ok(Extremal {
        value: (alpha * best + beta * mean) / (2.0 * eps * eps),
        arg,
        resolution: net.resolution(),
    })
}

/// `L_ε^+ u(x)` with the sup over the net.
pub fn apply_l_plus<F: Field + ?Sized>(ctx: &OperatorContext, net: &DirectionNet, u: &F, x: &[f64]) -> Result<Extremal, OperatorError> {
    extremal(ctx, net, u, x, true)
}

/// `L_ε^- u(x)` with the inf over the net.
pub fn apply_l_minus<F: Field + ?Sized>(ctx: &OperatorContext, net: &DirectionNet, u: &F, x: &[f64]) -> Result<Extremal, OperatorError> {
    extremal(ctx, net, u, x, false)
}

/// Finite set of symmetric matrices with `I ≤ A ≤ ΛI`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixNet {
    matrices: Vec<DMatrix<f64>>,
}

impl MatrixNet {
    pub fn new(matrices: Vec<DMatrix<f64>>, lambda: f64) -> Result<Self, OperatorError> {
        if matrices.is_empty() {
            return Err(OperatorError::EmptyNet);
        }
        for (index, a) in matrices.iter().enumerate() {
            let eig = SymmetricEigen::new(a.clone()).eigenvalues;
            let asym = (a - a.transpose()).amax();
            if asym > 1e-12 || eig.iter().any(|&e| e < 1.0 - 1e-12 || e > lambda + 1e-12) {
                return Err(OperatorError::MatrixOutOfRange { index });
            }
        }
        Ok(Self { matrices })
    }

    /// Diagonal matrices with entries on the geometric ladder
    /// `Λ^{j/(levels−1)}`, `j = 0..levels`.
    pub fn diagonal_ladder(dim: usize, lambda: f64, levels: usize) -> Result<Self, OperatorError> {
        let levels = levels.max(2);
        let ladder: Vec<f64> = (0..levels)
            .map(|j| lambda.powf(j as f64 / (levels - 1) as f64))
            .collect();
        let mut matrices = Vec::new();
        let total = levels.pow(dim as u32);
        for mut flat in 0..total {
            let mut diag = vec![0.0; dim];
            for d in diag.iter_mut().rev() {
                *d = ladder[flat % levels];
                flat /= levels;
            }
            matrices.push(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)));
        }
        Self::new(matrices, lambda)
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }
}

/// `P_ε^+ u(x) = (1/2ε²) sup_A ⨍_{B₁} δu(x, εAy) dy` over the matrix net.
/// The returned `arg` is the diagonal of the maximizing matrix.
pub fn apply_pucci_plus<F: Field + ?Sized>(ctx: &OperatorContext, net: &MatrixNet, u: &F, x: &[f64]) -> Result<Extremal, OperatorError> {
    let eps = ctx.params.eps;
    let ux = u.eval(x)?;
    let mut best = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    let mut ay = vec![0.0; x.len()];
    let mut p = vec![0.0; x.len()];
    for a in net.matrices() {
        let mut acc = 0.0;
        for pair in ctx.ball.pairs() {
            for (i, out) in ay.iter_mut().enumerate() {
                *out = (0..x.len()).map(|j| a[(i, j)] * pair.offset[j]).sum();
            }
            shifted(x, &ay, eps, &mut p);
            let plus = u.eval(&p)?;
            shifted(x, &ay, -eps, &mut p);
            let minus = u.eval(&p)?;
            acc += pair.mass as f64 * (plus + minus - 2.0 * ux);
        }
        let mean = acc / ctx.ball.denominator() as f64;
        if mean > best {
            best = mean;
            arg = a.diagonal().iter().copied().collect();
        }
    }
    Ok(Extremal {
        value: best / (2.0 * eps * eps),
        arg,
        resolution: 0.0,
    })
}

/// Nonlinear α-terms of the controlled DPPs.
#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    /// `sup_{|v| ≤ Λ} (u(x+εv) + u(x−εv))/2` over a net.
    SupPair(DirectionNet),
    /// `(sup_{B_ε(x)} u + inf_{B_ε(x)} u)/2` over the lattice nodes of the
    /// ball quadrature.
    TugOfWar,
    /// `sup_V inf_{v∈V} (u(x+εv) + u(x−εv))/2` over a catalog of direction
    /// sets.
    Isaacs(Vec<Vec<Point>>),
}

/// α-term of the control plus the β-mean, without the source.
pub fn controlled_average<F: Field + ?Sized>(ctx: &OperatorContext, control: &Control, u: &F, x: &[f64]) -> Result<f64, OperatorError> {
    let OperatorParams {
        alpha, beta, eps, ..
    } = ctx.params;
    let ux = u.eval(x)?;
    let mut p = vec![0.0; x.len()];
    let mut pair_avg = |z: &[f64]| -> Result<f64, LatticeError> {
        shifted(x, z, eps, &mut p);
        let a = u.eval(&p)?;
        shifted(x, z, -eps, &mut p);
        Ok((a + u.eval(&p)?) / 2.0)
    };
    let control_term = match control {
        Control::SupPair(net) => {
            if net.is_empty() {
                return Err(OperatorError::EmptyNet);
            }
            let mut best = f64::NEG_INFINITY;
            for z in net.points() {
                best = best.max(pair_avg(z)?);
            }
            best
        }
        Control::TugOfWar => {
            let (mut hi, mut lo) = (ux, ux);
            let mut q = vec![0.0; x.len()];
            for pair in ctx.ball.pairs() {
                for s in [eps, -eps] {
                    shifted(x, &pair.offset, s, &mut q);
                    let v = u.eval(&q)?;
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
            }
            (hi + lo) / 2.0
        }
        Control::Isaacs(catalog) => {
            if catalog.is_empty() || catalog.iter().any(|v| v.is_empty()) {
                return Err(OperatorError::EmptyCatalog);
            }
            let mut best = f64::NEG_INFINITY;
            for set in catalog {
                let mut worst = f64::INFINITY;
                for z in set {
                    worst = worst.min(pair_avg(z)?);
                }
                best = best.max(worst);
            }
            best
        }
    };
    let ball = pair_sums(u, x, &ctx.ball, eps, ux)?;
    Ok(alpha * control_term + beta * ball.average)
}

/// `A(x) = (α/2)∫ z⊗z dν_x + (β/(2(N+2))) I` with its eigenvalue band.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitMatrix {
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub within_band: bool,
}

fn limit_from(matrix: DMatrix<f64>, params: &OperatorParams) -> LimitMatrix {
    let n = matrix.nrows() as f64;
    let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
    let min_eigenvalue = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max_eigenvalue = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower_bound = params.beta / (2.0 * (n + 2.0));
    let upper_bound = params.alpha * params.lambda * params.lambda / 2.0 + lower_bound;
    let slack = 1e-12 * upper_bound;
    LimitMatrix {
        within_band: min_eigenvalue >= lower_bound - slack && max_eigenvalue <= upper_bound + slack,
        matrix,
        min_eigenvalue,
        max_eigenvalue,
        lower_bound,
        upper_bound,
    }
}

pub fn limit_matrix(family: &MeasureFamily, params: &OperatorParams, x: &[f64]) -> LimitMatrix {
    let q = family.quadrature_at(x);
    let n = q.dim();
    let m = q.second_moments() * (params.alpha / 2.0)
        + DMatrix::identity(n, n) * (params.beta / (2.0 * (n as f64 + 2.0)));
    limit_from(m, params)
}

/// Limit matrix with the β-part taken from the discrete ball quadrature, so
/// that `L_ε q = Tr(D²q·A)` holds exactly for quadratic `q` on the lattice.
pub fn limit_matrix_discrete(ctx: &OperatorContext, family: &MeasureFamily, x: &[f64]) -> LimitMatrix {
    let p = ctx.params;
    let m = family.quadrature_at(x).second_moments() * (p.alpha / 2.0) + ctx.ball.second_moments() * (p.beta / 2.0);
    limit_from(m, &p)
}
