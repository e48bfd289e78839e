//! Symmetric measure families as finite paired-atom quadratures.
//!
//! Weights are stored as integer masses over a common denominator, so unit
//! mass is an exact integer identity rather than a floating-point sum.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::lattice::{norm, Lattice, Point};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("ball of radius {radius} with spacing {spacing} needs radius ≥ 2·spacing")]
    TooCoarse { radius: f64, spacing: f64 },
    #[error("ellipsoid semi-axes {semi_axes:?} violate B₁ ⊂ E ⊂ B_Λ with Λ = {lambda}")]
    EllipsoidBounds { semi_axes: Vec<f64>, lambda: f64 },
    #[error("ellipsoid matrix is not {dim}×{dim} symmetric")]
    BadMatrix { dim: usize },
    #[error("Λ must be ≥ 1, got {0}")]
    BadLambda(f64),
    #[error("net resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("direction net would hold {size} points, above the cap {cap}")]
    NetTooLarge { size: usize, cap: usize },
    #[error("quadrature is empty")]
    Empty,
    #[error("custom family row {row}: {reason}")]
    CustomRow { row: usize, reason: String },
    #[error("custom family at node {node:?} is not symmetric: atom {offset:?} has no mirror of equal weight")]
    Asymmetric { node: Vec<i64>, offset: Vec<f64> },
    #[error("custom family weights overflow the common denominator")]
    DenominatorOverflow,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(w/2)δ_z + (w/2)δ_{−z}` with `w = mass / denominator` of the owning
/// quadrature. Offsets are in units of ε.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomPair {
    pub offset: Point,
    pub mass: u64,
}

/// Whether a quadrature discretizes an absolutely continuous measure or is
/// a genuinely atomic one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureKind {
    Discretized,
    Atomic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pairs: Vec<AtomPair>,
    denominator: u64,
    kind: QuadratureKind,
}

impl Quadrature {
    pub fn new(pairs: Vec<AtomPair>, denominator: u64, kind: QuadratureKind) -> Result<Self, MeasureError> {
        if pairs.is_empty() || denominator == 0 {
            return Err(MeasureError::Empty);
        }
        Ok(Self {
            pairs,
            denominator,
            kind,
        })
    }

    /// A single symmetric pair at `±offset` carrying all the mass.
    pub fn pair(offset: Point) -> Self {
        Self {
            pairs: vec![AtomPair { offset, mass: 1 }],
            denominator: 1,
            kind: QuadratureKind::Atomic,
        }
    }

    pub fn pairs(&self) -> &[AtomPair] {
        &self.pairs
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].offset.len()
    }

    pub fn weight(&self, pair: &AtomPair) -> f64 {
        pair.mass as f64 / self.denominator as f64
    }

    pub fn total_mass(&self) -> u64 {
        self.pairs.iter().map(|p| p.mass).sum()
    }

    pub fn support_radius(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| norm(&p.offset))
            .fold(0.0, f64::max)
    }

    /// `Σ w g(z)` over the symmetrized atoms, i.e. `∫ g dν` for even `g`
    /// evaluated as `(g(z) + g(−z))/2` per pair.
    pub fn integrate_pairs(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let s: f64 = self.pairs.iter().map(|p| p.mass as f64 * g(&p.offset)).sum();
        s / self.denominator as f64
    }

    /// Second-moment matrix `∫ z⊗z dν`.
    pub fn second_moments(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for p in &self.pairs {
            let w = p.mass as f64;
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += w * p.offset[i] * p.offset[j];
                }
            }
        }
        m / self.denominator as f64
    }
}

/// Canonical representative of `{k, −k}`: first nonzero entry positive.
fn is_canonical(k: &[i64]) -> bool {
    match k.iter().find(|&&c| c != 0) {
        Some(&c) => c > 0,
        None => true,
    }
}

fn for_each_multi(dim: usize, bound: i64, mut f: impl FnMut(&[i64])) {
    let mut k = vec![-bound; dim];
    loop {
        f(&k);
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if k[axis] < bound {
                k[axis] += 1;
                break;
            }
            k[axis] = -bound;
        }
    }
}

/// Uniform quadrature over lattice offsets inside `εE` where `E = S·B₁`.
/// `inverse` is `S⁻¹` and `reach` bounds `|z|` over E. Nodes strictly inside
/// carry mass 2 and nodes on the boundary mass 1, so the boundary shell is
/// counted with half weight.
fn lattice_region_quadrature(
    dim: usize,
    ratio: f64,
    reach: f64,
    inverse: Option<&DMatrix<f64>>,
) -> Result<Quadrature, MeasureError> {
    let bound = (reach * ratio + 1e-9).floor() as i64;
    let mut pairs = Vec::new();
    let mut denominator = 0u64;
    let mut z = vec![0.0; dim];
    for_each_multi(dim, bound, |k| {
        if !is_canonical(k) {
            return;
        }
        for (zi, &ki) in z.iter_mut().zip(k) {
            *zi = ki as f64 / ratio;
        }
        let q = match inverse {
            None => z.iter().map(|x| x * x).sum::<f64>(),
            Some(inv) => {
                let mut s = 0.0;
                for i in 0..dim {
                    let mut row = 0.0;
                    for j in 0..dim {
                        row += inv[(i, j)] * z[j];
                    }
                    s += row * row;
                }
                s
            }
        };
        let node_mass = if (q - 1.0).abs() <= 1e-9 {
            1
        } else if q < 1.0 {
            2
        } else {
            0
        };
        if node_mass == 0 {
            return;
        }
        let zero = k.iter().all(|&c| c == 0);
        let mass = if zero { node_mass } else { 2 * node_mass };
        denominator += mass;
        pairs.push(AtomPair {
            offset: z.clone(),
            mass,
        });
    });
    Quadrature::new(pairs, denominator, QuadratureKind::Discretized)
}

/// Quadrature for `⨍_{B_ε(x)}` on a lattice of spacing `h`, in units of ε.
pub fn uniform_ball_quadrature(dim: usize, eps: f64, spacing: f64) -> Result<Quadrature, MeasureError> {
    if !(eps >= 2.0 * spacing) {
        return Err(MeasureError::TooCoarse {
            radius: eps,
            spacing,
        });
    }
    lattice_region_quadrature(dim, eps / spacing, 1.0, None)
}

/// Symmetric positive matrix `S` with `E = S·B₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, lambda: f64) -> Result<Self, MeasureError> {
        let dim = shape.nrows();
        if shape.ncols() != dim || (&shape - shape.transpose()).amax() > 1e-12 {
            return Err(MeasureError::BadMatrix { dim });
        }
        let eig = SymmetricEigen::new(shape.clone()).eigenvalues;
        if eig.iter().any(|&s| s < 1.0 - 1e-12 || s > lambda + 1e-12) {
            return Err(MeasureError::EllipsoidBounds {
                semi_axes: eig.iter().copied().collect(),
                lambda,
            });
        }
        Ok(Self { shape })
    }

    pub fn axis_aligned(semi_axes: &[f64], lambda: f64) -> Result<Self, MeasureError> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(semi_axes)), lambda)
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    fn quadrature(&self, eps: f64, spacing: f64) -> Result<Quadrature, MeasureError> {
        if !(eps >= 2.0 * spacing) {
            return Err(MeasureError::TooCoarse {
                radius: eps,
                spacing,
            });
        }
        let inv = self
            .shape
            .clone()
            .try_inverse()
            .ok_or(MeasureError::BadMatrix { dim: self.dim() })?;
        let reach = SymmetricEigen::new(self.shape.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
        lattice_region_quadrature(self.dim(), eps / spacing, reach, Some(&inv))
    }
}

/// Rule choosing a catalog entry for each point.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    Constant,
    /// Piecewise constant over cubes of side `cell`, chosen by a hash of the
    /// cube index and the seed.
    Cells { cell: f64, seed: u64 },
    /// Entry 1 on `{(kε, 0, …, 0) : k ≥ 1}` inside the ball of radius
    /// `radius`, entry 0 elsewhere.
    AxisAtoms { eps: f64, radius: f64 },
    /// Explicit per-node entries on `h·ℤᴺ`, entry `fallback` elsewhere.
    Nodes {
        spacing: f64,
        entries: BTreeMap<Vec<i64>, usize>,
        fallback: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFamily {
    label: String,
    lambda: f64,
    catalog: Vec<Quadrature>,
    selector: Selector,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// True when `x = (kε, 0, …, 0)` for an integer `k ≥ 1`.
pub fn axis_atom_index(x: &[f64], eps: f64) -> Option<i64> {
    let t = x[0] / eps;
    let k = t.round();
    let on_line = x[1..].iter().all(|c| c.abs() <= 1e-9 * eps);
    (on_line && k >= 1.0 && (t - k).abs() <= 1e-9).then_some(k as i64)
}

impl MeasureFamily {
    pub fn new(label: impl Into<String>, lambda: f64, catalog: Vec<Quadrature>, selector: Selector) -> Result<Self, MeasureError> {
        if !(lambda >= 1.0) {
            return Err(MeasureError::BadLambda(lambda));
        }
        if catalog.is_empty() {
            return Err(MeasureError::Empty);
        }
        Ok(Self {
            label: label.into(),
            lambda,
            catalog,
            selector,
        })
    }

    /// ν_x uniform on `B_radius` for every x.
    pub fn uniform_ball(dim: usize, radius: f64, lambda: f64, eps: f64, spacing: f64) -> Result<Self, MeasureError> {
        let e = Ellipsoid::new(DMatrix::identity(dim, dim) * radius, lambda)?;
        Self::ellipsoid(e, lambda, eps, spacing)
    }

    /// ν_x uniform on the fixed ellipsoid E.
    pub fn ellipsoid(e: Ellipsoid, lambda: f64, eps: f64, spacing: f64) -> Result<Self, MeasureError> {
        let q = e.quadrature(eps, spacing)?;
        Self::new("ellipsoid", lambda, vec![q], Selector::Constant)
    }

    /// ν_x uniform on `E_x`, where `E_x` is drawn from `catalog` by the
    /// cube of side `cell` containing x.
    pub fn ellipsoid_field(catalog: &[Ellipsoid], cell: f64, seed: u64, lambda: f64, eps: f64, spacing: f64) -> Result<Self, MeasureError> {
        let quads = catalog
            .iter()
            .map(|e| e.quadrature(eps, spacing))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new("ellipsoid-field", lambda, quads, Selector::Cells { cell, seed })
    }

    /// Random axis-aligned ellipsoids with semi-axes uniform in `[1, Λ]`.
    pub fn random_ellipsoid_field(dim: usize, count: usize, cell: f64, seed: u64, lambda: f64, eps: f64, spacing: f64) -> Result<Self, MeasureError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let catalog = (0..count)
            .map(|_| {
                let axes: Vec<f64> = (0..dim).map(|_| rng.gen_range(1.0..=lambda)).collect();
                Ellipsoid::axis_aligned(&axes, lambda)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::ellipsoid_field(&catalog, cell, seed, lambda, eps, spacing)
    }

    /// ν_x = one symmetric pair at `±offset` for every x.
    pub fn atom_pair(offset: Point, lambda: f64) -> Result<Self, MeasureError> {
        Self::new("atom-pair", lambda, vec![Quadrature::pair(offset)], Selector::Constant)
    }

    /// ν_x = `(δ_{e₁}+δ_{−e₁})/2` on the axis atoms `(kε, 0, …, 0)` inside
    /// `B_radius`, uniform on B₁ elsewhere (Λ = 1).
    pub fn axis_atoms(dim: usize, eps: f64, spacing: f64, radius: f64) -> Result<Self, MeasureError> {
        let ball = uniform_ball_quadrature(dim, eps, spacing)?;
        let mut e1 = vec![0.0; dim];
        e1[0] = 1.0;
        Self::new(
            "axis-atoms",
            1.0,
            vec![ball, Quadrature::pair(e1)],
            Selector::AxisAtoms { eps, radius },
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn catalog(&self) -> &[Quadrature] {
        &self.catalog
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    pub fn select(&self, x: &[f64]) -> usize {
        match &self.selector {
            Selector::Constant => 0,
            Selector::Cells { cell, seed } => {
                let mut h = *seed;
                for c in x {
                    h = splitmix(h ^ ((c / cell).floor() as i64 as u64));
                }
                (h % self.catalog.len() as u64) as usize
            }
            Selector::AxisAtoms { eps, radius } => {
                let inside = norm(x) < *radius;
                usize::from(inside && axis_atom_index(x, *eps).is_some())
            }
            Selector::Nodes {
                spacing,
                entries,
                fallback,
            } => {
                let k: Vec<i64> = x.iter().map(|c| (c / spacing).round() as i64).collect();
                *entries.get(&k).unwrap_or(fallback)
            }
        }
    }

    pub fn quadrature_at(&self, x: &[f64]) -> &Quadrature {
        &self.catalog[self.select(x)]
    }

    /// Loads a family from CSV rows `x_index, z1..zN, weight`, where
    /// `x_index` is the node multi-index on `h·ℤᴺ` written as `i;j;…`.
    /// Every listed atom needs a mirror atom of equal weight. Nodes without
    /// rows use the uniform ball on B₁.
    pub fn from_csv_path(path: &Path, dim: usize, lambda: f64, eps: f64, spacing: f64) -> Result<Self, MeasureError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, dim, lambda, eps, spacing)
    }

    pub fn from_csv_reader<R: Read>(reader: R, dim: usize, lambda: f64, eps: f64, spacing: f64) -> Result<Self, MeasureError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut nodes: BTreeMap<Vec<i64>, Vec<(Point, Decimal)>> = BTreeMap::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |reason: String| MeasureError::CustomRow { row: row + 1, reason };
            if rec.len() != dim + 2 {
                return Err(bad(format!("expected {} fields, got {}", dim + 2, rec.len())));
            }
            let node = rec[0]
                .split(';')
                .map(|s| s.trim().parse::<i64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("bad x_index: {e}")))?;
            if node.len() != dim {
                return Err(bad(format!("x_index has {} entries", node.len())));
            }
            let z = (1..=dim)
                .map(|i| rec[i].trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("bad offset: {e}")))?;
            let w = Decimal::parse(rec[dim + 1].trim()).ok_or_else(|| bad("bad weight".into()))?;
            nodes.entry(node).or_default().push((z, w));
        }
        let mut catalog = vec![uniform_ball_quadrature(dim, eps, spacing)?];
        let mut entries = BTreeMap::new();
        for (node, atoms) in nodes {
            let q = pair_atoms(&node, &atoms)?;
            entries.insert(node, catalog.len());
            catalog.push(q);
        }
        Self::new(
            "custom",
            lambda,
            catalog,
            Selector::Nodes {
                spacing,
                entries,
                fallback: 0,
            },
        )
    }
}

/// Non-negative decimal `digits · 10^(−scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Decimal {
    digits: u64,
    scale: u32,
}

impl Decimal {
    fn parse(s: &str) -> Option<Self> {
        let (mant, exp) = match s.find(['e', 'E']) {
            Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
            None => (s, 0),
        };
        let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
        if int.starts_with('-') {
            return None;
        }
        let digits: u64 = format!("{int}{frac}").parse().ok()?;
        let mut scale = frac.len() as i32 - exp;
        let mut digits = digits;
        while scale < 0 {
            digits = digits.checked_mul(10)?;
            scale += 1;
        }
        Some(Self {
            digits,
            scale: scale as u32,
        })
    }
}

fn pair_atoms(node: &[i64], atoms: &[(Point, Decimal)]) -> Result<Quadrature, MeasureError> {
    let scale = atoms.iter().map(|(_, w)| w.scale).max().unwrap_or(0);
    let denom_pow = 10u64.checked_pow(scale).ok_or(MeasureError::DenominatorOverflow)?;
    let masses: Vec<u64> = atoms
        .iter()
        .map(|(_, w)| {
            10u64
                .checked_pow(scale - w.scale)
                .and_then(|m| m.checked_mul(w.digits))
                .ok_or(MeasureError::DenominatorOverflow)
        })
        .collect::<Result<_, _>>()?;
    let mut used = vec![false; atoms.len()];
    let mut pairs = Vec::new();
    for i in 0..atoms.len() {
        if used[i] {
            continue;
        }
        let z = &atoms[i].0;
        if z.iter().all(|&c| c == 0.0) {
            used[i] = true;
            pairs.push(AtomPair {
                offset: z.clone(),
                mass: masses[i],
            });
            continue;
        }
        let mirror = (i + 1..atoms.len()).find(|&j| {
            !used[j]
                && masses[j] == masses[i]
                && atoms[j].0.iter().zip(z).all(|(a, b)| (a + b).abs() <= 1e-12)
        });
        match mirror {
            Some(j) => {
                used[i] = true;
                used[j] = true;
                pairs.push(AtomPair {
                    offset: if is_canonical_f(z) { z.clone() } else { atoms[j].0.clone() },
                    mass: 2 * masses[i],
                });
            }
            None => {
                return Err(MeasureError::Asymmetric {
                    node: node.to_vec(),
                    offset: z.clone(),
                })
            }
        }
    }
    let denominator = denom_pow;
    Quadrature::new(pairs, denominator, QuadratureKind::Atomic)
}

fn is_canonical_f(z: &[f64]) -> bool {
    match z.iter().find(|&&c| c != 0.0) {
        Some(&c) => c > 0.0,
        None => true,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub label: String,
    pub entries_checked: usize,
    /// Largest `|1 − Σw|` over checked entries, exact up to the final cast.
    pub worst_mass_deficit: f64,
    pub unit_mass: bool,
    pub max_support: f64,
    pub support_ok: bool,
    /// Pairs are symmetric by construction.
    pub symmetric: bool,
    pub pass: bool,
}

/// Checks unit mass and support at every node of the lattice.
pub fn validate_family(family: &MeasureFamily, lattice: &Lattice) -> FamilyReport {
    let mut seen = vec![false; family.catalog.len()];
    let mut p = vec![0.0; lattice.dim()];
    for i in 0..lattice.len() {
        lattice.coords_into(i, &mut p);
        seen[family.select(&p)] = true;
    }
    validate_entries(family, &seen)
}

fn validate_entries(family: &MeasureFamily, seen: &[bool]) -> FamilyReport {
    let mut worst: i128 = 0;
    let mut worst_f = 0.0;
    let mut max_support = 0.0f64;
    let mut count = 0;
    for (q, _) in family.catalog.iter().zip(seen).filter(|(_, s)| **s) {
        count += 1;
        let gap = q.denominator as i128 - q.total_mass() as i128;
        if gap.abs() > worst.abs() || (worst == 0 && gap != 0) {
            worst = gap;
            worst_f = gap as f64 / q.denominator as f64;
        }
        max_support = max_support.max(q.support_radius());
    }
    let unit_mass = worst == 0;
    let support_ok = max_support <= family.lambda * (1.0 + 1e-12);
    FamilyReport {
        label: family.label.clone(),
        entries_checked: count,
        worst_mass_deficit: worst_f,
        unit_mass,
        max_support,
        support_ok,
        symmetric: true,
        pass: unit_mass && support_ok,
    }
}

/// Finite subset of the closed ball `B_Λ`; every point of the ball lies
/// within `resolution` of some net point.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionNet {
    points: Vec<Point>,
    resolution: f64,
    lambda: f64,
}

pub const DEFAULT_NET_CAP: usize = 200_000;

impl DirectionNet {
    pub fn new(dim: usize, lambda: f64, resolution: f64) -> Result<Self, MeasureError> {
        Self::with_cap(dim, lambda, resolution, DEFAULT_NET_CAP)
    }

    pub fn with_cap(dim: usize, lambda: f64, resolution: f64, cap: usize) -> Result<Self, MeasureError> {
        if !(resolution > 0.0) {
            return Err(MeasureError::BadResolution(resolution));
        }
        if !(lambda >= 1.0) {
            return Err(MeasureError::BadLambda(lambda));
        }
        // Grid spacing whose covering radius is the resolution.
        let step = if dim == 1 {
            resolution
        } else {
            2.0 * resolution / (dim as f64).sqrt()
        };
        let bound = ((lambda + resolution) / step).ceil() as i64;
        let estimate = (2 * bound + 1) as f64;
        if estimate.powi(dim as i32) > 4.0 * cap as f64 {
            return Err(MeasureError::NetTooLarge {
                size: estimate.powi(dim as i32) as usize,
                cap,
            });
        }
        let mut points = Vec::new();
        for_each_multi(dim, bound, |k| {
            let g: Vec<f64> = k.iter().map(|&c| c as f64 * step).collect();
            let r = norm(&g);
            if r <= lambda {
                points.push(g);
            } else if r <= lambda + resolution {
                points.push(g.iter().map(|c| c * lambda / r).collect());
            }
        });
        for i in 0..dim {
            for s in [-1.0, 1.0] {
                let mut e = vec![0.0; dim];
                e[i] = s * lambda;
                points.push(e);
            }
        }
        let mut net = Self {
            points,
            resolution,
            lambda,
        };
        net.dedup();
        if net.points.len() > cap {
            return Err(MeasureError::NetTooLarge {
                size: net.points.len(),
                cap,
            });
        }
        Ok(net)
    }

    fn dedup(&mut self) {
        self.points
            .sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        self.points.dedup();
    }

    /// Adds points (e.g. the atoms of a family) to the net.
    pub fn with_points<I: IntoIterator<Item = Point>>(mut self, extra: I) -> Self {
        self.points.extend(extra);
        self.dedup();
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance_to(&self, z: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|p| crate::lattice::dist(p, z))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn moments(q: &Quadrature) -> (f64, f64) {
        let first = q.integrate_pairs(|z| z[0] * z[0]);
        let radial = q.integrate_pairs(|z| z.iter().map(|c| c * c).sum());
        (first, radial)
    }

    #[test]
    fn ball_quadrature_has_unit_mass_and_zero_first_moment() {
        for dim in 1..=3 {
            let q = uniform_ball_quadrature(dim, 1.0, 0.1).unwrap();
            assert_eq!(q.total_mass(), q.denominator());
            // Each pair is symmetric, so odd moments vanish identically; the
            // quadrature stores only one representative per pair.
            assert!(q.support_radius() <= 1.0);
        }
    }

    #[test]
    fn ball_moments_approach_closed_form() {
        for dim in 1..=3usize {
            let n = dim as f64;
            let mut errs = Vec::new();
            for ratio in [5.0, 10.0, 20.0] {
                let q = uniform_ball_quadrature(dim, 1.0, 1.0 / ratio).unwrap();
                let (first, radial) = moments(&q);
                let e1 = (first * (n + 2.0) - 1.0).abs();
                let e2 = (radial * (n + 2.0) / n - 1.0).abs();
                errs.push(e1.max(e2));
            }
            assert!(errs[2] < 0.01, "dim {dim}: {errs:?}");
            assert!(errs[2] < errs[0], "dim {dim}: {errs:?}");
        }
    }

    #[test]
    fn ball_quadrature_rejects_coarse_lattice() {
        assert!(matches!(
            uniform_ball_quadrature(2, 0.1, 0.06),
            Err(MeasureError::TooCoarse { .. })
        ));
    }

    #[test]
    fn identity_ellipsoid_is_the_ball() {
        for dim in 1..=3 {
            let fam = MeasureFamily::uniform_ball(dim, 1.0, 2.0, 0.5, 0.05).unwrap();
            let ball = uniform_ball_quadrature(dim, 0.5, 0.05).unwrap();
            assert_eq!(fam.catalog()[0], ball);
        }
    }

    #[test]
    fn stretched_ellipsoid_moments() {
        // Uniform measure on S·B₁ has second moments S²/(N+2).
        let lambda = 2.0;
        let e = Ellipsoid::axis_aligned(&[lambda, 1.0], lambda).unwrap();
        let fam = MeasureFamily::ellipsoid(e, lambda, 1.0, 0.05).unwrap();
        let m = fam.catalog()[0].second_moments();
        assert!((m[(0, 0)] - lambda * lambda / 4.0).abs() / (lambda * lambda / 4.0) < 0.01);
        assert!((m[(1, 1)] - 0.25).abs() / 0.25 < 0.01);
        assert!(m[(0, 1)].abs() < 1e-12);
        let bad = Ellipsoid::axis_aligned(&[lambda + 0.1, 1.0], lambda);
        assert!(matches!(bad, Err(MeasureError::EllipsoidBounds { .. })));
        let small = Ellipsoid::axis_aligned(&[0.9, 1.0], lambda);
        assert!(matches!(small, Err(MeasureError::EllipsoidBounds { .. })));
    }

    #[test]
    fn axis_atom_family_selects_pairs_on_the_axis() {
        let eps = 0.25;
        let fam = MeasureFamily::axis_atoms(2, eps, 0.05, 2.0).unwrap();
        let q = fam.quadrature_at(&[eps, 0.0]);
        assert_eq!(q.pairs().len(), 1);
        assert_eq!(q.pairs()[0].offset, vec![1.0, 0.0]);
        assert_eq!(q.weight(&q.pairs()[0]), 1.0);
        assert_eq!(fam.select(&[0.0, 0.0]), 0);
        assert_eq!(fam.select(&[-eps, 0.0]), 0);
        assert_eq!(fam.select(&[eps, 0.05]), 0);
        assert_eq!(fam.select(&[3.0 * eps, 0.0]), 1);
        let lat = Lattice::covering(&[-2.0, -2.0], &[2.0, 2.0], 0.05).unwrap();
        assert!(validate_family(&fam, &lat).pass);
    }

    #[test]
    fn validation_reports_mass_deficit() {
        let q = Quadrature::new(
            vec![AtomPair {
                offset: vec![0.5],
                mass: 99,
            }],
            100,
            QuadratureKind::Atomic,
        )
        .unwrap();
        let fam = MeasureFamily::new("hand", 1.0, vec![q], Selector::Constant).unwrap();
        let lat = Lattice::covering(&[-1.0], &[1.0], 0.5).unwrap();
        let rep = validate_family(&fam, &lat);
        assert!(!rep.pass && !rep.unit_mass);
        assert!((rep.worst_mass_deficit - 0.01).abs() < 1e-15);
    }

    #[test]
    fn ellipsoid_family_support_within_lambda() {
        let lat = Lattice::covering(&[-1.0, -1.0], &[1.0, 1.0], 0.25).unwrap();
        let fam = MeasureFamily::random_ellipsoid_field(2, 6, 0.5, 11, 2.0, 0.5, 0.05).unwrap();
        let rep = validate_family(&fam, &lat);
        assert!(rep.pass, "{rep:?}");
        // Oracle: scan all atoms directly.
        let oracle = fam
            .catalog()
            .iter()
            .flat_map(|q| q.pairs().iter().map(|p| norm(&p.offset)))
            .fold(0.0, f64::max);
        assert!(oracle <= 2.0 && rep.max_support <= oracle);
    }

    #[test]
    fn custom_csv_round_trip() {
        let csv = "x_index,z1,weight\n0,0.5,0.25\n0,-0.5,0.25\n0,1.0,0.25\n0,-1.0,0.25\n1,0.0,0.99\n";
        let fam = MeasureFamily::from_csv_reader(csv.as_bytes(), 1, 1.0, 0.5, 0.1).unwrap();
        let q0 = fam.quadrature_at(&[0.0]);
        assert_eq!(q0.total_mass(), q0.denominator());
        assert_eq!(q0.pairs().len(), 2);
        let q1 = fam.quadrature_at(&[0.1]);
        assert!((q1.total_mass() as f64 / q1.denominator() as f64 - 0.99).abs() < 1e-15);
        let lat = Lattice::covering(&[-0.5], &[0.5], 0.1).unwrap();
        let rep = validate_family(&fam, &lat);
        assert!(!rep.pass);
        assert!((rep.worst_mass_deficit - 0.01).abs() < 1e-15);
        let asym = "x_index,z1,weight\n0,0.5,0.5\n0,-0.5,0.25\n";
        assert!(matches!(
            MeasureFamily::from_csv_reader(asym.as_bytes(), 1, 1.0, 0.5, 0.1),
            Err(MeasureError::Asymmetric { .. })
        ));
    }

    #[test]
    fn one_dimensional_net_ladder() {
        let net = DirectionNet::new(1, 2.0, 0.5).unwrap();
        for v in [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0] {
            assert!(net.points().iter().any(|p| p[0] == v), "{v}");
        }
    }

    #[test]
    fn planar_net_covers_ball_and_contains_axes() {
        let lambda = 2.0;
        let res = 0.1;
        let net = DirectionNet::new(2, lambda, res).unwrap();
        assert!(net.points().iter().any(|p| p == &vec![lambda, 0.0]));
        assert!(net.points().iter().any(|p| p == &vec![-lambda, 0.0]));
        assert!(net.points().iter().all(|p| norm(p) <= lambda + 1e-12));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let z = loop {
                let z = vec![rng.gen_range(-lambda..lambda), rng.gen_range(-lambda..lambda)];
                if norm(&z) < lambda {
                    break z;
                }
            };
            assert!(net.distance_to(&z) <= res + 1e-12);
        }
        assert!(matches!(
            DirectionNet::with_cap(3, 2.0, 1e-3, 1000),
            Err(MeasureError::NetTooLarge { .. })
        ));
    }

    proptest! {
        #[test]
        fn ball_pairs_are_canonical_and_unit(dim in 1usize..=3, ratio in 2u32..12) {
            let q = uniform_ball_quadrature(dim, 1.0, 1.0 / ratio as f64).unwrap();
            prop_assert_eq!(q.total_mass(), q.denominator());
            for p in q.pairs() {
                prop_assert!(is_canonical_f(&p.offset));
                prop_assert!(norm(&p.offset) <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn decimal_weights_are_exact(d in 0u64..1_000_000, scale in 0u32..6) {
            let s = format!("{}", d as f64 / 10f64.powi(scale as i32));
            let parsed = Decimal::parse(&s).unwrap();
            prop_assert!((parsed.digits as f64 / 10f64.powi(parsed.scale as i32) - s.parse::<f64>().unwrap()).abs() < 1e-12);
        }
    }
}
