//! Uniform lattices over boxes, geometric regions, the extended domain of a
//! DPP, the ε-cube grid used by the ABP estimate and the dyadic tree of Q₁.

use std::collections::BTreeSet;

use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice spacing must be positive, got {0}")]
    NonPositiveSpacing(f64),
    #[error("degenerate box on axis {axis}: [{lower}, {upper}]")]
    DegenerateBox { axis: usize, lower: f64, upper: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point {0:?} lies outside the lattice")]
    OutsideLattice(Vec<f64>),
    #[error("region is unbounded")]
    Unbounded,
    #[error("cube scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("the root cube has no predecessor")]
    RootHasNoParent,
    #[error("grid function has {got} values for a lattice of {expected} nodes")]
    ValueCount { expected: usize, got: usize },
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
}

pub type Point = Vec<f64>;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Nodes `origin + h·k` for multi-indices `0 ≤ k_i < extents[i]`, row-major
/// with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    origin: Vec<f64>,
    spacing: f64,
    extents: Vec<usize>,
    strides: Vec<usize>,
}

impl Lattice {
    pub fn new(origin: Vec<f64>, spacing: f64, extents: Vec<usize>) -> Result<Self, LatticeError> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(LatticeError::NonPositiveSpacing(spacing));
        }
        if origin.len() != extents.len() {
            return Err(LatticeError::DimensionMismatch {
                expected: origin.len(),
                got: extents.len(),
            });
        }
        let mut strides = vec![1usize; extents.len()];
        for i in (0..extents.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * extents[i + 1];
        }
        Ok(Self {
            origin,
            spacing,
            extents,
            strides,
        })
    }

    /// Lattice anchored at the lower corner of a closed box, with
    /// `floor(side/h) + 1` nodes per axis.
    pub fn build(lower: &[f64], upper: &[f64], spacing: f64) -> Result<Self, LatticeError> {
        if !(spacing > 0.0) {
            return Err(LatticeError::NonPositiveSpacing(spacing));
        }
        check_box(lower, upper)?;
        let extents = lower
            .iter()
            .zip(upper)
            .map(|(lo, hi)| node_count(hi - lo, spacing))
            .collect();
        Self::new(lower.to_vec(), spacing, extents)
    }

    /// Lattice on `h·ℤᴺ` covering the closed box; the origin is a node
    /// whenever it lies in the box.
    pub fn covering(lower: &[f64], upper: &[f64], spacing: f64) -> Result<Self, LatticeError> {
        if !(spacing > 0.0) {
            return Err(LatticeError::NonPositiveSpacing(spacing));
        }
        check_box(lower, upper)?;
        let mut origin = Vec::with_capacity(lower.len());
        let mut extents = Vec::with_capacity(lower.len());
        for (lo, hi) in lower.iter().zip(upper) {
            let first = (lo / spacing + 1e-9).floor();
            let last = (hi / spacing - 1e-9).ceil();
            origin.push(first * spacing);
            extents.push((last - first) as usize + 1);
        }
        Self::new(origin, spacing, extents)
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index_of(&self, multi: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for ((&k, &n), &s) in multi.iter().zip(&self.extents).zip(&self.strides) {
            if k < 0 || k as usize >= n {
                return None;
            }
            idx += k as usize * s;
        }
        Some(idx)
    }

    pub fn multi_index(&self, idx: usize) -> Vec<i64> {
        self.strides
            .iter()
            .zip(&self.extents)
            .map(|(&s, &n)| ((idx / s) % n) as i64)
            .collect()
    }

    pub fn coords(&self, idx: usize) -> Point {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(idx, &mut out);
        out
    }

    pub fn coords_into(&self, idx: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let k = (idx / self.strides[i]) % self.extents[i];
            *o = self.origin[i] + self.spacing * k as f64;
        }
    }

    /// Multi-index of the nearest node, not clipped to the extents.
    pub fn nearest_multi(&self, p: &[f64]) -> Vec<i64> {
        p.iter()
            .zip(&self.origin)
            .map(|(x, o)| ((x - o) / self.spacing).round() as i64)
            .collect()
    }

    pub fn nearest(&self, p: &[f64]) -> Option<usize> {
        self.index_of(&self.nearest_multi(p))
    }

    /// Flat index offset of a multi-index displacement. Only meaningful when
    /// both endpoints are inside the lattice.
    pub fn flat_offset(&self, delta: &[i64]) -> isize {
        delta
            .iter()
            .zip(&self.strides)
            .map(|(&d, &s)| d as isize * s as isize)
            .sum()
    }

    pub fn contains_multi(&self, multi: &[i64]) -> bool {
        self.index_of(multi).is_some()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        (0..self.len()).map(move |i| (i, self.coords(i)))
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<(), LatticeError> {
    if lower.len() != upper.len() {
        return Err(LatticeError::DimensionMismatch {
            expected: lower.len(),
            got: upper.len(),
        });
    }
    for (axis, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if !(hi > lo) {
            return Err(LatticeError::DegenerateBox {
                axis,
                lower: *lo,
                upper: *hi,
            });
        }
    }
    Ok(())
}

fn node_count(side: f64, spacing: f64) -> usize {
    // Relative guard so that exact multiples are not lost to rounding.
    let ratio = side / spacing;
    (ratio * (1.0 + 1e-12)).floor() as usize + 1
}

#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    /// Open ball `|y − center| < radius`.
    Ball { center: Point, radius: f64 },
    /// Open cube `|y_i − center_i| < side/2`.
    Cube { center: Point, side: f64 },
    /// `inner < |y − center| < outer`.
    Annulus { center: Point, inner: f64, outer: f64 },
    /// Open box `lower_i < y_i < upper_i`.
    Box { lower: Point, upper: Point },
    Complement(std::boxed::Box<Region>),
}

impl Region {
    pub fn ball(center: Point, radius: f64) -> Self {
        Region::Ball { center, radius }
    }

    pub fn centered_ball(dim: usize, radius: f64) -> Self {
        Region::Ball {
            center: vec![0.0; dim],
            radius,
        }
    }

    pub fn cube(center: Point, side: f64) -> Self {
        Region::Cube { center, side }
    }

    pub fn centered_cube(dim: usize, side: f64) -> Self {
        Region::Cube {
            center: vec![0.0; dim],
            side,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. }
            | Region::Cube { center, .. }
            | Region::Annulus { center, .. } => center.len(),
            Region::Box { lower, .. } => lower.len(),
            Region::Complement(inner) => inner.dim(),
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => dist(p, center) < *radius,
            Region::Cube { center, side } => p
                .iter()
                .zip(center)
                .all(|(y, c)| (y - c).abs() < side / 2.0),
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(p, center);
                *inner < r && r < *outer
            }
            Region::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(y, (lo, hi))| lo < y && y < hi),
            Region::Complement(inner) => !inner.contains(p),
        }
    }

    /// Euclidean distance from `p` to the region (zero inside).
    pub fn distance(&self, p: &[f64]) -> f64 {
        match self {
            Region::Ball { center, radius } => (dist(p, center) - radius).max(0.0),
            Region::Cube { center, side } => p
                .iter()
                .zip(center)
                .map(|(y, c)| ((y - c).abs() - side / 2.0).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(p, center);
                (r - outer).max(inner - r).max(0.0)
            }
            Region::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(y, (lo, hi))| (lo - y).max(y - hi).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            Region::Complement(inner) => inner.depth(p),
        }
    }

    /// Distance from `p` to the complement of the region (zero outside).
    pub fn depth(&self, p: &[f64]) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        match self {
            Region::Ball { center, radius } => radius - dist(p, center),
            Region::Cube { center, side } => p
                .iter()
                .zip(center)
                .map(|(y, c)| side / 2.0 - (y - c).abs())
                .fold(f64::INFINITY, f64::min),
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(p, center);
                (r - inner).min(outer - r)
            }
            Region::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(y, (lo, hi))| (y - lo).min(hi - y))
                .fold(f64::INFINITY, f64::min),
            Region::Complement(inner) => inner.distance(p),
        }
    }

    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        match self {
            Region::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Region::Cube { center, side } => Some((
                center.iter().map(|c| c - side / 2.0).collect(),
                center.iter().map(|c| c + side / 2.0).collect(),
            )),
            Region::Annulus { center, outer, .. } => Some((
                center.iter().map(|c| c - outer).collect(),
                center.iter().map(|c| c + outer).collect(),
            )),
            Region::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            Region::Complement(_) => None,
        }
    }

    /// Largest distance between two points of the region.
    pub fn diameter(&self) -> Option<f64> {
        self.bounding_box().map(|(lo, hi)| match self {
            Region::Ball { radius, .. } => 2.0 * radius,
            Region::Annulus { outer, .. } => 2.0 * outer,
            _ => dist(&lo, &hi),
        })
    }
}

/// Lattice cell count times `hᴺ`.
pub fn region_measure_on_lattice(region: &Region, lattice: &Lattice) -> Result<f64, LatticeError> {
    if region.bounding_box().is_none() {
        return Err(LatticeError::Unbounded);
    }
    let count = lattice
        .nodes()
        .filter(|(_, p)| region.contains(p))
        .count();
    Ok(count as f64 * lattice.spacing().powi(lattice.dim() as i32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Outside,
}

/// Lattice nodes of Ω together with every node within the step reach of Ω.
#[derive(Clone, Debug)]
pub struct ExtendedDomain {
    lattice: Lattice,
    inner: Region,
    margin: f64,
    classes: Vec<NodeClass>,
    interior: Vec<usize>,
}

impl ExtendedDomain {
    /// `reach` is the largest step length Λε. Nodes within `reach + √N·h` of
    /// Ω are kept so that nearest-node rounding of any step stays inside.
    pub fn new(inner: Region, reach: f64, spacing: f64) -> Result<Self, LatticeError> {
        let (lo, hi) = inner.bounding_box().ok_or(LatticeError::Unbounded)?;
        let dim = lo.len();
        let margin = reach + (dim as f64).sqrt() * spacing;
        let lower: Vec<f64> = lo.iter().map(|x| x - margin).collect();
        let upper: Vec<f64> = hi.iter().map(|x| x + margin).collect();
        let lattice = Lattice::covering(&lower, &upper, spacing)?;
        let mut classes = Vec::with_capacity(lattice.len());
        let mut interior = Vec::new();
        let mut p = vec![0.0; dim];
        for i in 0..lattice.len() {
            lattice.coords_into(i, &mut p);
            let class = if inner.contains(&p) {
                interior.push(i);
                NodeClass::Interior
            } else if inner.distance(&p) <= margin {
                NodeClass::Boundary
            } else {
                NodeClass::Outside
            };
            classes.push(class);
        }
        Ok(Self {
            lattice,
            inner,
            margin,
            classes,
            interior,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn inner(&self) -> &Region {
        &self.inner
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.classes[idx]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == NodeClass::Boundary)
            .map(|(i, _)| i)
    }
}

/// Index of a cube in the fixed grid with centers on `(ε/(4√N))ℤᴺ`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CubeIndex(pub Vec<i64>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeGrid {
    dim: usize,
    side: f64,
}

impl CubeGrid {
    pub fn for_epsilon(dim: usize, eps: f64) -> Result<Self, LatticeError> {
        if !(eps > 0.0) {
            return Err(LatticeError::NonPositiveScale(eps));
        }
        Ok(Self {
            dim,
            side: eps / (4.0 * (dim as f64).sqrt()),
        })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn center(&self, cube: &CubeIndex) -> Point {
        cube.0.iter().map(|&k| k as f64 * self.side).collect()
    }

    pub fn closure_contains(&self, cube: &CubeIndex, p: &[f64]) -> bool {
        cube.0
            .iter()
            .zip(p)
            .all(|(&k, &x)| (x - k as f64 * self.side).abs() <= self.side / 2.0)
    }

    /// Cubes whose closure contains `p`.
    pub fn cubes_touching(&self, p: &[f64]) -> Vec<CubeIndex> {
        let ranges: Vec<(i64, i64)> = p
            .iter()
            .map(|&x| {
                let t = x / self.side;
                ((t - 0.5).ceil() as i64, (t + 0.5).floor() as i64)
            })
            .collect();
        let mut out = vec![Vec::with_capacity(self.dim)];
        for (lo, hi) in ranges {
            let mut next = Vec::new();
            for prefix in &out {
                for k in lo..=hi {
                    let mut v = prefix.clone();
                    v.push(k);
                    next.push(v);
                }
            }
            out = next;
        }
        out.into_iter()
            .map(CubeIndex)
            .filter(|c| self.closure_contains(c, p))
            .collect()
    }

    /// The lexicographically smallest cube whose closure contains `p`; used
    /// to give points on shared faces a single owner.
    pub fn owner(&self, p: &[f64]) -> CubeIndex {
        self.cubes_touching(p)
            .into_iter()
            .min()
            .unwrap_or_else(|| CubeIndex(p.iter().map(|&x| (x / self.side).round() as i64).collect()))
    }

    /// 𝒬_ε(A): every grid cube whose closure meets the point set.
    pub fn cover<'a, I>(&self, points: I) -> BTreeSet<CubeIndex>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut out = BTreeSet::new();
        for p in points {
            out.extend(self.cubes_touching(p));
        }
        out
    }
}

pub fn epsilon_cube_cover<'a, I>(dim: usize, points: I, eps: f64) -> Result<BTreeSet<CubeIndex>, LatticeError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    Ok(CubeGrid::for_epsilon(dim, eps)?.cover(points))
}

/// Dyadic subcube of `Q₁ = (−1/2, 1/2)ᴺ` at generation `level`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DyadicCube {
    level: u32,
    index: Vec<u64>,
}

impl DyadicCube {
    pub fn root(dim: usize) -> Self {
        Self {
            level: 0,
            index: vec![0; dim],
        }
    }

    pub fn new(level: u32, index: Vec<u64>) -> Option<Self> {
        let n = 1u64 << level;
        index.iter().all(|&k| k < n).then_some(Self { level, index })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> &[u64] {
        &self.index
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn side(&self) -> Ratio<i64> {
        Ratio::new(1, 1i64 << self.level)
    }

    pub fn measure(&self) -> Ratio<i64> {
        Ratio::new(1, 1i64 << (self.level as usize * self.dim()))
    }

    pub fn lower_corner(&self) -> Vec<Ratio<i64>> {
        self.index
            .iter()
            .map(|&k| Ratio::new(k as i64, 1i64 << self.level) - Ratio::new(1, 2))
            .collect()
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let dim = self.dim();
        (0..1u64 << dim)
            .map(|bits| DyadicCube {
                level: self.level + 1,
                index: self
                    .index
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| 2 * k + ((bits >> (dim - 1 - i)) & 1))
                    .collect(),
            })
            .collect()
    }

    pub fn parent(&self) -> Result<DyadicCube, LatticeError> {
        if self.level == 0 {
            return Err(LatticeError::RootHasNoParent);
        }
        Ok(DyadicCube {
            level: self.level - 1,
            index: self.index.iter().map(|k| k / 2).collect(),
        })
    }

    /// Ancestor at a coarser generation (or the cube itself).
    pub fn ancestor(&self, level: u32) -> DyadicCube {
        assert!(level <= self.level);
        let shift = self.level - level;
        DyadicCube {
            level,
            index: self.index.iter().map(|k| k >> shift).collect(),
        }
    }

    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.level >= self.level && other.ancestor(self.level) == *self
    }

    /// Half-open cell membership for a point of Q₁ given in exact rationals.
    pub fn contains_point(&self, p: &[Ratio<i64>]) -> bool {
        let side = self.side();
        self.lower_corner()
            .iter()
            .zip(p)
            .all(|(lo, x)| lo <= x && *x < *lo + side)
    }

    /// All cubes of generation `level`, generation-major and
    /// index-lexicographic.
    pub fn generation(dim: usize, level: u32) -> Vec<DyadicCube> {
        let n = 1u64 << level;
        let total = (n as usize).pow(dim as u32);
        (0..total)
            .map(|mut flat| {
                let mut index = vec![0u64; dim];
                for slot in index.iter_mut().rev() {
                    *slot = (flat as u64) % n;
                    flat /= n as usize;
                }
                DyadicCube { level, index }
            })
            .collect()
    }
}

/// Value outside the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutsidePolicy {
    /// Use the nearest lattice node (the boundary data layer).
    #[default]
    ExtendByBoundary,
    ExtendByZero,
    Error,
}

/// Rule for evaluating a grid function between nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Lookup {
    #[default]
    Nearest,
    Multilinear,
}

/// Anything that can be evaluated at a point of ℝᴺ.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, p: &[f64]) -> Result<f64, LatticeError>;
}

impl<F> Field for (usize, F)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, p: &[f64]) -> Result<f64, LatticeError> {
        Ok((self.1)(p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    lattice: Lattice,
    values: Vec<f64>,
    outside: OutsidePolicy,
    lookup: Lookup,
}

impl GridFunction {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self, LatticeError> {
        if values.len() != lattice.len() {
            return Err(LatticeError::ValueCount {
                expected: lattice.len(),
                got: values.len(),
            });
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LatticeError::NonFinite { node, value });
        }
        Ok(Self {
            lattice,
            values,
            outside: OutsidePolicy::default(),
            lookup: Lookup::default(),
        })
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Result<Self, LatticeError> {
        let values = lattice.nodes().map(|(_, p)| f(&p)).collect();
        Self::new(lattice, values)
    }

    pub fn with_outside(mut self, outside: OutsidePolicy) -> Self {
        self.outside = outside;
        self
    }

    pub fn with_lookup(mut self, lookup: Lookup) -> Self {
        self.lookup = lookup;
        self
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn lookup(&self) -> Lookup {
        self.lookup
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    fn node_value(&self, multi: &[i64]) -> Result<f64, LatticeError> {
        if let Some(i) = self.lattice.index_of(multi) {
            return Ok(self.values[i]);
        }
        match self.outside {
            OutsidePolicy::ExtendByZero => Ok(0.0),
            OutsidePolicy::ExtendByBoundary => {
                let clamped: Vec<i64> = multi
                    .iter()
                    .zip(self.lattice.extents())
                    .map(|(&k, &n)| k.clamp(0, n as i64 - 1))
                    .collect();
                Ok(self.values[self.lattice.index_of(&clamped).expect("clamped index")])
            }
            OutsidePolicy::Error => Err(LatticeError::OutsideLattice(
                multi
                    .iter()
                    .zip(self.lattice.origin())
                    .map(|(&k, o)| o + k as f64 * self.lattice.spacing())
                    .collect(),
            )),
        }
    }

    fn multilinear(&self, p: &[f64]) -> Result<f64, LatticeError> {
        let dim = self.lattice.dim();
        let h = self.lattice.spacing();
        let mut base = Vec::with_capacity(dim);
        let mut frac = Vec::with_capacity(dim);
        for (x, o) in p.iter().zip(self.lattice.origin()) {
            let t = (x - o) / h;
            let mut f = t.floor();
            let mut r = t - f;
            // Snap to the node when within roundoff so that nodes are exact.
            if r > 1.0 - 1e-12 {
                f += 1.0;
                r = 0.0;
            } else if r < 1e-12 {
                r = 0.0;
            }
            base.push(f as i64);
            frac.push(r);
        }
        let mut acc = 0.0;
        let mut corner = vec![0i64; dim];
        for bits in 0..(1usize << dim) {
            let mut w = 1.0;
            for i in 0..dim {
                let up = (bits >> i) & 1 == 1;
                w *= if up { frac[i] } else { 1.0 - frac[i] };
                corner[i] = base[i] + up as i64;
            }
            if w != 0.0 {
                acc += w * self.node_value(&corner)?;
            }
        }
        Ok(acc)
    }
}

impl Field for GridFunction {
    fn dim(&self) -> usize {
        self.lattice.dim()
    }

    fn eval(&self, p: &[f64]) -> Result<f64, LatticeError> {
        if p.len() != self.lattice.dim() {
            return Err(LatticeError::DimensionMismatch {
                expected: self.lattice.dim(),
                got: p.len(),
            });
        }
        match self.lookup {
            Lookup::Nearest => self.node_value(&self.lattice.nearest_multi(p)),
            Lookup::Multilinear => self.multilinear(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_small_lattices() {
        let lat = Lattice::build(&[0.0], &[1.0], 0.5).unwrap();
        assert_eq!(lat.len(), 3);
        let xs: Vec<f64> = lat.nodes().map(|(_, p)| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        let lat = Lattice::build(&[-1.0, -1.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(lat.len(), 9);
    }

    #[test]
    fn build_extended_box_count_matches_integer_oracle() {
        // side = 2(2√2 + 0.2); count = floor(side/h) + 1 computed in integers
        // on a 10⁻⁹ grid, away from any rounding boundary.
        let half = 2.0 * 2f64.sqrt() + 2.0 * 0.1;
        let lat = Lattice::build(&[-half, -half], &[half, half], 0.05).unwrap();
        let side_nano = (2.0 * half * 1e9).round() as i64;
        let expected = (side_nano / 50_000_000) as usize + 1;
        assert_eq!(lat.extents(), &[expected, expected]);
        assert_eq!(expected, 122);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(
            Lattice::build(&[0.0], &[1.0], 0.0),
            Err(LatticeError::NonPositiveSpacing(_))
        ));
        assert!(matches!(
            Lattice::build(&[0.0], &[0.0], 0.1),
            Err(LatticeError::DegenerateBox { .. })
        ));
    }

    #[test]
    fn covering_lattice_contains_origin() {
        let lat = Lattice::covering(&[-1.03, -0.2], &[0.71, 0.4], 0.1).unwrap();
        let o = lat.nearest(&[0.0, 0.0]).unwrap();
        assert!(norm(&lat.coords(o)) < 1e-12);
    }

    #[test]
    fn region_membership_is_strict() {
        let b = Region::centered_ball(2, 1.0);
        assert!(!b.contains(&[1.0, 0.0]));
        assert!(b.contains(&[0.99, 0.0]));
        let q = Region::centered_cube(2, 1.0);
        assert!(!q.contains(&[0.5, 0.0]));
        assert!(q.contains(&[0.49, -0.49]));
        let a = Region::Annulus {
            center: vec![0.0],
            inner: 1.0,
            outer: 2.0,
        };
        assert!(!a.contains(&[1.0]) && a.contains(&[1.5]) && !a.contains(&[2.0]));
        let c = Region::Complement(std::boxed::Box::new(b.clone()));
        assert!(c.contains(&[1.0, 0.0]));
        assert_eq!(c.bounding_box(), None);
    }

    #[test]
    fn measure_of_unit_cube_and_ball() {
        for k in [3, 4, 5] {
            let h = 2f64.powi(-k);
            let lat = Lattice::covering(&[-1.0, -1.0], &[1.0, 1.0], h).unwrap();
            let m = region_measure_on_lattice(&Region::centered_cube(2, 1.0), &lat).unwrap();
            assert!((m - 1.0).abs() <= 2.0 * 2.0 * h, "k={k} m={m}");
        }
        let lat = Lattice::covering(&[-1.0, -1.0], &[1.0, 1.0], 0.01).unwrap();
        let m = region_measure_on_lattice(&Region::centered_ball(2, 1.0), &lat).unwrap();
        assert!((m - std::f64::consts::PI).abs() / std::f64::consts::PI < 0.02);
        let empty = Region::ball(vec![10.0, 10.0], 0.1);
        assert_eq!(region_measure_on_lattice(&empty, &lat).unwrap(), 0.0);
        let unbounded = Region::Complement(std::boxed::Box::new(empty));
        assert_eq!(
            region_measure_on_lattice(&unbounded, &lat),
            Err(LatticeError::Unbounded)
        );
    }

    #[test]
    fn extended_domain_reaches_every_step() {
        let dom = ExtendedDomain::new(Region::centered_ball(2, 1.0), 0.3, 0.05).unwrap();
        let lat = dom.lattice();
        for &i in dom.interior() {
            let x = lat.coords(i);
            for k in 0..16 {
                let t = k as f64 * std::f64::consts::PI / 8.0;
                let y = [x[0] + 0.3 * t.cos(), x[1] + 0.3 * t.sin()];
                let j = lat.nearest(&y).expect("step inside lattice");
                assert_ne!(dom.class(j), NodeClass::Outside);
            }
        }
        assert!(dom.boundary().count() > 0);
    }

    #[test]
    fn cube_cover_of_origin_uses_centered_cells() {
        // Side ε/4 = 0.1 in 1D; centers on 0.1ℤ, so 0 is the center of
        // [−0.05, 0.05] and touches no other closed cell.
        let cover = epsilon_cube_cover(1, [&[0.0][..]], 0.4).unwrap();
        assert_eq!(cover.into_iter().collect::<Vec<_>>(), vec![CubeIndex(vec![0])]);
        // A point on a shared face touches both neighbours.
        let cover = epsilon_cube_cover(1, [&[0.05][..]], 0.4).unwrap();
        assert_eq!(cover.len(), 2);
        let grid = CubeGrid::for_epsilon(1, 0.4).unwrap();
        assert_eq!(grid.owner(&[0.05]), CubeIndex(vec![0]));
        assert!(epsilon_cube_cover(1, std::iter::empty::<&[f64]>(), 0.4).unwrap().is_empty());
        assert!(CubeGrid::for_epsilon(1, 0.0).is_err());
    }

    #[test]
    fn cube_cover_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let eps = 0.8;
        let grid = CubeGrid::for_epsilon(2, eps).unwrap();
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|_| loop {
                let p = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if norm(&p) < 1.0 {
                    break p;
                }
            })
            .collect();
        let cover = grid.cover(pts.iter().map(|p| p.as_slice()));
        let s = grid.side();
        let kmax = (1.0 / s).ceil() as i64 + 1;
        let mut brute = BTreeSet::new();
        for i in -kmax..=kmax {
            for j in -kmax..=kmax {
                let c = CubeIndex(vec![i, j]);
                let (cx, cy) = (i as f64 * s, j as f64 * s);
                if pts
                    .iter()
                    .any(|p| (p[0] - cx).abs() <= s / 2.0 && (p[1] - cy).abs() <= s / 2.0)
                {
                    brute.insert(c);
                }
            }
        }
        assert_eq!(cover, brute);
    }

    #[test]
    fn dyadic_children_and_parent() {
        let root = DyadicCube::root(1);
        let kids = root.children();
        assert_eq!(kids.len(), 2);
        assert_eq!(kids[0].lower_corner()[0], Ratio::new(-1, 2));
        assert_eq!(kids[1].lower_corner()[0], Ratio::new(0, 1));
        assert_eq!(kids[0].side(), Ratio::new(1, 2));
        assert!(kids.iter().all(|k| k.parent().unwrap() == root));
        assert_eq!(root.parent(), Err(LatticeError::RootHasNoParent));
        for q in DyadicCube::generation(2, 2) {
            let p = q.parent().unwrap();
            assert_eq!(p.level(), 1);
            assert!(p.contains(&q));
        }
    }

    #[test]
    fn dyadic_generation_counts_and_measure() {
        for dim in 1..=3usize {
            for level in 0..=10u32 {
                let count = 1u128 << (dim as u32 * level);
                let cube = DyadicCube::new(level, vec![0; dim]).unwrap();
                let total = Ratio::new(count as i64, 1) * cube.measure();
                assert_eq!(total, Ratio::new(1, 1));
                if count <= 4096 {
                    let gen = DyadicCube::generation(dim, level);
                    assert_eq!(gen.len() as u128, count);
                    let sum: Ratio<i64> = gen.iter().map(|c| c.measure()).sum();
                    assert_eq!(sum, Ratio::new(1, 1));
                }
            }
        }
    }

    #[test]
    fn grid_function_lookup_rules() {
        let lat = Lattice::covering(&[-1.0], &[1.0], 0.25).unwrap();
        let f = GridFunction::from_fn(lat.clone(), |p| 2.0 * p[0] + 1.0).unwrap();
        for (i, p) in lat.nodes() {
            assert_eq!(f.eval(&p).unwrap(), f.value(i));
        }
        assert_eq!(f.eval(&[0.3]).unwrap(), 1.5);
        let g = f.clone().with_lookup(Lookup::Multilinear);
        assert!((g.eval(&[0.3]).unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(f.eval(&[5.0]).unwrap(), 3.0);
        let z = f.clone().with_outside(OutsidePolicy::ExtendByZero);
        assert_eq!(z.eval(&[5.0]).unwrap(), 0.0);
        let e = f.with_outside(OutsidePolicy::Error);
        assert!(matches!(e.eval(&[5.0]), Err(LatticeError::OutsideLattice(_))));
        assert!(GridFunction::new(lat.clone(), vec![0.0; 2]).is_err());
        assert!(GridFunction::new(lat.clone(), vec![f64::NAN; lat.len()]).is_err());
    }

    proptest! {
        #[test]
        fn pre_of_child_is_identity(level in 1u32..6, seed in 0u64..1000, dim in 1usize..=3) {
            let n = 1u64 << level;
            let index: Vec<u64> = (0..dim).map(|i| (seed.wrapping_mul(2654435761).rotate_left(i as u32 * 7)) % n).collect();
            let q = DyadicCube::new(level, index).unwrap();
            for c in q.children() {
                prop_assert_eq!(c.parent().unwrap(), q.clone());
                prop_assert!(q.contains(&c));
            }
        }

        #[test]
        fn dyadic_point_location_is_unique(level in 0u32..8, num in proptest::collection::vec(0i64..1024, 2)) {
            let p: Vec<Ratio<i64>> = num.iter().map(|&k| Ratio::new(k, 1024) - Ratio::new(1, 2)).collect();
            let owners = DyadicCube::generation(2, level.min(5)).into_iter().filter(|c| c.contains_point(&p)).count();
            prop_assert_eq!(owners, 1);
        }

        #[test]
        fn cover_contains_every_point(pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..30), eps in 0.05f64..2.0) {
            let grid = CubeGrid::for_epsilon(2, eps).unwrap();
            let pts: Vec<Vec<f64>> = pts.into_iter().map(|(a, b)| vec![a, b]).collect();
            let cover = grid.cover(pts.iter().map(|p| p.as_slice()));
            for p in &pts {
                prop_assert!(cover.iter().any(|c| grid.closure_contains(c, p)));
            }
            for c in &cover {
                prop_assert!(pts.iter().any(|p| grid.closure_contains(c, p)));
            }
        }

        #[test]
        fn node_lookup_is_exact(k in 0usize..40, lookup in prop_oneof![Just(Lookup::Nearest), Just(Lookup::Multilinear)]) {
            let lat = Lattice::covering(&[-1.0, -1.0], &[1.0, 1.0], 0.1).unwrap();
            let f = GridFunction::from_fn(lat.clone(), |p| (3.0 * p[0]).sin() + p[1] * p[1]).unwrap().with_lookup(lookup);
            let idx = (k * 37) % lat.len();
            prop_assert_eq!(f.eval(&lat.coords(idx)).unwrap(), f.value(idx));
        }
    }
}
