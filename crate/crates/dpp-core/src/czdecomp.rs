//! Stopped Calderón–Zygmund selection on dyadic indicator grids of
//! `Q₁ = (−1/2, 1/2)ᴺ`. All densities are compared as exact integer cross
//! products; measures are reported as reduced fractions.

use std::io::{Read, Write};
use std::path::Path;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::lattice::DyadicCube;

/// Largest supported `N·L_max`.
pub const MAX_CELL_BITS: u32 = 26;

const MAGIC: &[u8; 4] = b"DPPB";

#[derive(Debug, Error)]
pub enum CzError {
    #[error("grid too fine: N·L_max = {0} exceeds {MAX_CELL_BITS}")]
    TooLarge(u32),
    #[error("dimension must be positive")]
    Dimension,
    #[error("grids differ in shape: ({0}, {1}) vs ({2}, {3})")]
    Shape(usize, u32, usize, u32),
    #[error("A is not contained in B at cell {0}")]
    NotSubset(usize),
    #[error("|A| = {measure} exceeds δ₁ = {delta1}")]
    MeasureTooLarge { measure: Ratio<u64>, delta1: Ratio<u64> },
    #[error("generations L = {l} must lie in 1..={l_max}")]
    Generations { l: u32, l_max: u32 },
    #[error("threshold {0} is not in (0, 1)")]
    Threshold(Ratio<u64>),
    #[error("hypothesis violated: {reason:?} selection of {witness:?} leaves B")]
    Hypothesis { witness: DyadicCube, reason: SelectionReason },
    #[error("cell index {0:?} out of range")]
    CellIndex(Vec<u64>),
    #[error("bitmap: {0}")]
    Bitmap(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("audit failed: {0:?}")]
    Audit(Vec<String>),
}

/// Union of finest dyadic cells of generation `L_max`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorGrid {
    dim: usize,
    l_max: u32,
    cells: Vec<bool>,
}

fn check_shape(dim: usize, l_max: u32) -> Result<usize, CzError> {
    if dim == 0 {
        return Err(CzError::Dimension);
    }
    let bits = dim as u32 * l_max;
    if bits > MAX_CELL_BITS {
        return Err(CzError::TooLarge(bits));
    }
    Ok(1usize << bits)
}

impl IndicatorGrid {
    pub fn empty(dim: usize, l_max: u32) -> Result<Self, CzError> {
        let n = check_shape(dim, l_max)?;
        Ok(Self { dim, l_max, cells: vec![false; n] })
    }

    pub fn full(dim: usize, l_max: u32) -> Result<Self, CzError> {
        let mut g = Self::empty(dim, l_max)?;
        g.cells.fill(true);
        Ok(g)
    }

    pub fn from_cells(dim: usize, l_max: u32, cells: Vec<bool>) -> Result<Self, CzError> {
        let n = check_shape(dim, l_max)?;
        if cells.len() != n {
            return Err(CzError::Bitmap(format!("expected {n} cells, got {}", cells.len())));
        }
        Ok(Self { dim, l_max, cells })
    }

    /// Cells selected by a predicate on their multi-index.
    pub fn from_fn(dim: usize, l_max: u32, mut f: impl FnMut(&[u64]) -> bool) -> Result<Self, CzError> {
        let mut g = Self::empty(dim, l_max)?;
        let mut idx = vec![0u64; dim];
        for flat in 0..g.cells.len() {
            g.unflatten(flat, &mut idx);
            g.cells[flat] = f(&idx);
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn count(&self) -> u64 {
        self.cells.iter().filter(|&&c| c).count() as u64
    }

    pub fn measure(&self) -> Ratio<u64> {
        Ratio::new(self.count(), self.cells.len() as u64)
    }

    fn flatten(&self, idx: &[u64]) -> Result<usize, CzError> {
        let side = 1u64 << self.l_max;
        if idx.len() != self.dim || idx.iter().any(|&k| k >= side) {
            return Err(CzError::CellIndex(idx.to_vec()));
        }
        Ok(idx.iter().fold(0usize, |acc, &k| (acc << self.l_max) | k as usize))
    }

    fn unflatten(&self, mut flat: usize, idx: &mut [u64]) {
        let mask = (1usize << self.l_max) - 1;
        for slot in idx.iter_mut().rev() {
            *slot = (flat & mask) as u64;
            flat >>= self.l_max;
        }
    }

    pub fn get(&self, idx: &[u64]) -> Result<bool, CzError> {
        Ok(self.cells[self.flatten(idx)?])
    }

    pub fn set(&mut self, idx: &[u64], value: bool) -> Result<(), CzError> {
        let flat = self.flatten(idx)?;
        self.cells[flat] = value;
        Ok(())
    }

    /// Fills every finest cell inside `cube`.
    pub fn fill_cube(&mut self, cube: &DyadicCube, value: bool) -> Result<(), CzError> {
        for flat in self.cube_cells(cube)? {
            self.cells[flat] = value;
        }
        Ok(())
    }

    /// Flat indices of the finest cells inside `cube`, in lexicographic order.
    pub fn cube_cells(&self, cube: &DyadicCube) -> Result<Vec<usize>, CzError> {
        if cube.dim() != self.dim || cube.level() > self.l_max {
            return Err(CzError::CellIndex(cube.index().to_vec()));
        }
        let shift = self.l_max - cube.level();
        let per_axis = 1u64 << shift;
        let total = 1usize << (shift as usize * self.dim);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0u64; self.dim];
        for mut local in 0..total as u64 {
            for (a, slot) in idx.iter_mut().enumerate().rev() {
                *slot = (cube.index()[a] << shift) + local % per_axis;
                local /= per_axis;
            }
            out.push(self.flatten(&idx)?);
        }
        Ok(out)
    }

    /// Number of cells of `self` inside `cube`, by direct scan.
    pub fn count_in(&self, cube: &DyadicCube) -> Result<u64, CzError> {
        Ok(self.cube_cells(cube)?.into_iter().filter(|&f| self.cells[f]).count() as u64)
    }

    fn same_shape(&self, other: &Self) -> Result<(), CzError> {
        if self.dim != other.dim || self.l_max != other.l_max {
            return Err(CzError::Shape(self.dim, self.l_max, other.dim, other.l_max));
        }
        Ok(())
    }

    pub fn is_subset(&self, other: &Self) -> Result<bool, CzError> {
        self.same_shape(other)?;
        Ok(self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b))
    }

    pub fn union(&self, other: &Self) -> Result<Self, CzError> {
        self.same_shape(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| a || b).collect();
        Ok(Self { cells, ..self.clone() })
    }

    /// Header `DPPB`, `N` and `L_max` as little-endian u32, then the cells
    /// packed least significant bit first.
    pub fn write_bitmap<W: Write>(&self, mut w: W) -> Result<(), CzError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.l_max.to_le_bytes())?;
        let mut bytes = vec![0u8; self.cells.len().div_ceil(8)];
        for (i, _) in self.cells.iter().enumerate().filter(|(_, &c)| c) {
            bytes[i / 8] |= 1 << (i % 8);
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_bitmap<R: Read>(mut r: R) -> Result<Self, CzError> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|e| CzError::Bitmap(format!("truncated header: {e}")))?;
        if &head[..4] != MAGIC {
            return Err(CzError::Bitmap("bad magic".into()));
        }
        let dim = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let l_max = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let n = check_shape(dim, l_max)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n.div_ceil(8) {
            return Err(CzError::Bitmap(format!("expected {} payload bytes, got {}", n.div_ceil(8), bytes.len())));
        }
        if n % 8 != 0 && bytes[n / 8] >> (n % 8) != 0 {
            return Err(CzError::Bitmap("padding bits set".into()));
        }
        let cells = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self { dim, l_max, cells })
    }

    pub fn save(&self, path: &Path) -> Result<(), CzError> {
        let mut buf = Vec::new();
        self.write_bitmap(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CzError> {
        Self::read_bitmap(std::fs::File::open(path)?)
    }
}

/// Cell counts per dyadic cube, one level per generation.
struct Pyramid {
    dim: usize,
    levels: Vec<Vec<u64>>,
}

impl Pyramid {
    fn new(g: &IndicatorGrid) -> Self {
        let dim = g.dim;
        let mut levels = vec![g.cells.iter().map(|&c| c as u64).collect::<Vec<_>>()];
        for level in (0..g.l_max).rev() {
            let fine = levels.last().unwrap();
            let side = 1usize << level;
            let mut coarse = vec![0u64; side.pow(dim as u32)];
            let fine_bits = level + 1;
            for (flat, &c) in fine.iter().enumerate() {
                // Drop the lowest bit of every axis coordinate.
                let mut parent = 0usize;
                for a in 0..dim {
                    let k = (flat >> (fine_bits as usize * (dim - 1 - a))) & ((1 << fine_bits) - 1);
                    parent = (parent << level) | (k >> 1);
                }
                coarse[parent] += c;
            }
            levels.push(coarse);
        }
        levels.reverse();
        Self { dim, levels }
    }

    fn count(&self, cube: &DyadicCube) -> u64 {
        let level = cube.level();
        let flat = cube.index().iter().fold(0usize, |acc, &k| (acc << level) | k as usize);
        debug_assert_eq!(cube.dim(), self.dim);
        self.levels[level as usize][flat]
    }
}

fn check_delta(d: Ratio<u64>) -> Result<(), CzError> {
    if *d.numer() == 0 || d >= Ratio::from_integer(1) {
        return Err(CzError::Threshold(d));
    }
    Ok(())
}

/// `count / cells > δ` in exact integer arithmetic.
fn exceeds(count: u64, cells: u64, delta: Ratio<u64>) -> bool {
    count as u128 * *delta.denom() as u128 > *delta.numer() as u128 * cells as u128
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SelectionReason {
    /// Selected as `pre(child)` because the child exceeded δ₁.
    Predecessor { child: DyadicCube },
    /// Selected at generation L because it exceeded δ₂.
    FinalGeneration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectedCube {
    pub cube: DyadicCube,
    pub reason: SelectionReason,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CzResult {
    pub dim: usize,
    pub l_max: u32,
    pub generations: u32,
    pub delta1: Ratio<u64>,
    pub delta2: Ratio<u64>,
    /// Generation-major, index-lexicographic.
    pub selected: Vec<SelectedCube>,
    /// Generation-L cubes outside every selected cube.
    pub residual: Vec<DyadicCube>,
    pub measure_a: Ratio<u64>,
    pub measure_b: Ratio<u64>,
    /// `|A ∩ ⋃𝒬_B|` and `|A ∩ ⋃𝒢_L|`.
    pub a_in_selected: Ratio<u64>,
    pub a_in_residual: Ratio<u64>,
    /// `Σ_{𝒬_B} δ₁|Q|` and `Σ_{𝒢_L} δ₂|Q|`.
    pub selected_bound: Ratio<u64>,
    pub residual_bound: Ratio<u64>,
    /// `δ₁|B| + δ₂`.
    pub bound: Ratio<u64>,
    pub conclusion_holds: bool,
}

impl CzResult {
    pub fn selected_cubes(&self) -> impl Iterator<Item = &DyadicCube> {
        self.selected.iter().map(|s| &s.cube)
    }
}

fn validate(a: &IndicatorGrid, b: &IndicatorGrid, d1: Ratio<u64>, d2: Ratio<u64>, l: u32) -> Result<(), CzError> {
    a.same_shape(b)?;
    check_delta(d1)?;
    check_delta(d2)?;
    if l == 0 || l > a.l_max {
        return Err(CzError::Generations { l, l_max: a.l_max });
    }
    if let Some(i) = a.cells.iter().zip(&b.cells).position(|(&x, &y)| x && !y) {
        return Err(CzError::NotSubset(i));
    }
    if a.measure() > d1 {
        return Err(CzError::MeasureTooLarge { measure: a.measure(), delta1: d1 });
    }
    Ok(())
}

fn cells_in(dim: usize, l_max: u32, level: u32) -> u64 {
    1u64 << ((l_max - level) as usize * dim)
}

/// Runs the stopped selection for `L` generations. A selection whose cube is
/// not inside B aborts with that cube as witness.
pub fn cz_decompose(a: &IndicatorGrid, b: &IndicatorGrid, delta1: Ratio<u64>, delta2: Ratio<u64>, l: u32) -> Result<CzResult, CzError> {
    validate(a, b, delta1, delta2, l)?;
    let (dim, l_max) = (a.dim, a.l_max);
    let pa = Pyramid::new(a);
    let pb = Pyramid::new(b);
    let inside_b = |q: &DyadicCube| pb.count(q) == cells_in(dim, l_max, q.level());

    let mut selected = Vec::new();
    let mut residual = Vec::new();
    let mut active = vec![DyadicCube::root(dim)];
    for level in 1..=l {
        let cells = cells_in(dim, l_max, level);
        let mut next = Vec::new();
        for parent in &active {
            let kids = parent.children();
            if let Some(child) = kids.iter().find(|q| exceeds(pa.count(q), cells, delta1)) {
                let reason = SelectionReason::Predecessor { child: child.clone() };
                if !inside_b(parent) {
                    return Err(CzError::Hypothesis { witness: parent.clone(), reason });
                }
                selected.push(SelectedCube { cube: parent.clone(), reason });
                continue;
            }
            if level < l {
                next.extend(kids);
                continue;
            }
            for q in kids {
                if exceeds(pa.count(&q), cells, delta2) {
                    let reason = SelectionReason::FinalGeneration;
                    if !inside_b(&q) {
                        return Err(CzError::Hypothesis { witness: q, reason });
                    }
                    selected.push(SelectedCube { cube: q, reason });
                } else {
                    residual.push(q);
                }
            }
        }
        next.sort();
        active = next;
    }
    selected.sort_by(|x, y| x.cube.cmp(&y.cube));
    residual.sort();

    let total = a.cells.len() as u64;
    let frac = |n: u64| Ratio::new(n, total);
    let a_sel: u64 = selected.iter().map(|s| pa.count(&s.cube)).sum();
    let a_res: u64 = residual.iter().map(|q| pa.count(q)).sum();
    let vol_sel: u64 = selected.iter().map(|s| cells_in(dim, l_max, s.cube.level())).sum();
    let vol_res = residual.len() as u64 * cells_in(dim, l_max, l);
    let measure_a = a.measure();
    let measure_b = b.measure();
    let bound = delta1 * measure_b + delta2;
    Ok(CzResult {
        dim,
        l_max,
        generations: l,
        delta1,
        delta2,
        selected,
        residual,
        measure_a,
        measure_b,
        a_in_selected: frac(a_sel),
        a_in_residual: frac(a_res),
        selected_bound: delta1 * frac(vol_sel),
        residual_bound: delta2 * frac(vol_res),
        bound,
        conclusion_holds: measure_a <= bound,
    })
}

/// Exhaustive scan of both inclusion hypotheses over generations `1..=L`.
pub fn check_hypotheses(a: &IndicatorGrid, b: &IndicatorGrid, delta1: Ratio<u64>, delta2: Ratio<u64>, l: u32) -> Result<(), CzError> {
    validate(a, b, delta1, delta2, l)?;
    let (dim, l_max) = (a.dim, a.l_max);
    let pa = Pyramid::new(a);
    let pb = Pyramid::new(b);
    let inside_b = |q: &DyadicCube| pb.count(q) == cells_in(dim, l_max, q.level());
    for level in 1..=l {
        let cells = cells_in(dim, l_max, level);
        for q in DyadicCube::generation(dim, level) {
            let count = pa.count(&q);
            if exceeds(count, cells, delta1) {
                let parent = q.parent().expect("level ≥ 1");
                if !inside_b(&parent) {
                    return Err(CzError::Hypothesis { witness: parent, reason: SelectionReason::Predecessor { child: q } });
                }
            }
            if level == l && exceeds(count, cells, delta2) && !inside_b(&q) {
                return Err(CzError::Hypothesis { witness: q, reason: SelectionReason::FinalGeneration });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CzAuditReport {
    pub selected: usize,
    pub residual: usize,
    pub measure_a: Ratio<u64>,
    /// `Σ_{𝒬_B}|A∩Q| + Σ_{𝒢_L}|A∩Q|`.
    pub decomposed_measure: Ratio<u64>,
    /// `Σ_{𝒬_B}|Q| + Σ_{𝒢_L}|Q|`, which must be 1.
    pub covered_volume: Ratio<u64>,
    pub bound: Ratio<u64>,
}

/// Recounts every claim of `result` from A and B by direct scans.
pub fn cz_audit(a: &IndicatorGrid, b: &IndicatorGrid, result: &CzResult) -> Result<CzAuditReport, CzError> {
    a.same_shape(b)?;
    let (dim, l_max, l) = (a.dim, a.l_max, result.generations);
    let (d1, d2) = (result.delta1, result.delta2);
    let mut fails = Vec::new();
    let cubes: Vec<&DyadicCube> = result.selected_cubes().collect();
    for (i, p) in cubes.iter().enumerate() {
        for q in &cubes[i + 1..] {
            if p.contains(q) || q.contains(p) {
                fails.push(format!("selected cubes {p:?} and {q:?} overlap"));
            }
        }
    }
    let mut a_total = 0u64;
    let mut volume = 0u64;
    for s in &result.selected {
        let q = &s.cube;
        let cells = cells_in(dim, l_max, q.level());
        let count = a.count_in(q)?;
        a_total += count;
        volume += cells;
        if b.count_in(q)? != cells {
            fails.push(format!("{q:?} is not inside B"));
        }
        if exceeds(count, cells, d1) {
            fails.push(format!("{q:?} has density above δ₁"));
        }
        match &s.reason {
            SelectionReason::Predecessor { child } => {
                if child.parent().ok().as_ref() != Some(q) || !exceeds(a.count_in(child)?, cells_in(dim, l_max, child.level()), d1) || child.level() > l {
                    fails.push(format!("{q:?} has an invalid predecessor witness"));
                }
            }
            SelectionReason::FinalGeneration => {
                if q.level() != l || !exceeds(count, cells, d2) {
                    fails.push(format!("{q:?} fails the generation-L rule"));
                }
            }
        }
    }
    for q in &result.residual {
        let cells = cells_in(dim, l_max, q.level());
        let count = a.count_in(q)?;
        a_total += count;
        volume += cells;
        if q.level() != l {
            fails.push(format!("residual {q:?} is not of generation L"));
        }
        if cubes.iter().any(|p| p.contains(q)) {
            fails.push(format!("residual {q:?} lies in a selected cube"));
        }
        if exceeds(count, cells, d2) {
            fails.push(format!("residual {q:?} has density above δ₂"));
        }
    }
    let total = a.len() as u64;
    if volume != total {
        fails.push(format!("cubes cover {volume} of {total} cells"));
    }
    if a_total != a.count() {
        fails.push(format!("decomposition counts {a_total} cells of A, expected {}", a.count()));
    }
    let bound = d1 * b.measure() + d2;
    if a.measure() > bound {
        fails.push("conclusion |A| ≤ δ₁|B| + δ₂ fails".into());
    }
    if !fails.is_empty() {
        return Err(CzError::Audit(fails));
    }
    Ok(CzAuditReport {
        selected: result.selected.len(),
        residual: result.residual.len(),
        measure_a: a.measure(),
        decomposed_measure: Ratio::new(a_total, total),
        covered_volume: Ratio::new(volume, total),
        bound,
    })
}

/// A hypothesis-satisfying pair: disjoint dyadic cubes of generation
/// `1..=L` are chosen first and form the core of B; A fills each of them at
/// density at most δ₁, sometimes concentrated in a subcube.
pub fn random_hypothesis_instance(dim: usize, l: u32, l_max: u32, delta1: Ratio<u64>, seed: u64) -> Result<(IndicatorGrid, IndicatorGrid), CzError> {
    check_delta(delta1)?;
    if l == 0 || l > l_max {
        return Err(CzError::Generations { l, l_max });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut a = IndicatorGrid::empty(dim, l_max)?;
    let mut b = IndicatorGrid::empty(dim, l_max)?;
    let mut chosen = Vec::new();
    let mut stack = vec![DyadicCube::root(dim)];
    while let Some(q) = stack.pop() {
        for kid in q.children() {
            let roll: f64 = rng.gen();
            if roll < 0.3 {
                chosen.push(kid);
            } else if roll < 0.75 && kid.level() < l {
                stack.push(kid);
            }
        }
    }
    for p in &chosen {
        b.fill_cube(p, true)?;
        let cells = a.cube_cells(p)?;
        let cap = (*delta1.numer() as u128 * cells.len() as u128 / *delta1.denom() as u128) as usize;
        let k = rng.gen_range(0..=cap);
        let mut order = cells.clone();
        if rng.gen_bool(0.5) && p.level() < l_max {
            // Put the cells of one random descendant first.
            let depth = rng.gen_range(1..=(l_max - p.level()).min(2));
            let mut sub = p.clone();
            for _ in 0..depth {
                let kids = sub.children();
                sub = kids[rng.gen_range(0..kids.len())].clone();
            }
            let inner: std::collections::HashSet<usize> = a.cube_cells(&sub)?.into_iter().collect();
            order.sort_by_key(|f| !inner.contains(f));
            let split = inner.len().min(order.len());
            shuffle(&mut order[split..], &mut rng);
            shuffle(&mut order[..split], &mut rng);
        } else {
            shuffle(&mut order, &mut rng);
        }
        for &f in &order[..k] {
            a.cells[f] = true;
        }
    }
    for c in b.cells.iter_mut() {
        if rng.gen_bool(0.05) {
            *c = true;
        }
    }
    Ok((a, b))
}

fn shuffle<T>(xs: &mut [T], rng: &mut impl Rng) {
    use rand::seq::SliceRandom;
    xs.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Ratio<u64> {
        Ratio::new(n, d)
    }

    #[test]
    fn empty_a_selects_nothing() {
        let a = IndicatorGrid::empty(2, 4).unwrap();
        let b = IndicatorGrid::empty(2, 4).unwrap();
        let res = cz_decompose(&a, &b, r(1, 2), r(1, 8), 2).unwrap();
        assert!(res.selected.is_empty());
        assert_eq!(res.residual.len(), 16);
        assert_eq!(res.measure_a, r(0, 1));
        assert_eq!(res.bound, r(1, 8));
        assert!(res.conclusion_holds);
        cz_audit(&a, &b, &res).unwrap();
    }

    #[test]
    fn pyramid_matches_direct_counts() {
        let (a, _) = random_hypothesis_instance(2, 3, 5, r(1, 3), 9).unwrap();
        let p = Pyramid::new(&a);
        for level in 0..=5 {
            for q in DyadicCube::generation(2, level) {
                assert_eq!(p.count(&q), a.count_in(&q).unwrap());
            }
        }
    }

    #[test]
    fn single_cell_cascade() {
        // N = 1, L_max = 4: cell 5 lies in generation-1 cube 0.
        let mut a = IndicatorGrid::empty(1, 4).unwrap();
        a.set(&[5], true).unwrap();
        let mut b = IndicatorGrid::empty(1, 4).unwrap();
        b.fill_cube(&DyadicCube::new(1, vec![0]).unwrap(), true).unwrap();
        let res = cz_decompose(&a, &b, r(1, 2), r(1, 100), 4).unwrap();
        // Ancestor densities 1/8, 1/4, 1/2 stay at or below 1/2; the full
        // generation-4 cell exceeds δ₁, so its predecessor is taken.
        assert_eq!(res.selected.len(), 1);
        assert_eq!(res.selected[0].cube, DyadicCube::new(3, vec![2]).unwrap());
        assert_eq!(
            res.selected[0].reason,
            SelectionReason::Predecessor {
                child: DyadicCube::new(4, vec![5]).unwrap()
            }
        );
        assert_eq!(res.residual.len(), 14);
        cz_audit(&a, &b, &res).unwrap();
    }

    #[test]
    fn threshold_selects_predecessor() {
        let mut a = IndicatorGrid::empty(1, 3).unwrap();
        a.set(&[2], true).unwrap();
        a.set(&[3], true).unwrap();
        let b = IndicatorGrid::from_fn(1, 3, |i| i[0] < 4).unwrap();
        let res = cz_decompose(&a, &b, r(1, 2), r(1, 2), 3).unwrap();
        let sel: Vec<_> = res.selected_cubes().cloned().collect();
        assert_eq!(sel, vec![DyadicCube::new(1, vec![0]).unwrap()]);
        assert_eq!(
            res.selected[0].reason,
            SelectionReason::Predecessor {
                child: DyadicCube::new(2, vec![1]).unwrap()
            }
        );
    }

    #[test]
    fn hypothesis_violation_names_witness() {
        let mut a = IndicatorGrid::empty(1, 3).unwrap();
        a.set(&[2], true).unwrap();
        a.set(&[3], true).unwrap();
        let b = a.clone();
        let err = cz_decompose(&a, &b, r(1, 2), r(1, 2), 3).unwrap_err();
        assert!(matches!(err, CzError::Hypothesis { ref witness, .. } if *witness == DyadicCube::new(1, vec![0]).unwrap()));
        assert!(check_hypotheses(&a, &b, r(1, 2), r(1, 2), 3).is_err());
    }

    #[test]
    fn precondition_errors() {
        let a = IndicatorGrid::full(1, 3).unwrap();
        let b = IndicatorGrid::empty(1, 3).unwrap();
        assert!(matches!(cz_decompose(&a, &b, r(1, 2), r(1, 2), 2), Err(CzError::NotSubset(0))));
        assert!(matches!(cz_decompose(&a, &a, r(1, 2), r(1, 2), 2), Err(CzError::MeasureTooLarge { .. })));
        assert!(matches!(cz_decompose(&b, &b, r(1, 1), r(1, 2), 2), Err(CzError::Threshold(_))));
        assert!(matches!(cz_decompose(&b, &b, r(1, 2), r(1, 2), 4), Err(CzError::Generations { .. })));
        assert!(matches!(IndicatorGrid::empty(3, 9), Err(CzError::TooLarge(27))));
    }

    #[test]
    fn generated_instances_satisfy_conclusion() {
        for seed in 0..200 {
            let dim = 1 + (seed % 2) as usize;
            let l = 1 + (seed % 4) as u32;
            let (d1, d2) = (r(1 + seed % 3, 4), r(1, 16));
            let (a, b) = random_hypothesis_instance(dim, l, l + 2, d1, seed).unwrap();
            check_hypotheses(&a, &b, d1, d2, l).unwrap();
            let res = cz_decompose(&a, &b, d1, d2, l).unwrap();
            assert!(res.conclusion_holds, "seed {seed}");
            assert!(res.measure_a <= res.selected_bound + res.residual_bound);
            assert!(res.selected_bound <= d1 * res.measure_b);
            cz_audit(&a, &b, &res).unwrap();
        }
    }

    #[test]
    fn audit_detects_duplicate() {
        let (a, b) = (0..)
            .map(|s| random_hypothesis_instance(2, 3, 5, r(1, 2), s).unwrap())
            .find(|(a, b)| cz_decompose(a, b, r(1, 2), r(1, 8), 3).is_ok_and(|res| !res.selected.is_empty()))
            .unwrap();
        let mut res = cz_decompose(&a, &b, r(1, 2), r(1, 8), 3).unwrap();
        res.selected.push(res.selected[0].clone());
        let CzError::Audit(msgs) = cz_audit(&a, &b, &res).unwrap_err() else {
            panic!("expected audit failure")
        };
        assert!(msgs.iter().any(|m| m.contains("overlap")));
    }

    #[test]
    fn bitmap_round_trip() {
        let (a, _) = random_hypothesis_instance(2, 2, 3, r(1, 2), 4).unwrap();
        let mut buf = Vec::new();
        a.write_bitmap(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 8);
        assert_eq!(IndicatorGrid::read_bitmap(&buf[..]).unwrap(), a);
        let g = IndicatorGrid::from_fn(1, 2, |i| i[0] == 3).unwrap();
        let mut buf = Vec::new();
        g.write_bitmap(&mut buf).unwrap();
        assert_eq!(buf[12..], [0b1000]);
        buf[12] |= 0x80;
        assert!(IndicatorGrid::read_bitmap(&buf[..]).is_err());
        assert!(IndicatorGrid::read_bitmap(&b"XXXX"[..]).is_err());
    }
}
