use dpp_core::czdecomp::{cz_decompose, random_hypothesis_instance, IndicatorGrid, SelectionReason};
use num_rational::Ratio;

/// Cube as (generation, per-axis index).
type Cube = (u32, Vec<u64>);

struct Oracle<'a> {
    a: &'a IndicatorGrid,
    l: u32,
    d1: (u64, u64),
    d2: (u64, u64),
}

impl Oracle<'_> {
    fn count(&self, (level, idx): &Cube) -> u64 {
        let shift = self.a.l_max() - level;
        let n = self.a.dim();
        let mut total = 0;
        let mut cell = vec![0u64; n];
        for local in 0..(1u64 << (shift as usize * n)) {
            let mut rest = local;
            for k in (0..n).rev() {
                cell[k] = (idx[k] << shift) | (rest & ((1 << shift) - 1));
                rest >>= shift;
            }
            total += self.a.get(&cell).unwrap() as u64;
        }
        total
    }

    fn dense(&self, q: &Cube, (p, d): (u64, u64)) -> bool {
        let cells = 1u64 << ((self.a.l_max() - q.0) as usize * self.a.dim());
        self.count(q) * d > p * cells
    }

    fn children((level, idx): &Cube) -> Vec<Cube> {
        let n = idx.len();
        (0..1u64 << n)
            .map(|bits| (level + 1, (0..n).map(|k| 2 * idx[k] + ((bits >> (n - 1 - k)) & 1)).collect()))
            .collect()
    }

    /// Visits an unselected cube; pushes (cube, final-generation flag).
    fn visit(&self, q: &Cube, out: &mut Vec<(Cube, bool)>, residual: &mut Vec<Cube>) {
        let kids = Self::children(q);
        if kids.iter().any(|k| self.dense(k, self.d1)) {
            out.push((q.clone(), false));
            return;
        }
        for k in kids {
            if k.0 < self.l {
                self.visit(&k, out, residual);
            } else if self.dense(&k, self.d2) {
                out.push((k, true));
            } else {
                residual.push(k);
            }
        }
    }
}

#[test]
fn decomposition_matches_recursive_oracle() {
    let mut nonempty = 0;
    for seed in 0..100u64 {
        let dim = 1 + (seed % 2) as usize;
        let l = 1 + (seed % 3) as u32;
        let l_max = l + 1 + (seed % 2) as u32;
        let d1 = Ratio::new(1 + seed % 3, 4);
        let d2 = Ratio::new(1, 2 + seed % 7);
        let (a, b) = random_hypothesis_instance(dim, l, l_max, d1, 1000 + seed).unwrap();
        let res = cz_decompose(&a, &b, d1, d2, l).unwrap();

        let oracle = Oracle { a: &a, l, d1: (*d1.numer(), *d1.denom()), d2: (*d2.numer(), *d2.denom()) };
        let mut expected = Vec::new();
        let mut residual = Vec::new();
        oracle.visit(&(0, vec![0; dim]), &mut expected, &mut residual);
        expected.sort();
        residual.sort();

        let mut got: Vec<(Cube, bool)> = res
            .selected
            .iter()
            .map(|s| ((s.cube.level(), s.cube.index().to_vec()), s.reason == SelectionReason::FinalGeneration))
            .collect();
        got.sort();
        let got_res: Vec<Cube> = res.residual.iter().map(|q| (q.level(), q.index().to_vec())).collect();
        assert_eq!(got, expected, "seed {seed}");
        assert_eq!(got_res, residual, "seed {seed}");
        nonempty += !expected.is_empty() as usize;
    }
    assert!(nonempty > 30, "too few nontrivial instances: {nonempty}");
}
