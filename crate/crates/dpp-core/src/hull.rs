//! Upper convex hulls of point clouds in ℝ² and ℝ³ with exact orientation
//! predicates. Inputs are assumed to be in general position; callers perturb.

use std::collections::HashMap;

use robust::{orient2d, orient3d, Coord, Coord3D};

fn c2(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn c3(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

/// Indices of the upper hull of `(x, z)` points sorted by x, left to right.
pub(crate) fn upper_hull_2d(points: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(points[a][1].total_cmp(&points[b][1])));
    let mut hull: Vec<usize> = Vec::new();
    for &i in &order {
        while hull.len() >= 2 {
            let a = points[hull[hull.len() - 2]];
            let b = points[hull[hull.len() - 1]];
            // Pop b unless the chain turns clockwise at it.
            if orient2d(c2(a), c2(b), c2(points[i])) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        if hull.last().is_some_and(|&j| points[j][0] == points[i][0]) {
            hull.pop();
        }
        hull.push(i);
    }
    hull
}

#[derive(Clone, Debug)]
struct Face {
    v: [usize; 3],
    alive: bool,
    outside: Vec<usize>,
}

/// Triangles of the upper hull of a 3D point cloud, each listed
/// counter-clockwise when seen from above. Returns `None` when the cloud is
/// flat.
pub(crate) fn upper_hull_3d(points: &[[f64; 3]]) -> Option<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    let sq = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
    let i0 = (0..n).min_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap())?;
    let i1 = (0..n).max_by(|&a, &b| sq(&points[i0], &points[a]).total_cmp(&sq(&points[i0], &points[b])))?;
    let line = |p: &[f64; 3]| {
        let (a, b) = (&points[i0], &points[i1]);
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let w = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
        let cr = [w[1] * d[2] - w[2] * d[1], w[2] * d[0] - w[0] * d[2], w[0] * d[1] - w[1] * d[0]];
        cr.iter().map(|c| c * c).sum::<f64>()
    };
    let i2 = (0..n).max_by(|&a, &b| line(&points[a]).total_cmp(&line(&points[b])))?;
    let vol = |p: &[f64; 3]| orient3d(c3(&points[i0]), c3(&points[i1]), c3(&points[i2]), c3(p)).abs();
    let i3 = (0..n).max_by(|&a, &b| vol(&points[a]).total_cmp(&vol(&points[b])))?;
    if vol(&points[i3]) == 0.0 {
        return None;
    }

    let mut faces: Vec<Face> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    let sees = |f: &[usize; 3], p: usize| orient3d(c3(&points[f[0]]), c3(&points[f[1]]), c3(&points[f[2]]), c3(&points[p])) < 0.0;
    let push_face = |faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>, v: [usize; 3]| {
        let id = faces.len();
        for k in 0..3 {
            edges.insert((v[k], v[(k + 1) % 3]), id);
        }
        faces.push(Face {
            v,
            alive: true,
            outside: Vec::new(),
        });
        id
    };
    let tet = [i0, i1, i2, i3];
    for skip in 0..4 {
        let mut v = [0usize; 3];
        let mut k = 0;
        for (j, &t) in tet.iter().enumerate() {
            if j != skip {
                v[k] = t;
                k += 1;
            }
        }
        if sees(&v, tet[skip]) {
            v.swap(1, 2);
        }
        push_face(&mut faces, &mut edges, v);
    }
    for p in 0..n {
        if tet.contains(&p) {
            continue;
        }
        if let Some(f) = (0..4).find(|&f| sees(&faces[f].v, p)) {
            faces[f].outside.push(p);
        }
    }

    let mut stack: Vec<usize> = (0..4).collect();
    while let Some(start) = stack.pop() {
        if !faces[start].alive || faces[start].outside.is_empty() {
            continue;
        }
        let p = faces[start].outside.pop().unwrap();
        // Visible region, grown from the conflict face.
        let mut visible = vec![start];
        let mut seen = std::collections::HashSet::from([start]);
        let mut k = 0;
        while k < visible.len() {
            let v = faces[visible[k]].v;
            for e in 0..3 {
                let twin = edges[&(v[(e + 1) % 3], v[e])];
                if !seen.contains(&twin) {
                    seen.insert(twin);
                    if sees(&faces[twin].v, p) {
                        visible.push(twin);
                    }
                }
            }
            k += 1;
        }
        let vis: std::collections::HashSet<usize> = visible.iter().copied().collect();
        let mut horizon = Vec::new();
        let mut orphans = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for e in 0..3 {
                let twin = edges[&(v[(e + 1) % 3], v[e])];
                if !vis.contains(&twin) {
                    horizon.push((v[e], v[(e + 1) % 3]));
                }
            }
            orphans.append(&mut faces[f].outside);
            faces[f].alive = false;
        }
        for &f in &visible {
            let v = faces[f].v;
            for e in 0..3 {
                if edges.get(&(v[e], v[(e + 1) % 3])) == Some(&f) {
                    edges.remove(&(v[e], v[(e + 1) % 3]));
                }
            }
        }
        let fresh: Vec<usize> = horizon
            .into_iter()
            .map(|(a, b)| push_face(&mut faces, &mut edges, [a, b, p]))
            .collect();
        for q in orphans {
            if let Some(&f) = fresh.iter().find(|&&f| sees(&faces[f].v, q)) {
                faces[f].outside.push(q);
            }
        }
        stack.extend(fresh);
    }

    Some(
        faces
            .into_iter()
            .filter(|f| f.alive)
            .map(|f| f.v)
            .filter(|v| {
                let xy = |i: usize| [points[i][0], points[i][1]];
                orient2d(c2(xy(v[0])), c2(xy(v[1])), c2(xy(v[2]))) > 0.0
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_hull_of_parabola_samples() {
        let pts: Vec<[f64; 2]> = (-5..=5).map(|k| [k as f64, -((k * k) as f64)]).collect();
        assert_eq!(upper_hull_2d(&pts).len(), 11);
        let mut flat = pts.clone();
        flat.push([0.5, -10.0]);
        assert_eq!(upper_hull_2d(&flat).len(), 11);
        let tent = vec![[-1.0, 0.0], [-0.5, 0.0], [0.0, 1.0], [0.5, 0.0], [1.0, 0.0]];
        assert_eq!(upper_hull_2d(&tent), vec![0, 2, 4]);
    }

    #[test]
    fn upper_hull_of_pyramid() {
        let mut pts = vec![[0.0, 0.0, 1.0]];
        for (x, y) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (0.1, 0.2)] {
            pts.push([x, y, if x == 0.1 { 0.3 } else { 0.0 }]);
        }
        let tri = upper_hull_3d(&pts).unwrap();
        assert_eq!(tri.len(), 4);
        assert!(tri.iter().all(|t| t.contains(&0) && !t.contains(&5)));
    }
}
