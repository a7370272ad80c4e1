//! Fixed-radius neighbour search on a uniform spatial hash.

use std::collections::HashMap;

use crate::linalg::{sub3, Vec3};

type Cell = (i64, i64, i64);

fn cell_of(p: Vec3, inv: f64) -> Cell {
    (
        (p[0] * inv).floor() as i64,
        (p[1] * inv).floor() as i64,
        (p[2] * inv).floor() as i64,
    )
}

/// All unordered pairs `(i, j)`, `i < j`, with `|p_i - p_j| < r`, sorted.
///
/// Points are hashed into cubes of side `r`; each point scans the 27 cubes
/// around its own.
pub fn radius_neighbors(points: &[Vec3], r: f64) -> Vec<(usize, usize)> {
    assert!(r > 0.0, "radius must be positive");
    let inv = 1.0 / r;
    let r2 = r * r;
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(cell_of(p, inv)).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let (cx, cy, cz) = cell_of(p, inv);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let d = sub3(points[j], p);
                        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < r2 {
                            pairs.push((i, j));
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vec3], r: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = sub3(points[i], points[j]);
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < r * r {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn collinear_points_pair_with_adjacent_only() {
        let pts = [[0.0, 0.0, 0.0], [0.04, 0.0, 0.0], [0.08, 0.0, 0.0]];
        let got = radius_neighbors(&pts, 0.05);
        assert_eq!(got, brute(&pts, 0.05));
        assert_eq!(got, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn single_point_has_no_pairs() {
        assert!(radius_neighbors(&[[1.0, 2.0, 3.0]], 0.5).is_empty());
    }

    #[test]
    fn coincident_points_all_pair() {
        let pts = [[0.3, -0.2, 0.1]; 4];
        assert_eq!(radius_neighbors(&pts, 0.1).len(), 6);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 0..500),
            r in 0.01f64..0.5,
        ) {
            prop_assert_eq!(radius_neighbors(&pts, r), brute(&pts, r));
        }
    }
}
