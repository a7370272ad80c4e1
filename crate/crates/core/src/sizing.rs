//! Sizing fields: per-node SPD tensors bounding oriented edge lengths.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cross2, dot2, sub2, Sym2, Vec2};
use crate::mesh::{neighbors, PointLocator, SimMesh};

/// Smallest eigenvalue kept when projecting tensors to SPD.
pub const LAMBDA_MIN: f64 = 1e-6;

/// One symmetric 2×2 tensor per node, in mesh-space units⁻².
#[derive(Clone, Debug, PartialEq)]
pub struct SizingField {
    pub tensors: Vec<Sym2>,
}

#[derive(Serialize, Deserialize)]
struct SizingJson {
    s: Vec<[f64; 3]>,
}

impl SizingField {
    pub fn new(tensors: Vec<Sym2>) -> SizingField {
        SizingField { tensors }
    }

    pub fn uniform(n: usize, s: Sym2) -> SizingField {
        SizingField { tensors: vec![s; n] }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Every tensor with its eigenvalues clamped to at least `lambda_min`.
    pub fn project_spd(&self, lambda_min: f64) -> SizingField {
        SizingField {
            tensors: self.tensors.iter().map(|s| s.project_spd(lambda_min)).collect(),
        }
    }

    /// Flat `(s11, s12, s22)` per node.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|s| s.to_array()).collect()
    }

    /// Interpolates the tensor components from `src` onto mesh-space query
    /// points and projects the result to SPD.
    pub fn transfer(&self, src: &SimMesh, queries: &[Vec2]) -> Result<SizingField> {
        if self.len() != src.node_count() {
            return Err(Error::Dimension(format!(
                "sizing field has {} tensors for {} nodes",
                self.len(),
                src.node_count()
            )));
        }
        let values = PointLocator::new(src)?.transfer(&self.to_flat(), 3, queries)?;
        Ok(decode_sizing(&values))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<SizingField> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json: SizingJson =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(SizingField {
            tensors: json.s.into_iter().map(Sym2::from_array).collect(),
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = SizingJson {
            s: self.tensors.iter().map(|s| s.to_array()).collect(),
        };
        let mut text = serde_json::to_string(&json).map_err(|e| Error::format(path, e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Builds SPD tensors from `(s11, s12, s22)` triples (already in physical
/// units).
pub fn decode_sizing(channels: &[f64]) -> SizingField {
    assert_eq!(channels.len() % 3, 0, "three sizing channels per node");
    SizingField {
        tensors: channels
            .chunks_exact(3)
            .map(|c| Sym2::new(c[0], c[1], c[2]).project_spd(LAMBDA_MIN))
            .collect(),
    }
}

/// Candidate solution during the support-set recursion.
#[derive(Clone, Copy, Debug)]
enum Candidate {
    /// Contains only the origin.
    Empty,
    /// Degenerate ellipse: the segment `[-p, p]`.
    Segment(Vec2),
    Ellipse(Sym2),
}

const CONTAIN_TOL: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-12;

fn collinear(p: Vec2, q: Vec2) -> bool {
    cross2(p, q).abs() <= COLLINEAR_TOL * dot2(p, p).sqrt() * dot2(q, q).sqrt()
}

impl Candidate {
    fn contains(&self, q: Vec2) -> bool {
        match *self {
            Candidate::Empty => q == [0.0, 0.0],
            Candidate::Segment(p) => {
                collinear(p, q) && dot2(q, q) <= dot2(p, p) * (1.0 + CONTAIN_TOL)
            }
            Candidate::Ellipse(s) => s.quad(q) <= 1.0 + CONTAIN_TOL,
        }
    }

    /// Largest-determinant candidate with every point of `r` on its boundary.
    fn through(r: &[Vec2]) -> Candidate {
        match *r {
            [] => Candidate::Empty,
            [p] => Candidate::Segment(p),
            [p, q] => {
                if collinear(p, q) {
                    return Candidate::Segment(if dot2(p, p) >= dot2(q, q) { p } else { q });
                }
                match Sym2::outer(p).add(&Sym2::outer(q)).inverse() {
                    Some(s) => Candidate::Ellipse(s),
                    None => Candidate::Segment(p),
                }
            }
            [p, q, w] => Candidate::through3(p, q, w),
            _ => unreachable!("support sets hold at most three points"),
        }
    }

    fn through3(p: Vec2, q: Vec2, w: Vec2) -> Candidate {
        // rows: [x², 2xy, y²] · (s11, s12, s22) = 1
        let row = |v: Vec2| [v[0] * v[0], 2.0 * v[0] * v[1], v[1] * v[1]];
        let a = [row(p), row(q), row(w)];
        if let Some(x) = solve3(a, [1.0; 3]) {
            let s = Sym2::new(x[0], x[1], x[2]);
            let (l, _) = s.eigen();
            if l[0] > 0.0 && l.iter().all(|v| v.is_finite()) {
                return Candidate::Ellipse(s);
            }
        }
        // numerically degenerate triple: best two-point ellipse containing all three
        let mut best: Option<Sym2> = None;
        for (x, y, z) in [(p, q, w), (p, w, q), (q, w, p)] {
            if let Candidate::Ellipse(s) = Candidate::through(&[x, y]) {
                if s.quad(z) <= 1.0 + 1e-9 && best.is_none_or(|b| s.det() > b.det()) {
                    best = Some(s);
                }
            }
        }
        match best {
            Some(s) => Candidate::Ellipse(s),
            None => Candidate::Segment(p),
        }
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if d.abs() <= 1e-14 * scale.powi(3) || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    Some(x)
}

fn welzl(points: &[Vec2], support: &mut Vec<Vec2>) -> Candidate {
    if points.is_empty() || support.len() == 3 {
        return Candidate::through(support);
    }
    let (&p, rest) = points.split_last().expect("non-empty");
    let c = welzl(rest, support);
    if c.contains(p) {
        return c;
    }
    support.push(p);
    let c = welzl(rest, support);
    support.pop();
    c
}

/// Maximum-determinant SPD `S` with `pᵀ S p ≤ 1` for every point: the
/// minimum-area ellipse centred at the origin containing all points.
///
/// The quadratic constraint is symmetric under `p -> -p`, so the ellipse
/// also contains the mirrored points. Neighbourhoods that do not span two
/// directions fall back to the isotropic `I / max|p|²`.
pub fn min_zero_centered_ellipse(points: &[Vec2]) -> Result<Sym2> {
    let pts: Vec<Vec2> = points
        .iter()
        .copied()
        .filter(|p| p[0] != 0.0 || p[1] != 0.0)
        .collect();
    if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("ellipse input point".into()));
    }
    let Some(&longest) = pts
        .iter()
        .max_by(|a, b| dot2(**a, **a).total_cmp(&dot2(**b, **b)))
    else {
        return Err(Error::Sizing("no nonzero points to enclose".into()));
    };
    let r2 = dot2(longest, longest);
    if pts.iter().all(|&p| collinear(longest, p)) {
        return Ok(Sym2::scaled_identity(1.0 / r2));
    }
    let mut order = pts.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let s = match welzl(&order, &mut Vec::with_capacity(3)) {
        Candidate::Ellipse(s) => s,
        _ => Sym2::scaled_identity(1.0 / r2),
    };
    let worst = pts.iter().map(|&p| s.quad(p)).fold(0.0, f64::max);
    Ok(if worst > 1.0 { s.scale(1.0 / worst) } else { s })
}

/// Sizing field from the mesh-space neighbourhoods of a triangle mesh: each
/// node gets the tightest ellipse containing its incident edge vectors.
pub fn estimate_sizing(mesh: &SimMesh) -> Result<SizingField> {
    if mesh.dim_mesh() != 2 {
        return Err(Error::Dimension("sizing estimation needs a 2D mesh space".into()));
    }
    let adj = neighbors(mesh)?;
    let isolated: Vec<usize> = (0..adj.len()).filter(|&i| adj[i].is_empty()).collect();
    if !isolated.is_empty() {
        return Err(Error::Sizing(format!("isolated nodes {isolated:?} have no neighbours")));
    }
    let mut tensors = Vec::with_capacity(adj.len());
    for (i, nb) in adj.iter().enumerate() {
        let ui = mesh.uv(i);
        let offsets: Vec<Vec2> = nb.iter().map(|&j| sub2(mesh.uv(j), ui)).collect();
        let s = min_zero_centered_ellipse(&offsets)
            .map_err(|e| Error::Sizing(format!("node {i}: {e}")))?;
        tensors.push(s.project_spd(LAMBDA_MIN));
    }
    Ok(SizingField { tensors })
}
