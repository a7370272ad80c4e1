//! Local remeshing of triangle meshes driven by a sizing field.
//!
//! An edge `u_ij` is valid when `u_ijᵀ ½(S_i + S_j) u_ij ≤ 1`. [`remesh`]
//! splits invalid edges (longest in the metric first), flips towards the
//! anisotropic Delaunay triangulation, collapses edges whose removal keeps
//! every edge valid (shortest first) and flips once more.

use crate::error::{Error, Result};
use crate::linalg::{cross2, sub2, Sym2, Vec2};
use crate::mesh::{Cells, NodeType, SimMesh};
use crate::sizing::{SizingField, LAMBDA_MIN};

/// Squared metric length `uᵀ ½(S_i + S_j) u`.
pub fn edge_metric(u: Vec2, s_i: &Sym2, s_j: &Sym2) -> f64 {
    0.5 * (s_i.quad(u) + s_j.quad(u))
}

/// Anisotropic Delaunay test for the interior edge `(i, j)` whose incident
/// triangles are `(i, j, k)` and `(j, i, l)`, both counter-clockwise.
///
/// Returns true when the edge should be replaced by `(k, l)`: the metric
/// angles opposite the edge at `k` and `l` sum to more than π under the
/// averaged tensor `S_A`. With `S = I` this is the classic in-circle test.
/// Returns false when the configuration is not a strictly convex quad with
/// the stated orientation.
pub fn should_flip(u_i: Vec2, u_j: Vec2, u_k: Vec2, u_l: Vec2, s: [&Sym2; 4]) -> bool {
    let u_ik = sub2(u_i, u_k);
    let u_jk = sub2(u_j, u_k);
    let u_il = sub2(u_i, u_l);
    let u_jl = sub2(u_j, u_l);
    let ck = cross2(u_ik, u_jk);
    let cl = cross2(u_jl, u_il);
    if !(ck > 0.0 && cl > 0.0) {
        return false;
    }
    // the replacement triangles (i, l, k) and (l, j, k) must stay positive
    let a1 = cross2(sub2(u_l, u_i), sub2(u_k, u_i));
    let a2 = cross2(sub2(u_j, u_l), sub2(u_k, u_l));
    if !(a1 > 0.0 && a2 > 0.0) {
        return false;
    }
    let s_a = s[0].add(s[1]).add(s[2]).add(s[3]).scale(0.25);
    ck * s_a.bilinear(u_il, u_jl) + s_a.bilinear(u_jk, u_ik) * cl < 0.0
}

/// Budgets and sweep limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemeshConfig {
    /// Split budget as a multiple of the initial edge count.
    pub split_budget_factor: f64,
    /// Maximum sweeps per flip pass.
    pub flip_sweeps: usize,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        RemeshConfig {
            split_budget_factor: 4.0,
            flip_sweeps: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RemeshStats {
    pub splits: usize,
    pub flips: usize,
    pub collapses: usize,
}

/// Remeshed state with the sizing field carried along to the new nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct RemeshOutput {
    pub mesh: SimMesh,
    pub sizing: SizingField,
    /// Splitting stopped because the budget ran out; some edges may still
    /// be invalid.
    pub budget_exhausted: bool,
    pub stats: RemeshStats,
}

/// Mutable triangle soup with per-vertex incidence lists.
struct Work {
    dim_world: usize,
    n_quantities: usize,
    uv: Vec<Vec2>,
    world: Vec<f64>,
    quant: Vec<f64>,
    types: Vec<NodeType>,
    sizing: Vec<Sym2>,
    alive: Vec<bool>,
    tris: Vec<[usize; 3]>,
    tri_alive: Vec<bool>,
    vtris: Vec<Vec<usize>>,
}

fn area2(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    cross2(sub2(b, a), sub2(c, a))
}

/// Opposite vertex of edge `(a, b)` in `t`, and whether `a -> b` follows
/// the triangle's orientation.
fn opposite(t: [usize; 3], a: usize, b: usize) -> Option<(usize, bool)> {
    for r in 0..3 {
        let (x, y, z) = (t[r], t[(r + 1) % 3], t[(r + 2) % 3]);
        if x == a && y == b {
            return Some((z, true));
        }
        if x == b && y == a {
            return Some((z, false));
        }
    }
    None
}

impl Work {
    fn new(mesh: &SimMesh, sizing: &SizingField) -> Result<Work> {
        if mesh.dim_mesh() != 2 {
            return Err(Error::Dimension("remeshing needs a 2D mesh space".into()));
        }
        let tris = mesh
            .cells()
            .triangles()
            .ok_or_else(|| Error::Dimension("remeshing needs triangle cells".into()))?;
        let n = mesh.node_count();
        if sizing.len() != n {
            return Err(Error::Dimension(format!(
                "sizing field has {} tensors for {n} nodes",
                sizing.len()
            )));
        }
        crate::mesh::ensure_valid(mesh)?;
        let uv: Vec<Vec2> = (0..n).map(|i| mesh.uv(i)).collect();
        let mut w = Work {
            dim_world: mesh.dim_world(),
            n_quantities: mesh.n_quantities(),
            world: mesh.world_pos_flat().to_vec(),
            quant: mesh.quantities_flat().to_vec(),
            types: mesh.node_types().to_vec(),
            sizing: sizing.project_spd(LAMBDA_MIN).tensors,
            alive: vec![true; n],
            tris: Vec::with_capacity(tris.len()),
            tri_alive: Vec::with_capacity(tris.len()),
            vtris: vec![Vec::new(); n],
            uv,
        };
        for &t in tris {
            let t = if area2(w.uv[t[0]], w.uv[t[1]], w.uv[t[2]]) < 0.0 {
                [t[0], t[2], t[1]]
            } else {
                t
            };
            w.add_tri(t);
        }
        Ok(w)
    }

    fn add_tri(&mut self, t: [usize; 3]) -> usize {
        let id = self.tris.len();
        self.tris.push(t);
        self.tri_alive.push(true);
        for &v in &t {
            self.vtris[v].push(id);
        }
        id
    }

    fn remove_tri(&mut self, id: usize) {
        self.tri_alive[id] = false;
        for &v in &self.tris[id] {
            self.vtris[v].retain(|&x| x != id);
        }
    }

    fn set_tri(&mut self, id: usize, t: [usize; 3]) {
        for &v in &self.tris[id] {
            self.vtris[v].retain(|&x| x != id);
        }
        self.tris[id] = t;
        for &v in &t {
            self.vtris[v].push(id);
        }
    }

    fn area(&self, t: [usize; 3]) -> f64 {
        area2(self.uv[t[0]], self.uv[t[1]], self.uv[t[2]])
    }

    /// Positive and not vanishingly thin relative to its longest edge.
    fn healthy(&self, t: [usize; 3]) -> bool {
        let longest = (0..3)
            .map(|r| {
                let d = sub2(self.uv[t[r]], self.uv[t[(r + 1) % 3]]);
                d[0] * d[0] + d[1] * d[1]
            })
            .fold(0.0, f64::max);
        self.area(t) > 1e-12 * longest
    }

    fn metric(&self, a: usize, b: usize) -> f64 {
        edge_metric(sub2(self.uv[a], self.uv[b]), &self.sizing[a], &self.sizing[b])
    }

    fn edge_tris(&self, a: usize, b: usize) -> Vec<usize> {
        self.vtris[a]
            .iter()
            .copied()
            .filter(|&t| self.tris[t].contains(&b))
            .collect()
    }

    fn neighbors(&self, a: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vtris[a]
            .iter()
            .flat_map(|&t| self.tris[t])
            .filter(|&v| v != a)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn boundary_neighbors(&self, a: usize) -> Vec<usize> {
        self.neighbors(a)
            .into_iter()
            .filter(|&x| self.edge_tris(a, x).len() == 1)
            .collect()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (id, t) in self.tris.iter().enumerate() {
            if self.tri_alive[id] {
                for r in 0..3 {
                    let (a, b) = (t[r], t[(r + 1) % 3]);
                    out.push((a.min(b), a.max(b)));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn split(&mut self, a: usize, b: usize) -> bool {
        let incident = self.edge_tris(a, b);
        if incident.is_empty() {
            return false;
        }
        let m = self.uv.len();
        let mid = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect() };
        let (dw, nq) = (self.dim_world, self.n_quantities);
        let world = mid(&self.world[a * dw..(a + 1) * dw], &self.world[b * dw..(b + 1) * dw]);
        let quant = mid(&self.quant[a * nq..(a + 1) * nq], &self.quant[b * nq..(b + 1) * nq]);
        self.uv.push([
            0.5 * (self.uv[a][0] + self.uv[b][0]),
            0.5 * (self.uv[a][1] + self.uv[b][1]),
        ]);
        self.world.extend(world);
        self.quant.extend(quant);
        self.types.push(NodeType::Normal);
        self.sizing.push(self.sizing[a].add(&self.sizing[b]).scale(0.5));
        self.alive.push(true);
        self.vtris.push(Vec::new());
        for id in incident {
            let (c, fwd) = opposite(self.tris[id], a, b).expect("incident triangle");
            let (p, q) = if fwd { (a, b) } else { (b, a) };
            self.set_tri(id, [p, m, c]);
            self.add_tri([m, q, c]);
        }
        true
    }

    /// Flips `(a, b)` when the anisotropic Delaunay test asks for it and the
    /// result is a valid, non-degenerate configuration.
    fn try_flip(&mut self, a: usize, b: usize) -> bool {
        let incident = self.edge_tris(a, b);
        if incident.len() != 2 {
            return false;
        }
        let (mut t1, mut t2) = (incident[0], incident[1]);
        let (mut k, fwd) = opposite(self.tris[t1], a, b).expect("incident");
        let (mut l, _) = opposite(self.tris[t2], a, b).expect("incident");
        if !fwd {
            std::mem::swap(&mut t1, &mut t2);
            std::mem::swap(&mut k, &mut l);
        }
        if k == l || self.vtris[k].iter().any(|&t| self.tris[t].contains(&l)) {
            return false;
        }
        let s = [&self.sizing[a], &self.sizing[b], &self.sizing[k], &self.sizing[l]];
        if !should_flip(self.uv[a], self.uv[b], self.uv[k], self.uv[l], s) {
            return false;
        }
        let (n1, n2) = ([a, l, k], [l, b, k]);
        if !self.healthy(n1) || !self.healthy(n2) || self.metric(k, l) > 1.0 {
            return false;
        }
        self.set_tri(t1, n1);
        self.set_tri(t2, n2);
        true
    }

    fn flip_pass(&mut self, sweeps: usize) -> usize {
        let mut total = 0;
        for _ in 0..sweeps {
            let mut flips = 0;
            for (a, b) in self.edges() {
                if self.try_flip(a, b) {
                    flips += 1;
                }
            }
            total += flips;
            if flips == 0 {
                break;
            }
        }
        total
    }

    /// Largest metric among edges created by collapsing `remove` into
    /// `keep`, or `None` when the collapse is not allowed.
    fn collapse_check(&self, remove: usize, keep: usize) -> Option<f64> {
        if self.types[remove] != NodeType::Normal {
            return None;
        }
        let incident = self.edge_tris(remove, keep);
        if incident.is_empty() {
            return None;
        }
        let opp: Vec<usize> = incident
            .iter()
            .map(|&t| opposite(self.tris[t], remove, keep).expect("incident").0)
            .collect();
        let nr = self.neighbors(remove);
        let nk = self.neighbors(keep);
        let mut common: Vec<usize> = nr.iter().copied().filter(|x| nk.binary_search(x).is_ok()).collect();
        common.sort_unstable();
        let mut expected = opp.clone();
        expected.sort_unstable();
        expected.dedup();
        if common != expected {
            return None;
        }
        let boundary_edge = incident.len() == 1;
        let br = self.boundary_neighbors(remove);
        if !br.is_empty() {
            // a boundary node may only slide along a straight boundary
            if !boundary_edge || br.len() != 2 {
                return None;
            }
            let other = if br[0] == keep { br[1] } else { br[0] };
            let d1 = sub2(self.uv[keep], self.uv[remove]);
            let d2 = sub2(self.uv[other], self.uv[remove]);
            let scale = (d1[0].hypot(d1[1])) * (d2[0].hypot(d2[1]));
            if cross2(d1, d2).abs() > 1e-12 * scale || d1[0] * d2[0] + d1[1] * d2[1] >= 0.0 {
                return None;
            }
        } else if !boundary_edge && !self.boundary_neighbors(keep).is_empty() && incident.len() != 2 {
            return None;
        }
        if self.vtris[remove].len() + self.vtris[keep].len() - incident.len() == incident.len() {
            return None;
        }
        for &t in &self.vtris[remove] {
            if incident.contains(&t) {
                continue;
            }
            let mut nt = self.tris[t];
            for v in &mut nt {
                if *v == remove {
                    *v = keep;
                }
            }
            if !self.healthy(nt) {
                return None;
            }
        }
        let mut worst: f64 = 0.0;
        for &x in &nr {
            if x == keep || nk.binary_search(&x).is_ok() {
                continue;
            }
            let m = self.metric(keep, x);
            if m > 1.0 {
                return None;
            }
            worst = worst.max(m);
        }
        Some(worst)
    }

    fn collapse(&mut self, remove: usize, keep: usize) {
        for id in self.vtris[remove].clone() {
            if self.tris[id].contains(&keep) {
                self.remove_tri(id);
            } else {
                let mut nt = self.tris[id];
                for v in &mut nt {
                    if *v == remove {
                        *v = keep;
                    }
                }
                self.set_tri(id, nt);
            }
        }
        self.alive[remove] = false;
    }

    /// Collapses `(a, b)` in the better direction if either is allowed.
    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        let into_b = self.collapse_check(a, b);
        let into_a = self.collapse_check(b, a);
        let (remove, keep) = match (into_b, into_a) {
            (None, None) => return false,
            (Some(_), None) => (a, b),
            (None, Some(_)) => (b, a),
            (Some(x), Some(y)) => {
                if x < y || (x == y && b < a) {
                    (a, b)
                } else {
                    (b, a)
                }
            }
        };
        self.collapse(remove, keep);
        true
    }

    fn finish(self) -> Result<(SimMesh, SizingField)> {
        let mut index = vec![usize::MAX; self.uv.len()];
        let mut next = 0;
        for (i, &a) in self.alive.iter().enumerate() {
            if a {
                index[i] = next;
                next += 1;
            }
        }
        let (dw, nq) = (self.dim_world, self.n_quantities);
        let mut uv = Vec::with_capacity(2 * next);
        let mut world = Vec::with_capacity(dw * next);
        let mut quant = Vec::with_capacity(nq * next);
        let mut types = Vec::with_capacity(next);
        let mut sizing = Vec::with_capacity(next);
        for i in (0..self.uv.len()).filter(|&i| self.alive[i]) {
            uv.extend(self.uv[i]);
            world.extend_from_slice(&self.world[i * dw..(i + 1) * dw]);
            quant.extend_from_slice(&self.quant[i * nq..(i + 1) * nq]);
            types.push(self.types[i]);
            sizing.push(self.sizing[i]);
        }
        let tris = self
            .tris
            .iter()
            .zip(&self.tri_alive)
            .filter(|(_, &a)| a)
            .map(|(t, _)| [index[t[0]], index[t[1]], index[t[2]]])
            .collect();
        let mesh = SimMesh::new(2, dw, nq, uv, world, types, quant, Cells::Triangles(tris))?;
        Ok((mesh, SizingField::new(sizing)))
    }
}

/// Splits edge `(a, b)`, inserting a NORMAL node with averaged attributes
/// and sizing. The new node is appended last.
pub fn split_edge(mesh: &SimMesh, sizing: &SizingField, a: usize, b: usize) -> Result<(SimMesh, SizingField)> {
    let mut w = Work::new(mesh, sizing)?;
    if a >= mesh.node_count() || b >= mesh.node_count() || !w.split(a, b) {
        return Err(Error::Validation(vec![format!("({a}, {b}) is not a mesh edge")]));
    }
    w.finish()
}

/// Collapses node `remove` into its neighbour `keep`. Returns `None` when
/// the collapse is refused (link condition, inversion, a new invalid edge,
/// a non-NORMAL or non-straight boundary node).
pub fn collapse_edge(
    mesh: &SimMesh,
    sizing: &SizingField,
    remove: usize,
    keep: usize,
) -> Result<Option<(SimMesh, SizingField)>> {
    let mut w = Work::new(mesh, sizing)?;
    if remove >= mesh.node_count() || keep >= mesh.node_count() || remove == keep {
        return Err(Error::Validation(vec![format!("({remove}, {keep}) is not a mesh edge")]));
    }
    if w.collapse_check(remove, keep).is_none() {
        return Ok(None);
    }
    w.collapse(remove, keep);
    w.finish().map(Some)
}

/// Flips edge `(a, b)` if the anisotropic Delaunay criterion asks for it.
/// Returns `None` when no flip happens.
pub fn flip_edge(mesh: &SimMesh, sizing: &SizingField, a: usize, b: usize) -> Result<Option<(SimMesh, SizingField)>> {
    let mut w = Work::new(mesh, sizing)?;
    if a >= mesh.node_count() || b >= mesh.node_count() || !w.try_flip(a, b) {
        return Ok(None);
    }
    w.finish().map(Some)
}

/// Remeshes with the default budgets.
pub fn remesh(mesh: &SimMesh, sizing: &SizingField) -> Result<RemeshOutput> {
    remesh_with(mesh, sizing, &RemeshConfig::default())
}

pub fn remesh_with(mesh: &SimMesh, sizing: &SizingField, config: &RemeshConfig) -> Result<RemeshOutput> {
    let mut w = Work::new(mesh, sizing)?;
    let mut stats = RemeshStats::default();
    let budget = (config.split_budget_factor * w.edges().len() as f64).ceil() as usize;
    let mut exhausted = false;

    'split: loop {
        let mut invalid: Vec<(f64, usize, usize)> = w
            .edges()
            .into_iter()
            .map(|(a, b)| (w.metric(a, b), a, b))
            .filter(|e| e.0 > 1.0)
            .collect();
        if invalid.is_empty() {
            break;
        }
        invalid.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        for (_, a, b) in invalid {
            if stats.splits >= budget {
                exhausted = true;
                log::warn!("remesh split budget of {budget} exhausted");
                break 'split;
            }
            if w.metric(a, b) > 1.0 && w.split(a, b) {
                stats.splits += 1;
            }
        }
    }

    stats.flips += w.flip_pass(config.flip_sweeps);

    loop {
        let mut edges: Vec<(f64, usize, usize)> =
            w.edges().into_iter().map(|(a, b)| (w.metric(a, b), a, b)).collect();
        edges.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut collapsed = 0;
        for (_, a, b) in edges {
            if w.alive[a] && w.alive[b] && !w.edge_tris(a, b).is_empty() && w.try_collapse(a, b) {
                collapsed += 1;
            }
        }
        stats.collapses += collapsed;
        if collapsed == 0 {
            break;
        }
    }

    stats.flips += w.flip_pass(config.flip_sweeps);

    let (mesh, sizing) = w.finish()?;
    Ok(RemeshOutput {
        mesh,
        sizing,
        budget_exhausted: exhausted,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{derive_edges, grid_triangles, signed_area, validate};

    fn flat(uv: Vec<f64>, tris: Vec<[usize; 3]>) -> SimMesh {
        let n = uv.len() / 2;
        let world = (0..n).flat_map(|i| [uv[2 * i], uv[2 * i + 1], 0.0]).collect();
        SimMesh::new(2, 3, 1, uv, world, vec![NodeType::Normal; n], vec![1.0; n], Cells::Triangles(tris)).unwrap()
    }

    fn square() -> SimMesh {
        flat(vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0], vec![[0, 1, 2], [0, 2, 3]])
    }

    fn max_metric(m: &SimMesh, s: &SizingField) -> f64 {
        derive_edges(m)
            .unwrap()
            .iter()
            .map(|&(a, b)| edge_metric(sub2(m.uv(a), m.uv(b)), &s.tensors[a], &s.tensors[b]))
            .fold(0.0, f64::max)
    }

    #[test]
    fn metric_examples() {
        let i = Sym2::IDENTITY;
        assert_eq!(edge_metric([1.0, 0.0], &i, &i), 1.0);
        assert_eq!(edge_metric([2.0, 0.0], &i, &i), 4.0);
        let m = edge_metric([0.6, 0.8], &Sym2::diag(4.0, 0.25), &Sym2::diag(2.0, 0.25));
        assert!((m - (0.36 * 3.0 + 0.64 * 0.25)).abs() < 1e-15);
        assert!((m - 1.24).abs() < 1e-12);
    }

    #[test]
    fn square_diagonal_is_a_tie() {
        let i = Sym2::IDENTITY;
        // edge (0, 2) with k = 1 and l = 3
        assert!(!should_flip([0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [&i; 4]));
    }

    #[test]
    fn thin_quad_flips_to_short_diagonal() {
        let i = Sym2::IDENTITY;
        // long diagonal i-j, short diagonal k-l
        assert!(should_flip([-2.0, 0.0], [2.0, 0.0], [0.0, 0.3], [0.0, -0.3], [&i; 4]));
        assert!(!should_flip([0.0, -0.3], [0.0, 0.3], [-2.0, 0.0], [2.0, 0.0], [&i; 4]));
    }

    #[test]
    fn anisotropy_reverses_the_preferred_diagonal() {
        // isotropically (k, l) is the short diagonal; stretching y by 100
        // makes (i, j) the short one in the metric
        let (ui, uj, uk, ul) = ([-1.0, 0.0], [1.0, 0.0], [0.0, 0.5], [0.0, -0.5]);
        let i = Sym2::IDENTITY;
        assert!(should_flip(ui, uj, uk, ul, [&i; 4]));
        let s = Sym2::diag(1.0, 100.0);
        assert!(!should_flip(ui, uj, uk, ul, [&s; 4]));
        // and the reverse: a needle along y whose metric is short along y
        let t = Sym2::diag(1.0, 100.0);
        assert!(should_flip([0.0, -1.0], [0.0, 1.0], [-0.5, 0.0], [0.5, 0.0], [&t; 4]));
    }

    /// Classic in-circle determinant: is `l` strictly inside the circumcircle
    /// of the counter-clockwise triangle `(i, j, k)`?
    fn in_circle(i: Vec2, j: Vec2, k: Vec2, l: Vec2) -> f64 {
        let r = |p: Vec2| [p[0] - l[0], p[1] - l[1], (p[0] - l[0]).powi(2) + (p[1] - l[1]).powi(2)];
        let (a, b, c) = (r(i), r(j), r(k));
        a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
    }

    proptest::proptest! {
        #[test]
        fn isotropic_flip_matches_in_circle(
            k in (-3.0f64..3.0, 0.05f64..3.0),
            l in (-3.0f64..3.0, -3.0f64..-0.05),
            scale in 0.1f64..10.0,
        ) {
            let (ui, uj) = ([-1.0, 0.0], [1.0, 0.0]);
            let (uk, ul) = ([k.0, k.1], [l.0, l.1]);
            let convex = area2(ui, ul, uk) > 0.0 && area2(ul, uj, uk) > 0.0;
            let d = in_circle(ui, uj, uk, ul);
            proptest::prop_assume!(convex && d.abs() > 1e-9);
            let s = Sym2::scaled_identity(scale);
            proptest::prop_assert_eq!(should_flip(ui, uj, uk, ul, [&s; 4]), d > 0.0);
        }

        #[test]
        fn flip_is_affine_invariant(
            k in (-3.0f64..3.0, 0.05f64..3.0),
            l in (-3.0f64..3.0, -3.0f64..-0.05),
            m in (0.2f64..3.0, -1.0f64..1.0, 0.2f64..3.0),
        ) {
            // mapping points by M and the metric by M^-T S M^-1 keeps the decision
            let a = [[m.0, m.1], [0.0, m.2]];
            let map = |p: Vec2| [a[0][0] * p[0] + a[0][1] * p[1], a[1][1] * p[1]];
            let det = m.0 * m.2;
            let inv = [[m.2 / det, -m.1 / det], [0.0, m.0 / det]];
            let inv_t = [[inv[0][0], inv[1][0]], [inv[0][1], inv[1][1]]];
            let s = Sym2::IDENTITY.congruence(inv_t);
            let (ui, uj, uk, ul) = ([-1.0, 0.0], [1.0, 0.0], [k.0, k.1], [l.0, l.1]);
            let d = in_circle(ui, uj, uk, ul);
            proptest::prop_assume!(d.abs() > 1e-6);
            let i = Sym2::IDENTITY;
            proptest::prop_assert_eq!(
                should_flip(ui, uj, uk, ul, [&i; 4]),
                should_flip(map(ui), map(uj), map(uk), map(ul), [&s; 4])
            );
        }
    }

    #[test]
    fn flip_pass_reaches_delaunay_on_random_triangulations() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(3..8usize);
            let (mut uv, tris) = grid_triangles(n, n, 1.0, 1.0);
            let h = 0.3 / (n - 1) as f64;
            for v in uv.iter_mut() {
                *v += rng.random_range(-h..h);
            }
            let m = flat(uv, tris);
            let s = SizingField::uniform(m.node_count(), Sym2::scaled_identity(1e-2));
            let mut w = Work::new(&m, &s).unwrap();
            w.flip_pass(1000);
            for (a, b) in w.edges() {
                let inc = w.edge_tris(a, b);
                if inc.len() != 2 {
                    continue;
                }
                let (mut k, fwd) = opposite(w.tris[inc[0]], a, b).unwrap();
                let (mut l, _) = opposite(w.tris[inc[1]], a, b).unwrap();
                if !fwd {
                    std::mem::swap(&mut k, &mut l);
                }
                let d = in_circle(w.uv[a], w.uv[b], w.uv[k], w.uv[l]);
                assert!(d <= 1e-12, "edge ({a}, {b}) not locally Delaunay: {d}");
                let flip = should_flip(w.uv[a], w.uv[b], w.uv[k], w.uv[l], [&s.tensors[0]; 4]);
                assert!(!flip);
            }
            let (out, _) = w.finish().unwrap();
            assert!(validate(&out).is_empty());
        }
    }

    #[test]
    fn split_interior_edge_of_square() {
        let s = SizingField::uniform(4, Sym2::IDENTITY);
        let (m, sz) = split_edge(&square(), &s, 0, 2).unwrap();
        assert_eq!(m.node_count(), 5);
        assert_eq!(m.cells().len(), 4);
        assert_eq!(m.uv(4), [0.5, 0.5]);
        assert_eq!(m.world_pos(4), &[0.5, 0.5, 0.0]);
        assert_eq!(m.node_type(4), NodeType::Normal);
        assert!(validate(&m).is_empty());
        for t in m.cells().triangles().unwrap() {
            assert!(signed_area(m.uv(t[0]), m.uv(t[1]), m.uv(t[2])) > 0.0);
        }
        let varied = SizingField::new(vec![
            Sym2::diag(1.0, 2.0),
            Sym2::IDENTITY,
            Sym2::diag(3.0, 4.0),
            Sym2::IDENTITY,
        ]);
        let (_, sz2) = split_edge(&square(), &varied, 0, 2).unwrap();
        assert_eq!(sz2.tensors[4], Sym2::diag(2.0, 3.0));
        assert_eq!(sz.tensors[4], Sym2::IDENTITY);
    }

    #[test]
    fn split_boundary_edge_uses_single_triangle() {
        let s = SizingField::uniform(4, Sym2::IDENTITY);
        let (m, _) = split_edge(&square(), &s, 0, 1).unwrap();
        assert_eq!((m.node_count(), m.cells().len()), (5, 3));
        assert!(validate(&m).is_empty());
    }

    fn fan() -> SimMesh {
        // centre node 0 near node 1 in a hexagonal ring
        let mut uv = vec![0.02, 0.0];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            uv.extend([a.cos(), a.sin()]);
        }
        flat(uv, (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect())
    }

    #[test]
    fn collapse_accepted_when_new_edges_stay_valid() {
        let m = fan();
        let s = SizingField::uniform(7, Sym2::scaled_identity(0.2));
        let (out, _) = collapse_edge(&m, &s, 0, 1).unwrap().expect("collapse allowed");
        assert_eq!(out.node_count(), 6);
        assert!(validate(&out).is_empty());
        let sz = SizingField::uniform(6, Sym2::scaled_identity(0.2));
        assert!(max_metric(&out, &sz) <= 1.0);
    }

    #[test]
    fn collapse_refused_when_it_creates_invalid_edge() {
        let m = fan();
        // new edges from node 1 to the far side have length ~2, metric 4·0.3 > 1
        let s = SizingField::uniform(7, Sym2::scaled_identity(0.3));
        assert!(collapse_edge(&m, &s, 0, 1).unwrap().is_none());
        // a metric that makes the long edges land on 1.24
        let a = Sym2::diag(0.62 / (1.98f64 * 1.98), 0.62 / (1.98f64 * 1.98)).scale(2.0);
        assert!(collapse_edge(&m, &SizingField::uniform(7, a), 0, 1).unwrap().is_none());
    }

    #[test]
    fn collapse_refused_by_link_condition() {
        // inner triangle 0-1-2 around node 3 inside an outer triangle 4-5-6;
        // 0 and 1 share neighbour 2 without a face (0, 1, 2)
        let uv = vec![-1.0, -0.5, 1.0, -0.5, 0.0, 1.0, 0.0, 0.0, -2.0, -1.5, 2.0, -1.5, 0.0, 2.5];
        let tris = vec![
            [0, 1, 3],
            [1, 2, 3],
            [2, 0, 3],
            [4, 5, 1],
            [4, 1, 0],
            [5, 6, 2],
            [5, 2, 1],
            [6, 4, 0],
            [6, 0, 2],
        ];
        let m = flat(uv, tris);
        let s = SizingField::uniform(7, Sym2::scaled_identity(1e-3));
        assert!(collapse_edge(&m, &s, 0, 1).unwrap().is_none());
        assert!(collapse_edge(&m, &s, 1, 0).unwrap().is_none());
        let (out, _) = collapse_edge(&m, &s, 3, 0).unwrap().expect("valence-3 node collapses");
        assert_eq!((out.node_count(), out.cells().len()), (6, 7));
        assert!(validate(&out).is_empty());
    }

    #[test]
    fn boundary_node_slides_only_along_straight_boundary() {
        let (uv, tris) = grid_triangles(3, 3, 1.0, 1.0);
        let m = flat(uv, tris);
        let s = SizingField::uniform(9, Sym2::scaled_identity(1e-3));
        // node 1 sits mid-edge on the bottom boundary
        assert!(collapse_edge(&m, &s, 1, 0).unwrap().is_some());
        assert!(collapse_edge(&m, &s, 1, 4).unwrap().is_none());
        // corner node 0
        assert!(collapse_edge(&m, &s, 0, 1).unwrap().is_none());
    }

    #[test]
    fn kinematic_node_is_never_removed() {
        let m = fan();
        let mut types = m.node_types().to_vec();
        types[0] = NodeType::Kinematic;
        let k = SimMesh::new(
            2,
            3,
            1,
            m.mesh_pos_flat().to_vec(),
            m.world_pos_flat().to_vec(),
            types,
            m.quantities_flat().to_vec(),
            m.cells().clone(),
        )
        .unwrap();
        let s = SizingField::uniform(7, Sym2::scaled_identity(0.2));
        assert!(collapse_edge(&k, &s, 0, 1).unwrap().is_none());
    }

    #[test]
    fn fixed_point_leaves_mesh_unchanged() {
        let m = flat(vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![[0, 1, 2]]);
        let s = SizingField::uniform(3, Sym2::IDENTITY.scale(0.5));
        let out = remesh(&m, &s).unwrap();
        assert_eq!(out.mesh, m);
        assert_eq!(out.stats, RemeshStats::default());
    }

    #[test]
    fn uniform_sizing_bounds_edge_length() {
        let (uv, tris) = grid_triangles(6, 6, 1.0, 1.0);
        let m = flat(uv, tris);
        let ell = 0.15;
        let s = SizingField::uniform(m.node_count(), Sym2::scaled_identity(1.0 / (ell * ell)));
        let out = remesh(&m, &s).unwrap();
        assert!(!out.budget_exhausted);
        assert!(validate(&out.mesh).is_empty());
        for (a, b) in derive_edges(&out.mesh).unwrap() {
            let d = sub2(out.mesh.uv(a), out.mesh.uv(b));
            assert!(d[0].hypot(d[1]) <= ell * (1.0 + 1e-9));
        }
    }

    #[test]
    fn coarser_sizing_reduces_node_count() {
        let (uv, tris) = grid_triangles(9, 9, 1.0, 1.0);
        let m = flat(uv, tris);
        let h = 1.0 / 8.0;
        let s = SizingField::uniform(m.node_count(), Sym2::scaled_identity(1.0 / (4.0 * h * h)));
        let out = remesh(&m, &s).unwrap();
        assert!(out.mesh.node_count() < m.node_count());
        assert!(validate(&out.mesh).is_empty());
        assert!(max_metric(&out.mesh, &out.sizing) <= 1.0 + 1e-9);
    }

    #[test]
    fn remesh_is_deterministic() {
        let (uv, tris) = grid_triangles(6, 6, 1.0, 1.0);
        let m = flat(uv, tris);
        let s = SizingField::new(
            (0..m.node_count())
                .map(|i| Sym2::diag(20.0 + 30.0 * m.uv(i)[0], 5.0 + 80.0 * m.uv(i)[1]))
                .collect(),
        );
        assert_eq!(remesh(&m, &s).unwrap(), remesh(&m, &s).unwrap());
    }

    #[test]
    fn tetrahedra_are_rejected() {
        let m = SimMesh::new(
            3,
            0,
            0,
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![],
            vec![NodeType::Normal; 4],
            vec![],
            Cells::Tetrahedra(vec![[0, 1, 2, 3]]),
        )
        .unwrap();
        assert!(matches!(
            remesh(&m, &SizingField::uniform(4, Sym2::IDENTITY)),
            Err(Error::Dimension(_))
        ));
    }
}
