//! Point location and barycentric transfer on 2D triangle meshes.

use std::collections::HashMap;

use super::{derive_edges, SimMesh};
use crate::error::{Error, Result};

/// Mesh-space tolerance for points lying on or just outside a cell boundary.
pub const TAU_BARY: f64 = 1e-8;

/// Uniform-grid accelerator for locating mesh-space points in triangles.
///
/// Grid cells have the mesh's mean edge length as side. Each triangle is
/// registered in every grid cell its bounding box (grown by [`TAU_BARY`])
/// overlaps, in ascending triangle order, so ties resolve to the lowest
/// triangle index.
pub struct PointLocator<'a> {
    mesh: &'a SimMesh,
    tris: &'a [[usize; 3]],
    origin: [f64; 2],
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a SimMesh) -> Result<Self> {
        if mesh.dim_mesh() != 2 {
            return Err(Error::Dimension("point location requires a 2D mesh space".into()));
        }
        let tris = mesh
            .cells()
            .triangles()
            .ok_or_else(|| Error::Dimension("point location requires triangle cells".into()))?;
        let edges = derive_edges(mesh)?;
        let mut cell = if edges.is_empty() {
            1.0
        } else {
            edges
                .iter()
                .map(|&(i, j)| super::dist(mesh.mesh_pos(i), mesh.mesh_pos(j)))
                .sum::<f64>()
                / edges.len() as f64
        };
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        let mut origin = [f64::INFINITY; 2];
        for i in 0..mesh.node_count() {
            let p = mesh.uv(i);
            origin[0] = origin[0].min(p[0]);
            origin[1] = origin[1].min(p[1]);
        }
        if !origin[0].is_finite() {
            origin = [0.0, 0.0];
        }
        let mut locator = PointLocator {
            mesh,
            tris,
            origin,
            cell,
            buckets: HashMap::new(),
        };
        for (t, tri) in tris.iter().enumerate() {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for &v in tri {
                let p = mesh.uv(v);
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
            let (x0, y0) = locator.key([lo[0] - TAU_BARY, lo[1] - TAU_BARY]);
            let (x1, y1) = locator.key([hi[0] + TAU_BARY, hi[1] + TAU_BARY]);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    locator.buckets.entry((x, y)).or_default().push(t as u32);
                }
            }
        }
        Ok(locator)
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.cell).floor() as i64,
            ((p[1] - self.origin[1]) / self.cell).floor() as i64,
        )
    }

    /// Finds the first triangle (in cell order) within [`TAU_BARY`] of `p`
    /// and returns it with barycentric weights of the nearest point in it.
    /// Returns the distance to the closest inspected triangle on failure.
    pub fn locate(&self, p: [f64; 2]) -> std::result::Result<(usize, [f64; 3]), f64> {
        let mut best = f64::INFINITY;
        let Some(candidates) = self.buckets.get(&self.key(p)) else {
            return Err(best);
        };
        for &t in candidates {
            let tri = self.tris[t as usize];
            let (d, w) = nearest_in_triangle(
                p,
                self.mesh.uv(tri[0]),
                self.mesh.uv(tri[1]),
                self.mesh.uv(tri[2]),
            );
            if d <= TAU_BARY {
                return Ok((t as usize, w));
            }
            best = best.min(d);
        }
        Err(best)
    }

    /// Interpolates a per-node field (`width` values per node) at each query.
    pub fn transfer(&self, field: &[f64], width: usize, queries: &[[f64; 2]]) -> Result<Vec<f64>> {
        if field.len() != width * self.mesh.node_count() {
            return Err(Error::Dimension(format!(
                "field has {} values, expected {}",
                field.len(),
                width * self.mesh.node_count()
            )));
        }
        let mut out = Vec::with_capacity(queries.len() * width);
        for (qi, &q) in queries.iter().enumerate() {
            let (t, w) = self.locate(q).map_err(|distance| Error::OutOfDomain {
                index: qi,
                point: q.to_vec(),
                distance,
            })?;
            let tri = self.tris[t];
            for c in 0..width {
                out.push(
                    w[0] * field[tri[0] * width + c]
                        + w[1] * field[tri[1] * width + c]
                        + w[2] * field[tri[2] * width + c],
                );
            }
        }
        Ok(out)
    }
}

/// Barycentric transfer of a per-node field from `src` onto mesh-space query
/// points. Fails with [`Error::OutOfDomain`] for the first query farther than
/// [`TAU_BARY`] from every cell.
pub fn barycentric_transfer(
    src: &SimMesh,
    field: &[f64],
    width: usize,
    queries: &[[f64; 2]],
) -> Result<Vec<f64>> {
    PointLocator::new(src)?.transfer(field, width, queries)
}

/// `target`'s mesh with world positions and quantities interpolated from
/// `src` at `target`'s mesh-space nodes. Identical meshes copy exactly.
pub fn transfer_state(src: &SimMesh, target: &SimMesh) -> Result<SimMesh> {
    if src.dim_world() != target.dim_world() || src.n_quantities() != target.n_quantities() {
        return Err(Error::Dimension("states have different layouts".into()));
    }
    if src.cells() == target.cells() && src.mesh_pos_flat() == target.mesh_pos_flat() {
        return target
            .with_world_pos(src.world_pos_flat().to_vec())?
            .with_quantities(src.quantities_flat().to_vec());
    }
    let queries: Vec<[f64; 2]> = (0..target.node_count()).map(|i| target.uv(i)).collect();
    let loc = PointLocator::new(src)?;
    let world = loc.transfer(src.world_pos_flat(), src.dim_world(), &queries)?;
    let quant = loc.transfer(src.quantities_flat(), src.n_quantities(), &queries)?;
    target.with_world_pos(world)?.with_quantities(quant)
}

fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 3] {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let wb = ((p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])) / det;
    let wc = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / det;
    [1.0 - wb - wc, wb, wc]
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt(), t)
}

/// Distance from `p` to triangle `abc` and barycentric weights of the
/// closest point (all nonnegative, summing to one).
fn nearest_in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> (f64, [f64; 3]) {
    let w = barycentric(p, a, b, c);
    if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return (0.0, w);
    }
    let (dab, tab) = closest_on_segment(p, a, b);
    let (dbc, tbc) = closest_on_segment(p, b, c);
    let (dca, tca) = closest_on_segment(p, c, a);
    if dab <= dbc && dab <= dca {
        (dab, [1.0 - tab, tab, 0.0])
    } else if dbc <= dca {
        (dbc, [0.0, 1.0 - tbc, tbc])
    } else {
        (dca, [tca, 0.0, 1.0 - tca])
    }
}
