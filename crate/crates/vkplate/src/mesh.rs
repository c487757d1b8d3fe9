//! Structured triangulations of the plate Ω = [0, L] × [0, 1].

use crate::error::{Result, VkError};

/// Triangle mesh of [0, L] × [0, 1]: an nx × ny grid of rectangular cells,
/// each split along its lower-left to upper-right diagonal. Vertices are
/// stored row-major bottom to top, so vertex (i, j) has index j·(nx+1)+i.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub l: f64,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Vertex triples, counterclockwise. Cell (i, j) emits its lower
    /// triangle at index 2(j·nx+i) and its upper at the next slot.
    pub triangles: Vec<[usize; 3]>,
    /// Vertices on ∂Ω, ascending.
    pub boundary_vertices: Vec<usize>,
    mesh_size: f64,
}

/// Builds the structured mesh. `l` is the plate aspect (width of the x side);
/// `nx`, `ny` the cell counts per direction.
pub fn build_mesh(l: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if !(l.is_finite() && l > 0.0) {
        return Err(VkError::InvalidArgument(format!(
            "plate aspect must be finite and positive, got {l}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(VkError::InvalidArgument(format!(
            "cell counts must be positive, got nx={nx}, ny={ny}"
        )));
    }

    let hx = l / nx as f64;
    let hy = 1.0 / ny as f64;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary_vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if i == 0 || i == nx || j == 0 || j == ny {
                boundary_vertices.push(vertices.len());
            }
            vertices.push([i as f64 * hx, j as f64 * hy]);
        }
    }

    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (vid(i, j), vid(i + 1, j));
            let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut mesh_size: f64 = 0.0;
    for t in &triangles {
        for k in 0..3 {
            let a = vertices[t[k]];
            let b = vertices[t[(k + 1) % 3]];
            mesh_size = mesh_size.max((b[0] - a[0]).hypot(b[1] - a[1]));
        }
    }

    Ok(Mesh { l, nx, ny, vertices, triangles, boundary_vertices, mesh_size })
}

impl Mesh {
    /// Longest edge over all triangles.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    /// Signed area of triangle `t`; positive for the counterclockwise
    /// orientation this mesh guarantees.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }
}
