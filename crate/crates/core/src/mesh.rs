//! Simplicial meshes of intervals (d = 1) and triangles (d = 2).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::poly::affine::AffineMap;
use crate::poly::basis::barycentric;

/// A mesh face: a point in 1D, an edge in 2D.
#[derive(Clone, Debug)]
pub struct Face {
    /// Sorted global vertex ids; in 1D both entries are the same vertex.
    pub vertices: [usize; 2],
    /// (element, local face index) of the owner.
    pub owner: (usize, usize),
    pub neighbor: Option<(usize, usize)>,
    /// Unit normal pointing out of the owner.
    pub normal: [f64; 2],
    pub measure: f64,
    pub diameter: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.vertices[0] == v || self.vertices[1] == v
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    /// Vertex coordinates; the second entry is zero in 1D.
    pub coords: Vec<[f64; 2]>,
    /// Element vertex ids; only the first `dim + 1` entries are used.
    pub elements: Vec<[usize; 3]>,
    pub faces: Vec<Face>,
    /// `element_faces[e][f]` is the face opposite local vertex `f`.
    pub element_faces: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    pub vertex_elements: Vec<Vec<usize>>,
    pub maps: Vec<AffineMap>,
    /// Element diameters h_K.
    pub h: Vec<f64>,
    /// Inscribed-ball diameters rho_K.
    pub rho: Vec<f64>,
    pub measure: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexPatch {
    pub vertex: usize,
    pub elements: Vec<usize>,
    /// Faces containing the vertex, excluding faces on the domain boundary.
    pub faces: Vec<usize>,
    pub diameter: f64,
    pub is_interior: bool,
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Mesh {
    /// Builds the topology. Elements are reoriented so that det J > 0.
    pub fn new(dim: usize, coords: Vec<[f64; 2]>, elements: Vec<[usize; 3]>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if elements.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        let nv = coords.len();
        let nloc = dim + 1;
        let mut elements = elements;
        let mut maps = Vec::with_capacity(elements.len());
        for (e, el) in elements.iter_mut().enumerate() {
            for &v in &el[..nloc] {
                if v >= nv {
                    return Err(Error::InvalidMesh(format!("element {e} references vertex {v} of {nv}")));
                }
            }
            if dim == 1 {
                el[2] = 0;
            }
            let verts: Vec<[f64; 2]> = el[..nloc].iter().map(|&v| coords[v]).collect();
            let mut map = AffineMap::from_vertices(dim, &verts).map_err(|_| Error::InvalidElement {
                element: e,
                reason: "degenerate element".into(),
            })?;
            if map.det < 0.0 {
                if dim == 1 {
                    el.swap(0, 1);
                } else {
                    el.swap(1, 2);
                }
                let verts: Vec<[f64; 2]> = el[..nloc].iter().map(|&v| coords[v]).collect();
                map = AffineMap::from_vertices(dim, &verts)?;
            }
            maps.push(map);
        }

        let mut face_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut faces: Vec<Face> = Vec::new();
        let mut element_faces = vec![[usize::MAX; 3]; elements.len()];
        for (e, el) in elements.iter().enumerate() {
            for f in 0..nloc {
                let others: Vec<usize> = (0..nloc).filter(|&i| i != f).map(|i| el[i]).collect();
                let key = if dim == 1 {
                    [others[0], others[0]]
                } else {
                    [others[0].min(others[1]), others[0].max(others[1])]
                };
                match face_index.get(&key) {
                    Some(&id) => {
                        if faces[id].neighbor.is_some() {
                            return Err(Error::InvalidMesh(format!(
                                "face {:?} shared by more than two elements",
                                key
                            )));
                        }
                        faces[id].neighbor = Some((e, f));
                        element_faces[e][f] = id;
                    }
                    None => {
                        let id = faces.len();
                        face_index.insert(key, id);
                        let opposite = coords[el[f]];
                        let (normal, measure) = if dim == 1 {
                            let x = coords[key[0]][0];
                            ([if x > opposite[0] { 1.0 } else { -1.0 }, 0.0], 1.0)
                        } else {
                            let a = coords[key[0]];
                            let b = coords[key[1]];
                            let len = dist(&a, &b);
                            let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
                            let d = [a[0] - opposite[0], a[1] - opposite[1]];
                            if n[0] * d[0] + n[1] * d[1] < 0.0 {
                                n = [-n[0], -n[1]];
                            }
                            (n, len)
                        };
                        faces.push(Face {
                            vertices: key,
                            owner: (e, f),
                            neighbor: None,
                            normal,
                            measure,
                            diameter: measure,
                        });
                        element_faces[e][f] = id;
                    }
                }
            }
        }

        let mut h = Vec::with_capacity(elements.len());
        let mut rho = Vec::with_capacity(elements.len());
        let mut measure = Vec::with_capacity(elements.len());
        for (e, el) in elements.iter().enumerate() {
            let area = maps[e].abs_det() * if dim == 1 { 1.0 } else { 0.5 };
            if area <= 0.0 {
                return Err(Error::InvalidElement { element: e, reason: "non-positive measure".into() });
            }
            if dim == 1 {
                h.push(area);
                rho.push(area);
            } else {
                let p = [coords[el[0]], coords[el[1]], coords[el[2]]];
                let l = [dist(&p[1], &p[2]), dist(&p[0], &p[2]), dist(&p[0], &p[1])];
                let semi = 0.5 * (l[0] + l[1] + l[2]);
                h.push(l[0].max(l[1]).max(l[2]));
                rho.push(2.0 * area / semi);
            }
            measure.push(area);
        }
        if dim == 1 {
            for face in &mut faces {
                let mut s = h[face.owner.0];
                let mut c = 1.0;
                if let Some((n, _)) = face.neighbor {
                    s += h[n];
                    c += 1.0;
                }
                face.diameter = s / c;
            }
        }

        let mut boundary_vertex = vec![false; nv];
        for face in faces.iter().filter(|f| f.is_boundary()) {
            boundary_vertex[face.vertices[0]] = true;
            boundary_vertex[face.vertices[1]] = true;
        }
        let mut vertex_elements = vec![Vec::new(); nv];
        for (e, el) in elements.iter().enumerate() {
            for &v in &el[..nloc] {
                vertex_elements[v].push(e);
            }
        }
        if let Some(v) = vertex_elements.iter().position(|l| l.is_empty()) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no element")));
        }

        Ok(Mesh {
            dim,
            coords,
            elements,
            faces,
            element_faces,
            boundary_vertex,
            vertex_elements,
            maps,
            h,
            rho,
            measure,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn element_vertices(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.dim + 1]
    }

    pub fn element_coords(&self, e: usize) -> Vec<[f64; 2]> {
        self.element_vertices(e).iter().map(|&v| self.coords[v]).collect()
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| !self.boundary_vertex[v]).collect()
    }

    pub fn interior_faces(&self) -> Vec<usize> {
        (0..self.n_faces()).filter(|&f| !self.faces[f].is_boundary()).collect()
    }

    pub fn total_measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn min_h(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_h(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }

    /// Local index of global vertex `v` in element `e`.
    pub fn local_vertex(&self, e: usize, v: usize) -> Option<usize> {
        self.element_vertices(e).iter().position(|&w| w == v)
    }

    /// θ = max_K h_K / ρ_K.
    pub fn shape_regularity(&self) -> f64 {
        self.h
            .iter()
            .zip(&self.rho)
            .map(|(h, r)| h / r)
            .fold(1.0, f64::max)
    }

    pub fn element_shape_regularity(&self, e: usize) -> f64 {
        self.h[e] / self.rho[e]
    }

    pub fn build_patch(&self, a: usize) -> Result<VertexPatch> {
        if a >= self.n_vertices() {
            return Err(Error::invalid(format!("vertex {a} out of range ({} vertices)", self.n_vertices())));
        }
        let elements = self.vertex_elements[a].clone();
        let mut faces: Vec<usize> = Vec::new();
        for &e in &elements {
            for f in 0..=self.dim {
                let id = self.element_faces[e][f];
                let face = &self.faces[id];
                if face.contains(a) && !face.is_boundary() && !faces.contains(&id) {
                    faces.push(id);
                }
            }
        }
        faces.sort_unstable();
        let mut verts: Vec<usize> = elements.iter().flat_map(|&e| self.element_vertices(e).to_vec()).collect();
        verts.sort_unstable();
        verts.dedup();
        let mut diameter: f64 = 0.0;
        for (i, &u) in verts.iter().enumerate() {
            for &w in &verts[i + 1..] {
                diameter = diameter.max(dist(&self.coords[u], &self.coords[w]));
            }
        }
        Ok(VertexPatch {
            vertex: a,
            elements,
            faces,
            diameter,
            is_interior: !self.boundary_vertex[a],
        })
    }

    pub fn patches(&self) -> Vec<VertexPatch> {
        (0..self.n_vertices()).map(|a| self.build_patch(a).expect("vertex in range")).collect()
    }

    /// Element containing `x` and the reference coordinates of `x` there.
    pub fn locate(&self, x: &[f64; 2]) -> Option<(usize, [f64; 2])> {
        let tol = 1e-12;
        for e in 0..self.n_elements() {
            let xh = self.maps[e].inverse_map(x);
            let l = barycentric(self.dim, &xh);
            if l[..=self.dim].iter().all(|&v| v >= -tol) {
                return Some((e, xh));
            }
        }
        None
    }

    /// Hat function ψ_a evaluated at a physical point.
    pub fn hat(&self, a: usize, x: &[f64; 2]) -> f64 {
        match self.locate(x) {
            Some((e, xh)) => match self.local_vertex(e, a) {
                Some(i) => barycentric(self.dim, &xh)[i],
                None => 0.0,
            },
            None => 0.0,
        }
    }

    /// Uniform refinement: bisection in 1D, red refinement in 2D.
    /// Returns the fine mesh and the parent of every fine element.
    pub fn refine_uniform(&self) -> Result<(Mesh, Vec<usize>)> {
        let mut coords = self.coords.clone();
        let mut elements = Vec::new();
        let mut parent = Vec::new();
        if self.dim == 1 {
            for (e, el) in self.elements.iter().enumerate() {
                let m = coords.len();
                let a = self.coords[el[0]];
                let b = self.coords[el[1]];
                coords.push([0.5 * (a[0] + b[0]), 0.0]);
                elements.push([el[0], m, 0]);
                elements.push([m, el[1], 0]);
                parent.extend([e, e]);
            }
        } else {
            let base = coords.len();
            for f in &self.faces {
                let a = self.coords[f.vertices[0]];
                let b = self.coords[f.vertices[1]];
                coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            }
            for (e, el) in self.elements.iter().enumerate() {
                let ef = self.element_faces[e];
                let m12 = base + ef[0];
                let m02 = base + ef[1];
                let m01 = base + ef[2];
                elements.push([el[0], m01, m02]);
                elements.push([m01, el[1], m12]);
                elements.push([m02, m12, el[2]]);
                elements.push([m01, m12, m02]);
                parent.extend([e, e, e, e]);
            }
        }
        Ok((Mesh::new(self.dim, coords, elements)?, parent))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.dim, self.n_vertices(), self.n_elements());
        for c in &self.coords {
            if self.dim == 1 {
                let _ = writeln!(s, "{:.17e}", c[0]);
            } else {
                let _ = writeln!(s, "{:.17e} {:.17e}", c[0], c[1]);
            }
        }
        for e in 0..self.n_elements() {
            let v: Vec<String> = self.element_vertices(e).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", v.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let bad = |line: usize, msg: &str| Error::InvalidMesh(format!("line {line}: {msg}"));
        let (ln, header) = lines.next().ok_or_else(|| Error::InvalidMesh("empty mesh file".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln, "expected `dim nv ne`"))?;
        if head.len() != 3 {
            return Err(bad(ln, "expected `dim nv ne`"));
        }
        let (dim, nv, ne) = (head[0], head[1], head[2]);
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        let mut coords = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| Error::InvalidMesh("truncated vertex list".into()))?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "bad coordinate"))?;
            if v.len() != dim {
                return Err(bad(ln, "wrong number of coordinates"));
            }
            coords.push([v[0], if dim == 2 { v[1] } else { 0.0 }]);
        }
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = lines.next().ok_or_else(|| Error::InvalidMesh("truncated element list".into()))?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "bad vertex index"))?;
            if v.len() != dim + 1 {
                return Err(bad(ln, "wrong number of element vertices"));
            }
            elements.push([v[0], v[1], if dim == 2 { v[2] } else { 0 }]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(bad(ln, "trailing content"));
        }
        Mesh::new(dim, coords, elements)
    }

    pub fn read(path: &Path) -> Result<Mesh> {
        Mesh::from_text(&std::fs::read_to_string(path)?)
    }
}

pub fn uniform_interval_mesh(n: usize, interval: (f64, f64)) -> Result<Mesh> {
    let (l, r) = interval;
    if n == 0 {
        return Err(Error::invalid("interval mesh needs at least one element"));
    }
    if !(l < r) || !l.is_finite() || !r.is_finite() {
        return Err(Error::invalid(format!("degenerate interval ({l}, {r})")));
    }
    let h = (r - l) / n as f64;
    let coords = (0..=n)
        .map(|i| [if i == n { r } else { l + i as f64 * h }, 0.0])
        .collect();
    let elements = (0..n).map(|i| [i, i + 1, 0]).collect();
    Mesh::new(1, coords, elements)
}

/// Rectangle `[x0, x1] x [y0, y1]` split into `nx * ny` cells, each cut along
/// the diagonal from its lower-left to its upper-right corner.
pub fn structured_triangle_mesh(nx: usize, ny: usize, rect: [f64; 4]) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid("structured mesh needs nx, ny >= 1"));
    }
    let [x0, x1, y0, y1] = rect;
    if !(x0 < x1 && y0 < y1) {
        return Err(Error::invalid("degenerate rectangle"));
    }
    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
            let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
            coords.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            elements.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(2, coords, elements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_mesh_basics() {
        let m = uniform_interval_mesh(4, (0.0, 1.0)).unwrap();
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.n_vertices(), 5);
        let xs: Vec<f64> = m.coords.iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.interior_vertices().len(), 3);
        assert!((m.shape_regularity() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn counterexample_mesh_size() {
        let m = uniform_interval_mesh(64, (-0.5, 0.5)).unwrap();
        assert!((m.h[0] - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn single_element() {
        let m = uniform_interval_mesh(1, (0.0, 1.0)).unwrap();
        assert!(m.interior_vertices().is_empty());
    }

    #[test]
    fn invalid_interval() {
        assert!(matches!(uniform_interval_mesh(0, (0.0, 1.0)), Err(Error::InvalidArgument(_))));
        assert!(matches!(uniform_interval_mesh(3, (1.0, 1.0)), Err(Error::InvalidArgument(_))));
        assert!(matches!(structured_triangle_mesh(0, 2, [0.0, 1.0, 0.0, 1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn one_cell_square() {
        let m = structured_triangle_mesh(1, 1, [0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert!(m.interior_vertices().is_empty());
        assert_eq!(m.interior_faces().len(), 1);
    }

    #[test]
    fn two_by_two_square() {
        let m = structured_triangle_mesh(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.interior_vertices(), vec![4]);
        let p = m.build_patch(4).unwrap();
        assert_eq!(p.elements.len(), 6);
        assert_eq!(p.faces.len(), 6);
        assert!(p.is_interior);
        assert!((m.total_measure() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn corner_patch() {
        let m = structured_triangle_mesh(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let p = m.build_patch(0).unwrap();
        assert!(!p.is_interior);
        assert!(p.faces.iter().all(|&f| !m.faces[f].is_boundary()));
        assert_eq!(p.faces.len(), 1);
        assert!(m.build_patch(99).is_err());
    }

    #[test]
    fn interval_patch() {
        let m = uniform_interval_mesh(8, (0.0, 1.0)).unwrap();
        let p = m.build_patch(3).unwrap();
        assert_eq!(p.elements.len(), 2);
        assert_eq!(p.faces.len(), 1);
        assert!((p.diameter - 0.25).abs() < 1e-15);
    }

    #[test]
    fn shape_regularity_of_triangles() {
        let m = Mesh::new(2, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        assert!((m.shape_regularity() - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        let s3 = 3f64.sqrt();
        let m = Mesh::new(2, vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.5 * s3]], vec![[0, 1, 2]]).unwrap();
        assert!((m.shape_regularity() - s3).abs() < 1e-12);
    }

    #[test]
    fn orientation_is_fixed() {
        let m = Mesh::new(2, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]]).unwrap();
        assert!(m.maps[0].det > 0.0);
        let m = Mesh::new(1, vec![[1.0, 0.0], [0.0, 0.0]], vec![[0, 1, 0]]).unwrap();
        assert!(m.maps[0].det > 0.0);
    }

    #[test]
    fn degenerate_element_rejected() {
        let r = Mesh::new(2, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]);
        assert!(matches!(r, Err(Error::InvalidElement { .. })));
    }

    #[test]
    fn normals_point_out_of_owner() {
        let m = structured_triangle_mesh(3, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        for f in &m.faces {
            let (e, _) = f.owner;
            let c: Vec<[f64; 2]> = m.element_coords(e);
            let centroid = [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0];
            let a = m.coords[f.vertices[0]];
            let d = [a[0] - centroid[0], a[1] - centroid[1]];
            assert!(f.normal[0] * d[0] + f.normal[1] * d[1] > 0.0);
        }
    }

    #[test]
    fn text_roundtrip() {
        let m = structured_triangle_mesh(2, 3, [0.0, 2.0, -1.0, 1.0]).unwrap();
        let m2 = Mesh::from_text(&m.to_text()).unwrap();
        assert_eq!(m.elements, m2.elements);
        assert_eq!(m.coords, m2.coords);
        assert!(Mesh::from_text("2 3 1\n0 0\n1 0\n").is_err());
    }

    #[test]
    fn refinement() {
        let m = structured_triangle_mesh(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let (f, parent) = m.refine_uniform().unwrap();
        assert_eq!(f.n_elements(), 32);
        assert_eq!(f.n_vertices(), 25);
        assert_eq!(parent.len(), 32);
        assert!((f.total_measure() - 1.0).abs() < 1e-14);
        assert!((f.shape_regularity() - m.shape_regularity()).abs() < 1e-12);
        let m1 = uniform_interval_mesh(3, (0.0, 1.0)).unwrap();
        let (f1, _) = m1.refine_uniform().unwrap();
        assert_eq!(f1.n_elements(), 6);
    }

    #[test]
    fn patch_counts() {
        for m in [
            uniform_interval_mesh(7, (0.0, 1.0)).unwrap(),
            structured_triangle_mesh(3, 4, [0.0, 1.0, 0.0, 1.0]).unwrap(),
        ] {
            let patches = m.patches();
            let total: usize = patches.iter().map(|p| p.elements.len()).sum();
            assert_eq!(total, (m.dim + 1) * m.n_elements());
            for f in m.interior_faces() {
                let count = patches.iter().filter(|p| p.faces.contains(&f)).count();
                assert_eq!(count, m.dim);
            }
        }
    }

    #[test]
    fn shape_regularity_refinement_invariant() {
        let a = structured_triangle_mesh(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap().shape_regularity();
        let b = structured_triangle_mesh(16, 16, [0.0, 1.0, 0.0, 1.0]).unwrap().shape_regularity();
        assert!((a - b).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let m = structured_triangle_mesh(3, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
            let s: f64 = (0..m.n_vertices()).map(|a| m.hat(a, &[x, y])).sum();
            prop_assert!((s - 1.0).abs() < 1e-13);
        }

        #[test]
        fn partition_of_unity_1d(x in -0.5f64..0.5) {
            let m = uniform_interval_mesh(9, (-0.5, 0.5)).unwrap();
            let s: f64 = (0..m.n_vertices()).map(|a| m.hat(a, &[x, 0.0])).sum();
            prop_assert!((s - 1.0).abs() < 1e-13);
        }
    }
}
