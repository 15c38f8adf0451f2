//! Simplicial meshes (triangles in 2D, tetrahedra in 3D) with Dirichlet /
//! Neumann tagged boundary facets.
//!
//! Meshes are either generated on the unit square / unit cube or loaded from
//! Triangle/TetGen-style `.node` / `.ele` / `.face` files (see [`io`]).
//! Construction always goes through [`Mesh::new`], which normalizes element
//! orientation and validates volumes and facet topology, so a `Mesh` value is
//! valid by construction.

pub mod io;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Relative degeneracy tolerance, scaled by the bounding-box extent^d.
pub const DEGENERACY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

impl BoundaryTag {
    /// Numeric code used in `.face` files.
    pub fn code(self) -> u32 {
        match self {
            BoundaryTag::Dirichlet => 1,
            BoundaryTag::Neumann => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(BoundaryTag::Dirichlet),
            2 => Some(BoundaryTag::Neumann),
            _ => None,
        }
    }
}

/// Rule used to tag the boundary of a generated mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcLayout {
    AllDirichlet,
    AllNeumann,
    /// Dirichlet on the `x_1 = 0` plane, Neumann elsewhere.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<f64>,
    elements: Vec<usize>,
    facets: Vec<usize>,
    tags: Vec<BoundaryTag>,
}

/// Per-element volumes |Omega_l| (areas in 2D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementVolumes {
    pub omega: Vec<f64>,
}

impl ElementVolumes {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.omega.iter().sum()
    }
}

fn factorial(d: usize) -> f64 {
    (1..=d).product::<usize>() as f64
}

/// Determinant of a 2x2 or 3x3 matrix given as rows.
pub(crate) fn det(rows: &[[f64; 3]], dim: usize) -> f64 {
    match dim {
        2 => rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0],
        3 => {
            let [a, b, c] = [rows[0], rows[1], rows[2]];
            a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0])
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

impl Mesh {
    /// Builds a mesh from flat arrays: `nodes` holds `dim` coordinates per node,
    /// `elements` holds `dim + 1` node indices per simplex, `facets` holds
    /// `dim` node indices per boundary facet with one tag each.
    ///
    /// Negatively oriented elements are flipped. Fails on index errors,
    /// degenerate elements, or a facet list that does not match the boundary.
    pub fn new(
        dim: usize,
        nodes: Vec<f64>,
        elements: Vec<usize>,
        facets: Vec<usize>,
        tags: Vec<BoundaryTag>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if nodes.len() % dim != 0 || elements.len() % (dim + 1) != 0 || facets.len() % dim != 0 {
            return Err(Error::InvalidMesh("flat array length is not a multiple of its stride".into()));
        }
        if facets.len() / dim != tags.len() {
            return Err(Error::ShapeMismatch {
                what: "facet tags",
                expected: facets.len() / dim,
                got: tags.len(),
            });
        }
        let n_nodes = nodes.len() / dim;
        for &v in elements.iter() {
            if v >= n_nodes {
                return Err(Error::IndexOutOfRange { what: "element vertex", index: v, len: n_nodes });
            }
        }
        for &v in facets.iter() {
            if v >= n_nodes {
                return Err(Error::IndexOutOfRange { what: "facet vertex", index: v, len: n_nodes });
            }
        }
        let mut mesh = Mesh { dim, nodes, elements, facets, tags };
        mesh.normalize_orientation();
        mesh.validate()?;
        Ok(mesh)
    }

    fn normalize_orientation(&mut self) {
        let d = self.dim;
        for l in 0..self.n_elements() {
            if self.signed_volume(l) < 0.0 {
                let base = l * (d + 1);
                self.elements.swap(base + d - 1, base + d);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn n_facets(&self) -> usize {
        self.tags.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, l: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.elements[l * s..(l + 1) * s]
    }

    pub fn facet(&self, t: usize) -> &[usize] {
        &self.facets[t * self.dim..(t + 1) * self.dim]
    }

    pub fn facet_tag(&self, t: usize) -> BoundaryTag {
        self.tags[t]
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.tags
    }

    pub fn coordinates(&self) -> &[f64] {
        &self.nodes
    }

    pub fn connectivity(&self) -> &[usize] {
        &self.elements
    }

    /// Edge vectors `x_i - x_0` of element `l`, one per row.
    pub(crate) fn edge_matrix(&self, l: usize) -> [[f64; 3]; 3] {
        let e = self.element(l);
        let x0 = self.node(e[0]);
        let mut rows = [[0.0; 3]; 3];
        for (r, &v) in e[1..].iter().enumerate() {
            let x = self.node(v);
            for q in 0..self.dim {
                rows[r][q] = x[q] - x0[q];
            }
        }
        rows
    }

    pub fn signed_volume(&self, l: usize) -> f64 {
        det(&self.edge_matrix(l), self.dim) / factorial(self.dim)
    }

    pub fn centroid(&self, l: usize) -> Vec<f64> {
        centroid_of(self, self.element(l))
    }

    pub fn facet_centroid(&self, t: usize) -> Vec<f64> {
        centroid_of(self, self.facet(t))
    }

    /// Length (2D) or area (3D) of boundary facet `t`.
    pub fn facet_measure(&self, t: usize) -> f64 {
        let f = self.facet(t);
        let a = self.node(f[0]);
        let b = self.node(f[1]);
        let ab: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
        if self.dim == 2 {
            return (ab[0] * ab[0] + ab[1] * ab[1]).sqrt();
        }
        let c = self.node(f[2]);
        let ac: Vec<f64> = c.iter().zip(a).map(|(c, a)| c - a).collect();
        let cross = [
            ab[1] * ac[2] - ab[2] * ac[1],
            ab[2] * ac[0] - ab[0] * ac[2],
            ab[0] * ac[1] - ab[1] * ac[0],
        ];
        0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
    }

    /// Largest coordinate extent of the bounding box.
    pub fn bbox_extent(&self) -> f64 {
        (0..self.dim)
            .map(|q| {
                let it = self.nodes.iter().skip(q).step_by(self.dim);
                let lo = it.clone().cloned().fold(f64::INFINITY, f64::min);
                let hi = it.cloned().fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    fn degeneracy_tolerance(&self) -> f64 {
        DEGENERACY_TOL * self.bbox_extent().powi(self.dim as i32)
    }

    /// Checks volumes and facet topology: every interior face is shared by
    /// exactly two elements, and the tagged facets are exactly the faces
    /// owned by a single element.
    pub fn validate(&self) -> Result<()> {
        let tol = self.degeneracy_tolerance();
        for l in 0..self.n_elements() {
            let v = self.signed_volume(l);
            if !(v > tol) {
                return Err(Error::DegenerateElement { element: l, volume: v, tolerance: tol });
            }
        }
        let counts = self.face_counts();
        if let Some((face, n)) = counts.iter().find(|(_, &n)| n > 2) {
            return Err(Error::InvalidMesh(format!("face {face:?} is shared by {n} elements")));
        }
        let mut listed: HashMap<Vec<usize>, usize> = HashMap::new();
        for t in 0..self.n_facets() {
            let key = sorted(self.facet(t));
            match counts.get(&key) {
                Some(1) => {}
                Some(_) => {
                    return Err(Error::InvalidMesh(format!("facet {t} is an interior face")));
                }
                None => {
                    return Err(Error::InvalidMesh(format!("facet {t} is not a face of any element")));
                }
            }
            if listed.insert(key, t).is_some() {
                return Err(Error::InvalidMesh(format!("facet {t} is listed twice")));
            }
        }
        let boundary = counts.values().filter(|&&n| n == 1).count();
        if boundary != listed.len() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary faces but {} tagged facets; tags must cover the boundary",
                boundary,
                listed.len()
            )));
        }
        Ok(())
    }

    fn face_counts(&self) -> HashMap<Vec<usize>, usize> {
        let mut counts = HashMap::with_capacity(self.n_elements() * (self.dim + 1));
        for l in 0..self.n_elements() {
            for face in element_faces(self.element(l)) {
                *counts.entry(face).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn element_volumes(&self) -> Result<ElementVolumes> {
        let tol = self.degeneracy_tolerance();
        let omega = (0..self.n_elements())
            .map(|l| {
                let v = self.signed_volume(l).abs();
                if v > tol {
                    Ok(v)
                } else {
                    Err(Error::DegenerateElement { element: l, volume: v, tolerance: tol })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ElementVolumes { omega })
    }

    /// Nodes touching at least one Dirichlet facet. A node shared by
    /// Dirichlet and Neumann facets counts as Dirichlet.
    pub fn dirichlet_nodes(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_nodes()];
        for t in 0..self.n_facets() {
            if self.tags[t] == BoundaryTag::Dirichlet {
                for &v in self.facet(t) {
                    mask[v] = true;
                }
            }
        }
        mask
    }

    /// Number of nodes incident to both Dirichlet and Neumann facets.
    pub fn mixed_corner_nodes(&self) -> usize {
        let mut seen = vec![(false, false); self.n_nodes()];
        for t in 0..self.n_facets() {
            for &v in self.facet(t) {
                match self.tags[t] {
                    BoundaryTag::Dirichlet => seen[v].0 = true,
                    BoundaryTag::Neumann => seen[v].1 = true,
                }
            }
        }
        seen.iter().filter(|(d, n)| *d && *n).count()
    }

    pub fn has_dirichlet(&self) -> bool {
        self.tags.contains(&BoundaryTag::Dirichlet)
    }

    /// SHA-256 over dimension, coordinates (bit patterns), connectivity and tags.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for x in &self.nodes {
            h.update(x.to_bits().to_le_bytes());
        }
        for &v in &self.elements {
            h.update((v as u64).to_le_bytes());
        }
        for &v in &self.facets {
            h.update((v as u64).to_le_bytes());
        }
        for t in &self.tags {
            h.update([t.code() as u8]);
        }
        hex(h.finalize().as_slice())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn centroid_of(mesh: &Mesh, vertices: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; mesh.dim];
    for &v in vertices {
        for (ci, x) in c.iter_mut().zip(mesh.node(v)) {
            *ci += x;
        }
    }
    let n = vertices.len() as f64;
    c.iter_mut().for_each(|ci| *ci /= n);
    c
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// The d+1 faces of a simplex as sorted vertex lists, face `i` omitting vertex `i`.
fn element_faces(element: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0..element.len()).map(move |skip| {
        let mut f: Vec<usize> = element
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, &v)| v)
            .collect();
        f.sort_unstable();
        f
    })
}

/// Structured mesh of the unit square (2 m^2 triangles) or unit cube
/// (6 m^3 Kuhn tetrahedra) with boundary facets tagged per `layout`.
pub fn generate_structured(dim: usize, m: usize, layout: BcLayout) -> Result<Mesh> {
    if m == 0 {
        return Err(Error::InvalidArgument("subdivisions per axis must be >= 1".into()));
    }
    let h = m as f64;
    let (nodes, elements) = match dim {
        2 => {
            let idx = |i: usize, j: usize| j * (m + 1) + i;
            let mut nodes = Vec::with_capacity(2 * (m + 1) * (m + 1));
            for j in 0..=m {
                for i in 0..=m {
                    nodes.extend([i as f64 / h, j as f64 / h]);
                }
            }
            let mut elements = Vec::with_capacity(6 * m * m);
            for j in 0..m {
                for i in 0..m {
                    let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                    elements.extend([a, b, c, a, c, d]);
                }
            }
            (nodes, elements)
        }
        3 => {
            let idx = |i: usize, j: usize, k: usize| (k * (m + 1) + j) * (m + 1) + i;
            let mut nodes = Vec::with_capacity(3 * (m + 1).pow(3));
            for k in 0..=m {
                for j in 0..=m {
                    for i in 0..=m {
                        nodes.extend([i as f64 / h, j as f64 / h, k as f64 / h]);
                    }
                }
            }
            const PERMS: [[usize; 3]; 6] =
                [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut elements = Vec::with_capacity(24 * m * m * m);
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        for perm in PERMS {
                            let mut corner = [i, j, k];
                            let mut tet = [idx(i, j, k), 0, 0, 0];
                            for (s, &axis) in perm.iter().enumerate() {
                                corner[axis] += 1;
                                tet[s + 1] = idx(corner[0], corner[1], corner[2]);
                            }
                            elements.extend(tet);
                        }
                    }
                }
            }
            (nodes, elements)
        }
        _ => return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}"))),
    };

    // Boundary facets are the faces owned by exactly one element, in element order.
    let stride = dim + 1;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for e in elements.chunks(stride) {
        for face in element_faces(e) {
            *counts.entry(face).or_insert(0) += 1;
        }
    }
    let mut facets = Vec::new();
    let mut tags = Vec::new();
    for e in elements.chunks(stride) {
        for face in element_faces(e) {
            if counts[&face] == 1 {
                let on_x0 = face.iter().all(|&v| nodes[v * dim] == 0.0);
                tags.push(match layout {
                    BcLayout::AllDirichlet => BoundaryTag::Dirichlet,
                    BcLayout::AllNeumann => BoundaryTag::Neumann,
                    BcLayout::Mixed if on_x0 => BoundaryTag::Dirichlet,
                    BcLayout::Mixed => BoundaryTag::Neumann,
                });
                facets.extend(face);
            }
        }
    }
    Mesh::new(dim, nodes, elements, facets, tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_single_cell() {
        let mesh = generate_structured(2, 1, BcLayout::AllDirichlet).unwrap();
        assert_eq!(mesh.n_elements(), 2);
        assert_eq!(mesh.n_nodes(), 4);
        assert_eq!(mesh.n_facets(), 4);
        let vol = mesh.element_volumes().unwrap();
        assert_eq!(vol.omega, vec![0.5, 0.5]);
    }

    #[test]
    fn unit_cube_kuhn_volumes() {
        let mesh = generate_structured(3, 1, BcLayout::AllNeumann).unwrap();
        assert_eq!(mesh.n_elements(), 6);
        for w in mesh.element_volumes().unwrap().omega {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
        assert_eq!(mesh.n_facets(), 12);
    }

    #[test]
    fn combinatorial_counts() {
        let mesh = generate_structured(2, 4, BcLayout::AllDirichlet).unwrap();
        assert_eq!((mesh.n_elements(), mesh.n_nodes(), mesh.n_facets()), (32, 25, 16));
        let mesh = generate_structured(3, 2, BcLayout::AllNeumann).unwrap();
        assert_eq!((mesh.n_elements(), mesh.n_nodes(), mesh.n_facets()), (48, 27, 48));
    }

    #[test]
    fn volumes_partition_domain() {
        for dim in [2, 3] {
            for m in 1..=16 {
                if dim == 3 && m > 8 {
                    continue;
                }
                let mesh = generate_structured(dim, m, BcLayout::Mixed).unwrap();
                mesh.validate().unwrap();
                let total = mesh.element_volumes().unwrap().total();
                assert!((total - 1.0).abs() < 1e-12, "dim {dim} m {m}: {total}");
            }
        }
    }

    #[test]
    fn reference_simplices() {
        let tri = Mesh::new(
            2,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0, 1, 2],
            vec![0, 1, 1, 2, 2, 0],
            vec![BoundaryTag::Dirichlet; 3],
        )
        .unwrap();
        assert_eq!(tri.element_volumes().unwrap().omega, vec![0.5]);

        let tet = Mesh::new(
            3,
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0, 1, 2, 3],
            vec![1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 2],
            vec![BoundaryTag::Neumann; 4],
        )
        .unwrap();
        assert!((tet.element_volumes().unwrap().omega[0] - 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn clockwise_element_is_flipped() {
        let mesh = Mesh::new(
            2,
            vec![0.0, 0.0, 2.0, 0.0, 0.0, 3.0],
            vec![0, 2, 1],
            vec![0, 1, 1, 2, 2, 0],
            vec![BoundaryTag::Neumann; 3],
        )
        .unwrap();
        // |det([[2,0],[0,3]])| / 2 = 3
        assert_eq!(mesh.signed_volume(0), 3.0);
    }

    #[test]
    fn degenerate_element_rejected() {
        let err = Mesh::new(
            2,
            vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0],
            vec![0, 1, 2],
            vec![0, 1, 1, 2, 2, 0],
            vec![BoundaryTag::Neumann; 3],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateElement { element: 0, .. }));
    }

    #[test]
    fn incomplete_boundary_rejected() {
        let err = Mesh::new(
            2,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0, 1, 2],
            vec![0, 1, 1, 2],
            vec![BoundaryTag::Neumann; 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)));
    }

    #[test]
    fn mixed_layout_tags_x0_plane() {
        let mesh = generate_structured(2, 3, BcLayout::Mixed).unwrap();
        let dirichlet = mesh.tags().iter().filter(|&&t| t == BoundaryTag::Dirichlet).count();
        assert_eq!(dirichlet, 3);
        // corners (0,0) and (0,1) touch both parts
        assert_eq!(mesh.mixed_corner_nodes(), 2);
        let mask = mesh.dirichlet_nodes();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 4);
    }

    #[test]
    fn facet_measures_sum_to_perimeter() {
        let mesh = generate_structured(2, 5, BcLayout::AllNeumann).unwrap();
        let perim: f64 = (0..mesh.n_facets()).map(|t| mesh.facet_measure(t)).sum();
        assert!((perim - 4.0).abs() < 1e-12);
        let cube = generate_structured(3, 2, BcLayout::AllNeumann).unwrap();
        let area: f64 = (0..cube.n_facets()).map(|t| cube.facet_measure(t)).sum();
        assert!((area - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_tracks_coordinates() {
        let a = generate_structured(2, 2, BcLayout::AllDirichlet).unwrap();
        let b = generate_structured(2, 2, BcLayout::AllNeumann).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
