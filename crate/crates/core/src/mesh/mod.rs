//! Conforming triangulations with newest-vertex bisection.
//!
//! Every element stores its vertices so that `vertices[0]` is the newest
//! vertex and the edge `(vertices[1], vertices[2])` is its refinement edge.
//! Refinement never renumbers existing vertices: new vertices are appended,
//! which lets nodal fields be carried over by midpoint averaging.

mod build;
mod refine;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::scalar::{dot2, norm2, sub2, Scalar};

pub use build::build_unit_square_with_slit;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn next_mesh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("initial subdivision count {0} must be even and at least 2")]
    BadSubdivision(usize),
    #[error("slit tip y = {0} must lie strictly inside (0, 1) on a lattice line")]
    BadSlitTip(f64),
    #[error("element index {index} out of range ({len} elements)")]
    ElementOutOfRange { index: usize, len: usize },
    #[error("vertex index {index} out of range ({len} vertices)")]
    VertexOutOfRange { index: usize, len: usize },
    #[error("element {0} is degenerate (zero area)")]
    Degenerate(usize),
    #[error("edge ({0}, {1}) is shared by more than two elements")]
    NonManifold(usize, usize),
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
    #[error("refinement edge labels never became compatible")]
    ClosureDiverged,
}

/// Boundary classification of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    /// Loaded part of the top edge left of the slit.
    DirichletTopLeft,
    /// Loaded part of the top edge right of the slit.
    DirichletTopRight,
    NeumannOuter,
    SlitFace,
}

impl BoundaryTag {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, Self::DirichletTopLeft | Self::DirichletTopRight)
    }

    /// Traction-free for the displacement problem (outer Neumann boundary and crack faces).
    pub fn is_neumann(self) -> bool {
        matches!(self, Self::NeumannOuter | Self::SlitFace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    /// `vertices[0]` is the newest vertex; `(vertices[1], vertices[2])` the refinement edge.
    pub vertices: [usize; 3],
    /// Index of the element in the previous generation this one came from.
    pub parent: Option<usize>,
    /// Generation-0 ancestor.
    pub root: usize,
    /// Number of bisections separating this element from its root.
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Sorted vertex pair.
    pub vertices: [usize; 2],
    pub elements: [Option<usize>; 2],
    pub tag: BoundaryTag,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.elements[1].is_none()
    }
}

/// Cached per-element geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry<T> {
    pub area: T,
    /// Longest edge length.
    pub diameter: T,
    /// Gradients of the three barycentric coordinates (constant on the element).
    pub grads: [[T; 2]; 3],
}

/// Set of element indices selected for refinement, sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkedSet(Vec<usize>);

impl MarkedSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn all(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Compressed-row adjacency (vertex plus its edge neighbours, sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

/// A vertex pair whose assembled Laplace stiffness entry is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignViolation<T> {
    pub vertices: [usize; 2],
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct Mesh<T> {
    id: u64,
    generation: u32,
    vertices: Vec<[T; 2]>,
    vertex_parents: Vec<Option<[usize; 2]>>,
    elements: Vec<Element>,
    edges: Vec<Edge>,
    element_edges: Vec<[usize; 3]>,
    geometry: Vec<ElementGeometry<T>>,
    adjacency: Adjacency,
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area<T: Scalar>(p: [[T; 2]; 3]) -> T {
    let half = T::lit(0.5);
    half * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

fn compute_geometry<T: Scalar>(p: [[T; 2]; 3]) -> ElementGeometry<T> {
    let area = signed_area(p);
    let two_a = area + area;
    let grads = [
        [(p[1][1] - p[2][1]) / two_a, (p[2][0] - p[1][0]) / two_a],
        [(p[2][1] - p[0][1]) / two_a, (p[0][0] - p[2][0]) / two_a],
        [(p[0][1] - p[1][1]) / two_a, (p[1][0] - p[0][0]) / two_a],
    ];
    let diameter = norm2(sub2(p[1], p[2]))
        .max(norm2(sub2(p[2], p[0])))
        .max(norm2(sub2(p[0], p[1])));
    ElementGeometry {
        area,
        diameter,
        grads,
    }
}

impl<T: Scalar> Mesh<T> {
    /// Builds a mesh from raw triangles.
    ///
    /// Orientation is normalised to counter-clockwise and each element's
    /// refinement edge is set to its longest edge (ties go to the edge whose
    /// opposite vertex has the lowest index). Boundary edges are classified by
    /// `tagger`, which receives the two endpoint coordinates.
    pub fn from_triangles(
        vertices: Vec<[T; 2]>,
        triangles: &[[usize; 3]],
        tagger: impl Fn([T; 2], [T; 2]) -> BoundaryTag,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut elements = Vec::with_capacity(triangles.len());
        for (index, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange { index: v, len: nv });
                }
            }
            let mut t = *tri;
            let p = t.map(|v| vertices[v]);
            let area = signed_area(p);
            if area == T::zero() {
                return Err(MeshError::Degenerate(index));
            }
            if area < T::zero() {
                t.swap(1, 2);
            }
            // local k is opposite edge (k+1, k+2)
            let len_opp = |k: usize| {
                let a = vertices[t[(k + 1) % 3]];
                let b = vertices[t[(k + 2) % 3]];
                norm2(sub2(a, b))
            };
            let mut best = 0;
            for k in 1..3 {
                let (lk, lb) = (len_opp(k), len_opp(best));
                if lk > lb || (lk == lb && t[k] < t[best]) {
                    best = k;
                }
            }
            let rotated = [t[best], t[(best + 1) % 3], t[(best + 2) % 3]];
            elements.push(Element {
                vertices: rotated,
                parent: None,
                root: index,
                level: 0,
            });
        }
        let boundary_tag = |a: usize, b: usize| Some(tagger(vertices[a], vertices[b]));
        let parents = vec![None; nv];
        Self::assemble(0, vertices.clone(), parents, elements, boundary_tag)
    }

    /// Assembles edge tables, geometry and adjacency from vertices and oriented elements.
    pub(crate) fn assemble(
        generation: u32,
        vertices: Vec<[T; 2]>,
        vertex_parents: Vec<Option<[usize; 2]>>,
        elements: Vec<Element>,
        boundary_tag: impl Fn(usize, usize) -> Option<BoundaryTag>,
    ) -> Result<Self, MeshError> {
        let mut edges: Vec<Edge> = Vec::with_capacity(elements.len() * 3 / 2 + 8);
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.capacity());
        let mut element_edges = Vec::with_capacity(elements.len());
        let mut geometry = Vec::with_capacity(elements.len());
        for (e, el) in elements.iter().enumerate() {
            let vs = el.vertices;
            let geo = compute_geometry(vs.map(|v| vertices[v]));
            if geo.area <= T::zero() {
                return Err(MeshError::Degenerate(e));
            }
            geometry.push(geo);
            let mut local = [0usize; 3];
            for (k, slot) in local.iter_mut().enumerate() {
                let key = edge_key(vs[(k + 1) % 3], vs[(k + 2) % 3]);
                let idx = *lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        elements: [None, None],
                        tag: BoundaryTag::Interior,
                    });
                    edges.len() - 1
                });
                let edge = &mut edges[idx];
                if edge.elements[0].is_none() {
                    edge.elements[0] = Some(e);
                } else if edge.elements[1].is_none() {
                    edge.elements[1] = Some(e);
                } else {
                    return Err(MeshError::NonManifold(key.0, key.1));
                }
                *slot = idx;
            }
            element_edges.push(local);
        }
        for edge in &mut edges {
            if edge.is_boundary() {
                let [a, b] = edge.vertices;
                edge.tag = boundary_tag(a, b).ok_or_else(|| {
                    MeshError::NonConforming(format!("untagged boundary edge ({a}, {b})"))
                })?;
                if edge.tag == BoundaryTag::Interior {
                    return Err(MeshError::NonConforming(format!(
                        "edge ({a}, {b}) has one element but is tagged interior"
                    )));
                }
            }
        }
        let adjacency = build_adjacency(vertices.len(), &edges);
        Ok(Self {
            id: next_mesh_id(),
            generation,
            vertices,
            vertex_parents,
            elements,
            edges,
            element_edges,
            geometry,
            adjacency,
        })
    }

    /// Process-unique identifier; nodal fields record it to detect mismatches.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Refinement round counter (0 for a freshly built mesh).
    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> [T; 2] {
        self.vertices[i]
    }

    /// For vertices created by bisection, the endpoints of the bisected edge.
    pub fn vertex_parents(&self) -> &[Option<[usize; 2]>] {
        &self.vertex_parents
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge indices of each element; entry `k` is the edge opposite local vertex `k`.
    pub fn element_edges(&self) -> &[[usize; 3]] {
        &self.element_edges
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn element_geometry(&self, elem: usize) -> Result<&ElementGeometry<T>, MeshError> {
        self.geometry.get(elem).ok_or(MeshError::ElementOutOfRange {
            index: elem,
            len: self.elements.len(),
        })
    }

    /// Unchecked geometry access for hot loops.
    #[inline]
    pub fn geometry(&self, elem: usize) -> &ElementGeometry<T> {
        &self.geometry[elem]
    }

    pub fn element_points(&self, elem: usize) -> [[T; 2]; 3] {
        self.elements[elem].vertices.map(|v| self.vertices[v])
    }

    pub fn total_area(&self) -> T {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn min_diameter(&self) -> T {
        self.geometry
            .iter()
            .fold(T::infinity(), |m, g| m.min(g.diameter))
    }

    pub fn max_diameter(&self) -> T {
        self.geometry.iter().fold(T::zero(), |m, g| m.max(g.diameter))
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> T {
        (0..self.n_elements())
            .map(|e| min_angle_of(self.element_points(e)))
            .fold(T::infinity(), T::min)
    }

    /// Vertices on edges tagged with a Dirichlet tag, with that tag.
    pub fn dirichlet_vertices(&self) -> Vec<(usize, BoundaryTag)> {
        let mut tags: Vec<Option<BoundaryTag>> = vec![None; self.n_vertices()];
        for edge in &self.edges {
            if edge.tag.is_dirichlet() {
                for &v in &edge.vertices {
                    tags[v] = Some(edge.tag);
                }
            }
        }
        tags.into_iter()
            .enumerate()
            .filter_map(|(v, t)| t.map(|t| (v, t)))
            .collect()
    }

    /// Checks edge incidence, boundary tagging and orientation.
    pub fn check_conformity(&self) -> Result<(), MeshError> {
        for (i, edge) in self.edges.iter().enumerate() {
            if edge.is_boundary() && edge.tag == BoundaryTag::Interior {
                return Err(MeshError::NonConforming(format!(
                    "edge {i} has a single element but no boundary tag"
                )));
            }
            if !edge.is_boundary() && edge.tag != BoundaryTag::Interior {
                return Err(MeshError::NonConforming(format!(
                    "edge {i} is shared by two elements but tagged {:?}",
                    edge.tag
                )));
            }
        }
        for (e, g) in self.geometry.iter().enumerate() {
            if g.area <= T::zero() {
                return Err(MeshError::Degenerate(e));
            }
        }
        Ok(())
    }

    /// Lists vertex pairs whose Laplace stiffness entry is positive.
    ///
    /// Entries within a relative `1e-12` of zero (right angles) are not reported.
    pub fn check_stiffness_sign_condition(&self) -> Vec<SignViolation<T>> {
        let mut acc = vec![T::zero(); self.edges.len()];
        let mut scale = T::zero();
        for (e, g) in self.geometry.iter().enumerate() {
            for k in 0..3 {
                // pair (k+1, k+2) lies on the edge opposite k
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                let val = g.area * dot2(g.grads[i], g.grads[j]);
                acc[self.element_edges[e][k]] += val;
                scale = scale.max(g.area * dot2(g.grads[k], g.grads[k]));
            }
        }
        let tol = T::lit(1e-12) * scale;
        acc.iter()
            .enumerate()
            .filter(|(_, &a)| a > tol)
            .map(|(i, &a)| SignViolation {
                vertices: self.edges[i].vertices,
                value: a,
            })
            .collect()
    }

    /// Element on the other side of `edge` from `elem`, if any.
    pub fn neighbor(&self, elem: usize, edge: usize) -> Option<usize> {
        let [a, b] = self.edges[edge].elements;
        match (a, b) {
            (Some(a), Some(b)) if a == elem => Some(b),
            (Some(a), Some(_)) => Some(a),
            _ => None,
        }
    }

    /// Copy of the mesh with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.id = next_mesh_id();
        for p in &mut out.vertices {
            p[0] *= factor;
            p[1] *= factor;
        }
        for (e, el) in out.elements.iter().enumerate() {
            out.geometry[e] = compute_geometry(el.vertices.map(|v| out.vertices[v]));
        }
        out
    }
}

pub(crate) fn min_angle_of<T: Scalar>(p: [[T; 2]; 3]) -> T {
    let mut best = T::infinity();
    for k in 0..3 {
        let a = sub2(p[(k + 1) % 3], p[k]);
        let b = sub2(p[(k + 2) % 3], p[k]);
        let c = (dot2(a, b) / (norm2(a) * norm2(b)))
            .max(-T::one())
            .min(T::one());
        best = best.min(c.acos());
    }
    best
}

fn build_adjacency(nv: usize, edges: &[Edge]) -> Adjacency {
    let mut counts = vec![1usize; nv];
    for e in edges {
        counts[e.vertices[0]] += 1;
        counts[e.vertices[1]] += 1;
    }
    let mut row_ptr = Vec::with_capacity(nv + 1);
    row_ptr.push(0);
    for c in &counts {
        row_ptr.push(row_ptr.last().unwrap() + c);
    }
    let mut fill = row_ptr[..nv].to_vec();
    let mut col_idx = vec![0usize; row_ptr[nv]];
    for (i, f) in fill.iter_mut().enumerate() {
        col_idx[*f] = i;
        *f += 1;
    }
    for e in edges {
        let [a, b] = e.vertices;
        col_idx[fill[a]] = b;
        fill[a] += 1;
        col_idx[fill[b]] = a;
        fill[b] += 1;
    }
    for i in 0..nv {
        col_idx[row_ptr[i]..row_ptr[i + 1]].sort_unstable();
    }
    Adjacency { row_ptr, col_idx }
}
