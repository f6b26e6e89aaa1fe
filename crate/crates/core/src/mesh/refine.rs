use std::collections::{HashMap, VecDeque};

use super::{edge_key, BoundaryTag, Element, MarkedSet, Mesh, MeshError};
use crate::scalar::Scalar;

impl<T: Scalar> Mesh<T> {
    /// Newest-vertex bisection of every marked element plus conformity closure.
    ///
    /// Closure marks the refinement edge of every element that has any marked
    /// edge, until a fixpoint; each element is then bisected up to three times.
    /// An empty marked set returns an identical copy (same id).
    pub fn bisect(&self, marked: &MarkedSet) -> Result<Mesh<T>, MeshError> {
        let ne = self.n_elements();
        if let Some(&bad) = marked.indices().iter().find(|&&i| i >= ne) {
            return Err(MeshError::ElementOutOfRange { index: bad, len: ne });
        }
        if marked.is_empty() {
            return Ok(self.clone());
        }

        let mut edge_marked = vec![false; self.edges.len()];
        let mut queue = VecDeque::new();
        for &e in marked.indices() {
            let ref_edge = self.element_edges[e][0];
            if !edge_marked[ref_edge] {
                edge_marked[ref_edge] = true;
                queue.extend(self.edges[ref_edge].elements.iter().flatten());
            }
        }
        let mut guard = 0usize;
        let limit = 4 * self.edges.len() + 16;
        while let Some(e) = queue.pop_front() {
            let e: usize = e;
            guard += 1;
            if guard > 8 * limit {
                return Err(MeshError::ClosureDiverged);
            }
            let ref_edge = self.element_edges[e][0];
            if edge_marked[ref_edge] {
                continue;
            }
            if self.element_edges[e].iter().any(|&k| edge_marked[k]) {
                edge_marked[ref_edge] = true;
                queue.extend(self.edges[ref_edge].elements.iter().flatten());
            }
        }

        let mut vertices = self.vertices.clone();
        let mut vertex_parents = self.vertex_parents.clone();
        let mut midpoint = HashMap::new();
        let half = T::lit(0.5);
        for (k, edge) in self.edges.iter().enumerate() {
            if edge_marked[k] {
                let [a, b] = edge.vertices;
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                vertices.push([half * (pa[0] + pb[0]), half * (pa[1] + pb[1])]);
                vertex_parents.push(Some([a, b]));
                midpoint.insert((a, b), vertices.len() - 1);
            }
        }
        let mid_of = |a: usize, b: usize| midpoint.get(&edge_key(a, b)).copied();

        let mut elements = Vec::with_capacity(ne + 2 * marked.len());
        for (e, el) in self.elements.iter().enumerate() {
            let child = |vertices: [usize; 3], depth: u32| Element {
                vertices,
                parent: Some(e),
                root: el.root,
                level: el.level + depth,
            };
            let [a, b, c] = el.vertices;
            let Some(m) = mid_of(b, c) else {
                elements.push(child(el.vertices, 0));
                continue;
            };
            // children [m, a, b] and [m, c, a]; their refinement edges are (a, b) and (c, a)
            for (x0, x1, x2) in [(m, a, b), (m, c, a)] {
                match mid_of(x1, x2) {
                    Some(m2) => {
                        elements.push(child([m2, x0, x1], 2));
                        elements.push(child([m2, x2, x0], 2));
                    }
                    None => elements.push(child([x0, x1, x2], 1)),
                }
            }
        }

        let mut tags: HashMap<(usize, usize), BoundaryTag> = HashMap::new();
        for edge in self.edges.iter().filter(|e| e.is_boundary()) {
            let [a, b] = edge.vertices;
            match mid_of(a, b) {
                Some(m) => {
                    tags.insert(edge_key(a, m), edge.tag);
                    tags.insert(edge_key(m, b), edge.tag);
                }
                None => {
                    tags.insert((a, b), edge.tag);
                }
            }
        }
        Mesh::assemble(
            self.generation + 1,
            vertices,
            vertex_parents,
            elements,
            |a, b| tags.get(&edge_key(a, b)).copied(),
        )
    }

    /// Bisects every element (`rounds` times).
    pub fn refine_uniform(&self, rounds: usize) -> Result<Mesh<T>, MeshError> {
        let mut mesh = self.clone();
        for _ in 0..rounds {
            mesh = mesh.bisect(&MarkedSet::all(mesh.n_elements()))?;
        }
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_with_slit;

    #[test]
    fn single_triangle_bisects_hypotenuse() {
        let m = Mesh::<f64>::from_triangles(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            &[[0, 1, 2]],
            |_, _| BoundaryTag::NeumannOuter,
        )
        .unwrap();
        let r = m.bisect(&MarkedSet::new(vec![0])).unwrap();
        assert_eq!(r.n_elements(), 2);
        assert_eq!(r.n_vertices(), 4);
        assert_eq!(r.vertex(3), [0.5, 0.5]);
        for el in r.elements() {
            assert_eq!(el.vertices[0], 3);
            assert_eq!(el.parent, Some(0));
        }
        assert_eq!(r.vertex_parents()[3], Some([1, 2]));
        assert_eq!(r.generation(), 1);
        r.check_conformity().unwrap();
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = build_unit_square_with_slit::<f64>(2, 0.5).unwrap();
        let r = m.bisect(&MarkedSet::default()).unwrap();
        assert_eq!(r.id(), m.id());
        assert_eq!(r.elements(), m.elements());
        assert_eq!(r.vertices(), m.vertices());
    }

    #[test]
    fn out_of_range_mark_rejected() {
        let m = build_unit_square_with_slit::<f64>(2, 0.5).unwrap();
        assert!(matches!(
            m.bisect(&MarkedSet::new(vec![999])),
            Err(MeshError::ElementOutOfRange { .. })
        ));
    }

    #[test]
    fn slit_faces_stay_separated() {
        let m = build_unit_square_with_slit::<f64>(2, 0.5).unwrap();
        let r = m.refine_uniform(4).unwrap();
        r.check_conformity().unwrap();
        let slit: Vec<_> = r
            .edges()
            .iter()
            .filter(|e| e.tag == BoundaryTag::SlitFace)
            .collect();
        // both faces stay boundary edges and cover the slit twice
        let len: f64 = slit
            .iter()
            .map(|e| {
                let [a, b] = e.vertices.map(|v| r.vertex(v));
                (a[1] - b[1]).abs()
            })
            .sum();
        assert!((len - 1.0).abs() < 1e-12);
        assert!(slit.iter().all(|e| e.is_boundary()));
    }

    #[test]
    fn uniform_refinement_preserves_area_and_angles() {
        let m = build_unit_square_with_slit::<f64>(4, 0.5).unwrap();
        let r = m.refine_uniform(3).unwrap();
        assert_eq!(r.n_elements(), 8 * m.n_elements());
        assert!((r.total_area() - 1.0).abs() < 1e-12);
        assert!((r.min_angle() - m.min_angle()).abs() < 1e-12);
        assert!(r.check_stiffness_sign_condition().is_empty());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn random_bisection_keeps_area_and_conformity(seed in 0u64..1000, rounds in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mesh = build_unit_square_with_slit::<f64>(2, 0.5).unwrap();
            let alpha0 = mesh.min_angle();
            for _ in 0..rounds {
                let marked: Vec<usize> = (0..mesh.n_elements()).filter(|_| rng.gen_bool(0.3)).collect();
                let fine = mesh.bisect(&MarkedSet::new(marked.clone())).unwrap();
                proptest::prop_assert!(fine.n_elements() >= mesh.n_elements() + marked.len());
                mesh = fine;
            }
            proptest::prop_assert!(mesh.check_conformity().is_ok());
            proptest::prop_assert!((mesh.total_area() - 1.0).abs() < 1e-13);
            proptest::prop_assert!(mesh.min_angle() >= 0.5 * alpha0);
        }
    }
}
