use super::{BoundaryTag, Mesh, MeshError};
use crate::scalar::Scalar;

/// Criss-cross triangulation of the unit square with a vertical slit from
/// `(0.5, 1)` down to `(0.5, slit_tip_y)`.
///
/// Each of the `n x n` cells is split into four right triangles through its
/// centre. Lattice vertices on the open slit (the mouth included, the tip
/// excluded) are duplicated; cells right of the slit use the copies, so the
/// two crack faces share no unknowns.
pub fn build_unit_square_with_slit<T: Scalar>(
    n_initial: usize,
    slit_tip_y: f64,
) -> Result<Mesh<T>, MeshError> {
    if n_initial < 2 || !n_initial.is_multiple_of(2) {
        return Err(MeshError::BadSubdivision(n_initial));
    }
    let n = n_initial;
    let tip_steps = slit_tip_y * n as f64;
    let tip_row = tip_steps.round();
    if !(slit_tip_y > 0.0 && slit_tip_y < 1.0) || (tip_steps - tip_row).abs() > 1e-9 {
        return Err(MeshError::BadSlitTip(slit_tip_y));
    }
    let tip_row = tip_row as usize;
    let h = 1.0 / n as f64;
    let mid = n / 2;

    let mut coords: Vec<[f64; 2]> = Vec::with_capacity((n + 1) * (n + 1) + n * n + n);
    for j in 0..=n {
        for i in 0..=n {
            coords.push([i as f64 * h, j as f64 * h]);
        }
    }
    let lattice = |i: usize, j: usize| j * (n + 1) + i;
    let mut right_copy = vec![None; n + 1];
    for (j, slot) in right_copy.iter_mut().enumerate().skip(tip_row + 1) {
        coords.push([0.5, j as f64 * h]);
        *slot = Some(coords.len() - 1);
    }
    let corner = |i: usize, j: usize, right_of_slit: bool| -> usize {
        if right_of_slit && i == mid {
            if let Some(c) = right_copy[j] {
                return c;
            }
        }
        lattice(i, j)
    };

    let mut triangles = Vec::with_capacity(4 * n * n);
    for j in 0..n {
        for i in 0..n {
            let right = i >= mid;
            let p00 = corner(i, j, right);
            let p10 = corner(i + 1, j, right);
            let p11 = corner(i + 1, j + 1, right);
            let p01 = corner(i, j + 1, right);
            coords.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            let c = coords.len() - 1;
            triangles.push([c, p00, p10]);
            triangles.push([c, p10, p11]);
            triangles.push([c, p11, p01]);
            triangles.push([c, p01, p00]);
        }
    }

    let tol = 1e-12;
    let tagger = |a: [T; 2], b: [T; 2]| {
        let (a, b) = (a.map(|x| x.to_f64_lossy()), b.map(|x| x.to_f64_lossy()));
        let xm = 0.5 * (a[0] + b[0]);
        if (a[1] - 1.0).abs() < tol && (b[1] - 1.0).abs() < tol {
            if xm < 0.5 {
                BoundaryTag::DirichletTopLeft
            } else {
                BoundaryTag::DirichletTopRight
            }
        } else if (a[0] - 0.5).abs() < tol && (b[0] - 0.5).abs() < tol {
            BoundaryTag::SlitFace
        } else {
            BoundaryTag::NeumannOuter
        }
    };
    let vertices = coords.into_iter().map(|p| p.map(T::lit)).collect();
    Mesh::from_triangles(vertices, &triangles, tagger)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_bad_tip() {
        assert_eq!(
            build_unit_square_with_slit::<f64>(3, 0.5).unwrap_err(),
            MeshError::BadSubdivision(3)
        );
        assert!(matches!(
            build_unit_square_with_slit::<f64>(4, 1.0),
            Err(MeshError::BadSlitTip(_))
        ));
        assert!(matches!(
            build_unit_square_with_slit::<f64>(4, 0.0),
            Err(MeshError::BadSlitTip(_))
        ));
    }

    #[test]
    fn two_by_two_slit_duplicates_mouth_only() {
        let m = build_unit_square_with_slit::<f64>(2, 0.5).unwrap();
        // 9 lattice + 1 copy + 4 centres
        assert_eq!(m.n_vertices(), 14);
        let at = |x: f64, y: f64| {
            m.vertices()
                .iter()
                .filter(|p| (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12)
                .count()
        };
        assert_eq!(at(0.5, 1.0), 2);
        assert_eq!(at(0.5, 0.5), 1);
        assert_eq!(at(0.5, 0.0), 1);
        m.check_conformity().unwrap();
    }

    #[test]
    fn boundary_tags_follow_geometry() {
        let m = build_unit_square_with_slit::<f64>(4, 0.5).unwrap();
        for e in m.edges() {
            let [a, b] = e.vertices.map(|v| m.vertex(v));
            match e.tag {
                BoundaryTag::DirichletTopLeft => assert!(a[1] == 1.0 && a[0].max(b[0]) <= 0.5),
                BoundaryTag::DirichletTopRight => assert!(a[1] == 1.0 && a[0].min(b[0]) >= 0.5),
                BoundaryTag::SlitFace => assert!(a[0] == 0.5 && a[1].min(b[1]) >= 0.5),
                _ => {}
            }
        }
        let slit = m.edges().iter().filter(|e| e.tag == BoundaryTag::SlitFace).count();
        // two faces, two lattice segments each
        assert_eq!(slit, 4);
        let dirichlet = m.dirichlet_vertices();
        // 5 lattice points on the top edge plus the duplicated mouth
        assert_eq!(dirichlet.len(), 6);
    }

    #[test]
    fn criss_cross_is_non_obtuse() {
        let m = build_unit_square_with_slit::<f64>(4, 0.5).unwrap();
        assert!(m.check_stiffness_sign_condition().is_empty());
        assert!(m.elements().iter().all(|e| e.level == 0 && e.parent.is_none()));
    }
}
