//! Homogenized elasticity tensors from cell solves: the unit-strain-state
//! route, the volumetric (Voigt) mean, and the static-condensation route of
//! strain-driven computational homogenization. The two solve routes agree to
//! solver precision and both are kept as a cross-check.

use crate::error::{Error, Result};
use crate::fem::{bmatrix, point_geometry, reference_quadrature};
use crate::material::ElasticVoigt2D;
use crate::micro::{CellOperators, MicroDomain};
use faer::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRoute {
    UnitStrain,
    Condensation,
}

/// Homogenized tensor with the provenance of its computation.
#[derive(Debug, Clone)]
pub struct HomogenizedTensor {
    pub a0h: ElasticVoigt2D,
    pub resolution: usize,
    pub delta: f64,
    pub center: [f64; 2],
    pub route: TensorRoute,
}

fn domain_resolution(domain: &MicroDomain) -> usize {
    match domain.mesh.grid {
        Some(g) => g.nx,
        None => domain.mesh.element_count(),
    }
}

/// Nodal values of the linear field u = eps_bar . x for a Voigt unit strain;
/// the shear state carries engineering shear gamma = 1, i.e. eps_12 = 1/2.
pub fn unit_strain_drive(domain: &MicroDomain, voigt_index: usize) -> Vec<f64> {
    let mut d = vec![0.0; domain.mesh.dof_count()];
    for (m, p) in domain.mesh.nodes.iter().enumerate() {
        let (ux, uy) = match voigt_index {
            0 => (p[0], 0.0),
            1 => (0.0, p[1]),
            2 => (0.5 * p[1], 0.5 * p[0]),
            _ => panic!("Voigt index out of range"),
        };
        d[2 * m] = ux;
        d[2 * m + 1] = uy;
    }
    d
}

/// A0h from the three unit strain states: A_IJ = (1/|K|) u_I' K u_J with u_I
/// the constrained minimizer driven by unit strain I.
pub fn homogenized_tensor_unit_strain(ops: &CellOperators) -> Result<HomogenizedTensor> {
    let dim = ops.domain.mesh.dof_count();
    let mut drives = Mat::zeros(dim, 3);
    for v in 0..3 {
        let d = unit_strain_drive(&ops.domain, v);
        for (i, val) in d.iter().enumerate() {
            drives[(i, v)] = *val;
        }
    }
    let sol = ops.solve_constrained(&drives)?;
    let vol = ops.domain.cell_volume();
    let cols: Vec<Vec<f64>> =
        (0..3).map(|j| (0..dim).map(|r| sol[(r, j)]).collect()).collect();
    let mut c = [[0.0; 3]; 3];
    for j in 0..3 {
        for i in 0..=j {
            let v = ops.k_mic.quadratic_precise(&cols[i], &cols[j]) / vol;
            c[i][j] = v;
            c[j][i] = v;
        }
    }
    Ok(HomogenizedTensor {
        a0h: ElasticVoigt2D::new(c),
        resolution: domain_resolution(&ops.domain),
        delta: ops.domain.delta,
        center: ops.domain.center,
        route: TensorRoute::UnitStrain,
    })
}

/// Quadrature average of the material tensor over the cell.
pub fn volumetric_mean(domain: &MicroDomain) -> Result<ElasticVoigt2D> {
    let mesh = &domain.mesh;
    let mut acc = ElasticVoigt2D::zero();
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let coords = mesh.element_coords(e);
        let quad = reference_quadrature(el.kind);
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            let geo = point_geometry(el.kind, &coords, xi)?;
            let c = domain.tensor_at(geo.x, el.phase);
            acc = acc.add(&c.scaled(w * geo.det_j));
        }
    }
    Ok(acc.scaled(1.0 / domain.cell_volume()))
}

/// Harmonic-type lower bound: inverse of the quadrature average of the
/// compliance.
pub fn reuss_lower_bound(domain: &MicroDomain) -> Result<ElasticVoigt2D> {
    let mesh = &domain.mesh;
    let mut acc = ElasticVoigt2D::zero();
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let coords = mesh.element_coords(e);
        let quad = reference_quadrature(el.kind);
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            let geo = point_geometry(el.kind, &coords, xi)?;
            let c = domain.tensor_at(geo.x, el.phase).inverse()?;
            acc = acc.add(&c.scaled(w * geo.det_j));
        }
    }
    acc.scaled(1.0 / domain.cell_volume()).inverse()
}

/// Static-condensation route: A_bar = A_Voigt - (1/|K|) L' X where K X = L
/// under the periodic constraint set, with L assembled from B' A integrals.
pub fn homogenized_tensor_condensation(ops: &CellOperators) -> Result<HomogenizedTensor> {
    let mesh = &ops.domain.mesh;
    let dim = mesh.dof_count();
    let mut l_bar = Mat::<f64>::zeros(dim, 3);
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let coords = mesh.element_coords(e);
        let quad = reference_quadrature(el.kind);
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            let geo = point_geometry(el.kind, &coords, xi)?;
            let b = bmatrix(&geo.grads);
            let c = ops.domain.tensor_at(geo.x, el.phase);
            let scale = w * geo.det_j;
            for (a, &n) in el.conn.iter().enumerate() {
                for comp in 0..2 {
                    let row = 2 * n + comp;
                    for j in 0..3 {
                        let mut acc = 0.0;
                        for k in 0..3 {
                            acc += b[(k, 2 * a + comp)] * c.c[k][j];
                        }
                        l_bar[(row, j)] += scale * acc;
                    }
                }
            }
        }
    }
    let zero_drive = Mat::zeros(dim, 3);
    let x = ops.solve_kkt(&l_bar, &zero_drive)?;
    let a_voigt = volumetric_mean(&ops.domain)?;
    let vol = ops.domain.cell_volume();
    let mut c = a_voigt.c;
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = crate::fem::CompensatedSum::default();
            for r in 0..dim {
                acc.add(l_bar[(r, i)] * x[(r, j)]);
            }
            c[i][j] -= acc.value() / vol;
        }
    }
    // symmetrize roundoff
    for i in 0..3 {
        for j in 0..i {
            let v = 0.5 * (c[i][j] + c[j][i]);
            c[i][j] = v;
            c[j][i] = v;
        }
    }
    Ok(HomogenizedTensor {
        a0h: ElasticVoigt2D::new(c),
        resolution: domain_resolution(&ops.domain),
        delta: ops.domain.delta,
        center: ops.domain.center,
        route: TensorRoute::Condensation,
    })
}

/// Tensor components tracked by the convergence studies.
pub const TENSOR_COMPONENTS: [(usize, usize, &str); 4] =
    [(0, 0, "A11"), (0, 1, "A12"), (1, 1, "A22"), (2, 2, "A33")];

#[derive(Debug, Clone)]
pub struct TensorConvergence {
    pub resolutions: Vec<usize>,
    /// Tensor per resolution, reference last.
    pub tensors: Vec<ElasticVoigt2D>,
    pub reference: ElasticVoigt2D,
    /// Per tracked component: |A(L) - A(L_ref)| sequences.
    pub errors: Vec<Vec<f64>>,
    /// Per tracked component: fitted order over h/eps = 1/L, when the
    /// sequence stays away from roundoff.
    pub orders: Vec<Option<f64>>,
}

/// Sweep micro resolutions against a finer reference resolution.
pub fn a0h_convergence(
    field: &crate::material::MicroMaterialField,
    center: [f64; 2],
    delta: f64,
    resolutions: &[usize],
    l_ref: usize,
) -> Result<TensorConvergence> {
    if resolutions.iter().any(|&l| l >= l_ref) {
        return Err(Error::Invalid(format!(
            "reference resolution {l_ref} must exceed every study resolution"
        )));
    }
    let tensor_at = |l: usize| -> Result<ElasticVoigt2D> {
        let domain = MicroDomain::structured(center, delta, l, field.clone())?;
        let ops = CellOperators::new(domain)?;
        Ok(homogenized_tensor_unit_strain(&ops)?.a0h)
    };
    let tensors: Vec<ElasticVoigt2D> =
        resolutions.iter().map(|&l| tensor_at(l)).collect::<Result<_>>()?;
    let reference = tensor_at(l_ref)?;
    let sizes: Vec<f64> = resolutions.iter().map(|&l| 1.0 / l as f64).collect();
    let mut errors = Vec::new();
    let mut orders = Vec::new();
    for &(i, j, _) in &TENSOR_COMPONENTS {
        let errs: Vec<f64> =
            tensors.iter().map(|t| (t.c[i][j] - reference.c[i][j]).abs()).collect();
        let floor = 1e-12 * reference.max_abs();
        let order = if errs.iter().all(|&e| e > floor) && errs.len() >= 3 {
            crate::postprocess::convergence_order(&sizes, &errs).ok().map(|r| r.fitted_order)
        } else {
            None
        };
        errors.push(errs);
        orders.push(order);
    }
    Ok(TensorConvergence { resolutions: resolutions.to_vec(), tensors, reference, errors, orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{
        analytical_laminate_field, isotropic_plane_strain, laminate_exact, MicroMaterialField,
    };
    use approx::assert_relative_eq;

    fn laminate_ops(l: usize) -> CellOperators {
        let eps = 0.005;
        let field = analytical_laminate_field(eps).unwrap();
        let domain = MicroDomain::structured([0.0, 0.0], eps, l, field).unwrap();
        CellOperators::new(domain).unwrap()
    }

    #[test]
    fn constant_material_recovers_itself() {
        let c = isotropic_plane_strain(40000.0, 0.2).unwrap();
        let domain =
            MicroDomain::structured([1.0, 2.0], 5.0, 8, MicroMaterialField::Constant(c)).unwrap();
        let ops = CellOperators::new(domain).unwrap();
        let unit = homogenized_tensor_unit_strain(&ops).unwrap().a0h;
        let cond = homogenized_tensor_condensation(&ops).unwrap().a0h;
        let mean = volumetric_mean(&ops.domain).unwrap();
        let scale = c.max_abs();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(unit.c[i][j], c.c[i][j], epsilon = 1e-10 * scale);
                assert_relative_eq!(cond.c[i][j], c.c[i][j], epsilon = 1e-10 * scale);
                assert_relative_eq!(mean.c[i][j], c.c[i][j], epsilon = 1e-12 * scale);
            }
        }
    }

    #[test]
    fn laminate_constants_exact_and_diagonals_converge() {
        let ops = laminate_ops(40);
        let t = homogenized_tensor_unit_strain(&ops).unwrap().a0h;
        // constant entries are reproduced to solver precision
        assert_relative_eq!(t.c[0][1], 35.0, epsilon = 1e-8);
        assert_relative_eq!(t.c[2][2], 50.0, epsilon = 1e-8);
        assert!(t.c[0][2].abs() < 1e-8 && t.c[1][2].abs() < 1e-8);
        // diagonals approach the analytic laminate values from above
        assert!((t.c[0][0] - 100.0).abs() < 0.1);
        assert!((t.c[1][1] - laminate_exact::arithmetic_mean_c11()).abs() < 1e-3);
        assert!(t.c[0][0] > 100.0);
    }

    #[test]
    fn laminate_mean_matches_analytic_integral() {
        let ops = laminate_ops(160);
        let mean = volumetric_mean(&ops.domain).unwrap();
        assert_relative_eq!(
            mean.c[0][0],
            laminate_exact::arithmetic_mean_c11(),
            epsilon = 1e-3
        );
        assert_relative_eq!(mean.c[0][1], 35.0, epsilon = 1e-9);
    }

    #[test]
    fn routes_agree_on_heterogeneous_cells() {
        let fields: Vec<MicroMaterialField> = vec![
            analytical_laminate_field(1.0).unwrap(),
            MicroMaterialField::matrix_inclusion(100000.0, 40000.0, 0.2, 0.25).unwrap(),
        ];
        for field in fields {
            let domain = MicroDomain::structured([0.2, -0.4], 1.0, 16, field).unwrap();
            let ops = CellOperators::new(domain).unwrap();
            let a = homogenized_tensor_unit_strain(&ops).unwrap().a0h;
            let b = homogenized_tensor_condensation(&ops).unwrap().a0h;
            let scale = a.max_abs();
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (a.c[i][j] - b.c[i][j]).abs() <= 1e-8 * scale,
                        "routes differ at ({i},{j}): {} vs {}",
                        a.c[i][j],
                        b.c[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn major_symmetry_and_voigt_bound() {
        let field = MicroMaterialField::matrix_inclusion(100000.0, 40000.0, 0.2, 0.25).unwrap();
        let domain = MicroDomain::structured([0.0, 0.0], 5.0, 16, field).unwrap();
        let ops = CellOperators::new(domain).unwrap();
        let t = homogenized_tensor_unit_strain(&ops).unwrap().a0h;
        let scale = t.max_abs();
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.c[i][j] - t.c[j][i]).abs() <= 1e-10 * scale);
            }
        }
        let voigt = volumetric_mean(&ops.domain).unwrap();
        let mut diff = voigt.c;
        for i in 0..3 {
            for j in 0..3 {
                diff[i][j] -= t.c[i][j];
            }
        }
        let gap = ElasticVoigt2D::new(diff);
        assert!(
            gap.eigenvalues()[0] >= -1e-8 * voigt.max_abs(),
            "Voigt mean must bound the homogenized tensor from above"
        );
        assert!(t.is_positive_definite());
    }

    #[test]
    fn laminate_reuss_bound_brackets() {
        let ops = laminate_ops(32);
        let t = homogenized_tensor_unit_strain(&ops).unwrap().a0h;
        let reuss = reuss_lower_bound(&ops.domain).unwrap();
        let mut diff = t.c;
        for i in 0..3 {
            for j in 0..3 {
                diff[i][j] -= reuss.c[i][j];
            }
        }
        assert!(
            ElasticVoigt2D::new(diff).eigenvalues()[0] >= -1e-8 * t.max_abs(),
            "Reuss bound must sit below the homogenized tensor"
        );
    }

    #[test]
    fn laminate_a11_decreases_toward_harmonic_mean() {
        let mut prev = f64::INFINITY;
        for l in [8usize, 16, 32, 64] {
            let ops = laminate_ops(l);
            let a11 = homogenized_tensor_unit_strain(&ops).unwrap().a0h.c[0][0];
            assert!(a11 < prev, "A11 should decrease monotonically, got {a11} after {prev}");
            assert!(a11 > 100.0);
            prev = a11;
        }
    }

    #[test]
    fn constant_material_convergence_errors_vanish() {
        let c = isotropic_plane_strain(7.0, 0.3).unwrap();
        let conv = a0h_convergence(
            &MicroMaterialField::Constant(c),
            [0.0, 0.0],
            1.0,
            &[4, 8, 16],
            32,
        )
        .unwrap();
        for errs in &conv.errors {
            for &e in errs {
                assert!(e < 1e-10, "constant material error {e}");
            }
        }
        assert!(conv.orders.iter().all(|o| o.is_none()));
    }

    #[test]
    fn convergence_rejects_bad_reference() {
        let c = isotropic_plane_strain(7.0, 0.3).unwrap();
        assert!(a0h_convergence(
            &MicroMaterialField::Constant(c),
            [0.0, 0.0],
            1.0,
            &[4, 8, 32],
            32
        )
        .is_err());
    }
}
