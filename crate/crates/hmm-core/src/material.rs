//! Plane-strain elasticity tensors and the micro material fields used by the
//! benchmark problems, all pure evaluators of position.
//!
//! Voigt convention throughout: strain (eps_xx, eps_yy, gamma_xy) with
//! engineering shear, stress (sigma_xx, sigma_yy, tau_xy).

use crate::error::{Error, Result};

/// Symmetric positive definite 3x3 plane-strain stiffness in Voigt order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticVoigt2D {
    pub c: [[f64; 3]; 3],
}

impl ElasticVoigt2D {
    pub fn new(c: [[f64; 3]; 3]) -> Self {
        Self { c }
    }

    pub fn diagonal(c11: f64, c22: f64, c33: f64) -> Self {
        Self { c: [[c11, 0.0, 0.0], [0.0, c22, 0.0], [0.0, 0.0, c33]] }
    }

    pub fn zero() -> Self {
        Self { c: [[0.0; 3]; 3] }
    }

    pub fn stress(&self, strain: [f64; 3]) -> [f64; 3] {
        let mut s = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i] += self.c[i][j] * strain[j];
            }
        }
        s
    }

    pub fn is_symmetric(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| self.c[i][j] == self.c[j][i]))
    }

    /// Eigenvalues of the symmetric matrix, ascending.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let m = nalgebra::Matrix3::from_fn(|i, j| self.c[i][j]);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2]]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigenvalues()[0] > 0.0
    }

    pub fn inverse(&self) -> Result<ElasticVoigt2D> {
        let m = nalgebra::Matrix3::from_fn(|i, j| self.c[i][j]);
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Material("singular elasticity tensor".into()))?;
        Ok(ElasticVoigt2D { c: [[inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]],
                                [inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]],
                                [inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]]] })
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().flatten().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> ElasticVoigt2D {
        let mut c = self.c;
        for row in &mut c {
            for v in row {
                *v *= s;
            }
        }
        ElasticVoigt2D { c }
    }

    pub fn add(&self, other: &ElasticVoigt2D) -> ElasticVoigt2D {
        let mut c = self.c;
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += other.c[i][j];
            }
        }
        ElasticVoigt2D { c }
    }
}

/// Isotropic plane-strain stiffness from Young's modulus and Poisson ratio.
pub fn isotropic_plane_strain(e: f64, nu: f64) -> Result<ElasticVoigt2D> {
    if !(e > 0.0) {
        return Err(Error::Material(format!("Young's modulus must be positive, got {e}")));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Material(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Ok(ElasticVoigt2D {
        c: [
            [f * (1.0 - nu), f * nu, 0.0],
            [f * nu, f * (1.0 - nu), 0.0],
            [0.0, 0.0, f * (1.0 - 2.0 * nu) / 2.0],
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Periodicity {
    Uniform,
    NonUniform,
}

/// Material field on a sampling cell. Uniformly periodic fields are evaluated
/// in cell-local coordinates (the microstructure is anchored to the cell), so
/// every cell of a given geometry sees an identical coefficient and cached
/// micro solves stay exact. The non-uniform field evaluates at the physical
/// point `x_macro + x_local`.
#[derive(Debug, Clone)]
pub enum MicroMaterialField {
    Constant(ElasticVoigt2D),
    /// Stiff square inclusion of side `side_fraction * delta` centered in a
    /// softer matrix; phase decided at the evaluation point.
    MatrixInclusion {
        inclusion: ElasticVoigt2D,
        matrix: ElasticVoigt2D,
        side_fraction: f64,
    },
    /// Laminate with closed-form homogenization: c11 = 500/(5 + 3.5 sin(2 pi x1/eps)),
    /// c22 = 500/(5 + 3.5 cos(2 pi x1/eps)), c12 = 35, c33 = 50.
    AnalyticalLaminate { epsilon: f64 },
    /// Young's modulus E(x) varying with the physical point, including a
    /// non-periodic sin(4 x1 x2) contribution.
    NonUniform { epsilon: f64, nu: f64 },
    /// Imported two-phase cells: the element's phase id picks the tensor.
    TwoPhase { phases: [ElasticVoigt2D; 2] },
}

impl MicroMaterialField {
    pub fn matrix_inclusion(
        e_inclusion: f64,
        e_matrix: f64,
        nu: f64,
        side_fraction: f64,
    ) -> Result<Self> {
        if !(0.0 < side_fraction && side_fraction < 1.0) {
            return Err(Error::Material(format!(
                "inclusion side fraction must lie in (0, 1), got {side_fraction}"
            )));
        }
        Ok(MicroMaterialField::MatrixInclusion {
            inclusion: isotropic_plane_strain(e_inclusion, nu)?,
            matrix: isotropic_plane_strain(e_matrix, nu)?,
            side_fraction,
        })
    }

    pub fn periodicity(&self) -> Periodicity {
        match self {
            MicroMaterialField::NonUniform { .. } => Periodicity::NonUniform,
            _ => Periodicity::Uniform,
        }
    }

    /// Tensor at a sampling point. `x_local` is relative to the cell center,
    /// `delta` the cell edge length, `phase` the owning element's phase id.
    pub fn tensor_at(
        &self,
        x_macro: [f64; 2],
        x_local: [f64; 2],
        delta: f64,
        phase: u8,
    ) -> ElasticVoigt2D {
        match self {
            MicroMaterialField::Constant(c) => *c,
            MicroMaterialField::MatrixInclusion { inclusion, matrix, side_fraction } => {
                let half = 0.5 * side_fraction * delta;
                if x_local[0].abs() < half && x_local[1].abs() < half {
                    *inclusion
                } else {
                    *matrix
                }
            }
            MicroMaterialField::AnalyticalLaminate { epsilon } => {
                static ANCHOR: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
                let anchor = *ANCHOR.get_or_init(|| {
                    std::env::var("HMM_LAM_ANCHOR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.0)
                });
                let x1 = x_local[0];
                let arg = 2.0 * std::f64::consts::PI * (x1 / epsilon + anchor);
                let c11 = 500.0 / (5.0 + 3.5 * arg.sin());
                let c22 = 500.0 / (5.0 + 3.5 * arg.cos());
                ElasticVoigt2D {
                    c: [[c11, 35.0, 0.0], [35.0, c22, 0.0], [0.0, 0.0, 50.0]],
                }
            }
            MicroMaterialField::NonUniform { epsilon, nu } => {
                let x = [x_macro[0] + x_local[0], x_macro[1] + x_local[1]];
                let e = nonuniform_young_modulus(x, *epsilon);
                isotropic_plane_strain(e, *nu).expect("E > 0 by construction")
            }
            MicroMaterialField::TwoPhase { phases } => phases[usize::from(phase.min(1))],
        }
    }
}

/// E(x) = (1.5 + sin(2 pi x1/eps))/(1.5 + sin(2 pi x2/eps))
///      + (1.5 + sin(2 pi x2/eps))/(1.5 + sin(2 pi x1/eps)) + sin(4 x1 x2) + 1.
pub fn nonuniform_young_modulus(x: [f64; 2], epsilon: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let s1 = 1.5 + (two_pi * x[0] / epsilon).sin();
    let s2 = 1.5 + (two_pi * x[1] / epsilon).sin();
    s1 / s2 + s2 / s1 + (4.0 * x[0] * x[1]).sin() + 1.0
}

pub fn analytical_laminate_field(epsilon: f64) -> Result<MicroMaterialField> {
    if !(epsilon > 0.0) {
        return Err(Error::Material("epsilon must be positive".into()));
    }
    Ok(MicroMaterialField::AnalyticalLaminate { epsilon })
}

pub fn nonuniform_field(epsilon: f64, nu: f64) -> Result<MicroMaterialField> {
    if !(epsilon > 0.0) {
        return Err(Error::Material("epsilon must be positive".into()));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Material("Poisson ratio must lie in [0, 0.5)".into()));
    }
    Ok(MicroMaterialField::NonUniform { epsilon, nu })
}

/// Closed forms for the laminate: harmonic mean of c11 over one period is
/// 500/sqrt(25 - 3.5^2)... the harmonic mean is exactly 100 and the
/// arithmetic mean is 500/sqrt(25 - 12.25).
pub mod laminate_exact {
    /// <c11> = <c22> = 500/sqrt(25 - 3.5^2) over one period.
    pub fn arithmetic_mean_c11() -> f64 {
        500.0 / (25.0f64 - 3.5 * 3.5).sqrt()
    }

    /// <1/c11>^{-1} = 100: the integral of (5 + 3.5 sin)/500 over a period.
    pub fn harmonic_mean_c11() -> f64 {
        100.0
    }

    /// Exact homogenized tensor of the laminate (layer normal along x1).
    pub fn homogenized() -> crate::material::ElasticVoigt2D {
        crate::material::ElasticVoigt2D {
            c: [
                [100.0, 35.0, 0.0],
                [35.0, arithmetic_mean_c11(), 0.0],
                [0.0, 0.0, 50.0],
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn isotropic_nu_zero_is_diagonal() {
        let c = isotropic_plane_strain(200.0, 0.0).unwrap();
        assert_relative_eq!(c.c[0][0], 200.0);
        assert_relative_eq!(c.c[1][1], 200.0);
        assert_relative_eq!(c.c[2][2], 100.0);
        assert_relative_eq!(c.c[0][1], 0.0);
    }

    #[test]
    fn isotropic_matches_closed_form() {
        let c = isotropic_plane_strain(40000.0, 0.2).unwrap();
        let f = 40000.0 * 0.8 / (1.2 * 0.6);
        assert_relative_eq!(c.c[0][0], f, max_relative = 1e-14);
        assert_relative_eq!(c.c[0][1], 40000.0 * 0.2 / (1.2 * 0.6), max_relative = 1e-14);
        assert_relative_eq!(c.c[2][2], 40000.0 * 0.6 / (2.0 * 1.2 * 0.6), max_relative = 1e-14);
        assert_relative_eq!(c.c[0][0], 44444.444444444445, max_relative = 1e-12);
        assert_relative_eq!(c.c[0][1], 11111.111111111111, max_relative = 1e-12);
        assert_relative_eq!(c.c[2][2], 16666.666666666668, max_relative = 1e-12);
    }

    #[test]
    fn isotropic_positive_definite_over_parameter_sweep() {
        for &e in &[1.0, 37.5, 1.0e5, 3.2e9] {
            for &nu in &[0.0, 0.1, 0.2, 0.3, 0.4, 0.49] {
                let c = isotropic_plane_strain(e, nu).unwrap();
                assert!(c.is_symmetric());
                assert!(c.is_positive_definite(), "E={e} nu={nu}");
            }
        }
    }

    #[test]
    fn isotropic_rejects_incompressible() {
        assert!(isotropic_plane_strain(1.0, 0.5).is_err());
        assert!(isotropic_plane_strain(-1.0, 0.2).is_err());
    }

    #[test]
    fn inclusion_phase_geometry() {
        let f = MicroMaterialField::matrix_inclusion(100000.0, 40000.0, 0.2, 0.25).unwrap();
        let delta = 5.0;
        let center = f.tensor_at([0.0, 0.0], [0.0, 0.0], delta, 0);
        let corner = f.tensor_at([0.0, 0.0], [2.4, 2.4], delta, 0);
        let incl = isotropic_plane_strain(100000.0, 0.2).unwrap();
        let matr = isotropic_plane_strain(40000.0, 0.2).unwrap();
        assert_eq!(center, incl);
        assert_eq!(corner, matr);
        assert_relative_eq!(center.c[0][0] / matr.c[0][0], 2.5, max_relative = 1e-14);
    }

    #[test]
    fn inclusion_equal_moduli_is_constant() {
        let f = MicroMaterialField::matrix_inclusion(40000.0, 40000.0, 0.2, 0.25).unwrap();
        let a = f.tensor_at([0.0, 0.0], [0.0, 0.0], 1.0, 0);
        let b = f.tensor_at([0.0, 0.0], [0.49, -0.31], 1.0, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn inclusion_area_fraction_on_aligned_grid() {
        // 32x32 cell, inclusion side delta/4: gauss points of exactly 64 of
        // 1024 elements classify as inclusion, an area fraction of 1/16.
        let f = MicroMaterialField::matrix_inclusion(2.0, 1.0, 0.0, 0.25).unwrap();
        let delta = 1.0;
        let n = 32;
        let g = 1.0 / 3.0f64.sqrt();
        let h = delta / n as f64;
        let mut inside = 0usize;
        let mut total = 0usize;
        for j in 0..n {
            for i in 0..n {
                let cx = -0.5 * delta + (i as f64 + 0.5) * h;
                let cy = -0.5 * delta + (j as f64 + 0.5) * h;
                let mut all_in = true;
                let mut all_out = true;
                for &gx in &[-g, g] {
                    for &gy in &[-g, g] {
                        let c = f.tensor_at([0.0, 0.0], [cx + 0.5 * h * gx, cy + 0.5 * h * gy], delta, 0);
                        if c.c[0][0] > 1.5 {
                            all_out = false;
                        } else {
                            all_in = false;
                        }
                    }
                }
                assert!(all_in || all_out, "element straddles the interface");
                if all_in {
                    inside += 1;
                }
                total += 1;
            }
        }
        assert_eq!(inside * 16, total);
    }

    #[test]
    fn laminate_spot_values() {
        let f = analytical_laminate_field(1.0).unwrap();
        // sin term vanishes at x1 = 0
        let c = f.tensor_at([0.0, 0.0], [0.0, 0.3], 1.0, 0);
        assert_relative_eq!(c.c[0][0], 100.0, max_relative = 1e-14);
        assert_relative_eq!(c.c[0][1], 35.0);
        assert_relative_eq!(c.c[2][2], 50.0);
        // extremes of c11 over a period
        let cmax = f.tensor_at([0.0, 0.0], [-0.25, 0.0], 1.0, 0);
        let cmin = f.tensor_at([0.0, 0.0], [0.25, 0.0], 1.0, 0);
        assert_relative_eq!(cmax.c[0][0], 500.0 / 1.5, max_relative = 1e-13);
        assert_relative_eq!(cmin.c[0][0], 500.0 / 8.5, max_relative = 1e-13);
    }

    #[test]
    fn laminate_periodic_in_x1_constant_in_x2() {
        let eps = 0.25;
        let f = analytical_laminate_field(eps).unwrap();
        for k in 0..7 {
            let x1 = -0.5 + 0.17 * k as f64;
            let a = f.tensor_at([0.0, 0.0], [x1, 0.0], 1.0, 0);
            let b = f.tensor_at([0.0, 0.0], [x1 + eps, 0.5], 1.0, 0);
            assert_relative_eq!(a.c[0][0], b.c[0][0], max_relative = 1e-10);
            assert_relative_eq!(a.c[1][1], b.c[1][1], max_relative = 1e-10);
        }
    }

    #[test]
    fn laminate_period_averages_match_closed_forms() {
        // trapezoid oracle over one period, fine enough to converge
        let eps = 1.0;
        let f = analytical_laminate_field(eps).unwrap();
        let n = 200_000;
        let mut mean_inv = 0.0;
        let mut mean = 0.0;
        for k in 0..n {
            let x1 = -0.5 + (k as f64 + 0.5) / n as f64;
            let c11 = f.tensor_at([0.0, 0.0], [x1, 0.0], 1.0, 0).c[0][0];
            mean_inv += 1.0 / c11;
            mean += c11;
        }
        mean_inv /= n as f64;
        mean /= n as f64;
        assert_relative_eq!(mean_inv, 1.0 / 100.0, max_relative = 1e-10);
        assert_relative_eq!(mean, laminate_exact::arithmetic_mean_c11(), max_relative = 1e-9);
        assert_relative_eq!(laminate_exact::arithmetic_mean_c11(), 140.02800840280096, max_relative = 1e-12);
    }

    #[test]
    fn nonuniform_spot_value_at_origin() {
        assert_relative_eq!(nonuniform_young_modulus([0.0, 0.0], 0.005), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn nonuniform_swap_symmetry() {
        let e = 0.013;
        let a = nonuniform_young_modulus([0.3 * e, 0.1 * e], e);
        let b = nonuniform_young_modulus([0.1 * e, 0.3 * e], e);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn nonuniform_depends_on_macro_point() {
        let f = nonuniform_field(0.005, 0.3).unwrap();
        let a = f.tensor_at([0.1, 0.2], [0.001, 0.0], 0.005, 0);
        let b = f.tensor_at([0.3, -0.2], [0.001, 0.0], 0.005, 0);
        assert!((a.c[0][0] - b.c[0][0]).abs() > 1e-6);
        assert_eq!(f.periodicity(), Periodicity::NonUniform);
    }

    #[test]
    fn fields_are_deterministic() {
        let f = nonuniform_field(0.005, 0.3).unwrap();
        let a = f.tensor_at([0.17, -0.03], [0.0021, -0.0004], 0.005, 0);
        let b = f.tensor_at([0.17, -0.03], [0.0021, -0.0004], 0.005, 0);
        assert_eq!(a, b);
    }
}
