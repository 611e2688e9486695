//! Measurement apparatus: norms of FE fields, errors against overkill
//! references (nested prolongation or structured-grid evaluation), fitted
//! convergence orders, stress sampling and the two macro stress routes.

use crate::error::{Error, Result};
use crate::fem::{bmatrix, point_geometry, q1_gradients, q1_values, reference_quadrature, SparseSym};
use crate::macroscale::MacroSolution;
use crate::material::ElasticVoigt2D;
use crate::mesh::{GridInfo, Mesh, NestedMap};
use crate::micro::cell_averages;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
    Energy,
    Max,
}

/// Squared L2 norm and squared H1 seminorm of the FE interpolant by
/// element-wise Gauss quadrature.
pub fn field_integrals(mesh: &Mesh, u: &[f64]) -> Result<(f64, f64)> {
    assert_eq!(u.len(), mesh.dof_count());
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let coords = mesh.element_coords(e);
        let quad = reference_quadrature(el.kind);
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            let geo = point_geometry(el.kind, &coords, xi)?;
            let mut val = [0.0f64; 2];
            let mut grad = [[0.0f64; 2]; 2];
            for (a, &n) in el.conn.iter().enumerate() {
                for i in 0..2 {
                    let d = u[2 * n + i];
                    val[i] += geo.shape[a] * d;
                    grad[i][0] += geo.grads[a][0] * d;
                    grad[i][1] += geo.grads[a][1] * d;
                }
            }
            let dv = w * geo.det_j;
            l2 += dv * (val[0] * val[0] + val[1] * val[1]);
            h1 += dv
                * (grad[0][0] * grad[0][0]
                    + grad[0][1] * grad[0][1]
                    + grad[1][0] * grad[1][0]
                    + grad[1][1] * grad[1][1]);
        }
    }
    Ok((l2, h1))
}

/// Norm of a nodal field. The H1 norm rescales coordinates by `scale` before
/// differentiation, which leaves the seminorm part invariant and multiplies
/// the L2 part by `scale`; the energy norm needs the assembled stiffness.
pub fn norm(
    mesh: &Mesh,
    u: &[f64],
    kind: NormKind,
    scale: f64,
    stiffness: Option<&SparseSym>,
) -> Result<f64> {
    match kind {
        NormKind::Max => Ok(max_nodal_magnitude(u)),
        NormKind::Energy => {
            let k = stiffness
                .ok_or_else(|| Error::Invalid("energy norm requires the stiffness matrix".into()))?;
            Ok(k.quadratic(u, u).max(0.0).sqrt())
        }
        NormKind::L2 => {
            let (l2, _) = field_integrals(mesh, u)?;
            Ok(l2.sqrt())
        }
        NormKind::H1 => {
            let (l2, h1) = field_integrals(mesh, u)?;
            Ok((h1 + scale * scale * l2).sqrt())
        }
    }
}

/// Q1-interpolate a coarse nodal field onto the fine mesh of a nested pair.
pub fn prolong(coarse: &Mesh, coarse_u: &[f64], fine: &Mesh, map: &NestedMap) -> Vec<f64> {
    let mut out = vec![0.0; fine.dof_count()];
    for (fnode, &(el, xi)) in map.fine_to_coarse.iter().enumerate() {
        let conn = &coarse.elements[el].conn;
        let shape = q1_values(xi);
        for (a, &n) in conn.iter().enumerate() {
            out[2 * fnode] += shape[a] * coarse_u[2 * n];
            out[2 * fnode + 1] += shape[a] * coarse_u[2 * n + 1];
        }
    }
    // coinciding nodes are exact by the Kronecker property; overwrite to kill
    // last-bit interpolation noise
    for (cnode, &fnode) in map.coarse_to_fine.iter().enumerate() {
        out[2 * fnode] = coarse_u[2 * cnode];
        out[2 * fnode + 1] = coarse_u[2 * cnode + 1];
    }
    out
}

/// Largest Euclidean displacement magnitude over the nodes of an interleaved
/// (u, v) vector; the pointwise supremum of a Q1 field sits at a node.
pub fn max_nodal_magnitude(u: &[f64]) -> f64 {
    u.chunks_exact(2).map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
    pub energy: Option<f64>,
    pub max: f64,
}

/// Error of a coarse solution against a nested fine reference: the coarse
/// field is prolonged exactly, the difference measured on the fine mesh; the
/// energy error uses the fine-mesh stiffness.
pub fn error_between(
    coarse_mesh: &Mesh,
    coarse_u: &[f64],
    fine_mesh: &Mesh,
    fine_u: &[f64],
    map: &NestedMap,
    h1_scale: f64,
    fine_stiffness: Option<&SparseSym>,
) -> Result<ErrorNorms> {
    let pro = prolong(coarse_mesh, coarse_u, fine_mesh, map);
    let e: Vec<f64> = pro.iter().zip(fine_u).map(|(a, b)| a - b).collect();
    let (l2sq, h1sq) = field_integrals(fine_mesh, &e)?;
    let energy = fine_stiffness.map(|k| k.quadratic(&e, &e).max(0.0).sqrt());
    Ok(ErrorNorms {
        l2: l2sq.sqrt(),
        h1: (h1sq + h1_scale * h1_scale * l2sq).sqrt(),
        energy,
        max: max_nodal_magnitude(&e),
    })
}

/// Nodal field on a structured grid, evaluated anywhere in the domain.
#[derive(Clone, Copy)]
pub struct StructuredField<'a> {
    pub grid: GridInfo,
    pub u: &'a [f64],
}

impl<'a> StructuredField<'a> {
    pub fn eval_with_grad(&self, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let g = &self.grid;
        let (el, xi) = g.locate(x);
        let (ei, ej) = (el % g.nx, el / g.nx);
        let conn = [
            g.node_index(ei, ej),
            g.node_index(ei + 1, ej),
            g.node_index(ei + 1, ej + 1),
            g.node_index(ei, ej + 1),
        ];
        let hx = g.lengths[0] / g.nx as f64;
        let hy = g.lengths[1] / g.ny as f64;
        let shape = q1_values(xi);
        let grads = q1_gradients(xi);
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for (a, &n) in conn.iter().enumerate() {
            for i in 0..2 {
                let d = self.u[2 * n + i];
                val[i] += shape[a] * d;
                grad[i][0] += grads[a][0] * (2.0 / hx) * d;
                grad[i][1] += grads[a][1] * (2.0 / hy) * d;
            }
        }
        (val, grad)
    }
}

/// L2 and H1 errors between two structured-grid fields over the same domain
/// without requiring nesting: integration runs over the reference grid,
/// splitting each reference cell at the coarse grid lines so every Gauss
/// panel sees smooth bilinear integrands.
pub fn grid_error_norms(
    reference: &StructuredField,
    coarse: &StructuredField,
    h1_scale: f64,
) -> Result<ErrorNorms> {
    let rg = &reference.grid;
    let cg = &coarse.grid;
    if rg.origin != cg.origin || rg.lengths != cg.lengths {
        return Err(Error::Invalid("fields cover different domains".into()));
    }
    let hx = rg.lengths[0] / rg.nx as f64;
    let hy = rg.lengths[1] / rg.ny as f64;
    let chx = cg.lengths[0] / cg.nx as f64;
    let chy = cg.lengths[1] / cg.ny as f64;
    let g = 1.0 / 3.0f64.sqrt();
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    let mut max = 0.0f64;
    let cuts_in = |lo: f64, hi: f64, origin: f64, pitch: f64| -> Vec<f64> {
        let mut cuts = vec![lo];
        let mut k = ((lo - origin) / pitch).floor() as i64 + 1;
        loop {
            let line = origin + k as f64 * pitch;
            if line >= hi - 1e-14 * pitch {
                break;
            }
            if line > lo + 1e-14 * pitch {
                cuts.push(line);
            }
            k += 1;
        }
        cuts.push(hi);
        cuts
    };
    for ej in 0..rg.ny {
        for ei in 0..rg.nx {
            let x0 = rg.origin[0] + ei as f64 * hx;
            let y0 = rg.origin[1] + ej as f64 * hy;
            let xs = cuts_in(x0, x0 + hx, cg.origin[0], chx);
            let ys = cuts_in(y0, y0 + hy, cg.origin[1], chy);
            for sy in ys.windows(2) {
                for sx in xs.windows(2) {
                    let (ax, bx) = (sx[0], sx[1]);
                    let (ay, by) = (sy[0], sy[1]);
                    let jac = 0.25 * (bx - ax) * (by - ay);
                    for &px in &[-g, g] {
                        for &py in &[-g, g] {
                            let x = [
                                0.5 * (ax + bx) + 0.5 * (bx - ax) * px,
                                0.5 * (ay + by) + 0.5 * (by - ay) * py,
                            ];
                            let (vr, gr) = reference.eval_with_grad(x);
                            let (vc, gc) = coarse.eval_with_grad(x);
                            let dv = [vr[0] - vc[0], vr[1] - vc[1]];
                            max = max.max(dv[0].abs()).max(dv[1].abs());
                            l2 += jac * (dv[0] * dv[0] + dv[1] * dv[1]);
                            for i in 0..2 {
                                for j in 0..2 {
                                    let dg = gr[i][j] - gc[i][j];
                                    h1 += jac * dg * dg;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ErrorNorms {
        l2: l2.sqrt(),
        h1: (h1 + h1_scale * h1_scale * l2).sqrt(),
        energy: None,
        max,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of log(error) against log(size).
    pub fitted_order: f64,
    /// Adjacent-pair orders.
    pub pairwise_orders: Vec<f64>,
}

/// Fit a convergence order from (size, error) pairs. Sizes must be strictly
/// monotone and errors positive.
pub fn convergence_order(sizes: &[f64], errors: &[f64]) -> Result<ConvergenceReport> {
    if sizes.len() != errors.len() || sizes.len() < 3 {
        return Err(Error::Invalid("order fit needs at least three (size, error) points".into()));
    }
    let increasing = sizes.windows(2).all(|w| w[1] > w[0]);
    let decreasing = sizes.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::Invalid("sizes must be strictly monotone".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Invalid("errors must be positive for a log-log fit".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xm) * (y - ym);
        den += (x - xm) * (x - xm);
    }
    let fitted = num / den;
    let pairwise = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    Ok(ConvergenceReport {
        sizes: sizes.to_vec(),
        errors: errors.to_vec(),
        fitted_order: fitted,
        pairwise_orders: pairwise,
    })
}

/// Von Mises stress of a plane-strain state; the out-of-plane stress is
/// nu (sigma_xx + sigma_yy).
pub fn von_mises(sigma: [f64; 3], nu: f64) -> f64 {
    let szz = nu * (sigma[0] + sigma[1]);
    let (sxx, syy, tau) = (sigma[0], sigma[1], sigma[2]);
    (0.5 * ((sxx - syy).powi(2) + (syy - szz).powi(2) + (szz - sxx).powi(2)) + 3.0 * tau * tau)
        .sqrt()
}

/// Strain and stress of a nodal field at one sampling point of an element.
#[derive(Debug, Clone, Copy)]
pub struct StressSample {
    pub x: [f64; 2],
    pub strain: [f64; 3],
    pub stress: [f64; 3],
}

/// Sample strain and stress at a reference point of each element.
pub fn sample_stress_at(
    mesh: &Mesh,
    u: &[f64],
    xi: [f64; 2],
    tensor_at: impl Fn(usize, [f64; 2]) -> ElasticVoigt2D,
) -> Result<Vec<StressSample>> {
    let mut out = Vec::with_capacity(mesh.element_count());
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let coords = mesh.element_coords(e);
        let geo = point_geometry(el.kind, &coords, xi)?;
        let b = bmatrix(&geo.grads);
        let mut ue = Vec::with_capacity(2 * el.conn.len());
        for &n in &el.conn {
            ue.push(u[2 * n]);
            ue.push(u[2 * n + 1]);
        }
        let ue = nalgebra::DVector::from_vec(ue);
        let s = &b * &ue;
        let strain = [s[0], s[1], s[2]];
        let stress = tensor_at(e, geo.x).stress(strain);
        out.push(StressSample { x: geo.x, strain, stress });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StressRoute {
    /// Volume average of the micro stress over the cell.
    Average,
    /// Homogenized tensor times the macro strain at the quadrature point.
    Tensor,
}

/// Macro stress at a quadrature point by either route; the two agree to
/// solver precision and are cross-checked by the verification suites.
pub fn macro_stress(sol: &MacroSolution, element: usize, qp: usize, route: StressRoute) -> Result<[f64; 3]> {
    match route {
        StressRoute::Average => {
            let post = sol.micro_postprocess(element, qp)?;
            let avg = cell_averages(&post.ops.domain, &post.u_h)?;
            Ok(avg.sigma)
        }
        StressRoute::Tensor => {
            let post = sol.micro_postprocess(element, qp)?;
            let a0h = crate::homogenize::homogenized_tensor_unit_strain(&post.ops)?;
            Ok(a0h.a0h.stress(post.macro_strain))
        }
    }
}
