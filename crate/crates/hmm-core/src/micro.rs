//! Microdomain solves: periodic sampling cells driven by macro unit
//! displacement states, solved as constrained energy minimizations through
//! one shared KKT factorization, compressed to macro element stiffness.
//!
//! Cell meshes live in cell-local coordinates (the cell center is the
//! origin); the physical center is carried alongside for non-uniform fields.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, bmatrix, point_geometry, reference_quadrature, shape_eval,
    ConstraintMatrix, SaddleSolver, SparseSym,
};
use crate::material::{ElasticVoigt2D, MicroMaterialField};
use crate::mesh::{build_periodic_pairing, build_structured_quads, ElementKind, Mesh, PeriodicPairing};
use faer::Mat;
use nalgebra::DMatrix;

/// Sampling cell of edge length `delta` centered at the macro point `center`.
#[derive(Debug, Clone)]
pub struct MicroDomain {
    pub center: [f64; 2],
    pub delta: f64,
    pub mesh: Mesh,
    pub pairing: PeriodicPairing,
    pub field: MicroMaterialField,
}

impl MicroDomain {
    /// Structured L x L quad cell.
    pub fn structured(
        center: [f64; 2],
        delta: f64,
        resolution: usize,
        field: MicroMaterialField,
    ) -> Result<Self> {
        let mesh = build_structured_quads(
            resolution,
            resolution,
            [-0.5 * delta, -0.5 * delta],
            [delta, delta],
        )?;
        let pairing = build_periodic_pairing(&mesh, delta)?;
        Ok(Self { center, delta, mesh, pairing, field })
    }

    /// Imported cell mesh; translated so its bounding box is centered at the
    /// origin, then validated as a delta-square with periodic boundaries.
    pub fn from_imported(
        center: [f64; 2],
        delta: f64,
        mesh: &Mesh,
        field: MicroMaterialField,
    ) -> Result<Self> {
        let (lo, hi) = mesh.bounding_box();
        let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let mut local = mesh.clone();
        for p in &mut local.nodes {
            p[0] -= mid[0];
            p[1] -= mid[1];
        }
        let pairing = build_periodic_pairing(&local, delta)?;
        Ok(Self { center, delta, mesh: local, pairing, field })
    }

    pub fn cell_volume(&self) -> f64 {
        self.delta * self.delta
    }

    pub fn tensor_at(&self, x_local: [f64; 2], phase: u8) -> ElasticVoigt2D {
        self.field.tensor_at(self.center, x_local, self.delta, phase)
    }

    /// Sum of element areas; the cell invariant demands this equals delta^2.
    pub fn measured_area(&self) -> f64 {
        (0..self.mesh.element_count()).map(|e| self.mesh.element_area(e)).sum()
    }
}

/// Kinematical coupling conditions: two normalization rows built from the
/// shape-function integrals b_m, then one +1/-1 row per periodic constraint
/// and component.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub g: ConstraintMatrix,
    /// Per-node weights b_m = sum over adjacent elements of |T|/n_node.
    pub b: Vec<f64>,
}

impl CouplingMatrix {
    /// Rows 0 and 1 are the normalization conditions, the rest pair rows.
    pub fn n_rows(&self) -> usize {
        self.g.n_rows()
    }

    pub fn pair_row_range(&self) -> std::ops::Range<usize> {
        2..self.g.n_rows()
    }
}

pub fn build_coupling_matrix(domain: &MicroDomain) -> CouplingMatrix {
    let mesh = &domain.mesh;
    let mut b = vec![0.0; mesh.node_count()];
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let share = mesh.element_area(e) / el.conn.len() as f64;
        for &n in &el.conn {
            b[n] += share;
        }
    }
    let mut g = ConstraintMatrix::new(mesh.dof_count());
    for comp in 0..2 {
        g.push_row(b.iter().enumerate().map(|(m, &bm)| (2 * m + comp, bm)).collect());
    }
    for (slave, master, _) in domain.pairing.constraints() {
        for comp in 0..2 {
            g.push_row(vec![(2 * slave + comp, 1.0), (2 * master + comp, -1.0)]);
        }
    }
    CouplingMatrix { g, b }
}

/// Nodal values of the linearized drive u(x) = [N_I(x_K) + x_local . grad
/// N_I(x_K)] e_i on the cell, for macro node `node_i` and direction `dir`.
pub fn macro_unit_displacement(
    macro_kind: ElementKind,
    macro_coords: &[[f64; 2]],
    qp_xi: [f64; 2],
    node_i: usize,
    dir: usize,
    domain: &MicroDomain,
) -> Result<Vec<f64>> {
    let geo = point_geometry(macro_kind, macro_coords, qp_xi)?;
    let nv = geo.shape[node_i];
    let ng = geo.grads[node_i];
    let mut d = vec![0.0; domain.mesh.dof_count()];
    for (m, p) in domain.mesh.nodes.iter().enumerate() {
        d[2 * m + dir] = nv + p[0] * ng[0] + p[1] * ng[1];
    }
    Ok(d)
}

/// Nodal values of the linearization of an actual macro solution at the
/// quadrature point: u(x) = u_H(x_K) + x_local . grad u_H(x_K).
pub fn linearized_macro_drive(
    macro_kind: ElementKind,
    macro_coords: &[[f64; 2]],
    qp_xi: [f64; 2],
    element_dofs: &[f64],
    domain: &MicroDomain,
) -> Result<Vec<f64>> {
    let geo = point_geometry(macro_kind, macro_coords, qp_xi)?;
    let n = macro_coords.len();
    assert_eq!(element_dofs.len(), 2 * n);
    let mut value = [0.0f64; 2];
    let mut grad = [[0.0f64; 2]; 2]; // grad[i][j] = d u_i / d x_j
    for a in 0..n {
        for i in 0..2 {
            let d = element_dofs[2 * a + i];
            value[i] += geo.shape[a] * d;
            grad[i][0] += geo.grads[a][0] * d;
            grad[i][1] += geo.grads[a][1] * d;
        }
    }
    let mut out = vec![0.0; domain.mesh.dof_count()];
    for (m, p) in domain.mesh.nodes.iter().enumerate() {
        for i in 0..2 {
            out[2 * m + i] = value[i] + grad[i][0] * p[0] + grad[i][1] * p[1];
        }
    }
    Ok(out)
}

/// Assembled operators of one cell: micro stiffness, coupling rows and the
/// shared KKT factorization all downstream solves reuse.
///
/// The factorized system carries the periodic pair rows plus a two-row pin of
/// the corner master node instead of the normalization rows: those are dense
/// (they touch every node) and would ruin the sparse factorization, while the
/// energy and all other constraints are invariant under rigid translations.
/// The exact zero-mean normalization is restored afterwards by the
/// closed-form translation shift, so the returned minimizers satisfy the full
/// coupling matrix to solver precision.
pub struct CellOperators {
    pub domain: MicroDomain,
    pub k_mic: SparseSym,
    pub coupling: CouplingMatrix,
    solver: SaddleSolver,
    /// Pairing-only constraint rows plus the corner pin, in solver row order.
    pinned_rows: ConstraintMatrix,
    sum_b: f64,
}

impl CellOperators {
    pub fn new(domain: MicroDomain) -> Result<Self> {
        let area = domain.measured_area();
        if ((area - domain.cell_volume()) / domain.cell_volume()).abs() > 1e-12 {
            return Err(Error::Mesh(format!(
                "cell mesh area {area:.15e} does not tile the {:.15e} cell",
                domain.cell_volume()
            )));
        }
        let mesh = &domain.mesh;
        let phases: Vec<u8> = mesh.elements.iter().map(|el| el.phase).collect();
        let k_mic = assemble_stiffness(mesh, |e, _q, x| {
            domain.field.tensor_at(domain.center, x, domain.delta, phases[e])
        })?;
        let coupling = build_coupling_matrix(&domain);
        let mut pinned_rows = ConstraintMatrix::new(mesh.dof_count());
        for row in &coupling.g.rows[2..] {
            pinned_rows.push_row(row.clone());
        }
        let corner = domain.pairing.corner_master;
        pinned_rows.push_row(vec![(2 * corner, 1.0)]);
        pinned_rows.push_row(vec![(2 * corner + 1, 1.0)]);
        let solver = SaddleSolver::new(&k_mic, &pinned_rows)?;
        let sum_b = coupling.b.iter().sum();
        Ok(Self { domain, k_mic, coupling, solver, pinned_rows, sum_b })
    }

    /// Constrained minimizers for a batch of drive columns: each solution
    /// minimizes the cell energy subject to G d = G d_drive, including the
    /// zero-mean-fluctuation normalization.
    pub fn solve_constrained(&self, drives: &Mat<f64>) -> Result<Mat<f64>> {
        let top = Mat::zeros(self.k_mic.dim, drives.ncols());
        self.solve_kkt(&top, drives)
    }

    /// Minimize 1/2 d'Kd - d'top subject to G d = G drive.
    pub fn solve_kkt(&self, top: &Mat<f64>, drives: &Mat<f64>) -> Result<Mat<f64>> {
        let dim = self.k_mic.dim;
        let ncols = drives.ncols();
        let m = self.pinned_rows.n_rows();
        let mut bottom = Mat::zeros(m, ncols);
        for col in 0..ncols {
            let d: Vec<f64> = (0..dim).map(|i| drives[(i, col)]).collect();
            let gd = self.pinned_rows.apply(&d);
            for r in 0..m {
                bottom[(r, col)] = gd[r];
            }
        }
        let (mut primal, _) = self.solver.solve(top, &bottom)?;
        // restore the normalization rows by the rigid translation that the
        // remaining constraints leave free
        for col in 0..ncols {
            for comp in 0..2 {
                let mut target = 0.0;
                let mut have = 0.0;
                for (node, &bm) in self.coupling.b.iter().enumerate() {
                    target += bm * drives[(2 * node + comp, col)];
                    have += bm * primal[(2 * node + comp, col)];
                }
                let shift = (target - have) / self.sum_b;
                for node in 0..self.coupling.b.len() {
                    primal[(2 * node + comp, col)] += shift;
                }
            }
        }
        Ok(primal)
    }

    /// Postprocessing solve for the true linearized macro displacements.
    pub fn solve_micro_postprocess(&self, drive: &[f64]) -> Result<Vec<f64>> {
        let d = Mat::from_fn(drive.len(), 1, |i, _| drive[i]);
        let sol = self.solve_constrained(&d)?;
        Ok((0..drive.len()).map(|i| sol[(i, 0)]).collect())
    }
}

/// Micro minimizers for all macro unit displacement states of one quadrature
/// point, column (I, x_i) at index 2 I + i.
pub struct MicroStates {
    pub transfer: Mat<f64>,
    pub drives: Mat<f64>,
}

pub fn solve_micro_states(
    ops: &CellOperators,
    macro_kind: ElementKind,
    macro_coords: &[[f64; 2]],
    qp_xi: [f64; 2],
) -> Result<MicroStates> {
    // shift the element to its first node: shape gradients are translation
    // invariant, and the canonical coordinates make congruent elements
    // produce bit-identical drives (and so bit-identical cached stiffness)
    let origin = macro_coords[0];
    let rel: Vec<[f64; 2]> =
        macro_coords.iter().map(|p| [p[0] - origin[0], p[1] - origin[1]]).collect();
    let n_macro = rel.len();
    let dim = ops.domain.mesh.dof_count();
    let mut drives = Mat::zeros(dim, 2 * n_macro);
    for node_i in 0..n_macro {
        for dir in 0..2 {
            let d = macro_unit_displacement(macro_kind, &rel, qp_xi, node_i, dir, &ops.domain)?;
            for (i, v) in d.iter().enumerate() {
                drives[(i, 2 * node_i + dir)] = *v;
            }
        }
    }
    let transfer = ops.solve_constrained(&drives)?;
    Ok(MicroStates { transfer, drives })
}

/// k_mac = sum_l (omega_l / |K_delta|) T_l' K_l T_l over the quadrature
/// points of a macro element.
pub fn compress_stiffness(
    contributions: &[(&Mat<f64>, &SparseSym, f64)],
    cell_volume: f64,
) -> DMatrix<f64> {
    assert!(!contributions.is_empty());
    let ncols = contributions[0].0.ncols();
    let mut k = DMatrix::zeros(ncols, ncols);
    for &(t, k_mic, omega) in contributions {
        let s = omega / cell_volume;
        // error-free transformed matvec: the energy products of the transfer
        // route must match the tensor route to a few ulps, or the macro solve
        // amplifies the difference past the mode-identity tolerance
        let cols: Vec<Vec<f64>> = (0..ncols)
            .map(|j| (0..t.nrows()).map(|r| t[(r, j)]).collect())
            .collect();
        for j in 0..ncols {
            let (hi, lo) = k_mic.matvec_split(&cols[j]);
            for i in 0..=j {
                let mut acc = crate::fem::CompensatedSum::default();
                let ci = &cols[i];
                for r in 0..t.nrows() {
                    let prod = ci[r] * hi[r];
                    let err = ci[r].mul_add(hi[r], -prod);
                    acc.add(prod);
                    acc.add(err);
                    acc.add(ci[r] * lo[r]);
                }
                let v = s * acc.value();
                k[(i, j)] += v;
                if i != j {
                    k[(j, i)] += v;
                }
            }
        }
    }
    // enforce exact symmetry of the bilinear form against roundoff
    for i in 0..k.nrows() {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Volume averages of stress, strain and the stress power over the cell for
/// a micro displacement field, by direct quadrature.
#[derive(Debug, Clone, Copy)]
pub struct CellAverages {
    pub sigma: [f64; 3],
    pub eps: [f64; 3],
    pub stress_power: f64,
}

pub fn cell_averages(domain: &MicroDomain, u: &[f64]) -> Result<CellAverages> {
    let mesh = &domain.mesh;
    let vol = domain.cell_volume();
    let mut sigma = [0.0; 3];
    let mut eps = [0.0; 3];
    let mut power = 0.0;
    for e in 0..mesh.element_count() {
        let el = &mesh.elements[e];
        let coords = mesh.element_coords(e);
        let quad = reference_quadrature(el.kind);
        let mut ue = Vec::with_capacity(2 * el.conn.len());
        for &n in &el.conn {
            ue.push(u[2 * n]);
            ue.push(u[2 * n + 1]);
        }
        let ue = nalgebra::DVector::from_vec(ue);
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            let geo = point_geometry(el.kind, &coords, xi)?;
            let b = bmatrix(&geo.grads);
            let strain = &b * &ue;
            let c = domain.tensor_at(geo.x, el.phase);
            let stress = c.stress([strain[0], strain[1], strain[2]]);
            let dv = w * geo.det_j / vol;
            for k in 0..3 {
                sigma[k] += dv * stress[k];
                eps[k] += dv * strain[k];
                power += dv * stress[k] * strain[k];
            }
        }
    }
    Ok(CellAverages { sigma, eps, stress_power: power })
}

/// Residual checks the spec requires of every micro solution.
#[derive(Debug, Clone, Copy)]
pub struct MicroChecks {
    /// |<sigma:eps> - <sigma>:<eps>| / |<sigma:eps>| with engineering-shear
    /// inner products.
    pub hill_mandel: f64,
    /// max component of |sum_m b_m (d_m - d^H_m)|.
    pub fluctuation_mean: f64,
    /// max over periodic pairs of the fluctuation mismatch.
    pub pair_residual: f64,
}

pub fn verify_micro_solution(
    ops: &CellOperators,
    solution: &[f64],
    drive: &[f64],
) -> Result<MicroChecks> {
    let avg = cell_averages(&ops.domain, solution)?;
    let sde: f64 = avg.sigma.iter().zip(&avg.eps).map(|(s, e)| s * e).sum();
    let hill_mandel = (avg.stress_power - sde).abs() / avg.stress_power.abs().max(1e-300);
    let fluct: Vec<f64> = solution.iter().zip(drive).map(|(a, b)| a - b).collect();
    let mut fluctuation_mean = 0.0f64;
    for comp in 0..2 {
        let s: f64 = ops
            .coupling
            .b
            .iter()
            .enumerate()
            .map(|(m, &bm)| bm * fluct[2 * m + comp])
            .sum();
        fluctuation_mean = fluctuation_mean.max(s.abs());
    }
    let gw = ops.coupling.g.apply(&fluct);
    let pair_residual = gw[ops.coupling.pair_row_range()]
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    Ok(MicroChecks { hill_mandel, fluctuation_mean, pair_residual })
}

/// Cache key for micro results shared across congruent macro elements under
/// uniformly periodic fields: relative element geometry, quadrature point,
/// micro resolution and cell size, all bit-hashed after rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CongruenceKey(u64);

pub fn congruence_key(macro_coords: &[[f64; 2]], qp_xi: [f64; 2], resolution: usize, delta: f64) -> CongruenceKey {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let x0 = macro_coords[0];
    for p in macro_coords {
        quantize(p[0] - x0[0]).hash(&mut h);
        quantize(p[1] - x0[1]).hash(&mut h);
    }
    quantize(qp_xi[0]).hash(&mut h);
    quantize(qp_xi[1]).hash(&mut h);
    resolution.hash(&mut h);
    delta.to_bits().hash(&mut h);
    CongruenceKey(h.finish())
}

fn quantize(v: f64) -> u64 {
    // collapse last-bits noise so congruent elements from different grid
    // positions hash identically
    let scaled = (v * 1e12).round();
    if scaled == 0.0 {
        0u64
    } else {
        scaled.to_bits()
    }
}

/// Evaluate a Q1/T3 FE field of the cell at a local point by shape
/// interpolation; used when sampling reconstructed micro fields.
pub fn interpolate_cell_field(
    mesh: &Mesh,
    element: usize,
    xi: [f64; 2],
    u: &[f64],
) -> Result<[f64; 2]> {
    let el = &mesh.elements[element];
    let (values, _) = shape_eval(el.kind, xi)?;
    let mut out = [0.0; 2];
    for (a, &n) in el.conn.iter().enumerate() {
        out[0] += values[a] * u[2 * n];
        out[1] += values[a] * u[2 * n + 1];
    }
    Ok(out)
}
