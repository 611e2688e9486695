//! Macro problems: FE-HMM assembly in stiffness-transfer or homogenized-
//! tensor mode, the macro solve, and plain single-scale FEM for overkill
//! references. Micro work for uniformly periodic fields is cached per
//! congruence class and reused across all matching macro elements.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_stiffness, element_stiffness, point_geometry, reference_quadrature,
    solve_dirichlet, EdgeLoad, SparseSym,
};
use crate::homogenize::{homogenized_tensor_unit_strain, HomogenizedTensor};
use crate::material::{ElasticVoigt2D, MicroMaterialField, Periodicity};
use crate::mesh::{ElementKind, Mesh};
use crate::micro::{
    compress_stiffness, congruence_key, linearized_macro_drive, solve_micro_states, CellOperators,
    CongruenceKey, MicroDomain,
};
use faer::Mat;
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    /// Micro-to-macro stiffness matrix transfer through the minimizer columns.
    Transfer,
    /// Standard bilinear form with the homogenized tensor at each quadrature
    /// point (the route shared with strain-driven computational
    /// homogenization).
    Tensor,
}

/// How to build the sampling cell at a macro quadrature point.
#[derive(Clone)]
pub struct MicroSpecification {
    pub resolution: usize,
    pub delta: f64,
    pub field: MicroMaterialField,
    /// Imported cell mesh to use instead of the structured grid.
    pub imported_cell: Option<Arc<Mesh>>,
}

impl MicroSpecification {
    pub fn structured(resolution: usize, delta: f64, field: MicroMaterialField) -> Self {
        Self { resolution, delta, field, imported_cell: None }
    }

    pub fn build_domain(&self, center: [f64; 2]) -> Result<MicroDomain> {
        match &self.imported_cell {
            Some(cell) => MicroDomain::from_imported(center, self.delta, cell, self.field.clone()),
            None => MicroDomain::structured(center, self.delta, self.resolution, self.field.clone()),
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.field.periodicity() == Periodicity::Uniform
    }
}

#[derive(Clone)]
pub struct MacroProblem {
    pub mesh: Arc<Mesh>,
    pub micro: MicroSpecification,
    /// Fixed dofs with prescribed values.
    pub dirichlet: Vec<(usize, f64)>,
    pub edge_loads: Vec<EdgeLoad>,
    pub mode: AssemblyMode,
    pub thickness: f64,
}

impl MacroProblem {
    pub fn element_dofs(&self, d: &[f64], e: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for &n in &self.mesh.elements[e].conn {
            out.push(d[2 * n]);
            out.push(d[2 * n + 1]);
        }
        out
    }
}

/// Shared micro results. Uniformly periodic fields admit exact reuse: the
/// cell operators depend only on (resolution, delta, field) and the transfer
/// matrices only on the congruence class of (element shape, quadrature
/// point). First writer wins; every writer computes identical values.
pub struct MicroCache {
    ops: Mutex<HashMap<u64, Arc<CellOperators>>>,
    states: Mutex<HashMap<CongruenceKey, Arc<Mat<f64>>>>,
    tensors: Mutex<HashMap<u64, Arc<HomogenizedTensor>>>,
    pub enabled: bool,
}

impl MicroCache {
    pub fn new(enabled: bool) -> Self {
        Self {
            ops: Mutex::new(HashMap::new()),
            states: Mutex::new(HashMap::new()),
            tensors: Mutex::new(HashMap::new()),
            enabled,
        }
    }

    fn cell_ops(&self, spec: &MicroSpecification, center: [f64; 2]) -> Result<Arc<CellOperators>> {
        if !(self.enabled && spec.is_uniform()) {
            return Ok(Arc::new(CellOperators::new(spec.build_domain(center)?)?));
        }
        let key = (spec.resolution as u64) ^ spec.delta.to_bits().rotate_left(17);
        if let Some(hit) = self.ops.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let built = Arc::new(CellOperators::new(spec.build_domain(center)?)?);
        let mut map = self.ops.lock().unwrap();
        Ok(map.entry(key).or_insert(built).clone())
    }

    fn transfer(
        &self,
        spec: &MicroSpecification,
        ops: &Arc<CellOperators>,
        kind: ElementKind,
        coords: &[[f64; 2]],
        qp_xi: [f64; 2],
    ) -> Result<Arc<Mat<f64>>> {
        if !(self.enabled && spec.is_uniform()) {
            let st = solve_micro_states(ops, kind, coords, qp_xi)?;
            return Ok(Arc::new(st.transfer));
        }
        let key = congruence_key(coords, qp_xi, spec.resolution, spec.delta);
        if let Some(hit) = self.states.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let st = solve_micro_states(ops, kind, coords, qp_xi)?;
        let built = Arc::new(st.transfer);
        let mut map = self.states.lock().unwrap();
        Ok(map.entry(key).or_insert(built).clone())
    }

    pub fn tensor(
        &self,
        spec: &MicroSpecification,
        center: [f64; 2],
    ) -> Result<Arc<HomogenizedTensor>> {
        if !(self.enabled && spec.is_uniform()) {
            let ops = self.cell_ops(spec, center)?;
            return Ok(Arc::new(homogenized_tensor_unit_strain(&ops)?));
        }
        let key = (spec.resolution as u64) ^ spec.delta.to_bits().rotate_left(17);
        if let Some(hit) = self.tensors.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let ops = self.cell_ops(spec, center)?;
        let built = Arc::new(homogenized_tensor_unit_strain(&ops)?);
        let mut map = self.tensors.lock().unwrap();
        Ok(map.entry(key).or_insert(built).clone())
    }
}

fn element_kmac(
    problem: &MacroProblem,
    cache: &MicroCache,
    e: usize,
) -> Result<DMatrix<f64>> {
    let el = &problem.mesh.elements[e];
    let coords = problem.mesh.element_coords(e);
    let quad = reference_quadrature(el.kind);
    let annotate = |qp: usize| move |err: Error| Error::MicroSolve { element: e, qp, source: Box::new(err) };
    match problem.mode {
        AssemblyMode::Transfer => {
            let vol = problem.micro.delta * problem.micro.delta;
            let mut parts: Vec<(Arc<Mat<f64>>, Arc<CellOperators>, f64)> = Vec::new();
            for (qp, (&xi, &w)) in quad.points.iter().zip(&quad.weights).enumerate() {
                let geo = point_geometry(el.kind, &coords, xi)?;
                let ops = cache.cell_ops(&problem.micro, geo.x).map_err(annotate(qp))?;
                let t = cache
                    .transfer(&problem.micro, &ops, el.kind, &coords, xi)
                    .map_err(annotate(qp))?;
                parts.push((t, ops, w * geo.det_j));
            }
            let contributions: Vec<(&Mat<f64>, &SparseSym, f64)> =
                parts.iter().map(|(t, ops, w)| (t.as_ref(), &ops.k_mic, *w)).collect();
            let mut k = compress_stiffness(&contributions, vol);
            crate::fem::project_rigid_consistency(&coords, &mut k);
            Ok(k * problem.thickness)
        }
        AssemblyMode::Tensor => {
            let mut tensors = Vec::new();
            for (qp, &xi) in quad.points.iter().enumerate() {
                let geo = point_geometry(el.kind, &coords, xi)?;
                tensors.push(cache.tensor(&problem.micro, geo.x).map_err(annotate(qp))?);
            }
            let mut k = element_stiffness(el.kind, &coords, &quad, |q, _| tensors[q].a0h)?;
            crate::fem::project_rigid_consistency(&coords, &mut k);
            Ok(k * problem.thickness)
        }
    }
}

/// Assemble the FE-HMM macro stiffness and load vector.
pub fn assemble_fehmm(
    problem: &MacroProblem,
    cache: &MicroCache,
) -> Result<(SparseSym, Vec<f64>)> {
    let mesh = &problem.mesh;
    // warm the cell cache serially so parallel workers share one entry
    if cache.enabled && problem.micro.is_uniform() && mesh.element_count() > 0 {
        let coords = mesh.element_coords(0);
        let quad = reference_quadrature(mesh.elements[0].kind);
        let geo = point_geometry(mesh.elements[0].kind, &coords, quad.points[0])?;
        cache.cell_ops(&problem.micro, geo.x)?;
        if problem.mode == AssemblyMode::Tensor {
            cache.tensor(&problem.micro, geo.x)?;
        }
    }
    let locals: Vec<DMatrix<f64>> = (0..mesh.element_count())
        .into_par_iter()
        .map(|e| element_kmac(problem, cache, e))
        .collect::<Result<Vec<_>>>()?;
    let mut trips = Vec::new();
    for (e, k) in locals.iter().enumerate() {
        let conn = &mesh.elements[e].conn;
        for (a, &na) in conn.iter().enumerate() {
            for (b, &nb) in conn.iter().enumerate() {
                for i in 0..2 {
                    for j in 0..2 {
                        trips.push(faer::sparse::Triplet::new(
                            2 * na + i,
                            2 * nb + j,
                            k[(2 * a + i, 2 * b + j)],
                        ));
                    }
                }
            }
        }
    }
    let k = SparseSym::from_triplets(mesh.dof_count(), &trips)?;
    let f = assemble_load(mesh, None, &problem.edge_loads, problem.thickness)?;
    Ok((k, f))
}

/// FE-HMM solution with everything the postprocessing needs retained.
pub struct MacroSolution {
    pub problem: Arc<MacroProblem>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub k_mac: SparseSym,
    pub cache: Arc<MicroCache>,
}

impl MacroSolution {
    pub fn mesh(&self) -> &Mesh {
        &self.problem.mesh
    }

    /// sqrt(D' K D), the energy norm of the solution.
    pub fn energy_norm(&self) -> f64 {
        self.k_mac.quadratic(&self.d, &self.d).max(0.0).sqrt()
    }

    /// Largest Euclidean nodal displacement magnitude.
    pub fn max_norm(&self) -> f64 {
        crate::postprocess::max_nodal_magnitude(&self.d)
    }

    /// External work D . F.
    pub fn work(&self) -> f64 {
        self.d.iter().zip(&self.f).map(|(a, b)| a * b).sum()
    }

    /// Sum of reaction forces over the fixed dofs, per component.
    pub fn reaction_total(&self) -> [f64; 2] {
        let kd = self.k_mac.matvec(&self.d);
        let mut r = [0.0; 2];
        for &(dof, _) in &self.problem.dirichlet {
            r[dof % 2] += kd[dof] - self.f[dof];
        }
        r
    }

    /// Cell operators of the microdomain at (element, quadrature point).
    pub fn micro_ops(&self, element: usize, qp: usize) -> Result<Arc<CellOperators>> {
        let el = &self.problem.mesh.elements[element];
        let coords = self.problem.mesh.element_coords(element);
        let quad = reference_quadrature(el.kind);
        let geo = point_geometry(el.kind, &coords, quad.points[qp])?;
        self.cache.cell_ops(&self.problem.micro, geo.x)
    }

    /// Micro postprocessing solve driven by the true linearized macro
    /// solution at the quadrature point.
    pub fn micro_postprocess(&self, element: usize, qp: usize) -> Result<MicroPost> {
        let el = &self.problem.mesh.elements[element];
        let coords = self.problem.mesh.element_coords(element);
        let quad = reference_quadrature(el.kind);
        let xi = quad.points[qp];
        let geo = point_geometry(el.kind, &coords, xi)?;
        let ops = self.cache.cell_ops(&self.problem.micro, geo.x)?;
        let dofs = self.problem.element_dofs(&self.d, element);
        let drive = linearized_macro_drive(el.kind, &coords, xi, &dofs, &ops.domain)?;
        let u_h = ops
            .solve_micro_postprocess(&drive)
            .map_err(|err| Error::MicroSolve { element, qp, source: Box::new(err) })?;
        let mut value = [0.0; 2];
        for a in 0..el.conn.len() {
            value[0] += geo.shape[a] * dofs[2 * a];
            value[1] += geo.shape[a] * dofs[2 * a + 1];
        }
        // strain of u^H at the quadrature point
        let mut strain = [0.0; 3];
        for a in 0..el.conn.len() {
            strain[0] += geo.grads[a][0] * dofs[2 * a];
            strain[1] += geo.grads[a][1] * dofs[2 * a + 1];
            strain[2] += geo.grads[a][1] * dofs[2 * a] + geo.grads[a][0] * dofs[2 * a + 1];
        }
        Ok(MicroPost { ops, u_h, drive, macro_value: value, macro_strain: strain, center: geo.x })
    }
}

/// Micro solution at one quadrature point, driven by the solved macro field.
pub struct MicroPost {
    pub ops: Arc<CellOperators>,
    /// Micro displacement field on the cell; its cell mean carries the macro
    /// point value, so it already reconstructs the two-scale displacement.
    pub u_h: Vec<f64>,
    pub drive: Vec<f64>,
    pub macro_value: [f64; 2],
    pub macro_strain: [f64; 3],
    pub center: [f64; 2],
}

/// Assemble and solve the FE-HMM macro problem in one step.
pub fn solve_macro(problem: &MacroProblem, cache: Arc<MicroCache>) -> Result<MacroSolution> {
    let (k, f) = assemble_fehmm(problem, &cache)?;
    let d = solve_dirichlet(&k, &f, &problem.dirichlet)?;
    Ok(MacroSolution { problem: Arc::new(problem.clone()), d, f, k_mac: k, cache })
}

/// Plain single-scale FEM with a pointwise coefficient; used for homogenized
/// overkill references and constant-material cross-checks.
pub fn solve_reference_singlescale(
    mesh: Arc<Mesh>,
    tensor_at: impl Fn(usize, usize, [f64; 2]) -> ElasticVoigt2D + Sync,
    dirichlet: Vec<(usize, f64)>,
    edge_loads: Vec<EdgeLoad>,
    thickness: f64,
) -> Result<SingleScaleSolution> {
    let k = {
        let k0 = assemble_stiffness(&mesh, &tensor_at)?;
        let vals: Vec<f64> = k0.mat.val().iter().map(|v| v * thickness).collect();
        let mut mat = k0.mat;
        mat.val_mut().copy_from_slice(&vals);
        SparseSym { mat, dim: k0.dim }
    };
    let f = assemble_load(&mesh, None, &edge_loads, thickness)?;
    let d = solve_dirichlet(&k, &f, &dirichlet)?;
    Ok(SingleScaleSolution { mesh, d, f, k_mac: k, dirichlet })
}

/// Result of a single-scale reference solve.
pub struct SingleScaleSolution {
    pub mesh: Arc<Mesh>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub k_mac: SparseSym,
    pub dirichlet: Vec<(usize, f64)>,
}

impl SingleScaleSolution {
    pub fn energy_norm(&self) -> f64 {
        self.k_mac.quadratic(&self.d, &self.d).max(0.0).sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        crate::postprocess::max_nodal_magnitude(&self.d)
    }

    pub fn reaction_total(&self) -> [f64; 2] {
        let kd = self.k_mac.matvec(&self.d);
        let mut r = [0.0; 2];
        for &(dof, _) in &self.dirichlet {
            r[dof % 2] += kd[dof] - self.f[dof];
        }
        r
    }
}

/// Fix both components of every node on the tagged edges.
pub fn clamp_edge(mesh: &Mesh, tag: &str) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for n in mesh.nodes_on_tag(tag) {
        out.push((2 * n, 0.0));
        out.push((2 * n + 1, 0.0));
    }
    out
}
