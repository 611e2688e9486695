//! Shape functions, strain-displacement matrices, Gauss quadrature, stiffness
//! and load assembly, and the two linear solves everything else is built on:
//! a Dirichlet-condensed SPD solve and a multi-right-hand-side saddle solve.
//!
//! Solves are internally single-threaded so results are bit-identical no
//! matter how the callers parallelize around them.

use crate::error::{Error, Result};
use crate::material::ElasticVoigt2D;
use crate::mesh::{ElementKind, Mesh};
use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::DMatrix;
use std::sync::Once;

static FAER_SEQ: Once = Once::new();

fn init_solver() {
    FAER_SEQ.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

/// Quadrature rule on a reference element; weights sum to the reference
/// measure (4 for the bi-unit quad, 1/2 for the unit triangle).
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Tensor-product Gauss-Legendre rule with `n` points per direction on
/// the bi-unit square, n in 1..=5.
pub fn gauss_legendre_quad(n: usize) -> Quadrature {
    let (pts, wts): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3.0f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30.0f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let r = (10.0f64 / 7.0).sqrt();
            let a = 1.0 / 3.0 * (5.0 - 2.0 * r).sqrt();
            let b = 1.0 / 3.0 * (5.0 + 2.0 * r).sqrt();
            let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, 128.0 / 225.0, wa, wb])
        }
        _ => panic!("unsupported Gauss order {n}"),
    };
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (j, &py) in pts.iter().enumerate() {
        for (i, &px) in pts.iter().enumerate() {
            points.push([px, py]);
            weights.push(wts[i] * wts[j]);
        }
    }
    Quadrature { points, weights }
}

/// One-point centroid rule on the unit triangle.
pub fn triangle_centroid_quad() -> Quadrature {
    Quadrature { points: vec![[1.0 / 3.0, 1.0 / 3.0]], weights: vec![0.5] }
}

pub fn reference_quadrature(kind: ElementKind) -> Quadrature {
    match kind {
        ElementKind::Q1 => gauss_legendre_quad(2),
        ElementKind::T3 => triangle_centroid_quad(),
    }
}

pub fn q1_values(xi: [f64; 2]) -> [f64; 4] {
    let (x, y) = (xi[0], xi[1]);
    [
        0.25 * (1.0 - x) * (1.0 - y),
        0.25 * (1.0 + x) * (1.0 - y),
        0.25 * (1.0 + x) * (1.0 + y),
        0.25 * (1.0 - x) * (1.0 + y),
    ]
}

pub fn q1_gradients(xi: [f64; 2]) -> [[f64; 2]; 4] {
    let (x, y) = (xi[0], xi[1]);
    [
        [-0.25 * (1.0 - y), -0.25 * (1.0 - x)],
        [0.25 * (1.0 - y), -0.25 * (1.0 + x)],
        [0.25 * (1.0 + y), 0.25 * (1.0 + x)],
        [-0.25 * (1.0 + y), 0.25 * (1.0 - x)],
    ]
}

pub fn t3_values(xi: [f64; 2]) -> [f64; 3] {
    [1.0 - xi[0] - xi[1], xi[0], xi[1]]
}

pub fn t3_gradients() -> [[f64; 2]; 3] {
    [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]
}

/// Shape values and parametric gradients; rejects points outside the
/// reference element.
pub fn shape_eval(kind: ElementKind, xi: [f64; 2]) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let tol = 1e-12;
    match kind {
        ElementKind::Q1 => {
            if xi[0].abs() > 1.0 + tol || xi[1].abs() > 1.0 + tol {
                return Err(Error::Invalid(format!("point {xi:?} outside bi-unit square")));
            }
            Ok((q1_values(xi).to_vec(), q1_gradients(xi).to_vec()))
        }
        ElementKind::T3 => {
            if xi[0] < -tol || xi[1] < -tol || xi[0] + xi[1] > 1.0 + tol {
                return Err(Error::Invalid(format!("point {xi:?} outside unit triangle")));
            }
            Ok((t3_values(xi).to_vec(), t3_gradients().to_vec()))
        }
    }
}

/// Geometry data at one quadrature point: physical gradients, Jacobian
/// determinant and the physical location.
pub struct PointGeometry {
    pub grads: Vec<[f64; 2]>,
    pub det_j: f64,
    pub x: [f64; 2],
    pub shape: Vec<f64>,
}

pub fn point_geometry(kind: ElementKind, coords: &[[f64; 2]], xi: [f64; 2]) -> Result<PointGeometry> {
    let (values, pgrads) = shape_eval(kind, xi)?;
    let mut j = [[0.0f64; 2]; 2];
    let mut x = [0.0f64; 2];
    for (a, g) in pgrads.iter().enumerate() {
        for r in 0..2 {
            j[r][0] += g[r] * coords[a][0];
            j[r][1] += g[r] * coords[a][1];
        }
        x[0] += values[a] * coords[a][0];
        x[1] += values[a] * coords[a][1];
    }
    let det_j = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det_j <= 0.0 {
        return Err(Error::Mesh(format!("non-positive Jacobian {det_j:.3e} at {xi:?}")));
    }
    let inv = [[j[1][1] / det_j, -j[0][1] / det_j], [-j[1][0] / det_j, j[0][0] / det_j]];
    let grads = pgrads
        .iter()
        .map(|g| {
            [inv[0][0] * g[0] + inv[0][1] * g[1], inv[1][0] * g[0] + inv[1][1] * g[1]]
        })
        .collect();
    Ok(PointGeometry { grads, det_j, x, shape: values })
}

/// Strain-displacement matrix (3 x 2n) built from physical shape gradients.
pub fn bmatrix(grads: &[[f64; 2]]) -> DMatrix<f64> {
    let n = grads.len();
    let mut b = DMatrix::zeros(3, 2 * n);
    for (a, g) in grads.iter().enumerate() {
        b[(0, 2 * a)] = g[0];
        b[(1, 2 * a + 1)] = g[1];
        b[(2, 2 * a)] = g[1];
        b[(2, 2 * a + 1)] = g[0];
    }
    b
}

/// Element stiffness by Gauss quadrature; `tensor_at(q, x)` supplies the
/// material at quadrature point `q` located at physical `x`.
pub fn element_stiffness(
    kind: ElementKind,
    coords: &[[f64; 2]],
    quad: &Quadrature,
    mut tensor_at: impl FnMut(usize, [f64; 2]) -> ElasticVoigt2D,
) -> Result<DMatrix<f64>> {
    let n = coords.len();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    for (q, (&xi, &w)) in quad.points.iter().zip(&quad.weights).enumerate() {
        let geo = point_geometry(kind, coords, xi)?;
        let b = bmatrix(&geo.grads);
        let c = tensor_at(q, geo.x);
        let cm = nalgebra::Matrix3::from_fn(|i, j| c.c[i][j]);
        let cb = cm * &b;
        k.gemm_tr(w * geo.det_j, &b, &cb, 1.0);
    }
    Ok(k)
}

/// Compensated (Neumaier) summation; long energy dot products would
/// otherwise lose enough digits for the two stiffness routes to drift apart
/// measurably after the macro solve.
#[derive(Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated dot product.
pub fn dot_compensated(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Remove the rigid-body inconsistency of an element stiffness: project the
/// matrix onto the complement of the translation and linearized-rotation
/// modes. Exact element matrices are fixed points; the filter only strips the
/// roundoff action on the near-kernel modes, which otherwise gets amplified
/// by the condition number of bending-dominated macro problems.
pub fn project_rigid_consistency(coords: &[[f64; 2]], k: &mut DMatrix<f64>) {
    let n = coords.len();
    assert_eq!(k.nrows(), 2 * n);
    let cx = coords.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let cy = coords.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let mut modes = DMatrix::zeros(2 * n, 3);
    for (a, p) in coords.iter().enumerate() {
        modes[(2 * a, 0)] = 1.0;
        modes[(2 * a + 1, 1)] = 1.0;
        modes[(2 * a, 2)] = -(p[1] - cy);
        modes[(2 * a + 1, 2)] = p[0] - cx;
    }
    // orthonormalize (Gram-Schmidt; translations are already orthogonal)
    for c in 0..3 {
        for prev in 0..c {
            let dot: f64 = (0..2 * n).map(|i| modes[(i, c)] * modes[(i, prev)]).sum();
            for i in 0..2 * n {
                modes[(i, c)] -= dot * modes[(i, prev)];
            }
        }
        let norm: f64 = (0..2 * n).map(|i| modes[(i, c)] * modes[(i, c)]).sum::<f64>().sqrt();
        for i in 0..2 * n {
            modes[(i, c)] /= norm;
        }
    }
    // k <- P k P with P = I - R R'
    let kr = &*k * &modes; // 2n x 3
    let rkr = modes.transpose() * &kr; // 3 x 3
    for i in 0..2 * n {
        for j in 0..2 * n {
            let mut v = k[(i, j)];
            for c in 0..3 {
                v -= kr[(i, c)] * modes[(j, c)];
                v -= modes[(i, c)] * kr[(j, c)];
            }
            for a in 0..3 {
                for b in 0..3 {
                    v += modes[(i, a)] * rkr[(a, b)] * modes[(j, b)];
                }
            }
            k[(i, j)] = v;
        }
    }
    // re-symmetrize the roundoff of the projection itself
    for i in 0..2 * n {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}

/// Symmetric sparse stiffness with its assembly kept in CSC form.
pub struct SparseSym {
    pub mat: SparseColMat<usize, f64>,
    pub dim: usize,
}

impl SparseSym {
    pub fn from_triplets(dim: usize, trips: &[Triplet<usize, usize, f64>]) -> Result<Self> {
        let mat = SparseColMat::try_new_from_triplets(dim, dim, trips)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
        Ok(Self { mat, dim })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let sym = self.mat.symbolic();
        let colptr = sym.col_ptr();
        let rowidx = sym.row_idx();
        let vals = self.mat.val();
        let mut y = vec![0.0; self.dim];
        for j in 0..self.dim {
            let xj = x[j];
            if xj != 0.0 {
                for p in colptr[j]..colptr[j + 1] {
                    y[rowidx[p]] += vals[p] * xj;
                }
            }
        }
        y
    }

    /// Quadratic form x' K y, with compensated accumulation.
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        let ky = self.matvec(y);
        dot_compensated(x, &ky)
    }

    /// K x split into a leading part and the accumulated rounding errors
    /// (two-product transform per entry). Energy products built from this
    /// stay exact to a few ulps even with heavy cancellation.
    pub fn matvec_split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.dim);
        let sym = self.mat.symbolic();
        let colptr = sym.col_ptr();
        let rowidx = sym.row_idx();
        let vals = self.mat.val();
        let mut hi = vec![CompensatedSum::default(); self.dim];
        let mut lo = vec![0.0f64; self.dim];
        for j in 0..self.dim {
            let xj = x[j];
            if xj != 0.0 {
                for p in colptr[j]..colptr[j + 1] {
                    let r = rowidx[p];
                    let prod = vals[p] * xj;
                    let err = vals[p].mul_add(xj, -prod);
                    hi[r].add(prod);
                    lo[r] += err;
                }
            }
        }
        let mut main = Vec::with_capacity(self.dim);
        for (h, l) in hi.iter().zip(&mut lo) {
            main.push(h.sum);
            *l += h.comp;
        }
        (main, lo)
    }

    /// x' K y evaluated through the split matvec; accurate to a few ulps of
    /// the result.
    pub fn quadratic_precise(&self, x: &[f64], y: &[f64]) -> f64 {
        let (hi, lo) = self.matvec_split(y);
        let mut acc = CompensatedSum::default();
        for i in 0..self.dim {
            let prod = x[i] * hi[i];
            let err = x[i].mul_add(hi[i], -prod);
            acc.add(prod);
            acc.add(err);
            acc.add(x[i] * lo[i]);
        }
        acc.value()
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.val().iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }
}

/// Assemble the global stiffness; `tensor_at(element, q, x)` supplies the
/// material. Element contributions are computed independently (possibly in
/// parallel by the caller's arrangement) but always reduced in element order,
/// so entries are deterministic.
pub fn assemble_stiffness(
    mesh: &Mesh,
    tensor_at: impl Fn(usize, usize, [f64; 2]) -> ElasticVoigt2D + Sync,
) -> Result<SparseSym> {
    let locals: Vec<DMatrix<f64>> = {
        use rayon::prelude::*;
        (0..mesh.element_count())
            .into_par_iter()
            .map(|e| {
                let el = &mesh.elements[e];
                let coords = mesh.element_coords(e);
                let quad = reference_quadrature(el.kind);
                element_stiffness(el.kind, &coords, &quad, |q, x| tensor_at(e, q, x))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut trips = Vec::new();
    for (e, k) in locals.iter().enumerate() {
        let conn = &mesh.elements[e].conn;
        for (a, &na) in conn.iter().enumerate() {
            for (b, &nb) in conn.iter().enumerate() {
                for i in 0..2 {
                    for j in 0..2 {
                        trips.push(Triplet::new(2 * na + i, 2 * nb + j, k[(2 * a + i, 2 * b + j)]));
                    }
                }
            }
        }
    }
    SparseSym::from_triplets(mesh.dof_count(), &trips)
}

/// Constant traction applied to all boundary edges carrying `tag`.
#[derive(Debug, Clone)]
pub struct EdgeLoad {
    pub tag: String,
    pub traction: [f64; 2],
}

/// Consistent load vector from a body force and edge tractions, both scaled
/// by the out-of-plane thickness.
pub fn assemble_load(
    mesh: &Mesh,
    body_force: Option<&dyn Fn([f64; 2]) -> [f64; 2]>,
    tractions: &[EdgeLoad],
    thickness: f64,
) -> Result<Vec<f64>> {
    let mut f = vec![0.0; mesh.dof_count()];
    for load in tractions {
        if !mesh.has_tag(&load.tag) {
            return Err(Error::Invalid(format!("no boundary edges tagged '{}'", load.tag)));
        }
        for be in mesh.boundary_edges.iter().filter(|be| be.tag == load.tag) {
            let (a, b) = mesh.elements[be.element].edge_nodes(be.local_edge as usize);
            let pa = mesh.nodes[a];
            let pb = mesh.nodes[b];
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            let half = 0.5 * len * thickness;
            for (n, t) in [(a, load.traction), (b, load.traction)] {
                f[2 * n] += half * t[0];
                f[2 * n + 1] += half * t[1];
            }
        }
    }
    if let Some(bf) = body_force {
        for e in 0..mesh.element_count() {
            let el = &mesh.elements[e];
            let coords = mesh.element_coords(e);
            let quad = reference_quadrature(el.kind);
            for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
                let geo = point_geometry(el.kind, &coords, xi)?;
                let fv = bf(geo.x);
                for (a, &n) in el.conn.iter().enumerate() {
                    let s = geo.shape[a] * w * geo.det_j * thickness;
                    f[2 * n] += s * fv[0];
                    f[2 * n + 1] += s * fv[1];
                }
            }
        }
    }
    Ok(f)
}

/// Solve K D = F with prescribed values on `fixed` dofs eliminated by static
/// condensation: K11 D_free = F_free - K12 D_fixed.
pub fn solve_dirichlet(k: &SparseSym, f: &[f64], fixed: &[(usize, f64)]) -> Result<Vec<f64>> {
    init_solver();
    assert_eq!(f.len(), k.dim);
    let mut fixed_value = vec![None; k.dim];
    for &(dof, v) in fixed {
        fixed_value[dof] = Some(v);
    }
    let mut free_index = vec![usize::MAX; k.dim];
    let mut n_free = 0;
    for d in 0..k.dim {
        if fixed_value[d].is_none() {
            free_index[d] = n_free;
            n_free += 1;
        }
    }
    if n_free == 0 {
        return Ok((0..k.dim).map(|d| fixed_value[d].unwrap()).collect());
    }
    let sym = k.mat.symbolic();
    let colptr = sym.col_ptr();
    let rowidx = sym.row_idx();
    let vals = k.mat.val();
    let mut trips = Vec::new();
    let mut rhs = vec![0.0; n_free];
    for d in 0..k.dim {
        if let Some(fi) = free_index.get(d).copied().filter(|&i| i != usize::MAX) {
            rhs[fi] = f[d];
        }
    }
    for j in 0..k.dim {
        for p in colptr[j]..colptr[j + 1] {
            let i = rowidx[p];
            let v = vals[p];
            match (free_index[i] != usize::MAX, free_index[j] != usize::MAX) {
                (true, true) => trips.push(Triplet::new(free_index[i], free_index[j], v)),
                (true, false) => rhs[free_index[i]] -= v * fixed_value[j].unwrap(),
                _ => {}
            }
        }
    }
    let k11 = SparseColMat::<usize, f64>::try_new_from_triplets(n_free, n_free, &trips)
        .map_err(|e| Error::Solver(format!("condensed assembly failed: {e:?}")))?;
    let chol = k11
        .sp_cholesky(faer::Side::Lower)
        .map_err(|_| Error::Singular("reduced stiffness is not positive definite; check constraints".into()))?;
    let b = Mat::from_fn(n_free, 1, |i, _| rhs[i]);
    let x = chol.solve(&b);
    let mut d = vec![0.0; k.dim];
    for dof in 0..k.dim {
        d[dof] = match fixed_value[dof] {
            Some(v) => v,
            None => x[(free_index[dof], 0)],
        };
    }
    // residual contract on the free equations
    let kd = k.matvec(&d);
    let fnorm = f.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut res = 0.0f64;
    for dof in 0..k.dim {
        if fixed_value[dof].is_none() {
            res = res.max((kd[dof] - f[dof]).abs());
        }
    }
    if res > 1e-10 * (fnorm + 1.0) {
        return Err(Error::Solver(format!(
            "Dirichlet solve residual {res:.3e} exceeds 1e-10*(|F|+1)"
        )));
    }
    Ok(d)
}

/// Sparse constraint matrix in row-major form.
#[derive(Debug, Clone, Default)]
pub struct ConstraintMatrix {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub n_cols: usize,
}

impl ConstraintMatrix {
    pub fn new(n_cols: usize) -> Self {
        Self { rows: Vec::new(), n_cols }
    }

    pub fn push_row(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// G x for a dense vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn max_abs_row(&self, r: usize) -> f64 {
        self.rows[r].iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()))
    }
}

/// One shared factorization of the KKT matrix [[K, G'],[G, 0]], reused for
/// every right-hand side. The system is symmetrically equilibrated before
/// factorization (stiffness entries and constraint rows can differ by many
/// orders of magnitude); the returned solution and multipliers refer to the
/// original system.
pub struct SaddleSolver {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    kkt: SparseColMat<usize, f64>,
    /// Diagonal scaling of the primal block.
    primal_scale: Vec<f64>,
    /// Row scaling of the constraint block, applied after column scaling.
    row_scale: Vec<f64>,
    pub n_primal: usize,
    pub n_con: usize,
}

impl SaddleSolver {
    pub fn new(k: &SparseSym, g: &ConstraintMatrix) -> Result<Self> {
        init_solver();
        assert_eq!(g.n_cols, k.dim);
        let n = k.dim;
        let m = g.n_rows();
        let dim = n + m;
        let sym = k.mat.symbolic();
        let colptr = sym.col_ptr();
        let rowidx = sym.row_idx();
        let vals = k.mat.val();
        // Jacobi-style symmetric equilibration of the stiffness block
        let mut col_max = vec![0.0f64; n];
        for j in 0..n {
            for p in colptr[j]..colptr[j + 1] {
                col_max[j] = col_max[j].max(vals[p].abs());
            }
        }
        let primal_scale: Vec<f64> =
            col_max.iter().map(|&ma| if ma > 0.0 { 1.0 / ma.sqrt() } else { 1.0 }).collect();
        let row_scale: Vec<f64> = (0..m)
            .map(|r| {
                let ma = g.rows[r]
                    .iter()
                    .fold(0.0f64, |a, &(c, v)| a.max((v * primal_scale[c]).abs()));
                if ma > 0.0 {
                    1.0 / ma
                } else {
                    1.0
                }
            })
            .collect();
        let nnz_k = vals.len();
        let nnz_g: usize = g.rows.iter().map(|r| r.len()).sum();
        let mut trips = Vec::with_capacity(nnz_k + 2 * nnz_g);
        for j in 0..n {
            for p in colptr[j]..colptr[j + 1] {
                let i = rowidx[p];
                trips.push(Triplet::new(i, j, primal_scale[i] * vals[p] * primal_scale[j]));
            }
        }
        for (r, row) in g.rows.iter().enumerate() {
            let s = row_scale[r];
            for &(c, v) in row {
                let sv = s * v * primal_scale[c];
                trips.push(Triplet::new(n + r, c, sv));
                trips.push(Triplet::new(c, n + r, sv));
            }
        }
        let kkt = SparseColMat::try_new_from_triplets(dim, dim, &trips)
            .map_err(|e| Error::Solver(format!("KKT assembly failed: {e:?}")))?;
        let lu = kkt
            .sp_lu()
            .map_err(|_| Error::Singular("KKT matrix is singular (redundant or rank-deficient constraints)".into()))?;
        let solver = Self { lu, kkt, primal_scale, row_scale, n_primal: n, n_con: m };
        // sparse LU does not reject rank-deficient matrices; probe it
        let probe = Mat::from_fn(dim, 1, |i, _| ((i % 7) as f64 - 3.0) / 3.0);
        let (_, rel) = solver.solve_scaled(&probe);
        if !rel.is_finite() || rel > 1e-9 {
            return Err(Error::Singular(format!(
                "KKT matrix is numerically rank-deficient (probe residual {rel:.3e}); \
                 constraints may be redundant"
            )));
        }
        Ok(solver)
    }

    /// Residual rhs - A x with two-product compensation per entry; plain f64
    /// residuals would cap the attainable forward accuracy at cond(A) ulps,
    /// which the stiffness-transfer identity cannot afford.
    fn residual_precise(&self, rhs: &Mat<f64>, x: &Mat<f64>) -> Mat<f64> {
        let sym = self.kkt.symbolic();
        let colptr = sym.col_ptr();
        let rowidx = sym.row_idx();
        let vals = self.kkt.val();
        let n = self.kkt.nrows();
        let ncols = rhs.ncols();
        let mut out = Mat::zeros(n, ncols);
        let mut hi = vec![CompensatedSum::default(); n];
        let mut lo = vec![0.0f64; n];
        for col in 0..ncols {
            for acc in hi.iter_mut() {
                *acc = CompensatedSum::default();
            }
            lo.fill(0.0);
            for j in 0..n {
                let xj = x[(j, col)];
                if xj != 0.0 {
                    for p in colptr[j]..colptr[j + 1] {
                        let r = rowidx[p];
                        let prod = vals[p] * xj;
                        let err = vals[p].mul_add(xj, -prod);
                        hi[r].add(prod);
                        lo[r] += err;
                    }
                }
            }
            for i in 0..n {
                let mut acc = CompensatedSum::default();
                acc.add(rhs[(i, col)]);
                acc.add(-hi[i].sum);
                acc.add(-hi[i].comp);
                acc.add(-lo[i]);
                out[(i, col)] = acc.value();
            }
        }
        out
    }

    fn solve_scaled(&self, rhs: &Mat<f64>) -> (Mat<f64>, f64) {
        // max-abs with NaN/Inf mapped to infinity; faer's norm_max masks NaN
        fn strict_norm_max(m: &Mat<f64>) -> f64 {
            let mut nm = 0.0f64;
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    let v = m[(i, j)];
                    if !v.is_finite() {
                        return f64::INFINITY;
                    }
                    nm = nm.max(v.abs());
                }
            }
            nm
        }
        let mut x = self.lu.solve(rhs);
        if strict_norm_max(&x).is_infinite() {
            return (x, f64::INFINITY);
        }
        let scale = strict_norm_max(rhs).max(1.0e-300);
        let mut resid = self.residual_precise(rhs, &x);
        let mut rnorm = strict_norm_max(&resid);
        if !rnorm.is_finite() {
            return (x, f64::INFINITY);
        }
        for _ in 0..3 {
            if rnorm <= 1e-16 * scale {
                break;
            }
            let dx = self.lu.solve(&resid);
            let x_next = &x + &dx;
            let resid_next = self.residual_precise(rhs, &x_next);
            let rnorm_next = strict_norm_max(&resid_next);
            if !rnorm_next.is_finite() || rnorm_next >= rnorm {
                break;
            }
            x = x_next;
            resid = resid_next;
            rnorm = rnorm_next;
        }
        (x, rnorm / scale)
    }

    /// Solve for several right-hand sides at once. Returns the primal columns
    /// and the multiplier columns. Residuals beyond 1e-9 relative after one
    /// refinement step are reported as errors.
    pub fn solve(&self, rhs_top: &Mat<f64>, rhs_bottom: &Mat<f64>) -> Result<(Mat<f64>, Mat<f64>)> {
        let n = self.n_primal;
        let m = self.n_con;
        let ncols = rhs_top.ncols();
        assert_eq!(rhs_bottom.ncols(), ncols);
        assert_eq!(rhs_top.nrows(), n);
        assert_eq!(rhs_bottom.nrows(), m);
        let rhs = Mat::from_fn(n + m, ncols, |i, j| {
            if i < n {
                self.primal_scale[i] * rhs_top[(i, j)]
            } else {
                self.row_scale[i - n] * rhs_bottom[(i - n, j)]
            }
        });
        let (x, rel) = self.solve_scaled(&rhs);
        if rel > 1e-9 {
            return Err(Error::Solver(format!(
                "saddle solve residual {rel:.3e} exceeds 1e-9 relative"
            )));
        }
        let primal = Mat::from_fn(n, ncols, |i, j| self.primal_scale[i] * x[(i, j)]);
        let multipliers = Mat::from_fn(m, ncols, |i, j| self.row_scale[i] * x[(n + i, j)]);
        Ok((primal, multipliers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::isotropic_plane_strain;
    use crate::mesh::build_structured_quads;
    use crate::reference;
    use approx::assert_relative_eq;

    #[test]
    fn quadrature_weights_sum_to_reference_measure() {
        for n in 1..=5 {
            let q = gauss_legendre_quad(n);
            let s: f64 = q.weights.iter().sum();
            assert_relative_eq!(s, 4.0, max_relative = 1e-14);
        }
        let t = triangle_centroid_quad();
        assert_relative_eq!(t.weights.iter().sum::<f64>(), 0.5);
    }

    #[test]
    fn two_point_gauss_integrates_bicubics_exactly() {
        // closed form: int_{-1}^{1} x^p dx = 2/(p+1) for even p, 0 for odd
        let q = gauss_legendre_quad(2);
        for p in 0..=3usize {
            for r in 0..=3usize {
                let num: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(x, w)| w * x[0].powi(p as i32) * x[1].powi(r as i32))
                    .sum();
                let one_d = |k: usize| if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert_relative_eq!(num, one_d(p) * one_d(r), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn shape_partition_of_unity_and_kronecker() {
        let (v, g) = shape_eval(ElementKind::Q1, [0.0, 0.0]).unwrap();
        for x in &v {
            assert_relative_eq!(*x, 0.25);
        }
        let sum_g: f64 = g.iter().map(|d| d[0] + d[1]).sum();
        assert_relative_eq!(sum_g, 0.0, epsilon = 1e-15);
        let (v, _) = shape_eval(ElementKind::Q1, [-1.0, -1.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0]);
        let (v, _) = shape_eval(ElementKind::T3, [1.0 / 3.0, 1.0 / 3.0]).unwrap();
        for x in &v {
            assert_relative_eq!(*x, 1.0 / 3.0, max_relative = 1e-15);
        }
        assert!(shape_eval(ElementKind::Q1, [1.5, 0.0]).is_err());
        assert!(shape_eval(ElementKind::T3, [0.7, 0.7]).is_err());
    }

    #[test]
    fn bmatrix_annihilates_rigid_body_motion() {
        let coords = [[0.2, -0.1], [1.3, 0.1], [1.1, 0.9], [0.1, 1.2]];
        let geo = point_geometry(ElementKind::Q1, &coords, [0.3, -0.6]).unwrap();
        let b = bmatrix(&geo.grads);
        // translation x, translation y, linearized rotation about origin
        let modes: [Box<dyn Fn([f64; 2]) -> [f64; 2]>; 3] = [
            Box::new(|_| [1.0, 0.0]),
            Box::new(|_| [0.0, 1.0]),
            Box::new(|p| [-p[1], p[0]]),
        ];
        for mode in &modes {
            let mut u = nalgebra::DVector::zeros(8);
            for (a, p) in coords.iter().enumerate() {
                let v = mode(*p);
                u[2 * a] = v[0];
                u[2 * a + 1] = v[1];
            }
            let eps = &b * &u;
            for i in 0..3 {
                assert_relative_eq!(eps[i], 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn element_stiffness_matches_over_integration_oracle() {
        let c = isotropic_plane_strain(1.0, 0.3).unwrap();
        let coords = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let k2 = element_stiffness(ElementKind::Q1, &coords, &gauss_legendre_quad(2), |_, _| c).unwrap();
        let k4 = reference::dense_element_stiffness_oracle(&coords, &c, 4);
        let scale = k2.amax();
        assert!((0..8).all(|i| (0..8).all(|j| (k2[(i, j)] - k4[(i, j)]).abs() <= 1e-12 * scale)));
        // parallelogram: constant Jacobian, 2x2 still exact
        let coords = [[0.0, 0.0], [2.0, 0.3], [2.5, 1.5], [0.5, 1.2]];
        let k2 = element_stiffness(ElementKind::Q1, &coords, &gauss_legendre_quad(2), |_, _| c).unwrap();
        let k4 = reference::dense_element_stiffness_oracle(&coords, &c, 4);
        let scale = k2.amax();
        assert!((0..8).all(|i| (0..8).all(|j| (k2[(i, j)] - k4[(i, j)]).abs() <= 1e-12 * scale)));
    }

    #[test]
    fn element_stiffness_rigid_modes_and_psd() {
        let c = isotropic_plane_strain(40000.0, 0.2).unwrap();
        let coords = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let k = element_stiffness(ElementKind::Q1, &coords, &gauss_legendre_quad(2), |_, _| c).unwrap();
        let u = nalgebra::DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let ku = &k * &u;
        assert!(ku.amax() <= 1e-12 * k.amax());
        let eig = nalgebra::SymmetricEigen::new(k.clone()).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0] > -1e-9 * k.amax());
        assert!(ev[2].abs() <= 1e-9 * k.amax(), "three rigid-body modes expected");
        assert!(ev[3] > 1e-6 * k.amax());
    }

    #[test]
    fn element_stiffness_scale_invariant_in_2d() {
        let c = isotropic_plane_strain(7.0, 0.25).unwrap();
        let coords = [[0.0, 0.0], [1.0, 0.1], [1.2, 1.3], [-0.1, 1.0]];
        let scaled: Vec<[f64; 2]> = coords.iter().map(|p| [3.7 * p[0], 3.7 * p[1]]).collect();
        let q = gauss_legendre_quad(2);
        let k1 = element_stiffness(ElementKind::Q1, &coords, &q, |_, _| c).unwrap();
        let k2 = element_stiffness(ElementKind::Q1, &scaled, &q, |_, _| c).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_relative_eq!(k1[(i, j)], k2[(i, j)], epsilon = 1e-12 * k1.amax());
            }
        }
    }

    #[test]
    fn degenerate_jacobian_rejected() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]];
        let r = element_stiffness(ElementKind::Q1, &coords, &gauss_legendre_quad(2), |_, _| {
            isotropic_plane_strain(1.0, 0.0).unwrap()
        });
        assert!(r.is_err());
    }

    #[test]
    fn global_assembly_matches_dense_oracle() {
        let mesh = build_structured_quads(2, 1, [0.0, 0.0], [2.0, 1.0]).unwrap();
        let c = isotropic_plane_strain(10.0, 0.2).unwrap();
        let k = assemble_stiffness(&mesh, |_, _, _| c).unwrap();
        let dense = reference::dense_assemble_oracle(&mesh, &c);
        let scale = dense.amax();
        for j in 0..mesh.dof_count() {
            for i in 0..mesh.dof_count() {
                let mut v = 0.0;
                let sym = k.mat.symbolic();
                for p in sym.col_ptr()[j]..sym.col_ptr()[j + 1] {
                    if sym.row_idx()[p] == i {
                        v = k.mat.val()[p];
                    }
                }
                assert_relative_eq!(v, dense[(i, j)], epsilon = 1e-12 * scale);
            }
        }
    }

    #[test]
    fn assembly_is_deterministic_and_psd() {
        let mesh = build_structured_quads(4, 3, [0.0, 0.0], [2.0, 1.0]).unwrap();
        let c = isotropic_plane_strain(5.0, 0.3).unwrap();
        let k1 = assemble_stiffness(&mesh, |_, _, _| c).unwrap();
        let k2 = assemble_stiffness(&mesh, |_, _, _| c).unwrap();
        assert_eq!(k1.mat.val(), k2.mat.val());
        // energy非negative over a spread of pseudo-random vectors
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rand = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..1000 {
            let u: Vec<f64> = (0..mesh.dof_count()).map(|_| rand()).collect();
            assert!(k1.quadratic(&u, &u) >= -1e-10 * k1.max_abs());
        }
    }

    #[test]
    fn load_vector_resultants() {
        let mesh = build_structured_quads(50, 10, [0.0, 0.0], [5000.0, 1000.0]).unwrap();
        let f = assemble_load(
            &mesh,
            None,
            &[EdgeLoad { tag: "right".into(), traction: [0.0, -1.0] }],
            100.0,
        )
        .unwrap();
        let total: f64 = f.iter().skip(1).step_by(2).sum();
        assert_relative_eq!(total, -1.0e5, max_relative = 1e-12);
        let zero = assemble_load(&mesh, None, &[], 100.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        // linearity of two adjacent edge loads
        let fr = assemble_load(&mesh, None, &[EdgeLoad { tag: "right".into(), traction: [1.0, 0.0] }], 1.0).unwrap();
        let ft = assemble_load(&mesh, None, &[EdgeLoad { tag: "top".into(), traction: [1.0, 0.0] }], 1.0).unwrap();
        let both = assemble_load(
            &mesh,
            None,
            &[
                EdgeLoad { tag: "right".into(), traction: [1.0, 0.0] },
                EdgeLoad { tag: "top".into(), traction: [1.0, 0.0] },
            ],
            1.0,
        )
        .unwrap();
        for i in 0..both.len() {
            assert_relative_eq!(both[i], fr[i] + ft[i], epsilon = 1e-12);
        }
        assert!(assemble_load(&mesh, None, &[EdgeLoad { tag: "nope".into(), traction: [1.0, 0.0] }], 1.0).is_err());
    }

    #[test]
    fn dirichlet_solve_contracts() {
        let mesh = build_structured_quads(1, 1, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let c = isotropic_plane_strain(3.0, 0.25).unwrap();
        let k = assemble_stiffness(&mesh, |_, _, _| c).unwrap();
        // all dofs fixed: returns the prescribed values
        let fixed: Vec<(usize, f64)> = (0..8).map(|d| (d, 0.1 * d as f64)).collect();
        let d = solve_dirichlet(&k, &vec![0.0; 8], &fixed).unwrap();
        for (dof, v) in fixed {
            assert_eq!(d[dof], v);
        }
        // zero rhs with homogeneous fixities: zero
        let fixed: Vec<(usize, f64)> = vec![(0, 0.0), (1, 0.0), (7, 0.0)];
        let d = solve_dirichlet(&k, &vec![0.0; 8], &fixed).unwrap();
        assert!(d.iter().all(|&v| v.abs() < 1e-14));
        // stretched edge against a dense oracle
        let fixed = vec![(0, 0.0), (1, 0.0), (6, 0.0), (7, 0.0), (2, 0.01), (4, 0.01)];
        let d = solve_dirichlet(&k, &vec![0.0; 8], &fixed).unwrap();
        let d_ref = reference::dense_dirichlet_oracle(&mesh, &c, &vec![0.0; 8], &fixed);
        for i in 0..8 {
            assert_relative_eq!(d[i], d_ref[i], epsilon = 1e-11);
        }
        // insufficient constraints: singular
        let err = solve_dirichlet(&k, &vec![0.0; 8], &[(0, 0.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn saddle_solves_hand_example() {
        let trips = vec![Triplet::new(0usize, 0usize, 1.0f64), Triplet::new(1, 1, 1.0)];
        let k = SparseSym::from_triplets(2, &trips).unwrap();
        let mut g = ConstraintMatrix::new(2);
        g.push_row(vec![(0, 1.0), (1, 1.0)]);
        let solver = SaddleSolver::new(&k, &g).unwrap();
        let top = Mat::from_fn(2, 1, |_, _| 0.0);
        let bottom = Mat::from_fn(1, 1, |_, _| 1.0);
        let (d, lambda) = solver.solve(&top, &bottom).unwrap();
        assert_relative_eq!(d[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(d[(1, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(lambda[(0, 0)], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn saddle_reports_redundant_constraints() {
        let trips = vec![Triplet::new(0usize, 0usize, 1.0f64), Triplet::new(1, 1, 1.0)];
        let k = SparseSym::from_triplets(2, &trips).unwrap();
        let mut g = ConstraintMatrix::new(2);
        g.push_row(vec![(0, 1.0), (1, 1.0)]);
        g.push_row(vec![(0, 2.0), (1, 2.0)]);
        match SaddleSolver::new(&k, &g) {
            Err(Error::Singular(_)) => {}
            Err(other) => panic!("expected singular KKT report, got {other:?}"),
            Ok(_) => panic!("expected singular KKT report, got a factorization"),
        }
    }

    #[test]
    fn saddle_matches_dense_kkt_oracle() {
        // small stiffness with a couple of constraint rows, vs dense LU
        let mesh = build_structured_quads(3, 2, [0.0, 0.0], [1.5, 1.0]).unwrap();
        let c = isotropic_plane_strain(100.0, 0.3).unwrap();
        let k = assemble_stiffness(&mesh, |_, _, _| c).unwrap();
        // pins both translations and the rotation, plus a mean-value tie
        let mut g = ConstraintMatrix::new(k.dim);
        g.push_row(vec![(0, 1.0)]);
        g.push_row(vec![(1, 1.0)]);
        g.push_row(vec![(7, 1.0)]);
        g.push_row((0..k.dim).map(|i| (i, 1.0 / k.dim as f64)).collect());
        let solver = SaddleSolver::new(&k, &g).unwrap();
        let ncols = 3;
        let top = Mat::from_fn(k.dim, ncols, |i, j| ((i + j) % 5) as f64 - 2.0);
        let bottom = Mat::from_fn(g.n_rows(), ncols, |i, j| (i as f64) - (j as f64));
        let (d, lambda) = solver.solve(&top, &bottom).unwrap();
        let (d_ref, l_ref) = reference::dense_kkt_oracle(&k, &g, &top, &bottom);
        for col in 0..ncols {
            for i in 0..k.dim {
                assert_relative_eq!(d[(i, col)], d_ref[(i, col)], epsilon = 1e-9);
            }
            for r in 0..g.n_rows() {
                assert_relative_eq!(lambda[(r, col)], l_ref[(r, col)], epsilon = 1e-9);
            }
        }
        // constraints satisfied to contract
        for col in 0..ncols {
            let x: Vec<f64> = (0..k.dim).map(|i| d[(i, col)]).collect();
            let gx = g.apply(&x);
            for r in 0..g.n_rows() {
                assert_relative_eq!(gx[r], bottom[(r, col)], epsilon = 1e-9);
            }
        }
    }
}
