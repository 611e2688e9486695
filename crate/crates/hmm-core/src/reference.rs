//! Independent dense reference implementations used by the verification
//! suites. Everything here recomputes results from first principles with
//! nalgebra dense algebra and stays off the sparse production path.

use crate::fem::{bmatrix, gauss_legendre_quad, point_geometry, ConstraintMatrix, SparseSym};
use crate::material::ElasticVoigt2D;
use crate::mesh::{ElementKind, Mesh};
use nalgebra::{DMatrix, DVector};

/// Q1 element stiffness by straight dense quadrature at `n` by `n` Gauss
/// points (over-integration oracle).
pub fn dense_element_stiffness_oracle(
    coords: &[[f64; 2]],
    c: &ElasticVoigt2D,
    n_gauss: usize,
) -> DMatrix<f64> {
    let quad = gauss_legendre_quad(n_gauss);
    let mut k = DMatrix::zeros(8, 8);
    let cm = nalgebra::Matrix3::from_fn(|i, j| c.c[i][j]);
    for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
        let geo = point_geometry(ElementKind::Q1, coords, xi).expect("valid geometry");
        let b = bmatrix(&geo.grads);
        k += b.transpose() * cm * &b * (w * geo.det_j);
    }
    k
}

/// Dense global assembly for tiny meshes.
pub fn dense_assemble_oracle(mesh: &Mesh, c: &ElasticVoigt2D) -> DMatrix<f64> {
    let n = mesh.dof_count();
    let mut k = DMatrix::zeros(n, n);
    for e in 0..mesh.element_count() {
        let coords = mesh.element_coords(e);
        let ke = dense_element_stiffness_oracle(&coords, c, 2);
        let conn = &mesh.elements[e].conn;
        for (a, &na) in conn.iter().enumerate() {
            for (b, &nb) in conn.iter().enumerate() {
                for i in 0..2 {
                    for j in 0..2 {
                        k[(2 * na + i, 2 * nb + j)] += ke[(2 * a + i, 2 * b + j)];
                    }
                }
            }
        }
    }
    k
}

/// Dense Dirichlet solve: assemble, partition, LU.
pub fn dense_dirichlet_oracle(
    mesh: &Mesh,
    c: &ElasticVoigt2D,
    f: &[f64],
    fixed: &[(usize, f64)],
) -> Vec<f64> {
    let k = dense_assemble_oracle(mesh, c);
    let n = k.nrows();
    let mut fixed_value = vec![None; n];
    for &(d, v) in fixed {
        fixed_value[d] = Some(v);
    }
    let free: Vec<usize> = (0..n).filter(|&d| fixed_value[d].is_none()).collect();
    let mut k11 = DMatrix::zeros(free.len(), free.len());
    let mut rhs = DVector::zeros(free.len());
    for (i, &di) in free.iter().enumerate() {
        rhs[i] = f[di];
        for (j, &dj) in free.iter().enumerate() {
            k11[(i, j)] = k[(di, dj)];
        }
        for dj in 0..n {
            if let Some(v) = fixed_value[dj] {
                rhs[i] -= k[(di, dj)] * v;
            }
        }
    }
    let x = k11.lu().solve(&rhs).expect("oracle solve");
    let mut d = vec![0.0; n];
    for (i, &di) in free.iter().enumerate() {
        d[di] = x[i];
    }
    for (di, v) in fixed_value.iter().enumerate() {
        if let Some(v) = v {
            d[di] = *v;
        }
    }
    d
}

/// Dense KKT factorization oracle: assembles [[K, G'],[G, 0]] in full and
/// solves with partial-pivot LU, one column at a time.
pub fn dense_kkt_oracle(
    k: &SparseSym,
    g: &ConstraintMatrix,
    rhs_top: &faer::Mat<f64>,
    rhs_bottom: &faer::Mat<f64>,
) -> (faer::Mat<f64>, faer::Mat<f64>) {
    let n = k.dim;
    let m = g.n_rows();
    let dim = n + m;
    let mut a = DMatrix::zeros(dim, dim);
    let sym = k.mat.symbolic();
    for j in 0..n {
        for p in sym.col_ptr()[j]..sym.col_ptr()[j + 1] {
            a[(sym.row_idx()[p], j)] = k.mat.val()[p];
        }
    }
    for (r, row) in g.rows.iter().enumerate() {
        for &(cidx, v) in row {
            a[(n + r, cidx)] = v;
            a[(cidx, n + r)] = v;
        }
    }
    let lu = a.lu();
    let ncols = rhs_top.ncols();
    let mut primal = faer::Mat::zeros(n, ncols);
    let mut mult = faer::Mat::zeros(m, ncols);
    for col in 0..ncols {
        let mut b = DVector::zeros(dim);
        for i in 0..n {
            b[i] = rhs_top[(i, col)];
        }
        for r in 0..m {
            b[n + r] = rhs_bottom[(r, col)];
        }
        let x = lu.solve(&b).expect("oracle KKT solve");
        for i in 0..n {
            primal[(i, col)] = x[i];
        }
        for r in 0..m {
            mult[(r, col)] = x[n + r];
        }
    }
    (primal, mult)
}
