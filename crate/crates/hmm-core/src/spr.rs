//! Superconvergent patch recovery: least-squares transfer of element-center
//! stresses to the nodes, nodal error order maps over hierarchical mesh
//! sequences, and the optimal uniform micro/macro refinement schedules.

use crate::error::{Error, Result};
use crate::material::ElasticVoigt2D;
use crate::mesh::Mesh;
use crate::postprocess::{convergence_order, StressSample};
use nalgebra::{Matrix4, Vector4};

/// Elements adjacent to each node.
pub fn node_patches(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut patches = vec![Vec::new(); mesh.node_count()];
    for (e, el) in mesh.elements.iter().enumerate() {
        for &n in &el.conn {
            patches[n].push(e);
        }
    }
    patches
}

fn widen(mesh: &Mesh, patches: &[Vec<usize>], patch: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = patch.to_vec();
    for &e in patch {
        for &n in &mesh.elements[e].conn {
            for &e2 in &patches[n] {
                if !out.contains(&e2) {
                    out.push(e2);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Recover nodal stresses from element-center samples: per node and stress
/// component, a least-squares fit of [1, x, y, xy] over the surrounding
/// element centers, evaluated at the node. Patches with fewer than four
/// samples are widened by one element ring.
pub fn spr_recover(mesh: &Mesh, center_samples: &[StressSample]) -> Result<Vec<[f64; 3]>> {
    assert_eq!(center_samples.len(), mesh.element_count());
    let patches = node_patches(mesh);
    let mut recovered = vec![[0.0; 3]; mesh.node_count()];
    for n in 0..mesh.node_count() {
        let mut patch = patches[n].clone();
        if patch.len() < 4 {
            patch = widen(mesh, &patches, &patch);
        }
        let xn = mesh.nodes[n];
        // local coordinates centered at the node, scaled by the patch extent
        let mut h = 0.0f64;
        for &e in &patch {
            let d = center_samples[e].x;
            h = h.max((d[0] - xn[0]).abs()).max((d[1] - xn[1]).abs());
        }
        let h = h.max(1e-300);
        let mut a = Matrix4::<f64>::zeros();
        let mut rhs = [Vector4::<f64>::zeros(); 3];
        for &e in &patch {
            let s = &center_samples[e];
            let x = (s.x[0] - xn[0]) / h;
            let y = (s.x[1] - xn[1]) / h;
            let p = Vector4::new(1.0, x, y, x * y);
            a += p * p.transpose();
            for k in 0..3 {
                rhs[k] += p * s.stress[k];
            }
        }
        let lu = a.lu();
        for k in 0..3 {
            let coeff = lu.solve(&rhs[k]).ok_or_else(|| {
                Error::Solver(format!(
                    "singular recovery patch at node {} ({} samples)",
                    mesh.node_ids[n],
                    patch.len()
                ))
            })?;
            // the ansatz is centered at the node, so the nodal value is the
            // constant coefficient
            recovered[n][k] = coeff[0];
        }
    }
    Ok(recovered)
}

/// Nodal error between two recovered stress fields in the energy-density
/// metric sqrt(ds . A^{-1} ds).
pub fn nodal_energy_error(ds: [f64; 3], compliance: &ElasticVoigt2D) -> f64 {
    let t = compliance.stress(ds);
    (ds[0] * t[0] + ds[1] * t[1] + ds[2] * t[2]).max(0.0).sqrt()
}

/// Per-node convergence order of the recovered-stress error over a
/// hierarchical mesh sequence, measured against the recovery on a finer
/// reference mesh. Returns one entry per node of the coarsest mesh; nodes
/// whose errors fall to roundoff carry no order.
pub struct LocalOrderMap {
    /// (coarse node id, its coordinates, fitted order).
    pub entries: Vec<(usize, [f64; 2], Option<f64>)>,
}

pub fn local_order_map(
    levels: &[(&Mesh, &[[f64; 3]])],
    reference: (&Mesh, &[[f64; 3]]),
    a0h: &ElasticVoigt2D,
    sizes: &[f64],
) -> Result<LocalOrderMap> {
    if levels.len() != sizes.len() || levels.len() < 3 {
        return Err(Error::Invalid("order map needs at least three hierarchical levels".into()));
    }
    let compliance = a0h.inverse()?;
    let coarse = levels[0].0;
    let cg = coarse.grid.ok_or_else(|| Error::Mesh("order map requires structured grids".into()))?;
    let mut entries = Vec::with_capacity(coarse.node_count());
    let scale: f64 = reference
        .1
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    for j in 0..=cg.ny {
        for i in 0..=cg.nx {
            let cnode = cg.node_index(i, j);
            let mut errs = Vec::with_capacity(levels.len());
            for (mesh, rec) in levels {
                let g = mesh.grid.ok_or_else(|| Error::Mesh("order map requires structured grids".into()))?;
                let r = g.nx / cg.nx;
                if g.nx % cg.nx != 0 || g.ny % cg.ny != 0 {
                    return Err(Error::Mesh("order map meshes must be hierarchical".into()));
                }
                let node = g.node_index(i * r, j * r);
                let rg = reference.0.grid.unwrap();
                let rr = rg.nx / cg.nx;
                let rnode = rg.node_index(i * rr, j * rr);
                let ds = [
                    rec[node][0] - reference.1[rnode][0],
                    rec[node][1] - reference.1[rnode][1],
                    rec[node][2] - reference.1[rnode][2],
                ];
                errs.push(nodal_energy_error(ds, &compliance));
            }
            let order = if errs.iter().all(|&e| e > 1e-12 * scale.max(1e-300)) {
                convergence_order(sizes, &errs).ok().map(|r| r.fitted_order)
            } else {
                None
            };
            entries.push((cnode, coarse.nodes[cnode], order));
        }
    }
    Ok(LocalOrderMap { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementNorm {
    L2,
    H1,
}

/// Micro resolutions matching a macro schedule for full convergence order at
/// minimal cost: L = M for the L2 norm, L = round(sqrt(M)) for H1.
pub fn optimal_refinement_schedule(norm: RefinementNorm, macro_counts: &[usize]) -> Vec<(usize, usize)> {
    macro_counts
        .iter()
        .map(|&m| {
            let l = match norm {
                RefinementNorm::L2 => m,
                RefinementNorm::H1 => ((m as f64).sqrt() + 0.5).floor().max(1.0) as usize,
            };
            (m, l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_quads;
    use crate::postprocess::sample_stress_at;
    use crate::material::isotropic_plane_strain;
    use approx::assert_relative_eq;

    fn center_samples_of(mesh: &Mesh, stress: impl Fn([f64; 2]) -> [f64; 3]) -> Vec<StressSample> {
        (0..mesh.element_count())
            .map(|e| {
                let coords = mesh.element_coords(e);
                let cx = coords.iter().map(|p| p[0]).sum::<f64>() / coords.len() as f64;
                let cy = coords.iter().map(|p| p[1]).sum::<f64>() / coords.len() as f64;
                StressSample { x: [cx, cy], strain: [0.0; 3], stress: stress([cx, cy]) }
            })
            .collect()
    }

    #[test]
    fn linear_stress_recovered_exactly_everywhere() {
        let mesh = build_structured_quads(5, 4, [0.0, 0.0], [2.5, 2.0]).unwrap();
        let f = |x: [f64; 2]| [1.0 + 2.0 * x[0] - x[1], 0.5 * x[0], 3.0 * x[1]];
        let rec = spr_recover(&mesh, &center_samples_of(&mesh, f)).unwrap();
        for (n, p) in mesh.nodes.iter().enumerate() {
            let want = f(*p);
            for k in 0..3 {
                assert_relative_eq!(rec[n][k], want[k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn bilinear_stress_exact_at_interior_nodes() {
        let mesh = build_structured_quads(6, 6, [0.0, 0.0], [3.0, 3.0]).unwrap();
        let f = |x: [f64; 2]| [x[0] * x[1], 0.0, 0.0];
        let rec = spr_recover(&mesh, &center_samples_of(&mesh, f)).unwrap();
        let g = mesh.grid.unwrap();
        for j in 1..6 {
            for i in 1..6 {
                let n = g.node_index(i, j);
                let p = mesh.nodes[n];
                assert_relative_eq!(rec[n][0], p[0] * p[1], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn recovery_is_idempotent_on_span_fields() {
        // a field already in span(P): recover twice, values stay put
        let mesh = build_structured_quads(4, 4, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let f = |x: [f64; 2]| [2.0 - x[0] + 0.5 * x[0] * x[1], x[1], 0.0];
        let samples = center_samples_of(&mesh, f);
        let rec = spr_recover(&mesh, &samples).unwrap();
        let g = mesh.grid.unwrap();
        for j in 1..4 {
            for i in 1..4 {
                let n = g.node_index(i, j);
                let p = mesh.nodes[n];
                let want = f(p);
                for k in 0..3 {
                    assert_relative_eq!(rec[n][k], want[k], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn boundary_patches_widen() {
        // corner node of a 2x2 mesh has one adjacent element; widening makes
        // the fit well posed
        let mesh = build_structured_quads(2, 2, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let f = |x: [f64; 2]| [x[0], x[1], 1.0];
        let rec = spr_recover(&mesh, &center_samples_of(&mesh, f)).unwrap();
        for (n, p) in mesh.nodes.iter().enumerate() {
            assert_relative_eq!(rec[n][0], p[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn singular_patch_reported_with_node() {
        // a single-element mesh cannot support the four-term ansatz
        let mesh = build_structured_quads(1, 1, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let err = spr_recover(&mesh, &center_samples_of(&mesh, |_| [1.0, 0.0, 0.0])).unwrap_err();
        assert!(err.to_string().contains("node"), "{err}");
    }

    #[test]
    fn recovery_against_fem_solution_is_consistent() {
        // smoke: recovery of FEM center stresses stays near the sampled field
        let mesh = build_structured_quads(6, 3, [0.0, 0.0], [2.0, 1.0]).unwrap();
        let c = isotropic_plane_strain(100.0, 0.3).unwrap();
        let mut u = vec![0.0; mesh.dof_count()];
        for (n, p) in mesh.nodes.iter().enumerate() {
            u[2 * n] = 0.01 * p[0];
            u[2 * n + 1] = -0.003 * p[1];
        }
        let samples = sample_stress_at(&mesh, &u, [0.0, 0.0], |_, _| c).unwrap();
        let rec = spr_recover(&mesh, &samples).unwrap();
        let expect = c.stress([0.01, -0.003, 0.0]);
        for n in 0..mesh.node_count() {
            for k in 0..3 {
                assert_relative_eq!(rec[n][k], expect[k], epsilon = 1e-9 * expect[0].abs());
            }
        }
    }

    #[test]
    fn nodal_order_fits_power_law() {
        let a0h = isotropic_plane_strain(10.0, 0.2).unwrap();
        let compliance = a0h.inverse().unwrap();
        // errors scaling like h^2 fit order 2
        let e1 = nodal_energy_error([1e-2, 0.0, 0.0], &compliance);
        let e2 = nodal_energy_error([0.25e-2, 0.0, 0.0], &compliance);
        let e3 = nodal_energy_error([0.0625e-2, 0.0, 0.0], &compliance);
        let r = convergence_order(&[1.0, 0.5, 0.25], &[e1, e2, e3]).unwrap();
        assert_relative_eq!(r.fitted_order, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn refinement_schedules() {
        assert_eq!(
            optimal_refinement_schedule(RefinementNorm::L2, &[8, 16, 64]),
            vec![(8, 8), (16, 16), (64, 64)]
        );
        assert_eq!(
            optimal_refinement_schedule(RefinementNorm::H1, &[16, 64, 144, 256, 576]),
            vec![(16, 4), (64, 8), (144, 12), (256, 16), (576, 24)]
        );
        assert_eq!(optimal_refinement_schedule(RefinementNorm::H1, &[10]), vec![(10, 3)]);
    }
}
