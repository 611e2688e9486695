//! Turn a study configuration into concrete macro problems: meshes, material
//! fields, clamped edges and edge loads. The left edge is clamped and the
//! load acts on the right edge for every built-in benchmark.

use crate::config::{BenchmarkId, StudyConfig};
use hmm_core::error::{Error, Result};
use hmm_core::fem::EdgeLoad;
use hmm_core::macroscale::{AssemblyMode, MacroProblem, MicroSpecification};
use hmm_core::material::{
    analytical_laminate_field, isotropic_plane_strain, nonuniform_field, MicroMaterialField,
};
use hmm_core::mesh::{build_structured_quads, import_two_phase_mesh, Mesh};
use std::sync::Arc;

pub fn build_field(cfg: &StudyConfig) -> Result<MicroMaterialField> {
    match cfg.benchmark {
        BenchmarkId::BeamInclusion => MicroMaterialField::matrix_inclusion(
            cfg.e_inclusion,
            cfg.e_matrix,
            cfg.nu,
            cfg.side_fraction,
        ),
        BenchmarkId::PlateLaminate => analytical_laminate_field(cfg.epsilon),
        BenchmarkId::PlateNonuniform => nonuniform_field(cfg.epsilon, cfg.nu),
        BenchmarkId::ImportedRve => Ok(MicroMaterialField::TwoPhase {
            phases: [
                isotropic_plane_strain(cfg.e_matrix, cfg.nu)?,
                isotropic_plane_strain(cfg.e_inclusion, cfg.nu)?,
            ],
        }),
    }
}

pub fn load_imported_cell(cfg: &StudyConfig) -> Result<Option<Arc<Mesh>>> {
    match (&cfg.mesh_file, cfg.benchmark) {
        (Some(path), BenchmarkId::ImportedRve) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
            Ok(Some(Arc::new(import_two_phase_mesh(&text)?)))
        }
        _ => Ok(None),
    }
}

pub fn micro_spec(cfg: &StudyConfig, resolution: usize) -> Result<MicroSpecification> {
    Ok(MicroSpecification {
        resolution,
        delta: cfg.delta,
        field: build_field(cfg)?,
        imported_cell: load_imported_cell(cfg)?,
    })
}

pub fn macro_mesh(cfg: &StudyConfig, nx: usize, ny: usize) -> Result<Arc<Mesh>> {
    Ok(Arc::new(build_structured_quads(nx, ny, cfg.domain_origin, cfg.domain_lengths)?))
}

pub fn edge_loads(cfg: &StudyConfig) -> Vec<EdgeLoad> {
    vec![EdgeLoad {
        tag: "right".into(),
        traction: [
            cfg.load_magnitude * cfg.load_direction[0],
            cfg.load_magnitude * cfg.load_direction[1],
        ],
    }]
}

/// The benchmark's boundary value problem on an `nx` by `ny` macro grid with
/// an `l` by `l` micro grid.
pub fn build_problem(
    cfg: &StudyConfig,
    nx: usize,
    ny: usize,
    l: usize,
    mode: AssemblyMode,
) -> Result<MacroProblem> {
    let mesh = macro_mesh(cfg, nx, ny)?;
    let dirichlet = hmm_core::macroscale::clamp_edge(&mesh, "left");
    Ok(MacroProblem {
        mesh,
        micro: micro_spec(cfg, l)?,
        dirichlet,
        edge_loads: edge_loads(cfg),
        mode,
        thickness: cfg.thickness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_match_benchmarks() {
        let beam = StudyConfig::defaults(BenchmarkId::BeamInclusion);
        match build_field(&beam).unwrap() {
            MicroMaterialField::MatrixInclusion { .. } => {}
            other => panic!("unexpected field {other:?}"),
        }
        let plate = StudyConfig::defaults(BenchmarkId::PlateLaminate);
        match build_field(&plate).unwrap() {
            MicroMaterialField::AnalyticalLaminate { epsilon } => assert_eq!(epsilon, 0.005),
            other => panic!("unexpected field {other:?}"),
        }
    }

    #[test]
    fn problem_wires_clamp_and_load() {
        let cfg = StudyConfig::defaults(BenchmarkId::BeamInclusion);
        let p = build_problem(&cfg, 10, 2, 4, AssemblyMode::Transfer).unwrap();
        // 3 left-edge nodes, both components
        assert_eq!(p.dirichlet.len(), 6);
        assert_eq!(p.edge_loads[0].traction, [0.0, -1.0]);
        assert_eq!(p.thickness, 100.0);
    }
}
