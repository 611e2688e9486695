//! Legacy ASCII VTK unstructured-grid emission for displacement, stress and
//! derived scalar fields.

use crate::mesh::{ElementKind, Mesh};
use std::fmt::Write;

/// Point-data and cell-data scalars to attach to a mesh snapshot.
#[derive(Default)]
pub struct VtkFields<'a> {
    /// Nodal displacement, interleaved (u, v); written as 3-vectors.
    pub displacement: Option<&'a [f64]>,
    pub point_scalars: Vec<(&'a str, &'a [f64])>,
    pub cell_scalars: Vec<(&'a str, &'a [f64])>,
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

/// Render the mesh and fields as a legacy VTK unstructured grid.
pub fn write_vtk(title: &str, mesh: &Mesh, fields: &VtkFields) -> String {
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "{title}").unwrap();
    writeln!(s, "ASCII").unwrap();
    writeln!(s, "DATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {} double", mesh.node_count()).unwrap();
    for p in &mesh.nodes {
        writeln!(s, "{} {} 0", fmt(p[0]), fmt(p[1])).unwrap();
    }
    let total: usize = mesh.elements.iter().map(|e| e.conn.len() + 1).sum();
    writeln!(s, "CELLS {} {}", mesh.element_count(), total).unwrap();
    for el in &mesh.elements {
        let conn: Vec<String> = el.conn.iter().map(|n| n.to_string()).collect();
        writeln!(s, "{} {}", el.conn.len(), conn.join(" ")).unwrap();
    }
    writeln!(s, "CELL_TYPES {}", mesh.element_count()).unwrap();
    for el in &mesh.elements {
        let code = match el.kind {
            ElementKind::Q1 => 9,
            ElementKind::T3 => 5,
        };
        writeln!(s, "{code}").unwrap();
    }
    let has_point_data = fields.displacement.is_some() || !fields.point_scalars.is_empty();
    if has_point_data {
        writeln!(s, "POINT_DATA {}", mesh.node_count()).unwrap();
        if let Some(d) = fields.displacement {
            assert_eq!(d.len(), mesh.dof_count());
            writeln!(s, "VECTORS displacement double").unwrap();
            for n in 0..mesh.node_count() {
                writeln!(s, "{} {} 0", fmt(d[2 * n]), fmt(d[2 * n + 1])).unwrap();
            }
        }
        for (name, data) in &fields.point_scalars {
            assert_eq!(data.len(), mesh.node_count());
            writeln!(s, "SCALARS {name} double 1").unwrap();
            writeln!(s, "LOOKUP_TABLE default").unwrap();
            for v in *data {
                writeln!(s, "{}", fmt(*v)).unwrap();
            }
        }
    }
    if !fields.cell_scalars.is_empty() {
        writeln!(s, "CELL_DATA {}", mesh.element_count()).unwrap();
        for (name, data) in &fields.cell_scalars {
            assert_eq!(data.len(), mesh.element_count());
            writeln!(s, "SCALARS {name} double 1").unwrap();
            writeln!(s, "LOOKUP_TABLE default").unwrap();
            for v in *data {
                writeln!(s, "{}", fmt(*v)).unwrap();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_quads;

    #[test]
    fn single_quad_snapshot() {
        let mesh = build_structured_quads(1, 1, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let disp = vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.5, 0.0, 0.5];
        let vm = vec![2.0, 3.0, 4.0, 5.0];
        let out = write_vtk(
            "snapshot",
            &mesh,
            &VtkFields {
                displacement: Some(&disp),
                point_scalars: vec![("von_mises", &vm)],
                cell_scalars: vec![],
            },
        );
        assert!(out.starts_with("# vtk DataFile Version 3.0"));
        assert!(out.contains("POINTS 4 double"));
        assert!(out.contains("CELLS 1 5"));
        assert!(out.contains("4 0 1 3 2"));
        assert!(out.contains("CELL_TYPES 1\n9"));
        assert!(out.contains("VECTORS displacement double"));
        assert!(out.contains("SCALARS von_mises double 1"));
        // deterministic output
        let again = write_vtk(
            "snapshot",
            &mesh,
            &VtkFields {
                displacement: Some(&disp),
                point_scalars: vec![("von_mises", &vm)],
                cell_scalars: vec![],
            },
        );
        assert_eq!(out, again);
    }

    #[test]
    fn triangle_cells_use_type_five() {
        let text = "NODE 0 0 0\nNODE 1 1 0\nNODE 2 1 1\nNODE 3 0 1\n\
                    ELEM 0 T3 0 1 2 0\nELEM 1 T3 0 2 3 1\n";
        let mesh = crate::mesh::import_two_phase_mesh(text).unwrap();
        let phase: Vec<f64> = mesh.elements.iter().map(|e| e.phase as f64).collect();
        let out = write_vtk(
            "cells",
            &mesh,
            &VtkFields { displacement: None, point_scalars: vec![], cell_scalars: vec![("phase", &phase)] },
        );
        assert!(out.contains("CELL_TYPES 2\n5\n5"));
        assert!(out.contains("CELL_DATA 2"));
    }
}
