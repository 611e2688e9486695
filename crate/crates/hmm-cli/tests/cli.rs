//! End-to-end checks of the `hmm-elast` binary: file outputs, exit codes,
//! determinism and the imported-cell path.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_hmm-elast")
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hmm-elast-test-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn solve_with_zero_load_writes_zero_displacements() {
    let dir = tmp_dir("zero");
    let cfg = dir.join("study.cfg");
    write(
        &cfg,
        "[benchmark]\nid = beam-inclusion\nload = 0.0\n[mesh]\nmacro_nx = 6\nmacro_ny = 2\nmicro_l = 4\n",
    );
    let out = dir.join("out");
    let status = Command::new(binary())
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let ux: f64 = fields[3].parse().unwrap();
        let uy: f64 = fields[4].parse().unwrap();
        assert_eq!(ux, 0.0);
        assert_eq!(uy, 0.0);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tmp_dir("determinism");
    let cfg = dir.join("study.cfg");
    write(
        &cfg,
        "[benchmark]\nid = plate-laminate\n[mesh]\nmacro_nx = 6\nmicro_l = 8\nmacro_schedule = 4x4, 8x8\n",
    );
    let run = |out: &Path, threads: &str| {
        let status = Command::new(binary())
            .args(["compare-fe2", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("study.csv")).unwrap()
    };
    let a = run(&dir.join("a"), "1");
    let b = run(&dir.join("b"), "4");
    assert_eq!(a, b, "CSV output must not depend on the thread count");
}

#[test]
fn check_mode_exit_codes() {
    let dir = tmp_dir("check");
    let cfg = dir.join("study.cfg");
    // a tiny laminate tensor sweep: the pinned order tolerance cannot hold at
    // these resolutions, so --check must exit 2
    write(
        &cfg,
        "[benchmark]\nid = plate-laminate\n[mesh]\nmicro_schedule = 8, 16, 32\nreference_tensor_l = 64\n",
    );
    let status = Command::new(binary())
        .args(["tensor-conv", "--check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // without --check the same run succeeds
    let status = Command::new(binary())
        .args(["tensor-conv", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn bad_inputs_exit_one() {
    let status = Command::new(binary()).args(["frobnicate"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let dir = tmp_dir("bad");
    let cfg = dir.join("study.cfg");
    write(&cfg, "[mesh]\nmicro_schedule = 16, 8\n");
    let status = Command::new(binary())
        .args(["micro-conv", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn imported_cell_drives_the_beam() {
    let dir = tmp_dir("rve");
    // small two-phase cell: 2x2 squares split into triangles
    let delta = 28.5;
    let mut mesh = String::new();
    let n = 2usize;
    for j in 0..=n {
        for i in 0..=n {
            let x = -delta / 2.0 + i as f64 * delta / n as f64;
            let y = -delta / 2.0 + j as f64 * delta / n as f64;
            mesh.push_str(&format!("NODE {} {x} {y}\n", j * (n + 1) + i));
        }
    }
    let nid = |i: usize, j: usize| j * (n + 1) + i;
    let mut eid = 0;
    for j in 0..n {
        for i in 0..n {
            let phase = usize::from(i == j);
            mesh.push_str(&format!("ELEM {eid} T3 {} {} {} {phase}\n", nid(i, j), nid(i + 1, j), nid(i + 1, j + 1)));
            eid += 1;
            mesh.push_str(&format!("ELEM {eid} T3 {} {} {} {phase}\n", nid(i, j), nid(i + 1, j + 1), nid(i, j + 1)));
            eid += 1;
        }
    }
    write(&dir.join("cell.txt"), &mesh);
    let cfg = dir.join("study.cfg");
    write(
        &cfg,
        "[benchmark]\nid = imported-rve\n[material]\nepsilon = 28.5\nmesh_file = cell.txt\n[mesh]\nmacro_nx = 6\nmacro_ny = 2\n",
    );
    let out = dir.join("out");
    let output = Command::new(binary())
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("max displacement magnitude"));
}

#[test]
fn vtk_snapshots_written_on_request() {
    let dir = tmp_dir("vtk");
    let cfg = dir.join("study.cfg");
    write(
        &cfg,
        "[benchmark]\nid = beam-inclusion\n[mesh]\nmacro_nx = 6\nmacro_ny = 2\nmicro_l = 4\n\
         [output]\nwrite_vtk = true\nvtk_micro = 3, 1\n",
    );
    let out = dir.join("out");
    let status = Command::new(binary())
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let macro_vtk = std::fs::read_to_string(out.join("fields_macro.vtk")).unwrap();
    assert!(macro_vtk.starts_with("# vtk DataFile Version 3.0"));
    assert!(macro_vtk.contains("VECTORS displacement double"));
    assert!(macro_vtk.contains("SCALARS von_mises double 1"));
    let micro_vtk = std::fs::read_to_string(out.join("fields_micro_e3_q1.vtk")).unwrap();
    assert!(micro_vtk.contains("DATASET UNSTRUCTURED_GRID"));
}
