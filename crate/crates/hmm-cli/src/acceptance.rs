//! The acceptance suite: ten criteria with pinned expected values and
//! tolerances, runnable from the CLI (`check`) and from the integration
//! tests. Each criterion reports one pass/fail line plus its measurements.

use crate::config::{BenchmarkId, StudyConfig};
use crate::studies::{run_study, CheckLine, StudyKind};
use hmm_core::error::Result;
use hmm_core::homogenize::{
    a0h_convergence, homogenized_tensor_condensation, homogenized_tensor_unit_strain,
    volumetric_mean, TENSOR_COMPONENTS,
};
use hmm_core::macroscale::{
    solve_macro, solve_reference_singlescale, AssemblyMode, MicroCache, MicroSpecification,
};
use hmm_core::material::{
    analytical_laminate_field, isotropic_plane_strain, laminate_exact, nonuniform_field,
    ElasticVoigt2D, MicroMaterialField,
};
use hmm_core::mesh::ElementKind;
use hmm_core::micro::{solve_micro_states, CellOperators, MicroDomain};
use hmm_core::spr::RefinementNorm;
use std::sync::Arc;
use std::time::Instant;

pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub lines: Vec<String>,
}

impl CriterionOutcome {
    fn from_checks(id: usize, name: &'static str, checks: Vec<CheckLine>) -> Self {
        let passed = checks.iter().all(|c| c.pass);
        let lines = checks.iter().map(CheckLine::render).collect();
        Self { id, name, passed, lines }
    }

    pub fn summary(&self) -> String {
        format!("criterion {:02} [{}] {}", self.id, if self.passed { "PASS" } else { "FAIL" }, self.name)
    }
}

pub const CRITERION_COUNT: usize = 10;

pub fn run_criterion(id: usize) -> Result<CriterionOutcome> {
    match id {
        1 => criterion_1_laminate_tensor(),
        2 => criterion_2_tensor_order(),
        3 => criterion_3_inclusion_tensor(),
        4 => criterion_4_mode_identity(),
        5 => criterion_5_route_equivalence(),
        6 => criterion_6_macro_orders(),
        7 => criterion_7_micro_superconvergence(),
        8 => criterion_8_optimal_refinement(),
        9 => criterion_9_spr(),
        10 => criterion_10_property_suite(),
        _ => Err(hmm_core::Error::Invalid(format!("no criterion {id}"))),
    }
}

pub fn run_all(filter: Option<&str>) -> Result<Vec<CriterionOutcome>> {
    let mut out = Vec::new();
    for id in 1..=CRITERION_COUNT {
        let name = criterion_name(id);
        if let Some(pat) = filter {
            if !name.contains(pat) && id.to_string() != pat {
                continue;
            }
        }
        out.push(run_criterion(id)?);
    }
    Ok(out)
}

pub fn criterion_name(id: usize) -> &'static str {
    match id {
        1 => "homogenized laminate tensor values",
        2 => "laminate tensor convergence order",
        3 => "matrix-inclusion tensor values and orders",
        4 => "stiffness-transfer and tensor modes coincide",
        5 => "unit-strain and condensation routes coincide",
        6 => "beam macro convergence orders",
        7 => "laminate micro convergence and superconvergence",
        8 => "optimal uniform refinement schedules",
        9 => "superconvergent patch recovery orders",
        10 => "property suite",
        _ => "unknown",
    }
}

/// Adaptive Simpson integration, the analytic oracle for period averages.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 0 { 2.0 } else { 4.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

fn laminate_ops(l: usize) -> Result<CellOperators> {
    let eps = 0.005;
    let field = analytical_laminate_field(eps)?;
    CellOperators::new(MicroDomain::structured([0.0, 0.0], eps, l, field)?)
}

fn criterion_1_laminate_tensor() -> Result<CriterionOutcome> {
    let start = Instant::now();
    let t160 = homogenized_tensor_unit_strain(&laminate_ops(160)?)?.a0h;
    let t320 = homogenized_tensor_unit_strain(&laminate_ops(320)?)?.a0h;
    let mut checks = vec![
        CheckLine::new("A11 at L=160", t160.c[0][0], 100.0037, 1e-3, false),
        CheckLine::new("A22 at L=160", t160.c[1][1], 140.0280, 1e-3, false),
        CheckLine::new("A12 at L=160", t160.c[0][1], 35.0, 1e-9, false),
        CheckLine::new("A33 at L=160", t160.c[2][2], 50.0, 1e-9, false),
    ];
    // Richardson extrapolation of the second-order sequence approaches the
    // harmonic-mean limit
    let extrapolated = (4.0 * t320.c[0][0] - t160.c[0][0]) / 3.0;
    checks.push(CheckLine::new("A11 extrapolated to the limit", extrapolated, 100.0, 1e-4, false));
    // analytic oracle: period integrals of the coefficient
    let two_pi = 2.0 * std::f64::consts::PI;
    let c11 = |x: f64| 500.0 / (5.0 + 3.5 * (two_pi * x).sin());
    let harmonic = 1.0 / simpson(&|x| 1.0 / c11(x), 0.0, 1.0, 4096);
    let mean = simpson(&c11, 0.0, 1.0, 4096);
    checks.push(CheckLine::new("oracle harmonic mean of c11", harmonic, 100.0, 1e-4, false));
    checks.push(CheckLine::new(
        "oracle arithmetic mean of c11",
        mean,
        laminate_exact::arithmetic_mean_c11(),
        1e-4,
        false,
    ));
    let mean160 = volumetric_mean(&laminate_ops(160)?.domain)?;
    checks.push(CheckLine::new("volumetric mean A11 at L=160", mean160.c[0][0], 140.0280, 1e-3, false));
    let secs = start.elapsed().as_secs_f64();
    checks.push(CheckLine::range("runtime (s)", secs, 0.0, 30.0));
    Ok(CriterionOutcome::from_checks(1, criterion_name(1), checks))
}

fn criterion_2_tensor_order() -> Result<CriterionOutcome> {
    let eps = 0.005;
    let field = analytical_laminate_field(eps)?;
    let conv = a0h_convergence(&field, [0.0, 0.0], eps, &[20, 40, 80, 160], 320)?;
    let order = conv.orders[0].unwrap_or(f64::NAN);
    let mut checks = vec![CheckLine::range("A11 fitted order vs reference L=320", order, 1.9, 2.1)];
    // diagnostic: the same sequence measured against the analytic limit
    let sizes: Vec<f64> = conv.resolutions.iter().map(|&l| 1.0 / l as f64).collect();
    let errs_limit: Vec<f64> = conv.tensors.iter().map(|t| (t.c[0][0] - 100.0).abs()).collect();
    if let Ok(r) = hmm_core::postprocess::convergence_order(&sizes, &errs_limit) {
        checks.push(CheckLine::range(
            "diagnostic: A11 order vs the analytic limit (not gated)",
            r.fitted_order,
            f64::NEG_INFINITY,
            f64::INFINITY,
        ));
    }
    Ok(CriterionOutcome::from_checks(2, criterion_name(2), checks))
}

fn criterion_3_inclusion_tensor() -> Result<CriterionOutcome> {
    let start = Instant::now();
    let field = MicroMaterialField::matrix_inclusion(100000.0, 40000.0, 0.2, 0.25)?;
    let conv = a0h_convergence(&field, [0.0, 0.0], 5.0, &[16, 32, 64, 128], 256)?;
    let t16 = &conv.tensors[0];
    let mut checks = vec![
        CheckLine::new("A11 at L=16", t16.c[0][0], 46721.57, 5e-4, true),
        CheckLine::new("A12 at L=16", t16.c[0][1], 11662.05, 5e-4, true),
        CheckLine::new("A33 at L=16", t16.c[2][2], 17443.96, 5e-4, true),
    ];
    for (k, (_, _, name)) in TENSOR_COMPONENTS.iter().enumerate() {
        let order = conv.orders[k].unwrap_or(f64::NAN);
        checks.push(CheckLine::range(format!("{name} order"), order, 1.6, 1.95));
    }
    let secs = start.elapsed().as_secs_f64();
    checks.push(CheckLine::range("runtime (s)", secs, 0.0, 180.0));
    Ok(CriterionOutcome::from_checks(3, criterion_name(3), checks))
}

fn criterion_4_mode_identity() -> Result<CriterionOutcome> {
    let mut checks = Vec::new();
    let cases = [
        (BenchmarkId::BeamInclusion, (50usize, 10usize), 32usize, "beam 50x10 / 32x32"),
        (BenchmarkId::PlateLaminate, (20, 20), 20, "plate 20x20 / 20x20"),
    ];
    for (bench, grid, l, label) in cases {
        let cfg = StudyConfig::defaults(bench);
        let pt = crate::benchmarks::build_problem(&cfg, grid.0, grid.1, l, AssemblyMode::Transfer)?;
        let st = solve_macro(&pt, Arc::new(MicroCache::new(true)))?;
        let pa = crate::benchmarks::build_problem(&cfg, grid.0, grid.1, l, AssemblyMode::Tensor)?;
        let sa = solve_macro(&pa, Arc::new(MicroCache::new(true)))?;
        let dev_max = (st.max_norm() - sa.max_norm()).abs() / st.max_norm();
        let dev_energy = (st.energy_norm() - sa.energy_norm()).abs() / st.energy_norm();
        checks.push(CheckLine::new(format!("{label}: |u|_inf deviation"), dev_max, 0.0, 1e-9, false));
        checks.push(CheckLine::new(format!("{label}: |u|_A deviation"), dev_energy, 0.0, 1e-9, false));
    }
    Ok(CriterionOutcome::from_checks(4, criterion_name(4), checks))
}

fn acceptance_fields() -> Result<Vec<(&'static str, MicroMaterialField, f64, [f64; 2])>> {
    Ok(vec![
        ("laminate", analytical_laminate_field(0.005)?, 0.005, [0.0, 0.0]),
        (
            "inclusion",
            MicroMaterialField::matrix_inclusion(100000.0, 40000.0, 0.2, 0.25)?,
            5.0,
            [0.0, 0.0],
        ),
        ("nonuniform", nonuniform_field(0.005, 0.3)?, 0.005, [0.1, 0.2]),
    ])
}

fn criterion_5_route_equivalence() -> Result<CriterionOutcome> {
    let mut checks = Vec::new();
    for (name, field, delta, center) in acceptance_fields()? {
        let ops = CellOperators::new(MicroDomain::structured(center, delta, 32, field)?)?;
        let a = homogenized_tensor_unit_strain(&ops)?.a0h;
        let b = homogenized_tensor_condensation(&ops)?.a0h;
        let mut dev = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                dev = dev.max((a.c[i][j] - b.c[i][j]).abs());
            }
        }
        checks.push(CheckLine::new(
            format!("{name}: route deviation at L=32 (relative)"),
            dev / a.max_abs(),
            0.0,
            1e-8,
            false,
        ));
    }
    Ok(CriterionOutcome::from_checks(5, criterion_name(5), checks))
}

fn criterion_6_macro_orders() -> Result<CriterionOutcome> {
    let start = Instant::now();
    let mut cfg = StudyConfig::defaults(BenchmarkId::BeamInclusion);
    cfg.micro_l = 32;
    cfg.macro_schedule = vec![(50, 10), (100, 20), (200, 40), (400, 80)];
    cfg.reference_macro = (800, 160);
    cfg.h1_scale = 1e-6;
    let out = run_study(&cfg, StudyKind::MacroConv)?;
    let mut checks = out.checks;
    let secs = start.elapsed().as_secs_f64();
    checks.push(CheckLine::range("runtime (s)", secs, 0.0, 600.0));
    Ok(CriterionOutcome::from_checks(6, criterion_name(6), checks))
}

fn criterion_7_micro_superconvergence() -> Result<CriterionOutcome> {
    let mut cfg = StudyConfig::defaults(BenchmarkId::PlateLaminate);
    cfg.macro_grid = (40, 40);
    cfg.micro_schedule = vec![16, 32, 64, 128];
    cfg.reference_micro = 256;
    let out = run_study(&cfg, StudyKind::MicroConv)?;
    Ok(CriterionOutcome::from_checks(7, criterion_name(7), out.checks))
}

fn criterion_8_optimal_refinement() -> Result<CriterionOutcome> {
    let mut checks = Vec::new();
    let mut cfg = StudyConfig::defaults(BenchmarkId::PlateLaminate);
    cfg.refine_norm = RefinementNorm::H1;
    cfg.refine_macro = vec![16, 64, 144, 256, 576];
    cfg.reference_refine_macro = 1152;
    cfg.reference_tensor_l = 512;
    let out = run_study(&cfg, StudyKind::RefineOpt)?;
    for c in out.checks {
        checks.push(CheckLine { name: format!("H1 run: {}", c.name), ..c });
    }
    let mut cfg = StudyConfig::defaults(BenchmarkId::PlateLaminate);
    cfg.refine_norm = RefinementNorm::L2;
    cfg.refine_macro = vec![16, 64, 144, 256, 576];
    cfg.reference_refine_macro = 1152;
    cfg.reference_tensor_l = 512;
    let out = run_study(&cfg, StudyKind::RefineOpt)?;
    for c in out.checks {
        checks.push(CheckLine { name: format!("L2 run: {}", c.name), ..c });
    }
    Ok(CriterionOutcome::from_checks(8, criterion_name(8), checks))
}

fn criterion_9_spr() -> Result<CriterionOutcome> {
    let mut cfg = StudyConfig::defaults(BenchmarkId::BeamInclusion);
    cfg.macro_schedule = vec![(25, 5), (50, 10), (100, 20), (200, 40), (400, 80)];
    cfg.reference_macro = (800, 160);
    cfg.micro_l = 32;
    cfg.spr_node = [2400.0, 400.0];
    let out = run_study(&cfg, StudyKind::Spr)?;
    Ok(CriterionOutcome::from_checks(9, criterion_name(9), out.checks))
}

fn criterion_10_property_suite() -> Result<CriterionOutcome> {
    let mut checks = Vec::new();
    // residual checks on every micro solve across the three fields
    for (name, field, delta, center) in acceptance_fields()? {
        let ops = CellOperators::new(MicroDomain::structured(center, delta, 16, field)?)?;
        let macro_coords = vec![[0.0, 0.0], [delta * 10.0, 0.0], [delta * 10.0, delta * 10.0], [0.0, delta * 10.0]];
        let g = 1.0 / 3.0f64.sqrt();
        let mut worst_hm = 0.0f64;
        let mut worst_fluct = 0.0f64;
        let mut worst_pair = 0.0f64;
        for qp in [[-g, -g], [g, -g], [g, g], [-g, g]] {
            let st = solve_micro_states(&ops, ElementKind::Q1, &macro_coords, qp)?;
            for col in 0..st.transfer.ncols() {
                let sol: Vec<f64> = (0..st.transfer.nrows()).map(|i| st.transfer[(i, col)]).collect();
                let drv: Vec<f64> = (0..st.drives.nrows()).map(|i| st.drives[(i, col)]).collect();
                let c = hmm_core::micro::verify_micro_solution(&ops, &sol, &drv)?;
                worst_hm = worst_hm.max(c.hill_mandel);
                worst_fluct = worst_fluct.max(c.fluctuation_mean / (delta * delta));
                worst_pair = worst_pair.max(c.pair_residual);
            }
        }
        checks.push(CheckLine::new(format!("{name}: Hill-Mandel residual"), worst_hm, 0.0, 1e-8, false));
        checks.push(CheckLine::new(
            format!("{name}: fluctuation zero-mean residual / delta^2"),
            worst_fluct,
            0.0,
            1e-9,
            false,
        ));
        checks.push(CheckLine::new(format!("{name}: periodic pair residual"), worst_pair, 0.0, 1e-9, false));
    }
    // constant-material collapse against single-scale FEM
    {
        let c = isotropic_plane_strain(40000.0, 0.2)?;
        let cfg = StudyConfig::defaults(BenchmarkId::BeamInclusion);
        let mesh = crate::benchmarks::macro_mesh(&cfg, 10, 2)?;
        let fem = solve_reference_singlescale(
            mesh.clone(),
            |_, _, _| c,
            hmm_core::macroscale::clamp_edge(&mesh, "left"),
            crate::benchmarks::edge_loads(&cfg),
            cfg.thickness,
        )?;
        for mode in [AssemblyMode::Transfer, AssemblyMode::Tensor] {
            let problem = hmm_core::macroscale::MacroProblem {
                mesh: mesh.clone(),
                micro: MicroSpecification::structured(8, cfg.delta, MicroMaterialField::Constant(c)),
                dirichlet: hmm_core::macroscale::clamp_edge(&mesh, "left"),
                edge_loads: crate::benchmarks::edge_loads(&cfg),
                mode,
                thickness: cfg.thickness,
            };
            let sol = solve_macro(&problem, Arc::new(MicroCache::new(true)))?;
            let dev = sol
                .d
                .iter()
                .zip(&fem.d)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
                / fem.max_norm();
            checks.push(CheckLine::new(
                format!("constant-material collapse ({mode:?})"),
                dev,
                0.0,
                1e-9,
                false,
            ));
        }
    }
    // dense KKT oracle on small cells
    for (name, field, delta, center) in acceptance_fields()? {
        let ops = CellOperators::new(MicroDomain::structured(center, delta, 4, field)?)?;
        let macro_coords = vec![[0.0, 0.0], [delta, 0.0], [delta, delta], [0.0, delta]];
        let g = 1.0 / 3.0f64.sqrt();
        let st = solve_micro_states(&ops, ElementKind::Q1, &macro_coords, [g, -g])?;
        let m = ops.coupling.n_rows();
        let mut bottom = hmm_core::faer::Mat::zeros(m, st.drives.ncols());
        for col in 0..st.drives.ncols() {
            let d: Vec<f64> = (0..st.drives.nrows()).map(|i| st.drives[(i, col)]).collect();
            let gd = ops.coupling.g.apply(&d);
            for r in 0..m {
                bottom[(r, col)] = gd[r];
            }
        }
        let top = hmm_core::faer::Mat::zeros(ops.k_mic.dim, st.drives.ncols());
        let (oracle, _) = hmm_core::reference::dense_kkt_oracle(&ops.k_mic, &ops.coupling.g, &top, &bottom);
        let mut dev = 0.0f64;
        for col in 0..oracle.ncols() {
            for i in 0..oracle.nrows() {
                dev = dev.max((oracle[(i, col)] - st.transfer[(i, col)]).abs());
            }
        }
        checks.push(CheckLine::new(format!("{name}: dense KKT oracle deviation"), dev, 0.0, 1e-9, false));
    }
    // Voigt upper bound
    for (name, field, delta, center) in acceptance_fields()? {
        let ops = CellOperators::new(MicroDomain::structured(center, delta, 16, field)?)?;
        let a0h = homogenized_tensor_unit_strain(&ops)?.a0h;
        let voigt = volumetric_mean(&ops.domain)?;
        let mut diff = voigt.c;
        for i in 0..3 {
            for j in 0..3 {
                diff[i][j] -= a0h.c[i][j];
            }
        }
        let slack = ElasticVoigt2D::new(diff).eigenvalues()[0] / voigt.max_abs();
        checks.push(CheckLine::range(format!("{name}: Voigt bound eigenvalue slack"), slack, -1e-8, f64::INFINITY));
    }
    // thread-count invariance of study output
    {
        let mut cfg = StudyConfig::defaults(BenchmarkId::BeamInclusion);
        cfg.macro_schedule = vec![(4, 2), (8, 4)];
        cfg.micro_l = 8;
        let run_with = |threads: usize| -> Result<String> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| hmm_core::Error::Invalid(format!("thread pool: {e}")))?;
            pool.install(|| run_study(&cfg, StudyKind::CompareFe2)).map(|o| o.csv)
        };
        let single = run_with(1)?;
        let multi = run_with(4)?;
        checks.push(CheckLine::range(
            "thread-count invariance of CSV output",
            (single == multi) as i32 as f64,
            1.0,
            1.0,
        ));
    }
    Ok(CriterionOutcome::from_checks(10, criterion_name(10), checks))
}
