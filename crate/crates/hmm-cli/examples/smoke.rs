use hmm_cli::config::{BenchmarkId, StudyConfig};
use hmm_cli::studies::{run_study, StudyKind};
use std::time::Instant;

fn main() {
    // small versions of each study
    let mut beam = StudyConfig::defaults(BenchmarkId::BeamInclusion);
    beam.macro_grid = (10, 2);
    beam.micro_l = 8;
    beam.macro_schedule = vec![(10, 2), (20, 4), (40, 8)];
    beam.reference_macro = (80, 16);
    let mut plate = StudyConfig::defaults(BenchmarkId::PlateLaminate);
    plate.macro_grid = (8, 8);
    plate.micro_l = 8;
    plate.micro_schedule = vec![4, 8, 16];
    plate.reference_micro = 32;
    plate.macro_schedule = vec![(8, 8), (16, 16)];
    plate.reference_macro = (32, 32);
    plate.refine_macro = vec![4, 9, 16];
    plate.reference_refine_macro = 48;
    plate.reference_tensor_l = 64;
    let mut spr = StudyConfig::defaults(BenchmarkId::BeamInclusion);
    spr.macro_schedule = vec![(25, 5), (50, 10), (100, 20)];
    spr.reference_macro = (200, 40);
    spr.micro_l = 8;
    let mut tens = plate.clone();
    tens.micro_schedule = vec![10, 20, 40];
    tens.reference_tensor_l = 80;

    for (label, cfg, kind) in [
        ("solve beam", &beam, StudyKind::Solve),
        ("compare-fe2 beam", &beam, StudyKind::CompareFe2),
        ("macro-conv beam", &beam, StudyKind::MacroConv),
        ("micro-conv plate", &plate, StudyKind::MicroConv),
        ("tensor-conv plate", &tens, StudyKind::TensorConv),
        ("spr beam", &spr, StudyKind::Spr),
        ("refine-opt plate", &plate, StudyKind::RefineOpt),
    ] {
        let t0 = Instant::now();
        match run_study(cfg, kind) {
            Ok(out) => {
                let nlines = out.csv.lines().count();
                println!("{label}: ok, {nlines} csv lines, {} checks ({:?})", out.checks.len(), t0.elapsed());
                for c in &out.checks {
                    println!("   {}", c.render());
                }
            }
            Err(e) => println!("{label}: ERROR {e}"),
        }
    }
}
