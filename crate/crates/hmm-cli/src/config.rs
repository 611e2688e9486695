//! Study configuration: a flat, sectioned `key = value` text file. Every
//! benchmark parameter has a key whose default is the benchmark's published
//! value; file entries override defaults.

use hmm_core::macroscale::AssemblyMode;
use hmm_core::spr::RefinementNorm;
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config {}: {}", self.path, self.msg)
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), msg: msg.into() }
}

/// Raw sectioned key/value file.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    entries: HashMap<String, String>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let path = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if entries.insert(path.clone(), value.trim().to_string()).is_some() {
                return Err(err(path, "duplicate key"));
            }
        }
        Ok(Self { entries, consumed: Default::default() })
    }

    fn get(&self, path: &str) -> Option<&str> {
        let hit = self.entries.get(path).map(|s| s.as_str());
        if hit.is_some() {
            self.consumed.borrow_mut().push(path.to_string());
        }
        hit
    }

    pub fn unknown_keys(&self) -> Vec<String> {
        let consumed = self.consumed.borrow();
        let mut unknown: Vec<String> = self
            .entries
            .keys()
            .filter(|k| !consumed.iter().any(|c| c == *k))
            .cloned()
            .collect();
        unknown.sort();
        unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkId {
    BeamInclusion,
    PlateLaminate,
    PlateNonuniform,
    ImportedRve,
}

impl BenchmarkId {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "beam-inclusion" => Ok(Self::BeamInclusion),
            "plate-laminate" => Ok(Self::PlateLaminate),
            "plate-nonuniform" => Ok(Self::PlateNonuniform),
            "imported-rve" => Ok(Self::ImportedRve),
            other => Err(err("benchmark.id", format!("unknown benchmark `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::BeamInclusion => "beam-inclusion",
            Self::PlateLaminate => "plate-laminate",
            Self::PlateNonuniform => "plate-nonuniform",
            Self::ImportedRve => "imported-rve",
        }
    }
}

/// Fully resolved study parameters.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub benchmark: BenchmarkId,
    pub mode: AssemblyMode,
    /// Unit direction of the edge traction.
    pub load_direction: [f64; 2],
    pub load_magnitude: f64,
    pub thickness: f64,
    pub domain_origin: [f64; 2],
    pub domain_lengths: [f64; 2],
    pub epsilon: f64,
    pub delta: f64,
    pub nu: f64,
    pub e_inclusion: f64,
    pub e_matrix: f64,
    pub side_fraction: f64,
    pub mesh_file: Option<PathBuf>,
    pub h1_scale: f64,
    pub macro_grid: (usize, usize),
    pub micro_l: usize,
    pub macro_schedule: Vec<(usize, usize)>,
    pub micro_schedule: Vec<usize>,
    pub reference_macro: (usize, usize),
    pub reference_micro: usize,
    pub refine_norm: RefinementNorm,
    pub refine_macro: Vec<usize>,
    pub reference_refine_macro: usize,
    pub reference_tensor_l: usize,
    /// Macro evaluation point for tensors of non-uniform fields.
    pub tensor_point: [f64; 2],
    /// Physical node coordinates tracked by the recovery study.
    pub spr_node: [f64; 2],
    pub out_dir: PathBuf,
    pub write_vtk: bool,
    /// (element, quadrature point) for a reconstructed micro field snapshot.
    pub vtk_micro: Option<(usize, usize)>,
}

impl StudyConfig {
    /// Benchmark defaults; every value a config file may override.
    pub fn defaults(benchmark: BenchmarkId) -> Self {
        let mut cfg = StudyConfig {
            benchmark,
            mode: AssemblyMode::Transfer,
            load_direction: [0.0, -1.0],
            load_magnitude: 1.0,
            thickness: 100.0,
            domain_origin: [0.0, 0.0],
            domain_lengths: [5000.0, 1000.0],
            epsilon: 5.0,
            delta: 5.0,
            nu: 0.2,
            e_inclusion: 100000.0,
            e_matrix: 40000.0,
            side_fraction: 0.25,
            mesh_file: None,
            h1_scale: 1.0e-6,
            macro_grid: (50, 10),
            micro_l: 32,
            macro_schedule: vec![(50, 10), (100, 20), (200, 40), (400, 80)],
            micro_schedule: vec![16, 32, 64, 128],
            reference_macro: (800, 160),
            reference_micro: 256,
            refine_norm: RefinementNorm::H1,
            refine_macro: vec![16, 64, 144, 256, 576],
            reference_refine_macro: 1152,
            reference_tensor_l: 512,
            tensor_point: [0.25, 0.25],
            spr_node: [2400.0, 400.0],
            out_dir: PathBuf::from("out"),
            write_vtk: false,
            vtk_micro: None,
        };
        match benchmark {
            BenchmarkId::BeamInclusion => {}
            BenchmarkId::PlateLaminate => {
                cfg.thickness = 0.1;
                cfg.domain_origin = [-0.5, -0.5];
                cfg.domain_lengths = [1.0, 1.0];
                cfg.epsilon = 0.005;
                cfg.delta = 0.005;
                cfg.h1_scale = 1.0;
                cfg.macro_grid = (20, 20);
                cfg.micro_l = 20;
                cfg.macro_schedule = vec![(20, 20), (40, 40), (80, 80), (160, 160)];
                cfg.micro_schedule = vec![16, 32, 64, 128];
                cfg.reference_macro = (320, 320);
                cfg.spr_node = [0.0, 0.0];
            }
            BenchmarkId::PlateNonuniform => {
                cfg.thickness = 0.1;
                cfg.domain_origin = [-0.5, -0.5];
                cfg.domain_lengths = [1.0, 1.0];
                cfg.epsilon = 0.005;
                cfg.delta = 0.005;
                cfg.nu = 0.3;
                cfg.load_magnitude = 0.01;
                cfg.h1_scale = 1.0;
                cfg.macro_grid = (20, 20);
                cfg.micro_l = 20;
                cfg.macro_schedule = vec![(20, 20), (40, 40), (80, 80)];
                cfg.micro_schedule = vec![20, 40, 80];
                cfg.reference_macro = (160, 160);
                cfg.reference_micro = 160;
                cfg.reference_tensor_l = 320;
                cfg.spr_node = [0.0, 0.0];
            }
            BenchmarkId::ImportedRve => {
                cfg.epsilon = 28.5;
                cfg.delta = 28.5;
                cfg.macro_grid = (50, 10);
                cfg.micro_l = 0;
            }
        }
        cfg
    }

    pub fn from_text(text: &str, base_dir: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let raw = RawConfig::parse(text)?;
        let benchmark = match raw.get("benchmark.id") {
            Some(s) => BenchmarkId::parse(s)?,
            None => BenchmarkId::BeamInclusion,
        };
        let mut cfg = Self::defaults(benchmark);

        let f64_key = |raw: &RawConfig, path: &str, slot: &mut f64| -> Result<(), ConfigError> {
            if let Some(s) = raw.get(path) {
                *slot = s.parse().map_err(|_| err(path, format!("invalid number `{s}`")))?;
            }
            Ok(())
        };
        let usize_key = |raw: &RawConfig, path: &str, slot: &mut usize| -> Result<(), ConfigError> {
            if let Some(s) = raw.get(path) {
                *slot = s.parse().map_err(|_| err(path, format!("invalid count `{s}`")))?;
            }
            Ok(())
        };

        if let Some(s) = raw.get("benchmark.mode") {
            cfg.mode = match s {
                "transfer" => AssemblyMode::Transfer,
                "tensor" => AssemblyMode::Tensor,
                other => return Err(err("benchmark.mode", format!("unknown mode `{other}`"))),
            };
        }
        if let Some(s) = raw.get("benchmark.load_direction") {
            cfg.load_direction = match s {
                "+x" => [1.0, 0.0],
                "-x" => [-1.0, 0.0],
                "+y" => [0.0, 1.0],
                "-y" => [0.0, -1.0],
                other => {
                    return Err(err(
                        "benchmark.load_direction",
                        format!("expected one of +x -x +y -y, got `{other}`"),
                    ))
                }
            };
        }
        f64_key(&raw, "benchmark.load", &mut cfg.load_magnitude)?;
        f64_key(&raw, "benchmark.thickness", &mut cfg.thickness)?;
        f64_key(&raw, "material.epsilon", &mut cfg.epsilon)?;
        // delta follows epsilon unless overridden
        cfg.delta = cfg.epsilon;
        f64_key(&raw, "material.delta", &mut cfg.delta)?;
        f64_key(&raw, "material.nu", &mut cfg.nu)?;
        f64_key(&raw, "material.e_inclusion", &mut cfg.e_inclusion)?;
        f64_key(&raw, "material.e_matrix", &mut cfg.e_matrix)?;
        f64_key(&raw, "material.side_fraction", &mut cfg.side_fraction)?;
        if let Some(s) = raw.get("material.mesh_file") {
            let p = PathBuf::from(s);
            cfg.mesh_file = Some(if p.is_absolute() { p } else { base_dir.join(p) });
        }
        f64_key(&raw, "output.h1_scale", &mut cfg.h1_scale)?;
        let had_nx = raw.entries.contains_key("mesh.macro_nx");
        usize_key(&raw, "mesh.macro_nx", &mut cfg.macro_grid.0)?;
        if raw.entries.contains_key("mesh.macro_ny") {
            usize_key(&raw, "mesh.macro_ny", &mut cfg.macro_grid.1)?;
        } else if had_nx && cfg.domain_lengths[0] == cfg.domain_lengths[1] {
            // square domains default to square grids
            cfg.macro_grid.1 = cfg.macro_grid.0;
        }
        usize_key(&raw, "mesh.micro_l", &mut cfg.micro_l)?;
        if let Some(s) = raw.get("mesh.macro_schedule") {
            cfg.macro_schedule = parse_grid_list("mesh.macro_schedule", s)?;
        }
        if let Some(s) = raw.get("mesh.micro_schedule") {
            cfg.micro_schedule = parse_usize_list("mesh.micro_schedule", s)?;
        }
        if let Some(s) = raw.get("mesh.reference_macro") {
            cfg.reference_macro = parse_grid("mesh.reference_macro", s)?;
        }
        usize_key(&raw, "mesh.reference_micro", &mut cfg.reference_micro)?;
        if let Some(s) = raw.get("mesh.refine_norm") {
            cfg.refine_norm = match s {
                "L2" | "l2" => RefinementNorm::L2,
                "H1" | "h1" => RefinementNorm::H1,
                other => return Err(err("mesh.refine_norm", format!("expected L2 or H1, got `{other}`"))),
            };
        }
        if let Some(s) = raw.get("mesh.refine_macro") {
            cfg.refine_macro = parse_usize_list("mesh.refine_macro", s)?;
        }
        usize_key(&raw, "mesh.reference_refine_macro", &mut cfg.reference_refine_macro)?;
        usize_key(&raw, "mesh.reference_tensor_l", &mut cfg.reference_tensor_l)?;
        if let Some(s) = raw.get("mesh.tensor_point") {
            cfg.tensor_point = parse_point("mesh.tensor_point", s)?;
        }
        if let Some(s) = raw.get("mesh.spr_node") {
            cfg.spr_node = parse_point("mesh.spr_node", s)?;
        }
        if let Some(s) = raw.get("output.dir") {
            cfg.out_dir = PathBuf::from(s);
        }
        if let Some(s) = raw.get("output.write_vtk") {
            cfg.write_vtk = parse_bool("output.write_vtk", s)?;
        }
        if let Some(s) = raw.get("output.vtk_micro") {
            let p = parse_point("output.vtk_micro", s)?;
            cfg.vtk_micro = Some((p[0] as usize, p[1] as usize));
        }
        cfg.validate()?;
        Ok((cfg, raw.unknown_keys()))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(path.display().to_string(), format!("cannot read: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let strictly_increasing = |v: &[usize]| v.windows(2).all(|w| w[1] > w[0]);
        if !strictly_increasing(&self.micro_schedule) {
            return Err(err("mesh.micro_schedule", "schedule must be strictly increasing"));
        }
        if !self.macro_schedule.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1) {
            return Err(err("mesh.macro_schedule", "schedule must be strictly increasing"));
        }
        if !strictly_increasing(&self.refine_macro) {
            return Err(err("mesh.refine_macro", "schedule must be strictly increasing"));
        }
        if self.benchmark == BenchmarkId::ImportedRve && self.mesh_file.is_none() {
            return Err(err("material.mesh_file", "imported-rve requires a cell mesh file"));
        }
        if !(self.epsilon > 0.0 && self.delta > 0.0) {
            return Err(err("material.epsilon", "cell sizes must be positive"));
        }
        Ok(())
    }
}

fn parse_bool(path: &str, s: &str) -> Result<bool, ConfigError> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(err(path, format!("expected a boolean, got `{other}`"))),
    }
}

fn parse_usize_list(path: &str, s: &str) -> Result<Vec<usize>, ConfigError> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| err(path, format!("invalid count `{t}`"))))
        .collect()
}

fn parse_grid(path: &str, s: &str) -> Result<(usize, usize), ConfigError> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| err(path, format!("expected `<nx>x<ny>`, got `{s}`")))?;
    Ok((
        a.trim().parse().map_err(|_| err(path, format!("invalid count `{a}`")))?,
        b.trim().parse().map_err(|_| err(path, format!("invalid count `{b}`")))?,
    ))
}

fn parse_grid_list(path: &str, s: &str) -> Result<Vec<(usize, usize)>, ConfigError> {
    s.split(',').map(|t| parse_grid(path, t.trim())).collect()
}

fn parse_point(path: &str, s: &str) -> Result<[f64; 2], ConfigError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(err(path, format!("expected `<x>,<y>`, got `{s}`")));
    }
    Ok([
        parts[0].parse().map_err(|_| err(path, format!("invalid number `{}`", parts[0])))?,
        parts[1].parse().map_err(|_| err(path, format!("invalid number `{}`", parts[1])))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_values() {
        let beam = StudyConfig::defaults(BenchmarkId::BeamInclusion);
        assert_eq!(beam.domain_lengths, [5000.0, 1000.0]);
        assert_eq!(beam.thickness, 100.0);
        assert_eq!(beam.epsilon, 5.0);
        assert_eq!(beam.e_inclusion / beam.e_matrix, 2.5);
        let plate = StudyConfig::defaults(BenchmarkId::PlateLaminate);
        assert_eq!(plate.domain_lengths, [1.0, 1.0]);
        assert_eq!(plate.epsilon, 0.005);
        assert_eq!(plate.thickness, 0.1);
        let nonuni = StudyConfig::defaults(BenchmarkId::PlateNonuniform);
        assert_eq!(nonuni.load_magnitude, 0.01);
        assert_eq!(nonuni.nu, 0.3);
    }

    #[test]
    fn file_overrides_and_unknown_keys() {
        let text = "\
[benchmark]
id = plate-laminate
mode = tensor
load_direction = +x

[mesh]
macro_nx = 40
micro_l = 16
micro_schedule = 8, 16, 32

[output]
write_vtk = true
mystery = 7
";
        let (cfg, unknown) = StudyConfig::from_text(text, Path::new(".")).unwrap();
        assert_eq!(cfg.benchmark, BenchmarkId::PlateLaminate);
        assert_eq!(cfg.mode, AssemblyMode::Tensor);
        assert_eq!(cfg.load_direction, [1.0, 0.0]);
        assert_eq!(cfg.macro_grid, (40, 40));
        assert_eq!(cfg.micro_l, 16);
        assert_eq!(cfg.micro_schedule, vec![8, 16, 32]);
        assert!(cfg.write_vtk);
        assert_eq!(unknown, vec!["output.mystery".to_string()]);
    }

    #[test]
    fn errors_carry_key_paths() {
        let e = StudyConfig::from_text("[mesh]\nmicro_schedule = 8, nope\n", Path::new("."))
            .unwrap_err();
        assert!(e.to_string().contains("mesh.micro_schedule"), "{e}");
        let e = StudyConfig::from_text("[mesh]\nmicro_schedule = 32, 16\n", Path::new("."))
            .unwrap_err();
        assert!(e.to_string().contains("strictly increasing"), "{e}");
        let e = StudyConfig::from_text("[benchmark]\nid = imported-rve\n", Path::new("."))
            .unwrap_err();
        assert!(e.to_string().contains("mesh_file"), "{e}");
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(RawConfig::parse("[a]\nkey value\n").is_err());
        assert!(RawConfig::parse("[a]\nk = 1\nk = 2\n").is_err());
    }
}
