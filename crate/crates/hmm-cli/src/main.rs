use clap::Parser;
use hmm_cli::acceptance;
use hmm_cli::config::StudyConfig;
use hmm_cli::studies::{run_study, StudyKind};
use std::path::PathBuf;
use std::process::ExitCode;

/// Two-scale finite element homogenization of 2D linear elastic solids.
#[derive(Parser)]
#[command(name = "hmm-elast", version, about)]
struct Cli {
    /// Study kind: solve | macro-conv | micro-conv | tensor-conv | spr |
    /// refine-opt | compare-fe2 | check
    kind: String,
    /// Study configuration file (key = value sections)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Compare study results against their pinned expected values; exit 2 on
    /// tolerance failure
    #[arg(long)]
    check: bool,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only run acceptance criteria whose name or number matches
    #[arg(long)]
    filter: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, String> {
    if cli.kind == "check" {
        return run_acceptance(cli.filter.as_deref());
    }
    let kind = StudyKind::parse(&cli.kind).ok_or_else(|| {
        format!(
            "unknown study kind `{}`; expected solve, macro-conv, micro-conv, tensor-conv, spr, refine-opt, compare-fe2 or check",
            cli.kind
        )
    })?;
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| format!("`{}` needs --config <file>", cli.kind))?;
    let (mut cfg, unknown) = StudyConfig::load(config_path).map_err(|e| e.to_string())?;
    for key in unknown {
        eprintln!("warning: unknown config key `{key}` ignored");
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let output = run_study(&cfg, kind).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", cfg.out_dir.display()))?;
    let write = |name: &str, content: &str| -> Result<(), String> {
        let path = cfg.out_dir.join(name);
        std::fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
    };
    write("study.csv", &output.csv)?;
    write("report.txt", &output.report)?;
    for (name, content) in &output.extra_csv {
        write(name, content)?;
    }
    for (name, content) in &output.vtk {
        write(name, content)?;
    }
    println!("{} study written to {}", kind.name(), cfg.out_dir.display());
    if cli.check {
        let mut failed = false;
        for check in &output.checks {
            println!("{}", check.render());
            failed |= !check.pass;
        }
        if output.checks.is_empty() {
            println!("no pinned expected values for this configuration");
        }
        if failed {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_acceptance(filter: Option<&str>) -> Result<ExitCode, String> {
    let outcomes = acceptance::run_all(filter).map_err(|e| e.to_string())?;
    if outcomes.is_empty() {
        return Err(format!("no acceptance criterion matches `{}`", filter.unwrap_or("")));
    }
    let mut failed = false;
    for outcome in &outcomes {
        println!("{}", outcome.summary());
        for line in &outcome.lines {
            println!("    {line}");
        }
        failed |= !outcome.passed;
    }
    Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
