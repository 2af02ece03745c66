use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cce_core::continuation::{monitored_metric, sweep, StopReason};
use cce_core::geometry::{curvature_samples, SliceModel};
use cce_core::io::{
    event_json, fmt_f64, parse_config, parse_profile_csv, profile_csv, solve_json, trace_csv, verification_json, write_atomic, RunConfig,
};
use cce_core::solver::{solve_bvp, SolutionProfile};
use cce_core::verification::{uniqueness_diagnostic, verify_profile};
use cce_core::CceError;
use clap::{Parser, Subcommand};

const EXIT_OK: u8 = 0;
const EXIT_SOLVER: u8 = 1;
const EXIT_FLAGGED: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cce", version, about = "Solve, continue and verify reduced Einstein ODE systems on homogeneous spheres")]
struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Initial mesh size; overrides the config.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Newton tolerance; overrides the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Concurrent solves per bisection round.
    #[arg(long, env = "CCE_THREADS", default_value_t = 1, hide = true)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the boundary-value problem for the configured data.
    Solve,
    /// Continue from round data to the configured sweep end.
    Sweep,
    /// Verify stored profiles; with two, also run the uniqueness diagnostic.
    Verify { profile: PathBuf, other: Option<PathBuf> },
    /// Write per-node plane curvatures and the verification report of a stored profile.
    Export { profile: PathBuf },
}

/// Failure with its exit code.
struct Fail(u8, String);

impl From<CceError> for Fail {
    fn from(e: CceError) -> Fail {
        let code = match e {
            CceError::Io(_) | CceError::Config { .. } | CceError::Parse(_) => EXIT_IO,
            _ => EXIT_SOLVER,
        };
        Fail(code, e.to_string())
    }
}

fn io_fail(what: &Path, e: impl std::fmt::Display) -> Fail {
    Fail(EXIT_IO, format!("{}: {e}", what.display()))
}

struct Ctx {
    cli: Cli,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn config(&self) -> Result<RunConfig, Fail> {
        let path = self.cli.config.as_ref().ok_or_else(|| Fail(EXIT_IO, "--config is required for this command".into()))?;
        let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
        let mut cfg = parse_config(&text)?;
        if let Some(g) = self.cli.grid {
            if g < 3 {
                return Err(Fail(EXIT_IO, "--grid must be at least 3".into()));
            }
            cfg.grid = g;
        }
        if let Some(t) = self.cli.tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(Fail(EXIT_IO, "--tol must be positive".into()));
            }
            cfg.tol = t;
        }
        cfg.out = Some(self.cli.out.display().to_string());
        Ok(cfg)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Fail> {
        std::fs::create_dir_all(&self.cli.out).map_err(|e| io_fail(&self.cli.out, e))?;
        let path = self.cli.out.join(name);
        write_atomic(&path, bytes).map_err(|e| io_fail(&path, e))?;
        Ok(path)
    }

    fn load(&self, path: &Path) -> Result<SolutionProfile, Fail> {
        let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
        parse_profile_csv(&text).map_err(|e| io_fail(path, e))
    }
}

fn run_solve(ctx: &Ctx) -> Result<u8, Fail> {
    let cfg = ctx.config()?;
    let bd = cfg.boundary_data()?;
    let (p, rep) = solve_bvp(&bd, &cfg.solver_options())?;
    let ver = verify_profile(&p)?;
    let hash = cfg.hash();
    ctx.write("profile.csv", &profile_csv(&p)?)?;
    ctx.write("report.json", &solve_json(&p, &rep, &ver, Some(&hash))?)?;
    if !p.converged {
        let why = rep.message.unwrap_or_else(|| "no convergence".into());
        return Err(Fail(EXIT_SOLVER, format!("solver failed: {why}")));
    }
    ctx.say(format!(
        "converged: K(0) = {}, nodes = {}, drift = {}, checks {}",
        fmt_f64(p.log_k0.exp()),
        rep.nodes,
        fmt_f64(rep.constraint_drift),
        if ver.passes() { "pass" } else { "FLAGGED" }
    ));
    for r in ver.failed() {
        eprintln!("flagged: {} (measured {}, threshold {})", r.name, fmt_f64(r.measured), fmt_f64(r.threshold));
    }
    Ok(if ver.passes() { EXIT_OK } else { EXIT_FLAGGED })
}

fn run_sweep(ctx: &Ctx) -> Result<u8, Fail> {
    let cfg = ctx.config()?;
    let plan = cfg.sweep_plan(ctx.cli.threads).ok_or_else(|| Fail(EXIT_IO, "config has no sweep_end".into()))?;
    if ctx.cli.threads == 0 {
        return Err(Fail(EXIT_IO, "CCE_THREADS must be at least 1".into()));
    }
    let tr = sweep(&plan, &cfg.solver_options())?;
    let hash = cfg.hash();
    ctx.write("trace.csv", &trace_csv(&tr)?)?;
    if let Some(ev) = &tr.event {
        ctx.write("event.json", &event_json(ev, Some(&hash))?)?;
        ctx.say(format!(
            "event: lambda in [{}, {}], witness {} at x = {}",
            fmt_f64(ev.lambda_lo.min(ev.lambda_hi)),
            fmt_f64(ev.lambda_lo.max(ev.lambda_hi)),
            ev.witness.plane,
            fmt_f64(ev.witness.x)
        ));
        if let Some(a) = &ev.annotation {
            eprintln!("event bracket: {a}");
        }
    }
    let last = tr.records.last().map_or(1.0, |r| r.lambda);
    ctx.say(format!("stop: {} after {} record(s), last lambda = {}", tr.stop.as_str(), tr.records.len(), fmt_f64(last)));
    let flagged = tr.stop == StopReason::MinStep || tr.records.iter().any(|r| !r.verified) || tr.event.as_ref().is_some_and(|e| e.annotation.is_some());
    Ok(if flagged { EXIT_FLAGGED } else { EXIT_OK })
}

fn run_verify(ctx: &Ctx, a: &Path, b: Option<&Path>) -> Result<u8, Fail> {
    let pa = ctx.load(a)?;
    let mut reports = vec![(a.display().to_string(), verify_profile(&pa)?)];
    let mut ledger = None;
    if let Some(b) = b {
        let pb = ctx.load(b)?;
        reports.push((b.display().to_string(), verify_profile(&pb)?));
        ledger = Some(uniqueness_diagnostic(&pa, &pb).map_err(|e| Fail(EXIT_IO, e.to_string()))?);
    }
    ctx.write("verification.json", &verification_json(&reports, ledger.as_ref())?)?;
    let mut ok = pa.converged;
    for (name, r) in &reports {
        ctx.say(format!("{name}: {}", if r.passes() { "pass" } else { "FLAGGED" }));
        for f in r.failed() {
            eprintln!("flagged: {name}: {} (measured {}, threshold {})", f.name, fmt_f64(f.measured), fmt_f64(f.threshold));
        }
        ok &= r.passes();
    }
    if let Some(l) = &ledger {
        let v: Vec<String> = l.variation.iter().map(|x| fmt_f64(*x)).collect();
        ctx.say(format!("variations: {}, forces zero: {}", v.join(" "), l.forces_zero));
        ok &= l.forces_zero;
    }
    Ok(if ok { EXIT_OK } else { EXIT_FLAGGED })
}

fn run_export(ctx: &Ctx, path: &Path) -> Result<u8, Fail> {
    let p = ctx.load(path)?;
    let mp = monitored_metric(&p)?;
    let model = SliceModel::for_family(p.bd.kind, p.bd.n)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Fail(EXIT_IO, e.to_string());
    let first = curvature_samples(&mp, model.as_ref(), 0)?;
    let mut header = vec!["x".to_string()];
    header.extend(first.iter().map(|s| s.plane.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for j in 0..mp.len() {
        let mut row = vec![fmt_f64(mp.x[j])];
        row.extend(curvature_samples(&mp, model.as_ref(), j)?.iter().map(|s| fmt_f64(s.value)));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Fail(EXIT_IO, e.to_string()))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
    ctx.write(&format!("{stem}.curvature.csv"), &bytes)?;
    let ver = verify_profile(&p)?;
    ctx.write(&format!("{stem}.verification.json"), &verification_json(&[(path.display().to_string(), ver.clone())], None)?)?;
    ctx.say(format!("exported {} rows, checks {}", mp.len(), if ver.passes() { "pass" } else { "FLAGGED" }));
    Ok(if ver.passes() && p.converged { EXIT_OK } else { EXIT_FLAGGED })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ctx = Ctx { cli };
    let result = match &ctx.cli.command {
        Command::Solve => run_solve(&ctx),
        Command::Sweep => run_sweep(&ctx),
        Command::Verify { profile, other } => run_verify(&ctx, profile, other.as_deref()),
        Command::Export { profile } => run_export(&ctx, profile),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
