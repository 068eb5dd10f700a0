//! Command-line front end. `main.rs` only parses arguments and maps the
//! outcome to an exit code.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::chain::write_regime_csv;
use crate::config::{Overrides, RunConfig};
use crate::error::Error;
use crate::mc;
use crate::model::{ModelSpec, ValidationOptions};
use crate::rng::StreamKey;
use crate::scheme::{write_path_csv, Grid};
use crate::truncation::TruncationPolicy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hybrid-tem", version, about = "Truncated Euler-Maruyama simulation of a regime-switching jump rate model with delay")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file; the built-in two-regime example if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub no_inverse_drift: bool,
    /// q in psi(delta) = delta^-q.
    #[arg(long, global = true)]
    pub psi_exponent: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check model assumptions and audit the truncation policy.
    Validate,
    /// Simulate one path (path index 0).
    Simulate {
        /// Binary noise record for replay.
        #[arg(long)]
        noise_out: Option<PathBuf>,
        /// Regime trajectory CSV.
        #[arg(long)]
        regimes_out: Option<PathBuf>,
        /// Plot-ready `t,x` CSV of the step process on [0, T].
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
    /// Strong error against a fine reference on coupled noise.
    Converge,
    /// Sup distance between the truncated and the backward scheme.
    CompareSchemes,
    PriceBond,
    PriceBarrier,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidModel(_) | Error::InvalidGenerator(_) | Error::Grid(_) | Error::Domain(_) => {
                EXIT_CONFIG
            }
            Error::Io(_) => EXIT_IO,
            _ => EXIT_NUMERICAL,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

struct Context {
    cfg: RunConfig,
    spec: ModelSpec,
}

impl Context {
    fn policy(&self) -> Result<TruncationPolicy, Failure> {
        self.cfg.policy(&self.spec).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
    }
}

pub fn load_config(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::two_regime_example(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        threads: common.threads,
        no_inverse_drift: common.no_inverse_drift,
        psi_exponent: common.psi_exponent,
    });
    Ok(cfg)
}

/// Runs one command, writing its primary output to `--out` or stdout.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    let spec = cfg.model_spec()?;
    let ctx = Context { cfg, spec };
    let threads = ctx.cfg.simulation.threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot start {threads} threads: {e}")))?;

    let mut out = String::new();
    let result = pool.install(|| match &cli.command {
        Command::Validate => cmd_validate(&ctx, &mut out),
        Command::Simulate {
            noise_out,
            regimes_out,
            plot_out,
        } => cmd_simulate(&ctx, &mut out, noise_out.as_deref(), regimes_out.as_deref(), plot_out.as_deref()),
        Command::Converge => cmd_converge(&ctx, &mut out),
        Command::CompareSchemes => cmd_compare(&ctx, &mut out),
        Command::PriceBond => cmd_price(&ctx, &mut out, false),
        Command::PriceBarrier => cmd_price(&ctx, &mut out, true),
    });
    let result = result.map_err(|e| save_replay(e, cli.common.out.as_deref()));
    // validation reports are written even when they fail
    if result.is_ok() || matches!(&result, Err(f) if f.code == EXIT_VALIDATION) {
        emit(cli.common.out.as_deref(), &out)?;
    }
    result
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut s = std::io::stdout().lock();
            s.write_all(text.as_bytes())?;
            s.flush()?;
        }
    }
    Ok(())
}

/// Writes the replay record of a failing path next to the output.
fn save_replay(e: CmdError, out: Option<&Path>) -> Failure {
    let CmdError(failure, err) = e;
    let Some(err) = err else { return failure };
    let (index, record) = match &err {
        Error::NonFinite { path_index, record, .. } | Error::OnPath { path_index, record, .. } => (*path_index, record),
        _ => return Failure::from(err),
    };
    let base = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("hybrid-tem"));
    let path = PathBuf::from(format!("{}.path{index}.noise", base.display()));
    let mut message = err.to_string();
    match File::create(&path).and_then(|f| record.write_to(BufWriter::new(f))) {
        Ok(()) => {
            let _ = write!(message, " (noise record written to {})", path.display());
        }
        Err(io) => {
            let _ = write!(message, " (could not write noise record: {io})");
        }
    }
    Failure::new(EXIT_NUMERICAL, message)
}

struct CmdError(Failure, Option<Error>);

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError(Failure::new(0, String::new()), Some(e))
    }
}

impl From<Failure> for CmdError {
    fn from(f: Failure) -> Self {
        CmdError(f, None)
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError(e.into(), None)
    }
}

impl From<std::fmt::Error> for CmdError {
    fn from(_: std::fmt::Error) -> Self {
        CmdError(Failure::new(EXIT_IO, "formatting failed"), None)
    }
}

type CmdResult = Result<(), CmdError>;

fn header(ctx: &Context, out: &mut String, command: &str) -> std::fmt::Result {
    writeln!(out, "# hybrid-tem {} {command}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# resolved config:")?;
    for line in ctx.cfg.resolved_toml().lines() {
        if line.is_empty() {
            writeln!(out, "#")?;
        } else {
            writeln!(out, "#   {line}")?;
        }
    }
    Ok(())
}

fn grid_header(out: &mut String, label: &str, g: &Grid) -> std::fmt::Result {
    writeln!(
        out,
        "# grid{label}: delta = {} (requested {}), M = {}, K = {}, T = {} (requested {}){}",
        g.delta,
        g.requested_delta,
        g.delay_steps,
        g.num_steps,
        g.horizon(),
        g.requested_horizon,
        if g.was_snapped() { ", snapped" } else { "" }
    )
}

fn policy_header(out: &mut String, policy: &TruncationPolicy) -> std::fmt::Result {
    let mu = policy.mu();
    writeln!(
        out,
        "# truncation: mu(u) = {} u^{}, psi(delta) = delta^-{}, delta* = {}",
        mu.scale,
        mu.exponent,
        policy.psi_exponent(),
        policy.delta_star()
    )?;
    for w in policy.warnings() {
        writeln!(out, "# warning: {w}")?;
    }
    Ok(())
}

fn cmd_validate(ctx: &Context, out: &mut String) -> CmdResult {
    header(ctx, out, "validate")?;
    let report = ctx.spec.validate_assumptions(&ValidationOptions::default());
    writeln!(out, "assumptions:")?;
    write!(out, "{report}")?;
    let mut ok = report.passed();
    match ctx.cfg.policy(&ctx.spec) {
        Ok(policy) => {
            let mut deltas = vec![ctx.cfg.simulation.delta];
            deltas.extend(&ctx.cfg.experiment.deltas);
            deltas.push(ctx.cfg.experiment.reference_delta);
            deltas.extend(&ctx.cfg.experiment.compare_deltas);
            let mut seen = Vec::new();
            deltas.retain(|d| {
                let fresh = !seen.contains(d);
                seen.push(*d);
                fresh
            });
            let audit = policy.audit(&ctx.spec, &deltas);
            writeln!(out, "truncation policy:")?;
            write!(out, "{audit}")?;
            for w in policy.warnings() {
                writeln!(out, "[WARN] {w}")?;
            }
            let sim_ok = ctx.cfg.simulation.delta <= policy.delta_star();
            writeln!(
                out,
                "[{}] simulation step {} <= delta* = {}",
                if sim_ok { "PASS" } else { "FAIL" },
                ctx.cfg.simulation.delta,
                policy.delta_star()
            )?;
            ok &= audit.passed() && sim_ok;
        }
        Err(e) => {
            writeln!(out, "[FAIL] truncation policy: {e}")?;
            ok = false;
        }
    }
    writeln!(out, "result: {}", if ok { "PASS" } else { "FAIL" })?;
    if ok {
        Ok(())
    } else {
        Err(Failure::new(EXIT_VALIDATION, "validation failed").into())
    }
}

fn write_to_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CmdResult {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(
    ctx: &Context,
    out: &mut String,
    noise_out: Option<&Path>,
    regimes_out: Option<&Path>,
    plot_out: Option<&Path>,
) -> CmdResult {
    let policy = ctx.policy()?;
    let grid = ctx.cfg.grid(&ctx.spec)?;
    let key = StreamKey::new(ctx.cfg.simulation.seed, 0);
    let (path, noise) = mc::run_tem_path(&ctx.spec, &policy, grid, key)?;

    header(ctx, out, "simulate")?;
    grid_header(out, "", &grid)?;
    policy_header(out, &policy)?;
    let mut buf = Vec::new();
    write_path_csv(&mut buf, &path, &noise)?;
    out.push_str(std::str::from_utf8(&buf).expect("csv is utf-8"));

    if let Some(p) = noise_out {
        let record = crate::noise::NoiseRecord {
            seed: key.master_seed,
            path_index: key.path_index,
            delay_steps: grid.delay_steps as u64,
            lambda: ctx.spec.lambda,
            noise: noise.clone(),
        };
        write_to_file(p, |w| record.write_to(w))?;
    }
    if let Some(p) = regimes_out {
        write_to_file(p, |w| write_regime_csv(w, &noise.regimes, grid.delta))?;
    }
    if let Some(p) = plot_out {
        write_to_file(p, |w| {
            writeln!(w, "t,x")?;
            for (k, x) in path.forward().iter().enumerate() {
                writeln!(w, "{},{x}", k as f64 * grid.delta)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_converge(ctx: &Context, out: &mut String) -> CmdResult {
    let policy = ctx.policy()?;
    let e = &ctx.cfg.experiment;
    let s = &ctx.cfg.simulation;
    let report = mc::strong_error(
        &ctx.spec,
        &policy,
        &e.deltas,
        e.reference_delta,
        s.horizon,
        e.p,
        s.num_paths,
        s.seed,
    )?;
    header(ctx, out, "converge")?;
    let reference = Grid::snap(ctx.spec.tau, e.reference_delta, s.horizon)?;
    grid_header(out, " (reference)", &reference)?;
    policy_header(out, &policy)?;
    writeln!(out, "delta,error,std_error")?;
    for ((d, err), se) in report.step_sizes.iter().zip(&report.errors).zip(&report.std_errors) {
        writeln!(out, "{d},{err},{se}")?;
    }
    match report.fitted_order {
        Some(o) => writeln!(out, "# fitted_order = {o}")?,
        None => writeln!(out, "# fitted_order = none (fewer than two nonzero errors)")?,
    }
    Ok(())
}

fn cmd_compare(ctx: &Context, out: &mut String) -> CmdResult {
    let policy = ctx.policy()?;
    let s = &ctx.cfg.simulation;
    let mut rows = Vec::new();
    for &d in &ctx.cfg.experiment.compare_deltas {
        let grid = Grid::snap(ctx.spec.tau, d, s.horizon)?;
        rows.push((grid, mc::scheme_comparison(&ctx.spec, &policy, grid, s.num_paths, s.seed)?));
    }
    header(ctx, out, "compare-schemes")?;
    for (g, _) in &rows {
        grid_header(out, "", g)?;
    }
    policy_header(out, &policy)?;
    writeln!(out, "delta,mean,std_error,ci_low,ci_high,max,q05,q25,q50,q75,q95,num_paths")?;
    for (_, c) in &rows {
        let (lo, hi) = c.ci95();
        write!(out, "{},{},{},{lo},{hi},{}", c.delta, c.mean, c.std_error, c.max)?;
        for (_, q) in &c.quantiles {
            write!(out, ",{q}")?;
        }
        writeln!(out, ",{}", c.num_paths)?;
    }
    Ok(())
}

fn cmd_price(ctx: &Context, out: &mut String, barrier: bool) -> CmdResult {
    let policy = ctx.policy()?;
    let grid = ctx.cfg.grid(&ctx.spec)?;
    let s = &ctx.cfg.simulation;
    let e = &ctx.cfg.experiment;
    let (name, r) = if barrier {
        (
            "price-barrier",
            mc::barrier_option_price(&ctx.spec, &policy, grid, e.strike, e.barrier, s.num_paths, s.seed)?,
        )
    } else {
        ("price-bond", mc::bond_price(&ctx.spec, &policy, grid, s.num_paths, s.seed)?)
    };
    header(ctx, out, name)?;
    grid_header(out, "", &grid)?;
    policy_header(out, &policy)?;
    writeln!(out, "estimate,std_error,ci_low,ci_high,num_paths")?;
    writeln!(out, "{},{},{},{},{}", r.estimate, r.std_error, r.ci_low, r.ci_high, r.num_paths)?;
    Ok(())
}
