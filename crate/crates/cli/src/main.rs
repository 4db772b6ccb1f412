//! `combsim`: simulate operating points, threshold curves, sweeps and comb
//! classification from the command line.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use combsim::comb::{bessel_comb, classify, default_tolerance, write_classification_json, DEFAULT_KMAX};
use combsim::config::{parse_power_range, parse_range, ConfigFile, EffectiveConfig};
use combsim::dynamics::{write_window_binary, write_window_csv};
use combsim::pipeline::analyze_point;
use combsim::spectral::{read_teeth_json, write_teeth_json};
use combsim::stability::{threshold_curve, DEFAULT_BRACKET_DBM};
use combsim::sweep::{run_sweep, write_outputs, SweepPlan};
use combsim::PumpCondition;

#[derive(Parser)]
#[command(name = "combsim", version, about = "Two-mode electromechanical frequency-comb simulator")]
struct Cli {
    /// Parameter preset: paper-device or desk-scale.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Settle one operating point and write trajectory, spectrum and classification.
    Simulate(SimulateArgs),
    /// Instability threshold over a detuning grid, as CSV.
    Threshold(ThresholdArgs),
    /// Detuning-power grid sweep.
    Sweep(SweepArgs),
    /// Classify an external tooth list.
    Classify(ClassifyArgs),
    /// Analytic Bessel comb of a prescribed mechanical cycle.
    Analytic(AnalyticArgs),
}

#[derive(Args)]
struct PointArgs {
    /// Pump detuning in units of the first mechanical frequency.
    #[arg(long, allow_hyphen_values = true)]
    detuning: Option<f64>,
    /// Source power (dBm).
    #[arg(long, allow_hyphen_values = true)]
    power: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Csv,
    Binary,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, default_value = "simulate-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
    trace_format: TraceFormat,
}

#[derive(Args)]
struct ThresholdArgs {
    /// start:stop:count in units of the first mechanical frequency.
    #[arg(long, default_value = "0.4:1.6:25")]
    detuning: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// start:stop:count in units of the first mechanical frequency.
    #[arg(long)]
    detuning: Option<String>,
    /// start:stop:step in dBm.
    #[arg(long, allow_hyphen_values = true)]
    power: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// JSON array of {freq_hz, power_dbm, detuning_hz}.
    #[arg(long)]
    teeth: PathBuf,
    /// First mechanical frequency (Hz).
    #[arg(long)]
    fm1: f64,
    /// Second mechanical frequency (Hz).
    #[arg(long)]
    fm2: f64,
    /// Lattice tolerance (Hz); 1e-3 fm1 by default.
    #[arg(long)]
    tol_hz: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_KMAX)]
    kmax: i32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(flatten)]
    point: PointArgs,
    /// Modulation index of the prescribed cycle.
    #[arg(long)]
    beta: f64,
    /// Mechanical mode carrying the cycle (1 or 2).
    #[arg(long, default_value_t = 1)]
    mode: usize,
    #[arg(long, default_value_t = 8)]
    kmax: i32,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn num_err(e: impl std::fmt::Display) -> Failure {
    Failure::Numeric(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| num_err(format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| num_err(format!("{}: {e}", path.display())))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

struct Context {
    config: EffectiveConfig,
    file: ConfigFile,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let file = match &cli.config {
            Some(p) => ConfigFile::load(p).map_err(config_err)?,
            None => ConfigFile::default(),
        };
        let config = EffectiveConfig::resolve(cli.preset.as_deref(), Some(&file)).map_err(config_err)?;
        Ok(Self { config, file })
    }

    fn pump(&self, args: &PointArgs) -> Result<PumpCondition, Failure> {
        let detuning = args.detuning.or(self.file.pump.detuning).ok_or_else(|| config_err("pump detuning not given"))?;
        let power = args.power.or(self.file.pump.power_dbm).ok_or_else(|| config_err("pump power not given"))?;
        if !(detuning.is_finite() && power.is_finite()) {
            return Err(config_err("pump detuning and power must be finite"));
        }
        let p = &self.config.params;
        Ok(PumpCondition::new(p, detuning * p.modes[0].omega_m, self.config.device_dbm(power)))
    }
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), Failure> {
    let pump = ctx.pump(&args.point)?;
    let params = &ctx.config.params;
    let r = analyze_point(params, &pump, &ctx.config.pipeline).map_err(num_err)?;
    let dir = &args.out;
    let tail = r.trajectory.dense_last_window.as_ref().ok_or_else(|| num_err("no tail recorded"))?;
    match args.trace_format {
        TraceFormat::Csv => write_window_csv(&mut create(&dir.join("trajectory.csv"))?, tail).map_err(num_err)?,
        TraceFormat::Binary => write_window_binary(&mut create(&dir.join("trajectory.bin"))?, tail).map_err(num_err)?,
    }
    r.spectrum.write_csv(&mut create(&dir.join("spectrum.csv"))?).map_err(num_err)?;
    write_teeth_json(&mut create(&dir.join("teeth.json"))?, &r.teeth).map_err(num_err)?;
    write_classification_json(&mut create(&dir.join("classification.json"))?, &r.classification).map_err(num_err)?;
    let summary = serde_json::json!({
        "format_version": 1,
        "config_sha256": ctx.config.hash(),
        "config": ctx.config,
        "device_dbm": pump.p_d_dbm,
        "delta_dc_hz": pump.delta_dc / TAU,
        "max_growth_per_s": r.max_growth,
        "branch": r.branch,
        "attractor": r.report,
        "lattice_freqs_hz": r.lattice_freqs,
        "tol_hz": r.tol_hz,
        "regime": r.classification.regime,
        "competition": r.competition,
    });
    let mut w = create(&dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(num_err)?;
    writeln!(w).map_err(num_err)?;
    println!(
        "{} {} teeth, dominant spacing {} Hz, attractor {}",
        r.classification.regime,
        r.teeth.len(),
        r.classification.dominant_spacing,
        r.report.kind
    );
    Ok(())
}

fn threshold(ctx: &Context, args: &ThresholdArgs) -> Result<(), Failure> {
    let grid = parse_range(&args.detuning).and_then(|g| g.points()).map_err(config_err)?;
    let p = &ctx.config.params;
    let rad: Vec<f64> = grid.iter().map(|d| d * p.modes[0].omega_m).collect();
    let mut curve = threshold_curve(p, &rad, DEFAULT_BRACKET_DBM).map_err(num_err)?;
    curve.threshold_dbm.iter_mut().for_each(|t| *t += ctx.config.line_attenuation_db);
    let mut w = output(&args.out)?;
    curve.write_csv(&mut w).map_err(num_err)?;
    w.flush().map_err(num_err)
}

fn sweep(ctx: &Context, args: &SweepArgs) -> Result<(), Failure> {
    let s = &ctx.file.sweep;
    let detunings = match &args.detuning {
        Some(t) => parse_range(t).and_then(|g| g.points()),
        None => s.detuning.as_ref().ok_or_else(|| config_err("no detuning grid"))?.points(),
    }
    .map_err(config_err)?;
    let powers = match &args.power {
        Some(t) => parse_power_range(t).and_then(|g| g.points()),
        None => s.power.ok_or_else(|| config_err("no power grid"))?.points(),
    }
    .map_err(config_err)?;
    let parallelism = args
        .parallelism
        .or(s.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = args.out.clone().or_else(|| s.output_dir.clone()).unwrap_or_else(|| PathBuf::from("sweep-out"));
    let plan = SweepPlan { config: ctx.config.clone(), detunings, powers_dbm: powers, parallelism, output_dir: Some(out.clone()) };
    plan.validate().map_err(config_err)?;
    let result = run_sweep(&plan).map_err(num_err)?;
    let written = write_outputs(&result, &out).map_err(|e| {
        eprintln!("partial results: {} of {} points computed, not all files written", result.records.len(), result.records.len());
        num_err(e)
    })?;
    let failed = result.records.iter().filter(|r| r.error.is_some()).count();
    for p in written {
        println!("{}", p.display());
    }
    if failed > 0 {
        eprintln!("{failed} point(s) failed; see the error column");
    }
    Ok(())
}

fn classify_cmd(ctx: &Context, args: &ClassifyArgs) -> Result<(), Failure> {
    let _ = ctx;
    let file = File::open(&args.teeth).map_err(|e| config_err(format!("{}: {e}", args.teeth.display())))?;
    let teeth = read_teeth_json(std::io::BufReader::new(file)).map_err(|e| config_err(format!("{}: {e}", args.teeth.display())))?;
    let tol = args.tol_hz.unwrap_or_else(|| default_tolerance(0.0, args.fm1));
    let c = classify(&teeth, args.fm1, args.fm2, tol, args.kmax).map_err(|e| match e {
        combsim::CombError::InvalidArgument(m) => config_err(m),
        e => num_err(e),
    })?;
    let mut w = output(&args.out)?;
    write_classification_json(&mut w, &c).map_err(num_err)?;
    w.flush().map_err(num_err)?;
    if args.out.is_some() {
        println!("{}", c.regime);
    }
    Ok(())
}

fn analytic(ctx: &Context, args: &AnalyticArgs) -> Result<(), Failure> {
    if !(args.mode == 1 || args.mode == 2) {
        return Err(config_err("mode must be 1 or 2"));
    }
    if !(args.beta >= 0.0 && args.beta.is_finite()) {
        return Err(config_err("beta must be non-negative"));
    }
    let pump = ctx.pump(&args.point)?;
    let p = &ctx.config.params;
    let j = args.mode - 1;
    let amp = args.beta * p.unit_modulation_amplitude(j);
    let comb = bessel_comb(p, &pump, amp, j, args.kmax).map_err(num_err)?;
    let mut w = output(&args.out)?;
    let io = |e: std::io::Error| num_err(e);
    writeln!(w, "# beta: {}", comb.modulation_index).map_err(io)?;
    writeln!(w, "k,offset_hz,re_alpha,im_alpha,abs_alpha,photons").map_err(io)?;
    for k in -args.kmax..=args.kmax {
        let a = comb.alpha(k);
        writeln!(w, "{k},{},{},{},{},{}", k as f64 * comb.mech_freq, a.re, a.im, a.norm(), a.norm_sqr()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let ctx = Context::load(cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Threshold(a) => threshold(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Classify(a) => classify_cmd(&ctx, a),
        Command::Analytic(a) => analytic(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Numeric(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
