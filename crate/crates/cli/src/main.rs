use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nilmdp::bounds::{
    c_of_p, hierarchical_bounds, lower_bound_one_shot, multi_shot_bounds, one_shot_bounds,
    upper_bound_one_shot, BoundReport, MultiShotInputs, MultiShotVariant, RipInterpretation,
};
use nilmdp::data::{
    aggregate, binarize, estimate_powers, max_switches, read_appliance_csv, read_meter_csv, read_states_csv,
    sparsity, synthesize, write_appliance_csv, write_meter_csv, write_states_csv, SynthConfig,
};
use nilmdp::experiment::{
    read_config_file, render_svg, run_sweep, write_rows_csv, Mode, SweepConfig, CONFIG_KEYS,
};
use nilmdp::hierarchy::{decompose, hierarchical_infer};
use nilmdp::inference::{accuracy_multi_shot, multi_shot_infer, one_shot_infer_saturating};
use nilmdp::mechanisms::inject_noise;
use nilmdp::{AppliancePowerVector, DpConfig, Mechanism, SensitivityParams, StateMatrix, StateVector};

/// Load disaggregation under differential-privacy noise.
#[derive(Parser)]
#[command(name = "nilmdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic appliance trace, ground-truth states and meter.
    Synth(SynthArgs),
    /// Binarize an appliance CSV, estimate mean powers and aggregate a meter.
    Ingest(IngestArgs),
    /// Infer appliance states from a meter CSV.
    Infer(InferArgs),
    /// Run a Monte Carlo ε sweep and write plot-ready rows.
    Sweep(SweepArgs),
    /// Evaluate accuracy bounds.
    Bounds(BoundsArgs),
    /// Print the switching sparsity of a states CSV.
    Sparsity(SparsityArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OneShot,
    MultiShot,
    Hierarchical,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OneShot => Mode::OneShot,
            ModeArg::MultiShot => Mode::MultiShot,
            ModeArg::Hierarchical => Mode::Hierarchical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Laplace,
    Staircase,
    None,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Laplace => Mechanism::Laplace,
            MechanismArg::Staircase => Mechanism::Staircase,
            MechanismArg::None => Mechanism::None,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated mean powers, watts.
    #[arg(long, value_delimiter = ',', required = true)]
    powers: Vec<f64>,
    /// Number of transitions; the trace has horizon + 1 slots.
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long = "target-sparsity", default_value_t = 0.9)]
    target_sparsity: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Appliance trace CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "states-out")]
    states_out: Option<PathBuf>,
    #[arg(long = "meter-out")]
    meter_out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Appliance CSV: `t,<name_1>,...,<name_N>`.
    #[arg(long)]
    appliances: PathBuf,
    /// Per-appliance on-thresholds; 5% of each peak when absent.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// States CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "meter-out")]
    meter_out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Meter CSV: `t,power`.
    #[arg(long)]
    meter: PathBuf,
    /// Comma-separated mean powers, watts.
    #[arg(long, value_delimiter = ',', required = true)]
    powers: Vec<f64>,
    /// Initial binary states, comma-separated; all off when absent.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<u8>>,
    #[arg(long, value_enum, default_value = "multi-shot")]
    mode: ModeArg,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long = "u-max", default_value_t = 1)]
    u_max: usize,
    /// Inject noise at this privacy level before inference.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum, default_value = "laplace")]
    mechanism: MechanismArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Correction tolerance, watts; defaults to delta.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Ground-truth states CSV (including slot 0) for an accuracy report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Inferred states (or switches in one-shot mode) CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rows CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render a line chart.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "u-max")]
    u_max: Option<usize>,
    #[arg(long = "c-override")]
    c_override: Option<f64>,
    /// Comma-separated ε values.
    #[arg(long = "epsilon-grid")]
    epsilon_grid: Option<String>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum, default_value = "one-shot")]
    mode: ModeArg,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    epsilon: f64,
    /// Number of appliances; taken from --powers when absent.
    #[arg(long)]
    n: Option<usize>,
    /// C(P) override; computed from --powers when absent.
    #[arg(long)]
    c: Option<f64>,
    /// ‖P‖₂; taken from --powers when absent.
    #[arg(long = "p-norm")]
    p_norm: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    powers: Option<Vec<f64>>,
    /// Number of transitions for multi-shot and hierarchical bounds.
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long = "u-max", default_value_t = 1)]
    u_max: usize,
    #[arg(long, default_value = "as-stated")]
    variant: String,
    #[arg(long, default_value = "subset-norm")]
    rip: String,
}

#[derive(Args)]
struct SparsityArgs {
    #[arg(long)]
    states: PathBuf,
}

/// Errors in how the command was invoked, as opposed to in its data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let powers = AppliancePowerVector::new(a.powers).map_err(|e| usage(e.to_string()))?;
    let mut cfg = SynthConfig::new(powers, a.horizon, a.target_sparsity, a.seed);
    cfg.consumption_jitter = a.jitter;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let syn = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    write_appliance_csv(&syn.trace, output(a.out.as_deref())?)?;
    if let Some(p) = &a.states_out {
        write_states_csv(&syn.states, &syn.trace.names, 0, File::create(p)?)?;
    }
    if let Some(p) = &a.meter_out {
        write_meter_csv(&syn.meter, File::create(p)?)?;
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let trace = read_appliance_csv(&a.appliances)?;
    let thresholds = a.thresholds.unwrap_or_else(|| trace.default_thresholds());
    let states = binarize(&trace, &thresholds)?;
    let powers = estimate_powers(&trace, &states)?;
    let meter = aggregate(&trace, &states)?;
    for (name, p) in powers.names().iter().zip(powers.powers()) {
        eprintln!("{name}: {p}");
    }
    if states.horizon() >= 2 {
        eprintln!("sparsity: {:?}", sparsity(&states)?);
    }
    eprintln!("u_max: {}", max_switches(&states).max(1));
    write_states_csv(&states, &trace.names, 0, output(a.out.as_deref())?)?;
    if let Some(p) = &a.meter_out {
        write_meter_csv(&meter, File::create(p)?)?;
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let p = AppliancePowerVector::new(a.powers).map_err(|e| usage(e.to_string()))?;
    let sens = SensitivityParams::new(a.delta, a.u_max).map_err(|e| usage(e.to_string()))?;
    let x0 = match &a.x0 {
        Some(bits) => {
            if bits.len() != p.len() || bits.iter().any(|b| *b > 1) {
                return Err(usage(format!("--x0 needs {} comma-separated 0/1 values", p.len())));
            }
            StateVector::from_bits(&bits.iter().map(|b| *b == 1).collect::<Vec<_>>())
        }
        None => StateVector::zeros(p.len()),
    };
    let mut meter = read_meter_csv(&a.meter)?;
    if let Some(epsilon) = a.epsilon {
        let dp = DpConfig::new(epsilon, sens.delta_f(), a.mechanism.into(), a.seed)
            .map_err(|e| usage(e.to_string()))?;
        meter = inject_noise(&meter, &dp)?;
    }
    let tol = a.tolerance.unwrap_or(sens.delta);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let names = p.names().to_vec();

    if let Mode::OneShot = Mode::from(a.mode) {
        let y = meter.readings();
        let mut columns = Vec::with_capacity(meter.horizon());
        for t in 1..y.len() {
            let (out, _) = one_shot_infer_saturating(&p, y[t - 1], y[t], &sens, &mut rng)?;
            columns.push(StateVector::new(out.rounded.into_inner())?);
        }
        let switches = StateMatrix::new(columns, false)?;
        return Ok(write_states_csv(&switches, &names, 1, output(a.out.as_deref())?)?);
    }

    let result = match Mode::from(a.mode) {
        Mode::MultiShot => multi_shot_infer(&x0, &meter, &p, &sens, &mut rng, tol)?,
        _ => hierarchical_infer(&x0, &meter, &p, &sens, &mut rng, tol)?,
    };
    if let Some(path) = &a.truth {
        let truth = read_states_csv(path)?;
        let acc = accuracy_multi_shot(&result.states, &truth.tail(1))?;
        eprintln!("accuracy: {acc}");
    }
    if !result.saturated_steps.is_empty() {
        eprintln!("saturated steps: {:?}", result.saturated_steps);
    }
    write_states_csv(&result.states, &names, 1, output(a.out.as_deref())?)?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut map = match &a.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mode = a.mode.map(|m| Mode::from(m).to_string());
    let mechanism = a.mechanism.map(|m| Mechanism::from(m).to_string());
    let flags = [
        ("mode", mode),
        ("mechanism", mechanism),
        ("trials", a.trials.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("delta", a.delta.map(|v| v.to_string())),
        ("u_max", a.u_max.map(|v| v.to_string())),
        ("c_override", a.c_override.map(|v| v.to_string())),
        ("epsilon_grid", a.epsilon_grid.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(usage(format!("unknown config key `{k}`; known keys: {}", CONFIG_KEYS.join(", "))));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    let cfg = SweepConfig::from_map(&map).map_err(|e| match e {
        nilmdp::Error::Parameter { .. } | nilmdp::Error::Dimension { .. } => usage(e.to_string()),
        other => anyhow!(other),
    })?;
    let rows = run_sweep(&cfg)?;
    write_rows_csv(&rows, output(a.out.as_deref())?)?;
    if let Some(path) = &a.svg {
        let title = format!("{} accuracy, {} noise, {} trials", cfg.mode, cfg.mechanism, cfg.trials);
        std::fs::write(path, render_svg(&rows, &title))?;
    }
    Ok(())
}

fn print_report(out: &mut impl Write, report: &BoundReport) -> Result<()> {
    writeln!(out, "lower {:.5} (raw {})", report.clamped_lower, report.lower)?;
    writeln!(out, "upper {:.5} (raw {})", report.clamped_upper, report.upper)?;
    for (k, v) in &report.intermediates {
        writeln!(out, "  {k} = {v}")?;
    }
    Ok(())
}

fn bounds(a: BoundsArgs) -> Result<()> {
    let variant: MultiShotVariant = a.variant.parse().map_err(|e: nilmdp::Error| usage(e.to_string()))?;
    let rip: RipInterpretation = a.rip.parse().map_err(|e: nilmdp::Error| usage(e.to_string()))?;
    let powers = a
        .powers
        .map(AppliancePowerVector::new)
        .transpose()
        .map_err(|e| usage(e.to_string()))?;
    if !(a.delta > 0.0) || !(a.epsilon > 0.0) {
        bail!(usage("--delta and --epsilon must be > 0"));
    }
    let n = a
        .n
        .or(powers.as_ref().map(AppliancePowerVector::len))
        .ok_or_else(|| usage("give --n or --powers"))?;
    let p_norm = a.p_norm.or(powers.as_ref().map(AppliancePowerVector::l2_norm));
    let c = match (a.c, &powers) {
        (Some(c), _) => Some(c),
        (None, Some(p)) => c_of_p(p, a.u_max, rip, None)?.value,
        (None, None) => None,
    };
    let mut out = io::stdout().lock();
    match Mode::from(a.mode) {
        Mode::OneShot => match (c, p_norm) {
            (Some(c), Some(norm)) => print_report(&mut out, &one_shot_bounds(a.delta, a.epsilon, n, c, norm))?,
            (c, norm) => {
                match c {
                    Some(c) => {
                        let l = lower_bound_one_shot(a.delta, a.epsilon, n, c);
                        writeln!(out, "lower {:.5} (raw {})", l.clamped, l.raw)?;
                    }
                    None => writeln!(out, "lower undefined: C(P) is undefined; pass --c")?,
                }
                match norm {
                    Some(norm) => {
                        let u = upper_bound_one_shot(a.delta, a.epsilon, n, norm);
                        writeln!(out, "upper {:.5} (raw {})", u.clamped, u.raw)?;
                    }
                    None => writeln!(out, "upper needs ||P||_2: pass --p-norm or --powers")?,
                }
            }
        },
        Mode::MultiShot => {
            let c = c.ok_or_else(|| usage("C(P) is undefined; pass --c"))?;
            let p_norm = p_norm.ok_or_else(|| usage("pass --p-norm or --powers"))?;
            let inputs = MultiShotInputs {
                delta: a.delta,
                epsilon: a.epsilon,
                n,
                horizon: a.horizon,
                c,
                p_norm,
            };
            print_report(&mut out, &multi_shot_bounds(&inputs, variant)?)?;
        }
        Mode::Hierarchical => {
            let p = powers.ok_or_else(|| usage("hierarchical bounds need --powers"))?;
            let hs = decompose(&p, a.delta, a.u_max);
            let cs = hs
                .iter()
                .map(|h| Ok(c_of_p(&h.power_subvector, a.u_max, rip, a.c)?.value))
                .collect::<Result<Vec<_>>>()?;
            print_report(&mut out, &hierarchical_bounds(&hs, a.delta, a.epsilon, a.horizon, &cs, variant)?)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Infer(a) => infer(a),
        Command::Sweep(a) => sweep(a),
        Command::Bounds(a) => bounds(a),
        Command::Sparsity(a) => {
            let states = read_states_csv(&a.states)?;
            println!("{:?}", sparsity(&states)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}\n\nRun `nilmdp --help` for usage.");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
