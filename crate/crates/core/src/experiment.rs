//! Monte Carlo ε sweeps with bound overlay, flat `key = value` configs and
//! CSV/SVG emission.
//!
//! Trial `k` draws its data from `derive_seed(seed ^ DATA, k)` and its noise
//! and rounding from `derive_seed(seed ^ NOISE, k)`, independently of ε and
//! of the mechanism, so every grid point and every mechanism sees the same
//! meter traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::{
    c_of_p, hierarchical_bounds, multi_shot_bounds, one_shot_bounds, BoundReport, MultiShotInputs,
    MultiShotVariant, RipInterpretation,
};
use crate::data::{
    aggregate, binarize, estimate_powers, max_switches, read_appliance_csv, synthesize, SynthConfig,
};
use crate::error::{Error, Result};
use crate::hierarchy::{decompose, hierarchical_infer_with, Hierarchy};
use crate::inference::{accuracy_multi_shot, accuracy_one_shot, multi_shot_infer, one_shot_infer_saturating};
use crate::mechanisms::{derive_seed, inject_noise};
use crate::model::{AppliancePowerVector, DpConfig, Mechanism, MeterSeries, SensitivityParams, StateMatrix};

const DATA_STREAM: u64 = 0xDA7A_5EED_0000_0001;
const NOISE_STREAM: u64 = 0x0015_E5EE_D000_0002;

pub const THREADS_ENV: &str = "NILM_DP_THREADS";

pub const CSV_HEADER: &str =
    "epsilon,ln_inv_epsilon,mean_accuracy,std_accuracy,lower_bound,upper_bound,trials";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    OneShot,
    MultiShot,
    Hierarchical,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "one-shot" => Ok(Self::OneShot),
            "multi-shot" => Ok(Self::MultiShot),
            "hierarchical" => Ok(Self::Hierarchical),
            other => Err(Error::param("mode", format!("unknown `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OneShot => "one-shot",
            Self::MultiShot => "multi-shot",
            Self::Hierarchical => "hierarchical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Fresh synthetic traces per trial. The config's own seed is unused;
    /// the sweep's master seed drives generation.
    Synthetic(SynthConfig),
    /// One appliance-level trace; ground truth by thresholding, powers by
    /// on-sample means, meter by aggregation.
    Csv {
        appliances: PathBuf,
        thresholds: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub epsilon_grid: Vec<f64>,
    pub trials: usize,
    pub mode: Mode,
    pub mechanism: Mechanism,
    pub sens: SensitivityParams,
    pub data: DataSource,
    pub seed: u64,
    pub c_override: Option<f64>,
    pub variant: MultiShotVariant,
    pub rip: RipInterpretation,
    /// Defaults to `δ`.
    pub correction_tolerance: Option<f64>,
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::param("epsilon_grid", format!("bad range [{lo}, {hi}]")));
    }
    if points == 0 {
        return Err(Error::param("epsilon_points", "must be >= 1"));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| match i {
            0 => lo,
            i if i == points - 1 => hi,
            i => (a + (b - a) * i as f64 / (points - 1) as f64).exp(),
        })
        .collect())
}

pub fn default_epsilon_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 16).expect("static range")
}

/// Eight small household loads, watts. Noise at the strong-privacy end of
/// the default grid is comparable to these powers.
pub fn default_powers() -> AppliancePowerVector {
    AppliancePowerVector::with_names(
        vec![8.0, 15.0, 25.0, 40.0, 60.0, 90.0, 130.0, 200.0],
        ["led", "router", "laptop", "fan", "lamp", "tv", "fridge", "desktop"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .expect("static fleet")
}

impl SweepConfig {
    /// Defaults: 16-point grid over `[1e-2, 1e2]`, 200 trials, one-shot,
    /// Laplace, `δ = 2`, the default fleet over 50 transitions at `s = 0.9`.
    pub fn synthetic_default() -> Self {
        Self {
            epsilon_grid: default_epsilon_grid(),
            trials: 200,
            mode: Mode::OneShot,
            mechanism: Mechanism::Laplace,
            sens: SensitivityParams { delta: 2.0, u_max: 2 },
            data: DataSource::Synthetic(SynthConfig::new(default_powers(), 50, 0.9, 0)),
            seed: 0,
            c_override: None,
            variant: MultiShotVariant::default(),
            rip: RipInterpretation::default(),
            correction_tolerance: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_grid.is_empty() {
            return Err(Error::EmptyInput("epsilon grid"));
        }
        if let Some(e) = self.epsilon_grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::param("epsilon_grid", format!("{e} is not a positive finite value")));
        }
        let mut sorted = self.epsilon_grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("epsilon_grid", "duplicate values"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be >= 1"));
        }
        if self.mechanism == Mechanism::None {
            return Err(Error::param("mechanism", "a sweep needs laplace or staircase"));
        }
        SensitivityParams::new(self.sens.delta, self.sens.u_max)?;
        if let Some(c) = self.c_override {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::param("c_override", format!("{c} must be > 0")));
            }
        }
        if let Some(tol) = self.correction_tolerance {
            if !(tol >= 0.0) {
                return Err(Error::param("correction_tolerance", format!("{tol} must be >= 0")));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            if s.horizon == 0 {
                return Err(Error::param("horizon", "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        self.correction_tolerance.unwrap_or(self.sens.delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub ln_inv_epsilon: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation of the per-trial accuracies.
    pub std_accuracy: f64,
    /// `None` when `C(P)` is undefined and no override is given.
    pub clamped_lower: Option<f64>,
    pub clamped_upper: f64,
    pub trials: usize,
    pub bounds: Option<BoundReport>,
}

impl SweepRow {
    /// Standard error of `mean_accuracy`.
    pub fn std_error(&self) -> f64 {
        self.std_accuracy / (self.trials as f64).sqrt()
    }
}

/// One trial's ground truth and clean meter.
#[derive(Debug, Clone)]
struct TrialData {
    powers: AppliancePowerVector,
    states: StateMatrix,
    meter: MeterSeries,
}

fn synthetic_trial(cfg: &SynthConfig, seed: u64, trial: usize) -> Result<TrialData> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ DATA_STREAM, trial as u64));
    let syn = synthesize(cfg, &mut rng)?;
    Ok(TrialData {
        powers: cfg.powers.clone(),
        states: syn.states,
        meter: syn.meter,
    })
}

fn csv_data(path: &Path, thresholds: Option<&[f64]>) -> Result<TrialData> {
    let trace = read_appliance_csv(path)?;
    let th = match thresholds {
        Some(t) => t.to_vec(),
        None => trace.default_thresholds(),
    };
    let states = binarize(&trace, &th)?;
    if states.horizon() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} has fewer than 2 slots",
            path.display()
        )));
    }
    let powers = estimate_powers(&trace, &states)?;
    let meter = aggregate(&trace, &states)?;
    Ok(TrialData {
        powers,
        states,
        meter,
    })
}

/// Largest simultaneous switch count in the ground truth the sweep would
/// use first: trial 0 for synthetic data, the whole trace for CSV data.
pub fn estimate_u_max(data: &DataSource, seed: u64) -> Result<usize> {
    let d = match data {
        DataSource::Synthetic(cfg) => synthetic_trial(cfg, seed, 0)?,
        DataSource::Csv {
            appliances,
            thresholds,
        } => csv_data(appliances, thresholds.as_deref())?,
    };
    Ok(max_switches(&d.states).max(1))
}

struct Prepared {
    powers: AppliancePowerVector,
    fixed: Option<TrialData>,
    hierarchies: Vec<Hierarchy>,
    horizon: usize,
}

fn prepare(cfg: &SweepConfig) -> Result<Prepared> {
    let (powers, fixed) = match &cfg.data {
        DataSource::Synthetic(s) => (s.powers.clone(), None),
        DataSource::Csv {
            appliances,
            thresholds,
        } => {
            let d = csv_data(appliances, thresholds.as_deref())?;
            (d.powers.clone(), Some(d))
        }
    };
    let horizon = match (&cfg.data, &fixed) {
        (DataSource::Synthetic(s), _) => s.horizon,
        (_, Some(d)) => d.meter.horizon(),
        _ => unreachable!(),
    };
    let hierarchies = decompose(&powers, cfg.sens.delta, cfg.sens.u_max);
    Ok(Prepared {
        powers,
        fixed,
        hierarchies,
        horizon,
    })
}

fn resolve_c(p: &AppliancePowerVector, cfg: &SweepConfig) -> Result<Option<f64>> {
    Ok(c_of_p(p, cfg.sens.u_max, cfg.rip, cfg.c_override)?.value)
}

/// Bounds matching the mode's accuracy metric. `None` when a required
/// `C(P)` is undefined.
fn bounds_for(cfg: &SweepConfig, prep: &Prepared, epsilon: f64) -> Result<Option<BoundReport>> {
    let delta = cfg.sens.delta;
    let p = &prep.powers;
    match cfg.mode {
        Mode::OneShot => Ok(resolve_c(p, cfg)?.map(|c| one_shot_bounds(delta, epsilon, p.len(), c, p.l2_norm()))),
        Mode::MultiShot => match resolve_c(p, cfg)? {
            None => Ok(None),
            Some(c) => multi_shot_bounds(
                &MultiShotInputs {
                    delta,
                    epsilon,
                    n: p.len(),
                    horizon: prep.horizon,
                    c,
                    p_norm: p.l2_norm(),
                },
                cfg.variant,
            )
            .map(Some),
        },
        Mode::Hierarchical => {
            let cs = prep
                .hierarchies
                .iter()
                .map(|h| resolve_c(&h.power_subvector, cfg))
                .collect::<Result<Vec<_>>>()?;
            if cs.iter().any(Option::is_none) {
                return Ok(None);
            }
            hierarchical_bounds(&prep.hierarchies, delta, epsilon, prep.horizon, &cs, cfg.variant).map(Some)
        }
    }
}

/// Upper bound alone, for rows whose lower bound is undefined.
fn upper_only(cfg: &SweepConfig, prep: &Prepared, epsilon: f64) -> Result<f64> {
    let p = &prep.powers;
    let one = crate::bounds::upper_bound_one_shot(cfg.sens.delta, epsilon, p.len(), p.l2_norm());
    Ok(match cfg.mode {
        Mode::OneShot => one.clamped,
        Mode::MultiShot => crate::bounds::big_b_m(one.raw, prep.horizon).clamp(0.0, 1.0),
        Mode::Hierarchical => {
            // Without C the recursion is unavailable; report the trivial bound.
            1.0
        }
    })
}

fn run_trial(cfg: &SweepConfig, prep: &Prepared, epsilon: f64, trial: usize) -> Result<f64> {
    let owned;
    let data = match &prep.fixed {
        Some(d) => d,
        None => {
            let DataSource::Synthetic(s) = &cfg.data else { unreachable!() };
            owned = synthetic_trial(s, cfg.seed, trial)?;
            &owned
        }
    };
    let noise_seed = derive_seed(cfg.seed ^ NOISE_STREAM, trial as u64);
    let dp = DpConfig::new(epsilon, cfg.sens.delta_f(), cfg.mechanism, noise_seed)?;
    let noisy = inject_noise(&data.meter, &dp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, 1));
    let y = noisy.readings();
    let truth_after = data.states.tail(1);
    let x0 = &data.states.columns()[0];
    match cfg.mode {
        Mode::OneShot => {
            let switches = data.states.switches();
            let mut total = 0.0;
            for (t, truth) in switches.iter().enumerate() {
                let (out, _) = one_shot_infer_saturating(&data.powers, y[t], y[t + 1], &cfg.sens, &mut rng)?;
                total += accuracy_one_shot(&out.rounded, truth)?;
            }
            Ok(total / switches.len() as f64)
        }
        Mode::MultiShot => {
            let out = multi_shot_infer(x0, &noisy, &data.powers, &cfg.sens, &mut rng, cfg.tolerance())?;
            accuracy_multi_shot(&out.states, &truth_after)
        }
        Mode::Hierarchical => {
            let out = hierarchical_infer_with(
                &prep.hierarchies,
                x0,
                &noisy,
                &data.powers,
                &cfg.sens,
                &mut rng,
                cfg.tolerance(),
            )?;
            accuracy_multi_shot(&out.states, &truth_after)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::param("NILM_DP_THREADS", format!("`{v}` is not a thread count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::param("NILM_DP_THREADS", e.to_string()))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every `(ε, trial)` pipeline and returns rows sorted by ascending
/// `ln(1/ε)`. Results do not depend on the worker count.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let mut grid = cfg.epsilon_grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|e| (0..cfg.trials).map(move |k| (e, k)))
        .collect();
    let pool = thread_pool()?;
    let accuracies: Vec<Result<f64>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(e, k)| {
                run_trial(cfg, &prep, grid[e], k).map_err(|source| Error::Trial {
                    epsilon: grid[e],
                    trial: k,
                    source: Box::new(source),
                })
            })
            .collect()
    });
    let accuracies = accuracies.into_iter().collect::<Result<Vec<f64>>>()?;

    grid.iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let (mean, std) = mean_std(&accuracies[e * cfg.trials..(e + 1) * cfg.trials]);
            let bounds = bounds_for(cfg, &prep, epsilon)?;
            let (clamped_lower, clamped_upper) = match &bounds {
                Some(b) => (Some(b.clamped_lower), b.clamped_upper),
                None => (None, upper_only(cfg, &prep, epsilon)?),
            };
            Ok(SweepRow {
                epsilon,
                ln_inv_epsilon: 0.0 - epsilon.ln(),
                mean_accuracy: mean,
                std_accuracy: std,
                clamped_lower,
                clamped_upper,
                trials: cfg.trials,
                bounds,
            })
        })
        .collect()
}

pub fn write_rows_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        let lower = r.clamped_lower.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epsilon, r.ln_inv_epsilon, r.mean_accuracy, r.std_accuracy, lower, r.clamped_upper, r.trials
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares line `y = a + b x`. Returns `(b, standard error of b)`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("line fit needs 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("line fit needs distinct x values".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok((slope, (rss / (nf - 2.0) / sxx).sqrt()))
}

/// Weighted least-squares line with known per-point standard errors.
/// Returns `(b, standard error of b)` propagated from `sigmas`.
pub fn fit_slope_weighted(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() != sigmas.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            actual: ys.len().min(sigmas.len()),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!("line fit needs 2 points, got {}", xs.len())));
    }
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InsufficientData("standard errors must be positive".into()));
    }
    let w: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(xs).map(|(w, x)| w * (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("line fit needs distinct x values".into()));
    }
    let sxy: f64 = w
        .iter()
        .zip(xs.iter().zip(ys))
        .map(|(w, (x, y))| w * (x - mx) * (y - my))
        .sum();
    Ok((sxy / sxx, (1.0 / sxx).sqrt()))
}

/// A line chart of mean accuracy and clamped bounds against `ln(1/ε)`.
pub fn render_svg(rows: &[SweepRow], title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.ln_inv_epsilon).collect();
    let (x0, x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| pad + (x - x0) / span * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let line = |ys: Vec<Option<f64>>, colour: &str, dash: &str| {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter_map(|(&x, y)| y.map(|y| format!("{:.2},{:.2}", px(x), py(y))))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" stroke-dasharray=\"{dash}\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        w / 2.0,
        title.replace('&', "&amp;").replace('<', "&lt;")
    );
    let _ = writeln!(
        svg,
        "<path d=\"M{pad},{pad} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{tick}</text>",
            pad - 6.0,
            py(tick) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">ln(1/epsilon) from {x0:.2} to {x1:.2}</text>",
        w / 2.0,
        h - 12.0
    );
    svg.push_str(&line(rows.iter().map(|r| Some(r.mean_accuracy)).collect(), "#1f77b4", "none"));
    svg.push_str(&line(rows.iter().map(|r| r.clamped_lower).collect(), "#d62728", "6 4"));
    svg.push_str(&line(rows.iter().map(|r| Some(r.clamped_upper)).collect(), "#2ca02c", "6 4"));
    svg.push_str("</svg>\n");
    svg
}

/// Reads `key = value` lines; `#` starts a comment. Later keys win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::param("config", format!("line {}: expected `key = value`", no + 1)));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::param("config", format!("line {}: empty key", no + 1)));
        }
        map.insert(key.to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub const CONFIG_KEYS: &[&str] = &[
    "epsilon_grid",
    "epsilon_min",
    "epsilon_max",
    "epsilon_points",
    "trials",
    "mode",
    "mechanism",
    "delta",
    "u_max",
    "seed",
    "data",
    "powers",
    "names",
    "horizon",
    "target_sparsity",
    "consumption_jitter",
    "initial_states",
    "appliances",
    "thresholds",
    "c_override",
    "variant",
    "rip",
    "correction_tolerance",
];

fn parse_num<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::param(key, format!("cannot parse `{v}`")))
}

fn parse_list(key: &'static str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn static_key(k: &str) -> Option<&'static str> {
    CONFIG_KEYS.iter().copied().find(|c| *c == k)
}

impl SweepConfig {
    /// Builds a config from flat key/value pairs over
    /// [`SweepConfig::synthetic_default`]. A missing `u_max` is estimated
    /// from ground truth.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        for k in map.keys() {
            if static_key(k).is_none() {
                return Err(Error::param("config", format!("unknown key `{k}`")));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let mut cfg = Self::synthetic_default();

        if let Some(v) = get("epsilon_grid") {
            cfg.epsilon_grid = parse_list("epsilon_grid", v)?;
        } else if get("epsilon_min").is_some() || get("epsilon_max").is_some() || get("epsilon_points").is_some() {
            let lo = get("epsilon_min").map(|v| parse_num("epsilon_min", v)).transpose()?.unwrap_or(1e-2);
            let hi = get("epsilon_max").map(|v| parse_num("epsilon_max", v)).transpose()?.unwrap_or(1e2);
            let n = get("epsilon_points").map(|v| parse_num("epsilon_points", v)).transpose()?.unwrap_or(16);
            cfg.epsilon_grid = log_grid(lo, hi, n)?;
        }
        if let Some(v) = get("trials") {
            cfg.trials = parse_num("trials", v)?;
        }
        if let Some(v) = get("mode") {
            cfg.mode = v.parse()?;
        }
        if let Some(v) = get("mechanism") {
            cfg.mechanism = v.parse()?;
        }
        if let Some(v) = get("delta") {
            cfg.sens.delta = parse_num("delta", v)?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("c_override") {
            cfg.c_override = Some(parse_num("c_override", v)?);
        }
        if let Some(v) = get("variant") {
            cfg.variant = v.parse()?;
        }
        if let Some(v) = get("rip") {
            cfg.rip = v.parse()?;
        }
        if let Some(v) = get("correction_tolerance") {
            cfg.correction_tolerance = Some(parse_num("correction_tolerance", v)?);
        }

        let source = get("data").unwrap_or("synthetic");
        cfg.data = match source {
            "synthetic" => {
                let powers = match get("powers") {
                    Some(v) => {
                        let values = parse_list("powers", v)?;
                        match get("names") {
                            Some(n) => AppliancePowerVector::with_names(
                                values,
                                n.split(',').map(|s| s.trim().to_string()).collect(),
                            )?,
                            None => AppliancePowerVector::new(values)?,
                        }
                    }
                    None => default_powers(),
                };
                let mut s = SynthConfig::new(powers, 50, 0.9, cfg.seed);
                if let Some(v) = get("horizon") {
                    s.horizon = parse_num("horizon", v)?;
                }
                if let Some(v) = get("target_sparsity") {
                    s.target_sparsity = parse_num("target_sparsity", v)?;
                }
                if let Some(v) = get("consumption_jitter") {
                    s.consumption_jitter = parse_num("consumption_jitter", v)?;
                }
                if let Some(v) = get("initial_states") {
                    s.initial_states = Some(
                        parse_list("initial_states", v)?
                            .into_iter()
                            .map(|b| b != 0.0)
                            .collect(),
                    );
                }
                DataSource::Synthetic(s)
            }
            "csv" => DataSource::Csv {
                appliances: get("appliances")
                    .ok_or_else(|| Error::param("appliances", "required when data = csv"))?
                    .into(),
                thresholds: get("thresholds").map(|v| parse_list("thresholds", v)).transpose()?,
            },
            other => return Err(Error::param("data", format!("unknown source `{other}`"))),
        };

        cfg.sens.u_max = match get("u_max") {
            Some(v) => parse_num("u_max", v)?,
            None => estimate_u_max(&cfg.data, cfg.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode) -> SweepConfig {
        let mut cfg = SweepConfig::synthetic_default();
        cfg.epsilon_grid = log_grid(0.05, 20.0, 8).unwrap();
        cfg.trials = 20;
        cfg.mode = mode;
        cfg.c_override = Some(0.015);
        cfg.data = DataSource::Synthetic(SynthConfig::new(default_powers(), 20, 0.9, 0));
        cfg
    }

    #[test]
    fn grid_spacing() {
        let g = default_epsilon_grid();
        assert_eq!(g.len(), 16);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert!((g[15] - 1e2).abs() < 1e-10);
        let ratio = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn row_count_and_order() {
        let mut cfg = small(Mode::OneShot);
        cfg.trials = 100;
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 8);
        for w in rows.windows(2) {
            assert!(w[0].ln_inv_epsilon < w[1].ln_inv_epsilon);
        }
        for r in &rows {
            assert!((r.ln_inv_epsilon + r.epsilon.ln()).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.mean_accuracy));
            assert!(r.std_accuracy >= 0.0);
            assert_eq!(r.trials, 100);
        }
    }

    #[test]
    fn every_mode_runs() {
        for mode in [Mode::OneShot, Mode::MultiShot, Mode::Hierarchical] {
            let rows = run_sweep(&small(mode)).unwrap();
            assert_eq!(rows.len(), 8);
            assert!(rows.iter().all(|r| r.clamped_lower.is_some()));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = small(Mode::MultiShot);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_rows_csv(&run_sweep(&cfg).unwrap(), &mut a).unwrap();
        write_rows_csv(&run_sweep(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with(CSV_HEADER));
    }

    #[test]
    fn grid_order_does_not_matter() {
        let cfg = small(Mode::OneShot);
        let mut shuffled = cfg.clone();
        shuffled.epsilon_grid.reverse();
        assert_eq!(run_sweep(&cfg).unwrap(), run_sweep(&shuffled).unwrap());
    }

    #[test]
    fn rejects_bad_grids() {
        let mut cfg = small(Mode::OneShot);
        cfg.epsilon_grid = vec![1.0, 0.5, 1.0];
        assert!(run_sweep(&cfg).is_err());
        cfg.epsilon_grid = vec![];
        assert!(run_sweep(&cfg).is_err());
        cfg.epsilon_grid = vec![-1.0];
        assert!(run_sweep(&cfg).is_err());
        let mut cfg = small(Mode::OneShot);
        cfg.trials = 0;
        assert!(run_sweep(&cfg).is_err());
    }

    #[test]
    fn undefined_c_leaves_lower_bound_empty() {
        let mut cfg = small(Mode::OneShot);
        cfg.c_override = None;
        cfg.trials = 2;
        let rows = run_sweep(&cfg).unwrap();
        assert!(rows.iter().all(|r| r.clamped_lower.is_none()));
        let mut out = Vec::new();
        write_rows_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line.split(',').nth(4), Some(""));
    }

    #[test]
    fn trial_errors_name_epsilon_and_trial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "t,a,b\n0,0,5\n1,10,5\n2,0,5\n").unwrap();
        let mut cfg = small(Mode::MultiShot);
        cfg.data = DataSource::Csv {
            appliances: path,
            thresholds: None,
        };
        cfg.trials = 3;
        cfg.correction_tolerance = Some(-1.0);
        assert!(run_sweep(&cfg).is_err());
        cfg.correction_tolerance = None;
        assert_eq!(run_sweep(&cfg).unwrap().len(), 8);
    }

    #[test]
    fn config_text_parsing() {
        let map = parse_config_text(
            "# demo\nmode = multi-shot\ntrials = 7  # few\n\nepsilon_grid = 0.1, 1, 10\nc_override=0.015\nu_max = 2\n",
        )
        .unwrap();
        let cfg = SweepConfig::from_map(&map).unwrap();
        assert_eq!(cfg.mode, Mode::MultiShot);
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.epsilon_grid, vec![0.1, 1.0, 10.0]);
        assert_eq!(cfg.c_override, Some(0.015));
        assert_eq!(cfg.sens.u_max, 2);

        assert!(parse_config_text("no equals sign").is_err());
        let mut bad = BTreeMap::new();
        bad.insert("bogus".to_string(), "1".to_string());
        assert!(SweepConfig::from_map(&bad).is_err());
    }

    #[test]
    fn u_max_is_estimated_when_absent() {
        let cfg = SweepConfig::from_map(&BTreeMap::new()).unwrap();
        let expect = estimate_u_max(&cfg.data, 0).unwrap();
        assert_eq!(cfg.sens.u_max, expect);
        assert!(expect >= 1);
    }

    #[test]
    fn slope_fit() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 0.8, 0.6, 0.4];
        let (b, se) = fit_slope(&xs, &ys).unwrap();
        assert!((b + 0.2).abs() < 1e-12);
        assert!(se < 1e-12);
        assert!(fit_slope(&xs[..2], &ys[..2]).is_err());

        let (bw, sew) = fit_slope_weighted(&xs, &ys, &[0.1; 4]).unwrap();
        assert!((bw + 0.2).abs() < 1e-12);
        // σ_b = σ / sqrt(Σ(x − x̄)²) for equal weights.
        assert!((sew - 0.1 / 5f64.sqrt()).abs() < 1e-12);
        assert!(fit_slope_weighted(&xs, &ys, &[0.1, 0.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn svg_mentions_each_series() {
        let rows = run_sweep(&small(Mode::OneShot)).unwrap();
        let svg = render_svg(&rows, "demo");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 3);
    }
}
