//! Appliance traces: CSV ingestion, binarization, mean-power estimation,
//! meter aggregation, synthetic generation and the switching-sparsity metric.
//!
//! Appliance CSV: header `t,<name_1>,...,<name_N>`, one row per slot, watts.
//! States CSV: `t,<name_1>,...` with 0/1 entries. Meter CSV: `t,power`.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::model::{AppliancePowerVector, MeterSeries, StateMatrix, StateVector};

/// Per-appliance power samples over `T + 1` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplianceTrace {
    pub timestamps: Vec<i64>,
    pub names: Vec<String>,
    /// `samples[t][i]`: power of appliance `i` at slot `t`.
    pub samples: Vec<Vec<f64>>,
}

impl ApplianceTrace {
    pub fn new(timestamps: Vec<i64>, names: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        check_len(timestamps.len(), samples.len())?;
        for row in &samples {
            check_len(names.len(), row.len())?;
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::param("samples", format!("{v} is not a nonnegative power")));
            }
        }
        Ok(Self {
            timestamps,
            names,
            samples,
        })
    }

    pub fn n_appliances(&self) -> usize {
        self.names.len()
    }

    pub fn n_slots(&self) -> usize {
        self.samples.len()
    }

    /// 5% of each appliance's largest observed power.
    pub fn default_thresholds(&self) -> Vec<f64> {
        (0..self.n_appliances())
            .map(|i| 0.05 * self.samples.iter().map(|row| row[i]).fold(0.0, f64::max))
            .collect()
    }
}

/// State is 1 iff the sample exceeds the appliance's threshold.
pub fn binarize(trace: &ApplianceTrace, thresholds: &[f64]) -> Result<StateMatrix> {
    check_len(trace.n_appliances(), thresholds.len())?;
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::param("thresholds", format!("{t} must be >= 0")));
    }
    let columns = trace
        .samples
        .iter()
        .map(|row| {
            let bits: Vec<bool> = row.iter().zip(thresholds).map(|(s, th)| s > th).collect();
            StateVector::from_bits(&bits)
        })
        .collect();
    StateMatrix::new(columns, true)
}

/// Mean of each appliance's samples over its on-slots.
pub fn estimate_powers(trace: &ApplianceTrace, states: &StateMatrix) -> Result<AppliancePowerVector> {
    check_shapes(trace, states)?;
    let n = trace.n_appliances();
    // Mean shifted by the first on-sample.
    let mut first: Vec<Option<f64>> = vec![None; n];
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (row, col) in trace.samples.iter().zip(states.columns()) {
        for i in 0..n {
            if col.values()[i] == 1.0 {
                let base = *first[i].get_or_insert(row[i]);
                sums[i] += row[i] - base;
                counts[i] += 1;
            }
        }
    }
    let mut powers = Vec::with_capacity(n);
    for i in 0..n {
        let Some(base) = first[i] else {
            return Err(Error::NeverOn(trace.names[i].clone()));
        };
        powers.push(base + sums[i] / counts[i] as f64);
    }
    AppliancePowerVector::with_names(powers, trace.names.clone())
}

/// `y_t = Σ_{i on at t} Z_i^t`.
pub fn aggregate(trace: &ApplianceTrace, states: &StateMatrix) -> Result<MeterSeries> {
    check_shapes(trace, states)?;
    let readings = trace
        .samples
        .iter()
        .zip(states.columns())
        .map(|(row, col)| {
            row.iter()
                .zip(col.values())
                .filter(|(_, &on)| on == 1.0)
                .map(|(z, _)| z)
                .sum()
        })
        .collect();
    MeterSeries::new(readings)
}

fn check_shapes(trace: &ApplianceTrace, states: &StateMatrix) -> Result<()> {
    check_len(trace.n_slots(), states.horizon())?;
    if states.horizon() > 0 {
        check_len(trace.n_appliances(), states.n_appliances())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub powers: AppliancePowerVector,
    /// Number of transitions `T`; the trace has `T + 1` slots.
    pub horizon: usize,
    /// Probability that a state is unchanged between slots.
    pub target_sparsity: f64,
    /// Relative standard deviation of on-power around its mean.
    pub consumption_jitter: f64,
    /// Drawn uniformly at random when absent.
    pub initial_states: Option<Vec<bool>>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(powers: AppliancePowerVector, horizon: usize, target_sparsity: f64, seed: u64) -> Self {
        Self {
            powers,
            horizon,
            target_sparsity,
            consumption_jitter: 0.0,
            initial_states: None,
            seed,
        }
    }

    pub fn n_appliances(&self) -> usize {
        self.powers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_sparsity) {
            return Err(Error::param(
                "target_sparsity",
                format!("{} is outside [0, 1]", self.target_sparsity),
            ));
        }
        if !(self.consumption_jitter >= 0.0 && self.consumption_jitter.is_finite()) {
            return Err(Error::param(
                "consumption_jitter",
                format!("{} must be >= 0", self.consumption_jitter),
            ));
        }
        if let Some(init) = &self.initial_states {
            check_len(self.n_appliances(), init.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    /// Ground-truth states `X_0..X_T`.
    pub states: StateMatrix,
    pub trace: ApplianceTrace,
    pub meter: MeterSeries,
}

/// Each state flips independently with probability `1 - s` per step.
pub fn synthesize<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Synthetic> {
    cfg.validate()?;
    let n = cfg.n_appliances();
    let flip = 1.0 - cfg.target_sparsity;
    let mut x: Vec<bool> = match &cfg.initial_states {
        Some(init) => init.clone(),
        None => (0..n).map(|_| rng.random::<bool>()).collect(),
    };
    let mut columns = Vec::with_capacity(cfg.horizon + 1);
    let mut samples = Vec::with_capacity(cfg.horizon + 1);
    for t in 0..=cfg.horizon {
        if t > 0 {
            for bit in x.iter_mut() {
                if rng.random::<f64>() < flip {
                    *bit = !*bit;
                }
            }
        }
        let row = cfg
            .powers
            .powers()
            .iter()
            .zip(&x)
            .map(|(&p, &on)| {
                if !on {
                    return 0.0;
                }
                if cfg.consumption_jitter == 0.0 {
                    p
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    (p * (1.0 + cfg.consumption_jitter * z)).max(0.0)
                }
            })
            .collect();
        samples.push(row);
        columns.push(StateVector::from_bits(&x));
    }
    let states = StateMatrix::new(columns, true)?;
    let trace = ApplianceTrace::new(
        (0..=cfg.horizon as i64).collect(),
        cfg.powers.names().to_vec(),
        samples,
    )?;
    let meter = aggregate(&trace, &states)?;
    Ok(Synthetic {
        states,
        trace,
        meter,
    })
}

/// `1 − Σ_t ‖X_{t+1} − X_t‖₀ / (N (T − 1))` over the `T` columns given.
pub fn sparsity(states: &StateMatrix) -> Result<f64> {
    let t = states.horizon();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "sparsity needs at least 2 slots, got {t}"
        )));
    }
    let n = states.n_appliances();
    if n == 0 {
        return Err(Error::EmptyInput("state matrix"));
    }
    let flips: usize = states.switches().iter().map(|d| d.support()).sum();
    Ok(1.0 - flips as f64 / (n * (t - 1)) as f64)
}

/// Largest number of simultaneous switches in a ground-truth matrix.
pub fn max_switches(states: &StateMatrix) -> usize {
    states.switches().iter().map(|d| d.support()).max().unwrap_or(0)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<i64>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(format_err(path, "first header column must be `t`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(format_err(path, "no data columns"));
    }
    let mut ts = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != names.len() + 1 {
            return Err(format_err(
                path,
                format!("row {} has {} fields, expected {}", line + 2, record.len(), names.len() + 1),
            ));
        }
        let t: i64 = record[0]
            .parse()
            .map_err(|_| format_err(path, format!("row {}: bad slot `{}`", line + 2, &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format_err(path, format!("row {}: bad number `{f}`", line + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        ts.push(t);
        rows.push(values);
    }
    Ok((names, ts, rows))
}

pub fn read_appliance_csv(path: impl AsRef<Path>) -> Result<ApplianceTrace> {
    let path = path.as_ref();
    let (names, ts, rows) = read_table(path)?;
    ApplianceTrace::new(ts, names, rows).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_states_csv(path: impl AsRef<Path>) -> Result<StateMatrix> {
    let path = path.as_ref();
    let (_, _, rows) = read_table(path)?;
    let columns = rows
        .into_iter()
        .map(StateVector::new)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| format_err(path, e.to_string()))?;
    StateMatrix::new(columns, true).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_meter_csv(path: impl AsRef<Path>) -> Result<MeterSeries> {
    let path = path.as_ref();
    let (names, _, rows) = read_table(path)?;
    if names.len() != 1 {
        return Err(format_err(path, "meter CSV must have exactly the columns `t,power`"));
    }
    MeterSeries::new(rows.into_iter().map(|r| r[0]).collect())
}

pub fn write_appliance_csv(trace: &ApplianceTrace, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "t,{}", trace.names.join(","))?;
    for (t, row) in trace.timestamps.iter().zip(&trace.samples) {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{t},{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t,<names>` with 0/1 entries; `first_slot` numbers the first column.
pub fn write_states_csv(states: &StateMatrix, names: &[String], first_slot: usize, out: impl Write) -> Result<()> {
    if states.horizon() > 0 {
        check_len(states.n_appliances(), names.len())?;
    }
    let mut w = BufWriter::new(out);
    writeln!(w, "t,{}", names.join(","))?;
    for (t, col) in states.columns().iter().enumerate() {
        let fields: Vec<String> = col
            .values()
            .iter()
            .map(|&v| if v == 0.0 || v == 1.0 { format!("{}", v as u8) } else { v.to_string() })
            .collect();
        writeln!(w, "{},{}", t + first_slot, fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_meter_csv(meter: &MeterSeries, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "t,power")?;
    for (t, y) in meter.readings().iter().enumerate() {
        writeln!(w, "{t},{y}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::File;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(rows: Vec<Vec<f64>>) -> ApplianceTrace {
        let n = rows[0].len();
        ApplianceTrace::new(
            (0..rows.len() as i64).collect(),
            (1..=n).map(|i| format!("a{i}")).collect(),
            rows,
        )
        .unwrap()
    }

    fn bits_of(m: &StateMatrix, i: usize) -> Vec<f64> {
        m.columns().iter().map(|c| c.values()[i]).collect()
    }

    #[test]
    fn binarize_examples() {
        let tr = trace(vec![vec![0.0], vec![0.0], vec![50.0], vec![60.0]]);
        assert_eq!(bits_of(&binarize(&tr, &[10.0]).unwrap(), 0), vec![0.0, 0.0, 1.0, 1.0]);
        let zeros = trace(vec![vec![0.0, 0.0]; 3]);
        assert!(!binarize(&zeros, &[0.0, 0.0])
            .unwrap()
            .columns()
            .iter()
            .any(|c| c.support() > 0));
        let pos = trace(vec![vec![0.5, 2.0]; 3]);
        assert!(binarize(&pos, &[0.0, 0.0])
            .unwrap()
            .columns()
            .iter()
            .all(|c| c.support() == 2));
        assert!(binarize(&pos, &[0.0]).is_err());
        assert!(binarize(&pos, &[0.0, -1.0]).is_err());
    }

    #[test]
    fn default_threshold_is_five_percent_of_peak() {
        let tr = trace(vec![vec![0.0, 10.0], vec![200.0, 20.0]]);
        assert_eq!(tr.default_thresholds(), vec![10.0, 1.0]);
    }

    #[test]
    fn estimate_powers_examples() {
        let tr = trace(vec![vec![0.0, 7.0], vec![50.0, 7.0], vec![60.0, 7.0]]);
        let states = binarize(&tr, &[10.0, 1.0]).unwrap();
        assert_eq!(estimate_powers(&tr, &states).unwrap().powers(), &[55.0, 7.0]);
        let never = trace(vec![vec![0.0, 1.0]; 2]);
        let states = binarize(&never, &[0.0, 0.0]).unwrap();
        match estimate_powers(&never, &states) {
            Err(Error::NeverOn(name)) => assert_eq!(name, "a1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn aggregate_examples() {
        let tr = trace(vec![vec![5.0]; 4]);
        let states = binarize(&tr, &[0.0]).unwrap();
        assert_eq!(aggregate(&tr, &states).unwrap().readings(), &[5.0; 4]);
        let tr = trace(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        let states = binarize(&tr, &[1.0, 1.0]).unwrap();
        assert_eq!(aggregate(&tr, &states).unwrap().readings(), &[0.0, 7.0]);
    }

    #[test]
    fn aggregate_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let t = rng.random_range(1..20);
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..n).map(|_| if rng.random::<bool>() { rng.random_range(0.0..100.0) } else { 0.0 }).collect())
                .collect();
            let tr = trace(rows.clone());
            let th: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
            let states = binarize(&tr, &th).unwrap();
            let y = aggregate(&tr, &states).unwrap();
            for s in 0..t {
                let mut expect = 0.0;
                for i in 0..n {
                    if rows[s][i] > th[i] {
                        expect += rows[s][i];
                    }
                }
                assert_eq!(y.readings()[s], expect);
            }
            // Zero thresholds: column sums of the trace.
            let all = binarize(&tr, &vec![0.0; n]).unwrap();
            let sums = aggregate(&tr, &all).unwrap();
            for s in 0..t {
                assert_eq!(sums.readings()[s], rows[s].iter().sum::<f64>());
            }
        }
    }

    #[test]
    fn synthesize_without_switching() {
        let p = AppliancePowerVector::new(vec![10.0, 20.0, 30.0]).unwrap();
        let cfg = SynthConfig::new(p, 40, 1.0, 1);
        let syn = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sparsity(&syn.states).unwrap(), 1.0);
        assert_eq!(syn.states.horizon(), 41);
        assert_eq!(syn.meter.len(), 41);
    }

    #[test]
    fn synthesize_switch_count() {
        let p = AppliancePowerVector::new(vec![10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        let cfg = SynthConfig::new(p, 101, 0.9, 2);
        let syn = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let switches: usize = syn.states.switches().iter().map(|d| d.support()).sum();
        // Binomial(505, 0.1).
        let trials = 5.0 * 101.0;
        let sigma = (trials * 0.1 * 0.9f64).sqrt();
        assert!((switches as f64 - trials * 0.1).abs() < 4.0 * sigma, "{switches}");
    }

    #[test]
    fn synthesize_is_deterministic() {
        let p = AppliancePowerVector::new(vec![10.0, 20.0]).unwrap();
        let mut cfg = SynthConfig::new(p, 30, 0.7, 3);
        cfg.consumption_jitter = 0.1;
        let a = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_free_synthesis_recovers_powers() {
        let p = AppliancePowerVector::new(vec![12.5, 80.0, 3.0, 1500.0]).unwrap();
        let cfg = SynthConfig::new(p.clone(), 200, 0.8, 4);
        let syn = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let est = estimate_powers(&syn.trace, &syn.states).unwrap();
        assert_eq!(est.powers(), p.powers());
    }

    #[test]
    fn sparsity_examples() {
        let constant = StateMatrix::new(vec![StateVector::from_bits(&[true, false]); 5], true).unwrap();
        assert_eq!(sparsity(&constant).unwrap(), 1.0);
        let cols: Vec<StateVector> = (0..6)
            .map(|t| StateVector::from_bits(&[t % 2 == 0, t % 2 == 1, t % 2 == 0]))
            .collect();
        assert_eq!(sparsity(&StateMatrix::new(cols, true).unwrap()).unwrap(), 0.0);
        assert!(matches!(
            sparsity(&constant.tail(4)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tr = trace(vec![vec![0.0, 1.5], vec![100.25, 0.0], vec![99.0, 2.0]]);
        let path = dir.path().join("app.csv");
        write_appliance_csv(&tr, File::create(&path).unwrap()).unwrap();
        assert_eq!(read_appliance_csv(&path).unwrap(), tr);

        let states = binarize(&tr, &tr.default_thresholds()).unwrap();
        let spath = dir.path().join("states.csv");
        write_states_csv(&states, &tr.names, 0, File::create(&spath).unwrap()).unwrap();
        assert_eq!(
            std::fs::read_to_string(&spath).unwrap(),
            "t,a1,a2\n0,0,1\n1,1,0\n2,1,1\n"
        );
        assert_eq!(read_states_csv(&spath).unwrap(), states);

        let meter = aggregate(&tr, &states).unwrap();
        let mpath = dir.path().join("meter.csv");
        write_meter_csv(&meter, File::create(&mpath).unwrap()).unwrap();
        assert_eq!(
            std::fs::read_to_string(&mpath).unwrap(),
            "t,power\n0,1.5\n1,100.25\n2,101\n"
        );
        assert_eq!(read_meter_csv(&mpath).unwrap(), meter);
    }

    #[test]
    fn csv_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time,a\n0,1\n").unwrap();
        assert!(matches!(read_appliance_csv(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "t,a\n0,x\n").unwrap();
        assert!(matches!(read_appliance_csv(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "t,a\n0,-4\n").unwrap();
        assert!(matches!(read_appliance_csv(&path), Err(Error::Format { .. })));
    }
}
