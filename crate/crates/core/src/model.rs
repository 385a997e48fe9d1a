//! Shared domain types: appliance powers, state and switch vectors, meter
//! series and privacy configuration.

use std::sync::OnceLock;

use crate::error::{check_len, Error, Result};

/// Mean on-power of each appliance, in watts, kept in input order.
#[derive(Debug, Clone)]
pub struct AppliancePowerVector {
    powers: Vec<f64>,
    names: Vec<String>,
    l2_norm: f64,
    ascending: OnceLock<Vec<usize>>,
}

impl PartialEq for AppliancePowerVector {
    fn eq(&self, other: &Self) -> bool {
        self.powers == other.powers && self.names == other.names
    }
}

impl AppliancePowerVector {
    /// Builds a vector with default names `app_1..app_N`.
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        let names = (1..=powers.len()).map(|i| format!("app_{i}")).collect();
        Self::with_names(powers, names)
    }

    pub fn with_names(powers: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if powers.is_empty() {
            return Err(Error::EmptyInput("appliance power vector"));
        }
        check_len(powers.len(), names.len())?;
        if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::param("powers", format!("{p} is not a positive finite power")));
        }
        let l2_norm = powers.iter().map(|p| p * p).sum::<f64>().sqrt();
        Ok(Self {
            powers,
            names,
            l2_norm,
            ascending: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn max_power(&self) -> f64 {
        self.powers.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Indices sorted by ascending power; equal powers keep index order.
    pub fn ascending_order(&self) -> &[usize] {
        self.ascending.get_or_init(|| {
            let mut idx: Vec<usize> = (0..self.powers.len()).collect();
            idx.sort_by(|&a, &b| self.powers[a].total_cmp(&self.powers[b]).then(a.cmp(&b)));
            idx
        })
    }

    /// Indices sorted by descending power; equal powers keep index order.
    pub fn descending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.powers.len()).collect();
        idx.sort_by(|&a, &b| self.powers[b].total_cmp(&self.powers[a]).then(a.cmp(&b)));
        idx
    }

    /// Powers sorted ascending.
    pub fn sorted_powers(&self) -> Vec<f64> {
        self.ascending_order().iter().map(|&i| self.powers[i]).collect()
    }

    /// Restriction to the given appliance indices, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension {
                expected: n,
                actual: bad + 1,
            });
        }
        Self::with_names(
            indices.iter().map(|&i| self.powers[i]).collect(),
            indices.iter().map(|&i| self.names[i].clone()).collect(),
        )
    }

    /// Inner product `x · P`.
    pub fn dot(&self, x: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        Ok(x.iter().zip(&self.powers).map(|(a, b)| a * b).sum())
    }
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain { index, value });
        }
    }
    Ok(())
}

macro_rules! unit_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                check_unit_interval(&values)?;
                Ok(Self(values))
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn from_bits(bits: &[bool]) -> Self {
                Self(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn is_binary(&self) -> bool {
                self.0.iter().all(|&v| v == 0.0 || v == 1.0)
            }

            /// Number of nonzero entries.
            pub fn support(&self) -> usize {
                self.0.iter().filter(|&&v| v != 0.0).count()
            }
        }
    };
}

unit_vector!(
    /// Appliance states at one slot; binary, or probabilities of being on.
    StateVector
);
unit_vector!(
    /// Per-appliance switch indicators (or switch probabilities) between two slots.
    SwitchVector
);

/// States over a horizon, one column per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    columns: Vec<StateVector>,
    ground_truth: bool,
}

impl StateMatrix {
    pub fn new(columns: Vec<StateVector>, ground_truth: bool) -> Result<Self> {
        if let Some(first) = columns.first() {
            let n = first.len();
            for c in &columns {
                check_len(n, c.len())?;
            }
        }
        if ground_truth {
            if let Some((t, _)) = columns.iter().enumerate().find(|(_, c)| !c.is_binary()) {
                return Err(Error::param(
                    "columns",
                    format!("ground-truth column {t} is not binary"),
                ));
            }
        }
        Ok(Self {
            columns,
            ground_truth,
        })
    }

    pub fn columns(&self) -> &[StateVector] {
        &self.columns
    }

    pub fn horizon(&self) -> usize {
        self.columns.len()
    }

    pub fn n_appliances(&self) -> usize {
        self.columns.first().map_or(0, StateVector::len)
    }

    pub fn is_ground_truth(&self) -> bool {
        self.ground_truth
    }

    pub fn is_binary(&self) -> bool {
        self.columns.iter().all(StateVector::is_binary)
    }

    /// Columns from `start` onwards.
    pub fn tail(&self, start: usize) -> Self {
        Self {
            columns: self.columns[start.min(self.columns.len())..].to_vec(),
            ground_truth: self.ground_truth,
        }
    }

    /// Rows restricted to `indices`, in that order.
    pub fn select_appliances(&self, indices: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| StateVector(indices.iter().map(|&i| c.0[i]).collect()))
                .collect(),
            ground_truth: self.ground_truth,
        }
    }

    /// Switch vectors `|X_t - X_{t-1}|` for consecutive columns.
    pub fn switches(&self) -> Vec<SwitchVector> {
        self.columns
            .windows(2)
            .map(|w| {
                SwitchVector(
                    w[0].0
                        .iter()
                        .zip(&w[1].0)
                        .map(|(a, b)| (b - a).abs())
                        .collect(),
                )
            })
            .collect()
    }
}

/// Aggregate meter readings `y_0..y_T` with optional per-slot bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    readings: Vec<f64>,
    bounds: Option<Vec<(f64, f64)>>,
}

impl MeterSeries {
    pub fn new(readings: Vec<f64>) -> Result<Self> {
        if let Some(r) = readings.iter().find(|r| !r.is_finite()) {
            return Err(Error::param("readings", format!("{r} is not finite")));
        }
        Ok(Self {
            readings,
            bounds: None,
        })
    }

    pub fn with_bounds(readings: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let mut series = Self::new(readings)?;
        check_len(series.readings.len(), bounds.len())?;
        for (index, (&y, &(lower, upper))) in series.readings.iter().zip(&bounds).enumerate() {
            if lower > upper {
                return Err(Error::Bounds {
                    index,
                    lower,
                    upper,
                });
            }
            if y < lower || y > upper {
                return Err(Error::param(
                    "readings",
                    format!("reading {y} at index {index} lies outside [{lower}, {upper}]"),
                ));
            }
        }
        series.bounds = Some(bounds);
        Ok(series)
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    /// Number of transitions, `T` for `T + 1` readings.
    pub fn horizon(&self) -> usize {
        self.readings.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Laplace,
    Staircase,
    None,
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "laplace" => Ok(Mechanism::Laplace),
            "staircase" => Ok(Mechanism::Staircase),
            "none" => Ok(Mechanism::None),
            other => Err(Error::param("mechanism", format!("unknown mechanism `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mechanism::Laplace => "laplace",
            Mechanism::Staircase => "staircase",
            Mechanism::None => "none",
        })
    }
}

/// Privacy level, sensitivity and noise source for one injection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub epsilon: f64,
    /// Sensitivity of a reading, watts.
    pub delta_f: f64,
    pub mechanism: Mechanism,
    pub seed: u64,
    /// Floor noisy readings at zero. Off by default; clamping biases `K_t`.
    pub clamp: bool,
}

impl DpConfig {
    pub fn new(epsilon: f64, delta_f: f64, mechanism: Mechanism, seed: u64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            delta_f,
            mechanism,
            seed,
            clamp: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta_f: 0.0,
            mechanism: Mechanism::None,
            seed: 0,
            clamp: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mechanism != Mechanism::None && !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", format!("{} must be > 0", self.epsilon)));
        }
        if !(self.delta_f >= 0.0) || !self.delta_f.is_finite() {
            return Err(Error::param("delta_f", format!("{} must be >= 0", self.delta_f)));
        }
        Ok(())
    }

    /// Laplace scale `Δf / ε`.
    pub fn laplace_scale(&self) -> f64 {
        self.delta_f / self.epsilon
    }
}

/// Fluctuation budget `δ` and switch-count bound `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityParams {
    pub delta: f64,
    pub u_max: usize,
}

impl SensitivityParams {
    pub fn new(delta: f64, u_max: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("delta", format!("{delta} must be > 0")));
        }
        if u_max == 0 {
            return Err(Error::param("u_max", "must be >= 1"));
        }
        Ok(Self { delta, u_max })
    }

    /// Reading sensitivity `Δf = δ / 2`.
    pub fn delta_f(&self) -> f64 {
        self.delta / 2.0
    }
}

/// Elementwise product of two equal-length sequences.
pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// `X ⊙ (1 − Δ) + (1 − X) ⊙ Δ`: flips each state with the given probability.
pub fn apply_switch(x_prev: &StateVector, delta: &SwitchVector) -> Result<StateVector> {
    check_len(x_prev.len(), delta.len())?;
    let values = x_prev
        .0
        .iter()
        .zip(&delta.0)
        .map(|(&x, &d)| (x * (1.0 - d) + (1.0 - x) * d).clamp(0.0, 1.0))
        .collect();
    Ok(StateVector(values))
}
