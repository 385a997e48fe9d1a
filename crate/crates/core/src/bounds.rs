//! Closed-form accuracy bounds under Laplace noise: the one-shot lower and
//! upper bounds, their multi-shot lift, and the hierarchical recursion.
//!
//! Every evaluator returns raw values alongside values clamped to `[0, 1]`;
//! the raw formulas leave the unit interval in strong-noise regimes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::model::AppliancePowerVector;

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// One evaluated bound with its named intermediate constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTerm {
    pub raw: f64,
    pub clamped: f64,
    pub intermediates: BTreeMap<String, f64>,
}

impl BoundTerm {
    fn new(raw: f64, intermediates: impl IntoIterator<Item = (&'static str, f64)>) -> Self {
        Self {
            raw,
            clamped: clamp01(raw),
            intermediates: intermediates.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lower: f64,
    pub upper: f64,
    pub clamped_lower: f64,
    pub clamped_upper: f64,
    pub intermediates: BTreeMap<String, f64>,
}

impl BoundReport {
    fn from_terms(lower: BoundTerm, upper: BoundTerm) -> Self {
        let mut intermediates = lower.intermediates;
        intermediates.extend(upper.intermediates);
        Self {
            lower: lower.raw,
            upper: upper.raw,
            clamped_lower: lower.clamped,
            clamped_upper: upper.clamped,
            intermediates,
        }
    }
}

/// Reading of the subset-bounded constant `δ_S` for a single-row operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RipInterpretation {
    /// `max_{|U|≤S} |‖P_U‖² − 1|` on the unit-normalized power vector.
    #[default]
    SubsetNorm,
    /// Singular values of the `1 × |U|` row `P_U`; at least 1 once `S ≥ 2`.
    SingularValue,
}

impl std::str::FromStr for RipInterpretation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "subset-norm" => Ok(Self::SubsetNorm),
            "singular-value" => Ok(Self::SingularValue),
            other => Err(Error::param("interpretation", format!("unknown `{other}`"))),
        }
    }
}

/// `δ_S` for subsets of at most `s` appliances.
///
/// Under `SubsetNorm` the squared norm of a subset grows with inclusion, so
/// the extreme deviations are attained by prefixes of the ascending or
/// descending order; only those prefixes are scanned.
pub fn rip_constant(p: &AppliancePowerVector, s: usize, interpretation: RipInterpretation) -> Result<f64> {
    let n = p.len();
    if s == 0 || s > n {
        return Err(Error::param("s", format!("{s} must lie in [1, {n}]")));
    }
    let norm_sq = p.l2_norm() * p.l2_norm();
    let unit_sq: Vec<f64> = p.sorted_powers().iter().map(|x| x * x / norm_sq).collect();
    let mut worst: f64 = 0.0;
    match interpretation {
        RipInterpretation::SubsetNorm => {
            let mut low = 0.0;
            let mut high = 0.0;
            for k in 0..s {
                low += unit_sq[k];
                high += unit_sq[n - 1 - k];
                worst = worst.max((low - 1.0).abs()).max((high - 1.0).abs());
            }
        }
        RipInterpretation::SingularValue => {
            // |U| = 1: the single singular value is |p_i|.
            for &q in &unit_sq {
                worst = worst.max((1.0 - q).max(q - 1.0));
            }
            if s >= 2 {
                // σ_min = 0 for any wider row.
                let mut high = 0.0;
                for k in 0..s {
                    high += unit_sq[n - 1 - k];
                    worst = worst.max(1.0).max(high - 1.0);
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantC {
    /// The value bounds should use: the override if given, else `computed`.
    pub value: Option<f64>,
    /// `None` when the formula is undefined.
    pub computed: Option<f64>,
    pub overridden: bool,
}

/// `C(P) = 4 / ((√(3(1−δ_{4U})) − √(1+δ_{3U})) ‖P‖₂)`. Subset sizes above `N`
/// are capped at `N`.
pub fn c_of_p(
    p: &AppliancePowerVector,
    u_max: usize,
    interpretation: RipInterpretation,
    override_value: Option<f64>,
) -> Result<ConstantC> {
    let n = p.len();
    let u = u_max.max(1);
    let d3 = rip_constant(p, (3 * u).min(n), interpretation)?;
    let d4 = rip_constant(p, (4 * u).min(n), interpretation)?;
    let computed = if d4 >= 1.0 {
        None
    } else {
        let gap = (3.0 * (1.0 - d4)).sqrt() - (1.0 + d3).sqrt();
        (gap > 0.0).then(|| 4.0 / (gap * p.l2_norm()))
    };
    Ok(ConstantC {
        value: override_value.or(computed),
        computed,
        overridden: override_value.is_some(),
    })
}

/// `C(P)` from explicit `δ_{3U}`, `δ_{4U}` and `‖P‖₂`.
pub fn c_from_constants(delta_3u: f64, delta_4u: f64, p_norm: f64) -> Option<f64> {
    if delta_4u >= 1.0 {
        return None;
    }
    let gap = (3.0 * (1.0 - delta_4u)).sqrt() - (1.0 + delta_3u).sqrt();
    (gap > 0.0).then(|| 4.0 / (gap * p_norm))
}

/// One-shot lower bound:
/// `1 − (4Cδε + 8δε + 3δ)/(4εN) + (A₁ε + B₁)/(4εN) · e^{−2εb/δ}`.
pub fn lower_bound_one_shot(delta: f64, epsilon: f64, n: usize, c: f64) -> BoundTerm {
    let nf = n as f64;
    let b = 2.0 * (nf - (2.0 + c) * delta);
    let a1 = 2.0 * nf - 4.0 * delta - 2.0 * c * delta;
    let b1 = 3.0 * delta;
    let denom = 4.0 * epsilon * nf;
    let main = (4.0 * c * delta * epsilon + 8.0 * delta * epsilon + 3.0 * delta) / denom;
    let tail = (a1 * epsilon + b1) / denom * (-2.0 * epsilon * b / delta).exp();
    BoundTerm::new(
        1.0 - main + tail,
        [("C(P)", c), ("b", b), ("A1", a1), ("B1", b1)],
    )
}

/// One-shot upper bound:
/// `1 + (A₂ε² + B₂ε + C₂)/(8δεN‖P‖) · e^{−2εm/δ} − (16δε² + 4δε + 3δ)/(16εN‖P‖) · e^{−ε}`.
pub fn upper_bound_one_shot(delta: f64, epsilon: f64, n: usize, p_norm: f64) -> BoundTerm {
    let nf = n as f64;
    let np = nf * p_norm;
    let m = np + 2.0 * delta;
    let a2 = 4.0 * m * m - 8.0 * delta * m - 4.0 * m * np;
    let b2 = 6.0 * delta * m - 8.0 * delta * delta - 4.0 * delta * np;
    let c2 = 3.0 * delta * delta;
    let first = (a2 * epsilon * epsilon + b2 * epsilon + c2) / (8.0 * delta * epsilon * np)
        * (-2.0 * epsilon * m / delta).exp();
    let second = (16.0 * delta * epsilon * epsilon + 4.0 * delta * epsilon + 3.0 * delta)
        / (16.0 * epsilon * np)
        * (-epsilon).exp();
    BoundTerm::new(
        1.0 + first - second,
        [("m", m), ("A2", a2), ("B2", b2), ("C2", c2)],
    )
}

pub fn one_shot_bounds(delta: f64, epsilon: f64, n: usize, c: f64, p_norm: f64) -> BoundReport {
    BoundReport::from_terms(
        lower_bound_one_shot(delta, epsilon, n, c),
        upper_bound_one_shot(delta, epsilon, n, p_norm),
    )
}

/// Which per-step error term feeds the multi-shot lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiShotVariant {
    /// `G = 1 − bN`, as printed.
    #[default]
    AsStated,
    /// `G = (1 − b)N`, the bound the one-shot accuracy actually implies.
    Corrected,
}

impl std::str::FromStr for MultiShotVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "as-stated" => Ok(Self::AsStated),
            "corrected" => Ok(Self::Corrected),
            other => Err(Error::param("variant", format!("unknown `{other}`"))),
        }
    }
}

/// `b_m = 1 − (T−1) G / 2` from a raw one-shot lower bound `b`.
pub fn b_m(b: f64, n: usize, horizon: usize, variant: MultiShotVariant) -> f64 {
    let g = match variant {
        MultiShotVariant::AsStated => 1.0 - b * n as f64,
        MultiShotVariant::Corrected => (1.0 - b) * n as f64,
    };
    if horizon <= 1 {
        return 1.0;
    }
    1.0 - ((horizon - 1) as f64) * g / 2.0
}

/// `B_M = 1 − (1 − B) / T` from a raw one-shot upper bound `B`.
pub fn big_b_m(big_b: f64, horizon: usize) -> f64 {
    1.0 - (1.0 - big_b) / horizon as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiShotInputs {
    pub delta: f64,
    pub epsilon: f64,
    pub n: usize,
    pub horizon: usize,
    pub c: f64,
    pub p_norm: f64,
}

pub fn multi_shot_bounds(inputs: &MultiShotInputs, variant: MultiShotVariant) -> Result<BoundReport> {
    if inputs.horizon == 0 {
        return Err(Error::param("horizon", "must be >= 1"));
    }
    let lower = lower_bound_one_shot(inputs.delta, inputs.epsilon, inputs.n, inputs.c);
    let upper = upper_bound_one_shot(inputs.delta, inputs.epsilon, inputs.n, inputs.p_norm);
    let bm = b_m(lower.raw, inputs.n, inputs.horizon, variant);
    let bigm = big_b_m(upper.raw, inputs.horizon);
    let mut intermediates = lower.intermediates;
    intermediates.extend(upper.intermediates);
    intermediates.insert("b(delta,epsilon)".into(), lower.raw);
    intermediates.insert("B(delta,epsilon)".into(), upper.raw);
    intermediates.insert("b_m".into(), bm);
    intermediates.insert("B_M".into(), bigm);
    Ok(BoundReport {
        lower: bm,
        upper: bigm,
        clamped_lower: clamp01(bm),
        clamped_upper: clamp01(bigm),
        intermediates,
    })
}

/// Per-hierarchy and overall bounds for hierarchical decoding.
///
/// Hierarchy `i` (in decoding order) sees an extra disturbance
/// `δ'_i = P^i_U/2 + Σ_{k<i} N_k T (1 − m_k) ‖P_k‖₂`, with `m_k` clamped to
/// `[0, 1]`. Its bounds are `m_i = b_m(δ + 2δ'_i/(2 + C_i), ε)` and
/// `M_i = B_M(δ + δ'_i, ε)`; the overall bounds weight them by `N_i`.
pub fn hierarchical_bounds(
    hierarchies: &[Hierarchy],
    delta: f64,
    epsilon: f64,
    horizon: usize,
    c_per_hierarchy: &[Option<f64>],
    variant: MultiShotVariant,
) -> Result<BoundReport> {
    if hierarchies.is_empty() {
        return Err(Error::EmptyInput("hierarchies"));
    }
    if c_per_hierarchy.len() != hierarchies.len() {
        return Err(Error::Dimension {
            expected: hierarchies.len(),
            actual: c_per_hierarchy.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::param("horizon", "must be >= 1"));
    }
    let mut intermediates = BTreeMap::new();
    let mut carried = 0.0;
    let (mut lower_sum, mut upper_sum, mut clamped_lower_sum, mut clamped_upper_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut total = 0.0;
    for (i, (h, c)) in hierarchies.iter().zip(c_per_hierarchy).enumerate() {
        let c = c.ok_or(Error::UndefinedConstant("C(P)"))?;
        let n_i = h.n_i;
        let norm = h.power_subvector.l2_norm();
        let delta_prime = h.p_u / 2.0 + carried;
        let lower_delta = delta + 2.0 * delta_prime / (2.0 + c);
        let upper_delta = delta + delta_prime;
        let b = lower_bound_one_shot(lower_delta, epsilon, n_i, c).raw;
        let big_b = upper_bound_one_shot(upper_delta, epsilon, n_i, norm).raw;
        let m_i = b_m(b, n_i, horizon, variant);
        let big_m_i = big_b_m(big_b, horizon);
        let idx = i + 1;
        intermediates.insert(format!("delta_prime_{idx}"), delta_prime);
        intermediates.insert(format!("m_{idx}"), m_i);
        intermediates.insert(format!("M_{idx}"), big_m_i);
        intermediates.insert(format!("C_{idx}"), c);
        carried += n_i as f64 * horizon as f64 * (1.0 - clamp01(m_i)) * norm;

        let w = n_i as f64;
        total += w;
        lower_sum += m_i * w;
        upper_sum += big_m_i * w;
        clamped_lower_sum += clamp01(m_i) * w;
        clamped_upper_sum += clamp01(big_m_i) * w;
    }
    Ok(BoundReport {
        lower: lower_sum / total,
        upper: upper_sum / total,
        clamped_lower: clamped_lower_sum / total,
        clamped_upper: clamped_upper_sum / total,
        intermediates,
    })
}
