//! The relaxed single-row L1 recovery problem and its rounding.
//!
//! For a power vector `P`, a meter jump `K` and budget `δ`, the relaxation
//!
//! ```text
//! minimize   Σ Δ_i
//! subject to K - δ ≤ Δ·P ≤ K + δ,   0 ≤ Δ_i ≤ 1
//! ```
//!
//! is a fractional knapsack: each unit of `Δ·P` costs `1 / P_i`, so filling
//! the lower target `K - δ` from the largest power down is optimal.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{AppliancePowerVector, SwitchVector};

#[derive(Debug, Clone, PartialEq)]
pub struct L1Solution {
    pub delta_star: SwitchVector,
    /// `‖Δ*‖₁`.
    pub objective: f64,
    /// `Δ*·P`.
    pub active_target: f64,
}

/// Global optimum of the boxed L1 relaxation. Ties between equal powers go
/// to the lower index.
pub fn solve_l1_boxed(p: &AppliancePowerVector, k: f64, delta: f64) -> Result<L1Solution> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::param("k", format!("{k} must be finite and >= 0")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("{delta} must be finite and >= 0")));
    }
    let n = p.len();
    if k <= delta {
        return Ok(L1Solution {
            delta_star: SwitchVector::zeros(n),
            objective: 0.0,
            active_target: 0.0,
        });
    }
    let target = k - delta;
    let capacity = p.total();
    if target > capacity {
        return Err(Error::Infeasible { target, capacity });
    }
    let powers = p.powers();
    let mut values = vec![0.0; n];
    let mut residual = target;
    for i in p.descending_order() {
        if residual <= 0.0 {
            break;
        }
        if powers[i] <= residual {
            values[i] = 1.0;
            residual -= powers[i];
        } else {
            values[i] = residual / powers[i];
            residual = 0.0;
        }
    }
    let objective = values.iter().sum();
    let active_target = p.dot(&values)?;
    Ok(L1Solution {
        delta_star: SwitchVector::new(values)?,
        objective,
        active_target,
    })
}

/// All appliances switched: the largest attainable `Δ·P`.
pub fn saturated(p: &AppliancePowerVector) -> L1Solution {
    L1Solution {
        delta_star: SwitchVector::new(vec![1.0; p.len()]).expect("ones are in range"),
        objective: p.len() as f64,
        active_target: p.total(),
    }
}

/// [`solve_l1_boxed`], falling back to [`saturated`] when `K` exceeds the
/// fleet's total power.
pub fn solve_l1_saturating(p: &AppliancePowerVector, k: f64, delta: f64) -> Result<(L1Solution, bool)> {
    match solve_l1_boxed(p, k, delta) {
        Ok(s) => Ok((s, false)),
        Err(Error::Infeasible { .. }) => Ok((saturated(p), true)),
        Err(e) => Err(e),
    }
}

/// Sets each entry to 1 independently with probability equal to its value.
pub fn round_probabilistic<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Result<SwitchVector> {
    let mut out = Vec::with_capacity(values.len());
    for (index, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain { index, value: v });
        }
        let bit = if v == 0.0 {
            0.0
        } else if v == 1.0 {
            1.0
        } else if rng.random::<f64>() < v {
            1.0
        } else {
            0.0
        };
        out.push(bit);
    }
    SwitchVector::new(out)
}

/// True iff every switch vector has at most `u_max` nonzero entries.
pub fn check_sparsity(deltas: &[SwitchVector], u_max: usize) -> bool {
    deltas.iter().all(|d| d.support() <= u_max)
}

/// Evaluates, on ascending powers, `Σ_{k≤U} P_k − Σ_{k<U} P_{N+1−k} > 2δ`
/// for every `1 ≤ U < u_max`.
pub fn check_power_concentration(p: &AppliancePowerVector, delta: f64, u_max: usize) -> bool {
    let sorted = p.sorted_powers();
    let n = sorted.len();
    let mut smallest = 0.0;
    let mut largest = 0.0;
    for u in 1..u_max.min(n + 1) {
        smallest += sorted[u - 1];
        if u >= 2 {
            largest += sorted[n + 1 - u];
        }
        if !(smallest - largest > 2.0 * delta) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(p: &[f64]) -> AppliancePowerVector {
        AppliancePowerVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn solve_examples() {
        let p = pv(&[3.0, 2.0, 1.0]);
        let s = solve_l1_boxed(&p, 0.4, 0.5).unwrap();
        assert_eq!(s.delta_star.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(s.objective, 0.0);

        let s = solve_l1_boxed(&p, 4.5, 0.5).unwrap();
        assert_eq!(s.delta_star.values(), &[1.0, 0.5, 0.0]);
        assert_eq!(s.objective, 1.5);
        assert_eq!(s.active_target, 4.0);

        assert!(matches!(
            solve_l1_boxed(&p, 7.0, 0.5),
            Err(Error::Infeasible { .. })
        ));

        let s = solve_l1_boxed(&p, 3.0, 0.0).unwrap();
        assert_eq!(s.delta_star.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn solve_fills_by_power_not_index() {
        let s = solve_l1_boxed(&pv(&[4.0, 5.0, 6.0]), 11.0, 0.5).unwrap();
        assert_abs_diff_eq!(s.delta_star.values()[0], 0.0);
        assert_abs_diff_eq!(s.delta_star.values()[1], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(s.delta_star.values()[2], 1.0);
    }

    #[test]
    fn equal_powers_break_ties_by_index() {
        let s = solve_l1_boxed(&pv(&[2.0, 2.0, 2.0]), 3.0, 0.0).unwrap();
        assert_eq!(s.delta_star.values(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn solve_rejects_bad_inputs() {
        let p = pv(&[1.0]);
        assert!(solve_l1_boxed(&p, -1.0, 0.0).is_err());
        assert!(solve_l1_boxed(&p, f64::NAN, 0.0).is_err());
        assert!(solve_l1_boxed(&p, 1.0, -0.1).is_err());
    }

    #[test]
    fn saturating_fallback() {
        let p = pv(&[3.0, 2.0, 1.0]);
        let (s, saturated) = solve_l1_saturating(&p, 7.0, 0.5).unwrap();
        assert!(saturated);
        assert_eq!(s.delta_star.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.active_target, 6.0);
        let (_, saturated) = solve_l1_saturating(&p, 6.5, 0.5).unwrap();
        assert!(!saturated);
    }

    #[test]
    fn largest_appliance_switch_is_recovered_exactly() {
        let p = pv(&[4.0, 5.0, 6.0]);
        let s = solve_l1_boxed(&p, 6.0, 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rounded = round_probabilistic(s.delta_star.values(), &mut rng).unwrap();
        assert_eq!(rounded.values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn smaller_appliance_switch_is_explained_by_the_largest() {
        // The L1 relaxation prefers a fraction of the largest appliance over
        // the whole of a smaller one: support recovery needs the switching
        // set to be a largest-power prefix.
        let p = pv(&[4.0, 5.0, 6.0]);
        let s = solve_l1_boxed(&p, 4.0, 1e-9).unwrap();
        assert_abs_diff_eq!(s.delta_star.values()[2], (4.0 - 1e-9) / 6.0, epsilon = 1e-12);
        assert!(s.objective < 1.0);
    }

    #[test]
    fn rounding_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            round_probabilistic(&[1.0, 0.0, 1.0], &mut rng).unwrap().values(),
            &[1.0, 0.0, 1.0]
        );
        assert_eq!(
            round_probabilistic(&[0.0; 3], &mut rng).unwrap().values(),
            &[0.0; 3]
        );
        assert!(matches!(
            round_probabilistic(&[0.5, 1.2], &mut rng),
            Err(Error::Domain { index: 1, .. })
        ));
    }

    #[test]
    fn rounding_frequency_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| round_probabilistic(&[0.3], &mut rng).unwrap().values()[0] == 1.0)
            .count();
        let sigma = (0.3 * 0.7 / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - 0.3).abs() < 3.0 * sigma);
    }

    #[test]
    fn sparsity_check_examples() {
        assert!(check_sparsity(&[SwitchVector::zeros(4), SwitchVector::zeros(4)], 0));
        let three = SwitchVector::from_bits(&[true, true, true, false]);
        assert!(!check_sparsity(&[SwitchVector::zeros(4), three.clone()], 2));
        assert!(check_sparsity(&[three], 3));
    }

    #[test]
    fn power_concentration_examples() {
        assert!(check_power_concentration(&pv(&[1.0, 1.0, 1.0]), 0.2, 3));
        assert!(!check_power_concentration(&pv(&[1.0, 10.0]), 1.0, 2));
        for n in 1..6 {
            let p = pv(&vec![2.5; n]);
            for u in 0..=n {
                assert!(check_power_concentration(&p, 0.0, u));
            }
        }
    }
}
