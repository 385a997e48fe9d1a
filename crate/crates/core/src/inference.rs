//! One-shot and multi-shot switch-event inference.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::model::{
    apply_switch, AppliancePowerVector, MeterSeries, SensitivityParams, StateMatrix, StateVector,
    SwitchVector,
};
use crate::solver::{round_probabilistic, solve_l1_boxed, solve_l1_saturating, L1Solution};

/// `K_t = |y_t - y_{t-1}|`.
pub fn k_delta(y_curr: f64, y_prev: f64) -> f64 {
    (y_curr - y_prev).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneShot {
    pub solution: L1Solution,
    pub rounded: SwitchVector,
}

/// Relaxed solve for one meter jump followed by probabilistic rounding.
/// Readings may already carry injected noise.
pub fn one_shot_infer<R: Rng + ?Sized>(
    p: &AppliancePowerVector,
    y_prev: f64,
    y_curr: f64,
    sens: &SensitivityParams,
    rng: &mut R,
) -> Result<OneShot> {
    let solution = solve_l1_boxed(p, k_delta(y_curr, y_prev), sens.delta)?;
    let rounded = round_probabilistic(solution.delta_star.values(), rng)?;
    Ok(OneShot { solution, rounded })
}

/// [`one_shot_infer`] that saturates instead of failing when the jump
/// exceeds the fleet's total power. The flag reports saturation.
pub fn one_shot_infer_saturating<R: Rng + ?Sized>(
    p: &AppliancePowerVector,
    y_prev: f64,
    y_curr: f64,
    sens: &SensitivityParams,
    rng: &mut R,
) -> Result<(OneShot, bool)> {
    let (solution, saturated) = solve_l1_saturating(p, k_delta(y_curr, y_prev), sens.delta)?;
    let rounded = round_probabilistic(solution.delta_star.values(), rng)?;
    Ok((OneShot { solution, rounded }, saturated))
}

/// `1 - ‖Δ̂ - Δ⁰‖₁ / N`.
pub fn accuracy_one_shot(delta_hat: &SwitchVector, delta_true: &SwitchVector) -> Result<f64> {
    check_len(delta_true.len(), delta_hat.len())?;
    if delta_hat.is_empty() {
        return Err(Error::EmptyInput("switch vector"));
    }
    let l1: f64 = delta_hat
        .values()
        .iter()
        .zip(delta_true.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(1.0 - l1 / delta_hat.len() as f64)
}

/// `1 - ‖X̄ - X⁰‖₁ / (N T)`.
pub fn accuracy_multi_shot(result: &StateMatrix, truth: &StateMatrix) -> Result<f64> {
    check_len(truth.horizon(), result.horizon())?;
    check_len(truth.n_appliances(), result.n_appliances())?;
    let cells = result.horizon() * result.n_appliances();
    if cells == 0 {
        return Err(Error::EmptyInput("state matrix"));
    }
    let l1: f64 = result
        .columns()
        .iter()
        .zip(truth.columns())
        .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
        .sum();
    Ok(1.0 - l1 / cells as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// Rounded and corrected states `X̄_1..X̄_T`.
    pub states: StateMatrix,
    /// Relaxed switch vectors `Δ*_1..Δ*_T`.
    pub switch_probs: Vec<SwitchVector>,
    /// Bits changed by error correction at each slot.
    pub corrections_applied: Vec<usize>,
    /// Slots whose solve was infeasible and saturated.
    pub saturated_steps: Vec<usize>,
}

impl InferenceResult {
    pub fn horizon(&self) -> usize {
        self.states.horizon()
    }
}

/// Greedy correction of a rounded state against a reading.
///
/// While the estimate exceeds `y + tol`, the k-th largest appliance (k = 0,
/// 1, ...) is switched off; while it falls short of `y - tol`, the k-th
/// smallest is switched on. Each loop runs at most `N` times. Returns the
/// number of bits that changed.
pub fn correct_states(state: &mut [f64], p: &AppliancePowerVector, y: f64, tol: f64) -> Result<usize> {
    let n = p.len();
    check_len(n, state.len())?;
    let mut changed = 0;
    let estimate = p.dot(state)?;
    if estimate > y + tol {
        let order = p.descending_order();
        let mut k = 0;
        while p.dot(state)? > y + tol && k < n {
            let j = order[k];
            if state[j] != 0.0 {
                state[j] = 0.0;
                changed += 1;
            }
            k += 1;
        }
    } else if estimate < y - tol {
        let order = p.ascending_order();
        let mut k = 0;
        while p.dot(state)? < y - tol && k < n {
            let j = order[k];
            if state[j] != 1.0 {
                state[j] = 1.0;
                changed += 1;
            }
            k += 1;
        }
    }
    Ok(changed)
}

/// Chained inference over a horizon with forward state propagation,
/// per-slot rounding and greedy error correction.
///
/// States propagate through the relaxed (fractional) switch vectors; the
/// rounded, corrected states are outputs only. Correction compares against
/// the readings given, which are the noisy ones under DP.
pub fn multi_shot_infer<R: Rng + ?Sized>(
    x0: &StateVector,
    y: &MeterSeries,
    p: &AppliancePowerVector,
    sens: &SensitivityParams,
    rng: &mut R,
    correction_tolerance: f64,
) -> Result<InferenceResult> {
    check_len(p.len(), x0.len())?;
    if !x0.is_binary() {
        return Err(Error::param("x0", "initial state must be binary"));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("meter series"));
    }
    if !(correction_tolerance >= 0.0) {
        return Err(Error::param(
            "correction_tolerance",
            format!("{correction_tolerance} must be >= 0"),
        ));
    }
    let readings = y.readings();
    let horizon = y.horizon();

    let mut switch_probs = Vec::with_capacity(horizon);
    let mut saturated_steps = Vec::new();
    for t in 1..=horizon {
        let (sol, saturated) = solve_l1_saturating(p, k_delta(readings[t], readings[t - 1]), sens.delta)?;
        if saturated {
            saturated_steps.push(t);
        }
        switch_probs.push(sol.delta_star);
    }

    let mut propagated = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for delta in &switch_probs {
        x = apply_switch(&x, delta)?;
        propagated.push(x.clone());
    }

    let mut columns = Vec::with_capacity(horizon);
    let mut corrections_applied = Vec::with_capacity(horizon);
    for (t, x_t) in propagated.iter().enumerate() {
        let mut bits = round_probabilistic(x_t.values(), rng)?.into_inner();
        corrections_applied.push(correct_states(&mut bits, p, readings[t + 1], correction_tolerance)?);
        columns.push(StateVector::new(bits)?);
    }

    Ok(InferenceResult {
        states: StateMatrix::new(columns, false)?,
        switch_probs,
        corrections_applied,
        saturated_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(p: &[f64]) -> AppliancePowerVector {
        AppliancePowerVector::new(p.to_vec()).unwrap()
    }

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn k_delta_examples() {
        assert_eq!(k_delta(5.0, 3.0), 2.0);
        assert_eq!(k_delta(3.0, 5.0), 2.0);
        assert_eq!(k_delta(7.25, 7.25), 0.0);
    }

    #[test]
    fn one_shot_examples() {
        let p = pv(&[4.0, 5.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let exact = SensitivityParams { delta: 0.0, u_max: 1 };
        let out = one_shot_infer(&p, 9.0, 15.0, &exact, &mut rng).unwrap();
        assert_eq!(out.rounded.values(), &[0.0, 0.0, 1.0]);

        let sens = SensitivityParams::new(0.5, 1).unwrap();
        let out = one_shot_infer(&p, 12.0, 12.0, &sens, &mut rng).unwrap();
        assert_eq!(out.solution.delta_star.values(), &[0.0, 0.0, 0.0]);

        let out = one_shot_infer(&p, 0.0, 11.0, &sens, &mut rng).unwrap();
        let d = out.solution.delta_star.values();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.9).abs() < 1e-12);
        assert_eq!(d[2], 1.0);

        assert!(matches!(
            one_shot_infer(&p, 0.0, 100.0, &sens, &mut rng),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn one_shot_accuracy_examples() {
        let a = SwitchVector::from_bits(&[true, false, true, false]);
        assert_eq!(accuracy_one_shot(&a, &a).unwrap(), 1.0);
        let comp = SwitchVector::from_bits(&[false, true, false, true]);
        assert_eq!(accuracy_one_shot(&a, &comp).unwrap(), 0.0);
        let one_off = SwitchVector::from_bits(&[true, false, false, false]);
        assert_eq!(accuracy_one_shot(&one_off, &a).unwrap(), 0.75);
        assert!(accuracy_one_shot(&a, &SwitchVector::zeros(3)).is_err());
    }

    #[test]
    fn multi_shot_accuracy_examples() {
        let bits = |rows: &[[bool; 3]]| {
            StateMatrix::new(rows.iter().map(|r| StateVector::from_bits(r)).collect(), true).unwrap()
        };
        let truth = bits(&[
            [true, false, true],
            [false, false, true],
            [true, true, true],
            [false, false, false],
        ]);
        assert_eq!(accuracy_multi_shot(&truth, &truth).unwrap(), 1.0);
        let flipped = bits(&[
            [false, true, false],
            [true, true, false],
            [false, false, false],
            [true, true, true],
        ]);
        assert_eq!(accuracy_multi_shot(&flipped, &truth).unwrap(), 0.0);
        let three_off = bits(&[
            [false, false, true],
            [false, true, true],
            [true, true, true],
            [false, false, true],
        ]);
        assert_eq!(accuracy_multi_shot(&three_off, &truth).unwrap(), 0.75);
        assert!(accuracy_multi_shot(&truth.tail(1), &truth).is_err());
    }

    #[test]
    fn correction_switches_off_largest_first() {
        let p = pv(&[3.0, 2.0, 1.0]);
        let mut x = vec![1.0, 1.0, 0.0];
        let changed = correct_states(&mut x, &p, 3.0, 0.0).unwrap();
        assert_eq!(x, vec![0.0, 1.0, 0.0]);
        assert_eq!(p.dot(&x).unwrap(), 2.0);
        assert_eq!(changed, 1);
    }

    #[test]
    fn correction_switches_on_smallest_first() {
        let p = pv(&[3.0, 2.0, 1.0]);
        let mut x = vec![0.0, 0.0, 1.0];
        let changed = correct_states(&mut x, &p, 5.0, 0.0).unwrap();
        assert_eq!(x, vec![1.0, 1.0, 1.0]);
        assert_eq!(changed, 2);
    }

    #[test]
    fn correction_within_tolerance_is_noop() {
        let p = pv(&[3.0, 2.0, 1.0]);
        let mut x = vec![1.0, 0.0, 0.0];
        assert_eq!(correct_states(&mut x, &p, 3.4, 0.5).unwrap(), 0);
        assert_eq!(x, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn correction_terminates_when_unreachable() {
        let p = pv(&[3.0, 2.0, 1.0]);
        let mut x = vec![0.0, 0.0, 0.0];
        assert_eq!(correct_states(&mut x, &p, 100.0, 0.0).unwrap(), 3);
        let mut x = vec![1.0, 1.0, 1.0];
        assert_eq!(correct_states(&mut x, &p, -100.0, 0.0).unwrap(), 3);
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn multi_shot_tracks_largest_appliance_switches() {
        let p = pv(&[1.0, 2.0, 4.0]);
        let x0 = sv(&[1.0, 1.0, 0.0]);
        // Only the 4 W appliance toggles.
        let y = MeterSeries::new(vec![3.0, 7.0, 7.0, 3.0, 7.0]).unwrap();
        let sens = SensitivityParams::new(1e-9, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = multi_shot_infer(&x0, &y, &p, &sens, &mut rng, sens.delta).unwrap();
        let expected: Vec<Vec<f64>> = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
        ];
        let got: Vec<Vec<f64>> = out.states.columns().iter().map(|c| c.values().to_vec()).collect();
        assert_eq!(got, expected);
        assert_eq!(out.corrections_applied, vec![0; 4]);
    }

    #[test]
    fn multi_shot_edge_cases() {
        let p = pv(&[1.0, 2.0]);
        let sens = SensitivityParams::new(0.1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let single = MeterSeries::new(vec![1.0]).unwrap();
        let out = multi_shot_infer(&sv(&[1.0, 0.0]), &single, &p, &sens, &mut rng, 0.1).unwrap();
        assert_eq!(out.horizon(), 0);
        let empty = MeterSeries::new(vec![]).unwrap();
        assert!(multi_shot_infer(&sv(&[1.0, 0.0]), &empty, &p, &sens, &mut rng, 0.1).is_err());
        assert!(multi_shot_infer(&sv(&[0.5, 0.0]), &single, &p, &sens, &mut rng, 0.1).is_err());
        assert!(multi_shot_infer(&sv(&[1.0]), &single, &p, &sens, &mut rng, 0.1).is_err());
    }

    #[test]
    fn multi_shot_saturates_infeasible_jumps() {
        let p = pv(&[1.0, 2.0]);
        let sens = SensitivityParams::new(0.1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = MeterSeries::new(vec![0.0, 50.0, 3.0]).unwrap();
        let out = multi_shot_infer(&sv(&[0.0, 0.0]), &y, &p, &sens, &mut rng, 0.1).unwrap();
        assert_eq!(out.saturated_steps, vec![1, 2]);
        assert_eq!(out.horizon(), 2);
    }

    #[test]
    fn corrected_states_stay_close_to_noise_free_readings() {
        use crate::data::{synthesize, SynthConfig};
        let p = pv(&[40.0, 55.0, 60.0, 75.0, 90.0]);
        let delta = 2.0;
        let sens = SensitivityParams::new(delta, 2).unwrap();
        for seed in 0..20 {
            let cfg = SynthConfig::new(p.clone(), 60, 0.9, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let syn = synthesize(&cfg, &mut rng).unwrap();
            let x0 = syn.states.columns()[0].clone();
            let out = multi_shot_infer(&x0, &syn.meter, &p, &sens, &mut rng, delta).unwrap();
            for (t, col) in out.states.columns().iter().enumerate() {
                let gap = (p.dot(col.values()).unwrap() - syn.meter.readings()[t + 1]).abs();
                assert!(gap <= delta + p.max_power() + 1e-9, "seed {seed} t {t}: {gap}");
            }
        }
    }
}
