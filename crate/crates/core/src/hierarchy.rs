//! Greedy decomposition of a diverse fleet into power-concentrated
//! hierarchies, and decoding hierarchy by hierarchy against a residual
//! meter series.

use rand::Rng;

use crate::error::{check_len, Result};
use crate::inference::{multi_shot_infer, InferenceResult};
use crate::model::{
    AppliancePowerVector, MeterSeries, SensitivityParams, StateMatrix, StateVector, SwitchVector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    /// Fleet indices, ascending by power.
    pub member_indices: Vec<usize>,
    pub power_subvector: AppliancePowerVector,
    pub n_i: usize,
    /// Smallest member power.
    pub p_min: f64,
    /// Largest sum of `u_max` fleet powers strictly below `p_min`.
    pub p_u: f64,
}

impl Hierarchy {
    pub fn max_power(&self) -> f64 {
        self.power_subvector.max_power()
    }
}

/// How the second member of a set is admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdmissionRule {
    /// A set of one admits the next appliance only if the resulting pair
    /// is good, i.e. its smaller power exceeds `2δ`.
    #[default]
    Guarded,
    /// Sets of size zero or one admit unconditionally.
    Literal,
}

/// Criterion for appending `next` to an ascending set of at least two.
fn admits(set: &[f64], next: f64, delta: f64) -> bool {
    let s = set.len();
    let half = s / 2;
    let lhs: f64 = set[..half + 1].iter().sum::<f64>() - 2.0 * delta;
    let rhs: f64 = (1..half).map(|j| set[s - j]).sum::<f64>() + next;
    lhs >= rhs
}

pub fn decompose(p: &AppliancePowerVector, delta: f64, u_max: usize) -> Vec<Hierarchy> {
    decompose_with(p, delta, u_max, AdmissionRule::default())
}

/// Builds hierarchies from the smallest power upwards and returns them
/// ordered by descending largest member.
pub fn decompose_with(
    p: &AppliancePowerVector,
    delta: f64,
    u_max: usize,
    rule: AdmissionRule,
) -> Vec<Hierarchy> {
    let powers = p.powers();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for &i in p.ascending_order() {
        let values: Vec<f64> = current.iter().map(|&j| powers[j]).collect();
        let join = match values.len() {
            0 => true,
            1 => rule == AdmissionRule::Literal || values[0] - 2.0 * delta > 0.0,
            _ => admits(&values, powers[i], delta),
        };
        if join {
            current.push(i);
        } else {
            sets.push(std::mem::replace(&mut current, vec![i]));
        }
    }
    if !current.is_empty() {
        sets.push(current);
    }

    let sorted = p.sorted_powers();
    let mut hierarchies: Vec<Hierarchy> = sets
        .into_iter()
        .map(|members| {
            let power_subvector = p.subset(&members).expect("members index the fleet");
            let p_min = members.iter().map(|&j| powers[j]).fold(f64::INFINITY, f64::min);
            let below: Vec<f64> = sorted.iter().copied().filter(|&x| x < p_min).collect();
            let p_u = below.iter().rev().take(u_max).sum();
            Hierarchy {
                n_i: members.len(),
                member_indices: members,
                power_subvector,
                p_min,
                p_u,
            }
        })
        .collect();
    hierarchies.sort_by(|a, b| b.max_power().total_cmp(&a.max_power()));
    hierarchies
}

/// `Σ_{i≤U} P_i − 2δ > Σ_{i<U} P_{S−i+1}` for every `U < S`, on ascending powers.
pub fn good_hierarchy_check(h: &Hierarchy, delta: f64) -> bool {
    is_good_set(&h.power_subvector.sorted_powers(), delta)
}

pub(crate) fn is_good_set(ascending: &[f64], delta: f64) -> bool {
    let s = ascending.len();
    let mut low = 0.0;
    let mut high = 0.0;
    for u in 1..s {
        low += ascending[u - 1];
        if u >= 2 {
            high += ascending[s + 1 - u];
        }
        if !(low - 2.0 * delta > high) {
            return false;
        }
    }
    true
}

/// Decodes hierarchies largest first, each against the readings left after
/// subtracting the contributions already inferred.
pub fn hierarchical_infer<R: Rng + ?Sized>(
    x0: &StateVector,
    y: &MeterSeries,
    p: &AppliancePowerVector,
    sens: &SensitivityParams,
    rng: &mut R,
    correction_tolerance: f64,
) -> Result<InferenceResult> {
    let hierarchies = decompose(p, sens.delta, sens.u_max);
    hierarchical_infer_with(&hierarchies, x0, y, p, sens, rng, correction_tolerance)
}

pub fn hierarchical_infer_with<R: Rng + ?Sized>(
    hierarchies: &[Hierarchy],
    x0: &StateVector,
    y: &MeterSeries,
    p: &AppliancePowerVector,
    sens: &SensitivityParams,
    rng: &mut R,
    correction_tolerance: f64,
) -> Result<InferenceResult> {
    let n = p.len();
    check_len(n, x0.len())?;
    let horizon = y.horizon();
    let mut states = vec![vec![0.0; n]; horizon];
    let mut switch_probs = vec![vec![0.0; n]; horizon];
    let mut corrections_applied = vec![0; horizon];
    let mut saturated_steps = Vec::new();
    let mut residual = y.readings().to_vec();

    for h in hierarchies {
        let x0_h = StateVector::new(h.member_indices.iter().map(|&i| x0.values()[i]).collect())?;
        let sub = multi_shot_infer(
            &x0_h,
            &MeterSeries::new(residual.clone())?,
            &h.power_subvector,
            sens,
            rng,
            correction_tolerance,
        )?;
        for (t, col) in sub.states.columns().iter().enumerate() {
            for (k, &i) in h.member_indices.iter().enumerate() {
                states[t][i] = col.values()[k];
                switch_probs[t][i] = sub.switch_probs[t].values()[k];
            }
            corrections_applied[t] += sub.corrections_applied[t];
        }
        saturated_steps.extend(sub.saturated_steps);
        // y_0 is observed with the known initial state.
        residual[0] -= h.power_subvector.dot(x0_h.values())?;
        for (t, col) in sub.states.columns().iter().enumerate() {
            residual[t + 1] -= h.power_subvector.dot(col.values())?;
        }
    }
    saturated_steps.sort_unstable();
    saturated_steps.dedup();

    Ok(InferenceResult {
        states: StateMatrix::new(
            states.into_iter().map(StateVector::new).collect::<Result<_>>()?,
            false,
        )?,
        switch_probs: switch_probs
            .into_iter()
            .map(SwitchVector::new)
            .collect::<Result<_>>()?,
        corrections_applied,
        saturated_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::check_power_concentration;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(p: &[f64]) -> AppliancePowerVector {
        AppliancePowerVector::new(p.to_vec()).unwrap()
    }

    fn member_powers(h: &Hierarchy) -> Vec<f64> {
        h.power_subvector.sorted_powers()
    }

    #[test]
    fn singleton_fleet() {
        let hs = decompose(&pv(&[7.0]), 0.5, 1);
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].member_indices, vec![0]);
        assert!(good_hierarchy_check(&hs[0], 0.5));
    }

    #[test]
    fn elephant_gets_its_own_hierarchy() {
        let hs = decompose(&pv(&[1.0, 1.0, 1.0, 10.0]), 0.1, 1);
        assert_eq!(hs.len(), 2);
        assert_eq!(member_powers(&hs[0]), vec![10.0]);
        assert_eq!(member_powers(&hs[1]), vec![1.0, 1.0, 1.0]);
        assert_eq!(hs[0].p_min, 10.0);
        assert_eq!(hs[0].p_u, 1.0);
        assert_eq!(hs[1].p_u, 0.0);
    }

    #[test]
    fn equal_powers_form_one_hierarchy() {
        for n in 1..=10 {
            let hs = decompose(&pv(&vec![5.0; n]), 0.1, 2);
            assert_eq!(hs.len(), 1, "n = {n}");
            assert_eq!(hs[0].n_i, n);
        }
    }

    #[test]
    fn good_check_examples() {
        assert!(is_good_set(&[3.0], 100.0));
        assert!(is_good_set(&[1.0, 1.0, 1.0], 0.1));
        assert!(!is_good_set(&[1.0, 10.0], 1.0));
    }

    #[test]
    fn literal_rule_can_emit_bad_pairs() {
        let p = pv(&[1.0, 10.0]);
        let literal = decompose_with(&p, 1.0, 1, AdmissionRule::Literal);
        assert_eq!(literal.len(), 1);
        assert!(!good_hierarchy_check(&literal[0], 1.0));
        let guarded = decompose(&p, 1.0, 1);
        assert_eq!(guarded.len(), 2);
        assert!(guarded.iter().all(|h| good_hierarchy_check(h, 1.0)));
    }

    #[test]
    fn small_hierarchies_satisfy_power_concentration() {
        let p = pv(&[3.0, 3.2, 3.3, 12.0, 13.0, 40.0]);
        for h in decompose(&p, 0.2, 3) {
            assert!(good_hierarchy_check(&h, 0.2));
            if h.n_i <= 3 {
                assert!(check_power_concentration(&h.power_subvector, 0.2, 3));
            }
        }
    }

    #[test]
    fn single_hierarchy_matches_multi_shot() {
        let p = pv(&[5.0, 5.5, 6.0]);
        let x0 = StateVector::from_bits(&[true, false, false]);
        let y = MeterSeries::new(vec![5.0, 11.0, 16.5, 11.0, 5.0]).unwrap();
        let sens = SensitivityParams::new(0.1, 1).unwrap();
        assert_eq!(decompose(&p, 0.1, 1).len(), 1);
        let a = hierarchical_infer(&x0, &y, &p, &sens, &mut ChaCha8Rng::seed_from_u64(4), 0.1).unwrap();
        let b = multi_shot_infer(&x0, &y, &p, &sens, &mut ChaCha8Rng::seed_from_u64(4), 0.1).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.switch_probs, b.switch_probs);
    }

    #[test]
    fn two_separated_hierarchies_decode_exactly() {
        // The 100 W hierarchy is fixed by correction; the small one sees an
        // exact residual in which only the lower-index 3 W appliance moves.
        let p = pv(&[3.0, 3.0, 100.0]);
        let sens = SensitivityParams::new(1e-9, 1).unwrap();
        let hs = decompose(&p, sens.delta, 1);
        assert_eq!(hs.len(), 2);
        assert_eq!(hs[0].member_indices, vec![2]);
        let truth = [[0, 1, 1], [1, 1, 1], [1, 1, 0], [0, 1, 0], [0, 1, 1], [1, 1, 0]];
        let y: Vec<f64> = truth
            .iter()
            .map(|r| r.iter().zip(p.powers()).map(|(&b, w)| b as f64 * w).sum())
            .collect();
        let x0 = StateVector::from_bits(&[false, true, true]);
        let out = hierarchical_infer(
            &x0,
            &MeterSeries::new(y).unwrap(),
            &p,
            &sens,
            &mut ChaCha8Rng::seed_from_u64(0),
            10.0,
        )
        .unwrap();
        for (t, col) in out.states.columns().iter().enumerate() {
            let expect: Vec<f64> = truth[t + 1].iter().map(|&b| b as f64).collect();
            assert_eq!(col.values(), expect.as_slice(), "t = {}", t + 1);
        }
    }
}
