use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TreeError;
use crate::Scalar;

/// Softmax-over-UCB selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub temperature: f64,
    pub exploration: f64,
    pub seed: u64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy { temperature: 1.8, exploration: 1.414, seed: 0 }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(TreeError::InvalidPolicy(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.exploration.is_finite() && self.exploration >= 0.0) {
            return Err(TreeError::InvalidPolicy(format!(
                "exploration constant must be >= 0, got {}",
                self.exploration
            )));
        }
        Ok(())
    }
}

/// UCB1: mean value plus `c * sqrt(ln(parent_visits) / visits)`.
pub fn ucb_score<S: Scalar>(total: S, visits: u64, parent_visits: u64, c: S) -> Result<S, TreeError> {
    if visits == 0 {
        return Err(TreeError::ZeroVisits);
    }
    if parent_visits < visits {
        return Err(TreeError::Contract(format!("parent visits {parent_visits} below child visits {visits}")));
    }
    let n = S::count(visits);
    let explore = (S::count(parent_visits).ln() / n).sqrt();
    Ok(total / n + c * explore)
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax_probabilities<S: Scalar>(ucb: &[S], temperature: S) -> Result<Vec<S>, TreeError> {
    if ucb.is_empty() {
        return Err(TreeError::NoExpandedChildren);
    }
    if !(temperature.is_finite() && temperature > S::zero()) {
        return Err(TreeError::InvalidPolicy(format!("temperature must be > 0, got {temperature}")));
    }
    if let Some(bad) = ucb.iter().find(|u| !u.is_finite()) {
        return Err(TreeError::Contract(format!("non-finite UCB value {bad}")));
    }
    let max = ucb.iter().copied().fold(S::neg_infinity(), S::max);
    let weights: Vec<S> = ucb.iter().map(|&u| ((u - max) / temperature).exp()).collect();
    let total = weights.iter().copied().fold(S::zero(), |a, b| a + b);
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Inverse-CDF draw over a probability vector; ties resolve to the lower index.
pub fn sample_index<S: Scalar, R: Rng + ?Sized>(probs: &[S], rng: &mut R) -> usize {
    debug_assert!(!probs.is_empty());
    let u = S::lit(rng.random::<f64>());
    let mut cumulative = S::zero();
    for (i, &p) in probs.iter().enumerate() {
        cumulative = cumulative + p;
        if u < cumulative {
            return i;
        }
    }
    // rounding left the tail short of 1
    probs.iter().rposition(|&p| p > S::zero()).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb_score(0.0f64, 1, 1, 0.0).unwrap(), 0.0);
        // 7/3 + 1.414 * sqrt(ln 2), evaluated independently: 2.333333 + 1.414 * 0.832555
        let v = ucb_score(7.0f64 / 3.0, 1, 2, 1.414).unwrap();
        assert_abs_diff_eq!(v, 3.510566, epsilon = 1e-5);
        assert!(matches!(ucb_score(1.0f64, 0, 3, 1.0), Err(TreeError::ZeroVisits)));
        assert!(ucb_score(1.0f64, 4, 3, 1.0).is_err());
        assert_eq!(ucb_score(3.0f64, 2, 5, 1.414).unwrap(), ucb_score(3.0f64, 2, 5, 1.414).unwrap());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_probabilities(&[1.0f64, 1.0, 1.0], 1.8).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_eq!(softmax_probabilities(&[-42.0f64], 1.8).unwrap(), vec![1.0]);
        assert!(matches!(softmax_probabilities::<f64>(&[], 1.8), Err(TreeError::NoExpandedChildren)));
        assert!(softmax_probabilities(&[1.0f64], 0.0).is_err());
    }

    #[test]
    fn softmax_f32_agrees_with_f64() {
        let p64 = softmax_probabilities(&[2.0f64, 0.2, -1.4], 1.8).unwrap();
        let p32 = softmax_probabilities(&[2.0f32, 0.2, -1.4], 1.8).unwrap();
        for (a, b) in p64.iter().zip(p32) {
            assert_abs_diff_eq!(*a, b as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn sampling_ties_resolve_low() {
        struct Fixed(u64);
        impl rand::RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                dst.fill(0)
            }
        }
        assert_eq!(sample_index(&[0.5f64, 0.5], &mut Fixed(0)), 0);
        assert_eq!(sample_index(&[0.5f64, 0.5], &mut Fixed(u64::MAX)), 1);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -1000.0f64..1000.0,
            tau in 0.01f64..10.0,
        ) {
            let p = softmax_probabilities(&xs, tau).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let q = softmax_probabilities(&shifted, tau).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_is_monotone(xs in prop::collection::vec(-5.0f64..5.0, 2..10), tau in 0.1f64..5.0) {
            let p = softmax_probabilities(&xs, tau).unwrap();
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if xs[i] > xs[j] {
                        prop_assert!(p[i] > p[j]);
                    }
                }
            }
        }

        #[test]
        fn sampling_is_seed_deterministic(seed in any::<u64>()) {
            let probs = softmax_probabilities(&[2.0f64, 0.2, -1.4, 0.7], 1.8).unwrap();
            let draw = |s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                (0..64).map(|_| sample_index(&probs, &mut rng)).collect::<Vec<_>>()
            };
            prop_assert_eq!(draw(seed), draw(seed));
        }
    }
}
