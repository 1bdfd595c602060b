use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use super::TreeError;

/// Discretization of raw 0–10 scores into three fixed values.
///
/// With `k` children per expansion, a single `high` child must outweigh `k` `mid`
/// children on average: `high + (k-1)*low > k*mid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub high: u32,
    pub mid: u32,
    pub low: u32,
    pub k: u32,
    pub high_threshold: u8,
    pub low_threshold: u8,
}

impl Default for LevelConfig {
    fn default() -> Self {
        LevelConfig { high: 5, mid: 2, low: 1, k: 3, high_threshold: 8, low_threshold: 3 }
    }
}

impl LevelConfig {
    pub fn with_levels(high: u32, mid: u32, low: u32, k: u32) -> Self {
        LevelConfig { high, mid, low, k, ..LevelConfig::default() }
    }

    /// Keeps `mid` and `low`, raising `high` to the smallest value that satisfies the
    /// averaging constraint for `k` when the current one does not.
    pub fn adjusted_for_k(self, k: u32) -> Self {
        let needed = (k * self.mid + 1).saturating_sub((k.saturating_sub(1)) * self.low);
        LevelConfig { k, high: self.high.max(needed).max(self.mid + 1), ..self }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        validate_level_config(self)
    }

    pub fn map(&self, raw: u8) -> Result<u32, TreeError> {
        map_score(raw, self)
    }
}

pub fn validate_level_config(cfg: &LevelConfig) -> Result<(), TreeError> {
    let fail = |m: String| Err(TreeError::LevelConfig(m));
    if cfg.k < 1 {
        return fail("k must be at least 1".into());
    }
    if cfg.low < 1 {
        return fail(format!("low must be at least 1, got {}", cfg.low));
    }
    if !(cfg.high > cfg.mid && cfg.mid > cfg.low) {
        return fail(format!("levels must satisfy high > mid > low, got {} > {} > {}", cfg.high, cfg.mid, cfg.low));
    }
    if !(cfg.low_threshold < cfg.high_threshold && cfg.high_threshold <= 10) {
        return fail(format!(
            "thresholds must satisfy 0 <= low_threshold < high_threshold <= 10, got {} and {}",
            cfg.low_threshold, cfg.high_threshold
        ));
    }
    let (h, m, l, k) = (cfg.high as u64, cfg.mid as u64, cfg.low as u64, cfg.k as u64);
    let lhs = h + (k - 1) * l;
    let rhs = k * m;
    if lhs <= rhs {
        return fail(format!(
            "high + (k-1) x low > k x mid violated: {h} + {}x{l} = {lhs} is not greater than {k}x{m} = {rhs}",
            k - 1
        ));
    }
    Ok(())
}

/// Maps a raw score to its level value: `>= high_threshold` is high, `<= low_threshold`
/// is low, anything in between is mid.
pub fn map_score(raw: u8, cfg: &LevelConfig) -> Result<u32, TreeError> {
    if raw > 10 {
        return Err(TreeError::ScoreOutOfRange(raw as i64));
    }
    Ok(if raw >= cfg.high_threshold {
        cfg.high
    } else if raw <= cfg.low_threshold {
        cfg.low
    } else {
        cfg.mid
    })
}

/// Arithmetic mean of integer scores in any numeric type (float or exact rational).
pub fn mean_score<T: Num + FromPrimitive>(values: &[u32]) -> Result<T, TreeError> {
    if values.is_empty() {
        return Err(TreeError::NoScores);
    }
    let sum: u64 = values.iter().map(|&v| v as u64).sum();
    let sum = T::from_u64(sum).ok_or(TreeError::NoScores)?;
    let n = T::from_usize(values.len()).ok_or(TreeError::NoScores)?;
    Ok(sum / n)
}

#[cfg(test)]
mod tests {
    use num_rational::Ratio;

    use super::*;

    #[test]
    fn default_bands() {
        let cfg = LevelConfig::default();
        assert_eq!(map_score(9, &cfg).unwrap(), 5);
        assert_eq!(map_score(2, &cfg).unwrap(), 1);
        assert_eq!(map_score(5, &cfg).unwrap(), 2);
        assert_eq!(map_score(8, &cfg).unwrap(), 5);
        assert_eq!(map_score(3, &cfg).unwrap(), 1);
        assert_eq!(map_score(4, &cfg).unwrap(), 2);
        assert_eq!(map_score(7, &cfg).unwrap(), 2);
        assert_eq!(map_score(0, &cfg).unwrap(), 1);
        assert_eq!(map_score(10, &cfg).unwrap(), 5);
        assert!(matches!(map_score(11, &cfg), Err(TreeError::ScoreOutOfRange(11))));
    }

    #[test]
    fn constraint_examples() {
        assert!(LevelConfig::with_levels(5, 2, 1, 3).validate().is_ok());
        let err = LevelConfig::with_levels(3, 2, 1, 3).validate().unwrap_err().to_string();
        assert!(err.contains("5 is not greater than 3x2 = 6"), "{err}");
        assert!(LevelConfig::with_levels(5, 2, 1, 1).validate().is_ok());
        assert!(LevelConfig::with_levels(5, 2, 1, 4).validate().is_err());
    }

    #[test]
    fn ordering_and_thresholds() {
        assert!(LevelConfig::with_levels(5, 5, 1, 1).validate().is_err());
        let mut cfg = LevelConfig::default();
        cfg.low_threshold = 8;
        assert!(cfg.validate().is_err());
        cfg = LevelConfig::default();
        cfg.high_threshold = 11;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adjusted_levels_satisfy_constraint() {
        for k in 1..=8 {
            let cfg = LevelConfig::default().adjusted_for_k(k);
            assert!(cfg.validate().is_ok(), "k={k}: {cfg:?}");
            assert_eq!((cfg.mid, cfg.low), (2, 1));
        }
        assert_eq!(LevelConfig::default().adjusted_for_k(3).high, 5);
        assert_eq!(LevelConfig::default().adjusted_for_k(4).high, 6);
        assert_eq!(LevelConfig::default().adjusted_for_k(5).high, 7);
    }

    #[test]
    fn exact_means() {
        assert_eq!(mean_score::<Ratio<i64>>(&[5, 1, 1]).unwrap(), Ratio::new(7, 3));
        assert_eq!(mean_score::<Ratio<i64>>(&[2, 2, 2]).unwrap(), Ratio::from_integer(2));
        assert_eq!(mean_score::<f64>(&[2, 2, 2]).unwrap(), 2.0);
        assert!(mean_score::<f64>(&[]).is_err());
    }
}
