use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Fraction of scores strictly above `threshold`.
    pub achieved_fraction: f64,
}

/// Smallest threshold `t`, among the observed scores and one value below the
/// minimum, such that the fraction of scores strictly above `t` does not
/// exceed `target_fraction`.
pub fn calibrate_threshold(scores: &[f64], target_fraction: f64) -> Result<Calibration> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot calibrate on an empty score set".into()));
    }
    if !(0.0..=1.0).contains(&target_fraction) {
        return Err(Error::Invalid(format!("target fraction {target_fraction} outside [0, 1]")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("scores contain NaN".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let n = scores.len() as f64;
    let candidates = std::iter::once(sorted[0].next_down()).chain(sorted.iter().copied());
    for t in candidates {
        let above = scores.iter().filter(|&&s| s > t).count() as f64 / n;
        if above <= target_fraction {
            return Ok(Calibration {
                threshold: t,
                achieved_fraction: above,
            });
        }
    }
    unreachable!("the largest score leaves nothing above it")
}
