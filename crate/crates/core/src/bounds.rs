//! Register bounds for m-obstruction-free k-set agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper register counts for one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub repeated_lower: usize,
    pub repeated_upper: usize,
    pub one_shot_lower: usize,
    pub one_shot_upper: usize,
    /// Anonymous one-shot: more than this many registers are needed.
    pub anonymous_one_shot_lower: f64,
    /// Smallest register count the anonymous one-shot lower bound allows.
    pub anonymous_one_shot_min: usize,
    pub anonymous_one_shot_upper: usize,
    pub anonymous_repeated_lower: usize,
    pub anonymous_repeated_upper: usize,
}

pub fn check_params(n: usize, m: usize, k: usize) -> Result<()> {
    if m >= 1 && m <= k && k < n {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "need 1 <= m <= k < n, got n={n} m={m} k={k}"
        )))
    }
}

pub fn bounds(n: usize, m: usize, k: usize) -> Result<Bounds> {
    check_params(n, m, k)?;
    let repeated_lower = n + m - k;
    let repeated_upper = (n + 2 * m - k).min(n);
    let anon_components = (m + 1) * (n - k) + m * m;
    let radicand = m as f64 * (n as f64 / k as f64 - 2.0);
    // a negative radicand makes the bound vacuous
    let anonymous_one_shot_lower = radicand.max(0.0).sqrt();
    Ok(Bounds {
        n,
        m,
        k,
        repeated_lower,
        repeated_upper,
        one_shot_lower: 2,
        one_shot_upper: repeated_upper,
        anonymous_one_shot_lower,
        anonymous_one_shot_min: anonymous_one_shot_lower.floor() as usize + 1,
        anonymous_one_shot_upper: anon_components,
        anonymous_repeated_lower: repeated_lower,
        anonymous_repeated_upper: anon_components + 1,
    })
}

/// Processes the gluing argument consumes against `r` registers:
/// `ceil((k+1)/m) * (m + (r^2 - r)/2)`.
pub fn gluing_processes(m: usize, k: usize, r: usize) -> usize {
    (k + 1).div_ceil(m) * (m + r * r.saturating_sub(1) / 2)
}

/// Fixed three-decimal rendering used in reports.
pub fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}
