//! Bound tables, optionally with measured register usage alongside.

use std::io::Write;

use serde::Serialize;
use setspace::bounds::{bounds, fmt3};
use setspace::protocol::{ProtocolKind, ProtocolParams};

use crate::measure::sequential_solo;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundsRow {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub repeated_lower: usize,
    pub repeated_upper: usize,
    pub one_shot_lower: usize,
    pub one_shot_upper: usize,
    /// Three decimals.
    pub anonymous_one_shot_lower: String,
    pub anonymous_one_shot_min: usize,
    pub anonymous_one_shot_upper: usize,
    pub anonymous_repeated_lower: usize,
    pub anonymous_repeated_upper: usize,
    pub measured_one_shot: Option<usize>,
    pub measured_repeated: Option<usize>,
    pub measured_anonymous: Option<usize>,
}

pub fn bounds_row(n: usize, m: usize, k: usize, measure: bool) -> Result<BoundsRow, CliError> {
    let b = bounds(n, m, k).map_err(|e| CliError::Config(e.to_string()))?;
    let measured = |kind: ProtocolKind| -> Result<Option<usize>, CliError> {
        if !measure {
            return Ok(None);
        }
        let mut p = ProtocolParams::new(kind, n, m, k)?;
        if kind != ProtocolKind::OneShot {
            p = p.with_instances(2)?;
        }
        Ok(Some(sequential_solo(&p)?.0.touched))
    };
    Ok(BoundsRow {
        n,
        m,
        k,
        repeated_lower: b.repeated_lower,
        repeated_upper: b.repeated_upper,
        one_shot_lower: b.one_shot_lower,
        one_shot_upper: b.one_shot_upper,
        anonymous_one_shot_lower: fmt3(b.anonymous_one_shot_lower),
        anonymous_one_shot_min: b.anonymous_one_shot_min,
        anonymous_one_shot_upper: b.anonymous_one_shot_upper,
        anonymous_repeated_lower: b.anonymous_repeated_lower,
        anonymous_repeated_upper: b.anonymous_repeated_upper,
        measured_one_shot: measured(ProtocolKind::OneShot)?,
        measured_repeated: measured(ProtocolKind::Repeated)?,
        measured_anonymous: measured(ProtocolKind::Anonymous)?,
    })
}

/// Every valid `(n, m, k)` with `n` in `n_range`, in lexicographic order.
pub fn sweep(
    n_range: std::ops::RangeInclusive<usize>,
    measure: bool,
) -> Result<Vec<BoundsRow>, CliError> {
    let mut rows = Vec::new();
    for n in n_range {
        for k in 1..n {
            for m in 1..=k {
                rows.push(bounds_row(n, m, k, measure)?);
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BoundsRow], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_counts_points() {
        // n=3: (k,m) in {(1,1),(2,1),(2,2)}; n=4 adds six
        assert_eq!(sweep(3..=4, false).unwrap().len(), 9);
    }

    #[test]
    fn measured_matches_layout() {
        let r = bounds_row(4, 1, 2, true).unwrap();
        assert_eq!(r.measured_one_shot, Some(r.one_shot_upper));
        assert_eq!(r.measured_repeated, Some(r.repeated_upper));
        // the anonymous layout also writes H
        assert_eq!(r.measured_anonymous, Some(r.anonymous_one_shot_upper + 1));
    }
}
