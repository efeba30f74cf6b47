use super::config::BorrowConfig;
use super::state::DecompositionState;
use crate::error::{Error, Result};
use crate::geom::DistanceMatrix;

/// Result of the borrow step for one target.
#[derive(Clone, Debug, PartialEq)]
pub enum BorrowOutcome {
    /// Not in the worst set; untouched.
    Kept,
    Adopted { donor: usize, error: f64 },
    Rerandomized,
}

/// Number of targets in the worst fraction, rounding up.
pub fn worst_count(n: usize, worst_frac: f64) -> usize {
    ((worst_frac * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize
}

/// Error at the best `accept_frac` quantile: the `ceil(accept_frac * n)`-th smallest error.
pub fn accept_threshold(errors: &[f64], accept_frac: f64) -> f64 {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (((accept_frac * sorted.len() as f64) - 1e-9).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Decides, for every target in the worst fraction, which donor to adopt.
///
/// `transplant(recipient, donor)` returns the recipient's reconstruction error under the donor's
/// variables. Donors are the `neighbors` closest targets (by `m`) outside the worst set; the first
/// whose transplant error is within the accept quantile wins. Decisions are computed from the
/// states as given, so the caller can apply them all at once.
pub fn plan_borrow<F>(errors: &[f64], m: &DistanceMatrix, cfg: &BorrowConfig, mut transplant: F) -> Result<Vec<BorrowOutcome>>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let n = errors.len();
    if m.rows() != n || m.cols() != n {
        return Err(Error::shape("borrow distance matrix", format!("{}x{} for {n} targets", m.rows(), m.cols())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut by_error: Vec<usize> = (0..n).collect();
    by_error.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let mut worst = vec![false; n];
    for &i in &by_error[..worst_count(n, cfg.worst_frac)] {
        worst[i] = true;
    }
    let threshold = accept_threshold(errors, cfg.accept_frac);
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        if !worst[r] {
            out.push(BorrowOutcome::Kept);
            continue;
        }
        let mut donors: Vec<usize> = (0..n).filter(|&d| !worst[d]).collect();
        donors.sort_by(|&a, &b| m.get(r, a).total_cmp(&m.get(r, b)).then(a.cmp(&b)));
        donors.truncate(cfg.neighbors);
        let mut outcome = BorrowOutcome::Rerandomized;
        for d in donors {
            let error = transplant(r, d)?;
            if error <= threshold {
                outcome = BorrowOutcome::Adopted { donor: d, error };
                break;
            }
        }
        out.push(outcome);
    }
    Ok(out)
}

/// Variables each recipient will take, resolved before any state is modified.
pub fn donor_snapshots(states: &[DecompositionState], plan: &[BorrowOutcome]) -> Vec<Option<DecompositionState>> {
    plan.iter()
        .map(|o| match o {
            BorrowOutcome::Adopted { donor, .. } => Some(states[*donor].clone()),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(worst_count(10, 0.6), 6);
        assert_eq!(worst_count(20, 0.6), 12);
        assert_eq!(worst_count(3, 0.6), 2);
        let e: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(accept_threshold(&e, 0.1), 0.0);
        assert_eq!(accept_threshold(&e, 0.25), 2.0);
    }

    #[test]
    fn ten_targets_six_candidates() {
        let errors: Vec<f64> = (0..10).map(|i| (i * 7 % 10) as f64).collect();
        let m = DistanceMatrix::from_fn(10, 10, |i, j| (i as f64 - j as f64).abs());
        let mut tried = std::collections::BTreeSet::new();
        let plan = plan_borrow(&errors, &m, &BorrowConfig::default(), |r, _| {
            tried.insert(r);
            Ok(f64::INFINITY)
        })
        .unwrap();
        assert_eq!(tried.len(), 6);
        assert_eq!(plan.iter().filter(|o| **o == BorrowOutcome::Rerandomized).count(), 6);
    }

    #[test]
    fn duplicate_adopts_solved_twin() {
        // Target 1 duplicates target 0, which is solved; the rest are mediocre.
        let errors = vec![0.0, 5.0, 1.0, 2.0, 3.0];
        let m = DistanceMatrix::from_fn(5, 5, |i, j| match (i.min(j), i.max(j)) {
            _ if i == j => 0.0,
            (0, 1) => 0.0,
            _ => 1.0,
        });
        let plan = plan_borrow(&errors, &m, &BorrowConfig::default(), |r, d| {
            Ok(if r == 1 && d == 0 { 0.0 } else { 10.0 })
        })
        .unwrap();
        assert_eq!(plan[1], BorrowOutcome::Adopted { donor: 0, error: 0.0 });
        assert_eq!(plan[0], BorrowOutcome::Kept);
    }

    #[test]
    fn fewer_donors_than_neighbors() {
        let errors = vec![1.0, 2.0, 3.0];
        let m = DistanceMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs());
        let mut calls = Vec::new();
        plan_borrow(&errors, &m, &BorrowConfig::default(), |r, d| {
            calls.push((r, d));
            Ok(f64::INFINITY)
        })
        .unwrap();
        assert_eq!(calls, vec![(1, 0), (2, 0)]);
    }
}
