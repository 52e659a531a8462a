//! Log-domain kernels shared by the curriculum, E-step and bound computations.

use nalgebra::{DMatrix, DVector};

use crate::error::{ImcError, Result};

/// `log(sum(exp(v)))` via max-shift. `-inf` entries are allowed and drop out;
/// an all-`-inf` input yields `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(ImcError::InvalidInput("log_sum_exp of empty vector".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(ImcError::InvalidInput("log_sum_exp input contains NaN".into()));
    }
    Ok(lse_slice(values))
}

/// Max-shifted log-sum-exp without validation. Callers guarantee no NaN.
pub(crate) fn lse_unchecked(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    lse_slice(&values)
}

fn lse_slice(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Subtracts each row's log-sum-exp from that row.
///
/// Returns the normalized matrix (rows exponentiate to a probability vector)
/// and the per-row log-sum-exp that was removed.
pub fn row_log_normalize(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.iter().any(|v| v.is_nan()) {
        return Err(ImcError::InvalidInput("row_log_normalize input contains NaN".into()));
    }
    let mut out = m.clone();
    let mut lse = DVector::zeros(m.nrows());
    for (n, mut row) in out.row_iter_mut().enumerate() {
        let l = lse_unchecked(row.iter().copied());
        if l == f64::NEG_INFINITY {
            return Err(ImcError::DegenerateRow { row: n });
        }
        row.add_scalar_mut(-l);
        lse[n] = l;
    }
    Ok((out, lse))
}

/// `x * ln(x)` with the `0 * ln 0 = 0` convention.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `p * log_term` treating a zero weight as annihilating an infinite log.
pub(crate) fn weighted_log(p: f64, log_term: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * log_term
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn lse_symmetric_pair() {
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]).unwrap(), LN_2, epsilon = 1e-15);
    }

    #[test]
    fn lse_neg_inf_drops_out() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 3.0]).unwrap(), 3.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn lse_rejects_nan_and_empty() {
        assert!(matches!(log_sum_exp(&[1.0, f64::NAN]), Err(ImcError::InvalidInput(_))));
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn lse_large_magnitudes_stay_finite() {
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert_abs_diff_eq!(v, 1000.0 + LN_2, epsilon = 1e-12);
        let v = log_sum_exp(&[-1000.0, -1001.0]).unwrap();
        assert!(v.is_finite());
    }

    /// 100 entries drawn uniformly from [-50, 50]; the reference value was
    /// computed with 256-bit mpmath arithmetic.
    #[test]
    fn lse_matches_high_precision_reference() {
        let v = crate::numeric::tests::fixture::HP_VALUES;
        let got = log_sum_exp(&v).unwrap();
        assert!(
            (got - fixture::HP_LSE).abs() <= 1e-12,
            "got {got}, want {}",
            fixture::HP_LSE
        );
    }

    #[test]
    fn normalize_examples() {
        let (n, l) = row_log_normalize(&DMatrix::from_row_slice(1, 2, &[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(n[(0, 0)], -LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(n[(0, 1)], -LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(l[0], LN_2, epsilon = 1e-15);

        let (n, _) =
            row_log_normalize(&DMatrix::from_row_slice(1, 2, &[1f64.ln(), 3f64.ln()])).unwrap();
        assert_abs_diff_eq!(n[(0, 0)], 0.25f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(n[(0, 1)], 0.75f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn normalize_degenerate_row_is_named() {
        let m = DMatrix::from_row_slice(
            3,
            2,
            &[0.0, 1.0, 2.0, 3.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
        );
        match row_log_normalize(&m) {
            Err(ImcError::DegenerateRow { row }) => assert_eq!(row, 2),
            other => panic!("expected degenerate row, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn normalized_rows_sum_to_one(
            data in proptest::collection::vec(-300.0f64..300.0, 24),
        ) {
            let m = DMatrix::from_row_slice(8, 3, &data);
            let (n, _) = row_log_normalize(&m).unwrap();
            for row in n.row_iter() {
                let s: f64 = row.iter().map(|v| v.exp()).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn lse_shift_equivariant_and_permutation_invariant(
            mut v in proptest::collection::vec(-50.0f64..50.0, 1..40),
            c in -100.0f64..100.0,
        ) {
            let base = log_sum_exp(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!((log_sum_exp(&shifted).unwrap() - (base + c)).abs() < 1e-12);
            v.reverse();
            let half = v.len() / 2;
            v.rotate_left(half);
            prop_assert!((log_sum_exp(&v).unwrap() - base).abs() < 1e-12);
        }
    }

    pub(super) mod fixture {
        include!("../tests/data/lse_reference.rs");
    }
}
