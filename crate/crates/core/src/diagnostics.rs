//! Cardinality (in)consistency predicates and the sufficient conditions under
//! which EMD fusion is guaranteed to under-report object counts.
//!
//! Every bound here is a sufficient condition only: a triggered bound implies
//! the direct inequality on the fused object, never the converse.

use crate::emd::{cardinality_emd, check_weight, fused_cardinality_p2, geometric_sequence};
use crate::error::{FusionError, Result};
use crate::model::CardinalityPmf;
use crate::scalar::{compensated_sum, pow_weight, Real};

/// `p_fused(n) < min(p_i(n), p_j(n))`.
pub fn is_cardinality_inconsistent<T: Real>(
    p_fused: &CardinalityPmf<T>,
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    n: usize,
) -> bool {
    p_fused.prob(n) < p_i.prob(n).min(p_j.prob(n))
}

/// Counts at which the fused pmf drops below both inputs.
pub fn inconsistent_counts<T: Real>(
    p_fused: &CardinalityPmf<T>,
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
) -> Vec<usize> {
    let len = p_fused.probs().len().max(p_i.probs().len()).max(p_j.probs().len());
    (0..len)
        .filter(|&n| is_cardinality_inconsistent(p_fused, p_i, p_j, n))
        .collect()
}

fn positive_at<T: Real>(p_i: &CardinalityPmf<T>, p_j: &CardinalityPmf<T>, n: usize) -> Result<()> {
    if p_i.prob(n) > T::zero() && p_j.prob(n) > T::zero() {
        Ok(())
    } else {
        Err(FusionError::BoundUndefined(format!("zero probability at n = {n}")))
    }
}

fn geometric_weight<T: Real>(p_i: &CardinalityPmf<T>, p_j: &CardinalityPmf<T>, omega: T, n: usize) -> T {
    pow_weight(p_i.prob(n), T::one() - omega) * pow_weight(p_j.prob(n), omega)
}

/// Upper bound on `z_seq[n]` below which the P2 cardinality pmf is
/// inconsistent at `n`:
/// `sum_{n' != n} a(n') z(n') / (a(n) / min(p_i(n), p_j(n)) - a(n))`,
/// with `a = p_i^(1-w) p_j^w`.
pub fn prop1_bound<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    z_seq: &[T],
    omega: T,
    n: usize,
) -> Result<T> {
    check_weight(omega)?;
    positive_at(p_i, p_j, n)?;
    let len = p_i.probs().len().max(p_j.probs().len());
    if z_seq.len() < len {
        return Err(FusionError::InvalidParameter("scale sequence too short".into()));
    }
    let a_n = geometric_weight(p_i, p_j, omega, n);
    let others = compensated_sum(
        (0..len)
            .filter(|&k| k != n)
            .map(|k| geometric_weight(p_i, p_j, omega, k) * z_seq[k]),
    );
    let lo = p_i.prob(n).min(p_j.prob(n));
    let denom = a_n / lo - a_n;
    if denom <= T::zero() {
        // Both inputs put all mass on n; the fused pmf cannot fall below them.
        return Ok(T::zero());
    }
    Ok(others / denom)
}

/// Bernoulli specialization: `z_w` below
/// `(1-α_i)^(1-w) (1-α_j)^w / (g / min(α_i, α_j) - g)`, `g = α_i^(1-w) α_j^w`,
/// forces `α_w < min(α_i, α_j)`. Equal existence probabilities give exactly 1.
pub fn bernoulli_bound<T: Real>(alpha_i: T, alpha_j: T, omega: T) -> Result<T> {
    check_weight(omega)?;
    for a in [alpha_i, alpha_j] {
        if !(a > T::zero() && a < T::one()) {
            return Err(FusionError::BoundUndefined(format!(
                "existence probability {} not in (0, 1)",
                a.as_f64()
            )));
        }
    }
    if alpha_i == alpha_j {
        return Ok(T::one());
    }
    let w_i = T::one() - omega;
    let g = alpha_i.powf(w_i) * alpha_j.powf(omega);
    let absent = (T::one() - alpha_i).powf(w_i) * (T::one() - alpha_j).powf(omega);
    Ok(absent / (g / alpha_i.min(alpha_j) - g))
}

/// Poisson rate inconsistency: `z_w < min(λ) / max(λ)` implies
/// `λ_w < min(λ_i, λ_j)` for every weight.
pub fn poisson_inconsistency<T: Real>(lambda_i: T, lambda_j: T, z_omega: T) -> Result<(T, bool)> {
    if !(lambda_i > T::zero() && lambda_j > T::zero()) {
        return Err(FusionError::BoundUndefined("Poisson rates must be positive".into()));
    }
    let bound = lambda_i.min(lambda_j) / lambda_i.max(lambda_j);
    Ok((bound, z_omega < bound))
}

/// IID-cluster bound `I_{w,n} = (N_w min(p_i(n), p_j(n)) / (p_i(n)^(1-w) p_j(n)^w))^(1/n)`
/// where `N_w` uses the geometric scale sequence `z_w^n`.
pub fn iid_bound<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    omega: T,
    z_omega: T,
    n: usize,
) -> Result<T> {
    check_weight(omega)?;
    if n == 0 {
        return Err(FusionError::BoundUndefined("exponent 1/n undefined at n = 0".into()));
    }
    positive_at(p_i, p_j, n)?;
    let len = p_i.probs().len().max(p_j.probs().len());
    let (_, norm) = fused_cardinality_p2(p_i, p_j, &geometric_sequence(z_omega, len - 1), omega)?;
    let lo = p_i.prob(n).min(p_j.prob(n));
    let base = norm * lo / geometric_weight(p_i, p_j, omega, n);
    Ok(base.powf(T::one() / T::from_usize_lossy(n)))
}

/// Threshold `η = log(N_w γ_w) / log z_w` with
/// `γ_w = min_n min(p_i(n), p_j(n)) / (p_i(n)^(1-w) p_j(n)^w)` over the common
/// support. The P2 pmf is inconsistent at every supported `n > η`.
pub fn iid_threshold_eta<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    omega: T,
    z_omega: T,
) -> Result<T> {
    check_weight(omega)?;
    if !(z_omega > T::zero() && z_omega < T::one()) {
        return Err(FusionError::BoundUndefined(format!(
            "threshold needs z in (0, 1), got {}",
            z_omega.as_f64()
        )));
    }
    let len = p_i.probs().len().max(p_j.probs().len());
    let gamma = (0..len)
        .filter(|&n| p_i.prob(n) > T::zero() && p_j.prob(n) > T::zero())
        .map(|n| p_i.prob(n).min(p_j.prob(n)) / geometric_weight(p_i, p_j, omega, n))
        .fold(None, |acc: Option<T>, r| Some(acc.map_or(r, |m| m.min(r))))
        .ok_or(FusionError::IncompatibleSupports)?;
    let (_, norm) = fused_cardinality_p2(p_i, p_j, &geometric_sequence(z_omega, len - 1), omega)?;
    Ok((norm * gamma).ln() / z_omega.ln())
}

/// `E_{p̃_w}[z(n)] / z_seq[n]` where `p̃_w` is the cardinality EMD. Values
/// below one mark counts where the cardinality-consistent density can fall
/// below both inputs pointwise.
pub fn pointwise_ratio<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    z_seq: &[T],
    omega: T,
    n: usize,
) -> Result<T> {
    let (card, _) = cardinality_emd(p_i, p_j, omega)?;
    if z_seq.len() < card.probs().len() || n >= z_seq.len() {
        return Err(FusionError::InvalidParameter("scale sequence too short".into()));
    }
    if z_seq[n] == T::zero() {
        return Err(FusionError::BoundUndefined(format!("z_seq[{n}] is zero")));
    }
    let expectation = compensated_sum(card.probs().iter().zip(z_seq).map(|(&p, &z)| p * z));
    Ok(expectation / z_seq[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pmf(p: &[f64]) -> CardinalityPmf<f64> {
        CardinalityPmf::new(p.to_vec()).unwrap()
    }

    #[test]
    fn identical_pmfs_are_consistent() {
        let p = pmf(&[0.1, 0.2, 0.7]);
        assert!(inconsistent_counts(&p, &p, &p).is_empty());
    }

    #[test]
    fn bernoulli_example_flags() {
        let p = pmf(&[0.2, 0.8]);
        let (fused, _) = fused_cardinality_p2(&p, &p, &[1.0, 0.5], 0.5).unwrap();
        assert!(is_cardinality_inconsistent(&fused, &p, &p, 1));
        assert!(!is_cardinality_inconsistent(&fused, &p, &p, 0));
    }

    #[test]
    fn prop1_bound_bernoulli_pair() {
        // sum_{n' != 1} a z = 0.2; a(1)/min - a(1) = 1 - 0.8
        let p = pmf(&[0.2, 0.8]);
        let bound = prop1_bound(&p, &p, &[1.0, 0.5], 0.5, 1).unwrap();
        assert_relative_eq!(bound, 1.0, epsilon = 1e-12);
        let (fused, _) = fused_cardinality_p2(&p, &p, &[1.0, 0.2], 0.5).unwrap();
        assert!(is_cardinality_inconsistent(&fused, &p, &p, 1));
    }

    #[test]
    fn prop1_bound_unit_scales_never_trigger() {
        let p = pmf(&[0.3, 0.3, 0.4]);
        for n in 0..3 {
            let bound = prop1_bound(&p, &p, &[1.0, 1.0, 1.0], 0.4, n).unwrap();
            assert!(!(1.0 < bound - 1e-12));
        }
        assert!(prop1_bound(&pmf(&[0.0, 1.0]), &p, &[1.0; 3], 0.4, 0).is_err());
    }

    #[test]
    fn bernoulli_bound_equal_alphas_is_one() {
        assert_eq!(bernoulli_bound(0.8, 0.8, 0.3).unwrap(), 1.0);
        assert!(bernoulli_bound(1.0, 0.8, 0.3).is_err());
        assert!(bernoulli_bound(0.0, 0.8, 0.3).is_err());
    }

    #[test]
    fn bernoulli_bound_matches_scan() {
        let (ai, aj, w) = (0.9f64, 0.5f64, 0.5f64);
        let bound = bernoulli_bound(ai, aj, w).unwrap();
        let alpha = |z: f64| {
            let g = ai.powf(1.0 - w) * aj.powf(w) * z;
            g / ((1.0f64 - ai).powf(1.0 - w) * (1.0f64 - aj).powf(w) + g)
        };
        // the condition is exact for this formula: scan both sides
        for k in 1..1000 {
            let z = k as f64 / 1000.0;
            if (z - bound).abs() < 1e-9 {
                continue;
            }
            assert_eq!(z < bound, alpha(z) < ai.min(aj), "z = {z}");
        }
    }

    #[test]
    fn poisson_bound_cases() {
        let (b, t) = poisson_inconsistency(3.0, 3.0, 0.99).unwrap();
        assert_eq!(b, 1.0);
        assert!(t);
        let (b, t) = poisson_inconsistency(2.0, 8.0, 0.2).unwrap();
        assert_eq!(b, 0.25);
        assert!(t);
        let (_, t) = poisson_inconsistency(2.0, 8.0, 0.4).unwrap();
        assert!(!t);
        // sufficient, not necessary: lambda_w(0.5) = 4 * 0.4 = 1.6 < 2
        assert!(4.0 * 0.4 < 2.0);
        assert!(poisson_inconsistency(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn iid_bound_inverse_identity() {
        let p = CardinalityPmf::binomial(5, 0.95).unwrap();
        let q = CardinalityPmf::binomial(5, 0.92).unwrap();
        let (w, z) = (0.4f64, 0.6f64);
        let (_, norm) = fused_cardinality_p2(&p, &q, &geometric_sequence(z, 5), w).unwrap();
        for n in 1..=5 {
            let i: f64 = iid_bound(&p, &q, w, z, n).unwrap();
            let a = p.prob(n).powf(1.0 - w) * q.prob(n).powf(w);
            assert_relative_eq!(i.powi(n as i32) * a / norm, p.prob(n).min(q.prob(n)), max_relative = 1e-10);
        }
        assert!(iid_bound(&p, &q, w, z, 0).is_err());
    }

    #[test]
    fn iid_bound_increases_with_count() {
        let p = CardinalityPmf::binomial(5, 0.95).unwrap();
        let q = CardinalityPmf::binomial(5, 0.92).unwrap();
        let bounds: Vec<f64> = (1..=5).map(|n| iid_bound(&p, &q, 0.5, 0.5, n).unwrap()).collect();
        for w in bounds.windows(2) {
            assert!(w[1] > w[0], "{bounds:?}");
        }
    }

    #[test]
    fn eta_cases() {
        let p = pmf(&[0.2, 0.3, 0.5]);
        let eta = iid_threshold_eta(&p, &p, 0.5, 0.5).unwrap();
        let norm: f64 = 0.2 + 0.3 * 0.5 + 0.5 * 0.25;
        assert_relative_eq!(eta, norm.ln() / 0.5f64.ln(), max_relative = 1e-12);
        assert!(eta > 0.0);
        assert!(iid_threshold_eta(&p, &p, 0.5, 1.0).is_err());
        let near_one = iid_threshold_eta(&p, &pmf(&[0.3, 0.3, 0.4]), 0.5, 1.0 - 1e-12).unwrap();
        assert!(near_one > 1e6);
    }

    #[test]
    fn pointwise_ratio_values() {
        let p = pmf(&[0.2, 0.8]);
        assert_relative_eq!(pointwise_ratio(&p, &p, &[1.0, 1.0], 0.5, 1).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(pointwise_ratio(&p, &p, &[1.0, 0.5], 0.5, 1).unwrap(), 1.2, epsilon = 1e-14);
        let q = CardinalityPmf::poisson(3.0, 40).unwrap();
        let z = geometric_sequence(0.5, 40);
        assert!(pointwise_ratio(&q, &q, &z, 0.5, 30).unwrap() > 1.0);
        assert!(pointwise_ratio(&p, &p, &[1.0, 0.0], 0.5, 1).is_err());
    }
}
