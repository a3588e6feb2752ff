//! Exponential mixture densities (normalized weighted geometric means) of
//! finite-set distributions.
//!
//! Fusing two finite-set densities as a whole ("P2" fusion) produces a
//! cardinality pmf `p_w(n) ∝ p_i(n)^(1-w) p_j(n)^w z_w(n)` that is modulated by
//! the localisation scale factors `z_w(n)`. [`cardinality_emd`] is the
//! decoupled alternative that drops the `z_w(n)` factors.
//!
//! Fractional powers of zero probabilities follow `0^a = 0` for `a > 0`, so on
//! the open interval the fused support is the intersection of the input
//! supports; at the endpoints the corresponding input is reproduced.

use crate::error::{FusionError, Result};
use crate::gaussian::{gaussian_emd_params, gaussian_emd_scale};
use crate::model::{
    CardinalityPmf, Divergence, FiniteSetDistribution, GridDensity, LocalisationDensity,
};
use crate::quadrature::grid_z_omega;
use crate::scalar::{compensated_sum, log_pow_weight, pow_weight, Real};

pub(crate) fn check_weight<T: Real>(omega: T) -> Result<()> {
    if !(omega >= T::zero() && omega <= T::one()) {
        return Err(FusionError::InvalidParameter(format!(
            "weight {} outside [0, 1]",
            omega.as_f64()
        )));
    }
    Ok(())
}

/// Localisation scale factor `int rho_i^(1-w) rho_j^w`, exactly one at the
/// endpoints.
pub fn localisation_scale<T: Real>(
    rho_i: &LocalisationDensity<T>,
    rho_j: &LocalisationDensity<T>,
    omega: T,
) -> Result<T> {
    check_weight(omega)?;
    if rho_i.dim() != rho_j.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: rho_i.dim(),
            actual: rho_j.dim(),
        });
    }
    match (rho_i, rho_j) {
        (LocalisationDensity::Gaussian(a), LocalisationDensity::Gaussian(b)) => {
            gaussian_emd_scale(a, b, omega)
        }
        (LocalisationDensity::Grid(a), LocalisationDensity::Grid(b)) => {
            if !a.layout().is_aligned(b.layout()) {
                return Err(FusionError::MisalignedGrids);
            }
            if omega == T::zero() || omega == T::one() {
                Ok(T::one())
            } else {
                grid_z_omega(a, b, omega)
            }
        }
        _ => Err(FusionError::IncompatibleRepresentations),
    }
}

/// Single-object EMD `rho_i^(1-w) rho_j^w / z_w` and its scale `z_w`.
pub fn localisation_emd<T: Real>(
    rho_i: &LocalisationDensity<T>,
    rho_j: &LocalisationDensity<T>,
    omega: T,
) -> Result<(LocalisationDensity<T>, T)> {
    let z = localisation_scale(rho_i, rho_j, omega)?;
    if omega == T::zero() {
        return Ok((rho_i.clone(), z));
    }
    if omega == T::one() {
        return Ok((rho_j.clone(), z));
    }
    let fused = match (rho_i, rho_j) {
        (LocalisationDensity::Gaussian(a), LocalisationDensity::Gaussian(b)) => {
            LocalisationDensity::Gaussian(gaussian_emd_params(a, b, omega)?)
        }
        (LocalisationDensity::Grid(a), LocalisationDensity::Grid(b)) => {
            if z <= T::zero() {
                return Err(FusionError::InvalidDensity(
                    "localisation densities have disjoint supports".into(),
                ));
            }
            let w_i = T::one() - omega;
            let values = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(&x, &y)| pow_weight(x, w_i) * pow_weight(y, omega) / z)
                .collect();
            LocalisationDensity::Grid(GridDensity::new(a.layout().clone(), values)?)
        }
        _ => return Err(FusionError::IncompatibleRepresentations),
    };
    Ok((fused, z))
}

/// Normalizes log-weights; fails when every weight vanishes.
fn normalize_log_weights<T: Real>(logs: Vec<T>) -> Result<(CardinalityPmf<T>, T)> {
    let max = logs
        .iter()
        .copied()
        .filter(|l| l.is_finite_value())
        .fold(T::neg_infinity(), |m, l| m.max(l));
    if !max.is_finite_value() {
        return Err(FusionError::IncompatibleSupports);
    }
    let weights: Vec<T> = logs
        .into_iter()
        .map(|l| if l.is_finite_value() { (l - max).exp() } else { T::zero() })
        .collect();
    let total = compensated_sum(weights.iter().copied());
    let norm = max.exp() * total;
    Ok((CardinalityPmf::from_weights(weights)?, norm))
}

/// Cardinality pmf of the P2 finite-set EMD and its normalizer `N_w`:
/// `p_w(n) = p_i(n)^(1-w) p_j(n)^w z(n) / N_w`.
///
/// `z_seq[0]` must be one and `z_seq` must cover the longer input support.
pub fn fused_cardinality_p2<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    z_seq: &[T],
    omega: T,
) -> Result<(CardinalityPmf<T>, T)> {
    check_weight(omega)?;
    let len = p_i.probs().len().max(p_j.probs().len());
    if z_seq.len() < len {
        return Err(FusionError::InvalidParameter(format!(
            "scale sequence has {} entries, pmfs need {len}",
            z_seq.len()
        )));
    }
    if (z_seq[0] - T::one()).abs() > T::tol(1e-12) {
        return Err(FusionError::InvalidParameter("z_seq[0] must equal 1".into()));
    }
    if z_seq.iter().any(|&z| !z.is_finite_value() || z < T::zero()) {
        return Err(FusionError::InvalidParameter(
            "scale factors must be finite and nonnegative".into(),
        ));
    }
    let w_i = T::one() - omega;
    let logs = (0..len)
        .map(|n| {
            let lz = if z_seq[n] > T::zero() { z_seq[n].ln() } else { T::neg_infinity() };
            log_pow_weight(p_i.prob(n), w_i) + log_pow_weight(p_j.prob(n), omega) + lz
        })
        .collect();
    normalize_log_weights(logs)
}

/// EMD of two cardinality pmfs, `p_i^(1-w) p_j^w / Ñ_w`, and `Ñ_w`.
pub fn cardinality_emd<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    omega: T,
) -> Result<(CardinalityPmf<T>, T)> {
    check_weight(omega)?;
    let len = p_i.probs().len().max(p_j.probs().len());
    if omega == T::zero() {
        return Ok((p_i.padded(len - 1), T::one()));
    }
    if omega == T::one() {
        return Ok((p_j.padded(len - 1), T::one()));
    }
    let w_i = T::one() - omega;
    let logs = (0..len)
        .map(|n| log_pow_weight(p_i.prob(n), w_i) + log_pow_weight(p_j.prob(n), omega))
        .collect();
    normalize_log_weights(logs)
}

/// Outcome of whole-distribution (P2) EMD fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct P2Fusion<T: Real> {
    pub fused: FiniteSetDistribution<T>,
    /// Single-object localisation scale `z_w`.
    pub z_omega: T,
    /// Fused existence probability, rate or cardinality normalizer,
    /// depending on the family.
    pub parameter: T,
}

/// Bernoulli EMD: `α_w = α_i^(1-w) α_j^w z / ((1-α_i)^(1-w) (1-α_j)^w + α_i^(1-w) α_j^w z)`.
pub fn bernoulli_fuse_p2<T: Real>(
    f_i: &FiniteSetDistribution<T>,
    f_j: &FiniteSetDistribution<T>,
    omega: T,
) -> Result<P2Fusion<T>> {
    let (
        FiniteSetDistribution::Bernoulli { alpha: a_i, loc: rho_i },
        FiniteSetDistribution::Bernoulli { alpha: a_j, loc: rho_j },
    ) = (f_i, f_j)
    else {
        return Err(FusionError::FamilyMismatch(f_i.family().name(), f_j.family().name()));
    };
    let (loc, z) = localisation_emd(rho_i, rho_j, omega)?;
    let p_i = CardinalityPmf::from_weights(vec![T::one() - *a_i, *a_i])?;
    let p_j = CardinalityPmf::from_weights(vec![T::one() - *a_j, *a_j])?;
    let (card, _) = fused_cardinality_p2(&p_i, &p_j, &[T::one(), z], omega).map_err(|e| match e {
        FusionError::IncompatibleSupports => FusionError::IncompatibleExistence,
        other => other,
    })?;
    let alpha = card.prob(1);
    Ok(P2Fusion {
        fused: FiniteSetDistribution::Bernoulli { alpha, loc },
        z_omega: z,
        parameter: alpha,
    })
}

/// Poisson EMD: `λ_w = λ_i^(1-w) λ_j^w z_w` with the single-object EMD as
/// localisation.
pub fn poisson_fuse_p2<T: Real>(
    f_i: &FiniteSetDistribution<T>,
    f_j: &FiniteSetDistribution<T>,
    omega: T,
) -> Result<P2Fusion<T>> {
    let (
        FiniteSetDistribution::Poisson { lambda: l_i, loc: rho_i },
        FiniteSetDistribution::Poisson { lambda: l_j, loc: rho_j },
    ) = (f_i, f_j)
    else {
        return Err(FusionError::FamilyMismatch(f_i.family().name(), f_j.family().name()));
    };
    let (loc, z) = localisation_emd(rho_i, rho_j, omega)?;
    let lambda = pow_weight(*l_i, T::one() - omega) * pow_weight(*l_j, omega) * z;
    Ok(P2Fusion {
        fused: FiniteSetDistribution::Poisson { lambda, loc },
        z_omega: z,
        parameter: lambda,
    })
}

/// IID-cluster EMD: cardinality from [`fused_cardinality_p2`] with the
/// geometric sequence `z_w^n`; the reported parameter is `N_w`.
pub fn iid_fuse_p2<T: Real>(
    f_i: &FiniteSetDistribution<T>,
    f_j: &FiniteSetDistribution<T>,
    omega: T,
    n_max: usize,
) -> Result<P2Fusion<T>> {
    let (
        FiniteSetDistribution::IidCluster { card: p_i, loc: rho_i },
        FiniteSetDistribution::IidCluster { card: p_j, loc: rho_j },
    ) = (f_i, f_j)
    else {
        return Err(FusionError::FamilyMismatch(f_i.family().name(), f_j.family().name()));
    };
    let (loc, z) = localisation_emd(rho_i, rho_j, omega)?;
    let n_max = n_max.max(p_i.n_max()).max(p_j.n_max());
    let z_seq = geometric_sequence(z, n_max);
    let (card, norm) = fused_cardinality_p2(p_i, p_j, &z_seq, omega)?;
    Ok(P2Fusion {
        fused: FiniteSetDistribution::IidCluster { card, loc },
        z_omega: z,
        parameter: norm,
    })
}

/// P2 fusion dispatched on the input family.
pub fn fuse_p2<T: Real>(
    f_i: &FiniteSetDistribution<T>,
    f_j: &FiniteSetDistribution<T>,
    omega: T,
    n_max: usize,
) -> Result<P2Fusion<T>> {
    if f_i.family() != f_j.family() {
        return Err(FusionError::FamilyMismatch(f_i.family().name(), f_j.family().name()));
    }
    match f_i {
        FiniteSetDistribution::Bernoulli { .. } => bernoulli_fuse_p2(f_i, f_j, omega),
        FiniteSetDistribution::Poisson { .. } => poisson_fuse_p2(f_i, f_j, omega),
        FiniteSetDistribution::IidCluster { .. } => iid_fuse_p2(f_i, f_j, omega, n_max),
    }
}

/// `[1, z, z^2, ..., z^n_max]`.
pub fn geometric_sequence<T: Real>(z: T, n_max: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut acc = T::one();
    for _ in 0..=n_max {
        out.push(acc);
        acc *= z;
    }
    out
}

/// Weighted KLD cost `(1-w) D(g || f_i) + w D(g || f_j)`, minimized over `g`
/// by the EMD of `f_i` and `f_j`.
pub fn variational_objective<T: Real, D: Divergence<T>>(g: &D, f_i: &D, f_j: &D, omega: T) -> Result<T> {
    check_weight(omega)?;
    Ok((T::one() - omega) * g.divergence(f_i)? + omega * g.divergence(f_j)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianDensity, GridLayout};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn pmf(p: &[f64]) -> CardinalityPmf<f64> {
        CardinalityPmf::new(p.to_vec()).unwrap()
    }

    fn gauss(mean: [f64; 2]) -> LocalisationDensity<f64> {
        GaussianDensity::isotropic(DVector::from_row_slice(&mean), 1.0).unwrap().into()
    }

    #[test]
    fn p2_identical_unit_scales() {
        let p = pmf(&[0.1, 0.3, 0.6]);
        let (f, n) = fused_cardinality_p2(&p, &p, &[1.0, 1.0, 1.0], 0.37).unwrap();
        assert_relative_eq!(n, 1.0, epsilon = 1e-14);
        for (a, b) in f.probs().iter().zip(p.probs()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn p2_bernoulli_hand_value() {
        let p = pmf(&[0.2, 0.8]);
        let (f, n) = fused_cardinality_p2(&p, &p, &[1.0, 0.5], 0.5).unwrap();
        assert_relative_eq!(f.prob(1), 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(n, 0.6, epsilon = 1e-14);
    }

    #[test]
    fn p2_disjoint_supports() {
        let a = pmf(&[1.0, 0.0]);
        let b = pmf(&[0.0, 1.0]);
        let err = fused_cardinality_p2(&a, &b, &[1.0, 0.5], 0.5).unwrap_err();
        assert_eq!(err.to_string(), "incompatible cardinality supports");
        assert!(cardinality_emd(&a, &b, 0.5).is_err());
    }

    #[test]
    fn p2_rejects_bad_scale_sequence() {
        let p = pmf(&[0.2, 0.8]);
        assert!(fused_cardinality_p2(&p, &p, &[0.9, 0.5], 0.5).is_err());
        assert!(fused_cardinality_p2(&p, &p, &[1.0], 0.5).is_err());
    }

    #[test]
    fn cardinality_emd_values() {
        let p = pmf(&[0.2, 0.8]);
        let q = pmf(&[0.4, 0.6]);
        let (same, n) = cardinality_emd(&p, &p, 0.4).unwrap();
        assert_relative_eq!(n, 1.0, epsilon = 1e-14);
        assert_relative_eq!(same.prob(1), 0.8, epsilon = 1e-14);
        let (start, _) = cardinality_emd(&p, &q, 0.0).unwrap();
        assert_eq!(start, p);
        let (mid, _) = cardinality_emd(&p, &q, 0.5).unwrap();
        let expected = 0.48f64.sqrt() / (0.08f64.sqrt() + 0.48f64.sqrt());
        assert_relative_eq!(mid.prob(1), expected, epsilon = 1e-14);
        assert_relative_eq!(mid.prob(1), 0.71010, epsilon = 1e-5);
    }

    #[test]
    fn bernoulli_existence() {
        let f = FiniteSetDistribution::bernoulli(0.8, gauss([0.0, 0.0])).unwrap();
        let fused = bernoulli_fuse_p2(&f, &f, 0.5).unwrap();
        assert_relative_eq!(fused.parameter, 0.8, epsilon = 1e-14);
        assert_eq!(fused.z_omega, 1.0);

        let g = FiniteSetDistribution::bernoulli(0.8, gauss([2.0, 0.0])).unwrap();
        let fused = bernoulli_fuse_p2(&f, &g, 0.5).unwrap();
        let z = (-0.5f64).exp();
        assert_relative_eq!(fused.z_omega, z, max_relative = 1e-12);
        assert_relative_eq!(fused.parameter, 0.8 * z / (0.2 + 0.8 * z), max_relative = 1e-12);
    }

    #[test]
    fn bernoulli_incompatible_beliefs() {
        let sure = FiniteSetDistribution::bernoulli(1.0, gauss([0.0, 0.0])).unwrap();
        let none = FiniteSetDistribution::bernoulli(0.0, gauss([0.0, 0.0])).unwrap();
        assert_eq!(
            bernoulli_fuse_p2(&sure, &none, 0.5).unwrap_err(),
            FusionError::IncompatibleExistence
        );
        let fused = bernoulli_fuse_p2(&none, &none, 0.5).unwrap();
        assert_eq!(fused.parameter, 0.0);
    }

    #[test]
    fn poisson_rates() {
        let f = FiniteSetDistribution::poisson(2.0, gauss([0.0, 0.0])).unwrap();
        let g = FiniteSetDistribution::poisson(8.0, gauss([1.0, 0.0])).unwrap();
        let start = poisson_fuse_p2(&f, &g, 0.0).unwrap();
        assert_eq!(start.fused, f);
        let mid = poisson_fuse_p2(&f, &g, 0.5).unwrap();
        assert_relative_eq!(mid.parameter, 4.0 * mid.z_omega, max_relative = 1e-12);
        let zero = FiniteSetDistribution::poisson(0.0, gauss([0.0, 0.0])).unwrap();
        assert_eq!(poisson_fuse_p2(&zero, &g, 0.5).unwrap().parameter, 0.0);
    }

    #[test]
    fn iid_identical_keeps_cardinality() {
        let card = CardinalityPmf::binomial(5, 0.9).unwrap();
        let f = FiniteSetDistribution::iid_cluster(card.clone(), gauss([0.0, 0.0]));
        let fused = iid_fuse_p2(&f, &f, 0.5, 5).unwrap();
        if let FiniteSetDistribution::IidCluster { card: c, .. } = fused.fused {
            for (a, b) in c.probs().iter().zip(card.probs()) {
                assert_relative_eq!(a, b, epsilon = 1e-13);
            }
        } else {
            panic!("family changed");
        }
    }

    #[test]
    fn family_mismatch() {
        let f = FiniteSetDistribution::bernoulli(0.8, gauss([0.0, 0.0])).unwrap();
        let g = FiniteSetDistribution::poisson(1.0, gauss([0.0, 0.0])).unwrap();
        assert!(matches!(fuse_p2(&f, &g, 0.5, 4), Err(FusionError::FamilyMismatch(..))));
    }

    #[test]
    fn grid_emd_is_normalized() {
        let a = GaussianDensity::isotropic(DVector::from_vec(vec![0.0]), 1.0).unwrap();
        let b = GaussianDensity::isotropic(DVector::from_vec(vec![1.5]), 0.5).unwrap();
        let layout = GridLayout::covering(&[&a, &b], 6.0, 401).unwrap();
        let ga: LocalisationDensity<f64> = GridDensity::discretize(&a, layout.clone()).unwrap().into();
        let gb: LocalisationDensity<f64> = GridDensity::discretize(&b, layout).unwrap().into();
        let (fused, z) = localisation_emd(&ga, &gb, 0.3).unwrap();
        assert_relative_eq!(fused.mass(), 1.0, epsilon = 1e-12);
        let exact = gaussian_emd_scale(&a, &b, 0.3).unwrap();
        assert_relative_eq!(z, exact, max_relative = 1e-3);
    }

    #[test]
    fn mixed_representations_rejected() {
        let a = GaussianDensity::isotropic(DVector::from_vec(vec![0.0]), 1.0).unwrap();
        let layout = GridLayout::covering(&[&a], 6.0, 101).unwrap();
        let g: LocalisationDensity<f64> = GridDensity::discretize(&a, layout).unwrap().into();
        assert_eq!(
            localisation_scale(&a.clone().into(), &g, 0.5),
            Err(FusionError::IncompatibleRepresentations)
        );
    }
}
