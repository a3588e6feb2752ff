//! Weight selection by Chernoff-optimal Newton iterations, the closed forms
//! available for Bernoulli and Poisson cardinalities, and the
//! cardinality-consistent fusion built on them.
//!
//! Both iterations maximize a concave objective `G(w) = -log s(w)` where `s`
//! is either the localisation scale `z_w` or the cardinality normalizer `Ñ_w`.
//! The update is the Newton step on `G`,
//! `w <- w - s' s / (s'' s - s'^2)`, kept inside a shrinking bracket and
//! replaced by bisection whenever it leaves the bracket or the previous step
//! increased `|s'|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::emd::{cardinality_emd, check_weight, localisation_emd, localisation_scale};
use crate::error::{FusionError, Result};
use crate::gaussian::{gaussian_emd_params, gaussian_kld, gaussian_log_emd_scale};
use crate::model::{
    CardinalityPmf, Divergence, FiniteSetDistribution, LocalisationDensity,
};
use crate::quadrature::{grid_scale_derivatives, mc_z_double_prime, ScaleDerivatives};
use crate::scalar::{CompensatedSum, Real};

/// Newton iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub omega_init: f64,
    /// Iteration stops once `|w_k - w_(k-1)| <= epsilon`.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Iterates stay in `[omega_clamp, 1 - omega_clamp]`.
    pub omega_clamp: f64,
    /// Monte-Carlo draws for the Gaussian second derivative.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            omega_init: 0.5,
            epsilon: 1e-4,
            max_iters: 50,
            omega_clamp: 1e-6,
            mc_samples: 1000,
            seed: 0,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(FusionError::InvalidParameter(msg.into()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.omega_init) {
            return bad("omega_init must lie in [0, 1]");
        }
        if !(self.omega_clamp >= 0.0 && self.omega_clamp < 0.5) {
            return bad("omega_clamp must lie in [0, 0.5)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Initial,
    Newton,
    Bisection,
}

/// One evaluated iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonRecord<T> {
    pub omega: T,
    /// `-log s(w)`.
    pub objective: T,
    pub scale: T,
    pub d_scale: T,
    pub d2_scale: T,
    pub step: StepKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonTrace<T> {
    pub records: Vec<NewtonRecord<T>>,
    pub converged: bool,
    /// Number of updates performed (the initial evaluation is not counted).
    pub iterations: usize,
}

impl<T: Real> NewtonTrace<T> {
    fn empty() -> Self {
        Self {
            records: Vec::new(),
            converged: true,
            iterations: 0,
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.omega.as_f64()).collect()
    }
}

/// Conditions reported alongside a fusion result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverFlag {
    /// Identical localisation densities; the weight is fixed at 0.5.
    DegenerateLocalisation,
    /// Identical cardinality distributions; the weight is fixed at 0.5.
    DegenerateCardinality,
    /// The closed-form weight left `[0, 1]` and was clamped.
    ClosedFormClamped,
    /// The cardinality weight came from Newton iterations after the closed
    /// form was rejected.
    NewtonFallback,
}

impl SolverFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverFlag::DegenerateLocalisation => "degenerate_localisation",
            SolverFlag::DegenerateCardinality => "degenerate_cardinality",
            SolverFlag::ClosedFormClamped => "closed_form_clamped",
            SolverFlag::NewtonFallback => "newton_fallback",
        }
    }
}

/// Safeguarded maximization of `-log s(w)` given an oracle for `s`, `s'`, `s''`.
fn safeguarded_newton<T: Real, F>(config: &NewtonConfig, mut eval: F) -> Result<(T, NewtonTrace<T>)>
where
    F: FnMut(T) -> Result<ScaleDerivatives<T>>,
{
    config.validate()?;
    let clamp = T::lit(config.omega_clamp);
    let mut lo = clamp;
    let mut hi = T::one() - clamp;
    let mut omega = T::lit(config.omega_init).max(lo).min(hi);
    let eps = T::lit(config.epsilon);

    let record = |omega: T, d: &ScaleDerivatives<T>, step| NewtonRecord {
        omega,
        objective: -d.z.ln(),
        scale: d.z,
        d_scale: d.dz,
        d2_scale: d.d2z,
        step,
    };

    let mut d = eval(omega)?;
    let mut trace = NewtonTrace {
        records: vec![record(omega, &d, StepKind::Initial)],
        converged: false,
        iterations: 0,
    };
    let mut increased = false;
    for k in 1..=config.max_iters {
        if d.dz == T::zero() {
            trace.converged = true;
            return Ok((omega, trace));
        }
        // s' < 0 means the objective still increases to the right.
        if d.dz < T::zero() {
            lo = omega;
        } else {
            hi = omega;
        }
        let denom = d.d2z * d.z - d.dz * d.dz;
        let candidate = omega - d.dz * d.z / denom;
        let newton_ok = denom > T::zero() && candidate.is_finite_value() && candidate > lo && candidate < hi;
        let (next, step) = if newton_ok && !increased {
            (candidate, StepKind::Newton)
        } else {
            ((lo + hi) * T::lit(0.5), StepKind::Bisection)
        };
        let d_next = eval(next)?;
        increased = d_next.dz.abs() > d.dz.abs();
        let delta = (next - omega).abs();
        omega = next;
        d = d_next;
        log::debug!(
            "iteration {k}: {step:?} step to w = {}, |dw| = {:.3e}",
            omega.as_f64(),
            delta.as_f64()
        );
        trace.records.push(record(omega, &d, step));
        trace.iterations = k;
        if delta <= eps {
            trace.converged = true;
            return Ok((omega, trace));
        }
    }
    Err(FusionError::NotConverged {
        iterations: config.max_iters,
        omegas: trace.omegas(),
    })
}

/// `-log z_w`, the Chernoff objective of a localisation pair.
pub fn chernoff_objective<T: Real>(
    rho_i: &LocalisationDensity<T>,
    rho_j: &LocalisationDensity<T>,
    omega: T,
) -> Result<T> {
    Ok((-localisation_scale(rho_i, rho_j, omega)?.ln()).max(T::zero()))
}

/// Optimal localisation weight and the fused density at that weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalisationSolution<T: Real> {
    pub omega: T,
    pub fused: LocalisationDensity<T>,
    pub z: T,
    pub trace: NewtonTrace<T>,
    pub degenerate: bool,
}

/// Chernoff-optimal weight for two localisation densities.
///
/// Gaussian pairs take `z_w` in closed form, `z'_w` from
/// `z (D(rho_w || rho_i) - D(rho_w || rho_j))` and `z''_w` by Monte-Carlo with
/// `config.mc_samples` draws seeded from `config.seed`. Grid pairs use
/// quadrature for all three.
pub fn newton_localisation<T: Real>(
    rho_i: &LocalisationDensity<T>,
    rho_j: &LocalisationDensity<T>,
    config: &NewtonConfig,
) -> Result<LocalisationSolution<T>> {
    config.validate()?;
    if rho_i.dim() != rho_j.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: rho_i.dim(),
            actual: rho_j.dim(),
        });
    }
    if rho_i == rho_j {
        return Ok(LocalisationSolution {
            omega: T::lit(0.5),
            fused: rho_i.clone(),
            z: T::one(),
            trace: NewtonTrace::empty(),
            degenerate: true,
        });
    }
    let (omega, trace) = match (rho_i, rho_j) {
        (LocalisationDensity::Gaussian(a), LocalisationDensity::Gaussian(b)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            safeguarded_newton(config, |w| {
                let z = gaussian_log_emd_scale(a, b, w)?.exp();
                let fused = gaussian_emd_params(a, b, w)?;
                let dz = z * (gaussian_kld(&fused, a)? - gaussian_kld(&fused, b)?);
                let d2z = mc_z_double_prime(rho_i, rho_j, &fused.into(), z, config.mc_samples, &mut rng)?;
                Ok(ScaleDerivatives { z, dz, d2z: d2z.value })
            })?
        }
        (LocalisationDensity::Grid(a), LocalisationDensity::Grid(b)) => {
            safeguarded_newton(config, |w| grid_scale_derivatives(a, b, w))?
        }
        _ => return Err(FusionError::IncompatibleRepresentations),
    };
    let (fused, z) = localisation_emd(rho_i, rho_j, omega)?;
    Ok(LocalisationSolution {
        omega,
        fused,
        z,
        trace,
        degenerate: false,
    })
}

/// `Ñ_w`, `Ñ'_w` and `Ñ''_w` as exact sums over the common support.
fn cardinality_derivatives<T: Real>(p_i: &CardinalityPmf<T>, p_j: &CardinalityPmf<T>, omega: T) -> ScaleDerivatives<T> {
    let w_i = T::one() - omega;
    let mut z = CompensatedSum::new();
    let mut dz = CompensatedSum::new();
    let mut d2z = CompensatedSum::new();
    for (&a, &b) in p_i.probs().iter().zip(p_j.probs()) {
        if a > T::zero() && b > T::zero() {
            let (la, lb) = (a.ln(), b.ln());
            let base = (w_i * la + omega * lb).exp();
            let lr = lb - la;
            z.add(base);
            dz.add(base * lr);
            d2z.add(base * lr * lr);
        }
    }
    ScaleDerivatives {
        z: z.value(),
        dz: dz.value(),
        d2z: d2z.value(),
    }
}

/// Optimal cardinality weight and the cardinality EMD at that weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CardinalitySolution<T: Real> {
    pub omega: T,
    pub fused: CardinalityPmf<T>,
    pub trace: NewtonTrace<T>,
    pub degenerate: bool,
}

/// Chernoff-optimal weight for two cardinality pmfs by Newton iterations on
/// `-log Ñ_w`.
pub fn newton_cardinality<T: Real>(
    p_i: &CardinalityPmf<T>,
    p_j: &CardinalityPmf<T>,
    config: &NewtonConfig,
) -> Result<CardinalitySolution<T>> {
    config.validate()?;
    let len = p_i.probs().len().max(p_j.probs().len());
    let half = T::lit(0.5);
    if (0..len).all(|n| p_i.prob(n) == p_j.prob(n)) {
        return Ok(CardinalitySolution {
            omega: half,
            fused: p_i.padded(len - 1),
            trace: NewtonTrace::empty(),
            degenerate: true,
        });
    }
    let common = (0..len)
        .filter(|&n| p_i.prob(n) > T::zero() && p_j.prob(n) > T::zero())
        .count();
    match common {
        0 => return Err(FusionError::IncompatibleSupports),
        1 => {
            return Err(FusionError::InvalidParameter(
                "cardinality weight is undetermined with a single common support point".into(),
            ))
        }
        _ => {}
    }
    let (omega, trace) = safeguarded_newton(config, |w| Ok(cardinality_derivatives(p_i, p_j, w)))?;
    let (fused, _) = cardinality_emd(p_i, p_j, omega)?;
    Ok(CardinalitySolution {
        omega,
        fused,
        trace,
        degenerate: false,
    })
}

/// Closed-form cardinality weight and existence probability for two Bernoulli
/// distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliWeight<T> {
    pub omega: T,
    pub alpha: T,
    /// The raw weight fell outside `[0, 1]` (or was not finite) and was clamped.
    pub clamped: bool,
}

/// `w = log(-A (1 - α_i) / (α_i B)) / (B - A)` with
/// `A = log((1 - α_j) / (1 - α_i))` and `B = log(α_j / α_i)`, and
/// `α* = α_i^(1-w) α_j^w / (α_i^(1-w) α_j^w + (1-α_i)^(1-w) (1-α_j)^w)`.
pub fn bernoulli_closed_form<T: Real>(alpha_i: T, alpha_j: T) -> Result<BernoulliWeight<T>> {
    for a in [alpha_i, alpha_j] {
        if !(a > T::zero() && a < T::one()) {
            return Err(FusionError::InvalidParameter(format!(
                "existence probability {} not in (0, 1)",
                a.as_f64()
            )));
        }
    }
    let half = T::lit(0.5);
    if (alpha_i - alpha_j).abs() < T::lit(1e-12) {
        return Ok(BernoulliWeight {
            omega: half,
            alpha: alpha_i,
            clamped: false,
        });
    }
    let one = T::one();
    let a = ((one - alpha_j) / (one - alpha_i)).ln();
    let b = (alpha_j / alpha_i).ln();
    let raw = (-a * (one - alpha_i) / (alpha_i * b)).ln() / (b - a);
    let (omega, clamped) = if raw.is_finite_value() && raw >= T::zero() && raw <= one {
        (raw, false)
    } else if raw.is_finite_value() {
        (raw.max(T::zero()).min(one), true)
    } else {
        (half, true)
    };
    let w_i = one - omega;
    let present = (w_i * alpha_i.ln() + omega * alpha_j.ln()).exp();
    let absent = (w_i * (one - alpha_i).ln() + omega * (one - alpha_j).ln()).exp();
    Ok(BernoulliWeight {
        omega,
        alpha: present / (present + absent),
        clamped,
    })
}

/// Closed-form weight `w = log((r - 1) / log r) / log r`, `r = λ_j / λ_i`, and
/// fused rate `λ_i^(1-w) λ_j^w`.
pub fn poisson_closed_form<T: Real>(lambda_i: T, lambda_j: T) -> Result<(T, T)> {
    for l in [lambda_i, lambda_j] {
        if !(l > T::zero()) || !l.is_finite_value() {
            return Err(FusionError::InvalidParameter(format!(
                "Poisson rate {} must be positive",
                l.as_f64()
            )));
        }
    }
    if (lambda_i - lambda_j).abs() < T::lit(1e-12) * lambda_i.max(lambda_j) {
        return Ok((T::lit(0.5), lambda_i));
    }
    let log_r = (lambda_j / lambda_i).ln();
    let r = lambda_j / lambda_i;
    let omega = ((r - T::one()) / log_r).ln() / log_r;
    let omega = omega.max(T::zero()).min(T::one());
    let lambda = ((T::one() - omega) * lambda_i.ln() + omega * lambda_j.ln()).exp();
    Ok((omega, lambda))
}

/// `D(fused || f_i) - D(fused || f_j)`; zero at a Chernoff-optimal weight.
pub fn kld_balance_residual<T: Real, D: Divergence<T>>(fused: &D, f_i: &D, f_j: &D) -> Result<T> {
    Ok(fused.divergence(f_i)? - fused.divergence(f_j)?)
}

/// Cardinality-consistent fusion of two finite-set distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult<T: Real> {
    pub fused: FiniteSetDistribution<T>,
    pub omega_card: T,
    /// One weight per localisation problem; a single entry for the
    /// factorized families handled here.
    pub omega_loc: Vec<T>,
    /// Localisation scale at each entry of `omega_loc`.
    pub z_values: Vec<T>,
    pub flags: Vec<SolverFlag>,
    pub loc_trace: NewtonTrace<T>,
    pub card_trace: Option<NewtonTrace<T>>,
}

/// Fuses localisation and cardinality with separately optimized weights, so
/// that the fused cardinality pmf is the cardinality EMD and never drops below
/// both inputs.
pub fn consistent_fuse<T: Real>(
    f_i: &FiniteSetDistribution<T>,
    f_j: &FiniteSetDistribution<T>,
    config: &NewtonConfig,
) -> Result<FusionResult<T>> {
    if f_i.family() != f_j.family() {
        return Err(FusionError::FamilyMismatch(f_i.family().name(), f_j.family().name()));
    }
    let loc = newton_localisation(f_i.localisation(), f_j.localisation(), config)?;
    let mut flags = Vec::new();
    if loc.degenerate {
        flags.push(SolverFlag::DegenerateLocalisation);
    }
    let mut card_trace = None;
    let (fused, omega_card) = match (f_i, f_j) {
        (FiniteSetDistribution::Bernoulli { alpha: a_i, .. }, FiniteSetDistribution::Bernoulli { alpha: a_j, .. }) => {
            let cf = bernoulli_closed_form(*a_i, *a_j)?;
            let (omega, alpha) = if cf.clamped {
                flags.push(SolverFlag::ClosedFormClamped);
                flags.push(SolverFlag::NewtonFallback);
                let p_i = CardinalityPmf::from_weights(vec![T::one() - *a_i, *a_i])?;
                let p_j = CardinalityPmf::from_weights(vec![T::one() - *a_j, *a_j])?;
                let sol = newton_cardinality(&p_i, &p_j, config)?;
                card_trace = Some(sol.trace);
                (sol.omega, sol.fused.prob(1))
            } else {
                (cf.omega, cf.alpha)
            };
            if a_i == a_j {
                flags.push(SolverFlag::DegenerateCardinality);
            }
            (FiniteSetDistribution::Bernoulli { alpha, loc: loc.fused.clone() }, omega)
        }
        (FiniteSetDistribution::Poisson { lambda: l_i, .. }, FiniteSetDistribution::Poisson { lambda: l_j, .. }) => {
            let (omega, lambda) = poisson_closed_form(*l_i, *l_j)?;
            if l_i == l_j {
                flags.push(SolverFlag::DegenerateCardinality);
            }
            (FiniteSetDistribution::Poisson { lambda, loc: loc.fused.clone() }, omega)
        }
        (FiniteSetDistribution::IidCluster { card: p_i, .. }, FiniteSetDistribution::IidCluster { card: p_j, .. }) => {
            let sol = newton_cardinality(p_i, p_j, config)?;
            if sol.degenerate {
                flags.push(SolverFlag::DegenerateCardinality);
            }
            card_trace = Some(sol.trace);
            (FiniteSetDistribution::IidCluster { card: sol.fused, loc: loc.fused.clone() }, sol.omega)
        }
        _ => unreachable!("families checked above"),
    };
    check_weight(omega_card)?;
    flags.sort();
    Ok(FusionResult {
        fused,
        omega_card,
        omega_loc: vec![loc.omega],
        z_values: vec![loc.z],
        flags,
        loc_trace: loc.trace,
        card_trace,
    })
}
