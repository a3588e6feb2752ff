//! Scenario files: JSON descriptions of two finite-set distributions to fuse,
//! plus optional sweep and solver settings.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use setfuse_core::gaussian::rotated_covariance;
use setfuse_core::{CovarianceScale, FiniteSetDist, Gaussian, Grid, Layout, Localisation, NewtonConfig, Pmf};

use crate::error::CliError;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilySpec {
    Bernoulli,
    Poisson,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub family: FamilySpec,
    pub inputs: [SourceSpec; 2],
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Weight used by whole-distribution (p2) fusion.
    #[serde(default = "default_p2_omega")]
    pub p2_omega: f64,
    /// Largest cardinality considered for IID and Poisson reports.
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

fn default_p2_omega() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub cardinality: Option<CardinalitySpec>,
    pub localisation: LocalisationSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CardinalitySpec {
    Pmf(Vec<f64>),
    Binomial { trials: usize, p: f64 },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalisationSpec {
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    /// Planar Gaussian with covariance `R(phi) diag(s1, s1 / kappa) R(phi)^T`.
    Rotated {
        mean: [f64; 2],
        phi: f64,
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default)]
        det_sigma: Option<f64>,
        #[serde(default)]
        major_variance: Option<f64>,
    },
    /// Grid density stored in a separate JSON file, relative to the scenario.
    Grid { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// `[min, max, steps]`.
    #[serde(default = "default_kappa")]
    pub kappa: [f64; 3],
    #[serde(default = "default_omega")]
    pub omega: [f64; 3],
    #[serde(default)]
    pub det_sigma: Option<f64>,
    #[serde(default)]
    pub major_variance: Option<f64>,
}

fn default_kappa() -> [f64; 3] {
    [1.0, 40.0, 79.0]
}

fn default_omega() -> [f64; 3] {
    [0.0, 1.0, 101.0]
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub omega_init: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub omega_clamp: Option<f64>,
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    origin: Vec<f64>,
    cell_size: Vec<f64>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Evenly spaced points from a `[min, max, steps]` triple; endpoints exact.
pub fn linspace(spec: [f64; 3], what: &str) -> Result<Vec<f64>, CliError> {
    let [lo, hi, steps] = spec;
    if !(steps >= 1.0) || steps.fract() != 0.0 {
        return Err(input_err(format!("{what} steps must be a positive integer")));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(input_err(format!("{what} range [{lo}, {hi}] is empty")));
    }
    let n = steps as usize;
    if n == 1 {
        if lo != hi {
            return Err(input_err(format!("a single {what} point needs min = max")));
        }
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect())
}

fn covariance_scale(det_sigma: Option<f64>, major_variance: Option<f64>) -> Result<CovarianceScale<f64>, CliError> {
    match (det_sigma, major_variance) {
        (Some(_), Some(_)) => Err(input_err("give either det_sigma or major_variance, not both")),
        (Some(d), None) => Ok(CovarianceScale::Determinant(d)),
        (None, Some(v)) => Ok(CovarianceScale::MajorVariance(v)),
        (None, None) => Err(input_err("rotated covariance needs det_sigma or major_variance")),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| input_err(format!("scenario parse error: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| input_err(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.version != SCENARIO_VERSION {
            return Err(input_err(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                self.version
            )));
        }
        if !(0.0..=1.0).contains(&self.p2_omega) {
            return Err(input_err("p2_omega must lie in [0, 1]"));
        }
        for (k, src) in self.inputs.iter().enumerate() {
            let fields = (src.alpha.is_some(), src.lambda.is_some(), src.cardinality.is_some());
            let ok = match self.family {
                FamilySpec::Bernoulli => fields == (true, false, false),
                FamilySpec::Poisson => fields == (false, true, false),
                FamilySpec::Iid => fields == (false, false, true),
            };
            if !ok {
                let need = match self.family {
                    FamilySpec::Bernoulli => "alpha",
                    FamilySpec::Poisson => "lambda",
                    FamilySpec::Iid => "cardinality",
                };
                return Err(input_err(format!("input {k}: {:?} family takes exactly `{need}`", self.family)));
            }
        }
        if let Some(sweep) = &self.sweep {
            let kappas = linspace(sweep.kappa, "kappa")?;
            if kappas[0] < 1.0 {
                return Err(input_err("kappa must be at least 1"));
            }
            let omegas = linspace(sweep.omega, "omega")?;
            if omegas[0] < 0.0 || omegas[omegas.len() - 1] > 1.0 {
                return Err(input_err("omega sweep must stay in [0, 1]"));
            }
            if sweep.det_sigma.is_some() && sweep.major_variance.is_some() {
                return Err(input_err("give either det_sigma or major_variance, not both"));
            }
            for src in &self.inputs {
                if !matches!(src.localisation, LocalisationSpec::Rotated { .. }) {
                    return Err(input_err("sweeps need `rotated` localisations"));
                }
            }
        }
        self.newton_config(None).validate().map_err(|e| input_err(e.to_string()))?;
        Ok(())
    }

    /// Solver settings, with `seed` overriding the file when given.
    pub fn newton_config(&self, seed: Option<u64>) -> NewtonConfig {
        let d = NewtonConfig::default();
        let s = &self.solver;
        NewtonConfig {
            omega_init: s.omega_init.unwrap_or(d.omega_init),
            epsilon: s.epsilon.unwrap_or(d.epsilon),
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            omega_clamp: s.omega_clamp.unwrap_or(d.omega_clamp),
            mc_samples: s.mc_samples.unwrap_or(d.mc_samples),
            seed: seed.or(s.seed).unwrap_or(d.seed),
        }
    }

    /// Builds both inputs. `kappa` replaces the condition number of rotated
    /// localisations, and `scale` their covariance scale.
    pub fn build_inputs(
        &self,
        base_dir: &Path,
        kappa: Option<f64>,
        scale: Option<CovarianceScale<f64>>,
    ) -> Result<[FiniteSetDist; 2], CliError> {
        let a = self.build_source(&self.inputs[0], base_dir, kappa, scale)?;
        let b = self.build_source(&self.inputs[1], base_dir, kappa, scale)?;
        Ok([a, b])
    }

    /// Covariance scale imposed by the sweep block, if any.
    pub fn sweep_scale(&self) -> Option<CovarianceScale<f64>> {
        let sweep = self.sweep.as_ref()?;
        match (sweep.det_sigma, sweep.major_variance) {
            (Some(d), _) => Some(CovarianceScale::Determinant(d)),
            (None, Some(v)) => Some(CovarianceScale::MajorVariance(v)),
            _ => None,
        }
    }

    fn build_source(
        &self,
        src: &SourceSpec,
        base_dir: &Path,
        kappa: Option<f64>,
        scale: Option<CovarianceScale<f64>>,
    ) -> Result<FiniteSetDist, CliError> {
        let loc = build_localisation(&src.localisation, base_dir, kappa, scale)?;
        let dist = match self.family {
            FamilySpec::Bernoulli => FiniteSetDist::bernoulli(src.alpha.unwrap_or_default(), loc),
            FamilySpec::Poisson => FiniteSetDist::poisson(src.lambda.unwrap_or_default(), loc),
            FamilySpec::Iid => {
                let card = match src.cardinality.as_ref().expect("validated") {
                    CardinalitySpec::Pmf(p) => Pmf::new(p.clone()),
                    CardinalitySpec::Binomial { trials, p } => Pmf::binomial(*trials, *p),
                };
                card.map(|c| FiniteSetDist::iid_cluster(c, loc))
            }
        };
        dist.map_err(CliError::model)
    }
}

fn build_localisation(
    spec: &LocalisationSpec,
    base_dir: &Path,
    kappa_override: Option<f64>,
    scale_override: Option<CovarianceScale<f64>>,
) -> Result<Localisation, CliError> {
    match spec {
        LocalisationSpec::Gaussian { mean, covariance } => {
            let d = mean.len();
            if covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
                return Err(input_err(format!("covariance must be {d}x{d}")));
            }
            let flat: Vec<f64> = covariance.iter().flatten().copied().collect();
            let g = Gaussian::new(DVector::from_vec(mean.clone()), DMatrix::from_row_slice(d, d, &flat))
                .map_err(CliError::model)?;
            Ok(g.into())
        }
        LocalisationSpec::Rotated {
            mean,
            phi,
            kappa,
            det_sigma,
            major_variance,
        } => {
            let scale = match scale_override {
                Some(s) => s,
                None => covariance_scale(*det_sigma, *major_variance)?,
            };
            let cov = rotated_covariance(kappa_override.unwrap_or(*kappa), scale, *phi).map_err(CliError::model)?;
            let g = Gaussian::new(DVector::from_vec(mean.to_vec()), cov).map_err(CliError::model)?;
            Ok(g.into())
        }
        LocalisationSpec::Grid { path } => {
            let full = base_dir.join(path);
            let text = fs::read_to_string(&full)
                .map_err(|e| input_err(format!("cannot read grid file {}: {e}", full.display())))?;
            let file: GridFile = serde_json::from_str(&text)
                .map_err(|e| input_err(format!("grid file {}: {e}", full.display())))?;
            let layout = Layout::new(file.origin, file.cell_size, file.shape).map_err(CliError::model)?;
            Ok(Grid::new(layout, file.values).map_err(CliError::model)?.into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "family": "bernoulli",
        "inputs": [
            {"alpha": 0.8, "localisation": {"gaussian": {"mean": [0, 0], "covariance": [[1, 0], [0, 1]]}}},
            {"alpha": 0.6, "localisation": {"gaussian": {"mean": [1, 0], "covariance": [[1, 0], [0, 1]]}}}
        ]
    }"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.family, FamilySpec::Bernoulli);
        assert_eq!(s.p2_omega, 0.5);
        assert_eq!(s.newton_config(Some(7)).seed, 7);
        let [a, b] = s.build_inputs(Path::new("."), None, None).unwrap();
        assert_eq!(a.expected_count(), 0.8);
        assert_eq!(b.expected_count(), 0.6);
    }

    #[test]
    fn rejects_unknown_fields_and_versions() {
        let bad = MINIMAL.replace("\"family\"", "\"famly\"");
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Input(_))));
        let bad = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Input(_))));
        let bad = MINIMAL.replace("\"alpha\": 0.8,", "\"alpha\": 0.8, \"lambda\": 2,");
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Input(_))));
    }

    #[test]
    fn sweep_requires_rotated_inputs() {
        let bad = MINIMAL.replace("\"inputs\"", "\"sweep\": {}, \"inputs\"");
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Input(_))));
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace([1.0, 40.0, 79.0], "kappa").unwrap();
        assert_eq!(v.len(), 79);
        assert_eq!((v[0], v[18], v[38], v[78]), (1.0, 10.0, 20.0, 40.0));
        assert_eq!(linspace([1.0, 1.0, 1.0], "kappa").unwrap(), vec![1.0]);
        assert!(linspace([1.0, 2.0, 1.0], "kappa").is_err());
        assert!(linspace([1.0, 2.0, 2.5], "kappa").is_err());
    }
}
