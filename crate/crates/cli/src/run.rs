//! `fuse` and `sweep` commands.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use setfuse_core::emd::fuse_p2;
use setfuse_core::model::default_poisson_n_max;
use setfuse_core::solvers::kld_balance_residual;
use setfuse_core::{consistent_fuse, FiniteSetDist, NewtonConfig, SolverFlag};

use crate::error::CliError;
use crate::scenario::{linspace, FamilySpec, Scenario};
use crate::table::{real, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    P2,
    Consistent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::P2 => "p2",
            Mode::Consistent => "consistent",
        }
    }
}

/// Largest count worth inspecting for the cardinality report.
fn report_n_max(dists: &[&FiniteSetDist], floor: usize) -> usize {
    dists
        .iter()
        .map(|f| match f {
            FiniteSetDist::Bernoulli { .. } => 1,
            FiniteSetDist::Poisson { lambda, .. } => default_poisson_n_max(*lambda),
            FiniteSetDist::IidCluster { card, .. } => card.n_max(),
        })
        .fold(floor, usize::max)
}

/// `min_n p_fused(n) - min(p_i(n), p_j(n))` and the fused MAP count.
pub fn cardinality_margin(fused: &FiniteSetDist, f_i: &FiniteSetDist, f_j: &FiniteSetDist, floor: usize) -> (f64, usize) {
    let n_max = report_n_max(&[fused, f_i, f_j], floor);
    let mut margin = f64::INFINITY;
    let mut map = (0, f64::NEG_INFINITY);
    for n in 0..=n_max {
        let p = fused.cardinality_prob(n);
        margin = margin.min(p - f_i.cardinality_prob(n).min(f_j.cardinality_prob(n)));
        if p > map.1 {
            map = (n, p);
        }
    }
    (margin, map.0)
}

/// Single fusion outcome as reported by `fuse`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseRow {
    pub family: FamilySpec,
    pub mode: Mode,
    pub omega_card: f64,
    pub omega_loc: f64,
    pub z_omega: f64,
    pub expected_count: f64,
    pub map_n: usize,
    pub margin: f64,
    pub flags: Vec<SolverFlag>,
}

impl FuseRow {
    pub const HEADER: [&'static str; 10] = [
        "family",
        "mode",
        "omega_card",
        "omega_loc",
        "z_omega",
        "expected_count",
        "map_n",
        "margin",
        "inconsistent_flag",
        "flags",
    ];

    pub fn inconsistent(&self) -> bool {
        self.margin < 0.0
    }

    fn cells(&self) -> Vec<String> {
        let family = match self.family {
            FamilySpec::Bernoulli => "bernoulli",
            FamilySpec::Poisson => "poisson",
            FamilySpec::Iid => "iid",
        };
        let flags: Vec<&str> = self.flags.iter().map(|f| f.as_str()).collect();
        vec![
            family.to_owned(),
            self.mode.name().to_owned(),
            real(self.omega_card),
            real(self.omega_loc),
            real(self.z_omega),
            real(self.expected_count),
            self.map_n.to_string(),
            real(self.margin),
            u8::from(self.inconsistent()).to_string(),
            flags.join(";"),
        ]
    }
}

/// Fuses the scenario inputs and writes `fuse.csv` into `out`.
pub fn run_fuse(scenario: &Scenario, base_dir: &Path, mode: Mode, seed: Option<u64>, out: &Path) -> Result<FuseRow, CliError> {
    let [f_i, f_j] = scenario.build_inputs(base_dir, None, None)?;
    let floor = scenario.n_max.unwrap_or(0);
    let row = match mode {
        Mode::P2 => {
            let res = fuse_p2(&f_i, &f_j, scenario.p2_omega, floor)?;
            let (margin, map_n) = cardinality_margin(&res.fused, &f_i, &f_j, floor);
            FuseRow {
                family: scenario.family,
                mode,
                omega_card: scenario.p2_omega,
                omega_loc: scenario.p2_omega,
                z_omega: res.z_omega,
                expected_count: res.fused.expected_count(),
                map_n,
                margin,
                flags: Vec::new(),
            }
        }
        Mode::Consistent => {
            let config = scenario.newton_config(seed);
            let res = consistent_fuse(&f_i, &f_j, &config)?;
            let (margin, map_n) = cardinality_margin(&res.fused, &f_i, &f_j, floor);
            FuseRow {
                family: scenario.family,
                mode,
                omega_card: res.omega_card,
                omega_loc: res.omega_loc[0],
                z_omega: res.z_values[0],
                expected_count: res.fused.expected_count(),
                map_n,
                margin,
                flags: res.flags,
            }
        }
    };
    let mut table = Table::new(&FuseRow::HEADER);
    table.push(row.cells());
    create_dir(out)?;
    table.write(&out.join("fuse.csv"))?;
    Ok(row)
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("cannot create {}", dir.display()), e))
}

/// One `(kappa, omega)` cell of a P2 sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub kappa: f64,
    pub omega: f64,
    pub z_omega: f64,
    /// Fused existence probability, rate, or MAP count.
    pub value: f64,
    /// `min(α_i, α_j)` or `min(λ_i, λ_j)`; unused for IID clusters.
    pub min_input: f64,
    /// Bernoulli and Poisson: `value - min_input`. IID: smallest gap between
    /// the fused pmf and the pointwise minimum of the inputs.
    pub margin: f64,
}

impl SweepCell {
    pub fn inconsistent(&self) -> bool {
        self.margin < 0.0
    }
}

/// Chernoff-optimal fusion at one condition number.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalCell {
    pub kappa: f64,
    pub omega_loc: f64,
    pub z_loc: f64,
    pub iterations: usize,
    pub omega_card: f64,
    pub value: f64,
    pub kld_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub family: FamilySpec,
    pub cells: Vec<SweepCell>,
    pub optimal: Vec<OptimalCell>,
}

/// Independent seed per sweep index so results do not depend on scheduling.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn value_column(family: FamilySpec) -> &'static str {
    match family {
        FamilySpec::Bernoulli => "alpha_omega",
        FamilySpec::Poisson => "lambda_omega",
        FamilySpec::Iid => "map_n",
    }
}

impl SweepOutput {
    pub fn grid_table(&self) -> Table {
        let iid = self.family == FamilySpec::Iid;
        let mut header = vec!["kappa", "omega", "z_omega", value_column(self.family)];
        if !iid {
            header.push("min_input");
        }
        header.extend(["margin", "inconsistent_flag"]);
        let mut t = Table::new(&header);
        for c in &self.cells {
            let mut row = vec![real(c.kappa), real(c.omega), real(c.z_omega)];
            if iid {
                row.push((c.value as usize).to_string());
            } else {
                row.push(real(c.value));
                row.push(real(c.min_input));
            }
            row.push(real(c.margin));
            row.push(u8::from(c.inconsistent()).to_string());
            t.push(row);
        }
        t
    }

    pub fn optimal_table(&self) -> Table {
        let fused = match self.family {
            FamilySpec::Bernoulli => "alpha_star",
            FamilySpec::Poisson => "lambda_star",
            FamilySpec::Iid => "map_n",
        };
        let mut t = Table::new(&[
            "kappa",
            "omega_loc",
            "z_loc",
            "iterations",
            "omega_card",
            fused,
            "kld_residual",
        ]);
        for c in &self.optimal {
            let value = if self.family == FamilySpec::Iid {
                (c.value as usize).to_string()
            } else {
                real(c.value)
            };
            t.push(vec![
                real(c.kappa),
                real(c.omega_loc),
                real(c.z_loc),
                c.iterations.to_string(),
                real(c.omega_card),
                value,
                real(c.kld_residual),
            ]);
        }
        t
    }
}

fn sweep_cell(
    family: FamilySpec,
    inputs: &[FiniteSetDist; 2],
    kappa: f64,
    omega: f64,
    floor: usize,
) -> Result<SweepCell, CliError> {
    let [f_i, f_j] = inputs;
    let res = fuse_p2(f_i, f_j, omega, floor)?;
    let (value, min_input, margin) = match family {
        FamilySpec::Bernoulli | FamilySpec::Poisson => {
            let v = res.fused.expected_count();
            let lo = f_i.expected_count().min(f_j.expected_count());
            (v, lo, v - lo)
        }
        FamilySpec::Iid => {
            let (margin, map_n) = cardinality_margin(&res.fused, f_i, f_j, floor);
            (map_n as f64, f64::NAN, margin)
        }
    };
    Ok(SweepCell {
        kappa,
        omega,
        z_omega: res.z_omega,
        value,
        min_input,
        margin,
    })
}

fn optimal_cell(inputs: &[FiniteSetDist; 2], kappa: f64, config: &NewtonConfig, floor: usize) -> Result<OptimalCell, CliError> {
    let [f_i, f_j] = inputs;
    let res = consistent_fuse(f_i, f_j, config)?;
    let value = match &res.fused {
        FiniteSetDist::IidCluster { .. } => cardinality_margin(&res.fused, f_i, f_j, floor).1 as f64,
        other => other.expected_count(),
    };
    let kld_residual = kld_balance_residual(res.fused.localisation(), f_i.localisation(), f_j.localisation())?;
    Ok(OptimalCell {
        kappa,
        omega_loc: res.omega_loc[0],
        z_loc: res.z_values[0],
        iterations: res.loc_trace.iterations,
        omega_card: res.omega_card,
        value,
        kld_residual,
    })
}

/// P2 fusion over the `(kappa, omega)` grid plus Chernoff-optimal fusion at
/// every `kappa`. Rows come back sorted by `(kappa, omega)`.
pub fn sweep(scenario: &Scenario, base_dir: &Path, seed: Option<u64>, jobs: Option<usize>) -> Result<SweepOutput, CliError> {
    let spec = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Input("scenario has no sweep block".into()))?;
    let kappas = linspace(spec.kappa, "kappa")?;
    let omegas = linspace(spec.omega, "omega")?;
    let scale = scenario.sweep_scale();
    let config = scenario.newton_config(seed);
    let floor = scenario.n_max.unwrap_or(0);
    let family = scenario.family;

    let work = || -> Result<SweepOutput, CliError> {
        let inputs: Vec<[FiniteSetDist; 2]> = kappas
            .par_iter()
            .map(|&k| scenario.build_inputs(base_dir, Some(k), scale))
            .collect::<Result<_, _>>()?;
        let mut cells: Vec<SweepCell> = (0..kappas.len() * omegas.len())
            .into_par_iter()
            .map(|idx| {
                let (ki, wi) = (idx / omegas.len(), idx % omegas.len());
                sweep_cell(family, &inputs[ki], kappas[ki], omegas[wi], floor)
            })
            .collect::<Result<_, _>>()?;
        cells.sort_by(|a, b| a.kappa.total_cmp(&b.kappa).then(a.omega.total_cmp(&b.omega)));
        let optimal = (0..kappas.len())
            .into_par_iter()
            .map(|ki| {
                let cfg = NewtonConfig {
                    seed: cell_seed(config.seed, ki),
                    ..config
                };
                optimal_cell(&inputs[ki], kappas[ki], &cfg, floor)
            })
            .collect::<Result<_, _>>()?;
        Ok(SweepOutput { family, cells, optimal })
    };
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Runs [`sweep`] and writes `sweep.csv` and `optimal.csv` into `out`.
pub fn run_sweep(
    scenario: &Scenario,
    base_dir: &Path,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: &Path,
) -> Result<SweepOutput, CliError> {
    let result = sweep(scenario, base_dir, seed, jobs)?;
    create_dir(out)?;
    result.grid_table().write(&out.join("sweep.csv"))?;
    result.optimal_table().write(&out.join("optimal.csv"))?;
    Ok(result)
}
