//! Experiment configuration: a single TOML file with one section per
//! subsystem. Unknown keys are rejected, missing keys are reported with
//! their path, and every numeric field is validated against the invariants
//! of the type it feeds.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::adp::{self, AdpGains, SamplePointSet};
use crate::analysis::GainInputs;
use crate::basis::ValueBasis;
use crate::error::{Error, Result};
use crate::identifier::IdentifierGains;
use crate::oracle::LqrOracle;
use crate::plant::{catalog, CostSpec, PlantModel};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub cost: CostSection,
    pub basis: BasisSection,
    pub identifier: IdentifierSection,
    pub adp: AdpSection,
    pub analysis: AnalysisSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Catalog name: scalar_lqr, double_integrator, or cubic_oscillator.
    pub name: String,
    /// Optional override of the true parameter vector.
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    /// Total degrees of the monomial features; each must be at least 2.
    pub degrees: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifierSection {
    /// Diagonal of the observer gain.
    pub k_x: Vec<f64>,
    pub gamma_theta: Vec<Vec<f64>>,
    pub k_theta: f64,
    /// History stack capacity; defaults to twice the parameter count.
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default = "default_interval")]
    pub record_interval: usize,
    #[serde(default = "default_rank_threshold")]
    pub rank_threshold: f64,
    #[serde(default)]
    pub exact_derivatives: bool,
    #[serde(default)]
    pub freeze_stack_after_rank: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdpSection {
    pub eta_c1: f64,
    pub eta_c2: f64,
    pub eta_a1: f64,
    pub eta_a2: f64,
    pub nu: f64,
    pub beta: f64,
    pub gamma_bar: f64,
    pub gamma_under: f64,
    /// Number of pre-sampled Bellman-error evaluation points.
    pub n_points: usize,
    /// Half-widths of the sampling box, one per state dimension.
    pub sample_box: Vec<f64>,
    /// "halton" (low-discrepancy, default) or "grid".
    #[serde(default = "default_strategy")]
    pub sample_strategy: String,
    /// Seeded jitter amplitude as a fraction of the half-width.
    #[serde(default)]
    pub jitter: f64,
    pub wc0: Vec<f64>,
    pub wa0: Vec<f64>,
    /// Γ(0) = gamma0 · I.
    pub gamma0: f64,
    #[serde(default = "default_interval")]
    pub rank_check_interval: usize,
    #[serde(default = "default_rank_threshold")]
    pub c_threshold: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Bound on the ideal weight norm.
    pub w_bar: f64,
    #[serde(default)]
    pub eps_bar: f64,
    #[serde(default)]
    pub eps_prime_bar: f64,
    /// Radius of the compact ball the analysis works over.
    pub z_bar: f64,
    #[serde(default = "default_zeta")]
    pub zeta1: f64,
    #[serde(default = "default_zeta")]
    pub zeta2: f64,
    /// Dyadic refinement level of the supremum grids.
    #[serde(default = "default_grid_level")]
    pub grid_level: u32,
    /// Identifier rank certificate claimed for gain checking; without a run
    /// there is no measured value, so 0 reports the certificate as missing.
    #[serde(default)]
    pub y_under: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_final: f64,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub thetahat0: Vec<f64>,
    #[serde(default = "default_interval")]
    pub log_interval: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_interval() -> usize {
    10
}

fn default_rank_threshold() -> f64 {
    1e-6
}

fn default_strategy() -> String {
    "halton".into()
}

fn default_zeta() -> f64 {
    1.0
}

fn default_grid_level() -> u32 {
    4
}

/// Parses and schema-validates a config file. The first offending key is
/// named in the diagnostic.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config {
        path: "config".into(),
        reason: e.to_string(),
    })
}

/// Fully assembled experiment, ready to run.
#[derive(Debug)]
pub struct Assembled {
    pub plant_name: String,
    pub model: PlantModel,
    pub cost: CostSpec,
    pub basis: ValueBasis,
    pub identifier_gains: IdentifierGains,
    pub adp_gains: AdpGains,
    pub samples: SamplePointSet,
    pub sim: SimConfig,
    pub analysis: AnalysisSection,
    pub oracle: Option<LqrOracle>,
}

impl ExperimentConfig {
    /// Builds every subsystem, validating the cross-section dimension and
    /// positivity constraints along the way.
    pub fn assemble(&self, seed_override: Option<u64>) -> Result<Assembled> {
        let theta = self
            .plant
            .theta_star
            .as_ref()
            .map(|v| DVector::from_column_slice(v));
        let model = catalog::build(&self.plant.name, theta)?;
        let n = model.state_dim();
        let m = model.input_dim();
        let p = model.param_dim();

        let q = matrix_from(&self.cost.q, n, n, "[cost].q")?;
        let r = matrix_from(&self.cost.r, m, m, "[cost].r")?;
        let cost = CostSpec::new(q, r).map_err(|e| Error::Config {
            path: "[cost]".into(),
            reason: e.to_string(),
        })?;

        let basis = ValueBasis::polynomial(n, &self.basis.degrees).map_err(|e| Error::Config {
            path: "[basis].degrees".into(),
            reason: e.to_string(),
        })?;
        let l = basis.len();

        let k_x = vector_from(&self.identifier.k_x, n, "[identifier].k_x")?;
        let gamma_theta = matrix_from(&self.identifier.gamma_theta, p, p, "[identifier].gamma_theta")?;
        let identifier_gains = IdentifierGains::new(k_x, gamma_theta, self.identifier.k_theta)
            .map_err(|e| Error::Config {
                path: "[identifier]".into(),
                reason: e.to_string(),
            })?;

        let adp_gains = AdpGains {
            eta_c1: self.adp.eta_c1,
            eta_c2: self.adp.eta_c2,
            eta_a1: self.adp.eta_a1,
            eta_a2: self.adp.eta_a2,
            nu: self.adp.nu,
            beta: self.adp.beta,
            gamma_bar: self.adp.gamma_bar,
            gamma_under: self.adp.gamma_under,
        };
        adp_gains.validate().map_err(|e| Error::Config {
            path: "[adp]".into(),
            reason: e.to_string(),
        })?;
        if !self.adp.gamma0.is_finite() || self.adp.gamma0 <= 0.0 || self.adp.gamma0 > self.adp.gamma_bar {
            return Err(Error::Config {
                path: "[adp].gamma0".into(),
                reason: "must be positive and at most gamma_bar".into(),
            });
        }
        if self.adp.n_points == 0 {
            return Err(Error::Config {
                path: "[adp].n_points".into(),
                reason: "must be at least 1".into(),
            });
        }
        if !self.analysis.z_bar.is_finite() || self.analysis.z_bar <= 0.0 {
            return Err(Error::Config {
                path: "[analysis].z_bar".into(),
                reason: "must be positive".into(),
            });
        }
        let zeta_ok = |z: f64| z.is_finite() && z > 0.0;
        if !zeta_ok(self.analysis.zeta1) || !zeta_ok(self.analysis.zeta2) {
            return Err(Error::Config {
                path: "[analysis].zeta1/zeta2".into(),
                reason: "must be positive".into(),
            });
        }
        let half_widths = vector_from(&self.adp.sample_box, n, "[adp].sample_box")?;
        if half_widths.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config {
                path: "[adp].sample_box".into(),
                reason: "half-widths must be positive".into(),
            });
        }
        let seed = seed_override.unwrap_or(self.sim.seed);
        let points = match self.adp.sample_strategy.as_str() {
            "halton" => adp::halton_box(n, self.adp.n_points, &half_widths, self.adp.jitter, seed),
            "grid" => adp::grid_box(n, self.adp.n_points, &half_widths),
            other => {
                return Err(Error::Config {
                    path: "[adp].sample_strategy".into(),
                    reason: format!("unknown strategy '{other}', expected halton or grid"),
                })
            }
        };
        let samples = SamplePointSet::new(points, &basis, &model, &cost, self.analysis.z_bar)?;

        let sim = SimConfig {
            dt: self.sim.dt,
            t_final: self.sim.t_final,
            x0: vector_from(&self.sim.x0, n, "[sim].x0")?,
            xhat0: vector_from(&self.sim.xhat0, n, "[sim].xhat0")?,
            thetahat0: vector_from(&self.sim.thetahat0, p, "[sim].thetahat0")?,
            wc0: vector_from(&self.adp.wc0, l, "[adp].wc0")?,
            wa0: vector_from(&self.adp.wa0, l, "[adp].wa0")?,
            gamma0: DMatrix::identity(l, l) * self.adp.gamma0,
            record_interval: self.identifier.record_interval,
            rank_check_interval: self.adp.rank_check_interval,
            log_interval: self.sim.log_interval,
            stack_capacity: self.identifier.capacity.unwrap_or(2 * p),
            rank_threshold: self.identifier.rank_threshold,
            c_threshold: self.adp.c_threshold,
            seed,
            exact_derivatives: self.identifier.exact_derivatives,
            freeze_stack_after_rank: self.identifier.freeze_stack_after_rank,
        };
        sim.validate()?;

        // The quadratic-basis Riccati oracle exists exactly when the plant
        // has a linear realization and the basis is the full degree-2 set.
        let oracle = catalog::linear_realization(&self.plant.name, &model).and_then(|lin| {
            LqrOracle::new(lin.a, lin.b, cost.q(), cost.r(), &lin.k0, &basis).ok()
        });

        Ok(Assembled {
            plant_name: self.plant.name.clone(),
            model,
            cost,
            basis,
            identifier_gains,
            adp_gains,
            samples,
            sim,
            analysis: self.analysis.clone(),
            oracle,
        })
    }
}

impl Assembled {
    /// Gain-verifier inputs combining the configured bounds with grid
    /// estimates of the Lipschitz constants.
    pub fn gain_inputs(&self) -> Result<GainInputs> {
        let (l_f, l_y) = crate::analysis::estimate_lipschitz(
            &self.model,
            self.analysis.z_bar,
            self.analysis.grid_level,
        )?;
        Ok(GainInputs {
            w_bar: self.analysis.w_bar,
            eps_bar: self.analysis.eps_bar,
            eps_prime_bar: self.analysis.eps_prime_bar,
            l_f,
            l_y,
            z_bar: self.analysis.z_bar,
            zeta1: self.analysis.zeta1,
            zeta2: self.analysis.zeta2,
            gamma_under: self.adp_gains.gamma_under,
            nu: self.adp_gains.nu,
            eta_c1: self.adp_gains.eta_c1,
            eta_c2: self.adp_gains.eta_c2,
            eta_a1: self.adp_gains.eta_a1,
            eta_a2: self.adp_gains.eta_a2,
            k_theta: self.identifier_gains.k_theta(),
        })
    }
}

fn matrix_from(rows: &[Vec<f64>], nrows: usize, ncols: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config {
            path: path.into(),
            reason: format!(
                "expected a {nrows}x{ncols} matrix, got {}x{}",
                rows.len(),
                rows.first().map(|r| r.len()).unwrap_or(0)
            ),
        });
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Config {
                    path: path.into(),
                    reason: "entries must be finite".into(),
                });
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn vector_from(values: &[f64], len: usize, path: &str) -> Result<DVector<f64>> {
    if values.len() != len {
        return Err(Error::Config {
            path: path.into(),
            reason: format!("expected {len} entries, got {}", values.len()),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config {
            path: path.into(),
            reason: "entries must be finite".into(),
        });
    }
    Ok(DVector::from_column_slice(values))
}
