//! Fixed-step integration of the coupled closed loop: plant, observer,
//! parameter estimate, critic, actor, and least-squares gain matrix.
//!
//! The augmented state [x, x̂, θ̂, Ŵc, Ŵa, vec(Γ)] advances with classical
//! RK4. After every step Γ is symmetrized and, if its norm overshot the cap
//! Γ̄, rescaled back onto it: the continuous-time saturation indicator
//! cannot prevent a discrete-step overshoot. History-stack candidates come
//! off the trajectory on a fixed cadence (central-difference derivative
//! estimates trail the stepper by one sample; the exact-derivative mode can
//! record immediately, including at t = 0). Certificates are re-evaluated
//! on their own cadence and everything is logged on a uniform grid.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adp::{self, AdpGains, CriticActorState, SamplePointSet};
use crate::analysis::GainReport;
use crate::basis::ValueBasis;
use crate::error::{Error, Result};
use crate::identifier::{self, HistoryStack, IdentifierGains, IdentifierState, StackEntry};
use crate::linalg;
use crate::oracle::LqrOracle;
use crate::plant::{CostSpec, PlantModel};

/// Integration grid, initial conditions, and scheduling for one run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    pub thetahat0: DVector<f64>,
    pub wc0: DVector<f64>,
    pub wa0: DVector<f64>,
    pub gamma0: DMatrix<f64>,
    /// History-stack candidate cadence, in steps.
    pub record_interval: usize,
    /// Certificate re-evaluation cadence, in steps.
    pub rank_check_interval: usize,
    /// Logging cadence, in steps.
    pub log_interval: usize,
    pub stack_capacity: usize,
    pub rank_threshold: f64,
    pub c_threshold: f64,
    pub seed: u64,
    /// Record true state derivatives instead of central differences.
    pub exact_derivatives: bool,
    /// Stop recording once the stack first certifies its rank condition.
    pub freeze_stack_after_rank: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Config {
                path: "[sim].dt".into(),
                reason: "must be positive".into(),
            });
        }
        if !self.t_final.is_finite() || self.t_final < 0.0 {
            return Err(Error::Config {
                path: "[sim].t_final".into(),
                reason: "must be nonnegative".into(),
            });
        }
        for (name, v) in [
            ("[identifier].record_interval", self.record_interval),
            ("[adp].rank_check_interval", self.rank_check_interval),
            ("[sim].log_interval", self.log_interval),
            ("[identifier].capacity", self.stack_capacity),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    path: name.into(),
                    reason: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// One logged sample.
#[derive(Debug, Clone)]
pub struct LogRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub xhat: DVector<f64>,
    pub thetahat: DVector<f64>,
    pub w_c: DVector<f64>,
    pub w_a: DVector<f64>,
    pub gamma_min_eig: f64,
    pub gamma_norm: f64,
    pub bellman_error: f64,
    pub max_sample_error: f64,
    pub y_under: f64,
    pub c_value: f64,
    pub v0: f64,
    pub theta_err: f64,
    pub wc_err: Option<f64>,
    pub wa_err: Option<f64>,
}

/// Uniform-grid log of a run.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
}

impl TrajectoryLog {
    /// CSV with a header row; floats carry 17 significant digits so a
    /// reparse reproduces them exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.records.first() else {
            return out;
        };
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((0..first.x.len()).map(|i| format!("x_{i}")));
        header.extend((0..first.xhat.len()).map(|i| format!("xhat_{i}")));
        header.extend((0..first.thetahat.len()).map(|i| format!("thetahat_{i}")));
        header.extend((0..first.w_c.len()).map(|i| format!("wc_{i}")));
        header.extend((0..first.w_a.len()).map(|i| format!("wa_{i}")));
        header.extend(
            [
                "gamma_min_eig",
                "gamma_norm",
                "delta_hat",
                "max_delta_i",
                "y_under",
                "c_value",
                "v0",
                "theta_err",
                "wc_err",
                "wa_err",
            ]
            .map(String::from),
        );
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.records {
            let mut row: Vec<String> = vec![fmt_f64(r.t)];
            row.extend(r.x.iter().map(|&v| fmt_f64(v)));
            row.extend(r.xhat.iter().map(|&v| fmt_f64(v)));
            row.extend(r.thetahat.iter().map(|&v| fmt_f64(v)));
            row.extend(r.w_c.iter().map(|&v| fmt_f64(v)));
            row.extend(r.w_a.iter().map(|&v| fmt_f64(v)));
            for v in [
                r.gamma_min_eig,
                r.gamma_norm,
                r.bellman_error,
                r.max_sample_error,
                r.y_under,
                r.c_value,
                r.v0,
                r.theta_err,
            ] {
                row.push(fmt_f64(v));
            }
            row.push(r.wc_err.map(fmt_f64).unwrap_or_default());
            row.push(r.wa_err.map(fmt_f64).unwrap_or_default());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:.16e}").expect("formatting f64");
    s
}

/// End-of-run report. The serialized form carries exactly the documented
/// summary schema; the extra bound counters are for in-process consumers.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub final_state_norm: f64,
    #[serde(rename = "final_Wc_error")]
    pub final_wc_error: Option<f64>,
    #[serde(rename = "final_Wa_error")]
    pub final_wa_error: Option<f64>,
    pub final_theta_error: f64,
    /// Smallest certified Gram eigenvalue of the history stack (infimum
    /// over the rank checks that passed; 0 when none passed).
    pub min_y_under: f64,
    /// Infimum of the sampled-regressor certificate over the run.
    pub min_c_value: f64,
    pub gamma_bound_violations: usize,
    pub gain_report: Option<GainReport>,
    #[serde(skip)]
    pub reg_bound_violations: usize,
    #[serde(skip)]
    pub reg_bound_configured_violations: usize,
    #[serde(skip)]
    pub rank_pass_time: Option<f64>,
    #[serde(skip)]
    pub y_under_at_rank_pass: f64,
}

/// A finished run: the log, the summary, and — when the integration hit a
/// non-finite state — the abort diagnostic for the partial log.
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub summary: RunSummary,
    pub aborted: Option<String>,
}

/// Immutable ingredients of an experiment.
pub struct Experiment<'a> {
    pub model: &'a PlantModel,
    pub cost: &'a CostSpec,
    pub basis: &'a ValueBasis,
    pub identifier_gains: &'a IdentifierGains,
    pub adp_gains: &'a AdpGains,
    pub samples: &'a SamplePointSet,
    pub oracle: Option<&'a LqrOracle>,
    pub gain_report: Option<GainReport>,
}

/// Classical 4th-order Runge-Kutta step for an autonomous system.
pub fn rk4_step<F>(y: &DVector<f64>, dt: f64, f: &mut F) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(y)?;
    let k2 = f(&(y + &k1 * (dt / 2.0)))?;
    let k3 = f(&(y + &k2 * (dt / 2.0)))?;
    let k4 = f(&(y + &k3 * dt))?;
    Ok(y + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0))
}

struct Layout {
    n: usize,
    p: usize,
    l: usize,
}

impl Layout {
    fn total(&self) -> usize {
        2 * self.n + self.p + 2 * self.l + self.l * self.l
    }

    fn pack(
        &self,
        x: &DVector<f64>,
        xhat: &DVector<f64>,
        thetahat: &DVector<f64>,
        w_c: &DVector<f64>,
        w_a: &DVector<f64>,
        gamma: &DMatrix<f64>,
    ) -> DVector<f64> {
        let mut y = DVector::zeros(self.total());
        let mut at = 0;
        for block in [x, xhat, thetahat, w_c, w_a] {
            y.rows_mut(at, block.len()).copy_from(block);
            at += block.len();
        }
        y.rows_mut(at, self.l * self.l)
            .copy_from(&DVector::from_column_slice(gamma.as_slice()));
        y
    }

    fn x(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, self.n).into_owned()
    }

    fn xhat(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.n, self.n).into_owned()
    }

    fn thetahat(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(2 * self.n, self.p).into_owned()
    }

    fn w_c(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(2 * self.n + self.p, self.l).into_owned()
    }

    fn w_a(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(2 * self.n + self.p + self.l, self.l).into_owned()
    }

    fn gamma(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let at = 2 * self.n + self.p + 2 * self.l;
        DMatrix::from_column_slice(self.l, self.l, y.rows(at, self.l * self.l).as_slice())
    }

    fn set_gamma(&self, y: &mut DVector<f64>, gamma: &DMatrix<f64>) {
        let at = 2 * self.n + self.p + 2 * self.l;
        y.rows_mut(at, self.l * self.l)
            .copy_from(&DVector::from_column_slice(gamma.as_slice()));
    }
}

/// Stacks the plant, observer, parameter, and learner laws into one flat
/// derivative vector of dimension n + n + p + L + L + L².
pub fn augmented_derivative(
    exp: &Experiment,
    stack: &HistoryStack,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let layout = Layout {
        n: exp.model.state_dim(),
        p: exp.model.param_dim(),
        l: exp.basis.len(),
    };
    let x = layout.x(y);
    let xhat = layout.xhat(y);
    let thetahat = layout.thetahat(y);
    let learner = CriticActorState {
        w_c: layout.w_c(y),
        w_a: layout.w_a(y),
        gamma: layout.gamma(y),
    };

    let u = adp::policy(exp.basis, exp.model, exp.cost, &learner.w_a, &x)?;
    let x_dot = exp.model.dynamics(&x, &u)?;
    let id_state = IdentifierState {
        xhat: xhat.clone(),
        thetahat: thetahat.clone(),
    };
    let xhat_dot = identifier::observer_derivative(exp.model, exp.identifier_gains, &id_state, &x, &u)?;
    let xtilde = &x - &xhat;
    let theta_dot = identifier::theta_update_unchecked(
        exp.model,
        exp.identifier_gains,
        stack,
        &thetahat,
        &x,
        &xtilde,
    );
    let learned = adp::learner_derivatives(
        exp.adp_gains,
        &learner,
        exp.samples,
        exp.basis,
        exp.model,
        exp.cost,
        &thetahat,
        &x,
    )?;

    Ok(layout.pack(
        &x_dot,
        &xhat_dot,
        &theta_dot,
        &learned.w_c_dot,
        &learned.w_a_dot,
        &learned.gamma_dot,
    ))
}

/// Integrates the closed loop from t = 0 to t_final, recording history-stack
/// candidates, re-evaluating the certificates, and logging on schedule. A
/// non-finite state aborts the run and returns the partial log.
pub fn run_experiment(exp: &Experiment, config: &SimConfig) -> Result<RunOutput> {
    config.validate()?;
    exp.adp_gains.validate()?;
    let layout = Layout {
        n: exp.model.state_dim(),
        p: exp.model.param_dim(),
        l: exp.basis.len(),
    };
    check_len("x0", &config.x0, layout.n)?;
    check_len("xhat0", &config.xhat0, layout.n)?;
    check_len("thetahat0", &config.thetahat0, layout.p)?;
    check_len("wc0", &config.wc0, layout.l)?;
    check_len("wa0", &config.wa0, layout.l)?;
    if linalg::max_eigenvalue(&linalg::symmetrize(&config.gamma0)) > exp.adp_gains.gamma_bar {
        return Err(Error::Config {
            path: "[adp].gamma0".into(),
            reason: "initial gain matrix norm exceeds gamma_bar".into(),
        });
    }

    let steps = (config.t_final / config.dt).round() as usize;
    let mut stack = HistoryStack::new(config.stack_capacity, layout.p);
    let mut y = layout.pack(
        &config.x0,
        &config.xhat0,
        &config.thetahat0,
        &config.wc0,
        &config.wa0,
        &config.gamma0,
    );

    let mut log = TrajectoryLog::default();
    let mut aborted = None;
    let mut frozen = false;
    let mut rank_pass_time: Option<f64> = None;
    let mut y_under_at_rank_pass = 0.0;
    let mut min_certified_y = f64::INFINITY;
    let mut min_c_value = f64::INFINITY;
    let mut latest_c = f64::NAN;
    let mut gamma_violations = 0usize;
    let mut reg_violations = 0usize;
    let mut reg_cfg_violations = 0usize;

    // sliding window of the last three samples for central differences
    let mut window: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(3);

    for k in 0..=steps {
        let t = k as f64 * config.dt;
        let x = layout.x(&y);
        let xhat = layout.xhat(&y);
        let thetahat = layout.thetahat(&y);
        let learner = CriticActorState {
            w_c: layout.w_c(&y),
            w_a: layout.w_a(&y),
            gamma: layout.gamma(&y),
        };
        let u = adp::policy(exp.basis, exp.model, exp.cost, &learner.w_a, &x)?;

        if window.len() == 3 {
            window.remove(0);
        }
        window.push((x.clone(), u.clone()));

        // history-stack recording
        if !frozen {
            if config.exact_derivatives {
                if k % config.record_interval == 0 {
                    let xdot = exp.model.dynamics(&x, &u)?;
                    stack.insert(StackEntry::from_model(exp.model, x.clone(), u.clone(), xdot));
                }
            } else if k >= 2 && (k - 1) % config.record_interval == 0 {
                // derivative for sample k-1 needs the sample at k
                let xdot = (&window[2].0 - &window[0].0) / (2.0 * config.dt);
                let (xc, uc) = window[1].clone();
                stack.insert(StackEntry::from_model(exp.model, xc, uc, xdot));
            }
            if config.freeze_stack_after_rank
                && stack.rank_certificate(config.rank_threshold).pass
            {
                frozen = true;
            }
        }

        // certificates on their own cadence
        if k % config.rank_check_interval == 0 || k == steps {
            let cert = stack.rank_certificate(config.rank_threshold);
            if cert.pass {
                if rank_pass_time.is_none() {
                    rank_pass_time = Some(t);
                    y_under_at_rank_pass = cert.min_eigenvalue;
                }
                min_certified_y = min_certified_y.min(cert.min_eigenvalue);
            }
            let sample_cert = adp::sample_rank_certificate(
                exp.samples,
                exp.cost,
                exp.adp_gains,
                &learner.gamma,
                &thetahat,
                &learner.w_a,
                config.c_threshold,
            )?;
            latest_c = sample_cert.c_value;
            min_c_value = min_c_value.min(sample_cert.c_value);
        }

        // logging and bound monitoring
        if k % config.log_interval == 0 || k == steps {
            let gamma_sym = linalg::symmetrize(&learner.gamma);
            let gamma_min = linalg::min_eigenvalue(&gamma_sym);
            let gamma_norm = linalg::max_eigenvalue(&gamma_sym);
            if gamma_min < exp.adp_gains.gamma_under * (1.0 - 1e-12)
                || gamma_norm > exp.adp_gains.gamma_bar * (1.0 + 1e-12)
            {
                gamma_violations += 1;
            }
            let omega = adp::critic_regressor(
                exp.basis, exp.model, exp.cost, &thetahat, &learner.w_a, &x,
            )?;
            let rho = adp::normalization(exp.adp_gains, &learner.gamma, &omega);
            let reg_norm = omega.norm() / rho;
            if gamma_min > 0.0
                && reg_norm > 1.0 / (2.0 * (exp.adp_gains.nu * gamma_min).sqrt()) + 1e-12
            {
                reg_violations += 1;
            }
            if reg_norm
                > 1.0 / (2.0 * (exp.adp_gains.nu * exp.adp_gains.gamma_under).sqrt()) + 1e-12
            {
                reg_cfg_violations += 1;
            }

            let delta = adp::bellman_error(
                exp.basis, exp.model, exp.cost, &learner.w_c, &learner.w_a, &thetahat, &x,
            )?;
            let sample_errors = adp::sample_bellman_errors(
                exp.samples,
                exp.cost,
                exp.adp_gains,
                &learner,
                &thetahat,
            );
            let max_sample_error = sample_errors.iter().fold(0.0_f64, |m, e| m.max(e.abs()));

            let xtilde = &x - &xhat;
            let theta_tilde = exp.model.theta_star() - &thetahat;
            let v0 = 0.5 * xtilde.dot(&xtilde)
                + 0.5
                    * (theta_tilde.transpose()
                        * exp.identifier_gains.gamma_theta_inv()
                        * &theta_tilde)[(0, 0)];

            log.records.push(LogRecord {
                t,
                x: x.clone(),
                xhat: xhat.clone(),
                thetahat: thetahat.clone(),
                w_c: learner.w_c.clone(),
                w_a: learner.w_a.clone(),
                gamma_min_eig: gamma_min,
                gamma_norm,
                bellman_error: delta,
                max_sample_error,
                y_under: stack.min_gram_eigenvalue(),
                c_value: latest_c,
                v0,
                theta_err: theta_tilde.norm(),
                wc_err: exp.oracle.map(|o| (&learner.w_c - &o.w_star).norm()),
                wa_err: exp.oracle.map(|o| (&learner.w_a - &o.w_star).norm()),
            });
        }

        if k == steps {
            break;
        }

        // advance one step; a non-finite intermediate state (divergence)
        // aborts with the partial log rather than failing the call
        let next = match rk4_step(&y, config.dt, &mut |state| {
            if !linalg::all_finite(state) {
                return Err(Error::non_finite("integrator state"));
            }
            augmented_derivative(exp, &stack, state)
        }) {
            Ok(next) => next,
            Err(Error::NonFinite { .. }) => {
                aborted = Some(format!(
                    "state diverged during the step from t = {t:.6}"
                ));
                break;
            }
            Err(e) => return Err(e),
        };
        y = next;

        // keep the gain matrix symmetric and inside its cap
        let mut gamma = linalg::symmetrize(&layout.gamma(&y));
        let norm = linalg::max_eigenvalue(&gamma);
        if norm > exp.adp_gains.gamma_bar {
            gamma *= exp.adp_gains.gamma_bar / norm;
        }
        if linalg::min_eigenvalue(&gamma) <= 0.0 {
            aborted = Some(format!(
                "least-squares gain matrix lost positive definiteness at t = {:.6}",
                t + config.dt
            ));
            layout.set_gamma(&mut y, &gamma);
            break;
        }
        layout.set_gamma(&mut y, &gamma);

        if !linalg::all_finite(&y) {
            aborted = Some(format!(
                "non-finite state after step to t = {:.6}",
                t + config.dt
            ));
            break;
        }
    }

    let last = log
        .records
        .last()
        .expect("the initial sample is always logged");
    let summary = RunSummary {
        final_state_norm: last.x.norm(),
        final_wc_error: last.wc_err,
        final_wa_error: last.wa_err,
        final_theta_error: last.theta_err,
        min_y_under: if min_certified_y.is_finite() {
            min_certified_y
        } else {
            0.0
        },
        min_c_value: if min_c_value.is_finite() {
            min_c_value
        } else {
            0.0
        },
        gamma_bound_violations: gamma_violations,
        gain_report: exp.gain_report.clone(),
        reg_bound_violations: reg_violations,
        reg_bound_configured_violations: reg_cfg_violations,
        rank_pass_time,
        y_under_at_rank_pass,
    };
    Ok(RunOutput {
        log,
        summary,
        aborted,
    })
}

fn check_len(name: &'static str, v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context: name,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{catalog, PlantModel};
    use approx::assert_relative_eq;

    #[test]
    fn rk4_zero_field_is_identity() {
        let y0 = DVector::from_column_slice(&[1.0, -2.0]);
        let y1 = rk4_step(&y0, 0.1, &mut |_| Ok(DVector::zeros(2))).unwrap();
        assert_eq!(y0, y1);
    }

    #[test]
    fn rk4_exponential_growth_one_step() {
        let y0 = DVector::from_element(1, 1.0);
        let y1 = rk4_step(&y0, 0.1, &mut |y| Ok(y.clone())).unwrap();
        assert_relative_eq!(y1[0], 0.1_f64.exp(), epsilon = 1e-7);
        // RK4 truncates the exponential series after the dt^4 term
        let series = 1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0;
        assert_relative_eq!(y1[0], series, epsilon = 1e-15);
    }

    #[test]
    fn rk4_exponential_decay_long_horizon() {
        let mut y = DVector::from_element(1, 1.0);
        for _ in 0..500 {
            y = rk4_step(&y, 0.02, &mut |y| Ok(-y.clone())).unwrap();
        }
        assert_relative_eq!(y[0], (-10.0_f64).exp(), max_relative = 1e-6);
    }

    struct Fixture {
        model: PlantModel,
        cost: CostSpec,
        basis: ValueBasis,
        id_gains: IdentifierGains,
        adp_gains: AdpGains,
        samples: SamplePointSet,
        oracle: LqrOracle,
    }

    fn scalar_fixture() -> Fixture {
        let model = catalog::build("scalar_lqr", None).unwrap();
        let cost = CostSpec::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let basis = ValueBasis::polynomial(1, &[2]).unwrap();
        let id_gains = IdentifierGains::new(
            DVector::from_element(1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            0.5,
        )
        .unwrap();
        let adp_gains = AdpGains {
            eta_c1: 1.0,
            eta_c2: 2.0,
            eta_a1: 2.0,
            eta_a2: 0.01,
            nu: 0.1,
            beta: 0.3,
            gamma_bar: 50.0,
            gamma_under: 0.05,
        };
        let points = adp::halton_box(1, 5, &DVector::from_element(1, 1.0), 0.0, 0);
        let samples = SamplePointSet::new(points, &basis, &model, &cost, 2.0).unwrap();
        let lin = catalog::linear_realization("scalar_lqr", &model).unwrap();
        let oracle = LqrOracle::new(lin.a, lin.b, cost.q(), cost.r(), &lin.k0, &basis).unwrap();
        Fixture {
            model,
            cost,
            basis,
            id_gains,
            adp_gains,
            samples,
            oracle,
        }
    }

    fn experiment(f: &Fixture) -> Experiment<'_> {
        Experiment {
            model: &f.model,
            cost: &f.cost,
            basis: &f.basis,
            identifier_gains: &f.id_gains,
            adp_gains: &f.adp_gains,
            samples: &f.samples,
            oracle: Some(&f.oracle),
            gain_report: None,
        }
    }

    fn base_config(_f: &Fixture) -> SimConfig {
        SimConfig {
            dt: 0.005,
            t_final: 1.0,
            x0: DVector::from_element(1, 1.0),
            xhat0: DVector::zeros(1),
            thetahat0: DVector::from_element(1, -0.5),
            wc0: DVector::from_element(1, 0.5),
            wa0: DVector::from_element(1, 0.5),
            gamma0: DMatrix::from_element(1, 1, 1.0),
            record_interval: 10,
            rank_check_interval: 10,
            log_interval: 10,
            stack_capacity: 2,
            rank_threshold: 1e-6,
            c_threshold: 1e-6,
            seed: 0,
            exact_derivatives: false,
            freeze_stack_after_rank: false,
        }
    }

    #[test]
    fn derivative_dimension_matches_layout() {
        // n = 2, p = 4, L = 3 -> 2 + 2 + 4 + 3 + 3 + 9 = 23
        let model = catalog::build("double_integrator", None).unwrap();
        let cost =
            CostSpec::new(DMatrix::identity(2, 2), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let basis = ValueBasis::polynomial(2, &[2]).unwrap();
        let id_gains = IdentifierGains::new(
            DVector::from_element(2, 1.0),
            DMatrix::identity(4, 4),
            0.5,
        )
        .unwrap();
        let adp_gains = AdpGains {
            eta_c1: 1.0,
            eta_c2: 1.0,
            eta_a1: 1.0,
            eta_a2: 0.1,
            nu: 1.0,
            beta: 0.1,
            gamma_bar: 100.0,
            gamma_under: 0.01,
        };
        let points = adp::halton_box(2, 6, &DVector::from_element(2, 1.0), 0.0, 0);
        let samples = SamplePointSet::new(points, &basis, &model, &cost, 2.0).unwrap();
        let exp = Experiment {
            model: &model,
            cost: &cost,
            basis: &basis,
            identifier_gains: &id_gains,
            adp_gains: &adp_gains,
            samples: &samples,
            oracle: None,
            gain_report: None,
        };
        let stack = HistoryStack::new(8, 4);
        let y = DVector::from_fn(23, |i, _| 0.01 * (i as f64 + 1.0));
        let dy = augmented_derivative(&exp, &stack, &y).unwrap();
        assert_eq!(dy.len(), 23);

        // n = 2, p = 2, L = 3 -> 2 + 2 + 2 + 3 + 3 + 9 = 21
        let model2 = PlantModel::new(
            2,
            1,
            DVector::from_column_slice(&[-1.0, -0.5]),
            Box::new(|x: &DVector<f64>| {
                DMatrix::from_row_slice(2, 2, &[x[0], 0.0, 0.0, x[1]])
            }),
            Box::new(|_: &DVector<f64>| DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
        )
        .unwrap();
        let id_gains2 = IdentifierGains::new(
            DVector::from_element(2, 1.0),
            DMatrix::identity(2, 2),
            0.5,
        )
        .unwrap();
        let samples2 = SamplePointSet::new(
            adp::halton_box(2, 6, &DVector::from_element(2, 1.0), 0.0, 0),
            &basis,
            &model2,
            &cost,
            2.0,
        )
        .unwrap();
        let exp2 = Experiment {
            model: &model2,
            cost: &cost,
            basis: &basis,
            identifier_gains: &id_gains2,
            adp_gains: &adp_gains,
            samples: &samples2,
            oracle: None,
            gain_report: None,
        };
        let stack2 = HistoryStack::new(4, 2);
        let y2 = DVector::from_fn(21, |i, _| 0.01 * (i as f64 + 1.0));
        let dy2 = augmented_derivative(&exp2, &stack2, &y2).unwrap();
        assert_eq!(dy2.len(), 21);
    }

    #[test]
    fn derivative_blocks_vanish_at_oracle_fixed_point() {
        // At x = 0, xhat = 0, thetahat = theta*, Wc = Wa = W*: the plant,
        // observer, parameter, and critic derivatives vanish (every residual
        // is zero); the actor correction also vanishes once its sampled-term
        // gain is zero, leaving only the forgetting growth in Gamma.
        let f = scalar_fixture();
        let mut adp_gains = f.adp_gains;
        adp_gains.eta_a2 = 0.0;
        adp_gains.eta_c2 = 0.0;
        let exp = Experiment {
            adp_gains: &adp_gains,
            ..experiment(&f)
        };

        let mut stack = HistoryStack::new(2, 1);
        for xv in [1.0, -1.0] {
            let x = DVector::from_element(1, xv);
            let u = DVector::from_element(1, 0.3);
            let xdot = f.model.dynamics(&x, &u).unwrap();
            stack.insert(StackEntry::from_model(&f.model, x, u, xdot));
        }

        let layout = Layout { n: 1, p: 1, l: 1 };
        let w_star = f.oracle.w_star.clone();
        let y = layout.pack(
            &DVector::zeros(1),
            &DVector::zeros(1),
            f.model.theta_star(),
            &w_star,
            &w_star,
            &DMatrix::from_element(1, 1, 1.0),
        );
        let dy = augmented_derivative(&exp, &stack, &y).unwrap();
        for i in 0..5 {
            assert!(dy[i].abs() <= 1e-12, "block {i}: {}", dy[i]);
        }
        // Gamma keeps growing at the forgetting rate
        assert_relative_eq!(dy[5], adp_gains.beta * 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_horizon_logs_only_initial_record() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.t_final = 0.0;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        assert_eq!(out.log.records.len(), 1);
        assert!(out.aborted.is_none());
        assert_relative_eq!(out.summary.final_state_norm, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn run_is_deterministic() {
        let f = scalar_fixture();
        let config = base_config(&f);
        let a = run_experiment(&experiment(&f), &config).unwrap();
        let b = run_experiment(&experiment(&f), &config).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
    }

    #[test]
    fn csv_round_trips_through_17_digits() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.t_final = 0.2;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        let csv = out.log.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        let columns = header.split(',').count();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), columns);
            for cell in cells {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell.parse().unwrap();
                assert_eq!(fmt_f64(v), cell, "17-digit round trip");
            }
        }
    }

    #[test]
    fn aborts_on_divergence_with_partial_log() {
        // destabilize: theta* > 0 with weights that push the state away
        let model =
            catalog::build("scalar_lqr", Some(DVector::from_element(1, 3.0))).unwrap();
        let f = scalar_fixture();
        let exp = Experiment {
            model: &model,
            ..experiment(&f)
        };
        let mut config = base_config(&f);
        config.t_final = 40.0;
        config.wa0 = DVector::from_element(1, -2.0); // positive feedback
        config.wc0 = DVector::from_element(1, -2.0);
        let out = run_experiment(&exp, &config).unwrap();
        assert!(out.aborted.is_some());
        assert!(!out.log.records.is_empty());
    }

    #[test]
    fn gamma_stays_within_cap_and_positive() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.t_final = 5.0;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        assert!(out.aborted.is_none());
        assert_eq!(out.summary.gamma_bound_violations, 0);
        for r in &out.log.records {
            assert!(r.gamma_norm <= f.adp_gains.gamma_bar * (1.0 + 1e-12));
            assert!(r.gamma_min_eig > 0.0);
        }
    }

    #[test]
    fn exact_mode_records_at_t0_and_rank_passes_immediately() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.exact_derivatives = true;
        config.t_final = 0.5;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        assert_eq!(out.summary.rank_pass_time, Some(0.0));
        assert!(out.summary.y_under_at_rank_pass > 0.9);
    }

    #[test]
    fn freeze_stops_certificate_growth() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.exact_derivatives = true;
        config.freeze_stack_after_rank = true;
        config.t_final = 2.0;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        let first = out.log.records.first().unwrap().y_under;
        let last = out.log.records.last().unwrap().y_under;
        assert_relative_eq!(first, last, epsilon = 1e-12);
    }

    #[test]
    fn smoothed_recording_tracks_true_derivative() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.t_final = 2.0;
        config.record_interval = 5;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        assert!(out.aborted.is_none());
        // theta converges toward -1 once the stack carries information
        let theta_final = out.log.records.last().unwrap().thetahat[0];
        assert!((theta_final + 1.0).abs() < 0.2, "thetahat = {theta_final}");
    }

    #[test]
    fn oracle_errors_decrease_on_benchmark() {
        let f = scalar_fixture();
        let mut config = base_config(&f);
        config.t_final = 10.0;
        let out = run_experiment(&experiment(&f), &config).unwrap();
        let first = out.log.records.first().unwrap();
        let last = out.log.records.last().unwrap();
        assert!(last.wc_err.unwrap() < first.wc_err.unwrap());
        assert!(last.wa_err.unwrap() < first.wa_err.unwrap());
    }
}
