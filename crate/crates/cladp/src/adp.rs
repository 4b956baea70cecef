//! Actor-critic value-function learner.
//!
//! The value function estimate is V̂ = Ŵcᵀσ(x) and the policy estimate is
//! û = -½R⁻¹gᵀσ'ᵀŴa. The critic regressor ω = σ'(Yθ̂ + gû) turns the
//! Bellman error into δ̂ = ωᵀŴc + xᵀQx + ûᵀRû, linear in Ŵc, which a
//! normalized least-squares law with forgetting factor β and saturation
//! ‖Γ‖ ≤ Γ̄ drives down both along the trajectory and at a pre-sampled set
//! of state-space points {xᵢ}. The actor follows the critic with two decay
//! terms and a curvature correction. Identifiability of the weights rests
//! on the sampled regressors: c = (1/N) λmin(Σ ωᵢωᵢᵀ/ρᵢ) must stay
//! positive, which is monitored rather than enforced since ωᵢ depends on
//! the evolving estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::{control_gram_cached, ValueBasis};
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::{CostSpec, PlantModel};

/// Critic weights, actor weights, and the least-squares gain matrix.
#[derive(Debug, Clone)]
pub struct CriticActorState {
    pub w_c: DVector<f64>,
    pub w_a: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

/// Learning gains. The adaptation rates and forgetting factor may be zero
/// (identifier-only runs zero them all); the normalization gain ν and the
/// Γ bounds must be strictly positive because they appear in denominators
/// of the learning law and its bounds.
#[derive(Debug, Clone, Copy)]
pub struct AdpGains {
    pub eta_c1: f64,
    pub eta_c2: f64,
    pub eta_a1: f64,
    pub eta_a2: f64,
    pub nu: f64,
    pub beta: f64,
    pub gamma_bar: f64,
    pub gamma_under: f64,
}

impl AdpGains {
    pub fn validate(&self) -> Result<()> {
        let nonnegative = [
            ("eta_c1", self.eta_c1),
            ("eta_c2", self.eta_c2),
            ("eta_a1", self.eta_a1),
            ("eta_a2", self.eta_a2),
            ("beta", self.beta),
        ];
        for (name, v) in nonnegative {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidMatrix {
                    what: name.into(),
                    property: "nonnegative",
                });
            }
        }
        let positive = [
            ("nu", self.nu),
            ("gamma_bar", self.gamma_bar),
            ("gamma_under", self.gamma_under),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidMatrix {
                    what: name.into(),
                    property: "strictly positive",
                });
            }
        }
        Ok(())
    }
}

/// One pre-sampled evaluation point with everything that does not depend on
/// the evolving estimates cached: σ'(xᵢ), g(xᵢ), Y(xᵢ), and G_σᵢ.
#[derive(Debug, Clone)]
pub struct SamplePoint {
    pub x: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub effectiveness: DMatrix<f64>,
    pub regressor: DMatrix<f64>,
    pub control_gram: DMatrix<f64>,
}

/// The pre-sampled point set for Bellman-error evaluation.
#[derive(Debug, Clone)]
pub struct SamplePointSet {
    points: Vec<SamplePoint>,
}

impl SamplePointSet {
    /// Caches the basis/model evaluations at each point. Points must lie in
    /// the ball of radius `radius`, the compact set all analysis bounds are
    /// taken over.
    pub fn new(
        points: Vec<DVector<f64>>,
        basis: &ValueBasis,
        model: &PlantModel,
        cost: &CostSpec,
        radius: f64,
    ) -> Result<Self> {
        let mut cached = Vec::with_capacity(points.len());
        for (i, x) in points.into_iter().enumerate() {
            if x.norm() > radius * (1.0 + 1e-12) {
                return Err(Error::Config {
                    path: format!("sample point {i}"),
                    reason: format!(
                        "|x| = {:.6} outside the compact ball of radius {:.6}",
                        x.norm(),
                        radius
                    ),
                });
            }
            let jacobian = basis.jacobian(&x);
            let effectiveness = model.effectiveness(&x);
            let regressor = model.regressor(&x);
            let control_gram = control_gram_cached(&jacobian, &effectiveness, cost);
            cached.push(SamplePoint {
                x,
                jacobian,
                effectiveness,
                regressor,
                control_gram,
            });
        }
        Ok(Self { points: cached })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    /// Largest deviation between the caches and a fresh evaluation.
    pub fn cache_error(&self, basis: &ValueBasis, model: &PlantModel, cost: &CostSpec) -> f64 {
        let mut worst = 0.0_f64;
        for p in &self.points {
            let jacobian = basis.jacobian(&p.x);
            let effectiveness = model.effectiveness(&p.x);
            let regressor = model.regressor(&p.x);
            let gram = control_gram_cached(&jacobian, &effectiveness, cost);
            worst = worst
                .max((&p.jacobian - jacobian).amax())
                .max((&p.effectiveness - effectiveness).amax())
                .max((&p.regressor - regressor).amax())
                .max((&p.control_gram - gram).amax());
        }
        worst
    }
}

/// Deterministic Halton low-discrepancy sequence mapped into the box
/// `[-half_widths, half_widths]`, optionally jittered by a seeded PRNG
/// (`jitter` is the fraction of the half-width used as jitter amplitude).
pub fn halton_box(
    dim: usize,
    count: usize,
    half_widths: &DVector<f64>,
    jitter: f64,
    seed: u64,
) -> Vec<DVector<f64>> {
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    assert!(dim <= PRIMES.len(), "sample box dimension too large");
    assert_eq!(half_widths.len(), dim, "sample box half-width dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=count as u64)
        .map(|k| {
            DVector::from_iterator(
                dim,
                (0..dim).map(|j| {
                    let u = radical_inverse(k, PRIMES[j]);
                    let mut v = half_widths[j] * (2.0 * u - 1.0);
                    if jitter > 0.0 {
                        v += half_widths[j] * jitter * rng.random_range(-1.0..1.0);
                        v = v.clamp(-half_widths[j], half_widths[j]);
                    }
                    v
                }),
            )
        })
        .collect()
}

/// Uniform per-axis grid over the box, row-major, truncated to `count`
/// points.
pub fn grid_box(dim: usize, count: usize, half_widths: &DVector<f64>) -> Vec<DVector<f64>> {
    assert_eq!(half_widths.len(), dim, "sample box half-width dimension");
    let per_axis = (count as f64).powf(1.0 / dim as f64).ceil() as usize;
    let per_axis = per_axis.max(1);
    let axis_value = |j: usize, idx: usize| -> f64 {
        if per_axis == 1 {
            0.0
        } else {
            -half_widths[j] + 2.0 * half_widths[j] * idx as f64 / (per_axis - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; dim];
    'outer: loop {
        out.push(DVector::from_iterator(
            dim,
            (0..dim).map(|j| axis_value(j, idx[j])),
        ));
        if out.len() == count {
            break;
        }
        // odometer increment
        for j in (0..dim).rev() {
            idx[j] += 1;
            if idx[j] < per_axis {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// û = -½ R⁻¹ g(x)ᵀ σ'(x)ᵀ Ŵa.
pub fn policy(
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    w_a: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_weights(basis, w_a, "actor weights")?;
    Ok(policy_cached(
        &basis.jacobian(x),
        &model.effectiveness(x),
        cost,
        w_a,
    ))
}

fn policy_cached(
    jacobian: &DMatrix<f64>,
    effectiveness: &DMatrix<f64>,
    cost: &CostSpec,
    w_a: &DVector<f64>,
) -> DVector<f64> {
    -0.5 * cost.r_inv() * effectiveness.transpose() * jacobian.transpose() * w_a
}

/// ω = σ'(x)(Y(x)θ̂ + g(x)û(x, Ŵa)), the critic regressor.
pub fn critic_regressor(
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    thetahat: &DVector<f64>,
    w_a: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_weights(basis, w_a, "actor weights")?;
    let jacobian = basis.jacobian(x);
    let effectiveness = model.effectiveness(x);
    let regressor = model.regressor(x);
    if thetahat.len() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "parameter estimate",
            expected: model.param_dim(),
            actual: thetahat.len(),
        });
    }
    let u = policy_cached(&jacobian, &effectiveness, cost, w_a);
    Ok(critic_regressor_cached(
        &jacobian,
        &regressor,
        &effectiveness,
        thetahat,
        &u,
    ))
}

fn critic_regressor_cached(
    jacobian: &DMatrix<f64>,
    regressor: &DMatrix<f64>,
    effectiveness: &DMatrix<f64>,
    thetahat: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    jacobian * (regressor * thetahat + effectiveness * u)
}

/// ρ = 1 + ν ωᵀΓω; always at least one.
pub fn normalization(gains: &AdpGains, gamma: &DMatrix<f64>, omega: &DVector<f64>) -> f64 {
    1.0 + gains.nu * (omega.transpose() * gamma * omega)[(0, 0)]
}

/// δ̂ = ωᵀŴc + xᵀQx + ûᵀRû with û the current actor policy.
pub fn bellman_error(
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    w_c: &DVector<f64>,
    w_a: &DVector<f64>,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    check_weights(basis, w_c, "critic weights")?;
    let u = policy(basis, model, cost, w_a, x)?;
    let omega = critic_regressor(basis, model, cost, thetahat, w_a, x)?;
    Ok(omega.dot(w_c) + cost.instantaneous(x, &u))
}

/// ω, ρ, û, and δ̂ at one point, for the current estimates.
#[derive(Debug, Clone)]
pub struct PointEvaluation {
    pub omega: DVector<f64>,
    pub rho: f64,
    pub control: DVector<f64>,
    pub bellman_error: f64,
}

fn evaluate_cached_point(
    point: &SamplePoint,
    cost: &CostSpec,
    gains: &AdpGains,
    gamma: &DMatrix<f64>,
    w_c: &DVector<f64>,
    w_a: &DVector<f64>,
    thetahat: &DVector<f64>,
) -> PointEvaluation {
    let control = policy_cached(&point.jacobian, &point.effectiveness, cost, w_a);
    let omega = critic_regressor_cached(
        &point.jacobian,
        &point.regressor,
        &point.effectiveness,
        thetahat,
        &control,
    );
    let rho = normalization(gains, gamma, &omega);
    let bellman_error = omega.dot(w_c) + cost.instantaneous(&point.x, &control);
    PointEvaluation {
        omega,
        rho,
        control,
        bellman_error,
    }
}

/// δ̂ᵢ at every sample point for the current estimates.
pub fn sample_bellman_errors(
    samples: &SamplePointSet,
    cost: &CostSpec,
    gains: &AdpGains,
    state: &CriticActorState,
    thetahat: &DVector<f64>,
) -> Vec<f64> {
    samples
        .points()
        .iter()
        .map(|p| {
            evaluate_cached_point(p, cost, gains, &state.gamma, &state.w_c, &state.w_a, thetahat)
                .bellman_error
        })
        .collect()
}

/// Time derivatives of the full learner state (Ŵc, Ŵa, Γ).
#[derive(Debug, Clone)]
pub struct LearnerDerivatives {
    pub w_c_dot: DVector<f64>,
    pub w_a_dot: DVector<f64>,
    pub gamma_dot: DMatrix<f64>,
}

/// Evaluates the critic, gain-matrix, and actor laws in one pass:
///
///   Ŵċ = -η_c1 Γ (ω/ρ) δ̂ - (η_c2/N) Γ Σᵢ (ωᵢ/ρᵢ) δ̂ᵢ
///   Γ̇  = (βΓ - η_c1 Γ (ωωᵀ/ρ) Γ) 𝟙{‖Γ‖ ≤ Γ̄}
///   Ŵȧ = -η_a1(Ŵa - Ŵc) - η_a2 Ŵa
///         + (η_c1 G_σᵀŴa ωᵀ/(4ρ) + Σᵢ η_c2 G_σᵢᵀŴa ωᵢᵀ/(4Nρᵢ)) Ŵc
///
/// At the saturation boundary the Γ law is clamped to zero only when the
/// unclamped field would grow ‖Γ‖ further, so the cap cannot trap Γ above
/// Γ̄ after a discrete overshoot.
#[allow(clippy::too_many_arguments)]
pub fn learner_derivatives(
    gains: &AdpGains,
    state: &CriticActorState,
    samples: &SamplePointSet,
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<LearnerDerivatives> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    check_weights(basis, &state.w_c, "critic weights")?;
    check_weights(basis, &state.w_a, "actor weights")?;
    let n_points = samples.len() as f64;

    // current-state quantities
    let jacobian = basis.jacobian(x);
    let effectiveness = model.effectiveness(x);
    let regressor = model.regressor(x);
    let control = policy_cached(&jacobian, &effectiveness, cost, &state.w_a);
    let omega = critic_regressor_cached(&jacobian, &regressor, &effectiveness, thetahat, &control);
    let rho = normalization(gains, &state.gamma, &omega);
    let delta = omega.dot(&state.w_c) + cost.instantaneous(x, &control);
    let gram = control_gram_cached(&jacobian, &effectiveness, cost);

    let mut w_c_dot = -gains.eta_c1 * &state.gamma * (&omega / rho) * delta;
    let mut correction = (gains.eta_c1 * omega.dot(&state.w_c) / (4.0 * rho))
        * (gram.transpose() * &state.w_a);

    let mut sampled_sum = DVector::zeros(basis.len());
    for point in samples.points() {
        let ev = evaluate_cached_point(
            point,
            cost,
            gains,
            &state.gamma,
            &state.w_c,
            &state.w_a,
            thetahat,
        );
        sampled_sum += (&ev.omega / ev.rho) * ev.bellman_error;
        correction += (gains.eta_c2 * ev.omega.dot(&state.w_c) / (4.0 * n_points * ev.rho))
            * (point.control_gram.transpose() * &state.w_a);
    }
    w_c_dot -= (gains.eta_c2 / n_points) * &state.gamma * sampled_sum;

    let w_a_dot = -gains.eta_a1 * (&state.w_a - &state.w_c) - gains.eta_a2 * &state.w_a
        + correction;

    let gamma_dot = gamma_derivative(gains, &state.gamma, &omega, rho);

    Ok(LearnerDerivatives {
        w_c_dot,
        w_a_dot,
        gamma_dot,
    })
}

/// Critic portion of the learning law: (Ŵċ, Γ̇).
#[allow(clippy::too_many_arguments)]
pub fn critic_derivative(
    gains: &AdpGains,
    state: &CriticActorState,
    samples: &SamplePointSet,
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = learner_derivatives(gains, state, samples, basis, model, cost, thetahat, x)?;
    Ok((d.w_c_dot, d.gamma_dot))
}

/// Actor portion of the learning law: Ŵȧ.
#[allow(clippy::too_many_arguments)]
pub fn actor_derivative(
    gains: &AdpGains,
    state: &CriticActorState,
    samples: &SamplePointSet,
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = learner_derivatives(gains, state, samples, basis, model, cost, thetahat, x)?;
    Ok(d.w_a_dot)
}

fn gamma_derivative(
    gains: &AdpGains,
    gamma: &DMatrix<f64>,
    omega: &DVector<f64>,
    rho: f64,
) -> DMatrix<f64> {
    let raw = gains.beta * gamma
        - gains.eta_c1 * gamma * (omega * omega.transpose() / rho) * gamma;
    let norm = linalg::max_eigenvalue(&linalg::symmetrize(gamma));
    if norm < gains.gamma_bar {
        return raw;
    }
    // At (or past) the cap: zero the field only when it points outward,
    // i.e. when the top-eigenvalue directional derivative is positive.
    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(gamma));
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top);
    let outward = (v.transpose() * &raw * v)[(0, 0)];
    if outward > 0.0 {
        DMatrix::zeros(gamma.nrows(), gamma.ncols())
    } else {
        raw
    }
}

/// Certificate for the sampled-regressor rank condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleCertificate {
    pub c_value: f64,
    pub pass: bool,
}

/// c = (1/N) λmin(Σᵢ ωᵢωᵢᵀ/ρᵢ) at the current estimates; passes when
/// c > threshold.
pub fn sample_rank_certificate(
    samples: &SamplePointSet,
    cost: &CostSpec,
    gains: &AdpGains,
    gamma: &DMatrix<f64>,
    thetahat: &DVector<f64>,
    w_a: &DVector<f64>,
    threshold: f64,
) -> Result<SampleCertificate> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let l = gamma.nrows();
    let mut gram = DMatrix::zeros(l, l);
    let w_c_unused = DVector::zeros(l);
    for point in samples.points() {
        let ev = evaluate_cached_point(point, cost, gains, gamma, &w_c_unused, w_a, thetahat);
        gram += &ev.omega * ev.omega.transpose() / ev.rho;
    }
    let c_value = linalg::min_eigenvalue(&gram) / samples.len() as f64;
    Ok(SampleCertificate {
        c_value,
        pass: c_value > threshold,
    })
}

pub type ScalarFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Reconstruction-error model ε(x) for inexact bases; `gradient` returns
/// ε'(x)ᵀ as a column vector.
pub struct ReconstructionError {
    pub value: ScalarFn,
    pub gradient: VectorFn,
}

/// The Bellman error written in the (unmeasurable) error coordinates
/// W̃c = W* - Ŵc, W̃a = W* - Ŵa, θ̃ = θ* - θ̂:
///
///   δ̂ = -ωᵀW̃c - W*ᵀσ'Yθ̃ + ¼W̃aᵀG_σW̃a + ¼G_ε - ε'f + ½W*ᵀσ'Gε'ᵀ
///
/// with G = gR⁻¹gᵀ and G_ε = ε'Gε'ᵀ. A test-only diagnostic: it needs the
/// oracle quantities W*, θ*, and ε (pass `None` for an exact basis, which
/// zeroes the ε terms). For exact oracles it reproduces `bellman_error`
/// identically.
#[allow(clippy::too_many_arguments)]
pub fn residual_decomposition(
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    w_star: &DVector<f64>,
    reconstruction: Option<&ReconstructionError>,
    w_c: &DVector<f64>,
    w_a: &DVector<f64>,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    let omega = critic_regressor(basis, model, cost, thetahat, w_a, x)?;
    let w_c_tilde = w_star - w_c;
    let w_a_tilde = w_star - w_a;
    let theta_tilde = model.theta_star() - thetahat;

    let jacobian = basis.jacobian(x);
    let regressor = model.regressor(x);
    let gram = control_gram_cached(&jacobian, &model.effectiveness(x), cost);

    let mut delta = -omega.dot(&w_c_tilde)
        - (w_star.transpose() * &jacobian * &regressor * &theta_tilde)[(0, 0)]
        + 0.25 * (w_a_tilde.transpose() * &gram * &w_a_tilde)[(0, 0)];

    if let Some(err) = reconstruction {
        let g = model.effectiveness(x);
        let big_g = &g * cost.r_inv() * g.transpose();
        let eps_grad = (err.gradient)(x);
        let g_eps = (eps_grad.transpose() * &big_g * &eps_grad)[(0, 0)];
        let f = model.drift(x)?;
        delta += 0.25 * g_eps - eps_grad.dot(&f)
            + 0.5 * (w_star.transpose() * &jacobian * &big_g * &eps_grad)[(0, 0)];
    }
    Ok(delta)
}

fn check_weights(basis: &ValueBasis, w: &DVector<f64>, context: &'static str) -> Result<()> {
    if w.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: basis.len(),
            actual: w.len(),
        });
    }
    Ok(())
}
