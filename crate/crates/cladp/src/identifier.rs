//! State observer and concurrent-learning parameter estimator.
//!
//! The observer is x̂̇ = Y(x)θ̂ + g(x)u + kₓ(x - x̂). The parameter update
//! augments the instantaneous gradient Γ_θ Yᵀx̃ with residuals evaluated on
//! a recorded history stack,
//!
//!   θ̂̇ = Γ_θ Yᵀx̃ + Γ_θ k_θ Σⱼ Yⱼᵀ(ẋⱼ - gⱼuⱼ - Yⱼθ̂),
//!
//! so that identifiability rests on the rank of the stack's regressor Gram
//! matrix Σⱼ YⱼᵀYⱼ rather than on persistence of excitation. The stack
//! stores past states, applied inputs, and state-derivative estimates, and
//! its minimum Gram eigenvalue is the certificate everything downstream
//! leans on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::PlantModel;

/// One recorded instant: state, applied input, state-derivative estimate,
/// and the cached regressor/effectiveness evaluations.
#[derive(Debug, Clone)]
pub struct StackEntry {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub xdot: DVector<f64>,
    pub regressor: DMatrix<f64>,
    pub effectiveness: DMatrix<f64>,
}

impl StackEntry {
    pub fn from_model(
        model: &PlantModel,
        x: DVector<f64>,
        u: DVector<f64>,
        xdot: DVector<f64>,
    ) -> Self {
        let regressor = model.regressor(&x);
        let effectiveness = model.effectiveness(&x);
        Self {
            x,
            u,
            xdot,
            regressor,
            effectiveness,
        }
    }

    /// ẋⱼ - gⱼuⱼ - Yⱼθ̂, the model residual this entry contributes.
    fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.xdot - &self.effectiveness * &self.u - &self.regressor * theta
    }
}

/// Pass/fail certificate for the stack's rank condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCertificate {
    pub pass: bool,
    pub min_eigenvalue: f64,
}

/// Bounded store of recorded instants with a greedily maintained Gram
/// matrix Σⱼ YⱼᵀYⱼ.
#[derive(Debug, Clone)]
pub struct HistoryStack {
    capacity: usize,
    param_dim: usize,
    entries: Vec<StackEntry>,
    gram: DMatrix<f64>,
    min_eig: f64,
}

impl HistoryStack {
    pub fn new(capacity: usize, param_dim: usize) -> Self {
        assert!(capacity > 0, "history stack capacity must be positive");
        Self {
            capacity,
            param_dim,
            entries: Vec::with_capacity(capacity),
            gram: DMatrix::zeros(param_dim, param_dim),
            min_eig: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    /// Incrementally maintained Σⱼ YⱼᵀYⱼ.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Minimum eigenvalue of the Gram matrix.
    pub fn min_gram_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    /// Σⱼ YⱼᵀYⱼ rebuilt from the stored entries (cross-check for the
    /// incremental bookkeeping).
    pub fn recompute_gram(&self) -> DMatrix<f64> {
        let mut gram = DMatrix::zeros(self.param_dim, self.param_dim);
        for e in &self.entries {
            gram += e.regressor.transpose() * &e.regressor;
        }
        gram
    }

    /// Inserts below capacity; at capacity, replaces the entry whose removal
    /// most improves the minimum Gram eigenvalue, and only when that is a
    /// strict improvement. Returns whether the candidate was kept. The
    /// minimum eigenvalue never decreases.
    pub fn insert(&mut self, candidate: StackEntry) -> bool {
        assert_eq!(candidate.regressor.ncols(), self.param_dim, "candidate parameter dimension");
        let contribution = candidate.regressor.transpose() * &candidate.regressor;
        if self.entries.len() < self.capacity {
            self.gram += &contribution;
            self.min_eig = linalg::min_eigenvalue(&self.gram);
            self.entries.push(candidate);
            return true;
        }

        let mut best: Option<(usize, f64, DMatrix<f64>)> = None;
        for (j, entry) in self.entries.iter().enumerate() {
            let gram_j =
                &self.gram - entry.regressor.transpose() * &entry.regressor + &contribution;
            let eig_j = linalg::min_eigenvalue(&gram_j);
            if best.as_ref().is_none_or(|(_, e, _)| eig_j > *e) {
                best = Some((j, eig_j, gram_j));
            }
        }
        match best {
            Some((j, eig_j, gram_j)) if eig_j > self.min_eig + 1e-12 => {
                self.entries[j] = candidate;
                self.gram = gram_j;
                self.min_eig = eig_j;
                true
            }
            _ => false,
        }
    }

    /// Passes when the minimum Gram eigenvalue clears `threshold`; the
    /// numeric stand-in for requiring the Gram matrix to have full rank.
    pub fn rank_certificate(&self, threshold: f64) -> RankCertificate {
        RankCertificate {
            pass: self.min_eig > threshold,
            min_eigenvalue: self.min_eig,
        }
    }

    /// Σⱼ Yⱼᵀ(ẋⱼ - gⱼuⱼ - Yⱼθ̂). Zero vector for an empty stack; the public
    /// update law rejects that case, see [`theta_update_derivative`].
    pub fn residual_sum(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut sum = DVector::zeros(self.param_dim);
        for e in &self.entries {
            sum += e.regressor.transpose() * e.residual(theta);
        }
        sum
    }
}

/// Observer and parameter-estimate state.
#[derive(Debug, Clone)]
pub struct IdentifierState {
    pub xhat: DVector<f64>,
    pub thetahat: DVector<f64>,
}

/// Observer gain kₓ (positive diagonal), adaptation gain Γ_θ (symmetric
/// positive definite), and the concurrent-learning gain k_θ.
#[derive(Debug, Clone)]
pub struct IdentifierGains {
    k_x: DMatrix<f64>,
    gamma_theta: DMatrix<f64>,
    gamma_theta_inv: DMatrix<f64>,
    k_theta: f64,
}

impl IdentifierGains {
    pub fn new(k_x_diagonal: DVector<f64>, gamma_theta: DMatrix<f64>, k_theta: f64) -> Result<Self> {
        if k_x_diagonal.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidMatrix {
                what: "k_x".into(),
                property: "diagonal with positive entries",
            });
        }
        if !linalg::is_symmetric_positive_definite(&gamma_theta, 1e-10) {
            return Err(Error::InvalidMatrix {
                what: "Gamma_theta".into(),
                property: "symmetric positive definite",
            });
        }
        if k_theta < 0.0 {
            return Err(Error::InvalidMatrix {
                what: "k_theta".into(),
                property: "nonnegative",
            });
        }
        let gamma_theta_inv =
            gamma_theta
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidMatrix {
                    what: "Gamma_theta".into(),
                    property: "invertible",
                })?;
        Ok(Self {
            k_x: DMatrix::from_diagonal(&k_x_diagonal),
            gamma_theta,
            gamma_theta_inv,
            k_theta,
        })
    }

    pub fn k_x(&self) -> &DMatrix<f64> {
        &self.k_x
    }

    pub fn k_x_under(&self) -> f64 {
        self.k_x.diagonal().min()
    }

    pub fn gamma_theta(&self) -> &DMatrix<f64> {
        &self.gamma_theta
    }

    pub fn gamma_theta_inv(&self) -> &DMatrix<f64> {
        &self.gamma_theta_inv
    }

    pub fn k_theta(&self) -> f64 {
        self.k_theta
    }
}

/// x̂̇ = Y(x)θ̂ + g(x)u + kₓ(x - x̂).
pub fn observer_derivative(
    model: &PlantModel,
    gains: &IdentifierGains,
    state: &IdentifierState,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let fhat = model.drift_with(x, &state.thetahat)?;
    if u.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "observer input",
            expected: model.input_dim(),
            actual: u.len(),
        });
    }
    let xtilde = x - &state.xhat;
    Ok(fhat + model.effectiveness(x) * u + gains.k_x() * xtilde)
}

/// θ̂̇ = Γ_θ Y(x)ᵀx̃ + Γ_θ k_θ Σⱼ Yⱼᵀ(ẋⱼ - gⱼuⱼ - Yⱼθ̂).
///
/// Errors on an empty stack: without recorded data the concurrent-learning
/// law carries no identifiability information.
pub fn theta_update_derivative(
    model: &PlantModel,
    gains: &IdentifierGains,
    stack: &HistoryStack,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
    xtilde: &DVector<f64>,
) -> Result<DVector<f64>> {
    if stack.is_empty() {
        return Err(Error::EmptyHistoryStack);
    }
    Ok(theta_update_unchecked(model, gains, stack, thetahat, x, xtilde))
}

/// Same law without the non-empty check; the simulator uses this during the
/// start-up window before the first record, when the concurrent term is an
/// empty sum.
pub(crate) fn theta_update_unchecked(
    model: &PlantModel,
    gains: &IdentifierGains,
    stack: &HistoryStack,
    thetahat: &DVector<f64>,
    x: &DVector<f64>,
    xtilde: &DVector<f64>,
) -> DVector<f64> {
    let instantaneous = model.regressor(x).transpose() * xtilde;
    let concurrent = stack.residual_sum(thetahat);
    gains.gamma_theta() * instantaneous + gains.gamma_theta() * (gains.k_theta() * concurrent)
}

/// Central difference (x[k+1] - x[k-1]) / (2 dt) over a uniformly sampled
/// series. Boundary indices are rejected; one-sided estimates are never
/// recorded into the stack.
pub fn central_difference(series: &[DVector<f64>], index: usize, dt: f64) -> Result<DVector<f64>> {
    if index == 0 || index + 1 >= series.len() {
        return Err(Error::DerivativeBoundary {
            index,
            len: series.len(),
        });
    }
    Ok((&series[index + 1] - &series[index - 1]) / (2.0 * dt))
}
