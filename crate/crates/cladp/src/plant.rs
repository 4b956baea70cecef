//! Control-affine plants with linearly parameterized drift and the
//! quadratic running cost.
//!
//! A plant is ẋ = f(x) + g(x)u with f(x) = Y(x)θ*, where Y is a known
//! regressor and θ* is the true parameter vector. θ* is available to the
//! simulator (it generates the ground-truth trajectory) but the learning
//! laws only ever see the estimate θ̂.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Control-affine plant ẋ = Y(x)θ* + g(x)u.
pub struct PlantModel {
    state_dim: usize,
    input_dim: usize,
    param_dim: usize,
    theta_star: DVector<f64>,
    regressor: MatrixFn,
    effectiveness: MatrixFn,
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("param_dim", &self.param_dim)
            .field("theta_star", &self.theta_star)
            .finish_non_exhaustive()
    }
}

impl PlantModel {
    /// Builds a plant, rejecting regressors that do not vanish at the origin
    /// (the drift must satisfy f(0) = 0).
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        theta_star: DVector<f64>,
        regressor: MatrixFn,
        effectiveness: MatrixFn,
    ) -> Result<Self> {
        let param_dim = theta_star.len();
        let origin = DVector::zeros(state_dim);
        let y0 = regressor(&origin);
        if y0.nrows() != state_dim || y0.ncols() != param_dim {
            return Err(Error::DimensionMismatch {
                context: "regressor output",
                expected: state_dim * param_dim,
                actual: y0.nrows() * y0.ncols(),
            });
        }
        let norm = y0.norm();
        if norm > 1e-12 {
            return Err(Error::RegressorAtOrigin { norm });
        }
        let g0 = effectiveness(&origin);
        if g0.nrows() != state_dim || g0.ncols() != input_dim {
            return Err(Error::DimensionMismatch {
                context: "control effectiveness output",
                expected: state_dim * input_dim,
                actual: g0.nrows() * g0.ncols(),
            });
        }
        Ok(Self {
            state_dim,
            input_dim,
            param_dim,
            theta_star,
            regressor,
            effectiveness,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    /// True parameters; simulator-side knowledge only.
    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    /// Y(x).
    pub fn regressor(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.regressor)(x)
    }

    /// g(x).
    pub fn effectiveness(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.effectiveness)(x)
    }

    /// f(x) = Y(x)θ*.
    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        if !linalg::all_finite(x) {
            return Err(Error::non_finite("drift input x"));
        }
        Ok(self.regressor(x) * &self.theta_star)
    }

    /// ẋ = f(x) + g(x)u.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(u)?;
        if !linalg::all_finite(u) {
            return Err(Error::non_finite("dynamics input u"));
        }
        Ok(self.drift(x)? + self.effectiveness(x) * u)
    }

    /// Drift evaluated with an arbitrary parameter vector, Y(x)θ̂.
    pub fn drift_with(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        if theta.len() != self.param_dim {
            return Err(Error::DimensionMismatch {
                context: "drift parameter vector",
                expected: self.param_dim,
                actual: theta.len(),
            });
        }
        Ok(self.regressor(x) * theta)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "plant state",
                expected: self.state_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "plant input",
                expected: self.input_dim,
                actual: u.len(),
            });
        }
        Ok(())
    }
}

/// Quadratic running cost r(x, u) = xᵀQx + uᵀRu.
#[derive(Debug, Clone)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    q_under: f64,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric_positive_definite(&q, 1e-10) {
            return Err(Error::InvalidMatrix {
                what: "Q".into(),
                property: "symmetric positive definite",
            });
        }
        if !linalg::is_symmetric_positive_definite(&r, 1e-10) {
            return Err(Error::InvalidMatrix {
                what: "R".into(),
                property: "symmetric positive definite",
            });
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidMatrix {
                what: "R".into(),
                property: "invertible",
            })?;
        let q_under = linalg::min_eigenvalue(&q);
        Ok(Self {
            q,
            r,
            r_inv,
            q_under,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    /// Smallest eigenvalue of Q.
    pub fn q_under(&self) -> f64 {
        self.q_under
    }

    /// r(x, u) = xᵀQx + uᵀRu.
    pub fn instantaneous(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.q.nrows(), "cost state dimension");
        assert_eq!(u.len(), self.r.nrows(), "cost input dimension");
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }
}

pub mod catalog {
    //! Named desk-scale plants used by the benchmark configs and tests.

    use super::*;

    /// Linear realization ẋ = Ax + Bu of a catalog plant, with a known
    /// stabilizing initial gain for the Riccati iteration.
    pub struct LinearRealization {
        pub a: DMatrix<f64>,
        pub b: DMatrix<f64>,
        pub k0: DMatrix<f64>,
    }

    /// Builds a catalog plant by name, optionally overriding θ*.
    pub fn build(name: &str, theta_star: Option<DVector<f64>>) -> Result<PlantModel> {
        match name {
            "scalar_lqr" => scalar_lqr(theta_star),
            "double_integrator" => double_integrator(theta_star),
            "cubic_oscillator" => cubic_oscillator(theta_star),
            other => Err(Error::UnknownPlant(other.into())),
        }
    }

    /// Linear realization for plants with linear drift, if the catalog entry
    /// has one. Returns `None` for the nonlinear entries.
    pub fn linear_realization(name: &str, model: &PlantModel) -> Option<LinearRealization> {
        match name {
            "scalar_lqr" => {
                let a = DMatrix::from_element(1, 1, model.theta_star()[0]);
                let b = DMatrix::from_element(1, 1, 1.0);
                // a - k0 = -1 for any a
                let k0 = DMatrix::from_element(1, 1, model.theta_star()[0] + 1.0);
                Some(LinearRealization { a, b, k0 })
            }
            "double_integrator" => {
                let t = model.theta_star();
                let a = DMatrix::from_row_slice(2, 2, &[t[0], t[1], t[2], t[3]]);
                let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
                let k0 = DMatrix::from_row_slice(1, 2, &[t[0] + 1.0, t[3] + 1.0]);
                Some(LinearRealization { a, b, k0 })
            }
            _ => None,
        }
    }

    /// ẋ = θ*x + u with default θ* = -1.
    fn scalar_lqr(theta_star: Option<DVector<f64>>) -> Result<PlantModel> {
        let theta = theta_star.unwrap_or_else(|| DVector::from_element(1, -1.0));
        check_param_dim("scalar_lqr", &theta, 1)?;
        PlantModel::new(
            1,
            1,
            theta,
            Box::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, x[0])),
            Box::new(|_: &DVector<f64>| DMatrix::from_element(1, 1, 1.0)),
        )
    }

    /// Planar plant with fully parameterized linear drift; the default
    /// θ* = (0, 1, 0, 0) yields the double integrator ẍ = u.
    fn double_integrator(theta_star: Option<DVector<f64>>) -> Result<PlantModel> {
        let theta =
            theta_star.unwrap_or_else(|| DVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0]));
        check_param_dim("double_integrator", &theta, 4)?;
        PlantModel::new(
            2,
            1,
            theta,
            Box::new(|x: &DVector<f64>| {
                DMatrix::from_row_slice(2, 4, &[x[0], x[1], 0.0, 0.0, 0.0, 0.0, x[0], x[1]])
            }),
            Box::new(|_: &DVector<f64>| DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
        )
    }

    /// Polynomial-drift oscillator ẋ₁ = θ₁x₂, ẋ₂ = θ₂x₁³ + θ₃x₂ + u;
    /// the default θ* = (1, -1, -1) is a damped cubic spring.
    fn cubic_oscillator(theta_star: Option<DVector<f64>>) -> Result<PlantModel> {
        let theta = theta_star.unwrap_or_else(|| DVector::from_column_slice(&[1.0, -1.0, -1.0]));
        check_param_dim("cubic_oscillator", &theta, 3)?;
        PlantModel::new(
            2,
            1,
            theta,
            Box::new(|x: &DVector<f64>| {
                DMatrix::from_row_slice(2, 3, &[x[1], 0.0, 0.0, 0.0, x[0].powi(3), x[1]])
            }),
            Box::new(|_: &DVector<f64>| DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
        )
    }

    fn check_param_dim(name: &str, theta: &DVector<f64>, expected: usize) -> Result<()> {
        if theta.len() != expected {
            return Err(Error::Config {
                path: format!("[plant].theta_star ({name})"),
                reason: format!("expected {expected} parameters, got {}", theta.len()),
            });
        }
        Ok(())
    }
}
