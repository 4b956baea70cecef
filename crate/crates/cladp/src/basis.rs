//! Polynomial feature vector σ(x) for the value-function approximation,
//! with its analytic Jacobian σ'(x).
//!
//! Features are monomials of total degree >= 2, so σ(0) = 0 and σ'(0) = 0
//! hold by construction. Within each degree the monomials are ordered
//! lexicographically by exponent tuple with the first coordinate most
//! significant, e.g. for two variables and degree 2: x₁², x₁x₂, x₂².

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::{CostSpec, PlantModel};

/// Monomial feature basis for the value function.
#[derive(Debug, Clone)]
pub struct ValueBasis {
    state_dim: usize,
    exponents: Vec<Vec<u32>>,
    description: String,
}

impl ValueBasis {
    /// All monomials of the listed total degrees, each degree >= 2.
    pub fn polynomial(state_dim: usize, degrees: &[u32]) -> Result<Self> {
        let mut degrees = degrees.to_vec();
        degrees.sort_unstable();
        degrees.dedup();
        if degrees.is_empty() {
            return Err(Error::InvalidBasisDegree(0));
        }
        let mut exponents = Vec::new();
        for &d in &degrees {
            if d < 2 {
                return Err(Error::InvalidBasisDegree(d));
            }
            monomials_of_degree(state_dim, d, &mut exponents);
        }
        let description = format!(
            "monomials of degree {:?} in {} variable{}",
            degrees,
            state_dim,
            if state_dim == 1 { "" } else { "s" }
        );
        Ok(Self {
            state_dim,
            exponents,
            description,
        })
    }

    /// Number of features L.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Exponent tuple of feature `k`.
    pub fn exponents(&self, k: usize) -> &[u32] {
        &self.exponents[k]
    }

    /// σ(x) ∈ ℝᴸ.
    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.state_dim, "basis input dimension");
        DVector::from_iterator(
            self.len(),
            self.exponents.iter().map(|e| monomial(x, e)),
        )
    }

    /// σ'(x) ∈ ℝ^{L×n}, row k holding ∇σₖ(x).
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(x.len(), self.state_dim, "basis input dimension");
        let mut jac = DMatrix::zeros(self.len(), self.state_dim);
        for (k, exps) in self.exponents.iter().enumerate() {
            for j in 0..self.state_dim {
                let ej = exps[j];
                if ej == 0 {
                    continue;
                }
                let mut v = ej as f64;
                for (i, &ei) in exps.iter().enumerate() {
                    let p = if i == j { ei - 1 } else { ei };
                    v *= x[i].powi(p as i32);
                }
                jac[(k, j)] = v;
            }
        }
        jac
    }
}

fn monomial(x: &DVector<f64>, exps: &[u32]) -> f64 {
    exps.iter()
        .enumerate()
        .map(|(i, &e)| x[i].powi(e as i32))
        .product()
}

fn monomials_of_degree(n: usize, degree: u32, out: &mut Vec<Vec<u32>>) {
    let mut current = vec![0u32; n];
    fill(&mut current, 0, degree, out);

    fn fill(current: &mut Vec<u32>, dim: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if dim == current.len() - 1 {
            current[dim] = remaining;
            out.push(current.clone());
            return;
        }
        for e in (0..=remaining).rev() {
            current[dim] = e;
            fill(current, dim + 1, remaining - e, out);
        }
        current[dim] = 0;
    }
}

/// G_σ(x) = σ'(x) g(x) R⁻¹ g(x)ᵀ σ'(x)ᵀ, the control-channel Gram matrix
/// in feature coordinates. Symmetric positive semidefinite.
pub fn control_gram(
    basis: &ValueBasis,
    model: &PlantModel,
    cost: &CostSpec,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let jac = basis.jacobian(x);
    let g = model.effectiveness(x);
    control_gram_cached(&jac, &g, cost)
}

/// Same as [`control_gram`] but from pre-evaluated σ'(x) and g(x).
pub fn control_gram_cached(
    jacobian: &DMatrix<f64>,
    effectiveness: &DMatrix<f64>,
    cost: &CostSpec,
) -> DMatrix<f64> {
    let jg = jacobian * effectiveness;
    &jg * cost.r_inv() * jg.transpose()
}
