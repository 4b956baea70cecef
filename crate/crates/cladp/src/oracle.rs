//! Ground truth for linear-quadratic instances: a continuous algebraic
//! Riccati solver and the mapping of its solution onto the quadratic
//! monomial basis.
//!
//! The solver is a Newton iteration from a stabilizing gain; each step
//! solves a Lyapunov equation through its Kronecker-product linear system.
//! That needs nothing beyond an LU solve and is accurate far past the
//! desk-scale state dimensions used here.

use nalgebra::{DMatrix, DVector};

use crate::basis::ValueBasis;
use crate::error::{Error, Result};
use crate::linalg;

const CARE_TOL: f64 = 1e-12;
const CARE_MAX_ITER: usize = 100;

/// Riccati solution bundle for ẋ = Ax + Bu with cost xᵀQx + uᵀRu.
#[derive(Debug, Clone)]
pub struct LqrOracle {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Stabilizing solution of AᵀP + PA - PBR⁻¹BᵀP + Q = 0.
    pub p: DMatrix<f64>,
    /// Optimal gain K = R⁻¹BᵀP (control u = -Kx).
    pub k: DMatrix<f64>,
    /// Coefficients of xᵀPx on the degree-2 monomial basis.
    pub w_star: DVector<f64>,
}

impl LqrOracle {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        k0: &DMatrix<f64>,
        basis: &ValueBasis,
    ) -> Result<Self> {
        let p = solve_care(&a, &b, q, r, k0)?;
        let r_inv = r.clone().try_inverse().ok_or_else(|| Error::InvalidMatrix {
            what: "R".into(),
            property: "invertible",
        })?;
        let k = &r_inv * b.transpose() * &p;
        let w_star = ideal_weights(&p, basis)?;
        Ok(Self { a, b, p, k, w_star })
    }
}

/// Solves AᵀP + PA - PBR⁻¹BᵀP + Q = 0 by Newton iteration from the
/// stabilizing gain `k0`. Fails explicitly when the residual does not reach
/// 1e-12 within 100 iterations.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::InvalidMatrix {
        what: "R".into(),
        property: "invertible",
    })?;

    let mut k = k0.clone();
    let mut p = DMatrix::zeros(n, n);
    let mut residual = f64::INFINITY;
    for iteration in 0..CARE_MAX_ITER {
        let a_cl = a - b * &k;
        let rhs = -(q + k.transpose() * r * &k);
        p = solve_lyapunov(&a_cl, &rhs)?;
        p = linalg::symmetrize(&p);
        k = &r_inv * b.transpose() * &p;

        residual = care_residual(a, b, q, &r_inv, &p);
        if residual <= CARE_TOL && linalg::min_eigenvalue(&p) > 0.0 {
            return Ok(p);
        }
        let _ = iteration;
    }
    // Only the stabilizing solution is positive definite (Q is PD); a
    // residual stuck away from zero or an indefinite P means the start was
    // not stabilizing or the pair is not stabilizable.
    if residual <= 1e-10 && linalg::min_eigenvalue(&p) > 0.0 {
        return Ok(p);
    }
    Err(Error::RiccatiDiverged {
        residual,
        iterations: CARE_MAX_ITER,
    })
}

/// ‖AᵀP + PA - PBR⁻¹BᵀP + Q‖ (spectral norm).
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    linalg::spectral_norm(&res)
}

/// Solves AᵀX + XA = C for symmetric C via vec(AᵀX + XA) =
/// (I⊗Aᵀ + Aᵀ⊗I) vec(X).
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::LyapunovSingular)?;
    if !linalg::all_finite(&x) {
        return Err(Error::LyapunovSingular);
    }
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

/// Maps a symmetric P onto weights over the degree-2 monomial basis so that
/// wᵀσ(x) = xᵀPx: the x_i² feature takes P_ii, the x_i x_j feature takes
/// 2P_ij.
pub fn ideal_weights(p: &DMatrix<f64>, basis: &ValueBasis) -> Result<DVector<f64>> {
    let n = p.nrows();
    let expected = n * (n + 1) / 2;
    if basis.state_dim() != n || basis.len() != expected {
        return Err(Error::BasisMismatch(format!(
            "{} features over {} variables",
            basis.len(),
            basis.state_dim()
        )));
    }
    let mut w = DVector::zeros(basis.len());
    for k in 0..basis.len() {
        let exps = basis.exponents(k);
        let total: u32 = exps.iter().sum();
        let idx: Vec<usize> = exps
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, _)| i)
            .collect();
        match (total, idx.as_slice(), exps[idx[0]]) {
            (2, [i], 2) => w[k] = p[(*i, *i)],
            (2, [i, j], 1) => w[k] = 2.0 * p[(*i, *j)],
            _ => {
                return Err(Error::BasisMismatch(format!(
                    "feature with exponents {exps:?} is not quadratic"
                )))
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_mat(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_care_closed_forms() {
        // 2ap - b²p²/r + q = 0, positive root
        let p = solve_care(
            &scalar_mat(-1.0),
            &scalar_mat(1.0),
            &scalar_mat(1.0),
            &scalar_mat(1.0),
            &scalar_mat(0.0),
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 2.0_f64.sqrt() - 1.0, epsilon = 1e-12);

        let p = solve_care(
            &scalar_mat(0.0),
            &scalar_mat(1.0),
            &scalar_mat(1.0),
            &scalar_mat(1.0),
            &scalar_mat(1.0),
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn double_integrator_care() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = scalar_mat(1.0);
        let k0 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = solve_care(&a, &b, &q, &r, &k0).unwrap();

        let s3 = 3.0_f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]);
        assert_relative_eq!((&p - expected).amax(), 0.0, epsilon = 1e-10);

        let r_inv = r.clone().try_inverse().unwrap();
        assert!(care_residual(&a, &b, &q, &r_inv, &p) <= 1e-10);
    }

    #[test]
    fn non_stabilizing_start_fails_fast() {
        // unstable scalar plant, gain that leaves it unstable
        let out = solve_care(
            &scalar_mat(1.0),
            &scalar_mat(0.0),
            &scalar_mat(1.0),
            &scalar_mat(1.0),
            &scalar_mat(0.0),
        );
        assert!(out.is_err());
    }

    #[test]
    fn ideal_weight_mapping() {
        let basis1 = ValueBasis::polynomial(1, &[2]).unwrap();
        let w = ideal_weights(&scalar_mat(0.75), &basis1).unwrap();
        assert_eq!(w.as_slice(), &[0.75]);

        let basis2 = ValueBasis::polynomial(2, &[2]).unwrap();
        let s3 = 3.0_f64.sqrt();
        let p = DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]);
        let w = ideal_weights(&p, &basis2).unwrap();
        assert_relative_eq!(w[0], s3, epsilon = 1e-15);
        assert_relative_eq!(w[1], 2.0, epsilon = 1e-15);
        assert_relative_eq!(w[2], s3, epsilon = 1e-15);

        let w = ideal_weights(&DMatrix::identity(2, 2), &basis2).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn ideal_weights_reproduce_quadratic_form() {
        let basis = ValueBasis::polynomial(2, &[2]).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[2.0, -0.3, -0.3, 1.2]);
        let w = ideal_weights(&p, &basis).unwrap();
        for i in -5..=5 {
            for j in -5..=5 {
                let x = DVector::from_column_slice(&[i as f64 * 0.3, j as f64 * 0.4]);
                let via_basis = w.dot(&basis.features(&x));
                let direct = (x.transpose() * &p * &x)[(0, 0)];
                assert_relative_eq!(via_basis, direct, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ideal_weights_reject_wrong_basis() {
        let cubic = ValueBasis::polynomial(2, &[3]).unwrap();
        assert!(ideal_weights(&DMatrix::identity(2, 2), &cubic).is_err());
        let basis1 = ValueBasis::polynomial(1, &[2]).unwrap();
        assert!(ideal_weights(&DMatrix::identity(2, 2), &basis1).is_err());
    }
}
