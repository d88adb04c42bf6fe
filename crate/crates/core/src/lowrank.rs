//! Gaussians with covariance `W Wᵀ + Λ`, `Λ` diagonal.
//!
//! Every solve and log-determinant goes through the `L×L` capacitance
//! matrix `M = I + Wᵀ Λ⁻¹ W` (Woodbury identity and the matrix
//! determinant lemma), so the cost per observation is `O(L² p)` instead of
//! `O(p³)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Loadings `W` (`p × L`) and diagonal noise variances `lambda` (length `p`).
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankCov {
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl LowRankCov {
    pub fn new(w: DMatrix<f64>, lambda: DVector<f64>) -> Result<Self> {
        if w.nrows() != lambda.len() {
            return Err(Error::input(format!(
                "loadings have {} rows but {} noise variances were given",
                w.nrows(),
                lambda.len()
            )));
        }
        if w.ncols() > w.nrows() {
            return Err(Error::input(format!(
                "latent count {} exceeds dimension {}",
                w.ncols(),
                w.nrows()
            )));
        }
        if let Some(j) = lambda.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::input(format!(
                "noise variance {j} is {} (must be finite and > 0)",
                lambda[j]
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("loadings contain non-finite entries"));
        }
        Ok(Self { w, lambda })
    }

    /// Isotropic noise `σ² I` (the PPCA restriction).
    pub fn isotropic(w: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let p = w.nrows();
        Self::new(w, DVector::from_element(p, sigma2))
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn noise(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// `I + Wᵀ Λ⁻¹ W`.
    pub fn capacitance(&self) -> DMatrix<f64> {
        let wl = self.scaled_loadings();
        let mut m = self.w.tr_mul(&wl);
        for k in 0..m.nrows() {
            m[(k, k)] += 1.0;
        }
        m.fill_upper_triangle_with_lower_triangle();
        m
    }

    /// `Λ⁻¹ W`.
    fn scaled_loadings(&self) -> DMatrix<f64> {
        let mut wl = self.w.clone();
        for (j, mut row) in wl.row_iter_mut().enumerate() {
            row /= self.lambda[j];
        }
        wl
    }

    /// Factor the capacitance once; the result serves every solve.
    pub fn factor(&self) -> Result<CovFactor> {
        let scaled = self.scaled_loadings();
        let cap = self.capacitance();
        let chol = Cholesky::new(cap).ok_or_else(|| {
            Error::numeric("capacitance matrix is not positive definite (Cholesky failed)")
        })?;
        let logdet_cap = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet = self.lambda.iter().map(|v| v.ln()).sum::<f64>() + logdet_cap;
        Ok(CovFactor {
            inv_lambda: self.lambda.map(|v| 1.0 / v),
            scaled,
            chol,
            logdet,
        })
    }

    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.factor()?.solve(v))
    }

    pub fn logdet(&self) -> Result<f64> {
        Ok(self.factor()?.logdet())
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.factor()?.logpdf(x))
    }

    /// Dense `W Wᵀ + Λ`. Only for small `p`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut s = &self.w * self.w.transpose();
        for j in 0..self.dim() {
            s[(j, j)] += self.lambda[j];
        }
        s
    }
}

/// Cached factorization of a [`LowRankCov`].
#[derive(Debug, Clone)]
pub struct CovFactor {
    inv_lambda: DVector<f64>,
    /// `Λ⁻¹ W`, `p × L`.
    scaled: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl CovFactor {
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn inv_noise(&self) -> &DVector<f64> {
        &self.inv_lambda
    }

    pub fn scaled_loadings(&self) -> &DMatrix<f64> {
        &self.scaled
    }

    pub fn capacitance_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `M⁻¹`.
    pub fn capacitance_inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        inv.fill_upper_triangle_with_lower_triangle();
        inv
    }

    pub fn logdet_capacitance(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `(W Wᵀ + Λ)⁻¹ v = Λ⁻¹v − Λ⁻¹W M⁻¹ Wᵀ Λ⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let t = self.scaled.tr_mul(v);
        let u = self.chol.solve(&t);
        v.component_mul(&self.inv_lambda) - &self.scaled * u
    }

    /// Solve for every row of `x` (`N × p`) at once.
    pub fn solve_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let t = x * &self.scaled; // N × L
        let u = self.chol.solve(&t.transpose()); // L × N
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.inv_lambda[j];
        }
        out -= u.tr_mul(&self.scaled.transpose());
        out
    }

    /// `xᵀ (W Wᵀ + Λ)⁻¹ x` for every row of `x`.
    pub fn quad_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let t = x * &self.scaled; // N × L
        let u = self.chol.solve(&t.transpose()); // L × N
        let mut quad = DVector::zeros(x.nrows());
        for i in 0..x.nrows() {
            let diag: f64 = x
                .row(i)
                .iter()
                .zip(self.inv_lambda.iter())
                .map(|(v, il)| v * v * il)
                .sum();
            let corr: f64 = t.row(i).iter().zip(u.column(i).iter()).map(|(a, b)| a * b).sum();
            quad[i] = diag - corr;
        }
        quad
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let p = x.len() as f64;
        let quad = x.dot(&self.solve(x));
        -0.5 * (p * LN_2PI + self.logdet + quad)
    }

    /// Log density of each row of `x`, sharing one factorization.
    pub fn logpdf_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let p = x.ncols() as f64;
        let c = p * LN_2PI + self.logdet;
        self.quad_rows(x).map(|q| -0.5 * (c + q))
    }
}
