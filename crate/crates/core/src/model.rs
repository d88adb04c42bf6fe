//! The linear-Gaussian factor model `z ~ N(0, I)`, `x | z ~ N(W z, Λ)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lowrank::LowRankCov;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    cov: LowRankCov,
    /// Training-set mean, subtracted from raw observations before any density
    /// or posterior evaluation.
    mean_offset: DVector<f64>,
    /// Noise restricted to `σ² I` during fitting.
    isotropic: bool,
}

impl FactorModel {
    pub fn new(cov: LowRankCov, mean_offset: DVector<f64>) -> Result<Self> {
        if mean_offset.len() != cov.dim() {
            return Err(Error::input(format!(
                "mean offset has length {} but the model dimension is {}",
                mean_offset.len(),
                cov.dim()
            )));
        }
        if mean_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("mean offset contains non-finite entries"));
        }
        Ok(Self {
            cov,
            mean_offset,
            isotropic: false,
        })
    }

    /// Zero-mean model.
    pub fn centered(cov: LowRankCov) -> Self {
        let p = cov.dim();
        Self {
            cov,
            mean_offset: DVector::zeros(p),
            isotropic: false,
        }
    }

    /// Probabilistic PCA: `Λ = σ² I`.
    pub fn ppca(w: DMatrix<f64>, sigma2: f64, mean_offset: DVector<f64>) -> Result<Self> {
        let mut model = Self::new(LowRankCov::isotropic(w, sigma2)?, mean_offset)?;
        model.isotropic = true;
        Ok(model)
    }

    pub fn with_isotropic(mut self, isotropic: bool) -> Self {
        self.isotropic = isotropic;
        self
    }

    pub fn cov(&self) -> &LowRankCov {
        &self.cov
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        self.cov.loadings()
    }

    pub fn noise(&self) -> &DVector<f64> {
        self.cov.noise()
    }

    pub fn mean_offset(&self) -> &DVector<f64> {
        &self.mean_offset
    }

    pub fn is_isotropic(&self) -> bool {
        self.isotropic
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn latents(&self) -> usize {
        self.cov.rank()
    }

    /// Subtract the stored mean offset from each row.
    pub fn center(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_cols(x)?;
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean_offset[j]);
        }
        Ok(out)
    }

    fn check_cols(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::input(format!(
                "data has {} columns but the model expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `p(z | x) = N(M⁻¹ Wᵀ Λ⁻¹ x, M⁻¹)` with `M = I + Wᵀ Λ⁻¹ W`.
    pub fn posterior(&self) -> Result<GaussianPosterior> {
        let factor = self.cov.factor()?;
        let mean_map = factor
            .capacitance_cholesky()
            .solve(&factor.scaled_loadings().transpose());
        GaussianPosterior::from_parts(mean_map, factor.capacitance_inverse())
    }

    /// Sum of `log p(x)` over rows of already-centered `x`.
    pub fn marginal_loglik(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_cols(x)?;
        Ok(self.cov.factor()?.logpdf_rows(x).sum())
    }

    /// Per-row `log p(x)` for already-centered `x`.
    pub fn loglik_rows(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_cols(x)?;
        Ok(self.cov.factor()?.logpdf_rows(x))
    }

    /// Ancestral sampling. Returns `(Z, X)` with the mean offset added to `X`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let mut rng = rng::seeded(seed);
        let z = rng::normal_matrix(&mut rng, n, self.latents());
        let noise = rng::normal_matrix(&mut rng, n, self.dim());
        let mut x = &z * self.loadings().transpose();
        for j in 0..self.dim() {
            let sd = self.noise()[j].sqrt();
            let m = self.mean_offset[j];
            for i in 0..n {
                x[(i, j)] += sd * noise[(i, j)] + m;
            }
        }
        Ok((z, x))
    }

    /// Posterior means for every row of centered `x` (`N × L`).
    pub fn posterior_mean_scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_cols(x)?;
        Ok(self.posterior()?.scores(x))
    }
}

/// Posterior over latents. The covariance does not depend on `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean_map: DMatrix<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn from_parts(mean_map: DMatrix<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::numeric("posterior covariance is not positive definite"))?
            .unpack();
        Ok(Self {
            mean_map,
            cov,
            chol,
        })
    }

    /// `L × p`.
    pub fn mean_map(&self) -> &DMatrix<f64> {
        &self.mean_map
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular factor of [`Self::cov`].
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mean_map * x
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.mean_map.transpose()
    }

    pub fn logpdf(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let l = z.len() as f64;
        let diff = z - self.mean(x);
        let u = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        let logdet = 2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        -0.5 * (l * crate::lowrank::LN_2PI + logdet + u.norm_squared())
    }
}
