//! Predictive heads `p(y | z)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Link {
    /// `y | z ~ N(βᵀz + b, noise_var)`, one column per target.
    Gaussian { noise_var: f64 },
    /// `y | z ~ Bernoulli(σ(βᵀz + b))`, a single binary target.
    Logistic,
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Gaussian { .. } => "gaussian",
            Link::Logistic => "logistic",
        }
    }
}

/// Linear head over the latent space. `coef` is `L × k` for `k` targets;
/// rows whose mask entry is `false` are held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveHead {
    coef: DMatrix<f64>,
    intercept: DVector<f64>,
    link: Link,
    mask: Vec<bool>,
}

impl PredictiveHead {
    pub fn new(
        coef: DMatrix<f64>,
        intercept: DVector<f64>,
        link: Link,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if mask.len() != coef.nrows() {
            return Err(Error::input(format!(
                "supervision mask has {} entries for {} latents",
                mask.len(),
                coef.nrows()
            )));
        }
        if intercept.len() != coef.ncols() {
            return Err(Error::input("intercept length must equal the target count"));
        }
        match link {
            Link::Gaussian { noise_var } if !(noise_var > 0.0 && noise_var.is_finite()) => {
                return Err(Error::input(format!(
                    "gaussian head noise variance must be > 0, got {noise_var}"
                )))
            }
            Link::Logistic if coef.ncols() != 1 => {
                return Err(Error::input("logistic head supports exactly one target"))
            }
            _ => {}
        }
        let mut head = Self {
            coef,
            intercept,
            link,
            mask,
        };
        head.apply_mask();
        Ok(head)
    }

    /// All-zero head.
    pub fn zeros(latents: usize, targets: usize, link: Link, mask: Vec<bool>) -> Result<Self> {
        Self::new(
            DMatrix::zeros(latents, targets),
            DVector::zeros(targets),
            link,
            mask,
        )
    }

    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn latents(&self) -> usize {
        self.coef.nrows()
    }

    pub fn targets(&self) -> usize {
        self.coef.ncols()
    }

    /// Index of the first supervised latent, if any.
    pub fn supervised_factor(&self) -> Option<usize> {
        self.mask.iter().position(|&m| m)
    }

    pub(crate) fn apply_mask(&mut self) {
        for (k, &m) in self.mask.iter().enumerate() {
            if !m {
                self.coef.row_mut(k).fill(0.0);
            }
        }
    }

    /// Linear predictor `Zβ + b` for each row of `z` (`N × k`). For the
    /// logistic link these are log-odds.
    pub fn linear_predictor(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut eta = z * &self.coef;
        for (t, mut col) in eta.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.intercept[t]);
        }
        eta
    }

    /// `E[y | z]`: the mean for gaussian, the probability for logistic.
    pub fn predict_mean(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let eta = self.linear_predictor(z);
        match self.link {
            Link::Gaussian { .. } => eta,
            Link::Logistic => eta.map(sigmoid),
        }
    }

    /// `log p(y | z)` averaged over the rows of `z` (`S × L` samples), for a
    /// single outcome `y` of length `k`.
    pub fn loglik(&self, z: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        if y.len() != self.targets() {
            return Err(Error::input(format!(
                "outcome has {} entries, head has {} targets",
                y.len(),
                self.targets()
            )));
        }
        if z.ncols() != self.latents() || z.nrows() == 0 {
            return Err(Error::input("latent samples have the wrong shape"));
        }
        check_outcome(self.link, y)?;
        let eta = self.linear_predictor(z);
        let total: f64 = eta
            .row_iter()
            .map(|row| {
                row.iter()
                    .zip(y)
                    .map(|(&e, &yt)| point_loglik(self.link, e, yt))
                    .sum::<f64>()
            })
            .sum();
        Ok(total / z.nrows() as f64)
    }
}

pub(crate) fn check_outcome(link: Link, y: &[f64]) -> Result<()> {
    if let Link::Logistic = link {
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::input(format!(
                "logistic outcome must be 0 or 1, got {v}"
            )));
        }
    } else if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("outcome contains non-finite values"));
    }
    Ok(())
}

pub(crate) fn point_loglik(link: Link, eta: f64, y: f64) -> f64 {
    match link {
        Link::Gaussian { noise_var } => {
            let r = y - eta;
            -0.5 * (LN_2PI + noise_var.ln() + r * r / noise_var)
        }
        Link::Logistic => log_sigmoid((2.0 * y - 1.0) * eta),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Convenience for building head-shaped masks.
pub fn first_factor_mask(latents: usize) -> Vec<bool> {
    (0..latents).map(|k| k == 0).collect()
}
