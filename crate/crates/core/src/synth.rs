//! Synthetic benchmark: a factor model whose outcome is carried by its
//! lowest-variance latent, plus the stimulation-target experiment.
//!
//! ```text
//! z   ~ N(0, diag(λ₁, 1, …, 1))
//! x|z ~ N(W z, σ² I)
//! y*|z ~ N(z₁, τ)
//! y   = 1{y* > 0}
//! ```
//!
//! Column 1 of `W` is 1 on the first `block` covariates and 0 elsewhere; the
//! remaining columns are i.i.d. standard normal.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample;
use serde::Serialize;

use crate::baselines::PcrModel;
use crate::error::{Error, Result};
use crate::head::PredictiveHead;
use crate::model::FactorModel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthConfig {
    pub p: usize,
    pub latents: usize,
    pub n: usize,
    pub sigma2: f64,
    /// Prior variance of the predictive latent; must be below 1.
    pub lambda1: f64,
    /// Variance of `y*` around `z₁`.
    pub tau: f64,
    /// Number of covariates loading on the predictive latent.
    pub block: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            p: 440,
            latents: 10,
            n: 2000,
            sigma2: 1.0,
            lambda1: 0.5,
            tau: 0.001,
            block: 40,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.latents == 0 || self.n == 0 || self.block == 0 {
            return Err(Error::input("synthetic counts must be positive"));
        }
        if self.block > self.p {
            return Err(Error::input("block size cannot exceed the covariate count"));
        }
        if !(self.lambda1 > 0.0 && self.lambda1 < 1.0) {
            return Err(Error::input(format!(
                "lambda1 must lie in (0, 1), got {}",
                self.lambda1
            )));
        }
        if !(self.sigma2 > 0.0) || !(self.tau > 0.0) {
            return Err(Error::input("sigma2 and tau must be positive"));
        }
        Ok(())
    }

    /// Prior variances of the latents.
    pub fn latent_variances(&self) -> DVector<f64> {
        DVector::from_fn(self.latents, |k, _| if k == 0 { self.lambda1 } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub x: DMatrix<f64>,
    /// 0/1 labels.
    pub y: DVector<f64>,
    pub y_star: DVector<f64>,
    pub z: DMatrix<f64>,
    pub w_true: DMatrix<f64>,
    pub config: SynthConfig,
}

impl SynthData {
    /// Outcome as an `N × 1` matrix.
    pub fn y_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.y.len(), 1, self.y.as_slice())
    }

    /// Rows `[0, n_train)` for training and the rest for testing.
    pub fn split(&self, test_fraction: f64) -> Result<(SynthSplit, SynthSplit)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::input("test fraction must lie in (0, 1)"));
        }
        let n = self.x.nrows();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        let n_train = n - n_test;
        if n_train < 2 || n_test < 2 {
            return Err(Error::input("split leaves fewer than two rows on one side"));
        }
        let take = |start: usize, len: usize| SynthSplit {
            x: self.x.rows(start, len).clone_owned(),
            y: self.y.rows(start, len).clone_owned(),
        };
        Ok((take(0, n_train), take(n_train, n_test)))
    }

    /// Row vector `e₁ᵀ M⁻¹ Wᵀ / σ²` of the true model: the change in the
    /// posterior mean of `z₁` per unit shift of each covariate.
    pub fn true_effects(&self) -> Result<DVector<f64>> {
        let cfg = &self.config;
        let w = &self.w_true;
        let mut m = w.tr_mul(w) / cfg.sigma2;
        let prior = cfg.latent_variances();
        for k in 0..cfg.latents {
            m[(k, k)] += 1.0 / prior[k];
        }
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::numeric("true posterior precision is not positive definite"))?;
        let mut e1 = DVector::zeros(cfg.latents);
        e1[0] = 1.0;
        let row = chol.solve(&e1);
        Ok(w * row / cfg.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplit {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl SynthSplit {
    pub fn y_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.y.len(), 1, self.y.as_slice())
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let (p, l, n) = (cfg.p, cfg.latents, cfg.n);
    let mut w = DMatrix::zeros(p, l);
    for j in 0..cfg.block {
        w[(j, 0)] = 1.0;
    }
    for j in 0..p {
        for k in 1..l {
            w[(j, k)] = rng::standard_normal(&mut r);
        }
    }
    let prior_sd = cfg.latent_variances().map(f64::sqrt);
    let mut z = rng::normal_matrix(&mut r, n, l);
    for (k, mut col) in z.column_iter_mut().enumerate() {
        col *= prior_sd[k];
    }
    let noise = rng::normal_matrix(&mut r, n, p) * cfg.sigma2.sqrt();
    let x = &z * w.transpose() + noise;
    let tau_sd = cfg.tau.sqrt();
    let y_star = DVector::from_iterator(
        n,
        (0..n).map(|i| z[(i, 0)] + tau_sd * rng::standard_normal(&mut r)),
    );
    let y = y_star.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    Ok(SynthData {
        x,
        y,
        y_star,
        z,
        w_true: w,
        config: *cfg,
    })
}

/// Random stimulation protocols: each picks `k_stim` distinct covariates
/// uniformly from the `k_pool` largest `|weights|` (ties broken by ascending
/// index).
pub fn select_targets(
    weights: &[f64],
    k_pool: usize,
    k_stim: usize,
    n_stims: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::input("saliency weights must be finite"));
    }
    if k_stim > k_pool {
        return Err(Error::input(format!(
            "cannot pick {k_stim} targets from a pool of {k_pool}"
        )));
    }
    if k_pool > weights.len() {
        return Err(Error::input(format!(
            "pool of {k_pool} exceeds the {} available covariates",
            weights.len()
        )));
    }
    let pool = top_indices(weights, k_pool);
    let mut r = rng::seeded(seed);
    Ok((0..n_stims)
        .map(|_| {
            let mut picked: Vec<usize> = sample(&mut r, k_pool, k_stim)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picked.sort_unstable();
            picked
        })
        .collect())
}

/// Indices of the `k` largest `|weights|`, ties to the lower index.
pub fn top_indices(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelTag {
    Gpcr,
    Svae,
    Pcr,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::Gpcr => "gpcr",
            ModelTag::Svae => "svae",
            ModelTag::Pcr => "pcr",
        })
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpcr" => Ok(ModelTag::Gpcr),
            "svae" => Ok(ModelTag::Svae),
            "pcr" => Ok(ModelTag::Pcr),
            other => Err(Error::UnknownTag(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StimResult {
    pub per_stim_shift: Vec<f64>,
    pub mean_shift: f64,
    pub model_tag: ModelTag,
}

/// Shift in `E[y*]` for each protocol: every target covariate moves by
/// `delta`, and the effect is the induced change in the true-model posterior
/// mean of `z₁` (`E[y* | z] = z₁`).
pub fn stim_efficacy(
    data: &SynthData,
    targets: &[Vec<usize>],
    delta: f64,
    model_tag: ModelTag,
) -> Result<StimResult> {
    let effects = data.true_effects()?;
    let p = effects.len();
    let per_stim_shift = targets
        .iter()
        .map(|set| {
            if let Some(&bad) = set.iter().find(|&&j| j >= p) {
                return Err(Error::input(format!("target index {bad} out of range")));
            }
            Ok(set.iter().map(|&j| delta * effects[j]).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_shift = if per_stim_shift.is_empty() {
        0.0
    } else {
        per_stim_shift.iter().sum::<f64>() / per_stim_shift.len() as f64
    };
    Ok(StimResult {
        per_stim_shift,
        mean_shift,
        model_tag,
    })
}

/// A fitted model, as far as target selection is concerned.
#[derive(Debug, Clone, Copy)]
pub enum Fitted<'a> {
    /// gPCR or the SVAE decoder: loadings of the supervised factor.
    Generative {
        tag: ModelTag,
        model: &'a FactorModel,
        head: &'a PredictiveHead,
    },
    Pcr(&'a PcrModel),
}

/// Covariate saliency used to build the target pool.
pub fn saliency(fitted: &Fitted<'_>) -> Result<DVector<f64>> {
    match fitted {
        Fitted::Generative { tag, model, head } => {
            if *tag == ModelTag::Pcr {
                return Err(Error::input("PCR saliency needs a PCR model"));
            }
            let k = head
                .supervised_factor()
                .ok_or_else(|| Error::input("head supervises no factor"))?;
            Ok(model.loadings().column(k).map(f64::abs))
        }
        Fitted::Pcr(pcr) => Ok(pcr.covariate_coefficients().map(f64::abs)),
    }
}
