//! Training objectives and their analytic gradients.
//!
//! * gPCR: `Σᵢ log p(xᵢ) + μ E_{p(z|xᵢ)}[log p(yᵢ|z)]`, where the expectation
//!   is taken under the model's own posterior.
//! * weighted conditional: `Σᵢ log p(xᵢ) + μ log p(yᵢ|xᵢ)`, exact for gaussian
//!   heads only.
//! * linear SVAE: the evidence lower bound under a separately parameterized
//!   affine encoder, plus `μ` times the encoder-sampled head likelihood.
//!
//! Gradients flow through the posterior mean map `M⁻¹WᵀΛ⁻¹` and through the
//! Cholesky factor of `M⁻¹` used for reparameterized sampling.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::head::{check_outcome, log_sigmoid, sigmoid, Link, PredictiveHead};
use crate::lowrank::{LowRankCov, LN_2PI};
use crate::model::FactorModel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    /// Supervision weight.
    pub mu: f64,
    pub mc_samples_train: usize,
    pub mc_samples_eval: usize,
    pub seed: u64,
    /// Per-observation L2 penalty `½ ρ ‖A‖²` on the SVAE encoder matrix,
    /// applied during training only; [`svae_objective`] reports the
    /// unpenalized bound.
    pub encoder_penalty: f64,
}

impl ObjectiveConfig {
    /// Defaults with `μ` set to the covariate count.
    pub fn for_dim(p: usize) -> Self {
        Self {
            mu: p as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::input(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        if self.mc_samples_train == 0 || self.mc_samples_eval == 0 {
            return Err(Error::input("Monte Carlo sample counts must be at least 1"));
        }
        if !(self.encoder_penalty >= 0.0 && self.encoder_penalty.is_finite()) {
            return Err(Error::input("encoder penalty must be finite and >= 0"));
        }
        Ok(())
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            mc_samples_train: 8,
            mc_samples_eval: 256,
            seed: 0,
            encoder_penalty: 0.0,
        }
    }
}

/// Affine encoder `q(z|x) = N(A x + b, diag(d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    a: DMatrix<f64>,
    intercept: DVector<f64>,
    var: DVector<f64>,
}

impl LinearEncoder {
    pub fn new(a: DMatrix<f64>, intercept: DVector<f64>, var: DVector<f64>) -> Result<Self> {
        if intercept.len() != a.nrows() || var.len() != a.nrows() {
            return Err(Error::input("encoder intercept and variances must have length L"));
        }
        if var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::input("encoder variances must be finite and > 0"));
        }
        Ok(Self { a, intercept, var })
    }

    /// Encoder equal to the mean map of the model posterior, with the
    /// posterior's marginal variances on the diagonal.
    pub fn from_posterior(model: &FactorModel) -> Result<Self> {
        let post = model.posterior()?;
        let l = model.latents();
        Self::new(
            post.mean_map().clone(),
            DVector::zeros(l),
            post.cov().diagonal(),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    pub fn var(&self) -> &DVector<f64> {
        &self.var
    }

    /// Encoder means for each row of centered `x` (`N × L`).
    pub fn means(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = x * self.a.transpose();
        for (k, mut col) in m.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.intercept[k]);
        }
        m
    }
}

/// Encoder block of [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub a: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub log_var: DVector<f64>,
}

/// Unconstrained parameters shared by both objectives. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w: DMatrix<f64>,
    pub log_lambda: DVector<f64>,
    pub coef: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub encoder: Option<EncoderParams>,
}

impl Params {
    pub fn from_model(model: &FactorModel, head: &PredictiveHead) -> Self {
        Self {
            w: model.loadings().clone(),
            log_lambda: model.noise().map(f64::ln),
            coef: head.coef().clone(),
            intercept: head.intercept().clone(),
            encoder: None,
        }
    }

    pub fn with_encoder(mut self, enc: &LinearEncoder) -> Self {
        self.encoder = Some(EncoderParams {
            a: enc.a.clone(),
            intercept: enc.intercept.clone(),
            log_var: enc.var.map(f64::ln),
        });
        self
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            log_lambda: DVector::zeros(self.log_lambda.len()),
            coef: DMatrix::zeros(self.coef.nrows(), self.coef.ncols()),
            intercept: DVector::zeros(self.intercept.len()),
            encoder: self.encoder.as_ref().map(|e| EncoderParams {
                a: DMatrix::zeros(e.a.nrows(), e.a.ncols()),
                intercept: DVector::zeros(e.intercept.len()),
                log_var: DVector::zeros(e.log_var.len()),
            }),
        }
    }

    /// Named views of every parameter block, in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("W", self.w.as_slice()),
            ("log_lambda", self.log_lambda.as_slice()),
            ("coef", self.coef.as_slice()),
            ("intercept", self.intercept.as_slice()),
        ];
        if let Some(e) = &self.encoder {
            out.push(("enc_a", e.a.as_slice()));
            out.push(("enc_intercept", e.intercept.as_slice()));
            out.push(("enc_log_var", e.log_var.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("W", self.w.as_mut_slice()),
            ("log_lambda", self.log_lambda.as_mut_slice()),
            ("coef", self.coef.as_mut_slice()),
            ("intercept", self.intercept.as_mut_slice()),
        ];
        if let Some(e) = &mut self.encoder {
            out.push(("enc_a", e.a.as_mut_slice()));
            out.push(("enc_intercept", e.intercept.as_mut_slice()));
            out.push(("enc_log_var", e.log_var.as_mut_slice()));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.blocks().into_iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    pub fn set_from_slice(&mut self, v: &[f64]) {
        let mut offset = 0;
        for (_, block) in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&v[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, v.len(), "parameter vector length mismatch");
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rebuild the model, head, and (when present) encoder.
    pub fn to_parts(
        &self,
        link: Link,
        mask: &[bool],
        mean_offset: DVector<f64>,
    ) -> Result<(FactorModel, PredictiveHead, Option<LinearEncoder>)> {
        let cov = LowRankCov::new(self.w.clone(), self.log_lambda.map(f64::exp))?;
        let model = FactorModel::new(cov, mean_offset)?;
        let head = PredictiveHead::new(
            self.coef.clone(),
            self.intercept.clone(),
            link,
            mask.to_vec(),
        )?;
        let enc = match &self.encoder {
            Some(e) => Some(LinearEncoder::new(
                e.a.clone(),
                e.intercept.clone(),
                e.log_var.map(f64::exp),
            )?),
            None => None,
        };
        Ok((model, head, enc))
    }
}

/// Standard normal draws for reparameterized sampling: one `N × L` matrix per
/// Monte Carlo sample.
#[derive(Debug, Clone)]
pub struct McNoise {
    pub eps: Vec<DMatrix<f64>>,
}

impl McNoise {
    pub fn draw(rng: &mut rng::SeededRng, samples: usize, n: usize, latents: usize) -> Self {
        Self {
            eps: (0..samples)
                .map(|_| rng::normal_matrix(rng, n, latents))
                .collect(),
        }
    }

    pub fn from_seed(seed: u64, samples: usize, n: usize, latents: usize) -> Self {
        Self::draw(&mut rng::seeded(seed), samples, n, latents)
    }
}

/// Everything the evaluators need besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    /// Centered covariates, `N × p`.
    pub x: &'a DMatrix<f64>,
    /// Outcomes, `N × k`.
    pub y: &'a DMatrix<f64>,
    pub link: Link,
    pub mask: &'a [bool],
    pub mu: f64,
}

impl Problem<'_> {
    fn validate(&self, params: &Params) -> Result<()> {
        let (n, p) = self.x.shape();
        if self.y.nrows() != n {
            return Err(Error::input(format!(
                "{} outcome rows for {} covariate rows",
                self.y.nrows(),
                n
            )));
        }
        if params.w.nrows() != p || params.log_lambda.len() != p {
            return Err(Error::input("parameter dimension does not match the data"));
        }
        if params.coef.nrows() != params.w.ncols() || params.coef.ncols() != self.y.ncols() {
            return Err(Error::input("head coefficients do not match latents × targets"));
        }
        if self.mask.len() != params.w.ncols() {
            return Err(Error::input("supervision mask length must equal the latent count"));
        }
        check_outcome(self.link, self.y.as_slice())?;
        if let Link::Logistic = self.link {
            if self.y.ncols() != 1 {
                return Err(Error::input("logistic link requires exactly one outcome column"));
            }
        }
        Ok(())
    }
}

/// Value of an objective plus optional gradient.
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Option<Params>,
    /// Supervision term before weighting by `μ`.
    pub supervision: f64,
}

fn add_intercept(mut m: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for (t, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[t]);
    }
    m
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// Gradient of a function of `S = L Lᵀ` given its gradient with respect to
/// the lower Cholesky factor `L`. Returns the symmetric gradient in `S`.
pub(crate) fn cholesky_backward(l: &DMatrix<f64>, grad_l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut phi = l.tr_mul(grad_l);
    for i in 0..n {
        for j in (i + 1)..n {
            phi[(i, j)] = 0.0;
        }
        phi[(i, i)] *= 0.5;
    }
    // L⁻ᵀ Φ L⁻¹
    let left = l
        .tr_solve_lower_triangular(&phi)
        .expect("cholesky factor has a positive diagonal");
    let s = l
        .tr_solve_lower_triangular(&left.transpose())
        .expect("cholesky factor has a positive diagonal")
        .transpose();
    (&s + s.transpose()) * 0.5
}

/// Head likelihood contribution and gradients with respect to the latent
/// means (`N × L`), the latent covariance (`L × L`, when the covariance is
/// full and sampled through its Cholesky factor) or diagonal variances.
struct HeadTerms {
    value: f64,
    grad_means: DMatrix<f64>,
    grad_coef: DMatrix<f64>,
    grad_intercept: DVector<f64>,
}

/// Latent covariance shared by every observation.
enum LatentCov<'a> {
    /// Full covariance and its lower Cholesky factor.
    Full {
        cov: &'a DMatrix<f64>,
        chol: &'a DMatrix<f64>,
    },
    /// Diagonal variances.
    Diag(&'a DVector<f64>),
}

/// Gradient of the head term with respect to the covariance parameters.
enum CovGrad {
    Full(DMatrix<f64>),
    Diag(DVector<f64>),
}

fn head_expectation(
    means: &DMatrix<f64>,
    latent: &LatentCov<'_>,
    coef: &DMatrix<f64>,
    intercept: &DVector<f64>,
    y: &DMatrix<f64>,
    link: Link,
    noise: Option<&McNoise>,
    want_grad: bool,
) -> Result<(HeadTerms, Option<CovGrad>)> {
    let (n, l) = means.shape();
    match link {
        Link::Gaussian { noise_var } => {
            let eta = add_intercept(means * coef, intercept);
            let resid = y - eta;
            // βᵀ Σ β per target
            let spread: DVector<f64> = match latent {
                LatentCov::Full { cov, .. } => (coef.transpose() * *cov * coef).diagonal(),
                LatentCov::Diag(d) => DVector::from_iterator(
                    coef.ncols(),
                    coef.column_iter()
                        .map(|c| c.iter().zip(d.iter()).map(|(b, v)| b * b * v).sum::<f64>()),
                ),
            };
            let k = y.ncols() as f64;
            let value = -0.5 * (n as f64) * k * (LN_2PI + noise_var.ln())
                - (resid.norm_squared() + n as f64 * spread.sum()) / (2.0 * noise_var);
            if !want_grad {
                return Ok((
                    HeadTerms {
                        value,
                        grad_means: DMatrix::zeros(0, 0),
                        grad_coef: DMatrix::zeros(0, 0),
                        grad_intercept: DVector::zeros(0),
                    },
                    None,
                ));
            }
            let grad_means = &resid * coef.transpose() / noise_var;
            let nf = n as f64;
            let (grad_coef, cov_grad) = match latent {
                LatentCov::Full { cov, .. } => (
                    (means.tr_mul(&resid) - *cov * coef * nf) / noise_var,
                    CovGrad::Full(coef * coef.transpose() * (-nf / (2.0 * noise_var))),
                ),
                LatentCov::Diag(d) => {
                    let mut dc = coef.clone();
                    for (kk, mut row) in dc.row_iter_mut().enumerate() {
                        row *= d[kk];
                    }
                    let gd = DVector::from_iterator(
                        l,
                        coef.row_iter().map(|r| -nf * r.norm_squared() / (2.0 * noise_var)),
                    );
                    ((means.tr_mul(&resid) - dc * nf) / noise_var, CovGrad::Diag(gd))
                }
            };
            Ok((
                HeadTerms {
                    value,
                    grad_means,
                    grad_coef,
                    grad_intercept: column_sums(&resid) / noise_var,
                },
                Some(cov_grad),
            ))
        }
        Link::Logistic => {
            let noise = noise.ok_or_else(|| {
                Error::input("logistic head requires Monte Carlo noise draws")
            })?;
            if noise.eps.is_empty() {
                return Err(Error::input("at least one Monte Carlo sample is required"));
            }
            let s_count = noise.eps.len() as f64;
            let beta = coef.column(0).clone_owned();
            let b = intercept[0];
            let base = means * &beta; // N
            let sign: Vec<f64> = y.column(0).iter().map(|&v| 2.0 * v - 1.0).collect();
            let mut value = 0.0;
            let mut grad_means = DMatrix::zeros(n, l);
            let mut grad_beta = DVector::<f64>::zeros(l);
            let mut grad_b = 0.0;
            // Σ_is w_is ε_is, used for the covariance gradient.
            let mut weighted_eps = DVector::<f64>::zeros(l);
            let mut weight_sums = DVector::<f64>::zeros(n);
            for eps in &noise.eps {
                if eps.shape() != (n, l) {
                    return Err(Error::input("Monte Carlo noise has the wrong shape"));
                }
                // Shifted latent samples: z = m + (noise mapped through the covariance factor).
                let scaled = match latent {
                    LatentCov::Full { chol, .. } => eps * chol.transpose(),
                    LatentCov::Diag(d) => {
                        let mut e = eps.clone();
                        for (kk, mut col) in e.column_iter_mut().enumerate() {
                            col *= d[kk].sqrt();
                        }
                        e
                    }
                };
                let noise_eta = &scaled * &beta;
                for i in 0..n {
                    let eta = base[i] + noise_eta[i] + b;
                    let s = sign[i];
                    value += log_sigmoid(s * eta);
                    if want_grad {
                        let w = s * sigmoid(-s * eta) / s_count;
                        weight_sums[i] += w;
                        grad_b += w;
                        for kk in 0..l {
                            grad_beta[kk] += w * (means[(i, kk)] + scaled[(i, kk)]);
                            weighted_eps[kk] += w * eps[(i, kk)];
                        }
                    }
                }
            }
            value /= s_count;
            if !want_grad {
                return Ok((
                    HeadTerms {
                        value,
                        grad_means,
                        grad_coef: DMatrix::zeros(0, 0),
                        grad_intercept: DVector::zeros(0),
                    },
                    None,
                ));
            }
            for i in 0..n {
                for kk in 0..l {
                    grad_means[(i, kk)] = weight_sums[i] * beta[kk];
                }
            }
            let cov_grad = match latent {
                LatentCov::Full { chol, .. } => {
                    let mut grad_chol = &beta * weighted_eps.transpose();
                    for i in 0..l {
                        for j in (i + 1)..l {
                            grad_chol[(i, j)] = 0.0;
                        }
                    }
                    CovGrad::Full(cholesky_backward(chol, &grad_chol))
                }
                LatentCov::Diag(d) => CovGrad::Diag(DVector::from_iterator(
                    l,
                    (0..l).map(|kk| beta[kk] * weighted_eps[kk] * 0.5 * d[kk].sqrt()),
                )),
            };
            Ok((
                HeadTerms {
                    value,
                    grad_means,
                    grad_coef: DMatrix::from_column_slice(l, 1, grad_beta.as_slice()),
                    grad_intercept: DVector::from_element(1, grad_b),
                },
                Some(cov_grad),
            ))
        }
    }
}

fn mask_rows(m: &mut DMatrix<f64>, mask: &[bool]) {
    for (k, &keep) in mask.iter().enumerate() {
        if !keep {
            m.row_mut(k).fill(0.0);
        }
    }
}

fn finite_or(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(format!("{what} is not finite ({value})")))
    }
}

/// gPCR objective at `params`. For the logistic link `noise` supplies the
/// reparameterization draws.
pub(crate) fn eval_gpcr(
    params: &Params,
    prob: &Problem<'_>,
    noise: Option<&McNoise>,
    want_grad: bool,
) -> Result<Evaluation> {
    prob.validate(params)?;
    let x = prob.x;
    let (n, p) = x.shape();
    let l = params.w.ncols();
    let nf = n as f64;
    let lambda = params.log_lambda.map(f64::exp);
    let cov = LowRankCov::new(params.w.clone(), lambda.clone())
        .map_err(|e| Error::numeric(format!("invalid model parameters: {e}")))?;
    let fac = cov.factor()?;
    let inv_lambda = fac.inv_noise().clone();
    let scaled = fac.scaled_loadings(); // Λ⁻¹W
    let minv = fac.capacitance_inverse();

    // Same summation as `FactorModel::marginal_loglik`, so μ = 0 matches it exactly.
    let marginal = fac.logpdf_rows(x).sum();
    finite_or(marginal, "marginal log-likelihood term")?;

    let mut grad = want_grad.then(|| params.zeros_like());
    if let Some(g) = grad.as_mut() {
        let r = fac.solve_rows(x); // rows Σ⁻¹xᵢ
        let sig_inv_w = scaled * &minv; // Σ⁻¹W
        let rw = &r * &params.w;
        g.w = r.tr_mul(&rw) - &sig_inv_w * nf;
        for j in 0..p {
            let sig_inv_jj = inv_lambda[j]
                - sig_inv_w
                    .row(j)
                    .iter()
                    .zip(scaled.row(j).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            let col_sq = r.column(j).norm_squared();
            g.log_lambda[j] = lambda[j] * (-0.5 * nf * sig_inv_jj + 0.5 * col_sq);
        }
    }

    if prob.mu == 0.0 {
        return Ok(Evaluation {
            value: marginal,
            grad,
            supervision: 0.0,
        });
    }

    // Posterior: means T M⁻¹ with T = X Λ⁻¹ W, covariance M⁻¹.
    let t = x * scaled;
    let means = &t * &minv;
    let chol = Cholesky::new(minv.clone())
        .ok_or_else(|| Error::numeric("posterior covariance is not positive definite"))?
        .unpack();
    let latent = LatentCov::Full {
        cov: &minv,
        chol: &chol,
    };
    let (head, cov_grad) = head_expectation(
        &means,
        &latent,
        &params.coef,
        &params.intercept,
        prob.y,
        prob.link,
        noise,
        want_grad,
    )?;
    let supervision = finite_or(head.value, "supervision term")?;
    let value = marginal + prob.mu * supervision;

    if let Some(g) = grad.as_mut() {
        let mu = prob.mu;
        let mut gcoef = head.grad_coef * mu;
        mask_rows(&mut gcoef, prob.mask);
        g.coef = gcoef;
        g.intercept = head.grad_intercept * mu;

        let grad_means = head.grad_means * mu;
        let grad_cov = match cov_grad {
            Some(CovGrad::Full(gs)) => gs * mu,
            _ => DMatrix::zeros(l, l),
        };
        // Through means = T M⁻¹: c_i = M⁻¹ a_i.
        let c = &grad_means * &minv; // N × L
        let mut gw = x.tr_mul(&c);
        for (j, mut row) in gw.row_iter_mut().enumerate() {
            row *= inv_lambda[j];
        }
        let cwt = &c * params.w.transpose(); // N × p
        let mut g_inv_lambda = DVector::from_iterator(
            p,
            (0..p).map(|j| x.column(j).dot(&cwt.column(j))),
        );
        let mut gm = -(c.tr_mul(&means));
        gm -= &minv * grad_cov * &minv;
        let gm = (&gm + gm.transpose()) * 0.5;
        // M = I + Wᵀ Λ⁻¹ W
        gw += scaled * &gm * 2.0;
        let wgm = &params.w * &gm;
        for j in 0..p {
            g_inv_lambda[j] += wgm.row(j).dot(&params.w.row(j));
        }
        g.w += gw;
        for j in 0..p {
            g.log_lambda[j] -= inv_lambda[j] * g_inv_lambda[j];
        }
    }

    Ok(Evaluation {
        value,
        grad,
        supervision,
    })
}

/// Linear SVAE objective. The reconstruction expectation under the encoder
/// is evaluated in closed form; the head expectation is closed form for the
/// gaussian link and reparameterized Monte Carlo for the logistic link.
pub(crate) fn eval_svae(
    params: &Params,
    prob: &Problem<'_>,
    noise: Option<&McNoise>,
    want_grad: bool,
) -> Result<Evaluation> {
    prob.validate(params)?;
    let enc = params
        .encoder
        .as_ref()
        .ok_or_else(|| Error::input("SVAE objective requires encoder parameters"))?;
    let x = prob.x;
    let (n, p) = x.shape();
    let l = params.w.ncols();
    if enc.a.shape() != (l, p) || enc.intercept.len() != l || enc.log_var.len() != l {
        return Err(Error::input("encoder shape does not match latents × covariates"));
    }
    let nf = n as f64;
    let lambda = params.log_lambda.map(f64::exp);
    let inv_lambda = lambda.map(|v| 1.0 / v);
    let d = enc.log_var.map(f64::exp);
    if lambda.iter().chain(d.iter()).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::numeric("variance parameters overflowed"));
    }
    let w = &params.w;

    let means = add_intercept(x * enc.a.transpose(), &enc.intercept);
    // diag(Wᵀ Λ⁻¹ W)
    let k_diag = DVector::from_iterator(
        l,
        (0..l).map(|k| {
            w.column(k)
                .iter()
                .zip(inv_lambda.iter())
                .map(|(v, il)| v * v * il)
                .sum::<f64>()
        }),
    );
    let resid = x - &means * w.transpose();
    let mut scaled_resid = resid.clone();
    for (j, mut col) in scaled_resid.column_iter_mut().enumerate() {
        col *= inv_lambda[j];
    }
    let resid_quad = resid.component_mul(&scaled_resid).sum();
    let kl = 0.5
        * (nf * (d.sum() - l as f64 - enc.log_var.sum()) + means.norm_squared());
    let rec = -0.5
        * (nf * (p as f64 * LN_2PI + params.log_lambda.sum() + d.dot(&k_diag)) + resid_quad);
    finite_or(rec - kl, "evidence lower bound")?;

    let (head, cov_grad) = if prob.mu != 0.0 {
        let latent = LatentCov::Diag(&d);
        let (h, cg) = head_expectation(
            &means,
            &latent,
            &params.coef,
            &params.intercept,
            prob.y,
            prob.link,
            noise,
            want_grad,
        )?;
        (Some(h), cg)
    } else {
        (None, None)
    };
    let supervision = head.as_ref().map_or(0.0, |h| h.value);
    finite_or(supervision, "supervision term")?;
    let value = rec - kl + prob.mu * supervision;

    let grad = if want_grad {
        let mut g = params.zeros_like();
        let mut grad_means = &scaled_resid * w - &means;
        g.w = scaled_resid.tr_mul(&means);
        for j in 0..p {
            for k in 0..l {
                g.w[(j, k)] -= nf * inv_lambda[j] * w[(j, k)] * d[k];
            }
            let quad_j = resid.column(j).dot(&scaled_resid.column(j));
            let spread_j: f64 = (0..l).map(|k| d[k] * w[(j, k)] * w[(j, k)]).sum::<f64>();
            g.log_lambda[j] = -0.5 * nf + 0.5 * quad_j + 0.5 * nf * spread_j * inv_lambda[j];
        }
        let mut g_log_var =
            DVector::from_iterator(l, (0..l).map(|k| -0.5 * nf * (d[k] - 1.0) - 0.5 * nf * d[k] * k_diag[k]));
        if let Some(h) = head {
            let mu = prob.mu;
            grad_means += h.grad_means * mu;
            let mut gcoef = h.grad_coef * mu;
            mask_rows(&mut gcoef, prob.mask);
            g.coef = gcoef;
            g.intercept = h.grad_intercept * mu;
            match cov_grad {
                // Gaussian link returns ∂/∂d; chain to log d.
                Some(CovGrad::Diag(gd)) if matches!(prob.link, Link::Gaussian { .. }) => {
                    for k in 0..l {
                        g_log_var[k] += mu * gd[k] * d[k];
                    }
                }
                // Logistic link already returns ∂/∂(log d).
                Some(CovGrad::Diag(gd)) => g_log_var += gd * mu,
                _ => {}
            }
        }
        let enc_grad = g.encoder.as_mut().expect("encoder block present");
        enc_grad.a = grad_means.tr_mul(x);
        enc_grad.intercept = column_sums(&grad_means);
        enc_grad.log_var = g_log_var;
        Some(g)
    } else {
        None
    };

    Ok(Evaluation {
        value,
        grad,
        supervision,
    })
}

fn outcomes_problem<'a>(
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    head: &'a PredictiveHead,
    mu: f64,
) -> Problem<'a> {
    Problem {
        x,
        y,
        link: head.link(),
        mask: head.mask(),
        mu,
    }
}

fn noise_for(cfg: &ObjectiveConfig, link: Link, n: usize, l: usize, samples: usize) -> Option<McNoise> {
    matches!(link, Link::Logistic).then(|| McNoise::from_seed(cfg.seed, samples, n, l))
}

/// gPCR objective value and gradient at the given model and head. `x` must be
/// centered; `y` is `N × k`. Logistic expectations use `mc_samples_train`
/// draws seeded by `cfg.seed`.
pub fn gpcr_objective(
    model: &FactorModel,
    head: &PredictiveHead,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Params)> {
    cfg.validate()?;
    let params = Params::from_model(model, head);
    let prob = outcomes_problem(x, y, head, cfg.mu);
    let noise = noise_for(cfg, head.link(), x.nrows(), model.latents(), cfg.mc_samples_train);
    let ev = eval_gpcr(&params, &prob, noise.as_ref(), true)?;
    Ok((ev.value, ev.grad.expect("gradient requested")))
}

/// Linear SVAE objective value and gradient (generative, head, and encoder
/// parameters).
pub fn svae_objective(
    model: &FactorModel,
    head: &PredictiveHead,
    enc: &LinearEncoder,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Params)> {
    cfg.validate()?;
    let params = Params::from_model(model, head).with_encoder(enc);
    let prob = outcomes_problem(x, y, head, cfg.mu);
    let noise = noise_for(cfg, head.link(), x.nrows(), model.latents(), cfg.mc_samples_train);
    let ev = eval_svae(&params, &prob, noise.as_ref(), true)?;
    Ok((ev.value, ev.grad.expect("gradient requested")))
}

/// `Σᵢ log p(xᵢ) + μ log p(yᵢ | xᵢ)` with `p(y|x)` integrated exactly. Only
/// defined for gaussian heads.
pub fn weighted_conditional_objective(
    model: &FactorModel,
    head: &PredictiveHead,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mu: f64,
) -> Result<f64> {
    let noise_var = match head.link() {
        Link::Gaussian { noise_var } => noise_var,
        Link::Logistic => {
            return Err(Error::input(
                "the weighted conditional objective has no closed form for the logistic link",
            ))
        }
    };
    if y.nrows() != x.nrows() || y.ncols() != head.targets() {
        return Err(Error::input("outcome shape does not match data and head"));
    }
    let marginal = model.marginal_loglik(x)?;
    let post = model.posterior()?;
    let mean = head.linear_predictor(&post.scores(x));
    let mut pred_cov = head.coef().transpose() * post.cov() * head.coef();
    for t in 0..pred_cov.nrows() {
        pred_cov[(t, t)] += noise_var;
    }
    let k = pred_cov.nrows();
    let chol = Cholesky::new(pred_cov)
        .ok_or_else(|| Error::numeric("predictive covariance is not positive definite"))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let resid = y - mean;
    let mut cond = 0.0;
    for i in 0..resid.nrows() {
        let r = resid.row(i).transpose();
        let quad = r.dot(&chol.solve(&r));
        cond += -0.5 * (k as f64 * LN_2PI + logdet + quad);
    }
    Ok(marginal + mu * cond)
}

/// Mean over rows of `E_{p(z|x)}[log p(y|z)]`, estimated with
/// `mc_samples_eval` draws for the logistic link.
pub fn expected_head_loglik(
    model: &FactorModel,
    head: &PredictiveHead,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let params = Params::from_model(model, head);
    let prob = outcomes_problem(x, y, head, 1.0);
    let noise = noise_for(cfg, head.link(), x.nrows(), model.latents(), cfg.mc_samples_eval);
    let ev = eval_gpcr(&params, &prob, noise.as_ref(), false)?;
    Ok(ev.supervision / x.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::first_factor_mask;
    use approx::assert_relative_eq;

    fn small_problem(seed: u64) -> (FactorModel, DMatrix<f64>) {
        let mut r = rng::seeded(seed);
        let w = rng::normal_matrix(&mut r, 6, 2);
        let lambda = DVector::from_iterator(6, (0..6).map(|j| 0.5 + 0.1 * j as f64));
        let model = FactorModel::centered(LowRankCov::new(w, lambda).unwrap());
        let (_, x) = model.sample(15, seed + 1).unwrap();
        (model, x)
    }

    #[test]
    fn mu_zero_is_marginal_likelihood() {
        let (model, x) = small_problem(1);
        let head = PredictiveHead::zeros(2, 1, Link::Logistic, first_factor_mask(2)).unwrap();
        let y = DMatrix::from_fn(15, 1, |i, _| (i % 2) as f64);
        let cfg = ObjectiveConfig {
            mu: 0.0,
            ..Default::default()
        };
        let (v, _) = gpcr_objective(&model, &head, &x, &y, &cfg).unwrap();
        assert_eq!(v, model.marginal_loglik(&x).unwrap());
        let wc = weighted_conditional_objective(
            &model,
            &PredictiveHead::zeros(2, 1, Link::Gaussian { noise_var: 1.0 }, vec![true; 2])
                .unwrap(),
            &x,
            &y,
            0.0,
        )
        .unwrap();
        assert_eq!(wc, model.marginal_loglik(&x).unwrap());
    }

    #[test]
    fn weighted_conditional_rejects_logistic() {
        let (model, x) = small_problem(2);
        let head = PredictiveHead::zeros(2, 1, Link::Logistic, vec![true; 2]).unwrap();
        let y = DMatrix::zeros(15, 1);
        assert!(matches!(
            weighted_conditional_objective(&model, &head, &x, &y, 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn decoupled_head_term() {
        let (model, x) = small_problem(3);
        let head = PredictiveHead::new(
            DMatrix::zeros(2, 1),
            DVector::from_element(1, 0.4),
            Link::Gaussian { noise_var: 0.8 },
            vec![true; 2],
        )
        .unwrap();
        let y = DMatrix::from_fn(15, 1, |i, _| i as f64 * 0.1);
        let mu = 2.5;
        let v = weighted_conditional_objective(&model, &head, &x, &y, mu).unwrap();
        let direct: f64 = y
            .iter()
            .map(|&yi| -0.5 * (LN_2PI + 0.8f64.ln() + (yi - 0.4).powi(2) / 0.8))
            .sum();
        assert_relative_eq!(
            v,
            model.marginal_loglik(&x).unwrap() + mu * direct,
            epsilon = 1e-9
        );
    }

    #[test]
    fn prior_encoder_has_zero_kl() {
        // W = 0, encoder equal to the prior: the ELBO is exactly log p(x).
        let model = FactorModel::centered(
            LowRankCov::new(DMatrix::zeros(4, 2), DVector::from_element(4, 0.7)).unwrap(),
        );
        let mut r = rng::seeded(4);
        let x = rng::normal_matrix(&mut r, 10, 4);
        let enc = LinearEncoder::new(DMatrix::zeros(2, 4), DVector::zeros(2), DVector::from_element(2, 1.0))
            .unwrap();
        let head = PredictiveHead::zeros(2, 1, Link::Gaussian { noise_var: 1.0 }, vec![true; 2])
            .unwrap();
        let cfg = ObjectiveConfig {
            mu: 0.0,
            ..Default::default()
        };
        let (v, _) = svae_objective(&model, &head, &enc, &x, &DMatrix::zeros(10, 1), &cfg).unwrap();
        assert_relative_eq!(v, model.marginal_loglik(&x).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn masked_coefficients_get_zero_gradient() {
        let (model, x) = small_problem(5);
        let head = PredictiveHead::new(
            DMatrix::from_column_slice(2, 1, &[0.7, 0.0]),
            DVector::zeros(1),
            Link::Logistic,
            first_factor_mask(2),
        )
        .unwrap();
        let y = DMatrix::from_fn(15, 1, |i, _| ((i * 7) % 3 == 0) as u8 as f64);
        let cfg = ObjectiveConfig {
            mu: 3.0,
            ..Default::default()
        };
        let (_, g) = gpcr_objective(&model, &head, &x, &y, &cfg).unwrap();
        assert_eq!(g.coef[(1, 0)], 0.0);
        assert!(g.coef[(0, 0)] != 0.0);
        let enc = LinearEncoder::from_posterior(&model).unwrap();
        let (_, g) = svae_objective(&model, &head, &enc, &x, &y, &cfg).unwrap();
        assert_eq!(g.coef[(1, 0)], 0.0);
    }

    #[test]
    fn cholesky_backward_matches_finite_differences() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.2]);
        // f(S) = Σ G ⊙ chol(S) for a fixed lower-triangular G.
        let g = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.0, -1.0, 0.3, 0.0, 0.2, 0.7, -0.4]);
        let f = |s: &DMatrix<f64>| Cholesky::new(s.clone()).unwrap().unpack().component_mul(&g).sum();
        let l = Cholesky::new(s.clone()).unwrap().unpack();
        let analytic = cholesky_backward(&l, &g);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..=i {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[(i, j)] += h;
                sm[(i, j)] -= h;
                if i != j {
                    sp[(j, i)] += h;
                    sm[(j, i)] -= h;
                }
                let fd = (f(&sp) - f(&sm)) / (2.0 * h);
                let expected = if i == j {
                    analytic[(i, j)]
                } else {
                    2.0 * analytic[(i, j)]
                };
                assert_relative_eq!(fd, expected, epsilon = 1e-7);
            }
        }
    }
}
