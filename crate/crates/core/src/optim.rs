//! Full-batch gradient ascent with momentum, model initialization, and the
//! finite-difference gradient verifier.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::head::{Link, PredictiveHead};
use crate::lowrank::LowRankCov;
use crate::model::FactorModel;
use crate::objective::{
    eval_gpcr, eval_svae, EncoderParams, Evaluation, LinearEncoder, McNoise, ObjectiveConfig,
    Params, Problem,
};
use crate::rng;

/// Smallest noise variance the optimizer will accept.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Top principal directions scaled by their excess variance, residual
    /// variances on the diagonal, zero head.
    PcaWarmStart,
    RandomGaussian { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop after `patience` consecutive iterations whose relative objective
    /// change is below this.
    pub rel_tol: f64,
    pub patience: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            max_iters: 5000,
            rel_tol: 1e-7,
            patience: 50,
            seed: 0,
            init: Init::PcaWarmStart,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::input("relative tolerance must be > 0"));
        }
        if let Init::RandomGaussian { scale } = self.init {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::input("random init scale must be > 0"));
            }
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub best_iter: usize,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

/// Maximize `f` by heavy-ball momentum. `f(iter, x)` returns the objective and
/// its gradient; the step is `lr · step_scale · ∇f`. `project` runs after each
/// step to enforce constraints. Returns the best iterate seen.
pub fn momentum_ascent<F, P>(
    x0: Vec<f64>,
    cfg: &TrainConfig,
    step_scale: f64,
    mut f: F,
    mut project: P,
) -> Result<AscentResult>
where
    F: FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>)>,
    P: FnMut(&mut [f64]),
{
    cfg.validate()?;
    let mut x = x0;
    project(&mut x);
    let mut velocity = vec![0.0; x.len()];
    let mut best = x.clone();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_iter = 0;
    let mut trace = Vec::with_capacity(cfg.max_iters.min(100_000));
    let mut prev: Option<f64> = None;
    let mut stall = 0;
    let mut converged = false;
    let step = cfg.learning_rate * step_scale;

    for iter in 0..cfg.max_iters {
        let (value, grad) = f(iter, &x)?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("objective is not finite at iteration {iter}")));
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::numeric(format!("gradient is not finite at iteration {iter}")));
        }
        trace.push(TraceRecord {
            iter,
            objective: value,
            grad_norm,
        });
        if value > best_value {
            best_value = value;
            best.copy_from_slice(&x);
            best_iter = iter;
        }
        if let Some(p) = prev {
            let rel = (value - p).abs() / p.abs().max(1e-12);
            stall = if rel < cfg.rel_tol { stall + 1 } else { 0 };
            if stall >= cfg.patience.max(1) {
                converged = true;
                break;
            }
        }
        prev = Some(value);
        for ((v, xi), g) in velocity.iter_mut().zip(x.iter_mut()).zip(&grad) {
            *v = cfg.momentum * *v + step * g;
            *xi += *v;
        }
        project(&mut x);
    }
    Ok(AscentResult {
        best,
        best_value,
        best_iter,
        trace,
        converged,
    })
}

/// Which latents the head may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Supervise {
    FirstFactor,
    All,
}

impl Supervise {
    pub fn mask(self, latents: usize) -> Vec<bool> {
        match self {
            Supervise::FirstFactor => (0..latents).map(|k| k == 0).collect(),
            Supervise::All => vec![true; latents],
        }
    }
}

/// Model structure shared by both fitting routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSpec {
    pub latents: usize,
    pub link: Link,
    pub supervise: Supervise,
    /// Restrict the noise to `σ² I`.
    pub isotropic: bool,
}

impl FitSpec {
    pub fn new(latents: usize, link: Link) -> Self {
        Self {
            latents,
            link,
            supervise: Supervise::FirstFactor,
            isotropic: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpcrFit {
    pub model: FactorModel,
    pub head: PredictiveHead,
    pub trace: Vec<TraceRecord>,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SvaeFit {
    pub model: FactorModel,
    pub head: PredictiveHead,
    pub encoder: LinearEncoder,
    pub trace: Vec<TraceRecord>,
    pub objective: f64,
    pub converged: bool,
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

fn center_columns(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

fn check_fit_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>, spec: &FitSpec) -> Result<()> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::input("at least two observations are required"));
    }
    if spec.latents == 0 {
        return Err(Error::input("latent count must be at least 1"));
    }
    if spec.latents > n.min(p) {
        return Err(Error::input(format!(
            "latent count {} exceeds min(N, p) = {}",
            spec.latents,
            n.min(p)
        )));
    }
    if y.nrows() != n {
        return Err(Error::input(format!("{} outcomes for {} observations", y.nrows(), n)));
    }
    if y.ncols() == 0 {
        return Err(Error::input("at least one outcome column is required"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("data contain non-finite values"));
    }
    Ok(())
}

/// PCA warm start on centered data: `W = V_L diag(√(ℓ_k − σ²))`, `Λ` from the
/// residual column variances (or `σ² I` when isotropic).
pub fn pca_init(x: &DMatrix<f64>, latents: usize, isotropic: bool) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, p) = x.shape();
    let svd = SVD::new(x.clone(), false, true);
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::numeric("SVD did not produce right singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let eig: Vec<f64> = order
        .iter()
        .map(|&k| svd.singular_values[k].powi(2) / n as f64)
        .collect();
    let total: f64 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let top: f64 = eig.iter().take(latents).sum();
    let sigma2 = if p > latents {
        ((total - top) / (p - latents) as f64).max(VARIANCE_FLOOR)
    } else {
        (total / p as f64 * 1e-2).max(VARIANCE_FLOOR)
    };
    let mut w = DMatrix::zeros(p, latents);
    for (k, &idx) in order.iter().take(latents).enumerate() {
        let scale = (eig[k] - sigma2).max(sigma2 * 1e-3).sqrt();
        for j in 0..p {
            w[(j, k)] = vt[(idx, j)] * scale;
        }
    }
    let lambda = if isotropic {
        DVector::from_element(p, sigma2)
    } else {
        DVector::from_iterator(
            p,
            (0..p).map(|j| {
                let var = x.column(j).norm_squared() / n as f64;
                let explained = w.row(j).norm_squared();
                (var - explained).max(sigma2 * 1e-2).max(VARIANCE_FLOOR)
            }),
        )
    };
    Ok((w, lambda))
}

fn initial_params(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    spec: &FitSpec,
    cfg: &TrainConfig,
) -> Result<Params> {
    let (n, p) = x.shape();
    let (w, lambda) = match cfg.init {
        Init::PcaWarmStart => pca_init(x, spec.latents, spec.isotropic)?,
        Init::RandomGaussian { scale } => {
            let mut r = rng::substream(cfg.seed, 7);
            let w = rng::normal_matrix(&mut r, p, spec.latents) * scale;
            let var = DVector::from_iterator(
                p,
                (0..p).map(|j| (x.column(j).norm_squared() / n as f64).max(VARIANCE_FLOOR)),
            );
            let lambda = if spec.isotropic {
                DVector::from_element(p, var.mean())
            } else {
                var
            };
            (w, lambda)
        }
    };
    let k = y.ncols();
    let intercept = match spec.link {
        Link::Gaussian { .. } => column_means(y),
        Link::Logistic => {
            let rate = y.column(0).mean().clamp(1e-3, 1.0 - 1e-3);
            DVector::from_element(1, (rate / (1.0 - rate)).ln())
        }
    };
    Ok(Params {
        w,
        log_lambda: lambda.map(f64::ln),
        coef: DMatrix::zeros(spec.latents, k),
        intercept,
        encoder: None,
    })
}

fn project_params(params: &mut Params, isotropic: bool) {
    let floor = VARIANCE_FLOOR.ln();
    if isotropic {
        let mean = params.log_lambda.mean();
        params.log_lambda.fill(mean);
    }
    params.log_lambda.apply(|v| *v = v.max(floor));
    if let Some(e) = params.encoder.as_mut() {
        e.log_var.apply(|v| *v = v.max(floor));
    }
}

enum Objective {
    Gpcr,
    Svae,
}

fn evaluate(
    which: &Objective,
    params: &Params,
    prob: &Problem<'_>,
    noise: Option<&McNoise>,
    want_grad: bool,
) -> Result<Evaluation> {
    match which {
        Objective::Gpcr => eval_gpcr(params, prob, noise, want_grad),
        Objective::Svae => eval_svae(params, prob, noise, want_grad),
    }
}

fn run(
    which: Objective,
    template: Params,
    prob: &Problem<'_>,
    spec: &FitSpec,
    obj: &ObjectiveConfig,
    cfg: &TrainConfig,
) -> Result<(Params, AscentResult)> {
    let n = prob.x.nrows();
    let l = spec.latents;
    let mut noise_rng = rng::substream(cfg.seed, 1);
    let mut scratch = template.clone();
    let logistic = matches!(spec.link, Link::Logistic);
    // The encoder map acts on raw covariates, so its curvature carries the
    // data covariance; step it in whitened coordinates.
    let whiten = match which {
        Objective::Svae => Some(second_moment_inverse(prob.x)?),
        Objective::Gpcr => None,
    };
    let result = momentum_ascent(
        template.to_vec(),
        cfg,
        1.0 / n as f64,
        |_, v| {
            scratch.set_from_slice(v);
            let noise =
                logistic.then(|| McNoise::draw(&mut noise_rng, obj.mc_samples_train, n, l));
            let ev = evaluate(&which, &scratch, prob, noise.as_ref(), true)?;
            let mut grad = ev.grad.expect("gradient requested");
            if spec.isotropic {
                // Tie the noise variances: every entry moves by the shared gradient.
                let mean = grad.log_lambda.mean();
                grad.log_lambda.fill(mean * grad.log_lambda.len() as f64);
            }
            let mut value = ev.value;
            let penalty = obj.encoder_penalty * n as f64;
            if let (Some(e), Some(ep)) = (grad.encoder.as_mut(), scratch.encoder.as_ref()) {
                if penalty > 0.0 {
                    value -= 0.5 * penalty * ep.a.norm_squared();
                    e.a -= &ep.a * penalty;
                }
            }
            if let (Some(pre), Some(e)) = (whiten.as_ref(), grad.encoder.as_mut()) {
                e.a = &e.a * pre;
            }
            Ok((value, grad.to_vec()))
        },
        |v| {
            let mut p = template.clone();
            p.set_from_slice(v);
            project_params(&mut p, spec.isotropic);
            v.copy_from_slice(&p.to_vec());
        },
    )?;
    let mut best = template;
    best.set_from_slice(&result.best);
    Ok((best, result))
}

/// `(XᵀX/N + εI)⁻¹` with a small ridge relative to the mean variance.
fn second_moment_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let mut s = x.tr_mul(x) / n as f64;
    let ridge = 1e-6 * (s.trace() / p as f64).max(VARIANCE_FLOOR);
    for j in 0..p {
        s[(j, j)] += ridge;
    }
    let chol = nalgebra::Cholesky::new(s)
        .ok_or_else(|| Error::numeric("data second-moment matrix is not positive definite"))?;
    Ok(chol.inverse())
}

/// Fit gPCR by full-batch momentum ascent on the per-observation objective.
/// `x` is raw data (centered internally); `y` is `N × k`.
pub fn fit_gpcr(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    spec: &FitSpec,
    obj: &ObjectiveConfig,
    cfg: &TrainConfig,
) -> Result<GpcrFit> {
    check_fit_inputs(x, y, spec)?;
    obj.validate()?;
    cfg.validate()?;
    let mean = column_means(x);
    let xc = center_columns(x, &mean);
    let mask = spec.supervise.mask(spec.latents);
    let prob = Problem {
        x: &xc,
        y,
        link: spec.link,
        mask: &mask,
        mu: obj.mu,
    };
    let init = initial_params(&xc, y, spec, cfg)?;
    let (best, result) = run(Objective::Gpcr, init, &prob, spec, obj, cfg)?;
    let (model, head, _) = best.to_parts(spec.link, &mask, mean)?;
    Ok(GpcrFit {
        model: model.with_isotropic(spec.isotropic),
        head,
        trace: result.trace,
        objective: result.best_value,
        converged: result.converged,
    })
}

/// Fit the linear SVAE: generative parameters, head, and an affine encoder
/// initialized at the warm-start posterior.
pub fn fit_svae(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    spec: &FitSpec,
    obj: &ObjectiveConfig,
    cfg: &TrainConfig,
) -> Result<SvaeFit> {
    check_fit_inputs(x, y, spec)?;
    obj.validate()?;
    cfg.validate()?;
    let mean = column_means(x);
    let xc = center_columns(x, &mean);
    let mask = spec.supervise.mask(spec.latents);
    let prob = Problem {
        x: &xc,
        y,
        link: spec.link,
        mask: &mask,
        mu: obj.mu,
    };
    let mut init = initial_params(&xc, y, spec, cfg)?;
    let start = FactorModel::centered(LowRankCov::new(
        init.w.clone(),
        init.log_lambda.map(f64::exp),
    )?);
    let enc = LinearEncoder::from_posterior(&start)?;
    init.encoder = Some(EncoderParams {
        a: enc.a().clone(),
        intercept: enc.intercept().clone(),
        log_var: enc.var().map(f64::ln),
    });
    let (best, result) = run(Objective::Svae, init, &prob, spec, obj, cfg)?;
    let (model, head, encoder) = best.to_parts(spec.link, &mask, mean)?;
    Ok(SvaeFit {
        model: model.with_isotropic(spec.isotropic),
        head,
        encoder: encoder.expect("encoder parameters present"),
        trace: result.trace,
        objective: result.best_value,
        converged: result.converged,
    })
}

/// Objective under test in [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckTarget {
    GpcrGaussian,
    GpcrLogistic,
    SvaeGaussian,
    SvaeLogistic,
}

impl GradCheckTarget {
    pub const ALL: [GradCheckTarget; 4] = [
        GradCheckTarget::GpcrGaussian,
        GradCheckTarget::GpcrLogistic,
        GradCheckTarget::SvaeGaussian,
        GradCheckTarget::SvaeLogistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheckTarget::GpcrGaussian => "gpcr-gaussian",
            GradCheckTarget::GpcrLogistic => "gpcr-logistic",
            GradCheckTarget::SvaeGaussian => "svae-gaussian",
            GradCheckTarget::SvaeLogistic => "svae-logistic",
        }
    }

    /// Acceptance threshold on the worst relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            GradCheckTarget::GpcrGaussian => 1e-4,
            _ => 1e-3,
        }
    }

    fn link(self) -> Link {
        match self {
            GradCheckTarget::GpcrGaussian | GradCheckTarget::SvaeGaussian => {
                Link::Gaussian { noise_var: 0.7 }
            }
            _ => Link::Logistic,
        }
    }

    fn is_svae(self) -> bool {
        matches!(self, GradCheckTarget::SvaeGaussian | GradCheckTarget::SvaeLogistic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub target: &'static str,
    pub max_rel_error: f64,
    pub worst_block: &'static str,
    pub worst_index: usize,
    pub parameters: usize,
}

/// Central finite differences (step `1e-5`) against the analytic gradient on
/// a random instance with `p ≤ 12`, `L ≤ 3`, `N ≤ 25`. Both evaluations share
/// the same Monte Carlo draws. Relative error per entry is
/// `|a − n| / max(|a|, |n|, 1)`.
pub fn check_gradients(target: GradCheckTarget, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng::substream(seed, 11);
    use rand::Rng;
    let p = r.random_range(4..=12usize);
    let l = r.random_range(1..=3usize);
    let n = r.random_range(8..=25usize);
    let link = target.link();
    let mask: Vec<bool> = (0..l).map(|k| k == 0 || r.random_bool(0.5)).collect();
    let w = rng::normal_matrix(&mut r, p, l) * 0.8;
    let log_lambda = DVector::from_iterator(p, (0..p).map(|_| r.random_range(-0.7..0.5)));
    let z = rng::normal_matrix(&mut r, n, l);
    let x = &z * w.transpose() + rng::normal_matrix(&mut r, n, p) * 0.6;
    let k = 1;
    let y = match link {
        Link::Logistic => DMatrix::from_fn(n, k, |i, _| if z[(i, 0)] + 0.3 * rng::standard_normal(&mut r) > 0.0 { 1.0 } else { 0.0 }),
        Link::Gaussian { .. } => DMatrix::from_fn(n, k, |i, _| z[(i, 0)] + 0.5 * rng::standard_normal(&mut r)),
    };
    let mut coef = rng::normal_matrix(&mut r, l, k) * 0.7;
    for (kk, &m) in mask.iter().enumerate() {
        if !m {
            coef.row_mut(kk).fill(0.0);
        }
    }
    let intercept = DVector::from_element(k, 0.2);
    let mut params = Params {
        w,
        log_lambda,
        coef,
        intercept,
        encoder: None,
    };
    if target.is_svae() {
        params.encoder = Some(EncoderParams {
            a: rng::normal_matrix(&mut r, l, p) * 0.3,
            intercept: DVector::from_iterator(l, (0..l).map(|_| 0.1 * rng::standard_normal(&mut r))),
            log_var: DVector::from_iterator(l, (0..l).map(|_| r.random_range(-1.5..0.0))),
        });
    }
    let mu = 1.0 + 4.0 * r.random::<f64>();
    let noise = McNoise::draw(&mut r, 4, n, l);
    let prob = Problem {
        x: &x,
        y: &y,
        link,
        mask: &mask,
        mu,
    };
    let which = if target.is_svae() {
        Objective::Svae
    } else {
        Objective::Gpcr
    };
    let analytic = evaluate(&which, &params, &prob, Some(&noise), true)?
        .grad
        .expect("gradient requested");
    let base = params.to_vec();
    let analytic_flat = analytic.to_vec();
    let names: Vec<(&'static str, usize)> = params
        .blocks()
        .iter()
        .flat_map(|(name, b)| (0..b.len()).map(move |i| (*name, i)))
        .collect();
    let h = 1e-5;
    let mut scratch = params.clone();
    let mut report = GradCheckReport {
        target: target.name(),
        max_rel_error: 0.0,
        worst_block: "",
        worst_index: 0,
        parameters: base.len(),
    };
    for idx in 0..base.len() {
        // Masked coefficients are structurally zero.
        if names[idx].0 == "coef" && !mask[names[idx].1 % l] {
            continue;
        }
        let mut v = base.clone();
        v[idx] += h;
        scratch.set_from_slice(&v);
        let up = evaluate(&which, &scratch, &prob, Some(&noise), false)?.value;
        v[idx] -= 2.0 * h;
        scratch.set_from_slice(&v);
        let down = evaluate(&which, &scratch, &prob, Some(&noise), false)?.value;
        let fd = (up - down) / (2.0 * h);
        let a = analytic_flat[idx];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_block = names[idx].0;
            report.worst_index = names[idx].1;
        }
    }
    Ok(report)
}
