//! The full synthetic experiment: generate data, fit PCR, the SVAE and gPCR,
//! score them on held-out rows, and compare stimulation targets.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::baselines::{default_penalty_grid, fit_pcr_cv, PcrModel};
use crate::error::{Error, Result};
use crate::head::{Link, PredictiveHead};
use crate::metrics::{auc_binary, discrepancy_report, roc_curve, DiscrepancyReport, RocCurve};
use crate::model::FactorModel;
use crate::objective::{LinearEncoder, ObjectiveConfig};
use crate::optim::{fit_gpcr, fit_svae, FitSpec, GpcrFit, Init, SvaeFit, TrainConfig};
use crate::synth::{
    generate, saliency, select_targets, stim_efficacy, top_indices, Fitted, ModelTag, StimResult,
    SynthConfig, SynthData,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub synth: SynthConfig,
    /// Latent count of every fitted model.
    pub latents: usize,
    pub test_fraction: f64,
    /// Supervision weight; `None` uses the covariate count.
    pub mu: Option<f64>,
    pub mc_samples_train: usize,
    pub mc_samples_eval: usize,
    pub encoder_penalty: f64,
    #[serde(skip)]
    pub gpcr_train: TrainConfig,
    #[serde(skip)]
    pub svae_train: TrainConfig,
    pub cv_folds: usize,
    pub pool: usize,
    pub stim_size: usize,
    pub stims: usize,
    pub delta: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let init = Init::RandomGaussian { scale: 0.1 };
        Self {
            synth: SynthConfig::default(),
            latents: 5,
            test_fraction: 0.5,
            mu: None,
            mc_samples_train: 8,
            mc_samples_eval: 256,
            encoder_penalty: 100.0,
            gpcr_train: TrainConfig {
                init,
                ..TrainConfig::default()
            },
            svae_train: TrainConfig {
                learning_rate: 3e-4,
                max_iters: 6000,
                init,
                ..TrainConfig::default()
            },
            cv_folds: 5,
            pool: 50,
            stim_size: 10,
            stims: 100,
            delta: 1.0,
        }
    }
}

impl BenchConfig {
    /// Same settings with every seed derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.gpcr_train.seed = seed;
        self.svae_train.seed = seed;
        self
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            mu: self.mu.unwrap_or(self.synth.p as f64),
            mc_samples_train: self.mc_samples_train,
            mc_samples_eval: self.mc_samples_eval,
            seed: self.synth.seed,
            encoder_penalty: self.encoder_penalty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.objective().validate()?;
        self.gpcr_train.validate()?;
        self.svae_train.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::input("test fraction must lie in (0, 1)"));
        }
        if self.latents == 0 {
            return Err(Error::input("latent count must be at least 1"));
        }
        Ok(())
    }
}

/// Held-out (and in-sample) AUCs of the four predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AucSummary {
    pub gpcr: f64,
    pub pcr: f64,
    pub svae_encoder: f64,
    pub svae_posterior: f64,
}

impl AucSummary {
    /// encoder > gPCR > posterior > PCR.
    pub fn ordered(&self) -> bool {
        self.svae_encoder > self.gpcr && self.gpcr > self.svae_posterior && self.svae_posterior > self.pcr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocSet {
    pub gpcr: RocCurve,
    pub pcr: RocCurve,
    pub svae_encoder: RocCurve,
    pub svae_posterior: RocCurve,
}

/// Per-covariate weights of the supervised direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadingTable {
    pub truth: Vec<f64>,
    pub gpcr: Vec<f64>,
    pub svae: Vec<f64>,
    pub pcr: Vec<f64>,
}

/// Held-out encoder means against posterior means for one factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreScatter {
    pub factor: usize,
    pub encoder: Vec<f64>,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub auc: AucSummary,
    pub train_auc: AucSummary,
    pub discrepancy: DiscrepancyReport,
    pub stim: Vec<StimResult>,
    /// Largest shift attainable by any `stim_size` covariates; mean shifts
    /// are also reported as a fraction of it.
    pub max_shift: f64,
    /// How many of gPCR's top-`block` saliency indices fall in the true block.
    pub gpcr_block_hits: usize,
    pub roc: RocSet,
    pub loadings: LoadingTable,
    pub scatter: Vec<ScoreScatter>,
    pub gpcr_converged: bool,
    pub svae_converged: bool,
    pub gpcr_iters: usize,
    pub svae_iters: usize,
}

impl BenchReport {
    pub fn mean_shift(&self, tag: ModelTag) -> f64 {
        self.stim
            .iter()
            .find(|s| s.model_tag == tag)
            .map(|s| s.mean_shift)
            .unwrap_or(f64::NAN)
    }

    /// gPCR > SVAE > PCR.
    pub fn shifts_ordered(&self) -> bool {
        let (g, s, p) = (
            self.mean_shift(ModelTag::Gpcr),
            self.mean_shift(ModelTag::Svae),
            self.mean_shift(ModelTag::Pcr),
        );
        g > s && s > p
    }
}

/// The three fitted models.
#[derive(Debug, Clone)]
pub struct BenchFits {
    pub gpcr: GpcrFit,
    pub svae: SvaeFit,
    pub pcr: PcrModel,
}

fn column(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    m.column(k).iter().copied().collect()
}

fn generative_scores(model: &FactorModel, head: &PredictiveHead, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let scores = model.posterior_mean_scores(&model.center(x)?)?;
    Ok(column(&head.linear_predictor(&scores), 0))
}

fn encoder_scores(model: &FactorModel, enc: &LinearEncoder, head: &PredictiveHead, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let means = enc.means(&model.center(x)?);
    Ok(column(&head.linear_predictor(&means), 0))
}

struct Scores {
    gpcr: Vec<f64>,
    pcr: Vec<f64>,
    svae_encoder: Vec<f64>,
    svae_posterior: Vec<f64>,
}

fn all_scores(fits: &BenchFits, x: &DMatrix<f64>) -> Result<Scores> {
    Ok(Scores {
        gpcr: generative_scores(&fits.gpcr.model, &fits.gpcr.head, x)?,
        pcr: column(&fits.pcr.predict(x), 0),
        svae_encoder: encoder_scores(&fits.svae.model, &fits.svae.encoder, &fits.svae.head, x)?,
        svae_posterior: generative_scores(&fits.svae.model, &fits.svae.head, x)?,
    })
}

fn auc_summary(s: &Scores, y: &DVector<f64>) -> Result<AucSummary> {
    let y = y.as_slice();
    Ok(AucSummary {
        gpcr: auc_binary(&s.gpcr, y)?,
        pcr: auc_binary(&s.pcr, y)?,
        svae_encoder: auc_binary(&s.svae_encoder, y)?,
        svae_posterior: auc_binary(&s.svae_posterior, y)?,
    })
}

/// Fit PCR, the SVAE, and gPCR on training rows.
pub fn fit_all(cfg: &BenchConfig, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<BenchFits> {
    let spec = FitSpec::new(cfg.latents, Link::Logistic);
    let obj = cfg.objective();
    let ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let pcr = fit_pcr_cv(
        x,
        y,
        cfg.latents,
        Link::Logistic,
        &default_penalty_grid(),
        cfg.cv_folds,
        cfg.synth.seed,
    )?;
    let svae = fit_svae(x, &ym, &spec, &obj, &cfg.svae_train)?;
    let gpcr = fit_gpcr(x, &ym, &spec, &obj, &cfg.gpcr_train)?;
    Ok(BenchFits { gpcr, svae, pcr })
}

/// Score fitted models against the generating data.
pub fn evaluate(cfg: &BenchConfig, data: &SynthData, fits: &BenchFits) -> Result<BenchReport> {
    let (train, test) = data.split(cfg.test_fraction)?;
    let labels: Vec<bool> = test.y.iter().map(|&v| v > 0.5).collect();
    let held = all_scores(fits, &test.x)?;
    let auc = auc_summary(&held, &test.y)?;
    let train_auc = auc_summary(&all_scores(fits, &train.x)?, &train.y)?;
    let roc = RocSet {
        gpcr: roc_curve(&held.gpcr, &labels)?,
        pcr: roc_curve(&held.pcr, &labels)?,
        svae_encoder: roc_curve(&held.svae_encoder, &labels)?,
        svae_posterior: roc_curve(&held.svae_posterior, &labels)?,
    };

    let svae = &fits.svae;
    let xc = svae.model.center(&test.x)?;
    let post = svae.model.posterior()?;
    let discrepancy = discrepancy_report(&svae.encoder, &post, &svae.head, &xc, test.y.as_slice())?;
    let enc_means = svae.encoder.means(&xc);
    let post_means = post.scores(&xc);
    let supervised = svae.head.supervised_factor().unwrap_or(0);
    let other = (0..cfg.latents).find(|&k| k != supervised);
    let scatter = std::iter::once(supervised)
        .chain(other)
        .map(|k| ScoreScatter {
            factor: k,
            encoder: column(&enc_means, k),
            posterior: column(&post_means, k),
        })
        .collect();

    let fitted = [
        Fitted::Generative {
            tag: ModelTag::Gpcr,
            model: &fits.gpcr.model,
            head: &fits.gpcr.head,
        },
        Fitted::Generative {
            tag: ModelTag::Svae,
            model: &svae.model,
            head: &svae.head,
        },
        Fitted::Pcr(&fits.pcr),
    ];
    let tags = [ModelTag::Gpcr, ModelTag::Svae, ModelTag::Pcr];
    let mut stim = Vec::with_capacity(3);
    let mut saliencies = Vec::with_capacity(3);
    for (i, (f, tag)) in fitted.iter().zip(tags).enumerate() {
        let s = saliency(f)?;
        let targets = select_targets(
            s.as_slice(),
            cfg.pool,
            cfg.stim_size,
            cfg.stims,
            cfg.synth.seed.wrapping_add(1000 + i as u64),
        )?;
        stim.push(stim_efficacy(data, &targets, cfg.delta, tag)?);
        saliencies.push(s);
    }

    let effects = data.true_effects()?;
    let best = top_indices(effects.as_slice(), cfg.stim_size);
    let max_shift = best.iter().map(|&j| cfg.delta * effects[j].abs()).sum();
    let block = cfg.synth.block;
    let gpcr_block_hits = top_indices(saliencies[0].as_slice(), block)
        .iter()
        .filter(|&&j| j < block)
        .count();

    let gk = fits.gpcr.head.supervised_factor().unwrap_or(0);
    let loadings = LoadingTable {
        truth: column(&data.w_true, 0),
        gpcr: column(fits.gpcr.model.loadings(), gk),
        svae: column(svae.model.loadings(), supervised),
        pcr: fits.pcr.covariate_coefficients().iter().copied().collect(),
    };

    Ok(BenchReport {
        seed: cfg.synth.seed,
        auc,
        train_auc,
        discrepancy,
        stim,
        max_shift,
        gpcr_block_hits,
        roc,
        loadings,
        scatter,
        gpcr_converged: fits.gpcr.converged,
        svae_converged: fits.svae.converged,
        gpcr_iters: fits.gpcr.trace.len(),
        svae_iters: fits.svae.trace.len(),
    })
}

/// Generate, fit, and evaluate one replicate.
pub fn run(cfg: &BenchConfig) -> Result<(BenchReport, BenchFits)> {
    cfg.validate()?;
    let data = generate(&cfg.synth)?;
    let (train, _) = data.split(cfg.test_fraction)?;
    let fits = fit_all(cfg, &train.x, &train.y)?;
    let report = evaluate(cfg, &data, &fits)?;
    Ok((report, fits))
}
