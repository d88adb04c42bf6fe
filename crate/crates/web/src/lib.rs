//! WebAssembly bindings for the demo page in `www/`. The browser sends JSON
//! settings and gets JSON back; the plain functions underneath are what the
//! native tests call.

use gpcr::bench::{self, BenchConfig};
use gpcr::metrics;
use gpcr::synth::{self, ModelTag, SynthConfig};
use gpcr::Init;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Demo-sized benchmark settings. Every field is optional in the JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoSettings {
    pub p: usize,
    pub n: usize,
    pub block: usize,
    pub true_latents: usize,
    pub latents: usize,
    pub lambda1: f64,
    pub seed: u64,
    pub mu: Option<f64>,
    pub gpcr_iters: usize,
    pub svae_iters: usize,
    pub encoder_penalty: f64,
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            p: 120,
            n: 800,
            block: 12,
            true_latents: 6,
            latents: 3,
            lambda1: 0.5,
            seed: 0,
            mu: None,
            gpcr_iters: 1500,
            svae_iters: 2000,
            encoder_penalty: 100.0,
        }
    }
}

impl DemoSettings {
    fn synth(&self) -> SynthConfig {
        SynthConfig {
            p: self.p,
            latents: self.true_latents,
            n: self.n,
            lambda1: self.lambda1,
            block: self.block,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        let base = BenchConfig::default();
        let mut cfg = BenchConfig {
            synth: self.synth(),
            latents: self.latents,
            mu: self.mu,
            encoder_penalty: self.encoder_penalty,
            pool: 20,
            stim_size: 5,
            stims: 20,
            mc_samples_eval: 64,
            ..base
        };
        cfg.gpcr_train.max_iters = self.gpcr_iters;
        cfg.svae_train.max_iters = self.svae_iters;
        cfg.gpcr_train.init = Init::RandomGaussian { scale: 0.1 };
        cfg.with_seed(self.seed)
    }
}

#[derive(Debug, Serialize)]
struct Curve {
    fpr: Vec<f64>,
    tpr: Vec<f64>,
    auc: f64,
}

impl From<&metrics::RocCurve> for Curve {
    fn from(r: &metrics::RocCurve) -> Self {
        Self {
            fpr: r.fpr.clone(),
            tpr: r.tpr.clone(),
            auc: r.auc,
        }
    }
}

#[derive(Debug, Serialize)]
struct DemoReport {
    auc: bench::AucSummary,
    roc: [(&'static str, Curve); 4],
    loadings: bench::LoadingTable,
    supervised_corr: f64,
    other_corr: Vec<f64>,
    mean_shift: [(&'static str, f64); 3],
    max_shift: f64,
}

fn parse<T: Default + for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    if json.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(json).map_err(|e| format!("bad settings: {e}"))
}

/// Fit all models on a fresh synthetic dataset; returns AUCs, ROC curves,
/// supervised loadings, encoder/posterior correlations and stimulation shifts.
pub fn benchmark_json(settings: &str) -> Result<String, String> {
    let s: DemoSettings = parse(settings)?;
    let cfg = s.bench_config();
    let (r, _) = bench::run(&cfg).map_err(|e| e.to_string())?;
    let corr = &r.discrepancy.per_factor_corr;
    let out = DemoReport {
        auc: r.auc,
        roc: [
            ("gpcr", (&r.roc.gpcr).into()),
            ("pcr", (&r.roc.pcr).into()),
            ("svae_encoder", (&r.roc.svae_encoder).into()),
            ("svae_posterior", (&r.roc.svae_posterior).into()),
        ],
        loadings: r.loadings.clone(),
        supervised_corr: corr[0],
        other_corr: corr[1..].to_vec(),
        mean_shift: [
            ("gpcr", r.mean_shift(ModelTag::Gpcr)),
            ("svae", r.mean_shift(ModelTag::Svae)),
            ("pcr", r.mean_shift(ModelTag::Pcr)),
        ],
        max_shift: r.max_shift,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
struct RocInput {
    scores: Vec<f64>,
    labels: Vec<f64>,
}

/// ROC curve for user-supplied scores and 0/1 labels.
pub fn roc_json(input: &str) -> Result<String, String> {
    let inp: RocInput = serde_json::from_str(input).map_err(|e| format!("bad input: {e}"))?;
    let labels: Vec<bool> = inp
        .labels
        .iter()
        .map(|&l| match l {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(format!("labels must be 0 or 1, got {other}")),
        })
        .collect::<Result<_, _>>()?;
    let roc = metrics::roc_curve(&inp.scores, &labels).map_err(|e| e.to_string())?;
    serde_json::to_string(&Curve::from(&roc)).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct Preview {
    /// Supervised column of the true loadings.
    truth: Vec<f64>,
    /// Per-covariate sample variance.
    variance: Vec<f64>,
    positive_rate: f64,
}

/// Generate data only and describe it.
pub fn preview_json(settings: &str) -> Result<String, String> {
    let s: DemoSettings = parse(settings)?;
    let data = synth::generate(&s.synth()).map_err(|e| e.to_string())?;
    let n = data.x.nrows() as f64;
    let variance = data
        .x
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .collect();
    let out = Preview {
        truth: data.w_true.column(0).iter().copied().collect(),
        variance,
        positive_rate: data.y.mean(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn run_benchmark(settings: &str) -> Result<String, JsValue> {
    benchmark_json(settings).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn roc(input: &str) -> Result<String, JsValue> {
    roc_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn preview(settings: &str) -> Result<String, JsValue> {
    preview_json(settings).map_err(|e| JsValue::from_str(&e))
}
