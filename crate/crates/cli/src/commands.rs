use std::collections::BTreeMap;
use std::path::Path;

use gpcr::baselines::{default_penalty_grid, fit_pcr_cv, fit_pcr_targets, fit_ridge, fit_ridge_cv};
use gpcr::bench::{self, BenchConfig, BenchReport};
use gpcr::data::{self, split_by_group, standardize, Dataset, OutcomeKind, TargetSpec};
use gpcr::metrics::{auc_binary, discrepancy_report, mse, roc_curve, RocCurve};
use gpcr::modelio::{to_text, ModelArtifact, ModelBody};
use gpcr::optim::{check_gradients, fit_gpcr, fit_svae, GradCheckTarget, TraceRecord};
use gpcr::synth::{generate, ModelTag, SynthConfig};
use gpcr::{Error, FitSpec, Init, Link, ObjectiveConfig, Result, Supervise, TrainConfig};
use nalgebra::DMatrix;

use crate::args::{
    CompareArgs, DataArgs, FitArgs, GradArgs, GradTarget, InitArg, LinkArg, ModelArg, PredictArgs,
    SynthArgs, TrainArgs,
};
use crate::output::{csv_text, num, Manifest, Staged};

/// What every command needs besides its own flags.
pub struct RunContext {
    pub argv: Vec<String>,
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub started: f64,
}

impl RunContext {
    fn manifest(&self, seed: Option<u64>) -> Manifest {
        Manifest {
            command: self.argv.clone(),
            subcommand: self.subcommand.clone(),
            config: self.config.clone(),
            seed,
            started_unix: self.started,
            finished_unix: 0.0,
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

fn target_spec(d: &DataArgs) -> TargetSpec {
    match (&d.target, &d.target_prefix) {
        (Some(t), _) => TargetSpec::Columns(t.split(',').map(|s| s.trim().to_string()).collect()),
        (None, Some(p)) => TargetSpec::Prefix(p.clone()),
        (None, None) => TargetSpec::None,
    }
}

fn load(d: &DataArgs) -> Result<Dataset> {
    let spec = target_spec(d);
    if spec == TargetSpec::None {
        return Err(Error::input("an outcome is required: pass --target or --target-prefix"));
    }
    data::load_csv(&d.data, &spec, d.group.as_deref())
}

fn resolve_link(arg: LinkArg, noise_var: Option<f64>, ds: &Dataset) -> Result<Link> {
    let gaussian = || {
        let var = noise_var.unwrap_or_else(|| {
            let n = ds.len() as f64;
            ds.y
                .column_iter()
                .map(|c| {
                    let m = c.mean();
                    c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
                })
                .sum::<f64>()
                / ds.y.ncols() as f64
        });
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::input("gaussian head variance must be > 0"));
        }
        Ok(Link::Gaussian { noise_var: var })
    };
    match arg {
        LinkArg::Logistic => Ok(Link::Logistic),
        LinkArg::Gaussian => gaussian(),
        LinkArg::Auto => match ds.outcome_kind() {
            OutcomeKind::Binary if ds.y.ncols() == 1 => Ok(Link::Logistic),
            _ => gaussian(),
        },
    }
}

fn train_config(t: &TrainArgs) -> TrainConfig {
    TrainConfig {
        learning_rate: t.lr,
        momentum: t.momentum,
        max_iters: t.max_iters,
        rel_tol: t.rel_tol,
        patience: t.patience,
        seed: t.seed,
        init: match t.init {
            InitArg::Pca => Init::PcaWarmStart,
            InitArg::Random => Init::RandomGaussian { scale: t.init_scale },
        },
    }
}

fn objective_config(t: &TrainArgs, p: usize) -> ObjectiveConfig {
    ObjectiveConfig {
        mu: t.mu.unwrap_or(p as f64),
        mc_samples_train: t.mc_samples,
        mc_samples_eval: t.mc_samples_eval,
        seed: t.seed,
        encoder_penalty: t.encoder_penalty,
    }
}

fn fit_spec(t: &TrainArgs, link: Link) -> FitSpec {
    FitSpec {
        latents: t.latents,
        link,
        supervise: if t.mask_first_factor {
            Supervise::FirstFactor
        } else {
            Supervise::All
        },
        isotropic: t.ppca,
    }
}

fn trace_csv(trace: &[TraceRecord]) -> String {
    csv_text(
        &["iter", "objective", "grad_norm"],
        trace
            .iter()
            .map(|r| vec![r.iter.to_string(), num(r.objective), num(r.grad_norm)]),
    )
}

fn roc_csv(roc: &RocCurve) -> String {
    roc.to_table()
}

/// Training split, optional test split, optional standardizer.
struct Prepared {
    train: Dataset,
    test: Option<Dataset>,
    standardizer: Option<data::StandardizerState>,
    fit_x: DMatrix<f64>,
}

fn prepare(ds: Dataset, test_fraction: Option<f64>, seed: u64, standardize_x: bool) -> Result<Prepared> {
    let (train, test) = match test_fraction {
        Some(f) => {
            let (a, b) = split_by_group(&ds, f, seed)?;
            (a, Some(b))
        }
        None => (ds, None),
    };
    let (standardizer, fit_x) = if standardize_x {
        let (s, t) = standardize(&train)?;
        (Some(s), t.x)
    } else {
        (None, train.x.clone())
    };
    Ok(Prepared {
        train,
        test,
        standardizer,
        fit_x,
    })
}

fn outcome_metrics(staged: &mut Staged, prefix: &str, art: &ModelArtifact, ds: &Dataset) -> Result<()> {
    let eta = art.linear_predictor(&ds.x)?;
    match art.body.link() {
        Link::Logistic => {
            let scores: Vec<f64> = eta.column(0).iter().copied().collect();
            staged.metric(format!("{prefix}auc"), auc_binary(&scores, ds.y.column(0).as_slice())?);
        }
        Link::Gaussian { .. } => {
            staged.metric(format!("{prefix}mse"), mse(&eta, &ds.y)?);
        }
    }
    Ok(())
}

fn config_lines(ctx: &RunContext) -> BTreeMap<String, String> {
    ctx.config
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "config" | "out"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

pub fn fit(a: &FitArgs, ctx: &RunContext) -> Result<()> {
    let ds = load(&a.data)?;
    if a.test_fraction.is_some() && a.data.group.is_none() {
        return Err(Error::input("--test-fraction needs --group"));
    }
    let prep = prepare(ds, a.test_fraction, a.train.seed, a.standardize)?;
    let train = &prep.train;
    let link = resolve_link(a.train.link, a.train.noise_var, train)?;
    let p = train.x.ncols();
    let mut staged = Staged::default();
    let mut trace = None;
    let body = match a.model {
        ModelArg::Gpcr => {
            let fit = fit_gpcr(&prep.fit_x, &train.y, &fit_spec(&a.train, link), &objective_config(&a.train, p), &train_config(&a.train))?;
            staged.metric("objective", fit.objective);
            staged.metric("train_loglik", fit.model.marginal_loglik(&fit.model.center(&prep.fit_x)?)?);
            staged.metric("iterations", fit.trace.len() as f64);
            staged.metric("converged", f64::from(u8::from(fit.converged)));
            trace = Some(trace_csv(&fit.trace));
            ModelBody::Gpcr {
                model: fit.model,
                head: fit.head,
            }
        }
        ModelArg::Svae => {
            let fit = fit_svae(&prep.fit_x, &train.y, &fit_spec(&a.train, link), &objective_config(&a.train, p), &train_config(&a.train))?;
            staged.metric("objective", fit.objective);
            staged.metric("train_loglik", fit.model.marginal_loglik(&fit.model.center(&prep.fit_x)?)?);
            staged.metric("iterations", fit.trace.len() as f64);
            staged.metric("converged", f64::from(u8::from(fit.converged)));
            trace = Some(trace_csv(&fit.trace));
            ModelBody::Svae {
                model: fit.model,
                head: fit.head,
                encoder: fit.encoder,
            }
        }
        ModelArg::Pcr => {
            let m = match a.penalty {
                Some(pen) => fit_pcr_targets(&prep.fit_x, &train.y, a.train.latents, link, pen)?,
                None if train.y.ncols() == 1 => fit_pcr_cv(
                    &prep.fit_x,
                    &train.y.column(0).clone_owned(),
                    a.train.latents,
                    link,
                    &default_penalty_grid(),
                    a.cv_folds,
                    a.train.seed,
                )?,
                None => {
                    let cv = fit_pcr_cv(
                        &prep.fit_x,
                        &train.y.column(0).clone_owned(),
                        a.train.latents,
                        link,
                        &default_penalty_grid(),
                        a.cv_folds,
                        a.train.seed,
                    )?;
                    staged.notes.push("penalty chosen by cross-validation on the first target".into());
                    fit_pcr_targets(&prep.fit_x, &train.y, a.train.latents, link, cv.penalty)?
                }
            };
            staged.metric("penalty", m.penalty);
            ModelBody::Pcr(m)
        }
        ModelArg::Ridge => {
            let models = (0..train.y.ncols())
                .map(|k| {
                    let yk = train.y.column(k).clone_owned();
                    match a.penalty {
                        Some(pen) => fit_ridge(&prep.fit_x, &yk, pen, link),
                        None => fit_ridge_cv(&prep.fit_x, &yk, link, &default_penalty_grid(), a.cv_folds, a.train.seed),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            staged.metric("penalty", models[0].penalty);
            ModelBody::Ridge(models)
        }
    };
    let artifact = ModelArtifact {
        body,
        standardizer: prep.standardizer,
        feature_names: train.feature_names.clone(),
        target_names: train.target_names.clone(),
        config: config_lines(ctx),
    };
    outcome_metrics(&mut staged, "train_", &artifact, train)?;
    if let Some(test) = &prep.test {
        outcome_metrics(&mut staged, "test_", &artifact, test)?;
        staged.metric("test_rows", test.len() as f64);
    }
    staged.metric("train_rows", train.len() as f64);
    staged.add("model.txt", to_text(&artifact));
    if let Some(t) = trace {
        staged.add("trace.csv", t);
    }
    staged.commit(&a.out, ctx.manifest(Some(a.train.seed)))?;
    Ok(())
}

fn read_header(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let h = r
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

fn load_for_model(a: &PredictArgs, art: &ModelArtifact) -> Result<(Dataset, bool)> {
    let header = read_header(&a.data)?;
    let has_truth = !art.target_names.is_empty() && art.target_names.iter().all(|t| header.contains(t));
    let spec = if has_truth {
        TargetSpec::Columns(art.target_names.clone())
    } else {
        TargetSpec::None
    };
    let mut ds = data::load_csv(&a.data, &spec, a.group.as_deref())?;
    if !has_truth {
        // Truth columns partially present would otherwise look like features.
        let keep: Vec<usize> = (0..ds.feature_names.len())
            .filter(|&j| !art.target_names.contains(&ds.feature_names[j]))
            .collect();
        if keep.len() != ds.feature_names.len() {
            ds.x = ds.x.select_columns(keep.iter());
            ds.feature_names = keep.iter().map(|&j| ds.feature_names[j].clone()).collect();
        }
    }
    art.check_features(&ds.feature_names)?;
    Ok((ds, has_truth))
}

fn predictions_csv(names: &[String], pred: &DMatrix<f64>) -> String {
    let header: Vec<String> = if names.len() == pred.ncols() {
        names.to_vec()
    } else {
        (0..pred.ncols()).map(|k| format!("target{k}")).collect()
    };
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(&refs, pred.row_iter().map(|r| r.iter().map(|&v| num(v)).collect()))
}

fn population_variance_mean(y: &DMatrix<f64>) -> f64 {
    let n = y.nrows() as f64;
    y.column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / y.ncols() as f64
}

pub fn predict(a: &PredictArgs, ctx: &RunContext, impute: bool) -> Result<()> {
    let art = gpcr::modelio::load_model(&a.model)?;
    if impute && !matches!(art.body.link(), Link::Gaussian { .. }) {
        return Err(Error::input("impute needs a model with a gaussian head"));
    }
    let (ds, has_truth) = load_for_model(a, &art)?;
    let mut staged = Staged::default();
    let pred = art.predict(&ds.x)?;
    let names: Vec<String> = if impute {
        art.target_names.clone()
    } else {
        art.target_names.iter().map(|t| format!("pred_{t}")).collect()
    };
    staged.add(if impute { "imputed.csv" } else { "predictions.csv" }, predictions_csv(&names, &pred));
    staged.metric("rows", ds.len() as f64);
    if has_truth {
        match art.body.link() {
            Link::Logistic => {
                let eta = art.linear_predictor(&ds.x)?;
                let scores: Vec<f64> = eta.column(0).iter().copied().collect();
                let labels: Vec<bool> = ds.y.column(0).iter().map(|&v| v > 0.5).collect();
                staged.metric("auc", auc_binary(&scores, ds.y.column(0).as_slice())?);
                staged.add("roc.csv", roc_csv(&roc_curve(&scores, &labels)?));
            }
            Link::Gaussian { .. } => {
                staged.metric("mse", mse(&pred, &ds.y)?);
                staged.metric("baseline_mse", population_variance_mean(&ds.y));
                for (k, name) in art.target_names.iter().enumerate() {
                    let col = |m: &DMatrix<f64>| m.columns(k, 1).clone_owned();
                    staged.metric(format!("mse.{name}"), mse(&col(&pred), &col(&ds.y))?);
                }
            }
        }
    } else {
        staged.absent(if matches!(art.body.link(), Link::Logistic) { "auc" } else { "mse" });
        staged.notes.push("truth columns absent; metrics not computed".into());
    }
    staged.commit(&a.out, ctx.manifest(None))?;
    Ok(())
}

fn bench_config(a: &SynthArgs) -> BenchConfig {
    let init = Init::RandomGaussian { scale: a.init_scale };
    let base = BenchConfig::default();
    BenchConfig {
        synth: SynthConfig {
            p: a.p,
            latents: a.true_latents,
            n: a.n,
            sigma2: a.sigma2,
            lambda1: a.lambda1,
            tau: a.tau,
            block: a.block,
            seed: a.seed,
        },
        latents: a.latents,
        test_fraction: a.test_fraction,
        mu: a.mu,
        mc_samples_train: a.mc_samples,
        encoder_penalty: a.encoder_penalty,
        gpcr_train: TrainConfig {
            learning_rate: a.lr,
            max_iters: a.max_iters,
            init,
            ..base.gpcr_train
        },
        svae_train: TrainConfig {
            learning_rate: a.svae_lr,
            max_iters: a.svae_max_iters,
            init,
            ..base.svae_train
        },
        cv_folds: a.cv_folds,
        pool: a.pool,
        stim_size: a.stim_size,
        stims: a.stims,
        delta: a.delta,
        ..base
    }
    .with_seed(a.seed)
}

fn synth_csvs(staged: &mut Staged, cfg: &BenchConfig) -> Result<()> {
    let data = generate(&cfg.synth)?;
    let (train, test) = data.split(cfg.test_fraction)?;
    let mut header: Vec<String> = (0..cfg.synth.p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    for (name, part) in [("train.csv", &train), ("test.csv", &test)] {
        let mut m = DMatrix::zeros(part.x.nrows(), cfg.synth.p + 1);
        m.columns_mut(0, cfg.synth.p).copy_from(&part.x);
        m.set_column(cfg.synth.p, &part.y);
        staged.add(name, data::matrix_csv(&header, &m)?);
    }
    Ok(())
}

fn summary_text(r: &BenchReport) -> String {
    let shifts = [ModelTag::Gpcr, ModelTag::Svae, ModelTag::Pcr];
    let mut s = String::new();
    s.push_str(&format!("auc.gpcr={}\nauc.pcr={}\nauc.svae_encoder={}\nauc.svae_posterior={}\n", r.auc.gpcr, r.auc.pcr, r.auc.svae_encoder, r.auc.svae_posterior));
    s.push_str(&format!(
        "train_auc.gpcr={}\ntrain_auc.pcr={}\ntrain_auc.svae_encoder={}\ntrain_auc.svae_posterior={}\n",
        r.train_auc.gpcr, r.train_auc.pcr, r.train_auc.svae_encoder, r.train_auc.svae_posterior
    ));
    for t in shifts {
        s.push_str(&format!("mean_shift.{t}={}\n", r.mean_shift(t)));
    }
    for t in shifts {
        s.push_str(&format!("relative_shift.{t}={}\n", r.mean_shift(t) / r.max_shift));
    }
    s.push_str(&format!("max_shift={}\n", r.max_shift));
    s.push_str(&format!("gpcr_block_hits={}\n", r.gpcr_block_hits));
    s.push_str(&r.discrepancy.to_text());
    s.push_str("efficacy_definition=change in the true-model posterior mean of z1 per unit shift of the targeted covariates\n");
    s
}

pub fn synth_bench(a: &SynthArgs, ctx: &RunContext) -> Result<()> {
    let cfg = bench_config(a);
    cfg.validate()?;
    let mut staged = Staged::default();
    if a.data_only {
        synth_csvs(&mut staged, &cfg)?;
        staged.commit(&a.out, ctx.manifest(Some(a.seed)))?;
        return Ok(());
    }
    let (r, fits) = bench::run(&cfg)?;
    staged.add("summary.txt", summary_text(&r));
    let p = r.loadings.truth.len();
    staged.add(
        "loadings.csv",
        csv_text(
            &["covariate", "truth", "gpcr", "svae", "pcr"],
            (0..p).map(|j| {
                vec![
                    j.to_string(),
                    num(r.loadings.truth[j]),
                    num(r.loadings.gpcr[j]),
                    num(r.loadings.svae[j]),
                    num(r.loadings.pcr[j]),
                ]
            }),
        ),
    );
    staged.add("roc_gpcr.csv", roc_csv(&r.roc.gpcr));
    staged.add("roc_pcr.csv", roc_csv(&r.roc.pcr));
    staged.add("roc_svae_encoder.csv", roc_csv(&r.roc.svae_encoder));
    staged.add("roc_svae_posterior.csv", roc_csv(&r.roc.svae_posterior));
    for sc in &r.scatter {
        staged.add(
            format!("scatter_factor{}.csv", sc.factor),
            csv_text(
                &["encoder", "posterior"],
                sc.encoder.iter().zip(&sc.posterior).map(|(e, q)| vec![num(*e), num(*q)]),
            ),
        );
    }
    let n_stims = r.stim.first().map(|s| s.per_stim_shift.len()).unwrap_or(0);
    staged.add(
        "stim_shifts.csv",
        csv_text(
            &["stim", "gpcr", "svae", "pcr"],
            (0..n_stims).map(|i| {
                let mut row = vec![i.to_string()];
                row.extend(r.stim.iter().map(|s| num(s.per_stim_shift[i])));
                row
            }),
        ),
    );
    staged.add("trace_gpcr.csv", trace_csv(&fits.gpcr.trace));
    staged.add("trace_svae.csv", trace_csv(&fits.svae.trace));
    staged.metric("auc.gpcr", r.auc.gpcr);
    staged.metric("auc.pcr", r.auc.pcr);
    staged.metric("auc.svae_encoder", r.auc.svae_encoder);
    staged.metric("auc.svae_posterior", r.auc.svae_posterior);
    for t in [ModelTag::Gpcr, ModelTag::Svae, ModelTag::Pcr] {
        staged.metric(format!("mean_shift.{t}"), r.mean_shift(t));
    }
    staged
        .notes
        .push("stimulation efficacy: change in the true-model posterior mean of z1".into());
    staged.commit(&a.out, ctx.manifest(Some(a.seed)))?;
    Ok(())
}

pub fn svae_compare(a: &CompareArgs, ctx: &RunContext) -> Result<()> {
    let ds = load(&a.data)?;
    if a.test_fraction.is_some() && a.data.group.is_none() {
        return Err(Error::input("--test-fraction needs --group"));
    }
    let mut prep = prepare(ds, a.test_fraction, a.train.seed, a.standardize)?;
    if let Some(path) = &a.test_data {
        let t = data::load_csv(path, &TargetSpec::Columns(prep.train.target_names.clone()), a.data.group.as_deref())?;
        if t.feature_names != prep.train.feature_names {
            return Err(Error::input("test data columns differ from the training data"));
        }
        prep.test = Some(t);
    }
    let link = resolve_link(a.train.link, a.train.noise_var, &prep.train)?;
    if !matches!(link, Link::Logistic) {
        return Err(Error::input("svae-compare needs a binary outcome (logistic head)"));
    }
    let p = prep.train.x.ncols();
    let spec = fit_spec(&a.train, link);
    let obj = objective_config(&a.train, p);
    let gcfg = train_config(&a.train);
    let scfg = TrainConfig {
        learning_rate: a.svae_lr.unwrap_or(gcfg.learning_rate),
        max_iters: a.svae_max_iters.unwrap_or(gcfg.max_iters),
        ..gcfg
    };
    let svae = fit_svae(&prep.fit_x, &prep.train.y, &spec, &obj, &scfg)?;
    let gp = fit_gpcr(&prep.fit_x, &prep.train.y, &spec, &obj, &gcfg)?;
    let eval = prep.test.as_ref().unwrap_or(&prep.train);
    let ex = match &prep.standardizer {
        Some(s) => s.transform(&eval.x)?,
        None => eval.x.clone(),
    };
    let y = eval.y.column(0).clone_owned();
    let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
    let xc = svae.model.center(&ex)?;
    let post = svae.model.posterior()?;
    let report = discrepancy_report(&svae.encoder, &post, &svae.head, &xc, y.as_slice())?;
    let enc_means = svae.encoder.means(&xc);
    let post_means = post.scores(&xc);
    let enc_eta: Vec<f64> = svae.head.linear_predictor(&enc_means).column(0).iter().copied().collect();
    let post_eta: Vec<f64> = svae.head.linear_predictor(&post_means).column(0).iter().copied().collect();
    let g_scores = gp.model.posterior_mean_scores(&gp.model.center(&ex)?)?;
    let g_eta: Vec<f64> = gp.head.linear_predictor(&g_scores).column(0).iter().copied().collect();
    let g_auc = auc_binary(&g_eta, y.as_slice())?;

    let mut staged = Staged::default();
    staged.add("report.txt", report.to_text());
    staged.add(
        "correlations.csv",
        csv_text(
            &["factor", "corr"],
            report.per_factor_corr.iter().enumerate().map(|(k, c)| vec![k.to_string(), num(*c)]),
        ),
    );
    staged.add("roc_encoder.csv", roc_csv(&roc_curve(&enc_eta, &labels)?));
    staged.add("roc_posterior.csv", roc_csv(&roc_curve(&post_eta, &labels)?));
    staged.add("roc_gpcr.csv", roc_csv(&roc_curve(&g_eta, &labels)?));
    let l = enc_means.ncols();
    let mut header: Vec<String> = Vec::new();
    for k in 0..l {
        header.push(format!("encoder{k}"));
        header.push(format!("posterior{k}"));
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    staged.add(
        "scatter.csv",
        csv_text(
            &refs,
            (0..enc_means.nrows()).map(|i| {
                (0..l)
                    .flat_map(|k| [num(enc_means[(i, k)]), num(post_means[(i, k)])])
                    .collect()
            }),
        ),
    );
    for (k, c) in report.per_factor_corr.iter().enumerate() {
        staged.metric(format!("corr.{k}"), *c);
    }
    staged.metric("auc.svae_encoder", report.auc_encoder);
    staged.metric("auc.svae_posterior", report.auc_posterior);
    staged.metric("auc.gpcr", g_auc);
    staged.metric("eval_rows", eval.len() as f64);
    staged.commit(&a.out, ctx.manifest(Some(a.train.seed)))?;
    Ok(())
}

/// Returns whether every objective met its tolerance.
pub fn check_grads(a: &GradArgs) -> Result<bool> {
    let targets: Vec<GradCheckTarget> = match a.target {
        GradTarget::All => vec![
            GradCheckTarget::GpcrGaussian,
            GradCheckTarget::GpcrLogistic,
            GradCheckTarget::SvaeGaussian,
            GradCheckTarget::SvaeLogistic,
        ],
        GradTarget::GpcrGaussian => vec![GradCheckTarget::GpcrGaussian],
        GradTarget::GpcrLogistic => vec![GradCheckTarget::GpcrLogistic],
        GradTarget::SvaeGaussian => vec![GradCheckTarget::SvaeGaussian],
        GradTarget::SvaeLogistic => vec![GradCheckTarget::SvaeLogistic],
    };
    let mut ok = true;
    for t in targets {
        for i in 0..a.instances.max(1) {
            let r = check_gradients(t, a.seed.wrapping_add(i))?;
            let pass = r.max_rel_error < t.tolerance();
            ok &= pass;
            println!(
                "{} seed={} params={} max_rel_error={:.3e} tol={:.0e} worst={}[{}] {}",
                r.target,
                a.seed.wrapping_add(i),
                r.parameters,
                r.max_rel_error,
                t.tolerance(),
                r.worst_block,
                r.worst_index,
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(ok)
}
