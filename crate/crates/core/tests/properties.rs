use std::time::Instant;

use gpcr::baselines::{fit_ridge, logistic_objective};
use gpcr::head::{first_factor_mask, sigmoid};
use gpcr::metrics::{auc, pearson};
use gpcr::objective::{gpcr_objective, svae_objective};
use gpcr::optim::{fit_gpcr, fit_svae, momentum_ascent};
use gpcr::rng::{normal_matrix, substream};
use gpcr::{
    FactorModel, FitSpec, Init, Link, LinearEncoder, LowRankCov, ObjectiveConfig, PredictiveHead, TrainConfig,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn labels_and_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(-50i32..50, n).prop_map(|v| v.into_iter().map(|k| k as f64 / 8.0).collect()),
            prop::collection::vec(any::<bool>(), n).prop_map(|mut l| {
                l[0] = true;
                l[1] = false;
                l
            }),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_invariant_under_increasing_maps((s, l) in labels_and_scores(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auc(&s, &l).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let cubic: Vec<f64> = s.iter().map(|v| v.powi(3)).collect();
        prop_assert_eq!(auc(&affine, &l).unwrap(), base);
        prop_assert_eq!(auc(&cubic, &l).unwrap(), base);
    }

    #[test]
    fn auc_of_negated_scores_is_complement((s, l) in labels_and_scores()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let total = auc(&s, &l).unwrap() + auc(&neg, &l).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine_invariance(
        a in prop::collection::vec(-10.0f64..10.0, 3..40),
        scale in 0.1f64..20.0,
        shift in -10.0f64..10.0,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * v + i as f64).collect();
        prop_assume!(a.iter().any(|v| (v - a[0]).abs() > 1e-3));
        let r = pearson(&a, &b).unwrap();
        let up: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
        let down: Vec<f64> = a.iter().map(|v| -scale * v + shift).collect();
        prop_assert!((pearson(&up, &b).unwrap() - r).abs() < 1e-9);
        prop_assert!((pearson(&down, &b).unwrap() + r).abs() < 1e-9);
    }

    #[test]
    fn woodbury_solve_residual(seed in any::<u64>(), p in 1usize..40, l in 1usize..6) {
        let mut r = substream(seed, 1);
        let l = l.min(p);
        let cov = LowRankCov::new(
            normal_matrix(&mut r, p, l) * 2.0,
            DVector::from_fn(p, |_, _| r.random_range(0.05..3.0)),
        ).unwrap();
        let v = DVector::from_fn(p, |_, _| r.random_range(-3.0..3.0));
        let sol = cov.solve(&v).unwrap();
        let resid = cov.to_dense() * sol - &v;
        prop_assert!(resid.norm() <= 1e-9 * v.norm().max(1.0));
    }

    #[test]
    fn elbo_never_exceeds_marginal(seed in any::<u64>(), p in 2usize..20, l in 1usize..4, n in 3usize..30) {
        let mut r = substream(seed, 2);
        let l = l.min(p);
        let x = normal_matrix(&mut r, n, p);
        let model = FactorModel::centered(LowRankCov::new(
            normal_matrix(&mut r, p, l),
            DVector::from_fn(p, |_, _| r.random_range(0.1..2.0)),
        ).unwrap());
        let enc = LinearEncoder::new(
            normal_matrix(&mut r, l, p),
            DVector::from_fn(l, |_, _| r.random_range(-1.0..1.0)),
            DVector::from_fn(l, |_, _| r.random_range(0.01..3.0)),
        ).unwrap();
        let head = PredictiveHead::new(DMatrix::zeros(l, 1), DVector::zeros(1), Link::Gaussian { noise_var: 1.0 }, first_factor_mask(l)).unwrap();
        let obj = ObjectiveConfig { mu: 0.0, ..ObjectiveConfig::default() };
        let bound = svae_objective(&model, &head, &enc, &x, &DMatrix::zeros(n, 1), &obj).unwrap().0;
        prop_assert!(bound <= model.marginal_loglik(&x).unwrap());
    }
}

#[test]
fn newton_and_momentum_ascent_agree_on_logistic_ridge() {
    let mut r = substream(5, 3);
    let (n, p) = (300, 4);
    let x = normal_matrix(&mut r, n, p);
    let truth = DVector::from_vec(vec![1.0, -0.5, 0.0, 2.0]);
    let y = DVector::from_fn(n, |i, _| {
        let eta = x.row(i).transpose().dot(&truth) + 0.3;
        if r.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 }
    });
    let penalty = 2.0;
    let newton = fit_ridge(&x, &y, penalty, Link::Logistic).unwrap();

    // Parameters: [intercept, coef...]; the intercept is unpenalized.
    let cfg = TrainConfig {
        learning_rate: 0.5,
        max_iters: 20_000,
        rel_tol: 1e-15,
        patience: 20,
        ..TrainConfig::default()
    };
    let res = momentum_ascent(
        vec![0.0; p + 1],
        &cfg,
        1.0 / n as f64,
        |_, th| {
            let coef = DVector::from_column_slice(&th[1..]);
            let value = logistic_objective(&x, &y, &coef, th[0], penalty);
            let resid = DVector::from_fn(n, |i, _| y[i] - sigmoid(x.row(i).transpose().dot(&coef) + th[0]));
            let mut g = vec![resid.sum()];
            g.extend((x.transpose() * &resid - &coef * penalty).iter());
            Ok((value, g))
        },
        |_| {},
    )
    .unwrap();
    assert!((res.best[0] - newton.intercept).abs() < 1e-5);
    for j in 0..p {
        assert!((res.best[j + 1] - newton.coef[j]).abs() < 1e-5, "coef {j}");
    }
}

fn ppca_closed_form(x: &DMatrix<f64>, latents: usize) -> f64 {
    let (n, p) = x.shape();
    let means: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let mut eig: Vec<f64> = SymmetricEigen::new(xc.tr_mul(&xc) / n as f64).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let sigma2 = eig[latents..].iter().sum::<f64>() / (p - latents) as f64;
    let logdet = eig[..latents].iter().map(|l| l.ln()).sum::<f64>() + (p - latents) as f64 * sigma2.ln();
    -0.5 * n as f64 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + p as f64)
}

#[test]
fn ppca_from_random_start_reaches_closed_form() {
    let mut r = substream(9, 4);
    let (p, l, n) = (25, 3, 500);
    let truth = FactorModel::ppca(normal_matrix(&mut r, p, l) * 1.5, 0.8, DVector::zeros(p)).unwrap();
    let (_, x) = truth.sample(n, 1).unwrap();
    let spec = FitSpec {
        isotropic: true,
        ..FitSpec::new(l, Link::Gaussian { noise_var: 1.0 })
    };
    let obj = ObjectiveConfig { mu: 0.0, ..ObjectiveConfig::default() };
    let cfg = TrainConfig {
        init: Init::RandomGaussian { scale: 0.1 },
        max_iters: 20_000,
        ..TrainConfig::default()
    };
    let fit = fit_gpcr(&x, &DMatrix::zeros(n, 1), &spec, &obj, &cfg).unwrap();
    let got = fit.model.marginal_loglik(&fit.model.center(&x).unwrap()).unwrap();
    let want = ppca_closed_form(&x, l);
    assert!(((got - want) / want).abs() < 5e-3, "{got} vs {want}");
    assert!(got <= want + 1e-9 * want.abs());
}

#[test]
fn unsupervised_svae_encoder_stays_on_posterior() {
    let mut r = substream(2, 5);
    let (p, l, n) = (20, 3, 400);
    let truth = FactorModel::centered(LowRankCov::new(
        normal_matrix(&mut r, p, l),
        DVector::from_fn(p, |_, _| r.random_range(0.3..1.5)),
    )
    .unwrap());
    let (z, x) = truth.sample(n, 3).unwrap();
    let y = DMatrix::from_fn(n, 1, |i, _| if z[(i, 0)] > 0.0 { 1.0 } else { 0.0 });
    let obj = ObjectiveConfig { mu: 0.0, ..ObjectiveConfig::default() };
    let cfg = TrainConfig { max_iters: 1500, ..TrainConfig::default() };
    let fit = fit_svae(&x, &y, &FitSpec::new(l, Link::Logistic), &obj, &cfg).unwrap();
    let xc = fit.model.center(&x).unwrap();
    let enc = fit.encoder.means(&xc);
    let post = fit.model.posterior_mean_scores(&xc).unwrap();
    for k in 0..l {
        let a: Vec<f64> = enc.column(k).iter().copied().collect();
        let b: Vec<f64> = post.column(k).iter().copied().collect();
        let c = pearson(&a, &b).unwrap();
        assert!(c >= 0.99, "factor {k}: correlation {c}");
    }
}

#[test]
fn objective_cost_grows_linearly_in_covariates() {
    let time_at = |p: usize| {
        let mut r = substream(p as u64, 6);
        let (n, l) = (200, 5);
        let model = FactorModel::centered(LowRankCov::new(
            normal_matrix(&mut r, p, l),
            DVector::from_element(p, 1.0),
        )
        .unwrap());
        let head = PredictiveHead::new(DMatrix::zeros(l, 1), DVector::zeros(1), Link::Gaussian { noise_var: 1.0 }, first_factor_mask(l)).unwrap();
        let x = normal_matrix(&mut r, n, p);
        let y = DMatrix::zeros(n, 1);
        let obj = ObjectiveConfig::for_dim(p);
        let t = Instant::now();
        for _ in 0..5 {
            gpcr_objective(&model, &head, &x, &y, &obj).unwrap();
        }
        t.elapsed().as_secs_f64()
    };
    let small = time_at(200);
    let large = time_at(1600);
    // Dense p × p algebra would scale by 64 or more.
    assert!(large / small < 24.0, "8x covariates took {:.1}x as long", large / small);
}

fn small_bench_data() -> (DMatrix<f64>, DMatrix<f64>) {
    let data = gpcr::synth::generate(&gpcr::synth::SynthConfig {
        p: 80,
        n: 400,
        block: 10,
        latents: 5,
        ..Default::default()
    })
    .unwrap();
    let y = data.y_matrix();
    (data.x, y)
}

#[test]
fn plain_gradient_ascent_is_monotone() {
    // The logistic objective is a fresh Monte Carlo estimate each step, so
    // monotonicity is checked on the exact gaussian objective for y*.
    let data = gpcr::synth::generate(&gpcr::synth::SynthConfig {
        p: 80,
        n: 400,
        block: 10,
        latents: 5,
        ..Default::default()
    })
    .unwrap();
    let y = DMatrix::from_column_slice(data.y_star.len(), 1, data.y_star.as_slice());
    let obj = ObjectiveConfig::for_dim(data.x.ncols());
    let cfg = TrainConfig {
        momentum: 0.0,
        learning_rate: 1e-4,
        max_iters: 100,
        ..TrainConfig::default()
    };
    let link = Link::Gaussian { noise_var: 0.5 };
    let fit = fit_gpcr(&data.x, &y, &FitSpec::new(3, link), &obj, &cfg).unwrap();
    assert_eq!(fit.trace.len(), 100);
    for w in fit.trace.windows(2) {
        assert!(w[1].objective >= w[0].objective, "iteration {}", w[1].iter);
    }
}

#[test]
fn warm_start_never_ends_below_its_start() {
    let (x, y) = small_bench_data();
    let obj = ObjectiveConfig::for_dim(x.ncols());
    // A step this large oscillates; the returned iterate must still be no
    // worse than the initialization.
    let cfg = TrainConfig {
        learning_rate: 5e-2,
        max_iters: 200,
        ..TrainConfig::default()
    };
    match fit_gpcr(&x, &y, &FitSpec::new(3, Link::Logistic), &obj, &cfg) {
        Ok(fit) => assert!(fit.objective >= fit.trace[0].objective),
        Err(e) => assert_eq!(e.exit_code(), 3, "{e}"),
    }
    let fit = fit_gpcr(&x, &y, &FitSpec::new(3, Link::Logistic), &obj, &TrainConfig { max_iters: 300, ..TrainConfig::default() }).unwrap();
    assert!(fit.objective >= fit.trace[0].objective);
}

#[test]
fn gaussian_gpcr_gap_to_weighted_conditional() {
    use gpcr::objective::weighted_conditional_objective;
    for seed in 0..10u64 {
        let mut r = substream(seed, 9);
        let (p, l, n) = (12, 3, 40);
        let model = FactorModel::centered(LowRankCov::new(
            normal_matrix(&mut r, p, l),
            DVector::from_fn(p, |_, _| r.random_range(0.3..1.5)),
        )
        .unwrap());
        let (z, x) = model.sample(n, seed).unwrap();
        let s = r.random_range(0.2..2.0);
        let beta = DMatrix::from_fn(l, 1, |k, _| if k == 0 { r.random_range(-2.0..2.0) } else { 0.0 });
        let head = PredictiveHead::new(beta.clone(), DVector::from_element(1, 0.3), Link::Gaussian { noise_var: s }, first_factor_mask(l)).unwrap();
        let y = DMatrix::from_fn(n, 1, |i, _| z[(i, 0)] + 0.5 * r.random_range(-1.0..1.0));
        let mu = r.random_range(0.5..20.0);
        let obj = ObjectiveConfig { mu, ..ObjectiveConfig::default() };
        let g = gpcr_objective(&model, &head, &x, &y, &obj).unwrap().0;
        let wc = weighted_conditional_objective(&model, &head, &x, &y, mu).unwrap();

        // Per row: log N(y; m, s+v) − E[log N(y; βᵀz+b, s)] with v = βᵀM⁻¹β.
        let post = model.posterior().unwrap();
        let v = (beta.transpose() * post.cov() * &beta)[(0, 0)];
        let m = post.scores(&x) * &beta;
        let gap: f64 = (0..n)
            .map(|i| {
                let r2 = (y[(i, 0)] - m[(i, 0)] - 0.3).powi(2);
                v / (2.0 * s) - 0.5 * (1.0 + v / s).ln() + r2 * v / (2.0 * s * (s + v))
            })
            .sum::<f64>()
            * mu;
        assert!(wc - g >= 0.0);
        assert!(((wc - g) - gap).abs() <= 1e-8 * wc.abs(), "seed {seed}: {} vs {gap}", wc - g);
    }
}
