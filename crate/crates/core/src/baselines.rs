//! Comparison models: principal component regression, ridge regression, and
//! L2-penalized logistic regression, with k-fold penalty selection.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::head::{log_sigmoid, sigmoid, Link, PredictiveHead};
use crate::rng;

/// Default penalty grid: `1e-4, 1e-3, …, 1e4`.
pub fn default_penalty_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>, link: Link) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::input(format!("{} rows but {} outcomes", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::input("no observations"));
    }
    crate::head::check_outcome(link, y.as_slice())
}

/// Linear model on the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub coef: DVector<f64>,
    pub intercept: f64,
    pub penalty: f64,
    pub link: Link,
}

impl RidgeModel {
    /// Linear predictor (log-odds for the logistic link).
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.coef).add_scalar(self.intercept)
    }
}

/// Ridge (gaussian link) or L2-logistic (logistic link) regression. The
/// intercept is never penalized.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, penalty: f64, link: Link) -> Result<RidgeModel> {
    if !(penalty >= 0.0 && penalty.is_finite()) {
        return Err(Error::input("penalty must be finite and >= 0"));
    }
    check_xy(x, y, link)?;
    let (n, p) = x.shape();
    match link {
        Link::Gaussian { .. } => {
            if penalty == 0.0 && p >= n {
                return Err(Error::input(format!(
                    "normal equations are singular with p = {p} >= N = {n}; use a nonzero penalty"
                )));
            }
            let mean = column_means(x);
            let xc = centered(x, &mean);
            let ybar = y.mean();
            let yc = y.add_scalar(-ybar);
            let mut gram = xc.tr_mul(&xc);
            for j in 0..p {
                gram[(j, j)] += penalty;
            }
            let rhs = xc.tr_mul(&yc);
            let chol = Cholesky::new(gram).ok_or_else(|| {
                Error::input("normal equations are singular; use a nonzero penalty")
            })?;
            let coef = chol.solve(&rhs);
            let intercept = ybar - mean.dot(&coef);
            Ok(RidgeModel {
                coef,
                intercept,
                penalty,
                link,
            })
        }
        Link::Logistic => {
            let (coef, intercept) = newton_logistic(x, y, penalty)?;
            Ok(RidgeModel {
                coef,
                intercept,
                penalty,
                link,
            })
        }
    }
}

/// Penalized log-likelihood `Σ log σ(sᵢ ηᵢ) − ½ λ ‖β‖²`.
pub fn logistic_objective(x: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, intercept: f64, penalty: f64) -> f64 {
    let eta = (x * coef).add_scalar(intercept);
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &t)| log_sigmoid((2.0 * t - 1.0) * e))
        .sum::<f64>()
        - 0.5 * penalty * coef.norm_squared()
}

/// Newton–Raphson with step halving; stops when the step norm drops below
/// `1e-8`.
pub fn newton_logistic(x: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> Result<(DVector<f64>, f64)> {
    let (n, p) = x.shape();
    // Augmented design [1, X]; parameter 0 is the intercept.
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.columns_mut(1, p).copy_from(x);
    let mut theta = DVector::zeros(p + 1);
    let objective = |t: &DVector<f64>| {
        let coef = t.rows(1, p).clone_owned();
        logistic_objective(x, y, &coef, t[0], penalty)
    };
    let mut current = objective(&theta);
    for _ in 0..200 {
        let eta = &design * &theta;
        let prob = eta.map(sigmoid);
        let mut grad = design.tr_mul(&(y - &prob));
        let weights = prob.map(|q| q * (1.0 - q));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let mut hess = design.tr_mul(&weighted);
        for j in 1..=p {
            hess[(j, j)] += penalty;
            grad[j] -= penalty * theta[j];
        }
        // Keeps the intercept solvable on separable data with λ = 0.
        hess[(0, 0)] += 1e-12;
        let chol = Cholesky::new(hess).ok_or_else(|| {
            Error::numeric("logistic Hessian is singular; use a nonzero penalty")
        })?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut next = &theta + &step;
        let mut value = objective(&next);
        while value < current && scale > 1e-10 {
            scale *= 0.5;
            next = &theta + &step * scale;
            value = objective(&next);
        }
        let moved = step.norm() * scale;
        theta = next;
        current = value;
        if !current.is_finite() {
            return Err(Error::numeric("logistic regression diverged"));
        }
        if moved < 1e-8 {
            break;
        }
    }
    Ok((theta.rows(1, p).clone_owned(), theta[0]))
}

/// Principal component regression.
#[derive(Debug, Clone, PartialEq)]
pub struct PcrModel {
    /// `p × L`, orthonormal columns, each column's largest-magnitude entry
    /// positive.
    pub components: DMatrix<f64>,
    pub head: PredictiveHead,
    pub mean_offset: DVector<f64>,
    pub penalty: f64,
}

impl PcrModel {
    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        centered(x, &self.mean_offset) * &self.components
    }

    /// Linear predictor of the head for each row of raw `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.head.linear_predictor(&self.scores(x))
    }

    /// Projection composed with the head coefficients: the implied
    /// per-covariate coefficients (first target).
    pub fn covariate_coefficients(&self) -> DVector<f64> {
        &self.components * self.head.coef().column(0)
    }
}

/// Top-`latents` right singular vectors of centered `x`, sign-normalized.
pub fn principal_components(x: &DMatrix<f64>, latents: usize) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if latents == 0 || latents > p.min(n) {
        return Err(Error::input(format!(
            "component count {latents} must lie in 1..={}",
            p.min(n)
        )));
    }
    let xc = centered(x, &column_means(x));
    let svd = SVD::new(xc, false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::numeric("SVD did not produce right singular vectors"))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let tol = sv.max() * (n.max(p) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if latents > rank {
        return Err(Error::input(format!(
            "requested {latents} components but the centered data have rank {rank}"
        )));
    }
    let mut comps = DMatrix::zeros(p, latents);
    for (k, &idx) in order.iter().take(latents).enumerate() {
        let mut col = vt.row(idx).transpose();
        let lead = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        if lead < 0.0 {
            col = -col;
        }
        comps.set_column(k, &col);
    }
    Ok(comps)
}

pub fn fit_pcr(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    latents: usize,
    link: Link,
    penalty: f64,
) -> Result<PcrModel> {
    fit_pcr_targets(x, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()), latents, link, penalty)
}

/// PCR with one regression per column of `y` on shared components.
pub fn fit_pcr_targets(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    latents: usize,
    link: Link,
    penalty: f64,
) -> Result<PcrModel> {
    if y.ncols() == 0 {
        return Err(Error::input("at least one outcome column is required"));
    }
    if x.nrows() <= latents {
        return Err(Error::input("PCR needs more observations than components"));
    }
    let components = principal_components(x, latents)?;
    let mean_offset = column_means(x);
    let scores = centered(x, &mean_offset) * &components;
    let mut coef = DMatrix::zeros(latents, y.ncols());
    let mut intercept = DVector::zeros(y.ncols());
    for k in 0..y.ncols() {
        let yk = y.column(k).clone_owned();
        check_xy(x, &yk, link)?;
        let fit = fit_ridge(&scores, &yk, penalty, link)?;
        coef.set_column(k, &fit.coef);
        intercept[k] = fit.intercept;
    }
    let head = PredictiveHead::new(coef, intercept, link, vec![true; latents])?;
    Ok(PcrModel {
        components,
        head,
        mean_offset,
        penalty,
    })
}

/// Fold assignment: stratified by label when `strata` is given.
pub fn kfold_assignment(n: usize, k: usize, strata: Option<&[bool]>, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(Error::input(format!("fold count {k} must lie in 2..={n}")));
    }
    let mut r = rng::seeded(seed);
    let mut fold = vec![0; n];
    let groups: Vec<Vec<usize>> = match strata {
        Some(s) => {
            let pos: Vec<usize> = (0..n).filter(|&i| s[i]).collect();
            let neg: Vec<usize> = (0..n).filter(|&i| !s[i]).collect();
            vec![pos, neg]
        }
        None => vec![(0..n).collect()],
    };
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut r);
        for i in g {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows.iter())
}

/// Mean held-out score per penalty (higher is better: negative MSE for the
/// gaussian link, mean log-likelihood for the logistic link). `fit` maps
/// (train x, train y, penalty) to a predictor of the linear predictor.
pub fn cross_validate<F, P>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    link: Link,
    grid: &[f64],
    k: usize,
    seed: u64,
    mut fit: F,
) -> Result<CvResult>
where
    F: FnMut(&DMatrix<f64>, &DVector<f64>, f64) -> Result<P>,
    P: Fn(&DMatrix<f64>) -> DVector<f64>,
{
    if grid.is_empty() {
        return Err(Error::input("penalty grid is empty"));
    }
    check_xy(x, y, link)?;
    let n = x.nrows();
    let strata: Option<Vec<bool>> =
        matches!(link, Link::Logistic).then(|| y.iter().map(|&v| v > 0.5).collect());
    let folds = kfold_assignment(n, k, strata.as_deref(), seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    for &penalty in grid {
        let mut total = 0.0;
        for f in 0..k {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let xtr = select_rows(x, &train);
            let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let predictor = fit(&xtr, &ytr, penalty)?;
            let eta = predictor(&select_rows(x, &test));
            let fold_score: f64 = test
                .iter()
                .zip(eta.iter())
                .map(|(&i, &e)| match link {
                    Link::Gaussian { .. } => -(y[i] - e).powi(2),
                    Link::Logistic => log_sigmoid((2.0 * y[i] - 1.0) * e),
                })
                .sum();
            total += fold_score;
        }
        scores.push(total / n as f64);
    }
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    Ok(CvResult {
        grid: grid.to_vec(),
        scores,
        best_penalty: grid[best],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub best_penalty: f64,
}

/// Ridge / L2-logistic with the penalty chosen by k-fold CV.
pub fn fit_ridge_cv(x: &DMatrix<f64>, y: &DVector<f64>, link: Link, grid: &[f64], k: usize, seed: u64) -> Result<RidgeModel> {
    let cv = cross_validate(x, y, link, grid, k, seed, |xt, yt, pen| {
        let m = fit_ridge(xt, yt, pen, link)?;
        Ok(move |xs: &DMatrix<f64>| m.predict(xs))
    })?;
    fit_ridge(x, y, cv.best_penalty, link)
}

/// PCR with the head penalty chosen by k-fold CV.
pub fn fit_pcr_cv(x: &DMatrix<f64>, y: &DVector<f64>, latents: usize, link: Link, grid: &[f64], k: usize, seed: u64) -> Result<PcrModel> {
    let cv = cross_validate(x, y, link, grid, k, seed, |xt, yt, pen| {
        let m = fit_pcr(xt, yt, latents, link, pen)?;
        Ok(move |xs: &DMatrix<f64>| m.predict(xs).column(0).clone_owned())
    })?;
    fit_pcr(x, y, latents, link, cv.best_penalty)
}
