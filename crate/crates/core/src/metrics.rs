//! ROC/AUC, Pearson correlation, MSE, and the encoder-versus-posterior
//! discrepancy report.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::head::PredictiveHead;
use crate::model::GaussianPosterior;
use crate::objective::LinearEncoder;

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("scores must be finite"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input("AUC needs both positive and negative labels"));
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC with ties credited ½, via mid-ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Convenience for 0/1 outcome vectors.
pub fn auc_binary(scores: &[f64], y: &[f64]) -> Result<f64> {
    let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
    auc(scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// Descending; the first point is `+∞` (nothing predicted positive).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// Two-column `fpr,tpr` table for plotting.
    pub fn to_table(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for ((t, f), p) in self.thresholds.iter().zip(&self.fpr).zip(&self.tpr) {
            out.push_str(&format!("{t},{f},{p}\n"));
        }
        out
    }
}

/// ROC curve at every distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    let area = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum();
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
        auc: area,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::input("pearson needs two non-empty vectors of equal length"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::input("pearson correlation is undefined for a constant input"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn mse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::input(format!(
            "prediction shape {:?} does not match truth shape {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::input("MSE of an empty matrix is undefined"));
    }
    Ok((pred - truth).norm_squared() / pred.len() as f64)
}

/// How far a fitted encoder has drifted from the generative posterior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub per_factor_corr: Vec<f64>,
    pub auc_encoder: f64,
    pub auc_posterior: f64,
}

impl DiscrepancyReport {
    pub fn supervised_is_minimum(&self, supervised: usize) -> bool {
        let s = self.per_factor_corr[supervised];
        self.per_factor_corr
            .iter()
            .enumerate()
            .all(|(k, &c)| k == supervised || c > s)
    }
}

impl DiscrepancyReport {
    /// `key=value` lines; floats in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let corr: Vec<String> = self.per_factor_corr.iter().map(|c| format!("{c:?}")).collect();
        format!(
            "per_factor_corr={}\nauc_encoder={:?}\nauc_posterior={:?}\n",
            corr.join(","),
            self.auc_encoder,
            self.auc_posterior
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut corr = None;
        let mut enc = None;
        let mut post = None;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("cannot parse \"{v}\" as a number")))
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got \"{line}\"")))?;
            match k.trim() {
                "per_factor_corr" => corr = Some(v.split(',').map(num).collect::<Result<Vec<_>>>()?),
                "auc_encoder" => enc = Some(num(v)?),
                "auc_posterior" => post = Some(num(v)?),
                other => return Err(Error::Parse(format!("unknown key \"{other}\""))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("missing key \"{k}\""));
        Ok(Self {
            per_factor_corr: corr.ok_or_else(|| missing("per_factor_corr"))?,
            auc_encoder: enc.ok_or_else(|| missing("auc_encoder"))?,
            auc_posterior: post.ok_or_else(|| missing("auc_posterior"))?,
        })
    }
}

/// Compare encoder means `A x + b` with posterior means on centered `x`, and
/// the head's AUC on each. `y` holds 0/1 labels.
pub fn discrepancy_report(
    enc: &LinearEncoder,
    post: &GaussianPosterior,
    head: &PredictiveHead,
    x: &DMatrix<f64>,
    y: &[f64],
) -> Result<DiscrepancyReport> {
    let enc_means = enc.means(x);
    let post_means = post.scores(x);
    let per_factor_corr = (0..enc_means.ncols())
        .map(|k| {
            let a: Vec<f64> = enc_means.column(k).iter().copied().collect();
            let b: Vec<f64> = post_means.column(k).iter().copied().collect();
            pearson(&a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    let enc_scores: Vec<f64> = head.linear_predictor(&enc_means).column(0).iter().copied().collect();
    let post_scores: Vec<f64> = head.linear_predictor(&post_means).column(0).iter().copied().collect();
    Ok(DiscrepancyReport {
        per_factor_corr,
        auc_encoder: auc_binary(&enc_scores, y)?,
        auc_posterior: auc_binary(&post_scores, y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn auc_examples() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_area_matches_auc_with_ties() {
        let scores = [0.3, 0.3, 0.1, 0.9, 0.5, 0.5, 0.2];
        let labels = [true, false, false, true, false, true, true];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_relative_eq!(roc.auc, auc(&scores, &labels).unwrap(), epsilon = 1e-15);
        assert!(roc.tpr.windows(2).all(|w| w[1] >= w[0]));
        assert!(roc.fpr.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*roc.tpr.last().unwrap(), 1.0);
    }

    #[test]
    fn pearson_examples() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.9820).abs() < 5e-5);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_text_round_trip() {
        let r = DiscrepancyReport {
            per_factor_corr: vec![0.1 + 0.2, -1.0, 0.999999999999],
            auc_encoder: 0.995,
            auc_posterior: 1.0 / 3.0,
        };
        assert_eq!(DiscrepancyReport::from_text(&r.to_text()).unwrap(), r);
        assert!(DiscrepancyReport::from_text("auc_encoder=1").is_err());
    }

    #[test]
    fn mse_examples() {
        let t = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        assert_eq!(mse(&t.add_scalar(1.0), &t).unwrap(), 1.0);
        assert_eq!(mse(&DMatrix::zeros(1, 2), &t).unwrap(), 5.0);
        assert!(mse(&DMatrix::zeros(2, 1), &t).is_err());
    }
}
