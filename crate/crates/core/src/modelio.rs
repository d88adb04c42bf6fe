//! Text model files.
//!
//! ```text
//! format=gpcr-model/1
//! tag=gpcr
//! link=logistic
//! config.mu=440
//! names features 3
//! a
//! b
//! c
//! matrix W 3 2
//! 1.0000000000000000e0 -2.5000000000000000e-1
//! ...
//! end
//! ```
//!
//! Header lines are `key=value` until the first block. Matrices are
//! row-major with 17 significant digits, which round-trips every `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{PcrModel, RidgeModel};
use crate::data::{write_atomic, StandardizerState};
use crate::error::{Error, Result};
use crate::head::{Link, PredictiveHead};
use crate::lowrank::LowRankCov;
use crate::model::FactorModel;
use crate::objective::LinearEncoder;

pub const FORMAT_VERSION: &str = "gpcr-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gpcr,
    Svae,
    Pcr,
    Ridge,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Gpcr => "gpcr",
            ModelKind::Svae => "svae",
            ModelKind::Pcr => "pcr",
            ModelKind::Ridge => "ridge",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpcr" => Ok(ModelKind::Gpcr),
            "svae" => Ok(ModelKind::Svae),
            "pcr" => Ok(ModelKind::Pcr),
            "ridge" => Ok(ModelKind::Ridge),
            other => Err(Error::UnknownTag(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Gpcr {
        model: FactorModel,
        head: PredictiveHead,
    },
    Svae {
        model: FactorModel,
        head: PredictiveHead,
        encoder: LinearEncoder,
    },
    Pcr(PcrModel),
    /// One model per target column.
    Ridge(Vec<RidgeModel>),
}

impl ModelBody {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelBody::Gpcr { .. } => ModelKind::Gpcr,
            ModelBody::Svae { .. } => ModelKind::Svae,
            ModelBody::Pcr(_) => ModelKind::Pcr,
            ModelBody::Ridge(_) => ModelKind::Ridge,
        }
    }

    pub fn link(&self) -> Link {
        match self {
            ModelBody::Gpcr { head, .. } | ModelBody::Svae { head, .. } => head.link(),
            ModelBody::Pcr(m) => m.head.link(),
            ModelBody::Ridge(ms) => ms[0].link,
        }
    }
}

/// Everything needed to reproduce predictions on raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub body: ModelBody,
    pub standardizer: Option<StandardizerState>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Echo of the settings that produced the model.
    pub config: BTreeMap<String, String>,
}

impl ModelArtifact {
    /// Error listing the differences when `names` are not the model's
    /// features in order.
    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names == self.feature_names.as_slice() {
            return Ok(());
        }
        let missing: Vec<&str> = self
            .feature_names
            .iter()
            .filter(|f| !names.contains(f))
            .map(String::as_str)
            .collect();
        let extra: Vec<&str> = names
            .iter()
            .filter(|f| !self.feature_names.contains(f))
            .map(String::as_str)
            .collect();
        let mut msg = String::from("feature names differ from the model's");
        if !missing.is_empty() {
            let _ = write!(msg, "; missing: {}", missing.join(", "));
        }
        if !extra.is_empty() {
            let _ = write!(msg, "; unexpected: {}", extra.join(", "));
        }
        if missing.is_empty() && extra.is_empty() {
            msg.push_str("; same columns in a different order");
        }
        Err(Error::input(msg))
    }

    fn prepare(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.standardizer {
            Some(s) => s.transform(x),
            None => Ok(x.clone()),
        }
    }

    /// Latent scores used for prediction: posterior means (gPCR), encoder
    /// means (SVAE), or component scores (PCR).
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
        let x = self.prepare(x)?;
        Ok(match &self.body {
            ModelBody::Gpcr { model, .. } => Some(model.posterior_mean_scores(&model.center(&x)?)?),
            ModelBody::Svae { model, encoder, .. } => Some(encoder.means(&model.center(&x)?)),
            ModelBody::Pcr(m) => Some(m.scores(&x)),
            ModelBody::Ridge(_) => None,
        })
    }

    /// `N × k` linear predictors (log-odds for the logistic link).
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.body {
            ModelBody::Ridge(ms) => {
                let x = self.prepare(x)?;
                let cols: Vec<DVector<f64>> = ms.iter().map(|m| m.predict(&x)).collect();
                Ok(DMatrix::from_columns(&cols))
            }
            ModelBody::Gpcr { head, .. } | ModelBody::Svae { head, .. } => {
                let z = self.scores(x)?.expect("latent model");
                Ok(head.linear_predictor(&z))
            }
            ModelBody::Pcr(m) => {
                let z = self.scores(x)?.expect("latent model");
                Ok(m.head.linear_predictor(&z))
            }
        }
    }

    /// Predicted mean: probabilities for the logistic link.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let eta = self.linear_predictor(x)?;
        Ok(match self.body.link() {
            Link::Logistic => eta.map(crate::head::sigmoid),
            Link::Gaussian { .. } => eta,
        })
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn push_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    push_matrix(out, name, &DMatrix::from_column_slice(1, v.len(), v.as_slice()));
}

fn push_names(out: &mut String, name: &str, names: &[String]) {
    let _ = writeln!(out, "names {name} {}", names.len());
    for n in names {
        out.push_str(n);
        out.push('\n');
    }
}

fn link_string(link: Link) -> String {
    match link {
        Link::Logistic => "logistic".into(),
        Link::Gaussian { noise_var } => format!("gaussian:{}", fmt_num(noise_var)),
    }
}

fn parse_link(s: &str) -> Result<Link> {
    if s == "logistic" {
        return Ok(Link::Logistic);
    }
    if let Some(v) = s.strip_prefix("gaussian:") {
        return Ok(Link::Gaussian {
            noise_var: parse_num(v)?,
        });
    }
    Err(Error::Parse(format!("unknown link \"{s}\"")))
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("cannot parse \"{s}\" as a number")))
}

fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { '1' } else { '0' }).collect()
}

fn parse_mask(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            _ => Err(Error::Parse(format!("bad mask \"{s}\""))),
        })
        .collect()
}

fn push_head(out: &mut String, prefix: &str, head: &PredictiveHead) {
    push_matrix(out, &format!("{prefix}coef"), head.coef());
    push_vector(out, &format!("{prefix}intercept"), head.intercept());
}

/// Serialize to the text format.
pub fn to_text(a: &ModelArtifact) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format={FORMAT_VERSION}");
    let _ = writeln!(out, "tag={}", a.body.kind().tag());
    let _ = writeln!(out, "link={}", link_string(a.body.link()));
    match &a.body {
        ModelBody::Gpcr { model, head } | ModelBody::Svae { model, head, .. } => {
            let _ = writeln!(out, "isotropic={}", model.is_isotropic());
            let _ = writeln!(out, "mask={}", mask_string(head.mask()));
        }
        ModelBody::Pcr(m) => {
            let _ = writeln!(out, "mask={}", mask_string(m.head.mask()));
            let _ = writeln!(out, "penalty={}", fmt_num(m.penalty));
        }
        ModelBody::Ridge(ms) => {
            let pens: Vec<String> = ms.iter().map(|m| fmt_num(m.penalty)).collect();
            let _ = writeln!(out, "penalty={}", pens.join(","));
        }
    }
    for (k, v) in &a.config {
        let _ = writeln!(out, "config.{k}={}", v.replace('\n', " "));
    }
    push_names(&mut out, "features", &a.feature_names);
    push_names(&mut out, "targets", &a.target_names);
    if let Some(s) = &a.standardizer {
        push_vector(&mut out, "std_means", &s.means);
        push_vector(&mut out, "std_scales", &s.stds);
    }
    match &a.body {
        ModelBody::Gpcr { model, head } => {
            push_matrix(&mut out, "W", model.loadings());
            push_vector(&mut out, "lambda", model.noise());
            push_vector(&mut out, "mean_offset", model.mean_offset());
            push_head(&mut out, "", head);
        }
        ModelBody::Svae { model, head, encoder } => {
            push_matrix(&mut out, "W", model.loadings());
            push_vector(&mut out, "lambda", model.noise());
            push_vector(&mut out, "mean_offset", model.mean_offset());
            push_head(&mut out, "", head);
            push_matrix(&mut out, "enc_A", encoder.a());
            push_vector(&mut out, "enc_b", encoder.intercept());
            push_vector(&mut out, "enc_var", encoder.var());
        }
        ModelBody::Pcr(m) => {
            push_matrix(&mut out, "components", &m.components);
            push_vector(&mut out, "mean_offset", &m.mean_offset);
            push_head(&mut out, "", &m.head);
        }
        ModelBody::Ridge(ms) => {
            let coef = DMatrix::from_columns(&ms.iter().map(|m| m.coef.clone()).collect::<Vec<_>>());
            push_matrix(&mut out, "coef", &coef);
            push_vector(
                &mut out,
                "intercept",
                &DVector::from_iterator(ms.len(), ms.iter().map(|m| m.intercept)),
            );
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_model(path: &Path, a: &ModelArtifact) -> Result<()> {
    write_atomic(path, to_text(a).as_bytes())
}

struct Parsed {
    header: BTreeMap<String, String>,
    matrices: BTreeMap<String, DMatrix<f64>>,
    names: BTreeMap<String, Vec<String>>,
}

impl Parsed {
    fn key(&self, k: &str) -> Result<&str> {
        self.header
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("missing header key \"{k}\"")))
    }

    fn matrix(&mut self, k: &str) -> Result<DMatrix<f64>> {
        self.matrices
            .remove(k)
            .ok_or_else(|| Error::Parse(format!("missing matrix block \"{k}\"")))
    }

    fn vector(&mut self, k: &str) -> Result<DVector<f64>> {
        let m = self.matrix(k)?;
        if m.nrows() != 1 {
            return Err(Error::Parse(format!("block \"{k}\" must have one row")));
        }
        Ok(DVector::from_iterator(m.ncols(), m.iter().copied()))
    }
}

fn parse_dims(parts: &[&str], lineno: usize) -> Result<Vec<usize>> {
    parts
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: bad block size \"{s}\"")))
        })
        .collect()
}

fn parse_text(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    let mut names = BTreeMap::new();
    let mut ended = false;
    let mut first = true;
    while let Some((lineno, line)) = lines.next() {
        if first {
            first = false;
            let version = line
                .strip_prefix("format=")
                .ok_or_else(|| Error::Parse("first line must be format=<version>".into()))?;
            if version != FORMAT_VERSION {
                return Err(Error::UnsupportedVersion(version.to_string()));
            }
            header.insert("format".to_string(), version.to_string());
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["end"] => {
                ended = true;
                break;
            }
            ["matrix", name, dims @ ..] if dims.len() == 2 => {
                let d = parse_dims(dims, lineno)?;
                let (r, c) = (d[0], d[1]);
                let mut vals = Vec::with_capacity(r * c);
                for i in 0..r {
                    let (ln, row) = lines.next().ok_or_else(|| {
                        Error::Parse(format!("truncated file: block \"{name}\" has {i} of {r} rows"))
                    })?;
                    let before = vals.len();
                    for tok in row.split_whitespace() {
                        vals.push(parse_num(tok).map_err(|_| {
                            Error::Parse(format!("line {ln}: cannot parse \"{tok}\" as a number"))
                        })?);
                    }
                    if vals.len() - before != c {
                        return Err(Error::Parse(format!(
                            "line {ln}: block \"{name}\" expects {c} values per row"
                        )));
                    }
                }
                matrices.insert(name.to_string(), DMatrix::from_row_slice(r, c, &vals));
            }
            ["names", name, count] => {
                let n = parse_dims(&[count], lineno)?[0];
                let mut list = Vec::with_capacity(n);
                for i in 0..n {
                    let (_, l) = lines.next().ok_or_else(|| {
                        Error::Parse(format!("truncated file: name list \"{name}\" has {i} of {n} entries"))
                    })?;
                    list.push(l.to_string());
                }
                names.insert(name.to_string(), list);
            }
            _ => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {lineno}: expected key=value")))?;
                header.insert(k.to_string(), v.to_string());
            }
        }
    }
    if first {
        return Err(Error::Parse("empty model file".into()));
    }
    if !ended {
        return Err(Error::Parse("truncated file: missing end marker".into()));
    }
    Ok(Parsed {
        header,
        matrices,
        names,
    })
}

fn generative(p: &mut Parsed, link: Link) -> Result<(FactorModel, PredictiveHead)> {
    let isotropic = p.key("isotropic")? == "true";
    let mask = parse_mask(p.key("mask")?)?;
    let cov = LowRankCov::new(p.matrix("W")?, p.vector("lambda")?)?;
    let model = FactorModel::new(cov, p.vector("mean_offset")?)?.with_isotropic(isotropic);
    let head = PredictiveHead::new(p.matrix("coef")?, p.vector("intercept")?, link, mask)?;
    Ok((model, head))
}

/// Parse the text format.
pub fn from_text(text: &str) -> Result<ModelArtifact> {
    let mut p = parse_text(text)?;
    let kind: ModelKind = p.key("tag")?.parse()?;
    let link = parse_link(p.key("link")?)?;
    let config = p
        .header
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let feature_names = p
        .names
        .remove("features")
        .ok_or_else(|| Error::Parse("missing feature names".into()))?;
    let target_names = p.names.remove("targets").unwrap_or_default();
    let standardizer = if p.matrices.contains_key("std_means") {
        Some(StandardizerState {
            means: p.vector("std_means")?,
            stds: p.vector("std_scales")?,
        })
    } else {
        None
    };
    let body = match kind {
        ModelKind::Gpcr => {
            let (model, head) = generative(&mut p, link)?;
            ModelBody::Gpcr { model, head }
        }
        ModelKind::Svae => {
            let (model, head) = generative(&mut p, link)?;
            let encoder = LinearEncoder::new(p.matrix("enc_A")?, p.vector("enc_b")?, p.vector("enc_var")?)?;
            ModelBody::Svae { model, head, encoder }
        }
        ModelKind::Pcr => {
            let mask = parse_mask(p.key("mask")?)?;
            let penalty = parse_num(p.key("penalty")?)?;
            let components = p.matrix("components")?;
            let mean_offset = p.vector("mean_offset")?;
            let head = PredictiveHead::new(p.matrix("coef")?, p.vector("intercept")?, link, mask)?;
            ModelBody::Pcr(PcrModel {
                components,
                head,
                mean_offset,
                penalty,
            })
        }
        ModelKind::Ridge => {
            let pens: Vec<f64> = p.key("penalty")?.split(',').map(parse_num).collect::<Result<_>>()?;
            let coef = p.matrix("coef")?;
            let intercept = p.vector("intercept")?;
            if coef.ncols() != pens.len() || intercept.len() != pens.len() {
                return Err(Error::Parse("ridge blocks disagree on the target count".into()));
            }
            ModelBody::Ridge(
                (0..pens.len())
                    .map(|k| RidgeModel {
                        coef: coef.column(k).clone_owned(),
                        intercept: intercept[k],
                        penalty: pens[k],
                        link,
                    })
                    .collect(),
            )
        }
    };
    Ok(ModelArtifact {
        body,
        standardizer,
        feature_names,
        target_names,
        config,
    })
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::first_factor_mask;
    use crate::rng;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn gpcr_artifact(p: usize, l: usize) -> ModelArtifact {
        let mut r = rng::seeded(11);
        let w = rng::normal_matrix(&mut r, p, l) / 3.0;
        let lambda = DVector::from_fn(p, |j, _| 0.5 + (j % 7) as f64 / 10.0);
        let model = FactorModel::new(LowRankCov::new(w, lambda).unwrap(), DVector::from_element(p, 0.1)).unwrap();
        let coef = DMatrix::from_fn(l, 1, |k, _| if k == 0 { 1.7 } else { 0.0 });
        let head = PredictiveHead::new(coef, DVector::from_element(1, -0.3), Link::Logistic, first_factor_mask(l)).unwrap();
        ModelArtifact {
            body: ModelBody::Gpcr { model, head },
            standardizer: Some(StandardizerState {
                means: DVector::from_element(p, 1.0 / 3.0),
                stds: DVector::from_element(p, 2.0 / 3.0),
            }),
            feature_names: names("f", p),
            target_names: vec!["y".into()],
            config: [("mu".to_string(), "440".to_string())].into_iter().collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = gpcr_artifact(440, 5);
        let text = to_text(&a);
        let b = from_text(&text).unwrap();
        assert_eq!(a, b);
        let mut r = rng::seeded(12);
        let x = rng::normal_matrix(&mut r, 20, 440);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let a = gpcr_artifact(6, 2);
        save_model(&path, &a).unwrap();
        assert_eq!(load_model(&path).unwrap(), a);
    }

    #[test]
    fn version_tag_and_truncation_errors() {
        let text = to_text(&gpcr_artifact(6, 2));
        let bad = text.replacen(FORMAT_VERSION, "gpcr-model/9", 1);
        assert!(matches!(from_text(&bad), Err(Error::UnsupportedVersion(v)) if v == "gpcr-model/9"));
        let bad = text.replacen("tag=gpcr", "tag=pls", 1);
        let err = from_text(&bad).unwrap_err();
        assert!(err.to_string().contains("pls"));
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_text(cut), Err(Error::Parse(_))));
    }

    #[test]
    fn feature_mismatch_lists_differences() {
        let a = gpcr_artifact(3, 1);
        let err = a
            .check_features(&["f0".into(), "f1".into(), "g9".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing: f2") && err.contains("unexpected: g9"), "{err}");
    }
}
