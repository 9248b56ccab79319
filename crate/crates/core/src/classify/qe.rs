//! Quality estimation: regression on HTER and cosine-distance baselines.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_squared_error, pearson, step, Batches, TrainConfig, TrainReport};
use crate::embstore::{
    read_dump, read_sidecar, write_dump, write_sidecar, EmbeddingSet, Pooling, SentenceVector,
};
use crate::error::{Error, Result};
use crate::geometry::{center_vector, cosine_distance, LanguageCentroid, LinearProjection};

pub const HIDDEN_WIDTH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct QeSample {
    pub source_vector: Vec<f64>,
    pub target_vector: Vec<f64>,
    /// Not clipped: TER can exceed 1.
    pub hter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QeInputMode {
    SrcOnly,
    TgtOnly,
    Full,
}

impl QeInputMode {
    pub fn input_dim(self, dim: usize) -> usize {
        match self {
            QeInputMode::Full => 2 * dim,
            _ => dim,
        }
    }

    pub fn features(self, s: &QeSample) -> Vec<f64> {
        match self {
            QeInputMode::SrcOnly => s.source_vector.clone(),
            QeInputMode::TgtOnly => s.target_vector.clone(),
            QeInputMode::Full => s
                .source_vector
                .iter()
                .chain(&s.target_vector)
                .copied()
                .collect(),
        }
    }
}

impl std::str::FromStr for QeInputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "src_only" | "src" => Ok(QeInputMode::SrcOnly),
            "tgt_only" | "tgt" => Ok(QeInputMode::TgtOnly),
            "full" => Ok(QeInputMode::Full),
            other => Err(Error::config(format!("unknown QE input mode `{other}`"))),
        }
    }
}

/// One hidden ReLU layer of [`HIDDEN_WIDTH`] units and a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpRegressor {
    pub dim_in: usize,
    /// `dim_in x HIDDEN_WIDTH`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub input_mode: QeInputMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpRegressor {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dim_in: usize, input_mode: QeInputMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (dim_in + HIDDEN_WIDTH) as f64).sqrt();
        let a2 = (6.0 / (HIDDEN_WIDTH + 1) as f64).sqrt();
        MlpRegressor {
            dim_in,
            w1: (0..dim_in * HIDDEN_WIDTH)
                .map(|_| rng.random_range(-a1..a1))
                .collect(),
            b1: vec![0.0; HIDDEN_WIDTH],
            w2: (0..HIDDEN_WIDTH)
                .map(|_| rng.random_range(-a2..a2))
                .collect(),
            b2: 0.0,
            input_mode,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.b1.clone();
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.w1[k * HIDDEN_WIDTH..(k + 1) * HIDDEN_WIDTH];
            h.iter_mut().zip(row).for_each(|(a, w)| *a += xk * w);
        }
        h
    }

    pub fn predict_features(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim_in {
            return Err(Error::validation(format!(
                "regressor expects {} inputs, got {}",
                self.dim_in,
                x.len()
            )));
        }
        let h = self.hidden(x);
        Ok(self.b2
            + h.iter()
                .zip(&self.w2)
                .map(|(a, w)| a.max(0.0) * w)
                .sum::<f64>())
    }

    pub fn predict(&self, s: &QeSample) -> Result<f64> {
        self.predict_features(&self.input_mode.features(s))
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(HIDDEN_WIDTH);
        let (c, d) = rest.split_at(HIDDEN_WIDTH);
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }
}

impl MlpGradient {
    fn flat(&self) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.w1.len() + 2 * HIDDEN_WIDTH + 1);
        g.extend(&self.w1);
        g.extend(&self.b1);
        g.extend(&self.w2);
        g.push(self.b2);
        g
    }
}

/// Mean squared error over the examples and its gradient.
pub fn mlp_loss_and_gradient(
    model: &MlpRegressor,
    xs: &[&[f64]],
    ys: &[f64],
) -> Result<(f64, MlpGradient)> {
    let mut grad = MlpGradient {
        w1: vec![0.0; model.w1.len()],
        b1: vec![0.0; HIDDEN_WIDTH],
        w2: vec![0.0; HIDDEN_WIDTH],
        b2: 0.0,
    };
    let mut loss = 0.0;
    let n = xs.len().max(1) as f64;
    for (x, &y) in xs.iter().zip(ys) {
        if x.len() != model.dim_in {
            return Err(Error::validation(format!(
                "regressor expects {} inputs, got {}",
                model.dim_in,
                x.len()
            )));
        }
        let pre = model.hidden(x);
        let out = model.b2
            + pre
                .iter()
                .zip(&model.w2)
                .map(|(a, w)| a.max(0.0) * w)
                .sum::<f64>();
        let err = out - y;
        loss += err * err;
        let d_out = 2.0 * err / n;
        grad.b2 += d_out;
        for u in 0..HIDDEN_WIDTH {
            if pre[u] <= 0.0 {
                continue;
            }
            grad.w2[u] += d_out * pre[u];
            let d_pre = d_out * model.w2[u];
            grad.b1[u] += d_pre;
            for (k, &xk) in x.iter().enumerate() {
                grad.w1[k * HIDDEN_WIDTH + u] += d_pre * xk;
            }
        }
    }
    Ok((loss / n, grad))
}

fn dataset(samples: &[QeSample], mode: QeInputMode) -> (Vec<Vec<f64>>, Vec<f64>) {
    samples.iter().map(|s| (mode.features(s), s.hter)).unzip()
}

fn validate_samples(samples: &[QeSample], dim: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.source_vector.len() != dim || s.target_vector.len() != dim {
            return Err(Error::validation(format!("sample {i}: dimension mismatch")));
        }
        let finite = s
            .source_vector
            .iter()
            .chain(&s.target_vector)
            .all(|v| v.is_finite());
        if !finite || !s.hter.is_finite() || s.hter < 0.0 {
            return Err(Error::validation(format!(
                "sample {i}: non-finite vector or invalid HTER {}",
                s.hter
            )));
        }
    }
    Ok(())
}

/// Fits the regressor on HTER; keeps the snapshot with the lowest
/// validation MSE.
pub fn train_qe(
    train: &[QeSample],
    valid: &[QeSample],
    mode: QeInputMode,
    cfg: &TrainConfig,
) -> Result<(MlpRegressor, TrainReport)> {
    let dim = train
        .first()
        .map(|s| s.source_vector.len())
        .ok_or_else(|| Error::validation("empty QE training set"))?;
    if valid.is_empty() {
        return Err(Error::validation("empty QE validation set"));
    }
    validate_samples(train, dim)?;
    validate_samples(valid, dim)?;

    let mut model = MlpRegressor::init(mode.input_dim(dim), mode, cfg.seed);
    let (xs, ys) = dataset(train, mode);
    let (vx, vy) = dataset(valid, mode);
    let all_x: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let valid_x: Vec<&[f64]> = vx.iter().map(Vec::as_slice).collect();

    let mut velocity = vec![0.0; model.parameter_count()];
    let mut batches = Batches::new(train.len(), cfg.batch_size, cfg.seed.wrapping_add(1));
    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        train_loss: Vec::new(),
        valid_metric: Vec::new(),
    };
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        for batch in batches.epoch() {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| all_x[i]).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = mlp_loss_and_gradient(&model, &bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged in epoch {epoch}")));
            }
            let mut params = model.params();
            step(&mut params, &grad.flat(), &mut velocity, cfg);
            model.set_params(&params);
        }
        let (loss, _) = mlp_loss_and_gradient(&model, &all_x, &ys)?;
        let preds = valid_x
            .iter()
            .map(|x| model.predict_features(x))
            .collect::<Result<Vec<_>>>()?;
        let valid_mse = mean_squared_error(&preds, &vy);
        if !loss.is_finite() || !valid_mse.is_finite() {
            return Err(Error::Training(format!("loss diverged in epoch {epoch}")));
        }
        report.epochs_run = epoch;
        report.train_loss.push(loss);
        report.valid_metric.push(valid_mse);
        if valid_mse < best.1 {
            best = (model.clone(), valid_mse, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    report.best_epoch = best.2;
    Ok((best.0, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QeVariant {
    Plain,
    Centered,
    Projected,
}

impl std::str::FromStr for QeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(QeVariant::Plain),
            "centered" => Ok(QeVariant::Centered),
            "projected" => Ok(QeVariant::Projected),
            other => Err(Error::config(format!("unknown QE variant `{other}`"))),
        }
    }
}

/// Centroids for the centered variant, a source-to-target projection for
/// the projected one.
#[derive(Debug, Clone, Default)]
pub struct QeAux<'a> {
    pub source_centroid: Option<&'a LanguageCentroid>,
    pub target_centroid: Option<&'a LanguageCentroid>,
    pub projection: Option<&'a LinearProjection>,
}

/// Cosine distance between source and hypothesis per sample, correlated
/// with HTER.
pub fn qe_cosine_score(samples: &[QeSample], variant: QeVariant, aux: &QeAux<'_>) -> Result<f64> {
    let mut distances = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (src, tgt) = match variant {
            QeVariant::Plain => (s.source_vector.clone(), s.target_vector.clone()),
            QeVariant::Centered => {
                let (sc, tc) = aux
                    .source_centroid
                    .zip(aux.target_centroid)
                    .ok_or_else(|| Error::config("centered QE needs both centroids"))?;
                (
                    center_vector(&s.source_vector, &sc.vector)?,
                    center_vector(&s.target_vector, &tc.vector)?,
                )
            }
            QeVariant::Projected => {
                let p = aux
                    .projection
                    .ok_or_else(|| Error::config("projected QE needs a projection"))?;
                (p.apply(&s.source_vector)?, s.target_vector.clone())
            }
        };
        distances.push(
            cosine_distance(&src, &tgt)
                .map_err(|e| Error::validation(format!("sample {i}: {e}")))?,
        );
    }
    let hter: Vec<f64> = samples.iter().map(|s| s.hter).collect();
    pearson(&distances, &hter)
}

/// Reads a `source_id<TAB>target_id<TAB>hter` file and looks the vectors up
/// in the two sentence-vector lists. A header line starting with
/// `source_id` is skipped.
pub fn load_qe_samples(
    text: &str,
    sources: &[SentenceVector],
    targets: &[SentenceVector],
) -> Result<Vec<QeSample>> {
    let src: HashMap<&str, &SentenceVector> = sources
        .iter()
        .map(|v| (v.sentence_id.as_str(), v))
        .collect();
    let tgt: HashMap<&str, &SentenceVector> = targets
        .iter()
        .map(|v| (v.sentence_id.as_str(), v))
        .collect();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (lineno == 0 && line.starts_with("source_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!(
                "line {}: expected 3 tab-separated columns",
                lineno + 1
            )));
        }
        let hter: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad HTER `{}`", lineno + 1, cols[2])))?;
        let s = src.get(cols[0]).ok_or_else(|| {
            Error::validation(format!(
                "line {}: unknown source id `{}`",
                lineno + 1,
                cols[0]
            ))
        })?;
        let t = tgt.get(cols[1]).ok_or_else(|| {
            Error::validation(format!(
                "line {}: unknown target id `{}`",
                lineno + 1,
                cols[1]
            ))
        })?;
        out.push(QeSample {
            source_vector: s.vector.clone(),
            target_vector: t.vector.clone(),
            hter,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RegressorHeader {
    kind: String,
    model_id: String,
    layer: u32,
    input_mode: QeInputMode,
    activation: String,
    hidden_width: usize,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    config: Option<TrainConfig>,
}

fn round32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x as f32)).collect()
}

/// First-layer weights go in a sentence-vector dump (one record per hidden
/// unit); the remaining parameters live in the sidecar.
pub fn save_regressor(
    model: &MlpRegressor,
    config: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    let records = (0..HIDDEN_WIDTH)
        .map(|u| {
            let col = (0..model.dim_in)
                .map(|k| model.w1[k * HIDDEN_WIDTH + u])
                .collect();
            SentenceVector::new(format!("h{u}"), "xx", Pooling::Mean, col)
        })
        .collect();
    write_dump(
        &EmbeddingSet::sentences("qe", 0, model.dim_in, records),
        path,
    )?;
    write_sidecar(
        path,
        &RegressorHeader {
            kind: "qe_regressor".into(),
            model_id: "qe".into(),
            layer: 0,
            input_mode: model.input_mode,
            activation: "relu".into(),
            hidden_width: HIDDEN_WIDTH,
            b1: round32(&model.b1),
            w2: round32(&model.w2),
            b2: f64::from(model.b2 as f32),
            config: config.copied(),
        },
    )
}

pub fn load_regressor(path: &Path) -> Result<MlpRegressor> {
    let set = read_dump(path)?;
    let h: RegressorHeader = read_sidecar(path)?
        .ok_or_else(|| Error::Format(format!("{}: missing model sidecar", path.display())))?;
    if h.kind != "qe_regressor" || h.hidden_width != HIDDEN_WIDTH {
        return Err(Error::Format(format!(
            "{}: not a QE regressor",
            path.display()
        )));
    }
    let units = set.sentence_records()?;
    if units.len() != HIDDEN_WIDTH || h.b1.len() != HIDDEN_WIDTH || h.w2.len() != HIDDEN_WIDTH {
        return Err(Error::Corruption("hidden layer size mismatch".into()));
    }
    let mut w1 = vec![0.0; set.dim * HIDDEN_WIDTH];
    for (u, unit) in units.iter().enumerate() {
        for k in 0..set.dim {
            w1[k * HIDDEN_WIDTH + u] = unit.vector[k];
        }
    }
    Ok(MlpRegressor {
        dim_in: set.dim,
        w1,
        b1: h.b1,
        w2: h.w2,
        b2: h.b2,
        input_mode: h.input_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(src: Vec<f64>, tgt: Vec<f64>, hter: f64) -> QeSample {
        QeSample {
            source_vector: src,
            target_vector: tgt,
            hter,
        }
    }

    #[test]
    fn input_dims() {
        assert_eq!(QeInputMode::Full.input_dim(768), 1536);
        assert_eq!(QeInputMode::SrcOnly.input_dim(768), 768);
        let m = MlpRegressor::init(768, QeInputMode::SrcOnly, 0);
        assert_eq!(m.parameter_count(), 768 * 256 + 256 + 256 + 1);
        let s = sample(vec![1.0, 2.0], vec![3.0, 4.0], 0.1);
        assert_eq!(QeInputMode::Full.features(&s), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(QeInputMode::TgtOnly.features(&s), vec![3.0, 4.0]);
    }

    #[test]
    fn constant_target_is_learned() {
        let samples: Vec<QeSample> = (0..30)
            .map(|i| {
                let a = i as f64 / 10.0;
                sample(vec![a.sin(), a.cos()], vec![a.cos(), 0.5], 0.42)
            })
            .collect();
        let cfg = TrainConfig {
            max_epochs: 10_000,
            patience: 10_000,
            batch_size: 30,
            momentum: 0.9,
            ..TrainConfig::default()
        };
        let (model, report) = train_qe(&samples, &samples, QeInputMode::Full, &cfg).unwrap();
        for s in &samples {
            let p = model.predict(s).unwrap();
            assert!(
                (p - 0.42).abs() < 1e-3,
                "{p} {:?}",
                report.train_loss.last()
            );
        }
    }

    #[test]
    fn cosine_score_of_self_distance() {
        let samples: Vec<QeSample> = (0..10)
            .map(|i| {
                let a = i as f64 * 0.3;
                let src = vec![1.0, 0.0];
                let tgt = vec![a.cos(), a.sin()];
                let d = cosine_distance(&src, &tgt).unwrap();
                sample(src, tgt, d)
            })
            .collect();
        let r = qe_cosine_score(&samples, QeVariant::Plain, &QeAux::default()).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(matches!(
            qe_cosine_score(&samples, QeVariant::Centered, &QeAux::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tsv_loading() {
        let src = vec![SentenceVector::new("s1", "en", Pooling::Mean, vec![1.0])];
        let tgt = vec![SentenceVector::new("t1", "de", Pooling::Mean, vec![2.0])];
        let got =
            load_qe_samples("source_id\ttarget_id\thter\ns1\tt1\t1.25\n", &src, &tgt).unwrap();
        assert_eq!(got, vec![sample(vec![1.0], vec![2.0], 1.25)]);
        assert!(load_qe_samples("s1\tt9\t0.1\n", &src, &tgt).is_err());
        assert!(load_qe_samples("s1\tt1\n", &src, &tgt).is_err());
    }

    #[test]
    fn regressor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qe.memb");
        let mut m = MlpRegressor::init(3, QeInputMode::Full, 9);
        m.w1.iter_mut()
            .chain(m.w2.iter_mut())
            .for_each(|w| *w = f64::from(*w as f32));
        save_regressor(&m, None, &path).unwrap();
        assert_eq!(load_regressor(&path).unwrap(), m);
    }
}
