use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{step, Batches, TrainConfig, TrainReport};
use crate::embstore::{
    read_dump, read_sidecar, write_dump, write_sidecar, EmbeddingSet, Pooling, SentenceVector,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub vector: Vec<f64>,
    pub label: String,
}

impl From<&SentenceVector> for LabeledVector {
    fn from(v: &SentenceVector) -> Self {
        LabeledVector {
            vector: v.vector.clone(),
            label: v.language.clone(),
        }
    }
}

/// Multinomial logistic regression: `logits = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxModel {
    pub dim: usize,
    /// `dim x labels.len()`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LinearSoftmaxModel {
    pub fn zeros(dim: usize, labels: Vec<String>) -> Self {
        LinearSoftmaxModel {
            dim,
            weights: vec![0.0; dim * labels.len()],
            biases: vec![0.0; labels.len()],
            labels,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::validation(format!(
                "classifier expects dim {}, got {}",
                self.dim,
                x.len()
            )));
        }
        let n_labels = self.labels.len();
        let mut out = self.biases.clone();
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.weights[k * n_labels..(k + 1) * n_labels];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += xk * w);
        }
        Ok(out)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn accuracy(&self, data: &[LabeledVector]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for d in data {
            if predict_lang(self, &d.vector)? == d.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Label with the highest logit; ties go to the earlier label.
pub fn predict_lang<'m>(model: &'m LinearSoftmaxModel, v: &[f64]) -> Result<&'m str> {
    let logits = model.logits(v)?;
    Ok(&model.labels[argmax(&logits)])
}

/// Mean cross-entropy over the examples and its gradient.
pub fn softmax_loss_and_gradient(
    model: &LinearSoftmaxModel,
    xs: &[&[f64]],
    ys: &[usize],
) -> Result<(f64, SoftmaxGradient)> {
    let n_labels = model.labels.len();
    let mut grad = SoftmaxGradient {
        weights: vec![0.0; model.weights.len()],
        biases: vec![0.0; n_labels],
    };
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = model.logits(x)?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - logits[y];
        for (l, e) in exps.iter().enumerate() {
            let delta = e / z - f64::from(u8::from(l == y));
            grad.biases[l] += delta;
            for (k, &xk) in x.iter().enumerate() {
                grad.weights[k * n_labels + l] += delta * xk;
            }
        }
    }
    let n = xs.len().max(1) as f64;
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.biases.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

fn encode(model: &LinearSoftmaxModel, data: &[LabeledVector]) -> Result<Vec<usize>> {
    data.iter()
        .map(|d| {
            model.label_index(&d.label).ok_or_else(|| {
                Error::validation(format!("label `{}` not seen in training", d.label))
            })
        })
        .collect()
}

/// Trains a language classifier. Labels are ordered alphabetically; the
/// returned model is the snapshot with the best validation accuracy.
pub fn train_langid(
    train: &[LabeledVector],
    valid: &[LabeledVector],
    cfg: &TrainConfig,
) -> Result<(LinearSoftmaxModel, TrainReport)> {
    let dim = train
        .first()
        .map(|d| d.vector.len())
        .ok_or_else(|| Error::validation("empty training set"))?;
    if let Some(d) = train.iter().chain(valid).find(|d| d.vector.len() != dim) {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {dim}",
            d.vector.len()
        )));
    }
    let mut labels: Vec<String> = train.iter().map(|d| d.label.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::validation("language ID needs at least two labels"));
    }
    let mut model = LinearSoftmaxModel::zeros(dim, labels);
    let ys = encode(&model, train)?;
    let valid = if valid.is_empty() { train } else { valid };

    let n_w = model.weights.len();
    let mut velocity = vec![0.0; model.parameter_count()];
    let mut batches = Batches::new(train.len(), cfg.batch_size, cfg.seed);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        train_loss: Vec::new(),
        valid_metric: Vec::new(),
    };
    let mut stale = 0usize;
    let all_x: Vec<&[f64]> = train.iter().map(|d| d.vector.as_slice()).collect();

    for epoch in 1..=cfg.max_epochs {
        for batch in batches.epoch() {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| all_x[i]).collect();
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = softmax_loss_and_gradient(&model, &xs, &by)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged in epoch {epoch}")));
            }
            let mut params: Vec<f64> = model.weights.iter().chain(&model.biases).copied().collect();
            let g: Vec<f64> = grad.weights.iter().chain(&grad.biases).copied().collect();
            step(&mut params, &g, &mut velocity, cfg);
            model.weights.copy_from_slice(&params[..n_w]);
            model.biases.copy_from_slice(&params[n_w..]);
        }
        let (loss, _) = softmax_loss_and_gradient(&model, &all_x, &ys)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss diverged in epoch {epoch}")));
        }
        let acc = model.accuracy(valid)?;
        report.epochs_run = epoch;
        report.train_loss.push(loss);
        report.valid_metric.push(acc);
        if acc > best.1 {
            best = (model.clone(), acc, epoch);
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

#[derive(Serialize, Deserialize)]
struct LangIdHeader {
    kind: String,
    model_id: String,
    layer: u32,
    labels: Vec<String>,
    biases: Vec<f64>,
    config: Option<TrainConfig>,
}

/// Weights go in a sentence-vector dump, one record per label column; the
/// sidecar holds labels, biases and the training config.
pub fn save_langid(
    model: &LinearSoftmaxModel,
    config: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    let n_labels = model.labels.len();
    let records = model
        .labels
        .iter()
        .enumerate()
        .map(|(l, label)| {
            let column = (0..model.dim)
                .map(|k| model.weights[k * n_labels + l])
                .collect();
            SentenceVector::new(label.clone(), label.clone(), Pooling::Mean, column)
        })
        .collect();
    write_dump(
        &EmbeddingSet::sentences("langid", 0, model.dim, records),
        path,
    )?;
    write_sidecar(
        path,
        &LangIdHeader {
            kind: "langid".into(),
            model_id: "langid".into(),
            layer: 0,
            labels: model.labels.clone(),
            biases: model.biases.iter().map(|&b| f64::from(b as f32)).collect(),
            config: config.copied(),
        },
    )
}

pub fn load_langid(path: &Path) -> Result<LinearSoftmaxModel> {
    let set = read_dump(path)?;
    let header: LangIdHeader = read_sidecar(path)?
        .ok_or_else(|| Error::Format(format!("{}: missing model sidecar", path.display())))?;
    if header.kind != "langid" {
        return Err(Error::Format(format!(
            "{}: sidecar describes a `{}`, not a language classifier",
            path.display(),
            header.kind
        )));
    }
    let columns = set.sentence_records()?;
    let n_labels = header.labels.len();
    if columns.len() != n_labels || header.biases.len() != n_labels {
        return Err(Error::Corruption(
            "label count disagrees with weights".into(),
        ));
    }
    let mut model = LinearSoftmaxModel::zeros(set.dim, header.labels);
    for (l, col) in columns.iter().enumerate() {
        for k in 0..set.dim {
            model.weights[k * n_labels + l] = col.vector[k];
        }
    }
    model.biases = header.biases;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: Vec<f64>, l: &str) -> LabeledVector {
        LabeledVector {
            vector: v,
            label: l.into(),
        }
    }

    #[test]
    fn bias_only_model() {
        let mut m = LinearSoftmaxModel::zeros(3, vec!["cs".into(), "de".into(), "en".into()]);
        m.biases = vec![0.0, 2.0, 1.0];
        assert_eq!(predict_lang(&m, &[5.0, -3.0, 1.0]).unwrap(), "de");
        m.biases.iter_mut().for_each(|b| *b += 10.0);
        assert_eq!(predict_lang(&m, &[5.0, -3.0, 1.0]).unwrap(), "de");
        assert!(predict_lang(&m, &[1.0]).is_err());
    }

    #[test]
    fn ties_go_to_the_first_label() {
        let m = LinearSoftmaxModel::zeros(2, vec!["a".into(), "b".into()]);
        assert_eq!(predict_lang(&m, &[1.0, 1.0]).unwrap(), "a");
    }

    #[test]
    fn parameter_count_formula() {
        let m = LinearSoftmaxModel::zeros(768, (0..73).map(|i| i.to_string()).collect());
        assert_eq!(m.parameter_count(), 768 * 73 + 73);
    }

    #[test]
    fn separable_labels() {
        let mut data = Vec::new();
        for i in 0..100 {
            let jitter = (i as f64 / 100.0 - 0.5) * 0.2;
            data.push(lv(vec![1.0, jitter, 0.0], "de"));
            data.push(lv(vec![-1.0, 0.0, jitter], "en"));
        }
        let (model, report) = train_langid(&data, &data, &TrainConfig::default()).unwrap();
        assert_eq!(model.accuracy(&data).unwrap(), 1.0);
        assert_eq!(predict_lang(&model, &data[0].vector).unwrap(), "de");
        assert!(report.best_epoch >= 1);
    }

    #[test]
    fn single_label_is_rejected() {
        let data = vec![lv(vec![1.0], "en"), lv(vec![2.0], "en")];
        assert!(matches!(
            train_langid(&data, &data, &TrainConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn divergence_is_a_training_error() {
        let data = vec![lv(vec![1e300], "a"), lv(vec![-1e300], "b")];
        let cfg = TrainConfig {
            learning_rate: 1e10,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_langid(&data, &data, &cfg),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lid.memb");
        let mut m = LinearSoftmaxModel::zeros(2, vec!["de".into(), "en".into()]);
        m.weights = vec![0.5, -0.5, 1.25, 2.0];
        m.biases = vec![0.125, -1.0];
        save_langid(&m, None, &path).unwrap();
        assert_eq!(load_langid(&path).unwrap(), m);
    }
}
