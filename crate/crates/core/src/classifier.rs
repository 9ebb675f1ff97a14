//! Multinomial logistic regression over flattened patches, trained by plain
//! gradient descent on class-balanced mini-batches.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::CellClass;
use crate::patches::{BalancedSampler, PatchDataset, PatchError};

const MAGIC: &[u8; 4] = b"CGSM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set holds only {0}; at least two classes are needed")]
    SingleClass(CellClass),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became {loss} at step {step}; lower the learning rate")]
    Divergence { step: usize, loss: f64 },
    #[error("expected {expected} features, got {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the parameters untouched.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig("steps and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ClassifierError::InvalidConfig(format!(
                "learning rate {} is not a finite non-negative number",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Weights (`k × d`, row-major) and biases of a `k`-class model over `d` features.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub k: usize,
    pub d: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Params {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            w: vec![0.0; k * d],
            b: vec![0.0; k],
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let row = &self.w[c * self.d..(c + 1) * self.d];
                self.b[c] + row.iter().zip(x).map(|(w, &x)| w * x as f64).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f32]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_gradient(&self, xs: &[&[f32]], ys: &[usize]) -> (f64, Params) {
        assert_eq!(xs.len(), ys.len());
        let mut grad = Params::zeros(self.k, self.d);
        let mut loss = 0.0;
        let n = xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            let logits = self.logits(x);
            let p = softmax(&logits);
            loss -= log_softmax_at(&logits, y);
            for c in 0..self.k {
                let delta = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
                grad.b[c] += delta;
                let row = &mut grad.w[c * self.d..(c + 1) * self.d];
                for (g, &xv) in row.iter_mut().zip(x.iter()) {
                    *g += delta * xv as f64;
                }
            }
        }
        (loss / n, grad)
    }

    fn step(&mut self, grad: &Params, lr: f64) {
        for (w, g) in self.w.iter_mut().zip(&grad.w) {
            *w -= lr * g;
        }
        for (b, g) in self.b.iter_mut().zip(&grad.b) {
            *b -= lr * g;
        }
    }
}

/// Probabilities with the max logit subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits[i] - lse
}

/// Full-batch gradient descent; returns the loss before each step.
pub fn gradient_descent(
    params: &mut Params,
    xs: &[&[f32]],
    ys: &[usize],
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>, ClassifierError> {
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = params.loss_and_gradient(xs, ys);
        if !loss.is_finite() {
            return Err(ClassifierError::Divergence { step, loss });
        }
        trace.push(loss);
        params.step(&grad, lr);
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    pub classes: Vec<CellClass>,
    pub channels: Vec<String>,
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: CellClass,
    pub probabilities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    classes: Vec<CellClass>,
    channels: Vec<String>,
    features: usize,
}

impl SoftmaxModel {
    pub fn feature_len(&self) -> usize {
        self.params.d
    }

    pub fn predict(&self, x: &[f32]) -> Result<Prediction, ClassifierError> {
        if x.len() != self.params.d {
            return Err(ClassifierError::FeatureMismatch {
                expected: self.params.d,
                found: x.len(),
            });
        }
        let probabilities = self.params.probabilities(x);
        let best = probabilities
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > probabilities[best] { i } else { best });
        Ok(Prediction {
            class: self.classes[best],
            probabilities,
        })
    }

    pub fn predict_dataset(&self, ds: &PatchDataset) -> Result<Vec<Prediction>, ClassifierError> {
        if ds.channels != self.channels {
            return Err(ClassifierError::Patch(PatchError::ChannelMismatch {
                expected: self.channels.clone(),
                found: ds.channels.clone(),
            }));
        }
        (0..ds.len()).into_par_iter().map(|i| self.predict(ds.features(i))).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ClassifierError> {
        let header = serde_json::to_vec(&ModelHeader {
            format_version: FORMAT_VERSION,
            classes: self.classes.clone(),
            channels: self.channels.clone(),
            features: self.params.d,
        })
        .expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut blob = Vec::with_capacity(4 * (self.params.w.len() + self.params.b.len()));
        for v in self.params.w.iter().chain(&self.params.b) {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ClassifierError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ClassifierError::Format("not a model file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let h: ModelHeader =
            serde_json::from_slice(&header).map_err(|e| ClassifierError::Format(format!("header: {e}")))?;
        if h.format_version != FORMAT_VERSION {
            return Err(ClassifierError::Format(format!("unsupported version {}", h.format_version)));
        }
        let k = h.classes.len();
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        if blob.len() != 4 * k * (h.features + 1) {
            return Err(ClassifierError::Format(format!(
                "weight blob has {} bytes, expected {}",
                blob.len(),
                4 * k * (h.features + 1)
            )));
        }
        let vals: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::Format("non-finite parameter".into()));
        }
        let (w, b) = vals.split_at(k * h.features);
        Ok(Self {
            classes: h.classes,
            channels: h.channels,
            params: Params {
                k,
                d: h.features,
                w: w.to_vec(),
                b: b.to_vec(),
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SoftmaxModel,
    /// Mini-batch loss before each step.
    pub loss_trace: Vec<f64>,
}

/// Trains on the classes present in `ds`, starting from zero parameters.
pub fn train(ds: &PatchDataset, cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let labels = ds.classes();
    let classes: Vec<CellClass> = ds.class_counts().into_keys().collect();
    if classes.len() < 2 {
        return Err(ClassifierError::SingleClass(classes[0]));
    }
    let target: Vec<usize> = labels
        .iter()
        .map(|c| classes.iter().position(|x| x == c).expect("class listed"))
        .collect();
    let mut sampler = BalancedSampler::new(&labels, cfg.seed)?;
    let mut params = Params::zeros(classes.len(), ds.feature_len());
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| sampler.draw()).collect();
        let xs: Vec<&[f32]> = batch.iter().map(|&i| ds.features(i)).collect();
        let ys: Vec<usize> = batch.iter().map(|&i| target[i]).collect();
        let (loss, grad) = params.loss_and_gradient(&xs, &ys);
        if !loss.is_finite() {
            return Err(ClassifierError::Divergence { step, loss });
        }
        if step % 1000 == 0 {
            log::debug!("step {step}: loss {loss:.6}");
        }
        loss_trace.push(loss);
        params.step(&grad, cfg.learning_rate);
    }
    if params.w.iter().chain(&params.b).any(|v| !v.is_finite()) {
        return Err(ClassifierError::Divergence {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome {
        model: SoftmaxModel {
            classes,
            channels: ds.channels.clone(),
            params,
        },
        loss_trace,
    })
}

/// Writes `instance_id,class,prob_<class>...` rows.
pub fn write_predictions<W: Write>(
    w: W,
    classes: &[CellClass],
    rows: impl IntoIterator<Item = (u32, Prediction)>,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["instance_id".to_string(), "class".to_string()];
    header.extend(classes.iter().map(|c| format!("prob_{c}")));
    out.write_record(&header)?;
    for (id, p) in rows {
        let mut rec = vec![id.to_string(), p.class.to_string()];
        rec.extend(p.probabilities.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
