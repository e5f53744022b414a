use crate::data::LocalDataset;
use crate::error::{ensure_len, invalid, Result};

use super::model::{argmax, loss_and_grad, Arch, Loss, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
    Unlabeled,
}

/// Features plus targets in the form the trainer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlData {
    pub features: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl FlData {
    pub fn new(features: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        match &targets {
            Targets::Classes(l) => ensure_len(features.len(), l.len())?,
            Targets::Values(v) => ensure_len(features.len(), v.len())?,
            Targets::Unlabeled => {}
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let features = idx.iter().map(|&i| self.features[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Classes(l) => Targets::Classes(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
            Targets::Unlabeled => Targets::Unlabeled,
        };
        Self::new(features, targets)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(l) => Some(l),
            _ => None,
        }
    }
}

impl From<&LocalDataset> for FlData {
    fn from(ds: &LocalDataset) -> Self {
        let targets = ds
            .labels()
            .map_or(Targets::Unlabeled, |l| Targets::Classes(l.to_vec()));
        Self {
            features: ds.features().to_vec(),
            targets,
        }
    }
}

pub fn accuracy(model: &ModelParams, data: &FlData) -> Result<f64> {
    let labels = data
        .labels()
        .ok_or_else(|| invalid("accuracy needs class labels"))?;
    if labels.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    let hits = data
        .features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn mse(model: &ModelParams, data: &FlData) -> Result<f64> {
    let Targets::Values(values) = &data.targets else {
        return Err(invalid("mse needs real-valued targets"));
    };
    if values.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    Ok(data
        .features
        .iter()
        .zip(values)
        .map(|(x, y)| (model.output(x)[0] - y).powi(2))
        .sum::<f64>()
        / values.len() as f64)
}

pub const LINEAR_EVAL_EPOCHS: usize = 200;
pub const LINEAR_EVAL_LR: f64 = 0.1;

/// Fits a softmax head on frozen encoder embeddings of `train` with
/// full-batch gradient descent and returns its accuracy on `test`.
pub fn linear_eval(encoder: &ModelParams, train: &FlData, test: &FlData) -> Result<f64> {
    let Arch::Encoder { edim, .. } = encoder.arch() else {
        return Err(invalid("linear evaluation needs an encoder"));
    };
    let (Some(train_y), Some(test_y)) = (train.labels(), test.labels()) else {
        return Err(invalid("linear evaluation needs labels"));
    };
    let mut distinct = train_y.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(invalid("linear evaluation needs at least two classes"));
    }
    let classes = train_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let embed =
        |d: &FlData| -> Vec<Vec<f64>> { d.features.iter().map(|x| encoder.output(x)).collect() };
    let train_e = embed(train);
    let mut head = ModelParams::zeros(Arch::Softmax {
        input: edim,
        outputs: classes,
    })?;
    for _ in 0..LINEAR_EVAL_EPOCHS {
        let (_, g) = loss_and_grad(&head, &train_e, &Loss::CrossEntropy { labels: train_y })?;
        head = head.with_weights(
            head.weights()
                .iter()
                .zip(&g)
                .map(|(w, g)| w - LINEAR_EVAL_LR * g)
                .collect(),
        )?;
    }
    let test_e = embed(test);
    if test_e.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    let hits = test_e
        .iter()
        .zip(test_y)
        .filter(|(e, &y)| argmax(&head.output(e)) == y)
        .count();
    Ok(hits as f64 / test_e.len() as f64)
}
