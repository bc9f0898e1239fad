//! Supervised pre-training of the classifier network on demonstrations.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{proportional_minibatch, DemoDataset, PreparedDemos, ProportionalSampler};
use crate::error::{Error, Result};
use crate::network::{build_classifier, output_layer_max_abs, save_model, ModelKind, ModelMeta, NetworkConfig};
use crate::numeric::{
    argmax, clip_global_norm, cross_entropy, ComputeGraph, OutputGrad, ParamSet, RmsPropConfig, RmsPropState, Scalar,
    Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub rmsprop: RmsPropConfig,
    pub l2: f64,
    pub max_grad_norm: f64,
    /// Fraction of episodes held out for accuracy tracking.
    pub holdout: f64,
    /// Iterations between held-out evaluations.
    pub eval_every: usize,
    pub seed: u64,
    /// Where to dump the parameters if the loss stops being finite.
    pub diagnostic_path: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 20_000,
            batch_size: 32,
            rmsprop: RmsPropConfig::default(),
            l2: 1e-4,
            max_grad_norm: 0.5,
            holdout: 0.1,
            eval_every: 1_000,
            seed: 0,
            diagnostic_path: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("iterations, batch_size and eval_every must be positive"));
        }
        if !(self.rmsprop.learning_rate > 0.0) || !(self.l2 >= 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::config("learning rate and gradient clip must be positive, l2 non-negative"));
        }
        if !(0.0..=0.5).contains(&self.holdout) {
            return Err(Error::config(format!("holdout must lie in [0, 0.5], got {}", self.holdout)));
        }
        Ok(())
    }
}

/// Mean cross-entropy over the batch plus `l2 * sum(w^2)` over weight
/// tensors (biases excluded), with gradients for every parameter.
pub fn classifier_loss<T: Scalar>(
    graph: &mut ComputeGraph<T>,
    inputs: &Tensor<T>,
    labels: &[usize],
    l2: f64,
) -> Result<(f64, ParamSet<T>)> {
    let out = graph.forward(inputs)?;
    let n = out.logits.shape()[0];
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for a batch of {n}", labels.len())));
    }
    let k = out.logits.shape()[1];
    let inv_n = T::of(1.0 / n as f64);
    let mut seed = Tensor::zeros(&[n, k]);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let ce = cross_entropy(out.logits.row(i), label)?;
        loss += ce.loss.as_f64();
        for (g, d) in seed.data_mut()[i * k..(i + 1) * k].iter_mut().zip(ce.grad) {
            *g = d * inv_n;
        }
    }
    loss /= n as f64;
    let mut grads = graph.backward(&OutputGrad { logits: seed, value: None })?.params;
    if l2 > 0.0 {
        let twice = T::of(2.0 * l2);
        for ((name, w), (_, g)) in graph.params().iter().zip(grads.iter_mut()) {
            if !name.ends_with(".weight") {
                continue;
            }
            loss += l2 * w.sum_sq();
            for (gi, &wi) in g.data_mut().iter_mut().zip(w.data()) {
                *gi = *gi + twice * wi;
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierAccuracy {
    pub overall: f64,
    /// `None` for classes absent from the evaluated steps.
    pub per_class: Vec<Option<f64>>,
    pub support: Vec<usize>,
}

/// Top-1 accuracy of the classifier on the given demonstration steps.
pub fn evaluate_classifier(graph: &mut ComputeGraph, demos: &PreparedDemos, indices: &[usize]) -> Result<ClassifierAccuracy> {
    if indices.is_empty() {
        return Err(Error::input("no held-out steps to evaluate"));
    }
    let predictions = predict(graph, demos, indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| demos.labels()[i]).collect();
    Ok(accuracy(&predictions, &labels, demos.action_count()))
}

pub fn predict(graph: &mut ComputeGraph, demos: &PreparedDemos, indices: &[usize]) -> Result<Vec<usize>> {
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let (x, _) = demos.batch(chunk);
        let out = graph.forward(&x)?;
        predictions.extend((0..chunk.len()).map(|i| argmax(out.logits.row(i))));
    }
    Ok(predictions)
}

pub fn accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> ClassifierAccuracy {
    let mut hits = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        support[l] += 1;
        hits[l] += (p == l) as usize;
    }
    let total: usize = support.iter().sum();
    ClassifierAccuracy {
        overall: hits.iter().sum::<usize>() as f64 / total.max(1) as f64,
        per_class: hits
            .iter()
            .zip(&support)
            .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
            .collect(),
        support,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: usize,
    /// Mean training loss since the previous point.
    pub loss: f64,
    pub tracked_max: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ParamSet,
    pub network: NetworkConfig,
    /// Running maximum of `|fc2|` over all updates.
    pub tracked_max: f64,
    pub history: Vec<HistoryPoint>,
    pub first_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: ClassifierAccuracy,
    pub heldout_accuracy: Option<ClassifierAccuracy>,
    pub train_steps: usize,
    pub heldout_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub game: String,
    pub iterations: usize,
    pub tracked_max: f64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub train_steps: usize,
    pub heldout_steps: usize,
    pub train_accuracy: ClassifierAccuracy,
    pub heldout_accuracy: Option<ClassifierAccuracy>,
    pub history: Vec<HistoryPoint>,
}

impl PretrainOutcome {
    pub fn report(&self, game: &str, iterations: usize) -> PretrainReport {
        PretrainReport {
            game: game.to_string(),
            iterations,
            tracked_max: self.tracked_max,
            first_loss: self.first_loss,
            final_loss: self.final_loss,
            train_steps: self.train_steps,
            heldout_steps: self.heldout_steps,
            train_accuracy: self.train_accuracy.clone(),
            heldout_accuracy: self.heldout_accuracy.clone(),
            history: self.history.clone(),
        }
    }

    pub fn model_meta(&self, game: &str) -> ModelMeta {
        ModelMeta {
            game: Some(game.to_string()),
            tracked_max: Some(self.tracked_max),
            ..ModelMeta::new(ModelKind::Classifier, self.network.clone())
        }
    }
}

/// Splits the dataset by episode and trains a fresh classifier.
pub fn pretrain_classifier(dataset: &DemoDataset, network: &NetworkConfig, config: &PretrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("demonstration dataset is empty"));
    }
    if network.actions != dataset.action_count() {
        return Err(Error::config(format!(
            "network has {} actions, dataset {}",
            network.actions,
            dataset.action_count()
        )));
    }
    let demos = dataset.prepare(network.stack, network.resolution)?;
    let (train, heldout) = dataset.split_by_episode(config.holdout, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let graph = build_classifier(network, &mut rng)?;
    train_classifier(graph, network, &demos, &train, &heldout, config)
}

/// Training loop over an explicit train/held-out split.
pub fn train_classifier(
    mut graph: ComputeGraph,
    network: &NetworkConfig,
    demos: &PreparedDemos,
    train: &[usize],
    heldout: &[usize],
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if graph.has_value_head() {
        return Err(Error::config("pre-training expects a classifier graph"));
    }
    if graph.input_shape() != demos.input_shape() {
        return Err(Error::config(format!(
            "classifier input {:?} does not match demonstration states {:?}",
            graph.input_shape(),
            demos.input_shape()
        )));
    }
    let sampler = ProportionalSampler::new(demos.labels(), demos.action_count(), train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut optim = RmsPropState::new(config.rmsprop.clone(), graph.params());
    let mut tracked_max = 0.0f64;
    let mut history = Vec::new();
    let mut window = (0.0, 0usize);
    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for it in 1..=config.iterations {
        let (x, y) = proportional_minibatch(demos, &sampler, config.batch_size, &mut rng)?;
        let (loss, mut grads) = classifier_loss(&mut graph, &x, &y, config.l2)?;
        if !loss.is_finite() || !grads.is_finite() {
            if let Some(path) = &config.diagnostic_path {
                let mut meta = ModelMeta::new(ModelKind::Classifier, network.clone());
                meta.note = Some(format!("non-finite loss at iteration {it}"));
                save_model(path, graph.params(), &meta)?;
            }
            return Err(Error::NonFinite(format!("pre-training loss {loss} at iteration {it}")));
        }
        if it == 1 {
            first_loss = loss;
        }
        last_loss = loss;
        window.0 += loss;
        window.1 += 1;
        clip_global_norm(&mut grads, config.max_grad_norm);
        optim.step(graph.params_mut(), &grads)?;
        tracked_max = tracked_max.max(output_layer_max_abs(graph.params()));

        if it % config.eval_every == 0 || it == config.iterations {
            let heldout_accuracy = if heldout.is_empty() {
                None
            } else {
                Some(evaluate_classifier(&mut graph, demos, heldout)?.overall)
            };
            history.push(HistoryPoint {
                iteration: it,
                loss: window.0 / window.1 as f64,
                tracked_max,
                heldout_accuracy,
            });
            tracing::debug!(iteration = it, loss = window.0 / window.1 as f64, ?heldout_accuracy, "pretrain");
            window = (0.0, 0);
        }
    }
    let train_accuracy = evaluate_classifier(&mut graph, demos, train)?;
    let heldout_accuracy = if heldout.is_empty() {
        None
    } else {
        Some(evaluate_classifier(&mut graph, demos, heldout)?)
    };
    Ok(PretrainOutcome {
        params: graph.params().clone(),
        network: network.clone(),
        tracked_max,
        history,
        first_loss,
        final_loss: last_loss,
        train_accuracy,
        heldout_accuracy,
        train_steps: train.len(),
        heldout_steps: heldout.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_identities() {
        let labels = vec![0, 1, 1, 2, 2, 2];
        let perfect = accuracy(&labels, &labels, 3);
        assert_eq!(perfect.overall, 1.0);
        let preds = vec![0, 0, 1, 2, 1, 2];
        let acc = accuracy(&preds, &labels, 4);
        let weighted: f64 = acc
            .per_class
            .iter()
            .zip(&acc.support)
            .map(|(p, &s)| p.unwrap_or(0.0) * s as f64)
            .sum::<f64>()
            / labels.len() as f64;
        assert!((weighted - acc.overall).abs() < 1e-12);
        assert_eq!(acc.per_class[3], None);
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        let bad = PretrainConfig {
            holdout: 0.6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PretrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
