//! Eavesdropper simulation: probe classifiers that try to recover private
//! attributes from privatized representations, plus the empirical-privacy
//! metrics 1−X (demographic attributes) and 1−F (entity presence).
//!
//! The threat model is enforced by types: every probe input is a
//! [`PrivatizedRepresentation`]; nothing in this module accepts documents.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, Corpus, Split};
use crate::dp::PrivacyParams;
use crate::error::{Error, Result};
use crate::model::FeatureExtractor;
use crate::pipeline::{privatize_documents, PrivatizedRepresentation};
use crate::rng::{self, RngStream};
use crate::tensor::{
    affine_forward, relu_forward, softmax, softmax_cross_entropy, softmax_cross_entropy_backward,
    Matrix, ParamSet,
};

pub const DEFAULT_PROBE_HIDDEN: usize = 512;

/// 2-layer MLP probe (affine → ReLU → affine → softmax) targeting one
/// private attribute.
#[derive(Debug, Clone)]
pub struct AttackerProbe {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub target_attribute: String,
    pub params: ParamSet,
}

impl AttackerProbe {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        num_classes: usize,
        target_attribute: &str,
        rng: &mut RngStream,
    ) -> Self {
        let mut params = ParamSet::new();
        params.add("w1", Matrix::glorot(input_dim, hidden, rng));
        params.add("b1", Matrix::zeros(1, hidden));
        params.add("w2", Matrix::glorot(hidden, num_classes, rng));
        params.add("b2", Matrix::zeros(1, num_classes));
        AttackerProbe {
            input_dim,
            hidden,
            num_classes,
            target_attribute: target_attribute.to_string(),
            params,
        }
    }

    fn logits(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let pre = affine_forward(x, self.params.get("w1"), self.params.get("b1"))?;
        let h = relu_forward(&pre);
        let logits = affine_forward(&h, self.params.get("w2"), self.params.get("b2"))?;
        Ok((pre, logits))
    }

    pub fn predict(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "probe expects {} inputs, got {}",
                self.input_dim,
                values.len()
            )));
        }
        let (_, logits) = self.logits(&Matrix::from_row(values))?;
        Ok(softmax(&logits).row(0).to_vec())
    }

    fn train_batch(&mut self, x: &Matrix, labels: &[usize], lr: f64) -> Result<f64> {
        let pre = affine_forward(x, self.params.get("w1"), self.params.get("b1"))?;
        let h = relu_forward(&pre);
        let logits = affine_forward(&h, self.params.get("w2"), self.params.get("b2"))?;
        let (loss, probs) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence("non-finite probe loss".into()));
        }
        let d_logits = softmax_cross_entropy_backward(&probs, labels);
        let (d_h, dw2, db2) =
            crate::tensor::affine_backward(&h, self.params.get("w2"), &d_logits)?;
        let d_pre = crate::tensor::relu_backward(&pre, &d_h);
        let (_, dw1, db1) = crate::tensor::affine_backward(x, self.params.get("w1"), &d_pre)?;
        add_into(self.params.grad_mut("w1"), &dw1);
        add_into(self.params.grad_mut("b1"), &db1);
        add_into(self.params.grad_mut("w2"), &dw2);
        add_into(self.params.grad_mut("b2"), &db2);
        self.params.sgd_step(lr)?;
        Ok(loss)
    }

    fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let (_, logits) = self.logits(x)?;
        let probs = softmax(&logits);
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(r, &y)| argmax(probs.row(*r)) == y)
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

fn add_into(acc: &mut Matrix, delta: &Matrix) {
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

// ── What the eavesdropper observes ──────────────────────────────────────

/// Reserved draw tag for the held-out evaluation draw.
const TEST_DRAW_TAG: u64 = u64::MAX;

/// Source of privatized representations for attacker training. The
/// eavesdropper can observe many privatized outputs, never raw ones.
pub trait RepSource {
    /// Representations for one observation round; `tag` is the epoch index
    /// (or [`TEST_DRAW_TAG`] for the held-out evaluation draw).
    fn draw(&mut self, tag: u64) -> Result<Vec<PrivatizedRepresentation>>;
    fn description(&self) -> &'static str;
}

/// A fixed set of observed representations (e.g. loaded from a file):
/// every epoch sees the same draw.
pub struct FixedReps {
    pub reps: Vec<PrivatizedRepresentation>,
}

impl RepSource for FixedReps {
    fn draw(&mut self, _tag: u64) -> Result<Vec<PrivatizedRepresentation>> {
        Ok(self.reps.clone())
    }

    fn description(&self) -> &'static str {
        "fixed"
    }
}

/// The strongest eavesdropper: fresh privatized outputs of every record each
/// epoch, regenerated through the full DPNR pipeline.
pub struct FreshReps<'a> {
    pub extractor: &'a FeatureExtractor,
    pub corpus: &'a Corpus,
    pub params: PrivacyParams,
    pub master: RngStream,
}

impl RepSource for FreshReps<'_> {
    fn draw(&mut self, tag: u64) -> Result<Vec<PrivatizedRepresentation>> {
        let docs: Vec<_> = self.corpus.documents.iter().collect();
        let epoch_master = self.master.derive("fresh-draw", &[tag]);
        privatize_documents(&docs, self.extractor, &self.params, &epoch_master, None)
    }

    fn description(&self) -> &'static str {
        "fresh-per-epoch"
    }
}

// ── Attacker training ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.1,
            hidden: DEFAULT_PROBE_HIDDEN,
            seed: 0,
        }
    }
}

/// Result of one probe: held-out attack accuracy against the majority
/// baseline, plus per-record test predictions for F1 aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attribute: String,
    pub kind: AttributeKind,
    pub attacker_accuracy: f64,
    pub majority_baseline: f64,
    pub best_dev_accuracy: f64,
    pub best_epoch: usize,
    /// (record_id, predicted value id, true value id) on the test split.
    pub test_predictions: Vec<(String, usize, usize)>,
}

struct JoinedSplit {
    x: Matrix,
    labels: Vec<usize>,
    record_ids: Vec<String>,
}

/// Join representations with attribute labels by record id and partition by
/// the corpus split assignment.
fn join_by_split(
    reps: &[PrivatizedRepresentation],
    corpus: &Corpus,
    attribute: &str,
    split: Split,
) -> Result<JoinedSplit> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut record_ids = Vec::new();
    let doc_index: HashMap<&str, usize> = corpus
        .documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.record_id.as_str(), i))
        .collect();
    for rep in reps {
        let &i = doc_index.get(rep.record_id.as_str()).ok_or_else(|| {
            Error::Parameter(format!(
                "representation {} has no matching corpus record",
                rep.record_id
            ))
        })?;
        if corpus.splits[i] != split {
            continue;
        }
        let doc = &corpus.documents[i];
        let &value = doc.attributes.get(attribute).ok_or_else(|| {
            Error::Parameter(format!(
                "record {} lacks attribute {attribute}",
                rep.record_id
            ))
        })?;
        rows.push(rep.values.clone());
        labels.push(value);
        record_ids.push(rep.record_id.clone());
    }
    Ok(JoinedSplit {
        x: Matrix::from_rows(&rows)?,
        labels,
        record_ids,
    })
}

/// Train a probe for one attribute on the eavesdropper's view and evaluate
/// it on the held-out test split. Checkpoints on best dev accuracy.
pub fn train_attacker(
    source: &mut dyn RepSource,
    corpus: &Corpus,
    attribute: &str,
    config: &AttackConfig,
) -> Result<(AttackerProbe, AttackOutcome)> {
    let spec = corpus
        .attribute(attribute)
        .ok_or_else(|| Error::Parameter(format!("unknown attribute {attribute}")))?;
    let num_classes = spec.values.len();

    let first_draw = source.draw(0)?;
    if first_draw.is_empty() {
        return Err(Error::Parameter("representation set is empty".into()));
    }
    let input_dim = first_draw[0].dim;
    let train0 = join_by_split(&first_draw, corpus, attribute, Split::Train)?;
    {
        let mut seen = train0.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 {
            return Err(Error::DegenerateTask(format!(
                "attribute {attribute} has a single class in the training split"
            )));
        }
    }

    let attr_tag = rng::stream_id_named("attr", attribute);
    let root = RngStream::new(config.seed, 0);
    let mut probe = AttackerProbe::new(
        input_dim,
        config.hidden,
        num_classes,
        attribute,
        &mut root.derive("attack-init", &[attr_tag]),
    );

    let mut best: (f64, ParamSet, usize) = (f64::NEG_INFINITY, probe.params.clone(), 0);
    for epoch in 0..config.epochs {
        let reps = if epoch == 0 {
            first_draw.clone()
        } else {
            source.draw(epoch as u64)?
        };
        let train = join_by_split(&reps, corpus, attribute, Split::Train)?;
        let dev = join_by_split(&reps, corpus, attribute, Split::Dev)?;

        let mut order: Vec<usize> = (0..train.labels.len()).collect();
        root.derive("attack-shuffle", &[attr_tag, epoch as u64])
            .shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| train.x.row(i).to_vec()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            probe.train_batch(&Matrix::from_rows(&rows)?, &labels, config.learning_rate)?;
        }

        let dev_acc = if dev.labels.is_empty() {
            0.0
        } else {
            probe.accuracy(&dev.x, &dev.labels)?
        };
        if dev_acc > best.0 {
            best = (dev_acc, probe.params.clone(), epoch + 1);
        }
    }
    probe.params = best.1;

    // Held-out evaluation draw (fresh noise for the fresh source).
    let test_reps = source.draw(TEST_DRAW_TAG)?;
    let test = join_by_split(&test_reps, corpus, attribute, Split::Test)?;
    if test.labels.is_empty() {
        return Err(Error::Parameter("test split has no representations".into()));
    }
    let (_, logits) = probe.logits(&test.x)?;
    let probs = softmax(&logits);
    let mut test_predictions = Vec::with_capacity(test.labels.len());
    let mut hits = 0usize;
    for (r, &truth) in test.labels.iter().enumerate() {
        let pred = argmax(probs.row(r));
        if pred == truth {
            hits += 1;
        }
        test_predictions.push((test.record_ids[r].clone(), pred, truth));
    }
    let attacker_accuracy = hits as f64 / test.labels.len() as f64;

    // Majority baseline: most frequent training label, scored on test.
    let train_full = join_by_split(&first_draw, corpus, attribute, Split::Train)?;
    let mut counts = vec![0usize; num_classes];
    for &l in &train_full.labels {
        counts[l] += 1;
    }
    let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let majority_baseline =
        test.labels.iter().filter(|&&l| l == majority).count() as f64 / test.labels.len() as f64;

    Ok((
        probe,
        AttackOutcome {
            attribute: attribute.to_string(),
            kind: spec.kind,
            attacker_accuracy,
            majority_baseline,
            best_dev_accuracy: best.0,
            best_epoch: best.2,
            test_predictions,
        },
    ))
}

// ── Empirical privacy metrics ────────────────────────────────────────────

/// 1 − X where X is the mean attacker accuracy over demographic attributes.
pub fn empirical_privacy_demographic(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Parameter(
            "need at least one attacker accuracy".into(),
        ));
    }
    if let Some(&bad) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Parameter(format!("accuracy {bad} outside [0,1]")));
    }
    Ok(1.0 - accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

/// 1 − F where F is the micro-averaged F1 over all (record, entity)
/// presence decisions. With no positive truths and no positive predictions
/// F is defined as 0, which keeps 1 − F conservative.
pub fn empirical_privacy_entities(predictions: &[bool], truths: &[bool]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    Ok(1.0 - micro_f1(predictions, truths))
}

fn micro_f1(predictions: &[bool], truths: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnn = 0usize;
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fnn;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Empirical-privacy report over a set of attribute probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub attributes: Vec<AttackOutcome>,
    /// Mean attacker accuracy over demographic attributes.
    pub x: Option<f64>,
    pub one_minus_x: Option<f64>,
    /// Micro F1 over all entity presence decisions.
    pub f: Option<f64>,
    pub one_minus_f: Option<f64>,
    /// Macro (per-entity mean) F1, reported alongside micro when more than
    /// one entity is present.
    pub f_macro: Option<f64>,
    pub rep_source: String,
    /// Set when any consumed representation used a user-specified mask; the
    /// dropout privacy bound assumes random masks.
    pub user_mask_flagged: bool,
}

/// Train one probe per attribute and aggregate the paper-style metrics.
pub fn run_attack_suite(
    source: &mut dyn RepSource,
    corpus: &Corpus,
    attributes: &[String],
    config: &AttackConfig,
) -> Result<PrivacyReport> {
    if attributes.is_empty() {
        return Err(Error::Parameter("no attributes to attack".into()));
    }
    let probe_draw = source.draw(0)?;
    let user_mask_flagged = probe_draw
        .iter()
        .any(|r| r.mask_source == crate::pipeline::MaskSource::User);

    let mut outcomes = Vec::new();
    for attribute in attributes {
        let (_, outcome) = train_attacker(source, corpus, attribute, config)?;
        outcomes.push(outcome);
    }

    let demo_acc: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.kind == AttributeKind::Demographic)
        .map(|o| o.attacker_accuracy)
        .collect();
    let (x, one_minus_x) = if demo_acc.is_empty() {
        (None, None)
    } else {
        let omx = empirical_privacy_demographic(&demo_acc)?;
        (Some(1.0 - omx), Some(omx))
    };

    let entity_outcomes: Vec<&AttackOutcome> = outcomes
        .iter()
        .filter(|o| o.kind == AttributeKind::EntityPresence)
        .collect();
    let (f, one_minus_f, f_macro) = if entity_outcomes.is_empty() {
        (None, None, None)
    } else {
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let mut per_entity = Vec::new();
        for o in &entity_outcomes {
            let p: Vec<bool> = o.test_predictions.iter().map(|(_, p, _)| *p == 1).collect();
            let t: Vec<bool> = o.test_predictions.iter().map(|(_, _, t)| *t == 1).collect();
            per_entity.push(micro_f1(&p, &t));
            preds.extend(p);
            truths.extend(t);
        }
        let one_minus_f = empirical_privacy_entities(&preds, &truths)?;
        let macro_f1 = if entity_outcomes.len() > 1 {
            Some(per_entity.iter().sum::<f64>() / per_entity.len() as f64)
        } else {
            None
        };
        (Some(1.0 - one_minus_f), Some(one_minus_f), macro_f1)
    };

    Ok(PrivacyReport {
        attributes: outcomes,
        x,
        one_minus_x,
        f,
        one_minus_f,
        f_macro,
        rep_source: source.description().to_string(),
        user_mask_flagged,
    })
}
