//! Training for the split model: standard cross-entropy training and robust
//! training that injects deployment-matched Laplace noise into every forward
//! pass (extract → normalize → perturb → classify → update).
//!
//! Both entry points share one deterministic engine, so a robust run at the
//! non-private sentinel with normalization disabled is bit-identical to a
//! standard run under the same seed.

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Document, Split};
use crate::dp::{self, PrivacyParams};
use crate::error::{Error, Result};
use crate::model::{BundleMeta, ClassifierHead, FeatureExtractor, ModelBundle};
use crate::rng::RngStream;
use crate::tensor::{softmax_cross_entropy, softmax_cross_entropy_backward, Matrix};

/// Training configuration. Privacy parameters present means robust training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub privacy: Option<PrivacyParams>,
    pub seed: u64,
    pub embed_dim: usize,
    pub rep_dim: usize,
    /// Normalize representations before perturbation (robust training only).
    /// Disabling this is an ablation that is valid only at the non-private
    /// sentinel; with finite ε the perturbation step rejects unnormalized
    /// input.
    pub normalize: bool,
    /// Apply word dropout at rate μ during robust training. The robust
    /// training procedure does not mask words by itself; this flag exists
    /// for ablations.
    pub train_word_dropout: bool,
    /// Standard dropout on the representation during training, default off.
    pub rep_dropout: f64,
    /// Noise draws averaged per record when evaluating the dev set under
    /// robust training; dev loss is computed with noise because deployment
    /// applies noise.
    pub dev_noise_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.1,
            privacy: None,
            seed: 0,
            embed_dim: crate::model::DEFAULT_EMBED_DIM,
            rep_dim: crate::model::DEFAULT_REP_DIM,
            normalize: true,
            train_word_dropout: false,
            rep_dropout: 0.0,
            dev_noise_draws: 3,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Parameter(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.embed_dim == 0 || self.rep_dim == 0 {
            return Err(Error::Parameter("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rep_dropout) {
            return Err(Error::Parameter(format!(
                "rep_dropout must be in [0,1), got {}",
                self.rep_dropout
            )));
        }
        if self.dev_noise_draws == 0 {
            return Err(Error::Parameter("dev_noise_draws must be at least 1".into()));
        }
        if let Some(p) = &self.privacy {
            p.validate()?;
        }
        Ok(())
    }
}

/// One line of the training metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

/// Instrumentation emitted alongside the trained bundle.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub metrics: Vec<EpochMetrics>,
    /// Epoch (1-based) whose checkpoint was kept; 0 means the initialization.
    pub best_epoch: usize,
    /// Noise vectors drawn during training forward passes.
    pub noise_vectors_train: u64,
    /// Noise vectors drawn during dev-set evaluation.
    pub noise_vectors_dev: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub stats: TrainStats,
}

/// Non-private training (plain cross-entropy on raw representations).
pub fn train_standard(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.privacy.is_some() {
        return Err(Error::Parameter(
            "train_standard requires a config without privacy parameters".into(),
        ));
    }
    run_training(corpus, config, None)
}

/// Robust training: fresh noise on every forward pass, dev checkpoint
/// selected under the same noise distribution the deployed model will see.
pub fn train_robust(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let privacy = config.privacy.ok_or_else(|| {
        Error::Parameter("train_robust requires privacy parameters in the config".into())
    })?;
    privacy.validate()?;
    run_training(corpus, config, Some(privacy))
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

struct ForwardArtifacts {
    /// Input actually consumed by the head (normalized and noised).
    head_input: Matrix,
    /// Normalized rows before noise plus caches, when normalization ran.
    norm: Option<(Matrix, Vec<dp::NormCache>)>,
    /// Inverted-dropout mask when rep_dropout is active.
    dropout_mask: Option<Vec<f64>>,
}

/// extract-output -> head-input, in Algorithm-1 order: (rep dropout) →
/// normalization → perturbation. Returns the number of noise vectors drawn.
fn forward_privately(
    reps: &Matrix,
    privacy: Option<&PrivacyParams>,
    normalize: bool,
    dropout: Option<(f64, &mut RngStream)>,
    noise_rng: &mut RngStream,
) -> Result<(ForwardArtifacts, u64)> {
    let mut head_input = reps.clone();

    let dropout_mask = if let Some((rate, rng)) = dropout {
        let mut mask = vec![0.0; head_input.rows() * head_input.cols()];
        let keep = 1.0 - rate;
        for m in mask.iter_mut() {
            *m = if rng.uniform() < keep { 1.0 / keep } else { 0.0 };
        }
        for (v, m) in head_input.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    } else {
        None
    };

    let norm = if normalize {
        let mut caches = Vec::with_capacity(head_input.rows());
        for r in 0..head_input.rows() {
            let (y, cache) = dp::normalize_minmax_cached(head_input.row(r))?;
            head_input.row_mut(r).copy_from_slice(&y);
            caches.push(cache);
        }
        Some((head_input.clone(), caches))
    } else {
        None
    };

    let mut drawn = 0;
    if let Some(params) = privacy {
        if params.scale > 0.0 {
            for r in 0..head_input.rows() {
                let noised = dp::perturb(head_input.row(r), params, noise_rng)?;
                head_input.row_mut(r).copy_from_slice(&noised);
                drawn += 1;
            }
        }
    }

    Ok((
        ForwardArtifacts {
            head_input,
            norm,
            dropout_mask,
        },
        drawn,
    ))
}

/// Undo the private forward for gradients: noise addition is the identity,
/// normalization uses its cached argmin/argmax, dropout reapplies its mask.
fn backward_privately(artifacts: &ForwardArtifacts, d_head_input: Matrix) -> Matrix {
    let mut d = d_head_input;
    if let Some((norm_y, caches)) = &artifacts.norm {
        for r in 0..d.rows() {
            let dx = dp::normalize_backward(&caches[r], norm_y.row(r), d.row(r));
            d.row_mut(r).copy_from_slice(&dx);
        }
    }
    if let Some(mask) = &artifacts.dropout_mask {
        for (v, m) in d.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    d
}

fn run_training(
    corpus: &Corpus,
    config: &TrainConfig,
    privacy: Option<PrivacyParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let robust = privacy.is_some();
    let normalize = robust && config.normalize;

    let root = RngStream::new(config.seed, 0);
    let mut extractor = FeatureExtractor::new(
        corpus.vocab_size(),
        config.embed_dim,
        config.rep_dim,
        &mut root.derive("init-extractor", &[]),
    );
    let mut head = ClassifierHead::new(
        config.rep_dim,
        corpus.num_classes(),
        &mut root.derive("init-head", &[]),
    );

    let train_idx = corpus.split_indices(Split::Train);
    let dev_idx = corpus.split_indices(Split::Dev);
    let mut stats = TrainStats::default();
    let mut best: (f64, FeatureExtractor, ClassifierHead, usize) =
        (f64::INFINITY, extractor.clone(), head.clone(), 0);

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        root.derive("shuffle", &[epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&i| corpus.documents[i].label).collect();

            // Optional ablation: word dropout inside the training loop.
            let masked_docs: Option<Vec<Document>> =
                if robust && config.train_word_dropout {
                    let params = privacy.as_ref().unwrap();
                    let mut mask_rng =
                        root.derive("train-word-dropout", &[epoch as u64, batch_no as u64]);
                    Some(
                        chunk
                            .iter()
                            .map(|&i| {
                                dp::word_dropout(&corpus.documents[i], params.mu, &mut mask_rng, None)
                            })
                            .collect::<Result<_>>()?,
                    )
                } else {
                    None
                };
            let docs: Vec<&Document> = match &masked_docs {
                Some(owned) => owned.iter().collect(),
                None => chunk.iter().map(|&i| &corpus.documents[i]).collect(),
            };

            let (reps, cache) = extractor.extract_batch(&docs)?;
            let mut dropout_rng = root.derive("rep-dropout", &[epoch as u64, batch_no as u64]);
            let dropout = if config.rep_dropout > 0.0 {
                Some((config.rep_dropout, &mut dropout_rng))
            } else {
                None
            };
            let mut noise_rng = root.derive("train-noise", &[epoch as u64, batch_no as u64]);
            let (artifacts, drawn) =
                forward_privately(&reps, privacy.as_ref(), normalize, dropout, &mut noise_rng)?;
            stats.noise_vectors_train += drawn;

            let logits = head.logits(&artifacts.head_input)?;
            let (loss, probs) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {}, batch {batch_no}",
                    epoch + 1
                )));
            }
            loss_sum += loss * labels.len() as f64;

            let d_logits = softmax_cross_entropy_backward(&probs, &labels);
            let d_head_input = head.backward(&artifacts.head_input, &d_logits)?;
            let d_reps = backward_privately(&artifacts, d_head_input);
            extractor.backward_batch(&cache, &d_reps)?;
            extractor
                .params
                .sgd_step(config.learning_rate)
                .map_err(|e| divergence_at(e, epoch + 1, batch_no))?;
            head.params
                .sgd_step(config.learning_rate)
                .map_err(|e| divergence_at(e, epoch + 1, batch_no))?;
        }

        let (dev_loss, dev_accuracy) = evaluate_dev(
            &extractor,
            &head,
            corpus,
            &dev_idx,
            privacy.as_ref(),
            normalize,
            config.dev_noise_draws,
            &root,
            epoch,
            &mut stats,
        )?;
        stats.metrics.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / train_idx.len().max(1) as f64,
            dev_loss,
            dev_accuracy,
        });
        if dev_loss < best.0 {
            best = (dev_loss, extractor.clone(), head.clone(), epoch + 1);
        }
    }

    stats.best_epoch = best.3;
    let bundle = ModelBundle {
        extractor: best.1,
        head: best.2,
        training_params: privacy.unwrap_or_else(PrivacyParams::non_private),
        meta: BundleMeta {
            seed: config.seed,
            epochs: config.epochs,
            dataset_id: corpus.dataset_id.clone(),
            classes: corpus.classes.clone(),
            robust,
            normalize,
        },
    };
    Ok(TrainOutcome { bundle, stats })
}

fn divergence_at(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence(msg) => {
            Error::Divergence(format!("{msg} at epoch {epoch}, batch {batch}"))
        }
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_dev(
    extractor: &FeatureExtractor,
    head: &ClassifierHead,
    corpus: &Corpus,
    dev_idx: &[usize],
    privacy: Option<&PrivacyParams>,
    normalize: bool,
    dev_noise_draws: usize,
    root: &RngStream,
    epoch: usize,
    stats: &mut TrainStats,
) -> Result<(f64, f64)> {
    if dev_idx.is_empty() {
        return Ok((f64::INFINITY, 0.0));
    }
    let docs: Vec<&Document> = dev_idx.iter().map(|&i| &corpus.documents[i]).collect();
    let labels: Vec<usize> = dev_idx.iter().map(|&i| corpus.documents[i].label).collect();
    let (reps, _) = extractor.extract_batch(&docs)?;

    let mut base = reps;
    if normalize {
        for r in 0..base.rows() {
            let y = dp::normalize_minmax(base.row(r))?;
            base.row_mut(r).copy_from_slice(&y);
        }
    }

    let noisy = privacy.map(|p| p.scale > 0.0).unwrap_or(false);
    let draws = if noisy { dev_noise_draws } else { 1 };
    let mut loss_acc = 0.0;
    let mut hit_acc = 0.0;
    for draw in 0..draws {
        let mut input = base.clone();
        if noisy {
            let params = privacy.unwrap();
            let mut rng = root.derive("dev-noise", &[epoch as u64, draw as u64]);
            for r in 0..input.rows() {
                let noised = dp::perturb(input.row(r), params, &mut rng)?;
                input.row_mut(r).copy_from_slice(&noised);
                stats.noise_vectors_dev += 1;
            }
        }
        let logits = head.logits(&input)?;
        let (loss, probs) = softmax_cross_entropy(&logits, &labels)?;
        loss_acc += loss;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(r, &y)| argmax(probs.row(*r)) == y)
            .count();
        hit_acc += hits as f64 / labels.len() as f64;
    }
    Ok((loss_acc / draws as f64, hit_acc / draws as f64))
}

/// Accuracy of a trained bundle on the given documents under its own clean
/// inference pipeline (normalize for robust bundles, raw otherwise).
pub fn evaluate_clean(bundle: &ModelBundle, corpus: &Corpus, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty index set".into()));
    }
    let mut hits = 0usize;
    for &i in indices {
        let doc = &corpus.documents[i];
        let mut rep = bundle.extractor.extract(doc)?;
        if bundle.meta.normalize {
            rep = dp::normalize_minmax(&rep)?;
        }
        let probs = bundle.head.classify(&rep)?;
        if argmax(&probs) == doc.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}
