//! The split model: a client-side feature extractor (embedding → masked
//! mean pooling → affine → ReLU) and a server-side classifier head
//! (affine → softmax). The representation boundary between them is where
//! privatization happens.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Document, MASK_ID};
use crate::dp::PrivacyParams;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{
    affine_backward, affine_forward, relu_backward, relu_forward, softmax, Matrix, ParamSet,
};

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const DEFAULT_REP_DIM: usize = 64;

/// Client-side feature extractor f. Emits a `rep_dim`-dimensional raw
/// (pre-normalization) representation for any input length.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub rep_dim: usize,
    pub params: ParamSet,
}

/// Forward cache for the extractor backward pass.
pub struct ExtractCache {
    /// Non-MASK token ids per document, in canonical (sorted) order.
    token_lists: Vec<Vec<usize>>,
    pooled: Matrix,
    preact: Matrix,
}

impl FeatureExtractor {
    pub fn new(vocab_size: usize, embed_dim: usize, rep_dim: usize, rng: &mut RngStream) -> Self {
        let mut params = ParamSet::new();
        let mut embedding = Matrix::glorot(vocab_size, embed_dim, rng);
        // The reserved MASK embedding is the zero vector; pooling skips it,
        // so no gradient ever reaches this row and it stays zero.
        embedding.row_mut(MASK_ID).fill(0.0);
        params.add("embedding", embedding);
        params.add("w1", Matrix::glorot(embed_dim, rep_dim, rng));
        params.add("b1", Matrix::zeros(1, rep_dim));
        FeatureExtractor {
            vocab_size,
            embed_dim,
            rep_dim,
            params,
        }
    }

    /// Mean-pool the non-MASK token embeddings of one document.
    ///
    /// Tokens are accumulated in sorted order so the result is bit-identical
    /// under permutation of the input. A document that is empty after
    /// masking pools to the zero vector.
    fn pool(&self, doc: &Document) -> Result<(Vec<usize>, Vec<f64>)> {
        let embedding = self.params.get("embedding");
        let mut ids: Vec<usize> = doc
            .tokens
            .iter()
            .copied()
            .filter(|&t| t != MASK_ID)
            .collect();
        ids.sort_unstable();
        let mut pooled = vec![0.0; self.embed_dim];
        for &id in &ids {
            if id >= self.vocab_size {
                return Err(Error::Domain(format!(
                    "token id {id} out of range for vocab of {}",
                    self.vocab_size
                )));
            }
            for (acc, v) in pooled.iter_mut().zip(embedding.row(id)) {
                *acc += v;
            }
        }
        if !ids.is_empty() {
            let inv = 1.0 / ids.len() as f64;
            pooled.iter_mut().for_each(|v| *v *= inv);
        }
        Ok((ids, pooled))
    }

    /// Raw representation of a single document.
    pub fn extract(&self, doc: &Document) -> Result<Vec<f64>> {
        let (_, pooled) = self.pool(doc)?;
        let x = Matrix::from_row(&pooled);
        let preact = affine_forward(&x, self.params.get("w1"), self.params.get("b1"))?;
        Ok(relu_forward(&preact).row(0).to_vec())
    }

    /// Batched forward pass that also returns the backward cache.
    pub fn extract_batch(&self, docs: &[&Document]) -> Result<(Matrix, ExtractCache)> {
        let mut token_lists = Vec::with_capacity(docs.len());
        let mut rows = Vec::with_capacity(docs.len());
        for doc in docs {
            let (ids, pooled) = self.pool(doc)?;
            token_lists.push(ids);
            rows.push(pooled);
        }
        let pooled = Matrix::from_rows(&rows)?;
        let preact = affine_forward(&pooled, self.params.get("w1"), self.params.get("b1"))?;
        let reps = relu_forward(&preact);
        Ok((
            reps,
            ExtractCache {
                token_lists,
                pooled,
                preact,
            },
        ))
    }

    /// Accumulate parameter gradients for a batch given d(loss)/d(reps).
    pub fn backward_batch(&mut self, cache: &ExtractCache, d_reps: &Matrix) -> Result<()> {
        let d_preact = relu_backward(&cache.preact, d_reps);
        let (d_pooled, dw1, db1) =
            affine_backward(&cache.pooled, self.params.get("w1"), &d_preact)?;
        add_into(self.params.grad_mut("w1"), &dw1);
        add_into(self.params.grad_mut("b1"), &db1);
        let d_embedding = self.params.grad_mut("embedding");
        for (b, ids) in cache.token_lists.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let inv = 1.0 / ids.len() as f64;
            for &id in ids {
                for (acc, v) in d_embedding.row_mut(id).iter_mut().zip(d_pooled.row(b)) {
                    *acc += v * inv;
                }
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut Matrix, delta: &Matrix) {
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

/// Server-side classifier head C: affine → softmax over the main classes.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub rep_dim: usize,
    pub num_classes: usize,
    pub params: ParamSet,
}

impl ClassifierHead {
    pub fn new(rep_dim: usize, num_classes: usize, rng: &mut RngStream) -> Self {
        let mut params = ParamSet::new();
        params.add("w", Matrix::glorot(rep_dim, num_classes, rng));
        params.add("b", Matrix::zeros(1, num_classes));
        ClassifierHead {
            rep_dim,
            num_classes,
            params,
        }
    }

    /// Raw logits for a batch of representations (privatized or not; noise
    /// is unbounded so no range check applies here).
    pub fn logits(&self, reps: &Matrix) -> Result<Matrix> {
        if reps.cols() != self.rep_dim {
            return Err(Error::Dimension(format!(
                "head expects {} inputs, got {}",
                self.rep_dim,
                reps.cols()
            )));
        }
        affine_forward(reps, self.params.get("w"), self.params.get("b"))
    }

    /// Probability vector over classes for a single representation.
    pub fn classify(&self, rep: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits(&Matrix::from_row(rep))?;
        Ok(softmax(&logits).row(0).to_vec())
    }

    /// Accumulate head gradients; returns d(loss)/d(reps) for the extractor.
    pub fn backward(&mut self, reps: &Matrix, d_logits: &Matrix) -> Result<Matrix> {
        let (d_reps, dw, db) = affine_backward(reps, self.params.get("w"), d_logits)?;
        add_into(self.params.grad_mut("w"), &dw);
        add_into(self.params.grad_mut("b"), &db);
        Ok(d_reps)
    }
}

/// Everything needed to reproduce and deploy a trained split model.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
    /// Privacy parameters used during training; the non-private sentinel
    /// (ε = ∞) when training was standard.
    pub training_params: PrivacyParams,
    pub meta: BundleMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BundleMeta {
    pub seed: u64,
    pub epochs: usize,
    pub dataset_id: String,
    pub classes: Vec<String>,
    /// True when the bundle was produced by robust (noise-injected) training.
    pub robust: bool,
    /// Whether inference normalizes representations before the head. Robust
    /// models normalize; standard models consume raw representations.
    pub normalize: bool,
}

const BUNDLE_FORMAT: &str = "privrep-model";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    format: String,
    version: u32,
    metadata: BundleMeta,
    vocab_size: usize,
    embed_dim: usize,
    rep_dim: usize,
    num_classes: usize,
    training_params: PrivacyParams,
    params: Vec<ParamRecord>,
}

impl ModelBundle {
    /// Serialize to a single versioned checkpoint file. Values survive the
    /// round trip exactly (shortest round-trip decimal).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut params = Vec::new();
        for (prefix, set) in [("extractor", &self.extractor.params), ("head", &self.head.params)] {
            for p in set.iter() {
                params.push(ParamRecord {
                    name: format!("{prefix}.{}", p.name),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.data().to_vec(),
                });
            }
        }
        let file = BundleFile {
            format: BUNDLE_FORMAT.to_string(),
            version: BUNDLE_VERSION,
            metadata: self.meta.clone(),
            vocab_size: self.extractor.vocab_size,
            embed_dim: self.extractor.embed_dim,
            rep_dim: self.extractor.rep_dim,
            num_classes: self.head.num_classes,
            training_params: self.training_params,
            params,
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::schema(0, format!("bundle serialization failed: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let content = std::fs::read_to_string(path)?;
        let file: BundleFile = serde_json::from_str(&content)
            .map_err(|e| Error::schema(0, format!("bad bundle file: {e}")))?;
        if file.format != BUNDLE_FORMAT {
            return Err(Error::schema(0, format!("unknown format {:?}", file.format)));
        }
        if file.version != BUNDLE_VERSION {
            return Err(Error::schema(
                0,
                format!("unsupported bundle version {}", file.version),
            ));
        }
        file.training_params.validate()?;

        let mut extractor_params = ParamSet::new();
        let mut head_params = ParamSet::new();
        for r in &file.params {
            let m = Matrix::new(r.rows, r.cols, r.values.clone())
                .map_err(|e| Error::schema(0, format!("parameter {}: {e}", r.name)))?;
            match r.name.split_once('.') {
                Some(("extractor", name)) => extractor_params.add(name, m),
                Some(("head", name)) => head_params.add(name, m),
                _ => return Err(Error::schema(0, format!("unknown parameter {}", r.name))),
            }
        }
        let extractor = FeatureExtractor {
            vocab_size: file.vocab_size,
            embed_dim: file.embed_dim,
            rep_dim: file.rep_dim,
            params: extractor_params,
        };
        let head = ClassifierHead {
            rep_dim: file.rep_dim,
            num_classes: file.num_classes,
            params: head_params,
        };
        if extractor.rep_dim != head.rep_dim {
            return Err(Error::schema(0, "extractor/head dimension mismatch"));
        }
        Ok(ModelBundle {
            extractor,
            head,
            training_params: file.training_params,
            meta: file.metadata,
        })
    }
}
