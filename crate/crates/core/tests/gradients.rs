//! Finite-difference validation of the full analytic gradient chain,
//! including the robust path (extraction → normalization → fixed noise →
//! head → cross-entropy).

use std::collections::BTreeMap;

use privrep_core::data::Document;
use privrep_core::dp::{normalize_backward, normalize_minmax_cached, sample_laplace};
use privrep_core::model::{ClassifierHead, FeatureExtractor};
use privrep_core::rng::RngStream;
use privrep_core::tensor::{
    gradient_check, softmax_cross_entropy, softmax_cross_entropy_backward, Matrix, ParamSet,
};

fn docs() -> Vec<Document> {
    let token_sets = [
        vec![2usize, 5, 9, 3],
        vec![7, 2, 11],
        vec![4, 4, 8, 10, 6],
        vec![12, 3],
    ];
    token_sets
        .iter()
        .enumerate()
        .map(|(i, tokens)| Document {
            record_id: format!("g{i}"),
            tokens: tokens.clone(),
            label: i % 3,
            attributes: BTreeMap::new(),
        })
        .collect()
}

/// Move every parameter of the extractor and head into one ParamSet so the
/// generic checker can walk it, then copy values back on each probe.
struct Combined {
    extractor: FeatureExtractor,
    head: ClassifierHead,
}

impl Combined {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 0);
        Combined {
            extractor: FeatureExtractor::new(14, 5, 6, &mut rng),
            head: ClassifierHead::new(6, 3, &mut rng),
        }
    }

    fn collect(&self) -> ParamSet {
        let mut all = ParamSet::new();
        for p in self.extractor.params.iter() {
            all.add(&format!("f.{}", p.name), p.value.clone());
        }
        for p in self.head.params.iter() {
            all.add(&format!("c.{}", p.name), p.value.clone());
        }
        all
    }

    fn install(&mut self, all: &ParamSet) {
        for p in all.iter() {
            let (scope, name) = p.name.split_once('.').unwrap();
            let target = if scope == "f" {
                self.extractor.params.get_mut(name)
            } else {
                self.head.params.get_mut(name)
            };
            *target = p.value.clone();
        }
    }
}

fn robust_loss(
    model: &Combined,
    docs: &[Document],
    labels: &[usize],
    noise: &Matrix,
    normalize: bool,
) -> f64 {
    let refs: Vec<&Document> = docs.iter().collect();
    let (reps, _) = model.extractor.extract_batch(&refs).unwrap();
    let mut head_in = reps;
    if normalize {
        for r in 0..head_in.rows() {
            let (y, _) = normalize_minmax_cached(head_in.row(r)).unwrap();
            head_in.row_mut(r).copy_from_slice(&y);
        }
    }
    for (v, n) in head_in.data_mut().iter_mut().zip(noise.data()) {
        *v += n;
    }
    let logits = model.head.logits(&head_in).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

fn check_path(normalize: bool, with_noise: bool, seed: u64) -> f64 {
    let docs = docs();
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let mut model = Combined::new(seed);
    let noise = if with_noise {
        let mut noise_rng = RngStream::new(seed, 99);
        let flat = sample_laplace(&mut noise_rng, 0.5, docs.len() * 6).unwrap();
        Matrix::new(docs.len(), 6, flat.values).unwrap()
    } else {
        Matrix::zeros(docs.len(), 6)
    };

    // analytic gradients along the same path
    let refs: Vec<&Document> = docs.iter().collect();
    let (reps, cache) = model.extractor.extract_batch(&refs).unwrap();
    let mut head_in = reps;
    let mut caches = Vec::new();
    let mut norm_y = None;
    if normalize {
        for r in 0..head_in.rows() {
            let (y, c) = normalize_minmax_cached(head_in.row(r)).unwrap();
            head_in.row_mut(r).copy_from_slice(&y);
            caches.push(c);
        }
        norm_y = Some(head_in.clone());
    }
    for (v, n) in head_in.data_mut().iter_mut().zip(noise.data()) {
        *v += n;
    }
    let logits = model.head.logits(&head_in).unwrap();
    let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
    let d_logits = softmax_cross_entropy_backward(&probs, &labels);
    let mut d_head_in = model.head.backward(&head_in, &d_logits).unwrap();
    if normalize {
        let y = norm_y.as_ref().unwrap();
        for r in 0..d_head_in.rows() {
            let dx = normalize_backward(&caches[r], y.row(r), d_head_in.row(r));
            d_head_in.row_mut(r).copy_from_slice(&dx);
        }
    }
    model.extractor.backward_batch(&cache, &d_head_in).unwrap();

    let mut all = model.collect();
    for p in all.iter_mut() {
        let (scope, name) = p.name.clone().split_once('.').map(|(a, b)| (a.to_string(), b.to_string())).unwrap();
        let grad = if scope == "f" {
            model.extractor.params.grad_mut(&name).clone()
        } else {
            model.head.params.grad_mut(&name).clone()
        };
        p.grad = grad;
    }

    let docs_for_loss = docs.clone();
    let labels_for_loss = labels.clone();
    gradient_check(
        &mut all,
        move |params| {
            let mut probe_model = Combined::new(seed);
            probe_model.install(params);
            robust_loss(&probe_model, &docs_for_loss, &labels_for_loss, &noise, normalize)
        },
        1e-5,
    )
    .unwrap()
}

#[test]
fn standard_path_gradients_match_finite_differences() {
    let worst = check_path(false, false, 61);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn robust_path_gradients_match_finite_differences() {
    let worst = check_path(true, true, 62);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn normalized_no_noise_path_gradients_match() {
    let worst = check_path(true, false, 63);
    assert!(worst < 1e-4, "max relative error {worst}");
}
