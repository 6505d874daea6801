//! Shared test oracles, independent of the library's model/training path.

use privrep_core::data::{Corpus, Split};

/// Bag-of-words count vector over the corpus vocabulary.
pub fn bag_of_words(corpus: &Corpus, doc_idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; corpus.vocab_size()];
    for &t in &corpus.documents[doc_idx].tokens {
        v[t] += 1.0;
    }
    v
}

/// Independent binary logistic-regression probe on arbitrary features,
/// trained with full-batch gradient descent. Returns held-out accuracy.
///
/// This is deliberately not built on the library's tensor/training code: it
/// is the oracle that recoverability claims are checked against.
pub fn logistic_probe_accuracy(
    train: &[(Vec<f64>, usize)],
    test: &[(Vec<f64>, usize)],
    epochs: usize,
    lr: f64,
) -> f64 {
    assert!(!train.is_empty() && !test.is_empty());
    let dim = train[0].0.len();
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let n = train.len() as f64;
    for _ in 0..epochs {
        let mut gw = vec![0.0f64; dim];
        let mut gb = 0.0f64;
        for (x, y) in train {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - *y as f64;
            for (g, xv) in gw.iter_mut().zip(x) {
                *g += err * xv;
            }
            gb += err;
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= lr * g / n;
        }
        b -= lr * gb / n;
    }
    let hits = test
        .iter()
        .filter(|(x, y)| {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            (z > 0.0) as usize == *y
        })
        .count();
    hits as f64 / test.len() as f64
}

/// (bag-of-words, attribute value) pairs for a split.
pub fn bow_dataset(corpus: &Corpus, split: Split, attribute: &str) -> Vec<(Vec<f64>, usize)> {
    corpus
        .split_indices(split)
        .into_iter()
        .map(|i| {
            let label = corpus.documents[i].attributes[attribute];
            (bag_of_words(corpus, i), label)
        })
        .collect()
}

/// (bag-of-words, main label) pairs for a split.
pub fn bow_label_dataset(corpus: &Corpus, split: Split) -> Vec<(Vec<f64>, usize)> {
    corpus
        .split_indices(split)
        .into_iter()
        .map(|i| (bag_of_words(corpus, i), corpus.documents[i].label))
        .collect()
}
