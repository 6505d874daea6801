//! Word-dropout mask distribution: exact zero count on every draw, uniform
//! position marginals converging to μ.

use std::collections::BTreeMap;

use privrep_core::data::{Document, MASK_ID};
use privrep_core::dp::{mask_count, word_dropout, MaskVector};
use privrep_core::rng::RngStream;

#[test]
fn per_position_masking_frequency_converges_to_mu() {
    let d = 10;
    let mu = 0.3;
    let trials = 100_000;
    let mut rng = RngStream::new(33, 0);
    let mut hits = vec![0u64; d];
    for _ in 0..trials {
        let mask = MaskVector::random(d, mu, &mut rng).unwrap();
        // exact count on every draw
        assert_eq!(mask.zero_positions.len(), mask_count(d, mu));
        assert_eq!(mask.zero_positions.len(), 3);
        for &p in &mask.zero_positions {
            hits[p] += 1;
        }
    }
    for (p, &h) in hits.iter().enumerate() {
        let freq = h as f64 / trials as f64;
        assert!(
            (freq - mu).abs() <= 0.01,
            "position {p} masked with frequency {freq}, expected {mu} ± 0.01"
        );
    }
}

#[test]
fn dropout_replaces_exactly_the_masked_positions() {
    let doc = Document {
        record_id: "m".into(),
        tokens: (2..14).collect(),
        label: 0,
        attributes: BTreeMap::new(),
    };
    let mut rng = RngStream::new(44, 0);
    for _ in 0..200 {
        let out = word_dropout(&doc, 0.5, &mut rng, None).unwrap();
        let masked: Vec<usize> = out
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == MASK_ID)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(masked.len(), 6);
        for (i, (&a, &b)) in doc.tokens.iter().zip(&out.tokens).enumerate() {
            if masked.contains(&i) {
                assert_eq!(b, MASK_ID);
            } else {
                assert_eq!(a, b);
            }
        }
    }
}
