//! The client-side privatization procedure and the serialization boundary.
//!
//! `dpnr` runs word dropout → extraction → min-max normalization → Laplace
//! perturbation, in that order, and stamps the output with the privacy
//! parameters it used. Only [`PrivatizedRepresentation`] values ever cross
//! to the server side: the wire format has no field that could carry token
//! ids or a pre-noise representation, and the server entry point consumes
//! nothing else. Anything the server computes afterwards is post-processing
//! and cannot weaken the guarantee.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Document};
use crate::dp::{self, maybe_inf, MaskVector, PrivacyParams};
use crate::error::{Error, Result};
use crate::model::{ClassifierHead, FeatureExtractor, ModelBundle};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Random,
    User,
}

/// A privatized representation as it travels to the server: noised values
/// plus the privacy metadata needed to interpret them. User-supplied masks
/// are flagged because the dropout privacy bound assumes random masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivatizedRepresentation {
    pub record_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
    #[serde(with = "maybe_inf")]
    pub epsilon: f64,
    pub mu: f64,
    #[serde(with = "maybe_inf")]
    pub epsilon_effective: f64,
    pub mask_source: MaskSource,
}

impl PrivatizedRepresentation {
    fn validate(&self, line: usize) -> Result<()> {
        if self.dim != self.values.len() {
            return Err(Error::schema(
                line,
                format!("dim {} does not match {} values", self.dim, self.values.len()),
            ));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::schema(line, format!("bad epsilon {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::schema(line, format!("bad mu {}", self.mu)));
        }
        if !dp::accountant_consistent(self.epsilon, self.mu, self.epsilon_effective) {
            return Err(Error::schema(
                line,
                format!(
                    "epsilon_effective {} inconsistent with epsilon {} and mu {}",
                    self.epsilon_effective, self.epsilon, self.mu
                ),
            ));
        }
        Ok(())
    }
}

/// Differentially private neural representation of one document:
/// word dropout → extraction → normalization → perturbation.
///
/// Randomness comes from substreams of `master` keyed by the record id, so
/// privatizing records in any order (or in parallel) yields the same output
/// per record.
pub fn dpnr(
    doc: &Document,
    extractor: &FeatureExtractor,
    params: &PrivacyParams,
    master: &RngStream,
    user_mask: Option<&MaskVector>,
) -> Result<PrivatizedRepresentation> {
    params.validate()?;
    let mut mask_rng = master.derive_named("dpnr-mask", &doc.record_id);
    let masked = dp::word_dropout(doc, params.mu, &mut mask_rng, user_mask)?;
    let rep = extractor.extract(&masked)?;
    let normalized = dp::normalize_minmax(&rep)?;
    let mut noise_rng = master.derive_named("dpnr-noise", &doc.record_id);
    let values = dp::perturb(&normalized, params, &mut noise_rng)?;
    Ok(PrivatizedRepresentation {
        record_id: doc.record_id.clone(),
        dim: values.len(),
        values,
        epsilon: params.epsilon,
        mu: params.mu,
        epsilon_effective: params.epsilon_effective,
        mask_source: if user_mask.is_some() {
            MaskSource::User
        } else {
            MaskSource::Random
        },
    })
}

/// Privatize a batch of documents. Output order equals input order; each
/// record is independent. When a mask table is supplied it must cover every
/// record.
pub fn privatize_documents(
    docs: &[&Document],
    extractor: &FeatureExtractor,
    params: &PrivacyParams,
    master: &RngStream,
    user_masks: Option<&HashMap<String, MaskVector>>,
) -> Result<Vec<PrivatizedRepresentation>> {
    docs.iter()
        .map(|doc| {
            let mask = match user_masks {
                Some(table) => Some(table.get(&doc.record_id).ok_or_else(|| {
                    Error::Parameter(format!("no user mask for record {}", doc.record_id))
                })?),
                None => None,
            };
            dpnr(doc, extractor, params, master, mask)
        })
        .collect()
}

// ── Wire format ──────────────────────────────────────────────────────────

/// One representation per line as a JSON object. Values are shortest
/// round-trip decimals, so serialize ∘ deserialize is the identity.
pub fn serialize_rep(rep: &PrivatizedRepresentation) -> String {
    serde_json::to_string(rep).expect("representation serialization cannot fail")
}

/// Parse one line; `line` is the 1-based line number used in errors.
pub fn deserialize_rep(text: &str, line: usize) -> Result<PrivatizedRepresentation> {
    let rep: PrivatizedRepresentation = serde_json::from_str(text)
        .map_err(|e| Error::schema(line, format!("bad representation: {e}")))?;
    rep.validate(line)?;
    Ok(rep)
}

pub fn write_reps_file(path: &Path, reps: &[PrivatizedRepresentation]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rep in reps {
        writeln!(out, "{}", serialize_rep(rep))?;
    }
    Ok(())
}

pub fn read_reps_file(path: &Path) -> Result<Vec<PrivatizedRepresentation>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut reps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        reps.push(deserialize_rep(&line, i + 1)?);
    }
    Ok(reps)
}

// ── Server side ──────────────────────────────────────────────────────────

/// Per-record server output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub label: usize,
    pub class: String,
    pub probabilities: Vec<f64>,
}

/// Classify privatized representations. This is the only server entry
/// point, and its input type cannot carry raw text or tokens.
pub fn server_classify_batch(
    reps: &[PrivatizedRepresentation],
    head: &ClassifierHead,
    classes: &[String],
) -> Result<Vec<Prediction>> {
    if classes.len() != head.num_classes {
        return Err(Error::Parameter(format!(
            "{} class names for a {}-way head",
            classes.len(),
            head.num_classes
        )));
    }
    reps.iter()
        .enumerate()
        .map(|(i, rep)| {
            if rep.dim != head.rep_dim {
                return Err(Error::schema(
                    i + 1,
                    format!(
                        "record {} has dim {}, head expects {}",
                        rep.record_id, rep.dim, head.rep_dim
                    ),
                ));
            }
            let probabilities = head.classify(&rep.values)?;
            let label = argmax(&probabilities);
            Ok(Prediction {
                record_id: rep.record_id.clone(),
                label,
                class: classes[label].clone(),
                probabilities,
            })
        })
        .collect()
}

pub fn write_predictions_file(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in predictions {
        writeln!(
            out,
            "{}",
            serde_json::to_string(p).expect("prediction serialization cannot fail")
        )?;
    }
    Ok(())
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

/// Main-task accuracy of a bundle on the given documents under full DPNR
/// inference (fresh per-record noise from `master`).
pub fn evaluate_with_dpnr(
    bundle: &ModelBundle,
    corpus: &Corpus,
    indices: &[usize],
    params: &PrivacyParams,
    master: &RngStream,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty index set".into()));
    }
    let mut hits = 0usize;
    for &i in indices {
        let doc = &corpus.documents[i];
        let rep = dpnr(doc, &bundle.extractor, params, master, None)?;
        let probs = bundle.head.classify(&rep.values)?;
        if argmax(&probs) == doc.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MASK_ID;
    use crate::tensor::{Matrix, ParamSet};
    use std::collections::BTreeMap;

    fn doc(id: &str, tokens: Vec<usize>) -> Document {
        Document {
            record_id: id.into(),
            tokens,
            label: 0,
            attributes: BTreeMap::new(),
        }
    }

    fn toy_extractor() -> FeatureExtractor {
        let mut rng = RngStream::new(31, 0);
        let mut f = FeatureExtractor::new(12, 4, 3, &mut rng);
        f.params.get_mut("embedding").row_mut(MASK_ID).fill(0.0);
        f
    }

    #[test]
    fn dpnr_with_both_knobs_off_is_normalized_extraction() {
        let f = toy_extractor();
        let d = doc("a", vec![2, 5, 7]);
        let params = PrivacyParams::non_private();
        let master = RngStream::new(1, 0);
        let rep = dpnr(&d, &f, &params, &master, None).unwrap();
        let expected = dp::normalize_minmax(&f.extract(&d).unwrap()).unwrap();
        assert_eq!(rep.values, expected);
        assert_eq!(rep.mask_source, MaskSource::Random);
    }

    #[test]
    fn dpnr_full_mask_depends_only_on_length() {
        let f = toy_extractor();
        let params = PrivacyParams::new(1.0, 1.0).unwrap();
        let master = RngStream::new(5, 0);
        // same record id, same length, different content
        let a = dpnr(&doc("x", vec![2, 3, 4]), &f, &params, &master, None).unwrap();
        let b = dpnr(&doc("x", vec![7, 8, 9]), &f, &params, &master, None).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.epsilon_effective, 0.0);
    }

    #[test]
    fn dpnr_is_order_independent_across_records() {
        let f = toy_extractor();
        let params = PrivacyParams::new(0.5, 0.3).unwrap();
        let master = RngStream::new(9, 0);
        let d1 = doc("r1", vec![2, 3, 4, 5]);
        let d2 = doc("r2", vec![6, 7, 8, 9]);
        let forward =
            privatize_documents(&[&d1, &d2], &f, &params, &master, None).unwrap();
        let backward =
            privatize_documents(&[&d2, &d1], &f, &params, &master, None).unwrap();
        assert_eq!(forward[0], backward[1]);
        assert_eq!(forward[1], backward[0]);
    }

    #[test]
    fn serialize_roundtrip_is_identity() {
        let rep = PrivatizedRepresentation {
            record_id: "r7".into(),
            dim: 2,
            values: vec![0.123456789123456789, -4.75],
            epsilon: 0.5,
            mu: 0.3,
            epsilon_effective: dp::epsilon_effective(0.5, 0.3).unwrap(),
            mask_source: MaskSource::Random,
        };
        let line = serialize_rep(&rep);
        assert_eq!(deserialize_rep(&line, 1).unwrap(), rep);
        // k = 2 means exactly 2 values on the wire
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(value["values"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn wire_format_carries_no_tokens_or_raw_fields() {
        let f = toy_extractor();
        let params = PrivacyParams::new(1.0, 0.5).unwrap();
        let master = RngStream::new(2, 0);
        let rep = dpnr(&doc("a", vec![2, 3, 4]), &f, &params, &master, None).unwrap();
        let line = serialize_rep(&rep);
        assert!(line.starts_with(r#"{"record_id""#));
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec![
                "dim",
                "epsilon",
                "epsilon_effective",
                "mask_source",
                "mu",
                "record_id",
                "values"
            ]
        );
    }

    #[test]
    fn inconsistent_effective_budget_is_rejected_on_load() {
        let rep = PrivatizedRepresentation {
            record_id: "r".into(),
            dim: 1,
            values: vec![0.5],
            epsilon: 1.0,
            mu: 0.5,
            epsilon_effective: 0.7, // should be ~0.6201
            mask_source: MaskSource::Random,
        };
        let line = serde_json::to_string(&rep).unwrap();
        assert!(matches!(
            deserialize_rep(&line, 3),
            Err(Error::Schema { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        assert!(matches!(
            deserialize_rep("{not json", 12),
            Err(Error::Schema { line: 12, .. })
        ));
    }

    #[test]
    fn dim_mismatch_is_schema_error() {
        let line = r#"{"record_id":"r","dim":3,"values":[0.1,0.2],"epsilon":1.0,"mu":0.0,"epsilon_effective":1.0,"mask_source":"random"}"#;
        assert!(matches!(
            deserialize_rep(line, 1),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn effective_budget_decreases_with_mu_in_metadata() {
        let f = toy_extractor();
        let master = RngStream::new(4, 0);
        let d = doc("a", vec![2, 3, 4, 5, 6]);
        let mut last = f64::INFINITY;
        for mu in [0.0, 0.3, 0.5, 0.8] {
            let params = PrivacyParams::new(1.0, mu).unwrap();
            let rep = dpnr(&d, &f, &params, &master, None).unwrap();
            assert!(rep.epsilon_effective < last || (mu == 0.0 && rep.epsilon_effective <= last));
            last = rep.epsilon_effective;
        }
    }

    fn uniform_head(rep_dim: usize, classes: usize) -> ClassifierHead {
        let mut params = ParamSet::new();
        params.add("w", Matrix::zeros(rep_dim, classes));
        params.add("b", Matrix::zeros(1, classes));
        ClassifierHead {
            rep_dim,
            num_classes: classes,
            params,
        }
    }

    #[test]
    fn server_classify_empty_input_empty_output() {
        let head = uniform_head(3, 2);
        let out =
            server_classify_batch(&[], &head, &["a".into(), "b".into()]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn server_classify_is_stateless_under_shuffling() {
        let mut rng = RngStream::new(6, 0);
        let head = ClassifierHead::new(3, 2, &mut rng);
        let classes = vec!["a".to_string(), "b".to_string()];
        let reps: Vec<PrivatizedRepresentation> = (0..5)
            .map(|i| PrivatizedRepresentation {
                record_id: format!("r{i}"),
                dim: 3,
                values: (0..3).map(|_| rng.uniform() * 4.0 - 2.0).collect(),
                epsilon: 1.0,
                mu: 0.0,
                epsilon_effective: 1.0,
                mask_source: MaskSource::Random,
            })
            .collect();
        let mut shuffled = reps.clone();
        shuffled.reverse();
        let a = server_classify_batch(&reps, &head, &classes).unwrap();
        let b = server_classify_batch(&shuffled, &head, &classes).unwrap();
        for p in &a {
            let q = b.iter().find(|q| q.record_id == p.record_id).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn server_classify_rejects_dim_mismatch() {
        let head = uniform_head(4, 2);
        let rep = PrivatizedRepresentation {
            record_id: "r".into(),
            dim: 3,
            values: vec![0.0; 3],
            epsilon: 1.0,
            mu: 0.0,
            epsilon_effective: 1.0,
            mask_source: MaskSource::Random,
        };
        assert!(matches!(
            server_classify_batch(&[rep], &head, &["a".into(), "b".into()]),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn reps_file_roundtrip() {
        let f = toy_extractor();
        let params = PrivacyParams::new(0.5, 0.0).unwrap();
        let master = RngStream::new(11, 0);
        let docs: Vec<Document> = (0..4).map(|i| doc(&format!("r{i}"), vec![2 + i, 3, 4])).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let reps = privatize_documents(&refs, &f, &params, &master, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reps.jsonl");
        write_reps_file(&path, &reps).unwrap();
        assert_eq!(read_reps_file(&path).unwrap(), reps);
    }
}
