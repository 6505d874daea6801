//! Subgroup fairness audit: main-task accuracy per demographic subgroup
//! under the same inference pipeline the deployment uses, with gaps
//! measured against a reference subgroup.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::dp::{self, maybe_inf, PrivacyParams};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::pipeline::{dpnr, PrivatizedRepresentation};
use crate::rng::RngStream;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub name: String,
    pub size: usize,
    /// Share of the evaluation set, the "ratio" column.
    pub ratio: f64,
    pub accuracy: f64,
    /// accuracy(reference) − accuracy(this subgroup); `None` on the
    /// reference itself.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableFairness {
    pub variable: String,
    pub reference: String,
    pub subgroups: Vec<SubgroupResult>,
}

/// Per-variable subgroup accuracies and gaps for one model under one
/// inference pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessReport {
    pub variables: Vec<VariableFairness>,
    pub evaluated: usize,
    /// Privacy parameters of the audited pipeline; the non-private sentinel
    /// when auditing clean inference.
    pub params: PrivacyParams,
    pub pipeline: String,
}

/// Main-task accuracy per subgroup of every declared variable.
///
/// With privacy parameters the audited pipeline is full DPNR inference
/// (fresh per-record noise); without, the bundle's clean pipeline. Empty
/// subgroups are omitted from the report rather than scored as zero.
pub fn fairness_audit(
    bundle: &ModelBundle,
    corpus: &Corpus,
    indices: &[usize],
    params: Option<&PrivacyParams>,
    master: &RngStream,
) -> Result<FairnessReport> {
    if indices.is_empty() {
        return Err(Error::Parameter("cannot audit an empty index set".into()));
    }
    // One prediction per record, shared by every variable's partition.
    let mut correct: Vec<bool> = Vec::with_capacity(indices.len());
    for &i in indices {
        let doc = &corpus.documents[i];
        let probs = match params {
            Some(p) => {
                let rep = dpnr(doc, &bundle.extractor, p, master, None)?;
                bundle.head.classify(&rep.values)?
            }
            None => {
                let mut rep = bundle.extractor.extract(doc)?;
                if bundle.meta.normalize {
                    rep = dp::normalize_minmax(&rep)?;
                }
                bundle.head.classify(&rep)?
            }
        };
        correct.push(argmax(&probs) == doc.label);
    }

    let mut variables = Vec::new();
    for spec in &corpus.attributes {
        // subgroup -> (size, hits), keyed in the spec's value order
        let mut table: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (pos, &i) in indices.iter().enumerate() {
            let doc = &corpus.documents[i];
            if let Some(&vid) = doc.attributes.get(&spec.name) {
                let entry = table.entry(vid).or_insert((0, 0));
                entry.0 += 1;
                if correct[pos] {
                    entry.1 += 1;
                }
            }
        }
        if table.is_empty() {
            continue;
        }
        let reference_vid = *table.keys().next().expect("non-empty table");
        let reference_acc =
            table[&reference_vid].1 as f64 / table[&reference_vid].0 as f64;
        let subgroups = table
            .iter()
            .map(|(&vid, &(size, hits))| {
                let accuracy = hits as f64 / size as f64;
                SubgroupResult {
                    name: spec.values[vid].clone(),
                    size,
                    ratio: size as f64 / indices.len() as f64,
                    accuracy,
                    gap: if vid == reference_vid {
                        None
                    } else {
                        Some(reference_acc - accuracy)
                    },
                }
            })
            .collect();
        variables.push(VariableFairness {
            variable: spec.name.clone(),
            reference: spec.values[reference_vid].clone(),
            subgroups,
        });
    }

    Ok(FairnessReport {
        variables,
        evaluated: indices.len(),
        params: params.copied().unwrap_or_else(PrivacyParams::non_private),
        pipeline: if params.is_some() { "dpnr" } else { "clean" }.to_string(),
    })
}

impl FairnessReport {
    pub fn variable(&self, name: &str) -> Option<&VariableFairness> {
        self.variables.iter().find(|v| v.variable == name)
    }

    /// Largest absolute subgroup gap for a variable.
    pub fn max_abs_gap(&self, variable: &str) -> Option<f64> {
        self.variable(variable).map(|v| {
            v.subgroups
                .iter()
                .filter_map(|s| s.gap)
                .fold(0.0f64, |acc, g| acc.max(g.abs()))
        })
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

// ── Representation export ────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ExportHeader {
    r#type: String,
    variable: String,
    #[serde(with = "maybe_inf")]
    epsilon: f64,
    mu: f64,
    #[serde(with = "maybe_inf")]
    epsilon_effective: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ExportedRow {
    pub record_id: String,
    pub subgroup: String,
    pub values: Vec<f64>,
}

/// Write representations with their subgroup labels for external plotting
/// (e.g. a 2-D embedding of the two subgroup clouds). The header line
/// carries the ε′ the representations were produced under.
pub fn export_representations(
    path: &Path,
    reps: &[PrivatizedRepresentation],
    corpus: &Corpus,
    variable: &str,
) -> Result<()> {
    let spec = corpus
        .attribute(variable)
        .ok_or_else(|| Error::Parameter(format!("unknown variable {variable}")))?;
    let first = reps
        .first()
        .ok_or_else(|| Error::Parameter("no representations to export".into()))?;
    let header = ExportHeader {
        r#type: "representation-export".to_string(),
        variable: variable.to_string(),
        epsilon: first.epsilon,
        mu: first.mu,
        epsilon_effective: first.epsilon_effective,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", serde_json::to_string(&header).expect("header"))?;
    for rep in reps {
        let doc = corpus.document_by_record_id(&rep.record_id).ok_or_else(|| {
            Error::Parameter(format!("record {} not in corpus", rep.record_id))
        })?;
        let vid = *doc.attributes.get(variable).ok_or_else(|| {
            Error::Parameter(format!("record {} lacks variable {variable}", rep.record_id))
        })?;
        let row = ExportedRow {
            record_id: rep.record_id.clone(),
            subgroup: spec.values[vid].clone(),
            values: rep.values.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&row).expect("row"))?;
    }
    Ok(())
}

/// Load an export back; returns the stamped ε′ and the rows.
pub fn read_representation_export(path: &Path) -> Result<(f64, Vec<ExportedRow>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::schema(1, "missing export header"))??;
    let header: ExportHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::schema(1, format!("bad export header: {e}")))?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ExportedRow = serde_json::from_str(&line)
            .map_err(|e| Error::schema(i + 2, format!("bad export row: {e}")))?;
        rows.push(row);
    }
    Ok((header.epsilon_effective, rows))
}
