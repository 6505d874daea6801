//! Corpus ingestion, vocabulary construction, deterministic 8:1:1 splits,
//! and a synthetic corpus generator with plantable private-attribute
//! correlation and subgroup skew.
//!
//! Corpus files are line-delimited JSON objects:
//! `{"text": "...", "label": "...", "attributes": {"age": "u34", ...}, "id": "..."}`
//! with `id` optional. Tokenization is lowercase whitespace splitting; the
//! word is the privacy unit, so no subword segmentation is applied.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Reserved token id for masked-out words. Never produced by tokenization.
pub const MASK_ID: usize = 0;
/// Reserved token id for out-of-vocabulary words.
pub const UNK_ID: usize = 1;

pub const MASK_TOKEN: &str = "<mask>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    /// Multi-valued demographic variable (age band, gender, group).
    Demographic,
    /// Binary presence of a named entity; values are "0"/"1".
    EntityPresence,
}

/// A private attribute declared by the corpus, with its observed value names.
/// Value ids index into `values`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub values: Vec<String>,
}

impl AttributeSpec {
    pub fn value_id(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// One tokenized example: input tokens, main-task label, and the private
/// attribute vector. Subgroup names for fairness come from the attribute
/// value tables on [`Corpus`].
#[derive(Debug, Clone)]
pub struct Document {
    pub record_id: String,
    pub tokens: Vec<usize>,
    pub label: usize,
    /// attribute name -> value id (into the corpus [`AttributeSpec::values`])
    pub attributes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// An immutable corpus: vocabulary, class names, attribute schema,
/// documents, and the deterministic split assignment.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dataset_id: String,
    /// token id -> token string; ids 0 and 1 are MASK and UNK
    pub vocab: Vec<String>,
    pub classes: Vec<String>,
    pub attributes: Vec<AttributeSpec>,
    pub documents: Vec<Document>,
    /// parallel to `documents`
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn document_by_record_id(&self, record_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.record_id == record_id)
    }

    /// Subgroup (value name) of a document under a given variable.
    pub fn subgroup_of(&self, doc: &Document, variable: &str) -> Option<&str> {
        let spec = self.attribute(variable)?;
        doc.attributes
            .get(variable)
            .map(|&vid| spec.values[vid].as_str())
    }
}

/// Options controlling corpus loading.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Maximum number of non-reserved vocabulary entries, by frequency.
    pub vocab_cap: usize,
    /// Seed for the deterministic 8:1:1 split shuffle.
    pub seed: u64,
    /// Declared attributes. `None` infers names from the data and treats
    /// names starting with "entity" as entity-presence attributes.
    pub attributes: Option<Vec<(String, AttributeKind)>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            vocab_cap: 10_000,
            seed: 0,
            attributes: None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawLine {
    text: String,
    label: serde_json::Value,
    #[serde(default)]
    attributes: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    id: Option<String>,
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<Corpus> {
    let content = std::fs::read_to_string(path)?;
    let dataset_id = format!("file-{}", content_digest(&content));
    corpus_from_lines(content.lines(), options, dataset_id)
}

/// Hex SHA-256 of corpus file content; used as a stable dataset id.
pub fn content_digest(content: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(content.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build a corpus from already-read lines. Line numbers in errors are 1-based.
pub fn corpus_from_lines<'a, I>(lines: I, options: &LoadOptions, dataset_id: String) -> Result<Corpus>
where
    I: IntoIterator<Item = &'a str>,
{
    struct Parsed {
        record_id: String,
        tokens: Vec<String>,
        label: String,
        attributes: BTreeMap<String, String>,
    }

    let mut parsed: Vec<Parsed> = Vec::new();
    for (i, line) in lines.into_iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(line)
            .map_err(|e| Error::schema(lineno, format!("bad corpus record: {e}")))?;
        let label = scalar_to_string(&raw.label)
            .ok_or_else(|| Error::schema(lineno, "label must be a scalar"))?;
        let tokens: Vec<String> = raw
            .text
            .split_whitespace()
            .map(|t| t.to_lowercase())
            .collect();
        if tokens.is_empty() {
            return Err(Error::schema(lineno, "text has no tokens"));
        }
        let mut attributes = BTreeMap::new();
        for (name, value) in &raw.attributes {
            let value = scalar_to_string(value)
                .ok_or_else(|| Error::schema(lineno, format!("attribute {name} must be a scalar")))?;
            attributes.insert(name.clone(), value);
        }
        parsed.push(Parsed {
            record_id: raw.id.unwrap_or_else(|| format!("r{:06}", i)),
            tokens,
            label,
            attributes,
        });
    }
    if parsed.is_empty() {
        return Err(Error::schema(0, "corpus is empty"));
    }

    // Attribute schema: declared or inferred from the union of names.
    let declared: Vec<(String, AttributeKind)> = match &options.attributes {
        Some(a) => a.clone(),
        None => {
            let mut names: Vec<String> = parsed
                .iter()
                .flat_map(|p| p.attributes.keys().cloned())
                .collect();
            names.sort();
            names.dedup();
            names
                .into_iter()
                .map(|n| {
                    let kind = if n.starts_with("entity") {
                        AttributeKind::EntityPresence
                    } else {
                        AttributeKind::Demographic
                    };
                    (n, kind)
                })
                .collect()
        }
    };

    // Every declared attribute must be present on every document.
    for (i, p) in parsed.iter().enumerate() {
        for (name, _) in &declared {
            if !p.attributes.contains_key(name) {
                return Err(Error::schema(i + 1, format!("missing attribute {name}")));
            }
        }
    }

    let mut attributes: Vec<AttributeSpec> = Vec::new();
    for (name, kind) in &declared {
        let mut values: Vec<String> = parsed
            .iter()
            .filter_map(|p| p.attributes.get(name).cloned())
            .collect();
        values.sort();
        values.dedup();
        if *kind == AttributeKind::EntityPresence {
            for v in &values {
                if v != "0" && v != "1" {
                    return Err(Error::schema(
                        0,
                        format!("entity attribute {name} must use values 0/1, saw {v}"),
                    ));
                }
            }
            values = vec!["0".to_string(), "1".to_string()];
        }
        attributes.push(AttributeSpec {
            name: name.clone(),
            kind: *kind,
            values,
        });
    }

    // Class table: sorted distinct label strings.
    let mut classes: Vec<String> = parsed.iter().map(|p| p.label.clone()).collect();
    classes.sort();
    classes.dedup();

    // Vocabulary by frequency, capped; ties broken alphabetically. Reserved
    // token strings in the input are deliberately unmappable (-> UNK).
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for p in &parsed {
        for t in &p.tokens {
            if t != MASK_TOKEN && t != UNK_TOKEN {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut by_freq: Vec<(&str, usize)> = freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    by_freq.truncate(options.vocab_cap);
    let mut vocab: Vec<String> = vec![MASK_TOKEN.to_string(), UNK_TOKEN.to_string()];
    vocab.extend(by_freq.iter().map(|(t, _)| t.to_string()));
    let vocab_index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .skip(2)
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let documents: Vec<Document> = parsed
        .iter()
        .map(|p| {
            let tokens = p
                .tokens
                .iter()
                .map(|t| vocab_index.get(t.as_str()).copied().unwrap_or(UNK_ID))
                .collect();
            let label = classes.iter().position(|c| *c == p.label).unwrap();
            let attrs = p
                .attributes
                .iter()
                .filter_map(|(name, value)| {
                    attributes
                        .iter()
                        .find(|a| a.name == *name)
                        .and_then(|a| a.value_id(value))
                        .map(|vid| (name.clone(), vid))
                })
                .collect();
            Document {
                record_id: p.record_id.clone(),
                tokens,
                label,
                attributes: attrs,
            }
        })
        .collect();

    let splits = assign_splits(documents.len(), options.seed);

    Ok(Corpus {
        dataset_id,
        vocab,
        classes,
        attributes,
        documents,
        splits,
    })
}

/// Deterministic 8:1:1 split: dev and test each get round(n/10) documents
/// (half-up), train the remainder.
fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let tenth = (n as f64 * 0.1 + 0.5).floor() as usize;
    let n_dev = tenth.min(n);
    let n_test = tenth.min(n - n_dev);
    let n_train = n - n_dev - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, crate::rng::stream_id("corpus-split", &[]));
    rng.shuffle(&mut order);
    let mut splits = vec![Split::Train; n];
    for &i in order.iter().skip(n_train).take(n_dev) {
        splits[i] = Split::Dev;
    }
    for &i in order.iter().skip(n_train + n_dev) {
        splits[i] = Split::Test;
    }
    splits
}

// ── Synthetic corpus ─────────────────────────────────────────────────────

/// Configuration for the synthetic corpus generator. The main label is
/// carried by per-class topic tokens; the private "group" attribute is
/// carried by identity tokens at correlation strength `rho`; subgroup sizes
/// follow `subgroup_skew`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub vocab: usize,
    pub num_classes: usize,
    /// Correlation between identity tokens and the private group: 0 means
    /// identity tokens carry no information, 1 means perfectly decodable.
    pub rho: f64,
    /// Fraction of documents in the minority group (0.2 -> an 80/20 split).
    pub subgroup_skew: f64,
    pub seed: u64,
    /// Number of binary entity-presence attributes to plant.
    pub entities: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Relative main-task signal strength for minority-group documents;
    /// below 1.0 plants a subgroup accuracy gap.
    pub minority_signal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            vocab: 200,
            num_classes: 2,
            rho: 0.9,
            subgroup_skew: 0.5,
            seed: 1,
            entities: 0,
            doc_len_min: 8,
            doc_len_max: 16,
            minority_signal: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn dataset_id(&self) -> String {
        format!(
            "synthetic-n{}-v{}-c{}-rho{}-skew{}-ent{}-ms{}-seed{}",
            self.n,
            self.vocab,
            self.num_classes,
            self.rho,
            self.subgroup_skew,
            self.entities,
            self.minority_signal,
            self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("synthetic corpus needs n >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Parameter(format!("rho must be in [0,1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.subgroup_skew) {
            return Err(Error::Parameter(format!(
                "subgroup_skew must be in [0,1], got {}",
                self.subgroup_skew
            )));
        }
        if !(0.0..=1.0).contains(&self.minority_signal) {
            return Err(Error::Parameter(format!(
                "minority_signal must be in [0,1], got {}",
                self.minority_signal
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Parameter("need at least 2 classes".into()));
        }
        if self.doc_len_min < 4 || self.doc_len_max < self.doc_len_min {
            return Err(Error::Parameter(
                "document length range must start at 4 so every record carries topic and identity tokens".into(),
            ));
        }
        let needed = self.token_budget();
        if self.vocab < needed {
            return Err(Error::Parameter(format!(
                "vocab of {} too small: token pools need {needed}",
                self.vocab
            )));
        }
        Ok(())
    }

    const TOPIC_PER_CLASS: usize = 6;
    const IDENTITY_PER_GROUP: usize = 6;
    const ENTITY_TOKENS: usize = 3;
    const MIN_FILLER: usize = 8;

    fn token_budget(&self) -> usize {
        self.num_classes * Self::TOPIC_PER_CLASS
            + 2 * Self::IDENTITY_PER_GROUP
            + self.entities * Self::ENTITY_TOKENS
            + Self::MIN_FILLER
    }
}

/// Provenance manifest written next to generated corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub dataset_id: String,
    pub config: SynthConfig,
    pub group_counts: BTreeMap<String, usize>,
    pub class_counts: BTreeMap<String, usize>,
}

/// Generate corpus lines (JSON objects, one per record). Feed the result to
/// [`corpus_from_lines`] or write it to disk for the CLI pipeline.
pub fn generate_synthetic_lines(config: &SynthConfig) -> Result<(Vec<String>, SynthManifest)> {
    config.validate()?;
    let root = RngStream::new(config.seed, crate::rng::stream_id("synth", &[]));

    let topic_tokens: Vec<Vec<String>> = (0..config.num_classes)
        .map(|c| {
            (0..SynthConfig::TOPIC_PER_CLASS)
                .map(|i| format!("top{c}x{i}"))
                .collect()
        })
        .collect();
    let identity_tokens: Vec<Vec<String>> = (0..2)
        .map(|g| {
            (0..SynthConfig::IDENTITY_PER_GROUP)
                .map(|i| format!("idn{g}x{i}"))
                .collect()
        })
        .collect();
    let entity_tokens: Vec<Vec<String>> = (0..config.entities)
        .map(|e| {
            (0..SynthConfig::ENTITY_TOKENS)
                .map(|i| format!("ent{e}x{i}"))
                .collect()
        })
        .collect();
    let n_filler = config.vocab - config.token_budget() + SynthConfig::MIN_FILLER;
    let filler_tokens: Vec<String> = (0..n_filler).map(|i| format!("fil{i}")).collect();

    // Exact minority count so the subgroup ratio is reproducible.
    let n_minority = (config.n as f64 * config.subgroup_skew + 0.5).floor() as usize;
    let mut group_of: Vec<usize> = vec![0; config.n];
    for g in group_of.iter_mut().take(n_minority) {
        *g = 1;
    }
    root.derive("synth-groups", &[]).shuffle(&mut group_of);

    let mut lines = Vec::with_capacity(config.n);
    let mut group_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();

    for i in 0..config.n {
        let mut rng = root.derive("synth-doc", &[i as u64]);
        let group = group_of[i];
        let label = rng.below(config.num_classes as u64) as usize;
        let d = config.doc_len_min
            + rng.below((config.doc_len_max - config.doc_len_min + 1) as u64) as usize;

        let signal = if group == 1 { config.minority_signal } else { 1.0 };
        let n_topic = ((d as f64 * 0.35 * signal) + 0.5).floor().max(1.0) as usize;
        let n_identity = ((d as f64 * 0.25) + 0.5).floor().max(1.0) as usize;

        let mut words: Vec<String> = Vec::with_capacity(d + 2);
        for _ in 0..n_topic.min(d) {
            let pool = &topic_tokens[label];
            words.push(pool[rng.below(pool.len() as u64) as usize].clone());
        }
        for _ in 0..n_identity.min(d.saturating_sub(words.len())) {
            // with prob rho the token comes from the own-group pool,
            // otherwise from a uniformly chosen pool (no information)
            let source = if rng.uniform() < config.rho {
                group
            } else {
                rng.below(2) as usize
            };
            let pool = &identity_tokens[source];
            words.push(pool[rng.below(pool.len() as u64) as usize].clone());
        }
        while words.len() < d {
            words.push(filler_tokens[rng.below(filler_tokens.len() as u64) as usize].clone());
        }

        let mut attributes = BTreeMap::new();
        attributes.insert("group".to_string(), format!("g{group}"));
        for (e, pool) in entity_tokens.iter().enumerate() {
            let present = rng.uniform() < 0.15;
            if present {
                words.push(pool[rng.below(pool.len() as u64) as usize].clone());
                words.push(pool[rng.below(pool.len() as u64) as usize].clone());
            }
            attributes.insert(format!("entity_{e}"), if present { "1" } else { "0" }.to_string());
        }

        rng.shuffle(&mut words);

        *group_counts.entry(format!("g{group}")).or_insert(0) += 1;
        *class_counts.entry(format!("c{label}")).or_insert(0) += 1;

        let record = serde_json::json!({
            "id": format!("s{:06}", i),
            "text": words.join(" "),
            "label": format!("c{label}"),
            "attributes": attributes,
        });
        lines.push(record.to_string());
    }

    let manifest = SynthManifest {
        dataset_id: config.dataset_id(),
        config: config.clone(),
        group_counts,
        class_counts,
    };
    Ok((lines, manifest))
}

/// Generate and assemble a synthetic corpus in one step.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(Corpus, SynthManifest)> {
    let (lines, manifest) = generate_synthetic_lines(config)?;
    let options = LoadOptions {
        vocab_cap: config.vocab + 16,
        seed: config.seed,
        attributes: None,
    };
    let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
    let corpus = corpus_from_lines(refs, &options, config.dataset_id())?;
    Ok((corpus, manifest))
}
