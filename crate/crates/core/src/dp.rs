//! Local differential privacy primitives.
//!
//! The release mechanism is word-level: two inputs are adjacent when they
//! differ in at most one word. Representations are min-max normalized into
//! [0,1] so each element has sensitivity Δf = 1, then perturbed with i.i.d.
//! Laplace(0, b) noise at scale b = Δf/ε. Masking a μ-fraction of words
//! before extraction lowers the effective budget to
//! ε′ = ln((1−μ)·e^ε + μ), which this module's accountant computes in a
//! numerically stable form.

use serde::{Deserialize, Serialize};

use crate::data::{Document, MASK_ID};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Serde adapter for budget fields that may be infinite (the non-private
/// sentinel). JSON has no Infinity literal, so it travels as the string
/// "inf".
pub mod maybe_inf {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    struct MaybeInf;

    impl Visitor<'_> for MaybeInf {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            write!(f, "a number or the string \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                other => Err(de::Error::custom(format!("expected \"inf\", got {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(MaybeInf)
    }
}

/// The single source of privacy truth: budget ε, word dropout rate μ,
/// fixed δ = 0, element sensitivity Δf, and the derived Laplace scale and
/// effective budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    #[serde(with = "maybe_inf")]
    pub epsilon: f64,
    pub mu: f64,
    pub delta: f64,
    pub sensitivity: f64,
    pub scale: f64,
    #[serde(with = "maybe_inf")]
    pub epsilon_effective: f64,
}

impl PrivacyParams {
    /// Budget ε with dropout rate μ at the default element sensitivity Δf = 1.
    pub fn new(epsilon: f64, mu: f64) -> Result<PrivacyParams> {
        PrivacyParams::with_sensitivity(epsilon, mu, 1.0)
    }

    pub fn with_sensitivity(epsilon: f64, mu: f64, sensitivity: f64) -> Result<PrivacyParams> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Parameter(format!("mu must be in [0,1], got {mu}")));
        }
        if !sensitivity.is_finite() || sensitivity <= 0.0 {
            return Err(Error::Parameter(format!(
                "sensitivity must be positive and finite, got {sensitivity}"
            )));
        }
        let scale = if epsilon.is_infinite() {
            0.0
        } else {
            sensitivity / epsilon
        };
        Ok(PrivacyParams {
            epsilon,
            mu,
            delta: 0.0,
            sensitivity,
            scale,
            epsilon_effective: epsilon_effective(epsilon, mu)?,
        })
    }

    /// Sentinel for non-private training: ε = ∞, μ = 0, zero noise.
    pub fn non_private() -> PrivacyParams {
        PrivacyParams {
            epsilon: f64::INFINITY,
            mu: 0.0,
            delta: 0.0,
            sensitivity: 1.0,
            scale: 0.0,
            epsilon_effective: f64::INFINITY,
        }
    }

    pub fn is_non_private(&self) -> bool {
        self.epsilon.is_infinite() && self.mu == 0.0
    }

    /// Re-checks the struct invariants; used when params arrive from disk.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = PrivacyParams::with_sensitivity(self.epsilon, self.mu, self.sensitivity)?;
        if self.delta != 0.0 {
            return Err(Error::Parameter(format!(
                "delta must be 0 for the Laplace mechanism, got {}",
                self.delta
            )));
        }
        if !close(self.scale, rebuilt.scale) {
            return Err(Error::Parameter(format!(
                "scale {} inconsistent with sensitivity/epsilon = {}",
                self.scale, rebuilt.scale
            )));
        }
        if !close(self.epsilon_effective, rebuilt.epsilon_effective) {
            return Err(Error::Parameter(format!(
                "epsilon_effective {} inconsistent with (epsilon, mu); expected {}",
                self.epsilon_effective, rebuilt.epsilon_effective
            )));
        }
        Ok(())
    }
}

/// Tolerant float equality for cross-writer file validation: other
/// implementations may compute the same quantity with a different operation
/// order, so exact bit equality is too strict.
fn close(a: f64, b: f64) -> bool {
    if a == b {
        return true; // covers both infinite
    }
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Whether a stated effective budget agrees with what (ε, μ) imply, up to
/// the cross-writer tolerance.
pub fn accountant_consistent(epsilon: f64, mu: f64, stated: f64) -> bool {
    match epsilon_effective(epsilon, mu) {
        Ok(expected) => close(stated, expected),
        Err(_) => false,
    }
}

/// Effective privacy budget after masking a μ-fraction of words:
/// ε′ = ln((1−μ)·e^ε + μ).
///
/// Evaluated as ε + ln((1−μ) + μ·e^(−ε)) so large budgets do not overflow.
pub fn epsilon_effective(epsilon: f64, mu: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Parameter(format!("mu must be in [0,1], got {mu}")));
    }
    if mu == 1.0 {
        return Ok(0.0);
    }
    if mu == 0.0 || epsilon.is_infinite() {
        return Ok(epsilon);
    }
    Ok(epsilon + ((1.0 - mu) + mu * (-epsilon).exp()).ln())
}

// ── Laplace sampling ─────────────────────────────────────────────────────

/// Inverse CDF of Laplace(0, b): x = −b·sgn(u−½)·ln(1−2|u−½|) for u ∈ (0,1).
pub fn laplace_inverse_cdf(u: f64, b: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -b * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// CDF of Laplace(0, b); the analytic reference for goodness-of-fit tests.
pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// i.i.d. noise coordinates drawn from Laplace(0, b).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub values: Vec<f64>,
}

impl NoiseVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Draw k i.i.d. Laplace(0, b) values by inverse transform sampling.
pub fn sample_laplace(rng: &mut RngStream, b: f64, k: usize) -> Result<NoiseVector> {
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::Parameter(format!(
            "laplace scale must be positive, got {b}"
        )));
    }
    if k == 0 {
        return Err(Error::Parameter("noise dimension must be at least 1".into()));
    }
    let values = (0..k)
        .map(|_| laplace_inverse_cdf(rng.uniform_open(), b))
        .collect();
    Ok(NoiseVector { values })
}

// ── Min-max normalization ───────────────────────────────────────────────

/// Backward cache for [`normalize_minmax_cached`]: positions of the
/// (first) min and max plus 1/(max−min); zero for the degenerate case.
#[derive(Debug, Clone, Copy)]
pub struct NormCache {
    pub argmin: usize,
    pub argmax: usize,
    pub inv_range: f64,
}

/// Map each coordinate through (x_i − min) / (max − min) into [0,1].
/// A constant vector maps to all zeros.
pub fn normalize_minmax(x: &[f64]) -> Result<Vec<f64>> {
    normalize_minmax_cached(x).map(|(y, _)| y)
}

pub fn normalize_minmax_cached(x: &[f64]) -> Result<(Vec<f64>, NormCache)> {
    if x.is_empty() {
        return Err(Error::Dimension("cannot normalize an empty vector".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in representation".into()));
    }
    let mut argmin = 0;
    let mut argmax = 0;
    for (i, &v) in x.iter().enumerate() {
        if v < x[argmin] {
            argmin = i;
        }
        if v > x[argmax] {
            argmax = i;
        }
    }
    let range = x[argmax] - x[argmin];
    if range == 0.0 {
        return Ok((
            vec![0.0; x.len()],
            NormCache {
                argmin,
                argmax,
                inv_range: 0.0,
            },
        ));
    }
    // Division keeps the endpoints exact: monotone rounding gives
    // (x−min)/range ≤ 1 for every x, with max ↦ 1.0 and min ↦ 0.0 exactly.
    let min = x[argmin];
    let y = x.iter().map(|v| (v - min) / range).collect();
    Ok((
        y,
        NormCache {
            argmin,
            argmax,
            inv_range: 1.0 / range,
        },
    ))
}

/// Gradient of min-max normalization. With S = Σ dy and T = Σ dy·y:
/// dx_j = dy_j/R − 1[j=argmin]·(S−T)/R − 1[j=argmax]·T/R.
pub fn normalize_backward(cache: &NormCache, y: &[f64], dy: &[f64]) -> Vec<f64> {
    if cache.inv_range == 0.0 {
        return vec![0.0; dy.len()];
    }
    let s: f64 = dy.iter().sum();
    let t: f64 = dy.iter().zip(y).map(|(g, v)| g * v).sum();
    let mut dx: Vec<f64> = dy.iter().map(|g| g * cache.inv_range).collect();
    dx[cache.argmin] -= (s - t) * cache.inv_range;
    dx[cache.argmax] -= t * cache.inv_range;
    dx
}

// ── Perturbation ─────────────────────────────────────────────────────────

/// Add i.i.d. Laplace(0, b) noise to a normalized representation.
///
/// Every coordinate must already lie in [0,1]; that is what makes Δf = 1
/// valid, so out-of-range input is a sensitivity violation, not a warning.
/// No clipping is applied after the noise. At the non-private sentinel
/// (scale 0) the input is returned unchanged and no draws are consumed.
pub fn perturb(x: &[f64], params: &PrivacyParams, rng: &mut RngStream) -> Result<Vec<f64>> {
    params.validate()?;
    for (i, &v) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::SensitivityViolation(format!(
                "coordinate {i} = {v} outside [0,1]; run normalization before perturbation"
            )));
        }
    }
    if params.scale == 0.0 {
        return Ok(x.to_vec());
    }
    let noise = sample_laplace(rng, params.scale, x.len())?;
    Ok(x.iter().zip(&noise.values).map(|(v, r)| v + r).collect())
}

// ── Word dropout ─────────────────────────────────────────────────────────

/// Number of positions to mask: nearest integer to d·μ, ties rounded up.
pub fn mask_count(d: usize, mu: f64) -> usize {
    ((d as f64 * mu) + 0.5).floor().min(d as f64) as usize
}

/// The dropout vector I_n as the set of zeroed (masked) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskVector {
    pub length: usize,
    pub zero_positions: Vec<usize>,
}

impl MaskVector {
    /// Uniformly random mask with exactly `mask_count(length, mu)` zeros.
    pub fn random(length: usize, mu: f64, rng: &mut RngStream) -> Result<MaskVector> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Parameter(format!("mu must be in [0,1], got {mu}")));
        }
        let k = mask_count(length, mu);
        Ok(MaskVector {
            length,
            zero_positions: rng.choose(length, k),
        })
    }

    /// User-specified mask over the given positions.
    pub fn user(length: usize, mut positions: Vec<usize>) -> Result<MaskVector> {
        positions.sort_unstable();
        positions.dedup();
        if let Some(&bad) = positions.iter().find(|&&p| p >= length) {
            return Err(Error::Parameter(format!(
                "mask position {bad} out of range for length {length}"
            )));
        }
        Ok(MaskVector {
            length,
            zero_positions: positions,
        })
    }
}

/// Replace a μ-fraction of tokens with the reserved MASK token.
///
/// With no user mask the zero positions are chosen uniformly without
/// replacement. A user mask must match the document length exactly.
pub fn word_dropout(
    doc: &Document,
    mu: f64,
    rng: &mut RngStream,
    user_mask: Option<&MaskVector>,
) -> Result<Document> {
    let mask = match user_mask {
        Some(m) => {
            if m.length != doc.tokens.len() {
                return Err(Error::Parameter(format!(
                    "mask length {} does not match document length {}",
                    m.length,
                    doc.tokens.len()
                )));
            }
            m.clone()
        }
        None => MaskVector::random(doc.tokens.len(), mu, rng)?,
    };
    let mut tokens = doc.tokens.clone();
    for &p in &mask.zero_positions {
        tokens[p] = MASK_ID;
    }
    Ok(Document {
        record_id: doc.record_id.clone(),
        tokens,
        label: doc.label,
        attributes: doc.attributes.clone(),
    })
}

// ── Privacy certificate ──────────────────────────────────────────────────

/// Exact log density ratio of the Laplace mechanism at an observed output:
/// Σ_i (|o_i − x′_i| − |o_i − x_i|) / b.
///
/// For adjacent normalized inputs (||x − x′||₁ ≤ Δf) the triangle inequality
/// bounds this by ε for every output, which is the Laplace-mechanism privacy
/// statement in checkable form. Test-side verifier; requires finite ε.
pub fn dp_ratio_certificate(
    x: &[f64],
    x_adj: &[f64],
    output: &[f64],
    params: &PrivacyParams,
) -> f64 {
    debug_assert!(params.scale > 0.0, "certificate needs a finite budget");
    debug_assert_eq!(x.len(), x_adj.len());
    debug_assert_eq!(x.len(), output.len());
    let mut sum = 0.0;
    for i in 0..x.len() {
        sum += (output[i] - x_adj[i]).abs() - (output[i] - x[i]).abs();
    }
    sum / params.scale
}
