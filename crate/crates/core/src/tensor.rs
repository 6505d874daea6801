//! Minimal dense numeric core: row-major matrices, the layers needed by the
//! split model (embedding, mean pooling, affine, ReLU, softmax cross-entropy)
//! with reverse-mode gradients, plain SGD, and a finite-difference gradient
//! checker. Everything is f64 and single-threaded by design.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Dense row-major matrix of finite f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Validates `data.len() == rows * cols` and that every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry {v} in matrix")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Fan-based uniform init in ±sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| (rng.uniform() * 2.0 - 1.0) * limit)
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn from_row(row: &[f64]) -> Matrix {
        Matrix {
            rows: 1,
            cols: row.len(),
            data: row.to_vec(),
        }
    }

    /// Stack per-example rows into a batch matrix. All rows must agree in length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows in from_rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// self (m×k) · other (k×n) -> m×n.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// selfᵀ (k×m) · other (m×n) -> k×n, without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "matmul_tn {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        for b in 0..m {
            for i in 0..k {
                let a = self.data[b * k + i];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[b * n..(b + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Matrix {
            rows: k,
            cols: n,
            data: out,
        })
    }

    /// self (m×k) · otherᵀ (k×n given as n×k) -> m×n.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_nt {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ── Layers: forward + backward ──────────────────────────────────────────

/// x (B×in) · w (in×out) + b (1×out broadcast over rows).
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::Dimension(format!(
            "bias must be 1x{}, got {}x{}",
            w.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        for (v, bv) in row.iter_mut().zip(b.row(0)) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Gradients of the affine layer: returns (dx, dw, db).
pub fn affine_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let dx = dy.matmul_nt(w)?;
    let dw = x.matmul_tn(dy)?;
    let mut db = Matrix::zeros(1, dy.cols());
    for r in 0..dy.rows() {
        for (acc, v) in db.row_mut(0).iter_mut().zip(dy.row(r)) {
            *acc += v;
        }
    }
    Ok((dx, dw, db))
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Matrix {
        rows: x.rows(),
        cols: x.cols(),
        data,
    }
}

/// dy masked by the forward input's sign.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Matrix {
        rows: x.rows(),
        cols: x.cols(),
        data,
    }
}

/// Mean over rows -> 1×cols. Requires at least one row.
pub fn mean_pool_forward(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Dimension("mean_pool of zero rows".into()));
    }
    let mut out = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (acc, v) in out.iter_mut().zip(x.row(r)) {
            *acc += v;
        }
    }
    let inv = 1.0 / x.rows() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Matrix {
        rows: 1,
        cols: x.cols(),
        data: out,
    })
}

/// Spread the pooled gradient back over the `n_rows` pooled rows.
pub fn mean_pool_backward(n_rows: usize, dy: &Matrix) -> Matrix {
    let inv = 1.0 / n_rows as f64;
    let mut out = Matrix::zeros(n_rows, dy.cols());
    for r in 0..n_rows {
        for (g, v) in out.row_mut(r).iter_mut().zip(dy.row(0)) {
            *g = v * inv;
        }
    }
    out
}

/// Gather embedding rows for a token id sequence.
pub fn embedding_forward(table: &Matrix, ids: &[usize]) -> Result<Matrix> {
    let mut out = Matrix::zeros(ids.len(), table.cols());
    for (r, &id) in ids.iter().enumerate() {
        if id >= table.rows() {
            return Err(Error::Domain(format!(
                "token id {id} out of range for vocab of {}",
                table.rows()
            )));
        }
        out.row_mut(r).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Scatter-add per-row gradients into the embedding table's gradient buffer.
pub fn embedding_backward(ids: &[usize], d_rows: &Matrix, table_grad: &mut Matrix) {
    for (r, &id) in ids.iter().enumerate() {
        for (acc, v) in table_grad.row_mut(id).iter_mut().zip(d_rows.row(r)) {
            *acc += v;
        }
    }
}

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch plus the softmax probabilities
/// (kept as the backward cache).
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        // log-prob via logsumexp on the raw logits for stability
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    Ok((loss / labels.len() as f64, probs))
}

/// d(mean CE)/d(logits) = (probs - onehot) / batch.
pub fn softmax_cross_entropy_backward(probs: &Matrix, labels: &[usize]) -> Matrix {
    let mut d = probs.clone();
    let inv = 1.0 / labels.len() as f64;
    for (r, &y) in labels.iter().enumerate() {
        let row = d.row_mut(r);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    d
}

// ── Parameters and SGD ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Frozen params keep their values through sgd_step (the reserved MASK
    /// embedding row lives in a frozen-by-row scheme instead; this flag is
    /// for whole matrices).
    pub frozen: bool,
}

/// Named parameters with gradient buffers of identical shape, in a stable
/// insertion order so serialization and SGD walk them deterministically.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter {name}"
        );
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad,
            frozen: false,
        });
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> &Matrix {
        &self.entries[self.index_of(name).expect("unknown parameter")].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        let i = self.index_of(name).expect("unknown parameter");
        &mut self.entries[i].value
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Matrix {
        let i = self.index_of(name).expect("unknown parameter");
        &mut self.entries[i].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// One SGD update: value -= lr · grad, then gradients are zeroed.
    /// A non-finite gradient aborts with a divergence error.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        for p in &self.entries {
            if !p.grad.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in parameter {}",
                    p.name
                )));
            }
        }
        for p in &mut self.entries {
            if p.frozen {
                p.grad.data_mut().fill(0.0);
                continue;
            }
            let g = std::mem::replace(&mut p.grad, Matrix::zeros(0, 0));
            for (v, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * gv;
            }
            p.grad = Matrix::zeros(p.value.rows(), p.value.cols());
        }
        Ok(())
    }
}

// ── Gradient checking ────────────────────────────────────────────────────

fn relative_error(a: f64, n: f64) -> f64 {
    if a.abs() < 1e-8 && n.abs() < 1e-8 {
        0.0
    } else {
        (a - n).abs() / a.abs().max(n.abs())
    }
}

/// Compare the gradients currently stored in `params` (filled by the
/// caller's backward pass) against central finite differences of `loss`,
/// returning the worst relative error over every parameter coordinate.
pub fn gradient_check<F>(params: &mut ParamSet, mut loss: F, h: f64) -> Result<f64>
where
    F: FnMut(&ParamSet) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Parameter(format!("step h must be positive, got {h}")));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        for i in 0..analytic[pi].len() {
            let orig = params.entries[pi].value.data()[i];
            params.entries[pi].value.data_mut()[i] = orig + h;
            let up = loss(params);
            params.entries[pi].value.data_mut()[i] = orig - h;
            let down = loss(params);
            params.entries[pi].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[pi][i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_case() {
        let x = mat(1, 2, &[1.0, 2.0]);
        let w = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = mat(1, 2, &[0.0, 0.0]);
        assert_eq!(affine_forward(&x, &w, &b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_hand_arithmetic() {
        let x = mat(1, 2, &[1.0, 1.0]);
        let w = mat(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let b = mat(1, 2, &[1.0, 1.0]);
        assert_eq!(affine_forward(&x, &w, &b).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_shape_mismatch_errors() {
        let x = mat(1, 3, &[1.0, 1.0, 1.0]);
        let w = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = mat(1, 2, &[0.0, 0.0]);
        assert!(matches!(
            affine_forward(&x, &w, &b),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = RngStream::new(99, 0);
        let a = Matrix::glorot(3, 4, &mut rng);
        let b = Matrix::glorot(4, 2, &mut rng);
        let fast = a.matmul(&b).unwrap();
        // independent oracle: plain ijk accumulation
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.at(i, p) * b.at(p, j);
                }
                assert!((fast.at(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_transposed_variants_agree() {
        let mut rng = RngStream::new(7, 1);
        let a = Matrix::glorot(5, 3, &mut rng);
        let b = Matrix::glorot(5, 4, &mut rng);
        let tn = a.matmul_tn(&b).unwrap(); // aᵀ·b : 3x4
        for i in 0..3 {
            for j in 0..4 {
                let mut acc = 0.0;
                for p in 0..5 {
                    acc += a.at(p, i) * b.at(p, j);
                }
                assert!((tn.at(i, j) - acc).abs() < 1e-12);
            }
        }
        let c = Matrix::glorot(4, 3, &mut rng);
        let nt = a.matmul_nt(&c).unwrap(); // a·cᵀ : 5x4
        for i in 0..5 {
            for j in 0..4 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += a.at(i, p) * c.at(j, p);
                }
                assert!((nt.at(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = mat(1, 3, &[-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mean_pool_of_identical_rows_is_that_row() {
        let x = mat(3, 2, &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
        assert_eq!(mean_pool_forward(&x).unwrap().data(), &[0.5, -1.5]);
    }

    #[test]
    fn mean_pool_is_permutation_invariant() {
        let x = mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = mat(3, 2, &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0]);
        let a = mean_pool_forward(&x).unwrap();
        let b = mean_pool_forward(&y).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_four_classes_is_ln4() {
        let logits = mat(1, 4, &[0.0, 0.0, 0.0, 0.0]);
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = RngStream::new(3, 3);
        let logits = Matrix::glorot(8, 5, &mut rng);
        let p = softmax(&logits);
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn label_out_of_range_is_domain_error() {
        let logits = mat(1, 3, &[0.1, 0.2, 0.3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sgd_basic_step() {
        let mut params = ParamSet::new();
        params.add("w", mat(1, 1, &[1.0]));
        params.grad_mut("w").data_mut()[0] = 2.0;
        params.sgd_step(0.1).unwrap();
        assert!((params.get("w").data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(params.entries[0].grad.data()[0], 0.0);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let mut params = ParamSet::new();
        params.add("w", mat(2, 1, &[0.3, -0.7]));
        params.grad_mut("w").data_mut().copy_from_slice(&[5.0, 5.0]);
        params.sgd_step(0.0).unwrap();
        assert_eq!(params.get("w").data(), &[0.3, -0.7]);
    }

    #[test]
    fn sgd_two_steps_sum_like_one() {
        // fixed gradient g applied twice at lr vs once at 2·lr
        let g = [1.5, -2.0];
        let mut twice = ParamSet::new();
        twice.add("w", mat(1, 2, &[0.0, 0.0]));
        for _ in 0..2 {
            twice.grad_mut("w").data_mut().copy_from_slice(&g);
            twice.sgd_step(0.1).unwrap();
        }
        let mut once = ParamSet::new();
        once.add("w", mat(1, 2, &[0.0, 0.0]));
        once.grad_mut("w").data_mut().copy_from_slice(&g);
        once.sgd_step(0.2).unwrap();
        for (a, b) in twice.get("w").data().iter().zip(once.get("w").data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut params = ParamSet::new();
        params.add("w", mat(1, 1, &[1.0]));
        params.grad_mut("w").data_mut()[0] = f64::NAN;
        assert!(matches!(params.sgd_step(0.1), Err(Error::Divergence(_))));
    }

    #[test]
    fn gradient_check_affine_relu_ce() {
        // tiny 1-layer model: logits = relu(x·w + b), CE loss
        let mut rng = RngStream::new(11, 0);
        let x = Matrix::glorot(4, 3, &mut rng);
        let labels = [0usize, 1, 2, 1];
        let mut params = ParamSet::new();
        params.add("w", Matrix::glorot(3, 3, &mut rng));
        params.add("b", Matrix::zeros(1, 3));

        let fwd = |p: &ParamSet| -> (f64, Matrix, Matrix) {
            let z = affine_forward(&x, p.get("w"), p.get("b")).unwrap();
            let a = relu_forward(&z);
            let (loss, probs) = softmax_cross_entropy(&a, &labels).unwrap();
            (loss, z, probs)
        };
        let (_, z, probs) = fwd(&params);
        let da = softmax_cross_entropy_backward(&probs, &labels);
        let dz = relu_backward(&z, &da);
        let (_, dw, db) = affine_backward(&x, params.get("w"), &dz).unwrap();
        *params.grad_mut("w") = dw;
        *params.grad_mut("b") = db;

        let worst = gradient_check(&mut params, |p| fwd(p).0, 1e-4).unwrap();
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradient_check_constant_model_has_zero_grads() {
        let mut params = ParamSet::new();
        params.add("w", mat(1, 2, &[0.4, -0.2]));
        // loss ignores parameters; analytic grads stay zero
        let worst = gradient_check(&mut params, |_| 3.5, 1e-4).unwrap();
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn doubling_loss_doubles_gradients() {
        let mut rng = RngStream::new(21, 0);
        let x = Matrix::glorot(2, 2, &mut rng);
        let labels = [0usize, 1];
        let mut params = ParamSet::new();
        params.add("w", Matrix::glorot(2, 2, &mut rng));
        params.add("b", Matrix::zeros(1, 2));

        let grads_for = |params: &ParamSet, scale: f64| -> Vec<f64> {
            let z = affine_forward(&x, params.get("w"), params.get("b")).unwrap();
            let (_, probs) = softmax_cross_entropy(&z, &labels).unwrap();
            let mut dz = softmax_cross_entropy_backward(&probs, &labels);
            dz.data_mut().iter_mut().for_each(|v| *v *= scale);
            let (_, dw, _) = affine_backward(&x, params.get("w"), &dz).unwrap();
            dw.data().to_vec()
        };
        let g1 = grads_for(&params, 1.0);
        let g2 = grads_for(&params, 2.0);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_check_rejects_nonpositive_h() {
        let mut params = ParamSet::new();
        params.add("w", mat(1, 1, &[1.0]));
        assert!(matches!(
            gradient_check(&mut params, |_| 0.0, 0.0),
            Err(Error::Parameter(_))
        ));
    }
}
