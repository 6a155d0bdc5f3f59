//! Normalized keyword-weighted cross-entropy and its gradient.
//!
//! For a target sequence with per-token weights `λ` and `Λ = Σ λ_i`:
//!
//! ```text
//! L = -(1/Λ) Σ_i λ_i log softmax(z_i)[x_i]
//! ∂L/∂z_i = (λ_i/Λ) (softmax(z_i) - onehot(x_i))
//! ```
//!
//! With all weights equal to one this is the ordinary mean token
//! cross-entropy. Values are in nats.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use thiserror::Error;

use crate::spanmap::WeightVector;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("logit matrix must have at least 1 row and 2 columns, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("shape mismatch: {rows} logit rows, {targets} targets, {weights} weights")]
    LengthMismatch {
        rows: usize,
        targets: usize,
        weights: usize,
    },
    #[error("non-finite logit at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("target {target} at position {position} is outside the vocabulary (size {vocab})")]
    TargetOutOfRange { position: usize, target: u32, vocab: usize },
    #[error("gradient buffer is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    GradientShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("loss input line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Pre-softmax scores, one row per predicted position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Array2<f64>);

impl LogitMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, LossError> {
        check_logits(values.view())?;
        Ok(LogitMatrix(values))
    }

    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, LossError> {
        let arr = Array2::from_shape_vec((rows, cols), values).map_err(|_| LossError::BadShape { rows, cols })?;
        LogitMatrix::new(arr)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

fn check_logits(logits: ArrayView2<'_, f64>) -> Result<(), LossError> {
    let (rows, cols) = logits.dim();
    if rows == 0 || cols < 2 {
        return Err(LossError::BadShape { rows, cols });
    }
    for ((row, col), v) in logits.indexed_iter() {
        if !v.is_finite() {
            return Err(LossError::NonFinite { row, col });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    /// Weighted loss in nats.
    pub value: f64,
    /// Entry `i` is `-(λ_i/Λ) log p(x_i)`; these sum to `value`.
    pub per_token: Vec<f64>,
    pub gradient: Option<Array2<f64>>,
}

/// `log Σ exp(row)` with max subtraction.
pub fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Negative log-likelihood of `target` under the softmax of `row`.
pub fn token_nll(row: ArrayView1<'_, f64>, target: usize) -> f64 {
    log_sum_exp(row) - row[target]
}

fn check_inputs(logits: ArrayView2<'_, f64>, targets: &[u32], weights: &WeightVector) -> Result<(), LossError> {
    let (rows, cols) = logits.dim();
    if rows == 0 || cols < 2 {
        return Err(LossError::BadShape { rows, cols });
    }
    if targets.len() != rows || weights.len() != rows {
        return Err(LossError::LengthMismatch {
            rows,
            targets: targets.len(),
            weights: weights.len(),
        });
    }
    for (position, &target) in targets.iter().enumerate() {
        if target as usize >= cols {
            return Err(LossError::TargetOutOfRange {
                position,
                target,
                vocab: cols,
            });
        }
    }
    Ok(())
}

/// Core kernel over a borrowed logit block. Writes `scale · ∂L/∂logits`
/// into `grad` when given and returns the loss with per-token terms.
///
/// Finiteness of `logits` is the caller's responsibility here; the
/// [`LogitMatrix`] entry points check it.
pub fn weighted_ce_view(
    logits: ArrayView2<'_, f64>,
    targets: &[u32],
    weights: &WeightVector,
    grad: Option<(ArrayViewMut2<'_, f64>, f64)>,
) -> Result<(f64, Vec<f64>), LossError> {
    check_inputs(logits, targets, weights)?;
    let total = weights.total();
    let mut per_token = Vec::with_capacity(targets.len());

    match grad {
        None => {
            for ((row, &t), &lambda) in logits.outer_iter().zip(targets).zip(weights.lambdas()) {
                per_token.push(lambda / total * token_nll(row, t as usize));
            }
        }
        Some((mut g, scale)) => {
            if g.dim() != logits.dim() {
                return Err(LossError::GradientShape {
                    rows: g.nrows(),
                    cols: g.ncols(),
                    expected_rows: logits.nrows(),
                    expected_cols: logits.ncols(),
                });
            }
            for (((row, mut grow), &t), &lambda) in logits
                .outer_iter()
                .zip(g.axis_iter_mut(Axis(0)))
                .zip(targets)
                .zip(weights.lambdas())
            {
                let t = t as usize;
                let lse = log_sum_exp(row);
                let coef = lambda / total;
                per_token.push(coef * (lse - row[t]));
                let s = coef * scale;
                for (gv, &z) in grow.iter_mut().zip(row.iter()) {
                    *gv = s * (z - lse).exp();
                }
                grow[t] -= s;
            }
        }
    }
    let value = per_token.iter().sum();
    Ok((value, per_token))
}

/// Loss value and per-token contributions.
pub fn weighted_cross_entropy(
    logits: &LogitMatrix,
    targets: &[u32],
    weights: &WeightVector,
) -> Result<LossResult, LossError> {
    let (value, per_token) = weighted_ce_view(logits.view(), targets, weights, None)?;
    Ok(LossResult {
        value,
        per_token,
        gradient: None,
    })
}

/// `∂L/∂logits`, row `i` being `(λ_i/Λ)(softmax(z_i) - onehot(x_i))`.
pub fn loss_gradient(logits: &LogitMatrix, targets: &[u32], weights: &WeightVector) -> Result<Array2<f64>, LossError> {
    Ok(loss_and_gradient(logits, targets, weights)?
        .gradient
        .expect("gradient requested"))
}

pub fn loss_and_gradient(
    logits: &LogitMatrix,
    targets: &[u32],
    weights: &WeightVector,
) -> Result<LossResult, LossError> {
    let mut g = Array2::zeros(logits.0.dim());
    let (value, per_token) = weighted_ce_view(logits.view(), targets, weights, Some((g.view_mut(), 1.0)))?;
    Ok(LossResult {
        value,
        per_token,
        gradient: Some(g),
    })
}

/// Plain mean cross-entropy `(1/T) Σ -log p(x_i)`, the unweighted baseline.
pub fn mean_cross_entropy(logits: &LogitMatrix, targets: &[u32]) -> Result<f64, LossError> {
    let weights = WeightVector::uniform(targets.len().max(1)).expect("non-empty");
    check_inputs(logits.view(), targets, &weights)?;
    let sum: f64 = logits
        .view()
        .outer_iter()
        .zip(targets)
        .map(|(row, &t)| token_nll(row, t as usize))
        .sum();
    Ok(sum / targets.len() as f64)
}

/// A loss problem read from the text-matrix format: a `T V` header, `T`
/// rows of `V` logits, one row of `T` target ids, and one row of `T` weights.
/// Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInput {
    pub logits: LogitMatrix,
    pub targets: Vec<u32>,
    pub weights: WeightVector,
}

impl LossInput {
    pub fn parse(text: &str) -> Result<Self, LossError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let perr = |line: usize, reason: String| LossError::Parse { line, reason };
        let mut row = |what: &str, want: usize| -> Result<(usize, Vec<&str>), LossError> {
            let (n, l) = lines.next().ok_or_else(|| perr(0, format!("missing {what}")))?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != want {
                return Err(perr(
                    n,
                    format!("{what}: expected {want} values, found {}", fields.len()),
                ));
            }
            Ok((n, fields))
        };
        let (n, header) = row("header `T V`", 2)?;
        let dims: Vec<usize> = header
            .iter()
            .map(|f| f.parse().map_err(|_| perr(n, format!("`{f}` is not a size"))))
            .collect::<Result<_, _>>()?;
        let (t, v) = (dims[0], dims[1]);
        if t == 0 || v < 2 {
            return Err(LossError::BadShape { rows: t, cols: v });
        }
        let mut values = Vec::with_capacity(t * v);
        for r in 0..t {
            let (n, fields) = row(&format!("logit row {}", r + 1), v)?;
            for f in fields {
                values.push(
                    f.parse::<f64>()
                        .map_err(|_| perr(n, format!("`{f}` is not a number")))?,
                );
            }
        }
        let (n, fields) = row("target row", t)?;
        let targets = fields
            .iter()
            .map(|f| {
                f.parse::<u32>()
                    .map_err(|_| perr(n, format!("`{f}` is not a token id")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (n, fields) = row("weight row", t)?;
        let lambdas = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| perr(n, format!("`{f}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        let weights = WeightVector::from_lambdas(lambdas).map_err(|e| perr(n, e.to_string()))?;
        if let Some((n, _)) = lines.next() {
            return Err(perr(n, "unexpected trailing line".into()));
        }
        let logits = LogitMatrix::from_rows(t, v, values)?;
        check_inputs(logits.view(), &targets, &weights)?;
        Ok(LossInput {
            logits,
            targets,
            weights,
        })
    }
}
