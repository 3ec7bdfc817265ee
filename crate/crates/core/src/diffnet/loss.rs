//! Identity losses: softmax cross-entropy and batch-hard triplet.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Tensor,
    /// Discrete choices made by the loss (hardest positive / negative,
    /// active hinges). Used by the gradient checker to spot kinks.
    pub selections: Vec<usize>,
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossGrad> {
    let (n, k) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::Shape {
            op: "softmax_cross_entropy labels",
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = 0.0;
    for ((row, grow), &label) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(labels)
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (g, v) in grow.iter_mut().zip(row) {
            *g = (v - log_z).exp() / n as f64;
        }
        grow[label] -= 1.0 / n as f64;
    }
    Ok(LossGrad {
        loss: loss / n as f64,
        grad,
        selections: Vec::new(),
    })
}

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;

/// Batch-hard triplet loss on L2-normalised embeddings.
///
/// For every anchor with at least one positive in the batch, the loss is
/// `max(0, d(a, hardest positive) - d(a, hardest negative) + margin)` with
/// Euclidean distances; the result averages over those anchors.
pub fn batch_hard_triplet(embeddings: &Tensor, labels: &[usize], margin: f64) -> Result<LossGrad> {
    let (n, d) = embeddings.dims2("batch_hard_triplet")?;
    if labels.len() != n {
        return Err(Error::Shape {
            op: "batch_hard_triplet labels",
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::invalid(
            "triplet batch needs at least two identities",
        ));
    }
    let has_positive = |i: usize| (0..n).any(|j| j != i && labels[j] == labels[i]);
    if !(0..n).any(has_positive) {
        return Err(Error::invalid(
            "triplet batch needs two samples of some identity",
        ));
    }

    let raw = embeddings.data();
    let norms: Vec<f64> = raw
        .chunks(d)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::Numerical(
            "zero embedding cannot be normalised".into(),
        ));
    }
    let unit: Vec<f64> = raw
        .chunks(d)
        .zip(&norms)
        .flat_map(|(r, nv)| r.iter().map(move |v| v / nv))
        .collect();
    let row = |i: usize| &unit[i * d..(i + 1) * d];
    let dist = |i: usize, j: usize| -> f64 {
        row(i)
            .iter()
            .zip(row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };

    // Gradient w.r.t. the unit vectors first.
    let mut g_unit = vec![0.0; n * d];
    let mut loss = 0.0;
    let mut anchors = 0usize;
    let mut selections = Vec::new();
    let add_dist_grad = |g: &mut [f64], i: usize, j: usize, dij: f64, scale: f64| {
        if dij <= 1e-12 {
            return;
        }
        for k in 0..d {
            let diff = (unit[i * d + k] - unit[j * d + k]) / dij;
            g[i * d + k] += scale * diff;
            g[j * d + k] -= scale * diff;
        }
    };
    let mut terms = Vec::new();
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let dj = dist(a, j);
            if labels[j] == labels[a] {
                if hardest_pos.is_none_or(|(_, v)| dj > v) {
                    hardest_pos = Some((j, dj));
                }
            } else if hardest_neg.is_none_or(|(_, v)| dj < v) {
                hardest_neg = Some((j, dj));
            }
        }
        let (Some((p, dp)), Some((q, dn))) = (hardest_pos, hardest_neg) else {
            continue;
        };
        anchors += 1;
        let hinge = dp - dn + margin;
        selections.extend([p, q, usize::from(hinge > 0.0)]);
        if hinge > 0.0 {
            loss += hinge;
            terms.push((a, p, dp, q, dn));
        }
    }
    let scale = 1.0 / anchors as f64;
    for (a, p, dp, q, dn) in terms {
        add_dist_grad(&mut g_unit, a, p, dp, scale);
        add_dist_grad(&mut g_unit, a, q, dn, -scale);
    }

    // Back through the normalisation u = e / |e|.
    let mut grad = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let u = row(i);
        let gu = &g_unit[i * d..(i + 1) * d];
        let dot: f64 = u.iter().zip(gu).map(|(a, b)| a * b).sum();
        for (k, gv) in grad.data_mut()[i * d..(i + 1) * d].iter_mut().enumerate() {
            *gv = (gu[k] - dot * u[k]) / norms[i];
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad,
        selections,
    })
}

/// Row-wise L2 normalisation.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let (_, d) = x.dims2("l2_normalize_rows")?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numerical(
                "zero embedding cannot be normalised".into(),
            ));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}
