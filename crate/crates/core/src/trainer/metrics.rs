use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::jaccard;
use crate::tensor::Tensor;

/// One-vs-rest rates for a single positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize], positive: usize) -> Result<BinaryMetrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "need equal, nonempty prediction and label lists (got {} and {})",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == positive, y == positive) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut degenerate = false;
    let acc = (tp + tn) as f64 / predictions.len() as f64;
    let sen = ratio(tp, tp + fn_, &mut degenerate);
    let spe = ratio(tn, tn + fp, &mut degenerate);
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let f1 = if precision + sen > 0.0 {
        2.0 * precision * sen / (precision + sen)
    } else {
        degenerate = true;
        0.0
    };
    Ok(BinaryMetrics {
        acc,
        sen,
        spe,
        f1,
        degenerate,
    })
}

/// Classification summary: binary tasks report class 1 as positive,
/// multiclass tasks macro-average the one-vs-rest rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub degenerate: bool,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn classification_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassificationMetrics> {
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::Invalid(format!("class index outside {n_classes} classes")));
        }
        confusion[y][p] += 1;
    }
    let acc = predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / predictions.len().max(1) as f64;
    let per_class: Vec<BinaryMetrics> = if n_classes == 2 {
        vec![compute_metrics(predictions, labels, 1)?]
    } else {
        (0..n_classes)
            .map(|c| compute_metrics(predictions, labels, c))
            .collect::<Result<_>>()?
    };
    let mean = |f: fn(&BinaryMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    Ok(ClassificationMetrics {
        acc,
        sen: mean(|m| m.sen),
        spe: mean(|m| m.spe),
        f1: mean(|m| m.f1),
        degenerate: per_class.iter().any(|m| m.degenerate),
        confusion,
    })
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half. `None` if either side is empty.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Binary: AUC of the class-1 probability. Multiclass: macro one-vs-rest.
pub fn multiclass_auc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Option<f64> {
    let classes: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
    let values: Vec<f64> = classes
        .iter()
        .filter_map(|&c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            auc(&scores, &pos)
        })
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!("rmse of {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub jaccard: f64,
    /// Set when the predicted collection was empty.
    pub empty_prediction: bool,
}

/// Mean over predicted circuits of their Jaccard with a matched truth
/// circuit. Pairs are matched greedily, largest Jaccard first, each truth
/// circuit at most once; unmatched predictions score 0.
pub fn circuit_recovery(predicted: &[Vec<usize>], truth: &[Vec<usize>]) -> Recovery {
    if predicted.is_empty() {
        return Recovery {
            jaccard: 0.0,
            empty_prediction: true,
        };
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (p, pc) in predicted.iter().enumerate() {
        for (q, tc) in truth.iter().enumerate() {
            pairs.push((jaccard(pc, tc), p, q));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_q = vec![false; truth.len()];
    let mut total = 0.0;
    for (j, p, q) in pairs {
        if !used_p[p] && !used_q[q] {
            used_p[p] = true;
            used_q[q] = true;
            total += j;
        }
    }
    Recovery {
        jaccard: total / predicted.len() as f64,
        empty_prediction: false,
    }
}
