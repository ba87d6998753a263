//! Confusion matrices and the classification metric suite.
//!
//! Unparsable responses are kept in a separate per-gold-label column: they
//! count toward a class's support and the accuracy denominator but are never a
//! true positive for any class.

mod tables;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

pub use tables::{format_percent, percent, render_difference, render_matrix, render_tables};

use crate::model::FallacyLabel;

const N: usize = FallacyLabel::COUNT;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
}

/// Rows are gold labels, columns predicted labels, both in code order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
    /// Unparsable predictions per gold label.
    pub unparsed: [u64; N],
}

impl ConfusionMatrix {
    pub fn record(&mut self, gold: FallacyLabel, pred: Option<FallacyLabel>) {
        match pred {
            Some(p) => self.counts[gold.index()][p.index()] += 1,
            None => self.unparsed[gold.index()] += 1,
        }
    }

    pub fn get(&self, gold: FallacyLabel, pred: FallacyLabel) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    /// Number of scored predictions, unparsable ones included.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unparsed.iter().sum::<u64>()
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    pub fn unparsed_total(&self) -> u64 {
        self.unparsed.iter().sum()
    }

    /// Gold instances of class `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() + self.unparsed[i]
    }

    /// Instances predicted as class `j`.
    pub fn predicted(&self, j: usize) -> u64 {
        (0..N).map(|i| self.counts[i][j]).sum()
    }
}

/// Builds a matrix from parallel label vectors.
pub fn confusion(gold: &[FallacyLabel], pred: &[FallacyLabel]) -> Result<ConfusionMatrix, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        m.record(g, Some(p));
    }
    Ok(m)
}

/// Like [`confusion`], with `None` marking an unparsable prediction.
pub fn confusion_with_unparsed(
    gold: &[FallacyLabel],
    pred: &[Option<FallacyLabel>],
) -> Result<ConfusionMatrix, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        m.record(g, p);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: FallacyLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
    pub unparsable_count: u64,
}

fn q(num: u64, den: u64) -> BigRational {
    if den == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("ratio of counts fits in f64")
}

/// Computes every metric from a matrix. A class that is never predicted has
/// precision 0, a class with no gold instances has recall 0, and F1 is 0
/// whenever precision + recall is 0. Macro averages always cover all six
/// classes; the weighted F1 uses gold support as weights.
///
/// Values are exact fractions of the counts rounded to `f64` once, so
/// algebraically equal quantities come out bit-identical.
pub fn report(matrix: &ConfusionMatrix) -> EvalReport {
    let total = matrix.total();
    let mut per_class = Vec::with_capacity(N);
    let (mut sum_p, mut sum_r, mut sum_f1, mut weighted) =
        (BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero());
    for label in FallacyLabel::ALL {
        let i = label.index();
        let tp = matrix.counts[i][i];
        let support = matrix.support(i);
        let predicted = matrix.predicted(i);
        let precision = q(tp, predicted);
        let recall = q(tp, support);
        // 2PR / (P + R) reduces to 2tp / (support + predicted).
        let f1 = q(2 * tp, support + predicted);
        per_class.push(ClassMetrics {
            label,
            precision: to_f64(&precision),
            recall: to_f64(&recall),
            f1: to_f64(&f1),
            support,
        });
        weighted += &f1 * BigInt::from(support);
        sum_p += precision;
        sum_r += recall;
        sum_f1 += f1;
    }
    let n = BigInt::from(N);
    let over_total = |r: BigRational| if total == 0 { 0.0 } else { to_f64(&(r / BigInt::from(total))) };

    EvalReport {
        accuracy: to_f64(&q(matrix.trace(), total)),
        macro_precision: to_f64(&(sum_p / &n)),
        macro_recall: to_f64(&(sum_r / &n)),
        macro_f1: to_f64(&(sum_f1 / &n)),
        weighted_f1: over_total(weighted),
        per_class,
        matrix: matrix.clone(),
        unparsable_count: matrix.unparsed_total(),
    }
}

/// Condition counts minus base counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceMatrix {
    pub deltas: [[i64; N]; N],
    pub unparsed: [i64; N],
}

impl DifferenceMatrix {
    /// Sum over all cells, unparsable column included.
    pub fn sum(&self) -> i64 {
        self.deltas.iter().flatten().sum::<i64>() + self.unparsed.iter().sum::<i64>()
    }

    pub fn trace(&self) -> i64 {
        (0..N).map(|i| self.deltas[i][i]).sum()
    }
}

pub fn difference(cond: &ConfusionMatrix, base: &ConfusionMatrix) -> DifferenceMatrix {
    let signed = |a: u64, b: u64| a as i64 - b as i64;
    DifferenceMatrix {
        deltas: std::array::from_fn(|i| std::array::from_fn(|j| signed(cond.counts[i][j], base.counts[i][j]))),
        unparsed: std::array::from_fn(|i| signed(cond.unparsed[i], base.unparsed[i])),
    }
}
