use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Held-out classification metrics. `None` marks a metric that is undefined
/// for the given test set (never silently reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

impl ClassifierMetrics {
    pub fn rows(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("Accuracy", self.accuracy),
            ("Precision", self.precision),
            ("Recall", self.recall),
            ("F1 score", self.f1),
            ("AUC", self.auc),
        ]
    }
}

/// Metrics from per-example scores, hard predictions and ground truth.
///
/// Precision, recall, F1 and AUC are undefined when the test set holds a
/// single class.
pub fn evaluate_predictions(scores: &[f64], predicted: &[bool], truth: &[bool]) -> ClassifierMetrics {
    assert_eq!(scores.len(), truth.len());
    assert_eq!(predicted.len(), truth.len());
    let n = truth.len();
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let accuracy = (n > 0).then(|| (tp + tn) as f64 / n as f64);
    let positives = tp + fn_;
    let negatives = fp + tn;
    if positives == 0 || negatives == 0 {
        return ClassifierMetrics {
            accuracy,
            precision: None,
            recall: None,
            f1: None,
            auc: None,
        };
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = Some(tp as f64 / positives as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ClassifierMetrics {
        accuracy,
        precision,
        recall,
        f1,
        auc: Some(auc(scores, truth)),
    }
}

/// Mann-Whitney AUC with average ranks for tied scores.
fn auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = truth.iter().filter(|&&t| t).count() as f64;
    let n_neg = truth.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

/// One row per metric, one column per backend.
pub fn metrics_table_markdown(columns: &[(String, ClassifierMetrics)]) -> String {
    let mut out = String::from("| Metrics |");
    for (name, _) in columns {
        let _ = write!(out, " {name} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push('\n');
    for (row, label) in ["Accuracy", "Precision", "Recall", "F1 score", "AUC"].iter().enumerate() {
        let _ = write!(out, "| {label} |");
        for (_, m) in columns {
            let _ = write!(out, " {} |", cell(m.rows()[row].1));
        }
        out.push('\n');
    }
    out
}

pub fn metrics_table_csv(columns: &[(String, ClassifierMetrics)]) -> String {
    let mut out = String::from("metric");
    for (name, _) in columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (row, label) in ["Accuracy", "Precision", "Recall", "F1 score", "AUC"].iter().enumerate() {
        out.push_str(label);
        for (_, m) in columns {
            let _ = write!(out, ",{}", cell(m.rows()[row].1));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictor() {
        let truth: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let scores: Vec<f64> = truth.iter().map(|&t| if t { 0.9 } else { 0.1 }).collect();
        let m = evaluate_predictions(&scores, &truth, &truth);
        for (_, v) in m.rows() {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn constant_privacy_predictor_on_balanced_set() {
        let truth: Vec<bool> = (0..50).map(|i| i < 25).collect();
        let predicted = vec![true; 50];
        let scores = vec![0.7; 50];
        let m = evaluate_predictions(&scores, &predicted, &truth);
        assert_eq!(m.accuracy, Some(0.5));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.precision, Some(0.5));
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.auc, Some(0.5));
    }

    #[test]
    fn one_class_test_set_is_undefined() {
        let m = evaluate_predictions(&[0.2, 0.8], &[false, true], &[false, false]);
        assert_eq!(m.accuracy, Some(0.5));
        assert_eq!((m.precision, m.recall, m.f1, m.auc), (None, None, None, None));
    }

    #[test]
    fn auc_known_value() {
        // pairs (pos, neg): (0.8,0.1) (0.8,0.9) (0.4,0.1) (0.4,0.9) -> 2 of 4 ranked right
        let m = evaluate_predictions(&[0.8, 0.4, 0.1, 0.9], &[true, false, false, true], &[true, true, false, false]);
        assert_eq!(m.auc, Some(0.5));
        let m = evaluate_predictions(&[0.5, 0.5], &[true, true], &[true, false]);
        assert_eq!(m.auc, Some(0.5));
    }

    #[test]
    fn table_layout_reemits_stored_values() {
        let stored = |a, p, r, f, u| ClassifierMetrics {
            accuracy: Some(a),
            precision: Some(p),
            recall: Some(r),
            f1: Some(f),
            auc: Some(u),
        };
        let cols = vec![
            ("BERT".to_string(), stored(0.91, 0.81, 0.81, 0.81, 0.96)),
            ("BERT-SST".to_string(), stored(0.92, 0.79, 0.90, 0.84, 0.96)),
            ("USE".to_string(), stored(0.90, 0.82, 0.76, 0.79, 0.95)),
        ];
        let md = metrics_table_markdown(&cols);
        assert!(md.contains("| Metrics | BERT | BERT-SST | USE |"));
        assert!(md.contains("| Accuracy | 0.91 | 0.92 | 0.90 |"));
        assert!(md.contains("| Precision | 0.81 | 0.79 | 0.82 |"));
        assert!(md.contains("| Recall | 0.81 | 0.90 | 0.76 |"));
        assert!(md.contains("| F1 score | 0.81 | 0.84 | 0.79 |"));
        assert!(md.contains("| AUC | 0.96 | 0.96 | 0.95 |"));
        let csv = metrics_table_csv(&cols[..1]);
        assert_eq!(csv, "metric,BERT\nAccuracy,0.91\nPrecision,0.81\nRecall,0.81\nF1 score,0.81\nAUC,0.96\n");
    }

    proptest! {
        #[test]
        fn identities_hold(
            rows in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60),
            threshold in 0.05f64..0.95,
        ) {
            let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let truth: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
            let m = evaluate_predictions(&scores, &predicted, &truth);
            let correct = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
            prop_assert!((m.accuracy.unwrap() - correct as f64 / truth.len() as f64).abs() < 1e-12);
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                if p + r > 0.0 {
                    prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-9);
                }
            }
            // AUC is rank-based: a strictly monotone transform leaves it unchanged
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let m2 = evaluate_predictions(&warped, &predicted, &truth);
            match (m.auc, m2.auc) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "{other:?}"),
            }
        }
    }
}
