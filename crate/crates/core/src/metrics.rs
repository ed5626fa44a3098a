//! Confusion-matrix metrics: accuracy, micro/per-class precision, recall,
//! F1, and bootstrap confidence halfwidths.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::rng;

/// `counts[truth * n + predicted]`, tallied over evaluated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes() + predicted]
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.count(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&t| t != class)
            .map(|t| self.count(t, class))
            .sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&p| p != class)
            .map(|p| self.count(class, p))
            .sum()
    }
}

/// Tallies predictions against ground truth; label indices must address
/// `classes`.
pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let n = classes.len();
    if n == 0 {
        return Err(Error::Argument("no classes".into()));
    }
    let mut counts = vec![0u64; n * n];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n || p >= n {
            return Err(Error::Argument(format!(
                "label ({t}, {p}) outside the {n} known classes"
            )));
        }
        counts[t * n + p] += 1;
    }
    Ok(ConfusionMatrix {
        class_names: classes.to_vec(),
        counts,
        total: truth.len() as u64,
    })
}

/// Per-class scores. `None` marks an undefined metric (empty denominator),
/// deliberately distinct from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// 95% bootstrap halfwidth of the F1 score, when requested.
    pub ci_halfwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n: u64,
}

impl EvalReport {
    pub fn has_undefined(&self) -> bool {
        self.per_class
            .iter()
            .any(|c| c.precision.is_none() || c.recall.is_none() || c.f1.is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            seed: 0,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn class_scores(cm: &ConfusionMatrix, class: usize) -> (Option<f64>, Option<f64>, Option<f64>) {
    let tp = cm.true_positives(class);
    let fp = cm.false_positives(class);
    let fn_ = cm.false_negatives(class);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    (precision, recall, f1)
}

/// Accuracy (trace over total), micro-averaged precision/recall/F1 (equal
/// to accuracy for single-label classification), per-class scores, and
/// seeded bootstrap 95% halfwidths for per-class F1 when requested.
pub fn metrics(cm: &ConfusionMatrix, bootstrap: Option<BootstrapConfig>) -> Result<EvalReport> {
    if cm.total == 0 {
        return Err(Error::Argument(
            "metrics need at least one evaluated instance".into(),
        ));
    }
    let n_classes = cm.n_classes();
    let trace: u64 = (0..n_classes).map(|c| cm.true_positives(c)).sum();
    let accuracy = trace as f64 / cm.total as f64;

    let mut tp_sum = 0u64;
    let mut tp_fp = 0u64;
    let mut tp_fn = 0u64;
    let mut f1_num = 0u64;
    let mut f1_den = 0u64;
    for c in 0..n_classes {
        let tp = cm.true_positives(c);
        let fp = cm.false_positives(c);
        let fn_ = cm.false_negatives(c);
        tp_sum += tp;
        tp_fp += tp + fp;
        tp_fn += tp + fn_;
        f1_num += 2 * tp;
        f1_den += 2 * tp + fp + fn_;
    }

    let mut per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let (precision, recall, f1) = class_scores(cm, c);
            ClassMetrics {
                name: cm.class_names[c].clone(),
                precision,
                recall,
                f1,
                ci_halfwidth: None,
            }
        })
        .collect();

    if let Some(cfg) = bootstrap {
        let halfwidths = bootstrap_f1_halfwidths(cm, cfg);
        for (cls, hw) in per_class.iter_mut().zip(halfwidths) {
            cls.ci_halfwidth = hw;
        }
    }

    Ok(EvalReport {
        accuracy,
        micro_precision: tp_sum as f64 / tp_fp as f64,
        micro_recall: tp_sum as f64 / tp_fn as f64,
        micro_f1: f1_num as f64 / f1_den as f64,
        per_class,
        n: cm.total,
    })
}

/// Resamples instances with replacement from the matrix cells (instances
/// within a cell are exchangeable) and measures the spread of per-class F1.
fn bootstrap_f1_halfwidths(cm: &ConfusionMatrix, cfg: BootstrapConfig) -> Vec<Option<f64>> {
    let n_classes = cm.n_classes();
    let n = cm.total;
    let mut cumulative = Vec::with_capacity(cm.counts.len());
    let mut acc = 0u64;
    for &c in &cm.counts {
        acc += c;
        cumulative.push(acc);
    }

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
    for round in 0..cfg.resamples {
        let mut stream = rng::substream(cfg.seed, &[0xB0_07, round as u64]);
        let mut counts = vec![0u64; cm.counts.len()];
        for _ in 0..n {
            let draw = stream.gen_range(0..n);
            let cell = cumulative.partition_point(|&c| c <= draw);
            counts[cell] += 1;
        }
        let resampled = ConfusionMatrix {
            class_names: cm.class_names.clone(),
            counts,
            total: n,
        };
        for (class, bucket) in samples.iter_mut().enumerate() {
            if let (_, _, Some(f1)) = class_scores(&resampled, class) {
                bucket.push(f1);
            }
        }
    }

    samples
        .into_iter()
        .map(|mut values| {
            // refuse an interval when the class was undefined too often
            if values.len() < cfg.resamples / 2 || values.is_empty() {
                return None;
            }
            values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite f1"));
            let lo = percentile(&values, 0.025);
            let hi = percentile(&values, 0.975);
            Some((hi - lo) / 2.0)
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((sorted.len() as f64) * q).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_give_a_diagonal_matrix() {
        let truth = [0usize, 1, 2, 1];
        let cm = confusion_matrix(&truth, &truth, &classes(3)).unwrap();
        let report = metrics(&cm, None).unwrap();
        assert_eq!(report.accuracy, 1.0);
        for c in &report.per_class {
            assert_eq!(c.f1, Some(1.0));
        }
    }

    #[test]
    fn hand_tally_worked_example() {
        let truth = [0usize, 0, 1, 1, 1, 2];
        let pred = [0usize, 1, 1, 1, 1, 2];
        let cm = confusion_matrix(&truth, &pred, &classes(3)).unwrap();
        assert_eq!(cm.counts, vec![1, 1, 0, 0, 3, 0, 0, 0, 1]);

        let report = metrics(&cm, None).unwrap();
        assert!((report.accuracy - 5.0 / 6.0).abs() < 1e-12);
        let c0 = &report.per_class[0];
        assert_eq!(c0.precision, Some(1.0));
        assert_eq!(c0.recall, Some(0.5));
        assert!((c0.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_give_an_empty_matrix_and_no_metrics() {
        let cm = confusion_matrix(&[], &[], &classes(2)).unwrap();
        assert_eq!(cm.total, 0);
        assert!(cm.counts.iter().all(|&c| c == 0));
        assert!(metrics(&cm, None).is_err());
    }

    #[test]
    fn length_mismatch_and_unknown_labels_are_rejected() {
        assert!(confusion_matrix(&[0], &[], &classes(2)).is_err());
        assert!(confusion_matrix(&[0], &[5], &classes(2)).is_err());
    }

    #[test]
    fn micro_scores_equal_accuracy_for_single_label() {
        let mut stream = crate::rng::stream(17);
        for _ in 0..20 {
            let n = 1 + rand::Rng::gen_range(&mut stream, 0..200);
            let truth: Vec<usize> =
                (0..n).map(|_| rand::Rng::gen_range(&mut stream, 0..4)).collect();
            let pred: Vec<usize> =
                (0..n).map(|_| rand::Rng::gen_range(&mut stream, 0..4)).collect();
            let cm = confusion_matrix(&truth, &pred, &classes(4)).unwrap();
            let report = metrics(&cm, None).unwrap();
            assert_eq!(report.micro_precision, report.accuracy);
            assert_eq!(report.micro_recall, report.accuracy);
            assert_eq!(report.micro_f1, report.accuracy);
        }
    }

    #[test]
    fn f1_is_the_harmonic_mean_when_defined() {
        let truth = [0usize, 0, 1, 1, 0, 1, 0];
        let pred = [0usize, 1, 1, 0, 0, 1, 1];
        let cm = confusion_matrix(&truth, &pred, &classes(2)).unwrap();
        let report = metrics(&cm, None).unwrap();
        for c in &report.per_class {
            let (p, r, f1) = (c.precision.unwrap(), c.recall.unwrap(), c.f1.unwrap());
            assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn absent_class_metrics_are_undefined_not_zero() {
        let truth = [0usize, 0];
        let pred = [0usize, 0];
        let cm = confusion_matrix(&truth, &pred, &classes(2)).unwrap();
        let report = metrics(&cm, None).unwrap();
        let missing = &report.per_class[1];
        assert_eq!(missing.precision, None);
        assert_eq!(missing.recall, None);
        assert!(report.has_undefined());
    }

    #[test]
    fn bootstrap_is_seeded_and_plausible() {
        let mut stream = crate::rng::stream(23);
        let truth: Vec<usize> =
            (0..300).map(|_| rand::Rng::gen_range(&mut stream, 0..3)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| {
                if rand::Rng::gen_bool(&mut stream, 0.8) {
                    t
                } else {
                    (t + 1) % 3
                }
            })
            .collect();
        let cm = confusion_matrix(&truth, &pred, &classes(3)).unwrap();
        let cfg = BootstrapConfig { resamples: 200, seed: 9 };
        let a = metrics(&cm, Some(cfg)).unwrap();
        let b = metrics(&cm, Some(cfg)).unwrap();
        assert_eq!(a, b);
        for c in &a.per_class {
            let hw = c.ci_halfwidth.unwrap();
            assert!(hw > 0.0 && hw < 0.2, "halfwidth {hw}");
        }
    }
}
