//! Classification metrics reported by the fit and search stages.

/// Fraction of matching predictions.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Unweighted mean of per-class F1 over all `n_classes` classes; a class
/// absent from both truth and prediction contributes 0.
pub fn macro_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    if n_classes == 0 {
        return 0.0;
    }
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|(&t, &p)| t == c && p == c)
            .count() as f64;
        let fp = truth
            .iter()
            .zip(pred)
            .filter(|(&t, &p)| t != c && p == c)
            .count() as f64;
        let f_n = truth
            .iter()
            .zip(pred)
            .filter(|(&t, &p)| t == c && p != c)
            .count() as f64;
        let denom = 2.0 * tp + fp + f_n;
        if denom > 0.0 {
            f1_sum += 2.0 * tp / denom;
        }
    }
    f1_sum / n_classes as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]), 0.75);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }

    #[test]
    fn perfect_predictions_give_unit_f1() {
        let y = [0, 1, 2, 1, 0];
        assert!((macro_f1(&y, &y, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_averages_over_classes() {
        // class 0: tp=1 fp=1 fn=0 -> f1 = 2/3; class 1: tp=1 fp=0 fn=1 -> f1 = 2/3
        let truth = [0, 1, 1];
        let pred = [0, 1, 0];
        let f1 = macro_f1(&truth, &pred, 2);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
