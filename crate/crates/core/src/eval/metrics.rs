//! Classification and regression scores.

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Area under the ROC curve from scores, with tied scores sharing the
/// average rank. `None` when one of the two classes is absent.
pub fn binary_auc(positive: &[bool], score: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Binary AUC for two classes, otherwise the unweighted mean of one-vs-rest
/// AUCs over classes present in `truth`. NaN when no class qualifies.
pub fn roc_auc(truth: &[usize], proba: &[Vec<f64>], n_classes: usize) -> f64 {
    let class_auc = |c: usize| {
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let score: Vec<f64> = proba.iter().map(|p| p[c]).collect();
        binary_auc(&pos, &score)
    };
    if n_classes == 2 {
        return class_auc(1).unwrap_or(f64::NAN);
    }
    let aucs: Vec<f64> = (0..n_classes).filter_map(class_auc).collect();
    if aucs.is_empty() {
        f64::NAN
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

/// Unweighted mean F1 over the classes occurring in `truth` or `pred`.
pub fn macro_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    let mut scores = Vec::new();
    for c in 0..n_classes {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        if tp + fp + fn_ == 0.0 {
            continue;
        }
        scores.push(2.0 * tp / (2.0 * tp + fp + fn_));
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

pub fn mse(truth: &[f64], pred: &[f64]) -> f64 {
    truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_by_pair_counting() {
        let pos = [true, false, true, false, true];
        let score = [0.9, 0.8, 0.4, 0.4, 0.1];
        // brute force: fraction of (pos, neg) pairs ordered correctly, ties count half
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    num += if score[i] > score[j] {
                        1.0
                    } else if score[i] == score[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((binary_auc(&pos, &score).unwrap() - num / den).abs() < 1e-12);
        assert_eq!(binary_auc(&[true, true], &[0.1, 0.2]), None);
    }

    #[test]
    fn f1_and_accuracy() {
        let t = [0, 0, 1, 1];
        let p = [0, 1, 1, 1];
        assert_eq!(accuracy(&t, &p), 0.75);
        // class 0: tp 1 fp 0 fn 1 -> 2/3; class 1: tp 2 fp 1 fn 0 -> 4/5
        assert!((macro_f1(&t, &p, 2) - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 3.0]), 0.5);
    }
}
