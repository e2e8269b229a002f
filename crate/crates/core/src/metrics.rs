//! Classification metrics.

/// Fraction of `predicted[i] == labels[i]`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. `None` without both
/// classes.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Average precision: precision at each distinct score threshold weighted by
/// the recall gained there. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut gained = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            gained += usize::from(positive[order[j]]);
            j += 1;
        }
        tp += gained;
        seen += j - i;
        ap += gained as f64 * tp as f64 / seen as f64;
        i = j;
    }
    Some(ap / n_pos as f64)
}

/// 1-based ranks with ties sharing their mean rank.
fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn auroc_pairs(s: &[f64], p: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if p[i] && !p[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    /// Precision averaged over every positive, counting everything scored at
    /// least as high.
    fn ap_by_positive(s: &[f64], p: &[bool]) -> f64 {
        let pos: Vec<usize> = (0..s.len()).filter(|&i| p[i]).collect();
        pos.iter()
            .map(|&i| {
                let above = (0..s.len()).filter(|&j| s[j] >= s[i]).count() as f64;
                let tp = (0..s.len()).filter(|&j| s[j] >= s[i] && p[j]).count() as f64;
                tp / above
            })
            .sum::<f64>()
            / pos.len() as f64
    }

    #[test]
    fn examples() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 0, 4]), 0.75);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        let ap = average_precision(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auroc(&[0.5], &[true]), None);
        assert_eq!(average_precision(&[0.5], &[false]), None);
    }

    proptest! {
        #[test]
        fn match_brute_force(seed in 0u64..10_000, n in 2usize..40) {
            let mut rng = Rng::new(seed);
            // coarse scores so ties occur
            let s: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor()).collect();
            let p: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
            if let Some(a) = auroc(&s, &p) {
                prop_assert!((a - auroc_pairs(&s, &p)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }
            if let Some(ap) = average_precision(&s, &p) {
                prop_assert!((ap - ap_by_positive(&s, &p)).abs() < 1e-12);
            }
        }
    }
}
