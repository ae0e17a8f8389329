use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic, via midranks.
pub fn compute_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Fraction with `(score ≥ threshold) == (label == 1)`.
pub fn compute_acc(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use proptest::prelude::*;

    pub(crate) fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0usize);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(compute_auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(compute_auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert!(matches!(compute_auc(&[0.2, 0.3], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(compute_auc(&[0.2], &[1, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn auc_matches_pairwise_oracle_exactly() {
        let mut rng = SeedRng::new(77);
        let mut checked = 0;
        while checked < 1000 {
            let n = 2 + rng.below(31);
            let levels = 1 + rng.below(8);
            let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.coin(0.5) as u8).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            assert_eq!(compute_auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
            checked += 1;
        }
    }

    #[test]
    fn acc_examples() {
        assert_eq!(compute_acc(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(compute_acc(&[0.5], &[1], 0.5).unwrap(), 1.0);
        assert_eq!(compute_acc(&[0.5], &[0], 0.5).unwrap(), 0.0);
        assert!(matches!(compute_acc(&[], &[], 0.5), Err(Error::Contract(_))));
        let mut rng = SeedRng::new(5);
        let scores: Vec<f64> = (0..50).map(|_| rng.uniform(0.0, 1.0)).collect();
        let labels: Vec<u8> = (0..50).map(|_| rng.coin(0.5) as u8).collect();
        let mut hits = 0;
        for i in 0..50 {
            if (scores[i] >= 0.5) == (labels[i] == 1) {
                hits += 1;
            }
        }
        assert_eq!(compute_acc(&scores, &labels, 0.5).unwrap(), hits as f64 / 50.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-100.0f64..100.0, n),
                proptest::collection::vec(0u8..2, n).prop_filter("two classes", |l| l.contains(&0) && l.contains(&1)),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps((scores, labels) in instance()) {
            let base = compute_auc(&scores, &labels).unwrap();
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 3.0 * s).collect();
            let squashed: Vec<f64> = scores.iter().map(|s| (s / 10.0).atan()).collect();
            prop_assert_eq!(compute_auc(&cubed, &labels).unwrap(), base);
            prop_assert_eq!(compute_auc(&squashed, &labels).unwrap(), base);
        }

        #[test]
        fn flipped_labels_complement((scores, labels) in instance()) {
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let sum = compute_auc(&scores, &labels).unwrap() + compute_auc(&scores, &flipped).unwrap();
            prop_assert_eq!(sum, 1.0);
        }
    }
}
