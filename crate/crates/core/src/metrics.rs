//! Detection metrics. Scores follow the "higher means inlier" convention.
//!
//! FPR at a TPR target treats inliers as positives. AUPR treats outliers as
//! positives, flagged when `score <= t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoredSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub n_in: usize,
    pub n_out: usize,
}

fn split(samples: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut inl = Vec::new();
    let mut out = Vec::new();
    for s in samples {
        if s.score.is_nan() {
            return Err(Error::NonFinite("NaN detection score".into()));
        }
        if s.is_inlier {
            inl.push(s.score);
        } else {
            out.push(s.score);
        }
    }
    if inl.is_empty() || out.is_empty() {
        return Err(Error::contract(format!(
            "metrics need both classes, got {} inliers and {} outliers",
            inl.len(),
            out.len()
        )));
    }
    Ok((inl, out))
}

/// Smallest `k` with `k / n >= target`.
fn admitted_count(n: usize, target: f64) -> usize {
    let nf = n as f64;
    let mut k = ((target * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= target {
        k -= 1;
    }
    while k < n && (k as f64) / nf < target {
        k += 1;
    }
    k
}

/// Fraction of outliers scoring at or above the largest threshold that keeps
/// at least `tpr_target` of the inliers.
pub fn fpr_at_tpr(samples: &[ScoredSample], tpr_target: f64) -> Result<f64> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::contract(format!("tpr_target must lie in (0, 1], got {tpr_target}")));
    }
    let (mut inl, out) = split(samples)?;
    inl.sort_by(|a, b| b.total_cmp(a));
    let t = inl[admitted_count(inl.len(), tpr_target) - 1];
    Ok(out.iter().filter(|&&s| s >= t).count() as f64 / out.len() as f64)
}

/// `P(s_in > s_out) + P(s_in = s_out) / 2`, computed from sorted ranks.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (inl, mut out) = split(samples)?;
    out.sort_by(f64::total_cmp);
    // Twice the pair credit keeps every partial sum an exact integer.
    let mut twice = 0u128;
    for s in &inl {
        let below = out.partition_point(|o| o < s);
        let not_above = out.partition_point(|o| o <= s);
        twice += (2 * below + (not_above - below)) as u128;
    }
    Ok(twice as f64 / (2.0 * inl.len() as f64 * out.len() as f64))
}

/// Average precision with outliers as positives, one step per distinct score.
pub fn aupr(samples: &[ScoredSample]) -> Result<f64> {
    split(samples)?;
    let mut sorted: Vec<ScoredSample> = samples.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let n_out = sorted.iter().filter(|s| !s.is_inlier).count() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].is_inlier {
                fp += 1;
            } else {
                tp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_out;
        if recall > prev_recall {
            ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
            prev_recall = recall;
        }
    }
    Ok(ap)
}

pub fn evaluate(samples: &[ScoredSample]) -> Result<MetricsReport> {
    let (inl, out) = split(samples)?;
    Ok(MetricsReport {
        fpr95: fpr_at_tpr(samples, 0.95)?,
        auroc: auroc(samples)?,
        aupr: aupr(samples)?,
        n_in: inl.len(),
        n_out: out.len(),
    })
}

/// Pairs inlier and outlier score vectors into labeled samples.
pub fn label_scores(inlier: &[f64], outlier: &[f64]) -> Vec<ScoredSample> {
    inlier
        .iter()
        .map(|&score| ScoredSample { score, is_inlier: true })
        .chain(outlier.iter().map(|&score| ScoredSample { score, is_inlier: false }))
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_instance(rng: &mut Rng, n: usize, levels: usize) -> Vec<ScoredSample> {
        let mut s: Vec<ScoredSample> = (0..n)
            .map(|_| ScoredSample { score: rng.below(levels) as f64, is_inlier: rng.uniform() < 0.6 })
            .collect();
        s[0].is_inlier = true;
        s[1].is_inlier = false;
        s
    }

    #[test]
    fn separated_and_tied_extremes() {
        let sep = label_scores(&[5.0, 6.0, 7.0], &[1.0, 2.0]);
        assert_eq!(fpr_at_tpr(&sep, 0.95).unwrap(), 0.0);
        assert_eq!(auroc(&sep).unwrap(), 1.0);
        assert_eq!(aupr(&sep).unwrap(), 1.0);
        let tied = label_scores(&[1.0; 4], &[1.0; 3]);
        assert_eq!(fpr_at_tpr(&tied, 0.95).unwrap(), 1.0);
        assert_eq!(auroc(&tied).unwrap(), 0.5);
    }

    #[test]
    fn missing_class_rejected() {
        let only_in = label_scores(&[1.0, 2.0], &[]);
        assert!(fpr_at_tpr(&only_in, 0.95).is_err());
        assert!(auroc(&only_in).is_err());
        assert!(aupr(&label_scores(&[], &[1.0])).is_err());
        assert!(fpr_at_tpr(&label_scores(&[1.0], &[0.0]), 0.0).is_err());
    }

    #[test]
    fn interleaved_integers_match_scan() {
        let inl: Vec<f64> = (0..20).map(|i| (i * 3 % 17) as f64).collect();
        let out: Vec<f64> = (0..10).map(|i| (i * 5 % 13) as f64).collect();
        let s = label_scores(&inl, &out);
        for target in [0.05, 0.5, 0.9, 0.95, 1.0] {
            assert_eq!(fpr_at_tpr(&s, target).unwrap(), oracle::fpr(&s, target));
        }
    }

    #[test]
    fn random_thirty_auroc_and_twenty_five_aupr() {
        let mut rng = Rng::new(4);
        let s = random_instance(&mut rng, 30, 1000);
        assert!((auroc(&s).unwrap() - oracle::auroc(&s)).abs() < 1e-12);
        let s = random_instance(&mut rng, 25, 1000);
        assert!((aupr(&s).unwrap() - oracle::aupr(&s)).abs() < 1e-12);
    }

    #[test]
    fn reversed_scores_fall_to_the_floor() {
        let s = label_scores(&[0.0, 1.0, 2.0, 3.0, 4.0], &[10.0]);
        let ap = aupr(&s).unwrap();
        assert_eq!(ap, oracle::aupr(&s));
        assert!((ap - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_small_instances() {
        let mut rng = Rng::new(11);
        for _ in 0..300 {
            let n = 2 + rng.below(49);
            let levels = 1 + rng.below(6);
            let s = random_instance(&mut rng, n, levels);
            assert_eq!(auroc(&s).unwrap(), oracle::auroc(&s));
            assert_eq!(aupr(&s).unwrap(), oracle::aupr(&s));
            assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), oracle::fpr(&s, 0.95));
        }
    }

    #[test]
    fn report_counts() {
        let r = evaluate(&label_scores(&[3.0, 4.0, 5.0], &[0.0])).unwrap();
        assert_eq!((r.n_in, r.n_out), (3, 1));
        assert_eq!((r.fpr95, r.auroc, r.aupr), (0.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn auroc_rank_invariant(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let s = random_instance(&mut rng, 40, 20);
            let t: Vec<ScoredSample> = s.iter().map(|x| ScoredSample { score: (0.3 * x.score).exp() - 7.0, ..*x }).collect();
            prop_assert!((auroc(&s).unwrap() - auroc(&t).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn negation_complements_auroc(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let mut s = random_instance(&mut rng, 30, 2);
            for (i, x) in s.iter_mut().enumerate() {
                x.score = rng.normal() + i as f64 * 1e-3;
            }
            let neg: Vec<ScoredSample> = s.iter().map(|x| ScoredSample { score: -x.score, ..*x }).collect();
            prop_assert!((auroc(&s).unwrap() + auroc(&neg).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fpr_nondecreasing_in_target(seed in any::<u64>(), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let mut rng = Rng::new(seed);
            let s = random_instance(&mut rng, 40, 8);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fpr_at_tpr(&s, lo).unwrap() <= fpr_at_tpr(&s, hi).unwrap());
        }
    }
}
