use packed_core::metrics::{
    accuracy, aupr, aupr_with, auroc, ece, ece_binned, entropy, fpr_at_95_tpr, max_logit, msp, mutual_information,
    nll, variation_ratio, BinaryDetection, Criterion, PredictionBatch,
};
use packed_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probs(rows: &[&[f64]]) -> Tensor {
    let c = rows[0].len();
    Tensor::new(vec![rows.len(), c], rows.concat()).unwrap()
}

fn det(scores: &[f64], is_id: &[bool]) -> BinaryDetection {
    BinaryDetection::new(scores.to_vec(), is_id.to_vec()).unwrap()
}

/// Fraction of (ID, OOD) pairs ordered correctly, ties counting one half.
fn pairwise_auroc(scores: &[f64], is_id: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if is_id[i] && !is_id[j] {
                den += 1.0;
                num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

/// Average precision by enumerating thresholds `score ≥ t` over distinct scores.
fn brute_aupr(scores: &[f64], is_id: &[bool]) -> f64 {
    let mut ts = scores.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let pos = is_id.iter().filter(|&&b| b).count() as f64;
    let (mut prev_recall, mut ap) = (0.0, 0.0);
    for t in ts {
        let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = sel.iter().filter(|&&i| is_id[i]).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / sel.len() as f64;
        prev_recall = recall;
    }
    ap
}

fn brute_fpr95(scores: &[f64], is_id: &[bool]) -> f64 {
    let pos = is_id.iter().filter(|&&b| b).count() as f64;
    let neg = is_id.len() as f64 - pos;
    scores
        .iter()
        .filter_map(|&t| {
            let tp = (0..scores.len()).filter(|&i| is_id[i] && scores[i] >= t).count() as f64;
            let fp = (0..scores.len()).filter(|&i| !is_id[i] && scores[i] >= t).count() as f64;
            (tp / pos >= 0.95 - 1e-12).then_some(fp / neg)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn accuracy_cases() {
    let one_hot = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
    assert_eq!(accuracy(&one_hot, &[0, 1]).unwrap(), 1.0);
    assert_eq!(accuracy(&one_hot, &[1, 0]).unwrap(), 0.0);
    let p = probs(&[&[0.7, 0.3], &[0.2, 0.8], &[0.6, 0.4]]);
    assert_eq!(accuracy(&p, &[0, 1, 1]).unwrap(), 2.0 / 3.0);
    // tie goes to class 0
    assert_eq!(accuracy(&probs(&[&[0.5, 0.5]]), &[0]).unwrap(), 1.0);
    assert!(accuracy(&p, &[]).is_err());
}

#[test]
fn nll_cases() {
    assert_eq!(nll(&probs(&[&[1.0, 0.0]]), &[0]).unwrap(), 0.0);
    let uniform = probs(&[&[0.1; 10]]);
    assert!((nll(&uniform, &[3]).unwrap() - 10f64.ln()).abs() < 1e-12);
    let p = probs(&[&[0.5, 0.5, 0.0], &[0.25, 0.5, 0.25]]);
    let want = (2f64.ln() + 4f64.ln()) / 2.0;
    assert!((nll(&p, &[0, 2]).unwrap() - want).abs() < 1e-12);
    assert!((want - 1.0397).abs() < 1e-4);
    // zero probability is clamped, not infinite
    assert!((nll(&probs(&[&[1.0, 0.0]]), &[1]).unwrap() - 1e12f64.ln()).abs() < 1e-9);
}

/// Explicit interval membership instead of index arithmetic.
fn brute_ece(conf: &[f64], correct: &[bool], edges: &[f64]) -> f64 {
    let n = conf.len() as f64;
    edges
        .windows(2)
        .map(|e| {
            let idx: Vec<usize> = (0..conf.len()).filter(|&i| conf[i] > e[0] && conf[i] <= e[1]).collect();
            if idx.is_empty() {
                return 0.0;
            }
            let k = idx.len() as f64;
            let acc = idx.iter().filter(|&&i| correct[i]).count() as f64 / k;
            let mc = idx.iter().map(|&i| conf[i]).sum::<f64>() / k;
            k / n * (acc - mc).abs()
        })
        .sum()
}

#[test]
fn ece_cases() {
    assert!((ece_binned(&[0.8], &[true], 1, 0.0, 1.0).unwrap() - 0.2).abs() < 1e-12);
    let conf = [0.9, 0.9, 0.6, 0.6];
    let correct = [true, true, false, true];
    let got = ece_binned(&conf, &correct, 2, 0.5, 1.0).unwrap();
    let oracle = brute_ece(&conf, &correct, &[0.5, 0.75, 1.0]);
    assert!((got - oracle).abs() <= 1e-12);
    assert!((got - 0.1).abs() <= 1e-12);
}

#[test]
fn ece_matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let conf: Vec<f64> = (0..40).map(|_| rng.gen_range(0.01..1.0)).collect();
        let correct: Vec<bool> = (0..40).map(|_| rng.gen_bool(0.6)).collect();
        let edges: Vec<f64> = (0..=15).map(|b| b as f64 / 15.0).collect();
        let got = ece_binned(&conf, &correct, 15, 0.0, 1.0).unwrap();
        assert!((got - brute_ece(&conf, &correct, &edges)).abs() <= 1e-12);
    }
}

#[test]
fn calibrated_set_has_small_ece() {
    // in every bin, a fraction equal to the confidence is correct
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for b in 0..10 {
        let c = 0.05 + 0.1 * b as f64;
        for i in 0..1000 {
            conf.push(c);
            correct.push((i as f64) < c * 1000.0);
        }
    }
    let n = conf.len() as f64;
    assert!(ece_binned(&conf, &correct, 10, 0.0, 1.0).unwrap() <= 1.0 / n * 10.0);
}

#[test]
fn one_bin_ece_is_accuracy_gap() {
    let p = probs(&[&[0.7, 0.3], &[0.4, 0.6], &[0.9, 0.1]]);
    let labels = [0, 0, 0];
    let acc = accuracy(&p, &labels).unwrap();
    let mean_conf = (0.7 + 0.6 + 0.9) / 3.0;
    assert!((ece(&p, &labels, 1).unwrap() - (acc - mean_conf).abs()).abs() < 1e-12);
}

#[test]
fn detection_perfect_and_tied() {
    let d = det(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
    assert_eq!(auroc(&d).unwrap(), 1.0);
    assert_eq!(aupr(&d).unwrap(), 1.0);
    assert_eq!(fpr_at_95_tpr(&d).unwrap(), 0.0);
    let tied = det(&[0.5; 6], &[true, false, true, false, true, false]);
    assert_eq!(auroc(&tied).unwrap(), 0.5);
}

#[test]
fn detection_hand_case() {
    let scores = [0.9, 0.4, 0.35, 0.8];
    let is_id = [true, false, true, false];
    let d = det(&scores, &is_id);
    assert_eq!(pairwise_auroc(&scores, &is_id), 0.5);
    assert!((auroc(&d).unwrap() - 0.5).abs() <= 1e-12);
    assert!((aupr(&d).unwrap() - brute_aupr(&scores, &is_id)).abs() <= 1e-12);
    assert!((fpr_at_95_tpr(&d).unwrap() - brute_fpr95(&scores, &is_id)).abs() <= 1e-12);
}

#[test]
fn single_class_is_rejected() {
    assert!(BinaryDetection::new(vec![0.1, 0.2], vec![true, true]).is_err());
    assert!(BinaryDetection::new(vec![0.1], vec![true, false]).is_err());
}

#[test]
fn flipped_aupr_uses_ood_as_positive() {
    let scores = [0.9, 0.4, 0.35, 0.8, 0.1];
    let is_id = [true, false, true, false, false];
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    let flipped: Vec<bool> = is_id.iter().map(|b| !b).collect();
    let got = aupr_with(&det(&scores, &is_id), false).unwrap();
    assert!((got - brute_aupr(&neg, &flipped)).abs() <= 1e-12);
}

#[test]
fn fpr95_falls_as_separation_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0)).collect();
    let is_id: Vec<bool> = (0..400).map(|i| i < 200).collect();
    let mut prev = f64::INFINITY;
    for gap in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let scores: Vec<f64> = noise.iter().zip(&is_id).map(|(n, &id)| n + if id { gap } else { 0.0 }).collect();
        let f = fpr_at_95_tpr(&det(&scores, &is_id)).unwrap();
        assert!(f <= prev);
        prev = f;
    }
    assert_eq!(prev, 0.0);
}

proptest! {
    #[test]
    fn detection_matches_brute_force(
        raw in prop::collection::vec((0u8..12, any::<bool>()), 2..40)
    ) {
        let mut scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 4.0).collect();
        let mut is_id: Vec<bool> = raw.iter().map(|r| r.1).collect();
        // force both classes
        is_id[0] = true;
        is_id[1] = false;
        scores[0] += 0.0;
        let d = det(&scores, &is_id);
        prop_assert!((auroc(&d).unwrap() - pairwise_auroc(&scores, &is_id)).abs() <= 1e-12);
        prop_assert!((aupr(&d).unwrap() - brute_aupr(&scores, &is_id)).abs() <= 1e-12);
        prop_assert!((fpr_at_95_tpr(&d).unwrap() - brute_fpr95(&scores, &is_id)).abs() <= 1e-12);
        // strictly increasing transform leaves AUROC unchanged
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&d).unwrap(), auroc(&det(&warped, &is_id)).unwrap());
    }

    #[test]
    fn mi_is_bounded_by_entropy(seed in 0u64..10_000, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c) = (6, 4);
        let mut data = Vec::new();
        for _ in 0..m * n {
            let row: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|v| v / s));
        }
        let pred = PredictionBatch::new(Tensor::new(vec![m, n, c], data).unwrap(), None).unwrap();
        let mi = mutual_information(&pred).unwrap();
        for (mi, ent) in mi.iter().zip(entropy(&pred)) {
            prop_assert!(*mi >= 0.0);
            prop_assert!(*mi <= ent + 1e-12);
        }
    }
}

fn batch(members: &[&[&[f64]]]) -> PredictionBatch {
    let (m, n, c) = (members.len(), members[0].len(), members[0][0].len());
    let data: Vec<f64> = members.iter().flat_map(|rows| rows.concat()).collect();
    PredictionBatch::new(Tensor::new(vec![m, n, c], data).unwrap(), None).unwrap()
}

#[test]
fn criteria_hand_cases() {
    let same = batch(&[&[&[0.2, 0.3, 0.5]], &[&[0.2, 0.3, 0.5]], &[&[0.2, 0.3, 0.5]]]);
    assert_eq!(mutual_information(&same).unwrap(), vec![0.0]);

    let votes = batch(&[&[&[0.9, 0.1]], &[&[0.8, 0.2]], &[&[0.6, 0.4]], &[&[0.3, 0.7]]]);
    assert!((variation_ratio(&votes)[0] - 0.25).abs() <= 1e-12);

    let uniform = batch(&[&[&[0.25; 4]]]);
    assert!((entropy(&uniform)[0] - 4f64.ln()).abs() <= 1e-12);

    let split = batch(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
    assert!((mutual_information(&split).unwrap()[0] - 2f64.ln()).abs() <= 1e-12);
    assert_eq!(msp(&split), vec![0.5]);
}

#[test]
fn single_member_has_no_disagreement() {
    let p = PredictionBatch::single(probs(&[&[0.2, 0.8], &[0.6, 0.4]]), None).unwrap();
    assert_eq!(mutual_information(&p).unwrap(), vec![0.0, 0.0]);
    assert_eq!(variation_ratio(&p), vec![0.0, 0.0]);
}

#[test]
fn max_logit_averages_members_first() {
    let logits = Tensor::new(vec![2, 1, 2], vec![4.0, 0.0, 0.0, 2.0]).unwrap();
    assert_eq!(max_logit(&logits).unwrap(), vec![2.0]);
}

#[test]
fn uncertainty_criteria_are_negated_for_detection() {
    let split = batch(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
    let logits = Tensor::zeros(&[2, 1, 2]);
    let ent = Criterion::Entropy.id_scores(&split, &logits).unwrap();
    assert!((ent[0] + 2f64.ln()).abs() < 1e-12);
    let v = Criterion::VariationRatio.id_scores(&split, &logits).unwrap();
    assert_eq!(v, vec![-0.5]);
}

#[test]
fn invalid_batches_are_rejected() {
    let bad = Tensor::new(vec![1, 1, 2], vec![0.7, 0.7]).unwrap();
    assert!(PredictionBatch::new(bad, None).is_err());
    let ok = Tensor::new(vec![1, 1, 2], vec![0.3, 0.7]).unwrap();
    assert!(PredictionBatch::new(ok.clone(), Some(vec![2])).is_err());
    assert!(PredictionBatch::new(ok, Some(vec![0, 1])).is_err());
}
