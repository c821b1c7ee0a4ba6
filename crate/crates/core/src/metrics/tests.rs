use proptest::prelude::*;

use super::*;
use crate::attention::ModelConfig;
use crate::numeric::{RngState, Stream};

fn t(rows: &[Vec<f64>]) -> Tensor2 {
    Tensor2::from_rows(rows).unwrap()
}

#[test]
fn head_distance_examples() {
    let same = t(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
    assert_eq!(head_distance(&[same.clone(), same]).unwrap(), 0.0);
    let two = t(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
    assert!((head_distance(&[two]).unwrap() - 5.0).abs() < 1e-12);
    let three = t(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    let want = (2.0 + 2f64.sqrt()) / 3.0;
    assert!((head_distance(&[three]).unwrap() - want).abs() < 1e-12);
    assert!((want - 1.13807).abs() < 1e-5);
    assert!(head_distance(&[t(&[vec![1.0]])]).is_err());
    assert!(head_distance(&[]).is_err());
}

proptest! {
    #[test]
    fn head_distance_invariances(
        data in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 8), 1..6),
        rot in 0usize..4,
    ) {
        // each example is 4 heads × 2 dims
        let reps: Vec<Tensor2> = data.iter().map(|d| Tensor2::from_vec(4, 2, d.clone()).unwrap()).collect();
        let base = head_distance(&reps).unwrap();
        let relabeled: Vec<Tensor2> = reps
            .iter()
            .map(|z| t(&(0..4).map(|i| z.row((i + rot) % 4).to_vec()).collect::<Vec<_>>()))
            .collect();
        prop_assert!((head_distance(&relabeled).unwrap() - base).abs() < 1e-12);
        let doubled: Vec<Tensor2> = reps.iter().chain(reps.iter()).cloned().collect();
        prop_assert!((head_distance(&doubled).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn calibration_is_permutation_invariant(
        rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
        seed in any::<u64>(),
    ) {
        let cfg = CalibrationConfig::default();
        let (c, k): (Vec<f64>, Vec<bool>) = rows.iter().cloned().unzip();
        let mut perm: Vec<usize> = (0..c.len()).collect();
        RngState::new(seed, Stream::Shuffle).shuffle(&mut perm);
        let c2: Vec<f64> = perm.iter().map(|&i| c[i]).collect();
        let k2: Vec<bool> = perm.iter().map(|&i| k[i]).collect();
        let (e1, e2) = (ece(&c, &k, &cfg).unwrap(), ece(&c2, &k2, &cfg).unwrap());
        prop_assert!((e1 - e2).abs() < 1e-12);
        prop_assert!((oe(&c, &k, &cfg).unwrap() - oe(&c2, &k2, &cfg).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&e1));
    }
}

#[test]
fn ece_examples() {
    let cfg = CalibrationConfig::default();
    assert_eq!(ece(&[1.0, 1.0, 1.0], &[true; 3], &cfg).unwrap(), 0.0);
    assert!((ece(&[0.9, 0.9], &[true, false], &cfg).unwrap() - 0.4).abs() < 1e-12);
    assert!((ece(&[0.55, 0.95], &[true, false], &cfg).unwrap() - 0.7).abs() < 1e-12);
    assert!(ece(&[0.5], &[true, false], &cfg).is_err());
}

#[test]
fn oe_examples() {
    let cfg = CalibrationConfig::default();
    // underconfident: acc 1 > conf 0.65
    assert_eq!(oe(&[0.65, 0.65], &[true, true], &cfg).unwrap(), 0.0);
    assert!((oe(&[0.9, 0.9], &[true, false], &cfg).unwrap() - 0.36).abs() < 1e-12);
    assert_eq!(oe(&[1.0; 4], &[true; 4], &cfg).unwrap(), 0.0);
}

#[test]
fn perfectly_calibrated_fixture() {
    // bin centered at 0.75 with 3 of 4 correct, bin at 0.25 with 1 of 4
    let conf = [0.75, 0.75, 0.75, 0.75, 0.25, 0.25, 0.25, 0.25];
    let ok = [true, true, true, false, true, false, false, false];
    assert!(ece(&conf, &ok, &CalibrationConfig::default()).unwrap() < 1e-12);
}

#[test]
fn bin_boundaries_are_right_closed() {
    let cfg = CalibrationConfig::default();
    assert_eq!(cfg.bin_of(0.0), 0);
    assert_eq!(cfg.bin_of(0.1), 0);
    assert_eq!(cfg.bin_of(0.1000001), 1);
    assert_eq!(cfg.bin_of(0.3), 2);
    assert_eq!(cfg.bin_of(0.7), 6);
    assert_eq!(cfg.bin_of(1.0), 9);
    let one = CalibrationConfig { bins: 1 };
    assert_eq!(one.bin_of(0.0), 0);
    assert_eq!(one.bin_of(1.0), 0);
    let bins = calibration_bins(&[0.05, 0.95, 0.95], &[true, false, true], &cfg).unwrap();
    assert_eq!(bins.len(), 10);
    assert_eq!((bins[0].count, bins[9].count), (1, 2));
    assert!(calibration_csv(&bins).starts_with("bin,count,acc,conf\n0,1,1,0.05\n"));
}

#[test]
fn entropy_examples() {
    let curve = entropy_cdf(&[vec![0.0, 1.0, 0.0, 0.0], vec![0.25; 4]]).unwrap();
    assert_eq!(curve[0], (0.0, 0.5));
    assert!((curve[1].0 - 4f64.ln()).abs() < 1e-12);
    assert!((curve[1].0 - 1.38629).abs() < 1e-5);
    assert_eq!(curve[1].1, 1.0);
    assert!(entropy_cdf(&[vec![0.5, 0.6]]).is_err());
}

proptest! {
    #[test]
    fn entropy_cdf_axioms(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 1..30)) {
        let probs: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        let curve = entropy_cdf(&probs).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
        prop_assert_eq!(curve.last().unwrap().1, 1.0);
        for (h, _) in &curve {
            prop_assert!(*h >= 0.0 && *h <= 5f64.ln() + 1e-12);
        }
    }
}

fn small() -> ModelConfig {
    ModelConfig {
        vocab: 12,
        embed_dim: 4,
        attn_dim: 3,
        heads: 3,
        classes: 3,
        head_scale: 0.1,
        zero_output: false,
        ..ModelConfig::default()
    }
}

fn random_examples(model: &SentenceClassifier, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = RngState::new(seed, Stream::Data);
    (0..n)
        .map(|_| {
            let len = 3 + rng.below(5);
            let tokens: Vec<usize> = (0..len).map(|_| rng.below(model.config.vocab)).collect();
            let label = model.predict(&tokens).unwrap();
            Example { tokens, label }
        })
        .collect()
}

#[test]
fn duplicate_head_is_less_important_than_unique_head() {
    let mut model = SentenceClassifier::new(small(), 6).unwrap();
    let mut v = model.attention.v.clone();
    for r in 0..3 {
        v.set(r, 0, 2.0 * (r as f64 - 1.0));
        v.set(r, 1, 2.0 * (r as f64 - 1.0));
        v.set(r, 2, -3.0 + r as f64);
    }
    model.attention.v = v;
    let d = model.config.embed_dim;
    let c = model.classes();
    let block: Vec<f64> = model.output_weight.data()[2 * d * c..3 * d * c].to_vec();
    for h in 0..2 {
        for (k, b) in block.iter().enumerate() {
            model.output_weight.data_mut()[h * d * c + k] = 0.5 * b;
        }
    }
    let examples = random_examples(&model, 400, 1);
    let report = redundancy_report(&model, &examples).unwrap();
    assert_eq!(report.len(), 3);
    assert!(report.iter().all(|r| r.baseline == 1.0));
    assert!(report[0].delta < report[2].delta, "{report:?}");
    assert!(report[1].delta < report[2].delta, "{report:?}");
    assert!(redundancy_csv(&report).starts_with("head,baseline,masked,delta\n0,1,"));
}

#[test]
fn single_head_mask_leaves_bias_only() {
    let config = ModelConfig { heads: 1, ..small() };
    let model = SentenceClassifier::new(config, 3).unwrap();
    let examples = random_examples(&model, 50, 2);
    let report = redundancy_report(&model, &examples).unwrap();
    let bias_class = argmax(model.output_bias.data());
    let bias_acc = examples.iter().filter(|e| e.label == bias_class).count() as f64 / 50.0;
    assert_eq!(report[0].masked, bias_acc);
    assert_eq!(report[0].delta, report[0].baseline - bias_acc);
}

#[test]
fn redundant_fraction_counts_small_deltas() {
    let r = |head, delta| RedundancyRecord {
        head,
        baseline: 0.8,
        masked: 0.8 - delta,
        delta,
    };
    let recs = [r(0, 0.001), r(1, -0.002), r(2, 0.2), r(3, 0.0)];
    assert_eq!(redundant_fraction(&recs, 0.005), 0.75);
}
