//! Independent reference implementations checked against the library.

mod common;

use pixcue_core::cues::adapt_cues;
use pixcue_core::head::{classification_loss, ClassScores, ImageTags};
use pixcue_core::objective::{combined_loss, segmentation_loss};
use pixcue_core::tensor::{
    resize_bilinear, softmax_volume, ClassId, LabelMap, ScoreMap, ScoreVolume,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_matches_central_differences() {
    let worst = common::gradient_trials(200, 11).unwrap();
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn zero_scores_cost_ln2_per_class() {
    for z in 1..=5usize {
        let classes: Vec<ClassId> = (1..=z as ClassId).collect();
        let scores = ClassScores::from_raw(classes, vec![0.0; z]);
        let tags = ImageTags::new([1], z + 1).unwrap();
        let loss = classification_loss(&scores, &tags).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }
}

#[test]
fn uniform_prediction_over_21_labels_costs_ln21() {
    let classes: Vec<ClassId> = (0..21).collect();
    let maps = (0..21).map(|_| ScoreMap::zeros(3, 2).unwrap()).collect();
    let pred = softmax_volume(&ScoreVolume::new(3, 2, classes, maps).unwrap()).unwrap();
    let target = LabelMap::new(3, 2, vec![0, 4, 20, 255, 7, 13]).unwrap();
    let loss = segmentation_loss(&pred, &target).unwrap();
    assert_eq!(loss.pixels, 5);
    assert!((loss.value - 3.044522437723423).abs() < 1e-6);
    assert_eq!(combined_loss(0.25, loss.value), 0.25 + loss.value);
}

#[test]
fn softmax_golden() {
    let v = ScoreVolume::from_channel_major(1, 1, 0, &[1.0, 2.0, 3.0]).unwrap();
    let p = softmax_volume(&v).unwrap();
    let expected = [0.09003057317038046, 0.24472847105479765, 0.6652409557748219];
    for (m, e) in p.maps().iter().zip(expected) {
        assert!((m.data()[0] as f64 - e).abs() < 1e-7);
    }
}

/// Bilinear resampling written as a sum of tent weights over source pixels.
fn tent_resize(m: &ScoreMap, nw: usize, nh: usize) -> Vec<f64> {
    let coord = |d: usize, src: usize, dst: usize| {
        ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
    };
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let sy = coord(y, m.height(), nh);
        for x in 0..nw {
            let sx = coord(x, m.width(), nw);
            let mut acc = 0.0;
            for j in 0..m.height() {
                for i in 0..m.width() {
                    let wgt = (1.0 - (sx - i as f64).abs()).max(0.0)
                        * (1.0 - (sy - j as f64).abs()).max(0.0);
                    acc += wgt * m.get(i, j) as f64;
                }
            }
            out.push(acc);
        }
    }
    out
}

#[test]
fn bilinear_matches_tent_reference() {
    let up = resize_bilinear(&ScoreMap::new(2, 1, vec![0.0, 1.0]).unwrap(), 4, 1).unwrap();
    assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let m = ScoreMap::new(
            w,
            h,
            (0..w * h).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let (nw, nh) = (rng.random_range(1..=9), rng.random_range(1..=9));
        let got = resize_bilinear(&m, nw, nh).unwrap();
        for (g, r) in got.data().iter().zip(tent_resize(&m, nw, nh)) {
            assert!((*g as f64 - r).abs() < 1e-5, "{g} vs {r}");
        }
    }
}

#[test]
fn cue_discovery_matches_brute_force() {
    common::cue_trials(1000, 21).unwrap();
}

#[test]
fn adapt_matches_restricted_argmax() {
    common::adapt_trials(500, 8).unwrap();
}

#[test]
fn adapt_on_one_hot_reproduces_ground_truth() {
    let gt = LabelMap::new(3, 2, vec![0, 2, 2, 0, 3, 0]).unwrap();
    let tags = ImageTags::new([2, 3], 4).unwrap();
    assert_eq!(adapt_cues(&common::one_hot(&gt, 4), &tags).unwrap(), gt);
}

#[test]
fn hand_tallied_confusion_fixture() {
    let cm = common::hand_confusion();
    assert_eq!(cm.total(), 9);
    let iou = cm.iou();
    assert_eq!(iou.per_class, common::HAND_IOU.map(Some).to_vec());
    assert_eq!(iou.mean, Some((1.0 / 3.0 + 0.5 + 1.0 / 3.0) / 3.0));
    assert_eq!(cm.pixel_accuracy(), Some(5.0 / 9.0));
}
