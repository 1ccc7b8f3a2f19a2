//! Reference implementations and randomized trial drivers shared by the
//! oracle tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pixcue_core::cues::{adapt_cues, discover_cues, Combiner, CueConfig};
use pixcue_core::head::{
    classification_grad, classification_loss, head_forward, ClassFilterBank, FeatureVolume,
    ImageTags,
};
use pixcue_core::metrics::ConfusionMatrix;
use pixcue_core::tensor::{ClassId, LabelMap, ScoreMap, ScoreVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative path to file bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Mean-over-classes logistic loss of a linear GAP head, all in f64.
pub fn reference_loss(w: &[Vec<f64>], b: &[f64], means: &[f64], present: &[bool]) -> f64 {
    let mut total = 0.0;
    for ((wc, bc), &z) in w.iter().zip(b).zip(present) {
        let s: f64 = wc.iter().zip(means).map(|(x, m)| x * m).sum::<f64>() + bc;
        let p = 1.0 / (1.0 + (-s).exp());
        total -= if z { p.ln() } else { (1.0 - p).ln() };
    }
    total / w.len() as f64
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Worst relative error between analytic gradients and central differences
/// over `count` random heads (K <= 8, H*W <= 16, |Z| <= 4).
pub fn gradient_trials(count: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let mut worst = 0f64;
    for trial in 0..count {
        let k = rng.random_range(1..=8);
        let (width, height) = loop {
            let w = rng.random_range(1..=4);
            let hh = rng.random_range(1..=4);
            if w * hh <= 16 {
                break (w, hh);
            }
        };
        let z = rng.random_range(1..=4usize);
        let data: Vec<f32> = (0..k * width * height)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let f = FeatureVolume::new(k, width, height, data).unwrap();
        let classes: Vec<ClassId> = (1..=z as ClassId).collect();
        let weights: Vec<Vec<f32>> = (0..z)
            .map(|_| (0..k).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let biases: Vec<f32> = (0..z).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bank = ClassFilterBank::new(classes.clone(), weights.clone(), biases.clone()).unwrap();
        let present: Vec<ClassId> = classes
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let tags = ImageTags::new(present.iter().copied(), z + 1).unwrap();
        let flags: Vec<bool> = classes.iter().map(|c| tags.contains(*c)).collect();

        let means: Vec<f64> = (0..k)
            .map(|c| f.channel(c).iter().map(|&v| v as f64).sum::<f64>() / (width * height) as f64)
            .collect();
        let w64: Vec<Vec<f64>> = weights
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        let b64: Vec<f64> = biases.iter().map(|&v| v as f64).collect();

        let (_, scores) = head_forward(&f, &bank).unwrap();
        let lib_loss = classification_loss(&scores, &tags).unwrap();
        let ref_loss = reference_loss(&w64, &b64, &means, &flags);
        if (lib_loss - ref_loss).abs() >= 1e-9 {
            return Err(format!(
                "trial {trial}: loss {lib_loss} vs reference {ref_loss}"
            ));
        }

        let g = classification_grad(&f, &bank, &tags).unwrap();
        for c in 0..z {
            for j in 0..=k {
                let probe = |delta: f64| {
                    let (mut w, mut b) = (w64.clone(), b64.clone());
                    if j < k {
                        w[c][j] += delta;
                    } else {
                        b[c] += delta;
                    }
                    reference_loss(&w, &b, &means, &flags)
                };
                let numeric = (probe(h) - probe(-h)) / (2.0 * h);
                let analytic = if j < k { g.weights[c][j] } else { g.biases[c] };
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    Ok(worst)
}

/// Per-pixel restatement of the cue rule: best harmonic score over the
/// present classes (scanned in ascending id order, strictly greater wins),
/// background when that best score is below gamma.
pub fn brute_force_cues(attn: &[(ClassId, Vec<f32>)], s: &[f32], gamma: f32) -> Vec<ClassId> {
    let mut sorted = attn.to_vec();
    sorted.sort_by_key(|(c, _)| *c);
    (0..s.len())
        .map(|i| {
            let mut best_c = 0;
            let mut best_h = f32::NEG_INFINITY;
            for (c, a) in &sorted {
                let (a, sv) = (a[i] as f64, s[i] as f64);
                let h = if a + sv == 0.0 {
                    0.0
                } else {
                    2.0 * a * sv / (a + sv)
                } as f32;
                if h > best_h {
                    best_h = h;
                    best_c = *c;
                }
            }
            if sorted.is_empty() || best_h < gamma {
                0
            } else {
                best_c
            }
        })
        .collect()
}

pub fn random_score(rng: &mut ChaCha8Rng) -> f32 {
    // mix a coarse grid (frequent ties) with continuous values
    if rng.random_bool(0.5) {
        rng.random_range(0..=8) as f32 / 8.0
    } else {
        rng.random_range(0.0..=1.0)
    }
}

/// Random cue instances (<= 4 classes, <= 16x16, gamma in {0.2, 0.4, 0.6})
/// compared against [`brute_force_cues`].
pub fn cue_trials(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..count {
        let (w, h) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let n = w * h;
        let num_classes = rng.random_range(1..=4usize);
        let present: Vec<ClassId> = (1..=num_classes as ClassId)
            .filter(|_| rng.random_bool(0.6))
            .collect();
        let gamma = [0.2f32, 0.4, 0.6][rng.random_range(0..3)];
        let mut order = present.clone();
        if rng.random_bool(0.5) {
            order.reverse();
        }
        let slices: Vec<(ClassId, Vec<f32>)> = order
            .iter()
            .map(|&c| (c, (0..n).map(|_| random_score(&mut rng)).collect()))
            .collect();
        let s: Vec<f32> = (0..n).map(|_| random_score(&mut rng)).collect();
        let attn = ScoreVolume::new(
            w,
            h,
            order.clone(),
            slices
                .iter()
                .map(|(_, d)| ScoreMap::new_normalized(w, h, d.clone()).unwrap())
                .collect(),
        )
        .unwrap();
        let tags = ImageTags::new(present.iter().copied(), num_classes + 1).unwrap();
        let cfg = CueConfig {
            gamma,
            combiner: Combiner::Harmonic,
        };
        let got = discover_cues(
            &attn,
            &ScoreMap::new_normalized(w, h, s.clone()).unwrap(),
            &tags,
            &cfg,
        )
        .unwrap();
        if got.data() != brute_force_cues(&slices, &s, gamma).as_slice() {
            return Err(format!("trial {trial} ({w}x{h}, gamma {gamma}) disagrees"));
        }
    }
    Ok(())
}

/// Random prediction volumes compared against a tag-restricted argmax.
pub fn adapt_trials(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..count {
        let (w, h) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let labels = rng.random_range(2..=6usize);
        let data: Vec<f32> = (0..labels * w * h)
            .map(|_| random_score(&mut rng))
            .collect();
        let pred = ScoreVolume::from_channel_major(w, h, 0, &data).unwrap();
        let present: Vec<ClassId> = (1..labels as ClassId)
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let tags = ImageTags::new(present.iter().copied(), labels).unwrap();
        let got = adapt_cues(&pred, &tags).unwrap();
        let plane = w * h;
        for i in 0..plane {
            let mut best = (0 as ClassId, data[i]);
            for &c in &present {
                let v = data[c as usize * plane + i];
                if v > best.1 {
                    best = (c, v);
                }
            }
            if got.data()[i] != best.0 {
                return Err(format!(
                    "trial {trial} pixel {i}: {} vs {}",
                    got.data()[i],
                    best.0
                ));
            }
        }
    }
    Ok(())
}

/// One-hot prediction volume over `labels` channels for a ground truth.
pub fn one_hot(gt: &LabelMap, labels: usize) -> ScoreVolume {
    let plane = gt.data().len();
    let mut data = vec![0f32; labels * plane];
    for (i, &l) in gt.data().iter().enumerate() {
        data[l as usize * plane + i] = 1.0;
    }
    ScoreVolume::from_channel_major(gt.width(), gt.height(), 0, &data).unwrap()
}

/// Two images, three classes, one ignore pixel; counts tallied by hand:
/// (gt, pred): (0,0)=2 (0,1)=1 (0,2)=1 (1,0)=1 (1,1)=2 (2,0)=1 (2,2)=1.
pub fn hand_fixture() -> [(LabelMap, LabelMap); 2] {
    [
        (
            LabelMap::new(2, 2, vec![0, 1, 1, 255]).unwrap(),
            LabelMap::new(2, 2, vec![0, 1, 0, 2]).unwrap(),
        ),
        (
            LabelMap::new(3, 2, vec![2, 2, 0, 1, 0, 0]).unwrap(),
            LabelMap::new(3, 2, vec![2, 0, 0, 1, 1, 2]).unwrap(),
        ),
    ]
}

pub const HAND_IOU: [f64; 3] = [1.0 / 3.0, 0.5, 1.0 / 3.0];

pub fn hand_confusion() -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(3);
    for (gt, pred) in hand_fixture() {
        cm.accumulate(&gt, &pred).unwrap();
    }
    cm
}

/// Per-class indicator features: channel `c` is 1 everywhere when class
/// `c + 1` is tagged. Covers every tag subset of `classes` classes.
pub fn separable_toy_set(classes: usize, size: usize) -> Vec<(FeatureVolume, ImageTags)> {
    (0..1usize << classes)
        .map(|mask| {
            let mut data = vec![0f32; classes * size * size];
            for c in 0..classes {
                if mask >> c & 1 == 1 {
                    data[c * size * size..(c + 1) * size * size].fill(1.0);
                }
            }
            let present = (0..classes)
                .filter(|c| mask >> c & 1 == 1)
                .map(|c| c as ClassId + 1);
            (
                FeatureVolume::new(classes, size, size, data).unwrap(),
                ImageTags::new(present, classes + 1).unwrap(),
            )
        })
        .collect()
}
