//! Batch stages over a dataset manifest: saliency, cue discovery, cue
//! adaptation, evaluation and head training, plus the end-to-end run.
//!
//! Every stage fans out per image on a dedicated thread pool, writes files
//! named after record ids, and never embeds timestamps or absolute paths,
//! so serial and parallel runs produce identical trees.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cues::{adapt_cues, discover_cues, Combiner, CueConfig, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::head::{
    extract_attention, head_forward, tag_accuracy, train_head, FeatureVolume, ImageTags,
};
use crate::io::container::{read_tensor, write_tensor, Tensor};
use crate::io::manifest::{DatasetManifest, Record};
use crate::io::png::{
    read_gray_png, read_label_png, read_rgb_png, write_gray_png, write_label_png,
};
use crate::io::synth::{OracleDetector, SynthMetadata, SynthSpec};
use crate::metrics::{ConfusionMatrix, CueCounts, EvalReport};
use crate::saliency::{
    hierarchical_saliency, ContrastDetector, ErasePolicy, EraseSource, ExternalDetector,
    ExternalDetectorConfig, Rgb, SaliencyDetector, DEFAULT_THRESHOLDS,
};
use crate::tensor::{resize_bilinear, ClassId, LabelMap, ScoreMap, ScoreVolume};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_CONTRAST_BLUR: usize = 2;

/// Which saliency detector a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorSpec {
    Contrast {
        #[serde(default)]
        blur_radius: usize,
    },
    /// Ground-truth driven detector for generated datasets; needs
    /// `synth.json` next to the manifest.
    Oracle,
    External(ExternalDetectorConfig),
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::Contrast {
            blur_radius: DEFAULT_CONTRAST_BLUR,
        }
    }
}

/// Parses `contrast`, `contrast:<radius>`, `oracle` or
/// `exec:<command template>`.
impl FromStr for DetectorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown detector {s:?}"));
        match s.split_once(':') {
            None if s == "contrast" => Ok(Self::default()),
            None if s == "oracle" => Ok(DetectorSpec::Oracle),
            Some(("contrast", r)) => Ok(DetectorSpec::Contrast {
                blur_radius: r.parse().map_err(|_| bad())?,
            }),
            Some(("exec", template)) => Ok(DetectorSpec::External(
                ExternalDetectorConfig::from_template(template)?,
            )),
            _ => Err(bad()),
        }
    }
}

/// One flat, versioned configuration shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Erase threshold per erasing round.
    pub thresholds: Vec<f32>,
    /// Detector passes, `1..=thresholds.len() + 1`; defaults to all.
    pub rounds: Option<usize>,
    pub gamma: f32,
    pub combiner: Combiner,
    pub erase_source: EraseSource,
    /// Overrides the manifest's mean pixel.
    pub mean_pixel: Option<Rgb>,
    pub detector: DetectorSpec,
    /// Filter bank used to compute attention from features instead of
    /// reading stored attention volumes.
    pub bank: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Passed to external detectors as `PIXCUE_SEED`; seeds head training.
    pub seed: u64,
    /// Also run a single-round variant and report the difference.
    pub paired: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            manifest: PathBuf::new(),
            out: PathBuf::new(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            rounds: None,
            gamma: DEFAULT_GAMMA,
            combiner: Combiner::default(),
            erase_source: EraseSource::default(),
            mean_pixel: None,
            detector: DetectorSpec::default(),
            bank: None,
            workers: 0,
            seed: 0,
            paired: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds.unwrap_or(self.thresholds.len() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::InvalidParameter(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        let rounds = self.rounds();
        if rounds == 0 || rounds > self.thresholds.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "rounds must be in 1..={} for {} thresholds, got {rounds}",
                self.thresholds.len() + 1,
                self.thresholds.len()
            )));
        }
        self.cue_config().validate()?;
        self.policy(crate::saliency::MID_GRAY).validate()?;
        if let DetectorSpec::External(e) = &self.detector {
            e.validate()?;
        }
        Ok(())
    }

    pub fn cue_config(&self) -> CueConfig {
        CueConfig {
            gamma: self.gamma,
            combiner: self.combiner,
        }
    }

    /// Erase policy truncated to `rounds() - 1` erasing rounds.
    pub fn policy(&self, dataset_mean: Rgb) -> ErasePolicy {
        let erasures = self.rounds().saturating_sub(1).min(self.thresholds.len());
        ErasePolicy {
            thresholds: self.thresholds[..erasures].to_vec(),
            mean_pixel: self.mean_pixel.unwrap_or(dataset_mean),
            source: self.erase_source,
        }
    }

    fn pool(&self) -> std::result::Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Load,
    Saliency,
    Cues,
    Adapt,
    Eval,
    TrainHead,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Saliency => "saliency",
            Stage::Cues => "cues",
            Stage::Adapt => "adapt",
            Stage::Eval => "eval",
            Stage::TrainHead => "train-head",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Data {
        stage: Stage,
        #[source]
        source: Error,
    },
    #[error("{stage}: {} of {total} images failed (first: {}: {})", failures.len(), failures[0].id, failures[0].error)]
    Stage {
        stage: Stage,
        total: usize,
        failures: Vec<Failure>,
    },
}

impl PipelineError {
    /// 1 usage, 2 data, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data { .. } => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    fn data(stage: Stage) -> impl FnOnce(Error) -> Self {
        move |source| PipelineError::Data { stage, source }
    }
}

impl From<Error> for PipelineError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(m) => PipelineError::Config(m),
            other => PipelineError::Data {
                stage: Stage::Load,
                source: other,
            },
        }
    }
}

type StageResult<T> = std::result::Result<T, PipelineError>;

/// Per-stage record of what ran and what failed; written as `report.json`
/// in the stage directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub images: usize,
    pub failures: Vec<Failure>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs `f` for every record on `pool`, keeping manifest order.
fn per_record<T: Send>(
    pool: &rayon::ThreadPool,
    records: &[Record],
    f: impl Fn(&Record) -> Result<T> + Sync,
) -> Vec<(String, Result<T>)> {
    pool.install(|| records.par_iter().map(|r| (r.id.clone(), f(r))).collect())
}

/// Splits per-record outcomes, writes the stage report and fails the
/// stage if any record failed.
fn finish_stage<T>(
    stage: Stage,
    dir: &Path,
    outcomes: Vec<(String, Result<T>)>,
) -> StageResult<Vec<(String, T)>> {
    let total = outcomes.len();
    let mut ok = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => failures.push(Failure {
                id,
                error: e.to_string(),
            }),
        }
    }
    let report = StageReport {
        stage,
        images: total,
        failures: failures.clone(),
    };
    write_json(&dir.join("report.json"), &report).map_err(PipelineError::data(stage))?;
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(PipelineError::Stage {
            stage,
            total,
            failures,
        })
    }
}

pub fn load_manifest(path: &Path) -> StageResult<DatasetManifest> {
    DatasetManifest::load(path).map_err(PipelineError::data(Stage::Load))
}

enum DetectorFactory {
    Contrast(usize),
    Oracle(SynthSpec),
    External(ExternalDetectorConfig, u64),
}

impl DetectorFactory {
    fn new(spec: &DetectorSpec, seed: u64, manifest: &DatasetManifest) -> StageResult<Self> {
        Ok(match spec {
            DetectorSpec::Contrast { blur_radius } => DetectorFactory::Contrast(*blur_radius),
            DetectorSpec::External(e) => DetectorFactory::External(e.clone(), seed),
            DetectorSpec::Oracle => {
                let meta = SynthMetadata::load(manifest.root())
                    .map_err(PipelineError::data(Stage::Saliency))?;
                DetectorFactory::Oracle(meta.spec)
            }
        })
    }

    fn build(&self, manifest: &DatasetManifest, r: &Record) -> Result<Box<dyn SaliencyDetector>> {
        Ok(match self {
            DetectorFactory::Contrast(radius) => Box::new(ContrastDetector {
                blur_radius: *radius,
            }),
            DetectorFactory::External(cfg, seed) => {
                Box::new(ExternalDetector::new(cfg.clone())?.with_seed(*seed))
            }
            DetectorFactory::Oracle(spec) => {
                let gt_path = r.ground_truth.as_ref().ok_or_else(|| {
                    Error::Detector("oracle detector needs a ground-truth path".into())
                })?;
                let gt = read_label_png(&manifest.resolve(gt_path))?;
                Box::new(OracleDetector::new(spec, &gt)?)
            }
        })
    }
}

/// File holding the final fused saliency of `id` inside a saliency
/// directory.
pub fn saliency_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.dct"))
}

/// Fused map after detector pass `k` (1-based).
pub fn saliency_round_path(dir: &Path, id: &str, k: usize) -> PathBuf {
    dir.join(format!("{id}_s{k}.dct"))
}

/// Writes `S1..Sk`, the final map (`.dct` and a `.png` preview) and
/// `report.json` under `out`.
pub fn run_saliency(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    out: &Path,
) -> StageResult<StageReport> {
    cfg.validate()?;
    let pool = cfg.pool()?;
    let factory = DetectorFactory::new(&cfg.detector, cfg.seed, manifest)?;
    let policy = cfg.policy(manifest.mean_pixel);
    let outcomes = per_record(&pool, &manifest.records, |r| {
        let image = read_rgb_png(&manifest.resolve(&r.image))?;
        let mut det = factory.build(manifest, r)?;
        let h = hierarchical_saliency(&image, &mut *det, &policy)?;
        for (k, s) in h.rounds.iter().enumerate() {
            write_tensor(
                &saliency_round_path(out, &r.id, k + 1),
                &Tensor::from_score_map(s),
            )?;
        }
        write_tensor(
            &saliency_path(out, &r.id),
            &Tensor::from_score_map(&h.fused),
        )?;
        write_gray_png(&out.join(format!("{}.png", r.id)), &h.fused)
    });
    let total = outcomes.len();
    finish_stage(Stage::Saliency, out, outcomes)?;
    Ok(StageReport {
        stage: Stage::Saliency,
        images: total,
        failures: Vec::new(),
    })
}

/// Where the cue stage reads saliency from.
#[derive(Debug, Clone, PartialEq)]
pub enum SaliencySource {
    /// A directory written by [`run_saliency`].
    Dir(PathBuf),
    /// Each record's `saliency` path (`.dct` or grayscale `.png`).
    Manifest,
}

fn read_score_file(path: &Path) -> Result<ScoreMap> {
    let map = if path.extension().is_some_and(|e| e == "png") {
        read_gray_png(path)?
    } else {
        read_tensor(path)?.to_score_map()?
    };
    map.into_normalized()
}

fn load_saliency(src: &SaliencySource, manifest: &DatasetManifest, r: &Record) -> Result<ScoreMap> {
    match src {
        SaliencySource::Dir(d) => read_score_file(&saliency_path(d, &r.id)),
        SaliencySource::Manifest => {
            let p = r.saliency.as_ref().ok_or_else(|| Error::Manifest {
                path: manifest.root().to_path_buf(),
                message: format!("record {:?} has no saliency path", r.id),
            })?;
            read_score_file(&manifest.resolve(p))
        }
    }
}

/// Raw attention for `r`: computed from features when a filter bank is
/// given, otherwise read from the record's attention volume (channel `i`
/// is class `i + 1`).
fn load_raw_attention(
    manifest: &DatasetManifest,
    bank: Option<&crate::head::ClassFilterBank>,
    r: &Record,
) -> Result<ScoreVolume> {
    let missing = |what: &str| Error::Manifest {
        path: manifest.root().to_path_buf(),
        message: format!("record {:?} has no {what} path", r.id),
    };
    match bank {
        Some(bank) => {
            let p = r.features.as_ref().ok_or_else(|| missing("features"))?;
            let f = read_tensor(&manifest.resolve(p))?.to_features()?;
            Ok(head_forward(&f, bank)?.0)
        }
        None => {
            let p = r.attention.as_ref().ok_or_else(|| missing("attention"))?;
            read_tensor(&manifest.resolve(p))?.to_volume(1)
        }
    }
}

/// Normalized attention of the present classes, resized to `dims` when
/// the stored volume has a different resolution.
fn attention_for(raw: &ScoreVolume, tags: &ImageTags, dims: (usize, usize)) -> Result<ScoreVolume> {
    let a = extract_attention(raw, tags)?;
    if a.dims() == dims {
        return Ok(a);
    }
    let maps = a
        .maps()
        .iter()
        .map(|m| resize_bilinear(m, dims.0, dims.1)?.into_normalized())
        .collect::<Result<_>>()?;
    ScoreVolume::new(dims.0, dims.1, a.classes().to_vec(), maps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueSummary {
    pub images: usize,
    pub gamma: f32,
    pub combiner: Combiner,
    /// Pixels per label name, background included.
    pub pixels: BTreeMap<String, u64>,
}

/// Writes one indexed PNG of cues per record plus `summary.json` and
/// `report.json` under `out`.
pub fn run_cues(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    saliency: &SaliencySource,
    out: &Path,
) -> StageResult<CueSummary> {
    cfg.validate()?;
    let pool = cfg.pool()?;
    let bank = match &cfg.bank {
        Some(p) => Some(
            read_tensor(p)
                .and_then(|t| t.to_filter_bank())
                .map_err(PipelineError::data(Stage::Cues))?,
        ),
        None => None,
    };
    let cue_cfg = cfg.cue_config();
    let outcomes = per_record(&pool, &manifest.records, |r| {
        let tags = manifest.tags(r)?;
        let s = load_saliency(saliency, manifest, r)?;
        let raw = load_raw_attention(manifest, bank.as_ref(), r)?;
        let attn = attention_for(&raw, &tags, s.dims())?;
        let cues = discover_cues(&attn, &s, &tags, &cue_cfg)?;
        write_label_png(&out.join(format!("{}.png", r.id)), &cues)?;
        Ok(cues)
    });
    let ok = finish_stage(Stage::Cues, out, outcomes)?;
    let mut counts = vec![0u64; manifest.num_labels()];
    for (_, cues) in &ok {
        for &l in cues.data() {
            counts[l as usize] += 1;
        }
    }
    let summary = CueSummary {
        images: ok.len(),
        gamma: cfg.gamma,
        combiner: cfg.combiner,
        pixels: manifest.label_space.iter().cloned().zip(counts).collect(),
    };
    write_json(&out.join("summary.json"), &summary).map_err(PipelineError::data(Stage::Cues))?;
    Ok(summary)
}

/// Restricts each record's softmax prediction (`[|L|, H, W]`, channel `i`
/// is class `i`) to its tags and writes the adapted cues under `out`.
/// Predictions come from `pred_dir/<id>.dct` or the record's prediction
/// path.
pub fn run_adapt(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    pred_dir: Option<&Path>,
    out: &Path,
) -> StageResult<StageReport> {
    let pool = cfg.pool()?;
    let outcomes = per_record(&pool, &manifest.records, |r| {
        let path = match (pred_dir, &r.prediction) {
            (Some(d), _) => d.join(format!("{}.dct", r.id)),
            (None, Some(p)) => manifest.resolve(p),
            (None, None) => {
                return Err(Error::Manifest {
                    path: manifest.root().to_path_buf(),
                    message: format!("record {:?} has no prediction path", r.id),
                })
            }
        };
        let pred = read_tensor(&path)?.to_volume(0)?;
        let labels = adapt_cues(&pred, &manifest.tags(r)?)?;
        write_label_png(&out.join(format!("{}.png", r.id)), &labels)
    });
    let total = outcomes.len();
    finish_stage(Stage::Adapt, out, outcomes)?;
    Ok(StageReport {
        stage: Stage::Adapt,
        images: total,
        failures: Vec::new(),
    })
}

/// Scores `pred_dir/<id>.png` against each record's ground truth and
/// writes `report.json` (with the confusion matrix) and `table.txt`.
pub fn run_eval(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    pred_dir: &Path,
    out: &Path,
) -> StageResult<EvalReport> {
    let pool = cfg.pool()?;
    let n = manifest.num_labels();
    let outcomes = per_record(&pool, &manifest.records, |r| {
        let gt_path = r.ground_truth.as_ref().ok_or_else(|| Error::Manifest {
            path: manifest.root().to_path_buf(),
            message: format!("record {:?} has no ground truth", r.id),
        })?;
        let gt = read_label_png(&manifest.resolve(gt_path))?;
        let pred = read_label_png(&pred_dir.join(format!("{}.png", r.id)))?;
        gt.validate(n)?;
        pred.validate(n)?;
        let mut cm = ConfusionMatrix::new(n);
        cm.accumulate(&gt, &pred)?;
        let counts = (0..n as ClassId)
            .map(|c| CueCounts::tally(&gt, &pred, c))
            .collect::<Result<Vec<_>>>()?;
        Ok((cm, counts))
    });
    let ok = finish_stage(Stage::Eval, out, outcomes)?;
    let mut cm = ConfusionMatrix::new(n);
    let mut counts = vec![CueCounts::default(); n];
    for (_, (c, k)) in &ok {
        cm.merge(c).map_err(PipelineError::data(Stage::Eval))?;
        for (acc, v) in counts.iter_mut().zip(k) {
            acc.add(*v);
        }
    }
    let report = EvalReport::build(cm, &counts, &manifest.label_space, ok.len());
    write_json(&out.join("report.json"), &report).map_err(PipelineError::data(Stage::Eval))?;
    write_text(&out.join("table.txt"), &report.table())
        .map_err(PipelineError::data(Stage::Eval))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub images: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub tag_accuracy: f64,
}

/// Trains a filter bank on every record's features and writes `bank.dct`,
/// `losses.csv` and `summary.json` under `out`.
pub fn run_train_head(
    manifest: &DatasetManifest,
    lr: f64,
    steps: usize,
    seed: u64,
    out: &Path,
) -> StageResult<TrainSummary> {
    let data_err = PipelineError::data(Stage::TrainHead);
    let dataset = manifest
        .records
        .iter()
        .map(|r| -> Result<(FeatureVolume, ImageTags)> {
            let p = r.features.as_ref().ok_or_else(|| Error::Manifest {
                path: manifest.root().to_path_buf(),
                message: format!("record {:?} has no features path", r.id),
            })?;
            Ok((
                read_tensor(&manifest.resolve(p))?.to_features()?,
                manifest.tags(r)?,
            ))
        })
        .collect::<Result<Vec<_>>>();
    let dataset = match dataset {
        Ok(d) => d,
        Err(e) => return Err(data_err(e)),
    };
    let run = || -> Result<TrainSummary> {
        let trained = train_head(&dataset, lr, steps, seed)?;
        write_tensor(
            &out.join("bank.dct"),
            &Tensor::from_filter_bank(&trained.bank),
        )?;
        let mut csv = String::from("step,loss\n");
        for (i, l) in trained.losses.iter().enumerate() {
            csv += &format!("{i},{l:.17e}\n");
        }
        write_text(&out.join("losses.csv"), &csv)?;
        let summary = TrainSummary {
            images: dataset.len(),
            lr,
            steps,
            seed,
            initial_loss: trained.losses[0],
            final_loss: *trained.losses.last().expect("losses has steps + 1 entries"),
            tag_accuracy: tag_accuracy(&trained.bank, &dataset)?,
        };
        write_json(&out.join("summary.json"), &summary)?;
        Ok(summary)
    };
    run().map_err(|e| match e {
        Error::InvalidParameter(m) => PipelineError::Config(m),
        other => PipelineError::Data {
            stage: Stage::TrainHead,
            source: other,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub rounds: usize,
    pub miou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
    /// Cue recall on the second-strongest shape of each generated scene;
    /// present only for generated datasets with multi-shape scenes.
    pub second_object_recall: Option<f64>,
}

/// The configuration fields that can change a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParameters {
    pub thresholds: Vec<f32>,
    pub rounds: usize,
    pub gamma: f32,
    pub combiner: Combiner,
    pub erase_source: EraseSource,
    pub mean_pixel: Rgb,
    pub detector: DetectorSpec,
    pub attention_from_bank: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub parameters: RunParameters,
    pub variants: Vec<VariantSummary>,
    /// Hierarchical minus single-round mIoU in a paired run.
    pub miou_delta: Option<f64>,
}

/// Recall of cues on each scene's second-strongest shape, pooled over
/// pixels.
fn second_object_recall(
    meta: &SynthMetadata,
    manifest: &DatasetManifest,
    cue_dir: &Path,
) -> Result<Option<f64>> {
    let mut counts = CueCounts::default();
    let by_id: BTreeMap<&str, &Record> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    for scene in &meta.scenes {
        let Some(second) = scene.shapes.get(1) else {
            continue;
        };
        let Some(r) = by_id.get(scene.id.as_str()) else {
            continue;
        };
        let Some(gt_path) = &r.ground_truth else {
            continue;
        };
        let gt = read_label_png(&manifest.resolve(gt_path))?;
        let cues: LabelMap = read_label_png(&cue_dir.join(format!("{}.png", r.id)))?;
        counts.add(CueCounts::tally(&gt, &cues, second.class)?);
    }
    Ok(counts.quality().recall)
}

fn run_variant(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    meta: Option<&SynthMetadata>,
    name: &str,
    dir: &Path,
) -> StageResult<VariantSummary> {
    let sal_dir = dir.join("saliency");
    let cue_dir = dir.join("cues");
    run_saliency(cfg, manifest, &sal_dir)?;
    run_cues(cfg, manifest, &SaliencySource::Dir(sal_dir), &cue_dir)?;
    let report = run_eval(cfg, manifest, &cue_dir, &dir.join("eval"))?;
    let second_object_recall = match meta {
        Some(m) => {
            second_object_recall(m, manifest, &cue_dir).map_err(PipelineError::data(Stage::Eval))?
        }
        None => None,
    };
    Ok(VariantSummary {
        name: name.to_string(),
        rounds: cfg.rounds(),
        miou: report.miou,
        pixel_accuracy: report.pixel_accuracy,
        second_object_recall,
    })
}

/// Saliency, attention extraction, cues and evaluation against ground
/// truth. In paired mode a single-round variant runs under `single/` and
/// the configured one under `hierarchical/`; otherwise stages write
/// directly under `out`. `summary.json` lands in `out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<PipelineSummary> {
    cfg.validate()?;
    if cfg.out.as_os_str().is_empty() {
        return Err(PipelineError::Config("no output directory given".into()));
    }
    let manifest = load_manifest(&cfg.manifest)?;
    let meta = SynthMetadata::load(manifest.root()).ok();
    let mut variants = Vec::new();
    if cfg.paired {
        let single = PipelineConfig {
            rounds: Some(1),
            ..cfg.clone()
        };
        variants.push(run_variant(
            &single,
            &manifest,
            meta.as_ref(),
            "single",
            &cfg.out.join("single"),
        )?);
        variants.push(run_variant(
            cfg,
            &manifest,
            meta.as_ref(),
            "hierarchical",
            &cfg.out.join("hierarchical"),
        )?);
    } else {
        variants.push(run_variant(
            cfg,
            &manifest,
            meta.as_ref(),
            "hierarchical",
            &cfg.out,
        )?);
    }
    let miou_delta = match variants.as_slice() {
        [a, b] => a.miou.zip(b.miou).map(|(a, b)| b - a),
        _ => None,
    };
    let summary = PipelineSummary {
        parameters: RunParameters {
            thresholds: cfg.thresholds.clone(),
            rounds: cfg.rounds(),
            gamma: cfg.gamma,
            combiner: cfg.combiner,
            erase_source: cfg.erase_source,
            mean_pixel: cfg.mean_pixel.unwrap_or(manifest.mean_pixel),
            detector: cfg.detector.clone(),
            attention_from_bank: cfg.bank.is_some(),
            seed: cfg.seed,
        },
        variants,
        miou_delta,
    };
    write_json(&cfg.out.join("summary.json"), &summary)
        .map_err(PipelineError::data(Stage::Eval))?;
    Ok(summary)
}
