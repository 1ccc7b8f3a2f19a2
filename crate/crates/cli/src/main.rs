use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pixcue_core::cues::Combiner;
use pixcue_core::io::synth::{generate_dataset, SynthSpec, MANIFEST_FILE};
use pixcue_core::pipeline::{
    load_manifest, run_adapt, run_cues, run_eval, run_pipeline, run_saliency, run_train_head,
    DetectorSpec, PipelineConfig, PipelineError, SaliencySource,
};
use pixcue_core::saliency::EraseSource;
use pixcue_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "pixcue",
    version,
    about = "Pixel-level pseudo labels from image tags"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-object dataset.
    GenSynth(GenSynthArgs),
    /// Hierarchical saliency for every image.
    Saliency(Common),
    /// Fuse attention and saliency into cue label maps.
    Cues {
        #[command(flatten)]
        common: Common,
        /// Directory written by `saliency`; defaults to each record's saliency path.
        #[arg(long)]
        saliency_dir: Option<PathBuf>,
    },
    /// Restrict softmax predictions to each image's tags.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Directory of `<id>.dct` prediction volumes; defaults to each record's prediction path.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
    },
    /// Score label maps against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of `<id>.png` label maps.
        #[arg(long)]
        pred_dir: PathBuf,
    },
    /// Train the class filter bank on stored features.
    TrainHead {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
    },
    /// Saliency, cues and evaluation in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Also run the single-round variant and report the mIoU difference.
        #[arg(long)]
        paired: bool,
    },
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON scene spec; defaults to the built-in three-class spec.
    #[arg(long, conflicts_with = "two_shape")]
    spec: Option<PathBuf>,
    /// Exactly two shapes per scene.
    #[arg(long)]
    two_shape: bool,
}

/// Flags shared by the dataset stages. Each one overrides the config file.
#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detector passes, including the first.
    #[arg(long)]
    rounds: Option<usize>,
    /// Comma-separated erase thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f32>>,
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    combiner: Option<Combiner>,
    /// `contrast[:radius]`, `oracle` or `exec:<command with {input} and {output}>`.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long, value_parser = parse_erase_source)]
    erase_source: Option<EraseSource>,
    /// Filter bank for computing attention from features.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_erase_source(s: &str) -> Result<EraseSource, String> {
    match s {
        "fused" => Ok(EraseSource::Fused),
        "raw" => Ok(EraseSource::Raw),
        _ => Err(format!("expected `fused` or `raw`, got {s:?}")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let mut message = e.to_string();
        if let PipelineError::Stage { failures, .. } = &e {
            for f in failures.iter().skip(1) {
                message += &format!("\n  {}: {}", f.id, f.error);
            }
        }
        Failure {
            code: e.exit_code() as u8,
            message,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.manifest {
            cfg.manifest = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.rounds.is_some() {
            cfg.rounds = self.rounds;
        }
        if let Some(v) = &self.thresholds {
            cfg.thresholds = v.clone();
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.combiner {
            cfg.combiner = v;
        }
        if let Some(v) = &self.detector {
            cfg.detector = v.parse::<DetectorSpec>()?;
        }
        if let Some(v) = self.erase_source {
            cfg.erase_source = v;
        }
        if self.bank.is_some() {
            cfg.bank = self.bank.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if cfg.manifest.as_os_str().is_empty() {
            return Err(usage("no manifest given (--manifest or config)"));
        }
        if cfg.out.as_os_str().is_empty() {
            return Err(usage("no output directory given (--out or config)"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen_synth(args: &GenSynthArgs) -> Result<(), Failure> {
    let spec = match (&args.spec, args.two_shape) {
        (Some(p), _) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        (None, true) => SynthSpec::two_shape(),
        (None, false) => SynthSpec::default(),
    };
    let manifest = generate_dataset(&args.out, &spec, args.count, args.seed)?;
    println!("{}", args.out.join(MANIFEST_FILE).display());
    eprintln!(
        "{} scenes, {} labels",
        manifest.records.len(),
        manifest.num_labels()
    );
    Ok(())
}

fn run(command: &Command) -> Result<(), Failure> {
    match command {
        Command::GenSynth(args) => gen_synth(args),
        Command::Saliency(common) => {
            let cfg = common.config()?;
            let m = load_manifest(&cfg.manifest)?;
            let r = run_saliency(&cfg, &m, &cfg.out)?;
            println!("{} images", r.images);
            Ok(())
        }
        Command::Cues {
            common,
            saliency_dir,
        } => {
            let cfg = common.config()?;
            let m = load_manifest(&cfg.manifest)?;
            let src = match saliency_dir {
                Some(d) => SaliencySource::Dir(d.clone()),
                None => SaliencySource::Manifest,
            };
            let s = run_cues(&cfg, &m, &src, &cfg.out)?;
            println!("{}", serde_json::to_string(&s.pixels).expect("string keys"));
            Ok(())
        }
        Command::Adapt { common, pred_dir } => {
            let cfg = common.config()?;
            let m = load_manifest(&cfg.manifest)?;
            let r = run_adapt(&cfg, &m, pred_dir.as_deref(), &cfg.out)?;
            println!("{} images", r.images);
            Ok(())
        }
        Command::Eval { common, pred_dir } => {
            let cfg = common.config()?;
            let m = load_manifest(&cfg.manifest)?;
            let report = run_eval(&cfg, &m, pred_dir, &cfg.out)?;
            print!("{}", report.table());
            Ok(())
        }
        Command::TrainHead { common, lr, steps } => {
            let cfg = common.config()?;
            let m = load_manifest(&cfg.manifest)?;
            let s = run_train_head(&m, *lr, *steps, cfg.seed, &cfg.out)?;
            println!(
                "loss {:.6} -> {:.6}, tag accuracy {:.4}",
                s.initial_loss, s.final_loss, s.tag_accuracy
            );
            Ok(())
        }
        Command::Pipeline { common, paired } => {
            let mut cfg = common.config()?;
            cfg.paired |= *paired;
            let s = run_pipeline(&cfg)?;
            for v in &s.variants {
                println!(
                    "{:<13} rounds={} mIoU={}",
                    v.name,
                    v.rounds,
                    v.miou.map_or("-".into(), |x| format!("{:.4}", x))
                );
            }
            if let Some(d) = s.miou_delta {
                println!("delta mIoU={d:+.4}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
