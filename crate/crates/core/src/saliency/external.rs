use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{RgbImage, SaliencyDetector};
use crate::error::{Error, Result};
use crate::io::png::{read_gray_png, write_rgb_png};
use crate::tensor::ScoreMap;

static CALL_COUNTER: AtomicU64 = AtomicU64::new(0);

/// How to invoke an out-of-process saliency detector.
///
/// `command` is an argv template; the tokens `{input}` and `{output}` are
/// replaced with the PNG the toolkit writes and the grayscale PNG the tool
/// must produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalDetectorConfig {
    pub command: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub temp_dir: Option<PathBuf>,
}

fn default_timeout_secs() -> f64 {
    60.0
}

impl ExternalDetectorConfig {
    /// Splits a whitespace-separated template such as
    /// `python3 det.py {input} {output}`.
    pub fn from_template(template: &str) -> Result<Self> {
        let command: Vec<String> = template.split_whitespace().map(str::to_owned).collect();
        let cfg = Self {
            command,
            timeout_secs: default_timeout_secs(),
            temp_dir: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() {
            return Err(Error::InvalidParameter("empty detector command".into()));
        }
        if !self.command.iter().any(|a| a.contains("{input}"))
            || !self.command.iter().any(|a| a.contains("{output}"))
        {
            return Err(Error::InvalidParameter(
                "detector command must mention {input} and {output}".into(),
            ));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::InvalidParameter(
                "detector timeout must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExternalDetector {
    config: ExternalDetectorConfig,
    seed: Option<u64>,
}

impl ExternalDetector {
    pub fn new(config: ExternalDetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, seed: None })
    }

    /// Exposes `seed` to the child as `PIXCUE_SEED`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn run(&self, input: &Path, output: &Path) -> Result<()> {
        let args: Vec<String> = self
            .config
            .command
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
            })
            .collect();
        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped());
        if let Some(seed) = self.seed {
            cmd.env("PIXCUE_SEED", seed.to_string());
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| Error::Detector(format!("spawning {:?}: {e}", args[0])))?;
        // drain stderr concurrently so a chatty tool cannot block on a full pipe
        let stderr_reader = child.stderr.take().map(|mut e| {
            std::thread::spawn(move || {
                use std::io::Read;
                let mut buf = String::new();
                let _ = e.read_to_string(&mut buf);
                buf
            })
        });
        let collect_stderr = |r: Option<std::thread::JoinHandle<String>>| {
            r.and_then(|h| h.join().ok()).unwrap_or_default()
        };
        let deadline = Instant::now() + Duration::from_secs_f64(self.config.timeout_secs);
        loop {
            match child.try_wait() {
                Ok(Some(status)) if status.success() => {
                    collect_stderr(stderr_reader);
                    return Ok(());
                }
                Ok(Some(status)) => {
                    let stderr = collect_stderr(stderr_reader);
                    return Err(Error::Detector(format!(
                        "{:?} exited with {status}: {}",
                        args[0],
                        stderr.trim()
                    )));
                }
                Ok(None) if Instant::now() >= deadline => {
                    kill_tree(&mut child);
                    let _ = child.wait();
                    // not joined: an escaped grandchild may still hold the pipe
                    drop(stderr_reader);
                    return Err(Error::Detector(format!(
                        "{:?} timed out after {}s",
                        args[0], self.config.timeout_secs
                    )));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(Error::Detector(e.to_string())),
            }
        }
    }
}

/// Kills the child together with anything it spawned into its process group.
fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: plain syscall on the group the child leads
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

impl SaliencyDetector for ExternalDetector {
    fn score(&mut self, image: &RgbImage) -> Result<ScoreMap> {
        let dir = self
            .config
            .temp_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let n = CALL_COUNTER.fetch_add(1, Ordering::Relaxed);
        let stem = format!("pixcue-{}-{n}", std::process::id());
        let input = dir.join(format!("{stem}-in.png"));
        let output = dir.join(format!("{stem}-out.png"));
        write_rgb_png(&input, image)?;
        let result = self
            .run(&input, &output)
            .and_then(|_| read_gray_png(&output));
        let _ = std::fs::remove_file(&input);
        let _ = std::fs::remove_file(&output);
        result
    }
}
