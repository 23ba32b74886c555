//! Runs chart programs in a child interpreter and captures the rendered image.
//!
//! Isolation is a fresh temporary working directory, a wall-clock timeout and
//! capped stdout/stderr. There is no OS-level sandboxing: only run
//! benchmark-style inputs.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::agents::GeneratedProgram;
use crate::imaging;

/// Environment variable naming the sidecar path the tracer writes.
pub const TRACE_OUT_ENV: &str = "CHARTSMITH_TRACE_OUT";
pub const IMAGE_FILE: &str = "chart.png";
const PROGRAM_FILE: &str = "program.py";
const RUNNER_FILE: &str = "runner.py";
const SIDECAR_FILE: &str = "trace.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStatus {
    Success,
    RuntimeError,
    Timeout,
    NoImage,
}

impl RenderStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RenderStatus::Success => "success",
            RenderStatus::RuntimeError => "runtime_error",
            RenderStatus::Timeout => "timeout",
            RenderStatus::NoImage => "no_image",
        }
    }
}

/// O(y_t): the rendered PNG or a classified failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOutcome {
    pub status: RenderStatus,
    /// PNG bytes; persisted as a separate file, not inside traces.
    #[serde(skip)]
    pub image: Option<Vec<u8>>,
    pub image_sha256: Option<String>,
    pub stdout: String,
    pub stderr: String,
    pub duration_secs: f64,
}

impl RenderOutcome {
    pub fn success(png: Vec<u8>, stdout: impl Into<String>, stderr: impl Into<String>, duration_secs: f64) -> Self {
        RenderOutcome {
            status: RenderStatus::Success,
            image_sha256: Some(imaging::sha256_hex(&png)),
            image: Some(png),
            stdout: stdout.into(),
            stderr: stderr.into(),
            duration_secs,
        }
    }

    pub fn failure(
        status: RenderStatus,
        stdout: impl Into<String>,
        stderr: impl Into<String>,
        duration_secs: f64,
    ) -> Self {
        debug_assert_ne!(status, RenderStatus::Success);
        RenderOutcome {
            status,
            image: None,
            image_sha256: None,
            stdout: stdout.into(),
            stderr: stderr.into(),
            duration_secs,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == RenderStatus::Success && self.image.is_some()
    }

    /// Short description of why no image was produced: the tail of stderr, or the status.
    pub fn failure_note(&self) -> String {
        let tail: Vec<&str> = self.stderr.lines().rev().take(15).collect();
        let tail: Vec<&str> = tail.into_iter().rev().collect();
        let tail = tail.join("\n");
        match self.status {
            RenderStatus::Timeout => format!("execution timed out after {:.1}s\n{tail}", self.duration_secs),
            RenderStatus::NoImage if tail.trim().is_empty() => "the script finished without drawing a figure".into(),
            _ if tail.trim().is_empty() => format!("execution failed ({})", self.status.as_str()),
            _ => tail,
        }
        .trim()
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderLimits {
    pub timeout: Duration,
    pub max_output_bytes: usize,
}

impl Default for RenderLimits {
    fn default() -> Self {
        RenderLimits {
            timeout: Duration::from_secs(60),
            max_output_bytes: 64 * 1024,
        }
    }
}

/// Logged chart elements of one execution, one list per evaluation facet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementTrace {
    pub texts: Vec<String>,
    pub chart_types: Vec<String>,
    pub colors: Vec<String>,
    pub layout: Vec<[u32; 3]>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("sidecar is not valid trace JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("layout triple {0:?} out of range")]
    Layout([u32; 3]),
    #[error("color {0:?} is not a hex color")]
    Color(String),
}

impl ElementTrace {
    /// Parses and validates the sidecar JSON; colors come back as lowercase `#rrggbb`.
    pub fn from_sidecar_json(json: &str) -> Result<Self, TraceError> {
        let mut trace: ElementTrace = serde_json::from_str(json)?;
        trace.validate_and_normalize()?;
        Ok(trace)
    }

    pub fn validate_and_normalize(&mut self) -> Result<(), TraceError> {
        for &[rows, cols, index] in &self.layout {
            if index < 1 || u64::from(index) > u64::from(rows) * u64::from(cols) {
                return Err(TraceError::Layout([rows, cols, index]));
            }
        }
        for c in &mut self.colors {
            *c = normalize_hex_color(c).ok_or_else(|| TraceError::Color(c.clone()))?;
        }
        Ok(())
    }
}

/// `#RGB`, `#RRGGBB` and `#RRGGBBAA` to lowercase `#rrggbb` (alpha dropped).
pub fn normalize_hex_color(raw: &str) -> Option<String> {
    let hex = raw.trim().strip_prefix('#')?;
    if !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let hex = hex.to_ascii_lowercase();
    match hex.len() {
        3 => Some(hex.chars().flat_map(|c| [c, c]).fold(String::from("#"), |mut s, c| {
            s.push(c);
            s
        })),
        6 => Some(format!("#{hex}")),
        8 => Some(format!("#{}", &hex[..6])),
        _ => None,
    }
}

/// Anything that can turn a program into a rendered chart.
pub trait ChartRenderer: Send + Sync {
    fn render(&self, program: &GeneratedProgram) -> RenderOutcome;

    /// Render with the element tracer active. A missing or corrupt sidecar yields `None`
    /// without changing the outcome.
    fn render_traced(&self, program: &GeneratedProgram) -> (RenderOutcome, Option<ElementTrace>);
}

#[derive(Debug, Clone)]
pub struct RenderSettings {
    /// Interpreter command; argv is `[command, script_path]`.
    pub command: String,
    pub limits: RenderLimits,
    pub workers: usize,
    pub keep_artifacts: bool,
    /// Python file providing `install_hooks()`; loaded only in traced mode.
    pub tracer_shim: Option<PathBuf>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            command: "python3".into(),
            limits: RenderLimits::default(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            keep_artifacts: false,
            tracer_shim: None,
        }
    }
}

/// Counting semaphore bounding concurrent child processes.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct SubprocessRenderer {
    settings: RenderSettings,
    slots: Slots,
}

impl SubprocessRenderer {
    pub fn new(settings: RenderSettings) -> Self {
        let workers = settings.workers.max(1);
        SubprocessRenderer {
            settings,
            slots: Slots {
                free: Mutex::new(workers),
                cv: Condvar::new(),
            },
        }
    }

    pub fn settings(&self) -> &RenderSettings {
        &self.settings
    }

    fn execute(&self, program: &GeneratedProgram, traced: bool) -> (RenderOutcome, Option<ElementTrace>) {
        if program.source.trim().is_empty() {
            return (
                RenderOutcome::failure(RenderStatus::RuntimeError, "", "empty program source", 0.0),
                None,
            );
        }
        let _slot = self.slots.acquire();
        let dir = match tempfile::Builder::new().prefix("chartsmith-render-").tempdir() {
            Ok(d) => d,
            Err(e) => {
                return (
                    RenderOutcome::failure(
                        RenderStatus::RuntimeError,
                        "",
                        format!("cannot create workdir: {e}"),
                        0.0,
                    ),
                    None,
                )
            }
        };
        let result = self.execute_in(dir.path(), program, traced);
        if self.settings.keep_artifacts {
            let kept = dir.keep();
            log::info!("render artifacts kept in {}", kept.display());
        }
        result
    }

    fn execute_in(
        &self,
        dir: &Path,
        program: &GeneratedProgram,
        traced: bool,
    ) -> (RenderOutcome, Option<ElementTrace>) {
        let shim = if traced {
            self.settings.tracer_shim.as_deref()
        } else {
            None
        };
        if traced && shim.is_none() {
            log::warn!("traced render requested but no tracer shim is configured");
        }
        let runner = dir.join(RUNNER_FILE);
        let sidecar = dir.join(SIDECAR_FILE);
        if let Err(e) = std::fs::write(dir.join(PROGRAM_FILE), &program.source)
            .and_then(|_| std::fs::write(&runner, runner_script(shim)))
        {
            return (
                RenderOutcome::failure(RenderStatus::RuntimeError, "", format!("cannot write script: {e}"), 0.0),
                None,
            );
        }

        let mut cmd = Command::new(&self.settings.command);
        cmd.arg(&runner)
            .current_dir(dir)
            .env("MPLBACKEND", "Agg")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if traced {
            cmd.env(TRACE_OUT_ENV, &sidecar);
        } else {
            cmd.env_remove(TRACE_OUT_ENV);
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                return (
                    RenderOutcome::failure(
                        RenderStatus::RuntimeError,
                        "",
                        format!("cannot start {:?}: {e}", self.settings.command),
                        0.0,
                    ),
                    None,
                )
            }
        };
        let cap = self.settings.limits.max_output_bytes;
        let out_reader = spawn_capped_reader(child.stdout.take(), cap);
        let err_reader = spawn_capped_reader(child.stderr.take(), cap);

        let waited = child.wait_timeout(self.settings.limits.timeout);
        let (exit_ok, timed_out) = match waited {
            Ok(Some(status)) => (status.success(), false),
            Ok(None) => {
                kill_tree(&mut child);
                (false, true)
            }
            Err(e) => {
                log::error!("waiting for render process: {e}");
                kill_tree(&mut child);
                (false, false)
            }
        };
        let stdout = join_reader(out_reader);
        let mut stderr = join_reader(err_reader);
        let duration = started.elapsed().as_secs_f64();

        if timed_out {
            return (
                RenderOutcome::failure(RenderStatus::Timeout, stdout, stderr, duration),
                None,
            );
        }
        if !exit_ok {
            return (
                RenderOutcome::failure(RenderStatus::RuntimeError, stdout, stderr, duration),
                None,
            );
        }
        let image_path = dir.join(IMAGE_FILE);
        let outcome = match std::fs::read(&image_path) {
            Ok(bytes) => match imaging::decode_rgb(&bytes) {
                Ok(_) => RenderOutcome::success(bytes, stdout, stderr, duration),
                Err(e) => {
                    stderr.push_str(&format!("\n{IMAGE_FILE} does not decode: {e}"));
                    RenderOutcome::failure(RenderStatus::NoImage, stdout, stderr, duration)
                }
            },
            Err(_) => RenderOutcome::failure(RenderStatus::NoImage, stdout, stderr, duration),
        };
        let trace = if traced && outcome.is_success() {
            read_sidecar(&sidecar)
        } else {
            None
        };
        (outcome, trace)
    }
}

impl ChartRenderer for SubprocessRenderer {
    fn render(&self, program: &GeneratedProgram) -> RenderOutcome {
        self.execute(program, false).0
    }

    fn render_traced(&self, program: &GeneratedProgram) -> (RenderOutcome, Option<ElementTrace>) {
        self.execute(program, true)
    }
}

fn read_sidecar(path: &Path) -> Option<ElementTrace> {
    let raw = match std::fs::read_to_string(path) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("no trace sidecar at {}: {e}", path.display());
            return None;
        }
    };
    match ElementTrace::from_sidecar_json(&raw) {
        Ok(t) => Some(t),
        Err(e) => {
            log::warn!("discarding corrupt trace sidecar {}: {e}", path.display());
            None
        }
    }
}

fn runner_script(shim: Option<&Path>) -> String {
    let mut s = String::from(
        "import os, sys, runpy\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n",
    );
    if let Some(shim) = shim {
        let literal = serde_json::to_string(&shim.to_string_lossy()).expect("string serializes");
        s.push_str(&format!(
            "import importlib.util\n\
             _spec = importlib.util.spec_from_file_location(\"chartsmith_tracer\", {literal})\n\
             _tracer = importlib.util.module_from_spec(_spec)\n\
             _spec.loader.exec_module(_tracer)\n\
             _tracer.install_hooks()\n"
        ));
    }
    s.push_str(&format!(
        "try:\n    runpy.run_path({PROGRAM_FILE:?}, run_name=\"__main__\")\n\
         except SystemExit as _exit:\n    if _exit.code not in (None, 0):\n        raise\n\
         import matplotlib.pyplot as _plt\n\
         if not os.path.exists({IMAGE_FILE:?}) and _plt.get_fignums():\n    _plt.savefig({IMAGE_FILE:?})\n"
    ));
    s
}

fn spawn_capped_reader<R: Read + Send + 'static>(pipe: Option<R>, cap: usize) -> Option<JoinHandle<Vec<u8>>> {
    let mut pipe = pipe?;
    Some(std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    // Keep draining past the cap so the child never blocks on a full pipe.
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    }))
}

fn join_reader(handle: Option<JoinHandle<Vec<u8>>>) -> String {
    handle
        .and_then(|h| h.join().ok())
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .unwrap_or_default()
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    if let Ok(pgid) = libc::pid_t::try_from(child.id()) {
        // The child leads its own process group; take down anything it spawned too.
        // SAFETY: killpg has no memory-safety preconditions.
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Replays pinned outputs keyed by exact program source. Unknown sources fail
/// with `runtime_error`. Used for hermetic tests and replays.
#[derive(Debug, Default, Clone)]
pub struct FixtureRenderer {
    images: HashMap<String, Vec<u8>>,
    traces: HashMap<String, ElementTrace>,
}

impl FixtureRenderer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_image(mut self, source: impl Into<String>, png: Vec<u8>) -> Self {
        self.images.insert(source.into(), png);
        self
    }

    pub fn with_trace(mut self, source: impl Into<String>, trace: ElementTrace) -> Self {
        self.traces.insert(source.into(), trace);
        self
    }
}

impl ChartRenderer for FixtureRenderer {
    fn render(&self, program: &GeneratedProgram) -> RenderOutcome {
        match self.images.get(&program.source) {
            Some(png) => RenderOutcome::success(png.clone(), "", "", 0.0),
            None => RenderOutcome::failure(RenderStatus::RuntimeError, "", "no pinned render for this program", 0.0),
        }
    }

    fn render_traced(&self, program: &GeneratedProgram) -> (RenderOutcome, Option<ElementTrace>) {
        let outcome = self.render(program);
        let trace = outcome
            .is_success()
            .then(|| self.traces.get(&program.source).cloned())
            .flatten();
        (outcome, trace)
    }
}
