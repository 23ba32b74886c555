//! Text criterion: Jaccard index over OCR token sets.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;

use crate::imaging;

#[derive(Debug, thiserror::Error)]
pub enum OcrError {
    #[error("OCR command {command:?} failed: {detail}")]
    Command { command: String, detail: String },
    #[error("no pinned OCR text for image {digest}")]
    NotPinned { digest: String },
    #[error("OCR I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// `image -> recognized lines`.
pub trait TextExtractor: Send + Sync {
    fn extract(&self, image: &RgbImage) -> Result<Vec<String>, OcrError>;
}

/// Runs `[command, image_path]` and reads one recognized line per stdout line.
#[derive(Debug, Clone)]
pub struct CommandOcr {
    pub command: String,
}

impl CommandOcr {
    pub fn new(command: impl Into<String>) -> Self {
        CommandOcr {
            command: command.into(),
        }
    }
}

impl TextExtractor for CommandOcr {
    fn extract(&self, image: &RgbImage) -> Result<Vec<String>, OcrError> {
        let file = tempfile::Builder::new()
            .prefix("chartsmith-ocr-")
            .suffix(".png")
            .tempfile()?;
        std::fs::write(file.path(), imaging::encode_png(image))?;
        let output = Command::new(&self.command)
            .arg(file.path())
            .output()
            .map_err(|e| OcrError::Command {
                command: self.command.clone(),
                detail: e.to_string(),
            })?;
        if !output.status.success() {
            return Err(OcrError::Command {
                command: self.command.clone(),
                detail: format!("{}: {}", output.status, String::from_utf8_lossy(&output.stderr).trim()),
            });
        }
        Ok(String::from_utf8_lossy(&output.stdout)
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }
}

/// Deterministic extractor: text pinned per image, keyed by pixel digest.
/// [`FixtureOcr::from_dir`] pairs every `X.png` with a sibling `X.txt`.
#[derive(Debug, Clone, Default)]
pub struct FixtureOcr {
    by_digest: HashMap<String, Vec<String>>,
}

impl FixtureOcr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &RgbImage, lines: Vec<String>) {
        self.by_digest.insert(imaging::pixel_digest(image), lines);
    }

    pub fn extend(&mut self, other: FixtureOcr) {
        self.by_digest.extend(other.by_digest);
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }

    /// Recursively indexes `dir`. PNGs without a sidecar are skipped.
    pub fn from_dir(dir: &Path) -> Result<Self, OcrError> {
        let mut ocr = FixtureOcr::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&d)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            entries.sort();
            for path in entries {
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == "png") {
                    let sidecar = path.with_extension("txt");
                    if !sidecar.is_file() {
                        continue;
                    }
                    let bytes = std::fs::read(&path)?;
                    let Ok(img) = imaging::decode_rgb(&bytes) else {
                        log::warn!("fixture OCR: skipping undecodable {}", path.display());
                        continue;
                    };
                    ocr.insert(&img, parse_lines(&std::fs::read_to_string(&sidecar)?));
                }
            }
        }
        Ok(ocr)
    }
}

pub fn parse_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

impl TextExtractor for FixtureOcr {
    fn extract(&self, image: &RgbImage) -> Result<Vec<String>, OcrError> {
        let digest = imaging::pixel_digest(image);
        self.by_digest
            .get(&digest)
            .cloned()
            .ok_or(OcrError::NotPinned { digest })
    }
}

/// Lowercased whitespace tokens with edge punctuation trimmed.
pub fn tokenize<S: AsRef<str>>(lines: &[S]) -> BTreeSet<String> {
    lines
        .iter()
        .flat_map(|l| l.as_ref().split_whitespace())
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// |A ∩ B| / |A ∪ B|; two empty sets score 1.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// m2 in [0, 1].
pub fn text_score(generated: &RgbImage, reference: &RgbImage, ocr: &dyn TextExtractor) -> Result<f64, OcrError> {
    let a = tokenize(&ocr.extract(generated)?);
    let b = tokenize(&ocr.extract(reference)?);
    Ok(jaccard(&a, &b))
}
