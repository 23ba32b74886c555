//! The built-in fixture corpus and its self-consistency checks.

use std::path::Path;

use crate::agents::GeneratedProgram;
use crate::evaluator::{evaluate_task, Facet, PinnedTraces};
use crate::imaging;
use crate::orchestrator::{GOLD_FILE, INSTRUCTION_FILE, REFERENCE_FILE};
use crate::render::{ChartRenderer, ElementTrace};
use crate::verifier::{color_score, parse_lines, structure_score, text_score, FixtureOcr};

pub const OCR_FILE: &str = "reference.txt";
pub const TRACE_FILE: &str = "expected.json";

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub reference_png: Vec<u8>,
    pub ocr_lines: Vec<String>,
    pub gold_src: String,
    pub instruction: String,
    /// Sidecar-schema JSON of the gold program's elements.
    pub expected_trace: String,
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        [$((
            $name,
            include_bytes!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus/", $name, "/reference.png")).as_slice(),
            include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus/", $name, "/reference.txt")),
            include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus/", $name, "/gold.src")),
            include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus/", $name, "/instruction.txt")),
            include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus/", $name, "/expected.json")),
        )),*]
    };
}

type Embedded = (
    &'static str,
    &'static [u8],
    &'static str,
    &'static str,
    &'static str,
    &'static str,
);

const EMBEDDED: [Embedded; 10] = builtin!(
    "area_fill",
    "bar_revenue",
    "barh_ranking",
    "errorbar_trials",
    "grid_2x2",
    "heatmap_grid",
    "hist_values",
    "line_two_series",
    "pie_share",
    "scatter_points",
);

pub fn builtin() -> Vec<Fixture> {
    EMBEDDED
        .iter()
        .map(|&(name, png, ocr, gold, instruction, trace)| Fixture {
            name: name.to_string(),
            reference_png: png.to_vec(),
            ocr_lines: parse_lines(ocr),
            gold_src: gold.to_string(),
            instruction: instruction.trim().to_string(),
            expected_trace: trace.to_string(),
        })
        .collect()
}

/// Reads a corpus laid out like `fixtures/corpus`: one subdirectory per fixture.
pub fn load_dir(dir: &Path) -> std::io::Result<Vec<Fixture>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let d = dir.join(&name);
            let text = |f: &str| std::fs::read_to_string(d.join(f));
            Ok(Fixture {
                reference_png: std::fs::read(d.join(REFERENCE_FILE))?,
                ocr_lines: parse_lines(&text(OCR_FILE)?),
                gold_src: text(GOLD_FILE)?,
                instruction: text(INSTRUCTION_FILE).unwrap_or_default().trim().to_string(),
                expected_trace: text(TRACE_FILE)?,
                name,
            })
        })
        .collect()
}

/// Writes fixtures as a benchmark dataset (task dirs with reference, instruction and gold).
pub fn export_dataset(fixtures: &[Fixture], dir: &Path) -> std::io::Result<()> {
    for f in fixtures {
        let d = dir.join(&f.name);
        std::fs::create_dir_all(&d)?;
        std::fs::write(d.join(REFERENCE_FILE), &f.reference_png)?;
        std::fs::write(d.join(OCR_FILE), f.ocr_lines.join("\n") + "\n")?;
        std::fs::write(d.join(INSTRUCTION_FILE), format!("{}\n", f.instruction))?;
        std::fs::write(d.join(GOLD_FILE), &f.gold_src)?;
        std::fs::write(d.join(TRACE_FILE), &f.expected_trace)?;
    }
    Ok(())
}

/// OCR backend answering for every fixture reference image.
pub fn fixture_ocr(fixtures: &[Fixture]) -> FixtureOcr {
    let mut ocr = FixtureOcr::new();
    for f in fixtures {
        if let Ok(img) = imaging::decode_rgb(&f.reference_png) {
            ocr.insert(&img, f.ocr_lines.clone());
        }
    }
    ocr
}

/// Pinned traces for every fixture's gold program.
pub fn pinned_traces(fixtures: &[Fixture]) -> Result<PinnedTraces, String> {
    let mut pinned = PinnedTraces::new();
    for f in fixtures {
        let trace = ElementTrace::from_sidecar_json(&f.expected_trace).map_err(|e| format!("{}: {e}", f.name))?;
        pinned.insert(&f.gold_src, trace);
    }
    Ok(pinned)
}

/// Checks one fixture: the reference decodes, scores exactly 1.0 against
/// itself on all three verifier criteria, and its pinned trace evaluates to
/// F1 1.0 against itself. With a renderer, the gold program must also
/// reproduce the reference pixels.
pub fn verify_fixture(f: &Fixture, renderer: Option<&dyn ChartRenderer>) -> Result<(), String> {
    let img = imaging::decode_rgb(&f.reference_png).map_err(|e| format!("reference does not decode: {e}"))?;
    let ocr = fixture_ocr(std::slice::from_ref(f));
    let color = color_score(&img, &img);
    let text = text_score(&img, &img, &ocr).map_err(|e| e.to_string())?;
    let structure = structure_score(&img, &img);
    if (color, text, structure) != (1.0, 1.0, 1.0) {
        return Err(format!(
            "self-similarity is not exact: color={color} text={text} structure={structure}"
        ));
    }
    let pinned = pinned_traces(std::slice::from_ref(f))?;
    let report = evaluate_task(&f.name, &f.gold_src, Some(&f.gold_src), &pinned).map_err(|e| e.to_string())?;
    if let Some(bad) = Facet::ALL.iter().find(|&&k| report.get(k).f1 != 1.0) {
        return Err(format!("gold-vs-gold {} F1 is {}", bad.as_str(), report.get(*bad).f1));
    }
    if let Some(r) = renderer {
        let out = r.render(&GeneratedProgram::initial(f.gold_src.clone(), ""));
        let Some(png) = out.image.as_deref() else {
            return Err(format!("gold program failed to render: {}", out.failure_note()));
        };
        let rendered = imaging::decode_rgb(png).map_err(|e| e.to_string())?;
        if rendered != img {
            return Err("gold render differs from the reference pixels".into());
        }
    }
    Ok(())
}
