//! Results persistence and the static inspection report.
//!
//! A result directory holds `results.json`, one `concepts/concept_NNN/`
//! folder of example PNGs per concept, `index.html`, and `timing.json`.
//! The page lets a reviewer tick concepts that match the class's intended
//! meaning and download the ticks as `alignment.json`; placed next to
//! `results.json`, that file is tallied by [`rerender`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::tensor::write_atomic;
use crate::compose::Provenance;
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::method::StageTiming;
use crate::pipeline::RunResult;

pub const RESULTS_FILE: &str = "results.json";
pub const ALIGNMENT_FILE: &str = "alignment.json";
pub const INDEX_FILE: &str = "index.html";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: usize,
    pub size: usize,
    pub mean_tcav: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    /// Example image paths relative to the result directory.
    pub examples: Vec<String>,
    pub untestable: bool,
    pub per_run_scores: Vec<f64>,
    pub baseline_scores: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub config: RunConfig,
    pub concepts: Vec<ConceptRecord>,
    pub seed: u64,
    pub method: Method,
    pub class_name: String,
}

/// Reviewer verdicts keyed by concept id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub aligned: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentTally {
    pub labeled: usize,
    pub aligned: usize,
    pub concepts: usize,
}

impl AlignmentTally {
    pub fn ratio(&self) -> Option<f64> {
        (self.labeled > 0).then(|| self.aligned as f64 / self.labeled as f64)
    }
}

fn concept_dir(id: usize) -> String {
    format!("concepts/concept_{id:03}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes the full result directory and returns the persisted record.
pub fn render_report(result: &RunResult, out_dir: &Path) -> Result<ResultsFile> {
    create_dir(out_dir)?;
    let mut concepts = Vec::with_capacity(result.concepts.len());
    for tested in &result.concepts {
        let c = &tested.concept;
        let rel_dir = concept_dir(c.concept_id);
        let dir = out_dir.join(&rel_dir);
        create_dir(&dir)?;
        let mut examples = Vec::with_capacity(c.examples.len());
        for (j, ex) in c.examples.iter().enumerate() {
            let rel = format!("{rel_dir}/example_{j:03}.png");
            let mut bytes = Vec::new();
            ex.pixels
                .to_rgb8()
                .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
            write_atomic(&out_dir.join(&rel), &bytes)?;
            examples.push(rel);
        }
        concepts.push(ConceptRecord {
            id: c.concept_id,
            size: c.len(),
            mean_tcav: tested.tcav.mean_score,
            p_value: tested.tcav.p_value,
            significant: tested.tcav.significant,
            examples,
            untestable: tested.tcav.untestable,
            per_run_scores: tested.tcav.per_run_scores.clone(),
            baseline_scores: tested.tcav.random_baseline_scores.clone(),
            provenance: c.examples.iter().map(|e| e.provenance.clone()).collect(),
        });
    }
    let record = ResultsFile {
        config: result.config.clone(),
        concepts,
        seed: result.seed,
        method: result.method,
        class_name: result.class_name.clone(),
    };
    write_json(&out_dir.join(RESULTS_FILE), &record)?;
    write_json(&out_dir.join(TIMING_FILE), &result.timing)?;
    let alignment = read_alignment(out_dir)?;
    write_atomic(&out_dir.join(INDEX_FILE), render_html(&record, alignment.as_ref()).as_bytes())?;
    Ok(record)
}

pub fn read_results(dir: &Path) -> Result<ResultsFile> {
    let path = dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_alignment(dir: &Path) -> Result<Option<Alignment>> {
    let path = dir.join(ALIGNMENT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

pub fn tally(record: &ResultsFile, alignment: Option<&Alignment>) -> AlignmentTally {
    let mut t = AlignmentTally {
        labeled: 0,
        aligned: 0,
        concepts: record.concepts.len(),
    };
    if let Some(a) = alignment {
        for c in &record.concepts {
            if let Some(&v) = a.aligned.get(&c.id.to_string()) {
                t.labeled += 1;
                t.aligned += v as usize;
            }
        }
    }
    t
}

/// Regenerates `index.html` from `results.json` (and `alignment.json` when
/// present) and returns the alignment tally.
pub fn rerender(dir: &Path) -> Result<AlignmentTally> {
    let record = read_results(dir)?;
    let alignment = read_alignment(dir)?;
    write_atomic(&dir.join(INDEX_FILE), render_html(&record, alignment.as_ref()).as_bytes())?;
    Ok(tally(&record, alignment.as_ref()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn render_html(record: &ResultsFile, alignment: Option<&Alignment>) -> String {
    let mut h = String::new();
    let title = format!("{} concepts for {}", record.method, escape(&record.class_name));
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n<style>\n\
body {{ font-family: sans-serif; margin: 1.5em; }}\n\
table {{ border-collapse: collapse; }}\n\
td, th {{ border: 1px solid #ccc; padding: 0.4em; vertical-align: top; }}\n\
img {{ width: 72px; height: 72px; image-rendering: pixelated; margin: 1px; }}\n\
.sig {{ color: #0a0; font-weight: bold; }}\n\
.ns {{ color: #888; }}\n\
.badge {{ background: #eee; border-radius: 0.3em; padding: 0.1em 0.4em; }}\n\
</style>\n</head>\n<body>\n<h1>{title}</h1>\n<p>Seed {seed}. Tick the concepts whose examples match the class's intended meaning, then save.</p>\n\
<table>\n<tr><th>Concept</th><th>Size</th><th>Mean TCAV</th><th>p-value</th><th>Significance</th><th>Aligned</th><th>Examples</th></tr>\n",
        seed = record.seed
    );
    for c in &record.concepts {
        let score = c.mean_tcav.map_or("n/a".to_string(), |s| format!("{s:.3}"));
        let p = c.p_value.map_or("n/a".to_string(), |p| format!("{p:.3e}"));
        let marker = if c.untestable {
            "<span class=\"badge\">insufficient samples</span>"
        } else if c.significant {
            "<span class=\"sig\">&#9733; significant</span>"
        } else {
            "<span class=\"ns\">not significant</span>"
        };
        let checked = alignment
            .and_then(|a| a.aligned.get(&c.id.to_string()))
            .is_some_and(|&v| v);
        let _ = write!(
            h,
            "<tr><td>c<sub>{id}</sub></td><td>{size}</td><td>{score}</td><td>{p}</td><td>{marker}</td>\
<td><input type=\"checkbox\" class=\"aligned\" data-concept=\"{id}\"{chk}></td><td>",
            id = c.id,
            size = c.size,
            chk = if checked { " checked" } else { "" }
        );
        for ex in &c.examples {
            let _ = write!(h, "<img src=\"{0}\" alt=\"{0}\">", escape(ex));
        }
        h.push_str("</td></tr>\n");
    }
    h.push_str(
        "</table>\n<p><button id=\"save\">Save alignment.json</button></p>\n<script>\n\
document.getElementById('save').addEventListener('click', function () {\n\
  var aligned = {};\n\
  document.querySelectorAll('input.aligned').forEach(function (box) {\n\
    aligned[box.dataset.concept] = box.checked;\n\
  });\n\
  var blob = new Blob([JSON.stringify({aligned: aligned}, null, 2) + '\\n'], {type: 'application/json'});\n\
  var link = document.createElement('a');\n\
  link.href = URL.createObjectURL(blob);\n\
  link.download = 'alignment.json';\n\
  link.click();\n\
});\n</script>\n</body>\n</html>\n",
    );
    h
}

/// Stage durations, kept out of `results.json` so that file is reproducible.
pub fn read_timing(dir: &Path) -> Result<Vec<StageTiming>> {
    let path = dir.join(TIMING_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
