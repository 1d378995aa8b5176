//! Report assembly: the (anti-spoofing model x enhancement condition) EER
//! table plus distribution figures for a completed run matrix.

use super::plot::{save_cdf_png, CdfSeries};
use super::{compute_eer, score_distribution, Key, ScoreSet};
use crate::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// One cell of the run matrix. `scores` is `None` when the condition was
/// requested but never scored.
pub struct RunCell {
    pub antispoof: String,
    pub enhancement: String,
    pub scores: Option<ScoreSet>,
}

#[derive(Debug, Serialize)]
struct JsonCell {
    antispoof: String,
    enhancement: String,
    /// EER in percent rounded to 2 decimals; absent for missing cells.
    eer_percent: Option<f64>,
    threshold: Option<f64>,
    n_scores: usize,
}

#[derive(Debug)]
pub struct ReportBundle {
    pub table_csv: PathBuf,
    pub table_json: PathBuf,
    pub images: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `table.csv`, `table.json`, and one score-CDF image per scored
/// cell into `out_dir`. Missing or unusable cells become an em-dash in the
/// CSV and a warning; the report is still produced.
pub fn emit_report(cells: &[RunCell], cdf_bins: usize, out_dir: impl AsRef<Path>) -> Result<ReportBundle> {
    if cells.is_empty() {
        return Err(Error::InvalidInput("no runs to report".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rows: Vec<&str> = Vec::new();
    let mut cols: Vec<&str> = Vec::new();
    for cell in cells {
        if !rows.contains(&cell.antispoof.as_str()) {
            rows.push(&cell.antispoof);
        }
        if !cols.contains(&cell.enhancement.as_str()) {
            cols.push(&cell.enhancement);
        }
    }

    let mut warnings = Vec::new();
    let mut images = Vec::new();
    let mut json_cells = Vec::new();
    let mut eers = vec![vec![None::<(f64, f64)>; cols.len()]; rows.len()];

    for cell in cells {
        let ri = rows.iter().position(|r| *r == cell.antispoof).unwrap();
        let ci = cols.iter().position(|c| *c == cell.enhancement).unwrap();
        let label = format!("{} / {}", cell.antispoof, cell.enhancement);
        let mut n_scores = 0;
        match &cell.scores {
            None => warnings.push(format!("missing condition: {label}")),
            Some(scores) => {
                n_scores = scores.len();
                match compute_eer(scores) {
                    Err(e) => warnings.push(format!("partial run {label}: {e}")),
                    Ok((eer, thr)) => {
                        eers[ri][ci] = Some((eer, thr));
                        let table = score_distribution(scores, cdf_bins)?;
                        let img = out_dir.join(format!(
                            "cdf_{}__{}.png",
                            sanitize(&cell.antispoof),
                            sanitize(&cell.enhancement)
                        ));
                        let series: Vec<CdfSeries<'_>> = table
                            .per_class
                            .iter()
                            .map(|(key, cdf)| CdfSeries {
                                label: match key {
                                    Key::Bonafide => "bona fide",
                                    Key::Spoof => "spoof",
                                },
                                grid: &table.grid,
                                cdf,
                            })
                            .collect();
                        save_cdf_png(&img, &series)?;
                        images.push(img);
                    }
                }
            }
        }
        let cell_eer = eers[ri][ci];
        json_cells.push(JsonCell {
            antispoof: cell.antispoof.clone(),
            enhancement: cell.enhancement.clone(),
            eer_percent: cell_eer.map(|(e, _)| round2(e * 100.0)),
            threshold: cell_eer.map(|(_, t)| t),
            n_scores,
        });
    }

    let mut csv = String::from("antispoof");
    for c in &cols {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for (ri, r) in rows.iter().enumerate() {
        csv.push_str(r);
        for ci in 0..cols.len() {
            csv.push(',');
            match eers[ri][ci] {
                Some((eer, _)) => csv.push_str(&format!("{:.2}", eer * 100.0)),
                None => csv.push('—'),
            }
        }
        csv.push('\n');
    }

    let table_csv = out_dir.join("table.csv");
    std::fs::write(&table_csv, csv).map_err(|e| Error::io(&table_csv, e))?;

    #[derive(Serialize)]
    struct JsonReport<'a> {
        cells: &'a [JsonCell],
        warnings: &'a [String],
    }
    let table_json = out_dir.join("table.json");
    let json = serde_json::to_string_pretty(&JsonReport {
        cells: &json_cells,
        warnings: &warnings,
    })
    .expect("report serialization");
    std::fs::write(&table_json, json).map_err(|e| Error::io(&table_json, e))?;

    Ok(ReportBundle {
        table_csv,
        table_json,
        images,
        warnings,
    })
}
