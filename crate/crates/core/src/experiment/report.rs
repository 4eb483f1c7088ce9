//! Accuracy tables: variants as rows, datasets as columns.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::ExperimentResult;

pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// "mean ± std" in percent.
pub fn accuracy_cell(r: &ExperimentResult) -> String {
    format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std)
}

fn seconds_cell(r: &ExperimentResult) -> String {
    format!("{:.2} ± {:.2}", r.train_seconds_mean, r.train_seconds_std)
}

struct Table {
    datasets: Vec<String>,
    rows: Vec<(String, Vec<Option<String>>)>,
}

fn table(results: &[ExperimentResult], cell: fn(&ExperimentResult) -> String) -> Table {
    let mut datasets: Vec<String> = Vec::new();
    let mut variants: Vec<String> = Vec::new();
    let mut cells = BTreeMap::new();
    for r in results {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
        cells.insert((r.variant.clone(), r.dataset.clone()), cell(r));
    }
    let rows = variants
        .into_iter()
        .map(|v| {
            let row = datasets
                .iter()
                .map(|d| cells.get(&(v.clone(), d.clone())).cloned())
                .collect();
            (v, row)
        })
        .collect();
    Table { datasets, rows }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn to_csv(t: &Table) -> String {
    let mut s = String::from("variant");
    for d in &t.datasets {
        s.push(',');
        s.push_str(&csv_field(d));
    }
    s.push('\n');
    for (v, row) in &t.rows {
        s.push_str(&csv_field(v));
        for c in row {
            s.push(',');
            s.push_str(c.as_deref().unwrap_or(""));
        }
        s.push('\n');
    }
    s
}

fn to_text(t: &Table, corner: &str) -> String {
    let mut header = vec![corner.to_string()];
    header.extend(t.datasets.iter().cloned());
    let mut lines = vec![header];
    for (v, row) in &t.rows {
        let mut l = vec![v.clone()];
        l.extend(row.iter().map(|c| c.clone().unwrap_or_else(|| "-".into())));
        lines.push(l);
    }
    let cols = lines[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (x, &w))| {
                let pad = w - x.chars().count();
                if c == 0 {
                    format!("{x}{}", " ".repeat(pad))
                } else {
                    format!("{}{x}", " ".repeat(pad))
                }
            })
            .collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
            s.push_str(&"-".repeat(total));
            s.push('\n');
        }
    }
    s
}

/// Renders the accuracy CSV and the aligned text report.
pub fn render(results: &[ExperimentResult]) -> (String, String) {
    let acc = table(results, accuracy_cell);
    let secs = table(results, seconds_cell);
    let mut text = String::from("Accuracy (%)\n\n");
    text.push_str(&to_text(&acc, "variant"));
    text.push_str("\nTraining time per fold (s)\n\n");
    text.push_str(&to_text(&secs, "variant"));
    text.push_str(
        "\nCells are mean ± std over folds; std is the population standard deviation.\n\
         Training time excludes tensorization.\n",
    );
    let composite: Vec<&ExperimentResult> = results.iter().filter(|r| !r.parts.is_empty()).collect();
    for r in composite {
        let names: Vec<&str> = r.parts.iter().map(|p| p.dataset.as_str()).collect();
        text.push_str(&format!(
            "{} averages {} fold by fold.\n",
            r.dataset,
            names.join(", ")
        ));
    }
    (to_csv(&acc), text)
}

/// Writes `report.csv` and `report.txt` into `dir`.
pub fn emit_report(results: &[ExperimentResult], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (csv, text) = render(results);
    for (name, body) in [("report.csv", csv), ("report.txt", text)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
