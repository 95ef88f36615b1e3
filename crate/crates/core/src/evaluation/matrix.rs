use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use satstereo_tensor::Scalar;

use crate::data::io::Dataset;
use crate::data::normalize;
use crate::error::{Result, StereoError};
use crate::training::Checkpoint;

use super::metrics::{evaluate, MetricResult};

/// Evaluates a model on a stored test set normalized with that set's own
/// persisted statistics.
pub fn evaluate_dataset<T: Scalar>(
    model: &crate::model::StereoModel<T>,
    dataset: &Dataset,
    model_id: &str,
    train_domain: Option<crate::data::DomainDescriptor>,
) -> Result<MetricResult> {
    let stats = dataset.require_stats()?;
    if !dataset.has_ground_truth() {
        return Err(StereoError::Config(format!("test set {} has no ground-truth disparity", dataset.root().display())));
    }
    let samples = dataset.load_all()?.iter().map(|s| normalize(s, stats, false)).collect::<Result<Vec<_>>>()?;
    evaluate(model, &samples, model_id, train_domain)
}

/// An input that may have failed to load; the message fills its cells.
pub type Loaded<T> = std::result::Result<T, String>;

/// A named checkpoint to place on a matrix row.
pub struct NamedCheckpoint {
    pub id: String,
    pub checkpoint: Loaded<Checkpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatrixCell {
    pub model_id: String,
    pub testset: String,
    pub result: Option<MetricResult>,
    pub error: Option<String>,
    /// The test set shares the training city and sensor, so the cell does not
    /// measure generalization.
    pub same_domain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CrossDomainMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major, one per (row, column).
    pub cells: Vec<MatrixCell>,
}

impl CrossDomainMatrix {
    pub fn cell(&self, row: usize, column: usize) -> &MatrixCell {
        &self.cells[row * self.columns.len() + column]
    }

    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_some()).count()
    }

    /// Plain-text table, `EPE / D1` per cell; `*` marks same-domain cells.
    pub fn render_text(&self) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut lines = vec![header];
        for (r, row) in self.rows.iter().enumerate() {
            let mut line = vec![row.clone()];
            for c in 0..self.columns.len() {
                let cell = self.cell(r, c);
                line.push(match &cell.result {
                    Some(m) => format!("{:.2} / {:.2}{}", m.epe, m.d1, if cell.same_domain { " *" } else { "" }),
                    None => "error".to_string(),
                });
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, line) in lines.iter().enumerate() {
            let cols: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", cols.join(" | ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
            }
        }
        out.push_str("\nEPE (px) / D1 (%). * same domain as the train set, not a generalization result.\n");
        for cell in self.cells.iter().filter(|c| c.error.is_some()) {
            let _ = writeln!(out, "error [{} on {}]: {}", cell.model_id, cell.testset, cell.error.as_deref().unwrap_or(""));
        }
        out
    }
}

/// Every checkpoint against every test set. Failures are recorded per cell.
pub fn cross_domain_matrix<T: Scalar>(checkpoints: &[NamedCheckpoint], testsets: &[(String, Loaded<Dataset>)]) -> CrossDomainMatrix {
    let mut cells = Vec::new();
    for named in checkpoints {
        let model: Loaded<_> = named.checkpoint.clone().and_then(|c| {
            if c.stats.is_none() {
                Err(StereoError::MissingStats(named.id.clone()).to_string())
            } else {
                c.restore::<T>().map_err(|e| e.to_string())
            }
        });
        let train_domain = named.checkpoint.as_ref().ok().and_then(|c| c.train_domain.clone());
        for (name, dataset) in testsets {
            let same_domain = match (&train_domain, dataset) {
                (Some(t), Ok(d)) => t.same_domain(&d.domain()),
                _ => false,
            };
            let outcome = model.as_ref().map_err(String::clone).and_then(|m| {
                let d = dataset.as_ref().map_err(String::clone)?;
                evaluate_dataset(m, d, &named.id, train_domain.clone()).map_err(|e| e.to_string())
            });
            if let Err(e) = &outcome {
                log::warn!("{} on {name}: {e}", named.id);
            }
            cells.push(MatrixCell {
                model_id: named.id.clone(),
                testset: name.clone(),
                same_domain,
                error: outcome.as_ref().err().cloned(),
                result: outcome.ok(),
            });
        }
    }
    CrossDomainMatrix {
        rows: checkpoints.iter().map(|c| c.id.clone()).collect(),
        columns: testsets.iter().map(|(n, _)| n.clone()).collect(),
        cells,
    }
}
