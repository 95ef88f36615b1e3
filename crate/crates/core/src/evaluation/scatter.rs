use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Family;
use crate::training::Manner;

use super::metrics::MetricResult;

/// A metric with the training setup that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainedResult {
    pub family: Family,
    pub manner: Manner,
    pub result: MetricResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScatterPoint {
    pub family: Family,
    pub trainset: String,
    pub testset: String,
    pub supervised_epe: f64,
    pub unsupervised_epe: f64,
    pub same_domain: bool,
}

impl ScatterPoint {
    /// Below the diagonal the unsupervised model is the more accurate one.
    pub fn below_diagonal(&self) -> bool {
        self.unsupervised_epe < self.supervised_epe
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScatterReport {
    pub points: Vec<ScatterPoint>,
    pub warnings: Vec<String>,
}

type PairKey = (Family, String, String);

/// Pairs supervised and unsupervised results by family, train set and test set.
pub fn pair_results(results: &[TrainedResult]) -> ScatterReport {
    let mut slots: BTreeMap<PairKey, [Option<&TrainedResult>; 2]> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in results {
        let train = r.result.train_domain.as_ref().map_or_else(|| "unknown".to_string(), |d| d.dataset_id.clone());
        let key = (r.family, train, r.result.domain.dataset_id.clone());
        let slot = &mut slots.entry(key.clone()).or_default()[usize::from(r.manner == Manner::Unsupervised)];
        if slot.is_some() {
            warnings.push(format!("duplicate {:?} result for {} trained on {} tested on {}; keeping the first", r.manner, key.0, key.1, key.2));
        } else {
            *slot = Some(r);
        }
    }
    let mut points = Vec::new();
    for ((family, trainset, testset), pair) in slots {
        match pair {
            [Some(s), Some(u)] => points.push(ScatterPoint {
                family,
                same_domain: s.result.same_domain(),
                trainset,
                testset,
                supervised_epe: s.result.epe,
                unsupervised_epe: u.result.epe,
            }),
            _ => warnings.push(format!("unpaired result for {family} trained on {trainset} tested on {testset}; skipped")),
        }
    }
    ScatterReport { points, warnings }
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// SVG scatter of supervised (x) against unsupervised (y) EPE with the
/// diagonal divider; same-domain points are drawn hollow in red.
pub fn render_svg(points: &[ScatterPoint]) -> String {
    let max = points.iter().flat_map(|p| [p.supervised_epe, p.unsupervised_epe]).fold(1.0f64, f64::max) * 1.1;
    let plot = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + v / max * plot;
    let py = |v: f64| SIZE - MARGIN - v / max * plot;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>"#, px(0.0), py(0.0), px(max));
    let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, px(0.0), py(0.0), py(max));
    let _ = writeln!(
        s,
        r#"<line id="diagonal" x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="6 4"/>"#,
        px(0.0),
        py(0.0),
        px(max),
        py(max)
    );
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{v:.2}</text>"#, px(v), py(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.2}</text>"#, px(0.0) - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">supervised EPE (px)</text>"#, SIZE / 2.0, SIZE - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {0})">unsupervised EPE (px)</text>"#,
        SIZE / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="gray">unsupervised better</text>"#, px(max * 0.55), py(max * 0.1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="gray">supervised better</text>"#, px(max * 0.05), py(max * 0.9));
    for p in points {
        let (fill, stroke) = if p.same_domain { ("none", "crimson") } else { ("steelblue", "steelblue") };
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="5" fill="{fill}" stroke="{stroke}" stroke-width="2"><title>{} {} on {}</title></circle>"#,
            px(p.supervised_epe),
            py(p.unsupervised_epe),
            p.family,
            p.trainset,
            p.testset
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `scatter.svg` and `scatter.csv` into `out_dir`.
pub fn emit_scatter(results: &[TrainedResult], out_dir: &Path) -> Result<ScatterReport> {
    let report = pair_results(results);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("scatter.svg"), render_svg(&report.points))?;
    let mut csv = csv::Writer::from_path(out_dir.join("scatter.csv")).map_err(std::io::Error::other)?;
    for p in &report.points {
        csv.serialize(p).map_err(std::io::Error::other)?;
    }
    if report.points.is_empty() {
        csv.write_record(["family", "trainset", "testset", "supervisedEpe", "unsupervisedEpe", "sameDomain"]).map_err(std::io::Error::other)?;
    }
    csv.flush()?;
    Ok(report)
}

/// Points read back from a data file written by [`emit_scatter`].
pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(std::io::Error::other)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ScatterPoint>, _>>().map_err(std::io::Error::other)?)
}
