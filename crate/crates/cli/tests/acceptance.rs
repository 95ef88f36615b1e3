//! End-to-end acceptance: one PASS/FAIL line per criterion, then a single
//! assertion over all of them so every line is printed even after a failure.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use rand::RngExt;
use satstereo_cli::{Preset, RunConfig};
use satstereo_core::data::synth::{generate_synthetic, sample_seed};
use satstereo_core::data::SynthSpec;
use satstereo_core::evaluation::{d1, epe, read_scatter_csv, CrossDomainMatrix};
use satstereo_core::losses::occlusion_from_fb;
use satstereo_core::photometric::warp_horizontal;
use satstereo_core::training::{ConsistencySeries, EpochRecord, LrSchedule, Manner};
use satstereo_core::verification::{run_desk_experiment, run_gradient_suite, run_oracle_suite, DeskConfig, OracleReport, OPERATIONS};
use satstereo_core::{DisparityField, Family, Mask};
use satstereo_tensor::{seeded_rng, Scalar, Tensor, Var};

use common::*;

// Uncaptured stdout.
macro_rules! report {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

struct Outcome {
    id: usize,
    title: &'static str,
    failures: Vec<String>,
    elapsed: Duration,
}

struct Criterion {
    id: usize,
    title: &'static str,
    failures: Vec<String>,
    started: Instant,
}

impl Criterion {
    fn new(id: usize, title: &'static str) -> Self {
        Criterion { id, title, failures: Vec::new(), started: Instant::now() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn within(&mut self, limit: Duration) {
        let t = self.started.elapsed();
        self.check(t <= limit, format!("took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs()));
    }

    fn done(self) -> Outcome {
        let o = Outcome { id: self.id, title: self.title, failures: self.failures, elapsed: self.started.elapsed() };
        let status = if o.failures.is_empty() { "PASS" } else { "FAIL" };
        report!("criterion {} {status}: {} ({:.1} s)", o.id, o.title, o.elapsed.as_secs_f64());
        for f in &o.failures {
            report!("    {f}");
        }
        o
    }
}

fn report_failures(c: &mut Criterion, reports: &[OracleReport]) {
    for r in reports.iter().filter(|r| !r.pass) {
        c.check(false, format!("{}: abs {:.3e} rel {:.3e}", r.name, r.max_abs_error, r.max_rel_error));
    }
}

fn oracle_suite() -> Outcome {
    let mut c = Criterion::new(1, "operation oracles, >= 100 instances each");
    let reports = run_oracle_suite(2024, 100);
    c.check(reports.len() == OPERATIONS.len(), format!("{} reports for {} operations", reports.len(), OPERATIONS.len()));
    c.check(reports.iter().all(|r| r.instances >= 100), "fewer than 100 instances");
    report_failures(&mut c, &reports);
    c.within(Duration::from_secs(300));
    c.done()
}

fn gradient_suite() -> Outcome {
    let mut c = Criterion::new(2, "finite-difference gradients at 1e-3 on 8x8 f64");
    let reports = run_gradient_suite(2024);
    c.check(!reports.is_empty(), "no gradient cases");
    report_failures(&mut c, &reports);
    c.within(Duration::from_secs(300));
    c.done()
}

fn zero_warp_is_identity<T: Scalar>() -> bool {
    let mut rng = seeded_rng(5);
    let src = Tensor::<T>::from_fn(vec![2, 3, 9, 13], |_| T::lit(rng.random_range(-3.0..3.0)));
    let warped = warp_horizontal(&Var::constant(src.clone()), &Var::constant(Tensor::zeros(vec![2, 1, 9, 13]))).unwrap();
    warped.image.value().data() == src.data() && warped.out_of_bounds.data().iter().all(|&v| v == T::zero())
}

fn warp_and_occlusion() -> Outcome {
    let mut c = Criterion::new(3, "zero warp is bit-exact, forward-backward occlusion IoU >= 0.9");
    c.check(zero_warp_is_identity::<f32>(), "f32 warp at d = 0 changed the source");
    c.check(zero_warp_is_identity::<f64>(), "f64 warp at d = 0 changed the source");
    for i in 0..20 {
        let spec = SynthSpec { occlusion_fraction: 0.1, ..SynthSpec::clean(64, 64, -8.0, 8.0, sample_seed(31, i)) };
        let s = generate_synthetic(&spec).unwrap();
        let gl = s.gt_disparity.as_ref().unwrap().to_batch::<f64>(f32::NAN);
        let gr = s.gt_right_disparity.as_ref().unwrap().to_batch::<f64>(f32::NAN);
        let detected = Mask::from_tensor(&occlusion_from_fb(&gl, &gr, 1.0).unwrap()).and(&s.valid_mask);
        let truth = s.occlusion.as_ref().unwrap();
        let iou = detected.iou(truth);
        c.check(truth.data().iter().any(|&b| b), format!("scene {i} has no occlusion"));
        c.check(iou >= 0.9, format!("scene {i}: IoU {iou:.3}"));
    }
    c.done()
}

fn metrics() -> Outcome {
    let mut c = Criterion::new(4, "D1 constructed cases, EPE equals a loop reference");
    let one = |v: f32| DisparityField::filled(1, 1, v);
    let all = Mask::filled(1, 1, true);
    c.check(d1(&one(104.0), &one(100.0), &all).unwrap() == 0.0, "gt 100, pred 104 is not 0 %");
    c.check(d1(&one(14.0), &one(10.0), &all).unwrap() == 100.0, "gt 10, pred 14 is not 100 %");
    c.check(d1(&one(-14.0), &one(-10.0), &all).unwrap() == 100.0, "gt -10, pred -14 is not 100 %");
    let mut rng = seeded_rng(77);
    for case in 0..100 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let gt: Vec<f32> = (0..h * w).map(|_| if rng.random_bool(0.1) { f32::NAN } else { rng.random_range(-30.0..30.0) }).collect();
        let pred: Vec<f32> = (0..h * w).map(|_| rng.random_range(-30.0..30.0)).collect();
        let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.8)).collect();
        let (gt, pred, mask) =
            (DisparityField::new(h, w, gt).unwrap(), DisparityField::new(h, w, pred).unwrap(), Mask::new(h, w, mask).unwrap());
        let (mut sum, mut n, mut outliers) = (0.0f64, 0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let g = gt.at(y, x) as f64;
                if mask.at(y, x) && !g.is_nan() {
                    let e = (pred.at(y, x) as f64 - g).abs();
                    sum += e;
                    n += 1;
                    outliers += usize::from(e > 3.0 && e > 0.05 * g.abs());
                }
            }
        }
        if n == 0 {
            c.check(epe(&pred, &gt, &mask).is_err(), format!("case {case}: empty support did not error"));
            continue;
        }
        let want_epe = sum / n as f64;
        let got = epe(&pred, &gt, &mask).unwrap();
        c.check((got - want_epe).abs() <= 1e-6 * want_epe.max(1.0), format!("case {case}: EPE {got} vs {want_epe}"));
        let want_d1 = 100.0 * outliers as f64 / n as f64;
        let got = d1(&pred, &gt, &mask).unwrap();
        c.check((got - want_d1).abs() <= 1e-9, format!("case {case}: D1 {got} vs {want_d1}"));
    }
    c.done()
}

fn desk_criteria() -> Vec<Outcome> {
    let cfg = DeskConfig::preset();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let report = run_desk_experiment(&cfg, Some(dir.path()));
    let mut five = Criterion::new(5, "unsupervised cascade on 64x64 scenes in [-8, 8]: held-out EPE < 1");
    five.started = started;
    let mut six = Criterion::new(6, "CE tracks EPE (Spearman >= 0.5), violations stop early and restore the minimum");
    let mut seven = Criterion::new(7, "mirrored scenes degrade EPE by < 0.1 px");
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            for c in [&mut five, &mut six, &mut seven] {
                c.check(false, format!("desk experiment failed: {e}"));
            }
            return vec![five.done(), six.done(), seven.done()];
        }
    };
    five.check(cfg.size == 64 && cfg.disparity_min == -8.0 && cfg.disparity_max == 8.0, "desk scenes are not 64x64 in [-8, 8]");
    five.check(cfg.train.manner == Manner::Unsupervised, "desk run is not unsupervised");
    five.check(report.test_epe < 1.0, format!("held-out EPE {:.3}", report.test_epe));
    five.check(report.optimizer_steps <= 2000, format!("{} optimizer steps", report.optimizer_steps));
    five.check(report.train_seconds <= 1800.0, format!("training took {:.0} s", report.train_seconds));
    report!(
        "    held-out EPE {:.3} px, D1 {:.2} %, {} steps, {:.0} s",
        report.test_epe, report.test_d1, report.optimizer_steps, report.train_seconds
    );

    let epochs_with_ce = report.records.iter().filter(|r| r.ce.is_some() && r.epe.is_some()).count();
    six.check(epochs_with_ce >= 10, format!("only {epochs_with_ce} epochs carry both CE and EPE"));
    six.check(report.ce_epe_spearman >= 0.5, format!("Spearman {:.3}", report.ce_epe_spearman));
    report!("    CE/EPE Spearman {:.3} over {epochs_with_ce} epochs", report.ce_epe_spearman);
    match &report.violation {
        None => six.check(false, "violation stage did not run"),
        Some(v) => {
            let entries = v.series.entries();
            six.check(v.stopped_at.is_some(), "no early stop under violations");
            six.check(v.records.len() < v.max_epochs, format!("ran {} of {} epochs", v.records.len(), v.max_epochs));
            if let (Some(stop), Some(restored)) = (v.stopped_at, v.restored_epoch) {
                let last = entries.last().expect("series nonempty at a stop");
                six.check(last.epoch == stop, "series does not end at the stop epoch");
                six.check(entries.len() >= 2 && last.ce > entries[entries.len() - 2].ce, "stop epoch did not raise CE");
                let min = entries.iter().fold(&entries[0], |b, e| if e.ce < b.ce { e } else { b });
                six.check(restored == min.epoch, format!("restored epoch {restored}, series minimum at {}", min.epoch));
                report!("    violations: stopped at epoch {stop} of {}, restored epoch {restored}", v.max_epochs);
            }
            six.check(v.restored_matches_minimum, "restored parameters differ from the minimum-CE checkpoint");
            let logged: Option<ConsistencySeries> = fs::read_to_string(dir.path().join("violation/consistency.json"))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            six.check(logged.as_ref() == Some(&v.series), "series log on disk differs from the reported series");
            let metrics = fs::read_to_string(dir.path().join("violation/metrics.jsonl")).unwrap_or_default();
            let lines: Vec<EpochRecord> = metrics.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
            six.check(lines.len() == entries.len(), format!("{} metric lines for {} series entries", lines.len(), entries.len()));
            for (r, e) in lines.iter().zip(entries) {
                six.check(r.ce == Some(e.ce) && r.epoch == e.epoch, format!("epoch {} log and series disagree", r.epoch));
                six.check(r.early_stop_active, format!("epoch {} ran without the early stop", r.epoch));
            }
        }
    }

    let degradation = report.mirrored_epe - report.test_epe;
    seven.check(degradation < 0.1, format!("mirrored EPE {:.3} vs {:.3}", report.mirrored_epe, report.test_epe));
    report!("    mirrored EPE {:.3} px vs {:.3} px", report.mirrored_epe, report.test_epe);
    vec![five.done(), six.done(), seven.done()]
}

fn golden_config() -> Outcome {
    let mut c = Criterion::new(8, "`paper` preset snapshot");
    for family in [Family::Cascade, Family::Pyramid, Family::Pam] {
        let cfg = RunConfig::preset(Preset::Paper, family, Manner::Unsupervised, false);
        let w = &cfg.train.loss_weights;
        c.check(w.alpha == 0.85, format!("{family}: alpha {}", w.alpha));
        c.check(w.fb_thresholds == [5.0, 2.0, 1.0], format!("{family}: thresholds {:?}", w.fb_thresholds));
        c.check(w.census_patch == 7, format!("{family}: census patch {}", w.census_patch));
        c.check(w.pam_scale_weights == [0.2, 0.3, 0.5], format!("{family}: attention weights {:?}", w.pam_scale_weights));
        c.check(cfg.train.crop_size == 512, format!("{family}: crop {}", cfg.train.crop_size));
    }
    let weights = |f| RunConfig::preset(Preset::Paper, f, Manner::Unsupervised, false).train.loss_weights.scale_weights;
    c.check(weights(Family::Cascade) == [0.5, 1.0, 2.0], "cascade scale weights");
    c.check(weights(Family::Pyramid) == [0.5, 0.7, 1.0, 0.6], "pyramid scale weights");
    let sched = |f, m, p| RunConfig::preset(Preset::Paper, f, m, p).train.schedule;
    c.check(sched(Family::Cascade, Manner::Supervised, false) == LrSchedule::Constant { rate: 1e-4 }, "cascade supervised schedule");
    c.check(sched(Family::Cascade, Manner::Unsupervised, true) == LrSchedule::Constant { rate: 1e-6 }, "cascade fine-tune schedule");
    c.check(
        sched(Family::Cascade, Manner::Unsupervised, false) == LrSchedule::StepDecay { initial: 1e-4, factor: 0.5, every: 5, floor: 1e-7 },
        "cascade unsupervised schedule",
    );
    c.check(
        sched(Family::Pyramid, Manner::Supervised, false) == LrSchedule::StepDecay { initial: 1e-3, factor: 0.5, every: 10, floor: 0.0 },
        "pyramid schedule",
    );
    c.check(
        sched(Family::Pam, Manner::Unsupervised, false) == LrSchedule::StepDecay { initial: 1e-3, factor: 0.1, every: 10, floor: 1e-7 },
        "attention schedule",
    );
    let golden = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/paper-cascade-unsupervised.toml");
    let snapshot = fs::read_to_string(&golden).unwrap_or_default();
    c.check(
        snapshot == RunConfig::preset(Preset::Paper, Family::Cascade, Manner::Unsupervised, false).to_toml(),
        "serialized cascade config differs from the committed snapshot",
    );
    c.done()
}

fn cli_smoke() -> Outcome {
    let mut c = Criterion::new(9, "CLI synth, train both manners, eval, matrix, scatter on 16 samples");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let step = |c: &mut Criterion, args: &[&str]| {
        let out = satstereo(args);
        c.check(out.status.success(), format!("{} exited {:?}: {}", args[0], out.status.code(), text(&out.stderr).lines().last().unwrap_or("")));
        out.status.success()
    };
    let (train, test, sup, unsup, report) = (d.join("train"), d.join("test"), d.join("sup"), d.join("unsup"), d.join("report"));
    let ok = step(&mut c, &["synth", "--preset", "desk", "--count", "16", "--seed", "1", "--out", s(&train)])
        && step(&mut c, &["synth", "--preset", "desk", "--count", "16", "--seed", "2", "--out", s(&test)])
        && step(&mut c, &["train", "--preset", "desk", "--manner", "supervised", "--data", s(&train), "--epochs", "4", "--out", s(&sup)])
        && step(&mut c, &["train", "--preset", "desk", "--manner", "unsupervised", "--data", s(&train), "--epochs", "4", "--out", s(&unsup)])
        && step(&mut c, &["eval", "--checkpoint", s(&sup), "--data", s(&test), "--out", s(&d.join("evals"))])
        && step(&mut c, &["matrix", "--checkpoints", &format!("{},{}", s(&sup), s(&unsup)), "--testsets", s(&test), "--out", s(&report)])
        && step(&mut c, &["scatter", "--results", s(&report)]);
    if ok {
        let matrix: Option<CrossDomainMatrix> =
            fs::read_to_string(report.join("matrix.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
        match matrix {
            Some(m) => c.check(m.cells.len() == 2 && m.succeeded() == 2, "matrix table is not fully populated"),
            None => c.check(false, "matrix.json unreadable"),
        }
        let table = fs::read_to_string(report.join("matrix.txt")).unwrap_or_default();
        c.check(table.contains("sup ") && table.contains("unsup ") && !table.contains("error"), "matrix.txt lacks rows");
        let svg = fs::read_to_string(report.join("scatter.svg")).unwrap_or_default();
        c.check(svg.contains("id=\"diagonal\""), "scatter plot has no diagonal");
        c.check(svg.matches("class=\"point\"").count() == 1, "scatter plot does not hold one point");
        let points = read_scatter_csv(&report.join("scatter.csv")).map(|p| p.len()).unwrap_or(0);
        c.check(points == 1, format!("scatter data holds {points} rows"));
    }
    c.within(Duration::from_secs(600));
    c.done()
}

#[test]
fn acceptance() {
    let mut outcomes = vec![oracle_suite(), gradient_suite(), warp_and_occlusion(), metrics()];
    outcomes.extend(desk_criteria());
    outcomes.push(golden_config());
    outcomes.push(cli_smoke());
    outcomes.sort_by_key(|o| o.id);
    report!("\nsummary");
    for o in &outcomes {
        report!("criterion {} {}: {}", o.id, if o.failures.is_empty() { "PASS" } else { "FAIL" }, o.title);
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.failures.is_empty()).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
