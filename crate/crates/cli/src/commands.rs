use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use satstereo_core::data::io::{load_dataset, write_dataset, DatasetMetadata};
use satstereo_core::data::synth::{generate_synthetic, sample_seed};
use satstereo_core::data::compute_stats;
use satstereo_core::evaluation::{
    cross_domain_matrix, emit_scatter, evaluate_dataset, MetricResult, NamedCheckpoint, TrainedResult,
};
use satstereo_core::training::{pretrain_load, train, Checkpoint, Manner};
use satstereo_core::verification::{run_gradient_suite, run_oracle_suite, OracleReport};
use satstereo_core::{Family, StereoModel};

use crate::config::{manner_name, Preset, RunConfig, SynthSetSpec};
use crate::error::{CmdResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "satstereo", version, about = "Signed-disparity stereo matching for satellite image pairs")]
pub struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config or spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Built-in settings used when no config or spec file is given.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stereo dataset with ground truth and occlusion.
    Synth(SynthArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Evaluate every checkpoint on every test set.
    Matrix(MatrixArgs),
    /// Plot supervised against unsupervised EPE from evaluation records.
    Scatter(ScatterArgs),
    /// Run the operation oracle and gradient suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset spec file (TOML).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model family when starting from a preset.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    /// Training manner when starting from a preset.
    #[arg(long, value_parser = parse_manner)]
    pub manner: Option<Manner>,
    /// Training dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Initialize from this checkpoint (file or run directory).
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file or run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Model id in the record; defaults to the run directory name.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// Checkpoint files or run directories, one matrix row each.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,
    /// Test dataset roots, one matrix column each.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub testsets: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    /// Directory of evaluation records, as written by `eval` or `matrix`.
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random instances per operation.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

fn parse_family(s: &str) -> Result<Family, String> {
    match s {
        "cascade" => Ok(Family::Cascade),
        "pyramid" => Ok(Family::Pyramid),
        "pam" => Ok(Family::Pam),
        _ => Err(format!("unknown family `{s}` (cascade, pyramid, pam)")),
    }
}

fn parse_manner(s: &str) -> Result<Manner, String> {
    match s {
        "supervised" => Ok(Manner::Supervised),
        "unsupervised" => Ok(Manner::Unsupervised),
        _ => Err(format!("unknown manner `{s}` (supervised, unsupervised)")),
    }
}

/// One evaluation with the setup of the model that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalRecord {
    pub family: Family,
    pub manner: Option<Manner>,
    pub result: MetricResult,
}

impl EvalRecord {
    fn trained(&self) -> Option<TrainedResult> {
        self.manner.map(|manner| TrainedResult { family: self.family, manner, result: self.result.clone() })
    }
}

pub fn run(cli: Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(&cli, a),
        Command::Train(a) => train_cmd(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Matrix(a) => matrix(&cli, a),
        Command::Scatter(a) => scatter(&cli, a),
        Command::Verify(a) => verify(&cli, a),
    }
}

fn require_out(cli: &Cli) -> CmdResult<&Path> {
    cli.out.as_deref().ok_or_else(|| Failure::usage("--out is required"))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::runtime(anyhow::anyhow!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    fs::write(path, text + "\n").map_err(io(path))
}

fn synth(cli: &Cli, a: &SynthArgs) -> CmdResult<()> {
    if cli.config.is_some() {
        return Err(Failure::usage("synth takes a --spec file, not --config"));
    }
    let out = require_out(cli)?;
    let mut spec = match &a.spec {
        Some(p) => SynthSetSpec::load(p)?,
        None => SynthSetSpec::preset(cli.preset.unwrap_or(Preset::Desk)),
    };
    if let Some(s) = cli.seed {
        spec.scene.seed = s;
    }
    if let Some(n) = a.count {
        spec.count = n;
    }
    spec.validate()?;
    let domain = spec.domain();
    let samples = (0..spec.count)
        .map(|i| {
            let mut scene = spec.scene.clone();
            scene.seed = sample_seed(spec.scene.seed, i);
            let mut s = generate_synthetic(&scene)?;
            s.id = format!("{:04}", i);
            s.domain = domain.clone();
            Ok(s)
        })
        .collect::<satstereo_core::Result<Vec<_>>>()
        .map_err(Failure::from_core)?;
    let stats = compute_stats(&spec.dataset_id, &samples).map_err(Failure::from_core)?;
    write_dataset(out, &DatasetMetadata::from_domain(&domain), &samples, Some(&stats)).map_err(Failure::from_core)?;
    fs::write(out.join("spec.toml"), toml::to_string_pretty(&spec).expect("spec serializes")).map_err(io(out))?;
    let check = load_dataset(out).map_err(Failure::from_core)?;
    println!("wrote {} samples of {} to {}", check.len(), spec.dataset_id, out.display());
    Ok(())
}

/// A checkpoint file, or the final checkpoint inside a run directory.
fn checkpoint_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("final.json")
    } else {
        path.to_path_buf()
    }
}

fn checkpoint_id(path: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned());
    let file = checkpoint_file(path);
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "final" {
        file.parent().and_then(name).unwrap_or(stem)
    } else {
        stem
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Appends `-2`, `-3`, ... to repeated names.
fn unique(names: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    names
        .into_iter()
        .map(|n| {
            let mut candidate = n.clone();
            let mut k = 2;
            while !seen.insert(candidate.clone()) {
                candidate = format!("{n}-{k}");
                k += 1;
            }
            candidate
        })
        .collect()
}

fn load_checkpoint(path: &Path) -> CmdResult<Checkpoint> {
    Checkpoint::load(&checkpoint_file(path)).map_err(Failure::from_core)
}

fn run_config(cli: &Cli, a: &TrainArgs) -> CmdResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if cli.preset.is_some() || a.family.is_some() || a.manner.is_some() {
                return Err(Failure::usage("--preset, --family and --manner build a config; they cannot modify --config"));
            }
            RunConfig::load(path)?
        }
        None => {
            let family = a.family.unwrap_or(Family::Cascade);
            let manner = a.manner.unwrap_or(Manner::Unsupervised);
            RunConfig::preset(cli.preset.unwrap_or(Preset::Desk), family, manner, a.pretrained.is_some())
        }
    };
    if let Some(d) = &a.data {
        cfg.data.train = d.clone();
    }
    if let Some(p) = &a.pretrained {
        cfg.data.pretrained = Some(checkpoint_file(p));
        cfg.train.use_pretrained = true;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(n) = a.steps_per_epoch {
        cfg.train.steps_per_epoch = Some(n);
    }
    if let Some(n) = a.batch_size {
        cfg.train.batch_size = n;
    }
    if cli.config.is_none() && a.data.is_none() {
        return Err(Failure::usage("--data is required without --config"));
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainSummary<'a> {
    family: Family,
    manner: Manner,
    epochs_run: usize,
    early_stop_active: bool,
    stopped_at: Option<usize>,
    restored_epoch: Option<usize>,
    pretrained_stats: Option<String>,
    train_ids: &'a [String],
    holdout_ids: &'a [String],
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> CmdResult<()> {
    let cfg = run_config(cli, a)?;
    let dataset = load_dataset(&cfg.data.train).map_err(Failure::from_core)?;
    let stats = dataset.require_stats().map_err(Failure::from_core)?;
    if dataset.is_empty() {
        return Err(Failure::usage(format!("{} holds no samples", cfg.data.train.display())));
    }
    if cfg.train.manner == Manner::Supervised && !dataset.has_ground_truth() {
        return Err(Failure::usage(format!(
            "supervised training needs ground-truth disparity and {} has none; train unsupervised instead",
            cfg.data.train.display()
        )));
    }
    let pretrained = match &cfg.data.pretrained {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let samples = dataset.load_all().map_err(Failure::from_core)?;
    let channels = samples[0].left.channels();
    if channels != cfg.model.in_channels {
        return Err(Failure::usage(format!("model.in_channels is {} but the dataset has {channels} channels", cfg.model.in_channels)));
    }

    let mut model = StereoModel::<f32>::new(cfg.model.clone(), cfg.train.seed).map_err(Failure::from_core)?;
    let pretrained_stats = match &pretrained {
        Some(c) => pretrain_load(&mut model, c).map_err(Failure::from_core)?,
        None => None,
    };
    let out = cfg.output.as_path();
    fs::create_dir_all(out).map_err(io(out))?;
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(io(out))?;
    let early = cfg.train.early_stop_active();
    log::info!(
        "training {} {} on {} samples of {}, consistency early stop {}",
        cfg.model.family,
        manner_name(cfg.train.manner),
        samples.len(),
        dataset.metadata().dataset_id,
        if early { "active" } else { "inactive" }
    );
    let report = train(&mut model, &samples, stats, &cfg.train, Some(out)).map_err(Failure::from_core)?;
    let summary = TrainSummary {
        family: cfg.model.family,
        manner: cfg.train.manner,
        epochs_run: report.records.len(),
        early_stop_active: early,
        stopped_at: report.stopped_at,
        restored_epoch: report.restored_epoch,
        pretrained_stats,
        train_ids: &report.train_ids,
        holdout_ids: &report.holdout_ids,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let last = report.records.last().expect("at least one epoch");
    println!(
        "trained {} epochs, final loss {:.4}{}; run directory {}",
        report.records.len(),
        last.loss,
        match (report.stopped_at, report.restored_epoch) {
            (Some(s), Some(r)) => format!(", early stop at epoch {s}, restored epoch {r}"),
            _ => String::new(),
        },
        out.display()
    );
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult<()> {
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&a.data).map_err(Failure::from_core)?;
    dataset.require_stats().map_err(Failure::from_core)?;
    if checkpoint.stats.is_none() {
        return Err(Failure::usage(format!("{} carries no training statistics", a.checkpoint.display())));
    }
    let id = a.id.clone().unwrap_or_else(|| checkpoint_id(&a.checkpoint));
    let model = checkpoint.restore::<f32>().map_err(Failure::from_core)?;
    let result = evaluate_dataset(&model, &dataset, &id, checkpoint.train_domain.clone()).map_err(Failure::from_core)?;
    println!("{}", serde_json::to_string_pretty(&result).map_err(Failure::runtime)?);
    if let Some(out) = &cli.out {
        fs::create_dir_all(out).map_err(io(out))?;
        let record = EvalRecord { family: checkpoint.model.family, manner: checkpoint.manner, result };
        write_json(&out.join(format!("{id}__{}.json", dataset.metadata().dataset_id)), &record)?;
    }
    Ok(())
}

fn matrix(cli: &Cli, a: &MatrixArgs) -> CmdResult<()> {
    let out = require_out(cli)?;
    let row_ids = unique(a.checkpoints.iter().map(|p| checkpoint_id(p)).collect());
    let rows: Vec<NamedCheckpoint> = a
        .checkpoints
        .iter()
        .zip(row_ids)
        .map(|(p, id)| NamedCheckpoint { id, checkpoint: Checkpoint::load(&checkpoint_file(p)).map_err(|e| e.to_string()) })
        .collect();
    let column_ids = unique(a.testsets.iter().map(|p| dataset_name(p)).collect());
    let columns: Vec<_> =
        a.testsets.iter().zip(column_ids).map(|(p, id)| (id, load_dataset(p).map_err(|e| e.to_string()))).collect();
    let m = cross_domain_matrix::<f32>(&rows, &columns);

    let results = out.join("results");
    fs::create_dir_all(&results).map_err(io(out))?;
    fs::write(out.join("matrix.txt"), m.render_text()).map_err(io(out))?;
    write_json(&out.join("matrix.json"), &m)?;
    for (r, row) in rows.iter().enumerate() {
        let Ok(c) = &row.checkpoint else { continue };
        for col in 0..m.columns.len() {
            if let Some(result) = &m.cell(r, col).result {
                let record = EvalRecord { family: c.model.family, manner: c.manner, result: result.clone() };
                write_json(&results.join(format!("{}__{}.json", row.id, m.columns[col])), &record)?;
            }
        }
    }
    print!("{}", m.render_text());
    if m.succeeded() == 0 {
        return Err(Failure::runtime(anyhow::anyhow!("every matrix cell failed")));
    }
    Ok(())
}

/// Evaluation records in `dir` and its `results/` subdirectory, by file name.
fn read_records(dir: &Path) -> CmdResult<Vec<EvalRecord>> {
    if !dir.is_dir() {
        return Err(Failure::usage(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    for d in [dir.to_path_buf(), dir.join("results")] {
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.map_err(io(&d))?.path();
            if p.extension().is_some_and(|x| x == "json") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut records = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(io(&f))?;
        match serde_json::from_str::<EvalRecord>(&text) {
            Ok(r) => records.push(r),
            Err(_) => log::debug!("{} is not an evaluation record", f.display()),
        }
    }
    Ok(records)
}

fn scatter(cli: &Cli, a: &ScatterArgs) -> CmdResult<()> {
    let records = read_records(&a.results)?;
    if records.is_empty() {
        return Err(Failure::usage(format!("no evaluation records in {}", a.results.display())));
    }
    let mut trained = Vec::new();
    for r in &records {
        match r.trained() {
            Some(t) => trained.push(t),
            None => log::warn!("{} has no training manner; skipped", r.result.model_id),
        }
    }
    let out = cli.out.as_deref().unwrap_or(&a.results);
    let report = emit_scatter(&trained, out).map_err(Failure::from_core)?;
    let below = report.points.iter().filter(|p| p.below_diagonal()).count();
    println!(
        "{} pairs from {} records, {below} below the diagonal; wrote {}",
        report.points.len(),
        records.len(),
        out.join("scatter.svg").display()
    );
    Ok(())
}

fn print_reports(title: &str, reports: &[OracleReport]) {
    println!("{title}");
    for r in reports {
        println!(
            "  {} {:<28} abs {:.3e} rel {:.3e} ({} instances)",
            if r.pass { "ok  " } else { "FAIL" },
            r.name,
            r.max_abs_error,
            r.max_rel_error,
            r.instances
        );
    }
}

fn verify(cli: &Cli, a: &VerifyArgs) -> CmdResult<()> {
    if a.instances == 0 {
        return Err(Failure::usage("--instances must be positive"));
    }
    let seed = cli.seed.unwrap_or(0);
    let oracles = run_oracle_suite(seed, a.instances);
    let gradients = run_gradient_suite(seed);
    print_reports("operation oracles", &oracles);
    print_reports("gradients", &gradients);
    if let Some(out) = &cli.out {
        fs::create_dir_all(out).map_err(io(out))?;
        write_json(&out.join("oracles.json"), &oracles)?;
        write_json(&out.join("gradients.json"), &gradients)?;
    }
    let failed: Vec<&str> = oracles.iter().chain(&gradients).filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(anyhow::anyhow!("failed: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_names_get_suffixes() {
        assert_eq!(unique(vec!["a".into(), "b".into(), "a".into(), "a".into()]), vec!["a", "b", "a-2", "a-3"]);
    }

    #[test]
    fn run_directories_name_their_checkpoint() {
        assert_eq!(checkpoint_id(Path::new("runs/sup/final.json")), "sup");
        assert_eq!(checkpoint_id(Path::new("ckpt/best.json")), "best");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_code_of_bad_manner_flag_is_usage() {
        let e = Cli::try_parse_from(["satstereo", "train", "--manner", "half"]).unwrap_err();
        assert!(e.use_stderr());
    }
}
