//! `pulseflow` subcommands: gen, train, score, eval, inspect.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, ScoreSplit};
use crate::error::{Error, Result};
use crate::eval::{self, diagnostic_rows, point_rows, score_range, PointRow};
use crate::model::Detector;
use crate::series::{load_csv, MultivariateSeries};
use crate::spectral::{discover_global_period, periodicity_strength, top_k_periods};
use crate::synth;
use crate::trainer::{train_on_series, write_history};

pub const DATA_FILE: &str = "data.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const INSPECT_FILE: &str = "inspect.json";

#[derive(Debug, Parser)]
#[command(name = "pulseflow", version, about = "Periodicity-aware flow anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset.
    Gen(Common),
    /// Train a detector and write its checkpoint and history.
    Train(Common),
    /// Score a dataset with a trained checkpoint.
    Score(Common),
    /// Compute AUROC and score histograms from a score file.
    Eval(Common),
    /// Print the global period, top local periods and periodicity strength.
    Inspect(Common),
}

#[derive(Debug, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score file for `eval`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::resolve(self.config.as_deref(), &self.set)?;
        if let Some(s) = self.seed {
            c.train.seed = s;
            c.synth.seed = s;
        }
        for (slot, flag) in [
            (&mut c.run.out, &self.out),
            (&mut c.run.data, &self.data),
            (&mut c.run.checkpoint, &self.checkpoint),
            (&mut c.run.scores, &self.scores),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        c.train.validate()?;
        c.synth.validate()?;
        Ok(c)
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::Config {
        key: key.into(),
        message: format!("required; pass --{key} or set it in the config"),
    })
}

fn out_dir(c: &RunConfig) -> Result<&Path> {
    let dir = required(&c.run.out, "out")?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn load_data(c: &RunConfig) -> Result<MultivariateSeries> {
    load_csv(required(&c.run.data, "data")?, Some(&c.run.label_column))
}

pub fn cmd_gen(c: &RunConfig, stdout: &mut dyn Write) -> Result<PathBuf> {
    let dir = out_dir(c)?;
    let series = synth::generate(&c.synth)?;
    let path = dir.join(DATA_FILE);
    series.write_csv(&path)?;
    c.write_resolved(dir)?;
    let anomalies = series.labels().map_or(0, |l| l.iter().filter(|&&v| v == 1).count());
    writeln!(
        stdout,
        "wrote {} ({} points, {} dims, {} anomalous)",
        path.display(),
        series.len(),
        series.dims(),
        anomalies
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(path)
}

pub fn cmd_train(c: &RunConfig, stdout: &mut dyn Write) -> Result<PathBuf> {
    let series = load_data(c)?;
    let dir = out_dir(c)?;
    c.write_resolved(dir)?;
    let ck = dir.join(CHECKPOINT_FILE);
    let run = train_on_series(&series, &c.train, Some(&ck))?;
    write_history(dir.join(HISTORY_FILE), &run.outcome.history)?;
    run.outcome.detector.save(&ck)?;
    writeln!(
        stdout,
        "trained {} epochs; best epoch {} with validation NLL {:.6}; global period {}",
        run.outcome.history.len() - 1,
        run.outcome.best_epoch,
        run.outcome.best_val_nll,
        run.outcome.detector.global_period
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(ck)
}

pub fn cmd_score(c: &RunConfig, stdout: &mut dyn Write) -> Result<PathBuf> {
    let det = Detector::load(required(&c.run.checkpoint, "checkpoint")?)?;
    let series = load_data(c)?;
    if series.dims() != det.dims {
        return Err(Error::Shape {
            op: "score",
            left: vec![series.len(), series.dims()],
            right: vec![series.len(), det.dims],
        });
    }
    let dir = out_dir(c)?;
    c.write_resolved(dir)?;
    let standardized = det.standardization.apply(&series)?;
    let range = match c.run.score_split {
        ScoreSplit::All => 0..series.len(),
        ScoreSplit::Test => det.config.split()?.ranges(series.len()).test,
    };
    let scored = score_range(
        &det,
        &standardized,
        range.clone(),
        c.run.score_stride,
        c.run.aggregation,
    )?;
    let points = point_rows(&scored, &series);
    let path = dir.join(eval::SCORES_FILE);
    eval::write_points(&path, &points)?;
    eval::write_diagnostics(
        dir.join(eval::DIAGNOSTICS_FILE),
        &diagnostic_rows(&scored.windows, range.start),
    )?;
    writeln!(
        stdout,
        "scored {} points in [{}, {}) from {} windows",
        points.len(),
        range.start,
        range.end,
        scored.windows.len()
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(path)
}

pub fn cmd_eval(c: &RunConfig, stdout: &mut dyn Write) -> Result<PathBuf> {
    let scores_path = match (&c.run.scores, &c.run.out) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join(eval::SCORES_FILE),
        (None, None) => {
            return Err(Error::Config {
                key: "scores".into(),
                message: "required; pass --scores or set it in the config".into(),
            })
        }
    };
    let mut points = eval::read_points(&scores_path)?;
    if c.run.data.is_some() {
        let series = load_data(c)?;
        let labels = series
            .labels()
            .ok_or_else(|| Error::Schema("data file has no label column".into()))?;
        relabel(&mut points, labels)?;
    }
    let dir = out_dir(c)?;
    c.write_resolved(dir)?;
    let mut meta = serde_json::Map::new();
    meta.insert("scores".into(), scores_path.display().to_string().into());
    meta.insert("seed".into(), c.train.seed.into());
    meta.insert("aggregation".into(), c.run.aggregation.to_string().into());
    let summary = eval::emit_evaluation(dir, &points, meta)?;
    match summary.auroc {
        Some(a) => writeln!(stdout, "auroc = {a:.6}"),
        None => writeln!(stdout, "auroc = n/a (labels missing or single-class)"),
    }
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(dir.join(eval::SUMMARY_FILE))
}

fn relabel(points: &mut [PointRow], labels: &[u8]) -> Result<()> {
    for p in points {
        let l = labels
            .get(p.index)
            .ok_or_else(|| Error::Validation(format!("score index {} is outside the data file", p.index)))?;
        p.label = Some(*l);
    }
    Ok(())
}

pub fn cmd_inspect(c: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let series = load_data(c)?;
    let gp = discover_global_period(&series)?;
    let k = c.train.k.min((series.len() / 2).saturating_sub(1)).max(1);
    let top = top_k_periods(series.values(), series.dims(), k)?;
    let strengths: Vec<f64> = (0..series.dims())
        .map(|d| periodicity_strength(&series.channel(d), gp.period))
        .collect::<Result<_>>()?;
    let io = |e| Error::io("<stdout>", e);
    writeln!(stdout, "length = {}", series.len()).map_err(io)?;
    writeln!(stdout, "dims = {}", series.dims()).map_err(io)?;
    writeln!(stdout, "p_g = {}", gp.period).map_err(io)?;
    writeln!(stdout, "top_k = {:?}", top.periods).map_err(io)?;
    for (name, f) in series.dim_names().iter().zip(&strengths) {
        writeln!(stdout, "F_S[{name}] = {f:.6}").map_err(io)?;
    }
    if let Some(dir) = &c.run.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        c.write_resolved(dir)?;
        let report = serde_json::json!({
            "length": series.len(),
            "dims": series.dims(),
            "global_period": gp.period,
            "global_frequency": gp.frequency,
            "top_periods": top.periods,
            "top_weights": top.weights,
            "periodicity_strength": series.dim_names().iter().cloned().zip(strengths.iter().map(|&f| serde_json::Value::from(f))).collect::<serde_json::Map<_, _>>(),
        });
        let path = dir.join(INSPECT_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a.resolve()?, stdout).map(drop),
        Command::Train(a) => cmd_train(&a.resolve()?, stdout).map(drop),
        Command::Score(a) => cmd_score(&a.resolve()?, stdout).map(drop),
        Command::Eval(a) => cmd_eval(&a.resolve()?, stdout).map(drop),
        Command::Inspect(a) => cmd_inspect(&a.resolve()?, stdout),
    }
}

/// Parse `args` and run; returns the process exit code. Failures print a
/// single `error: <kind>: <message>` line to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error: usage: {first}");
            return 2;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error: {}: {}", e.kind(), msg);
            1
        }
    }
}
