//! One function per verb. Each reads its inputs, writes its outputs into
//! the output directory and returns the paths written.

use std::path::{Path, PathBuf};

use hops_core::pipeline::{run, Mode, PipelineConfig, Sequence};
use hops_core::sim::{error_series, eval_errors, generate};

use crate::config::Config;
use crate::files::{self, EvalReport, RunReport, SolutionFile, TruthFile};
use crate::plots;
use crate::CliError;

pub const SEQUENCE_FILE: &str = "sequence.json";
pub const SOLUTION_FILE: &str = "solution.json";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_FILE: &str = "eval.json";

fn prepare(out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))
}

/// `a/b/name.json` -> `a/b/name.truth.json`
pub fn truth_path(sequence: &Path) -> PathBuf {
    let stem = sequence
        .file_stem()
        .map_or_else(Default::default, |s| s.to_string_lossy().into_owned());
    sequence.with_file_name(format!("{stem}.truth.json"))
}

pub fn simulate(config: &Config, seed: Option<u64>, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let seed = seed.or(config.seed).unwrap_or(0);
    let scenario = config.simulate.scenario(seed);
    let (truth, seq) = generate(&scenario).map_err(|e| CliError::stage("simulate", e))?;
    prepare(out_dir)?;
    let seq_path = out_dir.join(SEQUENCE_FILE);
    let truth_file = TruthFile {
        body_model: seq.body.clone(),
        objects: seq.objects.clone(),
        truth,
    };
    files::write(&seq_path, &seq)?;
    let tp = truth_path(&seq_path);
    files::write(&tp, &truth_file)?;
    Ok(vec![seq_path, tp])
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub time_offset: Option<f64>,
}

pub fn pipeline_config(config: &Config, o: &RunOverrides) -> PipelineConfig {
    let mut p = config.pipeline;
    if let Some(m) = o.mode {
        p.mode = m;
    }
    if let Some(s) = o.seed.or(config.seed) {
        p.calibration.ransac.seed = s;
    }
    if let Some(t) = o.time_offset {
        p.calibration.time_offset_override = Some(t);
    }
    p
}

/// Runs the pipeline on a sequence file. Ground truth is taken from
/// `truth`, else from the sidecar next to the sequence when it exists.
pub fn run_sequence(
    sequence: &Path,
    truth: Option<&Path>,
    config: &Config,
    overrides: &RunOverrides,
    out_dir: &Path,
) -> Result<(RunReport, Vec<PathBuf>), CliError> {
    let seq: Sequence = files::read(sequence)?;
    let truth_file = match truth {
        Some(p) => Some(files::read::<TruthFile>(p)?),
        None => {
            let p = truth_path(sequence);
            if p.is_file() {
                Some(files::read::<TruthFile>(&p)?)
            } else {
                None
            }
        }
    };
    let pcfg = pipeline_config(config, overrides);
    let (solution, stages) = run(&seq, &pcfg).map_err(|e| CliError::stage("pipeline", e))?;
    let (errors, series) = match &truth_file {
        Some(t) => {
            let e = eval_errors(&solution, &t.truth, &seq.body, &seq.objects)
                .map_err(|e| CliError::stage("eval", e))?;
            let s = error_series(&solution, &t.truth, &seq.body, &seq.objects)
                .map_err(|e| CliError::stage("eval", e))?;
            (Some(e), Some(s))
        }
        None => (None, None),
    };
    let report = RunReport {
        seed: pcfg.calibration.ransac.seed,
        sequence: sequence
            .file_name()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        frames: solution.times.len(),
        config: pcfg,
        stages,
        errors,
        error_series: series,
    };
    prepare(out_dir)?;
    let sol_path = out_dir.join(SOLUTION_FILE);
    files::write(
        &sol_path,
        &SolutionFile {
            body_model: seq.body,
            solution,
        },
    )?;
    let rep_path = out_dir.join(REPORT_FILE);
    files::write(&rep_path, &report)?;
    Ok((report, vec![sol_path, rep_path]))
}

pub fn eval(solution: &Path, truth: &Path, out_dir: &Path) -> Result<(EvalReport, Vec<PathBuf>), CliError> {
    let sol: SolutionFile = files::read(solution)?;
    let t: TruthFile = files::read(truth)?;
    let errors = eval_errors(&sol.solution, &t.truth, &t.body_model, &t.objects)
        .map_err(|e| CliError::stage("eval", e))?;
    let series = error_series(&sol.solution, &t.truth, &t.body_model, &t.objects)
        .map_err(|e| CliError::stage("eval", e))?;
    let report = EvalReport { errors, series };
    prepare(out_dir)?;
    let path = out_dir.join(EVAL_FILE);
    files::write(&path, &report)?;
    Ok((report, vec![path]))
}

/// Writes `body.csv`, `objects.csv` and `errors.csv` from a run directory.
pub fn export_plots(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report: RunReport = files::read(&run_dir.join(REPORT_FILE))?;
    let sol: SolutionFile = files::read(&run_dir.join(SOLUTION_FILE))?;
    prepare(out_dir)?;
    let tables = [
        ("body.csv", plots::body_table(&sol.body_model, &sol.solution)?),
        ("objects.csv", plots::object_table(&sol.solution)),
        ("errors.csv", plots::error_table(report.error_series.as_ref())),
    ];
    let mut out = Vec::new();
    for (name, table) in &tables {
        let path = out_dir.join(name);
        plots::write_csv(&path, table)?;
        out.push(path);
    }
    Ok(out)
}
