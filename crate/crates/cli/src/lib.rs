//! Command implementations behind the `cvc-sim` binary.
//!
//! Every command returns a process exit code: 0 success, 1 a run or check
//! that completed but failed, 2 unusable input (bad flags, unreadable or
//! malformed files, unknown scenario).

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cvc_sim::eval::{run_scenario, run_scenario_detailed, summary_csv, NoiseSettings, PipelineConfig, ScenarioReport};
use cvc_sim::needle::trace_csv;
use cvc_sim::phantom::{PhantomModel, ScenarioConfig, SceneFile};

pub const MANIFEST_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] cvc_sim::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Batch description read from JSON. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub scene: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub scenarios_file: Option<PathBuf>,
}

/// A manifest with its scene and scenario list resolved.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub base_dir: PathBuf,
    pub scene: PhantomModel,
    pub scenarios: Vec<ScenarioConfig>,
}

impl LoadedManifest {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            noise: self.manifest.noise,
            ..self.manifest.pipeline
        }
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.manifest.output_dir.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioConfig> {
        self.scenarios.iter().find(|s| s.id == id)
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest, CliError> {
    let text = read_text(path)?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: malformed manifest: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CliError::Usage(format!(
            "{}: unsupported manifest version {} (expected {MANIFEST_VERSION})",
            path.display(),
            manifest.version
        )));
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let scene_path = base_dir.join(&manifest.scene);
    let scene_text = read_text(&scene_path)?;
    let scene_file =
        SceneFile::from_json(&scene_text).map_err(|e| CliError::Usage(format!("{}: {e}", scene_path.display())))?;
    let scene =
        PhantomModel::from_scene(&scene_file).map_err(|e| CliError::Usage(format!("{}: {e}", scene_path.display())))?;

    let mut scenarios = manifest.scenarios.clone();
    if let Some(file) = &manifest.scenarios_file {
        let p = base_dir.join(file);
        let extra: Vec<ScenarioConfig> = serde_json::from_str(&read_text(&p)?)
            .map_err(|e| CliError::Usage(format!("{}: malformed scenario list: {e}", p.display())))?;
        scenarios.extend(extra);
    }
    if scenarios.is_empty() {
        return Err(CliError::Usage(format!("{}: no scenarios", path.display())));
    }
    let mut seen = HashSet::new();
    for s in &scenarios {
        if s.id.is_empty() || !s.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(CliError::Usage(format!("invalid scenario id {:?}", s.id)));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(CliError::Usage(format!("duplicate scenario id {:?}", s.id)));
        }
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(LoadedManifest {
        manifest,
        base_dir,
        scene,
        scenarios,
    })
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn report_json(report: &ScenarioReport) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(cvc_sim::Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn report_line(r: &ScenarioReport) -> String {
    match (&r.failed_stage, &r.targeting) {
        (Some(stage), _) => format!("{}: FAILED at {stage}: {}", r.id, r.error.as_deref().unwrap_or("")),
        (None, Some(t)) => format!(
            "{}: ok  center-line {:.3} mm  center-point {:.3} mm  inside_vein={}",
            r.id, t.center_line_error, t.center_point_error, t.inside_vein
        ),
        (None, None) => format!("{}: ok", r.id),
    }
}

/// Options of the `run` command.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub manifest: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Runs every scenario; returns the reports in manifest order.
pub fn run_batch(opts: &RunOptions) -> Result<(PathBuf, Vec<ScenarioReport>), CliError> {
    let loaded = load_manifest(&opts.manifest)?;
    let out = opts
        .out
        .clone()
        .or_else(|| loaded.output_dir())
        .ok_or_else(|| CliError::Usage("no output directory (use --out)".into()))?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let seed = opts.seed.unwrap_or(loaded.manifest.master_seed);
    let pipeline = loaded.pipeline();
    let jobs = opts.jobs.unwrap_or(0);
    if opts.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let reports: Vec<Result<ScenarioReport, CliError>> = pool.install(|| {
        loaded
            .scenarios
            .par_iter()
            .map(|cfg| {
                let report = run_scenario(&loaded.scene, cfg, &pipeline, seed);
                write_atomic(&out.join(format!("{}.json", cfg.id)), &report_json(&report)?)?;
                Ok(report)
            })
            .collect()
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_atomic(&out.join("summary.csv"), summary_csv(&reports).as_bytes())?;
    Ok((out, reports))
}

pub fn cmd_run(opts: &RunOptions) -> i32 {
    match run_batch(opts) {
        Ok((out, reports)) => {
            for r in &reports {
                println!("{}", report_line(r));
            }
            let passed = reports.iter().filter(|r| r.succeeded() && r.inside_vein()).count();
            println!(
                "{passed}/{} scenarios placed the needle in the vein; reports in {}",
                reports.len(),
                out.display()
            );
            if passed == reports.len() {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Lists every invariant violation of a scene file. `Err` means the file
/// could not be read or parsed at all.
pub fn scene_violations(path: &Path) -> Result<Vec<String>, CliError> {
    let text = read_text(path)?;
    let scene = SceneFile::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(match PhantomModel::from_scene_unchecked(&scene) {
        Ok(m) => m.violations(),
        Err(cvc_sim::Error::InvalidScene(v)) => v,
        Err(e) => vec![e.to_string()],
    })
}

pub fn cmd_validate_scene(path: &Path) -> i32 {
    match scene_violations(path) {
        Ok(v) if v.is_empty() => {
            println!("{}: valid", path.display());
            EXIT_OK
        }
        Ok(v) => {
            println!("{}: {} violation(s)", path.display(), v.len());
            for line in v {
                println!("  - {line}");
            }
            EXIT_FAILED
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TraceOptions {
    pub manifest: PathBuf,
    pub scenario: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Runs one scenario and writes `trace.csv`, `vein_centerline.csv`,
/// `artery_centerline.csv` and `report.json` into the output directory.
pub fn trace_scenario(opts: &TraceOptions) -> Result<ScenarioReport, CliError> {
    let loaded = load_manifest(&opts.manifest)?;
    let cfg = loaded
        .scenario(&opts.scenario)
        .ok_or_else(|| CliError::Usage(format!("unknown scenario {:?}", opts.scenario)))?;
    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    let seed = opts.seed.unwrap_or(loaded.manifest.master_seed);
    let (report, artifacts) = run_scenario_detailed(&loaded.scene, cfg, &loaded.pipeline(), seed);
    write_atomic(&opts.out.join("trace.csv"), trace_csv(&artifacts.trace).as_bytes())?;
    for (name, line) in [
        ("vein_centerline.csv", &artifacts.vein),
        ("artery_centerline.csv", &artifacts.artery),
    ] {
        if let Some(line) = line {
            write_atomic(&opts.out.join(name), line.to_csv().as_bytes())?;
        }
    }
    write_atomic(&opts.out.join("report.json"), &report_json(&report)?)?;
    Ok(report)
}

pub fn cmd_trace(opts: &TraceOptions) -> i32 {
    match trace_scenario(opts) {
        Ok(r) => {
            println!("{}", report_line(&r));
            if r.succeeded() {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
