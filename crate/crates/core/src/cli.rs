//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage or input errors, 2 on numeric
//! failures (non-finite values, failed gradient checks, aborted training).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pointconv::layer_gradient_suite;
use crate::scenes::{list_scenes, make_dataset, read_scene, write_scene, DatasetConfig, Scenario, Scene};
use crate::trainer::{
    evaluate, export_rollout, full_length, kabsch_fit, load_checkpoint, rmsd, rollout, rollout_all, train,
    write_atomic, TrainConfig, BEST_CHECKPOINT,
};
use crate::unet::{unet_gradient_check, InputMode, Model, ModelConfig, PredictionMode};
use crate::{Error, Result, Vec3};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// Gradient-check tolerance on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "pointsim", version, about = "Learned multi-object rigid-body simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// Prediction target: next displacement or its change.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PredictionMode>,
    #[arg(long, value_parser = parse_input)]
    input: Option<InputMode>,
    /// Face interaction points for mesh input.
    #[arg(long, value_enum)]
    faces: Option<Toggle>,
}

fn parse_mode(s: &str) -> std::result::Result<PredictionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_input(s: &str) -> std::result::Result<InputMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scenes and print their checksums.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "collide,miss")]
        scenario: Vec<String>,
        /// Scenes per scenario.
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        contact_threshold: Option<f64>,
    },
    /// Train a model on a folder of scenes.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Validation scenes; the training scenes are used when absent.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint folder.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Optimizer step budget.
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Roll a checkpoint forward on one scene.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Frames to predict; defaults to the rest of the scene.
        #[arg(long)]
        steps: Option<usize>,
        /// Writes the observed frames and the rollout as a scene file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out every scene in a folder and score the rollouts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        contact_threshold: f64,
        #[arg(long)]
        steps: Option<usize>,
        /// Metrics report path; printed when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of a freshly built network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Quick numerical checks of every layer.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Optional sections of the `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

fn apply(flags: &ModelFlags, cfg: &mut ModelConfig) {
    if let Some(m) = flags.mode {
        cfg.prediction = m;
    }
    if let Some(i) = flags.input {
        cfg.input = i;
    }
    if let Some(f) = flags.faces {
        cfg.faces = f == Toggle::On;
    }
}

/// Failure of a command, already mapped to an exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) | Error::RankDeficient => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn numeric(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_NUMERIC,
        msg: msg.into(),
    }
}

fn load_dir(dir: &Path) -> Result<Vec<Scene>> {
    let paths = list_scenes(dir)?;
    if paths.is_empty() {
        return Err(Error::invalid(format!("no scene files in {}", dir.display())));
    }
    paths.iter().map(|p| read_scene(p)).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn toml_text<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::invalid(e.to_string()))
}

#[derive(Serialize)]
struct RolloutSummary {
    steps: usize,
    final_error: Option<f64>,
    min_distance: f64,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: PathBuf,
    steps: u64,
    initial_validation: f64,
    best_validation: f64,
    best_step: u64,
    aborted: Option<&'a str>,
}

fn execute(cmd: Command, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Gen {
            config,
            scenario,
            count,
            seed,
            out: dir,
            contact_threshold,
        } => {
            let mut data = match &config {
                Some(p) => RunConfig::load(p)?.data,
                None => DatasetConfig::default(),
            };
            if let Some(t) = contact_threshold {
                data.contact_threshold = t;
            }
            for (k, name) in scenario.iter().enumerate() {
                let sc: Scenario = name.parse()?;
                // seeds of different scenarios do not overlap
                let base = seed + (k as u64) * 1_000_000;
                let (_, paths) = make_dataset(sc, count, base, &data, Some(&dir))?;
                for p in paths {
                    writeln!(out, "{}  {}", sha256_hex(&std::fs::read(&p)?), p.display())?;
                }
            }
        }
        Command::Train {
            config,
            data,
            val,
            out: dir,
            seed,
            steps,
            model: flags,
        } => {
            let mut run = RunConfig::load(&config)?;
            apply(&flags, &mut run.model);
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(s) = steps {
                run.train.max_steps = Some(s);
            }
            run.train.checkpoint_dir = Some(dir.clone());
            let train_set = load_dir(&data)?;
            let val_set = val.as_deref().map(load_dir).transpose()?.unwrap_or_default();
            let mut model = Model::new(run.model.clone(), run.train.seed)?;
            let report = train(&mut model, &train_set, &val_set, &run.train)?;
            write_atomic(&dir.join("train_report.toml"), toml_text(&report)?.as_bytes())?;
            let summary = TrainSummary {
                checkpoint: dir.join(BEST_CHECKPOINT),
                steps: report.steps,
                initial_validation: report.initial_validation(),
                best_validation: report.best_validation,
                best_step: report.best_step,
                aborted: report.aborted.as_deref(),
            };
            write!(out, "{}", toml_text(&summary)?)?;
            if let Some(why) = &report.aborted {
                return Err(numeric(format!("training aborted: {why}")));
            }
        }
        Command::Rollout {
            checkpoint,
            scene,
            steps,
            out: export,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let sc = read_scene(&scene)?;
            let n = match steps {
                Some(n) => n,
                None => full_length(&model, &sc)?,
            };
            let r = rollout(&model, &sc, n)?;
            if let Some(p) = export {
                write_scene(&p, &export_rollout(&model, &sc, &r)?)?;
            }
            let summary = RolloutSummary {
                steps: r.steps(),
                final_error: r.final_error,
                min_distance: r.min_distances.iter().copied().fold(f64::INFINITY, f64::min),
            };
            write!(out, "{}", toml_text(&summary)?)?;
        }
        Command::Eval {
            checkpoint,
            data,
            contact_threshold,
            steps,
            out: report_path,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let scenes = load_dir(&data)?;
            let rolls = rollout_all(&model, &scenes, steps)?;
            let report = evaluate(&rolls, &scenes, model.config.input, contact_threshold)?;
            let text = report.to_toml()?;
            match report_path {
                Some(p) => {
                    write_atomic(&p, text.as_bytes())?;
                    writeln!(
                        out,
                        "scenes = {}\ncontact_accuracy = {}\nmean_final_error = {}",
                        report.scenes,
                        report.contact_accuracy,
                        report.mean_final_error.map_or("nan".into(), |e| e.to_string())
                    )?;
                }
                None => write!(out, "{text}")?,
            }
        }
        Command::Gradcheck { seed, model: flags } => {
            let mut cfg = ModelConfig::default();
            apply(&flags, &mut cfg);
            let rep = unet_gradient_check(cfg.input, cfg.faces, seed)?;
            writeln!(
                out,
                "input = \"{}\"\nfaces = {}\nchecked = {}\nmax_rel_err = {:e}",
                cfg.input, cfg.faces, rep.checked, rep.max_rel_error
            )?;
            if !rep.passed(GRADCHECK_TOL) {
                return Err(numeric(format!("max relative error {:e} above {GRADCHECK_TOL:e}", rep.max_rel_error)));
            }
        }
        Command::Selftest { seed } => {
            let mut failed = Vec::new();
            for (name, rep) in layer_gradient_suite(seed)? {
                let ok = rep.passed(GRADCHECK_TOL);
                writeln!(out, "{} gradcheck {name}: max_rel_err {:e}", if ok { "PASS" } else { "FAIL" }, rep.max_rel_error)?;
                if !ok {
                    failed.push(name.to_string());
                }
            }
            let src = [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ];
            let rot = nalgebra::UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
            let dst: Vec<Vec3> = src.iter().map(|p| rot * p + Vec3::new(1.0, 2.0, 3.0)).collect();
            let fit = rmsd(&kabsch_fit(&src, &dst)?, &src, &dst);
            let ok = fit < 1e-8;
            writeln!(out, "{} kabsch round trip: rmsd {fit:e}", if ok { "PASS" } else { "FAIL" })?;
            if !ok {
                failed.push("kabsch".into());
            }
            if !failed.is_empty() {
                return Err(numeric(format!("failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status. Output goes to `out`, diagnostics to `err`.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("pointsim").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["gradcheck", "--bogus"]).0, EXIT_USAGE);
        let (code, _, err) = call(&["train", "--data", "x", "--out", "y"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--config"));
        assert_eq!(call(&["gradcheck", "--mode", "jerk"]).0, EXIT_USAGE);
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn gradcheck_reports_max_error() {
        let (code, out, err) = call(&["gradcheck", "--seed", "3"]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(out.contains("max_rel_err = "));
    }

    #[test]
    fn config_sections_are_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[model]\nbase_channels = 8\n[train]\nlr = 0.01\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.model.base_channels, 8);
        assert_eq!(c.model.k, ModelConfig::default().k);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.data, DatasetConfig::default());
    }
}
