//! The `zol` command line: collect, pretrain, adapt and verify.
//!
//! Every command reads one config file and writes its artifacts into
//! `<out>/<command>-seed<seed>/`.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::vector_csv;
use crate::envs::{
    build_gridworld, collect_donut, collect_tabular, read_dataset, support_stats, write_dataset, OfflineDataset,
    TaskReward, DONUT_TASKS, GRID_ACTIONS,
};
use crate::error::{Result, ZolError};
use crate::evalkit::compare_fb_vs_zol;
use crate::fbmodel::{load_model, save_model, train_fb, window_means, ActionSpace};
use crate::mdporacle::suite::{run_suite, SuiteConfig};

pub use config::{EnvKind, RunConfig, DEFAULT_N_RECORDS, DEFAULT_SIGMA, KNOWN_KEYS};

/// Window used when reporting smoothed losses.
pub const LOSS_WINDOW: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "zol", version, about = "FB pretraining and test-time latent adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect a reward-free offline dataset.
    Collect(CommonArgs),
    /// Train forward-backward representations on a dataset.
    Pretrain(CommonArgs),
    /// Compare inferred and adapted latents on a task.
    Adapt(CommonArgs),
    /// Run the exact tabular identity suite.
    Verify(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Run config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Existing directory that receives the per-run output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Output of one command: the run directory and the text to print.
#[derive(Clone, Debug)]
pub struct CommandOutput {
    pub run_dir: PathBuf,
    pub summary: String,
    pub warnings: Vec<String>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = match &cli.command {
        Command::Collect(a) => ("collect", a),
        Command::Pretrain(a) => ("pretrain", a),
        Command::Adapt(a) => ("adapt", a),
        Command::Verify(a) => ("verify", a),
    };
    let result = common
        .config
        .as_deref()
        .map(RunConfig::load)
        .unwrap_or_else(|| Ok(RunConfig::default()))
        .and_then(|cfg| dispatch(name, &cfg, &common.out));
    match result {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(name: &str, cfg: &RunConfig, out: &Path) -> Result<CommandOutput> {
    match name {
        "collect" => cmd_collect(cfg, out),
        "pretrain" => cmd_pretrain(cfg, out),
        "adapt" => cmd_adapt(cfg, out),
        "verify" => cmd_verify(cfg, out),
        _ => Err(ZolError::Config(format!("unknown command `{name}`"))),
    }
}

/// Creates `<out>/<command>-seed<seed>`; `out` itself must already exist.
pub fn run_dir(out: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    if !out.is_dir() {
        return Err(ZolError::io(
            out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let dir = out.join(format!("{command}-seed{seed}"));
    fs::create_dir_all(&dir).map_err(|e| ZolError::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| ZolError::io(path, e))
}

/// The dataset a config describes, without touching the disk.
pub fn collect_dataset(cfg: &RunConfig) -> Result<OfflineDataset> {
    match cfg.env {
        EnvKind::Donut => collect_donut(cfg.n_records, cfg.sigma, cfg.seed),
        EnvKind::Gridworld => {
            let mdp = build_gridworld(cfg.grid_width, cfg.grid_height, cfg.arch.gamma, &[])?;
            Ok(collect_tabular(&mdp, cfg.n_records, cfg.seed))
        }
    }
}

/// Reads `dataset` when set, otherwise collects from the config.
fn load_or_collect(cfg: &RunConfig) -> Result<OfflineDataset> {
    match &cfg.dataset {
        Some(path) => read_dataset(path),
        None => collect_dataset(cfg),
    }
}

pub fn cmd_collect(cfg: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let ds = collect_dataset(cfg)?;
    let dir = run_dir(out, "collect", cfg.seed)?;
    let path = dir.join("dataset.zold");
    write_dataset(&ds, &path)?;
    let mut warnings = Vec::new();
    if ds.is_empty() {
        warnings.push("n_records = 0, wrote an empty dataset".to_string());
    }
    let mut summary = format!("wrote {} records to {}\n", ds.len(), path.display());
    if cfg.env == EnvKind::Donut {
        let (mean_norm, coverage) = support_stats(&ds);
        let _ = writeln!(summary, "mean |s| = {mean_norm:.4}, annulus coverage = {coverage:.4}");
    }
    Ok(CommandOutput {
        run_dir: dir,
        summary,
        warnings,
    })
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let ds = load_or_collect(cfg)?;
    let actions = ActionSpace::for_dataset(&ds, GRID_ACTIONS);
    let (model, trace) = train_fb(&ds, &cfg.arch, actions, &cfg.train_config())?;
    let dir = run_dir(out, "pretrain", cfg.seed)?;
    let path = dir.join("model.zolm");
    save_model(&model, &path)?;
    let mut csv = String::from("step,loss\n");
    for (t, l) in trace.iter().enumerate() {
        let _ = writeln!(csv, "{t},{l}");
    }
    write(&dir.join("loss.csv"), csv)?;
    let mut summary = format!("wrote {} after {} steps\n", path.display(), trace.len());
    let windows = window_means(&trace, LOSS_WINDOW);
    if let (Some(first), Some(last)) = (windows.first(), windows.last()) {
        let _ = writeln!(summary, "smoothed loss: initial {first:.5}, final {last:.5}");
    }
    Ok(CommandOutput {
        run_dir: dir,
        summary,
        warnings: Vec::new(),
    })
}

pub fn cmd_adapt(cfg: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let name = cfg
        .task
        .as_deref()
        .ok_or_else(|| ZolError::Config(format!("adapt needs `task`; valid tasks: {}", DONUT_TASKS.join(", "))))?;
    if !DONUT_TASKS.contains(&name) {
        return Err(ZolError::Config(format!(
            "unknown task `{name}`; valid tasks: {}",
            DONUT_TASKS.join(", ")
        )));
    }
    let task = TaskReward::from_name(name)?;
    let ckpt = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| ZolError::Config("adapt needs `checkpoint`".into()))?;
    let model = load_model(ckpt)?;
    let ds = load_or_collect(cfg)?;
    let (report, artifacts) = compare_fb_vs_zol(&model, &ds, &task, &cfg.zol, &cfg.seeds)?;
    let dir = run_dir(out, "adapt", cfg.seed)?;
    for a in &artifacts {
        let sub = dir.join(format!("seed{}", a.seed));
        fs::create_dir_all(&sub).map_err(|e| ZolError::io(&sub, e))?;
        write(&sub.join("z_fb.csv"), vector_csv(&a.adapt.z_init))?;
        write(&sub.join("z_zol.csv"), vector_csv(&a.adapt.z_final))?;
        write(&sub.join("trace.csv"), a.adapt.trace_csv())?;
        write(&sub.join("heatmap_fb.csv"), a.heat_fb.to_csv())?;
        write(&sub.join("heatmap_fb.pgm"), a.heat_fb.to_pgm())?;
        write(&sub.join("heatmap_zol.csv"), a.heat_zol.to_csv())?;
        write(&sub.join("heatmap_zol.pgm"), a.heat_zol.to_pgm())?;
    }
    write(&dir.join("report.csv"), report.to_csv())?;
    let mut summary = String::new();
    for r in &report.rows {
        let _ = writeln!(
            summary,
            "{} seed {}: corr fb {:.4} zol {:.4} delta {:+.5}",
            report.task, r.seed, r.corr_fb, r.corr_zol, r.delta
        );
    }
    let _ = writeln!(
        summary,
        "{} mean: corr fb {:.4} zol {:.4} delta {:+.5} ({}/{} improved)",
        report.task,
        report.corr_fb,
        report.corr_zol,
        report.delta,
        report.improved(),
        report.rows.len()
    );
    let warnings = artifacts
        .iter()
        .filter(|a| a.adapt.fallback)
        .map(|a| format!("seed {}: zero task embedding, used a fallback latent", a.seed))
        .collect();
    Ok(CommandOutput {
        run_dir: dir,
        summary,
        warnings,
    })
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<CommandOutput> {
    let suite = SuiteConfig {
        instances: cfg.instances,
        seed: cfg.seed,
        max_states: cfg.max_states,
        max_actions: cfg.max_actions,
        gamma: None,
    };
    let main = run_suite(&suite)?;
    let flat = run_suite(&SuiteConfig {
        gamma: Some(0.0),
        ..suite
    })?;
    let summary = format!("{}{}", main.render("random discounts"), flat.render("gamma = 0"));
    let dir = run_dir(out, "verify", cfg.seed)?;
    write(&dir.join("report.txt"), &summary)?;
    for report in [&main, &flat] {
        if let Some(fail) = report.first_failure(cfg.tolerance) {
            return Err(ZolError::Verification {
                check: fail.name.to_string(),
                seed: fail.worst_seed,
                error: fail.max_error,
            });
        }
    }
    Ok(CommandOutput {
        run_dir: dir,
        summary,
        warnings: Vec::new(),
    })
}
