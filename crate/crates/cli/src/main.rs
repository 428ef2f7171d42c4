//! `pseopt`: run physics-guided splat optimization from a config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pseopt_core::io::{ply_read, ply_write, telemetry_csv, RunConfig};
use pseopt_core::losses::{check_position_gradient, splat_render, total_loss, View};
use pseopt_core::metrics::penetration_fraction;
use pseopt_core::optimizer::{optimize, Objective, OptimAbort};
use pseopt_core::{
    Error, MetricReport, OptimMode, OptimTelemetry, ParticleSet, ScoreProvider, SdfField,
    ShapePrior,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONFIG_ECHO: &str = "config.cfg";
const TELEMETRY: &str = "telemetry.csv";
const REPORT: &str = "report.json";
const GRADCHECK_PASS_RATE: f64 = 0.95;

#[derive(Parser, Debug)]
#[command(
    name = "pseopt",
    version,
    about = "Physics-guided Gaussian-splat optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Seed for scene sampling; overrides `output.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the scene from rest (physics as a post-process).
    Simulate,
    /// Optimize the foreground against the configured losses.
    Optimize,
    /// Report penetration and conservation metrics of a particle file.
    Metrics {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        sdf: PathBuf,
    },
    /// Check analytic loss gradients against finite differences.
    Gradcheck,
    /// Write the bundled sphere-on-box scene and optimize it.
    Demo,
}

/// A failure carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } | Error::Cfl { .. } => 2,
            ref e if e.is_simulation_failure() => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSEOPT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pseopt: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = cli.threads.unwrap_or(0);
    if cli.threads == Some(0) {
        return Err(Failure::config("--threads must be at least 1"));
    }
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure {
                code: 1,
                message: format!("cannot start worker pool: {e}"),
            })?;
    }
    let parallel = threads != 1;
    match &cli.command {
        Command::Metrics { ply, sdf } => metrics(ply, sdf, cli.out.as_deref()),
        Command::Demo => demo(&cli, parallel),
        Command::Simulate | Command::Optimize => {
            let cfg = load_config(&cli, RunConfig::default(), parallel)?;
            run_optimization(&cfg, matches!(cli.command, Command::Simulate))
        }
        Command::Gradcheck => {
            let cfg = load_config(&cli, RunConfig::default(), parallel)?;
            gradcheck(&cfg)
        }
    }
}

/// Config file (or `base` when none is given), then overrides and flags.
fn load_config(cli: &Cli, base: RunConfig, parallel: bool) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::config)?,
        None => base,
    };
    cfg.apply_overrides(&cli.set).map_err(Failure::config)?;
    if let Some(seed) = cli.seed {
        cfg.output.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    cfg.optimizer.parallel = parallel;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", dir.display()),
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    })
}

fn checkpoint_path(dir: &Path, completed_steps: usize) -> PathBuf {
    dir.join(format!("step_{completed_steps:06}.ply"))
}

struct Inputs {
    set: ParticleSet,
    sdf: SdfField,
    views: Vec<View>,
    prior: Option<ShapePrior>,
}

fn build_inputs(cfg: &RunConfig) -> CliResult<Inputs> {
    let stage = |e: Error| Failure::config(e);
    cfg.validate().map_err(stage)?;
    let set = cfg.build_particles().map_err(stage)?;
    let sdf = cfg.build_sdf().map_err(stage)?;
    let views = cfg.load_views().map_err(stage)?;
    cfg.optimizer.validate_for(&set, &cfg.scene)?;
    Ok(Inputs {
        set,
        sdf,
        views,
        prior: cfg.shape_prior(),
    })
}

fn report(set: &ParticleSet, sdf: &SdfField, views: &[View]) -> CliResult<MetricReport> {
    let rendered = views
        .first()
        .map(|v| (splat_render(set, &v.camera), &v.target));
    let images = rendered.as_ref().map(|(r, t)| (&r.color, &t.color));
    Ok(MetricReport::evaluate(set, Some(sdf), images)?)
}

fn write_report(dir: &Path, r: &MetricReport) -> CliResult<()> {
    let json = serde_json::to_string_pretty(r).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    write_text(&dir.join(REPORT), &(json + "\n"))
}

/// Writes the config echo and an empty telemetry file up front so that
/// every failure leaves both behind, then runs `optimize`.
fn run_optimization(cfg: &RunConfig, simulate: bool) -> CliResult<()> {
    let dir = &cfg.output.directory;
    create_dir(dir)?;
    log::info!("writing artifacts to {}", dir.display());
    write_text(&dir.join(CONFIG_ECHO), &cfg.to_text())?;
    telemetry_csv(&OptimTelemetry::default(), &dir.join(TELEMETRY))?;

    let mut cfg = cfg.clone();
    if simulate {
        cfg.optimizer.mode = OptimMode::Ppps;
    } else if cfg.optimizer.mode == OptimMode::Ppps {
        return Err(Failure::config(
            "optimizer.mode = ppps is a pure simulation; use `simulate`",
        ));
    }
    let inputs = build_inputs(&cfg)?;
    let providers: Vec<&dyn ScoreProvider> = inputs
        .prior
        .iter()
        .map(|p| p as &dyn ScoreProvider)
        .collect();
    if !simulate && inputs.views.is_empty() && providers.is_empty() {
        return Err(Failure::config(
            "nothing to optimize: set losses.target_color or losses.shape_prior",
        ));
    }
    let objective = Objective {
        views: &inputs.views,
        providers: &providers,
        weights: cfg.losses.weights,
    };

    let interval = cfg.output.checkpoint_interval;
    if interval > 0 {
        ply_write(&inputs.set, &checkpoint_path(dir, 0))?;
    }
    let steps = if simulate { 1 } else { cfg.optimizer.steps_k };
    let mut hook = |k: usize, state: &ParticleSet| {
        let done = k + 1;
        if interval > 0 && (done.is_multiple_of(interval) || done == steps) {
            let path = checkpoint_path(dir, done);
            log::debug!("checkpoint {}", path.display());
            ply_write(state, &path)?;
        }
        Ok(())
    };
    let initial_penetration = penetration_fraction(&inputs.set, &inputs.sdf).0;
    let outcome = optimize(
        &inputs.set,
        &objective,
        &cfg.optimizer,
        &cfg.scene,
        Some(&inputs.sdf),
        Some(&mut hook),
    );
    let (state, telemetry) = match outcome {
        Ok(v) => v,
        Err(abort) => {
            let OptimAbort {
                step,
                error,
                telemetry,
                ..
            } = *abort;
            telemetry_csv(&telemetry, &dir.join(TELEMETRY))?;
            // Inputs passed the CFL check up front, so a violation here
            // comes from velocities growing during the run.
            let runaway = matches!(error, Error::Cfl { .. });
            let mut f = Failure::from(error);
            if runaway {
                f.code = 3;
            }
            f.message = format!("step {step}: {}", f.message);
            return Err(f);
        }
    };
    telemetry_csv(&telemetry, &dir.join(TELEMETRY))?;
    let r = report(&state, &inputs.sdf, &inputs.views)?;
    write_report(dir, &r)?;
    let last = telemetry.records.last();
    say!(
        "{} steps ({}), penetration {:.4} -> {:.4}, final loss {:.6e}, output in {}",
        telemetry.records.len(),
        cfg.optimizer.mode,
        initial_penetration,
        r.penetration_fraction,
        last.map_or(0.0, |l| l.loss_total),
        dir.display()
    );
    Ok(())
}

fn metrics(ply: &Path, sdf: &Path, out: Option<&Path>) -> CliResult<()> {
    let set = ply_read(ply).map_err(Failure::config)?;
    let field = SdfField::load(sdf).map_err(Failure::config)?;
    let r = report(&set, &field, &[])?;
    let json = serde_json::to_string_pretty(&r).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    say!("{json}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_report(dir, &r)?;
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig) -> CliResult<()> {
    let inputs = build_inputs(cfg)?;
    let providers: Vec<&dyn ScoreProvider> = inputs
        .prior
        .iter()
        .map(|p| p as &dyn ScoreProvider)
        .collect();
    if inputs.views.is_empty() && providers.is_empty() {
        return Err(Failure::config(
            "nothing to check: set losses.target_color or losses.shape_prior",
        ));
    }
    let w = &cfg.losses.weights;
    let set = &inputs.set;
    let analytic = total_loss(set, &inputs.views, &providers, w, 0)?;
    let dynamic = set.dynamic_indices();
    if dynamic.is_empty() {
        return Err(Failure::config("scene has no dynamic particles"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.output.seed);
    let coords: Vec<(usize, usize)> = (0..cfg.gradcheck.coordinates)
        .map(|_| {
            (
                dynamic[rng.random_range(0..dynamic.len())],
                rng.random_range(0..3),
            )
        })
        .collect();
    let step = cfg.gradcheck.relative_step * cfg.losses.camera.window_extent();
    let r = check_position_gradient(
        set,
        &analytic,
        &coords,
        step,
        cfg.gradcheck.rtol,
        cfg.gradcheck.atol,
        |p| Ok(total_loss(p, &inputs.views, &providers, w, 0)?.loss_value),
    )?;
    let ok = r.pass_rate() >= GRADCHECK_PASS_RATE;
    say!(
        "gradcheck {}: {}/{} coordinates within tolerance ({:.1}%), step {:.3e}, worst abs error {:.3e}",
        if ok { "PASS" } else { "FAIL" },
        r.passed,
        r.checked,
        100.0 * r.pass_rate(),
        r.step,
        r.worst_abs_error
    );
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("pass rate {:.3} below {GRADCHECK_PASS_RATE}", r.pass_rate()),
        })
    }
}

/// Writes the scene PLY, background SDF, target images and `demo.cfg` into
/// the output directory, then optimizes with that config.
fn demo(cli: &Cli, parallel: bool) -> CliResult<()> {
    let mut cfg = load_config(cli, RunConfig::demo(), parallel)?;
    if cli.out.is_none() && cli.config.is_none() {
        cfg.output.directory = PathBuf::from("demo_out");
    }
    let dir = cfg.output.directory.clone();
    create_dir(&dir)?;

    let set = cfg.build_particles().map_err(Failure::config)?;
    ply_write(&set, &dir.join("scene.ply"))?;
    cfg.build_sdf()
        .map_err(Failure::config)?
        .save(&dir.join("background.psdf"))?;
    cfg.render_rest_target()
        .map_err(Failure::config)?
        .save_png(&dir.join("target.png"), Some(&dir.join("target_alpha.png")))?;

    // Paths in the saved config are relative to its own directory.
    let mut saved = cfg.clone();
    saved.setup.sdf = Some(PathBuf::from("background.psdf"));
    saved.losses.target_color = Some(PathBuf::from("target.png"));
    saved.losses.target_alpha = Some(PathBuf::from("target_alpha.png"));
    saved.output.directory = PathBuf::from(".");
    log::info!("demo scene, SDF and target written to {}", dir.display());
    let cfg_path = dir.join("demo.cfg");
    write_text(&cfg_path, &saved.to_text())?;
    say!("wrote {}", cfg_path.display());

    let mut loaded = RunConfig::load(&cfg_path).map_err(Failure::config)?;
    loaded.optimizer.parallel = parallel;
    run_optimization(&loaded, false)
}
