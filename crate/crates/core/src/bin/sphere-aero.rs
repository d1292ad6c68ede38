use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use sphere_aero::engine::{
    diagnostics_row, record_audio, run_loop, write_frames_csv, Engine, EngineConfig, RunLog, RunLogWriter,
    DIAGNOSTICS_HEADER,
};
use sphere_aero::geometry::GridSpec;
use sphere_aero::mms::{run_verification, MmsConfig};
use sphere_aero::synth::write_wav;

#[derive(Parser)]
#[command(name = "sphere-aero", version, about = "Real-time flow on a sphere with aeroacoustic sonification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the engine, streaming to socket clients unless headless.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        headless: bool,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
        /// Headless only: run this many steps unpaced, then exit.
        #[arg(long)]
        steps: Option<u64>,
        /// Headless with --steps: write force samples as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Headless with --steps: per-step solver diagnostics.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Manufactured-solution verification.
    VerifyMms {
        #[arg(long, value_delimiter = ',', default_value = "11,13,15,17")]
        resolutions: Vec<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Per-window spectrum table from a run log.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Render the synthesized stream to a mono 16-bit WAV.
    RecordAudio {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seconds: f64,
        #[arg(long)]
        wav: PathBuf,
    },
    /// Unpaced step throughput with acoustics enabled.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 33)]
        grid: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(EngineConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run(
    config: EngineConfig,
    headless: bool,
    listen: Option<String>,
    steps: Option<u64>,
    log: Option<PathBuf>,
    diagnostics: Option<PathBuf>,
) -> Result<()> {
    let Some(steps) = steps else {
        if log.is_some() || diagnostics.is_some() {
            bail!("--log and --diagnostics need --headless --steps N");
        }
        let address = if headless {
            None
        } else {
            Some(listen.unwrap_or_else(|| config.listen_address.clone()))
        };
        return Ok(run_loop(config, address.as_deref())?);
    };
    if !headless {
        bail!("--steps needs --headless");
    }
    let mut engine = Engine::new(config.clone())?;
    let mut log = match log {
        Some(p) => Some(RunLogWriter::new(create(&p)?, &config)?),
        None => None,
    };
    let mut diag = match diagnostics {
        Some(p) => {
            let mut w = create(&p)?;
            writeln!(w, "{DIAGNOSTICS_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    for _ in 0..steps {
        let (sample, _) = engine.step()?;
        if let Some(log) = log.as_mut() {
            log.force(&sample)?;
        }
        if let (Some(w), Some(d)) = (diag.as_mut(), engine.simulation.last_diagnostics()) {
            let s = engine.simulation.state();
            writeln!(w, "{}", diagnostics_row(s.step_count, s.time, d))?;
        }
    }
    if let Some(log) = log {
        log.finish()?;
    }
    if let Some(mut w) = diag {
        w.flush()?;
    }
    let s = engine.simulation.state();
    println!(
        "steps={} time={:.6} p_prime={:.6e} steps_per_second={:.1}",
        s.step_count,
        s.time,
        engine.analysis.pipeline().p_prime(),
        engine.timings.steps_per_second()
    );
    Ok(())
}

fn verify_mms(resolutions: Vec<usize>, csv: Option<PathBuf>, dt: Option<f64>, steps: Option<usize>) -> Result<()> {
    let mut config = MmsConfig {
        resolutions,
        ..MmsConfig::default()
    };
    if let Some(dt) = dt {
        config.dt = dt;
    }
    if let Some(steps) = steps {
        config.steps = steps;
    }
    let report = run_verification(&config)?;
    for line in report.console_lines() {
        println!("{line}");
    }
    if let Some(path) = csv {
        report.write_csv(create(&path)?)?;
    }
    if let Some(f) = &report.failure {
        bail!("verification stopped early: {f}");
    }
    Ok(())
}

fn analyze(input: &Path, csv: &Path) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let log = RunLog::read(BufReader::new(file))?;
    let frames = log.analyze()?;
    let mut out = create(csv)?;
    write_frames_csv(&frames, &mut out)?;
    out.flush()?;
    println!("{} samples, {} windows -> {}", log.samples.len(), frames.len(), csv.display());
    Ok(())
}

fn record(config: EngineConfig, seconds: f64, wav: &Path) -> Result<()> {
    let sample_rate = config.synth.sample_rate;
    let mut engine = Engine::new(config)?;
    let (samples, steps) = record_audio(&mut engine, seconds)?;
    write_wav(wav, &samples, sample_rate)?;
    println!("{} samples at {sample_rate} Hz from {steps} steps -> {}", samples.len(), wav.display());
    Ok(())
}

fn bench(mut config: EngineConfig, grid: usize, steps: usize) -> Result<()> {
    config.grid = GridSpec {
        resolution: grid,
        ..config.grid
    };
    let setup = std::time::Instant::now();
    let mut engine = Engine::new(config)?;
    let setup = setup.elapsed().as_secs_f64();
    engine.advance(steps)?;
    let t = &engine.timings;
    let band = engine.simulation.band().len();
    let method = engine
        .simulation
        .last_diagnostics()
        .and_then(|d| d.solver_method)
        .map(|m| format!("{m:?}"))
        .unwrap_or_default();
    let per = |s: f64| 1e3 * s / t.steps.max(1) as f64;
    let other = t.total_seconds - t.advect_seconds - t.project_seconds - t.acoustics_seconds;
    println!("grid={grid} band_points={band} setup={setup:.3}s solver={method}");
    println!("steps={} total={:.3}s steps_per_second={:.1}", t.steps, t.total_seconds, t.steps_per_second());
    println!(
        "per step: advect={:.3}ms project={:.3}ms acoustics={:.3}ms other={:.3}ms cg_iterations={:.1}",
        per(t.advect_seconds),
        per(t.project_seconds),
        per(t.acoustics_seconds),
        per(other),
        t.solver_iterations as f64 / t.steps.max(1) as f64
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run {
            config,
            headless,
            listen,
            steps,
            log,
            diagnostics,
        } => {
            let config = load_config(config.as_deref())?;
            info!("grid {} sphere radius {}", config.grid.resolution, config.sphere.radius);
            run(config, headless, listen, steps, log, diagnostics)
        }
        Cmd::VerifyMms {
            resolutions,
            csv,
            dt,
            steps,
        } => verify_mms(resolutions, csv, dt, steps),
        Cmd::Analyze { input, csv } => analyze(&input, &csv),
        Cmd::RecordAudio { config, seconds, wav } => record(load_config(config.as_deref())?, seconds, &wav),
        Cmd::Bench { config, grid, steps } => bench(load_config(config.as_deref())?, grid, steps),
    }
}
