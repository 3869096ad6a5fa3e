//! `fabloop` command line: kinematics, calibration, detection, thermal traces
//! and the closed-loop layer simulation.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fabloop::config::{apply_env_overrides, load_config, ScenarioConfig};
use fabloop::detection::detect_stages;
use fabloop::geometry::{estimate_homography, CalibrationQuad, Homography, PixelPoint};
use fabloop::image::{read_pgm, write_pgm};
use fabloop::kinematics::{forward_kinematics, inverse_kinematics, Elbow, IkRequest, JointAngles, Vector3};
use fabloop::simulation::{run_layer_cycle_with, CycleOptions};
use fabloop::telemetry::{StatusSnapshot, Telemetry, TelemetryServer};
use fabloop::thermal::{simulate_thermal_with, trace_to_csv, HysteresisConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fabloop", version, about = "Closed-loop print, inspect and repair simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario JSON; omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OutArg {
    /// Write the result here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ElbowArg {
    Up,
    Down,
}

#[derive(Subcommand)]
enum Command {
    /// Forward kinematics: joint angles (rad) to tool pose.
    Fk {
        #[command(flatten)]
        config: ConfigArg,
        /// θ1..θ5 in radians, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        joints: Vec<f64>,
    },
    /// Inverse kinematics: tool position (mm) to joint angles.
    Ik {
        #[command(flatten)]
        config: ConfigArg,
        /// x,y,z in the arm base frame, mm.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        target: Vec<f64>,
        /// Cumulative pitch θ2+θ3+θ4; defaults to the configured value.
        #[arg(long, allow_negative_numbers = true)]
        pitch: Option<f64>,
        /// Elbow branch; defaults to the configured value.
        #[arg(long, value_enum)]
        elbow: Option<ElbowArg>,
    },
    /// Estimate the raw → rectified homography from four raw corner pixels.
    Calibrate {
        /// JSON array of four [u, v] raw corners: top-left, top-right, bottom-right, bottom-left.
        #[arg(long)]
        quad: PathBuf,
        /// Side of the square rectified frame, pixels.
        #[arg(long, default_value_t = 400)]
        size: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Detect voids in a raw camera image (binary PGM).
    Detect {
        #[command(flatten)]
        config: ConfigArg,
        image: PathBuf,
        /// Homography JSON as written by `calibrate`; defaults to the configured camera corners.
        #[arg(long)]
        homography: Option<PathBuf>,
        /// Write the rectified frame with bounding boxes drawn at 255.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Hotend regulation trace as CSV: time_s, temp_c, heater_on.
    Thermal {
        #[command(flatten)]
        config: ConfigArg,
        /// Simulated duration, s.
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        /// Step, s; defaults to cycle.dt_s.
        #[arg(long)]
        dt: Option<f64>,
        /// Overrides setpoint_c.
        #[arg(long)]
        setpoint: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run one print, inspect and repair cycle and emit the report as JSON.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Write raw, rectified, mask and overlay PGMs for each inspection here.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        /// Serve GET /status and /healthz on 127.0.0.1:<PORT> during the run.
        #[arg(long, value_name = "PORT")]
        serve: Option<u16>,
        /// Keep serving this many seconds after the cycle finishes.
        #[arg(long, default_value_t = 0.0, requires = "serve")]
        hold: f64,
        #[command(flatten)]
        out: OutArg,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type CliResult<T> = Result<T, Failure>;

trait Classify<T> {
    fn config_err(self) -> CliResult<T>;
    fn runtime_err(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime_err(self) -> CliResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn scenario_config(arg: &ConfigArg) -> CliResult<ScenarioConfig> {
    let mut cfg = match &arg.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display())).config_err()?,
        None => ScenarioConfig::default(),
    };
    apply_env_overrides(&mut cfg).config_err()?;
    Ok(cfg)
}

fn emit(out: &OutArg, text: &str) -> CliResult<()> {
    match &out.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())).runtime_err(),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).runtime_err()
        }
    }
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON-serializable output");
    s.push('\n');
    s
}

fn write_pgm_file(path: &Path, img: &fabloop::image::GrayImage) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_pgm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fk { config, joints } => {
            let cfg = scenario_config(&config)?;
            let angles: [f64; 5] = joints.try_into().map_err(|_| Failure::Config(anyhow!("expected 5 joint angles")))?;
            let q = JointAngles::new(angles).config_err()?;
            let pose = forward_kinematics(&q, &cfg.geometry());
            let rotation: Vec<[f64; 3]> = (0..3).map(|r| [pose.rotation[(r, 0)], pose.rotation[(r, 1)], pose.rotation[(r, 2)]]).collect();
            let position = [pose.position.x, pose.position.y, pose.position.z];
            emit(&OutArg { out: None }, &pretty(&json!({ "position_mm": position, "rotation": rotation })))
        }
        Command::Ik { config, target, pitch, elbow } => {
            let cfg = scenario_config(&config)?;
            if target.len() != 3 {
                return Err(Failure::Config(anyhow!("expected x,y,z, got {} values", target.len())));
            }
            let elbow = match elbow {
                Some(ElbowArg::Up) => Elbow::Up,
                Some(ElbowArg::Down) => Elbow::Down,
                None => cfg.arm.elbow,
            };
            let req = IkRequest::new(Vector3::new(target[0], target[1], target[2]))
                .with_pitch(pitch.unwrap_or(cfg.arm.pitch_rad))
                .with_elbow(elbow);
            let q = inverse_kinematics(&req, &cfg.geometry()).runtime_err()?;
            emit(&OutArg { out: None }, &pretty(&json!({ "joints_rad": q.as_array() })))
        }
        Command::Calibrate { quad, size, out } => {
            let text = fs::read_to_string(&quad).with_context(|| format!("reading {}", quad.display())).config_err()?;
            let corners: [[f64; 2]; 4] = serde_json::from_str(&text)
                .with_context(|| format!("{}: expected four [u, v] pairs", quad.display()))
                .config_err()?;
            let q = CalibrationQuad::to_square(corners.map(PixelPoint::from), size).config_err()?;
            let h = estimate_homography(&q).config_err()?;
            emit(&out, &pretty(&json!({ "homography": h.to_rows() })))
        }
        Command::Detect { config, image, homography, overlay, out } => {
            let cfg = scenario_config(&config)?;
            let h = match homography {
                Some(path) => read_homography(&path)?,
                None => cfg.calibration().config_err()?,
            };
            let file = File::open(&image).with_context(|| format!("opening {}", image.display())).runtime_err()?;
            let raw = read_pgm(io::BufReader::new(file)).with_context(|| format!("reading {}", image.display())).runtime_err()?;
            let stages = detect_stages(&raw, &h, &cfg.bed_mapping(), &cfg.detect_config()).runtime_err()?;
            if let Some(path) = overlay {
                write_pgm_file(&path, &stages.overlay()).runtime_err()?;
            }
            emit(&out, &pretty(&stages.defects))
        }
        Command::Thermal { config, duration, dt, setpoint, out } => {
            let cfg = scenario_config(&config)?;
            let hyst = HysteresisConfig { setpoint_c: setpoint.unwrap_or(cfg.setpoint_c), half_band_c: cfg.half_band_c };
            let sensor = fabloop::thermal::ThermistorSensor { divider: cfg.divider_config(), model: cfg.steinhart() };
            let dt = dt.unwrap_or(cfg.cycle.dt_s);
            if !(duration >= 0.0 && duration.is_finite()) {
                return Err(Failure::Config(anyhow!("--duration must be finite and ≥ 0")));
            }
            let trace = simulate_thermal_with(&hyst, &cfg.plant.plant(), duration, dt, |t| sensor.read(t)).config_err()?;
            emit(&out, &trace_to_csv(&trace))
        }
        Command::Simulate { config, dump_dir, serve, hold, out } => {
            let cfg = scenario_config(&config)?;
            let scenario = cfg.scenario().config_err()?;
            let telemetry = serve.map(|_| Telemetry::new(StatusSnapshot::idle(cfg.setpoint_c, cfg.plant.ambient_c)));
            let server = match (serve, &telemetry) {
                (Some(port), Some(t)) => {
                    let s = TelemetryServer::start(&format!("127.0.0.1:{port}"), t.clone()).runtime_err()?;
                    eprintln!("telemetry on http://{}", s.local_addr());
                    Some(s)
                }
                _ => None,
            };
            let opts = CycleOptions { keep_images: dump_dir.is_some(), telemetry };
            let outcome = run_layer_cycle_with(&scenario, &opts).runtime_err()?;
            if let Some(dir) = dump_dir {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).runtime_err()?;
                for img in &outcome.images {
                    write_pgm_file(&dir.join(format!("{}.pgm", img.name)), &img.image).runtime_err()?;
                }
            }
            emit(&out, &pretty(&outcome.report))?;
            if let Some(s) = server {
                if hold > 0.0 {
                    std::thread::sleep(Duration::from_secs_f64(hold));
                }
                s.shutdown();
            }
            Ok(())
        }
    }
}

fn read_homography(path: &Path) -> CliResult<Homography> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct File {
        homography: [[f64; 3]; 3],
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).config_err()?;
    let f: File = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).config_err()?;
    Homography::from_rows(f.homography).config_err()
}
