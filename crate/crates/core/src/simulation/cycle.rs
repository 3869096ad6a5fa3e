use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use super::bed::{deposit_layer, BedError, DefectSpec, Rect, VirtualBed};
use super::camera::{capture, CameraModel};
use super::repair::{execute_repair, plan_repair, RepairPlanner};
use crate::detection::{detect_stages, DetectConfig, DetectError, DetectionStages};
use crate::geometry::{BedMapping, BedPoint, GeometryError, Homography};
use crate::image::GrayImage;
use crate::telemetry::{Phase, StatusSnapshot, Telemetry};
use crate::thermal::{
    control_step, extrusion_rate, plant_step, ControllerState, HysteresisConfig, ThermalError,
    ThermalPlant, ThermistorSensor,
};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("hotend did not reach its band within {waited_s} s of simulated time")]
    ThermalTimeout { waited_s: f64 },
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Bed(#[from] BedError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Hotend plant, bang-bang controller and thermistor readout stepped together.
#[derive(Debug, Clone)]
pub struct Hotend {
    pub cfg: HysteresisConfig,
    pub plant: ThermalPlant,
    pub controller: ControllerState,
    pub sensor: ThermistorSensor,
    pub dt_s: f64,
    pub time_s: f64,
    pub measured_c: f64,
}

impl Hotend {
    pub fn new(
        cfg: HysteresisConfig,
        plant: ThermalPlant,
        sensor: ThermistorSensor,
        dt_s: f64,
    ) -> Result<Self, ThermalError> {
        cfg.validate()?;
        plant.validate()?;
        let measured_c = sensor.read(plant.temperature_c)?;
        Ok(Self { cfg, plant, controller: ControllerState::default(), sensor, dt_s, time_s: 0.0, measured_c })
    }

    pub fn step(&mut self) -> Result<(), ThermalError> {
        self.controller = control_step(self.measured_c, &self.cfg, &self.controller);
        self.plant = plant_step(&self.plant, self.controller.heater_on, self.dt_s)?;
        self.time_s += self.dt_s;
        self.measured_c = self.sensor.read(self.plant.temperature_c)?;
        Ok(())
    }

    /// Regulates for at least `duration_s` of simulated time.
    pub fn advance(&mut self, duration_s: f64) -> Result<(), ThermalError> {
        let steps = (duration_s / self.dt_s).ceil().max(0.0) as u64;
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn in_band(&self) -> bool {
        self.measured_c >= self.cfg.lower() && self.measured_c <= self.cfg.upper()
    }

    pub fn heat_until_ready(&mut self, timeout_s: f64) -> Result<f64, SimulationError> {
        let start = self.time_s;
        while !self.in_band() {
            if self.time_s - start >= timeout_s {
                return Err(SimulationError::ThermalTimeout { waited_s: self.time_s - start });
            }
            self.step()?;
        }
        Ok(self.time_s - start)
    }
}

/// A fully built closed-loop layer scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub layer: u32,
    pub bed: VirtualBed,
    pub print_region: Rect,
    pub defects: DefectSpec,
    pub mapping: BedMapping,
    pub camera: CameraModel,
    /// Raw sensor pixels → rectified frame.
    pub calibration: Homography,
    pub detect: DetectConfig,
    pub planner: RepairPlanner,
    pub hysteresis: HysteresisConfig,
    pub plant: ThermalPlant,
    pub sensor: ThermistorSensor,
    pub dt_s: f64,
    pub heat_timeout_s: f64,
    pub verify_each_repair: bool,
    /// Wall-clock pause after each repair, for live telemetry.
    pub throttle: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct CycleOptions {
    pub keep_images: bool,
    pub telemetry: Option<Telemetry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairRecord {
    pub centroid_mm: BedPoint,
    pub area_px: usize,
    pub joints_rad: [f64; 5],
    pub fill_volume_mm3: f64,
    pub dwell_s: f64,
    /// Per-repair re-inspection outcome when enabled.
    pub verified: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub layer: u32,
    pub injected: usize,
    pub detected: usize,
    pub repaired: usize,
    pub unreachable: usize,
    pub residual_after_verify: usize,
    /// Injected voids no detection was nearest to.
    pub missed: usize,
    /// Distance from each detection (in repair order) to the nearest injected center.
    pub centroid_errors_mm: Vec<f64>,
    pub repairs: Vec<RepairRecord>,
    pub cells_filled: usize,
    pub hotend_ready_s: f64,
    pub sim_time_s: f64,
    pub heater_toggles: u64,
}

#[derive(Debug, Clone)]
pub struct PhaseImages {
    pub name: String,
    pub image: GrayImage,
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub report: CycleReport,
    pub images: Vec<PhaseImages>,
    pub final_bed: VirtualBed,
}

pub fn run_layer_cycle(scenario: &Scenario) -> Result<CycleReport, SimulationError> {
    run_layer_cycle_with(scenario, &CycleOptions::default()).map(|o| o.report)
}

struct Publisher<'a> {
    telemetry: Option<&'a Telemetry>,
    layer: u32,
    setpoint_c: f64,
}

impl Publisher<'_> {
    fn publish(&self, hotend: &Hotend, phase: Phase, defects_open: usize, extruder_steps_per_s: f64) {
        if let Some(t) = self.telemetry {
            t.publish(StatusSnapshot {
                time_s: hotend.time_s,
                temp_c: hotend.measured_c,
                heater_on: hotend.controller.heater_on,
                setpoint_c: self.setpoint_c,
                extruder_steps_per_s,
                phase,
                layer: self.layer,
                defects_open,
            });
        }
    }
}

fn keep_stages(images: &mut Vec<PhaseImages>, prefix: &str, raw: &GrayImage, stages: &DetectionStages) {
    for (name, image) in [
        ("raw", raw.clone()),
        ("rectified", stages.rectified.clone()),
        ("mask", stages.mask.to_gray()),
        ("overlay", stages.overlay()),
    ] {
        images.push(PhaseImages { name: format!("{prefix}_{name}"), image });
    }
}

/// Deposit → heat → capture → detect → repair (column-major) → recapture → report.
pub fn run_layer_cycle_with(
    s: &Scenario,
    opts: &CycleOptions,
) -> Result<CycleOutcome, SimulationError> {
    let publisher = Publisher {
        telemetry: opts.telemetry.as_ref(),
        layer: s.layer,
        setpoint_c: s.hysteresis.setpoint_c,
    };
    let mut images = Vec::new();
    let mut hotend = Hotend::new(s.hysteresis, s.plant, s.sensor, s.dt_s)?;
    let mut frame = 0u64;

    publisher.publish(&hotend, Phase::Printing, 0, 0.0);
    let mut bed = deposit_layer(&s.bed, &s.print_region, &s.defects)?;
    let hotend_ready_s = hotend.heat_until_ready(s.heat_timeout_s)?;

    publisher.publish(&hotend, Phase::Capturing, 0, 0.0);
    let raw = capture(&bed, &s.camera, &s.mapping, frame)?;
    frame += 1;

    publisher.publish(&hotend, Phase::Detecting, 0, 0.0);
    let stages = detect_stages(&raw, &s.calibration, &s.mapping, &s.detect)?;
    if opts.keep_images {
        keep_stages(&mut images, "capture", &raw, &stages);
    }
    let defects = stages.defects;
    let mut open = defects.len();
    publisher.publish(&hotend, Phase::Repairing, open, 0.0);

    let repair_rate = extrusion_rate(s.planner.repair_speed_mm_s, &s.planner.extrusion);
    let mut repairs = Vec::with_capacity(defects.len());
    let mut unreachable = 0;
    let mut cells_filled = 0;
    for d in &defects {
        let action = match plan_repair(d, &bed, &s.planner) {
            Ok(a) => a,
            Err(_) => {
                unreachable += 1;
                continue;
            }
        };
        publisher.publish(&hotend, Phase::Repairing, open, repair_rate);
        let (next, changed) = execute_repair(&bed, &action);
        bed = next;
        cells_filled += changed;
        hotend.advance(action.dwell_s)?;

        let verified = if s.verify_each_repair {
            let check = capture(&bed, &s.camera, &s.mapping, frame)?;
            frame += 1;
            let found = detect_stages(&check, &s.calibration, &s.mapping, &s.detect)?.defects;
            let radius = d.equivalent_diameter_mm / 2.0 + s.mapping.mm_per_pixel;
            Some(!found.iter().any(|f| f.centroid_mm.distance(&d.centroid_mm) <= radius))
        } else {
            None
        };

        open -= 1;
        publisher.publish(&hotend, Phase::Repairing, open, 0.0);
        repairs.push(RepairRecord {
            centroid_mm: d.centroid_mm,
            area_px: d.area_px,
            joints_rad: action.joints.as_array(),
            fill_volume_mm3: action.fill_volume_mm3,
            dwell_s: action.dwell_s,
            verified,
        });
        if !s.throttle.is_zero() {
            std::thread::sleep(s.throttle);
        }
    }

    publisher.publish(&hotend, Phase::Verifying, open, 0.0);
    let raw_after = capture(&bed, &s.camera, &s.mapping, frame)?;
    let verify = detect_stages(&raw_after, &s.calibration, &s.mapping, &s.detect)?;
    if opts.keep_images {
        keep_stages(&mut images, "verify", &raw_after, &verify);
    }
    let residual = verify.defects.len();

    let centroid_errors_mm: Vec<f64> = defects
        .iter()
        .map(|d| {
            s.defects
                .centers
                .iter()
                .map(|c| c.distance(&d.centroid_mm))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut claimed = vec![false; s.defects.centers.len()];
    for d in &defects {
        let nearest = s
            .defects
            .centers
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.distance(&d.centroid_mm).total_cmp(&b.1.distance(&d.centroid_mm)));
        if let Some((i, _)) = nearest {
            claimed[i] = true;
        }
    }

    let report = CycleReport {
        layer: s.layer,
        injected: s.defects.centers.len(),
        detected: defects.len(),
        repaired: repairs.len(),
        unreachable,
        residual_after_verify: residual,
        missed: claimed.iter().filter(|c| !**c).count(),
        centroid_errors_mm,
        repairs,
        cells_filled,
        hotend_ready_s,
        sim_time_s: hotend.time_s,
        heater_toggles: hotend.controller.toggle_count,
    };
    let done = Publisher { layer: s.layer + 1, ..publisher };
    done.publish(&hotend, Phase::Idle, residual, 0.0);
    Ok(CycleOutcome { report, images, final_bed: bed })
}
