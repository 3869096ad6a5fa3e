//! Scenario configuration: JSON with unit-suffixed keys, documented defaults,
//! strict unknown-key rejection, and validation errors that name the field.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{Connectivity, DetectConfig, Polarity};
use crate::geometry::{
    estimate_homography, square_corners, BedMapping, BedPoint, CalibrationQuad, Homography, PixelPoint,
};
use crate::kinematics::{ArmGeometry, Elbow};
use crate::simulation::{
    ArmRegistration, CameraModel, DefectSpec, Rect, RepairPlanner, Scenario, VirtualBed,
};
use crate::thermal::{
    resistance_to_temperature, DividerConfig, ExtrusionConfig, HysteresisConfig, SteinhartHart,
    ThermalPlant, ThermistorSensor,
};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "FABLOOP_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("unknown key `{field}`")]
    UnknownKey { field: String },
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::Validation { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    pub d1_mm: f64,
    pub a2_mm: f64,
    pub a3_mm: f64,
    pub d6_mm: f64,
    pub elbow: Elbow,
    /// Cumulative tool pitch used for repairs; 0 is nozzle-down.
    pub pitch_rad: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self { d1_mm: 126.0, a2_mm: 300.0, a3_mm: 300.0, d6_mm: 90.0, elbow: Elbow::Up, pitch_rad: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub offset_x_mm: f64,
    pub offset_y_mm: f64,
    pub offset_z_mm: f64,
    pub yaw_rad: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let r = ArmRegistration::default();
        Self { offset_x_mm: r.offset_x_mm, offset_y_mm: r.offset_y_mm, offset_z_mm: r.offset_z_mm, yaw_rad: r.yaw_rad }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub mm_per_pixel: f64,
    pub roi_origin_px: [f64; 2],
    pub roi_size_px: usize,
    pub frame_size_px: usize,
}

impl Default for MappingConfig {
    fn default() -> Self {
        let m = BedMapping::default();
        Self {
            mm_per_pixel: m.mm_per_pixel,
            roi_origin_px: m.roi_origin.into(),
            roi_size_px: m.roi_size,
            frame_size_px: m.frame_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub raw_width_px: usize,
    pub raw_height_px: usize,
    /// Raw-image positions of the rectified frame corners: top-left, top-right,
    /// bottom-right, bottom-left. Used both to synthesize the distortion and to calibrate it away.
    pub corners_px: [[f64; 2]; 4],
    pub noise_sigma: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            raw_width_px: 640,
            raw_height_px: 480,
            corners_px: [[118.0, 42.0], [522.0, 58.0], [548.0, 452.0], [96.0, 438.0]],
            noise_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub polarity: Polarity,
    pub min_area_px: usize,
    pub connectivity: Connectivity,
    pub reject_border_regions: bool,
    pub min_contrast: u8,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let d = DetectConfig::default();
        Self {
            polarity: d.polarity,
            min_area_px: d.min_area_px,
            connectivity: d.connectivity,
            reject_border_regions: d.reject_border_regions,
            min_contrast: d.min_contrast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BedConfig {
    pub span_x_mm: f64,
    pub span_y_mm: f64,
    pub resolution_mm: f64,
    pub layer_z_mm: f64,
}

impl Default for BedConfig {
    fn default() -> Self {
        Self { span_x_mm: 201.0, span_y_mm: 201.0, resolution_mm: 0.1, layer_z_mm: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrintConfig {
    pub origin_x_mm: f64,
    pub origin_y_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
}

impl Default for PrintConfig {
    fn default() -> Self {
        Self { origin_x_mm: 50.5, origin_y_mm: 50.5, width_mm: 100.0, height_mm: 100.0 }
    }
}

impl PrintConfig {
    pub fn rect(&self) -> Rect {
        Rect { x: self.origin_x_mm, y: self.origin_y_mm, width: self.width_mm, height: self.height_mm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectsConfig {
    pub diameter_mm: f64,
    pub centers_mm: Vec<[f64; 2]>,
}

impl Default for DefectsConfig {
    /// 7×7 grid of 2 mm voids across the default print.
    fn default() -> Self {
        let grid = DefectSpec::grid(&PrintConfig::default().rect(), 7, 2.0);
        Self { diameter_mm: grid.diameter, centers_mm: grid.centers.into_iter().map(Into::into).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub heat_capacity_j_per_k: f64,
    pub loss_w_per_k: f64,
    pub power_w: f64,
    pub ambient_c: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = ThermalPlant::default();
        Self {
            heat_capacity_j_per_k: p.heat_capacity_j_per_k,
            loss_w_per_k: p.loss_w_per_k,
            power_w: p.power_w,
            ambient_c: p.ambient_c,
        }
    }
}

impl PlantConfig {
    pub fn plant(&self) -> ThermalPlant {
        ThermalPlant {
            heat_capacity_j_per_k: self.heat_capacity_j_per_k,
            loss_w_per_k: self.loss_w_per_k,
            power_w: self.power_w,
            ambient_c: self.ambient_c,
            temperature_c: self.ambient_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DividerSection {
    pub v_supply: f64,
    pub r_fixed_ohm: f64,
    pub adc_max: u32,
}

impl Default for DividerSection {
    fn default() -> Self {
        let d = DividerConfig::default();
        Self { v_supply: d.v_supply, r_fixed_ohm: d.r_fixed_ohm, adc_max: d.adc_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteinhartHartSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for SteinhartHartSection {
    fn default() -> Self {
        let m = SteinhartHart::semitec_104gt2();
        Self { a: m.a, b: m.b, c: m.c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrusionSection {
    pub steps_per_mm: f64,
    pub filament_diameter_mm: f64,
    pub road_width_mm: f64,
    pub layer_height_mm: f64,
}

impl Default for ExtrusionSection {
    fn default() -> Self {
        let e = ExtrusionConfig::default();
        Self {
            steps_per_mm: e.steps_per_mm,
            filament_diameter_mm: e.filament_diameter_mm,
            road_width_mm: e.road_width_mm,
            layer_height_mm: e.layer_height_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub dt_s: f64,
    pub heat_timeout_s: f64,
    pub repair_speed_mm_s: f64,
    pub verify_each_repair: bool,
    pub throttle_ms: u64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            dt_s: 0.01,
            heat_timeout_s: 600.0,
            repair_speed_mm_s: 10.0,
            verify_each_repair: false,
            throttle_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub layer: u32,
    pub arm: ArmConfig,
    pub registration: RegistrationConfig,
    pub mapping: MappingConfig,
    pub camera: CameraConfig,
    pub detection: DetectionConfig,
    pub bed: BedConfig,
    pub print: PrintConfig,
    pub defects: DefectsConfig,
    pub setpoint_c: f64,
    pub half_band_c: f64,
    pub plant: PlantConfig,
    pub divider: DividerSection,
    pub steinhart_hart: SteinhartHartSection,
    pub extrusion: ExtrusionSection,
    pub cycle: CycleConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let h = HysteresisConfig::default();
        Self {
            seed: 7,
            layer: 0,
            arm: ArmConfig::default(),
            registration: RegistrationConfig::default(),
            mapping: MappingConfig::default(),
            camera: CameraConfig::default(),
            detection: DetectionConfig::default(),
            bed: BedConfig::default(),
            print: PrintConfig::default(),
            defects: DefectsConfig::default(),
            setpoint_c: h.setpoint_c,
            half_band_c: h.half_band_c,
            plant: PlantConfig::default(),
            divider: DividerSection::default(),
            steinhart_hart: SteinhartHartSection::default(),
            extrusion: ExtrusionSection::default(),
            cycle: CycleConfig::default(),
        }
    }
}

const SECTIONS: [&str; 13] = [
    "arm", "registration", "mapping", "camera", "detection", "bed", "print", "defects", "plant", "divider",
    "steinhart_hart", "extrusion", "cycle",
];

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let Some(top) = value.as_object() else {
        return Err(ConfigError::Parse("top level must be a JSON object".into()));
    };
    // Serde would otherwise accept a positional array for a section.
    for (key, v) in top {
        if SECTIONS.contains(&key.as_str()) && !v.is_object() {
            return Err(ConfigError::invalid(key, "expected a JSON object"));
        }
    }
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if inner.to_string().starts_with("unknown field") {
            ConfigError::UnknownKey { field }
        } else {
            ConfigError::Validation { field, reason: inner.to_string() }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies `FABLOOP_SEED` when set.
pub fn apply_env_overrides(cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| ConfigError::invalid(SEED_ENV, format!("expected an unsigned integer, got {v:?}")))?;
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must be finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let a = &self.arm;
        positive("arm.d1_mm", a.d1_mm)?;
        positive("arm.a2_mm", a.a2_mm)?;
        positive("arm.a3_mm", a.a3_mm)?;
        positive("arm.d6_mm", a.d6_mm)?;
        finite("arm.pitch_rad", a.pitch_rad)?;

        let r = &self.registration;
        finite("registration.offset_x_mm", r.offset_x_mm)?;
        finite("registration.offset_y_mm", r.offset_y_mm)?;
        finite("registration.offset_z_mm", r.offset_z_mm)?;
        finite("registration.yaw_rad", r.yaw_rad)?;

        let m = &self.mapping;
        positive("mapping.mm_per_pixel", m.mm_per_pixel)?;
        if m.frame_size_px == 0 {
            return Err(ConfigError::invalid("mapping.frame_size_px", "must be ≥ 1"));
        }
        if m.roi_size_px == 0 || m.roi_size_px > m.frame_size_px {
            return Err(ConfigError::invalid("mapping.roi_size_px", "must be in 1..=frame_size_px"));
        }
        self.bed_mapping()
            .validate()
            .map_err(|e| ConfigError::invalid("mapping.roi_origin_px", e.to_string()))?;

        let c = &self.camera;
        if c.raw_width_px == 0 {
            return Err(ConfigError::invalid("camera.raw_width_px", "must be ≥ 1"));
        }
        if c.raw_height_px == 0 {
            return Err(ConfigError::invalid("camera.raw_height_px", "must be ≥ 1"));
        }
        if !(c.noise_sigma >= 0.0 && c.noise_sigma.is_finite()) {
            return Err(ConfigError::invalid("camera.noise_sigma", "must be finite and ≥ 0"));
        }
        self.calibration_quad()
            .map_err(|e| ConfigError::invalid("camera.corners_px", e.to_string()))?;

        if self.detection.min_area_px < 1 {
            return Err(ConfigError::invalid("detection.min_area_px", "must be ≥ 1"));
        }

        let b = &self.bed;
        positive("bed.resolution_mm", b.resolution_mm)?;
        positive("bed.span_x_mm", b.span_x_mm)?;
        positive("bed.span_y_mm", b.span_y_mm)?;
        if !(b.layer_z_mm >= 0.0 && b.layer_z_mm.is_finite()) {
            return Err(ConfigError::invalid("bed.layer_z_mm", "must be finite and ≥ 0"));
        }
        VirtualBed::new(b.span_x_mm, b.span_y_mm, b.resolution_mm, b.layer_z_mm)
            .map_err(|e| ConfigError::invalid("bed", e.to_string()))?;

        let p = &self.print;
        positive("print.width_mm", p.width_mm)?;
        positive("print.height_mm", p.height_mm)?;
        if !(p.origin_x_mm >= 0.0 && p.origin_x_mm + p.width_mm <= b.span_x_mm + 1e-9) {
            return Err(ConfigError::invalid("print.origin_x_mm", "print region exceeds the bed span"));
        }
        if !(p.origin_y_mm >= 0.0 && p.origin_y_mm + p.height_mm <= b.span_y_mm + 1e-9) {
            return Err(ConfigError::invalid("print.origin_y_mm", "print region exceeds the bed span"));
        }

        positive("defects.diameter_mm", self.defects.diameter_mm)?;
        self.defect_spec()
            .validate(&p.rect())
            .map_err(|e| ConfigError::invalid("defects.centers_mm", e.to_string()))?;

        finite("setpoint_c", self.setpoint_c)?;
        positive("half_band_c", self.half_band_c)?;

        let pl = &self.plant;
        positive("plant.heat_capacity_j_per_k", pl.heat_capacity_j_per_k)?;
        positive("plant.loss_w_per_k", pl.loss_w_per_k)?;
        positive("plant.power_w", pl.power_w)?;
        finite("plant.ambient_c", pl.ambient_c)?;

        positive("divider.v_supply", self.divider.v_supply)?;
        positive("divider.r_fixed_ohm", self.divider.r_fixed_ohm)?;
        if self.divider.adc_max < 1 {
            return Err(ConfigError::invalid("divider.adc_max", "must be ≥ 1"));
        }

        let sh = self.steinhart();
        for (field, v) in [("steinhart_hart.a", sh.a), ("steinhart_hart.b", sh.b), ("steinhart_hart.c", sh.c)] {
            finite(field, v)?;
        }
        if !(sh.b > 0.0 && sh.c >= 0.0) {
            return Err(ConfigError::invalid("steinhart_hart", "NTC model needs b > 0 and c ≥ 0"));
        }
        for ohms in [10.0, 1e2, 1e3, 1e4, 1e5, 1e6] {
            if resistance_to_temperature(ohms, &sh).is_err() {
                return Err(ConfigError::invalid(
                    "steinhart_hart",
                    format!("temperature is non-physical at {ohms} Ω"),
                ));
            }
        }

        let e = &self.extrusion;
        positive("extrusion.steps_per_mm", e.steps_per_mm)?;
        positive("extrusion.filament_diameter_mm", e.filament_diameter_mm)?;
        positive("extrusion.road_width_mm", e.road_width_mm)?;
        positive("extrusion.layer_height_mm", e.layer_height_mm)?;

        let cy = &self.cycle;
        positive("cycle.dt_s", cy.dt_s)?;
        if cy.dt_s * pl.loss_w_per_k / pl.heat_capacity_j_per_k >= 1.0 {
            return Err(ConfigError::invalid("cycle.dt_s", "explicit Euler step is unstable for this plant"));
        }
        positive("cycle.heat_timeout_s", cy.heat_timeout_s)?;
        positive("cycle.repair_speed_mm_s", cy.repair_speed_mm_s)?;
        Ok(())
    }

    pub fn geometry(&self) -> ArmGeometry {
        ArmGeometry { d1: self.arm.d1_mm, a2: self.arm.a2_mm, a3: self.arm.a3_mm, d6: self.arm.d6_mm }
    }

    pub fn registration(&self) -> ArmRegistration {
        let r = &self.registration;
        ArmRegistration {
            offset_x_mm: r.offset_x_mm,
            offset_y_mm: r.offset_y_mm,
            offset_z_mm: r.offset_z_mm,
            yaw_rad: r.yaw_rad,
        }
    }

    pub fn bed_mapping(&self) -> BedMapping {
        BedMapping {
            mm_per_pixel: self.mapping.mm_per_pixel,
            roi_origin: self.mapping.roi_origin_px.into(),
            roi_size: self.mapping.roi_size_px,
            frame_size: self.mapping.frame_size_px,
        }
    }

    /// Raw corners → rectified frame corners.
    pub fn calibration_quad(&self) -> Result<CalibrationQuad, crate::geometry::GeometryError> {
        let raw: [PixelPoint; 4] = self.camera.corners_px.map(PixelPoint::from);
        CalibrationQuad::new(raw, square_corners(self.mapping.frame_size_px))
    }

    pub fn detect_config(&self) -> DetectConfig {
        let d = &self.detection;
        DetectConfig {
            polarity: d.polarity,
            min_area_px: d.min_area_px,
            connectivity: d.connectivity,
            reject_border_regions: d.reject_border_regions,
            min_contrast: d.min_contrast,
        }
    }

    pub fn defect_spec(&self) -> DefectSpec {
        DefectSpec {
            centers: self.defects.centers_mm.iter().map(|&c| BedPoint::from(c)).collect(),
            diameter: self.defects.diameter_mm,
        }
    }

    pub fn hysteresis(&self) -> HysteresisConfig {
        HysteresisConfig { setpoint_c: self.setpoint_c, half_band_c: self.half_band_c }
    }

    pub fn divider_config(&self) -> DividerConfig {
        DividerConfig {
            v_supply: self.divider.v_supply,
            r_fixed_ohm: self.divider.r_fixed_ohm,
            adc_max: self.divider.adc_max,
        }
    }

    pub fn steinhart(&self) -> SteinhartHart {
        SteinhartHart { a: self.steinhart_hart.a, b: self.steinhart_hart.b, c: self.steinhart_hart.c }
    }

    pub fn extrusion_config(&self) -> ExtrusionConfig {
        let e = &self.extrusion;
        ExtrusionConfig {
            steps_per_mm: e.steps_per_mm,
            filament_diameter_mm: e.filament_diameter_mm,
            road_width_mm: e.road_width_mm,
            layer_height_mm: e.layer_height_mm,
        }
    }

    pub fn calibration(&self) -> Result<Homography, ConfigError> {
        let quad = self
            .calibration_quad()
            .map_err(|e| ConfigError::invalid("camera.corners_px", e.to_string()))?;
        estimate_homography(&quad).map_err(|e| ConfigError::invalid("camera.corners_px", e.to_string()))
    }

    pub fn camera_model(&self) -> Result<CameraModel, ConfigError> {
        let warp = self
            .calibration()?
            .inverse()
            .map_err(|e| ConfigError::invalid("camera.corners_px", e.to_string()))?;
        Ok(CameraModel {
            warp,
            raw_width: self.camera.raw_width_px,
            raw_height: self.camera.raw_height_px,
            noise_sigma: self.camera.noise_sigma,
            seed: self.seed,
        })
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let b = &self.bed;
        let bed = VirtualBed::new(b.span_x_mm, b.span_y_mm, b.resolution_mm, b.layer_z_mm)
            .map_err(|e| ConfigError::invalid("bed", e.to_string()))?;
        Ok(Scenario {
            layer: self.layer,
            bed,
            print_region: self.print.rect(),
            defects: self.defect_spec(),
            mapping: self.bed_mapping(),
            camera: self.camera_model()?,
            calibration: self.calibration()?,
            detect: self.detect_config(),
            planner: RepairPlanner {
                geometry: self.geometry(),
                registration: self.registration(),
                elbow: self.arm.elbow,
                pitch: self.arm.pitch_rad,
                extrusion: self.extrusion_config(),
                mm_per_pixel: self.mapping.mm_per_pixel,
                repair_speed_mm_s: self.cycle.repair_speed_mm_s,
            },
            hysteresis: self.hysteresis(),
            plant: self.plant.plant(),
            sensor: ThermistorSensor { divider: self.divider_config(), model: self.steinhart() },
            dt_s: self.cycle.dt_s,
            heat_timeout_s: self.cycle.heat_timeout_s,
            verify_each_repair: self.cycle.verify_each_repair,
            throttle: Duration::from_millis(self.cycle.throttle_ms),
        })
    }
}
