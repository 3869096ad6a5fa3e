//! Simulated hotend: thermistor divider readout, Steinhart–Hart conversion,
//! bang-bang heater control with hysteresis, a lumped first-order thermal
//! plant, and extrusion rate matched to robot speed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KELVIN_OFFSET: f64 = 273.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThermalError {
    #[error("ADC reads 0 counts: thermistor open circuit")]
    OpenCircuit,
    #[error("ADC reads full scale: thermistor short circuit (0 Ω)")]
    ShortCircuit,
    #[error("ADC count {counts} exceeds full scale {adc_max}")]
    CountOutOfRange { counts: u32, adc_max: u32 },
    #[error("Steinhart–Hart model is non-physical at {ohms} Ω")]
    NonPhysical { ohms: f64 },
    #[error("calibration points are singular (duplicate or near-duplicate resistances)")]
    SingularSystem,
    #[error("unstable plant step: dt·loss/heat_capacity = {ratio} ≥ 1")]
    UnstableStep { ratio: f64 },
    #[error("invalid thermal config: {0}")]
    InvalidConfig(String),
}

/// `1/T = A + B·ln R + C·(ln R)³`, `T` in kelvin, `R` in ohms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinhartHart {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SteinhartHart {
    /// Fitted through [`semitec_104gt2_points`].
    pub fn semitec_104gt2() -> Self {
        fit_steinhart_hart(semitec_104gt2_points()).expect("table points are distinct")
    }

    fn inv_kelvin(&self, ohms: f64) -> f64 {
        let x = ohms.ln();
        self.a + self.b * x + self.c * x * x * x
    }

    /// Resistance at which the model reads `celsius`, by Newton iteration on `ln R`.
    /// Requires a strictly increasing model in `ln R` (`B > 0`, `C ≥ 0`).
    pub fn resistance_at(&self, celsius: f64) -> Result<f64, ThermalError> {
        let target = 1.0 / (celsius + KELVIN_OFFSET);
        if !(self.b > 0.0 && self.c >= 0.0) || !target.is_finite() {
            return Err(ThermalError::InvalidConfig(
                "inverse Steinhart–Hart needs B > 0 and C ≥ 0".into(),
            ));
        }
        let mut x = (target - self.a) / self.b;
        for _ in 0..100 {
            let f = self.a + self.b * x + self.c * x * x * x - target;
            let df = self.b + 3.0 * self.c * x * x;
            let step = f / df;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        Ok(x.exp())
    }
}

/// Three (ohms, °C) points for the Semitec 104GT-2: the 100 kΩ nominal at
/// 25 °C, and 100 °C / 200 °C resistances recovered from the common 10-bit,
/// 4.7 kΩ pull-up firmware lookup table (ADC 554 and 87).
pub fn semitec_104gt2_points() -> [(f64, f64); 3] {
    [(100_000.0, 25.0), (5_540.0, 100.0), (436.0, 200.0)]
}

pub fn resistance_to_temperature(ohms: f64, c: &SteinhartHart) -> Result<f64, ThermalError> {
    if !(ohms > 0.0 && ohms.is_finite()) {
        return Err(ThermalError::NonPhysical { ohms });
    }
    let denom = c.inv_kelvin(ohms);
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(ThermalError::NonPhysical { ohms });
    }
    Ok(1.0 / denom - KELVIN_OFFSET)
}

/// Solves the 3×3 system for `(A, B, C)` through three (ohms, °C) calibration points.
pub fn fit_steinhart_hart(points: [(f64, f64); 3]) -> Result<SteinhartHart, ThermalError> {
    if points.iter().any(|&(r, t)| !(r > 0.0 && r.is_finite() && t.is_finite())) {
        return Err(ThermalError::InvalidConfig(
            "calibration resistances must be positive and finite".into(),
        ));
    }
    let x = points.map(|(r, _)| r.ln());
    let y = points.map(|(_, t)| 1.0 / (t + KELVIN_OFFSET));
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..3 {
        for j in i + 1..3 {
            if (x[i] - x[j]).abs() <= 1e-9 * scale {
                return Err(ThermalError::SingularSystem);
            }
        }
    }
    // Divided differences: the cubic term drops to a quadratic in the
    // differences, so C follows from the second divided difference.
    let g = |i: usize, j: usize| (y[i] - y[j]) / (x[i] - x[j]);
    let h = |i: usize, j: usize| x[i] * x[i] + x[i] * x[j] + x[j] * x[j];
    let (g01, g02) = (g(0, 1), g(0, 2));
    let (h01, h02) = (h(0, 1), h(0, 2));
    let c = (g01 - g02) / (h01 - h02);
    let b = g01 - c * h01;
    let a = y[0] - b * x[0] - c * x[0].powi(3);
    let sh = SteinhartHart { a, b, c };
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(ThermalError::SingularSystem);
    }
    Ok(sh)
}

/// Thermistor on the high side, fixed resistor to ground, sense node into the ADC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DividerConfig {
    pub v_supply: f64,
    pub r_fixed_ohm: f64,
    pub adc_max: u32,
}

impl Default for DividerConfig {
    fn default() -> Self {
        Self { v_supply: 3.3, r_fixed_ohm: 4700.0, adc_max: 4095 }
    }
}

impl DividerConfig {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if !(self.v_supply > 0.0 && self.v_supply.is_finite()) {
            return Err(ThermalError::InvalidConfig("v_supply must be > 0".into()));
        }
        if !(self.r_fixed_ohm > 0.0 && self.r_fixed_ohm.is_finite()) {
            return Err(ThermalError::InvalidConfig("r_fixed_ohm must be > 0".into()));
        }
        if self.adc_max < 1 {
            return Err(ThermalError::InvalidConfig("adc_max must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Sense-node voltage for a thermistor resistance.
    pub fn sense_voltage(&self, ohms: f64) -> f64 {
        self.v_supply * self.r_fixed_ohm / (ohms + self.r_fixed_ohm)
    }

    /// Thermistor resistance for a sense-node voltage.
    pub fn voltage_to_resistance(&self, volts: f64) -> f64 {
        self.r_fixed_ohm * (self.v_supply / volts - 1.0)
    }

    /// Ideal (unquantized) count the ADC would report for a thermistor resistance.
    pub fn counts_for(&self, ohms: f64) -> f64 {
        self.adc_max as f64 * self.sense_voltage(ohms) / self.v_supply
    }
}

pub fn adc_to_resistance(counts: u32, d: &DividerConfig) -> Result<f64, ThermalError> {
    if counts > d.adc_max {
        return Err(ThermalError::CountOutOfRange { counts, adc_max: d.adc_max });
    }
    if counts == 0 {
        return Err(ThermalError::OpenCircuit);
    }
    if counts == d.adc_max {
        return Err(ThermalError::ShortCircuit);
    }
    let volts = d.v_supply * counts as f64 / d.adc_max as f64;
    Ok(d.voltage_to_resistance(volts))
}

/// Temperature measured through the full divider + ADC + Steinhart–Hart path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermistorSensor {
    pub divider: DividerConfig,
    pub model: SteinhartHart,
}

impl ThermistorSensor {
    pub fn adc_counts(&self, celsius: f64) -> Result<u32, ThermalError> {
        let ohms = self.model.resistance_at(celsius)?;
        Ok(self.divider.counts_for(ohms).round().clamp(0.0, self.divider.adc_max as f64) as u32)
    }

    pub fn read(&self, true_celsius: f64) -> Result<f64, ThermalError> {
        let counts = self.adc_counts(true_celsius)?;
        resistance_to_temperature(adc_to_resistance(counts, &self.divider)?, &self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HysteresisConfig {
    pub setpoint_c: f64,
    pub half_band_c: f64,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        Self { setpoint_c: 200.0, half_band_c: 2.0 }
    }
}

impl HysteresisConfig {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if !self.setpoint_c.is_finite() {
            return Err(ThermalError::InvalidConfig("setpoint must be finite".into()));
        }
        if !(self.half_band_c > 0.0 && self.half_band_c.is_finite()) {
            return Err(ThermalError::InvalidConfig("half_band must be > 0".into()));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.setpoint_c - self.half_band_c
    }

    pub fn upper(&self) -> f64 {
        self.setpoint_c + self.half_band_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub heater_on: bool,
    pub last_temp: f64,
    pub toggle_count: u64,
}

/// Relay rule: on at or below the lower bound, off at or above the upper bound, else hold.
pub fn control_step(temp: f64, cfg: &HysteresisConfig, s: &ControllerState) -> ControllerState {
    let heater_on = if temp <= cfg.lower() {
        true
    } else if temp >= cfg.upper() {
        false
    } else {
        s.heater_on
    };
    ControllerState {
        heater_on,
        last_temp: temp,
        toggle_count: s.toggle_count + u64::from(heater_on != s.heater_on),
    }
}

/// Lumped hotend: `C·dT/dt = P·[on] − k·(T − T_ambient)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPlant {
    pub heat_capacity_j_per_k: f64,
    pub loss_w_per_k: f64,
    pub power_w: f64,
    pub ambient_c: f64,
    /// Current hotend temperature; starts at ambient.
    #[serde(skip)]
    pub temperature_c: f64,
}

impl Default for ThermalPlant {
    fn default() -> Self {
        Self {
            heat_capacity_j_per_k: 12.0,
            loss_w_per_k: 0.18,
            power_w: 40.0,
            ambient_c: 25.0,
            temperature_c: 25.0,
        }
    }
}

impl ThermalPlant {
    pub fn at_ambient(mut self) -> Self {
        self.temperature_c = self.ambient_c;
        self
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        for (name, v) in [
            ("heat_capacity_j_per_k", self.heat_capacity_j_per_k),
            ("loss_w_per_k", self.loss_w_per_k),
            ("power_w", self.power_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ThermalError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !self.ambient_c.is_finite() {
            return Err(ThermalError::InvalidConfig("ambient_c must be finite".into()));
        }
        Ok(())
    }

    /// Temperature the plant settles at with the heater held on.
    pub fn steady_state_on(&self) -> f64 {
        self.ambient_c + self.power_w / self.loss_w_per_k
    }

    pub fn time_constant(&self) -> f64 {
        self.heat_capacity_j_per_k / self.loss_w_per_k
    }
}

/// One explicit-Euler step.
pub fn plant_step(p: &ThermalPlant, heater_on: bool, dt: f64) -> Result<ThermalPlant, ThermalError> {
    let ratio = dt * p.loss_w_per_k / p.heat_capacity_j_per_k;
    if !(dt > 0.0) || !(ratio < 1.0) {
        return Err(ThermalError::UnstableStep { ratio });
    }
    let power = if heater_on { p.power_w } else { 0.0 };
    let dtemp = dt * (power - p.loss_w_per_k * (p.temperature_c - p.ambient_c)) / p.heat_capacity_j_per_k;
    Ok(ThermalPlant { temperature_c: p.temperature_c + dtemp, ..*p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_s: f64,
    pub temp_c: f64,
    pub heater_on: bool,
}

/// Closed loop with a perfect sensor. The first sample is the initial state
/// (heater off); each later sample is the plant after one control + plant step.
pub fn simulate_thermal(
    cfg: &HysteresisConfig,
    plant: &ThermalPlant,
    duration_s: f64,
    dt: f64,
) -> Result<Vec<TraceSample>, ThermalError> {
    simulate_thermal_with(cfg, plant, duration_s, dt, Ok)
}

/// Closed loop where the controller sees `measure(true_temperature)`.
pub fn simulate_thermal_with(
    cfg: &HysteresisConfig,
    plant: &ThermalPlant,
    duration_s: f64,
    dt: f64,
    mut measure: impl FnMut(f64) -> Result<f64, ThermalError>,
) -> Result<Vec<TraceSample>, ThermalError> {
    cfg.validate()?;
    plant.validate()?;
    let steps = (duration_s / dt).round() as u64;
    let mut trace = Vec::with_capacity(steps as usize + 1);
    let mut state = ControllerState::default();
    let mut p = *plant;
    trace.push(TraceSample { time_s: 0.0, temp_c: p.temperature_c, heater_on: false });
    for k in 1..=steps {
        state = control_step(measure(p.temperature_c)?, cfg, &state);
        p = plant_step(&p, state.heater_on, dt)?;
        trace.push(TraceSample { time_s: k as f64 * dt, temp_c: p.temperature_c, heater_on: state.heater_on });
    }
    Ok(trace)
}

/// Writes `time_s,temp_c,heater_on` CSV with a header row.
pub fn trace_to_csv(trace: &[TraceSample]) -> String {
    let mut out = String::from("time_s,temp_c,heater_on\n");
    for s in trace {
        out.push_str(&format!("{:.3},{:.6},{}\n", s.time_s, s.temp_c, u8::from(s.heater_on)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrusionConfig {
    pub steps_per_mm: f64,
    pub filament_diameter_mm: f64,
    pub road_width_mm: f64,
    pub layer_height_mm: f64,
}

impl Default for ExtrusionConfig {
    fn default() -> Self {
        Self {
            steps_per_mm: 100.0,
            filament_diameter_mm: 1.75,
            road_width_mm: 0.4,
            layer_height_mm: 0.2,
        }
    }
}

impl ExtrusionConfig {
    pub fn validate(&self) -> Result<(), ThermalError> {
        for (name, v) in [
            ("steps_per_mm", self.steps_per_mm),
            ("filament_diameter_mm", self.filament_diameter_mm),
            ("road_width_mm", self.road_width_mm),
            ("layer_height_mm", self.layer_height_mm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ThermalError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn filament_area_mm2(&self) -> f64 {
        let r = self.filament_diameter_mm / 2.0;
        std::f64::consts::PI * r * r
    }

    /// Deposited volume per second at `robot_speed` (mm³/s).
    pub fn volumetric_flow(&self, robot_speed: f64) -> f64 {
        robot_speed * self.road_width_mm * self.layer_height_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtruderDirection {
    #[default]
    Extrude,
    Retract,
}

/// Stepper rate that feeds filament at the volume the moving road consumes.
pub fn extrusion_rate(robot_speed: f64, e: &ExtrusionConfig) -> f64 {
    e.volumetric_flow(robot_speed) / e.filament_area_mm2() * e.steps_per_mm
}

/// Signed step rate: negative when retracting.
pub fn signed_extrusion_rate(robot_speed: f64, e: &ExtrusionConfig, dir: ExtruderDirection) -> f64 {
    let rate = extrusion_rate(robot_speed, e);
    match dir {
        ExtruderDirection::Extrude => rate,
        ExtruderDirection::Retract => -rate,
    }
}
