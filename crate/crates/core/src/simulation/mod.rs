//! Virtual print bed, virtual overhead camera, and the closed-loop layer cycle:
//! deposit → heat → capture → detect → repair → verify.

mod bed;
mod camera;
mod cycle;
mod repair;

pub use bed::{deposit_layer, BedError, DefectSpec, Rect, VirtualBed};
pub use camera::{capture, render_ideal, CameraModel, MATERIAL_INTENSITY, VOID_INTENSITY};
pub use cycle::{
    run_layer_cycle, run_layer_cycle_with, CycleOptions, CycleOutcome, CycleReport, Hotend,
    PhaseImages, RepairRecord, Scenario, SimulationError,
};
pub use repair::{execute_repair, plan_repair, ArmRegistration, RepairAction, RepairPlanner};
