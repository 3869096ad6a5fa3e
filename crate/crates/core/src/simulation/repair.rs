use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::bed::VirtualBed;
use crate::detection::DefectRegion;
use crate::geometry::BedPoint;
use crate::kinematics::{self, ArmGeometry, Elbow, IkRequest, JointAngles, KinematicsError};
use crate::thermal::ExtrusionConfig;

/// Rigid placement of the bed frame in the arm base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmRegistration {
    pub offset_x_mm: f64,
    pub offset_y_mm: f64,
    /// Height of the bed surface in the base frame.
    pub offset_z_mm: f64,
    /// Rotation of the bed axes about the base z-axis.
    pub yaw_rad: f64,
}

impl Default for ArmRegistration {
    fn default() -> Self {
        Self { offset_x_mm: 150.0, offset_y_mm: -100.5, offset_z_mm: 0.0, yaw_rad: 0.0 }
    }
}

impl ArmRegistration {
    pub fn bed_to_base(&self, p: BedPoint, z: f64) -> Vector3<f64> {
        let (s, c) = self.yaw_rad.sin_cos();
        Vector3::new(
            self.offset_x_mm + c * p.x - s * p.y,
            self.offset_y_mm + s * p.x + c * p.y,
            self.offset_z_mm + z,
        )
    }
}

/// Everything needed to turn a detected region into an arm move plus extrusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairPlanner {
    pub geometry: ArmGeometry,
    pub registration: ArmRegistration,
    pub elbow: Elbow,
    /// Cumulative tool pitch; zero is nozzle-down.
    pub pitch: f64,
    pub extrusion: ExtrusionConfig,
    pub mm_per_pixel: f64,
    /// Nozzle speed the repair flow is metered against, mm/s.
    pub repair_speed_mm_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairAction {
    pub target: DefectRegion,
    pub joints: JointAngles,
    /// Tool-tip goal in the arm base frame.
    pub tool_target: Vector3<f64>,
    pub fill_volume_mm3: f64,
    pub dwell_s: f64,
}

pub fn plan_repair(
    d: &DefectRegion,
    bed: &VirtualBed,
    planner: &RepairPlanner,
) -> Result<RepairAction, KinematicsError> {
    let tool_target = planner.registration.bed_to_base(d.centroid_mm, bed.layer_z());
    let req = IkRequest::new(tool_target)
        .with_pitch(planner.pitch)
        .with_elbow(planner.elbow);
    let joints = kinematics::inverse_kinematics(&req, &planner.geometry)?;
    let e = &planner.extrusion;
    let fill_volume_mm3 = d.area_px as f64 * planner.mm_per_pixel.powi(2) * e.layer_height_mm;
    let dwell_s = fill_volume_mm3 / e.volumetric_flow(planner.repair_speed_mm_s);
    Ok(RepairAction { target: *d, joints, tool_target, fill_volume_mm3, dwell_s })
}

/// Fills every cell within half the equivalent diameter plus one cell of the centroid.
/// Returns the repaired bed and the number of cells that changed.
pub fn execute_repair(bed: &VirtualBed, a: &RepairAction) -> (VirtualBed, usize) {
    let mut out = bed.clone();
    let radius = a.target.equivalent_diameter_mm / 2.0 + bed.resolution();
    let changed = out.set_disc(a.target.centroid_mm, radius, true);
    (out, changed)
}
