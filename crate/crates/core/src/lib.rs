//! Closed-loop additive manufacturing: a 5-DOF repair arm, camera-based void
//! detection on a printed layer, hotend thermal regulation and extrusion metering,
//! plus a deterministic simulation that runs the whole print–inspect–repair loop.

pub mod config;
pub mod detection;
pub mod geometry;
pub mod image;
pub mod kinematics;
pub mod simulation;
pub mod telemetry;
pub mod thermal;
