use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::SfpeCurve;

/// Frozen constants of the steering model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// s
    pub dt: f64,
    /// m; neighbours considered for steering and density
    pub neighbor_radius: f64,
    /// s; headway kept to the agent ahead
    pub time_gap: f64,
    pub agent_repulsion: f64,
    /// m
    pub agent_repulsion_range: f64,
    pub wall_repulsion: f64,
    /// m
    pub wall_repulsion_range: f64,
    /// rad; standard deviation of the per-step heading perturbation
    pub heading_noise: f64,
    /// on-stair speed relative to level walking (internal staircases)
    pub stair_factor: f64,
    /// external steps at the main exit
    pub external_stair_factor: f64,
    /// traversal of the drop zone at a jump exit
    pub jump_zone_factor: f64,
    pub sfpe: SfpeCurve,
    /// m
    pub grid_resolution: f64,
    /// m
    pub wall_clearance: f64,
    pub wall_penalty: f64,
    /// s
    pub time_limit: f64,
    /// Lateral detour angles tried when the direct step is blocked (degrees).
    pub detour_angles: Vec<f64>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            dt: 0.05,
            neighbor_radius: 0.8,
            time_gap: 1.1,
            agent_repulsion: 10.0,
            agent_repulsion_range: 0.3,
            wall_repulsion: 1.0,
            wall_repulsion_range: 0.02,
            heading_noise: 0.05,
            stair_factor: 0.96 / 0.94,
            external_stair_factor: 0.96 / 0.94,
            jump_zone_factor: 0.65,
            sfpe: SfpeCurve::default(),
            grid_resolution: 0.05,
            wall_clearance: 0.15,
            wall_penalty: 1.5,
            time_limit: 600.0,
            detour_angles: vec![25.0, 50.0],
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::Config(format!("dt {} s outside (0, 0.1]", self.dt)));
        }
        let positive = [
            ("neighbor_radius", self.neighbor_radius),
            ("time_gap", self.time_gap),
            ("agent_repulsion_range", self.agent_repulsion_range),
            ("wall_repulsion_range", self.wall_repulsion_range),
            ("stair_factor", self.stair_factor),
            ("external_stair_factor", self.external_stair_factor),
            ("jump_zone_factor", self.jump_zone_factor),
            ("grid_resolution", self.grid_resolution),
            ("wall_clearance", self.wall_clearance),
            ("time_limit", self.time_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.heading_noise < 0.0 || self.agent_repulsion < 0.0 || self.wall_repulsion < 0.0 {
            return Err(Error::Config("negative steering constant".into()));
        }
        Ok(())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}
