use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Pose7, SimError};

/// Closed interval of masses in kilograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassRange {
    pub min: f64,
    pub max: f64,
}

impl MassRange {
    pub const fn new(min: f64, max: f64) -> Self {
        MassRange { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, m: f64) -> bool {
        m >= self.min && m <= self.max
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Physical constants and randomization ranges of the tabletop scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub table_surface_z: f64,
    pub table_center: [f64; 2],
    pub table_size: [f64; 2],
    pub cube_size: f64,
    pub lift_z_offset: f64,
    pub reset_pose: Pose7,
    pub force_noise_sigma: f64,
    pub force_saturation: f64,
    pub gravity: f64,
    pub workspace_bounds: Bounds,
    pub min_initial_separation: f64,
    /// Cubes spawn at least this far inside the table edge.
    pub spawn_margin: f64,
    pub light_mass_range: MassRange,
    pub medium_mass_range: MassRange,
    pub heavy_mass_range: MassRange,
    /// Mass of every cube when the task carries no mass tag.
    pub default_mass: f64,
    /// Per-finger opening of a fully open gripper.
    pub finger_open: f64,
    /// Per-finger opening while holding a cube.
    pub finger_on_cube: f64,
    pub collision_clearance: f64,
    /// Upper bound of the landing displacement after a failed placement.
    pub contact_jitter: f64,
    pub orientation_warn_deg: f64,
    /// Disables force-sensor noise.
    pub noiseless: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            table_surface_z: 1.0,
            table_center: [0.0, 0.0],
            table_size: [0.8, 0.8],
            cube_size: 0.05,
            lift_z_offset: 0.15,
            reset_pose: Pose7::new([0.0, 0.0, 1.2], [1.0, 0.0, 0.0, 0.0]),
            force_noise_sigma: 0.3,
            force_saturation: 5.0,
            gravity: 9.81,
            workspace_bounds: Bounds {
                min: [-0.45, -0.45, 1.0],
                max: [0.45, 0.45, 1.6],
            },
            min_initial_separation: 0.1,
            spawn_margin: 0.15,
            light_mass_range: MassRange::new(0.2, 0.4),
            medium_mass_range: MassRange::new(0.45, 0.5),
            heavy_mass_range: MassRange::new(0.6, 0.9),
            default_mass: 0.3,
            finger_open: 0.04,
            finger_on_cube: 0.02,
            collision_clearance: 0.005,
            contact_jitter: 0.02,
            orientation_warn_deg: 15.0,
            noiseless: false,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        SimConfig {
            noiseless: true,
            ..SimConfig::default()
        }
    }

    pub fn half_size(&self) -> f64 {
        self.cube_size / 2.0
    }

    /// Center height of a cube resting directly on the table.
    pub fn rest_z(&self) -> f64 {
        self.table_surface_z + self.half_size()
    }

    pub fn table_corners(&self) -> [[f64; 2]; 4] {
        let [cx, cy] = self.table_center;
        let hx = self.table_size[0] / 2.0;
        let hy = self.table_size[1] / 2.0;
        [
            [cx + hx, cy + hy],
            [cx + hx, cy - hy],
            [cx - hx, cy + hy],
            [cx - hx, cy - hy],
        ]
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let cfg: SimConfig =
            toml::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("cube_size", self.cube_size),
            ("lift_z_offset", self.lift_z_offset),
            ("force_saturation", self.force_saturation),
            ("gravity", self.gravity),
            ("default_mass", self.default_mass),
            ("finger_open", self.finger_open),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.force_noise_sigma.is_finite() && self.force_noise_sigma > 0.0) {
            return Err(SimError::Config("force_noise_sigma must be positive".into()));
        }
        for (name, r) in [
            ("light_mass_range", self.light_mass_range),
            ("medium_mass_range", self.medium_mass_range),
            ("heavy_mass_range", self.heavy_mass_range),
        ] {
            if !(r.min > 0.0 && r.max > r.min) {
                return Err(SimError::Config(format!("{name} must satisfy 0 < min < max")));
            }
        }
        let gap = 5.0 * self.force_noise_sigma / self.gravity;
        if self.heavy_mass_range.min - self.light_mass_range.max <= gap {
            return Err(SimError::Config(format!(
                "heavy and light mass ranges overlap within 5 sigma of force noise ({gap:.3} kg)"
            )));
        }
        if !(self.light_mass_range.max < self.medium_mass_range.min
            && self.medium_mass_range.max < self.heavy_mass_range.min)
        {
            return Err(SimError::Config("mass ranges must be ordered light < medium < heavy".into()));
        }
        if self.cube_size >= self.min_initial_separation {
            return Err(SimError::Config(
                "cube_size must be smaller than min_initial_separation".into(),
            ));
        }
        if self.finger_on_cube > self.finger_open || self.finger_on_cube < 0.0 {
            return Err(SimError::Config("finger_on_cube must lie in [0, finger_open]".into()));
        }
        let spawn_x = self.table_size[0] / 2.0 - self.spawn_margin;
        let spawn_y = self.table_size[1] / 2.0 - self.spawn_margin;
        if spawn_x <= 0.0 || spawn_y <= 0.0 {
            return Err(SimError::Config("spawn_margin leaves no spawn area".into()));
        }
        if !self.reset_pose.is_valid() {
            return Err(SimError::Config("reset_pose must be finite with a unit quaternion".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
        assert!((SimConfig::default().rest_z() - 1.025).abs() < 1e-12);
    }

    #[test]
    fn overlapping_mass_ranges_rejected() {
        let cfg = SimConfig {
            heavy_mass_range: MassRange::new(0.41, 0.9),
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loads_partial_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.toml");
        std::fs::write(&path, "table_surface_z = 1.025\nnoiseless = true\n").unwrap();
        let cfg = SimConfig::load(&path).unwrap();
        assert!(cfg.noiseless);
        assert!((cfg.rest_z() - 1.05).abs() < 1e-12);
        assert_eq!(cfg.cube_size, 0.05);
    }
}
