//! File-backed configuration: grammar (quantizers, block lengths, packing
//! budget), prosthesis plan (planes, landmarks, workspace), and noise model
//! parameters. Built-in defaults mirror the config files shipped under
//! `configs/`; loading an explicit path that is missing or malformed is an
//! error, never a silent fallback.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Landmark, PlaneWindow, ResectionPlane, Se3};
use crate::grammar::{BlockLengths, GrammarError, QuantSpec, SpecTable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source: Box::new(source),
    })
}

/// Quantizer table plus prefix block lengths and the packing budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarConfig {
    pub schema_version: u32,
    pub token_budget: usize,
    pub n_joints: usize,
    pub blocks: BlockLengths,
    pub specs: SpecTable,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            token_budget: 512,
            n_joints: 6,
            blocks: BlockLengths::default(),
            specs: SpecTable::default(),
        }
    }
}

impl GrammarConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: GrammarConfig = read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.specs.validate()?;
        if self.token_budget == 0 {
            return Err(ConfigError::Invalid("token_budget must be positive".into()));
        }
        if self.n_joints == 0 {
            return Err(ConfigError::Invalid("n_joints must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Per-axis interval, used when masking position bins.
    pub fn axis_range(&self, axis: usize) -> (f64, f64) {
        (self.min[axis], self.max[axis])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    pub translation: [f64; 3],
    pub rpy_deg: [f64; 3],
}

impl PoseConfig {
    pub fn pose(&self) -> Se3 {
        Se3::new(
            Se3::rotation_rpy_deg(self.rpy_deg[0], self.rpy_deg[1], self.rpy_deg[2]),
            Vector3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub id: u32,
    pub name: String,
    pub normal: [f64; 3],
    pub offset: f64,
    pub center: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub extent_u: f64,
    pub extent_v: f64,
    pub difficulty: f64,
}

impl PlaneConfig {
    pub fn resection_plane(&self) -> Result<ResectionPlane, GeometryError> {
        ResectionPlane::new(
            self.id,
            self.name.clone(),
            Vector3::from(self.normal),
            self.offset,
            PlaneWindow {
                center: Vector3::from(self.center),
                axis_u: Vector3::from(self.axis_u),
                axis_v: Vector3::from(self.axis_v),
                extent_u: self.extent_u,
                extent_v: self.extent_v,
            },
            self.difficulty,
        )
    }
}

pub const PLANE_NAMES: [&str; 6] = [
    "tibial",
    "distal_femur",
    "anterior_condyle",
    "posterior_condyle",
    "anterior_chamfer",
    "posterior_chamfer",
];

/// Reporting and execution order for the six planes.
pub const PLANE_ORDER: [&str; 6] = [
    "anterior_chamfer",
    "distal_femur",
    "anterior_condyle",
    "posterior_condyle",
    "tibial",
    "posterior_chamfer",
];

/// The prosthesis plan: six resection planes, anatomical landmarks, the
/// reachable workspace, the initial tool pose, and the execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub schema_version: u32,
    pub workspace: Workspace,
    pub initial_tool_pose: PoseConfig,
    pub execution_order: Vec<String>,
    pub landmarks: Vec<Landmark>,
    pub planes: Vec<PlaneConfig>,
}

impl PlanConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: PlanConfig = read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.planes.is_empty() {
            return Err(ConfigError::Invalid("plan has no planes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for plane in &self.planes {
            if !PLANE_NAMES.contains(&plane.name.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "unknown plane name {:?}",
                    plane.name
                )));
            }
            if plane.id == 0 {
                return Err(ConfigError::Invalid("plane ids are 1-based".into()));
            }
            if !seen.insert(plane.id) || self.planes.iter().filter(|p| p.name == plane.name).count() > 1
            {
                return Err(ConfigError::Invalid(format!(
                    "duplicate plane id or name for {:?}",
                    plane.name
                )));
            }
            plane.resection_plane()?;
        }
        if self.execution_order.len() != self.planes.len() {
            return Err(ConfigError::Invalid(
                "execution_order must list every plane exactly once".into(),
            ));
        }
        for name in &self.execution_order {
            if !self.planes.iter().any(|p| &p.name == name) {
                return Err(ConfigError::Invalid(format!(
                    "execution_order names unknown plane {name:?}"
                )));
            }
        }
        for (lo, hi) in self.workspace.min.iter().zip(self.workspace.max) {
            if !(lo < &hi) {
                return Err(ConfigError::Invalid("workspace min must be < max".into()));
            }
        }
        Ok(())
    }

    /// Checks the plan is usable under a quantizer table: plane ids must map
    /// into plane-index bins and every workspace axis must contain at least
    /// one position bin center (the MOVE fallback relies on it).
    pub fn validate_against(&self, grammar: &GrammarConfig) -> Result<(), ConfigError> {
        let pos = &grammar.specs.position;
        for axis in 0..3 {
            let (lo, hi) = self.workspace.axis_range(axis);
            let any_center = (0..pos.bins)
                .map(|b| pos.dequantize(b).expect("bin in range"))
                .any(|c| c >= lo && c <= hi);
            if !any_center {
                return Err(ConfigError::Invalid(format!(
                    "workspace axis {axis} contains no position bin center"
                )));
            }
        }
        for plane in &self.planes {
            if u64::from(plane.id - 1) >= u64::from(grammar.specs.plane_index.bins) {
                return Err(ConfigError::Invalid(format!(
                    "plane id {} exceeds plane-index bins",
                    plane.id
                )));
            }
        }
        Ok(())
    }

    pub fn resection_planes(&self) -> Result<Vec<ResectionPlane>, ConfigError> {
        self.planes
            .iter()
            .map(|p| p.resection_plane().map_err(ConfigError::from))
            .collect()
    }

    /// Planes sorted into the configured execution order.
    pub fn ordered_planes(&self) -> Result<Vec<ResectionPlane>, ConfigError> {
        let all = self.resection_planes()?;
        self.execution_order
            .iter()
            .map(|name| {
                all.iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .ok_or_else(|| {
                        ConfigError::Invalid(format!("execution_order names unknown plane {name:?}"))
                    })
            })
            .collect()
    }

    pub fn plane_by_id(&self, id: u32) -> Option<&PlaneConfig> {
        self.planes.iter().find(|p| p.id == id)
    }

    pub fn initial_pose(&self) -> Se3 {
        self.initial_tool_pose.pose()
    }

    /// Landmark positions and `(normal, offset)` pairs for the context block.
    pub fn pit_parts(&self) -> (Vec<[f64; 3]>, Vec<([f64; 3], f64)>) {
        let landmarks = self.landmarks.iter().map(|l| l.position).collect();
        let planes = self
            .planes
            .iter()
            .map(|p| (p.normal, p.offset))
            .collect();
        (landmarks, planes)
    }
}

impl Default for PlanConfig {
    /// Bench-rail layout: the six windows sit along a single rail with
    /// strictly decreasing x entry coordinates, so visiting them in
    /// [`PLANE_ORDER`] is the shortest tour. Sweep-entry coordinates are
    /// snapped onto position bin centers: a quantized MOVE reaches an entry
    /// pose with zero residue.
    fn default() -> Self {
        let pos = SpecTable::default().position;
        let snap = |x: f64| pos.snap(x).expect("default coordinates are in range");
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let entry_y = snap(-15.0);
        let extent_u = 15.0;

        // (id, name, normal, entry x, entry z, extent_v, difficulty)
        let rail: [(u32, &str, [f64; 3], f64, f64, f64, f64); 6] = [
            (5, "anterior_chamfer", [s, 0.0, s], 75.0, -10.0, 12.0, 1.0),
            (2, "distal_femur", [0.0, 0.0, 1.0], 45.0, -20.0, 20.0, 1.0),
            (3, "anterior_condyle", [1.0, 0.0, 0.0], 15.0, -5.0, 14.0, 1.0),
            (4, "posterior_condyle", [-1.0, 0.0, 0.0], -15.0, -5.0, 14.0, 1.0),
            (1, "tibial", [0.0, 0.0, 1.0], -45.0, -30.0, 22.0, 1.5),
            (6, "posterior_chamfer", [-s, 0.0, s], -75.0, -10.0, 12.0, 1.3),
        ];

        let axis_u = [0.0, 1.0, 0.0];
        let planes = rail
            .iter()
            .map(|&(id, name, normal, ex, ez, extent_v, difficulty)| {
                let n = Vector3::from(normal);
                let u = Vector3::from(axis_u);
                let v = n.cross(&u); // u x (n x u) = n for unit n orthogonal to u
                let center = Vector3::new(snap(ex), entry_y + extent_u, snap(ez));
                PlaneConfig {
                    id,
                    name: name.into(),
                    normal,
                    offset: n.dot(&center),
                    center: [center.x, center.y, center.z],
                    axis_u,
                    axis_v: [v.x, v.y, v.z],
                    extent_u,
                    extent_v,
                    difficulty,
                }
            })
            .collect();

        Self {
            schema_version: 1,
            workspace: Workspace {
                min: [-200.0, -200.0, -200.0],
                max: [200.0, 200.0, 200.0],
            },
            initial_tool_pose: PoseConfig {
                translation: [110.0, entry_y, 0.0],
                rpy_deg: [0.0, 0.0, 0.0],
            },
            execution_order: PLANE_ORDER.iter().map(|s| s.to_string()).collect(),
            landmarks: vec![
                Landmark {
                    name: "hip_center".into(),
                    position: [5.0, 2.0, 200.0],
                },
                Landmark {
                    name: "knee_center".into(),
                    position: [0.0, 0.0, -5.0],
                },
                Landmark {
                    name: "ankle_center".into(),
                    position: [-5.0, 3.0, -230.0],
                },
                Landmark {
                    name: "medial_epicondyle".into(),
                    position: [0.0, 45.0, 5.0],
                },
                Landmark {
                    name: "lateral_epicondyle".into(),
                    position: [0.0, -45.0, 5.0],
                },
                Landmark {
                    name: "tibial_tubercle".into(),
                    position: [30.0, 5.0, -70.0],
                },
                Landmark {
                    name: "medial_malleolus".into(),
                    position: [-10.0, 30.0, -225.0],
                },
                Landmark {
                    name: "lateral_malleolus".into(),
                    position: [-10.0, -35.0, -228.0],
                },
            ],
            planes,
        }
    }
}

/// Pose jitter and dropout parameters for the bench simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub schema_version: u32,
    /// Translational pose jitter, millimeters (1 sigma).
    pub sigma_translation_mm: f64,
    /// Rotational pose jitter, degrees (1 sigma).
    pub sigma_rotation_deg: f64,
    /// Per-point scatter added to executed cut patches, millimeters.
    pub point_jitter_mm: f64,
    /// Probability that a step's observation is degraded.
    pub dropout_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::scaled(0.0)
    }
}

impl NoiseConfig {
    /// One-knob noise level: `sigma` mm of translational jitter with
    /// rotation and per-point scatter scaled along.
    pub fn scaled(sigma: f64) -> Self {
        Self {
            schema_version: 1,
            sigma_translation_mm: sigma,
            sigma_rotation_deg: 0.5 * sigma,
            point_jitter_mm: 0.5 * sigma,
            dropout_prob: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: NoiseConfig = read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = self.sigma_translation_mm >= 0.0
            && self.sigma_rotation_deg >= 0.0
            && self.point_jitter_mm >= 0.0
            && (0.0..=1.0).contains(&self.dropout_prob)
            && self.sigma_translation_mm.is_finite()
            && self.sigma_rotation_deg.is_finite()
            && self.point_jitter_mm.is_finite();
        if !ok {
            return Err(ConfigError::Invalid(
                "noise parameters must be finite, non-negative, dropout in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Serializes a config back to TOML; used to ship the default files.
pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string_pretty(value).expect("configs serialize")
}

/// Cell width of the default quantizers, handy in tests.
pub fn default_position_spec() -> QuantSpec {
    SpecTable::default().position
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_validates() {
        let plan = PlanConfig::default();
        plan.validate().unwrap();
        plan.validate_against(&GrammarConfig::default()).unwrap();
        assert_eq!(plan.planes.len(), 6);
        assert_eq!(plan.ordered_planes().unwrap().len(), 6);
    }

    #[test]
    fn default_plan_entries_sit_on_bin_centers() {
        let plan = PlanConfig::default();
        let pos = default_position_spec();
        for plane in plan.ordered_planes().unwrap() {
            let entry = plane.entry_point();
            for axis in 0..3 {
                let snapped = pos.snap(entry[axis]).unwrap();
                assert_eq!(
                    snapped, entry[axis],
                    "{} axis {axis} entry {} off center",
                    plane.name, entry[axis]
                );
            }
        }
    }

    #[test]
    fn default_plan_order_matches_reporting_order() {
        let plan = PlanConfig::default();
        let names: Vec<_> = plan.execution_order.iter().map(String::as_str).collect();
        assert_eq!(names, PLANE_ORDER.to_vec());
    }

    #[test]
    fn default_plan_difficulty_raises_tibial_and_posterior_chamfer() {
        let plan = PlanConfig::default();
        for plane in &plan.planes {
            let expected = match plane.name.as_str() {
                "tibial" => 1.5,
                "posterior_chamfer" => 1.3,
                _ => 1.0,
            };
            assert_eq!(plane.difficulty, expected, "{}", plane.name);
        }
    }

    #[test]
    fn grammar_config_round_trips_through_toml() {
        let cfg = GrammarConfig::default();
        let text = to_toml(&cfg);
        let back: GrammarConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn plan_config_round_trips_through_toml() {
        let cfg = PlanConfig::default();
        let text = to_toml(&cfg);
        let back: PlanConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn noise_config_round_trips_and_validates() {
        let cfg = NoiseConfig::scaled(1.0);
        let text = to_toml(&cfg);
        let back: NoiseConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let bad = NoiseConfig {
            dropout_prob: 1.5,
            ..NoiseConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn plan_rejects_unknown_names_and_duplicate_ids() {
        let mut plan = PlanConfig::default();
        plan.planes[0].name = "femoral_canal".into();
        assert!(plan.validate().is_err());

        let mut plan = PlanConfig::default();
        plan.planes[1].id = plan.planes[0].id;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_rejects_incomplete_execution_order() {
        let mut plan = PlanConfig::default();
        plan.execution_order.pop();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = PlanConfig::load(Path::new("/nonexistent/plan.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }
}
