//! Declarative scene configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatdyn_core::gaussians::{Camera, RenderSettings};
use splatdyn_core::io::CameraFile;
use splatdyn_core::kinematics::{CovarianceMode, FillOptions};
use splatdyn_core::math::Vec3;
use splatdyn_core::mpm::{
    Collider, ColliderMode, ColliderShape, ConstitutiveModel, ElasticityKind, ExternalLoad, MaterialPreset, MpmGrid,
    PlasticityKind,
};
use splatdyn_core::optim::TrainSchedule;
use splatdyn_core::propagate::{InjectionSchedule, KeyframeSet};
use splatdyn_core::synthetic::Rig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Optimize,
    Simulate,
    Blend,
    Propagate,
    Eval,
}

/// Preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub preset: MaterialPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elasticity: Option<ElasticityKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub youngs_modulus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    /// von-Mises presets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yield_stress: Option<f64>,
    /// Drucker-Prager presets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction_angle_deg: Option<f64>,
    /// Drucker-Prager presets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohesion: Option<f64>,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            preset: MaterialPreset::Sand,
            elasticity: None,
            youngs_modulus: None,
            poisson_ratio: None,
            density: None,
            yield_stress: None,
            friction_angle_deg: None,
            cohesion: None,
        }
    }
}

impl MaterialConfig {
    pub fn model(&self) -> Result<ConstitutiveModel, String> {
        let mut m = self.preset.model();
        if let Some(e) = self.elasticity {
            m.elasticity = e;
        }
        m.youngs_modulus = self.youngs_modulus.unwrap_or(m.youngs_modulus);
        m.poisson_ratio = self.poisson_ratio.unwrap_or(m.poisson_ratio);
        m.density = self.density.unwrap_or(m.density);
        match &mut m.plasticity {
            PlasticityKind::VonMises { yield_stress } => {
                *yield_stress = self.yield_stress.unwrap_or(*yield_stress);
                if self.friction_angle_deg.is_some() || self.cohesion.is_some() {
                    return Err("friction_angle_deg and cohesion apply to Drucker-Prager presets only".into());
                }
            }
            PlasticityKind::DruckerPrager {
                friction_angle_deg,
                cohesion,
            } => {
                *friction_angle_deg = self.friction_angle_deg.unwrap_or(*friction_angle_deg);
                *cohesion = self.cohesion.unwrap_or(*cohesion);
                if self.yield_stress.is_some() {
                    return Err("yield_stress applies to von-Mises presets only".into());
                }
            }
            PlasticityKind::None => {
                if self.yield_stress.is_some() || self.friction_angle_deg.is_some() || self.cohesion.is_some() {
                    return Err(format!("preset {:?} has no plasticity to override", self.preset));
                }
            }
        }
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            origin: [-1.5, -1.0, -1.5],
            spacing: 0.1,
            dims: [31, 31, 31],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Rendered frames, including the initial state as frame 0.
    pub frames: usize,
    pub fps: f64,
    pub cfl: f64,
    pub covariance: CovarianceMode,
    pub fill: FillOptions,
    pub particle_dumps: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            frames: 24,
            fps: 24.0,
            cfl: 0.3,
            covariance: CovarianceMode::default(),
            fill: FillOptions::default(),
            particle_dumps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    /// Explicit render camera; otherwise the rig camera at `render_azimuth`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub render: Option<CameraFile>,
    pub render_azimuth: f64,
    /// Orbit of the four supervision cameras.
    pub rig: Rig,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            render: None,
            render_azimuth: 0.0,
            rig: Rig::default(),
        }
    }
}

impl CameraConfig {
    pub fn render_camera(&self) -> splatdyn_core::Result<Camera> {
        match &self.render {
            Some(c) => c.to_camera(),
            None => self.rig.camera_at(self.render_azimuth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    pub keyframe_interval: usize,
    pub tau_features: f64,
    pub tau_attention: f64,
    /// Correspondence search radius in tokens; full grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Explicit 1-based keyframes instead of seeded selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<Vec<usize>>,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        let s = InjectionSchedule::default();
        Self {
            keyframe_interval: s.keyframe_interval,
            tau_features: s.tau_features,
            tau_attention: s.tau_attention,
            window: None,
            keyframes: None,
        }
    }
}

impl PropagationConfig {
    pub fn schedule(&self) -> InjectionSchedule {
        InjectionSchedule {
            tau_features: self.tau_features,
            tau_attention: self.tau_attention,
            keyframe_interval: self.keyframe_interval,
            ..InjectionSchedule::default()
        }
    }
}

/// Everything a subcommand needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Splat PLY; the bundled cube when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splats: Option<PathBuf>,
    /// Supervision views directory; rendered from the rig when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub views: Option<PathBuf>,
    /// Rendered frames to blend; `<output>/frames` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    /// Background PNG; a uniform `background_color` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background: Option<PathBuf>,
    pub background_color: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    pub material: MaterialConfig,
    pub loads: Vec<ExternalLoad>,
    pub grid: GridConfig,
    pub colliders: Vec<Collider>,
    pub simulation: SimulationConfig,
    pub cameras: CameraConfig,
    pub optimization: TrainSchedule,
    pub propagation: PropagationConfig,
    pub render: RenderSettings,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            splats: None,
            views: None,
            frames: None,
            background: None,
            background_color: [1.0, 1.0, 1.0],
            features: None,
            scores: None,
            material: MaterialConfig::default(),
            loads: vec![ExternalLoad::gravity(Vec3::new(0.0, -9.81, 0.0))],
            grid: GridConfig::default(),
            colliders: vec![Collider::ground(-0.6, ColliderMode::Separating { friction: 0.5 })],
            simulation: SimulationConfig::default(),
            cameras: CameraConfig::default(),
            optimization: TrainSchedule::default(),
            propagation: PropagationConfig::default(),
            render: RenderSettings::default(),
            seed: 0,
            output: PathBuf::from("out"),
        }
    }
}

fn check(errs: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        errs.push(msg());
    }
}

impl SceneConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: SceneConfig =
            serde_json::from_str(text).map_err(|e| CliError::Validation(vec![format!("config: {e}")]))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.splats,
            &mut self.views,
            &mut self.frames,
            &mut self.background,
            &mut self.features,
            &mut self.scores,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.frames.clone().unwrap_or_else(|| self.output.join("frames"))
    }

    pub fn mpm_grid(&self) -> splatdyn_core::Result<MpmGrid> {
        MpmGrid::new(Vec3::from(self.grid.origin), self.grid.spacing, self.grid.dims)
    }

    /// Every problem with the configuration for `command`, or nothing.
    pub fn validate(&self, command: Command) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = self.material.model() {
            errs.push(format!("material: {e}"));
        }
        for (i, load) in self.loads.iter().enumerate() {
            if let Err(e) = load.validate() {
                errs.push(format!("loads[{i}]: {e}"));
            }
        }
        let g = &self.grid;
        check(&mut errs, g.spacing > 0.0 && g.spacing.is_finite(), || {
            format!("grid.spacing must be positive, got {}", g.spacing)
        });
        check(&mut errs, g.origin.iter().all(|v| v.is_finite()), || "grid.origin must be finite".into());
        check(&mut errs, g.dims.iter().all(|d| *d >= 8), || {
            format!("grid.dims must be at least 8 per axis, got {:?}", g.dims)
        });
        for (i, c) in self.colliders.iter().enumerate() {
            match c.shape {
                ColliderShape::Plane { point, normal } => {
                    check(&mut errs, point.iter().all(|v| v.is_finite()) && normal.norm() > 0.0, || {
                        format!("colliders[{i}]: plane needs a finite point and a non-zero normal")
                    });
                }
                ColliderShape::Box { min, max } => {
                    check(&mut errs, (0..3).all(|a| max[a] > min[a]), || {
                        format!("colliders[{i}]: box max must exceed min on every axis")
                    });
                }
            }
            if let ColliderMode::Separating { friction } = c.mode {
                check(&mut errs, friction >= 0.0 && friction.is_finite(), || {
                    format!("colliders[{i}]: friction must be non-negative")
                });
            }
        }
        let s = &self.simulation;
        check(&mut errs, s.frames >= 1, || "simulation.frames must be at least 1".into());
        check(&mut errs, s.fps > 0.0 && s.fps.is_finite(), || {
            format!("simulation.fps must be positive, got {}", s.fps)
        });
        check(&mut errs, s.cfl > 0.0 && s.cfl <= 1.0, || {
            format!("simulation.cfl must lie in (0, 1], got {}", s.cfl)
        });
        check(&mut errs, s.fill.resolution >= 2 && s.fill.threshold > 0.0, || {
            "simulation.fill needs resolution >= 2 and a positive threshold".into()
        });
        if let Err(e) = self.cameras.render_camera() {
            errs.push(format!("cameras.render: {e}"));
        }
        if let Err(e) = self.cameras.rig.cameras() {
            errs.push(format!("cameras.rig: {e}"));
        }
        if let Err(e) = self.optimization.validate() {
            errs.push(format!("optimization: {e}"));
        }
        let p = &self.propagation;
        if let Err(e) = p.schedule().validate() {
            errs.push(format!("propagation: {e}"));
        }
        if let Some(k) = &p.keyframes {
            check(&mut errs, k.contains(&1) && !k.contains(&0), || {
                "propagation.keyframes must be 1-based and include frame 1".into()
            });
        }
        let r = &self.render;
        check(&mut errs, r.covariance_floor >= 0.0 && r.tile_size > 0 && r.near > 0.0, || {
            "render: covariance_floor must be non-negative, tile_size and near positive".into()
        });
        check(
            &mut errs,
            (0.0..=1.0).contains(&r.min_weight) && (0.0..=1.0).contains(&r.min_transmittance),
            || "render: cutoffs must lie in [0, 1]".into(),
        );
        check(&mut errs, self.background_color.iter().all(|c| (0.0..=1.0).contains(c)), || {
            "background_color components must lie in [0, 1]".into()
        });

        let file = |errs: &mut Vec<String>, name: &str, p: &Option<PathBuf>| {
            if let Some(p) = p {
                check(errs, p.is_file(), || format!("{name}: {} is not a file", p.display()));
            }
        };
        let dir = |errs: &mut Vec<String>, name: &str, p: &Path| {
            check(errs, p.is_dir(), || format!("{name}: {} is not a directory", p.display()));
        };
        match command {
            Command::Optimize => {
                file(&mut errs, "splats", &self.splats);
                if let Some(v) = &self.views {
                    dir(&mut errs, "views", v);
                }
            }
            Command::Simulate => file(&mut errs, "splats", &self.splats),
            Command::Blend => {
                dir(&mut errs, "frames", &self.frames_dir());
                file(&mut errs, "background", &self.background);
            }
            Command::Propagate => match &self.features {
                Some(f) => dir(&mut errs, "features", f),
                None => errs.push("features: the propagate command needs a feature directory".into()),
            },
            Command::Eval => match &self.scores {
                Some(_) => file(&mut errs, "scores", &self.scores),
                None => errs.push("scores: the eval command needs a scores CSV".into()),
            },
        }
        errs
    }

    pub fn keyframes(&self, total: usize) -> splatdyn_core::Result<KeyframeSet> {
        match &self.propagation.keyframes {
            Some(k) => KeyframeSet::new(k.clone(), total),
            None => splatdyn_core::propagate::select_keyframes(total, self.propagation.keyframe_interval, self.seed),
        }
    }
}
