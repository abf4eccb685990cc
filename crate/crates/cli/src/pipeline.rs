//! Subcommand bodies and the in-memory pipeline stages they share.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use splatdyn_core::gaussians::{render, GaussianKernel, RenderOutput};
use splatdyn_core::io::{
    load_splats, read_pfm, read_png, read_tensor, read_views, save_splats, write_frame, write_particles, write_png,
    write_tensor, FramePaths,
};
use splatdyn_core::kinematics::{bind, PhysicalScene};
use splatdyn_core::metrics::{zscore_normalize, ScoreTable};
use splatdyn_core::optim::{optimize, SupervisionView};
use splatdyn_core::propagate::{blend, extended_attention, linear_weight, propagate_sequence, FeatureMap, Stage};
use splatdyn_core::synthetic::{default_cube, render_views};
use splatdyn_core::{Error, Image};

use crate::config::SceneConfig;
use crate::{CliError, Context};

pub fn load_kernels(cfg: &SceneConfig) -> Result<Vec<GaussianKernel>, CliError> {
    match &cfg.splats {
        Some(p) => load_splats(p).context(|| "loading splats".into()),
        None => Ok(default_cube()),
    }
}

/// Views from disk, or the rig's renders of `kernels` when none are given.
pub fn supervision_views(cfg: &SceneConfig, kernels: &[GaussianKernel]) -> Result<Vec<SupervisionView>, CliError> {
    match &cfg.views {
        Some(dir) => read_views(dir).context(|| "loading supervision views".into()),
        None => render_views(kernels, &cfg.cameras.rig, cfg.optimization.delta, &cfg.render)
            .context(|| "rendering supervision views".into()),
    }
}

pub fn build_scene(cfg: &SceneConfig, kernels: Vec<GaussianKernel>) -> Result<PhysicalScene, CliError> {
    let model = cfg.material.model().map_err(|e| CliError::Validation(vec![format!("material: {e}")]))?;
    let binding = bind(&kernels, &model, 0, &cfg.simulation.fill).context(|| "binding splats to particles".into())?;
    info!("{} particles ({} fillers)", binding.particles.len(), binding.filler_count());
    let grid = cfg.mpm_grid().context(|| "building grid".into())?;
    let mut scene = PhysicalScene::new(kernels, binding, vec![model], grid).context(|| "building scene".into())?;
    scene.state.colliders = cfg.colliders.clone();
    scene.state.cfl = cfg.simulation.cfl;
    scene.mode = cfg.simulation.covariance;
    Ok(scene)
}

/// Renders frame 0 from the initial state, then advances `1/fps` per frame.
/// `sink` sees every frame with the scene state it was rendered from.
pub fn simulate(
    cfg: &SceneConfig,
    kernels: Vec<GaussianKernel>,
    sink: &mut dyn FnMut(usize, &PhysicalScene, RenderOutput) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let camera = cfg.cameras.render_camera().context(|| "render camera".into())?;
    let mut scene = build_scene(cfg, kernels)?;
    let dt = 1.0 / cfg.simulation.fps;
    for j in 0..cfg.simulation.frames {
        if j > 0 {
            let n = scene.advance(dt, &cfg.loads).context(|| format!("simulating frame {j}"))?;
            log::debug!("frame {j}: {n} substeps");
        }
        let out = render(&scene.kernels, &camera, &cfg.render).context(|| format!("rendering frame {j}"))?;
        sink(j, &scene, out)?;
    }
    Ok(())
}

/// All frames in memory.
pub fn simulate_frames(cfg: &SceneConfig, kernels: Vec<GaussianKernel>) -> Result<Vec<RenderOutput>, CliError> {
    let mut frames = Vec::with_capacity(cfg.simulation.frames);
    simulate(cfg, kernels, &mut |_, _, out| {
        frames.push(out);
        Ok(())
    })?;
    Ok(frames)
}

pub fn background(cfg: &SceneConfig, width: usize, height: usize) -> Result<Image, CliError> {
    match &cfg.background {
        Some(p) => {
            let img = read_png(p).context(|| "loading background".into())?;
            if img.width != width || img.height != height {
                return Err(CliError::Runtime {
                    context: "loading background".into(),
                    source: Error::DimensionMismatch(format!(
                        "background is {}x{}, frames are {width}x{height}",
                        img.width, img.height
                    )),
                });
            }
            Ok(img)
        }
        None => {
            let c = cfg.background_color;
            Ok(Image::from_fn(width, height, 3, |_, _, ch| c[ch]))
        }
    }
}

pub fn blend_frames(frames: &[RenderOutput], bg: &Image) -> Result<Vec<Image>, CliError> {
    frames
        .iter()
        .enumerate()
        .map(|(j, f)| blend(&f.color, &f.alpha, bg).context(|| format!("blending frame {j}")))
        .collect()
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn cmd_optimize(cfg: &SceneConfig) -> Result<Vec<PathBuf>, CliError> {
    let kernels = load_kernels(cfg)?;
    let views = supervision_views(cfg, &kernels)?;
    let report = optimize(&kernels, &views, &cfg.optimization, &cfg.render).context(|| "optimizing".into())?;
    let ply = cfg.output.join("optimized.ply");
    save_splats(&report.kernels, &ply).context(|| "saving optimized splats".into())?;
    let history = cfg.output.join("history.json");
    let text = serde_json::to_string_pretty(&report.history).expect("history serializes");
    std::fs::write(&history, text + "\n")
        .map_err(|e| io_err(&history, e))
        .context(|| "writing history".into())?;
    Ok(vec![ply, history])
}

pub fn cmd_simulate(cfg: &SceneConfig) -> Result<Vec<PathBuf>, CliError> {
    let kernels = load_kernels(cfg)?;
    let frames_dir = cfg.output.join("frames");
    let particles_dir = cfg.output.join("particles");
    let mut outputs = Vec::new();
    simulate(cfg, kernels, &mut |j, scene, out| {
        let p = write_frame(&out, &frames_dir, j).context(|| format!("writing frame {j}"))?;
        outputs.extend([p.color, p.depth, p.alpha]);
        if cfg.simulation.particle_dumps {
            let path = particles_dir.join(format!("particles_{j:04}.bin"));
            write_particles(&scene.state.particles, scene.state.time, &path).context(|| format!("dumping particles of frame {j}"))?;
            outputs.push(path);
        }
        Ok(())
    })?;
    info!("wrote {} frames to {}", cfg.simulation.frames, frames_dir.display());
    Ok(outputs)
}

/// `frame_NNNN.png` indices present in `dir`, ascending.
fn frame_indices(dir: &Path) -> Result<Vec<usize>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e)).context(|| "listing frames".into())?;
    let mut idx: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("frame_")?.strip_suffix(".png")?.parse().ok()
        })
        .collect();
    idx.sort_unstable();
    if idx.is_empty() {
        return Err(CliError::Runtime {
            context: "listing frames".into(),
            source: Error::Empty(format!("{}: no frame_*.png files", dir.display())),
        });
    }
    Ok(idx)
}

pub fn cmd_blend(cfg: &SceneConfig) -> Result<Vec<PathBuf>, CliError> {
    let dir = cfg.frames_dir();
    let out_dir = cfg.output.join("blended");
    let mut outputs = Vec::new();
    let mut bg: Option<Image> = None;
    for j in frame_indices(&dir)? {
        let paths = FramePaths::new(&dir, j);
        let color = read_png(&paths.color).context(|| format!("reading frame {j}"))?;
        let alpha = read_pfm(&paths.alpha).context(|| format!("reading alpha of frame {j}"))?;
        if bg.is_none() {
            bg = Some(background(cfg, color.width, color.height)?);
        }
        let mixed = blend(&color, &alpha, bg.as_ref().expect("set above")).context(|| format!("blending frame {j}"))?;
        let path = out_dir.join(format!("frame_{j:04}.png"));
        write_png(&mixed, &path).context(|| format!("writing blended frame {j}"))?;
        outputs.push(path);
    }
    Ok(outputs)
}

/// Tokens of a rank-3 `[h, w, d]` (or rank-2 `[n, d]`) tensor file.
fn load_tokens(path: &Path, frame: usize, stage: Stage) -> Result<FeatureMap, CliError> {
    let what = || format!("reading {}", path.display());
    let t = read_tensor(path).context(what)?;
    let (h, w, d) = match t.dims[..] {
        [h, w, d] => (h, w, d),
        [n, d] => (n, 1, d),
        _ => {
            return Err(CliError::Runtime {
                context: what(),
                source: Error::DimensionMismatch(format!("expected rank 2 or 3, got dims {:?}", t.dims)),
            })
        }
    };
    let tokens = DMatrix::from_row_iterator(h * w, d, t.data.iter().map(|v| *v as f64));
    FeatureMap::new(frame, h, w, tokens, t.tag.clone(), stage).context(what)
}

pub fn cmd_propagate(cfg: &SceneConfig) -> Result<Vec<PathBuf>, CliError> {
    let dir = cfg.features.as_ref().expect("validated");
    let coarse_path = |j: usize| dir.join(format!("coarse_{j:04}.tensor"));
    let total = (1..).take_while(|j| coarse_path(*j).is_file()).count();
    if total == 0 {
        return Err(CliError::Runtime {
            context: "reading features".into(),
            source: Error::Empty(format!("{}: no coarse_0001.tensor", dir.display())),
        });
    }
    let keys = cfg.keyframes(total).context(|| "selecting keyframes".into())?;
    info!("{total} frames, keyframes {:?}", keys.frames());
    let missing: Vec<String> = keys
        .frames()
        .iter()
        .flat_map(|k| ["q", "k", "v"].map(|s| dir.join(format!("{s}_{k:04}.tensor"))))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Runtime {
            context: "reading keyframe attention inputs".into(),
            source: Error::InvalidArgument(format!("missing {}", missing.join(", "))),
        });
    }
    let coarse = (1..=total).map(|j| load_tokens(&coarse_path(j), j, Stage::Coarse)).collect::<Result<Vec<_>, _>>()?;
    let (mut qs, mut ks, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for &k in keys.frames() {
        qs.push(load_tokens(&dir.join(format!("q_{k:04}.tensor")), k, Stage::Coarse)?.tokens);
        ks.push(load_tokens(&dir.join(format!("k_{k:04}.tensor")), k, Stage::Coarse)?.tokens);
        vs.push(load_tokens(&dir.join(format!("v_{k:04}.tensor")), k, Stage::Enhanced)?.tokens);
    }
    let enhanced = extended_attention(&qs, &ks, &vs).context(|| "extended attention".into())?;
    let enhanced: BTreeMap<usize, DMatrix<f64>> = keys.frames().iter().copied().zip(enhanced).collect();
    let out = propagate_sequence(&keys, &coarse, &enhanced, &linear_weight, cfg.propagation.window)
        .context(|| "propagating features".into())?;

    let out_dir = cfg.output.join("propagated");
    let mut outputs = Vec::new();
    for (j, tokens) in (1..).zip(out) {
        let c = &coarse[j - 1];
        let map = FeatureMap::new(j, c.height, c.width, tokens, c.layer.clone(), Stage::Enhanced)
            .context(|| format!("propagated frame {j}"))?;
        let path = out_dir.join(format!("enhanced_{j:04}.tensor"));
        write_tensor(&map.to_tensor(), &path).context(|| format!("writing frame {j}"))?;
        outputs.push(path);
    }
    let kf = cfg.output.join("keyframes.json");
    std::fs::write(&kf, serde_json::to_string(&keys).expect("keyframes serialize") + "\n")
        .map_err(|e| io_err(&kf, e))
        .context(|| "writing keyframes".into())?;
    outputs.push(kf);
    Ok(outputs)
}

pub fn cmd_eval(cfg: &SceneConfig) -> Result<Vec<PathBuf>, CliError> {
    let path = cfg.scores.as_ref().expect("validated");
    let table = ScoreTable::read_csv(path).context(|| "reading scores".into())?;
    let z = zscore_normalize(&table).context(|| "normalizing scores".into())?;
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| io_err(&cfg.output, e))
        .context(|| "creating output directory".into())?;
    let zpath = cfg.output.join("zscores.csv");
    let file = std::fs::File::create(&zpath).map_err(|e| io_err(&zpath, e)).context(|| "writing z-scores".into())?;
    z.table.to_csv(file).context(|| "writing z-scores".into())?;
    let mpath = cfg.output.join("model_means.csv");
    let mut text = String::from("model,mean_z\n");
    for (m, v) in z.table.models.iter().zip(&z.model_means) {
        text.push_str(&format!("{m},{v}\n"));
    }
    std::fs::write(&mpath, text).map_err(|e| io_err(&mpath, e)).context(|| "writing model means".into())?;
    Ok(vec![zpath, mpath])
}
