//! Synthetic scenes of moving rectangles with exact flow, scanpaths that fixate
//! and track the objects, oracle awareness, and quantized annotations.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::awareness::{recursive_run, AwarenessSequence, EstimatorConfig};
use crate::error::{Error, Result};
use crate::grid::{to_normalized, to_pixel, FlowField, GazeFrame, Heatmap, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::io;
use crate::objective::{AnnotationRecord, LossWeights};

/// Side length range (px) of randomly generated objects.
pub const OBJECT_SIZE: (usize, usize) = (8, 16);

/// Std of object positions around the frame center, as a fraction of each extent.
pub const OBJECT_SPREAD: f64 = 0.1;

/// Axis-aligned rectangle moving with an integer velocity (px/frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Top-left corner at frame 0.
    pub x: i64,
    pub y: i64,
    pub width: usize,
    pub height: usize,
    pub vx: i64,
    pub vy: i64,
    pub intensity: f64,
}

impl ObjectSpec {
    fn origin(&self, t: usize) -> (i64, i64) {
        (self.x + self.vx * t as i64, self.y + self.vy * t as i64)
    }

    /// Rectangle center at frame `t`, in pixels (may lie off-canvas).
    pub fn center(&self, t: usize) -> (f64, f64) {
        let (x0, y0) = self.origin(t);
        (
            x0 as f64 + (self.width as f64 - 1.0) / 2.0,
            y0 as f64 + (self.height as f64 - 1.0) / 2.0,
        )
    }

    fn inside(&self, t: usize, w: usize, h: usize) -> bool {
        let (x0, y0) = self.origin(t);
        x0 >= 0 && y0 >= 0 && x0 + self.width as i64 <= w as i64 && y0 + self.height as i64 <= h as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Later objects are drawn on top.
    pub objects: Vec<ObjectSpec>,
    pub background: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Invalid(format!(
                "scene must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if self.frames < 2 {
            return Err(Error::Invalid("scene needs at least 2 frames".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::Invalid("background intensity must be in [0,1]".into()));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.width == 0 || o.height == 0 || !(0.0..=1.0).contains(&o.intensity) {
                return Err(Error::Invalid(format!("object {k} has an empty size or bad intensity")));
            }
            if !o.inside(0, self.width, self.height) {
                return Err(Error::Invalid(format!("object {k} starts outside the canvas")));
            }
        }
        if self.objects.len() > 254 {
            return Err(Error::Invalid("at most 254 objects".into()));
        }
        Ok(())
    }

    /// Random scene of `n` objects ([`OBJECT_SIZE`] px per side, integer speeds up to 3
    /// px/frame) placed around the frame center so that every object stays on the
    /// canvas throughout.
    pub fn random(width: usize, height: usize, frames: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = frames.saturating_sub(1) as i64;
        let mut objects = Vec::with_capacity(n);
        for _ in 0..n {
            let ow = rng.gen_range(OBJECT_SIZE.0..=OBJECT_SIZE.1).min(width);
            let oh = rng.gen_range(OBJECT_SIZE.0..=OBJECT_SIZE.1).min(height);
            let axis = |rng: &mut ChaCha8Rng, size: usize, extent: usize| -> (i64, i64) {
                let room = extent as i64 - size as i64;
                let mut v = rng.gen_range(-3i64..=3);
                while v.abs() * span > room {
                    v -= v.signum();
                }
                let lo = (-v * span).max(0);
                let hi = room - (v * span).max(0);
                // mid-trajectory center drawn around the frame center
                let spread = OBJECT_SPREAD * extent as f64;
                let mid = Normal::new(extent as f64 / 2.0, spread).expect("finite spread").sample(rng);
                let x0 = (mid - size as f64 / 2.0 - (v * span) as f64 / 2.0).round() as i64;
                (x0.clamp(lo, hi), v)
            };
            let (x, vx) = axis(&mut rng, ow, width);
            let (y, vy) = axis(&mut rng, oh, height);
            objects.push(ObjectSpec {
                x,
                y,
                width: ow,
                height: oh,
                vx,
                vy,
                intensity: rng.gen_range(0.55..0.95),
            });
        }
        let spec = Self {
            width,
            height,
            frames,
            objects,
            background: 0.2,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default desk-scale scene: 240×135, 20 frames, 3 objects.
    pub fn default_for_seed(seed: u64) -> Self {
        Self::random(DEFAULT_WIDTH, DEFAULT_HEIGHT, 20, 3, seed).expect("default scene is valid")
    }
}

/// Rendered scene with exact motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub frames: Vec<Heatmap>,
    /// Flow from frame `t` to `t+1`; `frames − 1` entries.
    pub flows: Vec<FlowField>,
    /// Per frame, per object: full rectangle clipped to the canvas, 1 inside.
    pub masks: Vec<Vec<Heatmap>>,
    /// Per frame, per pixel: 0 for background, `k + 1` for the topmost object `k`.
    pub owners: Vec<Vec<u8>>,
    /// Objects that leave the canvas at some frame.
    pub clipped: Vec<bool>,
}

impl Scene {
    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Binary map of pixels covered by any object at frame `t`.
    pub fn object_map(&self, t: usize) -> Heatmap {
        let data = self.owners[t].iter().map(|&o| if o > 0 { 1.0 } else { 0.0 }).collect();
        Heatmap::from_vec(self.width(), self.height(), data).expect("scene dims are valid")
    }

    /// Object center at frame `t` in normalized coordinates, clamped to the canvas.
    pub fn object_center(&self, k: usize, t: usize) -> [f64; 2] {
        let (cx, cy) = self.spec.objects[k].center(t);
        [
            to_normalized(cx, self.width()).clamp(0.0, 1.0),
            to_normalized(cy, self.height()).clamp(0.0, 1.0),
        ]
    }
}

/// Rasterizes the spec. Objects that leave the canvas are clipped and flagged.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut owners = Vec::with_capacity(spec.frames);
    let mut flows = Vec::with_capacity(spec.frames - 1);
    for t in 0..spec.frames {
        let mut owner = vec![0u8; w * h];
        let mut image = Heatmap::filled(w, h, spec.background);
        let mut frame_masks = Vec::with_capacity(spec.objects.len());
        for (k, o) in spec.objects.iter().enumerate() {
            let mut mask = Heatmap::zeros(w, h);
            let (x0, y0) = o.origin(t);
            let xs = x0.max(0)..(x0 + o.width as i64).min(w as i64);
            let ys = y0.max(0)..(y0 + o.height as i64).min(h as i64);
            for y in ys {
                for x in xs.clone() {
                    let (x, y) = (x as usize, y as usize);
                    mask.set(x, y, 1.0);
                    image.set(x, y, o.intensity);
                    owner[y * w + x] = k as u8 + 1;
                }
            }
            frame_masks.push(mask);
        }
        if t + 1 < spec.frames {
            let mut flow = FlowField::zeros(w, h);
            for (i, &o) in owner.iter().enumerate() {
                if o > 0 {
                    let obj = &spec.objects[o as usize - 1];
                    flow.set(i % w, i / w, obj.vx as f64, obj.vy as f64);
                }
            }
            flows.push(flow);
        }
        frames.push(image);
        masks.push(frame_masks);
        owners.push(owner);
    }
    let clipped = spec
        .objects
        .iter()
        .map(|o| (0..spec.frames).any(|t| !o.inside(t, w, h)))
        .collect();
    Ok(Scene {
        spec: spec.clone(),
        frames,
        flows,
        masks,
        owners,
        clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanpathSpec {
    /// Fixation length in frames, inclusive range.
    pub min_duration: usize,
    pub max_duration: usize,
    /// Chance that a fixation targets an object rather than the background.
    pub object_probability: f64,
    /// Fraction of frames with all slots invalid.
    pub blink_rate: f64,
    /// Std (normalized, per axis) of background fixations around the frame center.
    pub background_spread: f64,
}

impl Default for ScanpathSpec {
    fn default() -> Self {
        Self {
            min_duration: 3,
            max_duration: 6,
            object_probability: 0.9,
            blink_rate: 0.05,
            background_spread: 0.1,
        }
    }
}

/// A pixel center off every object, drawn around the frame center; falls back to a
/// uniformly random free pixel when the draws keep landing on objects.
fn background_point(scene: &Scene, t: usize, spread: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let (w, h) = (scene.width(), scene.height());
    let normal = Normal::new(0.5, spread.max(1e-9)).expect("finite spread");
    for _ in 0..100 {
        let (x, y) = (normal.sample(rng), normal.sample(rng));
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            continue;
        }
        let (px, py) = (to_pixel(x, w).round() as usize, to_pixel(y, h).round() as usize);
        if scene.owners[t][py * w + px] == 0 {
            return [to_normalized(px as f64, w), to_normalized(py as f64, h)];
        }
    }
    let free: Vec<usize> = (0..w * h).filter(|&i| scene.owners[t][i] == 0).collect();
    let i = free.choose(rng).copied().unwrap_or_else(|| rng.gen_range(0..w * h));
    [to_normalized((i % w) as f64, w), to_normalized((i / w) as f64, h)]
}

/// What the eye is doing at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GazeTarget {
    Object(usize),
    Background([f64; 2]),
}

/// Fixation sequence over the scene. Object fixations track the object's center;
/// background fixations hold a center-biased point not covered by any object. All three slots
/// carry the same point; blink frames have every slot invalid.
pub fn gen_scanpath(scene: &Scene, spec: &ScanpathSpec, seed: u64) -> Result<(Vec<GazeFrame>, Vec<GazeTarget>)> {
    if spec.min_duration == 0 || spec.max_duration < spec.min_duration {
        return Err(Error::Invalid("fixation durations must satisfy 1 ≤ min ≤ max".into()));
    }
    if !(0.0..=1.0).contains(&spec.object_probability) || !(0.0..=1.0).contains(&spec.blink_rate) {
        return Err(Error::Invalid("probabilities must be in [0,1]".into()));
    }
    let n_obj = scene.spec.objects.len();
    if n_obj == 0 {
        return Err(Error::Invalid("scanpath needs at least one object".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = Vec::with_capacity(scene.len());
    let mut last_object = None;
    while targets.len() < scene.len() {
        let t0 = targets.len();
        let duration = rng.gen_range(spec.min_duration..=spec.max_duration);
        let target = if rng.gen_bool(spec.object_probability) {
            let mut k = rng.gen_range(0..n_obj);
            if n_obj > 1 && Some(k) == last_object {
                k = (k + 1 + rng.gen_range(0..n_obj - 1)) % n_obj;
            }
            last_object = Some(k);
            GazeTarget::Object(k)
        } else {
            last_object = None;
            GazeTarget::Background(background_point(scene, t0, spec.background_spread, &mut rng))
        };
        for _ in 0..duration.min(scene.len() - t0) {
            targets.push(target);
        }
    }
    let gaze = targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            if rng.gen_bool(spec.blink_rate) {
                return GazeFrame::blink(t);
            }
            let [x, y] = match *target {
                GazeTarget::Object(k) => scene.object_center(k, t),
                GazeTarget::Background(p) => p,
            };
            GazeFrame::fixation(t, x, y)
        })
        .collect();
    Ok((gaze, targets))
}

/// Oracle awareness: the recursive dynamics driven by the true scanpath and exact flow.
pub fn gen_awareness_gt(
    scene: &Scene,
    gaze: &[GazeFrame],
    config: &EstimatorConfig,
    weights: &LossWeights,
) -> Result<AwarenessSequence> {
    recursive_run(gaze, &scene.flows, scene.width(), scene.height(), config, weights)
}

/// Relative frequency of object, edge and background annotation sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationMix {
    pub object: f64,
    pub edge: f64,
    pub background: f64,
}

impl Default for AnnotationMix {
    fn default() -> Self {
        Self {
            object: 0.5,
            edge: 0.2,
            background: 0.3,
        }
    }
}

/// Quantizes an awareness value to the 5-level annotation scale mapped onto `[0,1]`.
pub fn quantize_label(a: f64) -> f64 {
    (a.clamp(0.0, 1.0) * 4.0).round() / 4.0
}

fn is_edge(scene: &Scene, t: usize, x: usize, y: usize) -> bool {
    let (w, h) = (scene.width(), scene.height());
    let own = scene.owners[t][y * w + x];
    if own == 0 {
        return false;
    }
    let neighbours = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
    neighbours.iter().any(|(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 || scene.owners[t][ny as usize * w + nx as usize] != own
    })
}

/// Samples `n` annotation sites at pixel centers according to `mix` and labels them
/// with the quantized oracle awareness. Categories without any pixel at the drawn
/// frame fall back to uniformly random sites.
pub fn gen_annotations(
    scene: &Scene,
    awareness: &AwarenessSequence,
    n: usize,
    mix: &AnnotationMix,
    seed: u64,
) -> Result<Vec<AnnotationRecord>> {
    if n == 0 {
        return Err(Error::Invalid("annotation count must be at least 1".into()));
    }
    let total = mix.object + mix.edge + mix.background;
    if !(mix.object >= 0.0 && mix.edge >= 0.0 && mix.background >= 0.0 && total > 0.0) {
        return Err(Error::Invalid("annotation mix must be nonnegative with positive sum".into()));
    }
    if awareness.len() != scene.len() {
        return Err(Error::LengthMismatch {
            what: "awareness",
            expected: scene.len(),
            got: awareness.len(),
        });
    }
    let (w, h) = (scene.width(), scene.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen_range(0..scene.len());
        let u = rng.gen_range(0.0..total);
        let pool: Vec<usize> = if u < mix.object {
            (0..w * h).filter(|&i| scene.owners[t][i] > 0 && !is_edge(scene, t, i % w, i / w)).collect()
        } else if u < mix.object + mix.edge {
            (0..w * h).filter(|&i| is_edge(scene, t, i % w, i / w)).collect()
        } else {
            (0..w * h).filter(|&i| scene.owners[t][i] == 0).collect()
        };
        let i = pool.choose(&mut rng).copied().unwrap_or_else(|| rng.gen_range(0..w * h));
        let (x, y) = (i % w, i / w);
        let label = quantize_label(awareness.frames()[t].get(x, y));
        out.push(AnnotationRecord::new(
            t,
            to_normalized(x as f64, w),
            to_normalized(y as f64, h),
            label,
        )?);
    }
    Ok(out)
}

/// Everything the benchmarks need about one synthetic sequence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub scene: Scene,
    pub gaze: Vec<GazeFrame>,
    pub targets: Vec<GazeTarget>,
    pub awareness: AwarenessSequence,
    pub annotations: Vec<AnnotationRecord>,
}

/// Number of annotations in a generated package.
pub const DEFAULT_ANNOTATIONS: usize = 400;

/// Generates scene, scanpath, oracle awareness and annotations from one seed.
pub fn gen_ground_truth(
    spec: &SceneSpec,
    scanpath: &ScanpathSpec,
    n_annotations: usize,
    config: &EstimatorConfig,
    weights: &LossWeights,
) -> Result<GroundTruth> {
    let scene = gen_scene(spec)?;
    let (gaze, targets) = gen_scanpath(&scene, scanpath, spec.seed.wrapping_add(1))?;
    let awareness = gen_awareness_gt(&scene, &gaze, config, weights)?;
    let annotations = gen_annotations(
        &scene,
        &awareness,
        n_annotations,
        &AnnotationMix::default(),
        spec.seed.wrapping_add(2),
    )?;
    Ok(GroundTruth {
        scene,
        gaze,
        targets,
        awareness,
        annotations,
    })
}

/// Writes a scene package: `scene.json`, `frame_*.pgm`, `mask_*.pgm` (object union),
/// `flow.mflo`, `gaze.jsonl` (true scanpath), `awareness_*.pgm` and `annotations.csv`.
pub fn write_package(dir: &Path, gt: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let spec = serde_json::to_string_pretty(&gt.scene.spec).expect("scene spec serializes");
    io::write_text(&dir.join("scene.json"), &(spec + "\n"))?;
    io::write_pgm_sequence(dir, "frame", &gt.scene.frames)?;
    let masks: Vec<Heatmap> = (0..gt.scene.len()).map(|t| gt.scene.object_map(t)).collect();
    io::write_pgm_sequence(dir, "mask", &masks)?;
    io::write_flow(&dir.join("flow.mflo"), &gt.scene.flows)?;
    io::write_gaze_jsonl(&dir.join("gaze.jsonl"), &gt.gaze)?;
    io::write_pgm_sequence(dir, "awareness", gt.awareness.frames())?;
    io::write_annotations_csv(&dir.join("annotations.csv"), &gt.annotations)?;
    Ok(())
}

/// A scene package read back from disk. Only frames, flow and gaze are required;
/// annotations and oracle awareness are empty when their files are absent.
#[derive(Debug, Clone)]
pub struct Package {
    pub frames: Vec<Heatmap>,
    pub flows: Vec<FlowField>,
    pub gaze: Vec<GazeFrame>,
    pub annotations: Vec<AnnotationRecord>,
    pub awareness: Vec<Heatmap>,
}

impl Package {
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

pub fn read_package(dir: &Path) -> Result<Package> {
    let frames = io::read_pgm_sequence(dir, "frame")?;
    let Some(first) = frames.first() else {
        return Err(Error::Format {
            path: dir.display().to_string(),
            msg: "no frame_000000.pgm".into(),
        });
    };
    let (w, h) = first.dims();
    for f in &frames {
        f.check_dims(w, h)?;
    }
    let flows = io::read_flow(&dir.join("flow.mflo"))?;
    if flows.len() + 1 != frames.len() && flows.len() != frames.len() {
        return Err(Error::LengthMismatch {
            what: "flow fields",
            expected: frames.len() - 1,
            got: flows.len(),
        });
    }
    for f in &flows {
        if f.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                got: f.dims(),
            });
        }
    }
    let gaze = io::read_gaze_jsonl(&dir.join("gaze.jsonl"))?;
    if gaze.len() != frames.len() {
        return Err(Error::LengthMismatch {
            what: "gaze frames",
            expected: frames.len(),
            got: gaze.len(),
        });
    }
    let ann_path = dir.join("annotations.csv");
    let annotations = if ann_path.exists() {
        io::read_annotations_csv(&ann_path)?
    } else {
        Vec::new()
    };
    let awareness = io::read_pgm_sequence(dir, "awareness")?;
    if !awareness.is_empty() && awareness.len() != frames.len() {
        return Err(Error::LengthMismatch {
            what: "awareness maps",
            expected: frames.len(),
            got: awareness.len(),
        });
    }
    Ok(Package {
        frames,
        flows,
        gaze,
        annotations,
        awareness,
    })
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}
