use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayerSet, NodeId, NodeKind, NodeSpec, Normalization};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

const STREAM_LATENT: u64 = 1;
const STREAM_SHADE: u64 = 2;
const STREAM_SENSOR: u64 = 3;

const BAYER4: [[u8; 4]; 4] = [[0, 8, 2, 10], [12, 4, 14, 6], [3, 11, 1, 9], [15, 7, 13, 5]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
    /// Segmentation bands.
    pub classes: usize,
    /// Lattice cell of the coarsest noise octave, in pixels.
    pub base_cell: usize,
    pub octaves: usize,
    pub persistence: f64,
    /// Steepness of the tanh contrast stretch applied to the raw noise.
    pub contrast: f64,
    /// Half-width of the uniform per-pixel noise added to the rgb channels.
    pub sensor_noise: f64,
    /// Depth gradient (meters per pixel) mapped to a 45 degree normal.
    pub slope_scale: f64,
    /// Ground size of one pixel in meters.
    pub cell_meters: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            height: 32,
            width: 32,
            classes: 12,
            base_cell: 16,
            octaves: 3,
            persistence: 0.5,
            contrast: 4.0,
            sensor_noise: 0.07,
            slope_scale: 4.0,
            cell_meters: 2.0,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid("world extents must be at least 8"));
        }
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return Err(Error::invalid("segmentation needs 2..=65535 classes"));
        }
        if self.octaves == 0 || self.base_cell == 0 {
            return Err(Error::invalid("noise needs at least one octave and a positive cell"));
        }
        if !(self.slope_scale > 0.0 && self.cell_meters > 0.0 && self.contrast > 0.0) {
            return Err(Error::invalid("scales must be positive"));
        }
        Ok(())
    }
}

/// The eight representations of a synthetic scene, in node-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Rgb,
    Depth,
    NormalsCamera,
    NormalsWorld,
    Segmentation,
    Wireframe,
    Halftone,
    Pose,
}

impl Representation {
    pub const ALL: [Representation; 8] = [
        Representation::Rgb,
        Representation::Depth,
        Representation::NormalsCamera,
        Representation::NormalsWorld,
        Representation::Segmentation,
        Representation::Wireframe,
        Representation::Halftone,
        Representation::Pose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Rgb => "rgb",
            Representation::Depth => "depth",
            Representation::NormalsCamera => "normals_camera",
            Representation::NormalsWorld => "normals_world",
            Representation::Segmentation => "segmentation",
            Representation::Wireframe => "wireframe",
            Representation::Halftone => "halftone",
            Representation::Pose => "pose",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn node_id(self) -> NodeId {
        NodeId(self as u32)
    }

    pub fn is_sensor(self) -> bool {
        self == Representation::Rgb
    }
}

/// Node specs for every representation, ids matching [`Representation::node_id`].
pub fn world_nodes(config: &WorldConfig) -> Vec<NodeSpec> {
    let h = config.height as f32;
    let w = config.width as f32;
    let cell = config.cell_meters as f32;
    let norm = |offset: Vec<f32>, scale: Vec<f32>| Some(Normalization { offset, scale });
    Representation::ALL
        .iter()
        .map(|&r| {
            let (kind, units, normalization) = match r {
                Representation::Rgb => (
                    NodeKind::ContinuousMap { channels: 3 },
                    "intensity",
                    norm(vec![0.5; 3], vec![0.25; 3]),
                ),
                Representation::Depth => (
                    NodeKind::ContinuousMap { channels: 1 },
                    "meters",
                    norm(vec![40.0], vec![20.0]),
                ),
                Representation::NormalsCamera | Representation::NormalsWorld => (
                    NodeKind::ContinuousMap { channels: 2 },
                    "degrees",
                    norm(vec![0.0; 2], vec![30.0; 2]),
                ),
                Representation::Segmentation => (
                    NodeKind::CategoricalMap { classes: config.classes },
                    "class",
                    None,
                ),
                Representation::Wireframe | Representation::Halftone => {
                    (NodeKind::CategoricalMap { classes: 2 }, "class", None)
                }
                Representation::Pose => (
                    NodeKind::Vector { dimension: 6 },
                    "meters,meters,meters,degrees,degrees,degrees",
                    norm(
                        vec![w * cell / 2.0, h * cell / 2.0, 40.0, 0.0, 0.0, 0.0],
                        vec![w * cell / 8.0, h * cell / 8.0, 8.0, 8.0, 8.0, 8.0],
                    ),
                ),
            };
            NodeSpec {
                id: r.node_id(),
                name: r.name().to_string(),
                kind,
                units: units.to_string(),
                sensor: r.is_sensor(),
                normalization,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    /// Contrast-stretched latent field in [0, 1], row-major.
    pub latent: Vec<f64>,
    pub layers: BTreeMap<Representation, Tensor>,
}

impl Scene {
    pub fn layer(&self, r: Representation) -> &Tensor {
        &self.layers[&r]
    }

    pub fn to_layer_set(&self) -> LayerSet {
        self.layers.iter().map(|(r, t)| (r.node_id(), t.clone())).collect()
    }
}

pub fn depth_of_latent(h: f64) -> f64 {
    10.0 + 40.0 * h + 30.0 * h * h
}

pub fn band_of_latent(h: f64, classes: usize) -> u16 {
    ((h * classes as f64).floor() as usize).min(classes - 1) as u16
}

/// 1 where any 4-neighbour carries a different label.
pub fn boundary_map(labels: &[u16], height: usize, width: usize) -> Vec<u16> {
    let mut out = vec![0u16; labels.len()];
    for y in 0..height {
        for x in 0..width {
            let c = labels[y * width + x];
            let differs = (y > 0 && labels[(y - 1) * width + x] != c)
                || (y + 1 < height && labels[(y + 1) * width + x] != c)
                || (x > 0 && labels[y * width + x - 1] != c)
                || (x + 1 < width && labels[y * width + x + 1] != c);
            out[y * width + x] = differs as u16;
        }
    }
    out
}

/// Central differences (one-sided on the border) of a row-major field.
fn gradients(field: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; field.len()];
    let mut gy = vec![0.0; field.len()];
    let at = |y: usize, x: usize| field[y * width + x];
    for y in 0..height {
        for x in 0..width {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(width - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(height - 1));
            gx[y * width + x] = (at(y, x1) - at(y, x0)) / (x1 - x0) as f64;
            gy[y * width + x] = (at(y1, x) - at(y0, x)) / (y1 - y0) as f64;
        }
    }
    (gx, gy)
}

/// Generates every representation of scene `id`. Each layer is a pure
/// function of `(config, id)`.
pub fn generate_scene(config: &WorldConfig, id: u64) -> Result<Scene> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let n = h * w;

    let raw = super::noise::value_noise(
        derive_seed(config.seed, &[id, STREAM_LATENT]),
        h,
        w,
        config.base_cell,
        config.octaves,
        config.persistence,
    );
    let k = config.contrast;
    let latent: Vec<f64> = raw
        .iter()
        .map(|&v| 0.5 + 0.5 * (k * (v - 0.5)).tanh() / (k / 2.0).tanh())
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let shade = super::noise::value_noise(derive_seed(config.seed, &[id, STREAM_SHADE]), h, w, config.base_cell, 2, 0.5);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[id, STREAM_SENSOR]));

    let mut rgb = Vec::with_capacity(n * 3);
    for i in 0..n {
        let l = latent[i];
        let s = 0.7 + 0.3 * shade[i];
        let channels = [
            0.15 + 0.8 * l,
            0.5 + 0.45 * (3.0 * std::f64::consts::PI * l).sin(),
            0.9 - 0.75 * l * l,
        ];
        for c in channels {
            let noise = config.sensor_noise * (2.0 * sensor_rng.gen::<f64>() - 1.0);
            rgb.push((s * c + noise) as f32);
        }
    }

    let depth: Vec<f64> = latent.iter().map(|&l| depth_of_latent(l)).collect();
    let (gx, gy) = gradients(&depth, h, w);
    let deg = |v: f64| v.atan().to_degrees();
    let s = config.slope_scale;
    let mut normals_camera = Vec::with_capacity(n * 2);
    let mut normals_world = Vec::with_capacity(n * 2);
    for i in 0..n {
        normals_camera.push(deg(gx[i] / s) as f32);
        normals_camera.push(deg(gy[i] / s) as f32);
        let r = std::f64::consts::FRAC_1_SQRT_2 / s;
        normals_world.push(deg((gx[i] + gy[i]) * r) as f32);
        normals_world.push(deg((gx[i] - gy[i]) * r) as f32);
    }

    let segmentation: Vec<u16> = latent.iter().map(|&l| band_of_latent(l, config.classes)).collect();
    let wireframe = boundary_map(&segmentation, h, w);

    let mut halftone = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gray = (rgb[3 * i] + rgb[3 * i + 1] + rgb[3 * i + 2]) as f64 / 3.0;
            let threshold = (BAYER4[y % 4][x % 4] as f64 + 0.5) / 16.0;
            halftone.push((gray > threshold) as u16);
        }
    }

    let mut mass = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let m = latent[y * w + x].powi(2);
            mass += m;
            cx += m * (x as f64 + 0.5);
            cy += m * (y as f64 + 0.5);
        }
    }
    let mass = mass.max(1e-12);
    let mean = |v: &[f32], stride: usize, offset: usize| {
        v.iter().skip(offset).step_by(stride).map(|&a| a as f64).sum::<f64>() / n as f64
    };
    let pose = vec![
        (cx / mass * config.cell_meters) as f32,
        (cy / mass * config.cell_meters) as f32,
        (depth.iter().sum::<f64>() / n as f64) as f32,
        mean(&normals_camera, 2, 0) as f32,
        mean(&normals_camera, 2, 1) as f32,
        mean(&normals_world, 2, 0) as f32,
    ];

    let mut layers = BTreeMap::new();
    layers.insert(Representation::Rgb, Tensor::from_f32(vec![h, w, 3], rgb)?);
    layers.insert(
        Representation::Depth,
        Tensor::from_f32(vec![h, w, 1], depth.iter().map(|&d| d as f32).collect())?,
    );
    layers.insert(Representation::NormalsCamera, Tensor::from_f32(vec![h, w, 2], normals_camera)?);
    layers.insert(Representation::NormalsWorld, Tensor::from_f32(vec![h, w, 2], normals_world)?);
    layers.insert(Representation::Segmentation, Tensor::from_labels(vec![h, w], segmentation)?);
    layers.insert(Representation::Wireframe, Tensor::from_labels(vec![h, w], wireframe)?);
    layers.insert(Representation::Halftone, Tensor::from_labels(vec![h, w], halftone)?);
    layers.insert(Representation::Pose, Tensor::from_f32(vec![6], pose)?);
    Ok(Scene { id, latent, layers })
}
