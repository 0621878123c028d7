//! Scenes of non-overlapping colored shapes and their exact rasterization.

use std::fmt;

use gres_core::raster::{Mask, RgbImage};
use gres_core::{GresError, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BACKGROUND: [u8; 3] = [128, 128, 128];

/// Placement gives up after this many rejected draws for a single object.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Circle => "circles",
            Shape::Square => "squares",
            Shape::Triangle => "triangles",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    White,
    Black,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::White,
        Color::Black,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Black => "black",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 255, 0],
            Color::Blue => [0, 0, 255],
            Color::Yellow => [255, 255, 0],
            Color::White => [255, 255, 255],
            Color::Black => [0, 0, 0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ObjectSpec {
    pub id: usize,
    pub shape: Shape,
    pub color: Color,
    /// Center column and row, in pixels.
    pub x: i64,
    pub y: i64,
    /// Radius or half-side, in pixels.
    pub size: i64,
}

impl ObjectSpec {
    /// Exact inside test at integer pixel centers.
    pub fn contains(&self, px: i64, py: i64) -> bool {
        let (dx, dy, s) = (px - self.x, py - self.y, self.size);
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= s * s,
            Shape::Square => dx.abs() <= s && dy.abs() <= s,
            // apex (x, y−s), base corners (x±s, y+s)
            Shape::Triangle => dy <= s && 2 * dx.abs() <= dy + s,
        }
    }

    fn fits(&self, h: usize, w: usize) -> bool {
        self.x - self.size >= 0
            && self.y - self.size >= 0
            && self.x + self.size < w as i64
            && self.y + self.size < h as i64
    }

    /// Bounding boxes are at least `gap` pixels apart along some axis.
    fn separated(&self, other: &ObjectSpec, gap: i64) -> bool {
        let reach = self.size + other.size + gap;
        (self.x - other.x).abs() > reach || (self.y - other.y).abs() > reach
    }
}

impl fmt::Display for ObjectSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}@{},{}r{}",
            self.id,
            self.color.word(),
            self.shape.word(),
            self.x,
            self.y,
            self.size
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectSpec>,
    pub seed: u64,
}

impl Scene {
    pub fn object(&self, id: usize) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: i64,
    pub max_size: i64,
    /// Minimum empty pixels between object bounding boxes.
    pub gap: i64,
}

impl SceneConfig {
    pub fn canvas(side: usize) -> Self {
        SceneConfig {
            height: side,
            width: side,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 2 || self.min_objects > self.max_objects || self.max_objects > 6 {
            return Err(GresError::Input(format!(
                "object count range {}..={} must lie within 2..=6",
                self.min_objects, self.max_objects
            )));
        }
        if self.min_size < 1 || self.min_size > self.max_size || self.gap < 0 {
            return Err(GresError::Input(
                "object sizes must be positive and ordered".into(),
            ));
        }
        if (2 * self.max_size + 1) as usize > self.height.min(self.width) {
            return Err(GresError::Input(format!(
                "objects of size {} do not fit a {}x{} canvas",
                self.max_size, self.height, self.width
            )));
        }
        Ok(())
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 48,
            width: 48,
            min_objects: 2,
            max_objects: 4,
            min_size: 6,
            max_size: 10,
            gap: 2,
        }
    }
}

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(n);
    for id in 0..n {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let size = rng.gen_range(cfg.min_size..=cfg.max_size);
            let cand = ObjectSpec {
                id,
                shape: Shape::ALL[rng.gen_range(0..Shape::ALL.len())],
                color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
                x: rng.gen_range(size..cfg.width as i64 - size),
                y: rng.gen_range(size..cfg.height as i64 - size),
                size,
            };
            if cand.fits(cfg.height, cfg.width)
                && objects.iter().all(|o| o.separated(&cand, cfg.gap))
            {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(o) => objects.push(o),
            None => {
                return Err(GresError::Input(format!(
                "could not place object {id} after {MAX_PLACEMENT_ATTEMPTS} attempts (seed {seed})"
            )))
            }
        }
    }
    let first = (objects[0].shape, objects[0].color);
    if objects.iter().all(|o| (o.shape, o.color) == first) {
        return Err(GresError::Input(format!(
            "scene {seed} has a single category"
        )));
    }
    Ok(Scene {
        height: cfg.height,
        width: cfg.width,
        objects,
        seed,
    })
}

pub fn object_mask(scene: &Scene, obj: &ObjectSpec) -> Mask {
    let mut m = Mask::empty(scene.height, scene.width);
    for y in 0..scene.height {
        for x in 0..scene.width {
            if obj.contains(x as i64, y as i64) {
                m.set(y, x, true);
            }
        }
    }
    m
}

pub fn render(scene: &Scene) -> RgbImage {
    let mut img = RgbImage::filled(scene.height, scene.width, BACKGROUND);
    for o in &scene.objects {
        for y in 0..scene.height {
            for x in 0..scene.width {
                if o.contains(x as i64, y as i64) {
                    img.set_pixel(y, x, o.color.rgb());
                }
            }
        }
    }
    img
}

/// Union of the selected objects' rasterizations.
pub fn rasterize_mask(scene: &Scene, target_ids: &[usize]) -> Result<Mask> {
    let mut m = Mask::empty(scene.height, scene.width);
    for &id in target_ids {
        let obj = scene
            .object(id)
            .ok_or_else(|| GresError::Input(format!("scene has no object {id}")))?;
        let om = object_mask(scene, obj);
        for (dst, src) in m.data.iter_mut().zip(&om.data) {
            *dst |= *src;
        }
    }
    Ok(m)
}
