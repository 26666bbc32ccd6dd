//! Synthetic scenes of coloured shapes with rule-based relations. Every
//! relation is a total predicate over rasterized masks, so annotations are
//! exact and complete.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scene::{split_vocabulary, BinaryMask, Dataset, DatasetError, ObjectInstance, RelationVocabulary, RgbImage, SceneRecord, Triplet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown relation rule `{0}`")]
    UnknownRule(String),
    #[error("unknown colour `{0}`")]
    UnknownColor(String),
    #[error("scene {scene}: could not place {objects} objects on a {height}x{width} canvas after {attempts} attempts")]
    Infeasible {
        scene: usize,
        objects: usize,
        height: usize,
        width: usize,
        attempts: usize,
    },
    #[error("invalid synth config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    /// Raster half-extent giving roughly the area of a circle of radius `size`.
    pub fn extent(self, size: f64) -> usize {
        let k = match self {
            Shape::Circle => 1.0,
            Shape::Square => 0.886,
            Shape::Triangle => 1.25,
        };
        ((size * k).round() as usize).max(1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

pub const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [230, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [50, 80, 235]),
    ("yellow", [235, 220, 40]),
    ("cyan", [40, 220, 220]),
    ("magenta", [220, 50, 220]),
    ("white", [245, 245, 245]),
    ("orange", [245, 140, 30]),
];

pub fn color_rgb(name: &str) -> Option<[u8; 3]> {
    COLORS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

/// Primitive rules; any `"A and B"` over these is also accepted.
pub const PRIMITIVE_RULES: [&str; 10] = [
    "left of",
    "right of",
    "above",
    "below",
    "touching",
    "larger than",
    "smaller than",
    "same shape as",
    "same color as",
    "near",
];

/// Area ratio at which one object counts as larger than another.
pub const LARGER_RATIO: f64 = 1.5;
/// Gap (pixels, Chebyshev distance between masks) up to which untouching
/// objects are near.
pub const NEAR_GAP: usize = 4;
/// Directional rules need bounding-box centres within this many pixels
/// across the direction of travel.
pub const ALIGN_TOL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<Shape>,
    pub colors: Vec<String>,
    /// Range of ordinary object sizes (circle radius; other shapes are
    /// scaled to a similar area).
    pub min_radius: usize,
    pub max_radius: usize,
    /// Probability that an object is enlarged by `large_scale`.
    pub large_prob: f64,
    pub large_scale: f64,
    pub rules: Vec<String>,
    /// Held-out rules; when absent, `base_ratio` of the rules go to base by
    /// a seeded shuffle.
    pub novel: Option<Vec<String>>,
    pub base_ratio: f64,
    /// Probability that an object is placed next to an earlier one (flush,
    /// or backed off by up to two pixels); other placements keep `min_gap`.
    pub touch_prob: f64,
    pub min_gap: usize,
    /// Objects in one scene never share a colour.
    pub distinct_colors: bool,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 100,
            height: 80,
            width: 80,
            min_objects: 3,
            max_objects: 4,
            shapes: vec![Shape::Circle, Shape::Square, Shape::Triangle],
            colors: COLORS.iter().map(|(n, _)| n.to_string()).collect(),
            min_radius: 6,
            max_radius: 6,
            large_prob: 0.06,
            large_scale: 1.6,
            rules: PRIMITIVE_RULES[..8].iter().map(|s| s.to_string()).collect(),
            novel: None,
            base_ratio: 0.7,
            touch_prob: 0.2,
            min_gap: 6,
            distinct_colors: true,
            max_attempts: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.shapes.is_empty() || self.colors.is_empty() {
            return bad("shapes and colors must be non-empty");
        }
        if self.min_radius == 0 || self.min_radius > self.max_radius {
            return bad("need 1 <= min_radius <= max_radius");
        }
        if !(0.0..=1.0).contains(&self.large_prob) || self.large_scale < 1.0 {
            return bad("need large_prob in [0, 1] and large_scale >= 1");
        }
        let scale = if self.large_prob > 0.0 { self.large_scale } else { 1.0 };
        let biggest = Shape::Triangle.extent(self.max_radius as f64 * scale);
        if 2 * biggest + 1 > self.height.min(self.width) {
            return bad("max_radius does not fit the canvas");
        }
        if self.distinct_colors && self.colors.len() < self.max_objects {
            return bad("distinct_colors needs at least max_objects colours");
        }
        for c in &self.colors {
            color_rgb(c).ok_or_else(|| SynthError::UnknownColor(c.clone()))?;
        }
        for r in &self.rules {
            Rule::parse(r)?;
        }
        if let Some(novel) = &self.novel {
            if let Some(n) = novel.iter().find(|n| !self.rules.contains(n)) {
                return Err(SynthError::Invalid(format!("novel rule `{n}` is not in rules")));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn object_classes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.colors {
            for s in &self.shapes {
                out.push(format!("{c} {}", s.name()));
            }
        }
        out
    }

    pub fn vocabulary(&self) -> Result<RelationVocabulary, SynthError> {
        Ok(match &self.novel {
            Some(novel) => RelationVocabulary::new(
                self.rules.iter().filter(|r| !novel.contains(r)).cloned().collect(),
                novel.clone(),
            )?,
            None => split_vocabulary(&self.rules, self.base_ratio, self.seed)?,
        })
    }
}

/// A placed object with its exact raster.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub shape: Shape,
    pub color: String,
    pub center: (i64, i64),
    pub radius: usize,
    pub mask: BinaryMask,
}

impl SynthObject {
    pub fn category(&self) -> String {
        format!("{} {}", self.color, self.shape.name())
    }
}

/// Object geometry the predicates read.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub area: usize,
}

pub fn geometry(mask: &BinaryMask) -> Option<Geometry> {
    let (h, w) = mask.dims();
    let (mut r0, mut r1, mut c0, mut c1, mut area) = (usize::MAX, 0, usize::MAX, 0, 0);
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
                area += 1;
            }
        }
    }
    (area > 0).then_some(Geometry {
        rows: (r0, r1),
        cols: (c0, c1),
        area,
    })
}

/// Span centres within `ALIGN_TOL` (compared in doubled coordinates).
fn aligned(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 + a.1).abs_diff(b.0 + b.1) <= 2 * ALIGN_TOL
}

/// Smallest Chebyshev distance between a pixel of `a` and a pixel of `b`
/// (0 when they overlap).
pub fn mask_gap(a: &BinaryMask, b: &BinaryMask) -> usize {
    let (h, w) = a.dims();
    let pa: Vec<(i64, i64)> = (0..h * w).filter(|k| a.bits()[*k]).map(|k| ((k / w) as i64, (k % w) as i64)).collect();
    let pb: Vec<(i64, i64)> = (0..h * w).filter(|k| b.bits()[*k]).map(|k| ((k / w) as i64, (k % w) as i64)).collect();
    let mut best = usize::MAX;
    for &(ra, ca) in &pa {
        for &(rb, cb) in &pb {
            let d = (ra - rb).unsigned_abs().max((ca - cb).unsigned_abs()) as usize;
            best = best.min(d);
            if best == 0 {
                return 0;
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Primitive {
    LeftOf,
    RightOf,
    Above,
    Below,
    Touching,
    LargerThan,
    SmallerThan,
    SameShape,
    SameColor,
    Near,
}

/// A registered relation predicate: a conjunction of primitives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    parts: Vec<Primitive>,
}

impl Rule {
    pub fn parse(name: &str) -> Result<Self, SynthError> {
        let parts = name
            .split(" and ")
            .map(|p| {
                Ok(match p.trim() {
                    "left of" => Primitive::LeftOf,
                    "right of" => Primitive::RightOf,
                    "above" => Primitive::Above,
                    "below" => Primitive::Below,
                    "touching" => Primitive::Touching,
                    "larger than" => Primitive::LargerThan,
                    "smaller than" => Primitive::SmallerThan,
                    "same shape as" => Primitive::SameShape,
                    "same color as" => Primitive::SameColor,
                    "near" => Primitive::Near,
                    _ => return Err(SynthError::UnknownRule(name.to_string())),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { parts })
    }

    /// Whether `(a, b)` satisfies the rule; `gap` is `mask_gap(a, b)`.
    pub fn holds(&self, a: &SynthObject, ga: &Geometry, b: &SynthObject, gb: &Geometry, gap: usize) -> bool {
        self.parts.iter().all(|p| match p {
            Primitive::LeftOf => ga.cols.1 < gb.cols.0 && aligned(ga.rows, gb.rows),
            Primitive::RightOf => gb.cols.1 < ga.cols.0 && aligned(ga.rows, gb.rows),
            Primitive::Above => ga.rows.1 < gb.rows.0 && aligned(ga.cols, gb.cols),
            Primitive::Below => gb.rows.1 < ga.rows.0 && aligned(ga.cols, gb.cols),
            Primitive::Touching => gap == 1,
            Primitive::LargerThan => ga.area as f64 >= LARGER_RATIO * gb.area as f64,
            Primitive::SmallerThan => gb.area as f64 >= LARGER_RATIO * ga.area as f64,
            Primitive::SameShape => a.shape == b.shape,
            Primitive::SameColor => a.color == b.color,
            Primitive::Near => gap > 1 && gap <= NEAR_GAP,
        })
    }
}

/// Exact raster of a shape centred at `center` (pixel units).
pub fn rasterize(shape: Shape, center: (i64, i64), radius: usize, height: usize, width: usize) -> BinaryMask {
    let r = radius as f64;
    let (cy, cx) = (center.0 as f64 + 0.5, center.1 as f64 + 0.5);
    BinaryMask::from_fn(height, width, |row, col| {
        let (y, x) = (row as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
        match shape {
            Shape::Circle => x * x + y * y <= r * r,
            Shape::Square => x.abs() <= r && y.abs() <= r,
            // apex up, base of width 2r at the bottom
            Shape::Triangle => y >= -r && y <= r && x.abs() <= (y + r) / 2.0,
        }
    })
}

fn fits(center: (i64, i64), radius: usize, height: usize, width: usize) -> bool {
    let r = radius as i64;
    center.0 - r >= 0 && center.1 - r >= 0 && center.0 + r < height as i64 && center.1 + r < width as i64
}

fn place_scene(cfg: &SynthConfig, index: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SynthObject>, SynthError> {
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut palette = cfg.colors.clone();
    let mut objects: Vec<SynthObject> = Vec::with_capacity(n);
    let mut occupied = BinaryMask::new(cfg.height, cfg.width);
    for _ in 0..n {
        let shape = cfg.shapes[rng.gen_range(0..cfg.shapes.len())];
        let color = if cfg.distinct_colors {
            palette.remove(rng.gen_range(0..palette.len()))
        } else {
            palette[rng.gen_range(0..palette.len())].clone()
        };
        let mut size = rng.gen_range(cfg.min_radius..=cfg.max_radius) as f64;
        if rng.gen_bool(cfg.large_prob) {
            size *= cfg.large_scale;
        }
        let radius = shape.extent(size);
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            let snapped = !objects.is_empty() && rng.gen_bool(cfg.touch_prob);
            let center = if snapped {
                let anchor = &objects[rng.gen_range(0..objects.len())];
                let (dy, dx): (i64, i64) = [(0, 1), (0, -1), (1, 0), (-1, 0)][rng.gen_range(0..4)];
                let spread = anchor.radius as i64 / 2;
                let offset = rng.gen_range(-spread..=spread);
                // slide towards the anchor until the next step would overlap
                let far = (anchor.radius + radius + 2) as i64;
                let backoff = rng.gen_range(0..=2i64);
                let mut best = None;
                for d in (1..=far + 3).rev() {
                    let c = (
                        anchor.center.0 + dy * d + dx.abs() * offset,
                        anchor.center.1 + dx * d + dy.abs() * offset,
                    );
                    if !fits(c, radius, cfg.height, cfg.width) {
                        continue;
                    }
                    let m = rasterize(shape, c, radius, cfg.height, cfg.width);
                    if m.intersection_area(&anchor.mask) > 0 {
                        break;
                    }
                    best = Some(c);
                }
                match best {
                    Some((y, x)) => (y + dy * backoff, x + dx * backoff),
                    None => continue,
                }
            } else {
                let r = radius as i64;
                (
                    rng.gen_range(r..cfg.height as i64 - r),
                    rng.gen_range(r..cfg.width as i64 - r),
                )
            };
            if !fits(center, radius, cfg.height, cfg.width) {
                continue;
            }
            let mask = rasterize(shape, center, radius, cfg.height, cfg.width);
            let clear = if snapped {
                mask.intersection_area(&occupied) == 0
            } else {
                objects.iter().all(|o| mask_gap(&mask, &o.mask) >= cfg.min_gap)
            };
            if clear && !mask.is_empty() {
                placed = Some((center, mask));
                break;
            }
        }
        let (center, mask) = placed.ok_or(SynthError::Infeasible {
            scene: index,
            objects: n,
            height: cfg.height,
            width: cfg.width,
            attempts: cfg.max_attempts,
        })?;
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                if mask.get(r, c) {
                    occupied.set(r, c, true);
                }
            }
        }
        objects.push(SynthObject {
            shape,
            color,
            center,
            radius,
            mask,
        });
    }
    Ok(objects)
}

/// Every `(subject, rule, object)` over ordered pairs for which the rule holds.
pub fn annotate(objects: &[SynthObject], rules: &[(String, Rule)]) -> Vec<Triplet> {
    let geo: Vec<Geometry> = objects.iter().map(|o| geometry(&o.mask).expect("placed objects are non-empty")).collect();
    let mut out = Vec::new();
    for i in 0..objects.len() {
        for j in 0..objects.len() {
            if i == j {
                continue;
            }
            let gap = mask_gap(&objects[i].mask, &objects[j].mask);
            for (name, rule) in rules {
                if rule.holds(&objects[i], &geo[i], &objects[j], &geo[j], gap) {
                    out.push(Triplet::gt(i, j, name.clone()));
                }
            }
        }
    }
    out
}

pub fn render(objects: &[SynthObject], height: usize, width: usize) -> RgbImage {
    let mut img = RgbImage::new(height, width);
    for r in 0..height {
        for c in 0..width {
            img.put(r, c, [24, 24, 28]);
        }
    }
    for o in objects {
        let rgb = color_rgb(&o.color).unwrap_or([128, 128, 128]);
        for r in 0..height {
            for c in 0..width {
                if o.mask.get(r, c) {
                    img.put(r, c, rgb);
                }
            }
        }
    }
    img
}

/// Generates one scene from its own RNG stream.
pub fn generate_scene(cfg: &SynthConfig, index: usize, rules: &[(String, Rule)]) -> Result<(SceneRecord, Vec<SynthObject>), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let objects = place_scene(cfg, index, &mut rng)?;
    let record = SceneRecord {
        scene_id: format!("synth-{index:05}"),
        image: render(&objects, cfg.height, cfg.width),
        objects: objects
            .iter()
            .enumerate()
            .map(|(k, o)| ObjectInstance {
                instance_id: k,
                category: o.category(),
                mask: o.mask.clone(),
            })
            .collect(),
        gt_triplets: annotate(&objects, rules),
    };
    Ok((record, objects))
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let rules: Vec<(String, Rule)> = cfg
        .rules
        .iter()
        .map(|r| Ok((r.clone(), Rule::parse(r)?)))
        .collect::<Result<_, SynthError>>()?;
    let scenes = (0..cfg.scenes)
        .map(|i| generate_scene(cfg, i, &rules).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        relations: cfg.vocabulary()?,
        object_classes: cfg.object_classes(),
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub config_hash: String,
    pub seed: u64,
    pub scenes: usize,
    pub triplets: usize,
    pub pairs: usize,
    pub pairs_with_relation: usize,
    pub relation_counts: BTreeMap<String, usize>,
}

pub fn manifest(cfg: &SynthConfig, dataset: &Dataset) -> SynthManifest {
    let mut relation_counts = BTreeMap::new();
    let (mut pairs, mut with_rel, mut triplets) = (0, 0, 0);
    for s in &dataset.scenes {
        let n = s.objects.len();
        pairs += n * n.saturating_sub(1);
        let mut seen = std::collections::BTreeSet::new();
        for t in &s.gt_triplets {
            *relation_counts.entry(t.relation.clone()).or_insert(0) += 1;
            seen.insert((t.subject_id, t.object_id));
            triplets += 1;
        }
        with_rel += seen.len();
    }
    SynthManifest {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        scenes: dataset.scenes.len(),
        triplets,
        pairs,
        pairs_with_relation: with_rel,
        relation_counts,
    }
}
