//! Scenes, objects, relation triplets, relation vocabularies and the
//! `openrel-v1` dataset format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_TAG: &str = "openrel-v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: malformed dataset JSON: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scene `{scene_id}`: {message}")]
    Invalid { scene_id: String, message: String },
    #[error("dataset: {0}")]
    Format(String),
    #[error("relation names collide after normalization: {}", .0.join("; "))]
    Collision(Vec<String>),
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Dense binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size mismatch");
        Self { height, width, bits }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_area(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    /// Run lengths over the row-major bits, starting with a (possibly empty)
    /// run of zeros.
    pub fn to_rle(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(height: usize, width: usize, counts: &[usize]) -> Result<Self, String> {
        let total: usize = counts.iter().sum();
        if total != height * width {
            return Err(format!("mask_rle covers {total} cells, expected {}", height * width));
        }
        let mut bits = Vec::with_capacity(total);
        for (i, &n) in counts.iter().enumerate() {
            bits.extend(std::iter::repeat(i % 2 == 1).take(n));
        }
        Ok(Self { height, width, bits })
    }
}

/// 8-bit RGB raster; channel values map to `[0, 1]` as `v / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        f64::from(self.data[(row * self.width + col) * 3 + channel]) / 255.0
    }

    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub instance_id: usize,
    pub category: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject_id: usize,
    pub object_id: usize,
    pub relation: String,
    /// Absent for ground truth, required for predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Triplet {
    pub fn gt(subject_id: usize, object_id: usize, relation: impl Into<String>) -> Self {
        Self {
            subject_id,
            object_id,
            relation: relation.into(),
            score: None,
        }
    }

    pub fn scored(subject_id: usize, object_id: usize, relation: impl Into<String>, score: f64) -> Self {
        Self {
            subject_id,
            object_id,
            relation: relation.into(),
            score: Some(score),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub image: RgbImage,
    pub objects: Vec<ObjectInstance>,
    pub gt_triplets: Vec<Triplet>,
}

impl SceneRecord {
    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn object_index(&self, instance_id: usize) -> Option<usize> {
        self.objects.iter().position(|o| o.instance_id == instance_id)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |message: String| DatasetError::Invalid {
            scene_id: self.scene_id.clone(),
            message,
        };
        let (h, w) = (self.image.height, self.image.width);
        if h == 0 || w == 0 {
            return Err(invalid("image has zero extent".into()));
        }
        if self.image.data.len() != h * w * 3 {
            return Err(invalid(format!(
                "image holds {} bytes, expected {}",
                self.image.data.len(),
                h * w * 3
            )));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.instance_id) {
                return Err(invalid(format!("duplicate object id {}", o.instance_id)));
            }
            if o.mask.dims() != (h, w) {
                return Err(invalid(format!(
                    "object {} mask is {:?}, image is {:?}",
                    o.instance_id,
                    o.mask.dims(),
                    (h, w)
                )));
            }
            if o.mask.is_empty() {
                return Err(invalid(format!("object {} has an empty mask", o.instance_id)));
            }
        }
        for t in &self.gt_triplets {
            for id in [t.subject_id, t.object_id] {
                if !ids.contains(&id) {
                    return Err(invalid(format!(
                        "triplet ({}, {}, {}) references unknown object id {id}",
                        t.subject_id, t.object_id, t.relation
                    )));
                }
            }
            if t.subject_id == t.object_id {
                return Err(invalid(format!("triplet relates object {} to itself", t.subject_id)));
            }
            if normalize_name(&t.relation).is_empty() {
                return Err(invalid("triplet has an empty relation name".into()));
            }
        }
        Ok(())
    }
}

/// Base and novel relation names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocabulary {
    pub base: Vec<String>,
    pub novel: Vec<String>,
}

impl RelationVocabulary {
    /// Validates disjointness and uniqueness under [`normalize_name`].
    /// Names are kept verbatim; collisions are reported, never merged.
    pub fn new(base: Vec<String>, novel: Vec<String>) -> Result<Self, DatasetError> {
        let collisions = find_collisions(base.iter().map(|s| ("base", s)).chain(novel.iter().map(|s| ("novel", s))));
        if !collisions.is_empty() {
            return Err(DatasetError::Collision(collisions));
        }
        Ok(Self { base, novel })
    }

    /// Accepts names verbatim and returns the collisions alongside.
    pub fn new_lenient(base: Vec<String>, novel: Vec<String>) -> (Self, Vec<String>) {
        let collisions = find_collisions(base.iter().map(|s| ("base", s)).chain(novel.iter().map(|s| ("novel", s))));
        (Self { base, novel }, collisions)
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.base.iter().chain(&self.novel)
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.novel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_base(&self, name: &str) -> bool {
        let n = normalize_name(name);
        self.base.iter().any(|b| normalize_name(b) == n)
    }

    pub fn is_novel(&self, name: &str) -> bool {
        let n = normalize_name(name);
        self.novel.iter().any(|b| normalize_name(b) == n)
    }

    /// Base-only vocabulary (used for closed-set evaluation of a base split).
    pub fn base_only(&self) -> Self {
        Self {
            base: self.base.clone(),
            novel: Vec::new(),
        }
    }
}

fn find_collisions<'a>(names: impl Iterator<Item = (&'a str, &'a String)>) -> Vec<String> {
    let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (list, name) in names {
        seen.entry(normalize_name(name))
            .or_default()
            .push(format!("{list}:{name:?}"));
    }
    seen.into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(k, v)| format!("`{k}` <- {}", v.join(", ")))
        .collect()
}

/// Seeded partition of `all` into base and novel relations with
/// `|base| = round(ratio · |all|)`. Both lists keep the input order.
pub fn split_vocabulary(all: &[String], ratio: f64, seed: u64) -> Result<RelationVocabulary, DatasetError> {
    if all.is_empty() {
        return Err(DatasetError::Format("cannot split an empty relation list".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Format(format!("split ratio {ratio} outside (0, 1)")));
    }
    let collisions = find_collisions(all.iter().map(|s| ("input", s)));
    if !collisions.is_empty() {
        return Err(DatasetError::Collision(collisions));
    }
    let n_base = (ratio * all.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: BTreeSet<usize> = order[..n_base].iter().copied().collect();
    let (base, novel) = all
        .iter()
        .enumerate()
        .fold((Vec::new(), Vec::new()), |(mut b, mut n), (i, name)| {
            if chosen.contains(&i) {
                b.push(name.clone());
            } else {
                n.push(name.clone());
            }
            (b, n)
        });
    Ok(RelationVocabulary { base, novel })
}

/// The 56 PSG predicate names.
pub const PSG_RELATIONS: [&str; 56] = [
    "over", "in front of", "beside", "on", "in", "attached to", "hanging from", "on back of",
    "falling off", "going down", "painted on", "walking on", "running on", "crossing",
    "standing on", "lying on", "sitting on", "flying over", "jumping over", "jumping from",
    "wearing", "holding", "carrying", "looking at", "guiding", "kissing", "eating", "drinking",
    "feeding", "biting", "catching", "picking", "playing with", "chasing", "climbing",
    "cleaning", "playing", "touching", "pushing", "pulling", "opening", "cooking", "talking to",
    "throwing", "slicing", "driving", "riding", "parked on", "driving on", "about to hit",
    "kicking", "swinging", "entering", "exiting", "enclosing", "leaning on",
];

/// Published PSG open-set base list, verbatim.
pub const PSG_OPEN_SET_BASE: [&str; 41] = [
    "over", "in front of", "beside", "on", "in", "hanging from", "on back of", "going down",
    "painted on", "walking on", "running on", "crossing", "lying on", "sitting on",
    "jumping over", "jumping from", "holding", "carrying", "guiding", "kissing", "drinking",
    "feeding", "catching", "picking", "chasing", "climbing", "playing", "touching", "pulling",
    "opening", "talking to", "throwing", "driving", "riding", "driving on", "about to hit",
    "swinging", "entering", "exiting", "enclosing", "leaning on",
];

/// Published PSG open-set novel list, verbatim (including the trailing-space
/// `"walking on "` and `"existing"` entries).
pub const PSG_OPEN_SET_NOVEL: [&str; 17] = [
    "attached to", "falling off", "walking on ", "standing on", "flying over", "wearing",
    "looking at", "eating", "biting", "playing with", "cleaning", "pushing", "cooking",
    "slicing", "parked on", "kicking", "existing",
];

/// Loads the published PSG open-set lists verbatim, returning the
/// vocabulary together with any normalization collisions.
pub fn psg_open_set_lists() -> (RelationVocabulary, Vec<String>) {
    RelationVocabulary::new_lenient(
        PSG_OPEN_SET_BASE.iter().map(|s| s.to_string()).collect(),
        PSG_OPEN_SET_NOVEL.iter().map(|s| s.to_string()).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub relations: RelationVocabulary,
    pub object_classes: Vec<String>,
    pub scenes: Vec<SceneRecord>,
}

// ---- on-disk format ----

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    relations: RelationVocabulary,
    objects: Vec<String>,
    scenes: Vec<SceneFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    height: usize,
    width: usize,
    image: String,
    objects: Vec<ObjectFile>,
    triplets: Vec<TripletFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectFile {
    id: usize,
    category: String,
    mask_rle: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletFile {
    sub: usize,
    obj: usize,
    rel: String,
}

const INLINE_PREFIX: &str = "base64:";

fn decode_image(spec: &str, height: usize, width: usize, base_dir: &Path, scene_id: &str) -> Result<RgbImage, DatasetError> {
    let invalid = |message: String| DatasetError::Invalid {
        scene_id: scene_id.to_string(),
        message,
    };
    let data = if let Some(b64) = spec.strip_prefix(INLINE_PREFIX) {
        base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| invalid(format!("bad inline image: {e}")))?
    } else {
        let path = base_dir.join(spec);
        let img = image::open(&path)
            .map_err(|e| invalid(format!("cannot read image {}: {e}", path.display())))?
            .to_rgb8();
        if img.dimensions() != (width as u32, height as u32) {
            return Err(invalid(format!(
                "image file is {:?}, header says {}x{}",
                img.dimensions(),
                width,
                height
            )));
        }
        img.into_raw()
    };
    if data.len() != height * width * 3 {
        return Err(invalid(format!(
            "image holds {} bytes, expected {}x{}x3",
            data.len(),
            height,
            width
        )));
    }
    Ok(RgbImage { height, width, data })
}

/// Reads and validates an `openrel-v1` dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_dataset(&text, base_dir).map_err(|e| match e {
        DatasetError::Parse {
            line,
            column,
            message,
            ..
        } => DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => other,
    })
}

/// Parses dataset JSON text; relative image paths resolve against `base_dir`.
pub fn parse_dataset(text: &str, base_dir: &Path) -> Result<Dataset, DatasetError> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        path: PathBuf::from("<memory>"),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if file.format != FORMAT_TAG {
        return Err(DatasetError::Format(format!(
            "unsupported format `{}` (expected `{FORMAT_TAG}`)",
            file.format
        )));
    }
    let relations = RelationVocabulary::new(file.relations.base, file.relations.novel)?;
    let mut scenes = Vec::with_capacity(file.scenes.len());
    for s in file.scenes {
        let image = decode_image(&s.image, s.height, s.width, base_dir, &s.scene_id)?;
        let mut objects = Vec::with_capacity(s.objects.len());
        for o in s.objects {
            let mask = BinaryMask::from_rle(s.height, s.width, &o.mask_rle).map_err(|message| DatasetError::Invalid {
                scene_id: s.scene_id.clone(),
                message: format!("object {}: {message}", o.id),
            })?;
            objects.push(ObjectInstance {
                instance_id: o.id,
                category: o.category,
                mask,
            });
        }
        let record = SceneRecord {
            scene_id: s.scene_id,
            image,
            objects,
            gt_triplets: s
                .triplets
                .into_iter()
                .map(|t| Triplet::gt(t.sub, t.obj, t.rel))
                .collect(),
        };
        record.validate()?;
        scenes.push(record);
    }
    Ok(Dataset {
        relations,
        object_classes: file.objects,
        scenes,
    })
}

pub fn dataset_to_json(dataset: &Dataset) -> String {
    let file = DatasetFile {
        format: FORMAT_TAG.to_string(),
        relations: dataset.relations.clone(),
        objects: dataset.object_classes.clone(),
        scenes: dataset
            .scenes
            .iter()
            .map(|s| SceneFile {
                scene_id: s.scene_id.clone(),
                height: s.height(),
                width: s.width(),
                image: format!(
                    "{INLINE_PREFIX}{}",
                    base64::engine::general_purpose::STANDARD.encode(&s.image.data)
                ),
                objects: s
                    .objects
                    .iter()
                    .map(|o| ObjectFile {
                        id: o.instance_id,
                        category: o.category.clone(),
                        mask_rle: o.mask.to_rle(),
                    })
                    .collect(),
                triplets: s
                    .gt_triplets
                    .iter()
                    .map(|t| TripletFile {
                        sub: t.subject_id,
                        obj: t.object_id,
                        rel: t.relation.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("dataset serializes")
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DatasetError> {
    let path = path.as_ref();
    fs::write(path, dataset_to_json(dataset)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| r >= r0 && r < r0 + size && c >= c0 && c < c0 + size)
    }

    fn two_object_scene() -> SceneRecord {
        SceneRecord {
            scene_id: "s0".into(),
            image: RgbImage::new(8, 8),
            objects: vec![
                ObjectInstance {
                    instance_id: 0,
                    category: "cube".into(),
                    mask: square_mask(8, 8, 0, 0, 3),
                },
                ObjectInstance {
                    instance_id: 1,
                    category: "ball".into(),
                    mask: square_mask(8, 8, 4, 4, 2),
                },
            ],
            gt_triplets: vec![Triplet::gt(0, 1, "left of")],
        }
    }

    fn dataset_with(scenes: Vec<SceneRecord>) -> Dataset {
        Dataset {
            relations: RelationVocabulary::new(vec!["left of".into()], vec!["right of".into()]).unwrap(),
            object_classes: vec!["cube".into(), "ball".into()],
            scenes,
        }
    }

    #[test]
    fn empty_dataset_loads_as_empty_list() {
        let text = r#"{"format": "openrel-v1", "relations": {"base": ["on"], "novel": []},
                       "objects": [], "scenes": []}"#;
        let ds = parse_dataset(text, Path::new(".")).unwrap();
        assert!(ds.scenes.is_empty());
    }

    #[test]
    fn minimal_scene_round_trips_through_json() {
        let ds = dataset_with(vec![two_object_scene()]);
        let back = parse_dataset(&dataset_to_json(&ds), Path::new(".")).unwrap();
        assert_eq!(back.scenes.len(), 1);
        assert_eq!(back.scenes[0].objects.len(), 2);
        assert_eq!(back, ds);
    }

    #[test]
    fn dangling_triplet_id_names_the_scene() {
        let mut scene = two_object_scene();
        scene.gt_triplets.push(Triplet::gt(5, 1, "on"));
        let json = dataset_to_json(&dataset_with(vec![scene]));
        match parse_dataset(&json, Path::new(".")) {
            Err(DatasetError::Invalid { scene_id, message }) => {
                assert_eq!(scene_id, "s0");
                assert!(message.contains('5'), "{message}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\n  \"format\": \"openrel-v1\",\n  \"scenes\": [,]\n}";
        match parse_dataset(text, Path::new(".")) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_format_tag_is_rejected() {
        let text = r#"{"format": "other", "relations": {"base": [], "novel": []}, "objects": [], "scenes": []}"#;
        assert!(matches!(parse_dataset(text, Path::new(".")), Err(DatasetError::Format(_))));
    }

    #[test]
    fn image_file_reference_resolves_relative_to_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = image::RgbImage::new(8, 8);
        img.put_pixel(2, 1, image::Rgb([10, 20, 30]));
        img.save(dir.path().join("s0.png")).unwrap();
        let scene = two_object_scene();
        let mut json: serde_json::Value = serde_json::from_str(&dataset_to_json(&dataset_with(vec![scene]))).unwrap();
        json["scenes"][0]["image"] = "s0.png".into();
        let path = dir.path().join("data.json");
        fs::write(&path, json.to_string()).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.scenes[0].image.get(1, 2, 2), 30.0 / 255.0);
    }

    #[test]
    fn rle_encodes_leading_ones_with_empty_zero_run() {
        let m = BinaryMask::from_bits(1, 4, vec![true, true, false, true]);
        assert_eq!(m.to_rle(), vec![0, 2, 1, 1]);
        assert_eq!(BinaryMask::from_rle(1, 4, &[0, 2, 1, 1]).unwrap(), m);
        assert!(BinaryMask::from_rle(1, 4, &[1, 1]).is_err());
    }

    #[test]
    fn normalization_collapses_case_and_whitespace() {
        assert_eq!(normalize_name("  Walking   On "), "walking on");
    }

    #[test]
    fn split_ten_relations_seven_three() {
        let all: Vec<String> = (0..10).map(|i| format!("rel {i}")).collect();
        let v = split_vocabulary(&all, 0.7, 1).unwrap();
        assert_eq!((v.base.len(), v.novel.len()), (7, 3));
        assert!(v.base.iter().all(|b| !v.novel.contains(b)));
        assert_eq!(v, split_vocabulary(&all, 0.7, 1).unwrap());
    }

    #[test]
    fn split_psg_relations_at_seven_three() {
        let all: Vec<String> = PSG_RELATIONS.iter().map(|s| s.to_string()).collect();
        let v = split_vocabulary(&all, 0.7, 0).unwrap();
        assert_eq!((v.base.len(), v.novel.len()), (39, 17));
    }

    #[test]
    fn published_psg_lists_report_the_trailing_space_collision() {
        let (vocab, collisions) = psg_open_set_lists();
        assert_eq!((vocab.base.len(), vocab.novel.len()), (41, 17));
        assert_eq!(collisions.len(), 1);
        assert!(collisions[0].contains("walking on"));
        assert!(RelationVocabulary::new(vocab.base, vocab.novel).is_err());
        // Every canonical predicate shows up in the published lists.
        let listed: BTreeSet<String> = PSG_OPEN_SET_BASE
            .iter()
            .chain(&PSG_OPEN_SET_NOVEL)
            .map(|s| normalize_name(s))
            .collect();
        assert!(PSG_RELATIONS.iter().all(|r| listed.contains(*r)));
    }

    #[test]
    fn split_rejects_normalized_duplicates() {
        let all = vec!["on".to_string(), " ON".to_string(), "in".to_string()];
        match split_vocabulary(&all, 0.5, 0) {
            Err(DatasetError::Collision(c)) => assert!(c[0].contains("`on`")),
            other => panic!("{other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_is_a_partition(n in 2usize..40, seed in any::<u64>(), ratio in 0.05f64..0.95) {
                let all: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
                let v = split_vocabulary(&all, ratio, seed).unwrap();
                prop_assert_eq!(v.base.len(), (ratio * n as f64).round() as usize);
                let mut union: Vec<String> = v.base.iter().chain(&v.novel).cloned().collect();
                union.sort();
                let mut expect = all.clone();
                expect.sort();
                prop_assert_eq!(union, expect);
                prop_assert!(v.base.iter().all(|b| !v.novel.contains(b)));
            }

            #[test]
            fn rle_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
                let n = bits.len();
                let m = BinaryMask::from_bits(1, n, bits);
                prop_assert_eq!(BinaryMask::from_rle(1, n, &m.to_rle()).unwrap(), m);
            }
        }
    }
}
