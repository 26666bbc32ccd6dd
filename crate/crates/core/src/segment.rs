//! Oracle segmentation front end: a small trainable scene encoder, the
//! patchify projection, nearest-neighbour mask downsampling and the
//! pairwise module that enumerates ordered subject-object pairs.

use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

use crate::nn::{Graph, Group, Linear, Mat, NodeId, ParamStore};
use crate::scene::{BinaryMask, ObjectInstance, RgbImage, SceneRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentError {
    #[error("image {height}x{width} is not divisible by encoder stride {stride}; pad to {padded_h}x{padded_w}")]
    EncoderStride {
        height: usize,
        width: usize,
        stride: usize,
        padded_h: usize,
        padded_w: usize,
    },
    #[error("feature grid {h}x{w} is not divisible by patch size {p}")]
    PatchSize { h: usize, w: usize, p: usize },
    #[error("encoder stride {0} must be a power of two >= 2")]
    BadStride(usize),
    #[error("mask target must be at least 1x1")]
    EmptyTarget,
}

/// Whole-image feature grid `h×w×D`, stored as an `(h·w)×D` matrix in
/// row-major spatial order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub h: usize,
    pub w: usize,
    pub values: Mat,
}

impl FeatureGrid {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// `L×D` visual tokens, `L = (h/p)·(w/p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub grid_h: usize,
    pub grid_w: usize,
    pub tokens: Mat,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

/// One flattened downsampled mask per object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    pub rows: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    pub pair_categories: Vec<(String, String)>,
    pub pair_masks: Vec<Vec<bool>>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Subset keeping the entries at `keep`, in the given order.
    pub fn subset(&self, keep: &[usize]) -> PairSet {
        PairSet {
            pairs: keep.iter().map(|&k| self.pairs[k]).collect(),
            pair_categories: keep.iter().map(|&k| self.pair_categories[k].clone()).collect(),
            pair_masks: keep.iter().map(|&k| self.pair_masks[k].clone()).collect(),
        }
    }
}

/// Index map turning an `(h·w)×c` row-major grid into non-overlapping
/// `p×p` patches: output row `(i, j)` holds the patch at `(i·p, j·p)`,
/// column `(di·p + dj)·c + ch`.
pub fn patch_index(h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let (gh, gw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(h * w * c);
    for i in 0..gh {
        for j in 0..gw {
            for di in 0..p {
                for dj in 0..p {
                    let pixel = (i * p + di) * w + (j * p + dj);
                    for ch in 0..c {
                        idx.push(pixel * c + ch);
                    }
                }
            }
        }
    }
    idx
}

/// Stack of stride-2 patch convolutions (`log2(stride)` stages) mapping RGB
/// pixels to `dim` channels.
#[derive(Debug, Clone)]
pub struct SceneEncoder {
    pub stages: Vec<Linear>,
    pub stride: usize,
    pub dim: usize,
}

impl SceneEncoder {
    pub fn new(store: &mut ParamStore, stride: usize, dim: usize, rng: &mut impl Rng) -> Result<Self, SegmentError> {
        if stride < 2 || !stride.is_power_of_two() {
            return Err(SegmentError::BadStride(stride));
        }
        let n = stride.trailing_zeros() as usize;
        let mut stages = Vec::with_capacity(n);
        let mut c_in = 3;
        for s in 0..n {
            stages.push(Linear::new(store, &format!("encoder.stage{s}"), Group::Encoder, 4 * c_in, dim, rng));
            c_in = dim;
        }
        Ok(Self { stages, stride, dim })
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<(usize, usize), SegmentError> {
        let s = self.stride;
        if height % s != 0 || width % s != 0 || height == 0 || width == 0 {
            return Err(SegmentError::EncoderStride {
                height,
                width,
                stride: s,
                padded_h: height.div_ceil(s).max(1) * s,
                padded_w: width.div_ceil(s).max(1) * s,
            });
        }
        Ok((height / s, width / s))
    }

    /// Encodes the image into the graph; returns the `(h·w)×D` node and `(h, w)`.
    pub fn forward(&self, g: &mut Graph, image: &RgbImage) -> Result<(NodeId, usize, usize), SegmentError> {
        let (mut h, mut w) = (image.height, image.width);
        self.check_dims(h, w)?;
        let pixels = Mat::from_shape_fn((h * w, 3), |(i, ch)| image.get(i / w, i % w, ch) - 0.5);
        let mut x = g.constant(pixels);
        let mut c = 3;
        for (s, stage) in self.stages.iter().enumerate() {
            let idx = Rc::new(patch_index(h, w, c, 2));
            h /= 2;
            w /= 2;
            x = g.rearrange(x, h * w, 4 * c, idx);
            x = stage.forward(g, x);
            if s + 1 < self.stages.len() {
                x = g.gelu(x);
            }
            c = self.dim;
        }
        Ok((x, h, w))
    }
}

/// Runs the encoder on a scene and returns plain feature values.
pub fn encode_scene(record: &SceneRecord, encoder: &SceneEncoder, store: &ParamStore) -> Result<FeatureGrid, SegmentError> {
    let mut g = Graph::new(store);
    let (node, h, w) = encoder.forward(&mut g, &record.image)?;
    Ok(FeatureGrid {
        h,
        w,
        values: g.value(node).clone(),
    })
}

/// Single `p×p`, stride-`p` convolution from the feature grid to tokens.
#[derive(Debug, Clone)]
pub struct Patchify {
    pub proj: Linear,
    pub p: usize,
    pub dim: usize,
}

impl Patchify {
    pub fn new(store: &mut ParamStore, p: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            proj: Linear::new(store, "encoder.patchify", Group::Encoder, p * p * dim, dim, rng),
            p,
            dim,
        }
    }

    pub fn grid_dims(&self, h: usize, w: usize) -> Result<(usize, usize), SegmentError> {
        if self.p == 0 || h % self.p != 0 || w % self.p != 0 {
            return Err(SegmentError::PatchSize { h, w, p: self.p });
        }
        Ok((h / self.p, w / self.p))
    }

    pub fn forward(&self, g: &mut Graph, grid: NodeId, h: usize, w: usize) -> Result<NodeId, SegmentError> {
        let (gh, gw) = self.grid_dims(h, w)?;
        let patches = if self.p == 1 {
            grid
        } else {
            let idx = Rc::new(patch_index(h, w, self.dim, self.p));
            g.rearrange(grid, gh * gw, self.p * self.p * self.dim, idx)
        };
        Ok(self.proj.forward(g, patches))
    }
}

pub fn patchify(grid: &FeatureGrid, layer: &Patchify, store: &ParamStore) -> Result<TokenSequence, SegmentError> {
    let mut g = Graph::new(store);
    let x = g.constant(grid.values.clone());
    let out = layer.forward(&mut g, x, grid.h, grid.w)?;
    let (grid_h, grid_w) = layer.grid_dims(grid.h, grid.w)?;
    Ok(TokenSequence {
        grid_h,
        grid_w,
        tokens: g.value(out).clone(),
    })
}

/// Fixed 2-D sinusoidal position code for a `gh×gw` token grid: the first
/// half of the channels encodes the row, the second half the column.
pub fn token_positions(gh: usize, gw: usize, dim: usize) -> Mat {
    let half = dim / 2;
    let n_freq = (half / 2).max(1);
    let mut out = Mat::zeros((gh * gw, dim));
    for i in 0..gh {
        for j in 0..gw {
            let row = i * gw + j;
            for (offset, pos, extent) in [(0, i, gh), (half, j, gw)] {
                for k in 0..n_freq {
                    let omega = std::f64::consts::PI * (1u64 << k.min(20)) as f64 / (2.0 * extent.max(1) as f64);
                    let a = omega * (pos as f64 + 0.5);
                    if offset + 2 * k < dim {
                        out[[row, offset + 2 * k]] = a.sin();
                    }
                    if offset + 2 * k + 1 < dim {
                        out[[row, offset + 2 * k + 1]] = a.cos();
                    }
                }
            }
        }
    }
    out
}

/// Source index nearest to the centre of target cell `t` when resampling
/// `src` cells onto `dst` cells; exact ties go to the smaller index.
fn nearest_source(t: usize, src: usize, dst: usize) -> usize {
    // centre of target cell in source pixel-centre coordinates:
    // (t + 0.5)·src/dst − 0.5, kept in exact integer arithmetic (×2·dst).
    let num = (2 * t + 1) * src; // 2·dst·(centre + 0.5)
    let den = 2 * dst;
    // nearest pixel i minimizes |i + 0.5 − num/den|; ties to the smaller i.
    // candidate = ceil(num/den − 1) with tie-breaking handled below.
    let mut best = 0usize;
    let mut best_d = u128::MAX;
    let lo = (num / den).saturating_sub(1);
    for i in lo..(lo + 3).min(src) {
        let d = ((2 * i + 1) * dst).abs_diff(num) as u128;
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Nearest-neighbour downsampling of every object mask to `target`, then
/// row-major flattening. A mask that vanishes keeps the single cell with
/// the largest fractional overlap.
pub fn downsample_masks(objects: &[ObjectInstance], target: (usize, usize)) -> Result<MaskSequence, SegmentError> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(SegmentError::EmptyTarget);
    }
    let rows = objects.iter().map(|o| downsample_mask(&o.mask, th, tw)).collect();
    Ok(MaskSequence { rows })
}

pub fn downsample_mask(mask: &BinaryMask, th: usize, tw: usize) -> Vec<bool> {
    let (h, w) = mask.dims();
    let src_rows: Vec<usize> = (0..th).map(|a| nearest_source(a, h, th)).collect();
    let src_cols: Vec<usize> = (0..tw).map(|b| nearest_source(b, w, tw)).collect();
    let mut row: Vec<bool> = (0..th * tw)
        .map(|k| mask.get(src_rows[k / tw], src_cols[k % tw]))
        .collect();
    if !row.iter().any(|b| *b) && !mask.is_empty() {
        row[max_overlap_cell(mask, th, tw)] = true;
    }
    row
}

/// Target cell whose footprint holds the largest fraction of mask pixels.
pub fn max_overlap_cell(mask: &BinaryMask, th: usize, tw: usize) -> usize {
    let (h, w) = mask.dims();
    let mut hits = vec![0usize; th * tw];
    let mut area = vec![0usize; th * tw];
    for r in 0..h {
        for c in 0..w {
            let cell = (r * th / h) * tw + c * tw / w;
            area[cell] += 1;
            if mask.get(r, c) {
                hits[cell] += 1;
            }
        }
    }
    let mut best = 0;
    for k in 1..th * tw {
        // hits[k]/area[k] > hits[best]/area[best]
        if hits[k] * area[best] > hits[best] * area[k] {
            best = k;
        }
    }
    best
}

/// All ordered pairs `(i, j)`, `i ≠ j`, in lexicographic order, with the
/// element-wise OR of the two mask rows.
pub fn make_pairs(objects: &[ObjectInstance], masks: &MaskSequence) -> PairSet {
    let n = objects.len();
    let mut set = PairSet {
        pairs: Vec::with_capacity(n * n.saturating_sub(1)),
        pair_categories: Vec::new(),
        pair_masks: Vec::new(),
    };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            set.pairs.push((i, j));
            set.pair_categories
                .push((objects[i].category.clone(), objects[j].category.clone()));
            set.pair_masks.push(
                masks.rows[i]
                    .iter()
                    .zip(&masks.rows[j])
                    .map(|(a, b)| *a || *b)
                    .collect(),
            );
        }
    }
    set
}

/// Imperfect segmenter for scene-graph detection: each mask is dilated or
/// eroded by `jitter` steps (8-neighbourhood) and each category is replaced
/// by a different class with probability `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedOracle {
    pub epsilon: f64,
    pub jitter: usize,
}

impl CorruptedOracle {
    pub fn segment(&self, objects: &[ObjectInstance], classes: &[String], rng: &mut impl Rng) -> Vec<ObjectInstance> {
        objects
            .iter()
            .map(|o| {
                let grow = rng.gen_bool(0.5);
                let mut mask = o.mask.clone();
                for _ in 0..self.jitter {
                    mask = morph(&mask, grow);
                }
                if mask.is_empty() {
                    mask = o.mask.clone();
                }
                let mut category = o.category.clone();
                let others: Vec<&String> = classes.iter().filter(|c| **c != o.category).collect();
                if !others.is_empty() && rng.gen_bool(self.epsilon.clamp(0.0, 1.0)) {
                    category = others[rng.gen_range(0..others.len())].clone();
                }
                ObjectInstance {
                    instance_id: o.instance_id,
                    category,
                    mask,
                }
            })
            .collect()
    }
}

fn morph(mask: &BinaryMask, dilate: bool) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, |r, c| {
        let mut any = false;
        let mut all = true;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                let v = rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && mask.get(rr as usize, cc as usize);
                any |= v;
                all &= v;
            }
        }
        if dilate {
            any
        } else {
            all
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(id: usize, mask: BinaryMask) -> ObjectInstance {
        ObjectInstance {
            instance_id: id,
            category: format!("c{id}"),
            mask,
        }
    }

    fn scene(h: usize, w: usize) -> SceneRecord {
        let mut image = RgbImage::new(h, w);
        for r in 0..h {
            for c in 0..w {
                image.put(r, c, [(r * 4) as u8, (c * 4) as u8, 100]);
            }
        }
        SceneRecord {
            scene_id: "t".into(),
            image,
            objects: vec![],
            gt_triplets: vec![],
        }
    }

    /// Brute force: the source pixel whose centre is nearest the centre of
    /// each target cell (ties toward the smaller flat index).
    fn oracle_downsample(mask: &BinaryMask, th: usize, tw: usize) -> Vec<bool> {
        let (h, w) = mask.dims();
        let mut row = Vec::new();
        for a in 0..th {
            for b in 0..tw {
                let cy = (a as f64 + 0.5) * h as f64 / th as f64;
                let cx = (b as f64 + 0.5) * w as f64 / tw as f64;
                let mut best = (f64::INFINITY, 0, 0);
                for r in 0..h {
                    for c in 0..w {
                        let dy = (r as f64 + 0.5 - cy).abs();
                        let dx = (c as f64 + 0.5 - cx).abs();
                        let key = dy * dy + dx * dx;
                        if key < best.0 {
                            best = (key, r, c);
                        }
                    }
                }
                row.push(mask.get(best.1, best.2));
            }
        }
        if !row.iter().any(|b| *b) {
            let mut frac = vec![(0usize, 0usize); th * tw];
            for r in 0..h {
                for c in 0..w {
                    let k = (r * th / h) * tw + c * tw / w;
                    frac[k].1 += 1;
                    frac[k].0 += usize::from(mask.get(r, c));
                }
            }
            let best = (0..th * tw)
                .max_by(|&x, &y| {
                    let fx = frac[x].0 as f64 / frac[x].1 as f64;
                    let fy = frac[y].0 as f64 / frac[y].1 as f64;
                    fx.partial_cmp(&fy).unwrap().then(y.cmp(&x))
                })
                .unwrap();
            row[best] = true;
        }
        row
    }

    #[test]
    fn encoder_shape_arithmetic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = SceneEncoder::new(&mut store, 4, 32, &mut rng).unwrap();
        let grid = encode_scene(&scene(64, 64), &enc, &store).unwrap();
        assert_eq!((grid.h, grid.w, grid.dim()), (16, 16, 32));
    }

    #[test]
    fn encoder_output_is_finite_and_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = SceneEncoder::new(&mut store, 4, 16, &mut rng).unwrap();
        let zero = SceneRecord {
            image: RgbImage::new(16, 16),
            ..scene(16, 16)
        };
        let a = encode_scene(&zero, &enc, &store).unwrap();
        assert!(a.values.iter().all(|v| v.is_finite()));
        let s = scene(16, 16);
        assert_eq!(encode_scene(&s, &enc, &store).unwrap(), encode_scene(&s, &enc, &store).unwrap());
    }

    #[test]
    fn encoder_rejects_indivisible_image() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = SceneEncoder::new(&mut store, 4, 8, &mut rng).unwrap();
        let err = encode_scene(&scene(30, 32), &enc, &store).unwrap_err();
        assert_eq!(
            err,
            SegmentError::EncoderStride {
                height: 30,
                width: 32,
                stride: 4,
                padded_h: 32,
                padded_w: 32
            }
        );
        assert!(err.to_string().contains("pad to 32x32"));
    }

    #[test]
    fn patchify_token_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Patchify::new(&mut store, 8, 4, &mut rng);
        let grid = FeatureGrid {
            h: 16,
            w: 16,
            values: Mat::from_shape_fn((256, 4), |(i, c)| (i * 4 + c) as f64 * 1e-3),
        };
        assert_eq!(patchify(&grid, &layer, &store).unwrap().len(), 4);
        let bad = Patchify::new(&mut ParamStore::new(), 5, 4, &mut rng);
        assert_eq!(
            patchify(&grid, &bad, &store).unwrap_err(),
            SegmentError::PatchSize { h: 16, w: 16, p: 5 }
        );
    }

    #[test]
    fn patchify_identity_projection_copies_grid_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Patchify::new(&mut store, 1, 6, &mut rng);
        store.get_mut(layer.proj.weight).value = Mat::eye(6);
        let grid = FeatureGrid {
            h: 3,
            w: 2,
            values: Mat::from_shape_fn((6, 6), |(i, c)| (i as f64) - 0.1 * c as f64),
        };
        let tokens = patchify(&grid, &layer, &store).unwrap();
        assert_eq!(tokens.tokens, grid.values);
    }

    #[test]
    fn patch_index_orders_patches_row_major() {
        // 4x4 single-channel grid, p=2: first patch is pixels 0,1,4,5
        let idx = patch_index(4, 4, 1, 2);
        assert_eq!(&idx[..4], &[0, 1, 4, 5]);
        assert_eq!(&idx[4..8], &[2, 3, 6, 7]);
    }

    #[test]
    fn top_left_block_downsamples_to_first_cell() {
        let m = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        assert_eq!(downsample_mask(&m, 2, 2), vec![true, false, false, false]);
        let full = BinaryMask::from_fn(5, 7, |_, _| true);
        assert!(downsample_mask(&full, 3, 2).iter().all(|b| *b));
    }

    #[test]
    fn single_pixel_matches_exhaustive_oracle() {
        let m = BinaryMask::from_fn(16, 16, |r, c| r == 0 && c == 0);
        let got = downsample_mask(&m, 2, 2);
        assert_eq!(got, oracle_downsample(&m, 2, 2));
        assert_eq!(got.iter().filter(|b| **b).count(), 1);
    }

    #[test]
    fn pair_counts() {
        let masks = |n: usize| MaskSequence {
            rows: vec![vec![true]; n],
        };
        let objs = |n: usize| (0..n).map(|i| obj(i, BinaryMask::from_fn(1, 1, |_, _| true))).collect::<Vec<_>>();
        assert_eq!(make_pairs(&objs(3), &masks(3)).len(), 6);
        assert!(make_pairs(&objs(1), &masks(1)).is_empty());
        assert_eq!(make_pairs(&objs(3), &masks(3)).pairs[..2], [(0, 1), (0, 2)]);
    }

    #[test]
    fn corrupted_oracle_flips_categories_and_keeps_masks_non_empty() {
        let objects: Vec<_> = (0..20)
            .map(|i| obj(i, BinaryMask::from_fn(8, 8, |r, c| r == i % 8 && c == 3)))
            .collect();
        let classes: Vec<String> = (0..20).map(|i| format!("c{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = CorruptedOracle { epsilon: 1.0, jitter: 2 }.segment(&objects, &classes, &mut rng);
        assert!(out.iter().zip(&objects).all(|(a, b)| a.category != b.category));
        assert!(out.iter().all(|o| !o.mask.is_empty()));
        let clean = CorruptedOracle { epsilon: 0.0, jitter: 0 }.segment(&objects, &classes, &mut rng);
        assert_eq!(clean, objects);
    }

    fn arb_mask(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |mut bits| {
            if !bits.iter().any(|b| *b) {
                bits[0] = true;
            }
            BinaryMask::from_bits(h, w, bits)
        })
    }

    proptest! {
        #[test]
        fn downsample_matches_oracle(
            (_h, _w, th, tw, mask) in (1usize..20, 1usize..20)
                .prop_flat_map(|(h, w)| (Just(h), Just(w), 1..=h, 1..=w, arb_mask(h, w)))
        ) {
            prop_assert_eq!(downsample_mask(&mask, th, tw), oracle_downsample(&mask, th, tw));
        }

        #[test]
        fn pair_invariants(n in 0usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = 6;
            let rows: Vec<Vec<bool>> = (0..n).map(|_| (0..l).map(|_| rand::Rng::gen_bool(&mut rng, 0.3)).collect()).collect();
            let objs: Vec<_> = (0..n).map(|i| obj(i, BinaryMask::from_fn(1, 1, |_, _| true))).collect();
            let set = make_pairs(&objs, &MaskSequence { rows: rows.clone() });
            prop_assert_eq!(set.len(), n * n.saturating_sub(1));
            for (k, &(i, j)) in set.pairs.iter().enumerate() {
                prop_assert!(i != j);
                let rev = set.pairs.iter().position(|p| *p == (j, i)).unwrap();
                prop_assert_eq!(&set.pair_masks[k], &set.pair_masks[rev]);
                prop_assert_eq!(&set.pair_categories[k], &(format!("c{i}"), format!("c{j}")));
                for e in 0..l {
                    prop_assert!(set.pair_masks[k][e] >= rows[i][e] && set.pair_masks[k][e] >= rows[j][e]);
                }
            }
        }

        #[test]
        fn patch_token_count(gh in 1usize..5, gw in 1usize..5, p in 1usize..4) {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let layer = Patchify::new(&mut store, p, 2, &mut rng);
            let grid = FeatureGrid { h: gh * p, w: gw * p, values: Mat::zeros((gh * gw * p * p, 2)) };
            prop_assert_eq!(patchify(&grid, &layer, &store).unwrap().len(), gh * gw);
        }
    }
}
