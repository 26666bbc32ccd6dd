//! Static figure: the scene with object outlines next to the predicted
//! graph drawn as arrows between object centroids.

use openrel::model::ScenePrediction;
use openrel::scene::{ObjectInstance, RgbImage};

const SCALE: usize = 4;
const BACKGROUND: [u8; 3] = [16, 16, 20];

/// Distinct, readable outline colours.
const PALETTE: [[u8; 3]; 8] = [
    [255, 255, 255],
    [255, 214, 0],
    [0, 229, 255],
    [255, 64, 129],
    [118, 255, 3],
    [213, 0, 249],
    [255, 145, 0],
    [41, 121, 255],
];

struct Canvas {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&BACKGROUND);
        }
        Self { width, height, data }
    }

    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = (y as usize * self.width + x as usize) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn disc(&mut self, (cx, cy): (i64, i64), r: i64, rgb: [u8; 3]) {
        for y in -r..=r {
            for x in -r..=r {
                if x * x + y * y <= r * r {
                    self.put(cx + x, cy + y, rgb);
                }
            }
        }
    }
}

fn centroid(o: &ObjectInstance) -> (f64, f64) {
    let (h, w) = o.mask.dims();
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0_f64);
    for r in 0..h {
        for c in 0..w {
            if o.mask.get(r, c) {
                sy += r as f64 + 0.5;
                sx += c as f64 + 0.5;
                n += 1.0;
            }
        }
    }
    (sx / n.max(1.0), sy / n.max(1.0))
}

/// Two panels, each the scene upscaled 4×: the image with object outlines,
/// and the graph of accepted relations (arrow from subject to object,
/// brightness by the best relation score).
pub fn render(image: &RgbImage, objects: &[ObjectInstance], prediction: &ScenePrediction) -> image::RgbImage {
    let (h, w) = (image.height * SCALE, image.width * SCALE);
    let gap = 8;
    let mut c = Canvas::new(2 * w + gap, h);
    for y in 0..h {
        for x in 0..w {
            let rgb = [0, 1, 2].map(|ch| (image.get(y / SCALE, x / SCALE, ch) * 255.0).round() as u8);
            c.put(x as i64, y as i64, rgb);
        }
    }
    for (k, o) in objects.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let (mh, mw) = o.mask.dims();
        let inside = |r: i64, col: i64| r >= 0 && col >= 0 && (r as usize) < mh && (col as usize) < mw && o.mask.get(r as usize, col as usize);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (r, col) = (y / SCALE as i64, x / SCALE as i64);
                if !inside(r, col) {
                    continue;
                }
                // outline: pixels whose 4-neighbour (in output space) leaves the mask
                let edge = [(0, 1), (0, -1), (1, 0), (-1, 0)]
                    .iter()
                    .any(|(dy, dx)| !inside((y + dy).div_euclid(SCALE as i64), (x + dx).div_euclid(SCALE as i64)));
                if edge {
                    c.put(x, y, colour);
                }
            }
        }
    }
    let offset = (w + gap) as f64;
    let centres: Vec<(i64, i64)> = objects
        .iter()
        .map(|o| {
            let (x, y) = centroid(o);
            ((offset + x * SCALE as f64) as i64, (y * SCALE as f64) as i64)
        })
        .collect();
    for p in &prediction.pairs {
        let best = p.relations.iter().filter(|r| r.verdict).map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
        if !best.is_finite() {
            continue;
        }
        // judge scores are probabilities, generation scores log-probabilities
        let strength = if best <= 0.0 { best.exp() } else { best.min(1.0) };
        let shade = (80.0 + 175.0 * strength).round() as u8;
        let (a, b) = (centres[p.pair.0], centres[p.pair.1]);
        c.line(a, b, [shade, shade, shade]);
        let (dx, dy) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
        let len = (dx * dx + dy * dy).sqrt().max(1.0);
        let (ux, uy) = (dx / len, dy / len);
        let tip = (b.0 as f64 - ux * 8.0, b.1 as f64 - uy * 8.0);
        for side in [-1.0, 1.0] {
            let wing = (
                (tip.0 - ux * 6.0 - side * uy * 4.0).round() as i64,
                (tip.1 - uy * 6.0 + side * ux * 4.0).round() as i64,
            );
            c.line((tip.0.round() as i64, tip.1.round() as i64), wing, [shade, shade, shade]);
        }
    }
    for (k, &centre) in centres.iter().enumerate() {
        c.disc(centre, 5, PALETTE[k % PALETTE.len()]);
    }
    image::RgbImage::from_raw(c.width as u32, c.height as u32, c.data).expect("canvas size matches")
}
