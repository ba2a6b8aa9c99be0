use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::font::{GLYPH_H, GLYPH_PITCH};
use super::geometry::{aabb, boundary_distance, perimeter, point_in_polygon, polygon_area, rect, Polygon};
use super::rec::{add_noise, draw_text};
use super::Image;
use crate::error::{Error, Result};
use crate::losses::DetGroundTruth;
use crate::tensor::Tensor;

/// Area kept by the shrunk text kernel, as in DB: the offset distance is
/// `A (1 − r²) / L`.
pub const SHRINK_RATIO: f64 = 0.4;

/// One text region of a detection image.
#[derive(Clone, Debug, PartialEq)]
pub struct TextInstance {
    pub polygon: Polygon,
    pub text: String,
    /// Pixels of the polygon's bounding box, cropped from the source image.
    pub patch: Image,
}

impl TextInstance {
    /// Crops the patch for `polygon` out of `image`.
    pub fn from_image(image: &Image, polygon: Polygon, text: String) -> Result<Self> {
        let (x0, y0, x1, y1) = pixel_box(&polygon);
        if polygon.len() < 3 || x1 as usize > image.width() || y1 as usize > image.height() || x0 < 0 || y0 < 0 {
            return Err(Error::invalid(format!(
                "polygon {polygon:?} outside {}x{} image",
                image.width(),
                image.height()
            )));
        }
        let patch = image.crop(x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize)?;
        Ok(TextInstance { polygon, text, patch })
    }
}

/// Integer pixel bounds `[x0, x1) × [y0, y1)` covering the polygon.
pub(crate) fn pixel_box(poly: &[[f64; 2]]) -> (i64, i64, i64, i64) {
    let (x0, y0, x1, y1) = aabb(poly);
    (x0.floor() as i64, y0.floor() as i64, x1.ceil() as i64, y1.ceil() as i64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetSample {
    pub image: Image,
    pub instances: Vec<TextInstance>,
    pub targets: DetGroundTruth<f32>,
}

impl DetSample {
    /// Builds targets from the instance polygons.
    pub fn new(image: Image, instances: Vec<TextInstance>) -> Self {
        let polys: Vec<&[[f64; 2]]> = instances.iter().map(|i| i.polygon.as_slice()).collect();
        let targets = make_db_targets(&polys, image.height(), image.width()).gt;
        DetSample {
            image,
            instances,
            targets,
        }
    }
}

/// Target maps plus the number of zero-area polygons that were ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct DbTargets {
    pub gt: DetGroundTruth<f32>,
    pub degenerate: usize,
}

/// Probability, threshold and threshold-mask maps for `polygons`.
///
/// With `D = A (1 − r²) / L` and `d` the distance from a pixel center to the
/// polygon outline: `prob_gt` is 1 inside the polygon where `d ≥ D`; the
/// band `d < D` on either side of the outline gets `thresh_mask = 1` and
/// `thresh_gt = 1 − d / D`. Overlapping polygons combine by maximum.
pub fn make_db_targets(polygons: &[&[[f64; 2]]], height: usize, width: usize) -> DbTargets {
    let mut prob = vec![0f32; height * width];
    let mut thresh = vec![0f32; height * width];
    let mut mask = vec![0f32; height * width];
    let mut degenerate = 0;
    for poly in polygons {
        let area = polygon_area(poly);
        let len = perimeter(poly);
        if poly.len() < 3 || area <= 1e-9 || len <= 0.0 {
            degenerate += 1;
            continue;
        }
        let dist = area * (1.0 - SHRINK_RATIO * SHRINK_RATIO) / len;
        let (x0, y0, x1, y1) = aabb(poly);
        let lo_x = (x0 - dist).floor().max(0.0) as usize;
        let lo_y = (y0 - dist).floor().max(0.0) as usize;
        let hi_x = ((x1 + dist).ceil().max(0.0) as usize).min(width);
        let hi_y = ((y1 + dist).ceil().max(0.0) as usize).min(height);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let d = boundary_distance(poly, cx, cy);
                let inside = point_in_polygon(poly, cx, cy);
                let k = y * width + x;
                if inside && d >= dist {
                    prob[k] = 1.0;
                } else if d < dist {
                    mask[k] = 1.0;
                    thresh[k] = thresh[k].max((1.0 - d / dist) as f32);
                }
            }
        }
    }
    // a pixel in one polygon's kernel is never part of the threshold band
    for k in 0..prob.len() {
        if prob[k] == 1.0 {
            mask[k] = 0.0;
        }
    }
    let shape = vec![height, width];
    DbTargets {
        gt: DetGroundTruth {
            prob_gt: Tensor::from_parts(shape.clone(), prob),
            thresh_gt: Tensor::from_parts(shape.clone(), thresh),
            thresh_mask: Tensor::from_parts(shape, mask),
        },
        degenerate,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetGenConfig {
    /// Square image side, even.
    pub size: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub noise_level: f64,
    /// Side of the square each font pixel is drawn as.
    pub glyph_scale: usize,
    pub symbols: Vec<char>,
}

impl Default for DetGenConfig {
    fn default() -> Self {
        DetGenConfig {
            size: 32,
            min_instances: 1,
            max_instances: 3,
            min_chars: 1,
            max_chars: 3,
            noise_level: 0.03,
            glyph_scale: 1,
            symbols: ('0'..='9').collect(),
        }
    }
}

const BLOCK_MARGIN: usize = 1;
const PLACEMENT_TRIES: usize = 50;

/// Images with non-overlapping text blocks (glyphs plus a one-pixel margin)
/// at random positions; at least one pixel separates any two blocks.
pub fn gen_det_dataset(count: usize, config: &DetGenConfig, seed: u64) -> Result<Vec<DetSample>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if config.min_instances > config.max_instances || config.min_chars == 0 || config.min_chars > config.max_chars {
        return Err(Error::invalid("bad instance or character range"));
    }
    if config.size % 2 != 0 || config.symbols.is_empty() {
        return Err(Error::invalid("image size must be even and symbols non-empty"));
    }
    if config.glyph_scale == 0 {
        return Err(Error::invalid("glyph_scale must be at least 1"));
    }
    let s = config.glyph_scale;
    let block_w = |n: usize| (n * GLYPH_PITCH - 1) * s + 2 * BLOCK_MARGIN;
    let block_h = GLYPH_H * s + 2 * BLOCK_MARGIN;
    let widest = block_w(config.max_chars);
    if widest > config.size || block_h > config.size {
        return Err(Error::invalid(format!("{}-glyph block exceeds {} px image", config.max_chars, config.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let bg = rng.gen_range(0..=90u8);
        let mut image = Image::new(config.size, config.size, bg);
        let wanted = rng.gen_range(config.min_instances..=config.max_instances);
        let mut placed: Vec<(usize, usize, usize, usize, String)> = Vec::new();
        for _ in 0..wanted {
            let n = rng.gen_range(config.min_chars..=config.max_chars);
            let text: String = (0..n)
                .map(|_| config.symbols[rng.gen_range(0..config.symbols.len())])
                .collect();
            let w = block_w(n);
            for _ in 0..PLACEMENT_TRIES {
                let x = rng.gen_range(0..=config.size - w);
                let y = rng.gen_range(0..=config.size - block_h);
                let clear = placed
                    .iter()
                    .all(|&(px, py, pw, ph, _)| x >= px + pw + 1 || px >= x + w + 1 || y >= py + ph + 1 || py >= y + block_h + 1);
                if clear {
                    placed.push((x, y, w, block_h, text));
                    break;
                }
            }
        }
        for (x, y, _, _, text) in &placed {
            let fg = rng.gen_range(160..=255u8);
            draw_text(&mut image, text, x + BLOCK_MARGIN, y + BLOCK_MARGIN, s, fg);
        }
        add_noise(&mut image, &mut rng, config.noise_level);
        let instances = placed
            .into_iter()
            .map(|(x, y, w, h, text)| {
                let poly = rect(x as f64, y as f64, (x + w) as f64, (y + h) as f64);
                TextInstance::from_image(&image, poly, text)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(DetSample::new(image, instances));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::polygons_overlap;

    fn count(t: &Tensor<f32>) -> usize {
        t.data().iter().filter(|&&v| v > 0.0).count()
    }

    #[test]
    fn empty_targets() {
        let t = make_db_targets(&[], 8, 8);
        assert_eq!(t.degenerate, 0);
        for m in [&t.gt.prob_gt, &t.gt.thresh_gt, &t.gt.thresh_mask] {
            assert!(m.data().iter().all(|&v| v == 0.0));
        }
        let line = [[1.0, 1.0], [5.0, 1.0], [5.0, 1.0], [1.0, 1.0]];
        assert_eq!(make_db_targets(&[&line], 8, 8).degenerate, 1);
    }

    #[test]
    fn rectangle_shrinks_strictly() {
        let r = rect(2.0, 2.0, 14.0, 9.0);
        let t = make_db_targets(&[&r], 16, 16);
        let kernel = count(&t.gt.prob_gt);
        assert!(kernel > 0 && kernel < 12 * 7);
        // D = 84 * 0.84 / 38
        let d = 84.0 * 0.84 / 38.0;
        let expect_w = (2..14).filter(|&x| x as f64 + 0.5 - 2.0 >= d && 14.0 - (x as f64 + 0.5) >= d).count();
        let expect_h = (2..9).filter(|&y| y as f64 + 0.5 - 2.0 >= d && 9.0 - (y as f64 + 0.5) >= d).count();
        assert_eq!(kernel, expect_w * expect_h);
        for v in t.gt.thresh_gt.data() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn kernel_is_surrounded_by_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let x0 = rng.gen_range(0.0..10.0f64).round();
            let y0 = rng.gen_range(0.0..10.0f64).round();
            let r = rect(x0, y0, x0 + rng.gen_range(3..12) as f64, y0 + rng.gen_range(3..12) as f64);
            let t = make_db_targets(&[&r], 24, 24);
            let (p, m) = (t.gt.prob_gt.data(), t.gt.thresh_mask.data());
            for y in 0..24 {
                for x in 0..24 {
                    if p[y * 24 + x] != 1.0 {
                        continue;
                    }
                    assert_eq!(m[y * 24 + x], 0.0);
                    // every 4-neighbour is kernel or band, never background
                    for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                        let (nx, ny) = ((x as i64 + dx) as usize, (y as i64 + dy) as usize);
                        assert!(p[ny * 24 + nx] == 1.0 || m[ny * 24 + nx] == 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn order_invariant() {
        let a = rect(1.0, 1.0, 8.0, 6.0);
        let b = rect(6.0, 4.0, 14.0, 12.0);
        assert_eq!(make_db_targets(&[&a, &b], 16, 16), make_db_targets(&[&b, &a], 16, 16));
    }

    #[test]
    fn generated_scenes() {
        let cfg = DetGenConfig::default();
        let a = gen_det_dataset(40, &cfg, 5).unwrap();
        assert_eq!(a, gen_det_dataset(40, &cfg, 5).unwrap());
        for s in &a {
            for (i, p) in s.instances.iter().enumerate() {
                for q in &s.instances[..i] {
                    assert!(!polygons_overlap(&p.polygon, &q.polygon));
                }
                assert_eq!(p.patch.width(), 4 * p.text.len() + 1);
            }
        }
        let empty = DetGenConfig {
            min_instances: 0,
            max_instances: 0,
            ..cfg
        };
        let s = &gen_det_dataset(1, &empty, 0).unwrap()[0];
        assert!(s.instances.is_empty());
        assert!(s.targets.prob_gt.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaled_glyphs() {
        let cfg = DetGenConfig {
            size: 64,
            glyph_scale: 2,
            noise_level: 0.0,
            ..DetGenConfig::default()
        };
        for s in gen_det_dataset(20, &cfg, 6).unwrap() {
            for inst in &s.instances {
                let n = inst.text.len();
                assert_eq!((inst.patch.width(), inst.patch.height()), ((4 * n - 1) * 2 + 2, 12));
                // font pixels come in 2×2 squares
                let p = &inst.patch;
                for y in (1..11).step_by(2) {
                    for x in (1..p.width() - 1).step_by(2) {
                        let v = p.get(x, y);
                        assert!(p.get(x + 1, y) == v && p.get(x, y + 1) == v && p.get(x + 1, y + 1) == v);
                    }
                }
            }
        }
        let zero = DetGenConfig { glyph_scale: 0, ..DetGenConfig::default() };
        assert!(gen_det_dataset(1, &zero, 0).is_err());
    }
}
