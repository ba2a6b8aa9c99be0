use rand::Rng;

use super::det::{pixel_box, DetSample, TextInstance};
use super::geometry::{aabb, point_in_polygon, Polygon};
use super::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct CopyPasteConfig {
    /// Placements tried per donor before it is skipped.
    pub max_attempts: usize,
    /// Rotations are drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
}

impl Default for CopyPasteConfig {
    fn default() -> Self {
        CopyPasteConfig {
            max_attempts: 20,
            max_rotation_deg: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PasteStats {
    pub offered: usize,
    pub accepted: usize,
    pub skipped: usize,
}

/// Donor rotated about its patch center, with the polygon expressed relative
/// to the top-left of its own bounding box.
struct Rotated<'a> {
    donor: &'a TextInstance,
    polygon: Polygon,
    width: usize,
    height: usize,
    /// Offset from rotated-box coordinates back to the pre-rotation frame.
    shift: [f64; 2],
    cos: f64,
    sin: f64,
}

impl<'a> Rotated<'a> {
    fn new(donor: &'a TextInstance, angle_deg: f64) -> Self {
        let (px0, py0, _, _) = pixel_box(&donor.polygon);
        let (cx, cy) = (donor.patch.width() as f64 / 2.0, donor.patch.height() as f64 / 2.0);
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let local: Polygon = donor
            .polygon
            .iter()
            .map(|p| {
                let (x, y) = (p[0] - px0 as f64 - cx, p[1] - py0 as f64 - cy);
                [cos * x - sin * y + cx, sin * x + cos * y + cy]
            })
            .collect();
        let (x0, y0, x1, y1) = aabb(&local);
        let polygon = local.iter().map(|p| [p[0] - x0, p[1] - y0]).collect();
        Rotated {
            donor,
            polygon,
            width: (x1 - x0).ceil() as usize,
            height: (y1 - y0).ceil() as usize,
            shift: [x0, y0],
            cos,
            sin,
        }
    }

    /// Nearest source pixel of the patch for the rotated-frame point `(x, y)`.
    fn sample(&self, x: f64, y: f64) -> u8 {
        let patch = &self.donor.patch;
        let (cx, cy) = (patch.width() as f64 / 2.0, patch.height() as f64 / 2.0);
        let (rx, ry) = (x + self.shift[0] - cx, y + self.shift[1] - cy);
        let sx = self.cos * rx + self.sin * ry + cx;
        let sy = -self.sin * rx + self.cos * ry + cy;
        let ix = (sx.floor().max(0.0) as usize).min(patch.width() - 1);
        let iy = (sy.floor().max(0.0) as usize).min(patch.height() - 1);
        patch.get(ix, iy)
    }
}

fn boxes_intersect(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

/// Pastes donors into `base` at random non-overlapping positions. A
/// placement is accepted when its bounding box meets no existing or
/// previously pasted instance's box; pixels whose centers fall inside the
/// placed polygon are overwritten, all others are left untouched. Targets
/// are rebuilt from the final instance list.
pub fn copy_paste(
    base: &DetSample,
    donors: &[TextInstance],
    rng: &mut impl Rng,
    config: &CopyPasteConfig,
) -> (DetSample, PasteStats) {
    let mut stats = PasteStats {
        offered: donors.len(),
        ..PasteStats::default()
    };
    if donors.is_empty() {
        return (base.clone(), stats);
    }
    let mut image: Image = base.image.clone();
    let mut instances = base.instances.clone();
    let mut boxes: Vec<_> = instances.iter().map(|i| aabb(&i.polygon)).collect();
    let mut pasted: Vec<(Polygon, String)> = Vec::new();
    for donor in donors {
        let mut placed = None;
        for _ in 0..config.max_attempts {
            let angle = if config.max_rotation_deg > 0.0 {
                rng.gen_range(-config.max_rotation_deg..=config.max_rotation_deg)
            } else {
                0.0
            };
            let rot = Rotated::new(donor, angle);
            if rot.width == 0 || rot.height == 0 || rot.width > image.width() || rot.height > image.height() {
                continue;
            }
            let ox = rng.gen_range(0..=image.width() - rot.width);
            let oy = rng.gen_range(0..=image.height() - rot.height);
            let poly: Polygon = rot.polygon.iter().map(|p| [p[0] + ox as f64, p[1] + oy as f64]).collect();
            let bb = aabb(&poly);
            if boxes.iter().all(|&b| !boxes_intersect(b, bb)) {
                placed = Some((rot, ox, oy, poly, bb));
                break;
            }
        }
        let Some((rot, ox, oy, poly, bb)) = placed else {
            stats.skipped += 1;
            continue;
        };
        for y in 0..rot.height {
            for x in 0..rot.width {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if point_in_polygon(&rot.polygon, cx, cy) {
                    image.set(ox + x, oy + y, rot.sample(cx, cy));
                }
            }
        }
        boxes.push(bb);
        pasted.push((poly, donor.text.clone()));
        stats.accepted += 1;
    }
    for (poly, text) in pasted {
        let inst = TextInstance::from_image(&image, poly, text).expect("placement lies inside the image");
        instances.push(inst);
    }
    (DetSample::new(image, instances), stats)
}
