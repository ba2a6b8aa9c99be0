//! Polygon helpers. Coordinates are in pixels with pixel `(x, y)` covering
//! `[x, x+1) × [y, y+1)`.

/// Closed polygon as a list of vertices.
pub type Polygon = Vec<[f64; 2]>;

/// Absolute shoelace area.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

pub fn perimeter(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum()
}

/// `(x0, y0, x1, y1)`.
pub fn aabb(poly: &[[f64; 2]]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
    )
}

/// Even-odd rule.
pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Distance from `(x, y)` to the polygon outline.
pub fn boundary_distance(poly: &[[f64; 2]], x: f64, y: f64) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (x - a[0] - t * dx).hypot(y - a[1] - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

fn project(poly: &[[f64; 2]], axis: [f64; 2]) -> (f64, f64) {
    poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = p[0] * axis[0] + p[1] * axis[1];
        (lo.min(v), hi.max(v))
    })
}

/// Whether two convex polygons share interior area (separating-axis test).
/// Polygons that only touch along an edge or corner do not overlap.
pub fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    const TOL: f64 = 1e-9;
    for poly in [a, b] {
        let n = poly.len();
        for i in 0..n {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            if axis[0] == 0.0 && axis[1] == 0.0 {
                continue;
            }
            let (alo, ahi) = project(a, axis);
            let (blo, bhi) = project(b, axis);
            let scale = axis[0].hypot(axis[1]);
            if ahi - blo <= TOL * scale || bhi - alo <= TOL * scale {
                return false;
            }
        }
    }
    true
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` as a clockwise polygon.
pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_measures() {
        let r = rect(1.0, 2.0, 5.0, 4.0);
        assert_eq!(polygon_area(&r), 8.0);
        assert_eq!(perimeter(&r), 12.0);
        assert_eq!(aabb(&r), (1.0, 2.0, 5.0, 4.0));
        assert!(point_in_polygon(&r, 2.5, 3.5));
        assert!(!point_in_polygon(&r, 0.5, 3.5));
        assert_eq!(boundary_distance(&r, 3.0, 3.0), 1.0);
        assert_eq!(boundary_distance(&r, 0.0, 3.0), 1.0);
    }

    #[test]
    fn overlap_cases() {
        let a = rect(0.0, 0.0, 4.0, 4.0);
        assert!(polygons_overlap(&a, &rect(3.0, 3.0, 6.0, 6.0)));
        assert!(!polygons_overlap(&a, &rect(4.0, 0.0, 6.0, 4.0)));
        assert!(!polygons_overlap(&a, &rect(5.0, 5.0, 6.0, 6.0)));
        // diamond whose corner pokes into the box
        let d = vec![[5.0, 2.0], [7.0, 0.0], [9.0, 2.0], [7.0, 4.0]];
        assert!(!polygons_overlap(&a, &d));
        let d2: Polygon = d.iter().map(|p| [p[0] - 1.5, p[1]]).collect();
        assert!(polygons_overlap(&a, &d2));
    }
}
