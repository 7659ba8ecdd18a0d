use log::warn;

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, polyline_length, Point};
use crate::raster::{Class, Mask};

use super::{GeoTransform, VectorLayer};

/// Calls `f(x, y)` for every pixel whose centre is within `radius` of the
/// polyline (pixel coordinates).
pub fn stroke_polyline_pixels(
    points: &[Point],
    radius: f64,
    width: usize,
    height: usize,
    mut f: impl FnMut(usize, usize),
) {
    let segments: Vec<(Point, Point)> = if points.len() == 1 {
        vec![(points[0], points[0])]
    } else {
        points.windows(2).map(|w| (w[0], w[1])).collect()
    };
    let clamp_lo = |v: f64| v.ceil().max(0.0) as usize;
    let clamp_hi = |v: f64, n: usize| (v.floor().min(n as f64 - 1.0)).max(-1.0) as i64;
    for (a, b) in segments {
        let x0 = clamp_lo(a.x.min(b.x) - radius);
        let y0 = clamp_lo(a.y.min(b.y) - radius);
        let x1 = clamp_hi(a.x.max(b.x) + radius, width);
        let y1 = clamp_hi(a.y.max(b.y) + radius, height);
        for y in y0 as i64..=y1 {
            for x in x0 as i64..=x1 {
                let p = Point::new(x as f64, y as f64);
                if point_segment_distance(p, a, b) <= radius {
                    f(x as usize, y as usize);
                }
            }
        }
    }
}

/// Calls `f(x, y)` for every pixel whose centre is inside the polygon under
/// the even-odd rule. Rings are in pixel coordinates and closed.
pub fn fill_polygon_pixels(rings: &[Vec<Point>], width: usize, height: usize, mut f: impl FnMut(usize, usize)) {
    let edges: Vec<(Point, Point)> = rings
        .iter()
        .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let (ymin, ymax) = edges
        .iter()
        .flat_map(|(p, q)| [p.y, q.y])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !ymin.is_finite() {
        return;
    }
    let row_lo = ymin.ceil().max(0.0) as usize;
    let row_hi = (ymax.floor() as i64).min(height as i64 - 1);
    let mut xs = Vec::new();
    for row in row_lo as i64..=row_hi {
        let y = row as f64;
        xs.clear();
        for &(p, q) in &edges {
            if (p.y > y) != (q.y > y) {
                xs.push(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let from = pair[0].ceil().max(0.0);
            let to = pair[1].ceil().min(width as f64);
            let mut x = from;
            while x < to {
                f(x as usize, row as usize);
                x += 1.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterizeOptions {
    pub width: usize,
    pub height: usize,
    /// Stroke radius of roads in meters.
    pub road_buffer: f64,
    /// Ground sampling distance in meters per pixel.
    pub gsd: f64,
}

#[derive(Debug, Clone)]
pub struct Rasterized {
    pub mask: Mask,
    pub warnings: Vec<String>,
}

/// Burns buildings (code 1, filled) and then roads (code 2, stroked with a
/// disc of `road_buffer / gsd` pixels) into a background mask.
pub fn rasterize(layer: &VectorLayer, gt: &GeoTransform, opts: RasterizeOptions) -> Result<Rasterized> {
    if !(opts.road_buffer >= 0.0) {
        return Err(Error::invalid(format!("road buffer must be >= 0, got {}", opts.road_buffer)));
    }
    if !(opts.gsd > 0.0) {
        return Err(Error::invalid(format!("gsd must be > 0, got {}", opts.gsd)));
    }
    let (w, h) = (opts.width, opts.height);
    let mut mask = Mask::filled(w, h, Class::Background)?;
    let mut warnings = Vec::new();

    for b in &layer.buildings {
        let rings: Vec<Vec<Point>> = b
            .rings
            .iter()
            .map(|r| r.iter().map(|&p| gt.world_to_pixel(p)).collect())
            .collect();
        fill_polygon_pixels(&rings, w, h, |x, y| mask.set(x, y, Class::Building));
    }

    let radius = opts.road_buffer / opts.gsd;
    for (i, r) in layer.roads.iter().enumerate() {
        if polyline_length(&r.points) == 0.0 {
            let msg = format!("road {i}: zero-length polyline skipped");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let px: Vec<Point> = r.points.iter().map(|&p| gt.world_to_pixel(p)).collect();
        stroke_polyline_pixels(&px, radius, w, h, |x, y| mask.set(x, y, Class::Road));
    }
    Ok(Rasterized { mask, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_io::{Building, Road};
    use crate::road_graph::Units;
    use proptest::prelude::*;

    fn opts(w: usize, h: usize) -> RasterizeOptions {
        RasterizeOptions {
            width: w,
            height: h,
            road_buffer: 2.0,
            gsd: 0.5,
        }
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
        vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
            Point::new(x0, y0),
        ]
    }

    /// Crossing-number test with the half-open rule on vertex rows.
    fn inside_even_odd(p: Point, rings: &[Vec<Point>]) -> bool {
        let mut inside = false;
        for ring in rings {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if (a.y > p.y) != (b.y > p.y) {
                    let xint = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                    if p.x < xint {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    #[test]
    fn empty_layer_is_background() {
        let out = rasterize(&VectorLayer::new(Units::Pixels), &GeoTransform::identity(), opts(20, 10)).unwrap();
        assert_eq!(out.mask.count(Class::Background), 200);
    }

    #[test]
    fn horizontal_road_band() {
        let mut layer = VectorLayer::new(Units::Pixels);
        layer.roads.push(Road {
            highway: "primary".into(),
            points: vec![Point::new(-5.0, 50.0), Point::new(105.0, 50.0)],
        });
        let m = rasterize(&layer, &GeoTransform::identity(), opts(100, 100)).unwrap().mask;
        let rows: Vec<usize> = (0..100).filter(|&y| m.get(50, y) == Class::Road).collect();
        assert_eq!(rows, (46..=54).collect::<Vec<_>>());
        assert_eq!(m.count(Class::Road), 900);
    }

    #[test]
    fn square_building_fills_pixels() {
        let mut layer = VectorLayer::new(Units::Pixels);
        layer.buildings.push(Building {
            building: "yes".into(),
            rings: vec![square(10.0, 10.0, 20.0, 20.0)],
        });
        let m = rasterize(&layer, &GeoTransform::identity(), opts(32, 32)).unwrap().mask;
        for y in 0..32 {
            for x in 0..32 {
                let want = (10..20).contains(&x) && (10..20).contains(&y);
                assert_eq!(m.get(x, y) == Class::Building, want, "({x}, {y})");
            }
        }
    }

    #[test]
    fn hole_is_left_empty_and_road_wins() {
        let mut layer = VectorLayer::new(Units::Pixels);
        layer.buildings.push(Building {
            building: "yes".into(),
            rings: vec![square(0.0, 0.0, 20.0, 20.0), square(5.0, 5.0, 15.0, 15.0)],
        });
        layer.roads.push(Road {
            highway: "service".into(),
            points: vec![Point::new(2.0, 0.0), Point::new(2.0, 30.0)],
        });
        let m = rasterize(&layer, &GeoTransform::identity(), opts(30, 30)).unwrap().mask;
        assert_eq!(m.get(10, 10), Class::Background);
        assert_eq!(m.get(17, 10), Class::Building);
        assert_eq!(m.get(2, 10), Class::Road);
    }

    #[test]
    fn transform_and_degenerate_roads() {
        let gt = GeoTransform::new(0.5, 0.0, 100.0, 0.0, -0.5, 200.0).unwrap();
        let mut layer = VectorLayer::new(Units::Meters);
        layer.roads.push(Road {
            highway: "trunk".into(),
            points: vec![Point::new(105.0, 195.0), Point::new(105.0, 195.0)],
        });
        layer.roads.push(Road {
            highway: "trunk".into(),
            points: vec![Point::new(100.0, 195.0), Point::new(120.0, 195.0)],
        });
        let out = rasterize(&layer, &gt, opts(50, 50)).unwrap();
        assert_eq!(out.warnings.len(), 1);
        // World y = 195 is pixel row 10.
        assert_eq!(out.mask.get(20, 10), Class::Road);
        assert_eq!(out.mask.get(20, 20), Class::Background);
        assert!(rasterize(&layer, &gt, RasterizeOptions { gsd: 0.0, ..opts(5, 5) }).is_err());
        assert!(rasterize(&layer, &gt, RasterizeOptions { road_buffer: -1.0, ..opts(5, 5) }).is_err());
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (-4.0f64..28.0, -4.0f64..28.0).prop_map(|(x, y)| Point::new(x, y))
    }

    proptest! {
        #[test]
        fn membership_matches_geometric_predicates(
            roads in proptest::collection::vec(proptest::collection::vec(arb_point(), 2..4), 0..3),
            polys in proptest::collection::vec(proptest::collection::vec(arb_point(), 3..6), 0..3),
            buffer in 0.0f64..4.0,
        ) {
            let mut layer = VectorLayer::new(Units::Pixels);
            for mut ring in polys {
                ring.push(ring[0]);
                layer.buildings.push(Building { building: "yes".into(), rings: vec![ring] });
            }
            for points in roads {
                layer.roads.push(Road { highway: "primary".into(), points });
            }
            let o = RasterizeOptions { width: 24, height: 24, road_buffer: buffer, gsd: 1.0 };
            let m = rasterize(&layer, &GeoTransform::identity(), o).unwrap().mask;
            for y in 0..24 {
                for x in 0..24 {
                    let p = Point::new(x as f64, y as f64);
                    let on_road = layer.roads.iter().any(|r| {
                        polyline_length(&r.points) > 0.0
                            && r.points.windows(2).any(|w| point_segment_distance(p, w[0], w[1]) <= buffer)
                    });
                    let in_building = layer.buildings.iter().any(|b| inside_even_odd(p, &b.rings));
                    let want = if on_road { Class::Road } else if in_building { Class::Building } else { Class::Background };
                    prop_assert_eq!(m.get(x, y), want, "pixel ({}, {})", x, y);
                }
            }
        }
    }
}
