use crate::error::{Error, Result};
use crate::geom::Point;

/// Affine map from pixel `(col, row)` to world coordinates:
/// `x = a*col + b*row + c`, `y = d*col + e*row + f`.
///
/// Integer pixel coordinates address pixel centres, matching the world-file
/// convention where `(c, f)` is the centre of the upper-left pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
}

impl GeoTransform {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Result<Self> {
        let gt = Self { a, b, c, d, e, f };
        if gt.coefficients().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("geotransform coefficients must be finite"));
        }
        if gt.determinant() == 0.0 {
            return Err(Error::invalid("geotransform is not invertible (a*e - b*d = 0)"));
        }
        Ok(gt)
    }

    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            e: 1.0,
            f: 0.0,
        }
    }

    /// `[a, b, c, d, e, f]`.
    pub fn coefficients(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn pixel_to_world(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.c,
            self.d * p.x + self.e * p.y + self.f,
        )
    }

    pub fn world_to_pixel(&self, w: Point) -> Point {
        let det = self.determinant();
        let (dx, dy) = (w.x - self.c, w.y - self.f);
        Point::new(
            (self.e * dx - self.b * dy) / det,
            (self.a * dy - self.d * dx) / det,
        )
    }

    /// Six lines `a, d, b, e, c, f`.
    pub fn to_world_file(&self) -> String {
        [self.a, self.d, self.b, self.e, self.c, self.f]
            .iter()
            .map(|v| format!("{v}\n"))
            .collect()
    }

    pub fn from_world_file(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("world file value {l:?} is not a number")))
            })
            .collect::<Result<_>>()?;
        let [a, d, b, e, c, f] = values[..] else {
            return Err(Error::invalid(format!(
                "world file needs 6 values, found {}",
                values.len()
            )));
        };
        Self::new(a, b, c, d, e, f)
    }

    /// Parses `a,b,c,d,e,f`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("transform value {s:?} is not a number")))
            })
            .collect::<Result<_>>()?;
        let [a, b, c, d, e, f] = values[..] else {
            return Err(Error::invalid("transform needs 6 comma-separated values a,b,c,d,e,f"));
        };
        Self::new(a, b, c, d, e, f)
    }
}

impl Default for GeoTransform {
    fn default() -> Self {
        Self::identity()
    }
}
