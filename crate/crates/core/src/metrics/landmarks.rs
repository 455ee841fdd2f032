//! Landmark-based alignment error: spread of corresponding landmarks after
//! warping, normalised by the mean eye-to-eye distance.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::warp::Homography;

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    /// Indices of the two eye landmarks used for normalisation.
    pub eyes: (usize, usize),
    pub ids: Vec<String>,
    pub points: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkError {
    /// Percent error per landmark.
    pub per_landmark: Vec<f64>,
    pub mean: f64,
}

impl LandmarkSet {
    pub fn new(eyes: (usize, usize), ids: Vec<String>, points: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let set = LandmarkSet { eyes, ids, points };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        let bad = |reason: String| Error::malformed("landmarks", reason);
        if self.points.is_empty() {
            return Err(bad("no images".into()));
        }
        if self.ids.len() != self.points.len() {
            return Err(bad("one id per image required".into()));
        }
        let k = self.points[0].len();
        if self.points.iter().any(|p| p.len() != k) {
            return Err(bad("images carry different landmark counts".into()));
        }
        if self.eyes.0 == self.eyes.1 || self.eyes.0 >= k || self.eyes.1 >= k {
            return Err(bad(format!("eye indices {:?} invalid for {k} landmarks", self.eyes)));
        }
        if self
            .points
            .iter()
            .flatten()
            .any(|(x, y)| !(x.is_finite() && y.is_finite()))
        {
            return Err(bad("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// Checks that every landmark lies inside a `width x height` frame.
    pub fn check_frame(&self, width: usize, height: usize) -> Result<()> {
        let (w, h) = (width as f64, height as f64);
        match self
            .points
            .iter()
            .flatten()
            .find(|&&(x, y)| x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0)
        {
            Some(p) => Err(Error::malformed("landmarks", format!("{p:?} outside {width}x{height}"))),
            None => Ok(()),
        }
    }

    /// Text form: a header `eyes <a> <b>`, then `<id> x1 y1 x2 y2 ...` per image.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed("landmarks", "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let eyes = match fields.as_slice() {
            ["eyes", a, b] => (
                a.parse()
                    .map_err(|_| Error::malformed("landmarks", format!("bad eye index {a:?}")))?,
                b.parse()
                    .map_err(|_| Error::malformed("landmarks", format!("bad eye index {b:?}")))?,
            ),
            _ => {
                return Err(Error::malformed(
                    "landmarks",
                    format!("expected `eyes <a> <b>`, got {header:?}"),
                ))
            }
        };
        let mut ids = Vec::new();
        let mut points = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let id = it.next().unwrap_or_default().to_string();
            let vals = it
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::malformed("landmarks", format!("bad number {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() % 2 != 0 {
                return Err(Error::malformed("landmarks", format!("odd coordinate count for {id}")));
            }
            ids.push(id);
            points.push(vals.chunks(2).map(|p| (p[0], p[1])).collect());
        }
        Self::new(eyes, ids, points)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("eyes {} {}\n", self.eyes.0, self.eyes.1);
        for (id, pts) in self.ids.iter().zip(&self.points) {
            out.push_str(id);
            for (x, y) in pts {
                let _ = write!(out, " {x} {y}");
            }
            out.push('\n');
        }
        out
    }
}

/// Maps every image's landmarks through its warp and reports, per landmark,
/// the mean distance to the landmark's centroid as a percentage of the mean
/// eye-to-eye distance.
pub fn landmark_error(set: &LandmarkSet, warps: &[Homography]) -> Result<LandmarkError> {
    set.check()?;
    if warps.len() != set.points.len() {
        return Err(Error::ShapeMismatch {
            op: "landmark_error",
            left: vec![set.points.len()],
            right: vec![warps.len()],
        });
    }
    let mapped: Vec<Vec<(f64, f64)>> = set
        .points
        .iter()
        .zip(warps)
        .map(|(pts, h)| pts.iter().map(|&(x, y)| h.apply(x, y)).collect())
        .collect();
    let n = mapped.len() as f64;
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let eye = mapped.iter().map(|p| dist(p[set.eyes.0], p[set.eyes.1])).sum::<f64>() / n;
    if eye.is_nan() || eye < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "mean eye-to-eye distance {eye} px is below 1 px"
        )));
    }
    let k = mapped[0].len();
    let per_landmark: Vec<f64> = (0..k)
        .map(|l| {
            let cx = mapped.iter().map(|p| p[l].0).sum::<f64>() / n;
            let cy = mapped.iter().map(|p| p[l].1).sum::<f64>() / n;
            let spread = mapped.iter().map(|p| dist(p[l], (cx, cy))).sum::<f64>() / n;
            100.0 * spread / eye
        })
        .collect();
    let mean = per_landmark.iter().sum::<f64>() / k as f64;
    Ok(LandmarkError { per_landmark, mean })
}
