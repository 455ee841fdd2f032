//! Four-point homography parameterisation.
//!
//! A warp is encoded by the displacement of the four frame corners, ordered
//! top-left, top-right, bottom-right, bottom-left, each as `(dx, dy)` in
//! pixels. Corners sit on pixel centres: `(0, 0)`, `(w-1, 0)`, `(w-1, h-1)`,
//! `(0, h-1)`. The induced 3x3 matrix maps canonical corners onto displaced
//! ones; images are warped by sampling at the inverse-mapped location.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DET_EPS: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e10;

/// Eight corner displacements in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WarpParams(pub [f64; 8]);

impl WarpParams {
    pub fn identity() -> Self {
        WarpParams([0.0; 8])
    }

    pub fn from_slice(d: &[f64]) -> Result<Self> {
        let arr: [f64; 8] = d.try_into().map_err(|_| Error::ShapeMismatch {
            op: "warp params",
            left: vec![d.len()],
            right: vec![8],
        })?;
        Ok(WarpParams(arr))
    }

    /// Same displacement applied to every corner.
    pub fn translation(dx: f64, dy: f64) -> Self {
        WarpParams([dx, dy, dx, dy, dx, dy, dx, dy])
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Displaced corner positions.
    pub fn displaced_corners(&self, width: usize, height: usize) -> [(f64, f64); 4] {
        let c = canonical_corners(width, height);
        std::array::from_fn(|i| (c[i].0 + self.0[2 * i], c[i].1 + self.0[2 * i + 1]))
    }

    /// Corner displacements that reproduce `h` on a `width x height` frame.
    pub fn from_homography(h: &Homography, width: usize, height: usize) -> Self {
        let c = canonical_corners(width, height);
        let mut d = [0.0; 8];
        for (i, &(x, y)) in c.iter().enumerate() {
            let (u, v) = h.apply(x, y);
            d[2 * i] = u - x;
            d[2 * i + 1] = v - y;
        }
        WarpParams(d)
    }

    pub fn to_homography(&self, width: usize, height: usize) -> Result<Homography> {
        corners_to_homography(self, width, height)
    }
}

pub fn canonical_corners(width: usize, height: usize) -> [(f64, f64); 4] {
    let (w, h) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
}

/// Projective transform with `H[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Normalises so the bottom-right entry is 1 and checks invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateWarp("non-finite matrix".into()));
        }
        let s = m[(2, 2)];
        if s.abs() < DET_EPS {
            return Err(Error::DegenerateWarp("bottom-right entry is zero".into()));
        }
        let m = m / s;
        let det = m.determinant();
        if det.abs() < DET_EPS {
            return Err(Error::DegenerateWarp(format!("determinant {det:e}")));
        }
        Ok(Homography(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        let mut m = Matrix3::identity();
        m[(0, 2)] = tx;
        m[(1, 2)] = ty;
        Homography(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.0[(r, c)]))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::DegenerateWarp("singular homography".into()))?;
        Homography::from_matrix(inv)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    /// Mean distance between each canonical corner and its image under `self`.
    pub fn corner_error(&self, width: usize, height: usize) -> f64 {
        canonical_corners(width, height)
            .iter()
            .map(|&(x, y)| {
                let (u, v) = self.apply(x, y);
                ((u - x).powi(2) + (v - y).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 4.0
    }

    /// Area of the frame's image divided by the frame area.
    pub fn area_ratio(&self, width: usize, height: usize) -> f64 {
        let c = canonical_corners(width, height);
        let mapped: Vec<(f64, f64)> = c.iter().map(|&(x, y)| self.apply(x, y)).collect();
        polygon_area(&mapped) / polygon_area(&c)
    }
}

fn polygon_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// `a . b`: applying the result equals applying `b` then `a`.
pub fn compose(a: &Homography, b: &Homography) -> Result<Homography> {
    Homography::from_matrix(a.0 * b.0)
}

/// Pixel-to-normalised coordinate map sending corners to `[-1, 1]^2`.
fn normaliser(width: usize, height: usize) -> (Matrix3<f64>, Matrix3<f64>) {
    let (w, h) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    let n = Matrix3::new(2.0 / w, 0.0, -1.0, 0.0, 2.0 / h, -1.0, 0.0, 0.0, 1.0);
    let n_inv = Matrix3::new(w / 2.0, 0.0, w / 2.0, 0.0, h / 2.0, h / 2.0, 0.0, 0.0, 1.0);
    (n, n_inv)
}

const UNIT_CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

struct CornerSystem {
    /// Homography in normalised coordinates.
    hn: Matrix3<f64>,
    /// LU of the 8x8 system, kept for the parameter Jacobian.
    lu: nalgebra::LU<f64, nalgebra::Const<8>, nalgebra::Const<8>>,
}

fn solve_corner_system(d: &WarpParams, width: usize, height: usize) -> Result<CornerSystem> {
    if !d.0.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateWarp("non-finite corner displacement".into()));
    }
    let (w, h) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, &(x, y)) in UNIT_CORNERS.iter().enumerate() {
        let xp = x + d.0[2 * i] * 2.0 / w;
        let yp = y + d.0[2 * i + 1] * 2.0 / h;
        let r = 2 * i;
        a.set_row(
            r,
            &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -x * xp, -y * xp]),
        );
        a.set_row(
            r + 1,
            &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -x * yp, -y * yp]),
        );
        b[r] = xp;
        b[r + 1] = yp;
    }
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > MAX_CONDITION {
        return Err(Error::DegenerateWarp(format!(
            "corner system condition number {:e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let lu = a.lu();
    let sol = lu
        .solve(&b)
        .ok_or_else(|| Error::DegenerateWarp("singular corner system".into()))?;
    let hn = Matrix3::new(sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0);
    Ok(CornerSystem { hn, lu })
}

/// Homography mapping each canonical corner to its displaced position.
pub fn corners_to_homography(d: &WarpParams, width: usize, height: usize) -> Result<Homography> {
    if d.is_identity() {
        return Ok(Homography::identity());
    }
    let sys = solve_corner_system(d, width, height)?;
    let (n, n_inv) = normaliser(width, height);
    Homography::from_matrix(n_inv * sys.hn * n)
}

/// Inverse homography together with its derivatives with respect to the
/// eight corner displacements, as consumed by the differentiable sampler.
#[derive(Debug, Clone)]
pub struct InverseWithJacobian {
    pub inverse: Matrix3<f64>,
    pub d_inverse: [Matrix3<f64>; 8],
}

pub fn inverse_with_jacobian(d: &WarpParams, width: usize, height: usize) -> Result<InverseWithJacobian> {
    let sys = solve_corner_system(d, width, height)?;
    let (n, n_inv) = normaliser(width, height);
    let h = n_inv * sys.hn * n;
    Homography::from_matrix(h)?;
    let m = if d.is_identity() {
        Matrix3::identity()
    } else {
        h.try_inverse()
            .ok_or_else(|| Error::DegenerateWarp("singular homography".into()))?
    };
    let (w, hh) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    let hn = &sys.hn;
    let mut d_inverse = [Matrix3::zeros(); 8];
    for (k, dm) in d_inverse.iter_mut().enumerate() {
        let corner = k / 2;
        let (x, y) = UNIT_CORNERS[corner];
        // Implicit differentiation of A(d) h = b(d): only row k of the system
        // moves, and its right-hand side derivative is the corner's projective
        // denominator.
        let denom = 1.0 + x * hn[(2, 0)] + y * hn[(2, 1)];
        let scale = if k % 2 == 0 { 2.0 / w } else { 2.0 / hh };
        let mut e = SVector::<f64, 8>::zeros();
        e[k] = denom * scale;
        let dh = sys
            .lu
            .solve(&e)
            .ok_or_else(|| Error::DegenerateWarp("singular corner system".into()))?;
        let dhn = Matrix3::new(dh[0], dh[1], dh[2], dh[3], dh[4], dh[5], dh[6], dh[7], 0.0);
        let dh_pix = n_inv * dhn * n;
        *dm = -(m * dh_pix * m);
    }
    Ok(InverseWithJacobian { inverse: m, d_inverse })
}
