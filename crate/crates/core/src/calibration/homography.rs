//! Task-space correction: homographies from true canvas coordinates to the
//! robot's estimated coordinates, one per grid cell.

use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{CalibrationError, Rect};
use crate::format::{self, FormatError};
use crate::geometry::Vec2;

pub const HOMOGRAPHY_SCHEMA: &str = "muralbot.homography/1";

/// Out-of-map tolerance, meters.
pub const MAP_EPSILON: f64 = 1e-3;

fn collinear(a: &Vec2, b: &Vec2, c: &Vec2) -> bool {
    let scale = (b - a).norm().max((c - a).norm()).max(1e-300);
    (b - a).perp(&(c - a)).abs() <= 1e-9 * scale * scale
}

fn check_corners(p: &[Vec2; 4], which: &str) -> Result<(), CalibrationError> {
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if collinear(&p[i], &p[j], &p[k]) {
            return Err(CalibrationError::Degenerate(format!("{which} corners {i}, {j}, {k} are collinear")));
        }
    }
    Ok(())
}

/// Direct linear transform from exactly four correspondences, normalised
/// so that `H[(2, 2)] = 1`. Maps `true_corners[i]` to `measured[i]`.
pub fn fit_homography(true_corners: &[Vec2; 4], measured: &[Vec2; 4]) -> Result<Matrix3<f64>, CalibrationError> {
    check_corners(true_corners, "true")?;
    check_corners(measured, "measured")?;
    // Normalise both point sets for conditioning.
    let norm = |pts: &[Vec2; 4]| {
        let c = pts.iter().sum::<Vec2>() / 4.0;
        let s = (pts.iter().map(|p| (p - c).norm()).sum::<f64>() / 4.0).max(1e-300);
        let t = Matrix3::new(1.0 / s, 0.0, -c.x / s, 0.0, 1.0 / s, -c.y / s, 0.0, 0.0, 1.0);
        (t, pts.map(|p| (p - c) / s))
    };
    let (tt, src) = norm(true_corners);
    let (tm, dst) = norm(measured);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y, u, v) = (src[i].x, src[i].y, dst[i].x, dst[i].y);
        let r = 2 * i;
        a.fixed_view_mut::<1, 8>(r, 0).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.fixed_view_mut::<1, 8>(r + 1, 0).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b).ok_or_else(|| CalibrationError::Degenerate("singular DLT system".into()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let tm_inv = tm.try_inverse().ok_or_else(|| CalibrationError::Degenerate("degenerate measured scale".into()))?;
    let full = tm_inv * hn * tt;
    if full[(2, 2)].abs() < 1e-300 {
        return Err(CalibrationError::Degenerate("homography maps the origin to infinity".into()));
    }
    let full = full / full[(2, 2)];
    if full.determinant().abs() < 1e-300 {
        return Err(CalibrationError::Degenerate("homography is singular".into()));
    }
    Ok(full)
}

pub fn apply_homography(h: &Matrix3<f64>, p: &Vec2) -> Vec2 {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vec2::new(q.x / q.z, q.y / q.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub row: usize,
    pub col: usize,
    /// Cell in true canvas coordinates.
    pub rect: Rect,
    /// Row-major 3x3 homography, true to measured.
    pub h: [[f64; 3]; 3],
}

impl Section {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h[r][c])
    }

    fn from_matrix(row: usize, col: usize, rect: Rect, m: &Matrix3<f64>) -> Self {
        Self { row, col, rect, h: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyMap {
    pub schema: String,
    /// Sorted bottom-to-top, then left-to-right.
    pub sections: Vec<Section>,
    pub true_points: Vec<[f64; 2]>,
    pub measured_points: Vec<[f64; 2]>,
}

fn unique_sorted(mut v: Vec<f64>, tol: f64) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= tol);
    v
}

struct Grid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    measured: Vec<Vec<Vec2>>,
}

fn infer_grid(pairs: &[(Vec2, Vec2)]) -> Result<Grid, CalibrationError> {
    let tol = 1e-9;
    let xs = unique_sorted(pairs.iter().map(|p| p.0.x).collect(), tol);
    let ys = unique_sorted(pairs.iter().map(|p| p.0.y).collect(), tol);
    if xs.len() < 2 || ys.len() < 2 {
        return Err(CalibrationError::Degenerate("grid needs at least two distinct x and y values".into()));
    }
    let mut cells: Vec<Vec<Option<Vec2>>> = vec![vec![None; xs.len()]; ys.len()];
    for (t, m) in pairs {
        let c = xs.iter().position(|x| (x - t.x).abs() <= tol).expect("x present");
        let r = ys.iter().position(|y| (y - t.y).abs() <= tol).expect("y present");
        if cells[r][c].replace(*m).is_some() {
            return Err(CalibrationError::Invalid(format!("duplicate grid point ({}, {})", t.x, t.y)));
        }
    }
    let holes: Vec<(usize, usize)> =
        (0..ys.len()).flat_map(|r| (0..xs.len()).map(move |c| (r, c))).filter(|(r, c)| cells[*r][*c].is_none()).collect();
    if !holes.is_empty() {
        return Err(CalibrationError::MissingGridPoints { holes });
    }
    let measured = cells.into_iter().map(|row| row.into_iter().map(|m| m.expect("filled")).collect()).collect();
    Ok(Grid { xs, ys, measured })
}

fn section(grid: &Grid, r0: usize, c0: usize, r1: usize, c1: usize, row: usize, col: usize) -> Result<Section, CalibrationError> {
    let t = [
        Vec2::new(grid.xs[c0], grid.ys[r0]),
        Vec2::new(grid.xs[c1], grid.ys[r0]),
        Vec2::new(grid.xs[c1], grid.ys[r1]),
        Vec2::new(grid.xs[c0], grid.ys[r1]),
    ];
    let m = [grid.measured[r0][c0], grid.measured[r0][c1], grid.measured[r1][c1], grid.measured[r1][c0]];
    let h = fit_homography(&t, &m)?;
    Ok(Section::from_matrix(row, col, Rect::new(t[0], t[2]), &h))
}

fn points(pairs: &[(Vec2, Vec2)]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    (pairs.iter().map(|p| [p.0.x, p.0.y]).collect(), pairs.iter().map(|p| [p.1.x, p.1.y]).collect())
}

/// One homography per cell of the `(true, measured)` grid. The grid shape
/// is inferred from the distinct true coordinates.
pub fn build_piecewise_map(pairs: &[(Vec2, Vec2)]) -> Result<HomographyMap, CalibrationError> {
    let grid = infer_grid(pairs)?;
    let mut sections = Vec::new();
    for r in 0..grid.ys.len() - 1 {
        for c in 0..grid.xs.len() - 1 {
            sections.push(section(&grid, r, c, r + 1, c + 1, r, c)?);
        }
    }
    let (true_points, measured_points) = points(pairs);
    Ok(HomographyMap { schema: HOMOGRAPHY_SCHEMA.to_string(), sections, true_points, measured_points })
}

/// A single homography through the four outer corners of the grid.
pub fn build_single_map(pairs: &[(Vec2, Vec2)]) -> Result<HomographyMap, CalibrationError> {
    let grid = infer_grid(pairs)?;
    let s = section(&grid, 0, 0, grid.ys.len() - 1, grid.xs.len() - 1, 0, 0)?;
    let (true_points, measured_points) = points(pairs);
    Ok(HomographyMap { schema: HOMOGRAPHY_SCHEMA.to_string(), sections: vec![s], true_points, measured_points })
}

impl HomographyMap {
    pub fn identity(rect: Rect) -> Self {
        Self {
            schema: HOMOGRAPHY_SCHEMA.to_string(),
            sections: vec![Section::from_matrix(0, 0, rect, &Matrix3::identity())],
            true_points: Vec::new(),
            measured_points: Vec::new(),
        }
    }

    /// Section used for a true-coordinate point: the first containing
    /// section in bottom-left-first order, else the nearest within
    /// [`MAP_EPSILON`].
    pub fn section_for(&self, p: &Vec2) -> Result<&Section, CalibrationError> {
        if let Some(s) = self.sections.iter().find(|s| s.rect.contains(p, 0.0)) {
            return Ok(s);
        }
        self.sections
            .iter()
            .map(|s| (s.rect.distance(p), s))
            .filter(|(d, _)| *d <= MAP_EPSILON)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, s)| s)
            .ok_or(CalibrationError::OutOfMap { x: p.x, y: p.y })
    }

    pub fn apply(&self, p: &Vec2) -> Result<Vec2, CalibrationError> {
        Ok(apply_homography(&self.section_for(p)?.matrix(), p))
    }

    /// Measured to true: the section whose inverse lands inside its own
    /// cell, bottom-left first.
    pub fn invert(&self, q: &Vec2) -> Result<Vec2, CalibrationError> {
        let mut best: Option<(f64, Vec2)> = None;
        for s in &self.sections {
            let Some(inv) = s.matrix().try_inverse() else { continue };
            let p = apply_homography(&inv, q);
            let d = s.rect.distance(&p);
            if d == 0.0 {
                return Ok(p);
            }
            if d <= MAP_EPSILON && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
        best.map(|(_, p)| p).ok_or(CalibrationError::OutOfMap { x: q.x, y: q.y })
    }

    pub fn bounds(&self) -> Rect {
        let mut r = self.sections[0].rect;
        for s in &self.sections[1..] {
            r.min = [r.min[0].min(s.rect.min[0]), r.min[1].min(s.rect.min[1])];
            r.max = [r.max[0].max(s.rect.max[0]), r.max[1].max(s.rect.max[1])];
        }
        r
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let m: HomographyMap = format::read_json(path)?;
        format::check_schema(path, &m.schema, HOMOGRAPHY_SCHEMA)?;
        if m.sections.is_empty() {
            return Err(FormatError::parse(path, "homography map has no sections"));
        }
        Ok(m)
    }
}

/// True-coordinate trajectory into the robot's estimated frame.
pub fn warp_trajectory(map: &HomographyMap, traj: &[Vec2]) -> Result<Vec<Vec2>, CalibrationError> {
    traj.iter().map(|p| map.apply(p)).collect()
}

pub fn unwarp_trajectory(map: &HomographyMap, traj: &[Vec2]) -> Result<Vec<Vec2>, CalibrationError> {
    traj.iter().map(|p| map.invert(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> [Vec2; 4] {
        [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]
    }

    #[test]
    fn identity_and_translation() {
        let sq = unit_square();
        let h = fit_homography(&sq, &sq).unwrap();
        assert!((h - Matrix3::identity()).abs().max() < 1e-12);
        let h = fit_homography(&sq, &sq.map(|p| p + Vec2::new(0.1, 0.0))).unwrap();
        let t = Matrix3::new(1.0, 0.0, 0.1, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((h - t).abs().max() < 1e-12);
    }

    #[test]
    fn random_homography_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut h = Matrix3::from_fn(|r, c| if r == c { 1.0 } else { 0.0 } + rng.gen_range(-0.2..0.2));
            h[(2, 0)] *= 0.3;
            h[(2, 1)] *= 0.3;
            h /= h[(2, 2)];
            let sq = unit_square();
            let img = sq.map(|p| apply_homography(&h, &p));
            let fit = fit_homography(&sq, &img).unwrap();
            assert!((fit - h).abs().max() <= 1e-10 * h.abs().max());
        }
    }

    #[test]
    fn collinear_corners_are_degenerate() {
        let bad = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 1.0)];
        assert!(matches!(fit_homography(&bad, &unit_square()), Err(CalibrationError::Degenerate(_))));
        assert!(matches!(fit_homography(&unit_square(), &bad), Err(CalibrationError::Degenerate(_))));
    }

    fn grid(rows: usize, cols: usize, warp: impl Fn(Vec2) -> Vec2) -> Vec<(Vec2, Vec2)> {
        let mut v = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let t = Vec2::new(0.5 + c as f64 * 0.9, 0.4 + r as f64 * 0.8);
                v.push((t, warp(t)));
            }
        }
        v
    }

    #[test]
    fn section_counts_and_corner_exactness() {
        let warp = |p: Vec2| p + Vec2::new(0.01 * p.y * p.x, -0.02 * p.x.sin());
        assert_eq!(build_piecewise_map(&grid(2, 2, warp)).unwrap().sections.len(), 1);
        let pairs = grid(3, 3, warp);
        let map = build_piecewise_map(&pairs).unwrap();
        assert_eq!(map.sections.len(), 4);
        for (t, m) in &pairs {
            assert!((map.apply(t).unwrap() - m).norm() < 1e-12);
        }
        assert_eq!(build_single_map(&pairs).unwrap().sections.len(), 1);
    }

    #[test]
    fn missing_points_are_listed() {
        let mut pairs = grid(3, 3, |p| p);
        pairs.remove(4);
        match build_piecewise_map(&pairs) {
            Err(CalibrationError::MissingGridPoints { holes }) => assert_eq!(holes, vec![(1, 1)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn affine_warp_is_continuous_across_cells() {
        let warp = |p: Vec2| Vec2::new(1.01 * p.x + 0.02 * p.y + 0.01, -0.01 * p.x + 0.99 * p.y - 0.02);
        let map = build_piecewise_map(&grid(3, 3, warp)).unwrap();
        let x = 1.4;
        for k in 0..100 {
            let p = Vec2::new(x, 0.4 + 1.6 * k as f64 / 99.0);
            let a = apply_homography(&map.sections[0].matrix(), &p);
            let b = apply_homography(&map.sections[1].matrix(), &p);
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn warp_round_trip_and_lookup() {
        let warp = |p: Vec2| p + Vec2::new(0.01 * p.y * p.x, -0.02 * p.x.sin());
        let map = build_piecewise_map(&grid(3, 3, warp)).unwrap();
        let traj: Vec<Vec2> = (0..200).map(|k| Vec2::new(0.5 + 1.8 * k as f64 / 199.0, 0.4 + 1.6 * (k as f64 * 0.1).sin().abs())).collect();
        let warped = warp_trajectory(&map, &traj).unwrap();
        let back = unwarp_trajectory(&map, &warped).unwrap();
        for (a, b) in traj.iter().zip(&back) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(map.apply(&Vec2::new(0.4995, 0.4)).is_ok());
        assert!(matches!(map.apply(&Vec2::new(0.49, 0.4)), Err(CalibrationError::OutOfMap { .. })));
        // Shared vertex ties to the lower-left section.
        assert_eq!(map.section_for(&Vec2::new(1.4, 1.2)).unwrap().row, 0);
        assert_eq!(map.section_for(&Vec2::new(1.4, 1.2)).unwrap().col, 0);
    }

    #[test]
    fn json_round_trip() {
        let map = build_piecewise_map(&grid(3, 3, |p| p * 1.01)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        map.save(&path).unwrap();
        assert_eq!(HomographyMap::load(&path).unwrap(), map);
    }
}
