use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Closed airfoil polyline in chord units with mid-chord at the origin.
///
/// Point 0 is the trailing edge; the lower surface comes first so the
/// polyline runs clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirfoilProfile {
    pub points: Vec<[f64; 2]>,
    pub chord: f64,
    pub thickness_ratio: f64,
}

impl AirfoilProfile {
    /// Distinct vertices (the closing duplicate dropped).
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.points[..self.points.len() - 1]
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max)
    }
}

/// Symmetric NACA 4-digit half thickness with the closed trailing edge.
pub fn naca_half_thickness(t: f64, x: f64) -> f64 {
    5.0 * t * (0.2969 * x.sqrt() - 0.1260 * x - 0.3516 * x * x + 0.2843 * x.powi(3) - 0.1036 * x.powi(4))
}

pub fn naca_profile(thickness_ratio: f64, n_points: usize) -> Result<AirfoilProfile> {
    if !(thickness_ratio > 0.0 && thickness_ratio < 0.5) {
        return Err(Error::InvalidInput(format!("thickness ratio {thickness_ratio} outside (0, 0.5)")));
    }
    if n_points < 8 || n_points % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "airfoil needs an even number of at least 8 points to resolve the leading edge, got {n_points}"
        )));
    }
    let half = n_points / 2;
    let x_at = |k: usize| 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / half as f64).cos());
    let mut points = Vec::with_capacity(n_points + 1);
    for k in 0..=half {
        let x = x_at(k);
        points.push([x - 0.5, -naca_half_thickness(thickness_ratio, x)]);
    }
    for k in (half + 1)..n_points {
        let x = x_at(n_points - k);
        points.push([x - 0.5, naca_half_thickness(thickness_ratio, x)]);
    }
    points.push(points[0]);
    // Exact zeros at the ends of the closed trailing edge.
    points[0][1] = 0.0;
    points[n_points][1] = 0.0;
    points[half][1] = 0.0;
    Ok(AirfoilProfile { points, chord: 1.0, thickness_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
        let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        let d1 = orient(a, b, c);
        let d2 = orient(a, b, d);
        let d3 = orient(c, d, a);
        let d4 = orient(c, d, b);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }

    #[test]
    fn max_half_thickness_by_dense_sampling() {
        let (mut best, mut xb) = (0.0, 0.0);
        for k in 0..=200_000 {
            let x = k as f64 / 200_000.0;
            let y = naca_half_thickness(0.15, x);
            if y > best {
                best = y;
                xb = x;
            }
        }
        assert!((0.0742..=0.0751).contains(&best), "{best}");
        assert!((xb - 0.30).abs() < 0.02, "{xb}");
    }

    #[test]
    fn closed_trailing_edge() {
        assert_eq!(naca_half_thickness(0.15, 0.0), 0.0);
        assert!(naca_half_thickness(0.15, 1.0).abs() < 1e-15);
    }

    #[test]
    fn profile_fits_in_disk() {
        let p = naca_profile(0.15, 64).unwrap();
        assert!(p.max_radius() <= 0.52);
        assert!(p.max_radius() < 1.0);
    }

    #[test]
    fn profile_closed_simple_and_clockwise() {
        let p = naca_profile(0.15, 48).unwrap();
        assert_eq!(p.points.first(), p.points.last());
        let v = &p.points;
        let n = v.len() - 1;
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                assert!(!segments_cross(v[i], v[i + 1], v[j], v[j + 1]), "segments {i} and {j} cross");
            }
        }
        let area2: f64 = (0..n).map(|i| v[i][0] * v[i + 1][1] - v[i + 1][0] * v[i][1]).sum();
        assert!(area2 < 0.0, "polyline must run clockwise");
    }

    #[test]
    fn thickness_matches_ratio() {
        let p = naca_profile(0.15, 200).unwrap();
        let ymax = p.points.iter().map(|q| q[1]).fold(f64::MIN, f64::max);
        let ymin = p.points.iter().map(|q| q[1]).fold(f64::MAX, f64::min);
        assert!(((ymax - ymin) - 0.15).abs() <= 0.01 * 0.15);
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(naca_profile(0.15, 6).is_err());
        assert!(naca_profile(0.15, 9).is_err());
        assert!(naca_profile(0.6, 10).is_err());
    }
}
