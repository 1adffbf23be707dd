use super::{AirfoilProfile, Mat2, Vec2};
use crate::quadrature::element_rule;
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Airfoil,
    Inflow,
    Outflow,
}

impl BoundaryTag {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, BoundaryTag::Airfoil | BoundaryTag::Inflow)
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Airfoil => "AIRFOIL",
            BoundaryTag::Inflow => "INFLOW",
            BoundaryTag::Outflow => "OUTFLOW",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub n_circ: usize,
    pub n_rad: usize,
    pub grading: f64,
    pub outer_radius: f64,
    pub thickness_ratio: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self { n_circ: 48, n_rad: 16, grading: 1.2, outer_radius: 10.0, thickness_ratio: 0.15 }
    }
}

/// Fraction of the way from the airfoil to the outer circle at radial layer
/// `k` (counted from the airfoil): `(αᵏ − 1)/(αⁿ − 1)`, or `k/n` for α = 1.
pub fn grading_weight(k: f64, n_rad: usize, alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-14 {
        k / n_rad as f64
    } else {
        (alpha.powf(k) - 1.0) / (alpha.powi(n_rad as i32) - 1.0)
    }
}

/// Map value, Jacobian (columns ∂F/∂ξ, ∂F/∂η) and Jacobian derivatives
/// (∂J/∂ξ, ∂J/∂η) at a parametric point.
#[derive(Debug, Clone, Copy)]
pub struct MapEval {
    pub x: Vec2,
    pub jac: Mat2,
    pub djac: [Mat2; 2],
}

/// Structured O-mesh around the airfoil with a smooth global parametrization
/// F(ξ, η), ξ ∈ [0, n_circ) periodic, η ∈ [0, n_rad], η = 0 on the airfoil.
///
/// F blends a periodic cubic spline through the airfoil nodes with the outer
/// circle: F = (1 − s(η)) A(ξ) + s(η) C(ξ). Nodes are F at integer (ξ, η).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OMesh {
    pub params: MeshParams,
    /// Node (i, j) at index `j * n_circ + i`.
    pub nodes: Vec<[f64; 2]>,
    /// Tag of the outer edge of element column i (ξ ∈ [i, i+1], η = n_rad).
    pub outer_tags: Vec<BoundaryTag>,
    spline: Vec<[f64; 2]>,
}

pub fn build_omesh(profile: &AirfoilProfile, outer_radius: f64, n_circ: usize, n_rad: usize, alpha: f64) -> Result<OMesh> {
    if n_circ < 4 || n_rad < 4 {
        return Err(Error::InvalidInput(format!("mesh needs n_circ, n_rad >= 4, got {n_circ}x{n_rad}")));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidInput(format!("grading factor must be >= 1, got {alpha}")));
    }
    let verts = profile.vertices();
    if verts.len() != n_circ {
        return Err(Error::InvalidInput(format!(
            "profile has {} vertices but the mesh needs n_circ = {n_circ}",
            verts.len()
        )));
    }
    if !(outer_radius > profile.max_radius()) {
        return Err(Error::InvalidInput("outer radius must enclose the airfoil".into()));
    }
    let spline = interpolating_spline(verts)?;
    let params = MeshParams { n_circ, n_rad, grading: alpha, outer_radius, thickness_ratio: profile.thickness_ratio };
    let mut mesh = OMesh { params, nodes: Vec::new(), outer_tags: Vec::new(), spline };
    for j in 0..=n_rad {
        for i in 0..n_circ {
            let x = mesh.point(i as f64, j as f64);
            mesh.nodes.push([x[0], x[1]]);
        }
    }
    mesh.outer_tags = (0..n_circ)
        .map(|i| if mesh.circle(i as f64 + 0.5).0[0] < 0.0 { BoundaryTag::Inflow } else { BoundaryTag::Outflow })
        .collect();
    mesh.check_untangled()?;
    Ok(mesh)
}

/// Control points c of the periodic uniform cubic B-spline with
/// (c_{i−1} + 4c_i + c_{i+1})/6 = p_i.
fn interpolating_spline(p: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = p.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, (i + n - 1) % n)] += 1.0 / 6.0;
        a[(i, i)] += 4.0 / 6.0;
        a[(i, (i + 1) % n)] += 1.0 / 6.0;
    }
    let rhs = DMatrix::from_fn(n, 2, |i, k| p[i][k]);
    let sol = a.lu().solve(&rhs).ok_or_else(|| Error::Singular("airfoil spline interpolation".into()))?;
    Ok((0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect())
}

fn cubic_basis(t: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let m = 1.0 - t;
    (
        [m * m * m / 6.0, (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0, (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0, t * t * t / 6.0],
        [-m * m / 2.0, (3.0 * t * t - 4.0 * t) / 2.0, (-3.0 * t * t + 2.0 * t + 1.0) / 2.0, t * t / 2.0],
        [m, 3.0 * t - 2.0, 1.0 - 3.0 * t, t],
    )
}

impl OMesh {
    pub fn n_circ(&self) -> usize {
        self.params.n_circ
    }

    pub fn n_rad(&self) -> usize {
        self.params.n_rad
    }

    pub fn n_elements(&self) -> usize {
        self.params.n_circ * self.params.n_rad
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        self.nodes[j * self.params.n_circ + i % self.params.n_circ]
    }

    /// Airfoil curve A and its first two ξ-derivatives; element index and
    /// local coordinate given explicitly.
    fn airfoil_local(&self, i: usize, t: f64) -> (Vec2, Vec2, Vec2) {
        let n = self.params.n_circ;
        let (b, db, ddb) = cubic_basis(t);
        let mut a = Vec2::zeros();
        let mut da = Vec2::zeros();
        let mut dda = Vec2::zeros();
        for k in 0..4 {
            let c = self.spline[(i + n + k - 1) % n];
            let c = Vec2::new(c[0], c[1]);
            a += c * b[k];
            da += c * db[k];
            dda += c * ddb[k];
        }
        (a, da, dda)
    }

    fn circle(&self, xi: f64) -> (Vec2, Vec2, Vec2) {
        let w = -2.0 * PI / self.params.n_circ as f64;
        let psi = w * xi;
        let (s, c) = psi.sin_cos();
        let r = self.params.outer_radius;
        (Vec2::new(r * c, r * s), Vec2::new(-r * w * s, r * w * c), Vec2::new(-r * w * w * c, -r * w * w * s))
    }

    fn radial(&self, eta: f64) -> (f64, f64, f64) {
        let n = self.params.n_rad;
        let a = self.params.grading;
        if (a - 1.0).abs() < 1e-14 {
            (eta / n as f64, 1.0 / n as f64, 0.0)
        } else {
            let den = a.powi(n as i32) - 1.0;
            let la = a.ln();
            let p = a.powf(eta);
            ((p - 1.0) / den, la * p / den, la * la * p / den)
        }
    }

    /// F and its derivatives at local coordinates (t1, t2) of element (i, j).
    pub fn eval_local(&self, i: usize, j: usize, t1: f64, t2: f64) -> MapEval {
        let xi = i as f64 + t1;
        let eta = j as f64 + t2;
        let (a, da, dda) = self.airfoil_local(i, t1);
        let (c, dc, ddc) = self.circle(xi);
        let (s, ds, dds) = self.radial(eta);
        let x = a * (1.0 - s) + c * s;
        let fx = da * (1.0 - s) + dc * s;
        let fe = (c - a) * ds;
        let fxx = dda * (1.0 - s) + ddc * s;
        let fxe = (dc - da) * ds;
        let fee = (c - a) * dds;
        MapEval {
            x,
            jac: Mat2::from_columns(&[fx, fe]),
            djac: [Mat2::from_columns(&[fxx, fxe]), Mat2::from_columns(&[fxe, fee])],
        }
    }

    /// F at a parametric point, ξ taken modulo n_circ.
    pub fn point(&self, xi: f64, eta: f64) -> Vec2 {
        self.eval_param(xi, eta).x
    }

    pub fn eval_param(&self, xi: f64, eta: f64) -> MapEval {
        let n = self.params.n_circ as f64;
        let xi = xi.rem_euclid(n);
        let i = (xi.floor() as usize).min(self.params.n_circ - 1);
        let j = (eta.floor().max(0.0) as usize).min(self.params.n_rad - 1);
        self.eval_local(i, j, xi - i as f64, eta - j as f64)
    }

    /// Elements are numbered `j * n_circ + i`.
    pub fn element_index(&self, i: usize, j: usize) -> usize {
        j * self.params.n_circ + i
    }

    fn check_untangled(&self) -> Result<()> {
        let (g, _) = element_rule();
        let pts = [0.0, g[0], g[1], g[2], 1.0];
        for j in 0..self.params.n_rad {
            for i in 0..self.params.n_circ {
                for &t1 in &pts {
                    for &t2 in &pts {
                        let det = self.eval_local(i, j, t1, t2).jac.determinant();
                        if !(det > 0.0) {
                            return Err(Error::TangledElement { element: self.element_index(i, j), det });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Tag of each boundary segment: airfoil edges first, then outer edges.
    pub fn boundary_segments(&self) -> Vec<(BoundaryTag, usize, usize)> {
        let n = self.params.n_circ;
        let top = self.params.n_rad * n;
        let mut segs: Vec<_> = (0..n).map(|i| (BoundaryTag::Airfoil, i, (i + 1) % n)).collect();
        segs.extend((0..n).map(|i| (self.outer_tags[i], top + i, top + (i + 1) % n)));
        segs
    }

    pub fn dirichlet_length(&self) -> f64 {
        self.boundary_segments()
            .iter()
            .filter(|s| s.0.is_dirichlet())
            .map(|&(_, a, b)| {
                let (p, q) = (self.nodes[a], self.nodes[b]);
                (p[0] - q[0]).hypot(p[1] - q[1])
            })
            .sum()
    }

    /// Line-oriented text export: header, `node`, `element`, `boundary` records.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let n = p.n_circ;
        let mut s = String::new();
        let _ = writeln!(s, "# rbflow omesh v1");
        let _ = writeln!(s, "n_circ {}", p.n_circ);
        let _ = writeln!(s, "n_rad {}", p.n_rad);
        let _ = writeln!(s, "grading {:?}", p.grading);
        let _ = writeln!(s, "outer_radius {:?}", p.outer_radius);
        for (k, x) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node {k} {:.17e} {:.17e}", x[0], x[1]);
        }
        for j in 0..p.n_rad {
            for i in 0..n {
                let a = j * n + i;
                let b = j * n + (i + 1) % n;
                let _ = writeln!(s, "element {} {} {} {} {}", self.element_index(i, j), a, b, b + n, a + n);
            }
        }
        for (k, (tag, a, b)) in self.boundary_segments().into_iter().enumerate() {
            let _ = writeln!(s, "boundary {k} {} {a} {b}", tag.name());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::naca_profile;

    fn desk() -> OMesh {
        build_omesh(&naca_profile(0.15, 48).unwrap(), 10.0, 48, 16, 1.2).unwrap()
    }

    #[test]
    fn blend_examples() {
        assert_eq!(grading_weight(40.0, 40, 1.2), 1.0);
        assert_eq!(grading_weight(0.0, 40, 1.2), 0.0);
        assert!((grading_weight(2.0, 4, 1.2) - 0.44 / 1.0736).abs() < 1e-12);
        assert!((grading_weight(2.0, 4, 1.2) - 0.4098).abs() < 1e-4);
    }

    #[test]
    fn nodes_interpolate_profile_and_circle() {
        let prof = naca_profile(0.15, 48).unwrap();
        let m = desk();
        for (i, v) in prof.vertices().iter().enumerate() {
            let x = m.node(i, 0);
            assert!((x[0] - v[0]).abs() < 1e-12 && (x[1] - v[1]).abs() < 1e-12);
            let y = m.node(i, 16);
            assert!((y[0].hypot(y[1]) - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_growth_along_rays() {
        let m = desk();
        for i in 0..48 {
            for j in 0..15 {
                let (a, b, c) = (m.node(i, j), m.node(i, j + 1), m.node(i, j + 2));
                let h0 = (b[0] - a[0]).hypot(b[1] - a[1]);
                let h1 = (c[0] - b[0]).hypot(c[1] - b[1]);
                let ratio = h1 / h0;
                assert!((1.2 * 0.95..=1.2 * 1.05).contains(&ratio), "ray {i} layer {j}: {ratio}");
            }
        }
    }

    #[test]
    fn jacobian_derivatives_match_finite_differences() {
        let m = desk();
        let h = 1e-6;
        for &(i, j, t1, t2) in &[(0usize, 0usize, 0.3, 0.4), (11, 3, 0.7, 0.2), (47, 15, 0.5, 0.9), (24, 0, 0.1, 0.1)] {
            let e = m.eval_local(i, j, t1, t2);
            let fx = (m.eval_local(i, j, t1 + h, t2).x - m.eval_local(i, j, t1 - h, t2).x) / (2.0 * h);
            let fe = (m.eval_local(i, j, t1, t2 + h).x - m.eval_local(i, j, t1, t2 - h).x) / (2.0 * h);
            assert!((e.jac.column(0) - fx).norm() < 1e-6);
            assert!((e.jac.column(1) - fe).norm() < 1e-6);
            let dx = (m.eval_local(i, j, t1 + h, t2).jac - m.eval_local(i, j, t1 - h, t2).jac) / (2.0 * h);
            let de = (m.eval_local(i, j, t1, t2 + h).jac - m.eval_local(i, j, t1, t2 - h).jac) / (2.0 * h);
            assert!((dx - e.djac[0]).norm() < 1e-5 * (1.0 + dx.norm()));
            assert!((de - e.djac[1]).norm() < 1e-5 * (1.0 + de.norm()));
        }
    }

    #[test]
    fn map_is_c1_across_element_edges() {
        let m = desk();
        for i in 0..48 {
            let a = m.eval_local(i, 2, 1.0, 0.5);
            let b = m.eval_local((i + 1) % 48, 2, 0.0, 0.5);
            assert!((a.jac - b.jac).norm() < 1e-11 * (1.0 + a.jac.norm()));
        }
    }

    #[test]
    fn boundary_tags_split_at_vertical_axis() {
        let m = desk();
        let inflow = m.outer_tags.iter().filter(|t| **t == BoundaryTag::Inflow).count();
        assert_eq!(inflow, 24);
        assert_eq!(m.outer_tags[0], BoundaryTag::Outflow);
        assert_eq!(m.outer_tags[24], BoundaryTag::Inflow);
        assert!(m.dirichlet_length() > 0.0);
    }

    #[test]
    fn mirror_symmetry() {
        let m = desk();
        for j in 0..=16 {
            for i in 0..48 {
                let a = m.node(i, j);
                let b = m.node((48 - i) % 48, j);
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let prof = naca_profile(0.15, 48).unwrap();
        assert!(build_omesh(&prof, 10.0, 40, 16, 1.2).is_err());
        assert!(build_omesh(&prof, 10.0, 48, 3, 1.2).is_err());
        assert!(build_omesh(&prof, 10.0, 48, 16, 0.9).is_err());
    }

    #[test]
    fn tangled_mesh_reports_element() {
        // Outer radius barely enclosing the profile folds the trailing-edge layers.
        let prof = naca_profile(0.15, 48).unwrap();
        match build_omesh(&prof, 0.55, 48, 8, 1.0) {
            Err(Error::TangledElement { element, .. }) => assert!(element < 48 * 8),
            Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn text_export_has_all_records() {
        let m = desk();
        let t = m.to_text();
        assert_eq!(t.lines().filter(|l| l.starts_with("node ")).count(), 48 * 17);
        assert_eq!(t.lines().filter(|l| l.starts_with("element ")).count(), 48 * 16);
        assert_eq!(t.lines().filter(|l| l.starts_with("boundary ")).count(), 96);
    }
}
