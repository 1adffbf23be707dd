//! Velocity/pressure space pairs on the parametric O-grid.
//!
//! Taylor-Hood uses biquadratic Lagrange velocity composed with the mesh map.
//! The divergence-conforming pair uses spline velocity components of degree
//! (2,1) and (1,2), C¹ where quadratic, mapped by the Piola transform of the
//! mesh parametrization, so its parametric divergence is a bilinear function.
//! Both use bilinear pressure. All tables live on the reference domain.

mod bspline;
mod push;

pub use bspline::{basis_with_derivs, hat, lagrange_quadratic, open_quadratic_knots, periodic_quadratic};
pub use push::{
    apply, grad_slot, jet_transform, physical_divergence, physical_value_grad, push_matrices, Jet, JetMatrix,
    PushMode,
};

use crate::geometry::{BoundaryTag, DeformedGeometry, MapEval, Mat2, OMesh, Vec2};
use crate::quadrature::{element_rule, gauss_legendre};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    TaylorHood,
    DivConforming,
}

impl SpaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::TaylorHood => "taylor-hood",
            SpaceKind::DivConforming => "div-conforming",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            SpaceKind::TaylorHood => "th",
            SpaceKind::DivConforming => "dc",
        }
    }

    /// Push-forward matching the space when used with the domain map.
    pub fn default_push(self) -> PushMode {
        match self {
            SpaceKind::TaylorHood => PushMode::Canonical,
            SpaceKind::DivConforming => PushMode::Piola,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofClass {
    Free,
    Dirichlet,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub elem: usize,
    /// Reference-domain coordinates F(ξ, η).
    pub xh: Vec2,
    /// Gauss weight times det ∂F/∂(ξ,η).
    pub weight: f64,
}

/// Element basis evaluated at one point.
#[derive(Debug, Clone)]
pub struct PointBasis {
    pub map: MapEval,
    pub vel_jets: Vec<Jet>,
    pub pres_vals: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct FunctionSpacePair {
    pub kind: SpaceKind,
    pub mesh: OMesh,
    n_vel: usize,
    n_pres: usize,
    nloc_v: usize,
    elem_vel: Vec<usize>,
    elem_pres: Vec<usize>,
    quad: Vec<QuadPoint>,
    vel_jets: Vec<Jet>,
    pres_vals: Vec<f64>,
    dof_class: Vec<DofClass>,
    free_map: Vec<Option<usize>>,
    free_dofs: Vec<usize>,
    dirichlet_unit: Vec<f64>,
}

pub const QUAD_PER_ELEMENT: usize = 9;

pub fn build_space_pair(mesh: &OMesh, kind: SpaceKind) -> Result<FunctionSpacePair> {
    let nc = mesh.n_circ();
    let nr = mesh.n_rad();
    if mesh.outer_tags.len() != nc {
        return Err(Error::InvalidInput("boundary tags do not match the circumferential element count".into()));
    }
    if mesh.nodes.len() != nc * (nr + 1) {
        return Err(Error::InvalidInput("node array is inconsistent with periodic O-grid connectivity".into()));
    }
    if !mesh.outer_tags.iter().any(|t| *t == BoundaryTag::Inflow) && nc > 0 {
        log::warn!("mesh has no inflow edges; Dirichlet data only on the airfoil");
    }
    let (n_vel, nloc_v) = match kind {
        SpaceKind::TaylorHood => (2 * (2 * nc) * (2 * nr + 1), 18),
        SpaceKind::DivConforming => (nc * (nr + 1) + nc * (nr + 2), 12),
    };
    let n_pres = nc * (nr + 1);
    let mut sp = FunctionSpacePair {
        kind,
        mesh: mesh.clone(),
        n_vel,
        n_pres,
        nloc_v,
        elem_vel: Vec::with_capacity(mesh.n_elements() * nloc_v),
        elem_pres: Vec::with_capacity(mesh.n_elements() * 4),
        quad: Vec::with_capacity(mesh.n_elements() * QUAD_PER_ELEMENT),
        vel_jets: Vec::new(),
        pres_vals: Vec::new(),
        dof_class: vec![DofClass::Free; n_vel],
        free_map: Vec::new(),
        free_dofs: Vec::new(),
        dirichlet_unit: vec![0.0; n_vel],
    };
    for j in 0..nr {
        for i in 0..nc {
            sp.elem_vel.extend(sp.local_vel_dofs(i, j));
            sp.elem_pres.extend(sp.local_pres_dofs(i, j));
        }
    }
    let (g, w) = element_rule();
    sp.vel_jets.reserve(mesh.n_elements() * QUAD_PER_ELEMENT * nloc_v);
    sp.pres_vals.reserve(mesh.n_elements() * QUAD_PER_ELEMENT * 4);
    for j in 0..nr {
        for i in 0..nc {
            let e = mesh.element_index(i, j);
            for b in 0..3 {
                for a in 0..3 {
                    let pb = sp.eval_basis(i, j, g[a], g[b]);
                    sp.quad.push(QuadPoint { elem: e, xh: pb.map.x, weight: w[a] * w[b] * pb.map.jac.determinant() });
                    sp.vel_jets.extend_from_slice(&pb.vel_jets);
                    sp.pres_vals.extend_from_slice(&pb.pres_vals);
                }
            }
        }
    }
    sp.classify_dofs()?;
    Ok(sp)
}

impl FunctionSpacePair {
    pub fn n_vel(&self) -> usize {
        self.n_vel
    }

    pub fn n_pres(&self) -> usize {
        self.n_pres
    }

    pub fn n_quad(&self) -> usize {
        self.quad.len()
    }

    pub fn nloc_vel(&self) -> usize {
        self.nloc_v
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn quad_points(&self) -> &[QuadPoint] {
        &self.quad
    }

    pub fn elem_vel_dofs(&self, e: usize) -> &[usize] {
        &self.elem_vel[e * self.nloc_v..(e + 1) * self.nloc_v]
    }

    pub fn elem_pres_dofs(&self, e: usize) -> &[usize] {
        &self.elem_pres[e * 4..(e + 1) * 4]
    }

    /// Reference jets of the element's velocity basis at quadrature point q.
    pub fn vel_jets_at(&self, q: usize) -> &[Jet] {
        &self.vel_jets[q * self.nloc_v..(q + 1) * self.nloc_v]
    }

    pub fn pres_vals_at(&self, q: usize) -> &[f64] {
        &self.pres_vals[q * 4..(q + 1) * 4]
    }

    pub fn dof_class(&self) -> &[DofClass] {
        &self.dof_class
    }

    pub fn free_map(&self) -> &[Option<usize>] {
        &self.free_map
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Dirichlet values for unit inflow speed (zero on free dofs).
    pub fn dirichlet_unit(&self) -> &[f64] {
        &self.dirichlet_unit
    }

    pub fn push_mode(&self) -> PushMode {
        self.kind.default_push()
    }

    /// Field jets at all quadrature points for a velocity coefficient vector.
    pub fn field_jets(&self, coeffs: &[f64]) -> Vec<Jet> {
        assert_eq!(coeffs.len(), self.n_vel, "velocity coefficient length mismatch");
        (0..self.quad.len())
            .map(|q| {
                let dofs = self.elem_vel_dofs(self.quad[q].elem);
                let mut out = [0.0; 6];
                for (jet, &d) in self.vel_jets_at(q).iter().zip(dofs) {
                    let c = coeffs[d];
                    if c != 0.0 {
                        for s in 0..6 {
                            out[s] += c * jet[s];
                        }
                    }
                }
                out
            })
            .collect()
    }

    pub fn pressure_values(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_pres, "pressure coefficient length mismatch");
        (0..self.quad.len())
            .map(|q| {
                let dofs = self.elem_pres_dofs(self.quad[q].elem);
                self.pres_vals_at(q).iter().zip(dofs).map(|(v, &d)| v * coeffs[d]).sum()
            })
            .collect()
    }

    /// Fingerprint of the discrete spaces (kind, mesh, dof classification).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.name().as_bytes());
        h.update(serde_json::to_vec(&self.mesh.params).unwrap_or_default());
        for x in &self.mesh.nodes {
            h.update(x[0].to_le_bytes());
            h.update(x[1].to_le_bytes());
        }
        h.update((self.n_vel as u64).to_le_bytes());
        h.update((self.n_pres as u64).to_le_bytes());
        for c in &self.dof_class {
            h.update([matches!(c, DofClass::Dirichlet) as u8]);
        }
        for v in &self.dirichlet_unit {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }

    fn local_vel_dofs(&self, i: usize, j: usize) -> Vec<usize> {
        let nc = self.mesh.n_circ();
        match self.kind {
            SpaceKind::TaylorHood => {
                let w = 2 * nc;
                let mut d = Vec::with_capacity(18);
                for b in 0..3 {
                    for a in 0..3 {
                        let s = (2 * j + b) * w + (2 * i + a) % w;
                        d.push(2 * s);
                        d.push(2 * s + 1);
                    }
                }
                d
            }
            SpaceKind::DivConforming => {
                let n1 = nc * (self.mesh.n_rad() + 1);
                let mut d = Vec::with_capacity(12);
                for b in 0..2 {
                    for a in 0..3 {
                        d.push((j + b) * nc + (i + nc + a - 1) % nc);
                    }
                }
                for m in 0..3 {
                    for a in 0..2 {
                        d.push(n1 + (j + m) * nc + (i + a) % nc);
                    }
                }
                d
            }
        }
    }

    fn local_pres_dofs(&self, i: usize, j: usize) -> [usize; 4] {
        let nc = self.mesh.n_circ();
        let i1 = (i + 1) % nc;
        [j * nc + i, j * nc + i1, (j + 1) * nc + i, (j + 1) * nc + i1]
    }

    /// Velocity jets (reference coordinates) and pressure values of element
    /// (i, j) at local coordinates (t1, t2), in local dof order.
    pub fn eval_basis(&self, i: usize, j: usize, t1: f64, t2: f64) -> PointBasis {
        let map = self.mesh.eval_local(i, j, t1, t2);
        let jinv = map.jac.try_inverse().unwrap_or_else(Mat2::zeros);
        let (h1, _) = hat(t1);
        let (h2, _) = hat(t2);
        let pres_vals = [h1[0] * h2[0], h1[1] * h2[0], h1[0] * h2[1], h1[1] * h2[1]];
        let vel_jets = match self.kind {
            SpaceKind::TaylorHood => {
                let (l1, d1) = lagrange_quadratic(t1);
                let (l2, d2) = lagrange_quadratic(t2);
                let mut jets = Vec::with_capacity(18);
                for b in 0..3 {
                    for a in 0..3 {
                        let n = l1[a] * l2[b];
                        let gp = Vec2::new(d1[a] * l2[b], l1[a] * d2[b]);
                        let gr = jinv.transpose() * gp;
                        for c in 0..2 {
                            let mut jet = [0.0; 6];
                            jet[c] = n;
                            jet[grad_slot(c, 0)] = gr[0];
                            jet[grad_slot(c, 1)] = gr[1];
                            jets.push(jet);
                        }
                    }
                }
                jets
            }
            SpaceKind::DivConforming => {
                let nr = self.mesh.n_rad();
                let (q1, dq1) = periodic_quadratic(t1);
                let (h1, dh1) = hat(t1);
                let (h2, dh2) = hat(t2);
                let knots = open_quadratic_knots(nr);
                let (o2, do2) = basis_with_derivs(&knots, 2, j + 2, j as f64 + t2);
                let det = map.jac.determinant();
                let ddet = [
                    det * (jinv * map.djac[0]).trace(),
                    det * (jinv * map.djac[1]).trace(),
                ];
                let piola = |v: Vec2, dv: [Vec2; 2]| -> Jet {
                    let val = map.jac * v / det;
                    let mut dpar = [Vec2::zeros(); 2];
                    for k in 0..2 {
                        dpar[k] = (map.djac[k] * v + map.jac * dv[k]) / det - map.jac * v * (ddet[k] / (det * det));
                    }
                    let mut jet = [val[0], val[1], 0.0, 0.0, 0.0, 0.0];
                    for m in 0..2 {
                        for n in 0..2 {
                            jet[grad_slot(m, n)] = dpar[0][m] * jinv[(0, n)] + dpar[1][m] * jinv[(1, n)];
                        }
                    }
                    jet
                };
                let mut jets = Vec::with_capacity(12);
                for b in 0..2 {
                    for a in 0..3 {
                        let v = Vec2::new(q1[a] * h2[b], 0.0);
                        let dv = [Vec2::new(dq1[a] * h2[b], 0.0), Vec2::new(q1[a] * dh2[b], 0.0)];
                        jets.push(piola(v, dv));
                    }
                }
                for m in 0..3 {
                    for a in 0..2 {
                        let v = Vec2::new(0.0, h1[a] * o2[m]);
                        let dv = [Vec2::new(0.0, dh1[a] * o2[m]), Vec2::new(0.0, h1[a] * do2[m])];
                        jets.push(piola(v, dv));
                    }
                }
                jets
            }
        };
        PointBasis { map, vel_jets, pres_vals }
    }

    fn classify_dofs(&mut self) -> Result<()> {
        let nc = self.mesh.n_circ();
        let nr = self.mesh.n_rad();
        let tags = self.mesh.outer_tags.clone();
        let inflow = |e: usize| tags[e % nc] == BoundaryTag::Inflow;
        match self.kind {
            SpaceKind::TaylorHood => {
                let w = 2 * nc;
                for a in 0..w {
                    for c in 0..2 {
                        self.dof_class[2 * a + c] = DofClass::Dirichlet;
                    }
                    let touches = if a % 2 == 0 { inflow((a / 2 + nc - 1) % nc) || inflow(a / 2) } else { inflow(a / 2) };
                    if touches {
                        let s = 2 * nr * w + a;
                        self.dof_class[2 * s] = DofClass::Dirichlet;
                        self.dof_class[2 * s + 1] = DofClass::Dirichlet;
                        self.dirichlet_unit[2 * s] = 1.0;
                    }
                }
            }
            SpaceKind::DivConforming => {
                let n1 = nc * (nr + 1);
                for k in 0..nc {
                    self.dof_class[k] = DofClass::Dirichlet;
                    self.dof_class[n1 + k] = DofClass::Dirichlet;
                }
                let mut c1 = Vec::new();
                let mut c2 = Vec::new();
                for k in 0..nc {
                    if inflow((k + nc - 1) % nc) || inflow(k) || inflow(k + 1) {
                        c1.push(k);
                        self.dof_class[nr * nc + k] = DofClass::Dirichlet;
                    }
                    if inflow((k + nc - 1) % nc) || inflow(k) {
                        c2.push(k);
                        self.dof_class[n1 + (nr + 1) * nc + k] = DofClass::Dirichlet;
                    }
                }
                self.fit_outer_trace(&c1, &c2)?;
            }
        }
        self.free_map = vec![None; self.n_vel];
        self.free_dofs.clear();
        for d in 0..self.n_vel {
            if self.dof_class[d] == DofClass::Free {
                self.free_map[d] = Some(self.free_dofs.len());
                self.free_dofs.push(d);
            }
        }
        Ok(())
    }

    /// Least-squares fit on the inflow edges of the parametric trace whose
    /// Piola image is the unit inflow (1, 0): (∂_η y, −∂_ξ y) in (ξ, η).
    fn fit_outer_trace(&mut self, c1: &[usize], c2: &[usize]) -> Result<()> {
        let nc = self.mesh.n_circ();
        let nr = self.mesh.n_rad();
        let n1 = nc * (nr + 1);
        let (gx, gw) = gauss_legendre(5, 0.0, 1.0);
        let idx1 = |k: usize| c1.iter().position(|&c| c == k);
        let idx2 = |k: usize| c2.iter().position(|&c| c == k);
        let mut m1 = DMatrix::zeros(c1.len(), c1.len());
        let mut r1 = DVector::zeros(c1.len());
        let mut m2 = DMatrix::zeros(c2.len(), c2.len());
        let mut r2 = DVector::zeros(c2.len());
        for i in 0..nc {
            if self.mesh.outer_tags[i] != BoundaryTag::Inflow {
                continue;
            }
            for (t, w) in gx.iter().zip(&gw) {
                let map = self.mesh.eval_local(i, nr - 1, *t, 1.0);
                let target = [map.jac[(1, 1)], -map.jac[(1, 0)]];
                let (q, _) = periodic_quadratic(*t);
                let (h, _) = hat(*t);
                let f1: Vec<(usize, f64)> = (0..3).map(|a| ((i + nc + a - 1) % nc, q[a])).collect();
                let f2: Vec<(usize, f64)> = (0..2).map(|a| ((i + a) % nc, h[a])).collect();
                for &(ka, va) in &f1 {
                    let ia = idx1(ka).ok_or_else(|| Error::InvalidInput("inconsistent inflow classification".into()))?;
                    r1[ia] += w * va * target[0];
                    for &(kb, vb) in &f1 {
                        m1[(ia, idx1(kb).unwrap())] += w * va * vb;
                    }
                }
                for &(ka, va) in &f2 {
                    let ia = idx2(ka).ok_or_else(|| Error::InvalidInput("inconsistent inflow classification".into()))?;
                    r2[ia] += w * va * target[1];
                    for &(kb, vb) in &f2 {
                        m2[(ia, idx2(kb).unwrap())] += w * va * vb;
                    }
                }
            }
        }
        let s1 = m1.lu().solve(&r1).ok_or_else(|| Error::Singular("inflow trace fit".into()))?;
        let s2 = m2.lu().solve(&r2).ok_or_else(|| Error::Singular("inflow trace fit".into()))?;
        for (a, &k) in c1.iter().enumerate() {
            self.dirichlet_unit[nr * nc + k] = s1[a];
        }
        for (a, &k) in c2.iter().enumerate() {
            self.dirichlet_unit[n1 + (nr + 1) * nc + k] = s2[a];
        }
        Ok(())
    }

    /// Number of stream-function coefficients (divergence-conforming only).
    pub fn n_stream(&self) -> usize {
        self.mesh.n_circ() * (self.mesh.n_rad() + 2)
    }

    /// Velocity coefficients of the parametric curl (∂_η ψ, −∂_ξ ψ) of a
    /// periodic-quadratic × open-quadratic stream function. The result is
    /// reference-solenoidal by construction.
    pub fn stream_curl(&self, psi: &[f64]) -> Result<Vec<f64>> {
        if self.kind != SpaceKind::DivConforming {
            return Err(Error::InvalidInput("stream functions exist only for the divergence-conforming space".into()));
        }
        let nc = self.mesh.n_circ();
        let nr = self.mesh.n_rad();
        if psi.len() != self.n_stream() {
            return Err(Error::InvalidInput("stream function length mismatch".into()));
        }
        let n1 = nc * (nr + 1);
        let at = |k: usize, m: usize| psi[m * nc + k];
        let mut v = vec![0.0; self.n_vel];
        for k in 0..nc {
            for j in 0..=nr {
                let m = j + 1;
                let scale = if m == 1 || m == nr + 1 { 2.0 } else { 1.0 };
                v[j * nc + k] = scale * (at(k, m) - at(k, m - 1));
            }
        }
        for m in 0..(nr + 2) {
            for i in 0..nc {
                v[n1 + m * nc + i] = -(at(i, m) - at((i + nc - 1) % nc, m));
            }
        }
        Ok(v)
    }

    /// Locates the element and local coordinates of a reference point.
    pub fn locate(&self, xh: Vec2) -> Option<(usize, usize, f64, f64)> {
        let nc = self.mesh.n_circ();
        let nr = self.mesh.n_rad();
        let r = xh.norm();
        if r > self.mesh.params.outer_radius * (1.0 + 1e-12) {
            return None;
        }
        let mut best: Vec<(f64, usize)> = self
            .mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(k, p)| ((p[0] - xh[0]).hypot(p[1] - xh[1]), k))
            .collect();
        best.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let tol = 1e-10;
        for &(_, k) in best.iter().take(6) {
            let (i0, j0) = (k % nc, k / nc);
            for di in [0usize, nc - 1] {
                for dj in [0isize, -1] {
                    let i = (i0 + di) % nc;
                    let j = j0 as isize + dj;
                    if j < 0 || j as usize >= nr {
                        continue;
                    }
                    let j = j as usize;
                    let (mut t1, mut t2) = (0.5, 0.5);
                    let mut ok = false;
                    for _ in 0..40 {
                        let m = self.mesh.eval_local(i, j, t1, t2);
                        let res = m.x - xh;
                        let Some(inv) = m.jac.try_inverse() else { break };
                        let d = inv * res;
                        t1 -= d[0];
                        t2 -= d[1];
                        if !(t1.is_finite() && t2.is_finite()) || t1.abs() > 3.0 || t2.abs() > 3.0 {
                            break;
                        }
                        if d.norm() < 1e-14 {
                            ok = true;
                            break;
                        }
                    }
                    if ok && (-tol..=1.0 + tol).contains(&t1) && (-tol..=1.0 + tol).contains(&t2) {
                        return Some((i, j, t1.clamp(0.0, 1.0), t2.clamp(0.0, 1.0)));
                    }
                }
            }
        }
        None
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A field sample in physical space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub x: [f64; 2],
    pub value: [f64; 2],
    pub grad: [[f64; 2]; 2],
}

impl FieldSample {
    pub fn divergence(&self) -> f64 {
        self.grad[0][0] + self.grad[1][1]
    }
}

/// Evaluates a velocity field at physical points through the domain map at
/// angle φ, pushed with `mode`.
pub fn push_forward(
    space: &FunctionSpacePair,
    geom: &DeformedGeometry,
    mode: PushMode,
    phi: f64,
    coeffs: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<FieldSample>> {
    if coeffs.len() != space.n_vel() {
        return Err(Error::InvalidInput(format!(
            "coefficient vector has length {} but the velocity space has {}",
            coeffs.len(),
            space.n_vel()
        )));
    }
    geom.check_phi(phi)?;
    points
        .iter()
        .map(|p| {
            let x = Vec2::new(p[0], p[1]);
            let xh = geom.inverse_map(phi, x);
            let (i, j, t1, t2) = space
                .locate(xh)
                .ok_or_else(|| Error::Domain(format!("point ({:.4}, {:.4}) lies outside the mesh", p[0], p[1])))?;
            let pb = space.eval_basis(i, j, t1, t2);
            let e = space.mesh.element_index(i, j);
            let mut jet = [0.0; 6];
            for (bj, &d) in pb.vel_jets.iter().zip(space.elem_vel_dofs(e)) {
                for s in 0..6 {
                    jet[s] += coeffs[d] * bj[s];
                }
            }
            let ex = geom.exact(phi, pb.map.x);
            let (value, grad) = physical_value_grad(mode, &ex, &jet);
            Ok(FieldSample { x: *p, value, grad })
        })
        .collect()
}
