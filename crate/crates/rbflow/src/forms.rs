//! Weak forms pulled back to the reference domain.
//!
//! Every form is written as a pointwise kernel acting on reference jets
//! (value and reference gradient) of the discrete fields:
//!
//! * a(u, w) = Σ jw[s] A[s][t] ju[t]
//! * b(q, w) = q Σ jw[s] B[s]
//! * c(u, v, w) = Σ C[α][β][γ] û_α jv[β] ŵ_γ
//!
//! The kernels are built either from the exact Jacobian at one angle or, in
//! the affine module, as polynomial coefficients in φ. Both feed the same
//! assembly routines below.

use crate::geometry::{DeformedGeometry, Mat2};
use crate::linalg::{SparseMatrix, TripletBuilder};
use crate::spaces::{grad_slot, jet_transform, push_matrices, FunctionSpacePair, Jet, JetMatrix, PushMode};
use crate::Result;
use rayon::prelude::*;
use std::cell::Cell;

pub type AKernel = [[f64; 6]; 6];
pub type BKernel = [f64; 6];
pub type CKernel = [f64; 24];

#[inline]
pub const fn c_index(alpha: usize, beta: usize, gamma: usize) -> usize {
    (alpha * 6 + beta) * 2 + gamma
}

thread_local! {
    static QUAD_COUNTER: Cell<u64> = const { Cell::new(0) };
}

/// Number of quadrature-loop entries made on the current thread.
pub fn quadrature_count() -> u64 {
    QUAD_COUNTER.with(|c| c.get())
}

fn tick() {
    QUAD_COUNTER.with(|c| c.set(c.get() + 1));
}

/// Kernels of all three forms at every quadrature point.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub a: Vec<AKernel>,
    pub b: Vec<BKernel>,
    pub c: Vec<CKernel>,
}

/// Ka with Ka[(m,n)][(m,p)] = K[p][n], so ∇U J⁻¹ : ∇W J⁻¹ = jwᵀ Ka ju for K = J⁻¹J⁻ᵀ.
pub fn viscous_metric(k: &Mat2) -> AKernel {
    let mut ka = [[0.0; 6]; 6];
    for m in 0..2 {
        for n in 0..2 {
            for p in 0..2 {
                ka[grad_slot(m, n)][grad_slot(m, p)] = k[(p, n)];
            }
        }
    }
    ka
}

/// Lₜᵀ Ka Lᵤ.
pub fn sandwich(lt: &JetMatrix, ka: &AKernel, lu: &JetMatrix) -> AKernel {
    let mut tmp = [[0.0; 6]; 6];
    for u in 0..6 {
        for t in 0..6 {
            let mut s = 0.0;
            for v in 0..6 {
                s += ka[u][v] * lu[v][t];
            }
            tmp[u][t] = s;
        }
    }
    let mut out = [[0.0; 6]; 6];
    for s in 0..6 {
        for t in 0..6 {
            let mut acc = 0.0;
            for u in 0..6 {
                acc += lt[u][s] * tmp[u][t];
            }
            out[s][t] = acc;
        }
    }
    out
}

/// Lᵀ kb with kb[(m,n)] = −(J⁻ᵀ)_{mn}, given `jinvt` standing in for J⁻ᵀ.
pub fn divergence_kernel(l: &JetMatrix, jinvt: &Mat2) -> BKernel {
    let mut kb = [0.0; 6];
    for m in 0..2 {
        for n in 0..2 {
            kb[grad_slot(m, n)] = -jinvt[(m, n)];
        }
    }
    let mut out = [0.0; 6];
    for s in 0..6 {
        out[s] = (0..6).map(|u| l[u][s] * kb[u]).sum();
    }
    out
}

/// C[α][β][γ] = Σ_{m,n} M_{mγ} L[(m,n)][β] T_{nα}.
pub fn convection_kernel(m: &Mat2, l: &JetMatrix, t: &Mat2) -> CKernel {
    let mut c = [0.0; 24];
    for alpha in 0..2 {
        for beta in 0..6 {
            for gamma in 0..2 {
                let mut s = 0.0;
                for mm in 0..2 {
                    for n in 0..2 {
                        s += m[(mm, gamma)] * l[grad_slot(mm, n)][beta] * t[(n, alpha)];
                    }
                }
                c[c_index(alpha, beta, gamma)] = s;
            }
        }
    }
    c
}

pub fn identity_jet_matrix() -> JetMatrix {
    let mut l = [[0.0; 6]; 6];
    for (s, row) in l.iter_mut().enumerate() {
        row[s] = 1.0;
    }
    l
}

/// Kernels from the exact map at angle φ (the direct path). The viscous
/// kernel includes ν.
pub fn exact_kernels(space: &FunctionSpacePair, geom: &DeformedGeometry, mode: PushMode, phi: f64, nu: f64) -> Result<KernelField> {
    geom.check_phi(phi)?;
    tick();
    let per_q: Vec<(AKernel, BKernel, CKernel)> = space
        .quad_points()
        .par_iter()
        .map(|qp| {
            let ex = geom.exact(phi, qp.xh);
            let (m, dm) = push_matrices(mode, &ex);
            let l = jet_transform(&m, &dm);
            let k = ex.jinv * ex.jinv.transpose();
            let mut a = sandwich(&l, &viscous_metric(&k), &l);
            a.iter_mut().flatten().for_each(|v| *v *= nu);
            let b = divergence_kernel(&l, &ex.jinv.transpose());
            let c = convection_kernel(&m, &l, &(ex.jinv * m));
            (a, b, c)
        })
        .collect();
    let mut kf = KernelField { a: Vec::with_capacity(per_q.len()), b: Vec::with_capacity(per_q.len()), c: Vec::with_capacity(per_q.len()) };
    for (a, b, c) in per_q {
        kf.a.push(a);
        kf.b.push(b);
        kf.c.push(c);
    }
    Ok(kf)
}

fn element_quads(_space: &FunctionSpacePair, e: usize) -> std::ops::Range<usize> {
    e * crate::spaces::QUAD_PER_ELEMENT..(e + 1) * crate::spaces::QUAD_PER_ELEMENT
}

fn assemble_elementwise<F>(space: &FunctionSpacePair, nrows: usize, ncols: usize, local: F) -> SparseMatrix
where
    F: Fn(usize, &mut Vec<(usize, usize, f64)>) + Sync,
{
    let parts: Vec<Vec<(usize, usize, f64)>> = (0..space.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut v = Vec::new();
            local(e, &mut v);
            v
        })
        .collect();
    let mut t = TripletBuilder::with_capacity(nrows, ncols, parts.iter().map(|p| p.len()).sum());
    for p in parts {
        for (i, j, v) in p {
            t.push(i, j, v);
        }
    }
    t.build()
}

/// Full velocity × velocity matrix of a viscous-type kernel field.
pub fn assemble_a(space: &FunctionSpacePair, k: &[AKernel]) -> SparseMatrix {
    tick();
    assert_eq!(k.len(), space.n_quad());
    let n = space.n_vel();
    let nl = space.nloc_vel();
    assemble_elementwise(space, n, n, |e, out| {
        let mut loc = vec![0.0; nl * nl];
        let mut kj = vec![[0.0; 6]; nl];
        for q in element_quads(space, e) {
            let w = space.quad_points()[q].weight;
            let jets = space.vel_jets_at(q);
            let kq = &k[q];
            for (j, jet) in jets.iter().enumerate() {
                for s in 0..6 {
                    kj[j][s] = (0..6).map(|t| kq[s][t] * jet[t]).sum::<f64>() * w;
                }
            }
            for (i, ji) in jets.iter().enumerate() {
                for j in 0..nl {
                    loc[i * nl + j] += (0..6).map(|s| ji[s] * kj[j][s]).sum::<f64>();
                }
            }
        }
        let dofs = space.elem_vel_dofs(e);
        for i in 0..nl {
            for j in 0..nl {
                out.push((dofs[i], dofs[j], loc[i * nl + j]));
            }
        }
    })
}

/// Pressure × velocity matrix of a divergence-type kernel field.
pub fn assemble_b(space: &FunctionSpacePair, k: &[BKernel]) -> SparseMatrix {
    tick();
    assert_eq!(k.len(), space.n_quad());
    let nl = space.nloc_vel();
    assemble_elementwise(space, space.n_pres(), space.n_vel(), |e, out| {
        let mut loc = vec![0.0; 4 * nl];
        for q in element_quads(space, e) {
            let w = space.quad_points()[q].weight;
            let pv = space.pres_vals_at(q);
            for (j, jet) in space.vel_jets_at(q).iter().enumerate() {
                let d: f64 = (0..6).map(|s| k[q][s] * jet[s]).sum::<f64>() * w;
                for a in 0..4 {
                    loc[a * nl + j] += pv[a] * d;
                }
            }
        }
        let pd = space.elem_pres_dofs(e);
        let vd = space.elem_vel_dofs(e);
        for a in 0..4 {
            for j in 0..nl {
                out.push((pd[a], vd[j], loc[a * nl + j]));
            }
        }
    })
}

/// Reference H¹-seminorm Gram matrix of the velocity space.
pub fn h1_gram(space: &FunctionSpacePair) -> SparseMatrix {
    let ka = viscous_metric(&Mat2::identity());
    let k = vec![ka; space.n_quad()];
    assemble_a(space, &k)
}

/// Reference L² Gram matrix of the pressure space.
pub fn pressure_mass(space: &FunctionSpacePair) -> SparseMatrix {
    tick();
    assemble_elementwise(space, space.n_pres(), space.n_pres(), |e, out| {
        let mut loc = [0.0; 16];
        for q in element_quads(space, e) {
            let w = space.quad_points()[q].weight;
            let pv = space.pres_vals_at(q);
            for a in 0..4 {
                for b in 0..4 {
                    loc[a * 4 + b] += w * pv[a] * pv[b];
                }
            }
        }
        let pd = space.elem_pres_dofs(e);
        for a in 0..4 {
            for b in 0..4 {
                out.push((pd[a], pd[b], loc[a * 4 + b]));
            }
        }
    })
}

/// c(u, v, φ_i) for every velocity basis function φ_i.
pub fn c_vector(space: &FunctionSpacePair, k: &[CKernel], u: &[Jet], v: &[Jet]) -> Vec<f64> {
    tick();
    let nl = space.nloc_vel();
    let parts: Vec<Vec<f64>> = (0..space.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut loc = vec![0.0; nl];
            for q in element_quads(space, e) {
                let w = space.quad_points()[q].weight;
                let mut g = [0.0; 2];
                for alpha in 0..2 {
                    for beta in 0..6 {
                        let uv = u[q][alpha] * v[q][beta];
                        if uv != 0.0 {
                            g[0] += k[q][c_index(alpha, beta, 0)] * uv;
                            g[1] += k[q][c_index(alpha, beta, 1)] * uv;
                        }
                    }
                }
                for (i, ji) in space.vel_jets_at(q).iter().enumerate() {
                    loc[i] += w * (g[0] * ji[0] + g[1] * ji[1]);
                }
            }
            loc
        })
        .collect();
    let mut r = vec![0.0; space.n_vel()];
    for (e, loc) in parts.iter().enumerate() {
        for (d, v) in space.elem_vel_dofs(e).iter().zip(loc) {
            r[*d] += v;
        }
    }
    r
}

/// Matrix of d ↦ c(φ_d, v, φ_i) (v fixed, advecting argument varies).
pub fn c_matrix_advecting(space: &FunctionSpacePair, k: &[CKernel], v: &[Jet]) -> SparseMatrix {
    tick();
    let nl = space.nloc_vel();
    let n = space.n_vel();
    assemble_elementwise(space, n, n, |e, out| {
        let mut loc = vec![0.0; nl * nl];
        for q in element_quads(space, e) {
            let w = space.quad_points()[q].weight;
            let mut h = [[0.0; 2]; 2];
            for (alpha, ha) in h.iter_mut().enumerate() {
                for (gamma, hag) in ha.iter_mut().enumerate() {
                    *hag = w * (0..6).map(|beta| k[q][c_index(alpha, beta, gamma)] * v[q][beta]).sum::<f64>();
                }
            }
            let jets = space.vel_jets_at(q);
            for (i, ji) in jets.iter().enumerate() {
                let t = [h[0][0] * ji[0] + h[0][1] * ji[1], h[1][0] * ji[0] + h[1][1] * ji[1]];
                for (d, jd) in jets.iter().enumerate() {
                    loc[i * nl + d] += t[0] * jd[0] + t[1] * jd[1];
                }
            }
        }
        let dofs = space.elem_vel_dofs(e);
        for i in 0..nl {
            for j in 0..nl {
                out.push((dofs[i], dofs[j], loc[i * nl + j]));
            }
        }
    })
}

/// Matrix of d ↦ c(u, φ_d, φ_i) (u fixed, advected argument varies).
pub fn c_matrix_advected(space: &FunctionSpacePair, k: &[CKernel], u: &[Jet]) -> SparseMatrix {
    tick();
    let nl = space.nloc_vel();
    let n = space.n_vel();
    assemble_elementwise(space, n, n, |e, out| {
        let mut loc = vec![0.0; nl * nl];
        for q in element_quads(space, e) {
            let w = space.quad_points()[q].weight;
            let mut h = [[0.0; 2]; 6];
            for (beta, hb) in h.iter_mut().enumerate() {
                for (gamma, hbg) in hb.iter_mut().enumerate() {
                    *hbg = w * (0..2).map(|alpha| k[q][c_index(alpha, beta, gamma)] * u[q][alpha]).sum::<f64>();
                }
            }
            let jets = space.vel_jets_at(q);
            for (i, ji) in jets.iter().enumerate() {
                let mut t = [0.0; 6];
                for beta in 0..6 {
                    t[beta] = h[beta][0] * ji[0] + h[beta][1] * ji[1];
                }
                for (d, jd) in jets.iter().enumerate() {
                    loc[i * nl + d] += (0..6).map(|b| t[b] * jd[b]).sum::<f64>();
                }
            }
        }
        let dofs = space.elem_vel_dofs(e);
        for i in 0..nl {
            for j in 0..nl {
                out.push((dofs[i], dofs[j], loc[i * nl + j]));
            }
        }
    })
}

/// Scatters a free-dof vector into a full velocity vector (zero on Dirichlet dofs).
pub fn expand_free(space: &FunctionSpacePair, u0: &[f64]) -> Vec<f64> {
    assert_eq!(u0.len(), space.n_free());
    let mut full = vec![0.0; space.n_vel()];
    for (k, &d) in space.free_dofs().iter().enumerate() {
        full[d] = u0[k];
    }
    full
}

pub fn restrict_free(space: &FunctionSpacePair, full: &[f64]) -> Vec<f64> {
    space.free_dofs().iter().map(|&d| full[d]).collect()
}

fn all_map(n: usize) -> Vec<Option<usize>> {
    (0..n).map(Some).collect()
}

/// Operators of the homogeneous problem at one parameter point, on the free
/// velocity dofs:
///
/// find u₀, p with  (A + C0) u₀ + C(u₀, u₀) + Bᵀ p = d0,  B u₀ = d1.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub phi: f64,
    pub uinf: f64,
    /// free × free, viscosity included
    pub a: SparseMatrix,
    /// n_pres × free
    pub b: SparseMatrix,
    /// free × free, linear in u∞
    pub c0: SparseMatrix,
    pub d0: Vec<f64>,
    /// the part of d0 that does not come from lift self-convection
    pub d0_visc: Vec<f64>,
    pub d1: Vec<f64>,
    /// convection kernel at φ, per quadrature point
    pub c: Vec<CKernel>,
}

impl OperatorSet {
    /// Builds the operator set from pointwise kernels and the unit lift.
    pub fn from_kernels(space: &FunctionSpacePair, kf: &KernelField, lift: &[f64], phi: f64, uinf: f64) -> Self {
        let fm = space.free_map();
        let nf = space.n_free();
        let a_full = assemble_a(space, &kf.a);
        let b_full = assemble_b(space, &kf.b);
        let lj = space.field_jets(lift);
        let a = a_full.restrict(fm, nf, fm, nf);
        let b = b_full.restrict(&all_map(space.n_pres()), space.n_pres(), fm, nf);
        let al = a_full.matvec(lift);
        let cll = c_vector(space, &kf.c, &lj, &lj);
        let d0 = space.free_dofs().iter().map(|&d| -uinf * al[d] - uinf * uinf * cll[d]).collect();
        let d0_visc = space.free_dofs().iter().map(|&d| -uinf * al[d]).collect();
        let d1 = b_full.matvec(lift).iter().map(|v| -uinf * v).collect();
        let c0_full = c_matrix_advecting(space, &kf.c, &lj).add_scaled(&c_matrix_advected(space, &kf.c, &lj), 1.0);
        let mut c0 = c0_full.restrict(fm, nf, fm, nf);
        c0.scale(uinf);
        Self { phi, uinf, a, b, c0, d0, d0_visc, d1, c: kf.c.clone() }
    }

    /// c(u₀, u₀, ·) on free rows and its Jacobian with respect to u₀.
    pub fn convection(&self, space: &FunctionSpacePair, u0: &[f64]) -> (Vec<f64>, SparseMatrix) {
        let full = expand_free(space, u0);
        let jets = space.field_jets(&full);
        let r = restrict_free(space, &c_vector(space, &self.c, &jets, &jets));
        let fm = space.free_map();
        let nf = space.n_free();
        let jac = c_matrix_advecting(space, &self.c, &jets)
            .add_scaled(&c_matrix_advected(space, &self.c, &jets), 1.0)
            .restrict(fm, nf, fm, nf);
        (r, jac)
    }

    /// Momentum and continuity residuals of the homogeneous problem.
    pub fn residual(&self, space: &FunctionSpacePair, u0: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let full = expand_free(space, u0);
        let jets = space.field_jets(&full);
        let conv = restrict_free(space, &c_vector(space, &self.c, &jets, &jets));
        let au = self.a.matvec(u0);
        let cu = self.c0.matvec(u0);
        let bp = self.b.tr_matvec(p);
        let mom = (0..u0.len()).map(|i| au[i] + cu[i] + conv[i] + bp[i] - self.d0[i]).collect();
        let bu = self.b.matvec(u0);
        let cont = bu.iter().zip(&self.d1).map(|(x, d)| x - d).collect();
        (mom, cont)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_omesh, naca_profile, RotationProfile};
    use crate::spaces::{build_space_pair, SpaceKind};

    fn setup(kind: SpaceKind) -> (FunctionSpacePair, DeformedGeometry) {
        let m = build_omesh(&naca_profile(0.15, 24).unwrap(), 10.0, 24, 6, 1.4).unwrap();
        let s = build_space_pair(&m, kind).unwrap();
        let g = DeformedGeometry::new(RotationProfile::default(), 12, 35f64.to_radians()).unwrap();
        (s, g)
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn viscous_matrix_symmetric() {
        for (kind, mode) in [(SpaceKind::TaylorHood, PushMode::Canonical), (SpaceKind::DivConforming, PushMode::Piola)] {
            let (s, g) = setup(kind);
            let kf = exact_kernels(&s, &g, mode, 0.5, 1.0 / 6.0).unwrap();
            let a = assemble_a(&s, &kf.a);
            assert!(a.max_asymmetry() <= 1e-12 * a.max_abs().max(1.0), "{kind:?}");
        }
    }

    #[test]
    fn identity_map_reduces_to_reference_forms() {
        let (s, g) = setup(SpaceKind::TaylorHood);
        let kf = exact_kernels(&s, &g, PushMode::Piola, 0.0, 1.0).unwrap();
        let a = assemble_a(&s, &kf.a);
        let gram = h1_gram(&s);
        assert!(a.add_scaled(&gram, -1.0).max_abs() < 1e-13 * gram.max_abs());
    }

    #[test]
    fn c_matrices_are_linearizations() {
        let (s, g) = setup(SpaceKind::DivConforming);
        let kf = exact_kernels(&s, &g, PushMode::Piola, 0.3, 1.0).unwrap();
        let u = pseudo(s.n_vel(), 1);
        let v = pseudo(s.n_vel(), 2);
        let uj = s.field_jets(&u);
        let vj = s.field_jets(&v);
        let direct = c_vector(&s, &kf.c, &uj, &vj);
        let m1 = c_matrix_advecting(&s, &kf.c, &vj).matvec(&u);
        let m2 = c_matrix_advected(&s, &kf.c, &uj).matvec(&v);
        let scale = crate::linalg::max_abs(&direct);
        for i in 0..s.n_vel() {
            assert!((direct[i] - m1[i]).abs() < 1e-12 * scale);
            assert!((direct[i] - m2[i]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn solenoidal_fields_have_zero_divergence_form() {
        let (s, g) = setup(SpaceKind::DivConforming);
        let kf = exact_kernels(&s, &g, PushMode::Piola, 0.6, 1.0).unwrap();
        let b = assemble_b(&s, &kf.b);
        let psi = pseudo(s.n_stream(), 3);
        let v = s.stream_curl(&psi).unwrap();
        let bv = b.matvec(&v);
        assert!(crate::linalg::max_abs(&bv) <= 1e-10, "{}", crate::linalg::max_abs(&bv));
    }

    fn skew_defect(nc: usize, nr: usize) -> f64 {
        let m = build_omesh(&naca_profile(0.15, nc).unwrap(), 10.0, nc, nr, 1.4).unwrap();
        let s = build_space_pair(&m, SpaceKind::DivConforming).unwrap();
        let g = DeformedGeometry::new(RotationProfile::default(), 12, 35f64.to_radians()).unwrap();
        let kf = exact_kernels(&s, &g, PushMode::Piola, 0.4, 1.0).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        // smooth stream functions; v vanishes near both boundaries
        let stream = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            (0..s.n_stream()).map(|k| f((k % nc) as f64 / nc as f64, (k / nc) as f64 / (nr + 1) as f64)).collect()
        };
        let psi_u = stream(&|x, y| (tau * x).sin() * y * (1.0 + y));
        let psi_v = stream(&|x, y| {
            let b = ((y - 0.5) / 0.3).powi(2);
            if b < 1.0 { (1.0 - b).powi(3) * (tau * x).cos() } else { 0.0 }
        });
        let u = s.stream_curl(&psi_u).unwrap();
        let v = s.stream_curl(&psi_v).unwrap();
        let uj = s.field_jets(&u);
        let vj = s.field_jets(&v);
        let r = c_vector(&s, &kf.c, &uj, &vj);
        let gram = h1_gram(&s);
        let scale = gram.inner(&u, &u).sqrt() * gram.inner(&v, &v).sqrt();
        crate::linalg::dot(&r, &v).abs() / scale
    }

    #[test]
    fn convection_skew_defect_is_quadrature_limited() {
        // c(u, v, v) = 0 for solenoidal u and compactly supported v; the discrete
        // value is nonzero only through quadrature error on the curved map
        let coarse = skew_defect(24, 6);
        let fine = skew_defect(48, 12);
        assert!(coarse < 1e-2, "{coarse}");
        assert!(fine < 0.25 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn quadrature_counter_ticks() {
        let (s, _) = setup(SpaceKind::TaylorHood);
        let before = quadrature_count();
        let _ = pressure_mass(&s);
        assert_eq!(quadrature_count(), before + 1);
    }

    #[test]
    fn pressure_mass_total_is_area() {
        let (s, _) = setup(SpaceKind::DivConforming);
        let m = pressure_mass(&s);
        let ones = vec![1.0; s.n_pres()];
        let area = m.inner(&ones, &ones);
        let expect = std::f64::consts::PI * 100.0 - 0.6851 * 0.15;
        assert!((area - expect).abs() < 2e-2);
    }
}
