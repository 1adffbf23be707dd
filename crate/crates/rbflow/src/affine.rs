//! Parameter-separated forms: every operator is a sum of fixed operators
//! weighted by monomials scale·φᵏ·u∞ᵐ.
//!
//! The kernels of the forms are polynomials in φ once the Jacobian factors
//! are replaced by their truncated series. We build the polynomial
//! coefficients pointwise and assemble one operator per power, so equal
//! powers are merged automatically.

use crate::forms::{
    assemble_a, assemble_b, c_matrix_advected, c_matrix_advecting, c_vector, convection_kernel, divergence_kernel,
    identity_jet_matrix, restrict_free, sandwich, viscous_metric, AKernel, BKernel, CKernel, OperatorSet,
};
use crate::geometry::{DeformedGeometry, Mat2};
use crate::linalg::SparseMatrix;
use crate::spaces::{jet_transform, FunctionSpacePair, JetMatrix, PushMode};
use crate::{Error, ParameterPoint, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// scale · φ^phi_power · u∞^uinf_power
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub phi_power: u32,
    pub uinf_power: u32,
    pub scale: f64,
}

impl Coefficient {
    pub fn eval(&self, mu: ParameterPoint) -> f64 {
        self.scale * mu.phi.powi(self.phi_power as i32) * mu.uinf.powi(self.uinf_power as i32)
    }
}

#[derive(Debug, Clone)]
pub struct AffineTerm<T> {
    pub coeff: Coefficient,
    pub op: T,
}

/// Polynomial coefficients (power-major, then quadrature point) of the kernels.
#[derive(Debug, Clone)]
pub struct SeriesKernels {
    pub a: Vec<Vec<AKernel>>,
    pub b: Vec<Vec<BKernel>>,
    pub c: Vec<Vec<CKernel>>,
}

#[derive(Debug, Clone)]
pub struct AffineFormSet {
    pub mode: PushMode,
    pub order: usize,
    pub nu: f64,
    /// free × free
    pub a: Vec<AffineTerm<SparseMatrix>>,
    /// n_pres × free
    pub b: Vec<AffineTerm<SparseMatrix>>,
    /// convection kernels per quadrature point (never assembled as a tensor)
    pub c: Vec<AffineTerm<Vec<CKernel>>>,
    pub c0: Vec<AffineTerm<SparseMatrix>>,
    pub d0: Vec<AffineTerm<Vec<f64>>>,
    pub d1: Vec<AffineTerm<Vec<f64>>>,
}

/// Pointwise series kernels for one push-forward mode.
pub fn series_kernels(space: &FunctionSpacePair, geom: &DeformedGeometry, mode: PushMode) -> Result<SeriesKernels> {
    let n = geom.order;
    let (na, nb, nc) = match mode {
        PushMode::Canonical => (3, n + 1, n + 1),
        PushMode::Piola => (2 * n + 3, 2 * n + 1, 2 * n + 1),
    };
    let per_q: Vec<Result<(Vec<AKernel>, Vec<BKernel>, Vec<CKernel>)>> = space
        .quad_points()
        .par_iter()
        .map(|qp| {
            let f = geom.factors(qp.xh)?;
            let (lp, mp, tp): (Vec<JetMatrix>, Vec<Mat2>, Vec<Mat2>) = match mode {
                PushMode::Canonical => (
                    vec![identity_jet_matrix()],
                    vec![Mat2::identity()],
                    f.bminus.iter().map(|b| b.transpose()).collect(),
                ),
                PushMode::Piola => (
                    f.bplus.iter().zip(&f.dbplus).map(|(b, db)| jet_transform(b, db)).collect(),
                    f.bplus.clone(),
                    vec![Mat2::identity()],
                ),
            };
            let kp = [viscous_metric(&Mat2::identity()), viscous_metric(&f.d1), viscous_metric(&(-f.d2))];
            let mut a = vec![[[0.0; 6]; 6]; na];
            for (i, li) in lp.iter().enumerate() {
                for (j, lj) in lp.iter().enumerate() {
                    for (l, kl) in kp.iter().enumerate() {
                        let s = sandwich(li, kl, lj);
                        let t = &mut a[i + j + l];
                        for (x, y) in t.iter_mut().flatten().zip(s.iter().flatten()) {
                            *x += y;
                        }
                    }
                }
            }
            let mut b = vec![[0.0; 6]; nb];
            for (i, li) in lp.iter().enumerate() {
                for (j, bj) in f.bminus.iter().enumerate() {
                    let s = divergence_kernel(li, bj);
                    for (x, y) in b[i + j].iter_mut().zip(&s) {
                        *x += y;
                    }
                }
            }
            let mut c = vec![[0.0; 24]; nc];
            for (i, mi) in mp.iter().enumerate() {
                for (j, lj) in lp.iter().enumerate() {
                    for (l, tl) in tp.iter().enumerate() {
                        let s = convection_kernel(mi, lj, tl);
                        for (x, y) in c[i + j + l].iter_mut().zip(&s) {
                            *x += y;
                        }
                    }
                }
            }
            Ok((a, b, c))
        })
        .collect();
    let mut sk = SeriesKernels {
        a: vec![Vec::with_capacity(space.n_quad()); na],
        b: vec![Vec::with_capacity(space.n_quad()); nb],
        c: vec![Vec::with_capacity(space.n_quad()); nc],
    };
    for r in per_q {
        let (a, b, c) = r?;
        for (k, v) in a.into_iter().enumerate() {
            sk.a[k].push(v);
        }
        for (k, v) in b.into_iter().enumerate() {
            sk.b[k].push(v);
        }
        for (k, v) in c.into_iter().enumerate() {
            sk.c[k].push(v);
        }
    }
    Ok(sk)
}

/// Builds all affine terms. `lift` is the unit lift (full velocity vector).
pub fn build_affine_forms(
    space: &FunctionSpacePair,
    geom: &DeformedGeometry,
    mode: PushMode,
    lift: &[f64],
    nu: f64,
) -> Result<AffineFormSet> {
    if lift.len() != space.n_vel() {
        return Err(Error::InvalidInput("lift length does not match the velocity space".into()));
    }
    if let Some(w) = geom.accuracy_warning() {
        log::warn!("{w}");
    }
    let sk = series_kernels(space, geom, mode)?;
    let fm = space.free_map();
    let nf = space.n_free();
    let np = space.n_pres();
    let all_p: Vec<Option<usize>> = (0..np).map(Some).collect();
    let lj = space.field_jets(lift);
    let coeff = |k: usize, m: u32, scale: f64| Coefficient { phi_power: k as u32, uinf_power: m, scale };
    let mut set = AffineFormSet { mode, order: geom.order, nu, a: vec![], b: vec![], c: vec![], c0: vec![], d0: vec![], d1: vec![] };
    for (k, ka) in sk.a.iter().enumerate() {
        let full = assemble_a(space, ka);
        let al = full.matvec(lift);
        set.d0.push(AffineTerm { coeff: coeff(k, 1, nu), op: restrict_free(space, &al).iter().map(|v| -v).collect() });
        set.a.push(AffineTerm { coeff: coeff(k, 0, nu), op: full.restrict(fm, nf, fm, nf) });
    }
    for (k, kb) in sk.b.iter().enumerate() {
        let full = assemble_b(space, kb);
        set.d1.push(AffineTerm { coeff: coeff(k, 1, 1.0), op: full.matvec(lift).iter().map(|v| -v).collect() });
        set.b.push(AffineTerm { coeff: coeff(k, 0, 1.0), op: full.restrict(&all_p, np, fm, nf) });
    }
    for (k, kc) in sk.c.into_iter().enumerate() {
        let c0 = c_matrix_advecting(space, &kc, &lj).add_scaled(&c_matrix_advected(space, &kc, &lj), 1.0);
        set.c0.push(AffineTerm { coeff: coeff(k, 1, 1.0), op: c0.restrict(fm, nf, fm, nf) });
        let cll = c_vector(space, &kc, &lj, &lj);
        set.d0.push(AffineTerm { coeff: coeff(k, 2, 1.0), op: restrict_free(space, &cll).iter().map(|v| -v).collect() });
        set.c.push(AffineTerm { coeff: coeff(k, 0, 1.0), op: kc });
    }
    Ok(set)
}

pub fn weights<T>(terms: &[AffineTerm<T>], mu: ParameterPoint) -> Vec<f64> {
    terms.iter().map(|t| t.coeff.eval(mu)).collect()
}

fn sum_matrices(terms: &[AffineTerm<SparseMatrix>], mu: ParameterPoint) -> SparseMatrix {
    let mut it = terms.iter();
    let first = it.next().expect("empty term list");
    let mut acc = first.op.clone();
    acc.scale(first.coeff.eval(mu));
    for t in it {
        acc = acc.add_scaled(&t.op, t.coeff.eval(mu));
    }
    acc
}

fn sum_vectors(terms: &[AffineTerm<Vec<f64>>], mu: ParameterPoint) -> Vec<f64> {
    let mut acc = vec![0.0; terms[0].op.len()];
    for t in terms {
        crate::linalg::axpy(&mut acc, t.coeff.eval(mu), &t.op);
    }
    acc
}

impl AffineFormSet {
    pub fn term_counts(&self) -> [(&'static str, usize); 6] {
        [
            ("a", self.a.len()),
            ("b", self.b.len()),
            ("c", self.c.len()),
            ("c0", self.c0.len()),
            ("d0", self.d0.len()),
            ("d1", self.d1.len()),
        ]
    }

    /// Weighted sums of the term operators at μ.
    pub fn assemble_at(&self, mu: ParameterPoint) -> OperatorSet {
        let nq = self.c[0].op.len();
        let wc = weights(&self.c, mu);
        let mut c = vec![[0.0; 24]; nq];
        for (t, w) in self.c.iter().zip(&wc) {
            if *w == 0.0 {
                continue;
            }
            for (acc, k) in c.iter_mut().zip(&t.op) {
                for (x, y) in acc.iter_mut().zip(k) {
                    *x += w * y;
                }
            }
        }
        OperatorSet {
            phi: mu.phi,
            uinf: mu.uinf,
            a: sum_matrices(&self.a, mu),
            b: sum_matrices(&self.b, mu),
            c0: sum_matrices(&self.c0, mu),
            d0: sum_vectors(&self.d0, mu),
            d0_visc: sum_vectors(&self.d0.iter().filter(|t| t.coeff.uinf_power == 1).cloned().collect::<Vec<_>>(), mu),
            d1: sum_vectors(&self.d1, mu),
            c,
        }
    }
}
