//! POD bases (method of snapshots) and Galerkin projection of the affine
//! terms onto them.

use crate::affine::{AffineFormSet, Coefficient};
use crate::forms::c_index;
use crate::hifi::Ensemble;
use crate::linalg::{sorted_symmetric_eigen, SparseMatrix};
use crate::spaces::{FunctionSpacePair, Jet, PushMode, SpaceKind};
use crate::{Error, ParameterBox, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerProduct {
    H1Semi,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    Velocity,
    Pressure,
    Supremizer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Fixed(usize),
    /// smallest M with Σ_{j≤M} λ_j ≥ (1 − ε²) Σ λ
    Energy(f64),
}

#[derive(Debug, Clone)]
pub struct PodResult {
    pub eigenvalues: Vec<f64>,
    /// snapshot-to-mode coefficients (N × M): basis = snapshots · coeffs
    pub coeffs: DMatrix<f64>,
    /// modes as columns
    pub basis: DMatrix<f64>,
    pub inner: InnerProduct,
    pub m: usize,
}

impl PodResult {
    pub fn expected_error(&self) -> f64 {
        expected_error(&self.eigenvalues, self.m)
    }
}

/// ε(M) = sqrt(Σ_{k>M} λ_k / Σ λ_k).
pub fn expected_error(eigs: &[f64], m: usize) -> f64 {
    let total: f64 = eigs.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let tail: f64 = eigs.iter().skip(m).sum();
    (tail.max(0.0) / total).sqrt()
}

pub fn select_count(eigs: &[f64], selector: Selector) -> usize {
    match selector {
        Selector::Fixed(m) => m,
        Selector::Energy(eps) => {
            let total: f64 = eigs.iter().sum();
            let target = (1.0 - eps * eps) * total;
            let mut acc = 0.0;
            for (k, l) in eigs.iter().enumerate() {
                acc += l;
                if acc >= target {
                    return k + 1;
                }
            }
            eigs.len()
        }
    }
}

/// Columns as snapshot vectors.
pub fn snapshot_matrix(vectors: &[&[f64]]) -> DMatrix<f64> {
    let n = vectors.first().map(|v| v.len()).unwrap_or(0);
    DMatrix::from_fn(n, vectors.len(), |i, j| vectors[j][i])
}

/// C_ij = z(φ_i, φ_j) for the Gram matrix of z.
pub fn covariance_matrix(snaps: &DMatrix<f64>, gram: &SparseMatrix) -> Result<DMatrix<f64>> {
    if snaps.nrows() != gram.nrows() {
        return Err(Error::InvalidInput(format!(
            "snapshots have {} dofs but the Gram matrix has {}",
            snaps.nrows(),
            gram.nrows()
        )));
    }
    let gs = gram.mul_dense(snaps);
    let c = snaps.transpose() * gs;
    Ok((&c + c.transpose()) * 0.5)
}

fn gram_inner(gram: &SparseMatrix, a: &[f64], b: &[f64]) -> f64 {
    gram.inner(a, b)
}

/// Method of snapshots, then two passes of Gram-Schmidt in z to remove the
/// round-off loss of orthogonality in the small-eigenvalue modes. Both steps
/// are nested, so the first M' < M modes do not depend on M.
pub fn pod_basis(snaps: &DMatrix<f64>, gram: &SparseMatrix, inner: InnerProduct, selector: Selector) -> Result<PodResult> {
    let n = snaps.ncols();
    if n == 0 {
        return Err(Error::InvalidInput("empty snapshot set".into()));
    }
    let c = covariance_matrix(snaps, gram)?;
    let (mut eigs, vecs) = sorted_symmetric_eigen(&c);
    eigs.iter_mut().for_each(|l| *l = l.max(0.0));
    let m = select_count(&eigs, selector);
    let rank = eigs.iter().take_while(|l| **l > 1e-14 * eigs[0]).count();
    if m == 0 || m > n || m > rank {
        return Err(Error::RankDeficient { requested: m, rank });
    }
    let mut coeffs = DMatrix::zeros(n, m);
    for j in 0..m {
        let s = eigs[j].sqrt();
        for i in 0..n {
            coeffs[(i, j)] = vecs[(i, j)] / s;
        }
    }
    let mut basis = snaps * &coeffs;
    for _ in 0..2 {
        for j in 0..m {
            let bj: Vec<f64> = basis.column(j).iter().copied().collect();
            let gbj = gram.matvec(&bj);
            for k in 0..j {
                let r: f64 = basis.column(k).iter().zip(&gbj).map(|(a, b)| a * b).sum();
                let ck = coeffs.column(k).clone_owned();
                let bk = basis.column(k).clone_owned();
                basis.column_mut(j).axpy(-r, &bk, 1.0);
                coeffs.column_mut(j).axpy(-r, &ck, 1.0);
            }
            let bj: Vec<f64> = basis.column(j).iter().copied().collect();
            let nrm = gram_inner(gram, &bj, &bj).sqrt();
            basis.column_mut(j).scale_mut(1.0 / nrm);
            coeffs.column_mut(j).scale_mut(1.0 / nrm);
        }
    }
    Ok(PodResult { eigenvalues: eigs, coeffs, basis, inner, m })
}

/// Provenance recorded in every reduced model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub ensemble_hash: String,
    pub spaces_hash: String,
    /// mesh the spaces were built on, so references can be recomputed
    #[serde(default)]
    pub mesh: Option<crate::geometry::MeshParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub stabilized: bool,
    pub combined: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { stabilized: true, combined: true }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedTerm<T> {
    pub coeff: Coefficient,
    pub op: T,
}

/// Projected operators on W = [V | S] (velocity then supremizer modes) and
/// the pressure modes P.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub kind: SpaceKind,
    pub mode: PushMode,
    pub nu: f64,
    pub order: usize,
    pub options: ModelOptions,
    pub mv: usize,
    pub ms: usize,
    pub mp: usize,
    pub param_box: ParameterBox,
    pub eig_vel: Vec<f64>,
    pub eig_sup: Vec<f64>,
    pub eig_pres: Vec<f64>,
    /// Mw × Mw
    pub a: Vec<ReducedTerm<DMatrix<f64>>>,
    /// Mp × Mw
    pub b: Vec<ReducedTerm<DMatrix<f64>>>,
    /// Mw³, index (j·Mw + l)·Mw + m with j advecting, l advected, m test
    pub c: Vec<ReducedTerm<Vec<f64>>>,
    pub c0: Vec<ReducedTerm<DMatrix<f64>>>,
    pub d0: Vec<ReducedTerm<DVector<f64>>>,
    pub d1: Vec<ReducedTerm<DVector<f64>>>,
    /// n_vel × Mw, full-length homogeneous modes
    pub vel_basis: DMatrix<f64>,
    /// n_pres × Mp
    pub pres_basis: DMatrix<f64>,
    /// n_pres × Mv, pressure snapshots under the velocity coefficients
    pub attached: Option<DMatrix<f64>>,
    pub gram_w: DMatrix<f64>,
    pub gram_p: DMatrix<f64>,
    pub lift: Vec<f64>,
    pub provenance: Provenance,
}

impl ReducedModel {
    pub fn mw(&self) -> usize {
        self.mv + self.ms
    }

    pub fn expected_error(&self) -> f64 {
        expected_error(&self.eig_vel, self.mv)
    }

    pub fn expected_error_pressure(&self) -> f64 {
        expected_error(&self.eig_pres, self.mp)
    }

    pub fn n_scalars(&self) -> usize {
        let mw = self.mw();
        self.a.len() * mw * mw + self.c0.len() * mw * mw + self.b.len() * self.mp * mw + self.c.len() * mw * mw * mw
    }

    /// Nested truncation to (mv, ms, mp) ≤ current sizes.
    pub fn truncate(&self, mv: usize, ms: usize, mp: usize) -> Result<ReducedModel> {
        if mv > self.mv || ms > self.ms || mp > self.mp || mv == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot truncate a ({}, {}, {}) model to ({mv}, {ms}, {mp})",
                self.mv, self.ms, self.mp
            )));
        }
        let idx: Vec<usize> = (0..mv).chain(self.mv..self.mv + ms).collect();
        let mw_old = self.mw();
        let mw = idx.len();
        let sq = |m: &DMatrix<f64>| DMatrix::from_fn(mw, mw, |i, j| m[(idx[i], idx[j])]);
        let rect = |m: &DMatrix<f64>| DMatrix::from_fn(mp, mw, |i, j| m[(i, idx[j])]);
        let vec = |v: &DVector<f64>| DVector::from_fn(mw, |i, _| v[idx[i]]);
        let ten = |t: &Vec<f64>| {
            let mut out = vec![0.0; mw * mw * mw];
            for (j, &oj) in idx.iter().enumerate() {
                for (l, &ol) in idx.iter().enumerate() {
                    for (m, &om) in idx.iter().enumerate() {
                        out[(j * mw + l) * mw + m] = t[(oj * mw_old + ol) * mw_old + om];
                    }
                }
            }
            out
        };
        let vel_basis = DMatrix::from_fn(self.vel_basis.nrows(), mw, |i, j| self.vel_basis[(i, idx[j])]);
        Ok(ReducedModel {
            kind: self.kind,
            mode: self.mode,
            nu: self.nu,
            order: self.order,
            options: ModelOptions { stabilized: self.options.stabilized && ms > 0, combined: self.options.combined },
            mv,
            ms,
            mp,
            param_box: self.param_box,
            eig_vel: self.eig_vel.clone(),
            eig_sup: self.eig_sup.clone(),
            eig_pres: self.eig_pres.clone(),
            a: self.a.iter().map(|t| ReducedTerm { coeff: t.coeff, op: sq(&t.op) }).collect(),
            b: self.b.iter().map(|t| ReducedTerm { coeff: t.coeff, op: rect(&t.op) }).collect(),
            c: self.c.iter().map(|t| ReducedTerm { coeff: t.coeff, op: ten(&t.op) }).collect(),
            c0: self.c0.iter().map(|t| ReducedTerm { coeff: t.coeff, op: sq(&t.op) }).collect(),
            d0: self.d0.iter().map(|t| ReducedTerm { coeff: t.coeff, op: vec(&t.op) }).collect(),
            d1: self.d1.iter().map(|t| ReducedTerm { coeff: t.coeff, op: t.op.rows(0, mp).clone_owned() }).collect(),
            vel_basis,
            pres_basis: self.pres_basis.columns(0, mp).clone_owned(),
            attached: self.attached.as_ref().map(|a| a.columns(0, mv).clone_owned()),
            gram_w: sq(&self.gram_w),
            gram_p: self.gram_p.view((0, 0), (mp, mp)).clone_owned(),
            lift: self.lift.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

/// Rows of the free dofs.
fn free_rows(space: &FunctionSpacePair, m: &DMatrix<f64>) -> DMatrix<f64> {
    let fd = space.free_dofs();
    DMatrix::from_fn(fd.len(), m.ncols(), |i, j| m[(fd[i], j)])
}

/// Reference jets of every column at every quadrature point, [q][j].
fn basis_jets(space: &FunctionSpacePair, w: &DMatrix<f64>) -> Vec<Vec<Jet>> {
    let cols: Vec<Vec<Jet>> = (0..w.ncols())
        .into_par_iter()
        .map(|j| {
            let v: Vec<f64> = w.column(j).iter().copied().collect();
            space.field_jets(&v)
        })
        .collect();
    (0..space.n_quad()).map(|q| cols.iter().map(|c| c[q]).collect()).collect()
}

/// Contracts a convection kernel field with W in all three slots.
pub fn project_convection(space: &FunctionSpacePair, k: &[[f64; 24]], jets: &[Vec<Jet>]) -> Vec<f64> {
    let nq = space.n_quad();
    let mw = jets.first().map(|j| j.len()).unwrap_or(0);
    const CHUNK: usize = 256;
    let mut acc = DMatrix::<f64>::zeros(mw * mw, mw);
    let mut start = 0;
    while start < nq {
        let end = (start + CHUNK).min(nq);
        let nc = end - start;
        let mut t = DMatrix::<f64>::zeros(mw * mw, 2 * nc);
        let mut y = DMatrix::<f64>::zeros(2 * nc, mw);
        for q in start..end {
            let qi = q - start;
            let w = space.quad_points()[q].weight;
            let jq = &jets[q];
            for (m, jm) in jq.iter().enumerate() {
                y[(2 * qi, m)] = w * jm[0];
                y[(2 * qi + 1, m)] = w * jm[1];
            }
            let kq = &k[q];
            for (j, jj) in jq.iter().enumerate() {
                let mut h = [[0.0; 2]; 6];
                for (beta, hb) in h.iter_mut().enumerate() {
                    for (gamma, hbg) in hb.iter_mut().enumerate() {
                        *hbg = kq[c_index(0, beta, gamma)] * jj[0] + kq[c_index(1, beta, gamma)] * jj[1];
                    }
                }
                for (l, jl) in jq.iter().enumerate() {
                    let mut s0 = 0.0;
                    let mut s1 = 0.0;
                    for beta in 0..6 {
                        s0 += h[beta][0] * jl[beta];
                        s1 += h[beta][1] * jl[beta];
                    }
                    t[(j * mw + l, 2 * qi)] = s0;
                    t[(j * mw + l, 2 * qi + 1)] = s1;
                }
            }
        }
        acc.gemm(1.0, &t, &y, 1.0);
        start = end;
    }
    let mut out = vec![0.0; mw * mw * mw];
    for r in 0..mw * mw {
        for m in 0..mw {
            out[r * mw + m] = acc[(r, m)];
        }
    }
    out
}

/// Inputs of the projection step besides the affine forms.
pub struct ReductionInput<'a> {
    pub space: &'a FunctionSpacePair,
    pub affine: &'a AffineFormSet,
    pub ensemble: &'a Ensemble,
    pub lift: &'a [f64],
    pub gram: &'a SparseMatrix,
    pub pressure_gram: &'a SparseMatrix,
    pub param_box: ParameterBox,
    pub provenance: Provenance,
}

/// POD of the three fields at size m and projection of every affine term.
pub fn build_reduced_model(input: &ReductionInput, m: usize, options: ModelOptions) -> Result<ReducedModel> {
    let space = input.space;
    let ens = input.ensemble;
    if ens.kind != space.kind {
        return Err(Error::InvalidInput("ensemble and spaces belong to different methods".into()));
    }
    let snaps: Vec<_> = ens.converged().collect();
    if snaps.is_empty() {
        return Err(Error::InvalidInput("ensemble has no converged snapshots".into()));
    }
    let skipped = ens.snapshots.len() - snaps.len();
    if skipped > 0 {
        log::warn!("{skipped} unconverged snapshots excluded from the POD");
    }
    for s in &snaps {
        if s.u0.len() != space.n_vel() || s.p.len() != space.n_pres() || s.s.len() != space.n_vel() {
            return Err(Error::InvalidInput("snapshot dimensions do not match the spaces".into()));
        }
    }
    let u = snapshot_matrix(&snaps.iter().map(|s| s.u0.as_slice()).collect::<Vec<_>>());
    let p = snapshot_matrix(&snaps.iter().map(|s| s.p.as_slice()).collect::<Vec<_>>());
    let su = snapshot_matrix(&snaps.iter().map(|s| s.s.as_slice()).collect::<Vec<_>>());
    let pod_v = pod_basis(&u, input.gram, InnerProduct::H1Semi, Selector::Fixed(m))?;
    let pod_p = pod_basis(&p, input.pressure_gram, InnerProduct::L2, Selector::Fixed(m))?;
    let ms = if options.stabilized { m } else { 0 };
    let pod_s = if options.stabilized { Some(pod_basis(&su, input.gram, InnerProduct::H1Semi, Selector::Fixed(m))?) } else { None };
    let eig_sup = match &pod_s {
        Some(ps) => ps.eigenvalues.clone(),
        None => vec![],
    };
    let mut w = DMatrix::zeros(space.n_vel(), m + ms);
    w.columns_mut(0, m).copy_from(&pod_v.basis);
    if let Some(ps) = &pod_s {
        w.columns_mut(m, ms).copy_from(&ps.basis);
    }
    let attached = options.combined.then(|| &p * &pod_v.coeffs);
    project(input, w, pod_p.basis, attached, m, ms, [pod_v.eigenvalues, eig_sup, pod_p.eigenvalues], options)
}

#[allow(clippy::too_many_arguments)]
fn project(
    input: &ReductionInput,
    w: DMatrix<f64>,
    pb: DMatrix<f64>,
    attached: Option<DMatrix<f64>>,
    mv: usize,
    ms: usize,
    eigs: [Vec<f64>; 3],
    options: ModelOptions,
) -> Result<ReducedModel> {
    let space = input.space;
    let aff = input.affine;
    let mp = pb.ncols();
    let wf = free_rows(space, &w);
    let wft = wf.transpose();
    let pbt = pb.transpose();
    let sq = |a: &SparseMatrix| &wft * a.mul_dense(&wf);
    let a: Vec<_> = aff.a.par_iter().map(|t| ReducedTerm { coeff: t.coeff, op: sq(&t.op) }).collect();
    let c0: Vec<_> = aff.c0.par_iter().map(|t| ReducedTerm { coeff: t.coeff, op: sq(&t.op) }).collect();
    let b: Vec<_> = aff.b.par_iter().map(|t| ReducedTerm { coeff: t.coeff, op: &pbt * t.op.mul_dense(&wf) }).collect();
    let d0: Vec<_> = aff
        .d0
        .iter()
        .map(|t| ReducedTerm { coeff: t.coeff, op: &wft * DVector::from_column_slice(&t.op) })
        .collect();
    let d1: Vec<_> = aff
        .d1
        .iter()
        .map(|t| ReducedTerm { coeff: t.coeff, op: &pbt * DVector::from_column_slice(&t.op) })
        .collect();
    let jets = basis_jets(space, &w);
    let c: Vec<_> = aff.c.par_iter().map(|t| ReducedTerm { coeff: t.coeff, op: project_convection(space, &t.op, &jets) }).collect();
    let gram_w = w.transpose() * input.gram.mul_dense(&w);
    let gram_p = &pbt * input.pressure_gram.mul_dense(&pb);
    let [eig_vel, eig_sup, eig_pres] = eigs;
    Ok(ReducedModel {
        kind: space.kind,
        mode: aff.mode,
        nu: aff.nu,
        order: aff.order,
        options,
        mv,
        ms,
        mp,
        param_box: input.param_box,
        eig_vel,
        eig_sup,
        eig_pres,
        a,
        b,
        c,
        c0,
        d0,
        d1,
        vel_basis: w,
        pres_basis: pb,
        attached,
        gram_w,
        gram_p,
        lift: input.lift.to_vec(),
        provenance: input.provenance.clone(),
    })
}
