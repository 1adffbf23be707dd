//! High-fidelity solves: the Stokes lift, Newton on the homogeneous
//! Navier-Stokes problem, supremizers and the snapshot ensemble.

use crate::forms::{exact_kernels, expand_free, h1_gram, pressure_mass, OperatorSet};
use crate::geometry::{BoundaryTag, DeformedGeometry, Vec2};
use crate::linalg::{norm, SparseLu, SparseMatrix, TripletBuilder};
use crate::quadrature::gauss_legendre;
use crate::spaces::{physical_value_grad, DofClass, FunctionSpacePair, PushMode, SpaceKind};
use crate::{Error, ParameterPoint, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub mu: ParameterPoint,
    /// homogeneous velocity, full length (zero on Dirichlet dofs)
    pub u0: Vec<f64>,
    pub p: Vec<f64>,
    /// supremizer of p at μ, full length
    pub s: Vec<f64>,
    pub newton_iters: usize,
    pub converged: bool,
    /// H¹-seminorm of every Newton update
    pub updates: Vec<f64>,
}

/// Saddle matrix [[K, Bᵀ], [B, 0]] on (free velocity, pressure).
fn saddle(k: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let nf = k.nrows();
    let np = b.nrows();
    let mut t = TripletBuilder::with_capacity(nf + np, nf + np, k.nnz() + 2 * b.nnz());
    for (i, j, v) in k.triplets() {
        t.push(i, j, v);
    }
    for (i, j, v) in b.triplets() {
        t.push(nf + i, j, v);
        t.push(j, nf + i, v);
    }
    t.build()
}

fn solve_saddle(k: &SparseMatrix, b: &SparseMatrix, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let lu = SparseLu::factor(&saddle(k, b))?;
    let mut rhs = f.to_vec();
    rhs.extend_from_slice(g);
    let x = lu.solve(&rhs)?;
    let nf = k.nrows();
    Ok((x[..nf].to_vec(), x[nf..].to_vec()))
}

/// Everything needed for high-fidelity solves on one mesh and method.
pub struct HifiProblem {
    pub space: FunctionSpacePair,
    pub geom: DeformedGeometry,
    pub mode: PushMode,
    pub nu: f64,
    pub newton: NewtonOptions,
    /// unit lift, full velocity vector
    pub lift: Vec<f64>,
    /// H¹-seminorm Gram on all velocity dofs
    pub gram: SparseMatrix,
    /// same, restricted to the free dofs
    pub gram_free: SparseMatrix,
    pub pressure_gram: SparseMatrix,
    gram_lu: SparseLu,
}

/// Stokes problem at φ = 0, u∞ = 1 with the full Dirichlet data.
pub fn compute_lift(space: &FunctionSpacePair, geom: &DeformedGeometry, mode: PushMode, nu: f64) -> Result<Vec<f64>> {
    let kf = exact_kernels(space, geom, mode, 0.0, nu)?;
    let g = space.dirichlet_unit().to_vec();
    let a_full = crate::forms::assemble_a(space, &kf.a);
    let b_full = crate::forms::assemble_b(space, &kf.b);
    let fm = space.free_map();
    let nf = space.n_free();
    let np = space.n_pres();
    let all_p: Vec<Option<usize>> = (0..np).map(Some).collect();
    let a = a_full.restrict(fm, nf, fm, nf);
    let b = b_full.restrict(&all_p, np, fm, nf);
    let ag = crate::forms::restrict_free(space, &a_full.matvec(&g));
    let bg = b_full.matvec(&g);
    let f: Vec<f64> = ag.iter().map(|v| -v).collect();
    let h: Vec<f64> = bg.iter().map(|v| -v).collect();
    let (u, _) = solve_saddle(&a, &b, &f, &h).map_err(|e| Error::Singular(format!("lift Stokes system: {e}")))?;
    let mut lift = g;
    for (k, &d) in space.free_dofs().iter().enumerate() {
        lift[d] = u[k];
    }
    Ok(lift)
}

impl HifiProblem {
    pub fn new(space: FunctionSpacePair, geom: DeformedGeometry, mode: PushMode, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidInput(format!("viscosity must be positive, got {nu}")));
        }
        let lift = compute_lift(&space, &geom, mode, nu)?;
        let gram = h1_gram(&space);
        let fm = space.free_map();
        let nf = space.n_free();
        let gram_free = gram.restrict(fm, nf, fm, nf);
        let gram_lu = SparseLu::factor(&gram_free).map_err(|e| Error::Singular(format!("velocity Gram matrix: {e}")))?;
        let pressure_gram = pressure_mass(&space);
        Ok(Self { space, geom, mode, nu, newton: NewtonOptions::default(), lift, gram, gram_free, pressure_gram, gram_lu })
    }

    pub fn kind(&self) -> SpaceKind {
        self.space.kind
    }

    /// Direct (exact Jacobian) operators at μ.
    pub fn operators(&self, mu: ParameterPoint) -> Result<OperatorSet> {
        let kf = exact_kernels(&self.space, &self.geom, self.mode, mu.phi, self.nu)?;
        Ok(OperatorSet::from_kernels(&self.space, &kf, &self.lift, mu.phi, mu.uinf))
    }

    fn h1_norm_free(&self, v: &[f64]) -> f64 {
        self.gram_free.inner(v, v).max(0.0).sqrt()
    }

    pub fn solve(&self, mu: ParameterPoint) -> Result<Snapshot> {
        let ops = self.operators(mu)?;
        self.solve_with(&ops, mu)
    }

    /// Newton on the coupled system, starting from the Stokes solution at μ.
    pub fn solve_with(&self, ops: &OperatorSet, mu: ParameterPoint) -> Result<Snapshot> {
        let (mut u, mut p) = solve_saddle(&ops.a, &ops.b, &ops.d0_visc, &ops.d1)?;
        let base = ops.a.add_scaled(&ops.c0, 1.0);
        let mut updates = Vec::new();
        let mut converged = false;
        let mut iters = 0;
        let residual_norm = |u: &[f64], p: &[f64]| {
            let (m, c) = ops.residual(&self.space, u, p);
            (norm(&m).powi(2) + norm(&c).powi(2)).sqrt()
        };
        while iters < self.newton.max_iters {
            iters += 1;
            let (conv, jac) = ops.convection(&self.space, &u);
            let k = base.add_scaled(&jac, 1.0);
            let au = base.matvec(&u);
            let bp = ops.b.tr_matvec(&p);
            let rm: Vec<f64> = (0..u.len()).map(|i| -(au[i] + conv[i] + bp[i] - ops.d0[i])).collect();
            let bu = ops.b.matvec(&u);
            let rc: Vec<f64> = bu.iter().zip(&ops.d1).map(|(x, d)| -(x - d)).collect();
            let (du, dp) = solve_saddle(&k, &ops.b, &rm, &rc)?;
            let dn = self.h1_norm_free(&du);
            // damped step while far from the solution
            let mut step = 1.0;
            if dn > 1e-6 * (1.0 + self.h1_norm_free(&u)) {
                let r0 = (norm(&rm).powi(2) + norm(&rc).powi(2)).sqrt();
                for _ in 0..8 {
                    let ut: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + step * b).collect();
                    let pt: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + step * b).collect();
                    if residual_norm(&ut, &pt) < r0 {
                        break;
                    }
                    step *= 0.5;
                }
            }
            u.iter_mut().zip(&du).for_each(|(a, b)| *a += step * b);
            p.iter_mut().zip(&dp).for_each(|(a, b)| *a += step * b);
            updates.push(step * dn);
            log::debug!("newton {iters}: |du| = {:.3e} (step {step})", step * dn);
            if !(dn.is_finite()) {
                break;
            }
            if step * dn <= self.newton.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!(
                "Newton did not converge at phi = {:.3} deg, uinf = {:.3} after {iters} iterations (last update {:.3e})",
                mu.phi_degrees(),
                mu.uinf,
                updates.last().copied().unwrap_or(f64::NAN)
            );
        }
        let s = self.supremizer(&ops.b, &p)?;
        Ok(Snapshot { mu, u0: expand_free(&self.space, &u), p, s, newton_iters: iters, converged, updates })
    }

    /// Riesz representative of b(p, ·) in the homogeneous velocity space.
    pub fn supremizer(&self, b: &SparseMatrix, p: &[f64]) -> Result<Vec<f64>> {
        let rhs = b.tr_matvec(p);
        let s = self.gram_lu.solve(&rhs)?;
        Ok(expand_free(&self.space, &s))
    }

    /// u₀ + u∞ℓ.
    pub fn total_velocity(&self, u0: &[f64], uinf: f64) -> Vec<f64> {
        u0.iter().zip(&self.lift).map(|(a, l)| a + uinf * l).collect()
    }

    /// Force of the fluid on the airfoil, ∮ σn ds with n pointing into the
    /// fluid and σ = −pI + ν(∇u + ∇uᵀ).
    pub fn forces(&self, mu: ParameterPoint, u0: &[f64], p: &[f64]) -> [f64; 2] {
        let u = self.total_velocity(u0, mu.uinf);
        let sp = &self.space;
        let (gx, gw) = gauss_legendre(5, 0.0, 1.0);
        let mut f = [0.0; 2];
        for i in 0..sp.mesh.n_circ() {
            let e = sp.mesh.element_index(i, 0);
            for (t, w) in gx.iter().zip(&gw) {
                let pb = sp.eval_basis(i, 0, *t, 0.0);
                let mut jet = [0.0; 6];
                for (bj, &d) in pb.vel_jets.iter().zip(sp.elem_vel_dofs(e)) {
                    for s in 0..6 {
                        jet[s] += u[d] * bj[s];
                    }
                }
                let pv: f64 = pb.pres_vals.iter().zip(sp.elem_pres_dofs(e)).map(|(v, &d)| v * p[d]).sum();
                let ex = self.geom.exact(mu.phi, pb.map.x);
                let (_, g) = physical_value_grad(self.mode, &ex, &jet);
                let tang = ex.j * Vec2::new(pb.map.jac[(0, 0)], pb.map.jac[(1, 0)]);
                let ds = tang.norm();
                let mut n = Vec2::new(tang[1], -tang[0]) / ds;
                // airfoil sits around the origin, the fluid outside
                if n.dot(&ex.x) < 0.0 {
                    n = -n;
                }
                for a in 0..2 {
                    let mut tr = -pv * n[a];
                    for b in 0..2 {
                        tr += self.nu * (g[a][b] + g[b][a]) * n[b];
                    }
                    f[a] += w * ds * tr;
                }
            }
        }
        f
    }

    /// Max |∇·u| of a velocity field at the quadrature points, physical domain at φ.
    pub fn max_divergence(&self, phi: f64, u: &[f64]) -> f64 {
        let jets = self.space.field_jets(u);
        self.space
            .quad_points()
            .iter()
            .zip(&jets)
            .map(|(q, j)| {
                let ex = self.geom.exact(phi, q.xh);
                crate::spaces::physical_divergence(self.mode, &ex, j).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Max deviation of the velocity dofs on inflow edges from (u∞, 0) for
    /// Taylor-Hood nodes, i.e. nodal trace error.
    pub fn inflow_trace_error(&self, u: &[f64], uinf: f64) -> f64 {
        let mut worst = 0.0f64;
        if self.space.kind != SpaceKind::TaylorHood {
            return f64::NAN;
        }
        for (d, c) in self.space.dof_class().iter().enumerate() {
            if *c == DofClass::Dirichlet && self.space.dirichlet_unit()[d] != 0.0 {
                worst = worst.max((u[d] - uinf).abs()).max(u[d + 1].abs());
            }
        }
        worst
    }

    pub fn inflow_edges(&self) -> usize {
        self.space.mesh.outer_tags.iter().filter(|t| **t == BoundaryTag::Inflow).count()
    }
}

/// Snapshot set at a parameter sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    pub kind: SpaceKind,
    pub mode: PushMode,
    pub grid: Vec<ParameterPoint>,
    pub snapshots: Vec<Snapshot>,
}

impl Ensemble {
    pub fn converged(&self) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.iter().filter(|s| s.converged)
    }

    pub fn n_converged(&self) -> usize {
        self.converged().count()
    }
}

/// Solves every grid point in parallel. `on_snapshot` is called as each
/// solve finishes (for incremental persistence); failures are logged and
/// skipped.
pub fn generate_ensemble<F>(problem: &HifiProblem, grid: &[ParameterPoint], on_snapshot: F) -> Ensemble
where
    F: Fn(usize, &Snapshot) + Sync,
{
    let snaps: Vec<Option<Snapshot>> = grid
        .par_iter()
        .enumerate()
        .map(|(k, mu)| match problem.solve(*mu) {
            Ok(s) => {
                on_snapshot(k, &s);
                Some(s)
            }
            Err(e) => {
                log::warn!("snapshot {k} at phi = {:.3} deg, uinf = {:.3} failed: {e}", mu.phi_degrees(), mu.uinf);
                None
            }
        })
        .collect();
    let mut snapshots = Vec::with_capacity(grid.len());
    for (k, s) in snaps.into_iter().enumerate() {
        snapshots.push(s.unwrap_or_else(|| Snapshot {
            mu: grid[k],
            u0: vec![],
            p: vec![],
            s: vec![],
            newton_iters: 0,
            converged: false,
            updates: vec![],
        }));
    }
    Ensemble { kind: problem.space.kind, mode: problem.mode, grid: grid.to_vec(), snapshots }
}
