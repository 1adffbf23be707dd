//! Online solvers. Everything here is dense algebra on the projected
//! operators; no quadrature is performed.

use crate::linalg::dense_solve;
use crate::reduction::{ReducedModel, ReducedTerm};
use crate::spaces::{PushMode, SpaceKind};
use crate::{Error, ParameterPoint, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// saddle system on velocity and pressure modes (2M)
    CoupledUnstab,
    /// saddle system on velocity, supremizer and pressure modes (3M)
    Coupled,
    /// velocity-only Newton, then pressure recovery on the supremizer rows
    Block,
    /// velocity-only Newton, pressure from the attached modes
    Combined,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::CoupledUnstab => "coupled-unstab",
            SolverKind::Coupled => "coupled",
            SolverKind::Block => "block",
            SolverKind::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coupled-unstab" | "unstabilized" => Some(SolverKind::CoupledUnstab),
            "coupled" | "stabilized" => Some(SolverKind::Coupled),
            "block" => Some(SolverKind::Block),
            "combined" => Some(SolverKind::Combined),
            _ => None,
        }
    }

    pub const ALL: [SolverKind; 4] = [SolverKind::CoupledUnstab, SolverKind::Coupled, SolverKind::Block, SolverKind::Combined];

    /// Whether the solver applies to the model at all.
    pub fn supports(self, rm: &ReducedModel) -> std::result::Result<(), String> {
        match self {
            SolverKind::CoupledUnstab => Ok(()),
            SolverKind::Coupled if rm.ms == 0 => Err("model has no supremizer modes".into()),
            SolverKind::Coupled => Ok(()),
            SolverKind::Block | SolverKind::Combined if rm.kind != SpaceKind::DivConforming || rm.mode != PushMode::Piola => Err(format!(
                "the {} solver needs a divergence-conforming Piola model, got {} / {:?}",
                self.name(),
                rm.kind.name(),
                rm.mode
            )),
            SolverKind::Block if rm.ms != rm.mp => Err("pressure recovery needs as many supremizer as pressure modes".into()),
            SolverKind::Combined if rm.attached.is_none() => Err("model has no attached pressure modes".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub assembly: f64,
    pub solve: f64,
    pub recovery: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.assembly + self.solve + self.recovery
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub mu: ParameterPoint,
    pub solver: SolverKind,
    pub u_coeffs: Vec<f64>,
    pub s_coeffs: Vec<f64>,
    /// coefficients of the pressure modes, or of the attached modes for the combined solver
    pub p_coeffs: Vec<f64>,
    pub newton_iters: usize,
    pub converged: bool,
    pub updates: Vec<f64>,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// smallest admissible LU pivot ratio
    pub pivot_tol: f64,
    /// pivot ratio below which the pressure recovery matrix counts as rank-deficient
    pub recovery_tol: f64,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 50, pivot_tol: 1e-14, recovery_tol: 1e-8 }
    }
}

fn sum_dense(terms: &[ReducedTerm<DMatrix<f64>>], mu: ParameterPoint, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, acc: &mut DMatrix<f64>) {
    for t in terms {
        let w = t.coeff.eval(mu);
        if w != 0.0 {
            let v = t.op.view((rows.start, cols.start), (rows.len(), cols.len()));
            *acc += v * w;
        }
    }
}

fn sum_vec(terms: &[ReducedTerm<DVector<f64>>], mu: ParameterPoint, rows: std::ops::Range<usize>) -> DVector<f64> {
    let mut acc = DVector::zeros(rows.len());
    for t in terms {
        let w = t.coeff.eval(mu);
        if w != 0.0 {
            acc.axpy(w, &t.op.rows(rows.start, rows.len()), 1.0);
        }
    }
    acc
}

/// Weighted reduced operators at μ restricted to unknown modes 0..nx and
/// test modes `tests` of W.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub nx: usize,
    pub t0: usize,
    pub nt: usize,
    pub np: usize,
    /// nt × nx, viscous plus lift-convection terms
    pub lin: DMatrix<f64>,
    /// (j·nx + l)·nt + m
    pub conv: Vec<f64>,
    pub f: DVector<f64>,
    /// np × nx for continuity, only with pressure
    pub b: DMatrix<f64>,
    /// np × nt, b(p, w_m) on the test modes
    pub bt: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl ReducedSystem {
    pub fn assemble(rm: &ReducedModel, mu: ParameterPoint, nx: usize, tests: std::ops::Range<usize>, np: usize) -> Self {
        let mw = rm.mw();
        let nt = tests.len();
        let t0 = tests.start;
        let mut lin = DMatrix::zeros(nt, nx);
        sum_dense(&rm.a, mu, tests.clone(), 0..nx, &mut lin);
        sum_dense(&rm.c0, mu, tests.clone(), 0..nx, &mut lin);
        let mut conv = vec![0.0; nx * nx * nt];
        for t in &rm.c {
            let w = t.coeff.eval(mu);
            if w == 0.0 {
                continue;
            }
            for j in 0..nx {
                for l in 0..nx {
                    let src = &t.op[(j * mw + l) * mw + t0..(j * mw + l) * mw + t0 + nt];
                    let dst = &mut conv[(j * nx + l) * nt..(j * nx + l + 1) * nt];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        let f = sum_vec(&rm.d0, mu, tests.clone());
        let mut b = DMatrix::zeros(np, nx);
        let mut bt = DMatrix::zeros(np, nt);
        let mut g = DVector::zeros(np);
        if np > 0 {
            sum_dense(&rm.b, mu, 0..np, 0..nx, &mut b);
            sum_dense(&rm.b, mu, 0..np, tests.clone(), &mut bt);
            g = sum_vec(&rm.d1, mu, 0..np);
        }
        Self { nx, t0, nt, np, lin, conv, f, b, bt, g }
    }

    /// Momentum residual on the test modes and its Jacobian in x.
    pub fn momentum(&self, x: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let xv = DVector::from_column_slice(x);
        let mut r = &self.lin * &xv - &self.f;
        let mut jac = self.lin.clone();
        for j in 0..self.nx {
            for l in 0..self.nx {
                let v = &self.conv[(j * self.nx + l) * self.nt..(j * self.nx + l + 1) * self.nt];
                let xjxl = x[j] * x[l];
                for m in 0..self.nt {
                    r[m] += xjxl * v[m];
                    jac[(m, j)] += x[l] * v[m];
                    jac[(m, l)] += x[j] * v[m];
                }
            }
        }
        if self.np > 0 && !y.is_empty() {
            r += self.bt.transpose() * DVector::from_column_slice(y);
        }
        (r, jac)
    }

    /// Full residual (momentum; continuity) and Jacobian in (x, y).
    pub fn residual_jacobian(&self, x: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (rm, jm) = self.momentum(x, y);
        if self.np == 0 {
            return (rm, jm);
        }
        let n = self.nt + self.np;
        let mut r = DVector::zeros(n);
        r.rows_mut(0, self.nt).copy_from(&rm);
        r.rows_mut(self.nt, self.np).copy_from(&(&self.b * DVector::from_column_slice(x) - &self.g));
        let mut jac = DMatrix::zeros(n, self.nx + self.np);
        jac.view_mut((0, 0), (self.nt, self.nx)).copy_from(&jm);
        jac.view_mut((0, self.nx), (self.nt, self.np)).copy_from(&self.bt.transpose());
        jac.view_mut((self.nt, 0), (self.np, self.nx)).copy_from(&self.b);
        (r, jac)
    }
}

struct NewtonOutcome {
    x: Vec<f64>,
    y: Vec<f64>,
    iters: usize,
    converged: bool,
    updates: Vec<f64>,
}

fn newton(sys: &ReducedSystem, opts: &OnlineOptions) -> Result<NewtonOutcome> {
    let mut x = vec![0.0; sys.nx];
    let mut y = vec![0.0; sys.np];
    let mut updates = Vec::new();
    let mut iters = 0;
    while iters < opts.max_iters {
        iters += 1;
        let (r, jac) = sys.residual_jacobian(&x, &y);
        let (d, ratio) = dense_solve(&jac, &(-r)).ok_or_else(|| Error::Singular("reduced Jacobian is singular".into()))?;
        if ratio < opts.pivot_tol {
            return Err(Error::Singular(format!("reduced Jacobian pivot ratio {ratio:.3e} below {:.1e}", opts.pivot_tol)));
        }
        for (a, b) in x.iter_mut().zip(d.iter()) {
            *a += b;
        }
        for (a, b) in y.iter_mut().zip(d.iter().skip(sys.nx)) {
            *a += b;
        }
        let dn = d.rows(0, sys.nx).norm();
        updates.push(dn);
        if !dn.is_finite() || dn > 1e12 {
            break;
        }
        if dn <= opts.tol {
            return Ok(NewtonOutcome { x, y, iters, converged: true, updates });
        }
    }
    Ok(NewtonOutcome { x, y, iters, converged: false, updates })
}

/// Residual and Jacobian of the stabilized coupled system at a state
/// (velocity and supremizer coefficients, then pressure coefficients).
pub fn reduced_operator(rm: &ReducedModel, mu: ParameterPoint, x: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let sys = ReducedSystem::assemble(rm, mu, rm.mw(), 0..rm.mw(), rm.mp);
    sys.residual_jacobian(x, y)
}

pub fn solve(rm: &ReducedModel, mu: ParameterPoint, solver: SolverKind, opts: &OnlineOptions) -> Result<ReducedSolution> {
    solver.supports(rm).map_err(Error::InvalidInput)?;
    if !rm.param_box.contains(mu) {
        log::warn!("phi = {:.3} deg, uinf = {:.3} lies outside the trained parameter box", mu.phi_degrees(), mu.uinf);
    }
    let mv = rm.mv;
    let mut times = PhaseTimes::default();
    match solver {
        SolverKind::CoupledUnstab | SolverKind::Coupled => {
            let nx = if solver == SolverKind::CoupledUnstab { mv } else { rm.mw() };
            let t = Instant::now();
            let sys = ReducedSystem::assemble(rm, mu, nx, 0..nx, rm.mp);
            times.assembly = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let out = newton(&sys, opts)?;
            times.solve = t.elapsed().as_secs_f64();
            Ok(ReducedSolution {
                mu,
                solver,
                u_coeffs: out.x[..mv].to_vec(),
                s_coeffs: out.x[mv..].to_vec(),
                p_coeffs: out.y,
                newton_iters: out.iters,
                converged: out.converged,
                updates: out.updates,
                times,
            })
        }
        SolverKind::Block | SolverKind::Combined => {
            let t = Instant::now();
            let sys = ReducedSystem::assemble(rm, mu, mv, 0..mv, 0);
            times.assembly = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let out = newton(&sys, opts)?;
            times.solve = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let p = if solver == SolverKind::Block {
                let rec = ReducedSystem::assemble(rm, mu, mv, mv..rm.mw(), rm.mp);
                let (r, _) = rec.momentum(&out.x, &[]);
                let (p, ratio) = dense_solve(&rec.bt.transpose(), &(-r))
                    .ok_or_else(|| Error::Singular("pressure recovery matrix is singular".into()))?;
                if ratio < opts.recovery_tol {
                    return Err(Error::Singular(format!("pressure recovery matrix is rank-deficient (pivot ratio {ratio:.3e})")));
                }
                p.iter().copied().collect()
            } else {
                reconstruct_pressure(rm, &out.x)?
            };
            times.recovery = t.elapsed().as_secs_f64();
            Ok(ReducedSolution {
                mu,
                solver,
                u_coeffs: out.x,
                s_coeffs: vec![0.0; rm.ms],
                p_coeffs: p,
                newton_iters: out.iters,
                converged: out.converged,
                updates: out.updates,
                times,
            })
        }
    }
}

/// Same coefficients on the attached pressure modes.
pub fn reconstruct_pressure(rm: &ReducedModel, u_coeffs: &[f64]) -> Result<Vec<f64>> {
    if rm.attached.is_none() {
        return Err(Error::InvalidInput("model has no attached pressure modes".into()));
    }
    Ok(u_coeffs.to_vec())
}

/// High-fidelity fields of a reduced solution: u = V x + S s + u∞ℓ and p.
pub fn lift_solution(rm: &ReducedModel, sol: &ReducedSolution) -> (Vec<f64>, Vec<f64>) {
    let mut c = DVector::zeros(rm.mw());
    for (k, v) in sol.u_coeffs.iter().enumerate() {
        c[k] = *v;
    }
    for (k, v) in sol.s_coeffs.iter().enumerate() {
        c[rm.mv + k] = *v;
    }
    let u0 = &rm.vel_basis * c;
    let u = u0.iter().zip(&rm.lift).map(|(a, l)| a + sol.mu.uinf * l).collect();
    let p = if sol.solver == SolverKind::Combined {
        rm.attached.as_ref().expect("combined solution without attached modes") * DVector::from_column_slice(&sol.p_coeffs)
    } else {
        &rm.pres_basis * DVector::from_column_slice(&sol.p_coeffs)
    };
    (u, p.iter().copied().collect())
}

/// Homogeneous part V x + S s only.
pub fn homogeneous_velocity(rm: &ReducedModel, sol: &ReducedSolution) -> Vec<f64> {
    let (u, _) = lift_solution(rm, sol);
    u.iter().zip(&rm.lift).map(|(a, l)| a - sol.mu.uinf * l).collect()
}
