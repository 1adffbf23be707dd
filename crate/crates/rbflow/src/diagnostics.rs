//! Stability, accuracy and speed diagnostics, and their CSV reports.

use crate::hifi::{Ensemble, HifiProblem, Snapshot};
use crate::linalg::{sorted_symmetric_eigen, SparseMatrix};
use crate::online::{lift_solution, solve, OnlineOptions, SolverKind};
use crate::reduction::{covariance_matrix, snapshot_matrix, ReducedModel};
use crate::spaces::physical_divergence;
use crate::{Error, ParameterPoint, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

/// inf-sup constant of a discrete pair: β² is the smallest eigenvalue of
/// B X⁻¹ Bᵀ q = β² Mp q with B of shape n_p × n_v.
pub fn lbb_constant(b: &DMatrix<f64>, x_gram: &DMatrix<f64>, p_gram: &DMatrix<f64>) -> Result<f64> {
    let (np, nv) = b.shape();
    if x_gram.shape() != (nv, nv) || p_gram.shape() != (np, np) {
        return Err(Error::InvalidInput("Gram matrices do not match the b-block".into()));
    }
    if np > nv {
        return Ok(0.0);
    }
    let xc = x_gram.clone().cholesky().ok_or_else(|| Error::Singular("velocity Gram matrix is not SPD".into()))?;
    let pc = p_gram.clone().cholesky().ok_or_else(|| Error::Singular("pressure Gram matrix is not SPD".into()))?;
    // Lp⁻¹ B Lx⁻ᵀ, whose smallest singular value is β
    let lx = xc.l();
    let lp = pc.l();
    let t = lx.solve_lower_triangular(&b.transpose()).ok_or_else(|| Error::Singular("velocity Gram factor".into()))?;
    let m = lp.solve_lower_triangular(&t.transpose()).ok_or_else(|| Error::Singular("pressure Gram factor".into()))?;
    let s = &m * m.transpose();
    let (eigs, _) = sorted_symmetric_eigen(&s);
    Ok(eigs.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Reduced inf-sup constant at μ, on V (unstabilized) or V ⊕ S.
pub fn lbb_reduced(rm: &ReducedModel, mu: ParameterPoint, stabilized: bool) -> Result<f64> {
    let nx = if stabilized { rm.mw() } else { rm.mv };
    let mut b = DMatrix::zeros(rm.mp, nx);
    for t in &rm.b {
        b += t.op.columns(0, nx) * t.coeff.eval(mu);
    }
    let x = rm.gram_w.view((0, 0), (nx, nx)).clone_owned();
    lbb_constant(&b, &x, &rm.gram_p)
}

/// Minimum over a parameter sample.
pub fn lbb_min(rm: &ReducedModel, sample: &[ParameterPoint], stabilized: bool) -> Result<f64> {
    let mut best = f64::INFINITY;
    for mu in sample {
        best = best.min(lbb_reduced(rm, *mu, stabilized)?);
    }
    Ok(best)
}

/// Smallest principal angle in degrees between span(va) and span(vb) under
/// the inner product `gram`.
pub fn principal_angle(va: &DMatrix<f64>, vb: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<f64> {
    if va.ncols() == 0 || vb.ncols() == 0 {
        return Err(Error::InvalidInput("principal angle needs nonempty bases".into()));
    }
    let orth = |v: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let g = v.transpose() * gram * v;
        let c = g.cholesky().ok_or_else(|| Error::InvalidInput("basis is rank deficient in the Gram inner product".into()))?;
        // V L⁻ᵀ is Gram-orthonormal
        let lt = c.l().transpose();
        let q = lt
            .solve_upper_triangular(&v.transpose())
            .ok_or_else(|| Error::Singular("orthonormalization".into()))?;
        Ok(q.transpose())
    };
    let qa = orth(va)?;
    let qb = orth(vb)?;
    let cross = qa.transpose() * gram * qb;
    let smax = cross.singular_values().max().min(1.0);
    Ok(smax.acos().to_degrees().clamp(0.0, 90.0))
}

/// Angle between the velocity and supremizer modes of a stabilized model.
pub fn velocity_supremizer_angle(rm: &ReducedModel) -> Result<f64> {
    let mw = rm.mw();
    let id = DMatrix::<f64>::identity(mw, mw);
    principal_angle(&id.columns(0, rm.mv).clone_owned(), &id.columns(rm.mv, rm.ms).clone_owned(), &rm.gram_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub phi_deg: f64,
    /// mean over modes of ‖∇·u‖_L2
    pub mean: f64,
    pub max: f64,
    /// largest pointwise |∇·u| over modes and quadrature points
    pub max_pointwise: f64,
}

/// L2 norm and max pointwise value of the physical divergence of a field.
pub fn field_divergence(problem: &HifiProblem, phi: f64, u: &[f64]) -> (f64, f64) {
    let sp = &problem.space;
    let jets = sp.field_jets(u);
    let mut l2 = 0.0;
    let mut mx = 0.0f64;
    for (q, j) in sp.quad_points().iter().zip(&jets) {
        let ex = problem.geom.exact(phi, q.xh);
        let d = physical_divergence(problem.mode, &ex, j);
        l2 += q.weight * d * d;
        mx = mx.max(d.abs());
    }
    (l2.sqrt(), mx)
}

/// Divergence of the first n velocity modes pushed to the domain at each angle.
pub fn divergence_study(rm: &ReducedModel, problem: &HifiProblem, angles_deg: &[f64], n_modes: usize) -> Vec<DivergenceRow> {
    let n = n_modes.min(rm.mv);
    angles_deg
        .iter()
        .map(|&deg| {
            let vals: Vec<(f64, f64)> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let u: Vec<f64> = rm.vel_basis.column(j).iter().copied().collect();
                    field_divergence(problem, deg.to_radians(), &u)
                })
                .collect();
            DivergenceRow {
                phi_deg: deg,
                mean: vals.iter().map(|v| v.0).sum::<f64>() / n.max(1) as f64,
                max: vals.iter().map(|v| v.0).fold(0.0, f64::max),
                max_pointwise: vals.iter().map(|v| v.1).fold(0.0, f64::max),
            }
        })
        .collect()
}

/// High-fidelity references on a test grid; failed solves are None.
pub fn reference_solutions(problem: &HifiProblem, grid: &[ParameterPoint]) -> Vec<Option<Snapshot>> {
    grid.par_iter()
        .map(|mu| match problem.solve(*mu) {
            Ok(s) if s.converged => Some(s),
            Ok(_) => None,
            Err(e) => {
                log::warn!("reference at phi = {:.3} deg failed: {e}", mu.phi_degrees());
                None
            }
        })
        .collect()
}

fn gram_norm(g: &SparseMatrix, v: &[f64]) -> f64 {
    g.inner(v, v).max(0.0).sqrt()
}

/// Relative H1-semi velocity error of u₀ and relative L2 pressure error.
pub fn relative_errors(problem: &HifiProblem, rm: &ReducedModel, sol: &crate::online::ReducedSolution, reference: &Snapshot) -> (f64, f64) {
    let (u, p) = lift_solution(rm, sol);
    let du: Vec<f64> = u.iter().zip(&rm.lift).zip(&reference.u0).map(|((a, l), r)| a - sol.mu.uinf * l - r).collect();
    let dp: Vec<f64> = p.iter().zip(&reference.p).map(|(a, r)| a - r).collect();
    let eu = gram_norm(&problem.gram, &du) / gram_norm(&problem.gram, &reference.u0).max(1e-300);
    let ep = gram_norm(&problem.pressure_gram, &dp) / gram_norm(&problem.pressure_gram, &reference.p).max(1e-300);
    (eu, ep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub method: String,
    pub m: usize,
    pub solver: String,
    pub mean_vel_err: f64,
    pub mean_p_err: f64,
    pub expected_err: f64,
    pub mean_time_s: f64,
    pub converged: usize,
    pub total: usize,
}

/// Error and timing of one solver over a test grid. Queries are run
/// sequentially; the first one is a warm-up and excluded from the timing.
pub fn error_study(
    problem: &HifiProblem,
    rm: &ReducedModel,
    solver: SolverKind,
    grid: &[ParameterPoint],
    refs: &[Option<Snapshot>],
    opts: &OnlineOptions,
) -> StudyRow {
    let mut errs = Vec::new();
    let mut times = Vec::new();
    let mut converged = 0;
    if let Some(mu) = grid.first() {
        let _ = solve(rm, *mu, solver, opts);
    }
    for (mu, r) in grid.iter().zip(refs) {
        let Ok(sol) = solve(rm, *mu, solver, opts) else { continue };
        if !sol.converged || sol.u_coeffs.iter().chain(&sol.p_coeffs).any(|x| !x.is_finite()) {
            continue;
        }
        converged += 1;
        times.push(sol.times.total());
        if let Some(r) = r {
            errs.push(relative_errors(problem, rm, &sol, r));
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    StudyRow {
        method: rm.kind.short().to_string(),
        m: rm.mv,
        solver: solver.name().to_string(),
        mean_vel_err: mean(&errs.iter().map(|e| e.0).collect::<Vec<_>>()),
        mean_p_err: mean(&errs.iter().map(|e| e.1).collect::<Vec<_>>()),
        expected_err: rm.expected_error(),
        mean_time_s: mean(&times),
        converged,
        total: grid.len(),
    }
}

/// Mean online time of a solver over the converged queries of a grid,
/// warm-up excluded. NaN when nothing converges.
pub fn timing_study(rm: &ReducedModel, solver: SolverKind, grid: &[ParameterPoint], opts: &OnlineOptions) -> f64 {
    if let Some(mu) = grid.first() {
        let _ = solve(rm, *mu, solver, opts);
    }
    let t: Vec<f64> = grid
        .iter()
        .filter_map(|mu| solve(rm, *mu, solver, opts).ok())
        .filter(|s| s.converged)
        .map(|s| s.times.total())
        .collect();
    if t.is_empty() {
        return f64::NAN;
    }
    t.iter().sum::<f64>() / t.len() as f64
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    pub vel: Vec<f64>,
    pub pres: Vec<f64>,
    pub sup: Vec<f64>,
}

/// Covariance eigenvalues of the three fields of an ensemble.
pub fn spectra(problem: &HifiProblem, ens: &Ensemble) -> Result<Spectra> {
    let snaps: Vec<&Snapshot> = ens.converged().collect();
    if snaps.is_empty() {
        return Err(Error::InvalidInput("ensemble has no converged snapshots".into()));
    }
    let eig = |vs: Vec<&[f64]>, g: &SparseMatrix| -> Result<Vec<f64>> {
        let c = covariance_matrix(&snapshot_matrix(&vs), g)?;
        Ok(sorted_symmetric_eigen(&c).0)
    };
    Ok(Spectra {
        vel: eig(snaps.iter().map(|s| s.u0.as_slice()).collect(), &problem.gram)?,
        pres: eig(snaps.iter().map(|s| s.p.as_slice()).collect(), &problem.pressure_gram)?,
        sup: eig(snaps.iter().map(|s| s.s.as_slice()).collect(), &problem.gram)?,
    })
}

/// CSV writer with a leading schema comment line.
pub fn write_csv(path: &Path, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = format!("# rbflow {schema}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| Error::Store(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| Error::Store(e.to_string()))?;
        }
        w.flush()?;
    }
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Shortest round-trip formatting, so reruns are byte-identical.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// Rows of the spectra report: k, then λ per field.
pub fn spectra_rows(s: &Spectra) -> Vec<Vec<String>> {
    let n = s.vel.len().max(s.pres.len()).max(s.sup.len());
    let get = |v: &[f64], k: usize| v.get(k).map(|x| fmt(*x)).unwrap_or_default();
    (0..n).map(|k| vec![(k + 1).to_string(), get(&s.vel, k), get(&s.pres, k), get(&s.sup, k)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_of_simple_subspaces() {
        let g = DMatrix::<f64>::identity(3, 3);
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 2.0, 0.0]);
        assert!(principal_angle(&a, &a, &g).unwrap() < 1e-6);
        assert!((principal_angle(&a, &b, &g).unwrap() - 90.0).abs() < 1e-12);
        let c = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!((principal_angle(&a, &c, &g).unwrap() - 45.0).abs() < 1e-10);
        // Gram-orthogonal though not Euclidean-orthogonal
        let g2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = DMatrix::from_column_slice(2, 1, &[0.5, 1.0]);
        assert!((principal_angle(&x, &y, &g2).unwrap() - 90.0).abs() < 1e-10);
        assert!(principal_angle(&DMatrix::zeros(3, 0), &a, &g).is_err());
    }

    #[test]
    fn lbb_of_single_mode_is_riesz_ratio() {
        // β² = b X⁻¹ bᵀ / m for one pressure mode
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, -3.0]);
        let mp = DMatrix::from_element(1, 1, 4.0);
        let s = x.clone().lu().solve(&b.transpose()).unwrap();
        let want: f64 = ((b * &s)[(0, 0)] / 4.0).sqrt();
        let got = lbb_constant(&DMatrix::from_row_slice(1, 2, &[1.0, -3.0]), &x, &mp).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn lbb_vanishes_for_orthogonal_blocks() {
        let x = DMatrix::<f64>::identity(3, 3);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(lbb_constant(&b, &x, &DMatrix::identity(2, 2)).unwrap() < 1e-14);
        assert_eq!(lbb_constant(&DMatrix::zeros(3, 2), &DMatrix::identity(2, 2), &DMatrix::identity(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1e-1, 1e-2, 1e-3];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.3)).collect();
        assert!((loglog_slope(&x, &y) - 1.3).abs() < 1e-12);
    }
}
