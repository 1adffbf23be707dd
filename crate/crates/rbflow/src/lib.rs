//! Reduced-basis solver for steady incompressible flow around a NACA 4-digit
//! airfoil, parametrized by angle of attack and inflow speed.
//!
//! The offline stage builds a high-fidelity discretization (Taylor-Hood or a
//! divergence-conforming spline pair), an affine decomposition of all forms
//! under the rotating-annulus domain map, a snapshot ensemble and POD bases,
//! and projects everything into a [`reduction::ReducedModel`]. The online stage
//! in [`online`] solves the small nonlinear systems without any quadrature.

pub mod affine;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forms;
pub mod geometry;
pub mod hifi;
pub mod linalg;
pub mod online;
pub mod pipeline;
pub mod quadrature;
pub mod reduction;
pub mod spaces;
pub mod store;

pub use error::{Error, Result};

/// One point μ = (φ, u∞) of the parameter box. φ is in radians.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParameterPoint {
    pub phi: f64,
    pub uinf: f64,
}

impl ParameterPoint {
    pub fn new(phi: f64, uinf: f64) -> Self {
        Self { phi, uinf }
    }

    pub fn from_degrees(phi_deg: f64, uinf: f64) -> Self {
        Self { phi: phi_deg.to_radians(), uinf }
    }

    pub fn phi_degrees(&self) -> f64 {
        self.phi.to_degrees()
    }
}

/// Rectangle of admissible parameters, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParameterBox {
    pub phi_min: f64,
    pub phi_max: f64,
    pub uinf_min: f64,
    pub uinf_max: f64,
}

impl Default for ParameterBox {
    fn default() -> Self {
        Self { phi_min: (-35f64).to_radians(), phi_max: 35f64.to_radians(), uinf_min: 1.0, uinf_max: 20.0 }
    }
}

impl ParameterBox {
    pub fn contains(&self, mu: ParameterPoint) -> bool {
        let tol = 1e-12;
        mu.phi >= self.phi_min - tol && mu.phi <= self.phi_max + tol && mu.uinf >= self.uinf_min - tol && mu.uinf <= self.uinf_max + tol
    }

    /// Largest |φ| in the box.
    pub fn phi_abs_max(&self) -> f64 {
        self.phi_min.abs().max(self.phi_max.abs())
    }

    /// Tensor Gauss-Legendre points, φ-major.
    pub fn gauss_grid(&self, n_phi: usize, n_uinf: usize) -> Vec<ParameterPoint> {
        let (p, _) = quadrature::gauss_legendre(n_phi, self.phi_min, self.phi_max);
        let (u, _) = quadrature::gauss_legendre(n_uinf, self.uinf_min, self.uinf_max);
        p.iter().flat_map(|&phi| u.iter().map(move |&uinf| ParameterPoint::new(phi, uinf))).collect()
    }

    /// Tensor grid of equispaced points including the corners, φ-major.
    pub fn uniform_grid(&self, n_phi: usize, n_uinf: usize) -> Vec<ParameterPoint> {
        let lin = |a: f64, b: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                vec![0.5 * (a + b)]
            } else {
                (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
            }
        };
        let p = lin(self.phi_min, self.phi_max, n_phi);
        let u = lin(self.uinf_min, self.uinf_max, n_uinf);
        p.iter().flat_map(|&phi| u.iter().map(move |&uinf| ParameterPoint::new(phi, uinf))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_grid_avoids_corners() {
        let b = ParameterBox::default();
        let g = b.gauss_grid(7, 7);
        assert_eq!(g.len(), 49);
        for mu in &g {
            assert!(b.contains(*mu));
            assert!(mu.phi > b.phi_min && mu.phi < b.phi_max && mu.uinf > b.uinf_min && mu.uinf < b.uinf_max);
        }
    }

    #[test]
    fn uniform_grid_hits_corners() {
        let b = ParameterBox::default();
        let g = b.uniform_grid(5, 5);
        assert_eq!(g[0], ParameterPoint::new(b.phi_min, b.uinf_min));
        assert_eq!(g[24], ParameterPoint::new(b.phi_max, b.uinf_max));
    }
}
