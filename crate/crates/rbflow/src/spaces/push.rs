use crate::geometry::{ExactJacobian, Mat2};
use serde::{Deserialize, Serialize};

/// Value and reference gradient of a vector field at a point:
/// `(v₁, v₂, ∂₁v₁, ∂₂v₁, ∂₁v₂, ∂₂v₂)`.
pub type Jet = [f64; 6];
pub type JetMatrix = [[f64; 6]; 6];

/// Slot of ∂_n v_m in a [`Jet`].
#[inline]
pub const fn grad_slot(m: usize, n: usize) -> usize {
    2 + 2 * m + n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PushMode {
    /// û ↦ û∘χ
    Canonical,
    /// û ↦ J(û∘χ), using det J = 1
    Piola,
}

/// L such that the jet of U = M û is L·jet(û), where
/// ∇̂U = M ∇̂û + Σ_n (∂_n M û) e_nᵀ.
pub fn jet_transform(m: &Mat2, dm: &[Mat2; 2]) -> JetMatrix {
    let mut l = [[0.0; 6]; 6];
    for a in 0..2 {
        for k in 0..2 {
            l[a][k] = m[(a, k)];
            for n in 0..2 {
                l[grad_slot(a, n)][k] = dm[n][(a, k)];
                l[grad_slot(a, n)][grad_slot(k, n)] = m[(a, k)];
            }
        }
    }
    l
}

pub fn apply(l: &JetMatrix, v: &Jet) -> Jet {
    let mut out = [0.0; 6];
    for (o, row) in out.iter_mut().zip(l) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

/// The push matrix M (and derivatives) of a mode at the exact map.
pub fn push_matrices(mode: PushMode, ex: &ExactJacobian) -> (Mat2, [Mat2; 2]) {
    match mode {
        PushMode::Canonical => (Mat2::identity(), [Mat2::zeros(); 2]),
        PushMode::Piola => (ex.j, ex.dj),
    }
}

/// Physical value and gradient ∇ₓu = ∇̂U J⁻¹ of a pushed reference jet.
pub fn physical_value_grad(mode: PushMode, ex: &ExactJacobian, jet: &Jet) -> ([f64; 2], [[f64; 2]; 2]) {
    let (m, dm) = push_matrices(mode, ex);
    let u = apply(&jet_transform(&m, &dm), jet);
    let mut g = [[0.0; 2]; 2];
    for a in 0..2 {
        for n in 0..2 {
            g[a][n] = (0..2).map(|k| u[grad_slot(a, k)] * ex.jinv[(k, n)]).sum();
        }
    }
    ([u[0], u[1]], g)
}

pub fn physical_divergence(mode: PushMode, ex: &ExactJacobian, jet: &Jet) -> f64 {
    let (_, g) = physical_value_grad(mode, ex, jet);
    g[0][0] + g[1][1]
}
