//! Airfoil profile, the structured O-mesh and its smooth parametrization, and
//! the radius-dependent rotation map with its Jacobian algebra.

mod airfoil;
mod deform;
mod mesh;

pub use airfoil::{naca_half_thickness, naca_profile, AirfoilProfile};
pub use deform::{
    p_matrix, rotation, DeformedGeometry, ExactJacobian, RotationProfile, SeriesFactors, ThetaEval,
};
pub use mesh::{build_omesh, grading_weight, BoundaryTag, MapEval, MeshParams, OMesh};

pub type Mat2 = nalgebra::Matrix2<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
