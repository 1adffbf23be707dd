use super::{Mat2, Vec2};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// The constant 90° rotation P, with P² = −I.
pub fn p_matrix() -> Mat2 {
    Mat2::new(0.0, -1.0, 1.0, 0.0)
}

pub fn rotation(a: f64) -> Mat2 {
    let (s, c) = a.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Blend θ(r): 1 inside `r_min`, 0 outside `r_max`, `(1−r̄)³(3r̄+1)` between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationProfile {
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaEval {
    pub theta: f64,
    pub dtheta: f64,
    pub ddtheta: f64,
}

impl Default for RotationProfile {
    fn default() -> Self {
        Self { r_min: 1.0, r_max: 10.0 }
    }
}

impl RotationProfile {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::InvalidInput(format!("rotation profile needs 0 < r_min < r_max, got {r_min}, {r_max}")));
        }
        Ok(Self { r_min, r_max })
    }

    pub fn eval(&self, r: f64) -> ThetaEval {
        if r <= self.r_min {
            return ThetaEval { theta: 1.0, dtheta: 0.0, ddtheta: 0.0 };
        }
        if r >= self.r_max {
            return ThetaEval { theta: 0.0, dtheta: 0.0, ddtheta: 0.0 };
        }
        let l = self.r_max - self.r_min;
        let s = (r - self.r_min) / l;
        let m = 1.0 - s;
        ThetaEval {
            theta: m * m * m * (3.0 * s + 1.0),
            dtheta: -12.0 * s * m * m / l,
            ddtheta: -12.0 * m * (1.0 - 3.0 * s) / (l * l),
        }
    }

    /// (θ, θ')
    pub fn theta(&self, r: f64) -> (f64, f64) {
        let t = self.eval(r);
        (t.theta, t.dtheta)
    }
}

/// Pointwise series matrices at a reference point r̂.
///
/// `r[i] = θⁱPⁱ/i!`, `bminus[i] = R_i + R_{i−1}QP`, `bplus[i] = R_i + R_{i−1}PQ`
/// for `i = 0..=n`, and `dbplus[i][k] = ∂B⁺_i/∂x̂_k`.
#[derive(Debug, Clone)]
pub struct SeriesFactors {
    pub theta: ThetaEval,
    pub q: Mat2,
    pub dq: [Mat2; 2],
    pub d1: Mat2,
    pub d2: Mat2,
    pub r: Vec<Mat2>,
    pub bminus: Vec<Mat2>,
    pub bplus: Vec<Mat2>,
    pub dbplus: Vec<[Mat2; 2]>,
}

/// Exact map data at (φ, r̂): image point, J, ∂J/∂x̂_k and J⁻¹.
#[derive(Debug, Clone, Copy)]
pub struct ExactJacobian {
    pub x: Vec2,
    pub j: Mat2,
    pub dj: [Mat2; 2],
    pub jinv: Mat2,
}

/// The map x = R(φθ(|r̂|)) r̂ together with its truncated series machinery.
///
/// `order` is the index n of the last retained series term: R_i and B±_i are
/// kept for i ≤ n, so the rotation is truncated after φⁿ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformedGeometry {
    pub profile: RotationProfile,
    pub order: usize,
    pub phi_max: f64,
}

pub const MAX_SERIES_ORDER: usize = 25;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl DeformedGeometry {
    pub fn new(profile: RotationProfile, order: usize, phi_max: f64) -> Result<Self> {
        if order == 0 || order > MAX_SERIES_ORDER {
            return Err(Error::InvalidInput(format!("series order must be in 1..={MAX_SERIES_ORDER}, got {order}")));
        }
        if !(phi_max.is_finite() && phi_max >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid phi_max {phi_max}")));
        }
        Ok(Self { profile, order, phi_max })
    }

    /// φ_maxⁿ/n!, the rotation truncation bound.
    pub fn truncation_bound(&self) -> f64 {
        self.phi_max.powi(self.order as i32) / factorial(self.order)
    }

    pub fn accuracy_warning(&self) -> Option<String> {
        let b = self.truncation_bound();
        (b > 1e-8).then(|| {
            format!(
                "series order {} with phi_max {:.2} deg gives truncation bound {:.3e} > 1e-8",
                self.order,
                self.phi_max.to_degrees(),
                b
            )
        })
    }

    pub fn check_phi(&self, phi: f64) -> Result<()> {
        if phi.abs() > self.phi_max * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::Domain(format!(
                "angle {:.4} deg outside the configured range |phi| <= {:.4} deg",
                phi.to_degrees(),
                self.phi_max.to_degrees()
            )));
        }
        Ok(())
    }

    /// Q, D₁, D₂, R_i, B±_i and ∂B⁺_i at r̂.
    pub fn factors(&self, xh: Vec2) -> Result<SeriesFactors> {
        let r = xh.norm();
        if r == 0.0 {
            return Err(Error::Domain("the origin lies outside the annulus domain".into()));
        }
        let th = self.profile.eval(r);
        let p = p_matrix();
        let g = th.dtheta / r;
        let dg = th.ddtheta / r - th.dtheta / (r * r);
        let xxt = xh * xh.transpose();
        let q = xxt * g;
        let mut dq = [Mat2::zeros(); 2];
        for (k, dqk) in dq.iter_mut().enumerate() {
            let ek = if k == 0 { Vec2::new(1.0, 0.0) } else { Vec2::new(0.0, 1.0) };
            *dqk = xxt * (dg * xh[k] / r) + (ek * xh.transpose() + xh * ek.transpose()) * g;
        }
        let d1 = q * p - p * q;
        let d2 = p * q * q * p;
        let n = self.order;
        let mut rs = Vec::with_capacity(n + 1);
        let mut pk = Mat2::identity();
        let mut coef = 1.0;
        for i in 0..=n {
            if i > 0 {
                pk = p * pk;
                coef *= th.theta / i as f64;
            }
            rs.push(pk * coef);
        }
        // ∂R_i/∂x̂_k = θ' (x̂_k/r) P R_{i−1}
        let drs: Vec<[Mat2; 2]> = (0..=n)
            .map(|i| {
                if i == 0 {
                    [Mat2::zeros(); 2]
                } else {
                    let base = p * rs[i - 1] * th.dtheta;
                    [base * (xh[0] / r), base * (xh[1] / r)]
                }
            })
            .collect();
        let qp = q * p;
        let pq = p * q;
        let mut bminus = Vec::with_capacity(n + 1);
        let mut bplus = Vec::with_capacity(n + 1);
        let mut dbplus = Vec::with_capacity(n + 1);
        for i in 0..=n {
            if i == 0 {
                bminus.push(rs[0]);
                bplus.push(rs[0]);
                dbplus.push([Mat2::zeros(); 2]);
            } else {
                bminus.push(rs[i] + rs[i - 1] * qp);
                bplus.push(rs[i] + rs[i - 1] * pq);
                let mut d = [Mat2::zeros(); 2];
                for k in 0..2 {
                    d[k] = drs[i][k] + drs[i - 1][k] * pq + rs[i - 1] * p * dq[k];
                }
                dbplus.push(d);
            }
        }
        Ok(SeriesFactors { theta: th, q, dq, d1, d2, r: rs, bminus, bplus, dbplus })
    }

    /// Exact image point and Jacobian, no range check on φ.
    pub fn exact(&self, phi: f64, xh: Vec2) -> ExactJacobian {
        let r = xh.norm();
        let th = self.profile.eval(r);
        let p = p_matrix();
        let a = phi * th.theta;
        let rot = rotation(a);
        let x = rot * xh;
        if r == 0.0 {
            return ExactJacobian { x, j: rot, dj: [Mat2::zeros(); 2], jinv: rot.transpose() };
        }
        let g = th.dtheta / r;
        let dg = th.ddtheta / r - th.dtheta / (r * r);
        let xxt = xh * xh.transpose();
        let q = xxt * g;
        let pq = p * q;
        let inner = Mat2::identity() + pq * phi;
        let j = rot * inner;
        let mut dj = [Mat2::zeros(); 2];
        for (k, djk) in dj.iter_mut().enumerate() {
            let ek = if k == 0 { Vec2::new(1.0, 0.0) } else { Vec2::new(0.0, 1.0) };
            let dqk = xxt * (dg * xh[k] / r) + (ek * xh.transpose() + xh * ek.transpose()) * g;
            let da = phi * th.dtheta * xh[k] / r;
            *djk = rot * p * inner * da + rot * p * dqk * phi;
        }
        let jinv = (Mat2::identity() - pq * phi) * rot.transpose();
        ExactJacobian { x, j, dj, jinv }
    }

    /// x = χ(r̂) and the exact J, after checking the angle range.
    pub fn domain_map(&self, phi: f64, xh: Vec2) -> Result<(Vec2, Mat2)> {
        self.check_phi(phi)?;
        let e = self.exact(phi, xh);
        Ok((e.x, e.j))
    }

    /// Σ_{i≤n} φⁱB⁺_i, the truncated-series Jacobian.
    pub fn series_jacobian(&self, phi: f64, xh: Vec2) -> Result<Mat2> {
        self.check_phi(phi)?;
        let f = self.factors(xh)?;
        Ok(f.bplus.iter().enumerate().fold(Mat2::zeros(), |acc, (i, b)| acc + b * phi.powi(i as i32)))
    }

    /// Reference point of a physical point: |x| = |r̂| since the map rotates.
    pub fn inverse_map(&self, phi: f64, x: Vec2) -> Vec2 {
        let th = self.profile.eval(x.norm());
        rotation(-phi * th.theta) * x
    }
}
