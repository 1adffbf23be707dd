//! One-dimensional bases used by the tensor-product spaces.

/// Values and first derivatives of the p+1 nonzero B-splines on knot span
/// `span` (knots[span] ≤ u < knots[span+1]), ordered N_{span−p} … N_{span}.
pub fn basis_with_derivs(knots: &[f64], p: usize, span: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let vals: Vec<f64> = (0..=p).map(|r| ndu[r][p]).collect();
    let ders: Vec<f64> = if p == 0 {
        vec![0.0]
    } else {
        (0..=p)
            .map(|r| {
                let mut d = 0.0;
                if r >= 1 {
                    d += ndu[r - 1][p - 1] / ndu[p][r - 1];
                }
                if r < p {
                    d -= ndu[r][p - 1] / ndu[p][r];
                }
                d * p as f64
            })
            .collect()
    };
    (vals, ders)
}

/// Open uniform quadratic knot vector on [0, n]: n + 2 functions.
pub fn open_quadratic_knots(n: usize) -> Vec<f64> {
    let mut k = vec![0.0, 0.0];
    k.extend((0..=n).map(|i| i as f64));
    k.extend([n as f64, n as f64]);
    k
}

/// Local quadratic periodic B-splines on one element (functions k = i−1, i, i+1).
pub fn periodic_quadratic(t: f64) -> ([f64; 3], [f64; 3]) {
    let m = 1.0 - t;
    ([0.5 * m * m, 0.5 * (-2.0 * t * t + 2.0 * t + 1.0), 0.5 * t * t], [-m, 1.0 - 2.0 * t, t])
}

/// Linear hats at the two element ends.
pub fn hat(t: f64) -> ([f64; 2], [f64; 2]) {
    ([1.0 - t, t], [-1.0, 1.0])
}

/// Quadratic Lagrange on nodes 0, ½, 1.
pub fn lagrange_quadratic(t: f64) -> ([f64; 3], [f64; 3]) {
    (
        [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)],
        [4.0 * t - 3.0, -8.0 * t + 4.0, 4.0 * t - 1.0],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_quadratic_partition_of_unity_and_derivatives() {
        let n = 5;
        let k = open_quadratic_knots(n);
        assert_eq!(k.len(), n + 5);
        for span_el in 0..n {
            for &t in &[0.0, 0.2, 0.5, 0.93] {
                let u = span_el as f64 + t;
                let (v, d) = basis_with_derivs(&k, 2, span_el + 2, u);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                assert!(d.iter().sum::<f64>().abs() < 1e-13);
                let h = 1e-7;
                let (vp, _) = basis_with_derivs(&k, 2, span_el + 2, u + h);
                let (vm, _) = basis_with_derivs(&k, 2, span_el + 2, (u - h).max(span_el as f64));
                let hh = u + h - (u - h).max(span_el as f64);
                for r in 0..3 {
                    assert!(((vp[r] - vm[r]) / hh - d[r]).abs() < 1e-6);
                }
            }
        }
        // clamped ends
        let (v, _) = basis_with_derivs(&k, 2, 2, 0.0);
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn periodic_quadratic_is_c1() {
        let (v0, d0) = periodic_quadratic(0.0);
        let (v1, d1) = periodic_quadratic(1.0);
        // function k on element i at t=1 equals function k on element i+1 at t=0 (shifted slot)
        assert!((v1[1] - v0[0]).abs() < 1e-15 && (v1[2] - v0[1]).abs() < 1e-15);
        assert!((d1[1] - d0[0]).abs() < 1e-15 && (d1[2] - d0[1]).abs() < 1e-15);
        assert!((v0.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lagrange_nodal() {
        for (k, &t) in [0.0, 0.5, 1.0].iter().enumerate() {
            let (v, _) = lagrange_quadratic(t);
            for (j, vj) in v.iter().enumerate() {
                assert!((vj - if j == k { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }
}
