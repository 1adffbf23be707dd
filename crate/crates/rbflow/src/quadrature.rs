//! Gauss-Legendre rules.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[a, b]`,
/// nodes in increasing order.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = mid - half * z;
        x[n - 1 - i] = mid + half * z;
        w[i] = half * wi;
        w[n - 1 - i] = half * wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// The 3-point rule on `[0, 1]` used for all element integrals.
pub fn element_rule() -> ([f64; 3], [f64; 3]) {
    let s = 0.5 * (0.6f64).sqrt();
    ([0.5 - s, 0.5, 0.5 + s], [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n, -1.0, 2.0);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = (2f64.powi(deg as i32 + 1) - (-1f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                assert!((q - exact).abs() < 1e-11 * exact.abs().max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn element_rule_matches_general_rule() {
        let (x, w) = gauss_legendre(3, 0.0, 1.0);
        let (xe, we) = element_rule();
        for i in 0..3 {
            assert!((x[i] - xe[i]).abs() < 1e-15);
            assert!((w[i] - we[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn nodes_are_interior_and_sorted() {
        let (x, _) = gauss_legendre(7, -35.0, 35.0);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!(x[0] > -35.0 && x[6] < 35.0);
        assert!(x[3].abs() < 1e-12);
    }
}
