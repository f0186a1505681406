//! Quadrature rules: Gauss-Legendre on intervals, Gauss-Lobatto point sets,
//! and symmetric triangle rules, all with strictly positive weights.

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_n`, found by Newton
/// iteration from Chebyshev initial guesses. Exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one quadrature point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Gauss-Legendre rule scaled to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Lobatto points on `[0, 1]` for polynomial degree `p` (`p + 1` points
/// including both endpoints). Degree 0 uses the interval midpoint.
pub fn gauss_lobatto_01(p: usize) -> Vec<f64> {
    match p {
        0 => vec![0.5],
        1 => vec![0.0, 1.0],
        2 => vec![0.0, 0.5, 1.0],
        3 => {
            let a = 1.0 / 5f64.sqrt();
            vec![0.0, 0.5 * (1.0 - a), 0.5 * (1.0 + a), 1.0]
        }
        4 => {
            let a = (3.0 / 7.0f64).sqrt();
            vec![0.0, 0.5 * (1.0 - a), 0.5, 0.5 * (1.0 + a), 1.0]
        }
        5 => {
            let s = (7.0f64).sqrt();
            let a = ((7.0 + 2.0 * s) / 21.0).sqrt();
            let b = ((7.0 - 2.0 * s) / 21.0).sqrt();
            vec![
                0.0,
                0.5 * (1.0 - a),
                0.5 * (1.0 - b),
                0.5 * (1.0 + b),
                0.5 * (1.0 + a),
                1.0,
            ]
        }
        _ => panic!("Gauss-Lobatto points only tabulated up to degree 5"),
    }
}

/// A quadrature rule on the reference triangle `{(x, y): x, y >= 0, x + y <= 1}`.
/// Weights sum to 1/2, the reference area.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Symmetric positive-weight rule exact for polynomials of (at least) the
/// given total degree. Degrees above 5 fall back to a collapsed-square
/// tensor rule of the requested exactness.
pub fn triangle_rule(degree: usize) -> TriangleRule {
    // (barycentric orbit generator, weight) pairs, weights w.r.t. unit total.
    let orbits: Option<Vec<([f64; 3], f64)>> = match degree {
        0 | 1 => Some(vec![([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)]),
        2 => Some(vec![([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0)]),
        3 | 4 => Some(vec![
            (
                [
                    1.0 - 2.0 * 0.445_948_490_915_965,
                    0.445_948_490_915_965,
                    0.445_948_490_915_965,
                ],
                0.223_381_589_678_011,
            ),
            (
                [
                    1.0 - 2.0 * 0.091_576_213_509_771,
                    0.091_576_213_509_771,
                    0.091_576_213_509_771,
                ],
                0.109_951_743_655_322,
            ),
        ]),
        5 => {
            let s15 = 15f64.sqrt();
            let a1 = (6.0 + s15) / 21.0;
            let a2 = (6.0 - s15) / 21.0;
            Some(vec![
                ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
                ([1.0 - 2.0 * a1, a1, a1], (155.0 + s15) / 1200.0),
                ([1.0 - 2.0 * a2, a2, a2], (155.0 - s15) / 1200.0),
            ])
        }
        _ => None,
    };

    if let Some(orbits) = orbits {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (bary, w) in orbits {
            for perm in symmetric_orbit(bary) {
                points.push([perm[1], perm[2]]);
                weights.push(w * 0.5);
            }
        }
        TriangleRule { points, weights }
    } else {
        duffy_rule(degree)
    }
}

fn symmetric_orbit(b: [f64; 3]) -> Vec<[f64; 3]> {
    let perms = [
        [b[0], b[1], b[2]],
        [b[1], b[2], b[0]],
        [b[2], b[0], b[1]],
        [b[0], b[2], b[1]],
        [b[2], b[1], b[0]],
        [b[1], b[0], b[2]],
    ];
    let mut out: Vec<[f64; 3]> = Vec::new();
    for p in perms {
        if !out
            .iter()
            .any(|q| (q[0] - p[0]).abs() + (q[1] - p[1]).abs() + (q[2] - p[2]).abs() < 1e-14)
        {
            out.push(p);
        }
    }
    out
}

/// Collapsed-square (Duffy) tensor rule: maps `(u, v)` on the unit square to
/// `(u, v (1 - u))` with Jacobian `1 - u`. The extra Jacobian degree is
/// absorbed by one more point in `u`.
fn duffy_rule(degree: usize) -> TriangleRule {
    let n = degree / 2 + 2;
    let (xu, wu) = gauss_legendre_on(n, 0.0, 1.0);
    let (xv, wv) = gauss_legendre_on(n, 0.0, 1.0);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (u, cu) in xu.iter().zip(&wu) {
        for (v, cv) in xv.iter().zip(&wv) {
            points.push([*u, v * (1.0 - u)]);
            weights.push(cu * cv * (1.0 - u));
        }
    }
    TriangleRule { points, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral_triangle(p: u32, q: u32) -> f64 {
        // int_T x^p y^q = p! q! / (p + q + 2)!
        let fact = |m: u32| (1..=m).map(|v| v as f64).product::<f64>().max(1.0);
        fact(p) * fact(q) / fact(p + q + 2)
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=12 {
            let (xs, ws) = gauss_legendre(n);
            for deg in 0..=(2 * n - 1) {
                let approx: f64 = xs
                    .iter()
                    .zip(&ws)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 0 {
                    2.0 / (deg as f64 + 1.0)
                } else {
                    0.0
                };
                assert!(
                    (approx - exact).abs() < 1e-13,
                    "n={n} deg={deg}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn gauss_legendre_weights_positive() {
        for n in 1..=16 {
            let (_, ws) = gauss_legendre(n);
            assert!(ws.iter().all(|w| *w > 0.0));
            let total: f64 = ws.iter().sum();
            assert!((total - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn lobatto_points_contain_endpoints() {
        for p in 1..=5 {
            let pts = gauss_lobatto_01(p);
            assert_eq!(pts.len(), p + 1);
            assert_eq!(pts[0], 0.0);
            assert_eq!(*pts.last().unwrap(), 1.0);
            for w in pts.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn triangle_rules_exact_and_positive() {
        for degree in 0..=10 {
            let rule = triangle_rule(degree);
            assert!(rule.weights.iter().all(|w| *w > 0.0), "degree {degree}");
            for p in 0..=degree as u32 {
                for q in 0..=(degree as u32 - p) {
                    let approx: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(x, w)| w * x[0].powi(p as i32) * x[1].powi(q as i32))
                        .sum();
                    let exact = monomial_integral_triangle(p, q);
                    assert!(
                        (approx - exact).abs() < 1e-14,
                        "degree {degree}, x^{p} y^{q}: {approx} vs {exact}"
                    );
                }
            }
        }
    }
}
