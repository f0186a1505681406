//! Analytic level-set/velocity scenes. Each scene states its level set
//! function, advection velocity and (optionally) an exact solution once,
//! generically over [`Real`]; gradients, Hessians and time derivatives come
//! from evaluating the same formulas on jets.

use crate::error::{Error, Result};
use crate::jet::{Jet3, Real};

/// A scene definition in generic scalar arithmetic.
pub trait LevelSetScene: Send + Sync + 'static {
    fn name(&self) -> &'static str;

    fn phi<R: Real>(&self, x: R, y: R, t: R) -> R;

    fn velocity<R: Real>(&self, x: R, y: R, t: R) -> [R; 2];

    fn exact<R: Real>(&self, _x: R, _y: R, _t: R) -> Option<R> {
        None
    }

    /// Initial datum; defaults to the exact solution at t = 0.
    fn initial<R: Real>(&self, x: R, y: R) -> Option<R> {
        self.exact(x, y, R::constant(0.0))
    }

    /// Closest point on `Γ(t)`, where available in closed form.
    fn closest_point<R: Real>(&self, _x: R, _y: R, _t: R) -> Option<[R; 2]> {
        None
    }
}

// Object-safe shim monomorphized over f64 and Jet3.
trait SceneDyn: Send + Sync {
    fn name(&self) -> &'static str;
    fn phi_f(&self, x: f64, y: f64, t: f64) -> f64;
    fn phi_j(&self, x: f64, y: f64, t: f64) -> Jet3;
    fn vel_f(&self, x: f64, y: f64, t: f64) -> [f64; 2];
    fn vel_j(&self, x: f64, y: f64, t: f64) -> [Jet3; 2];
    fn exact_f(&self, x: f64, y: f64, t: f64) -> Option<f64>;
    fn exact_j(&self, x: f64, y: f64, t: f64) -> Option<Jet3>;
    fn initial_f(&self, x: f64, y: f64) -> Option<f64>;
    fn closest_f(&self, x: f64, y: f64, t: f64) -> Option<[f64; 2]>;
    fn extension_j(&self, x: f64, y: f64, t: f64) -> Option<Jet3>;
}

impl<S: LevelSetScene> SceneDyn for S {
    fn name(&self) -> &'static str {
        LevelSetScene::name(self)
    }
    fn phi_f(&self, x: f64, y: f64, t: f64) -> f64 {
        self.phi(x, y, t)
    }
    fn phi_j(&self, x: f64, y: f64, t: f64) -> Jet3 {
        let [x, y, t] = Jet3::seed(x, y, t);
        self.phi(x, y, t)
    }
    fn vel_f(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        self.velocity(x, y, t)
    }
    fn vel_j(&self, x: f64, y: f64, t: f64) -> [Jet3; 2] {
        let [x, y, t] = Jet3::seed(x, y, t);
        self.velocity(x, y, t)
    }
    fn exact_f(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        self.exact(x, y, t)
    }
    fn exact_j(&self, x: f64, y: f64, t: f64) -> Option<Jet3> {
        let [x, y, t] = Jet3::seed(x, y, t);
        self.exact(x, y, t)
    }
    fn initial_f(&self, x: f64, y: f64) -> Option<f64> {
        self.initial(x, y)
    }
    fn closest_f(&self, x: f64, y: f64, t: f64) -> Option<[f64; 2]> {
        self.closest_point(x, y, t)
    }
    fn extension_j(&self, x: f64, y: f64, t: f64) -> Option<Jet3> {
        let [x, y, t] = Jet3::seed(x, y, t);
        let [px, py] = self.closest_point(x, y, t)?;
        // Constant extension in spatial normal direction: pin the time
        // argument so the jet only tracks the spatial composition.
        self.exact(px, py, Jet3::constant(t.v))
    }
}

/// Value, spatial gradient, time derivative and spatial Hessian of a scalar
/// field at one space-time point.
#[derive(Debug, Clone, Copy)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub dt: f64,
    pub hess: [[f64; 2]; 2],
}

impl From<Jet3> for ScalarJet {
    fn from(j: Jet3) -> Self {
        ScalarJet {
            value: j.v,
            grad: j.grad_xy(),
            dt: j.dt(),
            hess: j.hess_xy(),
        }
    }
}

/// A scene with evaluators for the level set, velocity and exact solution.
pub struct AnalyticScene {
    inner: Box<dyn SceneDyn>,
}

impl AnalyticScene {
    pub fn new<S: LevelSetScene>(scene: S) -> Self {
        AnalyticScene {
            inner: Box::new(scene),
        }
    }

    pub fn name(&self) -> &'static str {
        self.inner.name()
    }

    pub fn phi(&self, x: [f64; 2], t: f64) -> f64 {
        self.inner.phi_f(x[0], x[1], t)
    }

    pub fn phi_jet(&self, x: [f64; 2], t: f64) -> ScalarJet {
        self.inner.phi_j(x[0], x[1], t).into()
    }

    pub fn grad_phi(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.phi_jet(x, t).grad
    }

    pub fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.inner.vel_f(x[0], x[1], t)
    }

    /// Spatial Jacobian of the velocity, `J[i][j] = dw_i/dx_j`.
    pub fn grad_velocity(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let [wx, wy] = self.inner.vel_j(x[0], x[1], t);
        [wx.grad_xy(), wy.grad_xy()]
    }

    pub fn has_exact(&self) -> bool {
        self.inner.exact_f(0.0, 0.0, 0.0).is_some()
    }

    pub fn exact(&self, x: [f64; 2], t: f64) -> Option<f64> {
        self.inner.exact_f(x[0], x[1], t)
    }

    pub fn exact_jet(&self, x: [f64; 2], t: f64) -> Option<ScalarJet> {
        self.inner.exact_j(x[0], x[1], t).map(Into::into)
    }

    pub fn initial(&self, x: [f64; 2]) -> Result<f64> {
        self.inner
            .initial_f(x[0], x[1])
            .ok_or_else(|| Error::UnsupportedScene("no initial datum".into()))
    }

    pub fn closest_point(&self, x: [f64; 2], t: f64) -> Option<[f64; 2]> {
        self.inner.closest_f(x[0], x[1], t)
    }

    pub fn has_closest_point(&self) -> bool {
        // Probe away from scene centers; the map is defined except at them.
        self.inner.closest_f(0.11, 0.07, 0.0).is_some()
    }

    /// Value and spatial gradient of the constant-in-normal-direction
    /// extension `u^e(x, t) = u(p(x, t), t)` with `p` the closest point.
    pub fn extension_jet(&self, x: [f64; 2], t: f64) -> Option<ScalarJet> {
        self.inner.extension_j(x[0], x[1], t).map(Into::into)
    }

    /// The exact measure factor `sqrt(1 + (w·n)^2)` at a point near `Γ(t)`.
    pub fn alpha_exact(&self, x: [f64; 2], t: f64) -> f64 {
        let g = self.grad_phi(x, t);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let w = self.velocity(x, t);
        let wn = (w[0] * g[0] + w[1] * g[1]) / norm;
        (1.0 + wn * wn).sqrt()
    }
}

/// Shrinking circle moving along a semicircular path, with a tangential
/// velocity component added on top of the transporting normal field.
pub struct MovingCircle;

impl MovingCircle {
    fn center<R: Real>(t: R) -> [R; 2] {
        let pi = R::constant(std::f64::consts::PI);
        [
            (pi * t).cos() / R::constant(2.0),
            (pi * t).sin() / R::constant(2.0),
        ]
    }
    fn radius<R: Real>(t: R) -> R {
        R::constant(0.45) * (-t / R::constant(4.0)).exp()
    }
}

impl LevelSetScene for MovingCircle {
    fn name(&self) -> &'static str {
        "moving_circle"
    }

    fn phi<R: Real>(&self, x: R, y: R, t: R) -> R {
        let [cx, cy] = Self::center(t);
        let (dx, dy) = (x - cx, y - cy);
        (dx * dx + dy * dy).sqrt() - Self::radius(t)
    }

    fn velocity<R: Real>(&self, x: R, y: R, t: R) -> [R; 2] {
        // phi is a signed distance function, so grad phi is the unit radial
        // direction and w_n = -dphi/dt * grad phi transports the zero level.
        let pi = R::constant(std::f64::consts::PI);
        let half = R::constant(0.5);
        let [cx, cy] = Self::center(t);
        let (dx, dy) = (x - cx, y - cy);
        let rho = (dx * dx + dy * dy).sqrt();
        let (nx, ny) = (dx / rho, dy / rho);
        let cdot = [-half * pi * (pi * t).sin(), half * pi * (pi * t).cos()];
        let rdot = -Self::radius(t) / R::constant(4.0);
        let dphi_dt = -(nx * cdot[0] + ny * cdot[1]) - rdot;
        [-dphi_dt * nx + half * ny, -dphi_dt * ny - half * nx]
    }

    fn exact<R: Real>(&self, x: R, y: R, t: R) -> Option<R> {
        Some(y * (x * x + R::constant(1.0)) * (-t).exp())
    }

    fn closest_point<R: Real>(&self, x: R, y: R, t: R) -> Option<[R; 2]> {
        let [cx, cy] = Self::center(t);
        let (dx, dy) = (x - cx, y - cy);
        let rho = (dx * dx + dy * dy).sqrt();
        let r = Self::radius(t);
        Some([cx + r * dx / rho, cy + r * dy / rho])
    }
}

/// Circle of fixed radius centered at the origin with zero velocity and the
/// steady solution `u = x`.
pub struct StationaryCircle {
    pub radius: f64,
}

impl Default for StationaryCircle {
    fn default() -> Self {
        StationaryCircle { radius: 0.5 }
    }
}

impl LevelSetScene for StationaryCircle {
    fn name(&self) -> &'static str {
        "stationary_circle"
    }

    fn phi<R: Real>(&self, x: R, y: R, _t: R) -> R {
        (x * x + y * y).sqrt() - R::constant(self.radius)
    }

    fn velocity<R: Real>(&self, _x: R, _y: R, _t: R) -> [R; 2] {
        [R::constant(0.0), R::constant(0.0)]
    }

    fn exact<R: Real>(&self, x: R, _y: R, _t: R) -> Option<R> {
        Some(x)
    }

    fn closest_point<R: Real>(&self, x: R, y: R, _t: R) -> Option<[R; 2]> {
        let rho = (x * x + y * y).sqrt();
        let r = R::constant(self.radius);
        Some([r * x / rho, r * y / rho])
    }
}

/// Two near-circles approaching along the x-axis that merge into a single
/// closed curve; a topological singularity occurs on the way. Transported by
/// a purely normal velocity; no exact solution is available.
pub struct MergingCircles;

impl MergingCircles {
    fn centers<R: Real>(t: R) -> ([R; 2], [R; 2]) {
        let s = R::constant(1.5) * (t - R::constant(1.0));
        let zero = R::constant(0.0);
        ([s, zero], [-s, zero])
    }

    fn phi_parts<R: Real>(x: R, y: R, t: R) -> (R, [R; 2], R) {
        // Returns (phi, grad phi, dphi/dt) in closed form.
        let (cp, cm) = Self::centers(t);
        let cdot_p = [R::constant(1.5), R::constant(0.0)];
        let cdot_m = [R::constant(-1.5), R::constant(0.0)];
        let two = R::constant(2.0);
        let (dxp, dyp) = (x - cp[0], y - cp[1]);
        let (dxm, dym) = (x - cm[0], y - cm[1]);
        let rp2 = dxp * dxp + dyp * dyp;
        let rm2 = dxm * dxm + dym * dym;
        let (rp4, rm4) = (rp2 * rp2, rm2 * rm2);
        let phi = R::constant(1.0) - R::constant(1.0) / rp2 - R::constant(1.0) / rm2;
        let grad = [
            two * dxp / rp4 + two * dxm / rm4,
            two * dyp / rp4 + two * dym / rm4,
        ];
        let dt = -two * (dxp * cdot_p[0] + dyp * cdot_p[1]) / rp4
            - two * (dxm * cdot_m[0] + dym * cdot_m[1]) / rm4;
        (phi, grad, dt)
    }
}

impl LevelSetScene for MergingCircles {
    fn name(&self) -> &'static str {
        "merging_circles"
    }

    fn phi<R: Real>(&self, x: R, y: R, t: R) -> R {
        Self::phi_parts(x, y, t).0
    }

    fn velocity<R: Real>(&self, x: R, y: R, t: R) -> [R; 2] {
        let (_, g, dt) = Self::phi_parts(x, y, t);
        let g2 = g[0] * g[0] + g[1] * g[1];
        [-dt * g[0] / g2, -dt * g[1] / g2]
    }

    fn initial<R: Real>(&self, x: R, _y: R) -> Option<R> {
        Some(x + R::constant(15.0))
    }
}

/// Level set `a x + b y + c t + d` moving with the compatible normal
/// velocity; handy in tests where everything is exactly representable.
pub struct PlaneScene {
    pub coeffs: [f64; 4],
}

impl LevelSetScene for PlaneScene {
    fn name(&self) -> &'static str {
        "plane"
    }

    fn phi<R: Real>(&self, x: R, y: R, t: R) -> R {
        let [a, b, c, d] = self.coeffs.map(R::constant);
        a * x + b * y + c * t + d
    }

    fn velocity<R: Real>(&self, _x: R, _y: R, _t: R) -> [R; 2] {
        let [a, b, c, _] = self.coeffs;
        let g2 = a * a + b * b;
        [R::constant(-c * a / g2), R::constant(-c * b / g2)]
    }
}

/// Look up one of the named scenes.
pub fn by_name(name: &str) -> Result<AnalyticScene> {
    match name {
        "moving_circle" => Ok(AnalyticScene::new(MovingCircle)),
        "stationary_circle" => Ok(AnalyticScene::new(StationaryCircle::default())),
        "merging_circles" => Ok(AnalyticScene::new(MergingCircles)),
        other => Err(Error::Config(format!("unknown scene '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(f: impl Fn([f64; 2], f64) -> f64, x: [f64; 2], t: f64) -> [f64; 2] {
        let eps = 1e-6;
        let mut g = [0.0; 2];
        for i in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[i] += eps;
            dn[i] -= eps;
            g[i] = (f(up, t) - f(dn, t)) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn moving_circle_satisfies_transport() {
        // dphi/dt + w . grad phi = 0 pointwise.
        let scene = AnalyticScene::new(MovingCircle);
        for &(x, y, t) in &[(0.9, 0.1, 0.0), (0.3, 0.6, 0.4), (-0.2, 0.5, 0.9)] {
            let j = scene.phi_jet([x, y], t);
            let w = scene.velocity([x, y], t);
            let res = j.dt + w[0] * j.grad[0] + w[1] * j.grad[1];
            assert!(res.abs() < 1e-12, "transport residual {res}");
        }
    }

    #[test]
    fn moving_circle_normal_speed_value() {
        // At t = 0, x = (0.95, 0): the center motion is purely tangential
        // there, so w.n equals the radius shrink rate -0.1125.
        let scene = AnalyticScene::new(MovingCircle);
        let g = scene.grad_phi([0.95, 0.0], 0.0);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let w = scene.velocity([0.95, 0.0], 0.0);
        let wn = (w[0] * g[0] + w[1] * g[1]) / norm;
        assert!((wn + 0.1125).abs() < 1e-13, "w.n = {wn}");
    }

    #[test]
    fn merging_circles_satisfies_transport() {
        let scene = AnalyticScene::new(MergingCircles);
        for &(x, y, t) in &[(1.8, 0.4, 0.1), (-0.9, 0.8, 0.5), (1.2, -0.3, 0.95)] {
            let j = scene.phi_jet([x, y], t);
            let w = scene.velocity([x, y], t);
            let res = j.dt + w[0] * j.grad[0] + w[1] * j.grad[1];
            assert!(res.abs() < 1e-11, "transport residual {res}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let scene = AnalyticScene::new(MergingCircles);
        let (x, t) = ([1.7, 0.35], 0.2);
        let j = scene.phi_jet(x, t);
        let fd = fd_grad(|p, t| scene.phi(p, t), x, t);
        assert!((j.grad[0] - fd[0]).abs() < 1e-8);
        assert!((j.grad[1] - fd[1]).abs() < 1e-8);

        let gw = scene.grad_velocity(x, t);
        let fdx = fd_grad(|p, t| scene.velocity(p, t)[0], x, t);
        let fdy = fd_grad(|p, t| scene.velocity(p, t)[1], x, t);
        for j in 0..2 {
            assert!((gw[0][j] - fdx[j]).abs() < 1e-7);
            assert!((gw[1][j] - fdy[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn moving_circle_band_gradient_bounds() {
        // Signed distance: the gradient has unit norm wherever defined.
        let scene = AnalyticScene::new(MovingCircle);
        for &t in &[0.0, 0.33, 0.71, 1.0] {
            for k in 0..200 {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 200.0;
                let r = 0.45 * (-t / 4.0f64).exp() + 0.08 * ((k % 7) as f64 - 3.0) / 3.0;
                let c = [
                    0.5 * (std::f64::consts::PI * t).cos(),
                    0.5 * (std::f64::consts::PI * t).sin(),
                ];
                let x = [c[0] + r * th.cos(), c[1] + r * th.sin()];
                let g = scene.grad_phi(x, t);
                let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closest_point_extension_is_constant_in_normal_direction() {
        let scene = AnalyticScene::new(MovingCircle);
        let t = 0.37;
        let x = [0.71, 0.42];
        let p = scene.closest_point(x, t).unwrap();
        assert!(scene.phi(p, t).abs() < 1e-12);
        let e = scene.extension_jet(x, t).unwrap();
        // Gradient of the extension is orthogonal to the normal direction.
        let n = scene.grad_phi(x, t);
        let dot = e.grad[0] * n[0] + e.grad[1] * n[1];
        assert!(dot.abs() < 1e-11, "normal derivative {dot}");
        assert!((e.value - scene.exact(p, t).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn plane_scene_velocity() {
        let scene = AnalyticScene::new(PlaneScene {
            coeffs: [1.0, 0.0, -1.0, 0.0],
        });
        assert_eq!(scene.velocity([0.3, 0.4], 0.2), [1.0, 0.0]);
        assert!((scene.alpha_exact([0.3, 0.4], 0.2) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn scene_lookup() {
        assert!(by_name("moving_circle").is_ok());
        assert!(by_name("stationary_circle").is_ok());
        assert!(by_name("merging_circles").is_ok());
        assert!(by_name("nope").is_err());
    }
}
