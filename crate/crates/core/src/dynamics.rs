//! Continuous-time vector fields, fixed-step RK4 integration and
//! growth-bound propagation of boxes.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::geometry::HyperRect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite value during integration")]
    NonFinite,
    #[error("integration horizon must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("substep count must be positive")]
    ZeroSubsteps,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
}

/// Right-hand side `dx/dt = f(x, u)` together with the bounds needed to
/// over-approximate its flow.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim_state(&self) -> usize;
    fn dim_input(&self) -> usize;

    /// Writes `f(x, u)` into `dx`.
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Row-major `n x n` matrix `L` with `|df_i/dx_j (x, u)| <= L[i][j]`
    /// for every state `x` under the (held constant) input `u`.
    fn growth_matrix(&self, u: &[f64]) -> Vec<f64>;

    /// Componentwise bound on `|f_i(x, u)|` over all states.
    fn speed_bound(&self, u: &[f64]) -> Vec<f64>;

    /// Coordinates the field is periodic in, as `(dim, lower, upper)`.
    fn periodic_dims(&self) -> Vec<(usize, f64, f64)> {
        Vec::new()
    }
}

/// Kinematic bicycle with rear-wheel velocity `u[0]` and steering angle
/// `u[1]`; the state is `(position_1, position_2, orientation)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bicycle;

impl Bicycle {
    /// Slip angle between orientation and center-of-mass velocity.
    #[inline]
    pub fn slip_angle(steer: f64) -> f64 {
        (steer.tan() / 2.0).atan()
    }
}

pub fn bicycle_f(x: &[f64], u: &[f64]) -> [f64; 3] {
    let alpha = Bicycle::slip_angle(u[1]);
    let scale = u[0] / alpha.cos();
    [
        scale * (alpha + x[2]).cos(),
        scale * (alpha + x[2]).sin(),
        u[0] * u[1].tan(),
    ]
}

impl VectorField for Bicycle {
    fn dim_state(&self) -> usize {
        3
    }

    fn dim_input(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx.copy_from_slice(&bicycle_f(x, u));
    }

    // f depends on x only through x3; |d f_{1,2} / d x3| <= |u1| / cos(alpha)
    fn growth_matrix(&self, u: &[f64]) -> Vec<f64> {
        let c = u[0].abs() / Bicycle::slip_angle(u[1]).cos();
        vec![0.0, 0.0, c, 0.0, 0.0, c, 0.0, 0.0, 0.0]
    }

    fn speed_bound(&self, u: &[f64]) -> Vec<f64> {
        let c = u[0].abs() / Bicycle::slip_angle(u[1]).cos();
        vec![c, c, (u[0] * u[1].tan()).abs()]
    }

    fn periodic_dims(&self) -> Vec<(usize, f64, f64)> {
        vec![(2, -PI, PI)]
    }
}

/// `dx/dt = u` in `n` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub n: usize,
}

impl VectorField for Integrator {
    fn dim_state(&self) -> usize {
        self.n
    }

    fn dim_input(&self) -> usize {
        self.n
    }

    fn eval(&self, _x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx.copy_from_slice(u);
    }

    fn growth_matrix(&self, _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.n * self.n]
    }

    fn speed_bound(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| v.abs()).collect()
    }
}

/// Looks up a built-in vector field by name. `state_dim` sizes fields whose
/// dimension is free.
pub fn builtin_field(name: &str, state_dim: usize) -> Result<Box<dyn VectorField>, DynamicsError> {
    match name {
        "bicycle" => Ok(Box::new(Bicycle)),
        "integrator" => Ok(Box::new(Integrator { n: state_dim })),
        other => Err(DynamicsError::UnknownSystem(other.to_string())),
    }
}

pub const BUILTIN_FIELDS: &[&str] = &["bicycle", "integrator"];

fn wrap_periodic(f: &dyn VectorField, x: &mut [f64]) {
    for (dim, lo, hi) in f.periodic_dims() {
        if lo <= x[dim] && x[dim] < hi {
            continue;
        }
        let w = hi - lo;
        let r = lo + (x[dim] - lo).rem_euclid(w);
        x[dim] = if r >= hi { lo } else { r };
    }
}

fn check_args(f: &dyn VectorField, x0: &[f64], u: &[f64], tau: f64, substeps: usize) -> Result<(), DynamicsError> {
    if !(tau > 0.0) {
        return Err(DynamicsError::NonPositiveTau(tau));
    }
    if substeps == 0 {
        return Err(DynamicsError::ZeroSubsteps);
    }
    if x0.len() != f.dim_state() {
        return Err(DynamicsError::DimensionMismatch {
            expected: f.dim_state(),
            actual: x0.len(),
        });
    }
    if u.len() != f.dim_input() {
        return Err(DynamicsError::DimensionMismatch {
            expected: f.dim_input(),
            actual: u.len(),
        });
    }
    Ok(())
}

/// RK4 stepper. The state is kept as `origin + displacement` with the
/// displacement summed under Kahan compensation, so flows that move by
/// exactly representable amounts land exactly.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    origin: Vec<f64>,
    disp: Vec<f64>,
    comp: Vec<f64>,
}

impl Rk4 {
    fn new(x0: &[f64]) -> Self {
        let n = x0.len();
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            origin: x0.to_vec(),
            disp: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    fn step(&mut self, f: &dyn VectorField, x: &mut [f64], u: &[f64], h: f64) -> Result<(), DynamicsError> {
        let n = x.len();
        f.eval(x, u, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f.eval(&self.tmp, u, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f.eval(&self.tmp, u, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f.eval(&self.tmp, u, &mut self.k4);
        for i in 0..n {
            let inc = h * ((self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]) / 6.0) - self.comp[i];
            let next = self.disp[i] + inc;
            self.comp[i] = (next - self.disp[i]) - inc;
            self.disp[i] = next;
            x[i] = self.origin[i] + self.disp[i];
            if !x[i].is_finite() {
                return Err(DynamicsError::NonFinite);
            }
        }
        Ok(())
    }
}

/// RK4 with `substeps` equal steps over `[0, tau]` under constant `u`.
/// Periodic coordinates are wrapped at the end.
pub fn integrate(f: &dyn VectorField, x0: &[f64], u: &[f64], tau: f64, substeps: usize) -> Result<Vec<f64>, DynamicsError> {
    let mut x = integrate_unwrapped(f, x0, u, tau, substeps)?;
    wrap_periodic(f, &mut x);
    Ok(x)
}

fn integrate_unwrapped(f: &dyn VectorField, x0: &[f64], u: &[f64], tau: f64, substeps: usize) -> Result<Vec<f64>, DynamicsError> {
    check_args(f, x0, u, tau, substeps)?;
    let h = tau / substeps as f64;
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(&x);
    for _ in 0..substeps {
        rk.step(f, &mut x, u, h)?;
    }
    Ok(x)
}

/// Like [`integrate`], returning the state after each substep (the last
/// entry is the endpoint). Every recorded state is wrapped.
pub fn integrate_path(f: &dyn VectorField, x0: &[f64], u: &[f64], tau: f64, substeps: usize) -> Result<Vec<Vec<f64>>, DynamicsError> {
    check_args(f, x0, u, tau, substeps)?;
    let h = tau / substeps as f64;
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(&x);
    let mut out = Vec::with_capacity(substeps);
    for _ in 0..substeps {
        rk.step(f, &mut x, u, h)?;
        let mut w = x.clone();
        wrap_periodic(f, &mut w);
        out.push(w);
    }
    Ok(out)
}

/// Smallest float strictly greater than `v` (for finite non-negative input).
pub fn round_up(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        return v;
    }
    if v == 0.0 {
        return 0.0;
    }
    f64::from_bits(v.to_bits() + 1)
}

/// Upper bound on `exp(L t) r` for non-negative `L` (row-major) and `r`.
///
/// The Taylor series is summed until the terms stop mattering, then the
/// remaining tail is bounded geometrically and added to every component.
pub fn expm_apply(l: &[f64], n: usize, t: f64, r: &[f64]) -> Vec<f64> {
    let mut sum = r.to_vec();
    let norm = (0..n)
        .map(|i| l[i * n..(i + 1) * n].iter().sum::<f64>() * t)
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return sum;
    }
    let mut term = r.to_vec();
    let mut next = vec![0.0; n];
    let mut k = 1usize;
    loop {
        for i in 0..n {
            next[i] = (0..n).map(|j| l[i * n + j] * t * term[j]).sum::<f64>() / k as f64;
        }
        std::mem::swap(&mut term, &mut next);
        let term_max = term.iter().fold(0.0, |m: f64, v| m.max(*v));
        for i in 0..n {
            sum[i] += term[i];
        }
        if term_max == 0.0 {
            break;
        }
        let q = norm / (k + 1) as f64;
        if q < 0.5 {
            let tail = term_max * q / (1.0 - q);
            let scale = sum.iter().fold(0.0, |m: f64, v| m.max(*v));
            if tail <= scale * f64::EPSILON {
                for s in sum.iter_mut() {
                    *s += tail;
                }
                break;
            }
        }
        k += 1;
    }
    // every term is non-negative, so the accumulated rounding error is a
    // small multiple of the sum itself
    let slack = 2.0 * (k + n + 2) as f64 * f64::EPSILON;
    sum.iter().map(|v| v + v * slack).collect()
}

/// Propagated box: the center integrated forward and the inflated radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedBox {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl PropagatedBox {
    pub fn rect(&self) -> HyperRect {
        HyperRect::from_center_radius(&self.center, &self.radius)
    }
}

/// Over-approximates the time-`tau` image of the box `center ± radius`
/// under constant input `u`.
pub fn propagate_box(
    f: &dyn VectorField,
    center: &[f64],
    radius: &[f64],
    u: &[f64],
    tau: f64,
    substeps: usize,
) -> Result<PropagatedBox, DynamicsError> {
    let end = integrate(f, center, u, tau, substeps)?;
    let mut radius = grown_radius(f, radius, u, tau);
    add_float_slack(center, &end, &mut radius);
    Ok(PropagatedBox { center: end, radius })
}

fn grown_radius(f: &dyn VectorField, radius: &[f64], u: &[f64], t: f64) -> Vec<f64> {
    let l = f.growth_matrix(u);
    let n = radius.len();
    if l.iter().all(|v| *v == 0.0) {
        return radius.to_vec();
    }
    expm_apply(&l, n, t, radius).into_iter().map(round_up).collect()
}

/// Widens `radius` by the rounding error two integrated points can pick up
/// relative to each other, which scales with the coordinates, not with the
/// radius. A zero radius describes a single point and is left alone.
fn add_float_slack(start: &[f64], end: &[f64], radius: &mut [f64]) {
    if radius.iter().all(|r| *r == 0.0) {
        return;
    }
    for i in 0..radius.len() {
        let scale = start[i].abs() + end[i].abs() + radius[i];
        radius[i] = round_up(radius[i] + 8.0 * f64::EPSILON * scale);
    }
}

/// Propagated endpoint box plus a box containing every state visited
/// during `[0, tau]` (the flow tube). The tube is not wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeBox {
    pub end: PropagatedBox,
    pub tube: HyperRect,
}

/// Endpoint and flow-tube over-approximation. The tube is the hull of the
/// grown boxes at every substep, padded by half a substep of maximal speed
/// to cover the motion between substeps.
pub fn propagate_tube(
    f: &dyn VectorField,
    center: &[f64],
    radius: &[f64],
    u: &[f64],
    tau: f64,
    substeps: usize,
) -> Result<TubeBox, DynamicsError> {
    check_args(f, center, u, tau, substeps)?;
    let h = tau / substeps as f64;
    let speed = f.speed_bound(u);
    let pad: Vec<f64> = speed.iter().map(|s| round_up(0.5 * h * s)).collect();
    let padded = |c: &[f64], r: &[f64]| {
        let rr: Vec<f64> = r.iter().zip(&pad).map(|(a, b)| round_up(a + b)).collect();
        HyperRect::from_center_radius(c, &rr)
    };
    let mut x = center.to_vec();
    let mut rk = Rk4::new(&x);
    let mut tube = padded(&x, radius);
    let mut r = radius.to_vec();
    for k in 1..=substeps {
        rk.step(f, &mut x, u, h)?;
        r = grown_radius(f, radius, u, h * k as f64);
        add_float_slack(center, &x, &mut r);
        tube = tube.hull(&padded(&x, &r));
    }
    let mut end_center = x;
    wrap_periodic(f, &mut end_center);
    Ok(TubeBox {
        end: PropagatedBox {
            center: end_center,
            radius: r,
        },
        tube,
    })
}
