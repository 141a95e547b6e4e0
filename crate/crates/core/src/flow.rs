//! Lagrangian flow map `gamma(t)` and back-to-labels map `gamma(t)^{-1}`.
//!
//! The forward map is tracked by particles started on the grid; its periodic
//! displacement `gamma(x) - x` is stored unwrapped. The inverse map is the
//! solution `A` of the label transport `d_t A + u . grad A = 0`, stored as the
//! spectral displacement `A(x) - x`.

use crate::error::{Error, Result};
use crate::spectral::checkpoint::{
    expect_magic, read_coefficients, read_header_tail, write_coefficients, write_header_tail,
};
use crate::spectral::interp::interpolate_many;
use crate::spectral::{dealiased_sum_of_products, InterpMethod, ScalarField, SpectralGrid, VectorFieldExact};
use std::io::{Read, Write};

pub const FLOW_MAGIC: &[u8; 5] = b"GSQGF";

/// Sampled area-preserving map of the torus, `x -> x + d(x)`.
#[derive(Clone, Debug)]
pub struct FlowMap {
    grid: SpectralGrid,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowMap {
    pub fn identity(grid: &SpectralGrid) -> Self {
        Self {
            grid: grid.clone(),
            dx: vec![0.0; grid.len()],
            dy: vec![0.0; grid.len()],
        }
    }

    /// Samples a closed-form map. `map` must return unwrapped images so that
    /// `map(x) - x` is periodic.
    pub fn from_fn(grid: &SpectralGrid, map: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let pts = grid.points();
        let (dx, dy) = pts
            .iter()
            .map(|p| {
                let q = map(p[0], p[1]);
                (q[0] - p[0], q[1] - p[1])
            })
            .unzip();
        Self { grid: grid.clone(), dx, dy }
    }

    pub fn from_displacement(grid: &SpectralGrid, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != grid.len() || dy.len() != grid.len() {
            return Err(Error::InvalidInput("displacement length does not match grid".into()));
        }
        Ok(Self { grid: grid.clone(), dx, dy })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn displacement(&self) -> (&[f64], &[f64]) {
        (&self.dx, &self.dy)
    }

    pub fn displacement_fields(&self) -> (ScalarField, ScalarField) {
        (
            ScalarField::from_physical(&self.grid, &self.dx),
            ScalarField::from_physical(&self.grid, &self.dy),
        )
    }

    /// Images of the grid points.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.grid
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0] + self.dx[i], p[1] + self.dy[i]])
            .collect()
    }

    /// Images of arbitrary points, using spectral interpolation of the
    /// displacement.
    pub fn apply(&self, points: &[[f64; 2]], method: InterpMethod) -> Vec<[f64; 2]> {
        let (fx, fy) = self.displacement_fields();
        let d = interpolate_many(&[&fx, &fy], points, method);
        points
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0] + d[0][i], p[1] + d[1][i]])
            .collect()
    }

    /// `D gamma` at the grid points as `[[dX/dx, dX/dy], [dY/dx, dY/dy]]`.
    pub fn jacobian(&self) -> Vec<[[f64; 2]; 2]> {
        let (fx, fy) = self.displacement_fields();
        let a = fx.dx().to_physical();
        let b = fx.dy().to_physical();
        let c = fy.dx().to_physical();
        let d = fy.dy().to_physical();
        (0..self.grid.len())
            .map(|i| [[1.0 + a[i], b[i]], [c[i], 1.0 + d[i]]])
            .collect()
    }

    /// `max |det D gamma - 1|` over the grid.
    pub fn det_error(&self) -> f64 {
        self.jacobian()
            .iter()
            .map(|j| (j[0][0] * j[1][1] - j[0][1] * j[1][0] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max |self(other(x)) - x|` over grid points `x`.
    pub fn composition_error(&self, other: &FlowMap, method: InterpMethod) -> f64 {
        let inner = other.positions();
        let outer = self.apply(&inner, method);
        self.grid
            .points()
            .iter()
            .zip(&outer)
            .map(|(p, q)| (q[0] - p[0]).hypot(q[1] - p[1]))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| v.is_finite())
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let (fx, fy) = self.displacement_fields();
        w.write_all(FLOW_MAGIC)?;
        write_header_tail(&mut w, self.grid.n())?;
        write_coefficients(&mut w, fx.coefficients())?;
        write_coefficients(&mut w, fy.coefficients())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        expect_magic(&mut r, FLOW_MAGIC)?;
        let n = read_header_tail(&mut r)?;
        let grid = SpectralGrid::new(n)?;
        let fx = ScalarField::from_coefficients(&grid, read_coefficients(&mut r, n * n)?)?;
        let fy = ScalarField::from_coefficients(&grid, read_coefficients(&mut r, n * n)?)?;
        Self::from_displacement(&grid, fx.to_physical(), fy.to_physical())
    }
}

/// Velocity `u(t, .)` as an exact field at any requested time.
pub trait Velocity {
    fn at(&self, t: f64) -> VectorFieldExact;
}

impl<F: Fn(f64) -> VectorFieldExact> Velocity for F {
    fn at(&self, t: f64) -> VectorFieldExact {
        self(t)
    }
}

/// Time-independent velocity.
pub struct Steady(pub VectorFieldExact);

impl Velocity for Steady {
    fn at(&self, _t: f64) -> VectorFieldExact {
        self.0.clone()
    }
}

/// `u` sampled at particle positions.
pub(crate) fn particle_velocity(
    u: &VectorFieldExact,
    positions: &[[f64; 2]],
    method: InterpMethod,
) -> (Vec<f64>, Vec<f64>) {
    let (ux, uy) = u.component_fields();
    let mut v = interpolate_many(&[&ux, &uy], positions, method);
    let vy = v.pop().unwrap();
    let vx = v.pop().unwrap();
    (vx, vy)
}

/// One classical RK4 step of `d/dt gamma(t, x) = u(t, gamma(t, x))`.
pub fn advance_forward(
    map: &FlowMap,
    velocity: &impl Velocity,
    t: f64,
    dt: f64,
    method: InterpMethod,
) -> Result<FlowMap> {
    let grid = map.grid.clone();
    let base = grid.points();
    let stage = |dx: &[f64], dy: &[f64], s: f64| {
        let pos: Vec<[f64; 2]> = base
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0] + dx[i], p[1] + dy[i]])
            .collect();
        particle_velocity(&velocity.at(s), &pos, method)
    };
    let shifted = |a: &[f64], k: &[f64], h: f64| -> Vec<f64> { a.iter().zip(k).map(|(a, k)| a + h * k).collect() };
    let (k1x, k1y) = stage(&map.dx, &map.dy, t);
    let (k2x, k2y) = stage(&shifted(&map.dx, &k1x, 0.5 * dt), &shifted(&map.dy, &k1y, 0.5 * dt), t + 0.5 * dt);
    let (k3x, k3y) = stage(&shifted(&map.dx, &k2x, 0.5 * dt), &shifted(&map.dy, &k2y, 0.5 * dt), t + 0.5 * dt);
    let (k4x, k4y) = stage(&shifted(&map.dx, &k3x, dt), &shifted(&map.dy, &k3y, dt), t + dt);
    let combine = |a: &[f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
        (0..a.len())
            .map(|i| a[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    };
    let out = FlowMap {
        grid,
        dx: combine(&map.dx, &k1x, &k2x, &k3x, &k4x),
        dy: combine(&map.dy, &k1y, &k2y, &k3y, &k4y),
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { t: t + dt });
    }
    Ok(out)
}

/// Back-to-labels map `A = id + b`, with `b` held spectrally.
#[derive(Clone, Debug)]
pub struct LabelMap {
    pub bx: ScalarField,
    pub by: ScalarField,
}

impl LabelMap {
    pub fn identity(grid: &SpectralGrid) -> Self {
        Self {
            bx: ScalarField::zeros(grid),
            by: ScalarField::zeros(grid),
        }
    }

    pub fn to_flow_map(&self) -> FlowMap {
        FlowMap {
            grid: self.bx.grid().clone(),
            dx: self.bx.to_physical(),
            dy: self.by.to_physical(),
        }
    }

    pub(crate) fn axpy(&self, h: f64, rate: &LabelMap) -> LabelMap {
        LabelMap {
            bx: self.bx.axpy(h, &rate.bx),
            by: self.by.axpy(h, &rate.by),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite()
    }
}

/// `d_t b = -u - u . grad b`, the label transport written for the displacement.
pub(crate) fn label_rate(labels: &LabelMap, u: &VectorFieldExact) -> LabelMap {
    let (ux, uy) = u.component_fields();
    let transport = |b: &ScalarField, own: &ScalarField| {
        let (bx, by) = (b.dx(), b.dy());
        let adv = dealiased_sum_of_products(&[(&ux, &bx), (&uy, &by)]);
        own.scaled(-1.0).sub(&adv)
    };
    LabelMap {
        bx: transport(&labels.bx, &ux),
        by: transport(&labels.by, &uy),
    }
}

/// One RK4 step of the label transport.
pub fn advance_back_to_labels(labels: &LabelMap, velocity: &impl Velocity, t: f64, dt: f64) -> Result<LabelMap> {
    let k1 = label_rate(labels, &velocity.at(t));
    let k2 = label_rate(&labels.axpy(0.5 * dt, &k1), &velocity.at(t + 0.5 * dt));
    let k3 = label_rate(&labels.axpy(0.5 * dt, &k2), &velocity.at(t + 0.5 * dt));
    let k4 = label_rate(&labels.axpy(dt, &k3), &velocity.at(t + dt));
    let out = labels
        .axpy(dt / 6.0, &k1)
        .axpy(dt / 3.0, &k2)
        .axpy(dt / 3.0, &k3)
        .axpy(dt / 6.0, &k4);
    if !out.is_finite() {
        return Err(Error::NonFinite { t: t + dt });
    }
    Ok(out)
}

/// `||theta_t o gamma - theta_0||_{L^2} / ||theta_0||_{L^2}` by grid quadrature.
pub fn transport_check(
    theta_t: &ScalarField,
    map: &FlowMap,
    theta_0: &ScalarField,
    method: InterpMethod,
) -> Result<f64> {
    theta_t.grid().check_same(map.grid())?;
    theta_t.grid().check_same(theta_0.grid())?;
    let reference = theta_0.to_physical();
    let norm0: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return Err(Error::InvalidInput("transport check needs a nonzero initial field".into()));
    }
    let pulled = crate::spectral::interpolate(theta_t, &map.positions(), method);
    let diff: f64 = pulled
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm0)
}
