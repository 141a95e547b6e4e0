//! The rotation `u_0 = d/d(theta)` on the unit sphere, a steady state for
//! every beta. Along `gamma(t)(theta, phi) = (theta + t, phi)` the Jacobi
//! equation decouples over spherical harmonics `phi_n` with
//! `d/d(theta) phi_n = i n phi_n`:
//! `sigma' = psi`, `(n(n+1))^{1-beta/2} xi' + i n 2^{1-beta/2} xi = 0`.

use crate::error::{check_beta, Error, Result};
use crate::jacobi::JacobiBackend;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

/// `pi sqrt(2)`, the accumulation point of `T_n(1)`.
pub const CLUSTER_LIMIT: f64 = PI * SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereMode {
    n: u32,
    beta: f64,
}

impl SphereMode {
    pub fn new(n: u32, beta: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidInput("harmonic degree must be at least 1".into()));
        }
        check_beta(beta)?;
        Ok(Self { n, beta })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Laplacian eigenvalue `n(n+1)`.
    pub fn eigenvalue(&self) -> f64 {
        let n = self.n as f64;
        n * (n + 1.0)
    }

    /// Angular frequency of `xi`: `n (2 / (n(n+1)))^{1 - beta/2}`.
    pub fn frequency(&self) -> f64 {
        self.n as f64 * (2.0 / self.eigenvalue()).powf(1.0 - 0.5 * self.beta)
    }
}

/// `xi(t)` and the amplitude `sigma(t) / phi_n`.
pub fn closed_form(t: f64, mode: &SphereMode) -> Result<(Complex64, Complex64)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time must be nonnegative, got {t}")));
    }
    let n = mode.n as f64;
    let xi = Complex64::from_polar(1.0, -mode.frequency() * t);
    let amp = Complex64::new(0.0, (0.5 * mode.eigenvalue()).powf(1.0 - 0.5 * mode.beta) / n);
    Ok((xi, amp * (xi - 1.0)))
}

/// `T_n(beta) = (2 pi / n) (n(n+1)/2)^{1 - beta/2}`.
pub fn conjugate_time(n: u32, beta: f64) -> Result<f64> {
    let mode = SphereMode::new(n, beta)?;
    Ok(2.0 * PI / n as f64 * (0.5 * mode.eigenvalue()).powf(1.0 - 0.5 * beta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSample {
    pub t: f64,
    pub xi: Complex64,
    pub sigma: Complex64,
}

fn rk4_step(mode: &SphereMode, s: &ModeSample, h: f64) -> ModeSample {
    let w = Complex64::new(0.0, -mode.frequency());
    // (xi, sigma)' = (w xi, xi)
    let k1 = (w * s.xi, s.xi);
    let x2 = s.xi + k1.0 * (0.5 * h);
    let k2 = (w * x2, x2);
    let x3 = s.xi + k2.0 * (0.5 * h);
    let k3 = (w * x3, x3);
    let x4 = s.xi + k3.0 * h;
    let k4 = (w * x4, x4);
    ModeSample {
        t: s.t + h,
        xi: s.xi + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0),
        sigma: s.sigma + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (h / 6.0),
    }
}

/// RK4 samples of `(xi, sigma)` on `[0, t_end]` from `xi(0) = 1`, `sigma(0) = 0`.
pub fn integrate_mode(mode: &SphereMode, dt: f64, t_end: f64) -> Result<Vec<ModeSample>> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidInput(format!("need dt > 0 and T >= 0, got dt = {dt}, T = {t_end}")));
    }
    let steps = (t_end / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let mut s = ModeSample {
        t: 0.0,
        xi: Complex64::new(1.0, 0.0),
        sigma: Complex64::default(),
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for _ in 0..steps {
        s = rk4_step(mode, &s, h);
        out.push(s);
    }
    Ok(out)
}

/// First positive zero of `sigma` from the RK4 integration. `Re sigma`
/// crosses zero upwards exactly when `sigma` vanishes, and that crossing is
/// refined by bisection on the length of the final RK4 step.
pub fn first_zero(mode: &SphereMode, dt: f64, t_max: f64) -> Result<f64> {
    let samples = integrate_mode(mode, dt, t_max)?;
    let i = samples
        .windows(2)
        .position(|w| w[0].sigma.re < 0.0 && w[1].sigma.re >= 0.0)
        .ok_or_else(|| Error::InvalidInput(format!("sigma has no zero in (0, {t_max}]")))?;
    let start = samples[i];
    let (mut a, mut b) = (0.0, samples[i + 1].t - start.t);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if rk4_step(mode, &start, m).sigma.re < 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 * start.t.max(1.0) {
            break;
        }
    }
    Ok(start.t + 0.5 * (a + b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterScan {
    pub beta: f64,
    pub rows: Vec<(u32, f64)>,
    /// Smallest `|T_{n+1} - T_n|`.
    pub min_gap: f64,
    /// `T_{n_max} - pi sqrt(2)`.
    pub distance_to_limit: f64,
}

pub fn cluster_scan(beta: f64, n_max: u32) -> Result<ClusterScan> {
    if n_max < 2 {
        return Err(Error::InvalidInput(format!("n_max must be at least 2, got {n_max}")));
    }
    let rows = (1..=n_max)
        .map(|n| conjugate_time(n, beta).map(|t| (n, t)))
        .collect::<Result<Vec<_>>>()?;
    let min_gap = rows
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).abs())
        .fold(f64::INFINITY, f64::min);
    let distance_to_limit = rows.last().unwrap().1 - CLUSTER_LIMIT;
    Ok(ClusterScan {
        beta,
        rows,
        min_gap,
        distance_to_limit,
    })
}

pub const SCAN_HEADER: &str = "n,beta,T_n";

pub fn write_scan_csv(scan: &ClusterScan, mut w: impl Write) -> Result<()> {
    writeln!(w, "{SCAN_HEADER}")?;
    for (n, t) in &scan.rows {
        writeln!(w, "{n},{:.16e},{:.16e}", scan.beta, t)?;
    }
    writeln!(w, "# limit pi*sqrt(2) = {CLUSTER_LIMIT}")?;
    Ok(())
}

/// Jacobi backend on the sectoral harmonics `n = 1..=n_max`, two real
/// coordinates (real and imaginary part of the amplitude) per degree. The
/// rotation is an isometry, so `Lambda = I`; `K_0` acts on each pair as
/// `[[0, -w_n], [w_n, 0]]`.
#[derive(Clone, Debug)]
pub struct SphereBackend {
    beta: f64,
    n_max: u32,
    times: Vec<f64>,
    identity: DMatrix<f64>,
    k0: DMatrix<f64>,
}

impl SphereBackend {
    /// Snapshots at `t_end * i / samples`, `i = 0..=samples`.
    pub fn new(beta: f64, n_max: u32, t_end: f64, samples: usize) -> Result<Self> {
        check_beta(beta)?;
        if n_max < 1 || samples < 2 || !(t_end > 0.0) {
            return Err(Error::InvalidInput("need n_max >= 1, samples >= 2 and T > 0".into()));
        }
        let d = 2 * n_max as usize;
        let mut k0 = DMatrix::zeros(d, d);
        for n in 1..=n_max {
            let w = SphereMode::new(n, beta)?.frequency();
            let i = 2 * (n as usize - 1);
            k0[(i, i + 1)] = -w;
            k0[(i + 1, i)] = w;
        }
        Ok(Self {
            beta,
            n_max,
            times: (0..=samples).map(|i| t_end * i as f64 / samples as f64).collect(),
            identity: DMatrix::identity(d, d),
            k0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// Eigenvalue `n(n+1)` of each coordinate.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_max)
            .flat_map(|n| {
                let l = (n * (n + 1)) as f64;
                [l, l]
            })
            .collect()
    }

    /// Matrix of `Ad_{gamma(t)^{-1}} v = v o gamma(t)`: a rotation by `n t`
    /// on each pair.
    pub fn adjoint_inverse_matrix(&self, t: f64) -> DMatrix<f64> {
        let d = 2 * self.n_max as usize;
        let mut m = DMatrix::zeros(d, d);
        for n in 1..=self.n_max {
            let (s, c) = (n as f64 * t).sin_cos();
            let i = 2 * (n as usize - 1);
            m[(i, i)] = c;
            m[(i, i + 1)] = -s;
            m[(i + 1, i)] = s;
            m[(i + 1, i + 1)] = c;
        }
        m
    }
}

impl JacobiBackend for SphereBackend {
    fn dim(&self) -> usize {
        self.identity.nrows()
    }

    fn times(&self) -> &[f64] {
        &self.times
    }

    fn lambda(&self, _i: usize) -> &DMatrix<f64> {
        &self.identity
    }

    fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }
}
