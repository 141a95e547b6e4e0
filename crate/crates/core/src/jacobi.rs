//! Jacobi fields along a geodesic on a Galerkin basis of exact fields.
//!
//! With `Lambda(t) = Ad*_gamma Ad_gamma` and `K_0 w = ad*_w u_0`, the
//! left-translated Jacobi field `v` with `v(0) = 0`, `v'(0) = w_0` solves
//! `m' = -K_0 Lambda^{-1} m`, `v' = Lambda^{-1} m`, `m(0) = w_0`. The solution
//! operator `Phi(t) w_0 = v(t)` splits as `Phi = Omega + Gamma` with
//! `Omega = int Lambda^{-1}` and `Gamma = -int Lambda^{-1} K_0 Phi`.

use crate::error::{check_beta, Error, Result};
use crate::euler_arnold::GeodesicRecord;
use crate::exec;
use crate::group_ops::{coadjoint_algebra, lambda_apply_fused, DiffeoSample};
use crate::spectral::checkpoint::{expect_magic, read_header_tail, write_header_tail};
use crate::spectral::{ScalarField, SpectralGrid, VectorFieldExact, FIELD_MAGIC};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Real basis `a_k cos(k.x)`, `a_k sin(k.x)` over `0 < |k| <= K` with
/// `k_x > 0` or `k_x = 0, k_y > 0`, scaled to unit `<.,.>_beta` norm.
#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    grid: SpectralGrid,
    cutoff: usize,
    beta: f64,
    modes: Vec<(i64, i64)>,
    scale: Vec<f64>,
}

impl GalerkinBasis {
    pub fn new(grid: &SpectralGrid, cutoff: usize, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if cutoff < 2 {
            return Err(Error::InvalidInput(format!("Galerkin cutoff must be at least 2, got {cutoff}")));
        }
        if cutoff > grid.cutoff() {
            return Err(Error::InvalidInput(format!(
                "Galerkin cutoff {cutoff} exceeds the dealiased range {} at N = {}",
                grid.cutoff(),
                grid.n()
            )));
        }
        let k = cutoff as i64;
        let mut modes = Vec::new();
        for kx in 0..=k {
            for ky in -k..=k {
                let k2 = kx * kx + ky * ky;
                if k2 == 0 || k2 > k * k || (kx == 0 && ky < 0) {
                    continue;
                }
                modes.push((kx, ky));
            }
        }
        modes.sort_by_key(|&(kx, ky)| (kx * kx + ky * ky, kx, ky));
        let scale = modes
            .iter()
            .map(|&(kx, ky)| {
                let k2 = (kx * kx + ky * ky) as f64;
                1.0 / (2.0 * PI * PI * k2.powf(1.0 - 0.5 * beta)).sqrt()
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            cutoff,
            beta,
            modes,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    /// Wavevector and parity (`false` for cosine) of element `j`.
    pub fn element(&self, j: usize) -> ((i64, i64), bool) {
        (self.modes[j / 2], j % 2 == 1)
    }

    /// Stream function of basis element `j`.
    pub fn stream(&self, j: usize) -> ScalarField {
        let mut c = DVector::zeros(self.dim());
        c[j] = 1.0;
        self.field(&c)
    }

    /// Stream function with the given coordinates.
    pub fn field(&self, coords: &DVector<f64>) -> ScalarField {
        let mut f = ScalarField::zeros(&self.grid);
        for (m, &(kx, ky)) in self.modes.iter().enumerate() {
            let a = self.scale[m];
            // a cos = a/2 (e + e*), a sin = -i a/2 e + c.c.
            let c = Complex64::new(0.5 * a * coords[2 * m], -0.5 * a * coords[2 * m + 1]);
            if c != Complex64::default() {
                f.add_mode(kx, ky, c);
            }
        }
        f
    }

    /// `<.,.>_beta` coordinates of the projection of `psi` onto the basis.
    pub fn coords(&self, psi: &ScalarField) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (m, &(kx, ky)) in self.modes.iter().enumerate() {
            let c = psi.coefficient(kx, ky);
            let k2 = (kx * kx + ky * ky) as f64;
            let w = 4.0 * PI * PI * k2.powf(1.0 - 0.5 * self.beta) * self.scale[m];
            out[2 * m] = w * c.re;
            out[2 * m + 1] = -w * c.im;
        }
        out
    }

    fn assemble(&self, column: impl Fn(usize) -> Result<ScalarField> + Sync) -> Result<DMatrix<f64>> {
        let cols = exec::map_indices(self.dim(), |j| column(j).map(|f| self.coords(&f)));
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (j, c) in cols.into_iter().enumerate() {
            m.set_column(j, &c?);
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Lambda,
    K0,
    Phi,
    Omega,
    Gamma,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Lambda => 0,
            Role::K0 => 1,
            Role::Phi => 2,
            Role::Omega => 3,
            Role::Gamma => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Role::Lambda,
            1 => Role::K0,
            2 => Role::Phi,
            3 => Role::Omega,
            4 => Role::Gamma,
            other => return Err(Error::Format(format!("unknown operator role tag {other}"))),
        })
    }
}

/// A dense operator on the Galerkin coordinates at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSample {
    pub t: f64,
    pub role: Role,
    pub matrix: DMatrix<f64>,
}

impl OperatorSample {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Layout: magic `GSQG`, `u32` version, `u32` d, `u8` role tag, `f64` t,
    /// then `d*d` row-major `f64` entries, all little-endian.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        write_header_tail(&mut w, self.dim())?;
        w.write_all(&[self.role.tag()])?;
        w.write_all(&self.t.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.dim() * self.dim() * 8);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                buf.extend_from_slice(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        expect_magic(&mut r, FIELD_MAGIC)?;
        let d = read_header_tail(&mut r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let role = Role::from_tag(tag[0])?;
        let mut tb = [0u8; 8];
        r.read_exact(&mut tb)?;
        let t = f64::from_le_bytes(tb);
        let mut buf = vec![0u8; d * d * 8];
        r.read_exact(&mut buf)?;
        let entries: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            t,
            role,
            matrix: DMatrix::from_row_slice(d, d, &entries),
        })
    }
}

/// Column `j` holds the coordinates of `ad*_{b_j} u_0`.
pub fn k0_matrix(u0: &VectorFieldExact, beta: f64, basis: &GalerkinBasis) -> Result<OperatorSample> {
    check_beta(beta)?;
    basis.grid().check_same(u0.grid())?;
    let matrix = basis.assemble(|j| {
        let b = VectorFieldExact::from_stream(basis.stream(j));
        coadjoint_algebra(&b, u0, beta).map(VectorFieldExact::into_stream)
    })?;
    Ok(OperatorSample {
        t: 0.0,
        role: Role::K0,
        matrix,
    })
}

/// Column `j` holds the coordinates of `Ad*_gamma Ad_gamma b_j`.
pub fn lambda_matrix(d: &DiffeoSample, beta: f64, basis: &GalerkinBasis) -> Result<OperatorSample> {
    check_beta(beta)?;
    basis.grid().check_same(d.forward().grid())?;
    let matrix = basis.assemble(|j| {
        let b = VectorFieldExact::from_stream(basis.stream(j));
        lambda_apply_fused(d, &b, beta).map(VectorFieldExact::into_stream)
    })?;
    Ok(OperatorSample {
        t: d.time(),
        role: Role::Lambda,
        matrix,
    })
}

/// Inverse through an LU factorization.
pub fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let diag_min = lu.u().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let diag_max = lu.u().diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(diag_min > 1e-14 * diag_max) {
        return Err(Error::Singular(format!("pivot ratio {:e}", diag_min / diag_max)));
    }
    lu.try_inverse()
        .ok_or_else(|| Error::Singular("LU inverse failed".into()))
}

/// Source of `Lambda(t_i)` snapshots and the constant `K_0`.
pub trait JacobiBackend {
    fn dim(&self) -> usize;
    fn times(&self) -> &[f64];
    fn lambda(&self, i: usize) -> &DMatrix<f64>;
    fn k0(&self) -> &DMatrix<f64>;
}

/// Fourier backend assembled from a simulated geodesic on the torus.
#[derive(Clone, Debug)]
pub struct TorusBackend {
    pub basis: GalerkinBasis,
    pub times: Vec<f64>,
    pub lambdas: Vec<OperatorSample>,
    pub k0: OperatorSample,
}

impl TorusBackend {
    pub fn assemble(record: &GeodesicRecord, basis: &GalerkinBasis) -> Result<Self> {
        if record.is_empty() {
            return Err(Error::Sampling("geodesic record is empty".into()));
        }
        let beta = record.beta();
        if (basis.beta() - beta).abs() > 0.0 {
            return Err(Error::InvalidInput(format!(
                "basis normalized for beta = {} but the geodesic has beta = {beta}",
                basis.beta()
            )));
        }
        let lambdas = record
            .diffeos
            .iter()
            .map(|d| lambda_matrix(d, beta, basis))
            .collect::<Result<Vec<_>>>()?;
        let k0 = k0_matrix(&record.u0(), beta, basis)?;
        Ok(Self {
            basis: basis.clone(),
            times: record.times.clone(),
            lambdas,
            k0,
        })
    }
}

impl JacobiBackend for TorusBackend {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn times(&self) -> &[f64] {
        &self.times
    }

    fn lambda(&self, i: usize) -> &DMatrix<f64> {
        &self.lambdas[i].matrix
    }

    fn k0(&self) -> &DMatrix<f64> {
        &self.k0.matrix
    }
}

/// `Lambda(t)` by linear interpolation between snapshots.
pub fn lambda_at(backend: &impl JacobiBackend, t: f64) -> DMatrix<f64> {
    let times = backend.times();
    let last = times.len() - 1;
    if last == 0 || t <= times[0] {
        return backend.lambda(0).clone();
    }
    if t >= times[last] {
        return backend.lambda(last).clone();
    }
    let i = times.partition_point(|&s| s <= t).saturating_sub(1).min(last - 1);
    let s = (t - times[i]) / (times[i + 1] - times[i]);
    backend.lambda(i) * (1.0 - s) + backend.lambda(i + 1) * s
}

fn check_backend(backend: &impl JacobiBackend) -> Result<()> {
    let times = backend.times();
    if times.len() < 2 {
        return Err(Error::Sampling("at least two snapshots are needed".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::Sampling(format!("first snapshot at t = {} instead of 0", times[0])));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Sampling("snapshot times must increase".into()));
    }
    Ok(())
}

/// Evolves `(M, Phi)` with RK4, `substeps` steps per snapshot interval, and
/// returns `Phi` at every step (starting with `Phi(0) = 0`).
pub fn evolve_phi(backend: &impl JacobiBackend, substeps: usize) -> Result<Vec<OperatorSample>> {
    check_backend(backend)?;
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be at least 1".into()));
    }
    let d = backend.dim();
    let k0 = backend.k0().clone();
    let times = backend.times();
    let mut m = DMatrix::<f64>::identity(d, d);
    let mut phi = DMatrix::<f64>::zeros(d, d);
    let mut out = vec![OperatorSample {
        t: 0.0,
        role: Role::Phi,
        matrix: phi.clone(),
    }];
    let mut inv_prev = invert(&lambda_at(backend, 0.0))?;
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            let t = w[0] + s as f64 * h;
            let inv_mid = invert(&lambda_at(backend, t + 0.5 * h))?;
            let t_end = if s + 1 == substeps { w[1] } else { t + h };
            let inv_end = invert(&lambda_at(backend, t_end))?;
            let rate = |inv: &DMatrix<f64>, m: &DMatrix<f64>| {
                let x = inv * m;
                (-(&k0 * &x), x)
            };
            let (a1, b1) = rate(&inv_prev, &m);
            let (a2, b2) = rate(&inv_mid, &(&m + &a1 * (0.5 * h)));
            let (a3, b3) = rate(&inv_mid, &(&m + &a2 * (0.5 * h)));
            let (a4, b4) = rate(&inv_end, &(&m + &a3 * h));
            m += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
            phi += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
            if !phi.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { t: t_end });
            }
            out.push(OperatorSample {
                t: t_end,
                role: Role::Phi,
                matrix: phi.clone(),
            });
            inv_prev = inv_end;
        }
    }
    Ok(out)
}

/// Weights `w` with `int_a^b q = sum w_i q(t_i)` for the quadratic `q`
/// through three nodes.
fn quadratic_weights(nodes: [f64; 3], a: f64, b: f64) -> [f64; 3] {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let g = half / 3f64.sqrt();
    let mut w = [0.0; 3];
    for x in [mid - g, mid + g] {
        for i in 0..3 {
            let mut l = 1.0;
            for j in 0..3 {
                if j != i {
                    l *= (x - nodes[j]) / (nodes[i] - nodes[j]);
                }
            }
            w[i] += half * l;
        }
    }
    w
}

/// Cumulative integrals `int_0^{t_j} f` at every node by piecewise quadratic
/// quadrature (composite Simpson at even nodes on uniform grids).
fn cumulative_quadratic(times: &[f64], values: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = times.len();
    let mut out = vec![DMatrix::zeros(values[0].nrows(), values[0].ncols())];
    for i in 0..n - 1 {
        let mut acc = out[i].clone();
        if n == 2 {
            acc += (&values[0] + &values[1]) * (0.5 * (times[1] - times[0]));
        } else {
            let base = if i % 2 == 0 && i + 2 < n { i } else { i.saturating_sub(1).min(n - 3) };
            let nodes = [times[base], times[base + 1], times[base + 2]];
            let w = quadratic_weights(nodes, times[i], times[i + 1]);
            for k in 0..3 {
                acc += &values[base + k] * w[k];
            }
        }
        out.push(acc);
    }
    out
}

/// Result of splitting `Phi = Omega + Gamma`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub omega: Vec<OperatorSample>,
    pub gamma: Vec<OperatorSample>,
    /// `max_i ||Phi - Omega - Gamma||_F / ||Phi||_F` over `t_i > 0`.
    pub residual: f64,
}

pub fn omega_gamma_split(backend: &impl JacobiBackend, phi: &[OperatorSample]) -> Result<Decomposition> {
    check_backend(backend)?;
    if phi.len() < 2 {
        return Err(Error::Sampling("need at least two Phi samples".into()));
    }
    if phi.iter().any(|p| p.dim() != backend.dim()) {
        return Err(Error::Sampling("Phi samples do not match the backend dimension".into()));
    }
    let t_end = *backend.times().last().unwrap();
    if phi[0].t != 0.0 || phi.last().unwrap().t > t_end + 1e-12 {
        return Err(Error::Sampling("Phi samples must start at 0 and stay inside the geodesic".into()));
    }
    let times: Vec<f64> = phi.iter().map(|p| p.t).collect();
    let inverses = times
        .iter()
        .map(|&t| invert(&lambda_at(backend, t)))
        .collect::<Result<Vec<_>>>()?;
    let k0 = backend.k0();
    let gamma_integrand: Vec<DMatrix<f64>> = inverses
        .iter()
        .zip(phi)
        .map(|(inv, p)| -(inv * k0 * &p.matrix))
        .collect();
    let omega = cumulative_quadratic(&times, &inverses);
    let gamma = cumulative_quadratic(&times, &gamma_integrand);
    let mut residual = 0.0f64;
    for i in 1..phi.len() {
        let norm = phi[i].matrix.norm();
        let r = (&phi[i].matrix - &omega[i] - &gamma[i]).norm();
        residual = residual.max(if norm > 0.0 { r / norm } else { r });
    }
    let wrap = |mats: Vec<DMatrix<f64>>, role| {
        mats.into_iter()
            .zip(&times)
            .map(|(matrix, &t)| OperatorSample { t, role, matrix })
            .collect()
    };
    Ok(Decomposition {
        omega: wrap(omega, Role::Omega),
        gamma: wrap(gamma, Role::Gamma),
        residual,
    })
}

/// How the conjugate-point threshold on `sigma_min(Phi/t)` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdPolicy {
    /// Fraction of the median of the trace.
    MedianFraction(f64),
    Absolute(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::MedianFraction(1e-3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub sigma_min: f64,
    pub det_sign: i8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugatePoint {
    pub t: f64,
    pub multiplicity: usize,
    pub sigma_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateReport {
    pub trace: Vec<TraceRow>,
    pub points: Vec<ConjugatePoint>,
    pub threshold: f64,
}

impl ConjugateReport {
    /// Conjugate points counted with multiplicity.
    pub fn count(&self) -> usize {
        self.points.iter().map(|p| p.multiplicity).sum()
    }
}

fn det_sign(m: &DMatrix<f64>) -> i8 {
    let lu = m.clone().lu();
    let mut sign = lu.p().determinant::<f64>();
    for v in lu.u().diagonal().iter() {
        if *v == 0.0 {
            return 0;
        }
        sign *= v.signum();
    }
    sign as i8
}

fn singular_values_scaled(m: &DMatrix<f64>, t: f64) -> DVector<f64> {
    (m / t).singular_values()
}

fn sigma_min(m: &DMatrix<f64>, t: f64) -> f64 {
    singular_values_scaled(m, t).min()
}

/// Cubic Lagrange interpolation of the samples around `t`.
fn phi_interp(phi: &[&OperatorSample], t: f64) -> DMatrix<f64> {
    let n = phi.len();
    if n < 4 {
        let i = phi.partition_point(|p| p.t <= t).clamp(1, n - 1);
        let s = (t - phi[i - 1].t) / (phi[i].t - phi[i - 1].t);
        return &phi[i - 1].matrix * (1.0 - s) + &phi[i].matrix * s;
    }
    let i = phi.partition_point(|p| p.t <= t);
    let start = i.saturating_sub(2).min(n - 4);
    let nodes: Vec<f64> = (start..start + 4).map(|j| phi[j].t).collect();
    let mut out = DMatrix::zeros(phi[0].dim(), phi[0].dim());
    for a in 0..4 {
        let mut l = 1.0;
        for b in 0..4 {
            if a != b {
                l *= (t - nodes[b]) / (nodes[a] - nodes[b]);
            }
        }
        out += &phi[start + a].matrix * l;
    }
    out
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() < 1e-12 * b.abs().max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn bisect_sign(f: impl Fn(f64) -> i8, mut a: f64, mut b: f64) -> f64 {
    let sa = f(a);
    for _ in 0..100 {
        if (b - a).abs() < 1e-13 * b.abs().max(1.0) {
            break;
        }
        let m = 0.5 * (a + b);
        let sm = f(m);
        if sm == 0 {
            return m;
        }
        if sm == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Scans `sigma_min(Phi(t)/t)` for near-singular times.
pub fn detect_conjugate(phi: &[OperatorSample], policy: ThresholdPolicy) -> ConjugateReport {
    let samples: Vec<&OperatorSample> = phi.iter().filter(|p| p.t > 0.0).collect();
    let trace: Vec<TraceRow> = exec::map_indices(samples.len(), |i| TraceRow {
        t: samples[i].t,
        sigma_min: sigma_min(&samples[i].matrix, samples[i].t),
        det_sign: det_sign(&samples[i].matrix),
    });
    let threshold = match policy {
        ThresholdPolicy::Absolute(v) => v,
        ThresholdPolicy::MedianFraction(f) => {
            let mut s: Vec<f64> = trace.iter().map(|r| r.sigma_min).collect();
            s.sort_by(f64::total_cmp);
            if s.is_empty() {
                0.0
            } else {
                f * s[s.len() / 2]
            }
        }
    };
    let mut points: Vec<ConjugatePoint> = Vec::new();
    let n = trace.len();
    if n < 3 {
        return ConjugateReport { trace, points, threshold };
    }
    let sigma_at = |t: f64| sigma_min(&phi_interp(&samples, t), t);
    for i in 0..n {
        let s = trace[i].sigma_min;
        let left_ok = i == 0 || s <= trace[i - 1].sigma_min;
        let right_ok = i + 1 == n || s <= trace[i + 1].sigma_min;
        if !(left_ok && right_ok) || (i == 0 && n > 1 && s == trace[1].sigma_min) {
            continue;
        }
        let lo = if i == 0 { 0 } else { i - 1 };
        let hi = (i + 1).min(n - 1);
        let sign_change = |a: usize, b: usize| trace[a].det_sign != trace[b].det_sign;
        let (t_star, s_star) = if i > 0 && sign_change(i - 1, i) {
            let t = bisect_sign(|t| det_sign(&phi_interp(&samples, t)), trace[i - 1].t, trace[i].t);
            (t, sigma_at(t))
        } else if i + 1 < n && sign_change(i, i + 1) {
            let t = bisect_sign(|t| det_sign(&phi_interp(&samples, t)), trace[i].t, trace[i + 1].t);
            (t, sigma_at(t))
        } else {
            golden_min(sigma_at, trace[lo].t, trace[hi].t)
        };
        if !(s_star < threshold) {
            continue;
        }
        if points.last().is_some_and(|p| (p.t - t_star).abs() <= 0.5 * (trace[hi].t - trace[lo].t) / 2.0) {
            continue;
        }
        let sv = singular_values_scaled(&phi_interp(&samples, t_star), t_star);
        let multiplicity = sv.iter().filter(|v| **v < threshold).count().max(1);
        points.push(ConjugatePoint {
            t: t_star,
            multiplicity,
            sigma_min: s_star,
        });
    }
    ConjugateReport { trace, points, threshold }
}

pub const CONJUGATE_HEADER: &str = "t,sigma_min,det_sign";
pub const CONJUGATE_REPORT_HEADER: &str = "t_conj,multiplicity";

/// Trace rows, a blank line, then the report block.
pub fn write_conjugate_csv(report: &ConjugateReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "{CONJUGATE_HEADER}")?;
    for r in &report.trace {
        writeln!(w, "{:.16e},{:.16e},{}", r.t, r.sigma_min, r.det_sign)?;
    }
    writeln!(w)?;
    writeln!(w, "{CONJUGATE_REPORT_HEADER}")?;
    for p in &report.points {
        writeln!(w, "{:.16e},{}", p.t, p.multiplicity)?;
    }
    Ok(())
}

/// Singular values of `Gamma(t)` in decreasing order.
pub fn gamma_singular_values(gamma: &OperatorSample) -> Vec<f64> {
    let mut s: Vec<f64> = gamma.matrix.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_ops::lambda_inverse_apply;
    use crate::spectral::inner_product_beta;
    use crate::flow::FlowMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> SpectralGrid {
        SpectralGrid::new(n).unwrap()
    }

    struct Fixed {
        times: Vec<f64>,
        lambdas: Vec<DMatrix<f64>>,
        k0: DMatrix<f64>,
    }

    impl JacobiBackend for Fixed {
        fn dim(&self) -> usize {
            self.k0.nrows()
        }
        fn times(&self) -> &[f64] {
            &self.times
        }
        fn lambda(&self, i: usize) -> &DMatrix<f64> {
            &self.lambdas[i]
        }
        fn k0(&self) -> &DMatrix<f64> {
            &self.k0
        }
    }

    fn uniform(t_end: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| t_end * i as f64 / (count - 1) as f64).collect()
    }

    #[test]
    fn basis_is_orthonormal() {
        let g = grid(32);
        for beta in [0.0, 0.5, 1.0] {
            let b = GalerkinBasis::new(&g, 4, beta).unwrap();
            // 48 lattice points with 0 < |k| <= 4.
            assert_eq!(b.dim(), 48);
            let streams: Vec<ScalarField> = (0..b.dim()).map(|j| b.stream(j)).collect();
            for i in 0..b.dim() {
                for j in 0..b.dim() {
                    let g_ij = inner_product_beta(&streams[i], &streams[j], beta).unwrap();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g_ij - expect).abs() < 1e-12);
                }
                let c = b.coords(&streams[i]);
                for j in 0..b.dim() {
                    assert!((c[j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
        assert!(GalerkinBasis::new(&g, 1, 0.0).is_err());
        assert!(GalerkinBasis::new(&g, 11, 0.0).is_err());
    }

    #[test]
    fn k0_structure() {
        let g = grid(32);
        let beta = 0.5;
        let b = GalerkinBasis::new(&g, 4, beta).unwrap();
        let zero = VectorFieldExact::from_stream(ScalarField::zeros(&g));
        assert_eq!(k0_matrix(&zero, beta, &b).unwrap().matrix.amax(), 0.0);
        let psi = ScalarField::cos_mode(&g, 0, 1).scaled(-1.0).axpy(0.1, &ScalarField::cos_mode(&g, 1, 0));
        let u0 = VectorFieldExact::from_stream(psi);
        let k0 = k0_matrix(&u0, beta, &b).unwrap().matrix;
        assert!((&k0 + k0.transpose()).amax() < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = DVector::from_fn(b.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let w = VectorFieldExact::from_stream(b.field(&c));
        let direct = b.coords(coadjoint_algebra(&w, &u0, beta).unwrap().stream());
        assert!((&k0 * &c - direct).amax() < 1e-10);
    }

    #[test]
    fn lambda_identity_and_inverse_route() {
        let g = grid(64);
        let beta = 0.5;
        let b = GalerkinBasis::new(&g, 4, beta).unwrap();
        let id = DiffeoSample::identity(&g);
        let lam = lambda_matrix(&id, beta, &b).unwrap().matrix;
        assert!((&lam - DMatrix::identity(b.dim(), b.dim())).amax() < 1e-12);
        let fwd = FlowMap::from_fn(&g, |x, y| {
            let x1 = x + 0.1 * y.sin();
            [x1, y + 0.05 * x1.sin()]
        });
        let inv = FlowMap::from_fn(&g, |x, y| {
            let y1 = y - 0.05 * x.sin();
            [x - 0.1 * y1.sin(), y1]
        });
        let d = DiffeoSample::new(fwd, Some(inv), 1.0);
        let lam = lambda_matrix(&d, beta, &b).unwrap().matrix;
        assert!((&lam - lam.transpose()).amax() < 1e-6);
        assert!(lam.clone().symmetric_eigenvalues().min() > 0.0);
        let inv = invert(&lam).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = DVector::from_fn(b.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let route = b.coords(
            lambda_inverse_apply(&d, &VectorFieldExact::from_stream(b.field(&c)), beta)
                .unwrap()
                .stream(),
        );
        let mat = &inv * &c;
        let rel = (&mat - &route).norm() / mat.norm();
        assert!(rel < 1e-3, "{rel:e}");
    }

    #[test]
    fn invert_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(invert(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn free_evolution_is_linear_in_time() {
        let d = 6;
        let backend = Fixed {
            times: uniform(1.0, 6),
            lambdas: vec![DMatrix::identity(d, d); 6],
            k0: DMatrix::zeros(d, d),
        };
        let phi = evolve_phi(&backend, 4).unwrap();
        assert_eq!(phi.len(), 21);
        for p in &phi {
            assert!((&p.matrix - DMatrix::identity(d, d) * p.t).amax() < 1e-14);
        }
        let split = omega_gamma_split(&backend, &phi).unwrap();
        assert!(split.residual < 1e-14);
        assert!(split.gamma.iter().all(|g| g.matrix.amax() == 0.0));
        let report = detect_conjugate(&phi, ThresholdPolicy::default());
        assert!(report.points.is_empty());
    }

    #[test]
    fn rotation_block_matches_closed_form() {
        // Lambda = I, K0 = [[0, -w], [w, 0]]: Phi(t) = int_0^t exp(-s K0) ds.
        let w = 1.7;
        let k0 = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let backend = Fixed {
            times: uniform(4.0, 201),
            lambdas: vec![DMatrix::identity(2, 2); 201],
            k0,
        };
        let phi = evolve_phi(&backend, 4).unwrap();
        for p in phi.iter().step_by(37) {
            let t = p.t;
            let (s, c) = ((w * t).sin() / w, (1.0 - (w * t).cos()) / w);
            let exact = DMatrix::from_row_slice(2, 2, &[s, c, -c, s]);
            assert!((&p.matrix - &exact).amax() < 1e-7, "t = {t}: {:e}", (&p.matrix - &exact).amax());
        }
        let split = omega_gamma_split(&backend, &phi).unwrap();
        assert!(split.residual < 1e-6, "{:e}", split.residual);
        let report = detect_conjugate(&phi, ThresholdPolicy::default());
        assert_eq!(report.points.len(), 1);
        assert!((report.points[0].t - 2.0 * PI / w).abs() < 1e-8);
        assert_eq!(report.points[0].multiplicity, 2);
    }

    #[test]
    fn sign_change_is_bisected() {
        // Phi = diag(t (a - t), t): the first entry vanishes at t = a with a
        // determinant sign change.
        let a = 1.234;
        let phi: Vec<OperatorSample> = uniform(2.0, 41)
            .into_iter()
            .map(|t| OperatorSample {
                t,
                role: Role::Phi,
                matrix: DMatrix::from_row_slice(2, 2, &[t * (a - t), 0.0, 0.0, t]),
            })
            .collect();
        let report = detect_conjugate(&phi, ThresholdPolicy::Absolute(0.05));
        assert_eq!(report.points.len(), 1);
        assert!((report.points[0].t - a).abs() < 1e-10);
        assert_eq!(report.points[0].multiplicity, 1);
        assert!(report.trace.iter().any(|r| r.det_sign < 0));
    }

    #[test]
    fn quadrature_is_exact_for_quadratics() {
        let times = vec![0.0, 0.1, 0.3, 0.4, 0.7, 0.75, 1.0];
        let values: Vec<DMatrix<f64>> = times.iter().map(|t| DMatrix::from_element(1, 1, 3.0 * t * t - t + 2.0)).collect();
        let cum = cumulative_quadratic(&times, &values);
        for (t, c) in times.iter().zip(&cum) {
            let exact = t * t * t - 0.5 * t * t + 2.0 * t;
            assert!((c[(0, 0)] - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn operator_checkpoint_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = OperatorSample { t: 0.5, role: Role::Omega, matrix: m };
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GSQG");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(buf[12], 3);
        assert_eq!(&buf[13..21], &0.5f64.to_le_bytes());
        assert_eq!(&buf[21 + 8..29 + 8], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 21 + 32);
        assert_eq!(OperatorSample::read(buf.as_slice()).unwrap(), s);
        buf[12] = 9;
        assert!(OperatorSample::read(buf.as_slice()).is_err());
    }
}
