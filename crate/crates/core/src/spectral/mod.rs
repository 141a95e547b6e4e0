//! Fourier calculus for mean-zero scalar fields on the flat torus `[0, 2pi)^2`.
//!
//! A [`ScalarField`] stores complex coefficients `c(k)` of
//! `f(x) = sum_k c(k) exp(i k.x)` for `|k_x|, |k_y| < N/2`. Storage is row-major
//! in `(k_x, k_y)` with wavenumber `k` at index `(k + N) mod N`, which is also
//! the checkpoint layout.
//!
//! Velocity fields are exact: `u = grad_perp psi = (-d_y psi, d_x psi)`.

pub(crate) mod checkpoint;
mod fft;
pub mod interp;

pub use checkpoint::{read_field, write_field, FIELD_MAGIC, FORMAT_VERSION};
pub use interp::{interpolate, GaussianEvaluator, InterpMethod};

use crate::error::{check_beta, Error, Result};
use fft::Fft2;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

const TWO_PI: f64 = 2.0 * PI;

struct Plans {
    base: Fft2,
    padded: Fft2,
    fine: OnceLock<Fft2>,
}

/// Uniform `N x N` grid on the torus with FFT plans and the 2/3-rule mask.
#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    plans: Arc<Plans>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid").field("n", &self.n).finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl SpectralGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "grid resolution must be an even integer >= 16, got {n}"
            )));
        }
        Ok(Self {
            n,
            plans: Arc::new(Plans {
                base: Fft2::new(n),
                padded: Fft2::new(3 * n / 2),
                fine: OnceLock::new(),
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest retained |k_i| after dealiasing.
    pub fn cutoff(&self) -> usize {
        self.n / 3
    }

    pub fn spacing(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Physical coordinate of grid index `j` along one axis.
    pub fn coordinate(&self, j: usize) -> f64 {
        TWO_PI * j as f64 / self.n as f64
    }

    /// All grid points in storage order.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let n = self.n;
        (0..n * n)
            .map(|idx| [self.coordinate(idx / n), self.coordinate(idx % n)])
            .collect()
    }

    pub fn wavenumber(&self, i: usize) -> i64 {
        wavenumber(i, self.n)
    }

    /// Storage index of wavevector `(kx, ky)`; `None` when outside `|k_i| < N/2`.
    pub fn index(&self, kx: i64, ky: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if kx.abs() >= half || ky.abs() >= half {
            return None;
        }
        let n = self.n as i64;
        Some((((kx + n) % n) * n + (ky + n) % n) as usize)
    }

    fn in_mask(&self, i: usize) -> bool {
        let c = self.cutoff() as i64;
        let n = self.n;
        self.wavenumber(i / n).abs() <= c && self.wavenumber(i % n).abs() <= c
    }

    pub(crate) fn fft(&self) -> &Fft2 {
        &self.plans.base
    }

    pub(crate) fn padded_fft(&self) -> &Fft2 {
        &self.plans.padded
    }

    pub(crate) fn fine_fft(&self) -> &Fft2 {
        self.plans.fine.get_or_init(|| Fft2::new(2 * self.n))
    }

    pub(crate) fn check_same(&self, other: &SpectralGrid) -> Result<()> {
        if self.n == other.n {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            })
        }
    }
}

pub(crate) fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Real periodic field held by its Fourier coefficients.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: SpectralGrid,
    coeffs: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(grid: &SpectralGrid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Builds a field from raw coefficients. The Nyquist row and column are
    /// dropped and the conjugate symmetry is enforced.
    pub fn from_coefficients(grid: &SpectralGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        let mut f = Self {
            grid: grid.clone(),
            coeffs,
        };
        f.clean();
        Ok(f)
    }

    /// Samples on the grid (storage order) to coefficients. The mean is kept.
    pub fn from_physical(grid: &SpectralGrid, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.len(), "sample count does not match grid");
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.fft().forward(&mut data);
        let mut f = Self {
            grid: grid.clone(),
            coeffs: data,
        };
        f.clean();
        f
    }

    pub fn from_fn(grid: &SpectralGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values: Vec<f64> = grid.points().iter().map(|p| f(p[0], p[1])).collect();
        Self::from_physical(grid, &values)
    }

    /// `cos(k.x)`.
    pub fn cos_mode(grid: &SpectralGrid, kx: i64, ky: i64) -> Self {
        let mut f = Self::zeros(grid);
        f.add_mode(kx, ky, Complex64::new(0.5, 0.0));
        f
    }

    /// `sin(k.x)`.
    pub fn sin_mode(grid: &SpectralGrid, kx: i64, ky: i64) -> Self {
        let mut f = Self::zeros(grid);
        f.add_mode(kx, ky, Complex64::new(0.0, -0.5));
        f
    }

    /// Adds `c exp(i k.x) + conj(c) exp(-i k.x)`.
    pub fn add_mode(&mut self, kx: i64, ky: i64, c: Complex64) {
        if kx == 0 && ky == 0 {
            self.coeffs[0] += Complex64::new(2.0 * c.re, 0.0);
            return;
        }
        let (Some(p), Some(m)) = (self.grid.index(kx, ky), self.grid.index(-kx, -ky)) else {
            panic!("mode ({kx}, {ky}) not representable on N = {}", self.grid.n);
        };
        self.coeffs[p] += c;
        self.coeffs[m] += c.conj();
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coefficient(&self, kx: i64, ky: i64) -> Complex64 {
        self.grid
            .index(kx, ky)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn is_mean_zero(&self) -> bool {
        let scale = self.max_abs_coefficient().max(1e-300);
        self.coeffs[0].norm() <= 1e-12 * scale
    }

    pub fn with_zero_mean(mut self) -> Self {
        self.coeffs[0] = Complex64::new(0.0, 0.0);
        self
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest `|c(k) - conj(c(-k))|`; zero for a real field.
    pub fn reality_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut worst: f64 = 0.0;
        for i in 0..n * n {
            let (ix, iy) = (i / n, i % n);
            let j = ((n - ix) % n) * n + (n - iy) % n;
            worst = worst.max((self.coeffs[i] - self.coeffs[j].conj()).norm());
        }
        worst
    }

    fn clean(&mut self) {
        let n = self.grid.n;
        let h = n / 2;
        for i in 0..n {
            self.coeffs[h * n + i] = Complex64::default();
            self.coeffs[i * n + h] = Complex64::default();
        }
        for i in 0..n * n {
            let (ix, iy) = (i / n, i % n);
            let j = ((n - ix) % n) * n + (n - iy) % n;
            if j > i {
                let avg = 0.5 * (self.coeffs[i] + self.coeffs[j].conj());
                self.coeffs[i] = avg;
                self.coeffs[j] = avg.conj();
            } else if j == i {
                self.coeffs[i].im = 0.0;
            }
        }
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut data = self.coeffs.clone();
        self.grid.fft().inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Applies the Fourier multiplier `m(kx, ky)`.
    pub fn map_multiplier(&self, m: impl Fn(i64, i64) -> Complex64) -> Self {
        let n = self.grid.n;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c == Complex64::default() {
                    c
                } else {
                    c * m(wavenumber(i / n, n), wavenumber(i % n, n))
                }
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    pub fn dx(&self) -> Self {
        self.map_multiplier(|kx, _| Complex64::new(0.0, kx as f64))
    }

    pub fn dy(&self) -> Self {
        self.map_multiplier(|_, ky| Complex64::new(0.0, ky as f64))
    }

    /// Zeroes every mode outside the 2/3-rule box `|k_i| <= N/3`.
    pub fn dealiased(mut self) -> Self {
        for i in 0..self.coeffs.len() {
            if !self.grid.in_mask(i) {
                self.coeffs[i] = Complex64::default();
            }
        }
        self
    }

    pub fn is_dealiased(&self) -> bool {
        (0..self.coeffs.len()).all(|i| self.grid.in_mask(i) || self.coeffs[i] == Complex64::default())
    }

    /// `||f||_{L^2}` over the torus (area `4 pi^2`).
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        TWO_PI * s.sqrt()
    }

    /// `int f g dmu`.
    pub fn l2_inner(&self, other: &Self) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        TWO_PI * TWO_PI * s
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `self + a * x`.
    pub fn axpy(&self, a: f64, x: &Self) -> Self {
        assert_eq!(self.grid, x.grid, "axpy on mismatched grids");
        Self {
            grid: self.grid.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&x.coeffs)
                .map(|(s, v)| s + v * a)
                .collect(),
        }
    }

    pub fn add(&self, x: &Self) -> Self {
        self.axpy(1.0, x)
    }

    pub fn sub(&self, x: &Self) -> Self {
        self.axpy(-1.0, x)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Smallest box `|kx| <= bx, |ky| <= by` containing all nonzero modes.
    pub(crate) fn support_box(&self) -> (usize, usize) {
        let n = self.grid.n;
        let (mut bx, mut by) = (0usize, 0usize);
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c != Complex64::default() {
                bx = bx.max(wavenumber(i / n, n).unsigned_abs() as usize);
                by = by.max(wavenumber(i % n, n).unsigned_abs() as usize);
            }
        }
        (bx, by)
    }

    /// Samples on the 3N/2 padded grid used for dealiased products.
    fn padded_samples(&self) -> Vec<f64> {
        let n = self.grid.n;
        let m = self.grid.padded_fft().size();
        let mut data = vec![Complex64::default(); m * m];
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c == Complex64::default() {
                continue;
            }
            let kx = wavenumber(i / n, n);
            let ky = wavenumber(i % n, n);
            let px = (kx + m as i64) as usize % m;
            let py = (ky + m as i64) as usize % m;
            data[px * m + py] = *c;
        }
        self.grid.padded_fft().inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    fn from_padded_samples(grid: &SpectralGrid, values: Vec<f64>) -> Self {
        let n = grid.n;
        let m = grid.padded_fft().size();
        let mut data: Vec<Complex64> = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        grid.padded_fft().forward(&mut data);
        let c = grid.cutoff() as i64;
        let mut out = Self::zeros(grid);
        for kx in -c..=c {
            for ky in -c..=c {
                let px = (kx + m as i64) as usize % m;
                let py = (ky + m as i64) as usize % m;
                let i = grid.index(kx, ky).expect("cutoff inside grid");
                out.coeffs[i] = data[px * m + py];
            }
        }
        debug_assert!(n > 0);
        out.clean();
        out
    }
}

/// Evaluates `sum_i a_i * b_i` pointwise on the padded grid and projects the
/// result onto the dealiased modes. Exact for inputs with `|k_i| < N/2`.
pub(crate) fn dealiased_sum_of_products(pairs: &[(&ScalarField, &ScalarField)]) -> ScalarField {
    let grid = pairs[0].0.grid().clone();
    let mut acc: Option<Vec<f64>> = None;
    for (a, b) in pairs {
        let pa = a.padded_samples();
        let pb = b.padded_samples();
        match acc.as_mut() {
            None => acc = Some(pa.iter().zip(&pb).map(|(x, y)| x * y).collect()),
            Some(s) => {
                for ((s, x), y) in s.iter_mut().zip(&pa).zip(&pb) {
                    *s += x * y;
                }
            }
        }
    }
    ScalarField::from_padded_samples(&grid, acc.expect("at least one product"))
}

/// Exact velocity `u = grad_perp psi` represented by its stream function.
#[derive(Clone, Debug)]
pub struct VectorFieldExact {
    stream: ScalarField,
}

impl VectorFieldExact {
    /// Wraps a stream function; the mean is discarded.
    pub fn from_stream(stream: ScalarField) -> Self {
        Self {
            stream: stream.with_zero_mean(),
        }
    }

    pub fn stream(&self) -> &ScalarField {
        &self.stream
    }

    pub fn into_stream(self) -> ScalarField {
        self.stream
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.stream.grid()
    }

    /// Coefficients of the two velocity components `(-d_y psi, d_x psi)`.
    pub fn component_fields(&self) -> (ScalarField, ScalarField) {
        (self.stream.dy().scaled(-1.0), self.stream.dx())
    }

    /// Grid samples of both velocity components.
    pub fn components(&self) -> (Vec<f64>, Vec<f64>) {
        let (ux, uy) = self.component_fields();
        (ux.to_physical(), uy.to_physical())
    }

    /// Spectral divergence of the sampled components; identically zero.
    pub fn divergence(&self) -> ScalarField {
        let (ux, uy) = self.component_fields();
        ux.dx().add(&uy.dy())
    }

    pub fn max_speed(&self) -> f64 {
        let (ux, uy) = self.components();
        ux.iter()
            .zip(&uy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_stream(self.stream.scaled(a))
    }

    pub fn axpy(&self, a: f64, x: &Self) -> Self {
        Self::from_stream(self.stream.axpy(a, &x.stream))
    }
}

/// `(-Delta)^alpha f` as the multiplier `|k|^{2 alpha}`; the zero mode is
/// annihilated.
pub fn frac_laplacian(f: &ScalarField, alpha: f64) -> Result<ScalarField> {
    if alpha < 0.0 && !f.is_mean_zero() {
        return Err(Error::NonZeroMean { mean: f.mean() });
    }
    Ok(frac_laplacian_unchecked(f, alpha))
}

pub(crate) fn frac_laplacian_unchecked(f: &ScalarField, alpha: f64) -> ScalarField {
    let mut out = f.map_multiplier(|kx, ky| {
        let k2 = (kx * kx + ky * ky) as f64;
        if k2 == 0.0 {
            Complex64::default()
        } else {
            Complex64::new(k2.powf(alpha), 0.0)
        }
    });
    out.coeffs[0] = Complex64::default();
    out
}

pub fn gradient_perp(f: &ScalarField) -> VectorFieldExact {
    VectorFieldExact::from_stream(f.clone())
}

/// `{f, g} = d_y f d_x g - d_x f d_y g = grad_perp(g) . grad(f)`, dealiased
/// and mean-free.
pub fn poisson_bracket(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    f.grid().check_same(g.grid())?;
    let (fx, fy) = (f.dx(), f.dy());
    let (gx, gy) = (g.dx(), g.dy());
    let minus_fx = fx.scaled(-1.0);
    Ok(dealiased_sum_of_products(&[(&fy, &gx), (&minus_fx, &gy)]).with_zero_mean())
}

/// `<u, v>_beta = int psi_u (-Delta)^{1 - beta/2} psi_v dmu`.
pub fn inner_product_beta(psi_u: &ScalarField, psi_v: &ScalarField, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    psi_u.grid().check_same(psi_v.grid())?;
    Ok(inner_product_beta_unchecked(psi_u, psi_v, beta))
}

pub(crate) fn inner_product_beta_unchecked(psi_u: &ScalarField, psi_v: &ScalarField, beta: f64) -> f64 {
    let n = psi_u.grid.n;
    let expo = 1.0 - 0.5 * beta;
    let mut s = 0.0;
    for (i, (a, b)) in psi_u.coeffs.iter().zip(&psi_v.coeffs).enumerate() {
        if i == 0 {
            continue;
        }
        let p = (a.conj() * b).re;
        if p == 0.0 {
            continue;
        }
        let kx = wavenumber(i / n, n);
        let ky = wavenumber(i % n, n);
        s += ((kx * kx + ky * ky) as f64).powf(expo) * p;
    }
    TWO_PI * TWO_PI * s
}
