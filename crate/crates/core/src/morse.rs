//! Counting machinery for conjugate points: Laplacian spectra, Weyl counts,
//! the constants `delta` and `C`, the bound `aleph_beta` and the index form.

use crate::error::{check_beta, Error, Result};
use crate::euler_arnold::GeodesicRecord;
use crate::exec;
use crate::jacobi::{k0_matrix, lambda_at, GalerkinBasis, JacobiBackend};
use crate::spectral::VectorFieldExact;
use crate::sphere_rotation::SphereBackend;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectrumSource {
    /// `|k|^2` over `k in Z^2 \ {0}`, complete up to `k_max^2`.
    Torus { k_max: u32 },
    /// `n(n+1)` with multiplicity `2n+1`, complete up to `n_max(n_max+1)`.
    Sphere { n_max: u32 },
}

/// Nonzero Laplacian eigenvalues, ascending, with multiplicities.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub source: SpectrumSource,
    pub eigenvalues: Vec<(f64, usize)>,
    /// Surface area `mu(M)`.
    pub area: f64,
    /// Every eigenvalue `<=` this value is listed.
    pub coverage: f64,
}

impl Spectrum {
    pub fn torus(k_max: u32) -> Result<Self> {
        if k_max < 1 {
            return Err(Error::InvalidInput("torus spectrum needs k_max >= 1".into()));
        }
        let k = k_max as i64;
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for kx in -k..=k {
            for ky in -k..=k {
                let k2 = kx * kx + ky * ky;
                if k2 > 0 && k2 <= k * k {
                    *counts.entry(k2).or_default() += 1;
                }
            }
        }
        Ok(Self {
            source: SpectrumSource::Torus { k_max },
            eigenvalues: counts.into_iter().map(|(l, m)| (l as f64, m)).collect(),
            area: 4.0 * PI * PI,
            coverage: (k * k) as f64,
        })
    }

    pub fn sphere(n_max: u32) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidInput("sphere spectrum needs n_max >= 1".into()));
        }
        Ok(Self {
            source: SpectrumSource::Sphere { n_max },
            eigenvalues: (1..=n_max as u64)
                .map(|n| ((n * (n + 1)) as f64, (2 * n + 1) as usize))
                .collect(),
            area: 4.0 * PI,
            coverage: (n_max as u64 * (n_max as u64 + 1)) as f64,
        })
    }

    /// Smallest spectrum of the same kind covering `lambda`.
    pub fn covering(kind: SpectrumSource, lambda: f64) -> Result<Self> {
        match kind {
            SpectrumSource::Torus { .. } => Self::torus((lambda.max(1.0).sqrt().ceil() as u32).max(1)),
            SpectrumSource::Sphere { .. } => {
                let mut n = 1u32;
                while ((n as u64) * (n as u64 + 1)) as f64 <= lambda {
                    n += 1;
                }
                Self::sphere(n)
            }
        }
    }

    pub fn smallest(&self) -> f64 {
        self.eigenvalues[0].0
    }

    fn check_coverage(&self, lambda: f64) -> Result<()> {
        if lambda > self.coverage {
            return Err(Error::Coverage {
                needed: lambda,
                available: self.coverage,
            });
        }
        Ok(())
    }

    /// `#{n : lambda_n < lambda}` with multiplicity.
    pub fn count_below(&self, lambda: f64) -> Result<usize> {
        self.check_coverage(lambda)?;
        Ok(self.eigenvalues.iter().filter(|(l, _)| *l < lambda).map(|(_, m)| m).sum())
    }
}

/// `N(lambda) = #{n : lambda_n <= lambda}` with multiplicity.
pub fn weyl_count(spectrum: &Spectrum, lambda: f64) -> Result<usize> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be nonnegative, got {lambda}")));
    }
    spectrum.check_coverage(lambda)?;
    Ok(spectrum.eigenvalues.iter().filter(|(l, _)| *l <= lambda).map(|(_, m)| m).sum())
}

/// Leading Weyl term `mu(M) lambda / (4 pi)`.
pub fn weyl_asymptotic(spectrum: &Spectrum, lambda: f64) -> f64 {
    spectrum.area * lambda / (4.0 * PI)
}

const POWER_CAP: usize = 10_000;

const BLOCK: usize = 6;

/// Largest singular value by block power iteration on `A^T A` with a
/// Rayleigh-Ritz step, so clustered leading singular values do not stall it.
pub fn operator_norm(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let p = BLOCK.min(n);
    let ata = a.transpose() * a;
    let mut q = DMatrix::from_fn(n, p, |i, j| if i == j { 1.0 } else { 0.01 * (((i * 37 + j * 11) % 17) as f64) })
        .qr()
        .q();
    let mut est = f64::NAN;
    for _ in 0..POWER_CAP {
        let z = &ata * &q;
        let ritz = q.transpose() * &z;
        let next = ritz.symmetric_eigenvalues().max();
        if next <= 0.0 {
            return Ok(0.0);
        }
        if (next - est).abs() <= 1e-13 * next {
            return Ok(next.sqrt());
        }
        est = next;
        q = z.qr().q();
    }
    Err(Error::NoConvergence { iterations: POWER_CAP })
}

/// `||Ad_{gamma(t_i)^{-1}}||_{L^2}^{-2}` at every snapshot, on the `L^2`
/// orthonormal basis with cutoff `k`.
pub fn delta_profile(record: &GeodesicRecord, cutoff: usize) -> Result<Vec<(f64, f64)>> {
    let basis = GalerkinBasis::new(record.grid(), cutoff, 0.0)?;
    let mut out = Vec::with_capacity(record.len());
    for (t, d) in record.times.iter().zip(&record.diffeos) {
        let cols = exec::map_indices(basis.dim(), |j| basis.coords(&d.right_translate(&basis.stream(j))));
        let mut a = DMatrix::zeros(basis.dim(), basis.dim());
        for (j, c) in cols.into_iter().enumerate() {
            a.set_column(j, &c);
        }
        let norm = operator_norm(&a)?;
        out.push((*t, norm.powi(-2)));
    }
    Ok(out)
}

/// `delta = inf_{t <= t_max} ||Ad_{gamma(t)^{-1}}||^{-2}` from a profile.
pub fn delta_inf(profile: &[(f64, f64)], t_max: f64) -> Result<f64> {
    let d = profile
        .iter()
        .filter(|(t, _)| *t <= t_max + 1e-12)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidInput(format!("no admissible snapshots in [0, {t_max}]")));
    }
    Ok(d)
}

/// `delta` for the sphere rotation: the same infimum over the backend
/// snapshots, with `Ad_{gamma(t)^{-1}}` in closed form.
pub fn sphere_delta(backend: &SphereBackend) -> Result<f64> {
    let profile = backend
        .times()
        .iter()
        .map(|&t| operator_norm(&backend.adjoint_inverse_matrix(t)).map(|n| (t, n.powi(-2))))
        .collect::<Result<Vec<_>>>()?;
    delta_inf(&profile, f64::INFINITY)
}

/// `C` for the sphere rotation.
pub fn sphere_c(backend: &SphereBackend) -> Result<CConstant> {
    c_from_matrix(backend.k0(), &backend.eigenvalues(), backend.beta())
}

/// Candidate values for the constant `C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CConstant {
    /// `sup ||K_0 w||_beta^2 / ||psi_w||_{H^{beta/2}}^2` on the truncated
    /// space; the constant used by the counting bound.
    pub value: f64,
    /// `||K_0||^2` as an operator on `<.,.>_beta`.
    pub operator_norm: f64,
    /// `||grad (-Delta)^{1-beta/2} psi_0||_inf^2`, or `NaN` when not
    /// available.
    pub sup_norm: f64,
}

/// `C` from a `K_0` matrix in `beta`-orthonormal coordinates whose basis
/// elements have Laplacian eigenvalues `lambda_j`.
pub fn c_from_matrix(k0: &DMatrix<f64>, eigenvalues: &[f64], beta: f64) -> Result<CConstant> {
    check_beta(beta)?;
    if eigenvalues.len() != k0.ncols() {
        return Err(Error::InvalidInput("one eigenvalue per coordinate is required".into()));
    }
    let weights = DVector::from_iterator(eigenvalues.len(), eigenvalues.iter().map(|l| l.powf(0.5 * (1.0 - beta))));
    let weighted = k0 * DMatrix::from_diagonal(&weights);
    Ok(CConstant {
        value: operator_norm(&weighted)?.powi(2),
        operator_norm: operator_norm(k0)?.powi(2),
        sup_norm: f64::NAN,
    })
}

pub fn c_constant(u0: &VectorFieldExact, beta: f64, basis: &GalerkinBasis) -> Result<CConstant> {
    let k0 = k0_matrix(u0, beta, basis)?.matrix;
    let eig: Vec<f64> = (0..basis.dim())
        .map(|j| {
            let ((kx, ky), _) = basis.element(j);
            (kx * kx + ky * ky) as f64
        })
        .collect();
    let mut c = c_from_matrix(&k0, &eig, beta)?;
    let theta = crate::euler_arnold::theta_from_stream(u0.stream(), beta);
    let (gx, gy) = (theta.dx().to_physical(), theta.dy().to_physical());
    c.sup_norm = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).fold(0.0, f64::max);
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorseInput {
    pub delta: f64,
    pub c: f64,
    pub t: f64,
    pub beta: f64,
    pub spectrum: Spectrum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KSlice {
    pub k: u32,
    pub threshold: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorseBound {
    pub aleph: usize,
    /// Same sum with the leading Weyl term in place of exact counts.
    pub aleph_weyl: f64,
    pub k_max: u32,
    pub slices: Vec<KSlice>,
}

/// `(C T^2 / (4 delta^2 k^2 pi^2))^{1/(1-beta)}`.
pub fn threshold(input: &MorseInput, k: u32) -> f64 {
    let k = k as f64;
    (input.c * input.t * input.t / (4.0 * input.delta * input.delta * k * k * PI * PI)).powf(1.0 / (1.0 - input.beta))
}

/// Counts the pairs `(k, n)` with `lambda_n` below the `k`-th threshold.
pub fn morse_bound(input: &MorseInput) -> Result<MorseBound> {
    if !(0.0..1.0).contains(&input.beta) {
        return Err(Error::BetaOutOfRange(input.beta));
    }
    if !(input.delta > 0.0) || !(input.t > 0.0) || !(input.c >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need delta > 0, T > 0, C >= 0 (got delta = {}, T = {}, C = {})",
            input.delta, input.t, input.c
        )));
    }
    let lambda1 = input.spectrum.smallest();
    let first = threshold(input, 1);
    if !first.is_finite() {
        return Err(Error::InvalidInput("threshold overflows".into()));
    }
    input.spectrum.check_coverage(first)?;
    let mut slices = Vec::new();
    let mut k = 1u32;
    loop {
        let thr = threshold(input, k);
        if thr <= lambda1 {
            break;
        }
        let count = input.spectrum.count_below(thr)?;
        slices.push(KSlice { k, threshold: thr, count });
        k += 1;
    }
    Ok(MorseBound {
        aleph: slices.iter().map(|s| s.count).sum(),
        aleph_weyl: slices.iter().map(|s| weyl_asymptotic(&input.spectrum, s.threshold)).sum::<f64>() + 0.0,
        k_max: slices.last().map_or(0, |s| s.k),
        slices,
    })
}

pub const BOUND_HEADER: &str = "beta,T,delta,C,k_max,aleph_exact,aleph_weyl";

pub fn write_bound_row(input: &MorseInput, bound: &MorseBound, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
        input.beta, input.t, input.delta, input.c, bound.k_max, bound.aleph, bound.aleph_weyl
    )?;
    Ok(())
}

/// Fourth-order finite-difference time derivative of uniform samples.
fn derivative(samples: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
    let n = samples.len();
    let s = |i: usize| &samples[i];
    (0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (s(i - 2) - s(i - 1) * 8.0 + s(i + 1) * 8.0 - s(i + 2)) / (12.0 * h)
            } else if i < 2 {
                (s(i) * -25.0 + s(i + 1) * 48.0 - s(i + 2) * 36.0 + s(i + 3) * 16.0 - s(i + 4) * 3.0) / (12.0 * h)
            } else {
                (s(i) * 25.0 - s(i - 1) * 48.0 + s(i - 2) * 36.0 - s(i - 3) * 16.0 + s(i - 4) * 3.0) / (12.0 * h)
            }
        })
        .collect()
}

/// `I(v, w) = int_0^T <Lambda v', w'> + <K_0 v, w'> dt` for trajectories
/// sampled at `T i / (len - 1)`; composite Simpson in time.
pub fn index_form(backend: &impl JacobiBackend, t_end: f64, v: &[DVector<f64>], w: &[DVector<f64>]) -> Result<f64> {
    let n = v.len();
    if n != w.len() || n < 5 || n % 2 == 0 {
        return Err(Error::Sampling("index form needs matching odd sample counts (at least 5)".into()));
    }
    if !(t_end > 0.0) || t_end > *backend.times().last().unwrap() + 1e-12 {
        return Err(Error::InvalidInput(format!("T = {t_end} lies outside the geodesic")));
    }
    for traj in [v, w] {
        let (a, b) = (traj[0].amax(), traj[n - 1].amax());
        let scale = traj.iter().map(|x| x.amax()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        if a > 1e-10 * scale || b > 1e-10 * scale {
            return Err(Error::Endpoint { start: a, end: b });
        }
    }
    let h = t_end / (n - 1) as f64;
    let dv = derivative(v, h);
    let dw = derivative(w, h);
    let k0 = backend.k0();
    let mut total = 0.0;
    for i in 0..n {
        let t = i as f64 * h;
        let lam = lambda_at(backend, t);
        let f = (&lam * &dv[i]).dot(&dw[i]) + (k0 * &v[i]).dot(&dw[i]);
        let weight = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += weight * f;
    }
    Ok(total * h / 3.0)
}
