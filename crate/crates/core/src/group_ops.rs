//! Adjoint and coadjoint actions of exact diffeomorphisms on exact fields
//! for the metric `<u, v>_beta = int psi_u (-Delta)^{1 - beta/2} psi_v`.
//!
//! Right translation `R_eta f = f o eta` is realized by sampling `f` at the
//! images of the grid points, transforming back, projecting onto the
//! dealiased modes and removing the mean.

use crate::error::{check_beta, Error, Result};
use crate::flow::FlowMap;
use crate::spectral::{
    frac_laplacian_unchecked, interpolate, poisson_bracket, GaussianEvaluator, InterpMethod, ScalarField,
    VectorFieldExact,
};
use std::sync::OnceLock;

/// Number of active Fourier coefficients above which composition switches
/// from direct summation to the Gaussian-gridding evaluator.
const DIRECT_LIMIT: usize = 400;

/// Fixed set of evaluation points with a lazily built fast evaluator.
#[derive(Debug)]
struct PointSet {
    points: Vec<[f64; 2]>,
    fast: OnceLock<GaussianEvaluator>,
}

impl std::fmt::Debug for GaussianEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianEvaluator").field("points", &self.len()).finish()
    }
}

impl Clone for PointSet {
    fn clone(&self) -> Self {
        Self::new(self.points.clone())
    }
}

impl PointSet {
    fn new(points: Vec<[f64; 2]>) -> Self {
        Self {
            points,
            fast: OnceLock::new(),
        }
    }

    fn sample(&self, f: &ScalarField) -> Vec<f64> {
        let (bx, by) = f.support_box();
        if (2 * bx + 1) * (2 * by + 1) <= DIRECT_LIMIT {
            interpolate(f, &self.points, InterpMethod::Fourier)
        } else {
            self.fast
                .get_or_init(|| GaussianEvaluator::new(f.grid(), &self.points))
                .evaluate(f)
        }
    }

    /// `P[f o map]`: samples, transforms, dealiases and removes the mean.
    fn compose(&self, f: &ScalarField) -> ScalarField {
        self.compose_full(f).dealiased()
    }

    /// Same as [`compose`](Self::compose) but keeps every mode `|k_i| < N/2`.
    fn compose_full(&self, f: &ScalarField) -> ScalarField {
        ScalarField::from_physical(f.grid(), &self.sample(f)).with_zero_mean()
    }
}

/// A diffeomorphism `eta` with (optionally) its inverse, at geodesic time `time`.
#[derive(Clone, Debug)]
pub struct DiffeoSample {
    forward: FlowMap,
    inverse: Option<FlowMap>,
    time: f64,
    forward_points: PointSet,
    inverse_points: Option<PointSet>,
}

impl DiffeoSample {
    pub fn new(forward: FlowMap, inverse: Option<FlowMap>, time: f64) -> Self {
        let forward_points = PointSet::new(forward.positions());
        let inverse_points = inverse.as_ref().map(|m| PointSet::new(m.positions()));
        Self {
            forward,
            inverse,
            time,
            forward_points,
            inverse_points,
        }
    }

    pub fn identity(grid: &crate::spectral::SpectralGrid) -> Self {
        Self::new(FlowMap::identity(grid), Some(FlowMap::identity(grid)), 0.0)
    }

    pub fn forward(&self) -> &FlowMap {
        &self.forward
    }

    pub fn inverse(&self) -> Option<&FlowMap> {
        self.inverse.as_ref()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// The sample of `eta^{-1}`.
    pub fn inverted(&self) -> Result<DiffeoSample> {
        let inv = self.inverse.clone().ok_or(Error::MissingInverse)?;
        Ok(DiffeoSample::new(inv, Some(self.forward.clone()), self.time))
    }

    /// `R_eta f = P[f o eta]`.
    pub fn right_translate(&self, f: &ScalarField) -> ScalarField {
        self.forward_points.compose(f)
    }

    /// `R_eta^{-1} f = P[f o eta^{-1}]`.
    pub fn right_translate_inverse(&self, f: &ScalarField) -> Result<ScalarField> {
        Ok(self.inverse_points()?.compose(f))
    }

    fn inverse_points(&self) -> Result<&PointSet> {
        self.inverse_points.as_ref().ok_or(Error::MissingInverse)
    }
}

/// `Ad_eta v = grad_perp(psi_v o eta^{-1})`.
pub fn adjoint(eta: &DiffeoSample, v: &VectorFieldExact) -> Result<VectorFieldExact> {
    Ok(VectorFieldExact::from_stream(eta.right_translate_inverse(v.stream())?))
}

/// `ad_u v = grad_perp {psi_u, psi_v}`.
pub fn ad_bracket(u: &VectorFieldExact, v: &VectorFieldExact) -> Result<VectorFieldExact> {
    Ok(VectorFieldExact::from_stream(poisson_bracket(u.stream(), v.stream())?))
}

/// `ad*_u v = grad_perp (-Delta)^{beta/2 - 1} {(-Delta)^{1 - beta/2} psi_v, psi_u}`.
pub fn coadjoint_algebra(u: &VectorFieldExact, v: &VectorFieldExact, beta: f64) -> Result<VectorFieldExact> {
    check_beta(beta)?;
    let lv = frac_laplacian_unchecked(v.stream(), 1.0 - 0.5 * beta);
    let b = poisson_bracket(&lv, u.stream())?;
    Ok(VectorFieldExact::from_stream(frac_laplacian_unchecked(&b, 0.5 * beta - 1.0)))
}

/// `Ad*_eta u = grad_perp (-Delta)^{beta/2 - 1} R_eta (-Delta)^{1 - beta/2} psi_u`.
pub fn coadjoint_group(eta: &DiffeoSample, u: &VectorFieldExact, beta: f64) -> Result<VectorFieldExact> {
    check_beta(beta)?;
    let lu = frac_laplacian_unchecked(u.stream(), 1.0 - 0.5 * beta);
    let moved = eta.right_translate(&lu);
    Ok(VectorFieldExact::from_stream(frac_laplacian_unchecked(&moved, 0.5 * beta - 1.0)))
}

/// The same coadjoint through the `L^2` adjoint `Ad0_eta = D eta^T R_eta`:
/// `Ad*_eta = (-Delta)^{beta/2} P_ex Ad0_eta (-Delta)^{-beta/2}`, with `P_ex`
/// the projection onto exact fields.
pub fn coadjoint_group_l2(eta: &DiffeoSample, u: &VectorFieldExact, beta: f64) -> Result<VectorFieldExact> {
    check_beta(beta)?;
    let smoothed = VectorFieldExact::from_stream(frac_laplacian_unchecked(u.stream(), -0.5 * beta));
    let (wx, wy) = smoothed.component_fields();
    let pts = &eta.forward_points;
    let (sx, sy) = (pts.sample(&wx), pts.sample(&wy));
    let jac = eta.forward.jacobian();
    let grid = u.grid();
    let mut vx = vec![0.0; grid.len()];
    let mut vy = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        let j = jac[i];
        vx[i] = j[0][0] * sx[i] + j[1][0] * sy[i];
        vy[i] = j[0][1] * sx[i] + j[1][1] * sy[i];
    }
    let vx = ScalarField::from_physical(grid, &vx);
    let vy = ScalarField::from_physical(grid, &vy);
    // Delta psi = curl V = d_x V_y - d_y V_x.
    let curl = vy.dx().sub(&vx.dy()).with_zero_mean();
    let psi = frac_laplacian_unchecked(&curl, -1.0).scaled(-1.0);
    Ok(VectorFieldExact::from_stream(
        frac_laplacian_unchecked(&psi, 0.5 * beta).dealiased(),
    ))
}

/// `Lambda v = Ad*_gamma Ad_gamma v`, composed from the two actions.
pub fn lambda_apply(d: &DiffeoSample, v: &VectorFieldExact, beta: f64) -> Result<VectorFieldExact> {
    check_beta(beta)?;
    coadjoint_group(d, &adjoint(d, v)?, beta)
}

/// `Lambda v = grad_perp (-Delta)^{beta/2-1} R_gamma (-Delta)^{1-beta/2} R_gamma^{-1} psi_v`
/// in a single pass that keeps the intermediate composition at full
/// resolution.
pub fn lambda_apply_fused(d: &DiffeoSample, v: &VectorFieldExact, beta: f64) -> Result<VectorFieldExact> {
    check_beta(beta)?;
    let pulled = d.inverse_points()?.compose_full(v.stream());
    let lifted = frac_laplacian_unchecked(&pulled, 1.0 - 0.5 * beta);
    let pushed = d.right_translate(&lifted);
    Ok(VectorFieldExact::from_stream(frac_laplacian_unchecked(&pushed, 0.5 * beta - 1.0)))
}

/// `Lambda^{-1} v = grad_perp R_gamma (-Delta)^{beta/2-1} R_gamma^{-1} (-Delta)^{1-beta/2} psi_v`.
pub fn lambda_inverse_apply(d: &DiffeoSample, v: &VectorFieldExact, beta: f64) -> Result<VectorFieldExact> {
    check_beta(beta)?;
    let lifted = frac_laplacian_unchecked(v.stream(), 1.0 - 0.5 * beta);
    let pulled = d.right_translate_inverse(&lifted)?;
    let lowered = frac_laplacian_unchecked(&pulled, 0.5 * beta - 1.0);
    Ok(VectorFieldExact::from_stream(d.right_translate(&lowered)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{inner_product_beta, SpectralGrid};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_exact(g: &SpectralGrid, kmax: i64, seed: u64) -> VectorFieldExact {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ScalarField::zeros(g);
        for kx in 0..=kmax {
            for ky in -kmax..=kmax {
                if kx == 0 && ky <= 0 {
                    continue;
                }
                f.add_mode(kx, ky, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
        }
        VectorFieldExact::from_stream(f)
    }

    /// Two stacked shears with closed-form inverse.
    pub(crate) fn twisted(g: &SpectralGrid, a: f64, b: f64) -> DiffeoSample {
        let fwd = FlowMap::from_fn(g, |x, y| {
            let x1 = x + a * y.sin();
            [x1, y + b * x1.sin()]
        });
        let inv = FlowMap::from_fn(g, |x, y| {
            let y1 = y - b * x.sin();
            [x - a * y1.sin(), y1]
        });
        DiffeoSample::new(fwd, Some(inv), 1.0)
    }

    fn rel(a: &ScalarField, b: &ScalarField) -> f64 {
        a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
    }

    #[test]
    fn identity_actions() {
        let g = SpectralGrid::new(32).unwrap();
        let id = DiffeoSample::identity(&g);
        let v = random_exact(&g, 5, 1);
        for beta in [0.0, 0.5, 1.0] {
            assert!(rel(adjoint(&id, &v).unwrap().stream(), v.stream()) < 1e-13);
            assert!(rel(coadjoint_group(&id, &v, beta).unwrap().stream(), v.stream()) < 1e-13);
            let e = rel(lambda_apply(&id, &v, beta).unwrap().stream(), v.stream());
            assert!(e < 1e-11, "{e:e}");
            assert!(rel(lambda_inverse_apply(&id, &v, beta).unwrap().stream(), v.stream()) < 1e-11);
        }
    }

    #[test]
    fn adjoint_is_linear() {
        let g = SpectralGrid::new(32).unwrap();
        let eta = twisted(&g, 0.4, 0.3);
        let v = random_exact(&g, 3, 2);
        let w = random_exact(&g, 3, 3);
        let lhs = adjoint(&eta, &v.scaled(2.0).axpy(-0.5, &w)).unwrap();
        let rhs = adjoint(&eta, &v).unwrap().scaled(2.0).axpy(-0.5, &adjoint(&eta, &w).unwrap());
        assert!(rel(lhs.stream(), rhs.stream()) < 1e-13);
    }

    #[test]
    fn adjoint_of_shear_matches_composition() {
        let g = SpectralGrid::new(64).unwrap();
        let t = 0.5;
        let shear = DiffeoSample::new(
            FlowMap::from_fn(&g, |x, y| [x + t * y.sin(), y]),
            Some(FlowMap::from_fn(&g, |x, y| [x - t * y.sin(), y])),
            t,
        );
        // psi o eta^{-1} for psi = cos x is cos(x - t sin y).
        let v = VectorFieldExact::from_stream(ScalarField::from_fn(&g, |x, _| x.cos()));
        let out = adjoint(&shear, &v).unwrap().stream().to_physical();
        let expect: Vec<f64> = g.points().iter().map(|p| (p[0] - t * p[1].sin()).cos()).collect();
        let err = out.iter().zip(&expect).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "{err:e}");
    }

    #[test]
    fn adjoint_requires_inverse() {
        let g = SpectralGrid::new(16).unwrap();
        let eta = DiffeoSample::new(FlowMap::identity(&g), None, 0.0);
        let v = random_exact(&g, 2, 1);
        assert!(matches!(adjoint(&eta, &v), Err(Error::MissingInverse)));
        assert!(matches!(lambda_inverse_apply(&eta, &v, 0.5), Err(Error::MissingInverse)));
    }

    #[test]
    fn bracket_examples() {
        let g = SpectralGrid::new(32).unwrap();
        let u = random_exact(&g, 4, 5);
        let v = random_exact(&g, 4, 6);
        assert!(ad_bracket(&u, &u).unwrap().stream().max_abs_coefficient() < 1e-14);
        let a = ad_bracket(&u, &v).unwrap();
        let b = ad_bracket(&v, &u).unwrap();
        assert!(a.stream().add(b.stream()).max_abs_coefficient() < 1e-13);
        let cx = VectorFieldExact::from_stream(ScalarField::from_fn(&g, |x, _| x.cos()));
        let cy = VectorFieldExact::from_stream(ScalarField::from_fn(&g, |_, y| y.cos()));
        let s = ad_bracket(&cx, &cy).unwrap().stream().to_physical();
        for (val, p) in s.iter().zip(g.points()) {
            assert!((val + p[0].sin() * p[1].sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn coadjoint_algebra_examples() {
        let g = SpectralGrid::new(32).unwrap();
        let c = VectorFieldExact::from_stream(ScalarField::from_fn(&g, |_, y| y.cos()));
        for beta in [0.0, 0.5, 1.0] {
            assert!(coadjoint_algebra(&c, &c, beta).unwrap().stream().max_abs_coefficient() < 1e-14);
        }
        assert!(coadjoint_algebra(&c, &c, 1.2).is_err());
        // beta = 0 is the Euler coadjoint grad_perp (-Delta)^{-1} {-Delta psi_v, psi_u}.
        let u = random_exact(&g, 4, 8);
        let v = random_exact(&g, 4, 9);
        let lap_v = v.stream().map_multiplier(|kx, ky| Complex64::new((kx * kx + ky * ky) as f64, 0.0));
        let b = poisson_bracket(&lap_v, u.stream()).unwrap();
        let inv = b.map_multiplier(|kx, ky| {
            let k2 = (kx * kx + ky * ky) as f64;
            Complex64::new(if k2 > 0.0 { 1.0 / k2 } else { 0.0 }, 0.0)
        });
        let ours = coadjoint_algebra(&u, &v, 0.0).unwrap();
        assert!(rel(ours.stream(), &inv) < 1e-13);
    }

    #[test]
    fn algebra_duality() {
        let g = SpectralGrid::new(32).unwrap();
        for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for seed in 0..3 {
                let u = random_exact(&g, 4, 10 + seed);
                let v = random_exact(&g, 4, 20 + seed);
                let w = random_exact(&g, 4, 30 + seed);
                let lhs = inner_product_beta(coadjoint_algebra(&u, &v, beta).unwrap().stream(), w.stream(), beta).unwrap();
                let rhs = inner_product_beta(v.stream(), ad_bracket(&u, &w).unwrap().stream(), beta).unwrap();
                assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "beta {beta}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn group_duality_and_l2_route() {
        let g = SpectralGrid::new(64).unwrap();
        let eta = twisted(&g, 0.5, 0.3);
        for beta in [0.0, 0.5, 1.0] {
            let u = random_exact(&g, 3, 40);
            let v = random_exact(&g, 3, 41);
            let lhs = inner_product_beta(coadjoint_group(&eta, &u, beta).unwrap().stream(), v.stream(), beta).unwrap();
            let rhs = inner_product_beta(u.stream(), adjoint(&eta, &v).unwrap().stream(), beta).unwrap();
            assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0), "beta {beta}: {lhs} vs {rhs}");
            let a = coadjoint_group(&eta, &u, beta).unwrap();
            let b = coadjoint_group_l2(&eta, &u, beta).unwrap();
            assert!(rel(b.stream(), a.stream()) < 1e-6, "beta {beta}: {:e}", rel(b.stream(), a.stream()));
        }
    }

    #[test]
    fn lambda_routes_agree_and_invert() {
        let g = SpectralGrid::new(64).unwrap();
        let eta = twisted(&g, 0.4, 0.25);
        for beta in [0.0, 0.5, 1.0] {
            let v = random_exact(&g, 3, 50);
            let a = lambda_apply(&eta, &v, beta).unwrap();
            let b = lambda_apply_fused(&eta, &v, beta).unwrap();
            assert!(rel(b.stream(), a.stream()) < 1e-8, "fused {:e}", rel(b.stream(), a.stream()));
            let back = lambda_apply(&eta, &lambda_inverse_apply(&eta, &v, beta).unwrap(), beta).unwrap();
            assert!(rel(back.stream(), v.stream()) < 1e-4, "round trip {:e}", rel(back.stream(), v.stream()));
            let q = inner_product_beta(a.stream(), v.stream(), beta).unwrap();
            let adv = adjoint(&eta, &v).unwrap();
            let norm = inner_product_beta(adv.stream(), adv.stream(), beta).unwrap();
            assert!(q > 0.0 && (q - norm).abs() < 1e-8 * norm);
        }
    }

    #[test]
    fn lambda_inverse_beta_zero_specialization() {
        let g = SpectralGrid::new(64).unwrap();
        let eta = twisted(&g, 0.3, 0.2);
        let v = random_exact(&g, 3, 60);
        let lap = v.stream().map_multiplier(|kx, ky| Complex64::new((kx * kx + ky * ky) as f64, 0.0));
        let pulled = eta.right_translate_inverse(&lap).unwrap();
        let solved = pulled.map_multiplier(|kx, ky| {
            let k2 = (kx * kx + ky * ky) as f64;
            Complex64::new(if k2 > 0.0 { 1.0 / k2 } else { 0.0 }, 0.0)
        });
        let expect = eta.right_translate(&solved);
        let got = lambda_inverse_apply(&eta, &v, 0.0).unwrap();
        assert!(rel(got.stream(), &expect) < 1e-12);
    }
}
