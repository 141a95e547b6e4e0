//! Time integration of the generalized SQG family
//! `d_t theta + u . grad theta = 0`, `u = grad_perp (-Delta)^{beta/2 - 1} theta`,
//! together with the flow map and its inverse.

use crate::error::{check_beta, Error, Result};
use crate::flow::{label_rate, particle_velocity, transport_check, FlowMap, LabelMap};
use crate::group_ops::DiffeoSample;
use crate::spectral::{
    frac_laplacian_unchecked, inner_product_beta_unchecked, poisson_bracket, InterpMethod, ScalarField,
    SpectralGrid, VectorFieldExact,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

/// Largest admissible Courant number `dt max|u| N / (2 pi)`.
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub beta: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n: usize,
    /// Steps between recorded snapshots.
    pub stride: usize,
    /// Off-grid evaluation used for particle velocities and the transport residual.
    pub interp: InterpMethod,
    /// Strength of the optional exponential filter `exp(-a (|k|/k_c)^36)`.
    pub filter: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            dt: 1e-3,
            t_final: 1.0,
            n: 64,
            stride: 10,
            interp: InterpMethod::Gaussian,
            filter: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidInput(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidInput("stride must be at least 1".into()));
        }
        if let Some(a) = self.filter {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidInput(format!("filter strength must be nonnegative, got {a}")));
            }
        }
        SpectralGrid::new(self.n).map(|_| ())
    }

    /// Number of steps; `t_final` is rounded to a whole number of steps.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }
}

/// Named initial streams.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    /// `psi_0 = -cos y`, a steady state for every beta.
    Cosy,
    /// `psi_0 = -cos y + 0.1 cos x`.
    Shear,
    /// Random modes with `|k_x|, |k_y| <= kmax`, amplitudes `|k|^{-2}`,
    /// scaled to `max|u_0| = 1`.
    Random { seed: u64, kmax: usize },
}

impl FromStr for InitialCondition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cosy" => Ok(Self::Cosy),
            "shear" => Ok(Self::Shear),
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                match parts.as_slice() {
                    ["random", seed, kmax] => {
                        let seed = seed.parse().map_err(|_| format!("bad seed in '{s}'"))?;
                        let kmax: usize = kmax.parse().map_err(|_| format!("bad KMAX in '{s}'"))?;
                        if kmax == 0 {
                            return Err(format!("KMAX must be at least 1 in '{s}'"));
                        }
                        Ok(Self::Random { seed, kmax })
                    }
                    _ => Err(format!("unknown initial condition '{s}' (expected cosy, shear or random:SEED:KMAX)")),
                }
            }
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cosy => write!(f, "cosy"),
            Self::Shear => write!(f, "shear"),
            Self::Random { seed, kmax } => write!(f, "random:{seed}:{kmax}"),
        }
    }
}

impl InitialCondition {
    pub fn stream(&self, grid: &SpectralGrid) -> Result<ScalarField> {
        match self {
            Self::Cosy => Ok(ScalarField::cos_mode(grid, 0, 1).scaled(-1.0)),
            Self::Shear => Ok(ScalarField::cos_mode(grid, 0, 1)
                .scaled(-1.0)
                .axpy(0.1, &ScalarField::cos_mode(grid, 1, 0))),
            Self::Random { seed, kmax } => {
                if *kmax > grid.cutoff() {
                    return Err(Error::InvalidInput(format!(
                        "random KMAX = {kmax} exceeds the dealiasing cutoff {} at N = {}",
                        grid.cutoff(),
                        grid.n()
                    )));
                }
                let k = *kmax as i64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut psi = ScalarField::zeros(grid);
                for kx in 0..=k {
                    for ky in -k..=k {
                        if kx == 0 && ky <= 0 {
                            continue;
                        }
                        let amp = 1.0 / (kx * kx + ky * ky) as f64;
                        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        psi.add_mode(kx, ky, c * amp);
                    }
                }
                let speed = VectorFieldExact::from_stream(psi.clone()).max_speed();
                Ok(psi.scaled(1.0 / speed))
            }
        }
    }
}

/// `theta = (-Delta)^{1 - beta/2} psi`.
pub fn theta_from_stream(psi: &ScalarField, beta: f64) -> ScalarField {
    frac_laplacian_unchecked(psi, 1.0 - 0.5 * beta)
}

/// `psi = (-Delta)^{beta/2 - 1} theta`.
pub fn stream_from_theta(theta: &ScalarField, beta: f64) -> ScalarField {
    frac_laplacian_unchecked(theta, 0.5 * beta - 1.0)
}

pub fn velocity(theta: &ScalarField, beta: f64) -> VectorFieldExact {
    VectorFieldExact::from_stream(stream_from_theta(theta, beta))
}

/// `d_t theta = -u . grad theta = {psi, theta}`.
pub fn rhs(theta: &ScalarField, beta: f64) -> Result<ScalarField> {
    check_beta(beta)?;
    if !theta.is_mean_zero() {
        return Err(Error::NonZeroMean { mean: theta.mean() });
    }
    poisson_bracket(&stream_from_theta(theta, beta), theta)
}

fn check_cfl(u: &VectorFieldExact, dt: f64) -> Result<()> {
    let max_u = u.max_speed();
    let courant = dt * max_u * u.grid().n() as f64 / std::f64::consts::TAU;
    if courant > CFL_LIMIT || !courant.is_finite() {
        return Err(Error::Cfl { courant, max_u });
    }
    Ok(())
}

/// One classical RK4 step of the scalar equation.
pub fn step_rk4(theta: &ScalarField, beta: f64, dt: f64) -> Result<ScalarField> {
    check_beta(beta)?;
    check_cfl(&velocity(theta, beta), dt)?;
    let k1 = rhs(theta, beta)?;
    let k2 = rhs(&theta.axpy(0.5 * dt, &k1), beta)?;
    let k3 = rhs(&theta.axpy(0.5 * dt, &k2), beta)?;
    let k4 = rhs(&theta.axpy(dt, &k3), beta)?;
    Ok(theta
        .axpy(dt / 6.0, &k1)
        .axpy(dt / 3.0, &k2)
        .axpy(dt / 3.0, &k3)
        .axpy(dt / 6.0, &k4))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    pub energy: f64,
    pub theta_l2: f64,
    pub max_u: f64,
    pub det_jac_err: f64,
    pub transport_residual: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "t,energy,theta_l2,max_u,det_jac_err,transport_residual";

/// Time-sampled geodesic `gamma(t) = exp(t u_0)`.
#[derive(Clone, Debug)]
pub struct GeodesicRecord {
    pub config: SolverConfig,
    pub psi0: ScalarField,
    pub times: Vec<f64>,
    pub theta: Vec<ScalarField>,
    pub diffeos: Vec<DiffeoSample>,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl GeodesicRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.psi0.grid()
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    pub fn u0(&self) -> VectorFieldExact {
        VectorFieldExact::from_stream(self.psi0.clone())
    }

    pub fn velocity(&self, i: usize) -> VectorFieldExact {
        velocity(&self.theta[i], self.config.beta)
    }
}

/// A run stopped by a numerical failure, with everything recorded so far.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub partial: GeodesicRecord,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.partial.times.last().copied().unwrap_or(0.0);
        write!(f, "{} (last good snapshot at t = {t})", self.error)
    }
}

impl std::error::Error for Aborted {}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

/// State advanced jointly: the scalar, the particle displacement of `gamma`
/// and the label displacement of `gamma^{-1}`.
#[derive(Clone)]
struct State {
    theta: ScalarField,
    px: Vec<f64>,
    py: Vec<f64>,
    labels: LabelMap,
}

struct Rate {
    theta: ScalarField,
    px: Vec<f64>,
    py: Vec<f64>,
    labels: LabelMap,
}

impl State {
    fn axpy(&self, h: f64, r: &Rate) -> State {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a + h * b).collect();
        State {
            theta: self.theta.axpy(h, &r.theta),
            px: add(&self.px, &r.px),
            py: add(&self.py, &r.py),
            labels: self.labels.axpy(h, &r.labels),
        }
    }

    fn is_finite(&self) -> bool {
        self.theta.is_finite()
            && self.px.iter().chain(&self.py).all(|v| v.is_finite())
            && self.labels.is_finite()
    }
}

fn rate(s: &State, beta: f64, base: &[[f64; 2]], method: InterpMethod) -> Result<Rate> {
    let u = velocity(&s.theta, beta);
    let theta = poisson_bracket(u.stream(), &s.theta)?;
    let pos: Vec<[f64; 2]> = base
        .iter()
        .enumerate()
        .map(|(i, p)| [p[0] + s.px[i], p[1] + s.py[i]])
        .collect();
    let (px, py) = particle_velocity(&u, &pos, method);
    Ok(Rate {
        theta,
        px,
        py,
        labels: label_rate(&s.labels, &u),
    })
}

fn filter(theta: &ScalarField, strength: f64) -> ScalarField {
    let kc = theta.grid().cutoff() as f64;
    theta.map_multiplier(|kx, ky| {
        let r = ((kx * kx + ky * ky) as f64).sqrt() / kc;
        Complex64::new((-strength * r.powi(36)).exp(), 0.0)
    })
}

/// Integrates from `psi_0` and records snapshots every `stride` steps (and at
/// the final time).
pub fn simulate(psi0: &ScalarField, config: &SolverConfig) -> std::result::Result<GeodesicRecord, Box<Aborted>> {
    let grid = psi0.grid().clone();
    let mut record = GeodesicRecord {
        config: config.clone(),
        psi0: psi0.clone(),
        times: Vec::new(),
        theta: Vec::new(),
        diffeos: Vec::new(),
        diagnostics: Vec::new(),
    };
    let fail = |error: Error, record: GeodesicRecord| Box::new(Aborted { error, partial: record });
    if let Err(e) = config.validate() {
        return Err(fail(e, record));
    }
    if grid.n() != config.n {
        return Err(fail(Error::GridMismatch { left: grid.n(), right: config.n }, record));
    }
    if !psi0.is_mean_zero() {
        return Err(fail(Error::NonZeroMean { mean: psi0.mean() }, record));
    }
    let beta = config.beta;
    let theta0 = theta_from_stream(psi0, beta);
    let base = grid.points();
    let mut state = State {
        theta: theta0.clone(),
        px: vec![0.0; grid.len()],
        py: vec![0.0; grid.len()],
        labels: LabelMap::identity(&grid),
    };
    let steps = config.steps();
    let dt = config.dt;
    record_snapshot(&mut record, &state, 0.0, &theta0, config.interp);
    for step in 0..steps {
        let t = step as f64 * dt;
        if let Err(e) = check_cfl(&velocity(&state.theta, beta), dt) {
            return Err(fail(e, record));
        }
        let next = (|| -> Result<State> {
            let k1 = rate(&state, beta, &base, config.interp)?;
            let k2 = rate(&state.axpy(0.5 * dt, &k1), beta, &base, config.interp)?;
            let k3 = rate(&state.axpy(0.5 * dt, &k2), beta, &base, config.interp)?;
            let k4 = rate(&state.axpy(dt, &k3), beta, &base, config.interp)?;
            let mut s = state
                .axpy(dt / 6.0, &k1)
                .axpy(dt / 3.0, &k2)
                .axpy(dt / 3.0, &k3)
                .axpy(dt / 6.0, &k4);
            if let Some(a) = config.filter {
                s.theta = filter(&s.theta, a);
            }
            Ok(s)
        })();
        match next {
            Ok(s) if s.is_finite() => state = s,
            Ok(_) => return Err(fail(Error::NonFinite { t: t + dt }, record)),
            Err(e) => return Err(fail(e, record)),
        }
        if (step + 1) % config.stride == 0 || step + 1 == steps {
            record_snapshot(&mut record, &state, (step + 1) as f64 * dt, &theta0, config.interp);
        }
    }
    Ok(record)
}

fn record_snapshot(record: &mut GeodesicRecord, s: &State, t: f64, theta0: &ScalarField, method: InterpMethod) {
    let grid = s.theta.grid();
    let forward = FlowMap::from_displacement(grid, s.px.clone(), s.py.clone()).expect("grid-sized displacement");
    let inverse = s.labels.to_flow_map();
    let beta = record.config.beta;
    let u = velocity(&s.theta, beta);
    let transport_residual = if t == 0.0 || theta0.max_abs_coefficient() == 0.0 {
        0.0
    } else {
        transport_check(&s.theta, &forward, theta0, method).unwrap_or(f64::NAN)
    };
    record.diagnostics.push(DiagnosticRow {
        t,
        energy: 0.5 * inner_product_beta_unchecked(u.stream(), u.stream(), beta),
        theta_l2: s.theta.l2_norm(),
        max_u: u.max_speed(),
        det_jac_err: forward.det_error(),
        transport_residual,
    });
    record.times.push(t);
    record.theta.push(s.theta.clone());
    record.diffeos.push(DiffeoSample::new(forward, Some(inverse), t));
}

/// Diagnostics table, one row per snapshot.
pub fn diagnostics(record: &GeodesicRecord) -> &[DiagnosticRow] {
    &record.diagnostics
}

pub fn write_diagnostics_csv(rows: &[DiagnosticRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.energy, r.theta_l2, r.max_u, r.det_jac_err, r.transport_residual
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> SpectralGrid {
        SpectralGrid::new(n).unwrap()
    }

    #[test]
    fn presets_parse_and_round_trip() {
        for s in ["cosy", "shear", "random:7:4"] {
            let ic: InitialCondition = s.parse().unwrap();
            assert_eq!(ic.to_string(), s);
        }
        assert!("random:x:3".parse::<InitialCondition>().is_err());
        assert!("random:1:0".parse::<InitialCondition>().is_err());
        assert!("vortex".parse::<InitialCondition>().is_err());
        let g = grid(32);
        let r = InitialCondition::Random { seed: 3, kmax: 4 }.stream(&g).unwrap();
        assert!((VectorFieldExact::from_stream(r.clone()).max_speed() - 1.0).abs() < 1e-12);
        assert!(r.is_mean_zero() && r.is_dealiased());
        assert!(InitialCondition::Random { seed: 3, kmax: 11 }.stream(&g).is_err());
    }

    #[test]
    fn rhs_of_single_mode_vanishes() {
        let g = grid(32);
        let theta = ScalarField::cos_mode(&g, 0, 1);
        for beta in [0.0, 0.3, 1.0] {
            assert!(rhs(&theta, beta).unwrap().max_abs_coefficient() < 1e-15);
        }
        assert!(matches!(rhs(&theta, -0.1), Err(Error::BetaOutOfRange(_))));
    }

    #[test]
    fn rhs_matches_finite_differences() {
        // Both modes of cos x + cos y share |k| = 1, so the transport vanishes.
        let g = grid(32);
        let both = ScalarField::from_fn(&g, |x, y| x.cos() + y.cos());
        assert!(rhs(&both, 0.0).unwrap().max_abs_coefficient() < 1e-14);
        // theta = cos x + cos 2y at beta = 0: psi = cos x + cos(2y)/4,
        // u = (sin(2y)/2, -sin x), against centered differences of theta.
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let g = grid(n);
            let theta = ScalarField::from_fn(&g, |x, y| x.cos() + (2.0 * y).cos());
            let r = rhs(&theta, 0.0).unwrap().to_physical();
            let h = g.spacing();
            let th = theta.to_physical();
            let at = |i: usize, j: usize| th[(i % n) * n + j % n];
            let mut err = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let (x, y) = (g.coordinate(i), g.coordinate(j));
                    let tx = (at(i + 1, j) - at(i + n - 1, j)) / (2.0 * h);
                    let ty = (at(i, j + 1) - at(i, j + n - 1)) / (2.0 * h);
                    let fd = -(0.5 * (2.0 * y).sin() * tx - x.sin() * ty);
                    err = err.max((fd - r[i * n + j]).abs());
                }
            }
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.2, "{errs:?}");
    }

    #[test]
    fn rhs_conserves_energy_instantaneously() {
        let g = grid(64);
        for beta in [0.0, 0.5, 1.0] {
            for seed in 0..3 {
                let psi = InitialCondition::Random { seed, kmax: 8 }.stream(&g).unwrap();
                let theta = theta_from_stream(&psi, beta);
                let r = rhs(&theta, beta).unwrap();
                // dE/dt = <u, u_t>_beta = int psi theta_t.
                let de = psi.l2_inner(&r);
                assert!(de.abs() < 1e-12, "beta {beta}: {de:e}");
                assert!(theta.l2_inner(&r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn steady_step_is_fixed_point() {
        let g = grid(32);
        let theta = ScalarField::cos_mode(&g, 0, 1);
        let next = step_rk4(&theta, 0.5, 1e-2).unwrap();
        assert!(next.sub(&theta).max_abs_coefficient() < 1e-13);
    }

    #[test]
    fn cfl_violation_reports_speed() {
        let g = grid(32);
        let theta = ScalarField::cos_mode(&g, 0, 1).scaled(50.0);
        match step_rk4(&theta, 0.0, 0.1) {
            Err(Error::Cfl { max_u, courant }) => {
                assert!((max_u - 50.0).abs() < 1e-9);
                assert!(courant > CFL_LIMIT);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn steady_simulation() {
        let g = grid(32);
        let psi = InitialCondition::Cosy.stream(&g).unwrap();
        let cfg = SolverConfig {
            n: 32,
            dt: 1e-2,
            t_final: 0.5,
            stride: 10,
            ..SolverConfig::default()
        };
        let rec = simulate(&psi, &cfg).unwrap();
        assert_eq!(rec.times.len(), 6);
        assert!((rec.times[5] - 0.5).abs() < 1e-15);
        let first = rec.diagnostics[0];
        assert_eq!(first.transport_residual, 0.0);
        assert_eq!(first.det_jac_err, 0.0);
        for row in &rec.diagnostics {
            assert!((row.energy - first.energy).abs() < 1e-12 * first.energy);
            assert!(row.transport_residual < 1e-10);
        }
        let last = rec.theta.last().unwrap();
        assert!(last.sub(&rec.theta[0]).l2_norm() < 1e-10 * rec.theta[0].l2_norm());
    }

    #[test]
    fn aborts_with_partial_record() {
        let g = grid(32);
        let psi = InitialCondition::Random { seed: 1, kmax: 4 }.stream(&g).unwrap().scaled(40.0);
        let cfg = SolverConfig {
            n: 32,
            dt: 0.05,
            t_final: 1.0,
            stride: 1,
            ..SolverConfig::default()
        };
        let err = simulate(&psi, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::Cfl { .. }));
        assert_eq!(err.partial.len(), 1);
        assert_eq!(err.partial.times[0], 0.0);
    }

    #[test]
    fn csv_layout() {
        let row = DiagnosticRow {
            t: 0.0,
            energy: 1.0,
            theta_l2: 2.0,
            max_u: 0.5,
            det_jac_err: 0.0,
            transport_residual: 0.0,
        };
        let mut buf = Vec::new();
        write_diagnostics_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), DIAGNOSTICS_HEADER);
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[1], "1.0000000000000000e0");
    }
}
