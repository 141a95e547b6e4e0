//! Invariant suite behind the `verify` command.

use gsqg_core::euler_arnold::{simulate, step_rk4, theta_from_stream, velocity, InitialCondition, SolverConfig};
use gsqg_core::group_ops::{ad_bracket, coadjoint_algebra};
use gsqg_core::jacobi::{detect_conjugate, evolve_phi, ConjugateReport, ThresholdPolicy};
use gsqg_core::morse::{self, weyl_count, MorseInput, Spectrum};
use gsqg_core::spectral::{inner_product_beta, poisson_bracket, ScalarField, SpectralGrid, VectorFieldExact};
use gsqg_core::sphere_rotation::{
    closed_form, cluster_scan, conjugate_time, first_zero, SphereBackend, SphereMode, CLUSTER_LIMIT,
};
use std::f64::consts::{PI, TAU};
use std::io::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        eprintln!("{name}: {err}");
        Self {
            name,
            value: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} value={:.6e} tol={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

pub fn write_csv(checks: &[Check], mut w: impl Write) -> gsqg_core::Result<()> {
    writeln!(w, "property,value,tolerance,status")?;
    for c in checks {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{}",
            c.name,
            c.value,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(())
}

type Probe = fn() -> gsqg_core::Result<Check>;

fn sphere_first_zero() -> gsqg_core::Result<Check> {
    let mut worst: f64 = 0.0;
    for beta in [0.0, 0.5, 1.0] {
        for n in 1..=5 {
            let t = conjugate_time(n, beta)?;
            worst = worst.max((first_zero(&SphereMode::new(n, beta)?, 1e-3, 1.5 * t)? - t).abs());
        }
    }
    Ok(Check::below("sphere_first_zero", worst, 1e-6))
}

fn sphere_closed_form() -> gsqg_core::Result<Check> {
    let mut worst: f64 = 0.0;
    for beta in [0.0, 0.5, 1.0] {
        for n in 1..=20 {
            let (xi, sigma) = closed_form(conjugate_time(n, beta)?, &SphereMode::new(n, beta)?)?;
            worst = worst.max(sigma.norm()).max((xi.norm() - 1.0).abs());
        }
    }
    Ok(Check::below("sphere_closed_form_zero", worst, 1e-12))
}

fn clustering() -> gsqg_core::Result<Check> {
    let scan = cluster_scan(1.0, 200)?;
    let decreasing = scan.rows.windows(2).all(|w| w[1].1 < w[0].1);
    let excess = scan
        .rows
        .iter()
        .map(|(n, t)| t - CLUSTER_LIMIT - CLUSTER_LIMIT / (2.0 * *n as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut c = Check::below("clustering_at_beta_one", excess, 0.0);
    c.pass &= decreasing;
    Ok(c)
}

fn steady_state() -> gsqg_core::Result<Check> {
    let g = SpectralGrid::new(32)?;
    let psi = InitialCondition::Cosy.stream(&g)?;
    let mut worst: f64 = 0.0;
    for beta in [0.0, 0.5, 1.0] {
        let theta0 = theta_from_stream(&psi, beta);
        let mut theta = theta0.clone();
        for _ in 0..1000 {
            theta = step_rk4(&theta, beta, 1e-3)?;
        }
        worst = worst.max(theta.sub(&theta0).l2_norm() / theta0.l2_norm());
    }
    Ok(Check::below("steady_cosy", worst, 1e-10))
}

fn conservation() -> gsqg_core::Result<Check> {
    let g = SpectralGrid::new(32)?;
    let psi = InitialCondition::Random { seed: 1, kmax: 3 }.stream(&g)?;
    let cfg = SolverConfig {
        beta: 0.5,
        n: 32,
        dt: 5e-3,
        t_final: 0.5,
        stride: 50,
        ..SolverConfig::default()
    };
    let rec = simulate(&psi, &cfg).map_err(|a| a.error)?;
    let (e0, l0) = (rec.diagnostics[0].energy, rec.diagnostics[0].theta_l2);
    let drift = rec
        .diagnostics
        .iter()
        .map(|r| ((r.energy - e0) / e0).abs().max(((r.theta_l2 - l0) / l0).abs()))
        .fold(0.0, f64::max);
    Ok(Check::below("energy_and_l2_conservation", drift, 1e-8))
}

fn low_mode_field(g: &SpectralGrid, seed: u64) -> gsqg_core::Result<ScalarField> {
    InitialCondition::Random { seed, kmax: 4 }.stream(g)
}

fn bracket_antisymmetry() -> gsqg_core::Result<Check> {
    let g = SpectralGrid::new(32)?;
    let (f, h) = (low_mode_field(&g, 21)?, low_mode_field(&g, 22)?);
    let a = poisson_bracket(&f, &h)?;
    let b = poisson_bracket(&h, &f)?;
    Ok(Check::below("bracket_antisymmetry", a.add(&b).l2_norm() / a.l2_norm(), 1e-13))
}

fn coadjoint_duality() -> gsqg_core::Result<Check> {
    let g = SpectralGrid::new(32)?;
    let beta = 0.5;
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        let u = VectorFieldExact::from_stream(low_mode_field(&g, 100 + 3 * s)?);
        let v = VectorFieldExact::from_stream(low_mode_field(&g, 101 + 3 * s)?);
        let w = VectorFieldExact::from_stream(low_mode_field(&g, 102 + 3 * s)?);
        let lhs = inner_product_beta(coadjoint_algebra(&u, &v, beta)?.stream(), w.stream(), beta)?;
        let rhs = inner_product_beta(v.stream(), ad_bracket(&u, &w)?.stream(), beta)?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    Ok(Check::below("coadjoint_duality", worst, 1e-8))
}

fn weyl_counts() -> gsqg_core::Result<Check> {
    let torus = Spectrum::torus(4)?;
    let sphere = Spectrum::sphere(4)?;
    let cases = [
        (weyl_count(&torus, 0.5)?, 0),
        (weyl_count(&torus, 1.0)?, 4),
        (weyl_count(&torus, 2.0)?, 8),
        (weyl_count(&torus, 4.0)?, 12),
        (weyl_count(&sphere, 2.0)?, 3),
        (weyl_count(&sphere, 6.0)?, 8),
    ];
    let wrong = cases.iter().filter(|(a, b)| a != b).count();
    Ok(Check::below("weyl_counts", wrong as f64, 0.0))
}

fn reference_input(beta: f64) -> gsqg_core::Result<MorseInput> {
    let mut input = MorseInput {
        delta: 1.0,
        c: 16.0,
        t: PI,
        beta,
        spectrum: Spectrum::torus(1)?,
    };
    input.spectrum = Spectrum::covering(input.spectrum.source, morse::threshold(&input, 1))?;
    Ok(input)
}

fn morse_reference() -> gsqg_core::Result<Check> {
    let aleph = morse::morse_bound(&reference_input(0.0)?)?.aleph;
    Ok(Check::below("morse_reference_count", (aleph as f64 - 8.0).abs(), 0.0))
}

fn morse_divergence() -> gsqg_core::Result<Check> {
    let counts = [0.0, 0.5, 0.75]
        .iter()
        .map(|&b| morse::morse_bound(&reference_input(b)?).map(|r| r.aleph))
        .collect::<gsqg_core::Result<Vec<_>>>()?;
    let violations = counts.windows(2).filter(|w| w[1] <= w[0]).count();
    Ok(Check::below("morse_increasing_in_beta", violations as f64, 0.0))
}

fn sphere_scan(beta: f64) -> gsqg_core::Result<(SphereBackend, ConjugateReport)> {
    let backend = SphereBackend::new(beta, 6, 1.1 * TAU, 220)?;
    let report = detect_conjugate(&evolve_phi(&backend, 4)?, ThresholdPolicy::default());
    Ok((backend, report))
}

fn sphere_detection() -> gsqg_core::Result<Check> {
    let (_, report) = sphere_scan(0.5)?;
    let err = match report.points.first() {
        Some(p) if p.multiplicity == 2 => (p.t - TAU).abs(),
        _ => f64::INFINITY,
    };
    Ok(Check::below("sphere_conjugate_detection", err, 1e-4))
}

fn sphere_upper_bound() -> gsqg_core::Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    for beta in [0.0, 0.5] {
        let (backend, report) = sphere_scan(beta)?;
        let input = MorseInput {
            delta: morse::sphere_delta(&backend)?,
            c: morse::sphere_c(&backend)?.value,
            t: 1.1 * TAU,
            beta,
            spectrum: Spectrum::sphere(40)?,
        };
        let aleph = morse::morse_bound(&input)?.aleph;
        worst = worst.max(report.count() as f64 - aleph as f64);
    }
    Ok(Check::below("sphere_count_within_bound", worst, 0.0))
}

fn steady_velocity_zero_transport() -> gsqg_core::Result<Check> {
    let g = SpectralGrid::new(32)?;
    let psi = InitialCondition::Cosy.stream(&g)?;
    let theta = theta_from_stream(&psi, 0.5);
    let u = velocity(&theta, 0.5);
    let rhs = poisson_bracket(u.stream(), &theta)?;
    Ok(Check::below("steady_rhs_vanishes", rhs.l2_norm(), 1e-13))
}

const PROBES: [(&str, Probe); 13] = [
    ("sphere_first_zero", sphere_first_zero),
    ("sphere_closed_form_zero", sphere_closed_form),
    ("clustering_at_beta_one", clustering),
    ("steady_cosy", steady_state),
    ("steady_rhs_vanishes", steady_velocity_zero_transport),
    ("energy_and_l2_conservation", conservation),
    ("bracket_antisymmetry", bracket_antisymmetry),
    ("coadjoint_duality", coadjoint_duality),
    ("weyl_counts", weyl_counts),
    ("morse_reference_count", morse_reference),
    ("morse_increasing_in_beta", morse_divergence),
    ("sphere_conjugate_detection", sphere_detection),
    ("sphere_count_within_bound", sphere_upper_bound),
];

/// Runs every probe; a probe that errors is recorded as a failure.
pub fn suite() -> Vec<Check> {
    PROBES
        .iter()
        .map(|(name, probe)| probe().unwrap_or_else(|e| Check::failed(name, e)))
        .collect()
}
