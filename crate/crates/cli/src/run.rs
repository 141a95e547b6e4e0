//! Command dispatch and artifact persistence.

use crate::config::{Auto, Command, ConfigError, RunConfig, SpectrumKind};
use crate::verify;
use gsqg_core::euler_arnold::{simulate, write_diagnostics_csv, GeodesicRecord, SolverConfig};
use gsqg_core::jacobi::{
    detect_conjugate, evolve_phi, gamma_singular_values, omega_gamma_split, write_conjugate_csv, ConjugateReport,
    GalerkinBasis, OperatorSample, ThresholdPolicy, TorusBackend,
};
use gsqg_core::morse::{self, MorseInput, Spectrum, BOUND_HEADER};
use gsqg_core::spectral::{write_field, SpectralGrid};
use gsqg_core::sphere_rotation::{cluster_scan, conjugate_time, first_zero, write_scan_csv, SphereBackend, SphereMode};
use gsqg_core::{exec, Error};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{0} verification properties failed")]
    Verify(usize),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Input(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Coverage(_) => 4,
            RunError::Io(_) | RunError::Verify(_) => 1,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::BetaOutOfRange(_) => RunError::Input(e.to_string()),
            Error::Coverage { .. } => RunError::Coverage(e.to_string()),
            Error::Io(s) => RunError::Io(s),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Files written into the output directory, in order.
struct Sink {
    dir: PathBuf,
    files: Vec<String>,
}

impl Sink {
    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> gsqg_core::Result<()>,
    ) -> Result<(), RunError> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub artifacts: Vec<String>,
    /// Human-readable lines for standard output.
    pub summary: Vec<String>,
}

pub fn sha256_hex(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(cfg: &RunConfig, sink: &Sink, status: &str) -> Result<(), RunError> {
    let mut text = String::from("# gsqg run manifest\n");
    text += &cfg.render();
    text += &format!("status = {status}\n\n[artifacts]\n");
    for name in &sink.files {
        text += &format!("{}  {name}\n", sha256_hex(&sink.dir.join(name))?);
    }
    fs::write(sink.dir.join("manifest.txt"), text)?;
    Ok(())
}

/// Validates `cfg`, runs its command into `out` and writes `manifest.txt`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Outcome, RunError> {
    cfg.validate()?;
    if cfg.deterministic {
        exec::set_sequential(true);
    }
    fs::create_dir_all(out)?;
    let mut sink = Sink {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let result = match cfg.command {
        Command::Simulate => cmd_simulate(cfg, &mut sink),
        Command::Jacobi => cmd_jacobi(cfg, &mut sink),
        Command::ConjugateScan => cmd_conjugate_scan(cfg, &mut sink),
        Command::SphereExample => cmd_sphere_example(cfg, &mut sink),
        Command::MorseBound => cmd_morse_bound(cfg, &mut sink),
        Command::Verify => cmd_verify(cfg, &mut sink),
    };
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("failed (exit {})", e.exit_code()),
    };
    write_manifest(cfg, &sink, &status)?;
    result.map(|summary| Outcome {
        artifacts: sink.files,
        summary,
    })
}

fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        beta: cfg.beta,
        dt: cfg.dt,
        t_final: cfg.t_final,
        n: cfg.n,
        stride: cfg.stride,
        interp: cfg.interp,
        filter: cfg.filter,
    }
}

/// Simulates the configured geodesic and writes `diagnostics.csv`. On a
/// numerical abort the partial diagnostics and the last good snapshot are
/// persisted before returning the error.
fn geodesic(cfg: &RunConfig, sink: &mut Sink) -> Result<GeodesicRecord, RunError> {
    let grid = SpectralGrid::new(cfg.n)?;
    let psi0 = cfg.init.stream(&grid)?;
    match simulate(&psi0, &solver_config(cfg)) {
        Ok(rec) => {
            sink.write("diagnostics.csv", |w| write_diagnostics_csv(&rec.diagnostics, w))?;
            Ok(rec)
        }
        Err(aborted) => {
            let rec = &aborted.partial;
            sink.write("diagnostics.csv", |w| write_diagnostics_csv(&rec.diagnostics, w))?;
            if let (Some(theta), Some(d)) = (rec.theta.last(), rec.diffeos.last()) {
                sink.write("theta_last_good.gsqg", |w| write_field(w, theta))?;
                sink.write("flow_last_good.gsqgf", |w| d.forward().write(w))?;
            }
            Err(RunError::Numerical(aborted.to_string()))
        }
    }
}

fn cmd_simulate(cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, RunError> {
    let rec = geodesic(cfg, sink)?;
    let theta = rec.theta.last().unwrap();
    let d = rec.diffeos.last().unwrap();
    sink.write("theta_final.gsqg", |w| write_field(w, theta))?;
    sink.write("flow_final.gsqgf", |w| d.forward().write(w))?;
    let last = rec.diagnostics.last().unwrap();
    let first = &rec.diagnostics[0];
    Ok(vec![
        format!("snapshots: {}", rec.len()),
        format!("relative energy drift: {:e}", (last.energy - first.energy).abs() / first.energy),
        format!("max |det D gamma - 1|: {:e}", rec.diagnostics.iter().map(|r| r.det_jac_err).fold(0.0, f64::max)),
        format!(
            "max transport residual: {:e}",
            rec.diagnostics.iter().map(|r| r.transport_residual).fold(0.0, f64::max)
        ),
    ])
}

fn torus_phi(cfg: &RunConfig, sink: &mut Sink) -> Result<(TorusBackend, Vec<OperatorSample>), RunError> {
    let rec = geodesic(cfg, sink)?;
    let basis = GalerkinBasis::new(rec.grid(), cfg.k, cfg.beta)?;
    let backend = TorusBackend::assemble(&rec, &basis)?;
    let phi = evolve_phi(&backend, cfg.substeps)?;
    Ok((backend, phi))
}

fn cmd_jacobi(cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, RunError> {
    let (backend, phi) = torus_phi(cfg, sink)?;
    let split = omega_gamma_split(&backend, &phi)?;
    sink.write("jacobi.csv", |w| {
        writeln!(w, "t,phi_norm,omega_sym_min_eig,gamma_norm,decomp_residual")?;
        for ((p, o), g) in phi.iter().zip(&split.omega).zip(&split.gamma) {
            let sym = (&o.matrix + o.matrix.transpose()) * 0.5;
            let min_eig = sym.symmetric_eigenvalues().min();
            let pn = p.matrix.norm();
            let res = if pn > 0.0 {
                (&p.matrix - &o.matrix - &g.matrix).norm() / pn
            } else {
                0.0
            };
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", p.t, pn, min_eig, g.matrix.norm(), res)?;
        }
        Ok(())
    })?;
    let gamma = split.gamma.last().unwrap();
    sink.write("gamma_singular_values.csv", |w| {
        writeln!(w, "index,sigma")?;
        for (i, s) in gamma_singular_values(gamma).iter().enumerate() {
            writeln!(w, "{i},{s:.16e}")?;
        }
        Ok(())
    })?;
    sink.write("phi_final.op", |w| phi.last().unwrap().write(w))?;
    sink.write("k0.op", |w| backend.k0.write(w))?;
    Ok(vec![
        format!("basis dimension: {}", backend.basis.dim()),
        format!("Phi samples: {}", phi.len()),
        format!("max decomposition residual: {:e}", split.residual),
    ])
}

fn report_lines(report: &ConjugateReport) -> Vec<String> {
    let mut lines = vec![format!(
        "conjugate points: {} (counted with multiplicity {}), threshold {:e}",
        report.points.len(),
        report.count(),
        report.threshold
    )];
    for p in &report.points {
        lines.push(format!("  t = {:.10}, multiplicity {}", p.t, p.multiplicity));
    }
    lines
}

fn sphere_backend(cfg: &RunConfig) -> Result<SphereBackend, RunError> {
    let samples = (cfg.t_final / (cfg.dt * cfg.stride as f64)).round().max(2.0) as usize;
    Ok(SphereBackend::new(cfg.beta, cfg.n_max, cfg.t_final, samples)?)
}

fn cmd_conjugate_scan(cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, RunError> {
    let phi = match cfg.spectrum {
        SpectrumKind::Torus => torus_phi(cfg, sink)?.1,
        SpectrumKind::Sphere => evolve_phi(&sphere_backend(cfg)?, cfg.substeps)?,
    };
    let report = detect_conjugate(&phi, ThresholdPolicy::MedianFraction(cfg.threshold));
    sink.write("conjugate.csv", |w| write_conjugate_csv(&report, w))?;
    Ok(report_lines(&report))
}

fn cmd_sphere_example(cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, RunError> {
    let scan = cluster_scan(cfg.beta, cfg.n_max)?;
    sink.write("scan.csv", |w| write_scan_csv(&scan, w))?;
    let mut worst: f64 = 0.0;
    let rows = (1..=cfg.n_max)
        .map(|n| {
            let exact = conjugate_time(n, cfg.beta)?;
            let numeric = first_zero(&SphereMode::new(n, cfg.beta)?, cfg.dt, 1.5 * exact)?;
            worst = worst.max((numeric - exact).abs());
            Ok((n, exact, numeric))
        })
        .collect::<gsqg_core::Result<Vec<_>>>()?;
    sink.write("modes.csv", |w| {
        writeln!(w, "n,beta,T_n,first_zero,abs_err")?;
        for (n, exact, numeric) in &rows {
            writeln!(w, "{n},{:.16e},{exact:.16e},{numeric:.16e},{:.16e}", cfg.beta, (numeric - exact).abs())?;
        }
        Ok(())
    })?;
    Ok(vec![
        format!("T_{} = {:.12}", cfg.n_max, scan.rows.last().unwrap().1),
        format!("distance to pi*sqrt(2): {:e}", scan.distance_to_limit),
        format!("min gap: {:e}", scan.min_gap),
        format!("max |first zero - T_n|: {worst:e}"),
    ])
}

fn cmd_morse_bound(cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, RunError> {
    let t = cfg.t_final;
    let spectrum = match cfg.spectrum {
        SpectrumKind::Torus => Spectrum::torus(cfg.k_max)?,
        SpectrumKind::Sphere => Spectrum::sphere(cfg.n_max)?,
    };
    let (mut c_proxy, mut c_sup) = (f64::NAN, f64::NAN);
    let (c, delta) = if let (Auto::Value(c), Auto::Value(d)) = (cfg.c, cfg.delta) {
        (c, d)
    } else {
        let (c_auto, d_auto) = match cfg.spectrum {
            SpectrumKind::Torus => {
                let rec = geodesic(cfg, sink)?;
                let basis = GalerkinBasis::new(rec.grid(), cfg.k, cfg.beta)?;
                let c = morse::c_constant(&rec.u0(), cfg.beta, &basis)?;
                let profile = morse::delta_profile(&rec, cfg.k)?;
                (c, morse::delta_inf(&profile, t)?)
            }
            SpectrumKind::Sphere => {
                let backend = sphere_backend(cfg)?;
                (morse::sphere_c(&backend)?, morse::sphere_delta(&backend)?)
            }
        };
        c_proxy = c_auto.operator_norm;
        c_sup = c_auto.sup_norm;
        let c = match cfg.c {
            Auto::Value(v) => v,
            Auto::Auto => c_auto.value,
        };
        let d = match cfg.delta {
            Auto::Value(v) => v,
            Auto::Auto => d_auto,
        };
        (c, d)
    };
    let input = MorseInput {
        delta,
        c,
        t,
        beta: cfg.beta,
        spectrum,
    };
    sink.write("constants.csv", |w| {
        writeln!(w, "C,C_operator_norm,C_sup_norm,delta")?;
        writeln!(w, "{c:.16e},{c_proxy:.16e},{c_sup:.16e},{delta:.16e}")?;
        Ok(())
    })?;
    let bound = morse::morse_bound(&input)?;
    sink.write("bound.csv", |w| {
        writeln!(w, "{BOUND_HEADER}")?;
        morse::write_bound_row(&input, &bound, w)
    })?;
    sink.write("slices.csv", |w| {
        writeln!(w, "k,threshold,count")?;
        for s in &bound.slices {
            writeln!(w, "{},{:.16e},{}", s.k, s.threshold, s.count)?;
        }
        Ok(())
    })?;
    Ok(vec![
        format!("C = {c:e}, delta = {delta:e}, T = {t}"),
        format!("aleph = {} (k_max = {}), Weyl estimate {:.3}", bound.aleph, bound.k_max, bound.aleph_weyl),
    ])
}

fn cmd_verify(_cfg: &RunConfig, sink: &mut Sink) -> Result<Vec<String>, RunError> {
    let checks = verify::suite();
    sink.write("verify.csv", |w| verify::write_csv(&checks, w))?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    let lines: Vec<String> = checks.iter().map(|c| c.line()).collect();
    if failed > 0 {
        for l in &lines {
            println!("{l}");
        }
        return Err(RunError::Verify(failed));
    }
    Ok(lines)
}
