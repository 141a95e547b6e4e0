use gsqg_cli::run::sha256_hex;
use gsqg_core::spectral::read_field;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gsqg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsqg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn manifest_matches(dir: &Path) -> bool {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    let entries: Vec<&str> = text.lines().skip_while(|l| *l != "[artifacts]").skip(1).collect();
    !entries.is_empty()
        && entries.iter().all(|l| {
            let (sum, name) = l.split_once("  ").unwrap();
            sha256_hex(&dir.join(name)).unwrap() == sum
        })
}

#[test]
fn sphere_example_clusters_near_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gsqg(&["sphere-example", "--set", "beta=1", "--set", "n_max=30"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&tmp.path().join("scan.csv"));
    assert_eq!(rows.len(), 30);
    let last: f64 = rows[29][2].parse().unwrap();
    let limit = PI * 2f64.sqrt();
    assert!((last - limit).abs() <= limit / 60.0);
    let scan = fs::read_to_string(tmp.path().join("scan.csv")).unwrap();
    assert!(scan.starts_with("n,beta,T_n\n"));
    assert!(scan.ends_with("# limit pi*sqrt(2) = 4.442882938158366\n"));
    assert!(manifest_matches(tmp.path()));
}

#[test]
fn steady_preset_has_no_transport_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gsqg(
        &["simulate", "--set", "N=32", "--set", "t_final=0.2", "--set", "stride=50"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("diagnostics.csv")).unwrap();
    assert!(text.starts_with("t,energy,theta_l2,max_u,det_jac_err,transport_residual\n"));
    let rows = csv_rows(&tmp.path().join("diagnostics.csv"));
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(r[5].parse::<f64>().unwrap() <= 1e-10);
    }
    let theta = read_field(fs::File::open(tmp.path().join("theta_final.gsqg")).unwrap()).unwrap();
    assert_eq!(theta.grid().n(), 32);
    assert!(manifest_matches(tmp.path()));
}

#[test]
fn config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# morse run\ncommand = morse-bound\nC = 16\ndelta = 1\nbeta = 0.5\nt_final = 3.141592653589793\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = gsqg(&["--config", cfg.to_str().unwrap(), "--set", "beta=0"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out_dir.join("bound.csv"));
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][5], "8");
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = morse-bound\n"));
    assert!(manifest.contains("beta = 0\n"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    let out = gsqg(&["simulate", "--set", "beta=1.5"], &tmp.path().join("a"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "beta = 0.5\n\nspeed = 3\n").unwrap();
    let out = gsqg(&["simulate", "--config", cfg.to_str().unwrap()], &tmp.path().join("b"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = gsqg(
        &[
            "morse-bound", "--set", "C=16", "--set", "delta=1", "--set", "beta=0.9", "--set", "k_max=10", "--set",
            "t_final=3.14",
        ],
        &tmp.path().join("c"),
    );
    assert_eq!(out.status.code(), Some(4));

    let dir = tmp.path().join("d");
    let out = gsqg(
        &["simulate", "--set", "N=32", "--set", "dt=0.2", "--set", "init=random:1:3"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.join("theta_last_good.gsqg").exists());
    assert!(dir.join("flow_last_good.gsqgf").exists());
    assert!(manifest_matches(&dir));
}

#[test]
fn deterministic_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "conjugate-scan", "--deterministic", "--set", "spectrum=sphere", "--set", "beta=0.5", "--set", "n_max=4",
        "--set", "t_final=6.9",
    ];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(gsqg(&args, &a).status.success());
    assert!(gsqg(&args, &b).status.success());
    for name in ["conjugate.csv", "manifest.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let text = fs::read_to_string(a.join("conjugate.csv")).unwrap();
    let report = text.split("\n\n").nth(1).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("t_conj,multiplicity"));
    let (t, m) = lines.next().unwrap().split_once(',').unwrap();
    assert!((t.parse::<f64>().unwrap() - 2.0 * PI).abs() < 1e-4);
    assert_eq!(m, "2");
}

#[test]
fn help_lists_keys_and_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_gsqg")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["beta", "t_final", "init", "(default 64)", "--deterministic", "--set"] {
        assert!(text.contains(key), "missing {key}");
    }
}
