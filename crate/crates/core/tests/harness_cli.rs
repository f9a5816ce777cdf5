use std::fs;
use std::path::Path;
use std::process::Command;

use heatinv::harness::{parse_config, run_scenario, stability_sweep, write_reports, Mode, Scenario};
use heatinv::mesh::{build_structured_mesh, grid_to_string};
use heatinv::Error;

const SMALL: &str = r#"
name = "small"
nx = 12
ny = 12
a_plus = 2.0
t = 0.5
t_grid = [0.5, 1.0, 2.0, 3.0]

[coefficient]
kind = "constant"
value = 1.0

[u0]
kind = "first-eigenfunction"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatinv"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn forward_run_writes_expected_files() {
    let s = Scenario::from_toml_str(SMALL).unwrap();
    let art = run_scenario(&s, Mode::Forward, Path::new(".")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_reports(&art, dir.path()).unwrap();
    for f in ["summary.txt", "decay.csv", "u_T.grid"] {
        assert!(dir.path().join(f).exists(), "{f}");
        assert!(manifest.checksum(f).is_some());
    }
    // single mode: the fitted slope is exact
    let slope = art.check("u_decay_slope").unwrap();
    assert!(slope.pass && slope.measured <= 1e-6, "{}", slope.line());
    assert!(art.all_pass(), "{}", art.summary());
}

#[test]
fn verify_spectral_on_unit_coefficient_has_equal_lower_bracket() {
    // 24x24 keeps the P1 error in lambda_1 under 1%.
    let text = SMALL.replace("nx = 12\nny = 12", "nx = 24\nny = 24").replace("t = 0.5", "t = 0.5\nmodes = 12");
    let s = Scenario::from_toml_str(&text).unwrap();
    let art = run_scenario(&s, Mode::VerifySpectral, Path::new(".")).unwrap();
    let table = art.file("minmax.csv").unwrap();
    for line in table.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[1], v[2], "{line}");
    }
    assert!(art.check("lambda_1_vs_2pi^2").unwrap().pass);
}

#[test]
fn stability_sweep_fits_one_rate_and_rejects_short_grids() {
    let text = SMALL.replace("kind = \"first-eigenfunction\"", "kind = \"d_Omega\"").replace(
        "t_grid = [0.5, 1.0, 2.0, 3.0]",
        "t_grid = [0.1, 0.2, 0.4, 0.8]",
    );
    let s = Scenario::from_toml_str(&text).unwrap();
    let art = stability_sweep(&s, Path::new(".")).unwrap();
    assert_eq!(art.checks.iter().filter(|c| c.name == "rho_rate_bracket").count(), 1);
    assert_eq!(art.file("stability.csv").unwrap().lines().count(), 5);

    let mut empty = s.clone();
    empty.t_grid.clear();
    match stability_sweep(&empty, Path::new(".")) {
        Err(Error::Scenario { scenario, .. }) => assert_eq!(scenario, "small"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn identical_perturbation_reports_empty_table() {
    let text = SMALL.replace("kind = \"first-eigenfunction\"", "kind = \"d_Omega\"") + "\n[stability]\nperturbation = [[1, 1, 0.0]]\n";
    let s = Scenario::from_toml_str(&text).unwrap();
    let art = stability_sweep(&s, Path::new(".")).unwrap();
    assert!(art.notes.iter().any(|n| n.contains("coincide")));
}

#[test]
fn grid_file_initial_condition_resolves_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = build_structured_mesh(12, 12).unwrap();
    let u0 = mesh.interpolate_interior(|x, y| x * (1.0 - x) * y * (1.0 - y));
    write(dir.path(), "u0.grid", &grid_to_string(&mesh, &u0));
    let cfg = write(
        dir.path(),
        "scenario.toml",
        &SMALL.replace("kind = \"first-eigenfunction\"", "kind = \"grid-file\"\npath = \"u0.grid\""),
    );
    let s = parse_config(&cfg).unwrap();
    let art = run_scenario(&s, Mode::Forward, dir.path()).unwrap();
    assert!(art.check("u_decay_slope").unwrap().pass);

    let bad = write(dir.path(), "bad.toml", &SMALL.replace("kind = \"first-eigenfunction\"", "kind = \"grid-file\"\npath = \"missing.grid\""));
    assert!(run_scenario(&parse_config(&bad).unwrap(), Mode::Forward, dir.path()).is_err());
}

#[test]
fn config_errors_name_path_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", &format!("betta = 2.0\n{SMALL}"));
    let msg = parse_config(&cfg).unwrap_err().to_string();
    assert!(msg.contains("typo.toml") && msg.contains("betta"), "{msg}");
    assert!(parse_config(&dir.path().join("absent.toml")).is_err());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", SMALL);
    let out = bin()
        .args(["forward", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS u_decay_slope"));
    assert!(dir.path().join("run/manifest.txt").exists());

    // An unreachable target turns the rel-error line into a FAIL.
    let strict = write(
        dir.path(),
        "strict.toml",
        &(SMALL.replace("kind = \"first-eigenfunction\"", "kind = \"d_Omega\"") + "\n[inversion]\ntarget_rel_error = 0.0\nmax_iter = 3\n"),
    );
    let out = bin()
        .args(["invert", "--modes", "12", "--seed", "5", "--config"])
        .arg(&strict)
        .arg("--out")
        .arg(dir.path().join("inv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL rel_error"));

    let bad = write(dir.path(), "bad.toml", "name = 1\n");
    let out = bin().args(["forward", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn noisy_inversion_error_grows_with_noise_level() {
    // Halving the data perturbation at fixed T does not increase the error
    // beyond a 10% allowance for regularization bias.
    let base = SMALL.replace("kind = \"first-eigenfunction\"", "kind = \"d_Omega\"").replace(
        "kind = \"constant\"\nvalue = 1.0",
        "kind = \"gaussian-bump\"\namplitude = 0.3\ncenter = [0.5, 0.5]\nwidth = 0.05",
    );
    let errors: Vec<f64> = [4e-6, 2e-6, 1e-6]
        .iter()
        .map(|level| {
            let text = base.replace("t = 0.5", &format!("t = 0.1\nnoise = {level:e}\nseed = 11\nmodes = 30"))
                + "\n[inversion]\nmax_iter = 20\n";
            let s = Scenario::from_toml_str(&text).unwrap();
            let art = run_scenario(&s, Mode::Invert, Path::new(".")).unwrap();
            art.check("rel_error").unwrap().measured
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] <= 1.1 * w[0], "{errors:?}");
    }
}
