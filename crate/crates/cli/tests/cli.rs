use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = "[rotor]\nconstants = [1.0]\nalpha_par = 2.0\nalpha_perp = 1.0\n[basis]\ntop = \"linear\"\nj_max = 6\n";

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rotkit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotkit"))
        .args(args)
        .env_remove("ROTKIT_THREADS")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, body: &str) -> (TempDir, Output) {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", body);
    let out = rotkit(&[cmd, "--config", cfg.to_str().unwrap(), "--out", "out", "--quiet"], tmp.path());
    (tmp, out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    (comment, header, rows)
}

#[test]
fn spectrum_of_linear_rotor() {
    let (tmp, out) = run("spectrum", &BASE.replace("j_max = 6", "j_max = 3"));
    assert!(out.status.success(), "{}", stderr(&out));
    let (comment, header, rows) = csv_rows(&tmp.path().join("out/spectrum_spectrum.csv"));
    assert!(comment.starts_with("# rotkit "), "{comment}");
    assert!(comment.contains("config_sha256="));
    assert_eq!(header, ["level", "j", "energy", "degeneracy"]);
    let got: Vec<(f64, f64)> = rows.iter().map(|r| (r[2], r[3])).collect();
    assert_eq!(got, [(0.0, 1.0), (2.0, 3.0), (6.0, 5.0), (12.0, 7.0)]);
}

#[test]
fn zero_field_alignment_stays_isotropic() {
    let body = format!(
        "{BASE}[initial]\nkind = \"thermal\"\ntemperature = 5.0\n[[pulses]]\nkind = \"gaussian_envelope\"\ncenter = 0.5\nfwhm = 0.1\npeak = [0.0, 0.0, 0.0]\n[dynamics]\nt_end = 1.0\nintervals = 20\n"
    );
    let (tmp, out) = run("align", &body);
    assert!(out.status.success(), "{}", stderr(&out));
    let (_, header, rows) = csv_rows(&tmp.path().join("out/align_align.csv"));
    assert_eq!(
        header,
        ["t_ps", "cos_z", "cos2_x", "cos2_y", "cos2_z", "energy", "j2", "sumrule_residual"]
    );
    assert_eq!(rows.len(), 21);
    for r in &rows {
        assert!(r[1].abs() < 1e-12);
        for v in &r[2..5] {
            assert!((v - 1.0 / 3.0).abs() < 1e-11, "{v}");
        }
        assert!(r[7] < 1e-12);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/align_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "align");
    let plots: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/align_plots.json")).unwrap()).unwrap();
    assert_eq!(plots["plots"][0]["file"], "align_align.csv");
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let (_tmp, out) = run("align", &BASE.replace("j_max = 6", "j_max = 6\ncolour = 1"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));

    let (_tmp, out) = run("spectrum", &BASE.replace("[1.0]", "[-1.0]"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("rotor.constants"), "{}", stderr(&out));

    let (_tmp, out) = run("kicked", BASE);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kicked"), "{}", stderr(&out));

    let tmp = TempDir::new().unwrap();
    let out = rotkit(&["spectrum", "--config", "missing.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--config"));

    let out = rotkit(&["spectrum"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_variable_is_validated() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", BASE);
    let out = Command::new(env!("CARGO_BIN_EXE_rotkit"))
        .args(["spectrum", "--config", cfg.to_str().unwrap(), "--quiet"])
        .env("ROTKIT_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ROTKIT_THREADS"));
}

#[test]
fn truncation_is_a_numerical_failure() {
    let body = format!(
        "{}[[pulses]]\nkind = \"kick_train\"\nperiod = 1.0\ncount = 1\nstrength = 40.0\n[dynamics]\nt_end = 0.5\nintervals = 10\n",
        BASE.replace("j_max = 6", "j_max = 3")
    );
    let (_tmp, out) = run("align", &body);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn overrides_change_the_hash_and_the_basis() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", BASE);
    let c = cfg.to_str().unwrap();
    assert!(rotkit(&["spectrum", "--config", c, "--out", "a", "--quiet"], tmp.path()).status.success());
    assert!(rotkit(&["spectrum", "--config", c, "--out", "b", "--jmax", "2", "--quiet"], tmp.path())
        .status
        .success());
    let (ca, _, ra) = csv_rows(&tmp.path().join("a/spectrum_spectrum.csv"));
    let (cb, _, rb) = csv_rows(&tmp.path().join("b/spectrum_spectrum.csv"));
    assert_ne!(ca, cb);
    assert_eq!((ra.len(), rb.len()), (7, 3));
}

#[test]
fn emdiagram_rows_follow_the_inertia() {
    let cfg = repo_root().join("scenarios/emdiagram.toml");
    let tmp = TempDir::new().unwrap();
    let out = rotkit(&["emdiagram", "--config", cfg.to_str().unwrap(), "--out", "o", "--quiet"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let (_, header, rows) = csv_rows(&tmp.path().join("o/emdiagram_emdiagram.csv"));
    let col = |n: &str| header.iter().position(|h| h == n).unwrap();
    let row = rows.iter().find(|r| r[col("j")] == 1.0).unwrap();
    assert!((row[col("e_min")] - 0.25).abs() < 1e-12);
    assert!((row[col("e_sep")] - 1.0 / 3.0).abs() < 1e-12);
    assert!((row[col("e_max")] - 0.5).abs() < 1e-12);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = repo_root().join("scenarios/optimize_two_level.toml");
    let tmp = TempDir::new().unwrap();
    for dir in ["r1", "r2"] {
        let out = rotkit(&["optimize", "--config", cfg.to_str().unwrap(), "--out", dir, "--quiet"], tmp.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let mut names: Vec<_> = fs::read_dir(tmp.path().join("r1")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 3);
    for n in names {
        let a = fs::read(tmp.path().join("r1").join(&n)).unwrap();
        let b = fs::read(tmp.path().join("r2").join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}
