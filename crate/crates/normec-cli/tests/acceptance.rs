//! End-to-end checks of the `normec` binary: the determinism criterion plus
//! exit-code and artifact smoke tests. Every test drives the compiled binary
//! through its public command line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn normec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_normec"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = normec().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "normec {args:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Every file under `dir`, keyed by its path relative to `dir`.
fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, into);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                into.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files);
    files
}

fn assert_identical_trees(a: &Path, b: &Path) {
    let fa = dir_files(a);
    let fb = dir_files(b);
    let names_a: Vec<&String> = fa.keys().collect();
    let names_b: Vec<&String> = fb.keys().collect();
    assert_eq!(names_a, names_b, "different file sets in {} and {}", a.display(), b.display());
    for (name, bytes) in &fa {
        assert_eq!(
            bytes, &fb[name],
            "{name} differs between {} and {}",
            a.display(),
            b.display()
        );
    }
}

/// A small noisy grid: two algorithms, two step sizes, two repeats, direct
/// sigma. Eight cells of genuinely random-looking but fully seeded work.
const DETERMINISM_CONFIG: &str = r#"name = "determinism-check"
rounds = 25
repeats = 2

[problem]
kind = "random-quadratic"
n = 3
d = 4
heterogeneity = 1.0
seed = 5

[grid]
algorithms = ["normec", "dpsgd-clip"]
gamma = [0.05, 0.1]
beta = [0.5]
alpha = [1.0]
tau = [1.0]

[privacy]
sigma = 0.3
"#;

#[test]
fn criterion_9_determinism() {
    let base = tempfile::tempdir().unwrap();
    let config_path = base.path().join("experiment.toml");
    std::fs::write(&config_path, DETERMINISM_CONFIG).unwrap();
    let config = config_path.to_str().unwrap();

    let out_serial = base.path().join("serial");
    let out_pool = base.path().join("pool");
    let out_rerun = base.path().join("rerun");
    run_ok(&["run", config, "--out", out_serial.to_str().unwrap(), "--workers", "1"]);
    run_ok(&["run", config, "--out", out_pool.to_str().unwrap(), "--workers", "4"]);
    run_ok(&["run", config, "--out", out_rerun.to_str().unwrap(), "--workers", "4"]);

    assert_identical_trees(&out_serial, &out_pool);
    assert_identical_trees(&out_pool, &out_rerun);

    let files = dir_files(&out_serial);
    let traces = files.keys().filter(|k| k.ends_with("trace.csv")).count();
    assert_eq!(traces, 8, "expected one trace per cell");
    let summary = String::from_utf8(files["summary.csv"].clone()).unwrap();
    assert_eq!(summary.lines().count(), 9, "header plus eight cells");

    println!(
        "[acceptance] criterion 9 (determinism): PASS - {} files byte-identical \
         across one and four workers and across reruns (8 noisy cells)",
        files.len()
    );
}

#[test]
fn nonempty_output_dir_is_refused_without_resume() {
    let base = tempfile::tempdir().unwrap();
    let config_path = base.path().join("experiment.toml");
    std::fs::write(&config_path, DETERMINISM_CONFIG).unwrap();
    let out = base.path().join("out");
    run_ok(&["run", config_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let second = normec()
        .args(["run", config_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&second), 2);
    let stderr = String::from_utf8_lossy(&second.stderr);
    assert!(stderr.contains("not empty"), "{stderr}");
}

#[test]
fn resume_regenerates_a_deleted_cell_identically() {
    let base = tempfile::tempdir().unwrap();
    let config_path = base.path().join("experiment.toml");
    std::fs::write(&config_path, DETERMINISM_CONFIG).unwrap();
    let out = base.path().join("out");
    run_ok(&["run", config_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let before = dir_files(&out);

    // Knock out one finished cell and resume: only it should be recomputed,
    // and every byte must come back.
    let victim = out.join("runs").join("normec-g0.05-b0.5-a1-r0");
    assert!(victim.join("done.json").is_file(), "expected cell directory exists");
    std::fs::remove_dir_all(&victim).unwrap();

    let resumed = run_ok(&[
        "run",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--resume",
    ]);
    let stdout = String::from_utf8_lossy(&resumed.stdout);
    assert!(stdout.contains("(1 executed, 7 resumed)"), "{stdout}");

    let after = dir_files(&out);
    assert_eq!(before.len(), after.len());
    for (name, bytes) in &before {
        assert_eq!(bytes, &after[name], "{name} changed across resume");
    }
}

#[test]
fn resume_refuses_a_directory_from_a_different_config() {
    let base = tempfile::tempdir().unwrap();
    let config_path = base.path().join("experiment.toml");
    std::fs::write(&config_path, DETERMINISM_CONFIG).unwrap();
    let out = base.path().join("out");
    run_ok(&["run", config_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let other_path = base.path().join("other.toml");
    std::fs::write(&other_path, DETERMINISM_CONFIG.replace("rounds = 25", "rounds = 26")).unwrap();
    let clash = normec()
        .args([
            "run",
            other_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--resume",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&clash), 2);
    assert!(
        String::from_utf8_lossy(&clash.stderr).contains("different configuration"),
        "{}",
        String::from_utf8_lossy(&clash.stderr)
    );
}

#[test]
fn list_presets_names_all_five() {
    let out = run_ok(&["list-presets"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in
        ["counterexample-stall", "bound-suite", "sweep-grid", "ec-benefit", "private-demo"]
    {
        assert!(stdout.contains(name), "missing preset {name} in:\n{stdout}");
    }
}

#[test]
fn preset_show_prints_runnable_toml() {
    let out = run_ok(&["preset", "sweep-grid", "--show"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("name = \"sweep-grid\""), "{stdout}");
    assert!(stdout.contains("[grid]"));
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let out = normec().args(["preset", "no-such-thing"]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("list-presets"),
        "stderr should point at list-presets"
    );
}

#[test]
fn quick_verification_passes() {
    let out = run_ok(&["verify", "--quick"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches(": PASS - ").count(), 6, "five checks plus the suite line");
    assert!(stdout.contains("[verify] suite (quick): PASS"), "{stdout}");
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let base = tempfile::tempdir().unwrap();

    // Unknown key: rejected at parse time.
    let bad_key = base.path().join("bad-key.toml");
    std::fs::write(&bad_key, DETERMINISM_CONFIG.replace("repeats", "repeets")).unwrap();
    let out = normec().args(["run", bad_key.to_str().unwrap()]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("config parse error"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Bad value: rejected at planning time with its field path.
    let bad_value = base.path().join("bad-value.toml");
    std::fs::write(&bad_value, DETERMINISM_CONFIG.replace("gamma = [0.05, 0.1]", "gamma = [0.0]"))
        .unwrap();
    let out = normec().args(["run", bad_value.to_str().unwrap()]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("grid.gamma"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Missing problem file: rejected with the config path that names it.
    let bad_file = base.path().join("bad-file.toml");
    std::fs::write(
        &bad_file,
        r#"name = "missing"
rounds = 5

[problem]
kind = "file"
path = "/nonexistent/problem.json"

[grid]
algorithms = ["normec"]
gamma = [0.1]
beta = [0.5]
alpha = [1.0]
"#,
    )
    .unwrap();
    let out = normec().args(["run", bad_file.to_str().unwrap()]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("problem.path"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // A config path that does not exist at all.
    let out = normec().args(["run", "/nonexistent/config.toml"]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn stall_preset_end_to_end() {
    let base = tempfile::tempdir().unwrap();
    let out_dir = base.path().join("stall");
    run_ok(&["preset", "counterexample-stall", "--out", out_dir.to_str().unwrap()]);

    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let field = |row: &[&str], idx: usize| row[idx].to_string();

    // Columns: 0 cell_id, 16 min_grad_norm, 17 final_grad_norm, 20 bound_check.
    let frozen = rows
        .iter()
        .find(|r| r[0].starts_with("dpsgd-norm") && r[0].contains("-a0-"))
        .expect("memory-free run at alpha 0");
    assert_eq!(
        field(frozen, 17),
        "2",
        "opposing unit gradients cancel, so the gradient norm must stay exactly 2"
    );

    let compensated = rows
        .iter()
        .find(|r| r[0].starts_with("normec") && r[0].contains("-a0.5-"))
        .expect("compensated run at alpha 0.5");
    let final_grad: f64 = field(compensated, 17).parse().unwrap();
    assert!(final_grad < 0.1, "compensation must break the stall, got {final_grad}");
    assert_eq!(field(compensated, 20), "pass");
}

#[test]
fn diverged_cells_are_reported_as_data() {
    let base = tempfile::tempdir().unwrap();
    let config_path = base.path().join("diverge.toml");
    // Plain error feedback with a hopeless step size explodes quickly;
    // the run must end with exit 0 and an honest summary row.
    std::fs::write(
        &config_path,
        r#"name = "diverge-demo"
rounds = 40

[problem]
kind = "random-quadratic"
n = 3
d = 4
heterogeneity = 1.0
seed = 5

[grid]
algorithms = ["ef21-topk"]
gamma = [50.0]
beta = [1.0]
top_k = [1]
"#,
    )
    .unwrap();
    let out_dir = base.path().join("out");
    let out = run_ok(&[
        "run",
        config_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        String::from_utf8_lossy(&out.stdout).contains("diverged"),
        "stdout should mention the diverged cell"
    );

    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    // Columns: 11 diverged, 12 diverged_round, 18 final_loss.
    assert_eq!(row[11], "true");
    assert!(!row[12].is_empty(), "diverged_round must be recorded");
    assert_eq!(row[18], "", "final loss is meaningless after divergence");

    let trace = std::fs::read_to_string(
        out_dir.join("runs").join("ef21-topk-g50-b1-k1-r0").join("trace.csv"),
    )
    .unwrap();
    assert!(trace.lines().count() < 41, "trace stops at the divergence round");
}

#[test]
fn out_dir_defaults_to_env_base_and_name() {
    let base = tempfile::tempdir().unwrap();
    let config_path = base.path().join("experiment.toml");
    std::fs::write(&config_path, DETERMINISM_CONFIG).unwrap();
    let out = normec()
        .args(["run", config_path.to_str().unwrap()])
        .env("NORMEC_OUT", base.path())
        .current_dir(base.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(
        base.path().join("determinism-check").join("summary.csv").is_file(),
        "artifacts land under $NORMEC_OUT/<name>"
    );
}
