use std::path::Path;
use std::process::{Command, Output};

use prodline::config::{export_config, parse_config};
use prodline::experiments::builtin;
use prodline::output::read_trajectory;

fn prodline(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prodline"))
        .current_dir(dir)
        .env_remove("PRODLINE_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn scenario_writes_two_csvs_and_a_plot_script() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodline(dir.path(), &["--out", "res", "scenario", "fig4-lf-vs-mf", "--stride", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let base = dir.path().join("res/fig4-lf-vs-mf");
    for name in ["fig4-linear.csv", "fig4-mixed.csv", "plot.py"] {
        assert!(base.join(name).is_file(), "missing {name}");
    }
    let rows = read_trajectory(&base.join("fig4-mixed.csv")).unwrap();
    assert_eq!(rows.first().unwrap().k, 0);
    assert_eq!(rows.last().unwrap().k, 3000);
    assert!(rows.iter().filter_map(|r| r.passed).all(|p| p));
    assert!(stdout(&o).contains("fig4-mixed: residual passes at every step"));
}

#[test]
fn check_stability_reports_first_failing_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodline(dir.path(), &["--out", "cfg", "export-scenario", "fig3-kink"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = prodline(dir.path(), &["check-stability", "cfg/fig3-kink-linear.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("fails at k = "), "{}", stderr(&o));

    prodline(dir.path(), &["--out", "cfg", "export-scenario", "fig4-lf-vs-mf"]);
    let o = prodline(dir.path(), &["check-stability", "cfg/fig4-mixed.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn exported_configs_parse_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodline(dir.path(), &["--out", "cfg", "export-scenario", "fig5-increasing-queue"]);
    assert_eq!(o.status.code(), Some(0));
    let original = builtin("fig5-increasing-queue").unwrap().remove(0);
    let path = dir.path().join(format!("cfg/{}.toml", original.name));
    assert_eq!(parse_config(&path).unwrap(), original);
}

#[test]
fn simulate_honours_env_out_dir_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let s = builtin("fig5-increasing-queue").unwrap().remove(0);
    std::fs::write(dir.path().join("s.toml"), export_config(&s)).unwrap();
    let run = |out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_prodline"))
            .current_dir(dir.path())
            .env("PRODLINE_OUT_DIR", out)
            .args(["simulate", "s.toml"])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(dir.path().join(out).join(format!("{}.csv", s.name))).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let s = builtin("fig5-increasing-queue").unwrap().remove(0);
    let text = export_config(&s);

    std::fs::write(dir.path().join("typo.toml"), text.replacen("\nv = ", "\nvelocty = ", 1)).unwrap();
    let o = prodline(dir.path(), &["simulate", "typo.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("velocty"), "{}", stderr(&o));

    let cfl = text.replace(&format!("tau = {}", s.grid.tau), &format!("tau = {}", 2.0 * s.grid.tau));
    assert_ne!(cfl, text);
    std::fs::write(dir.path().join("cfl.toml"), cfl).unwrap();
    let o = prodline(dir.path(), &["simulate", "cfl.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("CFL"), "{}", stderr(&o));

    let o = prodline(dir.path(), &["scenario", "fig9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = prodline(dir.path(), &["simulate", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_and_oracle_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodline(dir.path(), &["--out", "r", "converge", "--v", "1", "--n", "10,50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("r/convergence_v1.csv")).unwrap();
    assert!(csv.starts_with("N,h,nu,err_inf,rate_inf,err_l2,rate_l2\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(stdout(&o).contains("0.5668"));

    let o = prodline(dir.path(), &["oracle"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("66 values agree"));
}
