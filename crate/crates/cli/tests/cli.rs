use std::path::Path;
use std::process::{Command, Output};

fn fluxprobe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluxprobe"))
        .current_dir(dir)
        .env_remove("FLUXPROBE_CONFIG_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = d.path().join(run);
        std::fs::create_dir(&out).unwrap();
        let r = stdout(&fluxprobe(&out, &["--seed", "7", "simulate", "--out", "step.csv", "--calibration", "cal.csv"]));
        std::fs::write(out.join("simulate.txt"), r).unwrap();
        let r = stdout(&fluxprobe(
            &out,
            &["--seed", "7", "fit-step", "--input", "step.csv", "--calibration", "cal.csv", "--plot", "step.svg"],
        ));
        std::fs::write(out.join("fit.txt"), r).unwrap();
        let r = stdout(&fluxprobe(&out, &["reflect-scan", "--out", "scan.csv", "--plot", "scan.svg"]));
        std::fs::write(out.join("scan.txt"), r).unwrap();
        stdout(&fluxprobe(&out, &["model", "--kind", "gain", "--plot", "gain.svg"]));
    }
    for f in ["simulate.txt", "fit.txt", "scan.txt", "step.csv", "cal.csv", "step.svg", "scan.csv", "scan.svg", "gain.svg"] {
        let a = std::fs::read(d.path().join("a").join(f)).unwrap();
        let b = std::fs::read(d.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn seed_changes_the_noise() {
    let d = tempfile::tempdir().unwrap();
    stdout(&fluxprobe(d.path(), &["--seed", "1", "simulate", "--out", "a.csv"]));
    stdout(&fluxprobe(d.path(), &["--seed", "2", "simulate", "--out", "b.csv"]));
    assert_ne!(std::fs::read(d.path().join("a.csv")).unwrap(), std::fs::read(d.path().join("b.csv")).unwrap());
}

#[test]
fn rf_demod_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let short = ["--set", "step.duration_ns=300", "--set", "step.edge_ns=100", "--set", "noise.jitter_ps=0"];
    let mut a = short.to_vec();
    a.extend(["simulate", "--rf", "--out", "rf.csv.gz"]);
    stdout(&fluxprobe(d.path(), &a));
    let r = stdout(&fluxprobe(d.path(), &["demod", "--input", "rf.csv.gz", "--out", "phase.csv"]));
    assert!(r.contains("path: digital"), "{r}");
    let mut a = short.to_vec();
    a.extend(["fit-step", "--input", "phase.csv"]);
    let r = stdout(&fluxprobe(d.path(), &a));
    assert!(r.contains("units: deg"), "{r}");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| fluxprobe(d.path(), args).status.code().unwrap();
    assert_eq!(code(&["--set", "circuit.c_shunt_pf=0", "model"]), 2);
    assert_eq!(code(&["--set", "circuit.nonsense=1", "model"]), 2);
    assert_eq!(code(&["scenario", "brass"]), 2);
    assert_eq!(code(&["fit-cal", "--input", "missing.csv"]), 3);

    std::fs::write(d.path().join("bad.csv"), "# kind: calibration\nflux[Phi0],phase[deg]\n0.1,3\n0.2\n").unwrap();
    let o = fluxprobe(d.path(), &["fit-cal", "--input", "bad.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));

    // a flat sweep has no curvature to fit
    let rows: String = (0..20).map(|i| format!("{},10\n", -0.3 + 0.03 * i as f64)).collect();
    std::fs::write(d.path().join("flat.csv"), format!("# kind: calibration\nflux[Phi0],phase[deg]\n{rows}")).unwrap();
    let c = code(&["--set", "circuit.c_shunt_pf=0.01", "fit-cal", "--input", "flat.csv"]);
    assert!(c == 3 || c == 4, "{c}");
}

#[test]
fn config_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("fluxprobe.toml"), "[circuit]\nz0_ohm = 30.0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fluxprobe"))
        .env("FLUXPROBE_CONFIG_DIR", d.path())
        .args(["model"])
        .output()
        .unwrap();
    let r = stdout(&o);
    assert!(r.contains("bandwidth_ghz: 1.326291"), "{r}");
}

#[test]
fn scenario_bundle_is_written() {
    let d = tempfile::tempdir().unwrap();
    let r = stdout(&fluxprobe(d.path(), &["scenario", "gold-cu-pcb", "--out", "bundle"]));
    assert!(r.contains("class: very_bad"), "{r}");
    for f in ["report.txt", "calibration.csv", "step.csv", "long.csv.gz", "calibration.svg", "step.svg"] {
        assert!(d.path().join("bundle").join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(d.path().join("bundle/report.txt")).unwrap(), r);
}

#[test]
fn scenario_from_file() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("flat.toml"),
        "name = \"flat\"\n[settling]\nterms = []\n[noise]\nphase_noise_deg = 0.0\njitter_ps = 0.0\n",
    )
    .unwrap();
    let r = stdout(&fluxprobe(d.path(), &["scenario", "flat.toml"]));
    assert!(r.contains("scenario: flat") && r.contains("class: good"), "{r}");
}

#[test]
fn plot_shape_mismatch_is_data_error() {
    let d = tempfile::tempdir().unwrap();
    stdout(&fluxprobe(d.path(), &["model", "--kind", "gain", "--out", "gain.csv"]));
    let o = fluxprobe(d.path(), &["plot", "--kind", "theta-scan", "--input", "gain.csv", "--out", "x.svg"]);
    assert_eq!(o.status.code(), Some(3));
    stdout(&fluxprobe(d.path(), &["plot", "--kind", "gain", "--input", "gain.csv", "--out", "g.svg"]));
}
