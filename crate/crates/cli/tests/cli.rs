use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
seed = 5

[source]
k = 256
d = 8
m = 256

[channel]
block_length = 128
bandwidth_ratio = 8.0

[table]
count = 5
lambda_min = 1.0
lambda_max = 1000.0

[table.trainer]
validation_samples = 4

[table.trainer.calibration]
samples = 8

[simulation]
samples = 4

[sweep]
snr_db = { start = 0.0, stop = 8.0, step = 4.0 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_d2jscc"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn empty_snr_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[sweep]\nsnr_db = { start = 3.0, stop = 1.0, step = 1.0 }\n");
    let st = bin().args(["--config", cfg.to_str().unwrap(), "sweep"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2() {
    let st = bin().args(["--config", "/nonexistent/x.toml", "select"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn fitbeta_recovers_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("rate_bits_per_symbol,bler\n");
    for r in [0.3, 0.4, 0.5, 0.6] {
        csv += &format!("{r},{}\n", (12.0f64 * r - 9.0).exp());
    }
    let bler = write(dir.path(), "bler.csv", &csv);
    let out = dir.path().join("o");
    let st =
        bin().args(["--out", out.to_str().unwrap(), "fitbeta", "--bler", bler.to_str().unwrap()]).status().unwrap();
    assert!(st.success());
    let text = fs::read_to_string(out.join("fitbeta.csv")).unwrap();
    let vals: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((vals[0] - 12.0).abs() < 1e-6 && (vals[1] + 9.0).abs() < 1e-6, "{text}");
}

#[test]
fn sweep_is_reproducible_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let st = bin()
            .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads, "sweep"])
            .status()
            .unwrap();
        assert!(st.success());
        assert!(out.join("sweep.svg").exists());
        outputs.push(fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.pop().unwrap()).unwrap();
    assert!(
        text.starts_with("snr_db,block_length,bandwidth_target,scheme,model_id,feasible,R_s,R_c,rho,D_s,D_c,D_hat_t")
    );
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn table_then_select_uses_saved_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    let text = format!("{TINY}\n").replace("[table]\n", &format!("[table]\npath = {:?}\n", table.to_str().unwrap()));
    let cfg = write(dir.path(), "c.toml", &text);
    let out = dir.path().join("o");
    let run = |cmd: &str| {
        bin().args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), cmd]).output().unwrap()
    };
    assert!(run("table").status.success());
    assert!(table.exists());
    for cmd in ["select", "retrain", "simulate"] {
        let o = run(cmd);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(format!("{cmd}.csv")).exists());
    }
}

#[test]
fn config_prints_defaults() {
    let o = bin().arg("config").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("snr_db = 7.0") && text.contains("[source]"));
}
