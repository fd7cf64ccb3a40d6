//! Contract tests for the command-line surface: exit codes, unknown-key
//! rejection, row counts, config round-trips, and byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gossiplab"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gossiplab_cli_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const SMALL_RUN: &str = "model = logistic\ndim = 2\nm = 4\nn = 20\nrounds = 12\nlr_c = 0.1\nseeds = 1,2\n";

#[test]
fn run_emits_t_rows_per_seed() {
    let dir = tmp_dir("rows");
    let cfg = dir.join("run.cfg");
    write(&cfg, SMALL_RUN);
    let out = dir.join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for seed in [1, 2] {
        let text = fs::read_to_string(out.join(format!("run_seed{seed}.csv"))).unwrap();
        let data_rows = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
            .count();
        assert_eq!(data_rows, 12, "seed {seed}");
    }
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tmp_dir("unknown");
    let cfg = dir.join("bad.cfg");
    write(&cfg, "topologyy = ring\n");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("topologyy"), "stderr: {err}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tmp_dir("rerun");
    let cfg = dir.join("run.cfg");
    write(&cfg, SMALL_RUN);
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for seed in [1, 2] {
        let fa = fs::read(a.join(format!("run_seed{seed}.csv"))).unwrap();
        let fb = fs::read(b.join(format!("run_seed{seed}.csv"))).unwrap();
        assert_eq!(fa, fb, "seed {seed}");
    }
}

/// Strip the embedded `# key=value` block back into a config file.
fn embedded_config(csv_text: &str) -> String {
    let mut out = String::new();
    for line in csv_text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            out.push_str(rest);
            out.push('\n');
        } else {
            break;
        }
    }
    out
}

#[test]
fn embedded_config_round_trip_reproduces_bytes() {
    let dir = tmp_dir("roundtrip");
    let cfg = dir.join("run.cfg");
    write(&cfg, SMALL_RUN);
    let first = dir.join("first");
    assert!(bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&first)
        .status()
        .unwrap()
        .success());

    let artifact = fs::read_to_string(first.join("run_seed1.csv")).unwrap();
    let block = embedded_config(&artifact);
    assert!(block.contains("seeds=1,2"));
    let cfg2 = dir.join("replay.cfg");
    write(&cfg2, &block);
    let second = dir.join("second");
    assert!(bin()
        .args(["run", "--config"])
        .arg(&cfg2)
        .args(["--out"])
        .arg(&second)
        .status()
        .unwrap()
        .success());
    for seed in [1, 2] {
        let fa = fs::read(first.join(format!("run_seed{seed}.csv"))).unwrap();
        let fb = fs::read(second.join(format!("run_seed{seed}.csv"))).unwrap();
        assert_eq!(fa, fb, "seed {seed}");
    }
}

#[test]
fn stability_identity_perturbation_zeroes_the_column() {
    let dir = tmp_dir("identity");
    let cfg = dir.join("stab.cfg");
    write(
        &cfg,
        "model = logistic\ndim = 2\nm = 4\nn = 20\nrounds = 15\nlr_c = 0.1\nseeds = 3\nidentity_perturbation = true\nperturb_agent = 1\nperturb_index = 1\n",
    );
    let out = dir.join("out");
    assert!(bin()
        .args(["stability", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = fs::read_to_string(out.join("stability_q1_seed3.csv")).unwrap();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("t,")) {
        let wd = line.split(',').nth(4).unwrap();
        assert_eq!(wd, "0", "weight distance should be zero: {line}");
    }
    let summary = fs::read_to_string(out.join("stability_summary.csv")).unwrap();
    let row = summary
        .lines()
        .find(|l| l.starts_with("1,3,"))
        .expect("summary row");
    // Perturbation site recorded (1-based).
    assert!(row.starts_with("1,3,1,1,"), "row: {row}");
}

#[test]
fn sweep_emits_expected_aggregate_rows() {
    let dir = tmp_dir("sweeprows");
    let cfg = dir.join("sweep.cfg");
    write(
        &cfg,
        "model = logistic\ndim = 2\nm = 4\nn = 16\nrounds = 10\nsweep_q = 1,5,20\nlr_c = 0.1\nseeds = 1,2\nrecord_every = 10\n",
    );
    let out = dir.join("out");
    assert!(bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("kind,"))
        .collect();
    // Q sweep {1,5,20} plus the centralized baseline: 4 aggregated rows.
    assert_eq!(rows.len(), 4, "rows: {rows:?}");
    assert_eq!(rows.iter().filter(|r| r.starts_with("centralized")).count(), 1);
}

#[test]
fn bounds_contract() {
    let dir = tmp_dir("bounds");
    let cfg = dir.join("bounds.cfg");
    write(
        &cfg,
        "c = 0.1\nbeta = 2.0\nn = 100\nm = 16\nT = 500\nQ = 5\nrho = 0.8\ndelta = 0.2\nlambda_max_i_minus_w = 1.5\nsigma2 = 0.5\nxi2 = 1.5\nmu = 0.5\ndelta2 = 4.0\nr0 = 3.0\nrs_star = 0.25\nb = 4\ngamma = 1.0\nt0 = 25.0\n",
    );
    let out = bin().args(["bounds", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 8, "expected 8 evaluator rows:\n{table}");

    // mu = 0: optimization rows flagged, everything else computed.
    let zero = fs::read_to_string(&cfg).unwrap().replace("mu = 0.5", "mu = 0");
    write(&cfg, &zero);
    let out = bin().args(["bounds", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("optimization,,PL fails"));
    assert!(table.contains("excess,,PL fails"));
    assert!(table.lines().any(|l| l.starts_with("generalization,0")));

    // Missing symbol: exit 2 naming it.
    let missing = fs::read_to_string(&cfg)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("sigma2"))
        .collect::<Vec<_>>()
        .join("\n");
    write(&cfg, &missing);
    let out = bin().args(["bounds", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma2"));
}

#[test]
fn validate_exit_codes() {
    let dir = tmp_dir("validate");
    let good = dir.join("good.csv");
    write(&good, "0.25,0.25,0.25,0.25\n0.25,0.25,0.25,0.25\n0.25,0.25,0.25,0.25\n0.25,0.25,0.25,0.25\n");
    let out = bin().args(["validate", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("result: valid"));

    let bad = dir.join("bad.csv");
    write(&bad, "0.6,0.5\n0.4,0.5\n");
    let out = bin().args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("symmetric: FAIL"));
    assert!(stdout.contains("violation"));

    let unparsable = dir.join("nan.csv");
    write(&unparsable, "0.5,oops\n");
    let out = bin()
        .args(["validate", "--config"])
        .arg(&unparsable)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn ring_builder_dump_passes_validate() {
    use gossiplab::topology::{build_topology, TopologyKind};
    let dir = tmp_dir("ringdump");
    let w: gossiplab::GossipMatrix64 = build_topology(&TopologyKind::Ring, 5).unwrap();
    let path = dir.join("ring5.csv");
    write(&path, &w.to_csv());
    let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
