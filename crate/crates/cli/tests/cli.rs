use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use qkd_core::bundles;
use qkd_core::channel::expected_key_rate;
use qkd_core::model::parse_config;

fn qkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkd")).args(args).output().expect("run qkd")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn csv_rows(bytes: &[u8]) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let h = r.headers().unwrap().clone();
    (h, r.records().map(|x| x.unwrap()).collect())
}

fn col(h: &csv::StringRecord, row: &csv::StringRecord, name: &str) -> f64 {
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("column {name}"));
    row[i].parse().unwrap()
}

#[test]
fn keyrate_row_bundle() {
    let out = qkd(&["keyrate", "--bundle", "row-251.7km"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let skr = v["result"]["secret_key_rate_bps"].as_f64().unwrap();
    assert!(skr > 4.9e3 / 3.0 && skr < 4.9e3 * 3.0, "{skr}");
    assert_eq!(v["manifest"]["subcommand"], "keyrate");
    assert_eq!(v["manifest"]["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn keyrate_idealized_600km() {
    let v = json(&qkd(&["keyrate", "--bundle", "idealized-600km", "--idealized"]));
    let skr = v["result"]["secret_key_rate_bps"].as_f64().unwrap();
    assert!(skr > 2.5e-2 / 2.0 && skr < 2.5e-2 * 2.0, "{skr}");
}

#[test]
fn keyrate_beyond_cutoff_exits_3_with_breakdown() {
    let out = qkd(&["keyrate", "--bundle", "row-251.7km", "--set", "channel.extra_loss_db=200"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["result"]["breakdown"]["ell"], 0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.conf");
    fs::write(&p, "protocol.mu1 = 0.5\nprotocol.mu1 = 0.4\n").unwrap();
    for args in [
        vec!["keyrate", "--config", p.to_str().unwrap()],
        vec!["simulate", "--config", p.to_str().unwrap()],
        vec!["keyrate", "--bundle", "row-251.7km", "--set", "protocol.mu2=0.9"],
        vec!["keyrate", "--config", "/nonexistent.conf"],
    ] {
        let out = qkd(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn simulate_mean_qber_matches_analytic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sim.csv");
    let out = qkd(&["simulate", "--bundle", "session-toy", "--seeds", "100", "-o", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = csv_rows(&fs::read(&p).unwrap());
    assert_eq!(rows.len(), 100);
    let q: Vec<f64> = rows.iter().map(|r| col(&h, r, "qber_z")).collect();
    let mean = q.iter().sum::<f64>() / 100.0;
    let sd = (q.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let analytic = expected_key_rate(&bundles::session_toy()).qber_z;
    assert!((mean - analytic).abs() <= 3.0 * sd / 10.0, "{mean} vs {analytic}");
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        let args = ["simulate", "--bundle", "session-toy", "--first-seed", "5", "--seeds", "2", "--mode", "pulsewise"];
        let mut a: Vec<&str> = args.to_vec();
        let ps = p.to_str().unwrap().to_string();
        a.extend(["-o", &ps]);
        assert_eq!(qkd(&a).status.code(), Some(0));
        fs::read(&p).unwrap()
    };
    let (x, y) = (run("a.csv"), run("b.csv"));
    // the manifest names the output path, so compare the data rows
    let body = |b: &[u8]| b.splitn(2, |&c| c == b'\n').nth(1).unwrap().to_vec();
    assert_eq!(body(&x), body(&y));
}

#[test]
fn pulsewise_guard_exits_4() {
    let out = qkd(&["simulate", "--bundle", "row-251.7km", "--mode", "pulsewise"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn pulsewise_records_can_drive_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec");
    let out = qkd(&[
        "simulate", "--bundle", "session-toy", "--mode", "pulsewise", "--first-seed", "3", "--records", rec.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let file = rec.join("seed-3.qkdp");
    let from_file = dir.path().join("f");
    let from_sim = dir.path().join("s");
    for (args, d) in [
        (vec!["--records", file.to_str().unwrap()], &from_file),
        (vec!["--sim-seed", "3"], &from_sim),
    ] {
        let mut a = vec!["session", "--bundle", "session-toy", "-o", d.to_str().unwrap()];
        a.extend(args);
        assert_eq!(qkd(&a).status.code(), Some(0));
    }
    assert_eq!(fs::read(from_file.join("alice.key")).unwrap(), fs::read(from_sim.join("alice.key")).unwrap());
}

#[test]
fn session_both_gives_identical_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = qkd(&["session", "--bundle", "session-toy", "--seed", "9", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = fs::read(dir.path().join("alice.key")).unwrap();
    let b = fs::read(dir.path().join("bob.key")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("alice.report.json")).unwrap()).unwrap();
    let ell = report["result"]["breakdown"]["ell"].as_u64().unwrap() as usize;
    assert_eq!(a.len(), ell.div_ceil(8));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn split_session(dir: &Path, bob_extra: &[&str]) -> (Output, Output) {
    let addr = format!("127.0.0.1:{}", free_port());
    let bob_dir = dir.join("bob");
    let alice_dir = dir.join("alice");
    let mut bob_args = vec![
        "session", "--bundle", "session-toy", "--role", "bob", "--listen", &addr, "--seed", "9", "--timeout-s", "20",
        "-o", bob_dir.to_str().unwrap(),
    ];
    bob_args.extend(bob_extra);
    let bob = Command::new(env!("CARGO_BIN_EXE_qkd")).args(&bob_args).stderr(Stdio::piped()).spawn().unwrap();
    let alice = qkd(&[
        "session", "--bundle", "session-toy", "--role", "alice", "--connect", &addr, "--seed", "9", "--timeout-s", "20",
        "-o", alice_dir.to_str().unwrap(),
    ]);
    (alice, bob.wait_with_output().unwrap())
}

#[test]
fn loopback_split_roles_match_in_process_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let both = dir.path().join("both");
    assert_eq!(
        qkd(&["session", "--bundle", "session-toy", "--seed", "9", "-o", both.to_str().unwrap()]).status.code(),
        Some(0)
    );
    let (alice, bob) = split_session(dir.path(), &[]);
    assert_eq!(alice.status.code(), Some(0), "{}", String::from_utf8_lossy(&alice.stderr));
    assert_eq!(bob.status.code(), Some(0));
    let golden = fs::read_to_string(both.join("alice.transcript.txt")).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("alice/alice.transcript.txt")).unwrap(), golden);
    let k = fs::read(both.join("alice.key")).unwrap();
    assert_eq!(fs::read(dir.path().join("alice/alice.key")).unwrap(), k);
    assert_eq!(fs::read(dir.path().join("bob/bob.key")).unwrap(), k);
}

#[test]
fn mismatched_configs_abort_with_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let (alice, bob) = split_session(dir.path(), &["--set", "security.eps_sec=1e-8"]);
    assert_eq!(alice.status.code(), Some(5));
    assert_eq!(bob.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&alice.stderr).contains("config digest"));
    assert!(fs::read(dir.path().join("alice/alice.key")).unwrap().is_empty());
}

#[test]
fn table_has_five_rows_in_tolerance_and_round_trips() {
    let out = qkd(&["table"]);
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = csv_rows(&out.stdout);
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let len = col(&h, r, "length_km");
        let ratio = col(&h, r, "ratio");
        let f = if len > 410.0 { 5.0 } else { 3.0 };
        assert!(ratio >= 1.0 / f && ratio <= f, "{len}: {ratio}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&h).unwrap();
    for r in &rows {
        w.write_record(r).unwrap();
    }
    let again = w.into_inner().unwrap();
    let body = out.stdout.splitn(2, |&c| c == b'\n').nth(1).unwrap();
    assert_eq!(again, body);
}

#[test]
fn curve_is_monotone_and_idealized_dominates() {
    let out = qkd(&["curve", "--from", "250", "--to", "430", "--step", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = csv_rows(&out.stdout);
    assert_eq!(rows.len(), 10);
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for r in &rows {
        let (re, id) = (col(&h, r, "realistic_skr"), col(&h, r, "idealized_skr"));
        assert!(re <= prev.0 && id <= prev.1);
        assert!(id >= re);
        prev = (re, id);
    }
}

#[test]
fn optimize_recovers_intensities_and_reports_no_key() {
    let v = json(&qkd(&["optimize", "--bundle", "row-251.7km"]));
    let mu1 = v["result"]["best"]["mu1"].as_f64().unwrap();
    let mu2 = v["result"]["best"]["mu2"].as_f64().unwrap();
    assert!((mu1 - 0.49).abs() <= 0.15 && (mu2 - 0.18).abs() <= 0.08, "{mu1} {mu2}");
    assert!(v["result"]["trace_summary"]["evaluations"].as_u64().unwrap() > 0);
    let out = qkd(&["optimize", "--bundle", "row-251.7km", "--set", "channel.length_km=800"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bundles_print_parseable_configs() {
    let out = qkd(&["bundles"]);
    let names = String::from_utf8(out.stdout).unwrap();
    assert_eq!(names.lines().count(), 7);
    for n in names.lines() {
        let text = qkd(&["bundles", n]).stdout;
        parse_config(&String::from_utf8(text).unwrap()).unwrap();
    }
}
