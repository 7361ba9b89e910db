use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankp::analysis::{fit_power_law, log_grid, ConvergenceCurve, CurvePoint, StateKind};
use rankp::cli::{
    format_curve, format_report, format_trace, parse_curve, parse_report, parse_trace, read_curve,
    read_report, Report, ReportEntry,
};
use rankp::protocols::Protocol;
use rankp::quantum::random_bures_mixed;
use rankp::simulator::{run_tomography, RunConfig, Schedule};

fn rankp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankp"))
        .args(args)
        .env_remove("RANKP_OUT")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn trace_text_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let truth = random_bures_mixed(2, &mut rng);
    let mut config = RunConfig::new(Protocol::RankpM);
    config.schedule = Schedule {
        n_max: 1e4,
        ..Schedule::default()
    };
    let trace = run_tomography(&config, &truth, 3, 51, &mut rng)
        .unwrap()
        .trace;
    let text = format_trace(&trace);
    let parsed = parse_trace(&text).unwrap();
    assert_eq!(parsed.protocol, trace.protocol);
    assert_eq!(parsed.run_id, 3);
    assert_eq!(parsed.seed, 51);
    assert_eq!(parsed.entries.len(), trace.entries.len());
    for (a, b) in parsed.entries.iter().zip(&trace.entries) {
        assert_eq!(a.n_emit, b.n_emit);
        assert_eq!(a.n_det, b.n_det);
        assert_eq!(a.d_bures_sq, b.d_bures_sq);
        assert_eq!(a.estimate, b.estimate);
    }
    assert_eq!(format_trace(&parsed), text);
}

#[test]
fn curve_and_report_text_round_trip() {
    let points: Vec<CurvePoint> = log_grid(1e2, 1e6, 41)
        .into_iter()
        .map(|n| CurvePoint {
            n,
            mean: 3.0 / n,
            std_of_mean: 0.3 / n,
        })
        .collect();
    let curve = ConvergenceCurve::new("eigen", 50, points).unwrap();
    let parsed = parse_curve(&format_curve(&curve)).unwrap();
    assert_eq!(parsed, curve);

    let fit = fit_power_law(&curve, (1e2, 1e6)).unwrap();
    let report = Report {
        bound: StateKind::MixedQubit,
        entries: vec![ReportEntry {
            curve,
            fit: Some(fit),
        }],
        ratios: vec![],
    };
    let text = format_report(&report);
    let again = parse_report(&text).unwrap();
    assert_eq!(format_report(&again), text);
    assert_eq!(again.entry("eigen").unwrap().fit.unwrap().beta, fit.beta);
}

#[test]
fn malformed_inputs_fail_cleanly() {
    assert!(parse_trace("not,a,trace\n1,2,3\n").is_err());
    assert!(parse_curve("# convergence curve\nlabel = x\nruns = two\n").is_err());

    let dir = tempfile::tempdir().unwrap();
    let out = rankp(&["simulate", "--protocol", "bogus", "--out", path(dir.path())]);
    assert!(!out.status.success());
    let out = rankp(&[
        "simulate",
        "--protocol",
        "eigen",
        "--runs",
        "2",
        "--n-max",
        "-5",
        "--out",
        path(dir.path()),
    ]);
    assert!(!out.status.success());
    let missing = dir.path().join("missing.trace.csv");
    let out = rankp(&["analyze", path(&missing), "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let status = rankp(&[
        "simulate",
        "--protocol",
        "eigen,rankp-nc",
        "--states",
        "bures",
        "--runs",
        "4",
        "--n-max",
        "1e4",
        "--seed",
        "52",
        "--out",
        path(out),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for protocol in ["eigen", "rankp-nc"] {
        for run in 0..4 {
            assert!(out
                .join(protocol)
                .join(format!("run_{run:04}.trace.csv"))
                .is_file());
        }
        let curve = read_curve(&out.join(format!("{protocol}.curve"))).unwrap();
        assert_eq!(curve.runs, 4);
    }

    let status = rankp(&[
        "analyze",
        path(&out.join("eigen")),
        path(&out.join("rankp-nc")),
        "--fit-window",
        "1e2:1e4",
        "--compare",
        "rankp-nc:eigen",
        "--out",
        path(out),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let report = read_report(&out.join("report.txt")).unwrap();
    let ratio = report.ratio("rankp-nc", "eigen").unwrap();
    assert!(ratio.is_finite() && ratio > 0.0);
    for label in ["eigen", "rankp-nc"] {
        assert!(report.entry(label).unwrap().fit.is_some());
    }

    // Same seed again: every trace is byte-identical.
    let again = dir.path().join("again");
    let status = rankp(&[
        "simulate",
        "--protocol",
        "eigen,rankp-nc",
        "--states",
        "bures",
        "--runs",
        "4",
        "--n-max",
        "1e4",
        "--seed",
        "52",
        "--out",
        path(&again),
    ]);
    assert!(status.status.success());
    for protocol in ["eigen", "rankp-nc"] {
        for run in 0..4 {
            let name = format!("run_{run:04}.trace.csv");
            assert_eq!(
                fs::read(out.join(protocol).join(&name)).unwrap(),
                fs::read(again.join(protocol).join(&name)).unwrap()
            );
        }
    }
}

#[test]
fn replay_of_recorded_eigen_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let status = rankp(&[
        "simulate",
        "--protocol",
        "eigen",
        "--states",
        "pure",
        "--runs",
        "15",
        "--n-max",
        "1e6",
        "--seed",
        "53",
        "--export-records",
        "--out",
        path(out),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let mut args = vec!["replay".to_string()];
    for run in 0..15 {
        let file = out.join("eigen").join(format!("run_{run:04}.records.csv"));
        assert!(file.is_file());
        args.push(file.to_str().unwrap().to_string());
    }
    let replay_dir = out.join("replay");
    args.extend([
        "--out".to_string(),
        replay_dir.to_str().unwrap().to_string(),
    ]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let status = rankp(&argv);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );

    let curve = read_curve(&replay_dir.join("replay.curve")).unwrap();
    assert_eq!(curve.runs, 15);
    assert!(curve
        .points
        .iter()
        .all(|p| p.n <= 0.25 * 1e6 * (1.0 + 1e-12)));
    let report = read_report(&replay_dir.join("replay_report.txt")).unwrap();
    let beta = report.entry("replay").unwrap().fit.unwrap().beta;
    assert!((-1.2..=-0.8).contains(&beta), "replay exponent {beta}");
}
