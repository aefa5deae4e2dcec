use std::process::Command;

use immse::linalg::C64;
use immse::{Evaluator, MacSystem, User};
use immse_cli::{interference_report_with, render, validate_row, Axis, Experiment, GridPoint, SweepSpec};

/// Base sweep config; keys set in `extra` replace the defaults.
fn config(experiment: &str, extra: &str) -> String {
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let base = format!("experiment = {experiment}\noutput = unused.csv\nh1 = 1\nh2 = 1\nseed = 3\nsamples = 2000\n");
    let kept: String = base.lines().filter(|l| !overridden.contains(&key(l))).map(|l| format!("{l}\n")).collect();
    kept + extra
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# immse "));
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn axes_are_inclusive_and_validated() {
    assert_eq!(Axis::parse("p1_range", "0:1:0.25").unwrap().values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(Axis::parse("snr_range", "3").unwrap().values(), vec![3.0]);
    // 0.1 steps do not drift past the end point
    assert_eq!(Axis::parse("p1_range", "0:1:0.1").unwrap().values().len(), 11);
    for bad in ["1:0:0.5", "0:1:0", "0:1", "a:b:c", "0:1:-1"] {
        let e = Axis::parse("p2_range", bad).unwrap_err().to_string();
        assert!(e.contains("p2_range"), "{e}");
    }
}

#[test]
fn config_errors_name_the_key() {
    let cases = [
        (config("mi-surface", "colour = red\n"), "colour"),
        ("output = x.csv\nh1 = 1\nh2 = 1\n".to_string(), "experiment"),
        (config("surface", ""), "experiment"),
        (config("mi-surface", "samples = many\n"), "samples"),
        (config("mi-surface", "snr_range = 2:1:1\n"), "snr_range"),
        (config("precode", "damping = 1.5\n"), "damping"),
        (config("mi-surface", "c2 = psk8\n"), "c2"),
        ("experiment = mi-surface\noutput = x.csv\nh1 = 1\n".to_string(), "h2"),
    ];
    for (text, key) in cases {
        let e = SweepSpec::parse(&text).unwrap_err().to_string();
        assert!(e.contains(&format!("`{key}`")), "{key}: {e}");
    }
}

#[test]
fn every_experiment_produces_finite_rows_with_errors() {
    let extras = [
        (Experiment::MiSurface, "p1_range = 0:2:1\np2_range = 0:2:1\nsnr = 2\n"),
        (Experiment::MmseSurface, "p1_range = 0:2:1\np2_range = 1\n"),
        (Experiment::PerUserMmse, "p1_range = 1\np2_range = 0:1:0.5\n"),
        (Experiment::CovarianceSurface, "p1_range = 0.5:1:0.5\np2_range = 1\n"),
        (Experiment::PowerAllocation, "evaluator = quadrature\nq1 = 2\nq2 = 1.6\nsnr = 2\n"),
        (Experiment::ImmseCheck, "snr_range = 0.5:1.5:0.5\n"),
        (Experiment::GradientCheck, "h2 = (0,1)\nevaluator = quadrature\n"),
        (Experiment::LowSnrCheck, "snr_range = 0.001\n"),
        (Experiment::Precode, "evaluator = quadrature\nq1 = 1\nq2 = 1\nmax_iters = 20\n"),
        (Experiment::Mercury, "n_t = 2\nn_r = 2\nh1 = 1 0 0 0.5\nh2 = 0 0 0 0\nq1 = 2\nsnr = 1\n"),
    ];
    for (exp, extra) in extras {
        let spec = SweepSpec::parse(&config(exp.id(), extra)).unwrap();
        let (text, summary) = render(&spec, 2).unwrap();
        let (header, rows) = csv_rows(&text);
        assert_eq!(summary.rows, rows.len(), "{exp}");
        assert!(!rows.is_empty());
        for row in &rows {
            assert_eq!(row.len(), header.len(), "{exp}");
            assert!(row.iter().all(|v| v.is_finite()), "{exp}");
        }
        // estimates come with their standard errors
        for (i, name) in header.iter().enumerate() {
            if ["mi_bits", "mi_nats", "mmse1", "mmse2", "mmse_total", "psi", "cross1", "cross2", "di_dsnr"].contains(&name.as_str()) {
                assert_eq!(header.get(i + 1).map(String::as_str), Some(format!("{name}_se").as_str()), "{exp}");
            }
        }
    }
}

#[test]
fn provenance_records_hash_seed_and_samples() {
    let a = SweepSpec::parse(&config("mi-surface", "")).unwrap();
    let b = SweepSpec::parse(&config("mi-surface", "snr = 2\n")).unwrap();
    assert_ne!(a.hash, b.hash);
    let line = immse_cli::provenance(&a);
    assert!(line.contains(&a.hash) && line.contains("seed=3") && line.contains("samples=2000"));
    assert!(line.contains(immse_cli::VERSION));
}

#[test]
fn seeds_change_the_numbers_but_not_the_shape() {
    let a = render(&SweepSpec::parse(&config("mi-surface", "p1_range = 1:2:1\n")).unwrap(), 1).unwrap().0;
    let b = render(&SweepSpec::parse(&config("mi-surface", "p1_range = 1:2:1\nseed = 4\n")).unwrap(), 1).unwrap().0;
    let (ha, ra) = csv_rows(&a);
    let (hb, rb) = csv_rows(&b);
    assert_eq!(ha, hb);
    assert_ne!(ra, rb);
}

#[test]
fn non_finite_metrics_abort_with_the_grid_point() {
    let cols: Vec<String> = ["snr", "p1", "p2", "mi_bits"].iter().map(|s| s.to_string()).collect();
    let pt = GridPoint { index: 4, snr: 1.0, p1: 0.5, p2: 2.0 };
    assert!(validate_row(&cols, &[1.0, 0.5, 2.0, 0.3], &pt).is_ok());
    let e = validate_row(&cols, &[1.0, 0.5, 2.0, f64::NAN], &pt).unwrap_err().to_string();
    assert!(e.contains("`mi_bits`") && e.contains("grid point 4") && e.contains("p2=2"), "{e}");
    assert!(validate_row(&cols, &[1.0], &pt).is_err());
}

#[test]
fn low_snr_check_needs_positive_snr() {
    let spec = SweepSpec::parse(&config("lowsnr-check", "evaluator = quadrature\nsnr_range = 0\n")).unwrap();
    let e = format!("{:#}", render(&spec, 1).unwrap_err());
    assert!(e.contains("snr_range") && e.contains("grid point 0"), "{e}");
}

#[test]
fn interference_vanishes_for_orthogonal_users() {
    let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(0.0, 1.0), 1.0, 1.0, 1.0).unwrap();
    let rep = interference_report_with(&sys, &Evaluator::mc(5, 50_000)).unwrap();
    for u in User::both() {
        let t = rep.term(u)[(0, 0)];
        let se = rep.std_error(u)[(0, 0)];
        assert!(t.norm() <= 5.0 * se + 1e-15, "{t} vs {se}");
    }
}

#[test]
fn silent_user_causes_no_interference() {
    let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(1.0, 0.0), 0.0, 1.0, 1.0).unwrap();
    let rep = interference_report_with(&sys, &Evaluator::mc(6, 20_000)).unwrap();
    assert_eq!(rep.into_user2[(0, 0)], C64::new(0.0, 0.0));
}

#[test]
fn co_phase_interference_lowers_the_gradient() {
    let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(1.0, 0.0), 1.0, 1.0, 1.0).unwrap();
    let rep = interference_report_with(&sys, &Evaluator::quadrature()).unwrap();
    let cov = rep.scalar_covariance.unwrap();
    for u in User::both() {
        let (v, _) = rep.trace(u);
        assert!(v > 1e-3, "{v}");
        // the covariance rewrite reproduces the matrix term
        assert!((cov[u.index()] - rep.term(u)[(0, 0)]).norm() < 1e-12);
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_immse"))
}

#[test]
fn binary_runs_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sub/mi.csv");
    let cfg = dir.path().join("mi.cfg");
    std::fs::write(&cfg, config("mi-surface", "p1_range = 0:1:1\n").replace("unused.csv", out.to_str().unwrap())).unwrap();
    let st = bin().args(["run", cfg.to_str().unwrap(), "--workers", "2"]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains("2 rows"));
    let (_, rows) = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 2);

    std::fs::write(&cfg, config("mi-surface", "bogus_key = 1\n")).unwrap();
    let st = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("bogus_key"));

    let st = bin().arg("version").output().unwrap();
    assert!(String::from_utf8_lossy(&st.stdout).contains(immse_cli::VERSION));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            immse_cli::load(&path).unwrap();
            n += 1;
        }
    }
    assert!(n >= 8);
}

fn surface(h2: &str) -> (Vec<f64>, Vec<Vec<f64>>) {
    let text = config("mi-surface", &format!("h2 = {h2}\nevaluator = quadrature\nsnr = 10\np1_range = 0.5:3:0.5\np2_range = 0.5:3:0.5\n"));
    let (_, rows) = csv_rows(&render(&SweepSpec::parse(&text).unwrap(), 4).unwrap().0);
    let axis: Vec<f64> = Axis::parse("p", "0.5:3:0.5").unwrap().values();
    let n = axis.len();
    let grid = (0..n).map(|i| (0..n).map(|j| rows[i * n + j][3]).collect()).collect();
    (axis, grid)
}

#[test]
fn co_phase_surface_dips_on_the_diagonal() {
    let (axis, mi) = surface("1");
    for i in 0..axis.len() {
        let row = &mi[i];
        let argmin = (0..row.len()).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmin, i, "p1 = {}: {row:?}", axis[i]);
    }
}

#[test]
fn orthogonal_surface_has_no_dip() {
    let (_, mi) = surface("(0,1)");
    for row in &mi {
        assert!(row.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{row:?}");
    }
}
