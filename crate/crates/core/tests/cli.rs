use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecu_core::io::{self, ModelRow, ProbabilityRow, WeightRow};
use ecu_core::simgen::{recovery_offset, TRUTH_EPSILON};

fn ecu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ecu(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> String {
    let out = ecu(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates and fits into `<dir>/out`.
fn simulate_and_fit(dir: &Path, body: &str) -> (PathBuf, PathBuf) {
    let cfg = config(dir, body);
    let out = dir.join("out");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    ok(&["fit", "--config", s(&cfg), "--out", s(&out)]);
    (cfg, out)
}

fn data_lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

#[test]
fn simulate_writes_every_firm_day_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_firms = 7\nseed = 5\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b)]);
    let panel = a.join(io::PANEL_FILE);
    // 2018-10-18 ..= 2020-05-12
    assert_eq!(data_lines(&panel), 7 * 573);
    assert_eq!(std::fs::read(&panel).unwrap(), std::fs::read(b.join(io::PANEL_FILE)).unwrap());
    assert_eq!(io::read_seed(&panel).unwrap(), Some(5));

    let c = dir.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "6"]);
    assert_ne!(std::fs::read(&panel).unwrap(), std::fs::read(c.join(io::PANEL_FILE)).unwrap());
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_firms = -4\n");
    let out = dir.path().join("out");
    let err = fail(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(err.contains("n_firms"), "{err}");
    assert!(!out.exists());

    let cfg = config(dir.path(), "span = 0\n");
    let err = fail(&["fit", "--config", s(&cfg), "--out", s(&out)]);
    assert!(err.contains("span"), "{err}");
    assert!(!out.exists());
}

#[test]
fn fit_writes_one_model_per_firm_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = simulate_and_fit(dir.path(), "n_firms = 10\nseed = 2\n");
    assert_eq!(data_lines(&out.join(io::MODELS_FILE)), 10);
    assert_eq!(data_lines(&out.join(io::PROBABILITIES_FILE)), 10 * 191);
    assert_eq!(data_lines(&out.join(io::DEVIATIONS_FILE)), 10 * 191);

    let again = dir.path().join("again");
    let panel = out.join(io::PANEL_FILE);
    let cfg2 = config(
        dir.path(),
        &format!("n_firms = 10\nseed = 2\ninput_panel = \"{}\"\n", s(&panel)),
    );
    ok(&["fit", "--config", s(&cfg2), "--out", s(&again), "--workers", "3"]);
    ok(&["fit", "--config", s(&cfg), "--out", s(&out), "--workers", "1"]);
    for f in [io::MODELS_FILE, io::PROBABILITIES_FILE, io::DEVIATIONS_FILE, io::WEIGHTS_FILE] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn uncovered_firm_is_skipped_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_firms = 10\nseed = 4\n");
    let out = dir.path().join("out");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    let panel = out.join(io::PANEL_FILE);
    let text = std::fs::read_to_string(&panel).unwrap();
    // drop F00003 after 2020-03-01
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !(l.starts_with("F00003,") && &l[7..17] > "2020-03-01"))
        .collect();
    std::fs::write(&panel, kept.join("\n") + "\n").unwrap();
    let msg = ok(&["fit", "--config", s(&cfg), "--out", s(&out)]);
    assert!(msg.contains("fitted 9 firms"), "{msg}");
    assert!(msg.contains("1 skipped"), "{msg}");
    assert_eq!(data_lines(&out.join(io::MODELS_FILE)), 9);
    let diags = std::fs::read_to_string(out.join(io::DIAGNOSTICS_FILE)).unwrap();
    assert!(diags.contains("F00003"), "{diags}");
}

#[test]
fn index_requires_fit_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    std::fs::create_dir_all(&out).unwrap();
    let err = fail(&["index", "--out", s(&out)]);
    assert!(err.contains("models.csv"), "{err}");
    assert!(!out.join(io::ECU_FILE).exists());
}

fn ecu_rows(out: &Path) -> Vec<io::EcuRow> {
    io::read_ecu(&out.join(io::ECU_FILE)).unwrap()
}

#[test]
fn single_sector_aggregate_matches_sector_series() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = simulate_and_fit(dir.path(), "n_firms = 6\nseed = 8\nsector_mix = \"S02:1\"\n");
    ok(&["index", "--config", s(&cfg), "--out", s(&out)]);
    let rows = ecu_rows(&out);
    let agg: Vec<_> = rows.iter().filter(|r| r.group_type == "aggregate").collect();
    let sec: Vec<_> = rows.iter().filter(|r| r.group_type == "sector").collect();
    assert_eq!(agg.len(), 191);
    assert_eq!(sec.len(), 191);
    for (a, b) in agg.iter().zip(&sec) {
        assert_eq!(b.group_key, "S02");
        assert_eq!((a.offset, a.ecu), (b.offset, b.ecu));
    }
    assert_eq!(data_lines(&out.join(io::SRPI_FILE)), 191);
}

#[test]
fn empty_grouping_selection_gives_aggregate_only() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = simulate_and_fit(dir.path(), "n_firms = 4\nseed = 9\n");
    let cfg = config(dir.path(), "groupings = \"\"\n");
    ok(&["index", "--config", s(&cfg), "--out", s(&out)]);
    assert!(ecu_rows(&out).iter().all(|r| r.group_type == "aggregate"));
}

#[test]
fn two_firm_fixture_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let model = |id: &str, degenerate: bool| ModelRow {
        firm_id: id.into(),
        alpha_p: 0.0,
        beta_p: 0.0,
        sigma_p: 1.0,
        alpha_r: 0.0,
        beta_r: -1.0,
        sigma_r: 1.0,
        q_pp: 0.9,
        q_rr: 0.9,
        pi0_p: 0.5,
        loglik: -1.0,
        converged: true,
        degenerate,
    };
    let write = |name: &str, body: String| std::fs::write(out.join(name), body).unwrap();
    let csv_of = |rows: Vec<String>, header: &str| format!("# seed=1\n{header}\n{}\n", rows.join("\n"));
    write(
        io::MODELS_FILE,
        csv_of(
            [model("A", false), model("B", false), model("C", true)]
                .iter()
                .map(|m| {
                    format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        m.firm_id, m.alpha_p, m.beta_p, m.sigma_p, m.alpha_r, m.beta_r, m.sigma_r, m.q_pp,
                        m.q_rr, m.pi0_p, m.loglik, m.converged, m.degenerate
                    )
                })
                .collect(),
            "firm_id,alpha_p,beta_p,sigma_p,alpha_r,beta_r,sigma_r,q_pp,q_rr,pi0_p,loglik,converged,degenerate",
        ),
    );
    // offsets 0 and 1; A: ele 100/300, mu_r 0.8/0.2; B: ele 300/0, mu_r 0.4/0.9;
    // C is degenerate and only adds weight
    let probs = [("A", 0, 0.8), ("A", 1, 0.2), ("B", 0, 0.4), ("B", 1, 0.9), ("C", 0, 0.7), ("C", 1, 0.7)];
    let weights = [
        ("A", 0, 100.0),
        ("A", 1, 300.0),
        ("B", 0, 300.0),
        ("B", 1, 0.0),
        ("C", 0, 100.0),
        ("C", 1, 100.0),
    ];
    write(
        io::PROBABILITIES_FILE,
        csv_of(
            probs.iter().map(|(f, o, m)| format!("{f},{o},{},{m}", 1.0 - m)).collect(),
            "firm_id,offset,mu_p,mu_r",
        ),
    );
    write(
        io::WEIGHTS_FILE,
        csv_of(
            weights.iter().map(|(f, o, e)| format!("{f},{o},T01,D01,{e},{e}")).collect(),
            "firm_id,offset,sector_code,district_code,ele,ref_ele",
        ),
    );
    let cfg = config(dir.path(), "groupings = \"\"\n");
    ok(&["index", "--config", s(&cfg), "--out", s(&out)]);
    let rows = ecu_rows(&out);
    assert_eq!(rows.len(), 2);
    // (100*0.8 + 300*0.4 + 100*0) / 500 and (300*0.2 + 0*0.9 + 100*0) / 400
    assert!((rows[0].ecu.unwrap() - 0.4).abs() < 1e-12);
    assert!((rows[1].ecu.unwrap() - 0.15).abs() < 1e-12);
    assert_eq!(rows[0].total_weight, 500.0);
    assert_eq!(rows[0].firm_count, 3);
    assert_eq!(rows[0].date.to_string(), "2020-01-24");
    let _: Vec<ProbabilityRow> = io::read_probabilities(&out.join(io::PROBABILITIES_FILE)).unwrap();
    let _: Vec<WeightRow> = io::read_weights(&out.join(io::WEIGHTS_FILE)).unwrap();
}

#[test]
fn report_tracks_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = simulate_and_fit(
        dir.path(),
        "n_firms = 20\nseed = 11\ngrowth_mean = 0.05\ngrowth_sd = 0\nnoise_sd = 0.01\nholiday_ramp_days = 10\n",
    );
    let shocks = io::read_shocks(&out.join(io::SHOCKS_FILE)).unwrap();
    let mut unshocked_medians = Vec::new();
    for sh in &shocks {
        let text = ok(&["report", "--config", s(&cfg), "--out", s(&out), "--firm", &sh.firm_id]);
        assert!(text.contains("mu_r"));
        let rows = io::read_report(&out.join(format!("report_{}.csv", sh.firm_id))).unwrap();
        assert_eq!(rows.len(), 191);
        for r in &rows {
            assert!((r.mu_p + r.mu_r - 1.0).abs() < 1e-12);
        }
        match sh.shock_onset {
            Some(onset) if sh.shock_depth > 0.0 => {
                let end = recovery_offset(onset, sh.shock_depth, 0, 12.0, TRUTH_EPSILON);
                let inside: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.offset >= onset && (r.offset as f64) < end)
                    .map(|r| r.mu_r)
                    .collect();
                let mean = inside.iter().sum::<f64>() / inside.len() as f64;
                assert!(mean > 0.9, "{} mean mu_r {mean} inside its shock", sh.firm_id);
            }
            _ => {
                let mut mu: Vec<f64> = rows.iter().map(|r| r.mu_r).collect();
                mu.sort_by(f64::total_cmp);
                unshocked_medians.push(mu[mu.len() / 2]);
            }
        }
    }
    // an unshocked firm has no second regime to find; its labeling follows
    // whatever structure the fit latches onto, so judge the group
    unshocked_medians.sort_by(f64::total_cmp);
    assert!(!unshocked_medians.is_empty());
    assert!(unshocked_medians[unshocked_medians.len() / 2] < 0.5, "{unshocked_medians:?}");

    let err = fail(&["report", "--config", s(&cfg), "--out", s(&out), "--firm", "F99999"]);
    assert!(err.contains("F99999"), "{err}");
}

#[test]
fn every_output_records_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = simulate_and_fit(dir.path(), "n_firms = 3\nseed = 31\n");
    ok(&["index", "--config", s(&cfg), "--out", s(&out)]);
    ok(&["report", "--config", s(&cfg), "--out", s(&out), "--firm", "F00001"]);
    let mut seen = BTreeMap::new();
    for entry in std::fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        seen.insert(p.file_name().unwrap().to_string_lossy().into_owned(), io::read_seed(&p).unwrap());
    }
    assert_eq!(seen.len(), 10, "{seen:?}");
    assert!(seen.values().all(|s| *s == Some(31)), "{seen:?}");
}

#[test]
fn fit_takes_the_panel_seed_unless_one_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    ok(&["simulate", "--out", s(&out), "--seed", "17"]);
    ok(&["fit", "--out", s(&out)]);
    assert_eq!(io::read_seed(&out.join(io::MODELS_FILE)).unwrap(), Some(17));
    ok(&["index", "--out", s(&out)]);
    assert_eq!(io::read_seed(&out.join(io::ECU_FILE)).unwrap(), Some(17));
    ok(&["fit", "--out", s(&out), "--seed", "3"]);
    assert_eq!(io::read_seed(&out.join(io::MODELS_FILE)).unwrap(), Some(3));
}
