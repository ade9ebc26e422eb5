use jjaqed_cli::config::load;
use jjaqed_cli::output::{embedded_config, without_stamp};
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], config: &str, dir: &Path) -> Output {
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    let out_dir = dir.join("out");
    Command::new(env!("CARGO_BIN_EXE_jjaqed"))
        .args(args)
        .arg(&path)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap()
}

fn body(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).has_headers(false).from_reader(text.as_bytes());
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run"], "task = \"modes\"\n[circuit]\nN = 10\nfoo = 1\n", d.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("error[schema]"));
}

#[test]
fn bad_unit_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run"], "task = \"modes\"\n[circuit]\nL = \"1 fF\"\n", d.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_rejects_single_point_task() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], "task = \"modes\"\n[circuit]\nN = 10\n", d.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn validate_prints_resolved_config_only() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run", "--validate"], "task = \"modes\"\n[circuit]\nN = 10\n", d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = String::from_utf8(o.stdout).unwrap();
    assert_eq!(load(&printed).unwrap().circuit.n, 10);
    assert!(!d.path().join("out").exists());
}

#[test]
fn modes_reference_n100() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run"], "task = \"modes\"\n[circuit]\nN = 100\n", d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&d.path().join("out/modes.csv"));
    assert_eq!(rows.len() - 1, 204);
    for r in column(&rows, "residual") {
        assert!(r.parse::<f64>().unwrap() < 1e-8, "residual {r}");
    }
}

#[test]
fn track_at_zero_is_bare_atom() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run"], "task = \"track\"\n[circuit]\nN = 20\nf_A = \"7 GHz\"\n[tracker]\nchi_target = 0.0\n", d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&d.path().join("out/track.csv"));
    assert_eq!(rows.len(), 2);
    let f: f64 = column(&rows, "re_freq_ghz")[0].parse().unwrap();
    let im: f64 = column(&rows, "im_omega_per_s")[0].parse().unwrap();
    assert!((f - 7.0).abs() < 1e-12 * 7.0, "{f}");
    assert_eq!(im, 0.0);
}

#[test]
fn impedance_is_three_columns() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "task = \"impedance\"\n[circuit]\nN = 200\n[grid]\nf = { start = \"1 GHz\", stop = \"12 GHz\", points = 12 }\n";
    let o = run(&["sweep"], cfg, d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&d.path().join("out/impedance.csv"));
    assert_eq!(rows[0], ["omega_hz", "re_inv_zeff", "re_inv_zinf"]);
    assert_eq!(rows.len(), 13);
    for r in &rows[1..] {
        assert!(r[1].parse::<f64>().unwrap() >= 0.0 && r[2].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn workers_do_not_change_output() {
    let cfg = "task = \"sweep-chi\"\n[circuit]\nN = 30\n[grid]\nchi = { start = 1e-5, stop = 1.0, points = 9, spacing = \"log\" }\n";
    let mut bodies = Vec::new();
    for w in ["1", "8"] {
        let d = tempfile::tempdir().unwrap();
        let o = run(&["sweep", "--workers", w], cfg, d.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(d.path().join("out/sweep_chi.csv")).unwrap();
        let body = without_stamp(&text);
        let kept: Vec<&str> = body.lines().filter(|l| !l.starts_with("# output =") && !l.starts_with("# workers =")).collect();
        bodies.push(kept.join("\n"));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn embedded_config_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "task = \"sweep-chi\"\nworkers = 2\n[circuit]\nN = 12\nC_g = \"0.2 fF\"\nT = \"30 mK\"\n[grid]\nchi = { values = [1e-4, 1e-2] }\n[tracker]\noverlap_threshold = 0.4\n";
    let o = run(&["sweep"], cfg, d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("out/sweep_chi.csv")).unwrap();
    let mut original = load(cfg).unwrap();
    original.output = d.path().join("out");
    assert_eq!(load(&embedded_config(&text)).unwrap(), original);
}

#[test]
fn point_failures_become_rows() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "task = \"sweep-omega\"\n[circuit]\nN = 10\nchi = 1e-3\n[grid]\nf_A = { values = [\"5 GHz\", \"1000 GHz\"] }\n";
    let o = run(&["sweep"], cfg, d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&d.path().join("out/sweep_omega.csv"));
    let errors = column(&rows, "error");
    assert!(errors.iter().filter(|e| e.is_empty()).count() > 1);
    assert!(errors.last().unwrap().starts_with("domain"));
}

#[test]
fn all_points_failing_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "task = \"sweep-omega\"\n[circuit]\nN = 10\n[grid]\nf_A = { values = [\"1000 GHz\", \"2000 GHz\"] }\n";
    let o = run(&["sweep"], cfg, d.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("domain"));
}

#[test]
fn avoided_crossings_keep_a_gap() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "task = \"sweep-omega\"\n[circuit]\nN = 20\nchi = 1e-5\n[grid]\nf_A = { start = \"6 GHz\", stop = \"10 GHz\", points = 60 }\n";
    let o = run(&["sweep", "--workers", "4"], cfg, d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&d.path().join("out/sweep_omega.csv"));
    let f_a = column(&rows, "f_a_ghz");
    let re = column(&rows, "re_freq_ghz");
    let mut by_point: Vec<(String, Vec<f64>)> = Vec::new();
    for (a, r) in f_a.iter().zip(&re) {
        match by_point.last_mut() {
            Some((k, v)) if k == a => v.push(r.parse().unwrap()),
            _ => by_point.push((a.clone(), vec![r.parse().unwrap()])),
        }
    }
    assert_eq!(by_point.len(), 60);
    let min_gap = by_point
        .iter()
        .flat_map(|(_, v)| v.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    assert!(min_gap > 0.0, "{min_gap}");
}

#[test]
fn tracking_ambiguity_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "task = \"track\"\n[circuit]\nN = 30\n[tracker]\nchi_target = 1.0\nsteps = 1\nmax_doublings = 0\noverlap_threshold = 0.999\n";
    let o = run(&["run"], cfg, d.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("error[tracking]"));
}
