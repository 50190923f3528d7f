use repeaterlab::chart::{render, ChartKind};
use repeaterlab::config::{builtin_profiles, ConfigFile};
use repeaterlab::experiments::{run_sweep, SweepKind, SweepSpec};
use repeaterlab::report::{read_results, write_results, CSV_HEADER};

fn node_sweep() -> SweepSpec {
    let hw = builtin_profiles()["swap-limited"].hardware();
    let mut s = SweepSpec::new(SweepKind::FixedDistanceNodeSweep, "swap-limited", hw);
    s.distances_km = vec![1000.0];
    s.routers = (2..=19).collect();
    s.f_threshold = 0.8;
    s.base_seed = 5;
    s
}

#[test]
fn empty_results_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    write_results(&[], &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), CSV_HEADER.join(",") + "\n");
}

#[test]
fn one_row_gives_two_lines_in_declared_order() {
    let mut s = node_sweep();
    s.routers = vec![3];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    let results = run_sweep(&s);
    write_results(&results, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 12);
    assert_eq!(&fields[..4], &["fixed_distance_node_sweep", "1000", "3", "2"]);
    assert_eq!(fields[4], "500");
    assert_eq!(fields[9], "odd");
    assert_eq!(fields[10], "left");
    assert_eq!(fields[11], results[0].seed.to_string());
}

#[test]
fn rerunning_a_sweep_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_results(&run_sweep(&node_sweep()), &a).unwrap();
    write_results(&run_sweep(&node_sweep()), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rows = read_results(&a).unwrap();
    assert_eq!(rows.len(), 18);
    assert!(rows.windows(2).all(|w| w[0].router_count < w[1].router_count));
    for r in &rows {
        assert!(r.e_count <= r.attempts);
        assert_eq!(r.failures, r.attempts - r.e_count);
        if let Some(f) = r.mean_f_e2e {
            assert!((0.25..=1.0).contains(&f));
        }
    }
}

#[test]
fn charts_from_a_node_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    write_results(&run_sweep(&node_sweep()), &p).unwrap();
    let rows = read_results(&p).unwrap();
    let svg = render(ChartKind::RateVsNodes, &rows).unwrap();
    assert_eq!(svg.matches("<circle").count(), 18);
    assert_eq!(svg.matches("fill=\"#1f77b4\"").count(), 9 + 1);
    assert_eq!(svg.matches("fill=\"#d62728\"").count(), 9 + 1);
    // pure function of the rows
    assert_eq!(svg, render(ChartKind::RateVsNodes, &rows).unwrap());
}

#[test]
fn fidelity_chart_axis_stays_in_bounds() {
    let hw = builtin_profiles()["idealized"].hardware();
    let mut s = SweepSpec::new(SweepKind::FixedNodesDistanceSweep, "idealized", hw);
    s.distances_km = (1..=5).map(|i| 5000.0 * i as f64).collect();
    s.routers = vec![6];
    let rows: Vec<_> = run_sweep(&s).iter().map(Into::into).collect();
    let svg = render(ChartKind::FidelityVsDistance, &rows).unwrap();
    let ticks: Vec<f64> = svg
        .lines()
        .filter(|l| l.contains("text-anchor=\"end\"") && !l.contains("fill="))
        .filter_map(|l| l.split('>').nth(1)?.split('<').next()?.parse().ok())
        .collect();
    assert_eq!(ticks.len(), 6);
    assert!(ticks.iter().all(|t| (0.25..=1.0).contains(t)), "{ticks:?}");
    assert_eq!(ticks[0], 0.25);
    assert_eq!(ticks[5], 1.0);
}

#[test]
fn regression_line_through_collinear_points() {
    let text = "sweep_kind,total_distance_km,router_count,bsm_count,hop_km,attempts,e_count,failures,mean_f_e2e,parity,odd_subclass,seed\n\
        min_repeater_search,1000,2,1,1000,20,3,17,,even,,1\n\
        min_repeater_search,2000,3,2,1000,20,3,17,,odd,left,2\n\
        min_repeater_search,3000,4,3,1000,20,3,17,,even,,3\n\
        min_repeater_search,4000,5,4,1000,20,3,17,,odd,right,4\n";
    let rows = repeaterlab::report::read_csv(text.as_bytes()).unwrap();
    let svg = render(ChartKind::MinRepeatersVsDistance, &rows).unwrap();
    assert!(svg.contains("r2 1"), "{svg}");
    assert!(svg.contains("(1000 km per repeater)"), "{svg}");
    // the line's end points coincide with the outer markers
    let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
    let pts: Vec<&str> = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>").split(' ').collect();
    let circles: Vec<String> = svg
        .lines()
        .filter(|l| l.starts_with("<circle"))
        .map(|l| {
            let cx = l.split("cx=\"").nth(1).unwrap().split('"').next().unwrap();
            let cy = l.split("cy=\"").nth(1).unwrap().split('"').next().unwrap();
            format!("{cx},{cy}")
        })
        .collect();
    assert_eq!(pts[0], circles[0]);
    assert_eq!(pts[1], circles[3]);
}

#[test]
fn shipped_config_round_trips() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let cfg = repeaterlab::config::load_config(&path).unwrap();
    assert_eq!(ConfigFile::parse(&cfg.to_json()).unwrap(), cfg);
    assert!(cfg.sweep_names().count() >= 9);
}
