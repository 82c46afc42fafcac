use sfm_control::dynamics::FlowSet;
use sfm_control::metrics::*;
use sfm_control::mpc::Diagnostics;
use sfm_control::*;

/// A trajectory log by hand: one entry link feeding the network, queue
/// levels per step given, flows chosen to match.
fn hand_log(net: &Network, levels: &[f64], out_per_step: f64) -> TrajectoryLog {
    let z = net.entries()[0];
    let mut states = vec![QueueState::zeros(net)];
    let mut flows = Vec::new();
    let mut served = Vec::new();
    let mut total = 0.0;
    for (k, &v) in levels.iter().enumerate() {
        let mut s = QueueState::zeros(net);
        s.x[z][0] = v;
        s.step = k + 1;
        states.push(s);
        let mut f = FlowSet::zeros(net);
        f.r[z][0] = out_per_step / 120.0;
        flows.push(f);
        total += out_per_step;
        served.push(total);
    }
    let n = levels.len();
    TrajectoryLog {
        mode: "FixedTime".into(),
        seed: 0,
        cycle: 120.0,
        states,
        plans: vec![PlanStep { g: Vec::new(), big_g: Vec::new() }; n],
        diagnostics: (0..n)
            .map(|k| Diagnostics {
                step: k,
                gamma: false,
                solved: false,
                status: "inactive".into(),
                objective: None,
                bound: None,
                gap: None,
                nodes: 0,
                seconds: 0.0,
                greens: Vec::new(),
                fault: None,
            })
            .collect(),
        flows,
        saturation: vec![vec![(None, None); net.num_links()]; n],
        served,
        entered: vec![0.0; n],
        backlog: vec![0.0; n],
        max_conservation_error: 0.0,
    }
}

fn net() -> Network {
    build_grid(2, 2, 200.0, 40.0, 10.0).unwrap()
}

#[test]
fn constant_queue_gives_its_level_as_tmq() {
    let net = net();
    let log = hand_log(&net, &[10.0; 30], 0.0);
    let k = traffic_kpis(&log, &net, 50.0).unwrap();
    assert_eq!(k.tmq, 10.0);
    // 10 vehicles for 30 cycles of 120 s.
    assert_eq!(k.att_total_h, 10.0 * 30.0 * 120.0 / 3600.0);
    assert_eq!(k.served, 0.0);
    assert_eq!(k.att_per_vehicle_min, 0.0);
    assert_eq!(k.delay_s_per_km, 0.0);
}

#[test]
fn delay_subtracts_free_flow_time() {
    let net = net();
    // 6 vehicles leave a 200 m link each cycle: 1.2 km per cycle.
    let log = hand_log(&net, &[6.0, 6.0], 6.0);
    let k = traffic_kpis(&log, &net, 50.0).unwrap();
    let vehicle_s = 2.0 * 6.0 * 120.0;
    let km = 2.0 * 6.0 * 0.2;
    let ff = km / 50.0 * 3600.0;
    assert!((k.delay_s_per_km - (vehicle_s - ff) / km).abs() < 1e-9);
    assert!((k.att_per_vehicle_min - vehicle_s / 12.0 / 60.0).abs() < 1e-12);
    assert_eq!(k.cumulative_outflow, vec![6.0, 12.0]);
    assert_eq!(k.served, 12.0);
}

#[test]
fn kpis_reject_bad_input() {
    let net = net();
    let mut log = hand_log(&net, &[1.0, 2.0], 0.0);
    assert!(traffic_kpis(&log, &net, 0.0).is_err());
    log.flows.pop();
    assert!(traffic_kpis(&log, &net, 50.0).is_err());
    let empty = hand_log(&net, &[], 0.0);
    assert!(traffic_kpis(&empty, &net, 50.0).is_err());
}

#[test]
fn fit_statistics_by_hand() {
    assert_eq!(mpe(&[1650.0, 1500.0], &[1600.0, 1600.0]).unwrap(), -1.5625);
    assert_eq!(mad(&[1650.0, 1500.0], &[1600.0, 1600.0]).unwrap(), 75.0);
    // Odd count: the middle deviation.
    assert_eq!(mad(&[10.0, 20.0, 35.0], &[11.0, 25.0, 30.0]).unwrap(), 5.0);
    assert_eq!(mpe(&[110.0, 90.0, 100.0], &[100.0, 100.0, 100.0]).unwrap(), 0.0);
}

#[test]
fn mad_ignores_common_shift() {
    let m = [1500.0, 1720.0, 1610.0, 1333.0];
    let s = [1550.0, 1700.0, 1600.0, 1400.0];
    let shift = |v: &[f64]| v.iter().map(|x| x + 250.0).collect::<Vec<_>>();
    assert_eq!(mad(&m, &s).unwrap(), mad(&shift(&m), &shift(&s)).unwrap());
    // Swapping roles cannot keep a strict sign.
    assert!(mpe(&m, &s).unwrap() * mpe(&s, &m).unwrap() <= 0.0);
}

#[test]
fn approximation_error_by_hand() {
    assert!((approximation_error(821.27, 835.85).unwrap() - 14.58 / 835.85 * 100.0).abs() < 1e-12);
    assert!((approximation_error(836.24, 835.85).unwrap() - 0.39 / 835.85 * 100.0).abs() < 1e-12);
    assert!(approximation_error(f64::NAN, 1.0).is_err());
}

#[test]
fn report_round_trips_through_csv() {
    let net = net();
    let log = hand_log(&net, &[3.0, 4.0, 5.0], 1.0);
    let k = traffic_kpis(&log, &net, 50.0).unwrap();
    let row = ReportRow::new("hand", "FixedTime_K0_N0", 0, 0, &log, &k);
    assert_eq!(row.tmq, 4.0);
    assert_eq!(row.mpe, None);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.csv");
    write_report(&p, &[row.clone(), row.clone()]).unwrap();
    assert_eq!(read_report(&p).unwrap(), vec![row.clone(), row]);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("scenario,cell,mode,horizon,envelopes,seed,tmq,"));
}

#[test]
fn outflow_series_is_written_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("outflow.csv");
    write_outflow(&p, &[1.5, 3.0]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "step,cumulative_outflow\n1,1.5\n2,3\n");
}

#[test]
fn closed_loop_outflow_matches_exit_flows() {
    let s = Scenario::load("builtin:grid2x2_mixed").unwrap();
    let net = s.network().unwrap();
    let cost = floyd_warshall(&net);
    let cfg = s.controller_config(sfm_control::mpc::Mode::FixedTime).unwrap();
    let log = run_closed_loop(&net, &cost, &s.setup(&net).unwrap(), &cfg, 2).unwrap();
    let k = traffic_kpis(&log, &net, 50.0).unwrap();
    let mut acc = 0.0;
    for (f, &cum) in log.flows.iter().zip(&k.cumulative_outflow) {
        acc += f.network_outflow(&net) * log.cycle;
        assert!((acc - cum).abs() < 1e-9);
    }
    let mean_stock: f64 = log.states[1..].iter().map(|x| x.network_total()).sum::<f64>() / log.steps() as f64;
    assert!((k.tmq - mean_stock).abs() < 1e-12);
    assert!(k.delay_s_per_km > 0.0);
    let fits = per_link_fit(&log, &net);
    assert!(fits.is_empty(), "FixedTime sets no modeled saturation");
}
