use dexgraph_core::fl::{aggregate, Arch, ModelParams};
use dexgraph_core::harness::{
    read_csv, rounds_to_threshold, run_oracle, run_pipeline, scenario, summarize, write_csv, Method,
};
use dexgraph_core::rng::stream;
use proptest::prelude::*;

fn quick(name: &str) -> dexgraph_core::ExperimentConfig {
    let mut c = scenario(name).unwrap();
    c.seeds = vec![0];
    c.rl.t_rl = 40;
    c.fl.rounds = 4;
    c.system.devices = c.system.devices.min(6);
    c
}

#[test]
fn smoke_rows_roundtrip_through_csv() {
    let out = run_pipeline(&quick("smoke"), 2).unwrap();
    assert!(out.failures.is_empty());
    let mut buf = Vec::new();
    write_csv(&out.rows, &mut buf).unwrap();
    let back = read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), out.rows.len());
    for (a, b) in back.iter().zip(&out.rows) {
        assert_eq!(
            (&a.method, a.seed, a.round, &a.metric),
            (&b.method, b.seed, b.round, &b.metric)
        );
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn every_method_reports_each_round() {
    let cfg = quick("smoke");
    let out = run_pipeline(&cfg, 1).unwrap();
    for m in Method::ALL {
        let rounds: Vec<usize> = out
            .rows
            .iter()
            .filter(|r| r.method == m.name() && r.metric == "accuracy")
            .map(|r| r.round)
            .collect();
        assert_eq!(
            rounds,
            (1..=cfg.fl.rounds).collect::<Vec<_>>(),
            "{}",
            m.name()
        );
    }
}

#[test]
fn energy_is_cumulative() {
    let out = run_pipeline(&quick("smoke"), 1).unwrap();
    let ours: Vec<_> = out
        .rows
        .iter()
        .filter(|r| r.method == "ours" && r.metric == "accuracy")
        .collect();
    for w in ours.windows(2) {
        assert!(w[1].d2s_joules >= w[0].d2s_joules);
        assert!(w[1].d2d_joules >= w[0].d2d_joules);
    }
    let none = out
        .rows
        .iter()
        .find(|r| r.method == "none" && r.metric == "rl_bits")
        .unwrap();
    assert_eq!(none.value, 0.0);
}

#[test]
fn sweep_cells_are_labelled() {
    let mut cfg = quick("aggregation_interval");
    cfg.methods = vec![Method::None];
    cfg.sweep.as_mut().unwrap().values.truncate(2);
    let rows = run_pipeline(&cfg, 2).unwrap().rows;
    let mut labels: Vec<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    labels.dedup();
    assert_eq!(
        labels,
        [
            "aggregation_interval/fl.tau_a=1",
            "aggregation_interval/fl.tau_a=2"
        ]
    );
    assert_eq!(summarize(&rows, 0.7).len(), 2 * 5);
}

#[test]
fn oracle_bounds_every_method() {
    let rows = run_oracle(&quick("smoke")).unwrap();
    assert!(rows
        .iter()
        .all(|r| r.metric == "graph_objective" && r.round == 0));
    let opt = rows.iter().find(|r| r.method == "oracle").unwrap().value;
    assert_eq!(rows.len(), 1 + Method::ALL.len());
    for r in &rows {
        assert!(r.value <= opt + 1e-9, "{} {}", r.method, r.value);
    }
}

proptest! {
    #[test]
    fn aggregate_stays_within_inputs(seed in 0u64..500, k in 1usize..6, raw in prop::collection::vec(0.0f64..10.0, 6)) {
        let arch = Arch::Softmax { input: 3, outputs: 2 };
        let mut rng = stream(seed, &[]);
        let models: Vec<ModelParams> = (0..k).map(|_| ModelParams::init(arch, &mut rng).unwrap()).collect();
        let refs: Vec<&ModelParams> = models.iter().collect();
        let avg = aggregate(&refs, &raw[..k]).unwrap();
        for p in 0..arch.num_params() {
            let lo = models.iter().map(|m| m.weights()[p]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m.weights()[p]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(avg.weights()[p] >= lo - 1e-12 && avg.weights()[p] <= hi + 1e-12);
        }
    }

    #[test]
    fn threshold_round_is_first_crossing(values in prop::collection::vec(0.0f64..1.0, 1..40), thr in 0.0f64..1.0) {
        let series: Vec<(usize, f64)> = values.iter().copied().enumerate().map(|(i, v)| (i + 1, v)).collect();
        match rounds_to_threshold(&series, thr) {
            Some(r) => {
                prop_assert!(series[r - 1].1 >= thr);
                prop_assert!(series[..r - 1].iter().all(|(_, v)| *v < thr));
            }
            None => prop_assert!(series.iter().all(|(_, v)| *v < thr)),
        }
    }
}
