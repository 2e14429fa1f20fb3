//! Config file to design to simulation, the way the command-line tool
//! chains them.

use rma_core::config::RunConfig;
use rma_core::design::design;
use rma_core::dynamics::run_dynamics;
use rma_core::evolution::{avg_transmissions, evolve, EvolveOptions};
use rma_core::sic::{monte_carlo, FrameSetup};

const TWO_GROUPS: &str = r#"
num_devices = 1500
num_slots = 3000
scheme = "ack-all"
latency_mode = "strict"

[[group]]
alpha = 0.4
deadline_slots = 2100
target_error = 1e-2

[[group]]
alpha = 0.6
deadline_slots = 3000
target_error = 1e-2

[design]
objective = "min-sum-transmissions"
finite_size_c = 0.0
de = { max_generations = 120, seed = 9 }
"#;

#[test]
fn designed_matrix_holds_up_in_simulation() {
    let cfg = RunConfig::parse(TWO_GROUPS).unwrap();
    let problem = cfg.design_problem().unwrap();
    let res = design(&problem).unwrap();
    assert!(res.feasible, "{}", res.report());

    let scn = cfg.scenario().unwrap();
    let trace = evolve(&scn, &res.g, &EvolveOptions::default()).unwrap();
    for (a, b) in trace.deadline_errors().iter().zip(&res.raw_error) {
        assert!((a - b).abs() < 1e-12);
    }

    let mc = monte_carlo(&scn, &res.g, 60, 1).unwrap();
    for (i, e) in mc.deadline_errors().iter().enumerate() {
        assert!(*e < 3.0 * 1e-2, "group {i}: simulated {e}");
    }
    let m = avg_transmissions(&scn, &res.g);
    for (a, b) in m.iter().zip(&mc.mean_transmissions) {
        assert!((a - b).abs() / a < 0.02);
    }
}

#[test]
fn config_matrix_feeds_the_simulator() {
    // Top-level keys have to come before the first table.
    let text = format!("access_matrix = [[2.0, 0.5], [0.0, 1.5]]\nfeedback_loss_prob = 0.05\n{TWO_GROUPS}\n[simulate]\nack_loss_mode = \"pessimistic\"\n");
    let cfg = RunConfig::parse(&text).unwrap();
    let setup: FrameSetup = cfg.frame_setup().unwrap();
    assert_eq!(setup.subframe_slots, vec![2100, 900]);
    assert_eq!(setup.feedback_loss_prob, 0.05);
    assert!(matches!(setup.ack_loss_mode, rma_core::sic::AckLossMode::Pessimistic));
}

#[test]
fn dynamics_from_config() {
    let cfg = RunConfig::parse("[dynamics]\narrival_rate = 8.0\nframes = 300\nresource_model = { fixed-rbs = 40 }\n").unwrap();
    let run = run_dynamics(&cfg.dynamics_config().unwrap(), 2).unwrap();
    assert_eq!(run.records.len(), 300);
    assert!(run.summary.stable);
    assert!((run.summary.throughput - 8.0).abs() < 1.0);
}
