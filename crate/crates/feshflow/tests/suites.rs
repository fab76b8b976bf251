use feshflow::config::ExperimentConfig;
use feshflow::report::Status;
use feshflow::suites::{explain, Experiment, SUITES};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.ensemble.count = 2;
    cfg.suites.z_per_member = 1;
    cfg.suites.flow_members = 1;
    cfg.suites.iterate_steps = 2;
    cfg.suites.family_points = 500;
    cfg.suites.fixed_point.zeta_fractions = vec![0.0, 0.9];
    cfg.suites.fixed_point.angles = 2;
    cfg.suites.fixed_point.ring_points = 4;
    cfg
}

#[test]
fn every_suite_passes_and_is_explained() {
    let exp = Experiment::new(small()).unwrap();
    let mut missing = Vec::new();
    for s in SUITES {
        let out = exp.run_suite(s).unwrap();
        let rep = &out.report;
        assert!(rep.passed(), "{s}: {:?}", rep.failures().next());
        assert!(rep.counts().pass > 0, "{s}");
        let text = explain(s).unwrap();
        for c in &rep.checks {
            let stem = c.name.trim_end_matches("_composed").trim_end_matches("_fitted");
            if !text.contains(stem) && !missing.contains(&(s, c.name.clone())) {
                missing.push((s, c.name.clone()));
            }
        }
    }
    assert!(missing.is_empty(), "not explained: {missing:?}");
    assert!(exp.run_suite("nope").is_err());
    assert!(explain("nope").is_err());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let run = |threads| {
        let exp = Experiment::new(small()).unwrap();
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            ["isospectrality", "bounds"].map(|s| serde_json::to_string(&exp.run_suite(s).unwrap().report).unwrap())
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn member_cases_are_labelled() {
    let exp = Experiment::new(small()).unwrap();
    let rep = exp.run_suite("ind").unwrap().report;
    assert!(rep.checks.iter().any(|c| c.case.starts_with("member 1")));
    assert!(rep.checks.iter().all(|c| c.status == Status::Pass));
}

#[test]
fn iterate_emits_a_trace_table() {
    let exp = Experiment::new(small()).unwrap();
    let out = exp.run_suite("iterate").unwrap();
    let t = out.tables.iter().find(|t| t.name == "iterate_trace").unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.rows.iter().all(|r| r.len() == t.header.len()));
}
