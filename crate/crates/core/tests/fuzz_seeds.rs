//! Runs the fuzz target bodies over the checked-in seed corpora.

use std::fs;
use std::path::PathBuf;

use robosched::harness::ExperimentConfig;
use robosched::neural::QNetwork;
use robosched::trajectory::{episodes, parse_records, write_records};
use robosched::ProblemInstance;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn instance_seeds() {
    let mut parsed = 0;
    for (path, text) in seeds("instance_json") {
        let Ok(p) = ProblemInstance::from_json(&text) else { continue };
        parsed += 1;
        assert_eq!(ProblemInstance::from_json(&p.to_json()).unwrap(), p, "{}", path.display());
        let _ = p.initial_stn().is_consistent();
    }
    assert!(parsed >= 2);
}

#[test]
fn trajectory_seeds() {
    let mut parsed = 0;
    for (path, text) in seeds("trajectory_jsonl") {
        let Ok(records) = parse_records(&text) else { continue };
        parsed += 1;
        let mut out = Vec::new();
        write_records(&mut out, &records).unwrap();
        assert_eq!(parse_records(std::str::from_utf8(&out).unwrap()).unwrap(), records, "{}", path.display());
        assert_eq!(episodes(&records).iter().map(|e| e.len()).sum::<usize>(), records.len());
    }
    assert!(parsed >= 1);
}

#[test]
fn checkpoint_seeds() {
    let mut parsed = 0;
    for (path, text) in seeds("checkpoint") {
        let Ok(net) = QNetwork::from_json(&text) else { continue };
        parsed += 1;
        assert_eq!(QNetwork::from_json(&net.to_json()).unwrap().params, net.params, "{}", path.display());
    }
    assert_eq!(parsed, 1);
}

#[test]
fn config_seeds() {
    let mut parsed = 0;
    for (path, text) in seeds("config") {
        let Ok(cfg) = serde_json::from_str::<ExperimentConfig>(&text) else { continue };
        parsed += 1;
        let _ = cfg.generator.validate();
        let _ = cfg.train.validate();
        let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg, "{}", path.display());
    }
    assert!(parsed >= 2);
}
