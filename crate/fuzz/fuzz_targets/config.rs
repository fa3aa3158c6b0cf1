#![no_main]

use libfuzzer_sys::fuzz_target;
use robosched::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<ExperimentConfig>(data) else { return };
    let _ = cfg.generator.validate();
    let _ = cfg.train.validate();
    let text = serde_json::to_string(&cfg).expect("config serializes");
    let again: ExperimentConfig = serde_json::from_str(&text).expect("round trip");
    assert_eq!(cfg, again);
});
