#![no_main]

use libfuzzer_sys::fuzz_target;
use robosched::ProblemInstance;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = ProblemInstance::from_json(text) else { return };
    let again = ProblemInstance::from_json(&p.to_json()).expect("round trip");
    assert_eq!(p, again);
    if p.num_tasks() <= 12 {
        let _ = p.initial_stn().is_consistent();
    }
});
