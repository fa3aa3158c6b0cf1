#![no_main]

use libfuzzer_sys::fuzz_target;
use robosched::neural::QNetwork;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(net) = QNetwork::from_json(text) else { return };
    let again = QNetwork::from_json(&net.to_json()).expect("round trip");
    assert_eq!(net.params, again.params);
});
