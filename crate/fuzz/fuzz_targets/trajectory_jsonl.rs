#![no_main]

use libfuzzer_sys::fuzz_target;
use robosched::trajectory::{episodes, parse_records, write_records};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(records) = parse_records(text) else { return };
    let mut out = Vec::new();
    write_records(&mut out, &records).expect("in-memory write");
    let again = parse_records(std::str::from_utf8(&out).expect("utf-8")).expect("round trip");
    assert_eq!(records, again);
    let total: usize = episodes(&records).iter().map(|e| e.len()).sum();
    assert_eq!(total, records.len());
});
