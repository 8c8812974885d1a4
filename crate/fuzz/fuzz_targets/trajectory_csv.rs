#![no_main]

use libfuzzer_sys::fuzz_target;
use rzk_core::csv_io::{read_trajectory, write_trajectory};

fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = read_trajectory(data, 0.3) {
        let mut out = Vec::new();
        write_trajectory(&mut out, &traj, None).expect("write parsed trajectory");
        let again = read_trajectory(out.as_slice(), 0.3).expect("re-read written trajectory");
        assert_eq!(again.samples.len(), traj.samples.len());
    }
});
