//! Named random streams derived from the run's root seed.
//!
//! Every draw in a run is keyed by (purpose, step, sample), so nothing about
//! the RNG needs to be checkpointed and work can be scheduled in any order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rollout = 1,
    Shuffle = 2,
    Job = 3,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(root: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = mix(root ^ 0x9e37_79b9_7f4a_7c15);
    for x in [stream as u64, a, b] {
        h = mix(h ^ x.wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    h
}
