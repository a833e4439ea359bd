//! Counter-based random streams.
//!
//! Every draw in a run is addressed by a path of integers below a 64-bit
//! seed (chain iteration, time, particle, ...). The generator for an address
//! is a keyed splitmix64 counter, so results never depend on the order in
//! which particles are processed or on the thread that processes them.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reserved particle slot for draws that belong to a whole time step
/// (final selection index, parameter updates, accept/reject).
pub const STEP_SLOT: u64 = u64::MAX;

/// Handle on a family of substreams; cheap to copy and to derive from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Streams {
    key: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed ^ 0x5851_f42d_4c95_7f2d) }
    }

    /// Substream family for a child address (e.g. a chain iteration or replicate).
    pub fn child(&self, idx: u64) -> Self {
        Self { key: mix64(self.key ^ mix64(idx.wrapping_add(GOLDEN))) }
    }

    /// Generator for particle `particle` at time `time` (0-based).
    pub fn rng(&self, time: u64, particle: u64) -> CounterRng {
        let k = self.child(time).child(particle).key;
        CounterRng { key: k, counter: 0 }
    }

    /// Generator for the step-level draws at `time`.
    pub fn step_rng(&self, time: u64) -> CounterRng {
        self.rng(time, STEP_SLOT)
    }
}

/// Keyed splitmix64 counter generator.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn from_seed(seed: u64) -> Self {
        Self { key: mix64(seed), counter: 0 }
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
