//! Counter-based random substreams.
//!
//! Every source of randomness in a run is a ChaCha stream keyed by
//! `(seed, label)`. Streams never share state, so consuming more draws from
//! one (say, simulated reserves) leaves every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Labels of the named substreams used by the simulator.
pub mod streams {
    pub const ENV_BUILD: &str = "env-build";
    pub const TRANSITIONS: &str = "env-transitions";
    pub const VALUATIONS: &str = "env-valuations";
    pub const SELLER_COIN: &str = "seller-mixture-coin";
    pub const PI_RAND: &str = "seller-pi-rand";
    pub const COLD_START: &str = "seller-cold-start";
    pub const SIM_RESERVES: &str = "seller-sim-reserves";
    pub const MC_LEARNING: &str = "seller-mc-revenue";
    pub const FIT_STARTS: &str = "seller-fit-starts";
    pub const ORACLE_MC: &str = "oracle-mc-revenue";
}

fn label_id(label: &str) -> u64 {
    // FNV-1a
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn substream(seed: u64, label: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_id(label));
    rng
}
