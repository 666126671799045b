//! Deterministic random streams.
//!
//! Every source of randomness in the pipeline is derived from one master
//! seed through named substreams, so changing one axis of a run (say, the
//! augmentation draw for sample 17) never perturbs any other axis.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixing step of the splitmix64 generator; used only for seed derivation.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the stream name, so distinct names give distinct streams.
fn hash_name(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A seeded RNG for the substream `(master, name, index)`.
///
/// `name` identifies the pipeline stage ("generate", "augment", "init",
/// "dropout", ...); `index` distinguishes per-sample or per-iteration draws
/// inside a stage.
pub fn substream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut state = master ^ hash_name(name).rotate_left(17) ^ index.wrapping_mul(0xa24b_aed4_963e_e407);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: Vec<u32> = substream(7, "augment", 3).sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<u32> = substream(7, "augment", 3).sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_distinct_streams() {
        let base: Vec<u32> = substream(7, "augment", 3).sample_iter(rand::distributions::Standard).take(8).collect();
        for (master, name, index) in [(8, "augment", 3), (7, "dropout", 3), (7, "augment", 4)] {
            let other: Vec<u32> = substream(master, name, index)
                .sample_iter(rand::distributions::Standard)
                .take(8)
                .collect();
            assert_ne!(base, other, "stream ({master}, {name}, {index}) collided");
        }
    }
}
