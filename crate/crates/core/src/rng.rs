//! Seeded randomness. Everything random in the crate draws from PCG-64
//! (`Lcg128Xsl64`), whose output is fixed across platforms.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type Rng = Pcg64;

/// The main generator for `seed`.
pub fn seeded(seed: u64) -> Rng {
    Pcg64::seed_from_u64(seed)
}

/// An independent PCG stream for work item `index` under `seed`.
///
/// Parallel workers use one stream per item so output does not depend on
/// scheduling.
pub fn stream(seed: u64, index: u64) -> Rng {
    let state = (u128::from(splitmix(seed)) << 64) | u128::from(splitmix(seed ^ 0xa076_1d64_78bd_642f));
    Pcg64::new(state, u128::from(index))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
