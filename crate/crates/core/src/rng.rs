//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded
//! with `ChaCha8Rng::seed_from_u64(seed)` and then switched to a numbered
//! stream with `set_stream`. Distinct consumers of one user seed use distinct
//! stream numbers, so their draws never overlap and can be generated in any
//! order or in parallel:
//!
//! | stream                     | consumer                           |
//! |----------------------------|------------------------------------|
//! | [`STREAM_INIT`]            | weight initialization              |
//! | [`STREAM_SHUFFLE`] `+ e`   | batch order of epoch `e`           |
//! | [`STREAM_SAMPLE`] `+ k`    | `k`-th chunk of Gaussian-model draws |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1 << 32;
pub const STREAM_SAMPLE: u64 = 2 << 32;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
