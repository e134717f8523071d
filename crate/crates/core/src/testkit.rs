//! Deterministic generators for verification instances, shared by the test
//! suites and the CLI selfcheck so both exercise identical cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Dims, ModelParams};
use crate::numeric::{ParamBlocks, Vector};
use crate::vocab::{START_ID, STOP_ID};

/// A random gradient-check instance: model dims within the desk-scale
/// bounds (V ≤ 12, H ≤ 8, E ≤ 8, D ≤ 6), an O(1)-scale parameter point, a
/// feature vector, and a framed caption of length ≤ 5.
///
/// Parameters are drawn uniform in [−1, 1] rather than from `init` so
/// gradient entries sit well above the f64 central-difference noise floor
/// (at ε = 1e-5 a loss roundoff of ~1e-15 puts ~5e-11 of absolute noise on
/// the numeric derivative, which swamps the relative comparison for entries
/// below ~1e-7).
pub fn grad_check_instance(seed: u64) -> (ModelParams, Vector, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        d: rng.gen_range(2..=6),
        e: rng.gen_range(2..=8),
        h: rng.gen_range(2..=8),
        v: rng.gen_range(4..=12),
    };
    let mut params = ModelParams::zeros(dims);
    for name in params.block_names() {
        for v in params.block_mut(&name) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let feature = Vector::new((0..dims.d).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let words = rng.gen_range(1..=3);
    let mut ids = vec![START_ID];
    for _ in 0..words {
        ids.push(rng.gen_range(3..dims.v));
    }
    ids.push(STOP_ID);
    (params, feature, ids)
}

/// A small random decoding model (initialized weights) plus a feature, for
/// beam-search checks. `v` and `max_len` bound the exhaustive search space.
pub fn decode_instance(seed: u64, v: usize, d: usize) -> (ModelParams, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        d,
        e: rng.gen_range(2..=5),
        h: rng.gen_range(2..=5),
        v,
    };
    let params = ModelParams::init(dims, rng.gen());
    let feature = Vector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
    (params, feature)
}
