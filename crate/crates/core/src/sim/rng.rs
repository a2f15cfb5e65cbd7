//! Counter-addressed random streams.
//!
//! Every random draw in a scan comes from a ChaCha8 stream keyed by the run
//! seed and addressed by `(lane, scan, pixel)`. A task therefore sees the
//! same numbers no matter which thread runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LANE_SHIFT: u32 = 62;
const SCAN_SHIFT: u32 = 31;
const INDEX_MASK: u64 = (1 << SCAN_SHIFT) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Lane {
    /// Poisson draws for one (scan, pixel) cell.
    Counts = 0,
    /// Per-scan line-center jitter.
    Jitter = 1,
    /// Per-pixel laser intensity factor.
    Intensity = 2,
}

#[derive(Clone)]
pub(crate) struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn stream(&self, lane: Lane, scan: u64, pixel: u64) -> ChaCha8Rng {
        debug_assert!(scan <= INDEX_MASK && pixel <= INDEX_MASK);
        let id = ((lane as u64) << LANE_SHIFT)
            | ((scan & INDEX_MASK) << SCAN_SHIFT)
            | (pixel & INDEX_MASK);
        let mut rng = self.base.clone();
        rng.set_stream(id);
        rng.set_word_pos(0);
        rng
    }
}

/// Largest scan or pixel index addressable by a stream.
pub(crate) const MAX_INDEX: u64 = INDEX_MASK;
