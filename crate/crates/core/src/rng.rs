//! Pinned SplitMix64 generator.
//!
//! Every random decision in a run, every pseudonym and every stored digest is
//! derived from this one mixer, so outputs are reproducible bit-for-bit from
//! any implementation that follows the same constants.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 stream. The state advances by the golden gamma before each
/// output is mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, bound)` by plain modulo reduction. `bound == 0` yields 0.
    ///
    /// The modulo bias is below 2^-40 for the bounds used here and keeps the
    /// draw trivially portable.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        if bound == 0 {
            return 0;
        }
        self.next_u64() % bound
    }

    /// Bernoulli draw; consumes exactly one output.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

/// One generator step from `input` as the state: the building block for
/// pseudonyms and stored digests.
#[inline]
pub fn mix_once(input: u64) -> u64 {
    SplitMix64::new(input).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_outputs_from_zero() {
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn mix_once_is_one_step() {
        assert_eq!(mix_once(0), 0xE220_A839_7B1D_CDAF);
        let mut rng = SplitMix64::new(42);
        assert_eq!(mix_once(42), rng.next_u64());
    }

    #[test]
    fn unit_interval() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
        assert_eq!(rng.next_below(0), 0);
    }
}
