//! Deterministic, platform-independent random numbers.
//!
//! The generator is a 64-bit linear congruential generator
//! (`state <- state * 6364136223846793005 + increment`, Knuth's MMIX
//! multiplier) whose output passes the *pre-update* state through the
//! PCG "RXS-M-XS" permutation. The increment is always odd so every stream
//! has full period 2^64.
//!
//! Independent substreams are derived by hashing instead of jumping:
//! [`stream_seed`] mixes `(root, namespace, index)` with the SplitMix64
//! finalizer, so episode `i` of a collection run always receives the same
//! seed no matter which worker executes it. Namespaces keep collection,
//! evaluation and training streams disjoint under a shared root seed.

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const DEFAULT_INCREMENT: u64 = 1_442_695_040_888_963_407;

/// Stream namespaces. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Namespace {
    Collect = 0x436f_6c6c,
    Eval = 0x4576_616c,
    Pretrain = 0x5072_6574,
    Pairing = 0x5061_6972,
    Prompt = 0x5072_6f6d,
    Round = 0x526f_756e,
    World = 0x576f_726c,
    Expert = 0x4578_7065,
    Policy = 0x506f_6c69,
    Init = 0x496e_6974,
    Variant = 0x5661_7269,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for substream `index` of `namespace` under `root`.
pub fn stream_seed(root: u64, namespace: Namespace, index: u64) -> u64 {
    mix64(root ^ mix64((namespace as u64).wrapping_mul(0xd6e8_feb8_6659_fd93) ^ mix64(index)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
    increment: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, DEFAULT_INCREMENT)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Rng {
            state: 0,
            increment: (stream << 1) | 1,
        };
        rng.state = rng.state.wrapping_add(mix64(seed));
        rng.next_u64();
        rng
    }

    /// Generator for `stream_seed(root, namespace, index)`.
    pub fn substream(root: u64, namespace: Namespace, index: u64) -> Self {
        Self::new(stream_seed(root, namespace, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        let old = self.state;
        self.state = old.wrapping_mul(MULTIPLIER).wrapping_add(self.increment);
        // RXS-M-XS output permutation
        let word = ((old >> ((old >> 59) + 5)) ^ old).wrapping_mul(12_605_985_483_714_917_081);
        (word >> 43) ^ word
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
