//! Counter-based deterministic RNG.
//!
//! Every random decision in the crate draws from a [`CounterRng`] keyed by
//! `(seed, stream labels…)`. Streams are independent hash-derived keys, so
//! adding a consumer never perturbs any other stream, and resuming a run
//! re-derives the exact generator for any (fold, epoch) without serializing
//! generator internals.

/// splitmix64 finalizer; the core mixing function.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a over UTF-8 bytes.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, streams: &[&str]) -> Self {
        let mut key = mix(seed ^ 0x6a09_e667_f3bc_c908);
        for s in streams {
            key = mix(key ^ hash_str(s));
        }
        CounterRng { key, counter: 0 }
    }

    /// Derive an independent child stream without advancing this one.
    pub fn derive(&self, label: &str) -> CounterRng {
        CounterRng { key: mix(self.key ^ hash_str(label)), counter: 0 }
    }

    /// Derive an independent child stream from an integer label.
    pub fn derive_u64(&self, n: u64) -> CounterRng {
        CounterRng { key: mix(self.key ^ mix(n ^ 0x9e37_79b9_7f4a_7c15)), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.key ^ self.counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            // Still consume a draw so degenerate ranges don't shift the stream.
            let _ = self.next_f64();
            return lo;
        }
        (self.uniform(lo.ln(), hi.ln())).exp()
    }

    /// Standard normal via Box-Muller (consumes two draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased-enough integer in [0, n) via 128-bit multiply-shift.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn choose<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len() as u64) as usize]
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Short hex digest of the generator identity, for checkpoint metadata.
    pub fn digest(&self) -> String {
        format!("{:016x}:{:x}", self.key, self.counter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_across_instances() {
        let mut a = CounterRng::new(7, &["init", "conv1.weight"]);
        let mut b = CounterRng::new(7, &["init", "conv1.weight"]);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = CounterRng::new(7, &["shuffle"]);
        let mut b = CounterRng::new(7, &["sample"]);
        let av: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let bv: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(av, bv);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = CounterRng::new(3, &["u"]);
        for _ in 0..1000 {
            let v = r.uniform(2.0, 5.0);
            assert!((2.0..5.0).contains(&v));
        }
    }

    #[test]
    fn shuffle_permutes() {
        let mut r = CounterRng::new(11, &["s"]);
        let mut xs: Vec<u32> = (0..50).collect();
        r.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(xs, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn below_covers_range() {
        let mut r = CounterRng::new(5, &["b"]);
        let mut seen = [false; 7];
        for _ in 0..500 {
            seen[r.below(7) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
