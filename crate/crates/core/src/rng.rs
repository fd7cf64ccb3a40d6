//! Counter-based splittable random streams.
//!
//! Every random decision in the simulator comes from a stream keyed by
//! `(seed, domain, subkeys...)`. Streams are stateless beyond a draw counter,
//! so the sample-index sequence of agent `k` at round `t` can be regenerated
//! anywhere (coupled runs, test oracles, parallel sweeps) without threading
//! RNG state through the call graph.

/// Key domains. Distinct domains guarantee that e.g. data generation and
/// sample-index draws never share a stream even under equal subkeys.
pub mod domain {
    pub const SYNTH: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const REPLACEMENT: u64 = 3;
    pub const SAMPLE_DRAW: u64 = 4;
    pub const CENTRAL_DRAW: u64 = 5;
    pub const INIT: u64 = 6;
    pub const PROBE: u64 = 7;
    pub const PERTURB_SITE: u64 = 8;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A counter-based stream: the key is a hash of its subkey words, draws are
/// `mix(key + counter * GOLDEN)`.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    ctr: u64,
    pending_normal: Option<f64>,
}

impl Stream {
    /// Derive a stream from key words, e.g. `[seed, domain, agent, round]`.
    pub fn keyed(words: &[u64]) -> Self {
        let mut h = 0x243f_6a88_85a3_08d3u64; // arbitrary nonzero start
        for &w in words {
            h = mix(h ^ w).wrapping_add(GOLDEN);
        }
        Stream {
            key: h,
            ctr: 0,
            pending_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN)));
        self.ctr += 1;
        v
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe as a logarithm argument.
    #[inline]
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` via widening multiply (bias < n / 2^64).
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller; the pair partner is cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.pending_normal.take() {
            return z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = std::f64::consts::TAU * u2;
        self.pending_normal = Some(r * a.sin());
        r * a.cos()
    }

    /// Gamma(shape, 1) draw, Marsaglia-Tsang with the `shape < 1` boost.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            let u = self.next_f64_open();
            return g * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.next_f64_open();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// Dirichlet(alpha, ..., alpha) draw over `k` categories.
    pub fn dirichlet_symmetric(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let mut g: Vec<f64> = (0..k).map(|_| self.gamma(alpha)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 {
            for v in &mut g {
                *v /= s;
            }
        } else {
            // All-zero underflow (tiny alpha): fall back to a single category.
            let j = self.index(k);
            g.iter_mut().for_each(|v| *v = 0.0);
            g[j] = 1.0;
        }
        g
    }
}
