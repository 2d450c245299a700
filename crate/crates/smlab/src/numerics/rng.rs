//! Splittable, counter-based random streams and the samplers built on them.
//!
//! A stream is identified by `(master_seed, stream_id)`. The underlying
//! generator is ChaCha8 keyed by the master seed, with the stream id selecting
//! one of 2^64 independent keystreams and a 128-bit word counter positioning
//! inside it. Two streams with the same pair always produce the same sequence,
//! and the output of one stream does not depend on how many draws any other
//! stream has made. Ensemble member `i` of a run uses stream id `i`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, StandardNormal};

/// One independent random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    /// Opens stream `stream_id` under `master_seed`, positioned at counter 0.
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        inner.set_word_pos(0);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fills `out` with independent standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = StandardNormal.sample(&mut self.inner);
        }
    }

    /// Bernoulli(`p`) draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        p >= 1.0 || self.uniform() < p
    }

    /// Binomial(`n`, `p`) draw.
    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        if n == 0 || p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return n;
        }
        Binomial::new(n, p)
            .expect("binomial parameters validated above")
            .sample(&mut self.inner)
    }

    /// Geometric draw on `{1, 2, ...}` with success probability `p`:
    /// the index of the first success.
    pub fn geometric(&mut self, p: f64) -> u64 {
        if p >= 1.0 {
            return 1;
        }
        1 + Geometric::new(p)
            .expect("success probability must lie in (0, 1]")
            .sample(&mut self.inner)
    }

    /// Binomial(`n`, `p`) draw conditioned on being at least one.
    ///
    /// The position `J` of the first success, given that one occurs, has
    /// distribution function `(1 − (1−p)^j) / P` with `P = 1 − (1−p)^n`, which
    /// inverts in closed form. The remaining `n − J` trials are unconstrained.
    pub fn binomial_nonzero(&mut self, n: u64, p: f64) -> u64 {
        assert!(n >= 1, "zero-truncated binomial needs n >= 1");
        if p >= 1.0 {
            return n;
        }
        let log_q = (-p).ln_1p();
        let big_p = -((n as f64) * log_q).exp_m1();
        let u = self.uniform();
        let j_real = (-(u * big_p)).ln_1p() / log_q;
        let j = (j_real.floor() as u64).saturating_add(1).clamp(1, n);
        1 + self.binomial(n - j, p)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_pair_same_sequence() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn counter_advances() {
        let mut a = RngStream::new(1, 0);
        assert_eq!(a.counter(), 0);
        a.next_u64();
        assert_eq!(a.counter(), 2);
    }

    #[test]
    fn nonzero_binomial_is_in_range() {
        let mut r = RngStream::new(11, 0);
        for _ in 0..10_000 {
            let n = r.binomial_nonzero(10, 0.01);
            assert!((1..=10).contains(&n));
        }
        assert_eq!(r.binomial_nonzero(5, 1.0), 5);
    }
}
