//! Counter-based random number streams.
//!
//! Every consumer derives an independent stream from `(global seed, domain
//! tag, id, counter)`. Streams are cheap to construct, so parallel code can
//! key one stream per particle per macro step and stay bit-reproducible
//! regardless of scheduling order.

/// Stream domains keep unrelated consumers statistically independent even
/// when they share ids (e.g. particle 0 during init vs particle 0 stepping).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Init,
    Particle,
    NBody,
    Probe,
    Field,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Init => 0x494e4954,
            StreamKind::Particle => 0x50415254,
            StreamKind::NBody => 0x4e424f44,
            StreamKind::Probe => 0x50524f42,
            StreamKind::Field => 0x46494c44,
        }
    }
}

/// splitmix64 finalizer; full-period bijective mixer on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// A splitmix64 sequence whose starting state is a hash of the stream key.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    /// Derive the stream for `(seed, kind, id, counter)`.
    pub fn substream(seed: u64, kind: StreamKind, id: u64, counter: u64) -> Self {
        let mut s = mix64(seed ^ GOLDEN);
        s = mix64(s ^ kind.tag().wrapping_mul(GOLDEN));
        s = mix64(s ^ id.wrapping_mul(0xd1b5_4a32_d192_ed03));
        s = mix64(s ^ counter.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7));
        StreamRng { state: s }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // 53 random bits, offset by half an ulp so 0 and 1 are unreachable.
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Pair of independent standard normals (Box-Muller).
    #[inline]
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }
}
