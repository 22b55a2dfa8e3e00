//! SplitMix64 streams with keyed splitting.
//!
//! The generator state is a single 64-bit counter advanced by the golden-ratio
//! increment; each output is the counter passed through the SplitMix64
//! finaliser. A child stream for key `k` is seeded with
//! `mix(parent_seed ^ mix(k ^ SPLIT_SALT))`, which depends only on the parent
//! seed and the key, never on how many values the parent has drawn.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream for `key`.
    pub fn split(&self, key: u64) -> RngStream {
        RngStream::new(mix64(self.seed ^ mix64(key ^ SPLIT_SALT)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn next_open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal draw (Box–Muller, one value per call).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_open_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gumbel(0, 1) draw.
    pub fn next_gumbel(&mut self) -> f64 {
        -(-self.next_open_uniform().ln()).ln()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_splitmix64() {
        // Published reference outputs of SplitMix64 for seed 1234567.
        let mut s = RngStream::new(1_234_567);
        let got: Vec<u64> = (0..5).map(|_| s.next_u64()).collect();
        assert_eq!(
            got,
            [
                6457827717110365317,
                3203168211198807973,
                9817491932198370423,
                4593380528125082431,
                16408922859458223821
            ]
        );
    }

    #[test]
    fn seed_42_golden_triple() {
        let mut s = RngStream::new(42);
        let draws: Vec<u64> = (0..3).map(|_| s.next_uniform().to_bits()).collect();
        assert_eq!(draws, GOLDEN_42);
    }

    // 0.7415648787718233, 0.1599103928769201, 0.27860113025513866; any change
    // here breaks every seeded artifact.
    const GOLDEN_42: [u64; 3] = [4604854642168692077, 4594929399376720760, 4598690451703514086];

    #[test]
    fn split_streams_are_disjoint_and_stable() {
        let root = RngStream::new(42);
        let mut a = root.split(0);
        let mut b = root.split(1);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert!(xa.iter().all(|v| !xb.contains(v)));

        let mut drawn = root.clone();
        drawn.next_u64();
        assert_eq!(drawn.split(0), root.split(0));
    }

    #[test]
    fn distinct_seeds_differ_immediately() {
        assert_ne!(
            RngStream::new(0).next_uniform(),
            RngStream::new(1).next_uniform()
        );
    }

    #[test]
    fn uniform_ranges() {
        let mut s = RngStream::new(3);
        for _ in 0..10_000 {
            let u = s.next_uniform();
            assert!((0.0..1.0).contains(&u));
            let o = s.next_open_uniform();
            assert!(o > 0.0 && o < 1.0);
            assert!(s.next_below(7) < 7);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(5);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }
}
