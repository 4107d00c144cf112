//! Local 1D transform kernels: iterative radix-2 for power-of-two lengths,
//! recursive mixed-radix splitting for composites, naive DFT for prime factors.

use num_complex::Complex;

use crate::real::FftReal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

/// Precomputed schedule for one transform length and direction.
///
/// `twiddles[k] = exp(sign * 2*pi*i * k / len)`, shared by every recursion
/// level through stride indexing. The inverse kernel folds in the 1/len factor.
#[derive(Debug)]
pub struct Kernel1d<T: FftReal> {
    pub len: usize,
    pub direction: Direction,
    twiddles: Vec<Complex<T>>,
    factors: Vec<usize>,
    bitrev: Option<Vec<usize>>,
    scale: T,
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut f = 2;
    while f * f <= n {
        while n % f == 0 {
            factors.push(f);
            n /= f;
        }
        f += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

fn bit_reverse_table(n: usize) -> Vec<usize> {
    let bits = n.trailing_zeros();
    (0..n).map(|i| (i.reverse_bits() >> (usize::BITS - bits)) as usize).collect()
}

impl<T: FftReal> Kernel1d<T> {
    pub fn new(len: usize, direction: Direction) -> Self {
        assert!(len >= 1);
        let sign = direction.sign();
        let twiddles = (0..len)
            .map(|k| {
                let angle = sign * 2.0 * std::f64::consts::PI * k as f64 / len as f64;
                Complex::new(T::of_f64(angle.cos()), T::of_f64(angle.sin()))
            })
            .collect();
        let bitrev = (len.is_power_of_two() && len > 1).then(|| bit_reverse_table(len));
        let scale = match direction {
            Direction::Forward => T::one(),
            Direction::Inverse => T::of_f64(1.0 / len as f64),
        };
        Kernel1d { len, direction, twiddles, factors: factorize(len), bitrev, scale }
    }

    /// Scratch element count needed by [`Self::process`].
    pub fn scratch_len(&self) -> usize {
        // input copy + recursion scratch + butterfly temp for the largest factor
        2 * self.len + self.factors.iter().copied().max().unwrap_or(1)
    }

    /// Transforms `line` in place. `scratch` must hold `scratch_len()` elements.
    pub fn process(&self, line: &mut [Complex<T>], scratch: &mut [Complex<T>]) {
        debug_assert_eq!(line.len(), self.len);
        if self.len == 1 {
            return;
        }
        if self.bitrev.is_some() {
            self.process_pow2(line);
        } else {
            let (copy, rest) = scratch.split_at_mut(self.len);
            let (tmp, bt) = rest.split_at_mut(self.len);
            copy.copy_from_slice(line);
            self.recurse(copy, 1, line, tmp, bt, self.len, &self.factors);
        }
        if self.direction == Direction::Inverse {
            for v in line.iter_mut() {
                *v = v.scale(self.scale);
            }
        }
    }

    fn process_pow2(&self, buf: &mut [Complex<T>]) {
        let n = self.len;
        let rev = self.bitrev.as_ref().unwrap();
        for i in 0..n {
            let j = rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut m = 1;
        while m < n {
            let stride = n / (2 * m);
            for k in (0..n).step_by(2 * m) {
                for j in 0..m {
                    let w = self.twiddles[j * stride];
                    let t = w * buf[k + j + m];
                    let u = buf[k + j];
                    buf[k + j] = u + t;
                    buf[k + j + m] = u - t;
                }
            }
            m *= 2;
        }
    }

    /// DIT mixed radix: dst receives the length-`n` transform of
    /// `input[0], input[stride], ...`; `tmp` is same-length scratch.
    fn recurse(
        &self,
        input: &[Complex<T>],
        stride: usize,
        dst: &mut [Complex<T>],
        tmp: &mut [Complex<T>],
        bt: &mut [Complex<T>],
        n: usize,
        factors: &[usize],
    ) {
        let step = self.len / n; // w_n = twiddles[step]
        if n == 1 {
            dst[0] = input[0];
            return;
        }
        if factors.len() == 1 {
            // prime length: naive DFT over the strided input
            for k in 0..n {
                let mut acc = Complex::new(T::zero(), T::zero());
                for j in 0..n {
                    let idx = (j * k) % n * step;
                    acc = acc + input[j * stride] * self.twiddles[idx];
                }
                dst[k] = acc;
            }
            return;
        }
        let r = factors[0];
        let m = n / r;
        for q in 0..r {
            let (t_sub, d_sub) = (&mut tmp[q * m..(q + 1) * m], &mut dst[q * m..(q + 1) * m]);
            self.recurse(&input[q * stride..], stride * r, t_sub, d_sub, bt, m, &factors[1..]);
        }
        // combine r sub-transforms of length m out of tmp into dst
        for t in 0..m {
            for (q, slot) in bt.iter_mut().enumerate().take(r) {
                *slot = tmp[q * m + t] * self.twiddles[(q * t * step) % self.len];
            }
            for j in 0..r {
                let mut acc = Complex::new(T::zero(), T::zero());
                for q in 0..r {
                    acc = acc + bt[q] * self.twiddles[(q * j * m * step) % self.len];
                }
                dst[j * m + t] = acc;
            }
        }
    }
}

/// Brute-force O(N^2) DFT, the independent correctness oracle.
///
/// Forward is unnormalized; inverse carries the 1/N factor. Accumulation runs
/// in f64 regardless of `T`.
pub fn naive_dft_1d<T: FftReal>(input: &[Complex<T>], direction: Direction) -> Vec<Complex<T>> {
    let n = input.len();
    let sign = direction.sign();
    let x64: Vec<Complex<f64>> =
        input.iter().map(|c| Complex::new(c.re.to_f64(), c.im.to_f64())).collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex::new(0.0f64, 0.0);
        for (j, v) in x64.iter().enumerate() {
            let angle = sign * 2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64;
            acc += v * Complex::new(angle.cos(), angle.sin());
        }
        if direction == Direction::Inverse {
            acc /= n as f64;
        }
        out.push(Complex::new(T::of_f64(acc.re), T::of_f64(acc.im)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn max_err(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn random_line(n: usize, seed: u64) -> Vec<Complex<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn naive_dft_trivial_examples() {
        let delta = vec![
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
        ];
        let out = naive_dft_1d(&delta, Direction::Forward);
        for v in &out {
            assert!((v - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }

        let ones = vec![Complex::new(1.0, 0.0); 4];
        let out = naive_dft_1d(&ones, Direction::Forward);
        assert!((out[0] - Complex::new(4.0, 0.0)).norm() < 1e-12);
        for v in &out[1..] {
            assert!(v.norm() < 1e-12);
        }

        // pure frequency bin k=1
        let x = vec![
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 1.0),
            Complex::new(-1.0, 0.0),
            Complex::new(0.0, -1.0),
        ];
        let out = naive_dft_1d(&x, Direction::Forward);
        let expect = [
            Complex::new(0.0, 0.0),
            Complex::new(4.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
        ];
        assert!(max_err(&out, &expect) < 1e-12);
    }

    #[test]
    fn kernel_matches_oracle_various_lengths() {
        // covers pow2, mixed composite, prime, and prime-times-composite
        for &n in &[1usize, 2, 4, 8, 12, 7, 15, 16, 20, 21, 25, 27, 30, 32, 35, 49, 64] {
            let kern = Kernel1d::<f64>::new(n, Direction::Forward);
            let mut scratch = vec![Complex::new(0.0, 0.0); kern.scratch_len()];
            let mut line = random_line(n, 42 + n as u64);
            let oracle = naive_dft_1d(&line, Direction::Forward);
            kern.process(&mut line, &mut scratch);
            let tol = 1e-12 * n as f64;
            assert!(max_err(&line, &oracle) <= tol, "n={n} err={}", max_err(&line, &oracle));
        }
    }

    #[test]
    fn roundtrip_inverse_normalized() {
        for &n in &[8usize, 12, 7, 30] {
            let fwd = Kernel1d::<f64>::new(n, Direction::Forward);
            let inv = Kernel1d::<f64>::new(n, Direction::Inverse);
            let mut scratch = vec![Complex::new(0.0, 0.0); fwd.scratch_len()];
            let orig = random_line(n, n as u64);
            let mut line = orig.clone();
            fwd.process(&mut line, &mut scratch);
            inv.process(&mut line, &mut scratch);
            assert!(max_err(&line, &orig) <= 1e-12 * n as f64);
        }
    }

    #[test]
    fn parseval_holds() {
        for &n in &[16usize, 24, 11] {
            let kern = Kernel1d::<f64>::new(n, Direction::Forward);
            let mut scratch = vec![Complex::new(0.0, 0.0); kern.scratch_len()];
            let line = random_line(n, 7 * n as u64);
            let mut x = line.clone();
            kern.process(&mut x, &mut scratch);
            let time_e: f64 = line.iter().map(|v| v.norm_sqr()).sum();
            let freq_e: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            assert!((freq_e - n as f64 * time_e).abs() / freq_e.abs() < 1e-10);
        }
    }

    #[test]
    fn f32_kernel_within_loose_tolerance() {
        let n = 24;
        let kern = Kernel1d::<f32>::new(n, Direction::Forward);
        let mut scratch = vec![Complex::new(0.0f32, 0.0); kern.scratch_len()];
        let line64 = random_line(n, 3);
        let mut line: Vec<Complex<f32>> =
            line64.iter().map(|c| Complex::new(c.re as f32, c.im as f32)).collect();
        let oracle = naive_dft_1d(&line64, Direction::Forward);
        kern.process(&mut line, &mut scratch);
        for (a, b) in line.iter().zip(&oracle) {
            let d = (Complex::new(a.re as f64, a.im as f64) - b).norm();
            assert!(d <= 1e-4 * n as f64);
        }
    }
}
