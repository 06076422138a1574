//! Unnormalized 2D discrete Fourier transform of real planes.
//!
//! Power-of-two lengths use an iterative radix-2 FFT; any other length falls
//! back to the direct O(n²) sum.

use super::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex<T> {
    pub re: T,
    pub im: T,
}

impl<T: Real> Complex<T> {
    pub fn new(re: T, im: T) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> T {
        self.re * self.re + self.im * self.im
    }

    fn mul(self, o: Self) -> Self {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn add(self, o: Self) -> Self {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Self) -> Self {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    fn unit(angle: f64) -> Self {
        Complex::new(T::from_f64_lossy(angle.cos()), T::from_f64_lossy(angle.sin()))
    }
}

/// In-place 1D transform `X[k] = Σ x[j] e^{∓2πi jk/n}` (minus sign for the
/// forward direction).
pub fn fft_in_place<T: Real>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if !n.is_power_of_two() {
        let src = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::default();
            for (j, &x) in src.iter().enumerate() {
                let angle = sign * 2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                acc = acc.add(x.mul(Complex::unit(angle)));
            }
            *out = acc;
        }
        return;
    }

    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex<T>> = (0..half)
            .map(|k| Complex::unit(sign * 2.0 * std::f64::consts::PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half].mul(twiddles[k]);
                buf[start + k] = a.add(b);
                buf[start + k + half] = a.sub(b);
            }
        }
        len <<= 1;
    }
}

/// 2D transform of an `h×w` complex plane, rows then columns.
pub fn fft2_in_place<T: Real>(plane: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    assert_eq!(plane.len(), h * w);
    for row in plane.chunks_mut(w) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        fft_in_place(&mut col, inverse);
        for y in 0..h {
            plane[y * w + x] = col[y];
        }
    }
}

/// Forward 2D DFT of a real `h×w` plane.
pub fn dft2_real<T: Real>(plane: &[T], h: usize, w: usize) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = plane.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_in_place(&mut buf, h, w, false);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::default(); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::default();
                for y in 0..h {
                    for xx in 0..w {
                        let a = -2.0 * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc.re += x[y * w + xx] * a.cos();
                        acc.im += x[y * w + xx] * a.sin();
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum() {
        for (h, w) in [(8, 8), (4, 16), (6, 5), (1, 8)] {
            let x: Vec<f64> = (0..h * w).map(|i| ((i * 37 % 11) as f64).sin()).collect();
            let fast = dft2_real(&x, h, w);
            let slow = naive_dft2(&x, h, w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a.re - b.re).abs() < 1e-9 && (a.im - b.im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_plane_has_only_dc() {
        let n = 8;
        let c = 0.7;
        let f = dft2_real(&vec![c; n * n], n, n);
        assert!((f[0].re - (n * n) as f64 * c).abs() < 1e-12);
        assert!(f[0].im.abs() < 1e-12);
        assert!(f[1..].iter().all(|z| z.norm_sqr() < 1e-20));
    }

    #[test]
    fn inverse_undoes_forward() {
        let (h, w) = (8, 4);
        let x: Vec<f64> = (0..h * w).map(|i| i as f64 * 0.1 - 1.0).collect();
        let mut f = dft2_real(&x, h, w);
        fft2_in_place(&mut f, h, w, true);
        for (a, &b) in f.iter().zip(&x) {
            assert!((a.re / (h * w) as f64 - b).abs() < 1e-12);
            assert!(a.im.abs() < 1e-12);
        }
    }
}
