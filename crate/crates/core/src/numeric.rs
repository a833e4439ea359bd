//! Small numerical helpers: stable log-sum-exp and compensated summation.

use crate::scalar::Real;

/// `log(sum(exp(x_i)))` with a max shift. Returns `-inf` when every input is `-inf`.
pub fn log_sum_exp<R: Real>(xs: &[R]) -> R {
    let max = xs.iter().copied().fold(R::neg_infinity(), R::max);
    if max == R::neg_infinity() {
        return R::neg_infinity();
    }
    if max == R::infinity() {
        return R::infinity();
    }
    let s: R = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Weights `exp(x_i - max)`; all finite, largest equal to one.
pub fn shifted_weights<R: Real>(log_w: &[R]) -> Option<Vec<R>> {
    let max = log_w.iter().copied().fold(R::neg_infinity(), R::max);
    if max == R::neg_infinity() || max.is_nan() {
        return None;
    }
    Some(log_w.iter().map(|&x| (x - max).exp()).collect())
}

/// Kahan–Babuška compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum<R> {
    sum: R,
    comp: R,
}

impl<R: Real> KahanSum<R> {
    pub fn new() -> Self {
        Self { sum: R::zero(), comp: R::zero() }
    }

    pub fn add(&mut self, v: R) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> R {
        self.sum + self.comp
    }
}

pub fn kahan_sum<R: Real, I: IntoIterator<Item = R>>(it: I) -> R {
    let mut acc = KahanSum::new();
    for v in it {
        acc.add(v);
    }
    acc.value()
}

/// Relative difference `|a-b| / max(|a|,|b|,tiny)`.
pub fn rel_diff<R: Real>(a: R, b: R) -> R {
    let scale = a.abs().max(b.abs()).max(R::min_positive_value());
    (a - b).abs() / scale
}

/// Integer power with the convention `0^0 = 1`.
pub fn powi<R: Real>(base: R, exp: usize) -> R {
    let mut acc = R::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}
