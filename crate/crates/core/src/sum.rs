//! Compensated (Neumaier) summation.

use std::ops::AddAssign;

use num_complex::Complex;

use crate::scalar::Real;

/// Running Neumaier sum. Error stays bounded independent of the number of
/// terms, so sums of a few thousand pixel contributions agree across
/// summation orders to ~1e-15 relative.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> NeumaierSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

impl<T: Real> AddAssign<T> for NeumaierSum<T> {
    fn add_assign(&mut self, rhs: T) {
        self.add(rhs);
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(iter: I) -> T {
    let mut acc = NeumaierSum::new();
    for x in iter {
        acc.add(x);
    }
    acc.value()
}

/// Compensated sum of complex terms, real and imaginary parts separately.
pub fn compensated_sum_complex<T: Real, I: IntoIterator<Item = Complex<T>>>(iter: I) -> Complex<T> {
    let mut re = NeumaierSum::new();
    let mut im = NeumaierSum::new();
    for z in iter {
        re.add(z.re);
        im.add(z.im);
    }
    Complex::new(re.value(), im.value())
}
