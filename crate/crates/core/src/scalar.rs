//! Minimal field abstraction so the series recursions can run on complex
//! numbers (complex-step differentiation with respect to the free parameters).

use num_complex::Complex64;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn from_f64(v: f64) -> Self;
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn scale(self, s: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn scale(self, s: f64) -> f64 {
        self * s
    }
}

impl Scalar for Complex64 {
    fn from_f64(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn exp(self) -> Complex64 {
        Complex64::exp(self)
    }
    fn scale(self, s: f64) -> Complex64 {
        self * s
    }
}

/// Solve a small dense system in place (row-major `a`, partial pivoting on
/// the real part). Returns `false` if a pivot vanishes.
pub fn solve_dense<T: Scalar>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r * n + col].re().abs() > a[piv * n + col].re().abs() {
                piv = r;
            }
        }
        if a[piv * n + col].re() == 0.0 {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in (col + 1)..n {
            s -= a[col * n + c] * b[c];
        }
        b[col] = s / a[col * n + col];
    }
    true
}
