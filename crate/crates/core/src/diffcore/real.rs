//! Scalar abstraction so numeric kernels are written once and run both on
//! plain `f64` (generators, oracles) and on tape [`Var`]s (training).

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::diffcore::special;
use crate::diffcore::tape::Var;

/// A differentiable-or-plain scalar. All methods mirror `f64` semantics;
/// the tape implementation records the corresponding elementary ops.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value (used for branching and validation).
    fn val(self) -> f64;
    fn add_c(self, c: f64) -> Self;
    fn mul_c(self, c: f64) -> Self;
    /// `c - self`
    fn rsub_c(self, c: f64) -> Self;
    /// `c / self`
    fn rdiv_c(self, c: f64) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powf_c(self, c: f64) -> Self;
    fn sigmoid(self) -> Self;
    fn lgamma(self) -> Self;
    /// A constant with value `c` in the same evaluation context (for a
    /// tape variable, a fresh leaf on the same tape).
    fn lift(self, c: f64) -> Self;

    fn sub_c(self, c: f64) -> Self {
        self.add_c(-c)
    }
    fn div_c(self, c: f64) -> Self {
        self.mul_c(1.0 / c)
    }
    fn sqrt_r(self) -> Self {
        self.powf_c(0.5)
    }
    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn val(self) -> f64 {
        self
    }
    fn add_c(self, c: f64) -> Self {
        self + c
    }
    fn mul_c(self, c: f64) -> Self {
        self * c
    }
    fn rsub_c(self, c: f64) -> Self {
        c - self
    }
    fn rdiv_c(self, c: f64) -> Self {
        c / self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn powf_c(self, c: f64) -> Self {
        f64::powf(self, c)
    }
    fn sigmoid(self) -> Self {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }
    fn lgamma(self) -> Self {
        special::lgamma(self)
    }
    fn lift(self, c: f64) -> Self {
        c
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.value()
    }
    fn add_c(self, c: f64) -> Self {
        self + c
    }
    fn mul_c(self, c: f64) -> Self {
        self * c
    }
    fn rsub_c(self, c: f64) -> Self {
        c - self
    }
    fn rdiv_c(self, c: f64) -> Self {
        c / self
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn powf_c(self, c: f64) -> Self {
        Var::powf(self, c)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn lgamma(self) -> Self {
        Var::lgamma(self)
    }
    fn lift(self, c: f64) -> Self {
        self.tape().scalar(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tape::Tape;

    fn poly<T: Real>(x: T) -> T {
        // x^2·sin(x) + exp(x)/x
        x.square() * x.sin() + x.exp() * x.rdiv_c(1.0)
    }

    #[test]
    fn f64_and_var_paths_agree() {
        let t = Tape::new();
        for &x in &[0.4, 1.3, 2.9] {
            let plain = poly(x);
            let v = poly(t.scalar(x));
            assert!((plain - v.value()).abs() < 1e-12);
        }
    }
}
