//! Scalar arithmetic shared by plain f64 evaluation and taped evaluation, so
//! model recurrences are written once.

use std::ops::{Add, Mul, Neg, Sub};

use crate::tape::{scalar, Var};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// A constant in the same evaluation context as `self`.
    fn lift(self, v: f64) -> Self;
    fn value(self) -> f64;
    fn sigmoid(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn softplus(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// Same value, cut from the gradient graph.
    fn detach(self) -> Self;
}

impl Real for f64 {
    fn lift(self, v: f64) -> f64 {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sigmoid(self) -> f64 {
        scalar::sigmoid(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn relu(self) -> f64 {
        self.max(0.0)
    }
    fn softplus(self) -> f64 {
        scalar::softplus(self)
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn detach(self) -> f64 {
        self
    }
}

// Operator forms for tape variables. Shapes are checked by the fallible
// methods; a mismatch here is a programming error.
impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        Var::add(&self, o).expect("add: shape mismatch")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        Var::sub(&self, o).expect("sub: shape mismatch")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        Var::mul(&self, o).expect("mul: shape mismatch")
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(&self)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, k: f64) -> Var<'t> {
        self.add_const(k)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, k: f64) -> Var<'t> {
        self.add_const(-k)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, k: f64) -> Var<'t> {
        self.scale(k)
    }
}

impl<'t> Real for Var<'t> {
    fn lift(self, v: f64) -> Var<'t> {
        self.tape().scalar(v)
    }
    fn value(self) -> f64 {
        self.scalar()
    }
    fn sigmoid(self) -> Var<'t> {
        Var::sigmoid(&self)
    }
    fn tanh(self) -> Var<'t> {
        Var::tanh(&self)
    }
    fn relu(self) -> Var<'t> {
        Var::relu(&self)
    }
    fn softplus(self) -> Var<'t> {
        Var::softplus(&self)
    }
    fn exp(self) -> Var<'t> {
        Var::exp(&self)
    }
    fn ln(self) -> Var<'t> {
        Var::ln(&self)
    }
    fn detach(self) -> Var<'t> {
        Var::detach(&self)
    }
}
