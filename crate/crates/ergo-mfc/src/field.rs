//! Scalar fields on the unit torus and their first/second order data.
//!
//! Both solvers consume fields through the same interface: a value, an
//! input gradient and an input Laplacian at a point. Analytic fields
//! (test-case data, manufactured solutions) and neural fields implement
//! the same trait so oracles and learned solutions are interchangeable.

use std::sync::Arc;

/// Value, gradient and Laplacian of a scalar field at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub laplacian: f64,
}

impl FieldJet {
    pub fn zero(d: usize) -> Self {
        FieldJet {
            value: 0.0,
            grad: vec![0.0; d],
            laplacian: 0.0,
        }
    }
}

/// A scalar field on `[0,1)^d` with analytic first and second derivatives.
///
/// Evaluation is pure; implementations must be safe to call from many
/// threads at once.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;

    fn jet(&self, x: &[f64]) -> FieldJet;

    fn value(&self, x: &[f64]) -> f64 {
        self.jet(x).value
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x).grad
    }
}

impl<T: Field + ?Sized> Field for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn jet(&self, x: &[f64]) -> FieldJet {
        (**self).jet(x)
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// The zero field in dimension `d`.
#[derive(Debug, Clone)]
pub struct ZeroField(pub usize);

impl Field for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }
    fn jet(&self, _x: &[f64]) -> FieldJet {
        FieldJet::zero(self.0)
    }
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Field built from closures for the value and the jet.
pub struct FnField<V, J> {
    d: usize,
    value: V,
    jet: J,
}

impl<V, J> FnField<V, J>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    J: Fn(&[f64]) -> FieldJet + Send + Sync,
{
    pub fn new(d: usize, value: V, jet: J) -> Self {
        FnField { d, value, jet }
    }
}

impl<V, J> Field for FnField<V, J>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    J: Fn(&[f64]) -> FieldJet + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }
    fn jet(&self, x: &[f64]) -> FieldJet {
        (self.jet)(x)
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
}

/// `x ↦ Σ_i sin(2π x_i)`, the adjoint state of the first explicit test case.
#[derive(Debug, Clone)]
pub struct SumSin(pub usize);

impl Field for SumSin {
    fn dim(&self) -> usize {
        self.0
    }
    fn jet(&self, x: &[f64]) -> FieldJet {
        let tau = std::f64::consts::TAU;
        let mut value = 0.0;
        let mut laplacian = 0.0;
        let mut grad = vec![0.0; self.0];
        for i in 0..self.0 {
            let (s, c) = (tau * x[i]).sin_cos();
            value += s;
            grad[i] = tau * c;
            laplacian -= tau * tau * s;
        }
        FieldJet {
            value,
            grad,
            laplacian,
        }
    }
}

/// `x ↦ Π_i sin²(2π x_i) − 2^{-d}`, the mean-centered adjoint state of the
/// second explicit test case.
#[derive(Debug, Clone)]
pub struct ProdSinSq(pub usize);

impl Field for ProdSinSq {
    fn dim(&self) -> usize {
        self.0
    }
    fn jet(&self, x: &[f64]) -> FieldJet {
        let tau = std::f64::consts::TAU;
        let d = self.0;
        let s2: Vec<f64> = (0..d).map(|i| (tau * x[i]).sin().powi(2)).collect();
        let prod: f64 = s2.iter().product();
        let mut grad = vec![0.0; d];
        let mut laplacian = 0.0;
        for i in 0..d {
            // ∂_i Π sin² = (Π_{j≠i} sin²) · 2π sin(4π x_i)
            let rest: f64 = (0..d).filter(|&j| j != i).map(|j| s2[j]).product();
            grad[i] = rest * tau * (2.0 * tau * x[i]).sin();
            laplacian += rest * 2.0 * tau * tau * (2.0 * tau * x[i]).cos();
        }
        FieldJet {
            value: prod - 0.5f64.powi(d as i32),
            grad,
            laplacian,
        }
    }
}

/// Central finite-difference jet of a field, used as an independent check
/// against analytic jets.
pub fn finite_difference_jet(field: &dyn Field, x: &[f64], step: f64) -> FieldJet {
    let d = field.dim();
    let mut grad = vec![0.0; d];
    let mut laplacian = 0.0;
    let f0 = field.value(x);
    let mut xp = x.to_vec();
    for i in 0..d {
        xp[i] = x[i] + step;
        let fp = field.value(&xp);
        xp[i] = x[i] - step;
        let fm = field.value(&xp);
        xp[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * step);
        laplacian += (fp - 2.0 * f0 + fm) / (step * step);
    }
    FieldJet {
        value: f0,
        grad,
        laplacian,
    }
}
