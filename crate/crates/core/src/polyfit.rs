//! Least-squares polynomial approximation of smooth time series.
//!
//! Polynomials are stored in the normalized variable s = (2t − a − b)/(b − a)
//! on the fit window [a, b], which keeps high orders well conditioned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of equally spaced samples per fitted channel.
pub const FIT_SAMPLES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub window: (f64, f64),
    /// Coefficient of sᵃ at index a.
    pub coeffs: Vec<f64>,
    /// Largest absolute deviation from the fitted samples.
    pub max_residual: f64,
}

impl Polynomial {
    pub fn constant(window: (f64, f64), value: f64) -> Self {
        Polynomial { window, coeffs: vec![value], max_residual: 0.0 }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Normalized variable for time `t`.
    pub fn scaled(&self, t: f64) -> f64 {
        let (a, b) = self.window;
        debug_assert!(
            t >= a - 1e-9 * (b - a).abs().max(1.0) && t <= b + 1e-9 * (b - a).abs().max(1.0),
            "polynomial evaluated at t = {t} outside its fit window [{a}, {b}]"
        );
        if b > a {
            (2.0 * t - a - b) / (b - a)
        } else {
            0.0
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        horner(&self.coeffs, self.scaled(t))
    }

    /// Evaluates at an already normalized variable.
    pub fn eval_scaled(&self, s: f64) -> f64 {
        horner(&self.coeffs, s)
    }
}

pub fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

/// Fits `values` sampled at `times` with a polynomial of the given order.
pub fn fit(times: &[f64], values: &[f64], order: usize, window: (f64, f64)) -> Result<Polynomial> {
    let fit_err = |reason: String| Error::Fit { channel: String::from("series"), reason };
    if times.len() != values.len() {
        return Err(Error::Dimension { expected: times.len(), found: values.len() });
    }
    if times.len() < order + 1 {
        return Err(fit_err(format!(
            "{} samples cannot determine an order-{order} polynomial",
            times.len()
        )));
    }
    if !(window.1 > window.0) {
        return Err(Error::Interval { start: window.0, end: window.1 });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fit_err(String::from("non-finite sample")));
    }
    let probe = Polynomial { window, coeffs: Vec::new(), max_residual: 0.0 };
    let s: Vec<f64> = times.iter().map(|&t| probe.scaled(t)).collect();
    let m = times.len();
    let cols = order + 1;
    let a = DMatrix::from_fn(m, cols, |i, j| s[i].powi(j as i32));
    let y = DVector::from_column_slice(values);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(fit_err(String::from("rank-deficient design matrix")));
    }
    let c = svd
        .solve(&y, smax * 1e-14)
        .map_err(|e| fit_err(e.to_string()))?;
    let coeffs: Vec<f64> = c.iter().copied().collect();
    let max_residual = s
        .iter()
        .zip(values)
        .map(|(si, v)| (horner(&coeffs, *si) - v).abs())
        .fold(0.0, f64::max);
    Ok(Polynomial { window, coeffs, max_residual })
}

/// Samples `f` at [`FIT_SAMPLES`] equally spaced times and fits it.
pub fn fit_function<F: Fn(f64) -> f64>(f: F, window: (f64, f64), order: usize) -> Result<Polynomial> {
    let times = crate::numerics::linspace(window.0, window.1, FIT_SAMPLES);
    let values: Vec<f64> = times.iter().map(|&t| f(t)).collect();
    fit(&times, &values, order, window)
}

/// Reusable least-squares solver for many series sampled on the same
/// [`FIT_SAMPLES`]-point grid.
#[derive(Clone, Debug)]
pub struct Fitter {
    window: (f64, f64),
    times: Vec<f64>,
    scaled: Vec<f64>,
    pinv: DMatrix<f64>,
}

impl Fitter {
    pub fn new(window: (f64, f64), order: usize) -> Result<Self> {
        Self::with_samples(window, order, FIT_SAMPLES)
    }

    pub fn with_samples(window: (f64, f64), order: usize, samples: usize) -> Result<Self> {
        if !(window.1 > window.0) {
            return Err(Error::Interval { start: window.0, end: window.1 });
        }
        if samples < order + 1 {
            return Err(Error::Fit {
                channel: String::from("series"),
                reason: format!("{samples} samples cannot determine an order-{order} polynomial"),
            });
        }
        let times = crate::numerics::linspace(window.0, window.1, samples);
        let probe = Polynomial { window, coeffs: Vec::new(), max_residual: 0.0 };
        let scaled: Vec<f64> = times.iter().map(|&t| probe.scaled(t)).collect();
        let a = DMatrix::from_fn(samples, order + 1, |i, j| scaled[i].powi(j as i32));
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let pinv = svd.pseudo_inverse(smax * 1e-14).map_err(|e| Error::Fit {
            channel: String::from("series"),
            reason: e.to_string(),
        })?;
        Ok(Fitter { window, times, scaled, pinv })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn order(&self) -> usize {
        self.pinv.nrows() - 1
    }

    /// Fits values sampled at [`Fitter::times`].
    pub fn fit(&self, values: &[f64]) -> Result<Polynomial> {
        if values.len() != self.times.len() {
            return Err(Error::Dimension { expected: self.times.len(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit {
                channel: String::from("series"),
                reason: String::from("non-finite sample"),
            });
        }
        let y = DVector::from_column_slice(values);
        let coeffs: Vec<f64> = (&self.pinv * y).iter().copied().collect();
        let max_residual = self
            .scaled
            .iter()
            .zip(values)
            .map(|(s, v)| (horner(&coeffs, *s) - v).abs())
            .fold(0.0, f64::max);
        Ok(Polynomial { window: self.window, coeffs, max_residual })
    }

    pub fn fit_function<F: Fn(f64) -> f64>(&self, f: F) -> Result<Polynomial> {
        let values: Vec<f64> = self.times.iter().map(|&t| f(t)).collect();
        self.fit(&values)
    }
}
