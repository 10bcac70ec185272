use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    pub n: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub phi: f64,
    pub theta: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self { n: 13, sigma: 3.0, lambda: 32.0, gamma: 1.0, phi: 0.0, theta: PI / 2.0 }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 || self.n.is_multiple_of(2) {
            return Err(Error::arg(format!("gabor kernel size must be odd and >= 3, got {}", self.n)));
        }
        if !(self.sigma > 0.0 && self.lambda > 0.0) || !self.gamma.is_finite() || !self.phi.is_finite() || !self.theta.is_finite() {
            return Err(Error::arg("gabor sigma and lambda must be positive and all parameters finite"));
        }
        Ok(())
    }
}

/// Row-major `n × n` complex kernel, `data[y * n + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborKernel {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl GaborKernel {
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.n + x]
    }

    pub fn sum(&self) -> Complex64 {
        self.data.iter().sum()
    }
}

/// Complex Gabor kernel with the real part made zero-mean.
pub fn gabor_kernel(params: &GaborParams) -> Result<GaborKernel> {
    params.validate()?;
    let GaborParams { n, sigma, lambda, gamma, phi, theta } = *params;
    let half = (n / 2) as f64;
    let (s, c) = theta.sin_cos();
    let mut data: Vec<Complex64> = (0..n * n)
        .map(|i| {
            let x = (i % n) as f64 - half;
            let y = (i / n) as f64 - half;
            let xr = x * c + y * s;
            let yr = -x * s + y * c;
            let env = (-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)).exp();
            Complex64::from_polar(env, 2.0 * PI * xr / lambda + phi)
        })
        .collect();
    let dc = data.iter().map(|z| z.re).sum::<f64>() / (n * n) as f64;
    data.iter_mut().for_each(|z| z.re -= dc);
    Ok(GaborKernel { n, data })
}
