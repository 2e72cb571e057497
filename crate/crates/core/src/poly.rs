//! Dense univariate polynomials with real coefficients.

use nalgebra::{DMatrix, DVector};

/// Coefficients in ascending powers: `c[0] + c[1] k + …`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, k: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * k + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect(),
        )
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Interpolating polynomial of degree `nodes.len() - 1`.
    pub fn interpolate(nodes: &[f64], values: &[f64]) -> Option<Self> {
        let n = nodes.len();
        let vander = DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
        let rhs = DVector::from_column_slice(values);
        vander
            .lu()
            .solve(&rhs)
            .map(|c| Self::new(c.iter().copied().collect()))
    }

    /// Synthetic division by `(k - root)`; returns quotient and remainder.
    ///
    /// For `|root| > 1` the division runs from the constant term upwards,
    /// which keeps coefficient errors from growing; the remainder is then
    /// the mismatch left in the leading coefficient rather than `p(root)`.
    /// Either is zero exactly when `root` divides `p`.
    pub fn deflate(&self, root: f64) -> (Self, f64) {
        let n = self.coeffs.len();
        if n < 2 {
            return (
                Self::new(Vec::new()),
                self.coeffs.first().copied().unwrap_or(0.0),
            );
        }
        let mut q = vec![0.0; n - 1];
        if root.abs() > 1.0 {
            // c_i = q_{i-1} - root q_i
            let mut prev = 0.0;
            for (i, qi) in q.iter_mut().enumerate() {
                *qi = (prev - self.coeffs[i]) / root;
                prev = *qi;
            }
            (Self::new(q), self.coeffs[n - 1] - prev)
        } else {
            let mut carry = 0.0;
            for i in (1..n).rev() {
                let c = self.coeffs[i] + carry * root;
                q[i - 1] = c;
                carry = c;
            }
            (Self::new(q), self.coeffs[0] + carry * root)
        }
    }

    /// Drops leading coefficients below `rel_tol` times the largest one.
    pub fn trimmed(&self, rel_tol: f64) -> Self {
        let scale = self.max_abs_coeff();
        let mut c = self.coeffs.clone();
        while c.len() > 1 && c.last().is_some_and(|v| v.abs() <= rel_tol * scale) {
            c.pop();
        }
        Self::new(c)
    }

    /// All complex roots as `(re, im)` from the companion matrix spectrum.
    pub fn roots(&self) -> Vec<(f64, f64)> {
        let p = self.trimmed(1e-14);
        let d = p.degree();
        if d == 0 {
            return Vec::new();
        }
        let lead = p.coeffs[d];
        let mut comp = DMatrix::zeros(d, d);
        for i in 1..d {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..d {
            comp[(i, d - 1)] = -p.coeffs[i] / lead;
        }
        comp.complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect()
    }

    /// Real roots (imaginary part below `1e-6 (1 + |re|)`), Newton-polished
    /// and sorted ascending.
    pub fn real_roots(&self) -> Vec<f64> {
        let dp = self.derivative();
        let mut out: Vec<f64> = self
            .roots()
            .into_iter()
            .filter(|(re, im)| im.abs() < 1e-6 * (1.0 + re.abs()))
            .map(|(re, _)| {
                let mut k = re;
                for _ in 0..3 {
                    let d = dp.eval(k);
                    if d == 0.0 {
                        break;
                    }
                    let step = self.eval(k) / d;
                    if !step.is_finite() {
                        break;
                    }
                    k -= step;
                }
                k
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}
