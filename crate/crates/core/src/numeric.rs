//! Dense rank-1/rank-2 tensors of `f64` and the handful of kernels the encoders need.
//!
//! Storage is row-major and every reduction accumulates left to right, so results are
//! bit-reproducible for identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(
            !dims.is_empty() && dims.len() <= 2 && dims.iter().all(|&d| d > 0),
            "tensor dims must be rank 1 or 2 with positive extents, got {dims:?}"
        );
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "vector must be non-empty");
        Tensor {
            dims: vec![values.len()],
            data: values,
        }
    }

    pub fn from_shape(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 || dims.contains(&0) {
            return Err(Error::shape("from_shape", dims, "rank 1 or 2, positive extents"));
        }
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::shape("from_shape", dims, values.len()));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: values,
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_shape(&[rows, cols], values)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            dims: other.dims.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[1]
        } else {
            1
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape("axpy", &self.dims, &other.dims));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape("add_assign", &self.dims, &other.dims));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Concatenate two vectors end to end.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor::from_vec(data)
    }
}

fn check_vector(op: &'static str, t: &Tensor, len: usize) -> Result<()> {
    if t.dims.len() != 1 || t.dims[0] != len {
        return Err(Error::shape(op, &t.dims, [len]));
    }
    Ok(())
}

/// `W x` for `W: [rows × cols]`, `x: [cols]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.dims.len() != 2 {
        return Err(Error::shape("matvec", &w.dims, "rank 2"));
    }
    check_vector("matvec", x, w.cols())?;
    let cols = w.cols();
    let out = (0..w.rows())
        .map(|i| {
            w.data[i * cols..(i + 1) * cols]
                .iter()
                .zip(&x.data)
                .fold(0.0, |acc, (a, b)| acc + a * b)
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

/// `W x + b`, accumulated left to right per row.
pub fn affine(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matvec(w, x)?;
    check_vector("affine", b, w.rows())?;
    for (yi, bi) in y.data.iter_mut().zip(&b.data) {
        *yi += bi;
    }
    Ok(y)
}

/// `out += Wᵀ g` for `W: [rows × cols]`, `g: [rows]`, `out: [cols]`.
pub fn matvec_t_acc(w: &Tensor, g: &Tensor, out: &mut Tensor) -> Result<()> {
    check_vector("matvec_t", g, w.rows())?;
    check_vector("matvec_t", out, w.cols())?;
    let cols = w.cols();
    for (i, gi) in g.data.iter().enumerate() {
        let row = &w.data[i * cols..(i + 1) * cols];
        for (o, wij) in out.data.iter_mut().zip(row) {
            *o += wij * gi;
        }
    }
    Ok(())
}

/// `M += a bᵀ`.
pub fn outer_acc(m: &mut Tensor, a: &Tensor, b: &Tensor) -> Result<()> {
    if m.dims.len() != 2 || m.rows() != a.len() || m.cols() != b.len() {
        return Err(Error::shape("outer", &m.dims, [a.len(), b.len()]));
    }
    let cols = m.cols();
    for (i, ai) in a.data.iter().enumerate() {
        let row = &mut m.data[i * cols..(i + 1) * cols];
        for (mij, bj) in row.iter_mut().zip(&b.data) {
            *mij += ai * bj;
        }
    }
    Ok(())
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &Tensor) -> Tensor {
    v.map(logistic)
}

pub fn tanh_act(v: &Tensor) -> Tensor {
    v.map(f64::tanh)
}

pub fn hadamard(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if u.dims != v.dims {
        return Err(Error::shape("hadamard", &u.dims, &v.dims));
    }
    Ok(Tensor {
        dims: u.dims.clone(),
        data: u.data.iter().zip(&v.data).map(|(a, b)| a * b).collect(),
    })
}

pub fn dot(u: &Tensor, v: &Tensor) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("dot", &u.dims, &v.dims));
    }
    Ok(dot_slices(&u.data, &v.data))
}

pub(crate) fn dot_slices(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b)
}

/// Central-difference gradient of `f` at `x`: `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn numerical_gradient<F>(f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let plus = f(&probe);
        probe.data[i] = orig - step;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle { index: i });
        }
        grad.data[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Richardson extrapolation of central differences at `step` and `2·step`:
/// `(4·g(h) − g(2h)) / 3`, accurate to fourth order in `h`.
pub fn numerical_gradient_richardson<F>(f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    let fine = numerical_gradient(&f, x, step)?;
    let coarse = numerical_gradient(&f, x, 2.0 * step)?;
    let mut out = fine;
    out.scale(4.0 / 3.0);
    out.axpy(-1.0 / 3.0, &coarse)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Tensor {
        Tensor::from_vec(xs.to_vec())
    }

    #[test]
    fn affine_examples() {
        let b = v(&[1.0, -1.0]);
        assert_eq!(affine(&Tensor::zeros(&[2, 2]), &v(&[3.0, 4.0]), &b).unwrap(), b);
        assert_eq!(
            affine(&Tensor::identity(2), &v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap(),
            v(&[3.0, 4.0])
        );
        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(affine(&w, &v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap(), v(&[4.0, 7.0]));
    }

    #[test]
    fn affine_shape_error() {
        let w = Tensor::zeros(&[2, 3]);
        let err = affine(&w, &v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matvec", .. }));
        let err = affine(&w, &v(&[1.0, 2.0, 3.0]), &v(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "affine", .. }));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&v(&[0.0, 0.0])), v(&[0.5, 0.5]));
        assert!((sigmoid(&v(&[100.0])).as_slice()[0] - 1.0).abs() < 1e-40);
        assert!((sigmoid(&v(&[1.0])).as_slice()[0] - 0.7310585786).abs() < 1e-10);
        assert!(sigmoid(&v(&[-800.0])).as_slice()[0] >= 0.0);
    }

    #[test]
    fn tanh_examples() {
        assert_eq!(tanh_act(&v(&[0.0])), v(&[0.0]));
        assert!((tanh_act(&v(&[1.0])).as_slice()[0] - 0.7615941560).abs() < 1e-10);
        for x in [0.3, 2.0, 7.5] {
            assert_eq!(tanh_act(&v(&[-x])).as_slice()[0], -tanh_act(&v(&[x])).as_slice()[0]);
        }
    }

    #[test]
    fn hadamard_and_dot() {
        assert_eq!(hadamard(&v(&[1.0, 1.0]), &v(&[5.0, -2.0])).unwrap(), v(&[5.0, -2.0]));
        assert_eq!(hadamard(&v(&[0.0, 0.0]), &v(&[5.0, -2.0])).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(hadamard(&v(&[2.0, 3.0]), &v(&[4.0, 5.0])).unwrap(), v(&[8.0, 15.0]));
        assert!(hadamard(&v(&[2.0]), &v(&[4.0, 5.0])).is_err());

        assert_eq!(dot(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(dot(&v(&[3.0, 4.0]), &v(&[3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(dot(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap(), 32.0);
        assert!(dot(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn transposed_and_outer_kernels() {
        let w = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = Tensor::zeros(&[3]);
        matvec_t_acc(&w, &v(&[1.0, -1.0]), &mut out).unwrap();
        assert_eq!(out, v(&[-3.0, -3.0, -3.0]));

        let mut m = Tensor::zeros(&[2, 3]);
        outer_acc(&mut m, &v(&[1.0, 2.0]), &v(&[1.0, 0.0, -1.0])).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }

    #[test]
    fn numerical_gradient_examples() {
        let sq = |t: &Tensor| dot(t, t).unwrap();
        let g = numerical_gradient(sq, &v(&[1.0, 2.0]), 1e-5).unwrap();
        assert!((g.as_slice()[0] - 2.0).abs() < 1e-8);
        assert!((g.as_slice()[1] - 4.0).abs() < 1e-8);

        let g = numerical_gradient(|_| 3.5, &v(&[1.0, -2.0, 0.1]), 1e-5).unwrap();
        assert!(g.max_abs() < 1e-12);

        let g = numerical_gradient(|t| logistic(t.as_slice()[0]), &v(&[0.0]), 1e-5).unwrap();
        assert!((g.as_slice()[0] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn richardson_beats_plain_central_difference() {
        let f = |t: &Tensor| t.as_slice()[0].sin() * t.as_slice()[1].exp();
        let x = v(&[0.7, -0.3]);
        let exact = [0.7f64.cos() * (-0.3f64).exp(), 0.7f64.sin() * (-0.3f64).exp()];
        let plain = numerical_gradient(f, &x, 1e-2).unwrap();
        let rich = numerical_gradient_richardson(f, &x, 1e-2).unwrap();
        for i in 0..2 {
            let e_plain = (plain.as_slice()[i] - exact[i]).abs();
            let e_rich = (rich.as_slice()[i] - exact[i]).abs();
            assert!(e_rich < 1e-8 && e_rich < e_plain / 100.0, "{e_rich} vs {e_plain}");
        }
    }

    #[test]
    fn numerical_gradient_rejects_non_finite() {
        let err = numerical_gradient(|t| t.as_slice()[1].ln(), &v(&[1.0, 1e-4]), 1e-3).unwrap_err();
        assert!(matches!(err, Error::Oracle { index: 1 }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn activations_stay_open_interval(x in -15.0f64..15.0) {
                let s = sigmoid(&v(&[x])).as_slice()[0];
                let t = tanh_act(&v(&[x])).as_slice()[0];
                prop_assert!(s > 0.0 && s < 1.0);
                prop_assert!(t > -1.0 && t < 1.0);
            }

            #[test]
            fn affine_is_linear(
                w in proptest::collection::vec(-3.0f64..3.0, 6),
                x in proptest::collection::vec(-3.0f64..3.0, 3),
                y in proptest::collection::vec(-3.0f64..3.0, 3),
                alpha in -2.0f64..2.0,
                beta in -2.0f64..2.0,
            ) {
                let w = Tensor::matrix(2, 3, w).unwrap();
                let zero = Tensor::zeros(&[2]);
                let (x, y) = (v(&x), v(&y));
                let mut comb = x.clone();
                comb.scale(alpha);
                comb.axpy(beta, &y).unwrap();
                let lhs = affine(&w, &comb, &zero).unwrap();
                let mut rhs = affine(&w, &x, &zero).unwrap();
                rhs.scale(alpha);
                rhs.axpy(beta, &affine(&w, &y, &zero).unwrap()).unwrap();
                for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())));
                }
            }

            #[test]
            fn dot_is_symmetric_bitwise(
                u in proptest::collection::vec(-1e3f64..1e3, 1..16),
                seed in any::<u64>(),
            ) {
                let w: Vec<f64> = u.iter().enumerate()
                    .map(|(i, x)| x * ((seed.wrapping_add(i as u64) % 97) as f64 - 48.0))
                    .collect();
                let (u, w) = (v(&u), v(&w));
                prop_assert_eq!(dot(&u, &w).unwrap().to_bits(), dot(&w, &u).unwrap().to_bits());
            }

            #[test]
            fn gradient_of_linear_form_is_its_coefficients(
                c in proptest::collection::vec(-10.0f64..10.0, 1..8),
                x0 in -5.0f64..5.0,
            ) {
                let c = v(&c);
                let x = Tensor::filled(c.dims(), x0);
                let g = numerical_gradient(|t| dot(&c, t).unwrap(), &x, 1e-5).unwrap();
                for (a, b) in g.as_slice().iter().zip(c.as_slice()) {
                    prop_assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }
}
