//! Element-wise, reduction and matrix ops.

use super::{BackwardOp, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| f(p)).collect();
        Tensor::from_vec(x.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |p, q| p + q);
        self.push(out, &[a, b], Box::new(AddOp))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |p, q| p - q);
        self.push(out, &[a, b], Box::new(SubOp))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |p, q| p * q);
        self.push(out, &[a, b], Box::new(MulOp))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.map(a, |p| p * k);
        self.push(out, &[a], Box::new(ScaleOp(k)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |p| T::one() / (T::one() + (-p).exp()));
        self.push(out, &[a], Box::new(SigmoidOp))
    }

    /// `|a|`, with the subgradient at zero taken as zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |p| p.abs());
        self.push(out, &[a], Box::new(AbsOp))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), &[a], Box::new(SumOp { mean: false }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = T::of(x.numel() as f64);
        let s = x.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), &[a], Box::new(SumOp { mean: true }))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::mismatch("matmul", sa, sb)),
        };
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::from_vec(vec![m, n], out)?;
        self.push(out, &[a, b], Box::new(MatMulOp { m, k, n }))
    }
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

struct AddOp;
struct SubOp;
struct MulOp;
struct ScaleOp<T>(T);
struct SigmoidOp;
struct AbsOp;
struct SumOp {
    mean: bool,
}
struct MatMulOp {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> BackwardOp<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

impl<T: Real> BackwardOp<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
    }
}

impl<T: Real> BackwardOp<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let prod = |other: &Tensor<T>| g.iter().zip(other.data()).map(|(&gv, &o)| gv * o).collect();
        vec![
            needs[0].then(|| prod(x[1])),
            needs[1].then(|| prod(x[0])),
        ]
    }
}

impl<T: Real> BackwardOp<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.0).collect())]
    }
}

impl<T: Real> BackwardOp<T> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let d = g
            .iter()
            .zip(y.data())
            .map(|(&gv, &s)| gv * s * (T::one() - s))
            .collect();
        vec![Some(d)]
    }
}

impl<T: Real> BackwardOp<T> for AbsOp {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let d = g
            .iter()
            .zip(x[0].data())
            .map(|(&gv, &v)| {
                if v > T::zero() {
                    gv
                } else if v < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(d)]
    }
}

impl<T: Real> BackwardOp<T> for SumOp {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let n = x[0].numel();
        let v = if self.mean {
            g[0] / T::of(n as f64)
        } else {
            g[0]
        };
        vec![Some(vec![v; n])]
    }
}

impl<T: Real> BackwardOp<T> for MatMulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        // dA = G B^T, dB = A^T G
        let ga = needs[0].then(|| matmul_raw(g, &transpose(x[1].data(), k, n), m, n, k));
        let gb = needs[1].then(|| matmul_raw(&transpose(x[0].data(), m, k), g, k, m, n));
        vec![ga, gb]
    }
}
