mod conv;
mod norm;

pub use conv::{conv_out_extent, deconv_out_extent};
pub(crate) use conv::{conv2d_raw, deconv2d_raw, Geom2};
pub use norm::BatchNormStats;

use super::gemm::{gemm, MatRef};
use super::{check_shape, Result, Tape, Tensor, TensorError};

/// Whether layers with running statistics use batch or stored statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamp applied to probabilities before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;

impl Tape {
    /// `x·w + b` for `x: N×I`, `w: I×O`, `b: O`.
    pub fn dense(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.linear("dense", x, w, b, false)
    }

    /// `x·wᵀ + b` for `x: N×I`, `w: O×I`, `b: O`. Lets two layers share one matrix
    /// in opposite orientations.
    pub fn dense_transposed(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.linear("dense_transposed", x, w, b, true)
    }

    fn linear(&self, op: &'static str, x: &Tensor, w: &Tensor, b: &Tensor, transposed: bool) -> Result<Tensor> {
        check_shape(op, x, 2)?;
        check_shape(op, w, 2)?;
        let (n, i) = (x.shape()[0], x.shape()[1]);
        let (wi, o) = if transposed { (w.shape()[1], w.shape()[0]) } else { (w.shape()[0], w.shape()[1]) };
        if wi != i {
            return Err(TensorError::Dimension { op, lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
        }
        if b.shape() != [o] {
            return Err(TensorError::Dimension { op, lhs: w.shape().to_vec(), rhs: b.shape().to_vec() });
        }
        let mut out = vec![0.0; n * o];
        {
            let bd = b.data();
            for row in out.chunks_mut(o) {
                row.copy_from_slice(&bd);
            }
            let xd = x.data();
            let wd = w.data();
            let wm = if transposed { MatRef::new(&wd, o, i).t() } else { MatRef::new(&wd, i, o) };
            gemm(1.0, MatRef::new(&xd, n, i), wm, 1.0, &mut out);
        }
        let y = Tensor::from_op(op, vec![n, o], out)?;
        if self.wants(&[x, w, b]) {
            let (xs, ws) = (x.clone(), w.clone());
            self.record(
                &[x, w, b],
                &y,
                Box::new(move |g| {
                    let xd = xs.data();
                    let wd = ws.data();
                    let gm = MatRef::new(g, n, o);
                    let mut dx = vec![0.0; n * i];
                    let wm = if transposed { MatRef::new(&wd, o, i).t() } else { MatRef::new(&wd, i, o) };
                    gemm(1.0, gm, wm.t(), 0.0, &mut dx);
                    let mut dw = vec![0.0; i * o];
                    if transposed {
                        // dW (o×i) = gᵀ·x
                        gemm(1.0, gm.t(), MatRef::new(&xd, n, i), 0.0, &mut dw);
                    } else {
                        gemm(1.0, MatRef::new(&xd, n, i).t(), gm, 0.0, &mut dw);
                    }
                    let mut db = vec![0.0; o];
                    for row in g.chunks(o) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    vec![Some(dx), Some(dw), Some(db)]
                }),
            );
        }
        Ok(y)
    }

    pub fn activation(&self, x: &Tensor, kind: Activation) -> Result<Tensor> {
        if let Activation::LeakyRelu(slope) = kind {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(TensorError::Config {
                    op: "leaky_relu",
                    msg: format!("slope {slope} outside (0, 1)"),
                });
            }
        }
        let out: Vec<f64> = {
            let xd = x.data();
            match kind {
                Activation::LeakyRelu(s) => xd.iter().map(|&v| if v > 0.0 { v } else { s * v }).collect(),
                Activation::Tanh => xd.iter().map(|v| v.tanh()).collect(),
                Activation::Sigmoid => xd.iter().map(|&v| sigmoid(v)).collect(),
            }
        };
        let y = Tensor::from_op("activation", x.shape().to_vec(), out)?;
        if self.wants(&[x]) {
            let (xs, ys) = (x.clone(), y.clone());
            self.record(
                &[x],
                &y,
                Box::new(move |g| {
                    let dx: Vec<f64> = match kind {
                        Activation::LeakyRelu(s) => {
                            let xd = xs.data();
                            g.iter().zip(xd.iter()).map(|(g, &v)| if v > 0.0 { *g } else { s * g }).collect()
                        }
                        Activation::Tanh => {
                            let yd = ys.data();
                            g.iter().zip(yd.iter()).map(|(g, y)| g * (1.0 - y * y)).collect()
                        }
                        Activation::Sigmoid => {
                            let yd = ys.data();
                            g.iter().zip(yd.iter()).map(|(g, y)| g * y * (1.0 - y)).collect()
                        }
                    };
                    vec![Some(dx)]
                }),
            );
        }
        Ok(y)
    }

    pub fn leaky_relu(&self, x: &Tensor, slope: f64) -> Result<Tensor> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Stack tensors along `axis`; all other extents must agree.
    pub fn concat(&self, inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Usage("concat of an empty list".into()))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(TensorError::Config { op: "concat", msg: format!("axis {axis} out of range for {nd}-d") });
        }
        for t in &inputs[1..] {
            let ok = t.ndim() == nd
                && t.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(TensorError::Dimension {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = inputs.iter().map(|t| t.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        let guards: Vec<_> = inputs.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (gd, &wd) in guards.iter().zip(&widths) {
                out.extend_from_slice(&gd[o * wd..(o + 1) * wd]);
            }
        }
        drop(guards);
        let mut shape = first.shape().to_vec();
        shape[axis] = total / inner;
        let y = Tensor::from_op("concat", shape, out)?;
        if self.wants(inputs) {
            self.record(
                inputs,
                &y,
                Box::new(move |g| {
                    let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(outer * w)).collect();
                    let mut off = 0;
                    for _ in 0..outer {
                        for (p, &w) in parts.iter_mut().zip(&widths) {
                            p.extend_from_slice(&g[off..off + w]);
                            off += w;
                        }
                    }
                    parts.into_iter().map(Some).collect()
                }),
            );
        }
        Ok(y)
    }

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != x.numel() {
            return Err(TensorError::Dimension { op: "reshape", lhs: x.shape().to_vec(), rhs: shape.to_vec() });
        }
        let y = Tensor::from_op("reshape", shape.to_vec(), x.to_vec())?;
        self.record(&[x], &y, Box::new(|g| vec![Some(g.to_vec())]));
        Ok(y)
    }

    fn binary(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(TensorError::Dimension { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
        }
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_op(op, a.shape().to_vec(), out)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = self.binary("add", a, b, |x, y| x + y)?;
        self.record(&[a, b], &y, Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]));
        Ok(y)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = self.binary("sub", a, b, |x, y| x - y)?;
        self.record(&[a, b], &y, Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]));
        Ok(y)
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = self.binary("mul", a, b, |x, y| x * y)?;
        if self.wants(&[a, b]) {
            let (ac, bc) = (a.clone(), b.clone());
            self.record(
                &[a, b],
                &y,
                Box::new(move |g| {
                    let ad = ac.data();
                    let bd = bc.data();
                    let da = g.iter().zip(bd.iter()).map(|(g, b)| g * b).collect();
                    let db = g.iter().zip(ad.iter()).map(|(g, a)| g * a).collect();
                    vec![Some(da), Some(db)]
                }),
            );
        }
        Ok(y)
    }

    pub fn scale(&self, x: &Tensor, factor: f64) -> Result<Tensor> {
        let out = x.data().iter().map(|v| v * factor).collect();
        let y = Tensor::from_op("scale", x.shape().to_vec(), out)?;
        self.record(&[x], &y, Box::new(move |g| vec![Some(g.iter().map(|v| v * factor).collect())]));
        Ok(y)
    }

    pub fn sum(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.data().iter().sum();
        let y = Tensor::from_op("sum", vec![1], vec![s])?;
        let n = x.numel();
        self.record(&[x], &y, Box::new(move |g| vec![Some(vec![g[0]; n])]));
        Ok(y)
    }

    pub fn mean(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel();
        let s = self.sum(x)?;
        self.scale(&s, 1.0 / n as f64)
    }

    /// Mean squared difference over all elements; `target` is treated as a constant.
    pub fn mse_loss(&self, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        if pred.shape() != target.shape() {
            return Err(TensorError::Dimension {
                op: "mse_loss",
                lhs: pred.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = pred.numel() as f64;
        let diff: Vec<f64> = pred.data().iter().zip(target.data().iter()).map(|(p, t)| p - t).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let y = Tensor::from_op("mse_loss", vec![1], vec![loss])?;
        self.record(
            &[pred],
            &y,
            Box::new(move |g| vec![Some(diff.iter().map(|d| g[0] * 2.0 * d / n).collect())]),
        );
        Ok(y)
    }

    /// Binary cross-entropy of probabilities against a constant 0/1 target,
    /// averaged over the batch. Scores are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_loss(&self, scores: &Tensor, target: f64) -> Result<Tensor> {
        if target != 0.0 && target != 1.0 {
            return Err(TensorError::Config { op: "bce_loss", msg: format!("target {target} is not 0 or 1") });
        }
        let n = scores.numel() as f64;
        let sd = scores.to_vec();
        let loss = sd
            .iter()
            .map(|&s| {
                let s = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
                -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / n;
        let y = Tensor::from_op("bce_loss", vec![1], vec![loss])?;
        if self.wants(&[scores]) {
            self.record(
                &[scores],
                &y,
                Box::new(move |g| {
                    let d = sd
                        .iter()
                        .map(|&s| {
                            if !(SCORE_EPS..=1.0 - SCORE_EPS).contains(&s) {
                                0.0
                            } else {
                                -g[0] * (target / s - (1.0 - target) / (1.0 - s)) / n
                            }
                        })
                        .collect();
                    vec![Some(d)]
                }),
            );
        }
        Ok(y)
    }

    /// Replicate `N×C` features over an `h×w` grid, giving `N×C×h×w`.
    pub fn tile_spatial(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        check_shape("tile_spatial", x, 2)?;
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c * hw);
        for v in x.data().iter() {
            out.extend(std::iter::repeat_n(*v, hw));
        }
        let y = Tensor::from_op("tile_spatial", vec![n, c, h, w], out)?;
        self.record(
            &[x],
            &y,
            Box::new(move |g| vec![Some(g.chunks(hw).map(|ch| ch.iter().sum()).collect())]),
        );
        Ok(y)
    }

    /// Add a per-channel bias `b: C` to `x: N×C×…`.
    pub fn add_channel_bias(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        if x.ndim() < 2 || b.shape() != [x.shape()[1]] {
            return Err(TensorError::Dimension {
                op: "add_channel_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let c = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let mut out = x.to_vec();
        {
            let bd = b.data();
            for (i, chunk) in out.chunks_mut(inner).enumerate() {
                let bias = bd[i % c];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let y = Tensor::from_op("add_channel_bias", x.shape().to_vec(), out)?;
        self.record(
            &[x, b],
            &y,
            Box::new(move |g| {
                let mut db = vec![0.0; c];
                for (i, chunk) in g.chunks(inner).enumerate() {
                    db[i % c] += chunk.iter().sum::<f64>();
                }
                vec![Some(g.to_vec()), Some(db)]
            }),
        );
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{with_precision, Precision};

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    fn p(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::parameter(shape, v).unwrap()
    }

    #[test]
    fn dense_identity_and_sum() {
        let tape = Tape::no_grad();
        let y = tape
            .dense(&t(&[1, 2], vec![1., 2.]), &t(&[2, 2], vec![1., 0., 0., 1.]), &t(&[2], vec![0., 0.]))
            .unwrap();
        assert_eq!(y.to_vec(), vec![1., 2.]);
        let y = tape.dense(&t(&[1, 2], vec![1., 1.]), &t(&[2, 1], vec![2., 3.]), &t(&[1], vec![1.])).unwrap();
        assert_eq!(y.to_vec(), vec![6.]);
    }

    #[test]
    fn dense_shape_error_reports_both_shapes() {
        let tape = Tape::no_grad();
        let err = tape.dense(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 5]), &Tensor::zeros(&[5])).unwrap_err();
        match err {
            TensorError::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dense_transposed_matches_explicit_transpose() {
        let tape = Tape::no_grad();
        let x = t(&[2, 3], vec![1., -2., 0.5, 3., 1., -1.]);
        let w = t(&[2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let wt = t(&[3, 2], vec![0.1, -0.4, 0.2, 0.5, 0.3, 0.6]);
        let b = t(&[2], vec![0.5, -0.5]);
        let a = tape.dense_transposed(&x, &w, &b).unwrap().to_vec();
        let e = tape.dense(&x, &wt, &b).unwrap().to_vec();
        for (x, y) in a.iter().zip(&e) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn activations_values() {
        let tape = Tape::no_grad();
        let y = tape.leaky_relu(&t(&[2], vec![-1., 2.]), 0.2).unwrap().to_vec();
        assert!((y[0] + 0.2).abs() < 1e-7 && y[1] == 2.0);
        assert_eq!(tape.sigmoid(&t(&[1], vec![0.])).unwrap().item(), 0.5);
        assert!(tape.leaky_relu(&t(&[1], vec![1.]), 1.5).is_err());
    }

    #[test]
    fn concat_shapes_and_gradient() {
        let tape = Tape::new();
        let a = p(&[1, 10], vec![0.5; 10]);
        let b = p(&[1, 256], vec![0.1; 256]);
        let c = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 266]);
        let s = tape.sum(&c).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 10]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 256]);

        let single = tape.concat(&[&a], 1).unwrap();
        assert!(single.bitwise_eq(&a.detach()));
        assert!(tape.concat(&[&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 3])], 1).is_err());
    }

    #[test]
    fn concat_axis0_and_middle_axis() {
        let tape = Tape::no_grad();
        let a = t(&[1, 2, 2], vec![1., 2., 3., 4.]);
        let b = t(&[1, 1, 2], vec![5., 6.]);
        assert_eq!(tape.concat(&[&a, &b], 1).unwrap().to_vec(), vec![1., 2., 3., 4., 5., 6.]);
        let x = t(&[2, 1], vec![1., 2.]);
        let y = t(&[1, 1], vec![3.]);
        assert_eq!(tape.concat(&[&x, &y], 0).unwrap().shape(), &[3, 1]);
    }

    #[test]
    fn bce_values() {
        with_precision(Precision::High, || {
            let tape = Tape::no_grad();
            let l = tape.bce_loss(&t(&[1], vec![0.5]), 1.0).unwrap().item();
            assert!((l - 0.693147).abs() < 1e-6);
            let l = tape.bce_loss(&t(&[1], vec![1.0]), 1.0).unwrap().item();
            assert!(l <= 1e-6);
            let l = tape.bce_loss(&t(&[1], vec![0.9]), 1.0).unwrap().item();
            assert!((l - 0.105361).abs() < 1e-6);
        });
    }

    #[test]
    fn backward_sum_and_square() {
        let tape = Tape::new();
        let x = p(&[2, 3], vec![0.3; 6]);
        let s = tape.sum(&x).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);

        let tape = Tape::new();
        let x = p(&[1], vec![3.0]);
        let sq = tape.mul(&x, &x).unwrap();
        let s = tape.sum(&sq).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        // accumulate on a second call
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = p(&[2], vec![1., 2.]);
        let y = tape.scale(&x, 2.0).unwrap();
        assert!(matches!(tape.backward(&y), Err(TensorError::Usage(_))));
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let x = p(&[2], vec![1., 2.]);
        let s = tape.sum(&x).unwrap();
        assert!(tape.is_empty());
        assert!(tape.backward(&s).is_err());
    }

    #[test]
    fn tile_and_channel_bias() {
        let tape = Tape::new();
        let x = p(&[1, 2], vec![1., 2.]);
        let y = tape.tile_spatial(&x, 2, 2).unwrap();
        assert_eq!(y.to_vec(), vec![1., 1., 1., 1., 2., 2., 2., 2.]);
        let b = p(&[2], vec![10., 20.]);
        let z = tape.add_channel_bias(&y, &b).unwrap();
        assert_eq!(z.to_vec()[0], 11.0);
        assert_eq!(z.to_vec()[7], 22.0);
        let s = tape.sum(&z).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4., 4.]);
        assert_eq!(b.grad().unwrap(), vec![4., 4.]);
    }
}
