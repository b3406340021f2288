use super::Mode;
use crate::tensor::{Result, Tape, Tensor, TensorError};

/// Running statistics of one batch-normalization layer.
///
/// `momentum` is the weight given to the current batch when the running
/// estimates are updated: `running ← (1 − momentum)·running + momentum·batch`.
#[derive(Clone, Debug)]
pub struct BatchNormStats {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self::with_momentum(channels, Self::DEFAULT_MOMENTUM)
    }

    pub fn with_momentum(channels: usize, momentum: f64) -> Self {
        BatchNormStats {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }
}

impl Tape {
    /// Per-channel normalization of `N×C` or `N×C×H×W` input.
    ///
    /// Train mode normalizes with the (biased) batch statistics and folds them
    /// into `stats`; infer mode uses the stored running statistics.
    pub fn batchnorm(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        mode: Mode,
        stats: &BatchNormStats,
    ) -> Result<Tensor> {
        if !(x.ndim() == 2 || x.ndim() == 4) {
            return Err(TensorError::Config {
                op: "batchnorm",
                msg: format!("expected N×C or N×C×H×W input, got {:?}", x.shape()),
            });
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        if gamma.shape() != [c] || beta.shape() != [c] || stats.channels() != c {
            return Err(TensorError::Dimension { op: "batchnorm", lhs: x.shape().to_vec(), rhs: gamma.shape().to_vec() });
        }
        if mode == Mode::Train && n < 2 {
            return Err(TensorError::Config {
                op: "batchnorm",
                msg: "train mode needs a batch of at least 2 (variance undefined)".into(),
            });
        }
        let inner: usize = x.shape()[2..].iter().product();
        let count = (n * inner) as f64;
        let xd = x.to_vec();

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, chunk) in xd.chunks(inner).enumerate() {
                    mean[i % c] += chunk.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (i, chunk) in xd.chunks(inner).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count);
                let mom = stats.momentum;
                let rm: Vec<f64> = stats
                    .running_mean
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(r, b)| (1.0 - mom) * r + mom * b)
                    .collect();
                let rv: Vec<f64> = stats
                    .running_var
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| (1.0 - mom) * r + mom * b)
                    .collect();
                stats.running_mean.assign(rm)?;
                stats.running_var.assign(rv)?;
                (mean, var)
            }
            Mode::Infer => (stats.running_mean.to_vec(), stats.running_var.to_vec()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        {
            let gd = gamma.data();
            let bd = beta.data();
            for (i, (src, (xh, o))) in xd
                .chunks(inner)
                .zip(xhat.chunks_mut(inner).zip(out.chunks_mut(inner)))
                .enumerate()
            {
                let ch = i % c;
                for ((s, h), y) in src.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                    *h = (s - mean[ch]) * inv_std[ch];
                    *y = gd[ch] * *h + bd[ch];
                }
            }
        }
        let y = Tensor::from_op("batchnorm", x.shape().to_vec(), out)?;
        if self.wants(&[x, gamma, beta]) {
            let gs = gamma.clone();
            self.record(
                &[x, gamma, beta],
                &y,
                Box::new(move |g| {
                    let gd = gs.data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for (i, (gc, hc)) in g.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                        let ch = i % c;
                        dbeta[ch] += gc.iter().sum::<f64>();
                        dgamma[ch] += gc.iter().zip(hc).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let mut dx = vec![0.0; g.len()];
                    for (i, ((gc, hc), dc)) in g.chunks(inner).zip(xhat.chunks(inner)).zip(dx.chunks_mut(inner)).enumerate() {
                        let ch = i % c;
                        let scale = gd[ch] * inv_std[ch];
                        match mode {
                            Mode::Train => {
                                let (sg, sgh) = (dbeta[ch] / count, dgamma[ch] / count);
                                for ((d, gv), h) in dc.iter_mut().zip(gc).zip(hc) {
                                    *d = scale * (gv - sg - h * sgh);
                                }
                            }
                            Mode::Infer => {
                                for (d, gv) in dc.iter_mut().zip(gc) {
                                    *d = scale * gv;
                                }
                            }
                        }
                    }
                    vec![Some(dx), Some(dgamma), Some(dbeta)]
                }),
            );
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{with_precision, Precision};

    #[test]
    fn normalizes_two_values() {
        let tape = Tape::no_grad();
        let stats = BatchNormStats::new(1);
        let x = Tensor::new(&[2, 1], vec![-1.0, 1.0]).unwrap();
        let y = tape
            .batchnorm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), Mode::Train, &stats)
            .unwrap()
            .to_vec();
        let mean = (y[0] + y[1]) / 2.0;
        let var = (y[0] * y[0] + y[1] * y[1]) / 2.0 - mean * mean;
        assert!(mean.abs() < 1e-7);
        assert!((var - 1.0).abs() <= 1e-3);
        assert!(y[0] < 0.0 && (y[0] + y[1]).abs() < 1e-7);
    }

    #[test]
    fn affine_on_normalized_input() {
        let tape = Tape::no_grad();
        let stats = BatchNormStats::new(1);
        // stored statistics mean 0 var 1 → infer mode is the affine map up to eps
        let x = Tensor::new(&[3, 1], vec![-1.2, 0.4, 0.8]).unwrap();
        let y = tape
            .batchnorm(&x, &Tensor::full(&[1], 2.0), &Tensor::full(&[1], 3.0), Mode::Infer, &stats)
            .unwrap()
            .to_vec();
        for (a, b) in y.iter().zip([-1.2, 0.4, 0.8]) {
            assert!((a - (2.0 * b + 3.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn train_then_infer_with_full_momentum_agree() {
        with_precision(Precision::High, || {
            let tape = Tape::no_grad();
            let stats = BatchNormStats::with_momentum(2, 1.0);
            let x = Tensor::new(&[3, 2, 1, 2], (0..12).map(|v| (v as f64 * 0.7).sin()).collect()).unwrap();
            let gamma = Tensor::new(&[2], vec![1.5, 0.5]).unwrap();
            let beta = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
            let a = tape.batchnorm(&x, &gamma, &beta, Mode::Train, &stats).unwrap().to_vec();
            let b = tape.batchnorm(&x, &gamma, &beta, Mode::Infer, &stats).unwrap().to_vec();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-5);
            }
        });
    }

    #[test]
    fn single_sample_train_is_error() {
        let tape = Tape::no_grad();
        let stats = BatchNormStats::new(3);
        let r = tape.batchnorm(&Tensor::zeros(&[1, 3]), &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), Mode::Train, &stats);
        assert!(matches!(r, Err(TensorError::Config { .. })));
        let r = tape.batchnorm(&Tensor::zeros(&[1, 3]), &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), Mode::Infer, &stats);
        assert!(r.is_ok());
    }
}
