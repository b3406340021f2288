//! Finite-difference check of a small conv → batch-norm → leaky ReLU stack.

use ganlink::tensor::gradcheck::finite_diff_check_param;
use ganlink::tensor::{with_precision, BatchNormStats, Mode, Precision, Tape, Tensor};

fn main() {
    with_precision(Precision::High, || {
        let x = Tensor::new(&[2, 3, 8, 8], (0..384).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap();
        let k = Tensor::parameter(&[4, 3, 4, 4], (0..192).map(|i| ((i * 13 % 29) as f64 / 29.0) - 0.5).collect()).unwrap();
        let gamma = Tensor::parameter(&[4], vec![1.0, 0.8, 1.2, 0.9]).unwrap();
        let beta = Tensor::parameter(&[4], vec![0.1, -0.2, 0.0, 0.3]).unwrap();
        let stats = BatchNormStats::new(4);
        let loss = |tape: &Tape| {
            let h = tape.conv2d(&x, &k, 2, 1)?;
            let h = tape.batchnorm(&h, &gamma, &beta, Mode::Train, &stats)?;
            let h = tape.leaky_relu(&h, 0.2)?;
            tape.mean(&tape.mul(&h, &h)?)
        };
        for (name, p) in [("kernels", &k), ("gamma", &gamma), ("beta", &beta)] {
            let r = finite_diff_check_param(loss, p, 1e-6, 1e-4, None).unwrap();
            println!("{name:8} max relative error {:.2e} {}", r.max_rel_error, if r.passed { "ok" } else { "FAILED" });
        }
    });
}
