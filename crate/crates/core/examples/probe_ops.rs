//! Decompose batched-graph op costs at training shapes.

use std::time::Instant;

use flamekit::autodiff::Graph;
use flamekit::Tensor;

fn time_op(name: &str, reps: usize, mut f: impl FnMut()) {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("{name}: {:.3} ms", dt * 1e3);
}

fn main() {
    let x = Tensor::filled([64, 31, 64], 0.3);
    let w = Tensor::filled([64, 64], 0.1);
    let wff = Tensor::filled([64, 256], 0.1);
    let big = Tensor::filled([64, 31, 256], 0.2);

    time_op("matmul 64x31x64 @ 64x64", 200, || {
        let mut g = Graph::new();
        let (a, b) = (g.input(x.clone()), g.input(w.clone()));
        let _ = g.matmul(a, b);
    });
    time_op("matmul 64x31x64 @ 64x256", 200, || {
        let mut g = Graph::new();
        let (a, b) = (g.input(x.clone()), g.input(wff.clone()));
        let _ = g.matmul(a, b);
    });
    time_op("input clone [64,31,64]", 400, || {
        let mut g = Graph::new();
        let _ = g.input(x.clone());
    });
    time_op("add [64,31,64]", 400, || {
        let mut g = Graph::new();
        let (a, b) = (g.input(x.clone()), g.input(x.clone()));
        let _ = g.add(a, b);
    });
    time_op("gelu [64,31,256]", 100, || {
        let mut g = Graph::new();
        let a = g.input(big.clone());
        let _ = g.gelu(a);
    });
    time_op("softmax [64,31,31]", 200, || {
        let mut g = Graph::new();
        let a = g.input(Tensor::filled([64, 31, 31], 0.1));
        let _ = g.softmax_last(a);
    });
    time_op("matmul_tb scores 64x31x64", 200, || {
        let mut g = Graph::new();
        let (a, b) = (g.input(x.clone()), g.input(x.clone()));
        let _ = g.matmul_tb(a, b);
    });
}
