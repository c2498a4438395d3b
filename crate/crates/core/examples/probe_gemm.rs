//! Raw gemm throughput at the shapes the denoiser uses.

use std::time::Instant;

fn gemm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = av.mul_add(bv, *cv);
            }
        }
    }
}

/// Two output rows per pass over b.
fn gemm_acc2(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 1 < m {
        let (arow0, arow1) = (&a[i * k..(i + 1) * k], &a[(i + 1) * k..(i + 2) * k]);
        let (chead, ctail) = c[i * n..].split_at_mut(n);
        let crow0 = chead;
        let crow1 = &mut ctail[..n];
        for p in 0..k {
            let (a0, a1) = (arow0[p], arow1[p]);
            let brow = &b[p * n..(p + 1) * n];
            for ((c0, c1), &bv) in crow0.iter_mut().zip(crow1.iter_mut()).zip(brow) {
                *c0 = a0.mul_add(bv, *c0);
                *c1 = a1.mul_add(bv, *c1);
            }
        }
        i += 2;
    }
    if i < m {
        gemm_acc(&mut c[i * n..(i + 1) * n], &a[i * k..(i + 1) * k], b, 1, k, n);
    }
}

fn bench(name: &str, m: usize, k: usize, n: usize, f: impl Fn(&mut [f64], &[f64], &[f64])) {
    let a = vec![0.5; m * k];
    let b = vec![0.25; k * n];
    let mut c = vec![0.0; m * n];
    let reps = (2e8 / (2.0 * (m * k * n) as f64)) as usize + 1;
    let t0 = Instant::now();
    for _ in 0..reps {
        f(&mut c, &a, &b);
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n) as f64 * reps as f64;
    println!(
        "{name} {m}x{k}x{n}: {:.2} GFLOP/s",
        flops / dt / 1e9
    );
    assert!(c[0] != 0.0);
}

fn main() {
    for (m, k, n) in [(31, 64, 64), (31, 64, 256), (1984, 64, 64), (1984, 64, 256), (1984, 256, 64)] {
        bench("ikj ", m, k, n, |c, a, b| gemm_acc(c, a, b, m, k, n));
        bench("ikj2", m, k, n, |c, a, b| gemm_acc2(c, a, b, m, k, n));
    }
}
