use std::time::Instant;

#[test]
#[ignore]
fn bench_gemm() {
    for (m, k, p, tag) in [
        (128usize, 2048usize, 128usize, "scores"),
        (128, 64, 2048, "proj"),
        (2048, 64, 2048, "outer"),
    ] {
        let a = vec![0.5f32; m * k];
        let b = vec![0.25f32; k * p];
        let mut c = vec![0.0f32; m * p];
        let iters = (2e9 / (2.0 * (m * k * p) as f64)).max(1.0) as usize;
        let t0 = Instant::now();
        for _ in 0..iters {
            unsafe {
                matrixmultiply::sgemm(
                    m, k, p, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), p as isize, 1,
                    0.0, c.as_mut_ptr(), p as isize, 1,
                );
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        let gf = (2.0 * (m * k * p) as f64 * iters as f64) / dt / 1e9;
        println!("{tag} gemm ({m}x{k}x{p}): {gf:.2} Gflop/s");
    }
}
