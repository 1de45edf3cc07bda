use std::time::Instant;
use pulldoor::numerics::{Graph, ParamStore, Tensor, set_threads};

fn main() {
    let threads: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    set_threads(threads);
    let mut store = ParamStore::<f32>::new();
    let a = store.register("a", Tensor::from_fn(vec![512, 512], |i| (i as f32 * 0.001).sin())).unwrap();
    let b = store.register("b", Tensor::from_fn(vec![512, 512], |i| (i as f32 * 0.002).cos())).unwrap();
    // warmup + measure
    let t0 = Instant::now();
    let n = 50;
    for _ in 0..n {
        let g = &mut Graph::new(&store);
        let _ = g.matmul(a.into(), b.into()).unwrap();
    }
    let per = t0.elapsed().as_secs_f64() / n as f64;
    let gflops = 2.0 * 512.0f64.powi(3) / per / 1e9;
    println!("threads={threads}: matmul 512^3 {:.4}s/iter = {:.2} GFLOP/s", per, gflops);
}
