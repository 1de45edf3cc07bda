use std::time::Instant;
use pulldoor::dataset::{collect_demos, RandomizationSpec};
use pulldoor::diffusion::{DiffusionPolicy, PolicyConfig, Trainer};
use pulldoor::worldsim::WorldSpec;

fn main() {
    let threads: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    pulldoor::numerics::set_threads(threads);
    let spec = WorldSpec::default();
    let t0 = Instant::now();
    let (ds, sum) = collect_demos(3, 7, &spec, &RandomizationSpec::default()).unwrap();
    println!("collect 3 episodes: {:.1}s (mean len {:.0})", t0.elapsed().as_secs_f64(), sum.mean_len);
    let policy = DiffusionPolicy::new(PolicyConfig::default(), ds.manifest.stats.clone()).unwrap();
    let mut tr = Trainer::new(policy, &ds);
    // warmup
    let t0 = Instant::now();
    let l0 = tr.step().unwrap();
    println!("first step: {:.3}s loss {:.3}", t0.elapsed().as_secs_f64(), l0);
    let t0 = Instant::now();
    let n = 20;
    let mut last = 0.0;
    for _ in 0..n { last = tr.step().unwrap(); }
    let per = t0.elapsed().as_secs_f64() / n as f64;
    println!("threads={threads}: {:.3}s/step (loss {:.3}) -> 20k steps = {:.1}h", per, last, per * 20000.0 / 3600.0);
}
