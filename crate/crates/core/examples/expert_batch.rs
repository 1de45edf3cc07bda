use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use pulldoor::expert::{Expert, ExpertConfig};
use pulldoor::worldsim::{DisturbanceScript, Pose, World, WorldSpec};

fn run(seed: u64, disturb: bool) -> (bool, f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = WorldSpec::default();
    let lateral: f64 = 0.90 + rng.random_range(-0.03..=0.03);
    let long: f64 = rng.random_range(-0.03..=0.03);
    let yaw: f64 = rng.random_range(-1.0..=1.0);
    let init = Pose::new(-lateral, 0.45 + long, yaw);
    let mut world = World::new(spec.clone(), init).unwrap();
    if disturb {
        world.set_disturbance(DisturbanceScript::parse("close@0.5rad:torque=80:dur=1.0").unwrap());
    }
    let mut expert = Expert::new(ExpertConfig::default());
    while world.state.t < spec.time_limit && !world.state.crossed {
        let action = match expert.step(&spec, &world.state) {
            Ok(a) => a,
            Err(e) => return (false, world.state.t, format!("expert: {e}")),
        };
        if let Err(e) = world.step(&action) {
            return (false, world.state.t, format!("sim: {e}"));
        }
        if world.state.collided {
            return (false, world.state.t, format!("collision at stage {:?} door {:.2} base ({:.2},{:.2})", expert.stage(), world.state.door_angle, world.state.base.x, world.state.base.y));
        }
    }
    (world.success(), world.state.t, format!("stage {:?} door {:.2}", expert.stage(), world.state.door_angle))
}

fn main() {
    let disturb = std::env::args().any(|a| a == "--disturb");
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let mut ok = 0;
    let mut times = Vec::new();
    for seed in 0..n as u64 {
        let (success, t, why) = run(seed, disturb);
        if success { ok += 1; times.push(t); } else {
            println!("seed {seed}: FAIL at t={t:.1} ({why})");
        }
    }
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    println!("success {ok}/{n}  mean episode time {mean:.1}s");
}
