use pulldoor::expert::{Expert, ExpertConfig, Stage};
use pulldoor::worldsim::{Pose, World, WorldSpec};

fn main() {
    let spec = WorldSpec::default();
    let mut world = World::new(spec.clone(), Pose::new(-0.90, 0.45, 0.0)).unwrap();
    let mut expert = Expert::new(ExpertConfig::default());
    let mut prev_stage = Stage::Approach;
    for _ in 0..1500 {
        let action = expert.step(&spec, &world.state).unwrap();
        let s = world.state.clone();
        let interesting = expert.stage() != prev_stage
            || (s.t > 6.5 && s.t < 7.2);
        if interesting {
            let pts = world.arm_points(1);
            let (gp, wr) = (pts[3], pulldoor::expert::forward_kinematics(&spec.robot.arms[1], &s.base, &s.joints[1]).1);
            println!(
                "t={:6.2} stage={:?} theta={:.4} rate={:.3} phi={:.4} latched={} attR={:?} gripR={:.2} tip=({:.3},{:.3}) wrist={:.3} base=({:.2},{:.2},{:.2}) v={:.2} w={:.2}",
                s.t, expert.stage(), s.door_angle, s.door_rate, s.handle_twist, s.latched,
                s.attach[1], s.grip[1], gp[0], gp[1], wr, s.base.x, s.base.y, s.base.yaw, action.v, action.omega
            );
        }
        prev_stage = expert.stage();
        world.step(&action).unwrap();
        if s.t > 7.4 { break; }
    }
}
