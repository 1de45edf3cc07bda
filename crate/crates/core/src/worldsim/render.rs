//! Synthetic multi-view rasterizer.
//!
//! Three fixed viewpoints, each a 32×32 grayscale window in [0,1]:
//! robot-centric overhead, handle-centric close-up, doorway-frame view.
//! Rendering is plain f64 point-in-primitive arithmetic with a fixed painter
//! order, so identical state and appearance give bit-identical rasters.

use super::spec::{AppearanceSpec, WorldSpec};
use super::state::{arm_forward, WorldState};

pub const RASTER_SIZE: usize = 32;

/// One grayscale view, row-major `RASTER_SIZE²` values in [0,1].
pub type Raster = Vec<f32>;

enum Prim {
    Seg { a: [f64; 2], b: [f64; 2], halfw: f64, shade: f64 },
    Disc { c: [f64; 2], r: f64, shade: f64 },
}

impl Prim {
    fn covers(&self, p: [f64; 2]) -> Option<f64> {
        match *self {
            Prim::Seg { a, b, halfw, shade } => {
                (super::sim::point_segment_distance(p, a, b) <= halfw).then_some(shade)
            }
            Prim::Disc { c, r, shade } => {
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                (d2 <= r * r).then_some(shade)
            }
        }
    }
}

fn rotate(v: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Render the three camera views for a state under an appearance.
pub fn render_views(spec: &WorldSpec, state: &WorldState, app: &AppearanceSpec) -> [Raster; 3] {
    let door = &spec.door;
    let theta = state.door_angle;
    let handle = door.handle_point(theta);

    // painter order, topmost first
    let mut prims: Vec<Prim> = Vec::with_capacity(16);
    for i in 0..2 {
        let (pts, _) = arm_forward(&state.base, &spec.robot.arms[i], &state.joints[i]);
        prims.push(Prim::Disc {
            c: pts[3],
            r: 0.022,
            shade: 0.60 + 0.35 * state.grip[i],
        });
        for j in 0..3 {
            prims.push(Prim::Seg {
                a: pts[j],
                b: pts[j + 1],
                halfw: 0.015,
                shade: 0.75,
            });
        }
    }
    prims.push(Prim::Disc {
        c: state.base.position(),
        r: spec.robot.base_radius,
        shade: 0.50,
    });
    // handle lever rotates with the twist so the latch state is visible
    let lever_dir = rotate(
        [-theta.cos(), -theta.sin()],
        -state.handle_twist,
    );
    prims.push(Prim::Seg {
        a: handle,
        b: [handle[0] + 0.16 * lever_dir[0], handle[1] + 0.16 * lever_dir[1]],
        halfw: 0.018,
        shade: app.handle_intensity,
    });
    prims.push(Prim::Disc {
        c: handle,
        r: 0.032,
        shade: app.handle_intensity,
    });
    prims.push(Prim::Seg {
        a: door.hinge_position,
        b: door.edge_point(theta),
        halfw: 0.025,
        shade: app.door_intensity,
    });
    for (a, b) in spec.walls() {
        prims.push(Prim::Seg {
            a,
            b,
            halfw: 0.035,
            shade: 0.65,
        });
    }

    let views = [
        (state.base.position(), 1.1),
        (handle, 0.30),
        (
            [
                door.hinge_position[0],
                door.hinge_position[1] + 0.5 * door.panel_length,
            ],
            1.1,
        ),
    ];

    views.map(|(center, half)| {
        let px = 2.0 * half / RASTER_SIZE as f64;
        let mut out = vec![0.0f32; RASTER_SIZE * RASTER_SIZE];
        for row in 0..RASTER_SIZE {
            let y = center[1] + (RASTER_SIZE as f64 / 2.0 - row as f64 - 0.5) * px;
            for col in 0..RASTER_SIZE {
                let x = center[0] + (col as f64 + 0.5 - RASTER_SIZE as f64 / 2.0) * px;
                let shade = prims
                    .iter()
                    .find_map(|p| p.covers([x, y]))
                    .unwrap_or(app.background_intensity);
                out[row * RASTER_SIZE + col] =
                    ((shade * app.brightness_gain).clamp(0.0, 1.0)) as f32;
            }
        }
        out
    })
}
