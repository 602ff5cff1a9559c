//! Synthetic top-down cameras.
//!
//! Both cameras are orthographic and look straight down with image rows
//! running toward -y and columns toward +x. For a view with origin
//! `(x0, y_top)` and scale `s` meters per pixel, pixel `(col, row)` samples
//! the world point
//!
//! ```text
//! x = x0 + (col + 0.5) * s
//! y = y_top - (row + 0.5) * s
//! ```
//!
//! The base camera uses `x0 = workspace.x_min`, `y_top = workspace.y_max` and
//! `s = workspace_width / image_width`. The wrist camera is centred on the
//! tool: `x0 = tcp.x - W/2 * s_w`, `y_top = tcp.y + H/2 * s_w` with
//! `s_w = wrist_window_width / image_width`. A pixel takes an object's colour
//! when its sample point lies within the object's radius.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::config::{ObjectKind, Rect, SimConfig};
use super::world::{ObjectStatus, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraId {
    Base,
    Wrist,
}

impl CameraId {
    pub fn name(&self) -> &'static str {
        match self {
            CameraId::Base => "base",
            CameraId::Wrist => "wrist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(CameraId::Base),
            "wrist" => Some(CameraId::Wrist),
            _ => None,
        }
    }
}

pub mod palette {
    use image::Rgb;

    pub const OFF_TABLE: Rgb<u8> = Rgb([40, 40, 40]);
    pub const BACKGROUND: Rgb<u8> = Rgb([205, 195, 175]);
    pub const BOX: Rgb<u8> = Rgb([95, 65, 40]);
    pub const GRAPE_FREE: Rgb<u8> = Rgb([110, 45, 130]);
    pub const CHERRY_FREE: Rgb<u8> = Rgb([175, 20, 35]);
    pub const HELD: Rgb<u8> = Rgb([40, 165, 70]);
    pub const DEPOSITED: Rgb<u8> = Rgb([55, 80, 200]);
    pub const DROPPED: Rgb<u8> = Rgb([150, 150, 150]);
    pub const TCP_MARKER: Rgb<u8> = Rgb([250, 230, 20]);
}

/// Affine map between image pixels and table coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x0: f64,
    pub y_top: f64,
    pub scale: f64,
    pub width: u32,
    pub height: u32,
}

impl Projection {
    pub fn base(config: &SimConfig) -> Self {
        Self {
            x0: config.workspace.x_min,
            y_top: config.workspace.y_max,
            scale: config.base_scale(),
            width: config.camera.width,
            height: config.camera.height,
        }
    }

    pub fn wrist(config: &SimConfig, tcp_x: f64, tcp_y: f64) -> Self {
        let s = config.wrist_scale();
        let (w, h) = (config.camera.width, config.camera.height);
        Self {
            x0: tcp_x - 0.5 * w as f64 * s,
            y_top: tcp_y + 0.5 * h as f64 * s,
            scale: s,
            width: w,
            height: h,
        }
    }

    /// World point sampled by the centre of pixel `(col, row)`.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.x0 + (col + 0.5) * self.scale,
            self.y_top - (row + 0.5) * self.scale,
        )
    }

    /// Continuous pixel coordinates whose centre samples `(x, y)`.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x0) / self.scale - 0.5,
            (self.y_top - y) / self.scale - 0.5,
        )
    }

    fn col_range(&self, x_min: f64, x_max: f64) -> std::ops::Range<u32> {
        let lo = ((x_min - self.x0) / self.scale - 0.5).ceil().max(0.0);
        let hi = ((x_max - self.x0) / self.scale - 0.5).floor() + 1.0;
        clamp_range(lo, hi, self.width)
    }

    fn row_range(&self, y_min: f64, y_max: f64) -> std::ops::Range<u32> {
        let lo = ((self.y_top - y_max) / self.scale - 0.5).ceil().max(0.0);
        let hi = ((self.y_top - y_min) / self.scale - 0.5).floor() + 1.0;
        clamp_range(lo, hi, self.height)
    }
}

fn clamp_range(lo: f64, hi: f64, limit: u32) -> std::ops::Range<u32> {
    let lo = lo.clamp(0.0, limit as f64) as u32;
    let hi = hi.clamp(0.0, limit as f64) as u32;
    lo..hi.max(lo)
}

fn fill_rect(img: &mut RgbImage, proj: &Projection, r: &Rect, color: Rgb<u8>) {
    for row in proj.row_range(r.y_min, r.y_max) {
        for col in proj.col_range(r.x_min, r.x_max) {
            img.put_pixel(col, row, color);
        }
    }
}

fn fill_disc(img: &mut RgbImage, proj: &Projection, cx: f64, cy: f64, radius: f64, color: Rgb<u8>) {
    let r2 = radius * radius;
    for row in proj.row_range(cy - radius, cy + radius) {
        for col in proj.col_range(cx - radius, cx + radius) {
            let (x, y) = proj.pixel_to_world(col as f64, row as f64);
            let (dx, dy) = (x - cx, y - cy);
            if dx * dx + dy * dy <= r2 {
                img.put_pixel(col, row, color);
            }
        }
    }
}

fn object_color(kind: ObjectKind, status: ObjectStatus) -> Rgb<u8> {
    match status {
        ObjectStatus::Free => match kind {
            ObjectKind::Grape => palette::GRAPE_FREE,
            ObjectKind::Cherry => palette::CHERRY_FREE,
        },
        ObjectStatus::Held => palette::HELD,
        ObjectStatus::Deposited => palette::DEPOSITED,
        ObjectStatus::Dropped => palette::DROPPED,
    }
}

/// Render one camera at its native resolution. Pure in `(config, state)`.
pub fn render(config: &SimConfig, state: &WorldState, camera: CameraId) -> RgbImage {
    let proj = match camera {
        CameraId::Base => Projection::base(config),
        CameraId::Wrist => Projection::wrist(config, state.tcp.x, state.tcp.y),
    };
    let mut img = RgbImage::from_pixel(proj.width, proj.height, palette::OFF_TABLE);
    fill_rect(&mut img, &proj, &state.workspace, palette::BACKGROUND);
    fill_rect(&mut img, &proj, &state.box_region, palette::BOX);

    // Stable draw order: resting objects first, the held one on top.
    let mut order: Vec<usize> = (0..state.objects.len()).collect();
    order.sort_by_key(|&i| (state.objects[i].status == ObjectStatus::Held, i));
    for i in order {
        let o = &state.objects[i];
        let color = object_color(config.objects.kind, o.status);
        fill_disc(&mut img, &proj, o.center[0], o.center[1], 0.5 * o.diameter, color);
    }

    if camera == CameraId::Base {
        let (c, r) = proj.world_to_pixel(state.tcp.x, state.tcp.y);
        let (c, r) = (c.round() as i64, r.round() as i64);
        for d in -6i64..=6 {
            for t in -1i64..=1 {
                for (pc, pr) in [(c + d, r + t), (c + t, r + d)] {
                    if pc >= 0 && pr >= 0 && (pc as u32) < proj.width && (pr as u32) < proj.height {
                        img.put_pixel(pc as u32, pr as u32, palette::TCP_MARKER);
                    }
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::kinematics::solve_top_down;
    use crate::simworld::world::{JointState, SimObject, World};
    use std::collections::BTreeSet;

    fn colors(img: &RgbImage) -> BTreeSet<[u8; 3]> {
        img.pixels().map(|p| p.0).collect()
    }

    fn centroid(img: &RgbImage, color: Rgb<u8>) -> Option<(f64, f64, usize)> {
        let (mut sc, mut sr, mut n) = (0.0, 0.0, 0usize);
        for (c, r, p) in img.enumerate_pixels() {
            if *p == color {
                sc += c as f64;
                sr += r as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sc / n as f64, sr / n as f64, n))
    }

    #[test]
    fn empty_world_has_only_background_and_box() {
        // zero pose puts the tool at x = 0.922, outside the base view
        let w = World::new(SimConfig::default()).unwrap();
        let img = render(w.config(), w.state(), CameraId::Base);
        assert_eq!((img.width(), img.height()), (640, 480));
        let expected: BTreeSet<[u8; 3]> = [palette::BACKGROUND.0, palette::BOX.0].into();
        assert_eq!(colors(&img), expected);
    }

    #[test]
    fn disc_centre_maps_back_to_world() {
        let cfg = SimConfig::default();
        let mut w = World::new(cfg.clone()).unwrap();
        let (cx, cy) = cfg.workspace.center();
        w.set_objects(vec![SimObject {
            id: 0,
            center: [cx, cy, 0.01],
            diameter: 0.02,
            status: ObjectStatus::Free,
        }]);
        let img = render(&cfg, w.state(), CameraId::Base);
        let (col, row, n) = centroid(&img, palette::GRAPE_FREE).unwrap();
        // inverse of the documented projection, by hand:
        // col = (x - x_min) / s - 0.5, row = (y_max - y) / s - 0.5, s = 0.4 / 640
        let s = 0.40 / 640.0;
        let exp_col = (cx - 0.30) / s - 0.5;
        let exp_row = (0.15 - cy) / s - 0.5;
        assert!((col - exp_col).abs() <= 1.0, "{col} vs {exp_col}");
        assert!((row - exp_row).abs() <= 1.0, "{row} vs {exp_row}");
        // 20 mm disc is 32 px across
        let area = std::f64::consts::PI * 16.0 * 16.0;
        assert!((n as f64 - area).abs() / area < 0.05);
    }

    #[test]
    fn wrist_view_centres_grape_under_tool() {
        let cfg = SimConfig::default();
        let mut w = World::new(cfg.clone()).unwrap();
        let q = solve_top_down(&cfg.arm, 0.45, -0.05, 0.08).unwrap();
        w.set_joints(JointState::new(q, 0.0)).unwrap();
        w.set_objects(vec![SimObject {
            id: 0,
            center: [0.45, -0.05, 0.01],
            diameter: 0.02,
            status: ObjectStatus::Free,
        }]);
        let img = render(&cfg, w.state(), CameraId::Wrist);
        let (col, row, _) = centroid(&img, palette::GRAPE_FREE).unwrap();
        assert!((col - 319.5).abs() <= 2.0, "{col}");
        assert!((row - 239.5).abs() <= 2.0, "{row}");
    }

    #[test]
    fn render_is_pure() {
        let mut w = World::new(SimConfig::default()).unwrap();
        w.reset(5, 10).unwrap();
        let a = render(w.config(), w.state(), CameraId::Base);
        let b = render(w.config(), w.state(), CameraId::Base);
        assert_eq!(a.as_raw(), b.as_raw());
        let c = render(w.config(), w.state(), CameraId::Wrist);
        let d = render(w.config(), w.state(), CameraId::Wrist);
        assert_eq!(c.as_raw(), d.as_raw());
    }

    #[test]
    fn projection_roundtrip() {
        let p = Projection::base(&SimConfig::default());
        let (x, y) = p.pixel_to_world(100.0, 200.0);
        let (c, r) = p.world_to_pixel(x, y);
        assert!((c - 100.0).abs() < 1e-9 && (r - 200.0).abs() < 1e-9);
    }
}
