//! Top-down PPM raster of a scene.

use super::geometry::{point_segment_distance, OrientedRect, Vec2};
use super::layout::IntersectionLayout;

const BACKGROUND: [u8; 3] = [34, 139, 34];
const ROAD: [u8; 3] = [90, 90, 90];
const CROSSWALK: [u8; 3] = [220, 220, 220];
const ROUTE: [u8; 3] = [250, 200, 40];
const EGO: [u8; 3] = [30, 90, 230];
const PEDESTRIAN: [u8; 3] = [220, 30, 30];

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<[u8; 3]>,
    origin: Vec2,
    px_per_m: f64,
}

impl Canvas {
    pub fn for_layout(layout: &IntersectionLayout, px_per_m: f64) -> Self {
        let (lo, hi) = layout.bounds();
        let width = ((hi.x - lo.x) * px_per_m).ceil() as usize;
        let height = ((hi.y - lo.y) * px_per_m).ceil() as usize;
        Self {
            width,
            height,
            pixels: vec![BACKGROUND; width * height],
            origin: lo,
            px_per_m,
        }
    }

    fn world(&self, col: usize, row: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (col as f64 + 0.5) / self.px_per_m,
            self.origin.y + (self.height as f64 - row as f64 - 0.5) / self.px_per_m,
        )
    }

    /// Colors every pixel whose center satisfies `inside`, limited to a world-space box.
    fn fill(&mut self, lo: Vec2, hi: Vec2, color: [u8; 3], inside: impl Fn(Vec2) -> bool) {
        let c0 = (((lo.x - self.origin.x) * self.px_per_m).floor().max(0.0)) as usize;
        let c1 = (((hi.x - self.origin.x) * self.px_per_m).ceil() as usize).min(self.width);
        let top = self.origin.y + self.height as f64 / self.px_per_m;
        let r0 = (((top - hi.y) * self.px_per_m).floor().max(0.0)) as usize;
        let r1 = (((top - lo.y) * self.px_per_m).ceil() as usize).min(self.height);
        for row in r0..r1 {
            for col in c0..c1 {
                if inside(self.world(col, row)) {
                    self.pixels[row * self.width + col] = color;
                }
            }
        }
    }

    pub fn draw_layout(&mut self, layout: &IntersectionLayout) {
        let hw = layout.params.box_width / 2.0;
        let hh = layout.params.box_height / 2.0;
        let (lo, hi) = layout.bounds();
        let road = 2.0 * layout.params.lane_offset + 2.0;
        let four = layout.crosswalks.len() == 4;
        self.fill(lo, hi, ROAD, |p| {
            let in_box = p.x.abs() <= hw && p.y.abs() <= hh;
            let vertical = p.x.abs() <= road && (p.y <= 0.0 || four);
            let horizontal = p.y.abs() <= road;
            in_box || vertical || horizontal
        });
        for cw in layout.crosswalks.clone() {
            let pad = Vec2::new(cw.width, cw.width);
            let a = Vec2::new(cw.a.x.min(cw.b.x), cw.a.y.min(cw.b.y)) - pad;
            let b = Vec2::new(cw.a.x.max(cw.b.x), cw.a.y.max(cw.b.y)) + pad;
            self.fill(a, b, CROSSWALK, |p| cw.contains(p, 0.0));
        }
        let pts = layout.route.points().to_vec();
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let lo = Vec2::new(a.x.min(b.x) - 1.0, a.y.min(b.y) - 1.0);
            let hi = Vec2::new(a.x.max(b.x) + 1.0, a.y.max(b.y) + 1.0);
            self.fill(lo, hi, ROUTE, |p| point_segment_distance(p, a, b) < 0.12);
        }
    }

    pub fn draw_rect(&mut self, rect: &OrientedRect) {
        let r = rect.length.hypot(rect.width) / 2.0;
        let c = rect.center;
        let rect = *rect;
        self.fill(c - Vec2::new(r, r), c + Vec2::new(r, r), EGO, move |p| {
            rect.distance_to(p) == 0.0
        });
    }

    pub fn draw_disc(&mut self, center: Vec2, radius: f64) {
        let r = Vec2::new(radius, radius);
        self.fill(center - r, center + r, PEDESTRIAN, |p| p.dist(center) <= radius);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.pixels {
            out.extend_from_slice(px);
        }
        out
    }
}

/// One frame: layout, ego footprint and pedestrian positions.
pub fn render_frame(layout: &IntersectionLayout, ego: &OrientedRect, pedestrians: &[Vec2], px_per_m: f64) -> Vec<u8> {
    let mut c = Canvas::for_layout(layout, px_per_m);
    c.draw_layout(layout);
    c.draw_rect(ego);
    for &p in pedestrians {
        c.draw_disc(p, 0.4);
    }
    c.to_ppm()
}
