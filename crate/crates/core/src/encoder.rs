//! Ego-aligned ROI grid: occupancy, relative speed and relative heading layers.

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::sim::{wrap_180, EgoState, ObservedPedestrian, Vec2, EGO_LENGTH, EGO_WIDTH};

pub const FREE: f32 = 0.0;
pub const PEDESTRIAN: f32 = 0.5;
pub const EGO: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    /// Extent along the ego heading (m).
    pub length: f64,
    /// Lateral extent (m).
    pub width: f64,
    pub cell_length: f64,
    pub cell_width: f64,
}

impl Default for RoiSpec {
    fn default() -> Self {
        Self {
            length: 20.0,
            width: 15.0,
            cell_length: 0.25,
            cell_width: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiCorners {
    pub rear_right: Vec2,
    pub rear_left: Vec2,
    pub front_right: Vec2,
    pub front_left: Vec2,
}

impl RoiSpec {
    /// Grid with `rows x cols` cells over the default 20 m x 15 m region.
    pub fn with_grid(rows: usize, cols: usize) -> Self {
        let base = Self::default();
        Self {
            cell_length: base.length / rows as f64,
            cell_width: base.width / cols as f64,
            ..base
        }
    }

    pub fn rows(&self) -> usize {
        (self.length / self.cell_length).round() as usize
    }

    pub fn cols(&self) -> usize {
        (self.width / self.cell_width).round() as usize
    }

    fn ahead(&self) -> f64 {
        0.8 * self.length
    }

    /// Cell holding the ego center of gravity.
    pub fn ego_cell(&self) -> (usize, usize) {
        (
            (self.ahead() / self.cell_length).floor() as usize,
            (self.width / 2.0 / self.cell_width).floor() as usize,
        )
    }

    /// Row and column ranges marked as ego.
    pub fn ego_cells(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (r, c) = self.ego_cell();
        let nr = (EGO_LENGTH / self.cell_length).round() as usize;
        let nc = (EGO_WIDTH / self.cell_width).round() as usize;
        (r - nr / 2..r - nr / 2 + nr, c - nc / 2..c - nc / 2 + nc)
    }
}

/// World-frame corners of the ROI: `4L/5` ahead of the ego, `L/5` behind, `W/2` to each side.
pub fn roi_vertices(ego: &EgoState, spec: &RoiSpec) -> RoiCorners {
    let f = Vec2::from_heading(ego.heading);
    let right = Vec2::new(f.y, -f.x);
    let c = ego.position;
    let front = c + f * spec.ahead();
    let rear = c - f * (spec.length / 5.0);
    let half = right * (spec.width / 2.0);
    RoiCorners {
        rear_right: rear + half,
        rear_left: rear - half,
        front_right: front + half,
        front_left: front - half,
    }
}

/// Cell containing `point`, or `None` outside the ROI. Row 0 is the far-forward edge,
/// column 0 the left edge; each cell is half-open toward the rear-right.
pub fn world_to_cell(point: Vec2, ego: &EgoState, spec: &RoiSpec) -> Option<(usize, usize)> {
    let f = Vec2::from_heading(ego.heading);
    let d = point - ego.position;
    let forward = d.dot(f);
    let left = d.dot(f.perp());
    let row = ((spec.ahead() - forward) / spec.cell_length).floor();
    let col = ((spec.width / 2.0 - left) / spec.cell_width).floor();
    if row < 0.0 || col < 0.0 || row >= spec.rows() as f64 || col >= spec.cols() as f64 {
        return None;
    }
    Some((row as usize, col as usize))
}

/// Three `rows x cols` layers, channels first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl StateTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; 3 * rows * cols],
        }
    }

    pub fn get(&self, layer: usize, row: usize, col: usize) -> f32 {
        self.data[(layer * self.rows + row) * self.cols + col]
    }

    fn set(&mut self, layer: usize, row: usize, col: usize, v: f32) {
        self.data[(layer * self.rows + row) * self.cols + col] = v;
    }

    pub fn layer(&self, layer: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[layer * n..(layer + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.rows, self.cols], self.data.clone()).expect("consistent shape")
    }

    pub fn count(&self, layer: usize, value: f32) -> usize {
        self.layer(layer).iter().filter(|&&v| v == value).count()
    }
}

/// Marks the ego footprint and every in-ROI pedestrian. When pedestrians share a
/// cell the one nearest the ego wins; pedestrians never overwrite ego cells.
pub fn encode_state_tensor(pedestrians: &[ObservedPedestrian], ego: &EgoState, spec: &RoiSpec) -> StateTensor {
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut s = StateTensor::zeros(rows, cols);
    let (er, ec) = spec.ego_cells();
    for r in er.clone() {
        for c in ec.clone() {
            s.set(0, r, c, EGO);
        }
    }
    let mut owner: Vec<Option<f64>> = vec![None; rows * cols];
    for p in pedestrians {
        let Some((r, c)) = world_to_cell(p.position, ego, spec) else {
            continue;
        };
        if er.contains(&r) && ec.contains(&c) {
            continue;
        }
        let dist = p.position.dist(ego.position);
        let slot = &mut owner[r * cols + c];
        if matches!(*slot, Some(d) if d <= dist) {
            continue;
        }
        *slot = Some(dist);
        s.set(0, r, c, PEDESTRIAN);
        s.set(1, r, c, (ego.speed - p.speed) as f32);
        s.set(2, r, c, wrap_180(p.heading - ego.heading) as f32);
    }
    s
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ego(x: f64, y: f64, heading: f64, speed: f64) -> EgoState {
        EgoState {
            position: Vec2::new(x, y),
            heading,
            speed,
            progress: 0.0,
            route_index: 0,
        }
    }

    fn ped(p: Vec2, speed: f64, heading: f64) -> ObservedPedestrian {
        ObservedPedestrian {
            id: 0,
            position: p,
            speed,
            heading,
        }
    }

    #[test]
    fn default_grid_geometry() {
        let s = RoiSpec::default();
        assert_eq!((s.rows(), s.cols()), (80, 60));
        assert_eq!(s.ego_cell(), (64, 30));
        let desk = RoiSpec::with_grid(40, 30);
        assert_eq!((desk.rows(), desk.cols()), (40, 30));
        assert_eq!(desk.ego_cell(), (32, 15));
    }

    #[test]
    fn roi_corners() {
        let s = RoiSpec::default();
        let c = roi_vertices(&ego(0.0, 0.0, 0.0, 0.0), &s);
        assert_eq!(c.rear_right, Vec2::new(-4.0, -7.5));
        assert_eq!(c.front_left, Vec2::new(16.0, 7.5));
        let c = roi_vertices(&ego(0.0, 0.0, 90.0, 0.0), &s);
        assert!(c.rear_right.dist(Vec2::new(7.5, -4.0)) < 1e-12);
    }

    proptest! {
        #[test]
        fn corners_form_the_roi_rectangle(x in -50.0f64..50.0, y in -50.0f64..50.0, h in 0.0f64..360.0) {
            let s = RoiSpec::default();
            let c = roi_vertices(&ego(x, y, h, 0.0), &s);
            prop_assert!((c.rear_right.dist(c.front_right) - 20.0).abs() < 1e-9);
            prop_assert!((c.rear_right.dist(c.rear_left) - 15.0).abs() < 1e-9);
            prop_assert!((c.rear_right.dist(c.front_left) - 20f64.hypot(15.0)).abs() < 1e-9);
            prop_assert!((c.front_right.dist(c.rear_left) - 20f64.hypot(15.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_lookup() {
        let s = RoiSpec::default();
        let e = ego(3.0, -2.0, 37.0, 0.0);
        assert_eq!(world_to_cell(e.position, &e, &s), Some((64, 30)));
        let far = e.position + Vec2::from_heading(37.0) * 25.0;
        assert_eq!(world_to_cell(far, &e, &s), None);
        let e0 = ego(0.0, 0.0, 0.0, 0.0);
        assert_eq!(world_to_cell(Vec2::new(16.0, 0.0), &e0, &s), Some((0, 30)));
        assert_eq!(world_to_cell(Vec2::new(16.0, 7.5), &e0, &s), Some((0, 0)));
        assert_eq!(world_to_cell(Vec2::new(-4.0, 0.0), &e0, &s), None);
        assert_eq!(world_to_cell(Vec2::new(15.75, 0.0), &e0, &s), Some((1, 30)));
    }

    #[test]
    fn empty_scene_marks_only_the_ego() {
        let s = RoiSpec::default();
        let t = encode_state_tensor(&[], &ego(0.0, 0.0, 0.0, 2.0), &s);
        assert_eq!(t.count(0, EGO), 144);
        assert_eq!(t.count(0, FREE), 80 * 60 - 144);
        assert!(t.layer(1).iter().all(|&v| v == 0.0));
        let desk = RoiSpec::with_grid(40, 30);
        assert_eq!(
            encode_state_tensor(&[], &ego(0.0, 0.0, 0.0, 2.0), &desk).count(0, EGO),
            36
        );
    }

    #[test]
    fn pedestrian_ahead_relative_values() {
        let s = RoiSpec::default();
        let e = ego(0.0, 0.0, 0.0, 3.0);
        let t = encode_state_tensor(&[ped(Vec2::new(5.0, 0.1), 0.0, 90.0)], &e, &s);
        let (r, c) = world_to_cell(Vec2::new(5.0, 0.1), &e, &s).unwrap();
        assert_eq!(t.get(0, r, c), PEDESTRIAN);
        assert_eq!(t.get(1, r, c), 3.0);
        assert_eq!(t.get(2, r, c), 90.0);
        assert_eq!(t.count(0, PEDESTRIAN), 1);
    }

    #[test]
    fn outside_pedestrian_changes_nothing() {
        let s = RoiSpec::default();
        let e = ego(0.0, 0.0, 0.0, 3.0);
        let a = encode_state_tensor(&[], &e, &s);
        let b = encode_state_tensor(&[ped(Vec2::new(30.0, 0.0), 1.0, 90.0)], &e, &s);
        assert_eq!(a, b);
    }

    #[test]
    fn nearest_pedestrian_wins_shared_cell() {
        let s = RoiSpec::default();
        let e = ego(0.0, 0.0, 0.0, 0.0);
        let near = ped(Vec2::new(5.01, 0.01), 1.0, 10.0);
        let far = ped(Vec2::new(5.2, 0.2), 1.5, 20.0);
        for order in [[near, far], [far, near]] {
            let t = encode_state_tensor(&order, &e, &s);
            let (r, c) = world_to_cell(near.position, &e, &s).unwrap();
            assert_eq!(t.get(2, r, c), 10.0);
        }
    }

    #[test]
    fn pedestrians_do_not_overwrite_ego() {
        let s = RoiSpec::default();
        let e = ego(0.0, 0.0, 0.0, 0.0);
        let t = encode_state_tensor(&[ped(Vec2::new(0.5, 0.5), 1.0, 0.0)], &e, &s);
        assert_eq!(t.count(0, EGO), 144);
        assert_eq!(t.count(0, PEDESTRIAN), 0);
    }
}
