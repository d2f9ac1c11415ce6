use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::geometry::{Polyline, Vec2};
use crate::error::Error;

pub const ROUTE_WAYPOINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    FourWay,
    ThreeWay,
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayoutKind::FourWay => "four-way",
            LayoutKind::ThreeWay => "three-way",
        })
    }
}

impl FromStr for LayoutKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "four-way" => Ok(LayoutKind::FourWay),
            "three-way" => Ok(LayoutKind::ThreeWay),
            other => Err(Error::Config(format!("unknown layout `{other}`"))),
        }
    }
}

/// Geometry knobs for building a layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub kind: LayoutKind,
    pub box_width: f64,
    pub box_height: f64,
    pub arm_length: f64,
    /// Gap between the junction edge and a crosswalk centerline.
    pub crosswalk_offset: f64,
    pub crosswalk_width: f64,
    /// Lateral offset of the ego lane from the road centerline.
    pub lane_offset: f64,
}

impl LayoutParams {
    pub fn four_way() -> Self {
        Self {
            kind: LayoutKind::FourWay,
            box_width: 22.0,
            box_height: 22.0,
            arm_length: 15.0,
            crosswalk_offset: 1.5,
            crosswalk_width: 3.0,
            lane_offset: 3.0,
        }
    }

    pub fn three_way() -> Self {
        Self {
            kind: LayoutKind::ThreeWay,
            box_width: 26.0,
            box_height: 20.0,
            ..Self::four_way()
        }
    }

    pub fn for_kind(kind: LayoutKind) -> Self {
        match kind {
            LayoutKind::FourWay => Self::four_way(),
            LayoutKind::ThreeWay => Self::three_way(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crosswalk {
    pub a: Vec2,
    pub b: Vec2,
    pub width: f64,
}

impl Crosswalk {
    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        self.a.lerp(self.b, t)
    }

    /// True if `p` lies inside the crosswalk strip.
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        let ab = self.b - self.a;
        let len = ab.norm();
        let u = (p - self.a).dot(ab) / len;
        let v = (p - self.a).cross(ab).abs() / len;
        u >= -tol && u <= len + tol && v <= self.width / 2.0 + tol
    }
}

/// Junction centered at the origin; the ego approaches from the south and turns left into the west arm.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionLayout {
    pub params: LayoutParams,
    pub crosswalks: Vec<Crosswalk>,
    pub route: Polyline,
}

impl IntersectionLayout {
    pub fn new(params: LayoutParams) -> Self {
        let hw = params.box_width / 2.0;
        let hh = params.box_height / 2.0;
        let off = params.crosswalk_offset;
        let width = params.crosswalk_width;
        let south = Crosswalk {
            a: Vec2::new(-hw, -hh - off),
            b: Vec2::new(hw, -hh - off),
            width,
        };
        let west = Crosswalk {
            a: Vec2::new(-hw - off, -hh),
            b: Vec2::new(-hw - off, hh),
            width,
        };
        let crosswalks = match params.kind {
            LayoutKind::FourWay => vec![
                south,
                west,
                Crosswalk {
                    a: Vec2::new(-hw, hh + off),
                    b: Vec2::new(hw, hh + off),
                    width,
                },
                Crosswalk {
                    a: Vec2::new(hw + off, -hh),
                    b: Vec2::new(hw + off, hh),
                    width,
                },
            ],
            LayoutKind::ThreeWay => vec![south, west],
        };

        let lane = params.lane_offset;
        let radius = hh + lane;
        let center = Vec2::new(-hh, -hh);
        let mut pts = vec![Vec2::new(lane, -hh - params.arm_length)];
        let arc_steps = 90;
        for i in 0..=arc_steps {
            let phi = FRAC_PI_2 * i as f64 / arc_steps as f64;
            pts.push(center + Vec2::new(phi.cos(), phi.sin()) * radius);
        }
        pts.push(Vec2::new(-hw - params.arm_length, lane));
        let route = Polyline::new(pts).resample(ROUTE_WAYPOINTS);
        Self {
            params,
            crosswalks,
            route,
        }
    }

    pub fn kind(&self) -> LayoutKind {
        self.params.kind
    }

    pub fn four_way() -> Self {
        Self::new(LayoutParams::four_way())
    }

    pub fn three_way() -> Self {
        Self::new(LayoutParams::three_way())
    }

    /// World-space bounds `(min, max)` covering arms and crosswalks.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let hw = self.params.box_width / 2.0;
        let hh = self.params.box_height / 2.0;
        let a = self.params.arm_length + 2.0;
        (Vec2::new(-hw - a, -hh - a), Vec2::new(hw + a, hh + a))
    }
}
