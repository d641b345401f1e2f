//! Trajectories, canonical normalization and sliding-window chunking.
//!
//! Canonical frame: the present (last past point) sits at the origin and the
//! final past displacement points along +Y, so all futures start at (0, 0)
//! heading upward.

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.5;
const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// A timestamped 2D track sampled at a constant period.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: String,
    pub points: Vec<TimedPoint>,
    pub sample_period: f64,
    /// Key of the semantic map covering this track, when one exists.
    pub map_ref: Option<String>,
}

impl Trajectory {
    pub fn new(track_id: String, points: Vec<TimedPoint>, sample_period: f64) -> Result<Self> {
        if sample_period <= 0.0 {
            return Err(Error::Input("sample_period must be positive".into()));
        }
        for w in points.windows(2) {
            let dt = w[1].t - w[0].t;
            if (dt - sample_period).abs() > TIME_TOLERANCE {
                return Err(Error::Input(format!(
                    "timestamps must increase by the sample period {sample_period}, got step {dt}"
                )));
            }
        }
        Ok(Trajectory {
            track_id,
            points,
            sample_period,
            map_ref: None,
        })
    }

    pub fn positions(&self) -> Vec<Point> {
        self.points.iter().map(|p| Point::new(p.x, p.y)).collect()
    }
}

/// Rigid transform into the canonical frame: p' = R(rotation) (p + translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub translation: (f64, f64),
    pub rotation: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            translation: (0.0, 0.0),
            rotation: 0.0,
        }
    }

    pub fn to_canonical(&self, p: Point) -> Point {
        let (sin, cos) = self.rotation.sin_cos();
        let x = p.x + self.translation.0;
        let y = p.y + self.translation.1;
        Point::new(cos * x - sin * y, sin * x + cos * y)
    }

    pub fn to_world(&self, p: Point) -> Point {
        let (sin, cos) = self.rotation.sin_cos();
        // inverse rotation, then undo translation
        let x = cos * p.x + sin * p.y;
        let y = -sin * p.x + cos * p.y;
        Point::new(x - self.translation.0, y - self.translation.1)
    }
}

/// One normalized past/future pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub source_id: String,
    pub past: Vec<Point>,
    pub future: Vec<Point>,
    pub map_ref: Option<String>,
    pub transform: NormalizationTransform,
    /// Set when every past displacement was zero and no heading exists.
    pub stationary: bool,
}

impl Sample {
    pub fn past_flat(&self) -> Vec<f64> {
        flat(&self.past)
    }

    pub fn future_flat(&self) -> Vec<f64> {
        flat(&self.future)
    }

    pub fn future_world(&self) -> Vec<Point> {
        denormalize(&self.future, &self.transform)
    }

    pub fn past_world(&self) -> Vec<Point> {
        denormalize(&self.past, &self.transform)
    }
}

pub fn flat(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

pub fn unflat(coords: &[f64]) -> Vec<Point> {
    coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect()
}

/// Normalize a raw past/future pair into the canonical frame.
///
/// The heading is the last past displacement; when that is zero the most
/// recent nonzero displacement is used, and when all displacements are zero
/// the rotation is zero and the sample is flagged stationary.
pub fn normalize(source_id: &str, raw_past: &[Point], raw_future: &[Point]) -> Result<Sample> {
    if raw_past.len() < 2 {
        return Err(Error::Input(format!(
            "normalize requires at least 2 past points, got {}",
            raw_past.len()
        )));
    }
    let present = *raw_past.last().unwrap();
    let mut heading = None;
    for w in raw_past.windows(2).rev() {
        let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
        if dx != 0.0 || dy != 0.0 {
            heading = Some((dx, dy));
            break;
        }
    }
    let (rotation, stationary) = match heading {
        Some((dx, dy)) => (std::f64::consts::FRAC_PI_2 - dy.atan2(dx), false),
        None => (0.0, true),
    };
    let transform = NormalizationTransform {
        translation: (-present.x, -present.y),
        rotation,
    };
    Ok(Sample {
        source_id: source_id.to_string(),
        past: raw_past.iter().map(|&p| transform.to_canonical(p)).collect(),
        future: raw_future.iter().map(|&p| transform.to_canonical(p)).collect(),
        map_ref: None,
        transform,
        stationary,
    })
}

/// Map canonical-frame points back to the world frame.
pub fn denormalize(points: &[Point], transform: &NormalizationTransform) -> Vec<Point> {
    points.iter().map(|&p| transform.to_world(p)).collect()
}

/// Cut a trajectory into normalized samples with windows of `past_len`
/// past and `future_len` future steps, advancing by `stride` steps.
/// Too-short trajectories yield an empty list.
pub fn sliding_window_chunks(
    trajectory: &Trajectory,
    past_len: usize,
    future_len: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    if past_len < 2 || future_len == 0 || stride == 0 {
        return Err(Error::Input(
            "chunking requires past_len >= 2, future_len >= 1, stride >= 1".into(),
        ));
    }
    let pos = trajectory.positions();
    let window = past_len + future_len;
    if pos.len() < window {
        return Ok(Vec::new());
    }
    let count = (pos.len() - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        let past = &pos[start..start + past_len];
        let future = &pos[start + past_len..start + window];
        let mut sample = normalize(&format!("{}#{}", trajectory.track_id, start), past, future)?;
        sample.map_ref = trajectory.map_ref.clone();
        out.push(sample);
    }
    Ok(out)
}
