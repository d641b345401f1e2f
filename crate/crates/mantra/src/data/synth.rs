//! Deterministic synthetic scenario generator: straight tracks, constant-turn
//! arcs and junctions with two or three future branches sharing the same past
//! prefix, each scenario paired with a road/off-road semantic map.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::map::{rasterize_roads, SemanticMap};
use crate::data::trajectory::{sliding_window_chunks, Point, Sample, TimedPoint, Trajectory};
use crate::error::{Error, Result};

/// Radius of junction turn-off arcs, meters.
const TURN_RADIUS: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_straight: usize,
    pub n_arc: usize,
    pub n_junction: usize,
    /// Noisy instances emitted per scenario template.
    pub duplicates: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Relative speed jitter applied per duplicate.
    pub speed_jitter: f64,
    pub noise_sigma: f64,
    pub sample_period: f64,
    pub past_len: usize,
    pub future_len: usize,
    /// 2 = left/right turn, 3 = left/straight/right.
    pub junction_branches: usize,
    /// Probability of the first branch; the rest is split evenly.
    pub branch_prob: f64,
    pub map_resolution: f64,
    pub road_half_width: f64,
    pub with_maps: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_straight: 0,
            n_arc: 0,
            n_junction: 0,
            duplicates: 1,
            speed_min: 2.0,
            speed_max: 4.0,
            speed_jitter: 0.1,
            noise_sigma: 0.05,
            sample_period: 0.5,
            past_len: 4,
            future_len: 8,
            junction_branches: 2,
            branch_prob: 0.5,
            map_resolution: 0.5,
            road_half_width: 2.5,
            with_maps: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_straight + self.n_arc + self.n_junction == 0 {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        if self.duplicates == 0 {
            return Err(Error::Config("duplicates must be >= 1".into()));
        }
        if self.speed_min <= 0.0 || self.speed_max < self.speed_min {
            return Err(Error::Config("speed range must be positive and ordered".into()));
        }
        if self.noise_sigma < 0.0 || self.speed_jitter < 0.0 {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        if self.sample_period <= 0.0 {
            return Err(Error::Config("sample_period must be positive".into()));
        }
        if self.past_len < 2 || self.future_len == 0 {
            return Err(Error::Config("need past_len >= 2 and future_len >= 1".into()));
        }
        if !(2..=3).contains(&self.junction_branches) {
            return Err(Error::Config("junction_branches must be 2 or 3".into()));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return Err(Error::Config("branch_prob must lie in [0, 1]".into()));
        }
        if self.map_resolution <= 0.0 || self.road_half_width <= 0.0 {
            return Err(Error::Config("map geometry must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticDataset {
    pub trajectories: Vec<Trajectory>,
    pub maps: BTreeMap<String, SemanticMap>,
}

impl SyntheticDataset {
    /// Chunk every trajectory into normalized samples.
    pub fn samples(&self, past_len: usize, future_len: usize, stride: usize) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for t in &self.trajectories {
            out.extend(sliding_window_chunks(t, past_len, future_len, stride)?);
        }
        Ok(out)
    }
}

/// One scenario template: the noise-free geometry all duplicates share.
#[derive(Debug, Clone)]
struct Template {
    id: String,
    start: Point,
    heading: f64,
    speed: f64,
    /// Signed curvature path parameter: 0 for straight, v/r for arcs.
    kind: TemplateKind,
}

#[derive(Debug, Clone)]
enum TemplateKind {
    Straight,
    Arc { turn_rate: f64 },
    Junction { branches: usize },
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut templates = Vec::new();
    for i in 0..config.n_straight {
        templates.push(Template {
            id: format!("straight_{i:04}"),
            start: random_start(&mut rng),
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
            speed: rng.gen_range(config.speed_min..=config.speed_max),
            kind: TemplateKind::Straight,
        });
    }
    for i in 0..config.n_arc {
        let radius = rng.gen_range(8.0..25.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let speed = rng.gen_range(config.speed_min..=config.speed_max);
        templates.push(Template {
            id: format!("arc_{i:04}"),
            start: random_start(&mut rng),
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
            speed,
            kind: TemplateKind::Arc {
                turn_rate: sign * speed / radius,
            },
        });
    }
    for i in 0..config.n_junction {
        templates.push(Template {
            id: format!("junc_{i:04}"),
            start: random_start(&mut rng),
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
            speed: rng.gen_range(config.speed_min..=config.speed_max),
            kind: TemplateKind::Junction {
                branches: config.junction_branches,
            },
        });
    }

    let mut dataset = SyntheticDataset::default();
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    for tpl in &templates {
        if config.with_maps {
            let lines = template_polylines(tpl, config, tpl.speed);
            dataset.maps.insert(
                tpl.id.clone(),
                rasterize_roads(
                    &lines,
                    config.map_resolution,
                    config.road_half_width,
                    config.road_half_width + 2.0,
                )?,
            );
        }
        for d in 0..config.duplicates {
            let jitter = if config.speed_jitter > 0.0 {
                rng.gen_range(-config.speed_jitter..=config.speed_jitter)
            } else {
                0.0
            };
            let speed = tpl.speed * (1.0 + jitter);
            let branch = match &tpl.kind {
                TemplateKind::Junction { branches } => {
                    Some(pick_branch(&mut rng, *branches, config.branch_prob))
                }
                _ => None,
            };
            let mut pts = template_track(tpl, config, speed, branch);
            if config.noise_sigma > 0.0 {
                for p in &mut pts {
                    p.x += config.noise_sigma * normal.sample(&mut rng);
                    p.y += config.noise_sigma * normal.sample(&mut rng);
                }
            }
            let id = match branch {
                Some(b) if config.duplicates > 1 => format!("{}_d{d:03}_b{b}", tpl.id),
                Some(b) => format!("{}_b{b}", tpl.id),
                None if config.duplicates > 1 => format!("{}_d{d:03}", tpl.id),
                None => tpl.id.clone(),
            };
            let timed = pts
                .iter()
                .enumerate()
                .map(|(i, p)| TimedPoint {
                    t: i as f64 * config.sample_period,
                    x: p.x,
                    y: p.y,
                })
                .collect();
            let mut traj = Trajectory::new(id, timed, config.sample_period)?;
            if config.with_maps {
                traj.map_ref = Some(tpl.id.clone());
            }
            dataset.trajectories.push(traj);
        }
    }
    Ok(dataset)
}

fn random_start(rng: &mut impl Rng) -> Point {
    Point::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0))
}

fn pick_branch(rng: &mut impl Rng, branches: usize, first_prob: f64) -> usize {
    if rng.gen_bool(first_prob) {
        0
    } else if branches == 2 {
        1
    } else {
        rng.gen_range(1..branches)
    }
}

/// Noise-free position `arc_len` meters along a constant-curvature path.
fn along_path(start: Point, heading: f64, turn_rate_per_meter: f64, arc_len: f64) -> Point {
    if turn_rate_per_meter.abs() < 1e-12 {
        Point::new(
            start.x + arc_len * heading.cos(),
            start.y + arc_len * heading.sin(),
        )
    } else {
        let k = turn_rate_per_meter;
        let th = heading + k * arc_len;
        Point::new(
            start.x + (th.sin() - heading.sin()) / k,
            start.y - (th.cos() - heading.cos()) / k,
        )
    }
}

/// A junction branch path starting at the junction point: a quarter-turn arc
/// of `TURN_RADIUS` (or straight through for the middle branch), then straight.
fn branch_point(junction: Point, heading: f64, branch_sign: f64, arc_len: f64) -> Point {
    if branch_sign == 0.0 {
        return along_path(junction, heading, 0.0, arc_len);
    }
    let quarter = std::f64::consts::FRAC_PI_2 * TURN_RADIUS;
    let k = branch_sign / TURN_RADIUS;
    if arc_len <= quarter {
        along_path(junction, heading, k, arc_len)
    } else {
        let corner = along_path(junction, heading, k, quarter);
        let out_heading = heading + branch_sign * std::f64::consts::FRAC_PI_2;
        along_path(corner, out_heading, 0.0, arc_len - quarter)
    }
}

fn branch_signs(branches: usize) -> Vec<f64> {
    if branches == 2 {
        vec![1.0, -1.0]
    } else {
        vec![1.0, 0.0, -1.0]
    }
}

/// Noise-free track of `past_len + future_len` points at `speed`.
fn template_track(
    tpl: &Template,
    config: &SynthConfig,
    speed: f64,
    branch: Option<usize>,
) -> Vec<Point> {
    let dt = config.sample_period;
    let n = config.past_len + config.future_len;
    let step = speed * dt;
    match &tpl.kind {
        TemplateKind::Straight => (0..n)
            .map(|i| along_path(tpl.start, tpl.heading, 0.0, i as f64 * step))
            .collect(),
        TemplateKind::Arc { turn_rate } => {
            let k = turn_rate / tpl.speed; // curvature is geometry, not speed
            (0..n)
                .map(|i| along_path(tpl.start, tpl.heading, k, i as f64 * step))
                .collect()
        }
        TemplateKind::Junction { branches } => {
            let sign = branch_signs(*branches)[branch.unwrap_or(0)];
            let junction = along_path(
                tpl.start,
                tpl.heading,
                0.0,
                (config.past_len - 1) as f64 * step,
            );
            (0..n)
                .map(|i| {
                    if i < config.past_len {
                        along_path(tpl.start, tpl.heading, 0.0, i as f64 * step)
                    } else {
                        let s = (i - (config.past_len - 1)) as f64 * step;
                        branch_point(junction, tpl.heading, sign, s)
                    }
                })
                .collect()
        }
    }
}

/// Noise-free centerlines for map rasterization (all branches for junctions).
fn template_polylines(tpl: &Template, config: &SynthConfig, speed: f64) -> Vec<Vec<Point>> {
    match &tpl.kind {
        TemplateKind::Junction { branches } => branch_signs(*branches)
            .iter()
            .enumerate()
            .map(|(b, _)| template_track(tpl, config, speed, Some(b)))
            .collect(),
        _ => vec![template_track(tpl, config, speed, None)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_kinematics_exact() {
        let config = SynthConfig {
            n_straight: 1,
            noise_sigma: 0.0,
            speed_min: 10.0,
            speed_max: 10.0,
            speed_jitter: 0.0,
            with_maps: false,
            ..Default::default()
        };
        let ds = generate(&config, 1).unwrap();
        assert_eq!(ds.trajectories.len(), 1);
        let pos = ds.trajectories[0].positions();
        for w in pos.windows(2) {
            assert!((w[0].dist(&w[1]) - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn determinism_same_seed() {
        let config = SynthConfig {
            n_straight: 2,
            n_arc: 2,
            n_junction: 2,
            duplicates: 3,
            ..Default::default()
        };
        let a = generate(&config, 99).unwrap();
        let b = generate(&config, 99).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.maps, b.maps);
        let c = generate(&config, 100).unwrap();
        assert_ne!(a.trajectories, c.trajectories);
    }

    #[test]
    fn invalid_configs_rejected() {
        let zero = SynthConfig {
            ..Default::default()
        };
        assert!(generate(&zero, 1).is_err());
        let bad_speed = SynthConfig {
            n_straight: 1,
            speed_min: -1.0,
            ..Default::default()
        };
        assert!(generate(&bad_speed, 1).is_err());
    }

    #[test]
    fn branch_counts_binomial() {
        let config = SynthConfig {
            n_junction: 1,
            duplicates: 1000,
            branch_prob: 0.5,
            with_maps: false,
            ..Default::default()
        };
        let ds = generate(&config, 7).unwrap();
        let b0 = ds
            .trajectories
            .iter()
            .filter(|t| t.track_id.ends_with("_b0"))
            .count();
        // 3 sigma of Binomial(1000, 0.5)
        let sigma = (1000.0f64 * 0.25).sqrt();
        assert!((b0 as f64 - 500.0).abs() < 3.0 * sigma, "b0 = {b0}");
    }

    #[test]
    fn junction_branches_share_past_prefix() {
        let config = SynthConfig {
            n_junction: 1,
            duplicates: 40,
            noise_sigma: 0.0,
            speed_jitter: 0.0,
            with_maps: true,
            ..Default::default()
        };
        let ds = generate(&config, 3).unwrap();
        let past: Vec<Vec<Point>> = ds
            .trajectories
            .iter()
            .map(|t| t.positions()[..config.past_len].to_vec())
            .collect();
        for p in &past[1..] {
            for (a, b) in p.iter().zip(&past[0]) {
                assert!(a.dist(b) < 1e-9);
            }
        }
        // both branches appear and diverge
        let b0 = ds.trajectories.iter().find(|t| t.track_id.ends_with("_b0")).unwrap();
        let b1 = ds.trajectories.iter().find(|t| t.track_id.ends_with("_b1")).unwrap();
        let e0 = *b0.positions().last().unwrap();
        let e1 = *b1.positions().last().unwrap();
        assert!(e0.dist(&e1) > 10.0);
        // the map covers both branch endpoints as road
        let map = &ds.maps["junc_0000"];
        assert!(map.is_road(e0) && map.is_road(e1));
    }
}
