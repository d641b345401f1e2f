//! Semantic occupancy maps: a (channels, H, W) grid of class indicators with
//! a world geo-reference. Channel 0 is road, channel 1 off-road.

use crate::data::trajectory::Point;
use crate::error::{Error, Result};

pub const ROAD_CHANNEL: usize = 0;
pub const CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major (channels, height, width) class indicators.
    pub grid: Vec<f64>,
    /// Meters per cell.
    pub resolution: f64,
    /// World coordinate of the center of cell (row 0, col 0).
    pub origin: (f64, f64),
}

impl SemanticMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        grid: Vec<f64>,
        resolution: f64,
        origin: (f64, f64),
    ) -> Result<Self> {
        if resolution <= 0.0 {
            return Err(Error::Input("map resolution must be positive".into()));
        }
        if grid.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "map grid length {} != {channels}x{height}x{width}",
                grid.len()
            )));
        }
        Ok(SemanticMap {
            channels,
            height,
            width,
            grid,
            resolution,
            origin,
        })
    }

    /// Fractional grid coordinates (col, row) of a world point.
    pub fn world_to_grid(&self, p: Point) -> (f64, f64) {
        (
            (p.x - self.origin.0) / self.resolution,
            (p.y - self.origin.1) / self.resolution,
        )
    }

    pub fn cell(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.grid[(channel * self.height + row) * self.width + col]
    }

    /// True when the nearest cell to `p` exists and is road.
    pub fn is_road(&self, p: Point) -> bool {
        let (gx, gy) = self.world_to_grid(p);
        let col = gx.round() as isize;
        let row = gy.round() as isize;
        if col < 0 || row < 0 || col >= self.width as isize || row >= self.height as isize {
            return false;
        }
        self.cell(ROAD_CHANNEL, row as usize, col as usize) > 0.5
    }
}

/// Rasterize road corridors of half-width `half_width` around the given
/// polylines into a two-channel (road, off-road) map at `resolution`,
/// covering the polylines' bounding box plus `margin` meters.
pub fn rasterize_roads(
    polylines: &[Vec<Point>],
    resolution: f64,
    half_width: f64,
    margin: f64,
) -> Result<SemanticMap> {
    let all: Vec<&Point> = polylines.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::Input("rasterize_roads: no points".into()));
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &all {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    xmin -= margin;
    ymin -= margin;
    xmax += margin;
    ymax += margin;
    let width = ((xmax - xmin) / resolution).ceil() as usize + 1;
    let height = ((ymax - ymin) / resolution).ceil() as usize + 1;
    let origin = (xmin, ymin);
    let mut grid = vec![0.0; CHANNELS * height * width];
    for row in 0..height {
        for col in 0..width {
            let p = Point::new(
                origin.0 + col as f64 * resolution,
                origin.1 + row as f64 * resolution,
            );
            let road = polylines
                .iter()
                .any(|line| dist_to_polyline(p, line) <= half_width);
            grid[(ROAD_CHANNEL * height + row) * width + col] = if road { 1.0 } else { 0.0 };
            grid[(1 * height + row) * width + col] = if road { 0.0 } else { 1.0 };
        }
    }
    SemanticMap::new(CHANNELS, height, width, grid, resolution, origin)
}

fn dist_to_polyline(p: Point, line: &[Point]) -> f64 {
    if line.len() == 1 {
        return p.dist(&line[0]);
    }
    let mut best = f64::MAX;
    for w in line.windows(2) {
        best = best.min(dist_to_segment(p, w[0], w[1]));
    }
    best
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return p.dist(&a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    p.dist(&Point::new(a.x + t * vx, a.y + t * vy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_corridor_covers_centerline() {
        let line = vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)];
        let map = rasterize_roads(&[line.clone()], 0.5, 2.0, 4.0).unwrap();
        assert!(map.is_road(Point::new(5.0, 0.0)));
        assert!(map.is_road(Point::new(5.0, 1.5)));
        assert!(!map.is_road(Point::new(5.0, 3.5)));
        // off-road channel is the complement
        for row in 0..map.height {
            for col in 0..map.width {
                assert_eq!(map.cell(0, row, col) + map.cell(1, row, col), 1.0);
            }
        }
    }

    #[test]
    fn world_grid_round_trip() {
        let map = rasterize_roads(
            &[vec![Point::new(-3.0, 2.0), Point::new(4.0, 2.0)]],
            0.5,
            1.0,
            2.0,
        )
        .unwrap();
        let (gx, gy) = map.world_to_grid(Point::new(map.origin.0, map.origin.1));
        assert!(gx.abs() < 1e-12 && gy.abs() < 1e-12);
        let (gx, _) = map.world_to_grid(Point::new(map.origin.0 + 1.0, map.origin.1));
        assert!((gx - 2.0).abs() < 1e-12);
    }
}
