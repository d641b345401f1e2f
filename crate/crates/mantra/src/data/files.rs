//! Text formats for datasets and semantic maps.
//!
//! Dataset: `# mantra-dataset <config-hash>` followed by line-delimited
//! `track_id,t,x,y` records, one file per split. Map: `# mantra-map <hash>`,
//! a `MAP C H W resolution origin_x origin_y` header, then row-major cells.

use std::fs;
use std::path::Path;

use crate::data::map::SemanticMap;
use crate::data::trajectory::{TimedPoint, Trajectory};
use crate::error::{Error, Result};

/// Check a `# mantra-<kind> <hash>` header line against an expected hash.
fn check_hash(line: &str, kind: &str, expected: Option<&str>) -> Result<String> {
    let prefix = format!("# mantra-{kind} ");
    let found = line
        .strip_prefix(&prefix)
        .ok_or_else(|| Error::Format(format!("missing `{prefix}<hash>` header")))?
        .trim()
        .to_string();
    if let Some(exp) = expected {
        if exp != found {
            return Err(Error::HashMismatch {
                expected: exp.to_string(),
                found,
            });
        }
    }
    Ok(found)
}

pub fn save_dataset(path: &Path, trajectories: &[Trajectory], config_hash: &str) -> Result<()> {
    let mut out = format!("# mantra-dataset {config_hash}\n");
    for t in trajectories {
        for p in &t.points {
            out.push_str(&format!("{},{},{},{}\n", t.track_id, p.t, p.x, p.y));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a split. Tracks are grouped by id in file order; the sample period is
/// inferred from the first pair of timestamps. `map_keys` (when given) binds
/// each track to its scenario map by template-id prefix.
pub fn load_dataset(
    path: &Path,
    expected_hash: Option<&str>,
    map_keys: &[String],
) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty dataset file".into()))?;
    check_hash(header, "dataset", expected_hash)?;

    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::BTreeMap<String, Vec<TimedPoint>> = Default::default();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: missing track id", ln + 1)))?;
        let mut num = || -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| Error::Format(format!("line {}: truncated record", ln + 1)))?
                .parse()
                .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))
        };
        let (t, x, y) = (num()?, num()?, num()?);
        if !by_id.contains_key(id) {
            order.push(id.to_string());
        }
        by_id.entry(id.to_string()).or_default().push(TimedPoint { t, x, y });
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let points = by_id.remove(&id).unwrap();
        if points.len() < 2 {
            return Err(Error::Format(format!("track {id}: fewer than 2 points")));
        }
        let period = points[1].t - points[0].t;
        let mut traj = Trajectory::new(id.clone(), points, period)?;
        traj.map_ref = map_keys
            .iter()
            .find(|k| id == **k || id.starts_with(&format!("{k}_")))
            .cloned();
        out.push(traj);
    }
    Ok(out)
}

pub fn save_map(path: &Path, map: &SemanticMap, config_hash: &str) -> Result<()> {
    let mut out = format!("# mantra-map {config_hash}\n");
    out.push_str(&format!(
        "MAP {} {} {} {} {} {}\n",
        map.channels, map.height, map.width, map.resolution, map.origin.0, map.origin.1
    ));
    for row in map.grid.chunks(map.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_map(path: &Path, expected_hash: Option<&str>) -> Result<SemanticMap> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty map file".into()))?;
    check_hash(header, "map", expected_hash)?;
    let spec = lines.next().ok_or_else(|| Error::Format("missing MAP header".into()))?;
    let tokens: Vec<&str> = spec.split_whitespace().collect();
    if tokens.len() != 7 || tokens[0] != "MAP" {
        return Err(Error::Format(format!("bad MAP header: `{spec}`")));
    }
    let channels: usize = tokens[1].parse().map_err(|e| Error::Format(format!("MAP channels: {e}")))?;
    let height: usize = tokens[2].parse().map_err(|e| Error::Format(format!("MAP height: {e}")))?;
    let width: usize = tokens[3].parse().map_err(|e| Error::Format(format!("MAP width: {e}")))?;
    let resolution: f64 = tokens[4].parse().map_err(|e| Error::Format(format!("MAP resolution: {e}")))?;
    let ox: f64 = tokens[5].parse().map_err(|e| Error::Format(format!("MAP origin: {e}")))?;
    let oy: f64 = tokens[6].parse().map_err(|e| Error::Format(format!("MAP origin: {e}")))?;
    let mut grid = Vec::with_capacity(channels * height * width);
    for line in lines {
        for tok in line.split_whitespace() {
            grid.push(
                tok.parse()
                    .map_err(|e| Error::Format(format!("map cell: {e}")))?,
            );
        }
    }
    if grid.len() != channels * height * width {
        return Err(Error::Format(format!(
            "map grid has {} cells, expected {}",
            grid.len(),
            channels * height * width
        )));
    }
    SemanticMap::new(channels, height, width, grid, resolution, (ox, oy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::map::rasterize_roads;
    use crate::data::trajectory::Point;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let points = (0..6)
            .map(|i| TimedPoint {
                t: i as f64 * 0.5,
                x: 1.5 * i as f64,
                y: -0.25 * i as f64,
            })
            .collect();
        let mut traj = Trajectory::new("junc_0000_b1".into(), points, 0.5).unwrap();
        traj.map_ref = Some("junc_0000".into());
        let path = dir.path().join("train.txt");
        save_dataset(&path, &[traj.clone()], "abc").unwrap();
        let loaded = load_dataset(&path, Some("abc"), &["junc_0000".into()]).unwrap();
        assert_eq!(loaded, vec![traj]);
        // wrong hash refused
        assert!(matches!(
            load_dataset(&path, Some("zzz"), &[]),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn map_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let map = rasterize_roads(
            &[vec![Point::new(0.0, 0.0), Point::new(8.0, 0.0)]],
            0.5,
            2.0,
            2.0,
        )
        .unwrap();
        let path = dir.path().join("m.map");
        save_map(&path, &map, "h1").unwrap();
        assert_eq!(load_map(&path, Some("h1")).unwrap(), map);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_map(&path, Some("h1")), Err(Error::Format(_))));
    }
}
