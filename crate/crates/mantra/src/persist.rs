//! Artifact persistence: binary model checkpoints, memory snapshots, and CSV
//! reports. Every file embeds the run's config hash and is refused on
//! mismatch; truncated files fail with the byte offset.

use std::io::Write;
use std::path::Path;


use crate::data::{unflat, Point};
use crate::encdec::{EncDecModel, CODE_WIDTH};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, OnlineCurve, REPORT_HORIZONS_S};
use crate::memory::{Controller, MemoryEntry, MemoryStore};
use crate::refine::RefinementModel;

const CHECKPOINT_MAGIC: &[u8; 8] = b"MANTRA1\n";
const SNAPSHOT_KIND: &str = "MEM";

/// Byte-counting reader so format errors can name the offset.
struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} available",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|e| Error::Format(format!("{what}: invalid utf-8: {e}")))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "trailing bytes at offset {}",
                self.pos
            )));
        }
        Ok(())
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

fn tensor_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_string(out, name);
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u64).to_le_bytes());
    }
    put_f64s(out, data);
}

/// Saves the encoder/decoder parameters plus, when present, the refinement
/// model (including batch-norm running statistics) and the controller, as a
/// flat list of named tensors.
pub fn save_checkpoint(
    path: &Path,
    config_hash: &str,
    encdec: &EncDecModel,
    refiner: Option<&RefinementModel>,
    controller: Option<&Controller>,
) -> Result<()> {
    let mut records: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    records.push(("meta.past_len".into(), vec![1], vec![encdec.past_len as f64]));
    records.push(("meta.future_len".into(), vec![1], vec![encdec.future_len as f64]));
    for (name, t) in encdec.params.iter() {
        records.push((name.to_string(), t.shape().to_vec(), t.data().to_vec()));
    }
    if let Some(r) = refiner {
        for (name, t) in r.params.iter() {
            records.push((name.to_string(), t.shape().to_vec(), t.data().to_vec()));
        }
        for (suffix, stats) in [("bn1", &r.bn1_stats), ("bn2", &r.bn2_stats)] {
            records.push((
                format!("refine.{suffix}.running_mean"),
                vec![stats.mean.len()],
                stats.mean.clone(),
            ));
            records.push((
                format!("refine.{suffix}.running_var"),
                vec![stats.var.len()],
                stats.var.clone(),
            ));
        }
    }
    if let Some(c) = controller {
        records.push(("controller.weight".into(), vec![1], vec![c.weight]));
        records.push(("controller.bias".into(), vec![1], vec![c.bias]));
    }

    let mut out = Vec::new();
    out.extend(CHECKPOINT_MAGIC);
    put_string(&mut out, config_hash);
    out.extend((records.len() as u32).to_le_bytes());
    for (name, shape, data) in &records {
        tensor_record(&mut out, name, shape, data);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Everything a checkpoint can contain.
#[derive(Debug)]
pub struct Checkpoint {
    pub encdec: EncDecModel,
    pub refiner: Option<RefinementModel>,
    pub controller: Option<Controller>,
    pub config_hash: String,
}

pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let raw = std::fs::read(path)?;
    let mut cur = Cursor::new(&raw);
    let magic = cur.take(CHECKPOINT_MAGIC.len(), "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(CHECKPOINT_MAGIC).trim(),
            String::from_utf8_lossy(magic)
        )));
    }
    let hash = cur.string("config hash")?;
    if let Some(expected) = expected_hash {
        if hash != expected {
            return Err(Error::HashMismatch {
                expected: expected.into(),
                found: hash,
            });
        }
    }
    let count = cur.u32("record count")? as usize;
    let mut records: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = cur.string("tensor name")?;
        let rank = cur.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("tensor shape")? as usize);
        }
        let len: usize = shape.iter().product();
        let data = cur.f64s(len, &format!("tensor `{name}` data"))?;
        records.push((name, shape, data));
    }
    cur.done()?;

    let find = |n: &str| records.iter().find(|(name, _, _)| name == n);
    let meta = |n: &str| -> Result<usize> {
        Ok(find(n)
            .ok_or_else(|| Error::Format(format!("checkpoint missing `{n}`")))?
            .2[0] as usize)
    };
    let past_len = meta("meta.past_len")?;
    let future_len = meta("meta.future_len")?;
    let mut encdec = EncDecModel::new(past_len, future_len, 0);
    restore_params(&records, &mut encdec.params)?;

    let has_refiner = records.iter().any(|(n, _, _)| n.starts_with("refine."));
    let refiner = if has_refiner {
        let bridge = records.iter().any(|(n, _, _)| n.starts_with("refine.bridge"));
        let mut r = RefinementModel::new(crate::data::CHANNELS, 0, bridge);
        restore_params(&records, &mut r.params)?;
        for (suffix, stats) in [("bn1", &mut r.bn1_stats), ("bn2", &mut r.bn2_stats)] {
            let mean = find(&format!("refine.{suffix}.running_mean"))
                .ok_or_else(|| Error::Format(format!("checkpoint missing refine {suffix} stats")))?;
            let var = find(&format!("refine.{suffix}.running_var"))
                .ok_or_else(|| Error::Format(format!("checkpoint missing refine {suffix} stats")))?;
            stats.mean = mean.2.clone();
            stats.var = var.2.clone();
        }
        Some(r)
    } else {
        None
    };
    let controller = match (find("controller.weight"), find("controller.bias")) {
        (Some(w), Some(b)) => Some(Controller {
            weight: w.2[0],
            bias: b.2[0],
        }),
        _ => None,
    };
    Ok(Checkpoint {
        encdec,
        refiner,
        controller,
        config_hash: hash,
    })
}

fn restore_params(
    records: &[(String, Vec<usize>, Vec<f64>)],
    params: &mut crate::autodiff::ParamVec,
) -> Result<()> {
    for idx in 0..params.len() {
        let name = params.name(idx).to_string();
        let rec = records
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor `{name}`")))?;
        let t = params.get_mut(idx);
        if rec.1 != t.shape() {
            return Err(Error::Format(format!(
                "tensor `{name}`: shape {:?} in file, {:?} expected",
                rec.1,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&rec.2);
    }
    Ok(())
}

/// Memory snapshot: one ASCII header line `MEM <n> <width> <config-hash>`
/// followed by binary entry records (source id, write epoch, key, value, and
/// the canonical past/future coordinates the embeddings came from).
pub fn save_memory(path: &Path, memory: &MemoryStore, config_hash: &str) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        &mut out,
        "{SNAPSHOT_KIND} {} {CODE_WIDTH} {config_hash}",
        memory.len()
    )?;
    for e in &memory.entries {
        put_string(&mut out, &e.source_id);
        out.extend((e.write_epoch as u64).to_le_bytes());
        put_f64s(&mut out, &e.key);
        put_f64s(&mut out, &e.value);
        out.extend((e.past.len() as u32).to_le_bytes());
        put_f64s(&mut out, &crate::data::flat(&e.past));
        out.extend((e.future.len() as u32).to_le_bytes());
        put_f64s(&mut out, &crate::data::flat(&e.future));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_memory(path: &Path, expected_hash: Option<&str>) -> Result<MemoryStore> {
    let raw = std::fs::read(path)?;
    let header_end = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("memory snapshot: missing header line".into()))?;
    let header = std::str::from_utf8(&raw[..header_end])
        .map_err(|e| Error::Format(format!("memory snapshot header: {e}")))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 4 || tokens[0] != SNAPSHOT_KIND {
        return Err(Error::Format(format!("bad memory header: `{header}`")));
    }
    let n: usize = tokens[1]
        .parse()
        .map_err(|e| Error::Format(format!("memory entry count: {e}")))?;
    let width: usize = tokens[2]
        .parse()
        .map_err(|e| Error::Format(format!("memory width: {e}")))?;
    if width != CODE_WIDTH {
        return Err(Error::Format(format!(
            "memory width {width} != expected {CODE_WIDTH}"
        )));
    }
    if let Some(expected) = expected_hash {
        if tokens[3] != expected {
            return Err(Error::HashMismatch {
                expected: expected.into(),
                found: tokens[3].into(),
            });
        }
    }
    let mut cur = Cursor::new(&raw[header_end + 1..]);
    let mut memory = MemoryStore::new();
    for _ in 0..n {
        let source_id = cur.string("entry source id")?;
        let write_epoch = cur.u64("entry write epoch")? as usize;
        let key = cur.f64s(CODE_WIDTH, "entry key")?;
        let value = cur.f64s(CODE_WIDTH, "entry value")?;
        let p = cur.u32("entry past length")? as usize;
        let past = unflat(&cur.f64s(2 * p, "entry past coords")?);
        let f = cur.u32("entry future length")? as usize;
        let future = unflat(&cur.f64s(2 * f, "entry future coords")?);
        memory.write(MemoryEntry {
            key,
            value,
            source_id,
            write_epoch,
            past,
            future,
        })?;
    }
    cur.done()?;
    Ok(memory)
}

/// Evaluation report as CSV with a hash-stamped comment header.
pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = format!(
        "# mantra-report {}\n# seed={} samples={} memory_size={}\n",
        report.config_hash, report.seed, report.samples, report.memory_size
    );
    out.push_str("method,k,horizon_s,ade,fde\n");
    for row in &report.rows {
        for (h, s) in REPORT_HORIZONS_S.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                row.method, row.k, s, row.ade[h], row.fde[h]
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Online-experiment curve as CSV with a hash-stamped comment header.
pub fn save_online_curve(path: &Path, curve: &OnlineCurve, config_hash: &str) -> Result<()> {
    let mut out = format!(
        "# mantra-online {config_hash}\n# runs={} batch={}\n",
        curve.runs, curve.batch
    );
    out.push_str("samples_observed,mean_memory_size,mean_error,error_variance,write_fraction\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{:.4},{:.6},{:.6},{:.4}\n",
            p.samples_observed, p.mean_memory_size, p.mean_error, p.error_variance, p.write_fraction
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Standalone SVG with two line plots: memory growth and mean error.
pub fn save_online_svg(path: &Path, curve: &OnlineCurve) -> Result<()> {
    let (w, h) = (640.0, 240.0);
    let margin = 40.0;
    let series = |values: &[f64], color: &str, x_off: f64| -> String {
        let vmax = values.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
        let n = values.len().max(2) as f64;
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = x_off + margin + (w / 2.0 - 2.0 * margin) * i as f64 / (n - 1.0);
                let y = h - margin - (h - 2.0 * margin) * v / vmax;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        )
    };
    let mem: Vec<f64> = curve.points.iter().map(|p| p.mean_memory_size).collect();
    let err: Vec<f64> = curve.points.iter().map(|p| p.mean_error).collect();
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\
<text x=\"{m}\" y=\"20\">memory size</text>{}\
<text x=\"{half}\" y=\"20\">mean error</text>{}\
</svg>",
        series(&mem, "steelblue", 0.0),
        series(&err, "firebrick", w / 2.0),
        m = margin,
        half = w / 2.0 + margin,
    );
    std::fs::write(path, svg)?;
    Ok(())
}

/// Per-entry memory dump: decoded future coordinates next to the stored
/// embeddings, for inspection.
pub fn save_memory_inspection(
    path: &Path,
    memory: &MemoryStore,
    model: &EncDecModel,
    config_hash: &str,
) -> Result<()> {
    let mut out = format!("# mantra-memory-dump {config_hash}\n");
    out.push_str("index,source_id,write_epoch,decoded_future,stored_future,key,value\n");
    let fmt_pts = |pts: &[Point]| -> String {
        pts.iter()
            .map(|p| format!("{:.4} {:.4}", p.x, p.y))
            .collect::<Vec<_>>()
            .join(";")
    };
    let fmt_vec = |v: &[f64]| -> String {
        v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
    };
    for (i, e) in memory.entries.iter().enumerate() {
        let decoded = model.decode(&e.key, &e.value)?;
        out.push_str(&format!(
            "{i},{},{},{},{},{},{}\n",
            e.source_id,
            e.write_epoch,
            fmt_pts(&decoded),
            fmt_pts(&e.future),
            fmt_vec(&e.key),
            fmt_vec(&e.value),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Point;
    use tempfile::tempdir;

    fn probe_model() -> EncDecModel {
        EncDecModel::new(4, 8, 11)
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_outputs() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = probe_model();
        let refiner = RefinementModel::new(crate::data::CHANNELS, 3, false);
        let controller = Controller {
            weight: 2.5,
            bias: -1.25,
        };
        save_checkpoint(&path, "abcd1234", &model, Some(&refiner), Some(&controller)).unwrap();
        let loaded = load_checkpoint(&path, Some("abcd1234")).unwrap();
        let probe: Vec<Point> = (0..4).map(|i| Point::new(0.3 * i as f64, -0.1)).collect();
        assert_eq!(
            model.encode_past(&probe).unwrap(),
            loaded.encdec.encode_past(&probe).unwrap()
        );
        let r = loaded.refiner.unwrap();
        for (a, b) in refiner.params.iter().zip(r.params.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.data(), b.1.data());
        }
        assert_eq!(r.bn1_stats.mean, refiner.bn1_stats.mean);
        assert_eq!(loaded.controller.unwrap(), controller);
        assert_eq!(loaded.config_hash, "abcd1234");
    }

    #[test]
    fn checkpoint_hash_and_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, "goodhash", &probe_model(), None, None).unwrap();
        match load_checkpoint(&path, Some("otherhash")) {
            Err(Error::HashMismatch { expected, found }) => {
                assert_eq!(expected, "otherhash");
                assert_eq!(found, "goodhash");
            }
            other => panic!("expected hash mismatch, got {other:?}"),
        }
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_checkpoint_names_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, "h", &probe_model(), None, None).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() / 2]).unwrap();
        match load_checkpoint(&path, None) {
            Err(Error::Format(msg)) => assert!(msg.contains("offset"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    fn snapshot_memory() -> MemoryStore {
        let mut m = MemoryStore::new();
        for i in 0..5 {
            let mut key = vec![0.0; CODE_WIDTH];
            key[i] = 1.0 + i as f64;
            m.write(MemoryEntry {
                key,
                value: vec![0.25 * i as f64 + 0.1; CODE_WIDTH],
                source_id: format!("track_{i}"),
                write_epoch: i,
                past: (0..4).map(|t| Point::new(t as f64, i as f64)).collect(),
                future: (4..12).map(|t| Point::new(t as f64, i as f64)).collect(),
            })
            .unwrap();
        }
        m
    }

    #[test]
    fn memory_round_trip_and_truncation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mem.snap");
        let m = snapshot_memory();
        save_memory(&path, &m, "cafe").unwrap();
        let loaded = load_memory(&path, Some("cafe")).unwrap();
        assert_eq!(loaded, m);
        assert!(matches!(
            load_memory(&path, Some("beef")),
            Err(Error::HashMismatch { .. })
        ));
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() / 2]).unwrap();
        match load_memory(&path, None) {
            Err(Error::Format(msg)) => assert!(msg.contains("offset"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn memory_inspection_lists_every_entry() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dump.csv");
        let m = snapshot_memory();
        save_memory_inspection(&path, &m, &probe_model(), "cafe").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2 + m.len());
        assert!(text.starts_with("# mantra-memory-dump cafe\n"));
    }
}
