//! Associative key-value memory over trajectory encodings, cosine addressing,
//! the learned write controller, and the filling/ingestion procedures.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Grads, ParamVec, Tape, Tensor};
use crate::data::{Point, Sample};
use crate::encdec::{EncDecModel, CODE_WIDTH};
use crate::error::{Error, Result};

/// Deviation threshold at the full horizon (meters) for the miss-rate error.
pub const MISS_RATE_HORIZON_THRESHOLD: f64 = 2.0;
pub const WRITE_THRESHOLD: f64 = 0.5;
/// The gate is a 2-parameter logistic regression; the sequence-model learning
/// rate is far too small for it to leave its neutral init within a few epochs.
pub const CONTROLLER_LEARNING_RATE: f64 = 0.01;

/// One stored past/future pair. Besides the two embeddings, the canonical
/// coordinates of both halves are kept so that memory contents stay
/// inspectable and retrievable without running the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub source_id: String,
    pub write_epoch: usize,
    pub past: Vec<Point>,
    pub future: Vec<Point>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    pub entries: Vec<MemoryEntry>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends an entry; existing entries are never mutated.
    pub fn write(&mut self, entry: MemoryEntry) -> Result<()> {
        if entry.key.len() != CODE_WIDTH || entry.value.len() != CODE_WIDTH {
            return Err(Error::Shape(format!(
                "memory write: key/value widths {}/{} != {CODE_WIDTH}",
                entry.key.len(),
                entry.value.len()
            )));
        }
        if norm(&entry.key) == 0.0 {
            return Err(Error::Input("memory write: zero-norm key".into()));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Cosine similarity of the query against every stored key, in entry order.
    pub fn similarity_scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyMemory("no entries to score".into()));
        }
        if query.iter().any(|v| !v.is_finite()) || norm(query) == 0.0 {
            return Err(Error::Input(
                "similarity: query must be finite with norm > 0".into(),
            ));
        }
        Ok(self.entries.iter().map(|e| cosine(query, &e.key)).collect())
    }

    /// Indices and scores of the K best-matching entries, non-increasing by
    /// score; ties go to the older (lower-index) entry. Saturates at |M|.
    pub fn read_top_k(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::Input("read_top_k: K must be >= 1".into()));
        }
        let scores = self.similarity_scores(query)?;
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(ranked)
    }
}

/// K decoded candidate futures ranked by similarity score.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub futures: Vec<Vec<Point>>,
    pub scores: Vec<f64>,
    /// Memory indices the futures were decoded from.
    pub sources: Vec<usize>,
}

/// Encode the past, retrieve the top-K future encodings, and decode each one
/// against the fixed past encoding. Canonical frame throughout.
pub fn predict(
    past: &[Point],
    memory: &MemoryStore,
    k: usize,
    model: &EncDecModel,
) -> Result<PredictionSet> {
    if memory.is_empty() {
        return Err(Error::Input(
            "predict: memory is empty; fill memory first".into(),
        ));
    }
    let pi = model.encode_past(past)?;
    let ranked = memory.read_top_k(&pi, k)?;
    let mut futures = Vec::with_capacity(ranked.len());
    let mut scores = Vec::with_capacity(ranked.len());
    let mut sources = Vec::with_capacity(ranked.len());
    for (idx, score) in ranked {
        futures.push(model.decode(&pi, &memory.entries[idx].value)?);
        scores.push(score);
        sources.push(idx);
    }
    Ok(PredictionSet {
        futures,
        scores,
        sources,
    })
}

/// Miss-rate error: fraction of future points whose deviation exceeds a
/// threshold that grows linearly from ~0 at the present to `th_horizon` at
/// the full horizon.
pub fn miss_rate_error(prediction: &[Point], truth: &[Point], th_horizon: f64) -> Result<f64> {
    if prediction.len() != truth.len() || prediction.is_empty() {
        return Err(Error::Shape(format!(
            "miss_rate_error: lengths {} vs {}",
            prediction.len(),
            truth.len()
        )));
    }
    let f = prediction.len() as f64;
    let mut hits = 0usize;
    for (i, (p, t)) in prediction.iter().zip(truth).enumerate() {
        let th = th_horizon * (i + 1) as f64 / f;
        let dev = ((p.x - t.x).powi(2) + (p.y - t.y).powi(2)).sqrt();
        if dev <= th {
            hits += 1;
        }
    }
    Ok(1.0 - hits as f64 / f)
}

/// Single-input affine map through a sigmoid: P(w) = sigmoid(weight*e + bias).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller {
    pub weight: f64,
    pub bias: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Controller {
            weight: 0.0,
            bias: 0.0,
        }
    }
}

impl Controller {
    pub fn forward(&self, e: f64) -> f64 {
        1.0 / (1.0 + (-(self.weight * e + self.bias)).exp())
    }
}

/// L_c = e*(1-P) + (1-e)*P: rewards high write probability exactly when the
/// prediction error is high.
pub fn controller_loss(e: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::Input(format!("controller_loss: e={e} outside [0,1]")));
    }
    Ok(e * (1.0 - p) + (1.0 - e) * p)
}

#[derive(Debug, Clone)]
pub struct ControllerReport {
    /// Mean controller loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Memory size at the end of each epoch.
    pub memory_sizes: Vec<usize>,
}

/// Number of retrieved futures the write decision considers: a sample is
/// redundant when any of the decoded candidates already covers it.
pub const WRITE_CANDIDATES: usize = 5;

fn sample_error(
    sample: &Sample,
    memory: &MemoryStore,
    model: &EncDecModel,
) -> Result<f64> {
    if memory.is_empty() {
        return Ok(1.0);
    }
    let pred = predict(&sample.past, memory, WRITE_CANDIDATES, model)?;
    let mut best = 1.0f64;
    for future in &pred.futures {
        let e = miss_rate_error(future, &sample.future, MISS_RATE_HORIZON_THRESHOLD)?;
        best = best.min(e);
    }
    Ok(best)
}

fn entry_from(sample: &Sample, model: &EncDecModel, epoch: usize) -> Result<MemoryEntry> {
    Ok(MemoryEntry {
        key: model.encode_past(&sample.past)?,
        value: model.encode_future(&sample.future)?,
        source_id: sample.source_id.clone(),
        write_epoch: epoch,
        past: sample.past.clone(),
        future: sample.future.clone(),
    })
}

/// Trains the write controller against a frozen encoder/decoder. Each epoch
/// starts from an empty memory; every sample is predicted with the memory so
/// far (e=1 when empty), the controller takes one Adam step on L_c, and the
/// sample is written iff the updated controller says P(w) > 0.5.
pub fn train_controller(
    samples: &[Sample],
    model: &EncDecModel,
    epochs: usize,
    seed: u64,
) -> Result<(Controller, MemoryStore, ControllerReport)> {
    if samples.is_empty() {
        return Err(Error::Input("train_controller: empty dataset".into()));
    }
    let mut params = ParamVec::new();
    let w_slot = params.push("controller.w", Tensor::zeros(vec![1]));
    let b_slot = params.push("controller.b", Tensor::zeros(vec![1]));
    let mut adam = AdamState::new(&params, CONTROLLER_LEARNING_RATE);
    let mut grads = Grads::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut memory = MemoryStore::new();
    let mut loss_curve = Vec::with_capacity(epochs);
    let mut memory_sizes = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        memory.clear();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let sample = &samples[i];
            let e = sample_error(sample, &memory, model)?;

            let mut tape = Tape::new();
            let w = tape.param(&params, w_slot);
            let b = tape.param(&params, b_slot);
            let z = tape.scale(w, e);
            let z = tape.add(z, b)?;
            let p = tape.sigmoid(z);
            let one_minus_p = tape.one_minus(p);
            let hit_term = tape.scale(one_minus_p, e);
            let miss_term = tape.scale(p, 1.0 - e);
            let loss = tape.add(hit_term, miss_term)?;
            epoch_loss += tape.scalar(loss);
            grads.reset();
            tape.backward(loss)?;
            tape.collect_param_grads(&params, &mut grads);
            adam.update(&mut params, &grads);

            let controller = Controller {
                weight: params.get(w_slot).data()[0],
                bias: params.get(b_slot).data()[0],
            };
            if controller.forward(e) > WRITE_THRESHOLD {
                memory.write(entry_from(sample, model, epoch)?)?;
            }
        }
        loss_curve.push(epoch_loss / samples.len() as f64);
        memory_sizes.push(memory.len());
    }
    let controller = Controller {
        weight: params.get(w_slot).data()[0],
        bias: params.get(b_slot).data()[0],
    };
    Ok((controller, memory, ControllerReport {
        loss_curve,
        memory_sizes,
    }))
}

/// One gated write: a sample is stored iff the memory is empty or the
/// controller judges its best-candidate prediction error worth keeping.
pub fn online_ingest(
    sample: &Sample,
    memory: &mut MemoryStore,
    model: &EncDecModel,
    controller: &Controller,
    epoch: usize,
) -> Result<bool> {
    let write = if memory.is_empty() {
        true
    } else {
        let e = sample_error(sample, memory, model)?;
        controller.forward(e) > WRITE_THRESHOLD
    };
    if write {
        memory.write(entry_from(sample, model, epoch)?)?;
    }
    Ok(write)
}

/// Single gated pass over the dataset in order.
pub fn fill_memory(
    samples: &[Sample],
    model: &EncDecModel,
    controller: &Controller,
) -> Result<MemoryStore> {
    let mut memory = MemoryStore::new();
    for sample in samples {
        online_ingest(sample, &mut memory, model, controller, 0)?;
    }
    Ok(memory)
}

/// Ungated variant: writes every sample (the "no controller" ablation).
pub fn fill_memory_all(samples: &[Sample], model: &EncDecModel) -> Result<MemoryStore> {
    let mut memory = MemoryStore::new();
    for sample in samples {
        memory.write(entry_from(sample, model, 0)?)?;
    }
    Ok(memory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn entry(key: Vec<f64>, id: &str) -> MemoryEntry {
        MemoryEntry {
            value: vec![0.5; CODE_WIDTH],
            key,
            source_id: id.into(),
            write_epoch: 0,
            past: vec![],
            future: vec![],
        }
    }

    fn basis(i: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; CODE_WIDTH];
        v[i] = scale;
        v
    }

    #[test]
    fn cosine_extremes() {
        let mut m = MemoryStore::new();
        m.write(entry(basis(0, 1.0), "a")).unwrap();
        m.write(entry(basis(1, 2.0), "b")).unwrap();
        m.write(entry(basis(0, -3.0), "c")).unwrap();
        let s = m.similarity_scores(&basis(0, 5.0)).unwrap();
        assert_relative_eq!(s[0], 1.0);
        assert_relative_eq!(s[1], 0.0);
        assert_relative_eq!(s[2], -1.0);
    }

    #[test]
    fn scores_match_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = MemoryStore::new();
        for i in 0..50 {
            let k: Vec<f64> = (0..CODE_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
            m.write(entry(k, &format!("e{i}"))).unwrap();
        }
        let q: Vec<f64> = (0..CODE_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = m.similarity_scores(&q).unwrap();
        let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, e) in m.entries.iter().enumerate() {
            let dot: f64 = q.iter().zip(&e.key).map(|(a, b)| a * b).sum();
            let nk = e.key.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((s[i] - dot / (nq * nk)).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_ranking_and_ties() {
        let mut m = MemoryStore::new();
        m.write(entry(basis(1, 1.0), "ortho")).unwrap();
        m.write(entry(basis(0, 2.0), "match_old")).unwrap();
        m.write(entry(basis(0, 7.0), "match_new")).unwrap();
        let top = m.read_top_k(&basis(0, 1.0), 2).unwrap();
        // both matches score 1; the older entry (index 1) wins the tie
        assert_eq!(top[0].0, 1);
        assert_eq!(top[1].0, 2);
        // K > |M| saturates
        assert_eq!(m.read_top_k(&basis(0, 1.0), 10).unwrap().len(), 3);
        assert!(MemoryStore::new().read_top_k(&basis(0, 1.0), 1).is_err());
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = MemoryStore::new();
        for i in 0..100 {
            let k: Vec<f64> = (0..CODE_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
            m.write(entry(k, &format!("e{i}"))).unwrap();
        }
        let q: Vec<f64> = (0..CODE_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut oracle: Vec<(usize, f64)> =
            m.similarity_scores(&q).unwrap().into_iter().enumerate().collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let top = m.read_top_k(&q, 10).unwrap();
        for (got, want) in top.iter().zip(&oracle) {
            assert_eq!(got.0, want.0);
        }
    }

    #[test]
    fn miss_rate_hand_example() {
        // F=4, thresholds (0.5, 1.0, 1.5, 2.0), deviations (0.4, 0.9, 2.0, 3.0)
        let truth: Vec<Point> = (0..4).map(|_| Point::new(0.0, 0.0)).collect();
        let pred = vec![
            Point::new(0.4, 0.0),
            Point::new(0.9, 0.0),
            Point::new(2.0, 0.0),
            Point::new(3.0, 0.0),
        ];
        assert_relative_eq!(miss_rate_error(&pred, &truth, 2.0).unwrap(), 0.5);
        assert_relative_eq!(miss_rate_error(&truth, &truth, 2.0).unwrap(), 0.0);
        let far: Vec<Point> = (0..4).map(|_| Point::new(10.0, 0.0)).collect();
        assert_relative_eq!(miss_rate_error(&far, &truth, 2.0).unwrap(), 1.0);
        assert!(miss_rate_error(&pred, &truth[..3], 2.0).is_err());
    }

    #[test]
    fn controller_forward_and_loss() {
        let flat = Controller::default();
        assert_relative_eq!(flat.forward(0.0), 0.5);
        assert_relative_eq!(flat.forward(1.0), 0.5);
        let steep = Controller {
            weight: 1000.0,
            bias: -500.0,
        };
        assert!(steep.forward(1.0) > 0.999);
        assert!(steep.forward(0.0) < 0.001);
        assert_relative_eq!(controller_loss(0.0, 0.3).unwrap(), 0.3);
        assert_relative_eq!(controller_loss(1.0, 0.3).unwrap(), 0.7);
        assert!(controller_loss(1.5, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn scores_bounded(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = MemoryStore::new();
            for i in 0..5 {
                let k: Vec<f64> = (0..CODE_WIDTH).map(|_| rng.gen_range(-10.0..10.0)).collect();
                if k.iter().map(|x| x*x).sum::<f64>() > 0.0 {
                    m.write(entry(k, &format!("e{i}"))).unwrap();
                }
            }
            let q: Vec<f64> = (0..CODE_WIDTH).map(|_| rng.gen_range(-10.0..10.0)).collect();
            if !m.is_empty() && q.iter().map(|x| x*x).sum::<f64>() > 0.0 {
                for s in m.similarity_scores(&q).unwrap() {
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
                }
            }
        }

        #[test]
        fn loss_symmetry(e in 0.0f64..=1.0, p in 0.001f64..0.999) {
            let a = controller_loss(e, p).unwrap();
            let b = controller_loss(1.0 - e, 1.0 - p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let half = controller_loss(0.5, p).unwrap();
            prop_assert!((half - 0.5).abs() < 1e-12);
        }
    }
}
