//! Iterative map-based refinement: a small CNN turns the semantic map into a
//! feature grid, features are pooled along the predicted coordinates, and a
//! GRU with an offset head nudges the prediction, four rounds by default.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    clip_joint_global_norm, dense, gru_step, AdamState, ConvSpec, DenseParams, Grads, GruParams,
    ParamVec, RunningStats, Tape, Tensor, Var, DEFAULT_LEARNING_RATE,
};
use crate::data::{flat, Point, Sample, SemanticMap};
use crate::encdec::{EncDecModel, CODE_WIDTH, GRADIENT_CLIP_NORM};
use crate::error::{Error, Result};
use crate::memory::MemoryStore;

pub const FEATURE_CHANNELS: usize = 16;
pub const REFINE_ITERATIONS: usize = 4;
/// Retrieved futures considered per sample during training; the closest one
/// to the ground truth carries the gradient.
pub const TRAIN_CANDIDATES: usize = 5;

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvBlock {
    fn init(
        params: &mut ParamVec,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = params.push(
            &format!("{prefix}.w"),
            Tensor::uniform_fan_in(vec![out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let b = params.push(&format!("{prefix}.b"), Tensor::zeros(vec![out_channels]));
        let gamma = params.push(
            &format!("{prefix}.bn.gamma"),
            Tensor::new(vec![out_channels], vec![1.0; out_channels]).unwrap(),
        );
        let beta = params.push(&format!("{prefix}.bn.beta"), Tensor::zeros(vec![out_channels]));
        ConvBlock {
            w,
            b,
            gamma,
            beta,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    fn spec(&self, in_h: usize, in_w: usize) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_channels,
            in_h,
            in_w,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }
}

/// Mapping from world coordinates to fractional feature-grid coordinates
/// (column, row), accounting for the stride-2 downsampling of the first conv.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureGeo {
    pub height: usize,
    pub width: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
    pub downsample: f64,
}

impl FeatureGeo {
    pub fn world_to_feature(&self, p: Point) -> (f64, f64) {
        (
            (p.x - self.origin.0) / self.resolution / self.downsample,
            (p.y - self.origin.1) / self.resolution / self.downsample,
        )
    }
}

/// Evaluated 16-channel feature grid with its geo-transform.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub channels: usize,
    pub grid: Vec<f64>,
    pub geo: FeatureGeo,
}

#[derive(Debug, Clone)]
pub struct RefinementModel {
    pub params: ParamVec,
    conv1: ConvBlock,
    conv2: ConvBlock,
    pub bn1_stats: RunningStats,
    pub bn2_stats: RunningStats,
    pub gru: GruParams,
    pub offset_head: DenseParams,
    /// Optional learned 48->48 affine map from the past embedding to the GRU
    /// initial state; without it the embedding is used directly.
    pub bridge: Option<DenseParams>,
}

impl RefinementModel {
    pub fn new(map_channels: usize, seed: u64, learned_bridge: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVec::new();
        let conv1 = ConvBlock::init(&mut params, "refine.conv1", map_channels, 8, 3, 2, 1, &mut rng);
        let conv2 = ConvBlock::init(&mut params, "refine.conv2", 8, FEATURE_CHANNELS, 3, 1, 1, &mut rng);
        let gru = GruParams::init(&mut params, "refine.gru", FEATURE_CHANNELS, CODE_WIDTH, &mut rng);
        let offset_head = DenseParams::init_zero(&mut params, "refine.head", CODE_WIDTH, 2);
        let bridge = learned_bridge
            .then(|| DenseParams::init(&mut params, "refine.bridge", CODE_WIDTH, CODE_WIDTH, &mut rng));
        RefinementModel {
            params,
            conv1,
            conv2,
            bn1_stats: RunningStats::new(8),
            bn2_stats: RunningStats::new(FEATURE_CHANNELS),
            gru,
            offset_head,
            bridge,
        }
    }

    fn geo_for(&self, map: &SemanticMap) -> FeatureGeo {
        let spec1 = self.conv1.spec(map.height, map.width);
        FeatureGeo {
            height: spec1.out_h(),
            width: spec1.out_w(),
            resolution: map.resolution,
            origin: map.origin,
            downsample: self.conv1.stride as f64,
        }
    }

    /// Runs the conv stack on the tape. Train mode normalizes by batch
    /// statistics and updates the running estimates.
    pub fn extract_on_tape(
        &mut self,
        tape: &mut Tape,
        map: &SemanticMap,
        train: bool,
    ) -> Result<(Var, FeatureGeo)> {
        if map.channels != self.conv1.in_channels {
            return Err(Error::Shape(format!(
                "feature extraction: map has {} channels, model expects {}",
                map.channels, self.conv1.in_channels
            )));
        }
        let geo = self.geo_for(map);
        let x = tape.constant(&map.grid);
        let spec1 = self.conv1.spec(map.height, map.width);
        let (h1, w1) = (spec1.out_h(), spec1.out_w());
        let w = tape.param(&self.params, self.conv1.w);
        let b = tape.param(&self.params, self.conv1.b);
        let x = tape.conv2d(x, w, b, spec1)?;
        let gamma = tape.param(&self.params, self.conv1.gamma);
        let beta = tape.param(&self.params, self.conv1.beta);
        let x = tape.batchnorm(x, gamma, beta, 8, &mut self.bn1_stats, train)?;
        let x = tape.relu(x);

        let spec2 = self.conv2.spec(h1, w1);
        let w = tape.param(&self.params, self.conv2.w);
        let b = tape.param(&self.params, self.conv2.b);
        let x = tape.conv2d(x, w, b, spec2)?;
        let gamma = tape.param(&self.params, self.conv2.gamma);
        let beta = tape.param(&self.params, self.conv2.beta);
        let x = tape.batchnorm(x, gamma, beta, FEATURE_CHANNELS, &mut self.bn2_stats, train)?;
        let x = tape.relu(x);
        Ok((x, geo))
    }

    /// Eval-mode feature extraction to plain values.
    pub fn extract_feature_map(&self, map: &SemanticMap) -> Result<FeatureMap> {
        let mut tape = Tape::new();
        let mut me = self.clone();
        let (var, geo) = me.extract_on_tape(&mut tape, map, false)?;
        Ok(FeatureMap {
            channels: FEATURE_CHANNELS,
            grid: tape.value(var).to_vec(),
            geo,
        })
    }

    /// One refinement pass on the tape: `coords` is the flattened world-frame
    /// prediction, `h0` the GRU initial state derived from the past embedding.
    /// Returns the coordinates after each iteration; the last one is final.
    pub fn refine_on_tape(
        &self,
        tape: &mut Tape,
        mut coords: Var,
        h0: Var,
        feature_grid: Var,
        geo: &FeatureGeo,
        iterations: usize,
    ) -> Result<Vec<Var>> {
        let steps = tape.len(coords) / 2;
        let mut stages = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let current = tape.value(coords).to_vec();
            let mut h = h0;
            let mut offsets = Vec::with_capacity(steps);
            for t in 0..steps {
                let p = Point::new(current[2 * t], current[2 * t + 1]);
                let (fx, fy) = geo.world_to_feature(p);
                let pooled =
                    tape.pool_bilinear(feature_grid, FEATURE_CHANNELS, geo.height, geo.width, fx, fy)?;
                h = gru_step(tape, &self.params, &self.gru, Some(pooled), h)?;
                offsets.push(dense(tape, &self.params, &self.offset_head, h)?);
            }
            let off = tape.concat(&offsets);
            coords = tape.add(coords, off)?;
            stages.push(coords);
        }
        Ok(stages)
    }

    pub fn initial_hidden(&self, tape: &mut Tape, pi: Var) -> Result<Var> {
        match &self.bridge {
            Some(bridge) => dense(tape, &self.params, bridge, pi),
            None => Ok(pi),
        }
    }

    /// Frozen-model refinement of a world-frame prediction. Returns the final
    /// coordinates and every intermediate iteration.
    pub fn refine(
        &self,
        prediction: &[Point],
        pi: &[f64],
        map: &SemanticMap,
        iterations: usize,
    ) -> Result<(Vec<Point>, Vec<Vec<Point>>)> {
        if pi.len() != CODE_WIDTH {
            return Err(Error::Shape(format!(
                "refine: past embedding width {} != {CODE_WIDTH}",
                pi.len()
            )));
        }
        let features = self.extract_feature_map(map)?;
        let mut tape = Tape::new();
        let grid = tape.constant(&features.grid);
        let coords = tape.constant(&flat(prediction));
        let pi = tape.constant(pi);
        let h0 = self.initial_hidden(&mut tape, pi)?;
        let stages = self.refine_on_tape(&mut tape, coords, h0, grid, &features.geo, iterations)?;
        let unflat = |v: Var| -> Vec<Point> {
            tape.value(v)
                .chunks(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect()
        };
        let all: Vec<Vec<Point>> = stages.iter().map(|&s| unflat(s)).collect();
        let last = all.last().cloned().unwrap_or_else(|| prediction.to_vec());
        Ok((last, all))
    }
}

/// Bilinear interpolation of an evaluated feature map at world coordinates;
/// points outside the grid yield zero vectors.
pub fn pool_features(features: &FeatureMap, coords: &[Point]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let grid = tape.constant(&features.grid);
    coords
        .iter()
        .map(|&p| {
            let (fx, fy) = features.geo.world_to_feature(p);
            let v = tape
                .pool_bilinear(grid, features.channels, features.geo.height, features.geo.width, fx, fy)
                .expect("grid length fixed by construction");
            tape.value(v).to_vec()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub iterations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            iterations: REFINE_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    /// Mean world-frame MSE per epoch.
    pub loss_curve: Vec<f64>,
}

/// Joint training of the refinement module together with decoder finetuning.
/// Each sample is decoded from its own past embedding and the best of the
/// top retrieved future embeddings (usually from a different sample),
/// denormalized, refined on the sample's map, and regressed onto the true
/// world-frame future. Encoders stay frozen; they are only evaluated, never
/// differentiated.
pub fn train_refinement(
    samples: &[Sample],
    maps: &BTreeMap<String, SemanticMap>,
    encdec: &mut EncDecModel,
    refiner: &mut RefinementModel,
    memory: &MemoryStore,
    config: &RefineConfig,
) -> Result<RefineReport> {
    if samples.is_empty() {
        return Err(Error::Input("train_refinement: empty dataset".into()));
    }
    if memory.is_empty() {
        return Err(Error::EmptyMemory("train_refinement needs a filled memory".into()));
    }
    for s in samples {
        let key = s.map_ref.as_deref().ok_or_else(|| {
            Error::Input(format!("train_refinement: sample {} has no map", s.source_id))
        })?;
        if !maps.contains_key(key) {
            return Err(Error::Input(format!(
                "train_refinement: map `{key}` not provided"
            )));
        }
    }

    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut dec_adam = AdamState::new(&encdec.params, config.learning_rate);
    let mut ref_adam = AdamState::new(&refiner.params, config.learning_rate);
    let mut dec_grads = Grads::new(&encdec.params);
    let mut ref_grads = Grads::new(&refiner.params);
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            dec_grads.reset();
            ref_grads.reset();
            for &i in chunk {
                let sample = &samples[i];
                let map = &maps[sample.map_ref.as_deref().unwrap()];
                let pi = encdec.encode_past(&sample.past)?;
                // winner-takes-all over the retrieved candidates: gradients
                // flow only through the one closest to the ground truth, so
                // off-branch retrievals never pull the decoder toward a
                // mode average
                let top = memory.read_top_k(&pi, TRAIN_CANDIDATES)?;
                let mut phi = &memory.entries[top[0].0].value;
                let mut best = f64::INFINITY;
                for (idx, _) in &top {
                    let decoded = encdec.decode(&pi, &memory.entries[*idx].value)?;
                    let err: f64 = decoded
                        .iter()
                        .zip(&sample.future)
                        .map(|(p, t)| (p.x - t.x).powi(2) + (p.y - t.y).powi(2))
                        .sum();
                    if err < best {
                        best = err;
                        phi = &memory.entries[*idx].value;
                    }
                }
                let phi = phi.clone();

                let mut tape = Tape::new();
                let pi_c = tape.constant(&pi);
                let phi_c = tape.constant(&phi);
                let decoded = encdec.decode_on_tape(&mut tape, pi_c, phi_c)?;
                let canonical = tape.concat(&decoded);
                let t = &sample.transform;
                let world = tape.rigid(
                    canonical,
                    -t.rotation,
                    -t.translation.0,
                    -t.translation.1,
                )?;
                let (grid, geo) = refiner.extract_on_tape(&mut tape, map, true)?;
                let h0 = refiner.initial_hidden(&mut tape, pi_c)?;
                let stages =
                    refiner.refine_on_tape(&mut tape, world, h0, grid, &geo, config.iterations)?;
                let final_coords = *stages.last().unwrap();
                let loss = tape.mse(final_coords, &flat(&sample.future_world()))?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged(format!(
                        "refinement loss became non-finite at epoch {epoch}, sample {}",
                        sample.source_id
                    )));
                }
                epoch_loss += value;
                let scaled = tape.scale(loss, 1.0 / chunk.len() as f64);
                tape.backward(scaled)?;
                tape.collect_param_grads(&encdec.params, &mut dec_grads);
                tape.collect_param_grads(&refiner.params, &mut ref_grads);
            }
            clip_joint_global_norm(&mut [&mut dec_grads, &mut ref_grads], GRADIENT_CLIP_NORM);
            dec_adam.update(&mut encdec.params, &dec_grads);
            ref_adam.update(&mut refiner.params, &ref_grads);
        }
        loss_curve.push(epoch_loss / samples.len() as f64);
    }
    Ok(RefineReport { loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{rasterize_roads, CHANNELS};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn road_map() -> SemanticMap {
        let line = vec![vec![Point::new(-10.0, 0.0), Point::new(20.0, 0.0)]];
        rasterize_roads(&line, 0.5, 2.5, 5.0).unwrap()
    }

    #[test]
    fn feature_dims_follow_conv_arithmetic() {
        let model = RefinementModel::new(CHANNELS, 1, false);
        let map = SemanticMap::new(CHANNELS, 64, 64, vec![0.0; CHANNELS * 64 * 64], 0.5, (0.0, 0.0))
            .unwrap();
        let f = model.extract_feature_map(&map).unwrap();
        assert_eq!((f.geo.height, f.geo.width), (32, 32));
        assert_eq!(f.grid.len(), FEATURE_CHANNELS * 32 * 32);
    }

    #[test]
    fn zero_map_zero_biases_gives_zero_features() {
        let model = RefinementModel::new(CHANNELS, 2, false);
        let map = SemanticMap::new(CHANNELS, 16, 16, vec![0.0; CHANNELS * 16 * 16], 0.5, (0.0, 0.0))
            .unwrap();
        let f = model.extract_feature_map(&map).unwrap();
        assert!(f.grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extraction_matches_naive_conv_bn_relu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w) = (10, 12);
        let grid: Vec<f64> = (0..CHANNELS * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let map = SemanticMap::new(CHANNELS, h, w, grid.clone(), 0.5, (0.0, 0.0)).unwrap();
        let mut model = RefinementModel::new(CHANNELS, 3, false);
        // give BN non-trivial eval statistics
        model.bn1_stats.mean.iter_mut().enumerate().for_each(|(i, m)| *m = 0.01 * i as f64);
        model.bn2_stats.var.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + 0.1 * i as f64);
        let got = model.extract_feature_map(&map).unwrap();

        let naive_conv = |x: &[f64], (ic, ih, iw): (usize, usize, usize), oc: usize, stride: usize, wt: &[f64], b: &[f64]| {
            let oh = (ih + 2 - 3) / stride + 1;
            let ow = (iw + 2 - 3) / stride + 1;
            let mut out = vec![0.0; oc * oh * ow];
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ic {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < ih && (ix as usize) < iw {
                                        acc += wt[((o * ic + c) * 3 + ky) * 3 + kx]
                                            * x[(c * ih + iy as usize) * iw + ix as usize];
                                    }
                                }
                            }
                        }
                        out[(o * oh + oy) * ow + ox] = acc;
                    }
                }
            }
            (out, oh, ow)
        };
        let bn_relu = |x: &[f64], c: usize, stats: &RunningStats, gamma: &[f64], beta: &[f64]| {
            let per = x.len() / c;
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = i / per;
                    let n = (v - stats.mean[ch]) / (stats.var[ch] + 1e-5).sqrt();
                    (gamma[ch] * n + beta[ch]).max(0.0)
                })
                .collect::<Vec<f64>>()
        };
        let p = &model.params;
        let (c1, h1, w1) = naive_conv(
            &grid,
            (CHANNELS, h, w),
            8,
            2,
            p.get(model.conv1.w).data(),
            p.get(model.conv1.b).data(),
        );
        let a1 = bn_relu(&c1, 8, &model.bn1_stats, p.get(model.conv1.gamma).data(), p.get(model.conv1.beta).data());
        let (c2, _, _) = naive_conv(
            &a1,
            (8, h1, w1),
            FEATURE_CHANNELS,
            1,
            p.get(model.conv2.w).data(),
            p.get(model.conv2.b).data(),
        );
        let a2 = bn_relu(&c2, FEATURE_CHANNELS, &model.bn2_stats, p.get(model.conv2.gamma).data(), p.get(model.conv2.beta).data());
        assert_eq!(got.grid.len(), a2.len());
        for (g, o) in got.grid.iter().zip(&a2) {
            assert!((g - o).abs() < 1e-10, "{g} vs {o}");
        }
    }

    #[test]
    fn pooling_hand_cases() {
        let geo = FeatureGeo {
            height: 2,
            width: 2,
            resolution: 1.0,
            origin: (0.0, 0.0),
            downsample: 1.0,
        };
        // channel 0: [[1,2],[3,4]], channel 1: [[5,6],[7,8]]
        let features = FeatureMap {
            channels: 2,
            grid: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            geo,
        };
        let out = pool_features(&features, &[
            Point::new(1.0, 0.0),      // exact cell
            Point::new(0.5, 0.0),      // midway between two cells
            Point::new(100.0, 100.0),  // far outside
        ]);
        assert_eq!(out[0], vec![2.0, 6.0]);
        assert_eq!(out[1], vec![1.5, 5.5]);
        assert_eq!(out[2], vec![0.0, 0.0]);
    }

    #[test]
    fn pooling_translation_consistency() {
        let map = road_map();
        let model = RefinementModel::new(CHANNELS, 4, false);
        let f = model.extract_feature_map(&map).unwrap();
        let mut shifted = f.clone();
        let d = (13.25, -7.5);
        shifted.geo.origin = (f.geo.origin.0 + d.0, f.geo.origin.1 + d.1);
        let pts = vec![Point::new(1.0, 0.4), Point::new(4.7, -1.1)];
        let moved: Vec<Point> = pts.iter().map(|p| Point::new(p.x + d.0, p.y + d.1)).collect();
        let a = pool_features(&f, &pts);
        let b = pool_features(&shifted, &moved);
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_offset_head_is_identity() {
        let map = road_map();
        let model = RefinementModel::new(CHANNELS, 5, false);
        let pred: Vec<Point> = (0..8).map(|i| Point::new(i as f64, 0.3)).collect();
        let pi = vec![0.1; CODE_WIDTH];
        let (out, stages) = model.refine(&pred, &pi, &map, REFINE_ITERATIONS).unwrap();
        assert_eq!(stages.len(), REFINE_ITERATIONS);
        for (a, b) in out.iter().zip(&pred) {
            assert_relative_eq!(a.x, b.x);
            assert_relative_eq!(a.y, b.y);
        }
        // determinism
        let (again, _) = model.refine(&pred, &pi, &map, REFINE_ITERATIONS).unwrap();
        assert_eq!(out, again);
    }
}
