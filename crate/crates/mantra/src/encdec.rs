//! Past/future trajectory encoders and the conditioned future decoder,
//! trained jointly as an autoencoder that reconstructs future coordinates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    dense, gru_step, AdamState, DenseParams, Grads, GruParams, ParamVec, Tape, Var,
};
use crate::data::{Point, Sample};
use crate::error::{Error, Result};

/// Width of past (pi) and future (phi) embeddings.
pub const CODE_WIDTH: usize = 48;
/// Decoder hidden width: concatenated [pi; phi].
pub const DECODER_WIDTH: usize = 2 * CODE_WIDTH;

pub const GRADIENT_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct EncDecModel {
    pub params: ParamVec,
    pub past_len: usize,
    pub future_len: usize,
    pub past_encoder: GruParams,
    pub future_encoder: GruParams,
    pub decoder: GruParams,
    pub output_head: DenseParams,
}

impl EncDecModel {
    pub fn new(past_len: usize, future_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVec::new();
        let past_encoder = GruParams::init(&mut params, "enc_past", 2, CODE_WIDTH, &mut rng);
        let future_encoder = GruParams::init(&mut params, "enc_future", 2, CODE_WIDTH, &mut rng);
        let decoder = GruParams::init(&mut params, "decoder", 0, DECODER_WIDTH, &mut rng);
        let output_head = DenseParams::init(&mut params, "head", DECODER_WIDTH, 2, &mut rng);
        EncDecModel {
            params,
            past_len,
            future_len,
            past_encoder,
            future_encoder,
            decoder,
            output_head,
        }
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        gru: &GruParams,
        points: &[Point],
    ) -> Result<Var> {
        let mut h = tape.constant(&vec![0.0; CODE_WIDTH]);
        for p in points {
            let x = tape.constant(&[p.x, p.y]);
            h = gru_step(tape, &self.params, gru, Some(x), h)?;
        }
        Ok(h)
    }

    pub fn encode_past_on_tape(&self, tape: &mut Tape, past: &[Point]) -> Result<Var> {
        if past.len() != self.past_len {
            return Err(Error::Shape(format!(
                "encode_past: expected {} points, got {}",
                self.past_len,
                past.len()
            )));
        }
        self.encode_on_tape(tape, &self.past_encoder, past)
    }

    pub fn encode_future_on_tape(&self, tape: &mut Tape, future: &[Point]) -> Result<Var> {
        if future.len() != self.future_len {
            return Err(Error::Shape(format!(
                "encode_future: expected {} points, got {}",
                self.future_len,
                future.len()
            )));
        }
        self.encode_on_tape(tape, &self.future_encoder, future)
    }

    /// Final GRU hidden state after consuming the past in temporal order.
    pub fn encode_past(&self, past: &[Point]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let h = self.encode_past_on_tape(&mut tape, past)?;
        Ok(tape.value(h).to_vec())
    }

    pub fn encode_future(&self, future: &[Point]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let h = self.encode_future_on_tape(&mut tape, future)?;
        Ok(tape.value(h).to_vec())
    }

    /// Zero-input decoder unroll from hidden state [pi; phi]; the affine head
    /// emits absolute canonical coordinates per step.
    pub fn decode_on_tape(&self, tape: &mut Tape, pi: Var, phi: Var) -> Result<Vec<Var>> {
        if tape.len(pi) != CODE_WIDTH || tape.len(phi) != CODE_WIDTH {
            return Err(Error::Shape(format!(
                "decode: embedding widths {} and {} != {CODE_WIDTH}",
                tape.len(pi),
                tape.len(phi)
            )));
        }
        let mut h = tape.concat(&[pi, phi]);
        let mut out = Vec::with_capacity(self.future_len);
        for _ in 0..self.future_len {
            h = gru_step(tape, &self.params, &self.decoder, None, h)?;
            out.push(dense(tape, &self.params, &self.output_head, h)?);
        }
        Ok(out)
    }

    /// Decode a future conditioned on a past embedding, in the canonical frame.
    pub fn decode(&self, pi: &[f64], phi: &[f64]) -> Result<Vec<Point>> {
        if pi.iter().chain(phi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("decode: non-finite encoding".into()));
        }
        let mut tape = Tape::new();
        let pi = tape.constant(pi);
        let phi = tape.constant(phi);
        let steps = self.decode_on_tape(&mut tape, pi, phi)?;
        Ok(steps
            .iter()
            .map(|&s| {
                let v = tape.value(s);
                Point::new(v[0], v[1])
            })
            .collect())
    }

    /// Reconstruction loss decode(pi(x_P), phi(x_F)) vs x_F on one tape.
    pub fn reconstruction_loss(&self, tape: &mut Tape, sample: &Sample) -> Result<Var> {
        let pi = self.encode_past_on_tape(tape, &sample.past)?;
        let phi = self.encode_future_on_tape(tape, &sample.future)?;
        let steps = self.decode_on_tape(tape, pi, phi)?;
        let pred = tape.concat(&steps);
        tape.mse(pred, &sample.future_flat())
    }

    /// Mean reconstruction MSE over samples (no gradients).
    pub fn mean_mse(&self, samples: &[Sample]) -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            let mut tape = Tape::new();
            let loss = self.reconstruction_loss(&mut tape, s)?;
            total += tape.scalar(loss);
        }
        Ok(total / samples.len().max(1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Optional early exit once training MSE drops below this value.
    pub target_train_mse: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            max_epochs: 5000,
            patience: 200,
            learning_rate: crate::autodiff::DEFAULT_LEARNING_RATE,
            batch_size: 32,
            seed: 0,
            target_train_mse: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epochs: usize,
    pub best_val_mse: f64,
    pub final_train_mse: f64,
    /// Per-epoch mean training loss.
    pub train_curve: Vec<f64>,
}

/// Joint autoencoder pretraining of both encoders and the decoder,
/// reconstructing only the future coordinates. Keeps the parameters with the
/// best validation MSE (10% split, seeded).
pub fn pretrain_autoencoder(
    samples: &[Sample],
    model: &mut EncDecModel,
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    if samples.is_empty() {
        return Err(Error::Input("pretrain: empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = samples.len() / 10;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<Sample> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| samples[i].clone()).collect()
    } else {
        val_idx.iter().map(|&i| samples[i].clone()).collect()
    };

    let mut adam = AdamState::new(&model.params, config.learning_rate);
    let mut grads = Grads::new(&model.params);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut since_best = 0;
    let mut train_curve = Vec::new();
    let mut epochs = 0;

    let mut batch_order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in batch_order.chunks(config.batch_size) {
            grads.reset();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape = Tape::new();
                let loss = model.reconstruction_loss(&mut tape, train[i])?;
                let scaled = tape.scale(loss, 1.0 / chunk.len() as f64);
                tape.backward(scaled)?;
                tape.collect_param_grads(&model.params, &mut grads);
                batch_loss += tape.scalar(loss);
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "pretraining loss became non-finite at epoch {epoch}"
                )));
            }
            grads.clip_global_norm(GRADIENT_CLIP_NORM);
            adam.update(&mut model.params, &grads);
            epoch_loss += batch_loss * chunk.len() as f64;
        }
        epoch_loss /= train.len() as f64;
        train_curve.push(epoch_loss);

        let val_mse = model.mean_mse(&val)?;
        if val_mse < best_val {
            best_val = val_mse;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
        if let Some(target) = config.target_train_mse {
            if epoch_loss < target {
                break;
            }
        }
    }
    model.params = best_params;
    let final_train_mse = {
        let owned: Vec<Sample> = train.iter().map(|s| (*s).clone()).collect();
        model.mean_mse(&owned)?
    };
    Ok(PretrainReport {
        epochs,
        best_val_mse: best_val,
        final_train_mse,
        train_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize;

    fn sample(dx: f64) -> Sample {
        let past: Vec<Point> = (0..4).map(|i| Point::new(dx * i as f64, i as f64)).collect();
        let future: Vec<Point> = (4..12).map(|i| Point::new(dx * i as f64, i as f64)).collect();
        normalize("s", &past, &future).unwrap()
    }

    #[test]
    fn encoding_shape_and_determinism() {
        let model = EncDecModel::new(4, 8, 3);
        let s = sample(0.1);
        let a = model.encode_past(&s.past).unwrap();
        let b = model.encode_past(&s.past).unwrap();
        assert_eq!(a.len(), CODE_WIDTH);
        assert_eq!(a, b);
        let f = model.encode_future(&s.future).unwrap();
        assert_eq!(f.len(), CODE_WIDTH);
        // wrong length rejected
        assert!(model.encode_past(&s.future).is_err());
        assert!(model.encode_future(&s.past).is_err());
    }

    #[test]
    fn decode_shape_contract_and_rejections() {
        let model = EncDecModel::new(4, 8, 3);
        let s = sample(0.2);
        let pi = model.encode_past(&s.past).unwrap();
        let phi = model.encode_future(&s.future).unwrap();
        let out = model.decode(&pi, &phi).unwrap();
        assert_eq!(out.len(), 8);
        let mut bad = pi.clone();
        bad[0] = f64::NAN;
        assert!(model.decode(&bad, &phi).is_err());
        assert!(model.decode(&pi[..10], &phi).is_err());
    }

    #[test]
    fn decode_reads_only_the_encoding() {
        let model = EncDecModel::new(4, 8, 3);
        let s = sample(0.2);
        let pi = model.encode_past(&s.past).unwrap();
        let phi = model.encode_future(&s.future).unwrap();
        let before = model.decode(&pi, &phi).unwrap();
        // perturbing the raw future after phi is computed changes nothing
        let mut perturbed = s.clone();
        perturbed.future[0].x += 100.0;
        let after = model.decode(&pi, &phi).unwrap();
        assert_eq!(before, after);
        drop(perturbed);
    }

    #[test]
    fn single_sample_memorization() {
        let mut model = EncDecModel::new(4, 8, 5);
        let s = sample(0.3);
        let config = PretrainConfig {
            max_epochs: 5000,
            patience: 5000,
            learning_rate: 0.0001,
            batch_size: 1,
            seed: 1,
            target_train_mse: Some(1e-4),
        };
        let report = pretrain_autoencoder(&[s.clone()], &mut model, &config).unwrap();
        assert!(
            report.final_train_mse < 1e-4,
            "train mse {} after {} epochs",
            report.final_train_mse,
            report.epochs
        );
    }
}
