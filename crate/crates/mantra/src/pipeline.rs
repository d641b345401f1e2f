//! End-to-end orchestration: data generation, the three-phase training
//! schedule (autoencoder, write controller, refinement + decoder finetune),
//! memory filling, and evaluation, with artifacts written after every stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::files::{load_dataset, load_map, save_dataset, save_map};
use crate::data::{generate, Point, Sample, SemanticMap, Trajectory};
use crate::encdec::{pretrain_autoencoder, EncDecModel, PretrainConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, linear_baseline, mlp_baseline, Baselines, EvalConfig, EvalReport, MlpConfig, Variant,
};
use crate::memory::{fill_memory, fill_memory_all, train_controller, Controller, MemoryStore};
use crate::persist::{save_checkpoint, save_memory, save_report};
use crate::refine::{train_refinement, RefineConfig, RefinementModel};

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name.into(),
        source: Box::new(e),
    })
}

/// Train/test samples plus the scenario maps they reference.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub maps: BTreeMap<String, SemanticMap>,
}

pub fn train_path(dir: &Path) -> PathBuf {
    dir.join("train.tracks")
}

pub fn test_path(dir: &Path) -> PathBuf {
    dir.join("test.tracks")
}

pub fn maps_dir(dir: &Path) -> PathBuf {
    dir.join("maps")
}

/// Generates the synthetic scenario suite and writes a trajectory-level
/// train/test split plus all scenario maps under `dir`.
pub fn generate_data(config: &RunConfig, dir: &Path) -> Result<()> {
    let hash = config.hash();
    let dataset = generate(&config.synth(), config.sub_seed("data"))?;
    let mut order: Vec<usize> = (0..dataset.trajectories.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.sub_seed("split"));
    order.shuffle(&mut rng);
    let n_test = ((dataset.trajectories.len() as f64 * config.test_fraction).round() as usize)
        .clamp(1, dataset.trajectories.len().saturating_sub(1));
    let pick = |idx: &[usize]| -> Vec<Trajectory> {
        let mut t: Vec<Trajectory> = idx.iter().map(|&i| dataset.trajectories[i].clone()).collect();
        t.sort_by(|a, b| a.track_id.cmp(&b.track_id));
        t
    };
    let test = pick(&order[..n_test]);
    let train = pick(&order[n_test..]);

    std::fs::create_dir_all(maps_dir(dir))?;
    save_dataset(&train_path(dir), &train, &hash)?;
    save_dataset(&test_path(dir), &test, &hash)?;
    for (key, map) in &dataset.maps {
        save_map(&maps_dir(dir).join(format!("{key}.map")), map, &hash)?;
    }
    std::fs::write(dir.join("config.txt"), config.serialize())?;
    Ok(())
}

fn rotate_sample(sample: &mut Sample, theta: f64) {
    let (s, c) = theta.sin_cos();
    let rot = |p: &mut Point| {
        let (x, y) = (p.x, p.y);
        p.x = c * x - s * y;
        p.y = s * x + c * y;
    };
    sample.past.iter_mut().for_each(&rot);
    sample.future.iter_mut().for_each(&rot);
    sample.transform.rotation += theta;
}

fn chunk_split(
    trajectories: &[Trajectory],
    config: &RunConfig,
    rotation_seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for t in trajectories {
        out.extend(crate::data::sliding_window_chunks(
            t,
            config.past_len(),
            config.future_len(),
            1,
        )?);
    }
    if config.no_rotation_invariance {
        let mut rng = ChaCha8Rng::seed_from_u64(rotation_seed);
        for s in &mut out {
            rotate_sample(s, rng.gen_range(0.0..std::f64::consts::TAU));
        }
    }
    Ok(out)
}

/// Loads the split written by [`generate_data`] and chunks it into normalized
/// samples, applying the rotation-ablation when configured.
pub fn load_split(config: &RunConfig, dir: &Path) -> Result<SplitData> {
    let hash = config.hash();
    let mut maps = BTreeMap::new();
    let maps_dir = maps_dir(dir);
    if maps_dir.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&maps_dir)?
            .map(|e| Ok(e?.path()))
            .collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.extension().and_then(|e| e.to_str()) == Some("map") {
                let key = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Format(format!("bad map file name {path:?}")))?
                    .to_string();
                maps.insert(key, load_map(&path, Some(&hash))?);
            }
        }
    }
    let keys: Vec<String> = maps.keys().cloned().collect();
    let train_t = load_dataset(&train_path(dir), Some(&hash), &keys)?;
    let test_t = load_dataset(&test_path(dir), Some(&hash), &keys)?;
    Ok(SplitData {
        train: chunk_split(&train_t, config, config.sub_seed("rotation-train"))?,
        test: chunk_split(&test_t, config, config.sub_seed("rotation-test"))?,
        maps,
    })
}

/// All artifacts of one full run.
#[derive(Debug)]
pub struct PipelineOutput {
    pub report: EvalReport,
    pub checkpoint: PathBuf,
    pub memory: PathBuf,
    pub report_path: PathBuf,
}

pub fn pretrain_stage(config: &RunConfig, train: &[Sample]) -> Result<EncDecModel> {
    let mut model = EncDecModel::new(
        config.past_len(),
        config.future_len(),
        config.sub_seed("init"),
    );
    let pc = PretrainConfig {
        max_epochs: config.pretrain_epochs,
        patience: config.pretrain_patience,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        seed: config.sub_seed("shuffle"),
        target_train_mse: (config.pretrain_target_mse > 0.0).then_some(config.pretrain_target_mse),
    };
    pretrain_autoencoder(train, &mut model, &pc)?;
    Ok(model)
}

pub fn memory_stage(
    config: &RunConfig,
    train: &[Sample],
    model: &EncDecModel,
) -> Result<(Option<Controller>, MemoryStore)> {
    if config.no_controller {
        return Ok((None, fill_memory_all(train, model)?));
    }
    let (controller, _, _) = train_controller(
        train,
        model,
        config.controller_epochs,
        config.sub_seed("controller"),
    )?;
    let memory = fill_memory(train, model, &controller)?;
    Ok((Some(controller), memory))
}

pub fn refine_stage(
    config: &RunConfig,
    data: &SplitData,
    model: &mut EncDecModel,
    memory: &MemoryStore,
) -> Result<Option<RefinementModel>> {
    if config.no_refine {
        return Ok(None);
    }
    let mut refiner = RefinementModel::new(
        crate::data::CHANNELS,
        config.sub_seed("refine-init"),
        config.learned_bridge,
    );
    let rc = RefineConfig {
        epochs: config.refine_epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        seed: config.sub_seed("refine-shuffle"),
        iterations: config.refine_iterations,
    };
    train_refinement(&data.train, &data.maps, model, &mut refiner, memory, &rc)?;
    Ok(Some(refiner))
}

pub fn eval_variant(config: &RunConfig) -> Variant {
    if config.no_encdec {
        Variant::NearestNeighbor
    } else if config.no_decoder {
        Variant::CopyFuture
    } else {
        Variant::Standard
    }
}

pub fn baselines_stage(config: &RunConfig, train: &[Sample]) -> Result<Baselines> {
    Ok(Baselines {
        linear: linear_baseline(train)?,
        mlp: mlp_baseline(
            train,
            &MlpConfig {
                epochs: config.mlp_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                seed: config.sub_seed("mlp"),
                ..MlpConfig::default()
            },
        )?,
        kalman_sigma_q: 0.1,
        kalman_sigma_r: 0.1,
    })
}

pub fn eval_config(config: &RunConfig) -> EvalConfig {
    EvalConfig {
        k_list: config.k_list.clone(),
        sample_period: config.sample_period,
        refine_iterations: config.refine_iterations,
        variant: eval_variant(config),
        seed: config.seed,
        config_hash: config.hash(),
    }
}

/// Runs every stage in order, writing artifacts into `out_dir` as each stage
/// completes so a failed run leaves its partial outputs behind.
pub fn pipeline_run(config: &RunConfig, out_dir: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = config.hash();
    let ckpt_path = out_dir.join("model.ckpt");
    let memory_path = out_dir.join("memory.snap");
    let report_path = out_dir.join("report.csv");

    stage("gen-data", || generate_data(config, out_dir))?;
    let data = stage("gen-data", || load_split(config, out_dir))?;

    let mut model = stage("pretrain", || pretrain_stage(config, &data.train))?;
    save_checkpoint(&ckpt_path, &hash, &model, None, None)?;

    let (controller, memory) = stage("train-controller", || {
        memory_stage(config, &data.train, &model)
    })?;
    save_checkpoint(&ckpt_path, &hash, &model, None, controller.as_ref())?;
    save_memory(&memory_path, &memory, &hash)?;

    let refiner = stage("train-refine", || {
        refine_stage(config, &data, &mut model, &memory)
    })?;
    save_checkpoint(&ckpt_path, &hash, &model, refiner.as_ref(), controller.as_ref())?;

    let report = stage("evaluate", || {
        let baselines = baselines_stage(config, &data.train)?;
        evaluate(
            &data.test,
            &model,
            &memory,
            refiner.as_ref().map(|r| (r, &data.maps)),
            Some(&baselines),
            &eval_config(config),
        )
    })?;
    save_report(&report_path, &report)?;
    Ok(PipelineOutput {
        report,
        checkpoint: ckpt_path,
        memory: memory_path,
        report_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        RunConfig {
            seed: 5,
            n_straight: 2,
            n_arc: 1,
            n_junction: 1,
            duplicates: 3,
            pretrain_epochs: 3,
            controller_epochs: 1,
            refine_epochs: 1,
            mlp_epochs: 2,
            k_list: vec![1, 2],
            online_runs: 1,
            online_batch: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn data_stage_round_trip_and_split() {
        let dir = tempdir().unwrap();
        let config = tiny_config();
        generate_data(&config, dir.path()).unwrap();
        let data = load_split(&config, dir.path()).unwrap();
        assert!(!data.train.is_empty());
        assert!(!data.test.is_empty());
        assert!(!data.maps.is_empty());
        // split is disjoint by source trajectory
        let train_ids: std::collections::BTreeSet<&str> =
            data.train.iter().map(|s| s.source_id.as_str()).collect();
        for s in &data.test {
            assert!(!train_ids.contains(s.source_id.as_str()));
        }
        // loading with a different config hash is refused
        let mut other = config.clone();
        other.seed = 99;
        assert!(load_split(&other, dir.path()).is_err());
    }

    #[test]
    fn rotation_ablation_changes_samples_but_keeps_world_frame() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config();
        generate_data(&config, dir.path()).unwrap();
        let plain = load_split(&config, dir.path()).unwrap();
        config.no_rotation_invariance = true;
        // regenerate under the ablated config's hash
        generate_data(&config, dir.path()).unwrap();
        let rotated = load_split(&config, dir.path()).unwrap();
        assert_eq!(plain.train.len(), rotated.train.len());
        let a = &plain.train[0];
        let b = &rotated.train[0];
        assert_ne!(a.past, b.past);
        for (p, q) in a.future_world().iter().zip(b.future_world()) {
            assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn stage_failures_name_the_stage() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config();
        config.junction_branches = 7; // invalid generator setting
        match pipeline_run(&config, dir.path()) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "gen-data"),
            other => panic!("expected stage error, got {other:?}"),
        }
    }
}
