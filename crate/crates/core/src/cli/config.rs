//! Resolved run configuration.
//!
//! Layering is flags over config-file keys over built-in defaults. The file
//! is one flat JSON object whose keys are the flag names with underscores.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::continual::{ContinualConfig, DEFAULT_ORDER};
use crate::env::{make_variant, EnvVariant, TaskId, VariantKind};
use crate::policy::PretrainConfig;
use crate::tuning::{LabelSource, LossKind, Trainable, TuneConfig};

/// Keys that change how a run executes but never what it writes.
const EXECUTION_KEYS: [&str; 3] = ["workers", "out", "bind"];

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub beta: f64,
    pub lr: f64,
    pub full_lr: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub loss: LossKind,
    pub trainable: Trainable,
    pub k_pos: usize,
    pub k_neg: usize,
    pub collect_n: usize,
    pub slic_delta: f64,
    pub slic_lambda: f64,
    pub rank: usize,
    pub anchor_initial: bool,
    pub eval_n: usize,

    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub bundle: Option<PathBuf>,
    pub task: TaskId,
    pub variant: VariantKind,
    pub variant_seed: u64,

    pub label_source: LabelSource,
    pub labels: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub latent: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub prompt_noise: f64,
    pub prompt_seed: u64,

    pub latent_dim: usize,
    pub demos_per_task: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub latent_noise: f64,

    pub betas: Vec<f64>,
    pub prompts: usize,
    pub tasks: Vec<TaskId>,
    pub methods: Vec<String>,
    pub lambda_ewc: f64,
    pub replay_quota: usize,
    pub lambda_kd: f64,

    pub bind: String,
    pub reveal_rewards: bool,
    pub labeler_id: String,
    pub static_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TuneConfig::default();
        let p = PretrainConfig::default();
        let c = ContinualConfig::default();
        RunConfig {
            beta: t.beta,
            lr: t.lr,
            full_lr: t.full_lr,
            epochs: t.epochs,
            rounds: t.rounds,
            loss: t.loss,
            trainable: t.trainable,
            k_pos: t.k_pos,
            k_neg: t.k_neg,
            collect_n: t.collect_n,
            slic_delta: t.slic_delta,
            slic_lambda: t.slic_lambda,
            rank: t.rank,
            anchor_initial: t.anchor_initial,
            eval_n: t.eval_n,
            seed: t.seed,
            workers: t.workers,
            out: PathBuf::from("out"),
            bundle: None,
            task: TaskId::Collect,
            variant: VariantKind::InDistribution,
            variant_seed: 0,
            label_source: LabelSource::Reward,
            labels: None,
            trajectories: None,
            latent: None,
            adapter: None,
            prompt_noise: 0.3,
            prompt_seed: 1000,
            latent_dim: p.latent_dim,
            demos_per_task: p.demos_per_task,
            pretrain_epochs: p.epochs,
            pretrain_lr: p.lr,
            latent_noise: p.latent_noise,
            betas: vec![0.05, 0.2, 0.4, 0.6, 1.0],
            prompts: 3,
            tasks: DEFAULT_ORDER.to_vec(),
            methods: ["pgt", "ncl", "ewc", "er", "kd", "mtl"]
                .map(String::from)
                .to_vec(),
            lambda_ewc: c.lambda_ewc,
            replay_quota: c.replay_quota,
            lambda_kd: c.lambda_kd,
            bind: "127.0.0.1:8787".into(),
            reveal_rewards: false,
            labeler_id: "anonymous".into(),
            static_dir: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Overlay `flags` (already stripped of unset entries) on `file` on the defaults.
pub fn resolve(file: Option<&Path>, flags: Map<String, Value>) -> Result<RunConfig, CliError> {
    let Value::Object(mut merged) =
        serde_json::to_value(RunConfig::default()).expect("config serializes")
    else {
        unreachable!("config is a JSON object")
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {} is not JSON: {e}", path.display())))?;
        let Value::Object(keys) = value else {
            return Err(usage(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        };
        for (k, v) in keys {
            if !merged.contains_key(&k) {
                return Err(usage(format!("unknown config key '{k}'")));
            }
            merged.insert(k, v);
        }
    }
    merged.extend(flags);
    let config: RunConfig = serde_json::from_value(Value::Object(merged))
        .map_err(|e| usage(format!("invalid config: {e}")))?;
    config.check()?;
    Ok(config)
}

impl RunConfig {
    fn check(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(usage("workers must be at least 1"));
        }
        if self.label_source == LabelSource::Human && self.labels.is_none() {
            return Err(usage("label source human needs --labels"));
        }
        if !(self.prompt_noise >= 0.0 && self.prompt_noise <= 1.0) {
            return Err(usage("prompt_noise must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Fail unless `path` is set and exists.
    pub fn input(&self, name: &str, path: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p = path
            .as_ref()
            .ok_or_else(|| usage(format!("--{name} is required")))?;
        if !p.exists() {
            return Err(usage(format!("--{name} {} does not exist", p.display())));
        }
        Ok(p.clone())
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig {
            beta: self.beta,
            lr: self.lr,
            full_lr: self.full_lr,
            epochs: self.epochs,
            rounds: self.rounds,
            loss: self.loss,
            trainable: self.trainable,
            k_pos: self.k_pos,
            k_neg: self.k_neg,
            collect_n: self.collect_n,
            slic_delta: self.slic_delta,
            slic_lambda: self.slic_lambda,
            rank: self.rank,
            anchor_initial: self.anchor_initial,
            eval_n: self.eval_n,
            seed: self.seed,
            workers: self.workers,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            latent_dim: self.latent_dim,
            demos_per_task: self.demos_per_task,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            latent_noise: self.latent_noise,
            seed: self.seed,
            ..PretrainConfig::default()
        }
    }

    pub fn continual_config(&self) -> ContinualConfig {
        ContinualConfig {
            tune: self.tune_config(),
            lambda_ewc: self.lambda_ewc,
            replay_quota: self.replay_quota,
            lambda_kd: self.lambda_kd,
        }
    }

    pub fn env_variant(&self) -> crate::Result<EnvVariant> {
        make_variant(self.task, self.variant, self.variant_seed)
    }

    /// The config as written next to the artifacts: execution-only keys
    /// dropped so the file is identical across worker counts.
    pub fn artifact_json(&self) -> Map<String, Value> {
        let Value::Object(mut m) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a JSON object")
        };
        for k in EXECUTION_KEYS {
            m.remove(k);
        }
        m
    }

    /// SHA-256 of the artifact JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.artifact_json()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Echo the resolved config into `dir`, refusing a directory that already
/// holds artifacts of a different config.
pub fn claim_output_dir(config: &RunConfig, command: &str) -> Result<String, CliError> {
    let dir = &config.out;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
    let hash = config.hash();
    let path = dir.join(CONFIG_FILE);
    if let Ok(text) = std::fs::read_to_string(&path) {
        let existing: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{} is not JSON: {e}", path.display())))?;
        let found = existing
            .get("config_hash")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let cmd = existing
            .get("command")
            .and_then(Value::as_str)
            .unwrap_or_default();
        if found != hash || cmd != command {
            return Err(CliError::Data(format!(
                "{} holds artifacts of {cmd} with config {found}; refusing to mix with {command} {hash}",
                dir.display()
            )));
        }
    }
    let mut doc = Map::new();
    doc.insert("command".into(), Value::from(command));
    doc.insert("config_hash".into(), Value::from(hash.clone()));
    doc.insert("config".into(), Value::Object(config.artifact_json()));
    let mut text = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializes");
    text.push('\n');
    std::fs::write(&path, text)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
    Ok(hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, Value)]) -> Map<String, Value> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"beta": 0.4, "epochs": 7, "task": "hunt"}"#).unwrap();
        let c = resolve(Some(&file), flags(&[("beta", Value::from(0.2))])).unwrap();
        assert_eq!(c.beta, 0.2);
        assert_eq!(c.epochs, 7);
        assert_eq!(c.task, TaskId::Hunt);
        assert_eq!(c.lr, 1e-2);
        assert_eq!((c.k_pos, c.k_neg, c.collect_n), (150, 150, 500));
    }

    #[test]
    fn unknown_keys_and_missing_labels_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"betta": 0.4}"#).unwrap();
        assert!(matches!(
            resolve(Some(&file), Map::new()),
            Err(CliError::Usage(_))
        ));
        let human = flags(&[("label_source", Value::from("human"))]);
        assert!(matches!(resolve(None, human), Err(CliError::Usage(_))));
    }

    #[test]
    fn hash_ignores_worker_count() {
        let a = resolve(None, flags(&[("workers", Value::from(1))])).unwrap();
        let b = resolve(None, flags(&[("workers", Value::from(4))])).unwrap();
        let c = resolve(None, flags(&[("seed", Value::from(4))])).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn output_dir_rejects_foreign_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = Value::from(dir.path().to_str().unwrap());
        let a = resolve(None, flags(&[("out", out.clone())])).unwrap();
        let b = resolve(None, flags(&[("out", out), ("seed", Value::from(9))])).unwrap();
        claim_output_dir(&a, "collect").unwrap();
        claim_output_dir(&a, "collect").unwrap();
        assert!(matches!(
            claim_output_dir(&b, "collect"),
            Err(CliError::Data(_))
        ));
        assert!(matches!(
            claim_output_dir(&a, "tune"),
            Err(CliError::Data(_))
        ));
    }
}
