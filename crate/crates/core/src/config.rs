//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are an error. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `train_data`, `eval_data` | unset | dataset manifests |
//! | `checkpoint` | unset | model checkpoint path |
//! | `history` | unset | JSON-lines loss history |
//! | `loss_csv` | unset | `epoch,loss` CSV of epoch means |
//! | `report` | unset | evaluation report JSON |
//! | `episode_log` | unset | per-episode accuracies, JSON lines |
//! | `encoder` | `mlp` | `mlp` or `identity` |
//! | `hidden_dim` | 64 | encoder hidden width |
//! | `embed_dim` | 32 | embedding width |
//! | `samp_steps`, `samp_heads` | 1, 4 | message-passing steps and heads |
//! | `batch_sources`, `augmentations` | 16, 3 | sources and copies per batch |
//! | `beta` | 0.7 | weight of the raw-embedding loss |
//! | `learning_rate`, `optimizer`, `epochs` | 0.001, `adam`, 50 | optimization |
//! | `gamma` | 0 | graph similarity threshold |
//! | `jitter_sigma`, `scale_lo`, `scale_hi`, `mask_fraction` | 0.1, 0.9, 1.1, 0.1 | augmentation |
//! | `ways`, `shots`, `queries`, `episodes` | 5, 1, 15, 600 | evaluation protocol |
//! | `ot` | `true` | transport supports onto queries |
//! | `finetune_iters`, `finetune_lr`, `finetune_subset` | 15, 0.01, `half_per_class` | classifier fine-tuning |
//! | `epsilon`, `sinkhorn_max_iter`, `sinkhorn_tol` | 0.05, 1000, 1e-9 | Sinkhorn |
//! | `seed` | 0 | master seed |

use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::{EncoderParams, DEFAULT_HIDDEN};
use crate::episodes::Protocol;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::Rng;
use crate::ot::SinkhornConfig;
use crate::pretrain::{AugmentationSpec, OptimizerKind, PretrainConfig};
use crate::proto::SubsetRule;
use crate::samp::SampParams;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EncoderKind {
    #[default]
    Mlp,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub episode_log: Option<PathBuf>,
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub samp_steps: usize,
    pub samp_heads: usize,
    pub pretrain: PretrainConfig,
    pub protocol: Protocol,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_data: None,
            eval_data: None,
            checkpoint: None,
            history: None,
            loss_csv: None,
            report: None,
            episode_log: None,
            encoder: EncoderKind::Mlp,
            hidden_dim: DEFAULT_HIDDEN,
            embed_dim: 32,
            samp_steps: 1,
            samp_heads: 4,
            pretrain: PretrainConfig::default(),
            protocol: Protocol::default(),
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse(format!("invalid value {value:?} for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("invalid value {value:?} for key `{key}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let pt = &mut self.pretrain;
        let aug = &mut pt.augmentation;
        let pr = &mut self.protocol;
        match key {
            "train_data" => self.train_data = Some(v.into()),
            "eval_data" => self.eval_data = Some(v.into()),
            "checkpoint" => self.checkpoint = Some(v.into()),
            "history" => self.history = Some(v.into()),
            "loss_csv" => self.loss_csv = Some(v.into()),
            "report" => self.report = Some(v.into()),
            "episode_log" => self.episode_log = Some(v.into()),
            "encoder" => {
                self.encoder = match v {
                    "mlp" => EncoderKind::Mlp,
                    "identity" => EncoderKind::Identity,
                    _ => return Err(Error::Parse(format!("invalid value {v:?} for key `encoder`"))),
                }
            }
            "hidden_dim" => self.hidden_dim = parse_value(key, v)?,
            "embed_dim" => self.embed_dim = parse_value(key, v)?,
            "samp_steps" => self.samp_steps = parse_value(key, v)?,
            "samp_heads" => self.samp_heads = parse_value(key, v)?,
            "batch_sources" => pt.sources = parse_value(key, v)?,
            "augmentations" => pt.augmentations = parse_value(key, v)?,
            "beta" => pt.beta = parse_value(key, v)?,
            "learning_rate" => pt.learning_rate = parse_value(key, v)?,
            "gamma" => {
                pt.gamma = parse_value(key, v)?;
                pr.gamma = pt.gamma;
            }
            "epochs" => pt.epochs = parse_value(key, v)?,
            "optimizer" => {
                pt.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::Parse(format!("invalid value {v:?} for key `optimizer`"))),
                }
            }
            "jitter_sigma" => aug.jitter_sigma = parse_value(key, v)?,
            "scale_lo" => aug.scale_lo = parse_value(key, v)?,
            "scale_hi" => aug.scale_hi = parse_value(key, v)?,
            "mask_fraction" => aug.mask_fraction = parse_value(key, v)?,
            "ways" => pr.ways = parse_value(key, v)?,
            "shots" => pr.shots = parse_value(key, v)?,
            "queries" => pr.queries = parse_value(key, v)?,
            "episodes" => pr.episodes = parse_value(key, v)?,
            "ot" => pr.ot_enabled = parse_bool(key, v)?,
            "finetune_iters" => pr.finetune_iters = parse_value(key, v)?,
            "finetune_lr" => pr.finetune_lr = parse_value(key, v)?,
            "finetune_subset" => {
                pr.finetune_subset = match v {
                    "half_per_class" => SubsetRule::HalfPerClass,
                    "full_batch" => SubsetRule::FullBatch,
                    _ => return Err(Error::Parse(format!("invalid value {v:?} for key `finetune_subset`"))),
                }
            }
            "epsilon" => pr.sinkhorn.epsilon = parse_value(key, v)?,
            "sinkhorn_max_iter" => pr.sinkhorn.max_iterations = parse_value(key, v)?,
            "sinkhorn_tol" => pr.sinkhorn.tolerance = parse_value(key, v)?,
            "seed" => self.set_seed(parse_value(key, v)?),
            _ => return Err(Error::Parse(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.pretrain.seed = seed;
    }

    /// Apply a `SAMP_SEED`-style override.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.set_seed(parse_value("SAMP_SEED", v.trim())?);
        }
        Ok(())
    }

    /// Every key with its current value; unset paths are left out.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        for (k, p) in [
            ("train_data", &self.train_data),
            ("eval_data", &self.eval_data),
            ("checkpoint", &self.checkpoint),
            ("history", &self.history),
            ("loss_csv", &self.loss_csv),
            ("report", &self.report),
            ("episode_log", &self.episode_log),
        ] {
            if let Some(p) = p {
                put(k, &p.display());
            }
        }
        let (pt, pr) = (&self.pretrain, &self.protocol);
        let aug = &pt.augmentation;
        put("encoder", &if self.encoder == EncoderKind::Mlp { "mlp" } else { "identity" });
        put("hidden_dim", &self.hidden_dim);
        put("embed_dim", &self.embed_dim);
        put("samp_steps", &self.samp_steps);
        put("samp_heads", &self.samp_heads);
        put("batch_sources", &pt.sources);
        put("augmentations", &pt.augmentations);
        put("beta", &format!("{:?}", pt.beta));
        put("learning_rate", &format!("{:?}", pt.learning_rate));
        put("gamma", &format!("{:?}", pt.gamma));
        put("epochs", &pt.epochs);
        put("optimizer", &if pt.optimizer == OptimizerKind::Sgd { "sgd" } else { "adam" });
        put("jitter_sigma", &format!("{:?}", aug.jitter_sigma));
        put("scale_lo", &format!("{:?}", aug.scale_lo));
        put("scale_hi", &format!("{:?}", aug.scale_hi));
        put("mask_fraction", &format!("{:?}", aug.mask_fraction));
        put("ways", &pr.ways);
        put("shots", &pr.shots);
        put("queries", &pr.queries);
        put("episodes", &pr.episodes);
        put("ot", &pr.ot_enabled);
        put("finetune_iters", &pr.finetune_iters);
        put("finetune_lr", &format!("{:?}", pr.finetune_lr));
        put(
            "finetune_subset",
            &if pr.finetune_subset == SubsetRule::HalfPerClass { "half_per_class" } else { "full_batch" },
        );
        put("epsilon", &format!("{:?}", pr.sinkhorn.epsilon));
        put("sinkhorn_max_iter", &pr.sinkhorn.max_iterations);
        put("sinkhorn_tol", &format!("{:?}", pr.sinkhorn.tolerance));
        put("seed", &self.seed);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim and embed_dim must be positive".into()));
        }
        if self.samp_heads == 0 || !self.embed_dim.is_multiple_of(self.samp_heads) {
            return Err(Error::InvalidArgument(format!(
                "samp_heads = {} must divide embed_dim = {}",
                self.samp_heads, self.embed_dim
            )));
        }
        let pr = &self.protocol;
        if pr.ways == 0 || pr.shots == 0 || pr.queries == 0 || pr.episodes == 0 {
            return Err(Error::InvalidArgument("ways, shots, queries and episodes must be positive".into()));
        }
        if !(pr.finetune_lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("finetune_lr {} must be >= 0", pr.finetune_lr)));
        }
        pr.sinkhorn.validate()?;
        self.pretrain.validate()
    }

    /// Fresh model for `input_dim` features. The identity encoder uses the
    /// input width as the embedding width.
    pub fn init_model(&self, input_dim: usize) -> Result<Model> {
        let mut rng = Rng::new(self.seed);
        let encoder = match self.encoder {
            EncoderKind::Mlp => EncoderParams::mlp(&[input_dim, self.hidden_dim, self.embed_dim], &mut rng)?,
            EncoderKind::Identity => EncoderParams::identity(input_dim),
        };
        let samp = SampParams::new(encoder.output_dim(), self.samp_steps, self.samp_heads, &mut rng)?;
        Model::new(encoder, samp)
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        self.protocol.sinkhorn
    }

    pub fn augmentation(&self) -> &AugmentationSpec {
        &self.pretrain.augmentation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("epochs = 3\nbogus_key = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        assert!(RunConfig::parse("epochs 3\n").is_err());
        assert!(RunConfig::parse("epochs = three\n").unwrap_err().to_string().contains("epochs"));
    }

    #[test]
    fn seed_override() {
        let mut cfg = RunConfig::parse("seed = 4\n").unwrap();
        cfg.apply_seed_override(Some("9")).unwrap();
        assert_eq!((cfg.seed, cfg.pretrain.seed), (9, 9));
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_seed_override(Some("x")).is_err());
    }

    #[test]
    fn validation_catches_bad_heads() {
        let cfg = RunConfig::parse("embed_dim = 10\nsamp_heads = 4\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_encoder_model() {
        let cfg = RunConfig::parse("encoder = identity\nsamp_steps = 0\nsamp_heads = 1\n").unwrap();
        let m = cfg.init_model(6).unwrap();
        assert!(m.encoder.is_identity());
        assert_eq!(m.dim(), 6);
    }

    fn real() -> impl Strategy<Value = f64> {
        prop_oneof![0.0..10.0f64, (1u32..1000).prop_map(|n| 1.0 / n as f64)]
    }

    proptest! {
        #[test]
        fn text_round_trip(
            embed in 1usize..64,
            beta in real(),
            lr in real(),
            eps in real(),
            tol in real(),
            ot in any::<bool>(),
            sgd in any::<bool>(),
            full in any::<bool>(),
            seed in any::<u64>(),
            path in "[a-z0-9_/.]{1,12}",
        ) {
            let mut cfg = RunConfig { embed_dim: embed, ..RunConfig::default() };
            cfg.pretrain.beta = beta;
            cfg.pretrain.learning_rate = lr;
            cfg.protocol.sinkhorn.epsilon = eps;
            cfg.protocol.sinkhorn.tolerance = tol;
            cfg.protocol.ot_enabled = ot;
            cfg.protocol.finetune_subset = if full { SubsetRule::FullBatch } else { SubsetRule::HalfPerClass };
            cfg.pretrain.optimizer = if sgd { OptimizerKind::Sgd } else { OptimizerKind::Adam };
            cfg.set_seed(seed);
            cfg.checkpoint = Some(path.clone().into());
            cfg.report = Some(path.into());
            let text = cfg.to_text();
            let back = RunConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
