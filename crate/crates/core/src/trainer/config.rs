use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annealing::TsaConfig;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::losses::{KlPairing, LossWeights};
use crate::models::{ConvNetConfig, GeneratorConfig, ModelParams, NetSpec, Network};
use crate::rng;

/// Training recipe: the full semi-supervised multitask model, its ablation,
/// and three supervised baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Generator plus `(n+1)`-class discriminator with self-supervised
    /// transform prediction and unsupervised mask matching.
    S4mtl,
    /// [`Method::S4mtl`] without the transform-prediction and mask-matching terms.
    S2mtl,
    /// U-Net with a classification head on its bottleneck, labeled data only.
    Umtl,
    /// U-Net segmenter, labeled data only.
    Unet,
    /// Image-only classifier, labeled data only.
    Convnet,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::S4mtl, Method::S2mtl, Method::Umtl, Method::Unet, Method::Convnet];

    pub fn name(self) -> &'static str {
        match self {
            Method::S4mtl => "S4MTL",
            Method::S2mtl => "S2MTL",
            Method::Umtl => "UMTL",
            Method::Unet => "UNET",
            Method::Convnet => "CONVNET",
        }
    }

    pub fn is_semi_supervised(self) -> bool {
        matches!(self, Method::S4mtl | Method::S2mtl)
    }

    pub fn segments(self) -> bool {
        self != Method::Convnet
    }

    pub fn classifies(self) -> bool {
        self != Method::Unet
    }

    pub fn is_multitask(self) -> bool {
        matches!(self, Method::S4mtl | Method::S2mtl | Method::Umtl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub method: Method,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_g: f64,
    pub beta1_g: f64,
    pub lr_d: f64,
    pub beta1_d: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decay_every: usize,
    pub decay_g: f64,
    pub decay_d: f64,
    pub weights: LossWeights,
    pub kl_pairing: KlPairing,
    pub tsa_enabled: bool,
    pub tsa_literal: bool,
    /// Training-set size used by the annealing schedule; defaults to
    /// `|D_L| + |D_U|`.
    pub tsa_dataset_size: Option<usize>,
    pub generator: GeneratorConfig,
    pub convnet_depth: usize,
    pub convnet_base: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn new(method: Method) -> Self {
        TrainerConfig {
            method,
            batch_size: 16,
            epochs: 30,
            lr_g: 2e-3,
            beta1_g: 0.9,
            lr_d: 1e-4,
            beta1_d: 0.6,
            beta2: 0.999,
            adam_eps: 1e-8,
            decay_every: 2,
            decay_g: 0.9,
            decay_d: 0.5,
            weights: LossWeights::default(),
            kl_pairing: KlPairing::Index,
            tsa_enabled: true,
            tsa_literal: false,
            tsa_dataset_size: None,
            generator: GeneratorConfig::desk(),
            convnet_depth: 4,
            convnet_base: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1_g", self.beta1_g), ("beta1_d", self.beta1_d), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        for (name, v) in [("decay_g", self.decay_g), ("decay_d", self.decay_d)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.decay_every < 1 {
            return Err(Error::invalid("decay_every must be at least 1"));
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator(2).validate()
    }

    pub fn tsa_config(&self, split: &DatasetSplit) -> TsaConfig {
        TsaConfig {
            total_epochs: self.epochs,
            dataset_size: self.tsa_dataset_size.unwrap_or(split.training_size()),
            class_count: split.class_count,
            enabled: self.tsa_enabled,
            literal_form: self.tsa_literal,
        }
    }

    pub fn discriminator(&self, class_count: usize) -> ConvNetConfig {
        ConvNetConfig {
            depth: self.convnet_depth,
            base_channels: self.convnet_base,
            ..ConvNetConfig::discriminator(self.generator.input_side, class_count)
        }
    }

    pub fn classifier(&self, class_count: usize) -> ConvNetConfig {
        ConvNetConfig {
            depth: self.convnet_depth,
            base_channels: self.convnet_base,
            ..ConvNetConfig::classifier(self.generator.input_side, class_count)
        }
    }
}

/// `initial_lr · decay_rate^⌊epoch / decay_every⌋`
pub fn lr_schedule(initial_lr: f64, epoch: usize, decay_every: usize, decay_rate: f64) -> f64 {
    initial_lr * decay_rate.powi((epoch / decay_every.max(1)) as i32)
}

/// Freshly initialized networks for the configured method. The generator
/// and the discriminator draw from separate seed streams.
pub fn init_models(cfg: &TrainerConfig, class_count: usize) -> Result<ModelParams> {
    cfg.validate()?;
    let theta_seed = rng::derive_seed(cfg.seed, "theta", &[]);
    let psi_seed = rng::derive_seed(cfg.seed, "psi", &[]);
    let (theta, psi) = match cfg.method {
        Method::S4mtl | Method::S2mtl => (
            Some(Network::init(NetSpec::Generator(cfg.generator), theta_seed)?),
            Some(Network::init(NetSpec::ConvNet(cfg.discriminator(class_count)), psi_seed)?),
        ),
        Method::Umtl => (
            Some(Network::init(
                NetSpec::Umtl {
                    generator: cfg.generator,
                    class_count,
                },
                theta_seed,
            )?),
            None,
        ),
        Method::Unet => (Some(Network::init(NetSpec::Generator(cfg.generator), theta_seed)?), None),
        Method::Convnet => (
            None,
            Some(Network::init(NetSpec::ConvNet(cfg.classifier(class_count)), psi_seed)?),
        ),
    };
    Ok(ModelParams { theta, psi })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(2e-3, 0, 2, 0.9), 2e-3);
        assert_eq!(lr_schedule(2e-3, 1, 2, 0.9), 2e-3);
        assert!((lr_schedule(2e-3, 4, 2, 0.9) - 1.62e-3).abs() < 1e-15);
        assert!((lr_schedule(1e-4, 2, 2, 0.5) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("s4mtl".parse::<Method>().unwrap(), Method::S4mtl);
        assert!("VNET".parse::<Method>().is_err());
    }

    #[test]
    fn invalid_settings() {
        let mut c = TrainerConfig::new(Method::Unet);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainerConfig::new(Method::Unet);
        c.decay_g = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainerConfig::new(Method::Unet);
        c.lr_d = -1.0;
        assert!(c.validate().is_err());
    }
}
