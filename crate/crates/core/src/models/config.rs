use serde::{Deserialize, Serialize};

use crate::data::MASK_CHANNELS;
use crate::error::{Error, Result};
use crate::transforms::TransformId;

/// U-Net style mask generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_side: usize,
    /// Number of 2x downsamplings.
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub mask_channels: usize,
}

impl GeneratorConfig {
    /// Desk-scale default: 64 px, three downsamplings, 16 base channels.
    pub fn desk() -> Self {
        GeneratorConfig {
            input_side: 64,
            depth: 3,
            base_channels: 16,
            dropout_rate: 0.4,
            mask_channels: MASK_CHANNELS,
        }
    }

    /// Full-resolution configuration (128 px inputs).
    pub fn full_scale() -> Self {
        GeneratorConfig {
            input_side: 128,
            depth: 4,
            base_channels: 32,
            ..Self::desk()
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.base_channels == 0 {
            return Err(Error::invalid("generator side and channels must be positive"));
        }
        if self.input_side % (1 << self.depth) != 0 {
            return Err(Error::invalid(format!(
                "generator side {} is not divisible by 2^{}",
                self.input_side, self.depth
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        if self.mask_channels != MASK_CHANNELS {
            return Err(Error::invalid("generator must emit two mask logits"));
        }
        Ok(())
    }

    /// Closed-form scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        let ch = |l: usize| self.channels(l);
        let block = |cin: usize, cout: usize| 9 * cin * cout + 9 * cout * cout + 4 * cout;
        let mut total = 0;
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            total += block(cin, ch(l));
        }
        let bottleneck_in = if self.depth == 0 { 1 } else { ch(self.depth - 1) };
        total += block(bottleneck_in, ch(self.depth));
        for l in 0..self.depth {
            total += 4 * ch(l + 1) * ch(l) + ch(l);
            total += block(2 * ch(l), ch(l));
        }
        total + ch(0) * self.mask_channels + self.mask_channels
    }
}

/// Strided convolutional classifier; used both as the class discriminator
/// (image+mask input, `n+1` main logits, `T` auxiliary logits) and as the
/// image-only single-task classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvNetConfig {
    pub input_side: usize,
    pub in_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub main_logits: usize,
    pub aux_logits: Option<usize>,
    pub leaky_slope: f64,
}

impl ConvNetConfig {
    pub fn discriminator(input_side: usize, class_count: usize) -> Self {
        ConvNetConfig {
            input_side,
            in_channels: 1 + MASK_CHANNELS,
            depth: 4,
            base_channels: 8,
            main_logits: class_count + 1,
            aux_logits: Some(TransformId::COUNT),
            leaky_slope: 0.2,
        }
    }

    pub fn classifier(input_side: usize, class_count: usize) -> Self {
        ConvNetConfig {
            in_channels: 1,
            main_logits: class_count,
            aux_logits: None,
            ..Self::discriminator(input_side, class_count)
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial side after `depth` stride-2 convolutions.
    pub fn final_side(&self) -> usize {
        (0..self.depth).fold(self.input_side, |s, _| s.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::invalid("conv-net depth and channels must be positive"));
        }
        if self.final_side() < 2 {
            return Err(Error::invalid(format!(
                "conv-net input side {} is too small for depth {}",
                self.input_side, self.depth
            )));
        }
        if self.main_logits < 2 {
            return Err(Error::invalid("conv-net needs at least two main logits"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            let c = self.channels(l);
            total += 9 * cin * c + 2 * c;
            cin = c;
        }
        let heads = self.main_logits + self.aux_logits.unwrap_or(0);
        total + cin * heads + heads
    }
}

/// Architecture of one learnable network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NetSpec {
    Generator(GeneratorConfig),
    /// Generator plus a pooled classification head on the bottleneck.
    Umtl {
        generator: GeneratorConfig,
        class_count: usize,
    },
    ConvNet(ConvNetConfig),
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetSpec::Generator(g) => g.validate(),
            NetSpec::Umtl {
                generator,
                class_count,
            } => {
                if *class_count < 2 {
                    return Err(Error::invalid("U-MTL needs at least two classes"));
                }
                generator.validate()
            }
            NetSpec::ConvNet(c) => c.validate(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            NetSpec::Generator(g) => g.parameter_count(),
            NetSpec::Umtl {
                generator,
                class_count,
            } => generator.parameter_count() + generator.channels(generator.depth) * class_count + class_count,
            NetSpec::ConvNet(c) => c.parameter_count(),
        }
    }

    pub fn input_side(&self) -> usize {
        match self {
            NetSpec::Generator(g) | NetSpec::Umtl { generator: g, .. } => g.input_side,
            NetSpec::ConvNet(c) => c.input_side,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            NetSpec::Generator(_) | NetSpec::Umtl { .. } => 1,
            NetSpec::ConvNet(c) => c.in_channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_generator_count_by_hand() {
        // depth 1, base 4, K 2:
        // enc0 block(1,4)   = 36 + 144 + 16        = 196
        // bottleneck(4,8)   = 288 + 576 + 32       = 896
        // dec0 up 4*8*4+4   = 132; block(8,4) = 288 + 144 + 16 = 448
        // out 4*2+2         = 10
        let cfg = GeneratorConfig {
            input_side: 8,
            depth: 1,
            base_channels: 4,
            dropout_rate: 0.4,
            mask_channels: 2,
        };
        assert_eq!(cfg.parameter_count(), 196 + 896 + 132 + 448 + 10);
    }

    #[test]
    fn side_must_divide() {
        let cfg = GeneratorConfig {
            input_side: 12,
            depth: 3,
            ..GeneratorConfig::desk()
        };
        assert!(cfg.validate().is_err());
        assert!(GeneratorConfig::desk().validate().is_ok());
        assert!(GeneratorConfig::full_scale().validate().is_ok());
    }

    #[test]
    fn conv_net_sides() {
        let d = ConvNetConfig::discriminator(64, 2);
        assert_eq!(d.final_side(), 4);
        assert_eq!(d.main_logits, 3);
        assert_eq!(d.aux_logits, Some(6));
        let tiny = ConvNetConfig { input_side: 4, ..d };
        assert!(tiny.validate().is_err());
    }
}
