use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ConvNetConfig, GeneratorConfig, NetSpec};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::rng;

/// Dropout behaviour for one forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, g: &mut Graph, x: Var, rate: f64) -> Var {
        match self {
            Mode::Train(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let scale = 1.0 / keep;
                // A unit is kept when a uniform 32-bit draw falls below
                // keep·2³², compared without branching.
                let threshold = (keep * 4_294_967_296.0).min(u32::MAX as f64) as u32;
                let mut keep = vec![false; g.value(x).len()];
                let mut draws = [0u32; 512];
                for chunk in keep.chunks_mut(draws.len()) {
                    let draws = &mut draws[..chunk.len()];
                    rng.fill(draws);
                    for (k, &u) in chunk.iter_mut().zip(draws.iter()) {
                        *k = u < threshold;
                    }
                }
                g.dropout(x, keep, scale)
            }
            _ => x,
        }
    }
}

/// Graph handles for whatever heads a network has.
#[derive(Debug, Clone, Copy, Default)]
pub struct Outputs {
    /// Per-pixel mask probabilities `[n, K, m, m]`.
    pub mask: Option<Var>,
    /// Main classification logits `[n, classes]`.
    pub main: Option<Var>,
    /// Auxiliary transform-prediction logits `[n, T]`.
    pub aux: Option<Var>,
}

/// One learnable network: architecture plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub params: ParamStore,
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| dist.sample(rng)).collect()).expect("shape")
}

struct Init<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let w = normal_tensor(&[cout, cin, k, k], std, self.rng);
        self.store.insert(format!("{name}.w"), w);
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.store.insert(format!("{name}.g"), Tensor::filled(&[c], 1.0));
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[c]));
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) {
        let std = (2.0 / (cin * 4) as f64).sqrt();
        let w = normal_tensor(&[cin, cout, 2, 2], std, self.rng);
        self.store.insert(format!("{name}.w"), w);
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize) {
        self.conv(&format!("{name}.conv1"), cin, cout, 3);
        self.norm(&format!("{name}.norm1"), cout);
        self.conv(&format!("{name}.conv2"), cout, cout, 3);
        self.norm(&format!("{name}.norm2"), cout);
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        let std = (1.0 / fin as f64).sqrt();
        let w = normal_tensor(&[fout, fin], std, self.rng);
        self.store.insert(format!("{name}.w"), w);
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[fout]));
    }

    fn output_conv(&mut self, name: &str, cin: usize, cout: usize) {
        let std = (1.0 / cin as f64).sqrt();
        let w = normal_tensor(&[cout, cin, 1, 1], std, self.rng);
        self.store.insert(format!("{name}.w"), w);
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }
}

fn init_generator(init: &mut Init, cfg: &GeneratorConfig) {
    for l in 0..cfg.depth {
        let cin = if l == 0 { 1 } else { cfg.channels(l - 1) };
        init.block(&format!("enc{l}"), cin, cfg.channels(l));
    }
    let bin = if cfg.depth == 0 { 1 } else { cfg.channels(cfg.depth - 1) };
    init.block("bottleneck", bin, cfg.channels(cfg.depth));
    for l in (0..cfg.depth).rev() {
        init.up(&format!("dec{l}.up"), cfg.channels(l + 1), cfg.channels(l));
        init.block(&format!("dec{l}"), 2 * cfg.channels(l), cfg.channels(l));
    }
    init.output_conv("out", cfg.channels(0), cfg.mask_channels);
}

fn init_convnet(init: &mut Init, cfg: &ConvNetConfig) {
    let mut cin = cfg.in_channels;
    for l in 0..cfg.depth {
        let c = cfg.channels(l);
        init.conv(&format!("layer{l}.conv"), cin, c, 3);
        init.norm(&format!("layer{l}.norm"), c);
        cin = c;
    }
    init.linear("main", cin, cfg.main_logits);
    if let Some(t) = cfg.aux_logits {
        init.linear("aux", cin, t);
    }
}

impl Network {
    /// Scaled-normal initialization (He for convolutions, `1/fan_in` for
    /// heads), unit/zero normalization scale/offset, zero biases.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, "init", &[]);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        match &spec {
            NetSpec::Generator(g) => init_generator(&mut init, g),
            NetSpec::Umtl {
                generator,
                class_count,
            } => {
                init_generator(&mut init, generator);
                init.linear("cls", generator.channels(generator.depth), *class_count);
            }
            NetSpec::ConvNet(c) => init_convnet(&mut init, c),
        }
        Ok(Network {
            spec,
            params: init.store,
        })
    }

    fn check_input(&self, t: &Tensor) -> Result<()> {
        let s = t.shape();
        let side = self.spec.input_side();
        let ch = self.spec.input_channels();
        if s.len() != 4 || s[1] != ch || s[2] != side || s[3] != side {
            return Err(Error::shape(format!(
                "network expects [n, {ch}, {side}, {side}], got {s:?}"
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `g` for input node `x`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, mode: &mut Mode) -> Result<Outputs> {
        self.check_input(g.value(x))?;
        Ok(match &self.spec {
            NetSpec::Generator(cfg) => {
                let (mask, _) = self.generator_graph(cfg, g, x, mode);
                Outputs {
                    mask: Some(mask),
                    ..Outputs::default()
                }
            }
            NetSpec::Umtl { generator, .. } => {
                let (mask, bottleneck) = self.generator_graph(generator, g, x, mode);
                let pooled = g.global_avg_pool(bottleneck);
                let w = g.param_named(&self.params, "cls.w");
                let b = g.param_named(&self.params, "cls.b");
                Outputs {
                    mask: Some(mask),
                    main: Some(g.linear(pooled, w, b)),
                    aux: None,
                }
            }
            NetSpec::ConvNet(cfg) => self.convnet_graph(cfg, g, x),
        })
    }

    fn block(&self, g: &mut Graph, name: &str, x: Var, rate: f64, mode: &mut Mode) -> Var {
        let mut h = x;
        for i in 1..=2 {
            let w = g.param_named(&self.params, &format!("{name}.conv{i}.w"));
            let gamma = g.param_named(&self.params, &format!("{name}.norm{i}.g"));
            let beta = g.param_named(&self.params, &format!("{name}.norm{i}.b"));
            h = g.conv2d(h, w, 1, 1);
            h = g.instance_norm(h, gamma, beta);
            h = g.relu(h);
            h = mode.dropout(g, h, rate);
        }
        h
    }

    fn generator_graph(&self, cfg: &GeneratorConfig, g: &mut Graph, x: Var, mode: &mut Mode) -> (Var, Var) {
        let rate = cfg.dropout_rate;
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x;
        for l in 0..cfg.depth {
            h = self.block(g, &format!("enc{l}"), h, rate, mode);
            skips.push(h);
            h = g.max_pool2(h);
        }
        h = self.block(g, "bottleneck", h, rate, mode);
        let bottleneck = h;
        for l in (0..cfg.depth).rev() {
            let w = g.param_named(&self.params, &format!("dec{l}.up.w"));
            let b = g.param_named(&self.params, &format!("dec{l}.up.b"));
            let up = g.conv_transpose2(h, w, b);
            let cat = g.concat_channels(skips[l], up);
            h = self.block(g, &format!("dec{l}"), cat, rate, mode);
        }
        let w = g.param_named(&self.params, "out.w");
        let logits = g.conv2d(h, w, 1, 0);
        let b = g.param_named(&self.params, "out.b");
        let logits = g.add_channel_bias(logits, b);
        (g.softmax_channels(logits), bottleneck)
    }

    fn convnet_graph(&self, cfg: &ConvNetConfig, g: &mut Graph, x: Var) -> Outputs {
        let mut h = x;
        for l in 0..cfg.depth {
            let w = g.param_named(&self.params, &format!("layer{l}.conv.w"));
            let gamma = g.param_named(&self.params, &format!("layer{l}.norm.g"));
            let beta = g.param_named(&self.params, &format!("layer{l}.norm.b"));
            h = g.conv2d(h, w, 2, 1);
            h = g.instance_norm(h, gamma, beta);
            h = g.leaky_relu(h, cfg.leaky_slope);
        }
        let pooled = g.global_avg_pool(h);
        let head = |g: &mut Graph, name: &str| {
            let w = g.param_named(&self.params, &format!("{name}.w"));
            let b = g.param_named(&self.params, &format!("{name}.b"));
            g.linear(pooled, w, b)
        };
        let main = head(g, "main");
        let aux = cfg.aux_logits.map(|_| head(g, "aux"));
        Outputs {
            mask: None,
            main: Some(main),
            aux,
        }
    }
}
