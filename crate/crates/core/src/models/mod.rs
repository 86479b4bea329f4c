//! Mask generator, class discriminator, and baseline heads.

mod config;
mod network;

pub use config::{ConvNetConfig, GeneratorConfig, NetSpec};
pub use network::{Mode, Network, Outputs};

use crate::data::{Image, Mask, MASK_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor};

/// Generator (θ) and discriminator/classifier (ψ) parameters. Single-task
/// baselines leave one side empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Option<Network>,
    pub psi: Option<Network>,
}

impl ModelParams {
    pub fn all_finite(&self) -> bool {
        [&self.theta, &self.psi]
            .into_iter()
            .flatten()
            .all(|n| n.params.all_finite())
    }
}

/// Stacks square images into `[n, 1, m, m]`.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("empty image batch"))?;
    let side = first.side();
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if !img.is_square() || img.side() != side {
            return Err(Error::shape("image batch has mixed sizes"));
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::from_vec(&[images.len(), 1, side, side], data)
}

/// Stacks masks into `[n, K, m, m]`.
pub fn masks_to_tensor(masks: &[&Mask]) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::invalid("empty mask batch"))?;
    let side = first.side();
    let mut data = Vec::with_capacity(masks.len() * MASK_CHANNELS * side * side);
    for m in masks {
        if m.side() != side {
            return Err(Error::shape("mask batch has mixed sizes"));
        }
        data.extend_from_slice(m.probs());
    }
    Tensor::from_vec(&[masks.len(), MASK_CHANNELS, side, side], data)
}

/// Splits a `[n, K, m, m]` probability tensor into masks.
pub fn tensor_to_masks(t: &Tensor) -> Result<Vec<Mask>> {
    let (n, k, h, w) = t.dims4();
    if k != MASK_CHANNELS || h != w {
        return Err(Error::shape(format!("not a mask batch: {:?}", t.shape())));
    }
    let per = k * h * w;
    (0..n)
        .map(|i| Mask::from_probs(h, t.data()[i * per..(i + 1) * per].to_vec()))
        .collect()
}

/// Deterministic parameters for any architecture.
pub fn init_params(spec: NetSpec, seed: u64) -> Result<Network> {
    Network::init(spec, seed)
}

fn expect_spec<'a>(net: &'a Network, what: &str, ok: bool) -> Result<&'a Network> {
    if ok {
        Ok(net)
    } else {
        Err(Error::invalid(format!("{what} forward called on {:?}", net.spec)))
    }
}

/// Per-pixel mask probabilities for a batch `[n, 1, m, m]` → `[n, K, m, m]`.
pub fn generator_forward(theta: &Network, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
    let net = expect_spec(
        theta,
        "generator",
        matches!(theta.spec, NetSpec::Generator(_) | NetSpec::Umtl { .. }),
    )?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = net.forward_graph(&mut g, xv, mode)?;
    Ok(g.value(out.mask.expect("generator mask head")).clone())
}

/// Main (`n+1`) and auxiliary (`T`) logits for image/mask pairs.
pub fn discriminator_forward(psi: &Network, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
    let NetSpec::ConvNet(cfg) = psi.spec else {
        return Err(Error::invalid("discriminator forward needs a conv-net"));
    };
    if cfg.aux_logits.is_none() {
        return Err(Error::invalid("discriminator needs an auxiliary head"));
    }
    if x.shape().len() != 4 || y.shape().len() != 4 {
        return Err(Error::shape("discriminator inputs must be 4-D"));
    }
    let (nx, cx, hx, wx) = x.dims4();
    let (ny, cy, hy, wy) = y.dims4();
    if nx != ny || hx != hy || wx != wy {
        return Err(Error::shape(format!(
            "image batch {:?} and mask batch {:?} disagree",
            x.shape(),
            y.shape()
        )));
    }
    if cx + cy != cfg.in_channels {
        return Err(Error::shape(format!(
            "discriminator expects {} channels, got {}",
            cfg.in_channels,
            cx + cy
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let pair = g.concat_channels(xv, yv);
    let out = psi.forward_graph(&mut g, pair, &mut Mode::Eval)?;
    Ok((
        g.value(out.main.expect("main head")).clone(),
        g.value(out.aux.expect("aux head")).clone(),
    ))
}

/// `n`-class logits of the image-only classifier.
pub fn classifier_forward(psi: &Network, x: &Tensor) -> Result<Tensor> {
    let net = expect_spec(
        psi,
        "classifier",
        matches!(psi.spec, NetSpec::ConvNet(c) if c.in_channels == 1),
    )?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = net.forward_graph(&mut g, xv, &mut Mode::Eval)?;
    Ok(g.value(out.main.expect("main head")).clone())
}

/// Mask probabilities and `n`-class logits of the multitask U-Net.
pub fn umtl_forward(theta: &Network, x: &Tensor, mode: &mut Mode) -> Result<(Tensor, Tensor)> {
    let net = expect_spec(theta, "U-MTL", matches!(theta.spec, NetSpec::Umtl { .. }))?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = net.forward_graph(&mut g, xv, mode)?;
    Ok((
        g.value(out.mask.expect("mask head")).clone(),
        g.value(out.main.expect("class head")).clone(),
    ))
}
