use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{init_models, lr_schedule, Method, TrainerConfig};
use super::evaluate::evaluate;
use super::history::{EpochRecord, StepRecord, TrainHistory};
use crate::annealing::{tsa_threshold, tsa_weights, TsaConfig};
use crate::data::{DatasetSplit, Image, Mask, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    abs_kl_batch, class_probabilities, d_selfsup_loss, d_supervised_loss, dice_loss_batch, fake_prob_grad_to_logits,
    fake_probabilities, neg_log, neg_log_one_minus, weighted_cross_entropy, LossReport,
};
use crate::metrics::MetricsTable;
use crate::models::{images_to_tensor, masks_to_tensor, ModelParams, Mode, NetSpec, Network};
use crate::nn::{Adam, Graph, Tensor, Var};
use crate::rng;
use crate::transforms::sample_proxy_batch;

/// State handed to the per-epoch observer after model selection.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub models: &'a ModelParams,
    pub history: &'a TrainHistory,
}

/// Trains freshly initialized networks for `cfg.method`.
pub fn train_baseline(split: &DatasetSplit, cfg: &TrainerConfig) -> Result<(ModelParams, TrainHistory)> {
    let models = init_models(cfg, split.class_count)?;
    train(split, models, cfg)
}

pub fn train(split: &DatasetSplit, models: ModelParams, cfg: &TrainerConfig) -> Result<(ModelParams, TrainHistory)> {
    train_observed(split, models, cfg, &mut |_| Ok(()))
}

/// Runs every epoch, calling `observer` after each one, and returns the
/// parameters of the epoch with the best validation score (earliest on
/// ties; the last epoch when there is no validation data).
pub fn train_observed(
    split: &DatasetSplit,
    models: ModelParams,
    cfg: &TrainerConfig,
    observer: &mut dyn FnMut(&EpochEvent) -> Result<()>,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let mut run = Run::new(split, models, cfg)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let steps = run.run_epoch(epoch, &mut step, &mut history)?;
        let val = evaluate(&run.models, cfg.method, &split.validation, split.class_count)?;
        let score = selection_score(cfg.method, &val);
        history.epochs.push(EpochRecord {
            epoch,
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
            val: val.aggregate(),
            val_accuracy: val.accuracy(),
            selection_score: score,
        });
        let improved = match (&best, score) {
            (None, _) => true,
            (Some((b, _)), Some(s)) => s > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((score.unwrap_or(f64::NEG_INFINITY), run.models.clone()));
            history.best_epoch = Some(epoch);
        }
        observer(&EpochEvent {
            epoch,
            models: &run.models,
            history: &history,
        })?;
    }
    let (_, chosen) = best.expect("at least one epoch");
    Ok((chosen, history))
}

fn selection_score(method: Method, val: &MetricsTable) -> Option<f64> {
    if method.segments() {
        val.mean_dice()
    } else {
        val.accuracy()
    }
}

struct Run<'a> {
    split: &'a DatasetSplit,
    cfg: &'a TrainerConfig,
    models: ModelParams,
    adam_theta: Option<Adam>,
    adam_psi: Option<Adam>,
    tsa: TsaConfig,
}

/// One step's labeled mini-batch.
struct LabeledBatch {
    x: Tensor,
    y: Tensor,
    labels: Vec<usize>,
}

/// One step's unlabeled mini-batch with optional transform labels.
struct UnlabeledBatch {
    x: Tensor,
    transforms: Option<Vec<usize>>,
}

/// A forward pass recorded on its own tape.
struct Recorded {
    graph: Graph,
    out: Var,
}

fn ensure_finite(report: &LossReport, step: usize) -> Result<()> {
    match report.first_non_finite() {
        Some((component, value)) => Err(Error::NonFiniteLoss {
            component: component.to_string(),
            step,
            value,
        }),
        None => Ok(()),
    }
}

fn add(a: &Tensor, b: &Tensor, scale: f64) -> Tensor {
    let mut out = a.clone();
    if scale != 0.0 {
        for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
            *o += scale * v;
        }
    }
    out
}

fn scaled(t: &Tensor, s: f64) -> Tensor {
    let mut out = t.clone();
    out.scale(s);
    out
}

fn sum_grads(a: Vec<Tensor>, b: Vec<Tensor>) -> Vec<Tensor> {
    a.into_iter()
        .zip(b)
        .map(|(mut x, y)| {
            x.add_assign(&y);
            x
        })
        .collect()
}

/// Discriminator main and auxiliary logits for an image/mask pair.
fn d_pair(g: &mut Graph, psi: &Network, x: Var, y: Var) -> Result<(Var, Option<Var>)> {
    let pair = g.concat_channels(x, y);
    let out = psi.forward_graph(g, pair, &mut Mode::Eval)?;
    Ok((out.main.expect("discriminator main head"), out.aux))
}

impl<'a> Run<'a> {
    fn new(split: &'a DatasetSplit, models: ModelParams, cfg: &'a TrainerConfig) -> Result<Self> {
        if split.labeled.is_empty() {
            return Err(Error::invalid("training needs at least one labeled sample"));
        }
        if cfg.method.is_semi_supervised() && split.unlabeled.is_empty() {
            return Err(Error::invalid(format!(
                "{} needs unlabeled training data",
                cfg.method
            )));
        }
        let side = split.labeled[0].image().side();
        let expect_models = match cfg.method {
            Method::S4mtl | Method::S2mtl => models.theta.is_some() && models.psi.is_some(),
            Method::Umtl => matches!(models.theta.as_ref().map(|n| n.spec), Some(NetSpec::Umtl { .. })),
            Method::Unet => matches!(models.theta.as_ref().map(|n| n.spec), Some(NetSpec::Generator(_))),
            Method::Convnet => models.psi.is_some(),
        };
        if !expect_models {
            return Err(Error::invalid(format!("model parameters do not fit method {}", cfg.method)));
        }
        for net in [&models.theta, &models.psi].into_iter().flatten() {
            if net.spec.input_side() != side {
                return Err(Error::shape(format!(
                    "network expects {} px inputs but the data is {side} px",
                    net.spec.input_side()
                )));
            }
        }
        let adam_theta = models
            .theta
            .as_ref()
            .map(|n| Adam::new(&n.params, cfg.beta1_g, cfg.beta2, cfg.adam_eps));
        let adam_psi = models
            .psi
            .as_ref()
            .map(|n| Adam::new(&n.params, cfg.beta1_d, cfg.beta2, cfg.adam_eps));
        let tsa = cfg.tsa_config(split);
        tsa.validate()?;
        Ok(Run {
            split,
            cfg,
            models,
            adam_theta,
            adam_psi,
            tsa,
        })
    }

    /// Index sequence of length `need` over `len` items: concatenated seeded
    /// permutations, one per pass through the data.
    fn order(&self, tag: &str, epoch: usize, len: usize, need: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(need);
        let mut cycle = 0u64;
        while out.len() < need {
            let mut perm: Vec<usize> = (0..len).collect();
            perm.shuffle(&mut rng::stream(self.cfg.seed, tag, &[epoch as u64, cycle]));
            out.extend(perm);
            cycle += 1;
        }
        out.truncate(need);
        out
    }

    fn run_epoch(&mut self, epoch: usize, step: &mut usize, history: &mut TrainHistory) -> Result<usize> {
        let cfg = self.cfg;
        let bs = cfg.batch_size;
        let n_l = self.split.labeled.len();
        let n_u = self.split.unlabeled.len();
        let semi = cfg.method.is_semi_supervised();
        let longest = if semi { n_l.max(n_u) } else { n_l };
        let steps = longest.div_ceil(bs);
        let order_l = self.order("order-L", epoch, n_l, longest);
        let order_u = if semi { self.order("order-U", epoch, n_u, longest) } else { Vec::new() };

        // Proxy-labeled unlabeled pool, regenerated every epoch.
        let unlabeled_pool: Vec<(Image, Option<usize>)> = if cfg.method == Method::S4mtl {
            let images: Vec<Image> = self.split.unlabeled.iter().map(|s| s.image().clone()).collect();
            let seed = rng::derive_seed(cfg.seed, "proxy", &[epoch as u64]);
            sample_proxy_batch(&images, seed)?
                .into_iter()
                .map(|(img, t)| (img, Some(t.index())))
                .collect()
        } else if semi {
            self.split.unlabeled.iter().map(|s| (s.image().clone(), None)).collect()
        } else {
            Vec::new()
        };

        let lr_g = lr_schedule(cfg.lr_g, epoch, cfg.decay_every, cfg.decay_g);
        let lr_d = lr_schedule(cfg.lr_d, epoch, cfg.decay_every, cfg.decay_d);
        for k in 0..steps {
            let range = k * bs..((k + 1) * bs).min(longest);
            let labeled = labeled_batch(&self.split.labeled, &order_l[range.clone()])?;
            let (report, eta) = match cfg.method {
                Method::S4mtl | Method::S2mtl => {
                    let unlabeled = unlabeled_batch(&unlabeled_pool, &order_u[range])?;
                    self.semi_step(epoch, *step, &labeled, &unlabeled, lr_g, lr_d)?
                }
                Method::Unet => (self.unet_step(*step, &labeled, lr_g)?, 1.0),
                Method::Umtl => (self.umtl_step(*step, &labeled, lr_g)?, 1.0),
                Method::Convnet => (self.convnet_step(&labeled, lr_d)?, 1.0),
            };
            let report = report.with_totals(&cfg.weights)?;
            ensure_finite(&report, *step)?;
            history.steps.push(StepRecord {
                step: *step,
                epoch,
                lr_g,
                lr_d,
                eta,
                losses: report,
            });
            *step += 1;
        }
        Ok(steps)
    }

    fn generator_pass(&self, x: &Tensor, stream: &str, step: usize) -> Result<Recorded> {
        let theta = self.models.theta.as_ref().expect("generator");
        let mut graph = Graph::new();
        let xv = graph.constant(x.clone());
        let mut rng = rng::stream(self.cfg.seed, stream, &[step as u64]);
        let out = theta.forward_graph(&mut graph, xv, &mut Mode::Train(&mut rng))?;
        Ok(Recorded {
            graph,
            out: out.mask.expect("generator mask head"),
        })
    }

    fn update_theta(&mut self, grads: Vec<Tensor>, lr: f64) {
        let theta = self.models.theta.as_mut().expect("generator");
        self.adam_theta
            .as_mut()
            .expect("generator optimizer")
            .update(&mut theta.params, &grads, lr);
    }

    fn update_psi(&mut self, grads: Vec<Tensor>, lr: f64) {
        let psi = self.models.psi.as_mut().expect("discriminator");
        self.adam_psi
            .as_mut()
            .expect("discriminator optimizer")
            .update(&mut psi.params, &grads, lr);
    }

    fn unet_step(&mut self, step: usize, b: &LabeledBatch, lr_g: f64) -> Result<LossReport> {
        let rec = self.generator_pass(&b.x, "G-L", step)?;
        let (dice, d_dice) = dice_loss_batch(&b.y, rec.graph.value(rec.out))?;
        let grads = rec.graph.backward(vec![(rec.out, d_dice)]);
        let theta_grads = grads.param_grads(&self.models.theta.as_ref().expect("generator").params);
        self.update_theta(theta_grads, lr_g);
        Ok(LossReport {
            dice_supervised: dice,
            ..LossReport::default()
        })
    }

    /// Joint Dice and cross-entropy on the labeled batch; the classification
    /// term is reported as `d_supervised`.
    fn umtl_step(&mut self, step: usize, b: &LabeledBatch, lr_g: f64) -> Result<LossReport> {
        let theta = self.models.theta.as_ref().expect("generator");
        let mut graph = Graph::new();
        let xv = graph.constant(b.x.clone());
        let mut rng = rng::stream(self.cfg.seed, "G-L", &[step as u64]);
        let out = theta.forward_graph(&mut graph, xv, &mut Mode::Train(&mut rng))?;
        let (mask, logits) = (out.mask.expect("mask head"), out.main.expect("class head"));
        let (dice, d_dice) = dice_loss_batch(&b.y, graph.value(mask))?;
        let n = self.split.class_count;
        let (ce, d_ce) = weighted_cross_entropy(graph.value(logits), &b.labels, None, n)?;
        let grads = graph.backward(vec![(mask, d_dice), (logits, d_ce)]);
        let theta_grads = grads.param_grads(&theta.params);
        self.update_theta(theta_grads, lr_g);
        Ok(LossReport {
            dice_supervised: dice,
            d_supervised: ce,
            ..LossReport::default()
        })
    }

    fn convnet_step(&mut self, b: &LabeledBatch, lr_d: f64) -> Result<LossReport> {
        let psi = self.models.psi.as_ref().expect("classifier");
        let mut graph = Graph::new();
        let xv = graph.constant(b.x.clone());
        let out = psi.forward_graph(&mut graph, xv, &mut Mode::Eval)?;
        let logits = out.main.expect("class head");
        let n = self.split.class_count;
        let (ce, d_ce) = weighted_cross_entropy(graph.value(logits), &b.labels, None, n)?;
        let grads = graph.backward(vec![(logits, d_ce)]);
        let psi_grads = grads.param_grads(&psi.params);
        self.update_psi(psi_grads, lr_d);
        Ok(LossReport {
            d_supervised: ce,
            ..LossReport::default()
        })
    }

    /// Discriminator update on the current predictions, then generator
    /// update against the updated discriminator. Discriminator losses are
    /// reported before its update, generator losses before the generator's.
    fn semi_step(
        &mut self,
        epoch: usize,
        step: usize,
        l: &LabeledBatch,
        u: &UnlabeledBatch,
        lr_g: f64,
        lr_d: f64,
    ) -> Result<(LossReport, f64)> {
        let w = self.cfg.weights;
        let gen_l = self.generator_pass(&l.x, "G-L", step)?;
        let gen_u = self.generator_pass(&u.x, "G-U", step)?;
        let yhat_l = gen_l.graph.value(gen_l.out).clone();
        let yhat_u = gen_u.graph.value(gen_u.out).clone();
        let mut report = LossReport::default();

        // Discriminator step.
        let psi = self.models.psi.as_ref().expect("discriminator");
        let mut gd = Graph::new();
        let xl = gd.constant(l.x.clone());
        let yl = gd.constant(l.y.clone());
        let yhl = gd.constant(yhat_l.clone());
        let xu = gd.constant(u.x.clone());
        let yhu = gd.constant(yhat_u.clone());
        let (real, _) = d_pair(&mut gd, psi, xl, yl)?;
        let (pred_l, _) = d_pair(&mut gd, psi, xl, yhl)?;
        let (pred_u, aux_u) = d_pair(&mut gd, psi, xu, yhu)?;

        let real_logits = gd.value(real);
        let eta = if self.tsa.enabled {
            tsa_threshold(epoch, step, &self.tsa)?
        } else {
            1.0
        };
        let weights = if self.tsa.enabled {
            let (rows, c) = real_logits.dims2();
            let p_true: Vec<f64> = (0..rows)
                .map(|i| class_probabilities(&real_logits.data()[i * c..(i + 1) * c]).map(|p| p[l.labels[i]]))
                .collect::<Result<_>>()?;
            Some(tsa_weights(&p_true, eta))
        } else {
            None
        };
        let (sup, d_sup) = d_supervised_loss(real_logits, &l.labels, weights.as_deref())?;
        let (adv_real, dp_real) = neg_log_one_minus(&fake_probabilities(real_logits))?;
        let real_seed = add(&d_sup, &fake_prob_grad_to_logits(real_logits, &dp_real), 1.0);
        let pl_logits = gd.value(pred_l);
        let (adv_pl, dp_pl) = neg_log(&fake_probabilities(pl_logits))?;
        let pl_seed = fake_prob_grad_to_logits(pl_logits, &dp_pl);
        let pu_logits = gd.value(pred_u);
        let (adv_pu, dp_pu) = neg_log(&fake_probabilities(pu_logits))?;
        let pu_seed = scaled(&fake_prob_grad_to_logits(pu_logits, &dp_pu), w.alpha);
        let mut seeds = vec![(real, real_seed), (pred_l, pl_seed), (pred_u, pu_seed)];
        if let (Some(tids), Some(aux)) = (&u.transforms, aux_u) {
            let (selfsup, d_self) = d_selfsup_loss(gd.value(aux), tids, None)?;
            report.d_selfsup = selfsup;
            seeds.push((aux, scaled(&d_self, w.alpha * w.lambda_self)));
        }
        report.d_supervised = sup;
        report.d_adv_real = adv_real;
        report.d_adv_pred_labeled = adv_pl;
        report.d_adv_pred_unlabeled = adv_pu;
        let psi_grads = gd.backward(seeds).param_grads(&psi.params);
        drop(gd);
        self.update_psi(psi_grads, lr_d);

        // Generator step: adversarial feedback from the updated discriminator.
        let psi = self.models.psi.as_ref().expect("discriminator");
        let mut ga = Graph::new();
        let xl = ga.constant(l.x.clone());
        let yhl = ga.input(yhat_l.clone());
        let xu = ga.constant(u.x.clone());
        let yhu = ga.input(yhat_u.clone());
        let (pred_l, _) = d_pair(&mut ga, psi, xl, yhl)?;
        let (pred_u, _) = d_pair(&mut ga, psi, xu, yhu)?;
        let pl_logits = ga.value(pred_l);
        let (g_adv_l, dp_l) = neg_log_one_minus(&fake_probabilities(pl_logits))?;
        let seed_l = fake_prob_grad_to_logits(pl_logits, &dp_l);
        let pu_logits = ga.value(pred_u);
        let (g_adv_u, dp_u) = neg_log_one_minus(&fake_probabilities(pu_logits))?;
        let seed_u = fake_prob_grad_to_logits(pu_logits, &dp_u);
        let adv = ga.backward(vec![(pred_l, seed_l), (pred_u, seed_u)]);
        let d_adv_yl = adv.get(yhl).cloned().unwrap_or_else(|| Tensor::zeros(yhat_l.shape()));
        let d_adv_yu = adv.get(yhu).cloned().unwrap_or_else(|| Tensor::zeros(yhat_u.shape()));
        report.g_adv_labeled = g_adv_l;
        report.g_adv_unlabeled = g_adv_u;

        let (dice, d_dice) = dice_loss_batch(&l.y, &yhat_l)?;
        report.dice_supervised = dice;
        let seed_gl = add(&d_dice, &d_adv_yl, w.lambda_adv);
        let theta = self.models.theta.as_ref().expect("generator");
        let mut theta_grads = gen_l.graph.backward(vec![(gen_l.out, seed_gl)]).param_grads(&theta.params);

        let mut seed_gu = scaled(&d_adv_yu, w.lambda_adv);
        if self.cfg.method == Method::S4mtl {
            let (kl, d_kl) = abs_kl_batch(&l.y, &yhat_u, self.cfg.kl_pairing)?;
            report.kl_unsupervised = kl;
            seed_gu = add(&seed_gu, &d_kl, 1.0);
        }
        if w.alpha != 0.0 {
            seed_gu.scale(w.alpha);
            let grads_u = gen_u.graph.backward(vec![(gen_u.out, seed_gu)]).param_grads(&theta.params);
            theta_grads = sum_grads(theta_grads, grads_u);
        }
        self.update_theta(theta_grads, lr_g);
        Ok((report, eta))
    }
}

fn labeled_batch(samples: &[Sample], idx: &[usize]) -> Result<LabeledBatch> {
    let picked: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
    let images: Vec<&Image> = picked.iter().map(|s| s.image()).collect();
    let masks: Vec<&Mask> = picked
        .iter()
        .map(|s| {
            s.mask().ok_or_else(|| Error::SampleValidation {
                id: s.id().to_string(),
                message: "labeled sample without a mask".into(),
            })
        })
        .collect::<Result<_>>()?;
    let labels = picked
        .iter()
        .map(|s| {
            s.label().map(|c| c.index()).ok_or_else(|| Error::SampleValidation {
                id: s.id().to_string(),
                message: "labeled sample without a class".into(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(LabeledBatch {
        x: images_to_tensor(&images)?,
        y: masks_to_tensor(&masks)?,
        labels,
    })
}

fn unlabeled_batch(pool: &[(Image, Option<usize>)], idx: &[usize]) -> Result<UnlabeledBatch> {
    let images: Vec<&Image> = idx.iter().map(|&i| &pool[i].0).collect();
    let transforms = idx.iter().map(|&i| pool[i].1).collect::<Option<Vec<usize>>>();
    Ok(UnlabeledBatch {
        x: images_to_tensor(&images)?,
        transforms,
    })
}

