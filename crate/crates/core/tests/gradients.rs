//! Central-difference checks of every analytic gradient: graph ops, loss
//! gradients, and complete networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s4mtl::losses::{
    abs_kl_batch, d_selfsup_loss, d_supervised_loss, dice_loss_batch, fake_prob_grad_to_logits, fake_probabilities,
    neg_log, neg_log_one_minus, weighted_cross_entropy, KlPairing,
};
use s4mtl::models::{ConvNetConfig, GeneratorConfig, Mode, NetSpec, Network};
use s4mtl::nn::{Graph, Tensor, Var};

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Softmax over dim 1 of a random `[n, k, h, w]` tensor, bounded away from 0.
fn random_probs(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let (n, k, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut t = random(shape, rng);
    let d = t.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let idx: Vec<usize> = (0..k).map(|c| (b * k + c) * plane + p).collect();
            let z: f64 = idx.iter().map(|&i| d[i].exp()).sum();
            for &i in &idx {
                d[i] = d[i].exp() / z;
            }
        }
    }
    t
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn numeric(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Checks the graph gradient of `Σ c·y` with respect to every input.
fn check_op(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let forward = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = forward(&inputs);
    let coef = random(g.value(out).shape(), &mut rng);
    let grads = g.backward(vec![(out, coef.clone())]);
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let num = numeric(inputs[k].data(), |x| {
            let mut vals = inputs.clone();
            vals[k] = Tensor::from_vec(inputs[k].shape(), x.to_vec()).unwrap();
            let (g, _, out) = forward(&vals);
            g.value(out).data().iter().zip(coef.data()).map(|(a, b)| a * b).sum()
        });
        let e = rel_err(analytic.data(), &num);
        assert!(e < TOL, "input {k}: relative error {e}");
    }
}

pub fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        check_op(vec![random(&[2, 3, 6, 6], &mut rng), random(&[4, 3, 3, 3], &mut rng)], |g, v| {
            g.conv2d(v[0], v[1], stride, pad)
        });
    }
    // Large planes with few channels take the direct kernel path.
    check_op(vec![random(&[1, 2, 64, 64], &mut rng), random(&[2, 2, 3, 3], &mut rng)], |g, v| {
        g.conv2d(v[0], v[1], 1, 1)
    });
}

pub fn transpose_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check_op(
        vec![
            random(&[2, 3, 3, 3], &mut rng),
            random(&[3, 2, 2, 2], &mut rng),
            random(&[2], &mut rng),
        ],
        |g, v| g.conv_transpose2(v[0], v[1], v[2]),
    );
}

pub fn normalization_and_activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check_op(
        vec![random(&[2, 3, 4, 4], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)],
        |g, v| g.instance_norm(v[0], v[1], v[2]),
    );
    check_op(vec![random(&[2, 3, 4, 4], &mut rng)], |g, v| g.leaky_relu(v[0], 0.2));
    check_op(vec![random(&[2, 3, 4, 4], &mut rng)], |g, v| g.relu(v[0]));
    check_op(vec![random(&[2, 3, 4, 4], &mut rng), random(&[3], &mut rng)], |g, v| {
        g.add_channel_bias(v[0], v[1])
    });
    let keep: Vec<bool> = (0..96).map(|i| i % 3 != 0).collect();
    check_op(vec![random(&[2, 3, 4, 4], &mut rng)], move |g, v| g.dropout(v[0], keep.clone(), 1.5));
}

pub fn pooling_concat_softmax_linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check_op(vec![random(&[2, 2, 4, 4], &mut rng)], |g, v| g.max_pool2(v[0]));
    check_op(vec![random(&[2, 2, 4, 4], &mut rng)], |g, v| g.global_avg_pool(v[0]));
    check_op(vec![random(&[2, 2, 4, 4], &mut rng)], |g, v| g.softmax_channels(v[0]));
    check_op(vec![random(&[2, 1, 3, 3], &mut rng), random(&[2, 2, 3, 3], &mut rng)], |g, v| {
        g.concat_channels(v[0], v[1])
    });
    check_op(
        vec![random(&[3, 4], &mut rng), random(&[5, 4], &mut rng), random(&[5], &mut rng)],
        |g, v| g.linear(v[0], v[1], v[2]),
    );
}

pub fn mask_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = random_probs(&[3, 2, 4, 4], &mut rng);
    let p = random_probs(&[3, 2, 4, 4], &mut rng);
    let shape = p.shape().to_vec();
    let at = |x: &[f64]| Tensor::from_vec(&shape, x.to_vec()).unwrap();

    let (_, grad) = dice_loss_batch(&y, &p).unwrap();
    let num = numeric(p.data(), |x| dice_loss_batch(&y, &at(x)).unwrap().0);
    assert!(rel_err(grad.data(), &num) < TOL);

    for pairing in [KlPairing::Index, KlPairing::Pooled] {
        let y_l = random_probs(&[2, 2, 4, 4], &mut rng);
        let (_, grad) = abs_kl_batch(&y_l, &p, pairing).unwrap();
        let num = numeric(p.data(), |x| abs_kl_batch(&y_l, &at(x), pairing).unwrap().0);
        assert!(rel_err(grad.data(), &num) < TOL, "{pairing:?}");
    }
}

pub fn classification_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = random(&[5, 4], &mut rng);
    let at = |x: &[f64]| Tensor::from_vec(&[5, 4], x.to_vec()).unwrap();
    let labels = [0, 2, 1, 2, 0];
    let weights = [1.0, 0.0, 1.0, 1.0, 0.0];

    let (_, grad) = d_supervised_loss(&logits, &labels, Some(&weights)).unwrap();
    let num = numeric(logits.data(), |x| d_supervised_loss(&at(x), &labels, Some(&weights)).unwrap().0);
    assert!(rel_err(grad.data(), &num) < TOL);

    let tids = [3, 0, 1, 2, 3];
    let (_, grad) = d_selfsup_loss(&logits, &tids, None).unwrap();
    let num = numeric(logits.data(), |x| d_selfsup_loss(&at(x), &tids, None).unwrap().0);
    assert!(rel_err(grad.data(), &num) < TOL);

    let (_, grad) = weighted_cross_entropy(&logits, &labels, None, 4).unwrap();
    let num = numeric(logits.data(), |x| weighted_cross_entropy(&at(x), &labels, None, 4).unwrap().0);
    assert!(rel_err(grad.data(), &num) < TOL);

    // Adversarial terms chained through the softmax of the fake class.
    for real in [true, false] {
        let loss = |l: &Tensor| {
            let p = fake_probabilities(l);
            if real {
                neg_log_one_minus(&p).unwrap()
            } else {
                neg_log(&p).unwrap()
            }
        };
        let (_, dp) = loss(&logits);
        let grad = fake_prob_grad_to_logits(&logits, &dp);
        let num = numeric(logits.data(), |x| loss(&at(x)).0);
        assert!(rel_err(grad.data(), &num) < TOL, "real={real}");
    }
}

/// Compares parameter gradients of a network loss against finite differences
/// on every parameter entry.
fn check_network(net: &Network, loss: impl Fn(&Network) -> (f64, Vec<Tensor>)) {
    let (_, analytic) = loss(net);
    for (idx, (name, t)) in net.params.iter().enumerate() {
        let num = numeric(t.data(), |x| {
            let mut probe = net.clone();
            probe.params.get_mut(idx).data_mut().copy_from_slice(x);
            loss(&probe).0
        });
        let e = rel_err(analytic[idx].data(), &num);
        assert!(e < TOL, "parameter {name}: relative error {e}");
    }
}

fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        input_side: 8,
        depth: 1,
        base_channels: 2,
        ..GeneratorConfig::desk()
    }
}

pub fn generator_dice_gradient() {
    let net = Network::init(NetSpec::Generator(tiny_generator()), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[2, 1, 8, 8], &mut rng);
    let y = random_probs(&[2, 2, 8, 8], &mut rng);
    check_network(&net, |n| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        // Same dropout mask on every evaluation.
        let mut drop = ChaCha8Rng::seed_from_u64(9);
        let out = n.forward_graph(&mut g, xv, &mut Mode::Train(&mut drop)).unwrap();
        let mask = out.mask.unwrap();
        let (v, seed) = dice_loss_batch(&y, g.value(mask)).unwrap();
        (v, g.backward(vec![(mask, seed)]).param_grads(&n.params))
    });
}

pub fn umtl_joint_gradient() {
    let spec = NetSpec::Umtl {
        generator: tiny_generator(),
        class_count: 3,
    };
    let net = Network::init(spec, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[2, 1, 8, 8], &mut rng);
    let y = random_probs(&[2, 2, 8, 8], &mut rng);
    check_network(&net, |n| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = n.forward_graph(&mut g, xv, &mut Mode::Eval).unwrap();
        let (mask, logits) = (out.mask.unwrap(), out.main.unwrap());
        let (dice, d_dice) = dice_loss_batch(&y, g.value(mask)).unwrap();
        let (ce, d_ce) = weighted_cross_entropy(g.value(logits), &[2, 0], None, 3).unwrap();
        (dice + ce, g.backward(vec![(mask, d_dice), (logits, d_ce)]).param_grads(&n.params))
    });
}

pub fn discriminator_composite_gradient() {
    let cfg = ConvNetConfig {
        depth: 2,
        base_channels: 2,
        ..ConvNetConfig::discriminator(8, 3)
    };
    let net = Network::init(NetSpec::ConvNet(cfg), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&[3, 1, 8, 8], &mut rng);
    let y = random_probs(&[3, 2, 8, 8], &mut rng);
    let labels = [0, 2, 1];
    let tids = [5, 1, 0];
    check_network(&net, |n| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let pair = g.concat_channels(xv, yv);
        let out = n.forward_graph(&mut g, pair, &mut Mode::Eval).unwrap();
        let (main, aux) = (out.main.unwrap(), out.aux.unwrap());
        let logits = g.value(main).clone();
        let (sup, mut seed) = d_supervised_loss(&logits, &labels, Some(&[1.0, 1.0, 0.0])).unwrap();
        let (adv, dp) = neg_log_one_minus(&fake_probabilities(&logits)).unwrap();
        seed.add_assign(&fake_prob_grad_to_logits(&logits, &dp));
        let (selfsup, mut d_self) = d_selfsup_loss(g.value(aux), &tids, None).unwrap();
        d_self.scale(0.5);
        let grads = g.backward(vec![(main, seed), (aux, d_self)]);
        (sup + adv + 0.5 * selfsup, grads.param_grads(&n.params))
    });
}

/// Every check, by name; each panics on the first gradient outside `TOL`.
pub const CHECKS: &[(&str, fn())] = &[
    ("conv2d_gradients", conv2d_gradients),
    ("transpose_conv_gradients", transpose_conv_gradients),
    ("normalization_and_activation_gradients", normalization_and_activation_gradients),
    ("pooling_concat_softmax_linear_gradients", pooling_concat_softmax_linear_gradients),
    ("mask_loss_gradients", mask_loss_gradients),
    ("classification_loss_gradients", classification_loss_gradients),
    ("generator_dice_gradient", generator_dice_gradient),
    ("umtl_joint_gradient", umtl_joint_gradient),
    ("discriminator_composite_gradient", discriminator_composite_gradient),
];

macro_rules! as_tests {
    ($($name:ident),* $(,)?) => {
        mod checks {
            $(#[test]
            fn $name() {
                super::$name();
            })*
        }
    };
}

as_tests!(conv2d_gradients, transpose_conv_gradients, normalization_and_activation_gradients, pooling_concat_softmax_linear_gradients, mask_loss_gradients, classification_loss_gradients, generator_dice_gradient, umtl_joint_gradient, discriminator_composite_gradient);
