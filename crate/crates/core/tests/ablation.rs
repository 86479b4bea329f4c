//! With the unlabeled weight and the adversarial weight both zero, the
//! semi-supervised generator must follow the supervised U-Net trajectory.

use s4mtl::data::{make_synthetic, stratified_split, SplitFractions};
use s4mtl::models::{GeneratorConfig, ModelParams};
use s4mtl::nn::Tensor;
use s4mtl::trainer::{init_models, train_observed, Method, TrainerConfig};

pub const STEPS: usize = 10;
pub const TOL: f64 = 1e-9;

fn config(method: Method) -> TrainerConfig {
    let mut cfg = TrainerConfig::new(method);
    cfg.generator = GeneratorConfig {
        input_side: 16,
        depth: 2,
        base_channels: 4,
        ..GeneratorConfig::desk()
    };
    cfg.convnet_depth = 2;
    cfg.convnet_base = 4;
    cfg.batch_size = 8;
    // Eight labeled samples and a batch of eight: one step per epoch.
    cfg.epochs = STEPS;
    cfg.seed = 3;
    cfg
}

fn theta_trajectory(cfg: &TrainerConfig) -> Result<Vec<Vec<Tensor>>, String> {
    let samples = make_synthetic(20, 16, 2, 11).map_err(|e| e.to_string())?;
    let fractions = SplitFractions {
        labeled: 0.5,
        validation: 0.1,
        test: 0.1,
    };
    let split = stratified_split(&samples, 2, fractions, 3).map_err(|e| e.to_string())?;
    if split.labeled.len() != cfg.batch_size || split.unlabeled.len() != cfg.batch_size {
        return Err(format!("expected 8 + 8 training samples, got {} + {}", split.labeled.len(), split.unlabeled.len()));
    }
    let snapshot = |m: &ModelParams| -> Vec<Tensor> {
        let theta = m.theta.as_ref().expect("generator");
        theta.params.iter().map(|(_, t)| t.clone()).collect()
    };
    let models = init_models(cfg, 2).map_err(|e| e.to_string())?;
    let mut trajectory = vec![snapshot(&models)];
    train_observed(&split, models, cfg, &mut |ev| {
        trajectory.push(snapshot(ev.models));
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok(trajectory)
}

fn max_deviation(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn suite() -> Result<String, String> {
    let mut s4 = config(Method::S4mtl);
    s4.weights.alpha = 0.0;
    s4.weights.lambda_adv = 0.0;
    let unet = config(Method::Unet);
    let a = theta_trajectory(&s4)?;
    let b = theta_trajectory(&unet)?;
    if a.len() != STEPS + 1 || b.len() != STEPS + 1 {
        return Err(format!("expected {} snapshots, got {} and {}", STEPS + 1, a.len(), b.len()));
    }
    let mut worst = 0.0f64;
    for (k, (x, y)) in a.iter().zip(&b).enumerate() {
        let dev = max_deviation(x, y);
        worst = worst.max(dev);
        if dev > TOL {
            return Err(format!("generator parameters differ by {dev:.3e} after step {k}"));
        }
    }
    let moved = max_deviation(&a[0], &a[STEPS]);
    if moved == 0.0 {
        return Err("generator parameters never changed".into());
    }
    Ok(format!("{STEPS} steps, max deviation {worst:.1e} (tol {TOL:.0e}), parameters moved {moved:.2e}"))
}

#[test]
fn zero_weights_reduce_to_unet() {
    if let Err(e) = suite() {
        panic!("{e}");
    }
}
