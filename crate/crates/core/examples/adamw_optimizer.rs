// AdamW with two parameter groups minimizing a quadratic, and the
// step-decay learning-rate schedule.

use rtkd::numerics::{ParamSet, Tensor};
use rtkd::trainer::{adamw_step, param_group, OptimState, ParamGroup, TrainConfig};

pub fn run_example() -> rtkd::Result<(Vec<f32>, Vec<f64>)> {
    let mut params = ParamSet::new();
    params.insert("student/encoder/layer0/w", Tensor::vector(vec![3.0, -2.0]))?;
    params.insert("student/head/w", Tensor::vector(vec![1.0]))?;
    let cfg = TrainConfig {
        lr_backbone: 0.01,
        lr_other: 0.1,
        weight_decay: 0.0,
        ..TrainConfig::teacher()
    };
    let rates: Vec<f64> = params
        .iter()
        .map(|p| match param_group(&p.name) {
            ParamGroup::Backbone => cfg.lr_backbone,
            ParamGroup::Other => cfg.lr_other,
        })
        .collect();
    let mut state = OptimState::new(&params);
    for _ in 0..500 {
        // gradient of 0.5·|θ|²
        let grads: Vec<Vec<f32>> = params.iter().map(|p| p.tensor.data().to_vec()).collect();
        adamw_step(&mut params, &grads, &mut state, &rates, cfg.weight_decay)?;
    }
    let finals = params.iter().flat_map(|p| p.tensor.data().to_vec()).collect();
    let schedule = (1..=cfg.epochs).map(|e| cfg.lr_scale(e)).collect();
    Ok((finals, schedule))
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let (finals, schedule) = run_example()?;
    println!("parameters after 500 steps {finals:?}");
    println!("lr multiplier per epoch    {schedule:?}");
    Ok(())
}
