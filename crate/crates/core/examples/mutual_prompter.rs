// One mutual prompter on random token matrices: at initialization the
// prompt is exactly zero, and it only starts to carry cross-modal signal
// once the token-attention kernel moves away from zero.

use rtkd::numerics::{rng, trunc_normal, Binder, Graph, ParamSet};
use rtkd::prompter::{fovea, init_params, mmmp_forward, MmmpVars};
use rtkd::ModelConfig;

fn prompt_norm(params: &ParamSet, cfg: &ModelConfig, seed: u64) -> rtkd::Result<f64> {
    let mut r = rng::seeded(seed);
    let shape = [cfg.n_tokens(), cfg.d_model];
    let mut g = Graph::new();
    let own = g.constant(trunc_normal(&mut r, &shape, 1.0));
    let other = g.constant(trunc_normal(&mut r, &shape, 1.0));
    let prev = g.constant(trunc_normal(&mut r, &shape, 1.0));
    let vars = MmmpVars::bind(&mut g, &Binder::new(params, false), "demo")?;
    let p = mmmp_forward(&mut g, &vars, own, other, Some(prev), cfg.fovea_lambda, cfg.prompter)?;
    Ok(g.value(p).data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
}

/// Returns the prompt norm at initialization, after nudging the kernel, and
/// the largest deviation of a fovea mask column sum from 1.
pub fn run_example() -> rtkd::Result<(f64, f64, f64)> {
    let cfg = ModelConfig::default();
    let mut params = ParamSet::new();
    init_params(&mut params, &mut rng::seeded(3), "demo", &cfg)?;
    let at_init = prompt_norm(&params, &cfg, 11)?;

    let kernel = params.get_mut("demo/g_t/kernel")?;
    kernel.data_mut()[3] = 0.5;
    kernel.data_mut()[7 + 3] = 0.5;
    let nudged = prompt_norm(&params, &cfg, 11)?;

    // fovea(x) = mask * x, so mask = fovea(x) / x where x != 0
    let mut g = Graph::new();
    let x = trunc_normal(&mut rng::seeded(5), &[cfg.n_tokens(), cfg.d_model], 1.0);
    let xv = g.constant(x.clone());
    let out = fovea(&mut g, xv, cfg.fovea_lambda)?;
    let (n, d) = (cfg.n_tokens(), cfg.d_model);
    let mut worst = 0f64;
    for c in 0..d {
        let sum: f64 = (0..n).map(|i| (g.value(out).at(i, c) / x.at(i, c)) as f64).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    Ok((at_init, nudged, worst))
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let (a, b, w) = run_example()?;
    println!("prompt norm at init   {a}");
    println!("prompt norm after g_t {b:.4}");
    println!("fovea mask column sums within {w:.2e} of 1");
    Ok(())
}
