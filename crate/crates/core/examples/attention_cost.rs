// Analytic self-attention cost: doubling the token count (one-stream
// student over both modalities) more than doubles the FLOPs.

use rtkd::encoder::{sa_flops, sa_flops_ratio};

pub fn run_example() -> rtkd::Result<(u128, u128, f64)> {
    let two_stream = sa_flops(320, 768)?;
    let one_stream = sa_flops(640, 768)?;
    let ratio = sa_flops_ratio(320, 640, 768)?;
    Ok((two_stream, one_stream, ratio))
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let (a, b, r) = run_example()?;
    println!("N=320, D=768: {a} FLOPs");
    println!("N=640, D=768: {b} FLOPs");
    println!("ratio {r:.4}");
    Ok(())
}
