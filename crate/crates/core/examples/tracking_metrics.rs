// Precision and success curves for hand-built trajectories, including a
// per-attribute breakdown and the F-score of a precision/recall pair.

use rtkd::eval::{f_score, precision_success, TrackResult};
use rtkd::BBox;

pub fn run_example() -> rtkd::Result<(f64, f64, f64, f64)> {
    let gt: Vec<BBox> = (0..40).map(|i| BBox::from_center(20.0 + i as f64, 30.0, 10.0, 8.0)).collect();
    // a tracker that drifts 1px further right every frame
    let drifting = TrackResult {
        name: "drift".into(),
        pred: gt.iter().enumerate().map(|(i, b)| b.translate(i as f64, 0.0)).collect(),
        gt: gt.clone(),
        attributes: vec!["fast_motion".into()],
    };
    let perfect = TrackResult {
        name: "locked".into(),
        pred: gt.clone(),
        gt,
        attributes: vec!["occlusion".into()],
    };
    let report = precision_success(&[drifting, perfect])?;
    let drift = &report.attributes["fast_motion"];
    Ok((report.pr, report.sr, drift.pr, f_score(0.619, 0.611)))
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let (pr, sr, drift_pr, f) = run_example()?;
    println!("overall PR {pr:.4} SR {sr:.4}");
    println!("fast_motion PR {drift_pr:.4}");
    println!("F(0.619, 0.611) = {f:.4}");
    Ok(())
}
