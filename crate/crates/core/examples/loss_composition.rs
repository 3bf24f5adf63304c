// The training objectives on hand-made inputs: GIoU for overlapping and
// disjoint boxes, the Gaussian target heatmap, and the weighted totals.

use rtkd::losses::{build_gt_heatmap, focal_loss_gt, giou_value, teacher_total, student_total, GtTerms, KdTerms, LossWeights};
use rtkd::numerics::{Graph, Tensor};
use rtkd::BBox;

pub struct LossSummary {
    pub giou_same: f64,
    pub giou_disjoint: f64,
    pub heatmap_peak: (usize, usize),
    pub focal_perfect: f32,
    pub teacher_unit_total: f32,
    pub student_unit_total: f32,
}

pub fn run_example() -> rtkd::Result<LossSummary> {
    let a = BBox::new(0.0, 0.0, 2.0, 2.0);
    let giou_same = giou_value(&a, &a)?;
    let giou_disjoint = giou_value(&a, &BBox::new(3.0, 0.0, 1.0, 2.0))?;

    // a target centred in cell (row 2, col 3) of an 8x8 grid of 4px patches
    let heat = build_gt_heatmap(&BBox::new(12.0, 8.0, 4.0, 4.0), 8, 4)?;
    let mut g = Graph::new();
    // predicting the target heatmap itself leaves only the positive term
    let clamped: Vec<f32> = heat.map.data().iter().map(|&v| v.clamp(1e-6, 1.0 - 1e-6)).collect();
    let score = g.constant(Tensor::new(&[64, 1], clamped)?);
    let focal = focal_loss_gt(&mut g, score, &heat)?;

    let w = LossWeights::default();
    let one = |g: &mut Graph| g.constant(Tensor::scalar(1.0));
    let t = GtTerms {
        focal: one(&mut g),
        giou: one(&mut g),
        l1: one(&mut g),
    };
    let kd = KdTerms {
        rm: one(&mut g),
        mf: one(&mut g),
    };
    let lt = teacher_total(&mut g, &t, &w)?;
    let ls = student_total(&mut g, &t, &kd, &w)?;
    Ok(LossSummary {
        giou_same,
        giou_disjoint,
        heatmap_peak: heat.center,
        focal_perfect: g.value(focal).item(),
        teacher_unit_total: g.value(lt).item(),
        student_unit_total: g.value(ls).item(),
    })
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let s = run_example()?;
    println!("GIoU identical boxes  {}", s.giou_same);
    println!("GIoU disjoint boxes   {:.4}", s.giou_disjoint);
    println!("heatmap peak cell     {:?}", s.heatmap_peak);
    println!("focal at the target   {:.3e}", s.focal_perfect);
    println!("teacher total (units) {}", s.teacher_unit_total);
    println!("student total (units) {}", s.student_unit_total);
    Ok(())
}
