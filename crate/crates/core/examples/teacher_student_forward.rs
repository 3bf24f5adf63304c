// Builds the two-stream teacher and the one-stream student on the toy
// geometry, checks the token counts and runs both on one crop pair.

use rtkd::data::{crop_regions, generate_sequence, ScenarioKind, ScenarioSpec};
use rtkd::models::{ModelKind, StudentModel, TeacherModel, Tracker};
use rtkd::numerics::Graph;
use rtkd::ModelConfig;

pub struct ForwardSummary {
    pub teacher_tokens: usize,
    pub student_tokens: usize,
    pub teacher_box: rtkd::BBox,
    pub student_box: rtkd::BBox,
}

pub fn run_example() -> rtkd::Result<ForwardSummary> {
    let cfg = ModelConfig::default();
    let seq = generate_sequence(&ScenarioSpec::new(ScenarioKind::Switching, 8, 1))?;
    let gt = seq.meta.gt[0];
    let inputs = crop_regions(&seq.frames[0], &gt, &gt, &cfg)?.inputs();

    let teacher = TeacherModel::new(cfg.clone(), 7)?;
    let student = StudentModel::new(cfg.clone(), 7)?;
    let mut g = Graph::new();
    let tf = teacher.forward(&mut g, &inputs, false)?;
    let teacher_tokens = g.shape(tf.layers[0].0)[0];
    let sf = student.forward(&mut g, &inputs, false)?;
    let student_tokens = g.shape(sf.layers[0])[0];

    let t = Tracker::new(ModelKind::Teacher, cfg.clone(), 7)?.predict(&inputs)?;
    let s = Tracker::new(ModelKind::Student, cfg, 7)?.predict(&inputs)?;
    Ok(ForwardSummary {
        teacher_tokens,
        student_tokens,
        teacher_box: t.bbox,
        student_box: s.bbox,
    })
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let s = run_example()?;
    println!("teacher stream tokens {}", s.teacher_tokens);
    println!("student tokens        {}", s.student_tokens);
    println!("untrained teacher box {:?}", s.teacher_box);
    println!("untrained student box {:?}", s.student_box);
    Ok(())
}
