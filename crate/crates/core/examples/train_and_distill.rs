// The three training regimes on a tiny corpus: the two-stream teacher on
// labels, the one-stream student distilled from it, and the same student
// architecture trained on labels only. Real runs use far more samples;
// this only shows the moving parts.

use rtkd::data::{generate_sequence, sample_training_pair, ScenarioKind, ScenarioSpec};
use rtkd::eval::evaluate;
use rtkd::models::{StudentModel, TeacherModel, Tracker};
use rtkd::numerics::{rng, ParamSet};
use rtkd::trainer::{distill_student, response_mse, train_fost, train_teacher, TrainConfig};
use rtkd::ModelConfig;

pub struct RegimeSummary {
    pub teacher_losses: Vec<f64>,
    pub student_losses: Vec<f64>,
    pub fost_losses: Vec<f64>,
    /// Response-map MSE to the teacher before and after each student epoch.
    pub student_mse: Vec<f64>,
    pub student_pr: f64,
    pub fost_pr: f64,
}

pub fn run_example() -> rtkd::Result<RegimeSummary> {
    let cfg = ModelConfig::default();
    let data = (0..2)
        .map(|i| generate_sequence(&ScenarioSpec::new(ScenarioKind::Switching, 24, 100 + i)))
        .collect::<rtkd::Result<Vec<_>>>()?;
    let train = TrainConfig {
        epochs: 2,
        decay_epoch: 1,
        samples_per_epoch: 16,
        lr_backbone: 1e-3,
        lr_other: 1e-3,
        seed: 5,
        ..TrainConfig::teacher()
    };

    let trained = train_teacher(TeacherModel::new(cfg.clone(), 5)?, &train, &data, None)?;
    let teacher = TeacherModel::from_params(cfg.clone(), &trained.params)?;

    let mut r = rng::substream(5, 99);
    let probes = (0..8)
        .map(|i| sample_training_pair(&data[i % 2], &mut r, &cfg).map(|p| p.0))
        .collect::<rtkd::Result<Vec<_>>>()?;
    let init = StudentModel::new(cfg.clone(), 5)?;
    let mut student_mse = vec![response_mse(&teacher, &init, &probes)?];
    let mut record = |_epoch: usize, p: &ParamSet| {
        let s = StudentModel::from_params(cfg.clone(), p)?;
        student_mse.push(response_mse(&teacher, &s, &probes)?);
        Ok(())
    };
    let student = distill_student(init.clone(), &teacher, &train, &data, Some(&mut record))?;

    let mut label_only = train.clone();
    label_only.weights.rm = 0.0;
    label_only.weights.mf = 0.0;
    let fost = train_fost(init, &label_only, &data, None)?;

    let pr = |p: &ParamSet| -> rtkd::Result<f64> {
        let m = Tracker::Student(StudentModel::from_params(cfg.clone(), p)?);
        Ok(evaluate(&m, &data)?.1.pr)
    };
    Ok(RegimeSummary {
        teacher_losses: trained.trace.epoch_means(),
        student_pr: pr(&student.params)?,
        fost_pr: pr(&fost.params)?,
        student_losses: student.trace.epoch_means(),
        fost_losses: fost.trace.epoch_means(),
        student_mse,
    })
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let s = run_example()?;
    println!("teacher epoch losses {:?}", s.teacher_losses);
    println!("student epoch losses {:?}", s.student_losses);
    println!("fost epoch losses    {:?}", s.fost_losses);
    println!("student->teacher response MSE {:?}", s.student_mse);
    println!("PR on the training corpus: student {:.3}, fost {:.3}", s.student_pr, s.fost_pr);
    Ok(())
}
