// The command line end to end in a temporary directory: generate data,
// train a teacher, distill a student, evaluate it and dump its maps.

use std::path::Path;

fn rtkd(args: &[&str]) -> rtkd::Result<String> {
    let mut out = Vec::new();
    rtkd::cli::run(std::iter::once("rtkd").chain(args.iter().copied()), &mut out)?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn run_example() -> rtkd::Result<serde_json::Value> {
    let tmp = tempfile::tempdir().map_err(|e| rtkd::Error::io(std::env::temp_dir(), e))?;
    let root = tmp.path();
    let (data, teacher, student) = (root.join("data"), root.join("teacher"), root.join("student"));
    let (report, maps) = (root.join("report.json"), root.join("maps"));
    let tiny = ["--set", "epochs=2", "--set", "decay_epoch=1", "--set", "samples_per_epoch=8"];

    rtkd(&["gen-data", "--out", path(&data), "--scenario", "mixed", "--frames", "12", "--seqs", "3", "--seed", "4"])?;
    let mut args = vec!["train-teacher", "--data", path(&data), "--out", path(&teacher)];
    args.extend(tiny);
    rtkd(&args)?;
    let mut args = vec!["distill", "--data", path(&data), "--out", path(&student), "--teacher", path(&teacher)];
    args.extend(tiny);
    rtkd(&args)?;
    print!("{}", rtkd(&["eval", "--model", path(&student), "--data", path(&data), "--report", path(&report)])?);
    print!("{}", rtkd(&["dump-maps", "--model", path(&student), "--data", path(&data), "--frame", "5", "--out", path(&maps)])?);

    let text = std::fs::read_to_string(&report).map_err(|e| rtkd::Error::io(&report, e))?;
    Ok(serde_json::from_str(&text).expect("report is JSON"))
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    let report = run_example()?;
    println!("report keys: {:?}", report.as_object().map(|o| o.keys().collect::<Vec<_>>()));
    Ok(())
}
