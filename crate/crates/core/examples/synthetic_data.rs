// Generates one sequence of every scenario kind, writes them to disk in the
// RTF + meta.json layout and reads them back.

use rtkd::data::{generate_sequence, read_dataset, write_dataset, ScenarioKind, ScenarioSpec};

pub fn run_example() -> rtkd::Result<Vec<(String, Vec<String>)>> {
    let seqs = ScenarioKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &kind)| generate_sequence(&ScenarioSpec::new(kind, 20, i as u64)))
        .collect::<rtkd::Result<Vec<_>>>()?;

    let dir = tempfile::tempdir().map_err(|e| rtkd::Error::io(std::env::temp_dir(), e))?;
    write_dataset(dir.path(), &seqs)?;
    let back = read_dataset(dir.path())?;
    assert_eq!(back.len(), seqs.len());
    for s in &back {
        let original = seqs.iter().find(|o| o.meta.name == s.meta.name).expect("same names");
        assert_eq!(s, original, "round trip must be bit-exact");
    }
    Ok(back.into_iter().map(|s| (s.meta.name, s.meta.attributes)).collect())
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    for (name, attrs) in run_example()? {
        println!("{name:<20} {}", attrs.join(", "));
    }
    Ok(())
}
