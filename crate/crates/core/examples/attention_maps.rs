// Search-to-template attention and score maps of an untrained teacher and
// student for one frame, encoded as PGM images.

use rtkd::data::{crop_regions, generate_sequence, ScenarioKind, ScenarioSpec};
use rtkd::models::maps::encode_pgm;
use rtkd::models::{ModelKind, Tracker};
use rtkd::ModelConfig;

/// `(model, map name, PGM bytes)` for every map.
pub fn run_example() -> rtkd::Result<Vec<(String, String, Vec<u8>)>> {
    let cfg = ModelConfig::default();
    let seq = generate_sequence(&ScenarioSpec::new(ScenarioKind::TirDominant, 4, 9))?;
    let gt = seq.meta.gt[3];
    let mut inputs = crop_regions(&seq.frames[3], &gt, &gt, &cfg)?.inputs();
    let first = crop_regions(&seq.frames[0], &seq.meta.gt[0], &seq.meta.gt[0], &cfg)?;
    inputs.z_rgb = first.template.0;
    inputs.z_tir = first.template.1;

    let mut out = Vec::new();
    for kind in [ModelKind::Teacher, ModelKind::Student] {
        let maps = Tracker::new(kind, cfg.clone(), 2)?.diagnostic_maps(&inputs)?;
        for (tag, t) in &maps.attention {
            out.push((kind.to_string(), format!("attn_{tag}"), encode_pgm(t)));
        }
        out.push((kind.to_string(), "score".into(), encode_pgm(&maps.score)));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> rtkd::Result<()> {
    for (model, name, pgm) in run_example()? {
        let header = String::from_utf8_lossy(&pgm[..pgm.len().min(11)]).replace('\n', " ");
        println!("{model:<8} {name:<9} {} bytes, header {header:?}", pgm.len());
    }
    Ok(())
}
