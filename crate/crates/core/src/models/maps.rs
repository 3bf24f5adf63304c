//! Diagnostic maps: last-layer search→template attention and the score map,
//! plus PGM/CSV encoders for them.

use super::{TrackInputs, Tracker};
use crate::embedding::{Modality, Role, Segment};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticMaps {
    /// `(modality tag, G×G map)` per search segment.
    pub attention: Vec<(String, Tensor)>,
    /// `G×G` score map.
    pub score: Tensor,
}

/// Averages `probs` over heads, keeps rows of `search` and columns of every
/// segment in `templates`, and takes the max over those columns.
fn search_to_template(g: &Graph, probs: &[crate::numerics::Var], search: &Segment, templates: &[&Segment]) -> Tensor {
    let n = g.shape(probs[0])[1];
    let mut out = vec![0f32; search.len];
    for (qi, o) in out.iter_mut().enumerate() {
        let q = search.start + qi;
        let mut best = f64::NEG_INFINITY;
        for t in templates {
            for k in t.start..t.start + t.len {
                let mean = probs.iter().map(|&p| g.value(p).data()[q * n + k] as f64).sum::<f64>() / probs.len() as f64;
                best = best.max(mean);
            }
        }
        *o = best as f32;
    }
    Tensor::new(&[search.grid.0, search.grid.1], out).expect("grid shape")
}

fn find(layout: &[Segment], role: Role, m: Modality) -> Result<&Segment> {
    layout
        .iter()
        .find(|s| s.role == role && s.modality == m)
        .ok_or_else(|| Error::dim(format!("layout lacks {role:?} {m:?} segment")))
}

impl Tracker {
    /// The teacher reports each stream against its own template; the
    /// one-stream student reports each search segment against all template
    /// tokens, since both templates share its attention.
    pub fn diagnostic_maps(&self, inputs: &TrackInputs) -> Result<DiagnosticMaps> {
        let mut g = Graph::new();
        let mods = [Modality::Rgb, Modality::Tir];
        let (head, attention) = match self {
            Tracker::Teacher(m) => {
                let f = m.forward(&mut g, inputs, false)?;
                let mut maps = Vec::new();
                for (i, md) in mods.iter().enumerate() {
                    // both streams share one layout; `f.layout` is tagged rgb
                    let s = find(&f.layout, Role::Search, Modality::Rgb)?;
                    let t = find(&f.layout, Role::Template, Modality::Rgb)?;
                    maps.push((md.tag().to_string(), search_to_template(&g, &f.attn[i].probs, s, &[t])));
                }
                (f.head, maps)
            }
            Tracker::Student(m) => {
                let f = m.forward(&mut g, inputs, false)?;
                let temps: Vec<&Segment> = f.layout.iter().filter(|s| s.role == Role::Template).collect();
                let mut maps = Vec::new();
                for md in mods {
                    let s = find(&f.layout, Role::Search, md)?;
                    maps.push((md.tag().to_string(), search_to_template(&g, &f.attn.probs, s, &temps)));
                }
                (f.head, maps)
            }
        };
        Ok(DiagnosticMaps {
            attention,
            score: head.output(&g, self.cfg()).score,
        })
    }
}

/// 8-bit binary PGM of a rank-2 tensor, min-max normalized (constant maps
/// become all zeros).
pub fn encode_pgm(t: &Tensor) -> Vec<u8> {
    let (h, w) = (t.rows(), t.cols());
    let lo = t.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = t.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// One CSV row per tensor row; values use shortest round-trip formatting.
pub fn encode_csv(t: &Tensor) -> String {
    let w = t.cols();
    let mut s = String::new();
    for row in t.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
