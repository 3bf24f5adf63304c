//! Sequence directories: `meta.json` plus `NNNNNN.rgb.rtf` / `NNNNNN.tir.rtf`
//! per frame. RTF is `"RTF0"`, then little-endian `u32` width, height,
//! channels, then the `f32` samples row-major and channel-interleaved.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameRecord, Sequence, SequenceMeta, Visibility};
use crate::bbox::BBox;
use crate::embedding::ImagePlane;
use crate::error::{Error, Result};
use crate::io_util::{read, write_atomic};

pub const RTF_MAGIC: &[u8; 4] = b"RTF0";
pub const META_FILE: &str = "meta.json";
const HEADER: usize = 16;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaJson {
    name: String,
    num_frames: usize,
    width: usize,
    height: usize,
    attributes: Vec<String>,
    gt: Vec<[f64; 4]>,
    visibility: VisJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisJson {
    rgb: Vec<f64>,
    tir: Vec<f64>,
}

pub fn frame_file(index: usize, modality: &str) -> String {
    format!("{index:06}.{modality}.rtf")
}

pub fn encode_rtf(img: &ImagePlane) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + img.data.len() * 4);
    out.extend_from_slice(RTF_MAGIC);
    for v in [img.width, img.height, img.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses RTF bytes; `path` only labels errors.
pub fn decode_rtf(path: &Path, bytes: &[u8]) -> Result<ImagePlane> {
    if bytes.len() < 4 || &bytes[..4] != RTF_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected RTF0"));
    }
    if bytes.len() < HEADER {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    if w == 0 || h == 0 || c == 0 {
        return Err(Error::format(path, 4, format!("empty image {w}x{h}x{c}")));
    }
    let need = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER))
        .ok_or_else(|| Error::format(path, 4, format!("image {w}x{h}x{c} too large")))?;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: {w}x{h}x{c} needs {need} bytes"),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(path, need as u64, "trailing bytes after pixel data"));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    ImagePlane::new(h, w, c, data)
}

pub fn write_rtf(path: &Path, img: &ImagePlane) -> Result<()> {
    write_atomic(path, &encode_rtf(img))
}

pub fn read_rtf(path: &Path) -> Result<ImagePlane> {
    decode_rtf(path, &read(path)?)
}

fn meta_to_json(meta: &SequenceMeta) -> MetaJson {
    MetaJson {
        name: meta.name.clone(),
        num_frames: meta.num_frames,
        width: meta.width,
        height: meta.height,
        attributes: meta.attributes.clone(),
        gt: meta.gt.iter().map(BBox::to_array).collect(),
        visibility: VisJson {
            rgb: meta.visibility.rgb.clone(),
            tir: meta.visibility.tir.clone(),
        },
    }
}

fn meta_from_json(path: &Path, bytes: &[u8]) -> Result<SequenceMeta> {
    let m: MetaJson = serde_json::from_slice(bytes).map_err(|e| {
        let offset = line_offset(bytes, e.line(), e.column());
        Error::format(path, offset, e.to_string())
    })?;
    let n = m.num_frames;
    if m.gt.len() != n || m.visibility.rgb.len() != n || m.visibility.tir.len() != n {
        return Err(Error::format(
            path,
            0,
            format!(
                "num_frames {n} but {} boxes, {}/{} visibilities",
                m.gt.len(),
                m.visibility.rgb.len(),
                m.visibility.tir.len()
            ),
        ));
    }
    Ok(SequenceMeta {
        name: m.name,
        num_frames: n,
        width: m.width,
        height: m.height,
        attributes: m.attributes,
        gt: m.gt.iter().map(|b| BBox::new(b[0], b[1], b[2], b[3])).collect(),
        visibility: Visibility {
            rgb: m.visibility.rgb,
            tir: m.visibility.tir,
        },
    })
}

fn line_offset(bytes: &[u8], line: usize, column: usize) -> u64 {
    let mut off = 0usize;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (off + column.saturating_sub(1)) as u64;
        }
        off += l.len() + 1;
    }
    bytes.len() as u64
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    if seq.frames.len() != seq.meta.num_frames {
        return Err(Error::validation(format!(
            "{} frames but meta says {}",
            seq.frames.len(),
            seq.meta.num_frames
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_rtf(&dir.join(frame_file(i, "rgb")), &f.rgb)?;
        write_rtf(&dir.join(frame_file(i, "tir")), &f.tir)?;
    }
    let json = serde_json::to_vec_pretty(&meta_to_json(&seq.meta)).expect("meta serializes");
    write_atomic(&dir.join(META_FILE), &json)
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let meta_path = dir.join(META_FILE);
    let meta = meta_from_json(&meta_path, &read(&meta_path)?)?;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut on_disk = 0usize;
    for e in entries {
        let e = e.map_err(|err| Error::io(dir, err))?;
        if e.file_name().to_string_lossy().ends_with(".rgb.rtf") {
            on_disk += 1;
        }
    }
    if on_disk != meta.num_frames {
        return Err(Error::format(
            &meta_path,
            0,
            format!("num_frames {} but {on_disk} rgb frames on disk", meta.num_frames),
        ));
    }
    let mut frames = Vec::with_capacity(meta.num_frames);
    for i in 0..meta.num_frames {
        let load = |modality: &str, channels: usize| -> Result<ImagePlane> {
            let p = dir.join(frame_file(i, modality));
            let img = read_rtf(&p)?;
            if img.width != meta.width || img.height != meta.height || img.channels != channels {
                return Err(Error::format(
                    &p,
                    4,
                    format!(
                        "{}x{}x{} frame, expected {}x{}x{channels}",
                        img.width, img.height, img.channels, meta.width, meta.height
                    ),
                ));
            }
            Ok(img)
        };
        let rgb = load("rgb", 3)?;
        let tir = load("tir", 1)?;
        frames.push(FrameRecord { rgb, tir });
    }
    Ok(Sequence { meta, frames })
}

/// Writes each sequence to `root/<name>`.
pub fn write_dataset(root: &Path, seqs: &[Sequence]) -> Result<Vec<PathBuf>> {
    seqs.iter()
        .map(|s| {
            let d = root.join(&s.meta.name);
            write_sequence(&d, s)?;
            Ok(d)
        })
        .collect()
}

/// Loads every sub-directory of `root` holding a `meta.json`, by name order.
pub fn read_dataset(root: &Path) -> Result<Vec<Sequence>> {
    let mut dirs = Vec::new();
    for e in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = e.map_err(|err| Error::io(root, err))?.path();
        if p.join(META_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, 0, "no sequence directories (meta.json) found"));
    }
    dirs.iter().map(|d| read_sequence(d)).collect()
}
