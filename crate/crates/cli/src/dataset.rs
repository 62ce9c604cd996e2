//! On-disk layout of a synthetic dataset: one `pair_NNN` directory per pair
//! holding `features.apct`, `original.mid`, `cover.mid`, `style.json` and
//! `intensity.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apc_core::roll::{notes_to_tensors, parse_midi, write_midi, DEFAULT_SOFT_ONSET_WIDTH};
use apc_core::toynet::SyntheticPair;
use apc_core::{FrameGrid, MidiNote, StyleVector, Tensor};
use serde::Serialize;

pub fn read_notes(path: &Path) -> Result<Vec<MidiNote>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_midi(&bytes)?;
    if parsed.dropped_out_of_range > 0 {
        log::warn!("{}: dropped {} notes outside the piano range", path.display(), parsed.dropped_out_of_range);
    }
    Ok(parsed.notes)
}

pub fn write_notes(path: &Path, notes: &[MidiNote]) -> Result<()> {
    fs::write(path, write_midi(notes)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(apc_core::Error::from)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn pair_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("pair_{index:03}"))
}

pub fn write_pair(dir: &Path, pair: &SyntheticPair) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    pair.input_features.write(dir.join("features.apct"))?;
    write_notes(&dir.join("original.mid"), &pair.original)?;
    write_notes(&dir.join("cover.mid"), &pair.cover)?;
    write_json(&dir.join("style.json"), &pair.style)?;
    let path = dir.join("intensity.txt");
    fs::write(&path, format!("{}\n", pair.intensity)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_pair(dir: &Path, grid: &FrameGrid) -> Result<SyntheticPair> {
    let cover = read_notes(&dir.join("cover.mid"))?;
    let path = dir.join("intensity.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let intensity = text.trim().parse().with_context(|| format!("{}: not a number", path.display()))?;
    Ok(SyntheticPair {
        input_features: Tensor::read(dir.join("features.apct"))?,
        target: notes_to_tensors(&cover, 0, grid, DEFAULT_SOFT_ONSET_WIDTH),
        style: read_json::<StyleVector>(&dir.join("style.json"))?,
        original: read_notes(&dir.join("original.mid"))?,
        cover,
        intensity,
    })
}

/// Every `pair_*` directory under `root`, in name order.
pub fn read_dataset(root: &Path, grid: &FrameGrid) -> Result<Vec<SyntheticPair>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("pair_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no pair_* directories in {}", root.display());
    }
    dirs.iter().map(|d| read_pair(d, grid)).collect()
}
