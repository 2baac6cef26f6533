//! Canonical on-disk stream cache.
//!
//! Each stream is stored as `<id>.json` (metadata and run-length labels) and
//! `<id>.bin` (channel-major little-endian binary64 frames). `index.json`
//! lists the stream ids in order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stream::{label_runs, FrameLabel, LabelRun, SensorStream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub id: String,
    pub subject_id: u32,
    pub rate_hz: f64,
    pub channels: usize,
    pub frames: usize,
    pub class_names: Vec<String>,
    /// Label legend: activity ids are `>= 0`, transition `-1`, unknown `-2`.
    pub label_runs: Vec<LabelRun>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub streams: Vec<String>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_stream<T: Scalar>(dir: &Path, s: &SensorStream<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = StreamManifest {
        id: s.id.clone(),
        subject_id: s.subject_id,
        rate_hz: s.rate_hz,
        channels: s.channels(),
        frames: s.len(),
        class_names: s.class_names.clone(),
        label_runs: label_runs(&s.labels),
    };
    fs::write(dir.join(format!("{}.json", s.id)), serde_json::to_vec_pretty(&m)?)?;
    let mut bytes = Vec::with_capacity(8 * s.frames.len());
    for v in s.frames.data() {
        bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    fs::write(dir.join(format!("{}.bin", s.id)), bytes)?;
    Ok(())
}

pub fn read_stream<T: Scalar>(dir: &Path, id: &str) -> Result<SensorStream<T>> {
    let mpath = dir.join(format!("{id}.json"));
    let bpath = dir.join(format!("{id}.bin"));
    for p in [&mpath, &bpath] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let m: StreamManifest = serde_json::from_slice(&fs::read(&mpath)?)?;
    let bytes = fs::read(&bpath)?;
    if bytes.len() != 8 * m.channels * m.frames {
        return Err(Error::Contract(format!(
            "{} holds {} bytes, manifest implies {}",
            bpath.display(),
            bytes.len(),
            8 * m.channels * m.frames
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let mut labels = Vec::with_capacity(m.frames);
    for r in &m.label_runs {
        let l = FrameLabel::from_code(r.label_code)?;
        labels.extend(std::iter::repeat_n(l, r.len));
    }
    SensorStream::new(
        m.id,
        m.subject_id,
        m.rate_hz,
        Tensor::new(vec![m.channels, m.frames], data)?,
        labels,
        m.class_names,
    )
}

pub fn write_cache<T: Scalar>(dir: &Path, streams: &[SensorStream<T>], meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in streams {
        write_stream(dir, s)?;
    }
    let index = CacheIndex {
        streams: streams.iter().map(|s| s.id.clone()).collect(),
        meta,
    };
    fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

pub fn read_cache<T: Scalar>(dir: &Path) -> Result<(Vec<SensorStream<T>>, serde_json::Value)> {
    let ipath = dir.join("index.json");
    if !ipath.exists() {
        return Err(Error::MissingArtifact(ipath));
    }
    let index: CacheIndex = serde_json::from_slice(&fs::read(&ipath)?)?;
    let streams = index
        .streams
        .iter()
        .map(|id| read_stream(dir, id))
        .collect::<Result<_>>()?;
    Ok((streams, index.meta))
}
