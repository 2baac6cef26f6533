//! Readers for the public releases of the three benchmark corpora.
//!
//! * `dg`: Daphnet freezing-of-gait, one whitespace-separated file per
//!   recording (`SxxRyy.txt`): time, nine accelerometer columns, annotation.
//! * `wisdm`: WISDM activity prediction v1.1 raw file,
//!   `user,activity,timestamp,x,y,z;` rows.
//! * `sbhar`: smartphone-based HAR with postural transitions, `RawData/`
//!   with `acc_expXX_userYY.txt`, `gyro_expXX_userYY.txt` and `labels.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stream::{FrameLabel, SensorStream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// Named subjects go to validation and test, the rest to training.
    Fixed { validation: Vec<u32>, test: Vec<u32> },
    /// Subjects sorted by id are cut into consecutive train/validation/test
    /// blocks of the given fractions.
    Fractions { train: f64, validation: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    pub split: SplitRule,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn descriptor(name: &str) -> Result<DatasetDescriptor> {
    let fractions = SplitRule::Fractions {
        train: 0.7,
        validation: 0.1,
    };
    match name {
        "dg" => Ok(DatasetDescriptor {
            name: "dg".into(),
            rate_hz: 64.0,
            channel_names: names(&[
                "ankle_fwd", "ankle_vert", "ankle_lat", "thigh_fwd", "thigh_vert", "thigh_lat",
                "trunk_fwd", "trunk_vert", "trunk_lat",
            ]),
            class_names: names(&["no_freeze", "freeze"]),
            split: SplitRule::Fixed {
                validation: vec![9],
                test: vec![2],
            },
        }),
        "wisdm" => Ok(DatasetDescriptor {
            name: "wisdm".into(),
            rate_hz: 20.0,
            channel_names: names(&["acc_x", "acc_y", "acc_z"]),
            class_names: names(&WISDM_CLASSES),
            split: fractions,
        }),
        "sbhar" => Ok(DatasetDescriptor {
            name: "sbhar".into(),
            rate_hz: 50.0,
            channel_names: names(&["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"]),
            class_names: names(&SBHAR_CLASSES),
            split: fractions,
        }),
        other => Err(Error::Config(format!(
            "unknown dataset {other:?} (expected dg, wisdm or sbhar)"
        ))),
    }
}

const WISDM_CLASSES: [&str; 6] = ["Walking", "Jogging", "Upstairs", "Downstairs", "Sitting", "Standing"];
const SBHAR_CLASSES: [&str; 6] = [
    "walking",
    "walking_upstairs",
    "walking_downstairs",
    "sitting",
    "standing",
    "laying",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Skip rows that fail to parse instead of failing the load. The WISDM
    /// release contains a handful of truncated rows.
    pub skip_malformed: bool,
    /// Keep at most this many frames per stream.
    pub max_frames: Option<usize>,
}

/// Loads every stream of dataset `name` found under `path`.
pub fn load_dataset<T: Scalar>(
    name: &str,
    path: &Path,
    opts: LoadOptions,
) -> Result<Vec<SensorStream<T>>> {
    let desc = descriptor(name)?;
    let mut streams = match name {
        "dg" => load_dg(path, &desc, opts)?,
        "wisdm" => load_wisdm(path, &desc, opts)?,
        "sbhar" => load_sbhar(path, &desc, opts)?,
        _ => unreachable!("descriptor accepted the name"),
    };
    if let Some(max) = opts.max_frames {
        for s in &mut streams {
            truncate(s, max)?;
        }
    }
    Ok(streams)
}

fn truncate<T: Scalar>(s: &mut SensorStream<T>, max: usize) -> Result<()> {
    if s.len() <= max {
        return Ok(());
    }
    s.frames = s.window(0, max)?;
    s.labels.truncate(max);
    Ok(())
}

fn missing(path: &Path) -> Error {
    Error::MissingArtifact(path.to_path_buf())
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(missing(path));
    }
    Ok(fs::read_to_string(path)?)
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn build<T: Scalar>(
    id: String,
    subject: u32,
    desc: &DatasetDescriptor,
    columns: Vec<Vec<f64>>,
    labels: Vec<FrameLabel>,
) -> Result<SensorStream<T>> {
    let n = labels.len();
    let mut data = Vec::with_capacity(columns.len() * n);
    for c in columns {
        data.extend(c.into_iter().map(T::of));
    }
    let frames = Tensor::new(vec![desc.channel_names.len(), n], data)?;
    SensorStream::new(id, subject, desc.rate_hz, frames, labels, desc.class_names.clone())
}

/// Files in `dir` matching `pred`, sorted by name.
fn list(dir: &Path, pred: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(missing(dir));
    }
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.file_name().and_then(|n| n.to_str()).is_some_and(&pred) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Runs `f` on every path on its own thread, preserving order.
fn par_map<R: Send>(paths: &[PathBuf], f: impl Fn(&Path) -> Result<R> + Sync) -> Result<Vec<R>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = paths.iter().map(|p| scope.spawn(|| f(p))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("loader thread panicked"))
            .collect()
    })
}

/// `SxxRyy.txt` → (subject, run).
fn dg_ids(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_suffix(".txt")?.strip_prefix('S')?;
    let (s, r) = stem.split_once('R')?;
    Some((s.parse().ok()?, r.parse().ok()?))
}

fn load_dg<T: Scalar>(
    path: &Path,
    desc: &DatasetDescriptor,
    opts: LoadOptions,
) -> Result<Vec<SensorStream<T>>> {
    let dir = if path.join("dataset").is_dir() {
        path.join("dataset")
    } else {
        path.to_path_buf()
    };
    let files = list(&dir, |n| dg_ids(n).is_some())?;
    if files.is_empty() {
        return Err(missing(&dir.join("S01R01.txt")));
    }
    par_map(&files, |file| {
        let name = file.file_name().unwrap().to_string_lossy().into_owned();
        let (subject, run) = dg_ids(&name).unwrap();
        let text = read(file)?;
        let mut cols = vec![Vec::new(); 9];
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = match row {
                Ok(r) if r.len() == 11 => r,
                Ok(r) if opts.skip_malformed => {
                    log::warn!("{}:{}: skipping row with {} columns", file.display(), i + 1, r.len());
                    continue;
                }
                Ok(r) => {
                    return Err(parse_err(file, i + 1, format!("expected 11 columns, got {}", r.len())))
                }
                Err(_) if opts.skip_malformed => continue,
                Err(e) => return Err(parse_err(file, i + 1, e.to_string())),
            };
            let label = match row[10] {
                a if a == 0.0 => FrameLabel::Unknown,
                a if a == 1.0 => FrameLabel::Activity(0),
                a if a == 2.0 => FrameLabel::Activity(1),
                a => return Err(Error::UnknownLabel(format!("{a} ({}:{})", file.display(), i + 1))),
            };
            for c in 0..9 {
                cols[c].push(row[c + 1]);
            }
            labels.push(label);
        }
        build(format!("dg_S{subject:02}R{run:02}"), subject, desc, cols, labels)
    })
}

fn load_wisdm<T: Scalar>(
    path: &Path,
    desc: &DatasetDescriptor,
    opts: LoadOptions,
) -> Result<Vec<SensorStream<T>>> {
    let file = if path.is_dir() {
        path.join("WISDM_ar_v1.1_raw.txt")
    } else {
        path.to_path_buf()
    };
    let text = read(&file)?;
    // user → (x, y, z, labels)
    let mut users: BTreeMap<u32, (Vec<Vec<f64>>, Vec<FrameLabel>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        // Some lines hold several `;`-terminated records.
        for rec in line.split(';') {
            let rec = rec.trim().trim_end_matches(',');
            if rec.is_empty() {
                continue;
            }
            match parse_wisdm(rec) {
                Ok((user, class, xyz)) => {
                    let entry = users
                        .entry(user)
                        .or_insert_with(|| (vec![Vec::new(); 3], Vec::new()));
                    for c in 0..3 {
                        entry.0[c].push(xyz[c]);
                    }
                    entry.1.push(FrameLabel::Activity(class));
                }
                Err(WisdmRow::Label(l)) => {
                    return Err(Error::UnknownLabel(format!("{l} ({}:{})", file.display(), i + 1)))
                }
                Err(WisdmRow::Malformed(_)) if opts.skip_malformed => {
                    log::warn!("{}:{}: skipping malformed row", file.display(), i + 1);
                }
                Err(WisdmRow::Malformed(m)) => return Err(parse_err(&file, i + 1, m)),
            }
        }
    }
    users
        .into_iter()
        .map(|(user, (cols, labels))| build(format!("wisdm_u{user:02}"), user, desc, cols, labels))
        .collect()
}

enum WisdmRow {
    Malformed(String),
    Label(String),
}

fn parse_wisdm(rec: &str) -> std::result::Result<(u32, u16, [f64; 3]), WisdmRow> {
    let f: Vec<&str> = rec.split(',').map(str::trim).collect();
    if f.len() != 6 {
        return Err(WisdmRow::Malformed(format!("expected 6 fields, got {}", f.len())));
    }
    let user = f[0]
        .parse()
        .map_err(|_| WisdmRow::Malformed(format!("bad user id {:?}", f[0])))?;
    let class = WISDM_CLASSES
        .iter()
        .position(|c| *c == f[1])
        .ok_or_else(|| WisdmRow::Label(f[1].to_string()))? as u16;
    let mut xyz = [0.0; 3];
    for c in 0..3 {
        xyz[c] = f[3 + c]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| WisdmRow::Malformed(format!("bad value {:?}", f[3 + c])))?;
    }
    Ok((user, class, xyz))
}

/// `acc_expXX_userYY.txt` → (experiment, user).
fn sbhar_ids(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_prefix("acc_exp")?.strip_suffix(".txt")?;
    let (e, u) = stem.split_once("_user")?;
    Some((e.parse().ok()?, u.parse().ok()?))
}

fn read_columns(file: &Path, width: usize, opts: LoadOptions) -> Result<Vec<Vec<f64>>> {
    let text = read(file)?;
    let mut cols = vec![Vec::new(); width];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        match row {
            Ok(r) if r.len() == width => {
                for (c, v) in r.into_iter().enumerate() {
                    cols[c].push(v);
                }
            }
            _ if opts.skip_malformed => {}
            Ok(r) => {
                return Err(parse_err(file, i + 1, format!("expected {width} columns, got {}", r.len())))
            }
            Err(e) => return Err(parse_err(file, i + 1, e.to_string())),
        }
    }
    Ok(cols)
}

fn load_sbhar<T: Scalar>(
    path: &Path,
    desc: &DatasetDescriptor,
    opts: LoadOptions,
) -> Result<Vec<SensorStream<T>>> {
    let dir = if path.join("RawData").is_dir() {
        path.join("RawData")
    } else {
        path.to_path_buf()
    };
    let label_file = dir.join("labels.txt");
    let text = read(&label_file)?;
    // (exp, user) → [(activity, start, end)], 1-based inclusive frames
    let mut spans: BTreeMap<(u32, u32), Vec<(u32, usize, usize)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: std::result::Result<Vec<u64>, _> = line.split_whitespace().map(str::parse).collect();
        let f = match f {
            Ok(f) if f.len() == 5 && f[3] >= 1 && f[3] <= f[4] => f,
            _ => return Err(parse_err(&label_file, i + 1, "expected `exp user activity start end`")),
        };
        if !(1..=12).contains(&f[2]) {
            return Err(Error::UnknownLabel(format!("{} ({}:{})", f[2], label_file.display(), i + 1)));
        }
        spans
            .entry((f[0] as u32, f[1] as u32))
            .or_default()
            .push((f[2] as u32, f[3] as usize, f[4] as usize));
    }
    let files = list(&dir, |n| sbhar_ids(n).is_some())?;
    if files.is_empty() {
        return Err(missing(&dir.join("acc_exp01_user01.txt")));
    }
    par_map(&files, |acc| {
        let (exp, user) = sbhar_ids(&acc.file_name().unwrap().to_string_lossy()).unwrap();
        let gyro = dir.join(format!("gyro_exp{exp:02}_user{user:02}.txt"));
        let mut cols = read_columns(acc, 3, opts)?;
        let g = read_columns(&gyro, 3, opts)?;
        let n = cols[0].len().min(g[0].len());
        cols.extend(g);
        for c in &mut cols {
            c.truncate(n);
        }
        let mut labels = vec![FrameLabel::Unknown; n];
        for &(act, start, end) in spans.get(&(exp, user)).map(Vec::as_slice).unwrap_or(&[]) {
            let l = if act <= 6 {
                FrameLabel::Activity(act as u16 - 1)
            } else {
                FrameLabel::Transition
            };
            for slot in labels.iter_mut().take(end.min(n)).skip(start - 1) {
                *slot = l;
            }
        }
        build(format!("sbhar_e{exp:02}u{user:02}"), user, desc, cols, labels)
    })
}

#[derive(Clone, Debug)]
pub struct Splits<S> {
    pub train: Vec<S>,
    pub validation: Vec<S>,
    pub test: Vec<S>,
}

/// Partitions subjects according to `rule`; every subject lands in exactly
/// one split.
pub fn split_subjects(subjects: &[u32], rule: &SplitRule) -> Splits<u32> {
    let mut ids: Vec<u32> = subjects.to_vec();
    ids.sort_unstable();
    ids.dedup();
    match rule {
        SplitRule::Fixed { validation, test } => {
            let mut out = Splits {
                train: Vec::new(),
                validation: Vec::new(),
                test: Vec::new(),
            };
            for id in ids {
                if test.contains(&id) {
                    out.test.push(id);
                } else if validation.contains(&id) {
                    out.validation.push(id);
                } else {
                    out.train.push(id);
                }
            }
            out
        }
        SplitRule::Fractions { train, validation } => {
            let n = ids.len();
            let n_train = ((n as f64) * train).round() as usize;
            let n_val = (((n as f64) * validation).round() as usize).min(n - n_train.min(n));
            let n_train = n_train.min(n);
            Splits {
                train: ids[..n_train].to_vec(),
                validation: ids[n_train..n_train + n_val].to_vec(),
                test: ids[n_train + n_val..].to_vec(),
            }
        }
    }
}

pub fn split_streams<T: Clone>(streams: Vec<SensorStream<T>>, rule: &SplitRule) -> Splits<SensorStream<T>> {
    let subjects: Vec<u32> = streams.iter().map(|s| s.subject_id).collect();
    let ids = split_subjects(&subjects, rule);
    let mut out = Splits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for s in streams {
        if ids.test.contains(&s.subject_id) {
            out.test.push(s);
        } else if ids.validation.contains(&s.subject_id) {
            out.validation.push(s);
        } else {
            out.train.push(s);
        }
    }
    out
}
