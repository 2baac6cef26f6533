//! The steps behind the `harsiam` command line. Every step reads its inputs
//! from one run directory and writes its outputs there, so steps can run as
//! separate processes and be repeated independently.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json          resolved configuration of the latest step
//! version.txt          tool name and version
//! data/stats.json      normalization statistics (training split)
//! data/<split>/        normalized stream cache per split
//! seg.ckpt, seg_loss.csv
//! rec.ckpt, rec_loss.csv
//! boundaries/<id>.csv  detected regions per evaluated stream
//! segments.csv, embeddings.csv, assignments.csv
//! report.txt, confusion.csv
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::clustering::{read_assignment_csv, write_assignment_csv};
use crate::config::RunConfig;
use crate::data::{
    descriptor, load_dataset, random_segments, read_cache, slice_segments, split_streams, synth_stream, truth_regions,
    write_cache, BoundaryRegion, NormStats, SensorStream, Splits, SynthSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{cluster_embeddings, score_assignment, Report, StreamSegmentation};
use crate::layers::LstmKind;
use crate::optim::OptimizerState;
use crate::recognition::{cut_windows, read_embedding_csv, sample_pairs, write_embedding_csv, RecognitionNet};
use crate::segmentation::{
    detect_boundaries, draw_samples, estimate_alpha, read_boundary_csv, write_boundary_csv, SegmentationNet,
    TargetShape,
};
use crate::tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CONFIG: &str = "config.json";
pub const VERSION_FILE: &str = "version.txt";
pub const DATA: &str = "data";
pub const STATS: &str = "stats.json";
pub const SEG_CKPT: &str = "seg.ckpt";
pub const SEG_LOSS: &str = "seg_loss.csv";
pub const REC_CKPT: &str = "rec.ckpt";
pub const REC_LOSS: &str = "rec_loss.csv";
pub const BOUNDARIES: &str = "boundaries";
pub const SEGMENTS: &str = "segments.csv";
pub const EMBEDDINGS: &str = "embeddings.csv";
pub const ASSIGNMENTS: &str = "assignments.csv";
pub const REPORT: &str = "report.txt";
pub const CONFUSION: &str = "confusion.csv";

/// Target half-width used when the training labels hold no interior
/// transition to measure.
const FALLBACK_ALPHA: f64 = 8.0;
/// Samples drawn from the validation split to report a held-out loss.
const VALIDATION_SAMPLES: usize = 64;

/// Independent random streams per step, so that rerunning one step does not
/// depend on what the others consumed.
#[derive(Clone, Copy)]
enum Stage {
    Prepare = 1,
    TrainSeg = 2,
    TrainRec = 3,
}

fn rng(cfg: &RunConfig, stage: Stage) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    r.set_stream(stage as u64);
    r
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

/// Validates `cfg`, creates the run directory and records the resolved
/// configuration and tool version in it.
pub fn init_run(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(out(cfg, CONFIG), serde_json::to_string_pretty(cfg)? + "\n")?;
    fs::write(out(cfg, VERSION_FILE), format!("harsiam {VERSION}\n"))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub channels: usize,
    pub class_names: Vec<String>,
}

fn synth_splits(cfg: &RunConfig) -> Result<Splits<SensorStream<f64>>> {
    let mut rng = rng(cfg, Stage::Prepare);
    let n = cfg.synth_train_streams + cfg.synth_validation_streams + cfg.synth_test_streams;
    let n_classes = u16::try_from(cfg.synth_classes.len())
        .map_err(|_| Error::Config("too many synthetic classes".into()))?;
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        let spec = SynthSpec {
            channels: cfg.synth_channels,
            rate_hz: cfg.synth_rate_hz,
            classes: cfg.synth_classes.clone(),
            segments: random_segments(
                n_classes,
                cfg.synth_segments_per_stream,
                cfg.synth_segment_min,
                cfg.synth_segment_max,
                &mut rng,
            )?,
            ramp: cfg.synth_ramp,
            jitter: cfg.synth_jitter,
        };
        let mut s = synth_stream(&spec, format!("synth_{i:03}"), &mut rng)?;
        s.subject_id = i as u32;
        all.push(s);
    }
    let test = all.split_off(n - cfg.synth_test_streams);
    let validation = all.split_off(cfg.synth_train_streams);
    Ok(Splits {
        train: all,
        validation,
        test,
    })
}

/// Loads or generates the streams, splits them by subject, normalizes with
/// training statistics and writes the cache.
pub fn prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    init_run(cfg)?;
    let (splits, split_rule) = if cfg.dataset == "synthetic" {
        (synth_splits(cfg)?, json!("synthetic counts"))
    } else {
        let path = cfg.data_path.as_deref().expect("validated");
        let desc = descriptor(&cfg.dataset)?;
        let streams = load_dataset::<f64>(&cfg.dataset, path, cfg.load_options())?;
        (split_streams(streams, &desc.split), serde_json::to_value(&desc.split)?)
    };
    if splits.train.is_empty() {
        return Err(Error::Contract(format!("dataset {} has no training streams", cfg.dataset)));
    }
    let stats = NormStats::fit(&splits.train)?;
    let class_names = splits.train[0].class_names.clone();
    let data = out(cfg, DATA);
    fs::create_dir_all(&data)?;
    fs::write(data.join(STATS), serde_json::to_string_pretty(&stats)? + "\n")?;
    for (name, streams) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        let normalized = streams.iter().map(|s| stats.apply(s)).collect::<Result<Vec<_>>>()?;
        let dir = data.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        let meta = json!({
            "dataset": cfg.dataset,
            "split": name,
            "split_rule": split_rule,
            "class_names": class_names,
        });
        write_cache(&dir, &normalized, meta)?;
        info!("{name}: {} streams", normalized.len());
    }
    Ok(PrepareSummary {
        train: splits.train.len(),
        validation: splits.validation.len(),
        test: splits.test.len(),
        channels: stats.channels(),
        class_names,
    })
}

/// Normalized streams of one split, with the cache metadata.
pub fn load_split(cfg: &RunConfig, split: &str) -> Result<(Vec<SensorStream<f64>>, serde_json::Value)> {
    read_cache(&out(cfg, DATA).join(split))
}

fn load_stats(cfg: &RunConfig) -> Result<NormStats> {
    let path = require(out(cfg, DATA).join(STATS))?;
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn training_streams(cfg: &RunConfig) -> Result<Vec<SensorStream<f64>>> {
    let (train, _) = load_split(cfg, "train")?;
    if train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    Ok(train)
}

/// Stops training loops once the configured wall-clock budget is spent.
struct Budget(Option<(Instant, Duration)>);

impl Budget {
    fn new(secs: Option<u64>) -> Self {
        Budget(secs.map(|s| (Instant::now(), Duration::from_secs(s))))
    }

    fn spent(&self) -> bool {
        self.0.is_some_and(|(t0, d)| t0.elapsed() >= d)
    }
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{},{l}", i + 1)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: Option<f64>,
    /// Held-out loss on the validation split, when it has usable streams.
    pub validation_loss: Option<f64>,
}

/// Trains the boundary scorer on the training split.
pub fn train_seg(cfg: &RunConfig) -> Result<TrainSummary> {
    init_run(cfg)?;
    let train = training_streams(cfg)?;
    let stats = load_stats(cfg)?;
    let alpha = cfg.gg_alpha.unwrap_or_else(|| estimate_alpha(&train, FALLBACK_ALPHA));
    let shape = TargetShape {
        alpha,
        beta: cfg.gg_beta,
    };
    info!("target alpha {alpha}, beta {}", cfg.gg_beta);
    let mut rng = rng(cfg, Stage::TrainSeg);
    let mut net = SegmentationNet::<f64>::new(cfg.seg_net(train[0].channels()), &mut rng)?;
    let mut opt = OptimizerState::new(cfg.adam())?;
    let budget = Budget::new(cfg.time_limit_secs);
    let mut losses = Vec::with_capacity(cfg.seg_steps);
    for step in 0..cfg.seg_steps {
        if budget.spent() {
            warn!("time limit reached after {step} segmentation steps");
            break;
        }
        let batch = draw_samples(&train, cfg.seg_batch, cfg.seg_near_fraction, cfg.windows(), &shape, &mut rng)?;
        losses.push(net.train_step(&mut opt, &batch)?);
        if (step + 1) % 100 == 0 {
            info!("seg step {} loss {:.5}", step + 1, losses[step]);
        }
    }
    let (validation, _) = load_split(cfg, "validation")?;
    let validation_loss = match draw_samples(
        &validation,
        VALIDATION_SAMPLES,
        cfg.seg_near_fraction,
        cfg.windows(),
        &shape,
        &mut rng,
    ) {
        Ok(samples) => {
            let scores = net.scores(&samples)?;
            let sse: f64 = scores.iter().zip(&samples).map(|(p, s)| (p - s.target).powi(2)).sum();
            Some(sse / samples.len() as f64)
        }
        Err(_) => None,
    };
    let extra = json!({
        "alpha": alpha,
        "beta": cfg.gg_beta,
        "steps": losses.len(),
        "validation_loss": validation_loss,
        "stats": stats,
    });
    net.save(&out(cfg, SEG_CKPT), extra)?;
    write_loss_csv(&out(cfg, SEG_LOSS), &losses)?;
    Ok(TrainSummary {
        steps: losses.len(),
        final_loss: losses.last().copied(),
        validation_loss,
    })
}

/// Windows cut from the activity segments of `streams`, grouped by the
/// majority label of each segment. The group is the only supervision the
/// metric sees. Segments follow the labeled runs unless `detector` is given,
/// in which case they are cut at its detected boundaries.
pub fn pair_windows(
    cfg: &RunConfig,
    streams: &[SensorStream<f64>],
    detector: Option<&SegmentationNet<f64>>,
) -> Result<Vec<(Tensor<f64>, u16)>> {
    let mut out = Vec::new();
    for s in streams {
        let regions = match detector {
            Some(net) => scan(cfg, net, s)?,
            None => truth_regions(s),
        };
        let segs: Vec<_> = slice_segments(s, &regions, cfg.rec_window)
            .segments
            .into_iter()
            .filter_map(|g| g.majority_label(s).map(|l| (g, l)))
            .collect();
        out.extend(cut_windows(s, &segs, cfg.rec_window, cfg.rec_hop)?);
    }
    Ok(out)
}

/// Trains the similarity metric on pairs drawn from the training split.
pub fn train_rec(cfg: &RunConfig) -> Result<TrainSummary> {
    init_run(cfg)?;
    let train = training_streams(cfg)?;
    let stats = load_stats(cfg)?;
    let mut rng = rng(cfg, Stage::TrainRec);
    let detector = match cfg.rec_train_segments.as_str() {
        "detected" => Some(SegmentationNet::<f64>::load(&require(out(cfg, SEG_CKPT))?)?.0),
        _ => None,
    };
    let windows = pair_windows(cfg, &train, detector.as_ref())?;
    info!("{} training windows", windows.len());
    let pairs = sample_pairs(&windows, cfg.rec_pairs, cfg.positive_fraction, &mut rng)?;
    if pairs.len() < 2 {
        return Err(Error::Config(format!("rec_pairs = {} leaves no batch to train on", cfg.rec_pairs)));
    }
    let mut net = RecognitionNet::<f64>::new(cfg.rec_net(train[0].channels()), &mut rng)?;
    let mut opt = OptimizerState::new(cfg.adam())?;
    let budget = Budget::new(cfg.time_limit_secs);
    let batch = cfg.rec_batch.min(pairs.len());
    let per_epoch = pairs.len() / batch;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.rec_steps);
    for step in 0..cfg.rec_steps {
        if budget.spent() {
            warn!("time limit reached after {step} recognition steps");
            break;
        }
        let k = step % per_epoch;
        if k == 0 {
            order.shuffle(&mut rng);
        }
        let b: Vec<_> = order[k * batch..(k + 1) * batch].iter().map(|&i| pairs[i].clone()).collect();
        losses.push(net.train_step(&mut opt, &b)?);
        if (step + 1) % 100 == 0 {
            info!("rec step {} loss {:.5}", step + 1, losses[step]);
        }
    }
    let (validation, _) = load_split(cfg, "validation")?;
    let validation_loss = match pair_windows(cfg, &validation, detector.as_ref())
        .and_then(|w| sample_pairs(&w, cfg.rec_pairs.min(64), cfg.positive_fraction, &mut rng))
    {
        Ok(p) if !p.is_empty() => Some(net.loss(&p)?),
        _ => None,
    };
    let extra = json!({
        "steps": losses.len(),
        "validation_loss": validation_loss,
        "stats": stats,
    });
    net.save(&out(cfg, REC_CKPT), extra)?;
    write_loss_csv(&out(cfg, REC_LOSS), &losses)?;
    Ok(TrainSummary {
        steps: losses.len(),
        final_loss: losses.last().copied(),
        validation_loss,
    })
}

fn boundary_path(cfg: &RunConfig, stream_id: &str) -> PathBuf {
    out(cfg, BOUNDARIES).join(format!("{stream_id}.csv"))
}

/// Boundary regions of one stream; none when it is too short to scan.
fn scan(cfg: &RunConfig, net: &SegmentationNet<f64>, s: &SensorStream<f64>) -> Result<Vec<BoundaryRegion>> {
    let detect = cfg.detect();
    if s.len() < detect.windows.history + detect.windows.future {
        warn!("stream {} is too short to scan; no boundaries", s.id);
        return Ok(Vec::new());
    }
    detect_boundaries(net, s, &detect)
}

/// Detects boundary regions in every stream of the evaluated split.
/// Returns the number of regions found.
pub fn segment(cfg: &RunConfig) -> Result<usize> {
    init_run(cfg)?;
    let (streams, _) = load_split(cfg, &cfg.eval_split)?;
    let (net, _) = SegmentationNet::<f64>::load(&require(out(cfg, SEG_CKPT))?)?;
    let dir = out(cfg, BOUNDARIES);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut total = 0;
    for s in &streams {
        let regions = scan(cfg, &net, s)?;
        total += regions.len();
        write_boundary_csv(&boundary_path(cfg, &s.id), &regions)?;
    }
    Ok(total)
}

fn segment_id(stream_id: &str, start: usize, len: usize) -> String {
    format!("{stream_id}:{start}:{len}")
}

fn min_segment(cfg: &RunConfig, channels: usize) -> usize {
    cfg.branch(channels, LstmKind::Bidirectional).min_window()
}

/// Slices every evaluated stream at its detected boundaries.
fn load_segmentations(cfg: &RunConfig) -> Result<(Vec<SensorStream<f64>>, Vec<StreamSegmentation>)> {
    let (streams, _) = load_split(cfg, &cfg.eval_split)?;
    let mut segs = Vec::with_capacity(streams.len());
    for s in &streams {
        let regions = read_boundary_csv(&boundary_path(cfg, &s.id))?;
        segs.push(StreamSegmentation::new(s, regions, min_segment(cfg, s.channels())));
    }
    Ok((streams, segs))
}

fn segment_ids(segs: &[StreamSegmentation]) -> Vec<String> {
    segs.iter()
        .flat_map(|g| g.segments.iter().map(|x| segment_id(&x.stream_id, x.start, x.len)))
        .collect()
}

/// Embeds every detected segment. Returns the number of segments.
pub fn embed(cfg: &RunConfig) -> Result<usize> {
    init_run(cfg)?;
    let (net, _) = RecognitionNet::<f64>::load(&require(out(cfg, REC_CKPT))?)?;
    let (streams, segs) = load_segmentations(cfg)?;
    let mut windows = Vec::new();
    let mut f = std::io::BufWriter::new(fs::File::create(out(cfg, SEGMENTS))?);
    writeln!(f, "segment_id,stream_id,start_frame,end_frame")?;
    for (s, g) in streams.iter().zip(&segs) {
        for x in &g.segments {
            windows.push(x.window(s)?);
            writeln!(f, "{},{},{},{}", segment_id(&s.id, x.start, x.len), s.id, x.start, x.end())?;
        }
    }
    f.flush()?;
    let embeddings = net.embed(&windows)?;
    write_embedding_csv(&out(cfg, EMBEDDINGS), &segment_ids(&segs), &embeddings)?;
    Ok(embeddings.len())
}

fn class_names(cfg: &RunConfig) -> Result<Vec<String>> {
    let (_, meta) = load_split(cfg, "train")?;
    Ok(serde_json::from_value(meta["class_names"].clone()).unwrap_or_default())
}

/// Clusters the embeddings. Returns the number of clusters.
pub fn cluster(cfg: &RunConfig) -> Result<usize> {
    init_run(cfg)?;
    let (ids, embeddings) = read_embedding_csv(&out(cfg, EMBEDDINGS))?;
    let k = class_names(cfg)?.len();
    let stop = cfg.stop_rule((k > 0).then_some(k))?;
    let a = cluster_embeddings(&embeddings, stop)?;
    write_assignment_csv(&out(cfg, ASSIGNMENTS), &ids, &a)?;
    Ok(a.k)
}

/// Scores the detected segments and their clusters against the true labels
/// and writes the report and confusion matrix.
pub fn evaluate(cfg: &RunConfig) -> Result<Report> {
    init_run(cfg)?;
    let (emb_ids, _) = read_embedding_csv(&out(cfg, EMBEDDINGS))?;
    let (ids, assignment) = read_assignment_csv(&require(out(cfg, ASSIGNMENTS))?)?;
    if ids != emb_ids {
        return Err(Error::Contract(format!("{ASSIGNMENTS} does not list the segments of {EMBEDDINGS}")));
    }
    let (streams, segs) = load_segmentations(cfg)?;
    if segment_ids(&segs) != ids {
        return Err(Error::Contract(format!(
            "{EMBEDDINGS} does not match the boundaries in {BOUNDARIES}/; rerun embed"
        )));
    }
    let report = score_assignment(&streams, &segs, &assignment)?;
    let (_, meta) = load_split(cfg, &cfg.eval_split)?;
    let mut text = format!(
        "tool: harsiam {VERSION}\ndataset: {}\nsplit: {}\nsplit_rule: {}\n",
        cfg.dataset, cfg.eval_split, meta["split_rule"]
    );
    text.push_str(&report.to_string());
    fs::write(out(cfg, REPORT), text)?;
    report.write_confusion_csv(&out(cfg, CONFUSION), &class_names(cfg)?)?;
    Ok(report)
}

/// Every step in order.
pub fn run_all(cfg: &RunConfig) -> Result<Report> {
    prepare(cfg)?;
    train_seg(cfg)?;
    train_rec(cfg)?;
    segment(cfg)?;
    embed(cfg)?;
    cluster(cfg)?;
    evaluate(cfg)
}
