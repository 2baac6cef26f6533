//! Scaled-down end-to-end training runs on synthetic streams.

use std::path::Path;
use std::time::Instant;

use harsiam::clustering::StopRule;
use harsiam::config::RunConfig;
use harsiam::data::{
    random_segments, slice_segments, synth_stream, truth_regions, Generator, NormStats, SensorStream, SynthSpec,
};
use harsiam::evaluation::{cluster_embeddings, many_to_one_accuracy};
use harsiam::optim::{AdamConfig, OptimizerState};
use harsiam::recognition::{cut_windows, sample_pairs, RecNetConfig, RecognitionNet};
use harsiam::segmentation::{
    detect_boundaries, draw_samples, estimate_alpha, score_stream, DetectParams, SegNetConfig, SegmentationNet, TargetShape, Windows,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [Generator; 3] = [
    Generator::Sine { freq: 2.0, amp: 1.0 },
    Generator::Square { freq: 1.0, amp: 1.0 },
    Generator::GaussianNoise { sigma: 1.0 },
];

pub fn synthetic(rng: &mut ChaCha8Rng, id: String, segments: usize, min: usize, max: usize) -> SensorStream<f64> {
    let spec = SynthSpec {
        channels: 3,
        rate_hz: 50.0,
        classes: CLASSES.to_vec(),
        segments: random_segments(3, segments, min, max, rng).unwrap(),
        ramp: 33,
        jitter: 0.1,
    };
    synth_stream(&spec, id, rng).unwrap()
}

#[derive(Debug)]
pub struct RecognitionOutcome {
    pub pairs: usize,
    pub steps: usize,
    pub train_mse: f64,
    pub held_out: usize,
    pub accuracy: f64,
    pub secs: f64,
}

pub const REC_STEPS: usize = 400;
const WINDOW: usize = 128;

/// Trains the metric on 200 pairs cut from labeled synthetic segments, then
/// clusters 60 held-out segments into three groups.
pub fn recognition_overfit(seed: u64) -> RecognitionOutcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<_> = (0..4).map(|i| synthetic(&mut rng, format!("train{i}"), 6, 150, 250)).collect();
    let stats = NormStats::fit(&raw).unwrap();
    let train: Vec<_> = raw.iter().map(|s| stats.apply(s).unwrap()).collect();
    let mut windows = Vec::new();
    for s in &train {
        let segs: Vec<_> = slice_segments(s, &truth_regions(s), WINDOW)
            .segments
            .into_iter()
            .map(|g| {
                let l = g.majority_label(s).unwrap();
                (g, l)
            })
            .collect();
        windows.extend(cut_windows(s, &segs, WINDOW, 32).unwrap());
    }
    let pairs = sample_pairs(&windows, 200, 0.5, &mut rng).unwrap();
    let cfg = RecNetConfig {
        embed_window: Some(WINDOW),
        ..RecNetConfig::new(3)
    };
    let mut net = RecognitionNet::<f64>::new(cfg, &mut rng).unwrap();
    let mut opt = OptimizerState::new(AdamConfig::default()).unwrap();
    let batch = 8;
    let per_epoch = pairs.len() / batch;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for step in 0..REC_STEPS {
        let k = step % per_epoch;
        if k == 0 {
            order.shuffle(&mut rng);
        }
        let b: Vec<_> = order[k * batch..(k + 1) * batch].iter().map(|&i| pairs[i].clone()).collect();
        net.train_step(&mut opt, &b).unwrap();
    }
    let train_mse = net.loss(&pairs).unwrap();

    let mut held = Vec::new();
    let mut truth = Vec::new();
    let mut i = 0;
    while held.len() < 60 {
        let s = stats.apply(&synthetic(&mut rng, format!("held{i}"), 6, 130, 250)).unwrap();
        i += 1;
        for g in slice_segments(&s, &truth_regions(&s), WINDOW).segments {
            if held.len() < 60 {
                truth.push(usize::from(g.majority_label(&s).unwrap()));
                held.push(g.window(&s).unwrap());
            }
        }
    }
    let embeddings = net.embed(&held).unwrap();
    let clusters = cluster_embeddings(&embeddings, StopRule::Clusters(3)).unwrap();
    RecognitionOutcome {
        pairs: pairs.len(),
        steps: REC_STEPS,
        train_mse,
        held_out: held.len(),
        accuracy: many_to_one_accuracy(&clusters.labels, &truth).unwrap(),
        secs: t0.elapsed().as_secs_f64(),
    }
}

#[derive(Debug)]
pub struct SegmentationOutcome {
    pub streams: usize,
    /// Streams with every true center inside a region and no far
    /// detection.
    pub passing: usize,
    pub alpha: f64,
    pub missed_centers: usize,
    /// Candidate frames scored above threshold yet farther than `2α` from
    /// every true boundary center.
    pub far_detections: usize,
    pub secs: f64,
}

pub const SEG_STEPS: usize = 1000;

/// Trains the boundary scorer on ten four-segment streams with β = 8 and
/// scans the same streams at threshold 0.5.
pub fn segmentation_run(seed: u64) -> SegmentationOutcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<_> = (0..10).map(|i| synthetic(&mut rng, format!("s{i}"), 4, 200, 300)).collect();
    let stats = NormStats::fit(&raw).unwrap();
    let streams: Vec<_> = raw.iter().map(|s| stats.apply(s).unwrap()).collect();
    let alpha = estimate_alpha(&streams, 8.0);
    let shape = TargetShape { alpha, beta: 8.0 };
    let w = Windows {
        history: 128,
        future: 128,
    };
    let mut net = SegmentationNet::<f64>::new(SegNetConfig::new(3), &mut rng).unwrap();
    let mut opt = OptimizerState::new(AdamConfig::default()).unwrap();
    for _ in 0..SEG_STEPS {
        let batch = draw_samples(&streams, 16, 0.5, w, &shape, &mut rng).unwrap();
        net.train_step(&mut opt, &batch).unwrap();
    }
    let stride = 2;
    let params = DetectParams {
        windows: w,
        threshold: 0.5,
        stride,
    };
    let mut out = SegmentationOutcome {
        streams: streams.len(),
        passing: 0,
        alpha,
        missed_centers: 0,
        far_detections: 0,
        secs: 0.0,
    };
    for s in &streams {
        let regions = detect_boundaries(&net, s, &params).unwrap();
        let (frames, scores) = score_stream(&net, s, w, stride).unwrap();
        let centers = s.boundary_centers();
        let missed = centers.iter().filter(|&&c| !regions.iter().any(|r| r.contains(c))).count();
        let far = frames
            .iter()
            .zip(&scores)
            .filter(|&(&f, &sc)| sc > 0.5 && centers.iter().all(|&c| (f as f64 - c).abs() > 2.0 * alpha))
            .count();
        out.missed_centers += missed;
        out.far_detections += far;
        out.passing += usize::from(missed == 0 && far == 0);
    }
    out.secs = t0.elapsed().as_secs_f64();
    out
}

/// A small but complete configuration: default network, short training.
pub fn pipeline_config(out_dir: &Path) -> RunConfig {
    RunConfig {
        synth_train_streams: 4,
        synth_validation_streams: 1,
        synth_test_streams: 2,
        seg_steps: 10,
        rec_steps: 10,
        rec_pairs: 40,
        detect_stride: 8,
        seed: 5,
        out_dir: out_dir.to_path_buf(),
        ..RunConfig::default()
    }
}
