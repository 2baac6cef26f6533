//! Run configuration: a flat JSON object whose keys all have defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::branch::BranchConfig;
use crate::clustering::StopRule;
use crate::data::{Generator, LoadOptions};
use crate::error::{Error, Result};
use crate::layers::LstmKind;
use crate::optim::AdamConfig;
use crate::recognition::RecNetConfig;
use crate::segmentation::{DetectParams, SegNetConfig, Windows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `synthetic`, `dg`, `wisdm` or `sbhar`.
    pub dataset: String,
    /// Root of the dataset release; unused for `synthetic`.
    pub data_path: Option<PathBuf>,
    pub skip_malformed_rows: bool,
    /// Truncate every loaded stream to this many frames.
    pub max_frames: Option<usize>,

    pub synth_train_streams: usize,
    pub synth_validation_streams: usize,
    pub synth_test_streams: usize,
    pub synth_segments_per_stream: usize,
    pub synth_segment_min: usize,
    pub synth_segment_max: usize,
    pub synth_ramp: usize,
    pub synth_channels: usize,
    pub synth_rate_hz: f64,
    pub synth_jitter: f64,
    pub synth_classes: Vec<Generator>,

    pub conv_channels: Vec<usize>,
    pub kernel_width: usize,
    pub dilations: Vec<usize>,
    pub conv_stride: usize,
    pub pool_after: Vec<usize>,
    pub pool_size: usize,
    pub lstm_hidden: Vec<usize>,
    pub seg_head_hidden: Vec<usize>,

    pub history_len: usize,
    pub future_len: usize,
    pub detect_stride: usize,
    pub threshold: f64,
    pub gg_beta: f64,
    /// Target half-width in frames; estimated from the training labels when
    /// absent.
    pub gg_alpha: Option<f64>,
    pub seg_steps: usize,
    pub seg_batch: usize,
    /// Fraction of training candidates drawn near a true boundary.
    pub seg_near_fraction: f64,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,

    pub rec_steps: usize,
    pub rec_batch: usize,
    pub rec_pairs: usize,
    pub positive_fraction: f64,
    pub rec_window: usize,
    pub rec_hop: usize,
    /// Segments the metric trains on: `truth` (labeled runs) or `detected`
    /// (cut at boundaries from the trained segmentation network).
    pub rec_train_segments: String,

    /// `classes` (k = number of activity kinds), `threshold` or
    /// `largest_gap`.
    pub cluster_stop: String,
    pub cluster_threshold: f64,

    /// Split that `segment`, `embed` and `evaluate` work on: `train`,
    /// `validation` or `test`.
    pub eval_split: String,
    /// Wall-clock budget per training command, in seconds.
    pub time_limit_secs: Option<u64>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "synthetic".into(),
            data_path: None,
            skip_malformed_rows: false,
            max_frames: None,

            synth_train_streams: 10,
            synth_validation_streams: 2,
            synth_test_streams: 4,
            synth_segments_per_stream: 4,
            synth_segment_min: 200,
            synth_segment_max: 320,
            synth_ramp: 33,
            synth_channels: 3,
            synth_rate_hz: 50.0,
            synth_jitter: 0.1,
            synth_classes: vec![
                Generator::Sine { freq: 2.0, amp: 1.0 },
                Generator::Square { freq: 1.0, amp: 1.0 },
                Generator::GaussianNoise { sigma: 1.0 },
            ],

            conv_channels: vec![64; 4],
            kernel_width: 5,
            dilations: vec![1, 2, 4, 8],
            conv_stride: 1,
            pool_after: vec![1, 3],
            pool_size: 2,
            lstm_hidden: vec![128, 128],
            seg_head_hidden: vec![128, 64],

            history_len: 128,
            future_len: 128,
            detect_stride: 4,
            threshold: 0.5,
            gg_beta: 8.0,
            gg_alpha: None,
            seg_steps: 1000,
            seg_batch: 16,
            seg_near_fraction: 0.5,

            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,

            rec_steps: 1000,
            rec_batch: 8,
            rec_pairs: 200,
            positive_fraction: 0.5,
            rec_window: 128,
            rec_hop: 32,
            rec_train_segments: "truth".into(),

            cluster_stop: "classes".into(),
            cluster_threshold: 1.0,

            eval_split: "test".into(),
            time_limit_secs: None,
            seed: 0,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let cfg: RunConfig = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn branch(&self, input_channels: usize, kind: LstmKind) -> BranchConfig {
        BranchConfig {
            input_channels,
            conv_channels: self.conv_channels.clone(),
            kernel_width: self.kernel_width,
            dilations: self.dilations.clone(),
            stride: self.conv_stride,
            pool_after: self.pool_after.clone(),
            pool_size: self.pool_size,
            lstm_hidden: self.lstm_hidden.clone(),
            lstm_kind: kind,
        }
    }

    pub fn seg_net(&self, input_channels: usize) -> SegNetConfig {
        SegNetConfig {
            branch: self.branch(input_channels, LstmKind::Unidirectional),
            head_hidden: self.seg_head_hidden.clone(),
        }
    }

    pub fn rec_net(&self, input_channels: usize) -> RecNetConfig {
        RecNetConfig {
            branch: self.branch(input_channels, LstmKind::Bidirectional),
            embed_window: Some(self.rec_window),
            embed_hop: self.rec_hop,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn windows(&self) -> Windows {
        Windows {
            history: self.history_len,
            future: self.future_len,
        }
    }

    pub fn detect(&self) -> DetectParams {
        DetectParams {
            windows: self.windows(),
            threshold: self.threshold,
            stride: self.detect_stride,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            skip_malformed: self.skip_malformed_rows,
            max_frames: self.max_frames,
        }
    }

    /// Resolves the clustering stop rule; `classes` needs the number of
    /// activity kinds.
    pub fn stop_rule(&self, n_classes: Option<usize>) -> Result<StopRule> {
        match self.cluster_stop.as_str() {
            "classes" => match n_classes {
                Some(k) if k > 0 => Ok(StopRule::Clusters(k)),
                _ => Ok(StopRule::LargestGap),
            },
            "threshold" => Ok(StopRule::Threshold(self.cluster_threshold)),
            "largest_gap" => Ok(StopRule::LargestGap),
            other => Err(Error::Config(format!(
                "cluster_stop {other:?} is not one of classes, threshold, largest_gap"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !["synthetic", "dg", "wisdm", "sbhar"].contains(&self.dataset.as_str()) {
            return bad(format!("unknown dataset {:?}", self.dataset));
        }
        if self.dataset != "synthetic" && self.data_path.is_none() {
            return bad(format!("dataset {} needs data_path", self.dataset));
        }
        for kind in [LstmKind::Unidirectional, LstmKind::Bidirectional] {
            self.branch(1, kind).validate()?;
        }
        let min = self.branch(1, LstmKind::Unidirectional).min_window();
        for (key, v) in [
            ("history_len", self.history_len),
            ("future_len", self.future_len),
            ("rec_window", self.rec_window),
        ] {
            if v < min {
                return bad(format!("{key} = {v} is below the branch minimum of {min} frames"));
            }
        }
        if self.seg_batch < 2 || self.rec_batch < 2 {
            return bad("training batches need at least 2 samples".into());
        }
        if self.detect_stride == 0 || self.rec_hop == 0 {
            return bad("detect_stride and rec_hop must be positive".into());
        }
        if !(self.gg_beta > 0.0) || self.gg_alpha.is_some_and(|a| !(a > 0.0)) {
            return bad("gg_beta and gg_alpha must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold)
            || !(0.0..=1.0).contains(&self.positive_fraction)
            || !(0.0..=1.0).contains(&self.seg_near_fraction)
        {
            return bad("threshold and fractions must lie in [0, 1]".into());
        }
        if self.synth_segment_min == 0 || self.synth_segment_min > self.synth_segment_max {
            return bad("synth_segment_min must be positive and at most synth_segment_max".into());
        }
        if !["train", "validation", "test"].contains(&self.eval_split.as_str()) {
            return bad(format!("eval_split {:?} is not one of train, validation, test", self.eval_split));
        }
        if !["truth", "detected"].contains(&self.rec_train_segments.as_str()) {
            return bad(format!("rec_train_segments {:?} is not truth or detected", self.rec_train_segments));
        }
        self.stop_rule(None)?;
        crate::optim::OptimizerState::<f64>::new(self.adam())?;
        Ok(())
    }
}
