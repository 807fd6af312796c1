//! Benchmark reports: per-configuration summaries plus every raw frame
//! sample they were computed from.

use std::fmt::Write as _;

use glod_core::stream::{FrameStats, StreamConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub label: String,
    pub scene: String,
    pub path: String,
    pub resolution: [u32; 2],
    pub render: bool,
    pub threads: usize,
    pub stream: StreamConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Median of an even count is the mean of the middle pair.
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        Self {
            mean: s.iter().sum::<f64>() / n as f64,
            median,
            min: s[0],
            max: s[n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub config: RunConfig,
    pub frames: usize,
    pub cut_ms: Summary,
    pub gather_ms: Summary,
    pub render_ms: Summary,
    pub frame_ms: Summary,
    pub bfs_ms: Option<Summary>,
    pub rendered_mean: f64,
    pub loaded: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub bytes_streamed: u64,
    /// Summed HSPT/BFS set differences, when the oracle ran.
    pub oracle_mismatched: Option<u64>,
}

impl ConfigRow {
    pub fn summarize(config: RunConfig, samples: &[FrameStats]) -> Self {
        let col = |f: fn(&FrameStats) -> f64| Summary::of(&samples.iter().map(f).collect::<Vec<_>>());
        let oracle: Vec<_> = samples.iter().filter_map(|s| s.oracle).collect();
        let has_oracle = !samples.is_empty() && oracle.len() == samples.len();
        Self {
            config,
            frames: samples.len(),
            cut_ms: col(|s| s.cut_ms),
            gather_ms: col(|s| s.gather_ms),
            render_ms: col(|s| s.render_ms),
            frame_ms: col(|s| s.frame_ms),
            bfs_ms: has_oracle.then(|| Summary::of(&oracle.iter().map(|o| o.bfs_ms).collect::<Vec<_>>())),
            rendered_mean: col(|s| s.rendered as f64).mean,
            loaded: samples.iter().map(|s| s.loaded as u64).sum(),
            cache_hits: samples.iter().map(|s| s.cache_hits as u64).sum(),
            cache_misses: samples.iter().map(|s| s.cache_misses as u64).sum(),
            bytes_streamed: samples.iter().map(|s| s.bytes_streamed).sum(),
            oracle_mismatched: has_oracle.then(|| oracle.iter().map(|o| o.mismatched as u64).sum()),
        }
    }
}

/// One raw sample, labeled with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub label: String,
    pub repeat: usize,
    #[serde(flatten)]
    pub stats: FrameStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub configs: Vec<ConfigRow>,
    pub frames: Vec<FrameRow>,
}

impl BenchReport {
    pub fn push(&mut self, config: RunConfig, runs: Vec<Vec<FrameStats>>) {
        let all: Vec<FrameStats> = runs.iter().flatten().copied().collect();
        for (repeat, run) in runs.into_iter().enumerate() {
            self.frames.extend(run.into_iter().map(|stats| FrameRow {
                label: config.label.clone(),
                repeat,
                stats,
            }));
        }
        self.configs.push(ConfigRow::summarize(config, &all));
    }

    pub fn samples(&self, label: &str) -> Vec<FrameStats> {
        self.frames.iter().filter(|f| f.label == label).map(|f| f.stats).collect()
    }

    /// Summaries recomputed from the raw frame rows.
    pub fn recompute(&self) -> Vec<ConfigRow> {
        self.configs
            .iter()
            .map(|c| ConfigRow::summarize(c.config.clone(), &self.samples(&c.config.label)))
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<12} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>11} {:>7} {:>7} {:>13}",
            "config", "frames", "cut_mean", "cut_med", "bfs_mean", "frame_mean", "frame_med", "rendered", "loaded", "hits", "misses", "bytes"
        )
        .unwrap();
        for c in &self.configs {
            let bfs = c.bfs_ms.map_or("-".to_string(), |b| format!("{:.3}", b.mean));
            writeln!(
                s,
                "{:<12} {:>6} {:>9.3} {:>9.3} {:>9} {:>9.3} {:>9.3} {:>10.1} {:>11} {:>7} {:>7} {:>13}",
                c.config.label,
                c.frames,
                c.cut_ms.mean,
                c.cut_ms.median,
                bfs,
                c.frame_ms.mean,
                c.frame_ms.median,
                c.rendered_mean,
                c.loaded,
                c.cache_hits,
                c.cache_misses,
                c.bytes_streamed
            )
            .unwrap();
        }
        for c in &self.configs {
            let st = &c.config.stream;
            writeln!(
                s,
                "# {}: scene={} path={} res={}x{} render={} threads={} cull={} cache={} budget={} band=[{}, {}] bfs_oracle={}",
                c.config.label,
                c.config.scene,
                c.config.path,
                c.config.resolution[0],
                c.config.resolution[1],
                c.config.render,
                c.config.threads,
                st.cull,
                st.use_cache,
                st.cache.budget_bytes,
                st.cache.d_min,
                st.cache.d_max,
                st.bfs_oracle
            )
            .unwrap();
        }
        s
    }
}
