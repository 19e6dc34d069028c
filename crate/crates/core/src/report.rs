use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::summarize::Method;

/// Wall-clock seconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decode: f64,
    pub extract: f64,
    pub distance: f64,
    pub cluster: f64,
    pub render: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.decode + self.extract + self.distance + self.cluster + self.render
    }

    pub fn stages(&self) -> [(&'static str, f64); 5] {
        [
            ("decode", self.decode),
            ("extract", self.extract),
            ("distance", self.distance),
            ("cluster", self.cluster),
            ("render", self.render),
        ]
    }

    pub fn max_stage(&self) -> f64 {
        self.stages().iter().map(|s| s.1).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub n_frames: usize,
    pub n_clusters: usize,
    pub lambda: f64,
    pub wall_times: StageTimings,
    pub total_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
}

impl RunReport {
    pub fn new(method: Method, n_frames: usize, n_clusters: usize, lambda: f64, wall_times: StageTimings) -> Self {
        Self {
            method,
            n_frames,
            n_clusters,
            lambda,
            total_s: wall_times.total(),
            wall_times,
            fid: None,
        }
    }

    /// Plain-text timing table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "method {}  frames {}  clusters {}  lambda {}\n",
            self.method, self.n_frames, self.n_clusters, self.lambda
        );
        out.push_str(&format!("{:<10} {:>12}\n", "stage", "seconds"));
        for (name, secs) in self.wall_times.stages() {
            out.push_str(&format!("{name:<10} {secs:>12.6}\n"));
        }
        out.push_str(&format!("{:<10} {:>12.6}\n", "total", self.total_s));
        if let Some(fid) = self.fid {
            out.push_str(&format!("{:<10} {:>12.6}\n", "fid", fid));
        }
        out
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Accumulating stopwatch for one stage.
#[derive(Debug, Default, Clone, Copy)]
pub struct Stopwatch {
    elapsed: Duration,
}

impl Stopwatch {
    pub fn time<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.elapsed += start.elapsed();
        out
    }

    pub fn seconds(&self) -> f64 {
        self.elapsed.as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_max() {
        let t = StageTimings {
            decode: 1.0,
            extract: 2.0,
            distance: 0.5,
            cluster: 3.0,
            render: 0.25,
        };
        let r = RunReport::new(Method::Time, 10, 2, 0.0, t);
        assert_eq!(r.total_s, 6.75);
        assert_eq!(t.max_stage(), 3.0);
        assert!(r.table().contains("cluster"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RunReport>(&json).unwrap(), r);
    }
}
