//! Context/gap windowing: `n` input frames spaced `g` apart, followed by `k`
//! targets continuing at the same stride.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub context_n: usize,
    pub gap_g: usize,
    pub k_value: usize,
    pub start_j: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            context_n: 5,
            gap_g: 15,
            k_value: 1,
            start_j: 0,
        }
    }
}

impl SamplerConfig {
    pub fn new(context_n: usize, gap_g: usize, k_value: usize) -> Self {
        Self {
            context_n,
            gap_g,
            k_value,
            start_j: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_n == 0 || self.gap_g == 0 || self.k_value == 0 {
            return Err(Error::Config(format!(
                "context, gap and k must be positive (n={}, g={}, k={})",
                self.context_n, self.gap_g, self.k_value
            )));
        }
        Ok(())
    }

    /// Frames covered by one window, from the first input to the last target.
    pub fn span(&self) -> usize {
        (self.context_n + self.k_value - 1) * self.gap_g + 1
    }

    /// Shortest sequence that admits a window starting at `start_j`.
    pub fn min_length(&self) -> usize {
        self.start_j + self.span()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSample {
    pub input_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
    pub sequence_id: usize,
}

impl WindowSample {
    pub fn last_input(&self) -> usize {
        *self.input_indices.last().expect("windows have at least one input")
    }

    pub fn with_sequence(mut self, id: usize) -> Self {
        self.sequence_id = id;
        self
    }
}

pub fn sample_window(config: &SamplerConfig, sequence_length: usize) -> Result<WindowSample> {
    config.validate()?;
    let required = config.min_length();
    if sequence_length < required {
        return Err(Error::Window {
            length: sequence_length,
            required,
        });
    }
    let (j, g, n) = (config.start_j, config.gap_g, config.context_n);
    Ok(WindowSample {
        input_indices: (0..n).map(|i| j + i * g).collect(),
        target_indices: (0..config.k_value).map(|i| j + (n + i) * g).collect(),
        sequence_id: 0,
    })
}

/// Every window starting at a multiple of `hop`, in increasing start order.
///
/// # Panics
/// If `hop` is zero.
pub fn enumerate_windows(config: &SamplerConfig, sequence_length: usize, hop: usize) -> Vec<WindowSample> {
    assert!(hop >= 1, "window hop must be at least 1");
    let span = config.span();
    if config.validate().is_err() || sequence_length < span {
        return Vec::new();
    }
    (0..=sequence_length - span)
        .step_by(hop)
        .map(|j| {
            sample_window(&SamplerConfig { start_j: j, ..*config }, sequence_length)
                .expect("start within range")
        })
        .collect()
}

/// At most `max` windows spread evenly over the valid start positions.
pub fn spread_windows(config: &SamplerConfig, sequence_length: usize, max: usize) -> Vec<WindowSample> {
    spread(enumerate_windows(config, sequence_length, 1), max)
}

/// Like [`spread_windows`], restricted to windows whose first target is at
/// or after `first_target`. Configs with different spans then draw their
/// targets from the same frames.
pub fn windows_by_target(config: &SamplerConfig, sequence_length: usize, first_target: usize, max: usize) -> Vec<WindowSample> {
    let all = enumerate_windows(config, sequence_length, 1)
        .into_iter()
        .filter(|w| w.target_indices[0] >= first_target)
        .collect();
    spread(all, max)
}

fn spread(all: Vec<WindowSample>, max: usize) -> Vec<WindowSample> {
    if all.len() <= max || max == 0 {
        return if max == 0 { Vec::new() } else { all };
    }
    if max == 1 {
        return vec![all[all.len() / 2].clone()];
    }
    let last = all.len() - 1;
    (0..max).map(|i| all[i * last / (max - 1)].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window() {
        let w = sample_window(&SamplerConfig::default(), 76).unwrap();
        assert_eq!(w.input_indices, vec![0, 15, 30, 45, 60]);
        assert_eq!(w.target_indices, vec![75]);
    }

    #[test]
    fn smallest_window() {
        let w = sample_window(&SamplerConfig::new(1, 1, 1), 2).unwrap();
        assert_eq!((w.input_indices, w.target_indices), (vec![0], vec![1]));
    }

    #[test]
    fn offset_multi_target_window() {
        let cfg = SamplerConfig {
            start_j: 4,
            ..SamplerConfig::new(3, 2, 2)
        };
        let w = sample_window(&cfg, 13).unwrap();
        assert_eq!((w.input_indices, w.target_indices), (vec![4, 6, 8], vec![10, 12]));
    }

    #[test]
    fn short_sequence_reports_required_length() {
        match sample_window(&SamplerConfig::default(), 75) {
            Err(Error::Window { length, required }) => assert_eq!((length, required), (75, 76)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn enumeration_counts() {
        let cfg = SamplerConfig::default();
        assert_eq!(enumerate_windows(&cfg, 76, 1).len(), 1);
        assert!(enumerate_windows(&cfg, 75, 1).is_empty());
        let w = enumerate_windows(&cfg, 90, 1);
        assert_eq!(w.iter().map(|w| w.input_indices[0]).collect::<Vec<_>>(), (0..15).collect::<Vec<_>>());
        assert_eq!(enumerate_windows(&cfg, 90, 4).len(), 4);
    }

    #[test]
    fn spread_keeps_ends() {
        let cfg = SamplerConfig::new(2, 1, 1);
        let w = spread_windows(&cfg, 12, 3);
        let starts: Vec<_> = w.iter().map(|w| w.input_indices[0]).collect();
        assert_eq!(starts, vec![0, 4, 9]);
    }

    #[test]
    fn target_aligned_windows_share_frames() {
        let short = SamplerConfig::new(5, 2, 1);
        let long = SamplerConfig::new(5, 35, 1);
        let targets = |c: &SamplerConfig| -> Vec<usize> {
            windows_by_target(c, 330, 175, 5).iter().map(|w| w.target_indices[0]).collect()
        };
        assert_eq!(targets(&short), vec![175, 213, 252, 290, 329]);
        assert_eq!(targets(&short), targets(&long));
        assert!(windows_by_target(&long, 175, 175, 5).is_empty());
    }
}
