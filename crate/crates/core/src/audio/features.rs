use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::AudioClip;
use crate::error::{Error, Result};

/// Floor added before taking the log of a band energy.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame_s: f64,
    pub bands: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_s: 0.5,
            bands: 8,
        }
    }
}

/// `frames x bands` log band energies, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub frames: usize,
    pub bands: usize,
    pub data: Vec<f64>,
    pub frame_s: f64,
    pub band_edges_hz: Vec<f64>,
}

impl FrameFeatures {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }

    /// Same features with the frame order reversed.
    pub fn reversed_frames(&self) -> FrameFeatures {
        let mut out = self.clone();
        for t in 0..self.frames {
            let src = self.frames - 1 - t;
            out.data[t * self.bands..(t + 1) * self.bands].copy_from_slice(self.row(src));
        }
        out
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `bands + 1` edges, equally spaced on the mel scale from 0 Hz to Nyquist.
pub fn band_edges_hz(bands: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..=bands)
        .map(|i| mel_to_hz(top * i as f64 / bands as f64))
        .collect()
}

/// Band index of each one-sided FFT bin.
fn bin_bands(n_fft: usize, sample_rate: u32, edges: &[f64]) -> Vec<usize> {
    let bands = edges.len() - 1;
    (0..=n_fft / 2)
        .map(|k| {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            edges[1..bands].iter().take_while(|&&e| f >= e).count()
        })
        .collect()
}

pub(crate) struct BandAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    bins: Vec<usize>,
    bands: usize,
}

impl BandAnalyzer {
    pub(crate) fn new(frame_len: usize, sample_rate: u32, edges: &[f64]) -> Self {
        let n_fft = frame_len.next_power_of_two();
        BandAnalyzer {
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            n_fft,
            bins: bin_bands(n_fft, sample_rate, edges),
            bands: edges.len() - 1,
        }
    }

    /// Band energies of one frame (zero-padded). One-sided bins are weighted
    /// so that the energies sum to the frame's time-domain energy.
    pub(crate) fn energies(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&s| Complex::new(s as f64, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.n_fft)
            .collect();
        self.fft.process(&mut buf);
        let mut e = vec![0.0; self.bands];
        let half = self.n_fft / 2;
        for (k, &b) in self.bins.iter().enumerate() {
            let w = if k == 0 || k == half { 1.0 } else { 2.0 };
            e[b] += w * buf[k].norm_sqr() / self.n_fft as f64;
        }
        e
    }
}

/// Log band energies per frame: `log(1e-8 + E)` with mel-spaced rectangular bands.
pub fn features(clip: &AudioClip, cfg: FeatureConfig) -> Result<FrameFeatures> {
    let sr = clip.sample_rate_hz;
    let frame_len = (cfg.frame_s * sr as f64).round() as usize;
    if frame_len == 0 || cfg.bands == 0 {
        return Err(Error::InvalidArgument("frame length and band count must be positive".into()));
    }
    if clip.samples.len() < frame_len {
        return Err(Error::InvalidArgument(format!(
            "clip lasts {:.3} s, shorter than one {} s frame",
            clip.duration_s(),
            cfg.frame_s
        )));
    }
    let edges = band_edges_hz(cfg.bands, sr);
    let analyzer = BandAnalyzer::new(frame_len, sr, &edges);
    let frames = clip.samples.len().div_ceil(frame_len);
    let mut data = Vec::with_capacity(frames * cfg.bands);
    for chunk in clip.samples.chunks(frame_len) {
        data.extend(analyzer.energies(chunk).into_iter().map(|e| (LOG_EPS + e).ln()));
    }
    Ok(FrameFeatures {
        frames,
        bands: cfg.bands,
        data,
        frame_s: cfg.frame_s,
        band_edges_hz: edges,
    })
}
