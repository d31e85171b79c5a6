use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::AudioClip;
use crate::error::{Error, Result};

/// Parameters of one augmentation pass: circular time shift, gain, pitch
/// shift, time stretch and additive white noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub time_shift_s: f64,
    pub gain_db: f64,
    pub pitch_semitones: f64,
    pub stretch_factor: f64,
    /// `f64::INFINITY` disables the noise.
    pub noise_snr_db: f64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            time_shift_s: 0.0,
            gain_db: 0.0,
            pitch_semitones: 0.0,
            stretch_factor: 1.0,
            noise_snr_db: f64::INFINITY,
        }
    }

    pub fn sample<R: Rng>(ranges: &AugmentationRanges, rng: &mut R) -> Self {
        let mut draw = |(lo, hi): (f64, f64)| if lo < hi { rng.gen_range(lo..hi) } else { lo };
        AugmentationSpec {
            time_shift_s: draw(ranges.time_shift_s),
            gain_db: draw(ranges.gain_db),
            pitch_semitones: draw(ranges.pitch_semitones),
            stretch_factor: draw(ranges.stretch_factor),
            noise_snr_db: draw(ranges.noise_snr_db),
        }
    }

    /// Compact `key=value` form stored in manifest meta.
    pub fn to_meta(&self) -> String {
        format!(
            "shift={};gain_db={};pitch={};stretch={};snr_db={}",
            self.time_shift_s, self.gain_db, self.pitch_semitones, self.stretch_factor, self.noise_snr_db
        )
    }

    pub fn from_meta(s: &str) -> Result<Self> {
        let mut spec = AugmentationSpec::identity();
        for part in s.split(';').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid("augment", format!("bad entry `{part}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::invalid("augment", format!("bad number in `{part}`")))?;
            match k {
                "shift" => spec.time_shift_s = v,
                "gain_db" => spec.gain_db = v,
                "pitch" => spec.pitch_semitones = v,
                "stretch" => spec.stretch_factor = v,
                "snr_db" => spec.noise_snr_db = v,
                _ => return Err(Error::invalid("augment", format!("unknown key `{k}`"))),
            }
        }
        Ok(spec)
    }
}

/// Closed ranges the per-use augmentation parameters are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRanges {
    pub time_shift_s: (f64, f64),
    pub gain_db: (f64, f64),
    pub pitch_semitones: (f64, f64),
    pub stretch_factor: (f64, f64),
    pub noise_snr_db: (f64, f64),
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        AugmentationRanges {
            time_shift_s: (-0.5, 0.5),
            gain_db: (-6.0, 6.0),
            pitch_semitones: (-2.0, 2.0),
            stretch_factor: (0.9, 1.1),
            noise_snr_db: (20.0, 40.0),
        }
    }
}

/// `out[i] = x(i * step)` with linear interpolation; reads past the end are 0.
pub fn resample_linear(x: &[f32], out_len: usize, step: f64) -> Vec<f32> {
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = x.get(j).copied().unwrap_or(0.0);
            let b = x.get(j + 1).copied().unwrap_or(0.0);
            a + (b - a) * frac
        })
        .collect()
}

/// Apply shift, gain, pitch, stretch and noise in that order, then clip to `[-1, 1]`.
pub fn augment(clip: &AudioClip, spec: &AugmentationSpec, seed: u64) -> Result<AudioClip> {
    if !(spec.stretch_factor > 0.0 && spec.stretch_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stretch factor must be > 0, got {}",
            spec.stretch_factor
        )));
    }
    let sr = clip.sample_rate_hz as f64;
    let mut x = clip.samples.clone();
    let n = x.len();

    if n > 0 {
        let shift = (spec.time_shift_s * sr).round() as i64;
        let k = shift.rem_euclid(n as i64) as usize;
        x.rotate_right(k);
    }

    if spec.gain_db != 0.0 {
        let g = 10f64.powf(spec.gain_db / 20.0) as f32;
        x.iter_mut().for_each(|s| *s *= g);
    }

    if spec.pitch_semitones != 0.0 {
        // play faster/slower, then restore the length
        let ratio = 2f64.powf(spec.pitch_semitones / 12.0);
        let shifted_len = (n as f64 / ratio).round() as usize;
        let mut y = resample_linear(&x, shifted_len, ratio);
        y.resize(n, 0.0);
        x = y;
    }

    if spec.stretch_factor != 1.0 {
        let out_len = (x.len() as f64 * spec.stretch_factor).round() as usize;
        x = resample_linear(&x, out_len, 1.0 / spec.stretch_factor);
    }

    if spec.noise_snr_db.is_finite() && !x.is_empty() {
        let power = x.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / x.len() as f64;
        let sigma = (power / 10f64.powf(spec.noise_snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut x {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += (sigma * z) as f32;
        }
    }

    let mut out = AudioClip::new(clip.id.clone(), clip.sample_rate_hz, x);
    out.clip_in_place();
    Ok(out)
}
