use crate::corpus::{AudioClip, SoundEvent};
use crate::error::{Error, Result};

/// Place `first` at t = 0 and `second` so that it starts `overlap_s` before
/// `first` ends, summing where they overlap, then pad to exactly `target_s`.
/// Event labels are the clip ids.
pub fn compose_pair(
    first: &AudioClip,
    second: &AudioClip,
    overlap_s: f64,
    target_s: f64,
    sample_rate: u32,
) -> Result<(AudioClip, [SoundEvent; 2])> {
    if first.sample_rate_hz != sample_rate || second.sample_rate_hz != sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample rates {} / {} differ from {sample_rate}",
            first.sample_rate_hz, second.sample_rate_hz
        )));
    }
    if !(0.0..=1.0).contains(&overlap_s) {
        return Err(Error::InvalidArgument(format!("overlap {overlap_s} s outside [0, 1]")));
    }
    let sr = sample_rate as f64;
    let target = (target_s * sr).round() as usize;
    let (n1, n2) = (first.samples.len(), second.samples.len());
    if n1 > target || n2 > target {
        return Err(Error::InvalidArgument(format!(
            "clips of {:.3} s and {:.3} s exceed the {target_s} s target",
            first.duration_s(),
            second.duration_s()
        )));
    }
    let overlap = ((overlap_s * sr).round() as usize).min(n1);
    let start2 = n1 - overlap;
    if start2 + n2 > target {
        return Err(Error::InvalidArgument(format!(
            "composition lasts {:.3} s, longer than the {target_s} s target",
            (start2 + n2) as f64 / sr
        )));
    }
    let mut out = vec![0.0f32; target];
    out[..n1].copy_from_slice(&first.samples);
    for (o, s) in out[start2..start2 + n2].iter_mut().zip(&second.samples) {
        *o += s;
    }
    let mut clip = AudioClip::new(format!("{}+{}", first.id, second.id), sample_rate, out);
    clip.clip_in_place();
    let events = [
        SoundEvent::new(first.id.clone(), 0.0, n1 as f64 / sr),
        SoundEvent::new(second.id.clone(), start2 as f64 / sr, (start2 + n2) as f64 / sr),
    ];
    Ok((clip, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(id: &str, secs: f64, sr: u32) -> AudioClip {
        AudioClip::new(id, sr, vec![0.25; (secs * sr as f64).round() as usize])
    }

    #[test]
    fn back_to_back() {
        let (c, ev) = compose_pair(&ones("a", 5.0, 100), &ones("b", 5.0, 100), 0.0, 10.0, 100).unwrap();
        assert_eq!(c.samples.len(), 1000);
        assert_eq!((ev[0].onset_s, ev[0].offset_s), (0.0, 5.0));
        assert_eq!((ev[1].onset_s, ev[1].offset_s), (5.0, 10.0));
    }

    #[test]
    fn one_second_overlap() {
        let (c, ev) = compose_pair(&ones("a", 5.0, 100), &ones("b", 5.0, 100), 1.0, 10.0, 100).unwrap();
        assert_eq!(c.samples.len(), 1000);
        assert_eq!((ev[1].onset_s, ev[1].offset_s), (4.0, 9.0));
        assert_eq!(c.samples[450], 0.5);
        assert_eq!(c.samples[950], 0.0);
    }

    #[test]
    fn too_long() {
        let r = compose_pair(&ones("a", 5.5, 100), &ones("b", 5.5, 100), 0.0, 10.0, 100);
        assert!(r.is_err());
        assert!(compose_pair(&ones("a", 1.0, 100), &ones("b", 1.0, 100), 1.5, 10.0, 100).is_err());
    }
}
