//! RIFF/WAVE reading and writing: PCM, 16-bit, mono, little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AudioError, Waveform};

/// Read a 16-bit mono PCM WAV file. Samples are scaled as `raw / 32768.0`,
/// exactly. Unknown chunks are skipped.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    reader
        .read_exact(&mut header)
        .map_err(|_| AudioError::MalformedWav("file too short for RIFF header".into()))?;
    if &header[0..4] != b"RIFF" {
        return Err(AudioError::MalformedWav("missing RIFF magic".into()));
    }
    if &header[8..12] != b"WAVE" {
        return Err(AudioError::MalformedWav("missing WAVE form type".into()));
    }

    let mut sample_rate: Option<u32> = None;
    let mut data: Option<Vec<u8>> = None;
    let mut chunk_head = [0u8; 8];
    loop {
        match reader.read_exact(&mut chunk_head) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = &chunk_head[0..4];
        let size = u32::from_le_bytes(chunk_head[4..8].try_into().unwrap()) as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::MalformedWav("fmt chunk too small".into()));
                }
                let mut fmt = vec![0u8; size];
                reader
                    .read_exact(&mut fmt)
                    .map_err(|_| AudioError::MalformedWav("truncated fmt chunk".into()))?;
                let tag = u16::from_le_bytes(fmt[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(fmt[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(fmt[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(fmt[14..16].try_into().unwrap());
                if tag != 1 {
                    return Err(AudioError::NotPcm(tag));
                }
                if channels != 1 {
                    return Err(AudioError::NotMono(channels));
                }
                if bits != 16 {
                    return Err(AudioError::Not16Bit(bits));
                }
                if rate == 0 {
                    return Err(AudioError::MalformedWav("zero sample rate".into()));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let mut payload = vec![0u8; size];
                reader
                    .read_exact(&mut payload)
                    .map_err(|_| AudioError::MalformedWav("truncated data chunk".into()))?;
                data = Some(payload);
            }
            _ => {
                // skip unknown chunk, padded to even size per RIFF
                let skip = size + (size & 1);
                let mut sink = vec![0u8; skip];
                reader
                    .read_exact(&mut sink)
                    .map_err(|_| AudioError::MalformedWav("truncated chunk".into()))?;
            }
        }
        if sample_rate.is_some() && data.is_some() {
            break;
        }
    }

    let sample_rate =
        sample_rate.ok_or_else(|| AudioError::MalformedWav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedWav("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(AudioError::MalformedWav(
            "data chunk has odd byte length for 16-bit samples".into(),
        ));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate_hz: sample_rate,
    })
}

/// Write a waveform as 16-bit mono PCM. Amplitudes are clamped to `[-1, 1]`
/// and quantized with round-half-away-from-zero.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mut out = BufWriter::new(File::create(path)?);
    let data_len = (w.samples.len() * 2) as u32;

    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;

    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&w.sample_rate_hz.to_le_bytes())?;
    out.write_all(&(w.sample_rate_hz * 2).to_le_bytes())?; // byte rate
    out.write_all(&2u16.to_le_bytes())?; // block align
    out.write_all(&16u16.to_le_bytes())?;

    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for &s in &w.samples {
        out.write_all(&quantize(s).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn quantize(sample: f32) -> i16 {
    let clamped = sample.clamp(-1.0, 1.0);
    // f32::round rounds half away from zero
    let v = (clamped as f64 * 32768.0).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rules() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(0.5), 16384); // round(0.5 * 32768)
        assert_eq!(quantize(1.5), 32767); // clamp then saturate
        assert_eq!(quantize(-1.0), -32768);
        assert_eq!(quantize(1.0), 32767);
    }

    #[test]
    fn zero_waveform_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.wav");
        let w = Waveform::new(vec![0.0; 16000], 16000);
        write_wav(&w, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 44 + 32000);
        assert!(bytes[44..].iter().all(|&b| b == 0));

        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate_hz, 16000);
        assert_eq!(r.samples.len(), 16000);
        assert!(r.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn int16_min_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("min.wav");
        let w = Waveform::new(vec![-1.0], 8000);
        write_wav(&w, &path).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.samples[0], -1.0);
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        // already-quantized amplitudes: k / 32768
        let samples: Vec<f32> = (-400..400).map(|k| (k * 41) as f32 / 32768.0).collect();
        write_wav(&Waveform::new(samples, 16000), &a).unwrap();
        let r = read_wav(&a).unwrap();
        write_wav(&r, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_stereo_and_wrong_depth_and_non_pcm() {
        let dir = tempfile::tempdir().unwrap();
        for (tag, channels, bits, expect) in [
            (1u16, 2u16, 16u16, "channels"),
            (1, 1, 8, "bits"),
            (3, 1, 16, "pcm"),
        ] {
            let path = dir.path().join(format!("bad_{tag}_{channels}_{bits}.wav"));
            let mut f = File::create(&path).unwrap();
            f.write_all(b"RIFF").unwrap();
            f.write_all(&36u32.to_le_bytes()).unwrap();
            f.write_all(b"WAVE").unwrap();
            f.write_all(b"fmt ").unwrap();
            f.write_all(&16u32.to_le_bytes()).unwrap();
            f.write_all(&tag.to_le_bytes()).unwrap();
            f.write_all(&channels.to_le_bytes()).unwrap();
            f.write_all(&16000u32.to_le_bytes()).unwrap();
            f.write_all(&32000u32.to_le_bytes()).unwrap();
            f.write_all(&2u16.to_le_bytes()).unwrap();
            f.write_all(&bits.to_le_bytes()).unwrap();
            f.write_all(b"data").unwrap();
            f.write_all(&0u32.to_le_bytes()).unwrap();
            drop(f);
            let err = read_wav(&path).unwrap_err();
            match expect {
                "channels" => assert!(matches!(err, AudioError::NotMono(2))),
                "bits" => assert!(matches!(err, AudioError::Not16Bit(8))),
                "pcm" => assert!(matches!(err, AudioError::NotPcm(3))),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn rejects_garbage_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.wav");
        std::fs::write(&path, b"not a wav file at all").unwrap();
        assert!(matches!(
            read_wav(&path).unwrap_err(),
            AudioError::MalformedWav(_)
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("list.wav");
        let mut f = File::create(&a).unwrap();
        f.write_all(b"RIFF").unwrap();
        f.write_all(&(36u32 + 12 + 4).to_le_bytes()).unwrap();
        f.write_all(b"WAVE").unwrap();
        // LIST chunk before fmt
        f.write_all(b"LIST").unwrap();
        f.write_all(&4u32.to_le_bytes()).unwrap();
        f.write_all(b"INFO").unwrap();
        f.write_all(b"fmt ").unwrap();
        f.write_all(&16u32.to_le_bytes()).unwrap();
        f.write_all(&1u16.to_le_bytes()).unwrap();
        f.write_all(&1u16.to_le_bytes()).unwrap();
        f.write_all(&16000u32.to_le_bytes()).unwrap();
        f.write_all(&32000u32.to_le_bytes()).unwrap();
        f.write_all(&2u16.to_le_bytes()).unwrap();
        f.write_all(&16u16.to_le_bytes()).unwrap();
        f.write_all(b"data").unwrap();
        f.write_all(&4u32.to_le_bytes()).unwrap();
        f.write_all(&100i16.to_le_bytes()).unwrap();
        f.write_all(&(-100i16).to_le_bytes()).unwrap();
        drop(f);
        let r = read_wav(&a).unwrap();
        assert_eq!(r.samples.len(), 2);
        assert_eq!(r.samples[0], 100.0 / 32768.0);
    }
}
