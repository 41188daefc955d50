//! Mono 16-bit PCM WAV reader/writer.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;

/// Write as PCM16 mono little-endian. Samples are clamped to [-1, 1] and
/// quantized with rounding.
pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<()> {
    let n = waveform.len() as u32;
    let data_bytes = n * 2;
    let mut out = Vec::with_capacity(44 + data_bytes as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_bytes).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&waveform.sample_rate.to_le_bytes());
    out.extend_from_slice(&(waveform.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_bytes.to_le_bytes());
    for &s in &waveform.samples {
        out.extend_from_slice(&sample_to_i16(s).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    let loc = |offset: usize| format!("{} byte {offset}", path.display());

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(Error::parse(loc(0), "missing RIFF header"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::parse(loc(8), "missing WAVE tag"));
    }

    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    let mut offset = 12;
    while offset + 8 <= bytes.len() {
        let chunk_id = &bytes[offset..offset + 4];
        let size = u32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().unwrap()) as usize;
        let body_start = offset + 8;
        if body_start + size > bytes.len() {
            return Err(Error::parse(
                loc(offset),
                format!("chunk {:?} overruns file", String::from_utf8_lossy(chunk_id)),
            ));
        }
        match chunk_id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::parse(loc(body_start), "fmt chunk too short"));
                }
                let fmt = u16::from_le_bytes(bytes[body_start..body_start + 2].try_into().unwrap());
                let channels =
                    u16::from_le_bytes(bytes[body_start + 2..body_start + 4].try_into().unwrap());
                let rate = u32::from_le_bytes(
                    bytes[body_start + 4..body_start + 8].try_into().unwrap(),
                );
                let bits = u16::from_le_bytes(
                    bytes[body_start + 14..body_start + 16].try_into().unwrap(),
                );
                if fmt != FORMAT_PCM {
                    return Err(Error::parse(loc(body_start), format!("unsupported format {fmt}")));
                }
                if channels != 1 {
                    return Err(Error::parse(
                        loc(body_start + 2),
                        format!("expected mono, got {channels} channels"),
                    ));
                }
                if bits != 16 {
                    return Err(Error::parse(
                        loc(body_start + 14),
                        format!("expected 16-bit samples, got {bits}"),
                    ));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {}
        }
        // Chunks are word-aligned.
        offset = body_start + size + (size & 1);
    }

    let sample_rate =
        sample_rate.ok_or_else(|| Error::parse(loc(12), "no fmt chunk found"))?;
    let data = data.ok_or_else(|| Error::parse(loc(12), "no data chunk found"))?;
    if data.len() % 2 != 0 {
        return Err(Error::parse(loc(0), "odd data chunk size for 16-bit samples"));
    }
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f32 / 32768.0)
        .collect();
    if samples.is_empty() {
        return Err(Error::parse(loc(0), "empty data chunk"));
    }
    Waveform::new(samples, sample_rate)
}

fn sample_to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("dive-wav-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_within_one_lsb() {
        let samples: Vec<f32> = (0..2000)
            .map(|i| ((i as f32 * 0.013).sin() * 0.8).clamp(-1.0, 1.0))
            .collect();
        let wave = Waveform::new(samples, 8000).unwrap();
        let path = tmp("roundtrip.wav");
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.len(), wave.len());
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn max_sample_quantizes_to_32767() {
        assert_eq!(sample_to_i16(1.0), 32767);
        assert_eq!(sample_to_i16(-1.0), -32768);
        // 32767 as float and back.
        let f = 32767.0f32 / 32768.0;
        assert!((f - 0.99997).abs() < 1e-5);
        assert_eq!(sample_to_i16(f), 32767);
    }

    #[test]
    fn malformed_header_reports_position() {
        let path = tmp("bad.wav");
        std::fs::write(&path, b"NOTAWAVFILE").unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");
    }

    #[test]
    fn stereo_is_rejected() {
        let path = tmp("stereo.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&40u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, bytes).unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
    }
}
