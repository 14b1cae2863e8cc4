//! Baseline 4:2:0 JPEG source coding with an abbreviated payload.
//!
//! Standard Huffman tables make every header a function of (quality, width,
//! height) alone, so only the entropy-coded scan is transmitted:
//! `[quality u8][scan length u16 BE][scan bytes]`. The receiver rebuilds the
//! header locally.

use std::io::Cursor;

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use zune_jpeg::JpegDecoder;

use crate::codec::ImageTensor;
use crate::error::{Error, Result};

pub const MAX_QUALITY: u8 = 95;
const PAYLOAD_HEADER: usize = 3;

/// Full JPEG file at quality `q`.
pub fn jpeg_encode(image: &ImageTensor, quality: u8) -> Result<Vec<u8>> {
    let (w, h) = dims(image)?;
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out, quality.clamp(1, 100));
    enc.set_sampling_factor(SamplingFactor::R_4_2_0);
    enc.encode(&image.to_rgb8(), w, h, ColorType::Rgb).map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

pub fn jpeg_decode(bytes: &[u8]) -> Result<ImageTensor> {
    let mut dec = JpegDecoder::new(Cursor::new(bytes));
    let rgb = dec.decode().map_err(|e| Error::Image(format!("{e:?}")))?;
    let (w, h) = dec.dimensions().ok_or_else(|| Error::Image("missing frame header".into()))?;
    ImageTensor::from_rgb8(h, w, &rgb)
}

fn dims(image: &ImageTensor) -> Result<(u16, u16)> {
    let conv = |v: usize| u16::try_from(v).map_err(|_| Error::Image(format!("dimension {v} exceeds the JPEG limit")));
    Ok((conv(image.width())?, conv(image.height())?))
}

/// Offset of the first scan byte: just past the start-of-scan segment.
fn scan_start(file: &[u8]) -> Result<usize> {
    let mut i = 2;
    while i + 4 <= file.len() {
        if file[i] != 0xFF {
            break;
        }
        let marker = file[i + 1];
        let len = u16::from_be_bytes([file[i + 2], file[i + 3]]) as usize;
        if marker == 0xDA {
            return Ok(i + 2 + len);
        }
        i += 2 + len;
    }
    Err(Error::Image("no start-of-scan marker".into()))
}

fn split_file(file: &[u8]) -> Result<(&[u8], &[u8])> {
    let s = scan_start(file)?;
    let end = file.len().checked_sub(2).filter(|&e| e >= s && file[e..] == [0xFF, 0xD9]).ok_or_else(|| Error::Image("missing end-of-image marker".into()))?;
    Ok((&file[..s], &file[s..end]))
}

/// Transmitted bytes for an image at quality `q`.
pub fn jpeg_payload(image: &ImageTensor, quality: u8) -> Result<Vec<u8>> {
    let file = jpeg_encode(image, quality)?;
    let (_, scan) = split_file(&file)?;
    let len = u16::try_from(scan.len()).map_err(|_| Error::Image("scan longer than 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(PAYLOAD_HEADER + scan.len());
    out.push(quality);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(scan);
    Ok(out)
}

/// Header bytes shared by every image of this size at quality `q`.
fn header_for(quality: u8, width: usize, height: usize) -> Result<Vec<u8>> {
    let blank = ImageTensor::filled(height, width, 0.5);
    let file = jpeg_encode(&blank, quality)?;
    Ok(split_file(&file)?.0.to_vec())
}

/// Rebuilds and decodes a (possibly corrupted) payload. Trailing padding is ignored.
pub fn decode_payload(payload: &[u8], width: usize, height: usize) -> Result<ImageTensor> {
    if payload.len() < PAYLOAD_HEADER {
        return Err(Error::Image("payload shorter than its header".into()));
    }
    let quality = payload[0];
    if !(1..=MAX_QUALITY).contains(&quality) {
        return Err(Error::Image(format!("quality byte {quality} out of range")));
    }
    let len = u16::from_be_bytes([payload[1], payload[2]]) as usize;
    let scan = payload.get(PAYLOAD_HEADER..PAYLOAD_HEADER + len).ok_or_else(|| Error::Image("scan length exceeds payload".into()))?;
    let mut file = header_for(quality, width, height)?;
    file.extend_from_slice(scan);
    file.extend_from_slice(&[0xFF, 0xD9]);
    // Corrupted scans must never take the simulation down.
    let decoded = std::panic::catch_unwind(|| jpeg_decode(&file)).map_err(|_| Error::Image("decoder panicked".into()))??;
    if decoded.width() != width || decoded.height() != height {
        return Err(Error::Image("decoded size differs from the frame".into()));
    }
    Ok(decoded)
}

/// Highest quality in `1..=95` whose payload fits `bit_budget` bits.
pub fn jpeg_fit_to_budget(image: &ImageTensor, bit_budget: usize) -> Result<(Vec<u8>, u8)> {
    if bit_budget == 0 {
        return Err(Error::InvalidConfig("bit budget must be positive".into()));
    }
    let mut smallest = usize::MAX;
    for q in (1..=MAX_QUALITY).rev() {
        let payload = jpeg_payload(image, q)?;
        if payload.len() * 8 <= bit_budget {
            return Ok((payload, q));
        }
        smallest = smallest.min(payload.len() * 8);
    }
    Err(Error::BudgetInfeasible { needed: smallest, budget: bit_budget })
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1)).collect()
}

/// MSB-first packing; a trailing partial byte is dropped.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks_exact(8).map(|c| c.iter().fold(0u8, |acc, &b| acc << 1 | (b & 1))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> ImageTensor {
        let img = synth_image(&mut ChaCha8Rng::seed_from_u64(seed), 64, 64);
        ImageTensor::from_rgb8(64, 64, img.as_raw()).unwrap()
    }

    #[test]
    fn payload_round_trip_matches_full_file() {
        let img = sample(1);
        for q in [1, 40, 95] {
            let full = jpeg_decode(&jpeg_encode(&img, q).unwrap()).unwrap();
            let mut payload = jpeg_payload(&img, q).unwrap();
            payload.extend_from_slice(&[0; 17]);
            let rebuilt = decode_payload(&payload, 64, 64).unwrap();
            assert_eq!(full.pixels(), rebuilt.pixels());
        }
    }

    #[test]
    fn fit_selects_max_feasible_quality() {
        let img = sample(2);
        let (_, q) = jpeg_fit_to_budget(&img, 10_000_000).unwrap();
        assert_eq!(q, 95);
        let sizes: Vec<usize> = (1..=MAX_QUALITY).map(|q| jpeg_payload(&img, q).unwrap().len() * 8).collect();
        for budget in [sizes[0], 1800, 3400, 6000, sizes[60]] {
            let oracle = (1..=MAX_QUALITY).filter(|&q| sizes[q as usize - 1] <= budget).max();
            let got = jpeg_fit_to_budget(&img, budget).ok().map(|r| r.1);
            assert_eq!(got, oracle, "budget {budget}");
        }
        let min = *sizes.iter().min().unwrap();
        assert!(matches!(jpeg_fit_to_budget(&img, min - 1), Err(Error::BudgetInfeasible { .. })));
    }

    #[test]
    fn corrupted_payload_does_not_panic() {
        let img = sample(3);
        let mut payload = jpeg_payload(&img, 30).unwrap();
        for (i, b) in payload.iter_mut().enumerate().skip(3) {
            if i % 7 == 0 {
                *b ^= 0x5A;
            }
        }
        let _ = decode_payload(&payload, 64, 64);
        assert!(decode_payload(&[0, 0, 0], 64, 64).is_err());
    }

    #[test]
    fn bit_packing_round_trip() {
        let bytes = vec![0x00, 0xFF, 0xA5, 0x3C];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
        assert_eq!(&bytes_to_bits(&[0x80])[..2], &[1, 0]);
    }
}
