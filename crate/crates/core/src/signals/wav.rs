use std::io::{Read, Seek, Write};

use super::{SampleStream, SAMPLE_RATE};
use crate::error::Result;

fn spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

/// Writes 16-bit mono PCM at 50 kHz, full scale mapped to +-32767.
pub fn write_wav<W: Write + Seek>(writer: W, stream: &SampleStream) -> Result<()> {
    let mut w = hound::WavWriter::new(writer, spec())?;
    for &x in &stream.samples {
        let v = (x.clamp(-1.0, 1.0) * 32_767.0).round() as i16;
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav<R: Read>(reader: R) -> Result<SampleStream> {
    let mut r = hound::WavReader::new(reader)?;
    let rate = r.spec().sample_rate;
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32_767.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SampleStream { samples, rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn header_and_scaling() {
        let s = SampleStream::new(vec![0.0, 1.0, -1.0, 0.5, 2.0]);
        let mut buf = Cursor::new(Vec::new());
        write_wav(&mut buf, &s).unwrap();
        let bytes = buf.into_inner();
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        // sample rate field
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 50_000);
        let back = read_wav(Cursor::new(bytes)).unwrap();
        assert_eq!(back.rate, 50_000);
        let raw: Vec<i16> = back.samples.iter().map(|x| (x * 32_767.0).round() as i16).collect();
        assert_eq!(raw, vec![0, 32_767, -32_767, 16_384, 32_767]);
    }
}
