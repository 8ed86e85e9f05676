//! Sample container, little-endian:
//! magic `RGBD`, version u16, channels u8, A u8, H u16, W u16, label u16,
//! subject u16, then the frame planes channel-major as f32.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_MAGIC: &[u8; 4] = b"RGBD";
pub const SAMPLE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 2 + 2 + 2 + 2;

fn narrow<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T> {
    T::try_from(v).map_err(|_| Error::arg(format!("{what} = {v} does not fit the container field")))
}

pub fn encode_sample(sample: &VideoSample<f32>) -> Result<Vec<u8>> {
    sample.validate()?;
    let s = sample.frames.shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + sample.frames.len() * 4);
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.write_u16::<LittleEndian>(SAMPLE_VERSION)?;
    buf.write_u8(narrow(s[0], "channels")?)?;
    buf.write_u8(narrow(s[1], "anchor frames")?)?;
    buf.write_u16::<LittleEndian>(narrow(s[2], "height")?)?;
    buf.write_u16::<LittleEndian>(narrow(s[3], "width")?)?;
    buf.write_u16::<LittleEndian>(narrow(sample.label, "label")?)?;
    buf.write_u16::<LittleEndian>(sample.subject_id)?;
    for &v in sample.frames.data() {
        buf.write_f32::<LittleEndian>(v)?;
    }
    Ok(buf)
}

pub fn decode_sample(bytes: &[u8]) -> Result<VideoSample<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "sample header truncated"));
    }
    if &bytes[..4] != SAMPLE_MAGIC {
        return Err(Error::format(0, "bad magic, expected `RGBD`"));
    }
    let mut rd = Cursor::new(&bytes[4..HEADER_LEN]);
    let version = rd.read_u16::<LittleEndian>()?;
    if version != SAMPLE_VERSION {
        return Err(Error::format(4, format!("unsupported sample version {version}")));
    }
    let channels = rd.read_u8()? as usize;
    let anchors = rd.read_u8()? as usize;
    let h = rd.read_u16::<LittleEndian>()? as usize;
    let w = rd.read_u16::<LittleEndian>()? as usize;
    let label = rd.read_u16::<LittleEndian>()? as usize;
    let subject = rd.read_u16::<LittleEndian>()?;
    let n = channels * anchors * h * w;
    if n == 0 {
        return Err(Error::format(6, "sample header declares an empty frame block"));
    }
    let total = HEADER_LEN + n * 4;
    if bytes.len() != total {
        return Err(Error::format(
            bytes.len().min(total) as u64,
            format!("expected {total} bytes for a {channels}x{anchors}x{h}x{w} sample, found {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let frames = Tensor::new(vec![channels, anchors, h, w], data)?;
    VideoSample::new(frames, label, subject).map_err(|e| Error::format(HEADER_LEN as u64, e.to_string()))
}

pub fn write_sample(sample: &VideoSample<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_sample(sample)?)?;
    Ok(())
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<VideoSample<f32>> {
    decode_sample(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(c in 1usize..3, a in 1usize..5, h in 1usize..4, w in 1usize..4, label in 1usize..20, subj: u16, seed: u64) {
            let frames = Tensor::from_fn(&[c, a, h, w], |i| ((i as u64 * 2654435761 ^ seed) % 1000) as f32 / 999.0).unwrap();
            let s = VideoSample::new(frames, label, subj).unwrap();
            let back = decode_sample(&encode_sample(&s).unwrap()).unwrap();
            prop_assert_eq!(s, back);
        }
    }

    #[test]
    fn rejects_corruption() {
        let s = VideoSample::new(Tensor::filled(&[2, 3, 2, 2], 0.5).unwrap(), 1, 1).unwrap();
        let bytes = encode_sample(&s).unwrap();
        assert!(matches!(decode_sample(&bytes[..10]), Err(Error::Format { .. })));
        assert!(matches!(decode_sample(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[1] = b'x';
        assert!(matches!(decode_sample(&bad), Err(Error::Format { offset: 0, .. })));
    }
}
