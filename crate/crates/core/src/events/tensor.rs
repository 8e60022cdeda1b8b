//! Dense binned spike tensors and the `SPT1` archive format.

use std::io::{Read, Write};

use super::{Event, EventStream, Polarity, Trigger};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// Events per bin.
    Count,
    /// 1 if the bin received any event.
    Binary,
}

/// Spike counts laid out as `[2, T, H, W]`; channel 0 holds `On` events,
/// channel 1 holds `Off` events.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    data: Vec<u32>,
    steps: usize,
    height: usize,
    width: usize,
    mode: BinMode,
    dt_us: f64,
}

impl SpikeTensor {
    pub fn zeros(steps: usize, height: usize, width: usize, mode: BinMode, dt_us: f64) -> Self {
        Self { data: vec![0; 2 * steps * height * width], steps, height, width, mode, dt_us }
    }

    pub fn from_data(
        data: Vec<u32>,
        steps: usize,
        height: usize,
        width: usize,
        mode: BinMode,
        dt_us: f64,
    ) -> Result<Self> {
        if data.len() != 2 * steps * height * width {
            return Err(Error::shape(format!(
                "{} values for tensor [2, {steps}, {height}, {width}]",
                data.len()
            )));
        }
        if mode == BinMode::Binary && data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("binary spike tensor holds a value above 1"));
        }
        Ok(Self { data, steps, height, width, mode, dt_us })
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.steps + t) * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> u32 {
        self.data[self.index(c, t, y, x)]
    }

    /// Adds one spike, clamping at 1 in binary mode.
    pub fn add(&mut self, c: usize, t: usize, y: usize, x: usize) {
        let i = self.index(c, t, y, x);
        self.data[i] = match self.mode {
            BinMode::Count => self.data[i] + 1,
            BinMode::Binary => 1,
        };
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mode(&self) -> BinMode {
        self.mode
    }

    pub fn dt_us(&self) -> f64 {
        self.dt_us
    }

    pub fn sum(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    /// One time step as `[2, H, W]` floats.
    pub fn step_frame(&self, t: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(2 * plane);
        for c in 0..2 {
            let start = self.index(c, t, 0, 0);
            out.extend(self.data[start..start + plane].iter().map(|&v| v as f32));
        }
        out
    }

    /// Sum over time of one channel, `[H, W]`.
    pub fn channel_sum(&self, c: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0f32; plane];
        for t in 0..self.steps {
            let start = self.index(c, t, 0, 0);
            for (o, &v) in out.iter_mut().zip(&self.data[start..start + plane]) {
                *o += v as f32;
            }
        }
        out
    }

    /// Spike times (step indices, ascending, repeated per count) of one
    /// neuron `(c, y, x)`.
    pub fn train(&self, c: usize, y: usize, x: usize) -> Vec<usize> {
        (0..self.steps)
            .flat_map(|t| std::iter::repeat_n(t, self.get(c, t, y, x) as usize))
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&[u8::from(self.mode == BinMode::Binary)])?;
        w.write_all(&u32::try_from(self.steps).map_err(|_| Error::invalid("too many steps"))?.to_le_bytes())?;
        w.write_all(&u16::try_from(self.height).map_err(|_| Error::invalid("height exceeds u16"))?.to_le_bytes())?;
        w.write_all(&u16::try_from(self.width).map_err(|_| Error::invalid("width exceeds u16"))?.to_le_bytes())?;
        w.write_all(&self.dt_us.to_le_bytes())?;
        match self.mode {
            BinMode::Binary => {
                let mut bits = vec![0u8; self.data.len().div_ceil(8)];
                for (i, &v) in self.data.iter().enumerate() {
                    if v != 0 {
                        bits[i / 8] |= 1 << (i % 8);
                    }
                }
                w.write_all(&bits)?;
            }
            BinMode::Count => {
                for &v in &self.data {
                    let v = u16::try_from(v).map_err(|_| Error::invalid("spike count exceeds u16"))?;
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut b1 = [0u8; 1];
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b1).map_err(truncated)?;
        let mode = match b1[0] {
            0 => BinMode::Count,
            1 => BinMode::Binary,
            other => return Err(Error::format(format!("bad tensor mode byte {other}"))),
        };
        r.read_exact(&mut b4).map_err(truncated)?;
        let steps = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b2).map_err(truncated)?;
        let height = u16::from_le_bytes(b2) as usize;
        r.read_exact(&mut b2).map_err(truncated)?;
        let width = u16::from_le_bytes(b2) as usize;
        r.read_exact(&mut b8).map_err(truncated)?;
        let dt_us = f64::from_le_bytes(b8);
        let n = 2 * steps * height * width;
        let data = match mode {
            BinMode::Binary => {
                let mut bits = vec![0u8; n.div_ceil(8)];
                r.read_exact(&mut bits).map_err(truncated)?;
                (0..n).map(|i| ((bits[i / 8] >> (i % 8)) & 1) as u32).collect()
            }
            BinMode::Count => {
                let mut raw = vec![0u8; 2 * n];
                r.read_exact(&mut raw).map_err(truncated)?;
                raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect()
            }
        };
        Self::from_data(data, steps, height, width, mode, dt_us)
    }

    /// Writes labelled tensors as an `SPT1` archive: magic, u32 sample count,
    /// then per sample a u32 label followed by the tensor record
    /// (u8 mode, u32 T, u16 H, u16 W, f64 dt, packed bitset or u16 counts).
    pub fn write_archive<W: Write>(samples: &[(u32, SpikeTensor)], mut w: W) -> Result<()> {
        w.write_all(b"SPT1")?;
        w.write_all(&(samples.len() as u32).to_le_bytes())?;
        for (label, t) in samples {
            w.write_all(&label.to_le_bytes())?;
            t.write_to(&mut w)?;
        }
        Ok(())
    }

    pub fn read_archive<R: Read>(mut r: R) -> Result<Vec<(u32, SpikeTensor)>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != b"SPT1" {
            return Err(Error::format("bad magic, expected SPT1"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(truncated)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            r.read_exact(&mut b4).map_err(truncated)?;
            let label = u32::from_le_bytes(b4);
            out.push((label, Self::read_from(&mut r)?));
        }
        Ok(out)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("truncated spike tensor archive")
    } else {
        Error::Io(e)
    }
}

/// Expands a tensor back into events: one event per count, stamped at the
/// centre of its time bin. The stream carries a `(0, rise)`, `(T·dt, fall)`
/// trigger pair so that binning it again with the same geometry recovers the
/// tensor (count mode, `dt >= 1 µs`).
pub fn events_from_tensor(tensor: &SpikeTensor) -> Result<EventStream> {
    let width = u16::try_from(tensor.width).map_err(|_| Error::invalid("width exceeds u16"))?;
    let height = u16::try_from(tensor.height).map_err(|_| Error::invalid("height exceeds u16"))?;
    let mut events = Vec::with_capacity(tensor.sum() as usize);
    for t in 0..tensor.steps {
        let stamp = ((t as f64 + 0.5) * tensor.dt_us).floor() as u64;
        for y in 0..tensor.height {
            for x in 0..tensor.width {
                for c in 0..2 {
                    let n = tensor.get(c, t, y, x);
                    let e = Event::new(stamp, x as u16, y as u16, Polarity::from_channel(c));
                    events.extend(std::iter::repeat_n(e, n as usize));
                }
            }
        }
    }
    let end = (tensor.steps as f64 * tensor.dt_us).round() as u64;
    EventStream::from_unsorted(width, height, events, vec![Trigger::rising(0), Trigger::falling(end)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tensor_gives_empty_stream() {
        let t = SpikeTensor::zeros(4, 3, 3, BinMode::Count, 10.0);
        let s = events_from_tensor(&t).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.duration(), Some(40));
    }

    #[test]
    fn single_count_maps_to_bin_centre() {
        let mut t = SpikeTensor::zeros(5, 4, 4, BinMode::Count, 20.0);
        t.add(0, 3, 2, 1);
        let s = events_from_tensor(&t).unwrap();
        assert_eq!(s.events(), &[Event::new(70, 1, 2, Polarity::On)]);
    }

    #[test]
    fn binary_mode_clamps() {
        let mut t = SpikeTensor::zeros(1, 1, 1, BinMode::Binary, 1.0);
        t.add(1, 0, 0, 0);
        t.add(1, 0, 0, 0);
        assert_eq!(t.sum(), 1);
        assert!(SpikeTensor::from_data(vec![2, 0], 1, 1, 1, BinMode::Binary, 1.0).is_err());
    }

    #[test]
    fn archive_roundtrip_both_modes() {
        let mut a = SpikeTensor::zeros(3, 2, 5, BinMode::Binary, 2.5);
        a.add(0, 1, 1, 4);
        a.add(1, 2, 0, 0);
        let mut b = SpikeTensor::zeros(2, 1, 1, BinMode::Count, 1.0);
        for _ in 0..300 {
            b.add(1, 1, 0, 0);
        }
        let samples = vec![(7, a), (3, b)];
        let mut buf = Vec::new();
        SpikeTensor::write_archive(&samples, &mut buf).unwrap();
        assert_eq!(SpikeTensor::read_archive(&buf[..]).unwrap(), samples);
        assert!(SpikeTensor::read_archive(&buf[..buf.len() - 1]).is_err());
        assert!(SpikeTensor::read_archive(&b"SPT0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn trains_and_frames() {
        let mut t = SpikeTensor::zeros(3, 1, 2, BinMode::Count, 1.0);
        t.add(0, 0, 0, 1);
        t.add(0, 2, 0, 1);
        t.add(0, 2, 0, 1);
        assert_eq!(t.train(0, 0, 1), vec![0, 2, 2]);
        assert_eq!(t.step_frame(2), vec![0.0, 2.0, 0.0, 0.0]);
        assert_eq!(t.channel_sum(0), vec![0.0, 3.0]);
    }
}
