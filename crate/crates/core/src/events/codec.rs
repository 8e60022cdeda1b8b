//! Text and binary event file codecs.
//!
//! Text (`# evt v1 <width> <height>` header, `t,x,y,p` records, `# trig <t>
//! <rise|fall>` lines interleaved in time order) and a packed little-endian
//! binary layout starting with the magic `EVT1`. [`read_events`] detects the
//! format from the first bytes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Edge, Event, EventStream, Polarity, Trigger};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"EVT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Text,
    Binary,
}

impl EventFormat {
    /// `.txt` and `.csv` map to text, everything else to binary.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("csv") => EventFormat::Text,
            _ => EventFormat::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Sort out-of-order records instead of rejecting the file.
    pub sort_unsorted: bool,
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    read_events_with(path, ReadOptions::default())
}

pub fn read_events_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<EventStream> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes[..], opts)
    } else {
        decode_text(&bytes[..], opts)
    }
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_events_as(stream, path, EventFormat::for_path(path))
}

pub fn write_events_as(stream: &EventStream, path: impl AsRef<Path>, format: EventFormat) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    match format {
        EventFormat::Text => encode_text(stream, &mut w)?,
        EventFormat::Binary => encode_binary(stream, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn edge_name(edge: Edge) -> &'static str {
    match edge {
        Edge::Rising => "rise",
        Edge::Falling => "fall",
    }
}

pub fn encode_text<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    writeln!(w, "# evt v1 {} {}", stream.width(), stream.height())?;
    let mut triggers = stream.triggers().iter().peekable();
    for e in stream.events() {
        while let Some(trig) = triggers.next_if(|tr| tr.t <= e.t) {
            writeln!(w, "# trig {} {}", trig.t, edge_name(trig.edge))?;
        }
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.p.sign())?;
    }
    for trig in triggers {
        writeln!(w, "# trig {} {}", trig.t, edge_name(trig.edge))?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, line_no: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(format!("line {line_no}: bad {what} '{s}'")))
}

pub fn decode_text<R: Read>(r: R, opts: ReadOptions) -> Result<EventStream> {
    let reader = BufReader::new(r);
    let mut dims: Option<(u16, u16)> = None;
    let mut events = Vec::new();
    let mut triggers = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            match parts.as_slice() {
                ["evt", "v1", w, h] if dims.is_none() => {
                    dims = Some((parse_field(w, "width", line_no)?, parse_field(h, "height", line_no)?));
                }
                ["evt", ..] => return Err(Error::format(format!("line {line_no}: bad header"))),
                ["trig", t, edge] => {
                    let t = parse_field(t, "trigger time", line_no)?;
                    let edge = match *edge {
                        "rise" => Edge::Rising,
                        "fall" => Edge::Falling,
                        other => {
                            return Err(Error::format(format!("line {line_no}: bad edge '{other}'")))
                        }
                    };
                    triggers.push(Trigger { t, edge });
                }
                _ => {}
            }
            continue;
        }
        if dims.is_none() {
            return Err(Error::format("missing '# evt v1' header"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(format!("line {line_no}: expected 4 fields, got {}", fields.len())));
        }
        let p: i64 = parse_field(fields[3], "polarity", line_no)?;
        events.push(Event {
            t: parse_field(fields[0], "timestamp", line_no)?,
            x: parse_field(fields[1], "x", line_no)?,
            y: parse_field(fields[2], "y", line_no)?,
            p: Polarity::from_sign(p).map_err(|e| Error::format(format!("line {line_no}: {e}")))?,
        });
    }
    let (width, height) = dims.ok_or_else(|| Error::format("missing '# evt v1' header"))?;
    finish(width, height, events, triggers, opts)
}

fn finish(
    width: u16,
    height: u16,
    events: Vec<Event>,
    triggers: Vec<Trigger>,
    opts: ReadOptions,
) -> Result<EventStream> {
    let result = if opts.sort_unsorted {
        EventStream::from_unsorted(width, height, events, triggers)
    } else {
        EventStream::new(width, height, events, triggers)
    };
    result.map_err(|e| match e {
        Error::InvalidInput(msg) => Error::Format(msg),
        other => other,
    })
}

pub fn encode_binary<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&stream.width().to_le_bytes())?;
    w.write_all(&stream.height().to_le_bytes())?;
    w.write_all(&(stream.triggers().len() as u32).to_le_bytes())?;
    for trig in stream.triggers() {
        w.write_all(&trig.t.to_le_bytes())?;
        w.write_all(&[u8::from(trig.edge == Edge::Rising)])?;
    }
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    for e in stream.events() {
        let mut rec = [0u8; 13];
        rec[..8].copy_from_slice(&e.t.to_le_bytes());
        rec[8..10].copy_from_slice(&e.x.to_le_bytes());
        rec[10..12].copy_from_slice(&e.y.to_le_bytes());
        rec[12] = e.p.sign() as u8;
        w.write_all(&rec)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(format!("truncated binary event file at byte {}", self.pos))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }
}

pub fn decode_binary<R: Read>(mut r: R, opts: ReadOptions) -> Result<EventStream> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != BINARY_MAGIC {
        return Err(Error::format("bad magic, expected EVT1"));
    }
    let width = u16::from_le_bytes(c.array()?);
    let height = u16::from_le_bytes(c.array()?);
    let n_trig = u32::from_le_bytes(c.array()?) as usize;
    let mut triggers = Vec::with_capacity(n_trig.min(1 << 20));
    for _ in 0..n_trig {
        let t = u64::from_le_bytes(c.array()?);
        let edge = match c.array::<1>()?[0] {
            1 => Edge::Rising,
            0 => Edge::Falling,
            other => return Err(Error::format(format!("bad trigger edge byte {other}"))),
        };
        triggers.push(Trigger { t, edge });
    }
    let n_events = u64::from_le_bytes(c.array()?) as usize;
    let remaining = buf.len() - c.pos;
    if n_events.checked_mul(13).is_none_or(|need| need > remaining) {
        return Err(Error::format(format!("truncated binary event file: {n_events} events declared")));
    }
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let rec: [u8; 13] = c.array()?;
        events.push(Event {
            t: u64::from_le_bytes(rec[..8].try_into().unwrap()),
            x: u16::from_le_bytes([rec[8], rec[9]]),
            y: u16::from_le_bytes([rec[10], rec[11]]),
            p: Polarity::from_sign(rec[12] as i8 as i64)?,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::format("trailing bytes after event records"));
    }
    finish(width, height, events, triggers, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventStream {
        EventStream::new(
            8,
            4,
            vec![
                Event::new(5, 1, 2, Polarity::On),
                Event::new(9, 0, 3, Polarity::On),
                Event::new(9, 7, 3, Polarity::Off),
            ],
            vec![Trigger::rising(5), Trigger::falling(20)],
        )
        .unwrap()
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = EventStream::empty(3, 2);
        let mut buf = Vec::new();
        encode_text(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "# evt v1 3 2\n");
        assert_eq!(decode_text(&buf[..], ReadOptions::default()).unwrap(), s);
    }

    #[test]
    fn single_event_text_record() {
        let s = EventStream::new(4, 4, vec![Event::new(5, 1, 2, Polarity::On)], vec![]).unwrap();
        let mut buf = Vec::new();
        encode_text(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "# evt v1 4 4\n5,1,2,1\n");
        assert_eq!(decode_text(&buf[..], ReadOptions::default()).unwrap(), s);
    }

    #[test]
    fn triggers_interleave_in_time_order() {
        let mut buf = Vec::new();
        encode_text(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# evt v1 8 4\n# trig 5 rise\n5,1,2,1\n9,0,3,1\n9,7,3,-1\n# trig 20 fall\n"
        );
    }

    #[test]
    fn zero_polarity_is_format_error() {
        let text = "# evt v1 4 4\n1,0,0,0\n";
        assert!(matches!(decode_text(text.as_bytes(), ReadOptions::default()), Err(Error::Format(_))));
    }

    #[test]
    fn out_of_bounds_and_unsorted_records() {
        let oob = "# evt v1 4 4\n1,4,0,1\n";
        assert!(decode_text(oob.as_bytes(), ReadOptions::default()).is_err());
        let unsorted = "# evt v1 4 4\n9,0,0,1\n3,1,1,-1\n";
        assert!(decode_text(unsorted.as_bytes(), ReadOptions::default()).is_err());
        let s = decode_text(unsorted.as_bytes(), ReadOptions { sort_unsorted: true }).unwrap();
        assert_eq!(s.events()[0].t, 3);
    }

    #[test]
    fn malformed_lines() {
        for bad in ["# evt v1 4 4\n1,2,3\n", "# evt v1 4 4\na,0,0,1\n", "1,0,0,1\n", "# trig 4 up\n"] {
            assert!(decode_text(bad.as_bytes(), ReadOptions::default()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn binary_roundtrip_and_truncation() {
        let s = sample();
        let mut buf = Vec::new();
        encode_binary(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 4 + 2 * 9 + 8 + 3 * 13);
        assert_eq!(decode_binary(&buf[..], ReadOptions::default()).unwrap(), s);
        assert!(decode_binary(&buf[..buf.len() - 1], ReadOptions::default()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode_binary(&bad[..], ReadOptions::default()).is_err());
        let mut zero_p = buf.clone();
        let last = zero_p.len() - 1;
        zero_p[last] = 0;
        assert!(decode_binary(&zero_p[..], ReadOptions::default()).is_err());
    }

    #[test]
    fn format_detection_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        for name in ["a.txt", "a.evt"] {
            let p = dir.path().join(name);
            write_events(&s, &p).unwrap();
            assert_eq!(read_events(&p).unwrap(), s);
        }
        let head = std::fs::read(dir.path().join("a.evt")).unwrap();
        assert_eq!(&head[..4], b"EVT1");
    }
}
