//! Standard MIDI File reading (format 0/1) and single-track writing.

use std::collections::HashMap;

use super::{MidiNote, HIGHEST_PITCH, LOWEST_PITCH};
use crate::error::{Error, Result};

/// Ticks per quarter note used when writing. At 120 BPM one tick is 0.5 ms,
/// so the 16 ms frame hop is exactly 32 ticks.
pub const WRITE_PPQ: u16 = 1000;
const WRITE_TEMPO_US: u32 = 500_000;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedMidi {
    pub notes: Vec<MidiNote>,
    /// Note-on events whose pitch fell outside the 88-key range.
    pub dropped_out_of_range: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Midi { offset: self.pos, message: message.into() })
    }

    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.end {
            return self.err("unexpected end of data");
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.end - self.pos < n {
            return self.err(format!("need {n} bytes, {} remain", self.end - self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::Midi { offset: start, message: "variable-length quantity longer than 4 bytes".into() })
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    Tempo(u32),
}

enum Timing {
    Metrical(u16),
    TicksPerSecond(f64),
}

/// Parses a Standard MIDI File into notes sorted by onset time.
pub fn parse_midi(bytes: &[u8]) -> Result<ParsedMidi> {
    let mut r = Reader { bytes, pos: 0, end: bytes.len() };
    if r.take(4)? != b"MThd" {
        r.pos = 0;
        return r.err("missing MThd header");
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return r.err(format!("header length {header_len} < 6"));
    }
    let header_start = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division = r.u16()?;
    if format > 1 {
        r.pos = header_start;
        return r.err(format!("unsupported SMF format {format}"));
    }
    let timing = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let tpf = (division & 0xff) as f64;
        if fps <= 0.0 || tpf <= 0.0 {
            r.pos = header_start + 4;
            return r.err("invalid SMPTE division");
        }
        Timing::TicksPerSecond(fps * tpf)
    } else {
        if division == 0 {
            r.pos = header_start + 4;
            return r.err("zero ticks per quarter note");
        }
        Timing::Metrical(division)
    };
    r.take(header_len - 6)?;

    // (tick, track, sequence, event)
    let mut events: Vec<(u64, usize, usize, Event)> = Vec::new();
    let mut track = 0;
    while track < ntracks as usize && r.pos < bytes.len() {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if bytes.len() - r.pos < len {
            r.pos = chunk_start;
            return r.err(format!("chunk declares {len} bytes past end of file"));
        }
        if id != b"MTrk" {
            r.take(len)?;
            continue;
        }
        let mut tr = Reader { bytes, pos: r.pos, end: r.pos + len };
        read_track(&mut tr, track, &mut events)?;
        r.pos += len;
        track += 1;
    }
    if track < ntracks as usize {
        return r.err(format!("expected {ntracks} tracks, found {track}"));
    }

    events.sort_by_key(|&(tick, tr, seq, _)| (tick, tr, seq));
    let clock = TempoMap::new(&events, timing);

    let mut open: HashMap<(u8, u8), (f64, u8)> = HashMap::new();
    let mut out = ParsedMidi::default();
    let mut last_time = 0.0f64;
    for &(tick, _, _, ev) in &events {
        let time = clock.seconds(tick);
        last_time = last_time.max(time);
        match ev {
            Event::NoteOn { channel, pitch, velocity } => {
                if !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&pitch) {
                    out.dropped_out_of_range += 1;
                    continue;
                }
                // re-strike of a sounding key closes the previous note
                if let Some((start, vel)) = open.insert((channel, pitch), (time, velocity)) {
                    push_note(&mut out.notes, start, time, pitch, vel);
                }
            }
            Event::NoteOff { channel, pitch } => {
                if let Some((start, vel)) = open.remove(&(channel, pitch)) {
                    push_note(&mut out.notes, start, time, pitch, vel);
                }
            }
            Event::Tempo(_) => {}
        }
    }
    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort_by_key(|&((ch, p), _)| (ch, p));
    for ((_, pitch), (start, vel)) in dangling {
        push_note(&mut out.notes, start, last_time, pitch, vel);
    }
    out.notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)).then(a.offset.total_cmp(&b.offset)));
    Ok(out)
}

fn push_note(notes: &mut Vec<MidiNote>, onset: f64, offset: f64, pitch: u8, velocity: u8) {
    if offset > onset {
        notes.push(MidiNote { onset, offset, pitch, velocity });
    }
}

fn read_track(r: &mut Reader, track: usize, events: &mut Vec<(u64, usize, usize, Event)>) -> Result<()> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut seq = 0;
    while r.pos < r.end {
        tick += u64::from(r.vlq()?);
        let status_pos = r.pos;
        let first = r.u8()?;
        let (status, data0) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => {
                    r.pos = status_pos;
                    return r.err("data byte without running status");
                }
            }
        };
        match status {
            0x80..=0xef => {
                running = Some(status);
                let a = match data0 {
                    Some(a) => a,
                    None => r.u8()?,
                };
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                if kind == 0xc0 || kind == 0xd0 {
                    continue;
                }
                let b = r.u8()?;
                let ev = match kind {
                    0x90 if b > 0 => Some(Event::NoteOn { channel, pitch: a, velocity: b }),
                    0x90 | 0x80 => Some(Event::NoteOff { channel, pitch: a }),
                    _ => None,
                };
                if let Some(ev) = ev {
                    events.push((tick, track, seq, ev));
                    seq += 1;
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0xff => {
                running = None;
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                match kind {
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        events.push((tick, track, seq, Event::Tempo(us)));
                        seq += 1;
                    }
                    0x2f => return Ok(()),
                    _ => {}
                }
            }
            _ => {
                r.pos = status_pos;
                return r.err(format!("unsupported status byte 0x{status:02x}"));
            }
        }
    }
    Ok(())
}

struct TempoMap {
    timing: Timing,
    /// (tick, seconds at tick, microseconds per quarter from tick on)
    segments: Vec<(u64, f64, u32)>,
}

impl TempoMap {
    fn new(events: &[(u64, usize, usize, Event)], timing: Timing) -> Self {
        let mut segments = vec![(0u64, 0.0f64, WRITE_TEMPO_US)];
        if let Timing::Metrical(ppq) = timing {
            for &(tick, _, _, ev) in events {
                if let Event::Tempo(us) = ev {
                    let &(t0, s0, us0) = segments.last().unwrap();
                    let s = s0 + (tick - t0) as f64 * us0 as f64 / (ppq as f64 * 1e6);
                    if tick == t0 {
                        segments.pop();
                    }
                    segments.push((tick, s, us));
                }
            }
        }
        TempoMap { timing, segments }
    }

    fn seconds(&self, tick: u64) -> f64 {
        match self.timing {
            Timing::TicksPerSecond(tps) => tick as f64 / tps,
            Timing::Metrical(ppq) => {
                let idx = self.segments.partition_point(|&(t, _, _)| t <= tick) - 1;
                let (t0, s0, us) = self.segments[idx];
                s0 + (tick - t0) as f64 * us as f64 / (ppq as f64 * 1e6)
            }
        }
    }
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

fn seconds_to_ticks(seconds: f64) -> u64 {
    let ticks_per_second = WRITE_PPQ as f64 * 1e6 / WRITE_TEMPO_US as f64;
    (seconds * ticks_per_second).round().max(0.0) as u64
}

/// Writes notes as a format-0 file with one track at 120 BPM.
pub fn write_midi(notes: &[MidiNote]) -> Vec<u8> {
    // (tick, is_on, pitch, velocity); offs sort before ons at the same tick
    let mut evs: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(2 * notes.len());
    for n in notes {
        let on = seconds_to_ticks(n.onset);
        let off = seconds_to_ticks(n.offset).max(on + 1);
        evs.push((on, true, n.pitch, n.velocity.max(1)));
        evs.push((off, false, n.pitch, 0));
    }
    evs.sort_by_key(|&(tick, on, pitch, _)| (tick, on, pitch));

    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&WRITE_TEMPO_US.to_be_bytes()[1..]);
    let mut prev = 0u64;
    for (tick, on, pitch, vel) in evs {
        push_vlq(&mut track, (tick - prev) as u32);
        prev = tick;
        if on {
            track.extend_from_slice(&[0x90, pitch, vel]);
        } else {
            track.extend_from_slice(&[0x80, pitch, 0x40]);
        }
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_PPQ.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a format-0 file at 120 BPM and 480 ppq from raw track bytes.
    fn smf(track: &[u8]) -> Vec<u8> {
        let mut out = b"MThd\x00\x00\x00\x06\x00\x00\x00\x01\x01\xe0MTrk".to_vec();
        out.extend_from_slice(&(track.len() as u32).to_be_bytes());
        out.extend_from_slice(track);
        out
    }

    #[test]
    fn single_note() {
        // 1.0 s = 960 ticks at 480 ppq / 120 BPM; 0.5 s = 480 ticks
        let mut t = Vec::new();
        push_vlq(&mut t, 960);
        t.extend_from_slice(&[0x90, 60, 80]);
        push_vlq(&mut t, 480);
        t.extend_from_slice(&[0x80, 60, 0]);
        t.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let parsed = parse_midi(&smf(&t)).unwrap();
        assert_eq!(parsed.notes, vec![MidiNote { onset: 1.0, offset: 1.5, pitch: 60, velocity: 80 }]);
        assert_eq!(parsed.dropped_out_of_range, 0);
    }

    #[test]
    fn empty_track() {
        let parsed = parse_midi(&smf(&[0x00, 0xff, 0x2f, 0x00])).unwrap();
        assert!(parsed.notes.is_empty());
        let parsed = parse_midi(&smf(&[])).unwrap();
        assert!(parsed.notes.is_empty());
    }

    #[test]
    fn out_of_range_pitch_dropped() {
        let t = [0x00, 0x90, 10, 64, 0x60, 0x80, 10, 0, 0x00, 0xff, 0x2f, 0x00];
        let parsed = parse_midi(&smf(&t)).unwrap();
        assert!(parsed.notes.is_empty());
        assert_eq!(parsed.dropped_out_of_range, 1);
    }

    #[test]
    fn zero_velocity_note_on_and_running_status() {
        // note on 64 then running-status "note on vel 0" as the note-off
        let t = [0x00, 0x90, 64, 100, 0x60, 64, 0, 0x00, 0xff, 0x2f, 0x00];
        let parsed = parse_midi(&smf(&t)).unwrap();
        assert_eq!(parsed.notes.len(), 1);
        let n = parsed.notes[0];
        assert_eq!((n.pitch, n.velocity), (64, 100));
        assert!((n.offset - 96.0 / 960.0).abs() < 1e-12);
    }

    #[test]
    fn tempo_change_applies_from_its_tick() {
        let mut t = vec![0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40]; // 1 s per quarter
        push_vlq(&mut t, 480);
        t.extend_from_slice(&[0x90, 60, 80]);
        push_vlq(&mut t, 240);
        t.extend_from_slice(&[0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00]);
        let n = parse_midi(&smf(&t)).unwrap().notes[0];
        assert!((n.onset - 1.0).abs() < 1e-12);
        assert!((n.offset - 1.5).abs() < 1e-12);
    }

    #[test]
    fn malformed_input_reports_offset() {
        match parse_midi(b"MThx\x00\x00\x00\x06") {
            Err(Error::Midi { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        let mut truncated = smf(&[0x00, 0x90, 60, 80, 0x10, 0x80, 60, 0]);
        truncated.truncate(truncated.len() - 5);
        assert!(matches!(parse_midi(&truncated), Err(Error::Midi { .. })));
        // track declares one more byte than the file has
        let mut bad = smf(&[0x00, 0x90, 60]);
        bad[21] += 1;
        match parse_midi(&bad) {
            Err(Error::Midi { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("unexpected {other:?}"),
        }
        // note-on missing its velocity byte inside the chunk
        match parse_midi(&smf(&[0x00, 0x90, 60])) {
            Err(Error::Midi { offset, .. }) => assert_eq!(offset, 25),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_parse() {
        let notes = vec![
            MidiNote { onset: 0.992, offset: 1.504, pitch: 60, velocity: 80 },
            MidiNote { onset: 1.504, offset: 2.0, pitch: 60, velocity: 30 },
            MidiNote { onset: 1.2, offset: 1.3, pitch: 108, velocity: 127 },
        ];
        let back = parse_midi(&write_midi(&notes)).unwrap().notes;
        assert_eq!(back.len(), 3);
        let mut expected = notes.clone();
        expected.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        for (a, b) in back.iter().zip(&expected) {
            assert_eq!((a.pitch, a.velocity), (b.pitch, b.velocity));
            assert!((a.onset - b.onset).abs() < 1e-9);
            assert!((a.offset - b.offset).abs() < 1e-9);
        }
    }
}
