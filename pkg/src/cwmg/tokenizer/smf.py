"""Standard MIDI File reading and writing (formats 0 and 1)."""

from __future__ import annotations

import struct
import warnings
from collections import defaultdict, deque

from ..errors import MidiParseError, UnsupportedMeterError
from .track import TICKS_PER_BEAT, Note, NoteEventTrack

DRUM_CHANNEL = 9
WRITE_DIVISION = 480


def _quantize(ticks, division):
    """Nearest sixteenth, ties rounding up."""
    return (8 * ticks + division) // (2 * division)


class _Reader:
    def __init__(self, data, pos=0, end=None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def need(self, n):
        if self.pos + n > self.end:
            raise MidiParseError("unexpected end of data", self.pos)

    def byte(self):
        self.need(1)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def bytes(self, n):
        self.need(n)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def varlen(self):
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


def _read_track_events(data, start, end):
    """Yield (abs_tick, status, payload, offset) for one MTrk body."""
    r = _Reader(data, start, end)
    tick = 0
    running = None
    while r.pos < r.end:
        tick += r.varlen()
        offset = r.pos
        status = r.byte()
        if status == 0xFF:
            kind = r.byte()
            length = r.varlen()
            yield tick, (0xFF, kind), r.bytes(length), offset
            if kind == 0x2F:
                return
            continue
        if status in (0xF0, 0xF7):
            r.bytes(r.varlen())
            continue
        if status < 0x80:
            if running is None:
                raise MidiParseError("data byte without running status", offset)
            r.pos -= 1
            status = running
        elif status < 0xF0:
            running = status
        else:
            raise MidiParseError(f"unsupported status byte 0x{status:02X}", offset)
        n_data = 1 if (status & 0xF0) in (0xC0, 0xD0) else 2
        payload = r.bytes(n_data)
        for b in payload:
            if b & 0x80:
                raise MidiParseError("data byte has high bit set", r.pos - n_data)
        yield tick, status, payload, offset


def parse_smf(data: bytes, genre: str = "unknown") -> NoteEventTrack:
    """Parse SMF bytes into a quantized :class:`NoteEventTrack`."""
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiParseError(f"bad header length {hlen}", 4)
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000 or division == 0:
        raise MidiParseError("SMPTE time division is not supported", 12)

    pos = 8 + hlen
    events = []
    order = 0
    for _ in range(ntrks):
        if pos + 8 > len(data):
            raise MidiParseError("missing track chunk", pos)
        tag = data[pos : pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        body = pos + 8
        if body + length > len(data):
            raise MidiParseError(f"track chunk length {length} overruns file", pos + 4)
        if tag == b"MTrk":
            for tick, status, payload, _ in _read_track_events(data, body, body + length):
                events.append((tick, order, status, payload))
                order += 1
        pos = body + length

    events.sort(key=lambda e: (e[0], e[1]))
    tempos = {}
    pending = defaultdict(deque)
    raw_notes = []
    last_tick = 0
    drums_seen = False
    for tick, _, status, payload in events:
        last_tick = max(last_tick, tick)
        if isinstance(status, tuple):
            kind = status[1]
            if kind == 0x51 and len(payload) == 3:
                us = int.from_bytes(payload, "big")
                if us > 0:
                    tempos[_quantize(tick, division)] = 60e6 / us
            elif kind == 0x58 and len(payload) >= 2:
                num, den_pow = payload[0], payload[1]
                if (num, den_pow) != (4, 2):
                    raise UnsupportedMeterError(f"time signature {num}/{2 ** den_pow} is not 4/4")
            continue
        kind, channel = status & 0xF0, status & 0x0F
        if kind not in (0x80, 0x90):
            continue
        if channel == DRUM_CHANNEL:
            drums_seen = True
            continue
        pitch, velocity = payload
        key = (channel, pitch)
        if kind == 0x90 and velocity > 0:
            pending[key].append((tick, velocity))
        elif pending[key]:
            on_tick, on_vel = pending[key].popleft()
            raw_notes.append((on_tick, tick, pitch, on_vel))

    if drums_seen:
        warnings.warn("drum channel 10 events ignored", stacklevel=2)
    dangling = sum(len(q) for q in pending.values())
    if dangling:
        warnings.warn(f"{dangling} note-on without note-off closed at track end", stacklevel=2)
        for (_, pitch), q in pending.items():
            for on_tick, on_vel in q:
                raw_notes.append((on_tick, max(last_tick, on_tick), pitch, on_vel))

    notes = [
        Note(_quantize(on, division), max(1, _quantize(off - on, division)), pitch, vel)
        for on, off, pitch, vel in raw_notes
    ]
    changes = sorted(tempos.items())
    return NoteEventTrack(notes=notes, tempo_changes=changes, genre=genre)


def _varlen(value):
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_smf(track: NoteEventTrack, division: int = WRITE_DIVISION) -> bytes:
    """Encode a track as a format-0 SMF on channel 1."""
    unit = division // TICKS_PER_BEAT
    timeline = [(0, 0, b"\xff\x58\x04\x04\x02\x18\x08")]
    for tick, bpm in track.tempo_changes:
        us = int(round(60e6 / bpm))
        timeline.append((tick * unit, 1, b"\xff\x51\x03" + us.to_bytes(3, "big")))
    for n in track.notes:
        vel = min(max(int(n.velocity), 1), 127)
        timeline.append((n.onset * unit, 3, bytes([0x90, n.pitch, vel])))
        timeline.append(((n.onset + n.duration) * unit, 2, bytes([0x80, n.pitch, 0])))
    timeline.sort(key=lambda e: (e[0], e[1], e[2]))

    body = bytearray()
    now = 0
    for tick, _, msg in timeline:
        body += _varlen(tick - now) + msg
        now = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
