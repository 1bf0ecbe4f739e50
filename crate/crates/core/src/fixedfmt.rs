//! JSON output with a fixed number of decimals for every float.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::{Error, Result};

struct Fixed<F> {
    inner: F,
    decimals: usize,
}

impl<F: Formatter> Formatter for Fixed<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        let v = if value == 0.0 { 0.0 } else { value };
        write!(writer, "{:.*}", self.decimals, v)
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes `value` as JSON, printing every float with `decimals` places.
pub fn to_string_fixed<T: Serialize + ?Sized>(value: &T, decimals: usize, pretty: bool) -> Result<String> {
    let mut out = Vec::new();
    let res = if pretty {
        let fmt = Fixed { inner: PrettyFormatter::with_indent(b"  "), decimals };
        value.serialize(&mut serde_json::Serializer::with_formatter(&mut out, fmt))
    } else {
        let fmt = Fixed { inner: CompactFormatter, decimals };
        value.serialize(&mut serde_json::Serializer::with_formatter(&mut out, fmt))
    };
    res.map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(out).map_err(|e| Error::Format(e.to_string()))
}
