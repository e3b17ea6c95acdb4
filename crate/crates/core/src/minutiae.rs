//! Minutiae templates and their line-oriented text format.
//!
//! ```text
//! MINU v1 <width> <height>
//! # comment
//! <x> <y> <angle> <E|B|O> <quality>
//! ```
//!
//! Fields are separated by single spaces and lines end in LF. Empty lines and
//! `#` lines after the header are ignored. Angles are written with one decimal.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "MINU";
const VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MinutiaKind {
    Ending,
    Bifurcation,
    Other,
}

impl MinutiaKind {
    pub fn letter(self) -> char {
        match self {
            MinutiaKind::Ending => 'E',
            MinutiaKind::Bifurcation => 'B',
            MinutiaKind::Other => 'O',
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "E" => Some(MinutiaKind::Ending),
            "B" => Some(MinutiaKind::Bifurcation),
            "O" => Some(MinutiaKind::Other),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinutiaPoint {
    pub x: u32,
    pub y: u32,
    /// Direction in degrees, `[0, 360)`.
    pub angle: f64,
    pub kind: MinutiaKind,
    /// `0..=100`.
    pub quality: u8,
}

impl MinutiaPoint {
    fn check(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        if self.x >= width || self.y >= height {
            return Err(format!("point ({}, {}) outside {width}x{height}", self.x, self.y));
        }
        if !(self.angle.is_finite() && (0.0..360.0).contains(&self.angle)) {
            return Err(format!("angle {} outside [0, 360)", self.angle));
        }
        if self.quality > 100 {
            return Err(format!("quality {} above 100", self.quality));
        }
        Ok(())
    }
}

/// Minutiae detected on one image of the given size.
#[derive(Clone, Debug, PartialEq)]
pub struct MinutiaeTemplate {
    width: u32,
    height: u32,
    points: Vec<MinutiaPoint>,
}

impl MinutiaeTemplate {
    pub fn new(width: u32, height: u32, points: Vec<MinutiaPoint>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams(format!("template dims {width}x{height}")));
        }
        for (i, p) in points.iter().enumerate() {
            p.check(width, height).map_err(|message| Error::MinutiaeBounds { line: i + 2, message })?;
        }
        Ok(Self { width, height, points })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn points(&self) -> &[MinutiaPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn parse_header(line: &str) -> Result<(u32, u32)> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.first() != Some(&MAGIC) {
        return Err(Error::MinutiaeHeader(format!("expected magic {MAGIC:?}")));
    }
    if fields.get(1) != Some(&VERSION) {
        return Err(Error::MinutiaeHeader(format!("expected version {VERSION:?}")));
    }
    if fields.len() != 4 {
        return Err(Error::MinutiaeHeader("expected `MINU v1 <width> <height>`".into()));
    }
    let dim = |s: &str| {
        s.parse::<u32>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::MinutiaeHeader(format!("invalid dimension {s:?}")))
    };
    Ok((dim(fields[2])?, dim(fields[3])?))
}

fn parse_point(line: &str, line_no: usize) -> Result<MinutiaPoint> {
    let syntax = |message: String| Error::MinutiaeSyntax { line: line_no, message };
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 5 {
        return Err(syntax(format!("expected 5 fields, found {}", fields.len())));
    }
    let x = fields[0].parse::<u32>().map_err(|_| syntax(format!("bad x {:?}", fields[0])))?;
    let y = fields[1].parse::<u32>().map_err(|_| syntax(format!("bad y {:?}", fields[1])))?;
    let angle = fields[2]
        .parse::<f64>()
        .ok()
        .filter(|a| a.is_finite())
        .ok_or_else(|| syntax(format!("bad angle {:?}", fields[2])))?;
    let kind = MinutiaKind::from_letter(fields[3]).ok_or_else(|| syntax(format!("bad kind {:?}", fields[3])))?;
    let quality = fields[4].parse::<u32>().map_err(|_| syntax(format!("bad quality {:?}", fields[4])))?;
    let quality = u8::try_from(quality).unwrap_or(u8::MAX);
    Ok(MinutiaPoint { x, y, angle, kind, quality })
}

pub fn parse_minutiae_text(bytes: &[u8]) -> Result<MinutiaeTemplate> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::MinutiaeSyntax {
        line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1,
        message: "invalid UTF-8".into(),
    })?;
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let (width, height) = parse_header(header)?;

    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let point = parse_point(line, line_no)?;
        point.check(width, height).map_err(|message| Error::MinutiaeBounds { line: line_no, message })?;
        points.push(point);
    }
    Ok(MinutiaeTemplate { width, height, points })
}

/// Canonical text form. Angles are rounded to tenths of a degree and wrap
/// to `0.0` when they round up to 360.
pub fn serialize_minutiae_text(t: &MinutiaeTemplate) -> Vec<u8> {
    let mut out = format!("{MAGIC} {VERSION} {} {}\n", t.width, t.height);
    for p in &t.points {
        let tenths = ((p.angle * 10.0).round() as i64).rem_euclid(3600);
        let _ = writeln!(out, "{} {} {}.{} {} {}", p.x, p.y, tenths / 10, tenths % 10, p.kind.letter(), p.quality);
    }
    out.into_bytes()
}

pub fn read_minutiae(path: impl AsRef<Path>) -> Result<MinutiaeTemplate> {
    parse_minutiae_text(&fs::read(path)?)
}

pub fn write_minutiae(path: impl AsRef<Path>, t: &MinutiaeTemplate) -> Result<()> {
    fs::write(path, serialize_minutiae_text(t))?;
    Ok(())
}
