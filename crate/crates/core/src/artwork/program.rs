//! Per-color paint programs: infill, stroke ordering, travel moves and
//! retiming.

use std::path::Path;

use super::{generate_infill, polyline_length, retime, ArtworkDocument, ArtworkError, RetimeLimits, ShapeKind, Trajectory};
use crate::format::{self, FormatError};
use crate::geometry::Vec2;

pub const PROGRAM_SCHEMA: &str = "muralbot.program/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    pub stepover: f64,
    /// Hatch angle in radians.
    pub angle: f64,
    pub limits: RetimeLimits,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { stepover: 0.15, angle: 0.0, limits: RetimeLimits::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub engaged: bool,
    pub t_start: f64,
    pub trajectory: Trajectory,
}

impl Segment {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.trajectory.duration()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaintProgram {
    pub color: String,
    pub segments: Vec<Segment>,
    pub centerline_fallbacks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramSample {
    pub t: f64,
    pub position: Vec2,
    pub engaged: bool,
    pub segment: usize,
}

impl PaintProgram {
    pub fn painted_length(&self) -> f64 {
        self.segments.iter().filter(|s| s.engaged).map(|s| s.trajectory.arc_length()).sum()
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, Segment::t_end)
    }

    pub fn dt(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.trajectory.dt)
    }

    /// One sample per tick. The sample shared by consecutive segments is
    /// emitted once and belongs to the earlier segment.
    pub fn flatten(&self) -> Vec<ProgramSample> {
        let mut out = Vec::new();
        let mut k = 0usize;
        for (si, seg) in self.segments.iter().enumerate() {
            let skip = usize::from(si > 0);
            for p in seg.trajectory.samples.iter().skip(skip) {
                out.push(ProgramSample { t: k as f64 * seg.trajectory.dt, position: *p, engaged: seg.engaged, segment: si });
                k += 1;
            }
        }
        out
    }

    pub fn path(&self) -> Vec<Vec2> {
        self.flatten().into_iter().map(|s| s.position).collect()
    }

    /// Engaged strokes as (first, last) sample-index ranges into `flatten()`.
    pub fn stroke_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0usize;
        for seg in &self.segments {
            let last = start + seg.trajectory.samples.len() - 1;
            if seg.engaged {
                out.push((start, last));
            }
            start = last;
        }
        out
    }
}

fn order_strokes(mut strokes: Vec<Vec<Vec2>>) -> Vec<Vec<Vec2>> {
    let mut ordered = Vec::with_capacity(strokes.len());
    if strokes.is_empty() {
        return ordered;
    }
    let first = strokes.remove(0);
    let mut cursor = *first.last().expect("non-empty stroke");
    ordered.push(first);
    while !strokes.is_empty() {
        let mut best = (f64::INFINITY, 0, false);
        for (i, s) in strokes.iter().enumerate() {
            let d0 = (s[0] - cursor).norm();
            let d1 = (s[s.len() - 1] - cursor).norm();
            if d0 < best.0 {
                best = (d0, i, false);
            }
            if d1 < best.0 {
                best = (d1, i, true);
            }
        }
        let mut s = strokes.remove(best.1);
        if best.2 {
            s.reverse();
        }
        cursor = *s.last().expect("non-empty stroke");
        ordered.push(s);
    }
    ordered
}

pub fn compile_program(doc: &ArtworkDocument, options: &CompileOptions) -> Result<Vec<PaintProgram>, ArtworkError> {
    doc.validate()?;
    options.limits.validate()?;
    if !(options.stepover > 0.0) {
        return Err(ArtworkError::Invalid("stepover must be positive".into()));
    }
    let mut colors: Vec<&str> = Vec::new();
    for s in &doc.shapes {
        if !colors.contains(&s.color.as_str()) {
            colors.push(&s.color);
        }
    }
    let mut programs = Vec::with_capacity(colors.len());
    for color in colors {
        let mut strokes = Vec::new();
        let mut fallbacks = 0;
        for shape in doc.shapes.iter().filter(|s| s.color == color) {
            match shape.kind {
                ShapeKind::Polyline => strokes.push(shape.vertices()),
                ShapeKind::Polygon => {
                    let inf = generate_infill(&shape.vertices(), options.stepover, options.angle);
                    fallbacks += usize::from(inf.centerline_fallback);
                    strokes.extend(inf.polylines);
                }
            }
        }
        strokes.retain(|s| polyline_length(s) > 0.0);
        let mut segments: Vec<Segment> = Vec::new();
        let mut t = 0.0;
        let mut push = |engaged: bool, path: &[Vec2], segments: &mut Vec<Segment>| -> Result<(), ArtworkError> {
            let trajectory = retime(path, &options.limits)?;
            let seg = Segment { engaged, t_start: t, trajectory };
            t = seg.t_end();
            segments.push(seg);
            Ok(())
        };
        let mut last: Option<Vec2> = None;
        for stroke in order_strokes(strokes) {
            if let Some(prev) = last {
                if (stroke[0] - prev).norm() > 0.0 {
                    push(false, &[prev, stroke[0]], &mut segments)?;
                }
            }
            push(true, &stroke, &mut segments)?;
            last = stroke.last().copied();
        }
        if !segments.is_empty() {
            programs.push(PaintProgram { color: color.to_string(), segments, centerline_fallbacks: fallbacks });
        }
    }
    Ok(programs)
}

pub fn programs_to_csv(programs: &[PaintProgram]) -> String {
    let mut out = format!("# schema {PROGRAM_SCHEMA}\nt,x,y,engaged,color\n");
    for p in programs {
        for s in p.flatten() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                format::fmt_f64(s.t),
                format::fmt_f64(s.position.x),
                format::fmt_f64(s.position.y),
                u8::from(s.engaged),
                p.color
            ));
        }
    }
    out
}

pub fn write_programs_csv(path: &Path, programs: &[PaintProgram]) -> Result<(), FormatError> {
    format::write_bytes(path, programs_to_csv(programs).as_bytes())
}

/// Rebuilds programs from CSV. Segments are split where the engaged flag
/// changes; the sample before the change is shared.
pub fn parse_programs_csv(path: &Path, text: &str) -> Result<Vec<PaintProgram>, FormatError> {
    let mut lines = text.lines();
    let tag = lines
        .next()
        .and_then(|l| l.strip_prefix("# schema "))
        .ok_or_else(|| FormatError::parse(path, "missing `# schema` line"))?;
    format::check_schema(path, tag.trim(), PROGRAM_SCHEMA)?;
    lines.next().ok_or_else(|| FormatError::parse(path, "missing header"))?;
    let mut rows: Vec<(String, f64, Vec2, bool)> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(FormatError::parse(path, format!("row {}: expected 5 fields", i + 1)));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| FormatError::parse(path, format!("row {}: {e}", i + 1)));
        rows.push((f[4].trim().to_string(), num(f[0])?, Vec2::new(num(f[1])?, num(f[2])?), num(f[3])? != 0.0));
    }
    let mut programs: Vec<PaintProgram> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let color = rows[i].0.clone();
        let mut j = i;
        while j < rows.len() && rows[j].0 == color {
            j += 1;
        }
        let block = &rows[i..j];
        let dt = if block.len() > 1 { block[1].1 - block[0].1 } else { 0.0 };
        let mut segments: Vec<Segment> = Vec::new();
        let mut cur = vec![block[0].2];
        let mut engaged = block[0].3;
        let mut t_start = block[0].1;
        for k in 1..block.len() {
            if block[k].3 != engaged {
                segments.push(Segment { engaged, t_start, trajectory: Trajectory { dt, samples: std::mem::take(&mut cur) } });
                cur = vec![block[k - 1].2];
                t_start = block[k - 1].1;
                engaged = block[k].3;
            }
            cur.push(block[k].2);
        }
        segments.push(Segment { engaged, t_start, trajectory: Trajectory { dt, samples: cur } });
        programs.push(PaintProgram { color, segments, centerline_fallbacks: 0 });
        i = j;
    }
    Ok(programs)
}

pub fn read_programs_csv(path: &Path) -> Result<Vec<PaintProgram>, FormatError> {
    parse_programs_csv(path, &format::read_string(path)?)
}
