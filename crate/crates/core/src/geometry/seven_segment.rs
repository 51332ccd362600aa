//! Seven-segment glyph rasters for LCD-style OCR fixtures, and a reader
//! that decodes them back from an image region.
//!
//! Segments are named `a` (top) clockwise to `f` (upper left), with `g`
//! the middle bar. Each character occupies one cell of a fixed grid.

use thiserror::Error;

use crate::protocol::BBox;
use crate::samal::MaskImage;

pub const ALPHABET: &str = " .-0123456789";

const A: u8 = 1 << 0;
const B: u8 = 1 << 1;
const C: u8 = 1 << 2;
const D: u8 = 1 << 3;
const E: u8 = 1 << 4;
const F: u8 = 1 << 5;
const G: u8 = 1 << 6;
/// Not a segment: marks the decimal-point cell.
const DOT: u8 = 1 << 7;

/// Lit segments per character.
pub const SEGMENT_TABLE: [(char, u8); 13] = [
    ('0', A | B | C | D | E | F),
    ('1', B | C),
    ('2', A | B | D | E | G),
    ('3', A | B | C | D | G),
    ('4', B | C | F | G),
    ('5', A | C | D | F | G),
    ('6', A | C | D | E | F | G),
    ('7', A | B | C),
    ('8', A | B | C | D | E | F | G),
    ('9', A | B | C | D | F | G),
    ('-', G),
    ('.', DOT),
    (' ', 0),
];

pub const MIN_CELL: (u32, u32) = (5, 9);

#[derive(Debug, Error, PartialEq)]
pub enum SevenSegmentError {
    #[error("character {0:?} cannot be rendered; alphabet is {ALPHABET:?}")]
    UnsupportedChar(char),
    #[error("cell {0}x{1} is too small; minimum is 5x9")]
    CellTooSmall(u32, u32),
}

pub fn segments_of(c: char) -> Option<u8> {
    SEGMENT_TABLE.iter().find(|(ch, _)| *ch == c).map(|&(_, s)| s)
}

fn char_of(segments: u8) -> Option<char> {
    SEGMENT_TABLE.iter().find(|(_, s)| *s == segments).map(|&(c, _)| c)
}

/// Half-open pixel rectangle `(x0, y0, x1, y1)` within a cell.
type Rect = (u32, u32, u32, u32);

/// Geometry of the segments inside a `w`×`h` cell.
#[derive(Debug, Clone, Copy)]
struct CellLayout {
    rects: [Rect; 7],
    dot: Rect,
}

impl CellLayout {
    fn new(w: u32, h: u32) -> Self {
        let t = (w / 6).min(h / 12).max(1);
        let pad = t;
        let (x0, x1, y0, y1) = (pad, w - pad, pad, h - pad);
        let gm = h / 2 - t / 2;
        let rects = [
            (x0 + t, y0, x1 - t, y0 + t),         // a
            (x1 - t, y0 + t, x1, gm),             // b
            (x1 - t, gm + t, x1, y1 - t),         // c
            (x0 + t, y1 - t, x1 - t, y1),         // d
            (x0, gm + t, x0 + t, y1 - t),         // e
            (x0, y0 + t, x0 + t, gm),             // f
            (x0 + t, gm, x1 - t, gm + t),         // g
        ];
        // The dot sits in the bottom-right padding so it never overlaps `d`.
        Self { rects, dot: (x1, y1, w, h) }
    }

    fn lit_rects(&self, segments: u8) -> impl Iterator<Item = Rect> + '_ {
        let dot = (segments & DOT != 0).then_some(self.dot);
        (0..7).filter(move |i| segments & (1 << i) != 0).map(|i| self.rects[i]).chain(dot)
    }
}

fn check_cell(cell: (u32, u32)) -> Result<(), SevenSegmentError> {
    if cell.0 < MIN_CELL.0 || cell.1 < MIN_CELL.1 {
        return Err(SevenSegmentError::CellTooSmall(cell.0, cell.1));
    }
    Ok(())
}

/// Renders `text` left to right, one `cell.0`×`cell.1` cell per character.
/// Lit pixels are 255.
pub fn render_seven_segment(text: &str, cell: (u32, u32)) -> Result<MaskImage, SevenSegmentError> {
    check_cell(cell)?;
    let glyphs: Vec<u8> = text
        .chars()
        .map(|c| segments_of(c).ok_or(SevenSegmentError::UnsupportedChar(c)))
        .collect::<Result<_, _>>()?;
    let (cw, ch) = cell;
    let mut mask = MaskImage::empty(cw * glyphs.len() as u32, ch);
    let layout = CellLayout::new(cw, ch);
    for (i, &segs) in glyphs.iter().enumerate() {
        let ox = i as u32 * cw;
        for (x0, y0, x1, y1) in layout.lit_rects(segs) {
            for y in y0..y1 {
                for x in x0..x1 {
                    mask.set(ox + x, y, 255);
                }
            }
        }
    }
    Ok(mask)
}

/// Decodes seven-segment text from the cells tiling `region`. `lit(x, y)`
/// reports whether an absolute pixel is on (out-of-image pixels should be
/// off). Cells with an unknown pattern read as `?`; the result is trimmed.
pub fn read_seven_segment(region: &BBox, cell: (u32, u32), lit: impl Fn(i64, i64) -> bool) -> String {
    if check_cell(cell).is_err() || region.w.is_nan() || region.w <= 0.0 {
        return String::new();
    }
    let (cw, ch) = cell;
    let layout = CellLayout::new(cw, ch);
    let cells = (region.w / cw as f64).round().max(0.0) as u32;
    let (ox, oy) = (region.x.round() as i64, region.y.round() as i64);
    let on = |cx: i64, (x0, y0, x1, y1): Rect| {
        let mut hits = 0u32;
        for y in y0..y1 {
            for x in x0..x1 {
                hits += lit(cx + x as i64, oy + y as i64) as u32;
            }
        }
        2 * hits > (x1 - x0) * (y1 - y0)
    };
    let mut text = String::new();
    for i in 0..cells {
        let cx = ox + (i * cw) as i64;
        let mut segs = 0u8;
        for (s, r) in layout.rects.iter().enumerate() {
            if on(cx, *r) {
                segs |= 1 << s;
            }
        }
        if segs == 0 && on(cx, layout.dot) {
            segs = DOT;
        }
        text.push(char_of(segs).unwrap_or('?'));
    }
    text.trim().to_string()
}
