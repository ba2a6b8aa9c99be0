//! 3×5 bitmap font for digits and capital letters.

pub const GLYPH_W: usize = 3;
pub const GLYPH_H: usize = 5;
/// Horizontal advance per glyph (one blank column between glyphs).
pub const GLYPH_PITCH: usize = 4;

const GLYPHS: &[(char, &str)] = &[
    ('0', "111101101101111"),
    ('1', "010110010010111"),
    ('2', "111001111100111"),
    ('3', "111001111001111"),
    ('4', "101101111001001"),
    ('5', "111100111001111"),
    ('6', "111100111101111"),
    ('7', "111001001001001"),
    ('8', "111101111101111"),
    ('9', "111101111001111"),
    ('A', "010101111101101"),
    ('B', "110101110101110"),
    ('C', "011100100100011"),
    ('D', "110101101101110"),
    ('E', "111100111100111"),
    ('F', "111100111100100"),
    ('G', "011100101101011"),
    ('H', "101101111101101"),
    ('I', "111010010010111"),
    ('J', "001001001101010"),
    ('K', "101101110101101"),
    ('L', "100100100100111"),
    ('M', "101111111101101"),
    ('N', "110101101101101"),
    ('O', "010101101101010"),
    ('P', "110101110100100"),
    ('Q', "010101101110011"),
    ('R', "110101110101101"),
    ('S', "011100010001110"),
    ('T', "111010010010010"),
    ('U', "101101101101111"),
    ('V', "101101101101010"),
    ('W', "101101111111101"),
    ('X', "101101010101101"),
    ('Y', "101101010010010"),
    ('Z', "111001010100111"),
];

/// Row-major on/off bitmap of `c`, or `None` if the font lacks it.
pub fn glyph(c: char) -> Option<[bool; GLYPH_W * GLYPH_H]> {
    let (_, bits) = GLYPHS.iter().find(|(g, _)| *g == c)?;
    let mut out = [false; GLYPH_W * GLYPH_H];
    for (o, b) in out.iter_mut().zip(bits.bytes()) {
        *o = b == b'1';
    }
    Some(out)
}
