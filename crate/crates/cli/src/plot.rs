//! Minimal bar charts for sweep summaries.

use image::{Rgb, RgbImage};

const BAR: u32 = 18;
const GAP: u32 = 6;
const GROUP_GAP: u32 = 14;
const HEIGHT: u32 = 160;
const MARGIN: u32 = 10;
const PALETTE: [[u8; 3]; 4] = [[66, 133, 244], [219, 68, 55], [244, 180, 0], [15, 157, 88]];

/// One bar per value in `[0, 1]`, grouped; bars within a group cycle through
/// the palette. Gray rules mark 0.25, 0.5 and 0.75.
pub fn bar_chart(groups: &[Vec<f64>]) -> RgbImage {
    let bars: u32 = groups.iter().map(|g| g.len() as u32).sum();
    let width = 2 * MARGIN + bars * (BAR + GAP) + groups.len().saturating_sub(1) as u32 * GROUP_GAP;
    let height = HEIGHT + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width.max(2 * MARGIN + 1), height, Rgb([255, 255, 255]));
    let base = MARGIN + HEIGHT;
    for q in 1..4 {
        let y = base - HEIGHT * q / 4;
        for x in MARGIN..img.width() - MARGIN {
            img.put_pixel(x, y, Rgb([220, 220, 220]));
        }
    }
    let mut x = MARGIN;
    for group in groups {
        for (i, &v) in group.iter().enumerate() {
            let h = (v.clamp(0.0, 1.0) * HEIGHT as f64).round() as u32;
            for dx in 0..BAR {
                for y in base - h..base {
                    img.put_pixel(x + dx, y, Rgb(PALETTE[i % PALETTE.len()]));
                }
            }
            x += BAR + GAP;
        }
        x += GROUP_GAP;
    }
    for x in MARGIN..img.width() - MARGIN {
        img.put_pixel(x, base, Rgb([0, 0, 0]));
    }
    img
}
