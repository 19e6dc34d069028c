//! Storyboard collage and the cluster-colored timeline strip underneath it.

use image::{ImageEncoder, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::ingest::{fit_within, Frame};
use crate::summarize::Storyboard;

pub const MIN_TILE: u32 = 16;
pub const DEFAULT_BAR_HEIGHT: u32 = 24;
/// Minimum width of a key-frame marker in the timeline.
pub const MIN_BAR_WIDTH: u32 = 2;

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

const BASE_PALETTE: [[u8; 3]; 32] = [
    [0xe6, 0x19, 0x4b],
    [0x3c, 0xb4, 0x4b],
    [0xff, 0xe1, 0x19],
    [0x43, 0x63, 0xd8],
    [0xf5, 0x82, 0x31],
    [0x91, 0x1e, 0xb4],
    [0x46, 0xf0, 0xf0],
    [0xf0, 0x32, 0xe6],
    [0xbc, 0xf6, 0x0c],
    [0xfa, 0xbe, 0xbe],
    [0x00, 0x80, 0x80],
    [0xe6, 0xbe, 0xff],
    [0x9a, 0x63, 0x24],
    [0xff, 0xfa, 0xc8],
    [0x80, 0x00, 0x00],
    [0xaa, 0xff, 0xc3],
    [0x80, 0x80, 0x00],
    [0xff, 0xd8, 0xb1],
    [0x00, 0x00, 0x75],
    [0x80, 0x80, 0x80],
    [0x1f, 0x77, 0xb4],
    [0xff, 0x7f, 0x0e],
    [0x2c, 0xa0, 0x2c],
    [0xd6, 0x27, 0x28],
    [0x94, 0x67, 0xbd],
    [0x8c, 0x56, 0x4b],
    [0xe3, 0x77, 0xc2],
    [0x17, 0xbe, 0xcf],
    [0xbc, 0xbd, 0x22],
    [0xae, 0xc7, 0xe8],
    [0xff, 0xbb, 0x78],
    [0x98, 0xdf, 0x8a],
];

/// Color of cluster `id`. Past the 32 base colors the list repeats, alternately
/// lightened and darkened by a growing amount.
pub fn cluster_color(id: usize) -> Rgb<u8> {
    let base = BASE_PALETTE[id % BASE_PALETTE.len()];
    let cycle = id / BASE_PALETTE.len();
    if cycle == 0 {
        return Rgb(base);
    }
    let strength = 1.0 - 0.7f64.powi(cycle.div_ceil(2) as i32);
    let shift = |c: u8| -> u8 {
        let c = c as f64;
        let v = if cycle % 2 == 1 {
            c + (255.0 - c) * strength * 0.8
        } else {
            c * (1.0 - strength * 0.6)
        };
        v.round().clamp(0.0, 255.0) as u8
    };
    let mut rgb = base.map(shift);
    if rgb == [0, 0, 0] {
        rgb = [1, 1, 1];
    }
    Rgb(rgb)
}

/// First `n` cluster colors, nudged where a shifted color collides with an earlier one.
pub fn palette(n: usize) -> Vec<Rgb<u8>> {
    let mut out: Vec<Rgb<u8>> = Vec::with_capacity(n);
    for id in 0..n {
        let mut c = cluster_color(id);
        while c == BLACK || out.contains(&c) {
            c = Rgb([c[0].wrapping_add(7), c[1].wrapping_add(3), c[2].wrapping_add(11)]);
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollageLayout {
    pub rows: u32,
    pub cols: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub bar_height: u32,
    pub palette: Vec<Rgb<u8>>,
}

impl CollageLayout {
    pub fn width(&self) -> u32 {
        self.cols * self.tile_w
    }

    pub fn height(&self) -> u32 {
        self.rows * self.tile_h + self.bar_height
    }

    fn check(&self, n_clusters: usize) -> Result<()> {
        if self.tile_w < MIN_TILE || self.tile_h < MIN_TILE {
            return Err(Error::InvalidLayout(format!(
                "tiles must be at least {MIN_TILE}x{MIN_TILE}, got {}x{}",
                self.tile_w, self.tile_h
            )));
        }
        if (self.rows * self.cols) < n_clusters as u32 {
            return Err(Error::InvalidLayout(format!(
                "{}x{} grid cannot hold {n_clusters} tiles",
                self.rows, self.cols
            )));
        }
        if self.palette.len() < n_clusters {
            return Err(Error::InvalidLayout("palette shorter than cluster count".into()));
        }
        Ok(())
    }
}

/// Near-square grid: `cols = ceil(sqrt(n))`, `rows = ceil(n / cols)`.
pub fn plan_layout(n_clusters: usize, tile_w: u32, tile_h: u32) -> Result<CollageLayout> {
    if n_clusters == 0 {
        return Err(Error::EmptyStoryboard);
    }
    let mut cols = (n_clusters as f64).sqrt().ceil() as usize;
    while cols * cols < n_clusters {
        cols += 1;
    }
    while cols > 1 && (cols - 1) * (cols - 1) >= n_clusters {
        cols -= 1;
    }
    let rows = n_clusters.div_ceil(cols);
    let layout = CollageLayout {
        rows: rows as u32,
        cols: cols as u32,
        tile_w,
        tile_h,
        bar_height: DEFAULT_BAR_HEIGHT,
        palette: palette(n_clusters),
    };
    layout.check(n_clusters)?;
    Ok(layout)
}

/// Places key frames row-major, each letterboxed into its tile. The strip of
/// `bar_height` rows at the bottom is left black for the timeline.
pub fn render_collage(key_frames: &[Frame], layout: &CollageLayout) -> Result<RgbImage> {
    if key_frames.is_empty() {
        return Err(Error::EmptyStoryboard);
    }
    layout.check(key_frames.len())?;
    let mut canvas = RgbImage::from_pixel(layout.width(), layout.height(), BLACK);
    for (i, frame) in key_frames.iter().enumerate() {
        let (col, row) = (i as u32 % layout.cols, i as u32 / layout.cols);
        let tile = letterbox(frame, layout.tile_w, layout.tile_h);
        image::imageops::replace(
            &mut canvas,
            &tile,
            (col * layout.tile_w) as i64,
            (row * layout.tile_h) as i64,
        );
    }
    Ok(canvas)
}

fn letterbox(frame: &Frame, tile_w: u32, tile_h: u32) -> RgbImage {
    let (fw, fh) = fit_within(frame.width(), frame.height(), tile_w, tile_h);
    let img = frame.to_image();
    let scaled = if (fw, fh) == (frame.width(), frame.height()) {
        img
    } else {
        image::imageops::resize(&img, fw, fh, image::imageops::FilterType::Triangle)
    };
    let mut tile = RgbImage::from_pixel(tile_w, tile_h, BLACK);
    image::imageops::replace(
        &mut tile,
        &scaled,
        ((tile_w - fw) / 2) as i64,
        ((tile_h - fh) / 2) as i64,
    );
    tile
}

/// Column span `[start, end)` of frame `i` when `n` frames share `width` columns
/// and `width >= n`.
fn slot_span(i: usize, n: usize, width: u32) -> (u32, u32) {
    let w = width as usize;
    let start = (i * w).div_ceil(n);
    let end = ((i + 1) * w).div_ceil(n);
    (start as u32, end as u32)
}

/// Timeline of `labels.len()` equal slots colored by cluster, with a black bar
/// (at least 2 px) on each key frame. When the strip is narrower than the
/// frame count, each column takes the label of the first frame it covers.
pub fn render_timeline(
    labels: &[usize],
    key_frames: &[usize],
    width: u32,
    layout: &CollageLayout,
) -> Result<RgbImage> {
    let n = labels.len();
    if n == 0 || key_frames.is_empty() {
        return Err(Error::EmptyStoryboard);
    }
    if (width as usize) < MIN_BAR_WIDTH as usize * key_frames.len() {
        return Err(Error::WidthTooSmall {
            width,
            bars: key_frames.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= layout.palette.len()) {
        return Err(Error::InvalidLayout(format!("label {l} has no palette color")));
    }
    let height = layout.bar_height.max(1);
    let mut strip = RgbImage::new(width, height);
    let wide = width as usize >= n;

    for x in 0..width {
        let frame = if wide {
            x as usize * n / width as usize
        } else {
            (x as usize * n).div_ceil(width as usize)
        };
        let color = layout.palette[labels[frame.min(n - 1)]];
        for y in 0..height {
            strip.put_pixel(x, y, color);
        }
    }

    for &k in key_frames {
        if k >= n {
            return Err(Error::ShapeMismatch(format!("key frame {k} outside {n} frames")));
        }
        let (mut start, mut end) = if wide {
            slot_span(k, n, width)
        } else {
            let x = (k * width as usize / n) as u32;
            (x, x + 1)
        };
        if end - start < MIN_BAR_WIDTH {
            end = start + MIN_BAR_WIDTH;
            if end > width {
                end = width;
                start = width - MIN_BAR_WIDTH;
            }
        }
        for x in start..end {
            for y in 0..height {
                strip.put_pixel(x, y, BLACK);
            }
        }
    }
    Ok(strip)
}

/// Collage with the timeline strip along the bottom.
pub fn render_storyboard(
    board: &Storyboard,
    key_frames: &[Frame],
    layout: &CollageLayout,
) -> Result<RgbImage> {
    if key_frames.len() != board.key_frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} key-frame images for {} key frames",
            key_frames.len(),
            board.key_frames.len()
        )));
    }
    let mut canvas = render_collage(key_frames, layout)?;
    if layout.bar_height > 0 {
        let strip = render_timeline(&board.labels, &board.key_frames, layout.width(), layout)?;
        image::imageops::replace(
            &mut canvas,
            &strip,
            0,
            (layout.rows * layout.tile_h) as i64,
        );
    }
    Ok(canvas)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summarize::summarize_time;

    /// Maximal runs of all-black columns as `(start, end)`.
    fn black_runs(strip: &RgbImage) -> Vec<(u32, u32)> {
        let mut runs = Vec::new();
        let mut start = None;
        for x in 0..=strip.width() {
            let black = x < strip.width() && (0..strip.height()).all(|y| *strip.get_pixel(x, y) == BLACK);
            match (black, start) {
                (true, None) => start = Some(x),
                (false, Some(s)) => {
                    runs.push((s, x));
                    start = None;
                }
                _ => {}
            }
        }
        runs
    }

    #[test]
    fn layout_shapes() {
        let l = plan_layout(16, 32, 32).unwrap();
        assert_eq!((l.rows, l.cols), (4, 4));
        let l = plan_layout(1, 32, 32).unwrap();
        assert_eq!((l.rows, l.cols), (1, 1));
        let l = plan_layout(10, 32, 32).unwrap();
        assert_eq!((l.cols, l.rows), (4, 3));
        assert!(plan_layout(4, 8, 32).is_err());
        assert!(plan_layout(0, 32, 32).is_err());
    }

    #[test]
    fn palette_is_distinct_and_never_black() {
        let p = palette(300);
        for (i, a) in p.iter().enumerate() {
            assert_ne!(*a, BLACK);
            for b in &p[..i] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(p[..32], palette(32)[..]);
    }

    #[test]
    fn single_frame_is_letterboxed() {
        let layout = plan_layout(1, 40, 40).unwrap();
        let img = render_collage(&[Frame::solid(0, 80, 40, [200, 10, 10])], &layout).unwrap();
        assert_eq!(img.dimensions(), (40, 40 + DEFAULT_BAR_HEIGHT));
        assert_eq!(*img.get_pixel(20, 0), BLACK);
        assert_eq!(*img.get_pixel(20, 20), Rgb([200, 10, 10]));
        assert_eq!(*img.get_pixel(20, 39), BLACK);
    }

    #[test]
    fn matching_aspect_has_no_padding() {
        let layout = plan_layout(4, 20, 20).unwrap();
        let frames: Vec<Frame> = (0..4).map(|i| Frame::solid(i, 20, 20, [10 + i as u8, 50, 50])).collect();
        let img = render_collage(&frames, &layout).unwrap();
        assert_eq!(img.dimensions(), (40, 40 + DEFAULT_BAR_HEIGHT));
        for (i, (x, y)) in [(0, 0), (20, 0), (0, 20), (20, 20)].into_iter().enumerate() {
            assert_eq!(*img.get_pixel(x, y), Rgb([10 + i as u8, 50, 50]));
            assert_eq!(*img.get_pixel(x + 19, y + 19), Rgb([10 + i as u8, 50, 50]));
        }
    }

    #[test]
    fn output_dimensions_follow_layout() {
        let layout = plan_layout(10, 30, 20).unwrap();
        let frames: Vec<Frame> = (0..10).map(|i| Frame::solid(i, 7, 5, [1, 2, 3])).collect();
        let img = render_collage(&frames, &layout).unwrap();
        assert_eq!(img.dimensions(), (4 * 30, 3 * 20 + layout.bar_height));
        // trailing unused cells stay black
        assert_eq!(*img.get_pixel(3 * 30 + 15, 2 * 20 + 10), BLACK);
        assert!(matches!(render_collage(&[], &layout), Err(Error::EmptyStoryboard)));
    }

    #[test]
    fn single_cluster_timeline() {
        let layout = plan_layout(1, 16, 16).unwrap();
        let strip = render_timeline(&[0; 8], &[3], 80, &layout).unwrap();
        assert_eq!(black_runs(&strip), vec![(30, 40)]);
        assert_eq!(*strip.get_pixel(0, 0), layout.palette[0]);
    }

    #[test]
    fn time_storyboard_timeline() {
        let board = summarize_time(10, 2).unwrap();
        let layout = plan_layout(2, 160, 90).unwrap();
        let strip = render_timeline(&board.labels, &board.key_frames, layout.width(), &layout).unwrap();
        assert_eq!(black_runs(&strip), vec![(64, 96), (224, 256)]);
        assert_eq!(*strip.get_pixel(10, 5), layout.palette[0]);
        assert_eq!(*strip.get_pixel(300, 5), layout.palette[1]);
    }

    #[test]
    fn narrow_strip_merges_slots() {
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let layout = plan_layout(2, 16, 16).unwrap();
        let strip = render_timeline(&labels, &[20, 70], 32, &layout).unwrap();
        assert_eq!(black_runs(&strip), vec![(6, 8), (22, 24)]);
        assert_eq!(*strip.get_pixel(15, 0), layout.palette[0]);
        assert_eq!(*strip.get_pixel(16, 0), layout.palette[1]);
        assert!(matches!(
            render_timeline(&labels, &[20, 70], 3, &layout),
            Err(Error::WidthTooSmall { .. })
        ));
    }

    #[test]
    fn bar_at_right_edge_stays_inside() {
        let layout = plan_layout(1, 16, 16).unwrap();
        let strip = render_timeline(&[0; 30], &[29], 30, &layout).unwrap();
        assert_eq!(black_runs(&strip), vec![(28, 30)]);
    }
}
