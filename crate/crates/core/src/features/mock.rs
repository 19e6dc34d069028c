use std::fs;
use std::path::Path;

use super::{ConvMap, FeatureBackend, LatentVector};
use crate::error::{Error, Result};
use crate::ingest::Frame;

/// Fixture-backed extractor: row `i` of a CSV file is the descriptor of the
/// frame with sampled index `i`.
///
/// A first line of the form `# conv_shape=HxWxC` declares that rows are
/// flattened `H x W x C` activation grids (height-major, channel fastest). The
/// latent vector of such a row is its spatial average. Without the header rows
/// are latent vectors and conv-map extraction is unavailable.
#[derive(Debug, Clone)]
pub struct MockBackend {
    rows: Vec<Vec<f32>>,
    conv_shape: Option<(usize, usize, usize)>,
}

impl MockBackend {
    pub fn from_rows(rows: Vec<Vec<f32>>, conv_shape: Option<(usize, usize, usize)>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().position(|r| r.len() != first.len()) {
                return Err(Error::ShapeMismatch(format!(
                    "fixture row {bad} has {} columns, expected {}",
                    rows[bad].len(),
                    first.len()
                )));
            }
            if let Some((h, w, c)) = conv_shape {
                if h * w * c != first.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "conv_shape {h}x{w}x{c} does not match {} fixture columns",
                        first.len()
                    )));
                }
            }
        }
        Ok(Self { rows, conv_shape })
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ModelLoad(format!("fixture {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let conv_shape = match text.lines().next() {
            Some(line) if line.trim_start().starts_with('#') => parse_shape_header(line)?,
            _ => None,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::ModelLoad(format!("fixture: {e}")))?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<f32>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::ModelLoad(format!("fixture row {i}: bad value {field:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::ModelLoad("fixture has no rows".into()));
        }
        Self::from_rows(rows, conv_shape)
    }

    /// Writes rows in the format accepted by [`MockBackend::parse`].
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some((h, w, c)) = self.conv_shape {
            out.push_str(&format!("# conv_shape={h}x{w}x{c}\n"));
        }
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn conv_shape(&self) -> Option<(usize, usize, usize)> {
        self.conv_shape
    }

    fn row(&self, frame_index: usize) -> Result<&[f32]> {
        self.rows
            .get(frame_index)
            .map(Vec::as_slice)
            .ok_or(Error::FixtureMissing(frame_index))
    }

    fn conv_map(&self, frame_index: usize) -> Result<ConvMap> {
        let (h, w, c) = self.conv_shape.ok_or_else(|| {
            Error::ShapeMismatch("fixture has no conv_shape header; conv maps unavailable".into())
        })?;
        ConvMap::new(frame_index, h, w, c, self.row(frame_index)?.to_vec())
    }
}

fn parse_shape_header(line: &str) -> Result<Option<(usize, usize, usize)>> {
    let body = line.trim_start().trim_start_matches('#').trim();
    let Some(spec) = body.strip_prefix("conv_shape=") else {
        return Ok(None);
    };
    let dims: Vec<usize> = spec
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::ModelLoad(format!("bad conv_shape header {spec:?}")))?;
    match dims[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Some((h, w, c))),
        _ => Err(Error::ModelLoad(format!("bad conv_shape header {spec:?}"))),
    }
}

impl FeatureBackend for MockBackend {
    fn extract_latent(&self, frames: &[Frame]) -> Result<Vec<LatentVector>> {
        frames
            .iter()
            .map(|f| {
                let values = match self.conv_shape {
                    Some(_) => self.conv_map(f.index)?.global_average(),
                    None => self.row(f.index)?.to_vec(),
                };
                LatentVector::new(f.index, values)
            })
            .collect()
    }

    fn extract_conv_map(&self, frames: &[Frame]) -> Result<Vec<ConvMap>> {
        frames.iter().map(|f| self.conv_map(f.index)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::solid(i, 2, 2, [0, 0, 0])).collect()
    }

    #[test]
    fn rows_map_to_frame_indices() {
        let mock = MockBackend::parse("1,2,3\n4,5,6\n").unwrap();
        let out = mock.extract_latent(&frames(2)).unwrap();
        assert_eq!(out[1].values, vec![4.0, 5.0, 6.0]);
        assert_eq!(out[1].frame_index, 1);
    }

    #[test]
    fn empty_batch_is_empty() {
        let mock = MockBackend::parse("1,2\n").unwrap();
        assert!(mock.extract_latent(&[]).unwrap().is_empty());
    }

    #[test]
    fn duplicate_frame_gives_identical_vectors() {
        let mock = MockBackend::parse("1,2\n3,4\n").unwrap();
        let f = Frame::solid(1, 2, 2, [0, 0, 0]);
        let out = mock.extract_latent(&[f.clone(), f]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn missing_row_is_reported() {
        let mock = MockBackend::parse("1,2\n").unwrap();
        assert!(matches!(
            mock.extract_latent(&frames(2)),
            Err(Error::FixtureMissing(1))
        ));
    }

    #[test]
    fn conv_fixture_round_trips_and_pools() {
        let mock = MockBackend::parse("# conv_shape=1x2x2\n1,2,3,6\n").unwrap();
        let maps = mock.extract_conv_map(&frames(1)).unwrap();
        assert_eq!(maps[0].shape(), (1, 2, 2));
        let latent = mock.extract_latent(&frames(1)).unwrap();
        assert_eq!(latent[0].values, vec![2.0, 4.0]);
        let again = MockBackend::parse(&mock.to_csv()).unwrap();
        assert_eq!(again.rows, mock.rows);
        assert_eq!(again.conv_shape, mock.conv_shape);
    }

    #[test]
    fn conv_maps_need_header() {
        let mock = MockBackend::parse("1,2\n").unwrap();
        assert!(matches!(
            mock.extract_conv_map(&frames(1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(MockBackend::parse("1,2\n3\n").is_err());
        assert!(MockBackend::parse("# conv_shape=2x2x2\n1,2\n").is_err());
        assert!(MockBackend::parse("").is_err());
    }
}
