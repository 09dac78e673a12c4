//! Activation-map costmaps: aggregation, binary filter, resize, blur and the
//! lookup the controller uses.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PixelCoord;

/// Processing stage of a [`CostmapImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Raw,
    Binary,
    Blurred,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Binary => "binary",
            Stage::Blurred => "blurred",
        }
    }
}

/// Row-major grid of costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostmapImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    stage: Stage,
}

impl CostmapImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>, stage: Stage) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("costmap size", format!("{width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::invalid(
                "costmap values",
                format!("{} values for {width}x{height}", values.len()),
            ));
        }
        let ok = match stage {
            Stage::Raw => values.iter().all(|v| v.is_finite()),
            Stage::Binary => values.iter().all(|&v| v == 0.0 || v == 1.0),
            Stage::Blurred => values.iter().all(|v| (0.0..=1.0).contains(v)),
        };
        if !ok {
            return Err(Error::invalid(
                "costmap values",
                format!("out of range for stage {}", stage.name()),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
            stage,
        })
    }

    pub fn zeros(width: usize, height: usize, stage: Stage) -> Self {
        assert!(width > 0 && height > 0, "empty costmap");
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            stage,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Sets a cell to 1. Only meaningful while building binary maps.
    pub(crate) fn mark(&mut self, col: usize, row: usize) {
        self.values[row * self.width + col] = 1.0;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Binary PGM (`P5`, maxval 255, `round(255 * cost)`).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.values.iter().map(|&v| to_byte(v)).collect();
        out.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_pgm(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Text form: `AIRL-MAP h w` then one line of values per row.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "AIRL-MAP {} {}", self.height, self.width)?;
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_text(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Parses the text form. The stage is inferred: all values in `{0, 1}`
    /// gives `Binary`, all in `[0, 1]` gives `Blurred`, anything else `Raw`.
    pub fn parse_text(text: &str, source_name: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text, source_name);
        let (offset, magic) = tokens.next_token("header")?;
        if magic != "AIRL-MAP" {
            return Err(tokens.error(offset, format!("bad magic `{magic}`")));
        }
        let height = tokens.next_dim("height")?;
        let width = tokens.next_dim("width")?;
        let mut values = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            values.push(tokens.next_f64("map value")?);
        }
        tokens.expect_end()?;
        let stage = if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            Stage::Binary
        } else if values.iter().all(|v| (0.0..=1.0).contains(v)) {
            Stage::Blurred
        } else {
            Stage::Raw
        };
        Self::new(width, height, values, stage)
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string())
    }
}

fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Post-activation tensor, indexed kernel-major then row, column, channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTensor {
    pub kernels: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ActivationTensor {
    pub fn new(
        kernels: usize,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if kernels == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(
                "activation dims",
                format!("{kernels}x{height}x{width}x{channels}"),
            ));
        }
        let expected = kernels * height * width * channels;
        if values.len() != expected {
            return Err(Error::invalid(
                "activation values",
                format!("{} values, expected {expected}", values.len()),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("activation value", bad));
        }
        Ok(Self {
            kernels,
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(kernels: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            kernels,
            height,
            width,
            channels,
            values: vec![0.0; kernels * height * width * channels],
        }
    }

    pub fn index(&self, kernel: usize, row: usize, col: usize, channel: usize) -> usize {
        ((kernel * self.height + row) * self.width + col) * self.channels + channel
    }

    pub fn get(&self, kernel: usize, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(kernel, row, col, channel)]
    }

    pub fn set(&mut self, kernel: usize, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(kernel, row, col, channel);
        self.values[i] = value;
    }

    /// Parses `AIRL-ACT k h w c` followed by `k*h*w*c` whitespace-separated
    /// floats.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text, source_name);
        let (offset, magic) = tokens.next_token("header")?;
        if magic != "AIRL-ACT" {
            return Err(tokens.error(offset, format!("bad magic `{magic}`")));
        }
        let kernels = tokens.next_dim("kernel count")?;
        let height = tokens.next_dim("height")?;
        let width = tokens.next_dim("width")?;
        let channels = tokens.next_dim("channel count")?;
        let n = kernels * height * width * channels;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let (offset, v) = tokens.next_f64_at("activation")?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(tokens.error(offset, format!("negative or non-finite activation {v}")));
            }
            values.push(v);
        }
        tokens.expect_end()?;
        Self::new(kernels, height, width, channels, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "AIRL-ACT {} {} {} {}",
            self.kernels, self.height, self.width, self.channels
        )?;
        for chunk in self.values.chunks(self.channels * self.width) {
            let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Whitespace tokenizer that remembers byte offsets for error messages.
struct Tokens<'a> {
    text: &'a str,
    pos: usize,
    source_name: &'a str,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, source_name: &'a str) -> Self {
        Self {
            text,
            pos: 0,
            source_name,
        }
    }

    fn error(&self, offset: usize, message: String) -> Error {
        Error::Parse {
            source_name: self.source_name.to_string(),
            offset,
            message,
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = self.pos + (rest.len() - rest.trim_start().len());
        let tail = &self.text[start..];
        if tail.is_empty() {
            self.pos = self.text.len();
            return None;
        }
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        self.pos = start + len;
        Some((start, &tail[..len]))
    }

    fn next_token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next()
            .ok_or_else(|| self.error(self.text.len(), format!("unexpected end of data, expected {what}")))
    }

    fn next_dim(&mut self, what: &str) -> Result<usize> {
        let (offset, token) = self.next_token(what)?;
        match token.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(self.error(offset, format!("bad {what} `{token}`"))),
        }
    }

    fn next_f64_at(&mut self, what: &str) -> Result<(usize, f64)> {
        let (offset, token) = self.next_token(what)?;
        token
            .parse::<f64>()
            .map(|v| (offset, v))
            .map_err(|_| self.error(offset, format!("bad {what} `{token}`")))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        self.next_f64_at(what).map(|(_, v)| v)
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.next() {
            None => Ok(()),
            Some((offset, token)) => Err(self.error(offset, format!("trailing data `{token}`"))),
        }
    }
}

/// Mean over kernels, then mean over channels (unweighted greyscale).
pub fn aggregate_activations(tensor: &ActivationTensor) -> Result<CostmapImage> {
    let ActivationTensor {
        kernels,
        height,
        width,
        channels,
        ..
    } = *tensor;
    if kernels == 0 || height == 0 || width == 0 || channels == 0 || tensor.values.is_empty() {
        return Err(Error::invalid("activation tensor", "empty"));
    }
    let mut per_channel = vec![0.0; height * width * channels];
    for k in 0..kernels {
        let slab = &tensor.values[k * per_channel.len()..(k + 1) * per_channel.len()];
        for (acc, v) in per_channel.iter_mut().zip(slab) {
            *acc += v;
        }
    }
    let values = per_channel
        .chunks(channels)
        .map(|px| px.iter().map(|s| s / kernels as f64).sum::<f64>() / channels as f64)
        .collect();
    CostmapImage::new(width, height, values, Stage::Raw)
}

/// `1` where the value exceeds `threshold`, else `0`.
pub fn binary_filter(map: &CostmapImage, threshold: f64) -> Result<CostmapImage> {
    if map.stage == Stage::Blurred {
        return Err(Error::Stage {
            expected: "raw",
            actual: map.stage.name(),
        });
    }
    let values = map
        .values
        .iter()
        .map(|&v| if v > threshold { 1.0 } else { 0.0 })
        .collect();
    Ok(CostmapImage {
        values,
        stage: Stage::Binary,
        ..*map
    })
}

/// Nearest-neighbour resize; source cell is `floor(dst * src / dst_size)`.
pub fn resize_nearest(
    map: &CostmapImage,
    target_width: usize,
    target_height: usize,
) -> Result<CostmapImage> {
    if target_width == 0 || target_height == 0 {
        return Err(Error::invalid(
            "resize target",
            format!("{target_width}x{target_height}"),
        ));
    }
    let mut values = Vec::with_capacity(target_width * target_height);
    for row in 0..target_height {
        let src_row = row * map.height / target_height;
        for col in 0..target_width {
            let src_col = col * map.width / target_width;
            values.push(map.get(src_col, src_row));
        }
    }
    Ok(CostmapImage {
        width: target_width,
        height: target_height,
        values,
        stage: map.stage,
    })
}

/// Row `2 * radius` of Pascal's triangle, normalized to unit mass.
pub fn binomial_weights(radius: usize) -> Vec<f64> {
    let n = 2 * radius;
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let total: f64 = row.iter().sum();
    row.iter().map(|w| w / total).collect()
}

/// Separable binomial blur of support `(2r+1)^2` with replicate borders.
/// `radius = 0` is the identity (restaged as blurred).
pub fn blur_binomial(map: &CostmapImage, radius: usize) -> Result<CostmapImage> {
    if map.stage != Stage::Binary {
        return Err(Error::Stage {
            expected: "binary",
            actual: map.stage.name(),
        });
    }
    let weights = binomial_weights(radius);
    let r = radius as isize;
    let (w, h) = (map.width as isize, map.height as isize);
    let clamp = |i: isize, n: isize| i.clamp(0, n - 1) as usize;

    let mut horizontal = vec![0.0; map.values.len()];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (k, wk) in weights.iter().enumerate() {
                acc += wk * map.get(clamp(col + k as isize - r, w), row as usize);
            }
            horizontal[(row * w + col) as usize] = acc;
        }
    }
    let mut values = vec![0.0; map.values.len()];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (k, wk) in weights.iter().enumerate() {
                acc += wk * horizontal[clamp(row + k as isize - r, h) * map.width + col as usize];
            }
            values[(row * w + col) as usize] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(CostmapImage {
        values,
        stage: Stage::Blurred,
        ..*map
    })
}

/// `(1,2,1) x (1,2,1) / 16` with replicate borders.
pub fn gaussian_blur_3x3(map: &CostmapImage) -> Result<CostmapImage> {
    blur_binomial(map, 1)
}

/// Map value at the rounded film pixel; 0 for anything not on the image.
pub fn cost_lookup(map: &CostmapImage, pixel: &PixelCoord) -> f64 {
    if !pixel.in_frame() {
        return 0.0;
    }
    let col = pixel.film_x.round();
    let row = pixel.film_y.round();
    if col < 0.0 || row < 0.0 {
        return 0.0;
    }
    let (col, row) = (col as usize, row as usize);
    if col >= map.width || row >= map.height {
        return 0.0;
    }
    map.get(col, row)
}

/// Aggregate, binarize, resize and optionally blur.
pub fn process_activations(
    tensor: &ActivationTensor,
    threshold: f64,
    target_width: usize,
    target_height: usize,
    blur: bool,
) -> Result<CostmapImage> {
    let raw = aggregate_activations(tensor)?;
    let binary = binary_filter(&raw, threshold)?;
    let resized = resize_nearest(&binary, target_width, target_height)?;
    if blur {
        gaussian_blur_3x3(&resized)
    } else {
        Ok(resized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary(width: usize, height: usize, ones: &[(usize, usize)]) -> CostmapImage {
        let mut m = CostmapImage::zeros(width, height, Stage::Binary);
        for &(c, r) in ones {
            m.mark(c, r);
        }
        m
    }

    #[test]
    fn aggregate_constant_tensor() {
        let t = ActivationTensor::new(4, 3, 2, 3, vec![0.7; 72]).unwrap();
        let m = aggregate_activations(&t).unwrap();
        assert_eq!((m.width(), m.height()), (2, 3));
        assert!(m.values().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert_eq!(m.stage(), Stage::Raw);
    }

    #[test]
    fn aggregate_single_slice_is_identity() {
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let t = ActivationTensor::new(1, 3, 4, 1, values.clone()).unwrap();
        assert_eq!(aggregate_activations(&t).unwrap().values(), &values[..]);
    }

    #[test]
    fn aggregate_two_kernel_mean() {
        let mut t = ActivationTensor::zeros(2, 2, 2, 1);
        t.set(0, 1, 0, 0, 0.4);
        t.set(1, 1, 0, 0, 1.0);
        let m = aggregate_activations(&t).unwrap();
        assert!((m.get(0, 1) - 0.7).abs() < 1e-15);
        assert_eq!(m.sum(), m.get(0, 1));
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(ActivationTensor::new(0, 1, 1, 1, vec![]).is_err());
        assert!(ActivationTensor::new(1, 1, 1, 1, vec![-0.1]).is_err());
        assert!(ActivationTensor::new(1, 1, 2, 1, vec![0.1]).is_err());
    }

    #[test]
    fn binary_filter_rules() {
        let zeros = CostmapImage::zeros(3, 3, Stage::Raw);
        assert_eq!(binary_filter(&zeros, 0.0).unwrap().sum(), 0.0);
        let mut raw = CostmapImage::zeros(3, 3, Stage::Raw);
        raw.values[4] = 0.37;
        let b = binary_filter(&raw, 0.0).unwrap();
        assert_eq!(b.get(1, 1), 1.0);
        assert_eq!(b.sum(), 1.0);
        assert_eq!(binary_filter(&b, 0.0).unwrap(), b);
        assert_eq!(binary_filter(&raw, 0.5).unwrap().sum(), 0.0);
    }

    #[test]
    fn binary_filter_rejects_blurred() {
        let m = CostmapImage::zeros(2, 2, Stage::Blurred);
        assert!(matches!(binary_filter(&m, 0.0), Err(Error::Stage { .. })));
    }

    #[test]
    fn resize_integer_factor_makes_blocks() {
        let m = CostmapImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0], Stage::Binary).unwrap();
        let r = resize_nearest(&m, 4, 4).unwrap();
        for row in 0..4 {
            for col in 0..4 {
                assert_eq!(r.get(col, row), m.get(col / 2, row / 2));
            }
        }
        assert_eq!(resize_nearest(&m, 2, 2).unwrap(), m);
    }

    #[test]
    fn resize_preserves_value_set() {
        let values: Vec<f64> = (0..40 * 32).map(|i| (i % 7) as f64 / 10.0).collect();
        let m = CostmapImage::new(40, 32, values, Stage::Raw).unwrap();
        let r = resize_nearest(&m, 160, 128).unwrap();
        let set = |m: &CostmapImage| {
            let mut v: Vec<u64> = m.values().iter().map(|x| x.to_bits()).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        assert_eq!(set(&m), set(&r));
    }

    #[test]
    fn blur_zero_and_impulse() {
        let zero = CostmapImage::zeros(5, 5, Stage::Binary);
        assert_eq!(gaussian_blur_3x3(&zero).unwrap().sum(), 0.0);

        let b = gaussian_blur_3x3(&binary(5, 5, &[(2, 2)])).unwrap();
        let kernel = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
        for row in 0..5 {
            for col in 0..5 {
                let want = if (1..=3).contains(&row) && (1..=3).contains(&col) {
                    kernel[row - 1][col - 1] / 16.0
                } else {
                    0.0
                };
                assert_eq!(b.get(col, row), want);
            }
        }
        assert_eq!(b.stage(), Stage::Blurred);
    }

    #[test]
    fn blur_preserves_interior_mass() {
        // same fixture as the numpy replicate-border convolution check
        let m = binary(7, 7, &[(2, 2), (3, 2), (2, 3), (2, 4), (4, 4)]);
        let b = gaussian_blur_3x3(&m).unwrap();
        assert!((b.sum() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn blur_requires_binary() {
        let raw = CostmapImage::zeros(3, 3, Stage::Raw);
        assert!(gaussian_blur_3x3(&raw).is_err());
    }

    #[test]
    fn binomial_weights_match_pascal() {
        assert_eq!(binomial_weights(0), vec![1.0]);
        assert_eq!(binomial_weights(1), vec![0.25, 0.5, 0.25]);
        let w2 = binomial_weights(2);
        assert_eq!(w2, vec![1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0]);
    }

    #[test]
    fn lookup_rules() {
        let m = binary(4, 3, &[(1, 2)]);
        assert_eq!(cost_lookup(&m, &PixelCoord::at_raster(1, 2, 4, 3)), 1.0);
        assert_eq!(cost_lookup(&m, &PixelCoord::at_raster(0, 2, 4, 3)), 0.0);
        assert_eq!(cost_lookup(&m, &PixelCoord::at_raster(5, 2, 4, 3)), 0.0);
        assert_eq!(cost_lookup(&m, &PixelCoord::behind_camera()), 0.0);

        // rounding half away from zero: 0.5 -> 1, 1.49 -> 1
        let mut p = PixelCoord::at_raster(0, 0, 4, 3);
        p.film_x = 0.5;
        p.film_y = 1.5;
        assert_eq!(cost_lookup(&m, &p), 1.0);
        p.film_x = 1.49;
        p.film_y = 2.4;
        assert_eq!(cost_lookup(&m, &p), 1.0);
        // in frame but rounds past the last column
        p.film_x = 3.7;
        assert_eq!(cost_lookup(&m, &p), 0.0);
    }

    #[test]
    fn text_and_pgm_formats() {
        let m = CostmapImage::new(3, 2, vec![0.0, 1.0, 0.5, 0.25, 0.0, 1.0], Stage::Blurred)
            .unwrap();
        let mut text = Vec::new();
        m.write_text(&mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.starts_with("AIRL-MAP 2 3\n"));
        assert_eq!(CostmapImage::parse_text(&text, "t").unwrap(), m);

        let mut pgm = Vec::new();
        m.write_pgm(&mut pgm).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 255, 128, 64, 0, 255]);
    }

    #[test]
    fn activation_parse_errors_carry_offsets() {
        let text = "AIRL-ACT 1 1 2 1\n0.5 x\n";
        match ActivationTensor::parse(text, "t") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, text.find('x').unwrap()),
            other => panic!("{other:?}"),
        }
        match ActivationTensor::parse("AIRL-ACT 1 1 2 1\n0.5", "t") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ActivationTensor::parse("AIRL-MAP 1 1", "t"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            ActivationTensor::parse("AIRL-ACT 1 0 1 1", "t"),
            Err(Error::Parse { offset: 11, .. })
        ));
        assert!(matches!(
            ActivationTensor::parse("AIRL-ACT 1 1 1 1\n-2", "t"),
            Err(Error::Parse { offset: 17, .. })
        ));
    }

    fn random_binary(w: usize, h: usize) -> impl Strategy<Value = CostmapImage> {
        prop::collection::vec(prop::bool::weighted(0.15), w * h).prop_map(move |bits| {
            let values = bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            CostmapImage::new(w, h, values, Stage::Binary).unwrap()
        })
    }

    proptest! {
        #[test]
        fn binary_filter_idempotent(values in prop::collection::vec(0.0f64..2.0, 20), t in 0.0f64..1.0) {
            let m = CostmapImage::new(5, 4, values, Stage::Raw).unwrap();
            let once = binary_filter(&m, t).unwrap();
            prop_assert_eq!(binary_filter(&once, t).unwrap(), once);
        }

        #[test]
        fn blur_stays_within_input_range(m in random_binary(9, 7)) {
            let (lo, hi) = m.min_max();
            let b = gaussian_blur_3x3(&m).unwrap();
            for &v in b.values() {
                prop_assert!(v >= lo && v <= hi);
            }
        }

        #[test]
        fn wider_blur_grows_support(m in random_binary(12, 10)) {
            let mut prev = blur_binomial(&m, 0).unwrap();
            for radius in 1..4 {
                let next = blur_binomial(&m, radius).unwrap();
                for (a, b) in prev.values().iter().zip(next.values()) {
                    prop_assert!(!(*a > 0.0) || *b > 0.0);
                }
                prev = next;
            }
        }

        #[test]
        fn resized_lookup_matches_source(m in random_binary(40, 32), col in 0usize..160, row in 0usize..128) {
            let big = resize_nearest(&m, 160, 128).unwrap();
            let big_value = cost_lookup(&big, &PixelCoord::at_raster(col, row, 160, 128));
            let small_value = cost_lookup(&m, &PixelCoord::at_raster(col / 4, row / 4, 40, 32));
            prop_assert_eq!(big_value, small_value);
        }
    }
}
