//! Dataset files, synthetic scenes, run configuration, result files and
//! label-map scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{FitResult, Hyperparameters};
use crate::error::{Error, Result};
use crate::hermitian::{packed_len, HermitianMatrix, MAX_DIM};
use crate::image::{PolsarImage, DIAGONAL_JITTER};
use crate::wishart::{sample_wishart, WishartParams};

pub const MAGIC: &[u8; 4] = b"PWC1";
const HEADER_LEN: usize = 16;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Serializes an image in the PWC1 layout.
pub fn encode_dataset(image: &PolsarImage) -> Vec<u8> {
    let d = image.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + image.len() * packed_len(d) * 16);
    out.extend_from_slice(MAGIC);
    for v in [image.width(), image.height(), d] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in image.pixels() {
        for z in p.upper() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

/// Parses a PWC1 buffer. Values are returned exactly as stored; the fit
/// applies the diagonal jitter itself.
pub fn decode_dataset(bytes: &[u8]) -> Result<PolsarImage> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        return Err(Error::TruncatedFile { offset: bytes.len() as u64 });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (width, height, d) = (word(0), word(1), word(2));
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    if d == 0 || d > MAX_DIM {
        return Err(Error::Format(format!("unsupported matrix dimension {d}")));
    }
    let n = width.checked_mul(height).ok_or_else(|| Error::Format(format!("image {width}x{height} too large")))?;
    let per_pixel = packed_len(d) * 16;
    let expected = n.checked_mul(per_pixel).and_then(|v| v.checked_add(HEADER_LEN));
    match expected {
        Some(len) if bytes.len() >= len => {
            if bytes.len() > len {
                return Err(Error::Format(format!("{} trailing bytes", bytes.len() - len)));
            }
        }
        _ => {
            // report where the first incomplete value starts
            let whole = (bytes.len() - HEADER_LEN) / 8 * 8;
            return Err(Error::TruncatedFile { offset: (HEADER_LEN + whole) as u64 });
        }
    }
    let f = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let pixels = (0..n)
        .into_par_iter()
        .map(|i| {
            let base = HEADER_LEN + i * per_pixel;
            let mut entries = [Complex64::new(0.0, 0.0); 10];
            let mut idx = 0;
            for r in 0..d {
                for c in r..d {
                    let off = base + idx * 16;
                    let z = Complex64::new(f(off), f(off + 8));
                    if !(z.re.is_finite() && z.im.is_finite()) {
                        return Err(Error::NonHermitianEntry {
                            pixel: i,
                            detail: format!("non-finite entry ({r},{c})"),
                        });
                    }
                    if r == c && z.im != 0.0 {
                        return Err(Error::NonHermitianEntry {
                            pixel: i,
                            detail: format!("diagonal ({r},{r}) has imaginary part {:e}", z.im),
                        });
                    }
                    entries[idx] = z;
                    idx += 1;
                }
            }
            let m = HermitianMatrix::from_upper(d, &entries[..idx])
                .map_err(|e| Error::NonHermitianEntry { pixel: i, detail: e.to_string() })?;
            if m.jitter(DIAGONAL_JITTER).cholesky().is_err() {
                return Err(Error::NonHermitianEntry { pixel: i, detail: "not positive definite".into() });
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    PolsarImage::new(width, height, pixels)
}

pub fn write_dataset(path: &Path, image: &PolsarImage) -> Result<()> {
    fs::write(path, encode_dataset(image)).map_err(|e| io_err(path, e))
}

pub fn read_dataset(path: &Path) -> Result<PolsarImage> {
    decode_dataset(&fs::read(path).map_err(|e| io_err(path, e))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub sigma: HermitianMatrix,
    pub looks: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Equal-width vertical stripes, class `j` in stripe `j`.
    Stripes,
    /// `tiles_x x tiles_y` tiles, class `(tx + ty) mod K`.
    Checkerboard { tiles_x: usize, tiles_y: usize },
    /// Explicit rectangles that must tile the image without overlap.
    Rects(Vec<Rect>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<ClassSpec>,
    pub layout: Layout,
}

impl SceneSpec {
    /// 96 x 96 three-stripe benchmark: `diag(1, 0.5, 0.25)`, its channel
    /// reversal and four times the first, at 8, 16 and 24 looks.
    pub fn benchmark() -> Self {
        let a = HermitianMatrix::from_diagonal(&[1.0, 0.5, 0.25]);
        Self {
            width: 96,
            height: 96,
            classes: vec![
                ClassSpec { sigma: a, looks: 8 },
                ClassSpec { sigma: HermitianMatrix::from_diagonal(&[0.25, 0.5, 1.0]), looks: 16 },
                ClassSpec { sigma: a.scale(4.0), looks: 24 },
            ],
            layout: Layout::Stripes,
        }
    }

    /// Ground-truth class of every pixel, row-major.
    pub fn label_map(&self) -> Result<Vec<usize>> {
        let (w, h, k) = (self.width, self.height, self.classes.len());
        if w == 0 || h == 0 || k == 0 {
            return Err(Error::domain("scene needs a positive size and at least one class"));
        }
        match &self.layout {
            Layout::Stripes => Ok((0..w * h).map(|i| (i % w) * k / w).collect()),
            Layout::Checkerboard { tiles_x, tiles_y } => {
                let (tx, ty) = (*tiles_x, *tiles_y);
                if tx == 0 || ty == 0 || w % tx != 0 || h % ty != 0 {
                    return Err(Error::domain(format!("{tx}x{ty} tiles do not divide a {w}x{h} image")));
                }
                Ok((0..w * h).map(|i| ((i % w) / (w / tx) + (i / w) / (h / ty)) % k).collect())
            }
            Layout::Rects(rects) => {
                let mut labels = vec![usize::MAX; w * h];
                for (ri, r) in rects.iter().enumerate() {
                    if r.class >= k {
                        return Err(Error::domain(format!("rectangle {ri} uses class {} of {k}", r.class)));
                    }
                    if r.x + r.width > w || r.y + r.height > h {
                        return Err(Error::domain(format!("rectangle {ri} leaves the image")));
                    }
                    for y in r.y..r.y + r.height {
                        for x in r.x..r.x + r.width {
                            let cell = &mut labels[y * w + x];
                            if *cell != usize::MAX {
                                return Err(Error::domain(format!("rectangle {ri} overlaps at ({x}, {y})")));
                            }
                            *cell = r.class;
                        }
                    }
                }
                if let Some(i) = labels.iter().position(|&l| l == usize::MAX) {
                    return Err(Error::domain(format!("pixel ({}, {}) is not covered", i % w, i / w)));
                }
                Ok(labels)
            }
        }
    }
}

/// Samples a piecewise-constant scene. Row `y` draws from its own stream of
/// a generator seeded with `seed`, so the output does not depend on the
/// thread count.
pub fn generate_synthetic(spec: &SceneSpec, seed: u64) -> Result<(PolsarImage, Vec<usize>)> {
    let labels = spec.label_map()?;
    let params =
        spec.classes.iter().map(|c| WishartParams::new(c.looks as f64, c.sigma)).collect::<Result<Vec<_>>>()?;
    let w = spec.width;
    let rows = (0..spec.height)
        .into_par_iter()
        .map(|y| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1000 + y as u64);
            labels[y * w..(y + 1) * w].iter().map(|&l| sample_wishart(&mut rng, &params[l])).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let image = PolsarImage::new(w, spec.height, rows.into_iter().flatten().collect())?;
    Ok((image, labels))
}

/// Everything a run needs: hyperparameters, paths and an optional scene.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub hyper: Hyperparameters,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub scene: Option<SceneSpec>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

#[derive(Clone, Debug, Default)]
struct ClassDraft {
    diag: Option<Vec<f64>>,
    offdiag: Option<Vec<f64>>,
    looks: Option<u32>,
}

/// Key-value parser for the flat config format. `#` starts a comment;
/// dashes in keys are read as underscores.
#[derive(Clone, Debug, Default)]
pub struct ConfigBuilder {
    config: RunConfig,
    width: Option<usize>,
    height: Option<usize>,
    layout: Option<String>,
    tiles: (Option<usize>, Option<usize>),
    classes: BTreeMap<usize, ClassDraft>,
    rects: BTreeMap<usize, Rect>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn parse_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        self.parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let h = &mut self.config.hyper;
        match key.as_str() {
            "alpha0" => h.alpha0 = parse_num(&key, value)?,
            "beta0" => h.beta0 = parse_num(&key, value)?,
            "b0" => h.b0 = parse_num(&key, value)?,
            "c0" => h.c0 = parse_num(&key, value)?,
            "nominal_looks" => h.nominal_looks = if value == "none" { None } else { Some(parse_num(&key, value)?) },
            "k" | "k_init" => h.k_init = parse_num(&key, value)?,
            "win" => h.win = parse_num(&key, value)?,
            "tol" => h.tol = parse_num(&key, value)?,
            "max_iter" => h.max_iter = parse_num(&key, value)?,
            "prune_threshold" => h.prune_threshold = if value == "auto" { None } else { Some(parse_num(&key, value)?) },
            "bessel_mode" => h.bessel_mode = value.parse()?,
            "look_rate" => h.look_rate = value.parse()?,
            "seed" => h.seed = parse_num(&key, value)?,
            "kmeans_rounds" => h.kmeans_rounds = parse_num(&key, value)?,
            "kmeans_restarts" => h.kmeans_restarts = parse_num(&key, value)?,
            "input" => self.config.input = Some(PathBuf::from(value)),
            "output" => self.config.output = Some(PathBuf::from(value)),
            "width" => self.width = Some(parse_num(&key, value)?),
            "height" => self.height = Some(parse_num(&key, value)?),
            "layout" => self.layout = Some(value.to_ascii_lowercase()),
            "tiles_x" => self.tiles.0 = Some(parse_num(&key, value)?),
            "tiles_y" => self.tiles.1 = Some(parse_num(&key, value)?),
            _ => return self.set_indexed(&key, value),
        }
        Ok(())
    }

    fn set_indexed(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key '{key}'"));
        let mut parts = key.splitn(3, '.');
        let (group, idx, field) = (parts.next(), parts.next(), parts.next());
        let idx: usize = idx.and_then(|s| s.parse().ok()).ok_or_else(unknown)?;
        match (group, field) {
            (Some("class"), Some(f)) => {
                let c = self.classes.entry(idx).or_default();
                match f {
                    "diag" => c.diag = Some(parse_list(key, value)?),
                    "offdiag" => c.offdiag = Some(parse_list(key, value)?),
                    "looks" => c.looks = Some(parse_num(key, value)?),
                    _ => return Err(unknown()),
                }
            }
            (Some("rect"), None) => {
                let v = parse_list(key, value)?;
                if v.len() != 5 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
                    return Err(Error::Config(format!("{key}: expected 'x y width height class'")));
                }
                let u = |i: usize| v[i] as usize;
                self.rects.insert(idx, Rect { x: u(0), y: u(1), width: u(2), height: u(3), class: u(4) });
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    fn scene(&self) -> Result<Option<SceneSpec>> {
        if self.classes.is_empty() && self.width.is_none() && self.height.is_none() && self.layout.is_none() {
            return Ok(None);
        }
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| Error::Config(format!("scene needs '{name}'")));
        let (width, height) = (need(self.width, "width")?, need(self.height, "height")?);
        let mut classes = Vec::new();
        for (expected, (&i, c)) in self.classes.iter().enumerate() {
            if i != expected {
                return Err(Error::Config(format!("class indices must be 0..K, missing class.{expected}")));
            }
            let diag = c.diag.as_ref().ok_or_else(|| Error::Config(format!("class.{i}.diag is missing")))?;
            let d = diag.len();
            if d == 0 || d > MAX_DIM {
                return Err(Error::Config(format!("class.{i}.diag must have 1 to {MAX_DIM} entries")));
            }
            let off = c.offdiag.clone().unwrap_or_else(|| vec![0.0; d * (d - 1)]);
            if off.len() != d * (d - 1) {
                return Err(Error::Config(format!("class.{i}.offdiag needs {} numbers (re im pairs)", d * (d - 1))));
            }
            let mut entries = Vec::with_capacity(packed_len(d));
            let mut o = off.chunks(2);
            for r in 0..d {
                for col in r..d {
                    if r == col {
                        entries.push(Complex64::new(diag[r], 0.0));
                    } else {
                        let p = o.next().unwrap();
                        entries.push(Complex64::new(p[0], p[1]));
                    }
                }
            }
            let sigma = HermitianMatrix::from_upper(d, &entries)?;
            let looks = c.looks.ok_or_else(|| Error::Config(format!("class.{i}.looks is missing")))?;
            classes.push(ClassSpec { sigma, looks });
        }
        let layout = match self.layout.as_deref().unwrap_or("stripes") {
            "stripes" => Layout::Stripes,
            "checkerboard" => {
                Layout::Checkerboard { tiles_x: self.tiles.0.unwrap_or(2), tiles_y: self.tiles.1.unwrap_or(2) }
            }
            "rects" => Layout::Rects(self.rects.values().copied().collect()),
            other => return Err(Error::Config(format!("unknown layout '{other}'"))),
        };
        Ok(Some(SceneSpec { width, height, classes, layout }))
    }

    pub fn build(&self) -> Result<RunConfig> {
        let mut config = self.config.clone();
        config.scene = self.scene()?;
        Ok(config)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut b = ConfigBuilder::new();
    b.parse_str(text)?;
    b.build()
}

/// A finished fit plus the context needed to write it out.
#[derive(Clone, Debug)]
pub struct ClassificationResult {
    pub width: usize,
    pub height: usize,
    pub hyper: Hyperparameters,
    pub fit: FitResult,
    pub wall_clock: Duration,
}

/// Display colours, cycled for larger K.
const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

/// Binary PGM whose grey levels are the labels themselves.
pub fn encode_label_map(width: usize, height: usize, labels: &[usize], seed: Option<u64>) -> Result<Vec<u8>> {
    if labels.len() != width * height {
        return Err(Error::DimensionMismatch { left: labels.len(), right: width * height });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::domain(format!("label {l} does not fit in 8 bits")));
    }
    let mut out = String::from("P5\n");
    if let Some(s) = seed {
        writeln!(out, "# seed={s}").unwrap();
    }
    writeln!(out, "{width} {height}\n255").unwrap();
    let mut bytes = out.into_bytes();
    bytes.extend(labels.iter().map(|&l| l as u8));
    Ok(bytes)
}

/// Reads a binary PGM written by [`encode_label_map`] (or any 8-bit P5).
pub fn decode_label_map(bytes: &[u8]) -> Result<(usize, usize, Vec<usize>)> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::TruncatedFile { offset: pos as u64 });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format("label map is not a binary PGM".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field '{s}'")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {max}")));
    }
    pos += 1;
    let end = pos + w * h;
    if bytes.len() < end {
        return Err(Error::TruncatedFile { offset: bytes.len() as u64 });
    }
    Ok((w, h, bytes[pos..end].iter().map(|&b| b as usize).collect()))
}

pub fn read_label_map(path: &Path) -> Result<(usize, usize, Vec<usize>)> {
    decode_label_map(&fs::read(path).map_err(|e| io_err(path, e))?)
}

pub fn write_label_map(path: &Path, width: usize, height: usize, labels: &[usize], seed: Option<u64>) -> Result<()> {
    fs::write(path, encode_label_map(width, height, labels, seed)?).map_err(|e| io_err(path, e))
}

pub fn palette_text(k: usize, seed: u64) -> String {
    let mut s = format!("# seed={seed}\n# label r g b\n");
    for l in 0..k {
        let [r, g, b] = PALETTE[l % PALETTE.len()];
        writeln!(s, "{l} {r} {g} {b}").unwrap();
    }
    s
}

/// Key-value report; floats use the shortest representation that parses
/// back to the same value.
pub fn report_text(result: &ClassificationResult) -> String {
    let f = &result.fit;
    let h = &result.hyper;
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k}={v}").unwrap();
    kv("seed", &h.seed);
    kv("width", &result.width);
    kv("height", &result.height);
    kv("initial_k", &f.initial_k);
    kv("effective_k", &f.effective_k());
    kv("iterations", &f.trace.iterations);
    kv("converged", &f.trace.converged);
    kv("final_elbo", &f.final_elbo());
    kv("alpha0", &h.alpha0);
    kv("beta0", &h.beta0);
    kv("b0", &h.b0);
    kv("c0", &h.c0);
    kv("win", &h.win);
    kv("tol", &h.tol);
    kv("max_iter", &h.max_iter);
    kv("bessel_mode", &h.bessel_mode);
    kv("look_rate", &h.look_rate);
    for (j, c) in f.clusters.iter().enumerate() {
        let p = |name: &str| format!("cluster.{j}.{name}");
        kv(&p("enl"), &c.moments.e_l);
        kv(&p("mass"), &c.n_k);
        kv(&p("alpha"), &c.alpha);
        kv(&p("beta"), &c.beta);
        kv(&p("a"), &c.igg.a);
        kv(&p("b"), &c.igg.b);
        kv(&p("c"), &c.igg.c);
        let upper: Vec<String> = c.omega_inv.upper().iter().map(|z| format!("{} {}", z.re, z.im)).collect();
        kv(&p("omega_inv"), &upper.join(" "));
    }
    s
}

pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Two columns, `iteration value`, one row per iteration run.
pub fn elbo_trace_text(result: &ClassificationResult) -> String {
    let mut s = format!("# seed={}\n# iteration elbo pruned\n", result.hyper.seed);
    for (i, (v, p)) in result.fit.trace.values.iter().zip(&result.fit.trace.pruned).enumerate() {
        writeln!(s, "{} {}{}", i + 1, v, if *p { " pruned" } else { "" }).unwrap();
    }
    s
}

/// Files produced by [`write_results`].
pub const LABELS_FILE: &str = "labels.pgm";
pub const PALETTE_FILE: &str = "palette.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TRACE_FILE: &str = "elbo.txt";
pub const TIMING_FILE: &str = "timing.txt";

/// Writes the label map, palette, report and trace, plus the wall-clock
/// time in a separate file so that the others are reproducible bit for bit.
pub fn write_results(result: &ClassificationResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let put = |name: &str, bytes: &[u8]| {
        let p = out_dir.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    };
    let seed = result.hyper.seed;
    put(LABELS_FILE, &encode_label_map(result.width, result.height, &result.fit.labels, Some(seed))?)?;
    put(PALETTE_FILE, palette_text(result.fit.effective_k(), seed).as_bytes())?;
    put(REPORT_FILE, report_text(result).as_bytes())?;
    put(TRACE_FILE, elbo_trace_text(result).as_bytes())?;
    put(TIMING_FILE, format!("wall_clock_seconds={}\n", result.wall_clock.as_secs_f64()).as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub overall_accuracy: f64,
    pub kappa: f64,
    /// `(predicted label, truth label)` pairs of the chosen matching.
    pub mapping: Vec<(usize, usize)>,
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.par_sort_unstable();
    v.dedup();
    v
}

fn best_assignment(conf: &[Vec<u64>]) -> Vec<usize> {
    let m = conf.len();
    if m <= 8 {
        let mut perm: Vec<usize> = (0..m).collect();
        let rows: Vec<u128> = conf.iter().map(|r| r.iter().sum::<u64>() as u128).collect();
        let cols: Vec<u128> = (0..m).map(|j| conf.iter().map(|r| r[j]).sum::<u64>() as u128).collect();
        let mut best = perm.clone();
        let mut best_key = None;
        permute(&mut perm, 0, &mut |p| {
            let hits: u64 = p.iter().enumerate().map(|(i, &j)| conf[i][j]).sum();
            // among equally accurate matchings, least chance agreement (highest kappa)
            let chance: u128 = p.iter().enumerate().map(|(i, &j)| rows[i] * cols[j]).sum();
            let key = (hits, std::cmp::Reverse(chance));
            if best_key.is_none_or(|b| key > b) {
                best_key = Some(key);
                best = p.to_vec();
            }
        });
        best
    } else {
        let mut cells: Vec<(u64, usize, usize)> =
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| (conf[i][j], i, j)).collect();
        cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut assign = vec![usize::MAX; m];
        let mut used = vec![false; m];
        for (_, i, j) in cells {
            if assign[i] == usize::MAX && !used[j] {
                assign[i] = j;
                used[j] = true;
            }
        }
        assign
    }
}

fn permute(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Overall accuracy and Cohen's kappa under the best one-to-one matching of
/// predicted to true labels: exhaustive for up to 8 labels, greedy above.
pub fn score(predicted: &[usize], truth: &[usize]) -> Result<Score> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch { left: predicted.len(), right: truth.len() });
    }
    if truth.is_empty() {
        return Err(Error::domain("empty label maps"));
    }
    let (pl, tl) = (distinct(predicted), distinct(truth));
    let m = pl.len().max(tl.len());
    let pi = |l: usize| pl.binary_search(&l).unwrap();
    let ti = |l: usize| tl.binary_search(&l).unwrap();
    let conf = predicted
        .par_iter()
        .zip(truth)
        .fold(
            || vec![vec![0u64; m]; m],
            |mut acc, (&p, &t)| {
                acc[pi(p)][ti(t)] += 1;
                acc
            },
        )
        .reduce(
            || vec![vec![0u64; m]; m],
            |mut a, b| {
                for (ra, rb) in a.iter_mut().zip(b) {
                    for (x, y) in ra.iter_mut().zip(rb) {
                        *x += y;
                    }
                }
                a
            },
        );
    let assign = best_assignment(&conf);
    let n = truth.len() as f64;
    let rows: Vec<u64> = conf.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..m).map(|j| conf.iter().map(|r| r[j]).sum()).collect();
    let hits: u64 = (0..m).map(|i| conf[i][assign[i]]).sum();
    let p_o = hits as f64 / n;
    let p_e: f64 = (0..m).map(|i| rows[i] as f64 / n * cols[assign[i]] as f64 / n).sum();
    let kappa = if p_e < 1.0 { (p_o - p_e) / (1.0 - p_e) } else { 1.0 };
    let mapping = (0..pl.len()).filter(|&i| assign[i] < tl.len()).map(|i| (pl[i], tl[assign[i]])).collect();
    Ok(Score { overall_accuracy: p_o, kappa, mapping })
}
