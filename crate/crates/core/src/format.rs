//! Binary sinogram files and 16-bit PGM image export.
//!
//! Sinogram layout: magic `SINO`, then little-endian `u32` version, kind
//! (0 = log-domain sinogram, 1 = measured photon counts), `n_angles` and
//! `n_detectors`, then angle-major little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::noise::PhotonData;
use crate::{Image, Sinogram};

pub const SINO_MAGIC: [u8; 4] = *b"SINO";
pub const SINO_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Log = 0,
    Counts = 1,
}

impl Kind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            0 => Ok(Kind::Log),
            1 => Ok(Kind::Counts),
            other => Err(Error::UnknownKind(other)),
        }
    }
}

/// Contents of a sinogram file. Count files reload with the warm-start
/// latent field.
#[derive(Clone, Debug, PartialEq)]
pub enum SinoData {
    Log(Sinogram),
    Counts(PhotonData),
}

impl SinoData {
    pub fn kind(&self) -> Kind {
        match self {
            SinoData::Log(_) => Kind::Log,
            SinoData::Counts(_) => Kind::Counts,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        match self {
            SinoData::Log(s) => s,
            SinoData::Counts(pd) => &pd.measured,
        }
    }

    pub fn into_log(self) -> Result<Sinogram> {
        match self {
            SinoData::Log(s) => Ok(s),
            SinoData::Counts(_) => Err(Error::InvalidParameter(
                "expected a log-domain sinogram, found photon counts".into(),
            )),
        }
    }

    pub fn into_counts(self) -> Result<PhotonData> {
        match self {
            SinoData::Counts(pd) => Ok(pd),
            SinoData::Log(_) => Err(Error::InvalidParameter(
                "expected photon counts, found a log-domain sinogram".into(),
            )),
        }
    }
}

pub fn encode_sinogram(kind: Kind, values: &Array2<f64>) -> Vec<u8> {
    let (na, nd) = values.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&SINO_MAGIC);
    for v in [SINO_VERSION, kind as u32, na as u32, nd as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sinogram(bytes: &[u8]) -> Result<SinoData> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != SINO_MAGIC {
        return Err(Error::BadMagic {
            expected: SINO_MAGIC,
            found: magic,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != SINO_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = Kind::from_u32(word(2))?;
    let (na, nd) = (word(3) as usize, word(4) as usize);
    let expected = HEADER_LEN + 8 * na * nd;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((na, nd), values).expect("length checked");
    Ok(match kind {
        Kind::Log => SinoData::Log(values),
        Kind::Counts => SinoData::Counts(PhotonData::from_measured(values)),
    })
}

pub fn read_sinogram(path: &Path) -> Result<SinoData> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_sinogram(&bytes)
}

pub fn write_sinogram(path: &Path, kind: Kind, values: &Array2<f64>) -> Result<()> {
    write_atomic(path, &encode_sinogram(kind, values))
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let ctx = |what: &str| format!("{what} {}", path.display());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(ctx("creating parent of"), e))?;
    }
    let tmp = temp_path(path);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(ctx("creating temp for"), e))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(ctx("writing"), e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(ctx("renaming into"), e))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Display window for image export.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    /// Window spanning the min and max of `img`.
    pub fn fit(img: &Image) -> Self {
        let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { lo, hi }
    }

    fn level(&self, v: f64) -> u16 {
        let span = self.hi - self.lo;
        if !(span > 0.0) {
            return 0;
        }
        ((v - self.lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
    }
}

/// Binary P5 PGM with 16-bit big-endian samples.
pub fn encode_pgm(img: &Image, window: Window) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in img.iter() {
        out.extend_from_slice(&window.level(v).to_be_bytes());
    }
    out
}

/// Write `path` as a PGM plus `path.window` holding `lo hi` in image units.
pub fn write_pgm(path: &Path, img: &Image, window: Window) -> Result<()> {
    write_atomic(path, &encode_pgm(img, window))?;
    let mut sidecar = path.as_os_str().to_os_string();
    sidecar.push(".window");
    write_atomic(
        Path::new(&sidecar),
        format!("{:e} {:e}\n", window.lo, window.hi).as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> Array2<f64> {
        Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - 1.5) * 0.37 + j as f64 * 1e-9)
    }

    #[test]
    fn log_round_trip_is_bit_exact() {
        let f = field();
        let back = decode_sinogram(&encode_sinogram(Kind::Log, &f)).unwrap();
        assert_eq!(back, SinoData::Log(f));
    }

    #[test]
    fn counts_reload_with_warm_start() {
        let counts = Array2::from_shape_vec((1, 3), vec![-2.0, 4.4, 10.6]).unwrap();
        let pd = decode_sinogram(&encode_sinogram(Kind::Counts, &counts))
            .unwrap()
            .into_counts()
            .unwrap();
        assert_eq!(pd.measured, counts);
        assert_eq!(pd.latent.as_slice().unwrap(), &[1, 4, 11]);
    }

    #[test]
    fn header_errors_are_distinct() {
        let mut bytes = encode_sinogram(Kind::Log, &field());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_sinogram(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_sinogram(&bad), Err(Error::UnsupportedVersion(9))));
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(matches!(decode_sinogram(&bad), Err(Error::UnknownKind(7))));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode_sinogram(&bytes), Err(Error::Truncated { .. })));
        assert!(matches!(decode_sinogram(b"SIN"), Err(Error::Truncated { .. })));
    }

    #[test]
    fn pgm_header_and_levels() {
        let img = Array2::from_shape_vec((1, 3), vec![0.0, 0.5, 2.0]).unwrap();
        let bytes = encode_pgm(&img, Window { lo: 0.0, hi: 1.0 });
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 65535]);
    }

    #[test]
    fn flat_window_maps_to_black() {
        let img = Array2::from_elem((2, 2), 3.0);
        let bytes = encode_pgm(&img, Window::fit(&img));
        assert!(bytes.ends_with(&[0; 8]));
    }
}
