use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};

/// Element precision of a grid, part of every plan-cache key and wire payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bytes_per_complex(self) -> usize {
        match self {
            Precision::F32 => 8,
            Precision::F64 => 16,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => write!(f, "f32"),
            Precision::F64 => write!(f, "f64"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32|f64)")),
        }
    }
}

/// Real scalar usable as the component type of transform elements.
pub trait FftReal:
    Float + FloatConst + FromPrimitive + Copy + Send + Sync + std::fmt::Debug + 'static
{
    const PRECISION: Precision;

    fn of_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl FftReal for f32 {
    const PRECISION: Precision = Precision::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl FftReal for f64 {
    const PRECISION: Precision = Precision::F64;

    fn of_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Serialize a complex slice as interleaved little-endian (re, im) pairs.
pub fn complex_to_le_bytes<T: FftReal>(src: &[Complex<T>], out: &mut Vec<u8>) {
    for c in src {
        c.re.write_le(out);
        c.im.write_le(out);
    }
}

/// Inverse of [`complex_to_le_bytes`]; `bytes` length must be a multiple of the element width.
pub fn complex_from_le_bytes<T: FftReal>(bytes: &[u8]) -> Vec<Complex<T>> {
    let w = T::PRECISION.bytes_per_complex();
    debug_assert_eq!(bytes.len() % w, 0);
    bytes
        .chunks_exact(w)
        .map(|pair| Complex::new(T::read_le(&pair[..w / 2]), T::read_le(&pair[w / 2..])))
        .collect()
}
